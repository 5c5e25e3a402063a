//! Gaussian-kernel MMD on bitstrings.
//!
//! With Hamming distance d the Gaussian kernel e^{−d/2σ} factorizes over bits
//! as Π_i [(1−p_σ) + p_σ z_i z'_i] with p_σ = (1 − e^{−1/2σ})/2, so it is
//! diagonal in the parity basis with eigenvalue (1−p_σ)^{n−|A|} p_σ^{|A|} on
//! the parity χ_A. The routines below evaluate the MMD either as the kernel
//! double sum or in that basis.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::distributions::{
    empirical_distribution, parity_sum, Distribution, SampleSet, DENSE_CAP,
};
use crate::error::{invalid, Error, Result};
use crate::simulator::ProductState;

/// Upper limit on kernel evaluations in one double sum.
pub const PAIR_BUDGET: f64 = 2e9;
/// Upper limit on (subsets × support entries) for truncated sums.
pub const SUBSET_BUDGET: f64 = 2e9;

/// A single Gaussian bandwidth, an equal-weight mixture of bandwidths, or the
/// delta kernel (the σ → 0 limit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Gaussian { bandwidths: Vec<f64> },
    Delta,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::mixture(vec![sigma])
    }

    pub fn mixture(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() {
            return invalid("a kernel mixture needs at least one bandwidth");
        }
        if let Some(s) = bandwidths.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return invalid(format!("bandwidth {s} must be positive"));
        }
        Ok(KernelSpec::Gaussian { bandwidths })
    }

    pub fn describe(&self) -> String {
        match self {
            KernelSpec::Delta => "delta".into(),
            KernelSpec::Gaussian { bandwidths } => {
                bandwidths.iter().map(|s| s.to_string()).join("+")
            }
        }
    }

    /// Kernel value between strings at Hamming distance `d`.
    pub fn at_distance(&self, d: u32) -> f64 {
        match self {
            KernelSpec::Delta => (d == 0) as u8 as f64,
            KernelSpec::Gaussian { bandwidths } => {
                bandwidths
                    .iter()
                    .map(|s| (-(d as f64) / (2.0 * s)).exp())
                    .sum::<f64>()
                    / bandwidths.len() as f64
            }
        }
    }

    pub fn value(&self, x: &BitString, y: &BitString) -> f64 {
        self.at_distance(x.hamming(y))
    }

    /// Kernel values for distances 0..=n.
    pub fn distance_table(&self, n: usize) -> Vec<f64> {
        (0..=n as u32).map(|d| self.at_distance(d)).collect()
    }

    /// Parity-basis eigenvalue for subsets of each size 0..=n.
    pub fn spectrum(&self, n: usize) -> Vec<f64> {
        match self {
            KernelSpec::Delta => vec![0.5f64.powi(n as i32); n + 1],
            KernelSpec::Gaussian { bandwidths } => {
                let mut out = vec![0.0; n + 1];
                for &s in bandwidths {
                    let p = p_sigma_unchecked(s);
                    for (l, o) in out.iter_mut().enumerate() {
                        *o += (1.0 - p).powi((n - l) as i32) * p.powi(l as i32);
                    }
                }
                out.iter().map(|v| v / bandwidths.len() as f64).collect()
            }
        }
    }

    /// Per-bit factors (same-bit value, different-bit value) of each mixture component.
    fn bit_factors(&self) -> Vec<(f64, f64)> {
        match self {
            KernelSpec::Delta => vec![(1.0, 0.0)],
            KernelSpec::Gaussian { bandwidths } => bandwidths
                .iter()
                .map(|s| (1.0, (-1.0 / (2.0 * s)).exp()))
                .collect(),
        }
    }
}

pub(crate) fn p_sigma_unchecked(sigma: f64) -> f64 {
    0.5 * (1.0 - (-1.0 / (2.0 * sigma)).exp())
}

fn entries(d: &Distribution) -> (Vec<BitString>, Vec<f64>) {
    d.iter().map(|(x, p)| (x.clone(), p)).unzip()
}

/// Σ_i Σ_j a_i b_j K(x_i, y_j), with rows summed in a fixed order.
fn kernel_sum(xs: &[BitString], a: &[f64], ys: &[BitString], b: &[f64], table: &[f64]) -> f64 {
    let rows: Vec<f64> = xs
        .par_iter()
        .zip(a.par_iter())
        .map(|(x, &ai)| {
            ai * ys
                .iter()
                .zip(b)
                .map(|(y, &bj)| bj * table[x.hamming(y) as usize])
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum()
}

fn check_pair(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.n_bits() != q.n_bits() {
        return Err(Error::LengthMismatch {
            expected: p.n_bits(),
            got: q.n_bits(),
        });
    }
    Ok(())
}

/// Squared MMD between model `q` and target `p` as the kernel double sum
/// Σ q q K − 2 Σ q p K + Σ p p K over the two supports.
pub fn mmd_exact(q: &Distribution, p: &Distribution, kernel: &KernelSpec) -> Result<f64> {
    check_pair(p, q)?;
    let (nq, np) = (q.support_size() as f64, p.support_size() as f64);
    if nq * nq + np * np + nq * np > PAIR_BUDGET {
        return Err(Error::Budget(format!(
            "kernel double sum over supports of size {nq} and {np}"
        )));
    }
    let table = kernel.distance_table(p.n_bits());
    let (xq, wq) = entries(q);
    let (xp, wp) = entries(p);
    let v = kernel_sum(&xq, &wq, &xq, &wq, &table) - 2.0 * kernel_sum(&xq, &wq, &xp, &wp, &table)
        + kernel_sum(&xp, &wp, &xp, &wp, &table);
    Ok(v.max(0.0))
}

/// V-statistic MMD estimate: the exact MMD between the two empirical
/// distributions, coincident pairs included.
pub fn mmd_sampled(
    samples_q: &SampleSet,
    samples_p: &SampleSet,
    kernel: &KernelSpec,
) -> Result<f64> {
    mmd_exact(
        &empirical_distribution(samples_q)?,
        &empirical_distribution(samples_p)?,
        kernel,
    )
}

/// Kernel evaluations against a fixed target, reused across many model evaluations.
#[derive(Clone, Debug)]
pub struct MmdTarget {
    kernel: KernelSpec,
    n_bits: usize,
    table: Vec<f64>,
    xs: Vec<BitString>,
    ws: Vec<f64>,
    self_term: f64,
}

impl MmdTarget {
    pub fn new(p: &Distribution, kernel: &KernelSpec) -> Result<Self> {
        let np = p.support_size() as f64;
        if np * np > PAIR_BUDGET {
            return Err(Error::Budget(format!(
                "target support of size {np} is too large"
            )));
        }
        let table = kernel.distance_table(p.n_bits());
        let (xs, ws) = entries(p);
        let self_term = kernel_sum(&xs, &ws, &xs, &ws, &table);
        Ok(MmdTarget {
            kernel: kernel.clone(),
            n_bits: p.n_bits(),
            table,
            xs,
            ws,
            self_term,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    /// MMD of a sparse model distribution (typically an empirical one).
    pub fn mmd_sparse(&self, q: &Distribution) -> Result<f64> {
        if q.n_bits() != self.n_bits {
            return Err(Error::LengthMismatch {
                expected: self.n_bits,
                got: q.n_bits(),
            });
        }
        let nq = q.support_size() as f64;
        if nq * nq + nq * self.xs.len() as f64 > PAIR_BUDGET {
            return Err(Error::Budget(format!(
                "model support of size {nq} is too large"
            )));
        }
        let (xq, wq) = entries(q);
        let v = kernel_sum(&xq, &wq, &xq, &wq, &self.table)
            - 2.0 * kernel_sum(&xq, &wq, &self.xs, &self.ws, &self.table)
            + self.self_term;
        Ok(v.max(0.0))
    }

    /// ∂MMD/∂q(x) = 2[(Kq)(x) − (Kp)(x)] at the given strings.
    pub fn dq_sparse(&self, q: &Distribution, at: &[BitString]) -> Vec<f64> {
        let (xq, wq) = entries(q);
        at.par_iter()
            .map(|x| {
                let kq: f64 = xq
                    .iter()
                    .zip(&wq)
                    .map(|(y, w)| w * self.table[x.hamming(y) as usize])
                    .sum();
                let kp: f64 = self
                    .xs
                    .iter()
                    .zip(&self.ws)
                    .map(|(y, w)| w * self.table[x.hamming(y) as usize])
                    .sum();
                2.0 * (kq - kp)
            })
            .collect()
    }

    /// Exact MMD of a product-state model using the per-bit factorization of
    /// the kernel; costs O(n · |supp p|) per mixture component.
    pub fn mmd_product(&self, state: &ProductState) -> Result<f64> {
        if state.n_qubits() != self.n_bits {
            return Err(Error::LengthMismatch {
                expected: self.n_bits,
                got: state.n_qubits(),
            });
        }
        let p1 = state.one_probabilities();
        let factors = self.kernel.bit_factors();
        let m = factors.len() as f64;
        let mut kqq = 0.0;
        let mut kqp = 0.0;
        for &(same, diff) in &factors {
            kqq += p1
                .iter()
                .map(|&b| {
                    let a = 1.0 - b;
                    same * (a * a + b * b) + 2.0 * diff * a * b
                })
                .product::<f64>();
            kqp += self
                .xs
                .iter()
                .zip(&self.ws)
                .map(|(y, w)| {
                    w * p1
                        .iter()
                        .enumerate()
                        .map(|(i, &b)| {
                            if y.get(i) {
                                same * b + diff * (1.0 - b)
                            } else {
                                same * (1.0 - b) + diff * b
                            }
                        })
                        .product::<f64>()
                })
                .sum::<f64>();
        }
        Ok((kqq / m - 2.0 * kqp / m + self.self_term).max(0.0))
    }
}

/// In-place unnormalized Walsh–Hadamard transform: v̂(A) = Σ_x (−1)^{|A∧x|} v(x).
pub fn walsh_hadamard(v: &mut [f64]) {
    let n = v.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for chunk in v.chunks_mut(2 * h) {
            let (lo, hi) = chunk.split_at_mut(h);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        h *= 2;
    }
}

/// Dense-vector MMD evaluated in the parity basis.
#[derive(Clone, Debug)]
pub struct DenseMmd {
    n_bits: usize,
    /// Eigenvalue for each subset index.
    eigen: Vec<f64>,
    target: Vec<f64>,
}

impl DenseMmd {
    pub fn new(p: &Distribution, kernel: &KernelSpec) -> Result<Self> {
        let n = p.n_bits();
        if n > DENSE_CAP {
            return Err(Error::CapExceeded { n, cap: DENSE_CAP });
        }
        let spectrum = kernel.spectrum(n);
        let eigen = (0..1usize << n)
            .map(|a| spectrum[a.count_ones() as usize])
            .collect();
        Ok(DenseMmd {
            n_bits: n,
            eigen,
            target: p.to_dense()?,
        })
    }

    fn check(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.target.len() {
            return Err(Error::LengthMismatch {
                expected: self.target.len(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn mmd(&self, q: &[f64]) -> Result<f64> {
        self.check(q)?;
        let mut diff: Vec<f64> = q.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        walsh_hadamard(&mut diff);
        Ok(diff
            .iter()
            .zip(&self.eigen)
            .map(|(d, l)| l * d * d)
            .sum::<f64>()
            .max(0.0))
    }

    /// Gradient with respect to every q(x): 2K(q − p), applied through two transforms.
    pub fn dq(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check(q)?;
        let mut v: Vec<f64> = q.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        walsh_hadamard(&mut v);
        for (x, l) in v.iter_mut().zip(&self.eigen) {
            *x *= 2.0 * l;
        }
        walsh_hadamard(&mut v);
        Ok(v)
    }
}

/// MMD restricted to parity terms of order at most `k`:
/// Σ_{1≤|A|≤k} λ_{|A|} (z_A(q) − z_A(p))². With `k = n` this is the full MMD.
pub fn mmd_truncated(
    q: &Distribution,
    p: &Distribution,
    kernel: &KernelSpec,
    k: usize,
) -> Result<f64> {
    check_pair(p, q)?;
    let n = p.n_bits();
    if k > n {
        return invalid(format!("truncation order {k} exceeds {n} bits"));
    }
    let subsets: f64 = (1..=k)
        .map(|j| crate::distributions::binomial_f64(n, j))
        .sum();
    if subsets * (p.support_size() + q.support_size()) as f64 > SUBSET_BUDGET {
        return Err(Error::Budget(format!("{subsets} parity subsets")));
    }
    let spectrum = kernel.spectrum(n);
    let mut total = 0.0;
    for j in 1..=k {
        let per_size: Vec<f64> = (0..n)
            .combinations(j)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|a| {
                let mut mask = BitString::zeros(n);
                for &i in a {
                    mask.set(i, true);
                }
                let d = parity_sum(q, &mask) - parity_sum(p, &mask);
                d * d
            })
            .collect();
        total += spectrum[j] * per_size.iter().sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{make_dataset, DatasetKind};
    use crate::rng::rng_from_seed;
    use crate::simulator::{apply_product_circuit, build_ansatz, draw_parameters, AnsatzKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn sampled_estimator_examples() {
        let kernel = KernelSpec::gaussian(1.5).unwrap();
        let set = |xs: &[&str]| SampleSet {
            n_bits: 4,
            samples: xs.iter().map(|x| bs(x)).collect(),
            seed: 0,
        };
        let a = set(&["0101", "1100", "0101"]);
        assert_eq!(mmd_sampled(&a, &a, &kernel).unwrap(), 0.0);
        let single = mmd_sampled(&set(&["0000"]), &set(&["0111"]), &kernel).unwrap();
        assert_abs_diff_eq!(single, 2.0 - 2.0 * (-3.0f64 / 3.0).exp(), epsilon = 1e-14);
    }

    #[test]
    fn sampled_estimator_shrinks_when_p_equals_q() {
        use crate::simulator::sample_bitstrings;
        let n = 4;
        let shots = 500;
        let p = make_dataset(DatasetKind::RandomK { k: 6 }, n, 2).unwrap();
        let kernel = KernelSpec::gaussian(n as f64 / 4.0).unwrap();
        let mean = (0..100u64)
            .map(|s| {
                let q_samples = sample_bitstrings(&p, shots, 2 * s).unwrap();
                let p_samples = sample_bitstrings(&p, shots, 2 * s + 1).unwrap();
                mmd_sampled(&q_samples, &p_samples, &kernel).unwrap()
            })
            .sum::<f64>()
            / 100.0;
        assert!(mean < 3.0 / shots as f64, "{mean}");
    }

    /// Straight transcription of the kernel double sum over all 2^n strings.
    fn brute_force_mmd(q: &[f64], p: &[f64], n: usize, k: impl Fn(u32) -> f64) -> f64 {
        let mut s = 0.0;
        for x in 0..q.len() {
            for y in 0..q.len() {
                let kxy = k(((x ^ y) as u64).count_ones());
                s += (q[x] * q[y] - 2.0 * q[x] * p[y] + p[x] * p[y]) * kxy;
            }
        }
        let _ = n;
        s
    }

    #[test]
    fn kernel_values() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert_eq!(k.value(&bs("0101"), &bs("0101")), 1.0);
        assert_abs_diff_eq!(
            k.value(&bs("000"), &bs("111")),
            (-1.5f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            KernelSpec::mixture(vec![1.0, 2.0]).unwrap().at_distance(2),
            0.5 * ((-1.0f64).exp() + (-0.5f64).exp()),
            epsilon = 1e-15
        );
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::mixture(vec![]).is_err());
    }

    #[test]
    fn point_masses() {
        let k = KernelSpec::gaussian(1.0).unwrap();
        let a = Distribution::point(bs("000"));
        let b = Distribution::point(bs("111"));
        assert_abs_diff_eq!(
            mmd_exact(&a, &b, &k).unwrap(),
            2.0 - 2.0 * (-1.5f64).exp(),
            epsilon = 1e-14
        );
        assert_eq!(mmd_exact(&a, &a, &k).unwrap(), 0.0);
    }

    #[test]
    fn delta_kernel_is_squared_euclidean() {
        let p = Distribution::from_dense(2, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let q = Distribution::from_dense(2, &[0.4, 0.3, 0.2, 0.1]).unwrap();
        let expected = 0.09 + 0.01 + 0.01 + 0.09;
        assert_abs_diff_eq!(
            mmd_exact(&q, &p, &KernelSpec::Delta).unwrap(),
            expected,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            mmd_truncated(&q, &p, &KernelSpec::Delta, 2).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn parity_dataset_is_invisible_to_pair_terms() {
        let parity = make_dataset(DatasetKind::Parity3, 3, 0).unwrap();
        let uniform = Distribution::from_dense(3, &[0.125; 8]).unwrap();
        let k = KernelSpec::gaussian(1.0).unwrap();
        assert!(mmd_truncated(&parity, &uniform, &k, 2).unwrap() < 1e-15);
        assert!(mmd_truncated(&parity, &uniform, &k, 3).unwrap() > 1e-3);
        assert!(mmd_exact(&parity, &uniform, &k).unwrap() > 1e-3);
    }

    #[test]
    fn dense_route_and_gradient() {
        let n = 5;
        let mut rng = rng_from_seed(2);
        use rand::Rng as _;
        let raw: Vec<f64> = (0..32).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let p = make_dataset(DatasetKind::Ghz, n, 0).unwrap();
        for kernel in [
            KernelSpec::gaussian(0.7).unwrap(),
            KernelSpec::mixture(vec![0.5, 3.0]).unwrap(),
            KernelSpec::Delta,
        ] {
            let dense = DenseMmd::new(&p, &kernel).unwrap();
            let pd = p.to_dense().unwrap();
            let brute = brute_force_mmd(&q, &pd, n, |d| kernel.at_distance(d));
            assert_abs_diff_eq!(dense.mmd(&q).unwrap(), brute, epsilon = 1e-12);
            let qd = Distribution::from_dense(n, &q).unwrap();
            assert_abs_diff_eq!(mmd_exact(&qd, &p, &kernel).unwrap(), brute, epsilon = 1e-12);
            let g = dense.dq(&q).unwrap();
            let target = MmdTarget::new(&p, &kernel).unwrap();
            let at: Vec<BitString> = (0..32).map(|i| BitString::from_index(i, n)).collect();
            let g_sparse = target.dq_sparse(&qd, &at);
            for i in 0..32 {
                let kq: f64 = (0..32)
                    .map(|y| q[y] * kernel.at_distance(((i ^ y) as u64).count_ones()))
                    .sum();
                let kp: f64 = (0..32)
                    .map(|y| pd[y] * kernel.at_distance(((i ^ y) as u64).count_ones()))
                    .sum();
                assert_abs_diff_eq!(g[i], 2.0 * (kq - kp), epsilon = 1e-12);
                assert_abs_diff_eq!(g_sparse[i], 2.0 * (kq - kp), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn product_route_matches_dense() {
        let n = 7;
        let c = build_ansatz(AnsatzKind::ProductHaar, n, 0).unwrap();
        let state = apply_product_circuit(&c, &draw_parameters(&c, &mut rng_from_seed(8))).unwrap();
        let q = state.probabilities().unwrap();
        for data in [
            make_dataset(DatasetKind::Ghz, n, 0).unwrap(),
            make_dataset(DatasetKind::RandomK { k: 6 }, n, 1).unwrap(),
        ] {
            for kernel in [
                KernelSpec::gaussian(1.0).unwrap(),
                KernelSpec::mixture(vec![0.25, 1.75]).unwrap(),
                KernelSpec::Delta,
            ] {
                let dense = DenseMmd::new(&data, &kernel).unwrap().mmd(&q).unwrap();
                let product = MmdTarget::new(&data, &kernel)
                    .unwrap()
                    .mmd_product(&state)
                    .unwrap();
                assert_abs_diff_eq!(dense, product, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spectrum_sums_to_kernel_diagonal() {
        // K(x, x) = Σ_A λ_A = 1 for every kernel here.
        for kernel in [
            KernelSpec::gaussian(0.3).unwrap(),
            KernelSpec::gaussian(5.0).unwrap(),
            KernelSpec::Delta,
        ] {
            let n = 9;
            let spec = kernel.spectrum(n);
            let total: f64 = (0..=n)
                .map(|l| crate::distributions::binomial_f64(n, l) * spec[l])
                .sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    fn arb_dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, 1 << n).prop_filter_map("mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 0.0).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn mmd_is_symmetric_and_nonnegative(q in arb_dist(4), p in arb_dist(4), sigma in 0.1f64..5.0) {
            let k = KernelSpec::gaussian(sigma).unwrap();
            let qd = Distribution::from_dense(4, &q).unwrap();
            let pd = Distribution::from_dense(4, &p).unwrap();
            let a = mmd_exact(&qd, &pd, &k).unwrap();
            let b = mmd_exact(&pd, &qd, &k).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((mmd_truncated(&qd, &pd, &k, 4).unwrap() - a).abs() < 1e-12);
        }
    }
}
