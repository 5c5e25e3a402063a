//! Loss-concentration diagnostics: bodyness profiles of the Gaussian-kernel
//! MMD, closed-form variances over Haar-random product states, empirical
//! variance estimation and the explicit-loss concentration sweep.

use itertools::Itertools;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution as _};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::distributions::{parity_sum, Distribution};
use crate::error::{invalid, Error, Result};
use crate::losses::kernel::p_sigma_unchecked;
use crate::losses::{walsh_hadamard, KernelSpec, LossEvaluator, LossSpec, Shots, DENSE_MMD_CAP};
use crate::rng::{child_seed, path_seed, rng_from_seed};
use crate::simulator::{
    apply_product_circuit, build_ansatz, draw_parameters, AnsatzKind, ParameterizedCircuit,
};

/// Resamples used for bootstrap standard errors.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Probability that one bit contributes a Z⊗Z factor to the kernel observable.
pub fn p_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return invalid(format!("bandwidth {sigma} must be positive"));
    }
    Ok(p_sigma_unchecked(sigma))
}

/// A bandwidth that is either fixed or proportional to the register width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// σ = factor · n.
    Scaled(f64),
}

impl Bandwidth {
    pub fn resolve(&self, n: usize) -> f64 {
        match *self {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Scaled(f) => f * n as f64,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Bandwidth::Fixed(s) => s.to_string(),
            Bandwidth::Scaled(f) if f != 0.0 && (1.0 / f).fract() == 0.0 => {
                format!("n/{}", 1.0 / f)
            }
            Bandwidth::Scaled(f) => format!("{f}n"),
        }
    }
}

impl std::str::FromStr for Bandwidth {
    type Err = Error;

    /// Accepts `1.5`, `n`, `n/4`, `0.25n`, `0.25*n`.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = || Error::Parse(format!("bad bandwidth '{s}'"));
        let v = if t == "n" {
            Bandwidth::Scaled(1.0)
        } else if let Some(d) = t.strip_prefix("n/") {
            Bandwidth::Scaled(1.0 / d.parse::<f64>().map_err(|_| bad())?)
        } else if let Some(f) = t.strip_suffix("*n").or_else(|| t.strip_suffix('n')) {
            Bandwidth::Scaled(f.parse().map_err(|_| bad())?)
        } else {
            Bandwidth::Fixed(t.parse().map_err(|_| bad())?)
        };
        let inner = match v {
            Bandwidth::Fixed(x) | Bandwidth::Scaled(x) => x,
        };
        if !(inner > 0.0) || !inner.is_finite() {
            return Err(bad());
        }
        Ok(v)
    }
}

/// Share of the MMD observable carried by parity terms of each order l = 0..=n.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightProfile {
    pub n: usize,
    pub bandwidths: Vec<f64>,
    pub weights: Vec<f64>,
}

fn ln_binomial_row(n: usize) -> Vec<f64> {
    let mut row = vec![0.0; n + 1];
    for l in 1..=n {
        row[l] = row[l - 1] + ((n - l + 1) as f64).ln() - (l as f64).ln();
    }
    row
}

fn binomial_weights(n: usize, p: f64) -> Vec<f64> {
    let ln_c = ln_binomial_row(n);
    (0..=n)
        .map(|l| {
            let ln_w = ln_c[l]
                + (n - l) as f64 * (1.0 - p).ln()
                + if l == 0 { 0.0 } else { l as f64 * p.ln() };
            ln_w.exp()
        })
        .collect()
}

/// w(l) = C(n,l)(1−p_σ)^{n−l} p_σ^l.
pub fn weight_profile(n: usize, sigma: f64) -> Result<WeightProfile> {
    weight_profile_mixture(n, &[sigma])
}

/// Equal-weight average of the profiles of several bandwidths.
pub fn weight_profile_mixture(n: usize, bandwidths: &[f64]) -> Result<WeightProfile> {
    if n == 0 || bandwidths.is_empty() {
        return invalid("weight profiles need n >= 1 and at least one bandwidth");
    }
    let mut weights = vec![0.0; n + 1];
    for &s in bandwidths {
        for (w, v) in weights.iter_mut().zip(binomial_weights(n, p_sigma(s)?)) {
            *w += v / bandwidths.len() as f64;
        }
    }
    Ok(WeightProfile {
        n,
        bandwidths: bandwidths.to_vec(),
        weights,
    })
}

impl WeightProfile {
    /// Mean parity order Σ_l l·w(l); for a single bandwidth with the ZZ
    /// pairing of a two-copy observable this is 2n·p_σ in qubit count.
    pub fn mean_order(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(l, w)| l as f64 * w)
            .sum()
    }

    pub fn order_variance(&self) -> f64 {
        let m = self.mean_order();
        self.weights
            .iter()
            .enumerate()
            .map(|(l, w)| (l as f64 - m).powi(2) * w)
            .sum()
    }

    /// Mean number of qubits acted on across both copies (each parity order l
    /// becomes a 2l-body term).
    pub fn mean_bodyness(&self) -> f64 {
        2.0 * self.mean_order()
    }

    pub fn bodyness_variance(&self) -> f64 {
        4.0 * self.order_variance()
    }

    /// Order with the largest weight.
    pub fn mode(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(l, _)| l)
            .unwrap_or(0)
    }
}

/// Bound on the MMD mass carried by parity orders above k:
/// 4 Σ_{l=k+1}^{n} (n e / (4 l σ))^l.
pub fn truncation_error_bound(n: usize, sigma: f64, k: usize) -> Result<f64> {
    p_sigma(sigma)?;
    if k > n {
        return invalid(format!("truncation order {k} exceeds n = {n}"));
    }
    let base = n as f64 * std::f64::consts::E / (4.0 * sigma);
    Ok(4.0
        * (k + 1..=n)
            .map(|l| (l as f64 * (base / l as f64).ln()).exp())
            .sum::<f64>())
}

/// Data-independent part of the MMD variance over Haar-random product states.
pub fn b_sigma(n: usize, sigma: f64) -> Result<f64> {
    p_sigma(sigma)?;
    let c = (-1.0 / (2.0 * sigma)).exp();
    let a1 = (7.0 + 6.0 * c + 2.0 * c * c) / 15.0;
    let a2 = (4.0 + 4.0 * c + c * c) / 9.0;
    Ok(a1.powi(n as i32) - a2.powi(n as i32))
}

fn c_factors(sigma: f64) -> Result<(f64, f64)> {
    let p = p_sigma(sigma)?;
    Ok(((1.0 - p) * (1.0 - p), p * p / 3.0))
}

/// Data-dependent part Σ_{A≠∅} (1−p)^{2(n−|A|)} (p²/3)^{|A|} z_A(p)². With
/// `k_max = None` all subsets are included (dense transform, n ≤ 20);
/// otherwise only |A| ≤ k_max, enumerated over the data support.
pub fn c_sigma(data: &Distribution, sigma: f64, k_max: Option<usize>) -> Result<f64> {
    let n = data.n_bits();
    let (a, b) = c_factors(sigma)?;
    let coef = |l: usize| a.powi((n - l) as i32) * b.powi(l as i32);
    match k_max {
        None => {
            if n > DENSE_MMD_CAP {
                return Err(Error::Budget(format!(
                    "all 2^{n} parities; pass a truncation order"
                )));
            }
            let mut z = data.to_dense()?;
            walsh_hadamard(&mut z);
            Ok(z.iter()
                .enumerate()
                .skip(1)
                .map(|(idx, za)| coef(idx.count_ones() as usize) * za * za)
                .sum())
        }
        Some(k) => {
            let per_order = parity_mass_by_order(data, k.min(n))?;
            Ok(per_order
                .iter()
                .enumerate()
                .map(|(l, m)| coef(l + 1) * m)
                .sum())
        }
    }
}

/// Bound on the part of C_σ omitted by truncating at order k, using z_A² ≤ 1.
pub fn c_sigma_tail_bound(n: usize, sigma: f64, k: usize) -> Result<f64> {
    let (a, b) = c_factors(sigma)?;
    let ln_c = ln_binomial_row(n);
    Ok((k + 1..=n)
        .map(|l| (ln_c[l] + (n - l) as f64 * a.ln() + l as f64 * b.ln()).exp())
        .sum())
}

/// Σ_{|A|=l} z_A² for l = 1..=k.
pub fn parity_mass_by_order(data: &Distribution, k: usize) -> Result<Vec<f64>> {
    let n = data.n_bits();
    let subsets: f64 = (1..=k)
        .map(|j| crate::distributions::binomial_f64(n, j))
        .sum();
    if subsets * data.support_size() as f64 > crate::losses::kernel::SUBSET_BUDGET {
        return Err(Error::Budget(format!("{subsets} parity subsets")));
    }
    Ok((1..=k)
        .map(|j| {
            let terms: Vec<f64> = (0..n)
                .combinations(j)
                .collect::<Vec<_>>()
                .par_iter()
                .map(|a| {
                    let mut mask = BitString::zeros(n);
                    for &i in a {
                        mask.set(i, true);
                    }
                    parity_sum(data, &mask).powi(2)
                })
                .collect();
            terms.iter().sum()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryVariance {
    pub b: f64,
    pub c: f64,
    pub total: f64,
}

/// Var = B_σ + 4 C_σ for Haar-random product states against `data`.
pub fn theoretical_mmd_variance(
    data: &Distribution,
    sigma: f64,
    k_max: Option<usize>,
) -> Result<TheoryVariance> {
    let b = b_sigma(data.n_bits(), sigma)?;
    let c = c_sigma(data, sigma, k_max)?;
    Ok(TheoryVariance {
        b,
        c,
        total: b + 4.0 * c,
    })
}

/// Lower bound on the probability that N_Q model samples and N_P data
/// samples share no string when the model is close to uniform.
pub fn no_overlap_probability_bound(n: usize, n_p: usize, n_q: usize) -> f64 {
    let space = 2f64.powi(n as i32);
    (1.0 - (n_q as f64 * n_p as f64) / (space - n_p as f64 + 1.0)).max(0.0)
}

/// Sample variance (n − 1 denominator).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / m;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
}

/// Bootstrap standard error of the sample variance.
pub fn bootstrap_variance_stderr(values: &[f64], resamples: usize, seed: u64) -> f64 {
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = rng_from_seed(seed);
    let mut buf = vec![0.0; values.len()];
    let stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[rng.random_range(0..values.len())];
            }
            sample_variance(&buf)
        })
        .collect();
    sample_variance(&stats).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalVariance {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub values: Vec<f64>,
}

/// Evaluate the loss at `draws` random parameter settings (see
/// [`draw_parameters`]) and summarize the spread. Draw i uses the seeds
/// child(master, 2i) for parameters and child(master, 2i+1) for shots.
pub fn empirical_loss_variance(
    evaluator: &LossEvaluator,
    circuit: &ParameterizedCircuit,
    draws: usize,
    shots: Shots,
    master_seed: u64,
) -> Result<EmpiricalVariance> {
    if draws == 0 {
        return invalid("need at least one draw");
    }
    let values = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let params =
                draw_parameters(circuit, &mut rng_from_seed(child_seed(master_seed, 2 * i)));
            evaluator.evaluate(circuit, &params, shots, child_seed(master_seed, 2 * i + 1))
        })
        .collect::<Result<Vec<f64>>>()?;
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("loss evaluated to {v}")));
    }
    let variance = sample_variance(&values);
    let stderr = bootstrap_variance_stderr(
        &values,
        BOOTSTRAP_RESAMPLES,
        child_seed(master_seed, u64::MAX),
    );
    Ok(EmpiricalVariance {
        mean: values.iter().sum::<f64>() / draws as f64,
        variance,
        stderr,
        values,
    })
}

/// One line of the variance-sweep CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: usize,
    pub sigma: f64,
    pub depth: usize,
    pub ansatz: String,
    pub shots: String,
    #[serde(rename = "theory_B")]
    pub theory_b: Option<f64>,
    #[serde(rename = "theory_C")]
    pub theory_c: Option<f64>,
    pub theory_total: Option<f64>,
    pub empirical_var: f64,
    pub empirical_stderr: f64,
    pub draws: usize,
    pub seed: u64,
}

/// A sweep row plus the low-order parity mass Σ_{1≤|A|≤2} z_A² of the data,
/// which the variance bound needs to be at least inverse-polynomial.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub row: VarianceRow,
    pub parity_mass_k2: f64,
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub ns: Vec<usize>,
    pub bandwidths: Vec<Bandwidth>,
    pub depths: Vec<usize>,
    pub ansatz: AnsatzKind,
    pub shots: Shots,
    pub draws: usize,
    pub seed: u64,
}

/// MMD variance over every (n, σ, depth) combination. Closed-form columns
/// are filled for Haar product states only, where they apply.
pub fn mmd_variance_sweep(
    spec: &SweepSpec,
    data: impl Fn(usize) -> Result<Distribution>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &n in &spec.ns {
        let target = data(n)?;
        if target.n_bits() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: target.n_bits(),
            });
        }
        let parity_mass_k2 = parity_mass_by_order(&target, 2.min(n))?.iter().sum();
        for bw in &spec.bandwidths {
            let sigma = bw.resolve(n);
            let eval =
                LossEvaluator::new(LossSpec::Mmd(KernelSpec::gaussian(sigma)?), target.clone())?;
            let theory = if spec.ansatz == AnsatzKind::ProductHaar {
                let k = if n > DENSE_MMD_CAP {
                    Some(n.min(6))
                } else {
                    None
                };
                Some(theoretical_mmd_variance(&target, sigma, k)?)
            } else {
                None
            };
            let depths: &[usize] = if spec.ansatz.is_product() {
                &[0]
            } else {
                &spec.depths
            };
            for &depth in depths {
                let circuit = build_ansatz(spec.ansatz, n, depth)?;
                let seed = path_seed(spec.seed, &[n as u64, sigma.to_bits(), depth as u64]);
                let emp = empirical_loss_variance(&eval, &circuit, spec.draws, spec.shots, seed)?;
                out.push(SweepPoint {
                    row: VarianceRow {
                        n,
                        sigma,
                        depth,
                        ansatz: spec.ansatz.name().into(),
                        shots: spec.shots.label(),
                        theory_b: theory.map(|t| t.b),
                        theory_c: theory.map(|t| t.c),
                        theory_total: theory.map(|t| t.total),
                        empirical_var: emp.variance,
                        empirical_stderr: emp.stderr,
                        draws: spec.draws,
                        seed,
                    },
                    parity_mass_k2,
                });
            }
        }
    }
    Ok(out)
}

pub fn write_variance_csv<W: std::io::Write>(rows: &[VarianceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of the explicit-loss concentration CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KldRow {
    pub n: usize,
    pub shots: usize,
    pub epsilon: f64,
    pub mean: f64,
    pub variance: f64,
    pub draws: usize,
    pub seed: u64,
}

/// KL divergence from the point mass on 0^n to the empirical distribution of
/// `shots` measurements of a Haar-random product state, over `draws` states.
///
/// Against a point-mass target the sampled KLD depends on the samples only
/// through the number of all-zero outcomes, so that count is drawn directly
/// from its binomial law instead of simulating every shot.
pub fn kld_concentration_sweep(
    ns: &[usize],
    shots_list: &[usize],
    epsilon: f64,
    draws: usize,
    master_seed: u64,
) -> Result<Vec<KldRow>> {
    if !(epsilon > 0.0) || draws == 0 || shots_list.contains(&0) {
        return invalid("need epsilon > 0, draws >= 1 and shots >= 1");
    }
    let mut rows = Vec::new();
    for &n in ns {
        let circuit = build_ansatz(AnsatzKind::ProductHaar, n, 0)?;
        let zero = BitString::zeros(n);
        for &shots in shots_list {
            let seed = path_seed(master_seed, &[n as u64, shots as u64]);
            let values = (0..draws as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = rng_from_seed(child_seed(seed, i));
                    let params = draw_parameters(&circuit, &mut rng);
                    let q0 = apply_product_circuit(&circuit, &params)?.probability(&zero);
                    let hits = Binomial::new(shots as u64, q0.clamp(0.0, 1.0))
                        .map_err(|e| Error::Numeric(e.to_string()))?
                        .sample(&mut rng);
                    let q_hat = hits as f64 / shots as f64;
                    Ok((1.0 / q_hat.max(epsilon)).ln())
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(KldRow {
                n,
                shots,
                epsilon,
                mean: values.iter().sum::<f64>() / draws as f64,
                variance: sample_variance(&values),
                draws,
                seed,
            });
        }
    }
    Ok(rows)
}

pub fn write_kld_csv<W: std::io::Write>(rows: &[KldRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
