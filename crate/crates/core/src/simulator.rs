//! Parameterized circuits, dense statevector simulation, a factorized path for
//! circuits without entangling gates, and measurement sampling.
//!
//! Qubit 0 is the leftmost character of a bitstring and the most significant
//! bit of an amplitude index.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::distributions::{Distribution, SampleSet};
use crate::error::{invalid, Error, Result};
use crate::rng::{rng_from_seed, Rng};

/// Largest register simulated as a dense statevector.
pub const STATEVECTOR_CAP: usize = 25;

/// Dense work above this size is split across threads.
const PARALLEL_DIM: usize = 1 << 16;

/// A circuit gate. Rotation angles are indices into the parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    Rx {
        qubit: usize,
        param: usize,
    },
    Ry {
        qubit: usize,
        param: usize,
    },
    Rz {
        qubit: usize,
        param: usize,
    },
    /// RZ(θ[a]) · RY(θ[b]) · RZ(θ[c]) for `params = [a, b, c]`.
    EulerZyz {
        qubit: usize,
        params: [usize; 3],
    },
    Cx {
        control: usize,
        target: usize,
    },
}

impl Gate {
    fn qubits(&self) -> Vec<usize> {
        match *self {
            Gate::Rx { qubit, .. }
            | Gate::Ry { qubit, .. }
            | Gate::Rz { qubit, .. }
            | Gate::EulerZyz { qubit, .. } => {
                vec![qubit]
            }
            Gate::Cx { control, target } => vec![control, target],
        }
    }

    fn params(&self) -> Vec<usize> {
        match *self {
            Gate::Rx { param, .. } | Gate::Ry { param, .. } | Gate::Rz { param, .. } => vec![param],
            Gate::EulerZyz { params, .. } => params.to_vec(),
            Gate::Cx { .. } => vec![],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnsatzKind {
    /// Euler layers interleaved with nearest-neighbour CX·RY·CX entanglers.
    HeaLine,
    /// Euler layers interleaved with CX on every ordered pair i < j.
    HeaAllPair,
    /// One RY per qubit.
    ProductRy,
    /// One Euler rotation per qubit, drawn from the Haar measure.
    ProductHaar,
    /// Hand-built gate list.
    Custom,
}

impl AnsatzKind {
    pub fn name(&self) -> &'static str {
        match self {
            AnsatzKind::HeaLine => "HEA_LINE",
            AnsatzKind::HeaAllPair => "HEA_ALLPAIR",
            AnsatzKind::ProductRy => "PRODUCT_RY",
            AnsatzKind::ProductHaar => "PRODUCT_HAAR",
            AnsatzKind::Custom => "CUSTOM",
        }
    }

    pub fn is_product(&self) -> bool {
        matches!(self, AnsatzKind::ProductRy | AnsatzKind::ProductHaar)
    }
}

impl std::str::FromStr for AnsatzKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HEA_LINE" | "HEA" => Ok(AnsatzKind::HeaLine),
            "HEA_ALLPAIR" => Ok(AnsatzKind::HeaAllPair),
            "PRODUCT_RY" => Ok(AnsatzKind::ProductRy),
            "PRODUCT_HAAR" => Ok(AnsatzKind::ProductHaar),
            _ => Err(Error::Parse(format!("unknown ansatz '{s}'"))),
        }
    }
}

/// Gates grouped into layers, listed in the order they act on the state.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterizedCircuit {
    n_qubits: usize,
    kind: AnsatzKind,
    depth: usize,
    layers: Vec<Vec<Gate>>,
    n_params: usize,
}

impl ParameterizedCircuit {
    /// Validate a hand-built circuit. Every parameter index in `0..P` must
    /// drive exactly one rotation, which is what the shift rule relies on.
    pub fn custom(n_qubits: usize, layers: Vec<Vec<Gate>>) -> Result<Self> {
        Self::validated(n_qubits, AnsatzKind::Custom, layers.len(), layers)
    }

    fn validated(
        n_qubits: usize,
        kind: AnsatzKind,
        depth: usize,
        layers: Vec<Vec<Gate>>,
    ) -> Result<Self> {
        if n_qubits == 0 {
            return invalid("a circuit needs at least one qubit");
        }
        let mut used = Vec::new();
        for g in layers.iter().flatten() {
            let qs = g.qubits();
            if qs.iter().any(|&q| q >= n_qubits) {
                return invalid(format!(
                    "gate {g:?} addresses a qubit outside 0..{n_qubits}"
                ));
            }
            if qs.len() == 2 && qs[0] == qs[1] {
                return invalid(format!("gate {g:?} uses the same qubit twice"));
            }
            used.extend(g.params());
        }
        used.sort_unstable();
        if used.iter().enumerate().any(|(i, &p)| i != p) {
            return invalid(
                "parameter indices must cover 0..P with each used by exactly one rotation",
            );
        }
        Ok(ParameterizedCircuit {
            n_qubits,
            kind,
            depth,
            layers,
            n_params: used.len(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn kind(&self) -> AnsatzKind {
        self.kind
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn layers(&self) -> &[Vec<Gate>] {
        &self.layers
    }

    pub fn gates(&self) -> impl DoubleEndedIterator<Item = &Gate> {
        self.layers.iter().flatten()
    }

    pub fn has_entangling_gates(&self) -> bool {
        self.gates().any(|g| matches!(g, Gate::Cx { .. }))
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(Error::LengthMismatch {
                expected: self.n_params,
                got: params.len(),
            });
        }
        Ok(())
    }
}

/// Number of parameters of an ansatz, counted from its layer structure.
pub fn parameter_count(kind: AnsatzKind, n: usize, depth: usize) -> usize {
    match kind {
        AnsatzKind::HeaLine => 3 * n + depth * (3 * n + n.saturating_sub(1)),
        AnsatzKind::HeaAllPair => 3 * n * (depth + 1),
        AnsatzKind::ProductRy => n,
        AnsatzKind::ProductHaar => 3 * n,
        AnsatzKind::Custom => 0,
    }
}

/// Build one of the standard ansätze. `depth` counts entangling layers and is
/// ignored for product ansätze.
pub fn build_ansatz(kind: AnsatzKind, n: usize, depth: usize) -> Result<ParameterizedCircuit> {
    let mut next = 0usize;
    let mut take = || {
        next += 1;
        next - 1
    };
    let euler_layer = |take: &mut dyn FnMut() -> usize| -> Vec<Gate> {
        (0..n)
            .map(|q| Gate::EulerZyz {
                qubit: q,
                params: [take(), take(), take()],
            })
            .collect()
    };
    let layers = match kind {
        AnsatzKind::ProductRy => vec![(0..n)
            .map(|q| Gate::Ry {
                qubit: q,
                param: take(),
            })
            .collect()],
        AnsatzKind::ProductHaar => vec![euler_layer(&mut take)],
        AnsatzKind::HeaLine | AnsatzKind::HeaAllPair => {
            let mut layers = vec![euler_layer(&mut take)];
            for _ in 0..depth {
                let mut ent = Vec::new();
                if kind == AnsatzKind::HeaLine {
                    for i in 0..n.saturating_sub(1) {
                        ent.push(Gate::Cx {
                            control: i,
                            target: i + 1,
                        });
                        ent.push(Gate::Ry {
                            qubit: i,
                            param: take(),
                        });
                        ent.push(Gate::Cx {
                            control: i,
                            target: i + 1,
                        });
                    }
                } else {
                    for i in 0..n {
                        for j in i + 1..n {
                            ent.push(Gate::Cx {
                                control: i,
                                target: j,
                            });
                        }
                    }
                }
                layers.push(ent);
                layers.push(euler_layer(&mut take));
            }
            layers
        }
        AnsatzKind::Custom => {
            return invalid("custom circuits are built with ParameterizedCircuit::custom")
        }
    };
    let depth = if kind.is_product() { 0 } else { depth };
    ParameterizedCircuit::validated(n, kind, depth, layers)
}

/// Random parameters: Haar-distributed Euler angles for `PRODUCT_HAAR`,
/// independent uniform angles in [0, 2π) otherwise.
pub fn draw_parameters(circuit: &ParameterizedCircuit, rng: &mut Rng) -> Vec<f64> {
    let mut params: Vec<f64> = (0..circuit.n_params())
        .map(|_| rng.random::<f64>() * TAU)
        .collect();
    if circuit.kind() == AnsatzKind::ProductHaar {
        for g in circuit.gates() {
            if let Gate::EulerZyz {
                params: [_, polar, _],
                ..
            } = *g
            {
                // |⟨0|U|0⟩|² = cos²(θ/2) is uniform on [0, 1] under the Haar measure.
                let u: f64 = rng.random();
                params[polar] = 2.0 * u.sqrt().acos();
            }
        }
    }
    params
}

type Mat2 = [[Complex64; 2]; 2];

fn rotation(kind: char, theta: f64) -> Mat2 {
    let (s, c) = (theta / 2.0).sin_cos();
    let z = Complex64::new(0.0, 0.0);
    match kind {
        'x' => [
            [Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
            [Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
        ],
        'y' => [
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ],
        _ => [[Complex64::new(c, -s), z], [z, Complex64::new(c, s)]],
    }
}

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

fn dagger(a: &Mat2) -> Mat2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

/// Matrix of a single-qubit gate, or `None` for CX.
fn gate_matrix(gate: &Gate, params: &[f64]) -> Option<(usize, Mat2)> {
    match *gate {
        Gate::Rx { qubit, param } => Some((qubit, rotation('x', params[param]))),
        Gate::Ry { qubit, param } => Some((qubit, rotation('y', params[param]))),
        Gate::Rz { qubit, param } => Some((qubit, rotation('z', params[param]))),
        Gate::EulerZyz {
            qubit,
            params: [a, b, c],
        } => {
            let m = matmul(
                &rotation('z', params[a]),
                &matmul(&rotation('y', params[b]), &rotation('z', params[c])),
            );
            Some((qubit, m))
        }
        Gate::Cx { .. } => None,
    }
}

/// Dense n-qubit state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn basis(x: &BitString) -> Result<Self> {
        let n = x.len();
        if n > STATEVECTOR_CAP {
            return Err(Error::CapExceeded {
                n,
                cap: STATEVECTOR_CAP,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[x.to_index() as usize] = Complex64::new(1.0, 0.0);
        Ok(StateVector { n_qubits: n, amps })
    }

    pub fn zero(n: usize) -> Result<Self> {
        Self::basis(&BitString::zeros(n))
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1 << n_qubits {
            return Err(Error::LengthMismatch {
                expected: 1 << n_qubits,
                got: amps.len(),
            });
        }
        Ok(StateVector { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, x: &BitString) -> Complex64 {
        self.amps[x.to_index() as usize]
    }

    fn apply_single(&mut self, qubit: usize, m: &Mat2) {
        let stride = 1usize << (self.n_qubits - 1 - qubit);
        let kernel = |chunk: &mut [Complex64]| {
            let (lo, hi) = chunk.split_at_mut(stride);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = m[0][0] * x + m[0][1] * y;
                *b = m[1][0] * x + m[1][1] * y;
            }
        };
        if self.amps.len() >= PARALLEL_DIM {
            self.amps.par_chunks_mut(2 * stride).for_each(kernel);
        } else {
            self.amps.chunks_mut(2 * stride).for_each(kernel);
        }
    }

    fn apply_cx(&mut self, control: usize, target: usize) {
        let cbit = 1usize << (self.n_qubits - 1 - control);
        let tbit = 1usize << (self.n_qubits - 1 - target);
        for i in 0..self.amps.len() {
            if i & cbit != 0 && i & tbit == 0 {
                self.amps.swap(i, i | tbit);
            }
        }
    }

    fn apply_gate(&mut self, gate: &Gate, params: &[f64], adjoint: bool) {
        match (gate, gate_matrix(gate, params)) {
            (_, Some((q, m))) => self.apply_single(q, &if adjoint { dagger(&m) } else { m }),
            (Gate::Cx { control, target }, None) => self.apply_cx(*control, *target),
            _ => unreachable!(),
        }
    }

    /// Apply U(θ) to this state.
    pub fn apply(&mut self, circuit: &ParameterizedCircuit, params: &[f64]) -> Result<()> {
        self.check_circuit(circuit, params)?;
        for g in circuit.gates() {
            self.apply_gate(g, params, false);
        }
        Ok(())
    }

    /// Apply U(θ)† to this state.
    pub fn apply_adjoint(&mut self, circuit: &ParameterizedCircuit, params: &[f64]) -> Result<()> {
        self.check_circuit(circuit, params)?;
        for g in circuit.gates().rev() {
            self.apply_gate(g, params, true);
        }
        Ok(())
    }

    fn check_circuit(&self, circuit: &ParameterizedCircuit, params: &[f64]) -> Result<()> {
        if circuit.n_qubits() != self.n_qubits {
            return Err(Error::LengthMismatch {
                expected: self.n_qubits,
                got: circuit.n_qubits(),
            });
        }
        circuit.check_params(params)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Born probabilities indexed by the binary value of each string.
    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn born_distribution(&self) -> Result<Distribution> {
        Distribution::from_dense(self.n_qubits, &drop_roundoff(self.probabilities()))
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// ⟨Z_A⟩ = Σ_x |ψ(x)|² (−1)^{parity of x on A}.
    pub fn expectation_z_string(&self, mask: &BitString) -> f64 {
        let m = mask.to_index() as usize;
        self.amps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if (i & m).count_ones() % 2 == 1 {
                    -a.norm_sqr()
                } else {
                    a.norm_sqr()
                }
            })
            .sum()
    }
}

/// U(θ)|0…0⟩ as a dense vector.
pub fn apply_circuit(circuit: &ParameterizedCircuit, params: &[f64]) -> Result<StateVector> {
    let mut s = StateVector::zero(circuit.n_qubits())?;
    s.apply(circuit, params)?;
    Ok(s)
}

/// Tensor product of single-qubit states.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    qubits: Vec<[Complex64; 2]>,
}

impl ProductState {
    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    pub fn qubit(&self, i: usize) -> [Complex64; 2] {
        self.qubits[i]
    }

    /// Probability of measuring 1 on each qubit.
    pub fn one_probabilities(&self) -> Vec<f64> {
        self.qubits.iter().map(|u| u[1].norm_sqr()).collect()
    }

    pub fn probability(&self, x: &BitString) -> f64 {
        self.qubits
            .iter()
            .enumerate()
            .map(|(i, u)| u[x.get(i) as usize].norm_sqr())
            .product()
    }

    pub fn expectation_z_string(&self, mask: &BitString) -> f64 {
        self.qubits
            .iter()
            .enumerate()
            .filter(|(i, _)| mask.get(*i))
            .map(|(_, u)| u[0].norm_sqr() - u[1].norm_sqr())
            .product()
    }

    pub fn to_statevector(&self) -> Result<StateVector> {
        let n = self.n_qubits();
        if n > STATEVECTOR_CAP {
            return Err(Error::CapExceeded {
                n,
                cap: STATEVECTOR_CAP,
            });
        }
        let mut amps = vec![Complex64::new(1.0, 0.0)];
        for u in &self.qubits {
            amps = amps.iter().flat_map(|a| [a * u[0], a * u[1]]).collect();
        }
        StateVector::from_amplitudes(n, amps)
    }

    /// Dense Born probabilities (qubit 0 most significant).
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let n = self.n_qubits();
        if n > STATEVECTOR_CAP {
            return Err(Error::CapExceeded {
                n,
                cap: STATEVECTOR_CAP,
            });
        }
        let mut probs = vec![1.0];
        for p1 in self.one_probabilities() {
            probs = probs
                .iter()
                .flat_map(|a| [a * (1.0 - p1), a * p1])
                .collect();
        }
        Ok(probs)
    }

    /// Materialized Born distribution; larger registers should use
    /// [`ProductState::probability`] on demand instead.
    pub fn born_distribution(&self) -> Result<Distribution> {
        Distribution::from_dense(self.n_qubits(), &drop_roundoff(self.probabilities()?))
    }
}

/// Probabilities this small only arise from rounding (e.g. cos²(π/2)) and are not stored.
const ROUNDOFF_PROBABILITY: f64 = 1e-30;

fn drop_roundoff(mut probs: Vec<f64>) -> Vec<f64> {
    for p in &mut probs {
        if *p < ROUNDOFF_PROBABILITY {
            *p = 0.0;
        }
    }
    probs
}

/// Simulate a circuit without entangling gates qubit by qubit, in O(n) memory.
pub fn apply_product_circuit(
    circuit: &ParameterizedCircuit,
    params: &[f64],
) -> Result<ProductState> {
    circuit.check_params(params)?;
    if circuit.has_entangling_gates() {
        return invalid("the factorized simulator only accepts circuits without CX gates");
    }
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut qubits = vec![[one, zero]; circuit.n_qubits()];
    for g in circuit.gates() {
        let (q, m) = gate_matrix(g, params).expect("no CX present");
        let [a, b] = qubits[q];
        qubits[q] = [m[0][0] * a + m[0][1] * b, m[1][0] * a + m[1][1] * b];
    }
    Ok(ProductState { qubits })
}

/// Anything that can be measured in the computational basis.
pub trait Measure {
    fn n_bits(&self) -> usize;
    fn draw(&self, shots: usize, rng: &mut Rng) -> Vec<BitString>;
}

/// Inverse-CDF sampler over a fixed list of outcomes.
struct Cdf<'a, T> {
    outcomes: &'a [T],
    cumulative: Vec<f64>,
}

impl<'a, T> Cdf<'a, T> {
    fn new(outcomes: &'a [T], weights: impl Iterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let cumulative = weights
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Cdf {
            outcomes,
            cumulative,
        }
    }

    fn pick(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.outcomes.len() - 1)
    }
}

impl Measure for StateVector {
    fn n_bits(&self) -> usize {
        self.n_qubits
    }

    fn draw(&self, shots: usize, rng: &mut Rng) -> Vec<BitString> {
        let probs = self.probabilities();
        let cdf = Cdf::new(&probs, probs.iter().copied());
        (0..shots)
            .map(|_| BitString::from_index(cdf.pick(rng) as u64, self.n_qubits))
            .collect()
    }
}

impl Measure for ProductState {
    fn n_bits(&self) -> usize {
        self.n_qubits()
    }

    fn draw(&self, shots: usize, rng: &mut Rng) -> Vec<BitString> {
        let p1 = self.one_probabilities();
        (0..shots)
            .map(|_| {
                let mut x = BitString::zeros(p1.len());
                for (i, &p) in p1.iter().enumerate() {
                    if rng.random::<f64>() < p {
                        x.set(i, true);
                    }
                }
                x
            })
            .collect()
    }
}

impl Measure for Distribution {
    fn n_bits(&self) -> usize {
        Distribution::n_bits(self)
    }

    fn draw(&self, shots: usize, rng: &mut Rng) -> Vec<BitString> {
        let outcomes: Vec<&BitString> = self.support().collect();
        let cdf = Cdf::new(&outcomes, self.iter().map(|(_, p)| p));
        (0..shots)
            .map(|_| outcomes[cdf.pick(rng)].clone())
            .collect()
    }
}

/// Draw `shots` independent measurement outcomes using a stream seeded by `seed`.
pub fn sample_bitstrings<M: Measure + ?Sized>(
    source: &M,
    shots: usize,
    seed: u64,
) -> Result<SampleSet> {
    if shots == 0 {
        return invalid("shots must be at least 1");
    }
    let mut rng = rng_from_seed(seed);
    Ok(SampleSet {
        n_bits: source.n_bits(),
        samples: source.draw(shots, &mut rng),
        seed,
    })
}

/// Shift every angle of a parameter vector into [0, 2π).
pub fn wrap_angles(params: &mut [f64]) {
    for p in params {
        *p = p.rem_euclid(TAU);
    }
}

/// Quarter-turn used by the parameter-shift rule.
pub const SHIFT: f64 = PI / 2.0;
