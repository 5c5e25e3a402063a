//! State-fidelity losses against the coherent encoding |φ⟩ = Σ_x √p(x)|x⟩ of a target.

use num_complex::Complex64;
use rand_distr::{Binomial, Distribution as _};

use crate::distributions::Distribution;
use crate::error::{invalid, Error, Result};
use crate::rng::{child_seed, rng_from_seed, Rng};
use crate::simulator::{ParameterizedCircuit, ProductState, StateVector, STATEVECTOR_CAP};

/// Limit on (support size × 2^n) amplitudes held by the Hadamard-test estimator.
pub const HADAMARD_MEMORY_BUDGET: f64 = (1u64 << 28) as f64;

/// Dense |φ⟩ with real nonnegative amplitudes √p(x).
pub fn target_state(target: &Distribution) -> Result<StateVector> {
    let n = target.n_bits();
    if n > STATEVECTOR_CAP {
        return Err(Error::CapExceeded {
            n,
            cap: STATEVECTOR_CAP,
        });
    }
    let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
    for (x, p) in target.iter() {
        amps[x.to_index() as usize] = Complex64::new(p.sqrt(), 0.0);
    }
    StateVector::from_amplitudes(n, amps)
}

fn check_width(n_state: usize, target: &Distribution) -> Result<()> {
    if n_state != target.n_bits() {
        return Err(Error::LengthMismatch {
            expected: target.n_bits(),
            got: n_state,
        });
    }
    Ok(())
}

/// 1 − |⟨φ|ψ⟩|².
pub fn global_quantum_fidelity(state: &StateVector, target: &Distribution) -> Result<f64> {
    check_width(state.n_qubits(), target)?;
    let overlap: Complex64 = target
        .iter()
        .map(|(x, p)| p.sqrt() * state.amplitude(x))
        .sum();
    Ok((1.0 - overlap.norm_sqr()).max(0.0))
}

/// 1 − |⟨φ|ψ⟩|² for a product state, summing only over the target support.
pub fn global_quantum_fidelity_product(state: &ProductState, target: &Distribution) -> Result<f64> {
    check_width(state.n_qubits(), target)?;
    let overlap: Complex64 = target
        .iter()
        .map(|(x, p)| {
            let amp: Complex64 = (0..x.len())
                .map(|i| state.qubit(i)[x.get(i) as usize])
                .product();
            p.sqrt() * amp
        })
        .sum();
    Ok((1.0 - overlap.norm_sqr()).max(0.0))
}

/// Swap-test estimate of the global fidelity loss: each shot returns 0 with
/// probability (1 + F)/2 where F = |⟨φ|ψ⟩|².
pub fn global_fidelity_swap_test(exact_loss: f64, shots: usize, rng: &mut Rng) -> Result<f64> {
    let f = 1.0 - exact_loss;
    let heads = binomial(shots, 0.5 * (1.0 + f), rng)?;
    Ok(1.0 - (2.0 * heads as f64 / shots as f64 - 1.0))
}

fn binomial(shots: usize, prob: f64, rng: &mut Rng) -> Result<u64> {
    if shots == 0 {
        return invalid("shots must be at least 1");
    }
    let b = Binomial::new(shots as u64, prob.clamp(0.0, 1.0))
        .map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(b.sample(rng))
}

/// ½ − (1/2n) Σ_i ⟨φ|U Z_i U†|φ⟩, i.e. one minus the average probability that
/// U†|φ⟩ leaves each qubit in |0⟩.
pub fn local_quantum_fidelity(
    circuit: &ParameterizedCircuit,
    params: &[f64],
    target: &Distribution,
) -> Result<f64> {
    check_width(circuit.n_qubits(), target)?;
    let mut psi = target_state(target)?;
    psi.apply_adjoint(circuit, params)?;
    Ok(lqf_from_pulled_back(&psi))
}

fn lqf_from_pulled_back(psi: &StateVector) -> f64 {
    let n = psi.n_qubits();
    let z_sum: f64 = psi
        .amplitudes()
        .iter()
        .enumerate()
        .map(|(k, a)| (n as f64 - 2.0 * k.count_ones() as f64) * a.norm_sqr())
        .sum();
    0.5 - z_sum / (2.0 * n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LqfEstimate {
    pub value: f64,
    /// Plug-in standard error from the per-test binomial variances (0 in exact mode).
    pub std_error: f64,
    pub tests: usize,
}

/// Estimate the local fidelity loss from Hadamard tests on pairs of support
/// strings. Each test measures Re⟨x|U Z_i U†|x'⟩ = Re⟨U†x|Z_i|U†x'⟩; pairs
/// x < x' stand for both orderings. With `shots = None` every test returns its
/// exact expectation; otherwise each test flips a coin with heads probability
/// (1 + r)/2 `shots` times, seeded per test from `seed`.
pub fn lqf_hadamard_estimator(
    circuit: &ParameterizedCircuit,
    params: &[f64],
    target: &Distribution,
    shots: Option<usize>,
    seed: u64,
) -> Result<LqfEstimate> {
    let n = circuit.n_qubits();
    check_width(n, target)?;
    if n > STATEVECTOR_CAP {
        return Err(Error::CapExceeded {
            n,
            cap: STATEVECTOR_CAP,
        });
    }
    let support: Vec<_> = target.iter().collect();
    if support.len() as f64 * (1u64 << n) as f64 > HADAMARD_MEMORY_BUDGET {
        return Err(Error::Budget(format!(
            "{} pulled-back basis states of {n} qubits",
            support.len()
        )));
    }
    let pulled: Vec<StateVector> = support
        .iter()
        .map(|(x, _)| {
            let mut v = StateVector::basis(x)?;
            v.apply_adjoint(circuit, params)?;
            Ok(v)
        })
        .collect::<Result<_>>()?;

    let mut total = 0.0;
    let mut variance = 0.0;
    let mut test_index = 0u64;
    for i in 0..n {
        let bit = 1usize << (n - 1 - i);
        for a in 0..support.len() {
            for b in a..support.len() {
                let va = pulled[a].amplitudes();
                let vb = pulled[b].amplitudes();
                let r: f64 = va
                    .iter()
                    .zip(vb)
                    .enumerate()
                    .map(|(k, (x, y))| {
                        let v = (x.conj() * y).re;
                        if k & bit != 0 {
                            -v
                        } else {
                            v
                        }
                    })
                    .sum();
                let weight = (support[a].1 * support[b].1).sqrt() * if a == b { 1.0 } else { 2.0 };
                let estimate = match shots {
                    None => r,
                    Some(s) => {
                        let mut rng = rng_from_seed(child_seed(seed, test_index));
                        let heads = binomial(s, 0.5 * (1.0 + r), &mut rng)?;
                        let r_hat = 2.0 * heads as f64 / s as f64 - 1.0;
                        variance += weight * weight * (1.0 - r_hat * r_hat).max(0.0) / s as f64;
                        r_hat
                    }
                };
                total += weight * estimate;
                test_index += 1;
            }
        }
    }
    let scale = 1.0 / (2.0 * n as f64);
    Ok(LqfEstimate {
        value: 0.5 - scale * total,
        std_error: scale * variance.sqrt(),
        tests: test_index as usize,
    })
}
