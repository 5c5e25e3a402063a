//! Losses between a circuit's Born distribution and a target, evaluated
//! exactly or from a finite number of measurements.

pub mod explicit;
pub mod fidelity;
pub mod kernel;

use serde::{Deserialize, Serialize};

pub use explicit::{
    explicit_loss, explicit_loss_dense, explicit_loss_dq_dense, loss_fixed_point, ExplicitLossKind,
    ExplicitLossSpec, CONCENTRATION_EPSILON, TRAINING_EPSILON,
};
pub use fidelity::{
    global_quantum_fidelity, global_quantum_fidelity_product, local_quantum_fidelity,
    lqf_hadamard_estimator, target_state, LqfEstimate,
};
pub use kernel::{
    mmd_exact, mmd_sampled, mmd_truncated, walsh_hadamard, DenseMmd, KernelSpec, MmdTarget,
};

use crate::bits::BitString;
use crate::distributions::{empirical_distribution, Distribution};
use crate::error::{invalid, Error, Result};
use crate::rng::rng_from_seed;
use crate::simulator::{
    apply_circuit, apply_product_circuit, sample_bitstrings, ParameterizedCircuit, ProductState,
    StateVector,
};

/// Dense parity-basis MMD tables are built only up to this width.
pub const DENSE_MMD_CAP: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LossSpec {
    Explicit(ExplicitLossSpec),
    Mmd(KernelSpec),
    GlobalFidelity,
    LocalFidelity,
}

impl LossSpec {
    /// Losses that depend on the circuit only through its Born distribution.
    pub fn is_classical(&self) -> bool {
        matches!(self, LossSpec::Explicit(_) | LossSpec::Mmd(_))
    }

    pub fn name(&self) -> String {
        match self {
            LossSpec::Explicit(s) => s.kind.name(),
            LossSpec::Mmd(k) => format!("mmd[{}]", k.describe()),
            LossSpec::GlobalFidelity => "global_fidelity".into(),
            LossSpec::LocalFidelity => "local_fidelity".into(),
        }
    }
}

/// Exact probabilities, or a number of measurements per evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shots {
    Exact,
    Finite(usize),
}

impl Shots {
    pub fn label(&self) -> String {
        match self {
            Shots::Exact => "exact".into(),
            Shots::Finite(s) => s.to_string(),
        }
    }
}

/// A simulated model state.
#[derive(Clone, Debug)]
pub enum Model {
    Dense(StateVector),
    Product(ProductState),
}

impl Model {
    /// Product circuits use the factorized simulator; everything else a statevector.
    pub fn simulate(circuit: &ParameterizedCircuit, params: &[f64]) -> Result<Self> {
        if circuit.has_entangling_gates() {
            Ok(Model::Dense(apply_circuit(circuit, params)?))
        } else {
            Ok(Model::Product(apply_product_circuit(circuit, params)?))
        }
    }

    pub fn probabilities(&self) -> Result<Vec<f64>> {
        match self {
            Model::Dense(s) => Ok(s.probabilities()),
            Model::Product(s) => s.probabilities(),
        }
    }

    pub fn sample(&self, shots: usize, seed: u64) -> Result<Distribution> {
        let set = match self {
            Model::Dense(s) => sample_bitstrings(s, shots, seed)?,
            Model::Product(s) => sample_bitstrings(s, shots, seed)?,
        };
        empirical_distribution(&set)
    }
}

/// A loss bound to a target distribution, with target-side work precomputed.
#[derive(Clone, Debug)]
pub struct LossEvaluator {
    spec: LossSpec,
    target: Distribution,
    target_dense: Option<Vec<f64>>,
    mmd_target: Option<MmdTarget>,
    dense_mmd: Option<DenseMmd>,
}

impl LossEvaluator {
    pub fn new(spec: LossSpec, target: Distribution) -> Result<Self> {
        let n = target.n_bits();
        let target_dense = if n <= DENSE_MMD_CAP {
            Some(target.to_dense()?)
        } else {
            None
        };
        let (mmd_target, dense_mmd) = match &spec {
            LossSpec::Mmd(k) => {
                let dense = if n <= DENSE_MMD_CAP {
                    Some(DenseMmd::new(&target, k)?)
                } else {
                    None
                };
                (Some(MmdTarget::new(&target, k)?), dense)
            }
            _ => (None, None),
        };
        Ok(LossEvaluator {
            spec,
            target,
            target_dense,
            mmd_target,
            dense_mmd,
        })
    }

    pub fn spec(&self) -> &LossSpec {
        &self.spec
    }

    pub fn target(&self) -> &Distribution {
        &self.target
    }

    fn check_circuit(&self, circuit: &ParameterizedCircuit) -> Result<()> {
        if circuit.n_qubits() != self.target.n_bits() {
            return Err(Error::LengthMismatch {
                expected: self.target.n_bits(),
                got: circuit.n_qubits(),
            });
        }
        Ok(())
    }

    /// Loss at `params`. Finite-shot evaluations draw from a stream seeded by `seed`.
    pub fn evaluate(
        &self,
        circuit: &ParameterizedCircuit,
        params: &[f64],
        shots: Shots,
        seed: u64,
    ) -> Result<f64> {
        self.check_circuit(circuit)?;
        match (&self.spec, shots) {
            (LossSpec::LocalFidelity, Shots::Exact) => {
                local_quantum_fidelity(circuit, params, &self.target)
            }
            (LossSpec::LocalFidelity, Shots::Finite(s)) => {
                Ok(lqf_hadamard_estimator(circuit, params, &self.target, Some(s), seed)?.value)
            }
            (LossSpec::GlobalFidelity, _) => {
                let exact = match Model::simulate(circuit, params)? {
                    Model::Dense(s) => global_quantum_fidelity(&s, &self.target)?,
                    Model::Product(s) => global_quantum_fidelity_product(&s, &self.target)?,
                };
                match shots {
                    Shots::Exact => Ok(exact),
                    Shots::Finite(s) => {
                        fidelity::global_fidelity_swap_test(exact, s, &mut rng_from_seed(seed))
                    }
                }
            }
            (_, Shots::Exact) => self.classical_exact(&Model::simulate(circuit, params)?),
            (_, Shots::Finite(s)) => {
                self.classical_sparse(&Model::simulate(circuit, params)?.sample(s, seed)?)
            }
        }
    }

    /// Exact classical loss of a simulated model.
    pub fn classical_exact(&self, model: &Model) -> Result<f64> {
        match (&self.spec, model) {
            (LossSpec::Mmd(_), Model::Product(s)) => {
                self.mmd_target.as_ref().unwrap().mmd_product(s)
            }
            _ => self.classical_dense(&model.probabilities()?),
        }
    }

    /// Classical loss of a dense model probability vector.
    pub fn classical_dense(&self, q: &[f64]) -> Result<f64> {
        match &self.spec {
            LossSpec::Explicit(s) => explicit_loss_dense(s, self.dense_target()?, q),
            LossSpec::Mmd(_) => match &self.dense_mmd {
                Some(d) => d.mmd(q),
                None => self
                    .mmd_target
                    .as_ref()
                    .unwrap()
                    .mmd_sparse(&Distribution::from_dense(self.target.n_bits(), q)?),
            },
            _ => invalid("fidelity losses need the state, not only its probabilities"),
        }
    }

    /// ∂L/∂q(x) for every string, for dense models.
    pub fn classical_dq_dense(&self, q: &[f64]) -> Result<Vec<f64>> {
        match &self.spec {
            LossSpec::Explicit(s) => explicit_loss_dq_dense(s, self.dense_target()?, q),
            LossSpec::Mmd(_) => match &self.dense_mmd {
                Some(d) => d.dq(q),
                None => Err(Error::CapExceeded {
                    n: self.target.n_bits(),
                    cap: DENSE_MMD_CAP,
                }),
            },
            _ => invalid("fidelity losses have no probability derivative"),
        }
    }

    /// Classical loss of a sparse (typically empirical) model distribution.
    pub fn classical_sparse(&self, q: &Distribution) -> Result<f64> {
        match &self.spec {
            LossSpec::Explicit(s) => explicit_loss(s, &self.target, q),
            LossSpec::Mmd(_) => self.mmd_target.as_ref().unwrap().mmd_sparse(q),
            _ => invalid("fidelity losses cannot be evaluated from samples alone"),
        }
    }

    /// ∂L/∂q at the given strings for a sparse model distribution.
    pub fn classical_dq_sparse(&self, q: &Distribution, at: &[BitString]) -> Result<Vec<f64>> {
        match &self.spec {
            LossSpec::Explicit(s) => {
                let d = explicit::SparseDerivative::new(s, &self.target, q)?;
                Ok(at.iter().map(|x| d.at(x)).collect())
            }
            LossSpec::Mmd(_) => Ok(self.mmd_target.as_ref().unwrap().dq_sparse(q, at)),
            _ => invalid("fidelity losses have no probability derivative"),
        }
    }

    fn dense_target(&self) -> Result<&[f64]> {
        self.target_dense.as_deref().ok_or(Error::CapExceeded {
            n: self.target.n_bits(),
            cap: DENSE_MMD_CAP,
        })
    }
}
