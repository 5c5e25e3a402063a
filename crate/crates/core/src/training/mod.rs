//! Training loops: parameter-shift gradients with Adam, and a gradient-free
//! evolution strategy, both tracking the exact total variation distance.

mod adam;
mod es;

pub use adam::{adam_train, learning_rate, AdamSpec};
pub use es::{es_train, EsSpec};

use std::f64::consts::TAU;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::distributions::{Distribution, DENSE_CAP};
use crate::error::{invalid, Error, Result};
use crate::losses::{LossEvaluator, LossSpec, Model, Shots};
use crate::rng::{child_seed, path_seed, rng_from_seed};
use crate::simulator::{build_ansatz, AnsatzKind, ParameterizedCircuit, SHIFT};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerSpec {
    Adam(AdamSpec),
    Es(EsSpec),
}

/// Starting parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Independent uniform angles in [0, 2π).
    Uniform,
    /// Independent uniform angles in [−scale, scale].
    NearIdentity { scale: f64 },
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub ansatz: AnsatzKind,
    pub n_qubits: usize,
    pub depth: usize,
    pub loss: LossSpec,
    pub target: Distribution,
    pub shots: Shots,
    /// Number of consecutive gradient estimates averaged before each step.
    pub k_batch: usize,
    /// Elementwise gradient clip.
    pub clip: Option<f64>,
    pub max_iterations: usize,
    pub seed: u64,
    pub init: Init,
    pub optimizer: OptimizerSpec,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.target.n_bits() != self.n_qubits {
            return Err(Error::LengthMismatch {
                expected: self.n_qubits,
                got: self.target.n_bits(),
            });
        }
        if self.shots == Shots::Finite(0) {
            return invalid("shots must be at least 1");
        }
        if self.k_batch == 0 {
            return invalid("k_batch must be at least 1");
        }
        if let Some(t) = self.clip {
            if !(t > 0.0) {
                return invalid("clip threshold must be positive");
            }
        }
        if let Init::NearIdentity { scale } = self.init {
            if !(scale >= 0.0) {
                return invalid("initial scale must be nonnegative");
            }
        }
        Ok(())
    }

    fn circuit(&self) -> Result<ParameterizedCircuit> {
        build_ansatz(self.ansatz, self.n_qubits, self.depth)
    }

    fn initial_params(&self, circuit: &ParameterizedCircuit) -> Vec<f64> {
        let mut rng = rng_from_seed(child_seed(self.seed, 0));
        (0..circuit.n_params())
            .map(|_| match self.init {
                Init::Uniform => rng.random::<f64>() * TAU,
                Init::NearIdentity { scale } => (2.0 * rng.random::<f64>() - 1.0) * scale,
            })
            .collect()
    }
}

/// One logged iteration (or generation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub loss_estimate: f64,
    pub tvd_exact: Option<f64>,
    /// Adam learning rate, or the ES global step size.
    pub lr: f64,
    /// Norm of the applied gradient; empty for the initial row and for ES.
    pub grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub rows: Vec<IterRecord>,
    /// Running minimum of the logged loss estimates.
    pub best_so_far: Vec<f64>,
    pub final_params: Vec<f64>,
    pub wall_clock_secs: f64,
}

impl TrainRecord {
    fn new() -> Self {
        TrainRecord {
            rows: Vec::new(),
            best_so_far: Vec::new(),
            final_params: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    fn push(&mut self, row: IterRecord) -> Result<()> {
        if !row.loss_estimate.is_finite() {
            return Err(Error::Numeric(format!(
                "loss became {} at iteration {}",
                row.loss_estimate, row.iter
            )));
        }
        let best = self
            .best_so_far
            .last()
            .map_or(row.loss_estimate, |b| b.min(row.loss_estimate));
        self.best_so_far.push(best);
        self.rows.push(row);
        Ok(())
    }

    /// Smallest exact TVD seen during training.
    pub fn min_tvd(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.tvd_exact)
            .min_by(f64::total_cmp)
    }

    /// Write as CSV with header `iter,loss_estimate,tvd_exact,lr,grad_norm`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn train(config: &TrainConfig) -> Result<TrainRecord> {
    match &config.optimizer {
        OptimizerSpec::Adam(_) => adam_train(config),
        OptimizerSpec::Es(_) => es_train(config),
    }
}

/// Σ_x |q(x) − p(x)| for the circuit's exact Born distribution. Circuits
/// without entangling gates are handled at any width by summing over the
/// target support and adding the model mass outside it.
pub fn evaluate_tvd_exact(
    circuit: &ParameterizedCircuit,
    params: &[f64],
    target: &Distribution,
) -> Result<f64> {
    if circuit.n_qubits() != target.n_bits() {
        return Err(Error::LengthMismatch {
            expected: target.n_bits(),
            got: circuit.n_qubits(),
        });
    }
    let tvd = match Model::simulate(circuit, params)? {
        Model::Product(s) => {
            let mut on_support = 0.0;
            let mut diff = 0.0;
            for (x, p) in target.iter() {
                let q = s.probability(x);
                on_support += q;
                diff += (q - p).abs();
            }
            diff + (1.0 - on_support).max(0.0)
        }
        Model::Dense(s) => {
            let q = s.probabilities();
            let mut diff: f64 = q.iter().sum::<f64>();
            for (x, p) in target.iter() {
                let qx = q[x.to_index() as usize];
                diff += (qx - p).abs() - qx;
            }
            diff
        }
    };
    Ok(tvd.clamp(0.0, 2.0))
}

/// Exact TVD when the circuit can be simulated, `None` otherwise.
fn tracked_tvd(
    circuit: &ParameterizedCircuit,
    params: &[f64],
    target: &Distribution,
) -> Result<Option<f64>> {
    if circuit.has_entangling_gates() && circuit.n_qubits() > DENSE_CAP {
        return Ok(None);
    }
    evaluate_tvd_exact(circuit, params, target).map(Some)
}

/// Loss at the unshifted parameters and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

fn shifted(params: &[f64], j: usize, delta: f64) -> Vec<f64> {
    let mut p = params.to_vec();
    p[j] += delta;
    p
}

/// Parameter-shift gradient. For losses of the Born distribution the shifted
/// circuits give ∂q(x)/∂θ_j = (q₊(x) − q₋(x))/2, which is combined with
/// ∂L/∂q(x) at the unshifted point by the chain rule; for fidelity losses,
/// which are expectation values of observables, the gradient is (L₊ − L₋)/2.
/// Finite-shot evaluations use the seeds child(seed, 0) for the unshifted point
/// and path(seed, [j+1, 0|1]) for the shifts.
pub fn parameter_shift_gradient(
    evaluator: &LossEvaluator,
    circuit: &ParameterizedCircuit,
    params: &[f64],
    shots: Shots,
    seed: u64,
) -> Result<GradientEstimate> {
    if params.len() != circuit.n_params() {
        return Err(Error::LengthMismatch {
            expected: circuit.n_params(),
            got: params.len(),
        });
    }
    let shift_seed = |j: usize, s: u64| path_seed(seed, &[j as u64 + 1, s]);
    let js: Vec<usize> = (0..params.len()).collect();
    if !evaluator.spec().is_classical() {
        let loss = evaluator.evaluate(circuit, params, shots, child_seed(seed, 0))?;
        let gradient = js
            .par_iter()
            .map(|&j| {
                let up = evaluator.evaluate(
                    circuit,
                    &shifted(params, j, SHIFT),
                    shots,
                    shift_seed(j, 0),
                )?;
                let down = evaluator.evaluate(
                    circuit,
                    &shifted(params, j, -SHIFT),
                    shots,
                    shift_seed(j, 1),
                )?;
                Ok(0.5 * (up - down))
            })
            .collect::<Result<Vec<f64>>>()?;
        return Ok(GradientEstimate { loss, gradient });
    }
    match shots {
        Shots::Exact => {
            let q = Model::simulate(circuit, params)?.probabilities()?;
            let loss = evaluator.classical_dense(&q)?;
            let dq = evaluator.classical_dq_dense(&q)?;
            let gradient = js
                .par_iter()
                .map(|&j| {
                    let up =
                        Model::simulate(circuit, &shifted(params, j, SHIFT))?.probabilities()?;
                    let down =
                        Model::simulate(circuit, &shifted(params, j, -SHIFT))?.probabilities()?;
                    Ok(dq
                        .iter()
                        .zip(up.iter().zip(&down))
                        .map(|(g, (u, d))| g * 0.5 * (u - d))
                        .sum())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(GradientEstimate { loss, gradient })
        }
        Shots::Finite(s) => {
            let q = Model::simulate(circuit, params)?.sample(s, child_seed(seed, 0))?;
            let loss = evaluator.classical_sparse(&q)?;
            let gradient = js
                .par_iter()
                .map(|&j| {
                    let up = Model::simulate(circuit, &shifted(params, j, SHIFT))?
                        .sample(s, shift_seed(j, 0))?;
                    let down = Model::simulate(circuit, &shifted(params, j, -SHIFT))?
                        .sample(s, shift_seed(j, 1))?;
                    let mut at: Vec<BitString> =
                        up.support().chain(down.support()).cloned().collect();
                    at.sort_unstable();
                    at.dedup();
                    let dq = evaluator.classical_dq_sparse(&q, &at)?;
                    Ok(at
                        .iter()
                        .zip(&dq)
                        .map(|(x, g)| g * 0.5 * (up.probability(x) - down.probability(x)))
                        .sum())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(GradientEstimate { loss, gradient })
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{make_dataset, DatasetKind};
    use crate::losses::{ExplicitLossKind, ExplicitLossSpec, KernelSpec};
    use crate::simulator::{draw_parameters, Gate, ParameterizedCircuit as Circuit};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn tvd_examples() {
        let n = 3;
        let zero = Distribution::point(BitString::zeros(n));
        let c = build_ansatz(AnsatzKind::ProductRy, n, 0).unwrap();
        assert_abs_diff_eq!(
            evaluate_tvd_exact(&c, &[PI; 3], &zero).unwrap(),
            2.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            evaluate_tvd_exact(&c, &[PI / 2.0; 3], &zero).unwrap(),
            1.75,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            evaluate_tvd_exact(&c, &[0.0; 3], &zero).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let big = build_ansatz(AnsatzKind::ProductRy, 200, 0).unwrap();
        assert_abs_diff_eq!(
            evaluate_tvd_exact(
                &big,
                &[PI; 200],
                &Distribution::point(BitString::zeros(200))
            )
            .unwrap(),
            2.0,
            epsilon = 1e-12
        );
        let hea = build_ansatz(AnsatzKind::HeaLine, 3, 1).unwrap();
        let params = draw_parameters(&hea, &mut rng_from_seed(2));
        let ghz = make_dataset(DatasetKind::Ghz, 3, 0).unwrap();
        let q = crate::simulator::apply_circuit(&hea, &params)
            .unwrap()
            .born_distribution()
            .unwrap();
        assert_abs_diff_eq!(
            evaluate_tvd_exact(&hea, &params, &ghz).unwrap(),
            crate::distributions::total_variation(&ghz, &q).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn lqf_gradient_single_qubit() {
        let c = Circuit::custom(1, vec![vec![Gate::Ry { qubit: 0, param: 0 }]]).unwrap();
        let eval = LossEvaluator::new(
            LossSpec::LocalFidelity,
            Distribution::point(BitString::zeros(1)),
        )
        .unwrap();
        let g = parameter_shift_gradient(&eval, &c, &[PI / 2.0], Shots::Exact, 0).unwrap();
        assert_abs_diff_eq!(g.gradient[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g.loss, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn unused_direction_has_zero_gradient() {
        // RZ on |0⟩ only changes a phase, so no Born probability depends on it.
        let c = Circuit::custom(
            2,
            vec![vec![
                Gate::Rz { qubit: 0, param: 0 },
                Gate::Ry { qubit: 1, param: 1 },
            ]],
        )
        .unwrap();
        let eval = LossEvaluator::new(
            LossSpec::Mmd(KernelSpec::gaussian(1.0).unwrap()),
            make_dataset(DatasetKind::Ghz, 2, 0).unwrap(),
        )
        .unwrap();
        let g = parameter_shift_gradient(&eval, &c, &[0.7, 1.1], Shots::Exact, 0).unwrap();
        assert_eq!(g.gradient[0], 0.0);
        assert!(g.gradient[1].abs() > 1e-3);
    }

    #[test]
    fn shift_gradients_match_finite_differences() {
        let n = 3;
        let c = build_ansatz(AnsatzKind::HeaLine, n, 1).unwrap();
        let target = make_dataset(DatasetKind::Ghz, n, 0).unwrap();
        let specs = [
            LossSpec::Explicit(ExplicitLossSpec::new(ExplicitLossKind::Kld, 1e-6).unwrap()),
            LossSpec::Explicit(
                ExplicitLossSpec::new(ExplicitLossKind::Renyi { alpha: 0.5 }, 1e-6).unwrap(),
            ),
            LossSpec::Mmd(KernelSpec::mixture(vec![0.5, 2.0]).unwrap()),
            LossSpec::GlobalFidelity,
            LossSpec::LocalFidelity,
        ];
        let params = draw_parameters(&c, &mut rng_from_seed(9));
        for spec in specs {
            let eval = LossEvaluator::new(spec.clone(), target.clone()).unwrap();
            let g = parameter_shift_gradient(&eval, &c, &params, Shots::Exact, 0).unwrap();
            let h = 1e-5;
            for j in 0..params.len() {
                let fd = (eval
                    .evaluate(&c, &shifted(&params, j, h), Shots::Exact, 0)
                    .unwrap()
                    - eval
                        .evaluate(&c, &shifted(&params, j, -h), Shots::Exact, 0)
                        .unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - g.gradient[j]).abs() < 1e-6,
                    "{spec:?} param {j}: {fd} vs {}",
                    g.gradient[j]
                );
            }
        }
    }

    #[test]
    fn sampled_gradient_is_unbiased_for_mmd() {
        // ∂MMD/∂q is linear in q and the three sample sets are independent, so
        // the sampled chain-rule gradient averages to the exact one.
        let n = 3;
        let c = build_ansatz(AnsatzKind::HeaLine, n, 1).unwrap();
        let target = make_dataset(DatasetKind::Ghz, n, 0).unwrap();
        let eval =
            LossEvaluator::new(LossSpec::Mmd(KernelSpec::gaussian(1.0).unwrap()), target).unwrap();
        let params = draw_parameters(&c, &mut rng_from_seed(4));
        let exact = parameter_shift_gradient(&eval, &c, &params, Shots::Exact, 0).unwrap();
        let runs = 400;
        let mut mean = vec![0.0; params.len()];
        for r in 0..runs {
            let g = parameter_shift_gradient(&eval, &c, &params, Shots::Finite(500), r).unwrap();
            for (m, v) in mean.iter_mut().zip(&g.gradient) {
                *m += v / runs as f64;
            }
        }
        for (m, e) in mean.iter().zip(&exact.gradient) {
            assert!((m - e).abs() < 0.01, "{m} vs {e}");
        }
    }
}
