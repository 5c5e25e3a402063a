use serde::{Deserialize, Serialize};

use super::{
    norm, parameter_shift_gradient, tracked_tvd, IterRecord, OptimizerSpec, TrainConfig,
    TrainRecord,
};
use crate::error::{invalid, Result};
use crate::losses::LossEvaluator;
use crate::rng::child_seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSpec {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr0: f64,
    /// Exponential decay rate of the learning rate per iteration.
    pub decay: f64,
    pub lr_min: f64,
}

impl Default for AdamSpec {
    fn default() -> Self {
        AdamSpec {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr0: 0.01,
            decay: 0.005,
            lr_min: 1e-5,
        }
    }
}

/// lr(t) = max(lr0 · e^{−decay·t}, lr_min).
pub fn learning_rate(spec: &AdamSpec, t: usize) -> f64 {
    (spec.lr0 * (-spec.decay * t as f64).exp()).max(spec.lr_min)
}

struct Adam {
    spec: AdamSpec,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(spec: AdamSpec, dim: usize) -> Self {
        Adam {
            spec,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.spec.beta1, self.spec.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.spec.epsilon);
        }
    }
}

/// Adam on parameter-shift gradients. The applied gradient at each step is the
/// mean of the last `k_batch` estimates, clipped elementwise when a threshold
/// is set. Row t logs the loss estimate and exact TVD at the parameters after
/// t updates; gradient estimates at iteration t use the seed child(seed, t+1).
pub fn adam_train(config: &TrainConfig) -> Result<TrainRecord> {
    let start = std::time::Instant::now();
    config.validate()?;
    let spec = match &config.optimizer {
        OptimizerSpec::Adam(a) => *a,
        _ => return invalid("adam_train needs an Adam optimizer spec"),
    };
    let circuit = config.circuit()?;
    let evaluator = LossEvaluator::new(config.loss.clone(), config.target.clone())?;
    let mut params = config.initial_params(&circuit);
    let mut adam = Adam::new(spec, params.len());
    let mut window: Vec<Vec<f64>> = Vec::new();
    let mut record = TrainRecord::new();

    let estimate = |params: &[f64], t: usize| {
        parameter_shift_gradient(
            &evaluator,
            &circuit,
            params,
            config.shots,
            child_seed(config.seed, t as u64 + 1),
        )
    };
    let mut current = if config.max_iterations == 0 {
        None
    } else {
        Some(estimate(&params, 0)?)
    };
    let initial_loss = match &current {
        Some(g) => g.loss,
        None => evaluator.evaluate(&circuit, &params, config.shots, child_seed(config.seed, 1))?,
    };
    record.push(IterRecord {
        iter: 0,
        loss_estimate: initial_loss,
        tvd_exact: tracked_tvd(&circuit, &params, &config.target)?,
        lr: learning_rate(&spec, 0),
        grad_norm: None,
    })?;

    for t in 1..=config.max_iterations {
        let est = current.take().expect("estimate computed for every step");
        window.push(est.gradient);
        if window.len() > config.k_batch {
            window.remove(0);
        }
        let mut grad = vec![0.0; params.len()];
        for g in &window {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b / window.len() as f64;
            }
        }
        if let Some(tau) = config.clip {
            for g in grad.iter_mut() {
                *g = g.clamp(-tau, tau);
            }
        }
        let lr = learning_rate(&spec, t - 1);
        adam.step(&mut params, &grad, lr);
        let loss = if t < config.max_iterations {
            let next = estimate(&params, t)?;
            let l = next.loss;
            current = Some(next);
            l
        } else {
            evaluator.evaluate(
                &circuit,
                &params,
                config.shots,
                child_seed(config.seed, t as u64 + 1),
            )?
        };
        record.push(IterRecord {
            iter: t,
            loss_estimate: loss,
            tvd_exact: tracked_tvd(&circuit, &params, &config.target)?,
            lr,
            grad_norm: Some(norm(&grad)),
        })?;
    }
    record.final_params = params;
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{make_dataset, DatasetKind};
    use crate::losses::{
        ExplicitLossKind, ExplicitLossSpec, KernelSpec, LossSpec, Shots, TRAINING_EPSILON,
    };
    use crate::simulator::AnsatzKind;
    use crate::training::Init;

    fn config(loss: LossSpec, n: usize, shots: Shots, iters: usize) -> TrainConfig {
        TrainConfig {
            ansatz: AnsatzKind::HeaLine,
            n_qubits: n,
            depth: 2,
            loss,
            target: make_dataset(DatasetKind::Ghz, n, 0).unwrap(),
            shots,
            k_batch: 1,
            clip: None,
            max_iterations: iters,
            seed: 5,
            init: Init::Uniform,
            optimizer: OptimizerSpec::Adam(AdamSpec::default()),
        }
    }

    #[test]
    fn schedule() {
        let s = AdamSpec::default();
        assert_eq!(learning_rate(&s, 0), 0.01);
        let lrs: Vec<f64> = (0..3000).map(|t| learning_rate(&s, t)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(lrs.iter().all(|&l| l >= 1e-5));
        assert_eq!(*lrs.last().unwrap(), 1e-5);
    }

    #[test]
    fn zero_iterations_logs_initial_point() {
        let r = adam_train(&config(
            LossSpec::Mmd(KernelSpec::gaussian(1.0).unwrap()),
            3,
            Shots::Exact,
            0,
        ))
        .unwrap();
        assert_eq!(r.rows.len(), 1);
        assert_eq!(r.rows[0].iter, 0);
        assert!(r.rows[0].grad_norm.is_none());
    }

    #[test]
    fn deterministic_and_clipped() {
        let mut c = config(
            LossSpec::Explicit(ExplicitLossSpec::new(ExplicitLossKind::Kld, 1e-6).unwrap()),
            3,
            Shots::Finite(100),
            15,
        );
        c.clip = Some(0.01);
        c.k_batch = 4;
        let a = adam_train(&c).unwrap();
        let b = adam_train(&c).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.final_params, b.final_params);
        let dim = a.final_params.len() as f64;
        for r in &a.rows[1..] {
            assert!(r.grad_norm.unwrap() <= 0.01 * dim.sqrt() + 1e-15);
        }
    }

    #[test]
    fn exact_mmd_training_learns_ghz() {
        let n = 4;
        let c = config(
            LossSpec::Mmd(KernelSpec::gaussian(n as f64 / 4.0).unwrap()),
            n,
            Shots::Exact,
            500,
        );
        let r = adam_train(&c).unwrap();
        let last = r.rows.last().unwrap().tvd_exact.unwrap();
        assert!(last < 0.15, "final TVD {last}");
        assert!(r.rows[0].tvd_exact.unwrap() > last);
    }

    #[test]
    fn sampled_kld_does_not_train_at_twelve_qubits() {
        let kld = ExplicitLossSpec::new(ExplicitLossKind::Kld, TRAINING_EPSILON).unwrap();
        let r = adam_train(&config(
            LossSpec::Explicit(kld),
            12,
            Shots::Finite(100),
            150,
        ))
        .unwrap();
        assert!(r.min_tvd().unwrap() >= 0.8, "{:?}", r.min_tvd());
    }
}
