//! Pairwise explicit losses: functions of the target and model probabilities
//! of each bitstring, summed over the union of supports.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::distributions::Distribution;
use crate::error::{invalid, Error, Result};

/// Clip value used when training with sampled probabilities.
pub const TRAINING_EPSILON: f64 = 1e-6;
/// Clip value used by the concentration experiments.
pub const CONCENTRATION_EPSILON: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExplicitLossKind {
    /// Σ p ln(p/q).
    Kld,
    /// Σ q ln(q/p).
    ReverseKld,
    /// Σ p ln(p/(p+q)) + q ln(q/(p+q)); equals −2 ln 2 when p = q.
    JsdPaper,
    /// ½ Σ p ln(2p/(p+q)) + q ln(2q/(p+q)); the usual Jensen–Shannon divergence in nats.
    JsdStandard,
    /// Σ |p − q|, in [0, 2].
    Tvd,
    /// 1 − Σ √(pq).
    ClassicalFidelity,
    /// (1/(α−1)) ln Σ p^α q^{1−α}.
    Renyi { alpha: f64 },
}

impl ExplicitLossKind {
    pub fn name(&self) -> String {
        match self {
            ExplicitLossKind::Kld => "kld".into(),
            ExplicitLossKind::ReverseKld => "reverse_kld".into(),
            ExplicitLossKind::JsdPaper => "jsd_paper".into(),
            ExplicitLossKind::JsdStandard => "jsd_standard".into(),
            ExplicitLossKind::Tvd => "tvd".into(),
            ExplicitLossKind::ClassicalFidelity => "classical_fidelity".into(),
            ExplicitLossKind::Renyi { alpha } => format!("renyi_{alpha}"),
        }
    }
}

impl std::str::FromStr for ExplicitLossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "kld" | "kl" => ExplicitLossKind::Kld,
            "reverse_kld" | "rev_kld" => ExplicitLossKind::ReverseKld,
            "jsd" | "jsd_paper" => ExplicitLossKind::JsdPaper,
            "jsd_standard" => ExplicitLossKind::JsdStandard,
            "tvd" => ExplicitLossKind::Tvd,
            "cf" | "classical_fidelity" => ExplicitLossKind::ClassicalFidelity,
            other => match other.strip_prefix("renyi_") {
                Some(a) => ExplicitLossKind::Renyi {
                    alpha: a
                        .parse()
                        .map_err(|_| Error::Parse(format!("bad Renyi order in '{s}'")))?,
                },
                None => return Err(Error::Parse(format!("unknown explicit loss '{s}'"))),
            },
        })
    }
}

/// An explicit loss together with the value substituted for zero
/// probabilities inside logarithms and ratios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitLossSpec {
    pub kind: ExplicitLossKind,
    pub clip_epsilon: f64,
}

impl ExplicitLossSpec {
    pub fn new(kind: ExplicitLossKind, clip_epsilon: f64) -> Result<Self> {
        if !(clip_epsilon > 0.0) {
            return invalid("clip epsilon must be positive");
        }
        if let ExplicitLossKind::Renyi { alpha } = kind {
            if !(alpha > 0.0) || alpha == 1.0 {
                return invalid("Renyi order must be positive and different from 1");
            }
        }
        Ok(ExplicitLossSpec { kind, clip_epsilon })
    }

    fn offset(&self) -> f64 {
        match self.kind {
            ExplicitLossKind::ClassicalFidelity => 1.0,
            _ => 0.0,
        }
    }

    fn clip(&self, v: f64) -> f64 {
        v.max(self.clip_epsilon)
    }

    /// Contribution of one bitstring with target probability `p` and model probability `q`.
    fn term(&self, p: f64, q: f64) -> f64 {
        match self.kind {
            ExplicitLossKind::Kld => xlogy(p, p / self.clip(q)),
            ExplicitLossKind::ReverseKld => xlogy(q, q / self.clip(p)),
            ExplicitLossKind::JsdPaper => jsd_paper_term(p, q),
            ExplicitLossKind::JsdStandard => 0.5 * jsd_paper_term(p, q) + 0.5 * LN_2 * (p + q),
            ExplicitLossKind::Tvd => (p - q).abs(),
            ExplicitLossKind::ClassicalFidelity => -(p * q).sqrt(),
            ExplicitLossKind::Renyi { alpha } => {
                if p == 0.0 {
                    0.0
                } else {
                    p.powf(alpha) * self.clip(q).powf(1.0 - alpha)
                }
            }
        }
    }

    fn outer(&self, s: f64) -> f64 {
        match self.kind {
            ExplicitLossKind::Renyi { alpha } => s.ln() / (alpha - 1.0),
            _ => s,
        }
    }

    /// ∂L/∂q(x) for one bitstring; `inner` is the summed value before the outer map.
    fn term_dq(&self, p: f64, q: f64, inner: f64) -> f64 {
        let eps = self.clip_epsilon;
        match self.kind {
            ExplicitLossKind::Kld => {
                if p == 0.0 || q < eps {
                    0.0
                } else {
                    -p / q
                }
            }
            ExplicitLossKind::ReverseKld => (self.clip(q) / self.clip(p)).ln() + 1.0,
            ExplicitLossKind::JsdPaper => {
                let qc = self.clip(q);
                (qc / (p + qc)).ln()
            }
            ExplicitLossKind::JsdStandard => {
                let qc = self.clip(q);
                0.5 * (2.0 * qc / (p + qc)).ln()
            }
            ExplicitLossKind::Tvd => {
                if q > p {
                    1.0
                } else if q < p {
                    -1.0
                } else {
                    0.0
                }
            }
            ExplicitLossKind::ClassicalFidelity => -0.5 * p.sqrt() / self.clip(q).sqrt(),
            ExplicitLossKind::Renyi { alpha } => {
                if p == 0.0 || q < eps {
                    0.0
                } else {
                    -(p / q).powf(alpha) / inner
                }
            }
        }
    }

    fn evaluate(&self, pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
        self.outer(self.offset() + pairs.map(|(p, q)| self.term(p, q)).sum::<f64>())
    }

    fn inner_sum(&self, pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
        self.offset() + pairs.map(|(p, q)| self.term(p, q)).sum::<f64>()
    }
}

fn xlogy(x: f64, ratio: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * ratio.ln()
    }
}

fn jsd_paper_term(p: f64, q: f64) -> f64 {
    let m = p + q;
    if m == 0.0 {
        return 0.0;
    }
    xlogy(p, p / m) + xlogy(q, q / m)
}

fn check_width(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.n_bits() != q.n_bits() {
        return Err(Error::LengthMismatch {
            expected: p.n_bits(),
            got: q.n_bits(),
        });
    }
    Ok(())
}

/// Target/model probability pairs over the union of both supports.
fn union_pairs<'a>(
    p: &'a Distribution,
    q: &'a Distribution,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let on_p = p.iter().map(|(x, pv)| (pv, q.probability(x)));
    let only_q = q
        .iter()
        .filter(|(x, _)| p.probability(x) == 0.0)
        .map(|(_, qv)| (0.0, qv));
    on_p.chain(only_q)
}

/// Loss between target `p` and model `q`.
pub fn explicit_loss(spec: &ExplicitLossSpec, p: &Distribution, q: &Distribution) -> Result<f64> {
    check_width(p, q)?;
    Ok(spec.evaluate(union_pairs(p, q)))
}

/// Same loss on dense probability vectors of equal length.
pub fn explicit_loss_dense(spec: &ExplicitLossSpec, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(spec.evaluate(p.iter().copied().zip(q.iter().copied())))
}

/// ∂L/∂q(x) for every entry of dense vectors.
pub fn explicit_loss_dq_dense(spec: &ExplicitLossSpec, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let inner = spec.inner_sum(p.iter().copied().zip(q.iter().copied()));
    Ok(p.iter()
        .zip(q)
        .map(|(&pv, &qv)| spec.term_dq(pv, qv, inner))
        .collect())
}

/// Derivative helper for sparse distributions: evaluates ∂L/∂q at chosen bitstrings.
pub struct SparseDerivative<'a> {
    spec: ExplicitLossSpec,
    p: &'a Distribution,
    q: &'a Distribution,
    inner: f64,
}

impl<'a> SparseDerivative<'a> {
    pub fn new(spec: &ExplicitLossSpec, p: &'a Distribution, q: &'a Distribution) -> Result<Self> {
        check_width(p, q)?;
        Ok(SparseDerivative {
            spec: *spec,
            p,
            q,
            inner: spec.inner_sum(union_pairs(p, q)),
        })
    }

    pub fn at(&self, x: &crate::bits::BitString) -> f64 {
        self.spec
            .term_dq(self.p.probability(x), self.q.probability(x), self.inner)
    }
}

/// Value every sampled loss takes when the target sample set and the model
/// sample set share no bitstring: Σ_{x∈P} f(p̃,0) + Σ_{x∈Q} f(0,q̃) (plus any constant).
pub fn loss_fixed_point(
    spec: &ExplicitLossSpec,
    p: &Distribution,
    q: &Distribution,
) -> Result<f64> {
    check_width(p, q)?;
    if p.support().any(|x| q.probability(x) > 0.0) {
        return invalid("supports overlap; the fixed point only applies to disjoint sample sets");
    }
    let pairs = p
        .iter()
        .map(|(_, pv)| (pv, 0.0))
        .chain(q.iter().map(|(_, qv)| (0.0, qv)));
    Ok(spec.evaluate(pairs))
}
