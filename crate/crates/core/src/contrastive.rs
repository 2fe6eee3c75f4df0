//! InfoNCE over cosine similarities with diagonal positives.
//!
//! For a batch of `N` anchor rows and `N` candidate rows (both unit-norm),
//! the score of candidate `j` for anchor `i` is `exp(⟨aᵢ, bⱼ⟩ / τ)` and the
//! positive for anchor `i` is candidate `i`. The loss is the mean negative
//! log-probability of the positive under the row softmax.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, matmul, matmul_transpose_a, matmul_transpose_b, softmax_rows, Matrix};

pub const DEFAULT_TAU: f64 = 0.07;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::param(format!("temperature must be positive, got {tau}")));
        }
        Ok(Self(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Self(DEFAULT_TAU)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub tau: f64,
    /// Average both retrieval directions; otherwise anchors→candidates only.
    pub symmetric: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            symmetric: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn temperature(&self) -> Result<Temperature> {
        Temperature::new(self.tau)
    }
}

/// Paired embeddings; row `i` of `anchors` is positive with row `i` of
/// `candidates`.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    anchors: Matrix,
    candidates: Matrix,
}

impl ContrastiveBatch {
    pub fn new(anchors: Matrix, candidates: Matrix) -> Result<Self> {
        if anchors.shape() != candidates.shape() {
            return Err(Error::Shape {
                op: "contrastive batch",
                left: anchors.shape(),
                right: candidates.shape(),
            });
        }
        if anchors.rows() < 2 {
            return Err(Error::param("contrastive batch needs at least 2 pairs"));
        }
        for (side, m) in [("anchor", &anchors), ("candidate", &candidates)] {
            if let Some(r) = m.row_norms().iter().position(|n| (n - 1.0).abs() > 1e-6) {
                return Err(Error::param(format!("{side} row {r} is not unit-norm")));
            }
        }
        Ok(Self { anchors, candidates })
    }

    pub fn anchors(&self) -> &Matrix {
        &self.anchors
    }

    pub fn candidates(&self) -> &Matrix {
        &self.candidates
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// `(i, j) ↦ ⟨anchorᵢ, candidateⱼ⟩ / τ`.
pub fn logits(batch: &ContrastiveBatch, temp: Temperature) -> Result<Matrix> {
    scaled_similarity(&batch.anchors, &batch.candidates, temp)
}

fn scaled_similarity(a: &Matrix, b: &Matrix, temp: Temperature) -> Result<Matrix> {
    matmul_transpose_b(a, b)?.scale(1.0 / temp.0)
}

/// Mean over rows of `−log softmax(row)[i]`.
pub fn infonce(logits: &Matrix) -> Result<f64> {
    let (n, m) = logits.shape();
    if n != m {
        return Err(Error::Shape {
            op: "infonce",
            left: logits.shape(),
            right: (n, n),
        });
    }
    if n < 2 {
        return Err(Error::param("infonce needs N >= 2"));
    }
    let total: f64 = (0..n).map(|i| log_sum_exp(logits.row(i)) - logits.get(i, i)).sum();
    Ok(total / n as f64)
}

fn check_pair(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "symmetric_infonce",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Average of the a→b and b→a losses.
pub fn symmetric_infonce(a: &Matrix, b: &Matrix, temp: Temperature) -> Result<f64> {
    check_pair(a, b)?;
    let s = scaled_similarity(a, b, temp)?;
    Ok(0.5 * (infonce(&s)? + infonce(&s.transpose())?))
}

/// Loss under `cfg`: symmetric, or the single a→b direction.
pub fn contrastive_loss(a: &Matrix, b: &Matrix, cfg: &ContrastiveConfig) -> Result<f64> {
    let temp = cfg.temperature()?;
    if cfg.symmetric {
        symmetric_infonce(a, b, temp)
    } else {
        check_pair(a, b)?;
        infonce(&scaled_similarity(a, b, temp)?)
    }
}

/// Gradients of [`symmetric_infonce`] with respect to the (unit-norm)
/// embeddings `a` and `b`.
pub fn infonce_grad(a: &Matrix, b: &Matrix, temp: Temperature) -> Result<(Matrix, Matrix)> {
    loss_and_grad(
        a,
        b,
        &ContrastiveConfig {
            tau: temp.0,
            symmetric: true,
        },
    )
    .map(|(_, ga, gb)| (ga, gb))
}

/// Loss together with its gradients with respect to `a` and `b`.
pub fn loss_and_grad(a: &Matrix, b: &Matrix, cfg: &ContrastiveConfig) -> Result<(f64, Matrix, Matrix)> {
    check_pair(a, b)?;
    let temp = cfg.temperature()?;
    let n = a.rows();
    if n < 2 {
        return Err(Error::param("infonce needs N >= 2"));
    }
    let s = scaled_similarity(a, b, temp)?;
    let nf = n as f64;

    // dL/dS for the row direction is (softmax(S) − I)/N.
    let mut p_row = softmax_rows(&s);
    for i in 0..n {
        p_row.set(i, i, p_row.get(i, i) - 1.0);
    }
    let (loss, d_s) = if cfg.symmetric {
        let st = s.transpose();
        let mut p_col = softmax_rows(&st);
        for i in 0..n {
            p_col.set(i, i, p_col.get(i, i) - 1.0);
        }
        let loss = 0.5 * (infonce(&s)? + infonce(&st)?);
        let d = p_row.add(&p_col.transpose())?.scale(0.5 / nf)?;
        (loss, d)
    } else {
        (infonce(&s)?, p_row.scale(1.0 / nf)?)
    };

    let inv_tau = 1.0 / temp.0;
    let grad_a = matmul(&d_s, b)?.scale(inv_tau)?;
    let grad_b = matmul_transpose_a(&d_s, a)?.scale(inv_tau)?;
    Ok((loss, grad_a, grad_b))
}
