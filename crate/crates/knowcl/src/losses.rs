//! Loss functions: cross-entropy, cosine similarity, the batch contrastive
//! loss, fixed-weight fusion, and the adaptive learnable fusion with its
//! regularizer.
//!
//! These are the reference implementations in f64. The training path keeps
//! its own f32 tensor kernels and is tested against the functions here.

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Learnable per-task fusion weights. Every weight must stay nonzero; the
/// regularizer's gradient pulls weights away from the blow-up at zero, and
/// the functions here guard it numerically.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub w: Vec<f64>,
}

impl LossWeights {
    /// Unit weights: the neutral start, reducing the adaptive fusion to
    /// halved sums plus a constant.
    pub fn ones(tasks: usize) -> Self {
        LossWeights {
            w: vec![1.0; tasks],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.is_empty() {
            return Err(Error::invalid("loss weights must not be empty"));
        }
        for (i, &w) in self.w.iter().enumerate() {
            if !w.is_finite() || w == 0.0 {
                return Err(Error::invalid(format!("loss weight {i} is {w}")));
            }
        }
        Ok(())
    }
}

/// Softmax temperature for the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(pub f64);

impl Default for Temperature {
    fn default() -> Self {
        Temperature(0.5)
    }
}

impl Temperature {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
        }
        Ok(Temperature(tau))
    }
}

/// Mean cross-entropy between softmaxed logits and one-hot targets.
/// `targets` are 1-based class labels.
pub fn cross_entropy(logits: ArrayView2<f64>, targets: &[u32]) -> Result<f64> {
    let (batch, num_classes) = logits.dim();
    if batch == 0 {
        return Err(Error::invalid("cross_entropy on an empty batch"));
    }
    if targets.len() != batch {
        return Err(Error::ShapeMismatch {
            expected: format!("{batch} targets"),
            actual: format!("{}", targets.len()),
        });
    }
    let mut total = 0.0f64;
    for (row, &target) in logits.outer_iter().zip(targets) {
        if target == 0 || target as usize > num_classes {
            return Err(Error::invalid(format!(
                "target {target} out of range 1..={num_classes}"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total -= row[target as usize - 1] - lse;
    }
    Ok(total / batch as f64)
}

/// Cosine similarity `zᵀẑ / (‖z‖·‖ẑ‖)`; rejects zero vectors.
pub fn cosine_sim(z: ArrayView1<f64>, zhat: ArrayView1<f64>) -> Result<f64> {
    if z.len() != zhat.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", z.len()),
            actual: format!("{}", zhat.len()),
        });
    }
    let nz = z.dot(&z).sqrt();
    let nh = zhat.dot(&zhat).sqrt();
    if nz < 1e-12 || nh < 1e-12 {
        return Err(Error::invalid("cosine similarity of a zero vector"));
    }
    Ok(z.dot(&zhat) / (nz * nh))
}

/// One pairwise term: the anchor against its cross-branch positive, with a
/// log-sum-exp denominator over all pooled samples except the anchor itself.
/// The anchor's own branch is always summed first so that swapping the two
/// branches reproduces the same floating-point value bit for bit.
fn pair_term(
    anchor: ArrayView1<f64>,
    anchor_idx: usize,
    own: ArrayView2<f64>,
    other: ArrayView2<f64>,
    positive: ArrayView1<f64>,
    tau: f64,
) -> Result<f64> {
    let mut scaled: Vec<f64> = Vec::with_capacity(own.nrows() + other.nrows());
    for (m, row) in own.outer_iter().enumerate() {
        if m == anchor_idx {
            continue;
        }
        scaled.push(cosine_sim(anchor, row)? / tau);
    }
    for row in other.outer_iter() {
        scaled.push(cosine_sim(anchor, row)? / tau);
    }
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    Ok(cosine_sim(anchor, positive)? / tau - lse)
}

/// Batch contrastive loss over two branches of `N` projections each: the
/// 2N projections are pooled, each anchor's positive is its cross-branch
/// partner, every other pooled sample is a negative, and the result is the
/// negated average over both directions of all positive pairs.
pub fn contrastive_loss(
    z: ArrayView2<f64>,
    zhat: ArrayView2<f64>,
    tau: Temperature,
) -> Result<f64> {
    let n = z.nrows();
    if n == 0 {
        return Err(Error::invalid("contrastive loss needs at least one pair"));
    }
    if zhat.nrows() != n || zhat.ncols() != z.ncols() {
        return Err(Error::ShapeMismatch {
            expected: format!("{}x{}", n, z.ncols()),
            actual: format!("{}x{}", zhat.nrows(), zhat.ncols()),
        });
    }
    for (i, row) in z.outer_iter().chain(zhat.outer_iter()).enumerate() {
        let norm = row.dot(&row).sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::invalid(format!(
                "projection {i} has norm {norm}, expected unit"
            )));
        }
    }
    let tau = tau.0;
    let mut total = 0.0f64;
    for i in 0..n {
        let term_a = pair_term(z.row(i), i, z, zhat, zhat.row(i), tau)?;
        let term_b = pair_term(zhat.row(i), i, zhat, z, z.row(i), tau)?;
        total += term_a + term_b;
    }
    Ok(-total / (2.0 * n as f64))
}

/// Fixed-weight fusion: the dot product of per-task losses and weights.
pub fn combined_fixed(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} weights", losses.len()),
            actual: format!("{}", weights.len()),
        });
    }
    Ok(losses.iter().zip(weights).map(|(l, w)| l * w).sum())
}

/// Adaptive fusion: `Σ_t L_t / (2 w_t²) + ln(1 + w_t²)`, where the log term
/// regularizes against the trivial solution of inflating every weight.
pub fn adaptive_fused(losses: &[f64], weights: &LossWeights) -> Result<f64> {
    weights.validate()?;
    if losses.len() != weights.w.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} weights", losses.len()),
            actual: format!("{}", weights.w.len()),
        });
    }
    let mut total = 0.0f64;
    for (&l, &w) in losses.iter().zip(&weights.w) {
        total += l / (2.0 * w * w) + (w * w).ln_1p();
    }
    Ok(total)
}

/// Analytic gradients of [`adaptive_fused`]:
/// `∂/∂L_t = 1/(2 w_t²)` and `∂/∂w_t = −L_t/w_t³ + 2 w_t/(1 + w_t²)`.
pub fn adaptive_fused_grads(
    losses: &[f64],
    weights: &LossWeights,
) -> Result<(Vec<f64>, Vec<f64>)> {
    weights.validate()?;
    if losses.len() != weights.w.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} weights", losses.len()),
            actual: format!("{}", weights.w.len()),
        });
    }
    let mut grad_l = Vec::with_capacity(losses.len());
    let mut grad_w = Vec::with_capacity(losses.len());
    for (&l, &w) in losses.iter().zip(&weights.w) {
        grad_l.push(1.0 / (2.0 * w * w));
        grad_w.push(-l / (w * w * w) + 2.0 * w / (1.0 + w * w));
    }
    Ok((grad_l, grad_w))
}
