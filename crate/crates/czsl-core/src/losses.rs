//! The training objectives: adversarial cosine loss, the three softmax
//! classification losses over cosine scores, and the two alignment losses
//! (hinge band between class means, projection-to-mean distance).
//!
//! Every loss is built on a gradient tape and returns the node for its
//! scalar value; callers combine them with `Tape::weighted_sum` and run
//! backward on whichever total they are optimizing. Which inputs are
//! parameters and which are constants is the caller's choice, made when
//! the inputs were put on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cosine_matrix, Matrix, Tape, Var};

/// Floor/ceiling for the affine map of cosine scores into log domain.
pub const GAN_CLAMP: f64 = 1e-7;

/// Term weights for the two totals. All four default to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 1.0, lambda4: 1.0 }
    }
}

/// Semantic-alignment knobs: how many nearest classes count as neighbors and
/// the half-width of the allowed similarity band around the attribute cosine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub n_c: usize,
    pub epsilon: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig { n_c: 3, epsilon: 0.1 }
    }
}

/// Scalar values of the discriminator-side terms, for totals and reporting.
#[derive(Clone, Copy, Debug, Default)]
pub struct DLossParts {
    pub gan: f64,
    pub rcl: f64,
    pub snl: f64,
}

/// Scalar values of the generator-side terms, for totals and reporting.
#[derive(Clone, Copy, Debug, Default)]
pub struct GLossParts {
    pub gan: f64,
    pub pcl: f64,
    pub sal: f64,
    pub nuclear: f64,
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric(format!("{name} is not finite")))
    }
}

/// lambda1 * L_GAN + lambda2 * L_rcl + lambda3 * L_snl.
pub fn total_d_loss(parts: &DLossParts, w: &LossWeights) -> Result<f64> {
    check_finite("d_gan", parts.gan)?;
    check_finite("rcl", parts.rcl)?;
    check_finite("snl", parts.snl)?;
    Ok(w.lambda1 * parts.gan + w.lambda2 * parts.rcl + w.lambda3 * parts.snl)
}

/// lambda1 * L_GAN + lambda2 * L_pcl + lambda4 * (L_sal + L_nuclear).
pub fn total_g_loss(parts: &GLossParts, w: &LossWeights) -> Result<f64> {
    check_finite("g_gan", parts.gan)?;
    check_finite("pcl", parts.pcl)?;
    check_finite("sal", parts.sal)?;
    check_finite("nuclear", parts.nuclear)?;
    Ok(w.lambda1 * parts.gan + w.lambda2 * parts.pcl + w.lambda4 * (parts.sal + parts.nuclear))
}

/// Maps cosine scores through m(s) = (1+s)/2, clamped away from {0, 1}, and
/// returns mean log m(s).
fn mean_log_mapped(tape: &mut Tape, s: Var) -> Result<Var> {
    let m = tape.affine(s, 0.5, 0.5);
    let m = tape.clamp(m, GAN_CLAMP, 1.0 - GAN_CLAMP);
    let l = tape.ln(m)?;
    tape.mean_all(l)
}

/// Same for mean log (1 - m(s)).
fn mean_log_one_minus_mapped(tape: &mut Tape, s: Var) -> Result<Var> {
    let m = tape.affine(s, 0.5, 0.5);
    let m = tape.clamp(m, GAN_CLAMP, 1.0 - GAN_CLAMP);
    let one_minus = tape.affine(m, -1.0, 1.0);
    let l = tape.ln(one_minus)?;
    tape.mean_all(l)
}

/// Adversarial losses from cosine similarity between features and the
/// projection of each row's own class. `real_proj` / `fake_proj` are
/// row-aligned with the feature blocks. Returns (d_loss, g_loss); the
/// generator side is the non-saturating form -mean log m(s_fake).
pub fn gan_loss(
    tape: &mut Tape,
    real_x: Var,
    real_proj: Var,
    fake_x: Var,
    fake_proj: Var,
) -> Result<(Var, Var)> {
    if tape.value(real_x).rows() == 0 || tape.value(fake_x).rows() == 0 {
        return Err(Error::contract("adversarial loss over an empty batch"));
    }
    let s_real = tape.rowwise_cosine(real_x, real_proj)?;
    let s_fake = tape.rowwise_cosine(fake_x, fake_proj)?;
    let log_real = mean_log_mapped(tape, s_real)?;
    let log_not_fake = mean_log_one_minus_mapped(tape, s_fake)?;
    let log_fake = mean_log_mapped(tape, s_fake)?;
    let d = tape.weighted_sum(&[(log_real, -1.0), (log_not_fake, -1.0)])?;
    let g = tape.weighted_sum(&[(log_fake, -1.0)])?;
    Ok((d, g))
}

/// Mean softmax cross-entropy over temperature-scaled cosine scores between
/// features and candidate projections. `labels` index projection rows.
pub fn classification_loss(
    tape: &mut Tape,
    features: Var,
    labels: &[usize],
    projections: Var,
    temperature: f64,
) -> Result<Var> {
    let c = tape.value(projections).rows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::index(format!("label {bad} with {c} candidate projections")));
    }
    let scores = tape.cosine_matrix(features, projections)?;
    tape.softmax_xent(scores, labels, temperature)
}

/// Per-class mean feature rows, one row per entry of `classes` in the given
/// order. Every listed class must have at least one feature row.
pub fn class_means(features: &Matrix, labels: &[usize], classes: &[usize]) -> Result<Matrix> {
    if labels.len() != features.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.rows()
        )));
    }
    let mut out = Matrix::zeros(classes.len(), features.cols());
    for (row, &class) in classes.iter().enumerate() {
        let mut count = 0usize;
        for (i, &l) in labels.iter().enumerate() {
            if l == class {
                for (acc, v) in out.row_mut(row).iter_mut().zip(features.row(i)) {
                    *acc += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::contract(format!("class {class} has no feature rows")));
        }
        let inv = 1.0 / count as f64;
        for v in out.row_mut(row) {
            *v *= inv;
        }
    }
    Ok(out)
}

/// For each class, the `n_c` most attribute-similar other classes, by cosine,
/// descending; ties go to the lower index. Requires 1 <= n_c < class count.
pub fn semantic_neighbors(attributes: &Matrix, n_c: usize) -> Result<Vec<Vec<usize>>> {
    let n = attributes.rows();
    if n_c == 0 || n_c >= n {
        return Err(Error::contract(format!(
            "{n_c} neighbors among {n} classes; need 1 <= n_c < classes"
        )));
    }
    let sims = cosine_matrix(attributes, attributes)?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        // stable sort by descending similarity keeps ties in index order
        order.sort_by(|&a, &b| sims.get(i, b).partial_cmp(&sims.get(i, a)).unwrap());
        order.truncate(n_c);
        out.push(order);
    }
    Ok(out)
}

/// Hinge-band alignment between generated class means and reference means.
///
/// For every class i and each of its semantic neighbors j, the cosine between
/// the generated mean of i and the reference mean of j must stay inside
/// [tau_ij - eps, tau_ij + eps], where tau is the attribute cosine; excess on
/// either side is squared, summed, and divided by the class count. Reference
/// means are constants; gradients flow only through `gen_means`.
pub fn semantic_alignment_loss(
    tape: &mut Tape,
    gen_means: Var,
    ref_means: &Matrix,
    attributes: &Matrix,
    neighbors: &[Vec<usize>],
    epsilon: f64,
) -> Result<Var> {
    let n = tape.value(gen_means).rows();
    if ref_means.rows() != n || attributes.rows() != n || neighbors.len() != n {
        return Err(Error::contract(format!(
            "alignment needs matching class counts: {} generated means, {} reference means, {} attribute rows, {} neighbor lists",
            n,
            ref_means.rows(),
            attributes.rows(),
            neighbors.len()
        )));
    }
    let tau = cosine_matrix(attributes, attributes)?;
    let refs = tape.constant(ref_means.clone());
    let sims = tape.cosine_matrix(gen_means, refs)?;
    tape.band_hinge_sq(sims, &tau, epsilon, neighbors)
}

/// Mean squared distance between each class's identifier projection and its
/// real-feature mean; differentiable through `projections`.
pub fn nuclear_loss(tape: &mut Tape, projections: Var, real_means: &Matrix) -> Result<Var> {
    if real_means.rows() == 0 {
        return Err(Error::contract("projection alignment over zero classes"));
    }
    tape.mean_sq_row_dist(projections, real_means)
}
