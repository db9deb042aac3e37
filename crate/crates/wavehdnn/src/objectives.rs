//! Training objectives: BPR ranking loss, cross-view layer-wise InfoNCE,
//! and their weighted combination.
//!
//! BPR is computed as `softplus(neg − pos)` through a stable row-wise
//! logsumexp; InfoNCE contrasts the same entity's per-layer embeddings
//! across the two channels with eps-guarded cosine similarities. Both use
//! means rather than sums so magnitudes stay comparable across batch sizes.

use crate::diffcore::{Tape, Var};
use crate::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Epsilon guarding cosine-similarity norms.
pub const COSINE_EPS: f64 = 1e-12;

/// Denominator candidate set for the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContrastiveNegatives {
    /// In-batch ids only (default).
    Batch,
    /// Every entity, matching the loss's written form.
    Full,
}

impl std::str::FromStr for ContrastiveNegatives {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(ContrastiveNegatives::Batch),
            "full" => Ok(ContrastiveNegatives::Full),
            other => Err(Error::Config(format!(
                "contrastive_negatives must be `batch` or `full`, got `{other}`"
            ))),
        }
    }
}

/// Loss weighting knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cl: f64,
    pub lambda_reg: f64,
    pub tau: f64,
}

/// Per-component loss values for one step or epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub contrastive_user: f64,
    pub contrastive_item: f64,
    pub reg: f64,
    pub total: f64,
    pub weights: LossWeights,
}

/// Mean over triples of `−log σ(pos − neg)`, computed as
/// `logsumexp([0, neg − pos])` per row for stability.
pub fn bpr_loss(tape: &Tape, pos_scores: Var, neg_scores: Var) -> Result<Var> {
    let (rows, cols) = tape.shape(pos_scores);
    if tape.shape(neg_scores) != (rows, cols) || cols != 1 {
        return Err(Error::ShapeMismatch {
            op: "bpr_loss",
            expected: format!("{rows}x1 and {rows}x1"),
            got: format!(
                "{:?} and {:?}",
                tape.shape(pos_scores),
                tape.shape(neg_scores)
            ),
        });
    }
    if rows == 0 {
        return Err(Error::ContractViolation("bpr_loss: empty batch".into()));
    }
    let margin = tape.sub(pos_scores, neg_scores)?;
    let neg_margin = tape.scale(margin, -1.0)?;
    let zeros = tape.zeros(rows, 1);
    let stacked = tape.concat_columns(zeros, neg_margin)?;
    let softplus = tape.logsumexp_rows(stacked)?;
    tape.mean_over_rows(softplus)
}

/// Cross-view InfoNCE over aligned per-layer snapshots.
///
/// For each layer and batch entity, the numerator pairs the entity with
/// itself across channels; the denominator runs over the candidate set
/// (batch ids, or every entity in `Full` mode). Returns the mean over
/// (entity, layer) terms.
pub fn infonce_cross_view(
    tape: &Tape,
    z_layers: &[Var],
    g_layers: &[Var],
    batch_ids: &[usize],
    tau: f64,
    negatives: ContrastiveNegatives,
) -> Result<Var> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if batch_ids.is_empty() {
        return Err(Error::ContractViolation("infonce: empty batch".into()));
    }
    {
        let mut sorted = batch_ids.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ContractViolation(
                "infonce: duplicate ids in batch".into(),
            ));
        }
    }
    if z_layers.len() != g_layers.len() || z_layers.is_empty() {
        return Err(Error::ContractViolation(format!(
            "infonce: need equally many aligned snapshots from both channels, got {} and {}",
            z_layers.len(),
            g_layers.len()
        )));
    }

    let batch = batch_ids.len();
    let mut total: Option<Var> = None;
    for (&z, &g) in z_layers.iter().zip(g_layers) {
        let zb = tape.gather_rows(z, batch_ids)?;
        let zn = tape.row_l2_normalize(zb, COSINE_EPS)?;
        let (gn, positive_cols) = match negatives {
            ContrastiveNegatives::Batch => {
                let gb = tape.gather_rows(g, batch_ids)?;
                (
                    tape.row_l2_normalize(gb, COSINE_EPS)?,
                    (0..batch).collect::<Vec<usize>>(),
                )
            }
            ContrastiveNegatives::Full => {
                (tape.row_l2_normalize(g, COSINE_EPS)?, batch_ids.to_vec())
            }
        };
        let candidates = tape.shape(gn).0;
        let sims = tape.matmul(zn, tape.transpose(gn)?)?;
        let scaled = tape.scale(sims, 1.0 / tau)?;
        let lse = tape.logsumexp_rows(scaled)?;

        // Positive logits extracted through a constant one-hot mask.
        let mut mask = Array2::zeros((batch, candidates));
        for (row, &col) in positive_cols.iter().enumerate() {
            mask[(row, col)] = 1.0;
        }
        let mask = tape.constant(mask);
        let masked = tape.mul(scaled, mask)?;
        let ones = tape.ones(candidates, 1);
        let positives = tape.matmul(masked, ones)?;

        let per_row = tape.sub(lse, positives)?;
        let layer_sum = tape.sum_all(per_row)?;
        total = Some(match total {
            None => layer_sum,
            Some(acc) => tape.add(acc, layer_sum)?,
        });
    }
    tape.scale(
        total.expect("at least one layer"),
        1.0 / (batch * z_layers.len()) as f64,
    )
}

/// Squared Frobenius norm of the two embedding tables.
pub fn embedding_reg(tape: &Tape, user_embed: Var, item_embed: Var) -> Result<Var> {
    let us = tape.mul(user_embed, user_embed)?;
    let is = tape.mul(item_embed, item_embed)?;
    let a = tape.sum_all(us)?;
    let b = tape.sum_all(is)?;
    tape.add(a, b)
}

/// Combine components into the training objective and a value breakdown.
///
/// `total = bpr + λ_cl·(cl_u + cl_i) + λ_reg·reg`; any non-finite component
/// aborts with the component named.
pub fn total_loss(
    tape: &Tape,
    bpr: Var,
    contrastive: Option<(Var, Var)>,
    reg: Var,
    weights: LossWeights,
) -> Result<(Var, LossBreakdown)> {
    if weights.lambda_cl < 0.0 || weights.lambda_reg < 0.0 {
        return Err(Error::Config(
            "loss weights must be non-negative".into(),
        ));
    }
    let bpr_v = tape.scalar_value(bpr)?;
    let reg_v = tape.scalar_value(reg)?;
    let (cl_u_v, cl_i_v) = match contrastive {
        Some((u, i)) => (tape.scalar_value(u)?, tape.scalar_value(i)?),
        None => (0.0, 0.0),
    };
    for (name, v) in [
        ("bpr", bpr_v),
        ("contrastive_user", cl_u_v),
        ("contrastive_item", cl_i_v),
        ("reg", reg_v),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss component {name} = {v}")));
        }
    }

    let mut total = bpr;
    if let Some((cl_u, cl_i)) = contrastive {
        if weights.lambda_cl > 0.0 {
            let cl = tape.add(cl_u, cl_i)?;
            let cl = tape.scale(cl, weights.lambda_cl)?;
            total = tape.add(total, cl)?;
        }
    }
    if weights.lambda_reg > 0.0 {
        let r = tape.scale(reg, weights.lambda_reg)?;
        total = tape.add(total, r)?;
    }
    let total_v = tape.scalar_value(total)?;
    if !total_v.is_finite() {
        return Err(Error::NonFinite(format!("loss component total = {total_v}")));
    }
    Ok((
        total,
        LossBreakdown {
            bpr: bpr_v,
            contrastive_user: cl_u_v,
            contrastive_item: cl_i_v,
            reg: reg_v,
            total: total_v,
            weights,
        },
    ))
}
