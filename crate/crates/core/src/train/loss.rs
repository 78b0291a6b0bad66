//! Masked next-token negative log-likelihood and its gradient.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::{log_sum_exp, Grads, Network};
use crate::seqfmt::EncodedSequence;

fn check_shapes(logits: &Mat, targets: &[usize], mask: &[bool]) -> Result<()> {
    if targets.len() != logits.rows || mask.len() != logits.rows {
        return Err(Error::Shape(format!(
            "{} logit rows, {} targets, {} mask entries",
            logits.rows,
            targets.len(),
            mask.len()
        )));
    }
    if let Some((i, &t)) = targets
        .iter()
        .enumerate()
        .find(|&(i, &t)| mask[i] && t >= logits.cols)
    {
        return Err(Error::Shape(format!(
            "target column {t} at row {i} exceeds {} columns",
            logits.cols
        )));
    }
    Ok(())
}

/// `-log softmax(row)[target]`.
pub fn position_nll(row: &[f64], target: usize) -> f64 {
    log_sum_exp(row) - row[target]
}

/// Mean of [`position_nll`] over rows with `mask[i]`. `targets[i]` is the
/// logit column of the token following row `i`.
pub fn masked_nll(logits: &Mat, targets: &[usize], mask: &[bool]) -> Result<f64> {
    check_shapes(logits, targets, mask)?;
    let (sum, count) = (0..logits.rows)
        .filter(|&i| mask[i])
        .fold((0.0, 0usize), |(s, c), i| (s + position_nll(logits.row(i), targets[i]), c + 1));
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(sum / count as f64)
}

/// Sum of masked position losses, with `d(sum / denom)/d logits` written into a
/// fresh matrix.
pub fn masked_nll_grad(logits: &Mat, targets: &[usize], mask: &[bool], denom: f64) -> Result<(f64, Mat)> {
    check_shapes(logits, targets, mask)?;
    let mut d = Mat::zeros(logits.rows, logits.cols);
    let mut sum = 0.0;
    for i in (0..logits.rows).filter(|&i| mask[i]) {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        sum += lse - row[targets[i]];
        let out = d.row_mut(i);
        for (o, x) in out.iter_mut().zip(row) {
            *o = (x - lse).exp() / denom;
        }
        out[targets[i]] -= 1.0 / denom;
    }
    Ok((sum, d))
}

/// Which next-token predictions a phase scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossScope {
    /// Every position that has a successor.
    AllPositions,
    /// Positions whose successor is flagged in the sequence's loss mask.
    LossMask,
}

/// Target columns and mask for the rows of `seq`'s logits.
pub fn targets_for(net: &Network, seq: &EncodedSequence, scope: LossScope) -> Result<(Vec<usize>, Vec<bool>)> {
    let t = seq.ids.len();
    let mut targets = vec![0; t];
    let mut mask = vec![false; t];
    for i in 0..t.saturating_sub(1) {
        let next = seq.ids[i + 1];
        let scored = match scope {
            LossScope::AllPositions => true,
            LossScope::LossMask => seq.loss_mask[i + 1] != 0,
        };
        if scored {
            targets[i] = net.column_of(next).ok_or_else(|| Error::InvalidToken {
                id: next,
                size: net.columns().len(),
            })?;
            mask[i] = true;
        }
    }
    Ok((targets, mask))
}

pub fn scored_count(seq: &EncodedSequence, scope: LossScope) -> usize {
    match scope {
        LossScope::AllPositions => seq.ids.len().saturating_sub(1),
        LossScope::LossMask => seq.loss_mask.iter().skip(1).filter(|&&m| m != 0).count(),
    }
}

/// Mean loss of one sequence without gradients.
pub fn sequence_loss(net: &Network, seq: &EncodedSequence, scope: LossScope) -> Result<f64> {
    let logits = net.forward_ids(&seq.ids)?;
    let (targets, mask) = targets_for(net, seq, scope)?;
    masked_nll(&logits, &targets, &mask)
}

/// Forward and backward for one sequence; adds `d(loss_sum / denom)` into
/// `grads` and returns the unnormalized loss sum.
pub fn accumulate_sequence(
    net: &Network,
    seq: &EncodedSequence,
    scope: LossScope,
    denom: f64,
    grads: &mut Grads,
) -> Result<f64> {
    let (logits, trace) = net.forward_traced(&seq.ids)?;
    let (targets, mask) = targets_for(net, seq, scope)?;
    let (sum, dlogits) = masked_nll_grad(&logits, &targets, &mask, denom)?;
    net.backward(&trace, &dlogits, grads)?;
    Ok(sum)
}
