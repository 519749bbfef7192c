use std::sync::Arc;

use crate::error::Result;
use crate::tensor::{SparseRows, Tape, Var};

/// `act(P H W + b)` with a precomputed propagation matrix `P`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    propagation: Arc<SparseRows>,
    w: Var,
    b: Option<Var>,
    relu: bool,
) -> Result<Var> {
    let mixed = tape.sparse_mix(h, propagation)?;
    let mut out = tape.matmul(mixed, w)?;
    if let Some(b) = b {
        out = tape.add_bias(out, b)?;
    }
    if relu {
        out = tape.relu(out)?;
    }
    Ok(out)
}

/// Neighbor aggregates `[mean | min | max | std]`, zero for isolated nodes.
pub fn pna_aggregates(tape: &mut Tape, h: Var, neighbors: &Arc<Vec<Vec<usize>>>) -> Result<Var> {
    let n = tape.value(h).rows();
    let mean = tape.sparse_mix(h, Arc::new(SparseRows::segment_mean(neighbors, n)))?;
    let min = tape.segment_min(h, neighbors)?;
    let max = tape.segment_max(h, neighbors)?;
    let std = tape.segment_std(h, neighbors.clone())?;
    tape.concat_cols(&[mean, min, max, std])
}

/// `act([h | mean | min | max | std] W + b)`.
pub fn pna_layer(
    tape: &mut Tape,
    h: Var,
    neighbors: &Arc<Vec<Vec<usize>>>,
    w: Var,
    b: Option<Var>,
    relu: bool,
) -> Result<Var> {
    let agg = pna_aggregates(tape, h, neighbors)?;
    let joined = tape.concat_cols(&[h, agg])?;
    let mut out = tape.matmul(joined, w)?;
    if let Some(b) = b {
        out = tape.add_bias(out, b)?;
    }
    if relu {
        out = tape.relu(out)?;
    }
    Ok(out)
}

/// Attention pooling per graph: `score_i = tanh(h_i W) v`, softmax within the
/// graph, `h_g = sum_i a_i (h_i U)`. Returns `(h_g [G, d], weights [N])`.
pub fn attention_readout(
    tape: &mut Tape,
    h: Var,
    graphs: &Arc<Vec<Vec<usize>>>,
    w: Var,
    v: Var,
    u: Var,
) -> Result<(Var, Var)> {
    let n = tape.value(h).rows();
    let proj = tape.matmul(h, w)?;
    let act = tape.tanh(proj)?;
    let scores = tape.matmul(act, v)?;
    let scores = tape.reshape(scores, &[n])?;
    let weights = attention_weights(tape, scores, graphs)?;
    let values = tape.matmul(h, u)?;
    let weighted = tape.row_scale(values, weights)?;
    let pooled = tape.sparse_mix(weighted, Arc::new(SparseRows::segment_sum(graphs, n)))?;
    Ok((pooled, weights))
}

pub fn attention_weights(tape: &mut Tape, scores: Var, graphs: &Arc<Vec<Vec<usize>>>) -> Result<Var> {
    tape.segment_softmax(scores, graphs.clone())
}

/// Two-layer MLP giving one logit per row of `x`.
pub fn predict_head(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let rows = tape.value(x).rows();
    let z = tape.matmul(x, w1)?;
    let z = tape.add_bias(z, b1)?;
    let z = tape.relu(z)?;
    let z = tape.matmul(z, w2)?;
    let z = tape.add_bias(z, b2)?;
    tape.reshape(z, &[rows])
}

/// Mean logistic loss over labeled entries of a logit vector.
pub fn supervised_loss(tape: &mut Tape, logits: Var, labels: &[Option<bool>]) -> Result<Var> {
    let picked: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].is_some()).collect();
    if picked.is_empty() {
        return Err(crate::Error::InvalidInput("no labeled rows for supervised loss".into()));
    }
    let signs: Vec<f64> = picked
        .iter()
        .map(|&i| if labels[i] == Some(true) { 1.0 } else { -1.0 })
        .collect();
    let z = tape.pick_flat(logits, &picked)?;
    let signs = tape.constant(crate::tensor::Tensor::vector(signs))?;
    let margin = tape.mul(z, signs)?;
    let ll = tape.log_sigmoid(margin)?;
    let m = tape.mean(ll)?;
    tape.scale(m, -1.0)
}
