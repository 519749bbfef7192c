use super::pairs::{PairKind, PairSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Masked predictions gathered for the denoising loss.
#[derive(Clone, Debug, Default)]
pub struct MaskedPredictions {
    /// Predicted values (vector) against standardized targets.
    pub continuous: Vec<(Var, Vec<f64>)>,
    /// Class logits `[m, K]` against class indices.
    pub categorical: Vec<(Var, Vec<usize>)>,
}

impl MaskedPredictions {
    pub fn continuous_count(&self) -> usize {
        self.continuous.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn categorical_count(&self) -> usize {
        self.categorical.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Mean squared error over continuous slots plus mean cross-entropy over
/// categorical slots.
pub fn generative_loss(tape: &mut Tape, preds: &MaskedPredictions) -> Result<Var> {
    let (nc, nk) = (preds.continuous_count(), preds.categorical_count());
    if nc + nk == 0 {
        return Err(Error::Degenerate("no masked slots".into()));
    }
    let mut terms = Vec::new();
    if nc > 0 {
        let mut sse = Vec::new();
        for (pred, target) in &preds.continuous {
            if target.is_empty() {
                continue;
            }
            let t = tape.constant(crate::tensor::Tensor::vector(target.clone()))?;
            let diff = tape.sub(*pred, t)?;
            let sq = tape.mul(diff, diff)?;
            sse.push(tape.sum(sq)?);
        }
        let total = sum_all(tape, &sse)?;
        terms.push(tape.scale(total, 1.0 / nc as f64)?);
    }
    if nk > 0 {
        let mut ce = Vec::new();
        for (logits, target) in &preds.categorical {
            if target.is_empty() {
                continue;
            }
            ce.push(tape.cross_entropy_sum(*logits, target)?);
        }
        let total = sum_all(tape, &ce)?;
        terms.push(tape.scale(total, 1.0 / nk as f64)?);
    }
    sum_all(tape, &terms)
}

fn sum_all(tape: &mut Tape, vars: &[Var]) -> Result<Var> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// `-mean log s(pos) - mean log(1 - s(neg))` for score vectors.
pub fn ebm_nce(tape: &mut Tape, pos: Var, neg: Var) -> Result<Var> {
    if tape.value(pos).is_empty() || tape.value(neg).is_empty() {
        return Err(Error::InvalidInput("EBM-NCE needs at least one positive and one negative pair".into()));
    }
    let lp = tape.log_sigmoid(pos)?;
    let lp = tape.mean(lp)?;
    let flipped = tape.scale(neg, -1.0)?;
    let ln = tape.log_sigmoid(flipped)?;
    let ln = tape.mean(ln)?;
    let s = tape.add(lp, ln)?;
    tape.scale(s, -1.0)
}

/// Dot-product scores `<left[l], right[r]>` for index pairs.
pub fn pair_scores(tape: &mut Tape, left: Var, right: Var, l: &[usize], r: &[usize]) -> Result<Var> {
    let a = tape.gather_rows(left, l)?;
    let b = tape.gather_rows(right, r)?;
    tape.row_dot(a, b)
}

/// Representations the contrastive losses compare.
#[derive(Clone, Copy, Debug)]
pub struct Views {
    pub h0: Var,
    pub ht: Var,
    pub graph: Var,
}

fn kind_loss(tape: &mut Tape, views: Views, pairs: &PairSet, kind: PairKind) -> Result<Var> {
    let (left, right) = match kind {
        PairKind::NodeGraph => (views.ht, views.graph),
        PairKind::NodeNode => (views.h0, views.ht),
    };
    let (pl, pr) = PairSet::of_kind(&pairs.pos, kind);
    let (nl, nr) = PairSet::of_kind(&pairs.neg, kind);
    if pl.is_empty() || nl.is_empty() {
        return Err(Error::InvalidInput(format!("empty {kind:?} pair class")));
    }
    let pos = pair_scores(tape, left, right, &pl, &pr)?;
    let neg = pair_scores(tape, left, right, &nl, &nr)?;
    ebm_nce(tape, pos, neg)
}

/// Node-graph EBM-NCE.
pub fn infograph_loss(tape: &mut Tape, views: Views, pairs: &PairSet) -> Result<Var> {
    kind_loss(tape, views, pairs, PairKind::NodeGraph)
}

/// Node-graph plus node0-nodeT EBM-NCE.
pub fn infonode_loss(tape: &mut Tape, views: Views, pairs: &PairSet) -> Result<Var> {
    let a = kind_loss(tape, views, pairs, PairKind::NodeNode)?;
    let b = kind_loss(tape, views, pairs, PairKind::NodeGraph)?;
    tape.add(a, b)
}

pub fn hybrid_loss(tape: &mut Tape, lg: Var, lc: Var, alpha0: f64, alpha1: f64) -> Result<Var> {
    check_alphas(alpha0, alpha1)?;
    let a = tape.scale(lg, alpha0)?;
    let b = tape.scale(lc, alpha1)?;
    tape.add(a, b)
}

pub(crate) fn check_alphas(alpha0: f64, alpha1: f64) -> Result<()> {
    if !(alpha0 >= 0.0 && alpha1 >= 0.0) {
        return Err(Error::Config(format!("hybrid weights must be non-negative, got {alpha0}, {alpha1}")));
    }
    if alpha0 == 0.0 && alpha1 == 0.0 {
        return Err(Error::Config("hybrid weights are both zero".into()));
    }
    Ok(())
}
