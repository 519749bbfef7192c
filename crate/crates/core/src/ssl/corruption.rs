use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::GraphBatch;
use crate::error::{Error, Result};
use crate::rdb::AttrValue;
use crate::seed::derive_seed;

/// Which slots were swapped and with whom.
#[derive(Clone, Debug, PartialEq)]
pub struct CorruptionPlan {
    pub mask_rate: f64,
    /// `masked[i][s]` is true where node `i` slot `s` took the donor's value
    /// (the complement of the keep-mask).
    pub masked: Vec<Vec<bool>>,
    /// Same-type donor of each node that has at least one masked slot.
    pub donors: Vec<Option<usize>>,
    /// Nodes that drew masked slots but had no same-type partner in the batch.
    pub skipped: Vec<usize>,
}

/// A masked slot whose original value is to be reconstructed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlotTarget {
    pub node: usize,
    pub slot: usize,
    pub value: AttrValue,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corruption {
    pub attrs: Vec<Vec<AttrValue>>,
    pub plan: CorruptionPlan,
    /// Masked slots with a non-missing original value.
    pub targets: Vec<SlotTarget>,
}

impl Corruption {
    pub fn masked_slots(&self) -> usize {
        self.plan.masked.iter().flatten().filter(|&&m| m).count()
    }
}

/// Masks each slot independently with probability `mask_rate` and fills masked
/// slots from one uniformly drawn same-type donor per node.
pub fn corrupt_features(batch: &GraphBatch, mask_rate: f64, seed: u64) -> Result<Corruption> {
    if batch.node_count() == 0 {
        return Err(Error::InvalidInput("cannot corrupt an empty batch".into()));
    }
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(Error::InvalidInput(format!("mask_rate must lie in [0, 1], got {mask_rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "corrupt_features", batch.node_count() as u64));
    let types = batch.node_type.iter().copied().max().unwrap_or(0) + 1;
    let mut members = vec![Vec::new(); types];
    for (i, &t) in batch.node_type.iter().enumerate() {
        members[t].push(i);
    }

    let mut attrs = batch.attrs.clone();
    let mut masked = Vec::with_capacity(batch.node_count());
    let mut donors = vec![None; batch.node_count()];
    let mut skipped = Vec::new();
    let mut targets = Vec::new();
    for i in 0..batch.node_count() {
        let draws: Vec<bool> = (0..batch.attrs[i].len()).map(|_| rng.random::<f64>() < mask_rate).collect();
        if !draws.iter().any(|&m| m) {
            masked.push(draws);
            continue;
        }
        let peers = &members[batch.node_type[i]];
        if peers.len() < 2 {
            log::debug!("node {i}: no same-type donor in batch, left uncorrupted");
            skipped.push(i);
            masked.push(vec![false; draws.len()]);
            continue;
        }
        let pick = rng.random_range(0..peers.len() - 1);
        let own = peers.iter().position(|&p| p == i).expect("node is its own type member");
        let donor = peers[if pick >= own { pick + 1 } else { pick }];
        donors[i] = Some(donor);
        for (s, &m) in draws.iter().enumerate() {
            if m {
                attrs[i][s] = batch.attrs[donor][s];
                let original = batch.attrs[i][s];
                if !original.is_missing() {
                    targets.push(SlotTarget {
                        node: i,
                        slot: s,
                        value: original,
                    });
                }
            }
        }
        masked.push(draws);
    }
    if !skipped.is_empty() {
        log::info!("{} nodes lacked a same-type donor and were not corrupted", skipped.len());
    }
    Ok(Corruption {
        attrs,
        plan: CorruptionPlan {
            mask_rate,
            masked,
            donors,
            skipped,
        },
        targets,
    })
}
