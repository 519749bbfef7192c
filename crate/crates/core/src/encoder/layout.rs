use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rdb::{AttrValue, ColumnData, Rdb, MISSING_CATEGORY};

/// How one attribute slot of a node type is fed to the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureSlot {
    Continuous { name: String, mean: f64, std: f64 },
    /// `cardinality` counts the reserved missing symbol.
    Categorical { name: String, cardinality: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TypeLayout {
    pub name: String,
    /// Aligned with the node attribute vector.
    pub slots: Vec<FeatureSlot>,
}

impl TypeLayout {
    pub fn continuous_slots(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.slots.iter().enumerate().filter_map(|(i, s)| match s {
            FeatureSlot::Continuous { mean, std, .. } => Some((i, *mean, *std)),
            _ => None,
        })
    }

    pub fn categorical_slots(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.slots.iter().enumerate().filter_map(|(i, s)| match s {
            FeatureSlot::Categorical { cardinality, .. } => Some((i, *cardinality)),
            _ => None,
        })
    }

    pub fn continuous_count(&self) -> usize {
        self.continuous_slots().count()
    }

    pub fn categorical_count(&self) -> usize {
        self.categorical_slots().count()
    }

    /// Width of the concatenated input before projection.
    pub fn input_width(&self, embed_dim: usize) -> usize {
        self.categorical_count() * embed_dim + 2 * self.continuous_count()
    }
}

/// Per-table input layout with standardization statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub types: Vec<TypeLayout>,
}

impl FeatureLayout {
    /// Statistics come from all rows of non-target tables and from
    /// `target_rows` (the training partition) of the target table.
    pub fn fit(rdb: &Rdb, target_rows: Option<&[usize]>) -> Self {
        let schema = &rdb.schema;
        let types = schema
            .tables
            .iter()
            .enumerate()
            .map(|(t, spec)| {
                let slots = schema
                    .feature_columns(t)
                    .into_iter()
                    .map(|c| {
                        let name = spec.columns[c].name.clone();
                        match &rdb.tables[t].columns[c] {
                            ColumnData::Continuous(values) => {
                                let picked: Vec<f64> = match (t == schema.target_table, target_rows) {
                                    (true, Some(rows)) => rows.iter().filter_map(|&r| values[r]).collect(),
                                    _ => values.iter().flatten().copied().collect(),
                                };
                                let (mean, std) = mean_std(&picked);
                                FeatureSlot::Continuous { name, mean, std }
                            }
                            ColumnData::Categorical { vocab, .. } => FeatureSlot::Categorical {
                                name,
                                cardinality: vocab.len() + 1,
                            },
                            ColumnData::Reference { .. } => unreachable!("feature columns exclude references"),
                        }
                    })
                    .collect();
                TypeLayout {
                    name: spec.name.clone(),
                    slots,
                }
            })
            .collect();
        FeatureLayout { types }
    }

    pub fn type_layout(&self, node_type: usize) -> Result<&TypeLayout> {
        self.types
            .get(node_type)
            .ok_or_else(|| Error::InvalidInput(format!("unknown node type {node_type}")))
    }

    /// Standardized value and missing indicator.
    pub fn continuous_input(value: &AttrValue, mean: f64, std: f64) -> (f64, f64) {
        match value {
            AttrValue::Continuous(Some(x)) => ((x - mean) / std, 0.0),
            _ => (0.0, 1.0),
        }
    }

    /// Vocabulary index, with unseen values folded into the missing symbol.
    pub fn category_index(value: &AttrValue, cardinality: usize) -> usize {
        match value {
            AttrValue::Categorical(k) if (*k as usize) < cardinality => *k as usize,
            _ => MISSING_CATEGORY as usize,
        }
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 1.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}
