//! Schema file grammar (TOML):
//!
//! ```toml
//! [target]
//! table = "loan"        # table whose rows are predicted
//! column = "status"     # binary categorical column in that table
//!
//! [[table]]
//! name = "loan"
//! primary_key = "id"    # optional; required when other tables reference this one
//!
//! [[table.column]]
//! name = "client_id"
//! kind = "reference"    # continuous | categorical | reference
//! references = "client" # only for kind = "reference"
//! ```
//!
//! The primary-key column is an identifier only and never becomes a feature.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SchemaError};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Continuous,
    Categorical,
    /// Index of the referenced table in [`RdbSchema::tables`].
    Reference(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub primary_key: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdbSchema {
    pub tables: Vec<TableSpec>,
    pub target_table: usize,
    pub target_column: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchema {
    target: Option<RawTarget>,
    #[serde(default, rename = "table")]
    tables: Vec<RawTable>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    table: Option<String>,
    column: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTable {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    primary_key: Option<String>,
    #[serde(default, rename = "column")]
    columns: Vec<RawColumn>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawColumn {
    name: String,
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    references: Option<String>,
}

impl RdbSchema {
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let raw: RawSchema = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawSchema) -> Result<Self, SchemaError> {
        let mut names = HashSet::new();
        for t in &raw.tables {
            if !names.insert(t.name.as_str()) {
                return Err(SchemaError::Duplicate(t.name.clone()));
            }
        }
        let index_of = |name: &str| raw.tables.iter().position(|t| t.name == name);

        let mut tables = Vec::with_capacity(raw.tables.len());
        for t in &raw.tables {
            let mut seen = HashSet::new();
            if let Some(pk) = &t.primary_key {
                seen.insert(pk.as_str());
            }
            let mut columns = Vec::with_capacity(t.columns.len());
            for c in &t.columns {
                if !seen.insert(c.name.as_str()) {
                    return Err(SchemaError::Duplicate(format!("{}.{}", t.name, c.name)));
                }
                let kind = match c.kind.as_str() {
                    "continuous" => ColumnKind::Continuous,
                    "categorical" => ColumnKind::Categorical,
                    "reference" => {
                        let target = c.references.clone().unwrap_or_default();
                        let idx = index_of(&target).ok_or_else(|| SchemaError::UnresolvedReference {
                            table: t.name.clone(),
                            column: c.name.clone(),
                            target: target.clone(),
                        })?;
                        if raw.tables[idx].primary_key.is_none() {
                            return Err(SchemaError::Table {
                                table: target,
                                message: "referenced by another table but declares no primary_key".into(),
                            });
                        }
                        ColumnKind::Reference(idx)
                    }
                    other => {
                        return Err(SchemaError::UnknownColumnKind {
                            table: t.name.clone(),
                            column: c.name.clone(),
                            kind: other.to_string(),
                        })
                    }
                };
                if c.references.is_some() && !matches!(kind, ColumnKind::Reference(_)) {
                    return Err(SchemaError::Table {
                        table: t.name.clone(),
                        message: format!("column `{}` has `references` but is not a reference", c.name),
                    });
                }
                columns.push(ColumnSpec {
                    name: c.name.clone(),
                    kind,
                });
            }
            tables.push(TableSpec {
                name: t.name.clone(),
                primary_key: t.primary_key.clone(),
                columns,
            });
        }

        let target = raw
            .target
            .ok_or_else(|| SchemaError::MissingTarget("no [target] section".into()))?;
        let target_name = target
            .table
            .ok_or_else(|| SchemaError::MissingTarget("target.table not set".into()))?;
        let column_name = target
            .column
            .ok_or_else(|| SchemaError::MissingTarget("target.column not set".into()))?;
        let target_table = index_of(&target_name)
            .ok_or_else(|| SchemaError::InvalidTarget(format!("unknown target table `{target_name}`")))?;
        let target_column = tables[target_table].column_index(&column_name).ok_or_else(|| {
            SchemaError::InvalidTarget(format!("`{column_name}` is not a column of `{target_name}`"))
        })?;
        if tables[target_table].columns[target_column].kind != ColumnKind::Categorical {
            return Err(SchemaError::InvalidTarget(format!(
                "target column `{target_name}.{column_name}` must be categorical"
            )));
        }

        Ok(RdbSchema {
            tables,
            target_table,
            target_column,
        })
    }

    /// Renders the schema back into the file grammar.
    pub fn to_toml(&self) -> String {
        let raw = RawSchema {
            target: Some(RawTarget {
                table: Some(self.tables[self.target_table].name.clone()),
                column: Some(self.target_column_name().to_string()),
            }),
            tables: self
                .tables
                .iter()
                .map(|t| RawTable {
                    name: t.name.clone(),
                    primary_key: t.primary_key.clone(),
                    columns: t
                        .columns
                        .iter()
                        .map(|c| {
                            let (kind, references) = match &c.kind {
                                ColumnKind::Continuous => ("continuous", None),
                                ColumnKind::Categorical => ("categorical", None),
                                ColumnKind::Reference(i) => ("reference", Some(self.tables[*i].name.clone())),
                            };
                            RawColumn {
                                name: c.name.clone(),
                                kind: kind.to_string(),
                                references,
                            }
                        })
                        .collect(),
                })
                .collect(),
        };
        toml::to_string(&raw).expect("schema serializes")
    }

    pub fn table_index(&self, name: &str) -> Option<usize> {
        self.tables.iter().position(|t| t.name == name)
    }

    pub fn target_table_name(&self) -> &str {
        &self.tables[self.target_table].name
    }

    pub fn target_column_name(&self) -> &str {
        &self.tables[self.target_table].columns[self.target_column].name
    }

    /// Columns that become node attributes: everything except references and
    /// the target column.
    pub fn feature_columns(&self, table: usize) -> Vec<usize> {
        self.tables[table]
            .columns
            .iter()
            .enumerate()
            .filter(|(i, c)| {
                !matches!(c.kind, ColumnKind::Reference(_))
                    && !(table == self.target_table && *i == self.target_column)
            })
            .map(|(i, _)| i)
            .collect()
    }

    pub fn reference_columns(&self) -> usize {
        self.tables
            .iter()
            .flat_map(|t| &t.columns)
            .filter(|c| matches!(c.kind, ColumnKind::Reference(_)))
            .count()
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<RdbSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(RdbSchema::parse(&text)?)
}
