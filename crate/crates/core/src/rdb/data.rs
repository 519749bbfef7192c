use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, RdbSchema};
use crate::error::{Error, Result};

/// Vocabulary index reserved for missing or unseen categorical values.
pub const MISSING_CATEGORY: u32 = 0;

/// One node attribute slot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    Continuous(Option<f64>),
    /// Vocabulary index, [`MISSING_CATEGORY`] for missing.
    Categorical(u32),
}

impl AttrValue {
    pub fn is_missing(&self) -> bool {
        matches!(self, AttrValue::Continuous(None) | AttrValue::Categorical(MISSING_CATEGORY))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Continuous(Vec<Option<f64>>),
    /// `vocab[k - 1]` is the string for index `k`.
    Categorical { vocab: Vec<String>, values: Vec<u32> },
    Reference { table: usize, rows: Vec<Option<usize>> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableData {
    pub name: String,
    pub row_count: usize,
    pub keys: Vec<String>,
    pub key_index: HashMap<String, usize>,
    pub columns: Vec<ColumnData>,
}

/// Raw string cells for one table, header first. Empty string means missing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TableRecords {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Typed multi-table database.
#[derive(Clone, Debug, PartialEq)]
pub struct Rdb {
    pub schema: RdbSchema,
    pub tables: Vec<TableData>,
}

fn positive_label(vocab: &[String]) -> Option<u32> {
    const POSITIVE: [&str; 4] = ["1", "true", "yes", "pos"];
    if let Some(i) = vocab.iter().position(|v| POSITIVE.contains(&v.to_ascii_lowercase().as_str())) {
        return Some(i as u32 + 1);
    }
    (vocab.len() == 2).then_some(2)
}

impl Rdb {
    /// Builds typed storage from raw cells, one [`TableRecords`] per schema table in order.
    pub fn from_records(schema: RdbSchema, records: &[TableRecords]) -> Result<Self> {
        if records.len() != schema.tables.len() {
            return Err(Error::Data(format!(
                "expected {} tables, got {}",
                schema.tables.len(),
                records.len()
            )));
        }

        // header -> column position per table, and primary keys
        let mut positions: Vec<HashMap<&str, usize>> = Vec::new();
        let mut tables: Vec<TableData> = Vec::new();
        for (spec, rec) in schema.tables.iter().zip(records) {
            let mut expected: Vec<&str> = spec.columns.iter().map(|c| c.name.as_str()).collect();
            if let Some(pk) = &spec.primary_key {
                expected.push(pk);
            }
            let mut header_sorted: Vec<&str> = rec.header.iter().map(String::as_str).collect();
            header_sorted.sort_unstable();
            expected.sort_unstable();
            if header_sorted != expected {
                return Err(Error::Data(format!(
                    "table `{}`: header mismatch, expected columns {:?}, found {:?}",
                    spec.name, expected, rec.header
                )));
            }
            let pos: HashMap<&str, usize> = rec.header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
            for (r, row) in rec.rows.iter().enumerate() {
                if row.len() != rec.header.len() {
                    return Err(Error::Data(format!(
                        "table `{}`, row {}: expected {} cells, found {}",
                        spec.name,
                        r + 1,
                        rec.header.len(),
                        row.len()
                    )));
                }
            }

            let mut keys = Vec::new();
            let mut key_index = HashMap::new();
            if let Some(pk) = &spec.primary_key {
                let p = pos[pk.as_str()];
                for (r, row) in rec.rows.iter().enumerate() {
                    let key = row[p].clone();
                    if key.is_empty() {
                        return Err(Error::Cell {
                            table: spec.name.clone(),
                            column: pk.clone(),
                            row: r + 1,
                            message: "empty primary key".into(),
                        });
                    }
                    if key_index.insert(key.clone(), r).is_some() {
                        return Err(Error::Cell {
                            table: spec.name.clone(),
                            column: pk.clone(),
                            row: r + 1,
                            message: format!("duplicate primary key `{key}`"),
                        });
                    }
                    keys.push(key);
                }
            }
            tables.push(TableData {
                name: spec.name.clone(),
                row_count: rec.rows.len(),
                keys,
                key_index,
                columns: Vec::new(),
            });
            positions.push(pos);
        }

        for (t, (spec, rec)) in schema.tables.iter().zip(records).enumerate() {
            let mut columns = Vec::with_capacity(spec.columns.len());
            for col in &spec.columns {
                let p = positions[t][col.name.as_str()];
                let cells = rec.rows.iter().map(|row| row[p].as_str());
                let data = match &col.kind {
                    ColumnKind::Continuous => {
                        let mut values = Vec::with_capacity(rec.rows.len());
                        for (r, cell) in cells.enumerate() {
                            if cell.is_empty() {
                                values.push(None);
                                continue;
                            }
                            let v: f64 = cell.trim().parse().map_err(|_| Error::Cell {
                                table: spec.name.clone(),
                                column: col.name.clone(),
                                row: r + 1,
                                message: format!("cannot parse `{cell}` as a number"),
                            })?;
                            if !v.is_finite() {
                                return Err(Error::Cell {
                                    table: spec.name.clone(),
                                    column: col.name.clone(),
                                    row: r + 1,
                                    message: format!("non-finite value `{cell}`"),
                                });
                            }
                            values.push(Some(v));
                        }
                        ColumnData::Continuous(values)
                    }
                    ColumnKind::Categorical => {
                        let mut vocab: Vec<String> =
                            cells.clone().filter(|c| !c.is_empty()).map(str::to_string).collect();
                        vocab.sort_unstable();
                        vocab.dedup();
                        let lookup: HashMap<&str, u32> =
                            vocab.iter().enumerate().map(|(i, v)| (v.as_str(), i as u32 + 1)).collect();
                        let values = cells
                            .map(|c| if c.is_empty() { MISSING_CATEGORY } else { lookup[c] })
                            .collect();
                        ColumnData::Categorical { vocab, values }
                    }
                    ColumnKind::Reference(target) => {
                        let index = &tables[*target].key_index;
                        let mut rows = Vec::with_capacity(rec.rows.len());
                        for (r, cell) in cells.enumerate() {
                            if cell.is_empty() {
                                rows.push(None);
                                continue;
                            }
                            let hit = index.get(cell).ok_or_else(|| Error::Cell {
                                table: spec.name.clone(),
                                column: col.name.clone(),
                                row: r + 1,
                                message: format!(
                                    "reference `{cell}` has no row in `{}`",
                                    schema.tables[*target].name
                                ),
                            })?;
                            rows.push(Some(*hit));
                        }
                        ColumnData::Reference { table: *target, rows }
                    }
                };
                columns.push(data);
            }
            tables[t].columns = columns;
        }

        let rdb = Rdb { schema, tables };
        if let ColumnData::Categorical { vocab, .. } = rdb.target_data() {
            if vocab.len() > 2 {
                return Err(Error::Data(format!(
                    "target column `{}` must be binary, found {} distinct values",
                    rdb.schema.target_column_name(),
                    vocab.len()
                )));
            }
        }
        Ok(rdb)
    }

    fn target_data(&self) -> &ColumnData {
        &self.tables[self.schema.target_table].columns[self.schema.target_column]
    }

    /// Per target-table row: `Some(true)` positive, `Some(false)` negative, `None` unlabeled.
    pub fn labels(&self) -> Vec<Option<bool>> {
        match self.target_data() {
            ColumnData::Categorical { vocab, values } => {
                let pos = positive_label(vocab);
                values
                    .iter()
                    .map(|&v| (v != MISSING_CATEGORY).then(|| Some(v) == pos))
                    .collect()
            }
            _ => unreachable!("schema guarantees a categorical target"),
        }
    }

    pub fn row_counts(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.row_count).collect()
    }

    pub fn total_rows(&self) -> usize {
        self.tables.iter().map(|t| t.row_count).sum()
    }

    /// Attribute vector of a row over [`RdbSchema::feature_columns`].
    pub fn node_attributes(&self, table: usize, row: usize) -> Vec<AttrValue> {
        self.schema
            .feature_columns(table)
            .into_iter()
            .map(|c| match &self.tables[table].columns[c] {
                ColumnData::Continuous(v) => AttrValue::Continuous(v[row]),
                ColumnData::Categorical { values, .. } => AttrValue::Categorical(values[row]),
                ColumnData::Reference { .. } => unreachable!("feature columns exclude references"),
            })
            .collect()
    }

    /// Vocabulary size (excluding the missing symbol) of a categorical column.
    pub fn vocab_size(&self, table: usize, column: usize) -> usize {
        match &self.tables[table].columns[column] {
            ColumnData::Categorical { vocab, .. } => vocab.len(),
            _ => 0,
        }
    }
}

fn read_csv(path: &Path) -> Result<TableRecords> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Data(format!("{}: {e}", path.display())),
            _ => Error::Csv(e),
        })?;
    let header = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    Ok(TableRecords { header, rows })
}

/// Reads `<dir>/<table>.csv` for every table in the schema.
pub fn load_rdb(schema: RdbSchema, csv_dir: impl AsRef<Path>) -> Result<Rdb> {
    let dir = csv_dir.as_ref();
    let records = schema
        .tables
        .iter()
        .map(|t| read_csv(&dir.join(format!("{}.csv", t.name))))
        .collect::<Result<Vec<_>>>()?;
    Rdb::from_records(schema, &records)
}

/// Writes one CSV per table in the layout [`load_rdb`] reads.
pub fn write_records(schema: &RdbSchema, records: &[TableRecords], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (spec, rec) in schema.tables.iter().zip(records) {
        let path = dir.join(format!("{}.csv", spec.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&rec.header)?;
        for row in &rec.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
