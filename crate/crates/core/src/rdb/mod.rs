//! Relational data: schema, typed tables, the row graph and per-row subgraphs.

mod data;
mod graph;
mod schema;
mod split;

pub use data::{load_rdb, write_records, AttrValue, ColumnData, Rdb, TableData, TableRecords, MISSING_CATEGORY};
pub use graph::{
    build_rdb_graph, relation_name, sample_all, sample_subgraph, Edge, RdbGraph, Relation, SamplingConfig, Subgraph,
    SubgraphNode,
};
pub use schema::{load_schema, ColumnKind, ColumnSpec, RdbSchema, TableSpec};
pub use split::stratified_split;
