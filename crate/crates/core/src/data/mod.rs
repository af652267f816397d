//! Dataset ingestion and the graph structures derived from parses.

pub mod constituency;
pub mod dataset;
pub mod dependency;
pub mod instance;

pub use constituency::{build_con_stack, parse_bracketed, ConGraphStack, ConTree};
pub use dataset::{label_counts, load_dataset, read_dataset, write_dataset};
pub use dependency::{build_dep_adj, DepGraph};
pub use instance::{AspectInstance, Polarity};
