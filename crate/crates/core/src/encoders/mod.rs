//! Per-token feature channels: contextual states, dependency / constituent /
//! semantic graph convolutions, and the knowledge channel.

pub mod attention;
pub mod context;
pub mod embedding;
pub mod gcn;
pub mod knowledge;

pub use attention::AttentionConfig;
pub use context::TokenEncoder;
pub use embedding::EmbeddingProvider;
pub use gcn::{Adjacency, GcnKind, GcnStack};
pub use knowledge::KnowledgeChannel;
