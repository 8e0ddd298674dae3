//! Tree-structured corpus synthesis.
//!
//! A dialogue tree is grown layer by layer against a language-model backend:
//! odd layers hold generated user questions, even layers assistant answers
//! (or, in continuation mode, role-free text). Sibling candidates are
//! oversampled and thinned with maximal marginal relevance over sentence
//! embeddings, and every root-to-leaf path becomes one training conversation.
//!
//! Module map:
//! - [`tree`]: configuration schema, node model, structural validation.
//! - [`prompt`]: chat templates and byte-exact prompt rendering.
//! - [`backend`]: generation/embedding interfaces, HTTP and mock backends.
//! - [`dedup`]: cosine similarity, MMR selection, near-duplicate filtering.
//! - [`scheduler`]: concurrent expansion, checkpointing, resume.
//! - [`corpus`]: conversation extraction, turn policies, exports.
//! - [`analysis`]: corpus statistics and diversity diagnostics.

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod dedup;
pub mod hash;
pub mod prompt;
pub mod scheduler;
pub mod tree;

pub use backend::{Backends, EmbeddingVector, Embedder, GenerationRequest, GenerationResult, Generator};
pub use corpus::{ConversationRecord, TurnPolicy};
pub use dedup::{cosine, mmr_select, near_duplicate_filter, MmrSelection};
pub use prompt::ChatTemplate;
pub use scheduler::{CheckpointStore, RunOptions, RunReport, RunStatus};
pub use tree::{LayerSpec, Mode, NodeId, Role, Tree, TreeConfig, TreeNode};
