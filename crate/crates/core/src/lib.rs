//! Graph-and-retrieval augmented generation engine for technical
//! communication corpora.
//!
//! The pipeline runs corpus cleaning ([`corpus`]), chunking and embedding
//! ([`embed`]), vector search ([`vindex`]), knowledge-graph construction
//! ([`kgraph`]), image-to-text query fusion ([`mmio`]), joint retrieval and
//! generation ([`grg`]), instruction-record forging ([`forge`]) and MCQ
//! evaluation ([`evalbench`]). Every model-backed step sits behind a client
//! trait with a deterministic offline stub.
//!
//! Vector math is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f32`, which is also the on-disk precision.

pub mod client;
pub mod corpus;
pub mod embed;
pub mod evalbench;
pub mod forge;
pub mod grg;
pub mod jsonl;
pub mod kgraph;
pub mod mmio;
pub mod scalar;
pub mod text;
pub mod vindex;

pub use scalar::Scalar;

pub type Embedding = embed::EmbeddingVector<f32>;
pub type Index = vindex::VectorIndex<f32>;
pub type Engine = grg::Engine<f32>;
pub type OcrToken = mmio::OcrToken<f32>;
pub type Stores = grg::Stores<f32>;
pub type HashedEmbedder = embed::HashedTrigramEmbedder<f32>;
