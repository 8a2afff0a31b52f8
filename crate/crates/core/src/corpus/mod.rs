//! Review ingestion, reproducible splitting, polarity documents, vocabulary,
//! word vectors and synthetic corpora.

pub mod documents;
pub mod embeddings;
pub mod records;
pub mod split;
pub mod synthetic;
pub mod text;

pub use documents::{
    build_merged_documents, build_polarity_documents, DocumentSet, PolarityDocuments, DEFAULT_MAX_LEN,
    POLARITY_THRESHOLD,
};
pub use embeddings::{load_embeddings, random_embeddings, EmbeddingTable, DEFAULT_EMBEDDING_DIM};
pub use records::{
    ingest_records, k_core, to_json_lines, FieldSchema, IngestSummary, InteractionRecord, MAX_RATING, MIN_RATING,
};
pub use split::{split_dataset, stable_pair_hash, DatasetSplit, Partition};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticTruth};
pub use text::{build_vocabulary, tokenize, Vocabulary};
