use crate::corpus::{
    build_merged_documents, build_polarity_documents, build_vocabulary, random_embeddings, split_dataset, tokenize,
    DatasetSplit, EmbeddingTable, InteractionRecord, Partition, PolarityDocuments, Vocabulary, POLARITY_THRESHOLD,
};
use crate::error::Result;
use crate::model::{EntityIndex, Example};

/// Everything the trainer consumes, in index form.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub entities: EntityIndex,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    /// Per-user documents indexed like `entities.users()`.
    pub documents: Vec<PolarityDocuments>,
    pub embeddings: EmbeddingTable,
    pub pad_index: Option<usize>,
}

/// Builds trainer input from a split. Documents come from the training
/// partition only; `merged` puts every review on both sides.
pub fn assemble(
    records: &[InteractionRecord],
    split: &DatasetSplit,
    vocab: &Vocabulary,
    embeddings: EmbeddingTable,
    merged: bool,
    max_len: usize,
) -> Result<TrainData> {
    let train_records = split.records(records, Partition::Train);
    let entities = EntityIndex::from_records(&train_records);
    let docs = if merged {
        build_merged_documents(&train_records, vocab, max_len)
    } else {
        build_polarity_documents(&train_records, vocab, POLARITY_THRESHOLD, max_len)
    };
    Ok(TrainData {
        train: entities.examples(&train_records)?,
        validation: entities.examples(&split.records(records, Partition::Validation))?,
        test: entities.examples(&split.records(records, Partition::Test))?,
        documents: entities.user_documents(&docs),
        entities,
        embeddings,
        pad_index: Some(vocab.pad()),
    })
}

/// Corpus artifacts produced by [`prepare`].
#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: TrainData,
    pub vocab: Vocabulary,
    pub split: DatasetSplit,
}

/// Split (80/20 with 10% of train held out), vocabulary over training
/// reviews, seeded random word vectors, then [`assemble`].
pub fn prepare(
    records: &[InteractionRecord],
    seed: u64,
    embedding_dim: usize,
    min_count: usize,
    max_len: usize,
    merged: bool,
) -> Result<Prepared> {
    let split = split_dataset(records, seed, 0.8, 0.1)?;
    let train_records = split.records(records, Partition::Train);
    let tokens: Vec<Vec<String>> = train_records.iter().map(|r| tokenize(&r.review)).collect();
    let vocab = build_vocabulary(tokens.iter().map(|t| t.as_slice()), min_count);
    let embeddings = random_embeddings(&vocab, embedding_dim, seed);
    let data = assemble(records, &split, &vocab, embeddings, merged, max_len)?;
    Ok(Prepared { data, vocab, split })
}
