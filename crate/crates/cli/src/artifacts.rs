//! Everything that touches the filesystem: the prepared-corpus cache,
//! checkpoints, run manifests and atomic writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rpr::checkpoint::{decode_checkpoint, encode_checkpoint};
use rpr::corpus::{ingest_records, DatasetSplit, DocumentSet, EmbeddingTable, FieldSchema, InteractionRecord, Vocabulary};
use rpr::kernel::Tensor;
use rpr::model::ModelParams;

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const DOCUMENTS_FILE: &str = "documents.bin";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const HISTORY_FILE: &str = "history.csv";
pub const TIMING_FILE: &str = "timing.csv";

const EMBEDDINGS_MAGIC: &[u8; 4] = b"RPRE";

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("cannot write {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_checkpoint(params: &ModelParams, vocab_hash: u64, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params, vocab_hash))
}

/// Loads a checkpoint; with `expected_vocab_hash` the stored hash must match.
pub fn load_checkpoint(path: &Path, expected_vocab_hash: Option<u64>) -> Result<ModelParams> {
    let bytes = read_file(path)?;
    let ckpt = decode_checkpoint(&bytes, expected_vocab_hash).with_context(|| format!("cannot load {}", path.display()))?;
    Ok(ckpt.params)
}

pub fn encode_embeddings(table: &EmbeddingTable) -> Vec<u8> {
    let m = &table.matrix;
    let mut out = Vec::with_capacity(28 + 8 * m.len());
    out.extend_from_slice(EMBEDDINGS_MAGIC);
    for v in [m.rows(), m.cols(), table.found] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for x in m.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingTable> {
    let bad = || anyhow::Error::new(rpr::Error::Format { line: 0, message: "malformed embeddings file".into() });
    if bytes.len() < 28 || &bytes[..4] != EMBEDDINGS_MAGIC {
        return Err(bad());
    }
    let word = |k: usize| u64::from_le_bytes(bytes[4 + 8 * k..12 + 8 * k].try_into().expect("8 bytes")) as usize;
    let (rows, cols, found) = (word(0), word(1), word(2));
    let body = &bytes[28..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(8)) != Some(body.len()) {
        return Err(bad());
    }
    let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let matrix = Tensor::new(vec![rows, cols], data).map_err(|_| bad())?;
    Ok(EmbeddingTable { matrix, found })
}

/// The prepared corpus as read back from a cache directory.
pub struct Cache {
    pub dir: PathBuf,
    pub records: Vec<InteractionRecord>,
    pub split: DatasetSplit,
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
}

impl Cache {
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(anyhow::Error::new(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("cache directory {} does not exist", dir.display()),
            )));
        }
        let path = dir.join(RECORDS_FILE);
        let file = fs::File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
        let (records, _) = ingest_records(BufReader::new(file), &FieldSchema::default())
            .with_context(|| format!("cannot parse {}", path.display()))?;
        let path = dir.join(SPLIT_FILE);
        let split: DatasetSplit = serde_json::from_str(&read_text(&path)?)
            .map_err(|e| rpr::Error::Format { line: e.line(), message: e.to_string() })
            .with_context(|| format!("cannot parse {}", path.display()))?;
        if split.train.iter().chain(&split.validation).chain(&split.test).any(|&i| i >= records.len()) {
            anyhow::bail!(rpr::Error::Format { line: 0, message: format!("{} does not match {}", SPLIT_FILE, RECORDS_FILE) });
        }
        let path = dir.join(VOCAB_FILE);
        let vocab = Vocabulary::from_tsv(&read_text(&path)?).with_context(|| format!("cannot parse {}", path.display()))?;
        let path = dir.join(EMBEDDINGS_FILE);
        let embeddings = decode_embeddings(&read_file(&path)?).with_context(|| format!("cannot parse {}", path.display()))?;
        if embeddings.matrix.rows() != vocab.len() {
            anyhow::bail!(rpr::Error::Format {
                line: 0,
                message: format!("{} has {} rows for {} vocabulary entries", EMBEDDINGS_FILE, embeddings.matrix.rows(), vocab.len()),
            });
        }
        Ok(Self { dir: dir.to_path_buf(), records, split, vocab, embeddings })
    }

    /// Digests of the cache files, keyed by file name.
    pub fn digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for name in [RECORDS_FILE, SPLIT_FILE, VOCAB_FILE, EMBEDDINGS_FILE] {
            out.insert(name.to_owned(), sha256_hex(&read_file(&self.dir.join(name))?));
        }
        Ok(out)
    }
}

pub fn write_documents(dir: &Path, docs: &DocumentSet) -> Result<()> {
    write_atomic(&dir.join(DOCUMENTS_FILE), &docs.to_bytes())
}

/// Provenance of one output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Resolved configuration, as TOML.
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    /// SHA-256 of every input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every file written next to this manifest.
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: String) -> Self {
        Self {
            command: command.to_owned(),
            argv: argv.to_vec(),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_hex(&read_file(path)?);
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn output(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(name), bytes)?;
        self.outputs.insert(name.to_owned(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = unix_now();
        let json = serde_json::to_string_pretty(&self)?;
        write_atomic(&dir.join(MANIFEST_FILE), format!("{json}\n").as_bytes())
    }
}
