use std::collections::BTreeMap;

use super::records::InteractionRecord;
use super::text::{tokenize, Vocabulary};
use crate::error::{Error, Result};

/// Ratings at or above this value go to the positive document.
pub const POLARITY_THRESHOLD: f64 = 3.0;
/// Tokens kept per polarity document (the most recent ones).
pub const DEFAULT_MAX_LEN: usize = 500;

/// A user's concatenated positive and negative training reviews as token ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolarityDocuments {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

/// Per-user documents in deterministic key order. Users without training
/// reviews read back as two empty documents.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocumentSet {
    docs: BTreeMap<String, PolarityDocuments>,
}

static EMPTY: PolarityDocuments = PolarityDocuments { positive: Vec::new(), negative: Vec::new() };

impl DocumentSet {
    pub fn get(&self, user_id: &str) -> &PolarityDocuments {
        self.docs.get(user_id).unwrap_or(&EMPTY)
    }

    pub fn contains(&self, user_id: &str) -> bool {
        self.docs.contains_key(user_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &PolarityDocuments)> {
        self.docs.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn insert(&mut self, user_id: String, docs: PolarityDocuments) {
        self.docs.insert(user_id, docs);
    }

    /// Binary form: `RPRD`, u32 version, u64 user count, then per user a
    /// u32-length-prefixed id and two u64-length-prefixed u32 token arrays.
    /// Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"RPRD");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.docs.len() as u64).to_le_bytes());
        for (user, d) in &self.docs {
            out.extend_from_slice(&(user.len() as u32).to_le_bytes());
            out.extend_from_slice(user.as_bytes());
            for seq in [&d.positive, &d.negative] {
                out.extend_from_slice(&(seq.len() as u64).to_le_bytes());
                for &t in seq.iter() {
                    out.extend_from_slice(&(t as u32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(4)? != b"RPRD" {
            return Err(Error::Format { line: 0, message: "bad document magic".into() });
        }
        let version = r.u32()?;
        if version != 1 {
            return Err(Error::Format { line: 0, message: format!("unsupported document version {version}") });
        }
        let users = r.u64()? as usize;
        let mut set = DocumentSet::default();
        for _ in 0..users {
            let len = r.u32()? as usize;
            let id = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format { line: 0, message: "user id is not UTF-8".into() })?;
            let mut seqs = [Vec::new(), Vec::new()];
            for seq in &mut seqs {
                let n = r.u64()? as usize;
                seq.reserve(n);
                for _ in 0..n {
                    seq.push(r.u32()? as usize);
                }
            }
            let [positive, negative] = seqs;
            set.insert(id, PolarityDocuments { positive, negative });
        }
        if r.pos != bytes.len() {
            return Err(Error::Format { line: 0, message: "trailing bytes after documents".into() });
        }
        Ok(set)
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format { line: 0, message: "document file truncated".into() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn keep_recent(seq: &mut Vec<usize>, max_len: usize) {
    if seq.len() > max_len {
        seq.drain(..seq.len() - max_len);
    }
}

/// Splits each user's training reviews by polarity (`rating >= threshold`
/// is positive) and concatenates them in input order, keeping the last
/// `max_len` tokens of each side.
pub fn build_polarity_documents(
    train: &[InteractionRecord],
    vocab: &Vocabulary,
    threshold: f64,
    max_len: usize,
) -> DocumentSet {
    let mut docs: BTreeMap<String, PolarityDocuments> = BTreeMap::new();
    for r in train {
        let ids = vocab.encode(&tokenize(&r.review));
        let entry = docs.entry(r.user_id.clone()).or_default();
        if r.rating >= threshold {
            entry.positive.extend(ids);
        } else {
            entry.negative.extend(ids);
        }
    }
    for d in docs.values_mut() {
        keep_recent(&mut d.positive, max_len);
        keep_recent(&mut d.negative, max_len);
    }
    DocumentSet { docs }
}

/// One document per user with every training review regardless of rating,
/// placed on both sides.
pub fn build_merged_documents(train: &[InteractionRecord], vocab: &Vocabulary, max_len: usize) -> DocumentSet {
    let mut merged: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in train {
        merged.entry(r.user_id.clone()).or_default().extend(vocab.encode(&tokenize(&r.review)));
    }
    let docs = merged
        .into_iter()
        .map(|(u, mut seq)| {
            keep_recent(&mut seq, max_len);
            (u, PolarityDocuments { positive: seq.clone(), negative: seq })
        })
        .collect();
    DocumentSet { docs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::text::build_vocabulary;

    fn rec(u: &str, rating: f64, text: &str) -> InteractionRecord {
        InteractionRecord { user_id: u.into(), item_id: "i".into(), rating, review: text.into() }
    }

    fn vocab_for(recs: &[InteractionRecord]) -> Vocabulary {
        let toks: Vec<Vec<String>> = recs.iter().map(|r| tokenize(&r.review)).collect();
        build_vocabulary(toks.iter().map(|t| t.as_slice()), 1)
    }

    #[test]
    fn threshold_is_inclusive_positive() {
        let recs = [rec("u", 3.0, "fine strings")];
        let v = vocab_for(&recs);
        let d = build_polarity_documents(&recs, &v, POLARITY_THRESHOLD, 500);
        assert_eq!(d.get("u").positive.len(), 2);
        assert!(d.get("u").negative.is_empty());
    }

    #[test]
    fn low_rating_goes_negative() {
        let recs = [rec("u", 2.0, "cracked")];
        let v = vocab_for(&recs);
        let d = build_polarity_documents(&recs, &v, POLARITY_THRESHOLD, 500);
        assert_eq!(d.get("u").negative, vec![v.id("cracked")]);
        assert!(d.get("u").positive.is_empty());
    }

    #[test]
    fn absent_user_reads_empty() {
        let d = DocumentSet::default();
        assert!(!d.contains("ghost"));
        assert_eq!(d.get("ghost"), &PolarityDocuments::default());
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let recs = [rec("u", 5.0, "a b c"), rec("u", 4.0, "d e")];
        let v = vocab_for(&recs);
        let d = build_polarity_documents(&recs, &v, POLARITY_THRESHOLD, 3);
        assert_eq!(d.get("u").positive, v.encode(&tokenize("c d e")));
    }

    #[test]
    fn merged_documents_mirror_both_sides() {
        let recs = [rec("u", 5.0, "good"), rec("u", 1.0, "bad")];
        let v = vocab_for(&recs);
        let d = build_merged_documents(&recs, &v, 10);
        assert_eq!(d.get("u").positive, d.get("u").negative);
        assert_eq!(d.get("u").positive.len(), 2);
    }

    #[test]
    fn bytes_round_trip_and_truncation() {
        let mut set = DocumentSet::default();
        set.insert("ü1".into(), PolarityDocuments { positive: vec![1, 2, 3], negative: vec![] });
        set.insert("u2".into(), PolarityDocuments { positive: vec![], negative: vec![7] });
        let bytes = set.to_bytes();
        assert_eq!(DocumentSet::from_bytes(&bytes).unwrap(), set);
        assert!(DocumentSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
