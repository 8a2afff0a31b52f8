use std::collections::HashMap;

use sha2::{Digest, Sha256};

/// Lowercases, turns punctuation and symbols into separators and splits on
/// whitespace. Hyphens and apostrophes survive only between two
/// alphanumeric characters, so `cost-effective` and `don't` stay whole.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered: Vec<char> = text.to_lowercase().chars().collect();
    let mut cleaned = String::with_capacity(lowered.len());
    for (i, &ch) in lowered.iter().enumerate() {
        if ch.is_alphanumeric() {
            cleaned.push(ch);
        } else if matches!(ch, '-' | '\'' | '\u{2019}') {
            let before = i > 0 && lowered[i - 1].is_alphanumeric();
            let after = lowered.get(i + 1).is_some_and(|c| c.is_alphanumeric());
            cleaned.push(if before && after { ch } else { ' ' });
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Token ↔ index map over regular tokens, followed by the OOV and PAD
/// specials in that order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const OOV_TOKEN: &str = "<oov>";
pub const PAD_TOKEN: &str = "<pad>";

impl Vocabulary {
    /// Builds a vocabulary from regular tokens in index order.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    /// Total size including both specials.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    /// Number of regular tokens.
    pub fn regular_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn oov(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or the OOV index.
    pub fn id(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or_else(|| self.oov())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        if id < self.tokens.len() {
            Some(&self.tokens[id])
        } else if id == self.oov() {
            Some(OOV_TOKEN)
        } else if id == self.pad() {
            Some(PAD_TOKEN)
        } else {
            None
        }
    }

    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Stable 64-bit digest of the token order, stored in checkpoints.
    pub fn stable_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([b'\n']);
        }
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// `token\tindex` lines for every entry, specials included.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for id in 0..self.len() {
            out.push_str(self.token(id).expect("id in range"));
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    /// Parses [`Vocabulary::to_tsv`] output.
    pub fn from_tsv(text: &str) -> crate::Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (tok, idx) = line.rsplit_once('\t').ok_or_else(|| crate::Error::Format {
                line: i + 1,
                message: "expected `token\\tindex`".into(),
            })?;
            let idx: usize = idx.parse().map_err(|_| crate::Error::Format {
                line: i + 1,
                message: format!("bad index `{idx}`"),
            })?;
            if idx != i {
                return Err(crate::Error::Format {
                    line: i + 1,
                    message: format!("index {idx} out of order"),
                });
            }
            tokens.push(tok.to_owned());
        }
        if tokens.len() < 2 || tokens[tokens.len() - 2] != OOV_TOKEN || tokens[tokens.len() - 1] != PAD_TOKEN {
            return Err(crate::Error::Format {
                line: tokens.len(),
                message: "vocabulary must end with the OOV and PAD specials".into(),
            });
        }
        tokens.truncate(tokens.len() - 2);
        Ok(Self::from_tokens(tokens))
    }
}

/// Counts token frequencies over `documents` and keeps tokens seen at least
/// `min_count` times, ordered by descending frequency then lexicographically.
pub fn build_vocabulary<'a, I>(documents: I, min_count: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts: HashMap<&'a str, usize> = HashMap::new();
    for doc in documents {
        for tok in doc {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t.to_owned()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Easy to use!"), toks(&["easy", "to", "use"]));
        assert_eq!(tokenize("cost-effective"), toks(&["cost-effective"]));
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn tokenize_edge_punctuation() {
        assert_eq!(tokenize("Don't -- stop, (ok)"), toks(&["don't", "stop", "ok"]));
        assert_eq!(tokenize("good,cheap"), toks(&["good", "cheap"]));
        assert_eq!(tokenize("-dash- 'quote'"), toks(&["dash", "quote"]));
        assert_eq!(tokenize("ÉCOLE Straße"), toks(&["école", "straße"]));
    }

    #[test]
    fn vocabulary_threshold() {
        let docs = [toks(&["a", "b", "a", "a"])];
        let v = build_vocabulary(docs.iter().map(|d| d.as_slice()), 2);
        assert_eq!(v.regular_tokens(), &toks(&["a"]));
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn vocabulary_tie_break() {
        let docs = [toks(&["b", "a", "b", "a"])];
        let v = build_vocabulary(docs.iter().map(|d| d.as_slice()), 1);
        assert_eq!(v.regular_tokens(), &toks(&["a", "b"]));
    }

    #[test]
    fn empty_vocabulary_has_specials() {
        let v = build_vocabulary(std::iter::empty(), 1);
        assert_eq!(v.len(), 2);
        assert_ne!(v.oov(), v.pad());
        assert_eq!(v.id("missing"), v.oov());
    }

    #[test]
    fn tsv_round_trip() {
        let v = Vocabulary::from_tokens(toks(&["x", "y y"]));
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.stable_hash(), v.stable_hash());
    }

    #[test]
    fn hash_depends_on_order() {
        let a = Vocabulary::from_tokens(toks(&["x", "y"]));
        let b = Vocabulary::from_tokens(toks(&["y", "x"]));
        assert_ne!(a.stable_hash(), b.stable_hash());
    }
}
