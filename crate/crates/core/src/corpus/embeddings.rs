use std::collections::HashSet;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::text::Vocabulary;
use crate::error::{Error, Result};
use crate::kernel::Tensor;

pub const DEFAULT_EMBEDDING_DIM: usize = 50;

/// `|vocab| × d` word vectors. The PAD row is all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    /// Regular vocabulary tokens found in the vector file.
    pub found: usize,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Fraction of regular tokens initialised from the file.
    pub fn coverage(&self, vocab: &Vocabulary) -> f64 {
        if vocab.regular_len() == 0 {
            0.0
        } else {
            self.found as f64 / vocab.regular_len() as f64
        }
    }
}

/// Every row uniform in `[-0.5/d, 0.5/d]` except the zero PAD row.
pub fn random_embeddings(vocab: &Vocabulary, d: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 0.5 / d as f64;
    let mut matrix = Tensor::zeros(&[vocab.len(), d]);
    for id in 0..vocab.len() {
        // draw for every row so the stream does not depend on file coverage
        let row: Vec<f64> = (0..d).map(|_| rng.random_range(-bound..=bound)).collect();
        if id != vocab.pad() {
            matrix.row_mut(id).copy_from_slice(&row);
        }
    }
    EmbeddingTable { matrix, found: 0 }
}

/// Reads `token v1 … vd` lines. Vocabulary tokens present in the file copy
/// its values (first occurrence wins); the rest keep the seeded uniform
/// initialisation of [`random_embeddings`].
///
/// A file whose lines all carry some other dimension is a config error; a
/// single malformed line is a format error naming that line.
pub fn load_embeddings<R: BufRead>(source: R, vocab: &Vocabulary, d: usize, seed: u64) -> Result<EmbeddingTable> {
    let mut table = random_embeddings(vocab, d, seed);
    let mut seen: HashSet<usize> = HashSet::new();
    let mut file_dim: Option<usize> = None;
    let mut uniform_dim = true;
    let mut first_bad: Option<(usize, usize)> = None;
    let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        match file_dim {
            None => file_dim = Some(values.len()),
            Some(fd) if fd != values.len() => uniform_dim = false,
            _ => {}
        }
        if values.len() != d {
            first_bad.get_or_insert((line_no, values.len()));
            continue;
        }
        let Some(id) = vocab.lookup(token) else { continue };
        if !seen.insert(id) {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Format { line: line_no, message: "unparseable vector component".into() })?;
        pending.push((id, parsed));
    }

    if let Some((line, got)) = first_bad {
        if uniform_dim {
            return Err(Error::Config(format!("embedding file has {got}-d vectors but d = {d}")));
        }
        return Err(Error::Format { line, message: format!("expected {d} values, found {got}") });
    }
    table.found = pending.len();
    for (id, row) in pending {
        table.matrix.row_mut(id).copy_from_slice(&row);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(tokens: &[&str]) -> Vocabulary {
        Vocabulary::from_tokens(tokens.iter().map(|s| s.to_string()).collect())
    }

    fn line(token: &str, d: usize, base: f64) -> String {
        let vals: Vec<String> = (0..d).map(|k| format!("{}", base + k as f64 * 0.01)).collect();
        format!("{token} {}\n", vals.join(" "))
    }

    #[test]
    fn copies_file_values_exactly() {
        let v = vocab(&["easy"]);
        let text = line("easy", 50, 0.125) + &line("other", 50, 9.0);
        let t = load_embeddings(text.as_bytes(), &v, 50, 1).unwrap();
        let expected: Vec<f64> = (0..50).map(|k| format!("{}", 0.125 + k as f64 * 0.01).parse().unwrap()).collect();
        assert_eq!(t.matrix.row(v.id("easy")), expected.as_slice());
        assert_eq!(t.found, 1);
        assert_eq!(t.coverage(&v), 1.0);
    }

    #[test]
    fn missing_tokens_deterministic_and_bounded() {
        let v = vocab(&["absent", "x"]);
        let text = line("x", 4, 0.5);
        let a = load_embeddings(text.as_bytes(), &v, 4, 99).unwrap();
        let b = load_embeddings(text.as_bytes(), &v, 4, 99).unwrap();
        assert_eq!(a.matrix.row(0), b.matrix.row(0));
        assert!(a.matrix.row(0).iter().all(|x| x.abs() <= 0.5 / 4.0));
        assert!(a.matrix.row(v.pad()).iter().all(|x| *x == 0.0));
        assert_eq!(a.matrix.rows(), v.len());
    }

    #[test]
    fn short_line_is_format_error() {
        let v = vocab(&["a", "b"]);
        let text = line("a", 50, 0.0) + &line("b", 49, 0.0);
        match load_embeddings(text.as_bytes(), &v, 50, 0) {
            Err(Error::Format { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let v = vocab(&["a"]);
        let text = line("a", 3, 0.0) + &line("b", 3, 0.0);
        assert!(matches!(load_embeddings(text.as_bytes(), &v, 50, 0), Err(Error::Config(_))));
    }
}
