//! Vocabulary, the word-embedding map `e_t = V w_t`, and skip-gram training
//! with negative sampling.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{sigmoid, SeededRng, Tensor};

pub const UNKNOWN_TOKEN: &str = "<unk>";
pub const UNKNOWN_INDEX: usize = 0;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("token index {index} out of range for vocabulary of {size}")]
    OutOfRange { index: usize, size: usize },
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Lowercases, splits on whitespace and strips punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Dense word → index map with the unknown token at index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Words ordered by descending frequency, ties broken lexicographically.
    /// Words seen fewer than `min_count` times are left out and map to unknown.
    pub fn build(corpus: &[Vec<String>], min_count: usize) -> Result<Self, EmbeddingError> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(EmbeddingError::Input("corpus is empty".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in corpus.iter().flatten() {
            if w != UNKNOWN_TOKEN {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_words(kept.into_iter().map(|(w, _)| w.to_string())))
    }

    /// Vocabulary from an ordered word list; the unknown token is prepended.
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let mut all = vec![UNKNOWN_TOKEN.to_string()];
        all.extend(words.into_iter().filter(|w| w != UNKNOWN_TOKEN));
        let index = all.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words: all, index }
    }

    /// Size including the unknown token.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn word(&self, i: usize) -> Option<&str> {
        self.words.get(i).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn index_of(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNKNOWN_INDEX)
    }

    /// Token indices, plus the words that fell back to unknown.
    pub fn encode(&self, tokens: &[String]) -> (Vec<usize>, Vec<String>) {
        let mut unknown = Vec::new();
        let ids = tokens
            .iter()
            .map(|t| match self.get(t) {
                Some(i) => i,
                None => {
                    unknown.push(t.clone());
                    UNKNOWN_INDEX
                }
            })
            .collect();
        (ids, unknown)
    }
}

/// `V`, an `n_e × d` matrix whose column `w` embeds word `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    v: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedSentence {
    pub vectors: Vec<Tensor>,
    pub tokens: Vec<usize>,
}

impl EmbeddedSentence {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

impl EmbeddingMatrix {
    pub fn new(v: Tensor) -> Result<Self, EmbeddingError> {
        if v.shape().len() != 2 {
            return Err(EmbeddingError::Input(format!(
                "embedding matrix must be 2-D, got {:?}",
                v.shape()
            )));
        }
        Ok(Self { v })
    }

    pub fn dim(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn vocab_size(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor {
        &self.v
    }

    pub fn column(&self, w: usize) -> Result<Tensor, EmbeddingError> {
        if w >= self.vocab_size() {
            return Err(EmbeddingError::OutOfRange {
                index: w,
                size: self.vocab_size(),
            });
        }
        Ok(self.v.column(w).expect("index checked"))
    }

    /// `e_t = V w_t` for each token; the one-hot product is a column lookup.
    pub fn embed(&self, tokens: &[usize]) -> Result<EmbeddedSentence, EmbeddingError> {
        if tokens.is_empty() {
            return Err(EmbeddingError::Input("sentence has no tokens".into()));
        }
        let vectors = tokens.iter().map(|&t| self.column(t)).collect::<Result<_, _>>()?;
        Ok(EmbeddedSentence {
            vectors,
            tokens: tokens.to_vec(),
        })
    }

    pub fn cosine(&self, a: usize, b: usize) -> Result<f64, EmbeddingError> {
        let (x, y) = (self.column(a)?, self.column(b)?);
        let dot: f64 = x.data().iter().zip(y.data()).map(|(p, q)| p * q).sum();
        Ok(dot / (x.norm() * y.norm()).max(f64::MIN_POSITIVE))
    }

    /// Writes `d n_e`, then one line per word: the token and its `n_e` values.
    pub fn save(&self, vocab: &Vocabulary, path: &Path) -> Result<(), EmbeddingError> {
        if vocab.len() != self.vocab_size() {
            return Err(EmbeddingError::Input(format!(
                "vocabulary has {} words but matrix has {} columns",
                vocab.len(),
                self.vocab_size()
            )));
        }
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(out, "{} {}", self.vocab_size(), self.dim())?;
        for (w, word) in vocab.words().iter().enumerate() {
            write!(out, "{word}")?;
            for r in 0..self.dim() {
                write!(out, " {}", self.v.data()[r * self.vocab_size() + w])?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the text format written by [`EmbeddingMatrix::save`]. A file
    /// without the unknown token gets a zero vector for it at index 0.
    pub fn load(path: &Path) -> Result<(Vocabulary, Self), EmbeddingError> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(EmbeddingError::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let mut fields = header.split_whitespace();
        let parse_usize = |s: Option<&str>, what: &str| -> Result<usize, EmbeddingError> {
            s.and_then(|v| v.parse().ok()).ok_or(EmbeddingError::Parse {
                line: 1,
                msg: format!("header must be `d n_e`, bad {what}"),
            })
        };
        let d = parse_usize(fields.next(), "d")?;
        let ne = parse_usize(fields.next(), "n_e")?;

        let mut words = Vec::with_capacity(d);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(d);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line").to_string();
            let vals: Vec<f64> = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| EmbeddingError::Parse {
                        line: line_no,
                        msg: format!("bad value `{p}`: {e}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            if vals.len() != ne {
                return Err(EmbeddingError::Parse {
                    line: line_no,
                    msg: format!("expected {ne} values, found {}", vals.len()),
                });
            }
            if words.contains(&word) {
                return Err(EmbeddingError::Parse {
                    line: line_no,
                    msg: format!("duplicate token `{word}`"),
                });
            }
            words.push(word);
            vectors.push(vals);
        }
        if words.len() != d {
            return Err(EmbeddingError::Parse {
                line: 1,
                msg: format!("header declares {d} words, file has {}", words.len()),
            });
        }

        let unk_vec = words
            .iter()
            .position(|w| w == UNKNOWN_TOKEN)
            .map(|p| vectors[p].clone())
            .unwrap_or_else(|| vec![0.0; ne]);
        let vocab = Vocabulary::from_words(words.iter().cloned());
        let mut columns = vec![unk_vec];
        columns.extend(
            words
                .iter()
                .zip(vectors)
                .filter(|(w, _)| w.as_str() != UNKNOWN_TOKEN)
                .map(|(_, v)| v),
        );
        let cols = columns.len();
        let v = Tensor::from_fn(&[ne, cols], |k| columns[k % cols][k / cols]);
        Ok((vocab, Self { v }))
    }
}

/// Skip-gram settings. The default epoch count is low on purpose: on the tiny
/// synthetic corpora, words that only swap places (such as `left` and
/// `right`) converge toward the same vector under long training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            window: 2,
            negatives: 5,
            epochs: 2,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

/// Trains `V` with skip-gram and negative sampling over the tokenized corpus.
///
/// Input vectors start uniform in `±0.5/n_e`, output vectors at zero. Negatives
/// are drawn from the unigram distribution raised to 0.75 and the learning
/// rate decays linearly to 1e-4 of its start.
pub fn train_embeddings(
    corpus: &[Vec<String>],
    vocab: &Vocabulary,
    cfg: &SkipGramConfig,
) -> Result<EmbeddingMatrix, EmbeddingError> {
    if cfg.dim < 2 {
        return Err(EmbeddingError::Input(format!(
            "embedding dim must be >= 2, got {}",
            cfg.dim
        )));
    }
    if cfg.window == 0 {
        return Err(EmbeddingError::Input("window must be positive".into()));
    }
    let sentences: Vec<Vec<usize>> = corpus.iter().map(|s| vocab.encode(s).0).collect();
    let total: usize = sentences.iter().map(Vec::len).sum();
    if total <= cfg.window {
        return Err(EmbeddingError::Input(format!(
            "corpus has {total} tokens, fewer than window + 1 = {}",
            cfg.window + 1
        )));
    }

    let d = vocab.len();
    let dim = cfg.dim;
    let mut rng = SeededRng::new(cfg.seed);
    let half = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..d * dim).map(|_| rng.uniform_range(-half, half)).collect();
    let mut output = vec![0.0; d * dim];

    let mut counts = vec![0usize; d];
    for &w in sentences.iter().flatten() {
        counts[w] += 1;
    }
    let table = unigram_table(&counts, 100_000);

    let total_steps = (cfg.epochs * total).max(1) as f64;
    let mut processed = 0usize;
    let mut grad_in = vec![0.0; dim];

    for _ in 0..cfg.epochs {
        for sent in &sentences {
            for (i, &center) in sent.iter().enumerate() {
                let lr = cfg.learning_rate * (1.0 - processed as f64 / total_steps).max(1e-4);
                processed += 1;
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(sent.len() - 1);
                for (j, &ctx) in sent.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad_in.iter_mut().for_each(|g| *g = 0.0);
                    let v = center * dim;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (ctx, 1.0)
                        } else {
                            let t = table[rng.below(table.len())];
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let u = target * dim;
                        let dot: f64 = (0..dim).map(|q| input[v + q] * output[u + q]).sum();
                        let g = lr * (label - sigmoid(dot));
                        for q in 0..dim {
                            grad_in[q] += g * output[u + q];
                            output[u + q] += g * input[v + q];
                        }
                    }
                    for q in 0..dim {
                        input[v + q] += grad_in[q];
                    }
                }
            }
        }
    }

    let v = Tensor::from_fn(&[dim, d], |k| input[(k % d) * dim + k / d]);
    if !v.all_finite() {
        return Err(EmbeddingError::Input("embedding training diverged".into()));
    }
    Ok(EmbeddingMatrix { v })
}

fn unigram_table(counts: &[usize], size: usize) -> Vec<usize> {
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut table = Vec::with_capacity(size);
    let mut cum = 0.0;
    for (w, &wt) in weights.iter().enumerate() {
        if wt == 0.0 {
            continue;
        }
        cum += wt / total;
        while (table.len() as f64) < cum * size as f64 && table.len() < size {
            table.push(w);
        }
    }
    if table.is_empty() {
        table.push(UNKNOWN_INDEX);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&[&str]]) -> Vec<Vec<String>> {
        s.iter().map(|r| r.iter().map(|w| w.to_string()).collect()).collect()
    }

    #[test]
    fn tokenizer_lowercases_and_strips() {
        assert_eq!(
            tokenize("A man, raises  the LEFT arm."),
            ["a", "man", "raises", "the", "left", "arm"]
        );
        assert!(tokenize(" ... ").is_empty());
    }

    #[test]
    fn vocabulary_counts_and_thresholds() {
        let corpus = toks(&[&["a", "man"], &["a", "woman"]]);
        let v = Vocabulary::build(&corpus, 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.words(), &["<unk>", "a", "man", "woman"]);
        assert_eq!(v, Vocabulary::build(&corpus, 1).unwrap());

        let v2 = Vocabulary::build(&corpus, 2).unwrap();
        assert_eq!(v2.words(), &["<unk>", "a"]);
        assert_eq!(v2.index_of("man"), UNKNOWN_INDEX);
        assert_eq!(v2.index_of("woman"), UNKNOWN_INDEX);

        assert!(Vocabulary::build(&[], 1).is_err());
        for i in 0..v.len() {
            assert_eq!(v.index_of(v.word(i).unwrap()), i);
        }
    }

    #[test]
    fn embed_identity_and_zero() {
        let m = EmbeddingMatrix::new(Tensor::identity(4)).unwrap();
        let e = m.embed(&[2]).unwrap();
        assert_eq!(e.vectors[0].data(), &[0.0, 0.0, 1.0, 0.0]);
        let z = EmbeddingMatrix::new(Tensor::zeros(&[3, 5])).unwrap();
        assert!(z.embed(&[0, 4, 2]).unwrap().vectors.iter().all(|v| v.sum() == 0.0));
        assert!(matches!(
            m.embed(&[4]),
            Err(EmbeddingError::OutOfRange { index: 4, size: 4 })
        ));
    }

    #[test]
    fn embed_equals_one_hot_product() {
        let mut rng = SeededRng::new(1);
        let v = rng.gaussian(&[3, 6]);
        let m = EmbeddingMatrix::new(v.clone()).unwrap();
        for t in 0..6 {
            let one_hot = Tensor::from_fn(&[6], |i| if i == t { 1.0 } else { 0.0 });
            let product = v.matmul(&one_hot).unwrap();
            assert_eq!(m.embed(&[t]).unwrap().vectors[0], product);
        }
    }

    #[test]
    fn file_round_trip() {
        let corpus = toks(&[&["raise", "left", "arm"], &["raise", "right", "arm"]]);
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let m = EmbeddingMatrix::new(SeededRng::new(3).gaussian(&[4, vocab.len()])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        m.save(&vocab, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("5 4\n<unk> "));
        let (v2, m2) = EmbeddingMatrix::load(&path).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(m2, m);
    }

    #[test]
    fn load_without_unknown_token() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        fs::write(&path, "2 2\nfoo 1 2\nbar 3 4\n").unwrap();
        let (vocab, m) = EmbeddingMatrix::load(&path).unwrap();
        assert_eq!(vocab.words(), &["<unk>", "foo", "bar"]);
        assert_eq!(m.column(0).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(m.column(2).unwrap().data(), &[3.0, 4.0]);

        fs::write(&path, "1 2\nfoo 1\n").unwrap();
        assert!(matches!(
            EmbeddingMatrix::load(&path),
            Err(EmbeddingError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn co_occurring_words_end_closer_than_separated_ones() {
        let mut rng = SeededRng::new(3);
        let pick = |rng: &mut SeededRng, set: &[&'static str]| set[(rng.uniform() * set.len() as f64) as usize];
        let (f1, f2, f3) = (["red", "green", "blue"], ["cat", "dog", "cow"], ["sun", "moon", "star"]);
        let mut corpus = Vec::new();
        for i in 0..200 {
            let s: Vec<&str> = match i % 3 {
                0 => vec![pick(&mut rng, &f1), "alpha", "beta", pick(&mut rng, &f1)],
                1 => vec![pick(&mut rng, &f2), "gamma", pick(&mut rng, &f2), pick(&mut rng, &f2)],
                _ => vec![pick(&mut rng, &f3), pick(&mut rng, &f3), "delta", pick(&mut rng, &f3)],
            };
            corpus.push(s.iter().map(|w| w.to_string()).collect::<Vec<_>>());
        }
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let cfg = SkipGramConfig {
            epochs: 20,
            ..Default::default()
        };
        let v = train_embeddings(&corpus, &vocab, &cfg).unwrap();
        assert!(v.matrix().data().iter().all(|x| x.is_finite()));
        let id = |w: &str| vocab.get(w).unwrap();
        let together = v.cosine(id("alpha"), id("beta")).unwrap();
        let apart = v.cosine(id("gamma"), id("delta")).unwrap();
        assert!(together > apart, "{together} vs {apart}");
        assert_eq!(train_embeddings(&corpus, &vocab, &cfg).unwrap(), v);
    }

    #[test]
    fn too_small_corpus_is_rejected() {
        let corpus = toks(&[&["a", "b"]]);
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let cfg = SkipGramConfig {
            window: 3,
            ..Default::default()
        };
        assert!(matches!(
            train_embeddings(&corpus, &vocab, &cfg),
            Err(EmbeddingError::Input(_))
        ));
    }
}
