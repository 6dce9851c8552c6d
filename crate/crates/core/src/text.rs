//! Text-to-feature pipeline: cleaning, stop-word removal, a pluggable
//! rule-based stemmer, signed feature hashing over unigrams or bigrams,
//! and smooth TF-IDF fit/transform.
//!
//! Everything here is a pure function of (input, configuration): the hash
//! function is fixed (FNV-1a with its published constants), so the same
//! corpus and the same `n_hash` give bit-identical vectors across runs and
//! platforms.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Lowercase, replace punctuation and other non-alphanumeric characters
/// (including the U+FFFD marker left by lossy decoding) with spaces, and
/// split on whitespace. Digits are kept.
pub fn clean(text: &str) -> Vec<String> {
    let mut normalized = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                normalized.push(lc);
            }
        } else {
            normalized.push(' ');
        }
    }
    normalized
        .split_whitespace()
        .map(|t| t.to_string())
        .collect()
}

/// Order-preserving stop-word filter.
pub fn remove_stopwords(tokens: Vec<String>, stoplist: &HashSet<String>) -> Vec<String> {
    tokens
        .into_iter()
        .filter(|t| !stoplist.contains(t.as_str()))
        .collect()
}

/// A small built-in French stop list; callers may load their own with
/// [`load_stopwords`].
pub fn french_stopwords() -> HashSet<String> {
    [
        "le", "la", "les", "de", "des", "du", "un", "une", "et", "ou", "a", "à", "au", "aux", "en",
        "par", "pour", "sur", "dans", "avec", "sans", "ce", "cet", "cette", "ces", "il", "elle",
        "ils", "elles", "je", "tu", "on", "nous", "vous", "ne", "pas", "plus", "que", "qui",
        "quoi", "dont", "se", "sa", "son", "ses", "mon", "ma", "mes", "ton", "ta", "tes", "est",
        "sont", "être", "avoir", "d", "l", "s", "c", "n", "y", "si", "mais", "donc", "or", "ni",
        "car",
    ]
    .into_iter()
    .map(|s| s.to_string())
    .collect()
}

/// One lowercase token per line; blank lines ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let reader = BufReader::new(File::open(path)?);
    let mut set = HashSet::new();
    for line in reader.lines() {
        let line = line?;
        let tok = line.trim();
        if !tok.is_empty() {
            set.insert(tok.to_lowercase());
        }
    }
    Ok(set)
}

/// Reduces tokens toward their root. Implementations must be deterministic
/// and never grow the token.
pub trait Stemmer: Sync + Send {
    fn stem(&self, token: &str) -> String;
}

/// Rule-based French plural stripper: drops a trailing `s` (not after
/// another `s`) and the `x` of `-aux`/`-eux`, repeating until no rule
/// fires. Tokens shorter than 3 characters pass through. Idempotent by
/// construction.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrenchSuffixStemmer;

impl Stemmer for FrenchSuffixStemmer {
    fn stem(&self, token: &str) -> String {
        let mut cur = token.to_string();
        loop {
            let n = cur.chars().count();
            if n < 3 {
                return cur;
            }
            if cur.ends_with('s') && !cur.ends_with("ss") {
                cur.pop();
                continue;
            }
            if cur.ends_with("aux") || cur.ends_with("eux") {
                cur.pop();
                continue;
            }
            return cur;
        }
    }
}

/// Stemmer that leaves every token unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityStemmer;

impl Stemmer for IdentityStemmer {
    fn stem(&self, token: &str) -> String {
        token.to_string()
    }
}

/// FNV-1a 64-bit with the published offset basis and prime.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// FNV-1a 32-bit, used as the independent sign hash.
fn fnv1a32(bytes: &[u8]) -> u32 {
    let mut hash = 0x811c9dc5u32;
    for &b in bytes {
        hash ^= b as u32;
        hash = hash.wrapping_mul(0x01000193);
    }
    hash
}

/// Which grams feed the hash: single tokens, or consecutive pairs only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NGram {
    Unigram,
    Bigram,
}

/// Hash a token list into a sparse count vector of width `n_hash`,
/// sorted by feature index. With `signed`, each gram contributes ±1
/// according to an independent fixed hash, which keeps colliding grams
/// from always adding up.
pub fn hash_features(
    tokens: &[String],
    n_hash: usize,
    ngram: NGram,
    signed: bool,
) -> Vec<(u32, f64)> {
    assert!(n_hash >= 1, "n_hash must be >= 1");
    let mut acc: Vec<(u32, f64)> = Vec::new();
    let mut add = |gram: &str| {
        let bytes = gram.as_bytes();
        let index = (fnv1a64(bytes) % n_hash as u64) as u32;
        let value = if signed {
            if fnv1a32(bytes) & 1 == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            1.0
        };
        acc.push((index, value));
    };
    match ngram {
        NGram::Unigram => {
            for t in tokens {
                add(t);
            }
        }
        NGram::Bigram => {
            for pair in tokens.windows(2) {
                let gram = format!("{} {}", pair[0], pair[1]);
                add(&gram);
            }
        }
    }
    acc.sort_by_key(|e| e.0);
    let mut out: Vec<(u32, f64)> = Vec::new();
    for (idx, val) in acc {
        match out.last_mut() {
            Some(last) if last.0 == idx => last.1 += val,
            _ => out.push((idx, val)),
        }
    }
    out.retain(|e| e.1 != 0.0);
    out
}

/// Whether a matrix holds raw hashed counts or TF-IDF weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Counts,
    Tfidf,
}

/// Sparse document-by-feature matrix produced by the hashing trick.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedMatrix {
    pub n_hash: usize,
    pub stage: Stage,
    /// Per-document sorted (feature, weight) lists.
    pub rows: Vec<Vec<(u32, f64)>>,
}

impl HashedMatrix {
    pub fn n_docs(&self) -> usize {
        self.rows.len()
    }

    /// Triplet text dump with a `n_docs n_hash stage` header.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let stage = match self.stage {
            Stage::Counts => "counts",
            Stage::Tfidf => "tfidf",
        };
        let _ = writeln!(out, "{} {} {}", self.n_docs(), self.n_hash, stage);
        for (doc, row) in self.rows.iter().enumerate() {
            for &(feature, weight) in row {
                let _ = writeln!(out, "{doc}\t{feature}\t{weight}");
            }
        }
        File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Empty)??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `n_docs n_hash stage`".into(),
            });
        }
        let bad = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            msg: e.to_string(),
        };
        let n_docs: usize = fields[0].parse().map_err(|e| bad(1, &e))?;
        let n_hash: usize = fields[1].parse().map_err(|e| bad(1, &e))?;
        let stage = match fields[2] {
            "counts" => Stage::Counts,
            "tfidf" => Stage::Tfidf,
            other => return Err(bad(1, &format!("unknown stage `{other}`"))),
        };
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_docs];
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(i + 2, &"expected `doc\\tfeature\\tweight`"));
            }
            let doc: usize = fields[0].parse().map_err(|e| bad(i + 2, &e))?;
            let feature: u32 = fields[1].parse().map_err(|e| bad(i + 2, &e))?;
            let weight: f64 = fields[2].parse().map_err(|e| bad(i + 2, &e))?;
            if doc >= n_docs || feature as usize >= n_hash {
                return Err(bad(i + 2, &"index out of bounds"));
            }
            rows[doc].push((feature, weight));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
        }
        Ok(HashedMatrix {
            n_hash,
            stage,
            rows,
        })
    }
}

/// Smooth inverse document frequencies fitted on a training matrix.
#[derive(Debug, Clone)]
pub struct IdfWeights {
    pub n_hash: usize,
    pub idf: Vec<f64>,
    /// Training document count D.
    pub n_train_docs: usize,
}

impl IdfWeights {
    /// Dump with a `n_hash D` header followed by one idf value per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n_hash, self.n_train_docs);
        for v in &self.idf {
            let _ = writeln!(out, "{v}");
        }
        File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::Empty)??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: 1,
                msg: "header must be `n_hash D`".into(),
            });
        }
        let bad = |line: usize, e: &dyn std::fmt::Display| Error::Parse {
            line,
            msg: e.to_string(),
        };
        let n_hash: usize = fields[0].parse().map_err(|e| bad(1, &e))?;
        let n_train_docs: usize = fields[1].parse().map_err(|e| bad(1, &e))?;
        let mut idf = Vec::with_capacity(n_hash);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            idf.push(line.trim().parse::<f64>().map_err(|e| bad(i + 2, &e))?);
        }
        if idf.len() != n_hash {
            return Err(Error::Parse {
                line: idf.len() + 1,
                msg: format!("expected {n_hash} idf values, got {}", idf.len()),
            });
        }
        Ok(IdfWeights {
            n_hash,
            idf,
            n_train_docs,
        })
    }
}

/// Fit `idf[m] = ln((D+1) / (f(m)+1))` where `f(m)` counts the documents
/// with a nonzero (after sign cancellation) feature m.
pub fn tfidf_fit(train: &HashedMatrix) -> Result<IdfWeights> {
    if train.stage != Stage::Counts {
        return Err(Error::InvalidArgument(
            "idf is fitted on a counts-stage matrix".into(),
        ));
    }
    let d = train.n_docs();
    let mut doc_freq = vec![0usize; train.n_hash];
    for row in &train.rows {
        for &(feature, weight) in row {
            if weight != 0.0 {
                doc_freq[feature as usize] += 1;
            }
        }
    }
    let idf = doc_freq
        .iter()
        .map(|&f| ((d as f64 + 1.0) / (f as f64 + 1.0)).ln())
        .collect();
    Ok(IdfWeights {
        n_hash: train.n_hash,
        idf,
        n_train_docs: d,
    })
}

/// Reweight every entry by the fitted idf: `V_m(d) = TF(m, d) × IDF(m)`.
/// The same fitted weights apply to train and test.
pub fn tfidf_transform(matrix: &HashedMatrix, idf: &IdfWeights) -> Result<HashedMatrix> {
    if matrix.n_hash != idf.n_hash {
        return Err(Error::DimensionMismatch(format!(
            "matrix has n_hash {}, idf has {}",
            matrix.n_hash, idf.n_hash
        )));
    }
    let rows = matrix
        .rows
        .iter()
        .map(|row| {
            row.iter()
                .map(|&(feature, weight)| (feature, weight * idf.idf[feature as usize]))
                .collect()
        })
        .collect();
    Ok(HashedMatrix {
        n_hash: matrix.n_hash,
        stage: Stage::Tfidf,
        rows,
    })
}

/// End-to-end corpus vectorizer: clean, stop-word filter, stem, hash.
pub struct TextPipeline {
    pub stoplist: HashSet<String>,
    pub stemmer: Option<Box<dyn Stemmer>>,
    pub n_hash: usize,
    pub ngram: NGram,
    pub signed: bool,
}

impl TextPipeline {
    pub fn new(n_hash: usize) -> Self {
        TextPipeline {
            stoplist: french_stopwords(),
            stemmer: Some(Box::new(FrenchSuffixStemmer)),
            n_hash,
            ngram: NGram::Unigram,
            signed: true,
        }
    }

    /// Tokens of one document after cleaning, filtering and stemming.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        let tokens = remove_stopwords(clean(text), &self.stoplist);
        match &self.stemmer {
            Some(stemmer) => tokens.iter().map(|t| stemmer.stem(t)).collect(),
            None => tokens,
        }
    }

    /// Vectorize a corpus into a counts-stage matrix. Documents are
    /// processed independently (and in parallel); the result is a pure
    /// function of the corpus and this configuration.
    pub fn vectorize(&self, docs: &[String]) -> HashedMatrix {
        let rows: Vec<Vec<(u32, f64)>> = docs
            .par_iter()
            .map(|doc| hash_features(&self.tokens(doc), self.n_hash, self.ngram, self.signed))
            .collect();
        HashedMatrix {
            n_hash: self.n_hash,
            stage: Stage::Counts,
            rows,
        }
    }
}

/// Read a corpus with one document per line. With `labeled`, each line is
/// `label<TAB>text`; the label list is returned alongside the documents.
pub fn read_corpus(path: &Path, labeled: bool) -> Result<(Vec<String>, Option<Vec<String>>)> {
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if labeled {
            match line.split_once('\t') {
                Some((label, text)) => {
                    labels.push(label.to_string());
                    docs.push(text.to_string());
                }
                None => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "expected `label<TAB>text`".into(),
                    })
                }
            }
        } else {
            docs.push(line);
        }
    }
    Ok((docs, if labeled { Some(labels) } else { None }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clean_applies_stated_rules() {
        assert_eq!(clean("Écran LCD, 22'' !"), vec!["écran", "lcd", "22"]);
        assert_eq!(clean(""), Vec::<String>::new());
        assert_eq!(clean("a\u{FFFD}b"), vec!["a", "b"]);
    }

    #[test]
    fn stopword_filter_preserves_order() {
        let stop: HashSet<String> = ["le".to_string()].into_iter().collect();
        let toks = vec!["le".to_string(), "chat".to_string()];
        assert_eq!(remove_stopwords(toks, &stop), vec!["chat"]);

        let empty = HashSet::new();
        let toks = vec!["a".to_string(), "b".to_string()];
        assert_eq!(remove_stopwords(toks.clone(), &empty), toks);

        let all: HashSet<String> = toks.iter().cloned().collect();
        assert!(remove_stopwords(toks, &all).is_empty());
    }

    #[test]
    fn stemmer_rules() {
        let s = FrenchSuffixStemmer;
        assert_eq!(s.stem("chats"), "chat");
        assert_eq!(s.stem("eaux"), "eau");
        assert_eq!(s.stem("os"), "os"); // shorter than 3 chars
        assert_eq!(s.stem("basse"), "basse");
    }

    #[test]
    fn hashing_is_deterministic() {
        let toks: Vec<String> = ["un", "deux", "trois", "deux"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let a = hash_features(&toks, 1 << 12, NGram::Unigram, true);
        let b = hash_features(&toks, 1 << 12, NGram::Unigram, true);
        assert_eq!(a, b);
    }

    #[test]
    fn bigrams_emit_consecutive_pairs_only() {
        let toks: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let vec = hash_features(&toks, 1 << 16, NGram::Bigram, false);
        let total: f64 = vec.iter().map(|e| e.1).sum();
        assert_eq!(total, 2.0); // "a b" and "b c"
    }

    #[test]
    fn single_bucket_collects_all_counts() {
        let toks: Vec<String> = ["x", "y", "z", "x"].iter().map(|s| s.to_string()).collect();
        let vec = hash_features(&toks, 1, NGram::Unigram, false);
        assert_eq!(vec, vec![(0, 4.0)]);
    }

    #[test]
    fn idf_matches_the_smooth_formula() {
        // 3 documents; feature of doc count 1 gets ln 2
        let m = HashedMatrix {
            n_hash: 4,
            stage: Stage::Counts,
            rows: vec![
                vec![(0, 2.0), (1, 1.0)],
                vec![(1, 3.0)],
                vec![(1, 1.0), (2, -1.0)],
            ],
        };
        let idf = tfidf_fit(&m).unwrap();
        assert_eq!(idf.n_train_docs, 3);
        assert!((idf.idf[0] - 2.0f64.ln()).abs() < 1e-15); // f=1
        assert!((idf.idf[1] - 0.0).abs() < 1e-15); // f=D
        assert!((idf.idf[2] - 2.0f64.ln()).abs() < 1e-15); // f=1 (signed count)
        assert!((idf.idf[3] - 4.0f64.ln()).abs() < 1e-15); // f=0
    }

    #[test]
    fn transform_multiplies_counts_by_idf() {
        let m = HashedMatrix {
            n_hash: 2,
            stage: Stage::Counts,
            rows: vec![vec![(0, 2.0)], vec![]],
        };
        let idf = IdfWeights {
            n_hash: 2,
            idf: vec![2.0f64.ln(), 0.0],
            n_train_docs: 3,
        };
        let out = tfidf_transform(&m, &idf).unwrap();
        assert_eq!(out.stage, Stage::Tfidf);
        assert!((out.rows[0][0].1 - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        assert!(out.rows[1].is_empty());

        let zero_idf = IdfWeights {
            n_hash: 2,
            idf: vec![0.0, 0.0],
            n_train_docs: 1,
        };
        let out = tfidf_transform(&m, &zero_idf).unwrap();
        assert!(out.rows.iter().flatten().all(|e| e.1 == 0.0));

        let wrong = IdfWeights {
            n_hash: 3,
            idf: vec![0.0; 3],
            n_train_docs: 1,
        };
        assert!(tfidf_transform(&m, &wrong).is_err());
    }

    #[test]
    fn matrix_save_load_round_trip() {
        let m = HashedMatrix {
            n_hash: 8,
            stage: Stage::Counts,
            rows: vec![vec![(1, 2.0), (5, -1.0)], vec![], vec![(0, 1.5)]],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("matrix.txt");
        m.save(&path).unwrap();
        let back = HashedMatrix::load(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn labeled_corpus_reader_splits_on_tab() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.tsv");
        std::fs::write(&path, "Sports\tmatch ce soir\nWorld\tle monde entier\n").unwrap();
        let (docs, labels) = read_corpus(&path, true).unwrap();
        assert_eq!(docs, vec!["match ce soir", "le monde entier"]);
        assert_eq!(labels.unwrap(), vec!["Sports", "World"]);
    }

    #[test]
    fn fitted_idf_never_reads_test_frequencies() {
        let pipeline = TextPipeline::new(256);
        let train: Vec<String> = ["le chat dort", "chien rapide", "chat noir"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let test: Vec<String> = ["texte de test", "autre document", "chat final"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let idf = tfidf_fit(&pipeline.vectorize(&train)).unwrap();
        let before = idf.idf.clone();

        // transform the test corpus and a permutation of it: the fitted
        // weights are untouched and each document's row depends only on
        // its own content
        let t1 = tfidf_transform(&pipeline.vectorize(&test), &idf).unwrap();
        let permuted: Vec<String> = vec![test[2].clone(), test[0].clone(), test[1].clone()];
        let t2 = tfidf_transform(&pipeline.vectorize(&permuted), &idf).unwrap();
        assert_eq!(idf.idf, before);
        assert_eq!(t1.rows[0], t2.rows[1]);
        assert_eq!(t1.rows[1], t2.rows[2]);
        assert_eq!(t1.rows[2], t2.rows[0]);
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(text in ".{0,120}") {
            let once = clean(&text);
            let again = clean(&once.join(" "));
            prop_assert_eq!(once, again);
        }

        #[test]
        fn stem_is_idempotent_and_never_grows(token in "[a-zéèêàûô]{0,12}") {
            let s = FrenchSuffixStemmer;
            let once = s.stem(&token);
            prop_assert!(once.chars().count() <= token.chars().count());
            prop_assert_eq!(s.stem(&once), once.clone());
        }

        #[test]
        fn unsigned_hashing_conserves_counts(
            tokens in proptest::collection::vec("[a-z]{1,6}", 0..40),
            n_hash in 1usize..64,
        ) {
            let tokens: Vec<String> = tokens;
            let vec = hash_features(&tokens, n_hash, NGram::Unigram, false);
            let total: f64 = vec.iter().map(|e| e.1).sum();
            prop_assert_eq!(total, tokens.len() as f64);
            // sorted, within bounds
            for w in vec.windows(2) {
                prop_assert!(w[0].0 < w[1].0);
            }
            for e in &vec {
                prop_assert!((e.0 as usize) < n_hash);
            }
        }
    }
}
