//! TF-IDF featurization of instruction text.
//!
//! Terms are word n-grams over normalized tokens (prefixed `w:`) and
//! character n-grams over the space-padded normalized text (prefixed `c:`).
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`; rows are L2-normalized.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::metrics::{normalize, NormalizationPolicy};
use crate::{Error, Result};

/// Sparse row as `(column, value)` pairs sorted by column.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVec(pub Vec<(usize, f64)>);

impl SparseVec {
    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut a, mut b) = (self.0.iter().peekable(), other.0.iter().peekable());
        let mut acc = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    acc += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&(_, v)| v == 0.0)
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        SparseVec(
            dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturizerConfig {
    /// Inclusive word n-gram range, `None` to disable.
    pub word_ngrams: Option<(usize, usize)>,
    /// Inclusive character n-gram range, `None` to disable.
    pub char_ngrams: Option<(usize, usize)>,
    pub min_df: usize,
    pub sublinear_tf: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        FeaturizerConfig {
            word_ngrams: Some((1, 2)),
            char_ngrams: Some((3, 5)),
            min_df: 1,
            sublinear_tf: false,
        }
    }
}

impl FeaturizerConfig {
    pub fn words_only(lo: usize, hi: usize) -> Self {
        FeaturizerConfig {
            word_ngrams: Some((lo, hi)),
            char_ngrams: None,
            ..Default::default()
        }
    }

    /// Short label such as `w1-2+c3-5` or `w1-1:df2:sub`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some((lo, hi)) = self.word_ngrams {
            parts.push(format!("w{lo}-{hi}"));
        }
        if let Some((lo, hi)) = self.char_ngrams {
            parts.push(format!("c{lo}-{hi}"));
        }
        let mut label = parts.join("+");
        if self.min_df > 1 {
            label.push_str(&format!(":df{}", self.min_df));
        }
        if self.sublinear_tf {
            label.push_str(":sub");
        }
        label
    }

    /// Parses a label produced by [`FeaturizerConfig::label`].
    pub fn parse(label: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad featurizer spec {label:?}"));
        let range = |s: &str| -> Result<(usize, usize)> {
            let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
            let lo: usize = lo.parse().map_err(|_| bad())?;
            let hi: usize = hi.parse().map_err(|_| bad())?;
            if lo == 0 || lo > hi {
                return Err(bad());
            }
            Ok((lo, hi))
        };
        let mut cfg = FeaturizerConfig {
            word_ngrams: None,
            char_ngrams: None,
            min_df: 1,
            sublinear_tf: false,
        };
        let mut pieces = label.split(':');
        for part in pieces.next().ok_or_else(bad)?.split('+') {
            if let Some(r) = part.strip_prefix('w') {
                cfg.word_ngrams = Some(range(r)?);
            } else if let Some(r) = part.strip_prefix('c') {
                cfg.char_ngrams = Some(range(r)?);
            } else {
                return Err(bad());
            }
        }
        for opt in pieces {
            if opt == "sub" {
                cfg.sublinear_tf = true;
            } else if let Some(n) = opt.strip_prefix("df") {
                cfg.min_df = n.parse().map_err(|_| bad())?;
            } else {
                return Err(bad());
            }
        }
        Ok(cfg)
    }

    fn term_counts(&self, text: &str) -> HashMap<String, usize> {
        let tokens = normalize(text, &NormalizationPolicy::default());
        let mut counts = HashMap::new();
        if let Some((lo, hi)) = self.word_ngrams {
            for n in lo..=hi {
                for gram in tokens.windows(n) {
                    *counts.entry(format!("w:{}", gram.join(" "))).or_insert(0) += 1;
                }
            }
        }
        if let Some((lo, hi)) = self.char_ngrams {
            if !tokens.is_empty() {
                let chars: Vec<char> = format!(" {} ", tokens.join(" ")).chars().collect();
                for n in lo..=hi {
                    for gram in chars.windows(n) {
                        let s: String = gram.iter().collect();
                        *counts.entry(format!("c:{s}")).or_insert(0) += 1;
                    }
                }
            }
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeaturizerConfig,
    /// Term → column; columns are dense `0..V` in sorted term order.
    pub vocab: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
}

impl Featurizer {
    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn transform(&self, text: &str) -> SparseVec {
        let mut row: Vec<(usize, f64)> = self
            .config
            .term_counts(text)
            .into_iter()
            .filter_map(|(term, count)| {
                let col = *self.vocab.get(&term)?;
                let tf = if self.config.sublinear_tf {
                    1.0 + (count as f64).ln()
                } else {
                    count as f64
                };
                Some((col, tf * self.idf[col]))
            })
            .collect();
        row.sort_unstable_by_key(|&(c, _)| c);
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        SparseVec(row)
    }
}

pub fn fit_featurizer<S: AsRef<str>>(instructions: &[S], config: &FeaturizerConfig) -> Result<Featurizer> {
    if instructions.is_empty() {
        return Err(Error::Empty("featurizer corpus"));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for text in instructions {
        let terms: BTreeSet<String> = config.term_counts(text.as_ref()).into_keys().collect();
        for t in terms {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n = instructions.len() as f64;
    let mut vocab = BTreeMap::new();
    let mut idf = Vec::new();
    for (term, count) in df.into_iter().filter(|(_, c)| *c >= config.min_df) {
        vocab.insert(term, idf.len());
        idf.push(((1.0 + n) / (1.0 + count as f64)).ln() + 1.0);
    }
    Ok(Featurizer {
        config: config.clone(),
        vocab,
        idf,
    })
}

pub fn featurize(featurizer: &Featurizer, instruction: &str) -> SparseVec {
    featurizer.transform(instruction)
}
