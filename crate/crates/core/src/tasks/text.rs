//! Byte-level character language modelling: corpus splits, vocabulary,
//! non-overlapping windows, softmax cross-entropy, and bits per character.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Sorted byte symbols with dense ids; the last id is reserved for bytes
/// not seen in the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<u8>,
    lookup: [Option<usize>; 256],
}

impl Vocabulary {
    pub fn from_symbols(mut symbols: Vec<u8>) -> Self {
        symbols.sort_unstable();
        symbols.dedup();
        let mut lookup = [None; 256];
        for (id, &b) in symbols.iter().enumerate() {
            lookup[b as usize] = Some(id);
        }
        Vocabulary { symbols, lookup }
    }

    pub fn build(text: &[u8]) -> Self {
        let mut seen = [false; 256];
        for &b in text {
            seen[b as usize] = true;
        }
        Vocabulary::from_symbols((0..=255u8).filter(|&b| seen[b as usize]).collect())
    }

    /// Number of output classes, including the unknown id.
    pub fn size(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn unknown_id(&self) -> usize {
        self.symbols.len()
    }

    pub fn id(&self, byte: u8) -> usize {
        self.lookup[byte as usize].unwrap_or(self.unknown_id())
    }

    pub fn symbol(&self, id: usize) -> Option<u8> {
        self.symbols.get(id).copied()
    }

    pub fn encode(&self, text: &[u8]) -> Vec<usize> {
        text.iter().map(|&b| self.id(b)).collect()
    }

    /// One `id<TAB>byte` line per symbol, then `id<TAB>unk`.
    pub fn to_sidecar(&self) -> String {
        let mut s = String::new();
        for (id, b) in self.symbols.iter().enumerate() {
            s.push_str(&format!("{id}\t{b}\n"));
        }
        s.push_str(&format!("{}\tunk\n", self.unknown_id()));
        s
    }

    pub fn from_sidecar(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Config {
                line: lineno + 1,
                msg: format!("bad vocabulary line `{line}`"),
            };
            let (id, sym) = line.split_once('\t').ok_or_else(bad)?;
            let id: usize = id.parse().map_err(|_| bad())?;
            if sym == "unk" {
                if id != symbols.len() {
                    return Err(bad());
                }
                continue;
            }
            if id != symbols.len() {
                return Err(bad());
            }
            symbols.push(sym.parse::<u8>().map_err(|_| bad())?);
        }
        Ok(Vocabulary::from_symbols(symbols))
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_sidecar()).map_err(|e| Error::io(path, e))
    }
}

/// Encoded train/dev/test splits sharing one vocabulary built from train.
#[derive(Debug, Clone)]
pub struct CharCorpus {
    pub vocab: Vocabulary,
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

impl CharCorpus {
    /// Split by byte offsets into `train_frac`, `dev_frac`, and the rest.
    pub fn from_bytes(text: &[u8], train_frac: f64, dev_frac: f64) -> Result<Self> {
        if !(train_frac > 0.0 && dev_frac >= 0.0 && train_frac + dev_frac <= 1.0) {
            return Err(Error::param(format!(
                "bad split fractions train={train_frac} dev={dev_frac}"
            )));
        }
        let n = text.len();
        let a = (n as f64 * train_frac).round() as usize;
        let b = ((n as f64 * (train_frac + dev_frac)).round() as usize).min(n);
        let vocab = Vocabulary::build(&text[..a]);
        Ok(CharCorpus {
            train: vocab.encode(&text[..a]),
            dev: vocab.encode(&text[a..b]),
            test: vocab.encode(&text[b..]),
            vocab,
        })
    }

    /// Default 90/5/5 split.
    pub fn from_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        CharCorpus::from_bytes(&bytes, 0.9, 0.05)
    }
}

/// Start offsets of consecutive non-overlapping input windows. Window `k`
/// reads `ids[s..s+seq_len]` and predicts `ids[s+1..s+seq_len+1]`; a
/// trailing window without a full set of targets is dropped.
pub fn char_windows(len: usize, seq_len: usize) -> Result<Vec<usize>> {
    if seq_len == 0 {
        return Err(Error::param("seq_len must be >= 1"));
    }
    if len < seq_len + 1 {
        return Err(Error::param(format!(
            "corpus of {len} symbols is shorter than seq_len + 1 = {}",
            seq_len + 1
        )));
    }
    Ok((0..(len - 1) / seq_len).map(|k| k * seq_len).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharBatch {
    pub inputs: Vec<Vec<usize>>,
    pub targets: Vec<Vec<usize>>,
}

impl CharBatch {
    pub fn from_starts(ids: &[usize], starts: &[usize], seq_len: usize) -> Self {
        CharBatch {
            inputs: starts.iter().map(|&s| ids[s..s + seq_len].to_vec()).collect(),
            targets: starts
                .iter()
                .map(|&s| ids[s + 1..s + seq_len + 1].to_vec())
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Windows in corpus order grouped into batches; the last batch may be
/// smaller than `batch_size`.
pub fn char_batches<'a>(
    ids: &'a [usize],
    seq_len: usize,
    batch_size: usize,
) -> Result<impl Iterator<Item = CharBatch> + 'a> {
    if batch_size == 0 {
        return Err(Error::param("batch_size must be >= 1"));
    }
    let starts = char_windows(ids.len(), seq_len)?;
    Ok((0..starts.len())
        .step_by(batch_size)
        .map(move |i| {
            let end = (i + batch_size).min(starts.len());
            CharBatch::from_starts(ids, &starts[i..end], seq_len)
        }))
}

/// Cross-entropy in nats of `softmax(logits)` against `target`, and its
/// gradient `softmax(logits) − onehot(target)`.
pub fn softmax_xent(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(logits.len() >= 2 && target < logits.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    let log_sum = sum.ln() + max;
    probs.iter_mut().for_each(|p| *p /= sum);
    let loss = log_sum - logits[target];
    probs[target] -= 1.0;
    (loss, probs)
}

pub fn bits_per_character(total_nats: f64, total_symbols: usize) -> f64 {
    total_nats / total_symbols as f64 / std::f64::consts::LN_2
}
