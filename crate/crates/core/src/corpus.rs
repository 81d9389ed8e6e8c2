//! Document ingestion (JSON lines), the tokenizer boundary, uniform
//! subsampling and n-gram decontamination of target sets.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::selection::keep_count;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: u64,
    pub text: String,
    /// `None` until a tokenizer has run.
    pub token_ids: Option<Vec<u32>>,
    pub n_tokens: Option<u64>,
}

impl Document {
    pub fn new(doc_id: u64, text: impl Into<String>) -> Self {
        Document {
            doc_id,
            text: text.into(),
            token_ids: None,
            n_tokens: None,
        }
    }

    pub fn tokenize(&mut self, tok: &dyn Tokenizer) {
        let ids = tok.encode(&self.text);
        self.n_tokens = Some(ids.len() as u64);
        self.token_ids = Some(ids);
    }

    pub fn tokens(&self) -> Result<&[u32]> {
        self.token_ids
            .as_deref()
            .ok_or_else(|| Error::Invariant(format!("document {} is not tokenized", self.doc_id)))
    }
}

pub trait Tokenizer: Sync {
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> Vec<u32>;
}

/// UTF-8 bytes as tokens; needs no external assets.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn vocab_size(&self) -> usize {
        256
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: u64,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_tokens: Option<u64>,
}

/// What to do with a line that does not parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Malformed {
    #[default]
    Fatal,
    Skip,
}

/// Streaming JSONL reader. Each line is `{"id": u64, "text": str, "n_tokens"?: u64}`.
/// Blank lines are ignored; duplicate ids are always fatal.
pub struct CorpusReader<R> {
    inner: R,
    line_no: usize,
    seen: HashMap<u64, usize>,
    mode: Malformed,
    skipped: Vec<(usize, String)>,
    buf: String,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(inner: R, mode: Malformed) -> Self {
        CorpusReader {
            inner,
            line_no: 0,
            seen: HashMap::new(),
            mode,
            skipped: Vec::new(),
            buf: String::new(),
        }
    }

    /// Lines skipped in `Malformed::Skip` mode, with their reasons.
    pub fn skipped(&self) -> &[(usize, String)] {
        &self.skipped
    }

    fn next_doc(&mut self) -> Result<Option<Document>> {
        loop {
            self.buf.clear();
            if self.inner.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let line = self.buf.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = match serde_json::from_str(line) {
                Ok(l) => l,
                Err(e) => {
                    let reason = e.to_string();
                    match self.mode {
                        Malformed::Fatal => {
                            return Err(Error::Parse {
                                line: self.line_no,
                                reason,
                            })
                        }
                        Malformed::Skip => {
                            self.skipped.push((self.line_no, reason));
                            continue;
                        }
                    }
                }
            };
            if let Some(&first) = self.seen.get(&parsed.id) {
                return Err(Error::DuplicateId {
                    id: parsed.id,
                    first_line: first,
                    second_line: self.line_no,
                });
            }
            self.seen.insert(parsed.id, self.line_no);
            return Ok(Some(Document {
                doc_id: parsed.id,
                text: parsed.text,
                token_ids: None,
                n_tokens: parsed.n_tokens,
            }));
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_doc().transpose()
    }
}

pub fn read_corpus<R: BufRead>(r: R, mode: Malformed) -> Result<Vec<Document>> {
    CorpusReader::new(r, mode).collect()
}

/// One compact JSON object per line, fields in `id, text, n_tokens` order.
pub fn write_corpus<W: Write>(w: &mut W, docs: &[Document]) -> Result<()> {
    for d in docs {
        let line = Line {
            id: d.doc_id,
            text: d.text.clone(),
            n_tokens: d.n_tokens,
        };
        serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleSize {
    Fraction(f64),
    Count(usize),
}

/// Ascending indices of a uniform sample without replacement.
/// A fraction keeps `ceil(f * n)` items.
pub fn sample_indices(n: usize, size: SampleSize, seed: u64) -> Result<Vec<usize>> {
    let m = match size {
        SampleSize::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("sample fraction {f} outside [0, 1]")));
            }
            keep_count(f, n)
        }
        SampleSize::Count(c) => c,
    };
    if m > n {
        return Err(Error::Config(format!("cannot sample {m} of {n} documents")));
    }
    let mut idx = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

pub fn sample_uniform<T: Clone>(items: &[T], size: SampleSize, seed: u64) -> Result<Vec<T>> {
    Ok(sample_indices(items.len(), size, seed)?
        .into_iter()
        .map(|i| items[i].clone())
        .collect())
}

const HASH_BASE: u64 = 0x100_0000_01b3;

/// Polynomial hashes (mod 2^64) of every length-`n` window, rolled in O(1) per step.
pub fn ngram_hashes(tokens: &[u32], n: usize) -> Vec<u64> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    let top = (1..n).fold(1u64, |p, _| p.wrapping_mul(HASH_BASE));
    let tok = |t: u32| u64::from(t) + 1;
    let mut h = tokens[..n]
        .iter()
        .fold(0u64, |h, &t| h.wrapping_mul(HASH_BASE).wrapping_add(tok(t)));
    let mut out = Vec::with_capacity(tokens.len() - n + 1);
    out.push(h);
    for i in n..tokens.len() {
        h = h
            .wrapping_sub(tok(tokens[i - n]).wrapping_mul(top))
            .wrapping_mul(HASH_BASE)
            .wrapping_add(tok(tokens[i]));
        out.push(h);
    }
    out
}

/// Read-only n-gram index over test documents.
pub struct NgramIndex<'a> {
    n: usize,
    tests: Vec<&'a [u32]>,
    grams: HashMap<u64, Vec<(u32, u32)>>,
}

impl<'a> NgramIndex<'a> {
    pub fn build(tests: &'a [Document], n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("n-gram length must be at least 1".into()));
        }
        let tests: Vec<&[u32]> = tests.iter().map(Document::tokens).collect::<Result<_>>()?;
        let mut grams: HashMap<u64, Vec<(u32, u32)>> = HashMap::new();
        for (d, toks) in tests.iter().enumerate() {
            for (pos, h) in ngram_hashes(toks, n).into_iter().enumerate() {
                grams.entry(h).or_default().push((d as u32, pos as u32));
            }
        }
        Ok(NgramIndex { n, tests, grams })
    }

    /// Whether any window of `tokens` occurs verbatim in a test document.
    pub fn contains_any(&self, tokens: &[u32]) -> bool {
        let n = self.n;
        ngram_hashes(tokens, n).into_iter().enumerate().any(|(pos, h)| {
            self.grams.get(&h).is_some_and(|hits| {
                let w = &tokens[pos..pos + n];
                hits.iter()
                    .any(|&(d, p)| &self.tests[d as usize][p as usize..p as usize + n] == w)
            })
        })
    }
}

/// Ids of targets that share at least one contiguous `n`-token run with any test document,
/// in target order.
pub fn decontaminate(targets: &[Document], tests: &[Document], n: usize, exec: Exec) -> Result<Vec<u64>> {
    let index = NgramIndex::build(tests, n)?;
    let flags = exec.try_map(targets, |t| t.tokens().map(|toks| index.contains_any(toks)))?;
    Ok(targets
        .iter()
        .zip(flags)
        .filter(|(_, f)| *f)
        .map(|(t, _)| t.doc_id)
        .collect())
}

pub fn write_ids<W: Write>(w: &mut W, ids: &[u64]) -> Result<()> {
    for id in ids {
        writeln!(w, "{id}")?;
    }
    Ok(())
}
