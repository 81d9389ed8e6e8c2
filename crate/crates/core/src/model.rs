//! A small seed-deterministic decoder-only transformer used as the reference
//! extraction model.
//!
//! Blocks are pre-norm (RMSNorm without learned gain): causal multi-head
//! attention with separate Q/K/V/O matrices, then a gated FFN
//! `down(silu(gate(x)) * up(x))`. Positions are learned additive embeddings.
//! Weights are drawn once as `f32` and held as `f64` so that a checkpoint
//! roundtrip is lossless while all arithmetic runs in double precision.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::DeactivationMask;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{write_f32s, BinReader};

const RMS_EPS: f64 = 1e-6;
const CHECKPOINT_MAGIC: &[u8; 4] = b"NAGM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_internal: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rng_seed: u64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("d_internal", self.d_internal),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
            if v > u32::MAX as usize {
                return Err(Error::Config(format!("{name} does not fit in 32 bits")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Input dimension of a projection's weight matrix.
    pub fn d_in(&self, proj: ProjType) -> usize {
        match proj {
            ProjType::Down => self.d_internal,
            _ => self.d_model,
        }
    }

    /// Neuron count (column count) of a projection.
    pub fn d_out(&self, proj: ProjType) -> usize {
        match proj {
            ProjType::Up => self.d_internal,
            _ => self.d_model,
        }
    }
}

/// The five projection kinds that can host neurons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProjType {
    Q,
    K,
    V,
    Up,
    Down,
}

impl ProjType {
    pub const ALL: [ProjType; 5] = [
        ProjType::Q,
        ProjType::K,
        ProjType::V,
        ProjType::Up,
        ProjType::Down,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ProjType::Q => "Q",
            ProjType::K => "K",
            ProjType::V => "V",
            ProjType::Up => "UP",
            ProjType::Down => "DOWN",
        }
    }
}

impl fmt::Display for ProjType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProjType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" | "q_proj" => Ok(ProjType::Q),
            "k" | "k_proj" => Ok(ProjType::K),
            "v" | "v_proj" => Ok(ProjType::V),
            "up" | "up_proj" => Ok(ProjType::Up),
            "down" | "down_proj" => Ok(ProjType::Down),
            _ => Err(Error::Config(format!(
                "unsupported projection type {s:?} (expected one of Q, K, V, UP, DOWN)"
            ))),
        }
    }
}

/// A projection matrix in a specific layer. Layers are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProjectionRef {
    pub layer: usize,
    pub proj: ProjType,
}

impl ProjectionRef {
    pub fn new(layer: usize, proj: ProjType) -> Self {
        ProjectionRef { layer, proj }
    }
}

impl fmt::Display for ProjectionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "layer {} {}", self.layer, self.proj)
    }
}

/// A single neuron: column `index` of the projection `proj` in `layer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NeuronId {
    pub layer: usize,
    pub proj: ProjType,
    pub index: usize,
}

/// Borrowed weight matrix of one projection, shape `d_in x d_out`.
/// Each column is one neuron.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionView<'a> {
    pub proj: ProjectionRef,
    pub weights: ArrayView2<'a, f64>,
}

impl ProjectionView<'_> {
    pub fn d_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.weights.ncols()
    }
}

/// Per-token inputs fed into one projection during a forward pass, together
/// with the outputs that projection produced.
#[derive(Debug, Clone, PartialEq)]
pub struct HookCapture {
    pub proj: ProjectionRef,
    /// `T x d_in`
    pub inputs: Array2<f64>,
    /// `T x d_out`, equal to `inputs . W`
    pub outputs: Array2<f64>,
}

impl HookCapture {
    pub fn n_tokens(&self) -> usize {
        self.inputs.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `T x vocab_size`
    pub logits: Array2<f64>,
    pub captures: Vec<HookCapture>,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    o: Array2<f64>,
    gate: Array2<f64>,
    up: Array2<f64>,
    down: Array2<f64>,
}

impl Block {
    fn proj(&self, p: ProjType) -> &Array2<f64> {
        match p {
            ProjType::Q => &self.q,
            ProjType::K => &self.k,
            ProjType::V => &self.v,
            ProjType::Up => &self.up,
            ProjType::Down => &self.down,
        }
    }

    fn proj_mut(&mut self, p: ProjType) -> &mut Array2<f64> {
        match p {
            ProjType::Q => &mut self.q,
            ProjType::K => &mut self.k,
            ProjType::V => &mut self.v,
            ProjType::Up => &mut self.up,
            ProjType::Down => &mut self.down,
        }
    }
}

/// How evaluation loss is estimated on a document set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossEstimate {
    /// Next-token NLL of the observed tokens.
    #[default]
    Sampled,
    /// Cross-entropy against a reference model's predictive distribution at
    /// each observed prefix (for documents sampled from that model).
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    spec: ModelSpec,
    tok_emb: Array2<f64>,
    pos_emb: Array2<f64>,
    blocks: Vec<Block>,
    head: Array2<f64>,
}

// Tensor kinds beyond the five hookable projections, used to key PRNG streams.
const KIND_O: u64 = 5;
const KIND_GATE: u64 = 6;
const KIND_TOK: u64 = 7;
const KIND_POS: u64 = 8;
const KIND_HEAD: u64 = 9;

/// Draws a `rows x cols` matrix, uniform in `[-bound, bound)`, from the ChaCha8
/// stream `(kind << 32) | layer` of the model seed. Values are rounded to f32.
fn init_matrix(seed: u64, kind: u64, layer: usize, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 32) | layer as u64);
    let bound = bound as f32;
    Array2::from_shape_simple_fn((rows, cols), || {
        let u: f32 = rng.random();
        ((2.0 * u - 1.0) * bound) as f64
    })
}

fn fan_in_bound(d_in: usize) -> f64 {
    1.0 / (d_in as f64).sqrt()
}

fn rms_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let scale = 1.0 / (ms + RMS_EPS).sqrt();
        row.mapv_inplace(|v| v * scale);
    }
    out
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

impl ToyModel {
    /// Builds a model whose every weight is a pure function of `spec`.
    pub fn build(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let seed = spec.rng_seed;
        let (d, di) = (spec.d_model, spec.d_internal);
        let blocks = (0..spec.n_layers)
            .map(|l| {
                let proj = |p: ProjType| {
                    init_matrix(
                        seed,
                        p.code() as u64,
                        l,
                        spec.d_in(p),
                        spec.d_out(p),
                        fan_in_bound(spec.d_in(p)),
                    )
                };
                Block {
                    q: proj(ProjType::Q),
                    k: proj(ProjType::K),
                    v: proj(ProjType::V),
                    up: proj(ProjType::Up),
                    down: proj(ProjType::Down),
                    o: init_matrix(seed, KIND_O, l, d, d, fan_in_bound(d)),
                    gate: init_matrix(seed, KIND_GATE, l, d, di, fan_in_bound(d)),
                }
            })
            .collect();
        Ok(ToyModel {
            spec,
            tok_emb: init_matrix(seed, KIND_TOK, 0, spec.vocab_size, d, 1.0),
            pos_emb: init_matrix(seed, KIND_POS, 0, spec.max_seq_len, d, 0.1),
            blocks,
            head: init_matrix(seed, KIND_HEAD, 0, d, spec.vocab_size, fan_in_bound(d)),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn projection(&self, r: ProjectionRef) -> Result<ProjectionView<'_>> {
        let block = self.blocks.get(r.layer).ok_or_else(|| {
            Error::Config(format!(
                "layer {} out of range for a {}-layer model",
                r.layer, self.spec.n_layers
            ))
        })?;
        Ok(ProjectionView {
            proj: r,
            weights: block.proj(r.proj).view(),
        })
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        if tokens.len() > self.spec.max_seq_len {
            return Err(Error::Dimension {
                context: "sequence length exceeds max_seq_len",
                expected: self.spec.max_seq_len,
                actual: tokens.len(),
            });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.spec.vocab_size) {
            return Err(Error::TokenOutOfRange {
                token: bad,
                vocab_size: self.spec.vocab_size,
            });
        }
        Ok(())
    }

    /// Runs the model and records the input/output of every requested
    /// projection, in the order requested.
    pub fn forward_capture(&self, tokens: &[u32], targets: &[ProjectionRef]) -> Result<ForwardOutput> {
        self.check_tokens(tokens)?;
        for t in targets {
            if t.layer >= self.spec.n_layers {
                return Err(Error::Config(format!(
                    "hook target {t} out of range for a {}-layer model",
                    self.spec.n_layers
                )));
            }
        }
        let n = tokens.len();
        let d = self.spec.d_model;
        let n_heads = self.spec.n_heads;
        let hd = d / n_heads;
        let mut captured: Vec<Option<HookCapture>> = vec![None; targets.len()];
        let mut record = |layer: usize, proj: ProjType, input: &Array2<f64>, output: &Array2<f64>| {
            for (slot, t) in captured.iter_mut().zip(targets) {
                if t.layer == layer && t.proj == proj {
                    *slot = Some(HookCapture {
                        proj: *t,
                        inputs: input.clone(),
                        outputs: output.clone(),
                    });
                }
            }
        };

        let mut x = Array2::<f64>::zeros((n, d));
        for (t, &tok) in tokens.iter().enumerate() {
            let mut row = x.row_mut(t);
            row.assign(&self.tok_emb.row(tok as usize));
            row += &self.pos_emb.row(t);
        }

        let scale = 1.0 / (hd as f64).sqrt();
        for (l, block) in self.blocks.iter().enumerate() {
            let a = rms_norm(&x);
            let q = a.dot(&block.q);
            let k = a.dot(&block.k);
            let v = a.dot(&block.v);
            record(l, ProjType::Q, &a, &q);
            record(l, ProjType::K, &a, &k);
            record(l, ProjType::V, &a, &v);

            let mut attn = Array2::<f64>::zeros((n, d));
            for h in 0..n_heads {
                let cols = s![.., h * hd..(h + 1) * hd];
                let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
                let mut weights = vec![0.0f64; n];
                for t in 0..n {
                    let qt = qh.row(t);
                    let mut max = f64::NEG_INFINITY;
                    for s in 0..=t {
                        let sc = qt.dot(&kh.row(s)) * scale;
                        weights[s] = sc;
                        max = max.max(sc);
                    }
                    let mut z = 0.0;
                    for w in &mut weights[..=t] {
                        *w = (*w - max).exp();
                        z += *w;
                    }
                    let mut out = attn.slice_mut(s![t, h * hd..(h + 1) * hd]);
                    for s in 0..=t {
                        out.scaled_add(weights[s] / z, &vh.row(s));
                    }
                }
            }
            x += &attn.dot(&block.o);

            let f = rms_norm(&x);
            let g = f.dot(&block.gate);
            let u = f.dot(&block.up);
            record(l, ProjType::Up, &f, &u);
            let mut m = u.clone();
            m.zip_mut_with(&g, |uv, &gv| *uv *= silu(gv));
            let y = m.dot(&block.down);
            record(l, ProjType::Down, &m, &y);
            x += &y;
        }
        let logits = rms_norm(&x).dot(&self.head);
        let captures = captured.into_iter().map(|c| c.expect("every target is visited")).collect();
        Ok(ForwardOutput { logits, captures })
    }

    pub fn logits(&self, tokens: &[u32]) -> Result<Array2<f64>> {
        Ok(self.forward_capture(tokens, &[])?.logits)
    }

    /// Summed next-token negative log-likelihood and the number of predicted
    /// positions (`T - 1`).
    pub fn next_token_nll(&self, tokens: &[u32]) -> Result<(f64, usize)> {
        let logits = self.logits(tokens)?;
        let mut total = 0.0;
        for t in 0..tokens.len() - 1 {
            let row = logits.row(t);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[tokens[t + 1] as usize];
        }
        Ok((total, tokens.len() - 1))
    }

    /// Token-weighted mean next-token loss over a document set.
    pub fn mean_loss(&self, docs: &[Vec<u32>], exec: Exec) -> Result<f64> {
        let parts = exec.try_map(docs, |d| self.next_token_nll(d))?;
        let (sum, count) = parts
            .into_iter()
            .fold((0.0, 0usize), |(s, c), (ds, dc)| (s + ds, c + dc));
        if count == 0 {
            return Err(Error::Empty("no predicted positions in evaluation set"));
        }
        Ok(sum / count as f64)
    }

    /// Token-weighted mean cross-entropy of this model's next-token
    /// predictions under `reference`'s predictive distribution, over every
    /// prefix of `docs`. When `docs` are sampled from `reference` this is the
    /// conditional expectation of [`mean_loss`](Self::mean_loss) given the
    /// prefixes: same mean, without the per-token sampling noise.
    pub fn expected_loss(&self, reference: &ToyModel, docs: &[Vec<u32>], exec: Exec) -> Result<f64> {
        if reference.spec.vocab_size != self.spec.vocab_size {
            return Err(Error::Dimension {
                context: "reference vocabulary",
                expected: self.spec.vocab_size,
                actual: reference.spec.vocab_size,
            });
        }
        let parts = exec.try_map(docs, |d| -> Result<(f64, usize)> {
            let (q, p) = (self.logits(d)?, reference.logits(d)?);
            let mut total = 0.0;
            for t in 0..d.len() - 1 {
                let row = q.row(t);
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let pt = softmax(p.row(t));
                total += pt.iter().zip(row).map(|(pi, qi)| pi * (lse - qi)).sum::<f64>();
            }
            Ok((total, d.len() - 1))
        })?;
        let (sum, count) = parts
            .into_iter()
            .fold((0.0, 0usize), |(s, c), (ds, dc)| (s + ds, c + dc));
        if count == 0 {
            return Err(Error::Empty("no predicted positions in evaluation set"));
        }
        Ok(sum / count as f64)
    }

    /// Evaluation loss of `self` on `docs` under the given estimator;
    /// `base` is the reference model for [`LossEstimate::Expected`].
    pub fn eval_loss(&self, base: &ToyModel, docs: &[Vec<u32>], est: LossEstimate, exec: Exec) -> Result<f64> {
        match est {
            LossEstimate::Sampled => self.mean_loss(docs, exec),
            LossEstimate::Expected => self.expected_loss(base, docs, exec),
        }
    }

    /// Returns a copy whose listed neurons are forced to zero by zeroing the
    /// corresponding weight columns. `self` is unchanged.
    pub fn deactivate(&self, mask: &DeactivationMask) -> Result<ToyModel> {
        let mut out = self.clone();
        for n in mask.entries() {
            let width = self.spec.d_out(n.proj);
            let r = ProjectionRef::new(n.layer, n.proj);
            if n.layer >= self.spec.n_layers || n.index >= width {
                return Err(Error::NeuronOutOfRange {
                    proj: r,
                    index: n.index,
                    width,
                });
            }
            out.blocks[n.layer]
                .proj_mut(n.proj)
                .column_mut(n.index)
                .fill(0.0);
        }
        Ok(out)
    }

    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut ts: Vec<&Array2<f64>> = Vec::new();
        for b in &self.blocks {
            for p in ProjType::ALL {
                ts.push(b.proj(p));
            }
        }
        for b in &self.blocks {
            ts.push(&b.o);
            ts.push(&b.gate);
        }
        ts.push(&self.tok_emb);
        ts.push(&self.pos_emb);
        ts.push(&self.head);
        ts
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut hook: Vec<&mut Array2<f64>> = Vec::new();
        let mut rest: Vec<&mut Array2<f64>> = Vec::new();
        for b in &mut self.blocks {
            let Block {
                q,
                k,
                v,
                o,
                gate,
                up,
                down,
            } = b;
            hook.extend([q, k, v, up, down]);
            rest.extend([o, gate]);
        }
        hook.extend(rest);
        hook.extend([&mut self.tok_emb, &mut self.pos_emb, &mut self.head]);
        hook
    }

    /// Writes the checkpoint: header `{"NAGM", version u32, n_layers u32,
    /// d_model u32, d_internal u32, n_heads u32, vocab_size u32,
    /// max_seq_len u32, rng_seed u64}`, then the hookable projections in
    /// `(layer, Q K V UP DOWN)` order, then per-layer `O, GATE`, then token
    /// embeddings, position embeddings and the output head. All tensors are
    /// row-major little-endian f32.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let s = &self.spec;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        for v in [
            s.n_layers,
            s.d_model,
            s.d_internal,
            s.n_heads,
            s.vocab_size,
            s.max_seq_len,
        ] {
            w.write_u32::<LittleEndian>(v as u32)?;
        }
        w.write_u64::<LittleEndian>(s.rng_seed)?;
        for t in self.tensors() {
            write_f32s(w, t.iter().map(|&v| v as f32))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let mut r = BinReader::new(r, "model checkpoint");
        r.expect_magic(CHECKPOINT_MAGIC)?;
        r.expect_version(CHECKPOINT_VERSION)?;
        let header_at = r.offset();
        let mut dims = [0usize; 6];
        for (slot, name) in dims.iter_mut().zip([
            "n_layers",
            "d_model",
            "d_internal",
            "n_heads",
            "vocab_size",
            "max_seq_len",
        ]) {
            *slot = r.u32(name)? as usize;
        }
        let spec = ModelSpec {
            n_layers: dims[0],
            d_model: dims[1],
            d_internal: dims[2],
            n_heads: dims[3],
            vocab_size: dims[4],
            max_seq_len: dims[5],
            rng_seed: r.u64("rng_seed")?,
        };
        spec.validate()
            .map_err(|e| r.error_at(header_at, format!("invalid model header: {e}")))?;
        // Shapes come from a throwaway zero model so the layout stays in one place.
        let mut model = ToyModel::zeros(spec);
        let mut buf = Vec::new();
        for t in model.tensors_mut() {
            buf.resize(t.len(), 0.0f32);
            let at = r.offset();
            r.f32s(&mut buf, "weights")?;
            for (i, (dst, &src)) in t.iter_mut().zip(&buf).enumerate() {
                if !src.is_finite() {
                    return Err(r.error_at(at + 4 * i as u64, "non-finite weight"));
                }
                *dst = src as f64;
            }
        }
        r.expect_eof()?;
        Ok(model)
    }

    fn zeros(spec: ModelSpec) -> Self {
        let (d, di) = (spec.d_model, spec.d_internal);
        let z = |r, c| Array2::<f64>::zeros((r, c));
        ToyModel {
            spec,
            tok_emb: z(spec.vocab_size, d),
            pos_emb: z(spec.max_seq_len, d),
            blocks: (0..spec.n_layers)
                .map(|_| Block {
                    q: z(d, d),
                    k: z(d, d),
                    v: z(d, d),
                    o: z(d, d),
                    gate: z(d, di),
                    up: z(d, di),
                    down: z(di, d),
                })
                .collect(),
            head: z(d, spec.vocab_size),
        }
    }
}

/// Row-wise softmax probabilities of a logits row.
pub fn softmax(row: ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut p = row.mapv(|v| (v - max).exp());
    let z = p.sum();
    p /= z;
    p
}

/// Mean over rows of `|m|`, the per-column mean absolute value.
pub(crate) fn column_mean_abs(m: &Array2<f64>) -> Array1<f64> {
    m.mapv(f64::abs).mean_axis(Axis(0)).expect("non-empty")
}
