//! Neuron-activated graphs: the top-K neuron indices per layer for one
//! document, plus the seekable binary record format.
//!
//! File layout (little-endian):
//!
//! ```text
//! header: "NAGR" | version u32 | L u16 | proj_type u8 | layer_set u8
//!         | K_l u32 x L | d_l u32 x L
//! record: doc_id u64 | L x (count u32 | count x u32 index)
//! ```
//!
//! `count` must equal `K_l`, so every record has the same size and record `i`
//! starts at `header_len + i * record_len`.

use std::fmt;
use std::io::{BufRead, Read, Seek, SeekFrom, Write};

use byteorder::{LittleEndian, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impact::ImpactVector;
use crate::io::BinReader;
use crate::model::{ModelSpec, ProjType};

const NAG_MAGIC: &[u8; 4] = b"NAGR";
const NAG_VERSION: u32 = 1;

/// Which model layers contribute to a NAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSet {
    #[default]
    All,
    Last,
}

impl LayerSet {
    pub fn code(self) -> u8 {
        match self {
            LayerSet::All => 0,
            LayerSet::Last => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(LayerSet::All),
            1 => Some(LayerSet::Last),
            _ => None,
        }
    }

    /// Model layer indices selected from an `n_layers` model.
    pub fn layers(self, n_layers: usize) -> Vec<usize> {
        match self {
            LayerSet::All => (0..n_layers).collect(),
            LayerSet::Last => vec![n_layers - 1],
        }
    }
}

/// Converts a width ratio into a per-layer K.
///
/// The default rounds `ratio * d` to the nearest multiple of 10 (minimum 1),
/// which reproduces the published widths 6144 -> 20, 8192 -> 20, 11008 -> 30
/// at ratio 0.003.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WidthRounding {
    Nearest,
    NearestMultiple(u32),
}

impl Default for WidthRounding {
    fn default() -> Self {
        WidthRounding::NearestMultiple(10)
    }
}

pub fn width_from_ratio(ratio: f64, d: usize, rounding: WidthRounding) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("width ratio {ratio} outside (0, 1]")));
    }
    let raw = ratio * d as f64;
    let k = match rounding {
        WidthRounding::Nearest => raw.round() as usize,
        WidthRounding::NearestMultiple(m) => {
            let m = m.max(1) as f64;
            ((raw / m).round() * m) as usize
        }
    };
    Ok(k.clamp(1, d))
}

/// Shape of every NAG in a run: one projection type, one K per stored layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NagConfig {
    pub proj: ProjType,
    pub layer_set: LayerSet,
    /// Model layer index of each stored layer.
    pub layers: Vec<usize>,
    /// K per stored layer.
    pub widths: Vec<usize>,
    /// Neuron count per stored layer.
    pub dims: Vec<usize>,
}

impl NagConfig {
    pub fn uniform(spec: &ModelSpec, proj: ProjType, layer_set: LayerSet, k: usize) -> Result<Self> {
        let layers = layer_set.layers(spec.n_layers);
        let n = layers.len();
        let cfg = NagConfig {
            proj,
            layer_set,
            layers,
            widths: vec![k; n],
            dims: vec![spec.d_out(proj); n],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ratio(
        spec: &ModelSpec,
        proj: ProjType,
        layer_set: LayerSet,
        ratio: f64,
        rounding: WidthRounding,
    ) -> Result<Self> {
        let k = width_from_ratio(ratio, spec.d_out(proj), rounding)?;
        Self::uniform(spec, proj, layer_set, k)
    }

    /// Config with explicit widths and dims, stored layers numbered `0..L`
    /// (or the single last layer).
    pub fn explicit(proj: ProjType, widths: Vec<usize>, dims: Vec<usize>) -> Result<Self> {
        let cfg = NagConfig {
            proj,
            layer_set: LayerSet::All,
            layers: (0..widths.len()).collect(),
            widths,
            dims,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n == 0 {
            return Err(Error::Config("a NAG needs at least one layer".into()));
        }
        if self.dims.len() != n || self.layers.len() != n {
            return Err(Error::Config("widths, dims and layers disagree in length".into()));
        }
        if n > u16::MAX as usize {
            return Err(Error::Config("too many layers".into()));
        }
        for (i, (&k, &d)) in self.widths.iter().zip(&self.dims).enumerate() {
            if k == 0 || k > d {
                return Err(Error::Config(format!("layer {i}: width {k} outside [1, {d}]")));
            }
            if d > u32::MAX as usize {
                return Err(Error::Config(format!("layer {i}: dimension too large")));
            }
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len()
    }

    /// `|NAG(c)|`, the number of (layer, neuron) pairs per record.
    pub fn total_width(&self) -> usize {
        self.widths.iter().sum()
    }

    /// Compares the parts that matter for similarity and serialization.
    pub fn ensure_compatible(&self, other: &NagConfig) -> Result<()> {
        if self.proj != other.proj || self.widths != other.widths || self.dims != other.dims {
            return Err(Error::ConfigMismatch(format!(
                "{} vs {}",
                self.describe(),
                other.describe()
            )));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "proj={} layers={:?} K={:?} d={:?}",
            self.proj, self.layer_set, self.widths, self.dims
        )
    }

    pub fn header_len(&self) -> u64 {
        4 + 4 + 2 + 1 + 1 + 8 * self.n_layers() as u64
    }

    pub fn record_len(&self) -> u64 {
        8 + 4 * self.n_layers() as u64 + 4 * self.total_width() as u64
    }

    pub(crate) fn write_echo<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u16::<LittleEndian>(self.n_layers() as u16)?;
        w.write_u8(self.proj.code())?;
        w.write_u8(self.layer_set.code())?;
        for &k in &self.widths {
            w.write_u32::<LittleEndian>(k as u32)?;
        }
        for &d in &self.dims {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        Ok(())
    }

    pub(crate) fn read_echo<R: BufRead>(r: &mut BinReader<R>) -> Result<Self> {
        let start = r.offset();
        let n = r.u16("layer count")? as usize;
        let at = r.offset();
        let code = r.u8("proj_type")?;
        let proj = ProjType::from_code(code)
            .ok_or_else(|| r.error_at(at, format!("unknown projection code {code}")))?;
        let at = r.offset();
        let flag = r.u8("layer-set flag")?;
        let layer_set =
            LayerSet::from_code(flag).ok_or_else(|| r.error_at(at, format!("unknown layer-set flag {flag}")))?;
        let mut widths = vec![0u32; n];
        r.u32s(&mut widths, "widths")?;
        let mut dims = vec![0u32; n];
        r.u32s(&mut dims, "dims")?;
        let layers = match layer_set {
            LayerSet::All => (0..n).collect(),
            // Stored index only; the source model depth is not recorded.
            LayerSet::Last => vec![0; n],
        };
        let cfg = NagConfig {
            proj,
            layer_set,
            layers,
            widths: widths.into_iter().map(|v| v as usize).collect(),
            dims: dims.into_iter().map(|v| v as usize).collect(),
        };
        cfg.validate()
            .map_err(|e| r.error_at(start, format!("invalid header: {e}")))?;
        Ok(cfg)
    }
}

impl fmt::Display for NagConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Sorted top-K neuron indices per stored layer for one document.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NagRecord {
    pub doc_id: u64,
    pub layers: Vec<Vec<u32>>,
}

impl NagRecord {
    pub fn validate(&self, cfg: &NagConfig) -> Result<()> {
        if self.layers.len() != cfg.n_layers() {
            return Err(Error::Invariant(format!(
                "doc {}: {} layers, config has {}",
                self.doc_id,
                self.layers.len(),
                cfg.n_layers()
            )));
        }
        for (l, (set, (&k, &d))) in self.layers.iter().zip(cfg.widths.iter().zip(&cfg.dims)).enumerate() {
            if set.len() != k {
                return Err(Error::Invariant(format!(
                    "doc {} layer {l}: {} indices, expected K = {k}",
                    self.doc_id,
                    set.len()
                )));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Invariant(format!(
                    "doc {} layer {l}: indices not strictly increasing",
                    self.doc_id
                )));
            }
            if let Some(&last) = set.last() {
                if last as usize >= d {
                    return Err(Error::Invariant(format!(
                        "doc {} layer {l}: index {last} >= d = {d}",
                        self.doc_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total number of (layer, neuron) pairs.
    pub fn size(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }
}

/// Indices of the `k` largest scores, ascending. Ties go to the lower index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<Vec<u32>> {
    if k == 0 || k > scores.len() {
        return Err(Error::Config(format!(
            "K = {k} outside [1, {}]",
            scores.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Invariant(format!("NaN impact score at index {i}")));
    }
    let mut idx: Vec<u32> = (0..scores.len() as u32).collect();
    let by_rank = |a: &u32, b: &u32| {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, by_rank);
        idx.truncate(k);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Builds the NAG from one impact vector per stored layer, in config order.
pub fn build_nag(doc_id: u64, ivs: &[ImpactVector], cfg: &NagConfig) -> Result<NagRecord> {
    if ivs.len() != cfg.n_layers() {
        return Err(Error::Dimension {
            context: "impact vectors per NAG",
            expected: cfg.n_layers(),
            actual: ivs.len(),
        });
    }
    let layers = ivs
        .iter()
        .zip(cfg.widths.iter().zip(&cfg.dims))
        .map(|(iv, (&k, &d))| {
            if iv.proj.proj != cfg.proj {
                return Err(Error::ConfigMismatch(format!(
                    "impact vector for {} in a {} NAG",
                    iv.proj, cfg.proj
                )));
            }
            if iv.len() != d {
                return Err(Error::Dimension {
                    context: "impact vector width",
                    expected: d,
                    actual: iv.len(),
                });
            }
            top_k_indices(iv.scores.as_slice().expect("contiguous"), k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NagRecord { doc_id, layers })
}

pub struct NagWriter<W: Write> {
    inner: W,
    cfg: NagConfig,
    written: u64,
}

impl<W: Write> NagWriter<W> {
    pub fn new(mut inner: W, cfg: NagConfig) -> Result<Self> {
        cfg.validate()?;
        inner.write_all(NAG_MAGIC)?;
        inner.write_u32::<LittleEndian>(NAG_VERSION)?;
        cfg.write_echo(&mut inner)?;
        Ok(NagWriter {
            inner,
            cfg,
            written: 0,
        })
    }

    /// Continues an existing file whose header has already been validated.
    pub fn append(inner: W, cfg: NagConfig, existing: u64) -> Self {
        NagWriter {
            inner,
            cfg,
            written: existing,
        }
    }

    pub fn write(&mut self, rec: &NagRecord) -> Result<()> {
        rec.validate(&self.cfg)?;
        let w = &mut self.inner;
        w.write_u64::<LittleEndian>(rec.doc_id)?;
        for set in &rec.layers {
            w.write_u32::<LittleEndian>(set.len() as u32)?;
            for &i in set {
                w.write_u32::<LittleEndian>(i)?;
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct NagReader<R> {
    inner: BinReader<R>,
    cfg: NagConfig,
}

impl<R: BufRead> NagReader<R> {
    pub fn new(inner: R) -> Result<Self> {
        let mut r = BinReader::new(inner, "NAG file");
        r.expect_magic(NAG_MAGIC)?;
        r.expect_version(NAG_VERSION)?;
        let cfg = NagConfig::read_echo(&mut r)?;
        Ok(NagReader { inner: r, cfg })
    }

    pub fn config(&self) -> &NagConfig {
        &self.cfg
    }

    pub fn read_record(&mut self) -> Result<Option<NagRecord>> {
        let r = &mut self.inner;
        if r.at_eof()? {
            return Ok(None);
        }
        let doc_id = r.u64("doc_id")?;
        let mut layers = Vec::with_capacity(self.cfg.n_layers());
        for (l, &k) in self.cfg.widths.iter().enumerate() {
            let at = r.offset();
            let count = r.u32("index count")? as usize;
            if count != k {
                return Err(r.error_at(
                    at,
                    format!("doc {doc_id} layer {l}: length field {count} but header K = {k}"),
                ));
            }
            let mut set = vec![0u32; k];
            r.u32s(&mut set, "indices")?;
            layers.push(set);
        }
        let rec = NagRecord { doc_id, layers };
        let at = r.offset();
        rec.validate(&self.cfg)
            .map_err(|e| r.error_at(at - self.cfg.record_len(), e.to_string()))?;
        Ok(Some(rec))
    }

    pub fn read_all(mut self) -> Result<(NagConfig, Vec<NagRecord>)> {
        let mut out = Vec::new();
        while let Some(rec) = self.read_record()? {
            out.push(rec);
        }
        Ok((self.cfg, out))
    }
}

impl<R: BufRead> Iterator for NagReader<R> {
    type Item = Result<NagRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.read_record().transpose()
    }
}

/// Random access to record `index` of a NAG file.
pub fn read_record_at<R: Read + Seek>(mut file: R, cfg: &NagConfig, index: u64) -> Result<NagRecord> {
    let start = cfg.header_len() + index * cfg.record_len();
    file.seek(SeekFrom::Start(start))?;
    let mut buf = vec![0u8; cfg.record_len() as usize];
    file.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format {
                file: "NAG file",
                offset: start,
                reason: format!("record {index} is past the end of the file"),
            }
        } else {
            Error::Io(e)
        }
    })?;
    // Reuse the streaming parser on a synthetic single-record file.
    let mut bytes = Vec::with_capacity(cfg.header_len() as usize + buf.len());
    bytes.extend_from_slice(NAG_MAGIC);
    bytes.write_u32::<LittleEndian>(NAG_VERSION)?;
    cfg.write_echo(&mut bytes)?;
    bytes.extend_from_slice(&buf);
    let mut reader = NagReader::new(&bytes[..])?;
    reader.read_record().map(|r| r.expect("one record present")).map_err(|e| match e {
        Error::Format { reason, offset, .. } => Error::Format {
            file: "NAG file",
            offset: offset - cfg.header_len() + start,
            reason,
        },
        other => other,
    })
}

pub fn write_nags<W: Write>(sink: W, cfg: &NagConfig, records: &[NagRecord]) -> Result<W> {
    let mut w = NagWriter::new(sink, cfg.clone())?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

pub fn read_nags<R: BufRead>(source: R) -> Result<(NagConfig, Vec<NagRecord>)> {
    NagReader::new(source)?.read_all()
}
