//! Neuron impact scores.
//!
//! The impact of neuron `k` for a single input `h` is `|h . W[:, k]|`, which is
//! exactly the L2 change in the projection output when column `k` is zeroed.
//! Documents contribute one input per token; per-token impacts are averaged
//! (or max-pooled) into one score per neuron.

use std::io::{BufRead, Write};

use byteorder::{LittleEndian, WriteBytesExt};
use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::analysis::{pearson, DeactivationMask, MaskCriterion};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{write_f32s, BinReader};
use crate::model::{column_mean_abs, HookCapture, LossEstimate, NeuronId, ProjType, ProjectionRef, ProjectionView, ToyModel};

/// How per-token impacts are pooled into a document score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

/// One score per neuron of a projection, for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactVector {
    pub proj: ProjectionRef,
    pub scores: Array1<f64>,
}

impl ImpactVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

pub fn token_impact(h_in: &[f64], w: &ProjectionView<'_>, k: usize) -> Result<f64> {
    if h_in.len() != w.d_in() {
        return Err(Error::Dimension {
            context: "token_impact input",
            expected: w.d_in(),
            actual: h_in.len(),
        });
    }
    if k >= w.d_out() {
        return Err(Error::NeuronOutOfRange {
            proj: w.proj,
            index: k,
            width: w.d_out(),
        });
    }
    let col = w.weights.column(k);
    Ok(h_in.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>().abs())
}

/// Mean absolute projection output per column (the matrix form of the
/// per-token definition).
pub fn document_impact(capture: &HookCapture) -> Result<ImpactVector> {
    document_impact_with(capture, Aggregation::Mean)
}

pub fn document_impact_with(capture: &HookCapture, agg: Aggregation) -> Result<ImpactVector> {
    if capture.n_tokens() == 0 {
        return Err(Error::Empty("hook capture has no tokens"));
    }
    let scores = match agg {
        Aggregation::Mean => column_mean_abs(&capture.outputs),
        Aggregation::Max => capture
            .outputs
            .map_axis(Axis(0), |col| col.iter().fold(0.0f64, |m, v| m.max(v.abs()))),
    };
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invariant(format!("non-finite impact score in {}", capture.proj)));
    }
    Ok(ImpactVector {
        proj: capture.proj,
        scores,
    })
}

/// Running mean of impact vectors for one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactStats {
    pub proj: ProjectionRef,
    pub mean: Array1<f64>,
    pub count: u64,
}

impl ImpactStats {
    pub fn new(proj: ProjectionRef, width: usize) -> Self {
        ImpactStats {
            proj,
            mean: Array1::zeros(width),
            count: 0,
        }
    }

    fn check(&self, proj: ProjectionRef, width: usize) -> Result<()> {
        if proj != self.proj {
            return Err(Error::ProjectionMismatch {
                expected: self.proj,
                actual: proj,
            });
        }
        if width != self.mean.len() {
            return Err(Error::Dimension {
                context: "impact stats width",
                expected: self.mean.len(),
                actual: width,
            });
        }
        Ok(())
    }

    pub fn accumulate(&mut self, iv: &ImpactVector) -> Result<()> {
        self.check(iv.proj, iv.len())?;
        self.count += 1;
        let inv = 1.0 / self.count as f64;
        self.mean.zip_mut_with(&iv.scores, |m, &x| *m += (x - *m) * inv);
        Ok(())
    }

    /// Count-weighted merge; `merge(a, b)` equals the stats over both inputs.
    pub fn merge(&mut self, other: &ImpactStats) -> Result<()> {
        self.check(other.proj, other.mean.len())?;
        let total = self.count + other.count;
        if total == 0 {
            return Ok(());
        }
        let (wa, wb) = (
            self.count as f64 / total as f64,
            other.count as f64 / total as f64,
        );
        self.mean.zip_mut_with(&other.mean, |m, &o| *m = *m * wa + o * wb);
        self.count = total;
        Ok(())
    }
}

/// Mean impact of every neuron of `proj` type in all layers over `docs`.
pub fn collect_stats(model: &ToyModel, docs: &[Vec<u32>], proj: ProjType, exec: Exec) -> Result<Vec<ImpactStats>> {
    let spec = model.spec();
    let targets: Vec<_> = (0..spec.n_layers).map(|l| ProjectionRef::new(l, proj)).collect();
    let per_doc = exec.try_map(docs, |d| -> Result<Vec<ImpactVector>> {
        let out = model.forward_capture(d, &targets)?;
        out.captures.iter().map(document_impact).collect()
    })?;
    let mut stats: Vec<_> = targets
        .iter()
        .map(|&r| ImpactStats::new(r, spec.d_out(proj)))
        .collect();
    for ivs in &per_doc {
        for (s, iv) in stats.iter_mut().zip(ivs) {
            s.accumulate(iv)?;
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinResult {
    pub mean_impact: f64,
    pub abs_delta_loss: f64,
    pub n_neurons: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub base_loss: f64,
    /// Ordered from highest-impact rank band to lowest.
    pub bins: Vec<BinResult>,
    pub pearson: f64,
}

impl CorrelationReport {
    /// |Δloss| of the middle bin (index `n_bins / 2`).
    pub fn median_bin(&self) -> &BinResult {
        &self.bins[self.bins.len() / 2]
    }
}

/// Ranks UP neurons per layer by mean impact on `docs`, splits ranks into
/// `n_bins` equal bands (`d_internal / n_bins` each, trailing remainder
/// unused), deactivates each band in every layer at once, and correlates the
/// band's mean impact with the absolute change in mean loss.
pub fn impact_loss_correlation(
    model: &ToyModel,
    docs: &[Vec<u32>],
    n_bins: usize,
    est: LossEstimate,
    exec: Exec,
) -> Result<CorrelationReport> {
    if n_bins < 2 {
        return Err(Error::Config("at least two bins are required".into()));
    }
    let spec = *model.spec();
    let band = spec.d_internal / n_bins;
    if band == 0 {
        return Err(Error::Config(format!(
            "{} neurons per layer cannot fill {n_bins} bins",
            spec.d_internal
        )));
    }
    let stats = collect_stats(model, docs, ProjType::Up, exec)?;
    let ranked: Vec<Vec<usize>> = stats
        .iter()
        .map(|s| {
            let mut idx: Vec<usize> = (0..s.mean.len()).collect();
            idx.sort_by(|&a, &b| s.mean[b].total_cmp(&s.mean[a]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let base_loss = model.eval_loss(model, docs, est, exec)?;
    let bins = exec.map_range(n_bins, |b| -> Result<BinResult> {
        let mut entries = Vec::new();
        let mut impact_sum = 0.0;
        for (layer, order) in ranked.iter().enumerate() {
            for &index in &order[b * band..(b + 1) * band] {
                impact_sum += stats[layer].mean[index];
                entries.push(NeuronId {
                    layer,
                    proj: ProjType::Up,
                    index,
                });
            }
        }
        let n = entries.len();
        let mask = DeactivationMask::new(entries, MaskCriterion::ImpactBand)?;
        // Bins themselves run in parallel; the inner loss is sequential.
        let loss = model.deactivate(&mask)?.eval_loss(model, docs, est, Exec::Sequential)?;
        Ok(BinResult {
            mean_impact: impact_sum / n as f64,
            abs_delta_loss: (loss - base_loss).abs(),
            n_neurons: n,
        })
    });
    let bins = bins.into_iter().collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = bins.iter().map(|b| b.mean_impact).collect();
    let ys: Vec<f64> = bins.iter().map(|b| b.abs_delta_loss).collect();
    Ok(CorrelationReport {
        base_loss,
        pearson: pearson(&xs, &ys)?,
        bins,
    })
}

/// Optional per-document dump record:
/// `{doc_id u64, layer u16, proj_type u8, d u32, f32 scores}`.
pub fn write_impact_record<W: Write>(w: &mut W, doc_id: u64, iv: &ImpactVector) -> Result<()> {
    w.write_u64::<LittleEndian>(doc_id)?;
    w.write_u16::<LittleEndian>(iv.proj.layer as u16)?;
    w.write_u8(iv.proj.proj.code())?;
    w.write_u32::<LittleEndian>(iv.len() as u32)?;
    write_f32s(w, iv.scores.iter().map(|&s| s as f32))?;
    Ok(())
}

pub fn read_impact_records<R: BufRead>(r: R) -> Result<Vec<(u64, ImpactVector)>> {
    let mut r = BinReader::new(r, "impact dump");
    let mut out = Vec::new();
    while !r.at_eof()? {
        let doc_id = r.u64("doc_id")?;
        let layer = r.u16("layer")? as usize;
        let at = r.offset();
        let code = r.u8("proj_type")?;
        let proj = ProjType::from_code(code)
            .ok_or_else(|| r.error_at(at, format!("unknown projection code {code}")))?;
        let width = r.u32("width")? as usize;
        let mut buf = vec![0f32; width];
        r.f32s(&mut buf, "scores")?;
        out.push((
            doc_id,
            ImpactVector {
                proj: ProjectionRef::new(layer, proj),
                scores: buf.into_iter().map(f64::from).collect(),
            },
        ));
    }
    Ok(out)
}
