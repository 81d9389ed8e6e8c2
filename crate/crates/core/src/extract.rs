//! Document → NAG extraction with the in-process toy model.

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::impact::{document_impact_with, Aggregation, ImpactVector};
use crate::model::{ProjectionRef, ToyModel};
use crate::nag::{build_nag, NagConfig, NagRecord};

/// Checks that `cfg` describes projections that exist in `model` with the
/// same neuron counts.
pub fn check_config(model: &ToyModel, cfg: &NagConfig) -> Result<()> {
    let spec = model.spec();
    for (&l, &d) in cfg.layers.iter().zip(&cfg.dims) {
        if l >= spec.n_layers {
            return Err(Error::ConfigMismatch(format!(
                "NAG layer {l} does not exist in a {}-layer model",
                spec.n_layers
            )));
        }
        if d != spec.d_out(cfg.proj) {
            return Err(Error::ConfigMismatch(format!(
                "layer {l} {} has {} neurons, config says {d}",
                cfg.proj,
                spec.d_out(cfg.proj)
            )));
        }
    }
    Ok(())
}

/// Tokens actually seen by the model: the first `max_seq_len`.
pub fn truncate<'a>(model: &ToyModel, tokens: &'a [u32]) -> Result<&'a [u32]> {
    if tokens.is_empty() {
        return Err(Error::Empty("document has no tokens"));
    }
    Ok(&tokens[..tokens.len().min(model.spec().max_seq_len)])
}

/// Impact vectors of the configured projections, in config layer order.
pub fn document_impacts(model: &ToyModel, cfg: &NagConfig, tokens: &[u32], agg: Aggregation) -> Result<Vec<ImpactVector>> {
    let targets: Vec<ProjectionRef> = cfg.layers.iter().map(|&l| ProjectionRef::new(l, cfg.proj)).collect();
    let out = model.forward_capture(truncate(model, tokens)?, &targets)?;
    out.captures.iter().map(|c| document_impact_with(c, agg)).collect()
}

pub fn extract_one(model: &ToyModel, cfg: &NagConfig, doc_id: u64, tokens: &[u32]) -> Result<NagRecord> {
    document_impacts(model, cfg, tokens, Aggregation::Mean)
        .and_then(|ivs| build_nag(doc_id, &ivs, cfg))
        .map_err(|e| e.in_doc(doc_id))
}

/// One record per document, in input order.
pub fn extract_nags(model: &ToyModel, cfg: &NagConfig, docs: &[(u64, Vec<u32>)], exec: Exec) -> Result<Vec<NagRecord>> {
    check_config(model, cfg)?;
    exec.try_map(docs, |(id, toks)| extract_one(model, cfg, *id, toks))
}
