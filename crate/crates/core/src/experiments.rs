//! Toy-scale analogs of the deactivation, impact-validation and
//! task-separability studies, runnable end to end from a seed.

use crate::analysis::{cluster_medoids, distance_matrix, mask_nag_topk, mask_random, ClusterReport, MaskCount};
use crate::error::Result;
use crate::exec::Exec;
use crate::extract::extract_nags;
use crate::impact::{impact_loss_correlation, CorrelationReport};
use crate::model::{LossEstimate, ModelSpec, ProjType, ToyModel};
use crate::nag::{LayerSet, NagConfig};
use crate::similarity::build_profile;
use crate::synth::{disjoint_tasks, sample_documents};

/// Model used by the experiments: 4 layers, d_model 64, d_internal 128.
pub fn toy_spec(seed: u64) -> ModelSpec {
    ModelSpec {
        n_layers: 4,
        d_model: 64,
        d_internal: 128,
        n_heads: 4,
        vocab_size: 256,
        max_seq_len: 32,
        rng_seed: seed,
    }
}

fn with_ids(docs: Vec<Vec<u32>>) -> Vec<(u64, Vec<u32>)> {
    docs.into_iter().enumerate().map(|(i, d)| (i as u64, d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeactivationSetup {
    pub spec: ModelSpec,
    pub n_target: usize,
    pub n_eval: usize,
    pub doc_len: usize,
    /// NAG width per layer used to build the target profile.
    pub k: usize,
    /// Neurons deactivated per layer, for both mask kinds.
    pub per_layer: usize,
    /// Random masks averaged per run.
    pub n_random: usize,
    /// First tokens of target/eval documents.
    pub prompt: Vec<u32>,
    pub loss: LossEstimate,
}

impl DeactivationSetup {
    pub fn toy(seed: u64) -> Self {
        DeactivationSetup {
            spec: toy_spec(seed),
            n_target: 50,
            n_eval: 50,
            doc_len: 32,
            k: 20,
            per_layer: 20,
            n_random: 5,
            prompt: (0..16).collect(),
            loss: LossEstimate::Expected,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeactivationOutcome {
    pub base_loss: f64,
    pub nag_delta: f64,
    pub random_deltas: Vec<f64>,
}

impl DeactivationOutcome {
    pub fn random_mean(&self) -> f64 {
        self.random_deltas.iter().sum::<f64>() / self.random_deltas.len() as f64
    }

    pub fn separated(&self) -> bool {
        self.nag_delta > self.random_mean()
    }
}

/// Target and held-out eval documents are sampled from the model itself,
/// starting from the same prompt tokens. The NAG mask deactivates the most
/// frequent profile neurons of the target set; random masks have equal size.
pub fn deactivation_separation(setup: &DeactivationSetup, seed: u64, exec: Exec) -> Result<DeactivationOutcome> {
    let model = ToyModel::build(setup.spec)?;
    let n = setup.n_target + setup.n_eval;
    let mut docs = sample_documents(&model, &setup.prompt, n, setup.doc_len, 1.0, seed, exec)?;
    let eval = docs.split_off(setup.n_target);
    let cfg = NagConfig::uniform(&setup.spec, ProjType::Up, LayerSet::All, setup.k)?;
    let nags = extract_nags(&model, &cfg, &with_ids(docs), exec)?;
    let profile = build_profile(&nags, &cfg)?;

    let base_loss = model.eval_loss(&model, &eval, setup.loss, exec)?;
    let delta = |mask| -> Result<f64> {
        Ok(model.deactivate(&mask)?.eval_loss(&model, &eval, setup.loss, exec)? - base_loss)
    };
    let nag_delta = delta(mask_nag_topk(&profile, setup.per_layer)?)?;
    let random_deltas = (0..setup.n_random as u64)
        .map(|r| {
            delta(mask_random(
                &setup.spec,
                ProjType::Up,
                MaskCount::PerLayer(setup.per_layer),
                seed.wrapping_mul(1000).wrapping_add(r),
            )?)
        })
        .collect::<Result<_>>()?;
    Ok(DeactivationOutcome {
        base_loss,
        nag_delta,
        random_deltas,
    })
}

/// Binned impact/loss study on `n_docs` self-sampled documents.
pub fn correlation_study(
    spec: ModelSpec,
    n_docs: usize,
    doc_len: usize,
    n_bins: usize,
    est: LossEstimate,
    seed: u64,
    exec: Exec,
) -> Result<CorrelationReport> {
    let model = ToyModel::build(spec)?;
    let docs = sample_documents(&model, &[], n_docs, doc_len, 1.0, seed, exec)?;
    impact_loss_correlation(&model, &docs, n_bins, est, exec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparabilitySetup {
    pub spec: ModelSpec,
    pub n_tasks: usize,
    pub docs_per_task: usize,
    pub doc_len: usize,
    pub tokens_per_task: usize,
    pub p_preferred: f64,
    pub k: usize,
}

impl SeparabilitySetup {
    pub fn toy(seed: u64) -> Self {
        SeparabilitySetup {
            spec: toy_spec(seed),
            n_tasks: 3,
            docs_per_task: 30,
            doc_len: 32,
            tokens_per_task: 16,
            p_preferred: 0.8,
            k: 12,
        }
    }
}

/// Generates documents for `n_tasks` tasks with disjoint preferred
/// vocabularies, extracts UP NAGs, clusters them with k-medoids
/// (`k = n_tasks`) over NAG distance and scores against task labels.
pub fn task_separability(setup: &SeparabilitySetup, seed: u64, exec: Exec) -> Result<ClusterReport> {
    let model = ToyModel::build(setup.spec)?;
    let tasks = disjoint_tasks(
        setup.spec.vocab_size,
        setup.n_tasks,
        setup.tokens_per_task,
        setup.p_preferred,
        seed,
    )?;
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for (t, task) in tasks.iter().enumerate() {
        let task_seed = seed.wrapping_mul(31).wrapping_add(t as u64 + 1);
        docs.extend(task.documents(setup.spec.vocab_size, setup.docs_per_task, setup.doc_len, task_seed));
        labels.extend(std::iter::repeat_n(t, setup.docs_per_task));
    }
    let cfg = NagConfig::uniform(&setup.spec, ProjType::Up, LayerSet::All, setup.k)?;
    let nags = extract_nags(&model, &cfg, &with_ids(docs), exec)?;
    let d = distance_matrix(&nags, exec)?;
    let clustering = cluster_medoids(&d, setup.n_tasks, seed)?;
    ClusterReport::new(clustering.assignments, &labels)
}
