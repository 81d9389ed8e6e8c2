//! Seeded synthetic token data for the toy-scale experiments.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::{softmax, ToyModel};

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A "task": documents draw most tokens from a small preferred vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub preferred: Vec<u32>,
    /// Probability that a token comes from `preferred` rather than the full vocabulary.
    pub p_preferred: f64,
}

/// `n_tasks` tasks with disjoint, randomly chosen preferred vocabularies of
/// `per_task` tokens each.
pub fn disjoint_tasks(vocab_size: usize, n_tasks: usize, per_task: usize, p_preferred: f64, seed: u64) -> Result<Vec<TaskSpec>> {
    if n_tasks * per_task > vocab_size || per_task == 0 {
        return Err(Error::Config(format!(
            "{n_tasks} tasks x {per_task} tokens do not fit a vocabulary of {vocab_size}"
        )));
    }
    if !(0.0..=1.0).contains(&p_preferred) {
        return Err(Error::Config(format!("p_preferred {p_preferred} outside [0, 1]")));
    }
    let picks = index::sample(&mut stream(seed, 0), vocab_size, n_tasks * per_task).into_vec();
    Ok(picks
        .chunks(per_task)
        .map(|c| TaskSpec {
            preferred: c.iter().map(|&t| t as u32).collect(),
            p_preferred,
        })
        .collect())
}

impl TaskSpec {
    /// `n_docs` documents of `len` tokens; document `i` uses its own PRNG
    /// stream, so the output does not depend on how generation is scheduled.
    pub fn documents(&self, vocab_size: usize, n_docs: usize, len: usize, seed: u64) -> Vec<Vec<u32>> {
        (0..n_docs)
            .map(|i| {
                let mut rng = stream(seed, i as u64 + 1);
                (0..len)
                    .map(|_| {
                        if rng.random_bool(self.p_preferred) {
                            self.preferred[rng.random_range(0..self.preferred.len())]
                        } else {
                            rng.random_range(0..vocab_size as u32)
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Documents sampled autoregressively from the model itself at
/// `temperature`, each seeded with a first token drawn from `prompt`
/// (or the full vocabulary when `prompt` is empty). On such data the
/// model is a calibrated predictor, so removing neurons can only raise the
/// expected loss.
pub fn sample_documents(
    model: &ToyModel,
    prompt: &[u32],
    n_docs: usize,
    len: usize,
    temperature: f64,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Vec<u32>>> {
    if len < 2 || len > model.spec().max_seq_len {
        return Err(Error::Config(format!(
            "document length {len} outside [2, {}]",
            model.spec().max_seq_len
        )));
    }
    if temperature <= 0.0 {
        return Err(Error::Config("temperature must be positive".into()));
    }
    let vocab = model.spec().vocab_size as u32;
    exec.map_range(n_docs, |i| -> Result<Vec<u32>> {
        let mut rng = stream(seed, i as u64 + 1);
        let first = if prompt.is_empty() {
            rng.random_range(0..vocab)
        } else {
            prompt[rng.random_range(0..prompt.len())]
        };
        let mut toks = vec![first];
        while toks.len() < len {
            let logits = model.logits(&toks)?;
            let last = logits.row(toks.len() - 1).mapv(|v| v / temperature);
            let p = softmax(last.view());
            let dist = WeightedIndex::new(p.iter()).map_err(|e| Error::Invariant(e.to_string()))?;
            toks.push(dist.sample(&mut rng) as u32);
        }
        Ok(toks)
    })
    .into_iter()
    .collect()
}
