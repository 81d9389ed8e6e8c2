//! Pairwise and group NAG similarity.
//!
//! Pairwise similarity is the Dice coefficient over (layer, neuron) pairs.
//! A group profile holds, per layer and neuron, the fraction of documents
//! whose NAG contains that neuron; group similarity is the layer-averaged share
//! of profile mass covered by a candidate's neurons. Under a fixed width per
//! layer, every profile layer sums to K and group similarity equals the mean
//! pairwise similarity against the group.
//!
//! Profile file layout (little-endian):
//!
//! ```text
//! "NAGP" | version u32 | L u16 | proj_type u8 | layer_set u8
//! | K_l u32 x L | d_l u32 x L | n_docs u64 | per layer: d_l x f64
//! ```

use std::io::{BufRead, Write};

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::io::{write_f64s, BinReader};
use crate::nag::{NagConfig, NagRecord};

const PROFILE_MAGIC: &[u8; 4] = b"NAGP";
const PROFILE_VERSION: u32 = 1;

fn sorted_intersection(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

fn check_shape(a: &NagRecord, b: &NagRecord) -> Result<()> {
    if a.layers.len() != b.layers.len()
        || a.layers.iter().zip(&b.layers).any(|(x, y)| x.len() != y.len())
    {
        return Err(Error::ConfigMismatch(format!(
            "records {} and {} have different layer widths",
            a.doc_id, b.doc_id
        )));
    }
    Ok(())
}

/// `2|A ∩ B| / (|A| + |B|)` over (layer, neuron) pairs.
pub fn pairwise_sim(a: &NagRecord, b: &NagRecord) -> Result<f64> {
    check_shape(a, b)?;
    let inter: usize = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(x, y)| sorted_intersection(x, y))
        .sum();
    let denom = a.size() + b.size();
    if denom == 0 {
        return Err(Error::Empty("NAG records with no neurons"));
    }
    Ok(2.0 * inter as f64 / denom as f64)
}

pub fn nag_distance(a: &NagRecord, b: &NagRecord) -> Result<f64> {
    Ok(1.0 - pairwise_sim(a, b)?)
}

/// Per-layer activation frequencies over a document set.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupProfile {
    cfg: NagConfig,
    weights: Vec<Vec<f64>>,
    n_docs: u64,
}

impl GroupProfile {
    pub fn config(&self) -> &NagConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn n_docs(&self) -> u64 {
        self.n_docs
    }

    /// Per-layer weight mass; equals `K_l` for a well-formed profile.
    pub fn layer_mass(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.iter().sum()).collect()
    }

    /// Builds the profile from a non-empty record set sharing `cfg`.
    pub fn build<'a, I>(records: I, cfg: &NagConfig) -> Result<Self>
    where
        I: IntoIterator<Item = &'a NagRecord>,
    {
        cfg.validate()?;
        let mut counts: Vec<Vec<u64>> = cfg.dims.iter().map(|&d| vec![0; d]).collect();
        let mut n = 0u64;
        for rec in records {
            rec.validate(cfg)
                .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
            for (c, set) in counts.iter_mut().zip(&rec.layers) {
                for &k in set {
                    c[k as usize] += 1;
                }
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("profile needs at least one document"));
        }
        let weights = counts
            .into_iter()
            .map(|c| c.into_iter().map(|v| v as f64 / n as f64).collect())
            .collect();
        Ok(GroupProfile {
            cfg: cfg.clone(),
            weights,
            n_docs: n,
        })
    }

    /// Count-weighted merge of two partial profiles.
    pub fn merge(&self, other: &GroupProfile) -> Result<GroupProfile> {
        self.cfg.ensure_compatible(&other.cfg)?;
        let n = self.n_docs + other.n_docs;
        let (wa, wb) = (self.n_docs as f64, other.n_docs as f64);
        let weights = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x * wa + y * wb) / n as f64)
                    .collect()
            })
            .collect();
        Ok(GroupProfile {
            cfg: self.cfg.clone(),
            weights,
            n_docs: n,
        })
    }

    /// Layer-averaged fraction of profile mass covered by `c`'s neurons.
    pub fn group_sim(&self, c: &NagRecord) -> Result<f64> {
        c.validate(&self.cfg)
            .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        let mut total = 0.0;
        for (l, (w, set)) in self.weights.iter().zip(&c.layers).enumerate() {
            let mass: f64 = w.iter().sum();
            if mass <= 0.0 {
                return Err(Error::Invariant(format!("profile layer {l} has zero mass")));
            }
            let covered: f64 = set.iter().map(|&k| w[k as usize]).sum();
            total += covered / mass;
        }
        Ok(total / self.weights.len() as f64)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(PROFILE_MAGIC)?;
        w.write_u32::<LittleEndian>(PROFILE_VERSION)?;
        self.cfg.write_echo(w)?;
        w.write_u64::<LittleEndian>(self.n_docs)?;
        for layer in &self.weights {
            write_f64s(w, layer.iter().copied())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut r = BinReader::new(r, "profile file");
        r.expect_magic(PROFILE_MAGIC)?;
        r.expect_version(PROFILE_VERSION)?;
        let cfg = NagConfig::read_echo(&mut r)?;
        let at = r.offset();
        let n_docs = r.u64("n_docs")?;
        if n_docs == 0 {
            return Err(r.error_at(at, "profile built from zero documents"));
        }
        let mut weights = Vec::with_capacity(cfg.n_layers());
        for (l, (&d, &k)) in cfg.dims.iter().zip(&cfg.widths).enumerate() {
            let at = r.offset();
            let mut layer = vec![0.0; d];
            r.f64s(&mut layer, "profile weights")?;
            if layer.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(r.error_at(at, format!("layer {l}: weight outside [0, 1]")));
            }
            let mass: f64 = layer.iter().sum();
            if (mass - k as f64).abs() > 1e-9 {
                return Err(r.error_at(at, format!("layer {l}: mass {mass} != K = {k}")));
            }
            weights.push(layer);
        }
        r.expect_eof()?;
        Ok(GroupProfile { cfg, weights, n_docs })
    }
}

pub fn build_profile(records: &[NagRecord], cfg: &NagConfig) -> Result<GroupProfile> {
    GroupProfile::build(records, cfg)
}

/// Builds per-shard profiles in parallel and merges them.
pub fn build_profile_sharded(records: &[NagRecord], cfg: &NagConfig, shard: usize, exec: Exec) -> Result<GroupProfile> {
    if records.is_empty() {
        return Err(Error::Empty("profile needs at least one document"));
    }
    let chunks: Vec<&[NagRecord]> = records.chunks(shard.max(1)).collect();
    let parts = exec.try_map(&chunks, |c| GroupProfile::build(*c, cfg))?;
    let mut it = parts.into_iter();
    let first = it.next().expect("non-empty");
    it.try_fold(first, |acc, p| acc.merge(&p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProjType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_layer(k: usize, d: usize) -> NagConfig {
        NagConfig::explicit(ProjType::Up, vec![k], vec![d]).unwrap()
    }

    fn rec(id: u64, layers: Vec<Vec<u32>>) -> NagRecord {
        NagRecord { doc_id: id, layers }
    }

    fn random_records(seed: u64, cfg: &NagConfig, n: usize) -> Vec<NagRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| NagRecord {
                doc_id: i as u64,
                layers: cfg
                    .widths
                    .iter()
                    .zip(&cfg.dims)
                    .map(|(&k, &d)| {
                        let mut v: Vec<u32> = rand::seq::index::sample(&mut rng, d, k)
                            .into_iter()
                            .map(|x| x as u32)
                            .collect();
                        v.sort_unstable();
                        v
                    })
                    .collect(),
            })
            .collect()
    }

    #[test]
    fn pairwise_examples() {
        let a = rec(0, vec![vec![1, 2]]);
        let b = rec(1, vec![vec![2, 3]]);
        let c = rec(2, vec![vec![4, 5]]);
        assert_eq!(pairwise_sim(&a, &a).unwrap(), 1.0);
        assert_eq!(pairwise_sim(&a, &c).unwrap(), 0.0);
        assert_eq!(pairwise_sim(&a, &b).unwrap(), 0.5);
        assert_eq!(nag_distance(&a, &b).unwrap(), 0.5);
        assert_eq!(nag_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(nag_distance(&a, &c).unwrap(), 1.0);
        assert!(pairwise_sim(&a, &rec(3, vec![vec![1]])).is_err());
    }

    #[test]
    fn two_doc_profile_and_both_formulas() {
        let cfg = one_layer(2, 6);
        let docs = [rec(0, vec![vec![1, 2]]), rec(1, vec![vec![2, 3]])];
        let p = build_profile(&docs, &cfg).unwrap();
        assert_eq!(p.weights()[0], vec![0.0, 0.5, 1.0, 0.5, 0.0, 0.0]);
        let c = rec(9, vec![vec![1, 2]]);
        assert_eq!(p.group_sim(&c).unwrap(), 0.75);
        let pairwise = docs.iter().map(|d| pairwise_sim(&c, d).unwrap()).sum::<f64>() / 2.0;
        assert_eq!(pairwise, 0.75);
    }

    #[test]
    fn single_doc_profile_is_indicator() {
        let cfg = NagConfig::explicit(ProjType::Up, vec![3, 2], vec![10, 7]).unwrap();
        let d = random_records(4, &cfg, 1).remove(0);
        let p = build_profile(std::slice::from_ref(&d), &cfg).unwrap();
        for (l, w) in p.weights().iter().enumerate() {
            assert!(w.iter().all(|&v| v == 0.0 || v == 1.0));
            assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), cfg.widths[l]);
        }
        assert_eq!(p.group_sim(&d).unwrap(), 1.0);
    }

    #[test]
    fn profile_mass_equals_k() {
        let cfg = NagConfig::explicit(ProjType::Up, vec![4, 7, 1], vec![30, 40, 5]).unwrap();
        let docs = random_records(8, &cfg, 500);
        let p = build_profile(&docs, &cfg).unwrap();
        for (m, &k) in p.layer_mass().iter().zip(&cfg.widths) {
            assert!((m - k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn group_sim_equals_mean_pairwise() {
        let cfg = NagConfig::explicit(ProjType::Up, vec![5, 5, 5], vec![40, 20, 60]).unwrap();
        let all = random_records(21, &cfg, 250);
        let (group, cands) = all.split_at(50);
        let p = build_profile(group, &cfg).unwrap();
        for c in &cands[..200] {
            let oracle = group.iter().map(|g| pairwise_sim(c, g).unwrap()).sum::<f64>() / group.len() as f64;
            assert!((p.group_sim(c).unwrap() - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn non_uniform_k_weights_layers_differently() {
        // Dice pools pairs across layers; group_sim averages per-layer coverage.
        // With K = [1, 3] they diverge.
        let cfg = NagConfig::explicit(ProjType::Up, vec![1, 3], vec![4, 4]).unwrap();
        let g = NagRecord { doc_id: 0, layers: vec![vec![0], vec![0, 1, 2]] };
        let c = NagRecord { doc_id: 1, layers: vec![vec![0], vec![1, 2, 3]] };
        let p = build_profile(std::slice::from_ref(&g), &cfg).unwrap();
        assert_eq!(pairwise_sim(&c, &g).unwrap(), 0.75);
        assert!((p.group_sim(&c).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn merge_matches_concatenation() {
        let cfg = NagConfig::explicit(ProjType::Up, vec![3, 3], vec![16, 16]).unwrap();
        let docs = random_records(2, &cfg, 301);
        let whole = build_profile(&docs, &cfg).unwrap();
        let merged = build_profile(&docs[..100], &cfg)
            .unwrap()
            .merge(&build_profile(&docs[100..], &cfg).unwrap())
            .unwrap();
        assert_eq!(merged.n_docs(), 301);
        for (a, b) in whole.weights().iter().zip(merged.weights()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let sharded = build_profile_sharded(&docs, &cfg, 37, Exec::Parallel).unwrap();
        for (a, b) in whole.weights().iter().zip(sharded.weights()) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn profile_errors() {
        let cfg = one_layer(2, 6);
        assert!(matches!(build_profile(&[], &cfg), Err(Error::Empty(_))));
        let bad = rec(0, vec![vec![1, 2, 3]]);
        assert!(matches!(build_profile(&[bad.clone()], &cfg), Err(Error::ConfigMismatch(_))));
        let p = build_profile(&[rec(0, vec![vec![1, 2]])], &cfg).unwrap();
        assert!(p.group_sim(&bad).is_err());
        let other = build_profile(&[rec(0, vec![vec![1, 2, 3]])], &one_layer(3, 6)).unwrap();
        assert!(p.merge(&other).is_err());
    }

    #[test]
    fn zero_mass_layer_errors() {
        let cfg = one_layer(1, 3);
        let mut p = build_profile(&[rec(0, vec![vec![1]])], &cfg).unwrap();
        p.weights[0] = vec![0.0; 3];
        assert!(matches!(p.group_sim(&rec(1, vec![vec![0]])), Err(Error::Invariant(_))));
    }

    #[test]
    fn profile_file_roundtrip_and_corruption() {
        let cfg = NagConfig::explicit(ProjType::Down, vec![2, 3], vec![9, 11]).unwrap();
        let p = build_profile(&random_records(5, &cfg, 33), &cfg).unwrap();
        let mut bytes = Vec::new();
        p.write(&mut bytes).unwrap();
        let back = GroupProfile::read(&bytes[..]).unwrap();
        assert_eq!(back, p);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(again, bytes);

        let mut bad = bytes.clone();
        let first_weight = cfg.header_len() as usize + 8;
        bad[first_weight..first_weight + 8].copy_from_slice(&1.5f64.to_le_bytes());
        assert!(matches!(GroupProfile::read(&bad[..]), Err(Error::Format { .. })));
        assert!(GroupProfile::read(&bytes[..bytes.len() - 1]).is_err());
    }
}
