//! Golden file fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::path::PathBuf;

use nagrank_core::nag::{read_nags, write_nags, NagConfig, NagRecord};
use nagrank_core::similarity::build_profile;
use nagrank_core::{Error, GroupProfile, ModelSpec, ProjType, ToyModel};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corrupt")
}

pub fn base_config() -> NagConfig {
    NagConfig::explicit(ProjType::Up, vec![3, 3], vec![10, 10]).unwrap()
}

pub fn base_records() -> Vec<NagRecord> {
    vec![
        NagRecord { doc_id: 7, layers: vec![vec![1, 4, 9], vec![0, 2, 3]] },
        NagRecord { doc_id: 8, layers: vec![vec![1, 5, 6], vec![2, 3, 8]] },
    ]
}

pub fn base_nag() -> Vec<u8> {
    write_nags(Vec::new(), &base_config(), &base_records()).unwrap()
}

pub fn base_profile_obj() -> GroupProfile {
    build_profile(&base_records(), &base_config()).unwrap()
}

pub fn base_profile() -> Vec<u8> {
    let mut buf = Vec::new();
    base_profile_obj().write(&mut buf).unwrap();
    buf
}

pub fn base_model_spec() -> ModelSpec {
    ModelSpec {
        n_layers: 1,
        d_model: 4,
        d_internal: 8,
        n_heads: 2,
        vocab_size: 8,
        max_seq_len: 4,
        rng_seed: 11,
    }
}

pub fn base_model() -> Vec<u8> {
    let mut buf = Vec::new();
    ToyModel::build(base_model_spec()).unwrap().write_checkpoint(&mut buf).unwrap();
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Nag,
    Profile,
    Model,
}

pub struct Corruption {
    pub name: &'static str,
    pub kind: Kind,
    /// Byte offset the reader must report.
    pub offset: u64,
    /// Substring of the reported reason.
    pub reason: &'static str,
    pub bytes: Vec<u8>,
}

// NAG layout for the base config: 28-byte header, 40-byte records
// (doc_id u64, then per layer: count u32 + 3 x u32).
const NAG_HEADER: usize = 28;
// Profile: 28-byte config echo + n_docs u64, then 10 f64 per layer.
const PROFILE_WEIGHTS: usize = 36;
// Checkpoint: magic, version, six u32 dims, seed u64.
const MODEL_WEIGHTS: usize = 40;

fn put_u32(b: &mut [u8], at: usize, v: u32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut [u8], at: usize, v: f64) {
    b[at..at + 8].copy_from_slice(&v.to_le_bytes());
}

pub fn corruptions() -> Vec<Corruption> {
    let nag = base_nag();
    let prof = base_profile();
    let model = base_model();
    let edit = |src: &Vec<u8>, f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = src.clone();
        f(&mut b);
        b
    };
    let rec0 = NAG_HEADER;
    vec![
        Corruption { name: "nag_bad_magic", kind: Kind::Nag, offset: 0, reason: "magic", bytes: edit(&nag, &|b| b[0] = b'X') },
        Corruption { name: "nag_bad_version", kind: Kind::Nag, offset: 4, reason: "version", bytes: edit(&nag, &|b| put_u32(b, 4, 2)) },
        Corruption { name: "nag_unknown_proj", kind: Kind::Nag, offset: 10, reason: "projection code", bytes: edit(&nag, &|b| b[10] = 9) },
        // header says K = 3, record claims 2 (the "19 of 20 indices" case)
        Corruption { name: "nag_length_field", kind: Kind::Nag, offset: (rec0 + 8) as u64, reason: "length field", bytes: edit(&nag, &|b| put_u32(b, rec0 + 8, 2)) },
        Corruption { name: "nag_unsorted", kind: Kind::Nag, offset: rec0 as u64, reason: "strictly increasing", bytes: edit(&nag, &|b| put_u32(b, rec0 + 12, 5)) },
        Corruption { name: "nag_index_out_of_range", kind: Kind::Nag, offset: rec0 as u64, reason: ">= d", bytes: edit(&nag, &|b| put_u32(b, rec0 + 20, 10)) },
        // the last field read is layer 1's 3-index array
        Corruption { name: "nag_truncated_record", kind: Kind::Nag, offset: (nag.len() - 12) as u64, reason: "truncated", bytes: nag[..nag.len() - 3].to_vec() },
        Corruption { name: "profile_bad_magic", kind: Kind::Profile, offset: 0, reason: "magic", bytes: edit(&prof, &|b| b[1] = b'?') },
        Corruption { name: "profile_weight_out_of_range", kind: Kind::Profile, offset: PROFILE_WEIGHTS as u64, reason: "outside [0, 1]", bytes: edit(&prof, &|b| put_f64(b, PROFILE_WEIGHTS, 1.5)) },
        // neuron 0 of layer 0 is in no record; giving it weight 0.5 breaks sum = K
        Corruption { name: "profile_mass_mismatch", kind: Kind::Profile, offset: PROFILE_WEIGHTS as u64, reason: "mass", bytes: edit(&prof, &|b| put_f64(b, PROFILE_WEIGHTS, 0.5)) },
        // the head matrix (4 x 8 f32) is read as one field
        Corruption { name: "model_truncated", kind: Kind::Model, offset: (model.len() - 4 * 32) as u64, reason: "truncated", bytes: model[..model.len() - 2].to_vec() },
        Corruption { name: "model_nonfinite_weight", kind: Kind::Model, offset: (MODEL_WEIGHTS + 4 * 5) as u64, reason: "non-finite", bytes: edit(&model, &|b| b[MODEL_WEIGHTS + 20..MODEL_WEIGHTS + 24].copy_from_slice(&f32::NAN.to_le_bytes())) },
    ]
}

/// Parses `bytes` with the reader for `kind`, returning the error if any.
pub fn read_as(kind: Kind, bytes: &[u8]) -> Option<Error> {
    match kind {
        Kind::Nag => read_nags(bytes).err(),
        Kind::Profile => GroupProfile::read(bytes).err(),
        Kind::Model => ToyModel::read_checkpoint(bytes).err(),
    }
}

/// Checks a corrupted file against its expectation; `Err` describes the mismatch.
pub fn check_corruption(c: &Corruption, bytes: &[u8]) -> Result<(), String> {
    match read_as(c.kind, bytes) {
        Some(Error::Format { offset, reason, .. }) if offset == c.offset && reason.contains(c.reason) => Ok(()),
        Some(e) => Err(format!("{}: unexpected error {e}", c.name)),
        None => Err(format!("{}: accepted a corrupted file", c.name)),
    }
}

pub struct DecontamFixture {
    pub name: String,
    pub targets: Vec<Vec<u32>>,
    pub tests: Vec<Vec<u32>>,
}

/// O(|a| * |b|) substring scan.
pub fn naive_shares(a: &[u32], b: &[u32], n: usize) -> bool {
    a.len() >= n && b.len() >= n && a.windows(n).any(|wa| b.windows(n).any(|wb| wa == wb))
}

pub fn naive_flags(f: &DecontamFixture, n: usize) -> Vec<u64> {
    f.targets
        .iter()
        .enumerate()
        .filter(|(_, t)| f.tests.iter().any(|s| naive_shares(t, s, n)))
        .map(|(i, _)| i as u64)
        .collect()
}

/// 50 seeded fixtures for n = 13: 12-token near misses, 13-token hits at
/// every position, periodic (repeated-gram) sequences, tiny alphabets and
/// single substitutions.
pub fn decontam_fixtures() -> Vec<DecontamFixture> {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let kinds = [
        "near_miss_12",
        "hit_13_inside",
        "hit_13_at_edges",
        "two_12_runs_split",
        "periodic",
        "binary_alphabet",
        "short_prefix",
        "single_substitution",
        "many_to_many",
        "exact_copies",
    ];
    let mut out = Vec::new();
    for (ki, kind) in kinds.iter().enumerate() {
        for v in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(ki as u64 * 100 + v);
            let mut rand_seq = |len: usize, alpha: u32| -> Vec<u32> { (0..len).map(|_| rng.random_range(0..alpha)).collect() };
            // fresh tokens that never occur in tests
            let fresh = |i: u32| 10_000 + i;
            let test = rand_seq(40, 500);
            let (targets, tests) = match *kind {
                "near_miss_12" => {
                    let a = 3 + v as usize * 4;
                    let mut t = vec![fresh(0)];
                    t.extend_from_slice(&test[a..a + 12]);
                    t.push(fresh(1));
                    (vec![t], vec![test])
                }
                "hit_13_inside" => {
                    let a = 2 + v as usize * 5;
                    let mut t = rand_seq(7, 500).into_iter().map(|x| x + 1000).collect::<Vec<_>>();
                    t.extend_from_slice(&test[a..a + 13]);
                    t.extend([fresh(2), fresh(3)]);
                    (vec![t], vec![test])
                }
                "hit_13_at_edges" => {
                    let start = test[..13].to_vec();
                    let end = test[test.len() - 13..].to_vec();
                    let mut miss = test[test.len() - 12..].to_vec();
                    miss.push(test[0].wrapping_add(1) % 500 + 600);
                    (vec![start, end, miss], vec![test])
                }
                "two_12_runs_split" => {
                    let a = v as usize * 2;
                    let mut t = test[a..a + 12].to_vec();
                    t.push(fresh(4));
                    t.extend_from_slice(&test[a + 13..a + 25]);
                    (vec![t], vec![test])
                }
                "periodic" => {
                    let p = 2 + v as usize;
                    let motif: Vec<u32> = (0..p as u32).collect();
                    let s: Vec<u32> = motif.iter().cycle().take(30).copied().collect();
                    let shifted: Vec<u32> = motif.iter().cycle().skip(1).take(13).copied().collect();
                    let too_short: Vec<u32> = motif.iter().cycle().take(12).copied().collect();
                    let mut broken: Vec<u32> = motif.iter().cycle().take(26).copied().collect();
                    broken[12] = 99;
                    broken[13] = 98;
                    (vec![shifted, too_short, broken], vec![s])
                }
                "binary_alphabet" => {
                    let tests = vec![rand_seq(30, 2), rand_seq(25, 2)];
                    let targets = (0..6).map(|i| rand_seq(14 + i * 3, 2)).collect();
                    (targets, tests)
                }
                "short_prefix" => {
                    let len = 8 + v as usize;
                    (vec![test[..len].to_vec(), test[..12].to_vec(), test[..13].to_vec()], vec![test])
                }
                "single_substitution" => {
                    let a = v as usize;
                    let mut t = test[a..a + 25].to_vec();
                    t[12] = fresh(5);
                    let mut t2 = test[a..a + 26].to_vec();
                    t2[12] = fresh(6);
                    (vec![t, t2], vec![test])
                }
                "many_to_many" => {
                    let tests: Vec<Vec<u32>> = (0..5).map(|_| rand_seq(30, 4)).collect();
                    let targets = (0..8).map(|i| rand_seq(13 + i * 2, 4)).collect();
                    (targets, tests)
                }
                _ => {
                    let other = rand_seq(13, 500);
                    let mut repeated = test[5..18].to_vec();
                    repeated.extend_from_slice(&test[5..18]);
                    (vec![test.clone(), other, repeated, Vec::new()], vec![test, Vec::new()])
                }
            };
            out.push(DecontamFixture {
                name: format!("{kind}_{v}"),
                targets,
                tests,
            });
        }
    }
    out
}
