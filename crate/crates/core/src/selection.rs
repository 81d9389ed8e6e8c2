//! Ranking candidate pools against target profiles and materializing
//! selections.
//!
//! Every ordering uses the same tie rule: score descending, then doc id
//! ascending.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::average_ranks;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nag::NagRecord;
use crate::similarity::GroupProfile;

/// Default threshold-estimation sample size.
pub const DEFAULT_SAMPLE_SIZE: usize = 100_000;
/// Default filtering rate.
pub const DEFAULT_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub doc_id: u64,
    pub score: f64,
    pub n_tokens: u64,
}

pub fn rank_order(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    b.score.total_cmp(&a.score).then(a.doc_id.cmp(&b.doc_id))
}

/// Sorts in place by (score desc, doc_id asc).
pub fn sort_ranked(cands: &mut [RankedCandidate]) {
    cands.sort_by(rank_order);
}

/// Number of items kept by ratio `r` out of `n`: `ceil(r * n)`.
pub fn keep_count(ratio: f64, n: usize) -> usize {
    // Guard against 0.07 * 100 = 7.000000000000001.
    (((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("filtering rate {ratio} outside (0, 1]")));
    }
    Ok(())
}

/// One group-similarity score per record, in input order. `n_tokens` are
/// looked up from `token_counts` (0 when absent).
pub fn score_pool(
    nags: &[NagRecord],
    profile: &GroupProfile,
    token_counts: &HashMap<u64, u64>,
    exec: Exec,
) -> Result<Vec<RankedCandidate>> {
    exec.try_map(nags, |rec| {
        Ok(RankedCandidate {
            doc_id: rec.doc_id,
            score: profile.group_sim(rec)?,
            n_tokens: token_counts.get(&rec.doc_id).copied().unwrap_or(0),
        })
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioSelection {
    /// Exact mode: ranked order. Threshold mode: pool order.
    pub selected: Vec<RankedCandidate>,
    pub achieved_fraction: f64,
    /// Score threshold used in estimation mode.
    pub threshold: Option<f64>,
}

impl RatioSelection {
    pub fn ids(&self) -> Vec<u64> {
        self.selected.iter().map(|c| c.doc_id).collect()
    }
}

/// Keeps the top `ratio` of the pool.
///
/// With `sample_size == 0`, `sample_size >= N` or `ratio == 1` this sorts the whole pool and
/// keeps `ceil(ratio * N)`. Otherwise it estimates the `(1 - ratio)` score
/// quantile from `sample_size` candidates drawn without replacement and keeps
/// every candidate scoring at or above it in a single pass.
pub fn select_top_ratio(scored: &[RankedCandidate], ratio: f64, sample_size: usize, seed: u64) -> Result<RatioSelection> {
    check_ratio(ratio)?;
    let n = scored.len();
    if n == 0 {
        return Ok(RatioSelection {
            selected: Vec::new(),
            achieved_fraction: 0.0,
            threshold: None,
        });
    }
    if sample_size == 0 || sample_size >= n || ratio >= 1.0 {
        let mut all = scored.to_vec();
        sort_ranked(&mut all);
        all.truncate(keep_count(ratio, n));
        return Ok(RatioSelection {
            achieved_fraction: all.len() as f64 / n as f64,
            selected: all,
            threshold: None,
        });
    }
    let threshold = estimate_threshold(scored, ratio, sample_size, seed);
    let selected: Vec<_> = scored.iter().filter(|c| c.score >= threshold).copied().collect();
    Ok(RatioSelection {
        achieved_fraction: selected.len() as f64 / n as f64,
        selected,
        threshold: Some(threshold),
    })
}

/// The `ceil(ratio * M)`-th largest score of a uniform sample of size `M`.
pub fn estimate_threshold(scored: &[RankedCandidate], ratio: f64, sample_size: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample: Vec<f64> = rand::seq::index::sample(&mut rng, scored.len(), sample_size)
        .into_iter()
        .map(|i| scored[i].score)
        .collect();
    let keep = keep_count(ratio, sample.len()).max(1);
    let (_, nth, _) = sample.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
    *nth
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetSelection {
    pub selected: Vec<RankedCandidate>,
    pub total_tokens: u64,
    /// The pool ran out before the budget was reached.
    pub under_budget: bool,
}

/// Shortest ranked prefix whose token total reaches `budget` (the crossing
/// document is included).
pub fn select_token_budget(scored: &[RankedCandidate], budget: u64) -> BudgetSelection {
    let mut all = scored.to_vec();
    sort_ranked(&mut all);
    let mut total = 0u64;
    let mut take = 0;
    while take < all.len() && total < budget {
        total += all[take].n_tokens;
        take += 1;
    }
    all.truncate(take);
    BudgetSelection {
        selected: all,
        total_tokens: total,
        under_budget: total < budget,
    }
}

/// One line of a selection manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: u64,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_id: Option<usize>,
    /// Zero-based position within the source selection.
    pub source_rank: usize,
}

/// Each target keeps `ratio / T` of the shared pool; the selections are
/// concatenated in target order without de-duplication.
pub fn select_multi_target(
    per_target: &[Vec<RankedCandidate>],
    ratio: f64,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    check_ratio(ratio)?;
    if per_target.is_empty() {
        return Err(Error::Empty("multi-target selection needs at least one target"));
    }
    let share = ratio / per_target.len() as f64;
    let mut out = Vec::new();
    for (t, scored) in per_target.iter().enumerate() {
        let sel = select_top_ratio(scored, share, sample_size, seed.wrapping_add(t as u64))?;
        out.extend(sel.selected.iter().enumerate().map(|(rank, c)| ManifestEntry {
            doc_id: c.doc_id,
            score: c.score,
            target_id: Some(t),
            source_rank: rank,
        }));
    }
    Ok(out)
}

/// Average-rank percentiles in `(0, 1]`: `avg_rank / N` with rank 1 the
/// lowest score.
pub fn percentile_ranks(scores: &[f64]) -> Vec<f64> {
    let n = scores.len() as f64;
    average_ranks(scores).into_iter().map(|r| r / n).collect()
}

/// `alpha * pct(nag) + (1 - alpha) * pct(quality)`, returned ranked.
pub fn joint_rank(nag: &[RankedCandidate], quality: &HashMap<u64, f64>, alpha: f64) -> Result<Vec<RankedCandidate>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("fusion weight {alpha} outside [0, 1]")));
    }
    let q: Vec<f64> = nag
        .iter()
        .map(|c| quality.get(&c.doc_id).copied().ok_or(Error::MissingScore(c.doc_id)))
        .collect::<Result<_>>()?;
    let s: Vec<f64> = nag.iter().map(|c| c.score).collect();
    // Blend ranks before dividing by N so equal blends compare equal.
    let (rn, rq) = (average_ranks(&s), average_ranks(&q));
    let n = nag.len() as f64;
    let mut fused: Vec<RankedCandidate> = nag
        .iter()
        .enumerate()
        .map(|(i, c)| RankedCandidate {
            score: (alpha * rn[i] + (1.0 - alpha) * rq[i]) / n,
            ..*c
        })
        .collect();
    sort_ranked(&mut fused);
    Ok(fused)
}

/// `doc_id \t score \t n_tokens` per line.
pub fn write_ranked<W: Write>(w: &mut W, cands: &[RankedCandidate]) -> Result<()> {
    for c in cands {
        writeln!(w, "{}\t{}\t{}", c.doc_id, c.score, c.n_tokens)?;
    }
    Ok(())
}

pub fn read_ranked<R: BufRead>(r: R) -> Result<Vec<RankedCandidate>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { line: i + 1, reason };
        let mut f = line.split('\t');
        let (Some(id), Some(score), Some(tok), None) = (f.next(), f.next(), f.next(), f.next()) else {
            return Err(parse_err("expected three tab-separated fields".into()));
        };
        let score: f64 = score.parse().map_err(|e| parse_err(format!("score: {e}")))?;
        if !score.is_finite() {
            return Err(parse_err("non-finite score".into()));
        }
        out.push(RankedCandidate {
            doc_id: id.parse().map_err(|e| parse_err(format!("doc_id: {e}")))?,
            score,
            n_tokens: tok.parse().map_err(|e| parse_err(format!("n_tokens: {e}")))?,
        });
    }
    Ok(out)
}

/// Reads `doc_id \t score` lines.
pub fn read_quality_scores<R: BufRead>(r: R) -> Result<HashMap<u64, f64>> {
    let mut out = HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { line: i + 1, reason };
        let (id, score) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `doc_id<TAB>score`".into()))?;
        let id: u64 = id.parse().map_err(|e| parse_err(format!("doc_id: {e}")))?;
        let score: f64 = score.trim().parse().map_err(|e| parse_err(format!("score: {e}")))?;
        if out.insert(id, score).is_some() {
            return Err(parse_err(format!("duplicate doc_id {id}")));
        }
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(w: &mut W, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut *w, e).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(r: R) -> Result<Vec<ManifestEntry>> {
    r.lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            serde_json::from_str(&l?).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(doc_id: u64, score: f64, n_tokens: u64) -> RankedCandidate {
        RankedCandidate { doc_id, score, n_tokens }
    }

    #[test]
    fn exact_top_ratio() {
        let pool: Vec<_> = (1..=100).map(|i| cand(i, i as f64, 1)).collect();
        let sel = select_top_ratio(&pool, 0.2, 0, 0).unwrap();
        assert_eq!(sel.ids(), (81..=100).rev().collect::<Vec<_>>());
        assert_eq!(sel.achieved_fraction, 0.2);
        for m in [0, 10, 100, 1000] {
            assert_eq!(select_top_ratio(&pool, 1.0, m, 3).unwrap().selected.len(), 100);
        }
        assert!(select_top_ratio(&pool, 0.0, 0, 0).is_err());
        assert!(select_top_ratio(&pool, 1.5, 0, 0).is_err());
        assert!(select_top_ratio(&[], 0.5, 0, 0).unwrap().selected.is_empty());
    }

    #[test]
    fn keep_count_rounding() {
        assert_eq!(keep_count(0.07, 100), 7);
        assert_eq!(keep_count(0.2, 101), 21);
        assert_eq!(keep_count(1.0, 5), 5);
        assert_eq!(keep_count(0.01, 5), 1);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let pool = vec![cand(5, 1.0, 0), cand(2, 1.0, 0), cand(9, 2.0, 0), cand(1, 0.5, 0)];
        let sel = select_top_ratio(&pool, 0.5, 0, 0).unwrap();
        assert_eq!(sel.ids(), vec![9, 2]);
    }

    #[test]
    fn sample_equal_to_pool_is_exact() {
        let pool: Vec<_> = (0..500).map(|i| cand(i, ((i * 7919) % 503) as f64, 1)).collect();
        assert_eq!(
            select_top_ratio(&pool, 0.3, 500, 1).unwrap(),
            select_top_ratio(&pool, 0.3, 0, 1).unwrap()
        );
    }

    #[test]
    fn threshold_mode_is_single_pass_and_close() {
        let pool: Vec<_> = (0..20_000).map(|i| cand(i, ((i * 7919) % 20_011) as f64, 1)).collect();
        let sel = select_top_ratio(&pool, 0.2, 2_000, 9).unwrap();
        let t = sel.threshold.unwrap();
        assert!(sel.selected.iter().all(|c| c.score >= t));
        assert!((sel.achieved_fraction - 0.2).abs() < 0.03);
        // pool order preserved
        assert!(sel.selected.windows(2).all(|w| w[0].doc_id < w[1].doc_id));
    }

    #[test]
    fn token_budget() {
        let pool = vec![cand(0, 3.0, 10), cand(1, 2.0, 10), cand(2, 1.0, 10)];
        let b = select_token_budget(&pool, 15);
        assert_eq!(b.selected.iter().map(|c| c.doc_id).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(b.total_tokens, 20);
        assert!(!b.under_budget);
        assert!(select_token_budget(&pool, 0).selected.is_empty());
        let all = select_token_budget(&pool, 31);
        assert_eq!(all.selected.len(), 3);
        assert!(all.under_budget);
        assert!(!select_token_budget(&pool, 30).under_budget);
    }

    #[test]
    fn multi_target() {
        let pool: Vec<_> = (0..50).map(|i| cand(i, i as f64, 1)).collect();
        let single = select_top_ratio(&pool, 0.2, 0, 0).unwrap();
        let one = select_multi_target(std::slice::from_ref(&pool), 0.2, 0, 0).unwrap();
        assert_eq!(one.iter().map(|e| e.doc_id).collect::<Vec<_>>(), single.ids());

        let reversed: Vec<_> = (0..50).map(|i| cand(i, -(i as f64), 1)).collect();
        let two = select_multi_target(&[pool.clone(), reversed.clone()], 0.2, 0, 0).unwrap();
        let a = select_top_ratio(&pool, 0.1, 0, 0).unwrap().ids();
        let b = select_top_ratio(&reversed, 0.1, 0, 0).unwrap().ids();
        assert_eq!(two.len(), a.len() + b.len());
        assert_eq!(two.len(), 10);
        assert_eq!(two.iter().map(|e| e.doc_id).collect::<Vec<_>>(), [a, b].concat());

        let dup = select_multi_target(&[pool.clone(), pool.clone()], 0.2, 0, 0).unwrap();
        assert_eq!(dup.iter().filter(|e| e.doc_id == 49).count(), 2);
        assert!(select_multi_target(&[], 0.2, 0, 0).is_err());
    }

    #[test]
    fn joint_rank_manual_oracle() {
        // nag scores:     d1=0.9 d2=0.5 d3=0.5 d4=0.1 d5=0.7
        // nag ranks asc:  d4=1 d2,d3=2.5 d5=4 d1=5 -> pct /5
        // quality:        d1=1 d2=5 d3=3 d4=4 d5=2 -> ranks equal values
        let nag = vec![
            cand(1, 0.9, 0),
            cand(2, 0.5, 0),
            cand(3, 0.5, 0),
            cand(4, 0.1, 0),
            cand(5, 0.7, 0),
        ];
        let q: HashMap<u64, f64> = [(1, 1.0), (2, 5.0), (3, 3.0), (4, 4.0), (5, 2.0)].into();
        let fused = joint_rank(&nag, &q, 0.5).unwrap();
        // fused = (nag_rank + q_rank) / 10:
        // d1 (5+1)=0.6, d2 (2.5+5)=0.75, d3 (2.5+3)=0.55, d4 (1+4)=0.5, d5 (4+2)=0.6
        let order: Vec<u64> = fused.iter().map(|c| c.doc_id).collect();
        assert_eq!(order, vec![2, 1, 5, 3, 4]);
        assert!((fused[0].score - 0.75).abs() < 1e-12);

        let nag_only = joint_rank(&nag, &q, 1.0).unwrap();
        let mut sorted = nag.clone();
        sort_ranked(&mut sorted);
        assert_eq!(
            nag_only.iter().map(|c| c.doc_id).collect::<Vec<_>>(),
            sorted.iter().map(|c| c.doc_id).collect::<Vec<_>>()
        );
        let q_only = joint_rank(&nag, &q, 0.0).unwrap();
        assert_eq!(q_only.iter().map(|c| c.doc_id).collect::<Vec<_>>(), vec![2, 4, 3, 5, 1]);

        let mut missing = q.clone();
        missing.remove(&3);
        assert!(matches!(joint_rank(&nag, &missing, 0.5), Err(Error::MissingScore(3))));
        assert!(joint_rank(&nag, &q, 1.5).is_err());
    }

    #[test]
    fn ranked_and_manifest_io() {
        let c = vec![cand(3, 0.125, 7), cand(1, 0.5, 0)];
        let mut buf = Vec::new();
        write_ranked(&mut buf, &c).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "3\t0.125\t7\n1\t0.5\t0\n");
        assert_eq!(read_ranked(&buf[..]).unwrap(), c);
        assert!(matches!(read_ranked(&b"1\t2\n"[..]), Err(Error::Parse { line: 1, .. })));

        let m = vec![
            ManifestEntry { doc_id: 1, score: 0.5, target_id: Some(0), source_rank: 0 },
            ManifestEntry { doc_id: 2, score: 0.25, target_id: None, source_rank: 1 },
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &m).unwrap();
        assert_eq!(read_manifest(&buf[..]).unwrap(), m);

        let q = read_quality_scores(&b"1\t0.5\n2\t-1\n"[..]).unwrap();
        assert_eq!(q[&2], -1.0);
        assert!(read_quality_scores(&b"1\t0.5\n1\t2\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn monotone_transform_and_nesting(scores in proptest::collection::vec(-5.0f64..5.0, 1..200), r in 0.01f64..1.0) {
            let pool: Vec<_> = scores.iter().enumerate().map(|(i, &s)| cand(i as u64, s, 1)).collect();
            let transformed: Vec<_> = pool.iter().map(|c| cand(c.doc_id, c.score.exp() * 3.0 + 1.0, 1)).collect();
            let a = select_top_ratio(&pool, r, 0, 0).unwrap();
            let b = select_top_ratio(&transformed, r, 0, 0).unwrap();
            prop_assert_eq!(a.ids(), b.ids());
            let smaller = select_top_ratio(&pool, r / 2.0, 0, 0).unwrap();
            let big: std::collections::HashSet<u64> = a.ids().into_iter().collect();
            prop_assert!(smaller.ids().iter().all(|id| big.contains(id)));
        }

        #[test]
        fn budget_is_minimal_prefix(tokens in proptest::collection::vec(0u64..50, 1..60), budget in 0u64..1000) {
            let pool: Vec<_> = tokens.iter().enumerate().map(|(i, &t)| cand(i as u64, (i % 7) as f64, t)).collect();
            let sel = select_token_budget(&pool, budget);
            let total: u64 = sel.selected.iter().map(|c| c.n_tokens).sum();
            prop_assert_eq!(total, sel.total_tokens);
            if !sel.under_budget {
                prop_assert!(total >= budget);
                if let Some(last) = sel.selected.last() {
                    prop_assert!(total - last.n_tokens < budget);
                }
            }
        }
    }
}
