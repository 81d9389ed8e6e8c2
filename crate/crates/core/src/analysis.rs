//! Deactivation masks, NAG distance matrices, clustering and its quality
//! metrics, rank-sensitivity statistics and binomial standard errors.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use byteorder::{LittleEndian, WriteBytesExt};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::impact::ImpactStats;
use crate::io::{write_f32s, BinReader};
use crate::model::{ModelSpec, NeuronId, ProjType};
use crate::nag::NagRecord;
use crate::selection::keep_count;
use crate::similarity::{nag_distance, GroupProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskCriterion {
    NagTopkPerLayer,
    Random,
    HighMean,
    HighDelta,
    /// A rank band of impact-sorted neurons (impact/loss validation).
    ImpactBand,
}

impl fmt::Display for MaskCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskCriterion::NagTopkPerLayer => "nag-topk",
            MaskCriterion::Random => "random",
            MaskCriterion::HighMean => "high-mean",
            MaskCriterion::HighDelta => "high-delta",
            MaskCriterion::ImpactBand => "impact-band",
        })
    }
}

impl FromStr for MaskCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nag-topk" => Ok(MaskCriterion::NagTopkPerLayer),
            "random" => Ok(MaskCriterion::Random),
            "high-mean" => Ok(MaskCriterion::HighMean),
            "high-delta" => Ok(MaskCriterion::HighDelta),
            "impact-band" => Ok(MaskCriterion::ImpactBand),
            _ => Err(Error::Config(format!("unknown mask criterion {s:?}"))),
        }
    }
}

/// A duplicate-free set of neurons to force to zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeactivationMask {
    entries: Vec<NeuronId>,
    criterion: MaskCriterion,
    /// Selection scores were all equal, so the mask is decided by the tie rule alone.
    pub degenerate: bool,
}

impl DeactivationMask {
    pub fn new(entries: Vec<NeuronId>, criterion: MaskCriterion) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(*e) {
                return Err(Error::Invariant(format!(
                    "duplicate mask entry layer {} {} {}",
                    e.layer, e.proj, e.index
                )));
            }
        }
        Ok(DeactivationMask {
            entries,
            criterion,
            degenerate: false,
        })
    }

    pub fn empty(criterion: MaskCriterion) -> Self {
        DeactivationMask {
            entries: Vec::new(),
            criterion,
            degenerate: false,
        }
    }

    pub fn entries(&self) -> &[NeuronId] {
        &self.entries
    }

    pub fn criterion(&self) -> MaskCriterion {
        self.criterion
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks every entry against a model's dimensions.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        for e in &self.entries {
            let width = spec.d_out(e.proj);
            if e.layer >= spec.n_layers || e.index >= width {
                return Err(Error::NeuronOutOfRange {
                    proj: crate::model::ProjectionRef::new(e.layer, e.proj),
                    index: e.index,
                    width,
                });
            }
        }
        Ok(())
    }

    /// `layer \t proj \t index` per line.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        for e in &self.entries {
            writeln!(w, "{}\t{}\t{}", e.layer, e.proj, e.index)?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R, criterion: MaskCriterion) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { line: i + 1, reason };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(err("expected `layer<TAB>proj<TAB>index`".into()));
            }
            entries.push(NeuronId {
                layer: f[0].parse().map_err(|e| err(format!("layer: {e}")))?,
                proj: f[1].parse().map_err(|e: Error| err(e.to_string()))?,
                index: f[2].parse().map_err(|e| err(format!("index: {e}")))?,
            });
        }
        Self::new(entries, criterion)
    }
}

fn top_n_desc(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Per layer, the `n` most frequently activated neurons of the profile.
pub fn mask_nag_topk(profile: &GroupProfile, n: usize) -> Result<DeactivationMask> {
    let cfg = profile.config();
    let mut entries = Vec::new();
    for ((w, &layer), &d) in profile.weights().iter().zip(&cfg.layers).zip(&cfg.dims) {
        if n > d {
            return Err(Error::Config(format!("cannot mask {n} of {d} neurons in layer {layer}")));
        }
        entries.extend(top_n_desc(w, n).into_iter().map(|index| NeuronId {
            layer,
            proj: cfg.proj,
            index,
        }));
    }
    DeactivationMask::new(entries, MaskCriterion::NagTopkPerLayer)
}

fn global_top(
    stats: &[ImpactStats],
    value: impl Fn(usize, usize) -> f64,
    n: usize,
    criterion: MaskCriterion,
) -> Result<DeactivationMask> {
    let mut all: Vec<(NeuronId, f64)> = Vec::new();
    for (si, s) in stats.iter().enumerate() {
        for k in 0..s.mean.len() {
            all.push((
                NeuronId {
                    layer: s.proj.layer,
                    proj: s.proj.proj,
                    index: k,
                },
                value(si, k),
            ));
        }
    }
    if n > all.len() {
        return Err(Error::Config(format!("cannot mask {n} of {} neurons", all.len())));
    }
    let degenerate = all.windows(2).all(|w| w[0].1 == w[1].1);
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mask = DeactivationMask::new(all[..n].iter().map(|e| e.0).collect(), criterion)?;
    mask.degenerate = degenerate;
    Ok(mask)
}

/// Global top-`n` neurons by mean target impact minus mean random impact.
pub fn mask_high_delta(target: &[ImpactStats], random: &[ImpactStats], n: usize) -> Result<DeactivationMask> {
    if target.len() != random.len() {
        return Err(Error::Config("target and random stats cover different projections".into()));
    }
    for (t, r) in target.iter().zip(random) {
        if t.proj != r.proj {
            return Err(Error::ProjectionMismatch {
                expected: t.proj,
                actual: r.proj,
            });
        }
        if t.mean.len() != r.mean.len() {
            return Err(Error::Dimension {
                context: "impact stats width",
                expected: t.mean.len(),
                actual: r.mean.len(),
            });
        }
        if t.count == 0 || r.count == 0 {
            return Err(Error::Empty("impact stats with no samples"));
        }
    }
    global_top(
        target,
        |s, k| target[s].mean[k] - random[s].mean[k],
        n,
        MaskCriterion::HighDelta,
    )
}

/// Global top-`n` neurons by mean impact.
pub fn mask_high_mean(stats: &[ImpactStats], n: usize) -> Result<DeactivationMask> {
    global_top(stats, |s, k| stats[s].mean[k], n, MaskCriterion::HighMean)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskCount {
    PerLayer(usize),
    Global(usize),
}

/// Uniform sampling without replacement, per layer or across all layers.
pub fn mask_random(spec: &ModelSpec, proj: ProjType, count: MaskCount, seed: u64) -> Result<DeactivationMask> {
    let d = spec.d_out(proj);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = match count {
        MaskCount::PerLayer(n) => {
            if n > d {
                return Err(Error::Config(format!("cannot sample {n} of {d} neurons per layer")));
            }
            (0..spec.n_layers)
                .flat_map(|layer| {
                    let mut picks = index::sample(&mut rng, d, n).into_vec();
                    picks.sort_unstable();
                    picks.into_iter().map(move |index| NeuronId { layer, proj, index })
                })
                .collect()
        }
        MaskCount::Global(n) => {
            let total = d * spec.n_layers;
            if n > total {
                return Err(Error::Config(format!("cannot sample {n} of {total} neurons")));
            }
            let mut picks = index::sample(&mut rng, total, n).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|i| NeuronId {
                    layer: i / d,
                    proj,
                    index: i % d,
                })
                .collect()
        }
    };
    DeactivationMask::new(entries, MaskCriterion::Random)
}

/// Dense symmetric `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = f(i, j);
            }
        }
        DistanceMatrix { n, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.into_iter().enumerate() {
            if r.len() != n {
                return Err(Error::Dimension {
                    context: "distance matrix row",
                    expected: n,
                    actual: r.len(),
                });
            }
            if r.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Invariant(format!("row {i}: negative or non-finite distance")));
            }
            data.extend(r);
        }
        Ok(DistanceMatrix { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `n u32` followed by row-major f32 values.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u32::<LittleEndian>(self.n as u32)?;
        write_f32s(w, self.data.iter().map(|&v| v as f32))?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut r = BinReader::new(r, "distance matrix");
        let n = r.u32("n")? as usize;
        let mut buf = vec![0f32; n * n];
        r.f32s(&mut buf, "distances")?;
        r.expect_eof()?;
        let data: Vec<f64> = buf.into_iter().map(f64::from).collect();
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(r.error_at(4, "negative or non-finite distance"));
        }
        Ok(DistanceMatrix { n, data })
    }
}

/// `D[i][j] = 1 - Sim(i, j)`, upper triangle computed in parallel.
pub fn distance_matrix(records: &[NagRecord], exec: Exec) -> Result<DistanceMatrix> {
    let n = records.len();
    if n < 2 {
        return Err(Error::Empty("distance matrix needs at least two records"));
    }
    let rows = exec.map_range(n, |i| -> Result<Vec<f64>> {
        ((i + 1)..n).map(|j| nag_distance(&records[i], &records[j])).collect()
    });
    let mut data = vec![0.0; n * n];
    for (i, row) in rows.into_iter().enumerate() {
        for (off, d) in row?.into_iter().enumerate() {
            let j = i + 1 + off;
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, data })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per item, `0..k`, numbered by ascending medoid index.
    pub assignments: Vec<usize>,
    /// Item index of each cluster's medoid, ascending.
    pub medoids: Vec<usize>,
    /// Sum of distances from items to their medoid.
    pub cost: f64,
    pub iterations: usize,
}

const MEDOID_MAX_ITER: usize = 100;

fn nearest(d: &DistanceMatrix, medoids: &[usize], i: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, &m) in medoids.iter().enumerate() {
        let v = d.get(i, m);
        if v < best.1 {
            best = (c, v);
        }
    }
    best
}

fn total_cost(d: &DistanceMatrix, medoids: &[usize]) -> f64 {
    (0..d.len()).map(|i| nearest(d, medoids, i).1).sum()
}

/// k-medoids: seeded D-weighted initialization followed by best-improvement
/// swaps until no swap lowers the total distance (at most 100 rounds).
pub fn cluster_medoids(d: &DistanceMatrix, k: usize, seed: u64) -> Result<Clustering> {
    let n = d.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k = {k} outside [1, {n}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = vec![rng.random_range(0..n)];
    while medoids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| if medoids.contains(&i) { 0.0 } else { nearest(d, &medoids, i).1 })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut x = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if x < *w {
                    chosen = i;
                    break;
                }
                x -= w;
            }
            // float leftovers can land on a zero-weight tail
            if medoids.contains(&chosen) {
                (0..n).rev().find(|i| weights[*i] > 0.0).expect("positive mass")
            } else {
                chosen
            }
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !medoids.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        medoids.push(pick);
    }

    let mut cost = total_cost(d, &medoids);
    let mut iterations = 0;
    while iterations < MEDOID_MAX_ITER {
        iterations += 1;
        let mut best: Option<(usize, usize, f64)> = None;
        for slot in 0..k {
            for h in 0..n {
                if medoids.contains(&h) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = h;
                let c = total_cost(d, &trial);
                if c < cost - 1e-12 && best.is_none_or(|b| c < b.2) {
                    best = Some((slot, h, c));
                }
            }
        }
        match best {
            Some((slot, h, c)) => {
                medoids[slot] = h;
                cost = c;
            }
            None => break,
        }
    }
    medoids.sort_unstable();
    let assignments = (0..n).map(|i| nearest(d, &medoids, i).0).collect();
    Ok(Clustering {
        assignments,
        medoids,
        cost,
        iterations,
    })
}

struct Contingency {
    n: f64,
    cells: HashMap<(usize, usize), f64>,
    rows: HashMap<usize, f64>,
    cols: HashMap<usize, f64>,
}

fn contingency(assignments: &[usize], labels: &[usize]) -> Result<Contingency> {
    if assignments.len() != labels.len() {
        return Err(Error::Dimension {
            context: "assignments vs labels",
            expected: labels.len(),
            actual: assignments.len(),
        });
    }
    if assignments.is_empty() {
        return Err(Error::Empty("clustering metrics need at least one item"));
    }
    let mut c = Contingency {
        n: assignments.len() as f64,
        cells: HashMap::new(),
        rows: HashMap::new(),
        cols: HashMap::new(),
    };
    for (&a, &l) in assignments.iter().zip(labels) {
        *c.cells.entry((a, l)).or_default() += 1.0;
        *c.rows.entry(a).or_default() += 1.0;
        *c.cols.entry(l).or_default() += 1.0;
    }
    Ok(c)
}

/// `(1/N) sum_k max_j |C_k ∩ L_j|`.
pub fn purity(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let c = contingency(assignments, labels)?;
    let mut best: HashMap<usize, f64> = HashMap::new();
    for (&(a, _), &v) in &c.cells {
        let e = best.entry(a).or_default();
        *e = e.max(v);
    }
    Ok(best.values().sum::<f64>() / c.n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nmi {
    pub value: f64,
    /// One side has zero entropy; the ratio is 0/0 and reported as 0.
    pub degenerate: bool,
}

fn entropy(counts: &HashMap<usize, f64>, n: f64) -> f64 {
    counts
        .values()
        .map(|&v| {
            let p = v / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(C; L) / sqrt(H(C) H(L))`, natural logarithms.
pub fn nmi(assignments: &[usize], labels: &[usize]) -> Result<Nmi> {
    let c = contingency(assignments, labels)?;
    let (hc, hl) = (entropy(&c.rows, c.n), entropy(&c.cols, c.n));
    if hc == 0.0 || hl == 0.0 {
        return Ok(Nmi {
            value: 0.0,
            degenerate: true,
        });
    }
    let mi: f64 = c
        .cells
        .iter()
        .map(|(&(a, l), &v)| {
            let pxy = v / c.n;
            pxy * (v * c.n / (c.rows[&a] * c.cols[&l])).ln()
        })
        .sum();
    Ok(Nmi {
        value: (mi / (hc * hl).sqrt()).clamp(0.0, 1.0),
        degenerate: false,
    })
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from pair counts.
pub fn ari(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    let c = contingency(assignments, labels)?;
    let index: f64 = c.cells.values().map(|&v| choose2(v)).sum();
    let a: f64 = c.rows.values().map(|&v| choose2(v)).sum();
    let b: f64 = c.cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(c.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = a * b / total;
    let max = (a + b) / 2.0;
    if max == expected {
        // Both partitions trivial (all-in-one or all-singletons): identical up to chance.
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub assignments: Vec<usize>,
    pub purity: f64,
    pub nmi: f64,
    pub nmi_degenerate: bool,
    pub ari: f64,
}

impl ClusterReport {
    pub fn new(assignments: Vec<usize>, labels: &[usize]) -> Result<Self> {
        let n = nmi(&assignments, labels)?;
        Ok(ClusterReport {
            purity: purity(&assignments, labels)?,
            nmi: n.value,
            nmi_degenerate: n.degenerate,
            ari: ari(&assignments, labels)?,
            assignments,
        })
    }

    /// `key = value` lines.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "items = {}", self.assignments.len())?;
        writeln!(w, "purity = {}", self.purity)?;
        writeln!(w, "nmi = {}", self.nmi)?;
        writeln!(w, "nmi_degenerate = {}", self.nmi_degenerate)?;
        writeln!(w, "ari = {}", self.ari)?;
        Ok(())
    }
}

/// 1-based ranks, ascending by value, ties receive their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension {
            context: "pearson inputs",
            expected: xs.len(),
            actual: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Empty("correlation needs at least two points"));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Invariant("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "spearman inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Positions of the top `ceil(r * N)` scores under (score desc, position asc).
pub fn top_set(scores: &[f64], r: f64) -> HashSet<usize> {
    top_n_desc(scores, keep_count(r, scores.len())).into_iter().collect()
}

/// Jaccard overlap of the exact top-`r` sets of two aligned score vectors.
pub fn topset_jaccard(a: &[f64], b: &[f64], r: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "topset_jaccard inputs",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::Config(format!("ratio {r} outside (0, 1]")));
    }
    let (sa, sb) = (top_set(a, r), top_set(b, r));
    let union = sa.union(&sb).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(sa.intersection(&sb).count() as f64 / union as f64)
}

/// Joins two scored lists on doc id; the result is ordered by doc id so that
/// position order equals the global tie order.
pub fn align_scores(
    a: &[crate::selection::RankedCandidate],
    b: &[crate::selection::RankedCandidate],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let bm: HashMap<u64, f64> = b.iter().map(|c| (c.doc_id, c.score)).collect();
    if bm.len() != a.len() || b.len() != a.len() {
        return Err(Error::Config("score lists cover different documents".into()));
    }
    let mut pairs: Vec<(u64, f64, f64)> = a
        .iter()
        .map(|c| {
            bm.get(&c.doc_id)
                .map(|&s| (c.doc_id, c.score, s))
                .ok_or(Error::MissingScore(c.doc_id))
        })
        .collect::<Result<_>>()?;
    pairs.sort_by_key(|p| p.0);
    Ok(pairs.into_iter().map(|(_, x, y)| (x, y)).unzip())
}

/// `sqrt(p (1 - p) / n)`.
pub fn binomial_se(p: f64, n: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("proportion {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::Empty("sample size must be positive"));
    }
    Ok((p * (1.0 - p) / n as f64).sqrt())
}
