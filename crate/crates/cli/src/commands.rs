use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, ensure, Context, Result};

use nagrank_core::analysis::{
    align_scores, binomial_se, cluster_medoids, distance_matrix, mask_high_delta, mask_high_mean, mask_nag_topk,
    mask_random, spearman, topset_jaccard, ClusterReport, DeactivationMask, DistanceMatrix, MaskCount, MaskCriterion,
};
use nagrank_core::corpus::{decontaminate, write_ids, ByteTokenizer, CorpusReader, Document, Malformed, Tokenizer};
use nagrank_core::extract::{check_config, document_impacts, truncate};
use nagrank_core::impact::{collect_stats, write_impact_record, Aggregation};
use nagrank_core::nag::{build_nag, LayerSet, NagReader, NagWriter, WidthRounding};
use nagrank_core::selection::{
    joint_rank, read_quality_scores, read_ranked, score_pool, select_multi_target, select_token_budget,
    select_top_ratio, sort_ranked, write_manifest, write_ranked, ManifestEntry, RankedCandidate, DEFAULT_RATIO,
    DEFAULT_SAMPLE_SIZE,
};
use nagrank_core::{exec, Exec, GroupProfile, ModelSpec, NagConfig, NagRecord, ProjType, ToyModel};

use crate::config::{pick, RunConfig};
use crate::{AnalyzeCommand, Cli, Command};

/// Documents extracted per parallel batch before writing.
const CHUNK: usize = 256;
const DEFAULT_K: usize = 20;
const DEFAULT_NGRAM: usize = 13;
const DEFAULT_ALPHA: f64 = 0.5;

struct Ctx {
    cfg: RunConfig,
    exec: Exec,
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(path) = &cli.format {
        return describe_file(path);
    }
    let Some(command) = cli.command else {
        bail!("no command given (try --help)");
    };
    let cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads.or(cfg.threads) {
        ensure!(n > 0, "--threads must be positive");
        exec::set_threads(n)?;
    }
    let ctx = Ctx {
        exec: if cli.sequential { Exec::Sequential } else { Exec::default() },
        cfg,
    };
    match command {
        Command::InitModel(a) => init_model(a),
        Command::Extract(a) => extract(&ctx, a),
        Command::Profile(a) => profile(a),
        Command::Rank(a) => rank(&ctx, a),
        Command::Select(a) => select(&ctx, a),
        Command::Mix(a) => mix(&ctx, a),
        Command::Fuse(a) => fuse(&ctx, a),
        Command::Analyze(a) => analyze(&ctx, a),
        Command::Decontam(a) => decontam(&ctx, a),
        Command::Merge(a) => merge(a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn read_model(path: &Path) -> Result<ToyModel> {
    ToyModel::read_checkpoint(open(path)?).with_context(|| format!("reading model {}", path.display()))
}

fn read_nag_file(path: &Path) -> Result<(NagConfig, Vec<NagRecord>)> {
    NagReader::new(open(path)?)
        .and_then(|r| r.read_all())
        .with_context(|| format!("reading {}", path.display()))
}

fn read_profile(path: &Path) -> Result<GroupProfile> {
    GroupProfile::read(open(path)?).with_context(|| format!("reading profile {}", path.display()))
}

fn read_docs(path: &Path, mode: Malformed) -> Result<Vec<Document>> {
    let mut reader = CorpusReader::new(open(path)?, mode);
    let docs = reader
        .by_ref()
        .collect::<nagrank_core::Result<Vec<_>>>()
        .with_context(|| format!("reading corpus {}", path.display()))?;
    warn_skipped(path, reader.skipped());
    Ok(docs)
}

fn warn_skipped(path: &Path, skipped: &[(usize, String)]) {
    for (line, reason) in skipped {
        eprintln!("warning: {}:{line}: skipped ({reason})", path.display());
    }
}

fn tokenized(path: &Path) -> Result<Vec<Document>> {
    let mut docs = read_docs(path, Malformed::Fatal)?;
    for d in &mut docs {
        d.tokenize(&ByteTokenizer);
    }
    Ok(docs)
}

/// Token ids as seen by `model` (truncated to its context length).
fn token_lists(docs: &[Document], model: &ToyModel) -> Result<Vec<Vec<u32>>> {
    docs.iter()
        .map(|d| Ok(truncate(model, d.tokens()?).map_err(|e| e.in_doc(d.doc_id))?.to_vec()))
        .collect()
}

fn read_ranked_file(path: &Path) -> Result<Vec<RankedCandidate>> {
    read_ranked(open(path)?).with_context(|| format!("reading ranked file {}", path.display()))
}

fn parse_proj(s: &str) -> Result<ProjType> {
    s.parse().map_err(|e| anyhow!("{e}"))
}

fn parse_layers(s: &str) -> Result<LayerSet> {
    match s {
        "all" => Ok(LayerSet::All),
        "last" => Ok(LayerSet::Last),
        other => bail!("unknown layer set {other:?} (expected all or last)"),
    }
}

fn init_model(a: crate::InitModelArgs) -> Result<()> {
    let spec = ModelSpec {
        n_layers: a.n_layers,
        d_model: a.d_model,
        d_internal: a.d_internal,
        n_heads: a.n_heads,
        vocab_size: a.vocab_size,
        max_seq_len: a.max_seq_len,
        rng_seed: a.seed.unwrap_or(0),
    };
    let model = ToyModel::build(spec)?;
    let mut w = create(&a.out)?;
    model.write_checkpoint(&mut w)?;
    w.flush()?;
    eprintln!("wrote {} ({spec:?})", a.out.display());
    Ok(())
}

fn nag_config(ctx: &Ctx, a: &crate::NagArgs, model: &ToyModel) -> Result<NagConfig> {
    let spec = model.spec();
    let proj = parse_proj(&pick(a.proj.clone(), ctx.cfg.proj.clone(), "up".into()))?;
    let layers = parse_layers(&pick(a.layers.clone(), ctx.cfg.layers.clone(), "all".into()))?;
    // an explicit flag of either kind beats both config entries
    let (k, ratio) = match (a.k, a.width_ratio) {
        (Some(k), _) => (Some(k), None),
        (None, Some(r)) => (None, Some(r)),
        (None, None) => (ctx.cfg.k, if ctx.cfg.k.is_some() { None } else { ctx.cfg.width_ratio }),
    };
    let cfg = match (k, ratio) {
        (_, Some(r)) => NagConfig::from_ratio(spec, proj, layers, r, WidthRounding::default())?,
        (k, None) => NagConfig::uniform(spec, proj, layers, k.unwrap_or(DEFAULT_K.min(spec.d_out(proj))))?,
    };
    check_config(model, &cfg)?;
    Ok(cfg)
}

/// Validates an interrupted output file, drops a torn trailing record and
/// returns the ids of the complete records already present.
fn prepare_resume(path: &Path, cfg: &NagConfig) -> Result<Vec<u64>> {
    let mut reader = NagReader::new(open(path)?).with_context(|| format!("resuming {}", path.display()))?;
    let existing = reader.config().clone();
    existing
        .ensure_compatible(cfg)
        .with_context(|| format!("{} was written with a different configuration", path.display()))?;
    ensure!(
        existing.layer_set == cfg.layer_set,
        "{} uses layer set {:?}, requested {:?}",
        path.display(),
        existing.layer_set,
        cfg.layer_set
    );
    let len = std::fs::metadata(path)?.len();
    let complete = (len - cfg.header_len()) / cfg.record_len();
    let mut ids = Vec::with_capacity(complete as usize);
    for _ in 0..complete {
        let rec = reader
            .read_record()
            .with_context(|| format!("resuming {}", path.display()))?
            .ok_or_else(|| anyhow!("{} ended early", path.display()))?;
        ids.push(rec.doc_id);
    }
    let keep = cfg.header_len() + complete * cfg.record_len();
    if keep < len {
        eprintln!(
            "resume: dropping {} bytes of a partial record from {}",
            len - keep,
            path.display()
        );
        OpenOptions::new().write(true).open(path)?.set_len(keep)?;
    }
    Ok(ids)
}

fn extract(ctx: &Ctx, a: crate::ExtractArgs) -> Result<()> {
    let model = read_model(&a.model)?;
    ensure!(
        model.spec().vocab_size >= ByteTokenizer.vocab_size(),
        "model vocabulary {} is smaller than the byte tokenizer's {}",
        model.spec().vocab_size,
        ByteTokenizer.vocab_size()
    );
    let cfg = nag_config(ctx, &a.nag, &model)?;
    eprintln!("config: {cfg}");

    let done = if a.resume && a.out.exists() {
        prepare_resume(&a.out, &cfg)?
    } else {
        Vec::new()
    };
    let mut writer = if done.is_empty() {
        NagWriter::new(create(&a.out)?, cfg.clone())?
    } else {
        let f = OpenOptions::new().append(true).open(&a.out)?;
        eprintln!("resume: {} records already present", done.len());
        NagWriter::append(BufWriter::new(f), cfg.clone(), done.len() as u64)
    };
    let mut impacts = a.impacts.as_deref().map(create).transpose()?;

    let mode = if a.lenient { Malformed::Skip } else { Malformed::Fatal };
    let mut reader = CorpusReader::new(open(&a.corpus)?, mode);
    let started = Instant::now();
    let (mut seen, mut fresh) = (0usize, 0usize);
    let mut chunk: Vec<(u64, Vec<u32>)> = Vec::with_capacity(CHUNK);
    loop {
        chunk.clear();
        while chunk.len() < CHUNK {
            let Some(doc) = reader.next() else { break };
            let doc = doc.with_context(|| format!("reading corpus {}", a.corpus.display()))?;
            if seen < done.len() {
                ensure!(
                    doc.doc_id == done[seen],
                    "cannot resume: record {seen} of {} is doc {} but the corpus has doc {}",
                    a.out.display(),
                    done[seen],
                    doc.doc_id
                );
                seen += 1;
                continue;
            }
            seen += 1;
            chunk.push((doc.doc_id, ByteTokenizer.encode(&doc.text)));
        }
        if chunk.is_empty() {
            break;
        }
        let keep_impacts = impacts.is_some();
        let out = ctx.exec.try_map(&chunk, |(id, toks)| {
            let ivs = document_impacts(&model, &cfg, toks, Aggregation::Mean).map_err(|e| e.in_doc(*id))?;
            let rec = build_nag(*id, &ivs, &cfg).map_err(|e| e.in_doc(*id))?;
            Ok::<_, nagrank_core::Error>((rec, if keep_impacts { ivs } else { Vec::new() }))
        })?;
        for (rec, ivs) in &out {
            writer.write(rec)?;
            if let Some(w) = impacts.as_mut() {
                for iv in ivs {
                    write_impact_record(w, rec.doc_id, iv)?;
                }
            }
        }
        fresh += out.len();
    }
    ensure!(
        seen >= done.len(),
        "cannot resume: {} holds {} records but the corpus has only {seen} documents",
        a.out.display(),
        done.len()
    );
    warn_skipped(&a.corpus, reader.skipped());
    let total = writer.records_written();
    writer.finish()?;
    if let Some(w) = impacts.as_mut() {
        w.flush()?;
    }
    let secs = started.elapsed().as_secs_f64();
    eprintln!(
        "extracted {fresh} docs in {secs:.2} s ({:.1} docs/s); {total} records in {}",
        fresh as f64 / secs.max(1e-9),
        a.out.display()
    );
    Ok(())
}

fn profile(a: crate::ProfileArgs) -> Result<()> {
    let mut cfg: Option<NagConfig> = None;
    let mut records = Vec::new();
    for path in &a.nags {
        let (c, recs) = read_nag_file(path)?;
        if let Some(first) = &cfg {
            first
                .ensure_compatible(&c)
                .with_context(|| format!("{} does not match {}", path.display(), a.nags[0].display()))?;
        } else {
            cfg = Some(c);
        }
        records.extend(recs);
    }
    let cfg = cfg.expect("at least one input");
    let profile = GroupProfile::build(&records, &cfg)?;
    let mut w = create(&a.out)?;
    profile.write(&mut w)?;
    w.flush()?;
    eprintln!("profile of {} documents ({cfg}) -> {}", profile.n_docs(), a.out.display());
    Ok(())
}

fn rank(ctx: &Ctx, a: crate::RankArgs) -> Result<()> {
    let profile = read_profile(&a.profile)?;
    let (cfg, nags) = read_nag_file(&a.nags)?;
    profile
        .config()
        .ensure_compatible(&cfg)
        .with_context(|| format!("profile {} does not match pool {}", a.profile.display(), a.nags.display()))?;
    let counts: HashMap<u64, u64> = match &a.corpus {
        Some(p) => read_docs(p, Malformed::Fatal)?
            .into_iter()
            .map(|d| {
                let n = d.n_tokens.unwrap_or_else(|| ByteTokenizer.encode(&d.text).len() as u64);
                (d.doc_id, n)
            })
            .collect(),
        None => HashMap::new(),
    };
    let mut scored = score_pool(&nags, &profile, &counts, ctx.exec)?;
    sort_ranked(&mut scored);
    let mut w = create(&a.out)?;
    write_ranked(&mut w, &scored)?;
    w.flush()?;
    eprintln!("ranked {} candidates -> {}", scored.len(), a.out.display());
    Ok(())
}

fn manifest(selected: &[RankedCandidate]) -> Vec<ManifestEntry> {
    selected
        .iter()
        .enumerate()
        .map(|(rank, c)| ManifestEntry {
            doc_id: c.doc_id,
            score: c.score,
            target_id: None,
            source_rank: rank,
        })
        .collect()
}

fn write_manifest_file(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = create(path)?;
    write_manifest(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

fn select(ctx: &Ctx, a: crate::SelectArgs) -> Result<()> {
    let pool = read_ranked_file(&a.ranked)?;
    let budget = if a.ratio.is_some() { None } else { a.budget.or(ctx.cfg.budget) };
    let entries = if let Some(budget) = budget {
        let sel = select_token_budget(&pool, budget);
        if sel.under_budget {
            eprintln!(
                "warning: pool exhausted at {} tokens, below the budget of {budget}",
                sel.total_tokens
            );
        }
        eprintln!("selected {} documents, {} tokens", sel.selected.len(), sel.total_tokens);
        manifest(&sel.selected)
    } else {
        let ratio = pick(a.ratio, ctx.cfg.ratio, DEFAULT_RATIO);
        let m = pick(a.sample_size, ctx.cfg.sample_size, DEFAULT_SAMPLE_SIZE);
        let seed = pick(a.seed, ctx.cfg.seed, 0);
        let sel = select_top_ratio(&pool, ratio, m, seed)?;
        match sel.threshold {
            Some(t) => eprintln!(
                "selected {} of {} (fraction {:.4}, threshold {t} from {m} samples)",
                sel.selected.len(),
                pool.len(),
                sel.achieved_fraction
            ),
            None => eprintln!("selected {} of {} (exact)", sel.selected.len(), pool.len()),
        }
        manifest(&sel.selected)
    };
    write_manifest_file(&a.out, &entries)
}

fn mix(ctx: &Ctx, a: crate::MixArgs) -> Result<()> {
    let lists = a.ranked.iter().map(|p| read_ranked_file(p)).collect::<Result<Vec<_>>>()?;
    let ids = |l: &[RankedCandidate]| l.iter().map(|c| c.doc_id).collect::<HashSet<_>>();
    let first = ids(&lists[0]);
    for (p, l) in a.ranked.iter().zip(&lists).skip(1) {
        ensure!(
            ids(l) == first,
            "{} scores a different pool than {}",
            p.display(),
            a.ranked[0].display()
        );
    }
    let ratio = pick(a.ratio, ctx.cfg.ratio, DEFAULT_RATIO);
    let m = pick(a.sample_size, ctx.cfg.sample_size, DEFAULT_SAMPLE_SIZE);
    let seed = pick(a.seed, ctx.cfg.seed, 0);
    let entries = select_multi_target(&lists, ratio, m, seed)?;
    eprintln!("{} targets, {} entries (duplicates kept)", lists.len(), entries.len());
    write_manifest_file(&a.out, &entries)
}

fn fuse(ctx: &Ctx, a: crate::FuseArgs) -> Result<()> {
    let pool = read_ranked_file(&a.ranked)?;
    let quality = read_quality_scores(open(&a.quality)?).with_context(|| format!("reading {}", a.quality.display()))?;
    let alpha = pick(a.alpha, ctx.cfg.alpha, DEFAULT_ALPHA);
    let fused = joint_rank(&pool, &quality, alpha)?;
    let mut w = create(&a.out)?;
    write_ranked(&mut w, &fused)?;
    w.flush()?;
    Ok(())
}

fn analyze(ctx: &Ctx, cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::DeactivateMask(a) => deactivate_mask(ctx, a),
        AnalyzeCommand::Distmat(a) => {
            let (_, nags) = read_nag_file(&a.nags)?;
            let d = distance_matrix(&nags, ctx.exec)?;
            let mut w = create(&a.out)?;
            d.write(&mut w)?;
            w.flush()?;
            eprintln!("{n} x {n} distance matrix -> {}", a.out.display(), n = d.len());
            Ok(())
        }
        AnalyzeCommand::Cluster(a) => {
            let d = DistanceMatrix::read(open(&a.distmat)?).with_context(|| format!("reading {}", a.distmat.display()))?;
            let c = cluster_medoids(&d, a.k, pick(a.seed, ctx.cfg.seed, 0))?;
            let mut w = create(&a.out)?;
            for x in &c.assignments {
                writeln!(w, "{x}")?;
            }
            w.flush()?;
            let mut out = std::io::stdout().lock();
            writeln!(out, "medoids = {:?}", c.medoids)?;
            writeln!(out, "cost = {}", c.cost)?;
            if let Some(p) = &a.labels {
                let labels = read_labels(p)?;
                ClusterReport::new(c.assignments, &labels)?.write(&mut out)?;
            }
            Ok(())
        }
        AnalyzeCommand::Sensitivity(a) => {
            let (x, y) = align_scores(&read_ranked_file(&a.a)?, &read_ranked_file(&a.b)?)?;
            let ratio = pick(a.ratio, ctx.cfg.ratio, DEFAULT_RATIO);
            println!("spearman = {}", spearman(&x, &y)?);
            println!("topset_jaccard = {}", topset_jaccard(&x, &y, ratio)?);
            Ok(())
        }
        AnalyzeCommand::Se(a) => {
            let se = binomial_se(a.p, a.n)?;
            println!("se = {se}");
            println!("points = ±{:.1}", se * 100.0);
            Ok(())
        }
    }
}

fn read_labels(path: &Path) -> Result<Vec<usize>> {
    open(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            l.trim()
                .parse()
                .with_context(|| format!("{}:{}: bad label {l:?}", path.display(), i + 1))
        })
        .collect()
}

fn deactivate_mask(ctx: &Ctx, a: crate::MaskArgs) -> Result<()> {
    let criterion: MaskCriterion = a.criterion.parse().map_err(|e| anyhow!("{e}"))?;
    let need = |p: &Option<PathBuf>, flag: &str| -> Result<PathBuf> {
        p.clone().ok_or_else(|| anyhow!("--criterion {criterion} needs --{flag}"))
    };
    let global = |c: MaskCriterion| -> Result<usize> {
        a.total.ok_or_else(|| anyhow!("--criterion {c} selects globally; use --total"))
    };
    let proj = parse_proj(&pick(a.proj.clone(), ctx.cfg.proj.clone(), "up".into()))?;
    let stats = |path: &Path, model: &ToyModel| -> Result<_> {
        Ok(collect_stats(model, &token_lists(&tokenized(path)?, model)?, proj, ctx.exec)?)
    };
    let mask: DeactivationMask = match criterion {
        MaskCriterion::NagTopkPerLayer => {
            let n = a.per_layer.ok_or_else(|| anyhow!("--criterion nag-topk selects per layer; use --per-layer"))?;
            mask_nag_topk(&read_profile(&need(&a.profile, "profile")?)?, n)?
        }
        MaskCriterion::Random => {
            let model = read_model(&need(&a.model, "model")?)?;
            let count = match (a.per_layer, a.total) {
                (Some(n), _) => MaskCount::PerLayer(n),
                (None, Some(n)) => MaskCount::Global(n),
                (None, None) => unreachable!("clap requires one count"),
            };
            mask_random(model.spec(), proj, count, pick(a.seed, ctx.cfg.seed, 0))?
        }
        MaskCriterion::HighMean => {
            let n = global(criterion)?;
            let model = read_model(&need(&a.model, "model")?)?;
            mask_high_mean(&stats(&need(&a.target, "target")?, &model)?, n)?
        }
        MaskCriterion::HighDelta => {
            let n = global(criterion)?;
            let model = read_model(&need(&a.model, "model")?)?;
            let target = stats(&need(&a.target, "target")?, &model)?;
            let reference = stats(&need(&a.reference, "reference")?, &model)?;
            mask_high_delta(&target, &reference, n)?
        }
        MaskCriterion::ImpactBand => bail!("impact-band masks are built by the correlation study, not this command"),
    };
    if mask.degenerate {
        eprintln!("warning: all candidate neurons scored equally; the mask order is by neuron id only");
    }
    let mut w = create(&a.out)?;
    mask.write(&mut w)?;
    w.flush()?;
    eprintln!("{} neurons ({criterion}) -> {}", mask.len(), a.out.display());
    Ok(())
}

fn decontam(ctx: &Ctx, a: crate::DecontamArgs) -> Result<()> {
    let n = pick(a.ngram, ctx.cfg.ngram, DEFAULT_NGRAM);
    let targets = tokenized(&a.targets)?;
    let tests = tokenized(&a.tests)?;
    let flagged = decontaminate(&targets, &tests, n, ctx.exec)?;
    let mut w = create(&a.out)?;
    write_ids(&mut w, &flagged)?;
    w.flush()?;
    eprintln!("{} of {} targets share a {n}-gram with the test set", flagged.len(), targets.len());
    Ok(())
}

/// `<stem>.<shard>.nagr` → shard number.
fn shard_index(path: &Path) -> Option<u64> {
    let name = path.file_name()?.to_str()?.strip_suffix(".nagr")?;
    name.rsplit_once('.')?.1.parse().ok()
}

fn merge(a: crate::MergeArgs) -> Result<()> {
    let mut shards = a.shards.clone();
    if shards.iter().all(|p| shard_index(p).is_some()) {
        shards.sort_by_key(|p| shard_index(p));
    }
    ensure!(!shards.contains(&a.out), "output {} is also an input", a.out.display());
    let mut writer: Option<NagWriter<BufWriter<File>>> = None;
    let mut first_cfg: Option<NagConfig> = None;
    let mut seen = HashSet::new();
    for path in &shards {
        let reader = NagReader::new(open(path)?).with_context(|| format!("reading {}", path.display()))?;
        let cfg = reader.config().clone();
        match &first_cfg {
            Some(f) => {
                f.ensure_compatible(&cfg)
                    .with_context(|| format!("{} does not match {}", path.display(), shards[0].display()))?;
                ensure!(
                    f.layer_set == cfg.layer_set,
                    "{} uses a different layer set than {}",
                    path.display(),
                    shards[0].display()
                );
            }
            None => {
                writer = Some(NagWriter::new(create(&a.out)?, cfg.clone())?);
                first_cfg = Some(cfg);
            }
        }
        let w = writer.as_mut().expect("writer created with the first shard");
        for rec in reader {
            let rec = rec.with_context(|| format!("reading {}", path.display()))?;
            ensure!(
                seen.insert(rec.doc_id),
                "doc {} appears in more than one shard (again in {})",
                rec.doc_id,
                path.display()
            );
            w.write(&rec)?;
        }
    }
    let w = writer.expect("at least one shard");
    let n = w.records_written();
    w.finish()?;
    eprintln!("merged {} shards, {n} records -> {}", shards.len(), a.out.display());
    Ok(())
}

/// Prints the header of a NAG, profile or checkpoint file.
fn describe_file(path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", path.display()))?;
    match &magic {
        b"NAGR" => {
            let reader = NagReader::new(open(path)?).with_context(|| format!("reading {}", path.display()))?;
            let cfg = reader.config();
            let len = std::fs::metadata(path)?.len();
            let body = len - cfg.header_len();
            println!("format = NAG");
            println!("proj = {}", cfg.proj);
            println!("layer_set = {:?}", cfg.layer_set);
            println!("widths = {:?}", cfg.widths);
            println!("dims = {:?}", cfg.dims);
            println!("records = {}", body / cfg.record_len());
            if body % cfg.record_len() != 0 {
                println!("trailing_bytes = {}", body % cfg.record_len());
            }
        }
        b"NAGP" => {
            let p = read_profile(path)?;
            println!("format = profile");
            println!("proj = {}", p.config().proj);
            println!("widths = {:?}", p.config().widths);
            println!("dims = {:?}", p.config().dims);
            println!("n_docs = {}", p.n_docs());
        }
        b"NAGM" => {
            let spec = *read_model(path)?.spec();
            println!("format = model");
            println!("n_layers = {}", spec.n_layers);
            println!("d_model = {}", spec.d_model);
            println!("d_internal = {}", spec.d_internal);
            println!("n_heads = {}", spec.n_heads);
            println!("vocab_size = {}", spec.vocab_size);
            println!("max_seq_len = {}", spec.max_seq_len);
            println!("seed = {}", spec.rng_seed);
        }
        other => bail!("{}: unrecognized magic {:?}", path.display(), String::from_utf8_lossy(other)),
    }
    Ok(())
}
