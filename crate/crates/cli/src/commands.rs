use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use clap::Args;
use debiaslens_core::metrics::{
    ambiguous_qa_accuracy, cosine_retrieval, disproportion_rate, max_skew_at_k, parse_answers, parse_responses,
    similarity_gap, DesiredDistribution, DisproportionReport, QaReport, Query, SimilarityGapReport, SkewReport,
};
use debiaslens_core::probe::union_bias_sets;
use debiaslens_core::sae::{load_checkpoint, save_checkpoint};
use debiaslens_core::store::{load_embeddings, load_labels, save_embeddings, save_labels};
use debiaslens_core::synth::{generate_biased_queries, generate_dataset, oracle_skew_on, PlantedBiasSpec};
use debiaslens_core::train::{train_with_observer, TrainRecord};
use debiaslens_core::{
    build_report, compute_activations, debias_dataset, AttributeTable, Checkpoint, DatasetManifest, EmbeddingDataset,
    ModulationConfig, ProbeMode, SocialNeuronReport,
};
use log::info;
use serde::Serialize;

use crate::config::{config_error, exists, require, PipelineConfig};
use crate::report::write_report;

/// Shared state for one invocation.
pub struct Context {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.config.train.seed)
    }
}

pub fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

#[derive(Debug, Serialize)]
pub struct FileRef {
    pub file: String,
    pub checksum: String,
}

fn dataset_ref(p: &Path, ds: &EmbeddingDataset) -> FileRef {
    FileRef {
        file: file_name(p),
        checksum: ds.checksum(),
    }
}

fn load_ds(p: &Path, what: &str) -> anyhow::Result<EmbeddingDataset> {
    exists(p, what)?;
    Ok(load_embeddings(p)?)
}

fn override_path(flag: &Option<PathBuf>, config: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone().or_else(|| config.clone())
}

fn override_list(flag: &[PathBuf], config: &[PathBuf]) -> Vec<PathBuf> {
    if flag.is_empty() {
        config.to_vec()
    } else {
        flag.to_vec()
    }
}

pub fn parse_desired(s: &str) -> anyhow::Result<DesiredDistribution> {
    if s.eq_ignore_ascii_case("uniform") {
        return Ok(DesiredDistribution::uniform());
    }
    let p = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| config_error(format!("desired distribution `{s}`: {e}")))?;
    Ok(DesiredDistribution::Explicit(p))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    /// Optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Active latents per sample.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub expansion_factor: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, ctx: &mut Context) {
        let t = &mut ctx.config.train;
        if let Some(x) = self.steps {
            t.steps = x;
        }
        if let Some(x) = self.k {
            t.k = x;
        }
        if let Some(x) = self.expansion_factor {
            t.expansion_factor = x;
        }
        if let Some(x) = self.batch_size {
            t.batch_size = x;
        }
        if let Some(x) = self.learning_rate {
            t.learning_rate = x;
        }
        if let Some(s) = ctx.seed {
            t.seed = s;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training embeddings (EMB1).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOverrides,
}

#[derive(Serialize)]
struct TrainSummary {
    embeddings: FileRef,
    checkpoint: FileRef,
    n: usize,
    d: usize,
    omega: usize,
    k: usize,
    prefix_schedule: Vec<usize>,
    first: Option<TrainRecord>,
    last: Option<TrainRecord>,
    train_config: debiaslens_core::TrainConfig,
}

pub fn train(mut ctx: Context, args: &TrainArgs) -> anyhow::Result<()> {
    args.train.apply(&mut ctx);
    ctx.config.validate()?;
    let path = override_path(&args.embeddings, &ctx.config.paths.embeddings);
    let path = require(&path, "embeddings")?;
    let ds = load_ds(path, "embeddings")?;
    let cfg = ctx.config.train.clone();
    cfg.validate_for(ds.d(), ds.n())?;
    info!("training on {} rows of dimension {} for {} steps", ds.n(), ds.d(), cfg.steps);
    let out = ctx.out.clone();
    let cfg_json = serde_json::to_value(&cfg)?;
    let (params, log) = train_with_observer(&ds, &cfg, |step, p| {
        let ck = Checkpoint::new(p.clone(), cfg.k, Some(cfg_json.clone()))?;
        save_checkpoint(&ck, out.join(format!("sae-step{step}.ckpt")))
    })?;
    let ckpt = Checkpoint::new(params, cfg.k, Some(cfg_json))?;
    let ckpt_path = ctx.out.join("sae.ckpt");
    save_checkpoint(&ckpt, &ckpt_path)?;
    std::fs::write(ctx.out.join("train_log.jsonl"), log.to_jsonl()?).context("writing train log")?;
    let summary = TrainSummary {
        embeddings: dataset_ref(path, &ds),
        checkpoint: FileRef {
            file: file_name(&ckpt_path),
            checksum: ckpt.checksum(),
        },
        n: ds.n(),
        d: ds.d(),
        omega: ckpt.params.omega(),
        k: ckpt.k,
        prefix_schedule: ckpt.params.prefix_schedule.clone(),
        first: log.first().copied(),
        last: log.last().copied(),
        train_config: cfg,
    };
    let p = write_report(&ctx.out, "train", "train", &summary)?;
    info!("wrote {} and {}", ckpt_path.display(), p.display());
    Ok(())
}

// ---------------------------------------------------------------- probe

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Label sidecar; repeat for several attributes.
    #[arg(long)]
    pub labels: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Firing-consistency threshold in [0, 1].
    #[arg(long)]
    pub tau: Option<f64>,
    /// `top-1` or `all-effective`.
    #[arg(long)]
    pub mode: Option<ProbeMode>,
}

pub fn probe(mut ctx: Context, args: &ProbeArgs) -> anyhow::Result<()> {
    if let Some(t) = args.tau {
        ctx.config.probe.tau = t;
    }
    if let Some(m) = args.mode {
        ctx.config.probe.mode = m;
    }
    ctx.config.validate()?;
    let emb = override_path(&args.embeddings, &ctx.config.paths.embeddings);
    let emb = require(&emb, "embeddings")?;
    let ck = override_path(&args.checkpoint, &ctx.config.paths.checkpoint);
    let ck = require(&ck, "checkpoint")?;
    let labels = override_list(&args.labels, &ctx.config.paths.labels);
    if labels.is_empty() {
        return Err(config_error("no labels path given"));
    }
    for l in &labels {
        exists(l, "labels")?;
    }
    let ds = load_ds(emb, "embeddings")?;
    let ckpt = load_checkpoint(ck)?;
    let acts = compute_activations(&ds, &ckpt.params, ckpt.k)?;
    let mut seen = BTreeSet::new();
    for l in &labels {
        let table = load_labels(l, &ds)?;
        if !seen.insert(table.attribute.clone()) {
            return Err(config_error(format!("attribute `{}` given twice", table.attribute)));
        }
        let report = build_report(&acts, &table, ctx.config.probe.tau, ctx.config.probe.mode)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        let name = format!("probe_{}", table.attribute);
        let p = write_report(&ctx.out, &name, "probe", &report)?;
        info!("{}: bias set {:?} -> {}", table.attribute, report.bias_set, p.display());
    }
    Ok(())
}

// ---------------------------------------------------------------- debias

#[derive(Debug, Args)]
pub struct DebiasArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Probe report whose bias set to use; repeatable.
    #[arg(long)]
    pub report: Vec<PathBuf>,
    /// Extra latent indices, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub bias_set: Vec<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "debiased.emb")]
    pub output: String,
}

#[derive(Serialize)]
struct DebiasSummary {
    input: FileRef,
    output: FileRef,
    checkpoint: String,
    reports: Vec<String>,
    bias_set: Vec<usize>,
    gamma: f64,
    alpha: f64,
    n: usize,
    mean_shift_norm: f64,
}

/// Bias set from the reports and explicit indices, checked against the
/// checkpoint the reports were made with.
pub fn resolve_bias_set(reports: &[SocialNeuronReport], extra: &[usize], ckpt: &Checkpoint) -> anyhow::Result<Vec<usize>> {
    let sum = ckpt.params.checksum();
    for r in reports {
        if r.provenance.checkpoint != sum {
            return Err(config_error(format!(
                "probe report for `{}` was made with a different checkpoint",
                r.attribute
            )));
        }
    }
    let mut set: BTreeSet<usize> = union_bias_sets(reports).into_iter().collect();
    set.extend(extra.iter().copied());
    Ok(set.into_iter().collect())
}

pub fn debias(mut ctx: Context, args: &DebiasArgs) -> anyhow::Result<()> {
    if let Some(g) = args.gamma {
        ctx.config.modulation.gamma = g;
    }
    if let Some(a) = args.alpha {
        ctx.config.modulation.alpha = a;
    }
    ctx.config.validate()?;
    let emb = override_path(&args.embeddings, &ctx.config.paths.embeddings);
    let emb = require(&emb, "embeddings")?;
    let ck = override_path(&args.checkpoint, &ctx.config.paths.checkpoint);
    let ck = require(&ck, "checkpoint")?;
    let report_paths = override_list(&args.report, &ctx.config.paths.reports);
    let mut reports = Vec::new();
    for p in &report_paths {
        exists(p, "probe report")?;
        reports.push(SocialNeuronReport::load(p)?);
    }
    let ds = load_ds(emb, "embeddings")?;
    let ckpt = load_checkpoint(ck)?;
    let mut extra = ctx.config.modulation.bias_set.clone();
    extra.extend(&args.bias_set);
    let bias_set = resolve_bias_set(&reports, &extra, &ckpt)?;
    let m = ModulationConfig::new(bias_set, ctx.config.modulation.gamma, ctx.config.modulation.alpha);
    let out = debias_dataset(&ds, &ckpt.params, &m, ckpt.k)?;
    let out_path = ctx.out.join(&args.output);
    save_embeddings(&out, &out_path)?;
    let shift: f64 = (0..ds.n())
        .map(|i| {
            ds.row(i)
                .iter()
                .zip(out.row(i).iter())
                .map(|(a, b)| ((b - a) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum::<f64>()
        / ds.n() as f64;
    let summary = DebiasSummary {
        input: dataset_ref(emb, &ds),
        output: dataset_ref(&out_path, &out),
        checkpoint: ckpt.params.checksum(),
        reports: report_paths.iter().map(|p| file_name(p)).collect(),
        bias_set: m.bias_set.clone(),
        gamma: m.gamma,
        alpha: m.alpha,
        n: ds.n(),
        mean_shift_norm: shift,
    };
    write_report(&ctx.out, "debias", "debias", &summary)?;
    info!("bias set {:?}, alpha {}, wrote {}", m.bias_set, m.alpha, out_path.display());
    Ok(())
}

// ---------------------------------------------------------------- eval-skew

#[derive(Debug, Args)]
pub struct EvalSkewArgs {
    /// Retrieval gallery (EMB1).
    #[arg(long)]
    pub gallery: Option<PathBuf>,
    /// Label sidecar of the gallery.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Query embeddings (EMB1).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Debiased gallery to compare against.
    #[arg(long)]
    pub gallery_after: Option<PathBuf>,
    /// Debiased queries to compare against.
    #[arg(long)]
    pub queries_after: Option<PathBuf>,
    /// Retrieval cutoff.
    #[arg(long)]
    pub k: Option<usize>,
    /// `uniform` or comma-separated shares in group order.
    #[arg(long)]
    pub desired: Option<String>,
}

#[derive(Serialize)]
struct SkewSide {
    gallery: FileRef,
    queries: FileRef,
    skew: SkewReport,
    similarity: Option<SimilarityGapReport>,
}

#[derive(Serialize)]
struct SkewSummary {
    k: usize,
    attribute: String,
    labels: String,
    before: SkewSide,
    after: Option<SkewSide>,
    /// after minus before, in scaled MaxSkew units.
    delta: Option<f64>,
}

fn skew_side(ctx: &Context, g: &Path, q: &Path, labels: &Path, desired: &DesiredDistribution) -> anyhow::Result<SkewSide> {
    let gallery = load_ds(g, "gallery")?;
    let queries = load_ds(q, "queries")?;
    let table = load_labels(labels, &gallery)?;
    let run = cosine_retrieval(&Query::from_dataset(&queries), &gallery, ctx.config.metrics.k)?;
    let skew = max_skew_at_k(&run, &table, desired)?;
    for w in &skew.warnings {
        log::warn!("{w}");
    }
    let similarity = match similarity_gap(&gallery, &table, ctx.config.metrics.similarity_pairs, ctx.seed()) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("similarity gap skipped: {e}");
            None
        }
    };
    Ok(SkewSide {
        gallery: dataset_ref(g, &gallery),
        queries: dataset_ref(q, &queries),
        skew,
        similarity,
    })
}

pub fn eval_skew(mut ctx: Context, args: &EvalSkewArgs) -> anyhow::Result<()> {
    if let Some(k) = args.k {
        ctx.config.metrics.k = k;
    }
    if let Some(d) = &args.desired {
        ctx.config.metrics.desired = parse_desired(d)?;
    }
    ctx.config.validate()?;
    let g = override_path(&args.gallery, &ctx.config.paths.gallery);
    let g = require(&g, "gallery")?;
    let q = override_path(&args.queries, &ctx.config.paths.queries);
    let q = require(&q, "queries")?;
    let labels = args.labels.clone().or_else(|| ctx.config.paths.labels.first().cloned());
    let labels = require(&labels, "labels")?;
    let desired = ctx.config.metrics.desired.clone();
    let before = skew_side(&ctx, g, q, labels, &desired)?;
    let after = if args.gallery_after.is_some() || args.queries_after.is_some() {
        let g2 = args.gallery_after.as_deref().unwrap_or(g);
        let q2 = args.queries_after.as_deref().unwrap_or(q);
        Some(skew_side(&ctx, g2, q2, labels, &desired)?)
    } else {
        None
    };
    let delta = after
        .as_ref()
        .and_then(|a| Some(a.skew.mean_max_skew? - before.skew.mean_max_skew?));
    let summary = SkewSummary {
        k: ctx.config.metrics.k,
        attribute: before.skew.attribute.clone(),
        labels: file_name(labels),
        before,
        after,
        delta,
    };
    write_report(&ctx.out, "skew", "eval-skew", &summary)?;
    info!(
        "mean MaxSkew@{}: {:?}{}",
        summary.k,
        summary.before.skew.mean_max_skew,
        summary.delta.map(|d| format!(", delta {d:+.3}")).unwrap_or_default()
    );
    Ok(())
}

// ---------------------------------------------------------------- eval-disproportion

#[derive(Debug, Args)]
pub struct EvalDisproportionArgs {
    /// JSON-lines answers: {prompt, group, answer: yes|no, id}.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    #[arg(long)]
    pub answers_after: Option<PathBuf>,
    /// Significance level.
    #[arg(long)]
    pub alpha_sig: Option<f64>,
}

#[derive(Serialize)]
struct Compared<T: Serialize> {
    before_file: String,
    before: T,
    after_file: Option<String>,
    after: Option<T>,
    delta: Option<f64>,
}

fn read_text(p: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

pub fn eval_disproportion(mut ctx: Context, args: &EvalDisproportionArgs) -> anyhow::Result<()> {
    if let Some(a) = args.alpha_sig {
        ctx.config.metrics.alpha_sig = a;
    }
    ctx.config.validate()?;
    let a = override_path(&args.answers, &ctx.config.paths.answers);
    let a = require(&a, "answers")?;
    let run = |p: &Path| -> anyhow::Result<DisproportionReport> {
        let r = disproportion_rate(&parse_answers(&read_text(p)?)?, ctx.config.metrics.alpha_sig)?;
        for w in &r.warnings {
            log::warn!("{w}");
        }
        Ok(r)
    };
    let before = run(a)?;
    let after = match &args.answers_after {
        Some(p) => {
            exists(p, "answers")?;
            Some(run(p)?)
        }
        None => None,
    };
    let summary = Compared {
        before_file: file_name(a),
        delta: after.as_ref().map(|x| x.rate - before.rate),
        before,
        after_file: args.answers_after.as_deref().map(file_name),
        after,
    };
    write_report(&ctx.out, "disproportion", "eval-disproportion", &summary)?;
    info!("disproportion rate {:.4}", summary.before.rate);
    Ok(())
}

// ---------------------------------------------------------------- eval-qa

#[derive(Debug, Args)]
pub struct EvalQaArgs {
    /// JSON-lines responses: {id, response, gold}.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub responses_after: Option<PathBuf>,
    /// Count only literal gold matches.
    #[arg(long)]
    pub no_aliases: bool,
}

pub fn eval_qa(mut ctx: Context, args: &EvalQaArgs) -> anyhow::Result<()> {
    if args.no_aliases {
        ctx.config.metrics.aliases = debiaslens_core::metrics::AliasTable::empty();
    }
    ctx.config.validate()?;
    let r = override_path(&args.responses, &ctx.config.paths.responses);
    let r = require(&r, "responses")?;
    let run = |p: &Path| -> anyhow::Result<QaReport> {
        Ok(ambiguous_qa_accuracy(&parse_responses(&read_text(p)?)?, &ctx.config.metrics.aliases)?)
    };
    let before = run(r)?;
    let after = match &args.responses_after {
        Some(p) => {
            exists(p, "responses")?;
            Some(run(p)?)
        }
        None => None,
    };
    let summary = Compared {
        before_file: file_name(r),
        delta: after.as_ref().map(|x| x.accuracy - before.accuracy),
        before,
        after_file: args.responses_after.as_deref().map(file_name),
        after,
    };
    write_report(&ctx.out, "qa", "eval-qa", &summary)?;
    info!("QA accuracy {:.4}", summary.before.accuracy);
    Ok(())
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Planted-bias spec (JSON); flags below are ignored when given.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub d: usize,
    /// `name:count` pairs, comma separated.
    #[arg(long, default_value = "a:1024,b:1024")]
    pub groups: String,
    #[arg(long, default_value_t = 1.0)]
    pub strength: f64,
    /// Gallery noise per coordinate.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Shared offset along the first free axis.
    #[arg(long, default_value_t = 0.5)]
    pub base: f64,
    /// Dot product of every later group direction with the first.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub correlation: f64,
    #[arg(long, default_value = "group")]
    pub attribute: String,
    #[arg(long)]
    pub queries_per_group: Option<usize>,
    #[arg(long)]
    pub bias_mix: Option<f64>,
}

impl SynthArgs {
    pub fn build_spec(&self, ctx: &Context) -> anyhow::Result<PlantedBiasSpec> {
        let path = self.spec.clone().or_else(|| ctx.config.paths.spec.clone());
        let mut spec = match path {
            Some(p) => {
                exists(&p, "spec")?;
                PlantedBiasSpec::load(&p)?
            }
            None => {
                let groups = self
                    .groups
                    .split(',')
                    .map(|g| {
                        let (name, count) = g
                            .split_once(':')
                            .ok_or_else(|| config_error(format!("group `{g}` is not name:count")))?;
                        let count = count
                            .trim()
                            .parse::<usize>()
                            .map_err(|e| config_error(format!("group `{g}`: {e}")))?;
                        Ok((name.trim().to_string(), count))
                    })
                    .collect::<anyhow::Result<Vec<_>>>()?;
                let refs: Vec<(&str, usize)> = groups.iter().map(|(n, c)| (n.as_str(), *c)).collect();
                let mut s = PlantedBiasSpec::correlated(
                    self.d,
                    &refs,
                    self.strength,
                    self.noise,
                    self.base,
                    self.correlation,
                    ctx.config.train.seed,
                )?;
                s.attribute = self.attribute.clone();
                s
            }
        };
        if let Some(seed) = ctx.seed {
            spec.seed = seed;
        }
        Ok(spec)
    }
}

#[derive(Serialize)]
struct SynthSummary {
    spec: PlantedBiasSpec,
    gallery: FileRef,
    labels: String,
    queries: Option<FileRef>,
    bias_mix: f64,
    queries_per_group: usize,
    k: usize,
    /// Exhaustive MaxSkew of the queries, scaled by 100.
    oracle_mean_max_skew: Option<f64>,
}

pub fn synth(mut ctx: Context, args: &SynthArgs) -> anyhow::Result<()> {
    if let Some(n) = args.queries_per_group {
        ctx.config.synth.queries_per_group = n;
    }
    if let Some(m) = args.bias_mix {
        ctx.config.synth.bias_mix = m;
    }
    ctx.config.validate()?;
    let spec = args.build_spec(&ctx)?;
    let (ds, table) = generate_dataset(&spec)?;
    let gallery_path = ctx.out.join("gallery.emb");
    let labels_path = ctx.out.join("gallery.labels.json");
    save_embeddings(&ds, &gallery_path)?;
    save_labels(&table, &ds, &labels_path)?;
    std::fs::write(ctx.out.join("spec.json"), spec.to_json()?).context("writing spec")?;
    DatasetManifest::describe(
        &ds,
        "gallery.emb".into(),
        vec!["gallery.labels.json".into()],
        format!("planted-bias gallery, seed {}", spec.seed),
    )
    .save(ctx.out.join("manifest.json"))?;

    let per_group = ctx.config.synth.queries_per_group;
    let mix = ctx.config.synth.bias_mix;
    let k = ctx.config.metrics.k;
    let (queries, oracle) = if per_group > 0 {
        let q = generate_biased_queries(&spec, per_group, mix)?;
        let qds = EmbeddingDataset::from_f64_rows(
            &q.iter().map(|x| x.vector.clone()).collect::<Vec<_>>(),
            q.iter().map(|x| x.id.clone()).collect(),
        )?;
        let qpath = ctx.out.join("queries.emb");
        save_embeddings(&qds, &qpath)?;
        let per_query = oracle_skew_on(&ds, &table, &Query::from_dataset(&qds), k)?;
        let finite: Vec<f64> = per_query.into_iter().flatten().filter(|x| x.is_finite()).collect();
        let mean = (!finite.is_empty()).then(|| 100.0 * finite.iter().sum::<f64>() / finite.len() as f64);
        (Some(dataset_ref(&qpath, &qds)), mean)
    } else {
        (None, None)
    };
    let summary = SynthSummary {
        gallery: dataset_ref(&gallery_path, &ds),
        labels: file_name(&labels_path),
        queries,
        bias_mix: mix,
        queries_per_group: per_group,
        k,
        oracle_mean_max_skew: oracle,
        spec,
    };
    write_report(&ctx.out, "synth", "synth", &summary)?;
    info!("wrote {} rows to {}", ds.n(), gallery_path.display());
    Ok(())
}

/// Loaded gallery, labels and queries for the sweep.
pub struct SweepData {
    pub gallery: EmbeddingDataset,
    pub table: AttributeTable,
    pub queries: EmbeddingDataset,
    pub source: String,
}

pub fn sweep_data(ctx: &Context, synth: &SynthArgs, use_spec: bool) -> anyhow::Result<SweepData> {
    if use_spec {
        let spec = synth.build_spec(ctx)?;
        let (gallery, table) = generate_dataset(&spec)?;
        let q = generate_biased_queries(&spec, ctx.config.synth.queries_per_group.max(1), ctx.config.synth.bias_mix)?;
        let queries = EmbeddingDataset::from_f64_rows(
            &q.iter().map(|x| x.vector.clone()).collect::<Vec<_>>(),
            q.iter().map(|x| x.id.clone()).collect(),
        )?;
        return Ok(SweepData {
            gallery,
            table,
            queries,
            source: format!("planted spec, seed {}", spec.seed),
        });
    }
    let g = require(&ctx.config.paths.embeddings, "embeddings")?;
    let q = require(&ctx.config.paths.queries, "queries")?;
    let l = ctx.config.paths.labels.first().cloned();
    let l = require(&l, "labels")?;
    let gallery = load_ds(g, "embeddings")?;
    let table = load_labels(l, &gallery)?;
    Ok(SweepData {
        queries: load_ds(q, "queries")?,
        table,
        source: format!("{} / {}", file_name(g), file_name(q)),
        gallery,
    })
}
