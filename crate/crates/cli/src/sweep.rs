//! Grid over expansion factor, tau and alpha on one gallery/query pair.

use std::path::PathBuf;

use clap::Args;
use debiaslens_core::metrics::{cosine_retrieval, max_skew_at_k, Query};
use debiaslens_core::train::train;
use debiaslens_core::{build_report, compute_activations, debias_dataset, AttributeTable, EmbeddingDataset, ModulationConfig};
use log::info;
use serde::Serialize;

use crate::commands::{sweep_data, Context, SynthArgs, TrainOverrides};
use crate::config::config_error;
use crate::report::write_report;

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Generate data from the planted-bias flags instead of reading files.
    #[arg(long)]
    pub planted: bool,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Retrieval cutoff.
    #[arg(long)]
    pub retrieval_k: Option<usize>,
    /// Comma-separated alphas.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub taus: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub expansion_factors: Vec<usize>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub synth: SynthArgs,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub expansion_factor: usize,
    pub tau: f64,
    pub alpha: f64,
    pub bias_set_size: usize,
    pub mean_max_skew: Option<f64>,
    pub general_proxy: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    source: String,
    attribute: String,
    k: usize,
    mode: debiaslens_core::ProbeMode,
    gamma: f64,
    baseline_mean_max_skew: Option<f64>,
    rows: Vec<SweepRow>,
}

/// Orthonormal basis of the group-centroid offsets from the gallery mean.
fn group_basis(ds: &EmbeddingDataset, table: &AttributeTable) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = ds.d();
    let mut mu = vec![0.0; d];
    for i in 0..ds.n() {
        for (m, x) in mu.iter_mut().zip(ds.row(i)) {
            *m += *x as f64;
        }
    }
    mu.iter_mut().for_each(|m| *m /= ds.n() as f64);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for g in 0..table.num_groups() {
        let members = table.members(g);
        if members.is_empty() {
            continue;
        }
        let mut c = vec![0.0; d];
        for &i in &members {
            for (a, x) in c.iter_mut().zip(ds.row(i)) {
                *a += *x as f64;
            }
        }
        let mut c: Vec<f64> = c.iter().zip(&mu).map(|(a, m)| a / members.len() as f64 - m).collect();
        for b in &basis {
            let dot: f64 = c.iter().zip(b).map(|(x, y)| x * y).sum();
            c.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            basis.push(c.iter().map(|x| x / norm).collect());
        }
    }
    (mu, basis)
}

fn perp_sq(v: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut r = v.to_vec();
    for b in basis {
        let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
        r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
    r.iter().map(|x| x * x).sum()
}

/// One minus the share of attribute-orthogonal query variance that the
/// edit moved. 1 means nothing outside the group directions changed.
pub fn general_proxy(before: &EmbeddingDataset, after: &EmbeddingDataset, mu: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut moved = 0.0;
    let mut spread = 0.0;
    for i in 0..before.n() {
        let v = before.row_f64(i);
        let w = after.row_f64(i);
        let diff: Vec<f64> = w.iter().zip(&v).map(|(a, b)| a - b).collect();
        let cen: Vec<f64> = v.iter().zip(mu).map(|(a, b)| a - b).collect();
        moved += perp_sq(&diff, basis);
        spread += perp_sq(&cen, basis);
    }
    if spread == 0.0 {
        return if moved == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - moved / spread
}

pub fn sweep(mut ctx: Context, args: &SweepArgs) -> anyhow::Result<()> {
    args.train.apply(&mut ctx);
    if let Some(k) = args.retrieval_k {
        ctx.config.metrics.k = k;
    }
    if let Some(n) = args.synth.queries_per_group {
        ctx.config.synth.queries_per_group = n;
    }
    if let Some(m) = args.synth.bias_mix {
        ctx.config.synth.bias_mix = m;
    }
    let paths = &mut ctx.config.paths;
    for (flag, slot) in [(&args.embeddings, &mut paths.embeddings), (&args.queries, &mut paths.queries)] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
    if let Some(l) = &args.labels {
        paths.labels = vec![l.clone()];
    }
    let grid = &mut ctx.config.sweep;
    if !args.alphas.is_empty() {
        grid.alphas = args.alphas.clone();
    }
    if !args.taus.is_empty() {
        grid.taus = args.taus.clone();
    }
    if !args.expansion_factors.is_empty() {
        grid.expansion_factors = args.expansion_factors.clone();
    }
    if grid.alphas.is_empty() || grid.taus.is_empty() || grid.expansion_factors.is_empty() {
        return Err(config_error("sweep grid is empty"));
    }
    for &a in &grid.alphas {
        if !(0.0..=1.0).contains(&a) {
            return Err(config_error(format!("sweep alpha {a} outside [0, 1]")));
        }
    }
    for &t in &grid.taus {
        if !(0.0..=1.0).contains(&t) {
            return Err(config_error(format!("sweep tau {t} outside [0, 1]")));
        }
    }
    ctx.config.validate()?;

    let use_spec = args.planted || args.synth.spec.is_some() || ctx.config.paths.spec.is_some();
    let data = sweep_data(&ctx, &args.synth, use_spec)?;
    let k = ctx.config.metrics.k;
    let desired = ctx.config.metrics.desired.clone();
    let skew_of = |queries: &EmbeddingDataset| -> anyhow::Result<Option<f64>> {
        let run = cosine_retrieval(&Query::from_dataset(queries), &data.gallery, k)?;
        Ok(max_skew_at_k(&run, &data.table, &desired)?.mean_max_skew)
    };
    let baseline = skew_of(&data.queries)?;
    let (mu, basis) = group_basis(&data.gallery, &data.table);

    let mut rows = Vec::new();
    for &ef in &ctx.config.sweep.expansion_factors {
        let mut cfg = ctx.config.train.clone();
        cfg.expansion_factor = ef;
        cfg.validate_for(data.gallery.d(), data.gallery.n())
            .map_err(|e| config_error(format!("train: {e}")))?;
        info!("sweep: training expansion factor {ef}");
        let (params, _) = train(&data.gallery, &cfg)?;
        let acts = compute_activations(&data.gallery, &params, cfg.k)?;
        for &tau in &ctx.config.sweep.taus {
            let report = build_report(&acts, &data.table, tau, ctx.config.probe.mode)?;
            for &alpha in &ctx.config.sweep.alphas {
                let m = ModulationConfig::new(report.bias_set.iter().copied(), ctx.config.modulation.gamma, alpha);
                let after = debias_dataset(&data.queries, &params, &m, cfg.k)?;
                let row = SweepRow {
                    expansion_factor: ef,
                    tau,
                    alpha,
                    bias_set_size: m.bias_set.len(),
                    mean_max_skew: skew_of(&after)?,
                    general_proxy: general_proxy(&data.queries, &after, &mu, &basis),
                };
                info!("{row:?}");
                rows.push(row);
            }
        }
    }
    let summary = SweepSummary {
        source: data.source,
        attribute: data.table.attribute.clone(),
        k,
        mode: ctx.config.probe.mode,
        gamma: ctx.config.modulation.gamma,
        baseline_mean_max_skew: baseline,
        rows,
    };
    write_report(&ctx.out, "sweep", "sweep", &summary)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proxy_ignores_group_directions() {
        let rows = vec![vec![1.0, 0.0, 1.0], vec![-1.0, 0.0, 1.0], vec![1.0, 0.0, -1.0], vec![-1.0, 0.0, -1.0]];
        let ds = EmbeddingDataset::from_f64_rows(&rows, (0..4).map(|i| i.to_string()).collect()).unwrap();
        let t = AttributeTable::new("g".into(), vec!["a".into(), "b".into()], vec![Some(0), Some(1), Some(0), Some(1)]).unwrap();
        let (mu, basis) = group_basis(&ds, &t);
        assert_eq!(basis.len(), 1);
        // moving only along the group axis keeps the proxy at 1
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0, r[1], r[2]]).collect();
        let after = EmbeddingDataset::from_f64_rows(&shifted, ds.ids().to_vec()).unwrap();
        assert!((general_proxy(&ds, &after, &mu, &basis) - 1.0).abs() < 1e-12);
        assert_eq!(general_proxy(&ds, &ds, &mu, &basis), 1.0);
        // erasing the orthogonal axis scores 0
        let flat: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0], 0.0, 0.0]).collect();
        let after = EmbeddingDataset::from_f64_rows(&flat, ds.ids().to_vec()).unwrap();
        assert!(general_proxy(&ds, &after, &mu, &basis).abs() < 1e-12);
    }
}
