use super::{hash_images, load_pools, sigma_label, Ctx, Metrics, Table, UaermSpec};
use crate::data::{build_nd_test, stratified_subsample};
use crate::dp::train;
use crate::error::{Error, Result};
use crate::nn::build_model;
use crate::privacy::uaerm_gap;

pub(crate) const TABLE: &str = "uaerm.csv";
pub(crate) const TREND_TABLE: &str = "uaerm_trend.csv";
const VALUES: [&str; 4] = ["epsilon", "gap", "mean_abs_gap", "models"];

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        // Ties share the mean of their 1-based ranks.
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean over slices of the rank correlation along one axis. `gaps[i][j]`
/// holds the gap at size `i` and noise scale `j`.
fn slice_mean(gaps: &[Vec<Option<f64>>], axis_values: &[f64], along_sizes: bool) -> Option<f64> {
    let slices = if along_sizes { gaps.first().map_or(0, Vec::len) } else { gaps.len() };
    let mut rhos = Vec::new();
    for s in 0..slices {
        let ys: Option<Vec<f64>> =
            if along_sizes { gaps.iter().map(|row| row[s]).collect() } else { gaps[s].iter().copied().collect() };
        rhos.push(spearman(axis_values, &ys?)?);
    }
    (!rhos.is_empty()).then(|| rhos.iter().sum::<f64>() / rhos.len() as f64)
}

fn model_seed(seed: u64, subset: usize, repeat: usize, repeats: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add((subset * repeats + repeat + 1) as u64)
}

pub(super) fn run(ctx: &mut Ctx, spec: &UaermSpec) -> Result<()> {
    let (normal_train, normal_test) = load_pools(&spec.normal, false)?;
    let (_, novel_test) = load_pools(&spec.novel, true)?;
    let kind = spec.model.loss_kind();
    let mut table = Table::new(&["config_id", "n", "sigma"], &VALUES);
    let mut trend = Table::new(&["axis"], &["rho"]);
    let sizes: Vec<f64> = spec.sizes.iter().map(|&n| n as f64).collect();
    for &seed in &ctx.cfg.seeds.clone() {
        let clean = stratified_subsample(&normal_train, spec.oracle_size, seed)?;
        let test = build_nd_test(
            &stratified_subsample(&normal_test, spec.nd_normal, seed)?,
            &stratified_subsample(&novel_test, spec.nd_novel, seed)?,
            Some(&clean.ids),
        )?;
        ctx.hash(format!("seed{seed}/clean"), hash_images(&clean));
        ctx.hash(format!("seed{seed}/test"), hash_images(&test));
        let test_samples = test.to_autoencoder_samples();
        let mut oracle_losses = None;
        let oracle_dp = spec.training.dp_config(None, None, seed);
        let clean_samples = clean.to_autoencoder_samples();
        ctx.cell("oracle", seed, || {
            let report = train(build_model(&spec.model, seed)?, &clean_samples, kind, &oracle_dp)?;
            oracle_losses = Some(report.model.losses(&test_samples, kind)?);
            Ok((report, Metrics::new()))
        });
        let Some(oracle) = oracle_losses else {
            return Err(Error::Input(format!("oracle model failed for seed {seed}")));
        };
        let mut gaps = vec![vec![None; spec.sigmas.len()]; spec.sizes.len()];
        for (i, &n) in spec.sizes.iter().enumerate() {
            let subsets: Vec<_> = (0..spec.subsets)
                .map(|s| stratified_subsample(&clean, n, model_seed(seed, s, 0, 1)))
                .collect::<Result<_>>()?;
            for (j, &sigma) in spec.sigmas.iter().enumerate() {
                let cell_id = format!("n={n},sigma={}", sigma_label(Some(sigma)));
                let mut sum = vec![0.0; test.len()];
                let mut models = 0usize;
                let mut eps = None;
                for (s, subset) in subsets.iter().enumerate() {
                    let samples = subset.to_autoencoder_samples();
                    for r in 0..spec.repeats {
                        let mseed = model_seed(seed, s, r, spec.repeats);
                        let dp = spec.training.dp_config(Some(spec.training.clip), Some(sigma), mseed);
                        let mut losses = None;
                        let (_, e, _) = ctx.cell(&format!("{cell_id},subset={s},repeat={r}"), seed, || {
                            let report = train(build_model(&spec.model, mseed)?, &samples, kind, &dp)?;
                            losses = Some(report.model.losses(&test_samples, kind)?);
                            Ok((report, Metrics::new()))
                        });
                        if let Some(l) = losses {
                            sum.iter_mut().zip(&l).for_each(|(a, b)| *a += b);
                            models += 1;
                            eps = eps.or(e);
                        }
                    }
                }
                let expected = spec.subsets * spec.repeats;
                let (status, values) = if models == 0 {
                    (super::RunStatus::Error { message: "no model trained".into() }, vec![None; VALUES.len()])
                } else {
                    let avg: Vec<f64> = sum.iter().map(|v| v / models as f64).collect();
                    let gap = uaerm_gap(&avg, &oracle)?;
                    let mean_abs = avg.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).sum::<f64>() / avg.len() as f64;
                    gaps[i][j] = Some(gap);
                    let status = if models == expected {
                        super::RunStatus::Ok
                    } else {
                        super::RunStatus::Error { message: format!("{models}/{expected} models trained") }
                    };
                    (status, vec![eps, Some(gap), Some(mean_abs), Some(models as f64)])
                };
                table.push(vec![cell_id, format!("{n}"), sigma_label(Some(sigma))], seed, status, values);
            }
        }
        let status = super::RunStatus::Ok;
        trend.push(vec!["n".into()], seed, status.clone(), vec![slice_mean(&gaps, &sizes, true)]);
        trend.push(vec!["sigma".into()], seed, status, vec![slice_mean(&gaps, &spec.sigmas, false)]);
    }
    ctx.out.tables.push((TABLE.to_string(), table));
    ctx.out.tables.push((TREND_TABLE.to_string(), trend));
    Ok(())
}
