use super::{hash_images, load_pools, sigma_grid, sigma_label, BackdoorSpec, Ctx, Metrics, Table};
use crate::data::{poison, stratified_subsample, ImageDataset};
use crate::dp::train;
use crate::error::Result;
use crate::metrics::{aupr, auroc, score_losses};
use crate::nn::{build_model, Model};

pub(crate) const TABLE: &str = "backdoor.csv";
const VALUES: [&str; 5] = ["epsilon", "benign_accuracy", "success_rate", "detection_aupr", "detection_auroc"];

/// Percentage of images classified as their stored label.
pub(crate) fn accuracy_pct(model: &Model, ds: &ImageDataset) -> Result<f64> {
    let samples = ds.to_classifier_samples();
    let refs: Vec<_> = samples.iter().collect();
    let pred = model.classify(&refs)?;
    let hits = pred.iter().zip(&ds.labels).filter(|(p, l)| **p == usize::from(**l)).count();
    Ok(100.0 * hits as f64 / ds.len().max(1) as f64)
}

pub(super) fn run(ctx: &mut Ctx, spec: &BackdoorSpec) -> Result<()> {
    let (pool_train, pool_test) = load_pools(&spec.source, false)?;
    let kind = spec.model.loss_kind();
    let mut table = Table::new(&["config_id", "sigma", "clip", "poison_ratio"], &VALUES);
    let c = spec.training.clip;
    // (clip, sigma): baseline, clipping only, the noise grid, then the clip grid.
    let mut cells: Vec<(Option<f64>, Option<f64>)> =
        sigma_grid(&[None, Some(0.0)], &spec.sigmas).into_iter().map(|s| (s.map(|_| c), s)).collect();
    for &cg in &spec.clip_grid {
        let cell = (Some(cg), Some(spec.clip_grid_sigma));
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    for &seed in &ctx.cfg.seeds.clone() {
        let clean = stratified_subsample(&pool_train, spec.train_size, seed)?;
        let test = stratified_subsample(&pool_test, spec.test_size, seed)?;
        let test_poisoned = poison(&test, 1.0, &spec.trigger, seed)?;
        ctx.hash(format!("seed{seed}/clean-test"), hash_images(&test));
        ctx.hash(format!("seed{seed}/poisoned-test"), hash_images(&test_poisoned));
        for &r_p in &spec.poison_ratios {
            let train_set = poison(&clean, r_p, &spec.trigger, seed)?;
            ctx.hash(format!("seed{seed}/r_p={r_p}/train"), hash_images(&train_set));
            let samples = train_set.to_classifier_samples();
            for &(clip, sigma) in &cells {
                let clip_label = clip.map_or_else(|| "none".to_string(), |v| format!("{v}"));
                let id = format!("sigma={},clip={clip_label},r_p={r_p}", sigma_label(sigma));
                let dp = spec.training.dp_config(clip, sigma, seed);
                let (status, eps, m) = ctx.cell(&id, seed, || {
                    let model = build_model(&spec.model, seed)?;
                    let report = train(model, &samples, kind, &dp)?;
                    let scores = score_losses(&report.model, &train_set, kind)?;
                    let mut m = Metrics::new();
                    m.insert("benign_accuracy".into(), Some(accuracy_pct(&report.model, &test)?));
                    m.insert("success_rate".into(), Some(accuracy_pct(&report.model, &test_poisoned)?));
                    m.insert("detection_aupr".into(), aupr(&scores).ok().map(|c| c.area));
                    m.insert("detection_auroc".into(), auroc(&scores).ok().map(|c| c.area));
                    Ok((report, m))
                });
                let mut values = vec![eps];
                values.extend(VALUES[1..].iter().map(|k| m.get(*k).copied().flatten()));
                if status.is_error() {
                    values = vec![None; VALUES.len()];
                }
                table.push(vec![id, sigma_label(sigma), clip_label, format!("{r_p}")], seed, status, values);
            }
        }
    }
    ctx.out.tables.push((TABLE.to_string(), table));
    Ok(())
}
