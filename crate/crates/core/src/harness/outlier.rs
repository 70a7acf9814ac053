use super::{hash_images, load_pools, sigma_grid, sigma_label, Ctx, Metrics, OutlierSpec, Table};
use crate::data::{build_nd_test, build_outlier_mix, stratified_subsample};
use crate::dp::train;
use crate::error::Result;
use crate::metrics::{aupr, auroc, score_losses};
use crate::nn::build_model;

pub(crate) const TABLE: &str = "outlier.csv";
const VALUES: [&str; 6] = ["epsilon", "od_aupr", "od_auroc", "nd_aupr", "nd_auroc", "final_loss"];

pub(super) fn run(ctx: &mut Ctx, spec: &OutlierSpec) -> Result<()> {
    let (normal_train, normal_test) = load_pools(&spec.normal, false)?;
    let (out_train, out_test) = load_pools(&spec.outliers, true)?;
    let kind = spec.model.loss_kind();
    let mut table = Table::new(&["config_id", "sigma", "outlier_ratio"], &VALUES);
    let sigmas = sigma_grid(&[None, Some(0.0)], &spec.sigmas);
    for &seed in &ctx.cfg.seeds.clone() {
        let nd_normal = stratified_subsample(&normal_test, spec.nd_normal, seed)?;
        let nd_novel = stratified_subsample(&out_test, spec.nd_novel, seed)?;
        for &r_o in &spec.outlier_ratios {
            let base = stratified_subsample(&normal_train, spec.train_size, seed)?;
            let mix = build_outlier_mix(&base, &out_train, r_o, spec.train_size, seed)?;
            let nd = build_nd_test(&nd_normal, &nd_novel, Some(&mix.ids))?;
            ctx.hash(format!("seed{seed}/r_o={r_o}/train"), hash_images(&mix));
            ctx.hash(format!("seed{seed}/nd-test"), hash_images(&nd));
            let samples = mix.to_autoencoder_samples();
            for &sigma in &sigmas {
                let id = format!("sigma={},r_o={r_o}", sigma_label(sigma));
                let dp = spec.training.dp_config(sigma.map(|_| spec.training.clip), sigma, seed);
                let (status, eps, m) = ctx.cell(&id, seed, || {
                    let model = build_model(&spec.model, seed)?;
                    let report = train(model, &samples, kind, &dp)?;
                    let od = score_losses(&report.model, &mix, kind)?;
                    let ndr = score_losses(&report.model, &nd, kind)?;
                    let area = |c: Result<crate::metrics::Curve>| c.ok().map(|c| c.area);
                    let mut m = Metrics::new();
                    m.insert("od_aupr".into(), area(aupr(&od)));
                    m.insert("od_auroc".into(), area(auroc(&od)));
                    m.insert("nd_aupr".into(), area(aupr(&ndr)));
                    m.insert("nd_auroc".into(), area(auroc(&ndr)));
                    m.insert("final_loss".into(), report.epochs.last().map(|e| e.mean_loss));
                    Ok((report, m))
                });
                let mut values = vec![eps];
                values.extend(VALUES[1..].iter().map(|k| m.get(*k).copied().flatten()));
                if status.is_error() {
                    values = vec![None; VALUES.len()];
                }
                table.push(vec![id, sigma_label(sigma), format!("{r_o}")], seed, status, values);
            }
        }
    }
    ctx.out.tables.push((TABLE.to_string(), table));
    Ok(())
}
