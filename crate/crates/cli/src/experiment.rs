use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use dpad_core::harness::{
    desk_backdoor, desk_outlier, desk_sequence, desk_uaerm, rerun_manifest, run_experiment, ExperimentConfig, Manifest,
    MANIFEST_FILE,
};

use crate::Outcome;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    DeskOutlier,
    DeskBackdoor,
    DeskSequence,
    DeskUaerm,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// TOML experiment config.
    #[arg(long, conflicts_with_all = ["preset", "manifest"])]
    pub config: Option<PathBuf>,
    /// Built-in desk-scale config.
    #[arg(long, value_enum, conflicts_with = "manifest")]
    pub preset: Option<Preset>,
    /// Seeds for --preset.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    /// Rerun a recorded manifest and compare every hash.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the resolved config as TOML and stop.
    #[arg(long)]
    pub dry_run: bool,
}

fn preset_config(p: Preset, seeds: &[u64]) -> ExperimentConfig {
    match p {
        Preset::DeskOutlier => desk_outlier(seeds),
        Preset::DeskBackdoor => desk_backdoor(seeds),
        Preset::DeskSequence => desk_sequence(seeds),
        Preset::DeskUaerm => desk_uaerm(seeds),
    }
}

pub fn run(args: &RunArgs) -> Result<Outcome> {
    if let Some(manifest) = &args.manifest {
        let Some(out) = &args.out else { bail!("--manifest needs --out for the rerun") };
        let (rerun, diffs) = rerun_manifest(manifest, out)?;
        let json =
            json!({ "out": out, "identical": diffs.is_empty(), "differences": diffs, "failures": rerun.failures });
        let mut text = if diffs.is_empty() {
            format!("rerun in {} matches {} ({} outputs)", out.display(), manifest.display(), rerun.outputs.len())
        } else {
            format!("rerun in {} differs from {}:", out.display(), manifest.display())
        };
        for d in &diffs {
            text += &format!("\n  {d}");
        }
        let mut o = Outcome::new(json, text);
        o.partial = !diffs.is_empty() || !rerun.failures.is_empty();
        return Ok(o);
    }
    let cfg = match (&args.config, args.preset) {
        (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(p)) => preset_config(p, &args.seeds),
        (None, None) => bail!("pass --config, --preset or --manifest"),
    };
    cfg.validate()?;
    if args.dry_run {
        return Ok(Outcome::new(json!({ "config": cfg }), cfg.to_toml()));
    }
    let Some(out) = args.out.clone().or_else(|| cfg.output_dir.clone()) else {
        bail!("no output directory: pass --out or set output_dir in the config");
    };
    let (manifest, outcome) = run_experiment(&cfg, &out)?;
    let json = json!({
        "out": out,
        "outputs": manifest.outputs,
        "runs": outcome.runs.len(),
        "failures": manifest.failures,
    });
    let mut text = format!("{}: {} runs, tables in {}", cfg.name, outcome.runs.len(), out.display());
    for (file, table) in &outcome.tables {
        text += &format!("\n\n{file}\n{}", render(&table.to_csv(), false));
    }
    for f in &manifest.failures {
        text += &format!("\nFAILED {f}");
    }
    let mut o = Outcome::new(json, text);
    o.partial = !manifest.failures.is_empty();
    Ok(o)
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Experiment output directory.
    #[arg(long)]
    pub dir: PathBuf,
    /// Include per-seed rows, not just the mean/min/max rows.
    #[arg(long)]
    pub all: bool,
}

/// Aligns a CSV table for the terminal. Without `all`, keeps the header
/// and the aggregate rows.
fn render(csv_text: &str, all: bool) -> String {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(csv_text.as_bytes());
    let rows: Vec<Vec<String>> =
        reader.records().filter_map(|r| r.ok()).map(|r| r.iter().map(str::to_string).collect()).collect();
    let Some(header) = rows.first() else { return String::new() };
    let seed_col = header.iter().position(|h| h == "seed");
    let keep: Vec<&Vec<String>> = rows
        .iter()
        .enumerate()
        .filter(|(i, r)| {
            *i == 0
                || all
                || seed_col.map_or(true, |c| matches!(r.get(c).map(String::as_str), Some("mean" | "min" | "max")))
        })
        .map(|(_, r)| r)
        .collect();
    let widths: Vec<usize> =
        (0..header.len()).map(|c| keep.iter().map(|r| r.get(c).map_or(0, |s| s.len())).max().unwrap_or(0)).collect();
    keep.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn report(args: &ReportArgs) -> Result<Outcome> {
    let path = args.dir.join(MANIFEST_FILE);
    let manifest = Manifest::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let mut text = format!("{} (seeds {:?})", manifest.config.name, manifest.seeds);
    let mut tables = serde_json::Map::new();
    for file in manifest.outputs.keys() {
        let csv_text = fs::read_to_string(args.dir.join(file)).with_context(|| format!("reading {file}"))?;
        text += &format!("\n\n{file}\n{}", render(&csv_text, args.all));
        let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
        let headers = reader.headers()?.clone();
        let rows: Vec<serde_json::Value> = reader
            .records()
            .filter_map(|r| r.ok())
            .map(|r| headers.iter().zip(r.iter()).map(|(h, v)| (h.to_string(), json!(v))).collect())
            .collect();
        tables.insert(file.clone(), json!(rows));
    }
    for f in &manifest.failures {
        text += &format!("\nFAILED {f}");
    }
    let json = json!({ "name": manifest.config.name, "seeds": manifest.seeds, "tables": tables, "failures": manifest.failures });
    let mut o = Outcome::new(json, text);
    o.partial = !manifest.failures.is_empty();
    Ok(o)
}
