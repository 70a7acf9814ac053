use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde_json::json;

use dpad_core::data::{window_sequences, SequenceCorpus, SessionLabel, WindowMode};
use dpad_core::dp::{train as dp_train, DpConfig, SamplingMode};
use dpad_core::metrics::{
    aupr, auroc, confusion_stats, fmt_metric, score_losses, session_verdicts, threshold_detect, topk_rank,
    ConfusionCounts, Direction, ScoreRecord,
};
use dpad_core::nn::{build_model, load_checkpoint, predict_distributions, save_checkpoint, Model, ModelArch, Sample};
use dpad_core::privacy::{gaussian_sigma, outlier_gap_bound, AccountantState, GapBoundInputs, MechanismSpec};

use crate::data::{DataArgs, Loaded};
use crate::Outcome;

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchChoice {
    DenseAe,
    ConvAe,
    Classifier,
    Lstm,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Shuffled,
    Poisson,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Windows {
    Plain,
    PadShort,
    Prefix,
}

impl From<Windows> for WindowMode {
    fn from(w: Windows) -> Self {
        match w {
            Windows::Plain => WindowMode::Plain,
            Windows::PadShort => WindowMode::PadShort,
            Windows::Prefix => WindowMode::Prefix,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = ArchChoice::DenseAe)]
    pub arch: ArchChoice,
    /// TOML model description; overrides --arch.
    #[arg(long)]
    pub arch_file: Option<PathBuf>,
    /// History length of the sequence model.
    #[arg(long, default_value_t = 10)]
    pub history: usize,
    #[arg(long, value_enum, default_value_t = Windows::Prefix)]
    pub windows: Windows,
    #[arg(long, default_value_t = 0.15)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub batch: usize,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Per-example clipping bound (1.0 when only --sigma is given).
    #[arg(long)]
    pub clip: Option<f64>,
    /// Noise multiplier; omit for non-private training.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_enum, default_value_t = Sampling::Shuffled)]
    pub sampling: Sampling,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSONL log.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn arch_for(args: &TrainArgs, data: &Loaded) -> Result<ModelArch> {
    if let Some(path) = &args.arch_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return toml::from_str(&text).with_context(|| format!("parsing {}", path.display()));
    }
    Ok(match (args.arch, data) {
        (ArchChoice::DenseAe, _) => ModelArch::default_dense_autoencoder(),
        (ArchChoice::ConvAe, _) => ModelArch::default_conv_autoencoder(),
        (ArchChoice::Classifier, _) => ModelArch::default_classifier(),
        (ArchChoice::Lstm, Loaded::Sequences(c)) => ModelArch::default_lstm(c.vocab, args.history),
        (ArchChoice::Lstm, Loaded::Images(_)) => bail!("the sequence model needs session data"),
    })
}

fn samples_for(arch: &ModelArch, data: &Loaded, windows: WindowMode) -> Result<Vec<Sample>> {
    Ok(match (arch, data) {
        (ModelArch::DenseAutoencoder { .. } | ModelArch::ConvAutoencoder { .. }, Loaded::Images(ds)) => {
            ds.to_autoencoder_samples()
        }
        (ModelArch::Classifier { .. }, Loaded::Images(ds)) => ds.to_classifier_samples(),
        (ModelArch::LstmLm { history, .. }, Loaded::Sequences(c)) => {
            window_sequences(c, *history, windows)?.into_iter().map(|w| Sample::next_token(w.history, w.next)).collect()
        }
        (arch, _) => bail!("a {} model does not fit this data", arch.name()),
    })
}

pub fn train(args: &TrainArgs) -> Result<Outcome> {
    let data = args.data.load()?;
    let arch = arch_for(args, &data)?;
    let samples = samples_for(&arch, &data, args.windows.into())?;
    let cfg = DpConfig {
        clip: args.clip.or(args.sigma.map(|_| 1.0)),
        sigma: args.sigma,
        learning_rate: args.lr,
        batch_size: args.batch,
        epochs: args.epochs,
        seed: args.seed,
        sampling: match args.sampling {
            Sampling::Shuffled => SamplingMode::Shuffled,
            Sampling::Poisson => SamplingMode::Poisson,
        },
        delta: args.delta,
    };
    let model = build_model(&arch, args.seed)?;
    let report = dp_train(model, &samples, arch.loss_kind(), &cfg)?;
    save_checkpoint(&report.model, &args.out)?;
    if let Some(path) = &args.report {
        fs::write(path, report.to_jsonl())?;
    }
    let final_loss = report.epochs.last().map(|e| e.mean_loss);
    let json = json!({
        "checkpoint": args.out,
        "arch": arch.name(),
        "samples": samples.len(),
        "steps": report.steps,
        "epsilon": report.epsilon,
        "final_loss": final_loss,
        "status": report.status,
        "epochs": report.epochs,
    });
    let mut text = String::new();
    for e in &report.epochs {
        text += &format!("epoch {:>3}  loss {:.6}  eps {}\n", e.epoch, e.mean_loss, fmt_metric(e.epsilon));
    }
    text += &format!("wrote {} ({} steps, eps {})", args.out.display(), report.steps, fmt_metric(report.epsilon));
    let mut out = Outcome::new(json, text);
    out.partial = report.diverged();
    Ok(out)
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Score CSV to write; printed when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Per-entry next-token evidence of a sequence model on a corpus.
struct TokenEvidence {
    sessions: Vec<usize>,
    ranks: Vec<usize>,
    probs: Vec<f64>,
}

fn token_evidence(model: &Model, corpus: &SequenceCorpus) -> Result<TokenEvidence> {
    let ModelArch::LstmLm { history, .. } = model.arch() else {
        bail!("session data needs a sequence model, got {}", model.arch().name());
    };
    let windows = window_sequences(corpus, *history, WindowMode::Prefix)?;
    let histories: Vec<Vec<usize>> = windows.iter().map(|w| w.history.clone()).collect();
    let dists = predict_distributions(model, &histories)?;
    let mut ev = TokenEvidence { sessions: Vec::new(), ranks: Vec::new(), probs: Vec::new() };
    for (d, w) in dists.iter().zip(&windows) {
        ev.sessions.push(w.session);
        ev.ranks.push(topk_rank(d, w.next)?);
        ev.probs.push(d[w.next]);
    }
    Ok(ev)
}

fn truth(corpus: &SequenceCorpus) -> Vec<bool> {
    corpus.labels.iter().map(|l| *l == SessionLabel::Abnormal).collect()
}

fn score_records(model: &Model, data: &Loaded) -> Result<Vec<ScoreRecord>> {
    match data {
        Loaded::Images(ds) => {
            if matches!(model.arch(), ModelArch::LstmLm { .. }) {
                bail!("image data needs an image model");
            }
            Ok(score_losses(model, ds, model.arch().loss_kind())?)
        }
        Loaded::Sequences(corpus) => {
            let ev = token_evidence(model, corpus)?;
            let mut min_p = vec![f64::INFINITY; corpus.len()];
            for (&s, &p) in ev.sessions.iter().zip(&ev.probs) {
                min_p[s] = min_p[s].min(p);
            }
            Ok(min_p
                .iter()
                .zip(truth(corpus))
                .enumerate()
                .map(|(i, (&p, t))| ScoreRecord::new(i as u64, p, t, Direction::LowerIsAnomalous))
                .collect())
        }
    }
}

fn write_records<W: Write>(records: &[ScoreRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &PathBuf) -> Result<Vec<ScoreRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        out.push(rec.with_context(|| format!("{} record {}", path.display(), i + 1))?);
    }
    Ok(out)
}

pub fn score(args: &ScoreArgs) -> Result<Outcome> {
    let model = load_checkpoint(&args.model)?;
    let data = args.data.load()?;
    let records = score_records(&model, &data)?;
    let positives = records.iter().filter(|r| r.positive).count();
    let text = match &args.out {
        Some(path) => {
            write_records(&records, fs::File::create(path)?)?;
            format!("wrote {} scores ({positives} positive) to {}", records.len(), path.display())
        }
        None => {
            let mut buf = Vec::new();
            write_records(&records, &mut buf)?;
            String::from_utf8(buf)?
        }
    };
    let json = json!({ "records": records.len(), "positives": positives, "out": args.out, "scores": records });
    Ok(Outcome::new(json, text))
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// Score CSV from `score`, thresholded with --threshold.
    #[arg(long, requires = "threshold", conflicts_with = "model")]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Sequence model for next-token detection (with --top-k or --tp).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Flag a token absent from the k most probable next tokens.
    #[arg(long, conflicts_with = "tp")]
    pub top_k: Option<usize>,
    /// Flag a token whose predicted probability is below this.
    #[arg(long)]
    pub tp: Option<f64>,
    /// Verdict CSV to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn counts_json(c: &ConfusionCounts) -> serde_json::Value {
    let s = confusion_stats(c);
    json!({
        "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn_,
        "precision": s.precision, "recall": s.recall, "f_measure": s.f_measure, "fpr": s.fpr,
    })
}

fn counts_text(c: &ConfusionCounts) -> String {
    let s = confusion_stats(c);
    format!(
        "TP {}  FP {}  TN {}  FN {}\nprecision {}  recall {}  F {}",
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        fmt_metric(s.precision),
        fmt_metric(s.recall),
        fmt_metric(s.f_measure)
    )
}

pub fn detect(args: &DetectArgs) -> Result<Outcome> {
    let (verdicts, positives, ids): (Vec<bool>, Vec<bool>, Vec<u64>) = match (&args.scores, &args.model) {
        (Some(path), None) => {
            let tau = args.threshold.expect("clap requires --threshold");
            let records = read_records(path)?;
            // Validates tau and the record set.
            threshold_detect(&records, tau)?;
            let v = records
                .iter()
                .map(|r| match r.direction {
                    Direction::HigherIsAnomalous => r.score >= tau,
                    Direction::LowerIsAnomalous => r.score < tau,
                })
                .collect();
            (v, records.iter().map(|r| r.positive).collect(), records.iter().map(|r| r.id).collect())
        }
        (None, Some(model_path)) => {
            let model = load_checkpoint(model_path)?;
            let Loaded::Sequences(corpus) = args.data.load()? else {
                bail!("next-token detection needs session data");
            };
            let ev = token_evidence(&model, &corpus)?;
            let flags: Vec<bool> = match (args.top_k, args.tp) {
                (Some(k), None) => {
                    if k == 0 {
                        bail!("--top-k must be at least 1");
                    }
                    ev.ranks.iter().map(|&r| r >= k).collect()
                }
                (None, Some(t)) => ev.probs.iter().map(|&p| p < t).collect(),
                _ => bail!("pass exactly one of --top-k and --tp"),
            };
            let v = session_verdicts(&ev.sessions, &flags, corpus.len())?;
            (v, truth(&corpus), (0..corpus.len() as u64).collect())
        }
        _ => bail!("pass --scores with --threshold, or --model with session data"),
    };
    let counts = ConfusionCounts::from_verdicts(&verdicts, &positives)?;
    if let Some(path) = &args.out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "anomalous", "positive"])?;
        for ((id, v), p) in ids.iter().zip(&verdicts).zip(&positives) {
            w.write_record([id.to_string(), v.to_string(), p.to_string()])?;
        }
        w.flush()?;
    }
    let flagged = verdicts.iter().filter(|&&v| v).count();
    let json = json!({ "flagged": flagged, "total": verdicts.len(), "counts": counts_json(&counts) });
    let text = format!("flagged {flagged} of {}\n{}", verdicts.len(), counts_text(&counts));
    Ok(Outcome::new(json, text))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Directory for `pr.csv` and `roc.csv`.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

pub fn eval(args: &EvalArgs) -> Result<Outcome> {
    let records = read_records(&args.scores)?;
    let pr = aupr(&records);
    let roc = auroc(&records);
    if let Some(dir) = &args.curves {
        fs::create_dir_all(dir)?;
        if let Ok(c) = &pr {
            fs::write(dir.join("pr.csv"), c.to_csv("recall", "precision"))?;
        }
        if let Ok(c) = &roc {
            fs::write(dir.join("roc.csv"), c.to_csv("fpr", "tpr"))?;
        }
    }
    let area = |c: &dpad_core::Result<dpad_core::metrics::Curve>| c.as_ref().ok().map(|c| c.area);
    let (a_pr, a_roc) = (area(&pr), area(&roc));
    let positives = records.iter().filter(|r| r.positive).count();
    let json = json!({ "records": records.len(), "positives": positives, "aupr": a_pr, "auroc": a_roc });
    let mut text = format!(
        "records {}  positives {positives}\nAUPR {}  AUROC {}",
        records.len(),
        fmt_metric(a_pr),
        fmt_metric(a_roc)
    );
    if let Err(e) = &pr {
        text += &format!("\n(undefined: {e})");
    }
    Ok(Outcome::new(json, text))
}

#[derive(Args, Debug)]
pub struct AccountantArgs {
    /// Sampling rate B/N; or give --batch and --dataset-size.
    #[arg(long, conflicts_with_all = ["batch", "dataset_size"])]
    pub q: Option<f64>,
    #[arg(long, requires = "dataset_size")]
    pub batch: Option<usize>,
    #[arg(long, requires = "batch")]
    pub dataset_size: Option<usize>,
    #[arg(long)]
    pub sigma: f64,
    /// Number of noisy steps; or give --epochs with --batch/--dataset-size.
    #[arg(long, conflicts_with = "epochs")]
    pub steps: Option<u64>,
    #[arg(long, requires = "batch")]
    pub epochs: Option<u64>,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
}

pub fn accountant(args: &AccountantArgs) -> Result<Outcome> {
    let q = match (args.q, args.batch, args.dataset_size) {
        (Some(q), _, _) => q,
        (None, Some(b), Some(n)) if n > 0 => b as f64 / n as f64,
        _ => bail!("pass --q, or --batch with --dataset-size"),
    };
    if !(q > 0.0 && q <= 1.0) {
        bail!("sampling rate {q} outside (0, 1]");
    }
    if !(args.sigma > 0.0) {
        bail!("noise scale must be positive, got {}", args.sigma);
    }
    if !(args.delta > 0.0 && args.delta < 1.0) {
        bail!("delta must be in (0, 1), got {}", args.delta);
    }
    let steps = match (args.steps, args.epochs, args.batch, args.dataset_size) {
        (Some(s), ..) => s,
        (None, Some(e), Some(b), Some(n)) => e * n.div_ceil(b) as u64,
        _ => bail!("pass --steps, or --epochs with --batch and --dataset-size"),
    };
    let mut state = AccountantState::new(q, args.sigma, args.delta);
    state.steps = steps;
    let eps = state.epsilon();
    let json = json!({ "q": q, "sigma": args.sigma, "steps": steps, "delta": args.delta, "epsilon": eps });
    let text = format!(
        "epsilon {}  (q {q}, sigma {}, {steps} steps, delta {})",
        fmt_metric(Some(eps)),
        args.sigma,
        args.delta
    );
    Ok(Outcome::new(json, text))
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long, default_value_t = 1.0)]
    pub sensitivity: f64,
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub delta: f64,
}

pub fn calibrate(args: &CalibrateArgs) -> Result<Outcome> {
    let sigma =
        gaussian_sigma(&MechanismSpec { sensitivity: args.sensitivity, epsilon: args.epsilon, delta: args.delta })?;
    let json = json!({ "sensitivity": args.sensitivity, "epsilon": args.epsilon, "delta": args.delta, "sigma": sigma });
    Ok(Outcome::new(json, format!("sigma {sigma:.6}")))
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    /// Loss gap separating outliers from the population mean.
    #[arg(long)]
    pub t: f64,
    #[arg(long, default_value_t = 0.0)]
    pub xi: f64,
    #[arg(long, default_value_t = 1)]
    pub n: u64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Outliers in the training set.
    #[arg(long, default_value_t = 1)]
    pub c: u64,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
}

pub fn bound(args: &BoundArgs) -> Result<Outcome> {
    if !(args.gamma > 0.0 && args.gamma < 1.0) {
        bail!("gamma must be in (0, 1), got {}", args.gamma);
    }
    for (name, v) in [("t", args.t), ("xi", args.xi), ("epsilon", args.epsilon), ("delta", args.delta)] {
        if !(v.is_finite() && v >= 0.0) {
            bail!("{name} must be finite and non-negative, got {v}");
        }
    }
    let inputs = GapBoundInputs {
        t: args.t,
        xi: args.xi,
        n: args.n,
        epsilon: args.epsilon,
        delta: args.delta,
        c: args.c,
        gamma: args.gamma,
    };
    let b = outlier_gap_bound(&inputs);
    let json = json!({ "inputs": inputs, "bound": b, "vacuous": b <= 0.0 });
    let mut text = format!("bound {b}");
    if b <= 0.0 {
        text += "  (vacuous)";
    }
    Ok(Outcome::new(json, text))
}
