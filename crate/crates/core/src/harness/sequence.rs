use super::{hash_corpus, sigma_grid, sigma_label, CorpusSource, Ctx, Metrics, SequenceSpec, Table};
use crate::data::{gen_sessions, load_sequences, window_sequences, SequenceCorpus, SessionLabel, SyntheticLogModel};
use crate::dp::train;
use crate::error::Result;
use crate::metrics::{
    aupr, auroc, confusion_stats, session_verdicts, topk_rank, ConfusionCounts, Direction, ScoreRecord,
};
use crate::nn::{build_model, predict_distributions, LossKind, ModelArch, Sample};

pub(crate) const TABLE: &str = "sequence.csv";
const VALUES: [&str; 10] = ["epsilon", "tp", "fp", "tn", "fn", "precision", "recall", "f_measure", "aupr", "auroc"];

fn corpus_for(src: &CorpusSource, seed: u64) -> Result<SequenceCorpus> {
    match src {
        CorpusSource::Synthetic { vocab, n_normal, n_abnormal, automaton_seed } => {
            let model = SyntheticLogModel::generate(*vocab, *automaton_seed)?;
            gen_sessions(&model, *n_normal, *n_abnormal, seed)
        }
        CorpusSource::Files { vocab, sessions, labels } => load_sequences(sessions, Some(labels), *vocab),
    }
}

fn counts_row(c: &ConfusionCounts) -> Vec<Option<f64>> {
    let s = confusion_stats(c);
    vec![
        Some(c.tp as f64),
        Some(c.fp as f64),
        Some(c.tn as f64),
        Some(c.fn_ as f64),
        s.precision,
        s.recall,
        s.f_measure,
    ]
}

/// Per-entry evidence for one trained model: rank and probability of the
/// observed token.
struct Evidence {
    ranks: Vec<usize>,
    probs: Vec<f64>,
}

pub(super) fn run(ctx: &mut Ctx, spec: &SequenceSpec) -> Result<()> {
    let vocab = match &spec.corpus {
        CorpusSource::Synthetic { vocab, .. } | CorpusSource::Files { vocab, .. } => *vocab,
    };
    let arch = ModelArch::LstmLm { vocab, history: spec.history, hidden: spec.hidden, layers: spec.layers };
    let mut table = Table::new(&["config_id", "sigma", "detector", "param"], &VALUES);
    let sigmas = sigma_grid(&[None], &spec.sigmas);
    for &seed in &ctx.cfg.seeds.clone() {
        let corpus = corpus_for(&spec.corpus, seed)?;
        let (train_set, test_set) = corpus.split(spec.train_normal_fraction, spec.train_abnormal_fraction, seed);
        ctx.hash(format!("seed{seed}/train"), hash_corpus(&train_set));
        ctx.hash(format!("seed{seed}/test"), hash_corpus(&test_set));
        let samples: Vec<Sample> = window_sequences(&train_set, spec.history, spec.window_mode)?
            .into_iter()
            .map(|w| Sample::next_token(w.history, w.next))
            .collect();
        let windows = window_sequences(&test_set, spec.history, spec.window_mode)?;
        let histories: Vec<Vec<usize>> = windows.iter().map(|w| w.history.clone()).collect();
        let sessions: Vec<usize> = windows.iter().map(|w| w.session).collect();
        let truth: Vec<bool> = test_set.labels.iter().map(|l| *l == SessionLabel::Abnormal).collect();
        for &sigma in &sigmas {
            let base_id = format!("sigma={}", sigma_label(sigma));
            let dp = spec.training.dp_config(sigma.map(|_| spec.training.clip), sigma, seed);
            let mut evidence = None;
            let (status, eps, m) = ctx.cell(&base_id, seed, || {
                let model = build_model(&arch, seed)?;
                let report = train(model, &samples, LossKind::CrossEntropy, &dp)?;
                let dists = predict_distributions(&report.model, &histories)?;
                let mut ev =
                    Evidence { ranks: Vec::with_capacity(dists.len()), probs: Vec::with_capacity(dists.len()) };
                for (d, w) in dists.iter().zip(&windows) {
                    ev.ranks.push(topk_rank(d, w.next)?);
                    ev.probs.push(d[w.next]);
                }
                // Session score: the least likely observed entry.
                let mut min_p = vec![f64::INFINITY; test_set.len()];
                for (&s, &p) in sessions.iter().zip(&ev.probs) {
                    min_p[s] = min_p[s].min(p);
                }
                let records: Vec<ScoreRecord> = min_p
                    .iter()
                    .zip(&truth)
                    .enumerate()
                    .map(|(i, (&p, &t))| ScoreRecord::new(i as u64, p, t, Direction::LowerIsAnomalous))
                    .collect();
                let mut m = Metrics::new();
                m.insert("aupr".into(), aupr(&records).ok().map(|c| c.area));
                m.insert("auroc".into(), auroc(&records).ok().map(|c| c.area));
                evidence = Some(ev);
                Ok((report, m))
            });
            let areas = [m.get("aupr").copied().flatten(), m.get("auroc").copied().flatten()];
            let detectors = spec
                .k_grid
                .iter()
                .map(|k| ("top-k", format!("{k}"), Threshold::Rank(*k)))
                .chain(spec.tp_grid.iter().map(|t| ("probability", format!("{t:e}"), Threshold::Prob(*t))));
            for (name, param, thr) in detectors {
                let id = format!("{base_id},{name}={param}");
                let counts = match &evidence {
                    Some(ev) => {
                        let flags: Vec<bool> = match thr {
                            Threshold::Rank(k) => ev.ranks.iter().map(|&r| r >= k).collect(),
                            Threshold::Prob(t) => ev.probs.iter().map(|&p| p < t).collect(),
                        };
                        let verdicts = session_verdicts(&sessions, &flags, test_set.len())?;
                        Some(ConfusionCounts::from_verdicts(&verdicts, &truth)?)
                    }
                    None => None,
                };
                let mut values = vec![eps];
                match &counts {
                    Some(c) => values.extend(counts_row(c)),
                    None => values.extend([None; 7]),
                }
                values.extend(areas);
                table.push(vec![id, sigma_label(sigma), name.to_string(), param], seed, status.clone(), values);
            }
        }
    }
    ctx.out.tables.push((TABLE.to_string(), table));
    Ok(())
}

#[derive(Clone, Copy)]
enum Threshold {
    Rank(usize),
    Prob(f64),
}
