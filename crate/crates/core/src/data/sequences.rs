//! Synthetic log-session corpora and history windows for next-token models.
//!
//! Token 0 is the start/pad token and token 1 ends a session, so an
//! automaton session always finishes with `END_TOKEN` and a truncated one
//! is detectable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};

pub const START_TOKEN: usize = 0;
pub const END_TOKEN: usize = 1;

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionLabel {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// `a b` becomes `b a`.
    Swap,
    /// `token` inserted right after the first `a`.
    Insertion,
    /// Session ends right after the first `a`.
    Truncation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyPattern {
    pub kind: AnomalyKind,
    pub after: usize,
    /// Partner token for swaps, inserted token for insertions, unused for
    /// truncations.
    pub token: usize,
}

/// Weighted state machine over event tokens. Each event token is its own
/// state; `entry` leaves the start state and `END_TOKEN` is terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLogModel {
    pub vocab: usize,
    pub entry: Vec<(usize, f64)>,
    pub transitions: Vec<Vec<(usize, f64)>>,
    pub max_len: usize,
    pub anomalies: Vec<AnomalyPattern>,
}

impl SyntheticLogModel {
    /// Random layered automaton over tokens `2..vocab` with self-loops,
    /// back edges, rare skip edges and early exits, plus a catalogue of six
    /// anomaly patterns (two of each kind).
    pub fn generate(vocab: usize, seed: u64) -> Result<Self> {
        if vocab < 8 {
            return input_err(format!("vocabulary {vocab} too small for a synthetic log model"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events: Vec<usize> = (2..vocab).collect();
        events.shuffle(&mut rng);
        let mut layers: Vec<Vec<usize>> = Vec::new();
        let mut rest = &events[..];
        while !rest.is_empty() {
            let take = rng.gen_range(1..=3).min(rest.len());
            layers.push(rest[..take].to_vec());
            rest = &rest[take..];
        }
        let n_layers = layers.len();
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); vocab];
        let add = |edges: &mut Vec<Vec<(usize, f64)>>, a: usize, b: usize, w: f64| {
            if let Some(e) = edges[a].iter_mut().find(|e| e.0 == b) {
                e.1 += w;
            } else {
                edges[a].push((b, w));
            }
        };
        for j in 0..n_layers {
            let cur = layers[j].clone();
            if j + 1 == n_layers {
                for &a in &cur {
                    add(&mut edges, a, END_TOKEN, 1.0);
                }
            } else {
                let next = layers[j + 1].clone();
                // Every next-layer state gets a predecessor, every current
                // state a successor.
                for (i, &b) in next.iter().enumerate() {
                    add(&mut edges, cur[i % cur.len()], b, 1.0);
                }
                for &a in &cur {
                    if edges[a].is_empty() || rng.gen_bool(0.3) {
                        let b = next[rng.gen_range(0..next.len())];
                        add(&mut edges, a, b, rng.gen_range(0.3..=1.0));
                    }
                }
            }
            for &a in &cur {
                if rng.gen_bool(0.3) {
                    add(&mut edges, a, a, 0.5);
                }
                if j > 0 && rng.gen_bool(0.2) {
                    let back = &layers[j - 1];
                    add(&mut edges, a, back[rng.gen_range(0..back.len())], 0.3);
                }
                if j + 2 < n_layers && rng.gen_bool(0.2) {
                    let skip = &layers[j + 2];
                    add(&mut edges, a, skip[rng.gen_range(0..skip.len())], 0.1);
                }
                if j + 1 < n_layers && j >= n_layers / 2 && rng.gen_bool(0.3) {
                    add(&mut edges, a, END_TOKEN, 0.2);
                }
            }
        }
        for row in &mut edges {
            let total: f64 = row.iter().map(|e| e.1).sum();
            row.iter_mut().for_each(|e| e.1 /= total);
        }
        let entry = layers[0].iter().map(|&t| (t, 1.0 / layers[0].len() as f64)).collect();
        let mut model = Self { vocab, entry, transitions: edges, max_len: 4 * n_layers + 20, anomalies: Vec::new() };
        model.anomalies = model.pick_anomalies(&mut rng);
        Ok(model)
    }

    fn pick_anomalies(&self, rng: &mut ChaCha8Rng) -> Vec<AnomalyPattern> {
        let events: Vec<usize> = (2..self.vocab).collect();
        let mut out = Vec::new();
        let mut pick = |cands: Vec<AnomalyPattern>, out: &mut Vec<AnomalyPattern>| {
            let mut cands = cands;
            cands.shuffle(rng);
            out.extend(cands.into_iter().take(2));
        };
        let insertions = events
            .iter()
            .flat_map(|&a| events.iter().map(move |&x| (a, x)))
            .filter(|&(a, x)| !self.allows(a, x))
            .map(|(a, x)| AnomalyPattern { kind: AnomalyKind::Insertion, after: a, token: x })
            .collect();
        pick(insertions, &mut out);
        let swaps = events
            .iter()
            .flat_map(|&a| self.transitions[a].iter().map(move |&(b, _)| (a, b)))
            .filter(|&(a, b)| a != b && b >= 2 && !self.allows(b, a))
            .map(|(a, b)| AnomalyPattern { kind: AnomalyKind::Swap, after: a, token: b })
            .collect();
        pick(swaps, &mut out);
        let truncations = events
            .iter()
            .filter(|&&a| !self.allows(a, END_TOKEN))
            .map(|&a| AnomalyPattern { kind: AnomalyKind::Truncation, after: a, token: END_TOKEN })
            .collect();
        pick(truncations, &mut out);
        out
    }

    pub fn allows(&self, from: usize, to: usize) -> bool {
        let row = if from == START_TOKEN { &self.entry } else { &self.transitions[from] };
        row.iter().any(|&(t, p)| t == to && p > 0.0)
    }

    /// Membership oracle: replays `session` through the state machine.
    pub fn accepts(&self, session: &[usize]) -> bool {
        if session.len() < 2 || session.len() > self.max_len || *session.last().unwrap() != END_TOKEN {
            return false;
        }
        if session.iter().any(|&t| t >= self.vocab) {
            return false;
        }
        let mut prev = START_TOKEN;
        for &t in session {
            if !self.allows(prev, t) {
                return false;
            }
            prev = t;
        }
        true
    }

    fn draw(row: &[(usize, f64)], rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(t, p) in row {
            acc += p;
            if u < acc {
                return t;
            }
        }
        row.last().expect("non-empty transition row").0
    }

    /// One automaton session (ending with `END_TOKEN`); overlong walks are
    /// redrawn.
    pub fn sample_session(&self, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        for _ in 0..MAX_ATTEMPTS {
            let mut s = vec![Self::draw(&self.entry, rng)];
            while *s.last().unwrap() != END_TOKEN && s.len() <= self.max_len {
                let row = &self.transitions[*s.last().unwrap()];
                if row.is_empty() {
                    return Err(Error::Input(format!("token {} has no successor", s.last().unwrap())));
                }
                s.push(Self::draw(row, rng));
            }
            if s.len() <= self.max_len && *s.last().unwrap() == END_TOKEN {
                return Ok(s);
            }
        }
        Err(Error::Input("automaton never terminates within max_len".into()))
    }

    fn apply(&self, pattern: &AnomalyPattern, s: &[usize]) -> Option<Vec<usize>> {
        let events = &s[..s.len() - 1];
        match pattern.kind {
            AnomalyKind::Insertion => {
                let p = events.iter().position(|&t| t == pattern.after)?;
                let mut out = s.to_vec();
                out.insert(p + 1, pattern.token);
                Some(out)
            }
            AnomalyKind::Swap => {
                let p = events.windows(2).position(|w| w[0] == pattern.after && w[1] == pattern.token)?;
                let mut out = s.to_vec();
                out.swap(p, p + 1);
                Some(out)
            }
            AnomalyKind::Truncation => {
                let p = events.iter().position(|&t| t == pattern.after)?;
                let mut out = s[..=p].to_vec();
                out.push(END_TOKEN);
                Some(out)
            }
        }
    }

    /// Draws one abnormal session from a uniformly chosen catalogue
    /// pattern, re-sampling until the pattern applies and the result is
    /// rejected by [`Self::accepts`].
    fn sample_abnormal(&self, patterns: &[AnomalyPattern], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        for _ in 0..MAX_ATTEMPTS {
            let pattern = patterns[rng.gen_range(0..patterns.len())];
            let base = self.sample_session(rng)?;
            if let Some(s) = self.apply(&pattern, &base) {
                if !self.accepts(&s) {
                    return Ok(s);
                }
            }
        }
        Err(Error::Input("could not produce a forbidden session from the anomaly catalogue".into()))
    }

    fn fallback_patterns(&self) -> Vec<AnomalyPattern> {
        (2..self.vocab)
            .flat_map(|a| (2..self.vocab).map(move |x| (a, x)))
            .filter(|&(a, x)| !self.allows(a, x))
            .map(|(a, x)| AnomalyPattern { kind: AnomalyKind::Insertion, after: a, token: x })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceCorpus {
    pub vocab: usize,
    pub sessions: Vec<Vec<usize>>,
    pub labels: Vec<SessionLabel>,
    pub source: String,
}

impl SequenceCorpus {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    pub fn count(&self, label: SessionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn select(&self, indices: &[usize]) -> SequenceCorpus {
        SequenceCorpus {
            vocab: self.vocab,
            sessions: indices.iter().map(|&i| self.sessions[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            source: self.source.clone(),
        }
    }

    /// Seeded split: the first `round(frac * count)` of each shuffled label
    /// group go to training, the rest to test.
    pub fn split(&self, normal_frac: f64, abnormal_frac: f64, seed: u64) -> (SequenceCorpus, SequenceCorpus) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (label, frac) in [(SessionLabel::Normal, normal_frac), (SessionLabel::Abnormal, abnormal_frac)] {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
            idx.shuffle(&mut rng);
            let k = super::images::ratio_count(idx.len(), frac.clamp(0.0, 1.0));
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        (self.select(&train), self.select(&test))
    }
}

/// `n_normal` automaton sessions and `n_abnormal` sessions carrying a
/// forbidden transition, in seeded order.
pub fn gen_sessions(
    model: &SyntheticLogModel,
    n_normal: usize,
    n_abnormal: usize,
    seed: u64,
) -> Result<SequenceCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns = if model.anomalies.is_empty() { model.fallback_patterns() } else { model.anomalies.clone() };
    if n_abnormal > 0 && patterns.is_empty() {
        return input_err("automaton forbids no transition, so no anomaly can be generated");
    }
    let mut items = Vec::with_capacity(n_normal + n_abnormal);
    for _ in 0..n_normal {
        items.push((model.sample_session(&mut rng)?, SessionLabel::Normal));
    }
    for _ in 0..n_abnormal {
        items.push((model.sample_abnormal(&patterns, &mut rng)?, SessionLabel::Abnormal));
    }
    items.shuffle(&mut rng);
    let (sessions, labels) = items.into_iter().unzip();
    Ok(SequenceCorpus { vocab: model.vocab, sessions, labels, source: format!("synthetic:{seed}") })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// Every length-`h+1` window; shorter sessions yield nothing.
    Plain,
    /// As `Plain`, but sessions shorter than `h+1` are left-padded with
    /// `START_TOKEN` up to `h+1`.
    PadShort,
    /// Every session is left-padded with `h` start tokens so each of its
    /// tokens is predicted once.
    #[default]
    Prefix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub session: usize,
    /// Index in the unpadded session of the predicted token.
    pub position: usize,
    pub history: Vec<usize>,
    pub next: usize,
}

pub fn window_sequences(corpus: &SequenceCorpus, h: usize, mode: WindowMode) -> Result<Vec<Window>> {
    if h == 0 {
        return input_err("history length must be positive");
    }
    let mut out = Vec::new();
    for (si, s) in corpus.sessions.iter().enumerate() {
        let pad = match mode {
            WindowMode::Plain => 0,
            WindowMode::PadShort => (h + 1).saturating_sub(s.len()),
            WindowMode::Prefix => h,
        };
        if s.is_empty() {
            continue;
        }
        let mut padded = vec![START_TOKEN; pad];
        padded.extend_from_slice(s);
        for t in h..padded.len() {
            out.push(Window { session: si, position: t - pad, history: padded[t - h..t].to_vec(), next: padded[t] });
        }
    }
    Ok(out)
}

/// Reads one space-separated session per line and, if given, a label file
/// with `0` (normal) or `1` (abnormal) per line.
pub fn load_sequences(sessions: &Path, labels: Option<&Path>, vocab: usize) -> Result<SequenceCorpus> {
    let text = fs::read_to_string(sessions)?;
    let mut parsed = Vec::new();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            let mut s = Vec::new();
            for tok in body.split_whitespace() {
                let t: usize = tok
                    .parse()
                    .map_err(|_| Error::Format { offset: offset as u64, message: format!("bad token {tok:?}") })?;
                if t >= vocab {
                    return Err(Error::Format {
                        offset: offset as u64,
                        message: format!("token {t} outside vocabulary {vocab}"),
                    });
                }
                s.push(t);
            }
            parsed.push(s);
        }
        offset += line.len();
    }
    let labels = match labels {
        None => vec![SessionLabel::Normal; parsed.len()],
        Some(p) => {
            let text = fs::read_to_string(p)?;
            let mut out = Vec::new();
            let mut offset = 0usize;
            for line in text.split_inclusive('\n') {
                match line.trim() {
                    "" => {}
                    "0" => out.push(SessionLabel::Normal),
                    "1" => out.push(SessionLabel::Abnormal),
                    other => {
                        return Err(Error::Format { offset: offset as u64, message: format!("bad label {other:?}") })
                    }
                }
                offset += line.len();
            }
            if out.len() != parsed.len() {
                return input_err(format!("{} labels for {} sessions", out.len(), parsed.len()));
            }
            out
        }
    };
    Ok(SequenceCorpus { vocab, sessions: parsed, labels, source: sessions.display().to_string() })
}

pub fn write_sequences(corpus: &SequenceCorpus, sessions: &Path, labels: &Path) -> Result<()> {
    let mut s = String::new();
    let mut l = String::new();
    for (sess, lab) in corpus.sessions.iter().zip(&corpus.labels) {
        let line: Vec<String> = sess.iter().map(|t| t.to_string()).collect();
        writeln!(s, "{}", line.join(" ")).expect("string write");
        writeln!(l, "{}", u8::from(*lab == SessionLabel::Abnormal)).expect("string write");
    }
    fs::write(sessions, s)?;
    fs::write(labels, l)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(sessions: Vec<Vec<usize>>) -> SequenceCorpus {
        let n = sessions.len();
        SequenceCorpus { vocab: 29, sessions, labels: vec![SessionLabel::Normal; n], source: String::new() }
    }

    #[test]
    fn hdfs_example_window_count() {
        let c = corpus(vec![vec![22, 5, 5, 5, 11, 9, 11, 9, 11, 9, 26, 26, 26]]);
        let w = window_sequences(&c, 10, WindowMode::Plain).unwrap();
        assert_eq!(w.len(), 3);
        assert_eq!(w[0].history, vec![22, 5, 5, 5, 11, 9, 11, 9, 11, 9]);
        assert_eq!(w[0].next, 26);
        assert_eq!(w[2].position, 12);
        assert_eq!(window_sequences(&c, 10, WindowMode::Prefix).unwrap().len(), 13);
    }

    #[test]
    fn short_sessions() {
        let c = corpus(vec![(2..13).collect(), vec![4, 5, 1]]);
        assert_eq!(window_sequences(&c, 10, WindowMode::Plain).unwrap().len(), 1);
        let padded = window_sequences(&c, 10, WindowMode::PadShort).unwrap();
        assert_eq!(padded.len(), 2);
        assert_eq!(padded[1].history, vec![0, 0, 0, 0, 0, 0, 0, 0, 4, 5]);
        assert_eq!(padded[1].next, 1);
        assert_eq!(padded[1].position, 2);
    }

    #[test]
    fn generated_normals_are_accepted() {
        let m = SyntheticLogModel::generate(29, 7).unwrap();
        let c = gen_sessions(&m, 300, 0, 1).unwrap();
        assert_eq!(c.count(SessionLabel::Normal), 300);
        assert!(c.sessions.iter().all(|s| m.accepts(s)));
        assert!(c.sessions.iter().flatten().all(|&t| t < 29 && t != START_TOKEN));
    }

    #[test]
    fn oracle_separates_every_generated_session() {
        for seed in 0..5 {
            let m = SyntheticLogModel::generate(29, seed).unwrap();
            assert_eq!(m.anomalies.len(), 6);
            let c = gen_sessions(&m, 200, 50, seed).unwrap();
            for (s, l) in c.sessions.iter().zip(&c.labels) {
                assert_eq!(m.accepts(s), *l == SessionLabel::Normal, "{s:?}");
            }
        }
    }

    #[test]
    fn every_state_is_reachable() {
        let m = SyntheticLogModel::generate(29, 3).unwrap();
        let mut seen = vec![false; 29];
        let mut stack: Vec<usize> = m.entry.iter().map(|e| e.0).collect();
        while let Some(t) = stack.pop() {
            if !std::mem::replace(&mut seen[t], true) && t != END_TOKEN {
                stack.extend(m.transitions[t].iter().map(|e| e.0));
            }
        }
        assert!(seen[1..].iter().all(|&v| v));
    }

    #[test]
    fn complete_automaton_cannot_make_anomalies() {
        let mut m = SyntheticLogModel::generate(8, 1).unwrap();
        m.anomalies.clear();
        for a in 2..8 {
            m.transitions[a] = (1..8).map(|b| (b, 1.0 / 7.0)).collect();
        }
        assert!(gen_sessions(&m, 5, 0, 1).is_ok());
        assert!(gen_sessions(&m, 5, 1, 1).is_err());
    }

    #[test]
    fn split_respects_fractions() {
        let m = SyntheticLogModel::generate(29, 2).unwrap();
        let c = gen_sessions(&m, 100, 20, 2).unwrap();
        let (train, test) = c.split(0.5, 0.1, 9);
        assert_eq!(train.count(SessionLabel::Normal), 50);
        assert_eq!(train.count(SessionLabel::Abnormal), 2);
        assert_eq!(test.len(), 68);
    }

    #[test]
    fn text_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (sp, lp) = (dir.path().join("s.txt"), dir.path().join("l.txt"));
        let m = SyntheticLogModel::generate(29, 5).unwrap();
        let c = gen_sessions(&m, 20, 5, 5).unwrap();
        write_sequences(&c, &sp, &lp).unwrap();
        let back = load_sequences(&sp, Some(&lp), 29).unwrap();
        assert_eq!(back.sessions, c.sessions);
        assert_eq!(back.labels, c.labels);
        fs::write(&sp, "2 3 1\n4 99 1\n").unwrap();
        match load_sequences(&sp, None, 29) {
            Err(Error::Format { offset: 6, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn plain_window_count(lens in proptest::collection::vec(0usize..30, 0..20), h in 1usize..12) {
            let c = corpus(lens.iter().map(|&n| vec![2; n]).collect());
            let brute: usize = c.sessions.iter().map(|s| {
                let mut k = 0;
                for start in 0..s.len() {
                    if start + h < s.len() { k += 1; }
                }
                k
            }).sum();
            let w = window_sequences(&c, h, WindowMode::Plain).unwrap();
            prop_assert_eq!(w.len(), brute);
            prop_assert_eq!(w.len(), lens.iter().map(|&n| n.saturating_sub(h)).sum::<usize>());
        }
    }
}
