//! SGD goal metrics: joint and average goal accuracy, intent accuracy and
//! requested-slot F1, with a per-service and seen/unseen breakdown.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dialogue, DialogueState, Schema, Speaker};
use crate::error::{DstError, Result};

pub const FUZZY_THRESHOLD: f64 = 0.95;

// ---------------------------------------------------------------------------
// Fuzzy matching
// ---------------------------------------------------------------------------

/// Longest matching block of `a[alo..ahi]` and `b[blo..bhi]`, leftmost in `a`
/// then in `b` on ties. `b2j` excludes popular elements, which are only
/// reachable by extending a match.
#[allow(clippy::needless_range_loop)]
fn find_longest_match(
    a: &[char],
    b: &[char],
    b2j: &HashMap<char, Vec<usize>>,
    (alo, ahi, blo, bhi): (usize, usize, usize, usize),
) -> (usize, usize, usize) {
    let (mut besti, mut bestj, mut bestsize) = (alo, blo, 0usize);
    let mut j2len: HashMap<usize, usize> = HashMap::new();
    for i in alo..ahi {
        let mut next: HashMap<usize, usize> = HashMap::new();
        if let Some(js) = b2j.get(&a[i]) {
            for &j in js {
                if j < blo {
                    continue;
                }
                if j >= bhi {
                    break;
                }
                let k = j.checked_sub(1).and_then(|p| j2len.get(&p)).copied().unwrap_or(0) + 1;
                next.insert(j, k);
                if k > bestsize {
                    besti = i + 1 - k;
                    bestj = j + 1 - k;
                    bestsize = k;
                }
            }
        }
        j2len = next;
    }
    while besti > alo && bestj > blo && a[besti - 1] == b[bestj - 1] {
        besti -= 1;
        bestj -= 1;
        bestsize += 1;
    }
    while besti + bestsize < ahi && bestj + bestsize < bhi && a[besti + bestsize] == b[bestj + bestsize] {
        bestsize += 1;
    }
    (besti, bestj, bestsize)
}

/// Number of matched characters in the recursive longest-match alignment,
/// with the automatic popular-element heuristic for long `b`.
fn matched_chars(a: &[char], b: &[char]) -> usize {
    let mut b2j: HashMap<char, Vec<usize>> = HashMap::new();
    for (j, &c) in b.iter().enumerate() {
        b2j.entry(c).or_default().push(j);
    }
    if b.len() >= 200 {
        let ntest = b.len() / 100 + 1;
        b2j.retain(|_, js| js.len() <= ntest);
    }
    let mut total = 0;
    let mut queue = vec![(0, a.len(), 0, b.len())];
    while let Some((alo, ahi, blo, bhi)) = queue.pop() {
        let (i, j, k) = find_longest_match(a, b, &b2j, (alo, ahi, blo, bhi));
        if k > 0 {
            total += k;
            if alo < i && blo < j {
                queue.push((alo, i, blo, j));
            }
            if i + k < ahi && j + k < bhi {
                queue.push((i + k, ahi, j + k, bhi));
            }
        }
    }
    total
}

/// Similarity ratio `2M / T` over characters.
pub fn sequence_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * matched_chars(&a, &b) as f64 / total as f64
}

/// Lowercase, drop non-ASCII, turn everything but letters, digits and `_`
/// into separators, then sort the words.
fn sort_tokens(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .filter(char::is_ascii)
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    words.sort_unstable();
    words.join(" ")
}

fn round_half_even(x: f64) -> f64 {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
        r - x.signum()
    } else {
        r
    }
}

/// Token-sort similarity in [0, 1], quantized to whole percents.
pub fn fuzzy_match(predicted: &str, gold: &str) -> f64 {
    let a = sort_tokens(predicted);
    let b = sort_tokens(gold);
    if a == b {
        return 1.0;
    }
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    round_half_even(100.0 * sequence_ratio(&a, &b)) / 100.0
}

/// Best fuzzy score of `predicted` against any accepted gold form.
pub fn fuzzy_match_any(predicted: &str, gold_variants: &[String]) -> f64 {
    gold_variants
        .iter()
        .map(|g| fuzzy_match(predicted, g))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Frame scoring
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub service: String,
}

impl std::fmt::Display for FrameKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.dialogue_id, self.turn_index, self.service)
    }
}

/// A gold frame: state plus the accepted surface forms per slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldFrame {
    pub key: FrameKey,
    pub state: DialogueState,
    pub variants: BTreeMap<String, Vec<String>>,
}

impl GoldFrame {
    pub fn variants(&self, slot: &str) -> Vec<String> {
        match self.variants.get(slot) {
            Some(v) if !v.is_empty() => v.clone(),
            _ => self.state.slot_values.get(slot).cloned().into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnScore {
    pub joint_correct: bool,
    /// Every schema slot of the service, with whether gold assigns it.
    pub slots: Vec<SlotScore>,
    pub intent_correct: bool,
    pub requested_tp: usize,
    pub requested_fp: usize,
    pub requested_fn: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotScore {
    pub slot: String,
    pub gold_assigned: bool,
    pub correct: bool,
}

impl TurnScore {
    /// Per-frame F1 of the requested-slot sets; empty against empty is 1.
    pub fn requested_f1(&self) -> f64 {
        let positive = self.requested_tp + self.requested_fp;
        let truth = self.requested_tp + self.requested_fn;
        let p = if positive == 0 {
            1.0
        } else {
            self.requested_tp as f64 / positive as f64
        };
        let r = if truth == 0 {
            1.0
        } else {
            self.requested_tp as f64 / truth as f64
        };
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

pub fn score_frame(gold: &GoldFrame, predicted: &DialogueState, schema: &Schema) -> Result<TurnScore> {
    let service = schema.service(&gold.key.service)?;
    let mut slots = Vec::with_capacity(service.slots.len());
    for slot in &service.slots {
        let g = gold.state.slot_values.get(&slot.name);
        let p = predicted.slot_values.get(&slot.name);
        let correct = match (g, p) {
            (None, None) => true,
            (Some(_), None) | (None, Some(_)) => false,
            (Some(g), Some(p)) => {
                if slot.is_categorical {
                    g == p
                } else {
                    fuzzy_match_any(p, &gold.variants(&slot.name)) >= FUZZY_THRESHOLD
                }
            }
        };
        slots.push(SlotScore {
            slot: slot.name.clone(),
            gold_assigned: g.is_some(),
            correct,
        });
    }
    let gr = &gold.state.requested_slots;
    let pr = &predicted.requested_slots;
    Ok(TurnScore {
        joint_correct: slots.iter().all(|s| s.correct),
        slots,
        intent_correct: gold.state.active_intent == predicted.active_intent,
        requested_tp: gr.intersection(pr).count(),
        requested_fp: pr.difference(gr).count(),
        requested_fn: gr.difference(pr).count(),
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: usize,
    pub joint_goal_accuracy: f64,
    /// Mean over frames with an assigned gold slot of the per-frame accuracy
    /// on those slots. `None` when there are no such frames.
    pub average_goal_accuracy: Option<f64>,
    pub intent_accuracy: f64,
    pub requested_slot_f1: f64,
    pub assigned_slots: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    frames: usize,
    joint: usize,
    intent: usize,
    req_f1: f64,
    assigned: usize,
    scored_frames: usize,
    frame_acc: f64,
}

impl Acc {
    fn add(&mut self, s: &TurnScore) {
        self.frames += 1;
        self.joint += usize::from(s.joint_correct);
        self.intent += usize::from(s.intent_correct);
        self.req_f1 += s.requested_f1();
        let (n, ok) = s
            .slots
            .iter()
            .filter(|s| s.gold_assigned)
            .fold((0, 0), |(n, ok), s| (n + 1, ok + usize::from(s.correct)));
        if n > 0 {
            self.assigned += n;
            self.scored_frames += 1;
            self.frame_acc += ok as f64 / n as f64;
        }
    }

    fn metrics(&self) -> Metrics {
        let frac = |n: usize| {
            if self.frames == 0 {
                f64::NAN
            } else {
                n as f64 / self.frames as f64
            }
        };
        Metrics {
            frames: self.frames,
            joint_goal_accuracy: frac(self.joint),
            average_goal_accuracy: (self.scored_frames > 0).then(|| self.frame_acc / self.scored_frames as f64),
            intent_accuracy: frac(self.intent),
            requested_slot_f1: if self.frames == 0 {
                f64::NAN
            } else {
                self.req_f1 / self.frames as f64
            },
            assigned_slots: self.assigned,
        }
    }
}

pub fn aggregate<'a>(scores: impl IntoIterator<Item = &'a TurnScore>) -> Metrics {
    let mut acc = Acc::default();
    for s in scores {
        acc.add(s);
    }
    acc.metrics()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Metrics,
    pub per_service: BTreeMap<String, Metrics>,
    pub seen: Metrics,
    pub unseen: Metrics,
}

pub fn build_report(scored: &[(FrameKey, TurnScore)], seen_services: &BTreeSet<String>) -> MetricsReport {
    let mut overall = Acc::default();
    let mut seen = Acc::default();
    let mut unseen = Acc::default();
    let mut per: BTreeMap<String, Acc> = BTreeMap::new();
    for (key, s) in scored {
        overall.add(s);
        per.entry(key.service.clone()).or_default().add(s);
        if seen_services.contains(&key.service) {
            seen.add(s);
        } else {
            unseen.add(s);
        }
    }
    let overall = overall.metrics();
    if overall.average_goal_accuracy.is_none() {
        log::warn!("no frame has an assigned gold slot; average goal accuracy undefined");
    }
    MetricsReport {
        overall,
        per_service: per.into_iter().map(|(k, a)| (k, a.metrics())).collect(),
        seen: seen.metrics(),
        unseen: unseen.metrics(),
    }
}

/// Every user frame of the gold dialogues.
pub fn gold_frames(dialogues: &[Dialogue]) -> Vec<GoldFrame> {
    let mut out = Vec::new();
    for d in dialogues {
        for (ti, turn) in d.turns.iter().enumerate() {
            if turn.speaker != Speaker::User {
                continue;
            }
            for f in &turn.frames {
                if let Some(state) = &f.state {
                    out.push(GoldFrame {
                        key: FrameKey {
                            dialogue_id: d.dialogue_id.clone(),
                            turn_index: ti,
                            service: f.service.clone(),
                        },
                        state: state.clone(),
                        variants: f.value_variants.clone(),
                    });
                }
            }
        }
    }
    out
}

/// Scores predictions against gold; every gold frame needs a prediction.
pub fn score_all(
    gold: &[GoldFrame],
    predictions: &BTreeMap<FrameKey, DialogueState>,
    schema: &Schema,
) -> Result<Vec<(FrameKey, TurnScore)>> {
    let missing: Vec<String> = gold
        .iter()
        .filter(|g| !predictions.contains_key(&g.key))
        .map(|g| g.key.to_string())
        .collect();
    if !missing.is_empty() {
        let shown = missing.iter().take(20).cloned().collect::<Vec<_>>().join(", ");
        return Err(DstError::Alignment(format!(
            "{} gold frames have no prediction: {shown}{}",
            missing.len(),
            if missing.len() > 20 { ", ..." } else { "" }
        )));
    }
    gold.iter()
        .map(|g| Ok((g.key.clone(), score_frame(g, &predictions[&g.key], schema)?)))
        .collect()
}

pub fn joint_goal_accuracy(scores: &[TurnScore]) -> f64 {
    aggregate(scores).joint_goal_accuracy
}

pub fn average_goal_accuracy(scores: &[TurnScore]) -> Option<f64> {
    aggregate(scores).average_goal_accuracy
}

pub fn intent_accuracy(scores: &[TurnScore]) -> f64 {
    aggregate(scores).intent_accuracy
}

pub fn requested_slot_f1(scores: &[TurnScore]) -> f64 {
    aggregate(scores).requested_slot_f1
}

// ---------------------------------------------------------------------------
// Prediction dumps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    pub service: String,
    pub state: DialogueState,
}

impl PredictionRecord {
    pub fn key(&self) -> FrameKey {
        FrameKey {
            dialogue_id: self.dialogue_id.clone(),
            turn_index: self.turn_index,
            service: self.service.clone(),
        }
    }
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    crate::util::write_atomic(path.as_ref(), &out)
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<BTreeMap<FrameKey, DialogueState>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = BTreeMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| DstError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        if out.insert(rec.key(), rec.state).is_some() {
            return Err(DstError::Alignment(format!("duplicate prediction on line {}", n + 1)));
        }
    }
    Ok(out)
}

/// CSV with one row per breakdown group.
pub fn write_report_csv(path: impl AsRef<Path>, report: &MetricsReport) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "group,frames,jga,avg_ga,intent_acc,req_f1")?;
    let mut row = |name: &str, m: &Metrics| -> std::io::Result<()> {
        writeln!(
            f,
            "{name},{},{:.6},{},{:.6},{:.6}",
            m.frames,
            m.joint_goal_accuracy,
            m.average_goal_accuracy.map_or("".to_string(), |v| format!("{v:.6}")),
            m.intent_accuracy,
            m.requested_slot_f1
        )
    };
    row("overall", &report.overall)?;
    row("seen", &report.seen)?;
    row("unseen", &report.unseen)?;
    for (name, m) in &report.per_service {
        row(name, m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_strings_match() {
        assert_eq!(fuzzy_match("six in the evening", "six in the evening"), 1.0);
        assert_eq!(fuzzy_match("World Gourmet", "world gourmet"), 1.0);
        assert!(fuzzy_match("6 pm", "san jose") < FUZZY_THRESHOLD);
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(94.5), 94.0);
        assert_eq!(round_half_even(95.5), 96.0);
        assert_eq!(round_half_even(95.4), 95.0);
    }

    #[test]
    fn requested_f1_cases() {
        let s = |tp, fp, fn_| TurnScore {
            joint_correct: true,
            slots: vec![],
            intent_correct: true,
            requested_tp: tp,
            requested_fp: fp,
            requested_fn: fn_,
        };
        assert_eq!(s(0, 0, 0).requested_f1(), 1.0);
        assert!((s(1, 0, 1).requested_f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s(0, 1, 1).requested_f1(), 0.0);
    }
}
