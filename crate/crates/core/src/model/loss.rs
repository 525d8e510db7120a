use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::{ParamStore, Tape, Var};
use crate::corpus::Service;
use crate::encoding::IndexMap;
use crate::error::{DstError, Result};
use crate::labeling::{CarryoverStatus, IntentStatus, TurnLabels, UserStatus};
use crate::model::{HeadOutputs, HeadVars};
use crate::scalar::{c, Scalar};

pub const HEAD_NAMES: [&str; 9] = [
    "intent_status",
    "intent_value",
    "requested",
    "user_status",
    "carryover",
    "categorical",
    "start",
    "end",
    "cross",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
    pub w8: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
            w5: 1.0,
            w6: 1.0,
            w7: 1.0,
            w8: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
        }
    }
}

impl LossWeights {
    /// Effective multiplier of each head's mean loss, in `HEAD_NAMES` order.
    pub fn coefficients(&self) -> [f64; 9] {
        [
            self.lambda1 * self.w1,
            self.lambda1 * self.w2,
            self.lambda2,
            self.lambda3 * self.w3,
            self.lambda3 * self.w4,
            self.lambda3 * self.w5,
            self.lambda3 * self.w6,
            self.lambda3 * self.w7,
            self.lambda3 * self.w8,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.w1,
            self.w2,
            self.w3,
            self.w4,
            self.w5,
            self.w6,
            self.w7,
            self.w8,
            self.lambda1,
            self.lambda2,
            self.lambda3,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(DstError::Config("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(DstError::Config("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

/// Training targets of one example, laid out like the head outputs.
/// `None` entries do not contribute to the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet<F: Scalar> {
    pub intent_status: Vec<Option<usize>>,
    pub intent_value: Vec<Option<F>>,
    pub requested: Vec<Option<F>>,
    pub user_status: Vec<Option<usize>>,
    pub carryover: Vec<Option<usize>>,
    pub categorical: Vec<Option<F>>,
    pub start: Vec<Option<usize>>,
    pub end: Vec<Option<usize>>,
    /// Row-major `[|S_inf|, kept S_prev entries]`.
    pub cross: Vec<Option<F>>,
}

fn bin<F: Scalar>(b: bool) -> Option<F> {
    Some(if b { F::one() } else { F::zero() })
}

impl<F: Scalar> TargetSet<F> {
    /// Aligns labels with an encoded input. Values whose evidence was cut by
    /// truncation are masked out instead of pointing at missing tokens.
    pub fn from_labels(labels: &TurnLabels, service: &Service, map: &IndexMap) -> Result<Self> {
        let n_inf = map.informable.len();
        if labels.slots.len() != n_inf
            || labels.requested.len() != map.slots.len()
            || service.intents.len() != map.intents.len()
        {
            return Err(DstError::Shape(format!(
                "labels for {} informable / {} slots / {} intents do not match input with {} / {} / {}",
                labels.slots.len(),
                labels.requested.len(),
                service.intents.len(),
                n_inf,
                map.slots.len(),
                map.intents.len()
            )));
        }
        let active_intent = match (labels.intent_status, labels.intent_value) {
            (IntentStatus::Active, Some(v)) => Some(v),
            _ => None,
        };
        let mut user: Vec<Option<usize>> = labels
            .slots
            .iter()
            .map(|l| l.user_status.map(UserStatus::index))
            .collect();
        let mut carry: Vec<Option<usize>> = labels
            .slots
            .iter()
            .map(|l| l.carryover_status.map(CarryoverStatus::index))
            .collect();

        let mut start = Vec::with_capacity(map.noncategorical.len());
        let mut end = Vec::with_capacity(map.noncategorical.len());
        for &k in &map.noncategorical {
            let l = &labels.slots[k];
            let (mut s, mut e) = (None, None);
            if l.user_status == Some(UserStatus::Active) {
                match l.span {
                    Some((a, b)) if a >= map.user_dropped && b < map.user_dropped + map.user_len => {
                        s = Some(a - map.user_dropped);
                        e = Some(b - map.user_dropped);
                    }
                    _ => {
                        user[k] = None;
                        carry[k] = None;
                    }
                }
            }
            start.push(s);
            end.push(e);
        }

        let mut categorical = Vec::with_capacity(map.value_count());
        for (ci, &k) in map.categorical.iter().enumerate() {
            let l = &labels.slots[k];
            let n = map.values[ci].len();
            match (l.user_status, l.categorical_value) {
                (Some(UserStatus::Active), Some(v)) if v < n => {
                    categorical.extend((0..n).map(|i| bin(i == v)));
                }
                (Some(UserStatus::Active), _) => {
                    user[k] = None;
                    carry[k] = None;
                    categorical.extend((0..n).map(|_| None));
                }
                _ => categorical.extend((0..n).map(|_| None)),
            }
        }

        let n_prev = map.prev.len();
        let mut cross = vec![None; n_inf * n_prev];
        for (k, l) in labels.slots.iter().enumerate() {
            if l.carryover_status != Some(CarryoverStatus::InCrossServiceHist) {
                continue;
            }
            let kept = l
                .cross_service_source
                .and_then(|src| map.prev.iter().position(|&(i, _)| i == src));
            match kept {
                Some(j) => {
                    for jj in 0..n_prev {
                        cross[k * n_prev + jj] = bin(jj == j);
                    }
                }
                None => {
                    user[k] = None;
                    carry[k] = None;
                }
            }
        }

        Ok(TargetSet {
            intent_status: vec![Some(match labels.intent_status {
                IntentStatus::None => 0,
                IntentStatus::Active => 1,
            })],
            intent_value: (0..map.intents.len())
                .map(|i| active_intent.and_then(|v| bin(i == v)))
                .collect(),
            requested: labels.requested.iter().map(|&r| bin(r)).collect(),
            user_status: user,
            carryover: carry,
            categorical,
            start,
            end,
            cross,
        })
    }

    /// Number of supervised targets per head, in `HEAD_NAMES` order. Softmax
    /// heads count rows, sigmoid heads count elements.
    pub fn counts(&self) -> [usize; 9] {
        fn n<T>(v: &[Option<T>]) -> usize {
            v.iter().filter(|x| x.is_some()).count()
        }
        [
            n(&self.intent_status),
            n(&self.intent_value),
            n(&self.requested),
            n(&self.user_status),
            n(&self.carryover),
            n(&self.categorical),
            n(&self.start),
            n(&self.end),
            n(&self.cross),
        ]
    }
}

/// Per-head mean losses and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<F: Scalar> {
    pub total: F,
    /// Mean over supervised targets in the batch; zero when there are none.
    pub heads: [F; 9],
    pub counts: [usize; 9],
}

impl<F: Scalar> LossBreakdown<F> {
    pub fn weighted_sum(&self, weights: &LossWeights) -> f64 {
        weights
            .coefficients()
            .iter()
            .zip(&self.heads)
            .map(|(w, h)| w * h.to_f64_lossy())
            .sum()
    }
}

fn head_loss<F: Scalar>(tape: &mut Tape<'_, F>, h: usize, v: &HeadVars, t: &TargetSet<F>) -> Result<Var> {
    match h {
        0 => tape.softmax_ce(v.intent_status, t.intent_status.clone()),
        1 => tape.sigmoid_bce(v.intent_value, t.intent_value.clone()),
        2 => tape.sigmoid_bce(v.requested, t.requested.clone()),
        3 => tape.softmax_ce(v.user_status, t.user_status.clone()),
        4 => tape.softmax_ce(v.carryover, t.carryover.clone()),
        5 => tape.sigmoid_bce(v.categorical, t.categorical.clone()),
        6 => tape.softmax_ce(v.start, t.start.clone()),
        7 => tape.softmax_ce(v.end, t.end.clone()),
        _ => tape.sigmoid_bce(v.cross, t.cross.clone()),
    }
}

/// Builds the weighted loss of a batch on `tape`.
pub fn loss_on_tape<F: Scalar>(
    tape: &mut Tape<'_, F>,
    vars: &[HeadVars],
    targets: &[TargetSet<F>],
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown<F>)> {
    if vars.is_empty() {
        return Err(DstError::Shape("empty batch".into()));
    }
    if vars.len() != targets.len() {
        return Err(DstError::Shape(format!(
            "{} targets for {} examples",
            targets.len(),
            vars.len()
        )));
    }
    let coef = weights.coefficients();
    let mut counts = [0usize; 9];
    let mut heads = [F::zero(); 9];
    let mut terms = Vec::new();
    for h in 0..9 {
        let mut parts = Vec::new();
        for (v, t) in vars.iter().zip(targets) {
            let n = t.counts()[h];
            // Shape checks still run for unsupervised heads.
            let l = head_loss(tape, h, v, t)?;
            if n > 0 {
                parts.push(l);
                counts[h] += n;
            }
        }
        if counts[h] == 0 {
            continue;
        }
        let sum = tape.sum(parts)?;
        let mean = tape.scale(sum, c(1.0 / counts[h] as f64));
        heads[h] = tape.value(mean)[[0, 0]];
        terms.push(tape.scale(mean, c(coef[h])));
    }
    let total = if terms.is_empty() {
        tape.constant(Array2::zeros((1, 1)))
    } else {
        tape.sum(terms)?
    };
    let breakdown = LossBreakdown {
        total: tape.value(total)[[0, 0]],
        heads,
        counts,
    };
    Ok((total, breakdown))
}

/// Loss of precomputed head outputs.
pub fn compute_loss<F: Scalar>(
    outputs: &[HeadOutputs<F>],
    targets: &[TargetSet<F>],
    weights: &LossWeights,
) -> Result<LossBreakdown<F>> {
    let store = ParamStore::default();
    let mut tape = Tape::new(&store);
    let vars: Vec<HeadVars> = outputs.iter().map(|o| o.to_tape(&mut tape)).collect();
    loss_on_tape(&mut tape, &vars, targets, weights).map(|(_, b)| b)
}
