//! Masked cross-entropy written out with plain loops over `f64`, sharing no
//! code with the model's loss.

use dst_core::model::{HeadOutputs, LossWeights, TargetSet};
use ndarray::Array2;

fn lse(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|r| (0..a.ncols()).map(|c| a[[r, c]]).collect())
        .collect()
}

/// Sum and count of `-log softmax(row)[target]` over rows with a target.
fn softmax_ce(a: &Array2<f64>, t: &[Option<usize>]) -> (f64, usize) {
    assert_eq!(a.nrows(), t.len());
    let mut sum = 0.0;
    let mut n = 0;
    for (row, target) in rows(a).iter().zip(t) {
        if let Some(k) = target {
            sum += lse(row) - row[*k];
            n += 1;
        }
    }
    (sum, n)
}

/// Sum and count of binary cross-entropy over elements with a target.
fn sigmoid_bce(a: &Array2<f64>, t: &[Option<f64>]) -> (f64, usize) {
    let flat: Vec<f64> = rows(a).concat();
    assert_eq!(flat.len(), t.len());
    let mut sum = 0.0;
    let mut n = 0;
    for (x, target) in flat.iter().zip(t) {
        if let Some(y) = target {
            // log s(x) = -softplus(-x), log(1 - s(x)) = -softplus(x)
            let softplus = |z: f64| z.max(0.0) + (-z.abs()).exp().ln_1p();
            let (log_s, log_1ms) = (-softplus(-x), -softplus(*x));
            sum -= y * log_s + (1.0 - y) * log_1ms;
            n += 1;
        }
    }
    (sum, n)
}

/// Total loss and per-head means.
pub fn loss(outputs: &[HeadOutputs<f64>], targets: &[TargetSet<f64>], w: &LossWeights) -> (f64, [f64; 9]) {
    let mut sums = [0.0; 9];
    let mut counts = [0usize; 9];
    for (o, t) in outputs.iter().zip(targets) {
        let parts = [
            softmax_ce(&o.intent_status, &t.intent_status),
            sigmoid_bce(&o.intent_value, &t.intent_value),
            sigmoid_bce(&o.requested, &t.requested),
            softmax_ce(&o.user_status, &t.user_status),
            softmax_ce(&o.carryover, &t.carryover),
            sigmoid_bce(&o.categorical, &t.categorical),
            softmax_ce(&o.start, &t.start),
            softmax_ce(&o.end, &t.end),
            sigmoid_bce(&o.cross, &t.cross),
        ];
        for (h, (s, n)) in parts.into_iter().enumerate() {
            sums[h] += s;
            counts[h] += n;
        }
    }
    let mut means = [0.0; 9];
    for h in 0..9 {
        if counts[h] > 0 {
            means[h] = sums[h] / counts[h] as f64;
        }
    }
    let l1 = w.w1 * means[0] + w.w2 * means[1];
    let l2 = means[2];
    let l3 = w.w3 * means[3] + w.w4 * means[4] + w.w5 * means[5] + w.w6 * means[6] + w.w7 * means[7] + w.w8 * means[8];
    (w.lambda1 * l1 + w.lambda2 * l2 + w.lambda3 * l3, means)
}
