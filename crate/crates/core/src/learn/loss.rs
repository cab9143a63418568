use super::autodiff::{Graph, Var};

/// Class weights proportional to `1/sqrt(freq)`, rescaled to sum to the
/// number of classes. Unseen classes start from a raw weight of 1.
pub fn class_weights(counts: &[usize]) -> Vec<f64> {
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| if c == 0 { 1.0 } else { 1.0 / (c as f64).sqrt() })
        .collect();
    let total: f64 = raw.iter().sum();
    let n = counts.len() as f64;
    raw.into_iter().map(|w| w * n / total).collect()
}

/// `weight * -log softmax(logits)[target]`
pub fn weighted_ce(g: &mut Graph, logits: Var, target: usize, weight: f64) -> Var {
    let lp = g.log_softmax(logits);
    let picked = g.pick(lp, target);
    g.scale(picked, -weight)
}

/// Mean absolute error between scalar predictions and targets.
pub fn l1_mean(g: &mut Graph, predictions: &[Var], targets: &[f64]) -> Var {
    assert_eq!(predictions.len(), targets.len());
    let terms: Vec<Var> = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let t = g.constant_vec(vec![*t]);
            let d = g.sub(*p, t);
            g.abs(d)
        })
        .collect();
    let total = g.add_all(&terms).expect("non-empty batch");
    g.scale(total, 1.0 / targets.len() as f64)
}

/// Plain mean absolute error, the value-estimation objective.
pub fn loss_ove(estimates: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(estimates.len(), targets.len());
    if estimates.is_empty() {
        return 0.0;
    }
    estimates
        .iter()
        .zip(targets)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / estimates.len() as f64
}
