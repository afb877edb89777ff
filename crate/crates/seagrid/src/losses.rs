//! Training losses: class-weighted categorical cross entropy and the
//! NT-Xent contrastive loss, each returning both the value and the exact
//! gradient with respect to its inputs.

use crate::error::{Error, Result};

/// Per-class weights for the categorical cross entropy. All entries must
/// be positive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        ClassWeights(vec![1.0; num_classes])
    }

    /// The four-class weighting used for the seagrass morphotypes
    /// (Background, Ferny, Rounded, Strappy).
    pub fn seagrass_default() -> Self {
        ClassWeights(vec![1.0, 1.5, 1.2, 1.2])
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.0.len() != num_classes {
            return Err(Error::data(format!(
                "class weights have {} entries but there are {} classes",
                self.0.len(),
                num_classes
            )));
        }
        if self.0.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::data("class weights must be positive and finite"));
        }
        Ok(())
    }
}

/// Softmax temperature for the contrastive loss.
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// Numerically stabilized softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Stabilized log-softmax; never computes `log(softmax(x))` directly.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits
        .iter()
        .map(|&l| (l - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    logits.iter().map(|&l| l - log_sum).collect()
}

/// Class-weighted cross entropy between `logits` and a single target class.
///
/// Loss is `-w_t * log softmax(logits)_t`; the gradient with respect to the
/// logits is `w_t * (softmax(logits) - onehot(t))`, whose components sum
/// to zero.
pub fn weighted_ce(
    logits: &[f64],
    target: usize,
    weights: &ClassWeights,
) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if target >= c {
        return Err(Error::data(format!(
            "target class {target} out of range for {c} logits"
        )));
    }
    weights.validate(c)?;
    let w = weights.0[target];
    let log_p = log_softmax(logits);
    let loss = -w * log_p[target];
    let mut grad = softmax(logits);
    for (k, g) in grad.iter_mut().enumerate() {
        let onehot = if k == target { 1.0 } else { 0.0 };
        *g = w * (*g - onehot);
    }
    Ok((loss, grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// NT-Xent contrastive loss over a batch of `2B` feature rows where rows
/// `(2k, 2k+1)` form the positive pairs.
///
/// For each anchor `i` with positive partner `j`, the per-anchor loss is
/// `-log( exp(sim(i,j)/tau) / sum_{k != i} exp(sim(i,k)/tau) )` with `sim`
/// the cosine similarity; the batch loss is the arithmetic mean over all
/// `2B` anchors. Returns the loss and its gradient with respect to every
/// input row. A batch of one pair has a single-term denominator and the
/// loss is exactly zero.
pub fn nt_xent(batch: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = batch.len();
    if n < 2 || n % 2 != 0 {
        return Err(Error::data(format!(
            "nt_xent needs an even batch of at least 2 rows, got {n}"
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::data("temperature must be positive"));
    }
    let dim = batch[0].len();
    let mut norms = Vec::with_capacity(n);
    for (i, row) in batch.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::data("nt_xent rows must share one dimension"));
        }
        let nm = norm(row);
        if nm <= 0.0 || !nm.is_finite() {
            return Err(Error::numeric(format!("zero-norm feature at row {i}")));
        }
        norms.push(nm);
    }
    // Unit rows and the full cosine similarity matrix.
    let unit: Vec<Vec<f64>> = batch
        .iter()
        .zip(&norms)
        .map(|(row, &nm)| row.iter().map(|x| x / nm).collect())
        .collect();
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in (i + 1)..n {
            let s: f64 = unit[i].iter().zip(&unit[k]).map(|(a, b)| a * b).sum();
            sim[i][k] = s;
            sim[k][i] = s;
        }
    }

    // d_sim[i][k] accumulates dL/d sim(i,k) over both anchor directions.
    let mut loss = 0.0;
    let mut d_sim = vec![vec![0.0; n]; n];
    let inv = 1.0 / (tau * n as f64);
    for i in 0..n {
        let j = i ^ 1; // positive partner under the interleaved layout
        let mut max = f64::NEG_INFINITY;
        for k in 0..n {
            if k != i {
                max = max.max(sim[i][k] / tau);
            }
        }
        let mut denom = 0.0;
        for k in 0..n {
            if k != i {
                denom += (sim[i][k] / tau - max).exp();
            }
        }
        let log_denom = denom.ln() + max;
        loss += log_denom - sim[i][j] / tau;
        for k in 0..n {
            if k != i {
                let p = (sim[i][k] / tau - max).exp() / denom;
                d_sim[i][k] += p * inv;
            }
        }
        d_sim[i][j] -= inv;
    }
    loss /= n as f64;

    // Backpropagate through the cosine: for s = u_i . u_k,
    // ds/dv_i = (u_k - s u_i) / |v_i| and symmetrically for v_k.
    let mut grad = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for k in 0..n {
            if k == i {
                continue;
            }
            let g = d_sim[i][k];
            if g == 0.0 {
                continue;
            }
            let s = sim[i][k];
            for d in 0..dim {
                grad[i][d] += g * (unit[k][d] - s * unit[i][d]) / norms[i];
                grad[k][d] += g * (unit[i][d] - s * unit[k][d]) / norms[k];
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0, 0.0, 0.0, 0.0]);
        for &x in &p {
            assert_close(x, 0.25, 1e-15);
        }
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.5]);
        let b = softmax(&[0.3 + 7.0, -1.2 + 7.0, 2.5 + 7.0]);
        for (x, y) in a.iter().zip(&b) {
            assert_close(*x, *y, 1e-12);
        }
    }

    #[test]
    fn softmax_direct_values() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert_close(p[0], 0.09003057, 1e-8);
        assert_close(p[1], 0.24472847, 1e-8);
        assert_close(p[2], 0.66524096, 1e-8);
        assert_close(p.iter().sum::<f64>(), 1.0, 1e-12);
    }

    #[test]
    fn weighted_ce_uniform_logits_closed_form() {
        // Uniform logits make the softmax 1/C, so the loss is w_t * ln C.
        let w = ClassWeights::seagrass_default();
        let (loss, grad) = weighted_ce(&[0.0; 4], 1, &w).unwrap();
        assert_close(loss, 1.5 * 4.0_f64.ln(), 1e-12);
        assert_close(grad.iter().sum::<f64>(), 0.0, 1e-12);
    }

    #[test]
    fn weighted_ce_confident_correct_limit() {
        let w = ClassWeights::uniform(3);
        let (loss, _) = weighted_ce(&[50.0, 0.0, 0.0], 0, &w).unwrap();
        assert!(loss < 1e-12, "confident-correct loss should vanish: {loss}");
    }

    #[test]
    fn weighted_ce_matches_unweighted_identity() {
        let logits = [0.7, -0.3, 1.9];
        let w = ClassWeights::uniform(3);
        let (loss, _) = weighted_ce(&logits, 2, &w).unwrap();
        assert_close(loss, -log_softmax(&logits)[2], 1e-14);
    }

    #[test]
    fn weighted_ce_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = ClassWeights(vec![1.0, 1.5, 1.2, 1.2]);
        let eps = 1e-6;
        for _ in 0..100 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let target = rng.random_range(0..4);
            let (_, grad) = weighted_ce(&logits, target, &w).unwrap();
            for k in 0..4 {
                let mut lp = logits.clone();
                let mut lm = logits.clone();
                lp[k] += eps;
                lm[k] -= eps;
                let fd = (weighted_ce(&lp, target, &w).unwrap().0
                    - weighted_ce(&lm, target, &w).unwrap().0)
                    / (2.0 * eps);
                let rel = (grad[k] - fd).abs() / (grad[k].abs() + 1e-8);
                assert!(rel < 1e-6, "rel err {rel} at component {k}");
            }
        }
    }

    #[test]
    fn weighted_ce_rejects_bad_target() {
        assert!(weighted_ce(&[0.0, 0.0], 2, &ClassWeights::uniform(2)).is_err());
    }

    /// Brute-force reference: literal per-anchor double loop, no
    /// stabilization, plain exp/sum/log.
    fn nt_xent_brute(batch: &[Vec<f64>], tau: f64) -> f64 {
        let n = batch.len();
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            dot / (norm(a) * norm(b))
        };
        let mut total = 0.0;
        for i in 0..n {
            let j = i ^ 1;
            let mut denom = 0.0;
            for k in 0..n {
                if k != i {
                    denom += (cos(&batch[i], &batch[k]) / tau).exp();
                }
            }
            total += -((cos(&batch[i], &batch[j]) / tau).exp() / denom).ln();
        }
        total / n as f64
    }

    fn random_batch(rng: &mut ChaCha8Rng, pairs: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..2 * pairs)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn nt_xent_single_pair_is_zero() {
        let batch = vec![vec![1.0, 2.0], vec![-0.5, 0.25]];
        let (loss, _) = nt_xent(&batch, 0.07).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn nt_xent_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pairs in 1..=8 {
            let batch = random_batch(&mut rng, pairs, 5);
            let (loss, _) = nt_xent(&batch, 0.07).unwrap();
            assert_close(loss, nt_xent_brute(&batch, 0.07), 1e-10);
        }
    }

    #[test]
    fn nt_xent_row_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut batch = random_batch(&mut rng, 3, 4);
        let (base, _) = nt_xent(&batch, 0.07).unwrap();
        for x in batch[2].iter_mut() {
            *x *= 3.7;
        }
        let (scaled, _) = nt_xent(&batch, 0.07).unwrap();
        assert_close(base, scaled, 1e-9);
    }

    #[test]
    fn nt_xent_gradient_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let eps = 1e-6;
        for pairs in 1..=4 {
            let batch = random_batch(&mut rng, pairs, 6);
            let (_, grad) = nt_xent(&batch, 0.07).unwrap();
            for i in 0..batch.len() {
                for d in 0..6 {
                    let mut bp = batch.clone();
                    let mut bm = batch.clone();
                    bp[i][d] += eps;
                    bm[i][d] -= eps;
                    let fd = (nt_xent(&bp, 0.07).unwrap().0 - nt_xent(&bm, 0.07).unwrap().0)
                        / (2.0 * eps);
                    let rel = (grad[i][d] - fd).abs() / (grad[i][d].abs() + 1e-8);
                    assert!(rel < 1e-4, "rel err {rel} at row {i} dim {d}");
                }
            }
        }
    }

    #[test]
    fn nt_xent_decreases_as_positive_pair_aligns() {
        // One-parameter family: rotate the second view of the first pair
        // toward its anchor; the loss must fall as alignment grows.
        let fixed = vec![
            vec![1.0, 0.0],
            vec![0.0, 0.0], // replaced per angle below
            vec![-0.3, 0.8],
            vec![0.6, -0.7],
        ];
        let mut last = f64::INFINITY;
        for step in 0..5 {
            let angle = 1.2 - 0.25 * step as f64;
            let mut batch = fixed.clone();
            batch[1] = vec![angle.cos(), angle.sin()];
            let (loss, _) = nt_xent(&batch, 0.07).unwrap();
            assert!(loss < last, "loss should fall as the pair aligns");
            last = loss;
        }
    }

    #[test]
    fn nt_xent_rejects_zero_norm_row() {
        let batch = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert!(matches!(nt_xent(&batch, 0.07), Err(Error::Numeric(_))));
    }
}
