//! Finite-difference verification of the analytic gradients in
//! [`crate::model_math`], plus the exact invariants of the gating and
//! scoring kernels.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::model_math::{
    gate_weights, loss_cpam_total, loss_cs, loss_mse, loss_norm, loss_quality, loss_rank, loss_suggest, moe_mix,
    softmax, weighted_score, AdjustmentBatch, FeatureVector, GateConfig, LinearMap, DEFAULT_TEMPERATURE,
};

pub const FD_STEP: f64 = 1e-6;
pub const GRADCHECK_TOL: f64 = 1e-5;
pub const DEFAULT_TRIALS: usize = 100;

/// `max|a − n| / max(‖a‖∞, ‖n‖∞, 1e−12)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-12, f64::max);
    diff / scale
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + FD_STEP;
            let up = f(&probe);
            probe[i] = x[i] - FD_STEP;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradRow {
    pub loss: &'static str,
    pub points: usize,
    pub max_rel_err: f64,
}

impl GradRow {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub trials: usize,
    pub gradients: Vec<GradRow>,
    pub invariants: Vec<InvariantCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.gradients.iter().all(GradRow::passed) && self.invariants.iter().all(|c| c.passed)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "gradcheck seed={} trials={} h={FD_STEP:e} tol={GRADCHECK_TOL:e}", self.seed, self.trials)?;
        writeln!(f, "{:<14} {:>7} {:>14}  result", "loss", "points", "max_rel_err")?;
        for r in &self.gradients {
            let verdict = if r.passed() { "ok" } else { "FAIL" };
            writeln!(f, "{:<14} {:>7} {:>14.3e}  {verdict}", r.loss, r.points, r.max_rel_err)?;
        }
        for c in &self.invariants {
            writeln!(f, "{:<36} {}", c.name, if c.passed { "ok" } else { "FAIL" })?;
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn pairs_to_flat(v: &[[f64; 2]]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

fn flat_to_pairs(v: &[f64]) -> Vec<[f64; 2]> {
    v.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn batch_len(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(2..=8)
}

fn vec_in(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// A 2-vector with norm in `[0.2, 3]`, kept away from the origin where the
/// norm gradient is undefined.
fn away_from_origin(rng: &mut ChaCha8Rng) -> [f64; 2] {
    let r: f64 = rng.random_range(0.2..3.0);
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    [r * a.cos(), r * a.sin()]
}

fn check_loss(rows: &mut Vec<GradRow>, loss: &'static str, trials: usize, mut point: impl FnMut() -> Result<f64>) -> Result<()> {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        worst = worst.max(point()?);
    }
    rows.push(GradRow {
        loss,
        points: trials,
        max_rel_err: worst,
    });
    Ok(())
}

/// Smallest distance of any ranking hinge argument from its kink.
fn rank_kink_distance(pred: &[f64], target: &[f64]) -> f64 {
    let mut d = f64::INFINITY;
    for i in 0..pred.len() {
        for j in i + 1..pred.len() {
            d = d.min(((pred[i] - pred[j]) - (target[i] - target[j])).abs());
        }
    }
    d
}

/// Runs every gradient and invariant check with `trials` random points per loss.
pub fn run_gradcheck(seed: u64, trials: usize) -> Result<GradcheckReport> {
    if trials == 0 {
        return Err(invalid("gradcheck needs at least one trial"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();

    check_loss(&mut rows, "mse", trials, || {
        let n = batch_len(&mut rng);
        let (p, t) = (vec_in(&mut rng, n, -3.0, 3.0), vec_in(&mut rng, n, -3.0, 3.0));
        let a = loss_mse(&p, &t)?.grad;
        let num = numeric_gradient(&p, |x| loss_mse(x, &t).unwrap().value);
        Ok(relative_error(&a, &num))
    })?;

    check_loss(&mut rows, "rank", trials, || {
        let n = batch_len(&mut rng);
        let (p, t) = loop {
            let p = vec_in(&mut rng, n, -3.0, 3.0);
            let t = vec_in(&mut rng, n, -3.0, 3.0);
            if rank_kink_distance(&p, &t) > 1e-3 {
                break (p, t);
            }
        };
        let a = loss_rank(&p, &t)?.grad;
        let num = numeric_gradient(&p, |x| loss_rank(x, &t).unwrap().value);
        Ok(relative_error(&a, &num))
    })?;

    check_loss(&mut rows, "quality", trials, || {
        let n = batch_len(&mut rng);
        let sims: Vec<[f64; 5]> = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-0.5..0.5))).collect();
        let t = vec_in(&mut rng, n, 1.0, 5.0);
        // a mild temperature keeps the softmax away from saturation
        let sigma = rng.random_range(0.2..1.0);
        let a: Vec<f64> = loss_quality(&sims, &t, sigma)?.grad.concat();
        let flat: Vec<f64> = sims.concat();
        let num = numeric_gradient(&flat, |x| {
            let s: Vec<[f64; 5]> = x.chunks_exact(5).map(|c| std::array::from_fn(|i| c[i])).collect();
            loss_quality(&s, &t, sigma).unwrap().value
        });
        Ok(relative_error(&a, &num))
    })?;

    check_loss(&mut rows, "suggest", trials, || {
        let n = batch_len(&mut rng);
        let logits: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let a = pairs_to_flat(&loss_suggest(&logits, &labels)?.grad);
        let num = numeric_gradient(&pairs_to_flat(&logits), |x| loss_suggest(&flat_to_pairs(x), &labels).unwrap().value);
        Ok(relative_error(&a, &num))
    })?;

    check_loss(&mut rows, "cs", trials, || {
        let n = batch_len(&mut rng);
        let p: Vec<[f64; 2]> = (0..n).map(|_| away_from_origin(&mut rng)).collect();
        let t: Vec<[f64; 2]> = (0..n).map(|_| away_from_origin(&mut rng)).collect();
        let a = pairs_to_flat(&loss_cs(&p, &t)?.grad);
        let num = numeric_gradient(&pairs_to_flat(&p), |x| loss_cs(&flat_to_pairs(x), &t).unwrap().value);
        Ok(relative_error(&a, &num))
    })?;

    check_loss(&mut rows, "norm", trials, || {
        let n = batch_len(&mut rng);
        let p: Vec<[f64; 2]> = (0..n).map(|_| away_from_origin(&mut rng)).collect();
        let t: Vec<[f64; 2]> = (0..n).map(|_| away_from_origin(&mut rng)).collect();
        let a = pairs_to_flat(&loss_norm(&p, &t)?.grad);
        let num = numeric_gradient(&pairs_to_flat(&p), |x| loss_norm(&flat_to_pairs(x), &t).unwrap().value);
        Ok(relative_error(&a, &num))
    })?;

    let mut gating_exact = true;
    check_loss(&mut rows, "cpam", trials, || {
        let batch = random_adjustment_batch(&mut rng, None);
        let total = loss_cpam_total(&batch)?;
        for (g, &y) in total.grad_adjust.iter().zip(&batch.suggest_labels) {
            if !y && (g[0].to_bits() != 0 || g[1].to_bits() != 0) {
                gating_exact = false;
            }
        }
        let value_with = |adjust: &[f64], logits: &[f64]| {
            let mut b = batch.clone();
            b.pred_adjust = flat_to_pairs(adjust);
            b.suggest_logits = flat_to_pairs(logits);
            loss_cpam_total(&b).unwrap().value
        };
        let logits = pairs_to_flat(&batch.suggest_logits);
        let adjust = pairs_to_flat(&batch.pred_adjust);
        let num_adjust = numeric_gradient(&adjust, |x| value_with(x, &logits));
        let num_logits = numeric_gradient(&logits, |x| value_with(&adjust, x));
        let a = [pairs_to_flat(&total.grad_adjust), pairs_to_flat(&total.grad_logits)].concat();
        let num = [num_adjust, num_logits].concat();
        Ok(relative_error(&a, &num))
    })?;

    let invariants = invariant_checks(&mut rng, trials, gating_exact)?;
    Ok(GradcheckReport {
        seed,
        trials,
        gradients: rows,
        invariants,
    })
}

/// A batch with random suggestion labels. `force` pins every label.
pub fn random_adjustment_batch(rng: &mut ChaCha8Rng, force: Option<bool>) -> AdjustmentBatch {
    let n = batch_len(rng);
    let labels: Vec<bool> = (0..n).map(|_| force.unwrap_or_else(|| rng.random())).collect();
    AdjustmentBatch {
        suggest_logits: (0..n).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect(),
        pred_adjust: (0..n).map(|_| away_from_origin(rng)).collect(),
        target_adjust: labels
            .iter()
            .map(|&y| if y { away_from_origin(rng) } else { [0.0, 0.0] })
            .collect(),
        suggest_labels: labels,
    }
}

fn invariant_checks(rng: &mut ChaCha8Rng, trials: usize, gating_exact: bool) -> Result<Vec<InvariantCheck>> {
    let mut fully_gated = true;
    for _ in 0..trials {
        let batch = random_adjustment_batch(rng, Some(false));
        let total = loss_cpam_total(&batch)?;
        let suggest = loss_suggest(&batch.suggest_logits, &batch.suggest_labels)?;
        fully_gated &= total.value == suggest.value
            && total.grad_adjust.iter().all(|g| g[0].to_bits() == 0 && g[1].to_bits() == 0);
    }

    let mut identity_mix = true;
    let mut simplex = true;
    for _ in 0..trials {
        let d = rng.random_range(1..=6);
        let x = FeatureVector::new(vec_in(rng, d, -2.0, 2.0))?;
        let expert = LinearMap::new(d, d, vec_in(rng, d * d, -1.0, 1.0), vec_in(rng, d, -1.0, 1.0))?;
        let gate = LinearMap::new(1, d, vec_in(rng, d, -1.0, 1.0), vec_in(rng, 1, -1.0, 1.0))?;
        let cfg = GateConfig::new(vec![expert], vec![gate])?;
        let g = gate_weights(&x, &cfg, 0)?;
        let outs = cfg.expert_outputs(&x)?;
        identity_mix &= g == [1.0] && moe_mix(&g, &outs)? == outs[0];

        let len = rng.random_range(1..10);
        let logits = vec_in(rng, len, -30.0, 30.0);
        let p = softmax(&logits);
        simplex &= p.iter().all(|&v| v > 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
    }

    let uniform = weighted_score(&[0.2; 5]) == 3.0;
    let equal_sims = loss_quality(&[[0.3; 5]], &[3.0], DEFAULT_TEMPERATURE)?.value == 0.0;

    Ok(vec![
        InvariantCheck {
            name: "mixed batch: masked grads bitwise 0",
            passed: gating_exact,
        },
        InvariantCheck {
            name: "fully gated batch",
            passed: fully_gated,
        },
        InvariantCheck {
            name: "uniform weights give q = 3",
            passed: uniform && equal_sims,
        },
        InvariantCheck {
            name: "single expert mixes as identity",
            passed: identity_mix,
        },
        InvariantCheck {
            name: "softmax on simplex",
            passed: simplex,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_run_passes() {
        let report = run_gradcheck(7, DEFAULT_TRIALS).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.gradients.len(), 7);
        assert!(report.gradients.iter().all(|r| r.points == DEFAULT_TRIALS));
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(run_gradcheck(3, 10).unwrap(), run_gradcheck(3, 10).unwrap());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(run_gradcheck(0, 0).is_err());
    }

    #[test]
    fn relative_error_detects_a_wrong_gradient() {
        let x = [0.3, -1.2];
        let num = numeric_gradient(&x, |v| v[0] * v[0] + 3.0 * v[1]);
        assert!(relative_error(&[0.6, 3.0], &num) < 1e-8);
        assert!(relative_error(&[0.6, 2.0], &num) > 0.1);
    }

    #[test]
    fn report_table_lists_every_loss() {
        let text = run_gradcheck(1, 2).unwrap().to_string();
        for name in ["mse", "rank", "quality", "suggest", "cs", "norm", "cpam"] {
            assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing in\n{text}");
        }
        assert!(text.ends_with("overall: PASS"));
    }
}
