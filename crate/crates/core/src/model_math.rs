//! Forward values and analytic gradients for the composition-scoring and
//! camera-adjustment objectives.
//!
//! Nothing here trains anything: embeddings, expert outputs and predictions
//! come in as plain numbers and the kernels return losses together with
//! gradients with respect to the predictions.

use crate::error::{invalid, Error, Result};

/// Numeric score attached to each of the five quality words, low to high.
pub const QUALITY_ANCHORS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const DEFAULT_TEMPERATURE: f64 = 0.07;
pub const DEFAULT_CCQA_ALPHA: f64 = 0.1;
/// Guard on `‖ŷ‖` in the norm-loss gradient.
pub const NORM_GUARD: f64 = 1e-12;
/// Predictions shorter than this are rejected by the cosine loss.
pub const MIN_COSINE_NORM: f64 = 1e-12;

/// Dense real vector with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("feature vector has non-finite components"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// `y = A x + b` with `A` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearMap {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols || bias.len() != rows {
            return Err(invalid(format!(
                "linear map {rows}x{cols} needs {} weights and {rows} biases, got {} and {}",
                rows * cols,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self { rows, cols, weights, bias })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.weights[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::LengthMismatch {
                what: "linear map input",
                left: x.len(),
                right: self.cols,
            });
        }
        Ok(self
            .weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `normalize(x + adapter(x))`.
pub fn residual_adapt(x: &FeatureVector, adapter: &LinearMap) -> Result<FeatureVector> {
    if adapter.rows != adapter.cols {
        return Err(invalid("residual adapter must map a space onto itself"));
    }
    let delta = adapter.apply(x.as_slice())?;
    let sum: Vec<f64> = x.0.iter().zip(&delta).map(|(a, b)| a + b).collect();
    let n = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return Err(Error::ZeroNorm("residual adaptation"));
    }
    FeatureVector::new(sum.into_iter().map(|v| v / n).collect())
}

/// Adapted text embeddings of the five quality prompts, worst to best.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    prompts: [FeatureVector; 5],
}

impl PromptSet {
    pub fn new(prompts: [FeatureVector; 5]) -> Result<Self> {
        let d = prompts[0].dim();
        if prompts.iter().any(|p| p.dim() != d) {
            return Err(invalid("all prompts must share one dimension"));
        }
        Ok(Self { prompts })
    }

    pub fn dim(&self) -> usize {
        self.prompts[0].dim()
    }

    pub fn prompts(&self) -> &[FeatureVector; 5] {
        &self.prompts
    }
}

/// Softmax over the prompt similarities `img · T′ᵢ / σ`.
pub fn quality_weights(img: &FeatureVector, prompts: &PromptSet, sigma: f64) -> Result<[f64; 5]> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("temperature {sigma} must be positive")));
    }
    if img.dim() != prompts.dim() {
        return Err(Error::LengthMismatch {
            what: "image and prompt embeddings",
            left: img.dim(),
            right: prompts.dim(),
        });
    }
    let logits: Vec<f64> = prompts.prompts.iter().map(|t| img.dot(t) / sigma).collect();
    let w = softmax(&logits);
    Ok([w[0], w[1], w[2], w[3], w[4]])
}

/// Expected quality anchor `q = Σ Wᵢ Cᵢ`.
pub fn weighted_score(weights: &[f64; 5]) -> f64 {
    weights.iter().zip(QUALITY_ANCHORS).map(|(w, c)| w * c).sum()
}

/// `F_t = Σ Wᵢ T′ᵢ`.
pub fn weighted_text_features(weights: &[f64; 5], prompts: &PromptSet) -> FeatureVector {
    let mut out = vec![0.0; prompts.dim()];
    for (w, t) in weights.iter().zip(&prompts.prompts) {
        for (o, v) in out.iter_mut().zip(t.as_slice()) {
            *o += w * v;
        }
    }
    FeatureVector(out)
}

/// A loss value with its gradient with respect to the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<G> {
    pub value: f64,
    pub grad: G,
}

pub type ScalarLoss = LossGrad<Vec<f64>>;
pub type PairLoss = LossGrad<Vec<[f64; 2]>>;

fn check_lengths(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { what, left: a, right: b });
    }
    Ok(())
}

/// Mean squared error.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<ScalarLoss> {
    check_lengths("mse predictions and targets", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("mse batch"));
    }
    let n = pred.len() as f64;
    let value = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok(LossGrad { value, grad })
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Pairwise ranking hinge over unordered pairs `i < j`, averaged over
/// `N(N−1)/2`. Pairs with tied targets contribute nothing and the
/// subgradient at the hinge kink is zero.
pub fn loss_rank(pred: &[f64], target: &[f64]) -> Result<ScalarLoss> {
    check_lengths("rank predictions and targets", pred.len(), target.len())?;
    let n = pred.len();
    if n < 2 {
        return Err(invalid("ranking loss needs at least two samples"));
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let s = sign(target[i] - target[j]);
            let margin = -s * ((pred[i] - pred[j]) - (target[i] - target[j]));
            if margin > 0.0 {
                value += margin;
                grad[i] -= s;
                grad[j] += s;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= pairs);
    Ok(LossGrad {
        value: value / pairs,
        grad,
    })
}

/// Mean squared error between the expected quality `q` of each sample and
/// its target, with the gradient taken with respect to the raw prompt
/// similarities. `sims[n]` holds the five `img · T′ᵢ` values of sample `n`.
pub fn loss_quality(sims: &[[f64; 5]], target: &[f64], sigma: f64) -> Result<LossGrad<Vec<[f64; 5]>>> {
    if !(sigma > 0.0) {
        return Err(invalid(format!("temperature {sigma} must be positive")));
    }
    check_lengths("quality similarities and targets", sims.len(), target.len())?;
    let weights: Vec<[f64; 5]> = sims
        .iter()
        .map(|s| {
            let w = softmax(&s.map(|v| v / sigma));
            [w[0], w[1], w[2], w[3], w[4]]
        })
        .collect();
    let q: Vec<f64> = weights.iter().map(weighted_score).collect();
    let mse = loss_mse(&q, target)?;
    // ∂q/∂sᵢ = Wᵢ (Cᵢ − q) / σ
    let grad = weights
        .iter()
        .zip(&q)
        .zip(&mse.grad)
        .map(|((w, &qn), &g)| std::array::from_fn(|i| g * w[i] * (QUALITY_ANCHORS[i] - qn) / sigma))
        .collect();
    Ok(LossGrad { value: mse.value, grad })
}

/// `L1 + L2 + α·L3`.
pub fn loss_ccqa_total(l1: f64, l2: f64, l3: f64, alpha: f64) -> f64 {
    l1 + l2 + alpha * l3
}

/// Experts and per-task gates of a multi-gate mixture of experts. Both are
/// linear maps so the kernels can be checked without a training framework.
#[derive(Debug, Clone, PartialEq)]
pub struct GateConfig {
    experts: Vec<LinearMap>,
    gates: Vec<LinearMap>,
}

impl GateConfig {
    /// `experts`: M maps `R^D → R^D`; `gates`: one map `R^D → R^M` per task.
    pub fn new(experts: Vec<LinearMap>, gates: Vec<LinearMap>) -> Result<Self> {
        let m = experts.len();
        if m == 0 {
            return Err(invalid("need at least one expert"));
        }
        if gates.is_empty() {
            return Err(invalid("need at least one task gate"));
        }
        let d = experts[0].cols;
        if experts.iter().any(|e| e.rows != d || e.cols != d) {
            return Err(invalid("experts must all map R^D to R^D"));
        }
        if gates.iter().any(|g| g.rows != m || g.cols != d) {
            return Err(invalid("each gate must map R^D to R^M"));
        }
        Ok(Self { experts, gates })
    }

    pub fn expert_count(&self) -> usize {
        self.experts.len()
    }

    pub fn task_count(&self) -> usize {
        self.gates.len()
    }

    pub fn input_dim(&self) -> usize {
        self.experts[0].cols
    }

    pub fn expert_outputs(&self, x: &FeatureVector) -> Result<Vec<FeatureVector>> {
        self.experts
            .iter()
            .map(|e| Ok(FeatureVector(e.apply(x.as_slice())?)))
            .collect()
    }
}

/// `softmax(FFN_task(x))`.
pub fn gate_weights(x: &FeatureVector, cfg: &GateConfig, task: usize) -> Result<Vec<f64>> {
    let gate = cfg
        .gates
        .get(task)
        .ok_or_else(|| invalid(format!("task {task} has no gate ({} tasks)", cfg.gates.len())))?;
    Ok(softmax(&gate.apply(x.as_slice())?))
}

/// `f = Σᵢ gatesᵢ · Eᵢ(x)`.
pub fn moe_mix(gates: &[f64], expert_outputs: &[FeatureVector]) -> Result<FeatureVector> {
    check_lengths("gate weights and experts", gates.len(), expert_outputs.len())?;
    let first = expert_outputs.first().ok_or(Error::EmptyInput("expert outputs"))?;
    let d = first.dim();
    if expert_outputs.iter().any(|e| e.dim() != d) {
        return Err(invalid("expert outputs differ in dimension"));
    }
    if expert_outputs.len() == 1 {
        return Ok(first.clone());
    }
    let mut out = vec![0.0; d];
    for (g, e) in gates.iter().zip(expert_outputs) {
        for (o, v) in out.iter_mut().zip(e.as_slice()) {
            *o += g * v;
        }
    }
    Ok(FeatureVector(out))
}

/// Mean two-class softmax cross-entropy. Gradient is `(softmax − onehot) / N`.
pub fn loss_suggest(logits: &[[f64; 2]], labels: &[bool]) -> Result<PairLoss> {
    check_lengths("suggestion logits and labels", logits.len(), labels.len())?;
    if logits.is_empty() {
        return Err(Error::EmptyInput("suggestion batch"));
    }
    let n = logits.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (l, &y) in logits.iter().zip(labels) {
        let k = y as usize;
        let max = l[0].max(l[1]);
        let lse = max + ((l[0] - max).exp() + (l[1] - max).exp()).ln();
        value += lse - l[k];
        let p = [(l[0] - lse).exp(), (l[1] - lse).exp()];
        let mut g = [p[0] / n, p[1] / n];
        g[k] -= 1.0 / n;
        grad.push(g);
    }
    Ok(LossGrad { value: value / n, grad })
}

fn norm2(v: &[f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// `1 − mean cos(ŷ, y)`.
pub fn loss_cs(pred: &[[f64; 2]], target: &[[f64; 2]]) -> Result<PairLoss> {
    check_lengths("cosine predictions and targets", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("cosine batch"));
    }
    let n = pred.len() as f64;
    let mut cos_sum = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let (np, nt) = (norm2(p), norm2(t));
        if !(nt > 0.0) {
            return Err(Error::ZeroNorm("cosine loss target"));
        }
        if !(np >= MIN_COSINE_NORM) {
            return Err(Error::ZeroNorm("cosine loss prediction"));
        }
        let dot = p[0] * t[0] + p[1] * t[1];
        let cos = dot / (np * nt);
        cos_sum += cos;
        // ∂cos/∂p = t / (|p||t|) − cos · p / |p|²
        let dcos = [
            t[0] / (np * nt) - cos * p[0] / (np * np),
            t[1] / (np * nt) - cos * p[1] / (np * np),
        ];
        grad.push([-dcos[0] / n, -dcos[1] / n]);
    }
    Ok(LossGrad {
        value: 1.0 - cos_sum / n,
        grad,
    })
}

/// Mean squared difference of Euclidean norms.
pub fn loss_norm(pred: &[[f64; 2]], target: &[[f64; 2]]) -> Result<PairLoss> {
    check_lengths("norm predictions and targets", pred.len(), target.len())?;
    if pred.is_empty() {
        return Err(Error::EmptyInput("norm batch"));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let (np, nt) = (norm2(p), norm2(t));
        let diff = np - nt;
        value += diff * diff;
        let scale = 2.0 * diff / (n * np.max(NORM_GUARD));
        grad.push([scale * p[0], scale * p[1]]);
    }
    Ok(LossGrad { value: value / n, grad })
}

/// One batch of camera-adjustment model outputs and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentBatch {
    pub suggest_logits: Vec<[f64; 2]>,
    pub suggest_labels: Vec<bool>,
    pub pred_adjust: Vec<[f64; 2]>,
    pub target_adjust: Vec<[f64; 2]>,
}

impl AdjustmentBatch {
    pub fn validate(&self) -> Result<()> {
        let n = self.suggest_logits.len();
        check_lengths("suggestion labels", self.suggest_labels.len(), n)?;
        check_lengths("adjustment predictions", self.pred_adjust.len(), n)?;
        check_lengths("adjustment targets", self.target_adjust.len(), n)?;
        for (i, (&y, t)) in self.suggest_labels.iter().zip(&self.target_adjust).enumerate() {
            if !y && (t[0] != 0.0 || t[1] != 0.0) {
                return Err(invalid(format!("sample {i}: no suggestion but nonzero adjustment target")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpamLoss {
    pub value: f64,
    pub suggest: f64,
    pub cosine: f64,
    pub norm: f64,
    pub grad_logits: Vec<[f64; 2]>,
    pub grad_adjust: Vec<[f64; 2]>,
}

/// Suggestion cross-entropy over the whole batch plus the adjustment loss
/// over the samples labeled for a suggestion only. The adjustment means run
/// over that subset; samples outside it get an exactly zero adjustment
/// gradient.
pub fn loss_cpam_total(batch: &AdjustmentBatch) -> Result<CpamLoss> {
    batch.validate()?;
    let suggest = loss_suggest(&batch.suggest_logits, &batch.suggest_labels)?;
    let positives: Vec<usize> = (0..batch.suggest_labels.len())
        .filter(|&i| batch.suggest_labels[i])
        .collect();
    let mut grad_adjust = vec![[0.0, 0.0]; batch.pred_adjust.len()];
    let (mut cosine, mut norm) = (0.0, 0.0);
    if !positives.is_empty() {
        let pred: Vec<[f64; 2]> = positives.iter().map(|&i| batch.pred_adjust[i]).collect();
        let target: Vec<[f64; 2]> = positives.iter().map(|&i| batch.target_adjust[i]).collect();
        let cs = loss_cs(&pred, &target)?;
        let nl = loss_norm(&pred, &target)?;
        cosine = cs.value;
        norm = nl.value;
        for (k, &i) in positives.iter().enumerate() {
            grad_adjust[i] = [cs.grad[k][0] + nl.grad[k][0], cs.grad[k][1] + nl.grad[k][1]];
        }
    }
    Ok(CpamLoss {
        value: suggest.value + cosine + norm,
        suggest: suggest.value,
        cosine,
        norm,
        grad_logits: suggest.grad,
        grad_adjust,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn residual_adapt_zero_and_identity() {
        let x = fv(&[3.0, 4.0]);
        let y = residual_adapt(&x, &LinearMap::zeros(2, 2)).unwrap();
        assert_eq!(y.as_slice(), &[0.6, 0.8]);
        let y = residual_adapt(&x, &LinearMap::identity(2)).unwrap();
        assert_abs_diff_eq!(y.as_slice()[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(y.as_slice()[1], 0.8, epsilon = 1e-15);
        let neg = LinearMap::new(2, 2, vec![-1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(residual_adapt(&x, &neg), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn feature_vector_validation() {
        assert!(FeatureVector::new(vec![]).is_err());
        assert!(FeatureVector::new(vec![f64::NAN]).is_err());
        assert!(LinearMap::new(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
    }

    fn axis_prompts() -> PromptSet {
        PromptSet::new(std::array::from_fn(|i| {
            let mut v = vec![0.0; 5];
            v[i] = 1.0;
            fv(&v)
        }))
        .unwrap()
    }

    #[test]
    fn quality_weights_cases() {
        let prompts = axis_prompts();
        let img = fv(&[0.2; 5]);
        let w = quality_weights(&img, &prompts, 0.07).unwrap();
        for wi in w {
            assert_abs_diff_eq!(wi, 0.2, epsilon = 1e-15);
        }
        let img = fv(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let w = quality_weights(&img, &prompts, 1e-6).unwrap();
        assert_eq!(w[4], 1.0);
        assert!(w[..4].iter().all(|&v| v < 1e-300));
        assert!(quality_weights(&img, &prompts, 0.0).is_err());
        assert!(quality_weights(&fv(&[1.0]), &prompts, 0.1).is_err());
    }

    #[test]
    fn weighted_score_cases() {
        assert_eq!(weighted_score(&[0.2; 5]), 3.0);
        assert_eq!(weighted_score(&[0.0, 0.0, 0.0, 0.0, 1.0]), 5.0);
        assert_eq!(weighted_score(&[0.5, 0.0, 0.0, 0.0, 0.5]), 3.0);
    }

    #[test]
    fn weighted_text_features_cases() {
        let prompts = PromptSet::new(std::array::from_fn(|i| fv(&[i as f64, 1.0, -(i as f64)]))).unwrap();
        let f = weighted_text_features(&[0.0, 0.0, 1.0, 0.0, 0.0], &prompts);
        assert_eq!(f.as_slice(), prompts.prompts()[2].as_slice());
        let f = weighted_text_features(&[0.2; 5], &prompts);
        assert_abs_diff_eq!(f.as_slice()[0], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.as_slice()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mse_and_rank_examples() {
        let l = loss_mse(&[3.0], &[1.0]).unwrap();
        assert_eq!((l.value, l.grad), (4.0, vec![4.0]));
        assert_eq!(loss_mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert!(loss_mse(&[], &[]).is_err());

        assert_eq!(loss_rank(&[2.0, 1.0], &[1.0, 2.0]).unwrap().value, 2.0);
        assert_eq!(loss_rank(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap().value, 0.0);
        assert_eq!(loss_rank(&[6.0, 7.0, 8.0], &[1.0, 2.0, 3.0]).unwrap().value, 0.0);
        assert_eq!(loss_rank(&[5.0, 1.0], &[2.0, 2.0]).unwrap().value, 0.0);
        assert!(loss_rank(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ccqa_total() {
        assert_eq!(loss_ccqa_total(0.0, 0.0, 0.0, 0.1), 0.0);
        assert_abs_diff_eq!(loss_ccqa_total(1.0, 1.0, 1.0, DEFAULT_CCQA_ALPHA), 2.1, epsilon = 1e-15);
        let a = loss_ccqa_total(0.3, 0.2, 1.0, 0.1);
        let b = loss_ccqa_total(0.3, 0.2, 2.0, 0.1);
        assert_abs_diff_eq!(b - a, 0.1, epsilon = 1e-15);
    }

    #[test]
    fn gates_and_mixing() {
        let x = fv(&[0.3, -0.7]);
        let cfg = GateConfig::new(vec![LinearMap::identity(2)], vec![LinearMap::zeros(1, 2)]).unwrap();
        assert_eq!(gate_weights(&x, &cfg, 0).unwrap(), vec![1.0]);
        let outs = cfg.expert_outputs(&x).unwrap();
        assert_eq!(moe_mix(&[1.0], &outs).unwrap(), x);

        let cfg = GateConfig::new(
            vec![LinearMap::identity(2), LinearMap::zeros(2, 2), LinearMap::identity(2)],
            vec![LinearMap::zeros(3, 2), LinearMap::zeros(3, 2)],
        )
        .unwrap();
        for g in gate_weights(&x, &cfg, 1).unwrap() {
            assert_abs_diff_eq!(g, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert!(gate_weights(&x, &cfg, 2).is_err());
        let same = vec![x.clone(), x.clone(), x.clone()];
        let mixed = moe_mix(&[0.2, 0.5, 0.3], &same).unwrap();
        assert_abs_diff_eq!(mixed.as_slice()[0], 0.3, epsilon = 1e-15);
        assert!(GateConfig::new(vec![LinearMap::identity(2)], vec![LinearMap::zeros(2, 2)]).is_err());
    }

    #[test]
    fn suggest_loss_cases() {
        let l = loss_suggest(&[[10.0, -10.0], [-10.0, 10.0]], &[false, true]).unwrap();
        assert!(l.value < 1e-8);
        let l = loss_suggest(&[[0.0, 0.0]; 3], &[true, false, true]).unwrap();
        assert_abs_diff_eq!(l.value, std::f64::consts::LN_2, epsilon = 1e-15);
    }

    #[test]
    fn cosine_and_norm_cases() {
        let t = [[3.0, -1.0], [0.5, 2.0]];
        assert_abs_diff_eq!(loss_cs(&t, &t).unwrap().value, 0.0, epsilon = 1e-15);
        let neg = t.map(|v| [-v[0], -v[1]]);
        assert_abs_diff_eq!(loss_cs(&neg, &t).unwrap().value, 2.0, epsilon = 1e-15);
        let scaled = [[6.0, -2.0], [0.05, 0.2]];
        assert_abs_diff_eq!(loss_cs(&scaled, &t).unwrap().value, 0.0, epsilon = 1e-15);
        assert!(loss_cs(&[[0.0, 0.0]], &[[1.0, 0.0]]).is_err());
        assert!(loss_cs(&[[1.0, 0.0]], &[[0.0, 0.0]]).is_err());

        assert_eq!(loss_norm(&[[3.0, 4.0]], &[[0.0, 1.0]]).unwrap().value, 16.0);
        assert_abs_diff_eq!(loss_norm(&[[0.0, 5.0]], &[[-3.0, 4.0]]).unwrap().value, 0.0, epsilon = 1e-15);
        let at_origin = loss_norm(&[[0.0, 0.0]], &[[1.0, 0.0]]).unwrap();
        assert_eq!(at_origin.grad, vec![[0.0, 0.0]]);
    }

    fn batch(labels: &[bool]) -> AdjustmentBatch {
        AdjustmentBatch {
            suggest_logits: labels.iter().enumerate().map(|(i, _)| [0.1 * i as f64, -0.2]).collect(),
            suggest_labels: labels.to_vec(),
            pred_adjust: labels.iter().enumerate().map(|(i, _)| [1.0 + i as f64, -2.0]).collect(),
            target_adjust: labels
                .iter()
                .map(|&y| if y { [5.0, -5.0] } else { [0.0, 0.0] })
                .collect(),
        }
    }

    #[test]
    fn cpam_gating() {
        let b = batch(&[false, false, false]);
        let l = loss_cpam_total(&b).unwrap();
        assert_eq!(l.value, loss_suggest(&b.suggest_logits, &b.suggest_labels).unwrap().value);
        assert!(l.grad_adjust.iter().all(|g| g[0].to_bits() == 0 && g[1].to_bits() == 0));

        let b = batch(&[true, true]);
        let l = loss_cpam_total(&b).unwrap();
        let expected = loss_suggest(&b.suggest_logits, &b.suggest_labels).unwrap().value
            + loss_cs(&b.pred_adjust, &b.target_adjust).unwrap().value
            + loss_norm(&b.pred_adjust, &b.target_adjust).unwrap().value;
        assert_abs_diff_eq!(l.value, expected, epsilon = 1e-15);

        let mut bad = batch(&[false]);
        bad.target_adjust[0] = [1.0, 0.0];
        assert!(loss_cpam_total(&bad).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_simplex_point(logits in prop::collection::vec(-50.0..50.0f64, 1..12)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn score_moves_up_with_mass(raw in prop::array::uniform5(0.01..1.0f64), from in 0usize..4, shift in 0.0..1.0f64) {
            let total: f64 = raw.iter().sum();
            let w: [f64; 5] = raw.map(|v| v / total);
            let q = weighted_score(&w);
            prop_assert!((1.0..=5.0).contains(&q));
            let mut moved = w;
            let amount = w[from] * shift;
            moved[from] -= amount;
            moved[from + 1] += amount;
            prop_assert!(weighted_score(&moved) >= q - 1e-15);
        }

        #[test]
        fn rank_loss_shift_invariant(pred in prop::collection::vec(-5.0..5.0f64, 2..10), c in -100.0..100.0f64) {
            let target: Vec<f64> = pred.iter().enumerate().map(|(i, p)| (p * 1.7 + i as f64).sin()).collect();
            let shifted: Vec<f64> = pred.iter().map(|p| p + c).collect();
            let a = loss_rank(&pred, &target).unwrap().value;
            let b = loss_rank(&shifted, &target).unwrap().value;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn cosine_loss_scale_invariant(p in prop::array::uniform2(-5.0..5.0f64), t in prop::array::uniform2(-5.0..5.0f64), s in 0.01..100.0f64) {
            prop_assume!(p[0].hypot(p[1]) > 1e-3 && t[0].hypot(t[1]) > 1e-3);
            let a = loss_cs(&[p], &[t]).unwrap().value;
            let b = loss_cs(&[[p[0] * s, p[1] * s]], &[t]).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn mixing_is_convex(g in prop::collection::vec(0.01..1.0f64, 3), e in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 3)) {
            let total: f64 = g.iter().sum();
            let gates: Vec<f64> = g.iter().map(|v| v / total).collect();
            let experts: Vec<FeatureVector> = e.iter().map(|v| fv(v)).collect();
            let f = moe_mix(&gates, &experts).unwrap();
            for k in 0..3 {
                let lo = e.iter().map(|v| v[k]).fold(f64::INFINITY, f64::min);
                let hi = e.iter().map(|v| v[k]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(f.as_slice()[k] >= lo - 1e-12 && f.as_slice()[k] <= hi + 1e-12);
            }
        }

        #[test]
        fn text_features_are_linear(a in 0.0..1.0f64, w1 in prop::array::uniform5(0.0..1.0f64), w2 in prop::array::uniform5(0.0..1.0f64)) {
            let prompts = PromptSet::new(std::array::from_fn(|i| fv(&[i as f64 * 0.3, 1.0 - i as f64, 0.5]))).unwrap();
            let mix: [f64; 5] = std::array::from_fn(|i| a * w1[i] + (1.0 - a) * w2[i]);
            let lhs = weighted_text_features(&mix, &prompts);
            let f1 = weighted_text_features(&w1, &prompts);
            let f2 = weighted_text_features(&w2, &prompts);
            for k in 0..3 {
                let rhs = a * f1.as_slice()[k] + (1.0 - a) * f2.as_slice()[k];
                prop_assert!((lhs.as_slice()[k] - rhs).abs() < 1e-12);
            }
        }
    }
}
