//! Suggestion and adjustment metrics.
//!
//! Adjustment metrics (cosine similarity, MAE) are computed over records
//! whose ground truth asks for a suggestion, since only those carry a
//! nonzero adjustment. MAE is reported in radians.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::projection::{offset_pose_clamped, view_rect_of, CameraIntrinsics, CameraPose};
use crate::scene::Labels;
use crate::sphere::sph_iou;

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

/// Ground truth and prediction for one scene. Adjustments are in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub scene_id: String,
    pub init: CameraPose,
    pub gt: Labels,
    pub pred_suggest_prob: f64,
    pub pred_suggest: bool,
    pub pred_adjust: [f64; 2],
}

impl EvalRecord {
    pub fn new(
        scene_id: impl Into<String>,
        init: CameraPose,
        gt: Labels,
        prob: f64,
        pred_adjust: [f64; 2],
        threshold: f64,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        if !(0.0..=1.0).contains(&prob) {
            return Err(invalid(format!("scene {scene_id}: probability {prob} outside [0, 1]")));
        }
        if !pred_adjust.iter().all(|v| v.is_finite()) {
            return Err(invalid(format!("scene {scene_id}: non-finite adjustment")));
        }
        Ok(Self {
            scene_id,
            init,
            gt,
            pred_suggest_prob: prob,
            pred_suggest: prob >= threshold,
            pred_adjust,
        })
    }

    pub fn gt_adjust(&self) -> [f64; 2] {
        [self.gt.d_theta, self.gt.d_phi]
    }
}

/// Area under the ROC curve as the normalized Mann–Whitney statistic, with
/// ties counted as one half. Exact: the rank sum is accumulated in integers.
pub fn roc_auc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "probabilities and labels",
            left: probs.len(),
            right: labels.len(),
        });
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(invalid("probabilities contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(invalid(format!(
            "AUC needs both classes (positives {n_pos}, negatives {n_neg})"
        )));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    // twice the rank sum of positives; a tie group over 0-based positions
    // [i, j) shares the rank (i + 1 + j) / 2
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && probs[order[j]] == probs[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u64;
        rank_sum2 += pos_in_group * (i as u64 + 1 + j as u64);
        i = j;
    }
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

fn check_pairs(what: &'static str, preds: &[[f64; 2]], gts: &[[f64; 2]]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            what,
            left: preds.len(),
            right: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput(what));
    }
    Ok(())
}

/// Mean cosine similarity. A zero prediction scores 0.
pub fn cs_metric(preds: &[[f64; 2]], gts: &[[f64; 2]]) -> Result<f64> {
    check_pairs("cosine metric inputs", preds, gts)?;
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let gg = g[0] * g[0] + g[1] * g[1];
        if gg == 0.0 {
            return Err(Error::ZeroNorm("cosine metric ground truth"));
        }
        let pp = p[0] * p[0] + p[1] * p[1];
        if pp > 0.0 {
            // sqrt(pp·gg) rather than |p||g| keeps cos(v, v) exactly 1
            sum += ((p[0] * g[0] + p[1] * g[1]) / (pp * gg).sqrt()).clamp(-1.0, 1.0);
        }
    }
    Ok(sum / preds.len() as f64)
}

/// Mean absolute error over samples and both components, inputs in degrees,
/// result in radians.
pub fn mae_metric(preds: &[[f64; 2]], gts: &[[f64; 2]]) -> Result<f64> {
    check_pairs("MAE inputs", preds, gts)?;
    let sum: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
        .sum();
    Ok((sum / (2 * preds.len()) as f64).to_radians())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IouSubset {
    Tp,
    TpFp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub tn: Vec<usize>,
    pub fn_: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp.len(),
            fp: self.fp.len(),
            tn: self.tn.len(),
            fn_: self.fn_.len(),
        }
    }
}

pub fn confusion_partition(records: &[EvalRecord]) -> Confusion {
    let mut c = Confusion::default();
    for (i, r) in records.iter().enumerate() {
        match (r.pred_suggest, r.gt.suggest) {
            (true, true) => c.tp.push(i),
            (true, false) => c.fp.push(i),
            (false, false) => c.tn.push(i),
            (false, true) => c.fn_.push(i),
        }
    }
    c
}

/// Spherical IoU between the view the prediction moves to and the view the
/// label moves to, for one record.
pub fn record_sph_iou(r: &EvalRecord, k: &CameraIntrinsics) -> f64 {
    let pred = offset_pose_clamped(&r.init, r.pred_adjust[0], r.pred_adjust[1]);
    let gt = offset_pose_clamped(&r.init, r.gt.d_theta, r.gt.d_phi);
    sph_iou(&view_rect_of(&pred, k), &view_rect_of(&gt, k))
}

/// Mean spherical IoU over the true positives, or over all predicted positives.
pub fn sph_iou_metric(records: &[EvalRecord], k: &CameraIntrinsics, subset: IouSubset) -> Result<f64> {
    let c = confusion_partition(records);
    let mut idx: Vec<usize> = c.tp.clone();
    if subset == IouSubset::TpFp {
        idx.extend(&c.fp);
        idx.sort_unstable();
    }
    if idx.is_empty() {
        let counts = c.counts();
        return Err(invalid(format!(
            "no records in the {subset:?} subset (tp {}, fp {}, tn {}, fn {})",
            counts.tp, counts.fp, counts.tn, counts.fn_
        )));
    }
    let sum: f64 = idx.iter().map(|&i| record_sph_iou(&records[i], k)).sum();
    Ok(sum / idx.len() as f64)
}

/// Evaluation summary. Metrics that are undefined for the given records
/// (for example AUC with a single class) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub auc: Option<f64>,
    pub cs: Option<f64>,
    pub mae_rad: Option<f64>,
    pub sphiou_tp: Option<f64>,
    pub sphiou_tp_fp: Option<f64>,
    pub confusion: ConfusionCounts,
    pub count: usize,
    pub decision_threshold: f64,
}

pub fn evaluate(records: &[EvalRecord], k: &CameraIntrinsics, threshold: f64) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyInput("evaluation records"));
    }
    let ids: BTreeSet<&str> = records.iter().map(|r| r.scene_id.as_str()).collect();
    if ids.len() != records.len() {
        return Err(invalid("duplicate scene ids in evaluation records"));
    }
    let probs: Vec<f64> = records.iter().map(|r| r.pred_suggest_prob).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.gt.suggest).collect();
    let positives: Vec<&EvalRecord> = records.iter().filter(|r| r.gt.suggest).collect();
    let preds: Vec<[f64; 2]> = positives.iter().map(|r| r.pred_adjust).collect();
    let gts: Vec<[f64; 2]> = positives.iter().map(|r| r.gt_adjust()).collect();
    let (cs, mae) = if positives.is_empty() {
        (None, None)
    } else {
        (Some(cs_metric(&preds, &gts)?), Some(mae_metric(&preds, &gts)?))
    };
    Ok(Report {
        auc: roc_auc(&probs, &labels).ok(),
        cs,
        mae_rad: mae,
        sphiou_tp: sph_iou_metric(records, k, IouSubset::Tp).ok(),
        sphiou_tp_fp: sph_iou_metric(records, k, IouSubset::TpFp).ok(),
        confusion: confusion_partition(records).counts(),
        count: records.len(),
        decision_threshold: threshold,
    })
}
