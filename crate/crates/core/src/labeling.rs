//! Score-guided pseudo-labels.
//!
//! Every candidate view of a scene is scored, the scene's threshold `τ` is
//! the Top-N score among the candidates, and the initial view gets a
//! suggestion (`y_s = 1`) when its own score falls strictly below `τ`. The
//! adjustment label then points from the initial pose to the best-scoring
//! candidate.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Deserialize;

use crate::candidates::CandidateView;
use crate::error::{invalid, Error, Result};
use crate::projection::{render_view, CameraIntrinsics, CameraPose, ErpImage, ViewImage};
use crate::scene::{Labels, SceneRecord};
use crate::sphere::wrap_longitude;

pub const DEFAULT_TOP_N: f64 = 0.25;

/// Rank of the threshold score among `m` candidates.
pub fn threshold_rank(n_frac: f64, m: usize) -> usize {
    ((n_frac * m as f64).round() as usize).clamp(1, m)
}

/// The k-th highest score with `k = max(1, round(n_frac · M))`.
pub fn adaptive_threshold(scores: &[f64], n_frac: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("candidate scores"));
    }
    if !(n_frac > 0.0 && n_frac <= 1.0) {
        return Err(invalid(format!("top-N fraction {n_frac} must lie in (0, 1]")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("candidate scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok(sorted[threshold_rank(n_frac, scores.len()) - 1])
}

/// `true` (suggest an adjustment) iff `s_init < τ`.
pub fn suggestion_label(s_init: f64, tau: f64) -> bool {
    s_init < tau
}

/// Signed yaw difference `to − from` reduced to `(−180, 180]`.
pub fn shortest_arc(from_deg: f64, to_deg: f64) -> f64 {
    let d = wrap_longitude(to_deg - from_deg);
    if d == -180.0 {
        180.0
    } else {
        d
    }
}

/// Adjustment magnitudes closer than this count as equal.
pub const MAGNITUDE_TIE_TOL: f64 = 1e-9;

/// Adjustment `(Δθ, Δφ)` from `init` to the best candidate, or `(0, 0)`
/// without a suggestion. Equal top scores go to the smallest adjustment,
/// then to the earliest candidate.
pub fn adjustment_label(candidates: &[CandidateView], init: &CameraPose, suggest: bool) -> Result<(f64, f64)> {
    if !suggest {
        return Ok((0.0, 0.0));
    }
    let mut best: Option<(f64, f64, (f64, f64))> = None;
    for c in candidates {
        let score = c
            .score
            .ok_or_else(|| invalid("adjustment label needs every candidate scored"))?;
        let delta = (shortest_arc(init.theta(), c.pose.theta()), c.pose.phi() - init.phi());
        let magnitude = delta.0.hypot(delta.1);
        let better = match best {
            None => true,
            Some((bs, bm, _)) => score > bs || (score == bs && magnitude < bm - MAGNITUDE_TIE_TOL),
        };
        if better {
            best = Some((score, magnitude, delta));
        }
    }
    best.map(|(_, _, d)| d)
        .ok_or(Error::EmptyInput("candidates for a suggested adjustment"))
}

/// Labels from already-scored candidates and an initial score.
pub fn labels_from_scores(s_init: f64, candidates: &[CandidateView], init: &CameraPose, n_frac: f64) -> Result<(f64, Labels)> {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|c| c.score.ok_or_else(|| invalid("unscored candidate")))
        .collect::<Result<_>>()?;
    let tau = adaptive_threshold(&scores, n_frac)?;
    let suggest = suggestion_label(s_init, tau);
    let (d_theta, d_phi) = adjustment_label(candidates, init, suggest)?;
    Ok((tau, Labels { suggest, d_theta, d_phi }))
}

/// What a scorer gets to look at.
pub struct ScoreRequest<'a> {
    pub scene_id: &'a str,
    pub pose: CameraPose,
    /// Present when the scorer asked for rendered views.
    pub view: Option<&'a ViewImage>,
}

/// A pure composition-quality function: the same view always gets the same
/// score, higher is better.
pub trait Scorer: Send + Sync {
    fn needs_view(&self) -> bool {
        false
    }

    fn score(&self, req: &ScoreRequest<'_>) -> std::result::Result<f64, String>;
}

/// Scores poses directly with a closure; handy for planted-optimum tests.
pub struct PoseFnScorer<F>(pub F);

impl<F> Scorer for PoseFnScorer<F>
where
    F: Fn(&str, &CameraPose) -> f64 + Send + Sync,
{
    fn score(&self, req: &ScoreRequest<'_>) -> std::result::Result<f64, String> {
        Ok((self.0)(req.scene_id, &req.pose))
    }
}

/// Tolerance for matching a requested pose against a score table, degrees.
pub const LOOKUP_POSE_TOL: f64 = 1e-6;

#[derive(Debug, Deserialize)]
struct ScoreRow {
    scene_id: String,
    theta_deg: f64,
    phi_deg: f64,
    score: f64,
}

/// Looks scores up in a `scene_id,theta_deg,phi_deg,score` table.
#[derive(Debug, Default, Clone)]
pub struct LookupScorer {
    table: HashMap<String, Vec<(f64, f64, f64)>>,
}

impl LookupScorer {
    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Format(format!("score table header: {e}")))?
            .clone();
        let expected = ["scene_id", "theta_deg", "phi_deg", "score"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!(
                "score table header must be '{}'",
                expected.join(",")
            )));
        }
        let mut table: HashMap<String, Vec<(f64, f64, f64)>> = HashMap::new();
        for (i, row) in rdr.deserialize::<ScoreRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                path: Default::default(),
                line: i + 2,
                message: e.to_string(),
            })?;
            table
                .entry(row.scene_id)
                .or_default()
                .push((row.theta_deg, row.phi_deg, row.score));
        }
        Ok(Self { table })
    }

    pub fn insert(&mut self, scene_id: &str, pose: &CameraPose, score: f64) {
        self.table
            .entry(scene_id.to_string())
            .or_default()
            .push((pose.theta(), pose.phi(), score));
    }

    pub fn lookup(&self, scene_id: &str, pose: &CameraPose) -> Option<f64> {
        self.table.get(scene_id)?.iter().find_map(|&(t, p, s)| {
            let close = wrap_longitude(t - pose.theta()).abs() <= LOOKUP_POSE_TOL
                && (p - pose.phi()).abs() <= LOOKUP_POSE_TOL;
            close.then_some(s)
        })
    }
}

impl Scorer for LookupScorer {
    fn score(&self, req: &ScoreRequest<'_>) -> std::result::Result<f64, String> {
        self.lookup(req.scene_id, &req.pose)
            .ok_or_else(|| "pose not found in score table".to_string())
    }
}

/// Spread of the rule-of-thirds weighting, as a fraction of the image diagonal.
const THIRDS_SIGMA: f64 = 0.08;
/// Minimum vertical luminance step for a column to vote on the horizon.
const HORIZON_EDGE_MIN: f64 = 0.02;
const ENERGY_SCALE: f64 = 100.0;
/// Penalty per degree of horizon tilt.
const TILT_PENALTY_PER_DEG: f64 = 0.01;

/// Rule-of-thirds composition proxy used when no learned scorer is available.
///
/// With luminance `L = (0.299 R + 0.587 G + 0.114 B) / 255` and central
/// differences `gx, gy` over interior pixels:
///
/// ```text
/// w(x, y)  = max over the four thirds points p of exp(−|(x, y) − p|² / (2 (0.08 · diag)²))
/// energy   = Σ w · (gx² + gy²) / Σ w
/// tilt     = |atan(slope)| in degrees, slope from a least-squares line through the
///            row of strongest |gy| in every column whose strongest |gy| ≥ 0.02
/// score    = 100 · energy − 0.01 · tilt
/// ```
pub fn heuristic_score(view: &RgbImageRef<'_>) -> f64 {
    let (w, h) = (view.width as usize, view.height as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let lum: Vec<f64> = view
        .data
        .chunks_exact(3)
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect();
    let at = |x: usize, y: usize| lum[y * w + x];

    // The thirds points form a 2×2 grid, so the nearest one is nearest in x
    // and in y independently and the weight factors into row and column terms.
    let diag = ((w * w + h * h) as f64).sqrt();
    let two_s2 = 2.0 * (THIRDS_SIGMA * diag).powi(2);
    let axis_weights = |n: usize| -> Vec<f64> {
        let (a, b) = (n as f64 / 3.0, 2.0 * n as f64 / 3.0);
        (0..n)
            .map(|i| {
                let d = (i as f64 - a).abs().min((i as f64 - b).abs());
                (-d * d / two_s2).exp()
            })
            .collect()
    };
    let (wx_axis, wy_axis) = (axis_weights(w), axis_weights(h));

    let mut weighted = 0.0;
    let mut weight_sum = 0.0;
    let mut column_peaks: Vec<(f64, f64)> = Vec::new();
    for x in 1..w - 1 {
        let mut peak = (0.0f64, 0usize);
        for y in 1..h - 1 {
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            let wt = wx_axis[x] * wy_axis[y];
            weighted += wt * (gx * gx + gy * gy);
            weight_sum += wt;
            if gy.abs() > peak.0 {
                peak = (gy.abs(), y);
            }
        }
        if peak.0 >= HORIZON_EDGE_MIN {
            column_peaks.push((x as f64, peak.1 as f64));
        }
    }
    let energy = if weight_sum > 0.0 { weighted / weight_sum } else { 0.0 };

    let tilt_deg = if column_peaks.len() >= 2 {
        let n = column_peaks.len() as f64;
        let mx = column_peaks.iter().map(|p| p.0).sum::<f64>() / n;
        let my = column_peaks.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = column_peaks.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = column_peaks.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx > 0.0 {
            (sxy / sxx).atan().abs().to_degrees()
        } else {
            0.0
        }
    } else {
        0.0
    };

    ENERGY_SCALE * energy - TILT_PENALTY_PER_DEG * tilt_deg
}

/// Borrowed RGB8 pixel buffer.
pub struct RgbImageRef<'a> {
    pub width: u32,
    pub height: u32,
    pub data: &'a [u8],
}

impl<'a> From<&'a ViewImage> for RgbImageRef<'a> {
    fn from(v: &'a ViewImage) -> Self {
        Self {
            width: v.width(),
            height: v.height(),
            data: v.pixels.as_raw(),
        }
    }
}

/// Scores rendered views with [`heuristic_score`].
#[derive(Debug, Default, Clone, Copy)]
pub struct HeuristicScorer;

impl Scorer for HeuristicScorer {
    fn needs_view(&self) -> bool {
        true
    }

    fn score(&self, req: &ScoreRequest<'_>) -> std::result::Result<f64, String> {
        let view = req.view.ok_or("heuristic scorer needs a rendered view")?;
        Ok(heuristic_score(&view.into()))
    }
}

/// Render settings for scorers that look at pixels.
#[derive(Debug, Clone)]
pub struct RenderContext<'a> {
    pub intrinsics: CameraIntrinsics,
    /// Relative `erp_path`s resolve against this directory.
    pub base_dir: &'a Path,
}

fn score_one(
    scene_id: &str,
    pose: CameraPose,
    scorer: &dyn Scorer,
    erp: Option<&ErpImage>,
    k: &CameraIntrinsics,
) -> Result<f64> {
    let view = erp.map(|e| {
        let mut v = render_view(e, &pose, k);
        v.provenance.scene_id = Some(scene_id.to_string());
        v
    });
    let result = scorer.score(&ScoreRequest {
        scene_id,
        pose,
        view: view.as_ref(),
    });
    match result {
        Ok(s) if s.is_finite() => Ok(s),
        Ok(s) => Err(scorer_error(scene_id, &pose, format!("non-finite score {s}"))),
        Err(reason) => Err(scorer_error(scene_id, &pose, reason)),
    }
}

fn scorer_error(scene_id: &str, pose: &CameraPose, reason: String) -> Error {
    Error::Scorer {
        scene_id: scene_id.to_string(),
        theta_deg: pose.theta(),
        phi_deg: pose.phi(),
        reason,
    }
}

/// Scores the initial view and every candidate, storing the scores in the record.
pub fn score_scene(scene: &mut SceneRecord, scorer: &dyn Scorer, ctx: &RenderContext<'_>) -> Result<()> {
    let init = scene.init()?;
    let poses: Vec<CameraPose> = scene
        .candidates
        .iter()
        .map(|c| CameraPose::new(c.theta_deg, c.phi_deg))
        .collect::<Result<_>>()?;
    let erp = if scorer.needs_view() {
        let path = ctx.base_dir.join(&scene.erp_path);
        Some(ErpImage::open(&path)?)
    } else {
        None
    };
    let id = scene.scene_id.as_str();
    let init_score = score_one(id, init, scorer, erp.as_ref(), &ctx.intrinsics)?;
    let scores: Vec<f64> = poses
        .par_iter()
        .map(|p| score_one(id, *p, scorer, erp.as_ref(), &ctx.intrinsics))
        .collect::<Result<_>>()?;
    scene.init_score = Some(init_score);
    for (c, s) in scene.candidates.iter_mut().zip(scores) {
        c.score = Some(s);
    }
    Ok(())
}

/// Recomputes labels from the scores cached in the record.
pub fn relabel(scene: &mut SceneRecord, n_frac: f64) -> Result<(f64, Labels)> {
    let s_init = scene
        .init_score
        .ok_or_else(|| invalid(format!("scene {} has no initial score", scene.scene_id)))?;
    let views = scene.candidate_views()?;
    let (tau, labels) = labels_from_scores(s_init, &views, &scene.init()?, n_frac)?;
    scene.labels = Some(labels.into());
    Ok((tau, labels))
}

/// Scores a scene and attaches its labels. Returns `(τ, labels)`.
pub fn label_scene(scene: &mut SceneRecord, scorer: &dyn Scorer, n_frac: f64, ctx: &RenderContext<'_>) -> Result<(f64, Labels)> {
    if scene.candidates.is_empty() {
        return Err(invalid(format!("scene {} has no candidates", scene.scene_id)));
    }
    score_scene(scene, scorer, ctx)?;
    relabel(scene, n_frac)
}
