//! Batch steps over a manifest: synthetic datasets, candidate generation,
//! labeling and evaluation. Scenes are processed in parallel and written
//! back ordered by `scene_id`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::candidates::{generate_candidates, GenerationConfig, MOORE_OFFSETS};
use crate::error::{invalid, Error, Result};
use crate::labeling::{label_scene, shortest_arc, HeuristicScorer, LookupScorer, RenderContext, Scorer};
use crate::manifest::{
    append_jsonl, write_atomic, GenerationProvenance, LabelingProvenance, Manifest, ManifestHeader, RenderSettings,
};
use crate::metrics::{evaluate, EvalRecord, Report};
use crate::projection::CameraPose;
use crate::scene::{CandidateRecord, SceneRecord};
use crate::synth::{synthesize, Pattern};

/// Key under which a scene's last processing error is stored in the manifest.
pub const SCENE_ERROR_KEY: &str = "error";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorerSpec {
    Heuristic,
    Csv(PathBuf),
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heuristic" => Ok(ScorerSpec::Heuristic),
            _ => match s.strip_prefix("csv:") {
                Some(p) if !p.is_empty() => Ok(ScorerSpec::Csv(PathBuf::from(p))),
                _ => Err(invalid(format!("unknown scorer '{s}' (expected heuristic or csv:<path>)"))),
            },
        }
    }
}

impl fmt::Display for ScorerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScorerSpec::Heuristic => f.write_str("heuristic"),
            ScorerSpec::Csv(p) => write!(f, "csv:{}", p.display()),
        }
    }
}

impl ScorerSpec {
    pub fn build(&self) -> Result<Box<dyn Scorer>> {
        Ok(match self {
            ScorerSpec::Heuristic => Box::new(HeuristicScorer),
            ScorerSpec::Csv(p) => Box::new(LookupScorer::from_csv_path(p)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SceneError {
    pub scene_id: String,
    pub message: String,
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scene {}: {}", self.scene_id, self.message)
    }
}

fn set_scene_error(scene: &mut SceneRecord, message: Option<&str>) {
    match message {
        Some(m) => {
            scene.extra.insert(SCENE_ERROR_KEY.into(), Value::String(m.to_string()));
        }
        None => {
            scene.extra.remove(SCENE_ERROR_KEY);
        }
    }
}

/// Synthetic dataset layout: ERP files under `erp/` plus `manifest.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthDataset {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    pub pattern: Pattern,
    pub seed: u64,
}

impl Default for SynthDataset {
    fn default() -> Self {
        Self {
            count: 20,
            width: 1024,
            height: 512,
            pattern: Pattern::GradientHorizon,
            seed: 0,
        }
    }
}

fn round_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Generates the panoramas and writes the initial manifest. Returns the
/// manifest and its path.
pub fn synth_dataset(out_dir: &Path, cfg: &SynthDataset, render: RenderSettings) -> Result<(Manifest, PathBuf)> {
    if cfg.count == 0 {
        return Err(invalid("dataset needs at least one scene"));
    }
    let erp_dir = out_dir.join("erp");
    fs::create_dir_all(&erp_dir).map_err(|source| Error::Io {
        path: erp_dir.clone(),
        source,
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plans: Vec<(String, u64, CameraPose)> = (0..cfg.count)
        .map(|i| {
            let scene_seed: u64 = rng.random();
            let theta = round_tenth(rng.random_range(-180.0..180.0));
            let phi = round_tenth(rng.random_range(-15.0..15.0));
            let pose = CameraPose::new(crate::sphere::wrap_longitude(theta), phi).expect("pose in range");
            (format!("scene_{i:04}"), scene_seed, pose)
        })
        .collect();
    let scenes: Vec<SceneRecord> = plans
        .par_iter()
        .map(|(id, seed, pose)| {
            let erp = synthesize(cfg.width, cfg.height, cfg.pattern, *seed)?;
            let rel = format!("erp/{id}.png");
            let path = out_dir.join(&rel);
            erp.pixels().save(&path).map_err(|source| Error::Image { path, source })?;
            Ok(SceneRecord::new(id.clone(), rel, *pose))
        })
        .collect::<Result<_>>()?;
    let header = ManifestHeader {
        seed: Some(cfg.seed),
        render,
        ..Default::default()
    };
    let manifest = Manifest::new(header, scenes);
    let path = out_dir.join("manifest.jsonl");
    manifest.write(&path)?;
    Ok((manifest, path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub manifest: Manifest,
    pub errors: Vec<SceneError>,
    pub summary: S,
}

impl<S> StepOutcome<S> {
    /// True when there were scenes and none of them succeeded.
    pub fn all_failed(&self) -> bool {
        !self.manifest.scenes.is_empty() && self.errors.len() == self.manifest.scenes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidatesSummary {
    pub scenes: usize,
    pub candidates: usize,
    pub provenance: GenerationProvenance,
}

impl fmt::Display for CandidatesSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.provenance;
        write!(
            f,
            "candidates: {} over {} scenes (step {}°/{}°, m_max {}, lambda {}{})",
            self.candidates,
            self.scenes,
            p.step_theta_deg,
            p.step_phi_deg,
            p.m_max,
            p.lambda,
            if p.test_mode { ", test mode" } else { "" }
        )
    }
}

/// Populates candidates for every scene. Scenes whose panorama is missing get
/// an error entry and no candidates. The configuration's intrinsics are
/// replaced by the manifest's render settings.
pub fn run_candidates(manifest: &Manifest, base_dir: &Path, cfg: &GenerationConfig) -> Result<StepOutcome<CandidatesSummary>> {
    let mut cfg = *cfg;
    cfg.intrinsics = manifest.header.render.intrinsics()?;
    cfg.validate()?;
    let mut out = manifest.clone();
    out.sort_by_id();
    let results: Vec<std::result::Result<Vec<CandidateRecord>, String>> = out
        .scenes
        .par_iter()
        .map(|scene| {
            let erp = base_dir.join(&scene.erp_path);
            if !erp.is_file() {
                return Err(format!("panorama {} not found", erp.display()));
            }
            let init = scene.init().map_err(|e| e.to_string())?;
            let views = generate_candidates(&init, &cfg).map_err(|e| e.to_string())?;
            Ok(views.iter().map(CandidateRecord::from).collect())
        })
        .collect();
    let mut errors = Vec::new();
    let mut total = 0;
    for (scene, result) in out.scenes.iter_mut().zip(results) {
        scene.init_score = None;
        scene.labels = None;
        match result {
            Ok(c) => {
                total += c.len();
                scene.candidates = c;
                set_scene_error(scene, None);
            }
            Err(message) => {
                scene.candidates.clear();
                set_scene_error(scene, Some(&message));
                errors.push(SceneError {
                    scene_id: scene.scene_id.clone(),
                    message,
                });
            }
        }
    }
    let provenance = GenerationProvenance::from(&cfg);
    out.header.generation = Some(provenance);
    out.header.labeling = None;
    Ok(StepOutcome {
        summary: CandidatesSummary {
            scenes: out.scenes.len(),
            candidates: total,
            provenance,
        },
        manifest: out,
        errors,
    })
}

pub const DIRECTION_NAMES: [&str; 8] = [
    "up-left", "up", "up-right", "left", "right", "down-left", "down", "down-right",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelSummary {
    pub n_frac: f64,
    pub labeled: usize,
    pub suggest: usize,
    pub no_suggest: usize,
    /// Chosen adjustments by ring, then by neighbor direction.
    pub histogram: BTreeMap<u32, [usize; 8]>,
}

impl fmt::Display for LabelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n_frac: {}", self.n_frac)?;
        writeln!(
            f,
            "labeled: {}  y_s=1: {}  y_s=0: {}",
            self.labeled, self.suggest, self.no_suggest
        )?;
        write!(f, "{:>4}", "ring")?;
        for name in DIRECTION_NAMES {
            write!(f, " {name:>10}")?;
        }
        for (ring, counts) in &self.histogram {
            write!(f, "\n{ring:>4}")?;
            for c in counts {
                write!(f, " {c:>10}")?;
            }
        }
        Ok(())
    }
}

const MATCH_TOL: f64 = 1e-9;

/// Ring and neighbor index of the candidate an adjustment points at.
fn chosen_candidate(scene: &SceneRecord, d_theta: f64, d_phi: f64) -> Option<(u32, u8)> {
    let init = &scene.init_pose;
    scene.candidates.iter().find_map(|c| {
        let dt = shortest_arc(init.theta_deg, c.theta_deg);
        let dp = c.phi_deg - init.phi_deg;
        ((dt - d_theta).abs() < MATCH_TOL && (dp - d_phi).abs() < MATCH_TOL).then(|| (c.m, c.neighbor.unwrap_or(0)))
    })
}

/// Scores and labels every scene that has candidates.
pub fn run_label(
    manifest: &Manifest,
    base_dir: &Path,
    scorer: &dyn Scorer,
    scorer_name: &str,
    n_frac: f64,
) -> Result<StepOutcome<LabelSummary>> {
    if !(n_frac > 0.0 && n_frac <= 1.0) {
        return Err(invalid(format!("top-N fraction {n_frac} must lie in (0, 1]")));
    }
    let ctx = RenderContext {
        intrinsics: manifest.header.render.intrinsics()?,
        base_dir,
    };
    let mut out = manifest.clone();
    out.sort_by_id();
    let results: Vec<std::result::Result<SceneRecord, String>> = out
        .scenes
        .par_iter()
        .map(|scene| {
            let mut s = scene.clone();
            label_scene(&mut s, scorer, n_frac, &ctx).map_err(|e| e.to_string())?;
            Ok(s)
        })
        .collect();
    let mut errors = Vec::new();
    let mut summary = LabelSummary {
        n_frac,
        labeled: 0,
        suggest: 0,
        no_suggest: 0,
        histogram: BTreeMap::new(),
    };
    for (scene, result) in out.scenes.iter_mut().zip(results) {
        match result {
            Ok(mut labeled) => {
                set_scene_error(&mut labeled, None);
                let l = labeled.labels().expect("labels attached");
                summary.labeled += 1;
                if l.suggest {
                    summary.suggest += 1;
                    if let Some((ring, k)) = chosen_candidate(&labeled, l.d_theta, l.d_phi) {
                        summary.histogram.entry(ring).or_insert([0; 8])[k as usize % MOORE_OFFSETS.len()] += 1;
                    }
                } else {
                    summary.no_suggest += 1;
                }
                *scene = labeled;
            }
            Err(message) => {
                scene.labels = None;
                set_scene_error(scene, Some(&message));
                errors.push(SceneError {
                    scene_id: scene.scene_id.clone(),
                    message,
                });
            }
        }
    }
    out.header.labeling = Some(LabelingProvenance {
        n_frac,
        scorer: scorer_name.to_string(),
    });
    Ok(StepOutcome {
        manifest: out,
        errors,
        summary,
    })
}

/// One line of a predictions file. Adjustments are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub suggest_prob: f64,
    pub d_theta_deg: f64,
    pub d_phi_deg: f64,
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let mut text = String::new();
    for p in preds {
        text.push_str(&serde_json::to_string(p).map_err(|e| Error::Format(e.to_string()))?);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Predictions equal to the labels of every labeled scene.
pub fn oracle_predictions(manifest: &Manifest) -> Vec<PredictionRecord> {
    manifest
        .scenes
        .iter()
        .filter_map(|s| {
            s.labels.map(|l| PredictionRecord {
                scene_id: s.scene_id.clone(),
                suggest_prob: l.y_s as f64,
                d_theta_deg: l.d_theta_deg,
                d_phi_deg: l.d_phi_deg,
            })
        })
        .collect()
}

fn join_ids<'a>(ids: impl Iterator<Item = &'a str>) -> String {
    ids.collect::<Vec<_>>().join(",")
}

/// Evaluates predictions against the labeled scenes of a manifest. The two
/// id sets must match exactly.
pub fn run_eval(preds: &[PredictionRecord], manifest: &Manifest, threshold: f64) -> Result<Report> {
    let labeled: BTreeMap<&str, &SceneRecord> = manifest
        .scenes
        .iter()
        .filter(|s| s.labels.is_some())
        .map(|s| (s.scene_id.as_str(), s))
        .collect();
    let mut pred_ids = BTreeSet::new();
    for p in preds {
        if !pred_ids.insert(p.scene_id.as_str()) {
            return Err(invalid(format!("duplicate prediction for scene {}", p.scene_id)));
        }
    }
    let missing: Vec<&str> = labeled.keys().copied().filter(|id| !pred_ids.contains(id)).collect();
    let unknown: Vec<&str> = pred_ids.iter().copied().filter(|id| !labeled.contains_key(id)).collect();
    if !missing.is_empty() || !unknown.is_empty() {
        return Err(invalid(format!(
            "scene ids do not align: missing predictions [{}]; no labeled scene for [{}]",
            join_ids(missing.into_iter()),
            join_ids(unknown.into_iter())
        )));
    }
    let mut sorted: Vec<&PredictionRecord> = preds.iter().collect();
    sorted.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let records: Vec<EvalRecord> = sorted
        .into_iter()
        .map(|p| {
            let scene = labeled[p.scene_id.as_str()];
            EvalRecord::new(
                p.scene_id.clone(),
                scene.init()?,
                scene.labels().expect("labeled scene"),
                p.suggest_prob,
                [p.d_theta_deg, p.d_phi_deg],
                threshold,
            )
        })
        .collect::<Result<_>>()?;
    evaluate(&records, &manifest.header.render.intrinsics()?, threshold)
}

pub fn report_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// A/B comparison submitted through the viewer, stored with the semantic
/// (de-randomized) choice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub scene_id: String,
    pub left_ref: String,
    pub right_ref: String,
    pub choice: RatingChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatingChoice {
    Left,
    Right,
    Same,
}

pub fn append_rating(path: &Path, rating: &Rating) -> Result<()> {
    append_jsonl(path, rating)
}
