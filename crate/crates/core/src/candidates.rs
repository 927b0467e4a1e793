//! Candidate camera poses around an initial pose.
//!
//! Candidates sit on Moore-neighborhood rings: ring `m` holds the eight
//! poses offset by `(±mΔθ | 0, ±mΔφ | 0)`. Only poses whose view keeps more
//! than `λ` of the initial view's spherical footprint are kept.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::projection::{view_rect_of, CameraIntrinsics, CameraPose};
use crate::sphere::{sph_overlap, wrap_longitude};

pub const DEFAULT_STEP_DEG: f64 = 5.0;
pub const DEFAULT_M_MAX: u32 = 10;
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Offsets of the eight neighbors in units of `(Δθ, Δφ)`, top row first.
pub const MOORE_OFFSETS: [(i32, i32); 8] = [
    (-1, 1),
    (0, 1),
    (1, 1),
    (-1, 0),
    (1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub step_theta: f64,
    pub step_phi: f64,
    pub m_max: u32,
    pub lambda: f64,
    /// Allows `λ < 0.5`, which is outside the range used for real datasets.
    #[serde(default)]
    pub test_mode: bool,
    #[serde(skip, default)]
    pub intrinsics: CameraIntrinsics,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            step_theta: DEFAULT_STEP_DEG,
            step_phi: DEFAULT_STEP_DEG,
            m_max: DEFAULT_M_MAX,
            lambda: DEFAULT_LAMBDA,
            test_mode: false,
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_theta > 0.0 && self.step_phi > 0.0) {
            return Err(invalid("step sizes must be positive"));
        }
        if self.m_max < 1 {
            return Err(invalid("m_max must be at least 1"));
        }
        let lower = if self.test_mode { 0.0 } else { 0.5 };
        if !(self.lambda >= lower && self.lambda < 1.0) {
            return Err(invalid(format!(
                "lambda = {} must lie in [{lower}, 1){}",
                self.lambda,
                if self.test_mode { "" } else { " (use test mode for smaller values)" }
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateView {
    pub pose: CameraPose,
    /// Ring index, starting at 1.
    pub ring: u32,
    /// Position in [`MOORE_OFFSETS`].
    pub neighbor: u8,
    pub score: Option<f64>,
}

/// Normalizes yaw into `[-180, 180)`. Poses past a pole are rejected (`None`)
/// rather than reflected.
pub fn wrap_pose(theta_deg: f64, phi_deg: f64) -> Option<CameraPose> {
    if !(phi_deg.abs() <= 90.0) || !theta_deg.is_finite() {
        return None;
    }
    CameraPose::new(wrap_longitude(theta_deg), phi_deg).ok()
}

/// The surviving neighbors of ring `m`, tagged with their neighbor index.
pub fn moore_neighbors(pose: &CameraPose, cfg: &GenerationConfig, m: u32) -> Vec<(u8, CameraPose)> {
    let m = m as f64;
    MOORE_OFFSETS
        .iter()
        .enumerate()
        .filter_map(|(k, &(dt, dp))| {
            wrap_pose(
                pose.theta() + dt as f64 * m * cfg.step_theta,
                pose.phi() + dp as f64 * m * cfg.step_phi,
            )
            .map(|p| (k as u8, p))
        })
        .collect()
}

const SAME_POSE_TOL: f64 = 1e-9;

fn same_pose(a: &CameraPose, b: &CameraPose) -> bool {
    wrap_longitude(a.theta() - b.theta()).abs() < SAME_POSE_TOL && (a.phi() - b.phi()).abs() < SAME_POSE_TOL
}

/// Rings `1..=m_max` around `init`, filtered by spherical overlap `> λ`.
/// The initial pose and duplicates are dropped; order is ring, then neighbor.
pub fn generate_candidates(init: &CameraPose, cfg: &GenerationConfig) -> Result<Vec<CandidateView>> {
    cfg.validate()?;
    let init_rect = view_rect_of(init, &cfg.intrinsics);
    let mut out: Vec<CandidateView> = Vec::new();
    for m in 1..=cfg.m_max {
        for (neighbor, pose) in moore_neighbors(init, cfg, m) {
            if same_pose(&pose, init) || out.iter().any(|c| same_pose(&c.pose, &pose)) {
                continue;
            }
            if sph_overlap(&view_rect_of(&pose, &cfg.intrinsics), &init_rect) > cfg.lambda {
                out.push(CandidateView {
                    pose,
                    ring: m,
                    neighbor,
                    score: None,
                });
            }
        }
    }
    Ok(out)
}
