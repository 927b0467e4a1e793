//! The persistent per-panorama record and its JSON shape.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::candidates::CandidateView;
use crate::error::Result;
use crate::projection::CameraPose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

impl PoseRecord {
    pub fn to_pose(&self) -> Result<CameraPose> {
        CameraPose::new(self.theta_deg, self.phi_deg)
    }
}

impl From<CameraPose> for PoseRecord {
    fn from(p: CameraPose) -> Self {
        Self {
            theta_deg: p.theta(),
            phi_deg: p.phi(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub m: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neighbor: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl CandidateRecord {
    pub fn to_view(&self) -> Result<CandidateView> {
        Ok(CandidateView {
            pose: CameraPose::new(self.theta_deg, self.phi_deg)?,
            ring: self.m,
            neighbor: self.neighbor.unwrap_or(0),
            score: self.score,
        })
    }
}

impl From<&CandidateView> for CandidateRecord {
    fn from(c: &CandidateView) -> Self {
        Self {
            theta_deg: c.pose.theta(),
            phi_deg: c.pose.phi(),
            m: c.ring,
            neighbor: Some(c.neighbor),
            score: c.score,
            extra: Map::new(),
        }
    }
}

/// Suggestion bit and camera adjustment in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub suggest: bool,
    pub d_theta: f64,
    pub d_phi: f64,
}

impl Labels {
    pub const NO_ADJUSTMENT: Labels = Labels {
        suggest: false,
        d_theta: 0.0,
        d_phi: 0.0,
    };

    /// Checks the label invariants: no suggestion means a zero adjustment, a
    /// suggestion means a nonzero one, and `Δθ ∈ (−180, 180]`.
    pub fn is_valid(&self) -> bool {
        let zero = self.d_theta == 0.0 && self.d_phi == 0.0;
        let in_range = self.d_theta > -180.0 && self.d_theta <= 180.0;
        in_range && (self.suggest != zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub y_s: u8,
    pub d_theta_deg: f64,
    pub d_phi_deg: f64,
}

impl From<Labels> for LabelRecord {
    fn from(l: Labels) -> Self {
        Self {
            y_s: l.suggest as u8,
            d_theta_deg: l.d_theta,
            d_phi_deg: l.d_phi,
        }
    }
}

impl From<LabelRecord> for Labels {
    fn from(l: LabelRecord) -> Self {
        Self {
            suggest: l.y_s != 0,
            d_theta: l.d_theta_deg,
            d_phi: l.d_phi_deg,
        }
    }
}

/// One panorama with its initial pose, candidates, scores and labels.
/// Fields this crate does not know about are carried through untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub erp_path: String,
    pub init_pose: PoseRecord,
    #[serde(default)]
    pub candidates: Vec<CandidateRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<LabelRecord>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl SceneRecord {
    pub fn new(scene_id: impl Into<String>, erp_path: impl Into<String>, init: CameraPose) -> Self {
        Self {
            scene_id: scene_id.into(),
            erp_path: erp_path.into(),
            init_pose: init.into(),
            candidates: Vec::new(),
            init_score: None,
            labels: None,
            extra: Map::new(),
        }
    }

    pub fn init(&self) -> Result<CameraPose> {
        self.init_pose.to_pose()
    }

    pub fn candidate_views(&self) -> Result<Vec<CandidateView>> {
        self.candidates.iter().map(CandidateRecord::to_view).collect()
    }

    pub fn labels(&self) -> Option<Labels> {
        self.labels.map(Labels::from)
    }
}
