//! JSONL dataset manifests.
//!
//! The first line is a header object carrying the configuration that
//! produced the file; every following line is one [`SceneRecord`].

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::candidates::GenerationConfig;
use crate::error::{invalid, Error, Result};
use crate::projection::{CameraIntrinsics, DEFAULT_FOV_Y_DEG, DEFAULT_VIEW_HEIGHT, DEFAULT_VIEW_WIDTH};
use crate::scene::SceneRecord;

pub const MANIFEST_KIND: &str = "pano-compose";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSettings {
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            fov_y_deg: DEFAULT_FOV_Y_DEG,
            width: DEFAULT_VIEW_WIDTH,
            height: DEFAULT_VIEW_HEIGHT,
        }
    }
}

impl RenderSettings {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_fov(self.fov_y_deg, self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationProvenance {
    pub step_theta_deg: f64,
    pub step_phi_deg: f64,
    pub m_max: u32,
    pub lambda: f64,
    pub test_mode: bool,
}

impl From<&GenerationConfig> for GenerationProvenance {
    fn from(c: &GenerationConfig) -> Self {
        Self {
            step_theta_deg: c.step_theta,
            step_phi_deg: c.step_phi,
            m_max: c.m_max,
            lambda: c.lambda,
            test_mode: c.test_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingProvenance {
    pub n_frac: f64,
    pub scorer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub manifest: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub render: RenderSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<GenerationProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeling: Option<LabelingProvenance>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Default for ManifestHeader {
    fn default() -> Self {
        Self {
            manifest: MANIFEST_KIND.to_string(),
            version: MANIFEST_VERSION,
            seed: None,
            render: RenderSettings::default(),
            generation: None,
            labeling: None,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub scenes: Vec<SceneRecord>,
}

fn is_header(v: &Value) -> bool {
    v.get("manifest").is_some() && v.get("scene_id").is_none()
}

impl Manifest {
    pub fn new(header: ManifestHeader, scenes: Vec<SceneRecord>) -> Self {
        Self { header, scenes }
    }

    /// Parses manifest text. A missing header line is replaced by the default
    /// header; blank lines are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut header = None;
        let mut scenes = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            if line.trim().is_empty() {
                continue;
            }
            let value: Value = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            if is_header(&value) {
                if header.is_some() || !scenes.is_empty() {
                    return Err(parse_err("header must be the first line".into()));
                }
                let h: ManifestHeader = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
                if h.manifest != MANIFEST_KIND || h.version != MANIFEST_VERSION {
                    return Err(parse_err(format!(
                        "unsupported manifest {} version {}",
                        h.manifest, h.version
                    )));
                }
                header = Some(h);
            } else {
                let scene: SceneRecord = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
                scenes.push(scene);
            }
        }
        let m = Self {
            header: header.unwrap_or_default(),
            scenes,
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    pub fn check_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.scenes {
            if !seen.insert(s.scene_id.as_str()) {
                return Err(invalid(format!("duplicate scene_id {}", s.scene_id)));
            }
        }
        Ok(())
    }

    pub fn sort_by_id(&mut self) {
        self.scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    }

    pub fn scene(&self, id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.scene_id == id)
    }

    pub fn scene_mut(&mut self, id: &str) -> Option<&mut SceneRecord> {
        self.scenes.iter_mut().find(|s| s.scene_id == id)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for s in &self.scenes {
            out.push_str(&serde_json::to_string(s).expect("scene serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Rewrites relative `erp_path`s that resolve against `from_dir` so they
    /// resolve to the same files against `to_dir`.
    pub fn rebase_paths(&mut self, from_dir: &Path, to_dir: &Path) -> Result<()> {
        let abs = |p: &Path| {
            std::path::absolute(p).map_err(|source| Error::Io {
                path: p.to_path_buf(),
                source,
            })
        };
        let (from, to) = (abs(from_dir)?, abs(to_dir)?);
        if from == to {
            return Ok(());
        }
        for scene in &mut self.scenes {
            let erp = Path::new(&scene.erp_path);
            if erp.is_absolute() {
                continue;
            }
            let target = from.join(erp);
            let rebased = pathdiff::diff_paths(&target, &to).unwrap_or(target);
            scene.erp_path = rebased.to_string_lossy().into_owned();
        }
        Ok(())
    }
}

/// Directory that relative `erp_path`s in a manifest resolve against.
pub fn manifest_base_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = manifest_base_dir(path);
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Appends one JSON line to a file, creating it if needed.
pub fn append_jsonl<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut line = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    line.push('\n');
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    f.write_all(line.as_bytes()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::CameraPose;

    const TEXT: &str = concat!(
        r#"{"manifest":"pano-compose","version":1,"render":{"fov_y_deg":60.0,"width":1024,"height":768},"generation":{"step_theta_deg":5.0,"step_phi_deg":5.0,"m_max":10,"lambda":0.5,"test_mode":false},"owner":"lab"}"#,
        "\n",
        r#"{"scene_id":"b","erp_path":"erp/b.png","init_pose":{"theta_deg":-12.5,"phi_deg":3.0},"candidates":[{"theta_deg":-7.5,"phi_deg":3.0,"m":1,"neighbor":4,"score":0.5,"tag":[1,2]}],"init_score":0.25,"labels":{"y_s":1,"d_theta_deg":5.0,"d_phi_deg":0.0},"weather":"fog"}"#,
        "\n",
        r#"{"scene_id":"a","erp_path":"erp/a.png","init_pose":{"theta_deg":0.0,"phi_deg":0.0},"candidates":[]}"#,
        "\n",
    );

    #[test]
    fn round_trip_is_lossless() {
        let m = Manifest::parse(TEXT, Path::new("m.jsonl")).unwrap();
        assert_eq!(m.scenes.len(), 2);
        assert_eq!(m.header.extra["owner"], "lab");
        assert_eq!(m.header.generation.unwrap().m_max, 10);
        assert_eq!(m.to_jsonl(), TEXT);
        let again = Manifest::parse(&m.to_jsonl(), Path::new("m.jsonl")).unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn header_is_optional_on_input_but_always_written() {
        let body = TEXT.split_once('\n').unwrap().1;
        let m = Manifest::parse(body, Path::new("m.jsonl")).unwrap();
        assert_eq!(m.header, ManifestHeader::default());
        assert!(m.to_jsonl().starts_with(r#"{"manifest":"pano-compose","version":1,"#));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad = "{\"manifest\":\"pano-compose\",\"version\":1}\n{\"scene_id\":\"a\"}\n";
        match Manifest::parse(bad, Path::new("x.jsonl")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "{\"scene_id\":\"a\",\"erp_path\":\"p\",\"init_pose\":{\"theta_deg\":0,\"phi_deg\":0}}\n".repeat(2);
        assert!(Manifest::parse(&dup, Path::new("x.jsonl")).is_err());
        let late = format!("{}\n{}", TEXT.lines().nth(2).unwrap(), TEXT.lines().next().unwrap());
        assert!(Manifest::parse(&late, Path::new("x.jsonl")).is_err());
    }

    #[test]
    fn rebase_keeps_panoramas_reachable() {
        let mut m = Manifest::parse(TEXT, Path::new("m.jsonl")).unwrap();
        m.scenes[1].erp_path = "/abs/a.png".into();
        m.rebase_paths(Path::new("/data/set"), Path::new("/data/out")).unwrap();
        assert_eq!(m.scenes[0].erp_path, "../set/erp/b.png");
        assert_eq!(m.scenes[1].erp_path, "/abs/a.png");
        let before = m.clone();
        m.rebase_paths(Path::new("/data/out"), Path::new("/data/out")).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut m = Manifest::default();
        m.scenes.push(SceneRecord::new("s", "e.png", CameraPose::default()));
        m.write(&path).unwrap();
        m.scenes[0].scene_id = "t".into();
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        append_jsonl(&dir.path().join("r.jsonl"), &serde_json::json!({"a": 1})).unwrap();
        append_jsonl(&dir.path().join("r.jsonl"), &serde_json::json!({"a": 2})).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("r.jsonl")).unwrap(), "{\"a\":1}\n{\"a\":2}\n");
    }
}
