//! Operator pane arrangement and its single-file persistence.
//!
//! Coordinates are fractions of the viewport. Invariants: pane ids are
//! unique, `w, h > 0`, `x, y >= 0`, `x + w <= 1` and `y + h <= 1` (with
//! [`LAYOUT_EPS`] slack for decimal round trips).

use std::path::Path;

use aerolink_core::StreamId;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LAYOUT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pane {
    pub pane_id: String,
    pub stream: StreamId,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub z: i32,
    pub visible: bool,
    pub overlay_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaneLayout {
    pub panes: Vec<Pane>,
}

impl Default for PaneLayout {
    fn default() -> Self {
        Self {
            panes: vec![
                Pane {
                    pane_id: "fpv".into(),
                    stream: StreamId::Fpv,
                    x: 0.05,
                    y: 0.1,
                    w: 0.55,
                    h: 0.8,
                    z: 0,
                    visible: true,
                    overlay_enabled: true,
                },
                Pane {
                    pane_id: "bottom".into(),
                    stream: StreamId::Bottom,
                    x: 0.65,
                    y: 0.3,
                    w: 0.3,
                    h: 0.4,
                    z: 1,
                    visible: true,
                    overlay_enabled: false,
                },
            ],
        }
    }
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("invalid layout: {0}")]
    Invalid(String),
    #[error("layout file corrupt: {0}")]
    Corrupt(String),
    #[error("layout io: {0}")]
    Io(#[from] std::io::Error),
}

impl PaneLayout {
    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::Invalid(m));
        for (i, p) in self.panes.iter().enumerate() {
            if self.panes[..i].iter().any(|q| q.pane_id == p.pane_id) {
                return bad(format!("duplicate pane_id {:?}", p.pane_id));
            }
            let id = &p.pane_id;
            if ![p.x, p.y, p.w, p.h].iter().all(|v| v.is_finite()) {
                return bad(format!("pane {id:?}: coordinates must be finite"));
            }
            if p.w <= 0.0 || p.h <= 0.0 {
                return bad(format!("pane {id:?}: w and h must be > 0"));
            }
            if p.x < 0.0 || p.y < 0.0 {
                return bad(format!("pane {id:?}: x and y must be >= 0"));
            }
            if p.x + p.w > 1.0 + LAYOUT_EPS {
                return bad(format!("pane {id:?}: x + w = {} exceeds 1", p.x + p.w));
            }
            if p.y + p.h > 1.0 + LAYOUT_EPS {
                return bad(format!("pane {id:?}: y + h = {} exceeds 1", p.y + p.h));
            }
        }
        Ok(())
    }

    /// Parses and validates a layout document.
    pub fn from_json(text: &[u8]) -> Result<Self, LayoutError> {
        let l: PaneLayout =
            serde_json::from_slice(text).map_err(|e| LayoutError::Invalid(e.to_string()))?;
        l.validate()?;
        Ok(l)
    }
}

/// Writes `layout` to `path` atomically (temp file, then rename).
pub fn layout_store(layout: &PaneLayout, path: &Path) -> Result<(), LayoutError> {
    layout.validate()?;
    let text = serde_json::to_vec_pretty(layout).expect("layout serializes");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A missing file yields the default layout.
pub fn layout_load(path: &Path) -> Result<PaneLayout, LayoutError> {
    let text = match std::fs::read(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(PaneLayout::default()),
        Err(e) => return Err(e.into()),
    };
    PaneLayout::from_json(&text).map_err(|e| match e {
        LayoutError::Invalid(m) => LayoutError::Corrupt(m),
        other => other,
    })
}
