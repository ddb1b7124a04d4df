//! JSON scene files.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use viso_core::geom::{OrientedBox, Vec3};
use viso_core::nbv::ViewSphere;
use viso_core::scene::ObjectDescription;
use viso_core::simenv::{GroundTruthScene, SceneObject};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: [f64; 3],
    /// `[w, x, y, z]`, normalized on load.
    #[serde(default = "identity_quaternion")]
    pub rotation: [f64; 4],
    pub half_extents: [f64; 3],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub label: String,
    #[serde(default)]
    pub color: String,
    #[serde(default)]
    pub pattern: String,
    #[serde(default)]
    pub spatial_relation: String,
    pub center: [f64; 3],
    #[serde(default = "identity_quaternion")]
    pub rotation: [f64; 4],
    pub half_extents: [f64; 3],
}

impl ObjectSpec {
    pub fn bbox(&self) -> BoxSpec {
        BoxSpec {
            center: self.center,
            rotation: self.rotation,
            half_extents: self.half_extents,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewSpec {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl Default for ViewSpec {
    fn default() -> Self {
        Self {
            azimuth_deg: 0.0,
            elevation_deg: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub target_label: String,
    pub sphere: SphereSpec,
    #[serde(default)]
    pub table_height: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial_view: ViewSpec,
    /// Region named by the prompt ("the ball in the red cup").
    #[serde(default)]
    pub target_hint: Option<BoxSpec>,
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl BoxSpec {
    pub fn to_box(&self, what: &str) -> Result<OrientedBox, String> {
        let [w, x, y, z] = self.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 1e-9) {
            return Err(format!("{what}: rotation quaternion has zero norm"));
        }
        if self.half_extents.iter().any(|h| !(*h > 0.0)) {
            return Err(format!("{what}: half_extents must be positive"));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err(format!("{what}: center must be finite"));
        }
        OrientedBox::from_quaternion(vec3(self.center), &UnitQuaternion::from_quaternion(q), vec3(self.half_extents))
            .map_err(|e| format!("{what}: {e}"))
    }
}

impl SceneFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let file: SceneFile = serde_json::from_str(text).map_err(|e| CliError::Parse {
            file: origin.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(CliError::Invalid {
                file: origin.into(),
                message: format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", file.schema_version),
            });
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_scene(&self, origin: &str) -> Result<GroundTruthScene, CliError> {
        let invalid = |message: String| CliError::Invalid {
            file: origin.into(),
            message,
        };
        let mut objects = Vec::with_capacity(self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|p| p.label == o.label) {
                return Err(invalid(format!("duplicate object label {:?}", o.label)));
            }
            let description = ObjectDescription {
                label: o.label.clone(),
                color: o.color.clone(),
                pattern: o.pattern.clone(),
                spatial_relation: o.spatial_relation.clone(),
            };
            let bbox = o.bbox().to_box(&format!("objects[{i}]")).map_err(invalid)?;
            objects.push(SceneObject { description, bbox });
        }
        let sphere = ViewSphere::new(vec3(self.sphere.center), self.sphere.radius)
            .ok_or_else(|| invalid("sphere.radius must be positive".into()))?;
        let target_hint = match &self.target_hint {
            Some(b) => Some(b.to_box("target_hint").map_err(invalid)?),
            None => None,
        };
        let scene = GroundTruthScene {
            objects,
            target_label: self.target_label.clone(),
            table_height: self.table_height,
            sphere,
            initial_view: (
                self.initial_view.azimuth_deg.to_radians(),
                self.initial_view.elevation_deg.to_radians(),
            ),
            target_hint,
            seed: self.seed,
        };
        scene.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(scene)
    }
}

/// Loads and validates a scene file in one go.
pub fn load_scene(path: &Path) -> Result<(SceneFile, GroundTruthScene), CliError> {
    let file = SceneFile::load(path)?;
    let scene = file.to_scene(&path.display().to_string())?;
    Ok((file, scene))
}
