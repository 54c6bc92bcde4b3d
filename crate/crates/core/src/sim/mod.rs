//! Deterministic perception and hand simulators.

mod agent;

use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{AssemblyError, AssemblyState, Lattice, ModelDocument, ASSEMBLY_SCHEMA_VERSION};
use crate::catalog::{
    brick_catalog_document, nodal_catalog_document, Catalog, CatalogDocument, CatalogError, Inventory, TypeId,
};
use crate::geometry::{project_bbox, BBox2D, CameraPose, FootprintBox3D, GeometryError, WorkPlane};
use crate::monitor::{Hand, HandSample, MonitorConfig};
use crate::planner::PlanMode;
use crate::replanner::{GoalSet, ReplanConfig};
use crate::twin::{Detection, Frame, TwinConfig};

pub use agent::{AgentConfig, AgentView, HandAgent, Intent, IntentStats};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frame {frame} outside the trajectory span 0..{frames}")]
    FrameOutOfRange { frame: Frame, frames: Frame },
    #[error("scenario has no hand script")]
    NoScript,
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Independent random streams. Each (seed, domain, frame, index) key gets
/// its own ChaCha8 generator, so draws never depend on evaluation order.
pub mod stream {
    pub const DETECTION: u64 = 1;
    pub const CAMERA: u64 = 2;
    pub const AGENT: u64 = 3;
}

pub fn keyed_rng(seed: u64, domain: u64, frame: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, domain, frame, index]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    pub miss_prob: f64,
    /// Per-corner Gaussian sigma, pixels.
    pub jitter_sigma: f64,
    pub class_confusion_prob: f64,
    /// Beta(a, b) confidence shape; constant 1 when absent.
    pub confidence_beta: Option<(f64, f64)>,
    pub fps: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            miss_prob: 0.0,
            jitter_sigma: 0.0,
            class_confusion_prob: 0.0,
            confidence_beta: None,
            fps: 30.0,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.miss_prob) || !prob(self.class_confusion_prob) {
            return Err(SimError::Invalid("noise probabilities must lie in [0, 1]".into()));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(SimError::Invalid("jitter_sigma must be finite and >= 0".into()));
        }
        if let Some((a, b)) = self.confidence_beta {
            if !(a > 0.0 && b > 0.0) {
                return Err(SimError::Invalid("confidence_beta shape parameters must be > 0".into()));
            }
        }
        if !(self.fps > 0.0) {
            return Err(SimError::Invalid("fps must be > 0".into()));
        }
        Ok(())
    }
}

/// Where a document comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocRef<T> {
    Builtin(String),
    Path(PathBuf),
    Inline(T),
}

fn read(path: &Path) -> Result<String, SimError> {
    std::fs::read_to_string(path).map_err(|source| SimError::Io { path: path.to_path_buf(), source })
}

impl DocRef<CatalogDocument> {
    fn resolve(&self, base: &Path) -> Result<CatalogDocument, SimError> {
        match self {
            DocRef::Inline(doc) => Ok(doc.clone()),
            DocRef::Builtin(name) => match name.as_str() {
                "bricks" => Ok(brick_catalog_document()),
                "nodal" => Ok(nodal_catalog_document()),
                other => Err(SimError::Invalid(format!("unknown builtin catalog '{other}'"))),
            },
            DocRef::Path(p) => serde_json::from_str(&read(&base.join(p))?)
                .map_err(|e| CatalogError::MalformedDocument(e.to_string()).into()),
        }
    }
}

impl DocRef<ModelDocument> {
    fn resolve(&self, base: &Path) -> Result<ModelDocument, SimError> {
        match self {
            DocRef::Inline(doc) => Ok(doc.clone()),
            DocRef::Builtin(name) => Err(SimError::Invalid(format!("no builtin model '{name}'"))),
            DocRef::Path(p) => serde_json::from_str(&read(&base.join(p))?)
                .map_err(|e| AssemblyError::MalformedDocument(e.to_string()).into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LoosePartSpec {
    Box {
        type_id: TypeId,
        #[serde(rename = "box")]
        footprint: FootprintBox3D,
    },
    /// Axis-aligned part of its catalog size centred at `at` (plane meters).
    At { type_id: TypeId, at: [f64; 2] },
}

/// A physical part lying on the table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoosePart {
    pub part_id: u32,
    pub type_id: TypeId,
    #[serde(rename = "box")]
    pub footprint: FootprintBox3D,
}

pub fn part_box(catalog: &Catalog, lattice: &Lattice, type_id: TypeId, at: [f64; 2]) -> Result<FootprintBox3D, SimError> {
    let f = catalog.get(type_id)?.footprint;
    let [sx, sy, sz] = lattice.cell_size;
    Ok(FootprintBox3D::resting(
        (at[0], at[1]),
        (f[0] as f64 * sx / 2.0, f[1] as f64 * sy / 2.0),
        f[2] as f64 * sz,
    ))
}

fn default_image() -> (u32, u32) {
    (640, 480)
}
fn default_hfov_deg() -> f64 {
    60.0
}
fn default_azimuth_range() -> [f64; 2] {
    [-180.0, 180.0]
}
fn default_elevation_range() -> [f64; 2] {
    [15.0, 75.0]
}

/// Camera keyframe description; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraSpec {
    Pose {
        position: [f64; 3],
        /// (i, j, k, w) world-from-camera.
        orientation: [f64; 4],
        #[serde(default = "default_hfov_deg")]
        hfov_deg: f64,
        #[serde(default = "default_image")]
        image_size: (u32, u32),
    },
    LookAt {
        position: [f64; 3],
        target: [f64; 3],
        #[serde(default = "default_hfov_deg")]
        hfov_deg: f64,
        #[serde(default = "default_image")]
        image_size: (u32, u32),
    },
    Orbit {
        target: [f64; 3],
        azimuth_deg: f64,
        elevation_deg: f64,
        distance: f64,
        #[serde(default = "default_hfov_deg")]
        hfov_deg: f64,
        #[serde(default = "default_image")]
        image_size: (u32, u32),
    },
    /// Orbit pose drawn from the seed stream within the given ranges.
    Sampled {
        target: [f64; 3],
        distance: f64,
        #[serde(default = "default_azimuth_range")]
        azimuth_deg: [f64; 2],
        #[serde(default = "default_elevation_range")]
        elevation_deg: [f64; 2],
        #[serde(default = "default_hfov_deg")]
        hfov_deg: f64,
        #[serde(default = "default_image")]
        image_size: (u32, u32),
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraKeyframe {
    pub frame: Frame,
    #[serde(flatten)]
    pub camera: CameraSpec,
}

/// Orbit pose with azimuth and elevation drawn uniformly from the ranges (degrees).
pub fn sample_orbit_pose(
    rng: &mut impl Rng,
    target: Vector3<f64>,
    distance: f64,
    azimuth_deg: [f64; 2],
    elevation_deg: [f64; 2],
    hfov: f64,
    image_size: (u32, u32),
) -> Result<CameraPose, GeometryError> {
    let az = rng.random_range(azimuth_deg[0]..=azimuth_deg[1]).to_radians();
    let el = rng.random_range(elevation_deg[0]..=elevation_deg[1]).to_radians();
    CameraPose::orbit(target, az, el, distance, hfov, image_size)
}

impl CameraSpec {
    fn pose(&self, seed: u64, keyframe: usize) -> Result<CameraPose, GeometryError> {
        let v = |a: &[f64; 3]| Vector3::new(a[0], a[1], a[2]);
        match self {
            CameraSpec::Pose { position, orientation, hfov_deg, image_size } => {
                let q = nalgebra::Quaternion::new(orientation[3], orientation[0], orientation[1], orientation[2]);
                CameraPose::new(v(position), UnitQuaternion::from_quaternion(q), hfov_deg.to_radians(), *image_size)
            }
            CameraSpec::LookAt { position, target, hfov_deg, image_size } => {
                CameraPose::look_at(v(position), v(target), hfov_deg.to_radians(), *image_size)
            }
            CameraSpec::Orbit { target, azimuth_deg, elevation_deg, distance, hfov_deg, image_size } => {
                CameraPose::orbit(
                    v(target),
                    azimuth_deg.to_radians(),
                    elevation_deg.to_radians(),
                    *distance,
                    hfov_deg.to_radians(),
                    *image_size,
                )
            }
            CameraSpec::Sampled { target, distance, azimuth_deg, elevation_deg, hfov_deg, image_size } => {
                let mut rng = keyed_rng(seed, stream::CAMERA, keyframe as u64, 0);
                sample_orbit_pose(
                    &mut rng,
                    v(target),
                    *distance,
                    *azimuth_deg,
                    *elevation_deg,
                    hfov_deg.to_radians(),
                    *image_size,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioFlags {
    pub rigid_joints: bool,
    /// Wrong-pick crosses only in graph mode.
    pub error_feedback_graph_only: bool,
    /// Candidate index applied automatically after a replan.
    pub auto_select: Option<usize>,
    pub allow_deviant_pick: bool,
    /// Stop the headless run once the plan is complete.
    pub stop_when_complete: bool,
}

impl Default for ScenarioFlags {
    fn default() -> Self {
        ScenarioFlags {
            rigid_joints: false,
            error_feedback_graph_only: false,
            auto_select: Some(0),
            allow_deviant_pick: true,
            stop_when_complete: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandSource {
    #[default]
    None,
    Script(Vec<HandSample>),
    Agent(AgentConfig),
}

/// Scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub catalog: DocRef<CatalogDocument>,
    pub model: DocRef<ModelDocument>,
    #[serde(default)]
    pub lattice: Lattice,
    pub loose_parts: Vec<LoosePartSpec>,
    pub camera: Vec<CameraKeyframe>,
    #[serde(default)]
    pub noise: NoiseParams,
    /// Defaults to the target model's height and part count.
    #[serde(default)]
    pub goals: Option<GoalSet>,
    #[serde(default)]
    pub hand: HandSource,
    #[serde(default)]
    pub mode: PlanMode,
    #[serde(default)]
    pub flags: ScenarioFlags,
    /// Trajectory span; frames 0..frames exist.
    pub frames: Frame,
    #[serde(default)]
    pub twin: TwinConfig,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub replan: ReplanConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        if s.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(SimError::Invalid(format!("unsupported schema_version {}", s.schema_version)));
        }
        Ok(s)
    }

    /// Reads a scenario file and inlines every referenced document.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let s = Scenario::from_json(&read(path)?)?;
        s.inlined(path.parent().unwrap_or(Path::new(".")))
    }

    /// Copy with path and builtin references replaced by inline documents.
    pub fn inlined(&self, base: &Path) -> Result<Self, SimError> {
        let mut s = self.clone();
        s.catalog = DocRef::Inline(self.catalog.resolve(base)?);
        s.model = DocRef::Inline(self.model.resolve(base)?);
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scenario serializes")
    }

    /// Validates and resolves everything the simulators and session need.
    pub fn build(&self) -> Result<World, SimError> {
        let here = Path::new(".");
        let catalog = Catalog::from_document(self.catalog.resolve(here)?)?;
        let model_doc = self.model.resolve(here)?;
        if model_doc.schema_version != ASSEMBLY_SCHEMA_VERSION {
            return Err(AssemblyError::MalformedDocument(format!(
                "unsupported schema_version {}",
                model_doc.schema_version
            ))
            .into());
        }
        let model = AssemblyState::from_placements(model_doc.placements, &catalog, None)?;
        self.noise.validate()?;
        if self.frames == 0 {
            return Err(SimError::Invalid("frames must be >= 1".into()));
        }
        if self.camera.is_empty() {
            return Err(SimError::Invalid("camera trajectory is empty".into()));
        }
        if self.lattice.cell_size.iter().any(|&c| !(c > 0.0)) {
            return Err(SimError::Invalid("lattice cell sizes must be > 0".into()));
        }
        let mut keyframes = Vec::with_capacity(self.camera.len());
        for (i, kf) in self.camera.iter().enumerate() {
            if keyframes.last().is_some_and(|(f, _)| *f >= kf.frame) {
                return Err(SimError::Invalid("camera keyframes must have increasing frames".into()));
            }
            keyframes.push((kf.frame, kf.camera.pose(self.seed, i)?));
        }
        let mut loose = Vec::with_capacity(self.loose_parts.len());
        for (i, spec) in self.loose_parts.iter().enumerate() {
            let (type_id, footprint) = match spec {
                LoosePartSpec::Box { type_id, footprint } => {
                    catalog.get(*type_id)?;
                    (*type_id, *footprint)
                }
                LoosePartSpec::At { type_id, at } => (*type_id, part_box(&catalog, &self.lattice, *type_id, *at)?),
            };
            loose.push(LoosePart { part_id: i as u32, type_id, footprint });
        }
        let goals = match &self.goals {
            Some(g) => g.clone(),
            None => GoalSet {
                target_height: model.height(&catalog)?.max(1),
                max_components: model.len().max(1),
                per_type_limits: Default::default(),
            },
        };
        goals.validate().map_err(|e| SimError::Invalid(e.to_string()))?;
        if let HandSource::Script(script) = &self.hand {
            if script.is_empty() {
                return Err(SimError::Invalid("hand script is empty".into()));
            }
        }
        Ok(World {
            catalog,
            model,
            lattice: self.lattice,
            plane: WorkPlane::new(Vector3::zeros(), Vector3::z())?,
            loose,
            keyframes,
            noise: self.noise,
            seed: self.seed,
            frames: self.frames,
            goals,
        })
    }
}

/// A scenario resolved into engine values.
#[derive(Debug, Clone)]
pub struct World {
    pub catalog: Catalog,
    pub model: AssemblyState,
    pub lattice: Lattice,
    pub plane: WorkPlane,
    /// Initial table layout.
    pub loose: Vec<LoosePart>,
    pub keyframes: Vec<(Frame, CameraPose)>,
    pub noise: NoiseParams,
    pub seed: u64,
    pub frames: Frame,
    pub goals: GoalSet,
}

impl World {
    /// Inventory implied by the loose parts on the table.
    pub fn inventory(&self) -> Inventory {
        let mut inv = Inventory::default();
        for p in &self.loose {
            *inv.counts.entry(p.type_id).or_default() += 1;
        }
        inv
    }

    /// Linear position and spherical orientation between keyframes; held
    /// constant outside them.
    pub fn camera_at(&self, frame: Frame) -> Result<CameraPose, SimError> {
        if frame >= self.frames {
            return Err(SimError::FrameOutOfRange { frame, frames: self.frames });
        }
        let kf = &self.keyframes;
        let after = kf.partition_point(|(f, _)| *f <= frame);
        Ok(match after {
            0 => kf[0].1.clone(),
            n if n == kf.len() => kf[n - 1].1.clone(),
            n => {
                let (f0, ref a) = kf[n - 1];
                let (f1, ref b) = kf[n];
                a.interpolate(b, (frame - f0) as f64 / (f1 - f0) as f64)
            }
        })
    }
}

/// Image bbox whose back-projection is centred on the footprint centre.
/// `None` when the part is not fully in view.
pub fn ideal_bbox(camera: &CameraPose, plane: &WorkPlane, footprint: &FootprintBox3D) -> Option<BBox2D> {
    let target = footprint.center.xy();
    let mut offset = nalgebra::Vector2::zeros();
    let mut best = None;
    for _ in 0..64 {
        let corners: Option<Vec<(f64, f64)>> = footprint
            .corners_xy()
            .iter()
            .map(|c| {
                let local = Vector3::new(c.x + offset.x, c.y + offset.y, 0.0);
                camera.project_point(&plane.to_world(&local))
            })
            .collect();
        let bbox = BBox2D::from_points(&corners?)?;
        let back = project_bbox(camera, &bbox, plane, 2.0 * footprint.half_extents.z).ok()?;
        let err = back.center.xy() - target;
        best = Some(bbox);
        if err.norm() < 1e-12 {
            break;
        }
        offset -= err;
    }
    best
}

/// Renders the loose parts seen from the camera at `frame`.
pub fn render_detections(world: &World, frame: Frame, parts: &[LoosePart]) -> Result<(CameraPose, Vec<Detection>), SimError> {
    let camera = world.camera_at(frame)?;
    let noise = &world.noise;
    let jitter = Normal::new(0.0, noise.jitter_sigma).map_err(|e| SimError::Invalid(e.to_string()))?;
    let beta = match noise.confidence_beta {
        Some((a, b)) => Some(Beta::new(a, b).map_err(|e| SimError::Invalid(e.to_string()))?),
        None => None,
    };
    let classes: Vec<TypeId> = world.catalog.type_ids().collect();
    let mut out = Vec::new();
    for part in parts {
        let mut rng = keyed_rng(world.seed, stream::DETECTION, frame, part.part_id as u64);
        // fixed draw order keeps every stream independent of the outcome
        let miss: f64 = rng.random();
        let d: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
        let confuse: f64 = rng.random();
        let pick: f64 = rng.random();
        let conf = beta.as_ref().map_or(1.0, |b| b.sample(&mut rng));

        let Some(ideal) = ideal_bbox(&camera, &world.plane, &part.footprint) else { continue };
        if miss < noise.miss_prob {
            continue;
        }
        let (u0, u1) = (ideal.min[0] + d[0], ideal.max[0] + d[2]);
        let (v0, v1) = (ideal.min[1] + d[1], ideal.max[1] + d[3]);
        let noisy = BBox2D { min: [u0.min(u1), v0.min(v1)], max: [u0.max(u1), v0.max(v1)] };
        let Some(bbox) = noisy.clamp_to_image(camera.image_size) else { continue };
        let mut class_id = part.type_id;
        if confuse < noise.class_confusion_prob && classes.len() > 1 {
            let others: Vec<TypeId> = classes.iter().copied().filter(|&c| c != part.type_id).collect();
            class_id = others[((pick * others.len() as f64) as usize).min(others.len() - 1)];
        }
        out.push(Detection { frame, class_id, bbox, confidence: conf.clamp(0.0, 1.0) });
    }
    Ok((camera, out))
}

/// Piecewise-linear position of `hand` at `frame`; `None` before its first
/// keyframe, the last position after its last one.
pub fn scripted_hand(script: Option<&[HandSample]>, frame: Frame, hand: Hand) -> Result<Option<HandSample>, SimError> {
    let script = script.ok_or(SimError::NoScript)?;
    let mut keys: Vec<&HandSample> = script.iter().filter(|s| s.hand == hand).collect();
    keys.sort_by_key(|s| s.frame);
    let Some(first) = keys.first() else { return Ok(None) };
    if frame < first.frame {
        return Ok(None);
    }
    let after = keys.partition_point(|s| s.frame <= frame);
    let position = if after == keys.len() {
        keys[after - 1].position
    } else {
        let (a, b) = (keys[after - 1], keys[after]);
        let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
        a.position.lerp(&b.position, t)
    };
    Ok(Some(HandSample { frame, position, hand }))
}

/// Hands that appear in the script, in order.
pub fn scripted_hands(script: &[HandSample]) -> Vec<Hand> {
    let mut hands: Vec<Hand> = script.iter().map(|s| s.hand).collect();
    hands.sort();
    hands.dedup();
    hands
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{Placement, Yaw};

    fn scenario(noise: NoiseParams) -> Scenario {
        Scenario {
            schema_version: 1,
            name: "t".into(),
            seed: 42,
            catalog: DocRef::Builtin("bricks".into()),
            model: DocRef::Inline(ModelDocument {
                schema_version: 1,
                placements: vec![Placement { instance_id: 0, type_id: 1, cell: [0, 0, 0], yaw: Yaw::default() }],
            }),
            lattice: Lattice::default(),
            loose_parts: vec![
                LoosePartSpec::At { type_id: 1, at: [0.05, -0.1] },
                LoosePartSpec::At { type_id: 2, at: [0.15, -0.1] },
                LoosePartSpec::At { type_id: 5, at: [0.25, -0.12] },
            ],
            camera: vec![
                CameraKeyframe {
                    frame: 0,
                    camera: CameraSpec::Orbit {
                        target: [0.15, 0.1, 0.0],
                        azimuth_deg: -90.0,
                        elevation_deg: 60.0,
                        distance: 0.8,
                        hfov_deg: 60.0,
                        image_size: (640, 480),
                    },
                },
                CameraKeyframe {
                    frame: 100,
                    camera: CameraSpec::Sampled {
                        target: [0.15, 0.0, 0.0],
                        distance: 0.9,
                        azimuth_deg: [-120.0, -60.0],
                        elevation_deg: [45.0, 75.0],
                        hfov_deg: 60.0,
                        image_size: (640, 480),
                    },
                },
            ],
            noise,
            goals: None,
            hand: HandSource::None,
            mode: PlanMode::Layer,
            flags: ScenarioFlags::default(),
            frames: 20_000,
            twin: TwinConfig::default(),
            monitor: MonitorConfig::default(),
            replan: ReplanConfig::default(),
        }
    }

    #[test]
    fn zero_noise_round_trips_centres() {
        let world = scenario(NoiseParams::default()).build().unwrap();
        for frame in [0, 37, 99, 150] {
            let (cam, dets) = render_detections(&world, frame, &world.loose).unwrap();
            assert_eq!(dets.len(), 3);
            for (d, part) in dets.iter().zip(&world.loose) {
                assert_eq!(d.class_id, part.type_id);
                assert_eq!(d.confidence, 1.0);
                let fp = project_bbox(&cam, &d.bbox, &world.plane, 2.0 * part.footprint.half_extents.z).unwrap();
                assert!((fp.center - part.footprint.center).norm() < 1e-6, "{:?}", fp.center - part.footprint.center);
                let ideal = ideal_bbox(&cam, &world.plane, &part.footprint).unwrap();
                for k in 0..2 {
                    assert!((ideal.min[k] - d.bbox.min[k]).abs() < 1e-6);
                    assert!((ideal.max[k] - d.bbox.max[k]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn full_miss_drops_everything() {
        let world = scenario(NoiseParams { miss_prob: 1.0, ..Default::default() }).build().unwrap();
        for frame in 0..50 {
            assert!(render_detections(&world, frame, &world.loose).unwrap().1.is_empty());
        }
    }

    #[test]
    fn jitter_std_matches_sigma() {
        let world = scenario(NoiseParams { jitter_sigma: 3.0, ..Default::default() }).build().unwrap();
        let part = [world.loose[0]];
        let cam = world.camera_at(0).unwrap();
        let ideal = ideal_bbox(&cam, &world.plane, &part[0].footprint).unwrap();
        let mut devs = Vec::new();
        // camera is static before the second keyframe; sample 2500 frames x 4 corners
        let static_world = World { keyframes: vec![world.keyframes[0].clone()], ..world.clone() };
        for frame in 0..2500 {
            let (_, dets) = render_detections(&static_world, frame, &part).unwrap();
            let b = dets[0].bbox;
            devs.extend([b.min[0] - ideal.min[0], b.min[1] - ideal.min[1], b.max[0] - ideal.max[0], b.max[1] - ideal.max[1]]);
        }
        assert_eq!(devs.len(), 10_000);
        let mean = devs.iter().sum::<f64>() / devs.len() as f64;
        let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (devs.len() - 1) as f64;
        assert!((var.sqrt() - 3.0).abs() < 0.15, "std {}", var.sqrt());
    }

    #[test]
    fn streams_are_keyed_not_ordered() {
        let world = scenario(NoiseParams {
            miss_prob: 0.3,
            jitter_sigma: 2.0,
            class_confusion_prob: 0.2,
            confidence_beta: Some((5.0, 2.0)),
            fps: 30.0,
        })
        .build()
        .unwrap();
        let (_, all) = render_detections(&world, 12, &world.loose).unwrap();
        let (_, last) = render_detections(&world, 12, &world.loose[2..]).unwrap();
        assert_eq!(all.last(), last.last());
        let (_, again) = render_detections(&world, 12, &world.loose).unwrap();
        assert_eq!(all, again);
    }

    #[test]
    fn frame_past_span_is_rejected() {
        let world = scenario(NoiseParams::default()).build().unwrap();
        assert!(matches!(render_detections(&world, 20_000, &world.loose), Err(SimError::FrameOutOfRange { .. })));
    }

    #[test]
    fn scripted_hand_interpolates_and_holds() {
        let a = HandSample { frame: 0, position: Vector3::new(0.0, 0.0, 0.0), hand: Hand::Right };
        let b = HandSample { frame: 10, position: Vector3::new(1.0, 2.0, 0.5), hand: Hand::Right };
        let script = [a, b];
        let mid = scripted_hand(Some(&script), 5, Hand::Right).unwrap().unwrap();
        assert!((mid.position - Vector3::new(0.5, 1.0, 0.25)).norm() < 1e-12);
        let past = scripted_hand(Some(&script), 99, Hand::Right).unwrap().unwrap();
        assert_eq!(past.position, b.position);
        assert_eq!(scripted_hand(Some(&script), 3, Hand::Left).unwrap(), None);
        assert!(matches!(scripted_hand(None, 3, Hand::Right), Err(SimError::NoScript)));
    }

    #[test]
    fn scenario_json_round_trip_and_validation() {
        let s = scenario(NoiseParams::default()).inlined(Path::new(".")).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let bad = scenario(NoiseParams { miss_prob: 1.5, ..Default::default() });
        assert!(matches!(bad.build(), Err(SimError::Invalid(_))));
        let mut wrong = s.clone();
        wrong.schema_version = 9;
        assert!(Scenario::from_json(&wrong.to_json()).is_err());
    }
}
