//! Digital twin: per-frame detections associated with persistent tracks on
//! the work plane.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::Lattice;
use crate::catalog::{Catalog, TypeId};
use crate::geometry::{project_bbox, BBox2D, CameraPose, FootprintBox3D, WorkPlane};

pub type TrackId = u64;
pub type Frame = u64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TwinError {
    #[error("frame {got} does not follow frame {previous}")]
    NonMonotonicFrame { previous: Frame, got: Frame },
    #[error("detection class {0} is not in the catalog")]
    UnknownClass(TypeId),
    #[error("detection for frame {got} passed with frame {expected}")]
    FrameMismatch { expected: Frame, got: Frame },
    #[error("detection confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: Frame,
    pub class_id: TypeId,
    pub bbox: BBox2D,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: TrackId,
    pub class_id: TypeId,
    /// Latest footprint, centred on the smoothed center.
    #[serde(rename = "box")]
    pub footprint: FootprintBox3D,
    pub last_seen: Frame,
    pub hits: u32,
    pub smoothed_center: Vector3<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwinState {
    /// Last ingested frame.
    pub frame: Option<Frame>,
    /// Sorted by track id.
    pub tracks: Vec<Track>,
    pub next_track_id: TrackId,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwinConfig {
    pub conf_min: f64,
    pub alpha: f64,
    pub expiry_frames: u64,
    /// Meters; derived from the catalog when unset.
    pub gate_radius: Option<f64>,
    pub merge_radius: Option<f64>,
}

impl Default for TwinConfig {
    fn default() -> Self {
        TwinConfig {
            conf_min: 0.25,
            alpha: 0.4,
            expiry_frames: 15,
            gate_radius: None,
            merge_radius: None,
        }
    }
}

/// Everything `ingest_frame` needs besides the state: resolved radii and
/// per-class component heights.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinModel {
    pub plane: WorkPlane,
    pub conf_min: f64,
    pub alpha: f64,
    pub expiry_frames: u64,
    pub gate_radius: f64,
    pub merge_radius: f64,
    heights: BTreeMap<TypeId, f64>,
}

impl TwinModel {
    pub fn new(catalog: &Catalog, lattice: &Lattice, plane: WorkPlane, config: &TwinConfig) -> Self {
        let mut max_dim: f64 = 0.0;
        let mut heights = BTreeMap::new();
        for t in catalog.types() {
            max_dim = max_dim
                .max(t.footprint[0] as f64 * lattice.cell_size[0])
                .max(t.footprint[1] as f64 * lattice.cell_size[1]);
            heights.insert(t.type_id, t.footprint[2] as f64 * lattice.cell_size[2]);
        }
        let gate = config.gate_radius.unwrap_or(0.5 * max_dim);
        TwinModel {
            plane,
            conf_min: config.conf_min,
            alpha: config.alpha,
            expiry_frames: config.expiry_frames,
            gate_radius: gate,
            merge_radius: config.merge_radius.unwrap_or(gate / 2.0),
            heights,
        }
    }

    pub fn height_of(&self, class_id: TypeId) -> Option<f64> {
        self.heights.get(&class_id).copied()
    }
}

fn planar_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.xy() - b.xy()).norm()
}

/// Advances the twin by one frame. Detections that do not project onto the
/// plane are skipped.
pub fn ingest_frame(
    model: &TwinModel,
    state: &TwinState,
    frame: Frame,
    camera: &CameraPose,
    detections: &[Detection],
) -> Result<TwinState, TwinError> {
    if let Some(prev) = state.frame {
        if frame <= prev {
            return Err(TwinError::NonMonotonicFrame { previous: prev, got: frame });
        }
    }
    let mut observed: Vec<(usize, TypeId, FootprintBox3D, f64)> = Vec::with_capacity(detections.len());
    for (i, d) in detections.iter().enumerate() {
        if d.frame != frame {
            return Err(TwinError::FrameMismatch { expected: frame, got: d.frame });
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(TwinError::InvalidConfidence(d.confidence));
        }
        let height = model.height_of(d.class_id).ok_or(TwinError::UnknownClass(d.class_id))?;
        if let Ok(fp) = project_bbox(camera, &d.bbox, &model.plane, height) {
            observed.push((i, d.class_id, fp, d.confidence));
        }
    }

    let mut next = state.clone();
    next.frame = Some(frame);

    // greedy association per class on (distance, track id, detection index)
    let mut pairs: Vec<(f64, TrackId, usize, usize, usize)> = Vec::new();
    for (ti, t) in next.tracks.iter().enumerate() {
        for (oi, (di, class, fp, _)) in observed.iter().enumerate() {
            if *class != t.class_id {
                continue;
            }
            let dist = planar_distance(&t.smoothed_center, &fp.center);
            if dist <= model.gate_radius {
                pairs.push((dist, t.track_id, *di, ti, oi));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut track_used = vec![false; next.tracks.len()];
    let mut obs_used = vec![false; observed.len()];
    for (_, _, _, ti, oi) in pairs {
        if track_used[ti] || obs_used[oi] {
            continue;
        }
        track_used[ti] = true;
        obs_used[oi] = true;
        let fp = observed[oi].2;
        let t = &mut next.tracks[ti];
        t.smoothed_center = t.smoothed_center * (1.0 - model.alpha) + fp.center * model.alpha;
        t.footprint = FootprintBox3D {
            center: t.smoothed_center,
            ..fp
        };
        t.last_seen = frame;
        t.hits += 1;
    }

    for (oi, (_, class, fp, conf)) in observed.iter().enumerate() {
        if obs_used[oi] || *conf < model.conf_min {
            continue;
        }
        let crowded = next
            .tracks
            .iter()
            .any(|t| t.class_id == *class && planar_distance(&t.smoothed_center, &fp.center) < model.merge_radius);
        if crowded {
            continue;
        }
        next.tracks.push(Track {
            track_id: next.next_track_id,
            class_id: *class,
            footprint: *fp,
            last_seen: frame,
            hits: 1,
            smoothed_center: fp.center,
        });
        next.next_track_id += 1;
    }

    next.tracks
        .retain(|t| frame.saturating_sub(t.last_seen) < model.expiry_frames);

    // merge: the older (lower id) track survives
    let mut drop = vec![false; next.tracks.len()];
    for i in 0..next.tracks.len() {
        if drop[i] {
            continue;
        }
        for j in i + 1..next.tracks.len() {
            let (a, b) = (&next.tracks[i], &next.tracks[j]);
            if !drop[j]
                && a.class_id == b.class_id
                && planar_distance(&a.smoothed_center, &b.smoothed_center) < model.merge_radius
            {
                drop[j] = true;
            }
        }
    }
    let mut k = 0;
    next.tracks.retain(|_| {
        k += 1;
        !drop[k - 1]
    });
    Ok(next)
}

/// Live tracks of one class in id order.
pub fn query_component(state: &TwinState, class_id: TypeId) -> Vec<Track> {
    state
        .tracks
        .iter()
        .filter(|t| t.class_id == class_id)
        .cloned()
        .collect()
}

impl TwinState {
    pub fn get(&self, track_id: TrackId) -> Option<&Track> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{brick_catalog_document, Catalog};
    use crate::geometry::{BBox2D, CameraPose};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn setup() -> (Catalog, TwinModel, CameraPose) {
        let catalog = Catalog::from_document(brick_catalog_document()).unwrap();
        let model = TwinModel::new(&catalog, &Lattice::default(), WorkPlane::default(), &TwinConfig::default());
        let camera = CameraPose::look_at(
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::zeros(),
            FRAC_PI_2,
            (1000, 1000),
        )
        .unwrap();
        (catalog, model, camera)
    }

    /// Pixel of a plane point under the straight-down camera.
    fn bbox_at(camera: &CameraPose, x: f64, y: f64, half: f64) -> BBox2D {
        let a = camera.project_point(&Vector3::new(x - half, y - half, 0.0)).unwrap();
        let b = camera.project_point(&Vector3::new(x + half, y + half, 0.0)).unwrap();
        BBox2D::from_points(&[a, b]).unwrap()
    }

    fn det(frame: Frame, class_id: TypeId, bbox: BBox2D) -> Detection {
        Detection { frame, class_id, bbox, confidence: 0.9 }
    }

    #[test]
    fn centered_detection_spawns_track_at_origin() {
        let (_, model, camera) = setup();
        let bbox = BBox2D::new([490.0, 490.0], [510.0, 510.0]).unwrap();
        let s = ingest_frame(&model, &TwinState::default(), 0, &camera, &[det(0, 1, bbox)]).unwrap();
        assert_eq!(s.tracks.len(), 1);
        assert!(s.tracks[0].smoothed_center.xy().norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let (_, model, camera) = setup();
        let bbox = BBox2D::new([490.0, 490.0], [510.0, 510.0]).unwrap();
        let s = ingest_frame(&model, &TwinState::default(), 3, &camera, &[]).unwrap();
        assert!(matches!(
            ingest_frame(&model, &s, 3, &camera, &[]),
            Err(TwinError::NonMonotonicFrame { .. })
        ));
        assert_eq!(
            ingest_frame(&model, &s, 4, &camera, &[det(4, 99, bbox)]),
            Err(TwinError::UnknownClass(99))
        );
        assert!(matches!(
            ingest_frame(&model, &s, 4, &camera, &[det(5, 1, bbox)]),
            Err(TwinError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn low_confidence_does_not_spawn() {
        let (_, model, camera) = setup();
        let mut d = det(0, 1, bbox_at(&camera, 0.1, 0.1, 0.02));
        d.confidence = 0.2;
        let s = ingest_frame(&model, &TwinState::default(), 0, &camera, &[d]).unwrap();
        assert!(s.tracks.is_empty());
    }

    #[test]
    fn smoothing_converges_and_expiry_drops() {
        let (_, model, camera) = setup();
        let mut s = ingest_frame(&model, &TwinState::default(), 0, &camera, &[det(0, 2, bbox_at(&camera, 0.1, 0.0, 0.02))]).unwrap();
        // part nudged by 1 cm: center moves by alpha each frame
        for f in 1..=20 {
            s = ingest_frame(&model, &s, f, &camera, &[det(f, 2, bbox_at(&camera, 0.11, 0.0, 0.02))]).unwrap();
        }
        let err = (s.tracks[0].smoothed_center.x - 0.11).abs();
        assert!(err < 0.01 * 0.6f64.powi(20) * 1.01 + 1e-12, "{err}");
        assert_eq!(s.tracks[0].hits, 21);
        // 14 unseen frames keep it, the 15th drops it
        for f in 21..=34 {
            s = ingest_frame(&model, &s, f, &camera, &[]).unwrap();
        }
        assert_eq!(s.tracks.len(), 1);
        s = ingest_frame(&model, &s, 35, &camera, &[]).unwrap();
        assert!(s.tracks.is_empty());
        assert!(query_component(&s, 2).is_empty());
        // ids are not reused
        s = ingest_frame(&model, &s, 36, &camera, &[det(36, 2, bbox_at(&camera, 0.11, 0.0, 0.02))]).unwrap();
        assert_eq!(s.tracks[0].track_id, 1);
    }

    #[test]
    fn query_returns_class_tracks_in_id_order() {
        let (_, model, camera) = setup();
        let dets = vec![
            det(0, 2, bbox_at(&camera, -0.3, 0.0, 0.02)),
            det(0, 5, bbox_at(&camera, 0.0, 0.3, 0.02)),
            det(0, 2, bbox_at(&camera, 0.0, 0.0, 0.02)),
            det(0, 2, bbox_at(&camera, 0.3, 0.0, 0.02)),
        ];
        let s = ingest_frame(&model, &TwinState::default(), 0, &camera, &dets).unwrap();
        let q = query_component(&s, 2);
        assert_eq!(q.iter().map(|t| t.track_id).collect::<Vec<_>>(), vec![0, 2, 3]);
        assert!(query_component(&TwinState::default(), 2).is_empty());
    }

    #[test]
    fn duplicate_detection_does_not_split_track() {
        let (_, model, camera) = setup();
        let b = bbox_at(&camera, 0.0, 0.0, 0.02);
        let s = ingest_frame(&model, &TwinState::default(), 0, &camera, &[det(0, 1, b), det(0, 1, b.translated(1.0, 0.0))]).unwrap();
        assert_eq!(s.tracks.len(), 1);
    }

    #[test]
    fn greedy_matches_min_total_assignment_oracle() {
        let (_, model, camera) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gate = model.gate_radius;
        let mut checked = 0;
        for _ in 0..500 {
            let p0: (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let p1: (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
            let dist = ((p0.0 - p1.0).powi(2) + (p0.1 - p1.1).powi(2)).sqrt();
            if dist < 2.0 * gate + 0.01 {
                continue;
            }
            let s0 = ingest_frame(
                &model,
                &TwinState::default(),
                0,
                &camera,
                &[det(0, 3, bbox_at(&camera, p0.0, p0.1, 0.02)), det(0, 3, bbox_at(&camera, p1.0, p1.1, 0.02))],
            )
            .unwrap();
            let moved: Vec<(f64, f64)> = [p0, p1]
                .iter()
                .map(|p| {
                    let r = rng.random_range(0.0..gate * 0.9);
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    (p.0 + r * a.cos(), p.1 + r * a.sin())
                })
                .collect();
            let order = if rng.random_bool(0.5) { [1, 0] } else { [0, 1] };
            let dets: Vec<Detection> = order
                .iter()
                .map(|&i| det(1, 3, bbox_at(&camera, moved[i].0, moved[i].1, 0.02)))
                .collect();
            let s1 = ingest_frame(&model, &s0, 1, &camera, &dets).unwrap();
            assert_eq!(s1.tracks.len(), 2);
            // brute-force: both permutations, minimum total distance
            let centers: Vec<Vector3<f64>> = s0.tracks.iter().map(|t| t.smoothed_center).collect();
            let obs: Vec<Vector3<f64>> = dets
                .iter()
                .map(|d| project_bbox(&camera, &d.bbox, &model.plane, 0.04).unwrap().center)
                .collect();
            let cost = |perm: [usize; 2]| {
                (0..2).map(|t| planar_distance(&centers[t], &obs[perm[t]])).sum::<f64>()
            };
            let best = if cost([0, 1]) <= cost([1, 0]) { [0, 1] } else { [1, 0] };
            for t in 0..2 {
                let expected = centers[t] * (1.0 - model.alpha) + obs[best[t]] * model.alpha;
                assert!(planar_distance(&s1.tracks[t].smoothed_center, &expected) < 1e-9);
            }
            checked += 1;
        }
        assert!(checked > 100, "{checked}");
    }

    #[test]
    fn ingest_is_deterministic() {
        let (_, model, camera) = setup();
        let dets: Vec<Detection> = (0..10)
            .map(|i| det(0, 1 + (i % 3), bbox_at(&camera, -0.4 + 0.08 * i as f64, 0.05, 0.02)))
            .collect();
        let a = ingest_frame(&model, &TwinState::default(), 0, &camera, &dets).unwrap();
        let b = ingest_frame(&model, &TwinState::default(), 0, &camera, &dets).unwrap();
        assert_eq!(a, b);
    }
}
