//! Hand interaction monitor: dwell-based pick and place classification.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::assembly::{legal_placements, AssemblyError, AssemblyState, InstanceId, Lattice, Placement, PlacementKey};
use crate::catalog::{Catalog, TypeId};
use crate::geometry::{point_in_box, FootprintBox3D};
use crate::planner::{PlanStep, StepAction};
use crate::twin::{Frame, Track, TrackId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hand {
    Left,
    #[default]
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandSample {
    pub frame: Frame,
    /// Palm centroid, meters.
    pub position: Vector3<f64>,
    #[serde(default)]
    pub hand: Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PickCorrect,
    PickWrong,
    PlaceCorrect,
    PlaceDeviation,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Check,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub marker: Marker,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventTarget {
    Track { track_id: TrackId },
    /// A placed part picked off the structure.
    Instance { instance_id: InstanceId },
    Placement { placement: Placement },
    ReturnZone,
    /// The box the held part came from.
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub kind: EventKind,
    pub frame: Frame,
    pub hand: Hand,
    pub target: EventTarget,
    pub step_index: Option<usize>,
    /// Type of the part picked, held or placed.
    pub type_id: TypeId,
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PickSource {
    Track { track_id: TrackId },
    Instance { instance_id: InstanceId },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    #[default]
    Idle,
    Holding {
        hand: Hand,
        type_id: TypeId,
        source: PickSource,
        origin: FootprintBox3D,
        /// Whether the pick matched the active step.
        correct: bool,
        /// Set once the hand has moved out of `origin`; release needs it.
        left_origin: bool,
    },
    /// Cool-down after a place or release; ends once the hand leaves `region`.
    Placed { hand: Hand, region: FootprintBox3D },
}

/// Anything a hand can dwell in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Candidate {
    Track { track_id: TrackId },
    Instance { instance_id: InstanceId },
    Region { key: PlacementKey },
    ReturnZone,
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DwellCounter {
    pub hand: Hand,
    pub candidate: Candidate,
    pub frames: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MonitorState {
    pub phase: Phase,
    /// Sorted by (hand, candidate).
    pub dwell: Vec<DwellCounter>,
    pub last_frame: BTreeMap<Hand, Frame>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorConfig {
    pub dwell_frames: u32,
    /// Meters added on every side of candidate boxes.
    pub region_margin: f64,
    pub allow_deviant_pick: bool,
    /// Show the cross marker on wrong picks.
    pub error_feedback: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            dwell_frames: 5,
            region_margin: 0.01,
            allow_deviant_pick: true,
            error_feedback: true,
        }
    }
}

/// A placement target or alternative, already inflated by the region margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub placement: Placement,
    pub footprint: FootprintBox3D,
    pub is_target: bool,
}

/// What the monitor sees on one frame.
#[derive(Debug, Clone, Copy)]
pub struct MonitorContext<'a> {
    pub step: Option<&'a PlanStep>,
    /// Live tracks that may be picked.
    pub tracks: &'a [Track],
    /// Placement regions for the held type; ignored while idle.
    pub regions: &'a [Region],
    pub return_zone: FootprintBox3D,
    pub config: &'a MonitorConfig,
}

/// Target first (when the held type matches the step), then every legal
/// alternative for the held type. Empty when none of that type is left.
pub fn placement_regions(
    state: &AssemblyState,
    catalog: &Catalog,
    lattice: &Lattice,
    step: &PlanStep,
    held_type: TypeId,
    margin: f64,
) -> Result<Vec<Region>, AssemblyError> {
    let mut out = Vec::new();
    let mut target_key = None;
    if step.action == StepAction::Add && step.type_id == held_type {
        target_key = Some(step.placement.canonical_key(catalog)?);
        out.push(Region {
            placement: step.placement,
            footprint: step.place_region.inflated(margin),
            is_target: true,
        });
    }
    if state.inventory.get(held_type) == 0 {
        return Ok(out);
    }
    for p in legal_placements(state, catalog, held_type, &lattice.bounds())? {
        if Some(p.canonical_key(catalog)?) == target_key {
            continue;
        }
        out.push(Region {
            placement: p,
            footprint: lattice.region_box(&p, catalog)?.inflated(margin),
            is_target: false,
        });
    }
    Ok(out)
}

struct Hit {
    candidate: Candidate,
    footprint: FootprintBox3D,
    preferred: bool,
}

fn candidates_for(mstate: &MonitorState, sample: &HandSample, ctx: &MonitorContext) -> Vec<Hit> {
    let margin = ctx.config.region_margin;
    let mut out = Vec::new();
    match mstate.phase {
        Phase::Idle => {
            let bound = ctx.step.and_then(|s| s.pick_track);
            for t in ctx.tracks {
                out.push(Hit {
                    candidate: Candidate::Track { track_id: t.track_id },
                    footprint: t.footprint.inflated(margin),
                    preferred: Some(t.track_id) == bound,
                });
            }
            if let Some(step) = ctx.step.filter(|s| s.action == StepAction::Remove) {
                if let Some(region) = step.pick_region {
                    out.push(Hit {
                        candidate: Candidate::Instance { instance_id: step.instance_id },
                        footprint: region.inflated(margin),
                        preferred: true,
                    });
                }
            }
        }
        Phase::Holding { hand, origin, source, left_origin, .. } if hand == sample.hand => {
            let removing = matches!(source, PickSource::Instance { .. });
            if removing {
                out.push(Hit {
                    candidate: Candidate::ReturnZone,
                    footprint: ctx.return_zone.inflated(margin),
                    preferred: true,
                });
            } else {
                for r in ctx.regions {
                    out.push(Hit {
                        candidate: Candidate::Region { key: r.placement.key() },
                        footprint: r.footprint,
                        preferred: r.is_target,
                    });
                }
            }
            if left_origin {
                out.push(Hit {
                    candidate: Candidate::Origin,
                    footprint: origin.inflated(margin),
                    preferred: false,
                });
            }
        }
        _ => {}
    }
    out.retain(|h| point_in_box(&sample.position, &h.footprint));
    out
}

/// Feeds one hand sample through the state machine. Samples that do not
/// advance their hand's frame are ignored.
pub fn observe_hand(
    mstate: &MonitorState,
    sample: &HandSample,
    ctx: &MonitorContext,
) -> (MonitorState, Vec<InteractionEvent>) {
    if mstate.last_frame.get(&sample.hand).is_some_and(|&f| sample.frame <= f) {
        return (mstate.clone(), Vec::new());
    }
    let mut next = mstate.clone();
    next.last_frame.insert(sample.hand, sample.frame);

    if let Phase::Placed { hand, region } = next.phase {
        if hand == sample.hand && !point_in_box(&sample.position, &region.inflated(ctx.config.region_margin)) {
            next.phase = Phase::Idle;
        }
        if hand == sample.hand || !matches!(next.phase, Phase::Idle) {
            next.dwell.retain(|d| d.hand != sample.hand);
            return (next, Vec::new());
        }
    }

    if let Phase::Holding { hand, origin, ref mut left_origin, .. } = next.phase {
        if hand == sample.hand && !point_in_box(&sample.position, &origin.inflated(ctx.config.region_margin)) {
            *left_origin = true;
        }
    }
    let hits = candidates_for(&next, sample, ctx);
    let mut counters: BTreeMap<Candidate, u32> = next
        .dwell
        .iter()
        .filter(|d| d.hand == sample.hand)
        .map(|d| (d.candidate, d.frames))
        .collect();
    counters.retain(|c, _| hits.iter().any(|h| h.candidate == *c));
    for h in &hits {
        *counters.entry(h.candidate).or_insert(0) += 1;
    }
    let dwell = ctx.config.dwell_frames.max(1);
    let fired = hits
        .iter()
        .filter(|h| counters[&h.candidate] == dwell)
        .min_by(|a, b| {
            let da = (a.footprint.center - sample.position).norm();
            let db = (b.footprint.center - sample.position).norm();
            da.total_cmp(&db)
                .then(b.preferred.cmp(&a.preferred))
                .then(a.candidate.cmp(&b.candidate))
        });

    next.dwell.retain(|d| d.hand != sample.hand);
    next.dwell.extend(counters.iter().map(|(c, f)| DwellCounter {
        hand: sample.hand,
        candidate: *c,
        frames: *f,
    }));
    next.dwell.sort_by_key(|d| (d.hand, d.candidate));

    let Some(hit) = fired else {
        return (next, Vec::new());
    };
    let step_index = ctx.step.map(|s| s.step_index);
    let center = hit.footprint.center;
    let mut event = InteractionEvent {
        kind: EventKind::Release,
        frame: sample.frame,
        hand: sample.hand,
        target: EventTarget::Origin,
        step_index,
        type_id: 0,
        feedback: None,
    };
    match (hit.candidate, next.phase) {
        (Candidate::Track { track_id }, Phase::Idle) => {
            let track = ctx.tracks.iter().find(|t| t.track_id == track_id).expect("hit comes from tracks");
            let correct = ctx
                .step
                .is_some_and(|s| s.action == StepAction::Add && s.pick_track == Some(track_id));
            event.target = EventTarget::Track { track_id };
            event.type_id = track.class_id;
            if correct {
                event.kind = EventKind::PickCorrect;
                event.feedback = Some(Feedback { marker: Marker::Check, position: track.footprint.center });
            } else {
                event.kind = EventKind::PickWrong;
                if ctx.config.error_feedback {
                    event.feedback = Some(Feedback { marker: Marker::Cross, position: track.footprint.center });
                }
            }
            if correct || ctx.config.allow_deviant_pick {
                next.phase = Phase::Holding {
                    hand: sample.hand,
                    type_id: track.class_id,
                    source: PickSource::Track { track_id },
                    origin: track.footprint,
                    correct,
                    left_origin: false,
                };
            }
        }
        (Candidate::Instance { instance_id }, Phase::Idle) => {
            let step = ctx.step.expect("instance candidates need a removal step");
            event.kind = EventKind::PickCorrect;
            event.target = EventTarget::Instance { instance_id };
            event.type_id = step.type_id;
            event.feedback = Some(Feedback { marker: Marker::Check, position: center });
            next.phase = Phase::Holding {
                hand: sample.hand,
                type_id: step.type_id,
                source: PickSource::Instance { instance_id },
                origin: step.pick_region.unwrap_or(hit.footprint),
                correct: true,
                left_origin: false,
            };
        }
        (Candidate::Region { key }, Phase::Holding { type_id, .. }) => {
            let region = ctx
                .regions
                .iter()
                .find(|r| r.placement.key() == key)
                .expect("hit comes from regions");
            event.type_id = type_id;
            event.target = EventTarget::Placement { placement: region.placement };
            if region.is_target {
                event.kind = EventKind::PlaceCorrect;
                event.feedback = Some(Feedback { marker: Marker::Check, position: region.footprint.center });
            } else {
                event.kind = EventKind::PlaceDeviation;
            }
            next.phase = Phase::Placed { hand: sample.hand, region: region.footprint };
        }
        (Candidate::ReturnZone, Phase::Holding { type_id, .. }) => {
            event.kind = EventKind::PlaceCorrect;
            event.type_id = type_id;
            event.target = EventTarget::ReturnZone;
            event.feedback = Some(Feedback { marker: Marker::Check, position: center });
            next.phase = Phase::Placed { hand: sample.hand, region: ctx.return_zone };
        }
        (Candidate::Origin, Phase::Holding { type_id, origin, .. }) => {
            event.kind = EventKind::Release;
            event.type_id = type_id;
            next.phase = Phase::Placed { hand: sample.hand, region: origin };
        }
        _ => return (next, Vec::new()),
    }
    next.dwell.retain(|d| d.hand != sample.hand);
    (next, vec![event])
}
