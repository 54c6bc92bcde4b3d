//! Proxy assembler: turns the session's current instruction into hand motion.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::FootprintBox3D;
use crate::monitor::{EventKind, Hand, HandSample, InteractionEvent, Phase, PickSource, Region};
use crate::planner::{PlanStep, StepAction};
use crate::twin::{Frame, Track};

/// What the assembler means to do with the next instruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "intent", rename_all = "snake_case")]
pub enum Intent {
    /// Pick the indicated part and place it on its target.
    Follow,
    /// Pick a part the instruction does not ask for, then put it back.
    WrongPick,
    /// Pick the indicated part, then put it back.
    PickRelease,
    /// Pick the indicated part and place it somewhere legal but different.
    Deviate {
        #[serde(default)]
        cell: Option<[i32; 3]>,
    },
}

fn default_speed() -> f64 {
    0.03
}
fn default_hover() -> f64 {
    0.2
}
fn default_rest() -> [f64; 3] {
    [-0.1, -0.1, 0.25]
}
fn default_extra() -> u32 {
    3
}
fn default_retries() -> u32 {
    3
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(default)]
    pub intents: Vec<Intent>,
    /// Keep following the plan once the intents run out.
    #[serde(default = "default_true")]
    pub then_follow: bool,
    #[serde(default)]
    pub hand: Hand,
    /// Meters per frame.
    #[serde(default = "default_speed")]
    pub speed: f64,
    /// Travel height above the table, meters.
    #[serde(default = "default_hover")]
    pub hover: f64,
    #[serde(default = "default_rest")]
    pub rest: [f64; 3],
    /// Frames held beyond the monitor's dwell threshold.
    #[serde(default = "default_extra")]
    pub dwell_extra: u32,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            intents: Vec::new(),
            then_follow: true,
            hand: Hand::Right,
            speed: default_speed(),
            hover: default_hover(),
            rest: default_rest(),
            dwell_extra: default_extra(),
            max_retries: default_retries(),
        }
    }
}

/// Intended versus recognised interactions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentStats {
    pub correct_picks: u32,
    pub correct_picks_confirmed: u32,
    pub wrong_picks: u32,
    pub wrong_picks_flagged: u32,
    pub places: u32,
    pub places_confirmed: u32,
    pub deviations: u32,
    pub deviations_detected: u32,
    pub releases: u32,
    pub releases_confirmed: u32,
}

impl IntentStats {
    pub fn intended(&self) -> u32 {
        self.correct_picks + self.wrong_picks + self.places + self.deviations + self.releases
    }

    pub fn recognised(&self) -> u32 {
        self.correct_picks_confirmed
            + self.wrong_picks_flagged
            + self.places_confirmed
            + self.deviations_detected
            + self.releases_confirmed
    }
}

/// Session state the agent may look at on one frame.
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub frame: Frame,
    pub step: Option<&'a PlanStep>,
    /// Pickable tracks.
    pub tracks: &'a [Track],
    pub phase: &'a Phase,
    /// Placement regions for the held type.
    pub regions: &'a [Region],
    pub return_zone: FootprintBox3D,
    pub dwell_frames: u32,
    /// Lattice cell edge, meters.
    pub cell: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Expect {
    PickCorrect,
    PickWrong,
    Place,
    Deviation,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Ready,
    Picking { expect: Expect, outcome: Option<EventKind>, removal: bool },
    Placing { expect: Expect, outcome: Option<EventKind>, removal: bool },
}

#[derive(Debug, Clone)]
pub struct HandAgent {
    config: AgentConfig,
    next_intent: usize,
    retries: u32,
    position: Vector3<f64>,
    path: VecDeque<Vector3<f64>>,
    stage: Stage,
    /// The held part came from a correct pick that should be placed.
    place_after_pick: bool,
    removal: bool,
    pub stats: IntentStats,
}

impl HandAgent {
    pub fn new(config: AgentConfig) -> Self {
        let rest = Vector3::from(config.rest);
        HandAgent {
            config,
            next_intent: 0,
            retries: 0,
            position: rest,
            path: VecDeque::new(),
            stage: Stage::Ready,
            place_after_pick: false,
            removal: false,
            stats: IntentStats::default(),
        }
    }

    pub fn hand(&self) -> Hand {
        self.config.hand
    }

    /// No motion planned and nothing left to do.
    pub fn finished(&self) -> bool {
        self.path.is_empty() && self.stage == Stage::Ready && self.current_intent().is_none()
    }

    fn current_intent(&self) -> Option<Intent> {
        match self.config.intents.get(self.next_intent) {
            Some(i) => Some(*i),
            None if self.config.then_follow => Some(Intent::Follow),
            None => None,
        }
    }

    fn advance(&mut self) {
        if self.next_intent < self.config.intents.len() {
            self.next_intent += 1;
        }
        self.retries = 0;
    }

    fn retry(&mut self) {
        self.retries += 1;
        if self.retries > self.config.max_retries {
            self.advance();
        }
    }

    fn move_to(&mut self, to: Vector3<f64>, steps: usize) {
        let from = self.path.back().copied().unwrap_or(self.position);
        for i in 1..=steps {
            self.path.push_back(from.lerp(&to, i as f64 / steps as f64));
        }
    }

    /// Travel at hover height, descend onto `target`, hold, rise again.
    /// Hover stays 5 cm above every region in view.
    fn plan_visit(&mut self, target: Vector3<f64>, dwell: u32, regions: &[Region]) {
        let ceiling = regions
            .iter()
            .map(|r| r.footprint.center.z + r.footprint.half_extents.z)
            .fold(target.z, f64::max);
        let hover = self.config.hover.max(ceiling + 0.05);
        let at = self.position;
        if (at.z - hover).abs() > 1e-12 {
            self.move_to(Vector3::new(at.x, at.y, hover), 2);
        }
        let above = Vector3::new(target.x, target.y, hover);
        let dist = (above - Vector3::new(at.x, at.y, hover)).norm();
        self.move_to(above, (dist / self.config.speed).ceil().max(1.0) as usize);
        self.move_to(target, 2);
        for _ in 0..dwell + self.config.dwell_extra {
            self.path.push_back(target);
        }
        self.move_to(above, 2);
    }

    pub fn observe(&mut self, events: &[InteractionEvent]) {
        for e in events.iter().filter(|e| e.hand == self.config.hand) {
            match (&mut self.stage, e.kind) {
                (Stage::Picking { expect, outcome, .. }, EventKind::PickCorrect | EventKind::PickWrong) if outcome.is_none() => {
                    *outcome = Some(e.kind);
                    match (*expect, e.kind) {
                        (Expect::PickCorrect, EventKind::PickCorrect) => self.stats.correct_picks_confirmed += 1,
                        (Expect::PickWrong, EventKind::PickWrong) => self.stats.wrong_picks_flagged += 1,
                        _ => {}
                    }
                }
                (Stage::Placing { expect, outcome, .. }, EventKind::PlaceCorrect | EventKind::PlaceDeviation | EventKind::Release)
                    if outcome.is_none() =>
                {
                    *outcome = Some(e.kind);
                    match (*expect, e.kind) {
                        (Expect::Place, EventKind::PlaceCorrect) => self.stats.places_confirmed += 1,
                        (Expect::Deviation, EventKind::PlaceDeviation) => self.stats.deviations_detected += 1,
                        (Expect::Release, EventKind::Release) => self.stats.releases_confirmed += 1,
                        _ => {}
                    }
                }
                _ => {}
            }
        }
    }

    fn sample(&mut self, frame: Frame) -> Option<HandSample> {
        let p = self.path.pop_front()?;
        self.position = p;
        Some(HandSample { frame, position: p, hand: self.config.hand })
    }

    pub fn next_sample(&mut self, view: &AgentView) -> Option<HandSample> {
        if !self.path.is_empty() {
            return self.sample(view.frame);
        }
        let holding = match *view.phase {
            Phase::Holding { hand, origin, source, .. } if hand == self.config.hand => Some((origin, source)),
            _ => None,
        };
        let intent = self.current_intent();
        match self.stage {
            Stage::Picking { expect, outcome, removal } => {
                self.stage = Stage::Ready;
                self.removal = removal;
                if holding.is_none() {
                    match (expect, outcome) {
                        (Expect::PickWrong, Some(EventKind::PickWrong)) => self.advance(),
                        _ => self.retry(),
                    }
                }
                self.place_after_pick = outcome == Some(EventKind::PickCorrect)
                    && (removal || matches!(intent, Some(Intent::Follow | Intent::Deviate { .. })));
            }
            Stage::Placing { expect, outcome, removal } => {
                self.stage = Stage::Ready;
                if holding.is_some() {
                    self.retry();
                } else {
                    let done = match (expect, outcome) {
                        (Expect::Place, Some(EventKind::PlaceCorrect)) => true,
                        (Expect::Deviation, Some(EventKind::PlaceDeviation)) => true,
                        (Expect::Release, Some(EventKind::Release)) => {
                            matches!(intent, Some(Intent::WrongPick | Intent::PickRelease))
                        }
                        _ => false,
                    };
                    match (done, removal) {
                        (true, true) => self.retries = 0,
                        (true, false) => self.advance(),
                        (false, _) => self.retry(),
                    }
                    self.place_after_pick = false;
                }
            }
            Stage::Ready => {}
        }
        if let Some((origin, source)) = holding {
            self.plan_place(view, origin, source);
        } else {
            self.plan_pick(view);
        }
        self.sample(view.frame)
    }

    fn plan_place(&mut self, view: &AgentView, origin: FootprintBox3D, source: PickSource) {
        let intent = self.current_intent().unwrap_or(Intent::Follow);
        let removing = matches!(source, PickSource::Instance { .. });
        let target = view.regions.iter().find(|r| r.is_target);
        let (expect, to) = if (removing || self.removal) && self.place_after_pick {
            (Expect::Place, view.return_zone.center)
        } else if !self.place_after_pick {
            (Expect::Release, origin.center)
        } else {
            match (intent, target) {
                (Intent::Follow, Some(t)) => (Expect::Place, t.footprint.center),
                (Intent::Deviate { cell }, Some(t)) => {
                    let alt = view
                        .regions
                        .iter()
                        .filter(|r| !r.is_target)
                        .filter(|r| cell.is_none_or(|c| r.placement.cell == c))
                        .find(|r| (r.footprint.center - t.footprint.center).norm() >= view.cell * 0.99);
                    match alt {
                        Some(r) => (Expect::Deviation, r.footprint.center),
                        None => (Expect::Place, t.footprint.center),
                    }
                }
                _ => (Expect::Release, origin.center),
            }
        };
        match expect {
            Expect::Place => self.stats.places += 1,
            Expect::Deviation => self.stats.deviations += 1,
            Expect::Release => self.stats.releases += 1,
            _ => {}
        }
        self.stage = Stage::Placing { expect, outcome: None, removal: self.removal && removing };
        self.plan_visit(to, view.dwell_frames, view.regions);
    }

    fn plan_pick(&mut self, view: &AgentView) {
        let Some(intent) = self.current_intent() else { return };
        let Some(step) = view.step else { return };
        if step.action == StepAction::Remove {
            let Some(region) = step.pick_region else { return };
            self.stats.correct_picks += 1;
            self.stage = Stage::Picking { expect: Expect::PickCorrect, outcome: None, removal: true };
            self.plan_visit(region.center, view.dwell_frames, view.regions);
            return;
        }
        let Some(bound) = step.pick_track.and_then(|id| view.tracks.iter().find(|t| t.track_id == id)) else {
            return;
        };
        let (expect, track) = match intent {
            Intent::WrongPick => {
                let other = view
                    .tracks
                    .iter()
                    .filter(|t| t.track_id != bound.track_id)
                    .filter(|t| (t.smoothed_center - bound.smoothed_center).xy().norm() > 3.0 * view.cell)
                    .min_by_key(|t| (t.class_id == step.type_id, t.track_id));
                match other {
                    Some(t) => (Expect::PickWrong, t),
                    None => {
                        self.advance();
                        return;
                    }
                }
            }
            _ => (Expect::PickCorrect, bound),
        };
        match expect {
            Expect::PickWrong => self.stats.wrong_picks += 1,
            _ => self.stats.correct_picks += 1,
        }
        self.stage = Stage::Picking { expect, outcome: None, removal: false };
        self.plan_visit(track.footprint.center, view.dwell_frames, view.regions);
    }
}
