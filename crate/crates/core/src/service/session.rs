//! One guided assembly: the frame loop tying sim, twin, planner, monitor and
//! replanner together.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::AtomicBool;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{apply_placement, remove_placement, AssemblyState, InstanceId, Placement};
use crate::catalog::TypeId;
use crate::monitor::{
    observe_hand, placement_regions, EventKind, EventTarget, Hand, HandSample, InteractionEvent, MonitorConfig,
    MonitorContext, MonitorState, Phase, PickSource, Region,
};
use crate::planner::{
    add_step, current_step, graph_order, sequence_graph, sequence_layered, Plan, PlanMode, PlannerError, PlanStep,
    StepAction, StepStatus,
};
use crate::replanner::{replan, CandidatePlan, Deviation};
use crate::sim::{
    part_box, render_detections, scripted_hand, scripted_hands, AgentView, HandAgent, HandSource, LoosePart, Scenario,
    ScenarioFlags, World,
};
use crate::stability::{analyze, StabilityOptions, StabilityReport};
use crate::twin::{ingest_frame, Frame, Track, TrackId, TwinModel, TwinState};

use super::event_log::EventLog;
use super::metrics::{percentile, Metrics, Timing};
use super::ServiceError;

/// Client or driver input. Everything that changes a session goes through
/// one of these, so a log of them replays the session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Tick { frames: u64 },
    /// Live hand sample; from the first one on, scripted or simulated hands stop.
    Hand { sample: HandSample },
    SelectCandidate { index: usize },
    ModeFlags {
        #[serde(default)]
        mode: Option<PlanMode>,
        #[serde(default)]
        flags: Option<ScenarioFlags>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub edit_cost: u32,
    pub removals: usize,
    pub additions: usize,
    pub goal_satisfied: bool,
    pub stable: Option<bool>,
    pub stability_score: Option<f64>,
    pub state_hash: String,
}

impl CandidateSummary {
    pub fn of(index: usize, c: &CandidatePlan) -> Self {
        CandidateSummary {
            index,
            edit_cost: c.edit_cost,
            removals: c.removals.len(),
            additions: c.additions.len(),
            goal_satisfied: c.goal_satisfied,
            stable: c.stability.as_ref().map(|s| s.stable),
            stability_score: c.stability.as_ref().map(|s| s.score),
            state_hash: c.state_hash.clone(),
        }
    }
}

/// What a command produced, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Output {
    Event {
        event: InteractionEvent,
    },
    Replan {
        frame: Frame,
        deviation: Deviation,
        candidates: Vec<CandidateSummary>,
        truncated: bool,
        error: Option<String>,
    },
    Select {
        index: usize,
        state_hash: String,
        steps: usize,
    },
    /// Something the session worked around, such as a target that became
    /// unreachable after a failed replan.
    Notice {
        frame: Frame,
        message: String,
    },
}

/// What the assembler should do now.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInstruction {
    pub frame: Option<Frame>,
    pub step: Option<PlanStep>,
    pub mode: PlanMode,
    pub awaiting_selection: bool,
    pub complete: bool,
    pub steps_completed: u64,
    pub steps_remaining: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Held {
    part: Option<LoosePart>,
    track: Option<TrackId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Counters {
    pub frames: u64,
    pub steps_completed: u64,
    pub deviations: u64,
    pub replans: u64,
    pub replan_failures: u64,
    pub selections: u64,
    pub candidates_offered: u64,
    pub notices: u64,
    pub events: BTreeMap<String, u64>,
}

type RegionKey = (u64, usize, TypeId);

pub struct Session {
    scenario: Scenario,
    session_id: String,
    world: World,
    twin_model: TwinModel,
    frame: Frame,
    twin: TwinState,
    monitor: MonitorState,
    assembly: AssemblyState,
    target: AssemblyState,
    plan: Plan,
    step: Option<PlanStep>,
    flags: ScenarioFlags,
    loose: Vec<LoosePart>,
    next_part_id: u32,
    held: BTreeMap<Hand, Held>,
    consumed: BTreeSet<TrackId>,
    candidates: Vec<CandidatePlan>,
    agent: Option<HandAgent>,
    script: Option<Vec<HandSample>>,
    live_hand: bool,
    version: u64,
    regions_cache: Option<(RegionKey, Vec<Region>)>,
    counters: Counters,
    latencies_us: Vec<u64>,
    replan_time: Duration,
    started: Instant,
    log: EventLog,
}

/// Hex sha-256 prefix of the scenario document.
pub fn session_id(scenario: &Scenario) -> String {
    let digest = Sha256::digest(scenario.to_json().as_bytes());
    hex::encode(&digest[..8])
}

fn initial_plan(model: &AssemblyState, world: &World, mode: PlanMode) -> Result<Plan, PlannerError> {
    if model.is_empty() {
        return Ok(Plan { steps: Vec::new(), mode });
    }
    match mode {
        PlanMode::Layer => sequence_layered(model, &world.catalog, &world.lattice),
        PlanMode::Graph => sequence_graph(model, None, &world.catalog, &world.lattice),
    }
}

impl Session {
    /// `scenario` must already have its catalog and model inlined.
    pub fn new(scenario: Scenario) -> Result<Self, ServiceError> {
        let world = scenario.build()?;
        let plan = initial_plan(&world.model, &world, scenario.mode).map_err(|e| ServiceError::ScenarioInvalid(e.to_string()))?;
        let twin_model = TwinModel::new(&world.catalog, &world.lattice, world.plane, &scenario.twin);
        let (agent, script) = match &scenario.hand {
            HandSource::None => (None, None),
            HandSource::Script(s) => (None, Some(s.clone())),
            HandSource::Agent(cfg) => (Some(HandAgent::new(cfg.clone())), None),
        };
        let session_id = session_id(&scenario);
        let log = EventLog::new(&scenario, &session_id);
        Ok(Session {
            session_id,
            twin_model,
            frame: 0,
            twin: TwinState::default(),
            monitor: MonitorState::default(),
            assembly: AssemblyState::new(world.inventory()),
            target: world.model.clone(),
            plan,
            step: None,
            flags: scenario.flags,
            next_part_id: world.loose.len() as u32,
            loose: world.loose.clone(),
            held: BTreeMap::new(),
            consumed: BTreeSet::new(),
            candidates: Vec::new(),
            agent,
            script,
            live_hand: false,
            version: 0,
            regions_cache: None,
            counters: Counters::default(),
            latencies_us: Vec::new(),
            replan_time: Duration::ZERO,
            started: Instant::now(),
            log,
            world,
            scenario,
        })
    }

    pub fn id(&self) -> &str {
        &self.session_id
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Next frame to be processed.
    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn twin(&self) -> &TwinState {
        &self.twin
    }

    pub fn monitor(&self) -> &MonitorState {
        &self.monitor
    }

    pub fn assembly(&self) -> &AssemblyState {
        &self.assembly
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn candidates(&self) -> &[CandidatePlan] {
        &self.candidates
    }

    pub fn loose_parts(&self) -> &[LoosePart] {
        &self.loose
    }

    pub fn agent(&self) -> Option<&HandAgent> {
        self.agent.as_ref()
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn mode(&self) -> PlanMode {
        self.plan.mode
    }

    pub fn flags(&self) -> ScenarioFlags {
        self.flags
    }

    /// All frames processed.
    pub fn exhausted(&self) -> bool {
        self.frame >= self.world.frames
    }

    /// Plan finished with nothing held and no choice pending.
    pub fn complete(&self) -> bool {
        self.plan.is_complete() && self.candidates.is_empty() && !matches!(self.monitor.phase, Phase::Holding { .. })
    }

    /// Whether a headless run should stop before the frame span ends: the
    /// plan is complete or the simulated assembler has nothing left to do.
    pub fn should_stop(&self) -> bool {
        let holding = matches!(self.monitor.phase, Phase::Holding { .. });
        let agent_done = self.agent.as_ref().is_some_and(|a| a.finished());
        self.exhausted() || (self.flags.stop_when_complete && !holding && (self.complete() || agent_done))
    }

    pub fn instruction(&self) -> StepInstruction {
        StepInstruction {
            frame: self.twin.frame,
            step: self.step.clone(),
            mode: self.plan.mode,
            awaiting_selection: !self.candidates.is_empty(),
            complete: self.plan.is_complete() && self.candidates.is_empty(),
            steps_completed: self.counters.steps_completed,
            steps_remaining: self.steps_remaining(),
        }
    }

    fn steps_remaining(&self) -> usize {
        self.plan
            .steps
            .iter()
            .filter(|s| matches!(s.status, StepStatus::Pending | StepStatus::Active))
            .count()
    }

    pub fn stability(&self) -> Result<StabilityReport, ServiceError> {
        Ok(analyze(&self.assembly, &self.world.catalog, &self.world.lattice, self.stability_options())?)
    }

    fn stability_options(&self) -> StabilityOptions {
        StabilityOptions { rigid_joints: self.flags.rigid_joints }
    }

    fn monitor_config(&self) -> MonitorConfig {
        let mut c = self.scenario.monitor;
        c.allow_deviant_pick = self.flags.allow_deviant_pick;
        c.error_feedback &= !self.flags.error_feedback_graph_only || self.plan.mode == PlanMode::Graph;
        c
    }

    /// Runs a command and logs it once it succeeded.
    pub fn execute(&mut self, command: Command) -> Result<Vec<Output>, ServiceError> {
        let outputs = match &command {
            Command::Tick { frames } => self.tick(*frames)?,
            Command::Hand { sample } => {
                self.live_hand = true;
                self.process_sample(*sample)?
            }
            Command::SelectCandidate { index } => self.select_candidate(*index)?,
            Command::ModeFlags { mode, flags } => self.set_mode_flags(*mode, *flags)?,
        };
        self.log.command(&command);
        for o in &outputs {
            self.log.output(o);
        }
        Ok(outputs)
    }

    fn tick(&mut self, n: u64) -> Result<Vec<Output>, ServiceError> {
        let mut out = Vec::new();
        for _ in 0..n {
            if self.exhausted() {
                break;
            }
            out.extend(self.advance_frame()?);
        }
        Ok(out)
    }

    fn advance_frame(&mut self) -> Result<Vec<Output>, ServiceError> {
        let frame = self.frame;
        let t0 = Instant::now();
        let replan_before = self.replan_time;

        let (camera, detections) = render_detections(&self.world, frame, &self.loose)?;
        self.twin = ingest_frame(&self.twin_model, &self.twin, frame, &camera, &detections)?;
        let twin = &self.twin;
        self.consumed.retain(|id| twin.get(*id).is_some() || self.held.values().any(|h| h.track == Some(*id)));
        self.refresh_step()?;

        let mut out = Vec::new();
        if !self.live_hand {
            if let Some(script) = self.script.clone() {
                for hand in scripted_hands(&script) {
                    if let Some(sample) = scripted_hand(Some(&script), frame, hand)? {
                        out.extend(self.process_sample(sample)?);
                    }
                }
            } else if self.agent.is_some() {
                let regions = self.current_regions()?;
                let tracks = self.pickable_tracks();
                let view = AgentView {
                    frame,
                    step: self.step.as_ref(),
                    tracks: &tracks,
                    phase: &self.monitor.phase,
                    regions: &regions,
                    return_zone: self.world.lattice.return_zone_box(),
                    dwell_frames: self.scenario.monitor.dwell_frames,
                    cell: self.world.lattice.cell_size[0],
                };
                let sample = self.agent.as_mut().and_then(|a| a.next_sample(&view));
                if let Some(sample) = sample {
                    out.extend(self.process_sample(sample)?);
                }
            }
        }

        let spent = t0.elapsed().saturating_sub(self.replan_time - replan_before);
        self.latencies_us.push(spent.as_micros() as u64);
        self.counters.frames += 1;
        self.frame += 1;
        Ok(out)
    }

    fn pickable_tracks(&self) -> Vec<Track> {
        self.twin
            .tracks
            .iter()
            .filter(|t| !self.consumed.contains(&t.track_id))
            .cloned()
            .collect()
    }

    fn refresh_step(&mut self) -> Result<(), ServiceError> {
        if !self.candidates.is_empty() {
            self.step = None;
            return Ok(());
        }
        match current_step(&self.plan, &self.twin, &self.consumed) {
            Ok(step) => {
                let idx = self.plan.next_open().expect("current_step found an open step");
                let slot = &mut self.plan.steps[idx];
                slot.pick_track = step.pick_track;
                slot.pick_region = step.pick_region;
                slot.status = step.status;
                slot.part_not_visible = step.part_not_visible;
                self.step = Some(step);
            }
            Err(PlannerError::PlanComplete) => self.step = None,
            Err(e) => return Err(e.into()),
        }
        Ok(())
    }

    /// Placement regions for the part in hand; empty unless holding a loose part.
    fn current_regions(&mut self) -> Result<Vec<Region>, ServiceError> {
        let Phase::Holding { type_id, source: PickSource::Track { .. }, .. } = self.monitor.phase else {
            return Ok(Vec::new());
        };
        let Some(step) = &self.step else { return Ok(Vec::new()) };
        let key = (self.version, step.step_index, type_id);
        if let Some((k, regions)) = &self.regions_cache {
            if *k == key {
                return Ok(regions.clone());
            }
        }
        let regions = placement_regions(
            &self.assembly,
            &self.world.catalog,
            &self.world.lattice,
            step,
            type_id,
            self.scenario.monitor.region_margin,
        )?;
        self.regions_cache = Some((key, regions.clone()));
        Ok(regions)
    }

    fn process_sample(&mut self, sample: HandSample) -> Result<Vec<Output>, ServiceError> {
        let regions = self.current_regions()?;
        let tracks = self.pickable_tracks();
        let config = self.monitor_config();
        let step = self.step.clone();
        let ctx = MonitorContext {
            step: step.as_ref(),
            tracks: &tracks,
            regions: &regions,
            return_zone: self.world.lattice.return_zone_box(),
            config: &config,
        };
        let (next, events) = observe_hand(&self.monitor, &sample, &ctx);
        self.monitor = next;
        let mut out = Vec::new();
        for e in &events {
            *self.counters.events.entry(kind_name(e.kind).to_string()).or_default() += 1;
            out.push(Output::Event { event: *e });
            self.apply_event(e, &mut out)?;
        }
        if let Some(agent) = &mut self.agent {
            agent.observe(&events);
        }
        if !events.is_empty() {
            self.refresh_step()?;
        }
        Ok(out)
    }

    fn notice(&mut self, out: &mut Vec<Output>, frame: Frame, message: String) {
        log::warn!("frame {frame}: {message}");
        self.counters.notices += 1;
        out.push(Output::Notice { frame, message });
    }

    fn apply_event(&mut self, e: &InteractionEvent, out: &mut Vec<Output>) -> Result<(), ServiceError> {
        match (e.kind, e.target) {
            (EventKind::PickCorrect | EventKind::PickWrong, EventTarget::Track { track_id }) => {
                if matches!(self.monitor.phase, Phase::Holding { hand, .. } if hand == e.hand) {
                    self.take_part(e.hand, track_id);
                }
            }
            (EventKind::PickCorrect, EventTarget::Instance { .. }) => {
                self.held.insert(e.hand, Held::default());
            }
            (EventKind::PlaceCorrect, EventTarget::Placement { placement }) => {
                self.held.remove(&e.hand);
                self.place_target(placement, e.frame, out)?;
            }
            (EventKind::PlaceCorrect, EventTarget::ReturnZone) => {
                self.held.remove(&e.hand);
                self.finish_removal(e.frame, out)?;
            }
            (EventKind::PlaceDeviation, EventTarget::Placement { placement }) => {
                self.held.remove(&e.hand);
                self.deviate(placement, e.frame, out)?;
            }
            (EventKind::Release, _) => {
                if let Some(h) = self.held.remove(&e.hand) {
                    if let Some(p) = h.part {
                        self.return_loose(p);
                    }
                    if let Some(t) = h.track {
                        self.consumed.remove(&t);
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Lifts the loose part nearest the picked track off the table.
    fn take_part(&mut self, hand: Hand, track_id: TrackId) {
        let Some(track) = self.twin.get(track_id) else { return };
        let c = track.footprint.center.xy();
        let reach = 2.0 * self.world.lattice.cell_size[0].max(self.world.lattice.cell_size[1]);
        let nearest = self
            .loose
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p.footprint.center.xy() - c).norm()))
            .filter(|(_, d)| *d <= reach)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i);
        let part = nearest.map(|i| self.loose.remove(i));
        self.consumed.insert(track_id);
        self.held.insert(hand, Held { part, track: Some(track_id) });
    }

    fn return_loose(&mut self, part: LoosePart) {
        let at = self.loose.partition_point(|p| p.part_id < part.part_id);
        self.loose.insert(at, part);
    }

    fn open_index(&self) -> Option<usize> {
        self.plan.next_open()
    }

    fn place_target(&mut self, placement: Placement, frame: Frame, out: &mut Vec<Output>) -> Result<(), ServiceError> {
        let Some(idx) = self.open_index() else {
            self.notice(out, frame, "placement with no open step".into());
            return Ok(());
        };
        match apply_placement(&self.assembly, placement, &self.world.catalog) {
            Ok(next) => {
                self.assembly = next;
                self.plan.steps[idx].status = StepStatus::Done;
                self.counters.steps_completed += 1;
            }
            Err(err) => {
                self.plan.steps[idx].status = StepStatus::Deviated;
                self.notice(out, frame, format!("step {} skipped: {err}", self.plan.steps[idx].step_index));
            }
        }
        self.version += 1;
        Ok(())
    }

    fn finish_removal(&mut self, frame: Frame, out: &mut Vec<Output>) -> Result<(), ServiceError> {
        let Some(idx) = self.open_index().filter(|&i| self.plan.steps[i].action == StepAction::Remove) else {
            self.notice(out, frame, "return with no open removal step".into());
            return Ok(());
        };
        let step = self.plan.steps[idx].clone();
        match remove_placement(&self.assembly, step.instance_id, &self.world.catalog) {
            Ok(next) => {
                self.assembly = next;
                self.plan.steps[idx].status = StepStatus::Done;
                self.counters.steps_completed += 1;
                let zone = self.world.lattice.return_zone_box();
                let footprint = part_box(
                    &self.world.catalog,
                    &self.world.lattice,
                    step.type_id,
                    [zone.center.x, zone.center.y],
                )?;
                let part = LoosePart { part_id: self.next_part_id, type_id: step.type_id, footprint };
                self.next_part_id += 1;
                self.return_loose(part);
            }
            Err(err) => {
                self.plan.steps[idx].status = StepStatus::Deviated;
                self.notice(out, frame, format!("removal step {} skipped: {err}", step.step_index));
            }
        }
        self.version += 1;
        Ok(())
    }

    fn fresh_instance_id(&self) -> InstanceId {
        let planned = self.plan.steps.iter().map(|s| s.instance_id + 1).max().unwrap_or(0);
        let target = self.target.next_instance_id();
        self.assembly.next_instance_id().max(planned).max(target)
    }

    fn deviate(&mut self, placed: Placement, frame: Frame, out: &mut Vec<Output>) -> Result<(), ServiceError> {
        let Some(idx) = self.open_index() else {
            self.notice(out, frame, "deviation with no open step".into());
            return Ok(());
        };
        let step = self.plan.steps[idx].clone();
        let mut actual = placed;
        actual.instance_id = if placed.type_id == step.type_id && step.action == StepAction::Add {
            step.instance_id
        } else {
            self.fresh_instance_id()
        };
        match apply_placement(&self.assembly, actual, &self.world.catalog) {
            Ok(next) => self.assembly = next,
            Err(err) => {
                self.notice(out, frame, format!("deviation not applied: {err}"));
                return Ok(());
            }
        }
        self.plan.steps[idx].status = StepStatus::Deviated;
        self.counters.deviations += 1;
        self.version += 1;
        let deviation = Deviation { expected: step.placement, actual, step_index: step.step_index };
        self.run_replan(deviation, frame, out)
    }

    fn run_replan(&mut self, deviation: Deviation, frame: Frame, out: &mut Vec<Output>) -> Result<(), ServiceError> {
        self.counters.replans += 1;
        let cancel = AtomicBool::new(false);
        let t0 = Instant::now();
        let result = replan(
            &self.assembly,
            &deviation,
            &self.world.goals,
            &self.world.catalog,
            &self.world.lattice,
            &self.scenario.replan,
            self.stability_options(),
            Some(&cancel),
        );
        self.replan_time += t0.elapsed();
        match result {
            Ok(outcome) if !outcome.candidates.is_empty() => {
                let summaries = outcome.candidates.iter().enumerate().map(|(i, c)| CandidateSummary::of(i, c)).collect();
                self.counters.candidates_offered += outcome.candidates.len() as u64;
                out.push(Output::Replan {
                    frame,
                    deviation,
                    candidates: summaries,
                    truncated: outcome.truncated,
                    error: None,
                });
                self.candidates = outcome.candidates;
                self.step = None;
                if let Some(i) = self.flags.auto_select {
                    let i = i.min(self.candidates.len() - 1);
                    out.extend(self.select_candidate(i)?);
                }
            }
            other => {
                let message = match other {
                    Err(e) => e.to_string(),
                    Ok(_) => "replanning returned no candidates".to_string(),
                };
                log::warn!("frame {frame}: replanning failed: {message}; keeping the current plan");
                self.counters.replan_failures += 1;
                out.push(Output::Replan { frame, deviation, candidates: Vec::new(), truncated: false, error: Some(message) });
            }
        }
        Ok(())
    }

    /// Adopts a pending candidate as the plan.
    pub fn select_candidate(&mut self, index: usize) -> Result<Vec<Output>, ServiceError> {
        if self.candidates.is_empty() {
            return Err(ServiceError::NoPendingCandidates);
        }
        if index >= self.candidates.len() {
            return Err(ServiceError::IndexOutOfRange { index, len: self.candidates.len() });
        }
        let chosen = self.candidates.swap_remove(index);
        self.candidates.clear();
        let mode = self.plan.mode;
        self.plan = chosen.continuation;
        self.plan.mode = mode;
        self.target = chosen.final_state;
        self.counters.selections += 1;
        self.version += 1;
        self.refresh_step()?;
        Ok(vec![Output::Select { index, state_hash: chosen.state_hash, steps: self.plan.steps.len() }])
    }

    fn set_mode_flags(&mut self, mode: Option<PlanMode>, flags: Option<ScenarioFlags>) -> Result<Vec<Output>, ServiceError> {
        if let Some(f) = flags {
            self.flags = f;
        }
        if let Some(m) = mode {
            if m != self.plan.mode {
                self.resequence(m)?;
                self.version += 1;
            }
        }
        self.refresh_step()?;
        Ok(Vec::new())
    }

    /// Reorders the open additions for `mode`; finished steps and pending
    /// removals keep their place in front.
    fn resequence(&mut self, mode: PlanMode) -> Result<(), ServiceError> {
        let (closed, open): (Vec<PlanStep>, Vec<PlanStep>) = self
            .plan
            .steps
            .drain(..)
            .partition(|s| matches!(s.status, StepStatus::Done | StepStatus::Deviated));
        let (removals, mut adds): (Vec<PlanStep>, Vec<PlanStep>) =
            open.into_iter().partition(|s| s.action == StepAction::Remove);
        match mode {
            PlanMode::Layer => {
                adds.sort_by_key(|s| (s.placement.cell[2], s.placement.cell[1], s.placement.cell[0], s.instance_id));
            }
            PlanMode::Graph => {
                let built: BTreeSet<InstanceId> = self
                    .target
                    .placements
                    .iter()
                    .map(|p| p.instance_id)
                    .filter(|id| self.assembly.get(*id).is_some())
                    .collect();
                match graph_order(&self.target, &built, None) {
                    Ok(order) => {
                        let rank: BTreeMap<InstanceId, usize> = order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
                        adds.sort_by_key(|s| (rank.get(&s.instance_id).copied().unwrap_or(usize::MAX), s.instance_id));
                    }
                    Err(e) => log::warn!("graph order unavailable ({e}); keeping the current order"),
                }
            }
        }
        let mut steps: Vec<PlanStep> = closed.into_iter().chain(removals).collect();
        for s in adds {
            let mut fresh = add_step(0, &s.placement, &self.world.catalog, &self.world.lattice)?;
            fresh.status = StepStatus::Pending;
            steps.push(fresh);
        }
        for (i, s) in steps.iter_mut().enumerate() {
            s.step_index = i;
        }
        self.plan = Plan { steps, mode };
        Ok(())
    }

    /// Sha-256 over everything that evolves during a session.
    pub fn state_hash(&self) -> String {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            frame: Frame,
            assembly: &'a [Placement],
            plan: &'a Plan,
            twin: &'a TwinState,
            monitor: &'a MonitorState,
            loose: &'a [LoosePart],
            held: &'a BTreeMap<Hand, Held>,
            consumed: &'a BTreeSet<TrackId>,
            candidates: Vec<&'a str>,
            counters: &'a Counters,
        }
        let mut assembly = self.assembly.placements.clone();
        assembly.sort_by_key(|p| p.instance_id);
        let snap = Snapshot {
            frame: self.frame,
            assembly: &assembly,
            plan: &self.plan,
            twin: &self.twin,
            monitor: &self.monitor,
            loose: &self.loose,
            held: &self.held,
            consumed: &self.consumed,
            candidates: self.candidates.iter().map(|c| c.state_hash.as_str()).collect(),
            counters: &self.counters,
        };
        let bytes = serde_json::to_vec(&snap).expect("snapshot serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Closes the log with a footer and returns its text.
    pub fn finish(&mut self) -> String {
        let hash = self.state_hash();
        self.log.finish(self.counters.frames, &hash);
        self.log.text()
    }

    pub fn metrics(&self) -> Result<Metrics, ServiceError> {
        let catalog = &self.world.catalog;
        let stats = self.agent.as_ref().map(|a| a.stats.clone());
        let ratio = |num: u32, den: u32| (den > 0).then(|| num as f64 / den as f64);
        let stability = self.stability()?;
        Ok(Metrics {
            schema_version: super::METRICS_SCHEMA_VERSION,
            name: self.scenario.name.clone(),
            seed: self.scenario.seed,
            frames: self.counters.frames,
            steps_completed: self.counters.steps_completed,
            steps_remaining: self.steps_remaining(),
            plan_complete: self.plan.is_complete() && self.candidates.is_empty(),
            goals_satisfied: self.world.goals.satisfied_by(&self.assembly, catalog)?,
            structure_parts: self.assembly.len(),
            structure_height: self.assembly.height(catalog)?,
            stable: stability.stable,
            stability_score: stability.score,
            pick_confirmation_rate: stats.as_ref().and_then(|s| ratio(s.correct_picks_confirmed, s.correct_picks)),
            wrong_pick_flag_rate: stats.as_ref().and_then(|s| ratio(s.wrong_picks_flagged, s.wrong_picks)),
            accuracy: stats.as_ref().and_then(|s| ratio(s.recognised(), s.intended())),
            intents: stats,
            deviations: self.counters.deviations,
            replans: self.counters.replans,
            replan_failures: self.counters.replan_failures,
            candidates_offered: self.counters.candidates_offered,
            selections: self.counters.selections,
            notices: self.counters.notices,
            events: self.counters.events.clone(),
            state_hash: self.state_hash(),
        })
    }

    pub fn timing(&self) -> Timing {
        let mut l = self.latencies_us.clone();
        l.sort_unstable();
        Timing {
            schema_version: super::METRICS_SCHEMA_VERSION,
            frames: l.len() as u64,
            latency_p50_us: percentile(&l, 0.50),
            latency_p99_us: percentile(&l, 0.99),
            latency_max_us: l.last().copied().unwrap_or(0),
            replan_ms: self.replan_time.as_secs_f64() * 1e3,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        }
    }

    /// Per-frame engine latencies in microseconds, replanning excluded.
    pub fn latencies_us(&self) -> &[u64] {
        &self.latencies_us
    }
}

pub fn kind_name(kind: EventKind) -> &'static str {
    match kind {
        EventKind::PickCorrect => "pick_correct",
        EventKind::PickWrong => "pick_wrong",
        EventKind::PlaceCorrect => "place_correct",
        EventKind::PlaceDeviation => "place_deviation",
        EventKind::Release => "release",
    }
}
