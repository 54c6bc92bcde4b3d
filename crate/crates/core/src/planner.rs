//! Assembly sequencing and step binding.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{placements_overlap, AssemblyState, InstanceId, Lattice, Placement};
use crate::catalog::{Catalog, CatalogError, TypeId};
use crate::geometry::FootprintBox3D;
use crate::twin::{TrackId, TwinState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("model has no placements")]
    EmptyModel,
    #[error("placements {0} and {1} overlap")]
    OverlappingPlacements(InstanceId, InstanceId),
    #[error("model is not connected")]
    DisconnectedModel,
    #[error("base instance {0} is not in the model")]
    UnknownBase(InstanceId),
    #[error("plan has no pending step")]
    PlanComplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    #[default]
    Layer,
    Graph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    #[default]
    Add,
    /// Take a placed part off the structure and set it down in the return zone.
    Remove,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    #[default]
    Pending,
    Active,
    Done,
    Deviated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step_index: usize,
    pub action: StepAction,
    pub instance_id: InstanceId,
    pub type_id: TypeId,
    pub placement: Placement,
    pub pick_region: Option<FootprintBox3D>,
    /// Twin track bound for the pick; `None` for removals.
    pub pick_track: Option<TrackId>,
    pub place_region: FootprintBox3D,
    pub status: StepStatus,
    #[serde(default)]
    pub part_not_visible: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub mode: PlanMode,
}

impl Plan {
    pub fn is_complete(&self) -> bool {
        self.steps
            .iter()
            .all(|s| matches!(s.status, StepStatus::Done | StepStatus::Deviated))
    }

    /// Index of the first step that is neither done nor deviated.
    pub fn next_open(&self) -> Option<usize> {
        self.steps
            .iter()
            .position(|s| matches!(s.status, StepStatus::Pending | StepStatus::Active))
    }

    pub fn instance_order(&self) -> Vec<InstanceId> {
        self.steps.iter().map(|s| s.instance_id).collect()
    }
}

pub fn add_step(
    index: usize,
    placement: &Placement,
    catalog: &Catalog,
    lattice: &Lattice,
) -> Result<PlanStep, CatalogError> {
    Ok(PlanStep {
        step_index: index,
        action: StepAction::Add,
        instance_id: placement.instance_id,
        type_id: placement.type_id,
        placement: *placement,
        pick_region: None,
        pick_track: None,
        place_region: lattice.region_box(placement, catalog)?,
        status: StepStatus::Pending,
        part_not_visible: false,
    })
}

pub fn remove_step(
    index: usize,
    placement: &Placement,
    catalog: &Catalog,
    lattice: &Lattice,
) -> Result<PlanStep, CatalogError> {
    Ok(PlanStep {
        step_index: index,
        action: StepAction::Remove,
        instance_id: placement.instance_id,
        type_id: placement.type_id,
        placement: *placement,
        pick_region: Some(lattice.region_box(placement, catalog)?),
        pick_track: None,
        place_region: lattice.return_zone_box(),
        status: StepStatus::Pending,
        part_not_visible: false,
    })
}

fn check_model(model: &AssemblyState, catalog: &Catalog) -> Result<(), PlannerError> {
    if model.is_empty() {
        return Err(PlannerError::EmptyModel);
    }
    for (i, a) in model.placements.iter().enumerate() {
        for b in &model.placements[i + 1..] {
            if placements_overlap(a, b, catalog)? {
                return Err(PlannerError::OverlappingPlacements(a.instance_id, b.instance_id));
            }
        }
    }
    Ok(())
}

/// Layer by layer: (z, y, x, instance id).
pub fn sequence_layered(model: &AssemblyState, catalog: &Catalog, lattice: &Lattice) -> Result<Plan, PlannerError> {
    check_model(model, catalog)?;
    let mut order: Vec<&Placement> = model.placements.iter().collect();
    order.sort_by_key(|p| (p.cell[2], p.cell[1], p.cell[0], p.instance_id));
    let steps = order
        .into_iter()
        .enumerate()
        .map(|(i, p)| add_step(i, p, catalog, lattice))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Plan {
        steps,
        mode: PlanMode::Layer,
    })
}

/// Lowest z, then lowest id.
pub fn default_base(model: &AssemblyState) -> Option<InstanceId> {
    model
        .placements
        .iter()
        .min_by_key(|p| (p.cell[2], p.instance_id))
        .map(|p| p.instance_id)
}

/// Connectivity-preserving order: each step engages at least one edge with
/// the instances before it, maximizing engaged edges, lower id first.
pub fn sequence_graph(
    model: &AssemblyState,
    base: Option<InstanceId>,
    catalog: &Catalog,
    lattice: &Lattice,
) -> Result<Plan, PlannerError> {
    check_model(model, catalog)?;
    let base = match base {
        Some(b) => b,
        None => default_base(model).ok_or(PlannerError::EmptyModel)?,
    };
    if model.get(base).is_none() {
        return Err(PlannerError::UnknownBase(base));
    }
    let order = graph_order(model, &BTreeSet::new(), Some(base))?;
    let by_id: BTreeMap<InstanceId, &Placement> =
        model.placements.iter().map(|p| (p.instance_id, p)).collect();
    let steps = order
        .iter()
        .enumerate()
        .map(|(i, id)| add_step(i, by_id[id], catalog, lattice))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Plan {
        steps,
        mode: PlanMode::Graph,
    })
}

/// Greedy frontier order over the instances of `model` not in `built`.
/// With an empty `built`, `base` starts the order.
pub fn graph_order(
    model: &AssemblyState,
    built: &BTreeSet<InstanceId>,
    base: Option<InstanceId>,
) -> Result<Vec<InstanceId>, PlannerError> {
    let mut engaged: BTreeMap<InstanceId, usize> = BTreeMap::new();
    let mut neighbors: BTreeMap<InstanceId, Vec<InstanceId>> = BTreeMap::new();
    for e in &model.edges {
        neighbors.entry(e.instance_a).or_default().push(e.instance_b);
        neighbors.entry(e.instance_b).or_default().push(e.instance_a);
    }
    let mut done: BTreeSet<InstanceId> = BTreeSet::new();
    let mut order = Vec::new();
    let mut remaining: BTreeSet<InstanceId> = model
        .placements
        .iter()
        .map(|p| p.instance_id)
        .filter(|id| !built.contains(id))
        .collect();

    let mark = |id: InstanceId, done: &mut BTreeSet<InstanceId>, engaged: &mut BTreeMap<InstanceId, usize>| {
        done.insert(id);
        engaged.remove(&id);
        for &n in neighbors.get(&id).into_iter().flatten() {
            if !done.contains(&n) {
                *engaged.entry(n).or_default() += 1;
            }
        }
    };
    for &b in built {
        mark(b, &mut done, &mut engaged);
    }
    if built.is_empty() {
        let Some(b) = base.or_else(|| default_base(model)) else {
            return Ok(order);
        };
        remaining.remove(&b);
        mark(b, &mut done, &mut engaged);
        order.push(b);
    }
    while !remaining.is_empty() {
        let next = engaged
            .iter()
            .filter(|(id, _)| remaining.contains(id))
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(id, _)| *id)
            .ok_or(PlannerError::DisconnectedModel)?;
        remaining.remove(&next);
        mark(next, &mut done, &mut engaged);
        order.push(next);
    }
    Ok(order)
}

/// Resolves the first open step against the twin. An existing binding is
/// kept while its track stays live; otherwise the lowest live track id of
/// the step's type that is not in `excluded` is bound.
pub fn current_step(plan: &Plan, twin: &TwinState, excluded: &BTreeSet<TrackId>) -> Result<PlanStep, PlannerError> {
    let idx = plan.next_open().ok_or(PlannerError::PlanComplete)?;
    let mut step = plan.steps[idx].clone();
    if step.action == StepAction::Remove {
        step.status = StepStatus::Active;
        step.part_not_visible = false;
        return Ok(step);
    }
    let usable = |id: TrackId| !excluded.contains(&id);
    let kept = step
        .pick_track
        .and_then(|id| twin.get(id))
        .filter(|t| t.class_id == step.type_id && usable(t.track_id));
    let track = kept.or_else(|| {
        twin.tracks
            .iter()
            .filter(|t| t.class_id == step.type_id && usable(t.track_id))
            .min_by_key(|t| t.track_id)
    });
    match track {
        Some(t) => {
            step.pick_track = Some(t.track_id);
            step.pick_region = Some(t.footprint);
            step.status = StepStatus::Active;
            step.part_not_visible = false;
        }
        None => {
            step.pick_track = None;
            step.pick_region = None;
            step.status = StepStatus::Pending;
            step.part_not_visible = true;
        }
    }
    Ok(step)
}
