//! Goal-directed replanning after a deviation.
//!
//! Best-first (A*) search over edit sequences: zero or more removals of
//! placed parts followed by zero or more additions. States are identified
//! by their sorted canonical placement keys.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assembly::{
    apply_placement_in_place, legal_placements, remove_placement_in_place, AssemblyError, AssemblyState,
    InstanceId, Lattice, Placement, PlacementKey,
};
use crate::catalog::{Catalog, CatalogError, TypeId};
use crate::planner::{add_step, graph_order, remove_step, Plan, PlanMode, PlannerError};
use crate::stability::{analyze, StabilityOptions, StabilityReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplanError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("no structure within reach satisfies the goals")]
    InfeasibleGoals,
    #[error("search stopped after {expanded} expansions without reaching the goals")]
    BudgetExceeded { expanded: usize },
    #[error("search cancelled")]
    Cancelled,
    #[error("invalid goals: {0}")]
    InvalidGoals(String),
    #[error("no pending candidates")]
    NoPendingCandidates,
    #[error("candidate index {index} out of range ({len} candidates)")]
    IndexOutOfRange { index: usize, len: usize },
}

impl From<CatalogError> for ReplanError {
    fn from(e: CatalogError) -> Self {
        ReplanError::Assembly(AssemblyError::Catalog(e))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalSet {
    /// Lattice units; the structure's top face must reach it.
    pub target_height: i32,
    pub max_components: usize,
    #[serde(default)]
    pub per_type_limits: BTreeMap<TypeId, usize>,
}

impl GoalSet {
    pub fn validate(&self) -> Result<(), ReplanError> {
        if self.target_height < 1 {
            return Err(ReplanError::InvalidGoals("target_height must be at least 1".into()));
        }
        if self.max_components < 1 {
            return Err(ReplanError::InvalidGoals("max_components must be at least 1".into()));
        }
        Ok(())
    }

    pub fn satisfied_by(&self, state: &AssemblyState, catalog: &Catalog) -> Result<bool, CatalogError> {
        Ok(state.height(catalog)? >= self.target_height
            && state.len() <= self.max_components
            && self
                .per_type_limits
                .iter()
                .all(|(t, &limit)| state.count_of(*t) <= limit))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deviation {
    pub expected: Placement,
    pub actual: Placement,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePlan {
    pub final_state: AssemblyState,
    pub continuation: Plan,
    pub edit_cost: u32,
    /// In removal order.
    pub removals: Vec<Placement>,
    /// In search order, with fresh instance ids.
    pub additions: Vec<Placement>,
    pub stability: Option<StabilityReport>,
    pub goal_satisfied: bool,
    /// Sha-256 of the final state's canonical keys.
    pub state_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplanConfig {
    pub k: usize,
    pub w_remove: u32,
    pub w_add: u32,
    pub diversity_min: usize,
    pub node_budget: usize,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        ReplanConfig {
            k: 3,
            w_remove: 2,
            w_add: 1,
            diversity_min: 1,
            node_budget: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplanOutcome {
    pub candidates: Vec<CandidatePlan>,
    /// The node budget ran out; candidates are the best found so far.
    pub truncated: bool,
    pub expanded: usize,
}

pub fn canonical_state_hash(keys: &[PlacementKey]) -> String {
    let text = serde_json::to_string(keys).expect("placement keys serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Number of keys in exactly one of the two sorted sets.
pub fn edit_distance(a: &[PlacementKey], b: &[PlacementKey]) -> usize {
    let sa: BTreeSet<&PlacementKey> = a.iter().collect();
    let sb: BTreeSet<&PlacementKey> = b.iter().collect();
    sa.symmetric_difference(&sb).count()
}

/// Tallest structure the available parts could reach: the
/// `max_components` tallest parts stacked, capped by the lattice.
pub fn height_upper_bound(
    current: &AssemblyState,
    goals: &GoalSet,
    catalog: &Catalog,
    lattice: &Lattice,
) -> Result<i32, CatalogError> {
    let mut totals: BTreeMap<TypeId, usize> = BTreeMap::new();
    for p in &current.placements {
        *totals.entry(p.type_id).or_default() += 1;
    }
    for (&t, &n) in &current.inventory.counts {
        *totals.entry(t).or_default() += n as usize;
    }
    let mut heights = Vec::new();
    for (t, n) in totals {
        let usable = n.min(goals.per_type_limits.get(&t).copied().unwrap_or(usize::MAX));
        heights.extend(std::iter::repeat_n(catalog.get(t)?.footprint[2] as i32, usable));
    }
    heights.sort_unstable_by(|a, b| b.cmp(a));
    let sum: i32 = heights.iter().take(goals.max_components).sum();
    Ok(sum.min(lattice.extent[2] as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Move {
    Root,
    Remove(InstanceId),
    StartAdding,
    Add(Placement),
}

struct Node {
    parent: usize,
    mv: Move,
    g: u32,
    adding: bool,
    state: Option<AssemblyState>,
}

struct Goal {
    node: usize,
    cost: u32,
    keys: Vec<PlacementKey>,
    hash: String,
    score: f64,
    stability: StabilityReport,
}

#[allow(clippy::too_many_arguments)]
pub fn replan(
    current: &AssemblyState,
    deviation: &Deviation,
    goals: &GoalSet,
    catalog: &Catalog,
    lattice: &Lattice,
    config: &ReplanConfig,
    stability: StabilityOptions,
    cancel: Option<&AtomicBool>,
) -> Result<ReplanOutcome, ReplanError> {
    goals.validate()?;
    if current.get(deviation.actual.instance_id).is_none() {
        return Err(AssemblyError::UnknownInstance(deviation.actual.instance_id).into());
    }
    let k = config.k.max(1);
    if height_upper_bound(current, goals, catalog, lattice)? < goals.target_height {
        return Err(ReplanError::InfeasibleGoals);
    }
    let max_dz = catalog.types().map(|t| t.footprint[2] as i32).max().unwrap_or(1).max(1);
    let heuristic = |s: &AssemblyState| -> Result<u32, CatalogError> {
        let deficit = (goals.target_height - s.height(catalog)?).max(0);
        Ok(config.w_add * ((deficit + max_dz - 1) / max_dz) as u32)
    };
    let adds_needed = |s: &AssemblyState| -> Result<usize, CatalogError> {
        let deficit = (goals.target_height - s.height(catalog)?).max(0);
        Ok(((deficit + max_dz - 1) / max_dz) as usize)
    };
    let bounds = lattice.bounds();

    let mut nodes: Vec<Node> = vec![Node {
        parent: 0,
        mv: Move::Root,
        g: 0,
        adding: false,
        state: Some(current.clone()),
    }];
    let mut best_g: HashMap<(Vec<PlacementKey>, bool), u32> = HashMap::new();
    best_g.insert((current.canonical_keys(catalog)?, false), 0);
    let mut open: BinaryHeap<Reverse<(u32, u64, usize)>> = BinaryHeap::new();
    let mut seq: u64 = 0;
    open.push(Reverse((heuristic(current)?, seq, 0)));
    let mut closed: BTreeSet<(Vec<PlacementKey>, bool)> = BTreeSet::new();
    let mut goal_keys: BTreeSet<Vec<PlacementKey>> = BTreeSet::new();
    let mut found: Vec<Goal> = Vec::new();
    let mut expanded = 0usize;
    let mut truncated = false;

    while let Some(Reverse((f, _, idx))) = open.pop() {
        if let Some(bound) = kth_cost(&found, k, config.diversity_min) {
            if f > bound {
                break;
            }
        }
        let state = match nodes[idx].state.take() {
            Some(s) => s,
            None => continue,
        };
        let keys = state.canonical_keys(catalog)?;
        let adding = nodes[idx].adding;
        if !closed.insert((keys.clone(), adding)) {
            continue;
        }
        let g = nodes[idx].g;

        if goals.satisfied_by(&state, catalog)? && goal_keys.insert(keys.clone()) {
            let report = analyze(&state, catalog, lattice, stability)?;
            found.push(Goal {
                node: idx,
                cost: g,
                hash: canonical_state_hash(&keys),
                keys: keys.clone(),
                score: report.score,
                stability: report,
            });
        }

        if expanded >= config.node_budget {
            truncated = true;
            break;
        }
        if expanded % 256 == 0 && cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(ReplanError::Cancelled);
        }
        expanded += 1;

        let mut children: Vec<(Move, AssemblyState, bool, u32)> = Vec::new();
        if !adding {
            for p in &state.placements {
                let mut next = state.clone();
                if remove_placement_in_place(&mut next, p.instance_id, catalog).is_ok() {
                    children.push((Move::Remove(p.instance_id), next, false, config.w_remove));
                }
            }
            children.push((Move::StartAdding, state.clone(), true, 0));
        } else if state.len() < goals.max_components {
            for t in catalog.type_ids() {
                if state.inventory.get(t) == 0
                    || goals.per_type_limits.get(&t).is_some_and(|&l| state.count_of(t) >= l)
                {
                    continue;
                }
                for p in legal_placements(&state, catalog, t, &bounds)? {
                    let mut next = state.clone();
                    if apply_placement_in_place(&mut next, p, catalog).is_ok() {
                        children.push((Move::Add(p), next, true, config.w_add));
                    }
                }
            }
        }
        for (mv, next, child_adding, w) in children {
            if next.len() + adds_needed(&next)? > goals.max_components {
                continue;
            }
            let ng = g + w;
            let key = (next.canonical_keys(catalog)?, child_adding);
            if closed.contains(&key) || best_g.get(&key).is_some_and(|&old| old <= ng) {
                continue;
            }
            let h = heuristic(&next)?;
            best_g.insert(key, ng);
            nodes.push(Node {
                parent: idx,
                mv,
                g: ng,
                adding: child_adding,
                state: Some(next),
            });
            seq += 1;
            open.push(Reverse((ng + h, seq, nodes.len() - 1)));
        }
    }

    if found.is_empty() {
        return Err(if truncated {
            ReplanError::BudgetExceeded { expanded }
        } else {
            ReplanError::InfeasibleGoals
        });
    }
    let chosen = rank_goals(found, k, config.diversity_min);
    let mut candidates = Vec::with_capacity(chosen.len());
    for goal in chosen {
        candidates.push(build_candidate(current, &nodes, &goal, catalog, lattice, goals)?);
    }
    Ok(ReplanOutcome {
        candidates,
        truncated,
        expanded,
    })
}

fn rank_order(a: &Goal, b: &Goal) -> std::cmp::Ordering {
    a.cost
        .cmp(&b.cost)
        .then(b.score.total_cmp(&a.score))
        .then(a.hash.cmp(&b.hash))
}

/// Greedy diverse selection in rank order.
fn select_diverse<'a>(ranked: impl Iterator<Item = &'a Goal>, k: usize, diversity_min: usize) -> Vec<&'a Goal> {
    let mut out: Vec<&Goal> = Vec::new();
    for g in ranked {
        if out.len() >= k {
            break;
        }
        if out.iter().all(|o| edit_distance(&o.keys, &g.keys) >= diversity_min) {
            out.push(g);
        }
    }
    out
}

fn kth_cost(found: &[Goal], k: usize, diversity_min: usize) -> Option<u32> {
    if found.len() < k {
        return None;
    }
    let mut ranked: Vec<&Goal> = found.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let chosen = select_diverse(ranked.into_iter(), k, diversity_min);
    (chosen.len() >= k).then(|| chosen[k - 1].cost)
}

fn rank_goals(mut found: Vec<Goal>, k: usize, diversity_min: usize) -> Vec<Goal> {
    found.sort_by(rank_order);
    let keep: Vec<usize> = {
        let chosen = select_diverse(found.iter(), k, diversity_min);
        chosen.iter().map(|g| g.node).collect()
    };
    found.into_iter().filter(|g| keep.contains(&g.node)).collect()
}

fn build_candidate(
    current: &AssemblyState,
    nodes: &[Node],
    goal: &Goal,
    catalog: &Catalog,
    lattice: &Lattice,
    goals: &GoalSet,
) -> Result<CandidatePlan, ReplanError> {
    let mut moves = Vec::new();
    let mut i = goal.node;
    while i != 0 {
        moves.push(nodes[i].mv);
        i = nodes[i].parent;
    }
    moves.reverse();

    let mut state = current.clone();
    let mut removals = Vec::new();
    let mut additions = Vec::new();
    let mut next_id = current.next_instance_id();
    for mv in moves {
        match mv {
            Move::Remove(id) => {
                removals.push(*state.get(id).expect("removal targets a placed instance"));
                remove_placement_in_place(&mut state, id, catalog)?;
            }
            Move::Add(p) => {
                let p = Placement { instance_id: next_id, ..p };
                next_id += 1;
                apply_placement_in_place(&mut state, p, catalog)?;
                additions.push(p);
            }
            Move::Root | Move::StartAdding => {}
        }
    }

    let kept: BTreeSet<InstanceId> = state
        .placements
        .iter()
        .map(|p| p.instance_id)
        .filter(|id| current.get(*id).is_some())
        .collect();
    let mut steps = Vec::new();
    for r in &removals {
        steps.push(remove_step(steps.len(), r, catalog, lattice)?);
    }
    for id in graph_order(&state, &kept, None)? {
        if kept.contains(&id) {
            continue;
        }
        let p = state.get(id).expect("ordered ids come from the state");
        steps.push(add_step(steps.len(), p, catalog, lattice)?);
    }
    let goal_satisfied = goals.satisfied_by(&state, catalog)?;
    Ok(CandidatePlan {
        final_state: state,
        continuation: Plan {
            steps,
            mode: PlanMode::Graph,
        },
        edit_cost: goal.cost,
        removals,
        additions,
        stability: Some(goal.stability.clone()),
        goal_satisfied,
        state_hash: goal.hash.clone(),
    })
}

/// Fills in stability for each candidate; order is left as is.
pub fn score_candidates(
    candidates: Vec<CandidatePlan>,
    catalog: &Catalog,
    lattice: &Lattice,
    options: StabilityOptions,
) -> Result<Vec<CandidatePlan>, CatalogError> {
    candidates
        .into_iter()
        .map(|mut c| {
            c.stability = Some(analyze(&c.final_state, catalog, lattice, options)?);
            Ok(c)
        })
        .collect()
}
