//! Brute-force oracles shared by the integration tests. They avoid the
//! engine's own search, move generation and support-polygon code.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::cmp::Reverse;

use assembly_engine::assembly::{apply_placement, legal_placements, AssemblyState, Lattice, Placement, Yaw};
use assembly_engine::catalog::{Axis, Catalog, Inventory, TypeId};
use assembly_engine::replanner::{canonical_state_hash, CandidatePlan, GoalSet};
use assembly_engine::stability::{analyze, Block, StabilityOptions};
use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- lattice

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Part {
    pub id: u32,
    pub type_id: TypeId,
    pub cell: [i32; 3],
    pub turns: u8,
}

/// (position in half units, direction vector, class name)
pub type WorldPort = ([i64; 3], [i64; 3], String);

fn dims(catalog: &Catalog, p: &Part) -> [i32; 3] {
    let f = catalog.get(p.type_id).unwrap().footprint;
    if p.turns % 2 == 1 {
        [f[1] as i32, f[0] as i32, f[2] as i32]
    } else {
        [f[0] as i32, f[1] as i32, f[2] as i32]
    }
}

pub fn cells(catalog: &Catalog, p: &Part) -> BTreeSet<[i32; 3]> {
    let d = dims(catalog, p);
    let mut out = BTreeSet::new();
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                out.insert([p.cell[0] + x, p.cell[1] + y, p.cell[2] + z]);
            }
        }
    }
    out
}

fn axis_vec(a: Axis) -> [i64; 3] {
    match a {
        Axis::PosX => [1, 0, 0],
        Axis::NegX => [-1, 0, 0],
        Axis::PosY => [0, 1, 0],
        Axis::NegY => [0, -1, 0],
        Axis::PosZ => [0, 0, 1],
        Axis::NegZ => [0, 0, -1],
    }
}

pub fn ports(catalog: &Catalog, p: &Part) -> Vec<WorldPort> {
    let t = catalog.get(p.type_id).unwrap();
    let (fx, fy) = (t.footprint[0] as f64, t.footprint[1] as f64);
    t.ports
        .iter()
        .map(|port| {
            let [x, y, z] = port.local_offset;
            let (mut rx, mut ry) = (x, y);
            let mut v = axis_vec(port.direction);
            // rotate the footprint about its min corner, then shift back into the positive quadrant
            let (mut w, mut h) = (fx, fy);
            for _ in 0..p.turns {
                let (nx, ny) = (h - ry, rx);
                rx = nx;
                ry = ny;
                v = [-v[1], v[0], v[2]];
                std::mem::swap(&mut w, &mut h);
            }
            let pos = [
                (2.0 * (rx + p.cell[0] as f64)).round() as i64,
                (2.0 * (ry + p.cell[1] as f64)).round() as i64,
                (2.0 * (z + p.cell[2] as f64)).round() as i64,
            ];
            (pos, v, port.compatibility_class.clone())
        })
        .collect()
}

pub fn edges_between(catalog: &Catalog, a: &Part, b: &Part) -> Vec<(u32, usize, u32, usize)> {
    let (pa, pb) = (ports(catalog, a), ports(catalog, b));
    let mut out = Vec::new();
    for (i, x) in pa.iter().enumerate() {
        for (j, y) in pb.iter().enumerate() {
            let opposed = (0..3).all(|k| x.1[k] == -y.1[k]);
            if x.0 == y.0 && opposed && catalog.rule_allows(&x.2, &y.2) {
                if a.id < b.id {
                    out.push((a.id, i, b.id, j));
                } else {
                    out.push((b.id, j, a.id, i));
                }
            }
        }
    }
    out
}

pub fn all_edges(catalog: &Catalog, parts: &[Part]) -> BTreeSet<(u32, usize, u32, usize)> {
    let mut out = BTreeSet::new();
    for i in 0..parts.len() {
        for j in i + 1..parts.len() {
            out.extend(edges_between(catalog, &parts[i], &parts[j]));
        }
    }
    out
}

/// One connected component with at least one part on the table.
pub fn connected_and_grounded(catalog: &Catalog, parts: &[Part]) -> bool {
    if parts.is_empty() {
        return true;
    }
    if !parts.iter().any(|p| p.cell[2] == 0) {
        return false;
    }
    let edges = all_edges(catalog, parts);
    let mut seen = BTreeSet::from([parts[0].id]);
    let mut stack = vec![parts[0].id];
    while let Some(n) = stack.pop() {
        for e in &edges {
            for (a, b) in [(e.0, e.2), (e.2, e.0)] {
                if a == n && seen.insert(b) {
                    stack.push(b);
                }
            }
        }
    }
    seen.len() == parts.len()
}

fn part_identity(catalog: &Catalog, p: &Part) -> (TypeId, Vec<[i32; 3]>, Vec<WorldPort>) {
    let mut ps = ports(catalog, p);
    ps.sort();
    (p.type_id, cells(catalog, p).into_iter().collect(), ps)
}

pub fn from_placement(p: &Placement) -> Part {
    Part { id: p.instance_id, type_id: p.type_id, cell: p.cell, turns: p.yaw.quarter_turns() }
}

pub fn to_placement(p: &Part) -> Placement {
    Placement { instance_id: p.id, type_id: p.type_id, cell: p.cell, yaw: Yaw::from_quarter_turns(p.turns) }
}

fn height(catalog: &Catalog, parts: &[Part]) -> i32 {
    parts.iter().map(|p| p.cell[2] + dims(catalog, p)[2]).max().unwrap_or(0)
}

pub fn goals_met(catalog: &Catalog, goals: &GoalSet, parts: &[Part]) -> bool {
    height(catalog, parts) >= goals.target_height
        && parts.len() <= goals.max_components
        && goals
            .per_type_limits
            .iter()
            .all(|(t, &l)| parts.iter().filter(|p| p.type_id == *t).count() <= l)
}

// ------------------------------------------------------- replan oracle

#[derive(Clone)]
struct OracleState {
    parts: Vec<Part>,
    inventory: BTreeMap<TypeId, u32>,
    next_id: u32,
}

type IdentityKey = Vec<(TypeId, Vec<[i32; 3]>, Vec<WorldPort>)>;

fn identity(catalog: &Catalog, s: &OracleState) -> IdentityKey {
    let mut k: IdentityKey = s.parts.iter().map(|p| part_identity(catalog, p)).collect();
    k.sort();
    k
}

fn oracle_moves(
    catalog: &Catalog,
    lattice: &Lattice,
    goals: &GoalSet,
    s: &OracleState,
    adding: bool,
) -> Vec<(OracleState, bool, u32)> {
    let mut out = Vec::new();
    if !adding {
        for i in 0..s.parts.len() {
            let mut rest = s.parts.clone();
            let removed = rest.remove(i);
            if connected_and_grounded(catalog, &rest) {
                let mut inv = s.inventory.clone();
                *inv.entry(removed.type_id).or_default() += 1;
                out.push((OracleState { parts: rest, inventory: inv, next_id: s.next_id }, false, 2));
            }
        }
        out.push((s.clone(), true, 0));
        return out;
    }
    if s.parts.len() >= goals.max_components {
        return out;
    }
    let occupied: BTreeSet<[i32; 3]> = s.parts.iter().flat_map(|p| cells(catalog, p)).collect();
    let ext = lattice.extent;
    for (&t, &n) in &s.inventory {
        if n == 0 || goals.per_type_limits.get(&t).is_some_and(|&l| s.parts.iter().filter(|p| p.type_id == t).count() >= l) {
            continue;
        }
        for turns in 0..4u8 {
            for z in 0..ext[2] as i32 {
                for y in 0..ext[1] as i32 {
                    for x in 0..ext[0] as i32 {
                        let p = Part { id: s.next_id, type_id: t, cell: [x, y, z], turns };
                        let d = dims(catalog, &p);
                        if x + d[0] > ext[0] as i32 || y + d[1] > ext[1] as i32 || z + d[2] > ext[2] as i32 {
                            continue;
                        }
                        if cells(catalog, &p).iter().any(|c| occupied.contains(c)) {
                            continue;
                        }
                        let ok = if s.parts.is_empty() {
                            z == 0
                        } else {
                            s.parts.iter().any(|q| !edges_between(catalog, q, &p).is_empty())
                        };
                        if !ok {
                            continue;
                        }
                        let mut parts = s.parts.clone();
                        parts.push(p);
                        let mut inv = s.inventory.clone();
                        *inv.get_mut(&t).unwrap() -= 1;
                        out.push((OracleState { parts, inventory: inv, next_id: s.next_id + 1 }, true, 1));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleGoal {
    pub cost: u32,
    pub score: f64,
    pub hash: String,
}

fn to_state(catalog: &Catalog, s: &OracleState) -> AssemblyState {
    let placements: Vec<Placement> = s.parts.iter().map(to_placement).collect();
    let mut st = AssemblyState::from_placements(placements, catalog, None).unwrap();
    st.inventory = Inventory { counts: s.inventory.clone() };
    st
}

/// Exhaustive uniform-cost enumeration of remove-then-add edits. Returns the
/// top `k` distinct goal structures ranked by (cost, stability desc, hash),
/// exploring every state up to the k-th goal's cost. `None` when the state
/// space holds no goal.
pub fn oracle_top_k(
    current: &AssemblyState,
    goals: &GoalSet,
    catalog: &Catalog,
    lattice: &Lattice,
    k: usize,
    stability: StabilityOptions,
) -> Option<Vec<OracleGoal>> {
    let start = OracleState {
        parts: current.placements.iter().map(from_placement).collect(),
        inventory: current.inventory.counts.clone(),
        next_id: current.placements.iter().map(|p| p.instance_id + 1).max().unwrap_or(0),
    };
    let mut arena = vec![(start, false)];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u32, 0usize)));
    let mut done: BTreeSet<(IdentityKey, bool)> = BTreeSet::new();
    let mut goal_ids: BTreeSet<IdentityKey> = BTreeSet::new();
    let mut found: Vec<OracleGoal> = Vec::new();
    while let Some(Reverse((cost, idx))) = heap.pop() {
        if found.len() >= k {
            let mut sorted = found.clone();
            sort_goals(&mut sorted);
            if cost > sorted[k - 1].cost {
                break;
            }
        }
        let (s, adding) = arena[idx].clone();
        let id = identity(catalog, &s);
        if !done.insert((id.clone(), adding)) {
            continue;
        }
        if goals_met(catalog, goals, &s.parts) && goal_ids.insert(id) {
            let st = to_state(catalog, &s);
            let keys = st.canonical_keys(catalog).unwrap();
            let score = analyze(&st, catalog, lattice, stability).unwrap().score;
            found.push(OracleGoal { cost, score, hash: canonical_state_hash(&keys) });
        }
        for (next, next_adding, w) in oracle_moves(catalog, lattice, goals, &s, adding) {
            if !done.contains(&(identity(catalog, &next), next_adding)) {
                arena.push((next, next_adding));
                heap.push(Reverse((cost + w, arena.len() - 1)));
            }
        }
    }
    if found.is_empty() {
        return None;
    }
    sort_goals(&mut found);
    found.truncate(k);
    Some(found)
}

fn sort_goals(g: &mut [OracleGoal]) {
    g.sort_by(|a, b| a.cost.cmp(&b.cost).then(b.score.total_cmp(&a.score)).then(a.hash.cmp(&b.hash)));
}

/// Independent validity check of one candidate against the starting state.
pub fn check_candidate(
    current: &AssemblyState,
    c: &CandidatePlan,
    goals: &GoalSet,
    catalog: &Catalog,
    lattice: &Lattice,
) -> Result<(), String> {
    let parts: Vec<Part> = c.final_state.placements.iter().map(from_placement).collect();
    let ext = lattice.extent;
    let mut occupied = BTreeSet::new();
    for p in &parts {
        let d = dims(catalog, p);
        if p.cell.iter().any(|&v| v < 0) || p.cell[0] + d[0] > ext[0] as i32 || p.cell[1] + d[1] > ext[1] as i32 || p.cell[2] + d[2] > ext[2] as i32 {
            return Err(format!("part {} out of bounds", p.id));
        }
        for cell in cells(catalog, p) {
            if !occupied.insert(cell) {
                return Err(format!("overlap at {cell:?}"));
            }
        }
    }
    let edges: BTreeSet<_> = c
        .final_state
        .edges
        .iter()
        .map(|e| (e.instance_a, e.port_a, e.instance_b, e.port_b))
        .collect();
    if edges != all_edges(catalog, &parts) {
        return Err("edge set differs from coincident-port scan".into());
    }
    if !connected_and_grounded(catalog, &parts) {
        return Err("final structure not connected to the table".into());
    }
    if !goals_met(catalog, goals, &parts) || !c.goal_satisfied {
        return Err("goals not met".into());
    }
    let mut types: BTreeSet<TypeId> = current.inventory.counts.keys().copied().collect();
    types.extend(c.final_state.inventory.counts.keys().copied());
    types.extend(parts.iter().map(|p| p.type_id));
    for t in types {
        let before = current.count_of(t) as u64 + current.inventory.get(t) as u64;
        let after = parts.iter().filter(|p| p.type_id == t).count() as u64 + c.final_state.inventory.get(t) as u64;
        if before != after {
            return Err(format!("inventory of type {t} not conserved"));
        }
    }
    if c.edit_cost != 2 * c.removals.len() as u32 + c.additions.len() as u32 {
        return Err("edit cost does not match edits".into());
    }
    let before: BTreeSet<u32> = current.placements.iter().map(|p| p.instance_id).collect();
    let removed: BTreeSet<u32> = c.removals.iter().map(|p| p.instance_id).collect();
    let after: BTreeSet<u32> = parts.iter().map(|p| p.id).collect();
    let expected: BTreeSet<u32> = before
        .difference(&removed)
        .copied()
        .chain(c.additions.iter().map(|p| p.instance_id))
        .collect();
    if after != expected {
        return Err("final state is not current minus removals plus additions".into());
    }
    // walk the continuation: every intermediate structure connected and grounded
    let mut walk: Vec<Part> = current.placements.iter().map(from_placement).collect();
    for step in &c.continuation.steps {
        match step.action {
            assembly_engine::planner::StepAction::Remove => walk.retain(|p| p.id != step.instance_id),
            assembly_engine::planner::StepAction::Add => walk.push(from_placement(&step.placement)),
        }
        if !connected_and_grounded(catalog, &walk) {
            return Err(format!("continuation step {} leaves a disconnected structure", step.step_index));
        }
    }
    let mut a: Vec<Part> = walk;
    let mut b = parts.clone();
    a.sort();
    b.sort();
    if a != b {
        return Err("continuation does not reach the final state".into());
    }
    Ok(())
}

/// Random desk-scale instance: a small structure whose last part is the
/// deviation, a few spare parts and goals above the current height.
pub fn random_instance(catalog: &Catalog, rng: &mut ChaCha8Rng) -> (AssemblyState, Lattice, GoalSet, Placement) {
    random_instance_upto(catalog, rng, 4)
}

/// As [`random_instance`] with up to `max_parts` placed parts.
pub fn random_instance_upto(
    catalog: &Catalog,
    rng: &mut ChaCha8Rng,
    max_parts: usize,
) -> (AssemblyState, Lattice, GoalSet, Placement) {
    loop {
        let lattice = Lattice { extent: [rng.random_range(2..=3), rng.random_range(2..=3), 6], ..Lattice::default() };
        let pool = [1u32, 2, 3, 5];
        let n_types = rng.random_range(1..=4);
        let mut types: Vec<TypeId> = pool.to_vec();
        while types.len() > n_types {
            types.remove(rng.random_range(0..types.len()));
        }
        let mut inv = Inventory::default();
        for &t in &types {
            inv.counts.insert(t, rng.random_range(1..=3));
        }
        let mut state = AssemblyState::new(inv);
        let n_parts = rng.random_range(1..=max_parts);
        let mut last = None;
        for _ in 0..n_parts * 4 {
            if state.len() >= n_parts {
                break;
            }
            let t = types[rng.random_range(0..types.len())];
            if state.inventory.get(t) == 0 {
                continue;
            }
            let opts = legal_placements(&state, catalog, t, &lattice.bounds()).unwrap();
            if opts.is_empty() {
                continue;
            }
            let p = opts[rng.random_range(0..opts.len())];
            state = apply_placement(&state, p, catalog).unwrap();
            last = Some(p);
        }
        let Some(last) = last else { continue };
        let spare: u32 = state.inventory.counts.values().sum();
        if spare == 0 {
            continue;
        }
        let h = state.height(catalog).unwrap();
        let mut limits = BTreeMap::new();
        if rng.random_bool(0.25) {
            let t = types[rng.random_range(0..types.len())];
            limits.insert(t, state.count_of(t) + rng.random_range(0..=1));
        }
        let goals = GoalSet {
            target_height: h + rng.random_range(0..=2),
            max_components: (state.len() + rng.random_range(1..=3)).min(10),
            per_type_limits: limits,
        };
        if goals.target_height < 1 {
            continue;
        }
        return (state, lattice, goals, last);
    }
}

// ---------------------------------------------------- stability oracle

pub fn random_stack(rng: &mut ChaCha8Rng, max_blocks: usize) -> Vec<Block> {
    let mut blocks: Vec<Block> = Vec::new();
    let target = rng.random_range(1..=max_blocks);
    let mut attempts = 0;
    while blocks.len() < target && attempts < 200 {
        attempts += 1;
        let w = rng.random_range(0.5..2.0);
        let d = rng.random_range(0.5..2.0);
        let h = [0.5, 1.0][rng.random_range(0..2)];
        let (x, y, z) = if blocks.is_empty() || rng.random_bool(0.15) {
            (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.0)
        } else {
            let below = blocks[rng.random_range(0..blocks.len())];
            (
                rng.random_range(below.min[0] - w * 0.9..below.max[0] - w * 0.1),
                rng.random_range(below.min[1] - d * 0.9..below.max[1] - d * 0.1),
                below.max[2],
            )
        };
        let b = Block {
            id: blocks.len() as u32,
            min: [x, y, z],
            max: [x + w, y + d, z + h],
            mass: rng.random_range(0.1..3.0),
        };
        let collides = blocks
            .iter()
            .any(|o| (0..3).all(|k| b.min[k] < o.max[k] - 1e-9 && o.min[k] < b.max[k] - 1e-9));
        if !collides {
            blocks.push(b);
        }
    }
    blocks
}

/// Every above-layer subset that is a maximal contact-connected group must
/// hold its combined center of mass inside the support of its contacts,
/// tested with the support function over sampled directions.
pub fn stack_is_stable(blocks: &[Block]) -> bool {
    let n = blocks.len();
    let touching = |a: &Block, b: &Block| {
        ((a.min[2] - b.max[2]).abs() < 1e-9 || (b.min[2] - a.max[2]).abs() < 1e-9)
            && a.min[0].max(b.min[0]) < a.max[0].min(b.max[0])
            && a.min[1].max(b.min[1]) < a.max[1].min(b.max[1])
    };
    let mut heights: Vec<f64> = blocks.iter().map(|b| b.min[2]).collect();
    heights.sort_by(f64::total_cmp);
    heights.dedup();
    let dirs: Vec<Vector2<f64>> = (0..7200)
        .map(|k| {
            let t = k as f64 * std::f64::consts::TAU / 7200.0;
            Vector2::new(t.cos(), t.sin())
        })
        .collect();
    for &h in &heights {
        let above: Vec<usize> = (0..n).filter(|&i| blocks[i].min[2] >= h - 1e-9).collect();
        for mask in 1u32..(1 << above.len()) {
            let subset: Vec<usize> = above
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &i)| i)
                .collect();
            let mut reach = vec![subset[0]];
            let mut frontier = vec![subset[0]];
            while let Some(x) = frontier.pop() {
                for &y in &subset {
                    if !reach.contains(&y) && touching(&blocks[x], &blocks[y]) {
                        reach.push(y);
                        frontier.push(y);
                    }
                }
            }
            if reach.len() != subset.len() {
                continue;
            }
            let maximal = above
                .iter()
                .all(|&o| subset.contains(&o) || subset.iter().all(|&s| !touching(&blocks[s], &blocks[o])));
            if !maximal || !subset.iter().any(|&i| (blocks[i].min[2] - h).abs() < 1e-9) {
                continue;
            }
            let mut corners = Vec::new();
            for &i in &subset {
                let b = &blocks[i];
                let supports: Vec<([f64; 2], [f64; 2])> = if b.min[2].abs() < 1e-9 {
                    vec![([b.min[0], b.min[1]], [b.max[0], b.max[1]])]
                } else {
                    (0..n)
                        .filter(|j| !subset.contains(j) && (blocks[*j].max[2] - b.min[2]).abs() < 1e-9)
                        .filter_map(|j| {
                            let o = &blocks[j];
                            let lo = [b.min[0].max(o.min[0]), b.min[1].max(o.min[1])];
                            let hi = [b.max[0].min(o.max[0]), b.max[1].min(o.max[1])];
                            (hi[0] > lo[0] && hi[1] > lo[1]).then_some((lo, hi))
                        })
                        .collect()
                };
                for (lo, hi) in supports {
                    corners.extend([
                        Vector2::new(lo[0], lo[1]),
                        Vector2::new(hi[0], lo[1]),
                        Vector2::new(hi[0], hi[1]),
                        Vector2::new(lo[0], hi[1]),
                    ]);
                }
            }
            if corners.is_empty() {
                return false;
            }
            let mass: f64 = subset.iter().map(|&i| blocks[i].mass).sum();
            let com = subset.iter().fold(Vector2::zeros(), |acc, &i| {
                let b = &blocks[i];
                acc + Vector2::new((b.min[0] + b.max[0]) / 2.0, (b.min[1] + b.max[1]) / 2.0) * b.mass
            }) / mass;
            for u in &dirs {
                let support = corners.iter().map(|c| c.dot(u)).fold(f64::NEG_INFINITY, f64::max);
                if com.dot(u) > support + 1e-12 {
                    return false;
                }
            }
        }
    }
    true
}

pub fn translated(blocks: &[Block], dx: f64, dy: f64) -> Vec<Block> {
    blocks
        .iter()
        .map(|b| Block {
            min: [b.min[0] + dx, b.min[1] + dy, b.min[2]],
            max: [b.max[0] + dx, b.max[1] + dy, b.max[2]],
            ..*b
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------- projection oracle

use assembly_engine::geometry::{project_corners_homography, BBox2D, CameraPose, WorkPlane};
use nalgebra::Vector3;

/// Pinhole back-projection written from the camera intrinsics alone.
pub fn oracle_ground_hit(camera: &CameraPose, pixel: (f64, f64), plane_z: f64) -> Option<Vector3<f64>> {
    let (w, h) = camera.image_size;
    let f = (w as f64 / 2.0) / (camera.hfov / 2.0).tan();
    let dir_cam = Vector3::new((pixel.0 - w as f64 / 2.0) / f, (pixel.1 - h as f64 / 2.0) / f, 1.0);
    let dir = camera.orientation * dir_cam;
    if dir.z.abs() < 1e-12 {
        return None;
    }
    let t = (plane_z - camera.position.z) / dir.z;
    (t > 0.0).then(|| camera.position + dir * t)
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    let target = Vector3::new(rng.random_range(-0.1..0.4), rng.random_range(-0.1..0.4), 0.0);
    CameraPose::orbit(
        target,
        rng.random_range(-180.0f64..180.0).to_radians(),
        rng.random_range(15.0f64..75.0).to_radians(),
        rng.random_range(0.4..1.6),
        rng.random_range(0.7..1.3),
        (640, 480),
    )
    .unwrap()
}

/// Worst disagreement in meters between the homography corners and the
/// oracle over `poses` random cameras with several boxes each.
pub fn projection_sweep(poses: usize, seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let plane = WorkPlane::new(Vector3::zeros(), Vector3::z()).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..poses {
        let cam = random_pose(&mut rng);
        for _ in 0..4 {
            let (w, h) = cam.image_size;
            let u0 = rng.random_range(0.0..w as f64 - 40.0);
            let v0 = rng.random_range(0.0..h as f64 - 40.0);
            let bbox = BBox2D::new([u0, v0], [u0 + rng.random_range(5.0..40.0), v0 + rng.random_range(5.0..40.0)]).unwrap();
            let Some(want) = bbox
                .corners()
                .iter()
                .map(|&c| oracle_ground_hit(&cam, c, 0.0))
                .collect::<Option<Vec<_>>>()
            else {
                continue;
            };
            let Ok(got) = project_corners_homography(&cam, &bbox, &plane) else { continue };
            for (g, w) in got.iter().zip(&want) {
                let world = plane.to_world(&Vector3::new(g.x, g.y, 0.0));
                worst = worst.max((world - w).norm());
            }
            checked += 1;
        }
    }
    (worst, checked)
}

/// Connected structure grown by legal placements from random types.
pub fn random_model(catalog: &Catalog, lattice: &Lattice, rng: &mut ChaCha8Rng, max_parts: usize) -> AssemblyState {
    let types: Vec<TypeId> = catalog.type_ids().collect();
    let counts = types.iter().map(|&t| (t, max_parts as u32)).collect();
    let mut state = AssemblyState::new(Inventory { counts });
    let target = rng.random_range(1..=max_parts);
    for _ in 0..target * 6 {
        if state.len() >= target {
            break;
        }
        let t = types[rng.random_range(0..types.len())];
        let opts = legal_placements(&state, catalog, t, &lattice.bounds()).unwrap();
        if opts.is_empty() {
            continue;
        }
        let p = opts[rng.random_range(0..opts.len())];
        state = apply_placement(&state, p, catalog).unwrap();
    }
    state
}
