//! Quasi-static tipping analysis under gravity.
//!
//! For every contact layer the structure is cut horizontally. Each connected
//! group of bodies above the cut must keep its combined center of mass,
//! projected onto the plane, inside the convex hull of the contact patches
//! that carry it. The signed distance from that projection to the hull
//! boundary is the cut's margin (positive inside).
//!
//! By default connections carry no tension, so every part is its own body.
//! With `rigid_joints` the parts joined through ports form one body.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblyState, InstanceId, Lattice};
use crate::catalog::{Catalog, CatalogError};

const Z_EPS: f64 = 1e-9;
const AREA_EPS: f64 = 1e-12;
/// Margins this close to zero count as supported (COM on the hull edge).
const MARGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StabilityOptions {
    #[serde(default)]
    pub rigid_joints: bool,
}

/// Axis-aligned solid with its mass at the centroid, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub id: InstanceId,
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub mass: f64,
}

impl Block {
    fn centroid_xy(&self) -> Vector2<f64> {
        Vector2::new(
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    /// Instances carried by this cut.
    pub members: Vec<InstanceId>,
    /// Meters; `None` when nothing supports the group at all.
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub score: f64,
    pub worst_cut: Option<Cut>,
    /// Margin of the cut at each placement's own bottom layer. `None`
    /// marks an unsupported group.
    pub per_placement_margin: BTreeMap<InstanceId, Option<f64>>,
}

impl StabilityReport {
    fn empty() -> Self {
        StabilityReport {
            stable: true,
            score: 1.0,
            worst_cut: None,
            per_placement_margin: BTreeMap::new(),
        }
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.worst_cut.as_ref().and_then(|c| c.margin)
    }
}

fn margin_key(m: Option<f64>) -> f64 {
    m.unwrap_or(f64::NEG_INFINITY)
}

/// Half of the largest footprint edge in the catalog, meters.
pub fn margin_scale(catalog: &Catalog, lattice: &Lattice) -> f64 {
    let mut best: f64 = 0.0;
    for t in catalog.types() {
        best = best
            .max(t.footprint[0] as f64 * lattice.cell_size[0])
            .max(t.footprint[1] as f64 * lattice.cell_size[1]);
    }
    if best > 0.0 {
        best / 2.0
    } else {
        lattice.cell_size[0] / 2.0
    }
}

pub fn blocks_from_state(
    state: &AssemblyState,
    catalog: &Catalog,
    lattice: &Lattice,
) -> Result<Vec<Block>, CatalogError> {
    let [sx, sy, sz] = lattice.cell_size;
    state
        .placements
        .iter()
        .map(|p| {
            let hi = p.max_corner(catalog)?;
            Ok(Block {
                id: p.instance_id,
                min: [
                    lattice.origin[0] + p.cell[0] as f64 * sx,
                    lattice.origin[1] + p.cell[1] as f64 * sy,
                    p.cell[2] as f64 * sz,
                ],
                max: [
                    lattice.origin[0] + hi[0] as f64 * sx,
                    lattice.origin[1] + hi[1] as f64 * sy,
                    hi[2] as f64 * sz,
                ],
                mass: catalog.get(p.type_id)?.mass,
            })
        })
        .collect()
}

pub fn analyze(
    state: &AssemblyState,
    catalog: &Catalog,
    lattice: &Lattice,
    options: StabilityOptions,
) -> Result<StabilityReport, CatalogError> {
    let blocks = blocks_from_state(state, catalog, lattice)?;
    let joints: Vec<(InstanceId, InstanceId)> = state
        .edges
        .iter()
        .map(|e| (e.instance_a, e.instance_b))
        .collect();
    Ok(analyze_blocks(
        &blocks,
        &joints,
        options,
        margin_scale(catalog, lattice),
    ))
}

/// Rectangle `[min, max]` in the plane.
type Rect = ([f64; 2], [f64; 2]);

fn overlap_rect(a: &Block, b: &Block) -> Option<Rect> {
    let lo = [a.min[0].max(b.min[0]), a.min[1].max(b.min[1])];
    let hi = [a.max[0].min(b.max[0]), a.max[1].min(b.max[1])];
    let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    (hi[0] > lo[0] && hi[1] > lo[1] && area > AREA_EPS).then_some((lo, hi))
}

#[derive(Debug, Clone, Copy)]
struct Contact {
    upper: usize,
    /// `None` for the table.
    lower: Option<usize>,
    rect: Rect,
}

fn find_contacts(blocks: &[Block]) -> Vec<Contact> {
    let mut out = Vec::new();
    for (i, up) in blocks.iter().enumerate() {
        if up.min[2].abs() < Z_EPS {
            out.push(Contact {
                upper: i,
                lower: None,
                rect: ([up.min[0], up.min[1]], [up.max[0], up.max[1]]),
            });
        }
        for (j, low) in blocks.iter().enumerate() {
            if i != j && (up.min[2] - low.max[2]).abs() < Z_EPS {
                if let Some(rect) = overlap_rect(up, low) {
                    out.push(Contact {
                        upper: i,
                        lower: Some(j),
                        rect,
                    });
                }
            }
        }
    }
    out
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub fn analyze_blocks(
    blocks: &[Block],
    joints: &[(InstanceId, InstanceId)],
    options: StabilityOptions,
    margin_scale: f64,
) -> StabilityReport {
    if blocks.is_empty() {
        return StabilityReport::empty();
    }
    let n = blocks.len();
    let index: BTreeMap<InstanceId, usize> =
        blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect();

    // bodies
    let mut body_uf = UnionFind::new(n);
    if options.rigid_joints {
        for (a, b) in joints {
            if let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) {
                body_uf.union(i, j);
            }
        }
    }
    let body_of: Vec<usize> = (0..n).map(|i| body_uf.find(i)).collect();
    let mut body_floor: BTreeMap<usize, f64> = BTreeMap::new();
    for (i, b) in blocks.iter().enumerate() {
        let e = body_floor.entry(body_of[i]).or_insert(f64::INFINITY);
        *e = e.min(b.min[2]);
    }

    let contacts = find_contacts(blocks);
    let mut layers: Vec<f64> = body_floor.values().copied().collect();
    layers.sort_by(f64::total_cmp);
    layers.dedup_by(|a, b| (*a - *b).abs() < Z_EPS);

    let mut per_placement: BTreeMap<InstanceId, Option<f64>> = BTreeMap::new();
    let mut worst: Option<Cut> = None;

    for &h in &layers {
        let above: Vec<bool> = (0..n).map(|i| body_floor[&body_of[i]] >= h - Z_EPS).collect();
        let mut uf = UnionFind::new(n);
        for i in 0..n {
            uf.union(i, body_of[i]);
        }
        for c in &contacts {
            if let Some(l) = c.lower {
                if above[c.upper] && above[l] {
                    uf.union(c.upper, l);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in (0..n).filter(|&i| above[i]) {
            groups.entry(uf.find(i)).or_default().push(i);
        }
        for members in groups.values() {
            let on_layer = |i: &usize| (body_floor[&body_of[*i]] - h).abs() < Z_EPS;
            if !members.iter().any(on_layer) {
                continue;
            }
            let member_set: BTreeSet<usize> = members.iter().copied().collect();
            let mut points = Vec::new();
            for c in &contacts {
                if !member_set.contains(&c.upper) {
                    continue;
                }
                let supporting = match c.lower {
                    None => true,
                    Some(l) => !above[l],
                };
                if supporting {
                    let (lo, hi) = c.rect;
                    points.extend([
                        Vector2::new(lo[0], lo[1]),
                        Vector2::new(hi[0], lo[1]),
                        Vector2::new(hi[0], hi[1]),
                        Vector2::new(lo[0], hi[1]),
                    ]);
                }
            }
            let total: f64 = members.iter().map(|&i| blocks[i].mass).sum();
            let com = members
                .iter()
                .map(|&i| blocks[i].centroid_xy() * blocks[i].mass)
                .fold(Vector2::zeros(), |a, b| a + b)
                / total;
            let margin = if points.is_empty() {
                None
            } else {
                Some(signed_distance_to_hull(&com, &convex_hull(points)))
            };
            for &i in members.iter().filter(|i| on_layer(i)) {
                per_placement.insert(blocks[i].id, margin);
            }
            let replace = match &worst {
                None => true,
                Some(w) => margin_key(margin) < margin_key(w.margin),
            };
            if replace {
                let mut ids: Vec<InstanceId> = members.iter().map(|&i| blocks[i].id).collect();
                ids.sort_unstable();
                worst = Some(Cut {
                    members: ids,
                    margin,
                });
            }
        }
    }

    let min_margin = worst.as_ref().map(|w| margin_key(w.margin)).unwrap_or(0.0);
    let stable = min_margin >= -MARGIN_TOL;
    let score = if stable {
        (min_margin / margin_scale).clamp(0.0, 1.0)
    } else {
        0.0
    };
    StabilityReport {
        stable,
        score,
        worst_cut: worst,
        per_placement_margin: per_placement,
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise hull (monotone chain), collinear points dropped.
pub fn convex_hull(mut points: Vec<Vector2<f64>>) -> Vec<Vector2<f64>> {
    points.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    points.dedup();
    if points.len() < 3 {
        return points;
    }
    let mut lower: Vec<Vector2<f64>> = Vec::new();
    for p in &points {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vector2<f64>> = Vec::new();
    for p in points.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn segment_distance(p: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

/// Positive inside the hull, negative outside.
pub fn signed_distance_to_hull(p: &Vector2<f64>, hull: &[Vector2<f64>]) -> f64 {
    match hull.len() {
        0 => return f64::NEG_INFINITY,
        1 => return -(p - hull[0]).norm(),
        2 => return -segment_distance(p, &hull[0], &hull[1]),
        _ => {}
    }
    let mut inside = true;
    let mut dist = f64::INFINITY;
    for i in 0..hull.len() {
        let a = &hull[i];
        let b = &hull[(i + 1) % hull.len()];
        if cross(a, b, p) < 0.0 {
            inside = false;
        }
        dist = dist.min(segment_distance(p, a, b));
    }
    if inside {
        dist
    } else {
        -dist
    }
}
