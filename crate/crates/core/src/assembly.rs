//! Lattice placements and the evolving assembly graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, Inventory, OrientedPort, OrientedType, TypeId};
use crate::geometry::FootprintBox3D;

pub type InstanceId = u32;
pub type Cell = [i32; 3];

pub const ASSEMBLY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssemblyError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("placement {new} overlaps placement {existing}")]
    Overlap { new: InstanceId, existing: InstanceId },
    #[error("placement {0} has no compatible coincident port with the structure")]
    NoCompatibleConnection(InstanceId),
    #[error("no parts of type {0} left in inventory")]
    InventoryExhausted(TypeId),
    #[error("instance id {0} already used")]
    DuplicateInstance(InstanceId),
    #[error("placement {0} extends below the table")]
    BelowTable(InstanceId),
    #[error("unknown instance {0}")]
    UnknownInstance(InstanceId),
    #[error("removing instance {0} would disconnect the structure")]
    WouldDisconnect(InstanceId),
    #[error("malformed model document: {0}")]
    MalformedDocument(String),
}

/// Rotation about +z in quarter turns; degrees at the serialization boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Yaw(u8);

impl Yaw {
    pub const ALL: [Yaw; 4] = [Yaw(0), Yaw(1), Yaw(2), Yaw(3)];

    pub fn from_quarter_turns(q: u8) -> Yaw {
        Yaw(q % 4)
    }

    pub fn quarter_turns(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> u16 {
        self.0 as u16 * 90
    }
}

impl TryFrom<u16> for Yaw {
    type Error = String;
    fn try_from(deg: u16) -> Result<Self, Self::Error> {
        match deg {
            0 | 90 | 180 | 270 => Ok(Yaw((deg / 90) as u8)),
            other => Err(format!("yaw must be 0, 90, 180 or 270 degrees, got {other}")),
        }
    }
}

impl From<Yaw> for u16 {
    fn from(y: Yaw) -> u16 {
        y.degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Placement {
    pub instance_id: InstanceId,
    pub type_id: TypeId,
    pub cell: Cell,
    pub yaw: Yaw,
}

/// Placement identity without the instance id; equal keys mean physically
/// identical placements (same cells, same ports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlacementKey {
    pub type_id: TypeId,
    pub cell: Cell,
    pub yaw: Yaw,
}

/// Footprint dims and ports of `type_id` rotated by `yaw`.
pub fn oriented(catalog: &Catalog, type_id: TypeId, yaw: Yaw) -> Result<&OrientedType, CatalogError> {
    catalog.oriented(type_id, yaw.quarter_turns())
}

/// Smallest yaw producing the same occupied cells and port layout.
pub fn canonical_yaw(catalog: &Catalog, type_id: TypeId, yaw: Yaw) -> Result<Yaw, CatalogError> {
    Ok(Yaw(catalog.canonical_turns(type_id, yaw.quarter_turns())?))
}

/// Yaws of a type that are geometrically distinct.
pub fn distinct_yaws(catalog: &Catalog, type_id: TypeId) -> Result<Vec<Yaw>, CatalogError> {
    let mut out = Vec::new();
    for y in Yaw::ALL {
        if canonical_yaw(catalog, type_id, y)? == y {
            out.push(y);
        }
    }
    Ok(out)
}

impl Placement {
    pub fn key(&self) -> PlacementKey {
        PlacementKey {
            type_id: self.type_id,
            cell: self.cell,
            yaw: self.yaw,
        }
    }

    pub fn canonical_key(&self, catalog: &Catalog) -> Result<PlacementKey, CatalogError> {
        Ok(PlacementKey {
            type_id: self.type_id,
            cell: self.cell,
            yaw: canonical_yaw(catalog, self.type_id, self.yaw)?,
        })
    }

    pub fn dims(&self, catalog: &Catalog) -> Result<[u32; 3], CatalogError> {
        Ok(oriented(catalog, self.type_id, self.yaw)?.dims)
    }

    /// Exclusive upper corner of the occupied cell range.
    pub fn max_corner(&self, catalog: &Catalog) -> Result<Cell, CatalogError> {
        let d = self.dims(catalog)?;
        Ok([
            self.cell[0] + d[0] as i32,
            self.cell[1] + d[1] as i32,
            self.cell[2] + d[2] as i32,
        ])
    }

    pub fn occupied_cells(&self, catalog: &Catalog) -> Result<Vec<Cell>, CatalogError> {
        let d = self.dims(catalog)?;
        let mut cells = Vec::with_capacity((d[0] * d[1] * d[2]) as usize);
        for z in 0..d[2] as i32 {
            for y in 0..d[1] as i32 {
                for x in 0..d[0] as i32 {
                    cells.push([self.cell[0] + x, self.cell[1] + y, self.cell[2] + z]);
                }
            }
        }
        Ok(cells)
    }

    /// World port positions in half-lattice units with rotated directions.
    pub fn world_ports(&self, catalog: &Catalog) -> Result<Vec<OrientedPort>, CatalogError> {
        let o = oriented(catalog, self.type_id, self.yaw)?;
        Ok(o.ports
            .iter()
            .cloned()
            .map(|mut p| {
                for (h, c) in p.half_offset.iter_mut().zip(self.cell) {
                    *h += 2 * c as i64;
                }
                p
            })
            .collect())
    }
}

fn ranges_overlap(a0: &Cell, a1: &Cell, b0: &Cell, b1: &Cell) -> bool {
    (0..3).all(|i| a0[i] < b1[i] && b0[i] < a1[i])
}

pub fn placements_overlap(a: &Placement, b: &Placement, catalog: &Catalog) -> Result<bool, CatalogError> {
    Ok(ranges_overlap(
        &a.cell,
        &a.max_corner(catalog)?,
        &b.cell,
        &b.max_corner(catalog)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub instance_a: InstanceId,
    pub port_a: usize,
    pub instance_b: InstanceId,
    pub port_b: usize,
}

/// All port connections between two placements: coincident positions,
/// opposed directions, classes allowed by the aggregation rules.
pub fn induced_edges(a: &Placement, b: &Placement, catalog: &Catalog) -> Result<Vec<Edge>, CatalogError> {
    let pa = a.world_ports(catalog)?;
    let pb = b.world_ports(catalog)?;
    let mut edges = Vec::new();
    for p in &pa {
        for q in &pb {
            if p.half_offset == q.half_offset
                && p.direction == q.direction.opposite()
                && catalog.classes_allowed(p.class, q.class)
            {
                let e = if a.instance_id < b.instance_id {
                    Edge {
                        instance_a: a.instance_id,
                        port_a: p.index,
                        instance_b: b.instance_id,
                        port_b: q.index,
                    }
                } else {
                    Edge {
                        instance_a: b.instance_id,
                        port_a: q.index,
                        instance_b: a.instance_id,
                        port_b: p.index,
                    }
                };
                edges.push(e);
            }
        }
    }
    Ok(edges)
}

/// Placement bounds on the lattice, `max` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBounds {
    pub min: Cell,
    pub max: Cell,
}

impl LatticeBounds {
    pub fn contains(&self, lo: &Cell, hi: &Cell) -> bool {
        (0..3).all(|i| lo[i] >= self.min[i] && hi[i] <= self.max[i])
    }
}

/// Maps lattice cells onto the work plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    /// Cell edge lengths in meters.
    pub cell_size: [f64; 3],
    /// Plane coordinates of lattice point (0, 0, 0).
    pub origin: [f64; 2],
    /// Number of cells along x, y, z available for building.
    pub extent: [u32; 3],
    /// Where removed parts are set down; defaults to beside the build area.
    #[serde(default)]
    pub return_zone: Option<[f64; 2]>,
}

impl Default for Lattice {
    fn default() -> Self {
        Lattice {
            cell_size: [0.04, 0.04, 0.04],
            origin: [0.0, 0.0],
            extent: [8, 8, 12],
            return_zone: None,
        }
    }
}

impl Lattice {
    pub fn bounds(&self) -> LatticeBounds {
        LatticeBounds {
            min: [0, 0, 0],
            max: [self.extent[0] as i32, self.extent[1] as i32, self.extent[2] as i32],
        }
    }

    /// Occupied region of a placement as a plane-frame box.
    pub fn region_box(&self, placement: &Placement, catalog: &Catalog) -> Result<FootprintBox3D, CatalogError> {
        let d = placement.dims(catalog)?;
        let [sx, sy, sz] = self.cell_size;
        let half = [d[0] as f64 * sx / 2.0, d[1] as f64 * sy / 2.0, d[2] as f64 * sz / 2.0];
        Ok(FootprintBox3D {
            center: nalgebra::Vector3::new(
                self.origin[0] + placement.cell[0] as f64 * sx + half[0],
                self.origin[1] + placement.cell[1] as f64 * sy + half[1],
                placement.cell[2] as f64 * sz + half[2],
            ),
            half_extents: nalgebra::Vector3::new(half[0], half[1], half[2]),
            yaw: 0.0,
        })
    }

    pub fn return_zone_box(&self) -> FootprintBox3D {
        let [sx, sy, sz] = self.cell_size;
        let center = self.return_zone.unwrap_or([
            self.origin[0] + (self.extent[0] as f64 + 3.0) * sx,
            self.origin[1] + 2.0 * sy,
        ]);
        FootprintBox3D::resting((center[0], center[1]), (1.5 * sx, 1.5 * sy), sz)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssemblyState {
    pub placements: Vec<Placement>,
    pub edges: Vec<Edge>,
    pub inventory: Inventory,
}

/// On-disk target model: placements only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub placements: Vec<Placement>,
}

pub fn load_model(text: &str, catalog: &Catalog) -> Result<AssemblyState, AssemblyError> {
    let doc: ModelDocument =
        serde_json::from_str(text).map_err(|e| AssemblyError::MalformedDocument(e.to_string()))?;
    if doc.schema_version != ASSEMBLY_SCHEMA_VERSION {
        return Err(AssemblyError::MalformedDocument(format!(
            "unsupported schema_version {}",
            doc.schema_version
        )));
    }
    AssemblyState::from_placements(doc.placements, catalog, None)
}

impl AssemblyState {
    pub fn new(inventory: Inventory) -> Self {
        AssemblyState {
            placements: Vec::new(),
            edges: Vec::new(),
            inventory,
        }
    }

    /// Builds a state from a full placement list. Checks overlap and the
    /// table; does not require connectivity. With `inventory`, each
    /// placement consumes one part.
    pub fn from_placements(
        placements: Vec<Placement>,
        catalog: &Catalog,
        inventory: Option<Inventory>,
    ) -> Result<Self, AssemblyError> {
        let mut state = AssemblyState::new(inventory.clone().unwrap_or_default());
        let mut ids = BTreeSet::new();
        for p in &placements {
            if !ids.insert(p.instance_id) {
                return Err(AssemblyError::DuplicateInstance(p.instance_id));
            }
            catalog.get(p.type_id)?;
            if p.cell[2] < 0 {
                return Err(AssemblyError::BelowTable(p.instance_id));
            }
            if inventory.is_some() && !state.inventory.take(p.type_id) {
                return Err(AssemblyError::InventoryExhausted(p.type_id));
            }
        }
        for (i, a) in placements.iter().enumerate() {
            for b in &placements[i + 1..] {
                if placements_overlap(a, b, catalog)? {
                    return Err(AssemblyError::Overlap {
                        new: b.instance_id,
                        existing: a.instance_id,
                    });
                }
                state.edges.extend(induced_edges(a, b, catalog)?);
            }
        }
        state.edges.sort();
        state.placements = placements;
        Ok(state)
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn get(&self, id: InstanceId) -> Option<&Placement> {
        self.placements.iter().find(|p| p.instance_id == id)
    }

    pub fn next_instance_id(&self) -> InstanceId {
        self.placements
            .iter()
            .map(|p| p.instance_id + 1)
            .max()
            .unwrap_or(0)
    }

    /// Neighbor sets over the connection graph.
    pub fn adjacency(&self) -> BTreeMap<InstanceId, BTreeSet<InstanceId>> {
        let mut adj: BTreeMap<InstanceId, BTreeSet<InstanceId>> = self
            .placements
            .iter()
            .map(|p| (p.instance_id, BTreeSet::new()))
            .collect();
        for e in &self.edges {
            adj.entry(e.instance_a).or_default().insert(e.instance_b);
            adj.entry(e.instance_b).or_default().insert(e.instance_a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        connected_without(self, None)
    }

    /// Height of the structure's top face in lattice units (0 when empty).
    pub fn height(&self, catalog: &Catalog) -> Result<i32, CatalogError> {
        let mut h = 0;
        for p in &self.placements {
            h = h.max(p.max_corner(catalog)?[2]);
        }
        Ok(h)
    }

    pub fn count_of(&self, type_id: TypeId) -> usize {
        self.placements.iter().filter(|p| p.type_id == type_id).count()
    }

    /// Sorted canonical placement keys: identifies the physical structure.
    pub fn canonical_keys(&self, catalog: &Catalog) -> Result<Vec<PlacementKey>, CatalogError> {
        let mut keys = self
            .placements
            .iter()
            .map(|p| p.canonical_key(catalog))
            .collect::<Result<Vec<_>, _>>()?;
        keys.sort();
        Ok(keys)
    }
}

/// Connectivity of the structure with one instance left out. The remaining
/// structure must form one connected component touching the table.
fn connected_without(state: &AssemblyState, skip: Option<InstanceId>) -> bool {
    let nodes: Vec<&Placement> = state
        .placements
        .iter()
        .filter(|p| Some(p.instance_id) != skip)
        .collect();
    if nodes.is_empty() {
        return true;
    }
    if !nodes.iter().any(|p| p.cell[2] == 0) {
        return false;
    }
    let adj = state.adjacency();
    let start = nodes[0].instance_id;
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(n) = stack.pop() {
        for &m in adj.get(&n).into_iter().flatten() {
            if Some(m) != skip && seen.insert(m) {
                stack.push(m);
            }
        }
    }
    seen.len() == nodes.len()
}

/// Checks a placement against the structure and returns the edges it would add.
pub fn check_placement(
    state: &AssemblyState,
    placement: &Placement,
    catalog: &Catalog,
) -> Result<Vec<Edge>, AssemblyError> {
    catalog.get(placement.type_id)?;
    if state.get(placement.instance_id).is_some() {
        return Err(AssemblyError::DuplicateInstance(placement.instance_id));
    }
    if placement.cell[2] < 0 {
        return Err(AssemblyError::BelowTable(placement.instance_id));
    }
    for p in &state.placements {
        if placements_overlap(p, placement, catalog)? {
            return Err(AssemblyError::Overlap {
                new: placement.instance_id,
                existing: p.instance_id,
            });
        }
    }
    let mut edges = Vec::new();
    for p in &state.placements {
        edges.extend(induced_edges(p, placement, catalog)?);
    }
    if !state.is_empty() && edges.is_empty() {
        return Err(AssemblyError::NoCompatibleConnection(placement.instance_id));
    }
    if state.is_empty() && placement.cell[2] != 0 {
        return Err(AssemblyError::NoCompatibleConnection(placement.instance_id));
    }
    if state.inventory.get(placement.type_id) == 0 {
        return Err(AssemblyError::InventoryExhausted(placement.type_id));
    }
    Ok(edges)
}

pub fn apply_placement(
    state: &AssemblyState,
    placement: Placement,
    catalog: &Catalog,
) -> Result<AssemblyState, AssemblyError> {
    let mut next = state.clone();
    apply_placement_in_place(&mut next, placement, catalog)?;
    Ok(next)
}

pub fn apply_placement_in_place(
    state: &mut AssemblyState,
    placement: Placement,
    catalog: &Catalog,
) -> Result<(), AssemblyError> {
    let edges = check_placement(state, &placement, catalog)?;
    state.inventory.take(placement.type_id);
    state.placements.push(placement);
    state.edges.extend(edges);
    state.edges.sort();
    Ok(())
}

pub fn remove_placement(
    state: &AssemblyState,
    instance_id: InstanceId,
    catalog: &Catalog,
) -> Result<AssemblyState, AssemblyError> {
    let mut next = state.clone();
    remove_placement_in_place(&mut next, instance_id, catalog)?;
    Ok(next)
}

pub fn remove_placement_in_place(
    state: &mut AssemblyState,
    instance_id: InstanceId,
    catalog: &Catalog,
) -> Result<(), AssemblyError> {
    let idx = state
        .placements
        .iter()
        .position(|p| p.instance_id == instance_id)
        .ok_or(AssemblyError::UnknownInstance(instance_id))?;
    if !connected_without(state, Some(instance_id)) {
        return Err(AssemblyError::WouldDisconnect(instance_id));
    }
    let removed = state.placements.remove(idx);
    catalog.get(removed.type_id)?;
    state
        .edges
        .retain(|e| e.instance_a != instance_id && e.instance_b != instance_id);
    state.inventory.restore(removed.type_id);
    Ok(())
}

/// Every placement of `type_id` that `apply_placement` would accept inside
/// `bounds`, one per distinct physical geometry. Instance ids are set to
/// `state.next_instance_id()`. Inventory is not consulted.
pub fn legal_placements(
    state: &AssemblyState,
    catalog: &Catalog,
    type_id: TypeId,
    bounds: &LatticeBounds,
) -> Result<Vec<Placement>, AssemblyError> {
    let id = state.next_instance_id();
    let mut candidates: BTreeSet<(Cell, Yaw)> = BTreeSet::new();
    let yaws = distinct_yaws(catalog, type_id)?;
    if state.is_empty() {
        for yaw in &yaws {
            let dims = oriented(catalog, type_id, *yaw)?.dims;
            for y in bounds.min[1]..=bounds.max[1] - dims[1] as i32 {
                for x in bounds.min[0]..=bounds.max[0] - dims[0] as i32 {
                    if bounds.min[2] <= 0 && dims[2] as i32 <= bounds.max[2] {
                        candidates.insert(([x, y, 0], *yaw));
                    }
                }
            }
        }
    } else {
        let mut structure_ports = Vec::new();
        for p in &state.placements {
            structure_ports.extend(p.world_ports(catalog)?);
        }
        for yaw in &yaws {
            let o = oriented(catalog, type_id, *yaw)?;
            for sp in &structure_ports {
                for np in &o.ports {
                    if np.direction != sp.direction.opposite() || !catalog.classes_allowed(sp.class, np.class) {
                        continue;
                    }
                    let diff = [
                        sp.half_offset[0] - np.half_offset[0],
                        sp.half_offset[1] - np.half_offset[1],
                        sp.half_offset[2] - np.half_offset[2],
                    ];
                    if diff.iter().any(|d| d % 2 != 0) {
                        continue;
                    }
                    let cell = [(diff[0] / 2) as i32, (diff[1] / 2) as i32, (diff[2] / 2) as i32];
                    let hi = [
                        cell[0] + o.dims[0] as i32,
                        cell[1] + o.dims[1] as i32,
                        cell[2] + o.dims[2] as i32,
                    ];
                    if cell[2] >= 0 && bounds.contains(&cell, &hi) {
                        candidates.insert((cell, *yaw));
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for (cell, yaw) in candidates {
        let p = Placement {
            instance_id: id,
            type_id,
            cell,
            yaw,
        };
        let overlaps = state
            .placements
            .iter()
            .map(|q| placements_overlap(q, &p, catalog))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .any(|b| b);
        if !overlaps {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::brick_catalog_document;
    use proptest::prelude::*;

    fn bricks(count_each: u32) -> Catalog {
        let cat = Catalog::from_document(brick_catalog_document()).unwrap();
        let inv = Inventory {
            counts: cat.type_ids().map(|t| (t, count_each)).collect(),
        };
        cat.with_inventory(inv)
    }

    fn p(id: InstanceId, type_id: TypeId, cell: Cell, yaw: u8) -> Placement {
        Placement {
            instance_id: id,
            type_id,
            cell,
            yaw: Yaw::from_quarter_turns(yaw),
        }
    }

    #[test]
    fn first_brick_on_table_has_no_edges() {
        let cat = bricks(4);
        let s = AssemblyState::new(cat.inventory.clone());
        let s = apply_placement(&s, p(0, 1, [0, 0, 0], 0), &cat).unwrap();
        assert!(s.edges.is_empty());
        assert_eq!(s.inventory.get(1), 3);
    }

    #[test]
    fn floating_brick_is_rejected() {
        let cat = bricks(4);
        let s = AssemblyState::new(cat.inventory.clone());
        let s = apply_placement(&s, p(0, 1, [0, 0, 0], 0), &cat).unwrap();
        assert_eq!(
            apply_placement(&s, p(1, 1, [3, 3, 2], 0), &cat),
            Err(AssemblyError::NoCompatibleConnection(1))
        );
        // side by side on the table: bricks only join through studs
        assert_eq!(
            apply_placement(&s, p(1, 1, [1, 0, 0], 0), &cat),
            Err(AssemblyError::NoCompatibleConnection(1))
        );
    }

    #[test]
    fn stacking_creates_stud_edges() {
        let cat = bricks(4);
        let s = AssemblyState::new(cat.inventory.clone());
        let s = apply_placement(&s, p(0, 7, [0, 0, 0], 0), &cat).unwrap(); // 2x4
        let s = apply_placement(&s, p(1, 5, [0, 1, 1], 0), &cat).unwrap(); // 2x2 on top
        assert_eq!(s.edges.len(), 4);
        assert!(matches!(
            apply_placement(&s, p(2, 1, [1, 1, 1], 0), &cat),
            Err(AssemblyError::Overlap { .. })
        ));
    }

    #[test]
    fn inventory_exhaustion() {
        let cat = bricks(1);
        let s = AssemblyState::new(cat.inventory.clone());
        let s = apply_placement(&s, p(0, 1, [0, 0, 0], 0), &cat).unwrap();
        assert_eq!(
            apply_placement(&s, p(1, 1, [0, 0, 1], 0), &cat),
            Err(AssemblyError::InventoryExhausted(1))
        );
    }

    #[test]
    fn rotation_swaps_footprint() {
        let cat = bricks(1);
        let a = p(0, 2, [0, 0, 0], 0); // 1x2
        let b = p(0, 2, [0, 0, 0], 1);
        assert_eq!(a.dims(&cat).unwrap(), [1, 2, 1]);
        assert_eq!(b.dims(&cat).unwrap(), [2, 1, 1]);
        // 180 degrees is geometrically identical for a symmetric brick
        assert_eq!(canonical_yaw(&cat, 2, Yaw::from_quarter_turns(2)).unwrap(), Yaw::from_quarter_turns(0));
        assert_eq!(distinct_yaws(&cat, 1).unwrap().len(), 1);
        assert_eq!(distinct_yaws(&cat, 2).unwrap().len(), 2);
    }

    #[test]
    fn remove_only_and_middle() {
        let cat = bricks(4);
        let s = AssemblyState::new(cat.inventory.clone());
        let s1 = apply_placement(&s, p(0, 1, [0, 0, 0], 0), &cat).unwrap();
        assert_eq!(remove_placement(&s1, 0, &cat).unwrap(), s);
        let s2 = apply_placement(&s1, p(1, 1, [0, 0, 1], 0), &cat).unwrap();
        let s3 = apply_placement(&s2, p(2, 1, [0, 0, 2], 0), &cat).unwrap();
        assert_eq!(remove_placement(&s3, 1, &cat), Err(AssemblyError::WouldDisconnect(1)));
        // removing the base leaves a floating pair
        assert_eq!(remove_placement(&s3, 0, &cat), Err(AssemblyError::WouldDisconnect(0)));
        assert_eq!(remove_placement(&s3, 9, &cat), Err(AssemblyError::UnknownInstance(9)));
        assert_eq!(remove_placement(&s3, 2, &cat).unwrap(), s2);
    }

    #[test]
    fn legal_placements_on_empty_grid() {
        let cat = bricks(4);
        let s = AssemblyState::new(cat.inventory.clone());
        let b = LatticeBounds { min: [0, 0, 0], max: [4, 4, 4] };
        assert_eq!(legal_placements(&s, &cat, 1, &b).unwrap().len(), 16);
        // 1x2: 4x3 upright + 3x4 rotated
        assert_eq!(legal_placements(&s, &cat, 2, &b).unwrap().len(), 24);
    }

    #[test]
    fn single_exposed_stud_gives_one_spot() {
        let cat = bricks(4);
        let s = AssemblyState::new(cat.inventory.clone());
        let s = apply_placement(&s, p(0, 1, [1, 1, 0], 0), &cat).unwrap();
        let b = LatticeBounds { min: [0, 0, 0], max: [4, 4, 4] };
        let spots = legal_placements(&s, &cat, 1, &b).unwrap();
        assert_eq!(spots.len(), 1);
        assert_eq!(spots[0].cell, [1, 1, 1]);
    }

    /// Brute force: every pair of placements, every pair of ports.
    fn brute_force_edges(state: &AssemblyState, cat: &Catalog) -> BTreeSet<Edge> {
        let mut out = BTreeSet::new();
        for a in &state.placements {
            for b in &state.placements {
                if a.instance_id >= b.instance_id {
                    continue;
                }
                let ta = cat.get(a.type_id).unwrap();
                let tb = cat.get(b.type_id).unwrap();
                let wa = a.world_ports(cat).unwrap();
                let wb = b.world_ports(cat).unwrap();
                for i in 0..ta.ports.len() {
                    for j in 0..tb.ports.len() {
                        let (pa, pb) = (&wa[i], &wb[j]);
                        if pa.half_offset == pb.half_offset
                            && pa.direction == pb.direction.opposite()
                            && cat.classes_allowed(pa.class, pb.class)
                        {
                            out.insert(Edge { instance_a: a.instance_id, port_a: i, instance_b: b.instance_id, port_b: j });
                        }
                    }
                }
            }
        }
        out
    }

    fn random_build(seed: u64, steps: usize, cat: &Catalog) -> Vec<AssemblyState> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bounds = LatticeBounds { min: [0, 0, 0], max: [6, 6, 6] };
        let mut s = AssemblyState::new(cat.inventory.clone());
        let mut history = vec![s.clone()];
        let types: Vec<TypeId> = cat.type_ids().collect();
        for _ in 0..steps {
            let t = types[rng.random_range(0..types.len())];
            if s.inventory.get(t) == 0 {
                continue;
            }
            let opts = legal_placements(&s, cat, t, &bounds).unwrap();
            if opts.is_empty() {
                continue;
            }
            let choice = opts[rng.random_range(0..opts.len())];
            s = apply_placement(&s, choice, cat).unwrap();
            history.push(s.clone());
        }
        history
    }

    #[test]
    fn edges_match_brute_force_scan() {
        let cat = bricks(3);
        for seed in 0..40 {
            let hist = random_build(seed, 8, &cat);
            let last = hist.last().unwrap();
            let want = brute_force_edges(last, &cat);
            let got: BTreeSet<Edge> = last.edges.iter().copied().collect();
            assert_eq!(got, want, "seed {seed}");
            assert!(last.is_connected());
        }
    }

    proptest! {
        #[test]
        fn apply_then_remove_restores_prior_state(seed in 0u64..10_000, steps in 1usize..10) {
            let cat = bricks(3);
            let hist = random_build(seed, steps, &cat);
            for w in hist.windows(2) {
                let added = w[1].placements.last().unwrap().instance_id;
                prop_assert_eq!(&remove_placement(&w[1], added, &cat).unwrap(), &w[0]);
            }
            // inventory conservation
            let last = hist.last().unwrap();
            for t in cat.type_ids() {
                prop_assert_eq!(last.count_of(t) as u32 + last.inventory.get(t), cat.inventory.get(t));
            }
        }
    }
}
