//! Component types, connection ports, aggregation rules and inventory.
//!
//! Components live on an integer lattice. A type's footprint `(dx, dy, dz)`
//! counts lattice cells; port offsets are measured from the footprint's
//! minimum corner in lattice units and must be multiples of one half so that
//! port coincidence can be decided exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CATALOG_SCHEMA_VERSION: u32 = 1;

pub type TypeId = u32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CatalogError {
    #[error("duplicate type id {0}")]
    DuplicateTypeId(TypeId),
    #[error("asymmetric rule between '{0}' and '{1}'")]
    AsymmetricRule(String, String),
    #[error("malformed catalog document: {0}")]
    MalformedDocument(String),
    #[error("unknown component type {0}")]
    UnknownType(TypeId),
    #[error("type {type_id} has no port {port}")]
    UnknownPort { type_id: TypeId, port: usize },
}

/// Unit lattice axis a port faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "+x")]
    PosX,
    #[serde(rename = "-x")]
    NegX,
    #[serde(rename = "+y")]
    PosY,
    #[serde(rename = "-y")]
    NegY,
    #[serde(rename = "+z")]
    PosZ,
    #[serde(rename = "-z")]
    NegZ,
}

impl Axis {
    pub fn opposite(self) -> Axis {
        match self {
            Axis::PosX => Axis::NegX,
            Axis::NegX => Axis::PosX,
            Axis::PosY => Axis::NegY,
            Axis::NegY => Axis::PosY,
            Axis::PosZ => Axis::NegZ,
            Axis::NegZ => Axis::PosZ,
        }
    }

    /// Rotates about +z by `quarter_turns` x 90 degrees counter-clockwise.
    pub fn rotated(self, quarter_turns: u8) -> Axis {
        let mut a = self;
        for _ in 0..quarter_turns % 4 {
            a = match a {
                Axis::PosX => Axis::PosY,
                Axis::PosY => Axis::NegX,
                Axis::NegX => Axis::NegY,
                Axis::NegY => Axis::PosX,
                vertical => vertical,
            };
        }
        a
    }

    pub fn vector(self) -> [i64; 3] {
        match self {
            Axis::PosX => [1, 0, 0],
            Axis::NegX => [-1, 0, 0],
            Axis::PosY => [0, 1, 0],
            Axis::NegY => [0, -1, 0],
            Axis::PosZ => [0, 0, 1],
            Axis::NegZ => [0, 0, -1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub local_offset: [f64; 3],
    pub direction: Axis,
    pub compatibility_class: String,
}

impl Port {
    /// Offset in half-lattice units.
    pub fn half_offset(&self) -> [i64; 3] {
        self.local_offset.map(|c| (c * 2.0).round() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentType {
    pub type_id: TypeId,
    pub name: String,
    pub footprint: [u32; 3],
    /// Kilograms, concentrated at the footprint centroid.
    pub mass: f64,
    pub ports: Vec<Port>,
    #[serde(default)]
    pub color_tag: String,
}

impl ComponentType {
    fn validate(&self) -> Result<(), CatalogError> {
        let bad = |msg: String| Err(CatalogError::MalformedDocument(msg));
        if self.footprint.iter().any(|&d| d < 1) {
            return bad(format!("type {} has an empty footprint", self.type_id));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return bad(format!("type {} has non-positive mass", self.type_id));
        }
        for (i, port) in self.ports.iter().enumerate() {
            for (axis, (&c, &d)) in port.local_offset.iter().zip(&self.footprint).enumerate() {
                if !(0.0..=d as f64).contains(&c) {
                    return bad(format!(
                        "type {} port {i} offset axis {axis} = {c} outside footprint",
                        self.type_id
                    ));
                }
                if ((c * 2.0).round() - c * 2.0).abs() > 1e-9 {
                    return bad(format!(
                        "type {} port {i} offset {c} is not a multiple of 0.5",
                        self.type_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub class_a: String,
    pub class_b: String,
    pub allowed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Inventory {
    pub counts: BTreeMap<TypeId, u32>,
}

impl Inventory {
    pub fn get(&self, type_id: TypeId) -> u32 {
        self.counts.get(&type_id).copied().unwrap_or(0)
    }

    /// Decrements; `false` when nothing is left.
    pub fn take(&mut self, type_id: TypeId) -> bool {
        match self.counts.get_mut(&type_id) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }

    pub fn restore(&mut self, type_id: TypeId) {
        *self.counts.entry(type_id).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.values().map(|&n| n as u64).sum()
    }
}

/// On-disk catalog layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub types: Vec<ComponentType>,
    #[serde(default)]
    pub rules: Vec<AggregationRule>,
    #[serde(default)]
    pub inventory: Inventory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientedPort {
    pub index: usize,
    /// Offset from the rotated footprint's minimum corner, half-lattice units.
    pub half_offset: [i64; 3],
    pub direction: Axis,
    /// Interned compatibility class, see [`Catalog::class_id`].
    pub class: u16,
}

/// A component type rotated about +z by a number of quarter turns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrientedType {
    pub dims: [u32; 3],
    pub ports: Vec<OrientedPort>,
}

#[derive(Debug, Clone, PartialEq)]
struct TypeEntry {
    spec: ComponentType,
    oriented: [OrientedType; 4],
    /// Smallest quarter-turn count with identical geometry, per quarter turn.
    canonical: [u8; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    types: BTreeMap<TypeId, TypeEntry>,
    rules: BTreeMap<(String, String), bool>,
    classes: Vec<String>,
    /// `allowed[a * classes.len() + b]`
    allowed: Vec<bool>,
    pub inventory: Inventory,
    /// Non-fatal findings from loading, such as mirrored rules.
    pub warnings: Vec<String>,
}

fn orient(t: &ComponentType, k: u8, class_id: &BTreeMap<String, u16>) -> OrientedType {
    let [dx, dy, dz] = t.footprint;
    let dims = if k % 2 == 0 { [dx, dy, dz] } else { [dy, dx, dz] };
    let (hx, hy) = (2 * dx as i64, 2 * dy as i64);
    let ports = t
        .ports
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let [x, y, z] = p.half_offset();
            let (rx, ry) = match k % 4 {
                0 => (x, y),
                1 => (hy - y, x),
                2 => (hx - x, hy - y),
                _ => (y, hx - x),
            };
            OrientedPort {
                index,
                half_offset: [rx, ry, z],
                direction: p.direction.rotated(k),
                class: class_id[&p.compatibility_class],
            }
        })
        .collect();
    OrientedType { dims, ports }
}

fn signature(o: &OrientedType) -> ([u32; 3], Vec<([i64; 3], Axis, u16)>) {
    let mut ports: Vec<_> = o
        .ports
        .iter()
        .map(|p| (p.half_offset, p.direction, p.class))
        .collect();
    ports.sort();
    (o.dims, ports)
}

pub fn load_catalog(text: &str) -> Result<Catalog, CatalogError> {
    let doc: CatalogDocument =
        serde_json::from_str(text).map_err(|e| CatalogError::MalformedDocument(e.to_string()))?;
    Catalog::from_document(doc)
}

impl Catalog {
    pub fn from_document(doc: CatalogDocument) -> Result<Catalog, CatalogError> {
        if doc.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(CatalogError::MalformedDocument(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        let mut specs = BTreeMap::new();
        for t in doc.types {
            t.validate()?;
            let id = t.type_id;
            if specs.insert(id, t).is_some() {
                return Err(CatalogError::DuplicateTypeId(id));
            }
        }
        let mut declared: BTreeMap<(String, String), bool> = BTreeMap::new();
        for r in &doc.rules {
            let key = (r.class_a.clone(), r.class_b.clone());
            if let Some(&prev) = declared.get(&key) {
                if prev != r.allowed {
                    return Err(CatalogError::MalformedDocument(format!(
                        "conflicting rules for ('{}', '{}')",
                        r.class_a, r.class_b
                    )));
                }
            }
            declared.insert(key, r.allowed);
        }
        let mut rules = declared.clone();
        let mut warnings = Vec::new();
        for ((a, b), allowed) in &declared {
            match declared.get(&(b.clone(), a.clone())) {
                Some(mirror) if mirror != allowed => {
                    return Err(CatalogError::AsymmetricRule(a.clone(), b.clone()));
                }
                Some(_) => {}
                None => {
                    warnings.push(format!("rule ('{a}', '{b}') mirrored to ('{b}', '{a}')"));
                    rules.insert((b.clone(), a.clone()), *allowed);
                }
            }
        }
        for id in doc.inventory.counts.keys() {
            if !specs.contains_key(id) {
                return Err(CatalogError::MalformedDocument(format!(
                    "inventory references unknown type {id}"
                )));
            }
        }
        let mut class_set: std::collections::BTreeSet<String> = rules
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect();
        for t in specs.values() {
            class_set.extend(t.ports.iter().map(|p| p.compatibility_class.clone()));
        }
        let classes: Vec<String> = class_set.into_iter().collect();
        let class_id: BTreeMap<String, u16> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as u16))
            .collect();
        let n = classes.len();
        let mut allowed = vec![false; n * n];
        for ((a, b), &ok) in &rules {
            allowed[class_id[a] as usize * n + class_id[b] as usize] = ok;
        }
        let types = specs
            .into_iter()
            .map(|(id, spec)| {
                let oriented = [0u8, 1, 2, 3].map(|k| orient(&spec, k, &class_id));
                let mut canonical = [0u8, 1, 2, 3];
                for k in 1..4 {
                    let sig = signature(&oriented[k]);
                    if let Some(j) = (0..k).find(|&j| signature(&oriented[j]) == sig) {
                        canonical[k] = canonical[j];
                    }
                }
                (
                    id,
                    TypeEntry {
                        spec,
                        oriented,
                        canonical,
                    },
                )
            })
            .collect();
        Ok(Catalog {
            types,
            rules,
            classes,
            allowed,
            inventory: doc.inventory,
            warnings,
        })
    }

    pub fn to_document(&self) -> CatalogDocument {
        CatalogDocument {
            schema_version: CATALOG_SCHEMA_VERSION,
            types: self.types.values().map(|e| e.spec.clone()).collect(),
            rules: self
                .rules
                .iter()
                .filter(|((a, b), _)| a <= b)
                .map(|((a, b), &allowed)| AggregationRule {
                    class_a: a.clone(),
                    class_b: b.clone(),
                    allowed,
                })
                .collect(),
            inventory: self.inventory.clone(),
        }
    }

    pub fn types(&self) -> impl Iterator<Item = &ComponentType> {
        self.types.values().map(|e| &e.spec)
    }

    pub fn type_ids(&self) -> impl Iterator<Item = TypeId> + '_ {
        self.types.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, type_id: TypeId) -> Result<&ComponentType, CatalogError> {
        self.entry(type_id).map(|e| &e.spec)
    }

    fn entry(&self, type_id: TypeId) -> Result<&TypeEntry, CatalogError> {
        self.types
            .get(&type_id)
            .ok_or(CatalogError::UnknownType(type_id))
    }

    /// `type_id` rotated by `quarter_turns` x 90 degrees about +z.
    pub fn oriented(&self, type_id: TypeId, quarter_turns: u8) -> Result<&OrientedType, CatalogError> {
        Ok(&self.entry(type_id)?.oriented[(quarter_turns % 4) as usize])
    }

    /// Smallest quarter-turn count giving the same cells and port layout.
    pub fn canonical_turns(&self, type_id: TypeId, quarter_turns: u8) -> Result<u8, CatalogError> {
        Ok(self.entry(type_id)?.canonical[(quarter_turns % 4) as usize])
    }

    pub fn class_id(&self, class: &str) -> Option<u16> {
        self.classes.iter().position(|c| c == class).map(|i| i as u16)
    }

    /// Undeclared class pairs are not allowed to connect.
    pub fn rule_allows(&self, class_a: &str, class_b: &str) -> bool {
        match (self.class_id(class_a), self.class_id(class_b)) {
            (Some(a), Some(b)) => self.classes_allowed(a, b),
            _ => false,
        }
    }

    pub fn classes_allowed(&self, a: u16, b: u16) -> bool {
        let n = self.classes.len();
        self.allowed
            .get(a as usize * n + b as usize)
            .copied()
            .unwrap_or(false)
    }

    /// Largest footprint edge across all types, in lattice units.
    pub fn max_footprint_xy(&self) -> u32 {
        self.types
            .values()
            .map(|e| e.spec.footprint[0].max(e.spec.footprint[1]))
            .max()
            .unwrap_or(1)
    }

    pub fn with_inventory(mut self, inventory: Inventory) -> Self {
        self.inventory = inventory;
        self
    }
}

pub fn ports_compatible(
    catalog: &Catalog,
    type_a: TypeId,
    port_a: usize,
    type_b: TypeId,
    port_b: usize,
) -> Result<bool, CatalogError> {
    let pa = catalog
        .get(type_a)?
        .ports
        .get(port_a)
        .ok_or(CatalogError::UnknownPort {
            type_id: type_a,
            port: port_a,
        })?;
    let pb = catalog
        .get(type_b)?
        .ports
        .get(port_b)
        .ok_or(CatalogError::UnknownPort {
            type_id: type_b,
            port: port_b,
        })?;
    Ok(pa.direction == pb.direction.opposite()
        && catalog.rule_allows(&pa.compatibility_class, &pb.compatibility_class))
}

fn grid_ports(footprint: [u32; 3], top: &str, bottom: &str) -> Vec<Port> {
    let mut ports = Vec::new();
    for y in 0..footprint[1] {
        for x in 0..footprint[0] {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            ports.push(Port {
                local_offset: [cx, cy, footprint[2] as f64],
                direction: Axis::PosZ,
                compatibility_class: top.into(),
            });
            ports.push(Port {
                local_offset: [cx, cy, 0.0],
                direction: Axis::NegZ,
                compatibility_class: bottom.into(),
            });
        }
    }
    ports
}

fn rule(a: &str, b: &str) -> AggregationRule {
    AggregationRule {
        class_a: a.into(),
        class_b: b.into(),
        allowed: true,
    }
}

/// Eight stud/socket bricks, one lattice unit tall.
pub fn brick_catalog_document() -> CatalogDocument {
    let sizes: [(u32, u32, &str, &str); 8] = [
        (1, 1, "brick-1x1", "red"),
        (1, 2, "brick-1x2", "orange"),
        (1, 3, "brick-1x3", "yellow"),
        (1, 4, "brick-1x4", "green"),
        (2, 2, "brick-2x2", "blue"),
        (2, 3, "brick-2x3", "purple"),
        (2, 4, "brick-2x4", "white"),
        (1, 6, "brick-1x6", "black"),
    ];
    let types = sizes
        .iter()
        .enumerate()
        .map(|(i, &(dx, dy, name, color))| {
            let footprint = [dx, dy, 1];
            ComponentType {
                type_id: i as TypeId + 1,
                name: name.into(),
                footprint,
                mass: 0.0006 * (dx * dy) as f64,
                ports: grid_ports(footprint, "stud", "socket"),
                color_tag: color.into(),
            }
        })
        .collect();
    CatalogDocument {
        schema_version: CATALOG_SCHEMA_VERSION,
        types,
        rules: vec![rule("stud", "socket")],
        inventory: Inventory::default(),
    }
}

/// Fifteen illustrative nodal parts: vertical peg/hole joints on every cell
/// plus horizontal tab/slot connectors on selected faces. The set is a
/// representative stand-in; it does not reproduce any particular part kit.
pub fn nodal_catalog_document() -> CatalogDocument {
    // (dx, dy, dz, name, side connectors as (face, class))
    type Spec = (u32, u32, u32, &'static str, &'static [(Axis, &'static str)]);
    const SPECS: [Spec; 15] = [
        (1, 1, 1, "node-cube", &[(Axis::PosX, "tab"), (Axis::NegX, "slot"), (Axis::PosY, "tab"), (Axis::NegY, "slot")]),
        (1, 1, 1, "node-cap", &[]),
        (1, 1, 2, "column-2", &[(Axis::PosX, "tab"), (Axis::NegX, "slot")]),
        (1, 1, 3, "column-3", &[(Axis::PosY, "tab"), (Axis::NegY, "slot")]),
        (2, 1, 1, "strut-2", &[(Axis::PosX, "tab"), (Axis::NegX, "slot")]),
        (3, 1, 1, "strut-3", &[(Axis::PosX, "tab"), (Axis::NegX, "slot")]),
        (4, 1, 1, "strut-4", &[(Axis::PosX, "tab"), (Axis::NegX, "slot")]),
        (2, 2, 1, "plate-2x2", &[(Axis::PosY, "tab"), (Axis::NegY, "slot")]),
        (3, 3, 1, "plate-3x3", &[]),
        (2, 1, 2, "wall-2", &[(Axis::PosY, "tab"), (Axis::NegY, "slot")]),
        (3, 1, 2, "wall-3", &[(Axis::PosY, "tab"), (Axis::NegY, "slot")]),
        (1, 1, 1, "joint-x", &[(Axis::PosX, "tab"), (Axis::NegX, "tab")]),
        (1, 1, 1, "joint-y", &[(Axis::PosY, "slot"), (Axis::NegY, "slot")]),
        (2, 2, 2, "block-2", &[(Axis::PosX, "slot"), (Axis::NegX, "tab")]),
        (1, 2, 1, "bracket", &[(Axis::PosX, "tab"), (Axis::PosY, "tab"), (Axis::NegX, "slot"), (Axis::NegY, "slot")]),
    ];
    let mut types = Vec::new();
    for (i, &(dx, dy, dz, name, sides)) in SPECS.iter().enumerate() {
        let footprint = [dx, dy, dz];
        let mut ports = grid_ports(footprint, "peg", "hole");
        for &(face, class) in sides {
            let (fx, fy, fz) = (dx as f64, dy as f64, dz as f64);
            // one connector at the middle of the face, bottom layer
            let offset = match face {
                Axis::PosX => [fx, 0.5, 0.5],
                Axis::NegX => [0.0, 0.5, 0.5],
                Axis::PosY => [0.5, fy, 0.5],
                Axis::NegY => [0.5, 0.0, 0.5],
                Axis::PosZ => [0.5, 0.5, fz],
                Axis::NegZ => [0.5, 0.5, 0.0],
            };
            ports.push(Port {
                local_offset: offset,
                direction: face,
                compatibility_class: class.into(),
            });
        }
        types.push(ComponentType {
            type_id: 100 + i as TypeId,
            name: name.into(),
            footprint,
            mass: 0.004 * (dx * dy * dz) as f64,
            ports,
            color_tag: ["cyan", "magenta", "amber", "teal", "grey"][i % 5].into(),
        });
    }
    CatalogDocument {
        schema_version: CATALOG_SCHEMA_VERSION,
        types,
        rules: vec![rule("peg", "hole"), rule("tab", "slot")],
        inventory: Inventory::default(),
    }
}
