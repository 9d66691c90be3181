//! Radial distribution network: topology validation, tree-path PTDFs,
//! electrical distances and the distance-based grid service charge.
//!
//! On a radial feeder a bilateral transfer has exactly one path, so the
//! absolute PTDF of every line is 1 on that path and 0 elsewhere. Distances
//! weight each path line by its length in km.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type BusId = u32;
pub type LineId = u32;

/// Length assumed for lines whose document entry omits `length_km`.
pub const DEFAULT_LINE_KM: f64 = 1.0;

const CASE33_JSON: &str = include_str!("../data/case33.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("line {line} closes a cycle between buses {from} and {to}")]
    CycleDetected { line: LineId, from: BusId, to: BusId },
    #[error("network is disconnected: {unreached} bus(es) unreachable from slack bus {slack}")]
    Disconnected { slack: BusId, unreached: usize },
    #[error("line {line} references undeclared bus {bus}")]
    DanglingReference { line: LineId, bus: BusId },
    #[error("slack bus {0} is not declared")]
    UnknownSlack(BusId),
    #[error("bus {0} declared twice")]
    DuplicateBus(BusId),
    #[error("line id {0} declared twice")]
    DuplicateLine(LineId),
    #[error("line {line} has invalid length {length_km} km")]
    InvalidLength { line: LineId, length_km: f64 },
    #[error("topology has no buses")]
    Empty,
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
    #[error("unknown line {0}")]
    UnknownLine(LineId),
    #[error("service-charge rate must be non-negative, got {0}")]
    NegativeRate(f64),
    #[error("malformed topology document: {0}")]
    Parse(String),
}

/// Topology document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDocument {
    pub buses: Vec<BusId>,
    pub lines: Vec<LineSpec>,
    pub slack: BusId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub id: LineId,
    pub from: BusId,
    pub to: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_km: Option<f64>,
}

impl TopologyDocument {
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        serde_json::from_str(text).map_err(|e| GridError::Parse(e.to_string()))
    }

    /// The bundled 33-bus feeder.
    pub fn case33() -> Self {
        Self::from_json(CASE33_JSON).expect("bundled case33 document is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: LineId,
    pub from: BusId,
    pub to: BusId,
    pub length_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElectricalDistance(f64);

impl ElectricalDistance {
    pub fn km(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceCharge {
    /// ¢/kWh/km
    pub rate: f64,
    /// ¢/kWh
    pub charge: f64,
}

/// Validated radial network. Immutable after construction.
#[derive(Debug, Clone)]
pub struct NetworkTopology {
    buses: Vec<BusId>,
    lines: Vec<Line>,
    slack: BusId,
    bus_index: HashMap<BusId, usize>,
    line_index: HashMap<LineId, usize>,
    /// (parent bus index, line index) towards the slack bus.
    parent: Vec<Option<(usize, usize)>>,
    depth: Vec<usize>,
}

impl NetworkTopology {
    pub fn case33() -> Self {
        load_topology(&TopologyDocument::case33()).expect("bundled case33 topology is radial")
    }

    pub fn buses(&self) -> &[BusId] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn slack(&self) -> BusId {
        self.slack
    }

    pub fn contains_bus(&self, bus: BusId) -> bool {
        self.bus_index.contains_key(&bus)
    }

    pub fn line(&self, id: LineId) -> Result<&Line, GridError> {
        self.line_index
            .get(&id)
            .map(|&i| &self.lines[i])
            .ok_or(GridError::UnknownLine(id))
    }

    fn index_of(&self, bus: BusId) -> Result<usize, GridError> {
        self.bus_index
            .get(&bus)
            .copied()
            .ok_or(GridError::UnknownBus(bus))
    }

    /// Lines on the unique tree path between two buses, in walk order from
    /// `from` up to the common ancestor and then down to `to`.
    pub fn path_lines(&self, from: BusId, to: BusId) -> Result<Vec<LineId>, GridError> {
        let mut a = self.index_of(from)?;
        let mut b = self.index_of(to)?;
        let mut up = Vec::new();
        let mut down = Vec::new();
        while self.depth[a] > self.depth[b] {
            let (p, l) = self.parent[a].expect("non-root bus has a parent");
            up.push(self.lines[l].id);
            a = p;
        }
        while self.depth[b] > self.depth[a] {
            let (p, l) = self.parent[b].expect("non-root bus has a parent");
            down.push(self.lines[l].id);
            b = p;
        }
        while a != b {
            let (pa, la) = self.parent[a].expect("non-root bus has a parent");
            let (pb, lb) = self.parent[b].expect("non-root bus has a parent");
            up.push(self.lines[la].id);
            down.push(self.lines[lb].id);
            a = pa;
            b = pb;
        }
        up.extend(down.into_iter().rev());
        Ok(up)
    }

    /// Absolute PTDF of `line` for a transfer injected at `inject` and
    /// withdrawn at `withdraw`.
    pub fn line_ptdf(&self, line: LineId, inject: BusId, withdraw: BusId) -> Result<f64, GridError> {
        self.line(line)?;
        let path = self.path_lines(inject, withdraw)?;
        Ok(if path.contains(&line) { 1.0 } else { 0.0 })
    }

    pub fn electrical_distance(&self, bus_i: BusId, bus_j: BusId) -> Result<ElectricalDistance, GridError> {
        let km = self
            .path_lines(bus_i, bus_j)?
            .into_iter()
            .map(|l| self.lines[self.line_index[&l]].length_km)
            .sum();
        Ok(ElectricalDistance(km))
    }

    pub fn to_document(&self) -> TopologyDocument {
        TopologyDocument {
            buses: self.buses.clone(),
            lines: self
                .lines
                .iter()
                .map(|l| LineSpec {
                    id: l.id,
                    from: l.from,
                    to: l.to,
                    length_km: Some(l.length_km),
                })
                .collect(),
            slack: self.slack,
        }
    }
}

pub fn load_topology(doc: &TopologyDocument) -> Result<NetworkTopology, GridError> {
    if doc.buses.is_empty() {
        return Err(GridError::Empty);
    }
    let mut bus_index = HashMap::with_capacity(doc.buses.len());
    for (i, &bus) in doc.buses.iter().enumerate() {
        if bus_index.insert(bus, i).is_some() {
            return Err(GridError::DuplicateBus(bus));
        }
    }
    let slack_idx = *bus_index
        .get(&doc.slack)
        .ok_or(GridError::UnknownSlack(doc.slack))?;

    let mut lines = Vec::with_capacity(doc.lines.len());
    let mut line_index = HashMap::with_capacity(doc.lines.len());
    let mut uf = UnionFind::new(doc.buses.len());
    for spec in &doc.lines {
        let length_km = spec.length_km.unwrap_or(DEFAULT_LINE_KM);
        if !(length_km.is_finite() && length_km > 0.0) {
            return Err(GridError::InvalidLength {
                line: spec.id,
                length_km,
            });
        }
        let from = *bus_index.get(&spec.from).ok_or(GridError::DanglingReference {
            line: spec.id,
            bus: spec.from,
        })?;
        let to = *bus_index.get(&spec.to).ok_or(GridError::DanglingReference {
            line: spec.id,
            bus: spec.to,
        })?;
        if line_index.insert(spec.id, lines.len()).is_some() {
            return Err(GridError::DuplicateLine(spec.id));
        }
        // a self-loop also closes a cycle
        if !uf.union(from, to) {
            return Err(GridError::CycleDetected {
                line: spec.id,
                from: spec.from,
                to: spec.to,
            });
        }
        lines.push(Line {
            id: spec.id,
            from: spec.from,
            to: spec.to,
            length_km,
        });
    }

    let n = doc.buses.len();
    let mut adjacency = vec![Vec::new(); n];
    for (li, l) in lines.iter().enumerate() {
        let (a, b) = (bus_index[&l.from], bus_index[&l.to]);
        adjacency[a].push((b, li));
        adjacency[b].push((a, li));
    }
    let mut parent = vec![None; n];
    let mut depth = vec![usize::MAX; n];
    depth[slack_idx] = 0;
    let mut queue = VecDeque::from([slack_idx]);
    while let Some(u) = queue.pop_front() {
        for &(v, li) in &adjacency[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent[v] = Some((u, li));
                queue.push_back(v);
            }
        }
    }
    let unreached = depth.iter().filter(|&&d| d == usize::MAX).count();
    if unreached > 0 {
        return Err(GridError::Disconnected {
            slack: doc.slack,
            unreached,
        });
    }

    Ok(NetworkTopology {
        buses: doc.buses.clone(),
        lines,
        slack: doc.slack,
        bus_index,
        line_index,
        parent,
        depth,
    })
}

pub fn grid_service_charge(rate: f64, distance: ElectricalDistance) -> Result<ServiceCharge, GridError> {
    if !(rate >= 0.0) {
        return Err(GridError::NegativeRate(rate));
    }
    Ok(ServiceCharge {
        rate,
        charge: rate * distance.km(),
    })
}

/// All pairwise distances between the given buses.
pub fn distance_table(
    topo: &NetworkTopology,
    buses: &BTreeSet<BusId>,
) -> Result<BTreeMap<(BusId, BusId), ElectricalDistance>, GridError> {
    let mut out = BTreeMap::new();
    for &a in buses {
        for &b in buses {
            out.insert((a, b), topo.electrical_distance(a, b)?);
        }
    }
    Ok(out)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// False when both elements were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
