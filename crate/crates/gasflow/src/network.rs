//! Pipeline network data model, instance parsing, and structural validation.
//!
//! A network is an immutable multigraph of junctions connected by pipes,
//! compressors, and pass-through elements (short pipes, valves, regulators,
//! resistors). Junctions are either slack (pressure prescribed, injection
//! unknown) or non-slack (injection prescribed, pressure unknown). Closed
//! valves are dropped from the active edge set at construction.
//!
//! Structural assumptions checked by [`validate`]:
//! - at least one slack junction,
//! - known ratio on every compressor,
//! - no two slack junctions joined by a path of non-pipe edges only,
//! - no cycle made of non-pipe edges only.
//!
//! The last two matter because non-pipe elements decouple their end-point
//! pressures from the flow they carry, which makes the Jacobian of the flow
//! system singular when violated.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::eos::EosParams;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("malformed instance document: {0}")]
    MalformedInput(String),
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("junction {junction} specifies both a slack pressure and an injection")]
    InconsistentBoundary { junction: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JunctionKind {
    Slack,
    NonSlack,
}

/// Boundary data carried by a junction: exactly one of the two.
#[derive(Debug, Clone, PartialEq)]
pub enum Boundary {
    /// Prescribed pressure in pascals; the injection is recovered by the solver.
    Slack { pressure: f64 },
    /// Prescribed injection in kg/s, negative for withdrawal.
    Injection { mass_flow: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub boundary: Boundary,
}

impl Junction {
    pub fn slack(id: impl Into<String>, pressure: f64) -> Self {
        Self {
            id: id.into(),
            boundary: Boundary::Slack { pressure },
        }
    }

    pub fn consumer(id: impl Into<String>, injection: f64) -> Self {
        Self {
            id: id.into(),
            boundary: Boundary::Injection {
                mass_flow: injection,
            },
        }
    }

    pub fn kind(&self) -> JunctionKind {
        match self.boundary {
            Boundary::Slack { .. } => JunctionKind::Slack,
            Boundary::Injection { .. } => JunctionKind::NonSlack,
        }
    }

    pub fn slack_pressure(&self) -> Option<f64> {
        match self.boundary {
            Boundary::Slack { pressure } => Some(pressure),
            Boundary::Injection { .. } => None,
        }
    }

    pub fn injection(&self) -> Option<f64> {
        match self.boundary {
            Boundary::Slack { .. } => None,
            Boundary::Injection { mass_flow } => Some(mass_flow),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Length in meters.
    pub length: f64,
    /// Inner diameter in meters.
    pub diameter: f64,
    /// Darcy friction factor.
    pub friction_factor: f64,
}

impl Pipe {
    /// Cross-sectional area derived from the diameter.
    pub fn area(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compressor {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Pressure boost ratio, at least 1.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassThroughKind {
    ShortPipe,
    Valve,
    Regulator,
    Resistor,
    LossResistor,
}

/// Non-pipe, non-compressor element, modeled as a fixed pressure ratio.
///
/// Regulators, resistors, and short pipes default to a ratio of 1 (no
/// pressure change); valves default to closed and are removed from the
/// active edge set, while an open valve conducts with ratio 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PassThrough {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: PassThroughKind,
    pub ratio: f64,
    pub open: bool,
}

/// Physical element behind an active edge.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeElement {
    Pipe {
        length: f64,
        diameter: f64,
        friction_factor: f64,
    },
    /// Pressure-ratio element; `is_compressor` marks edges whose flow
    /// direction is constrained for feasibility.
    Boost { ratio: f64, is_compressor: bool },
}

/// Edge of the active graph with junction indices resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEdge {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub element: EdgeElement,
}

impl ActiveEdge {
    pub fn is_pipe(&self) -> bool {
        matches!(self.element, EdgeElement::Pipe { .. })
    }
}

/// Immutable pipeline network with boundary data and gas properties.
#[derive(Debug, Clone)]
pub struct Network {
    junctions: Vec<Junction>,
    pipes: Vec<Pipe>,
    compressors: Vec<Compressor>,
    pass_throughs: Vec<PassThrough>,
    eos: EosParams,
    index: HashMap<String, usize>,
    active: Vec<ActiveEdge>,
}

impl Network {
    /// Build and structurally check a network. Active edges are ordered
    /// pipes first, then compressors, then open pass-throughs.
    pub fn new(
        junctions: Vec<Junction>,
        pipes: Vec<Pipe>,
        compressors: Vec<Compressor>,
        pass_throughs: Vec<PassThrough>,
        eos: EosParams,
    ) -> Result<Self, ParseError> {
        if junctions.is_empty() {
            return Err(ParseError::SchemaViolation(
                "instance has no junctions".into(),
            ));
        }
        let mut index = HashMap::new();
        for (i, j) in junctions.iter().enumerate() {
            if index.insert(j.id.clone(), i).is_some() {
                return Err(ParseError::SchemaViolation(format!(
                    "duplicate junction id {:?}",
                    j.id
                )));
            }
            match j.boundary {
                Boundary::Slack { pressure } if !(pressure > 0.0 && pressure.is_finite()) => {
                    return Err(ParseError::SchemaViolation(format!(
                        "junction {:?} slack pressure must be positive",
                        j.id
                    )));
                }
                Boundary::Injection { mass_flow } if !mass_flow.is_finite() => {
                    return Err(ParseError::SchemaViolation(format!(
                        "junction {:?} injection must be finite",
                        j.id
                    )));
                }
                _ => {}
            }
        }
        eos.validate()
            .map_err(|e| ParseError::SchemaViolation(e.to_string()))?;

        let mut edge_ids: HashMap<String, ()> = HashMap::new();
        let mut endpoints = |id: &str, from: &str, to: &str| -> Result<(usize, usize), ParseError> {
            if edge_ids.insert(id.to_owned(), ()).is_some() {
                return Err(ParseError::SchemaViolation(format!(
                    "duplicate edge id {id:?}"
                )));
            }
            if from == to {
                return Err(ParseError::SchemaViolation(format!(
                    "edge {id:?} connects junction {from:?} to itself"
                )));
            }
            let f = *index.get(from).ok_or_else(|| {
                ParseError::SchemaViolation(format!("edge {id:?} references unknown junction {from:?}"))
            })?;
            let t = *index.get(to).ok_or_else(|| {
                ParseError::SchemaViolation(format!("edge {id:?} references unknown junction {to:?}"))
            })?;
            Ok((f, t))
        };

        let mut active = Vec::new();
        for p in &pipes {
            let (from, to) = endpoints(&p.id, &p.from, &p.to)?;
            if !(p.length > 0.0 && p.diameter > 0.0 && p.friction_factor > 0.0) {
                return Err(ParseError::SchemaViolation(format!(
                    "pipe {:?} needs positive length, diameter, and friction factor",
                    p.id
                )));
            }
            active.push(ActiveEdge {
                id: p.id.clone(),
                from,
                to,
                element: EdgeElement::Pipe {
                    length: p.length,
                    diameter: p.diameter,
                    friction_factor: p.friction_factor,
                },
            });
        }
        for c in &compressors {
            let (from, to) = endpoints(&c.id, &c.from, &c.to)?;
            if !(c.ratio >= 1.0 && c.ratio.is_finite()) {
                return Err(ParseError::SchemaViolation(format!(
                    "compressor {:?} ratio must be at least 1",
                    c.id
                )));
            }
            active.push(ActiveEdge {
                id: c.id.clone(),
                from,
                to,
                element: EdgeElement::Boost {
                    ratio: c.ratio,
                    is_compressor: true,
                },
            });
        }
        for pt in &pass_throughs {
            let (from, to) = endpoints(&pt.id, &pt.from, &pt.to)?;
            if !(pt.ratio > 0.0 && pt.ratio.is_finite()) {
                return Err(ParseError::SchemaViolation(format!(
                    "pass-through {:?} ratio must be positive",
                    pt.id
                )));
            }
            if pt.open {
                active.push(ActiveEdge {
                    id: pt.id.clone(),
                    from,
                    to,
                    element: EdgeElement::Boost {
                        ratio: pt.ratio,
                        is_compressor: false,
                    },
                });
            }
        }

        Ok(Self {
            junctions,
            pipes,
            compressors,
            pass_throughs,
            eos,
            index,
            active,
        })
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn pipes(&self) -> &[Pipe] {
        &self.pipes
    }

    pub fn compressors(&self) -> &[Compressor] {
        &self.compressors
    }

    pub fn pass_throughs(&self) -> &[PassThrough] {
        &self.pass_throughs
    }

    pub fn eos(&self) -> &EosParams {
        &self.eos
    }

    pub fn junction_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Pipes, compressors, and open pass-throughs, in that order.
    pub fn active_edges(&self) -> &[ActiveEdge] {
        &self.active
    }

    pub fn slack_count(&self) -> usize {
        self.junctions
            .iter()
            .filter(|j| j.kind() == JunctionKind::Slack)
            .count()
    }

    /// Replace this network's equation-of-state parameters.
    pub fn with_eos(&self, eos: EosParams) -> Result<Self, ParseError> {
        Self::new(
            self.junctions.clone(),
            self.pipes.clone(),
            self.compressors.clone(),
            self.pass_throughs.clone(),
            eos,
        )
    }
}

// --- instance file schema ---

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    units: String,
    #[serde(default)]
    nodes: Vec<RawNode>,
    #[serde(default)]
    pipes: Vec<RawPipe>,
    #[serde(default)]
    compressors: Vec<RawCompressor>,
    #[serde(default)]
    pass_throughs: Vec<RawPassThrough>,
    eos: Option<RawEos>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    id: String,
    slack_pressure_pa: Option<f64>,
    injection_kg_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipe {
    id: String,
    from: String,
    to: String,
    length_m: f64,
    diameter_m: f64,
    friction_factor: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompressor {
    id: String,
    from: String,
    to: String,
    ratio: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPassThrough {
    id: String,
    from: String,
    to: String,
    kind: PassThroughKind,
    ratio: Option<f64>,
    open: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEos {
    kind: Option<crate::eos::EosKind>,
    temperature_k: Option<f64>,
    specific_gravity: Option<f64>,
    gas_constant_j_per_kg_k: Option<f64>,
    atmospheric_pressure_pa: Option<f64>,
}

/// Parse a UTF-8 JSON instance document into a validated [`Network`].
///
/// All quantities are SI; the document must carry `"units": "si"`. Unknown
/// keys anywhere in the document are rejected.
pub fn parse_instance(text: &str) -> Result<Network, ParseError> {
    let raw: RawInstance = serde_json::from_str(text).map_err(|e| {
        if e.classify() == serde_json::error::Category::Data {
            ParseError::SchemaViolation(e.to_string())
        } else {
            ParseError::MalformedInput(e.to_string())
        }
    })?;
    if raw.units != "si" {
        return Err(ParseError::SchemaViolation(format!(
            "units tag must be \"si\", found {:?}",
            raw.units
        )));
    }

    let mut junctions = Vec::with_capacity(raw.nodes.len());
    for n in raw.nodes {
        let boundary = match (n.slack_pressure_pa, n.injection_kg_s) {
            (Some(_), Some(_)) => {
                return Err(ParseError::InconsistentBoundary { junction: n.id });
            }
            (Some(pressure), None) => Boundary::Slack { pressure },
            (None, Some(mass_flow)) => Boundary::Injection { mass_flow },
            (None, None) => {
                return Err(ParseError::SchemaViolation(format!(
                    "node {:?} must specify slack_pressure_pa or injection_kg_s",
                    n.id
                )));
            }
        };
        junctions.push(Junction {
            id: n.id,
            boundary,
        });
    }

    let pipes = raw
        .pipes
        .into_iter()
        .map(|p| Pipe {
            id: p.id,
            from: p.from,
            to: p.to,
            length: p.length_m,
            diameter: p.diameter_m,
            friction_factor: p.friction_factor,
        })
        .collect();
    let compressors = raw
        .compressors
        .into_iter()
        .map(|c| Compressor {
            id: c.id,
            from: c.from,
            to: c.to,
            ratio: c.ratio,
        })
        .collect();
    let pass_throughs = raw
        .pass_throughs
        .into_iter()
        .map(|pt| PassThrough {
            id: pt.id,
            from: pt.from,
            to: pt.to,
            kind: pt.kind,
            ratio: pt.ratio.unwrap_or(1.0),
            // Valves default to closed; every other element conducts.
            open: pt.open.unwrap_or(pt.kind != PassThroughKind::Valve),
        })
        .collect();

    let eos = match raw.eos {
        None => EosParams::ideal(),
        Some(e) => {
            let mut params = EosParams::new(e.kind.unwrap_or(crate::eos::EosKind::Ideal));
            if let Some(t) = e.temperature_k {
                params.temperature = t;
            }
            if let Some(g) = e.specific_gravity {
                params.specific_gravity = g;
            }
            if let Some(r) = e.gas_constant_j_per_kg_k {
                params.gas_constant = r;
            }
            if let Some(p) = e.atmospheric_pressure_pa {
                params.atmospheric_pressure = p;
            }
            params
        }
    };

    Network::new(junctions, pipes, compressors, pass_throughs, eos)
}

// --- structural validation ---

/// Outcome of checking the structural assumptions, with offending ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    /// No slack junction anywhere.
    pub missing_slack: bool,
    /// Compressors whose ratio is not a known finite value.
    pub invalid_ratio_compressors: Vec<String>,
    /// Groups of slack junctions connected through non-pipe edges only.
    pub slack_groups_without_pipe: Vec<Vec<String>>,
    /// Edges that close a cycle in the non-pipe subgraph.
    pub non_pipe_cycle_edges: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        !self.missing_slack
            && self.invalid_ratio_compressors.is_empty()
            && self.slack_groups_without_pipe.is_empty()
            && self.non_pipe_cycle_edges.is_empty()
    }

    /// One human-readable line per violated assumption.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.missing_slack {
            out.push("no slack junction in the network".to_string());
        }
        if !self.invalid_ratio_compressors.is_empty() {
            out.push(format!(
                "compressors without known ratio: {:?}",
                self.invalid_ratio_compressors
            ));
        }
        for group in &self.slack_groups_without_pipe {
            out.push(format!(
                "slack junctions {group:?} are connected by non-pipe edges only"
            ));
        }
        if !self.non_pipe_cycle_edges.is_empty() {
            out.push(format!(
                "non-pipe edges {:?} close a cycle with no pipe in it",
                self.non_pipe_cycle_edges
            ));
        }
        out
    }
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

    /// Returns false when both endpoints were already connected.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Check the structural assumptions; failures are reported, not raised.
pub fn validate(net: &Network) -> ValidationReport {
    let n = net.junctions().len();
    let mut report = ValidationReport {
        missing_slack: net.slack_count() == 0,
        ..Default::default()
    };

    for c in net.compressors() {
        if !c.ratio.is_finite() {
            report.invalid_ratio_compressors.push(c.id.clone());
        }
    }

    // Components of the non-pipe active subgraph; an edge landing inside an
    // existing component closes a pipe-free cycle.
    let mut uf = UnionFind::new(n);
    for e in net.active_edges() {
        if !e.is_pipe() && !uf.union(e.from, e.to) {
            report.non_pipe_cycle_edges.push(e.id.clone());
        }
    }

    let mut slack_by_root: HashMap<usize, Vec<String>> = HashMap::new();
    for (i, j) in net.junctions().iter().enumerate() {
        if j.kind() == JunctionKind::Slack {
            slack_by_root
                .entry(uf.find(i))
                .or_default()
                .push(j.id.clone());
        }
    }
    let mut groups: Vec<Vec<String>> = slack_by_root
        .into_values()
        .filter(|g| g.len() >= 2)
        .collect();
    groups.sort();
    report.slack_groups_without_pipe = groups;

    report
}

// --- incidence matrices ---

/// Node-edge incidence of the active graph: -1 at an edge's tail junction,
/// +1 at its head. The reduced form keeps only non-slack rows.
#[derive(Debug, Clone)]
pub struct IncidenceMatrices {
    node_count: usize,
    columns: Vec<(usize, usize)>,
    non_slack_rows: Vec<usize>,
    column_ids: Vec<String>,
}

impl IncidenceMatrices {
    pub fn full_shape(&self) -> (usize, usize) {
        (self.node_count, self.columns.len())
    }

    pub fn reduced_shape(&self) -> (usize, usize) {
        (self.non_slack_rows.len(), self.columns.len())
    }

    /// Tail and head junction index per column.
    pub fn columns(&self) -> &[(usize, usize)] {
        &self.columns
    }

    /// Junction indices backing the reduced rows, in junction order.
    pub fn non_slack_rows(&self) -> &[usize] {
        &self.non_slack_rows
    }

    /// Edge ids in column order.
    pub fn column_ids(&self) -> &[String] {
        &self.column_ids
    }

    pub fn full_entry(&self, row: usize, col: usize) -> f64 {
        let (tail, head) = self.columns[col];
        if row == tail {
            -1.0
        } else if row == head {
            1.0
        } else {
            0.0
        }
    }

    pub fn reduced_entry(&self, row: usize, col: usize) -> f64 {
        self.full_entry(self.non_slack_rows[row], col)
    }

    /// Full incidence times an edge-flow vector.
    pub fn full_times(&self, flows: &[f64]) -> Vec<f64> {
        assert_eq!(flows.len(), self.columns.len());
        let mut out = vec![0.0; self.node_count];
        for (col, &(tail, head)) in self.columns.iter().enumerate() {
            out[tail] -= flows[col];
            out[head] += flows[col];
        }
        out
    }

    /// Reduced incidence times an edge-flow vector.
    pub fn reduced_times(&self, flows: &[f64]) -> Vec<f64> {
        let full = self.full_times(flows);
        self.non_slack_rows.iter().map(|&r| full[r]).collect()
    }
}

/// Build the incidence matrices of the active graph.
pub fn incidence(net: &Network) -> IncidenceMatrices {
    let columns = net
        .active_edges()
        .iter()
        .map(|e| (e.from, e.to))
        .collect();
    let column_ids = net.active_edges().iter().map(|e| e.id.clone()).collect();
    let non_slack_rows = net
        .junctions()
        .iter()
        .enumerate()
        .filter(|(_, j)| j.kind() == JunctionKind::NonSlack)
        .map(|(i, _)| i)
        .collect();
    IncidenceMatrices {
        node_count: net.junctions().len(),
        columns,
        non_slack_rows,
        column_ids,
    }
}

// --- instance perturbation ---

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Per-element random stream: the draw for an element depends only on the
/// batch seed and the element's id, never on iteration order.
fn element_rng(seed: u64, tag: &str, id: &str) -> ChaCha12Rng {
    let mut h = fnv1a(tag.as_bytes(), FNV_OFFSET);
    h = fnv1a(&[0x1f], h);
    h = fnv1a(id.as_bytes(), h);
    ChaCha12Rng::seed_from_u64(seed ^ h)
}

/// Derive a randomized instance: every non-slack injection is scaled by an
/// independent uniform factor from `withdrawal_range`, and every compressor
/// ratio is redrawn uniformly from `ratio_range`. Deterministic in `seed`.
pub fn perturb_instance(
    net: &Network,
    seed: u64,
    withdrawal_range: (f64, f64),
    ratio_range: (f64, f64),
) -> Network {
    assert!(
        withdrawal_range.0 > 0.0 && withdrawal_range.0 <= withdrawal_range.1,
        "withdrawal range must be positive and ordered"
    );
    assert!(
        ratio_range.0 > 0.0 && ratio_range.0 <= ratio_range.1,
        "ratio range must be positive and ordered"
    );

    let junctions = net
        .junctions()
        .iter()
        .map(|j| match j.boundary {
            Boundary::Slack { .. } => j.clone(),
            Boundary::Injection { mass_flow } => {
                let factor = element_rng(seed, "injection", &j.id)
                    .random_range(withdrawal_range.0..=withdrawal_range.1);
                Junction {
                    id: j.id.clone(),
                    boundary: Boundary::Injection {
                        mass_flow: mass_flow * factor,
                    },
                }
            }
        })
        .collect();
    let compressors = net
        .compressors()
        .iter()
        .map(|c| Compressor {
            ratio: element_rng(seed, "ratio", &c.id)
                .random_range(ratio_range.0..=ratio_range.1),
            ..c.clone()
        })
        .collect();

    Network::new(
        junctions,
        net.pipes().to_vec(),
        compressors,
        net.pass_throughs().to_vec(),
        *net.eos(),
    )
    .expect("perturbation preserves structural validity")
}
