//! JSON netlist schema, version 1.
//!
//! ```json
//! {
//!   "version": 1,
//!   "nodes": 4,
//!   "edges": [
//!     {"tail": 1, "head": 0, "kind": "port", "role": "voltage_input"},
//!     {"tail": 1, "head": 2, "kind": "resistor", "value": 100.0},
//!     {"tail": 2, "head": 0, "kind": "diode",
//!      "activation": {"variant": "ideal_diode_reverse"}}
//!   ],
//!   "labels": {"name": "divider"}
//! }
//! ```
//!
//! Unknown fields are rejected, and a graph survives an export/import cycle
//! bit-for-bit (edge order, orientations and values included). `labels` is
//! free-form metadata and never interpreted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::graph::{CircuitGraph, Element, PortRole};

pub const NETLIST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EdgeKind {
    Resistor,
    Conductor,
    Port,
    Diode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RoleTag {
    VoltageInput,
    CurrentInput,
}

impl From<PortRole> for RoleTag {
    fn from(r: PortRole) -> Self {
        match r {
            PortRole::VoltageInput => RoleTag::VoltageInput,
            PortRole::CurrentInput => RoleTag::CurrentInput,
        }
    }
}

impl From<RoleTag> for PortRole {
    fn from(r: RoleTag) -> Self {
        match r {
            RoleTag::VoltageInput => PortRole::VoltageInput,
            RoleTag::CurrentInput => PortRole::CurrentInput,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetlistEdge {
    tail: usize,
    head: usize,
    kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    role: Option<RoleTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<ActivationKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Netlist {
    pub version: u32,
    pub nodes: usize,
    pub edges: Vec<NetlistEdge>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl Netlist {
    pub fn from_graph(graph: &CircuitGraph) -> Self {
        let edges = graph
            .edges()
            .iter()
            .map(|e| {
                let (kind, value, role, activation) = match e.element {
                    Element::Resistor(r) => (EdgeKind::Resistor, Some(r), None, None),
                    Element::Conductor(g) => (EdgeKind::Conductor, Some(g), None, None),
                    Element::Port(p) => (EdgeKind::Port, None, Some(RoleTag::from(p)), None),
                    Element::Diode(a) => (EdgeKind::Diode, None, None, Some(a)),
                };
                NetlistEdge { tail: e.tail, head: e.head, kind, value, role, activation }
            })
            .collect();
        Netlist {
            version: NETLIST_VERSION,
            nodes: graph.n_nodes(),
            edges,
            labels: BTreeMap::new(),
        }
    }

    pub fn to_graph(&self) -> Result<CircuitGraph> {
        if self.version != NETLIST_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported netlist version {} (expected {NETLIST_VERSION})",
                self.version
            )));
        }
        let mut graph = CircuitGraph::new(self.nodes);
        for (idx, e) in self.edges.iter().enumerate() {
            let bad = |msg: &str| {
                Error::InvalidParameter(format!("edge {idx}: {msg}"))
            };
            let element = match e.kind {
                EdgeKind::Resistor => {
                    Element::Resistor(e.value.ok_or_else(|| bad("resistor needs a value"))?)
                }
                EdgeKind::Conductor => {
                    Element::Conductor(e.value.ok_or_else(|| bad("conductor needs a value"))?)
                }
                EdgeKind::Port => {
                    Element::Port(e.role.ok_or_else(|| bad("port needs a role"))?.into())
                }
                EdgeKind::Diode => Element::Diode(
                    e.activation.ok_or_else(|| bad("diode needs an activation"))?,
                ),
            };
            if matches!(e.kind, EdgeKind::Resistor | EdgeKind::Conductor) {
                if e.role.is_some() || e.activation.is_some() {
                    return Err(bad("resistive edges take only a value"));
                }
            }
            if e.kind == EdgeKind::Port && (e.value.is_some() || e.activation.is_some()) {
                return Err(bad("ports take only a role"));
            }
            if e.kind == EdgeKind::Diode && (e.value.is_some() || e.role.is_some()) {
                return Err(bad("diodes take only an activation"));
            }
            graph.add_edge(e.tail, e.head, element)?;
        }
        Ok(graph)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::InvalidParameter(format!("netlist serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("netlist parse: {e}")))
    }
}

/// Graph → JSON text.
pub fn export_netlist(graph: &CircuitGraph) -> Result<String> {
    Netlist::from_graph(graph).to_json()
}

/// JSON text → graph.
pub fn import_netlist(text: &str) -> Result<CircuitGraph> {
    Netlist::from_json(text)?.to_graph()
}
