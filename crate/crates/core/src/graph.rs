//! Circuit graphs and the tree/cotree split.
//!
//! A circuit is an oriented multigraph whose edges carry elements: resistive
//! branches, external ports, and diode-like devices. Every edge has a tail
//! (its positive terminal) and a head; the branch voltage is the potential
//! drop tail minus head and the branch current flows tail to head through the
//! element. Port currents therefore follow the leaving-the-positive-terminal
//! convention, which makes passive networks produce negative driving-point
//! currents for positive applied voltages.
//!
//! Kernel extraction hinges on a spanning tree that contains every edge whose
//! voltage acts as an input (voltage ports, voltage-input diodes) and excludes
//! every edge whose current acts as an input (current ports, current-input
//! diodes). Resistive edges fill the remaining tree slots greedily in
//! insertion order, which keeps the split deterministic.

use crate::activation::{ActivationKind, VariableKind};
use crate::error::{Error, Result};

/// Which driving-point variable an external port consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortRole {
    VoltageInput,
    CurrentInput,
}

impl PortRole {
    pub fn input_kind(self) -> VariableKind {
        match self {
            PortRole::VoltageInput => VariableKind::Voltage,
            PortRole::CurrentInput => VariableKind::Current,
        }
    }
}

/// Element catalogue. Resistive branches may be given either as a resistance
/// in ohms or a conductance in siemens; the two differ only in how the branch
/// is parameterized, not in which tree slot it may occupy.
#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Resistor(f64),
    Conductor(f64),
    Port(PortRole),
    Diode(ActivationKind),
}

impl Element {
    pub fn is_resistive(&self) -> bool {
        matches!(self, Element::Resistor(_) | Element::Conductor(_))
    }

    /// Input kind for non-resistive edges; resistive edges take whichever
    /// role their tree position assigns.
    pub fn fixed_input_kind(&self) -> Option<VariableKind> {
        match self {
            Element::Port(role) => Some(role.input_kind()),
            Element::Diode(kind) => Some(kind.input_kind()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub element: Element,
}

/// Oriented multigraph with a fixed node count and insertion-ordered edges.
#[derive(Debug, Clone)]
pub struct CircuitGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
}

impl CircuitGraph {
    pub fn new(n_nodes: usize) -> Self {
        CircuitGraph {
            n_nodes,
            edges: Vec::new(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    /// Append an edge and return its id. Ids are dense and stable.
    pub fn add_edge(&mut self, tail: usize, head: usize, element: Element) -> Result<usize> {
        if tail >= self.n_nodes || head >= self.n_nodes {
            return Err(Error::InvalidParameter(format!(
                "edge {tail}->{head} references a node outside 0..{}",
                self.n_nodes
            )));
        }
        if tail == head {
            return Err(Error::InvalidParameter(format!(
                "self-loop at node {tail} is not a circuit element"
            )));
        }
        match element {
            Element::Resistor(v) | Element::Conductor(v) => {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "resistive branch value must be positive and finite (got {v})"
                    )));
                }
            }
            _ => {}
        }
        self.edges.push(Edge { tail, head, element });
        Ok(self.edges.len() - 1)
    }

    /// Replace the value of a resistive edge, keeping its kind.
    pub fn set_resistive_value(&mut self, id: usize, value: f64) -> Result<()> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "resistive branch value must be positive and finite (got {value})"
            )));
        }
        match &mut self.edges[id].element {
            Element::Resistor(v) | Element::Conductor(v) => {
                *v = value;
                Ok(())
            }
            other => Err(Error::InvalidParameter(format!(
                "edge {id} is not resistive (got {other:?})"
            ))),
        }
    }

    /// Swap the device law on every diode edge (used to trade ideal diodes
    /// for a smooth junction model without rebuilding the graph).
    pub fn set_diode_activation(&mut self, kind: ActivationKind) {
        for edge in &mut self.edges {
            if let Element::Diode(_) = edge.element {
                edge.element = Element::Diode(kind);
            }
        }
    }
}

/// A spanning tree split honoring the input-variable constraints.
#[derive(Debug, Clone)]
pub struct TreeCotree {
    pub tree: Vec<usize>,
    pub cotree: Vec<usize>,
    in_tree: Vec<bool>,
}

impl TreeCotree {
    pub fn is_tree_edge(&self, id: usize) -> bool {
        self.in_tree[id]
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
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

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

/// Deterministic tree/cotree split.
///
/// Voltage-input edges are forced into the tree, current-input edges into the
/// cotree, and resistive edges are taken in insertion order wherever they
/// join two components. Fails if the voltage-input edges already close a
/// loop, if spanning the graph would require a current-input edge, or if the
/// graph is disconnected.
pub fn partition_tree_cotree(graph: &CircuitGraph) -> Result<TreeCotree> {
    let n = graph.n_nodes();
    let mut uf = UnionFind::new(n);
    let mut in_tree = vec![false; graph.edges().len()];
    let mut tree_count = 0usize;

    for (id, edge) in graph.edges().iter().enumerate() {
        if edge.element.fixed_input_kind() == Some(VariableKind::Voltage) {
            if !uf.union(edge.tail, edge.head) {
                return Err(Error::InfeasiblePartition(format!(
                    "voltage-input edges close a loop at edge {id}"
                )));
            }
            in_tree[id] = true;
            tree_count += 1;
        }
    }

    for (id, edge) in graph.edges().iter().enumerate() {
        if edge.element.is_resistive() && uf.union(edge.tail, edge.head) {
            in_tree[id] = true;
            tree_count += 1;
        }
    }

    if n > 0 && tree_count != n - 1 {
        // Either genuinely disconnected, or connected only through a
        // current-input edge that must stay in the cotree.
        let mut all = UnionFind::new(n);
        for edge in graph.edges() {
            all.union(edge.tail, edge.head);
        }
        let root = all.find(0);
        let connected = (1..n).all(|v| all.find(v) == root);
        if connected {
            return Err(Error::InfeasiblePartition(
                "a current-input edge is a bridge and would have to enter the spanning tree".into(),
            ));
        }
        return Err(Error::Disconnected);
    }

    let tree = (0..in_tree.len()).filter(|&i| in_tree[i]).collect();
    let cotree = (0..in_tree.len()).filter(|&i| !in_tree[i]).collect();
    Ok(TreeCotree {
        tree,
        cotree,
        in_tree,
    })
}
