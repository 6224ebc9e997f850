//! Crossbar array builders and the extracted array object.
//!
//! Two port configurations of the same bipartite resistive fabric:
//!
//! * **Equilibrium**: input ports (voltage-driven) between the input nodes
//!   `a_1..a_p` and an input rail `s`; output ports (current-driven) and
//!   reverse diodes in parallel between the output nodes `b_1..b_q` and an
//!   output rail `t`. The resistive fabric is the complete bipartite graph on
//!   `{s, a_i} × {t, b_j}`, so the conductance matrix is `(p+1)×(q+1)` with
//!   row 0 = the input rail and column 0 = the output rail. The rail edges
//!   are what make the H and D22 kernel blocks positive definite; without
//!   them every current injected at a port would have to return through
//!   another port and both blocks would be structurally singular.
//! * **Feedforward**: every port and diode returns to a single common earth;
//!   the fabric is the plain `p×q` grid between `a_i` and `b_j`. The kernel's
//!   H block is diagonal, so the layer computes an explicit ReLU.
//!
//! In both configurations the q output ports are ordered first, then the p
//! input ports, so `u = (i_out; v_in)`, `y = (v_out; i_in)`, and the diode
//! states satisfy `v_out = z` exactly.

use nalgebra::DMatrix;

use crate::activation::{ActivationKind, VariableKind};
use crate::error::{Error, Result};
use crate::form::{fundamental_form, reduce_to_hybrid, FundamentalForm, HybridMatrix, SlotKind};
use crate::graph::{partition_tree_cotree, CircuitGraph, Element, PortRole, TreeCotree};
use crate::kernel::{extract_kernel, KernelBehavior};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossbarKind {
    Equilibrium,
    Feedforward,
}

fn validate_conductances(g: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if g.nrows() != rows || g.ncols() != cols {
        return Err(Error::DimensionMismatch { expected: rows * cols, got: g.nrows() * g.ncols() });
    }
    for v in g.iter() {
        if !(*v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidParameter(format!("conductance must be positive, got {v}")));
        }
    }
    Ok(())
}

/// Equilibrium-configured crossbar graph. `g` is `(p+1)×(q+1)`: `g[(i, j)]`
/// is the conductance between input node i and output node j, with index 0
/// naming the rail on each side.
pub fn build_crossbar_equilibrium(p: usize, q: usize, g: &DMatrix<f64>) -> Result<CircuitGraph> {
    if p == 0 || q == 0 {
        return Err(Error::InvalidParameter("crossbar needs p, q ≥ 1".into()));
    }
    validate_conductances(g, p + 1, q + 1)?;
    // Nodes: s = 0, a_i = i, b_j = p + j, t = p + q + 1.
    let s = 0;
    let t = p + q + 1;
    let a = |i: usize| i;
    let b = |j: usize| p + j;
    let mut graph = CircuitGraph::new(p + q + 2);
    for j in 1..=q {
        graph.add_edge(b(j), t, Element::Port(PortRole::CurrentInput))?;
    }
    for i in 1..=p {
        graph.add_edge(a(i), s, Element::Port(PortRole::VoltageInput))?;
    }
    for j in 1..=q {
        graph.add_edge(b(j), t, Element::Diode(ActivationKind::IdealDiodeReverse))?;
    }
    for i in 0..=p {
        for j in 0..=q {
            let tail = if i == 0 { s } else { a(i) };
            let head = if j == 0 { t } else { b(j) };
            graph.add_edge(tail, head, Element::Conductor(g[(i, j)]))?;
        }
    }
    Ok(graph)
}

/// Feedforward (common-earth) crossbar graph. `g` is `p×q`: `g[(i, j)]` is
/// the conductance between input node i+1 and output node j+1.
pub fn build_crossbar_feedforward(p: usize, q: usize, g: &DMatrix<f64>) -> Result<CircuitGraph> {
    if p == 0 || q == 0 {
        return Err(Error::InvalidParameter("crossbar needs p, q ≥ 1".into()));
    }
    validate_conductances(g, p, q)?;
    // Nodes: earth = 0, a_i = i, b_j = p + j.
    let earth = 0;
    let a = |i: usize| i;
    let b = |j: usize| p + j;
    let mut graph = CircuitGraph::new(p + q + 1);
    for j in 1..=q {
        graph.add_edge(b(j), earth, Element::Port(PortRole::CurrentInput))?;
    }
    for i in 1..=p {
        graph.add_edge(a(i), earth, Element::Port(PortRole::VoltageInput))?;
    }
    for j in 1..=q {
        graph.add_edge(b(j), earth, Element::Diode(ActivationKind::IdealDiodeReverse))?;
    }
    for i in 1..=p {
        for j in 1..=q {
            graph.add_edge(a(i), b(j), Element::Conductor(g[(i - 1, j - 1)]))?;
        }
    }
    Ok(graph)
}

/// A crossbar with its extraction pipeline kept alive: graph, tree/cotree
/// split, fundamental form, hybrid matrix and kernel all stay consistent
/// under conductance updates, which is what the training loop and the
/// edge-derivative machinery need.
#[derive(Debug, Clone)]
pub struct CrossbarArray {
    kind: CrossbarKind,
    p: usize,
    q: usize,
    conductance: DMatrix<f64>,
    graph: CircuitGraph,
    split: TreeCotree,
    form: FundamentalForm,
    hybrid: HybridMatrix,
    kernel: KernelBehavior,
    /// Edge id of resistor (i, j), same shape as `conductance`.
    resistor_edges: DMatrix<usize>,
}

impl CrossbarArray {
    pub fn equilibrium(p: usize, q: usize, g: &DMatrix<f64>) -> Result<Self> {
        let graph = build_crossbar_equilibrium(p, q, g)?;
        let first = p + 2 * q;
        let resistor_edges =
            DMatrix::from_fn(p + 1, q + 1, |i, j| first + i * (q + 1) + j);
        Self::assemble(CrossbarKind::Equilibrium, p, q, g.clone(), graph, resistor_edges)
    }

    pub fn feedforward(p: usize, q: usize, g: &DMatrix<f64>) -> Result<Self> {
        let graph = build_crossbar_feedforward(p, q, g)?;
        let first = p + 2 * q;
        let resistor_edges = DMatrix::from_fn(p, q, |i, j| first + i * q + j);
        Self::assemble(CrossbarKind::Feedforward, p, q, g.clone(), graph, resistor_edges)
    }

    fn assemble(
        kind: CrossbarKind,
        p: usize,
        q: usize,
        conductance: DMatrix<f64>,
        graph: CircuitGraph,
        resistor_edges: DMatrix<usize>,
    ) -> Result<Self> {
        let split = partition_tree_cotree(&graph)?;
        let form = fundamental_form(&graph, &split)?;
        let hybrid = reduce_to_hybrid(&form)?;
        let kernel = extract_kernel(&hybrid)?;
        Ok(CrossbarArray { kind, p, q, conductance, graph, split, form, hybrid, kernel, resistor_edges })
    }

    pub fn kind(&self) -> CrossbarKind {
        self.kind
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn graph(&self) -> &CircuitGraph {
        &self.graph
    }

    pub fn split(&self) -> &TreeCotree {
        &self.split
    }

    pub fn form(&self) -> &FundamentalForm {
        &self.form
    }

    pub fn hybrid(&self) -> &HybridMatrix {
        &self.hybrid
    }

    pub fn kernel(&self) -> &KernelBehavior {
        &self.kernel
    }

    /// Conductance matrix; `(p+1)×(q+1)` for equilibrium arrays (index 0 =
    /// rail), `p×q` for feedforward ones.
    pub fn conductances(&self) -> &DMatrix<f64> {
        &self.conductance
    }

    pub fn resistor_edge(&self, i: usize, j: usize) -> usize {
        self.resistor_edges[(i, j)]
    }

    pub fn resistor_edges(&self) -> &DMatrix<usize> {
        &self.resistor_edges
    }

    /// Columns of `u` holding the output ports' current offsets.
    pub fn offset_columns(&self) -> std::ops::Range<usize> {
        0..self.q
    }

    /// Columns of `u` holding the input port voltages.
    pub fn input_columns(&self) -> std::ops::Range<usize> {
        self.q..self.q + self.p
    }

    /// Rows of `y` holding the output port voltages.
    pub fn output_rows(&self) -> std::ops::Range<usize> {
        0..self.q
    }

    /// Update one conductance and re-extract the kernel pipeline.
    pub fn set_conductance(&mut self, i: usize, j: usize, g: f64) -> Result<()> {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::InvalidParameter(format!("conductance must be positive, got {g}")));
        }
        let edge = self.resistor_edges[(i, j)];
        self.graph.set_resistive_value(edge, g)?;
        self.conductance[(i, j)] = g;
        self.reextract()
    }

    /// Replace every diode's device law. Only voltage-input laws keep the
    /// array's structure (the diodes must stay in the spanning tree).
    pub fn set_diode_activation(&mut self, kind: ActivationKind) -> Result<()> {
        if kind.input_kind() != VariableKind::Voltage {
            return Err(Error::InvalidParameter(
                "crossbar diodes take voltage inputs; current-input law not representable".into(),
            ));
        }
        self.graph.set_diode_activation(kind);
        for entry in &mut self.form.entries {
            if let SlotKind::Diode(_) = entry.slot {
                entry.slot = SlotKind::Diode(kind);
            }
        }
        for entry in &mut self.hybrid.entries {
            if let SlotKind::Diode(_) = entry.slot {
                entry.slot = SlotKind::Diode(kind);
            }
        }
        for a in &mut self.kernel.activations {
            *a = kind;
        }
        Ok(())
    }

    fn reextract(&mut self) -> Result<()> {
        // The split never changes: tree membership depends only on topology.
        self.form = fundamental_form(&self.graph, &self.split)?;
        self.hybrid = reduce_to_hybrid(&self.form)?;
        self.kernel = extract_kernel(&self.hybrid)?;
        Ok(())
    }
}
