//! Fundamental interconnection form and hybrid reduction.
//!
//! Cutting the ports, diodes and resistive branches out of a circuit leaves a
//! lossless interconnect (here: plain wires) that relates every element's
//! input variable to every element's dual response through the fundamental
//! loop matrix of a tree/cotree split. Stacking those relations gives
//!
//! ```text
//! ( y )   ( P  -Mᵀ) ( x )
//! ( w̃ ) = ( M    Q ) ( w )
//! ```
//!
//! with `x` the port/diode inputs, `y` their duals, `w` the resistive inputs
//! and `w̃ = diag(θ) w` the resistive responses. `P` and `Q` are skew
//! (losslessness); eliminating the resistive block yields the hybrid matrix
//!
//! ```text
//! H̃ = P - Mᵀ (diag(θ) - Q)^{-1} M
//! ```
//!
//! whose negated partition is the network kernel. Tree edges contribute
//! voltage inputs, cotree edges current inputs; a resistive edge's θ entry is
//! therefore its resistance when it lands in the cotree and its conductance
//! when it lands in the tree.

use nalgebra::{DMatrix, DVector};

use crate::activation::{ActivationKind, VariableKind};
use crate::error::{Error, Result};
use crate::graph::{CircuitGraph, Element, PortRole, TreeCotree};
use crate::tol;

/// What a port/diode column of the form refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlotKind {
    Port(PortRole),
    Diode(ActivationKind),
}

/// One port/diode variable: its edge, its element, and which variable of
/// that edge acts as the input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormEntry {
    pub edge: usize,
    pub slot: SlotKind,
    pub input: VariableKind,
}

/// One resistive variable of the form, in `w` order (cotree branches first,
/// then tree branches).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResistorEntry {
    pub edge: usize,
    pub in_tree: bool,
    /// θ entry: resistance (cotree) or conductance (tree).
    pub theta: f64,
}

/// Fundamental form of a circuit: the lossless interconnect blocks plus the
/// resistive parameter vector. Port entries come first, then diode entries.
#[derive(Debug, Clone)]
pub struct FundamentalForm {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub entries: Vec<FormEntry>,
    pub resistors: Vec<ResistorEntry>,
}

impl FundamentalForm {
    /// Hand-build a form from raw blocks. `P` and `Q` must be skew; this is
    /// the entry point for interconnects richer than plain wires (ideal
    /// transformers and gyrators land in off-diagonal couplings of these
    /// blocks).
    pub fn from_blocks(
        p: DMatrix<f64>,
        q: DMatrix<f64>,
        m: DMatrix<f64>,
        entries: Vec<FormEntry>,
        resistors: Vec<ResistorEntry>,
    ) -> Result<Self> {
        let n_pd = entries.len();
        let n_r = resistors.len();
        if p.nrows() != n_pd || p.ncols() != n_pd {
            return Err(Error::DimensionMismatch { expected: n_pd, got: p.nrows() });
        }
        if q.nrows() != n_r || q.ncols() != n_r {
            return Err(Error::DimensionMismatch { expected: n_r, got: q.nrows() });
        }
        if m.nrows() != n_r || m.ncols() != n_pd {
            return Err(Error::DimensionMismatch { expected: n_r, got: m.nrows() });
        }
        let skew = |a: &DMatrix<f64>| (a + a.transpose()).amax();
        if n_pd > 0 && skew(&p) > tol::SYMMETRY {
            return Err(Error::InvalidParameter("P block must be skew-symmetric".into()));
        }
        if n_r > 0 && skew(&q) > tol::SYMMETRY {
            return Err(Error::InvalidParameter("Q block must be skew-symmetric".into()));
        }
        for r in &resistors {
            if !(r.theta > 0.0) || !r.theta.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "resistive parameter must be positive (edge {}, got {})",
                    r.edge, r.theta
                )));
            }
        }
        Ok(FundamentalForm { p, q, m, entries, resistors })
    }

    pub fn n_port_diode(&self) -> usize {
        self.entries.len()
    }

    pub fn n_resistors(&self) -> usize {
        self.resistors.len()
    }

    /// θ as a vector, in `w` order.
    pub fn theta(&self) -> DVector<f64> {
        DVector::from_iterator(self.resistors.len(), self.resistors.iter().map(|r| r.theta))
    }

    /// `diag(θ) - Q`, the resistive block to be eliminated.
    pub fn theta_minus_q(&self) -> DMatrix<f64> {
        let mut a = -self.q.clone();
        for (i, r) in self.resistors.iter().enumerate() {
            a[(i, i)] += r.theta;
        }
        a
    }

    /// Signature of the port/diode inputs: -1 for currents, +1 for voltages.
    pub fn signature(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.entries.len(),
            self.entries.iter().map(|e| e.input.signature()),
        )
    }

    /// Signature of the resistive inputs `w`.
    pub fn resistor_signature(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.resistors.len(),
            self.resistors.iter().map(|r| {
                if r.in_tree {
                    VariableKind::Voltage.signature()
                } else {
                    VariableKind::Current.signature()
                }
            }),
        )
    }

    /// Position of a graph edge in the `w` ordering, if it is resistive.
    pub fn resistor_position(&self, edge: usize) -> Option<usize> {
        self.resistors.iter().position(|r| r.edge == edge)
    }
}

/// Hybrid matrix `H̃` mapping port/diode inputs to their duals, with the
/// variable metadata needed to partition it into a kernel.
#[derive(Debug, Clone)]
pub struct HybridMatrix {
    pub matrix: DMatrix<f64>,
    pub entries: Vec<FormEntry>,
}

impl HybridMatrix {
    pub fn n_ports(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.slot, SlotKind::Port(_)))
            .count()
    }

    pub fn n_diodes(&self) -> usize {
        self.entries.len() - self.n_ports()
    }

    pub fn signature(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.entries.len(),
            self.entries.iter().map(|e| e.input.signature()),
        )
    }
}

/// Walk the spanning tree from `from` to `to`, returning `(edge, dir)` pairs
/// where `dir` is +1 when the edge is traversed tail→head.
fn tree_path(
    graph: &CircuitGraph,
    split: &TreeCotree,
    from: usize,
    to: usize,
) -> Vec<(usize, f64)> {
    let n = graph.n_nodes();
    let mut adj: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for &id in &split.tree {
        let e = graph.edge(id);
        adj[e.tail].push((id, e.head, 1.0));
        adj[e.head].push((id, e.tail, -1.0));
    }
    // BFS with parent pointers.
    let mut prev: Vec<Option<(usize, usize, f64)>> = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    seen[from] = true;
    queue.push_back(from);
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for &(id, w, dir) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                prev[w] = Some((v, id, dir));
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut at = to;
    while at != from {
        let (parent, id, dir) = prev[at].expect("tree spans all nodes");
        path.push((id, dir));
        at = parent;
    }
    path.reverse();
    path
}

/// Assemble the fundamental form of a circuit over a tree/cotree split.
///
/// Port and diode variables are ordered ports-first, each group in edge
/// insertion order; resistive variables are ordered cotree-first. Every entry
/// of `P`, `Q`, `M` is ±1, read off the fundamental loops of the cotree
/// edges.
pub fn fundamental_form(graph: &CircuitGraph, split: &TreeCotree) -> Result<FundamentalForm> {
    // Variable orderings.
    let mut entries = Vec::new();
    for (id, edge) in graph.edges().iter().enumerate() {
        if let Element::Port(role) = edge.element {
            entries.push(FormEntry {
                edge: id,
                slot: SlotKind::Port(role),
                input: role.input_kind(),
            });
        }
    }
    for (id, edge) in graph.edges().iter().enumerate() {
        if let Element::Diode(kind) = edge.element {
            entries.push(FormEntry {
                edge: id,
                slot: SlotKind::Diode(kind),
                input: kind.input_kind(),
            });
        }
    }
    let mut resistors = Vec::new();
    for &id in split.cotree.iter().chain(split.tree.iter()) {
        let edge = graph.edge(id);
        let in_tree = split.is_tree_edge(id);
        let theta = match edge.element {
            // Cotree branches enter θ as resistances, tree branches as conductances.
            Element::Resistor(r) => {
                if in_tree {
                    1.0 / r
                } else {
                    r
                }
            }
            Element::Conductor(g) => {
                if in_tree {
                    g
                } else {
                    1.0 / g
                }
            }
            _ => continue,
        };
        resistors.push(ResistorEntry { edge: id, in_tree, theta });
    }
    // Cotree resistors precede tree resistors by construction of the chain
    // above only if we split the iteration; enforce explicitly.
    resistors.sort_by_key(|r| (r.in_tree, r.edge));

    let n_pd = entries.len();
    let n_r = resistors.len();
    let mut p = DMatrix::zeros(n_pd, n_pd);
    let mut q = DMatrix::zeros(n_r, n_r);
    let mut m = DMatrix::zeros(n_r, n_pd);

    let pd_index: std::collections::HashMap<usize, usize> =
        entries.iter().enumerate().map(|(i, e)| (e.edge, i)).collect();
    let w_index: std::collections::HashMap<usize, usize> =
        resistors.iter().enumerate().map(|(i, r)| (r.edge, i)).collect();

    for &c in &split.cotree {
        let ce = graph.edge(c);
        // Fundamental loop of c: traverse c tail→head, return through the tree.
        let path = tree_path(graph, split, ce.head, ce.tail);
        for (t, dir) in path {
            // dir = B[c, t]: +1 when t is traversed along its own orientation.
            match (w_index.get(&c), w_index.get(&t)) {
                (None, None) => {
                    let (ci, ti) = (pd_index[&c], pd_index[&t]);
                    // Tree output current picks up cotree input currents;
                    // cotree output voltage picks up tree input voltages.
                    p[(ti, ci)] += dir;
                    p[(ci, ti)] -= dir;
                }
                (Some(&cw), None) => {
                    let ti = pd_index[&t];
                    m[(cw, ti)] -= dir;
                }
                (None, Some(&tw)) => {
                    let ci = pd_index[&c];
                    m[(tw, ci)] += dir;
                }
                (Some(&cw), Some(&tw)) => {
                    q[(cw, tw)] -= dir;
                    q[(tw, cw)] += dir;
                }
            }
        }
    }

    FundamentalForm::from_blocks(p, q, m, entries, resistors)
}

/// Eliminate the resistive block: `H̃ = P - Mᵀ (diag(θ) - Q)^{-1} M`.
pub fn reduce_to_hybrid(form: &FundamentalForm) -> Result<HybridMatrix> {
    let matrix = if form.n_resistors() == 0 {
        form.p.clone()
    } else {
        let a = form.theta_minus_q();
        let x = a
            .lu()
            .solve(&form.m)
            .ok_or_else(|| Error::SingularSystem("resistive block diag(θ) - Q".into()))?;
        &form.p - form.m.transpose() * x
    };
    Ok(HybridMatrix {
        matrix,
        entries: form.entries.clone(),
    })
}
