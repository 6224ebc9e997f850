//! Kernel extraction from a hybrid matrix, plus the structural checks the
//! construction is supposed to guarantee (reciprocity, Stieltjes blocks,
//! dissipativity).
//!
//! With ports ordered before diodes the hybrid matrix partitions as
//!
//! ```text
//! H̃ = - ( D  C )
//!       ( B  H )
//! ```
//!
//! and the network's operating points are exactly the solutions of
//! `0 ∈ H z + ψ(z) + B u`, with port responses read out as `y = -C z - D u`.
//! Here `z` collects the diode inputs, `ψ` their (set-valued) device laws,
//! `u` the port inputs.

use nalgebra::{DMatrix, DVector};

use crate::activation::{ActivationKind, VariableKind};
use crate::error::{Error, Result};
use crate::form::{HybridMatrix, SlotKind};
use crate::tol;

/// Equilibrium model of a circuit: `0 ∈ H z + ψ(z) + B u`, `y = -C z - D u`.
///
/// Circuit extraction always yields square input/output sets (each port's
/// dual is its output), but composition of layers produces genuinely
/// rectangular behaviors, so input and output variables carry independent
/// labels.
#[derive(Debug, Clone)]
pub struct KernelBehavior {
    pub h: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    /// Device law of each internal variable, in `z` order.
    pub activations: Vec<ActivationKind>,
    /// Kind of each entry of `u`.
    pub input_kinds: Vec<VariableKind>,
    /// Kind of each entry of `y`.
    pub output_kinds: Vec<VariableKind>,
}

impl KernelBehavior {
    pub fn new(
        h: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        activations: Vec<ActivationKind>,
        input_kinds: Vec<VariableKind>,
        output_kinds: Vec<VariableKind>,
    ) -> Result<Self> {
        let n = activations.len();
        let m_in = input_kinds.len();
        let m_out = output_kinds.len();
        for (rows, cols, mat, what) in [
            (n, n, &h, "H"),
            (n, m_in, &b, "B"),
            (m_out, n, &c, "C"),
            (m_out, m_in, &d, "D"),
        ] {
            if mat.nrows() != rows || mat.ncols() != cols {
                return Err(Error::InvalidParameter(format!(
                    "{} must be {}x{}, got {}x{}",
                    what,
                    rows,
                    cols,
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
        Ok(KernelBehavior { h, b, c, d, activations, input_kinds, output_kinds })
    }

    pub fn n_state(&self) -> usize {
        self.activations.len()
    }

    pub fn n_inputs(&self) -> usize {
        self.input_kinds.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.output_kinds.len()
    }

    /// Output map `y = -C z - D u`.
    pub fn output(&self, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        -&self.c * z - &self.d * u
    }

    /// Signature of the input variables (-1 currents, +1 voltages).
    pub fn input_signature(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.input_kinds.len(),
            self.input_kinds.iter().map(|k| k.signature()),
        )
    }

    pub fn output_signature(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.output_kinds.len(),
            self.output_kinds.iter().map(|k| k.signature()),
        )
    }
}

/// Partition a hybrid matrix into the kernel behavior. Requires the hybrid's
/// entries to be ordered ports-first (which [`crate::form::fundamental_form`]
/// guarantees).
pub fn extract_kernel(hybrid: &HybridMatrix) -> Result<KernelBehavior> {
    let m = hybrid.n_ports();
    let n = hybrid.n_diodes();
    if hybrid.entries[..m].iter().any(|e| matches!(e.slot, SlotKind::Diode(_))) {
        return Err(Error::InvalidParameter(
            "hybrid entries must list ports before diodes".into(),
        ));
    }
    let ht = &hybrid.matrix;
    if ht.nrows() != m + n || ht.ncols() != m + n {
        return Err(Error::DimensionMismatch { expected: m + n, got: ht.nrows() });
    }
    let d = -ht.view((0, 0), (m, m)).clone_owned();
    let c = -ht.view((0, m), (m, n)).clone_owned();
    let b = -ht.view((m, 0), (n, m)).clone_owned();
    let h = -ht.view((m, m), (n, n)).clone_owned();

    let mut activations = Vec::with_capacity(n);
    for e in &hybrid.entries[m..] {
        match e.slot {
            SlotKind::Diode(kind) => activations.push(kind),
            SlotKind::Port(_) => unreachable!("checked ports-first above"),
        }
    }
    let input_kinds: Vec<VariableKind> =
        hybrid.entries[..m].iter().map(|e| e.input).collect();
    let output_kinds: Vec<VariableKind> =
        input_kinds.iter().map(|k| k.dual()).collect();

    KernelBehavior::new(h, b, c, d, activations, input_kinds, output_kinds)
}

/// Check `Σ H̃ = H̃ᵀ Σ` for a signature vector of ±1 entries. Returns the
/// verdict together with the largest violation.
pub fn check_reciprocity(matrix: &DMatrix<f64>, signature: &DVector<f64>) -> Result<(bool, f64)> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: matrix.ncols() });
    }
    if signature.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: signature.len() });
    }
    if signature.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::InvalidParameter("signature entries must be ±1".into()));
    }
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let dev = (signature[i] * matrix[(i, j)] - matrix[(j, i)] * signature[j]).abs();
            worst = worst.max(dev);
        }
    }
    Ok((worst <= tol::RECIPROCITY, worst))
}

/// True iff the matrix is a Stieltjes matrix: symmetric, positive definite,
/// nonpositive off the diagonal (all up to the module tolerances).
pub fn check_stieltjes(matrix: &DMatrix<f64>) -> bool {
    let n = matrix.nrows();
    if matrix.ncols() != n || n == 0 {
        return false;
    }
    for i in 0..n {
        for j in 0..n {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > tol::SYMMETRY {
                return false;
            }
            if i != j && matrix[(i, j)] > tol::STIELTJES_OFF_DIAG {
                return false;
            }
        }
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min() > 0.0
}

/// Largest eigenvalue of the symmetric part; ≤ 0 (within tolerance) for any
/// passive hybrid matrix.
pub fn max_symmetric_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 0.0;
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

/// Smallest eigenvalue of the symmetric part; ≥ 0 (within tolerance) for the
/// kernel blocks H and D.
pub fn min_symmetric_eigenvalue(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 0.0;
    }
    let sym = (matrix + matrix.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}
