//! Centralized numeric tolerances.
//!
//! Values are absolute unless noted. Anything that compares floating-point
//! structure (symmetry, skewness, eigenvalue floors) goes through these
//! constants so the acceptance thresholds live in one place.

/// Max entry of |Σ·M − Mᵀ·Σ| tolerated before a hybrid matrix is declared
/// non-reciprocal.
pub const RECIPROCITY: f64 = 1e-10;

/// Max entry of |M − Mᵀ| tolerated in symmetry checks.
pub const SYMMETRY: f64 = 1e-10;

/// Stieltjes structure: off-diagonal entries must not exceed this.
pub const STIELTJES_OFF_DIAG: f64 = 1e-12;

/// Eigenvalue floor for "positive semidefinite up to rounding".
pub const PSD_EIG_FLOOR: f64 = -1e-10;

/// Default fixed-point stopping tolerance (infinity norm of the step).
pub const SOLVER_STEP: f64 = 1e-10;

/// Distance from the diode kink below which a linearization is flagged.
pub const KINK: f64 = 1e-9;

/// Tolerated disagreement between the two exact gradient routes.
pub const GRADIENT_CROSS_CHECK: f64 = 1e-5;
