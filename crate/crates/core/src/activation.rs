//! Scalar device laws and their resolvents.
//!
//! Every nonlinear element in a network is a diode-like two-terminal device
//! whose branch law is a maximal monotone relation between one terminal
//! variable (the element's *input*, either a current or a voltage) and its
//! dual. The equilibrium solvers never evaluate the law directly; they apply
//! its resolvent `(I + alpha * law)^{-1}` entrywise, which is always a
//! single-valued, firmly nonexpansive scalar map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which terminal variable plays the role of an element's input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VariableKind {
    Current,
    Voltage,
}

impl VariableKind {
    /// The dual variable: a current input has a voltage response and vice versa.
    pub fn dual(self) -> VariableKind {
        match self {
            VariableKind::Current => VariableKind::Voltage,
            VariableKind::Voltage => VariableKind::Current,
        }
    }

    /// Sign convention used in reciprocity checks: currents carry -1, voltages +1.
    pub fn signature(self) -> f64 {
        match self {
            VariableKind::Current => -1.0,
            VariableKind::Voltage => 1.0,
        }
    }
}

/// Branch law of a nonlinear element, together with its orientation.
///
/// * `IdealDiodeForward` — current-input diode: conducts freely for i > 0
///   (zero drop) and blocks with nonpositive voltage at i = 0.
/// * `IdealDiodeReverse` — voltage-input diode: blocks for v > 0 and sinks
///   arbitrary nonpositive current at v = 0. Same abstract relation as the
///   forward law with the variable roles exchanged.
/// * `Shockley` — smooth junction law `v = n * v_t * ln(i / i_s + 1)`. As a
///   standalone scalar law it is read in the current-input slot, where its
///   resolvent is the "diode ReLU". Inside a network kernel the junction
///   occupies the same voltage-input slot as `IdealDiodeReverse` (see
///   [`network_resolvent`]): it passes positive state values with an
///   `i_s`-sized leak and clamps negative excursions with a soft knee near
///   `-n * v_t * ln(i / i_s)`.
/// * `ZenerPairImpedance` — back-to-back Zener pair; the input variable is
///   clamped to `[-limit, +limit]` volts.
/// * `CrdPairAdmittance` — anti-parallel current-regulating pair; clamps to
///   `[-limit, +limit]` amperes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ActivationKind {
    IdealDiodeForward,
    IdealDiodeReverse,
    Shockley { n: f64, v_t: f64, i_s: f64 },
    ZenerPairImpedance { limit: f64 },
    CrdPairAdmittance { limit: f64 },
}

/// Incremental branch of an ideal diode at a fixed operating point.
///
/// `Short`: the operating input was strictly positive, so the law sits on its
/// conducting branch and the incremental law is the zero map (the element
/// contributes a plain linear equation). `Open`: the input was zero, the
/// blocking branch persists, and the incremental input is pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearMode {
    Short,
    Open,
}

/// Incremental replacement for one device at a fixed operating point: a
/// branch mode, the law's derivative there (zero on an ideal conducting
/// branch, the small-signal conductance for a smooth junction; ignored when
/// the mode pins the state), and the constant source term that drives it
/// (the `u_d` entry of a sensitivity solve).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedElement {
    pub mode: LinearMode,
    pub slope: f64,
    pub offset: f64,
}

const ROOT_TOL: f64 = 1e-14;
const ROOT_MAX_ITER: usize = 200;

impl ActivationKind {
    /// The variable this element consumes when it sits in a network kernel.
    pub fn input_kind(&self) -> VariableKind {
        match self {
            ActivationKind::IdealDiodeForward | ActivationKind::ZenerPairImpedance { .. } => {
                VariableKind::Current
            }
            ActivationKind::IdealDiodeReverse
            | ActivationKind::CrdPairAdmittance { .. }
            | ActivationKind::Shockley { .. } => VariableKind::Voltage,
        }
    }

    pub fn is_ideal_diode(&self) -> bool {
        matches!(
            self,
            ActivationKind::IdealDiodeForward | ActivationKind::IdealDiodeReverse
        )
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::Shockley { n, v_t, i_s } => {
                if !(n > 0.0 && v_t > 0.0 && i_s > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Shockley law needs n, v_t, i_s > 0 (got n={n}, v_t={v_t}, i_s={i_s})"
                    )));
                }
            }
            ActivationKind::ZenerPairImpedance { limit }
            | ActivationKind::CrdPairAdmittance { limit } => {
                if !(limit > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "clamp limit must be positive (got {limit})"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Resolvent `(I + alpha * law)^{-1}` of a scalar branch law, evaluated at `x`.
///
/// For the ideal diodes this is `relu` (both orientations; the relation is a
/// cone, so `alpha` drops out). For the Zener/CRD pairs it is an exact clamp
/// to `[-limit, +limit]`, again independent of `alpha`. For the Shockley law
/// the result is the unique root of `y + alpha * n * v_t * ln(y / i_s + 1) = x`,
/// found by a safeguarded Newton iteration with a bisection fallback on the
/// bracket `(-i_s * (1 - 1e-12), max(x, i_s)]`.
pub fn resolvent(kind: &ActivationKind, x: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "resolvent step must be a positive finite number (got {alpha})"
        )));
    }
    if !x.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "resolvent argument must be finite (got {x})"
        )));
    }
    kind.validate()?;

    match *kind {
        ActivationKind::IdealDiodeForward | ActivationKind::IdealDiodeReverse => Ok(x.max(0.0)),
        ActivationKind::ZenerPairImpedance { limit } | ActivationKind::CrdPairAdmittance { limit } => {
            Ok(x.clamp(-limit, limit))
        }
        ActivationKind::Shockley { n, v_t, i_s } => shockley_resolvent(x, alpha * n * v_t, i_s),
    }
}

/// Resolvent of the branch law as the element enters a kernel's state rows.
///
/// Kernel extraction puts every diode-like element of the crossbar families
/// in the voltage-input slot, so the smooth junction must be oriented the
/// way [`ActivationKind::IdealDiodeReverse`] is: it blocks positive state
/// values (leaking only `i_s`) and conducts hard once the state swings
/// negative, i.e. `psi(v) = -i_s * (exp(-v / (n * v_t)) - 1)`. The resolvent
/// is then the identity above a soft floor near `-n * v_t * ln(|x| / (alpha
/// * i_s))` instead of the diode ReLU. Every other kind is orientation-free
/// at this level and delegates to [`resolvent`].
pub fn network_resolvent(kind: &ActivationKind, x: f64, alpha: f64) -> Result<f64> {
    match *kind {
        ActivationKind::Shockley { n, v_t, i_s } => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "resolvent step must be a positive finite number (got {alpha})"
                )));
            }
            if !x.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "resolvent argument must be finite (got {x})"
                )));
            }
            kind.validate()?;
            shockley_reverse_resolvent(x, alpha * i_s, n * v_t)
        }
        _ => resolvent(kind, x, alpha),
    }
}

/// Root of `f(y) = y - b * (exp(-y / w) - 1) - x` on `[x - b, max(x, 0)]`.
///
/// `f` is strictly increasing, `f(x - b) < 0` and `f(max(x, 0)) >= 0` for
/// every finite `x`, so the bracket always holds. Deep-conduction overflow of
/// the exponential only produces `-inf` values of `f`, which the bisection
/// safeguard absorbs.
fn shockley_reverse_resolvent(x: f64, b: f64, w: f64) -> Result<f64> {
    let f = |y: f64| y - b * ((-y / w).exp() - 1.0) - x;
    let fp = |y: f64| 1.0 + (b / w) * (-y / w).exp();

    let mut lo = x - b;
    let mut hi = x.max(0.0);
    let mut y = if x > 0.0 { x } else { 0.5 * (lo + hi) };
    let mut dx_old = hi - lo;
    let mut dx = dx_old;
    for _ in 0..ROOT_MAX_ITER {
        let fy = f(y);
        if fy > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        // Newton's step against the exponential wall is only ~w long, so
        // accept it solely when it is both bracketed and outpacing
        // bisection; otherwise the iteration could stall on wide brackets.
        let fpy = fp(y);
        let newton = y - fy / fpy;
        let take_newton = newton.is_finite()
            && newton > lo
            && newton < hi
            && (2.0 * fy).abs() <= (dx_old * fpy).abs();
        dx_old = dx;
        let next = if take_newton { newton } else { 0.5 * (lo + hi) };
        dx = (next - y).abs();
        y = next;
        if dx <= ROOT_TOL {
            return Ok(y);
        }
    }
    Err(Error::RootFinder {
        max_iter: ROOT_MAX_ITER,
        last_step: (hi - lo).abs(),
    })
}

/// Root of `f(y) = y + a * ln(y / i_s + 1) - x` on `(-i_s, max(x, i_s)]`.
fn shockley_resolvent(x: f64, a: f64, i_s: f64) -> Result<f64> {
    let f = |y: f64| y + a * (y / i_s + 1.0).ln() - x;
    let fp = |y: f64| 1.0 + a / (y + i_s);

    let mut lo = -i_s * (1.0 - 1e-12);
    let mut hi = x.max(i_s);
    if f(lo) >= 0.0 {
        // Root sits below the representable bracket; the clamp keeps the
        // output monotone and bounded below by -i_s.
        return Ok(lo);
    }
    debug_assert!(f(hi) >= 0.0);

    let mut y = if x > 0.0 { x } else { 0.5 * (lo + hi) };
    for _ in 0..ROOT_MAX_ITER {
        let fy = f(y);
        if fy > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let newton = y - fy / fp(y);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - y).abs();
        y = next;
        if step <= ROOT_TOL {
            return Ok(y);
        }
    }
    Err(Error::RootFinder {
        max_iter: ROOT_MAX_ITER,
        last_step: (hi - lo).abs(),
    })
}

/// Replace an ideal diode by its incremental branch at the operating point.
///
/// `operating_value` is the diode's input at equilibrium (a current for the
/// forward orientation, a voltage for the reverse one). Strictly positive
/// values select the conducting branch (`Short`); zero selects the blocking
/// branch (`Open`). A value exactly at the kink deliberately uses `Open`,
/// i.e. the subgradient choice 0.
pub fn linearize(kind: &ActivationKind, operating_value: f64, offset: f64) -> Result<LinearizedElement> {
    if !kind.is_ideal_diode() {
        return Err(Error::InvalidParameter(format!(
            "only ideal diodes have a short/open incremental form (got {kind:?})"
        )));
    }
    if !operating_value.is_finite() || !offset.is_finite() {
        return Err(Error::InfeasibleOperatingPoint(format!(
            "operating value and offset must be finite (got {operating_value}, {offset})"
        )));
    }
    if operating_value < 0.0 {
        return Err(Error::InfeasibleOperatingPoint(format!(
            "diode input must be nonnegative at equilibrium (got {operating_value})"
        )));
    }
    let mode = if operating_value > 0.0 {
        LinearMode::Short
    } else {
        LinearMode::Open
    };
    Ok(LinearizedElement { mode, slope: 0.0, offset })
}

/// Derivative of a smooth device law at an operating point, in the law's own
/// input variable. Only the Shockley junction has one; every other kind is
/// piecewise ideal and linearizes by branch substitution instead.
pub fn law_slope(kind: &ActivationKind, z: f64) -> Result<f64> {
    match *kind {
        ActivationKind::Shockley { n, v_t, i_s } => {
            kind.validate()?;
            if !z.is_finite() {
                return Err(Error::InfeasibleOperatingPoint(format!(
                    "operating value must be finite (got {z})"
                )));
            }
            let w = n * v_t;
            // d/dv of -i_s*(exp(-v/w) - 1); saturate instead of overflowing
            // for operating points far below any physical junction drop.
            let e = -z / w;
            if e > 700.0 {
                return Ok(f64::INFINITY);
            }
            Ok((i_s / w) * e.exp())
        }
        _ => Err(Error::InvalidParameter(format!(
            "law has no smooth derivative (got {kind:?})"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shockley_paper() -> ActivationKind {
        ActivationKind::Shockley {
            n: 1.0,
            v_t: 0.025852,
            i_s: 1e-12,
        }
    }

    /// Independent bisection oracle for the Shockley resolvent.
    fn shockley_bisect(x: f64, alpha: f64, n: f64, v_t: f64, i_s: f64) -> f64 {
        let a = alpha * n * v_t;
        let f = |y: f64| y + a * (y / i_s + 1.0).ln() - x;
        let mut lo = -i_s * (1.0 - 1e-12);
        let mut hi = x.max(i_s);
        if f(lo) >= 0.0 {
            return lo;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ideal_diode_resolvent_is_relu() {
        for kind in [ActivationKind::IdealDiodeForward, ActivationKind::IdealDiodeReverse] {
            assert_eq!(resolvent(&kind, -2.0, 1.0).unwrap(), 0.0);
            assert_eq!(resolvent(&kind, 3.5, 1.0).unwrap(), 3.5);
            assert_eq!(resolvent(&kind, 0.0, 1.0).unwrap(), 0.0);
            // Cone invariance: alpha must not matter.
            assert_eq!(resolvent(&kind, 3.5, 17.0).unwrap(), 3.5);
            assert_eq!(resolvent(&kind, -2.0, 1e-6).unwrap(), 0.0);
        }
    }

    #[test]
    fn saturation_resolvent_is_exact_clamp() {
        let z = ActivationKind::ZenerPairImpedance { limit: 1.0 };
        assert_eq!(resolvent(&z, 0.5, 1.0).unwrap(), 0.5);
        assert_eq!(resolvent(&z, 2.0, 1.0).unwrap(), 1.0);
        assert_eq!(resolvent(&z, -7.0, 0.3).unwrap(), -1.0);
        let c = ActivationKind::CrdPairAdmittance { limit: 0.25 };
        assert_eq!(resolvent(&c, 0.1, 2.0).unwrap(), 0.1);
        assert_eq!(resolvent(&c, 10.0, 2.0).unwrap(), 0.25);
    }

    #[test]
    fn shockley_resolvent_matches_frozen_oracle() {
        // Reference roots computed with 40-digit bisection on the same law.
        let kind = shockley_paper();
        assert_abs_diff_eq!(
            resolvent(&kind, 1.0, 1.0).unwrap(),
            0.31550519561274916,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            resolvent(&kind, 10.0, 1.0).unwrap(),
            9.228232781007616,
            epsilon = 1e-11
        );
        assert_abs_diff_eq!(
            resolvent(&kind, 0.3, 0.5).unwrap(),
            0.0069923553356724823,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(resolvent(&kind, 0.0, 1.0).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn shockley_resolvent_tracks_bisection_oracle() {
        let kind = shockley_paper();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x: f64 = rng.gen_range(-5.0..5.0);
            let alpha: f64 = rng.gen_range(0.05..3.0);
            let got = resolvent(&kind, x, alpha).unwrap();
            let want = shockley_bisect(x, alpha, 1.0, 0.025852, 1e-12);
            assert_abs_diff_eq!(got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn shockley_resolvent_bounded_below_and_in_range() {
        let kind = shockley_paper();
        for x in [-100.0, -1.0, -1e-3, 0.0, 1e-3, 1.0, 10.0] {
            let y = resolvent(&kind, x, 1.0).unwrap();
            assert!(y >= -1e-12, "resolvent({x}) = {y} dips below -i_s");
        }
        // Large positive inputs shed at most the junction drop.
        let y = resolvent(&kind, 10.0, 1.0).unwrap();
        assert!(y >= 9.0 && y <= 10.0, "resolvent(10) = {y} out of range");
    }

    /// Independent bisection oracle for the voltage-slot Shockley resolvent.
    fn shockley_reverse_bisect(x: f64, alpha: f64, n: f64, v_t: f64, i_s: f64) -> f64 {
        let b = alpha * i_s;
        let w = n * v_t;
        let f = |y: f64| y - b * ((-y / w).exp() - 1.0) - x;
        let mut lo = x - b;
        let mut hi = x.max(0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn network_resolvent_matches_scalar_form_except_for_shockley() {
        for kind in [
            ActivationKind::IdealDiodeForward,
            ActivationKind::IdealDiodeReverse,
            ActivationKind::ZenerPairImpedance { limit: 1.0 },
            ActivationKind::CrdPairAdmittance { limit: 0.4 },
        ] {
            for x in [-2.0, -0.3, 0.0, 0.7, 3.0] {
                assert_eq!(
                    network_resolvent(&kind, x, 0.8).unwrap(),
                    resolvent(&kind, x, 0.8).unwrap()
                );
            }
        }
    }

    #[test]
    fn network_shockley_resolvent_matches_bisection() {
        let (n, v_t, i_s) = (1.05, 0.025852, 1e-13);
        let kind = ActivationKind::Shockley { n, v_t, i_s };
        for alpha in [1.0, 50.0, 400.0] {
            for x in [-3.0, -0.7, -0.1, 0.0, 0.1, 2.0] {
                let y = network_resolvent(&kind, x, alpha).unwrap();
                let oracle = shockley_reverse_bisect(x, alpha, n, v_t, i_s);
                assert_abs_diff_eq!(y, oracle, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn network_shockley_resolvent_passes_positives_and_floors_negatives() {
        // Positive drives pass through the blocked junction up to the i_s
        // leak; strongly negative drives land on the logarithmic floor.
        let kind = ActivationKind::Shockley { n: 1.05, v_t: 0.025852, i_s: 1e-13 };
        let alpha = 100.0;
        for x in [0.05, 0.4, 1.0, 5.0] {
            let y = network_resolvent(&kind, x, alpha).unwrap();
            assert_abs_diff_eq!(y, x, epsilon = 1e-9);
        }
        let floor = network_resolvent(&kind, -2.0, alpha).unwrap();
        // y + alpha * i_s * (1 - exp(-y/w)) = x at |x| >> alpha*i_s puts the
        // root near -w * ln(|x| / (alpha * i_s)).
        let w = 1.05 * 0.025852;
        let expected = -w * (2.0 / (alpha * 1e-13)).ln();
        assert!(
            (floor - expected).abs() < 0.05,
            "floor {floor} far from estimate {expected}"
        );
        // The floor deepens only logarithmically.
        let deeper = network_resolvent(&kind, -200.0, alpha).unwrap();
        assert!(deeper > floor - 0.2 && deeper < floor);
    }

    #[test]
    fn network_shockley_resolvent_is_firmly_nonexpansive_and_monotone() {
        let kind = ActivationKind::Shockley { n: 1.05, v_t: 0.025852, i_s: 1e-13 };
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let alpha: f64 = rng.gen_range(0.5..200.0);
            let x1: f64 = rng.gen_range(-4.0..4.0);
            let x2: f64 = rng.gen_range(-4.0..4.0);
            let r1 = network_resolvent(&kind, x1, alpha).unwrap();
            let r2 = network_resolvent(&kind, x2, alpha).unwrap();
            let dr = r1 - r2;
            let dx = x1 - x2;
            assert!(dr * dr <= dx * dr + 1e-12, "not firmly nonexpansive");
            let ds = (x1 - r1) - (x2 - r2);
            assert!(dr * ds >= -1e-12, "relation samples not monotone");
        }
    }

    #[test]
    fn law_slope_matches_the_network_resolvent_derivative() {
        // Implicit differentiation of y - alpha*i_s*(exp(-y/w) - 1) = x gives
        // dy/dx = 1 / (1 + alpha * slope(y)), an independent check of both.
        let kind = ActivationKind::Shockley { n: 1.05, v_t: 0.025852, i_s: 1e-13 };
        for &alpha in &[1.0, 75.0] {
            for &x in &[-1.0, -0.66, -0.6, -0.3, 0.0, 0.5] {
                let y = network_resolvent(&kind, x, alpha).unwrap();
                let h = 1e-7;
                let fd = (network_resolvent(&kind, x + h, alpha).unwrap()
                    - network_resolvent(&kind, x - h, alpha).unwrap())
                    / (2.0 * h);
                let analytic = 1.0 / (1.0 + alpha * law_slope(&kind, y).unwrap());
                assert_abs_diff_eq!(fd, analytic, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn law_slope_rejects_piecewise_laws_and_saturates_deep_conduction() {
        assert!(law_slope(&ActivationKind::IdealDiodeReverse, 0.5).is_err());
        assert!(law_slope(&ActivationKind::ZenerPairImpedance { limit: 1.0 }, 0.0).is_err());
        let kind = ActivationKind::Shockley { n: 1.0, v_t: 0.025, i_s: 1e-12 };
        assert_eq!(law_slope(&kind, -30.0).unwrap(), f64::INFINITY);
        assert!(law_slope(&kind, 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn resolvents_are_firmly_nonexpansive_and_monotone() {
        // (R(x1) - R(x2))^2 <= (x1 - x2)(R(x1) - R(x2)) for firm nonexpansiveness;
        // the relation samples ((R(x), (x - R(x))/alpha)) must be monotone.
        let kinds = [
            ActivationKind::IdealDiodeForward,
            ActivationKind::IdealDiodeReverse,
            shockley_paper(),
            ActivationKind::ZenerPairImpedance { limit: 1.0 },
            ActivationKind::CrdPairAdmittance { limit: 0.4 },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for kind in &kinds {
            for _ in 0..1000 {
                let alpha: f64 = rng.gen_range(0.1..2.0);
                let x1: f64 = rng.gen_range(-4.0..4.0);
                let x2: f64 = rng.gen_range(-4.0..4.0);
                let r1 = resolvent(kind, x1, alpha).unwrap();
                let r2 = resolvent(kind, x2, alpha).unwrap();
                let dr = r1 - r2;
                let dx = x1 - x2;
                assert!(dr * dr <= dx * dr + 1e-12, "{kind:?} not firmly nonexpansive");
                let ds = (x1 - r1) - (x2 - r2);
                assert!(dr * ds >= -1e-12, "{kind:?} relation samples not monotone");
            }
        }
    }

    #[test]
    fn resolvent_rejects_bad_step_and_parameters() {
        let kind = ActivationKind::IdealDiodeForward;
        assert!(resolvent(&kind, 1.0, 0.0).is_err());
        assert!(resolvent(&kind, 1.0, -1.0).is_err());
        assert!(resolvent(&kind, 1.0, f64::NAN).is_err());
        assert!(resolvent(&kind, f64::INFINITY, 1.0).is_err());
        let bad = ActivationKind::Shockley { n: 1.0, v_t: -1.0, i_s: 1e-12 };
        assert!(resolvent(&bad, 1.0, 1.0).is_err());
        let bad = ActivationKind::ZenerPairImpedance { limit: 0.0 };
        assert!(resolvent(&bad, 1.0, 1.0).is_err());
    }

    #[test]
    fn linearize_selects_branches() {
        let lin = linearize(&ActivationKind::IdealDiodeReverse, 0.0, 0.0).unwrap();
        assert_eq!(lin.mode, LinearMode::Open);
        assert_eq!(lin.offset, 0.0);

        let lin = linearize(&ActivationKind::IdealDiodeReverse, 1e-9, -0.3).unwrap();
        assert_eq!(lin.mode, LinearMode::Short);
        assert_eq!(lin.offset, -0.3);

        let lin = linearize(&ActivationKind::IdealDiodeForward, 2.0, 0.7).unwrap();
        assert_eq!(lin.mode, LinearMode::Short);
    }

    #[test]
    fn linearize_rejects_nonideal_and_negative_operating_points() {
        assert!(linearize(&shockley_paper(), 1.0, 0.0).is_err());
        assert!(linearize(&ActivationKind::IdealDiodeForward, -1e-3, 0.0).is_err());
        assert!(linearize(&ActivationKind::IdealDiodeForward, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn orientation_metadata() {
        assert_eq!(ActivationKind::IdealDiodeForward.input_kind(), VariableKind::Current);
        assert_eq!(ActivationKind::IdealDiodeReverse.input_kind(), VariableKind::Voltage);
        assert_eq!(shockley_paper().input_kind(), VariableKind::Voltage);
        assert_eq!(VariableKind::Current.dual(), VariableKind::Voltage);
        assert_eq!(VariableKind::Current.signature(), -1.0);
        assert_eq!(VariableKind::Voltage.signature(), 1.0);
    }
}
