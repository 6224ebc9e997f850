//! Teacher/student training of crossbar cascades.
//!
//! The trainable parameters of a cascade are its resistances, the current
//! offsets driven into each layer's output ports, and the synaptic gains
//! between layers. [`sgd_train`] runs shuffled single-sample SGD on the
//! squared output error, with the gradient supplied either by simulated
//! on-circuit measurement ([`GradMethod::HardwareLinearization`]) or by
//! differentiating the composed kernel of an ideal-diode model
//! ([`GradMethod::EquilibriumBackprop`]).
//!
//! The two methods see different information once imperfections enter. The
//! measurement route works on the circuit as it is, so parameter spread and
//! write errors are absorbed into the next gradient. The model route trusts
//! its nominal ledger: with [`NoiseConfig`] enabled the physical values drift
//! away from that ledger and the optimizer never notices, which shows up as
//! transients in the recorded error curve. The curve itself is always
//! measured on the physical circuit.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::cascade::{
    cascade_gradients, cascade_gradients_measured, compose_cascade, composed_binding_derivative,
    solve_sequential, CascadeNetwork, CascadeOperating, ParamBinding, ParamTarget,
};
use crate::crossbar::CrossbarArray;
use crate::error::{Error, Result};
use crate::gradient::{
    hardware_linearize_at, kink_margin, measured_linearize, measured_margin, EdgeParameter,
    Gradient,
};
use crate::solver::SolveOptions;

/// Resistance every trainable edge starts from, in ohms.
pub const NOMINAL_RESISTANCE: f64 = 100.0;

/// Updates and write noise may shrink a resistance but never past this floor.
const RESISTANCE_FLOOR: f64 = 1e-6 * NOMINAL_RESISTANCE;

/// Per-type learning-rate scaling relative to [`TrainConfig::learning_rate`].
/// Resistances step in log space (unit-free), offsets are amps against volt
/// outputs, synapses are dimensionless gains with large downstream leverage.
const LR_RESISTANCE: f64 = 1.0;
const LR_OFFSET: f64 = 1e-3;
const LR_SYNAPSE: f64 = 0.1;

const STREAM_DATASET: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_WRITE: u64 = 3;

/// Device law of the simulated circuit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceModel {
    /// Ideal diodes: the resolvent is exactly a rectifier.
    Ideal,
    /// Exponential junction diodes. Reverse breakdown is not modeled; the
    /// operating voltages here stay orders of magnitude below it.
    Shockley { n: f64, v_t: f64, i_s: f64 },
}

impl DeviceModel {
    /// A realistic silicon junction at room temperature.
    pub fn silicon() -> Self {
        DeviceModel::Shockley { n: 1.05, v_t: 0.025852, i_s: 1e-13 }
    }

    pub fn is_ideal(&self) -> bool {
        matches!(self, DeviceModel::Ideal)
    }

    fn activation(&self) -> ActivationKind {
        match *self {
            DeviceModel::Ideal => ActivationKind::IdealDiodeReverse,
            DeviceModel::Shockley { n, v_t, i_s } => ActivationKind::Shockley { n, v_t, i_s },
        }
    }
}

impl Default for DeviceModel {
    fn default() -> Self {
        DeviceModel::Ideal
    }
}

/// How the per-parameter derivative is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMethod {
    /// Linearize the running circuit at its operating point, layer by layer,
    /// the way a measurement rig would.
    HardwareLinearization,
    /// Differentiate the composed kernel of the nominal ideal-diode model by
    /// a dense linear solve.
    EquilibriumBackprop,
}

impl Default for GradMethod {
    fn default() -> Self {
        GradMethod::HardwareLinearization
    }
}

/// Device imperfections. Both knobs are relative standard deviations: the
/// circuit starts with resistances spread `init_rel_var`·nominal around
/// nominal, and every commanded resistance change lands with an error of
/// `update_rel_var`·|change|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub init_rel_var: f64,
    pub update_rel_var: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { init_rel_var: 0.05, update_rel_var: 0.10 }
    }
}

/// Everything that defines one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Port counts between layers; `widths.len() - 1` crossbars.
    pub widths: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub grad_method: GradMethod,
    /// Law of the simulated circuit. The backprop method always models the
    /// circuit with ideal diodes regardless of this setting.
    #[serde(default)]
    pub device: DeviceModel,
    #[serde(default)]
    pub noise: Option<NoiseConfig>,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    250
}

fn default_learning_rate() -> f64 {
    1e-3
}

impl TrainConfig {
    pub fn new(widths: Vec<usize>) -> Self {
        TrainConfig {
            widths,
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
            grad_method: GradMethod::default(),
            device: DeviceModel::default(),
            noise: None,
            seed: 0,
        }
    }

    /// The four-layer stack the comparison experiments run on.
    pub fn reference(seed: u64) -> Self {
        TrainConfig { seed, ..TrainConfig::new(vec![10, 9, 7, 8, 4]) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::InvalidParameter(
                "a cascade needs at least two port widths".into(),
            ));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("every layer width must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} is not a nonnegative number",
                self.learning_rate
            )));
        }
        if let Some(noise) = self.noise {
            for (name, v) in [
                ("init_rel_var", noise.init_rel_var),
                ("update_rel_var", noise.update_rel_var),
            ] {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::InvalidParameter(format!(
                        "{name} = {v} is outside [0, 1)"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One trainable scalar, addressed structurally.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainParam {
    /// Resistance of the crossbar edge at `(row, col)` of `layer`, in ohms.
    Resistance { layer: usize, row: usize, col: usize },
    /// Current offset driven into output port `index` of `layer`, in amps.
    Offset { layer: usize, index: usize },
    /// Synaptic gain ahead of input `index` of `layer`.
    Synapse { layer: usize, index: usize },
}

/// Canonical flattening of the parameter set: every layer's resistances in
/// row-major order, then every layer's offsets, then every layer's synapses.
/// Gradient vectors and update loops all follow this order.
pub fn parameter_order(widths: &[usize]) -> Vec<TrainParam> {
    let layers = widths.len().saturating_sub(1);
    let mut order = Vec::new();
    for layer in 0..layers {
        for row in 0..=widths[layer] {
            for col in 0..=widths[layer + 1] {
                order.push(TrainParam::Resistance { layer, row, col });
            }
        }
    }
    for layer in 0..layers {
        for index in 0..widths[layer + 1] {
            order.push(TrainParam::Offset { layer, index });
        }
    }
    for layer in 0..layers {
        for index in 0..widths[layer] {
            order.push(TrainParam::Synapse { layer, index });
        }
    }
    order
}

/// The full parameter state of a cascade, in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// Per layer, `(p+1) x (q+1)` ohms.
    pub resistances: Vec<DMatrix<f64>>,
    /// Per layer, `q` amps into the output ports.
    pub offsets: Vec<DVector<f64>>,
    /// Per layer, `p` gains ahead of the inputs.
    pub synapses: Vec<DVector<f64>>,
}

impl NetworkParams {
    /// The standard starting point: every edge at nominal resistance, zero
    /// offsets, and synapse gains equal to the one-based layer index.
    pub fn initial(widths: &[usize]) -> Result<Self> {
        let layers = check_widths(widths)?;
        Ok(NetworkParams {
            resistances: (0..layers)
                .map(|l| {
                    DMatrix::from_element(widths[l] + 1, widths[l + 1] + 1, NOMINAL_RESISTANCE)
                })
                .collect(),
            offsets: (0..layers).map(|l| DVector::zeros(widths[l + 1])).collect(),
            synapses: (0..layers)
                .map(|l| DVector::from_element(widths[l], (l + 1) as f64))
                .collect(),
        })
    }

    /// A random teacher: resistances uniform in [50, 200] ohms, offsets
    /// uniform in [-0.02, 0.02] amps, synapses the layer index scaled by a
    /// uniform factor in [0.5, 1.5].
    pub fn random(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let layers = check_widths(widths)?;
        Ok(NetworkParams {
            resistances: (0..layers)
                .map(|l| {
                    DMatrix::from_fn(widths[l] + 1, widths[l + 1] + 1, |_, _| {
                        rng.gen_range(50.0..=200.0)
                    })
                })
                .collect(),
            offsets: (0..layers)
                .map(|l| DVector::from_fn(widths[l + 1], |_, _| rng.gen_range(-0.02..=0.02)))
                .collect(),
            synapses: (0..layers)
                .map(|l| {
                    DVector::from_fn(widths[l], |_, _| {
                        (l + 1) as f64 * rng.gen_range(0.5..=1.5)
                    })
                })
                .collect(),
        })
    }

    /// Recover the port widths, verifying that the blocks chain up.
    pub fn widths(&self) -> Result<Vec<usize>> {
        let layers = self.resistances.len();
        if layers == 0 || self.offsets.len() != layers || self.synapses.len() != layers {
            return Err(Error::InvalidParameter(
                "resistances, offsets and synapses must cover the same layers".into(),
            ));
        }
        let mut widths = Vec::with_capacity(layers + 1);
        for (l, r) in self.resistances.iter().enumerate() {
            let (p, q) = (r.nrows().saturating_sub(1), r.ncols().saturating_sub(1));
            if p == 0 || q == 0 {
                return Err(Error::InvalidParameter(format!(
                    "layer {l} resistance block is degenerate"
                )));
            }
            if l == 0 {
                widths.push(p);
            } else if widths[l] != p {
                return Err(Error::DimensionMismatch { expected: widths[l], got: p });
            }
            if self.offsets[l].len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: self.offsets[l].len(),
                });
            }
            if self.synapses[l].len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: self.synapses[l].len(),
                });
            }
            widths.push(q);
        }
        Ok(widths)
    }

    pub fn n_params(&self) -> usize {
        self.resistances.iter().map(|r| r.len()).sum::<usize>()
            + self.offsets.iter().map(|o| o.len()).sum::<usize>()
            + self.synapses.iter().map(|s| s.len()).sum::<usize>()
    }

    /// Instantiate the circuit these parameters describe.
    pub fn build(&self, device: DeviceModel) -> Result<BuiltNetwork> {
        let widths = self.widths()?;
        let mut arrays = Vec::with_capacity(self.resistances.len());
        for (l, r) in self.resistances.iter().enumerate() {
            for v in r.iter() {
                if !v.is_finite() || *v <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "layer {l} holds a non-positive resistance {v}"
                    )));
                }
            }
            let g = r.map(|v| 1.0 / v);
            let mut array = CrossbarArray::equilibrium(widths[l], widths[l + 1], &g)?;
            if !device.is_ideal() {
                array.set_diode_activation(device.activation())?;
            }
            arrays.push(array);
        }
        let net = CascadeNetwork::from_crossbars(&arrays, self.synapses.clone())?;
        Ok(BuiltNetwork { widths, device, arrays, net, offsets: self.offsets.clone() })
    }
}

fn check_widths(widths: &[usize]) -> Result<usize> {
    if widths.len() < 2 {
        return Err(Error::InvalidParameter("a cascade needs at least two port widths".into()));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::InvalidParameter("every layer width must be positive".into()));
    }
    Ok(widths.len() - 1)
}

/// A parameter state instantiated as circuits and wired into a cascade.
#[derive(Debug, Clone)]
pub struct BuiltNetwork {
    widths: Vec<usize>,
    device: DeviceModel,
    arrays: Vec<CrossbarArray>,
    pub net: CascadeNetwork,
    offsets: Vec<DVector<f64>>,
}

impl BuiltNetwork {
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn device(&self) -> DeviceModel {
        self.device
    }

    /// Solve layer by layer at external input `u`, with the stored offsets
    /// driving the side inputs.
    pub fn solve(&self, u: &DVector<f64>) -> Result<CascadeOperating> {
        solve_sequential(&self.net, u, &self.offsets, &SolveOptions::default())
    }

    pub fn output(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.solve(u)?.output(&self.net))
    }

    /// Where a structural parameter lives in cascade terms.
    pub fn binding(&self, param: TrainParam) -> ParamBinding {
        match param {
            TrainParam::Resistance { layer, row, col } => ParamBinding {
                layer,
                target: ParamTarget::Edge {
                    edge: self.arrays[layer].resistor_edge(row, col),
                    wrt: EdgeParameter::Resistance,
                },
            },
            TrainParam::Offset { layer, index } => {
                ParamBinding { layer, target: ParamTarget::SideInput { index } }
            }
            TrainParam::Synapse { layer, index } => {
                ParamBinding { layer, target: ParamTarget::Synapse { index } }
            }
        }
    }
}

/// One regression pair: port voltages in, port voltages out.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: DVector<f64>,
    pub target: DVector<f64>,
}

/// Drive a teacher network with uniform random inputs in [-1, 1] volts and
/// record its outputs. Deterministic per seed.
pub fn generate_synthetic_dataset(
    teacher: &NetworkParams,
    device: DeviceModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("a dataset needs at least one sample".into()));
    }
    let built = teacher.build(device)?;
    let p0 = built.widths[0];
    let mut rng = stream(seed, STREAM_DATASET);
    (0..n_samples)
        .map(|_| {
            let input = DVector::from_fn(p0, |_, _| rng.gen_range(-1.0..=1.0));
            let target = built.output(&input)?;
            Ok(Sample { input, target })
        })
        .collect()
}

/// Loss and full-parameter gradient at one sample.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    /// One entry per [`parameter_order`] slot.
    pub grad: DVector<f64>,
    /// How many per-parameter gradients sat too close to a device kink to be
    /// trusted.
    pub kink_warnings: usize,
}

/// Squared output error and its exact gradient in every trainable parameter.
pub fn loss_grad(built: &BuiltNetwork, sample: &Sample, method: GradMethod) -> Result<LossGrad> {
    let operating = built.solve(&sample.input)?;
    let y = operating.output(&built.net);
    if y.len() != sample.target.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: sample.target.len() });
    }
    let err = &y - &sample.target;
    let loss = err.norm_squared();
    let dcdy = 2.0 * err;
    let order = parameter_order(&built.widths);
    let mut grad = DVector::zeros(order.len());
    let mut kink_warnings = 0;
    match method {
        GradMethod::HardwareLinearization => {
            let bindings: Vec<_> = order.iter().map(|p| built.binding(*p)).collect();
            let gradients = if built.device.is_ideal() {
                cascade_gradients(&built.net, &bindings, &operating)?
            } else {
                cascade_gradients_measured(&built.net, &bindings, &operating)?
            };
            for (k, g) in gradients.iter().enumerate() {
                if !g.is_reliable() {
                    kink_warnings += 1;
                }
                grad[k] = dcdy.dot(&g.dy);
            }
        }
        GradMethod::EquilibriumBackprop => {
            let composed = compose_cascade(&built.net)?;
            let z = operating.stacked_z();
            let u = operating.stacked_input(&built.net);
            // The linearization depends only on the operating point, so one
            // factorization serves every binding; offsets vary per binding.
            let zero = DVector::zeros(composed.n_state());
            let (linearized, margin) = if built.device.is_ideal() {
                (hardware_linearize_at(&composed, &z, &u, &zero)?, kink_margin(&composed, &z, &u))
            } else {
                (measured_linearize(&composed, &z, &zero)?, measured_margin(&z))
            };
            let factored = linearized.factor()?;
            for (k, param) in order.iter().enumerate() {
                let binding = built.binding(*param);
                let (derivative, du) = composed_binding_derivative(&built.net, &binding)?;
                let u_d = &derivative.dh * &z + &derivative.db * &u;
                let (_, y_ell) = factored.solve_with_offsets(&du, &u_d)?;
                let dy = y_ell - &derivative.dc * &z - &derivative.dd * &u;
                let g = Gradient { dy, margin };
                if !g.is_reliable() {
                    kink_warnings += 1;
                }
                grad[k] = dcdy.dot(&g.dy);
            }
        }
    }
    Ok(LossGrad { loss, grad, kink_warnings })
}

/// Per-epoch aggregate error `sqrt(sum_i ||y_di - y_i||^2)` over the dataset,
/// measured on the physical circuit after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurve {
    pub errors: Vec<f64>,
    pub kink_warnings: usize,
}

impl TrainingCurve {
    /// Single-column CSV, header `errors`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("errors\n");
        for e in &self.errors {
            out.push_str(&format!("{e}\n"));
        }
        out
    }
}

/// Shuffled single-sample SGD from the given student state.
///
/// With noise enabled the physical circuit starts with spread resistances and
/// receives imperfect writes; the hardware-linearization method measures that
/// circuit directly, while equilibrium backprop steers by its nominal ledger.
/// Solver failure at any sample aborts with the one-based epoch index.
pub fn sgd_train(
    student: &NetworkParams,
    data: &[Sample],
    config: &TrainConfig,
) -> Result<TrainingCurve> {
    config.validate()?;
    let widths = student.widths()?;
    if widths != config.widths {
        return Err(Error::InvalidParameter(
            "student parameters do not fit the configured widths".into(),
        ));
    }
    if data.is_empty() {
        return Err(Error::InvalidParameter("training needs at least one sample".into()));
    }
    for sample in data {
        if sample.input.len() != widths[0] || sample.target.len() != *widths.last().unwrap() {
            return Err(Error::DimensionMismatch {
                expected: widths[0],
                got: sample.input.len(),
            });
        }
    }

    let order = parameter_order(&config.widths);
    // `nominal` is what the backprop method believes; `circuit` is what the
    // simulated hardware actually holds. Without noise they stay identical.
    let mut nominal = student.clone();
    let mut circuit = student.clone();

    let mut rng_init = stream(config.seed, STREAM_INIT);
    let mut rng_shuffle = stream(config.seed, STREAM_SHUFFLE);
    let mut rng_write = stream(config.seed, STREAM_WRITE);

    if let Some(noise) = config.noise {
        for block in &mut circuit.resistances {
            for r in block.iter_mut() {
                let eta: f64 = rng_init.sample(StandardNormal);
                *r = (*r + noise.init_rel_var * *r * eta).max(RESISTANCE_FLOOR);
            }
        }
    }

    let mut errors = Vec::with_capacity(config.epochs);
    let mut kink_warnings = 0;
    let mut indices: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=config.epochs {
        let abort = |source: Error| Error::TrainingAborted { epoch, source: Box::new(source) };
        indices.shuffle(&mut rng_shuffle);
        for &s in &indices {
            let lg = match config.grad_method {
                GradMethod::HardwareLinearization => {
                    let built = circuit.build(config.device).map_err(abort)?;
                    loss_grad(&built, &data[s], config.grad_method).map_err(abort)?
                }
                GradMethod::EquilibriumBackprop => {
                    let built = nominal.build(DeviceModel::Ideal).map_err(abort)?;
                    loss_grad(&built, &data[s], config.grad_method).map_err(abort)?
                }
            };
            kink_warnings += lg.kink_warnings;
            match config.grad_method {
                GradMethod::HardwareLinearization => {
                    // The rig reads the circuit back before every write, so
                    // the believed state is the physical one.
                    apply_sgd_step(
                        &mut circuit,
                        None,
                        &order,
                        &lg.grad,
                        config.learning_rate,
                        config.noise,
                        &mut rng_write,
                    );
                }
                GradMethod::EquilibriumBackprop => {
                    let (nom, circ) = (&mut nominal, &mut circuit);
                    apply_sgd_step(
                        nom,
                        Some(circ),
                        &order,
                        &lg.grad,
                        config.learning_rate,
                        config.noise,
                        &mut rng_write,
                    );
                }
            }
        }
        let built = circuit.build(config.device).map_err(abort)?;
        let mut total = 0.0;
        for sample in data {
            let y = built.output(&sample.input).map_err(abort)?;
            total += (y - &sample.target).norm_squared();
        }
        errors.push(total.sqrt());
    }
    Ok(TrainingCurve { errors, kink_warnings })
}

/// One SGD write cycle. `believed` is the ledger the gradient was computed
/// from; when `shadow` is given it is the physical circuit receiving the same
/// commanded deltas, imperfectly if noise is on. Resistances step in log
/// space so they stay positive; offsets and synapses step linearly and write
/// exactly.
fn apply_sgd_step(
    believed: &mut NetworkParams,
    mut shadow: Option<&mut NetworkParams>,
    order: &[TrainParam],
    grad: &DVector<f64>,
    lr: f64,
    noise: Option<NoiseConfig>,
    rng: &mut ChaCha8Rng,
) {
    for (k, param) in order.iter().enumerate() {
        let g = grad[k];
        match *param {
            TrainParam::Resistance { layer, row, col } => {
                let r0 = believed.resistances[layer][(row, col)];
                let target = (r0 * (-lr * LR_RESISTANCE * r0 * g).exp()).max(RESISTANCE_FLOOR);
                let delta = target - r0;
                let applied = match noise {
                    Some(n) => {
                        let eta: f64 = rng.sample(StandardNormal);
                        delta + n.update_rel_var * delta.abs() * eta
                    }
                    None => delta,
                };
                match shadow.as_deref_mut() {
                    Some(shadow) => {
                        believed.resistances[layer][(row, col)] = target;
                        let held = shadow.resistances[layer][(row, col)];
                        shadow.resistances[layer][(row, col)] =
                            (held + applied).max(RESISTANCE_FLOOR);
                    }
                    None => {
                        believed.resistances[layer][(row, col)] =
                            (r0 + applied).max(RESISTANCE_FLOOR);
                    }
                }
            }
            TrainParam::Offset { layer, index } => {
                let delta = -lr * LR_OFFSET * g;
                believed.offsets[layer][index] += delta;
                if let Some(shadow) = shadow.as_deref_mut() {
                    shadow.offsets[layer][index] += delta;
                }
            }
            TrainParam::Synapse { layer, index } => {
                let delta = -lr * LR_SYNAPSE * g;
                believed.synapses[layer][index] += delta;
                if let Some(shadow) = shadow.as_deref_mut() {
                    shadow.synapses[layer][index] += delta;
                }
            }
        }
    }
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig::new(vec![2, 3, 2])
    }

    #[test]
    fn parameter_order_covers_the_reference_stack() {
        let order = parameter_order(&[10, 9, 7, 8, 4]);
        let resistances =
            order.iter().filter(|p| matches!(p, TrainParam::Resistance { .. })).count();
        let offsets = order.iter().filter(|p| matches!(p, TrainParam::Offset { .. })).count();
        let synapses = order.iter().filter(|p| matches!(p, TrainParam::Synapse { .. })).count();
        assert_eq!(resistances, 307);
        assert_eq!(offsets, 28);
        assert_eq!(synapses, 34);
        assert_eq!(order.len(), 369);
        // sectioned: all resistances first, then offsets, then synapses
        assert!(matches!(order[0], TrainParam::Resistance { layer: 0, row: 0, col: 0 }));
        assert!(matches!(order[306], TrainParam::Resistance { layer: 3, row: 8, col: 4 }));
        assert!(matches!(order[307], TrainParam::Offset { layer: 0, index: 0 }));
        assert!(matches!(order[335], TrainParam::Synapse { layer: 0, index: 0 }));
        let params = NetworkParams::initial(&[10, 9, 7, 8, 4]).unwrap();
        assert_eq!(params.n_params(), 369);
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        assert!(TrainConfig::new(vec![4]).validate().is_err());
        assert!(TrainConfig::new(vec![4, 0]).validate().is_err());
        let mut c = small_config();
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.noise = Some(NoiseConfig { init_rel_var: 1.5, update_rel_var: 0.1 });
        assert!(c.validate().is_err());
        let mut c = small_config();
        c.noise = Some(NoiseConfig { init_rel_var: 0.05, update_rel_var: -0.1 });
        assert!(c.validate().is_err());
        assert!(small_config().validate().is_ok());
    }

    #[test]
    fn dataset_is_deterministic_and_replays_the_teacher() {
        let widths = [3, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let a = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 4, 11).unwrap();
        let b = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 4, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 4, 12).unwrap();
        assert_ne!(a, c);
        let built = teacher.build(DeviceModel::Ideal).unwrap();
        for sample in &a {
            assert!(sample.input.iter().all(|v| v.abs() <= 1.0));
            let y = built.output(&sample.input).unwrap();
            assert!((y - &sample.target).amax() < 1e-12);
        }
        assert!(generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 0, 1).is_err());
    }

    #[test]
    fn zero_error_means_zero_gradient() {
        let widths = [2, 3, 2];
        let student = NetworkParams::initial(&widths).unwrap();
        let data = generate_synthetic_dataset(&student, DeviceModel::Ideal, 3, 5).unwrap();
        let built = student.build(DeviceModel::Ideal).unwrap();
        for sample in &data {
            for method in [GradMethod::HardwareLinearization, GradMethod::EquilibriumBackprop] {
                let lg = loss_grad(&built, sample, method).unwrap();
                assert!(lg.loss < 1e-18, "loss {}", lg.loss);
                assert!(lg.grad.amax() < 1e-6, "grad {}", lg.grad.amax());
            }
        }
    }

    #[test]
    fn gradient_methods_agree_pointwise() {
        let widths = [3, 4, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = NetworkParams::random(&widths, &mut rng).unwrap();
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 3, 2).unwrap();
        let built = state.build(DeviceModel::Ideal).unwrap();
        for sample in &data {
            let hw = loss_grad(&built, sample, GradMethod::HardwareLinearization).unwrap();
            let eb = loss_grad(&built, sample, GradMethod::EquilibriumBackprop).unwrap();
            assert!((hw.loss - eb.loss).abs() <= 1e-12 * (1.0 + hw.loss));
            if hw.kink_warnings == 0 && eb.kink_warnings == 0 {
                for k in 0..hw.grad.len() {
                    let scale = 1.0 + hw.grad[k].abs();
                    assert!(
                        (hw.grad[k] - eb.grad[k]).abs() <= 1e-6 * scale,
                        "param {k}: {} vs {}",
                        hw.grad[k],
                        eb.grad[k]
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_of_the_loss() {
        let widths = [2, 3, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let state = NetworkParams::random(&widths, &mut rng).unwrap();
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let sample = &generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 1, 4).unwrap()[0];
        let built = state.build(DeviceModel::Ideal).unwrap();
        let lg = loss_grad(&built, sample, GradMethod::HardwareLinearization).unwrap();
        assert_eq!(lg.kink_warnings, 0, "pick a different seed: operating point sits on a kink");
        let order = parameter_order(&widths);
        let loss_at = |params: &NetworkParams| -> f64 {
            let y = params.build(DeviceModel::Ideal).unwrap().output(&sample.input).unwrap();
            (y - &sample.target).norm_squared()
        };
        // a few representatives from each section
        for &k in &[0, 7, 11, order.len() - 11, order.len() - 9, order.len() - 3, order.len() - 1]
        {
            let mut plus = state.clone();
            let mut minus = state.clone();
            let eps = match order[k] {
                TrainParam::Resistance { layer, row, col } => {
                    let eps = 1e-4 * state.resistances[layer][(row, col)].abs();
                    plus.resistances[layer][(row, col)] += eps;
                    minus.resistances[layer][(row, col)] -= eps;
                    eps
                }
                TrainParam::Offset { layer, index } => {
                    let eps = 1e-6;
                    plus.offsets[layer][index] += eps;
                    minus.offsets[layer][index] -= eps;
                    eps
                }
                TrainParam::Synapse { layer, index } => {
                    let eps = 1e-6;
                    plus.synapses[layer][index] += eps;
                    minus.synapses[layer][index] -= eps;
                    eps
                }
            };
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            assert!(
                (lg.grad[k] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                "param {k} ({:?}): analytic {} vs fd {}",
                order[k],
                lg.grad[k],
                fd
            );
        }
    }

    #[test]
    fn single_layer_synapse_gradient_has_the_closed_form() {
        // One conducting diode: y = (C H^{-1} B - D) u with u = (offset, s*x),
        // so dC/ds = 2 e^T (C H^{-1} B - D)[:, 1] x. Uses only the kernel
        // blocks, no linearization machinery.
        let widths = [1, 1];
        let mut params = NetworkParams::initial(&widths).unwrap();
        params.resistances[0][(0, 0)] = 150.0;
        params.resistances[0][(0, 1)] = 40.0;
        params.resistances[0][(1, 0)] = 90.0;
        params.resistances[0][(1, 1)] = 60.0;
        params.synapses[0][0] = 1.3;
        let built = params.build(DeviceModel::Ideal).unwrap();
        // the output diode conducts for negative drive
        let x = -0.8;
        let input = DVector::from_vec(vec![x]);
        let operating = built.solve(&input).unwrap();
        assert!(operating.z[0][0] > 1e-3, "diode must conduct for the closed form");
        let sample = Sample { input, target: DVector::from_vec(vec![0.1]) };
        let lg = loss_grad(&built, &sample, GradMethod::HardwareLinearization).unwrap();

        let kernel = built.net.layers()[0].kernel.clone();
        let h_inv = kernel.h.clone().try_inverse().unwrap();
        let gain = &kernel.c * &h_inv * &kernel.b - &kernel.d;
        let u = operating.inputs[0].clone();
        let y = &gain * &u;
        let e = y[0] - 0.1;
        let hand = 2.0 * e * gain[(0, 1)] * x;
        let order = parameter_order(&widths);
        let k = order
            .iter()
            .position(|p| matches!(p, TrainParam::Synapse { .. }))
            .unwrap();
        assert!(
            (lg.grad[k] - hand).abs() <= 1e-6 * (1.0 + hand.abs()),
            "analytic {} vs hand {hand}",
            lg.grad[k]
        );
    }

    #[test]
    fn zero_learning_rate_training_is_flat() {
        let widths = [2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 3, 8).unwrap();
        let student = NetworkParams::initial(&widths).unwrap();
        let mut config = TrainConfig::new(widths.to_vec());
        config.epochs = 4;
        config.learning_rate = 0.0;
        let curve = sgd_train(&student, &data, &config).unwrap();
        assert_eq!(curve.errors.len(), 4);
        for e in &curve.errors {
            assert_eq!(*e, curve.errors[0]);
        }
        let built = student.build(DeviceModel::Ideal).unwrap();
        let initial: f64 = data
            .iter()
            .map(|s| (built.output(&s.input).unwrap() - &s.target).norm_squared())
            .sum();
        assert!((curve.errors[0] - initial.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_the_error() {
        let widths = [2, 3, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 5, 3).unwrap();
        let student = NetworkParams::initial(&widths).unwrap();
        let mut config = TrainConfig::new(widths.to_vec());
        config.epochs = 40;
        config.grad_method = GradMethod::EquilibriumBackprop;
        let curve = sgd_train(&student, &data, &config).unwrap();
        assert_eq!(curve.errors.len(), 40);
        let (first, last) = (curve.errors[0], *curve.errors.last().unwrap());
        assert!(last < 0.9 * first, "no progress: {first} -> {last}");
    }

    #[test]
    fn full_batch_descent_is_monotone_at_small_rate() {
        let widths = [2, 3, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 4, 6).unwrap();
        let mut params = NetworkParams::initial(&widths).unwrap();
        let order = parameter_order(&widths);
        let mut rng_write = stream(0, STREAM_WRITE);
        let lr = 1e-4;
        let mut losses = Vec::new();
        for _ in 0..10 {
            let built = params.build(DeviceModel::Ideal).unwrap();
            let mut total_loss = 0.0;
            let mut total_grad = DVector::zeros(order.len());
            for sample in &data {
                let lg = loss_grad(&built, sample, GradMethod::EquilibriumBackprop).unwrap();
                total_loss += lg.loss;
                total_grad += lg.grad;
            }
            losses.push(total_loss);
            apply_sgd_step(&mut params, None, &order, &total_grad, lr, None, &mut rng_write);
        }
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn same_seed_reproduces_the_curve_bit_for_bit() {
        let widths = [2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 3, 17).unwrap();
        let student = NetworkParams::initial(&widths).unwrap();
        let mut config = TrainConfig::new(widths.to_vec());
        config.epochs = 3;
        config.seed = 99;
        config.noise = Some(NoiseConfig::default());
        for method in [GradMethod::HardwareLinearization, GradMethod::EquilibriumBackprop] {
            config.grad_method = method;
            let a = sgd_train(&student, &data, &config).unwrap();
            let b = sgd_train(&student, &data, &config).unwrap();
            assert_eq!(a.errors, b.errors);
        }
        let c = {
            let mut other = config.clone();
            other.seed = 100;
            sgd_train(&student, &data, &other).unwrap()
        };
        config.grad_method = GradMethod::EquilibriumBackprop;
        let b = sgd_train(&student, &data, &config).unwrap();
        assert_ne!(b.errors, c.errors);
    }

    #[test]
    fn noise_perturbs_the_curve_but_completes() {
        let widths = [2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 3, 13).unwrap();
        let student = NetworkParams::initial(&widths).unwrap();
        let mut clean = TrainConfig::new(widths.to_vec());
        clean.epochs = 5;
        clean.grad_method = GradMethod::EquilibriumBackprop;
        let mut noisy = clean.clone();
        noisy.noise = Some(NoiseConfig::default());
        let a = sgd_train(&student, &data, &clean).unwrap();
        let b = sgd_train(&student, &data, &noisy).unwrap();
        assert_eq!(b.errors.len(), 5);
        assert_ne!(a.errors, b.errors);
        assert!(b.errors.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn shockley_devices_train_end_to_end() {
        let widths = [2, 2];
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let teacher = NetworkParams::random(&widths, &mut rng).unwrap();
        let data = generate_synthetic_dataset(&teacher, DeviceModel::silicon(), 2, 23).unwrap();
        let student = NetworkParams::initial(&widths).unwrap();
        let mut config = TrainConfig::new(widths.to_vec());
        config.epochs = 3;
        config.device = DeviceModel::silicon();
        let curve = sgd_train(&student, &data, &config).unwrap();
        assert_eq!(curve.errors.len(), 3);
        assert!(curve.errors.iter().all(|e| e.is_finite()));
    }

    #[test]
    fn abort_errors_name_the_epoch() {
        let err = Error::TrainingAborted {
            epoch: 3,
            source: Box::new(Error::NonConvergence { iterations: 10, residual: 1.0 }),
        };
        assert!(err.to_string().contains("epoch 3"));
    }

    #[test]
    fn curve_serializes_to_single_column_csv() {
        let curve = TrainingCurve { errors: vec![2.5, 1.25], kink_warnings: 0 };
        assert_eq!(curve.to_csv(), "errors\n2.5\n1.25\n");
        let empty = TrainingCurve { errors: vec![], kink_warnings: 0 };
        assert_eq!(empty.to_csv(), "errors\n");
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut config = TrainConfig::reference(7);
        config.device = DeviceModel::silicon();
        config.noise = Some(NoiseConfig::default());
        config.grad_method = GradMethod::EquilibriumBackprop;
        let text = serde_json::to_string(&config).unwrap();
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.widths, config.widths);
        assert_eq!(back.grad_method, config.grad_method);
        assert_eq!(back.device, config.device);
        assert_eq!(back.noise, config.noise);
        // omitted fields take the documented defaults
        let sparse: TrainConfig = serde_json::from_str(r#"{"widths":[3,2]}"#).unwrap();
        assert_eq!(sparse.epochs, 250);
        assert_eq!(sparse.learning_rate, 1e-3);
        assert!(sparse.noise.is_none());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"widths":[3,2],"lr":1}"#).is_err());
    }
}
