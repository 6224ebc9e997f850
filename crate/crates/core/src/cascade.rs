//! Layer composition through synaptic gains.
//!
//! A cascade chains kernels by feeding each layer's designated outputs, scaled
//! elementwise by a gain vector, into the next layer's designated inputs.
//! Because signals flow strictly forward, the composed kernel has a block
//! lower-triangular `H` and can be evaluated either monolithically
//! ([`compose_cascade`] + a solver) or layer by layer ([`solve_sequential`]);
//! both give the same equilibrium.
//!
//! Gradients flow forward too: differentiate the layer that owns the
//! parameter at its operating point, then push the resulting output
//! derivative through the hardware-linearized downstream layers
//! ([`cascade_gradient`]). The same derivative is obtainable from the
//! composed kernel directly via [`composed_binding_derivative`]; the two
//! routes are cross-checked in the tests.

use nalgebra::{DMatrix, DVector};

use crate::activation::{ActivationKind, VariableKind};
use crate::crossbar::CrossbarArray;
use crate::error::{Error, Result};
use crate::form::FundamentalForm;
use crate::gradient::{
    hardware_linearize_at, kernel_derivative_wrt_edge, kink_margin, measured_linearize,
    measured_margin, EdgeDerivatives, EdgeParameter, Gradient, KernelDerivative,
};
use crate::kernel::KernelBehavior;
use crate::solver::{solve_with_fallback, SolveOptions, SolveReport};

/// Which kernel ports participate in the chain and which stay exposed.
///
/// `cascade_inputs` and `side_inputs` must partition the input columns;
/// `cascade_outputs` selects the rows fed forward (and, for the last layer,
/// the rows reported as the network output).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInterface {
    pub cascade_inputs: Vec<usize>,
    pub side_inputs: Vec<usize>,
    pub cascade_outputs: Vec<usize>,
}

impl LayerInterface {
    /// Everything cascaded: all inputs driven by the upstream layer, all
    /// outputs fed forward.
    pub fn full(kernel: &KernelBehavior) -> Self {
        LayerInterface {
            cascade_inputs: (0..kernel.n_inputs()).collect(),
            side_inputs: Vec::new(),
            cascade_outputs: (0..kernel.n_outputs()).collect(),
        }
    }

    fn validate(&self, kernel: &KernelBehavior) -> Result<()> {
        let m = kernel.n_inputs();
        let mut seen = vec![false; m];
        for &col in self.cascade_inputs.iter().chain(&self.side_inputs) {
            if col >= m {
                return Err(Error::InvalidParameter(format!(
                    "interface column {col} out of range for {m} inputs"
                )));
            }
            if seen[col] {
                return Err(Error::InvalidParameter(format!(
                    "interface column {col} listed twice"
                )));
            }
            seen[col] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(
                "every input column must be cascaded or side-driven".into(),
            ));
        }
        let m_out = kernel.n_outputs();
        let mut seen = vec![false; m_out];
        for &row in &self.cascade_outputs {
            if row >= m_out {
                return Err(Error::InvalidParameter(format!(
                    "interface row {row} out of range for {m_out} outputs"
                )));
            }
            if seen[row] {
                return Err(Error::InvalidParameter(format!("interface row {row} listed twice")));
            }
            seen[row] = true;
        }
        if self.cascade_outputs.is_empty() {
            return Err(Error::InvalidParameter("a layer must cascade at least one output".into()));
        }
        Ok(())
    }
}

/// One stage of a cascade: a kernel, its interface wiring, and (when the
/// kernel came from a circuit) the interconnection form that makes edge
/// parameters differentiable.
#[derive(Debug, Clone)]
pub struct CascadeLayer {
    pub kernel: KernelBehavior,
    pub interface: LayerInterface,
    pub form: Option<FundamentalForm>,
}

impl CascadeLayer {
    pub fn new(kernel: KernelBehavior, interface: LayerInterface) -> Result<Self> {
        interface.validate(&kernel)?;
        Ok(CascadeLayer { kernel, interface, form: None })
    }

    pub fn with_form(kernel: KernelBehavior, interface: LayerInterface, form: FundamentalForm) -> Result<Self> {
        interface.validate(&kernel)?;
        Ok(CascadeLayer { kernel, interface, form: Some(form) })
    }

    /// Standard wiring for a crossbar stage: upstream drives the port
    /// voltages, offset currents stay exposed, diode-side voltages feed on.
    pub fn from_crossbar(array: &CrossbarArray) -> Self {
        let interface = LayerInterface {
            cascade_inputs: array.input_columns().collect(),
            side_inputs: array.offset_columns().collect(),
            cascade_outputs: array.output_rows().collect(),
        };
        CascadeLayer {
            kernel: array.kernel().clone(),
            interface,
            form: Some(array.form().clone()),
        }
    }

    fn n_cascade_in(&self) -> usize {
        self.interface.cascade_inputs.len()
    }

    fn n_side(&self) -> usize {
        self.interface.side_inputs.len()
    }

    fn n_cascade_out(&self) -> usize {
        self.interface.cascade_outputs.len()
    }
}

/// An ordered stack of layers plus the gain vector applied in front of each:
/// layer `i` sees `u_i = σ_i ∘ y_{i-1}`, with `y_{-1}` the external input.
#[derive(Debug, Clone)]
pub struct CascadeNetwork {
    layers: Vec<CascadeLayer>,
    synapses: Vec<DVector<f64>>,
}

impl CascadeNetwork {
    pub fn new(layers: Vec<CascadeLayer>, synapses: Vec<DVector<f64>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("a cascade needs at least one layer".into()));
        }
        if synapses.len() != layers.len() {
            return Err(Error::DimensionMismatch { expected: layers.len(), got: synapses.len() });
        }
        for (i, layer) in layers.iter().enumerate() {
            layer.interface.validate(&layer.kernel)?;
            if synapses[i].len() != layer.n_cascade_in() {
                return Err(Error::DimensionMismatch {
                    expected: layer.n_cascade_in(),
                    got: synapses[i].len(),
                });
            }
            if i == 0 {
                continue;
            }
            let prev = &layers[i - 1];
            if prev.n_cascade_out() != layer.n_cascade_in() {
                return Err(Error::DimensionMismatch {
                    expected: prev.n_cascade_out(),
                    got: layer.n_cascade_in(),
                });
            }
            for k in 0..layer.n_cascade_in() {
                let up = prev.kernel.output_kinds[prev.interface.cascade_outputs[k]];
                let down = layer.kernel.input_kinds[layer.interface.cascade_inputs[k]];
                if up != down {
                    return Err(Error::InvalidParameter(format!(
                        "interface {i} entry {k}: upstream {up:?} feeds downstream {down:?}"
                    )));
                }
            }
        }
        Ok(CascadeNetwork { layers, synapses })
    }

    /// Chain crossbar stages with the standard wiring.
    pub fn from_crossbars(arrays: &[CrossbarArray], synapses: Vec<DVector<f64>>) -> Result<Self> {
        let layers = arrays.iter().map(CascadeLayer::from_crossbar).collect();
        CascadeNetwork::new(layers, synapses)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[CascadeLayer] {
        &self.layers
    }

    pub fn synapses(&self) -> &[DVector<f64>] {
        &self.synapses
    }

    pub fn set_synapse(&mut self, layer: usize, index: usize, gain: f64) -> Result<()> {
        if layer >= self.layers.len() || index >= self.synapses[layer].len() {
            return Err(Error::InvalidParameter(format!(
                "no synapse ({layer}, {index}) in this cascade"
            )));
        }
        if !gain.is_finite() {
            return Err(Error::InvalidParameter(format!("gain must be finite, got {gain}")));
        }
        self.synapses[layer][index] = gain;
        Ok(())
    }

    /// Replace one layer's kernel and form in place, keeping the wiring.
    /// Used when the underlying circuit's parameters change.
    pub fn update_layer(&mut self, index: usize, array: &CrossbarArray) -> Result<()> {
        if index >= self.layers.len() {
            return Err(Error::InvalidParameter(format!("no layer {index}")));
        }
        let fresh = CascadeLayer::from_crossbar(array);
        if fresh.kernel.n_inputs() != self.layers[index].kernel.n_inputs()
            || fresh.kernel.n_outputs() != self.layers[index].kernel.n_outputs()
        {
            return Err(Error::DimensionMismatch {
                expected: self.layers[index].kernel.n_inputs(),
                got: fresh.kernel.n_inputs(),
            });
        }
        self.layers[index] = fresh;
        Ok(())
    }

    /// Width of the external input (layer 0's cascaded columns).
    pub fn external_inputs(&self) -> usize {
        self.layers[0].n_cascade_in()
    }

    /// Width of the network output (the last layer's cascaded rows).
    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].n_cascade_out()
    }

    /// Column of the composed input vector holding side input `k` of `layer`.
    pub fn side_input_column(&self, layer: usize, k: usize) -> usize {
        let mut col = self.external_inputs();
        for l in &self.layers[..layer] {
            col += l.n_side();
        }
        col + k
    }

    fn state_offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.layers.len() + 1);
        let mut acc = 0;
        for l in &self.layers {
            off.push(acc);
            acc += l.kernel.n_state();
        }
        off.push(acc);
        off
    }
}

/// A scalar parameter's location inside a cascade layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamTarget {
    /// A resistive edge of the layer's circuit, by edge id.
    Edge { edge: usize, wrt: EdgeParameter },
    /// One entry of the gain vector feeding the layer.
    Synapse { index: usize },
    /// One of the layer's side inputs (offset injections).
    SideInput { index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBinding {
    pub layer: usize,
    pub target: ParamTarget,
}

fn take_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

fn take_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn take_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Matrix paired with its derivative in one scalar parameter; products use
/// the product rule so the composed blocks stay exactly differentiated.
#[derive(Clone)]
struct Tracked {
    v: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl Tracked {
    fn with_dot(v: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        Tracked { v, d }
    }

    fn mul(&self, other: &Tracked) -> Tracked {
        Tracked { v: &self.v * &other.v, d: &self.d * &other.v + &self.v * &other.d }
    }

    fn neg(&self) -> Tracked {
        Tracked { v: -&self.v, d: -&self.d }
    }
}

fn put_block(v: &mut DMatrix<f64>, d: &mut DMatrix<f64>, r0: usize, c0: usize, blk: &Tracked) {
    v.view_mut((r0, c0), blk.v.shape()).copy_from(&blk.v);
    d.view_mut((r0, c0), blk.d.shape()).copy_from(&blk.d);
}

/// Per-layer derivative payload for the tracked composition: the layer's
/// kernel-block dots plus the dot of its gain vector.
struct LayerDots {
    blocks: KernelDerivative,
    dsigma: DVector<f64>,
}

struct ComposedParts {
    kernel: KernelBehavior,
    derivative: KernelDerivative,
}

fn compose_tracked(net: &CascadeNetwork, dots: Option<(usize, &LayerDots)>) -> Result<ComposedParts> {
    let ell = net.len();
    let state_off = net.state_offsets();
    let n_total = state_off[ell];
    let d_ext = net.external_inputs();
    let side_total: usize = net.layers.iter().map(|l| l.n_side()).sum();
    let m_total = d_ext + side_total;
    let q_out = net.outputs();

    let mut hv = DMatrix::zeros(n_total, n_total);
    let mut hd = DMatrix::zeros(n_total, n_total);
    let mut bv = DMatrix::zeros(n_total, m_total);
    let mut bd = DMatrix::zeros(n_total, m_total);
    let mut cv = DMatrix::zeros(q_out, n_total);
    let mut cd = DMatrix::zeros(q_out, n_total);
    let mut dv = DMatrix::zeros(q_out, m_total);
    let mut dd = DMatrix::zeros(q_out, m_total);

    // Running coefficients of the live layer's cascaded output in terms of
    // each state block (gamma), the external input (delta) and each side
    // input block (lambda).
    let mut gamma: Vec<Tracked> = Vec::with_capacity(ell);
    let mut lambda: Vec<Tracked> = Vec::with_capacity(ell);
    let mut delta: Option<Tracked> = None;

    let mut side_off = Vec::with_capacity(ell);
    let mut acc = d_ext;
    for l in &net.layers {
        side_off.push(acc);
        acc += l.n_side();
    }

    for i in 0..ell {
        let layer = &net.layers[i];
        let k = &layer.kernel;
        let ci = &layer.interface.cascade_inputs;
        let si = &layer.interface.side_inputs;
        let co = &layer.interface.cascade_outputs;
        let ld = match dots {
            Some((at, ld)) if at == i => Some(ld),
            _ => None,
        };
        let zero_blocks;
        let blocks = match ld {
            Some(ld) => &ld.blocks,
            None => {
                zero_blocks = KernelDerivative::zero(k);
                &zero_blocks
            }
        };
        let h_i = Tracked::with_dot(k.h.clone(), blocks.dh.clone());
        let b_c = Tracked::with_dot(take_columns(&k.b, ci), take_columns(&blocks.db, ci));
        let b_s = Tracked::with_dot(take_columns(&k.b, si), take_columns(&blocks.db, si));
        let c_c = Tracked::with_dot(take_rows(&k.c, co), take_rows(&blocks.dc, co));
        let d_cc = Tracked::with_dot(take_block(&k.d, co, ci), take_block(&blocks.dd, co, ci));
        let d_cs = Tracked::with_dot(take_block(&k.d, co, si), take_block(&blocks.dd, co, si));
        let sigma = {
            let v = DMatrix::from_diagonal(&net.synapses[i]);
            let d = match ld {
                Some(ld) => DMatrix::from_diagonal(&ld.dsigma),
                None => DMatrix::zeros(ci.len(), ci.len()),
            };
            Tracked::with_dot(v, d)
        };

        let b_sig = b_c.mul(&sigma);
        put_block(&mut hv, &mut hd, state_off[i], state_off[i], &h_i);
        put_block(&mut bv, &mut bd, state_off[i], side_off[i], &b_s);
        if i == 0 {
            put_block(&mut bv, &mut bd, state_off[0], 0, &b_sig);
        } else {
            for (j, g) in gamma.iter().enumerate() {
                put_block(&mut hv, &mut hd, state_off[i], state_off[j], &b_sig.mul(g));
            }
            put_block(&mut bv, &mut bd, state_off[i], 0, &b_sig.mul(delta.as_ref().unwrap()));
            for (j, lam) in lambda.iter().enumerate() {
                put_block(&mut bv, &mut bd, state_off[i], side_off[j], &b_sig.mul(lam));
            }
        }

        // Express this layer's cascaded output in upstream terms:
        // y_i = -C z_i - D (sigma y_{i-1}) - D~ u~_i.
        let d_sig = d_cc.mul(&sigma);
        for g in gamma.iter_mut() {
            *g = d_sig.mul(g).neg();
        }
        for lam in lambda.iter_mut() {
            *lam = d_sig.mul(lam).neg();
        }
        delta = Some(match delta {
            None => d_sig.neg(),
            Some(prev) => d_sig.mul(&prev).neg(),
        });
        gamma.push(c_c.neg());
        lambda.push(d_cs.neg());
    }

    for (j, g) in gamma.iter().enumerate() {
        put_block(&mut cv, &mut cd, 0, state_off[j], &g.neg());
    }
    put_block(&mut dv, &mut dd, 0, 0, &delta.unwrap().neg());
    for (j, lam) in lambda.iter().enumerate() {
        put_block(&mut dv, &mut dd, 0, side_off[j], &lam.neg());
    }

    let mut activations: Vec<ActivationKind> = Vec::with_capacity(n_total);
    for l in &net.layers {
        activations.extend(l.kernel.activations.iter().cloned());
    }
    let mut input_kinds: Vec<VariableKind> = net.layers[0]
        .interface
        .cascade_inputs
        .iter()
        .map(|&c| net.layers[0].kernel.input_kinds[c])
        .collect();
    for l in &net.layers {
        input_kinds.extend(l.interface.side_inputs.iter().map(|&c| l.kernel.input_kinds[c]));
    }
    let last = &net.layers[ell - 1];
    let output_kinds: Vec<VariableKind> = last
        .interface
        .cascade_outputs
        .iter()
        .map(|&r| last.kernel.output_kinds[r])
        .collect();

    let kernel = KernelBehavior::new(hv, bv, cv, dv, activations, input_kinds, output_kinds)?;
    let derivative = KernelDerivative { dh: hd, db: bd, dc: cd, dd };
    Ok(ComposedParts { kernel, derivative })
}

/// Collapse the whole cascade into a single kernel over the inputs
/// `(u, side_1, ..., side_ell)` with the last layer's cascaded rows as output.
pub fn compose_cascade(net: &CascadeNetwork) -> Result<KernelBehavior> {
    Ok(compose_tracked(net, None)?.kernel)
}

/// Derivative of the composed kernel's blocks in one bound parameter, plus
/// the composed input's own dependence on it. Feeding both to
/// [`gradient_from_derivatives`] on the composed kernel reproduces
/// [`cascade_gradient`].
pub fn composed_binding_derivative(
    net: &CascadeNetwork,
    binding: &ParamBinding,
) -> Result<(KernelDerivative, DVector<f64>)> {
    let j = binding.layer;
    if j >= net.len() {
        return Err(Error::InvalidParameter(format!("no layer {j} in this cascade")));
    }
    let layer = &net.layers[j];
    let d_ext = net.external_inputs();
    let side_total: usize = net.layers.iter().map(|l| l.n_side()).sum();
    let m_total = d_ext + side_total;
    let mut du = DVector::zeros(m_total);
    let dots = match binding.target {
        ParamTarget::Edge { edge, wrt } => {
            let form = layer.form.as_ref().ok_or_else(|| {
                Error::InvalidParameter(format!("layer {j} has no circuit backing"))
            })?;
            LayerDots {
                blocks: kernel_derivative_wrt_edge(form, layer.kernel.n_inputs(), edge, wrt)?,
                dsigma: DVector::zeros(layer.n_cascade_in()),
            }
        }
        ParamTarget::Synapse { index } => {
            if index >= layer.n_cascade_in() {
                return Err(Error::InvalidParameter(format!(
                    "no synapse {index} in front of layer {j}"
                )));
            }
            let mut dsigma = DVector::zeros(layer.n_cascade_in());
            dsigma[index] = 1.0;
            LayerDots { blocks: KernelDerivative::zero(&layer.kernel), dsigma }
        }
        ParamTarget::SideInput { index } => {
            if index >= layer.n_side() {
                return Err(Error::InvalidParameter(format!(
                    "no side input {index} on layer {j}"
                )));
            }
            du[net.side_input_column(j, index)] = 1.0;
            LayerDots {
                blocks: KernelDerivative::zero(&layer.kernel),
                dsigma: DVector::zeros(layer.n_cascade_in()),
            }
        }
    };
    let parts = compose_tracked(net, Some((j, &dots)))?;
    Ok((parts.derivative, du))
}

/// Per-layer equilibria of a cascade at one external input.
#[derive(Debug, Clone)]
pub struct CascadeOperating {
    /// Per-layer equilibrium states.
    pub z: Vec<DVector<f64>>,
    /// Per-layer full output vectors.
    pub y: Vec<DVector<f64>>,
    /// Per-layer assembled input vectors (gains already applied).
    pub inputs: Vec<DVector<f64>>,
    /// The external input.
    pub external: DVector<f64>,
    /// Worst per-layer solve residual.
    pub residual: f64,
}

impl CascadeOperating {
    /// The network output: the last layer's cascaded rows.
    pub fn output(&self, net: &CascadeNetwork) -> DVector<f64> {
        let last = &net.layers[net.len() - 1];
        let y = &self.y[net.len() - 1];
        DVector::from_iterator(
            last.n_cascade_out(),
            last.interface.cascade_outputs.iter().map(|&r| y[r]),
        )
    }

    /// All layer states stacked in layer order, for use with the composed kernel.
    pub fn stacked_z(&self) -> DVector<f64> {
        let n: usize = self.z.iter().map(|z| z.len()).sum();
        let mut out = DVector::zeros(n);
        let mut at = 0;
        for z in &self.z {
            out.rows_mut(at, z.len()).copy_from(z);
            at += z.len();
        }
        out
    }

    /// The composed input vector `(u, side_1, ..., side_ell)`.
    pub fn stacked_input(&self, net: &CascadeNetwork) -> DVector<f64> {
        let side_total: usize = net.layers.iter().map(|l| l.n_side()).sum();
        let mut out = DVector::zeros(net.external_inputs() + side_total);
        out.rows_mut(0, self.external.len()).copy_from(&self.external);
        let mut at = self.external.len();
        for (layer, u) in net.layers.iter().zip(&self.inputs) {
            for &col in &layer.interface.side_inputs {
                out[at] = u[col];
                at += 1;
            }
        }
        out
    }
}

/// Solve the layers in order, feeding each the scaled output of the previous
/// one. Exact for any cascade: the composed equilibrium decouples forward.
pub fn solve_sequential(
    net: &CascadeNetwork,
    u: &DVector<f64>,
    sides: &[DVector<f64>],
    options: &SolveOptions,
) -> Result<CascadeOperating> {
    if u.len() != net.external_inputs() {
        return Err(Error::DimensionMismatch { expected: net.external_inputs(), got: u.len() });
    }
    if sides.len() != net.len() {
        return Err(Error::DimensionMismatch { expected: net.len(), got: sides.len() });
    }
    let mut z = Vec::with_capacity(net.len());
    let mut y = Vec::with_capacity(net.len());
    let mut inputs = Vec::with_capacity(net.len());
    let mut residual = 0.0f64;
    let mut upstream = u.clone();
    for (i, layer) in net.layers.iter().enumerate() {
        if sides[i].len() != layer.n_side() {
            return Err(Error::DimensionMismatch { expected: layer.n_side(), got: sides[i].len() });
        }
        let mut u_i = DVector::zeros(layer.kernel.n_inputs());
        for (k, &col) in layer.interface.cascade_inputs.iter().enumerate() {
            u_i[col] = net.synapses[i][k] * upstream[k];
        }
        for (k, &col) in layer.interface.side_inputs.iter().enumerate() {
            u_i[col] = sides[i][k];
        }
        let report: SolveReport = solve_with_fallback(&layer.kernel, &u_i, options)?;
        residual = residual.max(report.residual);
        upstream = DVector::from_iterator(
            layer.n_cascade_out(),
            layer.interface.cascade_outputs.iter().map(|&r| report.y[r]),
        );
        z.push(report.z_star);
        y.push(report.y);
        inputs.push(u_i);
    }
    Ok(CascadeOperating { z, y, inputs, external: u.clone(), residual })
}

/// Derivative of the network output in one bound parameter: differentiate
/// the owning layer at its equilibrium, then feed the result through the
/// hardware-linearized downstream layers, scaling by the gains in between.
pub fn cascade_gradient(
    net: &CascadeNetwork,
    binding: &ParamBinding,
    operating: &CascadeOperating,
) -> Result<Gradient> {
    cascade_gradient_with(net, binding, operating, false)
}

/// [`cascade_gradient`] built on the sign-classified linearization, for
/// cascades solved under realistic device laws. The margin then reports the
/// smallest `|z|` across the touched layers.
pub fn cascade_gradient_measured(
    net: &CascadeNetwork,
    binding: &ParamBinding,
    operating: &CascadeOperating,
) -> Result<Gradient> {
    cascade_gradient_with(net, binding, operating, true)
}

fn cascade_gradient_with(
    net: &CascadeNetwork,
    binding: &ParamBinding,
    operating: &CascadeOperating,
    measured: bool,
) -> Result<Gradient> {
    let mut batch = cascade_gradients_with(net, std::slice::from_ref(binding), operating, measured)?;
    Ok(batch.pop().expect("one binding yields one gradient"))
}

/// [`cascade_gradient`] over many bindings at one operating point. The
/// per-layer linearizations and the resistive-block factorizations behind
/// edge derivatives are shared, so each extra binding costs only a few
/// triangular solves.
pub fn cascade_gradients(
    net: &CascadeNetwork,
    bindings: &[ParamBinding],
    operating: &CascadeOperating,
) -> Result<Vec<Gradient>> {
    cascade_gradients_with(net, bindings, operating, false)
}

/// [`cascade_gradients`] built on the sign-classified linearization.
pub fn cascade_gradients_measured(
    net: &CascadeNetwork,
    bindings: &[ParamBinding],
    operating: &CascadeOperating,
) -> Result<Vec<Gradient>> {
    cascade_gradients_with(net, bindings, operating, true)
}

fn cascade_gradients_with(
    net: &CascadeNetwork,
    bindings: &[ParamBinding],
    operating: &CascadeOperating,
    measured: bool,
) -> Result<Vec<Gradient>> {
    if operating.z.len() != net.len() {
        return Err(Error::DimensionMismatch { expected: net.len(), got: operating.z.len() });
    }
    let n_layers = net.len();
    let mut factored = Vec::with_capacity(n_layers);
    let mut margins = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let layer = &net.layers[i];
        let zero = DVector::zeros(layer.kernel.n_state());
        let lin = if measured {
            measured_linearize(&layer.kernel, &operating.z[i], &zero)?
        } else {
            hardware_linearize_at(&layer.kernel, &operating.z[i], &operating.inputs[i], &zero)?
        };
        factored.push(lin.factor()?);
        margins.push(if measured {
            measured_margin(&operating.z[i])
        } else {
            kink_margin(&layer.kernel, &operating.z[i], &operating.inputs[i])
        });
    }
    // margin for a layer-j binding = min over layers j.. of the per-layer margin
    let mut suffix_margin = margins.clone();
    for i in (0..n_layers.saturating_sub(1)).rev() {
        suffix_margin[i] = suffix_margin[i].min(suffix_margin[i + 1]);
    }
    let mut edge_derivatives: Vec<Option<EdgeDerivatives>> = (0..n_layers).map(|_| None).collect();

    let mut out = Vec::with_capacity(bindings.len());
    for binding in bindings {
        let j = binding.layer;
        if j >= n_layers {
            return Err(Error::InvalidParameter(format!("no layer {j} in this cascade")));
        }
        let layer = &net.layers[j];
        let m_in = layer.kernel.n_inputs();
        let mut du = DVector::zeros(m_in);
        let derivative = match binding.target {
            ParamTarget::Edge { edge, wrt } => {
                if edge_derivatives[j].is_none() {
                    let form = layer.form.as_ref().ok_or_else(|| {
                        Error::InvalidParameter(format!("layer {j} has no circuit backing"))
                    })?;
                    edge_derivatives[j] = Some(EdgeDerivatives::new(form)?);
                }
                let shared = edge_derivatives[j].as_ref().expect("just filled");
                shared.kernel_derivative(m_in, edge, wrt)?
            }
            ParamTarget::Synapse { index } => {
                if index >= layer.n_cascade_in() {
                    return Err(Error::InvalidParameter(format!(
                        "no synapse {index} in front of layer {j}"
                    )));
                }
                // u_j[k] = sigma_j[k] * y_{j-1}[k], so the input moves by the
                // upstream value.
                let upstream = if j == 0 {
                    operating.external[index]
                } else {
                    let prev = &net.layers[j - 1];
                    operating.y[j - 1][prev.interface.cascade_outputs[index]]
                };
                du[layer.interface.cascade_inputs[index]] = upstream;
                KernelDerivative::zero(&layer.kernel)
            }
            ParamTarget::SideInput { index } => {
                if index >= layer.n_side() {
                    return Err(Error::InvalidParameter(format!(
                        "no side input {index} on layer {j}"
                    )));
                }
                du[layer.interface.side_inputs[index]] = 1.0;
                KernelDerivative::zero(&layer.kernel)
            }
        };
        let u_d = &derivative.dh * &operating.z[j] + &derivative.db * &operating.inputs[j];
        let (_, y_ell) = factored[j].solve_with_offsets(&du, &u_d)?;
        let mut dy = y_ell - &derivative.dc * &operating.z[j] - &derivative.dd * &operating.inputs[j];
        for i in j + 1..n_layers {
            let prev = &net.layers[i - 1];
            let layer = &net.layers[i];
            let mut du_i = DVector::zeros(layer.kernel.n_inputs());
            for (k, &col) in layer.interface.cascade_inputs.iter().enumerate() {
                du_i[col] = net.synapses[i][k] * dy[prev.interface.cascade_outputs[k]];
            }
            let (_, y_ell) = factored[i].solve(&du_i)?;
            dy = y_ell;
        }
        let last = &net.layers[n_layers - 1];
        let dy_out = DVector::from_iterator(
            last.n_cascade_out(),
            last.interface.cascade_outputs.iter().map(|&r| dy[r]),
        );
        out.push(Gradient { dy: dy_out, margin: suffix_margin[j] });
    }
    Ok(out)
}

/// A grounded crossbar wired as one ReLU layer: output `relu(W v)` with `W`
/// set by the conductances and the per-input gains. Two gain banks over
/// duplicated inputs realize weights of both signs.
#[derive(Debug, Clone)]
pub struct ReluLayer {
    array: CrossbarArray,
    gains: DVector<f64>,
    logical_inputs: usize,
}

/// Build a ReLU layer. With `sigma_neg` identically zero the conductance
/// matrix is `p x q` and a single gain bank drives the ports; otherwise the
/// inputs are duplicated, `g` is `2p x q`, and rows `p..2p` carry the
/// negative bank.
pub fn feedforward_relu_layer(
    p: usize,
    q: usize,
    g: &DMatrix<f64>,
    sigma_pos: &DVector<f64>,
    sigma_neg: &DVector<f64>,
) -> Result<ReluLayer> {
    if sigma_pos.len() != p || sigma_neg.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: sigma_pos.len().max(sigma_neg.len()) });
    }
    let duplicated = sigma_neg.iter().any(|&s| s != 0.0);
    let (array, gains) = if duplicated {
        if g.nrows() != 2 * p || g.ncols() != q {
            return Err(Error::DimensionMismatch { expected: 2 * p, got: g.nrows() });
        }
        let mut gains = DVector::zeros(2 * p);
        gains.rows_mut(0, p).copy_from(sigma_pos);
        gains.rows_mut(p, p).copy_from(sigma_neg);
        (CrossbarArray::feedforward(2 * p, q, g)?, gains)
    } else {
        if g.nrows() != p || g.ncols() != q {
            return Err(Error::DimensionMismatch { expected: p, got: g.nrows() });
        }
        (CrossbarArray::feedforward(p, q, g)?, sigma_pos.clone())
    };
    Ok(ReluLayer { array, gains, logical_inputs: p })
}

impl ReluLayer {
    /// Realize an arbitrary weight matrix `w` (q x p, any signs) exactly,
    /// using duplicated inputs with gain banks `+s`/`-s` and conductances
    /// floored at `delta`.
    pub fn from_weights(w: &DMatrix<f64>, delta: f64) -> Result<ReluLayer> {
        let (q, p) = w.shape();
        if p == 0 || q == 0 {
            return Err(Error::InvalidParameter("weight matrix must be nonempty".into()));
        }
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "conductance floor must be positive, got {delta}"
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite".into()));
        }
        let max_row: f64 = (0..q)
            .map(|j| (0..p).map(|i| w[(j, i)].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let s = 1.0 + max_row;
        // Split w/s into positive and negative parts; the per-column scale t_j
        // makes the diagonal row normalization cancel exactly.
        let mut g = DMatrix::from_element(2 * p, q, delta);
        for j in 0..q {
            let row_abs: f64 = (0..p).map(|i| w[(j, i)].abs()).sum::<f64>() / s;
            let t_j = 2.0 * p as f64 * delta / (1.0 - row_abs);
            for i in 0..p {
                let m = w[(j, i)] / s;
                g[(i, j)] += m.max(0.0) * t_j;
                g[(p + i, j)] += (-m).max(0.0) * t_j;
            }
        }
        let sigma_pos = DVector::from_element(p, s);
        let sigma_neg = DVector::from_element(p, -s);
        feedforward_relu_layer(p, q, &g, &sigma_pos, &sigma_neg)
    }

    pub fn array(&self) -> &CrossbarArray {
        &self.array
    }

    pub fn inputs(&self) -> usize {
        self.logical_inputs
    }

    pub fn outputs(&self) -> usize {
        self.array.q()
    }

    /// The realized weight matrix `W = -H^{-1} B T`, with `T` fanning the
    /// logical inputs out through the gain banks. `H` is diagonal here.
    pub fn weight(&self) -> DMatrix<f64> {
        let kernel = self.array.kernel();
        let q = self.array.q();
        let ports = self.array.p();
        let p = self.logical_inputs;
        let mut w = DMatrix::zeros(q, p);
        for j in 0..q {
            let h_jj = kernel.h[(j, j)];
            for k in 0..ports {
                let col = self.array.input_columns().start + k;
                w[(j, k % p)] -= kernel.b[(j, col)] * self.gains[k] / h_jj;
            }
        }
        w
    }

    /// Evaluate through the actual circuit (equilibrium solve), not the
    /// closed form. Small conductance floors make the fixed-point map weakly
    /// contractive, so the solve runs at a tight step tolerance.
    pub fn eval(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.logical_inputs {
            return Err(Error::DimensionMismatch { expected: self.logical_inputs, got: v.len() });
        }
        let kernel = self.array.kernel();
        let mut u = DVector::zeros(kernel.n_inputs());
        for k in 0..self.array.p() {
            u[self.array.input_columns().start + k] = self.gains[k] * v[k % self.logical_inputs];
        }
        let options = SolveOptions { tol: Some(1e-13), ..SolveOptions::default() };
        let y = solve_with_fallback(kernel, &u, &options)?.y;
        Ok(DVector::from_iterator(
            self.array.q(),
            self.array.output_rows().map(|r| y[r]),
        ))
    }

    /// This layer as a cascade stage plus the gain vector to install at its
    /// interface. Without duplication the gains live in the interface and the
    /// circuit stays differentiable; with duplication the fan-out is folded
    /// into the kernel and the interface gains are unit.
    pub fn cascade_parts(&self) -> (CascadeLayer, DVector<f64>) {
        if self.array.p() == self.logical_inputs {
            return (CascadeLayer::from_crossbar(&self.array), self.gains.clone());
        }
        let kernel = self.array.kernel();
        let q = self.array.q();
        let p = self.logical_inputs;
        let ports = self.array.p();
        let mut b = DMatrix::zeros(kernel.n_state(), q + p);
        let mut d = DMatrix::zeros(kernel.n_outputs(), q + p);
        b.view_mut((0, 0), (kernel.n_state(), q)).copy_from(&kernel.b.view((0, 0), (kernel.n_state(), q)));
        d.view_mut((0, 0), (kernel.n_outputs(), q)).copy_from(&kernel.d.view((0, 0), (kernel.n_outputs(), q)));
        for k in 0..ports {
            let col = q + k;
            let gain = self.gains[k];
            for r in 0..kernel.n_state() {
                b[(r, q + k % p)] += kernel.b[(r, col)] * gain;
            }
            for r in 0..kernel.n_outputs() {
                d[(r, q + k % p)] += kernel.d[(r, col)] * gain;
            }
        }
        let mut input_kinds: Vec<VariableKind> = kernel.input_kinds[..q].to_vec();
        input_kinds.extend(std::iter::repeat(VariableKind::Voltage).take(p));
        let folded = KernelBehavior::new(
            kernel.h.clone(),
            b,
            kernel.c.clone(),
            d,
            kernel.activations.clone(),
            input_kinds,
            kernel.output_kinds.clone(),
        )
        .expect("folded kernel dimensions are consistent");
        let interface = LayerInterface {
            cascade_inputs: (q..q + p).collect(),
            side_inputs: (0..q).collect(),
            cascade_outputs: (0..q).collect(),
        };
        (
            CascadeLayer { kernel: folded, interface, form: None },
            DVector::from_element(p, 1.0),
        )
    }
}
