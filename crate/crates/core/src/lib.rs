//! Nonlinear resistive networks as equilibrium models.
//!
//! The crate turns a network of resistors, ideal/real diodes and ports into a
//! compact kernel `0 ∈ H z + ψ(z) + B u`, `y = -C z - D u`, solves the kernel
//! by operator splitting, differentiates solutions exactly through a
//! linearize-and-measure procedure that a physical array could execute, and
//! trains cascades of crossbar arrays against teacher data.
//!
//! Module map:
//! * [`activation`] — scalar device laws and resolvents.
//! * [`graph`] — circuit graphs and the tree/cotree split.
//! * [`form`] — fundamental interconnection form and hybrid reduction.
//! * [`kernel`] — kernel extraction plus reciprocity/Stieltjes checks.
//! * [`crossbar`] — crossbar array builders (equilibrium and feedforward).
//! * [`netlist`] — JSON netlist round-tripping.
//! * [`solver`] — fixed-point solvers for the kernel inclusion.
//! * [`gradient`] — linearized kernels and exact parameter gradients.
//! * [`cascade`] — layer composition and end-to-end gradients.
//! * [`training`] — teacher/student experiments with SGD.

pub mod activation;
pub mod cascade;
pub mod crossbar;
pub mod error;
pub mod form;
pub mod gradient;
pub mod graph;
pub mod kernel;
pub mod netlist;
pub mod solver;
pub mod tol;
pub mod training;

pub use activation::{network_resolvent, resolvent, ActivationKind, LinearMode, LinearizedElement, VariableKind};
pub use cascade::{
    cascade_gradient, cascade_gradient_measured, cascade_gradients, cascade_gradients_measured,
    compose_cascade, composed_binding_derivative, feedforward_relu_layer, solve_sequential,
    CascadeLayer, CascadeNetwork, CascadeOperating, LayerInterface, ParamBinding, ParamTarget,
    ReluLayer,
};
pub use crossbar::{build_crossbar_equilibrium, build_crossbar_feedforward, CrossbarArray};
pub use error::{Error, Result};
pub use form::{fundamental_form, reduce_to_hybrid, FundamentalForm, HybridMatrix};
pub use gradient::{
    finite_difference, gradient_from_derivatives, gradient_from_derivatives_measured,
    hardware_linearize, hardware_linearize_at, hybrid_theta_derivative, kernel_derivative_wrt_edge,
    kink_margin, matrix_inverse_derivative, measured_linearize, measured_margin,
    reciprocal_edge_derivative, EdgeDerivatives, EdgeParameter, FactoredLinearization, Gradient,
    KernelDerivative, LinearizedKernel,
};
pub use graph::{partition_tree_cotree, CircuitGraph, Element, PortRole, TreeCotree};
pub use kernel::{check_reciprocity, check_stieltjes, extract_kernel, KernelBehavior};
pub use netlist::{export_netlist, import_netlist, Netlist};
pub use solver::{
    forward_backward, infer, infer_report, peaceman_rachford, solve_with_fallback, SolveOptions,
    SolveReport,
};
pub use training::{
    generate_synthetic_dataset, loss_grad, parameter_order, sgd_train, BuiltNetwork, DeviceModel,
    GradMethod, LossGrad, NetworkParams, NoiseConfig, Sample, TrainConfig, TrainParam,
    TrainingCurve, NOMINAL_RESISTANCE,
};
