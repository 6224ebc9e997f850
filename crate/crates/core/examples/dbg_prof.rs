use equinet::training::{
    generate_synthetic_dataset, parameter_order, DeviceModel, NetworkParams, TrainConfig,
};
use equinet::{
    cascade_gradient, gradient_from_derivatives, hardware_linearize_at, kernel_derivative_wrt_edge,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let config = TrainConfig::reference(5);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let teacher = NetworkParams::random(&config.widths, &mut rng).unwrap();
    let data = generate_synthetic_dataset(&teacher, DeviceModel::Ideal, 10, config.seed).unwrap();
    let built = teacher.build(DeviceModel::Ideal).unwrap();
    let order = parameter_order(&config.widths);

    let t = Instant::now();
    let operating = built.solve(&data[0].input).unwrap();
    println!("solve: {:?}", t.elapsed());

    // Full per-binding gradient over all 369 params.
    let t = Instant::now();
    let mut acc = 0.0;
    for p in &order {
        let b = built.binding(*p);
        let g = cascade_gradient(&built.net, &b, &operating).unwrap();
        acc += g.dy.sum();
    }
    println!("cascade_gradient x{}: {:?} (acc {acc:.3})", order.len(), t.elapsed());

    // Derivative extraction alone for the resistance bindings of layer 0.
    let layer = &built.net.layers()[0];
    let form = layer.form.as_ref().unwrap();
    let m_in = layer.kernel.n_inputs();
    let t = Instant::now();
    let mut count = 0;
    for p in &order {
        let b = built.binding(*p);
        if b.layer != 0 {
            continue;
        }
        if let equinet::ParamTarget::Edge { edge, wrt } = b.target {
            let d = kernel_derivative_wrt_edge(form, m_in, edge, wrt).unwrap();
            acc += d.dh[(0, 0)];
            count += 1;
        }
    }
    println!("kernel_derivative_wrt_edge x{count}: {:?}", t.elapsed());

    // First-layer linearized solve alone.
    let kernel = &layer.kernel;
    let z = &operating.z[0];
    let u = &operating.inputs[0];
    let du = DVector::zeros(m_in);
    let d = kernel_derivative_wrt_edge(form, m_in, 7, equinet::EdgeParameter::Conductance).unwrap();
    let t = Instant::now();
    for _ in 0..count {
        let g = gradient_from_derivatives(kernel, z, u, &d, &du).unwrap();
        acc += g.dy[0];
    }
    println!("gradient_from_derivatives x{count}: {:?} (acc {acc:.3})", t.elapsed());

    // Downstream propagation alone (layers 1..4 lin+solve).
    let t = Instant::now();
    for _ in 0..count {
        for i in 1..built.net.len() {
            let layer = &built.net.layers()[i];
            let zero = DVector::zeros(layer.kernel.n_state());
            let lin =
                hardware_linearize_at(&layer.kernel, &operating.z[i], &operating.inputs[i], &zero)
                    .unwrap();
            let du_i = DVector::zeros(layer.kernel.n_inputs());
            let (_, y) = lin.solve(&du_i).unwrap();
            acc += y[0];
        }
    }
    println!("downstream lin+solve x{count}: {:?} (acc {acc:.3})", t.elapsed());
}
