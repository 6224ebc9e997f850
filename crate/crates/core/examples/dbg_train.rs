use equinet::training::{
    generate_synthetic_dataset, sgd_train, DeviceModel, GradMethod, NetworkParams, NoiseConfig,
    TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(5);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let method = match args.get(3).map(|s| s.as_str()) {
        Some("eb") => GradMethod::EquilibriumBackprop,
        _ => GradMethod::HardwareLinearization,
    };
    let device = match args.get(4).map(|s| s.as_str()) {
        Some("shockley") => DeviceModel::silicon(),
        _ => DeviceModel::Ideal,
    };
    let noise = args.get(5).map(|s| s == "noise").unwrap_or(false);

    let mut config = TrainConfig::reference(5);
    config.epochs = epochs;
    config.learning_rate = lr;
    config.grad_method = method;
    config.device = device;
    if noise {
        config.noise = Some(NoiseConfig::default());
    }

    let teacher_device = match args.get(7).map(|s| s.as_str()) {
        Some("shockley") => DeviceModel::silicon(),
        Some("ideal") => DeviceModel::Ideal,
        _ => device,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let teacher = NetworkParams::random(&config.widths, &mut rng).unwrap();
    let data = generate_synthetic_dataset(&teacher, teacher_device, 10, config.seed).unwrap();
    let student = NetworkParams::initial(&config.widths).unwrap();

    let t0 = Instant::now();
    let curve = sgd_train(&student, &data, &config).unwrap();
    let dt = t0.elapsed();
    println!(
        "method {:?} device {:?} lr {lr}: {:.2?} total, {:.1?}/epoch, kinks {}",
        method,
        device,
        dt,
        dt / epochs.max(1) as u32,
        curve.kink_warnings
    );
    for (i, e) in curve.errors.iter().enumerate() {
        if i < 10 || i % 25 == 0 || i + 1 == curve.errors.len() {
            println!("  epoch {:3}: {e}", i + 1);
        }
    }
    if let Some(path) = args.get(6) {
        std::fs::write(path, curve.to_csv()).unwrap();
    }
}
