use equinet::training::{DeviceModel, NetworkParams};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    for seed in [7u64, 8, 9] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = NetworkParams::random(&[1, 1], &mut rng).unwrap();
        let ideal = params.build(DeviceModel::Ideal).unwrap();
        let shock = params.build(DeviceModel::silicon()).unwrap();
        println!(
            "seed {seed}: offset {:+.4}, synapse {:+.4}",
            params.offsets[0][0], params.synapses[0][0]
        );
        for k in [-4i32, -2, 0, 2, 4] {
            let x = 0.25 * k as f64;
            let u = DVector::from_vec(vec![x]);
            let yi = ideal.output(&u).unwrap()[0];
            let ys = shock.output(&u).unwrap()[0];
            println!("  x {x:+.2}  ideal {yi:+.6}  shockley {ys:+.6}");
        }
    }
}
