//! Per-axis median smoothing of a noisy walk.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use uraloc::fusion::smooth_trajectory;
use uraloc::report::median;
use uraloc::scenario::resample_path;

fn main() {
    let waypoints = [Vector3::new(1.0, 1.0, 1.1), Vector3::new(2.6, 1.2, 1.1), Vector3::new(2.8, 2.8, 1.1)];
    let truth = resample_path(&waypoints, 98);
    let noise = Normal::new(0.0, 0.07).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let raw: Vec<Vector3<f64>> = truth.iter().map(|p| p + Vector3::from_fn(|_, _| noise.sample(&mut rng))).collect();
    let errors = |fixes: &[Vector3<f64>]| -> Vec<f64> { fixes.iter().zip(&truth).map(|(a, b)| (a - b).norm()).collect() };
    println!("raw median error {:.4} m", median(&errors(&raw)).unwrap_or(f64::NAN));
    for window in [3, 5, 7, 9] {
        let smooth = smooth_trajectory(&raw, window).expect("odd window");
        println!("window {window}: median error {:.4} m", median(&errors(&smooth)).unwrap_or(f64::NAN));
    }
}
