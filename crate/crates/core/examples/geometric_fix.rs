//! Position from two AoA rays by averaging their closest points.

use nalgebra::Vector3;
use uraloc::aoa::{AoaConfig, AoaMethod};
use uraloc::fusion::{closest_points, gp_from_captures};
use uraloc::geometry::{orientation_from_ypr_deg, UraConfig};
use uraloc::sim::{simulate_ideal, SimOptions, SourceSpec};

fn main() {
    let uras = vec![
        UraConfig::standard(3, 4)
            .expect("valid array")
            .with_id(0)
            .with_center(Vector3::new(0.0, 2.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 90.0, 0.0)),
        UraConfig::standard(3, 4)
            .expect("valid array")
            .with_id(1)
            .with_center(Vector3::new(2.0, 0.0, 1.17))
            .with_orientation(orientation_from_ypr_deg(0.0, 0.0, -90.0)),
    ];
    let truth = Vector3::new(1.2, 1.4, 0.97);
    let caps = simulate_ideal(&uras, &[SourceSpec::position(truth)], 50, 0.05, SimOptions::seeded(2)).expect("simulates");
    let (fix, rays) = gp_from_captures(&caps, &uras, &AoaConfig::new(AoaMethod::ISsMusic, 1)).expect("locates");
    let pair = closest_points(&rays[0], &rays[1]).expect("rays not parallel");
    println!("closest points {:?} and {:?}, gap {:.4} m", pair.on_h.as_slice(), pair.on_i.as_slice(), pair.gap());
    println!(
        "fix ({:.4}, {:.4}, {:.4}) m, error {:.4} m",
        fix.position.x,
        fix.position.y,
        fix.position.z,
        (fix.position - truth).norm()
    );
}
