//! Direct position refinement around a geometric fix with a moving search ball.

use nalgebra::Vector3;
use uraloc::aoa::{AoaConfig, AoaMethod};
use uraloc::fusion::{gp_from_captures, locate_dpd, DpdConfig};
use uraloc::geometry::{orientation_from_ypr_deg, UraConfig};
use uraloc::sim::{simulate_ideal, Propagation, SimOptions, SourceSpec};

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
    let truth = Vector3::new(1.6, 1.0, 1.37);
    let opts = SimOptions::seeded(4).with_propagation(Propagation::PlanePerArray);
    let caps = simulate_ideal(&uras, &[SourceSpec::position(truth)], 50, 0.0, opts).expect("simulates");
    let (gp, _) = gp_from_captures(&caps, &uras, &AoaConfig::new(AoaMethod::ISsMusic, 1)).expect("locates");
    // start a few centimetres off to show the ball moving
    let init = gp.position + Vector3::new(0.04, -0.03, 0.02);
    let config = DpdConfig::default();
    let fix = locate_dpd(&caps, &uras, init, &config).expect("locates");
    let lsoi = fix.final_lsoi.as_ref().expect("at least one iteration");
    println!("search ball: radius {} m, voxel {} m, {} points", config.radius, config.voxel, lsoi.len());
    for (k, d) in fix.displacements.iter().enumerate() {
        println!("iteration {}: centre moved {d:.4} m", k + 1);
    }
    println!(
        "converged {}, error {:.4} m (start {:.4} m)",
        fix.converged,
        (fix.position - truth).norm(),
        (init - truth).norm()
    );
}
