//! Three-stage phase calibration and a check against an unswitched capture.

use nalgebra::DMatrix;
use num_complex::Complex64;
use uraloc::calib::{calibrate_session, measure_intra_session, DEFAULT_SPREAD_WARNING};
use uraloc::geometry::{Direction, UraConfig};
use uraloc::sim::{
    broadside_source, simulate_ideal, simulate_switched, HardwareImpairments, SimOptions, SourceSpec, SwitchedPlan,
};

fn max_deviation(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let global: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum();
    let g = Complex64::cis(-global.arg());
    a.iter().zip(b.iter()).map(|(x, y)| (x * g * y.conj()).arg().abs()).fold(0.0, f64::max)
}

fn main() {
    let ura = UraConfig::standard(3, 4).expect("valid array");
    let imp = HardwareImpairments {
        pll_phases: [0.3, -2.0, 2.9],
        cable_delays: [0.0, 4e-10, -1e-10],
        cfo_hz: 9_000.0,
        noise_variance: 0.0,
    };
    let plan = SwitchedPlan::standard(std::slice::from_ref(&ura), 50, 5e-4).expect("valid plan");
    let opts = SimOptions::seeded(3);
    let src = [SourceSpec::direction(Direction::from_degrees(25.0, 110.0).expect("valid direction"))];

    let broadside = simulate_switched(std::slice::from_ref(&ura), &[broadside_source()], &imp, &plan, opts).expect("simulates");
    let (intra, warnings) = measure_intra_session(&broadside, DEFAULT_SPREAD_WARNING).expect("broadside capture");
    println!("intra-group offsets (rad): {:?}", intra.arrays[0].intra_group);
    println!("{} spread warnings", warnings.len());

    let data = simulate_switched(std::slice::from_ref(&ura), &src, &imp, &plan, opts).expect("simulates");
    let out = calibrate_session(&intra, &data).expect("calibrates");
    println!("inter-group phases (rad): {:?}", out.profile.arrays[0].inter_group);

    let ideal = simulate_ideal(&[ura], &src, 50, 0.0, opts).expect("simulates");
    let mut reference = ideal[0].snapshots.clone();
    for (k, mut col) in reference.column_iter_mut().enumerate() {
        col *= imp.cfo_phasor(out.captures[0].timestamps[k]);
    }
    println!(
        "largest phase deviation from the unswitched capture: {:.2e} rad",
        max_deviation(&out.captures[0].snapshots, &reference)
    );
    print!("{}", out.profile.to_toml().expect("serializes"));
}
