//! Load a scenario file and run simulation, calibration, AoA and location.

use std::path::PathBuf;

use uraloc::scenario::{aoa_runs, Scenario};

fn main() -> Result<(), uraloc::Error> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/two-array.toml")));
    let scenario = Scenario::load(&path)?;
    let setup = scenario.setup()?;
    let captured = setup.capture(&setup.sources, setup.seed)?;
    let calibrated = setup.calibrate(&captured, None)?;
    for w in &calibrated.warnings {
        println!("warning: {w}");
    }
    for run in aoa_runs(&setup, &calibrated.captures)? {
        for e in &run.result.estimates {
            let (t, p) = e.direction.to_degrees();
            println!("array {} {}: ({t:.2}, {p:.2}) deg", run.array_id, run.method.name());
        }
        println!("  per-source errors (deg): {:?}", run.errors);
    }
    if setup.uras.len() >= 2 {
        let (gp, dpd) = setup.locate(&calibrated.captures)?;
        println!("gp  {:?}", gp.position.as_slice());
        println!("dpd {:?} after {} iterations", dpd.position.as_slice(), dpd.iterations);
    }
    Ok(())
}
