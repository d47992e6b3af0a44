//! Four coherent arrivals: plain, smoothed and forward-backward smoothed MUSIC.

use uraloc::aoa::{estimate_aoa, match_estimates, AoaConfig, AoaMethod};
use uraloc::geometry::{Direction, UraConfig};
use uraloc::sim::{simulate_ideal, SimOptions, SourceSpec};

fn main() {
    let truth: Vec<Direction> = [(21.8, 90.0), (32.0, 56.0), (15.0, -60.0), (60.0, -150.0)]
        .iter()
        .map(|&(t, p)| Direction::from_degrees(t, p).expect("valid direction"))
        .collect();
    let sources: Vec<SourceSpec> = truth.iter().map(|d| SourceSpec::direction(*d).coherent("multipath")).collect();
    let ura = UraConfig::standard(3, 4).expect("valid array");
    let cap = simulate_ideal(&[ura], &sources, 50, 10f64.powf(-1.5), SimOptions::seeded(0))
        .expect("simulates")
        .remove(0);

    for method in AoaMethod::ALL {
        let result = estimate_aoa(&cap, &AoaConfig::new(method, truth.len())).expect("estimates");
        let found: Vec<Direction> = result.estimates.iter().map(|e| e.direction).collect();
        println!("{} (signal eigenvalues {:?})", method.name(), &result.eigenvalues[..4]);
        for (d, err) in truth.iter().zip(match_estimates(&truth, &found)) {
            let (t, p) = d.to_degrees();
            match err {
                Some((dt, dp)) => println!("  ({t:5.1}, {p:6.1}) -> error ({:.2}, {:.2}) deg", dt.to_degrees(), dp.to_degrees()),
                None => println!("  ({t:5.1}, {p:6.1}) -> missed"),
            }
        }
    }
}
