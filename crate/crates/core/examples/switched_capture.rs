//! Time-division capture of one array through three RF chains.

use uraloc::geometry::{Direction, UraConfig};
use uraloc::sim::{simulate_switched, HardwareImpairments, SimOptions, SourceSpec, SwitchedPlan};

fn main() {
    let ura = UraConfig::standard(3, 4).expect("valid array");
    let grouping = ura.grouping();
    println!("groups {:?}, calibration antennas {:?}", grouping.groups(), grouping.cpas());
    println!("redundant slots {:?}", grouping.redundant_slots());

    let imp = HardwareImpairments {
        pll_phases: [0.0, 1.2, -2.4],
        cable_delays: [0.0, 3e-10, 8e-10],
        cfo_hz: 2500.0,
        noise_variance: 0.01,
    };
    let plan = SwitchedPlan::standard(std::slice::from_ref(&ura), 50, 5e-4).expect("valid plan");
    let src = [SourceSpec::direction(Direction::from_degrees(40.0, -30.0).expect("valid direction"))];
    let session = simulate_switched(&[ura], &src, &imp, &plan, SimOptions::seeded(1)).expect("simulates");
    let cap = &session.arrays[0];
    let schedule = cap.schedule.as_ref().expect("switched capture");
    println!(
        "{} snapshots over {:.3} s, slot order {:?}",
        cap.num_snapshots(),
        schedule.duration(),
        schedule.group_order
    );
    for col in [0, 50, 100, 150, 200, 250] {
        let (slot, packet) = schedule.column_slot(col).expect("in range");
        println!(
            "column {col:3}: slot {slot}, packet {packet}, t = {:.4} s, elements {:?}",
            cap.timestamps[col],
            cap.sampled_elements(col)
        );
    }
}
