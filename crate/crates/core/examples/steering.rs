//! Array geometry: element layout, steering phases and world-to-array angles.

use nalgebra::Vector3;
use uraloc::geometry::{
    direction_from_point, max_spacing, orientation_from_ypr_deg, steering_vector, Direction, UraConfig,
};

fn main() {
    let ura = UraConfig::standard(3, 4)
        .expect("valid array")
        .with_center(Vector3::new(0.0, 2.0, 1.17))
        .with_orientation(orientation_from_ypr_deg(0.0, 90.0, 0.0));
    println!(
        "3x4 array, d = {:.4} m ({:.2} wavelengths at {:.1} GHz)",
        ura.spacing(),
        ura.spacing_wavelengths(),
        ura.carrier_hz() / 1e9
    );
    let limit = max_spacing(60f64.to_radians()).expect("valid scan angle");
    println!("largest grating-free spacing for a 60 deg scan: {limit:.3} wavelengths");

    for e in 0..ura.num_elements() {
        let p = ura.element_position(e);
        println!("element {e:2}  chain {}  at ({:.4}, {:.4}, {:.4})", ura.grouping().chain_of(e), p.x, p.y, p.z);
    }

    let dir = Direction::from_degrees(30.0, 45.0).expect("valid direction");
    let a = steering_vector(&ura, &dir).into_inner();
    let phases: Vec<String> = a.iter().map(|v| format!("{:+.2}", v.arg())).collect();
    println!("steering phases toward (30, 45) deg: {}", phases.join(" "));

    let target = Vector3::new(1.5, 1.2, 1.5);
    let (theta, phi) = direction_from_point(&ura, &target).expect("point off the array").to_degrees();
    println!("point (1.5, 1.2, 1.5) m is seen at theta {theta:.2} deg, phi {phi:.2} deg");
}
