//! Times one determinant evaluation for a few basis sizes.

use fermi_dephasing::basis::{self, CouplingSpec, Geometry};
use fermi_dephasing::levitov::LevitovKernel;
use std::time::Instant;

fn main() {
    let c = CouplingSpec::new(-0.5).unwrap();
    for &(shells, temp) in &[(150, 0.1), (300, 0.1), (400, 0.01)] {
        let start = Instant::now();
        let b = basis::prepare(Geometry::box_3d(shells), c, temp, basis::EPSILON).unwrap();
        let th = basis::thermal_state(&b, temp).unwrap();
        let prep = start.elapsed();
        let k = LevitovKernel::new(&b).unwrap();
        let start = Instant::now();
        let reps = 5;
        for i in 0..reps {
            let _ = k.log_dets(10.0 + i as f64, &[&th.occupations]);
        }
        let t = start.elapsed() / reps;
        let tr = b.truncation.unwrap();
        println!("N_s={shells} T={temp}: N={} N'={} prep={prep:?} per-det={t:?}", tr.n, tr.n_prime);
    }
}
