//! Small-system check of the determinant engine against brute-force Fock
//! space traces.

use fermi_dephasing::levitov;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleReport {
    pub bases: usize,
    pub points: usize,
    pub max_error: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_error < TOLERANCE
    }
}

/// Random orthogonal overlaps on up to six modes, ten `(T, mu, t)` points each.
pub fn oracle_check(bases: usize, seed: u64) -> fermi_dephasing::Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let points_per_basis = 10;
    for _ in 0..bases {
        let modes = rng.random_range(1..=6);
        let raw = DMatrix::from_fn(modes, modes, |_, _| rng.random_range(-1.0..1.0));
        let q = raw.qr().q();
        let mut e0: Vec<f64> = (0..modes).map(|_| rng.random_range(0.0..2.0)).collect();
        e0.sort_by(f64::total_cmp);
        let mut e1: Vec<f64> = (0..modes).map(|_| rng.random_range(-0.5..2.0)).collect();
        e1.sort_by(f64::total_cmp);
        let basis = levitov::toy_basis(e0, e1, q)?;
        for _ in 0..points_per_basis {
            let temperature = rng.random_range(0.02..2.0);
            let mu = rng.random_range(0.0..2.0);
            let t = rng.random_range(0.1..20.0);
            let th = levitov::thermal_at(&basis, temperature, mu);
            let det = levitov::decoherence_function(&basis, &th, &[0.0, t])?.values[1];
            let fock = levitov::many_body_oracle(&basis, &th, t)?;
            max_error = max_error.max((det - fock).norm());
        }
    }
    Ok(OracleReport {
        bases,
        points: bases * points_per_basis,
        max_error,
    })
}
