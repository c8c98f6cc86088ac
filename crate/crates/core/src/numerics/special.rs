//! Special functions: Fermi factors, complete Fermi-Dirac integrals,
//! the cosine integral and a few overflow-safe helpers.

use crate::error::{Error, Result};
use crate::numerics::quad;
use num_complex::Complex64;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Fermi-Dirac occupation `1 / (exp((e - mu)/t) + 1)`, safe for any argument.
/// At `t == 0` it is a step function with value 1/2 at the edge.
pub fn fermi(e: f64, mu: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return match e.partial_cmp(&mu) {
            Some(std::cmp::Ordering::Less) => 1.0,
            Some(std::cmp::Ordering::Greater) => 0.0,
            _ => 0.5,
        };
    }
    let x = (e - mu) / t;
    if x > 0.0 {
        let q = (-x).exp();
        q / (1.0 + q)
    } else {
        1.0 / (1.0 + x.exp())
    }
}

/// `ln(sinh x)` for `x > 0` without overflow.
pub fn ln_sinh(x: f64) -> f64 {
    if x > 20.0 {
        x - std::f64::consts::LN_2 + (-(-2.0 * x).exp()).ln_1p()
    } else {
        x.sinh().ln()
    }
}

/// Complete Fermi-Dirac integral `F_s(eta) = -Li_s(-e^eta)`, normalised with
/// `1/Gamma(s)` so that `F_s(eta) ~ e^eta` for `eta -> -inf`.
pub fn fermi_dirac_integral(s: f64, eta: f64) -> Result<f64> {
    if s < 0.5 {
        return Err(Error::InvalidInput(format!(
            "Fermi-Dirac integral of order {s} < 1/2 is not supported"
        )));
    }
    let z = eta.exp();
    if z <= 0.9 {
        // Alternating series, terms fall at least like 0.9^k.
        let mut sum = 0.0;
        let mut zk = 1.0;
        for k in 1..2000 {
            zk *= z;
            let term = zk / (k as f64).powf(s);
            sum += if k % 2 == 1 { term } else { -term };
            if term <= 1e-17 * sum.abs() {
                return Ok(sum);
            }
        }
        return Err(Error::PolylogDivergence {
            order: s,
            argument: -z,
        });
    }
    // Integral representation with x = u^2:
    //   F_s = 2/Gamma(s) * int_0^inf u^(2s-1) / (exp(u^2 - eta) + 1) du.
    let integrand = |u: f64| {
        let p = if s == 0.5 { 1.0 } else { u.powf(2.0 * s - 1.0) };
        p * fermi(u * u, eta, 1.0)
    };
    let edge = eta.max(0.0).sqrt();
    let upper = (eta.max(0.0) + 50.0).sqrt();
    let mut breaks = vec![0.0];
    if edge > 0.0 {
        breaks.push(edge);
    }
    breaks.push(upper);
    let r = quad::integrate_pieces(integrand, &breaks, 1e-15, 1e-13);
    if !r.converged || r.error > 1e-10 * r.value.abs() {
        return Err(Error::PolylogDivergence {
            order: s,
            argument: -z,
        });
    }
    Ok(2.0 * r.value / statrs::function::gamma::gamma(s))
}

/// Cosine integral `Ci(x) = gamma + ln x + int_0^x (cos t - 1)/t dt` for `x > 0`.
pub fn cosine_integral(x: f64) -> f64 {
    assert!(x > 0.0, "Ci(x) requires x > 0");
    if x <= 2.0 {
        let x2 = x * x;
        let mut sum = 0.0;
        let mut fact = 1.0; // x^(2k) / (2k)!
        for k in 1..60 {
            let kk = 2 * k;
            fact *= -x2 / ((kk - 1) as f64 * kk as f64);
            let term = fact / kk as f64;
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        return EULER_GAMMA + x.ln() + sum;
    }
    // Continued fraction for E1(i x), modified Lentz.
    let tiny = 1e-300;
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / tiny, 0.0);
    let mut d = b.inv();
    let mut h = d;
    for i in 2..200 {
        let a = -(((i - 1) * (i - 1)) as f64);
        b += 2.0;
        d = (d * a + b).inv();
        c = b + c.inv() * a;
        let del = c * d;
        h *= del;
        if (del - 1.0).norm() < 1e-16 {
            break;
        }
    }
    let cs = Complex64::new(x.cos(), -x.sin()) * h;
    -cs.re
}
