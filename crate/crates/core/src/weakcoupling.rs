//! Closed-form weak-coupling channel for the 3D gas.
//!
//! To second order in the cumulant expansion the decoherence function is
//! `v(t) = exp(i w t - Gamma(t))`, with `w` the mean collisional shift and
//! `Gamma` generated by an Ohmic bath of particle-hole pairs of strength
//! `alpha = (k_F a / pi)^2`. Nothing here touches the determinant engine.

use crate::error::{Error, Result};
use crate::levitov::{check_grid, ChannelKind, DecoherenceTrace, Regime};
use crate::numerics::special::{cosine_integral, fermi, fermi_dirac_integral, ln_sinh, EULER_GAMMA};
use crate::numerics::{quad, roots};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Relative finite-difference step for temperature derivatives.
pub const DELTA_T_REL: f64 = 1e-2;

pub fn alpha(kfa: f64) -> f64 {
    (kfa / PI).powi(2)
}

/// Chemical potential of the continuum s-wave sector, fixed by
/// `sqrt(pi T) F_{1/2}(mu/T) = 2` (density of states `1/(2 sqrt E)` per shell).
pub fn continuum_chemical_potential(temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature {temperature} must be > 0")));
    }
    let g = PI.sqrt() * temperature.sqrt();
    let mut failure = None;
    let mu = roots::brent(
        |mu| match fermi_dirac_integral(0.5, mu / temperature) {
            Ok(v) => g * v - 2.0,
            Err(e) => {
                failure = Some(e);
                0.0
            }
        },
        -10.0,
        10.0,
        1e-14,
        300,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(mu),
    }
}

/// First-order shift `(a/pi) int dE sqrt(E) f(E)` by direct quadrature.
pub fn shift_by_quadrature(temperature: f64, mu: f64, kfa: f64) -> Result<f64> {
    // With E = u^2 the integrand 2 u^2 f(u^2) is smooth at the origin.
    let edge = mu.max(0.0).sqrt();
    let upper = (mu.max(0.0) + 60.0 * temperature).sqrt();
    let mut breaks = vec![0.0];
    if edge > 0.0 {
        breaks.push(edge);
    }
    breaks.push(upper);
    let r = quad::integrate_pieces(|u| 2.0 * u * u * fermi(u * u, mu, temperature), &breaks, 1e-16, 1e-13);
    if !r.converged {
        return Err(Error::NoConvergence {
            iterations: 0,
            context: "first-order shift quadrature".into(),
        });
    }
    Ok(kfa / PI * r.value)
}

/// The same shift through the polylogarithm,
/// `w = -k_F a Li_{3/2}(-e^{beta mu}) / sqrt(4 pi beta^3)`.
pub fn shift_closed_form(temperature: f64, mu: f64, kfa: f64) -> Result<f64> {
    // -Li_{3/2}(-z) is the complete Fermi-Dirac integral of order 3/2.
    let minus_li = fermi_dirac_integral(1.5, mu / temperature)?;
    Ok(kfa * minus_li * (temperature.powi(3) / (4.0 * PI)).sqrt())
}

/// First-order collisional shift, evaluated by both routes and checked for
/// agreement to `1e-6` relative.
pub fn first_order_shift(temperature: f64, mu: f64, kfa: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature {temperature} must be > 0")));
    }
    let closed = shift_closed_form(temperature, mu, kfa)?;
    let direct = shift_by_quadrature(temperature, mu, kfa)?;
    if (closed - direct).abs() > 1e-6 * closed.abs().max(1e-300) {
        return Err(Error::PolylogDivergence {
            order: 1.5,
            argument: -(mu / temperature).exp(),
        });
    }
    Ok(closed)
}

/// Ground-state shift from Fumi's theorem, `w0 = -(1/pi) int_0^1 delta(E) dE`
/// with `delta(E) = -arctan(sqrt(E) a)`.
pub fn fumi_shift(kfa: f64) -> Result<f64> {
    if !(kfa < 0.0) {
        return Err(Error::InvalidCoupling(kfa));
    }
    // E = u^2: int_0^1 2 u arctan(u |a|) du, smooth in u.
    let b = -kfa;
    let f = |u: f64| 2.0 * u * (u * b).atan();
    let coarse = quad::simpson(f, 0.0, 1.0, 2_000);
    let fine = quad::simpson(f, 0.0, 1.0, 20_000);
    if (coarse - fine).abs() > 1e-8 * fine.abs().max(1e-12) {
        return Err(Error::NoConvergence {
            iterations: 20_000,
            context: "Fumi quadrature".into(),
        });
    }
    Ok(-fine / PI)
}

/// Fumi's integral with the ground-state occupation replaced by the thermal
/// one at the continuum chemical potential. Reduces to [`fumi_shift`] as
/// `T -> 0`; the difference is the thermal drift of a strong-coupling shift.
pub fn thermal_fumi_shift(kfa: f64, temperature: f64) -> Result<f64> {
    if !(kfa < 0.0) {
        return Err(Error::InvalidCoupling(kfa));
    }
    let mu = continuum_chemical_potential(temperature)?;
    let b = -kfa;
    let edge = mu.max(0.0).sqrt();
    let upper = (mu.max(0.0) + 60.0 * temperature).sqrt();
    let mut breaks = vec![0.0];
    if edge > 0.0 {
        breaks.push(edge);
    }
    breaks.push(upper);
    let r = quad::integrate_pieces(
        |u| 2.0 * u * (u * b).atan() * fermi(u * u, mu, temperature),
        &breaks,
        1e-15,
        1e-12,
    );
    Ok(-r.value / PI)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralMode {
    ExactIntegral,
    Ohmic,
}

/// Which weak-coupling results can be trusted quantitatively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccuracyClass {
    Quantitative,
    Qualitative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakCouplingModel {
    pub kfa: f64,
    pub alpha: f64,
    pub temperature: f64,
    pub mu: f64,
    /// UV cutoff `hbar Lambda / E_F`.
    pub cutoff: f64,
    pub shift_w: f64,
    /// Include the second-order phase `Phi(t)` in `v(t)`.
    pub include_phi: bool,
}

impl WeakCouplingModel {
    pub fn new(kfa: f64, temperature: f64) -> Result<Self> {
        if !(kfa < 0.0) {
            return Err(Error::InvalidCoupling(kfa));
        }
        let mu = continuum_chemical_potential(temperature)?;
        Ok(WeakCouplingModel {
            kfa,
            alpha: alpha(kfa),
            temperature,
            mu,
            cutoff: 1.0,
            shift_w: first_order_shift(temperature, mu, kfa)?,
            include_phi: false,
        })
    }

    pub fn with_cutoff(mut self, cutoff: f64) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }

    /// The Ohmic treatment assumes `beta Lambda >> 1`; 5 is the floor used here.
    pub fn cutoff_valid(&self) -> bool {
        self.beta() * self.cutoff > 5.0
    }

    pub fn accuracy(&self) -> AccuracyClass {
        if self.kfa.abs() <= 0.5 {
            AccuracyClass::Quantitative
        } else {
            AccuracyClass::Qualitative
        }
    }
}

/// `J(omega)`: either the continuum integral over particle-hole pairs or its
/// low-frequency Ohmic form `(alpha/2) omega [1 + coth(beta omega / 2)]`.
pub fn spectral_density(omega: f64, model: &WeakCouplingModel, mode: SpectralMode) -> Result<f64> {
    if omega.abs() >= 10.0 {
        return Err(Error::InvalidInput(format!("|omega| = {} outside the supported range", omega.abs())));
    }
    let (a, beta, mu, temp) = (model.alpha, model.beta(), model.mu, model.temperature);
    match mode {
        SpectralMode::Ohmic => {
            let x = 0.5 * beta * omega;
            if x.abs() < 1e-8 {
                // omega (1 + coth x) -> 2/beta as omega -> 0.
                return Ok(a / beta * (1.0 + x));
            }
            Ok(0.5 * a * omega * (1.0 + 1.0 / x.tanh()))
        }
        SpectralMode::ExactIntegral => {
            let lo = (-omega).max(0.0);
            let g = |e: f64| {
                let ep = e + omega;
                if e <= 0.0 || ep <= 0.0 {
                    return 0.0;
                }
                (e * ep).sqrt() * fermi(e, mu, temp) * (1.0 - fermi(ep, mu, temp))
            };
            let hi = mu.max(0.0) + omega.abs() + 60.0 * temp + 1.0;
            let mut breaks = vec![lo];
            for p in [mu, mu - omega] {
                if p > lo && p < hi {
                    breaks.push(p);
                }
            }
            breaks.push(hi);
            breaks.sort_by(f64::total_cmp);
            let r = quad::integrate_pieces(g, &breaks, 1e-300, 1e-12);
            Ok(a * r.value)
        }
    }
}

/// Dephasing function
/// `Gamma(t) = alpha { ln[(Lambda beta/pi) sinh(pi t/beta)] - Ci(Lambda t) + gamma_E }`.
pub fn dephasing_gamma(t: f64, model: &WeakCouplingModel) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let beta = model.beta();
    let lam = model.cutoff;
    model.alpha * ((lam * beta / PI).ln() + ln_sinh(PI * t / beta) - cosine_integral(lam * t) + EULER_GAMMA)
}

/// Second-order phase `Phi(t) ~ alpha (Lambda t + pi/2)` for `Lambda t >> 1`.
pub fn phase_phi(t: f64, model: &WeakCouplingModel) -> f64 {
    model.alpha * (model.cutoff * t + 0.5 * PI)
}

/// `Gamma(t)` straight from the Ohmic frequency integral
/// `alpha int_0^Lambda coth(beta w/2) (1 - cos w t)/w dw`. Slow; an oracle.
pub fn dephasing_gamma_by_quadrature(t: f64, model: &WeakCouplingModel) -> f64 {
    let beta = model.beta();
    let g = |w: f64| {
        if w == 0.0 {
            // coth(beta w/2)(1 - cos wt)/w -> t^2/beta.
            return t * t / beta;
        }
        (1.0 - (w * t).cos()) / (w * (0.5 * beta * w).tanh())
    };
    let pieces = ((model.cutoff * t / PI).ceil() as usize).max(1);
    let breaks: Vec<f64> = (0..=pieces).map(|i| model.cutoff * i as f64 / pieces as f64).collect();
    model.alpha * quad::integrate_pieces(g, &breaks, 1e-14, 1e-12).value
}

/// `v(t) = exp(i w t) [(beta/pi) sinh(pi t/beta)]^(-alpha)`, the bracket
/// clamped at one so that `|v| <= 1` near `t = 0`.
pub fn approx_value(t: f64, model: &WeakCouplingModel) -> Complex64 {
    let beta = model.beta();
    let log_bracket = if t > 0.0 {
        ((beta / PI).ln() + ln_sinh(PI * t / beta)).max(0.0)
    } else {
        0.0
    };
    let mut phase = model.shift_w * t;
    if model.include_phi && t > 0.0 {
        phase -= phase_phi(t, model);
    }
    Complex64::from_polar((-model.alpha * log_bracket).exp(), phase)
}

pub fn approx_decoherence(times: &[f64], model: &WeakCouplingModel) -> Result<DecoherenceTrace> {
    check_grid(times)?;
    let values: Vec<Complex64> = times.iter().map(|&t| approx_value(t, model)).collect();
    DecoherenceTrace::from_values(
        times.to_vec(),
        &values,
        Regime {
            temperature: model.temperature,
            kfa: model.kfa,
            geometry: None,
            channel: ChannelKind::Weak,
        },
    )
}

/// `dw/dT` by central difference at `delta T / T = 1e-2`, with `mu(T)`
/// recomputed at each temperature.
pub fn shift_temperature_derivative(temperature: f64, kfa: f64) -> Result<f64> {
    let h = DELTA_T_REL * temperature;
    let w = |t: f64| -> Result<f64> { first_order_shift(t, continuum_chemical_potential(t)?, kfa) };
    Ok((w(temperature + h)? - w(temperature - h)?) / (2.0 * h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakOptimum {
    pub t_max: f64,
    pub q_max: f64,
    /// `x = pi t_max T`, root of `x coth x = 1/alpha`.
    pub x: f64,
    pub dw_dt: f64,
}

/// Analytic optimum of `Q = t |v| T dw/dT` with `|v|` from the weak-coupling
/// form. Stationarity gives `x coth x = 1/alpha` with `x = pi t T`.
pub fn weak_coupling_optimum(temperature: f64, kfa: f64) -> Result<WeakOptimum> {
    let a = alpha(kfa);
    let validity = PI * a * temperature;
    if validity >= 1.0 || a >= 1.0 {
        return Err(Error::ValidityViolation(validity));
    }
    let target = 1.0 / a;
    let f = |x: f64| x / x.tanh() - target;
    let x = roots::brent(f, 1e-8, target + 1.0, 1e-15, 300)?;
    let t_max = x / (PI * temperature);
    let model = WeakCouplingModel::new(kfa, temperature)?;
    let dw_dt = shift_temperature_derivative(temperature, kfa)?;
    let v = approx_value(t_max, &model).norm();
    Ok(WeakOptimum {
        t_max,
        q_max: t_max * v * temperature * dw_dt.abs(),
        x,
        dw_dt,
    })
}

/// Time where the short-time power law and the long-time exponential
/// asymptotes of `ln|v|` come closest, `t = hbar beta / pi`.
pub fn crossover_time(model: &WeakCouplingModel) -> f64 {
    // Gap between ln(t) and (pi t/beta - ln 2 + ln(beta/pi)) is minimised
    // where d/dt vanishes: 1/t = pi/beta.
    model.beta() / PI
}
