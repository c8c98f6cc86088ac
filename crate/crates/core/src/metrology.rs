//! Temperature estimation from a dephased qubit: Fisher information of
//! equatorial measurements, the quantum Fisher information, the optimal (SLD)
//! measurement direction and the quantum signal-to-noise ratio
//! `Q(t) = T sqrt(F_Q(t))`.

use crate::channel::Channel;
use crate::error::{Error, Result};
use crate::levitov::{fmt12, ChannelKind, DecoherenceTrace};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::path::Path;

/// Relative temperature step of the central differences.
pub const DELTA_T_REL: f64 = 1e-2;
/// Below this purity gap `F_par` is reported as missing.
pub const PURITY_FLOOR: f64 = 1e-12;

/// `d|v|/dT` and `dphi/dT` on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub d_abs: Vec<f64>,
    pub d_phase: Vec<f64>,
}

/// Central differences from traces at `T(1 - delta)` and `T(1 + delta)`.
/// Both phases are unwrapped from `phi(0) = 0`, so branches only disagree if
/// the grid is too coarse to follow them.
pub fn derivatives_from_traces(
    minus: &DecoherenceTrace,
    plus: &DecoherenceTrace,
    temperature: f64,
    delta_rel: f64,
) -> Result<Derivatives> {
    if minus.times != plus.times {
        return Err(Error::DimensionMismatch("traces on different grids".into()));
    }
    if let Some(i) = (0..minus.len()).find(|&i| (plus.phase[i] - minus.phase[i]).abs() > FRAC_PI_2) {
        return Err(Error::BranchMisalignment {
            t: minus.times[i],
            gap: plus.phase[i] - minus.phase[i],
        });
    }
    let h = 2.0 * delta_rel * temperature;
    Ok(Derivatives {
        d_abs: (0..minus.len()).map(|i| (plus.magnitude[i] - minus.magnitude[i]) / h).collect(),
        d_phase: (0..minus.len()).map(|i| (plus.phase[i] - minus.phase[i]) / h).collect(),
    })
}

/// Central trace plus its temperature derivatives.
pub fn temperature_derivatives(
    channel: &dyn Channel,
    temperature: f64,
    times: &[f64],
    delta_rel: f64,
) -> Result<(DecoherenceTrace, Derivatives)> {
    if !(delta_rel > 0.0 && delta_rel < 0.5) {
        return Err(Error::InvalidInput(format!("delta T / T = {delta_rel}")));
    }
    let temps = [temperature * (1.0 - delta_rel), temperature, temperature * (1.0 + delta_rel)];
    let mut traces = channel.traces(&temps, times)?;
    let plus = traces.pop().unwrap();
    let center = traces.pop().unwrap();
    let minus = traces.pop().unwrap();
    let d = derivatives_from_traces(&minus, &plus, temperature, delta_rel)?;
    Ok((center, d))
}

/// QFI split into its magnitude and phase parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qfi {
    /// `None` where `1 - |v|^2` is below the purity floor.
    pub parallel: Option<f64>,
    pub perp: f64,
}

impl Qfi {
    pub fn total(&self) -> Option<f64> {
        self.parallel.map(|p| p + self.perp)
    }
}

pub fn qfi(abs_v: f64, d_abs: f64, d_phase: f64) -> Qfi {
    let gap = 1.0 - abs_v * abs_v;
    Qfi {
        parallel: (gap >= PURITY_FLOOR).then(|| d_abs * d_abs / gap),
        perp: abs_v * abs_v * d_phase * d_phase,
    }
}

/// Angle `varphi` between the Bloch vector and the SLD direction, from
/// `tan varphi = |v| (1 - |v|^2) dphi/dT / (d|v|/dT)`.
pub fn sld_angle(abs_v: f64, d_abs: f64, d_phase: f64) -> Result<f64> {
    let y = abs_v * (1.0 - abs_v * abs_v) * d_phase;
    if y.abs() < 1e-14 && d_abs.abs() < 1e-14 {
        return Err(Error::UndefinedAngle);
    }
    Ok(y.atan2(d_abs))
}

/// Same with `(1 - |v|)^2` in place of `1 - |v|^2`. Kept only to show that
/// it misses the optimum.
pub fn sld_angle_squared_gap(abs_v: f64, d_abs: f64, d_phase: f64) -> Result<f64> {
    let y = abs_v * (1.0 - abs_v).powi(2) * d_phase;
    if y.abs() < 1e-14 && d_abs.abs() < 1e-14 {
        return Err(Error::UndefinedAngle);
    }
    Ok(y.atan2(d_abs))
}

/// `dv/dT` from polar derivatives.
pub fn complex_derivative(abs_v: f64, phase: f64, d_abs: f64, d_phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase) * Complex64::new(d_abs, abs_v * d_phase)
}

/// Fisher information of the projective measurement of
/// `cos(theta) sigma_x + sin(theta) sigma_y`.
pub fn fisher_of_equatorial_measurement(v: Complex64, dv: Complex64, theta: f64) -> Result<f64> {
    if v.norm() > 1.0 + 1e-12 {
        return Err(Error::InvalidProbability(v.norm()));
    }
    let (s, c) = theta.sin_cos();
    let x = c * v.re + s * v.im;
    let dx = c * dv.re + s * dv.im;
    let gap = 1.0 - x * x;
    if gap < PURITY_FLOOR {
        return Err(Error::DegenerateOutcome(gap));
    }
    Ok(dx * dx / gap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsnrOptimum {
    pub grid_t_max: f64,
    pub grid_q_max: f64,
    pub t_max: f64,
    pub q_max: f64,
}

/// Grid argmax of `Q(t)` refined by a parabola through its neighbours.
pub fn maximize_qsnr(times: &[f64], qsnr: &[f64]) -> Result<QsnrOptimum> {
    if times.len() != qsnr.len() || times.len() < 3 {
        return Err(Error::DimensionMismatch("QSNR needs at least three grid points".into()));
    }
    let (i, &q) = qsnr
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let last = times.len() - 1;
    if i == last {
        return Err(Error::ExtendGrid(times[last]));
    }
    let mut opt = QsnrOptimum {
        grid_t_max: times[i],
        grid_q_max: q,
        t_max: times[i],
        q_max: q,
    };
    if i == 0 {
        return Ok(opt);
    }
    let (x0, x1, x2) = (times[i - 1], times[i], times[i + 1]);
    let (y0, y1, y2) = (qsnr[i - 1], qsnr[i], qsnr[i + 1]);
    // Newton form of the interpolating parabola.
    let d01 = (y1 - y0) / (x1 - x0);
    let d12 = (y2 - y1) / (x2 - x1);
    let a = (d12 - d01) / (x2 - x0);
    if a < 0.0 {
        let t = 0.5 * (x0 + x1) - d01 / (2.0 * a);
        let t = t.clamp(x0, x2);
        opt.t_max = t;
        opt.q_max = y0 + d01 * (t - x0) + a * (t - x0) * (t - x1);
    }
    Ok(opt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetrologyResult {
    pub temperature: f64,
    pub kfa: f64,
    pub channel: ChannelKind,
    pub times: Vec<f64>,
    pub abs_v: Vec<f64>,
    pub phase: Vec<f64>,
    pub d_abs_dt: Vec<f64>,
    pub d_phase_dt: Vec<f64>,
    pub f_parallel: Vec<Option<f64>>,
    pub f_perp: Vec<f64>,
    pub f_q: Vec<Option<f64>>,
    pub qsnr: Vec<f64>,
    pub sld_angle: Vec<Option<f64>>,
    pub optimum: Option<QsnrOptimum>,
}

impl MetrologyResult {
    pub fn from_derivatives(trace: &DecoherenceTrace, d: &Derivatives) -> Self {
        let temperature = trace.regime.temperature;
        let n = trace.len();
        let mut r = MetrologyResult {
            temperature,
            kfa: trace.regime.kfa,
            channel: trace.regime.channel,
            times: trace.times.clone(),
            abs_v: trace.magnitude.clone(),
            phase: trace.phase.clone(),
            d_abs_dt: d.d_abs.clone(),
            d_phase_dt: d.d_phase.clone(),
            f_parallel: Vec::with_capacity(n),
            f_perp: Vec::with_capacity(n),
            f_q: Vec::with_capacity(n),
            qsnr: Vec::with_capacity(n),
            sld_angle: Vec::with_capacity(n),
            optimum: None,
        };
        for i in 0..n {
            let q = qfi(trace.magnitude[i], d.d_abs[i], d.d_phase[i]);
            r.f_parallel.push(q.parallel);
            r.f_perp.push(q.perp);
            r.f_q.push(q.total());
            // Q(0) = 0; elsewhere a missing F_par means |v| is within 1e-12
            // of one and only the phase part is usable.
            let qsnr = if trace.times[i] == 0.0 {
                0.0
            } else {
                temperature * q.total().unwrap_or(q.perp).sqrt()
            };
            r.qsnr.push(qsnr);
            r.sld_angle.push(sld_angle(trace.magnitude[i], d.d_abs[i], d.d_phase[i]).ok());
        }
        r
    }

    /// Fills in the optimum; fails with `ExtendGrid` if `Q` is still rising.
    pub fn with_optimum(mut self) -> Result<Self> {
        self.optimum = Some(maximize_qsnr(&self.times, &self.qsnr)?);
        Ok(self)
    }

    pub fn summary(&self) -> Option<MetrologySummary> {
        self.optimum.map(|o| MetrologySummary {
            temperature: self.temperature,
            kfa: self.kfa,
            t_max: o.t_max,
            q_max: o.q_max,
            channel: self.channel.name().to_string(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t_over_tauF,abs_v,phase,F_par,F_perp,F_Q,QSNR")?;
        let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
        for i in 0..self.times.len() {
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                fmt12(self.times[i]),
                fmt12(self.abs_v[i]),
                fmt12(self.phase[i]),
                opt(self.f_parallel[i]),
                fmt12(self.f_perp[i]),
                opt(self.f_q[i]),
                fmt12(self.qsnr[i])
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetrologySummary {
    #[serde(rename = "T")]
    pub temperature: f64,
    #[serde(rename = "kFa")]
    pub kfa: f64,
    pub t_max: f64,
    #[serde(rename = "Q_max")]
    pub q_max: f64,
    pub channel: String,
}

/// Full pipeline for one sweep point: traces at `T` and `T(1 +/- 1e-2)`,
/// derivatives, QFI and the optimum.
pub fn analyze(channel: &dyn Channel, temperature: f64, times: &[f64]) -> Result<MetrologyResult> {
    let (trace, d) = temperature_derivatives(channel, temperature, times, DELTA_T_REL)?;
    MetrologyResult::from_derivatives(&trace, &d).with_optimum()
}
