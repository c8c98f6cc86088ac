//! A common face for the two ways of producing `v(t)`: the exact determinant
//! engine and the weak-coupling closed form.

use crate::basis::{self, BasisSet, CouplingSpec, Geometry, ThermalState};
use crate::error::{Error, Result};
use crate::levitov::{self, ChannelKind, DecoherenceTrace, LevitovKernel};
use crate::weakcoupling::{self, WeakCouplingModel};
use num_complex::Complex64;

pub trait Channel: Sync {
    fn kind(&self) -> ChannelKind;

    fn kfa(&self) -> f64;

    /// Traces at several temperatures on one grid. Implementations may share
    /// work between temperatures.
    fn traces(&self, temperatures: &[f64], times: &[f64]) -> Result<Vec<DecoherenceTrace>>;

    fn trace(&self, temperature: f64, times: &[f64]) -> Result<DecoherenceTrace> {
        Ok(self.traces(&[temperature], times)?.remove(0))
    }

    /// `v(t)` at a single point.
    fn value(&self, temperature: f64, t: f64) -> Result<Complex64>;
}

/// Determinant engine on a basis truncated once at a temperature ceiling, so
/// every temperature up to the ceiling reuses the same overlap matrix.
pub struct ExactChannel {
    pub basis: BasisSet,
    pub temperature_ceiling: f64,
}

impl ExactChannel {
    pub fn new(geometry: Geometry, kfa: f64, temperature_ceiling: f64) -> Result<Self> {
        let coupling = CouplingSpec::new(kfa)?;
        let basis = basis::prepare(geometry, coupling, temperature_ceiling, basis::EPSILON)?;
        Ok(ExactChannel {
            basis,
            temperature_ceiling,
        })
    }

    /// Wraps an already prepared basis, e.g. one loaded from a cache.
    pub fn from_basis(basis: BasisSet, temperature_ceiling: f64) -> Self {
        ExactChannel {
            basis,
            temperature_ceiling,
        }
    }

    fn thermal(&self, temperature: f64) -> Result<ThermalState> {
        // A hair of slack for T(1 + dT) rounding.
        if temperature > self.temperature_ceiling * (1.0 + 1e-9) {
            return Err(Error::InvalidInput(format!(
                "temperature {temperature} above the truncation ceiling {}",
                self.temperature_ceiling
            )));
        }
        basis::thermal_state(&self.basis, temperature)
    }
}

impl Channel for ExactChannel {
    fn kind(&self) -> ChannelKind {
        ChannelKind::Exact
    }

    fn kfa(&self) -> f64 {
        self.basis.coupling.kfa
    }

    fn traces(&self, temperatures: &[f64], times: &[f64]) -> Result<Vec<DecoherenceTrace>> {
        let thermals = temperatures.iter().map(|&t| self.thermal(t)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ThermalState> = thermals.iter().collect();
        levitov::decoherence_functions(&self.basis, &refs, times)
    }

    fn value(&self, temperature: f64, t: f64) -> Result<Complex64> {
        let thermal = self.thermal(temperature)?;
        let kernel = LevitovKernel::new(&self.basis)?;
        Ok(kernel.log_dets(t, &[&thermal.occupations])[0].value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakChannel {
    pub kfa: f64,
    pub cutoff: f64,
    pub include_phi: bool,
}

impl WeakChannel {
    pub fn new(kfa: f64) -> Result<Self> {
        if !(kfa < 0.0) {
            return Err(Error::InvalidCoupling(kfa));
        }
        Ok(WeakChannel {
            kfa,
            cutoff: 1.0,
            include_phi: false,
        })
    }

    pub fn model(&self, temperature: f64) -> Result<WeakCouplingModel> {
        let mut m = WeakCouplingModel::new(self.kfa, temperature)?.with_cutoff(self.cutoff);
        m.include_phi = self.include_phi;
        Ok(m)
    }
}

impl Channel for WeakChannel {
    fn kind(&self) -> ChannelKind {
        ChannelKind::Weak
    }

    fn kfa(&self) -> f64 {
        self.kfa
    }

    fn traces(&self, temperatures: &[f64], times: &[f64]) -> Result<Vec<DecoherenceTrace>> {
        temperatures
            .iter()
            .map(|&t| weakcoupling::approx_decoherence(times, &self.model(t)?))
            .collect()
    }

    fn value(&self, temperature: f64, t: f64) -> Result<Complex64> {
        Ok(weakcoupling::approx_value(t, &self.model(temperature)?))
    }
}

/// `v(t_read, T)` tabulated on a uniform temperature grid and interpolated
/// with Catmull-Rom cubics, so that likelihoods are smooth in `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureTable {
    pub readout_time: f64,
    pub temperatures: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl TemperatureTable {
    pub fn build(channel: &dyn Channel, readout_time: f64, t_lo: f64, t_hi: f64, points: usize) -> Result<Self> {
        if !(t_lo > 0.0 && t_hi > t_lo) || points < 4 {
            return Err(Error::InvalidInput(format!(
                "temperature table [{t_lo}, {t_hi}] with {points} points"
            )));
        }
        let temperatures: Vec<f64> = (0..points)
            .map(|i| t_lo + (t_hi - t_lo) * i as f64 / (points - 1) as f64)
            .collect();
        let values = if channel.kind() == ChannelKind::Exact {
            // One pass through the kernel at a two-point grid per temperature
            // would redo the GEMMs; the batched trace call shares them.
            let traces = channel.traces(&temperatures, &[0.0, readout_time])?;
            traces.iter().map(|tr| tr.values[1]).collect()
        } else {
            temperatures
                .iter()
                .map(|&t| channel.value(t, readout_time))
                .collect::<Result<Vec<_>>>()?
        };
        Ok(TemperatureTable {
            readout_time,
            temperatures,
            values,
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.temperatures[0], *self.temperatures.last().unwrap())
    }

    pub fn value(&self, temperature: f64) -> Complex64 {
        let n = self.temperatures.len();
        let (lo, hi) = self.range();
        let h = (hi - lo) / (n - 1) as f64;
        let s = ((temperature - lo) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let u = s - i as f64;
        let p = |k: isize| self.values[k.clamp(0, n as isize - 1) as usize];
        let (p0, p1, p2, p3) = (p(i as isize - 1), p(i as isize), p(i as isize + 1), p(i as isize + 2));
        let u2 = u * u;
        let u3 = u2 * u;
        (p1 * 2.0 + (p2 - p0) * u + (p0 * 2.0 - p1 * 5.0 + p2 * 4.0 - p3) * u2 + (p1 * 3.0 - p0 - p2 * 3.0 + p3) * u3) * 0.5
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weak_channel_matches_direct_model() {
        let ch = WeakChannel::new(-0.2).unwrap();
        let v = ch.value(0.1, 40.0).unwrap();
        let tr = ch.trace(0.1, &[0.0, 20.0, 40.0]).unwrap();
        assert!((tr.values[2] - v).norm() < 1e-14);
        assert_eq!(ch.kind(), ChannelKind::Weak);
    }

    #[test]
    fn exact_channel_point_matches_trace() {
        let ch = ExactChannel::new(Geometry::box_3d(40), -0.5, 0.2).unwrap();
        let tr = ch.trace(0.15, &[0.0, 5.0, 10.0]).unwrap();
        let v = ch.value(0.15, 10.0).unwrap();
        assert!((tr.values[2] - v).norm() < 1e-12);
        assert!(ch.value(0.3, 1.0).is_err());
    }

    #[test]
    fn table_reproduces_smooth_function() {
        let ch = WeakChannel::new(-0.3).unwrap();
        let table = TemperatureTable::build(&ch, 60.0, 0.05, 0.15, 41).unwrap();
        for &t in &[0.05, 0.0731, 0.1, 0.1444, 0.15] {
            let exact = ch.value(t, 60.0).unwrap();
            assert!((table.value(t) - exact).norm() < 1e-6, "T = {t}");
        }
    }
}
