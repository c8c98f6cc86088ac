//! Exact decoherence function as a single-particle determinant.
//!
//! With `rho` the grand-canonical state of the unperturbed gas,
//! `v(t) = Tr[exp(i H1 t) exp(-i H0 t) rho] = det(1 - n + n exp(-i h0 t) exp(i h1 t))`,
//! where `n` holds the occupations in the unperturbed eigenbasis. With this
//! convention an attractive impurity (negative energy shift `w`) gives
//! `v ~ exp(i w t)`, matching the weak-coupling channel.

use crate::basis::{BasisSet, GeometryKind, ThermalState};
use crate::error::{Error, Result};
use crate::numerics::lu::{log_det_split, LogDet};
use nalgebra::DMatrix;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

/// Which engine produced a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelKind {
    Exact,
    Weak,
}

impl ChannelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ChannelKind::Exact => "exact",
            ChannelKind::Weak => "weak",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub temperature: f64,
    pub kfa: f64,
    pub geometry: Option<crate::basis::Geometry>,
    pub channel: ChannelKind,
}

/// `v(t)` on a time grid, with the phase unwrapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceTrace {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
    pub magnitude: Vec<f64>,
    /// `ln|v|`, finite even where `|v|` underflows.
    pub log_magnitude: Vec<f64>,
    pub phase: Vec<f64>,
    pub regime: Regime,
}

/// Unwraps raw phases in `(-pi, pi]` by continuing along the linear
/// extrapolation of the two previous points.
pub fn unwrap_phase(times: &[f64], raw: &[f64]) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(raw.len());
    for (i, &p) in raw.iter().enumerate() {
        if i == 0 {
            out.push(p);
            continue;
        }
        let predict = if i >= 2 {
            let slope = (out[i - 1] - out[i - 2]) / (times[i - 1] - times[i - 2]);
            out[i - 1] + slope * (times[i] - times[i - 1])
        } else {
            out[i - 1]
        };
        let k = ((predict - p) / (2.0 * PI)).round();
        let phi = p + 2.0 * PI * k;
        let jump = phi - out[i - 1];
        if jump.abs() >= PI {
            return Err(Error::GridTooCoarse {
                t0: times[i - 1],
                t1: times[i],
                jump,
            });
        }
        out.push(phi);
    }
    Ok(out)
}

impl DecoherenceTrace {
    /// Builds a trace from per-point `(ln|v|, arg v)` pairs.
    pub fn from_log_values(times: Vec<f64>, logs: &[LogDet], regime: Regime) -> Result<Self> {
        check_grid(&times)?;
        if logs.len() != times.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} times but {} values",
                times.len(),
                logs.len()
            )));
        }
        let raw: Vec<f64> = logs.iter().map(|l| l.phase).collect();
        let phase = unwrap_phase(&times, &raw)?;
        Ok(DecoherenceTrace {
            values: logs.iter().map(LogDet::value).collect(),
            magnitude: logs.iter().map(|l| l.log_abs.exp()).collect(),
            log_magnitude: logs.iter().map(|l| l.log_abs).collect(),
            times,
            phase,
            regime,
        })
    }

    pub fn from_values(times: Vec<f64>, values: &[Complex64], regime: Regime) -> Result<Self> {
        let logs: Vec<LogDet> = values
            .iter()
            .map(|v| LogDet {
                log_abs: v.norm().ln(),
                phase: v.arg(),
            })
            .collect();
        let mut trace = Self::from_log_values(times, &logs, regime)?;
        trace.values = values.to_vec();
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t_over_tauF,re_v,im_v,abs_v,phase")?;
        for i in 0..self.len() {
            writeln!(
                f,
                "{},{},{},{},{}",
                fmt12(self.times[i]),
                fmt12(self.values[i].re),
                fmt12(self.values[i].im),
                fmt12(self.magnitude[i]),
                fmt12(self.phase[i])
            )?;
        }
        Ok(())
    }
}

/// Fixed 12-significant-digit formatting used by every CSV export.
pub fn fmt12(x: f64) -> String {
    format!("{x:.11e}")
}

/// Grid must start at 0 and increase strictly.
pub fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidInput("empty time grid".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::InvalidInput(format!("time grid starts at {} instead of 0", times[0])));
    }
    if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidInput(format!(
            "time grid not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Uniform grid `0, step, 2 step, ...` up to and including `stop`.
pub fn uniform_grid(stop: f64, step: f64) -> Vec<f64> {
    let n = (stop / step + 1e-9).floor() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

fn check_shapes(basis: &BasisSet, occupations: &[f64]) -> Result<()> {
    if !basis.has_overlap() {
        return Err(Error::DimensionMismatch("overlap matrix not built".into()));
    }
    if basis.overlap_rows != occupations.len()
        || basis.unperturbed_energies.len() != basis.overlap_rows
        || basis.perturbed_energies.len() != basis.overlap_cols
    {
        return Err(Error::DimensionMismatch(format!(
            "U is {}x{}, with {} occupations, {} unperturbed and {} perturbed energies",
            basis.overlap_rows,
            basis.overlap_cols,
            occupations.len(),
            basis.unperturbed_energies.len(),
            basis.perturbed_energies.len()
        )));
    }
    Ok(())
}

/// The matrix `1 - n + n exp(-i h0 t) exp(i h1 t)` in the unperturbed basis.
pub fn decoherence_matrix(basis: &BasisSet, thermal: &ThermalState, t: f64) -> Result<DMatrix<Complex64>> {
    check_shapes(basis, &thermal.occupations)?;
    let n = basis.overlap_rows;
    let cols = basis.overlap_cols;
    if t == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let phases: Vec<Complex64> = basis
        .perturbed_energies
        .iter()
        .map(|&e| Complex64::from_polar(1.0, e * t))
        .collect();
    let mut a = DMatrix::zeros(n, n);
    for m in 0..n {
        let f = thermal.occupations[m];
        let rot = Complex64::from_polar(f, -basis.unperturbed_energies[m] * t);
        for k in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..cols {
                s += phases[j] * (basis.u(m, j) * basis.u(k, j));
            }
            a[(m, k)] = rot * s;
        }
        a[(m, m)] += 1.0 - f;
    }
    Ok(a)
}

/// Reusable evaluator of `ln det A(t)` for one basis and any number of
/// occupation vectors. The `t`-dependent products do not depend on the
/// temperature, so several temperatures share one pair of GEMMs.
pub struct LevitovKernel<'a> {
    u: ArrayView2<'a, f64>,
    e0: &'a [f64],
    e1: &'a [f64],
}

impl<'a> LevitovKernel<'a> {
    pub fn new(basis: &'a BasisSet) -> Result<Self> {
        if !basis.has_overlap() {
            return Err(Error::DimensionMismatch("overlap matrix not built".into()));
        }
        Ok(LevitovKernel {
            u: basis.overlap_view(),
            e0: &basis.unperturbed_energies,
            e1: &basis.perturbed_energies,
        })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// `ln det A(t)` for each occupation vector.
    pub fn log_dets(&self, t: f64, occupations: &[&[f64]]) -> Vec<LogDet> {
        let n = self.u.nrows();
        let cols = self.u.ncols();
        if t == 0.0 {
            return vec![LogDet { log_abs: 0.0, phase: 0.0 }; occupations.len()];
        }
        let mut uc = Array2::<f64>::zeros((n, cols));
        let mut us = Array2::<f64>::zeros((n, cols));
        let (cos1, sin1): (Vec<f64>, Vec<f64>) = self.e1.iter().map(|&e| {
            let (s, c) = (e * t).sin_cos();
            (c, s)
        }).unzip();
        for m in 0..n {
            for j in 0..cols {
                let x = self.u[(m, j)];
                uc[(m, j)] = x * cos1[j];
                us[(m, j)] = x * sin1[j];
            }
        }
        let mut c = Array2::<f64>::zeros((n, n));
        let mut s = Array2::<f64>::zeros((n, n));
        general_mat_mul(1.0, &uc, &self.u.t(), 0.0, &mut c);
        general_mat_mul(1.0, &us, &self.u.t(), 0.0, &mut s);
        let rot: Vec<(f64, f64)> = self.e0.iter().map(|&e| (e * t).sin_cos()).collect();
        let c = c.as_slice().expect("standard layout");
        let s = s.as_slice().expect("standard layout");
        let mut re = vec![0.0; n * n];
        let mut im = vec![0.0; n * n];
        occupations
            .iter()
            .map(|occ| {
                for m in 0..n {
                    let f = occ[m];
                    let (sn, cs) = rot[m];
                    let row = m * n;
                    for k in 0..n {
                        let (cc, ss) = (c[row + k], s[row + k]);
                        re[row + k] = f * (cs * cc + sn * ss);
                        im[row + k] = f * (cs * ss - sn * cc);
                    }
                    re[row + m] += 1.0 - f;
                }
                log_det_split(&mut re, &mut im, n)
            })
            .collect()
    }
}

fn check_recurrence(basis: &BasisSet, times: &[f64]) -> Result<()> {
    if basis.geometry.kind == GeometryKind::Harmonic1dEven {
        let w0 = basis.geometry.size_parameter;
        if let Some(&t) = times.iter().find(|&&t| w0 * t >= PI) {
            return Err(Error::RecurrenceExcluded(w0 * t));
        }
    }
    Ok(())
}

fn regime(basis: &BasisSet, thermal: &ThermalState) -> Regime {
    Regime {
        temperature: thermal.temperature,
        kfa: basis.coupling.kfa,
        geometry: Some(basis.geometry),
        channel: ChannelKind::Exact,
    }
}

/// `v(t)` on a grid, evaluated in parallel over time points.
pub fn decoherence_function(basis: &BasisSet, thermal: &ThermalState, times: &[f64]) -> Result<DecoherenceTrace> {
    let mut traces = decoherence_functions(basis, &[thermal], times)?;
    Ok(traces.remove(0))
}

/// Several temperatures on the same basis and grid at once.
pub fn decoherence_functions(
    basis: &BasisSet,
    thermals: &[&ThermalState],
    times: &[f64],
) -> Result<Vec<DecoherenceTrace>> {
    check_grid(times)?;
    check_recurrence(basis, times)?;
    for th in thermals {
        check_shapes(basis, &th.occupations)?;
    }
    let kernel = LevitovKernel::new(basis)?;
    let occs: Vec<&[f64]> = thermals.iter().map(|th| th.occupations.as_slice()).collect();
    let per_time: Vec<Vec<LogDet>> = times.par_iter().map(|&t| kernel.log_dets(t, &occs)).collect();
    thermals
        .iter()
        .enumerate()
        .map(|(i, th)| {
            let logs: Vec<LogDet> = per_time.iter().map(|row| row[i]).collect();
            DecoherenceTrace::from_log_values(times.to_vec(), &logs, regime(basis, th))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Fock-space oracle

/// Largest mode count accepted by the Fock-space oracle.
pub const FOCK_MODE_CAP: usize = 12;

/// `Tr[exp(i H1 t) exp(-i H0 t) rho]` by brute force in the `2^M` Fock space,
/// with `rho` grand canonical at the thermal state's `T` and `mu`.
pub fn many_body_oracle(basis: &BasisSet, thermal: &ThermalState, t: f64) -> Result<Complex64> {
    let m = basis.overlap_rows;
    if m > FOCK_MODE_CAP {
        return Err(Error::FockSpaceTooLarge {
            modes: m,
            cap: FOCK_MODE_CAP,
        });
    }
    if basis.overlap_cols != m {
        return Err(Error::DimensionMismatch("the oracle needs a square overlap".into()));
    }
    let e0 = &basis.unperturbed_energies;
    // h1 in the unperturbed basis.
    let mut h1 = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        for k in 0..m {
            h1[(j, k)] = (0..m)
                .map(|n| basis.u(j, n) * basis.perturbed_energies[n] * basis.u(k, n))
                .sum();
        }
    }
    let beta = 1.0 / thermal.temperature;
    let mu = thermal.chemical_potential;
    let dim = 1usize << m;
    let energy0 = |s: usize| -> f64 { (0..m).filter(|&j| s >> j & 1 == 1).map(|j| e0[j]).sum() };
    // Log-weights, shifted to avoid overflow.
    let log_w: Vec<f64> = (0..dim)
        .map(|s| -beta * (energy0(s) - mu * s.count_ones() as f64))
        .collect();
    let shift = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = log_w.iter().map(|l| (l - shift).exp()).sum();

    let mut total = Complex64::new(0.0, 0.0);
    for particles in 0..=m {
        let states: Vec<usize> = (0..dim).filter(|s| s.count_ones() as usize == particles).collect();
        let index = |s: usize| states.binary_search(&s).expect("state in sector");
        let d = states.len();
        let mut h = DMatrix::<f64>::zeros(d, d);
        for (col, &s) in states.iter().enumerate() {
            for k in 0..m {
                if s >> k & 1 == 0 {
                    continue;
                }
                let sign_k = if (s & ((1 << k) - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                let r = s & !(1 << k);
                for j in 0..m {
                    if r >> j & 1 == 1 {
                        continue;
                    }
                    let sign_j = if (r & ((1 << j) - 1)).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    let target = r | (1 << j);
                    h[(index(target), col)] += sign_j * sign_k * h1[(j, k)];
                }
            }
        }
        let eig = h.symmetric_eigen();
        for (row, &s) in states.iter().enumerate() {
            let rho = (log_w[s] - shift).exp() / z;
            if rho == 0.0 {
                continue;
            }
            let diag: Complex64 = (0..d)
                .map(|l| Complex64::from_polar(eig.eigenvectors[(row, l)].powi(2), eig.eigenvalues[l] * t))
                .sum();
            total += rho * Complex64::from_polar(1.0, -energy0(s) * t) * diag;
        }
    }
    Ok(total)
}

/// A small basis with arbitrary spectra and a real orthogonal overlap, for
/// the oracle comparisons.
pub fn toy_basis(e0: Vec<f64>, e1: Vec<f64>, overlap: DMatrix<f64>) -> Result<BasisSet> {
    let (rows, cols) = overlap.shape();
    if e0.len() != rows || e1.len() != cols {
        return Err(Error::DimensionMismatch("toy spectra do not match the overlap".into()));
    }
    let mut u = Vec::with_capacity(rows * cols);
    for m in 0..rows {
        for n in 0..cols {
            u.push(overlap[(m, n)]);
        }
    }
    let shifts = e1.iter().zip(&e0).map(|(a, b)| a - b).collect();
    Ok(BasisSet {
        geometry: crate::basis::Geometry::box_3d(1),
        coupling: crate::basis::CouplingSpec { kfa: -1.0 },
        unperturbed_energies: e0,
        perturbed_energies: e1,
        scattering_phases: vec![0.0; cols],
        energy_shifts: shifts,
        overlap: u,
        overlap_rows: rows,
        overlap_cols: cols,
        truncation: None,
    })
}

/// Occupations at fixed `(T, mu)`, bypassing the particle-number solve.
pub fn thermal_at(basis: &BasisSet, temperature: f64, mu: f64) -> ThermalState {
    ThermalState {
        temperature,
        chemical_potential: mu,
        occupations: basis
            .unperturbed_energies
            .iter()
            .map(|&e| crate::numerics::special::fermi(e, mu, temperature))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Absorption spectrum

/// Default spectral damping.
pub const DEFAULT_ETA: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    pub eta: f64,
}

impl Spectrum {
    /// Trapezoid integral over the stored frequency grid.
    pub fn integral(&self) -> f64 {
        self.frequencies
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(w, a)| 0.5 * (w[1] - w[0]) * (a[0] + a[1]))
            .sum()
    }

    /// Location and value of the maximum.
    pub fn peak(&self) -> (f64, f64) {
        let (i, &a) = self
            .values
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty spectrum");
        (self.frequencies[i], a)
    }

    /// Full width at half maximum of the main peak, linearly interpolated.
    pub fn peak_width(&self) -> f64 {
        let (i, _) = self
            .values
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty spectrum");
        let half = 0.5 * self.values[i];
        let w = &self.frequencies;
        let a = &self.values;
        let mut left = w[0];
        for j in (0..i).rev() {
            if a[j] < half {
                left = w[j] + (half - a[j]) / (a[j + 1] - a[j]) * (w[j + 1] - w[j]);
                break;
            }
        }
        let mut right = w[w.len() - 1];
        for j in i + 1..a.len() {
            if a[j] < half {
                right = w[j - 1] + (a[j - 1] - half) / (a[j - 1] - a[j]) * (w[j] - w[j - 1]);
                break;
            }
        }
        right - left
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "omega_tauF,A")?;
        for (w, a) in self.frequencies.iter().zip(&self.values) {
            writeln!(f, "{},{}", fmt12(*w), fmt12(*a))?;
        }
        Ok(())
    }
}

/// Frequencies spanning one full period `[-pi/dt, pi/dt]` of a uniform trace,
/// fine enough that the discrete Fourier sum has no aliasing.
pub fn nyquist_grid(trace: &DecoherenceTrace) -> Vec<f64> {
    let dt = trace.times[1] - trace.times[0];
    let points = 2 * trace.len();
    let span = 2.0 * PI / dt;
    (0..=points).map(|k| -PI / dt + span * k as f64 / points as f64).collect()
}

/// `A(w) = Re int_0^inf dt exp(-i w t - eta t) v(t) / pi` by the trapezoid
/// rule on the stored grid.
pub fn absorption_spectrum(trace: &DecoherenceTrace, eta: f64, omegas: &[f64]) -> Result<Spectrum> {
    let last = trace.len() - 1;
    let tail = (trace.log_magnitude[last] - eta * trace.times[last]).exp();
    if tail >= 1e-6 {
        return Err(Error::WindowTooWeak { tail });
    }
    let weights: Vec<f64> = (0..=last)
        .map(|i| {
            let left = if i > 0 { trace.times[i] - trace.times[i - 1] } else { 0.0 };
            let right = if i < last { trace.times[i + 1] - trace.times[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let damped: Vec<Complex64> = (0..=last)
        .map(|i| {
            let t = trace.times[i];
            Complex64::from_polar((trace.log_magnitude[i] - eta * t).exp(), trace.phase[i]) * weights[i]
        })
        .collect();
    let values = omegas
        .par_iter()
        .map(|&w| {
            let s: Complex64 = trace
                .times
                .iter()
                .zip(&damped)
                .map(|(&t, g)| Complex64::from_polar(1.0, -w * t) * g)
                .sum();
            s.re / PI
        })
        .collect();
    Ok(Spectrum {
        frequencies: omegas.to_vec(),
        values,
        eta,
    })
}

// ---------------------------------------------------------------------------
// Thermodynamic limit

/// Shell-count ladder used when converging to the thermodynamic limit.
pub const SHELL_LADDER_START: usize = 100;
pub const SHELL_LADDER_DOUBLINGS: usize = 6;

#[derive(Debug, Clone)]
pub struct ConvergedTrace {
    pub trace: DecoherenceTrace,
    pub shell_count: usize,
    pub max_change: f64,
}

/// Doubles the shell count from 100 until successive traces differ by less
/// than `tol` everywhere on the grid.
pub fn converge_thermodynamic(
    template: crate::basis::Geometry,
    temperature: f64,
    coupling: crate::basis::CouplingSpec,
    times: &[f64],
    tol: f64,
    epsilon: f64,
) -> Result<ConvergedTrace> {
    let mut previous: Option<DecoherenceTrace> = None;
    let mut shells = SHELL_LADDER_START;
    let mut last_delta = f64::INFINITY;
    for _ in 0..=SHELL_LADDER_DOUBLINGS {
        let geometry = template.with_shell_count(shells);
        let basis = crate::basis::prepare(geometry, coupling, temperature, epsilon)?;
        let thermal = crate::basis::thermal_state(&basis, temperature)?;
        let trace = decoherence_function(&basis, &thermal, times)?;
        if let Some(prev) = &previous {
            last_delta = prev
                .values
                .iter()
                .zip(&trace.values)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if last_delta < tol {
                return Ok(ConvergedTrace {
                    trace,
                    shell_count: shells,
                    max_change: last_delta,
                });
            }
        }
        previous = Some(trace);
        shells *= 2;
    }
    Err(Error::NonConvergence {
        shell_count: shells / 2,
        delta: last_delta,
    })
}
