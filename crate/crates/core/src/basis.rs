//! Single-particle bases with and without the impurity.
//!
//! Three geometries are supported: the s-wave sector of a 3D hard-wall
//! sphere, the even sector of a 1D hard-wall box and the even sector of a
//! 1D harmonic trap. Everything is in Fermi units (`E_F = hbar = k_B =
//! k_F = 1`, so that `E = k^2`).
//!
//! Indices are zero based: entry `i` of the 3D arrays is the state with
//! `k_n R = n pi`, `n = i + 1`.

use crate::error::{Error, Result};
use crate::numerics::{quad, roots, special::fermi};
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Default truncation tolerance.
pub const EPSILON: f64 = 1e-4;
/// Minimum size of the auxiliary spectrum used for the particle-number sum.
const AUX_MIN_STATES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryKind {
    Box3dSWave,
    Box1dEven,
    Harmonic1dEven,
}

/// Geometry of the host gas. The size parameter is tied to the shell count so
/// that `E_F = 1` for every shell count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub kind: GeometryKind,
    /// `k_F R`, `k_F L` or `hbar omega_0 / E_F`.
    pub size_parameter: f64,
    pub shell_count: usize,
}

impl Geometry {
    pub fn box_3d(shell_count: usize) -> Self {
        Geometry {
            kind: GeometryKind::Box3dSWave,
            size_parameter: PI * shell_count as f64,
            shell_count,
        }
    }

    pub fn box_1d(shell_count: usize) -> Self {
        Geometry {
            kind: GeometryKind::Box1dEven,
            size_parameter: (2.0 * shell_count as f64 - 1.0) * PI,
            shell_count,
        }
    }

    pub fn harmonic_1d(shell_count: usize) -> Self {
        Geometry {
            kind: GeometryKind::Harmonic1dEven,
            size_parameter: 1.0 / (2.0 * shell_count as f64 - 1.5),
            shell_count,
        }
    }

    /// Harmonic trap closest to the requested frequency. The shell count is
    /// rounded so that `E_F = omega_0 (2 N_e - 3/2)` holds exactly.
    pub fn harmonic_from_omega(omega0: f64) -> Result<Self> {
        if !(omega0 > 0.0 && omega0 < 1.0) {
            return Err(Error::InvalidInput(format!(
                "trap frequency {omega0} must lie in (0, E_F)"
            )));
        }
        let n = ((1.0 / omega0 + 1.5) / 2.0).round().max(1.0) as usize;
        Ok(Self::harmonic_1d(n))
    }

    /// Same geometry kind at a different shell count (density held fixed).
    pub fn with_shell_count(&self, shell_count: usize) -> Self {
        match self.kind {
            GeometryKind::Box3dSWave => Self::box_3d(shell_count),
            GeometryKind::Box1dEven => Self::box_1d(shell_count),
            GeometryKind::Harmonic1dEven => Self::harmonic_1d(shell_count),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shell_count == 0 || !(self.size_parameter > 0.0) {
            return Err(Error::InvalidInput(format!(
                "geometry needs shell_count >= 1 and size > 0, got {} and {}",
                self.shell_count, self.size_parameter
            )));
        }
        let expect = self.with_shell_count(self.shell_count).size_parameter;
        if (expect - self.size_parameter).abs() > 1e-12 * expect {
            return Err(Error::InvalidInput(format!(
                "size parameter {} inconsistent with E_F = 1 at shell count {} (expected {expect})",
                self.size_parameter, self.shell_count
            )));
        }
        Ok(())
    }

    /// Unperturbed single-particle energy of state `i`.
    pub fn unperturbed_energy(&self, i: usize) -> f64 {
        let n = i as f64 + 1.0;
        match self.kind {
            GeometryKind::Box3dSWave => {
                let k = n * PI / self.size_parameter;
                k * k
            }
            GeometryKind::Box1dEven => {
                let k = (2.0 * n - 1.0) * PI / self.size_parameter;
                k * k
            }
            GeometryKind::Harmonic1dEven => self.size_parameter * (2.0 * i as f64 + 0.5),
        }
    }
}

/// Impurity-gas coupling `k_F a`. Only the attractive branch `a < 0` is
/// accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub kfa: f64,
}

impl CouplingSpec {
    pub fn new(kfa: f64) -> Result<Self> {
        if !(kfa < 0.0) || !kfa.is_finite() {
            return Err(Error::InvalidCoupling(kfa));
        }
        Ok(CouplingSpec { kfa })
    }

    /// 1D contact strength `lambda = -hbar^2/(m a) = -2/a`.
    pub fn contact_strength_1d(&self) -> f64 {
        -2.0 / self.kfa
    }

    /// 3D s-wave phase at the Fermi surface, `-arctan(k_F a)`.
    pub fn fermi_phase_3d(&self) -> f64 {
        -self.kfa.atan()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub epsilon: f64,
    /// Retained unperturbed states.
    pub n: usize,
    /// Retained perturbed states.
    pub n_prime: usize,
}

/// Unperturbed and perturbed spectra plus the overlap `U[m][n] = <psi_m|psi'_n>`
/// (real for every supported geometry, stored row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub geometry: Geometry,
    pub coupling: CouplingSpec,
    pub unperturbed_energies: Vec<f64>,
    pub perturbed_energies: Vec<f64>,
    pub scattering_phases: Vec<f64>,
    /// `E'_n - E_n`, kept separately because it can be far below the
    /// resolution of `E'_n` itself.
    pub energy_shifts: Vec<f64>,
    pub overlap: Vec<f64>,
    pub overlap_rows: usize,
    pub overlap_cols: usize,
    pub truncation: Option<Truncation>,
}

impl BasisSet {
    pub fn has_overlap(&self) -> bool {
        !self.overlap.is_empty()
    }

    pub fn overlap_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.overlap_rows, self.overlap_cols), &self.overlap)
            .expect("overlap shape is maintained on construction")
    }

    pub fn u(&self, m: usize, n: usize) -> f64 {
        self.overlap[m * self.overlap_cols + n]
    }

    pub fn row_norm(&self, m: usize, cols: usize) -> f64 {
        let row = &self.overlap[m * self.overlap_cols..m * self.overlap_cols + cols];
        row.iter().map(|x| x * x).sum()
    }

    /// Checks `sum_n U[m][n]^2 > 1 - epsilon` for every stored row.
    pub fn check_unitarity(&self, epsilon: f64) -> Result<()> {
        for m in 0..self.overlap_rows {
            let norm = self.row_norm(m, self.overlap_cols);
            if norm <= 1.0 - epsilon {
                return Err(Error::UnitarityViolation { row: m, norm });
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let basis: BasisSet = serde_json::from_str(&text)?;
        if basis.overlap.len() != basis.overlap_rows * basis.overlap_cols {
            return Err(Error::Format("overlap length does not match its shape".into()));
        }
        Ok(basis)
    }
}

/// Grand-canonical occupations of the unperturbed states of a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub temperature: f64,
    pub chemical_potential: f64,
    pub occupations: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Scattering sectors

fn phase_3d(n: usize, radius: f64, a: f64) -> Result<f64> {
    let np = n as f64 * PI;
    // h is increasing in delta on (0, pi/2): h(0) = a n pi / R < 0, h(pi/2) = 1.
    let h = |d: f64| d.sin() + a * (np - d) / radius * d.cos();
    roots::brent(h, 0.0, 0.5 * PI, 0.0, 300)
}

fn phase_1d(n: usize, length: f64, a: f64) -> Result<f64> {
    let base = (2.0 * n as f64 - 1.0) * PI;
    // h is decreasing on (-pi/2, 0): h(-pi/2) = -k'a > 0, h(0) = -1.
    let h = |d: f64| (base - 2.0 * d) / length * a * d.sin() - d.cos();
    roots::brent(h, -0.5 * PI, 0.0, 0.0, 300)
}

/// Solves the perturbed spectrum and phases for `n_max` states. For the
/// harmonic trap the overlap is produced at the same time.
pub fn solve_scattering_sector(
    geometry: Geometry,
    coupling: CouplingSpec,
    n_max: usize,
) -> Result<BasisSet> {
    geometry.validate()?;
    let coupling = CouplingSpec::new(coupling.kfa)?;
    if n_max < geometry.shell_count {
        return Err(Error::InvalidInput(format!(
            "n_max = {n_max} is below the shell count {}",
            geometry.shell_count
        )));
    }
    if geometry.kind == GeometryKind::Harmonic1dEven {
        return build_harmonic_sector(geometry.size_parameter, coupling, n_max);
    }
    let size = geometry.size_parameter;
    let a = coupling.kfa;
    let mut e0 = Vec::with_capacity(n_max);
    let mut e1 = Vec::with_capacity(n_max);
    let mut phases = Vec::with_capacity(n_max);
    let mut shifts = Vec::with_capacity(n_max);
    for i in 0..n_max {
        let n = i + 1;
        let (k, d, kp) = match geometry.kind {
            GeometryKind::Box3dSWave => {
                let d = phase_3d(n, size, a)?;
                (n as f64 * PI / size, d, (n as f64 * PI - d) / size)
            }
            _ => {
                let d = phase_1d(n, size, a)?;
                let base = (2.0 * n as f64 - 1.0) * PI;
                (base / size, d, (base - 2.0 * d) / size)
            }
        };
        e0.push(k * k);
        e1.push(kp * kp);
        phases.push(d);
        shifts.push((kp - k) * (kp + k));
    }
    Ok(BasisSet {
        geometry,
        coupling,
        unperturbed_energies: e0,
        perturbed_energies: e1,
        scattering_phases: phases,
        energy_shifts: shifts,
        overlap: Vec::new(),
        overlap_rows: 0,
        overlap_cols: 0,
        truncation: None,
    })
}

/// Fills the overlap matrix from the closed-form sinusoid integrals.
pub fn build_overlap_matrix(mut basis: BasisSet) -> Result<BasisSet> {
    if basis.geometry.kind == GeometryKind::Harmonic1dEven {
        if basis.has_overlap() {
            return Ok(basis);
        }
        return Err(Error::InvalidInput(
            "harmonic bases carry their overlap from build_harmonic_sector".into(),
        ));
    }
    let rows = basis.unperturbed_energies.len();
    let cols = basis.perturbed_energies.len();
    let size = basis.geometry.size_parameter;
    let mut u = vec![0.0; rows * cols];
    match basis.geometry.kind {
        GeometryKind::Box3dSWave => {
            for (n, &d) in basis.scattering_phases.iter().enumerate() {
                let kp = ((n + 1) as f64 * PI - d) / size;
                let amp = 1.0 / (1.0 + (2.0 * d).sin() / (2.0 * kp * size)).sqrt();
                let pre = 2.0 * amp * d.sin() / size;
                for m in 0..rows {
                    let km = (m + 1) as f64 * PI / size;
                    // k_m - k'_n written to avoid cancellation.
                    let diff = ((m as f64 - n as f64) * PI + d) / size;
                    u[m * cols + n] = pre * km / (diff * (km + kp));
                }
            }
        }
        GeometryKind::Box1dEven => {
            for (n, &d) in basis.scattering_phases.iter().enumerate() {
                let kp = ((2 * n + 1) as f64 * PI - 2.0 * d) / size;
                let amp = 1.0 / (1.0 - (2.0 * d).sin() / (kp * size)).sqrt();
                let pre = 4.0 * amp * d.sin() / size;
                for m in 0..rows {
                    let km = (2 * m + 1) as f64 * PI / size;
                    let diff = (2.0 * (m as f64 - n as f64) * PI + 2.0 * d) / size;
                    u[m * cols + n] = pre * kp / (diff * (km + kp));
                }
            }
        }
        GeometryKind::Harmonic1dEven => unreachable!(),
    }
    basis.overlap = u;
    basis.overlap_rows = rows;
    basis.overlap_cols = cols;
    Ok(basis)
}

/// Overlap entry by direct quadrature of the wavefunctions. Slow; used to
/// validate the closed form.
pub fn overlap_by_quadrature(basis: &BasisSet, m: usize, n: usize) -> f64 {
    let size = basis.geometry.size_parameter;
    let d = basis.scattering_phases[n];
    match basis.geometry.kind {
        GeometryKind::Box3dSWave => {
            let km = (m + 1) as f64 * PI / size;
            let kp = ((n + 1) as f64 * PI - d) / size;
            let norm = quad::integrate(|r| (kp * r + d).sin().powi(2), 0.0, size, 1e-15, 1e-14, 4000);
            let prod = quad::integrate(
                |r| (km * r).sin() * (kp * r + d).sin(),
                0.0,
                size,
                1e-16,
                1e-14,
                4000,
            );
            (2.0 / size).sqrt() * prod.value / norm.value.sqrt()
        }
        GeometryKind::Box1dEven => {
            let half = 0.5 * size;
            let km = (2 * m + 1) as f64 * PI / size;
            let kp = ((2 * n + 1) as f64 * PI - 2.0 * d) / size;
            let norm = quad::integrate(|x| (kp * x + d).cos().powi(2), 0.0, half, 1e-15, 1e-14, 4000);
            let prod = quad::integrate(
                |x| (km * x).cos() * (kp * x + d).cos(),
                0.0,
                half,
                1e-16,
                1e-14,
                4000,
            );
            // Both integrals run over half the symmetric box.
            (2.0 / size).sqrt() * 2.0 * prod.value / (2.0 * norm.value).sqrt()
        }
        GeometryKind::Harmonic1dEven => f64::NAN,
    }
}

// ---------------------------------------------------------------------------
// Harmonic trap

/// Squared even Hermite functions at the origin, `chi_{2m}(0)^2`.
fn hermite_origin_sq(omega0: f64, count: usize) -> Vec<f64> {
    let ell = (2.0 / omega0).sqrt();
    let mut c2 = Vec::with_capacity(count);
    let mut c = 1.0 / (PI.sqrt() * ell);
    for m in 0..count {
        if m > 0 {
            c *= (2 * m - 1) as f64 / (2 * m) as f64;
        }
        c2.push(c);
    }
    c2
}

/// Resolvent `sum_m c_m^2 / (E_m - E)` of the trap at the origin, split into
/// an explicit head `m < head` and a power series in `E` for the tail.
struct TrapResolvent {
    omega0: f64,
    c2: Vec<f64>,
    /// `S_k = sum_{m >= head} c_m^2 / E_m^(k+1)`.
    tail: Vec<f64>,
}

const TAIL_TERMS: usize = 48;

impl TrapResolvent {
    fn new(omega0: f64, head: usize) -> Self {
        let c2 = hermite_origin_sq(omega0, head);
        let far = (64 * head).max(200_000);
        let mut tail = vec![0.0; TAIL_TERMS];
        // Explicit part head..far, continuing the recurrence.
        let mut c = *c2.last().expect("head >= 1");
        for m in head..far {
            c *= (2 * m - 1) as f64 / (2 * m) as f64;
            let inv = 1.0 / (omega0 * (2.0 * m as f64 + 0.5));
            let mut p = c * inv;
            for s in tail.iter_mut() {
                *s += p;
                p *= inv;
                if p == 0.0 {
                    break;
                }
            }
        }
        // Remainder m >= far by Euler-Maclaurin with the large-m expansion of
        // Gamma(m + 1/2) / Gamma(m + 1).
        let c_far = c * (2 * far - 1) as f64 / (2 * far) as f64;
        let lead = c_far * (far as f64).sqrt() / ratio_series(far as f64);
        for (k, s) in tail.iter_mut().enumerate() {
            let g = |m: f64| {
                lead * ratio_series(m) / m.sqrt() / (omega0 * (2.0 * m + 0.5)).powi(k as i32 + 1)
            };
            let mf = far as f64;
            let integral = quad::integrate(
                |u: f64| {
                    if u == 0.0 {
                        0.0
                    } else {
                        g(mf / (u * u)) * 2.0 * mf / (u * u * u)
                    }
                },
                0.0,
                1.0,
                0.0,
                1e-13,
                200,
            );
            let dg = (g(mf + 1.0) - g(mf - 1.0)) / 2.0;
            *s += integral.value + 0.5 * g(mf) - dg / 12.0;
        }
        TrapResolvent { omega0, c2, tail }
    }

    fn head(&self) -> usize {
        self.c2.len()
    }

    fn tail_value(&self, e: f64) -> f64 {
        self.tail.iter().rev().fold(0.0, |acc, s| acc * e + s)
    }

    fn tail_derivative(&self, e: f64) -> f64 {
        self.tail
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (k, s)| acc * e + k as f64 * s)
    }

    /// `x (Delta - x) [1/lambda + G(E_n + x)]`, finite at both ends of the
    /// interval between consecutive levels.
    fn secular(&self, n: usize, x: f64, inv_lambda: f64) -> f64 {
        let w2 = 2.0 * self.omega0;
        let e = self.omega0 * (2.0 * n as f64 + 0.5) + x;
        let weight = x * (w2 - x);
        let mut sum = inv_lambda + self.tail_value(e);
        for (m, &c) in self.c2.iter().enumerate() {
            if m == n || m == n + 1 {
                continue;
            }
            sum += c / ((m as f64 - n as f64) * w2 - x);
        }
        weight * sum - self.c2[n] * (w2 - x) + self.c2[n + 1] * x
    }

    fn level_shift(&self, n: usize, inv_lambda: f64) -> Result<f64> {
        roots::brent(|x| self.secular(n, x, inv_lambda), 0.0, 2.0 * self.omega0, 0.0, 400)
    }

    /// `sum_m c_m^2 / (E' - E_m)^2` over all m.
    fn norm_sq(&self, n: usize, x: f64) -> f64 {
        let w2 = 2.0 * self.omega0;
        let e = self.omega0 * (2.0 * n as f64 + 0.5) + x;
        let head: f64 = self
            .c2
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                let d = x - (m as f64 - n as f64) * w2;
                c / (d * d)
            })
            .sum();
        head + self.tail_derivative(e)
    }
}

fn ratio_series(m: f64) -> f64 {
    let r = 1.0 / m;
    1.0 - r / 8.0 + r * r / 128.0 + 5.0 * r * r * r / 1024.0
}

/// Even sector of the delta-perturbed harmonic trap, diagonalised exactly
/// via the rank-one secular equation with the full infinite basis (the UV
/// tail is summed analytically).
pub fn build_harmonic_sector(omega0: f64, coupling: CouplingSpec, n_max: usize) -> Result<BasisSet> {
    let coupling = CouplingSpec::new(coupling.kfa)?;
    let n_shells = ((1.0 / omega0 + 1.5) / 2.0).round().max(1.0) as usize;
    let geometry = Geometry {
        kind: GeometryKind::Harmonic1dEven,
        size_parameter: omega0,
        shell_count: n_shells,
    };
    let lambda = coupling.contact_strength_1d();
    let inv_lambda = 1.0 / lambda;
    let head = (4 * (n_max + 1)).max(n_max + 256);
    let res = TrapResolvent::new(omega0, head);

    // Doubling the explicit head must not move the low levels.
    let check = TrapResolvent::new(omega0, 2 * head);
    let probe = n_max.min(4);
    for n in 0..probe {
        let a = res.level_shift(n, inv_lambda)?;
        let b = check.level_shift(n, inv_lambda)?;
        if (a - b).abs() > 1e-6 {
            return Err(Error::ConvergenceFailure { shift: (a - b).abs() });
        }
    }

    let mut e0 = Vec::with_capacity(n_max);
    let mut e1 = Vec::with_capacity(n_max);
    let mut phases = Vec::with_capacity(n_max);
    let mut shifts = Vec::with_capacity(n_max);
    let mut u = vec![0.0; n_max * n_max];
    for n in 0..n_max {
        let x = res.level_shift(n, inv_lambda)?;
        let en = omega0 * (2.0 * n as f64 + 0.5);
        e0.push(en);
        e1.push(en + x);
        shifts.push(x);
        phases.push(-PI * x / (2.0 * omega0));
        let norm = res.norm_sq(n, x).sqrt();
        for m in 0..n_max {
            let d = x - (m as f64 - n as f64) * 2.0 * omega0;
            u[m * n_max + n] = res.c2[m].sqrt() / (d * norm);
        }
    }
    debug_assert!(res.head() > n_max);
    Ok(BasisSet {
        geometry,
        coupling,
        unperturbed_energies: e0,
        perturbed_energies: e1,
        scattering_phases: phases,
        energy_shifts: shifts,
        overlap: u,
        overlap_rows: n_max,
        overlap_cols: n_max,
        truncation: None,
    })
}

/// Lowest perturbed even level from `Gamma(b)/Gamma(b + 1/2) = -2 l omega0 / lambda`,
/// `b = 1/4 - E/(2 omega0)`. Independent of the secular-equation route.
pub fn harmonic_ground_level_transcendental(omega0: f64, coupling: CouplingSpec) -> Result<f64> {
    use statrs::function::gamma::gamma;
    let ell = (2.0 / omega0).sqrt();
    let target = -2.0 * ell * omega0 / coupling.contact_strength_1d();
    let f = |e: f64| {
        let b = 0.25 - e / (2.0 * omega0);
        gamma(b) / gamma(b + 0.5) - target
    };
    // For lambda > 0 the target is negative, which puts the level between
    // omega0/2 and 3 omega0/2 (b in (-1/2, 0)); the ratio runs from -inf to 0 there.
    let lo = 0.5 * omega0 * (1.0 + 1e-12);
    let hi = 1.5 * omega0 * (1.0 - 1e-12);
    roots::brent(f, lo, hi, 0.0, 400)
}

// ---------------------------------------------------------------------------
// Thermal state and truncation

/// Occupations of the auxiliary unperturbed spectrum, long enough that the
/// remaining tail is negligible.
fn aux_occupations(geometry: &Geometry, mu: f64, temperature: f64) -> Vec<f64> {
    let mut occ = Vec::with_capacity(AUX_MIN_STATES);
    let mut i = 0;
    loop {
        let e = geometry.unperturbed_energy(i);
        let f = fermi(e, mu, temperature);
        occ.push(f);
        i += 1;
        if i >= AUX_MIN_STATES && e > mu && f < 1e-20 {
            break;
        }
    }
    occ
}

fn occupation_sum(geometry: &Geometry, mu: f64, temperature: f64) -> f64 {
    // Sum from the small end upward; terms are bounded by one.
    aux_occupations(geometry, mu, temperature).iter().rev().sum()
}

/// Chemical potential fixing the mean particle number, by bisection on
/// `[-10, 10] E_F`.
pub fn solve_chemical_potential(
    basis: &BasisSet,
    temperature: f64,
    shell_count: usize,
) -> Result<ThermalState> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidInput(format!("temperature {temperature} must be > 0")));
    }
    let geometry = basis.geometry;
    let target = shell_count as f64;
    let (lo, hi) = (-10.0, 10.0);
    let n_lo = occupation_sum(&geometry, lo, temperature);
    let n_hi = occupation_sum(&geometry, hi, temperature);
    if !(n_lo < target && n_hi > target) {
        return Err(Error::BracketFailure {
            low: n_lo,
            high: n_hi,
            target,
        });
    }
    let (mut a, mut b) = (lo, hi);
    let mut mu = 0.5 * (a + b);
    for _ in 0..200 {
        mu = 0.5 * (a + b);
        let diff = occupation_sum(&geometry, mu, temperature) - target;
        if diff.abs() < 1e-8 || b - a < 1e-15 {
            break;
        }
        if diff < 0.0 {
            a = mu;
        } else {
            b = mu;
        }
    }
    let occupations = basis
        .unperturbed_energies
        .iter()
        .map(|&e| fermi(e, mu, temperature))
        .collect();
    Ok(ThermalState {
        temperature,
        chemical_potential: mu,
        occupations,
    })
}

/// Convenience wrapper using the basis' own shell count.
pub fn thermal_state(basis: &BasisSet, temperature: f64) -> Result<ThermalState> {
    solve_chemical_potential(basis, temperature, basis.geometry.shell_count)
}

/// Smallest `N` whose thermal tail is below `epsilon`.
pub fn thermal_cutoff(geometry: &Geometry, thermal: &ThermalState, epsilon: f64) -> usize {
    let occ = aux_occupations(geometry, thermal.chemical_potential, thermal.temperature);
    let mut tail: f64 = occ.iter().rev().sum();
    for (n, f) in occ.iter().enumerate() {
        if tail < epsilon {
            return n.max(1);
        }
        tail -= f;
    }
    occ.len()
}

/// Keeps `N` unperturbed and `N'` perturbed states as described in the
/// module docs; the occupations of `thermal` must belong to `basis`.
pub fn truncate(basis: BasisSet, thermal: &ThermalState, epsilon: f64) -> Result<BasisSet> {
    if !basis.has_overlap() {
        return Err(Error::InvalidInput("overlap not built".into()));
    }
    let n = thermal_cutoff(&basis.geometry, thermal, epsilon);
    if n > basis.overlap_rows {
        return Err(Error::TruncationOverflow {
            needed: n,
            available: basis.overlap_rows,
        });
    }
    let cols = basis.overlap_cols;
    let mut n_prime = n;
    for m in 0..n {
        let row = &basis.overlap[m * cols..(m + 1) * cols];
        let mut acc = 0.0;
        let mut reached = None;
        for (j, x) in row.iter().enumerate() {
            acc += x * x;
            if acc > 1.0 - epsilon {
                reached = Some(j + 1);
                break;
            }
        }
        match reached {
            Some(j) => n_prime = n_prime.max(j),
            None => {
                return Err(Error::TruncationOverflow {
                    needed: cols + 1,
                    available: cols,
                })
            }
        }
    }
    let mut overlap = Vec::with_capacity(n * n_prime);
    for m in 0..n {
        overlap.extend_from_slice(&basis.overlap[m * cols..m * cols + n_prime]);
    }
    let out = BasisSet {
        geometry: basis.geometry,
        coupling: basis.coupling,
        unperturbed_energies: basis.unperturbed_energies[..n].to_vec(),
        perturbed_energies: basis.perturbed_energies[..n_prime].to_vec(),
        scattering_phases: basis.scattering_phases[..n_prime].to_vec(),
        energy_shifts: basis.energy_shifts[..n_prime.min(basis.energy_shifts.len())].to_vec(),
        overlap,
        overlap_rows: n,
        overlap_cols: n_prime,
        truncation: Some(Truncation {
            epsilon,
            n,
            n_prime,
        }),
    };
    out.check_unitarity(epsilon)?;
    Ok(out)
}

/// Full pipeline: solve, build the overlap and truncate at the highest
/// temperature that will be used with this basis. `n_max` doubles until the
/// truncation fits.
pub fn prepare(
    geometry: Geometry,
    coupling: CouplingSpec,
    temperature_ceiling: f64,
    epsilon: f64,
) -> Result<BasisSet> {
    geometry.validate()?;
    let probe = BasisSet {
        geometry,
        coupling,
        unperturbed_energies: Vec::new(),
        perturbed_energies: Vec::new(),
        scattering_phases: Vec::new(),
        energy_shifts: Vec::new(),
        overlap: Vec::new(),
        overlap_rows: 0,
        overlap_cols: 0,
        truncation: None,
    };
    let thermal = thermal_state(&probe, temperature_ceiling)?;
    let n = thermal_cutoff(&geometry, &thermal, epsilon);
    let mut n_max = (2 * n).max(n + 256);
    loop {
        let basis = build_overlap_matrix(solve_scattering_sector(geometry, coupling, n_max)?)?;
        let thermal = thermal_state(&basis, temperature_ceiling)?;
        match truncate(basis, &thermal, epsilon) {
            Ok(b) => return Ok(b),
            Err(Error::TruncationOverflow { .. }) if n_max < 1 << 16 => n_max *= 2,
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coupling(kfa: f64) -> CouplingSpec {
        CouplingSpec::new(kfa).unwrap()
    }

    #[test]
    fn rejects_non_negative_coupling() {
        assert_eq!(CouplingSpec::new(0.0), Err(Error::InvalidCoupling(0.0)));
        assert!(CouplingSpec::new(0.3).is_err());
    }

    #[test]
    fn geometries_fix_the_fermi_energy() {
        let g = Geometry::box_3d(40);
        assert!((g.unperturbed_energy(39) - 1.0).abs() < 1e-14);
        let g = Geometry::box_1d(40);
        assert!((g.unperturbed_energy(39) - 1.0).abs() < 1e-14);
        let g = Geometry::harmonic_1d(201);
        assert!((g.unperturbed_energy(200) - 1.0).abs() < 1e-14);
        assert!((Geometry::harmonic_from_omega(2.5e-3).unwrap().shell_count) == 201);
    }

    #[test]
    fn phases_match_sign_change_scan() {
        // N_s = 4, kFa = -0.5, first eight states.
        let b = solve_scattering_sector(Geometry::box_3d(4), coupling(-0.5), 8).unwrap();
        let r = 4.0 * PI;
        for (i, &d) in b.scattering_phases.iter().enumerate() {
            let n = (i + 1) as f64;
            let g = |x: f64| x.tan() + (n * PI - x) / r * -0.5;
            let steps = 200_000;
            let mut found = None;
            for s in 0..steps {
                let x0 = 0.5 * PI * s as f64 / steps as f64;
                let x1 = 0.5 * PI * (s + 1) as f64 / steps as f64;
                if g(x0) <= 0.0 && g(x1) > 0.0 {
                    found = Some(0.5 * (x0 + x1));
                }
            }
            let scan = found.unwrap();
            assert!((d - scan).abs() < 1e-5, "state {i}: {d} vs {scan}");
            assert!(d > 0.0 && d < 0.5 * PI);
            let kp = (n * PI - d) / r;
            assert!((d.tan() + kp * -0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fermi_surface_phase_approaches_continuum_value() {
        let ns = 400;
        let b = solve_scattering_sector(Geometry::box_3d(ns), coupling(-1.0), ns + 2).unwrap();
        let d = b.scattering_phases[ns - 1];
        assert!((d - PI / 4.0).abs() < 2e-3);
    }

    #[test]
    fn weak_coupling_limit_is_identity() {
        let b = build_overlap_matrix(
            solve_scattering_sector(Geometry::box_3d(10), coupling(-1e-12), 20).unwrap(),
        )
        .unwrap();
        for m in 0..20 {
            for n in 0..20 {
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!((b.u(m, n) - expect).abs() < 1e-8);
            }
            assert!((b.perturbed_energies[m] - b.unperturbed_energies[m]).abs() < 1e-10);
        }
        // In 1D the free limit is a -> -infinity.
        let b = build_overlap_matrix(
            solve_scattering_sector(Geometry::box_1d(10), coupling(-1e12), 20).unwrap(),
        )
        .unwrap();
        for m in 0..20 {
            assert!((b.u(m, m) - 1.0).abs() < 1e-8);
            assert!(b.scattering_phases[m].abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_overlap_matches_quadrature() {
        let b = build_overlap_matrix(
            solve_scattering_sector(Geometry::box_3d(4), coupling(-0.5), 12).unwrap(),
        )
        .unwrap();
        for &(m, n) in &[(0, 0), (0, 1), (3, 2), (5, 9), (11, 0)] {
            let q = overlap_by_quadrature(&b, m, n);
            let c = b.u(m, n);
            assert!((q - c).abs() < 1e-10 * c.abs().max(1e-3), "({m},{n}) {c} vs {q}");
        }
        let b = build_overlap_matrix(
            solve_scattering_sector(Geometry::box_1d(4), coupling(-1.0), 12).unwrap(),
        )
        .unwrap();
        for &(m, n) in &[(0, 0), (1, 0), (3, 2), (7, 9)] {
            let q = overlap_by_quadrature(&b, m, n);
            let c = b.u(m, n);
            assert!((q - c).abs() < 1e-10 * c.abs().max(1e-3), "({m},{n}) {c} vs {q}");
        }
    }

    #[test]
    fn full_rows_are_normalised() {
        let b = build_overlap_matrix(
            solve_scattering_sector(Geometry::box_3d(20), coupling(-1.0), 4000).unwrap(),
        )
        .unwrap();
        for m in 0..20 {
            assert!((b.row_norm(m, 4000) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn low_temperature_chemical_potential() {
        let b = solve_scattering_sector(Geometry::box_3d(2000), coupling(-0.5), 2000).unwrap();
        let th = thermal_state(&b, 1e-4).unwrap();
        assert!((th.chemical_potential - 1.0).abs() < 1e-3);
        let f = fermi(th.chemical_potential, th.chemical_potential, 1e-4);
        assert_eq!(f, 0.5);
    }

    #[test]
    fn chemical_potential_matches_dense_scan() {
        let g = Geometry::box_3d(200);
        let b = solve_scattering_sector(g, coupling(-0.5), 200).unwrap();
        let th = thermal_state(&b, 0.2).unwrap();
        // Dense scan of the occupation sum in mu.
        let sum = |mu: f64| -> f64 { (0..20_000).map(|i| fermi(g.unperturbed_energy(i), mu, 0.2)).sum() };
        let mut best = (f64::INFINITY, 0.0);
        for s in 0..=4000 {
            let mu = 0.9 + 0.2 * s as f64 / 4000.0;
            let d = (sum(mu) - 200.0).abs();
            if d < best.0 {
                best = (d, mu);
            }
        }
        assert!((th.chemical_potential - best.1).abs() < 1e-4);
        assert!((sum(th.chemical_potential) - 200.0).abs() < 1e-7);
    }

    #[test]
    fn truncation_at_low_temperature_keeps_occupied_states() {
        let b = prepare(Geometry::box_3d(50), coupling(-0.5), 1e-3, EPSILON).unwrap();
        let t = b.truncation.unwrap();
        assert!(t.n >= 50 && t.n <= 52, "N = {}", t.n);
        assert!(t.n_prime >= t.n);
    }

    #[test]
    fn truncation_is_stable_under_basis_growth() {
        let g = Geometry::box_3d(200);
        let c = coupling(-0.5);
        let mut cuts = Vec::new();
        for &n_max in &[1200, 2400] {
            let b = build_overlap_matrix(solve_scattering_sector(g, c, n_max).unwrap()).unwrap();
            let th = thermal_state(&b, 0.1).unwrap();
            let t = truncate(b, &th, EPSILON).unwrap().truncation.unwrap();
            cuts.push((t.n, t.n_prime));
        }
        assert!(cuts[0].0 > 200);
        assert_eq!(cuts[0], cuts[1]);
    }

    #[test]
    fn row_norms_at_hundred_shells() {
        let b = prepare(Geometry::box_3d(100), coupling(-0.5), 0.1, EPSILON).unwrap();
        for m in 0..b.overlap_rows {
            let r = b.row_norm(m, b.overlap_cols);
            assert!(r > 1.0 - 1e-4 && r <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn harmonic_free_limit_and_fermi_energy() {
        let b = build_harmonic_sector(1.0 / 40.5, coupling(-1e12), 30).unwrap();
        assert_eq!(b.geometry.shell_count, 21);
        assert!((b.unperturbed_energies[20] - 1.0).abs() < 1e-14);
        for n in 0..30 {
            assert!(b.energy_shifts[n] < 1e-9);
            assert!((b.u(n, n) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn harmonic_ground_level_matches_transcendental_relation() {
        let c = coupling(-1.0);
        let omega0 = 1.0 / 400.5;
        let b = build_harmonic_sector(omega0, c, 50).unwrap();
        let oracle = harmonic_ground_level_transcendental(omega0, c).unwrap();
        assert!((b.perturbed_energies[0] - oracle).abs() < 1e-9 * oracle, "{} vs {oracle}", b.perturbed_energies[0]);
    }

    #[test]
    fn harmonic_matches_dense_diagonalisation_without_tail() {
        // Dense diagonalisation of diag(E) + lambda c c^T in a finite basis
        // versus the secular equation with the same finite basis.
        let omega0 = 0.05;
        let lambda = 2.0;
        let size = 40;
        let c2 = hermite_origin_sq(omega0, size);
        let mut h = nalgebra::DMatrix::zeros(size, size);
        for m in 0..size {
            h[(m, m)] = omega0 * (2.0 * m as f64 + 0.5);
            for n in 0..size {
                h[(m, n)] += lambda * (c2[m] * c2[n]).sqrt();
            }
        }
        let mut eig: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let res = TrapResolvent {
            omega0,
            c2,
            tail: vec![0.0; TAIL_TERMS],
        };
        for n in 0..size - 1 {
            let x = res.level_shift(n, 1.0 / lambda).unwrap();
            let e = omega0 * (2.0 * n as f64 + 0.5) + x;
            assert!((e - eig[n]).abs() < 1e-10, "level {n}");
        }
    }

    #[test]
    fn harmonic_columns_are_normalised_in_the_full_space() {
        let b = build_harmonic_sector(1.0 / 40.5, coupling(-1.0), 200).unwrap();
        let col: f64 = (0..200).map(|m| b.u(m, 0).powi(2)).sum();
        // The remainder lives in the discarded high-energy states.
        assert!(col < 1.0 && col > 0.97);
    }

    #[test]
    fn basis_round_trips_bit_exactly() {
        let b = prepare(Geometry::box_3d(10), coupling(-0.7), 0.1, EPSILON).unwrap();
        let dir = std::env::temp_dir().join(format!("basis-rt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("b.json");
        b.save(&p).unwrap();
        let back = BasisSet::load(&p).unwrap();
        assert_eq!(b, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn phases_are_monotone_in_coupling(a in -20.0f64..-0.01, da in 0.001f64..1.0) {
            let g = Geometry::box_3d(5);
            let b1 = solve_scattering_sector(g, coupling(a), 10).unwrap();
            let b2 = solve_scattering_sector(g, coupling(a - da), 10).unwrap();
            for (d1, d2) in b1.scattering_phases.iter().zip(&b2.scattering_phases) {
                prop_assert!(d2 > d1);
                prop_assert!(*d1 > 0.0 && *d2 < 0.5 * PI);
            }
        }

        #[test]
        fn energies_increase(a in -10.0f64..-0.01) {
            for g in [Geometry::box_3d(6), Geometry::box_1d(6)] {
                let b = solve_scattering_sector(g, coupling(a), 30).unwrap();
                prop_assert!(b.perturbed_energies.windows(2).all(|w| w[1] > w[0]));
                prop_assert!(b.unperturbed_energies.windows(2).all(|w| w[1] > w[0]));
            }
        }

        #[test]
        fn occupations_are_bounded(t in 0.005f64..1.0) {
            let b = solve_scattering_sector(Geometry::box_1d(30), coupling(-1.0), 60).unwrap();
            let th = thermal_state(&b, t).unwrap();
            prop_assert!(th.occupations.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }
}
