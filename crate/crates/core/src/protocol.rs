//! Monte Carlo Ramsey thermometry: pi/2 pulse, free evolution, a second pi/2
//! pulse with phase `theta`, projective readout. Temperatures are recovered
//! by maximum likelihood and compared against the Cramer-Rao bounds.

use crate::error::{Error, Result};
use crate::levitov::fmt12;
use crate::metrology::{self, fisher_of_equatorial_measurement};
use crate::numerics::roots;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RamseyConfig {
    pub theta: f64,
    pub shots: usize,
    pub readout_time: f64,
    pub truth_temperature: f64,
    pub rng_seed: u64,
}

impl RamseyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shots == 0 {
            return Err(Error::InvalidInput("shots must be >= 1".into()));
        }
        if !(self.readout_time >= 0.0) {
            return Err(Error::InvalidInput(format!("readout time {}", self.readout_time)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamseyRecord {
    pub outcomes: Vec<i8>,
    pub config: RamseyConfig,
    pub empirical_mean: f64,
}

impl RamseyRecord {
    /// Record with a prescribed mean and no individual shots, for noise-free
    /// checks of the estimator.
    pub fn from_mean(config: RamseyConfig, empirical_mean: f64) -> Self {
        RamseyRecord {
            outcomes: Vec::new(),
            config,
            empirical_mean,
        }
    }

    pub fn shots(&self) -> usize {
        self.config.shots
    }
}

/// `p_+ = (1 + cos(theta) Re v + sin(theta) Im v) / 2`.
pub fn outcome_probability(v: Complex64, theta: f64) -> Result<f64> {
    let (s, c) = theta.sin_cos();
    let p = 0.5 * (1.0 + c * v.re + s * v.im);
    if !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// `N` Bernoulli shots at the probability set by `v = v(t_read, T_true)`.
pub fn simulate(config: RamseyConfig, v: Complex64) -> Result<RamseyRecord> {
    config.validate()?;
    let p = outcome_probability(v, config.theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let outcomes: Vec<i8> = (0..config.shots)
        .map(|_| if rng.random::<f64>() < p { 1 } else { -1 })
        .collect();
    let empirical_mean = outcomes.iter().map(|&o| o as f64).sum::<f64>() / config.shots as f64;
    Ok(RamseyRecord {
        outcomes,
        config,
        empirical_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub t_est: f64,
    pub log_likelihood_curve: Vec<(f64, f64)>,
    pub stderr_estimate: f64,
    pub n_shots: usize,
}

const SCAN_POINTS: usize = 201;

/// Maximum-likelihood temperature. `model` returns `v(t_read, T)`.
///
/// The likelihood is sampled across the bracket first and the golden-section
/// search runs between the neighbours of the best sample, so a likelihood
/// with several local maxima does not trap the search.
pub fn mle_temperature(
    record: &RamseyRecord,
    model: &(dyn Fn(f64) -> Complex64 + Sync),
    bracket: (f64, f64),
) -> Result<EstimationResult> {
    let (lo, hi) = bracket;
    if !(hi > lo) {
        return Err(Error::InvalidInput(format!("bracket [{lo}, {hi}]")));
    }
    let n = record.shots() as f64;
    let n_plus = 0.5 * n * (1.0 + record.empirical_mean);
    let n_minus = n - n_plus;
    let theta = record.config.theta;
    let ll = |t: f64| -> f64 {
        let (s, c) = theta.sin_cos();
        let v = model(t);
        let p = (0.5 * (1.0 + c * v.re + s * v.im)).clamp(1e-300, 1.0 - 1e-16);
        let mut l = 0.0;
        if n_plus > 0.0 {
            l += n_plus * p.ln();
        }
        if n_minus > 0.0 {
            l += n_minus * (1.0 - p).ln();
        }
        l
    };
    let h = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let curve: Vec<(f64, f64)> = (0..SCAN_POINTS)
        .map(|i| {
            let t = lo + h * i as f64;
            (t, ll(t))
        })
        .collect();
    let k = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(k, _)| k)
        .unwrap();
    if k == 0 || k == SCAN_POINTS - 1 {
        return Err(Error::BoundaryMaximum(curve[k].0));
    }
    let t_est = roots::golden_max(ll, curve[k - 1].0, curve[k + 1].0, 1e-12 * (hi - lo));
    let d = 1e-4 * (hi - lo);
    let curvature = (ll(t_est + d) - 2.0 * ll(t_est) + ll(t_est - d)) / (d * d);
    let stderr_estimate = if curvature < 0.0 {
        (-1.0 / curvature).sqrt()
    } else {
        // Flat top: fall back to the bracket resolution.
        h
    };
    Ok(EstimationResult {
        t_est,
        log_likelihood_curve: curve,
        stderr_estimate,
        n_shots: record.shots(),
    })
}

/// `v(t_read, T)` and `dv/dT` at `T` by central differences at `delta T / T = 1e-2`.
pub fn value_and_derivative(model: &dyn Fn(f64) -> Complex64, temperature: f64) -> (Complex64, Complex64) {
    let h = metrology::DELTA_T_REL * temperature;
    let dv = (model(temperature + h) - model(temperature - h)) / (2.0 * h);
    (model(temperature), dv)
}

/// QFI of the state `v(T)` from a complex derivative.
pub fn qfi_from_complex(v: Complex64, dv: Complex64) -> f64 {
    let r = v.norm();
    // Polar parts: d|v| = Re(conj(v) dv)/|v|, |v| dphi = Im(conj(v) dv)/|v|.
    let w = v.conj() * dv / r;
    metrology::qfi(r, w.re, w.im / r).total().unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub theta: f64,
    pub shots: usize,
    pub var_t_est: f64,
    pub mean_t_est: f64,
    /// `1 / (N F_T(theta))`; infinite for a zero-information direction.
    pub inv_nft: f64,
    pub inv_nfq: f64,
    pub n_replicas: usize,
    pub failures: usize,
    pub seed: u64,
}

impl BenchmarkRow {
    /// Standard error of the sample variance, `var sqrt(2/(n-1))`.
    pub fn var_stderr(&self) -> f64 {
        let n = (self.n_replicas - self.failures) as f64;
        self.var_t_est * (2.0 / (n - 1.0)).sqrt()
    }
}

/// Replica estimates for one configuration. Replica `i` uses seed
/// `seed + i`; estimates that fail (boundary maxima) are returned as errors.
pub fn replicate(
    config: RamseyConfig,
    model: &(dyn Fn(f64) -> Complex64 + Sync),
    bracket: (f64, f64),
    replicas: usize,
) -> Result<Vec<Result<EstimationResult>>> {
    let v = model(config.truth_temperature);
    outcome_probability(v, config.theta)?;
    Ok((0..replicas)
        .into_par_iter()
        .map(|i| {
            let cfg = RamseyConfig {
                rng_seed: config.rng_seed.wrapping_add(i as u64),
                ..config
            };
            let rec = simulate(cfg, v)?;
            mle_temperature(&rec, model, bracket)
        })
        .collect())
}

/// For each `theta`: empirical variance of the MLE against `1/(N F_T)` and
/// `1/(N F_Q)`.
pub fn estimator_benchmark(
    thetas: &[f64],
    shots: usize,
    truth_temperature: f64,
    readout_time: f64,
    model: &(dyn Fn(f64) -> Complex64 + Sync),
    bracket: (f64, f64),
    replicas: usize,
    seed: u64,
) -> Result<Vec<BenchmarkRow>> {
    let (v, dv) = value_and_derivative(model, truth_temperature);
    let fq = qfi_from_complex(v, dv);
    thetas
        .iter()
        .map(|&theta| {
            let config = RamseyConfig {
                theta,
                shots,
                readout_time,
                truth_temperature,
                rng_seed: seed,
            };
            let ests = replicate(config, model, bracket, replicas)?;
            let ok: Vec<f64> = ests.iter().filter_map(|r| r.as_ref().ok().map(|e| e.t_est)).collect();
            let failures = replicas - ok.len();
            let (mean, var) = mean_var(&ok);
            let ft = fisher_of_equatorial_measurement(v, dv, theta).unwrap_or(0.0);
            Ok(BenchmarkRow {
                theta,
                shots,
                var_t_est: var,
                mean_t_est: mean,
                inv_nft: 1.0 / (shots as f64 * ft),
                inv_nfq: 1.0 / (shots as f64 * fq),
                n_replicas: replicas,
                failures,
                seed,
            })
        })
        .collect()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

pub fn write_benchmark_csv(rows: &[BenchmarkRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "theta,N,var_Test,inv_NFT,inv_NFQ,n_replicas,seed")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            fmt12(r.theta),
            r.shots,
            fmt12(r.var_t_est),
            fmt12(r.inv_nft),
            fmt12(r.inv_nfq),
            r.n_replicas,
            r.seed
        )?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{TemperatureTable, WeakChannel};
    use std::f64::consts::PI;

    fn weak_model(kfa: f64, t_read: f64) -> impl Fn(f64) -> Complex64 + Sync {
        let ch = WeakChannel::new(kfa).unwrap();
        let table = TemperatureTable::build(&ch, t_read, 0.04, 0.25, 211).unwrap();
        move |t| table.value(t)
    }

    #[test]
    fn probabilities() {
        assert_eq!(outcome_probability(Complex64::new(1.0, 0.0), 0.0).unwrap(), 1.0);
        for &th in &[0.0, 1.0, 2.5] {
            assert!((outcome_probability(Complex64::new(0.0, 0.0), th).unwrap() - 0.5).abs() < 1e-15);
        }
        let p = outcome_probability(Complex64::new(0.6, 0.3), PI / 4.0).unwrap();
        assert!((p - 0.8182).abs() < 5e-5);
        assert!(outcome_probability(Complex64::new(1.5, 0.0), 0.0).is_err());
    }

    fn config(shots: usize, seed: u64) -> RamseyConfig {
        RamseyConfig {
            theta: 0.0,
            shots,
            readout_time: 0.0,
            truth_temperature: 0.1,
            rng_seed: seed,
        }
    }

    #[test]
    fn certain_outcome() {
        let r = simulate(config(100, 1), Complex64::new(1.0, 0.0)).unwrap();
        assert!(r.outcomes.iter().all(|&o| o == 1));
        assert_eq!(r.empirical_mean, 1.0);
    }

    #[test]
    fn binomial_statistics() {
        let r = simulate(config(100_000, 9), Complex64::new(0.4, 0.0)).unwrap();
        assert!((r.empirical_mean - 0.4).abs() < 3.0 * (0.21f64 / 1e5).sqrt() * 2.0);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let a = simulate(config(1000, 42), Complex64::new(0.1, 0.2)).unwrap();
        let b = simulate(config(1000, 42), Complex64::new(0.1, 0.2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_free_mle_recovers_truth() {
        let model = weak_model(-0.3, 80.0);
        let theta = 1.1;
        let cfg = RamseyConfig {
            theta,
            readout_time: 80.0,
            ..config(500, 0)
        };
        let p = outcome_probability(model(0.1), theta).unwrap();
        let rec = RamseyRecord::from_mean(cfg, 2.0 * p - 1.0);
        let est = mle_temperature(&rec, &model, (0.06, 0.16)).unwrap();
        assert!((est.t_est - 0.1).abs() < 1e-7, "{}", est.t_est);
        assert!(est.stderr_estimate > 0.0);
    }

    #[test]
    fn edge_maximum_is_reported() {
        let model = weak_model(-0.3, 80.0);
        let cfg = RamseyConfig {
            theta: 1.1,
            readout_time: 80.0,
            ..config(500, 0)
        };
        let p = outcome_probability(model(0.2), 1.1).unwrap();
        let rec = RamseyRecord::from_mean(cfg, 2.0 * p - 1.0);
        assert!(matches!(mle_temperature(&rec, &model, (0.06, 0.16)), Err(Error::BoundaryMaximum(_))));
    }

    #[test]
    fn benchmark_respects_bounds() {
        let model = weak_model(-0.3, 80.0);
        let (v, dv) = value_and_derivative(&model, 0.1);
        let r = v.norm();
        let w = v.conj() * dv / r;
        let sld = v.arg() + metrology::sld_angle(r, w.re, w.im / r).unwrap();
        let thetas: Vec<f64> = (0..4).map(|k| sld + k as f64 * PI / 8.0).collect();
        let rows = estimator_benchmark(&thetas, 500, 0.1, 80.0, &model, (0.05, 0.2), 300, 7).unwrap();
        assert!(((rows[0].inv_nft - rows[0].inv_nfq) / rows[0].inv_nfq).abs() < 1e-4);
        for row in &rows {
            assert!(row.inv_nft >= row.inv_nfq * (1.0 - 1e-9));
            if row.failures == 0 {
                assert!(row.var_t_est >= row.inv_nft - 2.0 * row.var_stderr(), "{row:?}");
            }
        }
        let dir = std::env::temp_dir().join(format!("bench-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        write_benchmark_csv(&rows, &dir.join("b.csv")).unwrap();
        let text = std::fs::read_to_string(dir.join("b.csv")).unwrap();
        assert_eq!(text.lines().count(), 5);
        std::fs::remove_dir_all(dir).ok();
    }
}
