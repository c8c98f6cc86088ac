//! Sweep execution, basis caching and the artifact manifest.

use crate::config::{ChannelSelection, ConfigError, ExperimentConfig, Output};
use fermi_dephasing::basis::{self, BasisSet, CouplingSpec, Geometry, GeometryKind};
use fermi_dephasing::channel::{Channel, ExactChannel, TemperatureTable, WeakChannel};
use fermi_dephasing::levitov::{self, ChannelKind, DecoherenceTrace};
use fermi_dephasing::metrology::{self, MetrologyResult, MetrologySummary, DELTA_T_REL};
use fermi_dephasing::protocol;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Temperature-table span, relative to the point temperature, for the
/// protocol benchmark.
const TABLE_SPAN: (f64, f64) = (0.5, 1.6);
const ESTIMATOR_BRACKET: (f64, f64) = (0.6, 1.5);
const BENCHMARK_THETAS: usize = 16;

#[derive(Debug)]
pub enum RunnerError {
    Config(ConfigError),
    Io(String),
}

impl std::fmt::Display for RunnerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunnerError::Config(e) => write!(f, "config error: {e}"),
            RunnerError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for RunnerError {}

impl From<ConfigError> for RunnerError {
    fn from(e: ConfigError) -> Self {
        RunnerError::Config(e)
    }
}

impl From<std::io::Error> for RunnerError {
    fn from(e: std::io::Error) -> Self {
        RunnerError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub force: bool,
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub geometry: String,
    pub shell_count: usize,
    #[serde(rename = "kFa")]
    pub kfa: f64,
    #[serde(rename = "T")]
    pub temperature: f64,
    pub channel: String,
    pub status: Status,
    pub error: Option<String>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
    pub wall_time_s: f64,
    pub summary: Option<MetrologySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub warnings: Vec<String>,
    pub points: Vec<PointRecord>,
    pub files: Vec<String>,
    pub wall_time_s: f64,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.status == Status::Failed).count()
    }
}

fn geometry_name(g: &Geometry) -> &'static str {
    match g.kind {
        GeometryKind::Box3dSWave => "box3d",
        GeometryKind::Box1dEven => "box1d",
        GeometryKind::Harmonic1dEven => "harmonic1d",
    }
}

fn stem(output: &str, channel: ChannelKind, g: &Geometry, kfa: f64, t: f64) -> String {
    format!("{output}_{}_{}_kFa{kfa:.5}_T{t:.5}", channel.name(), geometry_name(g))
}

/// Content hash of everything that determines a prepared basis.
pub fn basis_key(geometry: &Geometry, kfa: f64, epsilon: f64, ceiling: f64) -> String {
    let text = serde_json::json!({
        "geometry": geometry,
        "kFa": kfa,
        "epsilon": epsilon,
        "temperature_ceiling": ceiling,
    })
    .to_string();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn cached_basis(cache: &Path, geometry: Geometry, kfa: f64, ceiling: f64) -> fermi_dephasing::Result<BasisSet> {
    let path = cache.join(format!("basis-{}.json", basis_key(&geometry, kfa, basis::EPSILON, ceiling)));
    if let Ok(b) = BasisSet::load(&path) {
        return Ok(b);
    }
    let b = basis::prepare(geometry, CouplingSpec::new(kfa)?, ceiling, basis::EPSILON)?;
    // A failed write only costs a rebuild next time.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    if b.save(&tmp).is_ok() {
        std::fs::rename(&tmp, &path).ok();
    }
    Ok(b)
}

struct Job {
    geometry: Geometry,
    kfa: f64,
    channel: ChannelKind,
}

fn needs_derivatives(config: &ExperimentConfig) -> bool {
    config.wants(Output::Metrology) || config.wants(Output::Protocol)
}

fn temperature_ceiling(config: &ExperimentConfig) -> f64 {
    let t_max = config.temperatures.iter().cloned().fold(0.0, f64::max);
    if config.wants(Output::Protocol) {
        t_max * TABLE_SPAN.1
    } else if needs_derivatives(config) {
        t_max * (1.0 + DELTA_T_REL)
    } else {
        t_max
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

struct PointContext<'a> {
    config: &'a ExperimentConfig,
    dir: &'a Path,
    seed: u64,
    channel: &'a dyn Channel,
    job: &'a Job,
}

/// Writes every requested product for one temperature. Files that were
/// written before a failure stay listed.
fn run_point(
    ctx: &PointContext,
    temperature: f64,
    traces: &[DecoherenceTrace],
    record: &mut PointRecord,
) -> fermi_dephasing::Result<()> {
    let config = ctx.config;
    let job = ctx.job;
    let center = if traces.len() == 3 { &traces[1] } else { &traces[0] };
    let name = |o: &str, ext: &str| format!("{}.{ext}", stem(o, job.channel, &job.geometry, job.kfa, temperature));
    if config.wants(Output::Trace) {
        let f = name("trace", "csv");
        center.write_csv(&ctx.dir.join(&f))?;
        record.files.push(f);
    }
    if config.wants(Output::Spectrum) {
        let s = levitov::absorption_spectrum(center, config.eta, &levitov::nyquist_grid(center))?;
        let f = name("spectrum", "csv");
        s.write_csv(&ctx.dir.join(&f))?;
        record.files.push(f);
    }
    if !needs_derivatives(config) {
        return Ok(());
    }
    let d = metrology::derivatives_from_traces(&traces[0], &traces[2], temperature, DELTA_T_REL)?;
    let mut m = MetrologyResult::from_derivatives(center, &d);
    match metrology::maximize_qsnr(&m.times, &m.qsnr) {
        Ok(o) => m.optimum = Some(o),
        Err(e) => record.warnings.push(format!("metrology: {e}")),
    }
    if config.wants(Output::Metrology) {
        let f = name("metrology", "csv");
        m.write_csv(&ctx.dir.join(&f))?;
        record.files.push(f);
        if let Some(s) = m.summary() {
            let f = name("summary", "json");
            write_json(&ctx.dir.join(&f), &s)?;
            record.files.push(f);
            record.summary = Some(s);
        }
    }
    if config.wants(Output::Protocol) {
        let Some(opt) = m.optimum else {
            return Err(fermi_dephasing::Error::InvalidInput(
                "protocol benchmark needs the QSNR optimum inside the time grid".into(),
            ));
        };
        let table = TemperatureTable::build(
            ctx.channel,
            opt.t_max,
            temperature * TABLE_SPAN.0,
            temperature * TABLE_SPAN.1,
            221,
        )?;
        let model = |t: f64| table.value(t);
        let (v, dv) = protocol::value_and_derivative(&model, temperature);
        let r = v.norm();
        let w = v.conj() * dv / r;
        let sld = v.arg() + metrology::sld_angle(r, w.re, w.im / r)?;
        let thetas: Vec<f64> = (0..BENCHMARK_THETAS)
            .map(|k| sld + PI * k as f64 / BENCHMARK_THETAS as f64)
            .collect();
        let rows = protocol::estimator_benchmark(
            &thetas,
            config.shots,
            temperature,
            opt.t_max,
            &model,
            (temperature * ESTIMATOR_BRACKET.0, temperature * ESTIMATOR_BRACKET.1),
            config.replicas,
            ctx.seed,
        )?;
        let f = name("protocol", "csv");
        protocol::write_benchmark_csv(&rows, &ctx.dir.join(&f))?;
        record.files.push(f);
    }
    Ok(())
}

fn run_job(config: &ExperimentConfig, dir: &Path, cache: &Path, seed: u64, job: &Job) -> Vec<PointRecord> {
    let start = Instant::now();
    let blank = |t: f64| PointRecord {
        geometry: geometry_name(&job.geometry).to_string(),
        shell_count: job.geometry.shell_count,
        kfa: job.kfa,
        temperature: t,
        channel: job.channel.name().to_string(),
        status: Status::Ok,
        error: None,
        warnings: Vec::new(),
        files: Vec::new(),
        wall_time_s: 0.0,
        summary: None,
    };
    let fail_all = |e: String| -> Vec<PointRecord> {
        config
            .temperatures
            .iter()
            .map(|&t| PointRecord {
                status: Status::Failed,
                error: Some(e.clone()),
                wall_time_s: start.elapsed().as_secs_f64(),
                ..blank(t)
            })
            .collect()
    };
    let channel: Box<dyn Channel> = match job.channel {
        ChannelKind::Exact => {
            let ceiling = temperature_ceiling(config);
            match cached_basis(cache, job.geometry, job.kfa, ceiling) {
                Ok(b) => Box::new(ExactChannel::from_basis(b, ceiling)),
                Err(e) => return fail_all(e.to_string()),
            }
        }
        ChannelKind::Weak => match WeakChannel::new(job.kfa) {
            Ok(c) => Box::new(c),
            Err(e) => return fail_all(e.to_string()),
        },
    };
    let per_point = if needs_derivatives(config) { 3 } else { 1 };
    let mut temps = Vec::new();
    for &t in &config.temperatures {
        if per_point == 3 {
            temps.extend([t * (1.0 - DELTA_T_REL), t, t * (1.0 + DELTA_T_REL)]);
        } else {
            temps.push(t);
        }
    }
    let times = config.time.points();
    let traces = match channel.traces(&temps, &times) {
        Ok(t) => t,
        Err(e) => return fail_all(e.to_string()),
    };
    let setup = start.elapsed().as_secs_f64() / config.temperatures.len() as f64;
    let ctx = PointContext {
        config,
        dir,
        seed,
        channel: channel.as_ref(),
        job,
    };
    config
        .temperatures
        .iter()
        .zip(traces.chunks(per_point))
        .map(|(&t, chunk)| {
            let point_start = Instant::now();
            let mut rec = blank(t);
            if let Err(e) = run_point(&ctx, t, chunk, &mut rec) {
                rec.status = Status::Failed;
                rec.error = Some(e.to_string());
            }
            rec.wall_time_s = setup + point_start.elapsed().as_secs_f64();
            rec
        })
        .collect()
}

/// Runs the full sweep and writes `manifest.json` into the output directory.
pub fn run(config: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest, RunnerError> {
    config.validate(opts.force)?;
    let start = Instant::now();
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir)?;
    let cache = opts.cache_dir.clone().unwrap_or_else(|| dir.join("cache"));
    std::fs::create_dir_all(&cache)?;
    let seed = opts.seed.unwrap_or(config.seed);

    let kinds: Vec<ChannelKind> = match config.channel {
        ChannelSelection::Exact => vec![ChannelKind::Exact],
        ChannelSelection::Weak => vec![ChannelKind::Weak],
        ChannelSelection::Both => vec![ChannelKind::Exact, ChannelKind::Weak],
    };
    let mut jobs = Vec::new();
    for g in &config.geometries {
        for &kfa in &config.couplings {
            for &channel in &kinds {
                jobs.push(Job {
                    geometry: *g,
                    kfa,
                    channel,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| RunnerError::Io(e.to_string()))?;
    let points: Vec<PointRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(config, &dir, &cache, seed, job))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    });
    let mut files: Vec<String> = points.iter().flat_map(|p| p.files.iter().cloned()).collect();
    files.sort();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config: config.to_ini(),
        warnings: config.warnings.clone(),
        points,
        files,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Checks that every listed file exists and parses, and that every sweep
/// point of `config` appears exactly once.
pub fn verify_manifest(config: &ExperimentConfig, dir: &Path) -> Result<Manifest, String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    for f in &m.files {
        let body = std::fs::read_to_string(dir.join(f)).map_err(|e| format!("{f}: {e}"))?;
        if f.ends_with(".json") {
            serde_json::from_str::<serde_json::Value>(&body).map_err(|e| format!("{f}: {e}"))?;
        } else {
            let mut lines = body.lines();
            let cols = lines.next().ok_or(format!("{f}: empty"))?.split(',').count();
            for (i, l) in lines.enumerate() {
                let cells: Vec<&str> = l.split(',').collect();
                if cells.len() != cols {
                    return Err(format!("{f}: row {} has {} cells", i + 2, cells.len()));
                }
                if let Some(c) = cells.iter().find(|c| !c.is_empty() && c.parse::<f64>().is_err()) {
                    return Err(format!("{f}: row {} has non-numeric `{c}`", i + 2));
                }
            }
        }
    }
    let channels = match config.channel {
        ChannelSelection::Both => 2,
        _ => 1,
    };
    let expected = config.geometries.len() * config.couplings.len() * config.temperatures.len() * channels;
    if m.points.len() != expected {
        return Err(format!("{} points listed, {expected} expected", m.points.len()));
    }
    let mut keys: Vec<String> = m
        .points
        .iter()
        .map(|p| format!("{}|{}|{}|{}", p.geometry, p.kfa, p.temperature, p.channel))
        .collect();
    keys.sort();
    keys.dedup();
    if keys.len() != expected {
        return Err("duplicate sweep points".into());
    }
    Ok(m)
}
