//! Experiment configuration: a flat, sectioned key-value format with units in
//! the key names.
//!
//! ```text
//! [geometry]
//! kind = box3d            ; box3d | box1d | harmonic1d, comma-separated for several
//! shell_count = 250
//! omega0_over_EF = 2.5e-3 ; harmonic traps only
//!
//! [coupling]
//! kFa = -0.5, -1.5
//!
//! [temperature]
//! temperature_over_TF = 0.01, 0.1
//! ; or: log_range_over_TF = 0.02, 1.0, 20
//!
//! [time]
//! start_over_tauF = 0
//! stop_over_tauF = 300
//! step_over_tauF = 1
//!
//! [run]
//! channel = exact         ; exact | weak | both
//! outputs = trace, metrology
//! seed = 1
//! output_dir = out
//! ```

use fermi_dephasing::basis::{Geometry, GeometryKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

/// Temperatures requested as zero are mapped here.
pub const ZERO_TEMPERATURE_STANDIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn field(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSelection {
    Exact,
    Weak,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    Trace,
    Spectrum,
    Metrology,
    Protocol,
}

impl Output {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "trace" => Some(Output::Trace),
            "spectrum" => Some(Output::Spectrum),
            "metrology" => Some(Output::Metrology),
            "protocol" => Some(Output::Protocol),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Output::Trace => "trace",
            Output::Spectrum => "spectrum",
            Output::Metrology => "metrology",
            Output::Protocol => "protocol",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        fermi_dephasing::levitov::uniform_grid(self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub geometries: Vec<Geometry>,
    pub couplings: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub time: TimeGrid,
    pub channel: ChannelSelection,
    pub outputs: Vec<Output>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Spectral damping for absorption spectra.
    pub eta: f64,
    pub shots: usize,
    pub replicas: usize,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    /// Invariants that do not depend on how the config was written.
    pub fn validate(&self, force: bool) -> Result<(), ConfigError> {
        if self.geometries.is_empty() {
            return Err(ConfigError::field("geometry.kind", "no geometry given"));
        }
        for g in &self.geometries {
            g.validate()
                .map_err(|e| ConfigError::field("geometry", e.to_string()))?;
        }
        if self.couplings.is_empty() {
            return Err(ConfigError::field("coupling.kFa", "list is empty"));
        }
        if let Some(k) = self.couplings.iter().find(|&&k| !(k < 0.0)) {
            return Err(ConfigError::field("coupling.kFa", format!("{k} is not on the attractive branch (< 0)")));
        }
        if self.temperatures.is_empty() {
            return Err(ConfigError::field("temperature.temperature_over_TF", "list is empty"));
        }
        if !(self.time.step > 0.0) {
            return Err(ConfigError::field("time.step_over_tauF", "step must be > 0"));
        }
        if self.time.start != 0.0 {
            return Err(ConfigError::field(
                "time.start_over_tauF",
                "grids start at 0 so that phases can be unwrapped from phi(0) = 0",
            ));
        }
        if !(self.time.stop >= 2.0 * self.time.step) {
            return Err(ConfigError::field("time.stop_over_tauF", "need at least three grid points"));
        }
        if self.outputs.is_empty() {
            return Err(ConfigError::field("run.outputs", "list is empty"));
        }
        if self.channel != ChannelSelection::Exact && !force {
            if let Some(k) = self.couplings.iter().find(|k| k.abs() > 0.5) {
                return Err(ConfigError::field(
                    "run.channel",
                    format!("weak channel requested at kFa = {k}; |kFa| > 0.5 needs --force"),
                ));
            }
        }
        if self.channel != ChannelSelection::Exact
            && self.geometries.iter().any(|g| g.kind != GeometryKind::Box3dSWave)
        {
            return Err(ConfigError::field("run.channel", "the weak channel exists only for the 3D gas"));
        }
        if !(self.eta > 0.0) {
            return Err(ConfigError::field("run.eta_over_EF", "must be > 0"));
        }
        if self.shots == 0 || self.replicas < 2 {
            return Err(ConfigError::field("run.shots", "need shots >= 1 and replicas >= 2"));
        }
        Ok(())
    }

    pub fn wants(&self, o: Output) -> bool {
        self.outputs.contains(&o)
    }

    /// Writes the config back in the text format it is read from.
    pub fn to_ini(&self) -> String {
        let list = |xs: &[f64]| xs.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(", ");
        let mut s = String::from("[geometry]\n");
        let kinds: Vec<&str> = self.geometries.iter().map(|g| kind_name(g.kind)).collect();
        s += &format!("kind = {}\n", kinds.join(", "));
        if let Some(g) = self.geometries.iter().find(|g| g.kind != GeometryKind::Harmonic1dEven) {
            s += &format!("shell_count = {}\n", g.shell_count);
        }
        if let Some(g) = self.geometries.iter().find(|g| g.kind == GeometryKind::Harmonic1dEven) {
            s += &format!("omega0_over_EF = {}\n", g.size_parameter);
        }
        s += &format!("\n[coupling]\nkFa = {}\n", list(&self.couplings));
        s += &format!("\n[temperature]\ntemperature_over_TF = {}\n", list(&self.temperatures));
        s += &format!(
            "\n[time]\nstart_over_tauF = {}\nstop_over_tauF = {}\nstep_over_tauF = {}\n",
            self.time.start, self.time.stop, self.time.step
        );
        let channel = match self.channel {
            ChannelSelection::Exact => "exact",
            ChannelSelection::Weak => "weak",
            ChannelSelection::Both => "both",
        };
        let outputs: Vec<&str> = self.outputs.iter().map(|o| o.name()).collect();
        s += &format!(
            "\n[run]\nchannel = {channel}\noutputs = {}\nseed = {}\noutput_dir = {}\neta_over_EF = {}\nshots = {}\nreplicas = {}\n",
            outputs.join(", "),
            self.seed,
            self.output_dir.display(),
            self.eta,
            self.shots,
            self.replicas
        );
        s
    }
}

fn kind_name(k: GeometryKind) -> &'static str {
    match k {
        GeometryKind::Box3dSWave => "box3d",
        GeometryKind::Box1dEven => "box1d",
        GeometryKind::Harmonic1dEven => "harmonic1d",
    }
}

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

/// `section.key -> entry`.
fn tokenize(text: &str) -> Result<BTreeMap<String, Entry>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut section = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split([';', '#']).next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, content, "unterminated section header"))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, content, "expected `key = value`"))?;
        if section.is_empty() {
            return Err(ConfigError::at(line, key.trim(), "key outside any section"));
        }
        let full = format!("{section}.{}", key.trim());
        if map.contains_key(&full) {
            return Err(ConfigError::at(line, &full, "duplicate key"));
        }
        map.insert(
            full,
            Entry {
                line,
                value: value.trim().to_string(),
                used: false,
            },
        );
    }
    Ok(map)
}

struct Reader {
    map: BTreeMap<String, Entry>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.get_mut(key).map(|e| {
            e.used = true;
            (e.line, e.value.clone())
        })
    }

    fn required(&mut self, key: &str) -> Result<(usize, String), ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError::field(key, "missing"))
    }

    fn floats(&mut self, key: &str) -> Result<Option<(usize, Vec<f64>)>, ConfigError> {
        let Some((line, v)) = self.raw(key) else {
            return Ok(None);
        };
        let items: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        let xs = items
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| ConfigError::at(line, key, format!("`{s}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(x) = xs.iter().find(|x| !x.is_finite()) {
            return Err(ConfigError::at(line, key, format!("{x} is not finite")));
        }
        Ok(Some((line, xs)))
    }

    fn float(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.floats(key)? {
            None => Ok(None),
            Some((_, xs)) if xs.len() == 1 => Ok(Some(xs[0])),
            Some((line, _)) => Err(ConfigError::at(line, key, "expected a single number")),
        }
    }

    fn integer<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| ConfigError::at(line, key, format!("`{v}` is not a non-negative integer"))),
        }
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut r = Reader { map: tokenize(text)? };
    let mut warnings = Vec::new();

    let (kind_line, kinds) = r.required("geometry.kind")?;
    let shells: Option<usize> = r.integer("geometry.shell_count")?;
    let omega0 = r.float("geometry.omega0_over_EF")?;
    let mut geometries = Vec::new();
    for k in kinds.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let g = match k {
            "box3d" | "box1d" => {
                let n = shells.ok_or_else(|| ConfigError::field("geometry.shell_count", format!("required for {k}")))?;
                if k == "box3d" {
                    Geometry::box_3d(n)
                } else {
                    Geometry::box_1d(n)
                }
            }
            "harmonic1d" => {
                let w = omega0.ok_or_else(|| ConfigError::field("geometry.omega0_over_EF", "required for harmonic1d"))?;
                Geometry::harmonic_from_omega(w).map_err(|e| ConfigError::field("geometry.omega0_over_EF", e.to_string()))?
            }
            other => {
                return Err(ConfigError::at(
                    kind_line,
                    "geometry.kind",
                    format!("unknown geometry `{other}` (box3d, box1d, harmonic1d)"),
                ))
            }
        };
        geometries.push(g);
    }

    let couplings = r
        .floats("coupling.kFa")?
        .ok_or_else(|| ConfigError::field("coupling.kFa", "missing"))?
        .1;

    let listed = r.floats("temperature.temperature_over_TF")?;
    let ranged = r.floats("temperature.log_range_over_TF")?;
    let mut temperatures = match (listed, ranged) {
        (Some(_), Some((line, _))) => {
            return Err(ConfigError::at(
                line,
                "temperature.log_range_over_TF",
                "give either temperature_over_TF or log_range_over_TF",
            ))
        }
        (Some((_, xs)), None) => xs,
        (None, Some((line, spec))) => {
            if spec.len() != 3 || !(spec[0] > 0.0 && spec[1] > spec[0] && spec[2] >= 2.0) {
                return Err(ConfigError::at(line, "temperature.log_range_over_TF", "expected `lo, hi, count` with 0 < lo < hi"));
            }
            let n = spec[2] as usize;
            (0..n)
                .map(|i| spec[0] * (spec[1] / spec[0]).powf(i as f64 / (n - 1) as f64))
                .collect()
        }
        (None, None) => return Err(ConfigError::field("temperature.temperature_over_TF", "missing")),
    };
    for t in temperatures.iter_mut() {
        if *t == 0.0 {
            warnings.push(format!("T = 0 requested; using T = {ZERO_TEMPERATURE_STANDIN} T_F"));
            *t = ZERO_TEMPERATURE_STANDIN;
        } else if *t < 0.0 {
            return Err(ConfigError::field("temperature.temperature_over_TF", format!("{t} is negative")));
        }
    }

    let time = TimeGrid {
        start: r.float("time.start_over_tauF")?.unwrap_or(0.0),
        stop: r
            .float("time.stop_over_tauF")?
            .ok_or_else(|| ConfigError::field("time.stop_over_tauF", "missing"))?,
        step: r
            .float("time.step_over_tauF")?
            .ok_or_else(|| ConfigError::field("time.step_over_tauF", "missing"))?,
    };

    let channel = match r.raw("run.channel") {
        None => ChannelSelection::Exact,
        Some((line, v)) => match v.as_str() {
            "exact" => ChannelSelection::Exact,
            "weak" => ChannelSelection::Weak,
            "both" => ChannelSelection::Both,
            _ => return Err(ConfigError::at(line, "run.channel", format!("`{v}` is not exact, weak or both"))),
        },
    };
    let outputs = match r.raw("run.outputs") {
        None => vec![Output::Trace],
        Some((line, v)) => {
            let mut outs = v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| Output::parse(s).ok_or_else(|| ConfigError::at(line, "run.outputs", format!("unknown output `{s}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            outs.sort();
            outs.dedup();
            outs
        }
    };
    let seed = r.integer("run.seed")?.unwrap_or(1);
    let output_dir = r.raw("run.output_dir").map(|(_, v)| PathBuf::from(v)).unwrap_or_else(|| PathBuf::from("out"));
    let eta = r.float("run.eta_over_EF")?.unwrap_or(fermi_dephasing::levitov::DEFAULT_ETA);
    let shots = r.integer("run.shots")?.unwrap_or(500);
    let replicas = r.integer("run.replicas")?.unwrap_or(200);

    if let Some((k, e)) = r.map.iter().find(|(_, e)| !e.used) {
        return Err(ConfigError::at(e.line, k, "unknown key"));
    }

    Ok(ExperimentConfig {
        geometries,
        couplings,
        temperatures,
        time,
        channel,
        outputs,
        seed,
        output_dir,
        eta,
        shots,
        replicas,
        warnings,
    })
}

pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::field(&path.display().to_string(), e.to_string()))?;
    parse(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "
[geometry]
kind = box3d
shell_count = 40

[coupling]
kFa = -0.5, -1.5 ; two couplings

[temperature]
temperature_over_TF = 0, 0.1

[time]
stop_over_tauF = 10
step_over_tauF = 0.5

[run]
channel = exact
outputs = metrology, trace
";

    #[test]
    fn parses_and_maps_zero_temperature() {
        let c = parse(GOOD).unwrap();
        assert_eq!(c.couplings, vec![-0.5, -1.5]);
        assert_eq!(c.temperatures, vec![ZERO_TEMPERATURE_STANDIN, 0.1]);
        assert_eq!(c.outputs, vec![Output::Trace, Output::Metrology]);
        assert_eq!(c.warnings.len(), 1);
        c.validate(false).unwrap();
    }

    #[test]
    fn empty_temperature_list_names_the_field() {
        let text = GOOD.replace("temperature_over_TF = 0, 0.1", "temperature_over_TF =");
        let e = parse(&text).unwrap().validate(false).unwrap_err();
        assert_eq!(e.field, "temperature.temperature_over_TF");
    }

    #[test]
    fn bad_number_reports_line() {
        let text = GOOD.replace("-1.5", "minus");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.field, "coupling.kFa");
        assert_eq!(e.line, Some(7));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let text = GOOD.replace("[run]", "[run]\ncolour = blue");
        let e = parse(&text).unwrap_err();
        assert_eq!(e.field, "run.colour");
    }

    #[test]
    fn weak_channel_needs_force_at_strong_coupling() {
        let text = GOOD.replace("channel = exact", "channel = weak");
        let c = parse(&text).unwrap();
        assert_eq!(c.validate(false).unwrap_err().field, "run.channel");
        c.validate(true).unwrap();
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let text = GOOD.replace("step_over_tauF = 0.5", "step_over_tauF = 0");
        assert_eq!(parse(&text).unwrap().validate(false).unwrap_err().field, "time.step_over_tauF");
    }

    #[test]
    fn log_range_expands() {
        let text = GOOD.replace("temperature_over_TF = 0, 0.1", "log_range_over_TF = 0.01, 1, 3");
        let c = parse(&text).unwrap();
        assert_eq!(c.temperatures.len(), 3);
        assert!((c.temperatures[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn round_trips_through_text() {
        let c = parse(GOOD).unwrap();
        let again = parse(&c.to_ini()).unwrap();
        assert_eq!(c.couplings, again.couplings);
        assert_eq!(c.temperatures, again.temperatures);
        assert_eq!(c.geometries, again.geometries);
        assert_eq!(c.outputs, again.outputs);
        assert_eq!(c.time, again.time);
    }
}
