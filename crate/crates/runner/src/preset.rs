//! Named sweep configurations.

use crate::config::{ChannelSelection, ExperimentConfig, Output, TimeGrid, ZERO_TEMPERATURE_STANDIN};
use fermi_dephasing::basis::Geometry;
use std::path::PathBuf;

pub const PRESETS: [&str; 10] = [
    "fig2", "fig3", "fig4a", "fig4b", "fig4c", "fig4d", "figS1", "figS2", "figS3", "figS4",
];

/// Trap frequency of the 1D comparison.
const OMEGA0: f64 = 2.5e-3;

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn base(name: &str, geometry: Geometry, couplings: Vec<f64>, temperatures: Vec<f64>, stop: f64, step: f64) -> ExperimentConfig {
    ExperimentConfig {
        geometries: vec![geometry],
        couplings,
        temperatures,
        time: TimeGrid { start: 0.0, stop, step },
        channel: ChannelSelection::Exact,
        outputs: vec![Output::Trace],
        seed: 1,
        output_dir: PathBuf::from("out").join(name),
        eta: fermi_dephasing::levitov::DEFAULT_ETA,
        shots: 500,
        replicas: 200,
        warnings: Vec::new(),
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let strong = vec![-0.5, -1.5, -6.0];
    let harmonic = Geometry::harmonic_from_omega(OMEGA0).ok()?;
    // Covers omega0 t < pi on a unit step.
    let trap_stop = (std::f64::consts::PI / OMEGA0 - 1.0).floor();
    let c = match name {
        "fig2" => {
            let mut c = base(
                name,
                Geometry::box_3d(250),
                strong,
                vec![ZERO_TEMPERATURE_STANDIN, 0.01, 0.1],
                720.0,
                0.5,
            );
            c.outputs = vec![Output::Trace, Output::Spectrum];
            c.eta = 0.02;
            c.warnings.push(format!("T = 0 curve approximated by T = {ZERO_TEMPERATURE_STANDIN} T_F"));
            c
        }
        "fig3" => {
            let mut c = base(name, Geometry::box_3d(150), vec![-0.5], log_grid(0.02, 1.0, 25), 300.0, 1.0);
            c.outputs = vec![Output::Metrology];
            c
        }
        "fig4a" => {
            let mut c = base(name, Geometry::box_3d(150), strong, vec![0.2], 300.0, 1.0);
            c.outputs = vec![Output::Metrology];
            c
        }
        "fig4b" => base(name, Geometry::box_3d(150), vec![-0.5, -1.5], vec![0.2, 0.22], 300.0, 0.5),
        "fig4c" => {
            let mut c = base(name, Geometry::box_3d(250), strong, log_grid(0.05, 1.0, 12), 700.0, 1.0);
            c.outputs = vec![Output::Metrology];
            c
        }
        "fig4d" => {
            let couplings: Vec<f64> = log_grid(6.0, 0.05, 12).into_iter().map(|k| -k).collect();
            let mut c = base(name, Geometry::box_3d(500), couplings, vec![0.1], 1500.0, 1.0);
            c.outputs = vec![Output::Metrology];
            c
        }
        "figS1" => {
            let mut c = base(name, Geometry::box_3d(300), vec![-0.5, -0.2, -0.1], vec![0.2], 200.0, 0.5);
            c.channel = ChannelSelection::Both;
            c
        }
        "figS2" => {
            let temps: Vec<f64> = (1..=10).map(|i| 0.02 * i as f64).collect();
            base(name, Geometry::box_3d(150), strong, temps, 60.0, 0.25)
        }
        "figS3" => {
            let mut c = base(name, Geometry::box_1d(480), vec![-1.0, -0.01], vec![0.01, 0.1], trap_stop, 1.0);
            c.geometries.push(harmonic);
            c
        }
        "figS4" => {
            let mut c = base(name, Geometry::box_1d(480), vec![-1.0, -0.01], vec![0.1], trap_stop, 1.0);
            c.geometries.push(harmonic);
            c.outputs = vec![Output::Metrology];
            c
        }
        _ => return None,
    };
    Some(c)
}
