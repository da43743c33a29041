//! Run configuration documents and CSV artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{default_budgets, default_fractions, DesignOutcome, DesignPoint, DesignSpec, TransientTarget};
use crate::error::{Error, Result};
use crate::gsc::ResponseSpec;
use crate::harness::{Event, LearningCurve, PolicySpec, Scenario};
use crate::scalar::{db, Real};
use crate::signal_model::{FarEndModel, Interferer, LemPlant, NearEndModel, PlantParams};

pub const CURVE_HEADER: &str = "n,J_mc,J_model,J_mc_dB,J_model_dB,warmup";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub mics: usize,
    pub taps: usize,
    pub fs: f64,
    pub t60: f64,
    pub oversampling: usize,
    pub mic_spacing: usize,
    pub seed: u64,
    #[serde(default)]
    pub per_run: bool,
    #[serde(default)]
    pub look_delay_step: i64,
}

impl PlantSection {
    pub fn params(&self) -> PlantParams {
        PlantParams {
            mics: self.mics,
            taps: self.taps,
            fs: self.fs,
            t60: self.t60,
            oversampling: self.oversampling,
            mic_spacing: self.mic_spacing,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsSection {
    pub far_end: FarEndModel,
    #[serde(default)]
    pub eta: f64,
    pub noise_var: f64,
    /// Interferer present from the first sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer: Option<Interferer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GscSection {
    pub n_bf: usize,
    pub n_f: usize,
    pub n_aec: usize,
    pub response: ResponseSpec,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    #[serde(default)]
    pub events: Vec<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_samples: usize,
    pub runs: usize,
    pub base_seed: u64,
    /// Moving-average length used by `compare`.
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    101
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    pub target_jinf_db: f64,
    pub transient: TransientTarget,
    pub mics: Vec<usize>,
    pub n_aec: Vec<usize>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default = "default_fractions")]
    pub aec_fractions: Vec<f64>,
    #[serde(default)]
    pub whitened: bool,
    #[serde(default = "yes")]
    pub check_monotonicity: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    /// File-name prefix for every artifact.
    #[serde(default = "default_tag")]
    pub tag: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from(".")
}

fn default_tag() -> String {
    "run".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir(), tag: default_tag() }
    }
}

impl OutputSection {
    pub fn path(&self, what: &str) -> PathBuf {
        self.dir.join(format!("{}_{what}.csv", self.tag))
    }
}

/// One configuration file fully determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantSection,
    pub signals: SignalsSection,
    pub gsc: GscSection,
    pub policy: PolicySpec,
    #[serde(default)]
    pub schedule: ScheduleSection,
    pub montecarlo: MonteCarloSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
    #[serde(default)]
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::Format { path: path.into(), message: e.to_string().trim_end().to_string() })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            plant: self.plant.params(),
            plant_seed: self.plant.seed,
            plant_per_run: self.plant.per_run,
            look_delay_step: self.plant.look_delay_step,
            far_end: self.signals.far_end.clone(),
            eta: self.signals.eta,
            near_end: NearEndModel { noise_var: self.signals.noise_var, interferer: self.signals.interferer.clone() },
            n_bf: self.gsc.n_bf,
            n_f: self.gsc.n_f,
            n_aec: self.gsc.n_aec,
            response: self.gsc.response.clone(),
            policy: self.policy.clone(),
            events: self.schedule.events.clone(),
            n_samples: self.montecarlo.n_samples,
            runs: self.montecarlo.runs,
            base_seed: self.montecarlo.base_seed,
        }
    }

    pub fn design_spec(&self) -> Result<DesignSpec> {
        let d = self.design.as_ref().ok_or_else(|| Error::Config("missing [design] section".into()))?;
        Ok(DesignSpec {
            target_jinf_db: d.target_jinf_db,
            transient: d.transient.clone(),
            mics: d.mics.clone(),
            n_aec: d.n_aec.clone(),
            budgets: d.budgets.clone(),
            aec_fractions: d.aec_fractions.clone(),
            whitened: d.whitened,
            check_monotonicity: d.check_monotonicity,
            n_bf: self.gsc.n_bf,
            n_f: self.gsc.n_f,
            response: self.gsc.response.clone(),
            plant: self.plant.params(),
            plant_seed: self.plant.seed,
            look_delay_step: self.plant.look_delay_step,
            far_end: self.signals.far_end.clone(),
            near_end: NearEndModel { noise_var: self.signals.noise_var, interferer: self.signals.interferer.clone() },
        })
    }
}

/// Nine significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// Power and its dB value, both from the printed power so the columns agree.
fn power_cells(x: Option<f64>) -> (String, String) {
    match x {
        Some(p) => {
            let s = fmt_num(p);
            let printed: f64 = s.parse().expect("formatted float parses");
            (s, fmt_num(db(printed)))
        }
        None => (String::new(), String::new()),
    }
}

pub fn curve_csv(curve: &LearningCurve) -> String {
    let n = curve.j_mc.len().max(curve.j_model.as_ref().map_or(0, Vec::len));
    let mut out = String::with_capacity(64 * (n + 1));
    out.push_str(CURVE_HEADER);
    out.push('\n');
    for i in 0..n {
        let (mc, mc_db) = power_cells(curve.j_mc.get(i).copied());
        let (m, m_db) = power_cells(curve.j_model.as_ref().and_then(|v| v.get(i).copied()));
        let w = u8::from(i < curve.warmup);
        let _ = writeln!(out, "{i},{mc},{m},{mc_db},{m_db},{w}");
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_curve_csv(curve: &LearningCurve, path: &Path) -> Result<()> {
    write_text(path, &curve_csv(curve))
}

/// A curve file read back; missing columns come back empty.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveFile {
    pub j_mc: Vec<f64>,
    pub j_model: Vec<f64>,
    pub j_mc_db: Vec<f64>,
    pub j_model_db: Vec<f64>,
    pub warmup: usize,
}

pub fn read_curve_csv(path: &Path) -> Result<CurveFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_curve_csv(&text).map_err(|message| Error::Format { path: path.into(), message })
}

pub fn parse_curve_csv(text: &str) -> std::result::Result<CurveFile, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CURVE_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    let mut f = CurveFile { j_mc: vec![], j_model: vec![], j_mc_db: vec![], j_model_db: vec![], warmup: 0 };
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 6 {
            return Err(format!("row {row}: expected 6 cells, found {}", cells.len()));
        }
        let n: usize = cells[0].parse().map_err(|e| format!("row {row}: {e}"))?;
        if n != row {
            return Err(format!("row {row}: sample index {n}"));
        }
        let cols = [&mut f.j_mc, &mut f.j_model, &mut f.j_mc_db, &mut f.j_model_db];
        for (col, cell) in cols.into_iter().zip(&cells[1..5]) {
            if !cell.is_empty() {
                col.push(cell.parse().map_err(|e| format!("row {row}: {e}"))?);
            }
        }
        match cells[5] {
            "1" => f.warmup += 1,
            "0" => {}
            w => return Err(format!("row {row}: warm-up flag {w:?}")),
        }
    }
    Ok(f)
}

/// One row per tap, one column per microphone.
pub fn plant_csv<T: Real>(plant: &LemPlant<T>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..plant.mics()).map(|m| format!("mic{m}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for k in 0..plant.taps() {
        let row: Vec<String> = (0..plant.mics()).map(|m| fmt_num(plant.h[(k, m)].as_f64())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_plant_csv<T: Real>(plant: &LemPlant<T>, path: &Path) -> Result<()> {
    write_text(path, &plant_csv(plant))
}

pub fn read_plant_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let fmt_err = |message: String| Error::Format { path: path.into(), message };
    let mut lines = text.lines();
    let mics = lines.next().ok_or_else(|| fmt_err("empty file".into()))?.split(',').count();
    let mut data = Vec::new();
    let mut taps = 0;
    for line in lines {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|e| fmt_err(format!("tap {taps}: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != mics {
            return Err(fmt_err(format!("tap {taps}: {} columns, expected {mics}", row.len())));
        }
        data.extend(row);
        taps += 1;
    }
    Ok(DMatrix::from_row_slice(taps, mics, &data))
}

pub const DESIGN_HEADER: &str = "rank,mics,n_aec,budget,aec_fraction,mu_aec,mu_bf,lambda,J_min_dB,J_inf_dB,J_at_n_dB";

fn design_row(rank: usize, p: &DesignPoint) -> String {
    format!(
        "{rank},{},{},{},{},{},{},{},{},{},{}",
        p.mics,
        p.n_aec,
        fmt_num(p.budget),
        opt_num(p.aec_fraction),
        opt_num(p.mu_aec),
        opt_num(p.mu_bf),
        opt_num(p.lambda),
        fmt_num(p.j_min_db),
        fmt_num(p.j_inf_db),
        fmt_num(p.j_at_n_db)
    )
}

/// Ranked feasible points; an infeasible outcome yields only the header.
pub fn design_csv(outcome: &DesignOutcome) -> String {
    let mut out = String::from(DESIGN_HEADER);
    out.push('\n');
    if let DesignOutcome::Feasible(d) = outcome {
        for (k, p) in d.ranked.iter().enumerate() {
            out.push_str(&design_row(k + 1, p));
            out.push('\n');
        }
    }
    out
}

pub fn write_design_csv(outcome: &DesignOutcome, path: &Path) -> Result<()> {
    write_text(path, &design_csv(outcome))
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[plant]
mics = 2
taps = 32
fs = 8000.0
t60 = 0.004
oversampling = 5
mic_spacing = 1
seed = 3

[signals]
far_end = { kind = "ar1", a1 = -0.5, variance = 1.0 }
noise_var = 0.01

[gsc]
n_bf = 4
n_f = 4
n_aec = 35
response = "linear_phase"

[policy]
kind = "split"
mu_aec = 0.001
mu_bf = 0.002

[[schedule.events]]
at = 100
kind = "dtalk_on"
interferer = { power = 1.0, a1 = -0.9, delay_step = 1 }
policy = { kind = "split", mu_aec = 0.0, mu_bf = 0.002 }

[[schedule.events]]
at = 200
kind = "plant_change"
seed = 9

[montecarlo]
n_samples = 400
runs = 3
base_seed = 1
"#;

    #[test]
    fn config_round_trip() {
        let a = RunConfig::from_toml_str(EXAMPLE).unwrap();
        assert_eq!(a.montecarlo.window, 101);
        assert_eq!(a.schedule.events.len(), 2);
        let text = a.to_toml_string().unwrap();
        let b = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(a, b);
        assert_eq!(text, b.to_toml_string().unwrap());
        a.scenario().validate().unwrap();
    }

    #[test]
    fn misspelled_key_is_named() {
        let bad = EXAMPLE.replace("noise_var", "noise_variance");
        let e = RunConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(e.contains("noise_variance"), "{e}");
        let bad = EXAMPLE.replace("mu_bf = 0.002\n\n[[", "mu_bf = 0.002\nmu_xx = 1.0\n\n[[");
        let e = RunConfig::from_toml_str(&bad).unwrap_err().to_string();
        assert!(e.contains("mu_xx"), "{e}");
    }

    #[test]
    fn curve_csv_format() {
        let c = LearningCurve {
            j_mc: vec![1.0, 0.5, 0.123456789123],
            j_model: Some(vec![1.0, 0.25, 0.1]),
            runs: 1,
            divergent: vec![],
            warmup: 2,
            segment_starts: vec![0],
        };
        let s = curve_csv(&c);
        assert!(!s.contains('\r'));
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CURVE_HEADER);
        assert_eq!(lines[3], "2,1.23456789e-1,1.00000000e-1,-9.08485023e0,-1.00000000e1,0");
        let f = parse_curve_csv(&s).unwrap();
        assert_eq!(f.warmup, 2);
        assert_eq!(f.j_model, vec![1.0, 0.25, 0.1]);
        assert_eq!(curve_csv(&c), s);
    }

    #[test]
    fn model_only_curve_leaves_mc_blank() {
        let c = LearningCurve {
            j_mc: vec![],
            j_model: Some(vec![2.0, 1.0]),
            runs: 0,
            divergent: vec![],
            warmup: 5,
            segment_starts: vec![0],
        };
        let s = curve_csv(&c);
        assert_eq!(s.lines().nth(1).unwrap(), "0,,2.00000000e0,,3.01029996e0,1");
        let f = parse_curve_csv(&s).unwrap();
        assert!(f.j_mc.is_empty());
        assert_eq!(f.warmup, 2);
    }
}
