//! Run configuration: one TOML document with defaults for every field,
//! plus `key.path=value` overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::charkernel::CellRule;
use crate::error::{Error, Result};
use crate::evolution::{EvolveConfig, DEFAULT_JACOBIAN_FLOOR, DEFAULT_PICARD_SAMPLES};
use crate::initdata::{build_grid, FieldSource, Grid, InitialData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    #[default]
    TwoComponent,
    /// `v0 = u0`
    Forq,
    /// `v0(x) = u0(−x)`
    NonlocalForq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    #[default]
    Rk4,
    Picard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n_points: usize,
    pub pad: f64,
    pub cell_rule: CellRule,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_width: 30.0,
            n_points: 2048,
            pad: 5.0,
            cell_rule: CellRule::EndCorrected,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: f64,
    /// Forward horizon (≥ 0).
    pub horizon: f64,
    /// Length of the backward run (≥ 0); the run goes to `−backward_horizon`.
    pub backward_horizon: f64,
    pub store_every: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            dt: 1e-3,
            horizon: 0.1,
            backward_horizon: 0.0,
            store_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub jacobian_floor: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub picard_samples: usize,
    /// Lower bound `c` on `∂ξy0` and target bound `l` for the contraction horizon.
    pub c: f64,
    pub l: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            jacobian_floor: DEFAULT_JACOBIAN_FLOOR,
            picard_tol: 1e-10,
            picard_max_iter: 100,
            picard_samples: DEFAULT_PICARD_SAMPLES,
            c: 1.0,
            l: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Zero,
    #[default]
    Gaussian,
    ShiftedGaussian,
    SechSquared,
    /// Narrow nonnegative momentum pair meeting the sufficient blow-up condition.
    Spike,
    /// Two-column sample files.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataForm {
    #[default]
    Velocity,
    Momentum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub preset: Preset,
    pub amplitude: f64,
    pub width: f64,
    /// gaussian / sech-squared: centre of v0; shifted-gaussian: ±centre of u0, v0.
    pub shift: f64,
    /// spike: n0 width, amplitude ratio and offset relative to m0.
    pub spike_n_width: f64,
    pub spike_n_ratio: f64,
    pub spike_n_offset: f64,
    pub u_file: Option<PathBuf>,
    pub v_file: Option<PathBuf>,
    /// Whether the files hold velocities or momenta.
    pub file_form: DataForm,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            preset: Preset::Gaussian,
            amplitude: 1.0,
            width: 1.0,
            shift: 1.0,
            spike_n_width: 0.04,
            spike_n_ratio: 0.8,
            spike_n_offset: 0.1,
            u_file: None,
            v_file: None,
            file_form: DataForm::Velocity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub snapshot_times: Vec<f64>,
    /// Uniform x-nodes per snapshot on `[−L, L]`; 0 uses the ξ-grid size.
    pub snapshot_points: usize,
    pub time_derivatives: bool,
    pub checkpoints: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            snapshot_times: Vec::new(),
            snapshot_points: 0,
            time_derivatives: false,
            checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub n_points: usize,
    /// Periodic box half-width as a multiple of the ξ-grid half-width.
    pub box_factor: f64,
    pub dt: f64,
    pub halving_tol: Option<f64>,
    /// Comparison window `|x| ≤ window`; 0 uses `L − pad`.
    pub window: f64,
    /// Simultaneous 2× refinement levels for compare-oracle.
    pub levels: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_points: 4096,
            box_factor: 2.0,
            dt: 1e-3,
            halving_tol: None,
            window: 0.0,
            levels: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupConfig {
    /// Probe position; argmax of `m0 + n0` when absent.
    pub probe: Option<f64>,
    /// Random probes drawn by blowup-scan from the joint support of m0, n0.
    pub random_probes: usize,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig {
            probe: None,
            random_probes: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzConfig {
    pub scales: Vec<f64>,
    pub bump_center: f64,
    pub bump_width: f64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig {
            scales: vec![1e-2, 1e-3, 1e-4],
            bump_center: 0.5,
            bump_width: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub integrator: Integrator,
    pub seed: u64,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub tolerances: Tolerances,
    pub data: DataSpec,
    pub output: OutputConfig,
    pub oracle: OracleConfig,
    pub blowup: BlowupConfig,
    pub lipschitz: LipschitzConfig,
}

fn gauss(center: f64, width: f64, amp: f64) -> FieldSource {
    FieldSource::function(move |x| {
        let s = (x - center) / width;
        amp * (-s * s).exp()
    })
}

fn sech2(center: f64, width: f64, amp: f64) -> FieldSource {
    FieldSource::function(move |x| {
        let c = ((x - center) / width).cosh();
        amp / (c * c)
    })
}

/// Reads whitespace-separated `x value` rows; `#` starts a comment.
pub fn read_samples(path: &Path) -> Result<FieldSource> {
    let text = std::fs::read_to_string(path)?;
    let mut xs = Vec::new();
    let mut vs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))
        };
        if cols.len() != 2 {
            return Err(Error::Parse(format!(
                "{}:{}: expected two columns, found {}",
                path.display(),
                lineno + 1,
                cols.len()
            )));
        }
        xs.push(parse(cols[0])?);
        vs.push(parse(cols[1])?);
    }
    FieldSource::table(xs, vs)
}

/// Sources for the two components before any scenario reduction.
#[derive(Debug, Clone)]
pub struct Sources {
    pub a: FieldSource,
    pub b: FieldSource,
    pub form: DataForm,
}

impl DataSpec {
    pub fn sources(&self) -> Result<Sources> {
        let (a, w, s) = (self.amplitude, self.width, self.shift);
        let velocity = |a, b| Sources {
            a,
            b,
            form: DataForm::Velocity,
        };
        Ok(match self.preset {
            Preset::Zero => velocity(
                FieldSource::function(|_| 0.0),
                FieldSource::function(|_| 0.0),
            ),
            Preset::Gaussian => velocity(gauss(0.0, w, a), gauss(s, w, a)),
            Preset::ShiftedGaussian => velocity(gauss(s, w, a), gauss(-s, w, a)),
            Preset::SechSquared => velocity(sech2(0.0, w, a), sech2(s, w, a)),
            Preset::Spike => Sources {
                a: gauss(0.0, w, a),
                b: gauss(
                    self.spike_n_offset,
                    self.spike_n_width,
                    self.spike_n_ratio * a,
                ),
                form: DataForm::Momentum,
            },
            Preset::File => {
                let u = self
                    .u_file
                    .as_ref()
                    .ok_or_else(|| Error::config("data.u_file", "required for the file preset"))?;
                let a = read_samples(u)?;
                let b = match &self.v_file {
                    Some(v) => read_samples(v)?,
                    None => a.clone(),
                };
                Sources {
                    a,
                    b,
                    form: self.file_form,
                }
            }
        })
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| {
            Error::config(unknown_field(&e.to_string()), e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    /// The narrow-momentum collapse setup on a fine grid.
    pub fn blowup_preset() -> Self {
        RunConfig {
            grid: GridConfig {
                half_width: 4.0,
                n_points: 8001,
                pad: 0.5,
                cell_rule: CellRule::EndCorrected,
            },
            time: TimeConfig {
                dt: 2e-3,
                horizon: 1.0,
                backward_horizon: 0.0,
                store_every: 1,
            },
            data: DataSpec {
                preset: Preset::Spike,
                amplitude: 10.0,
                width: 0.015,
                ..DataSpec::default()
            },
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.half_width.is_finite() && g.half_width > 0.0) {
            return Err(Error::config("grid.half_width", "must be finite and > 0"));
        }
        if g.n_points < crate::initdata::MIN_STENCIL_POINTS {
            return Err(Error::config("grid.n_points", "must be at least 16"));
        }
        if !(g.pad >= 0.0 && g.pad < g.half_width) {
            return Err(Error::config(
                "grid.pad",
                "must satisfy 0 <= pad < half_width",
            ));
        }
        let t = &self.time;
        if !(t.dt.is_finite() && t.dt > 0.0) {
            return Err(Error::config("time.dt", "must be finite and > 0"));
        }
        if !(t.horizon.is_finite() && t.horizon >= 0.0) {
            return Err(Error::config("time.horizon", "must be finite and >= 0"));
        }
        if !(t.backward_horizon.is_finite() && t.backward_horizon >= 0.0) {
            return Err(Error::config(
                "time.backward_horizon",
                "must be finite and >= 0",
            ));
        }
        if t.store_every == 0 {
            return Err(Error::config("time.store_every", "must be >= 1"));
        }
        let tol = &self.tolerances;
        if !(tol.jacobian_floor.is_finite() && tol.jacobian_floor >= 0.0) {
            return Err(Error::config(
                "tolerances.jacobian_floor",
                "must be finite and >= 0",
            ));
        }
        if !(tol.picard_tol > 0.0) {
            return Err(Error::config("tolerances.picard_tol", "must be > 0"));
        }
        if tol.picard_samples < 2 {
            return Err(Error::config("tolerances.picard_samples", "must be >= 2"));
        }
        if !(tol.l > 0.0 && tol.l < tol.c) {
            return Err(Error::config("tolerances.l", "must satisfy 0 < l < c"));
        }
        let d = &self.data;
        if !(d.amplitude.is_finite() && d.width.is_finite() && d.width > 0.0 && d.shift.is_finite())
        {
            return Err(Error::config(
                "data",
                "amplitude, width, shift must be finite; width > 0",
            ));
        }
        if d.preset == Preset::Spike && !(d.spike_n_width > 0.0 && d.spike_n_ratio.is_finite()) {
            return Err(Error::config("data.spike_n_width", "must be > 0"));
        }
        if d.preset == Preset::File && d.u_file.is_none() {
            return Err(Error::config("data.u_file", "required for the file preset"));
        }
        if self.output.snapshot_times.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("output.snapshot_times", "must be finite"));
        }
        let o = &self.oracle;
        if o.n_points < 16 || !o.n_points.is_multiple_of(2) {
            return Err(Error::config("oracle.n_points", "must be even and >= 16"));
        }
        if !(o.box_factor >= 1.0) {
            return Err(Error::config("oracle.box_factor", "must be >= 1"));
        }
        if !(o.dt > 0.0) {
            return Err(Error::config("oracle.dt", "must be > 0"));
        }
        if o.levels == 0 {
            return Err(Error::config("oracle.levels", "must be >= 1"));
        }
        if self.lipschitz.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("lipschitz.scales", "must be positive"));
        }
        if !(self.lipschitz.bump_width > 0.0) {
            return Err(Error::config("lipschitz.bump_width", "must be > 0"));
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid> {
        build_grid(self.grid.half_width, self.grid.n_points, self.grid.pad)
    }

    /// Sources after the scenario reduction.
    pub fn reduced_sources(&self) -> Result<Sources> {
        let mut s = self.data.sources()?;
        match self.scenario {
            Scenario::TwoComponent => {}
            Scenario::Forq => s.b = s.a.clone(),
            Scenario::NonlocalForq => s.b = s.a.reflected(),
        }
        Ok(s)
    }

    pub fn initial_data(&self) -> Result<InitialData> {
        let s = self.reduced_sources()?;
        build_data(&s, self.build_grid()?, self.grid.cell_rule)
    }

    /// Stepper settings for one direction (`sign` = ±1).
    pub fn evolve_config(&self, sign: f64) -> EvolveConfig {
        let horizon = if sign < 0.0 {
            -self.time.backward_horizon
        } else {
            self.time.horizon
        };
        EvolveConfig {
            dt: self.time.dt,
            horizon,
            jacobian_floor: self.tolerances.jacobian_floor,
            store_every: self.time.store_every,
            stop_times: self
                .output
                .snapshot_times
                .iter()
                .map(|t| t.abs() * sign)
                .collect(),
            diagnostics: true,
            min_dt: 1e-12_f64.min(0.5 * self.time.dt),
        }
    }
}

pub fn build_data(s: &Sources, grid: Grid, rule: CellRule) -> Result<InitialData> {
    match s.form {
        DataForm::Velocity => {
            InitialData::from_velocity(s.a.clone(), s.b.clone(), None, grid, rule)
        }
        DataForm::Momentum => {
            InitialData::from_momentum(s.a.clone(), s.b.clone(), None, grid, rule)
        }
    }
}

fn unknown_field(msg: &str) -> String {
    // toml reports "unknown field `x`"; surface the name when present
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

/// Sets `a.b.c = value` in a TOML tree; the value is parsed as TOML when
/// possible and kept as a string otherwise.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key.path=value"))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::config(spec, "empty key"));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for key in &keys[..keys.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{key}` is not inside a table")))?;
        cur = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::config(path, "parent is not a table"))?;
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = RunConfig::from_toml_str(
            "[time]\ndt = 0.01\n",
            &[
                "time.dt=5e-4".into(),
                "scenario=forq".into(),
                "output.snapshot_times=[0.01, 0.02]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.time.dt, 5e-4);
        assert_eq!(c.scenario, Scenario::Forq);
        assert_eq!(c.output.snapshot_times, vec![0.01, 0.02]);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_toml_str("", &["grid.pad=40".into()]).unwrap_err();
        assert!(e.to_string().contains("grid.pad"), "{e}");
        let e = RunConfig::from_toml_str("[grid]\nbogus = 1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = RunConfig::from_toml_str("", &["tolerances.l=2".into()]).unwrap_err();
        assert!(e.to_string().contains("tolerances.l"), "{e}");
    }

    #[test]
    fn shipped_configs_parse() {
        for text in [
            include_str!("../../../configs/gaussian.toml"),
            include_str!("../../../configs/spike.toml"),
            include_str!("../../../configs/nonlocal.toml"),
        ] {
            RunConfig::from_toml_str(text, &[]).unwrap();
        }
        let spike =
            RunConfig::from_toml_str(include_str!("../../../configs/spike.toml"), &[]).unwrap();
        assert_eq!(spike.data, RunConfig::blowup_preset().data);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::blowup_preset();
        let back = RunConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn reductions_tie_the_components() {
        let mut c = RunConfig::default();
        c.grid.n_points = 257;
        c.data.preset = Preset::ShiftedGaussian;
        c.scenario = Scenario::Forq;
        let d = c.initial_data().unwrap();
        assert_eq!(d.u0(), d.v0());
        c.scenario = Scenario::NonlocalForq;
        let d = c.initial_data().unwrap();
        let rev: Vec<f64> = d.u0().iter().rev().copied().collect();
        assert_eq!(d.v0(), &rev[..]);
    }

    #[test]
    fn sample_files_are_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.txt");
        let mut text = String::from("# x u\n");
        for k in 0..=400 {
            let x = -20.0 + 0.1 * k as f64;
            text.push_str(&format!("{x} {}\n", (-x * x).exp()));
        }
        std::fs::write(&p, text).unwrap();
        let mut c = RunConfig::default();
        c.grid.n_points = 401;
        c.data.preset = Preset::File;
        c.data.u_file = Some(p.clone());
        let d = c.initial_data().unwrap();
        let mid = d.grid().len() / 2;
        assert!((d.u0()[mid] - 1.0).abs() < 1e-12);

        std::fs::write(&p, "1 2 3\n").unwrap();
        assert!(matches!(read_samples(&p), Err(Error::Parse(_))));
    }
}
