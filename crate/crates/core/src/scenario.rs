//! Scenario configuration: a strict JSON document describing the mesh, the
//! equation, the initial data, the time integration and the artifacts to
//! write. Unknown keys, duplicate keys and out-of-range values are errors
//! that name the offending path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::ClassifyThresholds;
use crate::constants::{best_sobolev_constant, well_constants_with_minimizer, OptimizerSettings, WellConstants};
use crate::domain::{validate_params, DiscreteOperators, Mesh1D, ProblemParams, Purpose, State};
use crate::error::{Error, Result};
use crate::functionals::{scale_to_set, TargetSet};
use crate::integrator::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub n_elements: usize,
    /// Ratio between consecutive element sizes toward `x = 1` (1 = uniform).
    pub grading: f64,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            n_elements: 128,
            grading: 1.0,
        }
    }
}

/// Spatial profile of initial data. All profiles vanish at `x = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero {},
    /// Minimizer of the Sobolev quotient, normalized to `‖u‖_p = 1`.
    SobolevMinimizer {},
    /// `sin(πx/2)`.
    Sine {},
    /// `cos²(π(x − center)/(2 width))` on `|x − center| < width`, zero elsewhere.
    Bubble {
        center: f64,
        width: f64,
    },
    /// Nodal values read from a text file: either one value per free node or
    /// one per node including `x = 0` (which must then be 0). Relative paths
    /// are resolved against the config file's directory.
    NodalFile {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub profile: Profile,
    pub velocity: Profile,
    /// Multiplier of `profile` before any set scaling.
    pub amplitude: f64,
    pub velocity_amplitude: f64,
    pub target_set: TargetSet,
    pub margin: f64,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            profile: Profile::SobolevMinimizer {},
            velocity: Profile::Zero {},
            amplitude: 1.0,
            velocity_amplitude: 1.0,
            target_set: TargetSet::None,
            margin: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub dt0: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub t_end: f64,
    /// Blow-up threshold on `‖∇u‖₂ + ‖u_t‖₂`.
    pub theta_threshold: f64,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub growth_cap: f64,
    pub damped_start: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            dt0: s.dt0,
            dt_min: s.dt_min,
            dt_max: s.dt_max,
            t_end: s.t_end,
            theta_threshold: s.blowup_threshold,
            newton_tol: s.newton_tol,
            newton_max: s.newton_max,
            growth_cap: s.growth_cap,
            damped_start: s.damped_start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstantsSection {
    pub tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Element counts for the convergence table of the `constants` command;
    /// empty means `n/4, n/2, n, 2n`.
    pub ladder: Vec<usize>,
}

impl Default for ConstantsSection {
    fn default() -> Self {
        let s = OptimizerSettings::default();
        Self {
            tol: s.tol,
            max_iters: s.max_iters,
            restarts: s.restarts,
            seed: s.seed,
            ladder: Vec::new(),
        }
    }
}

impl ConstantsSection {
    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            tol: self.tol,
            max_iters: self.max_iters,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub csv_path: PathBuf,
    pub svg_path: Option<PathBuf>,
    /// Written by `analyze`; defaults to `<csv stem>_analysis.csv`.
    pub analysis_path: Option<PathBuf>,
    /// Written by `constants`.
    pub ladder_path: PathBuf,
    /// Written by `sweep`.
    pub sweep_path: PathBuf,
    pub snapshot_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            csv_path: PathBuf::from("trajectory.csv"),
            svg_path: None,
            analysis_path: None,
            ladder_path: PathBuf::from("constants_ladder.csv"),
            sweep_path: PathBuf::from("sweep.csv"),
            snapshot_stride: 1,
        }
    }
}

impl OutputSection {
    pub fn analysis_path(&self) -> PathBuf {
        self.analysis_path.clone().unwrap_or_else(|| {
            let stem = self
                .csv_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("trajectory");
            self.csv_path.with_file_name(format!("{stem}_analysis.csv"))
        })
    }
}

/// The `sweep` command scales the base profile by `λ λ*` for `points` values
/// of `λ` evenly spaced on `[lambda_min, lambda_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub points: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            points: 20,
            lambda_min: 0.1,
            lambda_max: 3.0,
        }
    }
}

impl SweepSection {
    /// Grid of multiples of `λ*`.
    pub fn grid(&self) -> Vec<f64> {
        let step = (self.lambda_max - self.lambda_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.lambda_min + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub window_fraction: f64,
    pub decay_r2: f64,
    pub growth_factor: f64,
    pub growth_r2: f64,
    /// Start of the concavity window as a fraction of the recorded span.
    pub t0_fraction: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let c = ClassifyThresholds::default();
        Self {
            window_fraction: c.window_fraction,
            decay_r2: c.decay_r2,
            growth_factor: c.growth_factor,
            growth_r2: c.growth_r2,
            t0_fraction: 0.25,
        }
    }
}

impl AnalysisSection {
    pub fn thresholds(&self) -> ClassifyThresholds {
        ClassifyThresholds {
            window_fraction: self.window_fraction,
            decay_r2: self.decay_r2,
            growth_factor: self.growth_factor,
            growth_r2: self.growth_r2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub domain: DomainSection,
    pub params: ProblemParams,
    pub initial: InitialSection,
    pub time: TimeSection,
    pub constants: ConstantsSection,
    pub output: OutputSection,
    pub sweep: SweepSection,
    pub analysis: AnalysisSection,
    /// Directory used to resolve relative input paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

pub const STABLE_P4: &str = include_str!("../presets/stable-p4.json");
pub const UNSTABLE_P4: &str = include_str!("../presets/unstable-p4.json");

/// Built-in presets by name.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "stable-p4" => Some(STABLE_P4),
        "unstable-p4" => Some(UNSTABLE_P4),
        _ => None,
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn deserialize<'de, D: serde::Deserializer<'de>>(de: D) -> Result<ScenarioConfig>
where
    D::Error: std::fmt::Display,
{
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(if path == "." { String::new() } else { path }, e.inner().to_string())
    })
}

/// Parses and validates a config document. Keys are checked strictly,
/// including duplicates.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg = deserialize(&mut de)?;
    de.end().map_err(|e| config_err("", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `text`, applies `key=value` overrides (dotted keys, JSON values;
/// anything that is not valid JSON is taken as a string) and validates.
pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let cfg = parse_config(text)?;
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut doc = serde_json::to_value(&cfg).map_err(|e| config_err("", e.to_string()))?;
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    let mut out = deserialize(doc)?;
    out.base_dir = cfg.base_dir;
    out.validate()?;
    Ok(out)
}

fn apply_override(doc: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| config_err(item, "override must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(config_err(key, "override key must be a dotted path"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(map) => map,
            _ => return Err(config_err(parts[..i].join("."), "not an object")),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
    }
    unreachable!("loop returns on the last key")
}

/// Reads a config from `path`, falling back to a built-in preset of that
/// name when no such file exists.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig> {
    let (text, base) = match std::fs::read_to_string(path) {
        Ok(text) => (text, path.parent().map(Path::to_path_buf)),
        Err(e) => match path.to_str().and_then(preset) {
            Some(text) => (text.to_string(), None),
            None => return Err(Error::Io(e)),
        },
    };
    let mut cfg = parse_with_overrides(&text, overrides)?;
    cfg.base_dir = base;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, path: &str, message: &str| if ok { Ok(()) } else { Err(config_err(path, message)) };
        check(
            self.domain.n_elements >= 2,
            "domain.n_elements",
            "n_elements must be ≥ 2",
        )?;
        check(
            self.domain.grading.is_finite() && self.domain.grading >= 1.0,
            "domain.grading",
            "grading must be ≥ 1",
        )?;

        if let Some(v) = validate_params(&self.params, Purpose::Simulate).violations.first() {
            return Err(config_err(format!("params.{}", v.field), v.message.clone()));
        }

        let init = &self.initial;
        check(
            init.amplitude.is_finite(),
            "initial.amplitude",
            "amplitude must be finite",
        )?;
        check(
            init.velocity_amplitude.is_finite(),
            "initial.velocity_amplitude",
            "velocity_amplitude must be finite",
        )?;
        check(
            init.margin > 0.0 && init.margin < 1.0,
            "initial.margin",
            "margin must lie in (0, 1)",
        )?;
        if init.target_set != TargetSet::None {
            check(self.params.p > 2.0, "initial.target_set", "set scaling needs p > 2")?;
        }
        for (path, profile) in [("initial.profile", &init.profile), ("initial.velocity", &init.velocity)] {
            if let Profile::Bubble { center, width } = profile {
                check(
                    *width > 0.0 && *center - *width >= 0.0 && *center < 1.0,
                    path,
                    "bubble needs width > 0, center - width ≥ 0 and center < 1",
                )?;
            }
        }

        let t = &self.time;
        check(t.dt_min > 0.0, "time.dt_min", "dt_min must be > 0")?;
        check(t.dt_max >= t.dt_min, "time.dt_max", "dt_max must be ≥ dt_min")?;
        check(
            t.dt0 >= t.dt_min && t.dt0 <= t.dt_max,
            "time.dt0",
            "dt0 must lie in [dt_min, dt_max]",
        )?;
        check(t.t_end > 0.0 && t.t_end.is_finite(), "time.t_end", "t_end must be > 0")?;
        check(
            t.theta_threshold > 0.0,
            "time.theta_threshold",
            "theta_threshold must be > 0",
        )?;
        check(t.newton_tol > 0.0, "time.newton_tol", "newton_tol must be > 0")?;
        check(t.newton_max >= 1, "time.newton_max", "newton_max must be ≥ 1")?;
        check(t.growth_cap > 1.0, "time.growth_cap", "growth_cap must be > 1")?;

        let c = &self.constants;
        check(c.tol > 0.0, "constants.tol", "tol must be > 0")?;
        check(c.max_iters >= 1, "constants.max_iters", "max_iters must be ≥ 1")?;
        check(
            c.ladder.iter().all(|n| *n >= 2),
            "constants.ladder",
            "ladder entries must be ≥ 2",
        )?;

        check(
            self.output.snapshot_stride >= 1,
            "output.snapshot_stride",
            "snapshot_stride must be ≥ 1",
        )?;

        let s = &self.sweep;
        check(s.points >= 2, "sweep.points", "points must be ≥ 2")?;
        check(s.lambda_min > 0.0, "sweep.lambda_min", "lambda_min must be > 0")?;
        check(
            s.lambda_max > s.lambda_min && s.lambda_max.is_finite(),
            "sweep.lambda_max",
            "lambda_max must exceed lambda_min",
        )?;

        let a = &self.analysis;
        check(
            a.window_fraction > 0.0 && a.window_fraction < 1.0,
            "analysis.window_fraction",
            "window_fraction must lie in (0, 1)",
        )?;
        check(
            (0.0..=1.0).contains(&a.decay_r2),
            "analysis.decay_r2",
            "decay_r2 must lie in [0, 1]",
        )?;
        check(
            (0.0..=1.0).contains(&a.growth_r2),
            "analysis.growth_r2",
            "growth_r2 must lie in [0, 1]",
        )?;
        check(
            a.growth_factor > 1.0,
            "analysis.growth_factor",
            "growth_factor must be > 1",
        )?;
        check(
            (0.0..1.0).contains(&a.t0_fraction),
            "analysis.t0_fraction",
            "t0_fraction must lie in [0, 1)",
        )?;
        Ok(())
    }

    pub fn mesh(&self) -> Result<Mesh1D> {
        Mesh1D::new(self.domain.n_elements, self.domain.grading)
    }

    pub fn sim_config(&self) -> SimConfig {
        let t = &self.time;
        SimConfig {
            dt0: t.dt0,
            dt_min: t.dt_min,
            dt_max: t.dt_max,
            t_end: t.t_end,
            newton_tol: t.newton_tol,
            newton_max: t.newton_max,
            blowup_threshold: t.theta_threshold,
            growth_cap: t.growth_cap,
            snapshot_stride: self.output.snapshot_stride,
            damped_start: t.damped_start,
        }
    }

    /// Assembles operators and computes the constants this scenario needs.
    pub fn setup(&self) -> Result<Setup> {
        let mesh = self.mesh()?;
        let ops = DiscreteOperators::assemble(&mesh, &self.params);
        let settings = self.constants.settings();
        let (constants, minimizer) = if self.params.p > 2.0 {
            let (wc, minimizer) = well_constants_with_minimizer(&mesh, self.params.p, &settings)?;
            (Some(wc), minimizer)
        } else {
            (None, best_sobolev_constant(&mesh, self.params.p, &settings)?.minimizer)
        };
        Ok(Setup {
            mesh,
            params: self.params,
            ops,
            constants,
            minimizer,
        })
    }

    fn profile_values(&self, profile: &Profile, setup: &Setup) -> Result<Vec<f64>> {
        let mesh = &setup.mesh;
        Ok(match profile {
            Profile::Zero {} => vec![0.0; mesh.n_free()],
            Profile::SobolevMinimizer {} => setup.minimizer.clone(),
            Profile::Sine {} => mesh.interpolate(|x| (std::f64::consts::FRAC_PI_2 * x).sin()),
            Profile::Bubble { center, width } => mesh.interpolate(|x| {
                let z = (x - center) / width;
                if z.abs() < 1.0 {
                    (std::f64::consts::FRAC_PI_2 * z).cos().powi(2)
                } else {
                    0.0
                }
            }),
            Profile::NodalFile { path } => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                read_nodal_file(&full, mesh.n_free())?
            }
        })
    }

    /// `amplitude · profile`, before any set scaling.
    pub fn base_profile(&self, setup: &Setup) -> Result<Vec<f64>> {
        let values = self.profile_values(&self.initial.profile, setup)?;
        Ok(values.iter().map(|x| self.initial.amplitude * x).collect())
    }

    pub fn base_velocity(&self, setup: &Setup) -> Result<Vec<f64>> {
        let values = self.profile_values(&self.initial.velocity, setup)?;
        Ok(values.iter().map(|x| self.initial.velocity_amplitude * x).collect())
    }

    /// Initial state with the requested set scaling applied to the profile.
    pub fn initial_data(&self, setup: &Setup) -> Result<InitialData> {
        let base = self.base_profile(setup)?;
        let lambda = match self.initial.target_set {
            TargetSet::None => 1.0,
            target => {
                let d = setup.well_depth()?;
                scale_to_set(&base, target, self.initial.margin, d, &setup.ops)?
            }
        };
        let u = base.iter().map(|x| lambda * x).collect();
        let state = State::new(0.0, u, self.base_velocity(setup)?)?;
        Ok(InitialData { state, lambda, base })
    }
}

fn read_nodal_file(path: &Path, n_free: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let field = "initial.profile.path";
    let values: Vec<f64> = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| config_err(field, format!("not a number: {s}")))
        })
        .collect::<Result<_>>()?;
    if values.len() == n_free + 1 {
        if values[0] != 0.0 {
            return Err(config_err(field, "value at x = 0 must be 0"));
        }
        return Ok(values[1..].to_vec());
    }
    if values.len() != n_free {
        return Err(config_err(
            field,
            format!("expected {n_free} or {} values, found {}", n_free + 1, values.len()),
        ));
    }
    Ok(values)
}

/// Mesh, operators and constants shared by every run of a scenario.
#[derive(Debug, Clone)]
pub struct Setup {
    pub mesh: Mesh1D,
    pub params: ProblemParams,
    pub ops: DiscreteOperators,
    /// Absent for `p = 2`, where the well is not defined.
    pub constants: Option<WellConstants>,
    pub minimizer: Vec<f64>,
}

impl Setup {
    pub fn well_depth(&self) -> Result<f64> {
        self.constants
            .as_ref()
            .map(|c| c.d)
            .ok_or_else(|| Error::InvalidParams("the potential well needs p > 2".into()))
    }
}

#[derive(Debug, Clone)]
pub struct InitialData {
    pub state: State,
    /// Scaling applied to the base profile.
    pub lambda: f64,
    pub base: Vec<f64>,
}
