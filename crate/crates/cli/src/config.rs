//! Flat TOML experiment files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use kfl_core::analysis::{AlphaMethod, Basis};
use kfl_core::model::{Frame, InitialCondition, Nonlinearity, THREE_SQRT_PI};
use kfl_core::probe::{ProbeConfig, ProbeInitial};
use kfl_core::solver::{DomainPolicy, DtSchedule, Formulation, SolverConfig};
use kfl_core::vapp::{VappSettings, ZetaRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Wave,
    SpectralCheck,
    Vapp,
    Simulate,
    Probe,
    Fit,
    Compare,
    Report,
}

impl Kind {
    pub fn name(&self) -> &'static str {
        match self {
            Kind::Wave => "wave",
            Kind::SpectralCheck => "spectral-check",
            Kind::Vapp => "vapp",
            Kind::Simulate => "simulate",
            Kind::Probe => "probe",
            Kind::Fit => "fit",
            Kind::Compare => "compare",
            Kind::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Step,
    StepPlusBump,
    CustomTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    Rest,
    Linear,
    Bramson,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    U,
    V,
}

/// One experiment. Every key is optional; the subcommand fills in `kind` when it is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Option<Kind>,

    pub nonlinearity: String,
    pub nonlinearity_param: Option<f64>,

    pub initial: InitialKind,
    pub bump_center: f64,
    pub bump_width: f64,
    pub bump_amplitude: f64,
    pub table_x: Vec<f64>,
    pub table_u: Vec<f64>,
    pub support_radius: f64,

    pub frame: FrameKind,
    pub frame_speed: f64,
    pub formulation: FormKind,
    pub dx: f64,
    pub lambda: f64,
    pub left_margin: f64,
    pub right_margin: f64,
    pub courant: f64,
    pub dt_ramp_time: f64,
    pub dt_max: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub snapshot_times: Vec<f64>,
    pub checkpoint_period: Option<f64>,
    pub levels: Vec<f64>,
    pub trace_per_decade: u32,

    pub wave_half_width: f64,
    pub wave_h: f64,
    pub wave_tol: f64,

    pub spectral_spacing: f64,
    pub spectral_eta_max: f64,
    pub adjoint_pairs: usize,
    pub v1_spacing: f64,
    pub seed: u64,

    pub gamma: Vec<f64>,
    pub seam_scale: f64,
    pub zeta_rule: ZetaRule,
    pub residual_t_min: f64,
    pub residual_t_max: f64,
    pub residual_per_decade: u32,
    pub residual_lambda: f64,

    pub probe_c: Vec<f64>,
    pub probe_eta_max: f64,
    pub probe_d_eta: f64,
    pub probe_d_tau: f64,
    pub probe_t_end: f64,
    pub probe_samples: usize,
    pub probe_bump_width: f64,
    pub rate_window_start: f64,
    pub rate_window_end: f64,

    /// Run directory read by `fit` and `compare`; relative paths resolve against the config file.
    pub source: Option<PathBuf>,
    pub fit_level: f64,
    pub fit_window_start: Option<f64>,
    pub fit_window_end: Option<f64>,
    pub fit_log_term: bool,

    pub compare_gamma: f64,
    pub compare_seam_scale: f64,
    pub alpha_method: AlphaMethod,
    pub w_eta_max: f64,

    /// Run directories aggregated by `report`.
    pub runs: Vec<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        let probe = ProbeConfig::default();
        let vapp = VappSettings::default();
        Self {
            kind: None,
            nonlinearity: "fisher".into(),
            nonlinearity_param: None,
            initial: InitialKind::Step,
            bump_center: 5.0,
            bump_width: 2.0,
            bump_amplitude: 0.5,
            table_x: Vec::new(),
            table_u: Vec::new(),
            support_radius: 0.0,
            frame: FrameKind::Bramson,
            frame_speed: 2.0,
            formulation: FormKind::V,
            dx: solver.dx,
            lambda: solver.domain.lambda,
            left_margin: solver.domain.left_margin,
            right_margin: solver.domain.right_margin,
            courant: solver.dt.courant,
            dt_ramp_time: solver.dt.ramp_time,
            dt_max: solver.dt.dt_max,
            t_start: solver.t_start,
            t_end: solver.t_end,
            snapshot_times: Vec::new(),
            checkpoint_period: None,
            levels: solver.levels,
            trace_per_decade: solver.trace_per_decade,
            wave_half_width: 30.0,
            wave_h: 0.0125,
            wave_tol: 1e-10,
            spectral_spacing: 0.005,
            spectral_eta_max: kfl_core::spectral::DEFAULT_ETA_MAX,
            adjoint_pairs: 20,
            v1_spacing: 0.002,
            seed: 1,
            gamma: vec![vapp.gamma],
            seam_scale: vapp.seam_scale,
            zeta_rule: vapp.zeta_rule,
            residual_t_min: 1e2,
            residual_t_max: 1e5,
            residual_per_decade: 2,
            residual_lambda: 6.0,
            probe_c: vec![THREE_SQRT_PI, 0.0],
            probe_eta_max: probe.eta_max,
            probe_d_eta: probe.d_eta,
            probe_d_tau: probe.d_tau,
            probe_t_end: probe.t_end,
            probe_samples: probe.samples,
            probe_bump_width: 3.0,
            rate_window_start: 1e2,
            rate_window_end: 1e4,
            source: None,
            fit_level: 0.5,
            fit_window_start: None,
            fit_window_end: None,
            fit_log_term: false,
            compare_gamma: 0.01,
            compare_seam_scale: 10.0,
            alpha_method: AlphaMethod::Matched,
            w_eta_max: 4.0,
            runs: Vec::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field, message: message.into() }
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's bytes, lower-case hex.
pub fn file_digest(bytes: &[u8]) -> String {
    sha256_hex(bytes)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config: Self = toml::from_str(&text)
            .map_err(|e| ConfigError::Parse { path: path.into(), message: e.message().to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(src) = &config.source {
            config.source = Some(base.join(src));
        }
        config.runs = config.runs.iter().map(|r| base.join(r)).collect();
        Ok(config)
    }

    /// Fixes the kind from the subcommand, rejecting a conflicting `kind` key.
    pub fn with_kind(mut self, kind: Kind) -> Result<Self, ConfigError> {
        match self.kind {
            Some(k) if k != kind => {
                Err(field("kind", format!("config declares {} but the subcommand is {}", k.name(), kind.name())))
            }
            _ => {
                self.kind = Some(kind);
                Ok(self)
            }
        }
    }

    pub fn kind(&self) -> Kind {
        self.kind.unwrap_or(Kind::Simulate)
    }

    /// Canonical JSON (sorted keys) of the whole configuration.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    /// Digest of the entries that determine a trajectory; stop time and output cadence are left out
    /// so that a checkpoint can be resumed under an extended schedule.
    pub fn numerics_hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            for key in ["kind", "t_end", "snapshot_times", "checkpoint_period", "source", "runs"] {
                map.remove(key);
            }
        }
        sha256_hex(serde_json::to_string(&value).expect("value serializes").as_bytes())
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity, ConfigError> {
        Nonlinearity::by_name(&self.nonlinearity, self.nonlinearity_param)
            .map_err(|e| field("nonlinearity", e.to_string()))
    }

    pub fn initial_condition(&self) -> Result<InitialCondition, ConfigError> {
        let mut ic = match self.initial {
            InitialKind::Step => InitialCondition::step(),
            InitialKind::StepPlusBump => {
                InitialCondition::step_plus_bump(self.bump_center, self.bump_width, self.bump_amplitude)
            }
            InitialKind::CustomTable => InitialCondition::custom_table(self.table_x.clone(), self.table_u.clone()),
        };
        ic.support_radius = self.support_radius;
        ic.validate().map_err(|e| field("initial", e.to_string()))?;
        Ok(ic)
    }

    pub fn frame(&self) -> Frame {
        match self.frame {
            FrameKind::Rest => Frame::Rest,
            FrameKind::Linear => Frame::Linear { speed: self.frame_speed },
            FrameKind::Bramson => Frame::Bramson,
            FrameKind::Refined => Frame::Refined,
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ConfigError> {
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(field("dx", format!("must be positive, got {}", self.dx)));
        }
        if !(self.t_end > self.t_start) {
            return Err(field("t_end", format!("must exceed t_start = {}", self.t_start)));
        }
        let defaults = DomainPolicy::default();
        let config = SolverConfig {
            frame: self.frame(),
            formulation: match self.formulation {
                FormKind::U => Formulation::UForm,
                FormKind::V => Formulation::VForm,
            },
            dx: self.dx,
            dt: DtSchedule { courant: self.courant, ramp_time: self.dt_ramp_time, dt_max: self.dt_max },
            domain: DomainPolicy {
                left_margin: self.left_margin,
                lambda: self.lambda,
                right_margin: self.right_margin,
                block_nodes: defaults.block_nodes,
            },
            t_start: self.t_start,
            t_end: self.t_end,
            snapshot_times: self.snapshot_times.clone(),
            checkpoint_period: self.checkpoint_period,
            levels: self.levels.clone(),
            trace_per_decade: self.trace_per_decade,
        };
        config.validate().map_err(|e| field("solver", e.to_string()))?;
        Ok(config)
    }

    pub fn vapp_settings(&self, gamma: f64, seam_scale: f64) -> VappSettings {
        VappSettings { gamma, seam_scale, zeta_rule: self.zeta_rule, ..VappSettings::default() }
    }

    pub fn probe_config(&self, c: f64) -> ProbeConfig {
        ProbeConfig {
            c,
            eta_max: self.probe_eta_max,
            d_eta: self.probe_d_eta,
            d_tau: self.probe_d_tau,
            t_end: self.probe_t_end,
            samples: self.probe_samples,
            initial: ProbeInitial::Bump { width: self.probe_bump_width },
        }
    }

    pub fn basis(&self) -> Basis {
        Basis { with_log: self.fit_log_term }
    }

    /// Field-level checks for the selected kind.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field(name, format!("must be positive and finite, got {v}")))
            }
        };
        match self.kind() {
            Kind::Wave => {
                self.nonlinearity()?;
                positive("wave_half_width", self.wave_half_width)?;
                positive("wave_h", self.wave_h)?;
                positive("wave_tol", self.wave_tol)?;
            }
            Kind::SpectralCheck => {
                positive("spectral_spacing", self.spectral_spacing)?;
                positive("spectral_eta_max", self.spectral_eta_max)?;
                positive("v1_spacing", self.v1_spacing)?;
                if self.adjoint_pairs == 0 {
                    return Err(field("adjoint_pairs", "must be at least 1"));
                }
            }
            Kind::Vapp => {
                self.nonlinearity()?;
                if self.gamma.is_empty() {
                    return Err(field("gamma", "needs at least one exponent"));
                }
                if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0 && **g < 0.1)) {
                    return Err(field("gamma", format!("{g} outside (0, 0.1)")));
                }
                positive("seam_scale", self.seam_scale)?;
                if !(self.residual_t_min >= 1.0 && self.residual_t_max > self.residual_t_min) {
                    return Err(field("residual_t_max", "need 1 <= residual_t_min < residual_t_max"));
                }
                if self.residual_per_decade == 0 {
                    return Err(field("residual_per_decade", "must be positive"));
                }
                positive("residual_lambda", self.residual_lambda)?;
            }
            Kind::Simulate => {
                self.nonlinearity()?;
                self.initial_condition()?;
                self.solver_config()?;
            }
            Kind::Probe => {
                if self.probe_c.is_empty() {
                    return Err(field("probe_c", "needs at least one boundary coefficient"));
                }
                positive("probe_d_eta", self.probe_d_eta)?;
                positive("probe_d_tau", self.probe_d_tau)?;
                positive("probe_t_end", self.probe_t_end)?;
                if !(self.rate_window_start >= 1.0 && self.rate_window_end > self.rate_window_start) {
                    return Err(field("rate_window_end", "need 1 <= rate_window_start < rate_window_end"));
                }
            }
            Kind::Fit | Kind::Compare => {
                if self.source.is_none() {
                    return Err(field("source", "names the simulate run directory to analyse"));
                }
                if !(self.fit_level > 0.0 && self.fit_level < 1.0) {
                    return Err(field("fit_level", format!("{} outside (0, 1)", self.fit_level)));
                }
                if self.kind() == Kind::Compare {
                    self.nonlinearity()?;
                    if !(self.compare_gamma > 0.0 && self.compare_gamma < 0.1) {
                        return Err(field("compare_gamma", format!("{} outside (0, 0.1)", self.compare_gamma)));
                    }
                    positive("compare_seam_scale", self.compare_seam_scale)?;
                    if !(self.w_eta_max > 0.0 && self.w_eta_max <= 4.0) {
                        return Err(field("w_eta_max", format!("{} outside (0, 4]", self.w_eta_max)));
                    }
                }
            }
            Kind::Report => {}
        }
        Ok(())
    }
}
