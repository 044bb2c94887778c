//! Scenario files, batch commands, CSV output and run manifests.
//!
//! A scenario is one JSON document. Four-element per-channel lists follow the
//! channel order (A,1),(A,2),(B,1),(B,2): particle-major, level-minor.
//! CSV values are written with 17 significant digits; every file is written
//! to a temporary sibling and renamed into place, and the manifest is the
//! last file written.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::{Bath, BathError, ChannelSet, Decoupled, Detuned, GaussianBathModel};
use crate::decoherence::{integrated_j, DecoherenceError, DecoherenceTrajectory, QuadratureConfig};
use crate::dynamics::{
    bell_state, dark_state, discrete_bath_oracle, fidelity, propagate, CVector, DynamicsError,
    OracleOptions, PropagationMode, NORMALIZATION_TOLERANCE,
};
use crate::modulation::{ModulationError, PulseSequence};
use crate::symmetry::{
    cross_suppression, deviation_of, optimize_pulses, FreeParameter, OptimizationProblem,
    OptimizationStatus, ParameterBounds, SymmetryError, SymmetryKind, SymmetryTarget,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
/// Exit code for I/O failures, outside the validation/numerical classes.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => EXIT_VALIDATION,
            RunError::Numerical(_) => EXIT_NUMERICAL,
            RunError::Io { .. } => EXIT_IO,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<BathError> for RunError {
    fn from(e: BathError) -> Self {
        match e {
            BathError::Indefinite { .. } => RunError::Numerical(e.to_string()),
            _ => RunError::Validation(e.to_string()),
        }
    }
}

impl From<ModulationError> for RunError {
    fn from(e: ModulationError) -> Self {
        RunError::Validation(e.to_string())
    }
}

impl From<DecoherenceError> for RunError {
    fn from(e: DecoherenceError) -> Self {
        match e {
            DecoherenceError::Config(_)
            | DecoherenceError::Time(_)
            | DecoherenceError::ChannelMismatch { .. } => RunError::Validation(e.to_string()),
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<DynamicsError> for RunError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::StepRejected { .. }
            | DynamicsError::NormDrift { .. }
            | DynamicsError::Coverage(_) => RunError::Numerical(e.to_string()),
            _ => RunError::Validation(e.to_string()),
        }
    }
}

impl From<SymmetryError> for RunError {
    fn from(e: SymmetryError) -> Self {
        match e {
            SymmetryError::Decoherence(e) => e.into(),
            SymmetryError::Dynamics(e) => e.into(),
            SymmetryError::Modulation(e) => e.into(),
            _ => RunError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    pub gamma: f64,
    /// Dipole angles η_n / π, one per level.
    pub eta_over_pi: Vec<f64>,
    /// Correlation time t_{j,n} per channel.
    pub t_corr: Vec<f64>,
    pub k0_rmin: f64,
    /// Dimensionless k₀ r_j per particle.
    pub positions: Vec<f64>,
    /// Centers the spectrum at this frequency instead of 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier: Option<f64>,
    /// Drops every coupling between different particles.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub decoupled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulationConfig {
    None,
    Global { tau: f64, theta_over_pi: f64 },
    Pulses { tau: Vec<f64>, theta_over_pi: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// (|A,1⟩ − |B,1⟩)/√2
    BellSinglet,
    /// (|A,1⟩ + |B,1⟩)/√2
    BellTriplet,
    /// Per-particle dark states (|1⟩ − |2⟩)/√2 sharing one excitation.
    DarkState { sign: Sign },
    /// `[re, im]` per channel.
    Explicit { amplitudes: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    Absolute,
    /// Multiples of (10γ)⁻¹.
    InverseTenGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon: f64,
    pub step: f64,
    #[serde(default = "absolute")]
    pub unit: TimeUnit,
}

fn absolute() -> TimeUnit {
    TimeUnit::Absolute
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetryConfig {
    pub target: SymmetryKind,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.05
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        Self {
            target: SymmetryKind::Iip,
            threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationStart {
    /// Decay-rate heuristic.
    Heuristic,
    /// The scenario's own modulation.
    Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizationConfig {
    pub lambda: f64,
    /// Sample times of the symmetry deviation on [0, T].
    pub samples: usize,
    /// Free parameters; `None` frees every τ and θ.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free: Option<Vec<FreeParameter>>,
    pub bounds: ParameterBounds,
    pub start: OptimizationStart,
    /// Quadrature inside the search; the fast preset when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<QuadratureConfig>,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            samples: 10,
            free: None,
            bounds: ParameterBounds::default(),
            start: OptimizationStart::Heuristic,
            quadrature: None,
        }
    }
}

fn default_norm_slack() -> f64 {
    1e-6
}

fn default_propagation() -> PropagationMode {
    PropagationMode::Ode
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub name: String,
    /// Level count M_j per particle.
    pub levels: Vec<usize>,
    /// ω per channel.
    pub omega: Vec<f64>,
    pub bath: BathConfig,
    pub modulation: ModulationConfig,
    pub initial_state: InitialState,
    pub time: TimeConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default = "default_propagation")]
    pub propagation: PropagationMode,
    /// Allowed growth of Σ|α̃|² above 1 before a step is rejected.
    #[serde(default = "default_norm_slack")]
    pub norm_slack: f64,
    #[serde(default)]
    pub symmetry: SymmetryConfig,
    #[serde(default)]
    pub optimization: OptimizationConfig,
}

/// Shipped scenarios.
pub const PRESETS: [(&str, &str); 4] = [
    ("fig2_global", include_str!("../presets/fig2_global.json")),
    ("fig2_iip", include_str!("../presets/fig2_iip.json")),
    ("fig2_iit", include_str!("../presets/fig2_iit.json")),
    ("fig2_unmodulated", include_str!("../presets/fig2_unmodulated.json")),
];

pub fn preset(name: &str) -> Result<Scenario, RunError> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            RunError::Validation(format!("unknown preset '{name}', expected one of {}", names.join(", ")))
        })?;
    Scenario::from_json(text)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    Scenario::from_json(&text).map_err(|e| match e {
        RunError::Validation(m) => RunError::Validation(format!("{}: {m}", path.display())),
        e => e,
    })
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| RunError::Validation(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes") + "\n"
    }

    pub fn channel_count(&self) -> usize {
        self.levels.iter().sum()
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let n = self.channel_count();
        let bad = |m: String| Err(RunError::Validation(m));
        let count = |field: &str, len: usize, want: usize| -> Result<(), RunError> {
            if len != want {
                return Err(RunError::Validation(format!(
                    "`{field}` has {len} entries, expected {want}"
                )));
            }
            Ok(())
        };
        if self.levels.is_empty() || self.levels.contains(&0) {
            return bad("`levels` needs at least one particle and one level per particle".into());
        }
        count("omega", self.omega.len(), n)?;
        count("bath.t_corr", self.bath.t_corr.len(), n)?;
        count("bath.positions", self.bath.positions.len(), self.levels.len())?;
        let max_levels = *self.levels.iter().max().unwrap_or(&0);
        if self.bath.eta_over_pi.len() < max_levels {
            return bad(format!(
                "`bath.eta_over_pi` has {} entries, particles have up to {max_levels} levels",
                self.bath.eta_over_pi.len()
            ));
        }
        if let ModulationConfig::Pulses { tau, theta_over_pi } = &self.modulation {
            count("modulation.tau", tau.len(), n)?;
            count("modulation.theta_over_pi", theta_over_pi.len(), n)?;
        }
        if let InitialState::Explicit { amplitudes } = &self.initial_state {
            count("initial_state.amplitudes", amplitudes.len(), n)?;
            let norm: f64 = amplitudes.iter().map(|[r, i]| r * r + i * i).sum();
            if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return bad(format!("initial amplitudes have norm² {norm}, expected 1 within 1e-9"));
            }
        }
        let t = &self.time;
        if !(t.horizon.is_finite() && t.horizon > 0.0) {
            return bad(format!("`time.horizon` must be > 0, got {}", t.horizon));
        }
        if !(t.step.is_finite() && t.step > 0.0 && t.step <= t.horizon) {
            return bad(format!("`time.step` must lie in (0, horizon], got {}", t.step));
        }
        if t.unit == TimeUnit::InverseTenGamma && !(self.bath.gamma > 0.0) {
            return bad("`time.unit` inverse_ten_gamma needs gamma > 0".into());
        }
        if !(self.norm_slack >= 0.0) {
            return bad(format!("`norm_slack` must be >= 0, got {}", self.norm_slack));
        }
        if !(self.symmetry.threshold >= 0.0) {
            return bad(format!("`symmetry.threshold` must be >= 0, got {}", self.symmetry.threshold));
        }
        if self.optimization.samples == 0 {
            return bad("`optimization.samples` must be at least 1".into());
        }
        self.quadrature.validate()?;
        if let Some(q) = &self.optimization.quadrature {
            q.validate()?;
        }
        self.channels()?;
        self.bath()?;
        self.sequence()?;
        self.initial_amplitudes()?;
        Ok(())
    }

    pub fn channels(&self) -> Result<ChannelSet, RunError> {
        Ok(ChannelSet::grid(&self.levels, &self.omega)?)
    }

    pub fn bath(&self) -> Result<Box<dyn Bath>, RunError> {
        let b = &self.bath;
        let model = GaussianBathModel::new(
            self.channels()?,
            b.gamma,
            b.eta_over_pi.iter().map(|e| e * PI).collect(),
            b.t_corr.clone(),
            b.k0_rmin,
            b.positions.clone(),
        )?;
        let mut out: Box<dyn Bath> = Box::new(model);
        if let Some(c) = b.carrier {
            if !c.is_finite() {
                return Err(RunError::Validation(format!("`bath.carrier` must be finite, got {c}")));
            }
            out = Box::new(Detuned::new(out, c));
        }
        if b.decoupled {
            out = Box::new(Decoupled::new(out));
        }
        Ok(out)
    }

    pub fn sequence(&self) -> Result<PulseSequence, RunError> {
        let n = self.channel_count();
        Ok(match &self.modulation {
            ModulationConfig::None => PulseSequence::unmodulated(n),
            ModulationConfig::Global { tau, theta_over_pi } => PulseSequence::global(n, *tau, theta_over_pi * PI)?,
            ModulationConfig::Pulses { tau, theta_over_pi } => {
                let theta: Vec<f64> = theta_over_pi.iter().map(|t| t * PI).collect();
                PulseSequence::new(tau, &theta)?
            }
        })
    }

    pub fn initial_amplitudes(&self) -> Result<CVector, RunError> {
        let ch = self.channels()?;
        Ok(match &self.initial_state {
            InitialState::BellSinglet => bell_state(&ch, false)?,
            InitialState::BellTriplet => bell_state(&ch, true)?,
            InitialState::DarkState { sign } => dark_state(&ch, *sign == Sign::Plus)?,
            InitialState::Explicit { amplitudes } => {
                CVector::from_iterator(amplitudes.len(), amplitudes.iter().map(|[r, i]| Complex64::new(*r, *i)))
            }
        })
    }

    /// Factor converting scenario times to absolute times.
    pub fn time_scale(&self) -> f64 {
        match self.time.unit {
            TimeUnit::Absolute => 1.0,
            TimeUnit::InverseTenGamma => 1.0 / (10.0 * self.bath.gamma),
        }
    }

    /// Output times 0, step, 2·step, …, horizon in absolute units.
    pub fn output_times(&self) -> Vec<f64> {
        let s = self.time_scale();
        let (h, dt) = (self.time.horizon, self.time.step);
        let n = (h / dt * (1.0 + 1e-12)).floor() as usize;
        let mut t: Vec<f64> = (0..=n).map(|k| k as f64 * dt * s).collect();
        if (h - n as f64 * dt).abs() > 1e-9 * h {
            t.push(h * s);
        } else {
            *t.last_mut().expect("nonempty") = h * s;
        }
        t
    }

    /// Copy with explicit per-channel pulses.
    pub fn with_sequence(&self, seq: &PulseSequence) -> Scenario {
        let mut s = self.clone();
        s.modulation = ModulationConfig::Pulses {
            tau: seq.taus(),
            theta_over_pi: seq.thetas().iter().map(|t| t / PI).collect(),
        };
        s
    }
}

/// `{:.16e}`: 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_atomic(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, RunError> {
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| RunError::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| RunError::io(&path, e))?;
    tmp.persist(&path).map_err(|e| RunError::io(&path, e.error))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub scenario: Scenario,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    pub wall_clock_seconds: f64,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub outputs: Vec<PathBuf>,
    pub manifest: RunManifest,
}

struct Run<'a> {
    dir: &'a Path,
    started: Instant,
    manifest: RunManifest,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn new(command: &str, scenario: &Scenario, dir: &'a Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        Ok(Self {
            dir,
            started: Instant::now(),
            manifest: RunManifest {
                tool: "simshield".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: command.into(),
                scenario: scenario.clone(),
                seed: None,
                budget: None,
                modes: None,
                wall_clock_seconds: 0.0,
                diagnostics: BTreeMap::new(),
                outputs: Vec::new(),
                exit_code: EXIT_OK,
            },
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), RunError> {
        self.outputs.push(write_atomic(self.dir, name, contents)?);
        self.manifest.outputs.push(name.into());
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.manifest
            .diagnostics
            .insert(key.into(), serde_json::to_value(value).expect("diagnostic serializes"));
    }

    fn finish(mut self, exit_code: i32) -> Result<RunOutcome, RunError> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.exit_code = exit_code;
        self.manifest.outputs.push("manifest.json".into());
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        self.outputs.push(write_atomic(self.dir, "manifest.json", &text)?);
        Ok(RunOutcome {
            exit_code,
            outputs: self.outputs,
            manifest: self.manifest,
        })
    }
}

fn trajectory(scenario: &Scenario, bath: &dyn Bath) -> Result<DecoherenceTrajectory, RunError> {
    Ok(integrated_j(bath, &scenario.sequence()?, &scenario.output_times(), &scenario.quadrature)?)
}

fn jmatrix_csv(traj: &DecoherenceTrajectory, ch: &ChannelSet) -> String {
    let n = ch.len();
    let mut out = String::from("t");
    for a in 0..n {
        for b in 0..n {
            let pair = format!("{}_{}", ch.label(a), ch.label(b));
            let _ = write!(out, ",Re_J[{pair}],Im_J[{pair}]");
        }
    }
    out.push('\n');
    for (t, j) in traj.requested_times().iter().zip(traj.requested_j()) {
        out.push_str(&num(*t));
        for a in 0..n {
            for b in 0..n {
                let _ = write!(out, ",{},{}", num(j[(a, b)].re), num(j[(a, b)].im));
            }
        }
        out.push('\n');
    }
    out
}

const FIDELITY_PLT: &str = "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset ylabel 'fidelity'\nplot 'fidelity.csv' using 1:2 with lines, '' using 1:3 with lines, '' using 1:4 with lines\n";

/// Fidelity time series and J(t) entries.
pub fn cmd_simulate(scenario: &Scenario, out: &Path) -> Result<RunOutcome, RunError> {
    let mut run = Run::new("simulate", scenario, out)?;
    let bath = scenario.bath()?;
    let ch = scenario.channels()?;
    let traj = trajectory(scenario, bath.as_ref())?;
    let a0 = scenario.initial_amplitudes()?;
    let p = propagate(&traj, &a0, scenario.propagation, scenario.norm_slack)?;
    let f = fidelity(&p.series, &a0, Some(&ch))?;

    let mut csv = String::from("t,F,F_p,F_c,C\n");
    for k in 0..f.times.len() {
        let c = f.concurrence[k].map_or_else(|| "nan".to_string(), num);
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            num(f.times[k]),
            num(f.fidelity[k]),
            num(f.population[k]),
            num(f.correlation[k]),
            c
        );
    }
    run.write("fidelity.csv", &csv)?;
    run.write("jmatrix.csv", &jmatrix_csv(&traj, &ch))?;
    run.write("fidelity.plt", FIDELITY_PLT)?;
    run.write(
        "jmatrix.plt",
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nplot for [i=2:*:2] 'jmatrix.csv' using 1:i with lines\n",
    )?;
    run.note("trajectory", traj.diagnostics());
    run.note("propagation_mode", p.mode);
    run.note("commutator", p.commutator);
    run.note("max_norm", p.max_norm);
    run.note("absorbing_rows", f.absorbing.iter().filter(|&&x| x).count());
    run.finish(EXIT_OK)
}

/// Symmetry deviation per output time for a given trajectory.
pub fn symmetry_report(
    scenario: &Scenario,
    traj: &DecoherenceTrajectory,
    target: SymmetryKind,
    out: &Path,
) -> Result<RunOutcome, RunError> {
    let mut run = Run::new("symmetry", scenario, out)?;
    let ch = scenario.channels()?;
    let samples: Vec<(f64, &crate::linalg::CMatrix)> = traj
        .requested_times()
        .into_iter()
        .zip(traj.requested_j())
        .filter(|(t, _)| *t > 0.0)
        .collect();
    let report = deviation_of(&samples, &ch, target)?;
    let mut csv = String::from("t,cross,diagonal_spread,block_spread,deviation,suppression\n");
    for (s, (_, j)) in report.samples.iter().zip(&samples) {
        let sup = cross_suppression(j, &ch);
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            num(s.time),
            num(s.cross),
            num(s.diagonal_spread),
            num(s.block_spread),
            num(s.total() / report.scale),
            num(sup.ratio)
        );
    }
    run.write("symmetry.csv", &csv)?;
    run.write(
        "symmetry.plt",
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nset logscale y\nplot 'symmetry.csv' using 1:5 with lines, '' using 1:6 with lines\n",
    )?;
    let last = cross_suppression(traj.final_j(), &ch);
    run.note("target", target);
    run.note("deviation", report.deviation);
    run.note("threshold", scenario.symmetry.threshold);
    run.note("below_threshold", report.deviation < scenario.symmetry.threshold);
    run.note("final_suppression", last);
    run.note("trajectory", traj.diagnostics());
    run.finish(EXIT_OK)
}

/// Deviation of the scenario's own J(t) from `target`.
pub fn cmd_symmetry(scenario: &Scenario, target: SymmetryKind, out: &Path) -> Result<RunOutcome, RunError> {
    let bath = scenario.bath()?;
    SymmetryTarget::new(target, scenario.time.horizon, 1)?.check_applicable(bath.channels())?;
    let traj = trajectory(scenario, bath.as_ref())?;
    symmetry_report(scenario, &traj, target, out)
}

/// Pulse search; exit code 4 unless the search converged.
pub fn cmd_optimize(
    scenario: &Scenario,
    target: SymmetryKind,
    budget: usize,
    seed: u64,
    out: &Path,
) -> Result<RunOutcome, RunError> {
    let mut run = Run::new("optimize", scenario, out)?;
    run.manifest.seed = Some(seed);
    run.manifest.budget = Some(budget);
    let bath = scenario.bath()?;
    let n = scenario.channel_count();
    let opt = &scenario.optimization;
    let horizon = scenario.time.horizon * scenario.time_scale();
    let mut problem = OptimizationProblem::new(
        SymmetryTarget::new(target, horizon, opt.samples)?,
        n,
        scenario.initial_amplitudes()?,
        budget,
        seed,
    );
    problem.lambda = opt.lambda;
    problem.bounds = opt.bounds;
    if let Some(free) = &opt.free {
        problem.free = free.clone();
    }
    if let Some(q) = &opt.quadrature {
        problem.quadrature = q.clone();
    }
    if opt.start == OptimizationStart::Scenario {
        problem.initial = Some(scenario.sequence()?);
    }
    let r = optimize_pulses(bath.as_ref(), &problem)?;

    let optimized = if r.sequence == r.initial_sequence && opt.start == OptimizationStart::Scenario {
        scenario.clone()
    } else {
        scenario.with_sequence(&r.sequence)
    };
    let mut trace = String::from("evaluation,objective,best\n");
    for e in &r.trace {
        let _ = writeln!(trace, "{},{},{}", e.evaluation, num(e.objective), num(e.best));
    }
    run.write("optimized.scenario", &optimized.to_json())?;
    run.write("trace.csv", &trace)?;
    run.write(
        "trace.plt",
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'evaluation'\nset logscale y\nplot 'trace.csv' using 1:2 with points, '' using 1:3 with lines\n",
    )?;
    run.note("status", r.status);
    run.note("objective", r.objective);
    run.note("initial_objective", r.initial_objective);
    run.note("deviation", r.deviation.deviation);
    run.note("initial_deviation", r.initial_deviation.deviation);
    run.note("fidelity", r.fidelity);
    run.note("evaluations", r.trace.len());
    let code = match r.status {
        OptimizationStatus::Converged => EXIT_OK,
        OptimizationStatus::BudgetExhausted | OptimizationStatus::NoImprovement => EXIT_BUDGET,
    };
    run.finish(code)
}

/// Discretized-bath amplitudes against J-propagation.
pub fn cmd_oracle(scenario: &Scenario, modes: usize, out: &Path) -> Result<RunOutcome, RunError> {
    let mut run = Run::new("oracle", scenario, out)?;
    run.manifest.modes = Some(modes);
    let bath = scenario.bath()?;
    let seq = scenario.sequence()?;
    let a0 = scenario.initial_amplitudes()?;
    let times = scenario.output_times();
    let oracle = discrete_bath_oracle(
        bath.as_ref(),
        &seq,
        &a0,
        &times,
        &OracleOptions {
            modes,
            ..OracleOptions::default()
        },
    )?;
    let traj = integrated_j(bath.as_ref(), &seq, &times, &scenario.quadrature)?;
    let p = propagate(&traj, &a0, scenario.propagation, scenario.norm_slack)?;
    let ch = scenario.channels()?;
    let n = ch.len();
    let mut csv = String::from("t");
    for c in 0..n {
        let _ = write!(csv, ",oracle_{}", ch.label(c));
    }
    for c in 0..n {
        let _ = write!(csv, ",j_{}", ch.label(c));
    }
    csv.push_str(",max_deviation,norm_drift,recurrence\n");
    let mut worst: f64 = 0.0;
    for (k, &t) in times.iter().enumerate() {
        let (x, y) = (&oracle.series.amplitudes[k], &p.series.amplitudes[k]);
        let dev = (0..n).map(|c| (x[c].norm() - y[c].norm()).abs()).fold(0.0, f64::max);
        worst = worst.max(dev);
        csv.push_str(&num(t));
        for c in 0..n {
            let _ = write!(csv, ",{}", num(x[c].norm()));
        }
        for c in 0..n {
            let _ = write!(csv, ",{}", num(y[c].norm()));
        }
        let _ = writeln!(
            csv,
            ",{},{},{}",
            num(dev),
            num(oracle.norm_drift[k]),
            u8::from(oracle.recurrence[k])
        );
    }
    run.write("oracle.csv", &csv)?;
    run.write(
        "oracle.plt",
        &format!(
            "set datafile separator ','\nset key autotitle columnhead\nset xlabel 't'\nplot for [i=2:{}] 'oracle.csv' using 1:i with lines\n",
            2 * n + 1
        ),
    )?;
    run.note("max_deviation", worst);
    run.note("bath_modes", oracle.modes);
    run.note("recurrence_time", oracle.recurrence_time);
    run.note("recurrence_rows", oracle.recurrence.iter().filter(|&&x| x).count());
    run.note("clipped_eigenvalue", oracle.clipped_eigenvalue);
    run.finish(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_parse_and_round_trip() {
        for (name, _) in PRESETS {
            let s = preset(name).unwrap();
            let again = Scenario::from_json(&s.to_json()).unwrap();
            assert_eq!(s, again, "{name}");
        }
    }

    #[test]
    fn fig2_preset_parameters() {
        let iit = preset("fig2_iit").unwrap();
        let seq = iit.sequence().unwrap();
        assert_eq!(seq.taus(), vec![0.85, 0.85, 1.05, 1.05]);
        let th: Vec<f64> = seq.thetas().iter().map(|t| t / PI).collect();
        for (a, b) in th.iter().zip([0.924, 0.9, 0.945, 0.91]) {
            assert!((a - b).abs() < 1e-15);
        }
        let global = preset("fig2_global").unwrap().sequence().unwrap();
        assert!(global.taus().iter().all(|&t| t == 1.1));
        assert!(global.thetas().iter().all(|&t| (t - PI).abs() < 1e-15));
        assert_eq!(iit.channels().unwrap().label(2), "B1");
    }

    #[test]
    fn missing_field_is_named() {
        let text = preset("fig2_iit").unwrap().to_json().replace("\"gamma\"", "\"gama\"");
        let e = Scenario::from_json(&text).unwrap_err();
        assert!(matches!(e, RunError::Validation(_)));
        let msg = e.to_string();
        assert!(msg.contains("gama") || msg.contains("gamma"), "{msg}");
        let mut v: serde_json::Value = serde_json::from_str(&preset("fig2_iit").unwrap().to_json()).unwrap();
        v["bath"].as_object_mut().unwrap().remove("gamma");
        let e = Scenario::from_json(&v.to_string()).unwrap_err();
        assert!(e.to_string().contains("missing field `gamma`"), "{e}");
        assert_eq!(e.exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn inconsistent_counts_are_rejected() {
        let mut s = preset("fig2_iit").unwrap();
        s.omega.pop();
        assert!(s.validate().unwrap_err().to_string().contains("omega"));
        let mut s = preset("fig2_iit").unwrap();
        s.initial_state = InitialState::Explicit {
            amplitudes: vec![[0.5, 0.0]; 3],
        };
        assert!(s.validate().is_err());
        s.initial_state = InitialState::Explicit {
            amplitudes: vec![[0.5, 0.0], [0.5, 0.0], [0.5, 0.0], [0.5, 0.001]],
        };
        assert!(s.validate().unwrap_err().to_string().contains("norm"));
    }

    #[test]
    fn output_times_cover_horizon() {
        let mut s = preset("fig2_iit").unwrap();
        let t = s.output_times();
        assert_eq!(t.len(), 101);
        assert_eq!(t[100], 100.0);
        s.time.step = 0.3;
        let t = s.output_times();
        assert_eq!(*t.last().unwrap(), 100.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        s.bath.gamma = 0.05;
        assert_eq!(*s.output_times().last().unwrap(), 200.0);
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(RunError::from(DynamicsError::NotNormalized(0.5)).exit_code(), EXIT_VALIDATION);
        let e = DynamicsError::NormDrift { time: 1.0, drift: 1.0 };
        assert_eq!(RunError::from(e).exit_code(), EXIT_NUMERICAL);
    }

    fn scenario_strategy() -> impl Strategy<Value = Scenario> {
        (1usize..=3, 1usize..=3).prop_flat_map(|(particles, max_levels)| {
            let levels = proptest::collection::vec(1..=max_levels, particles);
            levels.prop_flat_map(|levels| {
                let n: usize = levels.iter().sum();
                let m = *levels.iter().max().unwrap();
                let p = levels.len();
                (
                    Just(levels),
                    proptest::collection::vec(0.1f64..2.0, n),
                    proptest::collection::vec(0.0f64..0.5, m),
                    proptest::collection::vec(0.3f64..2.0, n),
                    proptest::collection::vec(-1.0f64..1.0, p),
                    proptest::collection::vec((0.2f64..2.0, -1.99f64..1.99), n),
                    (1e-3f64..1.0, any::<bool>(), proptest::option::of(-1.0f64..1.0)),
                    (0.5f64..20.0, 0.01f64..0.5),
                )
            })
        })
        .prop_map(|(levels, omega, eta, t_corr, positions, pulses, (gamma, decoupled, carrier), (horizon, step))| {
            let n = omega.len();
            Scenario {
                name: "random".into(),
                levels,
                omega,
                bath: BathConfig {
                    gamma,
                    eta_over_pi: eta,
                    t_corr,
                    k0_rmin: 1.0,
                    positions,
                    carrier,
                    decoupled,
                },
                modulation: ModulationConfig::Pulses {
                    tau: pulses.iter().map(|p| p.0).collect(),
                    theta_over_pi: pulses.iter().map(|p| p.1).collect(),
                },
                initial_state: InitialState::Explicit {
                    amplitudes: (0..n).map(|k| [if k == 0 { 1.0 } else { 0.0 }, 0.0]).collect(),
                },
                time: TimeConfig {
                    horizon,
                    step,
                    unit: TimeUnit::Absolute,
                },
                quadrature: QuadratureConfig::default(),
                propagation: PropagationMode::Ode,
                norm_slack: 1e-6,
                symmetry: SymmetryConfig::default(),
                optimization: OptimizationConfig::default(),
            }
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scenario_round_trips(s in scenario_strategy()) {
            let text = s.to_json();
            let again = Scenario::from_json(&text).unwrap();
            prop_assert_eq!(&again, &s);
            prop_assert_eq!(again.to_json(), text);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn fidelity_rows_factorize(
            gamma in 0.01f64..0.3,
            tau in 0.3f64..1.5,
            theta in -1.5f64..1.5,
            a in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2),
        ) {
            let norm = a.iter().map(|(x, y)| x * x + y * y).sum::<f64>().sqrt();
            prop_assume!(norm > 0.1);
            let mut s = preset("fig2_iit").unwrap();
            s.levels = vec![1, 1];
            s.omega = vec![0.5, 0.6];
            s.bath.gamma = gamma;
            s.bath.eta_over_pi = vec![0.0];
            s.bath.t_corr = vec![1.0, 1.2];
            s.modulation = ModulationConfig::Global { tau, theta_over_pi: theta };
            s.initial_state = InitialState::Explicit {
                amplitudes: a.iter().map(|(x, y)| [x / norm, y / norm]).collect(),
            };
            s.time = TimeConfig { horizon: 5.0, step: 0.5, unit: TimeUnit::Absolute };
            s.quadrature = QuadratureConfig::fast();
            let dir = tempfile::tempdir().unwrap();
            cmd_simulate(&s, dir.path()).unwrap();
            let csv = std::fs::read_to_string(dir.path().join("fidelity.csv")).unwrap();
            for line in csv.lines().skip(1) {
                let v: Vec<f64> = line.split(',').take(4).map(|x| x.parse().unwrap()).collect();
                prop_assert_eq!(v[1], v[2] * v[3]);
                prop_assert!((0.0..=1.0).contains(&v[3]));
            }
        }
    }
}
