//! Deviation of J(t) from the ICP, IIP and IIT symmetries, cross-decoherence
//! suppression, and a derivative-free pulse search.

use std::cell::RefCell;
use std::f64::consts::PI;

use argmin::core::{CostFunction, Executor};
use num_complex::Complex64;
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bath::{Bath, ChannelSet};
use crate::decoherence::{integrated_j, DecoherenceError, DecoherenceTrajectory, QuadratureConfig};
use crate::dynamics::{fidelity, propagate, CVector, DynamicsError, PropagationMode};
use crate::linalg::{max_abs, CMatrix};
use crate::modulation::{ModulationError, PulseSequence};

/// Floor of the normalization ‖J(T)‖.
pub const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("{kind} is not applicable: {reason}")]
    Applicability { kind: SymmetryKind, reason: String },
    #[error("invalid symmetry target: {0}")]
    Target(String),
    #[error("invalid optimization problem: {0}")]
    Problem(String),
    #[error(transparent)]
    Decoherence(#[from] DecoherenceError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SymmetryKind {
    /// Every entry equal to one r(t).
    Icp,
    /// r(t) on the diagonal, zero elsewhere.
    Iip,
    /// Per-particle blocks r_j(t)·(all-ones), zero between particles.
    Iit,
}

impl std::fmt::Display for SymmetryKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Icp => "ICP",
            Self::Iip => "IIP",
            Self::Iit => "IIT",
        })
    }
}

impl std::str::FromStr for SymmetryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ICP" => Ok(Self::Icp),
            "IIP" => Ok(Self::Iip),
            "IIT" => Ok(Self::Iit),
            _ => Err(format!("unknown symmetry '{s}', expected ICP, IIP or IIT")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryTarget {
    pub kind: SymmetryKind,
    pub horizon: f64,
    pub samples: usize,
}

impl SymmetryTarget {
    pub fn new(kind: SymmetryKind, horizon: f64, samples: usize) -> Result<Self, SymmetryError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SymmetryError::Target(format!("horizon must be > 0, got {horizon}")));
        }
        if samples == 0 {
            return Err(SymmetryError::Target("at least one sample time is needed".into()));
        }
        Ok(Self { kind, horizon, samples })
    }

    /// `k T / samples` for k = 1..=samples.
    pub fn sample_times(&self) -> Vec<f64> {
        (1..=self.samples)
            .map(|k| self.horizon * k as f64 / self.samples as f64)
            .collect()
    }

    pub fn check_applicable(&self, channels: &ChannelSet) -> Result<(), SymmetryError> {
        if self.kind == SymmetryKind::Iit {
            if let Some(j) = channels
                .levels_per_particle()
                .iter()
                .position(|&m| m < 2)
            {
                return Err(SymmetryError::Applicability {
                    kind: self.kind,
                    reason: format!(
                        "particle {} has a single level",
                        crate::bath::particle_label(j)
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Unnormalized deviation components at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationSample {
    pub time: f64,
    /// ICP: spread about the mean entry. IIP: largest off-diagonal entry.
    /// IIT: largest entry between different particles.
    pub cross: f64,
    /// IIP only: largest diagonal deviation from the mean diagonal.
    pub diagonal_spread: f64,
    /// IIT only: largest entry deviation from its particle block mean.
    pub block_spread: f64,
}

impl DeviationSample {
    pub fn total(&self) -> f64 {
        self.cross + self.diagonal_spread + self.block_spread
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationReport {
    pub kind: SymmetryKind,
    /// max over samples of the total, divided by `scale`.
    pub deviation: f64,
    /// max(‖J(T)‖_max, 1e-12).
    pub scale: f64,
    pub samples: Vec<DeviationSample>,
}

/// Mean taken relative to the first value, so equal values give it exactly.
fn mean(values: impl Iterator<Item = Complex64>) -> Complex64 {
    let mut values = values.peekable();
    let Some(&first) = values.peek() else {
        return Complex64::new(0.0, 0.0);
    };
    let mut n = 0usize;
    let mut s = Complex64::new(0.0, 0.0);
    for v in values {
        s += v - first;
        n += 1;
    }
    first + s / n as f64
}

pub fn deviation_sample(
    j: &CMatrix,
    time: f64,
    channels: &ChannelSet,
    kind: SymmetryKind,
) -> DeviationSample {
    let n = j.nrows();
    let mut s = DeviationSample {
        time,
        cross: 0.0,
        diagonal_spread: 0.0,
        block_spread: 0.0,
    };
    match kind {
        SymmetryKind::Icp => {
            let m = mean(j.iter().copied());
            s.cross = j.iter().map(|z| (z - m).norm()).fold(0.0, f64::max);
        }
        SymmetryKind::Iip => {
            let m = mean((0..n).map(|a| j[(a, a)]));
            for a in 0..n {
                s.diagonal_spread = s.diagonal_spread.max((j[(a, a)] - m).norm());
                for b in 0..n {
                    if a != b {
                        s.cross = s.cross.max(j[(a, b)].norm());
                    }
                }
            }
        }
        SymmetryKind::Iit => {
            for p in 0..channels.particle_count() {
                let block = channels.channels_of(p);
                let m = mean(block.iter().flat_map(|&a| block.iter().map(move |&b| j[(a, b)])));
                for &a in &block {
                    for &b in &block {
                        s.block_spread = s.block_spread.max((j[(a, b)] - m).norm());
                    }
                }
            }
            for a in 0..n {
                for b in 0..n {
                    if channels.get(a).particle != channels.get(b).particle {
                        s.cross = s.cross.max(j[(a, b)].norm());
                    }
                }
            }
        }
    }
    s
}

/// Deviation over `(t, J(t))` samples; the last sample is taken as J(T).
pub fn deviation_of(
    samples: &[(f64, &CMatrix)],
    channels: &ChannelSet,
    kind: SymmetryKind,
) -> Result<DeviationReport, SymmetryError> {
    SymmetryTarget {
        kind,
        horizon: 1.0,
        samples: 1,
    }
    .check_applicable(channels)?;
    let last = samples
        .last()
        .ok_or_else(|| SymmetryError::Target("no samples".into()))?;
    let scale = max_abs(last.1).max(SCALE_FLOOR);
    let rows: Vec<DeviationSample> = samples
        .iter()
        .map(|(t, j)| deviation_sample(j, *t, channels, kind))
        .collect();
    let worst = rows.iter().map(DeviationSample::total).fold(0.0, f64::max);
    Ok(DeviationReport {
        kind,
        deviation: worst / scale,
        scale,
        samples: rows,
    })
}

/// Deviation over the target's sample times, which must be among the
/// trajectory's requested times.
pub fn deviation(
    traj: &DecoherenceTrajectory,
    channels: &ChannelSet,
    target: &SymmetryTarget,
) -> Result<DeviationReport, SymmetryError> {
    target.check_applicable(channels)?;
    let mut samples = Vec::with_capacity(target.samples);
    for t in target.sample_times() {
        let j = traj.j_at(t).ok_or_else(|| {
            SymmetryError::Target(format!("trajectory was not evaluated at t = {t}"))
        })?;
        samples.push((t, j));
    }
    deviation_of(&samples, channels, target.kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Suppression {
    /// max |J_ab| over channels of different particles / min_a |J_aa|.
    pub ratio: f64,
    /// Set when the diagonal vanishes, so the ratio carries no information.
    pub degenerate: bool,
}

pub fn cross_suppression(j: &CMatrix, channels: &ChannelSet) -> Suppression {
    let n = j.nrows();
    let mut cross: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            if channels.get(a).particle != channels.get(b).particle {
                cross = cross.max(j[(a, b)].norm());
            }
        }
    }
    let diag = (0..n).map(|a| j[(a, a)].norm()).fold(f64::INFINITY, f64::min);
    if !(diag > 0.0) {
        return Suppression {
            ratio: if cross == 0.0 { 0.0 } else { f64::INFINITY },
            degenerate: true,
        };
    }
    Suppression {
        ratio: cross / diag,
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcpFeasibility {
    /// N(N−1)/2 equalities between channel pairs.
    pub conditions: usize,
    /// One modulating field per channel.
    pub controls: usize,
    /// Channel pairs whose coupling spectrum vanishes across the band.
    pub uncoupled_pairs: Vec<(usize, usize)>,
    pub count_feasible: bool,
    /// False when the count fails or any pair is uncoupled.
    pub feasible: bool,
}

/// Advisory count of ICP conditions against available controls.
pub fn icp_feasibility(bath: &dyn Bath) -> IcpFeasibility {
    let n = bath.channels().len();
    let (center, half) = bath.spectral_band();
    let probes: Vec<f64> = (0..=200)
        .map(|k| center - half + 2.0 * half * k as f64 / 200.0)
        .collect();
    let strength = |a: usize, b: usize| -> f64 {
        probes
            .iter()
            .map(|&w| bath.coupling(a, b, w).norm())
            .fold(bath.correlation(a, b, 0.0).norm(), f64::max)
    };
    let diag: Vec<f64> = (0..n).map(|a| strength(a, a)).collect();
    let mut uncoupled = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if strength(a, b) <= 1e-14 * diag[a].max(diag[b]) {
                uncoupled.push((a, b));
            }
        }
    }
    let conditions = n * n.saturating_sub(1) / 2;
    let count_feasible = conditions <= n;
    IcpFeasibility {
        conditions,
        controls: n,
        feasible: count_feasible && uncoupled.is_empty(),
        uncoupled_pairs: uncoupled,
        count_feasible,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreeParameter {
    Tau(usize),
    Theta(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBounds {
    pub tau_min: f64,
    pub tau_max: f64,
    /// Bound on |θ|; must stay below 2π.
    pub theta_max: f64,
}

impl Default for ParameterBounds {
    fn default() -> Self {
        Self {
            tau_min: 0.05,
            tau_max: 5.0,
            theta_max: 1.99 * PI,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationProblem {
    pub target: SymmetryTarget,
    pub free: Vec<FreeParameter>,
    pub bounds: ParameterBounds,
    /// Weight of the terminal infidelity 1 − F(T).
    pub lambda: f64,
    /// Maximal objective evaluations.
    pub budget: usize,
    pub seed: u64,
    pub quadrature: QuadratureConfig,
    pub initial_state: CVector,
    /// Starting point; `None` uses the decay-rate heuristic.
    pub initial: Option<PulseSequence>,
}

impl OptimizationProblem {
    /// Every τ and θ free, λ = 1, fast quadrature.
    pub fn new(
        target: SymmetryTarget,
        channels: usize,
        initial_state: CVector,
        budget: usize,
        seed: u64,
    ) -> Self {
        Self {
            target,
            free: (0..channels)
                .flat_map(|c| [FreeParameter::Tau(c), FreeParameter::Theta(c)])
                .collect(),
            bounds: ParameterBounds::default(),
            lambda: 1.0,
            budget,
            seed,
            quadrature: QuadratureConfig::fast(),
            initial_state,
            initial: None,
        }
    }

    fn validate(&self, n: usize) -> Result<(), SymmetryError> {
        let bad = |m: String| Err(SymmetryError::Problem(m));
        if self.budget < 50 {
            return bad(format!("budget must be at least 50, got {}", self.budget));
        }
        let b = &self.bounds;
        if !(b.tau_min > 0.0 && b.tau_max > b.tau_min && b.tau_max.is_finite()) {
            return bad(format!("tau bounds ({}, {}) must satisfy 0 < min < max", b.tau_min, b.tau_max));
        }
        if !(b.theta_max > 0.0 && b.theta_max < 2.0 * PI) {
            return bad(format!("theta bound {} must lie in (0, 2π)", b.theta_max));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.free.is_empty() {
            return bad("no free parameters".into());
        }
        if let Some(p) = self.free.iter().find(|p| match p {
            FreeParameter::Tau(c) | FreeParameter::Theta(c) => *c >= n,
        }) {
            return bad(format!("{p:?} refers to a missing channel"));
        }
        if let Some(seq) = &self.initial {
            if seq.len() != n {
                return bad(format!("initial sequence has {} channels, bath has {n}", seq.len()));
            }
        }
        self.quadrature.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizationStatus {
    /// The search stopped on its own convergence test.
    Converged,
    /// The evaluation budget ran out while still improving.
    BudgetExhausted,
    /// Nothing beat the starting point; the starting point is returned.
    NoImprovement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub evaluation: usize,
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub objective: f64,
    pub deviation: Option<DeviationReport>,
    pub fidelity: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub sequence: PulseSequence,
    pub initial_sequence: PulseSequence,
    pub objective: f64,
    pub initial_objective: f64,
    pub trace: Vec<TraceEntry>,
    pub status: OptimizationStatus,
    pub deviation: DeviationReport,
    pub initial_deviation: DeviationReport,
    pub fidelity: f64,
}

/// deviation + λ(1 − F(T)) for one pulse sequence.
pub fn evaluate(
    bath: &dyn Bath,
    problem: &OptimizationProblem,
    seq: &PulseSequence,
) -> Result<Evaluation, SymmetryError> {
    let times = problem.target.sample_times();
    let traj = integrated_j(bath, seq, &times, &problem.quadrature)?;
    let report = deviation(&traj, bath.channels(), &problem.target)?;
    let f = if problem.lambda > 0.0 {
        let p = propagate(&traj, &problem.initial_state, PropagationMode::Ode, f64::INFINITY)?;
        let r = fidelity(&p.series, &problem.initial_state, None)?;
        *r.fidelity.last().unwrap_or(&0.0)
    } else {
        f64::NAN
    };
    let penalty = if problem.lambda > 0.0 { problem.lambda * (1.0 - f) } else { 0.0 };
    Ok(Evaluation {
        objective: report.deviation + penalty,
        deviation: Some(report),
        fidelity: f,
    })
}

/// Starting point: channels whose unmodulated Re J grows faster get shorter
/// intervals and larger phases, scaled about τ = 1, θ = 0.9π.
pub fn heuristic_sequence(
    bath: &dyn Bath,
    problem: &OptimizationProblem,
) -> Result<PulseSequence, SymmetryError> {
    let n = bath.channels().len();
    let horizon = problem.target.horizon.min(20.0 * bath.correlation_time());
    let traj = integrated_j(bath, &PulseSequence::unmodulated(n), &[horizon], &problem.quadrature)?;
    let rates: Vec<f64> = (0..n).map(|c| traj.final_j()[(c, c)].re.max(0.0)).collect();
    let avg = rates.iter().sum::<f64>() / n as f64;
    let b = &problem.bounds;
    let mut tau = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    for &r in &rates {
        let s = if avg > 0.0 && r > 0.0 { r / avg } else { 1.0 };
        tau.push((1.0 / s).clamp(b.tau_min, b.tau_max));
        theta.push((0.9 * PI * s.sqrt()).clamp(-b.theta_max, b.theta_max));
    }
    Ok(PulseSequence::new(&tau, &theta)?)
}

/// Search coordinates: ln τ for intervals, θ itself for phases.
struct Encoding<'a> {
    base: &'a PulseSequence,
    free: &'a [FreeParameter],
    bounds: ParameterBounds,
}

impl Encoding<'_> {
    fn encode(&self, seq: &PulseSequence) -> Vec<f64> {
        self.free
            .iter()
            .map(|p| match *p {
                FreeParameter::Tau(c) => seq.train(c).tau.ln(),
                FreeParameter::Theta(c) => seq.train(c).theta,
            })
            .collect()
    }

    fn clamp(&self, x: &[f64]) -> Vec<f64> {
        let b = &self.bounds;
        self.free
            .iter()
            .zip(x)
            .map(|(p, &v)| match p {
                FreeParameter::Tau(_) => v.clamp(b.tau_min.ln(), b.tau_max.ln()),
                FreeParameter::Theta(_) => v.clamp(-b.theta_max, b.theta_max),
            })
            .collect()
    }

    fn decode(&self, x: &[f64]) -> PulseSequence {
        let mut tau = self.base.taus();
        let mut theta = self.base.thetas();
        for (p, v) in self.free.iter().zip(self.clamp(x)) {
            match *p {
                FreeParameter::Tau(c) => tau[c] = v.exp(),
                FreeParameter::Theta(c) => theta[c] = v,
            }
        }
        PulseSequence::new(&tau, &theta).expect("clamped parameters are valid")
    }
}

struct Search<'a> {
    bath: &'a dyn Bath,
    problem: &'a OptimizationProblem,
    enc: Encoding<'a>,
    trace: Vec<TraceEntry>,
    best: f64,
    best_x: Vec<f64>,
}

impl Search<'_> {
    fn remaining(&self) -> usize {
        self.problem.budget.saturating_sub(self.trace.len())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        match evaluate(self.bath, self.problem, &self.enc.decode(x)) {
            Ok(e) if e.objective.is_finite() => e.objective,
            _ => f64::INFINITY,
        }
    }

    /// Records evaluations in input order; ties keep the earlier point.
    fn record(&mut self, xs: &[Vec<f64>], values: &[f64]) -> bool {
        let mut improved = false;
        for (x, &v) in xs.iter().zip(values) {
            if v < self.best {
                self.best = v;
                self.best_x = self.enc.clamp(x);
                improved = true;
            }
            self.trace.push(TraceEntry {
                evaluation: self.trace.len(),
                objective: v,
                best: self.best,
            });
        }
        improved
    }

    fn batch(&mut self, mut xs: Vec<Vec<f64>>) -> bool {
        xs.truncate(self.remaining());
        let values: Vec<f64> = xs.par_iter().map(|x| self.objective(x)).collect();
        self.record(&xs, &values)
    }

    /// Sweeps each coordinate over a log-spaced grid, halving the span after
    /// a sweep without improvement.
    fn coordinate_descent(&mut self, budget: usize) {
        let stop = self.trace.len() + budget;
        let mut span = 1.0_f64; // ln 2^span range for τ, and |θ| scale
        for _ in 0..3 {
            loop {
                let mut any = false;
                for k in 0..self.enc.free.len() {
                    if self.trace.len() >= stop || self.best == 0.0 {
                        return;
                    }
                    let here = self.best_x.clone();
                    let mut cands = Vec::new();
                    for step in [-4, -2, -1, 1, 2, 4] {
                        let f = span * std::f64::consts::LN_2 * step as f64 / 4.0;
                        let mut x = here.clone();
                        x[k] = match self.enc.free[k] {
                            FreeParameter::Tau(_) => here[k] + f,
                            FreeParameter::Theta(_) if here[k].abs() > 1e-3 => here[k] * f.exp(),
                            FreeParameter::Theta(_) => 0.1 * PI * span * step as f64 / 4.0,
                        };
                        let x = self.enc.clamp(&x);
                        if x != here {
                            cands.push(x);
                        }
                    }
                    cands.truncate(stop - self.trace.len());
                    any |= self.batch(cands);
                }
                if !any {
                    break;
                }
            }
            span *= 0.5;
        }
    }

    fn simplex(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let dim = self.best_x.len();
        if self.remaining() < dim + 2 {
            return false;
        }
        let mut vertices = vec![self.best_x.clone()];
        for k in 0..dim {
            let mut v = self.best_x.clone();
            let size = match self.enc.free[k] {
                FreeParameter::Tau(_) => 0.1,
                FreeParameter::Theta(_) => 0.05 * PI,
            };
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            v[k] += sign * size * rng.gen_range(0.5..1.0);
            vertices.push(v);
        }
        let cell = RefCell::new(std::mem::take(&mut self.trace));
        let best = RefCell::new((self.best, self.best_x.clone()));
        let cost = SimplexCost {
            search: self,
            trace: &cell,
            best: &best,
        };
        let converged = NelderMead::new(vertices)
            .with_sd_tolerance(1e-7)
            .ok()
            .and_then(|solver| {
                Executor::new(cost, solver)
                    .configure(|s| s.max_iters(10 * self.problem.budget as u64))
                    .run()
                    .ok()
            })
            .is_some();
        self.trace = cell.into_inner();
        let (b, x) = best.into_inner();
        self.best = b;
        self.best_x = x;
        converged && self.remaining() > 0
    }
}

struct SimplexCost<'s, 'a> {
    search: &'s Search<'a>,
    trace: &'s RefCell<Vec<TraceEntry>>,
    best: &'s RefCell<(f64, Vec<f64>)>,
}

impl CostFunction for SimplexCost<'_, '_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        if self.trace.borrow().len() >= self.search.problem.budget {
            return Err(argmin::core::Error::msg("evaluation budget exhausted"));
        }
        let v = self.search.objective(x);
        let mut best = self.best.borrow_mut();
        if v < best.0 {
            *best = (v, self.search.enc.clamp(x));
        }
        let mut trace = self.trace.borrow_mut();
        let evaluation = trace.len();
        trace.push(TraceEntry {
            evaluation,
            objective: v,
            best: best.0,
        });
        Ok(v)
    }
}

/// Coordinate descent on a log grid followed by Nelder–Mead, deterministic
/// for a fixed seed and budget. The best-so-far trace is nonincreasing.
pub fn optimize_pulses(
    bath: &dyn Bath,
    problem: &OptimizationProblem,
) -> Result<OptimizationResult, SymmetryError> {
    let n = bath.channels().len();
    problem.validate(n)?;
    problem.target.check_applicable(bath.channels())?;
    let start = match &problem.initial {
        Some(s) => s.clone(),
        None => heuristic_sequence(bath, problem)?,
    };
    let mut free = problem.free.clone();
    free.sort();
    free.dedup();
    let enc = Encoding {
        base: &start,
        free: &free,
        bounds: problem.bounds,
    };
    let x0 = enc.clamp(&enc.encode(&start));
    let start = enc.decode(&x0);
    let first = evaluate(bath, problem, &start)?;
    let initial_deviation = first.deviation.clone().expect("evaluated");
    let mut search = Search {
        bath,
        problem,
        enc,
        trace: Vec::new(),
        best: f64::INFINITY,
        best_x: x0.clone(),
    };
    search.record(std::slice::from_ref(&x0), &[first.objective]);

    let mut converged = first.objective == 0.0;
    if !converged {
        let share = problem.budget.saturating_sub(1) / 2;
        search.coordinate_descent(share);
        if search.best > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
            converged = search.simplex(&mut rng);
        } else {
            converged = true;
        }
    }

    let improved = search.best < first.objective;
    let (sequence, final_eval) = if improved {
        let seq = search.enc.decode(&search.best_x);
        let e = evaluate(bath, problem, &seq)?;
        (seq, e)
    } else {
        (start.clone(), first.clone())
    };
    let status = if !improved && first.objective > 0.0 {
        OptimizationStatus::NoImprovement
    } else if converged {
        OptimizationStatus::Converged
    } else {
        OptimizationStatus::BudgetExhausted
    };
    Ok(OptimizationResult {
        sequence,
        initial_sequence: start,
        objective: final_eval.objective,
        initial_objective: first.objective,
        trace: search.trace,
        status,
        deviation: final_eval.deviation.expect("evaluated"),
        initial_deviation,
        fidelity: final_eval.fidelity,
    })
}
