//! The dynamically-modified decoherence matrix.
//!
//! The normative route is the time-ordered double integral
//!
//! ```text
//! R_ab(t) = conj(η_a(t)) e^{i(ω_a − ω_b)t} ∫_0^t η_b(t − τ) e^{iω_b τ} Φ_ab(τ) dτ
//! J(t)    = ∫_0^t R(s) ds
//! ```
//!
//! where `η_a` is the coupled modulation factor of channel `a` (see
//! [`crate::modulation`]). The inner integral is continuous in `t`; only the
//! outer factor jumps at kick times, so every kick time is a grid point and
//! rates are stored as one-sided limits there. The inner integral is cut at
//! the bath memory time.
//!
//! The frequency-domain route `½∫ G(ω) K_t(ω) dω` reproduces the Hermitian
//! part of `J` and serves as a fast path and a cross-check.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::bath::{Bath, CouplingSpectrum};
use crate::linalg::{max_abs, max_abs_diff, zeros, CMatrix, ZERO};
use crate::modulation::{ModulationSpectrum, PulseSequence, Side};
use crate::quadrature::{boole, integrate_over, Tolerance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoherenceError {
    #[error("quadrature did not converge at t = {time}: entry ({row}, {col}) error {error:.3e}")]
    Quadrature {
        time: f64,
        row: usize,
        col: usize,
        error: f64,
    },
    #[error("frequency window too small: |G| = {value:.3e} at ω = {omega} (peak {peak:.3e})")]
    Window { omega: f64, value: f64, peak: f64 },
    #[error("invalid quadrature configuration: {0}")]
    Config(String),
    #[error("invalid time: {0}")]
    Time(String),
    #[error("pulse sequence covers {sequence} channels, bath has {bath}")]
    ChannelMismatch { sequence: usize, bath: usize },
    #[error("grid refinement stalled: relative change {change:.3e} after {refinements} refinements")]
    Refinement { change: f64, refinements: usize },
}

/// Accuracy knobs for both routes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    /// Relative tolerance of every adaptive integral, in (0, 1e-2].
    pub rel_tol: f64,
    /// Bisections allowed beyond the initial partition, at least 64.
    pub max_subdivisions: usize,
    /// Frequency window half-width in bath widths around every shifted resonance.
    pub window_multiplier: f64,
    /// Time step as a fraction of the shortest pulse interval.
    pub step_fraction: f64,
    /// Minimum number of grid intervals on `[0, T]`.
    pub min_points: usize,
    /// Grid halvings allowed while the relative change of J(T) exceeds `2·rel_tol`.
    pub max_refinements: usize,
    /// Fail instead of returning the last grid when refinement does not settle.
    pub strict_refinement: bool,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_subdivisions: 200,
            window_multiplier: 6.0,
            step_fraction: 1.0 / 20.0,
            min_points: 400,
            max_refinements: 2,
            strict_refinement: false,
        }
    }
}

impl QuadratureConfig {
    /// Coarse settings for design loops: no refinement, looser tolerance.
    pub fn fast() -> Self {
        Self {
            rel_tol: 1e-6,
            step_fraction: 1.0 / 8.0,
            min_points: 200,
            max_refinements: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecoherenceError> {
        if !(self.rel_tol > 0.0 && self.rel_tol <= 1e-2) {
            return Err(DecoherenceError::Config(format!(
                "rel_tol must lie in (0, 1e-2], got {}",
                self.rel_tol
            )));
        }
        if self.max_subdivisions < 64 {
            return Err(DecoherenceError::Config(format!(
                "max_subdivisions must be at least 64, got {}",
                self.max_subdivisions
            )));
        }
        if !(self.window_multiplier > 0.0 && self.window_multiplier.is_finite()) {
            return Err(DecoherenceError::Config("window_multiplier must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(DecoherenceError::Config("step_fraction must lie in (0, 1]".into()));
        }
        if self.min_points < 4 {
            return Err(DecoherenceError::Config("min_points must be at least 4".into()));
        }
        Ok(())
    }
}

fn check_channels(bath: &dyn Bath, seq: &PulseSequence) -> Result<(), DecoherenceError> {
    let n = bath.channels().len();
    if seq.len() != n {
        return Err(DecoherenceError::ChannelMismatch {
            sequence: seq.len(),
            bath: n,
        });
    }
    Ok(())
}

/// Evaluates the inner memory integral and assembles one-sided rates.
struct RateKernel<'a> {
    bath: &'a dyn Bath,
    seq: &'a PulseSequence,
    omega: Vec<f64>,
    memory: f64,
    tol: Tolerance,
    max_subdivisions: usize,
}

impl<'a> RateKernel<'a> {
    fn new(bath: &'a dyn Bath, seq: &'a PulseSequence, cfg: &QuadratureConfig) -> Self {
        let n = bath.channels().len();
        let mut scale: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                scale = scale.max(bath.correlation_scale(a, b));
            }
        }
        Self {
            bath,
            seq,
            omega: bath.channels().iter().map(|c| c.omega).collect(),
            memory: bath.memory_time(),
            tol: Tolerance::new(cfg.rel_tol * scale.max(f64::MIN_POSITIVE), cfg.rel_tol),
            max_subdivisions: cfg.max_subdivisions,
        }
    }

    fn n(&self) -> usize {
        self.omega.len()
    }

    /// I_ab(t) = ∫_0^{min(t, L)} η_b(t − τ) e^{iω_b τ} Φ_ab(τ) dτ.
    fn memory_integral(&self, t: f64) -> Result<CMatrix, DecoherenceError> {
        let n = self.n();
        let upper = t.min(self.memory);
        if upper <= 0.0 {
            return Ok(zeros(n));
        }
        let mut points = vec![0.0, upper];
        for b in 0..n {
            for s in self.seq.kick_times(b, t - upper, t) {
                points.push(t - s);
            }
        }
        points.sort_by(f64::total_cmp);
        points.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * upper);
        let est = integrate_over(
            |tau: f64| {
                let mut out = vec![ZERO; n * n];
                let factors: Vec<Complex64> = (0..n)
                    .map(|b| {
                        self.seq.coupled_factor(b, t - tau, Side::Left)
                            * Complex64::from_polar(1.0, self.omega[b] * tau)
                    })
                    .collect();
                for a in 0..n {
                    for b in 0..n {
                        out[a * n + b] = self.bath.correlation(a, b, tau) * factors[b];
                    }
                }
                out
            },
            &points,
            self.tol,
            points.len() + self.max_subdivisions,
        );
        if !est.converged {
            return Err(DecoherenceError::Quadrature {
                time: t,
                row: est.worst_component / n,
                col: est.worst_component % n,
                error: est.error,
            });
        }
        Ok(CMatrix::from_row_slice(n, n, &est.value))
    }

    fn rate_from(&self, inner: &CMatrix, t: f64, side: Side) -> CMatrix {
        let n = self.n();
        let outer: Vec<Complex64> = (0..n)
            .map(|a| self.seq.coupled_factor(a, t, side).conj())
            .collect();
        CMatrix::from_fn(n, n, |a, b| {
            outer[a] * Complex64::from_polar(1.0, (self.omega[a] - self.omega[b]) * t) * inner[(a, b)]
        })
    }
}

/// Instantaneous rate matrix R(t), taken as the `side` limit at kick times.
/// Amplitudes obey dα̃/dt = −R(t) α̃.
pub fn rate_matrix(
    bath: &dyn Bath,
    seq: &PulseSequence,
    t: f64,
    side: Side,
    cfg: &QuadratureConfig,
) -> Result<CMatrix, DecoherenceError> {
    cfg.validate()?;
    check_channels(bath, seq)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DecoherenceError::Time(format!("t must be finite and ≥ 0, got {t}")));
    }
    let kernel = RateKernel::new(bath, seq, cfg);
    let inner = kernel.memory_integral(t)?;
    Ok(kernel.rate_from(&inner, t, side))
}

/// Rates at the five Boole nodes of one grid interval. The first entry is the
/// right limit at the start, the last the left limit at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRates {
    pub start: f64,
    pub end: f64,
    pub nodes: [CMatrix; 5],
}

impl PanelRates {
    pub fn width(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrajectoryDiagnostics {
    /// max ‖R‖_max · t_corr; values approaching 1 leave the slowly-varying regime.
    pub validity_ratio: f64,
    pub refinements: usize,
    /// Relative change of J(T) at the last refinement, if any was made.
    pub refinement_change: Option<f64>,
    pub refinement_converged: bool,
    pub rate_evaluations: usize,
}

/// R(t) and J(t) on a time grid starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoherenceTrajectory {
    times: Vec<f64>,
    panels: Vec<PanelRates>,
    integrated: Vec<CMatrix>,
    requested: Vec<usize>,
    diagnostics: TrajectoryDiagnostics,
}

impl DecoherenceTrajectory {
    /// Builds a trajectory from a rate function on the given grid edges.
    /// Rates are sampled inside each interval only, so a function with jumps
    /// at grid points is handled as one-sided limits.
    pub fn from_rate_fn<F>(times: &[f64], f: F) -> Result<Self, DecoherenceError>
    where
        F: Fn(f64, Side) -> CMatrix,
    {
        validate_grid(times)?;
        let panels: Vec<PanelRates> = times
            .windows(2)
            .map(|w| panel_from(w[0], w[1], |t, s| Ok::<_, DecoherenceError>(f(t, s))))
            .collect::<Result<_, _>>()?;
        let n = panels.first().map_or(0, |p| p.nodes[0].nrows());
        let integrated = accumulate(&panels, n);
        Ok(Self {
            requested: (0..times.len()).collect(),
            times: times.to_vec(),
            panels,
            integrated,
            diagnostics: TrajectoryDiagnostics {
                validity_ratio: 0.0,
                refinements: 0,
                refinement_change: None,
                refinement_converged: true,
                rate_evaluations: 0,
            },
        })
    }

    pub fn channel_count(&self) -> usize {
        self.integrated[0].nrows()
    }

    /// All grid edges, strictly increasing from 0.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn panels(&self) -> &[PanelRates] {
        &self.panels
    }

    /// J at every grid edge.
    pub fn integrated(&self) -> &[CMatrix] {
        &self.integrated
    }

    /// Rate at grid edge `k`: right limit, or left limit at the final edge.
    pub fn rate(&self, k: usize) -> &CMatrix {
        if k < self.panels.len() {
            &self.panels[k].nodes[0]
        } else {
            &self.panels[k - 1].nodes[4]
        }
    }

    /// Grid indices of the requested output times, in request order.
    pub fn requested_indices(&self) -> &[usize] {
        &self.requested
    }

    pub fn requested_times(&self) -> Vec<f64> {
        self.requested.iter().map(|&k| self.times[k]).collect()
    }

    pub fn requested_j(&self) -> Vec<&CMatrix> {
        self.requested.iter().map(|&k| &self.integrated[k]).collect()
    }

    pub fn final_j(&self) -> &CMatrix {
        self.integrated.last().expect("grid has at least two edges")
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("grid has at least two edges")
    }

    pub fn diagnostics(&self) -> &TrajectoryDiagnostics {
        &self.diagnostics
    }

    /// J at a grid edge equal to `t` (relative tolerance 1e-12).
    pub fn j_at(&self, t: f64) -> Option<&CMatrix> {
        let k = self.times.partition_point(|&s| s < t - 1e-12 * t.abs().max(1.0));
        (k < self.times.len() && (self.times[k] - t).abs() <= 1e-12 * t.abs().max(1.0))
            .then(|| &self.integrated[k])
    }
}

fn validate_grid(times: &[f64]) -> Result<(), DecoherenceError> {
    if times.len() < 2 || times[0] != 0.0 {
        return Err(DecoherenceError::Time(
            "grid needs at least two points and must start at 0".into(),
        ));
    }
    if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(DecoherenceError::Time("grid must be strictly increasing".into()));
    }
    Ok(())
}

fn panel_nodes(a: f64, b: f64) -> [f64; 5] {
    let h = b - a;
    [a, a + 0.25 * h, a + 0.5 * h, a + 0.75 * h, b]
}

fn panel_from<E, F>(a: f64, b: f64, f: F) -> Result<PanelRates, E>
where
    F: Fn(f64, Side) -> Result<CMatrix, E>,
{
    let t = panel_nodes(a, b);
    Ok(PanelRates {
        start: a,
        end: b,
        nodes: [
            f(t[0], Side::Right)?,
            f(t[1], Side::Right)?,
            f(t[2], Side::Right)?,
            f(t[3], Side::Right)?,
            f(t[4], Side::Left)?,
        ],
    })
}

fn accumulate(panels: &[PanelRates], n: usize) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(panels.len() + 1);
    let mut j = zeros(n);
    out.push(j.clone());
    for p in panels {
        let flat: Vec<Vec<Complex64>> = p
            .nodes
            .iter()
            .map(|m| m.as_slice().to_vec())
            .collect();
        let inc = boole(p.width(), [&flat[0], &flat[1], &flat[2], &flat[3], &flat[4]]);
        j += CMatrix::from_column_slice(n, n, &inc);
        out.push(j.clone());
    }
    out
}

/// Grid edges on `[0, horizon]`: a uniform step plus every kick time and
/// requested output time.
pub fn build_grid(
    bath: &dyn Bath,
    seq: &PulseSequence,
    horizon: f64,
    outputs: &[f64],
    cfg: &QuadratureConfig,
    halvings: usize,
) -> Vec<f64> {
    let step = base_step(bath, seq, horizon, cfg) / (1u64 << halvings) as f64;
    let mut anchors: Vec<f64> = outputs.iter().copied().filter(|&t| t > 0.0 && t < horizon).collect();
    for c in 0..seq.len() {
        anchors.extend(seq.kick_times(c, 0.0, horizon));
    }
    anchors.push(0.0);
    anchors.push(horizon);
    anchors.sort_by(f64::total_cmp);
    anchors.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * horizon);

    let mut grid = Vec::with_capacity(anchors.len() + (horizon / step) as usize + 2);
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = ((b - a) / step - 0.05).ceil().max(1.0) as usize;
        for k in 0..pieces {
            grid.push(a + (b - a) * k as f64 / pieces as f64);
        }
    }
    grid.push(horizon);
    grid
}

fn base_step(bath: &dyn Bath, seq: &PulseSequence, horizon: f64, cfg: &QuadratureConfig) -> f64 {
    let n = seq.len();
    let tau_min = (0..n)
        .filter(|&c| seq.is_modulated(c))
        .map(|c| seq.train(c).tau)
        .fold(f64::INFINITY, f64::min);
    let (_, halfwidth) = bath.spectral_band();
    // The band half-width spans six bath widths.
    let bath_time = 6.0 / halfwidth.max(f64::MIN_POSITIVE);
    let omega: Vec<f64> = bath.channels().iter().map(|c| c.omega).collect();
    let mut spread: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            let shift = seq.effective_shift(a) - seq.effective_shift(b);
            spread = spread.max((omega[a] - omega[b]).abs() + shift.abs());
        }
    }
    let mut step = (horizon / cfg.min_points as f64).min(0.5 * bath_time);
    if tau_min.is_finite() {
        step = step.min(tau_min * cfg.step_fraction);
    }
    if spread > 0.0 {
        step = step.min(1.0 / spread);
    }
    step
}

/// J(t) on a grid reaching `max(outputs)`, refined until J(T) settles.
/// `outputs` are included as grid points and exposed through
/// [`DecoherenceTrajectory::requested_indices`].
pub fn integrated_j(
    bath: &dyn Bath,
    seq: &PulseSequence,
    outputs: &[f64],
    cfg: &QuadratureConfig,
) -> Result<DecoherenceTrajectory, DecoherenceError> {
    cfg.validate()?;
    check_channels(bath, seq)?;
    if outputs.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(DecoherenceError::Time("output times must be finite and ≥ 0".into()));
    }
    let horizon = outputs.iter().copied().fold(0.0, f64::max);
    if horizon <= 0.0 {
        return Err(DecoherenceError::Time("horizon must be positive".into()));
    }
    let kernel = RateKernel::new(bath, seq, cfg);
    let mut traj = trajectory_on(&kernel, build_grid(bath, seq, horizon, outputs, cfg, 0), outputs)?;
    let mut change = None;
    let mut settled = cfg.max_refinements == 0;
    let mut refinements = 0;
    while refinements < cfg.max_refinements {
        refinements += 1;
        let grid = build_grid(bath, seq, horizon, outputs, cfg, refinements);
        let finer = trajectory_on(&kernel, grid, outputs)?;
        let scale = max_abs(finer.final_j()).max(1e-300);
        let c = max_abs_diff(finer.final_j(), traj.final_j()) / scale;
        change = Some(c);
        traj = finer;
        if c < 2.0 * cfg.rel_tol {
            settled = true;
            break;
        }
    }
    if !settled && cfg.strict_refinement {
        return Err(DecoherenceError::Refinement {
            change: change.unwrap_or(f64::NAN),
            refinements,
        });
    }
    let ratio = traj
        .panels
        .iter()
        .flat_map(|p| p.nodes.iter())
        .map(max_abs)
        .fold(0.0, f64::max)
        * bath.correlation_time();
    traj.diagnostics.validity_ratio = ratio;
    traj.diagnostics.refinements = refinements;
    traj.diagnostics.refinement_change = change;
    traj.diagnostics.refinement_converged = settled;
    Ok(traj)
}

fn trajectory_on(
    kernel: &RateKernel<'_>,
    grid: Vec<f64>,
    outputs: &[f64],
) -> Result<DecoherenceTrajectory, DecoherenceError> {
    let n = kernel.n();
    // Interior nodes never sit on a kick, so one inner integral serves both
    // limits at the shared edges.
    let edge_inner: Vec<CMatrix> = grid
        .par_iter()
        .map(|&t| kernel.memory_integral(t))
        .collect::<Result<_, _>>()?;
    let panels: Vec<PanelRates> = grid
        .par_windows(2)
        .zip(edge_inner.par_windows(2))
        .map(|(w, inner)| {
            let t = panel_nodes(w[0], w[1]);
            let mid = |k: usize| -> Result<CMatrix, DecoherenceError> {
                Ok(kernel.rate_from(&kernel.memory_integral(t[k])?, t[k], Side::Right))
            };
            Ok(PanelRates {
                start: w[0],
                end: w[1],
                nodes: [
                    kernel.rate_from(&inner[0], t[0], Side::Right),
                    mid(1)?,
                    mid(2)?,
                    mid(3)?,
                    kernel.rate_from(&inner[1], t[4], Side::Left),
                ],
            })
        })
        .collect::<Result<_, DecoherenceError>>()?;
    let integrated = accumulate(&panels, n);
    let requested = outputs
        .iter()
        .map(|&t| {
            let k = grid.partition_point(|&s| s < t);
            let k = k.min(grid.len() - 1);
            if k > 0 && (grid[k - 1] - t).abs() < (grid[k] - t).abs() {
                k - 1
            } else {
                k
            }
        })
        .collect();
    let evaluations = grid.len() + 3 * (grid.len() - 1);
    Ok(DecoherenceTrajectory {
        times: grid,
        panels,
        integrated,
        requested,
        diagnostics: TrajectoryDiagnostics {
            validity_ratio: 0.0,
            refinements: 0,
            refinement_change: None,
            refinement_converged: true,
            rate_evaluations: evaluations,
        },
    })
}

/// K_t(ω)_ab = conj(η_{t,a}(ω − ω_a)) · η_{t,b}(ω − ω_b).
pub fn modulation_kernel(modspec: &ModulationSpectrum, omegas: &[f64], omega: f64, t: f64) -> CMatrix {
    let v: Vec<Complex64> = omegas
        .iter()
        .enumerate()
        .map(|(c, &w)| modspec.eval(c, omega - w, t))
        .collect();
    let n = v.len();
    CMatrix::from_fn(n, n, |a, b| v[a].conj() * v[b])
}

/// Relative size of |G| at a window edge above which the window is rejected.
pub const WINDOW_EDGE_TOLERANCE: f64 = 1e-7;

/// Frequency-domain route `½ ∫ G(ω) K_t(ω) dω`, equal to the Hermitian part
/// of the time-domain J(t).
pub fn overlap_j(
    spectrum: &CouplingSpectrum<'_>,
    modspec: &ModulationSpectrum,
    t: f64,
    cfg: &QuadratureConfig,
) -> Result<CMatrix, DecoherenceError> {
    cfg.validate()?;
    let bath = spectrum.bath();
    check_channels(bath, modspec.sequence())?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DecoherenceError::Time(format!("t must be finite and ≥ 0, got {t}")));
    }
    let n = bath.channels().len();
    if t == 0.0 {
        return Ok(zeros(n));
    }
    let omegas: Vec<f64> = bath.channels().iter().map(|c| c.omega).collect();
    let seq = modspec.sequence();
    let width = spectrum.support_halfwidth() / 6.0;
    let reach = cfg.window_multiplier * width;
    let mut lo = spectrum.center() - reach;
    let mut hi = spectrum.center() + reach;
    for (c, &w) in omegas.iter().enumerate() {
        let r = w + seq.effective_shift(c);
        lo = lo.min(r - reach);
        hi = hi.max(r + reach);
    }

    let peak = (0..n)
        .map(|a| spectrum.entry(a, a, spectrum.center()).norm())
        .fold(0.0, f64::max);
    for edge in [lo, hi] {
        let value = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .map(|(a, b)| spectrum.entry(a, b, edge).norm())
            .fold(0.0, f64::max);
        if value > WINDOW_EDGE_TOLERANCE * peak {
            return Err(DecoherenceError::Window {
                omega: edge,
                value,
                peak,
            });
        }
    }

    // Panels no wider than a quarter of the modulation-spectrum oscillation.
    let panels = ((hi - lo) * t / (0.5 * std::f64::consts::PI)).ceil().max(8.0) as usize;
    let points: Vec<f64> = (0..=panels)
        .map(|k| lo + (hi - lo) * k as f64 / panels as f64)
        .collect();
    let phi0 = (0..n)
        .map(|a| bath.correlation(a, a, 0.0).norm())
        .fold(0.0, f64::max);
    let tol = Tolerance::new(1e-2 * cfg.rel_tol * phi0 * t + f64::MIN_POSITIVE, cfg.rel_tol);
    let est = integrate_over(
        |w: f64| {
            let v: Vec<Complex64> = omegas
                .iter()
                .enumerate()
                .map(|(c, &wc)| modspec.eval(c, w - wc, t))
                .collect();
            let mut out = vec![ZERO; n * n];
            for a in 0..n {
                for b in 0..n {
                    out[a * n + b] = spectrum.entry(a, b, w) * v[a].conj() * v[b];
                }
            }
            out
        },
        &points,
        tol,
        panels + 1 + cfg.max_subdivisions * 8,
    );
    if !est.converged {
        return Err(DecoherenceError::Quadrature {
            time: t,
            row: est.worst_component / n,
            col: est.worst_component % n,
            error: est.error,
        });
    }
    Ok(CMatrix::from_row_slice(n, n, &est.value) * Complex64::new(0.5, 0.0))
}
