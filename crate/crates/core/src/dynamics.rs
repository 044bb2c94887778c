//! Amplitude propagation, fidelity factors, concurrence, and the discretized
//! bath oracle.
//!
//! Amplitudes live in the rotating frame `α̃_c = e^{iω_c t + i∫δ_c} α_c`. At
//! probe times where every Stark phase winds by a multiple of 2π this frame
//! agrees with the lab frame up to the trivial free phases, so fidelities
//! are evaluated here throughout.

use nalgebra::{DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::bath::{Bath, ChannelSet};
use crate::decoherence::DecoherenceTrajectory;
use crate::linalg::{commutator, max_abs, CMatrix, ZERO};
use crate::modulation::{PulseSequence, Side};

pub type CVector = DVector<Complex64>;

/// Norm tolerance of the initial state.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Relative commutator size above which the exponential shortcut is rejected.
pub const COMMUTATOR_TOLERANCE: f64 = 1e-6;
/// Largest norm drift the oracle integrator may accumulate.
pub const ORACLE_NORM_TOLERANCE: f64 = 1e-6;
pub const MIN_ORACLE_MODES: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("initial state has norm² {0}, expected 1")]
    NotNormalized(f64),
    #[error("state has {state} entries, system has {channels} channels")]
    DimensionMismatch { state: usize, channels: usize },
    #[error("trajectory does not cover t = {0}")]
    Coverage(f64),
    #[error("step at t = {time} raised the norm² to {norm}")]
    StepRejected { time: f64, norm: f64 },
    #[error("oracle norm drift {drift:.3e} at t = {time}")]
    NormDrift { time: f64, drift: f64 },
    #[error("oracle needs at least {MIN_ORACLE_MODES} modes, got {0}")]
    TooFewModes(usize),
    #[error("invalid oracle window [{0}, {1}]")]
    Window(f64, f64),
    #[error("{0}")]
    Unsupported(String),
}

fn check_initial(alpha0: &CVector, n: usize) -> Result<(), DynamicsError> {
    if alpha0.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            state: alpha0.len(),
            channels: n,
        });
    }
    let norm = alpha0.norm_squared();
    if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(DynamicsError::NotNormalized(norm));
    }
    Ok(())
}

/// System amplitudes α̃(t) at a series of times.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemAmplitudes {
    pub times: Vec<f64>,
    pub amplitudes: Vec<CVector>,
}

impl SystemAmplitudes {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Σ|α̃|² at each time.
    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_squared()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// Fourth-order integration of dα̃/dt = −R(t)α̃ (time-ordered).
    Ode,
    /// α̃(t) = exp(−J(t)) α̃(0), exact when the J(t) commute.
    Exponential,
    /// Exponential when the commutator diagnostic allows it, otherwise ODE.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    /// Amplitudes at the trajectory's requested times.
    pub series: SystemAmplitudes,
    /// max_k ‖[J(t_k), J(T)]‖ / ‖J(T)‖² over requested times.
    pub commutator: f64,
    pub mode: PropagationMode,
    pub max_norm: f64,
}

/// max_k ‖[J(t_k), J(T)]‖_max / ‖J(T)‖_max².
pub fn commutator_diagnostic(traj: &DecoherenceTrajectory) -> f64 {
    let last = traj.final_j();
    let scale = max_abs(last).powi(2);
    if scale == 0.0 {
        return 0.0;
    }
    traj.requested_j()
        .iter()
        .map(|j| max_abs(&commutator(j, last)))
        .fold(0.0, f64::max)
        / scale
}

/// Propagates `alpha0` along `traj`. Norm growth above `1 + norm_slack` is a
/// step rejection.
pub fn propagate(
    traj: &DecoherenceTrajectory,
    alpha0: &CVector,
    mode: PropagationMode,
    norm_slack: f64,
) -> Result<Propagation, DynamicsError> {
    check_initial(alpha0, traj.channel_count())?;
    let commutator = commutator_diagnostic(traj);
    let used = match mode {
        PropagationMode::Auto if commutator <= COMMUTATOR_TOLERANCE => PropagationMode::Exponential,
        PropagationMode::Auto => PropagationMode::Ode,
        m => m,
    };
    let series = match used {
        PropagationMode::Exponential => SystemAmplitudes {
            times: traj.requested_times(),
            amplitudes: traj
                .requested_j()
                .iter()
                .map(|j| (-(*j).clone()).exp() * alpha0)
                .collect(),
        },
        _ => integrate_rates(traj, alpha0),
    };
    let mut max_norm: f64 = 0.0;
    for (t, a) in series.times.iter().zip(&series.amplitudes) {
        let norm = a.norm_squared();
        max_norm = max_norm.max(norm);
        if norm > 1.0 + norm_slack {
            return Err(DynamicsError::StepRejected { time: *t, norm });
        }
    }
    Ok(Propagation {
        series,
        commutator,
        mode: used,
        max_norm,
    })
}

/// Two RK4 half-steps per grid interval, reusing the stored Boole nodes.
fn integrate_rates(traj: &DecoherenceTrajectory, alpha0: &CVector) -> SystemAmplitudes {
    let mut at_edges = Vec::with_capacity(traj.times().len());
    let mut a = alpha0.clone();
    at_edges.push(a.clone());
    for p in traj.panels() {
        let s = 0.5 * p.width();
        for half in 0..2 {
            let (r0, r1, r2) = (&p.nodes[2 * half], &p.nodes[2 * half + 1], &p.nodes[2 * half + 2]);
            let k1 = -(r0 * &a);
            let k2 = -(r1 * (&a + &k1 * Complex64::new(0.5 * s, 0.0)));
            let k3 = -(r1 * (&a + &k2 * Complex64::new(0.5 * s, 0.0)));
            let k4 = -(r2 * (&a + &k3 * Complex64::new(s, 0.0)));
            a += (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
                * Complex64::new(s / 6.0, 0.0);
        }
        at_edges.push(a.clone());
    }
    let idx = traj.requested_indices();
    SystemAmplitudes {
        times: traj.requested_times(),
        amplitudes: idx.iter().map(|&k| at_edges[k].clone()).collect(),
    }
}

/// Fidelity decomposition over a series.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FidelityReport {
    pub times: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub population: Vec<f64>,
    pub correlation: Vec<f64>,
    /// Concurrence of the normalized state; `None` outside two-particle systems.
    pub concurrence: Vec<Option<f64>>,
    /// Set where all amplitude has left the system and F_c is undefined.
    pub absorbing: Vec<bool>,
}

/// F_p = Σ|α̃|², F_c = |⟨α̃(0), α̃(t)⟩|²/F_p, F = F_p·F_c.
pub fn fidelity(
    series: &SystemAmplitudes,
    alpha0: &CVector,
    channels: Option<&ChannelSet>,
) -> Result<FidelityReport, DynamicsError> {
    if series.is_empty() {
        return Err(DynamicsError::Unsupported("empty amplitude series".into()));
    }
    check_initial(alpha0, series.amplitudes[0].len())?;
    let mut r = FidelityReport {
        times: series.times.clone(),
        fidelity: Vec::with_capacity(series.len()),
        population: Vec::with_capacity(series.len()),
        correlation: Vec::with_capacity(series.len()),
        concurrence: Vec::with_capacity(series.len()),
        absorbing: Vec::with_capacity(series.len()),
    };
    for a in &series.amplitudes {
        let fp = a.norm_squared();
        let absorbing = fp <= f64::MIN_POSITIVE;
        let fc = if absorbing {
            0.0
        } else {
            (alpha0.dotc(a).norm_sqr() / fp).min(1.0)
        };
        r.population.push(fp);
        r.correlation.push(fc);
        r.fidelity.push(fp * fc);
        r.absorbing.push(absorbing);
        r.concurrence.push(match channels {
            Some(ch) if ch.particle_count() == 2 => concurrence(a, ch).ok().flatten(),
            _ => None,
        });
    }
    Ok(r)
}

/// Concurrence of the normalized single-excitation state of two particles,
/// `2√(p_A p_B)/(p_A + p_B)` with `p_j` the excited population of particle
/// `j`. For one level per particle this is `2|α_A α_B*|/(|α_A|² + |α_B|²)`.
/// `None` when both particles are empty.
pub fn concurrence(alpha: &CVector, channels: &ChannelSet) -> Result<Option<f64>, DynamicsError> {
    if channels.particle_count() != 2 {
        return Err(DynamicsError::Unsupported(format!(
            "concurrence needs two particles, got {}",
            channels.particle_count()
        )));
    }
    if alpha.len() != channels.len() {
        return Err(DynamicsError::DimensionMismatch {
            state: alpha.len(),
            channels: channels.len(),
        });
    }
    let p = |j: usize| -> f64 { channels.channels_of(j).iter().map(|&c| alpha[c].norm_sqr()).sum() };
    let (pa, pb) = (p(0), p(1));
    if pa + pb <= f64::MIN_POSITIVE {
        return Ok(None);
    }
    Ok(Some(2.0 * (pa * pb).sqrt() / (pa + pb)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellForm {
    pub population: f64,
    pub correlation: f64,
    pub concurrence: f64,
}

/// Closed forms for a Bell pair with independent decays J_A, J_B:
/// `F_p = (e^{−2Re J_A} + e^{−2Re J_B})/2`, `C = sech(Re ΔJ)` and
/// `F_c = 1/2 + cos(Im ΔJ)/(2 cosh(Re ΔJ))` with `ΔJ = J_A − J_B`. For real J
/// this is `F_c = (1 + C)/2`; a relative Lamb shift adds the cosine.
pub fn bell_closed_form(j_a: Complex64, j_b: Complex64) -> BellForm {
    let population = 0.5 * ((-2.0 * j_a.re).exp() + (-2.0 * j_b.re).exp());
    let dj = j_a - j_b;
    let c = 1.0 / dj.re.cosh();
    BellForm {
        population,
        correlation: 0.5 * (1.0 + dj.im.cos() * c),
        concurrence: c,
    }
}

/// (|A,1⟩ ± |B,1⟩)/√2 on the first level of the first two particles.
pub fn bell_state(channels: &ChannelSet, plus: bool) -> Result<CVector, DynamicsError> {
    if channels.particle_count() < 2 {
        return Err(DynamicsError::Unsupported("a Bell pair needs two particles".into()));
    }
    let a = channels.index_of(0, 0).map_err(|e| DynamicsError::Unsupported(e.to_string()))?;
    let b = channels.index_of(1, 0).map_err(|e| DynamicsError::Unsupported(e.to_string()))?;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CVector::zeros(channels.len());
    v[a] = Complex64::new(s, 0.0);
    v[b] = Complex64::new(if plus { s } else { -s }, 0.0);
    Ok(v)
}

/// Single excitation shared by the per-particle dark states
/// `|−⟩_j = (|1⟩_j − |2⟩_j)/√2`, with relative sign + or − between
/// consecutive particles.
pub fn dark_state(channels: &ChannelSet, plus: bool) -> Result<CVector, DynamicsError> {
    let n_p = channels.particle_count();
    let mut v = CVector::zeros(channels.len());
    let w = 1.0 / (2.0 * n_p as f64).sqrt();
    for j in 0..n_p {
        let (first, second) = match (channels.index_of(j, 0), channels.index_of(j, 1)) {
            (Ok(x), Ok(y)) => (x, y),
            _ => {
                return Err(DynamicsError::Unsupported(format!(
                    "particle {} needs two levels for a dark state",
                    crate::bath::particle_label(j)
                )))
            }
        };
        let sign = if plus || j % 2 == 0 { 1.0 } else { -1.0 };
        v[first] = Complex64::new(sign * w, 0.0);
        v[second] = Complex64::new(-sign * w, 0.0);
    }
    Ok(v)
}

/// Finite set of bath modes reproducing G(ω) on a uniform grid. Each grid
/// frequency carries up to one mode per channel, from the eigenvectors of
/// `G(ω_k) dω`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteBath {
    pub frequencies: Vec<f64>,
    /// `couplings[m][c]` = μ of mode m to channel c.
    pub couplings: Vec<Vec<Complex64>>,
    pub spacing: f64,
    /// Most negative eigenvalue of G(ω_k) dropped during the construction.
    pub clipped_eigenvalue: f64,
}

impl DiscreteBath {
    pub fn new(bath: &dyn Bath, modes: usize, window: (f64, f64)) -> Result<Self, DynamicsError> {
        if modes < MIN_ORACLE_MODES {
            return Err(DynamicsError::TooFewModes(modes));
        }
        let (lo, hi) = window;
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(DynamicsError::Window(lo, hi));
        }
        let n = bath.channels().len();
        let spacing = (hi - lo) / modes as f64;
        let mut frequencies = Vec::new();
        let mut couplings = Vec::new();
        let mut clipped: f64 = 0.0;
        for k in 0..modes {
            let w = lo + (k as f64 + 0.5) * spacing;
            let g = CMatrix::from_fn(n, n, |a, b| bath.coupling(a, b, w) * spacing);
            let g = (&g + g.adjoint()) * Complex64::new(0.5, 0.0);
            let eig = SymmetricEigen::new(g);
            let peak = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
            for (m, &lambda) in eig.eigenvalues.iter().enumerate() {
                if lambda < 0.0 {
                    clipped = clipped.min(lambda);
                }
                if lambda <= 1e-15 * peak || lambda <= 0.0 {
                    continue;
                }
                let s = lambda.sqrt();
                frequencies.push(w);
                couplings.push((0..n).map(|c| eig.eigenvectors[(c, m)] * s).collect());
            }
        }
        Ok(Self {
            frequencies,
            couplings,
            spacing,
            clipped_eigenvalue: clipped,
        })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// Poincaré recurrence time 2π/dω of the uniform grid.
    pub fn recurrence_time(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.spacing
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub modes: usize,
    /// Frequency window; `None` covers the bath band and every shifted resonance.
    pub window: Option<(f64, f64)>,
    /// Largest integration step.
    pub max_step: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            modes: 2000,
            window: None,
            max_step: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub series: SystemAmplitudes,
    /// Σ|α̃|² + Σ|β|² − 1 at each output time.
    pub norm_drift: Vec<f64>,
    /// Output times beyond the recurrence time of the mode grid.
    pub recurrence: Vec<bool>,
    pub recurrence_time: f64,
    pub modes: usize,
    pub clipped_eigenvalue: f64,
}

/// Default oracle window: the bath band plus every shifted resonance.
pub fn oracle_window(bath: &dyn Bath, seq: &PulseSequence) -> (f64, f64) {
    let (center, half) = bath.spectral_band();
    let width = half / 6.0;
    let (mut lo, mut hi) = (center - half, center + half);
    for (c, ch) in bath.channels().iter().enumerate() {
        let r = ch.omega + seq.effective_shift(c);
        lo = lo.min(r - width);
        hi = hi.max(r + width);
    }
    (lo, hi)
}

/// Direct integration of the single-excitation Schrödinger equation with a
/// discretized bath, in the interaction picture:
///
/// ```text
/// dα̃_c/dt = −i Σ_m μ_mc conj(η_c(t)) e^{i(ω_c − ω_m)t} β_m
/// dβ_m/dt  = −i Σ_c conj(μ_mc) η_c(t) e^{−i(ω_c − ω_m)t} α̃_c
/// ```
///
/// Steps are aligned to kick times. Output times beyond the recurrence time
/// are flagged rather than rejected.
pub fn discrete_bath_oracle(
    bath: &dyn Bath,
    seq: &PulseSequence,
    alpha0: &CVector,
    times: &[f64],
    opts: &OracleOptions,
) -> Result<OracleRun, DynamicsError> {
    let n = bath.channels().len();
    check_initial(alpha0, n)?;
    if seq.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            state: seq.len(),
            channels: n,
        });
    }
    let window = opts.window.unwrap_or_else(|| oracle_window(bath, seq));
    let modes = DiscreteBath::new(bath, opts.modes, window)?;
    let omega: Vec<f64> = bath.channels().iter().map(|c| c.omega).collect();
    let detuning_max = modes
        .frequencies
        .iter()
        .flat_map(|w| omega.iter().map(move |o| (o - w).abs()))
        .fold(0.0, f64::max);
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let mut step = opts.max_step.unwrap_or(0.05).min(0.1 / detuning_max.max(1e-300));
    if let Some(t) = (0..n)
        .filter(|&c| seq.is_modulated(c))
        .map(|c| seq.train(c).tau)
        .reduce(f64::min)
    {
        step = step.min(t / 4.0);
    }

    let mut anchors: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    for c in 0..n {
        anchors.extend(seq.kick_times(c, 0.0, horizon));
    }
    anchors.push(0.0);
    anchors.sort_by(f64::total_cmp);
    anchors.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * horizon.max(1.0));

    let m = modes.len();
    let mut state = Oracle {
        alpha: alpha0.iter().copied().collect(),
        beta: vec![ZERO; m],
        modes: &modes,
        omega: &omega,
        seq,
    };
    let mut out_times = Vec::new();
    let mut out = Vec::new();
    let mut drift = Vec::new();
    let record = |t: f64, s: &Oracle<'_>, out_times: &mut Vec<f64>, out: &mut Vec<CVector>, drift: &mut Vec<f64>| {
        out_times.push(t);
        out.push(CVector::from_vec(s.alpha.clone()));
        drift.push(s.norm() - 1.0);
    };
    let wanted = |t: f64| times.iter().any(|&x| (x - t).abs() <= 1e-12 * horizon.max(1.0));
    if wanted(0.0) {
        record(0.0, &state, &mut out_times, &mut out, &mut drift);
    }
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let steps = ((b - a) / step).ceil().max(1.0) as usize;
        let h = (b - a) / steps as f64;
        for k in 0..steps {
            state.rk4(a + k as f64 * h, h);
        }
        let d = state.norm() - 1.0;
        if d.abs() > ORACLE_NORM_TOLERANCE {
            return Err(DynamicsError::NormDrift { time: b, drift: d });
        }
        if wanted(b) {
            record(b, &state, &mut out_times, &mut out, &mut drift);
        }
    }
    let t_rec = modes.recurrence_time();
    Ok(OracleRun {
        recurrence: out_times.iter().map(|&t| t > t_rec).collect(),
        series: SystemAmplitudes {
            times: out_times,
            amplitudes: out,
        },
        norm_drift: drift,
        recurrence_time: t_rec,
        modes: m,
        clipped_eigenvalue: modes.clipped_eigenvalue,
    })
}

struct Oracle<'a> {
    alpha: Vec<Complex64>,
    beta: Vec<Complex64>,
    modes: &'a DiscreteBath,
    omega: &'a [f64],
    seq: &'a PulseSequence,
}

impl Oracle<'_> {
    fn norm(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).map(|z| z.norm_sqr()).sum()
    }

    /// Right-hand side at time `t`, taking the `side` limit of the modulation.
    fn rhs(&self, t: f64, side: Side, alpha: &[Complex64], beta: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let n = alpha.len();
        let eta: Vec<Complex64> = (0..n).map(|c| self.seq.coupled_factor(c, t, side)).collect();
        let mut da = vec![ZERO; n];
        let mut db = vec![ZERO; beta.len()];
        let minus_i = Complex64::new(0.0, -1.0);
        // Scaled system amplitudes entering the bath equations.
        let drive: Vec<Complex64> = (0..n)
            .map(|c| eta[c] * Complex64::from_polar(1.0, -self.omega[c] * t) * alpha[c])
            .collect();
        let mut pull = vec![ZERO; n];
        for (m, (&w, mu)) in self.modes.frequencies.iter().zip(&self.modes.couplings).enumerate() {
            let rot = Complex64::from_polar(1.0, w * t);
            let mut s = ZERO;
            for c in 0..n {
                s += mu[c].conj() * drive[c];
                pull[c] += mu[c] * beta[m] * rot.conj();
            }
            db[m] = minus_i * s * rot;
        }
        for c in 0..n {
            da[c] = minus_i * eta[c].conj() * Complex64::from_polar(1.0, self.omega[c] * t) * pull[c];
        }
        (da, db)
    }

    fn rk4(&mut self, t: f64, h: f64) {
        let axpy = |x: &[Complex64], k: &[Complex64], s: f64| -> Vec<Complex64> {
            x.iter().zip(k).map(|(a, b)| a + b * s).collect()
        };
        let mid = t + 0.5 * h;
        let (a1, b1) = self.rhs(t, Side::Right, &self.alpha, &self.beta);
        let (a2, b2) = self.rhs(mid, Side::Right, &axpy(&self.alpha, &a1, 0.5 * h), &axpy(&self.beta, &b1, 0.5 * h));
        let (a3, b3) = self.rhs(mid, Side::Right, &axpy(&self.alpha, &a2, 0.5 * h), &axpy(&self.beta, &b2, 0.5 * h));
        let (a4, b4) = self.rhs(t + h, Side::Left, &axpy(&self.alpha, &a3, h), &axpy(&self.beta, &b3, h));
        for c in 0..self.alpha.len() {
            self.alpha[c] += (a1[c] + a2[c] * 2.0 + a3[c] * 2.0 + a4[c]) * (h / 6.0);
        }
        for m in 0..self.beta.len() {
            self.beta[m] += (b1[m] + b2[m] * 2.0 + b3[m] * 2.0 + b4[m]) * (h / 6.0);
        }
    }
}
