//! Local control fields: impulsive phase modulation, its finite-time spectrum,
//! the weak-pulse delta approximation and AC-Stark probe-phase bookkeeping.
//!
//! Each channel carries a train of phase kicks θ every τ. The field amplitude
//! is `ε(t) = exp(i⌊t/τ⌋θ)` and its finite-time spectrum is
//! `ε_t(ω) = ∫_0^t ε(s) e^{iωs} ds`. Kicks are right-continuous: the kick at
//! `kτ` is already applied at `t = kτ`.
//!
//! The same train written as Stark kicks of area θ accumulates the phase
//! `∫δ = ⌊t/τ⌋θ`, and the factor that dresses the system–bath coupling is
//! `e^{−i∫δ} = conj(ε(t))`. That coupled factor places the effective
//! resonance of a level at `ω + Δ` with `Δ = θ/τ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::linalg::ZERO;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error("channel {channel}: pulse interval must be positive and finite, got {tau}")]
    InvalidInterval { channel: usize, tau: f64 },
    #[error("channel {channel}: phase kick must lie in (-2π, 2π), got {theta}")]
    InvalidPhase { channel: usize, theta: f64 },
    #[error("channel {channel}: weak-pulse approximation needs |θ| < π, got {theta}")]
    OutsideWeakPulseDomain { channel: usize, theta: f64 },
    #[error("probe time must be positive, got {0}")]
    InvalidProbeTime(f64),
    #[error("channel {channel}: Stark segment [{start}, {end}) is empty or reversed")]
    InvalidSegment { channel: usize, start: f64, end: f64 },
}

/// Which one-sided limit to take at a kick time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Kick train of one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseTrain {
    pub tau: f64,
    pub theta: f64,
}

impl PulseTrain {
    /// Number of kicks applied by time `t`.
    pub fn kicks(&self, t: f64, side: Side) -> i64 {
        let x = t / self.tau;
        let k = x.round();
        if (x - k).abs() <= 1e-12 * k.abs().max(1.0) {
            match side {
                Side::Right => k as i64,
                Side::Left => k as i64 - 1,
            }
        } else {
            x.floor() as i64
        }
        .max(0)
    }

    pub fn epsilon(&self, t: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.kicks(t, Side::Right) as f64 * self.theta)
    }

    /// Finite-time spectrum ∫_0^t ε(s) e^{iωs} ds in closed form, including the
    /// partial interval after the last completed kick.
    pub fn spectrum(&self, omega: f64, t: f64) -> Complex64 {
        if t <= 0.0 {
            return ZERO;
        }
        let n = self.kicks(t, Side::Right);
        let x = self.theta + omega * self.tau;
        let completed = if n == 0 {
            ZERO
        } else {
            segment(omega, self.tau)
                * Complex64::from_polar(dirichlet(n, x), 0.5 * (n - 1) as f64 * x)
        };
        let start = n as f64 * self.tau;
        let tail = Complex64::from_polar(1.0, n as f64 * self.theta + omega * start)
            * segment(omega, t - start);
        completed + tail
    }

    pub fn effective_shift(&self) -> f64 {
        self.theta / self.tau
    }
}

/// (e^{iωL} − 1)/(iω), continuous through ω = 0.
fn segment(omega: f64, len: f64) -> Complex64 {
    let h = 0.5 * omega * len;
    Complex64::from_polar(len * sinc(h), h)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Σ_{p<n} e^{ipx} = e^{i(n−1)x/2} · dirichlet(n, x), with the removable
/// singularities at x = 2πk taken as limits.
fn dirichlet(n: i64, x: f64) -> f64 {
    let k = (x / (2.0 * PI)).round();
    let y = x - 2.0 * PI * k;
    let sign = if ((k as i64) * (n - 1)).rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    };
    let s = (0.5 * y).sin();
    if s.abs() < 1e-300 {
        return sign * n as f64;
    }
    sign * (0.5 * n as f64 * y).sin() / s
}

/// Per-channel impulsive phase modulation.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    trains: Vec<PulseTrain>,
}

impl PulseSequence {
    pub fn new(tau: &[f64], theta: &[f64]) -> Result<Self, ModulationError> {
        assert_eq!(tau.len(), theta.len(), "one (τ, θ) pair per channel");
        let mut trains = Vec::with_capacity(tau.len());
        for (channel, (&tau, &theta)) in tau.iter().zip(theta).enumerate() {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(ModulationError::InvalidInterval { channel, tau });
            }
            if !(theta.is_finite() && theta.abs() < 2.0 * PI) {
                return Err(ModulationError::InvalidPhase { channel, theta });
            }
            trains.push(PulseTrain { tau, theta });
        }
        Ok(Self { trains })
    }

    /// No modulation on any of `channels`.
    pub fn unmodulated(channels: usize) -> Self {
        Self {
            trains: vec![PulseTrain { tau: 1.0, theta: 0.0 }; channels],
        }
    }

    /// The same train on every channel.
    pub fn global(channels: usize, tau: f64, theta: f64) -> Result<Self, ModulationError> {
        Self::new(&vec![tau; channels], &vec![theta; channels])
    }

    pub fn len(&self) -> usize {
        self.trains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trains.is_empty()
    }

    pub fn train(&self, channel: usize) -> &PulseTrain {
        &self.trains[channel]
    }

    pub fn taus(&self) -> Vec<f64> {
        self.trains.iter().map(|p| p.tau).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.trains.iter().map(|p| p.theta).collect()
    }

    pub fn is_modulated(&self, channel: usize) -> bool {
        self.trains[channel].theta != 0.0
    }

    /// ε(t) = exp(i⌊t/τ⌋θ) for `channel`.
    pub fn epsilon_time(&self, channel: usize, t: f64) -> Complex64 {
        self.trains[channel].epsilon(t)
    }

    /// ε_t(ω) = ∫_0^t ε(s) e^{iωs} ds for `channel`.
    pub fn epsilon_spectrum(&self, channel: usize, omega: f64, t: f64) -> Complex64 {
        self.trains[channel].spectrum(omega, t)
    }

    /// Δ = θ/τ.
    pub fn effective_shift(&self, channel: usize) -> f64 {
        self.trains[channel].effective_shift()
    }

    /// Modulation factor multiplying the system–bath coupling of `channel`,
    /// `conj(ε(t))`, as a one-sided limit at kick times.
    pub fn coupled_factor(&self, channel: usize, t: f64, side: Side) -> Complex64 {
        let p = &self.trains[channel];
        if p.theta == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        Complex64::from_polar(1.0, -(p.kicks(t, side) as f64) * p.theta)
    }

    /// Kick times of `channel` strictly inside `(t0, t1)`.
    pub fn kick_times(&self, channel: usize, t0: f64, t1: f64) -> Vec<f64> {
        let p = &self.trains[channel];
        if p.theta == 0.0 {
            return Vec::new();
        }
        let first = (t0 / p.tau).floor() as i64 + 1;
        (first.max(1)..)
            .map(|k| k as f64 * p.tau)
            .take_while(|&s| s < t1)
            .filter(|&s| s > t0)
            .collect()
    }

    pub fn max_abs_shift(&self) -> f64 {
        (0..self.len())
            .map(|c| self.effective_shift(c).abs())
            .fold(0.0, f64::max)
    }

    /// Spectrum of the coupled factors, exact form.
    pub fn spectrum(&self) -> ModulationSpectrum {
        ModulationSpectrum {
            seq: self.clone(),
            kind: SpectrumKind::Exact,
        }
    }

    /// Weak-pulse approximation of the coupled spectrum: a normalized
    /// Gaussian line of width 2π/t at the effective shift. Every channel
    /// must satisfy |θ| < π.
    pub fn delta_approximation(&self) -> Result<ModulationSpectrum, ModulationError> {
        for (channel, p) in self.trains.iter().enumerate() {
            if p.theta.abs() >= PI {
                return Err(ModulationError::OutsideWeakPulseDomain {
                    channel,
                    theta: p.theta,
                });
            }
        }
        Ok(ModulationSpectrum {
            seq: self.clone(),
            kind: SpectrumKind::DeltaApproximation,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumKind {
    Exact,
    DeltaApproximation,
}

/// Finite-time spectrum of the coupled modulation factors,
/// `η_t(ν) = ∫_0^t conj(ε(s)) e^{iνs} ds = conj(ε_t(−ν))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpectrum {
    seq: PulseSequence,
    kind: SpectrumKind,
}

impl ModulationSpectrum {
    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn sequence(&self) -> &PulseSequence {
        &self.seq
    }

    pub fn eval(&self, channel: usize, nu: f64, t: f64) -> Complex64 {
        if t <= 0.0 {
            return ZERO;
        }
        match self.kind {
            SpectrumKind::Exact => self.seq.epsilon_spectrum(channel, -nu, t).conj(),
            SpectrumKind::DeltaApproximation => {
                let detuning = nu - self.seq.effective_shift(channel);
                let sigma = 2.0 * PI / t;
                let line = (-0.5 * (detuning / sigma).powi(2)).exp() / ((2.0 * PI).sqrt() * sigma);
                Complex64::from_polar((2.0 * PI * t * line).sqrt(), 0.5 * detuning * t)
            }
        }
    }
}

/// Constant AC-Stark shift `value` on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarkSegment {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

/// Instantaneous Stark kick of phase area `area` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StarkKick {
    pub time: f64,
    pub area: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelSchedule {
    pub segments: Vec<StarkSegment>,
    pub kicks: Vec<StarkKick>,
}

impl ChannelSchedule {
    /// ∫_0^t δ(s) ds with kicks counted once `t` reaches them.
    pub fn phase(&self, t: f64) -> f64 {
        let smooth: f64 = self
            .segments
            .iter()
            .map(|s| (t.min(s.end) - s.start).max(0.0) * s.value)
            .sum();
        let kicks: f64 = self
            .kicks
            .iter()
            .filter(|k| k.time <= t * (1.0 + 1e-12) + 1e-300)
            .map(|k| k.area)
            .sum();
        smooth + kicks
    }
}

/// Piecewise-constant AC-Stark shifts δ_{j,n}(t) per channel, probed at `probe_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct StarkShiftSchedule {
    channels: Vec<ChannelSchedule>,
    probe_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbePhase {
    /// ∫_0^T δ.
    pub phase: f64,
    /// Nearest winding number m.
    pub winding: i64,
    /// |∫_0^T δ − 2πm|.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbePhaseReport {
    pub channels: Vec<ProbePhase>,
    pub passed: bool,
}

pub const PROBE_PHASE_TOLERANCE: f64 = 1e-9;

impl StarkShiftSchedule {
    pub fn new(channels: Vec<ChannelSchedule>, probe_time: f64) -> Result<Self, ModulationError> {
        if !(probe_time.is_finite() && probe_time > 0.0) {
            return Err(ModulationError::InvalidProbeTime(probe_time));
        }
        for (channel, ch) in channels.iter().enumerate() {
            if let Some(s) = ch.segments.iter().find(|s| !(s.end > s.start)) {
                return Err(ModulationError::InvalidSegment {
                    channel,
                    start: s.start,
                    end: s.end,
                });
            }
        }
        Ok(Self {
            channels,
            probe_time,
        })
    }

    /// Constant shift `value` on `[0, T)` for every channel.
    pub fn constant(values: &[f64], probe_time: f64) -> Result<Self, ModulationError> {
        let channels = values
            .iter()
            .map(|&value| ChannelSchedule {
                segments: vec![StarkSegment {
                    start: 0.0,
                    end: probe_time,
                    value,
                }],
                kicks: Vec::new(),
            })
            .collect();
        Self::new(channels, probe_time)
    }

    /// Impulsive limit of a pulse sequence: kicks of area θ at τ, 2τ, ... ≤ T.
    pub fn from_pulses(seq: &PulseSequence, probe_time: f64) -> Result<Self, ModulationError> {
        let channels = (0..seq.len())
            .map(|c| {
                let p = seq.train(c);
                let n = p.kicks(probe_time, Side::Right);
                ChannelSchedule {
                    segments: Vec::new(),
                    kicks: (1..=n)
                        .map(|k| StarkKick {
                            time: k as f64 * p.tau,
                            area: p.theta,
                        })
                        .collect(),
                }
            })
            .collect();
        Self::new(channels, probe_time)
    }

    pub fn probe_time(&self) -> f64 {
        self.probe_time
    }

    pub fn phase(&self, channel: usize, t: f64) -> f64 {
        self.channels[channel].phase(t)
    }

    /// e^{−i∫_0^t δ}, the coupled factor for an unmodulated perturbing field.
    pub fn factor(&self, channel: usize, t: f64) -> Complex64 {
        Complex64::from_polar(1.0, -self.phase(channel, t))
    }

    /// Checks ∫_0^T δ = 2πm per channel to within [`PROBE_PHASE_TOLERANCE`].
    pub fn check_probe_phase(&self) -> ProbePhaseReport {
        let channels: Vec<ProbePhase> = self
            .channels
            .iter()
            .map(|ch| {
                let phase = ch.phase(self.probe_time);
                let winding = (phase / (2.0 * PI)).round();
                ProbePhase {
                    phase,
                    winding: winding as i64,
                    residual: (phase - 2.0 * PI * winding).abs(),
                }
            })
            .collect();
        let passed = channels.iter().all(|p| p.residual < PROBE_PHASE_TOLERANCE);
        ProbePhaseReport { channels, passed }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Independent oracle: Gauss–Legendre on every constant-phase interval.
    fn brute_force_spectrum(p: &PulseTrain, omega: f64, t: f64) -> Complex64 {
        let nodes = gauss_legendre_20();
        let mut total = ZERO;
        let mut start = 0.0;
        let mut k = 0i64;
        while start < t {
            let end = ((k + 1) as f64 * p.tau).min(t);
            let phase = Complex64::from_polar(1.0, k as f64 * p.theta);
            let (mid, half) = (0.5 * (start + end), 0.5 * (end - start));
            // Sub-divide long intervals so the oscillation is resolved.
            let pieces = ((end - start) * omega.abs() / 2.0).ceil().max(1.0) as usize;
            for q in 0..pieces {
                let a = start + (end - start) * q as f64 / pieces as f64;
                let b = start + (end - start) * (q + 1) as f64 / pieces as f64;
                let (m2, h2) = (0.5 * (a + b), 0.5 * (b - a));
                for (x, w) in &nodes {
                    total += phase * Complex64::from_polar(w * h2, omega * (m2 + h2 * x));
                }
            }
            let _ = (mid, half);
            start = end;
            k += 1;
        }
        total
    }

    fn gauss_legendre_20() -> Vec<(f64, f64)> {
        // Newton iteration on P_20.
        let n = 20;
        (0..n)
            .map(|i| {
                let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 0.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    }

    #[test]
    fn epsilon_time_examples() {
        let s = PulseSequence::new(&[1.0], &[PI]).unwrap();
        assert!((s.epsilon_time(0, 0.5) - c(1.0, 0.0)).norm() < 1e-15);
        assert!((s.epsilon_time(0, 1.5) - c(-1.0, 0.0)).norm() < 1e-15);
        let s = PulseSequence::new(&[0.75], &[0.834 * PI]).unwrap();
        let expected = Complex64::from_polar(1.0, 2.0 * 0.834 * PI);
        assert!((s.epsilon_time(0, 2.0) - expected).norm() < 1e-15);
    }

    #[test]
    fn kicks_are_right_continuous() {
        let p = PulseTrain { tau: 0.1, theta: 1.0 };
        // 3 * 0.1 is not exactly representable.
        assert_eq!(p.kicks(3.0 * 0.1, Side::Right), 3);
        assert_eq!(p.kicks(3.0 * 0.1, Side::Left), 2);
        assert_eq!(p.kicks(0.0, Side::Left), 0);
    }

    #[test]
    fn unmodulated_spectrum_is_free_integral() {
        let s = PulseSequence::new(&[0.7], &[0.0]).unwrap();
        for &(w, t) in &[(0.3, 2.0), (-1.7, 5.3), (4.0, 0.2)] {
            let free = (Complex64::from_polar(1.0, w * t) - 1.0) / c(0.0, w);
            assert!((s.epsilon_spectrum(0, w, t) - free).norm() < 1e-13);
        }
        assert!((s.epsilon_spectrum(0, 0.0, 2.5) - c(2.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn pi_pulses_cancel_at_zero_frequency() {
        let s = PulseSequence::new(&[1.0], &[PI]).unwrap();
        assert!(s.epsilon_spectrum(0, 0.0, 2.0).norm() < 1e-15);
        assert!(s.epsilon_spectrum(0, 1e-9, 2.0).norm() < 1e-8);
    }

    #[test]
    fn spectrum_at_resonance_uses_limit() {
        // θ + ωτ = 2π: every completed interval adds coherently.
        let p = PulseTrain { tau: 1.0, theta: 0.5 };
        let w = 2.0 * PI - 0.5;
        assert!((p.spectrum(w, 7.0) - brute_force_spectrum(&p, w, 7.0)).norm() < 1e-11);
        assert!((p.spectrum(w, 7.0).norm() - 7.0 * segment(w, 1.0).norm()).abs() < 1e-11);
    }

    #[test]
    fn spectrum_vanishes_at_zero_time() {
        let s = PulseSequence::new(&[0.4], &[1.2]).unwrap();
        assert_eq!(s.epsilon_spectrum(0, 3.0, 0.0), ZERO);
        assert_eq!(s.spectrum().eval(0, 3.0, 0.0), ZERO);
    }

    #[test]
    fn effective_shift_examples() {
        let s = PulseSequence::new(&[1.0, 0.75, 2.0], &[PI, 0.834 * PI, 0.0]).unwrap();
        assert!((s.effective_shift(0) - PI).abs() < 1e-15);
        assert!((s.effective_shift(1) - 3.4935).abs() < 5e-5);
        assert_eq!(s.effective_shift(2), 0.0);
    }

    #[test]
    fn invalid_sequences() {
        assert!(PulseSequence::new(&[0.0], &[1.0]).is_err());
        assert!(PulseSequence::new(&[1.0], &[2.0 * PI]).is_err());
        assert!(PulseSequence::new(&[1.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn weak_pulse_peak_sits_at_effective_shift() {
        let s = PulseSequence::new(&[1.0], &[0.05 * PI]).unwrap();
        let spec = s.spectrum();
        let t = 200.0;
        let delta = s.effective_shift(0);
        let (mut best, mut arg) = (0.0, 0.0);
        for k in 0..=4000 {
            let nu = -1.0 + 2.0 * k as f64 / 4000.0;
            let v = spec.eval(0, nu, t).norm_sqr();
            if v > best {
                best = v;
                arg = nu;
            }
        }
        assert!((arg - delta).abs() < 0.05 * delta, "peak {arg} vs Δ {delta}");
        // The field amplitude itself peaks at the mirror frequency.
        let mirrored = s.epsilon_spectrum(0, -arg, t).norm_sqr();
        assert!((mirrored - best).abs() < 1e-9 * best);
    }

    #[test]
    fn delta_approximation_domain() {
        let s = PulseSequence::new(&[1.0, 1.0], &[0.05 * PI, PI]).unwrap();
        assert_eq!(
            s.delta_approximation(),
            Err(ModulationError::OutsideWeakPulseDomain {
                channel: 1,
                theta: PI
            })
        );
    }

    #[test]
    fn delta_approximation_carries_parseval_weight() {
        let s = PulseSequence::new(&[1.0], &[0.05 * PI]).unwrap();
        let spec = s.delta_approximation().unwrap();
        assert_eq!(spec.kind(), SpectrumKind::DeltaApproximation);
        let t = 50.0;
        let est = crate::quadrature::integrate(
            |nu| Complex64::new(spec.eval(0, nu, t).norm_sqr(), 0.0),
            -5.0,
            5.0,
            crate::quadrature::Tolerance::new(1e-12, 1e-12),
            500,
        );
        assert!((est.value.re / (2.0 * PI) - t).abs() < 1e-9);
    }

    #[test]
    fn exact_spectrum_parseval() {
        let s = PulseSequence::new(&[0.6], &[2.1]).unwrap();
        let t = 3.3;
        let est = crate::quadrature::integrate(
            |nu| Complex64::new(s.spectrum().eval(0, nu, t).norm_sqr(), 0.0),
            -4000.0,
            4000.0,
            crate::quadrature::Tolerance::new(1e-10, 1e-10),
            20000,
        );
        // Tails fall off as 1/ν², so the truncated integral misses ~4/4000.
        assert!((est.value.re / (2.0 * PI) - t).abs() < 2e-3);
    }

    #[test]
    fn probe_phase_examples() {
        let t = 3.0;
        let zero = StarkShiftSchedule::constant(&[0.0], t).unwrap().check_probe_phase();
        assert!(zero.passed && zero.channels[0].winding == 0);
        let one = StarkShiftSchedule::constant(&[2.0 * PI / t], t)
            .unwrap()
            .check_probe_phase();
        assert!(one.passed && one.channels[0].winding == 1);
        let bad = StarkShiftSchedule::constant(&[1.0 / t], t).unwrap().check_probe_phase();
        assert!(!bad.passed);
        assert!((bad.channels[0].residual - 1.0).abs() < 1e-12);
        assert!(StarkShiftSchedule::constant(&[0.0], 0.0).is_err());
    }

    #[test]
    fn impulsive_schedule_reproduces_coupled_factor() {
        let s = PulseSequence::new(&[0.85, 1.05], &[0.924 * PI, 0.91 * PI]).unwrap();
        let sched = StarkShiftSchedule::from_pulses(&s, 100.0).unwrap();
        for k in 0..400 {
            let t = 0.2503 * k as f64;
            for ch in 0..2 {
                let f = sched.factor(ch, t);
                assert!((f - s.coupled_factor(ch, t, Side::Right)).norm() < 1e-9);
                assert!((f - s.epsilon_time(ch, t).conj()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn full_pi_windings_pass_probe_check() {
        // Two π kicks per probe window give a 2π winding.
        let s = PulseSequence::new(&[1.0], &[PI]).unwrap();
        let report = StarkShiftSchedule::from_pulses(&s, 2.0).unwrap().check_probe_phase();
        assert!(report.passed);
        assert_eq!(report.channels[0].winding, 1);
        let report = StarkShiftSchedule::from_pulses(&s, 3.0).unwrap().check_probe_phase();
        assert!(!report.passed);
    }

    proptest! {
        #[test]
        fn closed_form_matches_quadrature(
            tau in 0.2..2.0f64,
            theta in -6.2..6.2f64,
            omega in -6.0..6.0f64,
            t in 0.0..12.0f64,
        ) {
            let p = PulseTrain { tau, theta };
            let exact = brute_force_spectrum(&p, omega, t);
            prop_assert!((p.spectrum(omega, t) - exact).norm() < 1e-10);
        }

        #[test]
        fn unit_modulus(tau in 0.1..3.0f64, theta in -6.2..6.2f64, t in 0.0..100.0f64) {
            let p = PulseTrain { tau, theta };
            prop_assert!((p.epsilon(t).norm() - 1.0).abs() < 1e-14);
        }

        #[test]
        fn additive_over_segments(
            tau in 0.2..2.0f64,
            theta in -6.2..6.2f64,
            omega in -5.0..5.0f64,
            t1 in 0.0..6.0f64,
            dt in 0.0..6.0f64,
        ) {
            let p = PulseTrain { tau, theta };
            let t2 = t1 + dt;
            let mid = crate::quadrature::integrate_over(
                |s: f64| p.epsilon(s) * Complex64::from_polar(1.0, omega * s),
                &{
                    let mut pts = vec![t1];
                    let mut k = (t1 / tau).floor() + 1.0;
                    while k * tau < t2 { pts.push(k * tau); k += 1.0; }
                    pts.push(t2);
                    pts
                },
                crate::quadrature::Tolerance::new(1e-14, 1e-13),
                2000,
            );
            let lhs = p.spectrum(omega, t2);
            let rhs = p.spectrum(omega, t1) + mid.value;
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn full_windings_vanish_at_zero_frequency(tau in 0.2..2.0f64, k in 1i64..20, m in 1i64..4) {
            // θ = 2πm/k: k kicks wind the phase m times.
            let theta = 2.0 * PI * m as f64 / k as f64;
            prop_assume!(theta.abs() < 2.0 * PI);
            let p = PulseTrain { tau, theta };
            prop_assert!(p.spectrum(0.0, k as f64 * tau).norm() < 1e-10 * tau * k as f64);
        }
    }
}
