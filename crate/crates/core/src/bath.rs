//! Channels, bath correlation functions Φ and coupling spectra G.
//!
//! A *channel* is one excited level `n` of particle `j`; every matrix in the
//! crate is indexed by the flattened channel order of a [`ChannelSet`].
//!
//! The spectrum is tied to the correlation function by
//! `G(ω) = (1/2π) ∫ Φ(t) e^{iωt} dt`, so an unmodulated level at `ω₀` loses
//! amplitude at the long-time rate `πG(ω₀)` and population at the Golden-Rule
//! rate `2πG(ω₀)`.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{hermitian_eigenvalues, CMatrix, ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BathError {
    #[error("channel {index}: transition frequency must be positive and finite, got {omega}")]
    InvalidFrequency { index: usize, omega: f64 },
    #[error("duplicate channel (particle {particle}, level {level})")]
    DuplicateChannel { particle: usize, level: usize },
    #[error("no channel (particle {particle}, level {level})")]
    UnknownChannel { particle: usize, level: usize },
    #[error("invalid bath parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "coupling spectrum is not positive semidefinite: eigenvalue {min_eigenvalue:e} at ω = {omega}"
    )]
    Indefinite { omega: f64, min_eigenvalue: f64 },
}

/// One excited level of one particle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    /// Zero-based particle index.
    pub particle: usize,
    /// Zero-based level index within the particle.
    pub level: usize,
    /// Transition angular frequency (ħ = 1).
    pub omega: f64,
}

/// Ordered, validated list of channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    channels: Vec<Channel>,
    particles: usize,
}

impl ChannelSet {
    pub fn new(channels: Vec<Channel>) -> Result<Self, BathError> {
        for (index, c) in channels.iter().enumerate() {
            if !(c.omega.is_finite() && c.omega > 0.0) {
                return Err(BathError::InvalidFrequency {
                    index,
                    omega: c.omega,
                });
            }
            if channels[..index]
                .iter()
                .any(|o| o.particle == c.particle && o.level == c.level)
            {
                return Err(BathError::DuplicateChannel {
                    particle: c.particle,
                    level: c.level,
                });
            }
        }
        let particles = channels.iter().map(|c| c.particle + 1).max().unwrap_or(0);
        Ok(Self {
            channels,
            particles,
        })
    }

    /// Channels in particle-major order: (A,1), (A,2), ..., (B,1), ...
    /// `omega` is given in the same flattened order.
    pub fn grid(levels: &[usize], omega: &[f64]) -> Result<Self, BathError> {
        let total: usize = levels.iter().sum();
        if total != omega.len() {
            return Err(BathError::InvalidParameter {
                name: "omega",
                reason: format!("{} frequencies for {} channels", omega.len(), total),
            });
        }
        let mut channels = Vec::with_capacity(total);
        let mut k = 0;
        for (particle, &m) in levels.iter().enumerate() {
            for level in 0..m {
                channels.push(Channel {
                    particle,
                    level,
                    omega: omega[k],
                });
                k += 1;
            }
        }
        Self::new(channels)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn get(&self, index: usize) -> &Channel {
        &self.channels[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter()
    }

    pub fn particle_count(&self) -> usize {
        self.particles
    }

    pub fn index_of(&self, particle: usize, level: usize) -> Result<usize, BathError> {
        self.channels
            .iter()
            .position(|c| c.particle == particle && c.level == level)
            .ok_or(BathError::UnknownChannel { particle, level })
    }

    /// Flattened indices of the channels belonging to `particle`.
    pub fn channels_of(&self, particle: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.channels[i].particle == particle)
            .collect()
    }

    pub fn levels_per_particle(&self) -> Vec<usize> {
        (0..self.particles)
            .map(|p| self.channels_of(p).len())
            .collect()
    }

    /// Human-readable label such as `A1` or `B2`.
    pub fn label(&self, index: usize) -> String {
        let c = &self.channels[index];
        format!("{}{}", particle_label(c.particle), c.level + 1)
    }
}

pub fn particle_label(particle: usize) -> String {
    if particle < 26 {
        char::from(b'A' + particle as u8).to_string()
    } else {
        format!("P{}", particle + 1)
    }
}

/// A zero-temperature bath seen through its correlation matrix Φ(t) and
/// coupling spectrum G(ω), both indexed by flattened channel.
pub trait Bath: Send + Sync + fmt::Debug {
    fn channels(&self) -> &ChannelSet;

    /// Φ_ab(t). Satisfies Φ_ab(−t) = conj(Φ_ba(t)).
    fn correlation(&self, a: usize, b: usize, t: f64) -> Complex64;

    /// G_ab(ω) = (1/2π) ∫ Φ_ab(t) e^{iωt} dt.
    fn coupling(&self, a: usize, b: usize, omega: f64) -> Complex64;

    /// Lag beyond which every |Φ_ab| is below double-precision relevance.
    fn memory_time(&self) -> f64;

    /// `(center, halfwidth)` of the band outside which G is negligible.
    fn spectral_band(&self) -> (f64, f64);

    /// Representative (longest) bath correlation time.
    fn correlation_time(&self) -> f64;

    /// `∫_0^∞ |Φ_ab(t)| dt`, a natural magnitude scale for rate entries.
    fn correlation_scale(&self, a: usize, b: usize) -> f64;
}

/// Parameters of the Gaussian bath response
/// `Φ_{jj',nn'}(t) = γ d_n d_n' exp(−t²/4t_{jn}²) exp(−t²/4t_{j'n'}²) / (k₀r_min + |k₀r_j − k₀r_j'|)`
/// with `d_n = cos η_n`. Positions are the dimensionless products `k₀ r_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBathModel {
    channels: ChannelSet,
    gamma: f64,
    eta: Vec<f64>,
    t_corr: Vec<f64>,
    k0_rmin: f64,
    positions: Vec<f64>,
}

impl GaussianBathModel {
    /// `eta` is indexed by level, `t_corr` by channel, `positions` by particle.
    pub fn new(
        channels: ChannelSet,
        gamma: f64,
        eta: Vec<f64>,
        t_corr: Vec<f64>,
        k0_rmin: f64,
        positions: Vec<f64>,
    ) -> Result<Self, BathError> {
        let invalid = |name, reason: String| Err(BathError::InvalidParameter { name, reason });
        if !(gamma.is_finite() && gamma >= 0.0) {
            return invalid("gamma", format!("must be finite and >= 0, got {gamma}"));
        }
        if !(k0_rmin.is_finite() && k0_rmin > 0.0) {
            return invalid("k0_rmin", format!("must be > 0, got {k0_rmin}"));
        }
        if t_corr.len() != channels.len() {
            return invalid(
                "t_corr",
                format!("{} values for {} channels", t_corr.len(), channels.len()),
            );
        }
        if let Some(t) = t_corr.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return invalid("t_corr", format!("correlation times must be > 0, got {t}"));
        }
        let max_level = channels.iter().map(|c| c.level + 1).max().unwrap_or(0);
        if eta.len() < max_level {
            return invalid(
                "eta",
                format!("{} dipole angles for {} levels", eta.len(), max_level),
            );
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return invalid("eta", "dipole angles must be finite".into());
        }
        if positions.len() != channels.particle_count() {
            return invalid(
                "positions",
                format!(
                    "{} positions for {} particles",
                    positions.len(),
                    channels.particle_count()
                ),
            );
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return invalid("positions", "positions must be finite".into());
        }
        Ok(Self {
            channels,
            gamma,
            eta,
            t_corr,
            k0_rmin,
            positions,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn t_corr(&self) -> &[f64] {
        &self.t_corr
    }

    fn dipole(&self, a: usize) -> f64 {
        self.eta[self.channels.get(a).level].cos()
    }

    /// Φ_ab(0).
    pub fn amplitude(&self, a: usize, b: usize) -> f64 {
        let ca = self.channels.get(a);
        let cb = self.channels.get(b);
        let distance = (self.positions[ca.particle] - self.positions[cb.particle]).abs();
        self.gamma * self.dipole(a) * self.dipole(b) / (self.k0_rmin + distance)
    }

    /// Gaussian decay constant `a` in Φ_ab(t) = Φ_ab(0) e^{−a t²}.
    pub fn decay_constant(&self, a: usize, b: usize) -> f64 {
        0.25 / self.t_corr[a].powi(2) + 0.25 / self.t_corr[b].powi(2)
    }

    /// Φ for channels addressed as (particle, level), zero-based.
    pub fn correlation_between(
        &self,
        first: (usize, usize),
        second: (usize, usize),
        t: f64,
    ) -> Result<f64, BathError> {
        let a = self.channels.index_of(first.0, first.1)?;
        let b = self.channels.index_of(second.0, second.1)?;
        Ok(self.real_correlation(a, b, t))
    }

    pub fn real_correlation(&self, a: usize, b: usize, t: f64) -> f64 {
        self.amplitude(a, b) * (-self.decay_constant(a, b) * t * t).exp()
    }

    /// Analytic coupling spectrum, rejected if not positive semidefinite.
    pub fn spectrum(&self) -> Result<CouplingSpectrum<'_>, BathError> {
        CouplingSpectrum::checked(self)
    }
}

impl Bath for GaussianBathModel {
    fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    fn correlation(&self, a: usize, b: usize, t: f64) -> Complex64 {
        Complex64::new(self.real_correlation(a, b, t), 0.0)
    }

    fn coupling(&self, a: usize, b: usize, omega: f64) -> Complex64 {
        let k = self.decay_constant(a, b);
        let peak = self.amplitude(a, b) / (2.0 * PI) * (PI / k).sqrt();
        Complex64::new(peak * (-omega * omega / (4.0 * k)).exp(), 0.0)
    }

    fn memory_time(&self) -> f64 {
        // exp(-a t²) < 1e-17 once a t² > 39.2
        let t_max = self.correlation_time();
        78.4_f64.sqrt() * t_max
    }

    fn spectral_band(&self) -> (f64, f64) {
        let n = self.channels.len();
        let mut k_max: f64 = 0.0;
        for a in 0..n {
            for b in 0..n {
                k_max = k_max.max(self.decay_constant(a, b));
            }
        }
        (0.0, 6.0 * (2.0 * k_max).sqrt())
    }

    fn correlation_time(&self) -> f64 {
        self.t_corr.iter().copied().fold(0.0, f64::max)
    }

    fn correlation_scale(&self, a: usize, b: usize) -> f64 {
        self.amplitude(a, b).abs() * 0.5 * (PI / self.decay_constant(a, b)).sqrt()
    }
}

/// Bath whose spectrum is carried to `carrier`: Φ'(t) = Φ(t) e^{−i carrier t},
/// G'(ω) = G(ω − carrier). A level at the carrier sees a spectrum symmetric
/// about its own frequency and therefore no Lamb shift.
#[derive(Debug)]
pub struct Detuned {
    inner: Box<dyn Bath>,
    carrier: f64,
}

impl Detuned {
    pub fn new(inner: Box<dyn Bath>, carrier: f64) -> Self {
        Self { inner, carrier }
    }
}

impl Bath for Detuned {
    fn channels(&self) -> &ChannelSet {
        self.inner.channels()
    }
    fn correlation(&self, a: usize, b: usize, t: f64) -> Complex64 {
        self.inner.correlation(a, b, t) * Complex64::from_polar(1.0, -self.carrier * t)
    }
    fn coupling(&self, a: usize, b: usize, omega: f64) -> Complex64 {
        self.inner.coupling(a, b, omega - self.carrier)
    }
    fn memory_time(&self) -> f64 {
        self.inner.memory_time()
    }
    fn spectral_band(&self) -> (f64, f64) {
        let (c, w) = self.inner.spectral_band();
        (c + self.carrier, w)
    }
    fn correlation_time(&self) -> f64 {
        self.inner.correlation_time()
    }
    fn correlation_scale(&self, a: usize, b: usize) -> f64 {
        self.inner.correlation_scale(a, b)
    }
}

/// Bath with every cross-particle correlation removed (G_{jj'} ≡ 0, j ≠ j').
#[derive(Debug)]
pub struct Decoupled {
    inner: Box<dyn Bath>,
}

impl Decoupled {
    pub fn new(inner: Box<dyn Bath>) -> Self {
        Self { inner }
    }

    fn same_particle(&self, a: usize, b: usize) -> bool {
        let ch = self.inner.channels();
        ch.get(a).particle == ch.get(b).particle
    }
}

impl Bath for Decoupled {
    fn channels(&self) -> &ChannelSet {
        self.inner.channels()
    }
    fn correlation(&self, a: usize, b: usize, t: f64) -> Complex64 {
        if self.same_particle(a, b) {
            self.inner.correlation(a, b, t)
        } else {
            ZERO
        }
    }
    fn coupling(&self, a: usize, b: usize, omega: f64) -> Complex64 {
        if self.same_particle(a, b) {
            self.inner.coupling(a, b, omega)
        } else {
            ZERO
        }
    }
    fn memory_time(&self) -> f64 {
        self.inner.memory_time()
    }
    fn spectral_band(&self) -> (f64, f64) {
        self.inner.spectral_band()
    }
    fn correlation_time(&self) -> f64 {
        self.inner.correlation_time()
    }
    fn correlation_scale(&self, a: usize, b: usize) -> f64 {
        if self.same_particle(a, b) {
            self.inner.correlation_scale(a, b)
        } else {
            0.0
        }
    }
}

const PSD_SAMPLES: usize = 801;
const PSD_TOLERANCE: f64 = 1e-10;

/// The coupling spectrum matrix G(ω) of a bath.
#[derive(Debug, Clone, Copy)]
pub struct CouplingSpectrum<'a> {
    bath: &'a dyn Bath,
    center: f64,
    support_halfwidth: f64,
    min_eigenvalue: f64,
}

impl<'a> CouplingSpectrum<'a> {
    /// Builds the spectrum after checking positive semidefiniteness on a
    /// dense grid across the support.
    pub fn checked(bath: &'a dyn Bath) -> Result<Self, BathError> {
        let spectrum = Self::unchecked(bath);
        let (omega, min_eig, peak) = spectrum.psd_scan();
        if min_eig < -PSD_TOLERANCE * peak {
            return Err(BathError::Indefinite {
                omega,
                min_eigenvalue: min_eig,
            });
        }
        Ok(spectrum)
    }

    /// Builds the spectrum without the semidefiniteness check. The most
    /// negative eigenvalue found on the scan grid is still recorded.
    pub fn unchecked(bath: &'a dyn Bath) -> Self {
        let (center, support_halfwidth) = bath.spectral_band();
        let mut spectrum = Self {
            bath,
            center,
            support_halfwidth,
            min_eigenvalue: 0.0,
        };
        spectrum.min_eigenvalue = spectrum.psd_scan().1;
        spectrum
    }

    fn psd_scan(&self) -> (f64, f64, f64) {
        let mut worst = (self.center, f64::INFINITY);
        let mut peak: f64 = 0.0;
        let lo = self.center - self.support_halfwidth;
        let step = 2.0 * self.support_halfwidth / (PSD_SAMPLES - 1) as f64;
        for k in 0..PSD_SAMPLES {
            let omega = lo + step * k as f64;
            let ev = hermitian_eigenvalues(&self.at(omega));
            let (min, max) = (ev[0], ev[ev.len() - 1]);
            peak = peak.max(max);
            if min < worst.1 {
                worst = (omega, min);
            }
        }
        (worst.0, worst.1, peak)
    }

    pub fn bath(&self) -> &'a dyn Bath {
        self.bath
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// Frequency offset from [`center`](Self::center) beyond which entries are negligible.
    pub fn support_halfwidth(&self) -> f64 {
        self.support_halfwidth
    }

    /// Most negative eigenvalue seen on the construction scan (0 or above when PSD).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn entry(&self, a: usize, b: usize, omega: f64) -> Complex64 {
        self.bath.coupling(a, b, omega)
    }

    pub fn at(&self, omega: f64) -> CMatrix {
        let n = self.bath.channels().len();
        CMatrix::from_fn(n, n, |a, b| self.bath.coupling(a, b, omega))
    }
}
