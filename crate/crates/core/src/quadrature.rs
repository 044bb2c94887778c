//! Adaptive Gauss–Kronrod quadrature for complex-valued integrands.
//!
//! The 7-point Gauss / 15-point Kronrod pair is applied panel by panel and the
//! panel with the largest error estimate is bisected until the summed error
//! meets `max(abs, rel * |I|)` or the subdivision budget runs out. Vector-valued
//! integrands share one adaptive partition; their error is the max-norm over
//! components.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Absolute/relative accuracy request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    fn target(&self, magnitude: f64) -> f64 {
        self.abs.max(self.rel * magnitude)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Estimate<V> {
    pub value: V,
    pub error: f64,
    pub panels: usize,
    pub converged: bool,
    /// Component carrying the largest error on the worst panel.
    pub worst_component: usize,
}

/// Values the adaptive driver can accumulate.
pub trait QuadValue: Clone {
    fn zeros_like(&self) -> Self;
    fn add_scaled(&mut self, other: &Self, w: f64);
    fn add(&mut self, other: &Self);
    fn max_abs(&self) -> f64;
    fn max_abs_diff(&self, other: &Self) -> f64;
    fn worst_component(&self, other: &Self) -> usize;
}

impl QuadValue for Complex64 {
    fn zeros_like(&self) -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add_scaled(&mut self, other: &Self, w: f64) {
        *self += other * w;
    }
    fn add(&mut self, other: &Self) {
        *self += other;
    }
    fn max_abs(&self) -> f64 {
        self.norm()
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        (self - other).norm()
    }
    fn worst_component(&self, _other: &Self) -> usize {
        0
    }
}

impl QuadValue for Vec<Complex64> {
    fn zeros_like(&self) -> Self {
        vec![Complex64::new(0.0, 0.0); self.len()]
    }
    fn add_scaled(&mut self, other: &Self, w: f64) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += b * w;
        }
    }
    fn add(&mut self, other: &Self) {
        for (a, b) in self.iter_mut().zip(other) {
            *a += b;
        }
    }
    fn max_abs(&self) -> f64 {
        self.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
    fn max_abs_diff(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
    fn worst_component(&self, other: &Self) -> usize {
        self.iter()
            .zip(other)
            .map(|(a, b)| (a - b).norm())
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map_or(0, |(i, _)| i)
    }
}

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
    worst: usize,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<V> Eq for Panel<V> {}
impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Panel<V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk15<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64, usize) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc.zeros_like();
    let mut gauss = fc.zeros_like();
    kronrod.add_scaled(&fc, WGK[7]);
    gauss.add_scaled(&fc, WG[3]);
    for i in 0..7 {
        let dx = half * XGK[i];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        kronrod.add_scaled(&f1, WGK[i]);
        kronrod.add_scaled(&f2, WGK[i]);
        if i % 2 == 1 {
            gauss.add_scaled(&f1, WG[i / 2]);
            gauss.add_scaled(&f2, WG[i / 2]);
        }
    }
    let mut k = kronrod.zeros_like();
    k.add_scaled(&kronrod, half);
    let mut g = gauss.zeros_like();
    g.add_scaled(&gauss, half);
    let err = k.max_abs_diff(&g);
    let worst = k.worst_component(&g);
    (k, err, worst)
}

/// Integrate `f` over the partition given by `points` (sorted, at least two
/// entries). Interior points mark known discontinuities or features.
pub fn integrate_over<V, F>(
    mut f: F,
    points: &[f64],
    tol: Tolerance,
    max_panels: usize,
) -> Estimate<V>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    assert!(points.len() >= 2, "need at least one panel");
    let mut heap = BinaryHeap::with_capacity(points.len() * 2);
    let mut total: Option<V> = None;
    let mut total_err = 0.0;
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e, worst) = gk15(&mut f, w[0], w[1]);
        match total.as_mut() {
            Some(t) => t.add(&v),
            None => total = Some(v.clone()),
        }
        total_err += e;
        heap.push(Panel {
            a: w[0],
            b: w[1],
            value: v,
            error: e,
            worst,
        });
    }
    let Some(mut total) = total else {
        // Degenerate interval: zero-length range.
        let v = f(points[0]);
        return Estimate {
            value: v.zeros_like(),
            error: 0.0,
            panels: 0,
            converged: true,
            worst_component: 0,
        };
    };

    while total_err > tol.target(total.max_abs()) {
        if heap.len() >= max_panels {
            break;
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Cannot bisect further in floating point.
            heap.push(worst);
            break;
        }
        let (v1, e1, w1) = gk15(&mut f, worst.a, mid);
        let (v2, e2, w2) = gk15(&mut f, mid, worst.b);
        total.add_scaled(&worst.value, -1.0);
        total.add(&v1);
        total.add(&v2);
        total_err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
            worst: w1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
            worst: w2,
        });
    }

    // Re-sum in position order so the result does not carry the drift of the
    // incremental updates.
    let mut panels = heap.into_vec();
    panels.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut value = panels[0].value.zeros_like();
    let mut error = 0.0;
    let worst_component = panels
        .iter()
        .max_by(|p, q| p.error.total_cmp(&q.error))
        .map_or(0, |p| p.worst);
    for p in &panels {
        value.add(&p.value);
        error += p.error;
    }
    let converged = error <= tol.target(value.max_abs());
    Estimate {
        value,
        error,
        panels: panels.len(),
        converged,
        worst_component,
    }
}

/// Scalar integral of `f` over `[a, b]`.
pub fn integrate<F>(f: F, a: f64, b: f64, tol: Tolerance, max_panels: usize) -> Estimate<Complex64>
where
    F: FnMut(f64) -> Complex64,
{
    integrate_over(f, &[a, b], tol, max_panels)
}

/// Five-point closed Newton–Cotes (Boole) rule on a panel of width `h`.
/// `f` holds the integrand at offsets 0, h/4, h/2, 3h/4, h.
pub fn boole<V: QuadValue>(h: f64, f: [&V; 5]) -> V {
    let mut out = f[0].zeros_like();
    let w = [7.0, 32.0, 12.0, 32.0, 7.0];
    for (fi, wi) in f.iter().zip(w) {
        out.add_scaled(fi, wi * h / 90.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_integral() {
        let est = integrate(
            |x| Complex64::new((-x * x).exp(), 0.0),
            -10.0,
            10.0,
            Tolerance::new(1e-14, 1e-12),
            200,
        );
        assert!(est.converged);
        assert!((est.value.re - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_complex() {
        // ∫_0^10 e^{i 7 x} dx = (e^{70 i} - 1) / (7 i)
        let est = integrate(
            |x| Complex64::from_polar(1.0, 7.0 * x),
            0.0,
            10.0,
            Tolerance::new(1e-13, 1e-12),
            500,
        );
        let exact = (Complex64::from_polar(1.0, 70.0) - 1.0) / Complex64::new(0.0, 7.0);
        assert!((est.value - exact).norm() < 1e-12);
    }

    #[test]
    fn breakpoints_handle_jumps() {
        let est = integrate_over(
            |x: f64| Complex64::new(if x < 1.3 { 1.0 } else { -2.0 }, 0.0),
            &[0.0, 1.3, 2.0],
            Tolerance::new(1e-14, 1e-14),
            50,
        );
        assert!((est.value.re - (1.3 - 1.4)).abs() < 1e-13);
        assert_eq!(est.panels, 2);
    }

    #[test]
    fn vector_integrand_shares_partition() {
        let est = integrate_over(
            |x: f64| vec![Complex64::new(x, 0.0), Complex64::new(0.0, x * x)],
            &[0.0, 3.0],
            Tolerance::new(1e-14, 1e-13),
            50,
        );
        assert!((est.value[0].re - 4.5).abs() < 1e-13);
        assert!((est.value[1].im - 9.0).abs() < 1e-13);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let est = integrate(
            |x| Complex64::new((1.0 / x.max(1e-300)).sin(), 0.0),
            0.0,
            1.0,
            Tolerance::new(1e-15, 1e-15),
            16,
        );
        assert!(!est.converged);
        assert!(est.panels <= 16);
    }

    #[test]
    fn boole_is_exact_for_quintics() {
        let f = |x: f64| Complex64::new(x.powi(5) - 2.0 * x.powi(3) + x, 0.0);
        let h = 0.7;
        let v: Vec<Complex64> = (0..5).map(|k| f(k as f64 * h / 4.0)).collect();
        let got = boole(h, [&v[0], &v[1], &v[2], &v[3], &v[4]]);
        let exact = h.powi(6) / 6.0 - h.powi(4) / 2.0 + h * h / 2.0;
        assert!((got.re - exact).abs() < 1e-14);
    }
}
