//! Globally adaptive Gauss–Kronrod (7/15) quadrature.

use alloc::vec::Vec;

use crate::error::{Error, Result};

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

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { abs_tol: 1e-10, rel_tol: 1e-10, max_intervals: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

#[derive(Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

// Error estimate as in QUADPACK's QK15: the raw Kronrod-Gauss difference is
// rescaled by the integrand's mean absolute deviation over the panel.
fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut values = [0.0f64; 14];
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_k = libm::fabs(kronrod);
    for (j, (&x, &w)) in XGK.iter().zip(&WGK).take(7).enumerate() {
        let dx = half * x;
        let (lo, hi) = (f(center - dx), f(center + dx));
        values[2 * j] = lo;
        values[2 * j + 1] = hi;
        kronrod += w * (lo + hi);
        abs_k += w * (libm::fabs(lo) + libm::fabs(hi));
        if j % 2 == 1 {
            gauss += WG[j / 2] * (lo + hi);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[7] * libm::fabs(fc - mean);
    for (j, &w) in WGK.iter().take(7).enumerate() {
        asc += w * (libm::fabs(values[2 * j] - mean) + libm::fabs(values[2 * j + 1] - mean));
    }
    let (asc, abs_k) = (asc * libm::fabs(half), abs_k * libm::fabs(half));
    let mut error = libm::fabs((kronrod - gauss) * half);
    if asc != 0.0 && error != 0.0 {
        let ratio = 200.0 * error / asc;
        error = asc * f64::min(1.0, ratio * libm::sqrt(ratio));
    }
    if abs_k > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = f64::max(error, 50.0 * f64::EPSILON * abs_k);
    }
    Panel { a, b, value: kronrod * half, error }
}

impl Quadrature {
    pub fn with_tol(abs_tol: f64) -> Self {
        Quadrature { abs_tol, ..Default::default() }
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<Estimate> {
        self.integrate_points(f, &[a, b])
    }

    /// Integral over `[points[0], points[last]]`, with the initial panels
    /// split at every interior point. `points` must be nondecreasing.
    pub fn integrate_points<F: FnMut(f64) -> f64>(&self, mut f: F, points: &[f64]) -> Result<Estimate> {
        let mut panels: Vec<Panel> = Vec::with_capacity(16);
        for w in points.windows(2) {
            if w[1] > w[0] {
                panels.push(gauss_kronrod(&mut f, w[0], w[1]));
            }
        }
        if panels.is_empty() {
            return Ok(Estimate { value: 0.0, error: 0.0, evaluations: 0 });
        }
        let mut evaluations = 15 * panels.len();
        loop {
            let (value, error) = panels.iter().fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
            let target = f64::max(self.abs_tol, self.rel_tol * libm::fabs(value));
            if error <= target {
                return Ok(Estimate { value, error, evaluations });
            }
            if panels.len() >= self.max_intervals || !value.is_finite() {
                return Err(Error::QuadratureFailure { tolerance: target, estimate: error });
            }
            let worst = panels.iter().enumerate().max_by(|x, y| x.1.error.total_cmp(&y.1.error)).map(|(i, _)| i).unwrap_or(0);
            let p = panels.swap_remove(worst);
            let mid = 0.5 * (p.a + p.b);
            if mid <= p.a || mid >= p.b {
                // Interval can no longer be split in floating point.
                return Err(Error::QuadratureFailure { tolerance: target, estimate: error });
            }
            panels.push(gauss_kronrod(&mut f, p.a, mid));
            panels.push(gauss_kronrod(&mut f, mid, p.b));
            evaluations += 30;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn breakpoints_split_a_kink() {
        let q = Quadrature::with_tol(1e-13);
        let est = q.integrate_points(|x| libm::fabs(x - 0.3), &[0.0, 0.3, 0.3, 1.0]).unwrap();
        assert!((est.value - (0.045 + 0.245)).abs() < 1e-14);
        assert_eq!(est.evaluations, 30);
    }

    #[test]
    fn polynomial_exact() {
        let q = Quadrature::default();
        let est = q.integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0).unwrap();
        // 16/4 - 1/4 - (4 - 1) + 3
        assert!((est.value - 3.75).abs() < 1e-14);
    }

    #[test]
    fn gaussian_integral() {
        let q = Quadrature::with_tol(1e-12);
        let est = q.integrate(|x| libm::exp(-0.5 * x * x), -12.0, 12.0).unwrap();
        assert!((est.value - libm::sqrt(2.0 * core::f64::consts::PI)).abs() < 1e-11);
    }

    #[test]
    fn endpoint_singularity() {
        let q = Quadrature::with_tol(1e-10);
        // integral of x^-0.5 over [0,1] = 2
        let est = q.integrate(|x| 1.0 / libm::sqrt(x), 0.0, 1.0).unwrap();
        assert!((est.value - 2.0).abs() < 1e-8, "{}", est.value);
    }

    #[test]
    fn failure_reported() {
        let q = Quadrature { abs_tol: 1e-15, rel_tol: 0.0, max_intervals: 3 };
        let err = q.integrate(|x| libm::sin(1.0 / x), 1e-4, 1.0).unwrap_err();
        assert!(matches!(err, Error::QuadratureFailure { .. }));
    }
}
