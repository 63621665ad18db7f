//! Scalar special functions: log-gamma, the modified Bessel function of the
//! second kind `K_nu` for real order, and the standard normal law.
//!
//! `K_nu(x)` follows Temme's method: the order is split as `nu = n + mu` with
//! `|mu| <= 1/2`, the pair `K_mu, K_{mu+1}` is obtained from Temme's series for
//! `x < 2` and from Steed's continued fraction (CF2) otherwise, and the target
//! order is reached by forward recurrence, which is stable for `K`. The
//! recurrence runs in rescaled form so that large orders at small arguments do
//! not overflow; [`ln_bessel_k`] is finite wherever `K_nu(x)` is positive.

use crate::error::{Error, Result};
use std::f64::consts::PI;

const SERIES_EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const TEMME_SWITCH: f64 = 2.0;
const RESCALE: f64 = 1e250;

/// Taylor coefficients of `1/Gamma(1+z)` around `z = 0`.
const RECIP_GAMMA_1P: [f64; 31] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
    1.186_692_254_751_600_332_6e-18,
    1.412_380_655_318_031_781_6e-18,
    -2.298_745_684_435_370_206_6e-19,
    1.714_406_321_927_337_433_4e-20,
    1.337_351_730_493_693_114_9e-22,
];

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("log_gamma requires finite x > 0, got {x}")));
    }
    Ok(libm::lgamma(x))
}

/// `ln Gamma(x)` without argument checks; callers guarantee `x > 0`.
#[inline]
pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Per-order constants for evaluating `K_nu(x)` at many arguments.
#[derive(Debug, Clone, Copy)]
pub struct BesselOrder {
    nu: f64,
    steps: usize,
    mu: f64,
    gam1: f64,
    gam2: f64,
    gampl: f64,
    gammi: f64,
}

impl BesselOrder {
    pub fn new(nu: f64) -> Result<Self> {
        if !nu.is_finite() {
            return Err(Error::domain(format!("Bessel order must be finite, got {nu}")));
        }
        let nu = nu.abs();
        let steps = (nu + 0.5).floor();
        let mu = nu - steps;
        let (gam1, gam2) = temme_gammas(mu);
        Ok(BesselOrder {
            nu,
            steps: steps as usize,
            mu,
            gam1,
            gam2,
            gampl: gam2 - mu * gam1,
            gammi: gam2 + mu * gam1,
        })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// `ln K_nu(x)` for `x > 0` (unchecked).
    pub fn ln_k(&self, x: f64) -> f64 {
        let (mut k_mu, mut k_next, mut log_scale) = if x < TEMME_SWITCH {
            let (a, b) = self.temme(x);
            (a, b, 0.0)
        } else {
            let (a, b) = self.steed_scaled(x);
            (a, b, -x)
        };
        let two_over_x = 2.0 / x;
        for i in 1..=self.steps {
            let next = (self.mu + i as f64) * two_over_x * k_next + k_mu;
            k_mu = k_next;
            k_next = next;
            if k_next > RESCALE {
                k_mu /= RESCALE;
                k_next /= RESCALE;
                log_scale += RESCALE.ln();
            }
        }
        k_mu.ln() + log_scale
    }

    /// Temme's series for `(K_mu(x), K_{mu+1}(x))`, valid for small `x`.
    fn temme(&self, x: f64) -> (f64, f64) {
        let mu = self.mu;
        let half_x = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < SERIES_EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let d = -half_x.ln();
        let e = mu * d;
        let fact2 = if e.abs() < SERIES_EPS { 1.0 } else { e.sinh() / e };
        let mut ff = fact * (self.gam1 * e.cosh() + self.gam2 * fact2 * d);
        let mut sum = ff;
        let e = e.exp();
        let mut p = 0.5 * e / self.gampl;
        let mut q = 0.5 / (e * self.gammi);
        let mut c = 1.0;
        let dd = half_x * half_x;
        let mut sum1 = p;
        let mu2 = mu * mu;
        for i in 1..MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * SERIES_EPS {
                break;
            }
        }
        (sum, sum1 * 2.0 / x)
    }

    /// Steed's CF2 for `e^x (K_mu(x), K_{mu+1}(x))`, valid for `x >= 2`.
    fn steed_scaled(&self, x: f64) -> (f64, f64) {
        let mu = self.mu;
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu * mu;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < SERIES_EPS {
                break;
            }
        }
        let h = a1 * h;
        let k_mu = (PI / (2.0 * x)).sqrt() / s;
        let k_next = k_mu * (mu + x + 0.5 - h) / x;
        (k_mu, k_next)
    }
}

/// `Gamma_1(mu)` and `Gamma_2(mu)` of Temme's method, from the Taylor series
/// of `1/Gamma(1+z)`; free of the cancellation a direct difference suffers.
fn temme_gammas(mu: f64) -> (f64, f64) {
    let mu2 = mu * mu;
    let mut odd = 0.0;
    let mut even = 0.0;
    let mut pow = 1.0;
    for k in 0..15 {
        even += RECIP_GAMMA_1P[2 * k] * pow;
        odd += RECIP_GAMMA_1P[2 * k + 1] * pow;
        pow *= mu2;
        if pow < 1e-40 {
            break;
        }
    }
    even += RECIP_GAMMA_1P[30] * pow;
    (-odd, even)
}

fn check_bessel_args(nu: f64, x: f64) -> Result<()> {
    if !nu.is_finite() {
        return Err(Error::domain(format!("bessel_k order must be finite, got {nu}")));
    }
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::domain(format!("bessel_k requires finite x > 0, got {x}")));
    }
    Ok(())
}

/// `ln K_nu(x)` for `x > 0`; negative orders use `K_{-nu} = K_nu`.
pub fn ln_bessel_k(nu: f64, x: f64) -> Result<f64> {
    check_bessel_args(nu, x)?;
    Ok(BesselOrder::new(nu)?.ln_k(x))
}

/// Modified Bessel function of the second kind, `K_nu(x)`, for `x > 0`.
///
/// Returns `0` where the value underflows and `inf` where it overflows; use
/// [`ln_bessel_k`] when either is possible.
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    Ok(ln_bessel_k(nu, x)?.exp())
}

/// Exponentially scaled `e^x K_nu(x)`.
pub fn bessel_k_scaled(nu: f64, x: f64) -> Result<f64> {
    Ok((ln_bessel_k(nu, x)? + x).exp())
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_94;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal `(pdf, cdf)` at `z`.
pub fn std_normal(z: f64) -> (f64, f64) {
    (std_normal_pdf(z), std_normal_cdf(z))
}

/// Inverse of the standard normal distribution function.
///
/// A rational starting guess is polished by Halley iterations against
/// [`std_normal_cdf`]; upper-tail probabilities are mapped to the lower tail
/// so that `quantile(1 - p) == -quantile(p)` holds exactly.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("normal quantile requires 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-lower_tail_quantile(1.0 - p));
    }
    Ok(lower_tail_quantile(p))
}

fn lower_tail_quantile(p: f64) -> f64 {
    // Abramowitz-Stegun 26.2.23 starting value, |error| < 4.5e-4.
    let t = (-2.0 * p.ln()).sqrt();
    let num = 2.515_517 + t * (0.802_853 + t * 0.010_328);
    let den = 1.0 + t * (1.432_788 + t * (0.189_269 + t * 0.001_308));
    let mut z = -(t - num / den);
    for _ in 0..20 {
        let err = std_normal_cdf(z) - p;
        let u = err / std_normal_pdf(z);
        let step = u / (1.0 + 0.5 * z * u);
        z -= step;
        if step.abs() <= 1e-16 * z.abs().max(1.0) {
            break;
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_gamma_known_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-15);
        assert!((log_gamma(5.0).unwrap() - 24f64.ln()).abs() < 1e-14);
        assert!((log_gamma(0.5).unwrap() - 0.572_364_942_924_700_087).abs() < 1e-14);
    }

    #[test]
    fn log_gamma_rejects_bad_input() {
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
        assert!(log_gamma(f64::NAN).is_err());
        assert!(log_gamma(f64::INFINITY).is_err());
    }

    #[test]
    fn half_integer_closed_forms() {
        let k_half = bessel_k(0.5, 1.0).unwrap();
        let exact = (PI / 2.0).sqrt() * (-1.0f64).exp();
        assert!((k_half - exact).abs() / exact < 1e-13);

        let k_3half = bessel_k(1.5, 2.0).unwrap();
        let exact = (PI / 4.0).sqrt() * (-2.0f64).exp() * 1.5;
        assert!((k_3half - exact).abs() / exact < 1e-13);
    }

    #[test]
    fn bessel_rejects_nonpositive_argument() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -2.0).is_err());
        assert!(bessel_k(f64::NAN, 2.0).is_err());
    }

    #[test]
    fn bessel_negative_order_is_symmetric() {
        for &x in &[0.3, 1.0, 4.0] {
            assert_eq!(bessel_k(-1.3, x).unwrap(), bessel_k(1.3, x).unwrap());
        }
    }

    #[test]
    fn bessel_underflows_to_zero() {
        assert_eq!(bessel_k(0.0, 800.0).unwrap(), 0.0);
        assert!(ln_bessel_k(0.0, 800.0).unwrap().is_finite());
        assert!(ln_bessel_k(50.0, 1e-6).unwrap().is_finite());
    }

    #[test]
    fn bessel_decays_in_x() {
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let x = 0.05 * i as f64;
            let k = bessel_k(0.0, x).unwrap();
            assert!(k < prev);
            prev = k;
        }
    }

    #[test]
    fn temme_gammas_match_direct_formula() {
        for &mu in &[-0.5, -0.3, 0.2, 0.45] {
            let a = 1.0 / libm::tgamma(1.0 - mu);
            let b = 1.0 / libm::tgamma(1.0 + mu);
            let (g1, g2) = temme_gammas(mu);
            assert!((g1 - (a - b) / (2.0 * mu)).abs() < 1e-13);
            assert!((g2 - (a + b) / 2.0).abs() < 1e-14);
        }
        let (g1, g2) = temme_gammas(0.0);
        assert!((g1 + 0.577_215_664_901_532_9).abs() < 1e-15);
        assert_eq!(g2, 1.0);
    }

    #[test]
    fn normal_basics() {
        let (pdf, cdf) = std_normal(0.0);
        assert!((pdf - 0.398_942_28).abs() < 1e-8);
        assert_eq!(cdf, 0.5);
        assert!((std_normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        let z = std_normal_quantile(std_normal_cdf(1.3)).unwrap();
        assert!((z - 1.3).abs() < 1e-9);
    }

    #[test]
    fn normal_quantile_domain() {
        for &p in &[0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(std_normal_quantile(p).is_err());
        }
    }

    #[test]
    fn quantile_is_antisymmetric() {
        for &p in &[1e-5, 0.01, 0.2, 0.37, 0.4999] {
            let lo = std_normal_quantile(p).unwrap();
            let hi = std_normal_quantile(1.0 - p).unwrap();
            assert!((lo + hi).abs() < 1e-9, "p={p}: {lo} vs {hi}");
        }
    }

    #[test]
    fn cdf_symmetry() {
        for i in -80..=80 {
            let z = 0.1 * i as f64;
            assert!((std_normal_cdf(z) + std_normal_cdf(-z) - 1.0).abs() < 1e-14);
        }
    }
}
