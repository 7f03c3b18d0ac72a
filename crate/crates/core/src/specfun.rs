//! Scalar special functions.
//!
//! Normal and logistic CDFs, quantiles and densities, log-gamma and the
//! regularized incomplete beta function. Densities are also provided in log
//! form; the flow accumulates Jacobians exclusively in the log domain.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Quantile inputs are clamped to `[EPS, 1 - EPS]`.
pub const EPS: f64 = 1.0 / 9_007_199_254_740_992.0; // 2^-53

/// Smallest tail probability handed to a quantile inside the flow. Below this
/// the Gaussian quantile leaves the range where `Φ` is representable.
pub const TAIL_FLOOR: f64 = 1e-300;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    norm_log_pdf(x).exp()
}

pub fn norm_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF, accurate in relative terms in the lower tail.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of the standard normal CDF.
///
/// Inputs in `[0, EPS)` and `(1 - EPS, 1]` are clamped to the boundary of
/// `[EPS, 1 - EPS]`; anything outside `[0, 1]` is a domain error.
pub fn norm_icdf(u: f64) -> Result<f64> {
    let u = clamp_probability(u)?;
    Ok(if u <= 0.5 {
        norm_quantile_lower(u)
    } else {
        -norm_quantile_lower(1.0 - u)
    })
}

/// Evaluate `c[0] + c[1] r + … + c[k] r^k` by Horner's rule.
#[inline]
fn horner(c: &[f64], r: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * r + ci)
}

const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_5,
    133.141_667_891_784_38,
    1_971.590_950_306_551_3,
    13_731.693_765_509_461,
    45_921.953_931_549_87,
    67_265.770_927_008_7,
    33_430.575_583_588_128,
    2_509.080_928_730_122_7,
];
const AS241_B: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5_394.196_021_424_751,
    21_213.794_301_586_596,
    39_307.895_800_092_71,
    28_729.085_735_721_943,
    5_226.495_278_852_546,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_545,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
const AS241_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_8,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_07,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_8e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const AS241_F: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_9,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

/// Wichura's AS 241 (PPND16) for `p` in `(0, 0.5]`.
fn norm_quantile_lower(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(&AS241_A, r) / horner(&AS241_B, r);
    }
    let r = (-p.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(&AS241_C, r) / horner(&AS241_D, r)
    } else {
        let r = r - 5.0;
        horner(&AS241_E, r) / horner(&AS241_F, r)
    };
    -val
}

fn clamp_probability(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("probability {u} outside [0, 1]")));
    }
    Ok(u.clamp(EPS, 1.0 - EPS))
}

/// Logistic CDF `1 / (1 + e^{-x})`, evaluated without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log sigmoid(x)` without cancellation for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log(u / (1 - u))`, with the same clamping as [`norm_icdf`].
pub fn logit(u: f64) -> Result<f64> {
    let u = clamp_probability(u)?;
    Ok(if u <= 0.5 {
        logit_lower(u)
    } else {
        -logit_lower(1.0 - u)
    })
}

fn logit_lower(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(lanczos_ln_gamma(x))
}

fn lanczos_ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        return (PI / (PI * x).sin()).ln() - lanczos_ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// `ln B(a, b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    Ok(log_gamma(a)? + log_gamma(b)? - log_gamma(a + b)?)
}

fn check_shapes(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!(
            "beta shapes must be positive, got ({a}, {b})"
        )));
    }
    Ok(())
}

/// Regularized incomplete beta `I_x(a, b)`; `x` is clamped to `[0, 1]`.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if x.is_nan() {
        return Err(Error::Domain("beta_cdf of NaN".into()));
    }
    let x = x.clamp(0.0, 1.0);
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - log_beta(a, b)?;
    if x <= a / (a + b) {
        Ok(ln_front.exp() * beta_continued_fraction(x, a, b) / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b)
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const MAX_ITER: usize = 10_000;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Beta density.
pub fn beta_pdf(x: f64, a: f64, b: f64) -> Result<f64> {
    Ok(beta_log_pdf(x, a, b)?.exp())
}

/// Log of the Beta density; `-inf` outside the support.
pub fn beta_log_pdf(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Ok(f64::NEG_INFINITY);
    }
    let lx = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
    let ly = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - x).ln() };
    Ok(lx + ly - log_beta(a, b)?)
}

/// Univariate reference distribution whose inverse CDF is the base map `G`.
///
/// Both kinds are symmetric (`F(x) + F(-x) = 1`) with log-concave `F`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    /// `G = Φ⁻¹`.
    Gauss,
    /// `G = logit`, density `e^{-x} / (1 + e^{-x})²`.
    Logistic,
}

impl BaseKind {
    pub fn name(self) -> &'static str {
        match self {
            BaseKind::Gauss => "gauss",
            BaseKind::Logistic => "logistic",
        }
    }

    pub fn cdf(self, x: f64) -> f64 {
        match self {
            BaseKind::Gauss => norm_cdf(x),
            BaseKind::Logistic => sigmoid(x),
        }
    }

    /// Upper tail `1 - F(x) = F(-x)`, accurate when small.
    pub fn sf(self, x: f64) -> f64 {
        self.cdf(-x)
    }

    pub fn log_cdf(self, x: f64) -> f64 {
        match self {
            BaseKind::Gauss => norm_cdf(x).ln(),
            BaseKind::Logistic => log_sigmoid(x),
        }
    }

    pub fn log_pdf(self, x: f64) -> f64 {
        match self {
            BaseKind::Gauss => norm_log_pdf(x),
            BaseKind::Logistic => {
                let a = x.abs();
                -a - 2.0 * (-a).exp().ln_1p()
            }
        }
    }

    pub fn pdf(self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Derivative of the log density.
    pub fn dlog_pdf(self, x: f64) -> f64 {
        match self {
            BaseKind::Gauss => -x,
            BaseKind::Logistic => -(0.5 * x).tanh(),
        }
    }

    /// `F⁻¹(u)` with the [`EPS`] clamp.
    pub fn quantile(self, u: f64) -> Result<f64> {
        match self {
            BaseKind::Gauss => norm_icdf(u),
            BaseKind::Logistic => logit(u),
        }
    }

    /// Quantile from a lower-tail probability `p ≤ 0.5`, floored at [`TAIL_FLOOR`].
    fn quantile_lower(self, p: f64) -> f64 {
        let p = p.max(TAIL_FLOOR);
        match self {
            BaseKind::Gauss => norm_quantile_lower(p),
            BaseKind::Logistic => logit_lower(p),
        }
    }

    /// `F⁻¹(p)` given both `p` and `q = 1 - p`, each computed accurately.
    /// The smaller of the two drives the evaluation so neither tail loses
    /// precision.
    pub fn quantile_from_tails(self, p: f64, q: f64) -> f64 {
        if p <= q {
            self.quantile_lower(p)
        } else {
            -self.quantile_lower(q)
        }
    }
}
