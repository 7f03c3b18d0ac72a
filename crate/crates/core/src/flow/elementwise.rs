//! The sandwich transform `T = F⁻¹ ∘ Ψ_w ∘ F` with `Ψ_w` a softmax-weighted
//! mixture of integer-shape Beta CDFs.
//!
//! Integer shapes let every Beta CDF be written as a Bernstein tail sum, so
//! `Ψ_w(u)` and `1 - Ψ_w(u)` are both accumulated from nonnegative terms
//! using `u = F(z)` and `1 - u = F(-z)`. Neither tail suffers cancellation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::BaseKind;

/// Largest supported `α + β`.
pub const MAX_SHAPE_SUM: u32 = 32;
const NMAX: usize = MAX_SHAPE_SUM as usize;

/// Integer Beta shape pairs `(α, β)`.
///
/// An empty grid is allowed and denotes the identity elementwise transform
/// with no weight parameters (used for mean-field Gaussian maps).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, u32)>", into = "Vec<(u32, u32)>")]
pub struct ShapeGrid {
    shapes: Vec<(u32, u32)>,
    identity: Option<usize>,
}

impl ShapeGrid {
    pub fn new(shapes: Vec<(u32, u32)>) -> Result<Self> {
        for (k, &(a, b)) in shapes.iter().enumerate() {
            if a < 1 || b < 1 {
                return Err(Error::InvalidArgument(format!(
                    "shape ({a}, {b}) must have both entries >= 1"
                )));
            }
            if a + b > MAX_SHAPE_SUM {
                return Err(Error::InvalidArgument(format!(
                    "shape ({a}, {b}) exceeds alpha + beta <= {MAX_SHAPE_SUM}"
                )));
            }
            if shapes[..k].contains(&(a, b)) {
                return Err(Error::InvalidArgument(format!("duplicate shape ({a}, {b})")));
            }
        }
        let identity = shapes.iter().position(|&s| s == (1, 1));
        if !shapes.is_empty() && identity.is_none() {
            return Err(Error::InvalidArgument("shape grid must contain (1, 1)".into()));
        }
        Ok(Self { shapes, identity })
    }

    /// All pairs with `α + β ≤ bound`, ordered by sum then by `α`.
    pub fn with_bound(bound: u32) -> Result<Self> {
        if bound < 2 {
            return Err(Error::InvalidArgument(format!("shape bound {bound} < 2")));
        }
        let mut shapes = Vec::new();
        for s in 2..=bound {
            for a in 1..s {
                shapes.push((a, s - a));
            }
        }
        Self::new(shapes)
    }

    /// The grid that carries no parameters: `T(z) = z`.
    pub fn empty() -> Self {
        Self { shapes: Vec::new(), identity: None }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shapes(&self) -> &[(u32, u32)] {
        &self.shapes
    }

    /// Index of the `(1, 1)` entry, `None` for the empty grid.
    pub fn identity_index(&self) -> Option<usize> {
        self.identity
    }

    fn max_degree(&self) -> usize {
        self.shapes.iter().map(|&(a, b)| (a + b - 1) as usize).max().unwrap_or(0)
    }
}

impl Default for ShapeGrid {
    fn default() -> Self {
        Self::with_bound(7).expect("valid default bound")
    }
}

impl TryFrom<Vec<(u32, u32)>> for ShapeGrid {
    type Error = Error;
    fn try_from(v: Vec<(u32, u32)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ShapeGrid> for Vec<(u32, u32)> {
    fn from(g: ShapeGrid) -> Self {
        g.shapes
    }
}

/// Softmax of `logits` written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; logits.len()];
    softmax_into(logits, &mut w);
    w
}

fn binomials() -> &'static [[f64; NMAX + 1]; NMAX + 1] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[[f64; NMAX + 1]; NMAX + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut c = [[0.0; NMAX + 1]; NMAX + 1];
        for n in 0..=NMAX {
            c[n][0] = 1.0;
            for k in 1..=n {
                c[n][k] = c[n - 1][k - 1] + if k < n { c[n - 1][k] } else { 0.0 };
            }
        }
        c
    })
}

/// Output of a plain evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElemValue {
    pub value: f64,
    pub log_deriv: f64,
}

/// Output of an evaluation with derivatives. Per-shape parameter
/// derivatives go into caller-provided buffers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElemDerivs {
    pub value: f64,
    pub log_deriv: f64,
    /// `Ṫ(z)`.
    pub deriv: f64,
    /// `d log Ṫ / dz`.
    pub dlog_deriv_dz: f64,
}

/// Borrowed view used by the layer code: a base, a grid and one
/// coordinate's softmax weights.
#[derive(Clone, Copy)]
pub(crate) struct Kernel<'a> {
    pub base: BaseKind,
    pub grid: &'a ShapeGrid,
    pub weights: &'a [f64],
}

struct Tails {
    u: f64,
    ubar: f64,
    p: f64,
    q: f64,
    t: f64,
    log_psi: f64,
    log_fz: f64,
    log_ft: f64,
}

impl<'a> Kernel<'a> {
    /// Bernstein evaluation of every shape's CDF, complement and pdf.
    /// `cdf`, `sf`, `pdf` must have length `S`.
    fn shape_terms(&self, u: f64, ubar: f64, cdf: &mut [f64], sf: &mut [f64], pdf: &mut [f64]) {
        let c = binomials();
        let n = self.grid.max_degree();
        let mut up = [1.0f64; NMAX + 1];
        let mut dp = [1.0f64; NMAX + 1];
        for j in 1..=n {
            up[j] = up[j - 1] * u;
            dp[j] = dp[j - 1] * ubar;
        }
        for (s, &(a, b)) in self.grid.shapes().iter().enumerate() {
            let (a, b) = (a as usize, b as usize);
            let n = a + b - 1;
            let mut hi = 0.0;
            for j in a..=n {
                hi += c[n][j] * up[j] * dp[n - j];
            }
            let mut lo = 0.0;
            for j in 0..a {
                lo += c[n][j] * up[j] * dp[n - j];
            }
            cdf[s] = hi;
            sf[s] = lo;
            pdf[s] = n as f64 * c[n - 1][a - 1] * up[a - 1] * dp[b - 1];
        }
    }

    fn log_psi_fallback(&self, u: f64, ubar: f64) -> f64 {
        // Log-domain mixture density for arguments so deep in a tail that the
        // direct products underflow.
        let c = binomials();
        let (lu, lb) = (u.ln(), ubar.ln());
        let mut m = f64::NEG_INFINITY;
        let mut terms = vec![f64::NEG_INFINITY; self.grid.len()];
        for (s, &(a, b)) in self.grid.shapes().iter().enumerate() {
            let w = self.weights[s];
            if w <= 0.0 {
                continue;
            }
            let (a, b) = (a as usize, b as usize);
            let n = a + b - 1;
            let mut l = w.ln() + (n as f64 * c[n - 1][a - 1]).ln();
            if a > 1 {
                l += (a - 1) as f64 * lu;
            }
            if b > 1 {
                l += (b - 1) as f64 * lb;
            }
            terms[s] = l;
            m = m.max(l);
        }
        if m == f64::NEG_INFINITY {
            return m;
        }
        m + terms.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
    }

    fn tails(&self, z: f64, cdf: &mut [f64], sf: &mut [f64], pdf: &mut [f64]) -> Tails {
        let base = self.base;
        let u = base.cdf(z);
        let ubar = base.sf(z);
        self.shape_terms(u, ubar, cdf, sf, pdf);
        let (mut p, mut q, mut psi) = (0.0, 0.0, 0.0);
        for (s, &w) in self.weights.iter().enumerate() {
            p += w * cdf[s];
            q += w * sf[s];
            psi += w * pdf[s];
        }
        let t = base.quantile_from_tails(p, q);
        let log_psi = if psi > 1e-280 { psi.ln() } else { self.log_psi_fallback(u, ubar) };
        Tails { u, ubar, p, q, t, log_psi, log_fz: base.log_pdf(z), log_ft: base.log_pdf(t) }
    }

    pub fn eval(&self, z: f64) -> ElemValue {
        if self.grid.is_empty() {
            return ElemValue { value: z, log_deriv: 0.0 };
        }
        let tl = with_scratch(self.grid.len(), |cdf, sf, pdf| self.tails(z, cdf, sf, pdf));
        ElemValue { value: tl.t, log_deriv: tl.log_psi + tl.log_fz - tl.log_ft }
    }

    /// Value and all derivatives. `dt_drho[s] = ∂T/∂ρ_s` and
    /// `dlog_drho[s] = ∂ log Ṫ / ∂ρ_s` with `ρ` the weight logits.
    pub fn eval_derivs(&self, z: f64, dt_drho: &mut [f64], dlog_drho: &mut [f64]) -> ElemDerivs {
        if self.grid.is_empty() {
            return ElemDerivs { value: z, log_deriv: 0.0, deriv: 1.0, dlog_deriv_dz: 0.0 };
        }
        let base = self.base;
        let s_len = self.grid.len();
        with_scratch(s_len, |cdf, sf, pdf| {
        let tl = self.tails(z, cdf, sf, pdf);
        let log_deriv = tl.log_psi + tl.log_fz - tl.log_ft;
        let deriv = log_deriv.exp();
        let fz = tl.log_fz.exp();
        let inv_ft = (-tl.log_ft).exp();
        let gt = base.dlog_pdf(tl.t);
        let (inv_u, inv_ub) = (1.0 / tl.u.max(f64::MIN_POSITIVE), 1.0 / tl.ubar.max(f64::MIN_POSITIVE));
        let inv_psi = (-tl.log_psi).exp();
        let lower = tl.p <= tl.q;
        let mut shape_slope = 0.0;
        for (s, &(a, b)) in self.grid.shapes().iter().enumerate() {
            let w = self.weights[s];
            let pi = if inv_psi.is_finite() { w * pdf[s] * inv_psi } else { 0.0 };
            shape_slope += pi * ((a - 1) as f64 * inv_u - (b - 1) as f64 * inv_ub);
            let diff = if lower { cdf[s] - tl.p } else { tl.q - sf[s] };
            dt_drho[s] = w * diff * inv_ft;
            dlog_drho[s] = pi - w - gt * dt_drho[s];
        }
        let dlog_deriv_dz = fz * shape_slope + base.dlog_pdf(z) - gt * deriv;
        ElemDerivs { value: tl.t, log_deriv, deriv, dlog_deriv_dz }
        })
    }
}

const STACK_SHAPES: usize = 64;

fn with_scratch<R>(s: usize, f: impl FnOnce(&mut [f64], &mut [f64], &mut [f64]) -> R) -> R {
    let mut stack = [0.0f64; 3 * STACK_SHAPES];
    let mut heap;
    let buf: &mut [f64] = if s <= STACK_SHAPES {
        &mut stack[..3 * s]
    } else {
        heap = vec![0.0; 3 * s];
        &mut heap
    };
    let (cdf, rest) = buf.split_at_mut(s);
    let (sf, pdf) = rest.split_at_mut(s);
    f(cdf, sf, pdf)
}

/// A standalone elementwise transform for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementwiseTransform {
    base: BaseKind,
    grid: ShapeGrid,
    logits: Vec<f64>,
    weights: Vec<f64>,
}

impl ElementwiseTransform {
    pub fn new(base: BaseKind, grid: ShapeGrid, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != grid.len() {
            return Err(Error::dim(grid.len(), logits.len()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidArgument("weight logits must be finite".into()));
        }
        let weights = softmax(&logits);
        Ok(Self { base, grid, logits, weights })
    }

    pub fn base(&self) -> BaseKind {
        self.base
    }

    pub fn grid(&self) -> &ShapeGrid {
        &self.grid
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn kernel(&self) -> Kernel<'_> {
        Kernel { base: self.base, grid: &self.grid, weights: &self.weights }
    }

    /// `(T(z), log Ṫ(z))`.
    pub fn forward(&self, z: f64) -> (f64, f64) {
        let v = self.kernel().eval(z);
        (v.value, v.log_deriv)
    }

    /// `Ψ_w(u)`, the mixture CDF on `[0, 1]`.
    pub fn psi(&self, u: f64) -> f64 {
        let s = self.grid.len();
        if s == 0 {
            return u;
        }
        let (mut cdf, mut sf, mut pdf) = (vec![0.0; s], vec![0.0; s], vec![0.0; s]);
        self.kernel().shape_terms(u, 1.0 - u, &mut cdf, &mut sf, &mut pdf);
        self.weights.iter().zip(&cdf).map(|(w, c)| w * c).sum()
    }

    /// Solve `T(z) = value` on `[-40, 40]`.
    pub fn inverse(&self, value: f64) -> Result<f64> {
        invert(self.kernel(), value)
    }
}

pub(crate) const INVERT_LO: f64 = -40.0;
pub(crate) const INVERT_HI: f64 = 40.0;

/// Safeguarded Newton on a bracket.
pub(crate) fn invert(k: Kernel<'_>, target: f64) -> Result<f64> {
    if k.grid.is_empty() {
        return Ok(target);
    }
    let (mut lo, mut hi) = (INVERT_LO, INVERT_HI);
    let f_lo = k.eval(lo).value - target;
    let f_hi = k.eval(hi).value - target;
    if f_lo > 0.0 || f_hi < 0.0 {
        if f_lo == 0.0 {
            return Ok(lo);
        }
        if f_hi == 0.0 {
            return Ok(hi);
        }
        return Err(Error::Inversion(format!(
            "value {target} outside the image of [{INVERT_LO}, {INVERT_HI}]"
        )));
    }
    let mut z = target.clamp(lo, hi);
    for _ in 0..200 {
        let v = k.eval(z);
        let r = v.value - target;
        if r == 0.0 {
            return Ok(z);
        }
        if r < 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let step = r / v.log_deriv.exp();
        let mut next = z - step;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) || hi - lo <= 1e-15 * (1.0 + z.abs()) {
            return Ok(next);
        }
        z = next;
    }
    Ok(z)
}
