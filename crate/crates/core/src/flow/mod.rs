//! Transport maps `τ = V · τ^K ∘ … ∘ τ^1 ∘ G` from the open unit cube to
//! `R^d`, with `τ^k(x) = T^k(L^k x + b^k)`.
//!
//! `G` applies the base quantile coordinatewise, each `L^k` is lower
//! triangular with `L_ii = exp(raw_ii)`, each `T^k` acts coordinatewise as a
//! sandwich transform (see [`elementwise`]) and the optional rotation `V`
//! is applied last.

pub mod elementwise;
mod model;

use serde::{Deserialize, Serialize};

pub use elementwise::{softmax, ElementwiseTransform, ShapeGrid};
pub use model::FORMAT_VERSION;

use crate::error::{Error, Result};
use crate::linalg::{LowerTriangular, Matrix};
use crate::specfun::BaseKind;
use elementwise::Kernel;

/// Which strictly-lower entries of every `L^k` are free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Dense lower triangle.
    Full,
    /// Dense leading `r × r` block, diagonal trailing block.
    Subspace { r: usize },
    /// Diagonal only.
    Diagonal,
}

impl Structure {
    #[inline]
    pub fn is_free(self, i: usize, j: usize) -> bool {
        debug_assert!(j < i);
        match self {
            Structure::Full => true,
            Structure::Subspace { r } => i < r,
            Structure::Diagonal => false,
        }
    }

    pub fn free_offdiag(self, d: usize) -> usize {
        match self {
            Structure::Full => d * (d - 1) / 2,
            Structure::Subspace { r } => r * r.saturating_sub(1) / 2,
            Structure::Diagonal => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Structure::Full => "full",
            Structure::Subspace { .. } => "subspace",
            Structure::Diagonal => "diagonal",
        }
    }
}

#[inline]
fn tri_index(i: usize, j: usize) -> usize {
    i * (i - 1) / 2 + j
}

/// One layer `x ↦ T(Lx + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowLayer {
    d: usize,
    raw_diag: Vec<f64>,
    /// Strictly lower entries, row by row: `(1,0), (2,0), (2,1), …`.
    lower: Vec<f64>,
    b: Vec<f64>,
    /// `d × S` weight logits, row `j` belongs to coordinate `j`.
    logits: Vec<f64>,
    weights: Vec<f64>,
    diag: Vec<f64>,
}

impl FlowLayer {
    pub fn new(raw_diag: Vec<f64>, lower: Vec<f64>, b: Vec<f64>, logits: Vec<f64>, s: usize) -> Result<Self> {
        let d = raw_diag.len();
        if lower.len() != d * d.saturating_sub(1) / 2 {
            return Err(Error::dim(d * d.saturating_sub(1) / 2, lower.len()));
        }
        if b.len() != d {
            return Err(Error::dim(d, b.len()));
        }
        if logits.len() != d * s {
            return Err(Error::dim(d * s, logits.len()));
        }
        let all = raw_diag.iter().chain(&lower).chain(&b).chain(&logits);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("layer parameters must be finite".into()));
        }
        let mut weights = vec![0.0; d * s];
        if s > 0 {
            for j in 0..d {
                elementwise::softmax_into(&logits[j * s..(j + 1) * s], &mut weights[j * s..(j + 1) * s]);
            }
        }
        let diag = raw_diag.iter().map(|r| r.exp()).collect();
        Ok(Self { d, raw_diag, lower, b, logits, weights, diag })
    }

    /// `L = I`, `b = 0`, logits `on` at the `(1,1)` shape and `off` elsewhere.
    fn with_logits(d: usize, grid: &ShapeGrid, on: f64, off: f64) -> Self {
        let s = grid.len();
        let mut logits = vec![off; d * s];
        if let Some(id) = grid.identity_index() {
            for j in 0..d {
                logits[j * s + id] = on;
            }
        }
        Self::new(vec![0.0; d], vec![0.0; d * d.saturating_sub(1) / 2], vec![0.0; d], logits, s)
            .expect("consistent shapes")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn raw_diag(&self) -> &[f64] {
        &self.raw_diag
    }

    pub fn lower_offdiag(&self) -> &[f64] {
        &self.lower
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `L` as a dense lower-triangular matrix.
    pub fn lower_triangular(&self) -> LowerTriangular {
        let mut m = Matrix::zeros(self.d, self.d);
        for i in 0..self.d {
            m[(i, i)] = self.diag[i];
            for j in 0..i {
                m[(i, j)] = self.lower[tri_index(i, j)];
            }
        }
        LowerTriangular::new(m).expect("lower by construction")
    }

    fn affine_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.d {
            let row = &self.lower[if i == 0 { 0 } else { tri_index(i, 0) }..][..i];
            let mut acc = self.b[i] + self.diag[i] * x[i];
            for (l, xj) in row.iter().zip(x) {
                acc += l * xj;
            }
            y[i] = acc;
        }
    }

    /// Solve `Lx = y - b`.
    fn affine_solve(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for i in 0..self.d {
            let mut acc = y[i] - self.b[i];
            for j in 0..i {
                acc -= self.lower[tri_index(i, j)] * x[j];
            }
            x[i] = acc / self.diag[i];
        }
        x
    }
}

/// Everything the reverse sweep needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    /// Input point after clamping.
    pub u: Vec<f64>,
    /// `x^0 = G(u)`, then each layer's output `x^1..x^K`.
    pub xs: Vec<Vec<f64>>,
    /// Pre-activations `L^k x^{k-1} + b^k` for each layer.
    pub pre: Vec<Vec<f64>>,
    /// `τ(u)`, i.e. `V x^K` or `x^K` without rotation.
    pub output: Vec<f64>,
    pub logdet: f64,
}

/// Gradient of `vᵀτ(u) + c·logdet(u)` with respect to the packed parameters
/// and to `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGradient {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    d: usize,
    base: BaseKind,
    grid: ShapeGrid,
    structure: Structure,
    layers: Vec<FlowLayer>,
    rotation: Option<Matrix>,
    eigenvalues: Option<Vec<f64>>,
}

impl TransportMap {
    pub fn new(
        d: usize,
        base: BaseKind,
        grid: ShapeGrid,
        structure: Structure,
        layers: Vec<FlowLayer>,
    ) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if let Structure::Subspace { r } = structure {
            if r == 0 || r > d {
                return Err(Error::InvalidArgument(format!("subspace rank {r} not in 1..={d}")));
            }
        }
        let s = grid.len();
        for (k, layer) in layers.iter().enumerate() {
            if layer.d != d || layer.logits.len() != d * s {
                return Err(Error::InvalidArgument(format!("layer {} has inconsistent shape", k + 1)));
            }
            for i in 1..d {
                for j in 0..i {
                    if !structure.is_free(i, j) && layer.lower[tri_index(i, j)] != 0.0 {
                        return Err(Error::InvalidArgument(format!(
                            "layer {}: entry ({i}, {j}) must be zero in {} mode",
                            k + 1,
                            structure.name()
                        )));
                    }
                }
            }
        }
        Ok(Self { d, base, grid, structure, layers, rotation: None, eigenvalues: None })
    }

    /// Exact identity layers: `L = I`, `b = 0`, all weight on `(1,1)`.
    /// With a Gauss base this map pushes the uniform cube to `N(0, I)`.
    pub fn identity(d: usize, base: BaseKind, k: usize, grid: ShapeGrid) -> Self {
        let layers = (0..k).map(|_| FlowLayer::with_logits(d, &grid, 0.0, -1000.0)).collect();
        Self::new(d, base, grid, Structure::Full, layers).expect("valid identity map")
    }

    /// Training initialisation: `L = I`, `b = 0`, logit `+6` on `(1,1)` and
    /// `0` elsewhere.
    pub fn initial(d: usize, base: BaseKind, k: usize, grid: ShapeGrid, structure: Structure) -> Result<Self> {
        let layers = (0..k).map(|_| FlowLayer::with_logits(d, &grid, 6.0, 0.0)).collect();
        Self::new(d, base, grid, structure, layers)
    }

    /// Attach an orthogonal rotation applied after the layers.
    pub fn with_rotation(mut self, v: Matrix, eigenvalues: Option<Vec<f64>>) -> Result<Self> {
        if v.rows() != self.d || v.cols() != self.d {
            return Err(Error::dim(self.d, v.rows()));
        }
        let vtv = v.transpose().matmul(&v)?;
        let err = vtv.max_abs_diff(&Matrix::identity(self.d));
        if err > 1e-8 {
            return Err(Error::InvalidArgument(format!("rotation is not orthogonal (error {err:.2e})")));
        }
        self.rotation = Some(v);
        self.eigenvalues = eigenvalues;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn base(&self) -> BaseKind {
        self.base
    }

    pub fn grid(&self) -> &ShapeGrid {
        &self.grid
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    pub fn layers(&self) -> &[FlowLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn rotation(&self) -> Option<&Matrix> {
        self.rotation.as_ref()
    }

    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.eigenvalues.as_deref()
    }

    fn kernel<'a>(&'a self, layer: &'a FlowLayer, j: usize) -> Kernel<'a> {
        let s = self.grid.len();
        Kernel { base: self.base, grid: &self.grid, weights: &layer.weights[j * s..(j + 1) * s] }
    }

    /// Number of free parameters of one layer.
    pub fn params_per_layer(&self) -> usize {
        let d = self.d;
        d + self.structure.free_offdiag(d) + d + d * self.grid.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.len() * self.params_per_layer()
    }

    /// Flatten the free parameters: per layer `raw_diag`, free strictly-lower
    /// entries row by row, `b`, then the `d × S` logits.
    pub fn pack(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            self.pack_layer_into(&layer.raw_diag, &layer.lower, &layer.b, &layer.logits, &mut theta);
        }
        theta
    }

    fn pack_layer_into(&self, raw: &[f64], lower: &[f64], b: &[f64], logits: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(raw);
        for i in 1..self.d {
            for j in 0..i {
                if self.structure.is_free(i, j) {
                    out.push(lower[tri_index(i, j)]);
                }
            }
        }
        out.extend_from_slice(b);
        out.extend_from_slice(logits);
    }

    /// A new map with the same structure and rotation and parameters `theta`.
    pub fn unpack(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.num_params() {
            return Err(Error::dim(self.num_params(), theta.len()));
        }
        let d = self.d;
        let s = self.grid.len();
        let mut it = theta.iter().copied();
        let mut layers = Vec::with_capacity(self.layers.len());
        for _ in 0..self.layers.len() {
            let raw: Vec<f64> = it.by_ref().take(d).collect();
            let mut lower = vec![0.0; d * d.saturating_sub(1) / 2];
            for i in 1..d {
                for j in 0..i {
                    if self.structure.is_free(i, j) {
                        lower[tri_index(i, j)] = it.next().expect("length checked");
                    }
                }
            }
            let b: Vec<f64> = it.by_ref().take(d).collect();
            let logits: Vec<f64> = it.by_ref().take(d * s).collect();
            layers.push(FlowLayer::new(raw, lower, b, logits, s)?);
        }
        Ok(Self { layers, ..self.clone_meta() })
    }

    /// The same map with independent `N(0, sigma²)` noise on every weight
    /// logit. `L` and `b` are left untouched.
    pub fn jitter_logits(&self, sigma: f64, rng: &mut crate::rng::SplitMix64) -> Self {
        let s = self.grid.len();
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let logits = l.logits.iter().map(|&v| v + sigma * rng.normal()).collect();
                FlowLayer::new(l.raw_diag.clone(), l.lower.clone(), l.b.clone(), logits, s).expect("finite jitter")
            })
            .collect();
        Self { layers, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            d: self.d,
            base: self.base,
            grid: self.grid.clone(),
            structure: self.structure,
            layers: Vec::new(),
            rotation: self.rotation.clone(),
            eigenvalues: self.eigenvalues.clone(),
        }
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.d {
            return Err(Error::dim(self.d, u.len()));
        }
        Ok(())
    }

    fn base_layer(&self, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut uc = Vec::with_capacity(self.d);
        let mut x0 = Vec::with_capacity(self.d);
        let mut logdet = 0.0;
        for &ui in u {
            let x = self.base.quantile(ui)?;
            uc.push(ui.clamp(crate::specfun::EPS, 1.0 - crate::specfun::EPS));
            logdet -= self.base.log_pdf(x);
            x0.push(x);
        }
        if !logdet.is_finite() {
            return Err(Error::Evaluation { layer: 0, message: "base transform log-det is not finite".into() });
        }
        Ok((uc, x0, logdet))
    }

    /// `τ(u)` with every intermediate kept.
    pub fn forward(&self, u: &[f64]) -> Result<ForwardRecord> {
        self.check_input(u)?;
        let (uc, x0, mut logdet) = self.base_layer(u)?;
        let mut xs = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        xs.push(x0);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; self.d];
            layer.affine_into(xs.last().expect("nonempty"), &mut y);
            let mut x = vec![0.0; self.d];
            let mut ld = 0.0;
            for j in 0..self.d {
                let v = self.kernel(layer, j).eval(y[j]);
                x[j] = v.value;
                ld += v.log_deriv + layer.raw_diag[j];
            }
            logdet += ld;
            if !logdet.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { layer: k + 1, message: "non-finite intermediate value".into() });
            }
            pre.push(y);
            xs.push(x);
        }
        let last = xs.last().expect("nonempty");
        let output = match &self.rotation {
            Some(v) => v.matvec(last)?,
            None => last.clone(),
        };
        Ok(ForwardRecord { u: uc, xs, pre, output, logdet })
    }

    /// `(τ(u), logdet)` without keeping intermediates.
    pub fn transform(&self, u: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(u)?;
        let (_, mut x, mut logdet) = self.base_layer(u)?;
        let mut y = vec![0.0; self.d];
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&x, &mut y);
            for j in 0..self.d {
                let v = self.kernel(layer, j).eval(y[j]);
                x[j] = v.value;
                logdet += v.log_deriv + layer.raw_diag[j];
            }
            if !logdet.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Evaluation { layer: k + 1, message: "non-finite intermediate value".into() });
            }
        }
        let out = match &self.rotation {
            Some(v) => v.matvec(&x)?,
            None => x,
        };
        Ok((out, logdet))
    }

    /// Reverse sweep: the gradient of `vᵀτ(u) + logdet_coef · logdet(u)`.
    pub fn backward(&self, rec: &ForwardRecord, v: &[f64], logdet_coef: f64) -> Result<MapGradient> {
        if v.len() != self.d {
            return Err(Error::dim(self.d, v.len()));
        }
        let d = self.d;
        let s = self.grid.len();
        let c0 = logdet_coef;
        let mut a = match &self.rotation {
            Some(rot) => rot.tr_matvec(v)?,
            None => v.to_vec(),
        };
        let per = self.params_per_layer();
        let mut params = vec![0.0; self.num_params()];
        let mut g_raw = vec![0.0; d];
        let mut g_lower = vec![0.0; d * d.saturating_sub(1) / 2];
        let mut g_logits = vec![0.0; d * s];
        let mut dlog_drho = vec![0.0; s];
        let mut c = vec![0.0; d];
        let mut packed = Vec::with_capacity(per);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x_prev = &rec.xs[k];
            let y = &rec.pre[k];
            for j in 0..d {
                let (gl, _) = g_logits[j * s..].split_at_mut(s);
                let e = self.kernel(layer, j).eval_derivs(y[j], gl, &mut dlog_drho);
                for t in 0..s {
                    gl[t] = a[j] * gl[t] + c0 * dlog_drho[t];
                }
                c[j] = a[j] * e.deriv + c0 * e.dlog_deriv_dz;
            }
            for i in 0..d {
                g_raw[i] = c[i] * x_prev[i] * layer.diag[i] + c0;
                for j in 0..i {
                    g_lower[tri_index(i, j)] = c[i] * x_prev[j];
                }
            }
            packed.clear();
            self.pack_layer_into(&g_raw, &g_lower, &c, &g_logits, &mut packed);
            params[k * per..(k + 1) * per].copy_from_slice(&packed);
            // a ← Lᵀ c
            for j in 0..d {
                let mut acc = layer.diag[j] * c[j];
                for i in j + 1..d {
                    acc += layer.lower[tri_index(i, j)] * c[i];
                }
                a[j] = acc;
            }
        }
        let input = rec.xs[0]
            .iter()
            .zip(&a)
            .map(|(&x0, &aj)| (aj - c0 * self.base.dlog_pdf(x0)) * (-self.base.log_pdf(x0)).exp())
            .collect();
        Ok(MapGradient { params, input })
    }

    /// Forward pass followed by the reverse sweep with `v = v_of(τ(u))`.
    pub fn forward_grad<F>(&self, u: &[f64], logdet_coef: f64, v_of: F) -> Result<(ForwardRecord, MapGradient)>
    where
        F: FnOnce(&[f64]) -> Result<Vec<f64>>,
    {
        let rec = self.forward(u)?;
        let v = v_of(&rec.output)?;
        let g = self.backward(&rec, &v, logdet_coef)?;
        Ok((rec, g))
    }

    /// `τ⁻¹(x)`.
    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.d {
            return Err(Error::dim(self.d, x.len()));
        }
        let mut cur = match &self.rotation {
            Some(v) => v.tr_matvec(x)?,
            None => x.to_vec(),
        };
        for layer in self.layers.iter().rev() {
            let mut y = vec![0.0; self.d];
            for j in 0..self.d {
                y[j] = elementwise::invert(self.kernel(layer, j), cur[j])?;
            }
            cur = layer.affine_solve(&y);
        }
        Ok(cur.iter().map(|&z| self.base.cdf(z)).collect())
    }

    /// Log density of the pushforward `τ#U` at `x`, i.e. `-logdet(τ⁻¹(x))`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let u = self.inverse(x)?;
        Ok(-self.transform(&u)?.1)
    }
}
