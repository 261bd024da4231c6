use ndarray::{s, Axis};

use super::{Grads, Init, Matrix, ParamId, ParamStore};

const LN_EPS: f64 = 1e-5;

/// Exact Gaussian-error linear unit, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Derivative of [`gelu`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Affine map `y = x W + b` with `W: in x out` and `b: 1 x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.normal(in_dim, out_dim, std));
        let bias = store.add(format!("{name}.bias"), init.zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        let mut y = x.dot(p.get(self.weight));
        y += &p.get(self.bias).row(0);
        y
    }

    /// `x` is the input that produced the output being differentiated.
    pub fn backward(&self, p: &ParamStore, x: &Matrix, dy: &Matrix, g: &mut Grads) -> Matrix {
        *g.get_mut(self.weight) += &x.t().dot(dy);
        let mut db = g.get_mut(self.bias).row_mut(0);
        db += &dy.sum_axis(Axis(0));
        dy.dot(&p.get(self.weight).t())
    }
}

/// Per-row layer normalisation with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), init.ones(1, dim));
        let shift = store.add(format!("{name}.shift"), init.zeros(1, dim));
        Self { gain, shift, dim }
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> (Matrix, LayerNormCache) {
        let d = x.ncols() as f64;
        let mut normalized = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in normalized.rows_mut() {
            let mean = row.sum() / d;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / d;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row *= is;
            inv_std.push(is);
        }
        let mut y = &normalized * &p.get(self.gain).row(0);
        y += &p.get(self.shift).row(0);
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn forward(&self, p: &ParamStore, x: &Matrix) -> Matrix {
        self.forward_train(p, x).0
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &LayerNormCache,
        dy: &Matrix,
        g: &mut Grads,
    ) -> Matrix {
        let gain = p.get(self.gain).row(0).to_owned();
        {
            let mut dg = g.get_mut(self.gain).row_mut(0);
            dg += &(dy * &cache.normalized).sum_axis(Axis(0));
        }
        {
            let mut ds = g.get_mut(self.shift).row_mut(0);
            ds += &dy.sum_axis(Axis(0));
        }
        let d = dy.ncols() as f64;
        let mut dx = dy * &gain;
        for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
            let xhat = cache.normalized.row(i);
            let mean_d = row.sum() / d;
            let mean_dx = row.iter().zip(xhat.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
            let is = cache.inv_std[i];
            for (v, xh) in row.iter_mut().zip(xhat.iter()) {
                *v = is * (*v - mean_d - xh * mean_dx);
            }
        }
        dx
    }
}

/// One-dimensional convolution over the sequence axis, stride 1, "same"
/// zero padding. The kernel is stored unrolled as `(kernel * in) x out`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache {
    columns: Matrix,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        kernel: usize,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "same padding needs an odd kernel");
        let std = 1.0 / ((kernel * in_dim) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            init.normal(kernel * in_dim, out_dim, std),
        );
        let bias = store.add(format!("{name}.bias"), init.zeros(1, out_dim));
        Self {
            weight,
            bias,
            kernel,
            in_dim,
            out_dim,
        }
    }

    fn im2col(&self, x: &Matrix) -> Matrix {
        let t = x.nrows() as isize;
        let half = (self.kernel / 2) as isize;
        let mut cols = Matrix::zeros((x.nrows(), self.kernel * self.in_dim));
        for row in 0..t {
            for k in 0..self.kernel as isize {
                let src = row + k - half;
                if src >= 0 && src < t {
                    let start = k as usize * self.in_dim;
                    cols.slice_mut(s![row as usize, start..start + self.in_dim])
                        .assign(&x.row(src as usize));
                }
            }
        }
        cols
    }

    pub fn forward_train(&self, p: &ParamStore, x: &Matrix) -> (Matrix, Conv1dCache) {
        let columns = self.im2col(x);
        let mut y = columns.dot(p.get(self.weight));
        y += &p.get(self.bias).row(0);
        (y, Conv1dCache { columns })
    }

    pub fn backward(
        &self,
        p: &ParamStore,
        cache: &Conv1dCache,
        dy: &Matrix,
        g: &mut Grads,
    ) -> Matrix {
        *g.get_mut(self.weight) += &cache.columns.t().dot(dy);
        {
            let mut db = g.get_mut(self.bias).row_mut(0);
            db += &dy.sum_axis(Axis(0));
        }
        let dcols = dy.dot(&p.get(self.weight).t());
        let t = dy.nrows() as isize;
        let half = (self.kernel / 2) as isize;
        let mut dx = Matrix::zeros((dy.nrows(), self.in_dim));
        for row in 0..t {
            for k in 0..self.kernel as isize {
                let src = row + k - half;
                if src >= 0 && src < t {
                    let start = k as usize * self.in_dim;
                    let mut target = dx.row_mut(src as usize);
                    target += &dcols.slice(s![row as usize, start..start + self.in_dim]);
                }
            }
        }
        dx
    }
}
