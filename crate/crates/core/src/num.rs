//! Minimal dense-tensor math with hand-derived reverse-mode gradients for
//! exactly the operations the model needs, plus a finite-difference
//! verification harness. Training runs in 64-bit; the serving path keeps its
//! own 32-bit forward copy.

use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error, PartialEq)]
pub enum NumError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("embedding index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
}

/// Row-major dense tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn assert_finite(&self, what: &str) {
        debug_assert!(
            self.data.iter().all(|v| v.is_finite()),
            "non-finite value in {what}"
        );
    }
}

/// Learnable tensor with its gradient and Adam moment accumulators.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Parameter {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            value: Tensor::zeros(shape),
            grad: Tensor::zeros(shape),
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
        }
    }

    pub fn from_tensor(value: Tensor) -> Self {
        let shape = value.shape.clone();
        Self {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// C = A·B for 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(NumError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (l, &av) in arow.iter().enumerate().take(k) {
            let brow = b.row(l);
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    }
    out.assert_finite("matmul output");
    Ok(out)
}

/// Accumulate dA += dC·Bᵀ and dB += Aᵀ·dC.
pub fn matmul_backward(a: &Tensor, b: &Tensor, d_out: &Tensor, da: &mut Tensor, db: &mut Tensor) {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    debug_assert_eq!(d_out.shape, vec![m, n]);
    for i in 0..m {
        let drow = d_out.row(i);
        let darow = da.row_mut(i);
        for l in 0..k {
            let brow = b.row(l);
            let mut acc = 0.0;
            for (dv, bv) in drow.iter().zip(brow.iter()) {
                acc += dv * bv;
            }
            darow[l] += acc;
        }
    }
    for l in 0..k {
        let dbrow = db.row_mut(l);
        for i in 0..m {
            let av = a.row(i)[l];
            let drow = d_out.row(i);
            for (o, &dv) in dbrow.iter_mut().zip(drow.iter()) {
                *o += av * dv;
            }
        }
    }
}

/// Y = X·W + b broadcast over rows.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    if b.len() != w.shape[1] {
        return Err(NumError::ShapeMismatch {
            op: "affine",
            left: w.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = matmul(x, w)?;
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(b.data.iter()) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Accumulate gradients of [`affine`] into dx, dw, db.
pub fn affine_backward(
    x: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    dx: &mut Tensor,
    dw: &mut Tensor,
    db: &mut Tensor,
) {
    matmul_backward(x, w, d_out, dx, dw);
    for r in 0..d_out.rows() {
        for (o, &dv) in db.data.iter_mut().zip(d_out.row(r).iter()) {
            *o += dv;
        }
    }
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Pass upstream gradient where the input was strictly positive.
pub fn relu_backward(x: &Tensor, d_out: &Tensor, dx: &mut Tensor) {
    for ((o, &xv), &dv) in dx.data.iter_mut().zip(x.data.iter()).zip(d_out.data.iter()) {
        if xv > 0.0 {
            *o += dv;
        }
    }
}

/// Copy row `index` of the table.
pub fn embedding_gather(table: &Tensor, index: usize) -> Result<Vec<f64>, NumError> {
    if index >= table.rows() {
        return Err(NumError::IndexOutOfRange {
            index,
            rows: table.rows(),
        });
    }
    Ok(table.row(index).to_vec())
}

/// Scatter-add the upstream gradient into row `index`; duplicate indexes in
/// a batch accumulate.
pub fn embedding_scatter_add(d_table: &mut Tensor, index: usize, upstream: &[f64]) {
    for (o, &g) in d_table.row_mut(index).iter_mut().zip(upstream.iter()) {
        *o += g;
    }
}

/// Max relative deviation between an analytic gradient and central finite
/// differences of `f`, sampled over up to `max_coords` random coordinates.
/// Deviation per coordinate is |a - n| / max(1, |a|, |n|).
pub fn finite_difference_check<F>(
    mut f: F,
    x: &mut [f64],
    analytic: &[f64],
    eps: f64,
    max_coords: usize,
    rng: &mut SplitMix64,
) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut coords: Vec<usize> = (0..x.len()).collect();
    if coords.len() > max_coords {
        rng.shuffle(&mut coords);
        coords.truncate(max_coords);
    }
    let mut worst = 0.0f64;
    for &i in &coords {
        let orig = x[i];
        x[i] = orig + eps;
        let fp = f(x);
        x[i] = orig - eps;
        let fm = f(x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * eps);
        let a = analytic[i];
        let dev = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if dev > worst {
            worst = dev;
        }
    }
    worst
}
