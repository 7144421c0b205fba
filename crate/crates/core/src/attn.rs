//! Self-attention over the feature-token sequence. The softmax form is kept
//! as an exactness oracle; the production path is linear attention through
//! the positive feature map elu(x)+1, which costs O(L·d²) instead of O(L²·d).

use crate::num::{matmul, matmul_backward, NumError, Tensor};

/// Feature map φ(x) = elu(x) + 1 with α = 1. Strictly positive for all
/// finite x, which keeps every attention denominator positive.
pub fn elu1(x: f64) -> f64 {
    if x > 0.0 {
        x + 1.0
    } else {
        x.exp()
    }
}

/// Derivative of [`elu1`].
pub fn elu1_prime(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Intermediates of the linear-attention forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct LinearAttnCache {
    /// φ(Q), L×m
    pub p: Tensor,
    /// φ(K), L×m
    pub g: Tensor,
    /// Σ_j φ(K_j)·V_jᵀ, m×mv
    pub s: Tensor,
    /// Σ_j φ(K_j), length m
    pub z: Vec<f64>,
    /// φ(Q_i)ᵀz per token, length L
    pub denom: Vec<f64>,
    /// V′, L×mv
    pub out: Tensor,
}

/// Linear attention on already-projected Q, K, V:
/// V′_i = Sᵀφ(Q_i) / (φ(Q_i)ᵀz) with S and z accumulated once.
pub fn linear_attention_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> LinearAttnCache {
    let (l, m) = (q.shape[0], q.shape[1]);
    let mv = v.shape[1];
    debug_assert_eq!(k.shape, vec![l, m]);
    debug_assert_eq!(v.shape[0], l);

    let p = Tensor::from_vec(&[l, m], q.data.iter().map(|&x| elu1(x)).collect());
    let g = Tensor::from_vec(&[l, m], k.data.iter().map(|&x| elu1(x)).collect());

    let mut s = Tensor::zeros(&[m, mv]);
    let mut z = vec![0.0; m];
    for j in 0..l {
        let grow = g.row(j);
        let vrow = v.row(j);
        for (a, &ga) in grow.iter().enumerate() {
            z[a] += ga;
            let srow = s.row_mut(a);
            for (sv, &vv) in srow.iter_mut().zip(vrow.iter()) {
                *sv += ga * vv;
            }
        }
    }

    let mut out = Tensor::zeros(&[l, mv]);
    let mut denom = vec![0.0; l];
    for i in 0..l {
        let prow = p.row(i);
        let d: f64 = prow.iter().zip(z.iter()).map(|(a, b)| a * b).sum();
        denom[i] = d;
        let orow = out.row_mut(i);
        for (a, &pa) in prow.iter().enumerate() {
            let srow = s.row(a);
            for (ov, &sv) in orow.iter_mut().zip(srow.iter()) {
                *ov += pa * sv;
            }
        }
        for ov in orow.iter_mut() {
            *ov /= d;
        }
    }
    out.assert_finite("linear attention output");
    LinearAttnCache { p, g, s, z, denom, out }
}

/// Accumulate dQ, dK, dV for [`linear_attention_qkv`].
pub fn linear_attention_qkv_backward(
    cache: &LinearAttnCache,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    d_out: &Tensor,
    dq: &mut Tensor,
    dk: &mut Tensor,
    dv: &mut Tensor,
) {
    let (l, m) = (q.shape[0], q.shape[1]);
    let mv = v.shape[1];

    let mut ds = Tensor::zeros(&[m, mv]);
    let mut dz = vec![0.0; m];
    for i in 0..l {
        let prow = cache.p.row(i);
        let orow = cache.out.row(i);
        let drow = d_out.row(i);
        let d = cache.denom[i];
        // dV'_i·V'_i term shared by the dz and dP pieces
        let dot: f64 = drow.iter().zip(orow.iter()).map(|(a, b)| a * b).sum();
        let qrow = q.row(i);
        let dqrow = dq.row_mut(i);
        for a in 0..m {
            let srow = cache.s.row(a);
            let s_dot: f64 = srow.iter().zip(drow.iter()).map(|(x, y)| x * y).sum();
            let dp = s_dot / d - dot * cache.z[a] / d;
            dqrow[a] += dp * elu1_prime(qrow[a]);
            dz[a] -= dot * prow[a] / d;
            let dsrow = ds.row_mut(a);
            for (o, &dvv) in dsrow.iter_mut().zip(drow.iter()) {
                *o += prow[a] * dvv / d;
            }
        }
    }
    for j in 0..l {
        let grow = cache.g.row(j);
        let vrow = v.row(j);
        let krow = k.row(j);
        let dkrow = dk.row_mut(j);
        let dvrow = dv.row_mut(j);
        for a in 0..m {
            let dsrow = ds.row(a);
            // dG_j,a = (dS·V_j)_a + dz_a
            let mut acc = dz[a];
            for (dsv, &vv) in dsrow.iter().zip(vrow.iter()) {
                acc += dsv * vv;
            }
            dkrow[a] += acc * elu1_prime(krow[a]);
            // dV_j += dSᵀ·G_j
            for (o, &dsv) in dvrow.iter_mut().zip(dsrow.iter()) {
                *o += grow[a] * dsv;
            }
        }
    }
}

/// Linear attention over X with projections Wq, Wk, Wv.
pub fn linear_attention(
    x: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
) -> Result<Tensor, NumError> {
    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    Ok(linear_attention_qkv(&q, &k, &v).out)
}

/// Accumulate gradients of [`linear_attention`] w.r.t. X and the projections.
pub fn linear_attention_backward(
    x: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
    d_out: &Tensor,
    dx: &mut Tensor,
    dwq: &mut Tensor,
    dwk: &mut Tensor,
    dwv: &mut Tensor,
) -> Result<(), NumError> {
    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    let cache = linear_attention_qkv(&q, &k, &v);
    let mut dq = Tensor::zeros(&q.shape);
    let mut dk = Tensor::zeros(&k.shape);
    let mut dv = Tensor::zeros(&v.shape);
    linear_attention_qkv_backward(&cache, &q, &k, &v, d_out, &mut dq, &mut dk, &mut dv);
    matmul_backward(x, wq, &dq, dx, dwq);
    matmul_backward(x, wk, &dk, dx, dwk);
    matmul_backward(x, wv, &dv, dx, dwv);
    Ok(())
}

/// Softmax attention A·V with A = softmax(QKᵀ/√m) row-wise. Exactness
/// oracle only; not on the production path.
pub fn softmax_attention(
    x: &Tensor,
    wq: &Tensor,
    wk: &Tensor,
    wv: &Tensor,
) -> Result<Tensor, NumError> {
    let q = matmul(x, wq)?;
    let k = matmul(x, wk)?;
    let v = matmul(x, wv)?;
    let a = softmax_attention_weights(&q, &k);
    matmul(&a, &v)
}

/// The L×L attention matrix of [`softmax_attention`], row-max stabilized.
pub fn softmax_attention_weights(q: &Tensor, k: &Tensor) -> Tensor {
    let l = q.shape[0];
    let m = q.shape[1];
    let scale = 1.0 / (m as f64).sqrt();
    let mut a = Tensor::zeros(&[l, l]);
    for i in 0..l {
        let qrow = q.row(i);
        let arow = a.row_mut(i);
        for (j, av) in arow.iter_mut().enumerate() {
            let krow = k.row(j);
            let dot: f64 = qrow.iter().zip(krow.iter()).map(|(x, y)| x * y).sum();
            *av = dot * scale;
        }
        let max = arow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for av in arow.iter_mut() {
            *av = (*av - max).exp();
            sum += *av;
        }
        for av in arow.iter_mut() {
            *av /= sum;
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::finite_difference_check;
    use crate::rng::SplitMix64;

    fn rand_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.uniform(-1.5, 1.5)).collect())
    }

    /// Literal per-token double loop of the V′ formula.
    fn naive_linear_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (l, m) = (q.shape[0], q.shape[1]);
        let mv = v.shape[1];
        let mut out = Tensor::zeros(&[l, mv]);
        for i in 0..l {
            let pi: Vec<f64> = q.row(i).iter().map(|&x| elu1(x)).collect();
            let mut num = vec![0.0; mv];
            let mut den = 0.0;
            for j in 0..l {
                let gj: Vec<f64> = k.row(j).iter().map(|&x| elu1(x)).collect();
                let wij: f64 = (0..m).map(|a| pi[a] * gj[a]).sum();
                den += wij;
                for (n, &vv) in num.iter_mut().zip(v.row(j).iter()) {
                    *n += wij * vv;
                }
            }
            for (o, n) in out.row_mut(i).iter_mut().zip(num.iter()) {
                *o = n / den;
            }
        }
        out
    }

    fn naive_softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (l, m) = (q.shape[0], q.shape[1]);
        let mv = v.shape[1];
        let scale = 1.0 / (m as f64).sqrt();
        let mut out = Tensor::zeros(&[l, mv]);
        for i in 0..l {
            let mut weights = vec![0.0; l];
            for (j, w) in weights.iter_mut().enumerate() {
                let dot: f64 = q.row(i).iter().zip(k.row(j).iter()).map(|(a, b)| a * b).sum();
                *w = (dot * scale).exp();
            }
            let sum: f64 = weights.iter().sum();
            for j in 0..l {
                for (o, &vv) in out.row_mut(i).iter_mut().zip(v.row(j).iter()) {
                    *o += weights[j] / sum * vv;
                }
            }
        }
        out
    }

    #[test]
    fn phi_strictly_positive() {
        for x in [-700.0, -30.0, -1.0, 0.0, 1e-12, 5.0, 700.0] {
            assert!(elu1(x) > 0.0, "phi({x}) = {}", elu1(x));
        }
    }

    #[test]
    fn single_token_passes_value_through() {
        let mut rng = SplitMix64::new(21);
        let q = rand_tensor(&[1, 4], &mut rng);
        let k = rand_tensor(&[1, 4], &mut rng);
        let v = rand_tensor(&[1, 4], &mut rng);
        let cache = linear_attention_qkv(&q, &k, &v);
        for (a, b) in cache.out.data.iter().zip(v.data.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_naive_double_loop() {
        let mut rng = SplitMix64::new(22);
        for _ in 0..10 {
            let q = rand_tensor(&[7, 4], &mut rng);
            let k = rand_tensor(&[7, 4], &mut rng);
            let v = rand_tensor(&[7, 4], &mut rng);
            let fast = linear_attention_qkv(&q, &k, &v).out;
            let naive = naive_linear_attention(&q, &k, &v);
            for (a, b) in fast.data.iter().zip(naive.data.iter()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn token_weights_normalized_and_nonnegative() {
        let mut rng = SplitMix64::new(23);
        let q = rand_tensor(&[6, 4], &mut rng);
        let k = rand_tensor(&[6, 4], &mut rng);
        let cache = linear_attention_qkv(&q, &k, &rand_tensor(&[6, 4], &mut rng));
        for i in 0..6 {
            let pi = cache.p.row(i);
            let mut sum = 0.0;
            for j in 0..6 {
                let gj = cache.g.row(j);
                let w: f64 = pi.iter().zip(gj.iter()).map(|(a, b)| a * b).sum::<f64>()
                    / cache.denom[i];
                assert!(w >= 0.0);
                sum += w;
            }
            assert!((sum - 1.0).abs() < 1e-12, "row {i} sums to {sum}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(24);
        let x = rand_tensor(&[5, 6], &mut rng);
        let wq = rand_tensor(&[6, 3], &mut rng);
        let wk = rand_tensor(&[6, 3], &mut rng);
        let wv = rand_tensor(&[6, 3], &mut rng);
        let w: Vec<f64> = (0..15).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let d_out = Tensor::from_vec(&[5, 3], w.clone());

        let mut dx = Tensor::zeros(&[5, 6]);
        let mut dwq = Tensor::zeros(&[6, 3]);
        let mut dwk = Tensor::zeros(&[6, 3]);
        let mut dwv = Tensor::zeros(&[6, 3]);
        linear_attention_backward(&x, &wq, &wk, &wv, &d_out, &mut dx, &mut dwq, &mut dwk, &mut dwv)
            .unwrap();

        let score = |xt: &Tensor, qt: &Tensor, kt: &Tensor, vt: &Tensor| -> f64 {
            linear_attention(xt, qt, kt, vt)
                .unwrap()
                .data
                .iter()
                .zip(w.iter())
                .map(|(a, b)| a * b)
                .sum()
        };

        let cases: Vec<(Tensor, Tensor, &str)> = vec![
            (x.clone(), dx, "x"),
            (wq.clone(), dwq, "wq"),
            (wk.clone(), dwk, "wk"),
            (wv.clone(), dwv, "wv"),
        ];
        for (value, grad, name) in cases {
            let dev = finite_difference_check(
                |vals| {
                    let t = Tensor::from_vec(&value.shape, vals.to_vec());
                    match name {
                        "x" => score(&t, &wq, &wk, &wv),
                        "wq" => score(&x, &t, &wk, &wv),
                        "wk" => score(&x, &wq, &t, &wv),
                        _ => score(&x, &wq, &wk, &t),
                    }
                },
                &mut value.data.clone(),
                &grad.data,
                1e-5,
                64,
                &mut rng,
            );
            assert!(dev < 1e-5, "{name}: dev={dev}");
        }
    }

    #[test]
    fn softmax_single_row_is_identity() {
        let mut rng = SplitMix64::new(25);
        let q = rand_tensor(&[1, 4], &mut rng);
        let k = rand_tensor(&[1, 4], &mut rng);
        let a = softmax_attention_weights(&q, &k);
        assert_eq!(a.shape, vec![1, 1]);
        assert!((a.data[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SplitMix64::new(26);
        let q = rand_tensor(&[9, 4], &mut rng);
        let k = rand_tensor(&[9, 4], &mut rng);
        let a = softmax_attention_weights(&q, &k);
        for i in 0..9 {
            let sum: f64 = a.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_matches_naive_loop() {
        let mut rng = SplitMix64::new(27);
        let x = rand_tensor(&[8, 5], &mut rng);
        let wq = rand_tensor(&[5, 4], &mut rng);
        let wk = rand_tensor(&[5, 4], &mut rng);
        let wv = rand_tensor(&[5, 4], &mut rng);
        let fast = softmax_attention(&x, &wq, &wk, &wv).unwrap();
        let q = matmul(&x, &wq).unwrap();
        let k = matmul(&x, &wk).unwrap();
        let v = matmul(&x, &wv).unwrap();
        let naive = naive_softmax_attention(&q, &k, &v);
        for (a, b) in fast.data.iter().zip(naive.data.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
