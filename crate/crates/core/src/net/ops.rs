//! Dense kernels on row-major f64 buffers.

/// `x (rows × n_in) · w (n_in × n_out) + b`.
pub(super) fn linear(x: &[f64], rows: usize, w: &[f64], b: &[f64], n_in: usize, n_out: usize) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows * n_in);
    debug_assert_eq!(w.len(), n_in * n_out);
    let mut y = vec![0.0; rows * n_out];
    for (xr, yr) in x.chunks_exact(n_in).zip(y.chunks_exact_mut(n_out)) {
        yr.copy_from_slice(b);
        for (&xv, wr) in xr.iter().zip(w.chunks_exact(n_out)) {
            for (yv, &wv) in yr.iter_mut().zip(wr) {
                *yv += xv * wv;
            }
        }
    }
    y
}

/// Backward of [`linear`]: accumulates into `dw`, `db` and returns `dx`.
#[allow(clippy::too_many_arguments)]
pub(super) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    w: &[f64],
    n_in: usize,
    n_out: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    debug_assert_eq!(dy.len(), rows * n_out);
    let mut dx = vec![0.0; rows * n_in];
    for ((xr, dyr), dxr) in x
        .chunks_exact(n_in)
        .zip(dy.chunks_exact(n_out))
        .zip(dx.chunks_exact_mut(n_in))
    {
        for (dbv, &g) in db.iter_mut().zip(dyr) {
            *dbv += g;
        }
        for ((&xv, wr), (dwr, dxv)) in xr
            .iter()
            .zip(w.chunks_exact(n_out))
            .zip(dw.chunks_exact_mut(n_out).zip(dxr.iter_mut()))
        {
            let mut acc = 0.0;
            for ((&g, &wv), dwv) in dyr.iter().zip(wr).zip(dwr.iter_mut()) {
                *dwv += xv * g;
                acc += g * wv;
            }
            *dxv = acc;
        }
    }
    dx
}

/// Normalized values and inverse standard deviations kept for backward.
#[derive(Clone, Debug)]
pub(super) struct NormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

/// Per-row layer normalization with gain `g` and bias `b`.
pub(super) fn layer_norm(x: &[f64], d: usize, g: &[f64], b: &[f64], eps: f64) -> (Vec<f64>, NormCache) {
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for c in 0..d {
            let h = (xr[c] - mean) * is;
            xhat[r * d + c] = h;
            y[r * d + c] = g[c] * h + b[c];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Backward of [`layer_norm`]; accumulates `dg`, `db` and returns `dx`.
pub(super) fn layer_norm_backward(
    dy: &[f64],
    cache: &NormCache,
    d: usize,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let rows = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for c in 0..d {
            dg[c] += dyr[c] * xh[c];
            db[c] += dyr[c];
            dxhat[c] = dyr[c] * g[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        let is = cache.inv_std[r];
        for c in 0..d {
            dx[r * d + c] = is * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

/// Multi-head scaled dot-product self-attention over `t` positions.
/// Returns the concatenated head outputs and the attention matrices
/// (`heads × t × t`).
pub(super) fn attention(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, heads: usize) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut att = vec![0.0; heads * t * t];
    let mut out = vec![0.0; t * d];
    for h in 0..heads {
        let off = h * dh;
        let a_h = &mut att[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            let qi = &q[i * d + off..i * d + off + dh];
            let row = &mut a_h[i * t..(i + 1) * t];
            let mut max = f64::NEG_INFINITY;
            for (j, s) in row.iter_mut().enumerate() {
                let kj = &k[j * d + off..j * d + off + dh];
                let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                *s = dot * scale;
                max = max.max(*s);
            }
            let mut z = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                z += *s;
            }
            let inv = 1.0 / z;
            let oi = &mut out[i * d + off..i * d + off + dh];
            for (j, s) in row.iter_mut().enumerate() {
                *s *= inv;
                let vj = &v[j * d + off..j * d + off + dh];
                for (o, &vv) in oi.iter_mut().zip(vj) {
                    *o += *s * vv;
                }
            }
        }
    }
    (out, att)
}

/// Backward of [`attention`]: returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(super) fn attention_backward(
    d_out: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    att: &[f64],
    t: usize,
    d: usize,
    heads: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; t * d];
    let mut dk = vec![0.0; t * d];
    let mut dv = vec![0.0; t * d];
    let mut ds = vec![0.0; t];
    for h in 0..heads {
        let off = h * dh;
        let a_h = &att[h * t * t..(h + 1) * t * t];
        for i in 0..t {
            let doi = &d_out[i * d + off..i * d + off + dh];
            let row = &a_h[i * t..(i + 1) * t];
            // dA_ij = dO_i · V_j ; dV_j += A_ij dO_i
            let mut dot_sum = 0.0;
            for j in 0..t {
                let vj = &v[j * d + off..j * d + off + dh];
                let da: f64 = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                ds[j] = da;
                dot_sum += da * row[j];
                let dvj = &mut dv[j * d + off..j * d + off + dh];
                for (dvv, &g) in dvj.iter_mut().zip(doi) {
                    *dvv += row[j] * g;
                }
            }
            // softmax backward, then the scaled score product
            let qi = &q[i * d + off..i * d + off + dh];
            for j in 0..t {
                let s = row[j] * (ds[j] - dot_sum) * scale;
                if s == 0.0 {
                    continue;
                }
                let kj = &k[j * d + off..j * d + off + dh];
                for c in 0..dh {
                    dq[i * d + off + c] += s * kj[c];
                    dk[j * d + off + c] += s * qi[c];
                }
            }
        }
    }
    (dq, dk, dv)
}
