//! Forward evaluation of the differentiable primitives.
//!
//! These functions are shared by the tape (which records them) and the
//! inference path (which calls them directly), so both produce bit-identical
//! values. Every reduction accumulates sequentially from the first element.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return shape_err(format!("{what}: expected rank {rank}, got shape {:?}", t.shape()));
    }
    Ok(())
}

/// Row lookup into an embedding-style table. Output is `ids.len() × cols`.
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    expect_rank(table, 2, "gather_rows table")?;
    let (rows, cols) = (table.rows(), table.cols());
    let mut out = Vec::with_capacity(ids.len() * cols);
    for &id in ids {
        if id >= rows {
            return Err(Error::Index { id, rows });
        }
        out.extend_from_slice(table.row(id));
    }
    Ok(Tensor::from_parts(vec![ids.len(), cols], out))
}

/// Width-`width` one-dimensional convolution over an `l × d` sequence with
/// `(width-1)/2` zero rows of padding on each side, returning the `l × n_f`
/// pre-activation. `kernel` is `n_f × (width·d)`, laid out window position
/// major: column `t·d + k` multiplies channel `k` of the word at offset
/// `t - (width-1)/2`.
///
/// Rows flagged in `skip` (windows made only of padding) are left at zero
/// and receive no bias.
pub fn conv1d(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    width: usize,
    skip: Option<&[bool]>,
) -> Result<Tensor> {
    expect_rank(x, 2, "conv1d input")?;
    expect_rank(kernel, 2, "conv1d kernel")?;
    if width % 2 == 0 {
        return shape_err(format!("conv width {width} must be odd"));
    }
    let (len, d) = (x.rows(), x.cols());
    let n_f = kernel.rows();
    if kernel.cols() != width * d {
        return shape_err(format!(
            "conv kernel has {} columns, expected width {width} × d {d}",
            kernel.cols()
        ));
    }
    if bias.len() != n_f {
        return shape_err(format!("conv bias length {} != filters {n_f}", bias.len()));
    }
    let half = (width - 1) / 2;
    let xs = x.data();
    let ks = kernel.data();
    let mut out = vec![0.0; len * n_f];
    for j in 0..len {
        if skip.is_some_and(|s| s[j]) {
            continue;
        }
        let row = &mut out[j * n_f..(j + 1) * n_f];
        for (f, o) in row.iter_mut().enumerate() {
            let krow = &ks[f * width * d..(f + 1) * width * d];
            let mut acc = bias.data()[f];
            for t in 0..width {
                let pos = j + t;
                if pos < half || pos - half >= len {
                    continue;
                }
                let xrow = &xs[(pos - half) * d..(pos - half + 1) * d];
                let kseg = &krow[t * d..(t + 1) * d];
                for k in 0..d {
                    acc += kseg[k] * xrow[k];
                }
            }
            *o = acc;
        }
    }
    Ok(Tensor::from_parts(vec![len, n_f], out))
}

/// Convolution followed by the rectifier: the contextual feature of every
/// word position.
pub fn conv_context(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    width: usize,
    skip: Option<&[bool]>,
) -> Result<Tensor> {
    Ok(relu(&conv1d(x, kernel, bias, width, skip)?))
}

/// Affine map `x Wᵀ + b` applied to each row of `x` (or to `x` itself when it
/// is a vector).
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    expect_rank(w, 2, "linear weight")?;
    let (out_dim, in_dim) = (w.rows(), w.cols());
    if x.rank() == 0 || x.rank() > 2 || x.cols() != in_dim {
        return shape_err(format!(
            "linear: input shape {:?} incompatible with weight {:?}",
            x.shape(),
            w.shape()
        ));
    }
    if let Some(b) = b {
        if b.len() != out_dim {
            return shape_err(format!("linear bias length {} != {out_dim}", b.len()));
        }
    }
    let n = x.rows();
    let mut out = vec![0.0; n * out_dim];
    for r in 0..n {
        let xrow = x.row(r);
        for o in 0..out_dim {
            let wrow = w.row(o);
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for k in 0..in_dim {
                acc += wrow[k] * xrow[k];
            }
            out[r * out_dim + o] = acc;
        }
    }
    let shape = if x.rank() == 1 { vec![out_dim] } else { vec![n, out_dim] };
    Ok(Tensor::from_parts(shape, out))
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_parts(
        x.shape().to_vec(),
        x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    )
}

/// `ReLU(x Wᵀ + b)`.
pub fn linear_relu(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(relu(&linear(x, w, Some(b))?))
}

fn softmax_slice(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Max-shifted softmax of a non-empty vector.
pub fn softmax(v: &Tensor) -> Result<Tensor> {
    if v.rank() != 1 || v.is_empty() {
        return shape_err(format!("softmax expects a non-empty vector, got {:?}", v.shape()));
    }
    let mut out = vec![0.0; v.len()];
    softmax_slice(v.data(), &mut out);
    Ok(Tensor::from_parts(v.shape().to_vec(), out))
}

/// Softmax within each row of a matrix.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    expect_rank(m, 2, "softmax_rows")?;
    let c = m.cols();
    let mut out = vec![0.0; m.len()];
    for r in 0..m.rows() {
        softmax_slice(m.row(r), &mut out[r * c..(r + 1) * c]);
    }
    Ok(Tensor::from_parts(m.shape().to_vec(), out))
}

/// Softmax within each column of a matrix.
pub fn softmax_cols(m: &Tensor) -> Result<Tensor> {
    expect_rank(m, 2, "softmax_cols")?;
    Ok(softmax_rows(&m.transpose())?.transpose())
}

pub fn elementwise_product(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "elementwise_product: {:?} vs {:?}",
            a.shape(),
            b.shape()
        ));
    }
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    ))
}

/// Column sums of an `n × k` matrix; zero rows give the zero vector.
pub fn sum_rows(x: &Tensor) -> Result<Tensor> {
    expect_rank(x, 2, "sum_rows")?;
    let k = x.cols();
    let mut out = vec![0.0; k];
    for r in 0..x.rows() {
        for (o, v) in out.iter_mut().zip(x.row(r)) {
            *o += v;
        }
    }
    Ok(Tensor::from_parts(vec![k], out))
}

/// Column maxima with the winning row per column (first row on ties).
/// Zero rows give the zero vector and an empty argmax.
pub fn max_rows(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    expect_rank(x, 2, "max_rows")?;
    let k = x.cols();
    if x.rows() == 0 {
        return Ok((Tensor::zeros(&[k]), Vec::new()));
    }
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; k];
    for r in 1..x.rows() {
        for (c, v) in x.row(r).iter().enumerate() {
            if *v > best[c] {
                best[c] = *v;
                arg[c] = r;
            }
        }
    }
    Ok((Tensor::from_parts(vec![k], best), arg))
}

/// `m v` for an `r × c` matrix and length-`c` vector.
pub fn matvec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    expect_rank(m, 2, "matvec matrix")?;
    if v.rank() != 1 || v.len() != m.cols() {
        return shape_err(format!("matvec: {:?} · {:?}", m.shape(), v.shape()));
    }
    let out = (0..m.rows())
        .map(|r| m.row(r).iter().zip(v.data()).fold(0.0, |acc, (a, b)| acc + a * b))
        .collect();
    Ok(Tensor::from_parts(vec![m.rows()], out))
}

/// `mᵀ v` for an `r × c` matrix and length-`r` vector.
pub fn mat_t_vec(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    expect_rank(m, 2, "mat_t_vec matrix")?;
    if v.rank() != 1 || v.len() != m.rows() {
        return shape_err(format!("mat_t_vec: {:?}ᵀ · {:?}", m.shape(), v.shape()));
    }
    let c = m.cols();
    let mut out = vec![0.0; c];
    for r in 0..m.rows() {
        let s = v.data()[r];
        for (o, a) in out.iter_mut().zip(m.row(r)) {
            *o += a * s;
        }
    }
    Ok(Tensor::from_parts(vec![c], out))
}

pub fn dot(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.len() != b.len() {
        return shape_err(format!("dot: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(Tensor::scalar(
        a.data().iter().zip(b.data()).fold(0.0, |acc, (x, y)| acc + x * y),
    ))
}

/// Pairwise column products of `m` (`f × p`) and `v` (`f × r`): row
/// `x·r + y` holds `m[:, x] ⊙ v[:, y]`.
pub fn pair_products(m: &Tensor, v: &Tensor) -> Result<Tensor> {
    expect_rank(m, 2, "pair_products m")?;
    expect_rank(v, 2, "pair_products v")?;
    if m.rows() != v.rows() {
        return shape_err(format!("pair_products: {:?} vs {:?}", m.shape(), v.shape()));
    }
    let (f, p, r) = (m.rows(), m.cols(), v.cols());
    let mut out = vec![0.0; p * r * f];
    for x in 0..p {
        for y in 0..r {
            let row = &mut out[(x * r + y) * f..(x * r + y + 1) * f];
            for (k, o) in row.iter_mut().enumerate() {
                *o = m.get2(k, x) * v.get2(k, y);
            }
        }
    }
    Ok(Tensor::from_parts(vec![p * r, f], out))
}
