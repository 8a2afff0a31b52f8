//! Central finite differences, used to certify analytic gradients.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Anything that exposes an ordered list of tensors to perturb.
pub trait ParamSet {
    fn tensor_count(&self) -> usize;
    fn tensor(&self, i: usize) -> &Tensor;
    fn tensor_mut(&mut self, i: usize) -> &mut Tensor;
}

impl ParamSet for Vec<Tensor> {
    fn tensor_count(&self) -> usize {
        self.len()
    }
    fn tensor(&self, i: usize) -> &Tensor {
        &self[i]
    }
    fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self[i]
    }
}

pub const DEFAULT_STEP: f64 = 1e-4;

/// `(f(x+h) − f(x−h)) / 2h` for every coordinate of every tensor in `params`.
///
/// Coordinates are restored bit-exactly after probing.
pub fn finite_diff_grad<P, F>(params: &mut P, mut f: F, h: f64) -> Result<Vec<Tensor>>
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    let mut out = Vec::with_capacity(params.tensor_count());
    for t in 0..params.tensor_count() {
        let n = params.tensor(t).len();
        let mut grad = vec![0.0; n];
        for c in 0..n {
            let orig = params.tensor(t).data()[c];
            params.tensor_mut(t).data_mut()[c] = orig + h;
            let plus = f(params);
            params.tensor_mut(t).data_mut()[c] = orig - h;
            let minus = f(params);
            params.tensor_mut(t).data_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Oracle { tensor: t, coord: c });
            }
            grad[c] = (plus - minus) / (2.0 * h);
        }
        out.push(Tensor::from_parts(params.tensor(t).shape().to_vec(), grad));
    }
    Ok(out)
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest coordinate-wise relative error between two gradient lists.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.data().iter().zip(n.data()))
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut p = vec![Tensor::vector(vec![3.0])];
        let g = finite_diff_grad(&mut p, |p| p[0].data()[0].powi(2), DEFAULT_STEP).unwrap();
        assert!((g[0].data()[0] - 6.0).abs() < 1e-6);
        assert_eq!(p[0].data()[0], 3.0);
    }

    #[test]
    fn constant_function() {
        let mut p = vec![Tensor::vector(vec![1.0, -4.0]), Tensor::zeros(&[2, 2])];
        let g = finite_diff_grad(&mut p, |_| 42.0, DEFAULT_STEP).unwrap();
        assert!(g.iter().all(|t| t.data().iter().all(|v| v.abs() < 1e-8)));
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        let mut p = vec![Tensor::vector(vec![1.0, 0.0])];
        let err = finite_diff_grad(&mut p, |p| p[0].data()[1].sqrt(), DEFAULT_STEP).unwrap_err();
        assert!(matches!(err, Error::Oracle { tensor: 0, coord: 1 }));
    }
}
