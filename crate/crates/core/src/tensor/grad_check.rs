use super::{no_grad, BoundParams, ParamStore, Result, Tensor, TensorError};

/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval_scalar(y: &Tensor) -> Result<f64> {
    if y.numel() != 1 {
        return Err(TensorError::NonScalarLoss(y.shape().to_vec()));
    }
    let v = y.item();
    if !v.is_finite() {
        return Err(TensorError::NonFinite);
    }
    Ok(v)
}

/// Compares reverse-mode gradients of a scalar function with central differences.
///
/// Returns the maximum relative error over all coordinates of `point`.
pub fn grad_check<F>(f: &F, point: &[f64], shape: &[usize], step: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let x = Tensor::param(point.to_vec(), shape)?;
    let y = f(&x)?;
    eval_scalar(&y)?;
    let grads = y.backward()?;
    let analytic = grads.get_or_zeros(&x);
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = no_grad(|| f(&Tensor::new(probe.clone(), shape)?).and_then(|t| eval_scalar(&t)))?;
        probe[i] = orig - step;
        let down = no_grad(|| f(&Tensor::new(probe.clone(), shape)?).and_then(|t| eval_scalar(&t)))?;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Gradient check over the parameters of a store.
///
/// `coords_per_param` bounds how many coordinates of each tensor are probed
/// (evenly strided, always including the first and last); `None` probes all.
/// Returns the worst relative error and the name of the tensor where it occurred.
pub fn grad_check_params<F>(
    f: &F,
    store: &ParamStore,
    step: f64,
    coords_per_param: Option<usize>,
) -> Result<(f64, String)>
where
    F: Fn(&BoundParams) -> Result<Tensor>,
{
    let bound = store.bind(true)?;
    let y = f(&bound)?;
    eval_scalar(&y)?;
    let grads = bound.gradients(&y.backward()?);
    let mut worst = (0.0f64, String::new());
    for (name, param) in store.iter() {
        let n = param.data.len();
        let picks: Vec<usize> = match coords_per_param {
            Some(c) if c < n && c >= 2 => {
                let mut v: Vec<usize> = (0..c).map(|i| i * (n - 1) / (c - 1)).collect();
                v.dedup();
                v
            }
            Some(1) if n > 1 => vec![0],
            _ => (0..n).collect(),
        };
        let analytic = &grads[name];
        for i in picks {
            let mut probe = store.clone();
            let orig = param.data[i];
            probe.get_mut(name)?.data[i] = orig + step;
            let up = no_grad(|| f(&probe.bind(false)?).and_then(|t| eval_scalar(&t)))?;
            probe.get_mut(name)?.data[i] = orig - step;
            let down = no_grad(|| f(&probe.bind(false)?).and_then(|t| eval_scalar(&t)))?;
            let err = relative_error(analytic[i], (up - down) / (2.0 * step));
            if err > worst.0 {
                worst = (err, name.clone());
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i * 37 % 17) as f64 / 17.0 - 0.5) * 4.0).collect()
    }

    #[test]
    fn sum_of_sigmoid() {
        let err = grad_check(&|x: &Tensor| Ok(x.sigmoid().sum()), &point(9), &[9], 1e-6).unwrap();
        assert!(err < 1e-7, "{err}");
    }

    #[test]
    fn softmax_cross_entropy() {
        let f = |x: &Tensor| x.reshape(&[3, 4])?.softmax(1)?.log().cross_entropy(&[2, 0, 3], None);
        let err = grad_check(&f, &point(12), &[12], 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn linear_function_is_exact() {
        let err = grad_check(&|x: &Tensor| Ok(x.sum()), &point(5), &[5], 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn nan_forward_is_an_error() {
        let f = |x: &Tensor| Ok(x.log().sum());
        let res = grad_check(&f, &[-1.0, 2.0], &[2], 1e-6);
        assert_eq!(res, Err(TensorError::NonFinite));
    }
}
