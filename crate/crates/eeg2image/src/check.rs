//! Central finite differences for gradient verification.
//!
//! This path never touches the reverse-mode machinery: it re-runs a
//! user-supplied forward closure at perturbed inputs, so it serves as an
//! independent oracle for the analytic gradients.

/// Central-difference gradient of `f` at `x` with step `h`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Largest relative error between an analytic and a numeric gradient,
/// `|a - n| / max(1, |a|, |n|)` elementwise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Finite-difference check over whole models: compares analytic parameter
/// gradients against central differences on a random sample of coordinates
/// per parameter tensor. The loss closure must rebuild the forward graph
/// from the live parameter tensors on every call. Returns the largest
/// relative error observed.
pub fn sampled_param_check(
    loss: &mut dyn FnMut() -> f64,
    params: &crate::nn::NamedParams,
    analytic: &[Vec<f64>],
    coords_per_tensor: usize,
    h: f64,
    seed: u64,
) -> f64 {
    assert_eq!(params.len(), analytic.len());
    let mut rng = crate::rng::RngStream::new(seed).derive(0xFD);
    let mut worst = 0.0f64;
    for ((name, p), grad) in params.iter().zip(analytic) {
        let mut tensor_worst = 0.0f64;
        let mut data = p.data();
        for _ in 0..coords_per_tensor.min(data.len()) {
            let i = rng.below(data.len());
            let orig = data[i];
            data[i] = orig + h;
            p.set_data(&data).unwrap();
            let fp = loss();
            data[i] = orig - h;
            p.set_data(&data).unwrap();
            let fm = loss();
            data[i] = orig;
            p.set_data(&data).unwrap();
            let numeric = (fp - fm) / (2.0 * h);
            let a = grad[i];
            tensor_worst =
                tensor_worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0));
        }
        if std::env::var_os("GRADCHECK_VERBOSE").is_some() {
            eprintln!("{name}: {tensor_worst:e}");
        }
        worst = worst.max(tensor_worst);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0, 0.5];
        let g = central_difference(&mut f, &x, 1e-5);
        let want = [2.0, -4.0, 1.0];
        assert!(max_relative_error(&want, &g) < 1e-9);
    }
}
