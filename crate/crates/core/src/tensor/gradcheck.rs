use super::Tensor;
use crate::params::ParamGroup;

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_difference_gradient(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`.
///
/// When both gradients are below `1e-7` in norm the absolute difference is
/// returned instead, since the ratio is then dominated by difference noise.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a.sub(b).expect("gradient shapes agree").norm();
    let scale = a.norm().max(b.norm());
    if scale < 1e-7 {
        diff
    } else {
        diff / scale
    }
}

/// Relative error between `analytic` and central differences of `f`, taken
/// over every value of the group at once.
pub fn group_gradient_error<P: ParamGroup>(params: &P, analytic: &P, mut f: impl FnMut(&P) -> f64, h: f64) -> f64 {
    let mut probe = params.clone();
    let mut numeric = Vec::with_capacity(params.num_values());
    for k in 0..params.tensors().len() {
        for i in 0..params.tensors()[k].1.len() {
            let orig = params.tensors()[k].1.data()[i];
            let mut at = |v: f64, probe: &mut P| {
                probe.tensors_mut()[k].1.data_mut()[i] = v;
                f(probe)
            };
            let plus = at(orig + h, &mut probe);
            let minus = at(orig - h, &mut probe);
            probe.tensors_mut()[k].1.data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
    }
    let flat: Vec<f64> = analytic.tensors().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    relative_error(&Tensor::vector(flat), &Tensor::vector(numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sigmoid;

    #[test]
    fn quadratic() {
        let g = finite_difference_gradient(|x| x.item() * x.item(), &Tensor::scalar(3.0), 1e-5);
        assert!((g.item() - 6.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function() {
        let g = finite_difference_gradient(|_| 4.2, &Tensor::vector(vec![1.0, -2.0, 3.0]), 1e-5);
        assert_eq!(g.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_slope_at_origin() {
        let g = finite_difference_gradient(|x| sigmoid(x.item()), &Tensor::scalar(0.0), 1e-5);
        assert!((g.item() - 0.25).abs() < 1e-9);
    }
}
