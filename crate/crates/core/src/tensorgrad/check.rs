use super::error::TensorError;
use super::scalar::Real;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Floor on the denominator of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-12;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares the tape gradient of a scalar function against central
/// differences, perturbing every element of `x` by `±eps`.
///
/// `f` receives a fresh tape and the leaf holding `x`, and must return a
/// scalar. Returns the largest relative error over all elements.
pub fn finite_diff_check<F, G>(f: G, x: &Tensor<F>, eps: f64) -> Result<f64, TensorError>
where
    F: Real,
    G: Fn(&mut Tape<F>, Var) -> Result<Var, TensorError>,
{
    let analytic = tape_gradient(&f, x)?;
    let numeric = numeric_gradient(&f, x, eps)?;
    Ok(worst_relative_error(&analytic, &numeric))
}

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient<F, G>(f: &G, x: &Tensor<F>, eps: f64) -> Result<Vec<f64>, TensorError>
where
    F: Real,
    G: Fn(&mut Tape<F>, Var) -> Result<Var, TensorError>,
{
    let mut out = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = F::lit(orig.to_f64_lossy() + eps);
        let up = evaluate(f, &probe)?;
        probe.data_mut()[i] = F::lit(orig.to_f64_lossy() - eps);
        let down = evaluate(f, &probe)?;
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Ok(out)
}

/// Largest elementwise relative error between an analytic and a numeric gradient.
pub fn worst_relative_error<F: Real>(analytic: &Tensor<F>, numeric: &[f64]) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric)
        .map(|(a, &n)| relative_error(a.to_f64_lossy(), n, REL_ERR_FLOOR))
        .fold(0.0, f64::max)
}

/// Analytic gradient of `f` at `x`.
pub fn tape_gradient<F, G>(f: &G, x: &Tensor<F>) -> Result<Tensor<F>, TensorError>
where
    F: Real,
    G: Fn(&mut Tape<F>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), true);
    let out = f(&mut tape, leaf)?;
    let mut grads = tape.backward(out)?;
    Ok(grads.take(leaf).unwrap_or_else(|| Tensor::zeros(x.shape())))
}

fn evaluate<F, G>(f: &G, x: &Tensor<F>) -> Result<f64, TensorError>
where
    F: Real,
    G: Fn(&mut Tape<F>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone(), false);
    let out = f(&mut tape, leaf)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.data()[0].to_f64_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::uniform(&[3, 4], 1.0, &mut rng);
        let err = finite_diff_check(|t, v| Ok(t.sum(v)), &x, 1e-5).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sum_of_squares_matches_two_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[10], 2.0, &mut rng);
        let f = |t: &mut Tape<f64>, v: Var| {
            let sq = t.mul(v, v)?;
            Ok(t.sum(sq))
        };
        let g = tape_gradient(&f, &x).unwrap();
        for (gv, xv) in g.data().iter().zip(x.data()) {
            assert_eq!(*gv, 2.0 * xv);
        }
        assert!(finite_diff_check(f, &x, 1e-5).unwrap() < 1e-8);
    }
}
