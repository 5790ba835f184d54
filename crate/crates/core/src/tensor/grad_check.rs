use super::{Tape, Tensor, TensorError, Var};

/// `|a - n| / max(1, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1.0)
}

/// Compare the tape gradient of a scalar program at `point` with central
/// finite differences of step `step`. Returns the maximum relative error
/// over coordinates.
///
/// `f` records its program on the given tape, taking the variable holding the
/// evaluation point, and returns the scalar output.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let out = f(&mut tape, x)?;
    tape.backward(out)?;
    let analytic = match tape.grad(x) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; point.len()],
    };

    let eval = |p: Tensor<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let x = tape.constant(p);
        let out = f(&mut tape, x)?;
        Ok(tape.value(out).item())
    };

    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let point = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut tape = Tape::new();
        let x = tape.param(point.clone());
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);

        let err = grad_check(
            |t, x| {
                let sq = t.mul(x, x)?;
                t.sum(sq)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let point = Tensor::from_fn(&[5], |i| i as f64 - 2.0);
        let weights = [0.5, -1.0, 2.0, 3.0, -0.25];
        let err = grad_check(|t, x| t.dot_const(x, &weights), &point, 1e-3).unwrap();
        assert!(err < 1e-12, "{err}");
    }
}
