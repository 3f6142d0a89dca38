//! Central-difference gradient oracle, independent of the tape's backward rules.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Largest relative disagreement between the tape gradient of `f` at `x` and a
/// central difference with step `h`, over every coordinate of `x`.
///
/// `f` receives a fresh tape and the leaf holding its input, and must return a
/// scalar node. Runs in `f64`.
pub fn finite_diff_check<G>(f: G, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::contract(format!("finite-difference step {h} outside [1e-7, 1e-4]")));
    }
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let root = f(&mut tape, leaf)?;
    let analytic = tape.backward(root)?.get_or_zeros(leaf, x);

    let eval = |point: Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point);
        let root = f(&mut tape, leaf)?;
        let value = tape.value(root).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("function value {value} at probe point")));
        }
        Ok(value)
    };

    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / (a.abs() + 1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_sines_matches_central_differences() {
        let x = Tensor::from_fn(&[3, 4], |i| 0.3 * i as f64 - 1.1);
        let err = finite_diff_check(
            |t, x| {
                let s = t.sin(x);
                Ok(t.sum(s))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-7, "max relative error {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let x = Tensor::from_fn(&[5], |i| i as f64);
        let err = finite_diff_check(|t, _x| Ok(t.constant(Tensor::scalar(3.5))), &x, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_step_outside_range() {
        let x = Tensor::from_fn(&[2], |i| i as f64);
        assert!(finite_diff_check(|t, x| Ok(t.sum(x)), &x, 1e-2).is_err());
    }

    #[test]
    fn non_finite_probe_is_numeric_error() {
        let x = Tensor::from_fn(&[1], |_| 0.0);
        let r = finite_diff_check(
            |t, x| {
                let s = t.sum(x);
                let v = t.value(s).item();
                Ok(t.constant(Tensor::scalar(if v != 0.0 { f64::INFINITY } else { 0.0 })))
            },
            &x,
            1e-5,
        );
        assert!(matches!(r, Err(Error::Numeric(_))));
    }
}
