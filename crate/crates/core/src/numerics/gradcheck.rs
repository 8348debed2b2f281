use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tape, Var};

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` builds a scalar loss on a fresh tape from the given parameters. The
/// result is the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`
/// over every trainable scalar. Frozen entries are skipped: their values
/// feed the loss as constants and carry no analytic gradient.
pub fn grad_check<F>(f: F, params: &ParamStore, step: f64) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(p, &mut tape)?;
        tape.scalar(loss)
    };

    let a = eval(params)?;
    let b = eval(params)?;
    if a.to_bits() != b.to_bits() {
        return Err(Error::OracleInvalid(format!(
            "function returned {a} then {b} for identical parameters"
        )));
    }

    let mut analytic = params.clone();
    analytic.zero_grads();
    let mut tape = Tape::new();
    let loss = f(&analytic, &mut tape)?;
    tape.backward(loss, 1.0, &mut analytic)?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| !p.frozen)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let len = params.value(&name)?.len();
        for i in 0..len {
            let orig = params.value(&name)?.data()[i];
            probe.get_mut(&name)?.value.data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.get_mut(&name)?.value.data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.get_mut(&name)?.value.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * step);
            let exact = analytic.grad(&name)?.data()[i];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseArray;
    use std::cell::Cell;

    #[test]
    fn square_at_three() {
        let mut s = ParamStore::new(0);
        s.insert("w", DenseArray::scalar(3.0), false).unwrap();
        let err = grad_check(
            |p, t| {
                let w = t.param(p, "w")?;
                Ok(t.squared_norm(w))
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn constant_function() {
        let mut s = ParamStore::new(0);
        s.insert("w", DenseArray::vector(vec![1.0, -2.0]), false).unwrap();
        let err = grad_check(
            |p, t| {
                let _ = t.param(p, "w")?;
                Ok(t.constant(DenseArray::scalar(4.2)))
            },
            &s,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn nondeterministic_function_is_rejected() {
        let mut s = ParamStore::new(0);
        s.insert("w", DenseArray::scalar(1.0), false).unwrap();
        let calls = Cell::new(0.0);
        let res = grad_check(
            |p, t| {
                calls.set(calls.get() + 1.0);
                let w = t.param(p, "w")?;
                let c = t.constant(DenseArray::scalar(calls.get()));
                t.mul(w, c)
            },
            &s,
            1e-5,
        );
        assert!(matches!(res, Err(Error::OracleInvalid(_))));
    }

    #[test]
    fn bad_step_is_rejected() {
        let s = ParamStore::new(0);
        let res = grad_check(|_, t| Ok(t.constant(DenseArray::scalar(0.0))), &s, 0.0);
        assert!(matches!(res, Err(Error::Contract(_))));
    }
}
