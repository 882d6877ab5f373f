use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Max over checked coordinates of `|analytic - numeric| / (1 + |analytic|)`.
    pub max_discrepancy: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<Option<f64>>,
    /// Coordinates whose probes crossed a kink of a piecewise primitive.
    pub excluded: Vec<usize>,
}

impl GradcheckReport {
    pub fn checked(&self) -> usize {
        self.analytic.len() - self.excluded.len()
    }
}

fn evaluate<F>(f: &F, point: &Tensor) -> Result<(f64, Vec<i64>)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(point.detached());
    let y = f(&mut tape, x)?;
    let value = tape
        .value(y)
        .item()
        .ok_or_else(|| Error::NotScalar(tape.value(y).shape().to_vec()))?;
    Ok((value, tape.branch_signature().to_vec()))
}

/// Compares the reverse-mode gradient of a scalar function with central
/// differences at `point`.
///
/// A coordinate is excluded (and listed in the report) when either probe
/// lands on a different branch of a relu/abs/max/log-clamp than the base
/// point does.
pub fn gradcheck<F>(f: F, point: &Tensor, step: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Config(format!("gradcheck step {step} outside (0, 1e-2]")));
    }
    let mut tape = Tape::new();
    let x = tape.param(point.detached());
    let y = f(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape.grad(x).expect("param leaf has a gradient").to_vec();
    let base_branches = tape.branch_signature().to_vec();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut excluded = Vec::new();
    let mut max_discrepancy: f64 = 0.0;
    for i in 0..point.numel() {
        let probe = |delta: f64| -> Result<(f64, Vec<i64>)> {
            let mut p = point.detached();
            p.data_mut()[i] += delta;
            evaluate(&f, &p).map_err(|e| match e {
                Error::NonFinite { .. } | Error::InvalidTensor(_) => Error::NonFiniteAt { coordinate: i },
                other => other,
            })
        };
        let (plus, sig_plus) = probe(step)?;
        let (minus, sig_minus) = probe(-step)?;
        if sig_plus != base_branches || sig_minus != base_branches {
            excluded.push(i);
            numeric.push(None);
            continue;
        }
        let n = (plus - minus) / (2.0 * step);
        if !n.is_finite() {
            return Err(Error::NonFiniteAt { coordinate: i });
        }
        let d = (analytic[i] - n).abs() / (1.0 + analytic[i].abs());
        max_discrepancy = max_discrepancy.max(d);
        numeric.push(Some(n));
    }
    Ok(GradcheckReport {
        max_discrepancy,
        analytic,
        numeric,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor {
        Tensor::vector(data.to_vec()).unwrap()
    }

    #[test]
    fn sum_of_squares_is_tight() {
        let f = |t: &mut Tape, x: Var| {
            let sq = t.mul(x, x)?;
            t.sum(sq)
        };
        let r = gradcheck(f, &v(&[0.3, -1.7, 2.5, 0.01]), 1e-5).unwrap();
        assert!(r.max_discrepancy <= 1e-7, "{}", r.max_discrepancy);
        assert!(r.excluded.is_empty());
    }

    #[test]
    fn constant_function_is_exact() {
        let f = |t: &mut Tape, x: Var| {
            let z = t.scale(x, 0.0)?;
            let s = t.sum(z)?;
            t.affine(s, 1.0, 4.0)
        };
        let r = gradcheck(f, &v(&[1.0, 2.0]), 1e-5).unwrap();
        assert_eq!(r.max_discrepancy, 0.0);
        assert_eq!(r.analytic, vec![0.0, 0.0]);
    }

    #[test]
    fn relu_kink_is_excluded_not_failed() {
        let f = |t: &mut Tape, x: Var| {
            let r = t.relu(x)?;
            t.sum(r)
        };
        let r = gradcheck(f, &v(&[0.0, 1.5, -2.0]), 1e-5).unwrap();
        assert_eq!(r.excluded, vec![0]);
        assert_eq!(r.checked(), 2);
        assert!(r.max_discrepancy <= 1e-9);
    }

    #[test]
    fn step_is_validated() {
        let f = |t: &mut Tape, x: Var| t.sum(x);
        assert!(gradcheck(f, &v(&[1.0]), 0.0).is_err());
        assert!(gradcheck(f, &v(&[1.0]), 0.1).is_err());
    }

    #[test]
    fn non_finite_probe_names_coordinate() {
        // exp overflows only when coordinate 1 is nudged upward
        let f = |t: &mut Tape, x: Var| {
            let e = t.exp(x)?;
            t.sum(e)
        };
        let point = v(&[0.0, f64::MAX.ln() - 1e-9]);
        match gradcheck(f, &point, 1e-2) {
            Err(Error::NonFiniteAt { coordinate }) => assert_eq!(coordinate, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
