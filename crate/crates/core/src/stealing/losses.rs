//! Stealing objectives, as plain functions on vectors and as tape
//! expressions over batches.
//!
//! Plain versions score one example; tape versions return one value per row
//! (`[batch]`) so callers can average or reweight.

use crate::autodiff::{argmax, Tape, Tensor, Var, LOG_FLOOR};
use crate::error::{Error, Result};

fn same_width(a: &[f64], b: &[f64], op: &'static str) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

fn clamped_ln(p: f64) -> f64 {
    p.max(LOG_FLOOR).ln()
}

/// Cross entropy `-sum_i t_i ln p_i` of the substitute against the oracle
/// response.
pub fn loss_substitute_ce(target: &[f64], probs: &[f64]) -> Result<f64> {
    same_width(target, probs, "loss_substitute_ce")?;
    Ok(-target.iter().zip(probs).map(|(t, p)| t * clamped_ln(*p)).sum::<f64>())
}

/// Confidence objective: `-ln p_k` with `k` the arg-max of `probs`.
pub fn loss_generator_confidence(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(-clamped_ln(probs[argmax(probs)]))
}

/// `||t - s||_1`. The competitive generator maximises it.
pub fn loss_dfme_l1(t: &[f64], s: &[f64]) -> Result<f64> {
    same_width(t, s, "loss_dfme_l1")?;
    Ok(t.iter().zip(s).map(|(a, b)| (a - b).abs()).sum())
}

/// `exp(-CE(t, s))`, minimised by the competitive generator.
pub fn loss_dast_generator(t: &[f64], s: &[f64]) -> Result<f64> {
    Ok((-loss_substitute_ce(t, s)?).exp())
}

/// `sum_i t_i ln(t_i / s_i)` with the same log clamp as the cross entropy.
pub fn kl_divergence(t: &[f64], s: &[f64]) -> Result<f64> {
    same_width(t, s, "kl_divergence")?;
    Ok(t.iter()
        .zip(s)
        .map(|(a, b)| {
            if *a == 0.0 {
                0.0
            } else {
                a * (clamped_ln(*a) - clamped_ln(*b))
            }
        })
        .sum())
}

/// Shannon entropy in nats.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .map(|&x| if x == 0.0 { 0.0 } else { x * clamped_ln(x) })
        .sum::<f64>()
}

/// `-sum_i T_i log S_i` per row.
pub fn ce_rows(tape: &mut Tape, target: Var, probs: Var) -> Result<Var> {
    let log_s = tape.log(probs)?;
    let prod = tape.mul(target, log_s)?;
    let s = tape.sum_axis(prod, 1)?;
    tape.scale(s, -1.0)
}

/// `-log max_i S_i` per row; the arg-max index is fixed by the forward
/// value, so the gradient flows only through that coordinate.
pub fn confidence_rows(tape: &mut Tape, probs: Var) -> Result<Var> {
    let m = tape.max_axis(probs, 1)?;
    let l = tape.log(m)?;
    tape.scale(l, -1.0)
}

/// Same objective written with an explicit constant one-hot mask for the
/// given indices.
pub fn masked_confidence_rows(tape: &mut Tape, probs: Var, index: &[usize]) -> Result<Var> {
    let cols = tape.value(probs).cols();
    let mut mask = vec![0.0; index.len() * cols];
    for (r, &k) in index.iter().enumerate() {
        mask[r * cols + k] = 1.0;
    }
    let mask = tape.constant(Tensor::new(vec![index.len(), cols], mask)?);
    let picked = tape.mul(probs, mask)?;
    let p = tape.sum_axis(picked, 1)?;
    let l = tape.log(p)?;
    tape.scale(l, -1.0)
}

/// `||T - S||_1` per row.
pub fn l1_rows(tape: &mut Tape, target: Var, probs: Var) -> Result<Var> {
    let d = tape.sub(target, probs)?;
    let a = tape.abs(d)?;
    tape.sum_axis(a, 1)
}

/// `exp(-CE(T, S))` per row.
pub fn dast_rows(tape: &mut Tape, target: Var, probs: Var) -> Result<Var> {
    let ce = ce_rows(tape, target, probs)?;
    let neg = tape.scale(ce, -1.0)?;
    tape.exp(neg)
}

/// `sum_i T_i (log T_i - log S_i)` per row. `target` may itself carry a
/// gradient (white-box target).
pub fn kl_rows(tape: &mut Tape, target: Var, probs: Var) -> Result<Var> {
    let log_t = tape.log(target)?;
    let log_s = tape.log(probs)?;
    let diff = tape.sub(log_t, log_s)?;
    let prod = tape.mul(target, diff)?;
    tape.sum_axis(prod, 1)
}

/// One-hot rows for the given labels.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut data = vec![0.0; labels.len() * classes];
    for (r, &k) in labels.iter().enumerate() {
        if k >= classes {
            return Err(Error::LabelOutOfRange {
                label: k,
                num_classes: classes,
            });
        }
        data[r * classes + k] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 5e-7, "{a} vs {b}");
    }

    #[test]
    fn ce_values() {
        close(
            loss_substitute_ce(&[0.0, 0.0, 1.0], &[0.1, 0.2, 0.7]).unwrap(),
            0.356675,
        );
        close(loss_substitute_ce(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.693147);
        close(loss_substitute_ce(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.610864);
        assert!(loss_substitute_ce(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn confidence_values() {
        close(loss_generator_confidence(&[0.25, 0.25, 0.5]).unwrap(), 0.693147);
        close(loss_generator_confidence(&[0.1; 10]).unwrap(), 2.302585);
        close(loss_generator_confidence(&[0.5, 0.5]).unwrap(), 0.693147);
    }

    #[test]
    fn l1_values() {
        close(loss_dfme_l1(&[1.0, 0.0], &[0.6, 0.4]).unwrap(), 0.8);
        assert_eq!(loss_dfme_l1(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        close(loss_dfme_l1(&[0.3, 0.7], &[0.7, 0.3]).unwrap(), 0.8);
        assert!(loss_dfme_l1(&[1.0, 0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dast_values() {
        assert_eq!(loss_dast_generator(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        close(loss_dast_generator(&[0.0, 1.0], &[0.5, 0.5]).unwrap(), 0.5);
        close(loss_dast_generator(&[1.0, 0.0], &[0.1, 0.9]).unwrap(), 0.1);
    }

    #[test]
    fn kl_of_identical_is_zero_ce_is_entropy() {
        let p = [0.3, 0.7];
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-15);
        close(loss_substitute_ce(&p, &p).unwrap(), entropy(&p));
    }

    #[test]
    fn tape_rows_match_plain_values() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.2, 0.5, 0.3]]).unwrap();
        let s = Tensor::from_rows(&[vec![0.1, 0.2, 0.7], vec![0.6, 0.1, 0.3]]).unwrap();
        let mut tape = Tape::new();
        let tv = tape.constant(t.clone());
        let sv = tape.constant(s.clone());
        let ce = ce_rows(&mut tape, tv, sv).unwrap();
        let conf = confidence_rows(&mut tape, sv).unwrap();
        let l1 = l1_rows(&mut tape, tv, sv).unwrap();
        let dast = dast_rows(&mut tape, tv, sv).unwrap();
        let kl = kl_rows(&mut tape, tv, sv).unwrap();
        for r in 0..2 {
            let (tr, sr) = (t.row(r), s.row(r));
            close(tape.value(ce).data()[r], loss_substitute_ce(tr, sr).unwrap());
            close(tape.value(conf).data()[r], loss_generator_confidence(sr).unwrap());
            close(tape.value(l1).data()[r], loss_dfme_l1(tr, sr).unwrap());
            close(tape.value(dast).data()[r], loss_dast_generator(tr, sr).unwrap());
            close(tape.value(kl).data()[r], kl_divergence(tr, sr).unwrap());
        }
    }

    #[test]
    fn uniform_softmax_log_prob_gradient() {
        // d/dw log softmax(w)_0 at w = 0 (N=3): [2/3, -1/3, -1/3].
        let f = |tape: &mut Tape, w: Var| {
            let row = tape.affine(w, 1.0, 0.0)?;
            let s = tape.softmax(row)?;
            let l = tape.log(s)?;
            let mask = tape.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0])?);
            let p = tape.mul(l, mask)?;
            tape.sum(p)
        };
        let w = Tensor::zeros(vec![1, 3]);
        let r = gradcheck(f, &w, 1e-5).unwrap();
        let expected = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0];
        for (a, e) in r.analytic.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        for (n, e) in r.numeric.iter().zip(expected) {
            assert!((n.unwrap() - e).abs() < 1e-9);
        }
    }

    #[test]
    fn one_hot_checks_range() {
        let t = one_hot(&[2, 0], 3).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(matches!(one_hot(&[3], 3), Err(Error::LabelOutOfRange { .. })));
    }
}
