//! Zeroth-order gradient estimation by forward differences along random
//! unit directions:
//!
//! ```text
//! g(x) = 1/M * sum_i d * (f(x + eps * u_i) - f(x)) / eps * u_i
//! ```

use crate::data_io::rng::{normals, SeedTree, StreamRng};
use crate::error::{Error, Result};

/// `m` directions uniform on the unit sphere in `R^d` (normalized Gaussians).
pub fn sample_directions(rng: &mut StreamRng, d: usize, m: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| loop {
            let v = normals(rng, d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// The `m` probe points `x + step * u_i`.
pub fn probe_points(x: &[f64], dirs: &[Vec<f64>], step: f64) -> Vec<Vec<f64>> {
    dirs.iter()
        .map(|u| x.iter().zip(u).map(|(a, b)| a + step * b).collect())
        .collect()
}

/// Combines `f(x)` and the probe values into the estimate.
pub fn combine(f0: f64, probes: &[f64], dirs: &[Vec<f64>], step: f64) -> Result<Vec<f64>> {
    if dirs.is_empty() || probes.len() != dirs.len() {
        return Err(Error::Config(format!(
            "{} probe values for {} directions",
            probes.len(),
            dirs.len()
        )));
    }
    let d = dirs[0].len();
    let m = dirs.len() as f64;
    let mut g = vec![0.0; d];
    for (fi, u) in probes.iter().zip(dirs) {
        let coef = d as f64 * (fi - f0) / step;
        for (gj, uj) in g.iter_mut().zip(u) {
            *gj += coef * uj;
        }
    }
    for gj in &mut g {
        *gj /= m;
    }
    Ok(g)
}

fn check_finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            op: "forward_diff_grad".into(),
        })
    }
}

/// Estimate with caller-chosen directions; evaluates `f` exactly
/// `dirs.len() + 1` times.
pub fn forward_diff_grad_with_dirs<F>(mut f: F, x: &[f64], dirs: &[Vec<f64>], fd_step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(fd_step > 0.0) {
        return Err(Error::Config("fd_step must be positive".into()));
    }
    if let Some(u) = dirs.iter().find(|u| u.len() != x.len()) {
        return Err(Error::Shape {
            op: "forward_diff_grad",
            lhs: vec![x.len()],
            rhs: vec![u.len()],
        });
    }
    let f0 = check_finite(f(x)?)?;
    let probes = probe_points(x, dirs, fd_step)
        .iter()
        .map(|p| f(p).and_then(check_finite))
        .collect::<Result<Vec<_>>>()?;
    combine(f0, &probes, dirs, fd_step)
}

/// Estimate with `m_dirs` random sphere directions drawn from `seed`.
pub fn forward_diff_grad<F>(f: F, x: &[f64], m_dirs: usize, fd_step: f64, seed: u64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if m_dirs == 0 {
        return Err(Error::Config("m_dirs must be at least 1".into()));
    }
    let mut rng = SeedTree::new(seed).stream("fd_directions", 0);
    let dirs = sample_directions(&mut rng, x.len(), m_dirs);
    forward_diff_grad_with_dirs(f, x, &dirs, fd_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_directions_on_sum_of_squares() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum());
        let dirs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let g = forward_diff_grad_with_dirs(f, &[1.0, 2.0], &dirs, 1e-4).unwrap();
        assert!((g[0] - 2.0001).abs() < 1e-9 && (g[1] - 4.0001).abs() < 1e-9, "{g:?}");
    }

    #[test]
    fn constant_gives_exact_zero() {
        let g = forward_diff_grad(|_| Ok(5.0), &[0.3, -1.0, 2.0], 7, 1e-3, 1).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_one_dimensional_is_exact() {
        for step in [1e-4, 0.5, 3.0] {
            for u in [1.0, -1.0] {
                let g = forward_diff_grad_with_dirs(|x| Ok(3.0 * x[0]), &[0.7], &[vec![u]], step).unwrap();
                assert!((g[0] - 3.0).abs() < 1e-9, "{g:?}");
            }
        }
    }

    #[test]
    fn evaluation_count_and_errors() {
        let mut calls = 0;
        forward_diff_grad(
            |_| {
                calls += 1;
                Ok(0.0)
            },
            &[0.0; 4],
            3,
            1e-3,
            2,
        )
        .unwrap();
        assert_eq!(calls, 4);
        assert!(forward_diff_grad(|_| Ok(f64::NAN), &[0.0], 1, 1e-3, 0).is_err());
        assert!(forward_diff_grad(|_| Ok(0.0), &[0.0], 0, 1e-3, 0).is_err());
        assert!(forward_diff_grad(|_| Ok(0.0), &[0.0], 1, 0.0, 0).is_err());
    }

    #[test]
    fn directions_are_unit() {
        let mut rng = SeedTree::new(3).stream("d", 0);
        for u in sample_directions(&mut rng, 5, 20) {
            let n: f64 = u.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
