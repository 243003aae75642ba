//! Random draws used by the Gibbs blocks.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Gamma draw with `shape`/`scale`, floored at the smallest positive normal
/// so tiny shapes cannot produce an exact zero.
pub fn gamma_draw<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, scale)
        .map_err(|e| Error::Parameter(format!("Gamma(shape={shape}, scale={scale}): {e}")))?;
    Ok(g.sample(rng).max(f64::MIN_POSITIVE))
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Cholesky factor, retrying once with a small diagonal jitter.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let p = m.nrows();
    let scale = (m.trace() / p as f64).abs();
    let jitter = if scale > 0.0 { scale * 1e-10 } else { 1e-12 };
    (m + DMatrix::identity(p, p) * jitter)
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))
}

pub fn mvn_draw<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let l = cholesky_with_jitter(cov)?.l();
    Ok(mean + l * standard_normal_vec(mean.len(), rng))
}

/// `-0.5 (x - mean)' cov^-1 (x - mean)`; normalising constant dropped.
pub fn mvn_log_kernel(x: &DVector<f64>, mean: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let d = x - mean;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .expect("Cholesky factor has a non-zero diagonal");
    -0.5 * z.norm_squared()
}

/// Inverse-Wishart draw with `df` degrees of freedom and scale matrix `scale`
/// (mean `scale / (df - p - 1)`), via the Bartlett decomposition.
pub fn inverse_wishart_draw<R: Rng + ?Sized>(
    df: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if !(df > p as f64 - 1.0) {
        return Err(Error::Parameter(format!(
            "inverse-Wishart needs df > p - 1 (df={df}, p={p})"
        )));
    }
    let c = cholesky_with_jitter(scale)?.l();
    // Bartlett factor of a standard Wishart(df, I).
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = (2.0 * gamma_draw((df - i as f64) / 2.0, 1.0, rng)?).sqrt();
        for j in 0..i {
            a[(i, j)] = StandardNormal.sample(rng);
        }
    }
    let a_inv = a
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Numerical("singular Bartlett factor".into()))?;
    let m = c * a_inv.transpose();
    let out = &m * m.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverse_wishart_mean_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let df = 12.0;
        let n = 10_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += inverse_wishart_draw(df, &s, &mut rng).unwrap();
        }
        acc /= n as f64;
        let want = &s / (df - 2.0 - 1.0);
        for i in 0..2 {
            for j in 0..2 {
                let tol = 0.05 * want[(i, i)].max(want[(j, j)]);
                assert!((acc[(i, j)] - want[(i, j)]).abs() < tol, "{acc} vs {want}");
            }
        }
    }

    #[test]
    fn tiny_gamma_shape_never_returns_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            assert!(gamma_draw(0.001, 1.0, &mut rng).unwrap() > 0.0);
        }
    }

    #[test]
    fn zero_scale_is_parameter_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            gamma_draw(1.0, 0.0, &mut rng),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn indefinite_scale_fails_after_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_with_jitter(&m), Err(Error::Numerical(_))));
    }
}
