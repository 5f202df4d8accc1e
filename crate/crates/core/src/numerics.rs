//! Dense kernels shared by the TRCA and transfer stages.
//!
//! Everything here works on `f64` matrices whose rows are variables (channels,
//! source subjects) and whose columns are observations (time samples).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative ridge applied to `Q` and to the CCA auto-covariances.
pub const RIDGE: f64 = 1e-9;

/// Negative eigenvalues of `Q` down to `-PSD_TOLERANCE * trace / n` are treated as round-off.
pub const PSD_TOLERANCE: f64 = 1e-6;

/// Top solution of the generalized symmetric problem `S w = λ (Q + εI) w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub eigenvalue: f64,
    /// Normalized so that `wᵀ(Q + εI)w = 1`; largest-magnitude entry is positive.
    pub eigenvector: Vector,
}

/// First canonical pair of two views sharing the same observation axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaPair {
    pub weight_a: Vector,
    pub weight_b: Vector,
    /// Pearson correlation of `weight_aᵀA` and `weight_bᵀB`, in `[0, 1]`.
    pub correlation: f64,
}

fn center_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    out
}

fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Row-centered sample cross-covariance `A_c B_cᵀ / (n - 1)`.
pub fn cross_covariance(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return dim_err(format!("cross_covariance: {} vs {} samples", a.ncols(), b.ncols()));
    }
    let n = a.ncols();
    if n < 2 {
        return dim_err(format!("cross_covariance needs at least 2 samples, got {n}"));
    }
    let ac = center_rows(a);
    let bc = center_rows(b);
    Ok(ac * bc.transpose() / (n as f64 - 1.0))
}

/// Pearson correlation. Zero variance in either input is reported as [`Error::Degenerate`].
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return dim_err(format!("pearson_corr: lengths {} and {}", x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return dim_err(format!("pearson_corr needs at least 2 samples, got {n}"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mx;
        let dy = yi - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Degenerate("zero-variance input to pearson_corr".into()));
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    if !r.is_finite() {
        return Err(Error::NonFinite("pearson_corr"));
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// [`pearson_corr`] with degenerate inputs mapped to 0. Length mismatches still fail.
pub fn pearson_or_zero(x: &[f64], y: &[f64]) -> Result<f64> {
    match pearson_corr(x, y) {
        Ok(r) => Ok(r),
        Err(Error::Degenerate(_)) | Err(Error::NonFinite(_)) => {
            log::warn!("degenerate correlation input, using 0");
            Ok(0.0)
        }
        Err(e) => Err(e),
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Cholesky of `m + ridge·I`, raising the ridge just enough if round-off pushed
/// the smallest eigenvalue below `-ridge`.
fn ridge_cholesky(m: &Matrix, ridge: f64, min_eig: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    let eye = Matrix::identity(n, n);
    if let Some(c) = (m + &eye * ridge).cholesky() {
        return Ok(c);
    }
    let bumped = ridge + 2.0 * min_eig.abs();
    (m + &eye * bumped)
        .cholesky()
        .ok_or_else(|| Error::Degenerate("regularized matrix is not positive definite".into()))
}

/// Flip `v` so its largest-magnitude entry is positive. Returns whether it flipped.
pub fn orient_largest_positive(v: &mut Vector) -> bool {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
        true
    } else {
        false
    }
}

/// Largest generalized eigenpair of `S w = λ (Q + εI) w`, `ε = 1e-9·trace(Q)/n`.
///
/// Reduced to a standard symmetric problem through the Cholesky factor of the
/// regularized `Q`; `Q⁻¹S` is never formed.
pub fn solve_rayleigh(s: &Matrix, q: &Matrix) -> Result<EigenPair> {
    let n = s.nrows();
    if n == 0 || s.ncols() != n || q.nrows() != n || q.ncols() != n {
        return dim_err(format!(
            "solve_rayleigh: S is {}x{}, Q is {}x{}",
            s.nrows(),
            s.ncols(),
            q.nrows(),
            q.ncols()
        ));
    }
    ensure_finite(s, "S")?;
    ensure_finite(q, "Q")?;
    let s = symmetrize(s);
    let q = symmetrize(q);

    let scale = q.trace() / n as f64;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("Q has non-positive trace".into()));
    }
    let min_eig = q.symmetric_eigenvalues().min();
    let tolerance = PSD_TOLERANCE * scale;
    if min_eig < -tolerance {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min_eig,
            tolerance,
        });
    }

    let chol = ridge_cholesky(&q, RIDGE * scale, min_eig)?;
    let l = chol.l();
    // C = L⁻¹ S L⁻ᵀ
    let linv_s = l
        .solve_lower_triangular(&s)
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let c = l
        .solve_lower_triangular(&linv_s.transpose())
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    let eig = symmetrize(&c).symmetric_eigen();

    let (top, &eigenvalue) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("n >= 1");
    let v: Vector = eig.eigenvectors.column(top).into_owned();
    let mut w = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::Degenerate("singular Cholesky factor".into()))?;
    orient_largest_positive(&mut w);
    if !eigenvalue.is_finite() || w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("generalized eigenpair"));
    }
    Ok(EigenPair {
        eigenvalue,
        eigenvector: w,
    })
}

fn regularized_auto_cov(m: &Matrix, view: &str) -> Result<Cholesky<f64, Dyn>> {
    let c = cross_covariance(m, m)?;
    let dim = c.nrows();
    let scale = c.trace() / dim as f64;
    if !(scale > 0.0) {
        return Err(Error::Degenerate(format!("CCA view {view} has no variance")));
    }
    let min_eig = c.symmetric_eigenvalues().min();
    ridge_cholesky(&c, RIDGE * scale, min_eig)
}

/// Project a `rows × n` matrix onto a weight vector, giving the `n` samples of `wᵀM`.
pub fn project(weights: &Vector, m: &Matrix) -> Result<Vec<f64>> {
    if weights.len() != m.nrows() {
        return dim_err(format!("projection: {} weights for {} rows", weights.len(), m.nrows()));
    }
    Ok((m.transpose() * weights).iter().copied().collect())
}

/// First canonical pair of views `a` and `b` (rows are variables, columns are
/// shared observations).
///
/// Each view is whitened with the Cholesky factor of its ridge-regularized
/// auto-covariance; the top singular pair of the whitened cross-covariance
/// gives the weights. `weight_b` is oriented with its largest entry positive,
/// and the correlation is always reported non-negative.
pub fn cca_first_pair(a: &Matrix, b: &Matrix) -> Result<CcaPair> {
    if a.ncols() != b.ncols() {
        return dim_err(format!("cca: {} vs {} samples", a.ncols(), b.ncols()));
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return dim_err("cca: empty view");
    }
    ensure_finite(a, "CCA view a")?;
    ensure_finite(b, "CCA view b")?;
    let la = regularized_auto_cov(a, "a")?;
    let lb = regularized_auto_cov(b, "b")?;
    let cab = cross_covariance(a, b)?;

    let la_l = la.l();
    let lb_l = lb.l();
    // K = La⁻¹ Cab Lb⁻ᵀ
    let left = la_l
        .solve_lower_triangular(&cab)
        .ok_or_else(|| Error::Degenerate("singular whitening factor".into()))?;
    let k = lb_l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| Error::Degenerate("singular whitening factor".into()))?
        .transpose();

    let svd = k.svd(true, true);
    let (top, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty views");
    let u: Vector = svd.u.as_ref().expect("u requested").column(top).into_owned();
    let v: Vector = svd
        .v_t
        .as_ref()
        .expect("v_t requested")
        .row(top)
        .transpose()
        .into_owned();

    let mut weight_a = la_l
        .transpose()
        .solve_upper_triangular(&u)
        .ok_or_else(|| Error::Degenerate("singular whitening factor".into()))?;
    let mut weight_b = lb_l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or_else(|| Error::Degenerate("singular whitening factor".into()))?;
    if orient_largest_positive(&mut weight_b) {
        weight_a.neg_mut();
    }

    let pa = project(&weight_a, a)?;
    let pb = project(&weight_b, b)?;
    let mut correlation = pearson_or_zero(&pa, &pb)?;
    if correlation < 0.0 {
        // Only reachable when the top singular value is numerically zero.
        weight_a.neg_mut();
        correlation = -correlation;
    }
    Ok(CcaPair {
        weight_a,
        weight_b,
        correlation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn covariance_hand_values() {
        let a = mat(1, 2, &[1.0, -1.0]);
        assert_abs_diff_eq!(cross_covariance(&a, &a).unwrap()[(0, 0)], 2.0, epsilon = 1e-15);
        let c = mat(1, 3, &[4.2, 4.2, 4.2]);
        assert_eq!(cross_covariance(&c, &c).unwrap()[(0, 0)], 0.0);
        let x = mat(1, 3, &[1.0, 2.0, 3.0]);
        let y = mat(1, 3, &[3.0, 2.0, 1.0]);
        assert_abs_diff_eq!(cross_covariance(&x, &y).unwrap()[(0, 0)], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn covariance_errors() {
        let a = mat(1, 3, &[1.0, 2.0, 3.0]);
        let b = mat(1, 2, &[1.0, 2.0]);
        assert!(matches!(cross_covariance(&a, &b), Err(Error::Dimension(_))));
        let one = mat(1, 1, &[1.0]);
        assert!(cross_covariance(&one, &one).is_err());
    }

    #[test]
    fn pearson_values() {
        assert_abs_diff_eq!(
            pearson_corr(&[1., 2., 3.], &[1., 2., 3.]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            pearson_corr(&[1., 2., 3.], &[3., 2., 1.]).unwrap(),
            -1.0,
            epsilon = 1e-15
        );
        // sxy = 3, sxx = 2, syy = 14/3  ->  3 / sqrt(28/3)
        let expected = 3.0 / (28.0_f64 / 3.0).sqrt();
        assert_abs_diff_eq!(expected, 0.98198, epsilon = 1e-5);
        assert_abs_diff_eq!(
            pearson_corr(&[1., 2., 3.], &[1., 2., 4.]).unwrap(),
            expected,
            epsilon = 1e-14
        );
        assert!(matches!(
            pearson_corr(&[1., 1., 1.], &[1., 2., 3.]),
            Err(Error::Degenerate(_))
        ));
        assert_eq!(pearson_or_zero(&[1., 1., 1.], &[1., 2., 3.]).unwrap(), 0.0);
        assert!(pearson_corr(&[1., 2.], &[1., 2., 3.]).is_err());
    }

    #[test]
    fn rayleigh_diagonal_and_identity() {
        let s = mat(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let q = Matrix::identity(2, 2);
        let p = solve_rayleigh(&s, &q).unwrap();
        assert_abs_diff_eq!(p.eigenvalue, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(p.eigenvector[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(p.eigenvector[1], 0.0, epsilon = 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 4, 4);
        let spd = &m * m.transpose() + Matrix::identity(4, 4);
        let p = solve_rayleigh(&spd, &spd).unwrap();
        assert_abs_diff_eq!(p.eigenvalue, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn rayleigh_unit_generalized_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 5, 5);
        let q = &m * m.transpose();
        let s = symmetrize(&random_matrix(&mut rng, 5, 5));
        let p = solve_rayleigh(&s, &q).unwrap();
        let eps = RIDGE * q.trace() / 5.0;
        let qr = &q + Matrix::identity(5, 5) * eps;
        let w = &p.eigenvector;
        assert_abs_diff_eq!((w.transpose() * &qr * w)[(0, 0)], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn rayleigh_rejects_bad_input() {
        let s = Matrix::identity(2, 2);
        let q = mat(2, 2, &[2.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            solve_rayleigh(&s, &q),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let nan = mat(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]);
        assert!(matches!(solve_rayleigh(&nan, &s), Err(Error::NonFinite(_))));
        assert!(solve_rayleigh(&Matrix::identity(2, 2), &Matrix::identity(3, 3)).is_err());
    }

    #[test]
    fn cca_identical_and_transformed_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 3, 200);
        let p = cca_first_pair(&a, &a).unwrap();
        assert_abs_diff_eq!(p.correlation, 1.0, epsilon = 1e-8);

        let m = random_matrix(&mut rng, 3, 3) + Matrix::identity(3, 3) * 2.0;
        let b = &m * &a;
        let p = cca_first_pair(&a, &b).unwrap();
        assert_abs_diff_eq!(p.correlation, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn cca_shared_latent_tends_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 300;
        let latent: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut prev = 0.0;
        for noise in [0.5, 0.1, 0.01, 0.0] {
            let mut a = random_matrix(&mut rng, 2, n);
            let mut b = random_matrix(&mut rng, 2, n);
            for t in 0..n {
                a[(0, t)] = latent[t] + noise * rng.random_range(-1.0..1.0);
                b[(1, t)] = latent[t] + noise * rng.random_range(-1.0..1.0);
            }
            let c = cca_first_pair(&a, &b).unwrap().correlation;
            assert!(c >= prev - 1e-3, "correlation should grow as noise shrinks");
            prev = c;
        }
        assert_abs_diff_eq!(prev, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn cca_reported_correlation_matches_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = random_matrix(&mut rng, 4, 120);
        let b = random_matrix(&mut rng, 3, 120);
        let p = cca_first_pair(&a, &b).unwrap();
        let r = pearson_corr(&project(&p.weight_a, &a).unwrap(), &project(&p.weight_b, &b).unwrap()).unwrap();
        assert!((0.0..=1.0).contains(&p.correlation));
        assert_abs_diff_eq!(r, p.correlation, epsilon = 1e-12);
    }

    #[test]
    fn cca_degenerate_view() {
        let a = Matrix::from_element(2, 10, 3.0);
        let b = Matrix::from_fn(2, 10, |r, c| (r * 10 + c) as f64);
        assert!(matches!(cca_first_pair(&a, &b), Err(Error::Degenerate(_))));
    }
}
