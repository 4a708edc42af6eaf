use nalgebra::{DMatrix, DVector};

use super::EvalError;

/// Eigenvalues in `[-RELATIVE_CLAMP·λmax, 0)` are rounding noise and are
/// clamped to zero; anything more negative is an error.
const RELATIVE_CLAMP: f64 = 1e-10;

/// Ridge added to both covariances when `Σa` is singular or clamping was
/// needed.
pub const RIDGE_EPS: f64 = 1e-6;

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FidStats {
    pub n: usize,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl FidStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Rows folded into the running moments at a time.
const BLOCK_ROWS: usize = 256;

/// Sample mean and unbiased covariance in one pass, accumulated in f64.
/// Each block of rows is centered on its own mean and merged into the
/// running co-moment with Chan's pairwise update.
pub fn gaussian_stats<R: AsRef<[f32]>>(features: &[R]) -> Result<FidStats, EvalError> {
    let n = features.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let d = features[0].as_ref().len();
    if let Some(row) = features.iter().find(|r| r.as_ref().len() != d) {
        return Err(EvalError::DimensionMismatch { a: d, b: row.as_ref().len() });
    }
    let mut mean = DVector::<f64>::zeros(d);
    let mut co = DMatrix::<f64>::zeros(d, d);
    let mut count = 0usize;
    for block in features.chunks(BLOCK_ROWS) {
        let mut x = DMatrix::from_fn(d, block.len(), |r, c| block[c].as_ref()[r] as f64);
        let block_mean = x.column_mean();
        for mut col in x.column_iter_mut() {
            col -= &block_mean;
        }
        let (na, nb) = (count as f64, block.len() as f64);
        let total = na + nb;
        let delta = &block_mean - &mean;
        co += &x * x.transpose();
        co += (&delta * delta.transpose()) * (na * nb / total);
        mean += delta * (nb / total);
        count += block.len();
    }
    Ok(FidStats {
        n,
        mu: mean,
        sigma: symmetrize(&co) / (n - 1) as f64,
    })
}

fn clamp_eigenvalues(values: &mut DVector<f64>) -> Result<bool, EvalError> {
    let max = values.iter().cloned().fold(0.0f64, f64::max);
    let floor = -RELATIVE_CLAMP * max;
    let mut clamped = false;
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < floor {
                return Err(EvalError::IndefiniteCovariance { eigenvalue: *v, max });
            }
            *v = 0.0;
            clamped = true;
        }
    }
    Ok(clamped)
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})`. With `Σa = L·Lᵀ`, `Lᵀ·Σb·L` is
/// symmetric and similar to `Σa·Σb`, hence shares the spectrum of
/// `Σa^{1/2} Σb Σa^{1/2}`. `None` when `Σa` has no Cholesky factor, or when
/// the spectrum needed clamping and `accept_clamped` is false.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>, accept_clamped: bool) -> Result<Option<f64>, EvalError> {
    let Some(chol) = symmetrize(a).cholesky() else {
        return Ok(None);
    };
    let l = chol.l();
    let inner = symmetrize(&(l.transpose() * b * &l));
    let mut values = inner.symmetric_eigenvalues();
    if clamp_eigenvalues(&mut values)? && !accept_clamped {
        return Ok(None);
    }
    Ok(Some(values.iter().map(|v| v.sqrt()).sum()))
}

fn indefinite(m: &DMatrix<f64>) -> EvalError {
    let values = symmetrize(m).symmetric_eigenvalues();
    EvalError::IndefiniteCovariance {
        eigenvalue: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(0.0f64, f64::max),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidResult {
    pub fid: f64,
    /// A ridge of [`RIDGE_EPS`]·I was added to both covariances.
    pub ridge_applied: bool,
}

/// Fréchet distance between two Gaussian fits, clamped at zero. A ridge is
/// added when `Σa` is singular or the product spectrum needed clamping.
pub fn frechet_distance(a: &FidStats, b: &FidStats) -> Result<FidResult, EvalError> {
    if a.dim() != b.dim() || a.sigma.shape() != (a.dim(), a.dim()) || b.sigma.shape() != (b.dim(), b.dim()) {
        return Err(EvalError::DimensionMismatch { a: a.dim(), b: b.dim() });
    }
    let mean_term = (&a.mu - &b.mu).norm_squared();
    let (mut sa, mut sb) = (a.sigma.clone(), b.sigma.clone());
    let mut ridge_applied = false;
    let tr_sqrt = match trace_sqrt_product(&sa, &sb, false)? {
        Some(t) => t,
        None => {
            log::warn!("singular covariance; adding a {RIDGE_EPS:e}·I ridge to both covariances");
            let ridge = DMatrix::identity(a.dim(), a.dim()) * RIDGE_EPS;
            sa += &ridge;
            sb += &ridge;
            ridge_applied = true;
            trace_sqrt_product(&sa, &sb, true)?.ok_or_else(|| indefinite(&a.sigma))?
        }
    };
    let fid = mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    Ok(FidResult {
        fid: fid.max(0.0),
        ridge_applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_from(mu: Vec<f64>, sigma: DMatrix<f64>) -> FidStats {
        FidStats { n: 10, mu: DVector::from_vec(mu), sigma }
    }

    #[test]
    fn hand_computed_one_dimensional_fit() {
        let s = gaussian_stats(&[vec![0.0f32], vec![2.0]]).unwrap();
        assert_eq!(s.mu[0], 1.0);
        assert_eq!(s.sigma[(0, 0)], 2.0);
    }

    #[test]
    fn identical_vectors_have_zero_covariance() {
        let s = gaussian_stats(&[[1.5f32, -2.0, 3.0]; 2]).unwrap();
        assert!(s.sigma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_and_ragged() {
        assert!(matches!(gaussian_stats(&[vec![1.0f32]]), Err(EvalError::TooFewSamples(1))));
        assert!(matches!(
            gaussian_stats(&[vec![1.0f32, 2.0], vec![1.0]]),
            Err(EvalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let a = stats_from(vec![0.0], DMatrix::identity(1, 1));
        let b = stats_from(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(frechet_distance(&a, &b), Err(EvalError::DimensionMismatch { .. })));
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let bad = stats_from(vec![0.0, 0.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]));
        let ok = stats_from(vec![0.0, 0.0], DMatrix::identity(2, 2));
        assert!(matches!(frechet_distance(&bad, &ok), Err(EvalError::IndefiniteCovariance { .. })));
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats_from(vec![1.0], DMatrix::from_element(1, 1, 4.0));
        let b = stats_from(vec![-2.0], DMatrix::from_element(1, 1, 0.25));
        let r = frechet_distance(&a, &b).unwrap();
        assert!((r.fid - (9.0 + 1.5f64.powi(2))).abs() < 1e-12);
        assert!(!r.ridge_applied);
    }

    #[test]
    fn rank_deficient_input_gets_ridge() {
        // Three samples in 8 dimensions: covariance rank ≤ 2.
        let rows: Vec<Vec<f32>> = (0..3).map(|i| (0..8).map(|j| ((i * 7 + j * 3) % 5) as f32).collect()).collect();
        let s = gaussian_stats(&rows).unwrap();
        let r = frechet_distance(&s, &s).unwrap();
        assert!(r.fid <= 1e-6, "{}", r.fid);
        assert!(r.ridge_applied);
    }

    /// `Tr √(√Σa Σb √Σa)` through explicit eigendecomposition square roots.
    fn trace_sqrt_by_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let e = nalgebra::SymmetricEigen::new(a.clone());
        let root = &e.eigenvectors
            * DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()))
            * e.eigenvectors.transpose();
        let inner = &root * b * &root;
        nalgebra::SymmetricEigen::new((&inner + inner.transpose()) * 0.5)
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .sum()
    }

    #[test]
    fn blocked_moments_match_a_single_block() {
        let rows: Vec<Vec<f32>> = (0..700)
            .map(|i| (0..5).map(|j| ((i * 37 + j * 11) % 101) as f32 * 0.1 + (i % 7) as f32).collect())
            .collect();
        let s = gaussian_stats(&rows).unwrap();
        let n = rows.len() as f64;
        for r in 0..5 {
            let mr = rows.iter().map(|x| x[r] as f64).sum::<f64>() / n;
            assert!((s.mu[r] - mr).abs() < 1e-12);
            for c in 0..5 {
                let mc = rows.iter().map(|x| x[c] as f64).sum::<f64>() / n;
                let v = rows.iter().map(|x| (x[r] as f64 - mr) * (x[c] as f64 - mc)).sum::<f64>() / (n - 1.0);
                assert!((s.sigma[(r, c)] - v).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn symmetric_nonnegative_rotation_invariant(
            xs in prop::collection::vec(-3.0f32..3.0, 4 * 12),
            ys in prop::collection::vec(-3.0f32..3.0, 4 * 12),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            let rows = |v: &[f32]| v.chunks(4).map(|c| c.to_vec()).collect::<Vec<_>>();
            let (a, b) = (gaussian_stats(&rows(&xs)).unwrap(), gaussian_stats(&rows(&ys)).unwrap());
            let ab = frechet_distance(&a, &b).unwrap().fid;
            let ba = frechet_distance(&b, &a).unwrap().fid;
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-6 * ab.max(1.0));

            // Orthogonal map built from two Givens rotations.
            let (c, s) = (angle.cos(), angle.sin());
            let g1 = DMatrix::from_row_slice(4, 4, &[c, 0.0, -s, 0.0, 0.0, 1.0, 0.0, 0.0, s, 0.0, c, 0.0, 0.0, 0.0, 0.0, 1.0]);
            let g2 = DMatrix::from_row_slice(4, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, s, 0.0, c, 0.0, 0.0, 1.0, 0.0, 0.0, -c, 0.0, s]);
            let q = g1 * g2;
            let rot = |st: &FidStats| FidStats { n: st.n, mu: &q * &st.mu, sigma: &q * &st.sigma * q.transpose() };
            let rotated = frechet_distance(&rot(&a), &rot(&b)).unwrap().fid;
            prop_assert!((rotated - ab).abs() <= 1e-6 * ab.max(1.0), "{} vs {}", rotated, ab);
        }

        #[test]
        fn cholesky_trace_matches_eigen_square_roots(
            xs in prop::collection::vec(-3.0f32..3.0, 5 * 20),
            ys in prop::collection::vec(-3.0f32..3.0, 5 * 20),
        ) {
            let rows = |v: &[f32]| v.chunks(5).map(|c| c.to_vec()).collect::<Vec<_>>();
            let (a, b) = (gaussian_stats(&rows(&xs)).unwrap(), gaussian_stats(&rows(&ys)).unwrap());
            let got = trace_sqrt_product(&a.sigma, &b.sigma, false).unwrap().unwrap();
            let want = trace_sqrt_by_eigen(&a.sigma, &b.sigma);
            prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{} vs {}", got, want);
        }
    }
}
