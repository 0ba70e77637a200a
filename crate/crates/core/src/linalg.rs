//! Dense symmetric linear algebra at the scale of one variant set.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 10_000;

#[cfg(test)]
pub(crate) fn frobenius(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fails unless `a` is square and symmetric to `tol` relative to its largest
/// entry.
pub(crate) fn check_symmetric(a: ArrayView2<f64>, tol: f64) -> Result<()> {
    let (r, c) = a.dim();
    if r != c {
        return Err(Error::domain(format!("matrix is {r}x{c}, expected square")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("matrix has non-finite entries"));
    }
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    for i in 0..r {
        for j in 0..i {
            if (a[[i, j]] - a[[j, i]]).abs() > tol * scale {
                return Err(Error::domain(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a[[i, j]],
                    a[[j, i]]
                )));
            }
        }
    }
    Ok(())
}

/// Eigen-decomposition of a symmetric matrix (Householder tridiagonalization
/// and implicit QR, via nalgebra).
///
/// Returns eigenvalues in nonincreasing order and the matching orthonormal
/// eigenvectors as columns. Only the lower triangle is read.
pub fn symmetric_eigen(a: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::domain("symmetric_eigen: matrix is not square"));
    }
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("symmetric_eigen: matrix has non-finite entries"));
    }
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| if i >= j { a[[i, j]] } else { a[[j, i]] });
    let e = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, MAX_ITERATIONS).ok_or_else(|| {
        Error::numerical("symmetric_eigen", format!("no convergence after {MAX_ITERATIONS} iterations (n={n})"))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| e.eigenvalues[j].total_cmp(&e.eigenvalues[i]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(k, col)| e.eigenvectors[(k, order[col])]);
    Ok((values, vectors))
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > 0.0) {
            return Err(Error::domain(format!("cholesky: matrix is not positive definite (pivot {j})")));
        }
        let d = d.sqrt();
        l[[j, j]] = d;
        for i in j + 1..n {
            let mut x = a[[i, j]];
            for k in 0..j {
                x -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = x / d;
        }
    }
    Ok(l)
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn forward_substitute(l: ArrayView2<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Inverse of a lower-triangular matrix.
pub fn invert_lower(l: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut inv = Array2::zeros((n, n));
    for (j, mut col) in inv.axis_iter_mut(Axis(1)).enumerate() {
        let mut e = Array1::zeros(n);
        e[j] = 1.0;
        col.assign(&forward_substitute(l, e.view()));
    }
    inv
}

/// `x^T A x` for symmetric `A`.
pub(crate) fn quad_form(a: ArrayView2<f64>, x: ArrayView1<f64>) -> f64 {
    x.dot(&a.dot(&x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_psd(n: usize, seed: u64) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n + 3, n), |_| rng.random::<f64>() - 0.5);
        x.t().dot(&x)
    }

    #[test]
    fn diagonal_and_two_by_two() {
        let (vals, vecs) = symmetric_eigen(array![[2.0, 0.0], [0.0, 5.0]].view()).unwrap();
        assert_eq!(vals, vec![5.0, 2.0]);
        assert!((vecs[[1, 0]].abs() - 1.0).abs() < 1e-15);

        let (vals, _) = symmetric_eigen(array![[1.0, 0.5], [0.5, 1.0]].view()).unwrap();
        assert!((vals[0] - 1.5).abs() < 1e-14 && (vals[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn matches_closed_form_spectra() {
        // Tridiagonal Toeplitz: a + 2 b cos(k pi / (n + 1)), k = 1..n.
        let (n, a, b) = (40, 2.0, -0.7);
        let t = Array2::from_shape_fn((n, n), |(i, j)| match i.abs_diff(j) {
            0 => a,
            1 => b,
            _ => 0.0,
        });
        let (vals, vecs) = symmetric_eigen(t.view()).unwrap();
        let mut want: Vec<f64> = (1..=n)
            .map(|k| a + 2.0 * b * (k as f64 * std::f64::consts::PI / (n as f64 + 1.0)).cos())
            .collect();
        want.sort_by(|x, y| y.total_cmp(x));
        for (g, w) in vals.iter().zip(&want) {
            assert!((g - w).abs() < 1e-13 * want[0], "{g} vs {w}");
        }
        let gram = vecs.t().dot(&vecs);
        assert!(frobenius((&gram - &Array2::<f64>::eye(n)).view()) < 1e-12);

        // Exchangeable: 1 + (p - 1) rho once, 1 - rho otherwise.
        let (p, rho) = (25, 0.3);
        let ex = Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { rho });
        let (vals, _) = symmetric_eigen(ex.view()).unwrap();
        assert!((vals[0] - (1.0 + (p as f64 - 1.0) * rho)).abs() < 1e-13);
        assert!(vals[1..].iter().all(|v| (v - (1.0 - rho)).abs() < 1e-13));
    }

    #[test]
    fn reconstructs_larger_matrices() {
        for seed in 0..3 {
            let a = random_psd(120, seed);
            let (vals, vecs) = symmetric_eigen(a.view()).unwrap();
            let lam = Array2::from_diag(&Array1::from(vals));
            let recon = vecs.dot(&lam).dot(&vecs.t());
            assert!(frobenius((&recon - &a).view()) / frobenius(a.view()) < 1e-12);
        }
    }

    #[test]
    fn cholesky_solves() {
        let a = random_psd(8, 9);
        let l = cholesky(a.view()).unwrap();
        assert!(frobenius((&l.dot(&l.t()) - &a).view()) < 1e-12 * frobenius(a.view()));
        let li = invert_lower(l.view());
        assert!(frobenius((&li.dot(&l) - &Array2::<f64>::eye(8)).view()) < 1e-10);
        assert!(cholesky(array![[1.0, 2.0], [2.0, 1.0]].view()).is_err());
    }

    #[test]
    fn symmetry_check() {
        assert!(check_symmetric(array![[1.0, 0.2], [0.2, 1.0]].view(), 1e-10).is_ok());
        assert!(check_symmetric(array![[1.0, 0.2], [0.3, 1.0]].view(), 1e-10).is_err());
        assert!(check_symmetric(Array2::<f64>::zeros((2, 3)).view(), 1e-10).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn eigen_reconstructs(n in 1usize..20, seed in any::<u64>()) {
            let a = random_psd(n, seed);
            let (vals, vecs) = symmetric_eigen(a.view()).unwrap();
            prop_assert!(vals.windows(2).all(|w| w[0] >= w[1]));
            let recon = vecs.dot(&Array2::from_diag(&Array1::from(vals))).dot(&vecs.t());
            prop_assert!(frobenius((&recon - &a).view()) <= 1e-10 * frobenius(a.view()).max(1e-300));
        }
    }
}
