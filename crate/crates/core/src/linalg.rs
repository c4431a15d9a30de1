//! Dense and banded linear algebra kernels used by the solver and the ROM
//! builder: symmetric banded Cholesky, a one-sided Jacobi thin SVD, and the
//! Moore-Penrose pseudo-inverse built on it.
//!
//! The SVD orthogonalizes columns of the work matrix by plane rotations, so
//! left singular vectors come out orthonormal to machine precision without a
//! separate re-orthogonalization pass.

use ndarray::{s, Array1, Array2};

use crate::{Error, Result};

/// Symmetric banded matrix, lower band storage: `band[[d, j]] = A[j + d, j]`
/// for `0 <= d <= half_bandwidth`.
#[derive(Debug, Clone)]
pub struct BandedSpd {
    pub n: usize,
    pub half_bandwidth: usize,
    band: Array2<f64>,
}

impl BandedSpd {
    pub fn zeros(n: usize, half_bandwidth: usize) -> Self {
        Self {
            n,
            half_bandwidth,
            band: Array2::zeros((half_bandwidth + 1, n)),
        }
    }

    /// Accumulate into entry (i, j). Only the lower triangle is stored;
    /// callers pass i >= j.
    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i >= j && i - j <= self.half_bandwidth);
        self.band[[i - j, j]] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.half_bandwidth {
            0.0
        } else {
            self.band[[hi - lo, lo]]
        }
    }

    /// y = A x, exploiting symmetry.
    pub fn matvec(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut y = Array1::zeros(self.n);
        for j in 0..self.n {
            let xj = x[j];
            y[j] += self.band[[0, j]] * xj;
            let dmax = self.half_bandwidth.min(self.n - 1 - j);
            for d in 1..=dmax {
                let a = self.band[[d, j]];
                y[j + d] += a * xj;
                y[j] += a * x[j + d];
            }
        }
        y
    }

    /// Replace row and column `k` by the identity row/column. Used to impose
    /// essential boundary conditions on mass matrices.
    pub fn eliminate_index(&mut self, k: usize) {
        let hb = self.half_bandwidth;
        for d in 0..=hb.min(self.n - 1 - k) {
            self.band[[d, k]] = 0.0; // column k, rows k..k+hb
        }
        for j in k.saturating_sub(hb)..k {
            self.band[[k - j, j]] = 0.0; // row k, columns below k
        }
        self.band[[0, k]] = 1.0;
    }

    /// Cholesky factorization A = L L^T within the band. Fails if the matrix
    /// is not positive definite.
    pub fn cholesky(&self) -> Result<BandedChol> {
        let hb = self.half_bandwidth;
        let n = self.n;
        let mut l = self.band.clone();
        for j in 0..n {
            let mut diag = l[[0, j]];
            let kmin = j.saturating_sub(hb);
            for k in kmin..j {
                let v = l[[j - k, k]];
                diag -= v * v;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::Input(format!(
                    "matrix not positive definite at pivot {j} (value {diag:.3e})"
                )));
            }
            let dsqrt = diag.sqrt();
            l[[0, j]] = dsqrt;
            let imax = (j + hb).min(n - 1);
            for i in j + 1..=imax {
                let mut sum = l[[i - j, j]];
                let kmin = i.saturating_sub(hb).max(j.saturating_sub(hb));
                for k in kmin..j {
                    if i - k <= hb {
                        sum -= l[[i - k, k]] * l[[j - k, k]];
                    }
                }
                l[[i - j, j]] = sum / dsqrt;
            }
        }
        Ok(BandedChol {
            n,
            half_bandwidth: hb,
            l,
        })
    }

    /// Sum of squared entries; cheap fingerprint for "assembled once, never
    /// mutated" assertions.
    pub fn checksum(&self) -> f64 {
        self.band.iter().map(|v| v * v).sum()
    }
}

/// Banded Cholesky factor; solves A x = b by forward/backward substitution.
#[derive(Debug, Clone)]
pub struct BandedChol {
    n: usize,
    half_bandwidth: usize,
    l: Array2<f64>,
}

impl BandedChol {
    pub fn solve_in_place(&self, x: &mut Array1<f64>) {
        let hb = self.half_bandwidth;
        let n = self.n;
        // L y = b
        for i in 0..n {
            let mut v = x[i];
            let jmin = i.saturating_sub(hb);
            for j in jmin..i {
                v -= self.l[[i - j, j]] * x[j];
            }
            x[i] = v / self.l[[0, i]];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let mut v = x[i];
            let jmax = (i + hb).min(n - 1);
            for j in i + 1..=jmax {
                v -= self.l[[j - i, i]] * x[j];
            }
            x[i] = v / self.l[[0, i]];
        }
    }

    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }
}

/// Cholesky factorization of a small dense SPD matrix (lower factor).
pub fn dense_cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Internal("cholesky of non-square matrix".into()));
    }
    let mut l = Array2::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Input(format!(
                "matrix not positive definite at pivot {j} (value {diag:.3e})"
            )));
        }
        l[[j, j]] = diag.sqrt();
        for i in j + 1..n {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = sum / l[[j, j]];
        }
    }
    Ok(l)
}

/// Solve with a lower Cholesky factor produced by [`dense_cholesky`].
pub fn dense_cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let mut v = x[i];
        for j in 0..i {
            v -= l[[i, j]] * x[j];
        }
        x[i] = v / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for j in i + 1..n {
            v -= l[[j, i]] * x[j];
        }
        x[i] = v / l[[i, i]];
    }
    x
}

/// Thin singular value decomposition `A = U diag(sigma) V^T` with
/// `U: m x r`, `sigma: r`, `V^T: r x n`, `r = min(m, n)`, singular values
/// sorted in descending order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub vt: Array2<f64>,
}

/// One-sided Jacobi SVD. Columns of the (tall) work matrix are orthogonalized
/// by plane rotations accumulated into V; singular values are the final
/// column norms. For wide matrices the transpose is factorized and the
/// factors swapped.
pub fn thin_svd(a: &Array2<f64>) -> ThinSvd {
    let (m, n) = a.dim();
    if m < n {
        let t = thin_svd(&a.t().to_owned());
        return ThinSvd {
            u: t.vt.t().to_owned(),
            sigma: t.sigma,
            vt: t.u.t().to_owned(),
        };
    }
    let mut w = a.clone();
    let mut v = Array2::eye(n);
    let eps = f64::EPSILON;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    app += wp * wp;
                    aqq += wq * wq;
                    apq += wp * wq;
                }
                if apq.abs() <= eps * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (aqq - app) / (2.0 * apq);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let wp = w[[i, p]];
                    let wq = w[[i, q]];
                    w[[i, p]] = c * wp - s * wq;
                    w[[i, q]] = s * wp + c * wq;
                }
                for i in 0..n {
                    let vp = v[[i, p]];
                    let vq = v[[i, q]];
                    v[[i, p]] = c * vp - s * vq;
                    v[[i, q]] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut norms: Vec<f64> = (0..n)
        .map(|j| w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));
    let mut u = Array2::zeros((m, n));
    let mut vt = Array2::zeros((n, n));
    let mut sigma = Array1::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        let nrm = norms[src];
        sigma[dst] = nrm;
        if nrm > 0.0 {
            for i in 0..m {
                u[[i, dst]] = w[[i, src]] / nrm;
            }
        }
        for i in 0..n {
            vt[[dst, i]] = v[[i, src]];
        }
        norms[src] = nrm;
    }
    ThinSvd { u, sigma, vt }
}

/// Moore-Penrose pseudo-inverse via [`thin_svd`]. Returns the pseudo-inverse
/// and the inverse condition number `sigma_min / sigma_max` of the kept
/// spectrum; fails when the matrix does not have full column rank relative
/// to `rcond`.
pub fn pseudo_inverse(a: &Array2<f64>, rcond: f64) -> Result<(Array2<f64>, f64)> {
    let (m, n) = a.dim();
    if n == 0 {
        return Ok((Array2::zeros((0, m)), 1.0));
    }
    let svd = thin_svd(a);
    let smax = svd.sigma[0];
    let smin = svd.sigma[svd.sigma.len() - 1];
    if m < n || smax <= 0.0 || smin < rcond * smax {
        return Err(Error::RankDeficient(format!(
            "pseudo-inverse of {m}x{n} matrix: sigma_max {smax:.3e}, sigma_min {smin:.3e}"
        )));
    }
    // A^+ = V S^-1 U^T; only the first n columns of U carry the range.
    let mut vs = svd.vt.t().to_owned();
    for j in 0..n {
        let inv = 1.0 / svd.sigma[j];
        vs.column_mut(j).mapv_inplace(|x| x * inv);
    }
    let pinv = vs.dot(&svd.u.slice(s![.., ..n]).t());
    Ok((pinv, smin / smax))
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &Array2<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    thin_svd(a).sigma[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn banded_cholesky_solves() {
        // Tridiagonal SPD: 2 on diagonal, -1 off.
        let n = 12;
        let mut a = BandedSpd::zeros(n, 1);
        for j in 0..n {
            a.add(j, j, 2.0);
            if j + 1 < n {
                a.add(j + 1, j, -1.0);
            }
        }
        let chol = a.cholesky().unwrap();
        let x_true = Array1::from_shape_fn(n, |i| (i as f64).sin());
        let b = a.matvec(&x_true);
        let x = chol.solve(&b);
        assert_relative_eq!(
            x.iter().zip(x_true.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn banded_eliminate_index_decouples() {
        let n = 6;
        let mut a = BandedSpd::zeros(n, 2);
        for j in 0..n {
            a.add(j, j, 3.0);
            if j + 1 < n {
                a.add(j + 1, j, -1.0);
            }
            if j + 2 < n {
                a.add(j + 2, j, 0.5);
            }
        }
        a.eliminate_index(2);
        let mut x = Array1::zeros(n);
        x[2] = 7.0;
        let y = a.matvec(&x);
        assert_eq!(y[2], 7.0);
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 0.0);
        assert_eq!(y[3], 0.0);
        assert_eq!(y[4], 0.0);
    }

    #[test]
    fn not_spd_is_rejected() {
        let mut a = BandedSpd::zeros(3, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 2, 1.0);
        assert!(a.cholesky().is_err());
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, n) in &[(9, 4), (4, 9), (6, 6), (20, 3)] {
            let a = random_matrix(&mut rng, m, n);
            let svd = thin_svd(&a);
            let r = m.min(n);
            assert_eq!(svd.u.dim(), (m, r));
            assert_eq!(svd.vt.dim(), (r, n));
            // Reconstruction
            let mut us = svd.u.clone();
            for j in 0..r {
                us.column_mut(j).mapv_inplace(|x| x * svd.sigma[j]);
            }
            let rec = us.dot(&svd.vt);
            let err = (&rec - &a).iter().map(|x| x.abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "reconstruction error {err}");
            // Orthonormality of U
            let gram = svd.u.t().dot(&svd.u);
            for i in 0..r {
                for j in 0..r {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - want).abs() < 1e-12);
                }
            }
            // Descending singular values
            for i in 1..r {
                assert!(svd.sigma[i - 1] >= svd.sigma[i]);
            }
        }
    }

    #[test]
    fn svd_rank_deficient() {
        let a = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let svd = thin_svd(&a);
        assert!(svd.sigma[1] < 1e-12 * svd.sigma[0]);
    }

    #[test]
    fn pseudo_inverse_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 10, 4);
        let (pinv, _) = pseudo_inverse(&a, 1e-12).unwrap();
        let prod = pinv.dot(&a);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pseudo_inverse_rejects_rank_deficiency() {
        let a = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(pseudo_inverse(&a, 1e-12).is_err());
    }
}
