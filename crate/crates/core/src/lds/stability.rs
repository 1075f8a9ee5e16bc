use nalgebra::{Complex, DMatrix, DVector};

use super::system::LinearSystem;
use crate::error::{Error, Result};
use crate::linalg::{singular_range, spectral_norm, spectral_radius};

/// Largest eigenvector-matrix condition number a certificate may carry.
pub const MAX_WITNESS_COND: f64 = 1e8;
/// Relative reconstruction tolerance for `A + BK = H L H^-1`.
pub const RECONSTRUCTION_TOL: f64 = 1e-8;

/// `(kappa, gamma)` strong stability of `K`, witnessed by `A + BK = H L H^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub k: DMatrix<f64>,
    pub kappa: f64,
    pub gamma: f64,
    pub h: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

/// Directly evaluated quantities of a certificate against a closed loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateCheck {
    pub k_norm: f64,
    pub h_cond: f64,
    pub l_norm: f64,
    /// `||A + BK - H L H^-1||`, absolute.
    pub residual: f64,
}

impl CertificateCheck {
    /// All four strong-stability inequalities hold within `tol`.
    pub fn holds(&self, kappa: f64, gamma: f64, tol: f64) -> bool {
        self.k_norm <= kappa + tol && self.h_cond <= kappa + tol && self.l_norm <= 1.0 - gamma + tol && self.residual <= tol
    }
}

impl StabilityCertificate {
    /// Builds a certificate from a witness `H`; `L` is taken as `H^-1 (A + BK) H`.
    pub fn from_witness(sys: &LinearSystem, k: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let closed = sys.closed_loop(&k)?;
        if h.shape() != closed.shape() {
            return Err(Error::dims("H", format!("{:?}", closed.shape()), format!("{:?}", h.shape())));
        }
        let h_inv = h
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::CertificateNotFound { reason: "witness H is singular".into() })?;
        let l = &h_inv * &closed * &h;
        let kappa = spectral_norm(&k).max(spectral_norm(&h) * spectral_norm(&h_inv));
        let gamma = 1.0 - spectral_norm(&l);
        Ok(Self { k, kappa, gamma, h, h_inv, l })
    }

    /// Evaluates the certificate against `(A, B)`.
    pub fn check(&self, sys: &LinearSystem) -> Result<CertificateCheck> {
        let closed = sys.closed_loop(&self.k)?;
        let recon = &self.h * &self.l * &self.h_inv;
        Ok(CertificateCheck {
            k_norm: spectral_norm(&self.k),
            h_cond: spectral_norm(&self.h) * spectral_norm(&self.h_inv),
            l_norm: spectral_norm(&self.l),
            residual: spectral_norm(&(closed - recon)),
        })
    }

    /// Witness block for a perturbed plant `(A + da, B + db)` under the same `K` and `H`:
    /// `L + H^-1 (da + db K) H`.
    pub fn perturbed_witness(&self, da: &DMatrix<f64>, db: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let n = self.h.nrows();
        if da.shape() != (n, n) {
            return Err(Error::dims("da", format!("{n}x{n}"), format!("{:?}", da.shape())));
        }
        if db.shape() != (n, self.k.nrows()) {
            return Err(Error::dims("db", format!("{}x{}", n, self.k.nrows()), format!("{:?}", db.shape())));
        }
        Ok(&self.l + &self.h_inv * (da + db * &self.k) * &self.h)
    }
}

/// Certifies `K` by a realified eigendecomposition of `A + BK`.
///
/// Conjugate pairs `a +- ib` become `[[a, b], [-b, a]]` blocks, so `||L||` is the
/// spectral radius and `gamma = 1 - rho`. Defective or badly conditioned
/// closed loops are reported as `CertificateNotFound`.
pub fn certify_strong_stability(sys: &LinearSystem, k: &DMatrix<f64>) -> Result<StabilityCertificate> {
    let closed = sys.closed_loop(k)?;
    let n = closed.nrows();
    let rho = spectral_radius(&closed);
    if !(rho < 1.0) {
        return Err(Error::UnstableClosedLoop { rho });
    }
    let scale = spectral_norm(&closed).max(1.0);
    let cluster_tol = 1e-6 * scale;
    let null_tol = 1e-7 * scale;

    let mut eigs: Vec<Complex<f64>> = closed.complex_eigenvalues().iter().copied().collect();
    // conjugate pairs are handled from their upper member
    eigs.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let mut clusters: Vec<(Complex<f64>, usize)> = Vec::new();
    for z in eigs {
        match clusters.iter_mut().find(|(c, _)| (*c - z).norm() <= cluster_tol) {
            Some((c, m)) => {
                *c = (*c * *m as f64 + z) / (*m as f64 + 1.0);
                *m += 1;
            }
            None => clusters.push((z, 1)),
        }
    }

    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut col = 0;
    for (z, m) in clusters {
        if z.im.abs() <= cluster_tol {
            let shifted = &closed - DMatrix::identity(n, n) * z.re;
            for v in null_vectors_real(&shifted, m, null_tol)? {
                h.set_column(col, &v);
                l[(col, col)] = z.re;
                col += 1;
            }
        } else if z.im > 0.0 {
            let shifted = closed.map(|v| Complex::new(v, 0.0)) - DMatrix::identity(n, n) * z;
            for v in null_vectors_complex(&shifted, m, null_tol)? {
                let (p, q) = realify(&v);
                h.set_column(col, &p);
                h.set_column(col + 1, &q);
                l[(col, col)] = z.re;
                l[(col, col + 1)] = z.im;
                l[(col + 1, col)] = -z.im;
                l[(col + 1, col + 1)] = z.re;
                col += 2;
            }
        }
    }
    if col != n {
        return Err(Error::CertificateNotFound {
            reason: format!("eigenvector basis has {col} of {n} columns"),
        });
    }

    let (lo, hi) = singular_range(&h);
    let cond = hi / lo;
    if !(lo > 0.0) || !(cond <= MAX_WITNESS_COND) {
        return Err(Error::CertificateNotFound {
            reason: format!("eigenvector condition number {cond:e} exceeds {MAX_WITNESS_COND:e}"),
        });
    }
    let h_inv = h
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::CertificateNotFound { reason: "eigenvector matrix singular".into() })?;
    let residual = spectral_norm(&(&closed - &h * &l * &h_inv));
    if !(residual <= RECONSTRUCTION_TOL * scale) {
        return Err(Error::CertificateNotFound {
            reason: format!("reconstruction residual {residual:e} (closed loop likely non-diagonalizable)"),
        });
    }
    let kappa = spectral_norm(k).max(cond).max(1.0);
    let gamma = 1.0 - spectral_norm(&l);
    Ok(StabilityCertificate {
        k: k.clone(),
        kappa,
        gamma,
        h,
        h_inv,
        l,
    })
}

fn null_vectors_real(m: &DMatrix<f64>, count: usize, tol: f64) -> Result<Vec<DVector<f64>>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    idx.truncate(count);
    if idx.iter().any(|&i| svd.singular_values[i] > tol) {
        return Err(Error::CertificateNotFound {
            reason: "eigenspace dimension below algebraic multiplicity".into(),
        });
    }
    Ok(idx.into_iter().map(|i| vt.row(i).transpose()).collect())
}

fn null_vectors_complex(m: &DMatrix<Complex<f64>>, count: usize, tol: f64) -> Result<Vec<DVector<Complex<f64>>>> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    idx.truncate(count);
    if idx.iter().any(|&i| svd.singular_values[i] > tol) {
        return Err(Error::CertificateNotFound {
            reason: "complex eigenspace dimension below algebraic multiplicity".into(),
        });
    }
    // rows of V^H are conjugated right singular vectors
    Ok(idx.into_iter().map(|i| vt.row(i).adjoint()).collect())
}

/// Splits a unit complex eigenvector into orthogonal real and imaginary parts.
fn realify(v: &DVector<Complex<f64>>) -> (DVector<f64>, DVector<f64>) {
    let p = v.map(|z| z.re);
    let q = v.map(|z| z.im);
    let theta = 0.5 * (-2.0 * p.dot(&q)).atan2(p.norm_squared() - q.norm_squared());
    let (s, c) = theta.sin_cos();
    let p2 = &p * c - &q * s;
    let q2 = &p * s + &q * c;
    let norm = (p2.norm_squared() + q2.norm_squared()).sqrt();
    (p2 / norm, q2 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn diagonal_plant_certifies_with_identity_witness() {
        let sys = LinearSystem::new(DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])), DMatrix::identity(2, 2)).unwrap();
        let cert = certify_strong_stability(&sys, &DMatrix::zeros(2, 2)).unwrap();
        assert_relative_eq!(cert.kappa, 1.0, epsilon = 1e-12);
        assert_relative_eq!(cert.gamma, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn deadbeat_loop_has_unit_gamma() {
        let sys = LinearSystem::scalar(0.5, 1.0).unwrap();
        let cert = certify_strong_stability(&sys, &DMatrix::from_element(1, 1, -0.5)).unwrap();
        assert_eq!(cert.gamma, 1.0);
    }

    #[test]
    fn unstable_loop_is_rejected() {
        let sys = LinearSystem::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.2, 0.5])), DMatrix::identity(2, 2)).unwrap();
        let err = certify_strong_stability(&sys, &DMatrix::zeros(2, 2)).unwrap_err();
        assert!(matches!(err, Error::UnstableClosedLoop { rho } if (rho - 1.2).abs() < 1e-12));
    }

    #[test]
    fn rotation_scaling_block_is_realified() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -0.6, 0.0, 0.6, 0.3, 0.0, 0.1, 0.2, -0.4]);
        let sys = LinearSystem::new(a, DMatrix::identity(3, 1)).unwrap();
        let cert = certify_strong_stability(&sys, &DMatrix::zeros(1, 3)).unwrap();
        let check = cert.check(&sys).unwrap();
        assert!(check.holds(cert.kappa, cert.gamma, 1e-8), "{check:?}");
        assert_relative_eq!(cert.gamma, 1.0 - 0.45f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn jordan_block_is_not_certified() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        let sys = LinearSystem::new(a, DMatrix::zeros(2, 1)).unwrap();
        let err = certify_strong_stability(&sys, &DMatrix::zeros(1, 2)).unwrap_err();
        assert!(matches!(err, Error::CertificateNotFound { .. }));
    }

    #[test]
    fn repeated_semisimple_eigenvalue_is_certified() {
        let sys = LinearSystem::new(DMatrix::identity(3, 3) * 0.7, DMatrix::zeros(3, 1)).unwrap();
        let cert = certify_strong_stability(&sys, &DMatrix::zeros(1, 3)).unwrap();
        assert_relative_eq!(cert.gamma, 0.3, epsilon = 1e-12);
        assert!(cert.check(&sys).unwrap().holds(cert.kappa, cert.gamma, 1e-8));
    }
}
