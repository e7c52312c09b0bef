//! Small dense complex linear algebra.
//!
//! The tracker and the bound only ever need covariances of the form
//! `s s^H + (1/γ) I`, whose inverse and determinant have rank-one closed
//! forms. The Jacobi eigensolver is used for validation of the 2x2 pair
//! reduction in [`crate::bound`], not on the hot path.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// `Σ_k conj(a_k) b_k`.
#[inline]
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

#[inline]
pub fn norm_sq(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Covariance `s s^H + (1/γ) I` of a pilot vector under one hypothesis.
///
/// Inverse and determinant follow from the Sherman–Morrison identity and the
/// matrix determinant lemma:
///
/// ```text
/// Σ^{-1} = γ I − γ² s s^H / (1 + γ‖s‖²)
/// |Σ|    = γ^{-M} (1 + γ‖s‖²)
/// ```
#[derive(Debug, Clone)]
pub struct RankOneCovariance<'a> {
    s: &'a [Complex64],
    snr: f64,
    norm_sq: f64,
}

impl<'a> RankOneCovariance<'a> {
    pub fn new(s: &'a [Complex64], snr: f64) -> Self {
        Self {
            s,
            snr,
            norm_sq: norm_sq(s),
        }
    }

    pub fn dim(&self) -> usize {
        self.s.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// `y^H Σ^{-1} y` without forming the inverse.
    pub fn quad_inverse(&self, y: &[Complex64]) -> f64 {
        let g = self.snr;
        let proj = inner(self.s, y).norm_sqr();
        g * norm_sq(y) - g * g * proj / (1.0 + g * self.norm_sq)
    }

    /// `ln |Σ|`.
    pub fn log_det(&self) -> f64 {
        -(self.dim() as f64) * self.snr.ln() + (self.snr * self.norm_sq).ln_1p()
    }

    pub fn det(&self) -> f64 {
        self.log_det().exp()
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |i, j| {
            let mut v = self.s[i] * self.s[j].conj();
            if i == j {
                v += 1.0 / self.snr;
            }
            v
        })
    }

    pub fn inverse(&self) -> DMatrix<Complex64> {
        let m = self.dim();
        let g = self.snr;
        let scale = g * g / (1.0 + g * self.norm_sq);
        DMatrix::from_fn(m, m, |i, j| {
            let mut v = -self.s[i] * self.s[j].conj() * scale;
            if i == j {
                v += g;
            }
            v
        })
    }
}

/// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations. Eigenvalues are returned ascending with eigenvectors as the
/// matching columns of a unitary matrix.
///
/// Only the upper triangle's Hermitian part is trusted; the input is
/// symmetrised first.
pub fn hermitian_eigen(a: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "hermitian_eigen needs a square matrix");
    let mut a = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)].conj()));
    let mut v = DMatrix::<Complex64>::identity(n, n);

    let scale = a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= 1e-300 {
                    continue;
                }
                // Phase that makes the (p,q) entry real, then a real rotation.
                let e = apq / mag; // e^{iφ}
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let zeta = (app - aqq) / (2.0 * mag);
                let sign = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = -sign / (zeta.abs() + (zeta * zeta + 1.0).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let e_conj = e.conj();

                // A <- A G with G = [[c, s], [-s e^{-iφ}, c e^{-iφ}]] on (p, q).
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * c - akq * e_conj * s;
                    a[(k, q)] = akp * s + akq * e_conj * c;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c - vkq * e_conj * s;
                    v[(k, q)] = vkp * s + vkq * e_conj * c;
                }
                // A <- G^H A.
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * c - aqk * e * s;
                    a[(q, k)] = apk * s + aqk * e * c;
                }
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}
