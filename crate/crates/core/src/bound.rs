//! Closed-form union bound on the tracking error probability.
//!
//! Given the prior, the sensing matrix and the SNR, the probability that the
//! MAP rule confuses hypothesis `κ` with `n` is the CDF at `δ` of the
//! quadratic form `y^H (Σ_n^{-1} − Σ_κ^{-1}) y` with `y ~ CN(0, Σ_κ)`. The
//! difference of inverses has rank at most two, so the form is
//! `λ1 E1 + λ2 E2` with independent unit exponentials and `λ1 ≥ 0 ≥ λ2`.
//!
//! # Pair eigenvalues
//!
//! With `u = s_κ`, `v = s_n`, write `Σ_n^{-1} − Σ_κ^{-1} = B C B^H` where
//! `B = [u v]` and `C = diag(a, −b)`, `a = γ²/(1+γ‖u‖²)`,
//! `b = γ²/(1+γ‖v‖²)`. The nonzero eigenvalues of the whitened form are those
//! of the 2x2 matrix `C B^H Σ_κ B`, which is similar to a Hermitian matrix.
//! Its trace and determinant reduce to
//!
//! ```text
//! tr  = γ‖u‖² − γ (γ|u^H v|² + ‖v‖²) / (1 + γ‖v‖²)
//! det = −γ² (‖u‖²‖v‖² − |u^H v|²) / (1 + γ‖v‖²)  ≤ 0
//! ```
//!
//! so only norms and one inner product are needed per pair.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::array::Codebook;
use crate::error::{invalid, Error, Result};
use crate::linalg::{hermitian_eigen, inner, norm_sq, RankOneCovariance};
use crate::tracker::{sensing_column, BeamMatrix, Belief, SensingMatrix};

/// Diagnostics for one ordered hypothesis pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTerm {
    pub kappa: usize,
    pub n: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub delta: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TepBreakdown {
    /// `Σ_κ η[κ] Σ_{n≠κ} μ_{κ,n}`; may exceed one.
    pub gamma_ub: f64,
    /// `gamma_ub` clamped into `[0, 1]`.
    pub gamma_ub_clamped: f64,
    pub terms: Vec<PairTerm>,
}

/// Extreme eigenvalues from precomputed norms and `|u^H v|²`.
#[inline]
fn pair_eigen_from_gram(nk2: f64, nn2: f64, cross2: f64, snr: f64) -> (f64, f64) {
    let g = snr;
    // Cauchy–Schwarz gap; below rounding level the columns are parallel.
    let prod = nk2 * nn2;
    let gap = nk2 * nn2 - cross2;
    let gap = if gap <= 8.0 * f64::EPSILON * prod { 0.0 } else { gap };
    let tr = g * nk2 - g * (g * cross2 + nn2) / (1.0 + g * nn2);
    let det = -g * g * gap / (1.0 + g * nn2);
    let disc = (0.25 * tr * tr - det).sqrt();
    if tr >= 0.0 {
        let l1 = 0.5 * tr + disc;
        let l2 = if l1 > 0.0 { det / l1 } else { 0.0 };
        (l1, l2.min(0.0))
    } else {
        let l2 = 0.5 * tr - disc;
        (det / l2, l2)
    }
}

/// The two extreme eigenvalues `(λ1 ≥ 0, λ2 ≤ 0)` of the whitened
/// difference `Δ_κ^{1/2} U_κ^H (Σ_n^{-1} − Σ_κ^{-1}) U_κ Δ_κ^{1/2}`; all
/// other eigenvalues are zero.
pub fn pair_eigenvalues(s_kappa: &[Complex64], s_n: &[Complex64], snr: f64) -> Result<(f64, f64)> {
    if s_kappa.len() != s_n.len() {
        return invalid("sensing columns differ in length");
    }
    if !(snr.is_finite() && snr > 0.0) {
        return invalid(format!("snr must be positive and finite, got {snr}"));
    }
    Ok(pair_eigen_from_gram(
        norm_sq(s_kappa),
        norm_sq(s_n),
        inner(s_kappa, s_n).norm_sqr(),
        snr,
    ))
}

/// All `M` eigenvalues (ascending) of the whitened difference, built by the
/// dense transform chain: eigendecompose `Σ_κ = U Δ U^H`, form
/// `Δ^{1/2} U^H (Σ_n^{-1} − Σ_κ^{-1}) U Δ^{1/2}` and diagonalize it with the
/// Jacobi solver. Used to validate [`pair_eigenvalues`].
pub fn pair_eigenvalues_dense(s_kappa: &[Complex64], s_n: &[Complex64], snr: f64) -> Result<Vec<f64>> {
    if s_kappa.len() != s_n.len() {
        return invalid("sensing columns differ in length");
    }
    let cov_k = RankOneCovariance::new(s_kappa, snr);
    let cov_n = RankOneCovariance::new(s_n, snr);
    let diff = cov_n.inverse() - cov_k.inverse();
    let (d, u) = hermitian_eigen(&cov_k.matrix());
    let m = s_kappa.len();
    let half = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            Complex64::new(d[i].max(0.0).sqrt(), 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let k = &half * u.adjoint() * diff * &u * &half;
    Ok(hermitian_eigen(&k).0)
}

/// `|λ| ≤ 1e-10 · max(1, |λ1|, |λ2|)` counts as zero when picking a case.
fn snap(l1: f64, l2: f64) -> (f64, f64) {
    let tol = 1e-10 * 1f64.max(l1.abs()).max(l2.abs());
    let z = |x: f64| if x.abs() <= tol { 0.0 } else { x };
    (z(l1), z(l2))
}

/// `P(λ1 E1 + λ2 E2 ≤ δ)` for independent unit exponentials `E1, E2`.
pub fn mu_pair(lambda1: f64, lambda2: f64, delta: f64) -> Result<f64> {
    if lambda1.is_nan() || lambda2.is_nan() || delta.is_nan() {
        return invalid("mu_pair arguments must not be NaN");
    }
    if lambda1 < 0.0 || lambda2 > 0.0 {
        return invalid(format!(
            "need lambda1 >= 0 >= lambda2, got ({lambda1}, {lambda2})"
        ));
    }
    Ok(mu_unchecked(lambda1, lambda2, delta))
}

#[inline]
fn mu_unchecked(lambda1: f64, lambda2: f64, delta: f64) -> f64 {
    let (l1, l2) = snap(lambda1, lambda2);
    let mu = match (l1 > 0.0, l2 < 0.0) {
        (true, true) => {
            if delta <= 0.0 {
                l2 / (l2 - l1) * (-delta / l2).exp()
            } else {
                1.0 - l1 / (l1 - l2) * (-delta / l1).exp()
            }
        }
        (true, false) => {
            if delta > 0.0 {
                1.0 - (-delta / l1).exp()
            } else {
                0.0
            }
        }
        (false, true) => {
            if delta < 0.0 {
                (-delta / l2).exp()
            } else {
                1.0
            }
        }
        // The form is identically zero, so P(0 ≤ δ) is 1 at δ = 0.
        (false, false) => {
            if delta < 0.0 {
                0.0
            } else {
                1.0
            }
        }
    };
    mu.clamp(0.0, 1.0)
}

/// `δ = ln(η[n] |Σ_κ|) − ln(η[κ] |Σ_n|)`, with `+∞` when `η[κ] = 0` and
/// `−∞` when only `η[n] = 0`.
pub fn delta_threshold(prior_kappa: f64, prior_n: f64, det_kappa: f64, det_n: f64) -> Result<f64> {
    if !(det_kappa > 0.0 && det_n > 0.0) {
        return invalid("covariance determinants must be positive");
    }
    if prior_kappa < 0.0 || prior_n < 0.0 {
        return invalid("priors must be nonnegative");
    }
    if prior_kappa == 0.0 {
        return Ok(f64::INFINITY);
    }
    if prior_n == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(prior_n.ln() + det_kappa.ln() - prior_kappa.ln() - det_n.ln())
}

/// Per-hypothesis quantities shared by all pairs.
struct Hyp {
    index: usize,
    prior: f64,
    norm_sq: f64,
    // ln η − ln|Σ|
    log_weight: f64,
}

fn hypotheses(prior: &Belief, columns: &[Complex64], m: usize, support: &[usize], snr: f64) -> Vec<Hyp> {
    support
        .iter()
        .enumerate()
        .map(|(slot, &index)| {
            let col = &columns[slot * m..(slot + 1) * m];
            let cov = RankOneCovariance::new(col, snr);
            let p = prior.probs()[index];
            Hyp {
                index,
                prior: p,
                norm_sq: cov.norm_sq(),
                log_weight: p.ln() - cov.log_det(),
            }
        })
        .collect()
}

/// Bound over the prior's support. `columns` holds the sensing column of
/// each support index, in order. Pairs whose competitor has zero prior give
/// `δ = −∞` and contribute nothing in every case, so they are not visited.
fn bound_over_support(
    prior: &Belief,
    columns: &[Complex64],
    m: usize,
    support: &[usize],
    snr: f64,
    mut visit: Option<&mut Vec<PairTerm>>,
) -> f64 {
    let hyps = hypotheses(prior, columns, m, support, snr);
    let mut total = 0.0;
    for (a, hk) in hyps.iter().enumerate() {
        let uk = &columns[a * m..(a + 1) * m];
        let mut inner_sum = 0.0;
        for (b, hn) in hyps.iter().enumerate() {
            if a == b {
                continue;
            }
            let vn = &columns[b * m..(b + 1) * m];
            let cross2 = inner(uk, vn).norm_sqr();
            let (l1, l2) = pair_eigen_from_gram(hk.norm_sq, hn.norm_sq, cross2, snr);
            let delta = hn.log_weight - hk.log_weight;
            let mu = mu_unchecked(l1, l2, delta);
            inner_sum += mu;
            if let Some(terms) = visit.as_deref_mut() {
                terms.push(PairTerm {
                    kappa: hk.index,
                    n: hn.index,
                    lambda1: l1,
                    lambda2: l2,
                    delta,
                    mu,
                });
            }
        }
        total += hk.prior * inner_sum;
    }
    total
}

fn support_of(prior: &Belief) -> Vec<usize> {
    prior.support().collect()
}

fn gather_columns(sensing: &SensingMatrix, support: &[usize]) -> Vec<Complex64> {
    support
        .iter()
        .flat_map(|&i| sensing.column(i).iter().copied())
        .collect()
}

fn check_snr(snr: f64) -> Result<()> {
    if snr.is_finite() && snr > 0.0 {
        Ok(())
    } else {
        invalid(format!("snr must be positive and finite, got {snr}"))
    }
}

/// Union bound with the full list of pair terms (competitors with zero
/// prior are listed with `δ = −∞, μ = 0`).
pub fn tep_upper_bound(prior: &Belief, sensing: &SensingMatrix, snr: f64) -> Result<TepBreakdown> {
    check_snr(snr)?;
    if prior.len() != sensing.n_points() {
        return invalid("prior and sensing matrix disagree on the grid size");
    }
    let support = support_of(prior);
    let m = sensing.n_beams();
    let columns = gather_columns(sensing, &support);
    let mut terms = Vec::new();
    let gamma_ub = bound_over_support(prior, &columns, m, &support, snr, Some(&mut terms));
    for &k in &support {
        for n in 0..prior.len() {
            if n != k && prior.probs()[n] == 0.0 {
                let (l1, l2) = pair_eigen_from_gram(
                    norm_sq(sensing.column(k)),
                    norm_sq(sensing.column(n)),
                    inner(sensing.column(k), sensing.column(n)).norm_sqr(),
                    snr,
                );
                terms.push(PairTerm {
                    kappa: k,
                    n,
                    lambda1: l1,
                    lambda2: l2,
                    delta: f64::NEG_INFINITY,
                    mu: 0.0,
                });
            }
        }
    }
    terms.sort_by_key(|t| (t.kappa, t.n));
    Ok(TepBreakdown {
        gamma_ub,
        gamma_ub_clamped: gamma_ub.clamp(0.0, 1.0),
        terms,
    })
}

/// Union bound value only.
pub fn tep_upper_bound_value(prior: &Belief, sensing: &SensingMatrix, snr: f64) -> Result<f64> {
    check_snr(snr)?;
    if prior.len() != sensing.n_points() {
        return invalid("prior and sensing matrix disagree on the grid size");
    }
    let support = support_of(prior);
    let columns = gather_columns(sensing, &support);
    Ok(bound_over_support(prior, &columns, sensing.n_beams(), &support, snr, None))
}

/// The union bound as a function of the training beams for a fixed prior,
/// codebook and SNR. Only sensing columns on the prior's support are formed.
#[derive(Debug, Clone)]
pub struct BoundObjective<'a> {
    prior: Belief,
    codebook: &'a Codebook,
    snr: f64,
    support: Vec<usize>,
}

impl<'a> BoundObjective<'a> {
    pub fn new(prior: Belief, codebook: &'a Codebook, snr: f64) -> Result<Self> {
        check_snr(snr)?;
        if prior.len() != codebook.n_points() {
            return invalid("prior and codebook disagree on the grid size");
        }
        let support = support_of(&prior);
        if support.is_empty() {
            return Err(Error::DegenerateBelief);
        }
        Ok(Self {
            prior,
            codebook,
            snr,
            support,
        })
    }

    pub fn prior(&self) -> &Belief {
        &self.prior
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn codebook(&self) -> &Codebook {
        self.codebook
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn evaluate(&self, beams: &BeamMatrix) -> f64 {
        debug_assert_eq!(beams.n_tx(), self.codebook.n_tx());
        let m = beams.n_beams();
        let mut columns = vec![Complex64::new(0.0, 0.0); m * self.support.len()];
        for (slot, &i) in self.support.iter().enumerate() {
            sensing_column(beams, self.codebook.column(i), &mut columns[slot * m..(slot + 1) * m]);
        }
        bound_over_support(&self.prior, &columns, m, &self.support, self.snr, None)
    }

    /// Evaluates with sensing columns supplied directly (`columns[slot]` is
    /// the length-`m` column of `support()[slot]`).
    pub fn evaluate_columns(&self, columns: &[Complex64], m: usize) -> f64 {
        bound_over_support(&self.prior, columns, m, &self.support, self.snr, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identical_columns_give_zero_eigenvalues() {
        let s = [c(0.3, -1.2), c(2.0, 0.5)];
        let (l1, l2) = pair_eigenvalues(&s, &s, 10.0).unwrap();
        assert_abs_diff_eq!(l1, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l2, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_equal_norm_columns() {
        // Whitened difference is diag(γa, 1/(1+γa) − 1) with a = ‖s‖².
        let k = 2.5;
        let g = 4.0;
        let a = k * k;
        let (l1, l2) = pair_eigenvalues(&[c(k, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(k, 0.0)], g).unwrap();
        assert_abs_diff_eq!(l1, g * a, epsilon = 1e-12);
        assert_abs_diff_eq!(l2, -g * a / (1.0 + g * a), epsilon = 1e-12);
    }

    #[test]
    fn zero_competitor_column() {
        let u = [c(1.0, 1.0), c(0.5, 0.0)];
        let g = 3.0;
        let (l1, l2) = pair_eigenvalues(&u, &[c(0.0, 0.0), c(0.0, 0.0)], g).unwrap();
        assert_abs_diff_eq!(l1, g * norm_sq(&u), epsilon = 1e-12);
        assert_eq!(l2, 0.0);
    }

    #[test]
    fn pair_eigenvalue_errors() {
        assert!(pair_eigenvalues(&[c(1.0, 0.0)], &[c(1.0, 0.0)], 0.0).is_err());
        assert!(pair_eigenvalues(&[c(1.0, 0.0)], &[c(1.0, 0.0)], -1.0).is_err());
        assert!(pair_eigenvalues(&[c(1.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)], 1.0).is_err());
    }

    #[test]
    fn mu_examples() {
        assert_abs_diff_eq!(mu_pair(1.0, -1.0, 0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(mu_pair(2.0, 0.0, 2.0 * 2f64.ln()).unwrap(), 0.5, epsilon = 1e-15);
        assert!(mu_pair(-1.0, -1.0, 0.0).is_err());
        assert!(mu_pair(1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn mu_case_boundaries() {
        // Case 2
        assert_eq!(mu_pair(1.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(mu_pair(1.0, 0.0, -3.0).unwrap(), 0.0);
        // Case 3
        assert_eq!(mu_pair(0.0, -1.0, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(mu_pair(0.0, -2.0, -1.0).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        // Case 4
        assert_eq!(mu_pair(0.0, 0.0, -1e-9).unwrap(), 0.0);
        assert_eq!(mu_pair(0.0, 0.0, 0.0).unwrap(), 1.0);
        assert_eq!(mu_pair(0.0, 0.0, 2.0).unwrap(), 1.0);
        // Infinite thresholds
        for (l1, l2) in [(1.0, -1.0), (1.0, 0.0), (0.0, -1.0), (0.0, 0.0)] {
            assert_eq!(mu_pair(l1, l2, f64::NEG_INFINITY).unwrap(), 0.0);
            assert_eq!(mu_pair(l1, l2, f64::INFINITY).unwrap(), 1.0);
        }
    }

    #[test]
    fn near_zero_eigenvalues_snap_to_cases() {
        // 1e-12 relative to λ1 = 5 is below the dispatch threshold: Case 2.
        assert_eq!(mu_pair(5.0, -1e-12, -0.1).unwrap(), 0.0);
        // -1e-6 is a genuine Case 1 eigenvalue.
        assert!(mu_pair(1.0, -1e-6, -0.1).unwrap() >= 0.0);
    }

    #[test]
    fn case_one_tends_to_case_two() {
        let l1 = 1.3;
        for delta in [-2.0, -0.5, 0.25, 1.0, 4.0] {
            let near = mu_pair(l1, -1e-6, delta).unwrap();
            let limit = mu_pair(l1, 0.0, delta).unwrap();
            assert!((near - limit).abs() < 1e-4, "delta {delta}: {near} vs {limit}");
        }
    }

    #[test]
    fn mu_is_monotone_in_delta() {
        for (l1, l2) in [(1.7, -0.4), (0.2, -3.0), (2.0, 0.0), (0.0, -0.7)] {
            let mut last = 0.0;
            for i in -400..=400 {
                let v = mu_pair(l1, l2, i as f64 * 0.05).unwrap();
                assert!(v >= last - 1e-15);
                last = v;
            }
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_threshold(0.2, 0.2, 3.0, 3.0).unwrap(), 0.0);
        let d = delta_threshold(0.4, 0.0, 1.0, 2.0).unwrap();
        assert_eq!(d, f64::NEG_INFINITY);
        assert_eq!(mu_pair(1.0, -1.0, d).unwrap(), 0.0);
        assert_eq!(delta_threshold(0.0, 0.4, 1.0, 2.0).unwrap(), f64::INFINITY);
        assert_abs_diff_eq!(
            delta_threshold(0.3, 0.1, 2.0, 1.0).unwrap(),
            (2.0f64 / 3.0).ln(),
            epsilon = 1e-15
        );
        assert!(delta_threshold(0.3, 0.1, 0.0, 1.0).is_err());
        assert!(delta_threshold(0.3, 0.1, 1.0, -1.0).is_err());
    }

    #[test]
    fn identical_columns_uniform_prior_bound_is_one() {
        let s = SensingMatrix::from_matrix(DMatrix::from_column_slice(
            2,
            2,
            &[c(1.0, 0.5), c(-0.2, 0.1), c(1.0, 0.5), c(-0.2, 0.1)],
        ));
        let prior = Belief::uniform(2);
        let b = tep_upper_bound(&prior, &s, 10.0).unwrap();
        assert_abs_diff_eq!(b.gamma_ub, 1.0, epsilon = 1e-15);
        assert_eq!(b.terms.len(), 2);
    }

    #[test]
    fn point_mass_prior_has_zero_bound() {
        let s = SensingMatrix::from_matrix(DMatrix::from_fn(2, 5, |i, j| c((i + j) as f64, 1.0)));
        let prior = Belief::point_mass(5, 2).unwrap();
        let b = tep_upper_bound(&prior, &s, 10.0).unwrap();
        assert_eq!(b.gamma_ub, 0.0);
        assert_eq!(b.terms.len(), 4);
        assert!(b.terms.iter().all(|t| t.kappa == 2 && t.mu == 0.0));
    }
}
