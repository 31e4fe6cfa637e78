//! Transition algebra of the fading process and its reverse.
//!
//! With an idempotent fading matrix `E` and retention `α`, the forward kernel
//! from time `s` to `t ≥ s` is `P_{t|s} = ρ I + (1 − ρ) E` with `ρ = α_t/α_s`.
//! Its inverse has the same shape with `ρ` replaced by `1/ρ`, and the
//! generator is `Q_t = β(t) (E − I)`. Everything here reads `E` through
//! [`FadingMatrix`] accessors, so rank-1 and rank-r matrices are handled
//! alike and no `M × M` array is ever formed outside the `debug_*` oracles.

use rand::Rng;

use crate::dense::{self, Dense};
use crate::error::{Error, Result};
use crate::fading::FadingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// `P_{t|s}` or its inverse in structured form.
#[derive(Debug, Clone, Copy)]
pub struct TransitionMatrix<'a> {
    alpha_ratio: f64,
    fading: &'a FadingMatrix,
    direction: Direction,
}

impl<'a> TransitionMatrix<'a> {
    /// `α_t / α_s`, in `(0, 1]`.
    pub fn alpha_ratio(&self) -> f64 {
        self.alpha_ratio
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Weight on the identity part.
    pub fn diagonal_weight(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.alpha_ratio,
            Direction::Inverse => 1.0 / self.alpha_ratio,
        }
    }

    /// Weight on the `E` part.
    pub fn fading_weight(&self) -> f64 {
        let c = self.diagonal_weight();
        if cfg!(feature = "fault-injection") && self.direction == Direction::Forward {
            c - 1.0
        } else {
            1.0 - c
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let id = if i == j { self.diagonal_weight() } else { 0.0 };
        id + self.fading_weight() * self.fading.entry(i, j)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let ev = self.fading.apply(v)?;
        let (c, f) = (self.diagonal_weight(), self.fading_weight());
        Ok(v.iter().zip(ev).map(|(x, e)| c * x + f * e).collect())
    }

    pub fn debug_dense(&self) -> Result<Dense> {
        let e = self.fading.debug_dense()?;
        let m = e.len();
        Ok(dense::scale_add(
            self.diagonal_weight(),
            &dense::identity(m),
            self.fading_weight(),
            &e,
        ))
    }
}

fn check_alphas(alpha_s: f64, alpha_t: f64) -> Result<()> {
    if !(alpha_t > 0.0 && alpha_s <= 1.0 && alpha_s.is_finite() && alpha_t.is_finite()) {
        return Err(Error::DomainError(format!(
            "retention values must lie in (0, 1], got alpha_s={alpha_s}, alpha_t={alpha_t}"
        )));
    }
    if alpha_t > alpha_s {
        return Err(Error::OrderingError { alpha_s, alpha_t });
    }
    Ok(())
}

/// `P_{t|s}` for `0 < α_t ≤ α_s ≤ 1`.
pub fn forward_transition(
    fading: &FadingMatrix,
    alpha_s: f64,
    alpha_t: f64,
) -> Result<TransitionMatrix<'_>> {
    check_alphas(alpha_s, alpha_t)?;
    Ok(TransitionMatrix {
        alpha_ratio: alpha_t / alpha_s,
        fading,
        direction: Direction::Forward,
    })
}

/// `P_{t|s}⁻¹ = (α_s/α_t) I + (1 − α_s/α_t) E`.
pub fn inverse_transition(
    fading: &FadingMatrix,
    alpha_s: f64,
    alpha_t: f64,
) -> Result<TransitionMatrix<'_>> {
    check_alphas(alpha_s, alpha_t)?;
    Ok(TransitionMatrix {
        alpha_ratio: alpha_t / alpha_s,
        fading,
        direction: Direction::Inverse,
    })
}

/// `Q_t = β(t) (E − I)`.
#[derive(Debug, Clone, Copy)]
pub struct RateMatrix<'a> {
    beta_t: f64,
    fading: &'a FadingMatrix,
}

impl<'a> RateMatrix<'a> {
    pub fn beta(&self) -> f64 {
        self.beta_t
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let id = if i == j { 1.0 } else { 0.0 };
        self.beta_t * (self.fading.entry(i, j) - id)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let ev = self.fading.apply(v)?;
        Ok(v.iter()
            .zip(ev)
            .map(|(x, e)| self.beta_t * (e - x))
            .collect())
    }

    pub fn debug_dense(&self) -> Result<Dense> {
        let e = self.fading.debug_dense()?;
        let m = e.len();
        Ok(dense::scale_add(
            self.beta_t,
            &e,
            -self.beta_t,
            &dense::identity(m),
        ))
    }
}

pub fn rate_matrix(fading: &FadingMatrix, beta_t: f64) -> Result<RateMatrix<'_>> {
    if !(beta_t > 0.0 && beta_t.is_finite()) {
        return Err(Error::DomainError(format!(
            "rate must be positive, got {beta_t}"
        )));
    }
    Ok(RateMatrix { beta_t, fading })
}

/// Draws `x_t`: keeps `x0` with probability `α_t`, otherwise replaces it
/// with a draw from column `x0` of `E`.
pub fn sample_forward<R: Rng + ?Sized>(
    x0: usize,
    alpha_t: f64,
    fading: &FadingMatrix,
    rng: &mut R,
) -> Result<usize> {
    let m = fading.corpus_size();
    if x0 >= m {
        return Err(Error::DimensionError(format!("x0 = {x0} >= corpus {m}")));
    }
    if !(0.0..=1.0).contains(&alpha_t) {
        return Err(Error::DomainError(format!(
            "alpha_t = {alpha_t} outside [0, 1]"
        )));
    }
    if rng.gen::<f64>() < alpha_t {
        return Ok(x0);
    }
    let col = fading.column(x0)?;
    Ok(sample_categorical(&col, rng))
}

/// Inverse-CDF draw from nonnegative weights (need not be normalized).
pub fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// `p_{t|0}(y | x0) = α δ_{x0}(y) + (1 − α) E(y, x0)`.
#[inline]
pub fn forward_prob(x0: usize, y: usize, alpha_t: f64, fading: &FadingMatrix) -> f64 {
    let keep = if y == x0 { alpha_t } else { 0.0 };
    keep + (1.0 - alpha_t) * fading.entry(y, x0)
}

/// Reference ratio `log p_{t|0}(y|x0) − log p_{t|0}(x_t|x0)`.
///
/// Returns `-inf` when `y` itself is unreachable from `x0`.
pub fn reference_ratio(
    x0: usize,
    x_t: usize,
    y: usize,
    alpha_t: f64,
    fading: &FadingMatrix,
) -> Result<f64> {
    let m = fading.corpus_size();
    if x0 >= m || x_t >= m || y >= m {
        return Err(Error::DimensionError(format!(
            "indices ({x0}, {x_t}, {y}) out of range for corpus {m}"
        )));
    }
    let den = forward_prob(x0, x_t, alpha_t, fading);
    if den <= 0.0 {
        return Err(Error::UnreachableState { x0, x_t });
    }
    if y == x_t {
        return Ok(0.0);
    }
    Ok((forward_prob(x0, y, alpha_t, fading) / den).ln())
}

/// All reference ratios for a given `(x0, x_t)` in `O(M)`.
pub fn reference_ratios(
    x0: usize,
    x_t: usize,
    alpha_t: f64,
    fading: &FadingMatrix,
) -> Result<Vec<f64>> {
    let m = fading.corpus_size();
    if x0 >= m || x_t >= m {
        return Err(Error::DimensionError(format!(
            "indices ({x0}, {x_t}) out of range for corpus {m}"
        )));
    }
    let col = fading.column(x0)?;
    let p = |y: usize| {
        let keep = if y == x0 { alpha_t } else { 0.0 };
        keep + (1.0 - alpha_t) * col[y]
    };
    let den = p(x_t);
    if den <= 0.0 {
        return Err(Error::UnreachableState { x0, x_t });
    }
    Ok((0..m)
        .map(|y| if y == x_t { 0.0 } else { (p(y) / den).ln() })
        .collect())
}

/// One reverse step `p_{s|t}(· | x_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseRow {
    pub probs: Vec<f64>,
    /// Entries that came out negative and were clamped to zero.
    pub clamped: usize,
    /// Sum of the unclamped vector. Equals 1 when the ratios are exact.
    pub raw_sum: f64,
}

/// Reverse transition from `x_t` at `α_t` back to `α_s ≥ α_t`, driven by the
/// log-ratios `ratios[z] ≈ log p_t(z) − log p_t(x_t)`.
///
/// Uses the factorization
/// `val(y) = p_{t|s}(x_t|y) · [(α_s/α_t) e^{r_y} + (1 − α_s/α_t) (E e^{r})(y)]`,
/// which is `O(M)`. Negative entries (only possible with inexact ratios) are
/// clamped to zero and the row renormalized.
pub fn reverse_transition(
    x_t: usize,
    alpha_s: f64,
    alpha_t: f64,
    fading: &FadingMatrix,
    ratios: &[f64],
) -> Result<ReverseRow> {
    check_alphas(alpha_s, alpha_t)?;
    let m = fading.corpus_size();
    if ratios.len() != m || x_t >= m {
        return Err(Error::DimensionError(format!(
            "ratios of length {} / state {x_t} against corpus {m}",
            ratios.len()
        )));
    }
    if ratios.iter().any(|r| r.is_nan() || *r == f64::INFINITY) {
        return Err(Error::NumericalError("non-finite preference ratio".into()));
    }
    let shift = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = ratios.iter().map(|r| (r - shift).exp()).collect();
    let mixed = fading.apply(&exps)?;
    let rho = alpha_t / alpha_s;
    let inv = alpha_s / alpha_t;
    let mut probs = Vec::with_capacity(m);
    for y in 0..m {
        let keep = if y == x_t { rho } else { 0.0 };
        let fwd = keep + (1.0 - rho) * fading.entry(x_t, y);
        probs.push(fwd * (inv * exps[y] + (1.0 - inv) * mixed[y]));
    }
    let raw_sum = probs.iter().sum::<f64>() * shift.exp();
    let mut clamped = 0;
    for p in probs.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
            clamped += 1;
        }
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateReverse);
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    Ok(ReverseRow {
        probs,
        clamped,
        raw_sum,
    })
}

/// [`reverse_transition`] with exact ratios, provided as an oracle entry point.
pub fn reverse_transition_exact(
    x_t: usize,
    alpha_s: f64,
    alpha_t: f64,
    fading: &FadingMatrix,
    true_ratios: &[f64],
) -> Result<ReverseRow> {
    reverse_transition(x_t, alpha_s, alpha_t, fading, true_ratios)
}

/// Exact log-ratios `log p(z) − log p(x)` of a strictly positive marginal.
pub fn exact_ratios(p: &[f64], x: usize) -> Vec<f64> {
    let lx = p[x].ln();
    p.iter().map(|pz| pz.ln() - lx).collect()
}

/// Dense reverse kernel `P_{s|t} = (P_{t|s}⁻¹ · [p_t (1/p_t)ᵀ]) ⊙ P_{t|s}ᵀ`.
/// Verification only.
pub fn debug_reverse_dense(
    fading: &FadingMatrix,
    alpha_s: f64,
    alpha_t: f64,
    p_t: &[f64],
) -> Result<Dense> {
    let fwd = forward_transition(fading, alpha_s, alpha_t)?.debug_dense()?;
    let inv = inverse_transition(fading, alpha_s, alpha_t)?.debug_dense()?;
    if p_t.iter().any(|p| *p <= 0.0) {
        return Err(Error::DomainError("p_t must be strictly positive".into()));
    }
    let ratio: Dense = p_t
        .iter()
        .map(|pi| p_t.iter().map(|pj| pi / pj).collect())
        .collect();
    let left = dense::matmul(&inv, &ratio);
    let fwd_t = dense::transpose(&fwd);
    Ok(left
        .iter()
        .zip(&fwd_t)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).collect())
        .collect())
}

/// Dense reverse generator
/// `R_s = Q_sᵀ ⊙ [p_s (1/p_s)ᵀ] − (Q_s · [p_s (1/p_s)ᵀ]) ⊙ I`.
///
/// Off-diagonal `R(i, j) = Q(j, i) p_i / p_j` is the rate of jumping from `j`
/// to `i` while the reverse chain runs toward smaller times, so
/// `∂P_{s|t}/∂s = −R_s P_{s|t}`.
pub fn reverse_rate_exact(beta_s: f64, fading: &FadingMatrix, p_s: &[f64]) -> Result<Dense> {
    if p_s.len() != fading.corpus_size() {
        return Err(Error::DimensionError("p_s length".into()));
    }
    if p_s.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::DomainError("p_s must be strictly positive".into()));
    }
    let q = rate_matrix(fading, beta_s)?.debug_dense()?;
    let m = p_s.len();
    let mut r = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            r[i][j] = q[j][i] * p_s[i] / p_s[j];
        }
    }
    for j in 0..m {
        let qm: f64 = (0..m).map(|k| q[j][k] * p_s[k] / p_s[j]).sum();
        r[j][j] -= qm;
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::NonPreferenceState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uniform(m: usize) -> FadingMatrix {
        FadingMatrix::rank1(NonPreferenceState::pair_wise(m).unwrap())
    }

    #[test]
    fn equal_alphas_are_identity() {
        let e = uniform(5);
        let v = [0.1, 0.4, 0.2, 0.2, 0.1];
        assert_eq!(
            forward_transition(&e, 0.7, 0.7).unwrap().apply(&v).unwrap(),
            v
        );
        assert_eq!(
            inverse_transition(&e, 0.7, 0.7).unwrap().apply(&v).unwrap(),
            v
        );
    }

    #[test]
    fn ordering_is_enforced() {
        let e = uniform(3);
        assert!(matches!(
            forward_transition(&e, 0.3, 0.5),
            Err(Error::OrderingError { .. })
        ));
        assert!(matches!(rate_matrix(&e, 0.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn inverse_off_diagonals_are_nonpositive() {
        let e = uniform(4);
        let inv = inverse_transition(&e, 0.8, 0.3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(inv.entry(i, j) <= 0.0);
                }
            }
        }
    }

    #[test]
    fn pushes_to_target_as_alpha_vanishes() {
        let target = NonPreferenceState::new(vec![1.0, 2.0, 3.0, 4.0], false).unwrap();
        let e = FadingMatrix::rank1(target.clone());
        let v = [0.7, 0.1, 0.1, 0.1];
        let out = forward_transition(&e, 1.0, 1e-6)
            .unwrap()
            .apply(&v)
            .unwrap();
        let l1: f64 = out
            .iter()
            .zip(target.normalized())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(l1 < 1e-5);
    }

    #[test]
    fn degenerate_identity_fading_has_zero_rate() {
        let m = 4;
        let clusters: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
        let targets: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let e = FadingMatrix::rank_r(m, &clusters, &targets).unwrap();
        let q = rate_matrix(&e, 2.0).unwrap().debug_dense().unwrap();
        assert!(q.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn sample_forward_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = uniform(6);
        for _ in 0..100 {
            assert_eq!(sample_forward(3, 1.0, &e, &mut rng).unwrap(), 3);
        }
        let pw = FadingMatrix::rank1(NonPreferenceState::point_wise(5).unwrap());
        for _ in 0..100 {
            assert_eq!(sample_forward(2, 0.0, &pw, &mut rng).unwrap(), 5);
        }
    }

    #[test]
    fn sample_forward_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let e = uniform(4);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_forward(1, 0.5, &e, &mut rng).unwrap() == 1)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.625).abs() < 0.01, "{freq}");
    }

    #[test]
    fn reference_ratio_examples() {
        let pw = FadingMatrix::rank1(NonPreferenceState::point_wise(4).unwrap());
        let r = reference_ratio(1, 4, 1, 0.25, &pw).unwrap();
        assert!((r - (0.25f64 / 0.75).ln()).abs() < 1e-15);
        assert!((r + 1.098612).abs() < 1e-6);
        assert_eq!(reference_ratio(1, 4, 4, 0.25, &pw).unwrap(), 0.0);
        assert_eq!(
            reference_ratio(1, 2, 1, 0.25, &pw),
            Err(Error::UnreachableState { x0: 1, x_t: 2 })
        );

        let e = uniform(4);
        let r = reference_ratio(0, 2, 0, 0.5, &e).unwrap();
        assert!((r - 5f64.ln()).abs() < 1e-12);
        assert!((r - 1.609438).abs() < 1e-6);
    }

    #[test]
    fn reference_ratios_agree_with_scalar() {
        let e = FadingMatrix::rank1(NonPreferenceState::hybrid(5, 0.9).unwrap());
        for (x0, xt) in [(0, 0), (0, 5), (2, 3)] {
            let all = reference_ratios(x0, xt, 0.4, &e).unwrap();
            for (y, r) in all.iter().enumerate() {
                let s = reference_ratio(x0, xt, y, 0.4, &e).unwrap();
                assert!((r - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reverse_with_equal_alphas_is_one_hot() {
        let e = uniform(5);
        let p = [0.1, 0.3, 0.2, 0.25, 0.15];
        let row = reverse_transition_exact(2, 0.5, 0.5, &e, &exact_ratios(&p, 2)).unwrap();
        assert_eq!(row.probs, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn inexact_ratios_are_clamped_onto_the_simplex() {
        let e = uniform(3);
        let row = reverse_transition(0, 0.9, 0.1, &e, &[0.0, 30.0, 30.0]).unwrap();
        assert!(row.clamped > 0);
        assert!(row.probs.iter().all(|p| *p >= 0.0));
        assert!((row.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let err = reverse_transition(0, 0.9, 0.1, &e, &[0.0, f64::NAN, 0.0]);
        assert!(matches!(err, Err(Error::NumericalError(_))));
    }
}
