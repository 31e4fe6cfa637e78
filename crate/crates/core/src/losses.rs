//! Score-entropy losses.
//!
//! The per-pair term is `l(s, r) = e^s − e^r s + e^r (r − 1)`; the loss for
//! one faded sample is `Σ_{y ≠ x_t} Q_t(x_t, y) · l(s_y, r_t(x0, x_t, y))`
//! where `Q_t(x_t, y) = β(t) E(x_t, y)`. Items `y` that cannot be reached from
//! `x0` (zero forward probability) are left out of the sum.
//!
//! [`se_loss_generic`] evaluates that sum directly and is the reference.
//! [`se_loss_closed`] evaluates the same quantity through per-setting
//! closed forms built from a handful of `O(M)` reductions; the two are
//! cross-checked in tests and by `fadegrow verify`.

use crate::error::{Error, Result};
use crate::fading::{FadingMatrix, NonPreferenceState};
use crate::process;

/// Largest |score| or |ratio| accepted by the loss terms.
pub const MAGNITUDE_LIMIT: f64 = 50.0;

/// Which non-preference state (and thus which fading matrix) is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettingKind {
    /// One-hot at the virtual item.
    PointWise,
    /// Uniform over the real items.
    PairWise,
    /// `λ/N` per real item, `1 − λ` on the virtual item, `λ = 1 − 10^{−n}`.
    Hybrid { n_lambda: u32 },
    /// `softmax(θ)` with learnable logits.
    Adaptive { virtual_item: bool },
}

impl SettingKind {
    pub fn has_virtual_item(&self) -> bool {
        match self {
            SettingKind::PointWise | SettingKind::Hybrid { .. } => true,
            SettingKind::PairWise => false,
            SettingKind::Adaptive { virtual_item } => *virtual_item,
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match self {
            SettingKind::Hybrid { n_lambda } => Some(1.0 - 10f64.powi(-(*n_lambda as i32))),
            _ => None,
        }
    }

    /// Corpus size including the virtual item when present.
    pub fn corpus_size(&self, n_items: usize) -> usize {
        n_items + usize::from(self.has_virtual_item())
    }

    /// Initial non-preference state over `n_items` real items. Adaptive
    /// settings start from uniform logits.
    pub fn initial_state(&self, n_items: usize) -> Result<NonPreferenceState> {
        match *self {
            SettingKind::PointWise => NonPreferenceState::point_wise(n_items),
            SettingKind::PairWise => NonPreferenceState::pair_wise(n_items),
            SettingKind::Hybrid { n_lambda } => {
                if n_lambda == 0 {
                    return Err(Error::ConfigError("n_lambda must be positive".into()));
                }
                NonPreferenceState::hybrid(n_items, self.lambda().unwrap_or_default())
            }
            SettingKind::Adaptive { virtual_item } => {
                let m = n_items + usize::from(virtual_item);
                NonPreferenceState::new(vec![1.0; m], virtual_item)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SettingKind::PointWise => "pointwise",
            SettingKind::PairWise => "pairwise",
            SettingKind::Hybrid { .. } => "hybrid",
            SettingKind::Adaptive { .. } => "adaptive",
        }
    }
}

/// Textual form: `pointwise`, `pairwise`, `hybrid:<n>`, `adaptive`,
/// `adaptive+virtual`.
impl std::fmt::Display for SettingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SettingKind::Hybrid { n_lambda } => write!(f, "hybrid:{n_lambda}"),
            SettingKind::Adaptive { virtual_item: true } => f.write_str("adaptive+virtual"),
            other => f.write_str(other.name()),
        }
    }
}

impl std::str::FromStr for SettingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "pointwise" => SettingKind::PointWise,
            "pairwise" => SettingKind::PairWise,
            "adaptive" => SettingKind::Adaptive {
                virtual_item: false,
            },
            "adaptive+virtual" => SettingKind::Adaptive { virtual_item: true },
            "hybrid" => SettingKind::Hybrid { n_lambda: 1 },
            _ => match s.strip_prefix("hybrid:").map(str::parse::<u32>) {
                Some(Ok(n)) if n > 0 => SettingKind::Hybrid { n_lambda: n },
                _ => return Err(Error::ConfigError(format!("unknown setting `{s}`"))),
            },
        })
    }
}

/// Reductions shared by the closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossIntermediates {
    /// `(1/N)(Σ_y e^{s_y} − 1)`
    pub mean_exp_score: f64,
    /// `(1/N) Σ_y s_y`
    pub mean_score: f64,
    /// `Σ_y μ_y s_y`
    pub weighted_score: f64,
    /// `Σ_y μ_y log μ_y`
    pub entropy_term: f64,
    /// `N α/(1 − α)`
    pub delta: f64,
    /// `α/(1 − α)`
    pub sigma: f64,
    /// `λΔ/(λΔ + N)`, zero outside the hybrid setting.
    pub lambda_term: f64,
}

impl LossIntermediates {
    /// `n_items` is the number of real items `N`; `mu` the normalized target.
    pub fn compute(
        scores: &[f64],
        x_t: usize,
        mu: &[f64],
        n_items: usize,
        alpha_t: f64,
        lambda: Option<f64>,
    ) -> Self {
        let n = n_items as f64;
        let exp_sum: f64 = scores
            .iter()
            .enumerate()
            .filter(|(y, _)| *y != x_t)
            .map(|(_, s)| s.exp())
            .sum();
        let score_sum: f64 = scores
            .iter()
            .enumerate()
            .filter(|(y, _)| *y != x_t)
            .map(|(_, s)| s)
            .sum();
        let weighted_score = scores
            .iter()
            .zip(mu)
            .enumerate()
            .filter(|(y, _)| *y != x_t)
            .map(|(_, (s, m))| s * m)
            .sum();
        let entropy_term = mu.iter().filter(|m| **m > 0.0).map(|m| m * m.ln()).sum();
        let sigma = alpha_t / (1.0 - alpha_t);
        let delta = n * sigma;
        let lambda_term = lambda.map_or(0.0, |l| l * delta / (l * delta + n));
        Self {
            mean_exp_score: exp_sum / n,
            mean_score: score_sum / n,
            weighted_score,
            entropy_term,
            delta,
            sigma,
            lambda_term,
        }
    }
}

fn check_magnitude(v: f64) -> Result<()> {
    if v.abs() > MAGNITUDE_LIMIT || v.is_nan() {
        Err(Error::MagnitudeError(v))
    } else {
        Ok(())
    }
}

/// `e^s − e^r s + e^r (r − 1)`, evaluated as `e^r (e^{s−r} − (s−r) − 1)`
/// so that it is exactly zero at `s = r` and never negative.
pub fn se_term(s: f64, r: f64) -> Result<f64> {
    check_magnitude(s)?;
    check_magnitude(r)?;
    let d = s - r;
    Ok(r.exp() * (d.exp_m1() - d))
}

/// `∂l/∂s = e^s − e^r`, as `e^r · expm1(s − r)` to keep precision near `s = r`.
pub fn se_term_grad(s: f64, r: f64) -> f64 {
    r.exp() * (s - r).exp_m1()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Soft-label BCE: `−σ(r) log σ(s) − (1 − σ(r)) log(1 − σ(s))`.
pub fn sbce_loss(s: f64, r: f64) -> Result<f64> {
    check_magnitude(s)?;
    check_magnitude(r)?;
    let pi = sigmoid(r);
    Ok(pi * softplus(-s) + (1.0 - pi) * softplus(s))
}

/// `∂sBCE/∂s = σ(s) − σ(r)`, evaluated as `−σ(s) σ(−r) expm1(r − s)`,
/// which avoids cancellation when `s ≈ r`.
pub fn sbce_grad(s: f64, r: f64) -> f64 {
    -sigmoid(s) * sigmoid(-r) * (r - s).exp_m1()
}

/// Direct evaluation of the score-entropy sum for any fading matrix.
pub fn se_loss_generic(
    x0: usize,
    x_t: usize,
    scores: &[f64],
    alpha_t: f64,
    beta_t: f64,
    fading: &FadingMatrix,
) -> Result<f64> {
    check_scores(scores, fading.corpus_size())?;
    let ratios = process::reference_ratios(x0, x_t, alpha_t, fading)?;
    let mut total = 0.0;
    for (y, (&s, &r)) in scores.iter().zip(&ratios).enumerate() {
        if y == x_t || r == f64::NEG_INFINITY {
            continue;
        }
        let rate = beta_t * fading.entry(x_t, y);
        if rate == 0.0 {
            continue;
        }
        total += rate * se_term(s, r)?;
    }
    Ok(total)
}

fn check_scores(scores: &[f64], m: usize) -> Result<()> {
    if scores.len() != m {
        return Err(Error::DimensionError(format!(
            "{} scores for corpus of {m}",
            scores.len()
        )));
    }
    for &s in scores {
        check_magnitude(s)?;
    }
    Ok(())
}

/// Closed form of the rank-1 loss for a strictly positive target `μ`.
///
/// `exp_sum = Σ_{y≠x_t} e^{s_y}`, `weighted = Σ_{y≠x_t} μ_y s_y`,
/// `entropy = Σ_y μ_y log μ_y`.
#[allow(clippy::too_many_arguments)]
fn rank1_closed(
    same: bool,
    mu_t: f64,
    mu_0: f64,
    s_0: f64,
    exp_sum: f64,
    weighted: f64,
    entropy: f64,
    sigma: f64,
    beta: f64,
) -> f64 {
    if same {
        // x_t = x0
        let k = sigma + mu_t;
        let constant = ((1.0 - mu_t) * (-k.ln() - 1.0) + entropy - mu_t * mu_t.ln()) / k;
        beta * mu_t * (exp_sum - weighted / k + constant)
    } else {
        let k = sigma + mu_0;
        let constant =
            entropy - mu_0 * mu_0.ln() + k * k.ln() - (1.0 + sigma) * (mu_t.ln() + 1.0) + mu_t;
        beta * (mu_t * exp_sum - weighted - sigma * s_0 + constant)
    }
}

fn mismatch(setting: SettingKind, why: &str) -> Error {
    Error::ConfigError(format!("{} setting: {why}", setting.name()))
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Confirms that `target` is the non-preference state `setting` describes.
pub fn check_setting(setting: SettingKind, target: &NonPreferenceState) -> Result<()> {
    if setting.has_virtual_item() != target.has_virtual_item() {
        return Err(mismatch(setting, "virtual-item flag differs from target"));
    }
    let n = target.num_items();
    let p = target.normalized();
    match setting {
        SettingKind::PointWise => {
            if p[n] != 1.0 {
                return Err(mismatch(
                    setting,
                    "target is not one-hot at the virtual item",
                ));
            }
        }
        SettingKind::PairWise => {
            if !p.iter().all(|v| close(*v, 1.0 / n as f64)) {
                return Err(mismatch(setting, "target is not uniform"));
            }
        }
        SettingKind::Hybrid { .. } => {
            let lambda = setting.lambda().unwrap_or_default();
            let real_ok = p[..n].iter().all(|v| close(*v, lambda / n as f64));
            if !real_ok || !close(p[n], 1.0 - lambda) {
                return Err(mismatch(setting, "target does not match lambda"));
            }
        }
        SettingKind::Adaptive { .. } => {
            if p.iter().any(|v| *v <= 0.0) {
                return Err(mismatch(
                    setting,
                    "softmax target must be strictly positive",
                ));
            }
        }
    }
    Ok(())
}

/// Closed-form loss for one faded sample.
pub fn se_loss_closed(
    setting: SettingKind,
    x0: usize,
    x_t: usize,
    scores: &[f64],
    alpha_t: f64,
    beta_t: f64,
    target: &NonPreferenceState,
) -> Result<f64> {
    check_setting(setting, target)?;
    let m = target.len();
    check_scores(scores, m)?;
    if x0 >= m || x_t >= m {
        return Err(Error::DimensionError(format!(
            "indices ({x0}, {x_t}) out of range for corpus {m}"
        )));
    }
    if Some(x0) == target.virtual_index() {
        return Err(mismatch(
            setting,
            "the preferred item cannot be the virtual item",
        ));
    }
    let n = target.num_items();
    let mu = target.normalized();
    let it = LossIntermediates::compute(scores, x_t, &mu, n, alpha_t, setting.lambda());
    let nf = n as f64;
    let exp_sum = it.mean_exp_score * nf;

    match setting {
        SettingKind::PointWise => {
            let virt = n;
            if x_t == x0 {
                Ok(0.0)
            } else if x_t == virt {
                let sigma = it.sigma;
                let s = scores[x0];
                Ok(beta_t * (s.exp() - sigma * s + sigma * (sigma.ln() - 1.0)))
            } else {
                Err(Error::UnreachableState { x0, x_t })
            }
        }
        SettingKind::PairWise => {
            let d = it.delta;
            if x_t == x0 {
                Ok(beta_t
                    * (it.mean_exp_score
                        - it.mean_score / (1.0 + d)
                        - (1.0 - 1.0 / nf) * ((1.0 + d).ln() + 1.0) / (1.0 + d)))
            } else {
                Ok(beta_t
                    * (it.mean_exp_score - it.mean_score - d / nf * scores[x0]
                        + ((1.0 + d) * (1.0 + d).ln() - (nf - 1.0 + d)) / nf))
            }
        }
        SettingKind::Hybrid { .. } => {
            let lambda = setting.lambda().unwrap_or_default();
            let virt = n;
            let real = lambda / nf;
            let branch = |mu_t: f64, same: bool| {
                rank1_closed(
                    same,
                    mu_t,
                    real,
                    scores[x0],
                    exp_sum,
                    it.weighted_score,
                    it.entropy_term,
                    it.sigma,
                    beta_t,
                )
            };
            Ok(if x_t == virt {
                branch(1.0 - lambda, false)
            } else if x_t == x0 {
                branch(real, true)
            } else {
                branch(real, false)
            })
        }
        SettingKind::Adaptive { .. } => Ok(rank1_closed(
            x_t == x0,
            mu[x_t],
            mu[x0],
            scores[x0],
            exp_sum,
            it.weighted_score,
            it.entropy_term,
            it.sigma,
            beta_t,
        )),
    }
}

/// Loss value with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// `∂L/∂s_y`; zero at `x_t`, whose score is pinned.
    pub d_scores: Vec<f64>,
    /// `∂L/∂θ` for the adaptive logits, when requested.
    pub d_logits: Option<Vec<f64>>,
}

/// Closed-form loss plus exact gradients in `O(M)`.
///
/// Score gradients are `Q_t(x_t, y)(e^{s_y} − e^{r_y})`. For the adaptive
/// setting, `want_logits` also differentiates through `μ = softmax(θ)`, which
/// enters both the rate row and the reference ratios.
#[allow(clippy::too_many_arguments)]
pub fn se_loss_grad(
    setting: SettingKind,
    x0: usize,
    x_t: usize,
    scores: &[f64],
    alpha_t: f64,
    beta_t: f64,
    target: &NonPreferenceState,
    want_logits: bool,
) -> Result<LossGrad> {
    let loss = se_loss_closed(setting, x0, x_t, scores, alpha_t, beta_t, target)?;
    let fading = FadingMatrix::rank1(target.clone());
    let ratios = process::reference_ratios(x0, x_t, alpha_t, &fading)?;
    let m = scores.len();
    let mut d_scores = vec![0.0; m];
    for y in 0..m {
        if y == x_t || ratios[y] == f64::NEG_INFINITY {
            continue;
        }
        let rate = beta_t * fading.entry(x_t, y);
        d_scores[y] = rate * se_term_grad(scores[y], ratios[y]);
    }
    let d_logits = match setting {
        SettingKind::Adaptive { .. } if want_logits => Some(adaptive_logit_grad(
            x0, x_t, scores, &ratios, alpha_t, beta_t, target,
        )?),
        _ => None,
    };
    Ok(LossGrad {
        loss,
        d_scores,
        d_logits,
    })
}

fn adaptive_logit_grad(
    x0: usize,
    x_t: usize,
    scores: &[f64],
    ratios: &[f64],
    alpha_t: f64,
    beta_t: f64,
    target: &NonPreferenceState,
) -> Result<Vec<f64>> {
    let mu = target.normalized();
    let m = mu.len();
    let b = 1.0 - alpha_t;
    let den = if x_t == x0 { alpha_t } else { 0.0 } + b * mu[x_t];
    let mut f = 0.0;
    let mut weighted_gap = 0.0;
    let mut d_mu = vec![0.0; m];
    for y in 0..m {
        if y == x_t {
            continue;
        }
        let (s, r) = (scores[y], ratios[y]);
        f += se_term(s, r)?;
        weighted_gap += (r - s) * r.exp();
        d_mu[y] = beta_t * mu[x_t] * (r - s) * b / den;
    }
    d_mu[x_t] = beta_t * f - beta_t * mu[x_t] * (b / den) * weighted_gap;
    let dot: f64 = d_mu.iter().zip(&mu).map(|(g, p)| g * p).sum();
    Ok(mu.iter().zip(&d_mu).map(|(p, g)| p * (g - dot)).collect())
}
