//! Reverse preference growing.
//!
//! Starting from `x ~ p̄_T`, each step walks one grid interval back in time
//! using the `O(M)` reverse row driven by log preference ratios. With a
//! trained network the ratios are personalized:
//!
//! `ŝ = (1 + w) · s(x, t, u) − w · s(x, t, φ)`
//!
//! so `w = 0` is the plain conditional model. (A blend written as
//! `w' s_u + (1 − w') s_φ` is the same thing with `w' = 1 + w`.)
//!
//! The output is the categorical distribution of the last step, optionally
//! averaged over several independent trajectories, together with the items
//! ranked by it (descending, ties by ascending id, virtual item excluded).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fading::FadingMatrix;
use crate::process;
use crate::schedule::Schedule;
use crate::scorenet::{ScoreField, UserContext};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Guidance strength `w ≥ 0`.
    pub w: f64,
    /// Number of reverse steps `S ≤ T`; `None` uses every schedule step.
    pub steps: Option<usize>,
    /// Trajectories averaged into the final distribution.
    pub trajectories: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            w: 1.0,
            steps: None,
            trajectories: 1,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w >= 0.0) || !self.w.is_finite() {
            return Err(Error::ConfigError(format!(
                "guidance w = {} must be >= 0",
                self.w
            )));
        }
        if self.trajectories == 0 {
            return Err(Error::ConfigError("trajectories must be positive".into()));
        }
        if self.steps == Some(0) {
            return Err(Error::ConfigError("sampler steps must be positive".into()));
        }
        Ok(())
    }

    /// Schedule step indices `k_0 = 0 < k_1 < … < k_S = T`.
    pub fn grid(&self, schedule: &Schedule) -> Result<Vec<usize>> {
        let t = schedule.steps();
        let s = self.steps.unwrap_or(t);
        if s == 0 || s > t {
            return Err(Error::ConfigError(format!(
                "sampler steps {s} must be in 1..={t}"
            )));
        }
        Ok((0..=s).map(|i| (i * t + s / 2) / s).collect())
    }

    /// Generator for the user at position `index` of an evaluation list.
    pub fn user_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

/// `(1 + w) · s_user − w · s_nonpref`.
pub fn personalize(s_user: &[f64], s_nonpref: &[f64], w: f64) -> Result<Vec<f64>> {
    if s_user.len() != s_nonpref.len() {
        return Err(Error::DimensionError(format!(
            "score lengths differ: {} vs {}",
            s_user.len(),
            s_nonpref.len()
        )));
    }
    // Written as s_u + w (s_u − s_φ) so equal inputs cancel exactly.
    Ok(s_user
        .iter()
        .zip(s_nonpref)
        .map(|(u, n)| u + w * (u - n))
        .collect())
}

/// Anything that can supply `log p_t(·) − log p_t(x)` at a grid step.
pub trait RatioSource {
    fn corpus_size(&self) -> usize;
    fn ratios(&self, x: usize, t_index: usize) -> Result<Vec<f64>>;
}

/// Ratios from a trained network for one user, with guidance.
pub struct NetworkRatios<'a> {
    field: &'a ScoreField,
    user: Vec<f64>,
    nonpref: Vec<f64>,
    w: f64,
}

impl<'a> NetworkRatios<'a> {
    pub fn new(field: &'a ScoreField, ctx: &UserContext, w: f64) -> Result<Self> {
        Ok(Self {
            field,
            user: field.encode_user(ctx)?,
            nonpref: field.encode_user(&UserContext::nonpref())?,
            w,
        })
    }
}

impl RatioSource for NetworkRatios<'_> {
    fn corpus_size(&self) -> usize {
        self.field.corpus_size()
    }

    fn ratios(&self, x: usize, t_index: usize) -> Result<Vec<f64>> {
        let su = self.field.score_with_user(x, t_index, &self.user)?;
        if self.w == 0.0 {
            return Ok(su);
        }
        let sn = self.field.score_with_user(x, t_index, &self.nonpref)?;
        personalize(&su, &sn, self.w)
    }
}

/// Exact ratios of the forward marginals `p_t = α_t p_0 + (1 − α_t) E p_0`.
pub struct ExactRatios<'a> {
    fading: &'a FadingMatrix,
    schedule: &'a Schedule,
    p0: Vec<f64>,
    faded: Vec<f64>,
}

impl<'a> ExactRatios<'a> {
    pub fn new(fading: &'a FadingMatrix, schedule: &'a Schedule, p0: &[f64]) -> Result<Self> {
        let total: f64 = p0.iter().sum();
        if p0.iter().any(|p| !(*p >= 0.0)) || !(total > 0.0) {
            return Err(Error::DomainError(
                "p0 must be a nonnegative, nonzero vector".into(),
            ));
        }
        let p0: Vec<f64> = p0.iter().map(|p| p / total).collect();
        let faded = fading.apply(&p0)?;
        Ok(Self {
            fading,
            schedule,
            p0,
            faded,
        })
    }

    pub fn marginal(&self, t_index: usize) -> Vec<f64> {
        let a = self.schedule.alpha_at(t_index);
        self.p0
            .iter()
            .zip(&self.faded)
            .map(|(p, f)| a * p + (1.0 - a) * f)
            .collect()
    }
}

impl RatioSource for ExactRatios<'_> {
    fn corpus_size(&self) -> usize {
        self.fading.corpus_size()
    }

    fn ratios(&self, x: usize, t_index: usize) -> Result<Vec<f64>> {
        let p = self.marginal(t_index);
        if !(p[x] > 0.0) {
            return Err(Error::DomainError(format!("state {x} has zero marginal")));
        }
        Ok(process::exact_ratios(&p, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Final distribution over the full corpus (virtual item included).
    pub probs: Vec<f64>,
    /// Real items by descending probability.
    pub ranking: Vec<usize>,
    /// Final state of the last trajectory.
    pub x0: usize,
    /// Reverse-row entries clamped to zero, summed over all steps.
    pub clamped: usize,
    /// Reverse-row entries evaluated, for clamp rates.
    pub evaluated: usize,
}

/// Real items `0..n_items` sorted by descending score, ties by ascending id.
pub fn rank_items(scores: &[f64], n_items: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_items).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Runs the reverse chain with any ratio source.
pub fn generate_with<S: RatioSource, R: Rng + ?Sized>(
    source: &S,
    fading: &FadingMatrix,
    schedule: &Schedule,
    cfg: &SamplerConfig,
    n_items: usize,
    rng: &mut R,
) -> Result<Generation> {
    cfg.validate()?;
    fading.ensure_process_ready()?;
    let m = fading.corpus_size();
    if source.corpus_size() != m {
        return Err(Error::DimensionError(format!(
            "ratio source covers {} items, fading matrix {m}",
            source.corpus_size()
        )));
    }
    let start = fading.apply(&vec![1.0 / m as f64; m])?;
    let grid = cfg.grid(schedule)?;
    let mut probs = vec![0.0; m];
    let (mut clamped, mut evaluated, mut x) = (0, 0, 0);
    for _ in 0..cfg.trajectories {
        x = process::sample_categorical(&start, rng);
        let mut last = Vec::new();
        for pair in grid.windows(2).rev() {
            let (ks, kt) = (pair[0], pair[1]);
            let r = source.ratios(x, kt)?;
            let row = process::reverse_transition(
                x,
                schedule.alpha_at(ks),
                schedule.alpha_at(kt),
                fading,
                &r,
            )?;
            clamped += row.clamped;
            evaluated += m;
            x = process::sample_categorical(&row.probs, rng);
            last = row.probs;
        }
        for (a, b) in probs.iter_mut().zip(&last) {
            *a += b;
        }
    }
    let k = cfg.trajectories as f64;
    probs.iter_mut().for_each(|p| *p /= k);
    Ok(Generation {
        ranking: rank_items(&probs, n_items),
        probs,
        x0: x,
        clamped,
        evaluated,
    })
}

/// Grows preferences for one user with a trained network.
pub fn generate<R: Rng + ?Sized>(
    field: &ScoreField,
    ctx: &UserContext,
    cfg: &SamplerConfig,
    schedule: &Schedule,
    rng: &mut R,
) -> Result<Generation> {
    if ctx.is_nonpref {
        return Err(Error::ConfigError("generation needs a real user".into()));
    }
    let fading = FadingMatrix::rank1(field.target()?);
    let source = NetworkRatios::new(field, ctx, cfg.w)?;
    generate_with(&source, &fading, schedule, cfg, field.config().n_items, rng)
}
