//! Numeric property suites behind `fadegrow verify`.
//!
//! Each suite draws random instances from a fixed seed, compares the
//! structured `O(M)` code paths against dense oracles (or finite
//! differences), and reports the largest error seen against its tolerance.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dense::{self, Dense};
use crate::error::Result;
use crate::fading::{FadingMatrix, NonPreferenceState};
use crate::losses::{self, SettingKind};
use crate::process;
use crate::sampler::{self, ExactRatios, SamplerConfig};
use crate::schedule::Schedule;
use crate::scorenet::{Example, ModelConfig, ScoreField, UserContext};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub claim: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub seconds: f64,
    /// Set when the suite could not run to completion.
    pub failure: Option<String>,
}

impl SuiteResult {
    /// One-line report. Timing is left out so the text is reproducible.
    pub fn line(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!(
            "{status} {:<22} max_err={:.3e} tol={:.1e}  {}",
            self.name, self.max_error, self.tolerance, self.claim
        );
        if let Some(f) = &self.failure {
            s.push_str(&format!(" [error: {f}]"));
        }
        s
    }
}

type SuiteFn = fn(u64) -> Result<f64>;

struct Suite {
    name: &'static str,
    claim: &'static str,
    tolerance: f64,
    run: SuiteFn,
}

const SUITES: &[Suite] = &[
    Suite {
        name: "fading-idempotence",
        claim: "E^2 = E and unit column sums (rank-1 and rank-r)",
        tolerance: 1e-12,
        run: fading_idempotence,
    },
    Suite {
        name: "fading-apply",
        claim: "structured E*v equals dense E*v",
        tolerance: 1e-12,
        run: fading_apply,
    },
    Suite {
        name: "rank-r-decomposition",
        claim: "rank-r construction is idempotent with numeric rank r",
        tolerance: 1e-12,
        run: rank_r_decomposition,
    },
    Suite {
        name: "chapman-kolmogorov",
        claim: "P(t|u) = P(t|s) P(s|u) for random retention chains",
        tolerance: 1e-12,
        run: chapman_kolmogorov,
    },
    Suite {
        name: "inverse-round-trip",
        claim: "P(t|s)^-1 P(t|s) = I for retention ratio >= 0.05",
        tolerance: 1e-8,
        run: inverse_round_trip,
    },
    Suite {
        name: "stationary-push",
        claim: "forward push to alpha = 1e-6 lands on the normalized target",
        tolerance: 1e-5,
        run: stationary_push,
    },
    Suite {
        name: "kolmogorov-forward",
        claim: "dP(t|0)/dt = Q_t P(t|0) by finite differences, both schedules",
        tolerance: 1e-4,
        run: kolmogorov_forward,
    },
    Suite {
        name: "reverse-marginal",
        claim: "p_s = P(s|t) p_t; O(M) reverse row equals dense column",
        tolerance: 1e-10,
        run: reverse_marginal,
    },
    Suite {
        name: "reverse-rate",
        claim: "dP(s|t)/ds = -R_s P(s|t) by finite differences",
        tolerance: 1e-4,
        run: reverse_rate,
    },
    Suite {
        name: "closed-form-losses",
        claim: "closed-form losses equal the generic sum (500 per setting)",
        tolerance: 1e-8,
        run: closed_form_losses,
    },
    Suite {
        name: "adaptive-uniform",
        claim: "adaptive loss with uniform logits equals pair-wise",
        tolerance: 1e-10,
        run: adaptive_uniform,
    },
    Suite {
        name: "sbce-link",
        claim: "grad SE = (1+e^s)(1+e^r) grad sBCE; both vanish at s = r",
        tolerance: 1e-12,
        run: sbce_link,
    },
    Suite {
        name: "score-gradients",
        claim: "network gradients match central differences, all settings",
        tolerance: 1e-5,
        run: score_gradients,
    },
    Suite {
        name: "sampler-consistency",
        claim: "exact-ratio reverse chain reproduces p_0 (TV over 1e4 runs)",
        tolerance: 0.05,
        run: sampler_consistency,
    },
];

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.name).collect()
}

fn run_one(s: &Suite, seed: u64) -> SuiteResult {
    let start = Instant::now();
    let outcome = (s.run)(seed);
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(err) => SuiteResult {
            name: s.name,
            claim: s.claim,
            max_error: err,
            tolerance: s.tolerance,
            passed: err <= s.tolerance,
            seconds,
            failure: None,
        },
        Err(e) => SuiteResult {
            name: s.name,
            claim: s.claim,
            max_error: f64::INFINITY,
            tolerance: s.tolerance,
            passed: false,
            seconds,
            failure: Some(e.to_string()),
        },
    }
}

/// Runs every suite whose name contains `filter` (all when `None`).
pub fn run_suites(filter: Option<&str>, seed: u64) -> Vec<SuiteResult> {
    SUITES
        .iter()
        .filter(|s| filter.map_or(true, |f| s.name.contains(f)))
        .map(|s| run_one(s, seed))
        .collect()
}

// ---------------------------------------------------------------------------
// random instances

/// Random nonnegative weights with at least one positive entry; roughly one
/// in five entries is zero.
pub fn random_weights<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..m)
        .map(|_| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.01..1.0)
            }
        })
        .collect();
    if w.iter().all(|v| *v == 0.0) {
        w[rng.gen_range(0..m)] = 1.0;
    }
    w
}

pub fn random_rank1<R: Rng + ?Sized>(m: usize, rng: &mut R) -> FadingMatrix {
    let w = random_weights(m, rng);
    FadingMatrix::rank1(NonPreferenceState::new(w, false).expect("positive weights"))
}

/// Random partition of `0..m` into `r` non-empty clusters with strictly
/// positive targets.
pub fn random_rank_r<R: Rng + ?Sized>(m: usize, r: usize, rng: &mut R) -> FadingMatrix {
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let mut clusters: Vec<Vec<usize>> = perm[..r].iter().map(|&i| vec![i]).collect();
    for &i in &perm[r..] {
        clusters[rng.gen_range(0..r)].push(i);
    }
    let targets: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| {
            let mut t = vec![0.0; m];
            for &i in c {
                t[i] = rng.gen_range(0.01..1.0);
            }
            t
        })
        .collect();
    FadingMatrix::rank_r(m, &clusters, &targets).expect("valid partition")
}

fn random_fading<R: Rng + ?Sized>(max_m: usize, rng: &mut R) -> FadingMatrix {
    let m = rng.gen_range(2..=max_m);
    if rng.gen_bool(0.5) {
        random_rank1(m, rng)
    } else {
        let r = rng.gen_range(1..=m);
        random_rank_r(m, r, rng)
    }
}

fn random_simplex<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Three retention values `1 ≥ a_u ≥ a_s ≥ a_t > 0`.
fn random_chain<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64, f64) {
    let mut a: Vec<f64> = (0..3).map(|_| rng.gen_range(1e-3..1.0)).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    (a[0], a[1], a[2])
}

fn rel_err(approx: &Dense, exact: &Dense) -> f64 {
    let scale = exact
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    dense::max_abs_diff(approx, exact) / scale
}

fn fd(plus: &Dense, minus: &Dense, h: f64) -> Dense {
    dense::scale_add(0.5 / h, plus, -0.5 / h, minus)
}

// ---------------------------------------------------------------------------
// suites

fn fading_idempotence(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let e = random_fading(64, &mut rng).debug_dense()?;
        worst = worst.max(dense::max_abs_diff(&dense::matmul(&e, &e), &e));
        for s in dense::column_sums(&e) {
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok(worst)
}

fn fading_apply(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f = random_fading(64, &mut rng);
        let d = f.debug_dense()?;
        let v: Vec<f64> = (0..f.corpus_size())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        worst = worst.max(dense::max_abs_diff_vec(
            &f.apply(&v)?,
            &dense::matvec(&d, &v),
        ));
    }
    Ok(worst)
}

fn rank_r_decomposition(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.gen_range(2..=64);
        let r = rng.gen_range(1..=m);
        let f = random_rank_r(m, r, &mut rng);
        let e = f.debug_dense()?;
        if dense::numeric_rank(&e, 1e-9) != r {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(dense::max_abs_diff(&dense::matmul(&e, &e), &e));
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst = worst.max(dense::max_abs_diff_vec(
            &f.apply(&v)?,
            &dense::matvec(&e, &v),
        ));
    }
    Ok(worst)
}

/// Dense forward transition; the default builder for the composition check.
pub fn dense_forward(f: &FadingMatrix, alpha_s: f64, alpha_t: f64) -> Result<Dense> {
    process::forward_transition(f, alpha_s, alpha_t)?.debug_dense()
}

/// Composition error over 200 random instances for any transition builder.
pub fn chapman_kolmogorov_with<B>(seed: u64, build: B) -> Result<f64>
where
    B: Fn(&FadingMatrix, f64, f64) -> Result<Dense>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let f = random_fading(32, &mut rng);
        let (au, as_, at) = random_chain(&mut rng);
        let direct = build(&f, au, at)?;
        let composed = dense::matmul(&build(&f, as_, at)?, &build(&f, au, as_)?);
        worst = worst.max(dense::max_abs_diff(&composed, &direct));
    }
    Ok(worst)
}

fn chapman_kolmogorov(seed: u64) -> Result<f64> {
    chapman_kolmogorov_with(seed, dense_forward)
}

fn inverse_round_trip(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let f = random_fading(32, &mut rng);
        let a_s = rng.gen_range(0.05..1.0);
        let a_t = a_s * rng.gen_range(0.05..1.0);
        let fwd = process::forward_transition(&f, a_s, a_t)?.debug_dense()?;
        let inv = process::inverse_transition(&f, a_s, a_t)?.debug_dense()?;
        let eye = dense::identity(f.corpus_size());
        worst = worst.max(dense::max_abs_diff(&dense::matmul(&inv, &fwd), &eye));
        worst = worst.max(dense::max_abs_diff(&dense::matmul(&fwd, &inv), &eye));
    }
    Ok(worst)
}

fn stationary_push(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.gen_range(2..=64);
        let f = random_rank1(m, &mut rng);
        let p = f.target().expect("rank-1").normalized();
        let v = random_simplex(m, &mut rng);
        let pushed = process::forward_transition(&f, 1.0, 1e-6)?.apply(&v)?;
        let l1: f64 = pushed.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        worst = worst.max(l1);
        let e = f.debug_dense()?;
        worst = worst.max(dense::max_abs_diff(&dense::matmul(&e, &e), &e));
    }
    Ok(worst)
}

fn schedules() -> Result<[Schedule; 2]> {
    Ok([
        Schedule::geometric(1e-3, 10.0, 20)?,
        Schedule::linear(0.01, 20)?,
    ])
}

fn kolmogorov_forward(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for sched in schedules()? {
        for _ in 0..50 {
            let f = random_fading(8, &mut rng);
            let t = rng.gen_range(0.05..0.95);
            let p = |tt: f64| -> Result<Dense> {
                process::forward_transition(&f, 1.0, sched.alpha(tt)?)?.debug_dense()
            };
            let lhs = fd(&p(t + h)?, &p(t - h)?, h);
            let q = process::rate_matrix(&f, sched.beta(t)?)?.debug_dense()?;
            let rhs = dense::matmul(&q, &p(t)?);
            worst = worst.max(rel_err(&lhs, &rhs));
        }
    }
    Ok(worst)
}

/// Forward marginal `p_t = P(t|0) p_0`.
fn marginal(f: &FadingMatrix, alpha: f64, p0: &[f64]) -> Result<Vec<f64>> {
    process::forward_transition(f, 1.0, alpha)?.apply(p0)
}

fn reverse_marginal(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.gen_range(2..=16);
        let f = if rng.gen_bool(0.5) {
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
            FadingMatrix::rank1(NonPreferenceState::new(w, false)?)
        } else {
            let r = rng.gen_range(1..=m);
            random_rank_r(m, r, &mut rng)
        };
        let p0 = random_simplex(m, &mut rng);
        let a_s = rng.gen_range(0.05..1.0);
        let a_t = a_s * rng.gen_range(0.05..1.0);
        let ps = marginal(&f, a_s, &p0)?;
        let pt = marginal(&f, a_t, &p0)?;
        let rev = process::debug_reverse_dense(&f, a_s, a_t, &pt)?;
        worst = worst.max(dense::max_abs_diff_vec(&dense::matvec(&rev, &pt), &ps));
        for x in 0..m {
            let row =
                process::reverse_transition_exact(x, a_s, a_t, &f, &process::exact_ratios(&pt, x))?;
            if row.clamped != 0 {
                return Ok(f64::INFINITY);
            }
            for y in 0..m {
                worst = worst.max((row.probs[y] - rev[y][x]).abs());
            }
        }
    }
    Ok(worst)
}

fn reverse_rate(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x8);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for sched in schedules()? {
        for _ in 0..50 {
            let m = rng.gen_range(2..=8);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
            let f = FadingMatrix::rank1(NonPreferenceState::new(w, false)?);
            let p0 = random_simplex(m, &mut rng);
            let s = rng.gen_range(0.05..0.6);
            let t = rng.gen_range(s + 0.1..0.95);
            let a_t = sched.alpha(t)?;
            let pt = marginal(&f, a_t, &p0)?;
            let rev = |ss: f64| -> Result<Dense> {
                process::debug_reverse_dense(&f, sched.alpha(ss)?, a_t, &pt)
            };
            let lhs = fd(&rev(s + h)?, &rev(s - h)?, h);
            let ps = marginal(&f, sched.alpha(s)?, &p0)?;
            let r = process::reverse_rate_exact(sched.beta(s)?, &f, &ps)?;
            let rhs = dense::scale_add(-1.0, &dense::matmul(&r, &rev(s)?), 0.0, &r);
            worst = worst.max(rel_err(&lhs, &rhs));
        }
    }
    Ok(worst)
}

/// One random loss instance: `(n, x0, x_t, scores, α, β, target)`.
pub struct LossCase {
    pub x0: usize,
    pub x_t: usize,
    pub scores: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub target: NonPreferenceState,
}

pub fn random_loss_case<R: Rng + ?Sized>(setting: SettingKind, rng: &mut R) -> Result<LossCase> {
    let n = rng.gen_range(2..=32);
    let target = match setting {
        SettingKind::Adaptive { virtual_item } => {
            let m = n + usize::from(virtual_item);
            let logits: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            NonPreferenceState::from_logits(&logits, virtual_item)?
        }
        s => s.initial_state(n)?,
    };
    let sched = Schedule::default();
    let t = rng.gen_range(0.0..=1.0);
    let (alpha, beta) = (sched.alpha(t)?, sched.beta(t)?);
    let fading = FadingMatrix::rank1(target.clone());
    let x0 = rng.gen_range(0..n);
    let x_t = process::sample_forward(x0, alpha, &fading, rng)?;
    let mut scores: Vec<f64> = (0..target.len())
        .map(|_| rng.gen_range(-5.0..5.0))
        .collect();
    scores[x_t] = 0.0;
    Ok(LossCase {
        x0,
        x_t,
        scores,
        alpha,
        beta,
        target,
    })
}

pub const ALL_SETTINGS: [SettingKind; 5] = [
    SettingKind::PointWise,
    SettingKind::PairWise,
    SettingKind::Hybrid { n_lambda: 2 },
    SettingKind::Adaptive {
        virtual_item: false,
    },
    SettingKind::Adaptive { virtual_item: true },
];

fn closed_form_losses(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9);
    let mut worst = 0.0f64;
    for setting in ALL_SETTINGS {
        for _ in 0..500 {
            let c = random_loss_case(setting, &mut rng)?;
            let fading = FadingMatrix::rank1(c.target.clone());
            let generic =
                losses::se_loss_generic(c.x0, c.x_t, &c.scores, c.alpha, c.beta, &fading)?;
            let closed = losses::se_loss_closed(
                setting, c.x0, c.x_t, &c.scores, c.alpha, c.beta, &c.target,
            )?;
            worst = worst.max((closed - generic).abs() / generic.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn adaptive_uniform(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let c = random_loss_case(SettingKind::PairWise, &mut rng)?;
        let n = c.target.len();
        let uniform = NonPreferenceState::from_logits(&vec![0.0; n], false)?;
        let adaptive = losses::se_loss_closed(
            SettingKind::Adaptive {
                virtual_item: false,
            },
            c.x0,
            c.x_t,
            &c.scores,
            c.alpha,
            c.beta,
            &uniform,
        )?;
        let pair = losses::se_loss_closed(
            SettingKind::PairWise,
            c.x0,
            c.x_t,
            &c.scores,
            c.alpha,
            c.beta,
            &c.target,
        )?;
        worst = worst.max((adaptive - pair).abs() / pair.abs().max(1.0));
    }
    Ok(worst)
}

fn sbce_link(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let s: f64 = rng.gen_range(-10.0..10.0);
        let r: f64 = rng.gen_range(-10.0..10.0);
        let lhs = losses::se_term_grad(s, r);
        let rhs = (1.0 + s.exp()) * (1.0 + r.exp()) * losses::sbce_grad(s, r);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        // minimizers: both gradients vanish at s = r, and the losses are
        // smallest there along a line through r
        if losses::se_term_grad(r, r) != 0.0 || losses::sbce_grad(r, r) != 0.0 {
            return Ok(f64::INFINITY);
        }
        for d in [-1e-3, 1e-3] {
            if losses::se_term(r + d, r)? <= losses::se_term(r, r)?
                || losses::sbce_loss(r + d, r)? <= losses::sbce_loss(r, r)?
            {
                return Ok(f64::INFINITY);
            }
        }
    }
    Ok(worst)
}

/// A small network with enlarged weights, so gradients sit well above
/// rounding noise.
pub fn gradient_probe(
    setting: SettingKind,
    seed: u64,
) -> Result<(ScoreField, Vec<Example>, Schedule)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cfg = ModelConfig::new(6, setting, 8, 10);
    cfg.blocks = 2;
    cfg.ffn_dim = 12;
    let mut field = ScoreField::init(cfg, &mut rng)?;
    for t in [
        &mut field.params.item_emb,
        &mut field.params.time_emb,
        &mut field.params.nonpref,
    ] {
        t.data.iter_mut().for_each(|v| *v *= 10.0);
    }
    for v in field.params.logits.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let schedule = Schedule::geometric(1e-3, 10.0, 10)?;
    let fading = FadingMatrix::rank1(field.target()?);
    let mut batch = Vec::new();
    for i in 0..6 {
        let len = rng.gen_range(1..=6);
        let ctx = if i == 5 {
            UserContext::nonpref()
        } else {
            UserContext::new((0..len).map(|_| rng.gen_range(0..6)).collect())
        };
        let x0 = rng.gen_range(0..6);
        let t_index = rng.gen_range(1..=10);
        let x_t = process::sample_forward(x0, schedule.alpha_at(t_index), &fading, &mut rng)?;
        batch.push(Example {
            ctx,
            x0,
            t_index,
            x_t,
        });
    }
    Ok((field, batch, schedule))
}

/// Worst relative error between analytic and central-difference gradients
/// over `count` random scalars whose analytic gradient is not negligible
/// (plus, for the adaptive setting, every such logit). Uses a fourth-order
/// central stencil of width `h`.
pub fn gradient_check(setting: SettingKind, seed: u64, count: usize, h: f64) -> Result<f64> {
    let (mut field, batch, schedule) = gradient_probe(setting, seed)?;
    let analytic = field.gradients(&batch, &schedule)?.grads;
    // Entries far below the largest gradient are lost in the rounding
    // noise of the loss itself, so only well-conditioned ones are probed.
    let floor = 1e-3
        * analytic
            .named()
            .iter()
            .flat_map(|(_, t)| t.data.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()));
    let flat: Vec<(usize, usize, f64)> = analytic
        .named()
        .iter()
        .enumerate()
        .flat_map(|(ti, (_, t))| {
            t.data
                .iter()
                .enumerate()
                .filter(|(_, g)| g.abs() > floor)
                .map(move |(i, g)| (ti, i, *g))
                .collect::<Vec<_>>()
        })
        .collect();
    let logit_slot = analytic.named().len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfd);
    let mut picks: Vec<(usize, usize, f64)> = (0..count)
        .map(|_| flat[rng.gen_range(0..flat.len())])
        .collect();
    if matches!(setting, SettingKind::Adaptive { .. }) {
        picks.extend(flat.iter().filter(|p| p.0 == logit_slot).copied());
    }
    let mut worst = 0.0f64;
    for (ti, i, g) in picks {
        let orig = field.params.named()[ti].1.data[i];
        let mut at = |x: f64| -> Result<f64> {
            field.params.named_mut()[ti].1.data[i] = x;
            field.batch_loss(&batch, &schedule)
        };
        // Fourth-order central stencil.
        let numeric = (8.0 * (at(orig + h)? - at(orig - h)?)
            - (at(orig + 2.0 * h)? - at(orig - 2.0 * h)?))
            / (12.0 * h);
        field.params.named_mut()[ti].1.data[i] = orig;
        worst = worst.max((numeric - g).abs() / numeric.abs().max(g.abs()));
    }
    Ok(worst)
}

fn score_gradients(seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (k, setting) in ALL_SETTINGS.into_iter().enumerate() {
        worst = worst.max(gradient_check(
            setting,
            seed.wrapping_add(k as u64),
            20,
            1e-3,
        )?);
    }
    Ok(worst)
}

/// Total-variation distance between the empirical law of sampled `x0` and
/// the true `p_0`, with exact ratios on an 8-item toy.
pub fn sampler_tv(seed: u64, runs: usize) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc);
    let m = 8;
    let f = FadingMatrix::rank1(NonPreferenceState::pair_wise(m)?);
    let schedule = Schedule::default();
    let p0 = random_simplex(m, &mut rng);
    let exact = ExactRatios::new(&f, &schedule, &p0)?;
    let cfg = SamplerConfig::default();
    let mut counts = vec![0usize; m];
    let mut clamped = 0;
    for _ in 0..runs {
        let g = sampler::generate_with(&exact, &f, &schedule, &cfg, m, &mut rng)?;
        counts[g.x0] += 1;
        clamped += g.clamped;
    }
    let tv = 0.5
        * counts
            .iter()
            .zip(&p0)
            .map(|(c, p)| (*c as f64 / runs as f64 - p).abs())
            .sum::<f64>();
    Ok((tv, clamped))
}

fn sampler_consistency(seed: u64) -> Result<f64> {
    let (tv, clamped) = sampler_tv(seed, 10_000)?;
    Ok(if clamped == 0 { tv } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_selects_one_suite() {
        let r = run_suites(Some("chapman-kolmogorov"), 1);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "chapman-kolmogorov");
        assert!(r[0].passed, "{}", r[0].line());
    }

    #[test]
    fn at_least_ten_suites() {
        assert!(suite_names().len() >= 10);
    }

    #[test]
    fn sign_flipped_transition_is_caught() {
        // fading weight c − 1 in place of 1 − c
        let flipped = |f: &FadingMatrix, a_s: f64, a_t: f64| -> Result<Dense> {
            let c = a_t / a_s;
            let e = f.debug_dense()?;
            Ok(dense::scale_add(
                c,
                &dense::identity(f.corpus_size()),
                c - 1.0,
                &e,
            ))
        };
        assert!(chapman_kolmogorov_with(1, flipped).unwrap() > 1e-3);
        assert!(chapman_kolmogorov_with(1, dense_forward).unwrap() < 1e-12);
    }
}
