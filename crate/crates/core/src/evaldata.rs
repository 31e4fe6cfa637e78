//! Interaction datasets, synthetic data, and all-rank metrics.
//!
//! File format: the first line is `N=<corpus size>`; every other non-blank
//! line is a space-separated list of 0-based item ids, oldest first, whose
//! last token is the target and whose preceding tokens (at most ten) are the
//! history. Lines are in chronological order and split 8:1:1 into
//! train/validation/test.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampler::{self, SamplerConfig};
use crate::schedule::Schedule;
use crate::scorenet::{ScoreField, UserContext, MAX_HISTORY};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub history: Vec<usize>,
    pub target: usize,
}

impl Sequence {
    pub fn context(&self) -> UserContext {
        UserContext::new(self.history.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionDataset {
    n_items: usize,
    sequences: Vec<Sequence>,
    n_train: usize,
    n_valid: usize,
}

impl InteractionDataset {
    pub fn new(n_items: usize, sequences: Vec<Sequence>) -> Result<Self> {
        if n_items == 0 {
            return Err(Error::DataError("corpus size must be positive".into()));
        }
        for (i, s) in sequences.iter().enumerate() {
            if s.history.is_empty() || s.history.len() > MAX_HISTORY {
                return Err(Error::DataError(format!(
                    "sequence {i}: history length {} outside 1..={MAX_HISTORY}",
                    s.history.len()
                )));
            }
            if let Some(&bad) = s.history.iter().chain([&s.target]).find(|&&x| x >= n_items) {
                return Err(Error::RangeError {
                    line: i + 2,
                    item: bad,
                    n: n_items,
                });
            }
        }
        let n = sequences.len();
        let tenth = (n as f64 / 10.0).round() as usize;
        let n_valid = tenth.min(n);
        let n_test = tenth.min(n - n_valid);
        Ok(Self {
            n_items,
            n_train: n - n_valid - n_test,
            n_valid,
            sequences,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (ln, header) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::DataError("empty dataset file".into()))?;
        let n_items: usize = header
            .trim()
            .strip_prefix("N=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::ParseError {
                line: ln,
                msg: format!("expected `N=<corpus size>`, found `{}`", header.trim()),
            })?;
        let mut sequences = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let items: Vec<usize> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse().map_err(|_| Error::ParseError {
                        line: ln,
                        msg: format!("invalid item token `{tok}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if items.len() < 2 {
                return Err(Error::ParseError {
                    line: ln,
                    msg: "need at least one history item and a target".into(),
                });
            }
            if items.len() > MAX_HISTORY + 1 {
                return Err(Error::ParseError {
                    line: ln,
                    msg: format!("history longer than {MAX_HISTORY} items"),
                });
            }
            if let Some(&bad) = items.iter().find(|&&x| x >= n_items) {
                return Err(Error::RangeError {
                    line: ln,
                    item: bad,
                    n: n_items,
                });
            }
            let (target, history) = items.split_last().expect("len >= 2");
            sequences.push(Sequence {
                history: history.to_vec(),
                target: *target,
            });
        }
        Self::new(n_items, sequences)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("N={}\n", self.n_items);
        for s in &self.sequences {
            for h in &s.history {
                let _ = write!(out, "{h} ");
            }
            let _ = writeln!(out, "{}", s.target);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn split(&self, which: Split) -> &[Sequence] {
        let (a, b) = (self.n_train, self.n_train + self.n_valid);
        match which {
            Split::Train => &self.sequences[..a],
            Split::Valid => &self.sequences[a..b],
            Split::Test => &self.sequences[b..],
        }
    }
}

/// Consecutive runs `s, s+1, …` (mod `N`) of length 4–10 with target
/// `last + 1`, replaced by a uniform item with probability `noise`.
pub fn synth_cycle<R: Rng + ?Sized>(
    n_items: usize,
    count: usize,
    noise: f64,
    rng: &mut R,
) -> Result<InteractionDataset> {
    if n_items < 3 {
        return Err(Error::ConfigError("synthetic corpus needs N >= 3".into()));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::ConfigError(format!("noise {noise} outside [0, 1)")));
    }
    let sequences = (0..count)
        .map(|_| {
            let start = rng.gen_range(0..n_items);
            let len = rng.gen_range(4..=MAX_HISTORY);
            let history: Vec<usize> = (0..len).map(|k| (start + k) % n_items).collect();
            let next = (start + len) % n_items;
            let target = if rng.gen::<f64>() < noise {
                rng.gen_range(0..n_items)
            } else {
                next
            };
            Sequence { history, target }
        })
        .collect();
    InteractionDataset::new(n_items, sequences)
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(Error::ConfigError("cutoff K must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// 1 if the 1-based `rank` is within the cutoff.
pub fn hr_at_k(rank: usize, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(if rank >= 1 && rank <= k { 1.0 } else { 0.0 })
}

/// `1 / log₂(rank + 1)` within the cutoff (one relevant item, ideal DCG 1).
pub fn ndcg_at_k(rank: usize, k: usize) -> Result<f64> {
    check_k(k)?;
    Ok(if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    })
}

/// 1-based rank of `target` among real items `0..n_items`, scores descending
/// and ties by ascending id.
pub fn rank_of(scores: &[f64], target: usize, n_items: usize) -> usize {
    let st = scores[target];
    1 + (0..n_items)
        .filter(|&y| y != target && (scores[y] > st || (scores[y] == st && y < target)))
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
    /// Fraction of reverse-row entries clamped during generation.
    pub clamp_rate: f64,
}

impl MetricTable {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("K,HR,NDCG\n");
        for ((k, h), n) in self.ks.iter().zip(&self.hr).zip(&self.ndcg) {
            let _ = writeln!(out, "{k},{h:.6},{n:.6}");
        }
        out
    }
}

/// Order-independent sum: per-user values are sorted before adding.
fn stable_mean(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Averages HR/NDCG from per-user target ranks.
pub fn metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> Result<MetricTable> {
    if ranks.is_empty() {
        return Err(Error::DataError("no users to evaluate".into()));
    }
    let mut hr = Vec::with_capacity(ks.len());
    let mut ndcg = Vec::with_capacity(ks.len());
    for &k in ks {
        hr.push(stable_mean(
            ranks
                .iter()
                .map(|&r| hr_at_k(r, k))
                .collect::<Result<_>>()?,
        ));
        ndcg.push(stable_mean(
            ranks
                .iter()
                .map(|&r| ndcg_at_k(r, k))
                .collect::<Result<_>>()?,
        ));
    }
    Ok(MetricTable {
        ks: ks.to_vec(),
        hr,
        ndcg,
        users: ranks.len(),
        clamp_rate: 0.0,
    })
}

/// Evaluates any per-user scorer. `scorer(i, seq)` returns scores over at
/// least the real items.
pub fn evaluate_with<F>(
    users: &[Sequence],
    n_items: usize,
    ks: &[usize],
    scorer: F,
) -> Result<MetricTable>
where
    F: Fn(usize, &Sequence) -> Result<Vec<f64>> + Sync,
{
    let ranks: Vec<usize> = users
        .par_iter()
        .enumerate()
        .map(|(i, s)| scorer(i, s).map(|sc| rank_of(&sc, s.target, n_items)))
        .collect::<Result<_>>()?;
    metrics_from_ranks(&ranks, ks)
}

/// Runs the sampler for every user of `users` and scores the target's rank
/// under the final distribution.
pub fn evaluate(
    field: &ScoreField,
    users: &[Sequence],
    cfg: &SamplerConfig,
    schedule: &Schedule,
    ks: &[usize],
) -> Result<MetricTable> {
    if users.is_empty() {
        return Err(Error::DataError("empty evaluation split".into()));
    }
    let n = field.config().n_items;
    let runs: Vec<(usize, usize, usize)> = users
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let g = sampler::generate(field, &s.context(), cfg, schedule, &mut cfg.user_rng(i))?;
            Ok((rank_of(&g.probs, s.target, n), g.clamped, g.evaluated))
        })
        .collect::<Result<_>>()?;
    let ranks: Vec<usize> = runs.iter().map(|r| r.0).collect();
    let clamped: usize = runs.iter().map(|r| r.1).sum();
    let evaluated: usize = runs.iter().map(|r| r.2).sum();
    let mut table = metrics_from_ranks(&ranks, ks)?;
    table.clamp_rate = clamped as f64 / evaluated.max(1) as f64;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_example() {
        let d = InteractionDataset::parse("N=5\n0 1 2 3\n").unwrap();
        assert_eq!(d.n_items(), 5);
        assert_eq!(
            d.sequences()[0],
            Sequence {
                history: vec![0, 1, 2],
                target: 3
            }
        );
    }

    #[test]
    fn ten_sequences_split_8_1_1() {
        let mut text = String::from("N=4\n");
        for i in 0..10 {
            text.push_str(&format!("{} {}\n", i % 4, (i + 1) % 4));
        }
        let d = InteractionDataset::parse(&text).unwrap();
        assert_eq!(d.split(Split::Train).len(), 8);
        assert_eq!(d.split(Split::Valid).len(), 1);
        assert_eq!(d.split(Split::Test).len(), 1);
        assert_eq!(d.split(Split::Valid)[0], d.sequences()[8]);
    }

    #[test]
    fn splits_stay_within_one_of_the_ratio() {
        for n in 0..200 {
            let seqs = vec![
                Sequence {
                    history: vec![0],
                    target: 1
                };
                n
            ];
            let d = InteractionDataset::new(2, seqs).unwrap();
            let (a, b, c) = (
                d.split(Split::Train).len(),
                d.split(Split::Valid).len(),
                d.split(Split::Test).len(),
            );
            assert_eq!(a + b + c, n);
            let f = n as f64;
            assert!((a as f64 - 0.8 * f).abs() <= 1.0, "n={n}");
            assert!((b as f64 - 0.1 * f).abs() <= 1.0, "n={n}");
            assert!((c as f64 - 0.1 * f).abs() <= 1.0, "n={n}");
        }
    }

    #[test]
    fn malformed_lines_are_reported() {
        match InteractionDataset::parse("N=5\n0 1\n0 x 2\n") {
            Err(Error::ParseError { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains('x'));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            InteractionDataset::parse("N=5\n0 7\n"),
            Err(Error::RangeError {
                line: 2,
                item: 7,
                n: 5
            })
        ));
        assert!(matches!(
            InteractionDataset::parse("M=5\n"),
            Err(Error::ParseError { line: 1, .. })
        ));
        assert!(InteractionDataset::parse("N=5\n3\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = synth_cycle(12, 40, 0.3, &mut rng).unwrap();
        assert_eq!(InteractionDataset::parse(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn noiseless_cycles_follow_the_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = synth_cycle(50, 500, 0.0, &mut rng).unwrap();
        for s in d.sequences() {
            assert!((4..=10).contains(&s.history.len()));
            for w in s.history.windows(2) {
                assert_eq!(w[1], (w[0] + 1) % 50);
            }
            assert_eq!(s.target, (s.history.last().unwrap() + 1) % 50);
        }
        let mut again = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(synth_cycle(50, 500, 0.0, &mut again).unwrap(), d);
    }

    #[test]
    fn metric_examples() {
        for k in [1, 5, 10] {
            assert_eq!(hr_at_k(1, k).unwrap(), 1.0);
            assert_eq!(ndcg_at_k(1, k).unwrap(), 1.0);
        }
        assert!((ndcg_at_k(3, 5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(hr_at_k(6, 5).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(6, 5).unwrap(), 0.0);
        assert!(matches!(hr_at_k(1, 0), Err(Error::ConfigError(_))));
    }

    #[test]
    fn rank_uses_ascending_id_ties_and_ignores_virtual() {
        let s = [0.5, 0.9, 0.5, 0.1, 99.0];
        assert_eq!(rank_of(&s, 1, 4), 1);
        assert_eq!(rank_of(&s, 0, 4), 2);
        assert_eq!(rank_of(&s, 2, 4), 3);
        assert_eq!(rank_of(&s, 3, 4), 4);
    }

    #[test]
    fn perfect_oracle_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = synth_cycle(20, 100, 0.5, &mut rng).unwrap();
        let t = evaluate_with(d.sequences(), 20, &[1, 5, 10], |_, s| {
            let mut v = vec![0.0; 20];
            v[s.target] = 1.0;
            Ok(v)
        })
        .unwrap();
        assert!(t.hr.iter().chain(&t.ndcg).all(|v| *v == 1.0));
        assert!(evaluate_with(&[], 20, &[1], |_, _| Ok(vec![])).is_err());
    }

    #[test]
    fn evaluation_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ranks: Vec<usize> = (0..500).map(|_| rng.gen_range(1..40)).collect();
        let mut rev = ranks.clone();
        rev.reverse();
        let ks = [1, 5, 10, 20];
        let a = metrics_from_ranks(&ranks, &ks).unwrap();
        assert_eq!(a, metrics_from_ranks(&rev, &ks).unwrap());
        for i in 0..ks.len() {
            assert!(a.ndcg[i] <= a.hr[i]);
        }
        assert!(a.hr.windows(2).all(|w| w[0] <= w[1]));
    }
}
