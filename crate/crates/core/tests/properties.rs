use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fadegrow::config::RunConfig;
use fadegrow::dense;
use fadegrow::evaldata::{self, InteractionDataset, Sequence};
use fadegrow::losses;
use fadegrow::process;
use fadegrow::sampler;
use fadegrow::verify::{random_rank1, random_rank_r};
use fadegrow::{Error, FadingMatrix};

fn fading(seed: u64, m: usize, rank: Option<usize>) -> FadingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match rank {
        None => random_rank1(m, &mut rng),
        Some(r) => random_rank_r(m, r.clamp(1, m), &mut rng),
    }
}

fn fading_strategy() -> impl Strategy<Value = FadingMatrix> {
    (any::<u64>(), 2usize..=24, prop::option::of(1usize..=24))
        .prop_map(|(seed, m, r)| fading(seed, m, r))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fading_is_idempotent_and_column_stochastic(f in fading_strategy()) {
        let e = f.debug_dense().unwrap();
        prop_assert!(dense::max_abs_diff(&dense::matmul(&e, &e), &e) < 1e-12);
        for s in dense::column_sums(&e) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn structured_apply_matches_dense(f in fading_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..f.corpus_size()).map(|_| rand::Rng::gen_range(&mut rng, -3.0..3.0)).collect();
        let d = f.debug_dense().unwrap();
        prop_assert!(dense::max_abs_diff_vec(&f.apply(&v).unwrap(), &dense::matvec(&d, &v)) < 1e-12);
    }

    #[test]
    fn forward_transitions_are_stochastic(
        f in fading_strategy(),
        a in 1e-6f64..1.0,
        b in 1e-6f64..1.0,
    ) {
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let p = process::forward_transition(&f, hi, lo).unwrap().debug_dense().unwrap();
        for s in dense::column_sums(&p) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(p.iter().flatten().all(|v| *v >= 0.0));
    }

    #[test]
    fn composition_holds(f in fading_strategy(), a in 1e-3f64..1.0, b in 1e-3f64..1.0, c in 1e-3f64..1.0) {
        let mut v = [a, b, c];
        v.sort_by(|x, y| y.total_cmp(x));
        let fw = |s: f64, t: f64| process::forward_transition(&f, s, t).unwrap().debug_dense().unwrap();
        let direct = fw(v[0], v[2]);
        let composed = dense::matmul(&fw(v[1], v[2]), &fw(v[0], v[1]));
        prop_assert!(dense::max_abs_diff(&direct, &composed) < 1e-12);
    }

    #[test]
    fn reverse_rows_are_distributions(
        f in fading_strategy(),
        seed in any::<u64>(),
        a in 0.05f64..1.0,
        ratio in 0.05f64..1.0,
    ) {
        let m = f.corpus_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_t = rand::Rng::gen_range(&mut rng, 0..m);
        let mut ratios: Vec<f64> = (0..m).map(|_| rand::Rng::gen_range(&mut rng, -4.0..4.0)).collect();
        ratios[x_t] = 0.0;
        match process::reverse_transition(x_t, a, a * ratio, &f, &ratios) {
            Ok(row) => {
                prop_assert!(row.probs.iter().all(|p| *p >= 0.0));
                prop_assert!((row.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            Err(e) => prop_assert!(matches!(e, Error::DegenerateReverse)),
        }
    }

    #[test]
    fn exact_ratios_never_clamp(f in fading_strategy(), seed in any::<u64>(), a in 0.05f64..1.0, ratio in 0.05f64..1.0) {
        let m = f.corpus_size();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..m).map(|_| rand::Rng::gen_range(&mut rng, 0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let p0: Vec<f64> = w.iter().map(|v| v / total).collect();
        let pt = process::forward_transition(&f, 1.0, a * ratio).unwrap().apply(&p0).unwrap();
        for x in 0..m {
            let row = process::reverse_transition_exact(x, a, a * ratio, &f, &process::exact_ratios(&pt, x)).unwrap();
            prop_assert_eq!(row.clamped, 0);
            prop_assert!((row.raw_sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn se_term_is_nonnegative_with_zero_only_at_reference(s in -10.0f64..10.0, r in -10.0f64..10.0) {
        let v = losses::se_term(s, r).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(losses::se_term(r, r).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ranking_is_a_permutation_of_real_items(scores in prop::collection::vec(-5.0f64..5.0, 2..40), virt in any::<bool>()) {
        let n = if virt { scores.len() - 1 } else { scores.len() };
        let mut ranking = sampler::rank_items(&scores, n);
        prop_assert_eq!(ranking.len(), n);
        for w in ranking.windows(2) {
            prop_assert!(scores[w[0]] > scores[w[1]] || (scores[w[0]] == scores[w[1]] && w[0] < w[1]));
        }
        ranking.sort_unstable();
        prop_assert_eq!(ranking, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn metrics_are_nested_and_bounded(ranks in prop::collection::vec(1usize..60, 1..200)) {
        let t = evaldata::metrics_from_ranks(&ranks, &[1, 5, 10, 20]).unwrap();
        let hr: Vec<f64> = [1, 5, 10, 20].iter().map(|k| t.hr_at(*k).unwrap()).collect();
        for w in hr.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for k in [1, 5, 10, 20] {
            prop_assert!(t.ndcg_at(k).unwrap() <= t.hr_at(k).unwrap() + 1e-15);
        }
        let mut reversed = ranks.clone();
        reversed.reverse();
        prop_assert_eq!(evaldata::metrics_from_ranks(&reversed, &[1, 5, 10, 20]).unwrap(), t);
    }

    #[test]
    fn dataset_text_round_trips(n in 3usize..40, count in 1usize..60, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = evaldata::synth_cycle(n, count, 0.3, &mut rng).unwrap();
        let back = InteractionDataset::parse(&d.to_text()).unwrap();
        prop_assert_eq!(back.sequences(), d.sequences());
        let sizes: Vec<usize> = [evaldata::Split::Train, evaldata::Split::Valid, evaldata::Split::Test]
            .iter()
            .map(|s| d.split(*s).len())
            .collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), count);
        prop_assert!((sizes[1] as f64 - count as f64 / 10.0).abs() <= 1.0);
        prop_assert!((sizes[2] as f64 - count as f64 / 10.0).abs() <= 1.0);
    }

    #[test]
    fn config_echo_round_trips(lr in 1e-5f64..1.0, w in 0.0f64..10.0, seed in any::<u64>(), n in 1u32..8) {
        let mut c = RunConfig {
            lr,
            w,
            seed,
            ..RunConfig::default()
        };
        c.set("loss.setting", &format!("hybrid:{n}")).unwrap();
        prop_assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }
}

#[test]
fn indices_out_of_range_are_rejected() {
    assert!(matches!(
        InteractionDataset::parse("N=3\n0 1 3\n"),
        Err(Error::RangeError { .. })
    ));
    assert!(InteractionDataset::new(
        2,
        vec![Sequence {
            history: vec![0],
            target: 2
        }]
    )
    .is_err());
}
