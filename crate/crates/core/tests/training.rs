use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fadegrow::evaldata::{self, InteractionDataset};
use fadegrow::train::{self, TrainConfig};
use fadegrow::Schedule;

fn data() -> InteractionDataset {
    evaldata::synth_cycle(50, 3000, 0.0, &mut ChaCha8Rng::seed_from_u64(100)).unwrap()
}

fn small(p: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        dim: 32,
        ffn_dim: 64,
        nonpref_prob: p,
        max_epochs: epochs,
        patience: epochs,
        seed: 100,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_trend_falls_over_the_first_epochs() {
    let out = train::train(&data(), &small(0.1, 10), &Schedule::default()).unwrap();
    let window = 50;
    assert!(out.step_losses.len() >= window + 10);
    let ma: Vec<f64> = out
        .step_losses
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    // least-squares slope of the moving average against the step index
    let n = ma.len() as f64;
    let xm = (n - 1.0) / 2.0;
    let ym = ma.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in ma.iter().enumerate() {
        sxy += (i as f64 - xm) * (y - ym);
        sxx += (i as f64 - xm).powi(2);
    }
    let slope = sxy / sxx;
    // the trend may be flat to within 5% of the mean level over the window
    assert!(slope * n <= 0.05 * ym, "slope {slope}, mean {ym}");
    assert!(ma.last().unwrap() <= &(ma[0] * 1.05));
}

#[test]
fn nonpreference_fraction_matches_p() {
    for p in [0.1, 0.2] {
        let out = train::train(&data(), &small(p, 5), &Schedule::default()).unwrap();
        assert!(out.examples >= 10_000);
        let frac = out.nonpref_examples as f64 / out.examples as f64;
        assert!((frac - p).abs() <= 0.02, "p = {p}: fraction {frac}");
        assert_eq!(out.history_reads, out.examples - out.nonpref_examples);
    }
}

#[test]
fn every_setting_trains_without_numerical_trouble() {
    use fadegrow::losses::SettingKind;
    let d = evaldata::synth_cycle(12, 300, 0.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for setting in [
        SettingKind::PointWise,
        SettingKind::PairWise,
        SettingKind::Hybrid { n_lambda: 4 },
        SettingKind::Adaptive {
            virtual_item: false,
        },
        SettingKind::Adaptive { virtual_item: true },
    ] {
        let cfg = TrainConfig {
            setting,
            dim: 16,
            ffn_dim: 32,
            max_epochs: 3,
            batch_size: 64,
            ..TrainConfig::default()
        };
        let out = train::train(&d, &cfg, &Schedule::default()).unwrap();
        assert!(out.step_losses.iter().all(|l| l.is_finite()), "{setting}");
        assert!(out.field.params.all_finite());
    }
}
