use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use tdreg::evaluate::{auc, curve_scores, cv_metric, surface_score, CvSpec};
use tdreg::fit::{Dataset, Family, FitConfig, ModelKind};
use tdreg::grid::Grid;
use tdreg::linalg::Mat;
use tdreg::synth::{generate, Pattern, PlantedEffect, SynthConfig};

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(-50.0f64..50.0, n),
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
    })
}

proptest! {
    #[test]
    fn auc_ignores_increasing_transforms((scores, labels) in labelled(), a in 0.1f64..5.0, b in -10.0f64..10.0) {
        let base = auc(&scores, &labels).unwrap();
        let affine: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        let cubic: Vec<f64> = scores.iter().map(|s| s.powi(3) + s).collect();
        let logistic: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s / 10.0).exp())).collect();
        prop_assert_eq!(auc(&affine, &labels).unwrap(), base);
        prop_assert_eq!(auc(&cubic, &labels).unwrap(), base);
        prop_assert_eq!(auc(&logistic, &labels).unwrap(), base);
    }

    #[test]
    fn auc_of_reversed_scores_is_complementary((scores, labels) in labelled()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        let sum = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn surface_scores_are_linear_in_the_coefficient(
        seed in 0u64..1000,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let t = Grid::time_of_day(60).unwrap();
        let p = Grid::quantile_levels(9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Mat::from_fn(t.len(), p.len(), |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let (q, b1, b2) = (draw(), draw(), draw());
        let mix = Mat::from_fn(t.len(), p.len(), |i, j| a * b1[(i, j)] + b * b2[(i, j)]);
        let lhs = surface_score(&q, &mix, &t, &p).unwrap();
        let rhs = a * surface_score(&q, &b1, &t, &p).unwrap() + b * surface_score(&q, &b2, &t, &p).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn curve_scores_are_linear_in_the_coefficient(
        curves in proptest::collection::vec(-5.0f64..5.0, 3 * 24),
        b1 in proptest::collection::vec(-1.0f64..1.0, 24),
        b2 in proptest::collection::vec(-1.0f64..1.0, 24),
        a in -3.0f64..3.0,
    ) {
        let grid = Grid::time_of_day(60).unwrap();
        let x = Mat::from_vec(3, 24, curves);
        let mix: Vec<f64> = b1.iter().zip(&b2).map(|(u, v)| a * u + v).collect();
        let s1 = curve_scores(&x, &grid, &b1).unwrap();
        let s2 = curve_scores(&x, &grid, &b2).unwrap();
        let sm = curve_scores(&x, &grid, &mix).unwrap();
        for i in 0..3 {
            let rhs = a * s1[i] + s2[i];
            prop_assert!((sm[i] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }
    }
}

#[test]
fn m1_cv_auc_beats_a_permuted_control() {
    let c = generate(&SynthConfig {
        n_subjects: 200,
        n_days: 3,
        effect: PlantedEffect::Scalar,
        covariate_effect: 0.0,
        seed: 77,
        ..Default::default()
    })
    .unwrap();
    let data = Dataset::from_records(&c.records, c.covariate_names.clone(), Family::Logit).unwrap();
    let mut shuffled = data.clone();
    shuffled.y.shuffle(&mut ChaCha8Rng::seed_from_u64(78));
    let spec = CvSpec {
        repeats: 20,
        seed: 79,
        ..Default::default()
    };
    let cfg = FitConfig::default();
    let real = cv_metric(ModelKind::M1, &data, &c.features, &cfg, &spec).unwrap();
    let perm = cv_metric(ModelKind::M1, &shuffled, &c.features, &cfg, &spec).unwrap();
    // One-sided Mann-Whitney on the per-repeat cvAUCs, normal approximation.
    let values: Vec<f64> = real.per_repeat.iter().chain(&perm.per_repeat).copied().collect();
    let labels: Vec<bool> = (0..values.len()).map(|i| i < real.per_repeat.len()).collect();
    let (m, n) = (real.per_repeat.len() as f64, perm.per_repeat.len() as f64);
    let u = auc(&values, &labels).unwrap() * m * n;
    let z = (u - m * n / 2.0) / (m * n * (m + n + 1.0) / 12.0).sqrt();
    let p = 1.0 - Normal::standard().cdf(z);
    assert!(real.mean > perm.mean, "{} vs {}", real.mean, perm.mean);
    assert!(p < 0.01, "permutation p = {p}");
}

#[test]
fn zero_fraction_matches_the_configured_rate() {
    let cfg = SynthConfig {
        n_subjects: 100,
        n_days: 7,
        zero_inflation: 0.3,
        seed: 5,
        ..Default::default()
    };
    let c = generate(&cfg).unwrap();
    let (mut zeros, mut total) = (0usize, 0usize);
    for s in c.panel.subjects() {
        for d in &s.days {
            zeros += d.values().iter().filter(|&&v| v == 0.0).count();
            total += d.len();
        }
    }
    assert!(total >= 1_000_000);
    let frac = zeros as f64 / total as f64;
    assert!((frac - 0.3).abs() <= 0.02, "zero fraction {frac}");
}

/// Mean of each 10-minute epoch over subjects, with its standard error.
fn epoch_means(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let c = generate(cfg).unwrap();
    let n = c.features.len() as f64;
    let k = c.features.t_grid.len();
    (0..k)
        .map(|j| {
            let col = c.features.diurnal.col(j);
            let m = col.iter().sum::<f64>() / n;
            let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, (v / n).sqrt())
        })
        .unzip()
}

fn expected_epochs(cfg: &SynthConfig) -> Vec<f64> {
    cfg.expected_curve().chunks(10).map(|c| c.iter().sum::<f64>() / 10.0).collect()
}

#[test]
fn group_mean_curve_contrast_follows_the_templates() {
    let uni = SynthConfig {
        n_subjects: 300,
        n_days: 3,
        pattern: Pattern::Unimodal,
        seed: 11,
        ..Default::default()
    };
    let bi = SynthConfig {
        pattern: Pattern::Bimodal,
        seed: 12,
        ..uni.clone()
    };
    let (mu, su) = epoch_means(&uni);
    let (mb, sb) = epoch_means(&bi);
    let (eu, eb) = (expected_epochs(&uni), expected_epochs(&bi));
    for j in 0..mu.len() {
        let se = (su[j].powi(2) + sb[j].powi(2)).sqrt();
        let observed = mu[j] - mb[j];
        let expected = eu[j] - eb[j];
        assert!(
            (observed - expected).abs() <= 4.5 * se,
            "epoch {j}: contrast {observed} vs {expected} (se {se})"
        );
    }
}
