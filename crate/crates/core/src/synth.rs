//! Synthetic cohorts with known ground truth.
//!
//! Minute activity is zero-inflated lognormal around a subject-specific level
//! times a circadian template. The outcome is driven by a planted effect
//! acting on one of the feature objects built from the simulated panel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_features, FeatureConfig, FeatureError, FeatureSet};
use crate::fit::Family;
use crate::ingest::{ActivityPanel, DaySeries, IngestError, SubjectRecord, SubjectSeries, MINUTES_PER_DAY};
use crate::linalg::Mat;
use crate::resample::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic configuration: {0}")]
    Config(String),
    #[error("planted signal has no variation across subjects")]
    FlatSignal,
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl SynthError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "synth.config",
            Self::FlatSignal => "synth.flat_signal",
            Self::Features(e) => e.code(),
            Self::Ingest(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    #[default]
    Unimodal,
    Bimodal,
    Flat,
}

/// Which feature object the outcome depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PlantedEffect {
    #[default]
    None,
    /// Subject mean activity.
    Scalar,
    /// Diurnal curve against a mid-day bump.
    Temporal,
    /// Subject quantile function against `p^2`.
    Distributional,
    /// TD surface against upper quantiles in the morning and afternoon.
    TdSurface,
    /// Time-varying L-moment curve of one order against a mid-day bump.
    LmomentOrder { order: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_days: usize,
    pub pattern: Pattern,
    /// Mean activity of a typical subject at a template value of 1.
    pub level: f64,
    /// Between-subject sd of log activity level.
    pub level_sd: f64,
    /// Between-day sd of log activity level.
    pub day_sd: f64,
    /// Between-subject sd of the circadian amplitude (multiplicative, mean 1).
    pub amplitude_sd: f64,
    /// Mean probability of a zero minute.
    pub zero_inflation: f64,
    /// Subject zero rates are uniform on `zero_inflation ± zero_spread`.
    pub zero_spread: f64,
    /// Minute-level lognormal sd of a typical subject.
    pub dispersion: f64,
    /// Between-subject sd of log dispersion.
    pub dispersion_sd: f64,
    pub effect: PlantedEffect,
    /// Linear-predictor change per sd of the planted signal.
    pub effect_size: f64,
    /// Linear-predictor change per sd of each covariate.
    pub covariate_effect: f64,
    pub intercept: f64,
    pub family: Family,
    /// Outcome noise scale: residual sd (identity) or logistic latent scale
    /// (logit; 1 is an ordinary Bernoulli draw, 0 a deterministic threshold).
    pub noise: f64,
    pub features: FeatureConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 200,
            n_days: 7,
            pattern: Pattern::Unimodal,
            level: 100.0,
            level_sd: 0.4,
            day_sd: 0.2,
            amplitude_sd: 0.3,
            zero_inflation: 0.3,
            zero_spread: 0.1,
            dispersion: 0.8,
            dispersion_sd: 0.25,
            effect: PlantedEffect::None,
            effect_size: 1.0,
            covariate_effect: 0.3,
            intercept: 0.0,
            family: Family::Logit,
            noise: 1.0,
            features: FeatureConfig::default(),
            seed: 1,
        }
    }
}

/// Covariate names, population means and sds.
pub const COVARIATES: [(&str, f64, f64); 3] = [("age", 72.0, 7.0), ("sex", 0.5, 0.5), ("education", 15.0, 3.0)];

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.n_subjects < 2 || self.n_days < 1 {
            return bad("need at least 2 subjects and 1 day");
        }
        if !(0.0..=1.0).contains(&self.zero_inflation) || !(0.0..=1.0).contains(&self.zero_spread) {
            return bad("zero_inflation and zero_spread must lie in [0, 1]");
        }
        if self.zero_inflation >= 1.0 {
            return bad("zero_inflation must be below 1");
        }
        let sds = [self.level_sd, self.day_sd, self.amplitude_sd, self.dispersion, self.dispersion_sd, self.noise];
        if sds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("spreads and noise must be finite and non-negative");
        }
        if !(self.level > 0.0 && self.level.is_finite()) {
            return bad("level must be positive");
        }
        if ![self.effect_size, self.covariate_effect, self.intercept].iter().all(|v| v.is_finite()) {
            return bad("effect sizes must be finite");
        }
        if let PlantedEffect::LmomentOrder { order } = self.effect {
            if order < 1 || order > self.features.l_moment_orders {
                return bad("planted L-moment order outside the computed orders");
            }
        }
        if self.effect == PlantedEffect::None && self.noise == 0.0 {
            return bad("no planted effect and zero outcome noise leaves nothing random in the outcome");
        }
        self.features.validate()?;
        Ok(())
    }

    fn zero_rate_bounds(&self) -> (f64, f64) {
        let d = self.zero_spread.min(self.zero_inflation).min(1.0 - self.zero_inflation);
        (self.zero_inflation - d, self.zero_inflation + d)
    }

    /// Unnormalised circadian shape at minute `m`.
    fn bump(&self, m: f64) -> f64 {
        let g = |c: f64, w: f64| (-0.5 * ((m - c) / w).powi(2)).exp();
        match self.pattern {
            Pattern::Flat => 0.0,
            Pattern::Unimodal => g(840.0, 180.0),
            Pattern::Bimodal => g(540.0, 120.0) + g(1080.0, 120.0),
        }
    }

    /// Circadian template per minute, normalised to a daily mean of 1.
    /// Returns `(floor, bump)` so that a subject with amplitude `a` has
    /// template `floor + a * bump`.
    fn template_parts(&self) -> (Vec<f64>, Vec<f64>) {
        let floor = 0.15;
        let raw: Vec<f64> = (0..MINUTES_PER_DAY).map(|m| self.bump(m as f64 + 0.5)).collect();
        let mean_raw = raw.iter().sum::<f64>() / MINUTES_PER_DAY as f64;
        if mean_raw == 0.0 {
            return (vec![1.0; MINUTES_PER_DAY], vec![0.0; MINUTES_PER_DAY]);
        }
        let scale = (1.0 - floor) / mean_raw;
        let floor_v = vec![floor; MINUTES_PER_DAY];
        (floor_v, raw.iter().map(|r| r * scale).collect())
    }

    /// Expected activity at each minute of the day, averaged over subjects,
    /// days and minute-level noise.
    pub fn expected_curve(&self) -> Vec<f64> {
        let (floor, bump) = self.template_parts();
        floor
            .iter()
            .zip(&bump)
            .map(|(f, b)| (1.0 - self.zero_inflation) * self.level * (f + b))
            .collect()
    }
}

/// True coefficient function behind the outcome, on the feature grids and in
/// the units of the raw (unstandardised) feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrueCoefficient {
    None,
    Scalar { beta: f64 },
    Curve { domain: String, grid: Vec<f64>, values: Vec<f64> },
    Surface { t_grid: Vec<f64>, p_grid: Vec<f64>, values: Vec<Vec<f64>> },
    LMoment { order: usize, grid: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub effect: PlantedEffect,
    pub family: Family,
    /// Intercept on the raw feature scale.
    pub intercept: f64,
    pub covariate_names: Vec<String>,
    /// Raw-scale covariate coefficients.
    pub gamma: Vec<f64>,
    pub coefficient: TrueCoefficient,
    /// Raw signal `∫ feature * shape` per subject, before scaling.
    pub signal: Vec<f64>,
    pub eta: Vec<f64>,
}

impl GroundTruth {
    /// True `β(t, p)` as a matrix, if the planted effect is a surface.
    pub fn surface(&self) -> Option<Mat<f64>> {
        match &self.coefficient {
            TrueCoefficient::Surface { values, .. } => Some(Mat::from_rows(values)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub panel: ActivityPanel<f64>,
    pub records: Vec<SubjectRecord>,
    pub covariate_names: Vec<String>,
    pub features: FeatureSet<f64>,
    pub truth: GroundTruth,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn simulate_subject(cfg: &SynthConfig, index: usize, floor: &[f64], bump: &[f64]) -> (SubjectSeries<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let covariates: Vec<f64> = COVARIATES
        .iter()
        .enumerate()
        .map(|(k, &(_, mean, sd))| {
            if k == 1 {
                (rng.random::<f64>() < mean) as u8 as f64
            } else {
                mean + sd * normal(&mut rng)
            }
        })
        .collect();
    let lognormal_unit = |rng: &mut ChaCha8Rng, sd: f64| (sd * normal(rng) - 0.5 * sd * sd).exp();
    let level = cfg.level * lognormal_unit(&mut rng, cfg.level_sd);
    let amplitude = lognormal_unit(&mut rng, cfg.amplitude_sd);
    let sigma = cfg.dispersion * lognormal_unit(&mut rng, cfg.dispersion_sd);
    let (lo, hi) = cfg.zero_rate_bounds();
    let zero_rate = lo + (hi - lo) * rng.random::<f64>();
    let template: Vec<f64> = floor.iter().zip(bump).map(|(f, b)| f + amplitude * b).collect();
    let days = (0..cfg.n_days)
        .map(|d| {
            let day_level = level * lognormal_unit(&mut rng, cfg.day_sd);
            let values: Vec<f64> = template
                .iter()
                .map(|&m| {
                    if zero_rate > 0.0 && rng.random::<f64>() < zero_rate {
                        0.0
                    } else {
                        day_level * m * lognormal_unit(&mut rng, sigma)
                    }
                })
                .collect();
            DaySeries::new(d as i64, values).expect("finite simulated activity")
        })
        .collect();
    (SubjectSeries::new(format!("S{:04}", index + 1), days), covariates)
}

fn gauss(x: f64, c: f64, w: f64) -> f64 {
    (-0.5 * ((x - c) / w).powi(2)).exp()
}

/// Raw signal per subject and the coefficient shape on the feature grids.
fn planted_signal(effect: PlantedEffect, f: &FeatureSet<f64>) -> (Vec<f64>, TrueCoefficient) {
    let t = f.t_grid.points();
    let p = f.p_grid.points();
    let n = f.len();
    match effect {
        PlantedEffect::None => (vec![0.0; n], TrueCoefficient::None),
        PlantedEffect::Scalar => (f.means.clone(), TrueCoefficient::Scalar { beta: 1.0 }),
        PlantedEffect::Temporal => {
            let beta: Vec<f64> = t.iter().map(|&x| gauss(x, 720.0, 150.0) / 1440.0).collect();
            let s = (0..n).map(|i| f.t_grid.inner(f.diurnal.row(i), &beta)).collect();
            (
                s,
                TrueCoefficient::Curve {
                    domain: "time".into(),
                    grid: t.to_vec(),
                    values: beta,
                },
            )
        }
        PlantedEffect::Distributional => {
            let beta: Vec<f64> = p.iter().map(|&x| x * x).collect();
            let s = (0..n).map(|i| f.p_grid.inner(f.quantiles.row(i), &beta)).collect();
            (
                s,
                TrueCoefficient::Curve {
                    domain: "quantile".into(),
                    grid: p.to_vec(),
                    values: beta,
                },
            )
        }
        PlantedEffect::TdSurface => {
            let values: Vec<Vec<f64>> = t
                .iter()
                .map(|&ti| {
                    p.iter()
                        .map(|&pj| pj * pj * (gauss(ti, 480.0, 120.0) + gauss(ti, 960.0, 120.0)) / 1440.0)
                        .collect()
                })
                .collect();
            let s = f
                .surfaces
                .iter()
                .map(|sf| {
                    let rows: Vec<f64> = (0..t.len()).map(|k| f.p_grid.inner(sf.values.row(k), &values[k])).collect();
                    f.t_grid.integrate(&rows)
                })
                .collect();
            (
                s,
                TrueCoefficient::Surface {
                    t_grid: t.to_vec(),
                    p_grid: p.to_vec(),
                    values,
                },
            )
        }
        PlantedEffect::LmomentOrder { order } => {
            let beta: Vec<f64> = t.iter().map(|&x| gauss(x, 720.0, 150.0) / 1440.0).collect();
            let s = f.lmoments.iter().map(|l| f.t_grid.inner(l.order(order), &beta)).collect();
            (
                s,
                TrueCoefficient::LMoment {
                    order,
                    grid: t.to_vec(),
                    values: beta,
                },
            )
        }
    }
}

fn scale_coefficient(c: TrueCoefficient, k: f64) -> TrueCoefficient {
    let sc = |v: Vec<f64>| v.into_iter().map(|x| x * k).collect::<Vec<_>>();
    match c {
        TrueCoefficient::None => TrueCoefficient::None,
        TrueCoefficient::Scalar { beta } => TrueCoefficient::Scalar { beta: beta * k },
        TrueCoefficient::Curve { domain, grid, values } => TrueCoefficient::Curve {
            domain,
            grid,
            values: sc(values),
        },
        TrueCoefficient::Surface { t_grid, p_grid, values } => TrueCoefficient::Surface {
            t_grid,
            p_grid,
            values: values.into_iter().map(sc).collect(),
        },
        TrueCoefficient::LMoment { order, grid, values } => TrueCoefficient::LMoment {
            order,
            grid,
            values: sc(values),
        },
    }
}

/// Simulates a cohort. Each subject draws from its own stream derived from
/// the seed, so results do not depend on thread scheduling.
pub fn generate(cfg: &SynthConfig) -> Result<SyntheticCohort, SynthError> {
    cfg.validate()?;
    let (floor, bump) = cfg.template_parts();
    let sims: Vec<(SubjectSeries<f64>, Vec<f64>)> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| simulate_subject(cfg, i, &floor, &bump))
        .collect();
    let (subjects, covariates): (Vec<_>, Vec<_>) = sims.into_iter().unzip();
    let panel = ActivityPanel::new(subjects, 1)?;
    let features = build_features(&panel, &cfg.features)?;

    let n = cfg.n_subjects;
    let (raw, shape) = planted_signal(cfg.effect, &features);
    let (scale, shift) = if cfg.effect == PlantedEffect::None {
        (0.0, 0.0)
    } else {
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if !(sd > 1e-12 * mean.abs().max(1e-300)) {
            return Err(SynthError::FlatSignal);
        }
        (cfg.effect_size / sd, cfg.effect_size * mean / sd)
    };
    let gamma: Vec<f64> = COVARIATES.iter().map(|&(_, _, sd)| cfg.covariate_effect / sd).collect();
    let z_shift: f64 = COVARIATES.iter().map(|&(_, mean, sd)| cfg.covariate_effect * mean / sd).sum();
    let intercept = cfg.intercept - shift - z_shift;
    let eta: Vec<f64> = (0..n)
        .map(|i| {
            intercept + scale * raw[i] + gamma.iter().zip(&covariates[i]).map(|(g, z)| g * z).sum::<f64>()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let outcomes: Vec<f64> = eta
        .iter()
        .map(|&e| match cfg.family {
            Family::Identity => e + cfg.noise * normal(&mut rng),
            Family::Logit => {
                let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
                ((e + cfg.noise * (u / (1.0 - u)).ln()) > 0.0) as u8 as f64
            }
        })
        .collect();
    let records = features
        .subject_ids
        .iter()
        .zip(covariates)
        .zip(&outcomes)
        .map(|((id, z), &y)| SubjectRecord {
            subject_id: id.clone(),
            outcome: y,
            covariates: z,
        })
        .collect();
    let covariate_names: Vec<String> = COVARIATES.iter().map(|c| c.0.to_string()).collect();
    Ok(SyntheticCohort {
        panel,
        records,
        covariate_names: covariate_names.clone(),
        features,
        truth: GroundTruth {
            effect: cfg.effect,
            family: cfg.family,
            intercept,
            covariate_names,
            gamma,
            coefficient: scale_coefficient(shape, scale),
            signal: raw,
            eta,
        },
    })
}
