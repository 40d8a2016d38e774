use tdreg::evaluate::{adjusted_r2, biomarker_scores, cv_metric, CvResult};
use tdreg::features::{build_features, FeatureSet};
use tdreg::fit::{fit_model, Dataset, Family, FunctionalFit, ModelFit, ModelKind};
use tdreg::ingest::{
    aggregate_epochs, load_minutes, load_subject_records, write_canonical, write_subject_records, ActivityPanel,
    SubjectRecord,
};
use tdreg::synth::generate;
use tdreg::tdobject::{write_lmoments_long, write_surfaces_long};

use crate::config::PipelineConfig;
use crate::error::CliError;
use crate::output::{csv_err, Staging};

fn load_panel(cfg: &PipelineConfig) -> Result<ActivityPanel<f64>, CliError> {
    let path = &cfg.input.minutes;
    let panel = load_minutes(path, &cfg.input.schema).map_err(|e| match e {
        tdreg::ingest::IngestError::Io(source) => CliError::io(path, source),
        other => other.into(),
    })?;
    log::info!("loaded {} subjects from {}", panel.len(), path.display());
    if cfg.input.epoch_width > 1 {
        Ok(aggregate_epochs(&panel, cfg.input.epoch_width)?)
    } else {
        Ok(panel)
    }
}

fn load_records(cfg: &PipelineConfig) -> Result<Vec<SubjectRecord>, CliError> {
    let path = &cfg.input.subjects;
    load_subject_records(path, &cfg.record_schema()).map_err(|e| match e {
        tdreg::ingest::IngestError::Io(source) => CliError::io(path, source),
        other => other.into(),
    })
}

/// Outcomes and features in the subject-table order. Subjects with activity
/// but no outcome row are dropped with a warning.
fn load_inputs(cfg: &PipelineConfig) -> Result<(Dataset<f64>, FeatureSet<f64>), CliError> {
    let records = load_records(cfg)?;
    let features = build_features(&load_panel(cfg)?, &cfg.features)?;
    let ids: Vec<String> = records.iter().map(|r| r.subject_id.clone()).collect();
    let extra = features.len().saturating_sub(ids.len());
    if extra > 0 {
        log::warn!("{extra} subjects with activity data have no outcome row and are skipped");
    }
    let features = features.align(&ids)?;
    let data = Dataset::from_records(&records, cfg.input.covariates.clone(), cfg.family)?;
    Ok((data, features))
}

fn fit_one(kind: ModelKind, data: &Dataset<f64>, features: &FeatureSet<f64>, cfg: &PipelineConfig) -> Result<ModelFit<f64>, CliError> {
    let predictor = features.predictor(kind, &cfg.fit)?;
    let fit = fit_model(kind, data, &predictor, &cfg.fit)?;
    for w in &fit.warnings {
        log::warn!("{kind}: {w}");
    }
    Ok(fit)
}

fn write_config(stage: &mut Staging, cfg: &PipelineConfig) -> Result<(), CliError> {
    let text = cfg.to_toml()?;
    stage.text("config.resolved.toml", |w| {
        w.write_all(text.as_bytes()).map_err(|e| CliError::Output(e.to_string()))
    })
}

pub fn ingest(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let panel = load_minutes(&cfg.input.minutes, &cfg.input.schema).map_err(|e| match e {
        tdreg::ingest::IngestError::Io(source) => CliError::io(&cfg.input.minutes, source),
        other => other.into(),
    })?;
    stage.text("minutes.csv", |w| Ok(write_canonical(&panel, w)?))?;
    if cfg.input.subjects.exists() {
        let records = load_records(cfg)?;
        stage.text("subjects.csv", |w| Ok(write_subject_records(&records, &cfg.input.covariates, w)?))?;
    }
    println!("{} subjects canonicalised", panel.len());
    write_config(stage, cfg)
}

pub fn features(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let f = build_features(&load_panel(cfg)?, &cfg.features)?;
    stage.text("subject_means.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["subject_id", "mean"]).map_err(csv_err)?;
        for (id, m) in f.subject_ids.iter().zip(&f.means) {
            c.write_record([id.clone(), format!("{m}")]).map_err(csv_err)?;
        }
        c.flush().map_err(|e| CliError::Output(e.to_string()))
    })?;
    for (name, axis, grid, values) in [
        ("diurnal_curves.csv", "t", &f.t_grid, &f.diurnal),
        ("quantile_functions.csv", "p", &f.p_grid, &f.quantiles),
    ] {
        stage.text(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["subject_id", axis, "value"]).map_err(csv_err)?;
            for (i, id) in f.subject_ids.iter().enumerate() {
                for (k, s) in grid.points().iter().enumerate() {
                    c.write_record([id.clone(), format!("{s}"), format!("{}", values[(i, k)])])
                        .map_err(csv_err)?;
                }
            }
            c.flush().map_err(|e| CliError::Output(e.to_string()))
        })?;
    }
    stage.text("td_surfaces.csv", |w| Ok(write_surfaces_long(&f.surfaces, w)?))?;
    stage.text("lmoment_curves.csv", |w| Ok(write_lmoments_long(&f.lmoments, w)?))?;
    println!("features for {} subjects", f.len());
    write_config(stage, cfg)
}

pub fn fit(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let (data, features) = load_inputs(cfg)?;
    let fits = cfg
        .models
        .iter()
        .map(|&k| fit_one(k, &data, &features, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let adj: Vec<Option<f64>> = fits
        .iter()
        .map(|f| (cfg.family == Family::Identity).then(|| adjusted_r2(f, &data)).transpose())
        .collect::<Result<_, _>>()?;
    stage.text("coefficients.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["model", "term", "estimate", "std_error", "statistic", "p_value"])
            .map_err(csv_err)?;
        for f in &fits {
            for r in &f.coefficients {
                c.write_record([
                    f.kind.to_string(),
                    r.name.clone(),
                    format!("{}", r.estimate),
                    format!("{}", r.std_error),
                    format!("{}", r.statistic),
                    format!("{}", r.p_value),
                ])
                .map_err(csv_err)?;
            }
        }
        c.flush().map_err(|e| CliError::Output(e.to_string()))
    })?;
    stage.text("fit_summary.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "model",
            "family",
            "n_obs",
            "n_params",
            "n_functional",
            "log_likelihood",
            "deviance",
            "lambda",
            "joint_statistic",
            "joint_df",
            "joint_p_value",
            "adjusted_r2",
            "post_selection",
            "warnings",
        ])
        .map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        for (f, a) in fits.iter().zip(&adj) {
            let jt = f.joint_test.as_ref();
            c.write_record([
                f.kind.to_string(),
                f.family.name().to_string(),
                f.n_obs.to_string(),
                format!("{}", f.n_params),
                f.n_functional().to_string(),
                format!("{}", f.log_likelihood),
                format!("{}", f.deviance),
                opt(f.lambda),
                opt(jt.map(|j| j.statistic)),
                jt.map_or_else(String::new, |j| j.df.to_string()),
                opt(jt.map(|j| j.p_value)),
                opt(*a),
                f.post_selection.to_string(),
                f.warnings.join("; "),
            ])
            .map_err(csv_err)?;
        }
        c.flush().map_err(|e| CliError::Output(e.to_string()))
    })?;
    for f in &fits {
        let p = f.joint_test.as_ref().map_or(String::from("-"), |j| format!("{:.4e}", j.p_value));
        println!(
            "{}: log-likelihood {:.3}, {} activity terms, joint p {}",
            f.kind,
            f.log_likelihood,
            f.n_functional(),
            p
        );
    }
    write_config(stage, cfg)
}

pub fn cv(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let (data, features) = load_inputs(cfg)?;
    let results: Vec<CvResult> = cfg
        .models
        .iter()
        .map(|&k| cv_metric(k, &data, &features, &cfg.fit, &cfg.cv))
        .collect::<Result<_, _>>()?;
    stage.text("cv_summary.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["model", "metric", "mean", "sd", "folds", "repeats", "stratified", "pooled"])
            .map_err(csv_err)?;
        for r in &results {
            c.write_record([
                r.model.to_string(),
                r.metric.name().to_string(),
                format!("{}", r.mean),
                format!("{}", r.sd),
                r.spec.folds.to_string(),
                r.spec.repeats.to_string(),
                r.spec.stratified.to_string(),
                r.spec.pooled.to_string(),
            ])
            .map_err(csv_err)?;
        }
        c.flush().map_err(|e| CliError::Output(e.to_string()))
    })?;
    stage.text("cv_repeats.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["model", "metric", "repeat", "value"]).map_err(csv_err)?;
        for r in &results {
            for (i, v) in r.per_repeat.iter().enumerate() {
                c.write_record([r.model.to_string(), r.metric.name().to_string(), i.to_string(), format!("{v}")])
                    .map_err(csv_err)?;
            }
        }
        c.flush().map_err(|e| CliError::Output(e.to_string()))
    })?;
    for r in &results {
        println!("{}", r.summary());
    }
    write_config(stage, cfg)
}

pub fn biomarkers(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let (data, features) = load_inputs(cfg)?;
    let fits = [ModelKind::M1, ModelKind::M2, ModelKind::M3, ModelKind::M4]
        .into_iter()
        .map(|k| fit_one(k, &data, &features, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let table = biomarker_scores(&fits, &features)?;
    stage.text("biomarkers.csv", |w| Ok(table.write_csv(w)?))?;
    println!("biomarkers for {} subjects", table.len());
    write_config(stage, cfg)
}

pub fn export_surfaces(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let (data, features) = load_inputs(cfg)?;
    for &kind in &cfg.models {
        let fit = fit_one(kind, &data, &features, cfg)?;
        let name = format!("beta_{kind}.csv");
        match &fit.functional {
            FunctionalFit::Curve(c) => {
                let axis = match c.domain {
                    tdreg::fit::CurveDomain::Time => "t",
                    tdreg::fit::CurveDomain::Quantile => "p",
                };
                let (lo, hi) = c.band();
                stage.text(&name, |w| {
                    let mut out = csv::Writer::from_writer(w);
                    out.write_record([axis, "value", "std_error", "lower", "upper"]).map_err(csv_err)?;
                    for k in 0..c.grid.len() {
                        out.write_record([
                            format!("{}", c.grid.points()[k]),
                            format!("{}", c.beta[k]),
                            format!("{}", c.std_error[k]),
                            format!("{}", lo[k]),
                            format!("{}", hi[k]),
                        ])
                        .map_err(csv_err)?;
                    }
                    out.flush().map_err(|e| CliError::Output(e.to_string()))
                })?;
            }
            FunctionalFit::Surface(s) => {
                stage.text(&name, |w| {
                    let mut out = csv::Writer::from_writer(w);
                    out.write_record(["t", "p", "value"]).map_err(csv_err)?;
                    for (i, t) in s.t_grid.points().iter().enumerate() {
                        for (j, p) in s.p_grid.points().iter().enumerate() {
                            out.write_record([format!("{t}"), format!("{p}"), format!("{}", s.beta[(i, j)])])
                                .map_err(csv_err)?;
                        }
                    }
                    out.flush().map_err(|e| CliError::Output(e.to_string()))
                })?;
            }
            FunctionalFit::LMoment(l) => {
                stage.text(&name, |w| {
                    let mut out = csv::Writer::from_writer(w);
                    out.write_record(["order", "t", "value"]).map_err(csv_err)?;
                    for r in 0..l.curves.rows() {
                        for (k, t) in l.grid.points().iter().enumerate() {
                            out.write_record([(r + 1).to_string(), format!("{t}"), format!("{}", l.curves[(r, k)])])
                                .map_err(csv_err)?;
                        }
                    }
                    out.flush().map_err(|e| CliError::Output(e.to_string()))
                })?;
            }
            FunctionalFit::Scalar { .. } => log::info!("{kind}: scalar coefficient, no grid to export"),
            FunctionalFit::None => log::warn!("{kind}: no activity term selected, nothing exported"),
        }
    }
    write_config(stage, cfg)
}

pub fn synth(cfg: &PipelineConfig, stage: &mut Staging) -> Result<(), CliError> {
    let cohort = generate(&cfg.synth)?;
    stage.text("minutes.csv", |w| Ok(write_canonical(&cohort.panel, w)?))?;
    stage.text("subjects.csv", |w| {
        Ok(write_subject_records(&cohort.records, &cohort.covariate_names, w)?)
    })?;
    let truth = serde_json::to_value(&cohort.truth).map_err(|e| CliError::Output(e.to_string()))?;
    stage.json("truth.json", "truth", truth)?;
    println!(
        "synthetic cohort: {} subjects x {} days, effect {:?}",
        cohort.records.len(),
        cfg.synth.n_days,
        cfg.synth.effect
    );
    write_config(stage, cfg)
}
