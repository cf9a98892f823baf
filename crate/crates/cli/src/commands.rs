//! The four subcommands. Each `run_*` computes its tables in memory;
//! `cmd_*` additionally writes them (plus a manifest) to a directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use qsl_core::cv::{continuous_from_table, cv_risk, discrete_from_table, make_folds};
use qsl_core::loss::{empirical_coverage, empirical_risk};
use qsl_core::online::{online_coverage, run_stream, OnlineReport, Stream};
use qsl_core::sim::{gen_ar1, gen_iid};
use qsl_core::{Dataset, SharedPredictor};
use serde::Serialize;

use crate::config::{DataSource, ExperimentConfig, Mode, FORMAT_VERSION};
use crate::error::{CliError, CliResult};
use crate::io::{read_dataset, read_rows_as, read_stream, write_dataset, write_rows, write_stream};
use crate::tables::*;

pub const DISCRETE: &str = "qsl_discrete";
pub const CONTINUOUS: &str = "qsl_continuous";

fn table_header(cfg: &ExperimentConfig) -> String {
    let data = match &cfg.data {
        DataSource::Iid(c) => format!("iid noise_sd={}", c.noise_sd),
        DataSource::Ar1(c) => format!("ar1 rho={} sigma={} locations={}", c.rho, c.sigma, c.locations),
        DataSource::Csv { .. } => "csv".to_string(),
    };
    format!("qsl format={FORMAT_VERSION} config={} data={data}", cfg.hash())
}

#[derive(Serialize)]
struct Manifest<'a> {
    format_version: u32,
    command: &'a str,
    config_hash: String,
    seeds: Vec<u64>,
    files: Vec<String>,
    created_unix: u64,
    config: &'a ExperimentConfig,
}

fn write_manifest(out: &Path, cfg: &ExperimentConfig, command: &str, files: Vec<String>) -> CliResult<()> {
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        command,
        config_hash: cfg.hash(),
        seeds: cfg.seeds(),
        files,
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        config: cfg,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(CliError::runtime)?;
    std::fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn prepare_out(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))
}

fn require_mode(cfg: &ExperimentConfig, mode: Mode, command: &str) -> CliResult<()> {
    if cfg.mode != mode {
        return Err(CliError::Config(format!("`{command}` needs mode = \"{mode:?}\"").to_lowercase()));
    }
    Ok(())
}

/// Training and optional test data of one replicate.
pub fn iid_data(cfg: &ExperimentConfig, seed: u64) -> CliResult<(Dataset, Option<Dataset>)> {
    match &cfg.data {
        DataSource::Iid(c) => {
            let s = gen_iid(&qsl_core::sim::IidDgpConfig { seed, ..*c }).map_err(CliError::config)?;
            Ok((s.train, Some(s.test)))
        }
        DataSource::Csv { train: Some(train), test, .. } => {
            let train = read_dataset(train)?;
            let test = test.as_deref().map(read_dataset).transpose()?;
            if let Some(t) = &test {
                if t.dim() != train.dim() {
                    return Err(CliError::Data(format!(
                        "test data has {} covariates, training data {}",
                        t.dim(),
                        train.dim()
                    )));
                }
            }
            Ok((train, test))
        }
        _ => Err(CliError::Config("configuration does not describe i.i.d. data".into())),
    }
}

pub fn stream_data(cfg: &ExperimentConfig, seed: u64) -> CliResult<Stream> {
    match &cfg.data {
        DataSource::Ar1(c) => Ok(gen_ar1(&qsl_core::sim::Ar1DgpConfig { seed, ..*c }).map_err(CliError::config)?.stream),
        DataSource::Csv { stream: Some(path), .. } => read_stream(path),
        _ => Err(CliError::Config("configuration does not describe a stream".into())),
    }
}

fn iid_setting(cfg: &ExperimentConfig, n: usize) -> String {
    match &cfg.data {
        DataSource::Iid(c) => format!("n_train={n} noise_sd={}", c.noise_sd),
        _ => format!("n_train={n}"),
    }
}

fn stream_setting(cfg: &ExperimentConfig, stream: &Stream) -> String {
    match &cfg.data {
        DataSource::Ar1(c) => format!("T={} rho={} sigma={}", stream.len(), c.rho, c.sigma),
        _ => format!("T={}", stream.len()),
    }
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> CliResult<Vec<PathBuf>> {
    if matches!(cfg.data, DataSource::Csv { .. }) {
        return Err(CliError::Config("`simulate` needs a simulated data source".into()));
    }
    prepare_out(out)?;
    let header = table_header(cfg);
    let mut written = Vec::new();
    for seed in cfg.seeds() {
        let dir = out.join(format!("seed-{seed}"));
        prepare_out(&dir)?;
        match cfg.mode {
            Mode::Iid => {
                let (train, test) = iid_data(cfg, seed)?;
                write_dataset(&dir.join("train.csv"), &header, &train)?;
                written.push(dir.join("train.csv"));
                if let Some(test) = test {
                    write_dataset(&dir.join("test.csv"), &header, &test)?;
                    written.push(dir.join("test.csv"));
                }
            }
            Mode::Online => {
                write_stream(&dir.join("stream.csv"), &header, &stream_data(cfg, seed)?)?;
                written.push(dir.join("stream.csv"));
            }
        }
    }
    let names = written
        .iter()
        .map(|p| p.strip_prefix(out).unwrap_or(p).display().to_string())
        .collect();
    write_manifest(out, cfg, "simulate", names)?;
    Ok(written)
}

// --------------------------------------------------------------------- fit

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitOutput {
    pub cv_risk: Vec<CvRiskRow>,
    pub cv_folds: Vec<CvFoldRow>,
    pub selection: Vec<SelectionRow>,
    pub emp_risk: Vec<EmpRiskRow>,
    pub emp_cov: Vec<EmpCovRow>,
}

pub fn run_fit(cfg: &ExperimentConfig) -> CliResult<FitOutput> {
    require_mode(cfg, Mode::Iid, "fit")?;
    let library = cfg.library()?;
    let pairs = cfg.interval_pairs()?;
    let mut out = FitOutput::default();
    for seed in cfg.seeds() {
        let (train, test) = iid_data(cfg, seed)?;
        let setting = iid_setting(cfg, train.len());
        let folds = make_folds(train.len(), cfg.cv.folds, seed).map_err(CliError::config)?;
        // per algorithm, the fitted predictor at each alpha
        let mut fitted: Vec<(String, Vec<SharedPredictor>)> = library
            .names()
            .into_iter()
            .chain([DISCRETE.to_string(), CONTINUOUS.to_string()])
            .map(|n| (n, Vec::new()))
            .collect();
        for alpha in &cfg.alphas {
            let a = alpha.value();
            let table = cv_risk(&library, &train, *alpha, &folds)?;
            for (k, name) in table.names.iter().enumerate() {
                out.cv_risk.push(CvRiskRow {
                    seed,
                    setting: setting.clone(),
                    alpha: a,
                    learner: name.clone(),
                    cv_risk: table.risks[k],
                });
                for (f, &size) in folds.fold_sizes().iter().enumerate() {
                    out.cv_folds.push(CvFoldRow {
                        seed,
                        setting: setting.clone(),
                        alpha: a,
                        learner: name.clone(),
                        fold: f + 1,
                        size,
                        risk: table.per_fold[k][f],
                    });
                }
            }
            let discrete = discrete_from_table(&library, &train, table.clone())?;
            let continuous = continuous_from_table(&library, &train, table, &cfg.cv.weights)?;
            for (name, fit) in [(DISCRETE, &discrete), (CONTINUOUS, &continuous)] {
                out.cv_risk.push(CvRiskRow {
                    seed,
                    setting: setting.clone(),
                    alpha: a,
                    learner: name.to_string(),
                    cv_risk: fit.cv_risk,
                });
            }
            for (k, name) in library.names().into_iter().enumerate() {
                out.selection.push(SelectionRow {
                    seed,
                    setting: setting.clone(),
                    alpha: a,
                    learner: name,
                    discrete_weight: discrete.weights.as_slice()[k],
                    continuous_weight: continuous.weights.as_slice()[k],
                    optimizer_converged: continuous.converged,
                });
            }
            let k = library.len();
            for (c, p) in discrete.candidates.iter().enumerate() {
                fitted[c].1.push(p.clone());
            }
            fitted[k].1.push(discrete.ensemble.clone());
            fitted[k + 1].1.push(continuous.ensemble.clone());
        }
        let Some(test) = test else {
            continue;
        };
        for (name, preds) in &fitted {
            for (alpha, p) in cfg.alphas.iter().zip(preds) {
                out.emp_risk.push(EmpRiskRow {
                    seed,
                    setting: setting.clone(),
                    alpha: alpha.value(),
                    algorithm: name.clone(),
                    emp_risk: empirical_risk(*alpha, p.as_ref(), &test)?,
                });
            }
        }
        for pair in &pairs {
            for (name, preds) in &fitted {
                let (lo, hi) = (&preds[pair.lower], &preds[pair.upper]);
                let crossings = test.iter().filter(|o| lo.predict(&o.x) > hi.predict(&o.x)).count();
                out.emp_cov.push(EmpCovRow {
                    seed,
                    setting: setting.clone(),
                    beta: pair.beta,
                    algorithm: name.clone(),
                    lower_alpha: cfg.alphas[pair.lower].value(),
                    upper_alpha: cfg.alphas[pair.upper].value(),
                    coverage: empirical_coverage(lo.as_ref(), hi.as_ref(), &test)?,
                    crossing_rate: crossings as f64 / test.len() as f64,
                });
            }
        }
        info!("fit: seed {seed} done ({setting})");
    }
    Ok(out)
}

pub fn cmd_fit(cfg: &ExperimentConfig, out: &Path) -> CliResult<FitOutput> {
    let result = run_fit(cfg)?;
    prepare_out(out)?;
    let header = table_header(cfg);
    let mut files = vec!["cv_risk.csv", "cv_folds.csv", "selection.csv"];
    write_rows(&out.join("cv_risk.csv"), &header, &result.cv_risk)?;
    write_rows(&out.join("cv_folds.csv"), &header, &result.cv_folds)?;
    write_rows(&out.join("selection.csv"), &header, &result.selection)?;
    if !result.emp_risk.is_empty() {
        write_rows(&out.join("emp_risk.csv"), &header, &result.emp_risk)?;
        files.push("emp_risk.csv");
    }
    if !result.emp_cov.is_empty() {
        write_rows(&out.join("emp_cov.csv"), &header, &result.emp_cov)?;
        files.push("emp_cov.csv");
    }
    write_manifest(out, cfg, "fit", files.into_iter().map(String::from).collect())?;
    Ok(result)
}

// ------------------------------------------------------------------ stream

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamOutput {
    pub steps: Vec<StepRow>,
    pub step_losses: Vec<StepLossRow>,
    pub weights: Vec<WeightRow>,
    pub final_risk: Vec<FinalRiskRow>,
    pub final_cov: Vec<FinalCovRow>,
}

fn push_report(out: &mut StreamOutput, seed: u64, setting: &str, report: &OnlineReport) {
    let names = report.entity_names();
    let k = report.candidate_names.len();
    let a = report.alpha;
    for st in &report.steps {
        for rec in &st.locations {
            let preds = rec.candidate_predictions.iter().chain(&rec.aggregator_predictions);
            let losses = rec.candidate_losses.iter().chain(&rec.aggregator_losses);
            for ((name, p), l) in names.iter().zip(preds).zip(losses) {
                out.steps.push(StepRow {
                    seed,
                    alpha: a,
                    t: st.t,
                    location: rec.location.clone(),
                    entity: name.clone(),
                    y: rec.y,
                    prediction: *p,
                    loss: *l,
                });
            }
        }
        let losses = st.candidate_losses.iter().chain(&st.aggregator_losses);
        for (e, (name, l)) in names.iter().zip(losses).enumerate() {
            out.step_losses.push(StepLossRow {
                seed,
                setting: setting.to_string(),
                alpha: a,
                t: st.t,
                entity: name.clone(),
                loss: *l,
                fingerprint: (e < k).then(|| format!("{:016x}", st.candidate_fingerprints[e])),
            });
        }
        for (agg, w) in report.aggregator_names.iter().zip(&st.aggregator_weights) {
            for (learner, wk) in report.candidate_names.iter().zip(w) {
                out.weights.push(WeightRow {
                    seed,
                    alpha: a,
                    t: st.t,
                    aggregator: agg.clone(),
                    learner: learner.clone(),
                    weight: *wk,
                });
            }
        }
    }
    for (name, r) in names.iter().zip(&report.final_risk) {
        out.final_risk.push(FinalRiskRow {
            seed,
            setting: setting.to_string(),
            alpha: a,
            entity: name.clone(),
            window_start: report.window.0,
            window_end: report.window.1,
            emp_risk: *r,
            missing_locations: report.missing_locations,
        });
    }
}

pub fn run_stream_experiment(cfg: &ExperimentConfig) -> CliResult<StreamOutput> {
    require_mode(cfg, Mode::Online, "stream")?;
    let library = cfg.library()?;
    let pairs = cfg.interval_pairs()?;
    let mut out = StreamOutput::default();
    for seed in cfg.seeds() {
        let stream = stream_data(cfg, seed)?;
        let setting = stream_setting(cfg, &stream);
        if stream.has_missing_locations() {
            log::warn!("seed {seed}: some batches lack locations; losses average over present ones");
        }
        let online = cfg.stream.online_config(seed);
        let mut reports = Vec::with_capacity(cfg.alphas.len());
        for alpha in &cfg.alphas {
            let report = run_stream(&stream, &library, *alpha, &online)?;
            push_report(&mut out, seed, &setting, &report);
            reports.push(report);
        }
        for pair in &pairs {
            let (lo, hi) = (&reports[pair.lower], &reports[pair.upper]);
            for name in lo.entity_names() {
                out.final_cov.push(FinalCovRow {
                    seed,
                    setting: setting.clone(),
                    beta: pair.beta,
                    lower_alpha: lo.alpha,
                    upper_alpha: hi.alpha,
                    coverage: online_coverage(lo, hi, &name)?,
                    entity: name,
                });
            }
        }
        info!("stream: seed {seed} done ({setting})");
    }
    Ok(out)
}

pub fn cmd_stream(cfg: &ExperimentConfig, out: &Path) -> CliResult<StreamOutput> {
    let result = run_stream_experiment(cfg)?;
    prepare_out(out)?;
    let header = table_header(cfg);
    let mut files = vec!["steps.csv", "step_losses.csv", "weights.csv", "final_risk.csv"];
    write_rows(&out.join("steps.csv"), &header, &result.steps)?;
    write_rows(&out.join("step_losses.csv"), &header, &result.step_losses)?;
    write_rows(&out.join("weights.csv"), &header, &result.weights)?;
    write_rows(&out.join("final_risk.csv"), &header, &result.final_risk)?;
    if !result.final_cov.is_empty() {
        write_rows(&out.join("final_cov.csv"), &header, &result.final_cov)?;
        files.push("final_cov.csv");
    }
    write_manifest(out, cfg, "stream", files.into_iter().map(String::from).collect())?;
    Ok(result)
}

// ------------------------------------------------------------------ report

/// (setting, level bits, algorithm or entity).
type GroupKey = (String, u64, String);

/// Groups keyed by (setting, level, algorithm) in first-seen order.
#[derive(Default)]
struct Groups {
    order: Vec<GroupKey>,
    values: BTreeMap<GroupKey, Vec<f64>>,
}

impl Groups {
    fn add(&mut self, setting: &str, level: f64, algorithm: &str, v: f64) {
        let key = (setting.to_string(), level.to_bits(), algorithm.to_string());
        if !self.values.contains_key(&key) {
            self.order.push(key.clone());
        }
        self.values.entry(key).or_default().push(v);
    }

    fn summarize(&self) -> Vec<SummaryRow> {
        self.order
            .iter()
            .map(|key| {
                let vs = &self.values[key];
                let n = vs.len() as f64;
                let mean = vs.iter().sum::<f64>() / n;
                let se = if vs.len() > 1 {
                    (vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    setting: key.0.clone(),
                    level: f64::from_bits(key.1),
                    algorithm: key.2.clone(),
                    replications: vs.len(),
                    mean,
                    std_error: se,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportOutput {
    pub risk: Vec<SummaryRow>,
    pub coverage: Vec<SummaryRow>,
    pub trajectory: Vec<TrajectoryRow>,
    pub markdown: String,
}

fn read_if_exists<R: serde::de::DeserializeOwned>(path: PathBuf) -> CliResult<Vec<R>> {
    if path.exists() {
        read_rows_as(&path)
    } else {
        Ok(Vec::new())
    }
}

fn trajectories(rows: &[StepLossRow]) -> Vec<TrajectoryRow> {
    // (setting, alpha, entity) -> seed -> losses in time order
    let mut order: Vec<GroupKey> = Vec::new();
    let mut series: BTreeMap<GroupKey, BTreeMap<u64, Vec<(usize, f64)>>> = BTreeMap::new();
    for r in rows {
        let key = (r.setting.clone(), r.alpha.to_bits(), r.entity.clone());
        if !series.contains_key(&key) {
            order.push(key.clone());
        }
        series.entry(key).or_default().entry(r.seed).or_default().push((r.t, r.loss));
    }
    let mut out = Vec::new();
    for key in order {
        let per_seed = &series[&key];
        let horizon = per_seed.values().map(Vec::len).min().unwrap_or(0);
        let mut acc = vec![0.0; horizon];
        for losses in per_seed.values() {
            let mut sorted = losses.clone();
            sorted.sort_by_key(|(t, _)| *t);
            let mut sum = qsl_core::numeric::CompensatedSum::new();
            for (i, (_, l)) in sorted.iter().take(horizon).enumerate() {
                sum.add(*l);
                acc[i] += sum.value() / (i + 1) as f64;
            }
        }
        for (i, total) in acc.into_iter().enumerate() {
            out.push(TrajectoryRow {
                setting: key.0.clone(),
                alpha: f64::from_bits(key.1),
                entity: key.2.clone(),
                t: i + 1,
                mean_running_risk: total / per_seed.len() as f64,
            });
        }
    }
    out
}

fn markdown_table(title: &str, rows: &[SummaryRow], column: impl Fn(f64) -> String, lower_is_better: bool) -> String {
    let mut text = String::new();
    let mut settings: Vec<&str> = Vec::new();
    for r in rows {
        if !settings.contains(&r.setting.as_str()) {
            settings.push(&r.setting);
        }
    }
    for setting in settings {
        let sub: Vec<&SummaryRow> = rows.iter().filter(|r| r.setting == setting).collect();
        let mut levels: Vec<f64> = Vec::new();
        let mut algos: Vec<&str> = Vec::new();
        for r in &sub {
            if !levels.contains(&r.level) {
                levels.push(r.level);
            }
            if !algos.contains(&r.algorithm.as_str()) {
                algos.push(&r.algorithm);
            }
        }
        levels.sort_by(f64::total_cmp);
        text.push_str(&format!("### {title} ({setting})\n\n| algorithm |"));
        for l in &levels {
            text.push_str(&format!(" {} |", column(*l)));
        }
        text.push_str("\n|---|");
        text.push_str(&"---|".repeat(levels.len()));
        text.push('\n');
        let best: Vec<Option<f64>> = levels
            .iter()
            .map(|l| {
                let vals = sub.iter().filter(|r| r.level == *l).map(|r| r.mean);
                if lower_is_better {
                    vals.reduce(f64::min)
                } else {
                    // coverage: closest to nominal 1 - beta
                    sub.iter()
                        .filter(|r| r.level == *l)
                        .map(|r| (r.mean - (1.0 - l)).abs())
                        .reduce(f64::min)
                }
            })
            .collect();
        for algo in algos {
            text.push_str(&format!("| {algo} |"));
            for (l, b) in levels.iter().zip(&best) {
                match sub.iter().find(|r| r.algorithm == algo && r.level == *l) {
                    Some(r) => {
                        let score = if lower_is_better { r.mean } else { (r.mean - (1.0 - l)).abs() };
                        let cell = format!("{:.4} ({:.4})", r.mean, r.std_error);
                        if Some(score) == *b {
                            text.push_str(&format!(" **{cell}** |"));
                        } else {
                            text.push_str(&format!(" {cell} |"));
                        }
                    }
                    None => text.push_str(" |"),
                }
            }
            text.push('\n');
        }
        text.push('\n');
    }
    text
}

pub fn run_report(inputs: &[PathBuf]) -> CliResult<ReportOutput> {
    if inputs.is_empty() {
        return Err(CliError::Config("`report` needs at least one run directory".into()));
    }
    let mut risk = Groups::default();
    let mut cov = Groups::default();
    let mut losses = Vec::new();
    for dir in inputs {
        if !dir.is_dir() {
            return Err(CliError::Data(format!("{} is not a directory", dir.display())));
        }
        for r in read_if_exists::<EmpRiskRow>(dir.join("emp_risk.csv"))? {
            risk.add(&r.setting, r.alpha, &r.algorithm, r.emp_risk);
        }
        for r in read_if_exists::<FinalRiskRow>(dir.join("final_risk.csv"))? {
            risk.add(&r.setting, r.alpha, &r.entity, r.emp_risk);
        }
        for r in read_if_exists::<EmpCovRow>(dir.join("emp_cov.csv"))? {
            cov.add(&r.setting, r.beta, &r.algorithm, r.coverage);
        }
        for r in read_if_exists::<FinalCovRow>(dir.join("final_cov.csv"))? {
            cov.add(&r.setting, r.beta, &r.entity, r.coverage);
        }
        losses.extend(read_if_exists::<StepLossRow>(dir.join("step_losses.csv"))?);
    }
    if risk.order.is_empty() && cov.order.is_empty() && losses.is_empty() {
        return Err(CliError::Data("no result tables found in the given directories".into()));
    }
    let risk = risk.summarize();
    let coverage = cov.summarize();
    let mut markdown = String::from("# Results\n\nCells: mean (standard error) across replications.\n\n");
    if !risk.is_empty() {
        markdown.push_str("## Empirical risk\n\nLowest mean per column in bold.\n\n");
        markdown.push_str(&markdown_table("Empirical risk", &risk, |a| format!("alpha={a}"), true));
    }
    if !coverage.is_empty() {
        markdown.push_str("## Empirical coverage\n\nClosest to nominal per column in bold.\n\n");
        markdown.push_str(&markdown_table(
            "Empirical coverage",
            &coverage,
            |b| format!("{}%", (1.0 - b) * 100.0),
            false,
        ));
    }
    Ok(ReportOutput {
        risk,
        coverage,
        trajectory: trajectories(&losses),
        markdown,
    })
}

pub fn cmd_report(inputs: &[PathBuf], out: &Path) -> CliResult<ReportOutput> {
    let result = run_report(inputs)?;
    prepare_out(out)?;
    let header = format!("qsl format={FORMAT_VERSION} report");
    write_rows(&out.join("risk_summary.csv"), &header, &result.risk)?;
    write_rows(&out.join("coverage_summary.csv"), &header, &result.coverage)?;
    if !result.trajectory.is_empty() {
        write_rows(&out.join("trajectory.csv"), &header, &result.trajectory)?;
    }
    std::fs::write(out.join("summary.md"), &result.markdown)?;
    Ok(result)
}
