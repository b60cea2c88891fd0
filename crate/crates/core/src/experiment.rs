//! Seeded Monte-Carlo campaigns: simulate, filter, score, and write
//! metrics CSV, a JSON report and SVG plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix5, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{Bernoulli, GaussianComponent, LandmarkBelief, PmbmDensity};
use crate::error::{Result, SlamError};
use crate::eval::{self, extract_map, gospa, positions_of, GospaParams};
use crate::geometry::{LandmarkType, PerType};
use crate::multimodel::MissedTypeRule;
use crate::plot;
use crate::sim::{generate_measurements, simulate_trajectory, NoiseModel, Scenario};
use crate::update::{self, FilterConfig, FilterKind, MapRegion, StepReport};

pub const REPORT_SCHEMA: &str = "rfs-slam.report/v1";
pub const METRICS_HEADER: &str = "step,gospa_va,gospa_sp,mae_pos,mae_heading,mae_bias,ms_predict,ms_update";

/// Known-anchor prior variance for the seeded BS track (m^2).
pub const BS_PRIOR_VARIANCE: f64 = 1e-6;
/// Existence threshold for map estimates fed to GOSPA.
pub const MAP_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Path to a scenario JSON file, or `"default"`.
    pub scenario: String,
    pub filter: FilterKind,
    pub gamma: usize,
    pub mc_runs: usize,
    pub seed: u64,
    /// Where outputs go; not echoed into reports so they do not depend on it.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub multi_model: bool,
    pub noise_toa: Option<f64>,
    pub noise_angle: Option<f64>,
    pub joseph_form: bool,
    pub gating: bool,
    pub missed_type_rule: MissedTypeRule,
    /// Wall-clock timing makes outputs differ between invocations, so it is opt-in.
    pub record_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: "default".into(),
            filter: FilterKind::Pmb,
            gamma: 10,
            mc_runs: 100,
            seed: 0,
            out: None,
            multi_model: true,
            noise_toa: None,
            noise_angle: None,
            joseph_form: false,
            gating: true,
            missed_type_rule: MissedTypeRule::default(),
            record_timing: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_runs < 1 {
            return Err(SlamError::Config("need at least one Monte-Carlo run".into()));
        }
        if self.gamma < 1 {
            return Err(SlamError::Config("gamma must be at least 1".into()));
        }
        for (name, v) in [("toa", self.noise_toa), ("angle", self.noise_angle)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(SlamError::Config(format!("{name} noise must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// The scenario with noise overrides applied.
    pub fn load_scenario(&self) -> Result<Scenario> {
        let mut scenario = if self.scenario == "default" {
            crate::sim::default_scenario()
        } else {
            Scenario::load(Path::new(&self.scenario))?
        };
        scenario.noise = NoiseModel {
            toa_std: self.noise_toa.unwrap_or(scenario.noise.toa_std),
            angle_std: self.noise_angle.unwrap_or(scenario.noise.angle_std),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Filter settings matched to the scenario.
    pub fn filter_config(&self, scenario: &Scenario) -> FilterConfig {
        let defaults = FilterConfig::default();
        let region = MapRegion::default();
        let pd = scenario.detection_probability;
        FilterConfig {
            kind: self.filter,
            gamma: self.gamma,
            turn: scenario.turn,
            process_noise: Matrix5::from_diagonal(&Vector5::from(scenario.process_variance)),
            thinning_detection: PerType::new(pd.bs, pd.va, pd.sp * region.ball_fraction(scenario.fov_radius)),
            clutter_intensity: scenario.clutter.intensity(),
            gate: if self.gating { defaults.gate } else { None },
            multi_model: self.multi_model,
            missed_type_rule: self.missed_type_rule,
            joseph_form: self.joseph_form,
            ..defaults
        }
    }
}

/// Hex SHA-256 of the scenario's canonical JSON.
pub fn scenario_hash(scenario: &Scenario) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_string(scenario)?.as_bytes());
    Ok(digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// Filter prior: the UE prior from the scenario and a map holding only the BS.
pub fn initial_filter_state(scenario: &Scenario, config: &FilterConfig) -> Result<(PmbmDensity, GaussianComponent)> {
    let sensor = GaussianComponent::new(
        DVector::from_column_slice(&scenario.initial_state),
        DMatrix::from_diagonal(&DVector::from_column_slice(&scenario.initial_variance)),
    )?;
    let bs = Bernoulli::new(
        1.0,
        LandmarkBelief::single(
            LandmarkType::Bs,
            GaussianComponent::new(
                DVector::from_column_slice(scenario.bs.as_slice()),
                DMatrix::identity(3, 3) * BS_PRIOR_VARIANCE,
            )?,
        ),
    );
    Ok((PmbmDensity::pmb(config.ppp, vec![bs]), sensor))
}

/// Everything recorded for one Monte-Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    /// Sensor mean after each step.
    pub estimates: Vec<[f64; 5]>,
    pub truth: Vec<[f64; 5]>,
    pub gospa_va: Vec<f64>,
    pub gospa_sp: Vec<f64>,
    /// `[localization, missed, false alarms]` p-th power parts per step.
    pub gospa_parts_va: Vec<[f64; 3]>,
    pub gospa_parts_sp: Vec<[f64; 3]>,
    pub ms_predict: Vec<f64>,
    pub ms_update: Vec<f64>,
}

/// Hook for inspecting the filter after every step of a run.
pub trait StepObserver: Sync {
    fn observe(&self, run: usize, step: usize, density: &PmbmDensity, sensor: &GaussianComponent, report: &StepReport);
}

impl StepObserver for () {
    fn observe(&self, _: usize, _: usize, _: &PmbmDensity, _: &GaussianComponent, _: &StepReport) {}
}

/// Simulates and filters one run.
pub fn run_once(
    scenario: &Scenario,
    config: &FilterConfig,
    run: usize,
    seed: u64,
    record_timing: bool,
    observer: &dyn StepObserver,
) -> Result<RunRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = simulate_trajectory(scenario, &mut rng);
    let model = scenario.channel_model();
    let (mut density, mut sensor) = initial_filter_state(scenario, config)?;
    let params = GospaParams::default();
    let va_truth = scenario.truth_positions(LandmarkType::Va);
    let sp_truth = scenario.truth_positions(LandmarkType::Sp);
    let mut rec = RunRecord {
        run,
        seed,
        estimates: Vec::with_capacity(scenario.steps),
        truth: Vec::with_capacity(scenario.steps),
        gospa_va: Vec::with_capacity(scenario.steps),
        gospa_sp: Vec::with_capacity(scenario.steps),
        gospa_parts_va: Vec::with_capacity(scenario.steps),
        gospa_parts_sp: Vec::with_capacity(scenario.steps),
        ms_predict: Vec::with_capacity(scenario.steps),
        ms_update: Vec::with_capacity(scenario.steps),
    };
    for (step, ue) in truth.iter().enumerate().skip(1) {
        let scan = generate_measurements(ue, scenario, &mut rng)?;

        let t0 = Instant::now();
        let predicted = update::predict_sensor(&sensor, &config.turn, &config.process_noise)?;
        let density_pred = update::predict_map(&density);
        let t1 = Instant::now();
        let (post, sensor_post, report) = update::update(&model, &density_pred, &predicted, &scan.measurements, config)?;
        let t2 = Instant::now();
        density = post;
        sensor = sensor_post;
        observer.observe(run, step, &density, &sensor, &report);

        let map = extract_map(&density, MAP_THRESHOLD);
        let va = gospa(&positions_of(&map, LandmarkType::Va), &va_truth, &params)?;
        let sp = gospa(&positions_of(&map, LandmarkType::Sp), &sp_truth, &params)?;
        rec.gospa_va.push(va.distance);
        rec.gospa_sp.push(sp.distance);
        rec.gospa_parts_va.push([va.localization, va.missed, va.false_alarms]);
        rec.gospa_parts_sp.push([sp.localization, sp.missed, sp.false_alarms]);
        let mut est = [0.0; 5];
        est.copy_from_slice(sensor.mean.as_slice());
        rec.estimates.push(est);
        rec.truth.push(ue.to_array());
        if record_timing {
            rec.ms_predict.push((t1 - t0).as_secs_f64() * 1e3);
            rec.ms_update.push((t2 - t1).as_secs_f64() * 1e3);
        } else {
            rec.ms_predict.push(0.0);
            rec.ms_update.push(0.0);
        }
    }
    Ok(rec)
}

/// Per-step means over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub gospa_va: f64,
    pub gospa_sp: f64,
    pub mae_pos: f64,
    pub mae_heading: f64,
    pub mae_bias: f64,
    pub ms_predict: f64,
    pub ms_update: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rmse_position: f64,
    pub rmse_heading: f64,
    pub rmse_bias: f64,
    pub final_gospa_va: f64,
    pub final_gospa_sp: f64,
    pub mean_gospa_va: f64,
    pub mean_gospa_sp: f64,
    pub ms_predict: f64,
    pub ms_update: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub config: RunConfig,
    pub scenario_hash: String,
    pub summary: Summary,
    pub steps: Vec<StepMetrics>,
    pub runs: Vec<RunRecord>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: RunReport = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(SlamError::Config(format!("unsupported report schema '{}'", report.schema)));
        }
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SlamError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Short label such as `ek-pmb/g10`.
    pub fn label(&self) -> String {
        format!("{}/g{}", self.config.filter.as_str(), self.config.gamma)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for m in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                m.step, m.gospa_va, m.gospa_sp, m.mae_pos, m.mae_heading, m.mae_bias, m.ms_predict, m.ms_update
            );
        }
        out
    }

    /// Mean GOSPA decomposition per step and landmark type.
    pub fn gospa_csv(&self) -> String {
        let mut out = String::from("step,type,gospa,localization,missed,false_alarms\n");
        for m in &self.steps {
            let k = m.step - 1;
            let va = mean_parts(self.runs.iter().map(|r| r.gospa_parts_va[k]));
            let sp = mean_parts(self.runs.iter().map(|r| r.gospa_parts_sp[k]));
            for (kind, total, p) in [("VA", m.gospa_va, va), ("SP", m.gospa_sp, sp)] {
                let _ = writeln!(out, "{},{kind},{total},{},{},{}", m.step, p[0], p[1], p[2]);
            }
        }
        out
    }

    /// Whole-campaign RMSE of the sensor state.
    pub fn rmse_csv(&self) -> String {
        let s = &self.summary;
        format!(
            "quantity,rmse\nposition,{}\nheading,{}\nbias,{}\n",
            s.rmse_position, s.rmse_heading, s.rmse_bias
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 { 0.0 } else { sum / n as f64 }
}

fn mean_parts(parts: impl Iterator<Item = [f64; 3]>) -> [f64; 3] {
    let (sum, n) = parts.fold(([0.0; 3], 0usize), |(s, n), p| ([s[0] + p[0], s[1] + p[1], s[2] + p[2]], n + 1));
    if n == 0 { sum } else { sum.map(|v| v / n as f64) }
}

fn position_error(r: &RunRecord, k: usize) -> f64 {
    let (e, t) = (&r.estimates[k], &r.truth[k]);
    ((e[0] - t[0]).powi(2) + (e[1] - t[1]).powi(2) + (e[2] - t[2]).powi(2)).sqrt()
}

/// Aggregates run records in run order.
pub fn summarize(config: &RunConfig, scenario: &Scenario, runs: Vec<RunRecord>) -> Result<RunReport> {
    let steps = runs.first().map(|r| r.estimates.len()).unwrap_or(0);
    let metrics: Vec<StepMetrics> = (0..steps)
        .map(|k| StepMetrics {
            step: k + 1,
            gospa_va: mean(runs.iter().map(|r| r.gospa_va[k])),
            gospa_sp: mean(runs.iter().map(|r| r.gospa_sp[k])),
            mae_pos: mean(runs.iter().map(|r| position_error(r, k))),
            mae_heading: mean(runs.iter().map(|r| eval::heading_error(r.estimates[k][3], r.truth[k][3]).abs())),
            mae_bias: mean(runs.iter().map(|r| (r.estimates[k][4] - r.truth[k][4]).abs())),
            ms_predict: mean(runs.iter().map(|r| r.ms_predict[k])),
            ms_update: mean(runs.iter().map(|r| r.ms_update[k])),
        })
        .collect();
    let all = |f: &dyn Fn(&RunRecord, usize) -> f64| -> Vec<f64> {
        runs.iter().flat_map(|r| (0..steps).map(move |k| f(r, k))).collect()
    };
    let summary = Summary {
        rmse_position: eval::rmse(&all(&position_error))?,
        rmse_heading: eval::rmse(&all(&|r, k| eval::heading_error(r.estimates[k][3], r.truth[k][3])))?,
        rmse_bias: eval::rmse(&all(&|r, k| r.estimates[k][4] - r.truth[k][4]))?,
        final_gospa_va: metrics.last().map_or(0.0, |m| m.gospa_va),
        final_gospa_sp: metrics.last().map_or(0.0, |m| m.gospa_sp),
        mean_gospa_va: mean(metrics.iter().map(|m| m.gospa_va)),
        mean_gospa_sp: mean(metrics.iter().map(|m| m.gospa_sp)),
        ms_predict: mean(metrics.iter().map(|m| m.ms_predict)),
        ms_update: mean(metrics.iter().map(|m| m.ms_update)),
    };
    Ok(RunReport {
        schema: REPORT_SCHEMA.into(),
        config: config.clone(),
        scenario_hash: scenario_hash(scenario)?,
        summary,
        steps: metrics,
        runs,
    })
}

/// Runs the Monte-Carlo campaign in parallel (run `i` is seeded with `seed + i`).
pub fn run_campaign(config: &RunConfig, observer: &dyn StepObserver) -> Result<RunReport> {
    config.validate()?;
    let scenario = config.load_scenario()?;
    let filter = config.filter_config(&scenario);
    filter.validate()?;
    let runs: Vec<RunRecord> = (0..config.mc_runs)
        .into_par_iter()
        .map(|i| {
            run_once(&scenario, &filter, i, config.seed.wrapping_add(i as u64), config.record_timing, observer)
        })
        .collect::<Result<_>>()?;
    summarize(config, &scenario, runs)
}

/// Runs the campaign and writes `metrics.csv`, `gospa.csv`, `rmse.csv`,
/// `report.json`, `gospa.svg` and `mae.svg` into `config.out` (if set).
pub fn run(config: &RunConfig) -> Result<RunReport> {
    let report = run_campaign(config, &())?;
    if let Some(dir) = &config.out {
        write_outputs(&report, dir)?;
    }
    Ok(report)
}

pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SlamError::io(dir, e))?;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| SlamError::io(&path, e))
    };
    write("metrics.csv", &report.metrics_csv())?;
    write("gospa.csv", &report.gospa_csv())?;
    write("rmse.csv", &report.rmse_csv())?;
    write("report.json", &report.to_json()?)?;
    let steps: Vec<f64> = report.steps.iter().map(|m| m.step as f64).collect();
    let series = |f: fn(&StepMetrics) -> f64| -> Vec<(f64, f64)> {
        steps.iter().copied().zip(report.steps.iter().map(f)).collect()
    };
    write(
        "gospa.svg",
        &plot::line_plot(
            "Mapping GOSPA",
            "time step",
            "GOSPA (m)",
            &[("VA", series(|m| m.gospa_va)), ("SP", series(|m| m.gospa_sp))],
        ),
    )?;
    write(
        "mae.svg",
        &plot::line_plot(
            "Sensor state MAE",
            "time step",
            "MAE",
            &[
                ("position (m)", series(|m| m.mae_pos)),
                ("heading (rad)", series(|m| m.mae_heading)),
                ("bias (m)", series(|m| m.mae_bias)),
            ],
        ),
    )?;
    Ok(())
}

/// Side-by-side summary of several reports of the same scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    /// `(metric, value per report)`
    pub rows: Vec<(String, Vec<f64>)>,
}

pub fn compare(reports: &[RunReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(SlamError::InvalidArgument("comparison needs at least two reports".into()));
    }
    let hash = &reports[0].scenario_hash;
    if let Some(other) = reports.iter().find(|r| &r.scenario_hash != hash) {
        return Err(SlamError::ComparisonRefused(format!(
            "scenario {} differs from {}",
            other.scenario_hash, hash
        )));
    }
    let pick = |f: fn(&Summary) -> f64| reports.iter().map(|r| f(&r.summary)).collect::<Vec<_>>();
    let rows = vec![
        ("rmse_position".to_string(), pick(|s| s.rmse_position)),
        ("rmse_heading".to_string(), pick(|s| s.rmse_heading)),
        ("rmse_bias".to_string(), pick(|s| s.rmse_bias)),
        ("final_gospa_va".to_string(), pick(|s| s.final_gospa_va)),
        ("final_gospa_sp".to_string(), pick(|s| s.final_gospa_sp)),
        ("mean_gospa_va".to_string(), pick(|s| s.mean_gospa_va)),
        ("mean_gospa_sp".to_string(), pick(|s| s.mean_gospa_sp)),
        ("ms_per_step".to_string(), pick(|s| s.ms_predict + s.ms_update)),
    ];
    Ok(Comparison {
        labels: reports.iter().map(RunReport::label).collect(),
        rows,
    })
}

impl Comparison {
    /// Values per report, then the difference of each later report from the first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        for l in &self.labels[1..] {
            let _ = write!(out, ",delta_{l}");
        }
        out.push('\n');
        for (name, values) in &self.rows {
            out.push_str(name);
            for v in values {
                let _ = write!(out, ",{v}");
            }
            for v in &values[1..] {
                let _ = write!(out, ",{}", v - values[0]);
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let width = self.labels.iter().map(String::len).max().unwrap_or(0).max(12);
        let mut out = format!("{:<16}", "metric");
        for l in &self.labels {
            let _ = write!(out, " {l:>width$}");
        }
        out.push('\n');
        for (name, values) in &self.rows {
            let _ = write!(out, "{name:<16}");
            for v in values {
                let _ = write!(out, " {v:>width$.4}");
            }
            out.push('\n');
        }
        out
    }
}
