use std::fmt;
use std::fs;
use std::path::Path;

use landside::config::RunConfig;
use landside::eval::{evaluate_scenario, extend_window, CampaignReport};
use landside::ingest::{
    build_series, collect_transitions, extract_scenarios, load_csv, parse_timestamp,
    split_transitions, write_csv, ScenarioList,
};
use landside::mpc::receding_horizon;
use landside::plant::PlantStepper;
use landside::synth::generate;
use landside::sysid::{calibrate_noise, evaluate as evaluate_fit, fit};
use landside::{DynamicsModel, Error, NoiseModel, Volumes};
use rayon::prelude::*;

use crate::Common;

/// Error classes with distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Solver(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration: {m}"),
            Failure::Data(m) => write!(f, "data: {m}"),
            Failure::Solver(m) => write!(f, "solver: {m}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) => Failure::Config(e.to_string()),
            Error::NotConverged { .. } => Failure::Solver(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

pub fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text).map_err(|e| Failure::Config(e.to_string()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.jobs == 0 {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    Ok(cfg)
}

fn write_output(common: &Common, name: &str, contents: &str) -> Outcome {
    fs::create_dir_all(&common.out)
        .map_err(|e| Failure::Data(format!("{}: {e}", common.out.display())))?;
    let path = common.out.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<DynamicsModel, Failure> {
    Ok(DynamicsModel::from_json(&read_text(path)?)?)
}

fn load_noise(path: Option<&Path>, seed: u64) -> Result<NoiseModel, Failure> {
    match path {
        Some(p) => Ok(NoiseModel::from_json(&read_text(p)?)?.with_seed(seed)),
        None => {
            log::warn!("no noise model given; the plant is noise-free");
            Ok(NoiseModel::zero(seed))
        }
    }
}

pub fn synth(common: &Common, mut cfg: RunConfig, days: Option<usize>, episodes: Option<usize>) -> Outcome {
    if let Some(d) = days {
        cfg.synth.days = d;
    }
    if let Some(e) = episodes {
        cfg.synth.episodes = e;
    }
    cfg.validate()?;
    let out = generate(&cfg.synth, cfg.seed)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &out.records)?;
    write_output(common, "synthetic.csv", &String::from_utf8(csv).expect("UTF-8 csv"))?;
    write_output(common, "truth_model.json", &out.truth.to_json()?)?;
    write_output(
        common,
        "episodes.json",
        &serde_json::to_string_pretty(&out.episodes).expect("serializable"),
    )?;
    Ok(())
}

pub fn train(common: &Common, mut cfg: RunConfig, data: &Path, rho: Option<f64>) -> Outcome {
    if let Some(r) = rho {
        cfg.fit.rho = r;
    }
    cfg.validate()?;
    let loaded = load_csv(data, cfg.bin_minutes)?;
    for gap in &loaded.gaps {
        log::warn!("{} missing bins after row {}", gap.missing_bins, gap.after_index + 1);
    }
    let transitions = collect_transitions(&loaded, cfg.window_bins)?;
    let split = split_transitions(&transitions, cfg.train_fraction, cfg.seed)?;
    let model = fit(&split.train, &cfg.fit)?.with_volume_scale(split.volume_scale)?;
    let held_out = if split.validation.is_empty() {
        log::warn!("validation set is empty; reporting training residuals");
        &split.train
    } else {
        &split.validation
    };
    let report = evaluate_fit(&model, held_out)?;
    let (lo, hi) = cfg.noise_percentiles;
    let noise = calibrate_noise(&report, lo, hi, cfg.seed)?;
    let model = model.with_fit_summary(report.summary());
    log::info!("validation MAE {:?}", report.mae);
    write_output(common, "model.json", &model.to_json()?)?;
    write_output(common, "fit_report.json", &report.to_json()?)?;
    write_output(common, "noise.json", &noise.to_json()?)?;
    Ok(())
}

pub fn control(
    common: &Common,
    cfg: RunConfig,
    model_path: &Path,
    noise_path: Option<&Path>,
    data: &Path,
    start: &str,
    steps: usize,
) -> Outcome {
    cfg.validate()?;
    if steps == 0 {
        return Err(Failure::Config("--steps must be at least 1".into()));
    }
    let at = parse_timestamp(start)
        .ok_or_else(|| Failure::Config(format!("unparseable start time {start:?}")))?;
    let model = load_model(model_path)?;
    let noise = load_noise(noise_path, cfg.seed)?;
    let loaded = load_csv(data, cfg.bin_minutes)?;
    let all = build_series(&loaded, cfg.window_bins, model.volume_scale())?;
    let (series, index) = all
        .iter()
        .find_map(|s| {
            let offset = at - s.start();
            let bin = s.bin_seconds();
            (offset >= 0 && offset % bin == 0 && ((offset / bin) as usize) < s.len())
                .then(|| (s, (offset / bin) as usize))
        })
        .ok_or_else(|| Failure::Data(format!("no usable bin starts at {start}")))?;
    let forecast: Vec<Volumes> = series.inputs()[index..].iter().map(|u| u.volumes()).collect();
    if forecast.len() < steps {
        return Err(Failure::Data(format!(
            "only {} bins of history after {start}, {steps} requested",
            forecast.len()
        )));
    }
    let mut plant = PlantStepper::new(model.clone(), noise);
    let trace = receding_horizon(
        &series.states()[index],
        &model,
        &mut plant,
        &forecast,
        &cfg.mpc,
        steps,
    )?;
    write_output(common, "trace.json", &trace.to_json()?)
}

pub fn evaluate(
    common: &Common,
    mut cfg: RunConfig,
    model_path: &Path,
    noise_path: Option<&Path>,
    data: &Path,
    mc_runs: Option<usize>,
) -> Outcome {
    if let Some(m) = mc_runs {
        cfg.eval.mc_runs = m;
    }
    cfg.validate()?;
    let model = load_model(model_path)?;
    let noise = load_noise(noise_path, cfg.seed)?;
    let loaded = load_csv(data, cfg.bin_minutes)?;
    let all = build_series(&loaded, cfg.window_bins, model.volume_scale())?;

    let mut found = Vec::new();
    let mut usable = Vec::new();
    let span = cfg.eval.exec_steps + cfg.mpc.horizon_t;
    for series in &all {
        for sc in extract_scenarios(series, &cfg.scenario)? {
            let extended = extend_window(series, &sc, span);
            if extended.window.len() > cfg.eval.exec_steps {
                usable.push(extended);
            } else {
                log::warn!("scenario {} ends too close to the data to evaluate", sc.label);
            }
            found.push(sc);
        }
    }
    log::info!("{} scenarios found, {} evaluated", found.len(), usable.len());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(common.jobs)
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    let results = pool.install(|| {
        usable
            .par_iter()
            .enumerate()
            .map(|(i, sc)| evaluate_scenario(sc, i as u64, &model, &noise, &cfg.mpc, &cfg.eval, cfg.seed))
            .collect::<Result<Vec<_>, Error>>()
    })?;
    let report = CampaignReport::new(cfg.seed, results, &cfg.eval)?;

    write_output(
        common,
        "scenarios.json",
        &serde_json::to_string_pretty(&ScenarioList::new(&found)).expect("serializable"),
    )?;
    write_output(common, "campaign_report.json", &report.to_json()?)?;
    write_output(common, "speed_ratio_by_step.csv", &report.speed_ratio_csv()?)?;
    write_output(common, "vehicle_hours.csv", &report.vehicle_hours_csv()?)?;
    Ok(())
}
