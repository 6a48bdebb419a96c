use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use help_core::archspace::{
    default_reference_set, enumerate_cells, sample_architectures, Architecture, ReferenceSet,
    SearchSpace,
};
use help_core::devicesim::{
    build_dataset, generate_pool, DevicePool, DeviceProfile, LatencyDataset, Split,
};
use help_core::embedding::TaskSource;
use help_core::metalearn::{
    ablation_suite, adapt, evaluate_device, meta_train, AblationConfig, EvalConfig, EvalReport,
    InnerScope, InnerSettings, LatencyPredictor, OraclePredictor, TrainState, Variant,
};
use help_core::nas::{
    evolutionary_search, pareto_sweep, results_to_csv, AccuracyModel, AccuracyTable, SearchResult,
    SyntheticAccuracy,
};
use help_core::nnet::ParamSet;
use help_core::predictor::{HelpModel, ModelConfig, ModelManifest};
use help_core::{rng, stats};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::Run;

pub const POOL_FILE: &str = "pool.json";
pub const TABLE_FILE: &str = "latency.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
const MODEL_FILE: &str = "model.json";
const REFERENCE_FILE: &str = "reference.jsonl";

/// Where device data comes from when not generated in the same run.
#[derive(Clone, Debug, Default)]
pub struct DataPaths {
    pub pool: Option<PathBuf>,
    pub table: Option<PathBuf>,
}

/// Devices with their latency rows and split membership.
pub struct Devices {
    pub space: SearchSpace,
    pub profiles: Vec<DeviceProfile>,
    pub dataset: LatencyDataset,
    pub train_ids: Vec<String>,
    pub held_out_ids: Vec<String>,
}

impl Devices {
    pub fn get(&self, id: &str) -> Result<&DeviceProfile, CliError> {
        self.profiles
            .iter()
            .find(|p| p.device_id == id)
            .ok_or_else(|| CliError::Validation(format!("unknown device `{id}`")))
    }
}

fn pick(flag: Option<&Path>, config: Option<&PathBuf>, default: PathBuf) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.cloned())
        .unwrap_or(default)
}

/// Loads the pool and table named by flags, the config, or the output
/// directory of an earlier `gen-devices`. A table without a pool turns every
/// table device into a lookup device and treats them all as meta-train.
pub fn load_devices(
    cfg: &ExperimentConfig,
    out: &Path,
    paths: &DataPaths,
) -> Result<Devices, CliError> {
    let pool_path = pick(
        paths.pool.as_deref(),
        cfg.devices.pool_file.as_ref(),
        out.join(POOL_FILE),
    );
    let table_path = pick(
        paths.table.as_deref(),
        cfg.devices.table_file.as_ref(),
        out.join(TABLE_FILE),
    );
    if !table_path.exists() {
        return Err(CliError::Validation(format!(
            "latency table {} not found; run gen-devices first or pass --table",
            table_path.display()
        )));
    }
    let dataset = LatencyDataset::load(&table_path)?;
    if pool_path.exists() {
        let pool = DevicePool::load(&pool_path)?;
        if pool.space != dataset.space {
            return Err(CliError::Validation(format!(
                "pool is {} but table is {}",
                pool.space, dataset.space
            )));
        }
        let held_out: Vec<String> = pool
            .devices
            .iter()
            .filter(|e| e.split != Split::MetaTrain)
            .map(|e| e.profile.device_id.clone())
            .collect();
        Ok(Devices {
            space: pool.space,
            train_ids: pool.ids_in_split(Split::MetaTrain),
            held_out_ids: held_out,
            profiles: pool.profiles().cloned().collect(),
            dataset,
        })
    } else {
        let profiles = dataset.to_profiles();
        Ok(Devices {
            space: dataset.space,
            train_ids: profiles.iter().map(|p| p.device_id.clone()).collect(),
            held_out_ids: Vec::new(),
            profiles,
            dataset,
        })
    }
}

fn table_archs(space: SearchSpace, seed: u64) -> Result<Vec<Architecture>, CliError> {
    Ok(match space {
        SearchSpace::Cell => enumerate_cells().map(Architecture::Cell).collect(),
        SearchSpace::Layerwise => {
            sample_architectures(space, 20_000, rng::derive(seed, "table-archs", 0))?
        }
    })
}

pub struct GenOverrides {
    pub devices: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

pub fn gen_devices(
    cfg: &mut ExperimentConfig,
    out: &Path,
    o: &GenOverrides,
) -> Result<(), CliError> {
    if let Some(n) = o.devices {
        cfg.devices.count = n;
    }
    if let Some(n) = o.samples {
        cfg.devices.samples = n;
    }
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut run = Run::start("gen-devices", out, &cfg.to_canonical_json())?;
    run.seed("root", cfg.seed);
    let pool = generate_pool(
        &cfg.devices.generator,
        cfg.devices.count,
        rng::derive(cfg.seed, "pool", 0),
    )?;
    let archs = table_archs(pool.space, cfg.seed)?;
    let samples = cfg.devices.samples.min(archs.len());
    let dataset = build_dataset(&pool, &archs, samples, rng::derive(cfg.seed, "dataset", 0))?;
    pool.save(&run.path(POOL_FILE))?;
    run.produced(POOL_FILE);
    dataset.save(&run.path(TABLE_FILE))?;
    run.produced(TABLE_FILE);
    let mut corr = String::from("device_a,device_b,spearman\n");
    let probe = sample_architectures(pool.space, 500, rng::derive(cfg.seed, "report-probe", 0))?;
    let matrix = help_core::devicesim::pairwise_correlations(&pool, &probe);
    let ids: Vec<&str> = pool.profiles().map(|p| p.device_id.as_str()).collect();
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let _ = writeln!(corr, "{},{},{:?}", ids[i], ids[j], matrix[i][j]);
        }
    }
    run.write("correlations.csv", &corr)?;
    for e in &pool.devices {
        println!(
            "{:<18} {:<26} {}",
            e.profile.device_id,
            e.split.to_string(),
            samples
        );
    }
    run.finish()?;
    Ok(())
}

/// Training metadata stored next to the checkpoint parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelManifest,
    pub variant: Variant,
    pub inner_steps: usize,
    pub inner_scope: InnerScope,
    pub iteration: usize,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: HelpModel,
    pub params: ParamSet,
    pub refset: ReferenceSet,
}

impl Checkpoint {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MODEL_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let params = ParamSet::load(&dir.join("params.bin"))?;
        let model = HelpModel::for_params(meta.model.config.clone(), &params)?;
        model.check_manifest(&meta.model)?;
        let refset = ReferenceSet::load(&dir.join(REFERENCE_FILE))?;
        if refset.d() != meta.model.config.d || refset.space() != model.space() {
            return Err(CliError::Validation(format!(
                "{}: reference set does not match the model",
                dir.display()
            )));
        }
        Ok(Self {
            meta,
            model,
            params,
            refset,
        })
    }
}

fn reference_set(cfg: &ExperimentConfig, space: SearchSpace) -> Result<ReferenceSet, CliError> {
    let set = match &cfg.reference.file {
        Some(p) => ReferenceSet::load(p)?,
        None => default_reference_set(space, cfg.reference.count, cfg.reference.seed)?,
    };
    if set.space() != space {
        return Err(CliError::Validation(format!(
            "reference set is {} but the devices are {space}",
            set.space()
        )));
    }
    Ok(set)
}

pub struct TrainOverrides {
    pub episodes: Option<usize>,
    pub workers: Option<usize>,
    pub variant: Option<Variant>,
    pub seed: Option<u64>,
    pub resume: bool,
}

pub fn metatrain(
    cfg: &mut ExperimentConfig,
    out: &Path,
    paths: &DataPaths,
    o: &TrainOverrides,
) -> Result<(), CliError> {
    if let Some(n) = o.episodes {
        cfg.train.episodes = n;
    }
    if let Some(w) = o.workers {
        cfg.train.workers = w;
    }
    if let Some(v) = o.variant {
        cfg.train.variant = v;
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    let devices = load_devices(cfg, out, paths)?;
    let refset = reference_set(cfg, devices.space)?;
    let model_cfg = ModelConfig {
        space: devices.space,
        d: refset.d(),
        ..cfg.model.clone()
    };
    let mut run = Run::start("metatrain", out, &cfg.to_canonical_json())?;
    run.seed("root", cfg.seed);
    run.seed("train", cfg.train.seed);
    let source = TaskSource::new(
        &devices.dataset,
        &devices.profiles,
        refset.clone(),
        true,
        rng::derive(cfg.seed, "embedding", 0),
    )?;
    let ckpt = run.path(CHECKPOINT_DIR);
    let (model, state) = if o.resume && ckpt.join("state.json").exists() {
        let state = TrainState::load(&ckpt)?;
        let model = HelpModel::for_params(model_cfg, &state.params)?;
        log::info!("resuming from iteration {}", state.iteration);
        (model, state)
    } else {
        let (model, params) = HelpModel::init(
            model_cfg,
            cfg.train.alpha_init,
            rng::derive(cfg.train.seed, "init", 0),
        )?;
        (model, TrainState::new(params))
    };
    let train_ids: Vec<String> = devices
        .train_ids
        .iter()
        .filter(|id| source.device_ids().contains(id))
        .cloned()
        .collect();
    let started = Instant::now();
    let outcome = meta_train(&model, &source, &train_ids, &cfg.train, state, Some(out))?;
    let meta = CheckpointMeta {
        model: model.manifest(&outcome.state.params),
        variant: cfg.train.variant,
        inner_steps: cfg.train.inner_steps,
        inner_scope: cfg.train.inner_scope,
        iteration: outcome.state.iteration,
    };
    run.write(
        &format!("{CHECKPOINT_DIR}/{MODEL_FILE}"),
        &serde_json::to_string_pretty(&meta).expect("meta serialization"),
    )?;
    run.write(
        &format!("{CHECKPOINT_DIR}/{REFERENCE_FILE}"),
        &refset.to_jsonl(),
    )?;
    for f in ["params.bin", "adam_m.bin", "adam_v.bin", "state.json"] {
        run.produced(&format!("{CHECKPOINT_DIR}/{f}"));
    }
    run.produced("train_log.csv");
    if let Some(last) = outcome.log.last() {
        println!(
            "iteration {}: support {:.5}, query {:.5} ({:.1} s)",
            last.iteration,
            last.mean_support_loss,
            last.mean_query_loss,
            started.elapsed().as_secs_f64()
        );
    }
    run.finish()?;
    Ok(())
}

pub struct EvalOverrides {
    pub checkpoint: Option<PathBuf>,
    pub devices: Option<Vec<String>>,
    pub samples: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub baselines: Option<Vec<String>>,
    pub workers: Option<usize>,
}

fn eval_protocol(cfg: &ExperimentConfig, meta: &CheckpointMeta) -> EvalConfig {
    EvalConfig {
        variant: meta.variant,
        inner_steps: meta.inner_steps,
        inner_scope: meta.inner_scope,
        ..cfg.eval.clone()
    }
}

pub fn adapt_eval(
    cfg: &mut ExperimentConfig,
    out: &Path,
    paths: &DataPaths,
    o: &EvalOverrides,
) -> Result<EvalReport, CliError> {
    if let Some(d) = &o.devices {
        cfg.eval_targets.device_ids = d.clone();
    }
    if let Some(s) = &o.samples {
        cfg.eval_targets.sample_sweep = s.clone();
    }
    if let Some(s) = &o.seeds {
        cfg.eval.seeds = s.clone();
    }
    if let Some(b) = &o.baselines {
        cfg.eval.baselines = b.clone();
    }
    cfg.validate()?;
    let ckpt_dir = o
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join(CHECKPOINT_DIR));
    let ckpt = Checkpoint::load(&ckpt_dir)?;
    let devices = load_devices(cfg, out, paths)?;
    if devices.space != ckpt.model.space() {
        return Err(CliError::Validation(format!(
            "checkpoint serves the {} space, devices are {}",
            ckpt.model.space(),
            devices.space
        )));
    }
    let ids = if cfg.eval_targets.device_ids.is_empty() {
        devices.held_out_ids.clone()
    } else {
        cfg.eval_targets.device_ids.clone()
    };
    if ids.is_empty() {
        return Err(CliError::Validation(
            "no devices to evaluate; pass --devices".into(),
        ));
    }
    let profiles: Vec<&DeviceProfile> = ids
        .iter()
        .map(|id| devices.get(id))
        .collect::<Result<_, _>>()?;
    let sweep = if cfg.eval_targets.sample_sweep.is_empty() {
        vec![cfg.eval.n_samples]
    } else {
        cfg.eval_targets.sample_sweep.clone()
    };
    let mut run = Run::start("adapt-eval", out, &cfg.to_canonical_json())?;
    for &s in &cfg.eval.seeds {
        run.seed(&format!("eval-{s}"), s);
    }
    let base = eval_protocol(cfg, &ckpt.meta);
    let mut jobs: Vec<(usize, &DeviceProfile, u64)> = Vec::new();
    for &n in &sweep {
        for &d in &profiles {
            jobs.extend(base.seeds.iter().map(|&s| (n, d, s)));
        }
    }
    let run_job = |&(n, d, s): &(usize, &DeviceProfile, u64)| {
        let ecfg = EvalConfig {
            n_samples: n,
            ..base.clone()
        };
        evaluate_device(&ckpt.model, &ckpt.params, d, &ckpt.refset, &ecfg, s)
    };
    let workers = o.workers.unwrap_or(1).max(1);
    let rows = if workers == 1 {
        jobs.iter().map(run_job).collect::<Result<Vec<_>, _>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Runtime(e.to_string()))?
            .install(|| jobs.par_iter().map(run_job).collect::<Result<Vec<_>, _>>())?
    };
    let report = EvalReport { rows };
    run.write("eval.json", &report.to_json())?;
    run.write("eval.csv", &report.to_csv())?;
    if sweep.len() > 1 {
        run.write("sample_sweep.csv", &sweep_csv(&report))?;
    }
    for s in report.summaries() {
        let mut line = format!(
            "{:<18} n={:<4} rho {:.4} ± {:.4}",
            s.device_id, s.n_samples, s.mean_rho, s.std_rho
        );
        for (k, v) in &s.baselines {
            let _ = write!(line, "  {k} {v:.4}");
        }
        println!("{line}");
    }
    run.finish()?;
    Ok(report)
}

/// Mean ρ per support size over devices and seeds, one column per method.
fn sweep_csv(report: &EvalReport) -> String {
    let mut names: Vec<String> = report
        .rows
        .iter()
        .flat_map(|r| r.baselines.keys().cloned())
        .collect();
    names.sort();
    names.dedup();
    let mut sizes: Vec<usize> = report.rows.iter().map(|r| r.n_samples).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut s = String::from("n_samples,help_rho,help_std");
    for n in &names {
        let _ = write!(s, ",{n}_rho");
    }
    s.push('\n');
    for k in sizes {
        let rows: Vec<_> = report.rows.iter().filter(|r| r.n_samples == k).collect();
        let rho: Vec<f64> = rows.iter().map(|r| r.rho).collect();
        let _ = write!(s, "{k},{:?},{:?}", stats::mean(&rho), stats::std_dev(&rho));
        for n in &names {
            let v: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.baselines.get(n).copied())
                .collect();
            let _ = write!(s, ",{:?}", stats::mean(&v));
        }
        s.push('\n');
    }
    s
}

pub struct SearchOverrides {
    pub checkpoint: Option<PathBuf>,
    pub device: Option<String>,
    pub constraints: Option<Vec<f64>>,
    pub accuracy: Option<PathBuf>,
    pub oracle: bool,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub emit_plot_data: bool,
}

/// `q`-th percentile (0..=100) with linear interpolation.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn search(
    cfg: &mut ExperimentConfig,
    out: &Path,
    paths: &DataPaths,
    o: &SearchOverrides,
) -> Result<Vec<SearchResult>, CliError> {
    if let Some(d) = &o.device {
        cfg.search.device_id = Some(d.clone());
    }
    if let Some(c) = &o.constraints {
        cfg.search.constraints_ms = c.clone();
    }
    if let Some(a) = &o.accuracy {
        cfg.search.accuracy_file = Some(a.clone());
    }
    if let Some(n) = o.samples {
        cfg.search.n_samples = n;
    }
    if let Some(s) = o.seed {
        cfg.search.evolution.seed = s;
    }
    cfg.validate()?;
    let started = Instant::now();
    let devices = load_devices(cfg, out, paths)?;
    let space = devices.space;
    let device_id = cfg
        .search
        .device_id
        .clone()
        .or_else(|| devices.held_out_ids.first().cloned())
        .ok_or_else(|| CliError::Validation("no device given; pass --device".into()))?;
    let device = devices.get(&device_id)?;
    let accuracy = match &cfg.search.accuracy_file {
        Some(p) => AccuracyTable::load(p)?,
        None => AccuracyTable::Synthetic(SyntheticAccuracy::new(space, cfg.search.accuracy_seed)),
    };
    if accuracy.space() != space {
        return Err(CliError::Validation(format!(
            "accuracy table is for the {} space, device is {space}",
            accuracy.space()
        )));
    }
    let constraints = if cfg.search.constraints_ms.is_empty() {
        let probe = match space {
            SearchSpace::Cell => enumerate_cells().map(Architecture::Cell).collect(),
            SearchSpace::Layerwise => {
                sample_architectures(space, 2000, rng::derive(cfg.seed, "constraint-probe", 0))?
            }
        };
        let mut lat: Vec<f64> = probe
            .iter()
            .map(|a| device.true_latency(a))
            .collect::<Result<_, _>>()?;
        lat.sort_by(f64::total_cmp);
        cfg.search
            .percentiles
            .iter()
            .map(|&q| percentile(&lat, q))
            .collect()
    } else {
        cfg.search.constraints_ms.clone()
    };

    let mut run = Run::start("search", out, &cfg.to_canonical_json())?;
    run.seed("search", cfg.search.evolution.seed);
    let adapted;
    let oracle = OraclePredictor(device);
    let (predictor, label): (&dyn LatencyPredictor, &str) = if o.oracle {
        (&oracle, "oracle")
    } else {
        let ckpt_dir = o
            .checkpoint
            .clone()
            .unwrap_or_else(|| out.join(CHECKPOINT_DIR));
        let ckpt = Checkpoint::load(&ckpt_dir)?;
        if ckpt.model.space() != space {
            return Err(CliError::Validation(format!(
                "checkpoint serves the {} space, device is {space}",
                ckpt.model.space()
            )));
        }
        let candidates = table_archs(space, cfg.seed)?;
        let settings = InnerSettings::for_variant(
            ckpt.meta.variant,
            ckpt.meta.inner_steps,
            ckpt.meta.inner_scope,
            false,
        );
        adapted = adapt(
            &ckpt.model,
            &ckpt.params,
            device,
            &ckpt.refset,
            &candidates,
            cfg.search.n_samples,
            &settings,
            ckpt.meta.variant,
            cfg.search.evolution.seed,
        )?;
        (&adapted, "help")
    };

    let results = match space {
        SearchSpace::Cell => {
            let sweep = pareto_sweep(predictor, &accuracy, device, &constraints)?;
            run.write("frontier.csv", &sweep.frontier_csv())?;
            if o.emit_plot_data {
                run.write(&format!("plot_{label}.csv"), &plot_csv(&sweep.results))?;
                run.write("plot_frontier.csv", &frontier_plot_csv(&sweep.frontier))?;
            }
            sweep.results
        }
        SearchSpace::Layerwise => {
            let results = constraints
                .iter()
                .map(|&c| {
                    evolutionary_search(
                        space,
                        predictor,
                        &accuracy,
                        device,
                        c,
                        &cfg.search.evolution,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            if o.emit_plot_data {
                run.write(&format!("plot_{label}.csv"), &plot_csv(&results))?;
            }
            results
        }
    };
    run.write("search.csv", &results_to_csv(&results))?;
    run.write(
        "search.json",
        &serde_json::to_string_pretty(&results).expect("result serialization"),
    )?;
    for r in &results {
        match (&r.arch, r.true_ms, r.accuracy) {
            (Some(a), Some(t), Some(acc)) => println!(
                "{device_id} constraint {:.4} ms: {} predicted {:.4} ms, true {t:.4} ms, accuracy {acc:.2}%",
                r.constraint_ms,
                a.op_string(),
                r.predicted_ms.unwrap_or(f64::NAN)
            ),
            _ => println!(
                "{device_id} constraint {:.4} ms: no result ({})",
                r.constraint_ms,
                r.diagnostics.as_deref().unwrap_or("")
            ),
        }
    }
    println!(
        "{device_id}: total wall-clock {:.2} s",
        started.elapsed().as_secs_f64()
    );
    run.finish()?;
    Ok(results)
}

fn plot_csv(results: &[SearchResult]) -> String {
    let mut s = String::from("x_latency_ms,y_accuracy\n");
    for r in results {
        if let (Some(x), Some(y)) = (r.true_ms, r.accuracy) {
            let _ = writeln!(s, "{x:?},{y:?}");
        }
    }
    s
}

fn frontier_plot_csv(frontier: &[(f64, f64, Architecture)]) -> String {
    let mut s = String::from("x_latency_ms,y_accuracy\n");
    for (x, y, _) in frontier {
        let _ = writeln!(s, "{x:?},{y:?}");
    }
    s
}

pub struct AblationOverrides {
    pub episodes: Option<usize>,
    pub variants: Option<Vec<Variant>>,
}

pub fn ablation(
    cfg: &mut ExperimentConfig,
    out: &Path,
    paths: &DataPaths,
    o: &AblationOverrides,
) -> Result<(), CliError> {
    if let Some(n) = o.episodes {
        cfg.train.episodes = n;
    }
    cfg.validate()?;
    let devices = load_devices(cfg, out, paths)?;
    let refset = reference_set(cfg, devices.space)?;
    let source = TaskSource::new(
        &devices.dataset,
        &devices.profiles,
        refset.clone(),
        true,
        rng::derive(cfg.seed, "embedding", 0),
    )?;
    let ids = if cfg.eval_targets.device_ids.is_empty() {
        devices.held_out_ids.clone()
    } else {
        cfg.eval_targets.device_ids.clone()
    };
    let test: Vec<&DeviceProfile> = ids
        .iter()
        .map(|id| devices.get(id))
        .collect::<Result<_, _>>()?;
    if test.is_empty() {
        return Err(CliError::Validation(
            "no held-out devices for the ablation".into(),
        ));
    }
    let mut run = Run::start("ablation", out, &cfg.to_canonical_json())?;
    run.seed("train", cfg.train.seed);
    let acfg = AblationConfig {
        model: ModelConfig {
            space: devices.space,
            d: refset.d(),
            ..cfg.model.clone()
        },
        train: cfg.train.clone(),
        eval: cfg.eval.clone(),
    };
    let variants = o.variants.clone().unwrap_or_else(|| Variant::ALL.to_vec());
    let report = ablation_suite(
        &source,
        &devices.train_ids,
        &test,
        &refset,
        &acfg,
        &variants,
    )?;
    run.write("ablation.csv", &report.to_csv())?;
    for r in &report.rows {
        println!(
            "{:<14} rho {:.4} ± {:.4}",
            r.variant.to_string(),
            r.mean_rho,
            r.std_rho
        );
    }
    run.finish()?;
    Ok(())
}
