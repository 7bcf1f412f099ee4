//! Run orchestration for the `cellchar` binary: reproducible configs,
//! dataset/training/library/evaluation commands, and run manifests.
//!
//! Every command derives its randomness from the single run seed, writes
//! its outputs under one directory, and records a manifest with the
//! effective configuration and artifact hashes, so a rerun with the same
//! config is byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::dataset::{
    self, build_dataset, corner_grid, stimulus_grid, Corner, DatasetError, DatasetOptions,
    NormalizationSpec, Task, TaskSet, ALL_TASKS,
};
use crate::gnn::{self, load_checkpoint, save_checkpoint, ModelError, ModelParams, TrainConfig};
use crate::libgen::{
    build_library, emit_liberty_to_path, library_metrics, CharLibrary, LibError, LibrarySource,
    TaskModels,
};
use crate::netlist::{build_default_catalog, CellCatalog, NetlistError, Technology};
use crate::oracle::{enumerate_arcs, CharEngine, OracleError, SurrogateParams};
use crate::sta::{self, StaError};
use crate::util::{derive_seed, fmt_sig6, sha256_hex};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    /// Process exit code: 1 config, 2 data/coverage, 3 numeric failure.
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::AxisOutOfRange { .. } | DatasetError::GridTooSmall(_) => {
                CliError::Config(e.to_string())
            }
            DatasetError::NonPositiveTarget { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } | ModelError::NonPositiveTarget(_) => {
                CliError::Numeric(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<StaError> for CliError {
    fn from(e: StaError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NetlistError> for CliError {
    fn from(e: NetlistError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<crate::cellgraph::GraphError> for CliError {
    fn from(e: crate::cellgraph::GraphError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Effective settings of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub technology: Technology,
    /// Cell subset; empty = the full default catalog.
    pub cells: Vec<String>,
    pub train_points: usize,
    pub test_points: usize,
    pub n_slew: usize,
    pub n_load: usize,
    pub tasks: Vec<Task>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub valid_interval: usize,
    pub valid_fraction: f64,
    pub seed: u64,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub filter_degenerate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            technology: Technology::Silicon45,
            cells: Vec::new(),
            train_points: 5,
            test_points: 8,
            n_slew: 4,
            n_load: 4,
            tasks: ALL_TASKS.to_vec(),
            epochs: 5000,
            batch_size: 512,
            lr0: 1e-4,
            lr_halving_period: 500,
            valid_interval: 25,
            valid_fraction: 0.1,
            seed: 0,
            jobs: 1,
            out_dir: PathBuf::from("out"),
            filter_degenerate: true,
        }
    }
}

/// Environment variables `CELLCHAR_<KEY>` override file values; explicit
/// command-line flags override both (applied by the caller).
pub const ENV_PREFIX: &str = "CELLCHAR_";

impl RunConfig {
    /// Apply `key = value` pairs from config-file text.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), CliError> {
        let keys = [
            "technology",
            "cells",
            "train_points",
            "test_points",
            "n_slew",
            "n_load",
            "tasks",
            "epochs",
            "batch_size",
            "lr0",
            "lr_halving_period",
            "valid_interval",
            "valid_fraction",
            "seed",
            "jobs",
            "out",
            "filter_degenerate",
        ];
        for key in keys {
            let env_key = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&env_key) {
                self.apply_kv(key, &value)?;
            }
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad = |what: &str| CliError::Config(format!("bad {what}: {value}"));
        match key {
            "technology" => {
                self.technology =
                    Technology::parse(value).ok_or_else(|| bad("technology"))?
            }
            "cells" => {
                self.cells = if value == "default" || value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "train_points" => self.train_points = value.parse().map_err(|_| bad(key))?,
            "test_points" => self.test_points = value.parse().map_err(|_| bad(key))?,
            "n_slew" => self.n_slew = value.parse().map_err(|_| bad(key))?,
            "n_load" => self.n_load = value.parse().map_err(|_| bad(key))?,
            "tasks" => {
                let mut tasks = Vec::new();
                for part in value.split(',') {
                    tasks.push(
                        Task::parse(part.trim())
                            .ok_or_else(|| CliError::Config(format!("unknown task {part}")))?,
                    );
                }
                self.tasks = tasks;
            }
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "lr0" => self.lr0 = value.parse().map_err(|_| bad(key))?,
            "lr_halving_period" => {
                self.lr_halving_period = value.parse().map_err(|_| bad(key))?
            }
            "valid_interval" => self.valid_interval = value.parse().map_err(|_| bad(key))?,
            "valid_fraction" => self.valid_fraction = value.parse().map_err(|_| bad(key))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "jobs" => self.jobs = value.parse().map_err(|_| bad(key))?,
            "out" => self.out_dir = PathBuf::from(value),
            "filter_degenerate" => {
                self.filter_degenerate = value.parse().map_err(|_| bad(key))?
            }
            other => return Err(CliError::Config(format!("unknown config key {other}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.tasks.is_empty() {
            return Err(CliError::Config("task list is empty".into()));
        }
        if self.train_points < 2 || self.test_points < 2 {
            return Err(CliError::Config("corner grids need at least 2 points".into()));
        }
        if self.n_slew < 2 || self.n_load < 2 {
            return Err(CliError::Config("stimulus grid needs at least 2x2".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CliError::Config("epochs and batch size must be positive".into()));
        }
        if !(0.0 < self.valid_fraction && self.valid_fraction < 1.0) {
            return Err(CliError::Config("valid_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }

    /// Canonical text form; hashed into manifests.
    pub fn canonical(&self) -> String {
        let cells = if self.cells.is_empty() {
            "default".to_string()
        } else {
            self.cells.join(",")
        };
        let tasks: Vec<&str> = self.tasks.iter().map(|t| t.name()).collect();
        format!(
            "technology={}\ncells={}\ntrain_points={}\ntest_points={}\nn_slew={}\nn_load={}\n\
             tasks={}\nepochs={}\nbatch_size={}\nlr0={:e}\nlr_halving_period={}\n\
             valid_interval={}\nvalid_fraction={:e}\nseed={}\nfilter_degenerate={}\n",
            self.technology,
            cells,
            self.train_points,
            self.test_points,
            self.n_slew,
            self.n_load,
            tasks.join(","),
            self.epochs,
            self.batch_size,
            self.lr0,
            self.lr_halving_period,
            self.valid_interval,
            self.valid_fraction,
            self.seed,
            self.filter_degenerate,
        )
    }

    pub fn catalog(&self) -> Result<CellCatalog, CliError> {
        let full = build_default_catalog(self.technology);
        if self.cells.is_empty() {
            Ok(full)
        } else {
            let names: Vec<&str> = self.cells.iter().map(String::as_str).collect();
            Ok(full.subset(&names)?)
        }
    }

    pub fn train_config(&self, task: Task) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr0: self.lr0,
            lr_halving_period: self.lr_halving_period,
            seed: derive_seed(self.seed, task.name()),
            valid_interval: self.valid_interval,
            jobs: self.jobs,
            ..TrainConfig::default()
        }
    }
}

/// `vdd,vth,<temperature|cox>` triple.
pub fn parse_corner(technology: Technology, text: &str) -> Result<Corner, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "corner must be vdd,vth,{}",
            dataset::third_axis_name(technology)
        )));
    }
    let num = |s: &str| -> Result<f64, CliError> {
        s.parse()
            .map_err(|_| CliError::Config(format!("bad corner number {s}")))
    };
    let corner = Corner {
        technology,
        vdd: num(parts[0])?,
        vth: num(parts[1])?,
        third_axis: num(parts[2])?,
    };
    corner.validate().map_err(CliError::from)?;
    Ok(corner)
}

fn dataset_path(out: &Path, split: &str, task: Task) -> PathBuf {
    out.join(format!("{split}_{}.ds", task.name()))
}

fn norm_path(out: &Path, task: Task) -> PathBuf {
    out.join(format!("{}.norm", task.name()))
}

fn ckpt_path(out: &Path, task: Task) -> PathBuf {
    out.join(format!("{}.ckpt", task.name()))
}

/// Generate train/test datasets plus normalization specs and a manifest.
pub fn cmd_gen_data(config: &RunConfig) -> Result<String, CliError> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let catalog = config.catalog()?;
    let params = SurrogateParams::preset(config.technology);
    let train_corners = corner_grid(config.technology, config.train_points)?;
    let test_corners = corner_grid(config.technology, config.test_points)?;
    let stimulus = stimulus_grid(config.technology, config.n_slew, config.n_load)?;
    let options = DatasetOptions {
        filter_degenerate: config.filter_degenerate,
    };

    let mut manifest = ManifestBuilder::new(config);
    manifest.add_note("oracle_preset", config.technology.name());
    manifest.add_note("train_corners", &train_corners.len().to_string());
    manifest.add_note("test_corners", &test_corners.len().to_string());

    let train_sets = build_dataset(
        &catalog,
        &train_corners,
        &stimulus,
        &config.tasks,
        &params,
        options,
    )?;
    let test_sets = build_dataset(
        &catalog,
        &test_corners,
        &stimulus,
        &config.tasks,
        &params,
        options,
    )?;
    for (split, sets) in [("train", &train_sets), ("test", &test_sets)] {
        for set in sets.iter() {
            let path = dataset_path(&config.out_dir, split, set.task);
            dataset::write_samples_to_path(&path, set)?;
            manifest.add_file(&path)?;
            manifest.add_note(
                &format!("count_{split}_{}", set.task.name()),
                &set.samples.len().to_string(),
            );
        }
    }
    for set in &train_sets {
        if set.samples.is_empty() {
            return Err(CliError::Data(format!(
                "no training samples for task {}",
                set.task.name()
            )));
        }
        let spec = NormalizationSpec::fit(&set.samples);
        let path = norm_path(&config.out_dir, set.task);
        std::fs::write(&path, spec.to_text())?;
        manifest.add_file(&path)?;
    }
    let manifest_text = manifest.finish();
    std::fs::write(config.out_dir.join("manifest.txt"), &manifest_text)?;
    Ok(manifest_text)
}

fn load_task_set(out: &Path, split: &str, task: Task) -> Result<TaskSet, CliError> {
    let path = dataset_path(out, split, task);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "dataset {} not found; run gen-data first",
            path.display()
        )));
    }
    Ok(dataset::read_samples_from_path(&path)?)
}

/// Train one model per task on pre-generated datasets. Returns log lines.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<String, CliError> {
    config.validate()?;
    let mut summary = String::new();
    for &task in &config.tasks {
        let train_set = load_task_set(&config.out_dir, "train", task)?;
        let spec = NormalizationSpec::from_text(&std::fs::read_to_string(norm_path(
            &config.out_dir,
            task,
        ))?)?;
        // validation split: a seeded fraction of the training samples
        let n = train_set.samples.len();
        let mut idxs: Vec<usize> = (0..n).collect();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(derive_seed(
            config.seed,
            &format!("valid-{}", task.name()),
        ));
        use rand::seq::SliceRandom;
        idxs.shuffle(&mut rng);
        let n_valid = ((n as f64 * config.valid_fraction) as usize).clamp(1, n - 1);
        let valid_idx: std::collections::BTreeSet<usize> =
            idxs[..n_valid].iter().copied().collect();
        let mut train_samples = Vec::with_capacity(n - n_valid);
        let mut valid_samples = Vec::with_capacity(n_valid);
        for (i, s) in train_set.samples.iter().enumerate() {
            if valid_idx.contains(&i) {
                valid_samples.push(s.clone());
            } else {
                train_samples.push(s.clone());
            }
        }
        let prepared_train = gnn::prepare_set::<f32>(&train_samples, &spec);
        let prepared_valid = gnn::prepare_set::<f32>(&valid_samples, &spec);
        let cfg = config.train_config(task);

        let started = Instant::now();
        let outcome = if resume {
            let path = ckpt_path(&config.out_dir, task);
            let ckpt = load_checkpoint(&path).map_err(CliError::from)?;
            let (opt, epoch) = ckpt
                .opt
                .ok_or_else(|| CliError::Data("checkpoint has no optimizer state".into()))?;
            gnn::train_resume(
                ckpt.params.convert::<f32>(),
                opt.convert::<f32>(),
                epoch as usize,
                &prepared_train,
                &prepared_valid,
                &cfg,
            )?
        } else {
            gnn::train(&prepared_train, &prepared_valid, &cfg)?
        };
        let elapsed = started.elapsed().as_secs_f64();

        save_checkpoint(
            &ckpt_path(&config.out_dir, task),
            task,
            &outcome.best.convert::<f64>(),
            Some((
                &outcome.opt.convert::<f64>(),
                outcome.epochs_run as u64,
            )),
        )?;
        let mut log_csv = String::from("epoch,lr,train_mape,valid_mape\n");
        for entry in &outcome.log {
            writeln!(
                log_csv,
                "{},{:e},{},{}",
                entry.epoch,
                entry.lr,
                fmt_sig6(entry.train_mape),
                entry
                    .valid_mape
                    .map(fmt_sig6)
                    .unwrap_or_default()
            )
            .unwrap();
        }
        std::fs::write(
            config.out_dir.join(format!("{}.log.csv", task.name())),
            log_csv,
        )?;
        writeln!(
            summary,
            "{}: {} epochs, best valid MAPE {:.4}% ({:.1}s)",
            task.name(),
            outcome.epochs_run,
            outcome.best_valid,
            elapsed
        )
        .unwrap();
    }
    Ok(summary)
}

use rand::SeedableRng;

/// Load the five models plus normalization specs from a checkpoint dir.
pub fn load_models(dir: &Path) -> Result<TaskModels, CliError> {
    let mut loaded: BTreeMap<Task, (ModelParams<f64>, NormalizationSpec)> = BTreeMap::new();
    for task in ALL_TASKS {
        let ckpt = load_checkpoint(&ckpt_path(dir, task)).map_err(|e| {
            CliError::Data(format!("checkpoint for {}: {e}", task.name()))
        })?;
        if ckpt.task != task {
            return Err(CliError::Data(format!(
                "checkpoint task mismatch: expected {}, found {}",
                task.name(),
                ckpt.task.name()
            )));
        }
        let spec = NormalizationSpec::from_text(&std::fs::read_to_string(norm_path(dir, task))?)?;
        loaded.insert(task, (ckpt.params, spec));
    }
    let mut take = |t: Task| loaded.remove(&t).expect("all tasks loaded");
    Ok(TaskModels {
        delay: take(Task::Delay),
        capacitance: take(Task::Capacitance),
        flip_power: take(Task::FlipPower),
        non_flip_power: take(Task::NonFlipPower),
        leakage: take(Task::Leakage),
    })
}

pub enum EmitSource {
    Oracle,
    Models(PathBuf),
}

/// Emit a characterized library; with `compare` also emit the oracle
/// library and an accuracy report.
pub fn cmd_emit_lib(
    config: &RunConfig,
    source: EmitSource,
    corner: &Corner,
    compare: bool,
) -> Result<String, CliError> {
    std::fs::create_dir_all(&config.out_dir)?;
    let catalog = config.catalog()?;
    let params = SurrogateParams::preset(config.technology);
    let mut out = String::new();
    let oracle_lib = build_library(
        &LibrarySource::Oracle(&params),
        &catalog,
        corner,
        config.n_slew,
        config.n_load,
        config.jobs,
    )?;
    match source {
        EmitSource::Oracle => {
            let path = config.out_dir.join("oracle.lib");
            emit_liberty_to_path(&oracle_lib, &path)?;
            writeln!(out, "wrote {}", path.display()).unwrap();
        }
        EmitSource::Models(dir) => {
            let models = load_models(&dir)?;
            let pred_lib = build_library(
                &LibrarySource::Models(&models),
                &catalog,
                corner,
                config.n_slew,
                config.n_load,
                config.jobs,
            )?;
            let path = config.out_dir.join("predicted.lib");
            emit_liberty_to_path(&pred_lib, &path)?;
            writeln!(out, "wrote {}", path.display()).unwrap();
            if compare {
                let opath = config.out_dir.join("oracle.lib");
                emit_liberty_to_path(&oracle_lib, &opath)?;
                writeln!(out, "wrote {}", opath.display()).unwrap();
                let report = library_metrics(&pred_lib, &oracle_lib)?;
                let rpath = config.out_dir.join("library_metrics.csv");
                std::fs::write(&rpath, report.to_csv())?;
                writeln!(out, "wrote {}", rpath.display()).unwrap();
                writeln!(out, "{report}").unwrap();
            }
        }
    }
    Ok(out)
}

/// Timing/power comparison of two libraries over a netlist or the bundled
/// suite. Returns CSV-ish lines.
pub fn cmd_eval_system(
    netlists: &[sta::GateNetlist],
    truth: &CharLibrary,
    pred: &CharLibrary,
    freq_ghz: f64,
) -> Result<String, CliError> {
    let mut out = String::from(
        "benchmark,gates,wns_truth,wns_pred,wns_abs_err,leak_truth_nw,leak_pred_nw,leak_err_pct,dyn_truth_uw,dyn_pred_uw,dyn_err_pct\n",
    );
    for netlist in netlists {
        let d = sta::compare_libraries(netlist, truth, pred, freq_ghz)?;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            netlist.name,
            netlist.gates.len(),
            fmt_sig6(d.wns_truth),
            fmt_sig6(d.wns_pred),
            fmt_sig6(d.wns_abs_error),
            fmt_sig6(d.leakage_truth_nw),
            fmt_sig6(d.leakage_pred_nw),
            fmt_sig6(d.leakage_error_pct),
            fmt_sig6(d.dynamic_truth_uw),
            fmt_sig6(d.dynamic_pred_uw),
            fmt_sig6(d.dynamic_error_pct),
        )
        .unwrap();
    }
    Ok(out)
}

/// Drive-strength interpolation study: size each netlist against the base
/// library and against base plus the new drives, at a range of periods
/// tied to the per-netlist minimum feasible period.
pub fn cmd_interp_drive(
    base_catalog: &CellCatalog,
    new_drives: &[String],
    netlists: &[sta::GateNetlist],
    corner: &Corner,
    period_factors: &[f64],
    grid: (usize, usize),
    jobs: usize,
) -> Result<String, CliError> {
    let params = SurrogateParams::preset(base_catalog.technology);
    let base_lib = build_library(
        &LibrarySource::Oracle(&params),
        base_catalog,
        corner,
        grid.0,
        grid.1,
        jobs,
    )?;
    let mut extended_catalog = base_catalog.clone();
    for name in new_drives {
        let (base, drive) = crate::netlist::parse_cell_name(name)
            .ok_or_else(|| CliError::Config(format!("bad cell name {name}")))?;
        let cell = crate::netlist::build_cell(base, drive)?;
        extended_catalog.insert(cell);
    }
    let ext_lib = build_library(
        &LibrarySource::Oracle(&params),
        &extended_catalog,
        corner,
        grid.0,
        grid.1,
        jobs,
    )?;

    let mut out = String::from("benchmark");
    for f in period_factors {
        out.push_str(&format!(",ppa_impro_pct@{}xmin", fmt_sig6(*f)));
    }
    out.push('\n');
    for netlist in netlists {
        let min_period = sta::min_feasible_period(netlist, &base_lib, 0.01)?;
        out.push_str(&netlist.name);
        for &factor in period_factors {
            let period = min_period * factor;
            let coarse = sta::size_gates(netlist, &base_lib, period)?;
            let fine = sta::size_gates(netlist, &ext_lib, period)?;
            if !coarse.feasible || !fine.feasible {
                out.push_str(",infeasible");
                continue;
            }
            let impro = sta::ppa_improvement(
                (coarse.area_after, coarse.power_after_uw),
                (fine.area_after, fine.power_after_uw),
            );
            out.push_str(&format!(",{}", fmt_sig6(impro)));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Model-vs-oracle characterization timing over the full library's query
/// set at one corner. Mirrors a loading-time row plus per-task rows.
pub fn cmd_bench_runtime(
    config: &RunConfig,
    checkpoint_dir: &Path,
    corner: &Corner,
) -> Result<String, CliError> {
    let catalog = config.catalog()?;
    let params = SurrogateParams::preset(config.technology);

    let load_start = Instant::now();
    let models = load_models(checkpoint_dir)?;
    let load_time = load_start.elapsed().as_secs_f64();

    // Build the query set once: every (cell, arc, grid point) plus leakage
    // states and capacitance pins.
    use crate::cellgraph::{encode, FeatureLayout, Stimulus};
    let slews = dataset::linspace(
        dataset::stimulus_ranges(config.technology).0 .0,
        dataset::stimulus_ranges(config.technology).0 .1,
        config.n_slew,
    );
    let loads = dataset::linspace(
        dataset::stimulus_ranges(config.technology).1 .0,
        dataset::stimulus_ranges(config.technology).1 .1,
        config.n_load,
    );
    let mut graphs_by_task: BTreeMap<Task, Vec<crate::cellgraph::CellGraph>> = BTreeMap::new();
    let mut oracle_work: Vec<(usize, usize, f64, f64)> = Vec::new(); // cell, arc, slew, load
    let mut leak_work: Vec<(usize, usize)> = Vec::new();
    let mut cap_work: Vec<(usize, usize)> = Vec::new();
    for (ci, cell) in catalog.cells().iter().enumerate() {
        let arcs = enumerate_arcs(cell)?;
        for (ai, arc) in arcs.iter().enumerate() {
            for &slew in &slews {
                for &load in &loads {
                    let stim = Stimulus::DelayPower {
                        slew,
                        load,
                        current: arc.pre.clone(),
                        next: arc.post.clone(),
                    };
                    let graph = encode(cell, corner, &stim, FeatureLayout::DelayPower)?;
                    let task = if arc.output_flips {
                        Task::Delay
                    } else {
                        Task::NonFlipPower
                    };
                    graphs_by_task.entry(task).or_default().push(graph.clone());
                    if arc.output_flips {
                        graphs_by_task
                            .entry(Task::FlipPower)
                            .or_default()
                            .push(graph);
                    }
                    oracle_work.push((ci, ai, slew, load));
                }
            }
        }
        let n = cell.inputs.len();
        for state_idx in 0..(1usize << n) {
            let state = crate::oracle::index_to_bits(state_idx, n);
            graphs_by_task.entry(Task::Leakage).or_default().push(encode(
                cell,
                corner,
                &Stimulus::Leakage { state },
                FeatureLayout::Leakage,
            )?);
            leak_work.push((ci, state_idx));
        }
        for pin in 0..n {
            graphs_by_task
                .entry(Task::Capacitance)
                .or_default()
                .push(encode(
                    cell,
                    corner,
                    &Stimulus::Capacitance { pin },
                    FeatureLayout::Capacitance,
                )?);
            cap_work.push((ci, pin));
        }
    }

    let mut out = String::new();
    writeln!(out, "rows: phase, queries, seconds").unwrap();
    writeln!(out, "model_environment_loading,,{load_time:.4}").unwrap();
    let mut model_total = 0.0;
    let mut model_queries = 0usize;
    for task in ALL_TASKS {
        let graphs = graphs_by_task.get(&task).cloned().unwrap_or_default();
        let (params_t, spec) = models.for_task(task);
        let t = Instant::now();
        let preds = gnn::predict_graphs(params_t, spec, &graphs, config.jobs)?;
        let dt = t.elapsed().as_secs_f64();
        std::hint::black_box(&preds);
        writeln!(out, "model_{},{},{dt:.4}", task.name(), graphs.len()).unwrap();
        model_total += dt;
        model_queries += graphs.len();
    }

    let oracle_start = Instant::now();
    let mut acc = 0.0f64;
    let mut oracle_queries = 0usize;
    for (ci, cell) in catalog.cells().iter().enumerate() {
        let engine = CharEngine::new(cell, &params);
        let arcs = enumerate_arcs(cell)?;
        for &(wci, ai, slew, load) in oracle_work.iter().filter(|(wci, ..)| *wci == ci) {
            let _ = wci;
            let point = engine.characterize(&arcs[ai], corner, slew, load)?;
            acc += point.delay.unwrap_or(0.0)
                + point.flip_energy.unwrap_or(0.0)
                + point.non_flip_energy.unwrap_or(0.0);
            oracle_queries += 1;
            if arcs[ai].output_flips {
                oracle_queries += 1; // delay and flip energy both served
            }
        }
        for &(wci, state_idx) in leak_work.iter().filter(|(wci, _)| *wci == ci) {
            let _ = wci;
            let state = crate::oracle::index_to_bits(state_idx, cell.inputs.len());
            acc += engine.leakage_power(&state, corner)?;
            oracle_queries += 1;
        }
        for &(wci, pin) in cap_work.iter().filter(|(wci, _)| *wci == ci) {
            let _ = wci;
            acc += engine.pin_capacitance(pin, corner);
            oracle_queries += 1;
        }
    }
    let oracle_time = oracle_start.elapsed().as_secs_f64();
    std::hint::black_box(acc);
    writeln!(out, "oracle_characterization,{oracle_queries},{oracle_time:.4}").unwrap();
    writeln!(
        out,
        "model_total,{model_queries},{model_total:.4}"
    )
    .unwrap();
    writeln!(
        out,
        "speedup_oracle_over_model,,{:.3}",
        oracle_time / model_total.max(1e-12)
    )
    .unwrap();
    Ok(out)
}

/// Manifest: canonical config, notes, and artifact hashes.
struct ManifestBuilder {
    lines: Vec<String>,
}

impl ManifestBuilder {
    fn new(config: &RunConfig) -> ManifestBuilder {
        let mut lines = Vec::new();
        lines.push(format!("config_sha256={}", sha256_hex(config.canonical().as_bytes())));
        for line in config.canonical().lines() {
            lines.push(format!("config.{line}"));
        }
        ManifestBuilder { lines }
    }

    fn add_note(&mut self, key: &str, value: &str) {
        self.lines.push(format!("{key}={value}"));
    }

    fn add_file(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(path)?;
        let name = path
            .file_name()
            .map(|s| s.to_string_lossy().to_string())
            .unwrap_or_default();
        self.lines.push(format!("sha256.{name}={}", sha256_hex(&bytes)));
        Ok(())
    }

    fn finish(mut self) -> String {
        self.lines.sort();
        let mut text: String = self.lines.join("\n");
        text.push('\n');
        let total = sha256_hex(text.as_bytes());
        format!("{text}manifest_sha256={total}\n")
    }
}
