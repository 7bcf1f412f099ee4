//! Characterized libraries: slew/load lookup tables per timing arc, energy
//! and leakage data, emission to a Liberty-style subset, and the accuracy
//! metrics used to compare predicted libraries against oracle ground truth.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::cellgraph::{encode, FeatureLayout, GraphError, Stimulus};
use crate::dataset::{
    linspace, stimulus_ranges, Corner, DatasetError, NormalizationSpec, Task,
};
use crate::gnn::{predict_graphs, ModelError, ModelParams};
use crate::netlist::{parse_cell_name, CellCatalog, CellNetlist, NetlistError, Technology};
use crate::oracle::{enumerate_arcs, Arc, CharEngine, OracleError, SurrogateParams};
use crate::util::fmt_sig6;

#[derive(Debug, Error)]
pub enum LibError {
    #[error("no cells")]
    EmptyCatalog,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unsupported construct {token}")]
    Unsupported { line: usize, token: String },
    #[error("metric truth value {0} must be positive")]
    TruthNotPositive(f64),
    #[error("metric vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("library shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Two-dimensional lookup table indexed by input slew and output load.
#[derive(Debug, Clone, PartialEq)]
pub struct NldmTable {
    pub index1: Vec<f64>,
    pub index2: Vec<f64>,
    /// Row-major: `values[i][j]` at `(index1[i], index2[j])`.
    pub values: Vec<Vec<f64>>,
}

impl NldmTable {
    pub fn validate(&self) -> Result<(), LibError> {
        for idx in [&self.index1, &self.index2] {
            if idx.len() < 2 || idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(LibError::Shape("indices must be strictly increasing".into()));
            }
        }
        if self.values.len() != self.index1.len()
            || self.values.iter().any(|r| r.len() != self.index2.len())
        {
            return Err(LibError::Shape("value matrix does not match indices".into()));
        }
        Ok(())
    }

    /// Bilinear interpolation with clamping to the table's index ranges.
    pub fn lookup(&self, slew: f64, load: f64) -> f64 {
        let (i, tx) = segment(&self.index1, slew);
        let (j, ty) = segment(&self.index2, load);
        let v00 = self.values[i][j];
        let v01 = self.values[i][j + 1];
        let v10 = self.values[i + 1][j];
        let v11 = self.values[i + 1][j + 1];
        let a = v00 + (v01 - v00) * ty;
        let b = v10 + (v11 - v10) * ty;
        a + (b - a) * tx
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flatten().copied()
    }
}

/// Segment index and clamped interpolation weight along one axis.
fn segment(index: &[f64], x: f64) -> (usize, f64) {
    let n = index.len();
    if x <= index[0] {
        return (0, 0.0);
    }
    if x >= index[n - 1] {
        return (n - 2, 1.0);
    }
    let mut i = index.partition_point(|&v| v <= x);
    i = i.clamp(1, n - 1);
    let lo = index[i - 1];
    let hi = index[i];
    (i - 1, (x - lo) / (hi - lo))
}

/// Delay/transition tables for one sensitized input transition pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingGroup {
    pub related_pin: usize,
    /// Side-input condition in pin order, e.g. `B&!C`; empty when the cell
    /// has a single input.
    pub when: String,
    pub cell_rise: NldmTable,
    pub rise_transition: NldmTable,
    pub cell_fall: NldmTable,
    pub fall_transition: NldmTable,
}

/// Switching energy tables for an output-flipping pair (on the output pin).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerGroup {
    pub related_pin: usize,
    pub when: String,
    pub rise_power: NldmTable,
    pub fall_power: NldmTable,
}

/// Energy charged when an input toggles without an output flip (on the
/// input pin itself).
#[derive(Debug, Clone, PartialEq)]
pub struct InputPowerGroup {
    pub pin: usize,
    pub when: String,
    pub rise_power: NldmTable,
    pub fall_power: NldmTable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageEntry {
    /// Input state, pin 0 as the most significant bit.
    pub state_index: usize,
    pub when: String,
    /// nW.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellEntry {
    pub name: String,
    pub area: f64,
    pub inputs: Vec<String>,
    pub output: String,
    pub pin_caps: Vec<f64>,
    pub leakage: Vec<LeakageEntry>,
    pub timing: Vec<TimingGroup>,
    pub power: Vec<PowerGroup>,
    pub input_power: Vec<InputPowerGroup>,
    /// Grid points where the device model hit its degenerate floor.
    pub degenerate_points: usize,
}

impl CellEntry {
    pub fn mean_leakage(&self) -> f64 {
        self.leakage.iter().map(|l| l.value).sum::<f64>() / self.leakage.len() as f64
    }
}

/// A characterized library at one corner.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLibrary {
    pub name: String,
    pub technology: Technology,
    pub corner: Corner,
    pub slew_index: Vec<f64>,
    pub load_index: Vec<f64>,
    pub cells: Vec<CellEntry>,
}

impl CharLibrary {
    pub fn cell(&self, name: &str) -> Option<&CellEntry> {
        self.cells.iter().find(|c| c.name == name)
    }

    /// Library cells implementing the same function at other drives,
    /// sorted ascending by drive. Includes `name` itself.
    pub fn drive_variants(&self, name: &str) -> Vec<&CellEntry> {
        let Some((base, _)) = parse_cell_name(name) else {
            return Vec::new();
        };
        let mut v: Vec<(&CellEntry, u32)> = self
            .cells
            .iter()
            .filter_map(|c| {
                parse_cell_name(&c.name)
                    .filter(|(b, _)| *b == base)
                    .map(|(_, d)| (c, d))
            })
            .collect();
        v.sort_by_key(|&(_, d)| d);
        v.into_iter().map(|(c, _)| c).collect()
    }
}

/// Ground-truth or model-backed characterization source.
pub enum LibrarySource<'a> {
    Oracle(&'a SurrogateParams),
    Models(&'a TaskModels),
}

/// One trained model per task, each with the normalization fitted on its
/// own training set.
pub struct TaskModels {
    pub delay: (ModelParams<f64>, NormalizationSpec),
    pub capacitance: (ModelParams<f64>, NormalizationSpec),
    pub flip_power: (ModelParams<f64>, NormalizationSpec),
    pub non_flip_power: (ModelParams<f64>, NormalizationSpec),
    pub leakage: (ModelParams<f64>, NormalizationSpec),
}

impl TaskModels {
    pub fn for_task(&self, task: Task) -> (&ModelParams<f64>, &NormalizationSpec) {
        let (p, s) = match task {
            Task::Delay => &self.delay,
            Task::Capacitance => &self.capacitance,
            Task::FlipPower => &self.flip_power,
            Task::NonFlipPower => &self.non_flip_power,
            Task::Leakage => &self.leakage,
        };
        (p, s)
    }
}

/// Per-cell raw characterization, keyed by arc index.
struct RawCellChar {
    delay: BTreeMap<usize, Vec<Vec<f64>>>,
    out_slew: BTreeMap<usize, Vec<Vec<f64>>>,
    flip_energy: BTreeMap<usize, Vec<Vec<f64>>>,
    non_flip_energy: BTreeMap<usize, Vec<Vec<f64>>>,
    leakage: Vec<f64>,
    pin_caps: Vec<f64>,
    degenerate: usize,
}

impl RawCellChar {
    fn empty() -> RawCellChar {
        RawCellChar {
            delay: BTreeMap::new(),
            out_slew: BTreeMap::new(),
            flip_energy: BTreeMap::new(),
            non_flip_energy: BTreeMap::new(),
            leakage: Vec::new(),
            pin_caps: Vec::new(),
            degenerate: 0,
        }
    }
}

fn raw_from_oracle(
    cell: &CellNetlist,
    arcs: &[Arc],
    corner: &Corner,
    slews: &[f64],
    loads: &[f64],
    params: &SurrogateParams,
) -> Result<RawCellChar, LibError> {
    let engine = CharEngine::new(cell, params);
    let mut raw = RawCellChar::empty();
    for (ai, arc) in arcs.iter().enumerate() {
        let mut d = vec![vec![0.0; loads.len()]; slews.len()];
        let mut s = d.clone();
        let mut e = d.clone();
        for (i, &slew) in slews.iter().enumerate() {
            for (j, &load) in loads.iter().enumerate() {
                let point = engine.characterize(arc, corner, slew, load)?;
                if point.degenerate {
                    raw.degenerate += 1;
                }
                if arc.output_flips {
                    d[i][j] = point.delay.expect("flip arc");
                    s[i][j] = point.out_slew.expect("flip arc");
                    e[i][j] = point.flip_energy.expect("flip arc");
                } else {
                    e[i][j] = point.non_flip_energy.expect("static arc");
                }
            }
        }
        if arc.output_flips {
            raw.delay.insert(ai, d);
            raw.out_slew.insert(ai, s);
            raw.flip_energy.insert(ai, e);
        } else {
            raw.non_flip_energy.insert(ai, e);
        }
    }
    let n = cell.inputs.len();
    for state_idx in 0..(1usize << n) {
        let state = crate::oracle::index_to_bits(state_idx, n);
        raw.leakage.push(engine.leakage_power(&state, corner)?);
    }
    for pin in 0..n {
        raw.pin_caps.push(engine.pin_capacitance(pin, corner));
    }
    Ok(raw)
}

fn raw_from_models(
    cell: &CellNetlist,
    arcs: &[Arc],
    corner: &Corner,
    slews: &[f64],
    loads: &[f64],
    models: &TaskModels,
    jobs: usize,
) -> Result<RawCellChar, LibError> {
    let mut raw = RawCellChar::empty();
    for task in [Task::Delay, Task::FlipPower, Task::NonFlipPower] {
        let want_flip = task != Task::NonFlipPower;
        let (params, spec) = models.for_task(task);
        let mut graphs = Vec::new();
        let mut slots = Vec::new();
        for (ai, arc) in arcs.iter().enumerate() {
            if arc.output_flips != want_flip {
                continue;
            }
            for (i, &slew) in slews.iter().enumerate() {
                for (j, &load) in loads.iter().enumerate() {
                    let stim = Stimulus::DelayPower {
                        slew,
                        load,
                        current: arc.pre.clone(),
                        next: arc.post.clone(),
                    };
                    graphs.push(encode(cell, corner, &stim, FeatureLayout::DelayPower)?);
                    slots.push((ai, i, j));
                }
            }
        }
        let preds = predict_graphs(params, spec, &graphs, jobs)?;
        for (&(ai, i, j), &value) in slots.iter().zip(&preds) {
            let grid = match task {
                Task::Delay => raw.delay.entry(ai),
                Task::FlipPower => raw.flip_energy.entry(ai),
                Task::NonFlipPower => raw.non_flip_energy.entry(ai),
                _ => unreachable!(),
            }
            .or_insert_with(|| vec![vec![0.0; loads.len()]; slews.len()]);
            grid[i][j] = value;
        }
    }
    let n = cell.inputs.len();
    {
        let (params, spec) = models.for_task(Task::Leakage);
        let mut graphs = Vec::new();
        for state_idx in 0..(1usize << n) {
            let state = crate::oracle::index_to_bits(state_idx, n);
            graphs.push(encode(
                cell,
                corner,
                &Stimulus::Leakage { state },
                FeatureLayout::Leakage,
            )?);
        }
        raw.leakage = predict_graphs(params, spec, &graphs, jobs)?;
    }
    {
        let (params, spec) = models.for_task(Task::Capacitance);
        let mut graphs = Vec::new();
        for pin in 0..n {
            graphs.push(encode(
                cell,
                corner,
                &Stimulus::Capacitance { pin },
                FeatureLayout::Capacitance,
            )?);
        }
        raw.pin_caps = predict_graphs(params, spec, &graphs, jobs)?;
    }
    Ok(raw)
}

/// When-condition over the non-switching pins, `B&!C` style.
fn side_condition(inputs: &[String], pin: usize, side: &[bool]) -> String {
    let mut parts = Vec::new();
    let mut side_it = side.iter();
    for (i, name) in inputs.iter().enumerate() {
        if i == pin {
            continue;
        }
        let v = *side_it.next().expect("side covers other pins");
        parts.push(if v {
            name.clone()
        } else {
            format!("!{name}")
        });
    }
    parts.join("&")
}

fn state_condition(inputs: &[String], state_index: usize) -> String {
    let bits = crate::oracle::index_to_bits(state_index, inputs.len());
    inputs
        .iter()
        .zip(&bits)
        .map(|(name, &b)| if b { name.clone() } else { format!("!{name}") })
        .collect::<Vec<_>>()
        .join("&")
}

/// Build a characterized library over an inclusive slew/load grid.
pub fn build_library(
    source: &LibrarySource,
    catalog: &CellCatalog,
    corner: &Corner,
    n_slew: usize,
    n_load: usize,
    jobs: usize,
) -> Result<CharLibrary, LibError> {
    if catalog.is_empty() {
        return Err(LibError::EmptyCatalog);
    }
    if n_slew < 2 || n_load < 2 {
        return Err(LibError::Shape("table grid needs at least 2x2 points".into()));
    }
    corner.validate()?;
    let technology = catalog.technology;
    let (slew_range, load_range) = stimulus_ranges(technology);
    let slews = linspace(slew_range.0, slew_range.1, n_slew);
    let loads = linspace(load_range.0, load_range.1, n_load);

    let mut cells = Vec::with_capacity(catalog.len());
    for cell in catalog.cells() {
        let arcs = enumerate_arcs(cell)?;
        let raw = match source {
            LibrarySource::Oracle(params) => {
                raw_from_oracle(cell, &arcs, corner, &slews, &loads, params)?
            }
            LibrarySource::Models(models) => {
                raw_from_models(cell, &arcs, corner, &slews, &loads, models, jobs)?
            }
        };
        cells.push(assemble_entry(cell, &arcs, raw, &slews, &loads, source)?);
    }
    let source_tag = match source {
        LibrarySource::Oracle(_) => "oracle",
        LibrarySource::Models(_) => "predicted",
    };
    Ok(CharLibrary {
        name: format!("cellchar_{}_{}", technology.name(), source_tag),
        technology,
        corner: *corner,
        slew_index: slews,
        load_index: loads,
        cells,
    })
}

fn table_from(grid: &[Vec<f64>], slews: &[f64], loads: &[f64]) -> NldmTable {
    NldmTable {
        index1: slews.to_vec(),
        index2: loads.to_vec(),
        values: grid.to_vec(),
    }
}

fn assemble_entry(
    cell: &CellNetlist,
    arcs: &[Arc],
    raw: RawCellChar,
    slews: &[f64],
    loads: &[f64],
    source: &LibrarySource,
) -> Result<CellEntry, LibError> {
    let truth = crate::oracle::boolean_function(cell)?;
    let mut timing = Vec::new();
    let mut power = Vec::new();
    let mut input_power = Vec::new();

    // group the two directions of each (pin, side) pair
    let mut pairs: BTreeMap<(usize, Vec<bool>), Vec<usize>> = BTreeMap::new();
    for (ai, arc) in arcs.iter().enumerate() {
        pairs
            .entry((arc.pin, arc.side.clone()))
            .or_default()
            .push(ai);
    }
    for ((pin, side), arc_idxs) in &pairs {
        let when = side_condition(&cell.inputs, *pin, side);
        let flips = arcs[arc_idxs[0]].output_flips;
        if flips {
            let mut cell_rise = None;
            let mut rise_transition = None;
            let mut rise_power_tbl = None;
            let mut cell_fall = None;
            let mut fall_transition = None;
            let mut fall_power_tbl = None;
            for &ai in arc_idxs {
                let arc = &arcs[ai];
                let out_post = truth[crate::oracle::bits_to_index(&arc.post)];
                let delay = table_from(&raw.delay[&ai], slews, loads);
                let trans = match source {
                    LibrarySource::Oracle(_) => table_from(&raw.out_slew[&ai], slews, loads),
                    LibrarySource::Models(_) => derive_transition(
                        &raw.delay[&ai],
                        slews,
                        loads,
                        source_params(source),
                    ),
                };
                let energy = table_from(&raw.flip_energy[&ai], slews, loads);
                if out_post {
                    cell_rise = Some(delay);
                    rise_transition = Some(trans);
                    rise_power_tbl = Some(energy);
                } else {
                    cell_fall = Some(delay);
                    fall_transition = Some(trans);
                    fall_power_tbl = Some(energy);
                }
            }
            timing.push(TimingGroup {
                related_pin: *pin,
                when: when.clone(),
                cell_rise: cell_rise.ok_or_else(|| LibError::Shape("missing rise arc".into()))?,
                rise_transition: rise_transition.unwrap(),
                cell_fall: cell_fall.ok_or_else(|| LibError::Shape("missing fall arc".into()))?,
                fall_transition: fall_transition.unwrap(),
            });
            power.push(PowerGroup {
                related_pin: *pin,
                when,
                rise_power: rise_power_tbl.unwrap(),
                fall_power: fall_power_tbl.unwrap(),
            });
        } else {
            let mut rise_power = None;
            let mut fall_power = None;
            for &ai in arc_idxs {
                let arc = &arcs[ai];
                let tbl = table_from(&raw.non_flip_energy[&ai], slews, loads);
                if arc.rising {
                    rise_power = Some(tbl);
                } else {
                    fall_power = Some(tbl);
                }
            }
            input_power.push(InputPowerGroup {
                pin: *pin,
                when,
                rise_power: rise_power.unwrap(),
                fall_power: fall_power.unwrap(),
            });
        }
    }

    let leakage = raw
        .leakage
        .iter()
        .enumerate()
        .map(|(state_index, &value)| LeakageEntry {
            state_index,
            when: state_condition(&cell.inputs, state_index),
            value,
        })
        .collect();

    Ok(CellEntry {
        name: cell.name.clone(),
        area: cell.width_sum(),
        inputs: cell.inputs.clone(),
        output: cell.output.clone(),
        pin_caps: raw.pin_caps,
        leakage,
        timing,
        power,
        input_power,
        degenerate_points: raw.degenerate,
    })
}

fn source_params<'a>(source: &'a LibrarySource) -> &'a SurrogateParams {
    match source {
        LibrarySource::Oracle(p) => p,
        // transition derivation constants follow the library's technology
        // defaults; the model source carries no device constants itself
        LibrarySource::Models(_) => &SILICON_DEFAULTS,
    }
}

use std::sync::LazyLock;
static SILICON_DEFAULTS: LazyLock<SurrogateParams> = LazyLock::new(SurrogateParams::silicon45);

/// Transition estimate for model libraries: the device model ties output
/// slew to the RC part of delay by a fixed ratio, and subtracting the
/// input-slew term recovers that RC part from the predicted delay.
fn derive_transition(
    delay_grid: &[Vec<f64>],
    slews: &[f64],
    loads: &[f64],
    params: &SurrogateParams,
) -> NldmTable {
    let ratio = params.eta_slew / std::f64::consts::LN_2;
    let offset = params.beta_slew;
    let mut values = vec![vec![0.0; loads.len()]; slews.len()];
    for (i, &slew) in slews.iter().enumerate() {
        for (j, _) in loads.iter().enumerate() {
            let rc_part = (delay_grid[i][j] - offset * slew).max(0.0);
            values[i][j] = ratio * rc_part;
        }
    }
    NldmTable {
        index1: slews.to_vec(),
        index2: loads.to_vec(),
        values,
    }
}

/// Accuracy of a prediction vector against positive ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskMetrics {
    pub mape: f64,
    pub rmspe: f64,
    /// None when the truth vector is constant (undefined, not zero).
    pub r2: Option<f64>,
    pub count: usize,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<TaskMetrics, LibError> {
    if pred.len() != truth.len() {
        return Err(LibError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(LibError::Shape("empty metric vectors".into()));
    }
    let n = truth.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (&p, &t) in pred.iter().zip(truth) {
        if !(t > 0.0) {
            return Err(LibError::TruthNotPositive(t));
        }
        let r = (p - t) / t;
        abs_sum += r.abs();
        sq_sum += r * r;
    }
    let mean: f64 = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|&t| (t - mean) * (t - mean)).sum();
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum();
    let r2 = if ss_tot > 0.0 {
        Some(1.0 - ss_res / ss_tot)
    } else {
        None
    };
    Ok(TaskMetrics {
        mape: 100.0 * abs_sum / n,
        rmspe: 100.0 * (sq_sum / n).sqrt(),
        r2,
        count: truth.len(),
    })
}

/// Per-task and per-cell accuracy report.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub task: Task,
    /// None = aggregate over all cells.
    pub cell: Option<String>,
    pub metrics: TaskMetrics,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,cell,count,mape_pct,rmspe_pct,r2\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.task.name(),
                row.cell.as_deref().unwrap_or("ALL"),
                row.metrics.count,
                fmt_sig6(row.metrics.mape),
                fmt_sig6(row.metrics.rmspe),
                row.metrics
                    .r2
                    .map(fmt_sig6)
                    .unwrap_or_else(|| "undefined".into()),
            ));
        }
        out
    }

    /// Aggregate row for one task, if present.
    pub fn task_total(&self, task: Task) -> Option<&TaskMetrics> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.cell.is_none())
            .map(|r| &r.metrics)
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:<10} {:>8} {:>10} {:>10} {:>10}",
            "task", "cell", "points", "MAPE%", "RMSPE%", "R2"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<16} {:<10} {:>8} {:>10} {:>10} {:>10}",
                row.task.name(),
                row.cell.as_deref().unwrap_or("ALL"),
                row.metrics.count,
                format!("{:.4}", row.metrics.mape),
                format!("{:.4}", row.metrics.rmspe),
                row.metrics
                    .r2
                    .map(|r| format!("{r:.5}"))
                    .unwrap_or_else(|| "undef".into()),
            )?;
        }
        Ok(())
    }
}

/// Flatten one task's values out of a library, in a fixed traversal order.
pub fn task_values(lib: &CharLibrary, task: Task) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for cell in &lib.cells {
        match task {
            Task::Delay => {
                for g in &cell.timing {
                    for t in [&g.cell_rise, &g.cell_fall] {
                        out.extend(t.iter_values().map(|v| (cell.name.clone(), v)));
                    }
                }
            }
            Task::FlipPower => {
                for g in &cell.power {
                    for t in [&g.rise_power, &g.fall_power] {
                        out.extend(t.iter_values().map(|v| (cell.name.clone(), v)));
                    }
                }
            }
            Task::NonFlipPower => {
                for g in &cell.input_power {
                    for t in [&g.rise_power, &g.fall_power] {
                        out.extend(t.iter_values().map(|v| (cell.name.clone(), v)));
                    }
                }
            }
            Task::Leakage => {
                out.extend(cell.leakage.iter().map(|l| (cell.name.clone(), l.value)));
            }
            Task::Capacitance => {
                out.extend(cell.pin_caps.iter().map(|&v| (cell.name.clone(), v)));
            }
        }
    }
    out
}

/// Compare two structurally identical libraries task by task, with
/// per-cell breakdowns.
pub fn library_metrics(pred: &CharLibrary, truth: &CharLibrary) -> Result<MetricReport, LibError> {
    let mut rows = Vec::new();
    for task in crate::dataset::ALL_TASKS {
        let pv = task_values(pred, task);
        let tv = task_values(truth, task);
        if pv.len() != tv.len() {
            return Err(LibError::LengthMismatch(pv.len(), tv.len()));
        }
        if pv.is_empty() {
            continue;
        }
        let pnums: Vec<f64> = pv.iter().map(|(_, v)| *v).collect();
        let tnums: Vec<f64> = tv.iter().map(|(_, v)| *v).collect();
        rows.push(MetricRow {
            task,
            cell: None,
            metrics: metrics(&pnums, &tnums)?,
        });
        let mut by_cell: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((cp, vp), (ct, vt)) in pv.iter().zip(&tv) {
            debug_assert_eq!(cp, ct);
            let slot = by_cell.entry(cp).or_default();
            slot.0.push(*vp);
            slot.1.push(*vt);
        }
        for (cell, (p, t)) in by_cell {
            rows.push(MetricRow {
                task,
                cell: Some(cell.to_string()),
                metrics: metrics(&p, &t)?,
            });
        }
    }
    Ok(MetricReport { rows })
}

// ---------------------------------------------------------------------------
// Liberty-subset emission and parsing
// ---------------------------------------------------------------------------

struct LibWriter {
    out: String,
    depth: usize,
}

impl LibWriter {
    fn line(&mut self, s: &str) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
        self.out.push_str(s);
        self.out.push('\n');
    }

    fn open(&mut self, s: &str) {
        self.line(&format!("{s} {{"));
        self.depth += 1;
    }

    fn close(&mut self) {
        self.depth -= 1;
        self.line("}");
    }

    fn attr(&mut self, key: &str, value: &str) {
        self.line(&format!("{key} : {value};"));
    }
}

fn index_attr(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|&v| fmt_sig6(v)).collect();
    format!("(\"{}\")", parts.join(", "))
}

fn write_table(w: &mut LibWriter, kind: &str, template: &str, table: &NldmTable) {
    w.open(&format!("{kind}({template})"));
    w.line(&format!("index_1 {};", index_attr(&table.index1)));
    w.line(&format!("index_2 {};", index_attr(&table.index2)));
    let rows: Vec<String> = table
        .values
        .iter()
        .map(|row| {
            let parts: Vec<String> = row.iter().map(|&v| fmt_sig6(v)).collect();
            format!("\"{}\"", parts.join(", "))
        })
        .collect();
    w.line(&format!("values ({});", rows.join(", ")));
    w.close();
}

/// Serialize a library in the subset grammar. Deterministic: fixed
/// attribute order, 6-significant-digit numbers, two-space indentation.
pub fn emit_liberty(lib: &CharLibrary) -> Result<String, LibError> {
    if lib.cells.is_empty() {
        return Err(LibError::EmptyCatalog);
    }
    let template = format!("tmpl_{}x{}", lib.slew_index.len(), lib.load_index.len());
    let mut w = LibWriter {
        out: String::new(),
        depth: 0,
    };
    w.open(&format!("library({})", lib.name));
    w.attr("delay_model", "table_lookup");
    w.attr("time_unit", &format!("\"1{}\"", lib.technology.time_unit()));
    w.attr("voltage_unit", "\"1V\"");
    w.attr("leakage_power_unit", "\"1nW\"");
    w.line("capacitive_load_unit (1, ff);");
    w.attr("technology_tag", lib.technology.name());
    w.attr("corner_vdd", &fmt_sig6(lib.corner.vdd));
    w.attr("corner_vth", &fmt_sig6(lib.corner.vth));
    match lib.technology {
        Technology::Silicon45 => w.attr("corner_temperature", &fmt_sig6(lib.corner.third_axis)),
        Technology::Flexible => w.attr("corner_cox", &fmt_sig6(lib.corner.third_axis)),
    }
    w.open(&format!("lu_table_template({template})"));
    w.attr("variable_1", "input_net_transition");
    w.attr("variable_2", "total_output_net_capacitance");
    w.line(&format!("index_1 {};", index_attr(&lib.slew_index)));
    w.line(&format!("index_2 {};", index_attr(&lib.load_index)));
    w.close();

    for cell in &lib.cells {
        w.open(&format!("cell({})", cell.name));
        w.attr("area", &fmt_sig6(cell.area));
        // derive the mean from the rounded per-state values so that
        // emit -> parse -> emit is a byte-level fixed point
        let mean_rounded = cell
            .leakage
            .iter()
            .map(|l| fmt_sig6(l.value).parse::<f64>().unwrap())
            .sum::<f64>()
            / cell.leakage.len() as f64;
        w.attr("cell_leakage_power", &fmt_sig6(mean_rounded));
        for leak in &cell.leakage {
            w.open("leakage_power()");
            w.attr("when", &format!("\"{}\"", leak.when));
            w.attr("value", &fmt_sig6(leak.value));
            w.close();
        }
        for (pin_idx, pin) in cell.inputs.iter().enumerate() {
            w.open(&format!("pin({pin})"));
            w.attr("direction", "input");
            w.attr("capacitance", &fmt_sig6(cell.pin_caps[pin_idx]));
            for group in cell.input_power.iter().filter(|g| g.pin == pin_idx) {
                w.open("internal_power()");
                if !group.when.is_empty() {
                    w.attr("when", &format!("\"{}\"", group.when));
                }
                write_table(&mut w, "rise_power", &template, &group.rise_power);
                write_table(&mut w, "fall_power", &template, &group.fall_power);
                w.close();
            }
            w.close();
        }
        w.open(&format!("pin({})", cell.output));
        w.attr("direction", "output");
        for group in &cell.timing {
            w.open("timing()");
            w.attr(
                "related_pin",
                &format!("\"{}\"", cell.inputs[group.related_pin]),
            );
            if !group.when.is_empty() {
                w.attr("when", &format!("\"{}\"", group.when));
            }
            write_table(&mut w, "cell_rise", &template, &group.cell_rise);
            write_table(&mut w, "rise_transition", &template, &group.rise_transition);
            write_table(&mut w, "cell_fall", &template, &group.cell_fall);
            write_table(&mut w, "fall_transition", &template, &group.fall_transition);
            w.close();
        }
        for group in &cell.power {
            w.open("internal_power()");
            w.attr(
                "related_pin",
                &format!("\"{}\"", cell.inputs[group.related_pin]),
            );
            if !group.when.is_empty() {
                w.attr("when", &format!("\"{}\"", group.when));
            }
            write_table(&mut w, "rise_power", &template, &group.rise_power);
            write_table(&mut w, "fall_power", &template, &group.fall_power);
            w.close();
        }
        w.close();
        w.close();
    }
    w.close();
    Ok(w.out)
}

pub fn emit_liberty_to_path(lib: &CharLibrary, path: &Path) -> Result<(), LibError> {
    let text = emit_liberty(lib)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

// --- parser ---

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Colon,
    Semi,
    Comma,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, LibError> {
    let mut toks = Vec::new();
    let mut line = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                line += 1;
                chars.next();
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '{' => {
                toks.push((Tok::LBrace, line));
                chars.next();
            }
            '}' => {
                toks.push((Tok::RBrace, line));
                chars.next();
            }
            '(' => {
                toks.push((Tok::LParen, line));
                chars.next();
            }
            ')' => {
                toks.push((Tok::RParen, line));
                chars.next();
            }
            ':' => {
                toks.push((Tok::Colon, line));
                chars.next();
            }
            ';' => {
                toks.push((Tok::Semi, line));
                chars.next();
            }
            ',' => {
                toks.push((Tok::Comma, line));
                chars.next();
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\n') | None => {
                            return Err(LibError::Parse {
                                line,
                                msg: "unterminated string".into(),
                            })
                        }
                        Some(ch) => s.push(ch),
                    }
                }
                toks.push((Tok::Str(s), line));
            }
            c if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_ascii_digit()
                        || ch == '.'
                        || ch == '-'
                        || ch == '+'
                        || ch == 'e'
                        || ch == 'E'
                    {
                        s.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                let v: f64 = s.parse().map_err(|_| LibError::Parse {
                    line,
                    msg: format!("bad number {s}"),
                })?;
                toks.push((Tok::Num(v), line));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_ascii_alphanumeric() || ch == '_' {
                        s.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push((Tok::Ident(s), line));
            }
            other => {
                return Err(LibError::Parse {
                    line,
                    msg: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    Ok(toks)
}

/// Generic group tree the subset grammar parses into.
#[derive(Debug)]
struct Group {
    name: String,
    args: Vec<String>,
    attrs: Vec<(String, AttrValue, usize)>,
    children: Vec<Group>,
    line: usize,
}

#[derive(Debug)]
enum AttrValue {
    Text(String),
    Number(f64),
    /// Parenthesized list, e.g. `index_1("...")`.
    List(Vec<String>),
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<(Tok, usize)> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<usize, LibError> {
        match self.next() {
            Some((t, line)) if &t == want => Ok(line),
            Some((t, line)) => Err(LibError::Parse {
                line,
                msg: format!("expected {what}, got {t:?}"),
            }),
            None => Err(LibError::Parse {
                line: 0,
                msg: format!("expected {what}, got end of file"),
            }),
        }
    }

    /// name ( args ) { body } with attrs `key : value ;` or `key (list);`.
    fn parse_group(&mut self) -> Result<Group, LibError> {
        let (name, line) = match self.next() {
            Some((Tok::Ident(s), l)) => (s, l),
            Some((t, l)) => {
                return Err(LibError::Parse {
                    line: l,
                    msg: format!("expected group name, got {t:?}"),
                })
            }
            None => {
                return Err(LibError::Parse {
                    line: 0,
                    msg: "expected group, got end of file".into(),
                })
            }
        };
        self.expect(&Tok::LParen, "(")?;
        let mut args = Vec::new();
        loop {
            match self.next() {
                Some((Tok::RParen, _)) => break,
                Some((Tok::Ident(s), _)) => args.push(s),
                Some((Tok::Str(s), _)) => args.push(s),
                Some((Tok::Num(v), _)) => args.push(fmt_sig6(v)),
                Some((Tok::Comma, _)) => {}
                Some((t, l)) => {
                    return Err(LibError::Parse {
                        line: l,
                        msg: format!("bad group argument {t:?}"),
                    })
                }
                None => {
                    return Err(LibError::Parse {
                        line: 0,
                        msg: "unterminated group arguments".into(),
                    })
                }
            }
        }
        self.expect(&Tok::LBrace, "{")?;
        let mut group = Group {
            name,
            args,
            attrs: Vec::new(),
            children: Vec::new(),
            line,
        };
        loop {
            match self.peek() {
                Some((Tok::RBrace, _)) => {
                    self.next();
                    break;
                }
                Some((Tok::Ident(_), _)) => {
                    let save = self.pos;
                    let (key, kline) = match self.next() {
                        Some((Tok::Ident(s), l)) => (s, l),
                        _ => unreachable!(),
                    };
                    match self.peek() {
                        Some((Tok::Colon, _)) => {
                            self.next();
                            let value = match self.next() {
                                Some((Tok::Str(s), _)) => AttrValue::Text(s),
                                Some((Tok::Ident(s), _)) => AttrValue::Text(s),
                                Some((Tok::Num(v), _)) => AttrValue::Number(v),
                                Some((t, l)) => {
                                    return Err(LibError::Parse {
                                        line: l,
                                        msg: format!("bad attribute value {t:?}"),
                                    })
                                }
                                None => {
                                    return Err(LibError::Parse {
                                        line: kline,
                                        msg: "attribute missing value".into(),
                                    })
                                }
                            };
                            self.expect(&Tok::Semi, ";")?;
                            group.attrs.push((key, value, kline));
                        }
                        Some((Tok::LParen, _)) => {
                            // `key ( ... ) ;` is a complex attribute,
                            // `key ( ... ) {` a nested group
                            let mut depth = 0usize;
                            let mut probe = self.pos;
                            loop {
                                match self.toks.get(probe) {
                                    Some((Tok::LParen, _)) => depth += 1,
                                    Some((Tok::RParen, _)) => {
                                        depth -= 1;
                                        if depth == 0 {
                                            break;
                                        }
                                    }
                                    Some(_) => {}
                                    None => {
                                        return Err(LibError::Parse {
                                            line: kline,
                                            msg: "unterminated parenthesis".into(),
                                        })
                                    }
                                }
                                probe += 1;
                            }
                            let is_group =
                                matches!(self.toks.get(probe + 1), Some((Tok::LBrace, _)));
                            if is_group {
                                self.pos = save;
                                group.children.push(self.parse_group()?);
                            } else {
                                self.next(); // consume (
                                let mut items = Vec::new();
                                loop {
                                    match self.next() {
                                        Some((Tok::RParen, _)) => break,
                                        Some((Tok::Str(s), _)) => items.push(s),
                                        Some((Tok::Ident(s), _)) => items.push(s),
                                        Some((Tok::Num(v), _)) => items.push(fmt_sig6(v)),
                                        Some((Tok::Comma, _)) => {}
                                        Some((t, l)) => {
                                            return Err(LibError::Parse {
                                                line: l,
                                                msg: format!("bad list item {t:?}"),
                                            })
                                        }
                                        None => {
                                            return Err(LibError::Parse {
                                                line: kline,
                                                msg: "unterminated list".into(),
                                            })
                                        }
                                    }
                                }
                                self.expect(&Tok::Semi, ";")?;
                                group.attrs.push((key, AttrValue::List(items), kline));
                            }
                        }
                        Some((t, l)) => {
                            let (t, l) = (t.clone(), *l);
                            return Err(LibError::Parse {
                                line: l,
                                msg: format!("expected : or ( after {key}, got {t:?}"),
                            });
                        }
                        None => {
                            return Err(LibError::Parse {
                                line: kline,
                                msg: "dangling identifier".into(),
                            })
                        }
                    }
                }
                Some((t, l)) => {
                    let (t, l) = (t.clone(), *l);
                    return Err(LibError::Parse {
                        line: l,
                        msg: format!("unexpected token {t:?}"),
                    });
                }
                None => {
                    return Err(LibError::Parse {
                        line: group.line,
                        msg: format!("unterminated group {}", group.name),
                    })
                }
            }
        }
        Ok(group)
    }
}

fn parse_index_list(items: &[String], line: usize) -> Result<Vec<f64>, LibError> {
    // emitted as a single quoted string "a, b, c"
    let joined = items.join(",");
    joined
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| LibError::Parse {
                line,
                msg: format!("bad index number {s}"),
            })
        })
        .collect()
}

fn table_from_group(g: &Group) -> Result<NldmTable, LibError> {
    let mut index1 = None;
    let mut index2 = None;
    let mut rows = None;
    for (key, value, line) in &g.attrs {
        match (key.as_str(), value) {
            ("index_1", AttrValue::List(items)) => index1 = Some(parse_index_list(items, *line)?),
            ("index_2", AttrValue::List(items)) => index2 = Some(parse_index_list(items, *line)?),
            ("values", AttrValue::List(items)) => {
                let parsed: Result<Vec<Vec<f64>>, LibError> = items
                    .iter()
                    .map(|row| parse_index_list(std::slice::from_ref(row), *line))
                    .collect();
                rows = Some(parsed?);
            }
            (other, _) => {
                return Err(LibError::Unsupported {
                    line: *line,
                    token: other.to_string(),
                })
            }
        }
    }
    let table = NldmTable {
        index1: index1.ok_or(LibError::Parse {
            line: g.line,
            msg: "table missing index_1".into(),
        })?,
        index2: index2.ok_or(LibError::Parse {
            line: g.line,
            msg: "table missing index_2".into(),
        })?,
        values: rows.ok_or(LibError::Parse {
            line: g.line,
            msg: "table missing values".into(),
        })?,
    };
    table.validate()?;
    Ok(table)
}

fn when_to_state(inputs: &[String], when: &str, line: usize) -> Result<usize, LibError> {
    let mut bits = vec![None; inputs.len()];
    for part in when.split('&') {
        let part = part.trim();
        let (value, name) = match part.strip_prefix('!') {
            Some(rest) => (false, rest),
            None => (true, part),
        };
        let idx = inputs
            .iter()
            .position(|p| p == name)
            .ok_or(LibError::Parse {
                line,
                msg: format!("unknown pin {name} in when"),
            })?;
        bits[idx] = Some(value);
    }
    let mut state = 0usize;
    for b in bits {
        let b = b.ok_or(LibError::Parse {
            line,
            msg: "leakage when must cover every pin".into(),
        })?;
        state = (state << 1) | usize::from(b);
    }
    Ok(state)
}

/// Parse text produced by [`emit_liberty`]. Constructs outside the subset
/// are rejected by name.
pub fn parse_liberty(text: &str) -> Result<CharLibrary, LibError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let root = parser.parse_group()?;
    if parser.pos != parser.toks.len() {
        let (_, line) = parser.toks[parser.pos];
        return Err(LibError::Parse {
            line,
            msg: "content after closing brace".into(),
        });
    }
    if root.name != "library" {
        return Err(LibError::Unsupported {
            line: root.line,
            token: root.name,
        });
    }
    let name = root.args.first().cloned().unwrap_or_default();
    let mut technology = None;
    let mut vdd = None;
    let mut vth = None;
    let mut third = None;
    for (key, value, line) in &root.attrs {
        match (key.as_str(), value) {
            ("delay_model" | "time_unit" | "voltage_unit" | "leakage_power_unit", _) => {}
            ("capacitive_load_unit", _) => {}
            ("technology_tag", AttrValue::Text(s)) => {
                technology = Some(Technology::parse(s).ok_or(LibError::Parse {
                    line: *line,
                    msg: format!("unknown technology {s}"),
                })?)
            }
            ("corner_vdd", AttrValue::Number(v)) => vdd = Some(*v),
            ("corner_vth", AttrValue::Number(v)) => vth = Some(*v),
            ("corner_temperature" | "corner_cox", AttrValue::Number(v)) => third = Some(*v),
            (other, _) => {
                return Err(LibError::Unsupported {
                    line: *line,
                    token: other.to_string(),
                })
            }
        }
    }
    let mut slew_index = None;
    let mut load_index = None;
    let mut cells = Vec::new();
    for child in &root.children {
        match child.name.as_str() {
            "lu_table_template" => {
                for (key, value, line) in &child.attrs {
                    match (key.as_str(), value) {
                        ("variable_1" | "variable_2", _) => {}
                        ("index_1", AttrValue::List(items)) => {
                            slew_index = Some(parse_index_list(items, *line)?)
                        }
                        ("index_2", AttrValue::List(items)) => {
                            load_index = Some(parse_index_list(items, *line)?)
                        }
                        (other, _) => {
                            return Err(LibError::Unsupported {
                                line: *line,
                                token: other.to_string(),
                            })
                        }
                    }
                }
            }
            "cell" => cells.push(parse_cell(child)?),
            other => {
                return Err(LibError::Unsupported {
                    line: child.line,
                    token: other.to_string(),
                })
            }
        }
    }
    let technology = technology.ok_or(LibError::Parse {
        line: root.line,
        msg: "missing technology_tag".into(),
    })?;
    let corner = Corner {
        technology,
        vdd: vdd.ok_or(LibError::Parse {
            line: root.line,
            msg: "missing corner_vdd".into(),
        })?,
        vth: vth.ok_or(LibError::Parse {
            line: root.line,
            msg: "missing corner_vth".into(),
        })?,
        third_axis: third.ok_or(LibError::Parse {
            line: root.line,
            msg: "missing corner axis".into(),
        })?,
    };
    Ok(CharLibrary {
        name,
        technology,
        corner,
        slew_index: slew_index.ok_or(LibError::Parse {
            line: root.line,
            msg: "missing lu_table_template".into(),
        })?,
        load_index: load_index.ok_or(LibError::Parse {
            line: root.line,
            msg: "missing lu_table_template".into(),
        })?,
        cells,
    })
}

fn parse_cell(g: &Group) -> Result<CellEntry, LibError> {
    let name = g.args.first().cloned().ok_or(LibError::Parse {
        line: g.line,
        msg: "cell missing name".into(),
    })?;
    let mut area = None;
    for (key, value, line) in &g.attrs {
        match (key.as_str(), value) {
            ("area", AttrValue::Number(v)) => area = Some(*v),
            ("cell_leakage_power", AttrValue::Number(_)) => {}
            (other, _) => {
                return Err(LibError::Unsupported {
                    line: *line,
                    token: other.to_string(),
                })
            }
        }
    }
    let mut raw_leakage: Vec<(String, f64, usize)> = Vec::new();
    let mut inputs: Vec<String> = Vec::new();
    let mut pin_caps: Vec<f64> = Vec::new();
    let mut output = None;
    let mut raw_timing: Vec<RawTiming> = Vec::new();
    let mut raw_power: Vec<(String, String, NldmTable, NldmTable, usize)> = Vec::new();
    let mut raw_input_power: Vec<(String, String, NldmTable, NldmTable, usize)> = Vec::new();

    for child in &g.children {
        match child.name.as_str() {
            "leakage_power" => {
                let mut when = None;
                let mut value = None;
                for (key, v, line) in &child.attrs {
                    match (key.as_str(), v) {
                        ("when", AttrValue::Text(s)) => when = Some(s.clone()),
                        ("value", AttrValue::Number(n)) => value = Some(*n),
                        (other, _) => {
                            return Err(LibError::Unsupported {
                                line: *line,
                                token: other.to_string(),
                            })
                        }
                    }
                }
                raw_leakage.push((
                    when.unwrap_or_default(),
                    value.ok_or(LibError::Parse {
                        line: child.line,
                        msg: "leakage_power missing value".into(),
                    })?,
                    child.line,
                ));
            }
            "pin" => {
                let pin_name = child.args.first().cloned().ok_or(LibError::Parse {
                    line: child.line,
                    msg: "pin missing name".into(),
                })?;
                let mut direction = None;
                let mut capacitance = None;
                for (key, v, line) in &child.attrs {
                    match (key.as_str(), v) {
                        ("direction", AttrValue::Text(s)) => direction = Some(s.clone()),
                        ("capacitance", AttrValue::Number(n)) => capacitance = Some(*n),
                        (other, _) => {
                            return Err(LibError::Unsupported {
                                line: *line,
                                token: other.to_string(),
                            })
                        }
                    }
                }
                match direction.as_deref() {
                    Some("input") => {
                        inputs.push(pin_name.clone());
                        pin_caps.push(capacitance.ok_or(LibError::Parse {
                            line: child.line,
                            msg: "input pin missing capacitance".into(),
                        })?);
                        for sub in &child.children {
                            if sub.name != "internal_power" {
                                return Err(LibError::Unsupported {
                                    line: sub.line,
                                    token: sub.name.clone(),
                                });
                            }
                            let (when, _related, rise, fall) = parse_power_group(sub)?;
                            raw_input_power.push((pin_name.clone(), when, rise, fall, sub.line));
                        }
                    }
                    Some("output") => {
                        output = Some(pin_name.clone());
                        for sub in &child.children {
                            match sub.name.as_str() {
                                "timing" => raw_timing.push(parse_timing_group(sub)?),
                                "internal_power" => {
                                    let (when, related, rise, fall) = parse_power_group(sub)?;
                                    raw_power.push((related, when, rise, fall, sub.line));
                                }
                                other => {
                                    return Err(LibError::Unsupported {
                                        line: sub.line,
                                        token: other.to_string(),
                                    })
                                }
                            }
                        }
                    }
                    _ => {
                        return Err(LibError::Parse {
                            line: child.line,
                            msg: "pin missing direction".into(),
                        })
                    }
                }
            }
            other => {
                return Err(LibError::Unsupported {
                    line: child.line,
                    token: other.to_string(),
                })
            }
        }
    }

    let output = output.ok_or(LibError::Parse {
        line: g.line,
        msg: "cell missing output pin".into(),
    })?;
    let pin_index = |name: &str, line: usize| -> Result<usize, LibError> {
        inputs
            .iter()
            .position(|p| p == name)
            .ok_or(LibError::Parse {
                line,
                msg: format!("unknown related pin {name}"),
            })
    };

    let timing = raw_timing
        .into_iter()
        .map(|(related, when, cr, rt, cf, ft, line)| {
            Ok(TimingGroup {
                related_pin: pin_index(&related, line)?,
                when,
                cell_rise: cr,
                rise_transition: rt,
                cell_fall: cf,
                fall_transition: ft,
            })
        })
        .collect::<Result<Vec<_>, LibError>>()?;
    let power = raw_power
        .into_iter()
        .map(|(related, when, rise, fall, line)| {
            Ok(PowerGroup {
                related_pin: pin_index(&related, line)?,
                when,
                rise_power: rise,
                fall_power: fall,
            })
        })
        .collect::<Result<Vec<_>, LibError>>()?;
    let input_power = raw_input_power
        .into_iter()
        .map(|(pin, when, rise, fall, line)| {
            Ok(InputPowerGroup {
                pin: pin_index(&pin, line)?,
                when,
                rise_power: rise,
                fall_power: fall,
            })
        })
        .collect::<Result<Vec<_>, LibError>>()?;
    let leakage = raw_leakage
        .into_iter()
        .map(|(when, value, line)| {
            Ok(LeakageEntry {
                state_index: when_to_state(&inputs, &when, line)?,
                when,
                value,
            })
        })
        .collect::<Result<Vec<_>, LibError>>()?;

    Ok(CellEntry {
        name,
        area: area.ok_or(LibError::Parse {
            line: g.line,
            msg: "cell missing area".into(),
        })?,
        inputs,
        output,
        pin_caps,
        leakage,
        timing,
        power,
        input_power,
        degenerate_points: 0,
    })
}

type RawTiming = (
    String,
    String,
    NldmTable,
    NldmTable,
    NldmTable,
    NldmTable,
    usize,
);

fn parse_timing_group(g: &Group) -> Result<RawTiming, LibError> {
    let mut related = None;
    let mut when = String::new();
    for (key, value, line) in &g.attrs {
        match (key.as_str(), value) {
            ("related_pin", AttrValue::Text(s)) => related = Some(s.clone()),
            ("when", AttrValue::Text(s)) => when = s.clone(),
            (other, _) => {
                return Err(LibError::Unsupported {
                    line: *line,
                    token: other.to_string(),
                })
            }
        }
    }
    let mut tables: BTreeMap<&str, NldmTable> = BTreeMap::new();
    for child in &g.children {
        let table = table_from_group(child)?;
        match child.name.as_str() {
            "cell_rise" => tables.insert("cr", table),
            "rise_transition" => tables.insert("rt", table),
            "cell_fall" => tables.insert("cf", table),
            "fall_transition" => tables.insert("ft", table),
            other => {
                return Err(LibError::Unsupported {
                    line: child.line,
                    token: other.to_string(),
                })
            }
        };
    }
    let mut take = |k: &str| {
        tables.remove(k).ok_or(LibError::Parse {
            line: g.line,
            msg: format!("timing group missing {k} table"),
        })
    };
    Ok((
        related.ok_or(LibError::Parse {
            line: g.line,
            msg: "timing missing related_pin".into(),
        })?,
        when,
        take("cr")?,
        take("rt")?,
        take("cf")?,
        take("ft")?,
        g.line,
    ))
}

fn parse_power_group(g: &Group) -> Result<(String, String, NldmTable, NldmTable), LibError> {
    let mut related = String::new();
    let mut when = String::new();
    for (key, value, line) in &g.attrs {
        match (key.as_str(), value) {
            ("related_pin", AttrValue::Text(s)) => related = s.clone(),
            ("when", AttrValue::Text(s)) => when = s.clone(),
            (other, _) => {
                return Err(LibError::Unsupported {
                    line: *line,
                    token: other.to_string(),
                })
            }
        }
    }
    let mut rise = None;
    let mut fall = None;
    for child in &g.children {
        let table = table_from_group(child)?;
        match child.name.as_str() {
            "rise_power" => rise = Some(table),
            "fall_power" => fall = Some(table),
            other => {
                return Err(LibError::Unsupported {
                    line: child.line,
                    token: other.to_string(),
                })
            }
        }
    }
    Ok((
        when,
        related,
        rise.ok_or(LibError::Parse {
            line: g.line,
            msg: "power group missing rise_power".into(),
        })?,
        fall.ok_or(LibError::Parse {
            line: g.line,
            msg: "power group missing fall_power".into(),
        })?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::build_default_catalog;

    fn test_corner() -> Corner {
        Corner {
            technology: Technology::Silicon45,
            vdd: 1.0,
            vth: 0.3,
            third_axis: 70.0,
        }
    }

    fn small_oracle_library() -> CharLibrary {
        let cat = build_default_catalog(Technology::Silicon45);
        let sub = cat.subset(&["INVX1", "INVX2", "NAND2X1", "AND2X1"]).unwrap();
        let params = SurrogateParams::silicon45();
        build_library(
            &LibrarySource::Oracle(&params),
            &sub,
            &test_corner(),
            4,
            4,
            1,
        )
        .unwrap()
    }

    #[test]
    fn metrics_hand_cases() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mape, 0.0);
        assert_eq!(m.rmspe, 0.0);
        assert_eq!(m.r2, Some(1.0));

        let m = metrics(&[110.0, 90.0], &[100.0, 100.0]).unwrap();
        assert!((m.mape - 10.0).abs() < 1e-12);
        assert!((m.rmspe - 10.0).abs() < 1e-12);
        assert!(m.r2.is_none(), "constant truth has undefined R2");

        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        let expected_r2 = 1.0 - 1.0 / (42.0 / 9.0);
        assert!((m.r2.unwrap() - expected_r2).abs() < 1e-12);
        assert!((m.r2.unwrap() - 0.7857142857142857).abs() < 1e-9);

        assert!(metrics(&[1.0], &[0.0]).is_err());
        assert!(metrics(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn oracle_library_structure() {
        let lib = small_oracle_library();
        assert_eq!(lib.cells.len(), 4);
        let inv = lib.cell("INVX1").unwrap();
        assert_eq!(inv.timing.len(), 1);
        assert_eq!(inv.timing[0].when, "");
        assert_eq!(inv.power.len(), 1);
        assert!(inv.input_power.is_empty());
        assert_eq!(inv.leakage.len(), 2);
        assert_eq!(inv.pin_caps.len(), 1);
        assert_eq!(inv.timing[0].cell_rise.values.len(), 4);

        let nand = lib.cell("NAND2X1").unwrap();
        assert_eq!(nand.timing.len(), 2); // A with B=1, B with A=1
        assert_eq!(nand.input_power.len(), 2); // static pairs at side low
        assert_eq!(nand.leakage.len(), 4);

        // area model: sum of widths, so INVX2 is twice INVX1
        let inv2 = lib.cell("INVX2").unwrap();
        assert!((inv2.area / inv.area - 2.0).abs() < 1e-12);
    }

    #[test]
    fn delay_tables_monotone_in_both_axes() {
        let lib = small_oracle_library();
        for cell in &lib.cells {
            for g in &cell.timing {
                for t in [&g.cell_rise, &g.cell_fall] {
                    for i in 0..t.index1.len() {
                        for j in 1..t.index2.len() {
                            assert!(
                                t.values[i][j] >= t.values[i][j - 1],
                                "{}: non-monotone in load",
                                cell.name
                            );
                        }
                    }
                    for j in 0..t.index2.len() {
                        for i in 1..t.index1.len() {
                            assert!(
                                t.values[i][j] >= t.values[i - 1][j],
                                "{}: non-monotone in slew",
                                cell.name
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_lookup_reproduces_affine_tables() {
        let t = NldmTable {
            index1: vec![0.0, 10.0, 20.0],
            index2: vec![0.0, 4.0],
            values: vec![vec![1.0, 9.0], vec![21.0, 29.0], vec![41.0, 49.0]],
        }; // v = 1 + 2*s + 2*l
        for &(s, l) in &[(5.0, 2.0), (0.0, 0.0), (17.5, 3.0), (10.0, 4.0)] {
            let want = 1.0 + 2.0 * s + 2.0 * l;
            assert!((t.lookup(s, l) - want).abs() < 1e-12, "at ({s},{l})");
        }
        // clamped outside the grid
        assert_eq!(t.lookup(-5.0, -1.0), t.lookup(0.0, 0.0));
        assert_eq!(t.lookup(99.0, 99.0), t.lookup(20.0, 4.0));
    }

    #[test]
    fn liberty_roundtrip_is_value_exact_and_byte_stable() {
        let lib = small_oracle_library();
        let text = emit_liberty(&lib).unwrap();
        let parsed = parse_liberty(&text).unwrap();
        assert_eq!(parsed.technology, lib.technology);
        assert_eq!(parsed.cells.len(), lib.cells.len());
        // canonical form: emit(parse(emit(x))) == emit(x) byte for byte
        let text2 = emit_liberty(&parsed).unwrap();
        assert_eq!(text, text2);
        // values survive to 6 significant digits
        let a = lib.cell("NAND2X1").unwrap();
        let b = parsed.cell("NAND2X1").unwrap();
        for (x, y) in a.timing[0]
            .cell_rise
            .iter_values()
            .zip(b.timing[0].cell_rise.iter_values())
        {
            assert!(((x - y) / x).abs() < 1e-5, "{x} vs {y}");
        }
        assert_eq!(b.leakage.len(), 4);
        assert_eq!(b.leakage[1].state_index, 1);
    }

    #[test]
    fn liberty_index_formatting_matches_grid() {
        let lib = small_oracle_library();
        let text = emit_liberty(&lib).unwrap();
        assert!(
            text.contains("index_1 (\"5, 320, 635, 950\");"),
            "slew index should print trimmed"
        );
    }

    #[test]
    fn truncated_and_foreign_liberty_are_rejected() {
        let lib = small_oracle_library();
        let text = emit_liberty(&lib).unwrap();
        let truncated = &text[..text.len() / 2];
        assert!(matches!(
            parse_liberty(truncated),
            Err(LibError::Parse { .. })
        ));

        let foreign = "library(x) {\n  ccs_noise() {\n  }\n}\n";
        match parse_liberty(foreign) {
            Err(LibError::Unsupported { token, .. }) => assert_eq!(token, "ccs_noise"),
            other => panic!("expected unsupported construct, got {other:?}"),
        }
    }

    #[test]
    fn empty_catalog_is_an_error() {
        let cat = CellCatalog::new(Technology::Silicon45, Vec::new());
        let params = SurrogateParams::silicon45();
        let err = build_library(
            &LibrarySource::Oracle(&params),
            &cat,
            &test_corner(),
            4,
            4,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, LibError::EmptyCatalog));
        assert_eq!(err.to_string(), "no cells");
    }

    #[test]
    fn out_of_range_corner_names_axis() {
        let cat = build_default_catalog(Technology::Silicon45);
        let params = SurrogateParams::silicon45();
        let bad = Corner {
            technology: Technology::Silicon45,
            vdd: 1.0,
            vth: 0.9,
            third_axis: 70.0,
        };
        let err = build_library(&LibrarySource::Oracle(&params), &cat, &bad, 4, 4, 1).unwrap_err();
        assert!(err.to_string().contains("vth"));
    }

    #[test]
    fn library_metrics_zero_for_identical_libraries() {
        let lib = small_oracle_library();
        let report = library_metrics(&lib, &lib).unwrap();
        for row in &report.rows {
            assert_eq!(row.metrics.mape, 0.0);
            assert_eq!(row.metrics.rmspe, 0.0);
        }
        let totals: usize = report
            .rows
            .iter()
            .filter(|r| r.cell.is_none())
            .map(|r| r.metrics.count)
            .sum();
        let cell_sums: usize = report
            .rows
            .iter()
            .filter(|r| r.cell.is_some())
            .map(|r| r.metrics.count)
            .sum();
        assert_eq!(totals, cell_sums);
    }

    #[test]
    fn drive_variant_listing() {
        let cat = build_default_catalog(Technology::Silicon45);
        let sub = cat.subset(&["INVX1", "INVX2", "INVX4", "NAND2X1"]).unwrap();
        let params = SurrogateParams::silicon45();
        let lib = build_library(
            &LibrarySource::Oracle(&params),
            &sub,
            &test_corner(),
            2,
            2,
            1,
        )
        .unwrap();
        let names: Vec<&str> = lib
            .drive_variants("INVX2")
            .iter()
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(names, vec!["INVX1", "INVX2", "INVX4"]);
    }
}
