//! Corner grids, labeled graph samples, normalization, and persistence.
//!
//! Train and test sets are Cartesian corner grids with equal spacing per
//! axis; train and test grids of different point counts only share the
//! range endpoints. Targets come from the oracle and stay in raw units
//! (the loss is percentage-based); features get min-max normalized with
//! statistics fitted on the training set only.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::cellgraph::{encode, CellGraph, FeatureLayout, GraphError, Node, NodeKind, Stimulus};
use crate::netlist::{CellCatalog, Technology};
use crate::oracle::{enumerate_arcs, CharEngine, OracleError, SurrogateParams};
use crate::util::fmt_sig6;

/// One technology parameter point. `third_axis` is temperature in °C for
/// silicon and gate unit capacitance in nF/cm² for the flexible stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub technology: Technology,
    pub vdd: f64,
    pub vth: f64,
    pub third_axis: f64,
}

/// Inclusive (lo, hi) per axis.
pub struct CornerRanges {
    pub vdd: (f64, f64),
    pub vth: (f64, f64),
    pub third_axis: (f64, f64),
}

pub fn corner_ranges(technology: Technology) -> CornerRanges {
    match technology {
        Technology::Silicon45 => CornerRanges {
            vdd: (0.9, 1.1),
            vth: (0.1, 0.5),
            third_axis: (20.0, 120.0),
        },
        Technology::Flexible => CornerRanges {
            vdd: (0.5, 2.5),
            vth: (0.3, 1.1),
            third_axis: (50.0, 130.0),
        },
    }
}

/// Inclusive (slew, load) stimulus ranges, technology time units and fF.
pub fn stimulus_ranges(technology: Technology) -> ((f64, f64), (f64, f64)) {
    match technology {
        Technology::Silicon45 => ((5.0, 950.0), (0.25, 25.0)),
        Technology::Flexible => ((1.0, 100.0), (0.1, 300.0)),
    }
}

pub fn third_axis_name(technology: Technology) -> &'static str {
    match technology {
        Technology::Silicon45 => "temperature",
        Technology::Flexible => "cox",
    }
}

impl Corner {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let ranges = corner_ranges(self.technology);
        let checks = [
            ("vdd", self.vdd, ranges.vdd),
            ("vth", self.vth, ranges.vth),
            (third_axis_name(self.technology), self.third_axis, ranges.third_axis),
        ];
        for (axis, value, (lo, hi)) in checks {
            if !(value >= lo && value <= hi) {
                return Err(DatasetError::AxisOutOfRange {
                    axis: axis.to_string(),
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Corner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} vdd={} vth={} {}={}",
            self.technology,
            fmt_sig6(self.vdd),
            fmt_sig6(self.vth),
            third_axis_name(self.technology),
            fmt_sig6(self.third_axis)
        )
    }
}

/// The five prediction tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Delay,
    Capacitance,
    FlipPower,
    NonFlipPower,
    Leakage,
}

pub const ALL_TASKS: [Task; 5] = [
    Task::Delay,
    Task::Capacitance,
    Task::FlipPower,
    Task::NonFlipPower,
    Task::Leakage,
];

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Delay => "delay",
            Task::Capacitance => "capacitance",
            Task::FlipPower => "flip_power",
            Task::NonFlipPower => "non_flip_power",
            Task::Leakage => "leakage",
        }
    }

    pub fn parse(s: &str) -> Option<Task> {
        ALL_TASKS.into_iter().find(|t| t.name() == s)
    }

    pub fn layout(self) -> FeatureLayout {
        match self {
            Task::Delay | Task::FlipPower | Task::NonFlipPower => FeatureLayout::DelayPower,
            Task::Leakage => FeatureLayout::Leakage,
            Task::Capacitance => FeatureLayout::Capacitance,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Task::Delay => 0,
            Task::Capacitance => 1,
            Task::FlipPower => 2,
            Task::NonFlipPower => 3,
            Task::Leakage => 4,
        }
    }

    pub fn from_id(id: u8) -> Option<Task> {
        ALL_TASKS.into_iter().find(|t| t.id() == id)
    }

    /// Unit of the raw target value.
    pub fn unit(self, technology: Technology) -> &'static str {
        match self {
            Task::Delay => technology.time_unit(),
            Task::Capacitance => "fF",
            Task::FlipPower | Task::NonFlipPower => "fJ",
            Task::Leakage => "nW",
        }
    }
}

/// What produced a sample; enough to regenerate it exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSource {
    /// Arc index into `enumerate_arcs` plus the stimulus point.
    Arc { index: usize, slew: f64, load: f64 },
    /// Input state index (pin 0 is the most significant bit).
    State { index: usize },
    /// Input pin index.
    Pin { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub cell: String,
    pub corner: Corner,
    pub source: SampleSource,
}

impl Provenance {
    /// Canonical single-line form, parseable by [`Provenance::parse`].
    pub fn to_line(&self) -> String {
        let head = format!(
            "cell={} tech={} vdd={:e} vth={:e} ax={:e}",
            self.cell, self.corner.technology, self.corner.vdd, self.corner.vth,
            self.corner.third_axis
        );
        match &self.source {
            SampleSource::Arc { index, slew, load } => {
                format!("{head} src=arc idx={index} slew={slew:e} load={load:e}")
            }
            SampleSource::State { index } => format!("{head} src=state idx={index}"),
            SampleSource::Pin { index } => format!("{head} src=pin idx={index}"),
        }
    }

    pub fn parse(line: &str) -> Result<Provenance, DatasetError> {
        let mut map = std::collections::BTreeMap::new();
        for tok in line.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| DatasetError::Format(format!("bad provenance token {tok}")))?;
            map.insert(k, v);
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| DatasetError::Format(format!("provenance missing {k}")))
        };
        let fnum = |k: &str| -> Result<f64, DatasetError> {
            get(k)?
                .parse()
                .map_err(|_| DatasetError::Format(format!("provenance field {k} not a number")))
        };
        let unum = |k: &str| -> Result<usize, DatasetError> {
            get(k)?
                .parse()
                .map_err(|_| DatasetError::Format(format!("provenance field {k} not an index")))
        };
        let technology = Technology::parse(get("tech")?)
            .ok_or_else(|| DatasetError::Format("unknown technology in provenance".into()))?;
        let corner = Corner {
            technology,
            vdd: fnum("vdd")?,
            vth: fnum("vth")?,
            third_axis: fnum("ax")?,
        };
        let source = match get("src")? {
            "arc" => SampleSource::Arc {
                index: unum("idx")?,
                slew: fnum("slew")?,
                load: fnum("load")?,
            },
            "state" => SampleSource::State { index: unum("idx")? },
            "pin" => SampleSource::Pin { index: unum("idx")? },
            other => {
                return Err(DatasetError::Format(format!(
                    "unknown provenance source {other}"
                )))
            }
        };
        Ok(Provenance {
            cell: get("cell")?.to_string(),
            corner,
            source,
        })
    }
}

/// One labeled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: CellGraph,
    pub target: f64,
    pub task: Task,
    pub provenance: Provenance,
}

/// All samples of one task.
#[derive(Debug, Clone)]
pub struct TaskSet {
    pub task: Task,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{axis} = {value} outside [{lo}, {hi}]")]
    AxisOutOfRange {
        axis: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("grid needs at least 2 points per axis, got {0}")]
    GridTooSmall(usize),
    #[error("dataset would be empty: {0}")]
    EmptyInput(String),
    #[error("sample target {value} not positive for {provenance}")]
    NonPositiveTarget { value: f64, provenance: String },
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// `n` equally spaced values covering [lo, hi] inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Cartesian corner grid: `points_per_axis`³ corners, vdd outermost, then
/// vth, then the third axis.
pub fn corner_grid(
    technology: Technology,
    points_per_axis: usize,
) -> Result<Vec<Corner>, DatasetError> {
    if points_per_axis < 2 {
        return Err(DatasetError::GridTooSmall(points_per_axis));
    }
    let ranges = corner_ranges(technology);
    let vdds = linspace(ranges.vdd.0, ranges.vdd.1, points_per_axis);
    let vths = linspace(ranges.vth.0, ranges.vth.1, points_per_axis);
    let thirds = linspace(ranges.third_axis.0, ranges.third_axis.1, points_per_axis);
    let mut corners = Vec::with_capacity(points_per_axis.pow(3));
    for &vdd in &vdds {
        for &vth in &vths {
            for &third_axis in &thirds {
                corners.push(Corner {
                    technology,
                    vdd,
                    vth,
                    third_axis,
                });
            }
        }
    }
    Ok(corners)
}

/// Slew × load grid, slew outermost.
pub fn stimulus_grid(
    technology: Technology,
    n_slew: usize,
    n_load: usize,
) -> Result<Vec<(f64, f64)>, DatasetError> {
    if n_slew < 2 {
        return Err(DatasetError::GridTooSmall(n_slew));
    }
    if n_load < 2 {
        return Err(DatasetError::GridTooSmall(n_load));
    }
    let (slew_range, load_range) = stimulus_ranges(technology);
    let slews = linspace(slew_range.0, slew_range.1, n_slew);
    let loads = linspace(load_range.0, load_range.1, n_load);
    let mut grid = Vec::with_capacity(n_slew * n_load);
    for &s in &slews {
        for &l in &loads {
            grid.push((s, l));
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy)]
pub struct DatasetOptions {
    /// Drop points where the device model hit its degenerate-supply floor.
    pub filter_degenerate: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            filter_degenerate: true,
        }
    }
}

/// Drive the oracle over every (cell, arc/state/pin, corner, stimulus)
/// combination for the requested tasks. Deterministic order: cells in
/// catalog order, then arcs/states/pins, then corners, then stimulus.
pub fn build_dataset(
    catalog: &CellCatalog,
    corners: &[Corner],
    stimulus: &[(f64, f64)],
    tasks: &[Task],
    params: &SurrogateParams,
    options: DatasetOptions,
) -> Result<Vec<TaskSet>, DatasetError> {
    if catalog.is_empty() {
        return Err(DatasetError::EmptyInput("catalog has no cells".into()));
    }
    if corners.is_empty() {
        return Err(DatasetError::EmptyInput("no corners".into()));
    }
    if tasks.is_empty() {
        return Err(DatasetError::EmptyInput("no tasks".into()));
    }
    let needs_stimulus = tasks
        .iter()
        .any(|t| matches!(t, Task::Delay | Task::FlipPower | Task::NonFlipPower));
    if needs_stimulus && stimulus.is_empty() {
        return Err(DatasetError::EmptyInput("no stimulus points".into()));
    }

    let mut sets: Vec<TaskSet> = tasks
        .iter()
        .map(|&task| TaskSet {
            task,
            samples: Vec::new(),
        })
        .collect();

    for cell in catalog.cells() {
        let engine = CharEngine::new(cell, params);
        let arcs = enumerate_arcs(cell)?;
        for set in sets.iter_mut() {
            match set.task {
                Task::Delay | Task::FlipPower | Task::NonFlipPower => {
                    let want_flip = set.task != Task::NonFlipPower;
                    for (arc_idx, arc) in arcs.iter().enumerate() {
                        if arc.output_flips != want_flip {
                            continue;
                        }
                        for corner in corners {
                            for &(slew, load) in stimulus {
                                let point = engine.characterize(arc, corner, slew, load)?;
                                if options.filter_degenerate && point.degenerate {
                                    continue;
                                }
                                let target = match set.task {
                                    Task::Delay => point.delay.expect("flip arc"),
                                    Task::FlipPower => point.flip_energy.expect("flip arc"),
                                    Task::NonFlipPower => {
                                        point.non_flip_energy.expect("static arc")
                                    }
                                    _ => unreachable!(),
                                };
                                let provenance = Provenance {
                                    cell: cell.name.clone(),
                                    corner: *corner,
                                    source: SampleSource::Arc {
                                        index: arc_idx,
                                        slew,
                                        load,
                                    },
                                };
                                if !(target > 0.0) {
                                    return Err(DatasetError::NonPositiveTarget {
                                        value: target,
                                        provenance: provenance.to_line(),
                                    });
                                }
                                let stim = Stimulus::DelayPower {
                                    slew,
                                    load,
                                    current: arc.pre.clone(),
                                    next: arc.post.clone(),
                                };
                                let mut graph =
                                    encode(cell, corner, &stim, FeatureLayout::DelayPower)?;
                                graph.target = Some(target);
                                set.samples.push(Sample {
                                    graph,
                                    target,
                                    task: set.task,
                                    provenance,
                                });
                            }
                        }
                    }
                }
                Task::Leakage => {
                    let n = cell.inputs.len();
                    for state_idx in 0..(1usize << n) {
                        let state = crate::oracle::index_to_bits(state_idx, n);
                        for corner in corners {
                            let target = engine.leakage_power(&state, corner)?;
                            let provenance = Provenance {
                                cell: cell.name.clone(),
                                corner: *corner,
                                source: SampleSource::State { index: state_idx },
                            };
                            if !(target > 0.0) {
                                return Err(DatasetError::NonPositiveTarget {
                                    value: target,
                                    provenance: provenance.to_line(),
                                });
                            }
                            let stim = Stimulus::Leakage {
                                state: state.clone(),
                            };
                            let mut graph = encode(cell, corner, &stim, FeatureLayout::Leakage)?;
                            graph.target = Some(target);
                            set.samples.push(Sample {
                                graph,
                                target,
                                task: set.task,
                                provenance,
                            });
                        }
                    }
                }
                Task::Capacitance => {
                    for pin in 0..cell.inputs.len() {
                        for corner in corners {
                            let target = engine.pin_capacitance(pin, corner);
                            let provenance = Provenance {
                                cell: cell.name.clone(),
                                corner: *corner,
                                source: SampleSource::Pin { index: pin },
                            };
                            if !(target > 0.0) {
                                return Err(DatasetError::NonPositiveTarget {
                                    value: target,
                                    provenance: provenance.to_line(),
                                });
                            }
                            let stim = Stimulus::Capacitance { pin };
                            let mut graph =
                                encode(cell, corner, &stim, FeatureLayout::Capacitance)?;
                            graph.target = Some(target);
                            set.samples.push(Sample {
                                graph,
                                target,
                                task: set.task,
                                provenance,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(sets)
}

/// Re-create one sample from its provenance; the determinism round trip.
pub fn regenerate_sample(
    catalog: &CellCatalog,
    task: Task,
    provenance: &Provenance,
    params: &SurrogateParams,
) -> Result<Sample, DatasetError> {
    let cell = catalog
        .get(&provenance.cell)
        .ok_or_else(|| DatasetError::Format(format!("unknown cell {}", provenance.cell)))?;
    let engine = CharEngine::new(cell, params);
    let corner = provenance.corner;
    let (graph, target) = match &provenance.source {
        SampleSource::Arc { index, slew, load } => {
            let arcs = enumerate_arcs(cell)?;
            let arc = arcs
                .get(*index)
                .ok_or_else(|| DatasetError::Format(format!("arc index {index} out of range")))?;
            let point = engine.characterize(arc, &corner, *slew, *load)?;
            let target = match task {
                Task::Delay => point.delay,
                Task::FlipPower => point.flip_energy,
                Task::NonFlipPower => point.non_flip_energy,
                _ => None,
            }
            .ok_or_else(|| DatasetError::Format("arc kind does not match task".into()))?;
            let stim = Stimulus::DelayPower {
                slew: *slew,
                load: *load,
                current: arc.pre.clone(),
                next: arc.post.clone(),
            };
            (encode(cell, &corner, &stim, FeatureLayout::DelayPower)?, target)
        }
        SampleSource::State { index } => {
            let state = crate::oracle::index_to_bits(*index, cell.inputs.len());
            let target = engine.leakage_power(&state, &corner)?;
            let stim = Stimulus::Leakage { state };
            (encode(cell, &corner, &stim, FeatureLayout::Leakage)?, target)
        }
        SampleSource::Pin { index } => {
            let target = engine.pin_capacitance(*index, &corner);
            let stim = Stimulus::Capacitance { pin: *index };
            (
                encode(cell, &corner, &stim, FeatureLayout::Capacitance)?,
                target,
            )
        }
    };
    let mut graph = graph;
    graph.target = Some(target);
    Ok(Sample {
        graph,
        target,
        task,
        provenance: provenance.clone(),
    })
}

/// Per-feature min/max fitted on a training set. Constant features pass
/// through unscaled; test-time values may fall outside [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationSpec {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationSpec {
    pub fn fit(samples: &[Sample]) -> NormalizationSpec {
        assert!(!samples.is_empty(), "cannot fit normalization on nothing");
        let width = samples[0].graph.layout.width();
        let mut mins = vec![f64::INFINITY; width];
        let mut maxs = vec![f64::NEG_INFINITY; width];
        for sample in samples {
            for node in &sample.graph.nodes {
                for (i, &f) in node.features.iter().enumerate() {
                    mins[i] = mins[i].min(f);
                    maxs[i] = maxs[i].max(f);
                }
            }
        }
        NormalizationSpec { mins, maxs }
    }

    pub fn width(&self) -> usize {
        self.mins.len()
    }

    /// Map one raw feature value to the normalized scale.
    #[inline]
    pub fn scale(&self, index: usize, value: f64) -> f64 {
        let (lo, hi) = (self.mins[index], self.maxs[index]);
        if hi > lo {
            (value - lo) / (hi - lo)
        } else {
            value
        }
    }

    pub fn normalize_graph(&self, graph: &CellGraph) -> CellGraph {
        let mut out = graph.clone();
        for node in out.nodes.iter_mut() {
            for (i, f) in node.features.iter_mut().enumerate() {
                *f = self.scale(i, *f);
            }
        }
        out
    }

    /// Text form: one `feature <idx> <min> <max>` line per feature, full
    /// precision hex floats for exact round trips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.width() {
            out.push_str(&format!(
                "feature {} {} {}\n",
                i,
                format_exact(self.mins[i]),
                format_exact(self.maxs[i])
            ));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<NormalizationSpec, DatasetError> {
        let mut mins = Vec::new();
        let mut maxs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "feature" {
                return Err(DatasetError::Format(format!("bad norm line: {line}")));
            }
            let idx: usize = parts[1]
                .parse()
                .map_err(|_| DatasetError::Format("bad feature index".into()))?;
            if idx != mins.len() {
                return Err(DatasetError::Format("feature lines out of order".into()));
            }
            mins.push(parse_exact(parts[2])?);
            maxs.push(parse_exact(parts[3])?);
        }
        if mins.is_empty() {
            return Err(DatasetError::Format("empty normalization spec".into()));
        }
        Ok(NormalizationSpec { mins, maxs })
    }
}

fn format_exact(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn parse_exact(s: &str) -> Result<f64, DatasetError> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| DatasetError::Format(format!("bad float bits {s}")))
}

const DATASET_MAGIC: &[u8; 8] = b"CGDATA01";

/// Binary record stream: header (magic, task, layout, feature width, count),
/// then per sample: node count, edge count, features, edges, target,
/// provenance line. Everything little-endian.
pub fn write_samples<W: Write>(mut w: W, set: &TaskSet) -> Result<(), DatasetError> {
    let layout = set.task.layout();
    let width = layout.width() as u32;
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&[set.task.id(), layout.id(), 0, 0])?;
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&(set.samples.len() as u64).to_le_bytes())?;
    for sample in &set.samples {
        let g = &sample.graph;
        w.write_all(&(g.nodes.len() as u32).to_le_bytes())?;
        w.write_all(&(g.edges.len() as u32).to_le_bytes())?;
        for node in &g.nodes {
            for &f in &node.features {
                w.write_all(&f.to_le_bytes())?;
            }
        }
        for &(s, d) in &g.edges {
            w.write_all(&s.to_le_bytes())?;
            w.write_all(&d.to_le_bytes())?;
        }
        w.write_all(&sample.target.to_le_bytes())?;
        let prov = sample.provenance.to_line();
        w.write_all(&(prov.len() as u32).to_le_bytes())?;
        w.write_all(prov.as_bytes())?;
    }
    Ok(())
}

pub fn write_samples_to_path(path: &Path, set: &TaskSet) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    let mut buf = io::BufWriter::new(file);
    write_samples(&mut buf, set)?;
    buf.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> Result<TaskSet, DatasetError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DatasetError::Format("bad magic".into()));
    }
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let task = Task::from_id(head[0]).ok_or_else(|| DatasetError::Format("bad task id".into()))?;
    let layout = FeatureLayout::from_id(head[1])
        .ok_or_else(|| DatasetError::Format("bad layout id".into()))?;
    if layout != task.layout() {
        return Err(DatasetError::Format("layout does not match task".into()));
    }
    let width = read_u32(&mut r)? as usize;
    if width != layout.width() {
        return Err(DatasetError::Format("feature width mismatch".into()));
    }
    let count = read_u64(&mut r)? as usize;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let n_nodes = read_u32(&mut r)? as usize;
        let n_edges = read_u32(&mut r)? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let mut features = Vec::with_capacity(width);
            for _ in 0..width {
                features.push(read_f64(&mut r)?);
            }
            let kind = kind_from_type_bits(&features[..3])?;
            nodes.push(Node { kind, features });
        }
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let s = read_u32(&mut r)?;
            let d = read_u32(&mut r)?;
            edges.push((s, d));
        }
        let target = read_f64(&mut r)?;
        let prov_len = read_u32(&mut r)? as usize;
        let mut prov_bytes = vec![0u8; prov_len];
        r.read_exact(&mut prov_bytes)?;
        let prov_line = String::from_utf8(prov_bytes)
            .map_err(|_| DatasetError::Format("provenance not UTF-8".into()))?;
        let provenance = Provenance::parse(&prov_line)?;
        let graph = CellGraph {
            nodes,
            edges,
            layout,
            target: Some(target),
            cell: provenance.cell.clone(),
            corner: provenance.corner,
            arc_desc: String::new(),
        };
        samples.push(Sample {
            graph,
            target,
            task,
            provenance,
        });
    }
    Ok(TaskSet { task, samples })
}

pub fn read_samples_from_path(path: &Path) -> Result<TaskSet, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_samples(io::BufReader::new(file))
}

fn kind_from_type_bits(bits: &[f64]) -> Result<NodeKind, DatasetError> {
    let code = (
        bits[0] != 0.0,
        bits[1] != 0.0,
        bits[2] != 0.0,
    );
    Ok(match code {
        (false, false, true) => NodeKind::In,
        (false, true, false) => NodeKind::Out,
        (false, true, true) => NodeKind::Fet,
        (true, false, false) => NodeKind::Vdd,
        (true, false, true) => NodeKind::Vss,
        _ => return Err(DatasetError::Format("bad node type bits".into())),
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DatasetError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, DatasetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, DatasetError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// CSV export for external inspection: ragged rows, features prefixed by
/// node index.
pub fn export_csv<W: Write>(mut w: W, set: &TaskSet) -> Result<(), DatasetError> {
    writeln!(w, "task,cell,target,provenance,features...")?;
    for sample in &set.samples {
        write!(
            w,
            "{},{},{},\"{}\"",
            set.task.name(),
            sample.provenance.cell,
            fmt_sig6(sample.target),
            sample.provenance.to_line()
        )?;
        for (i, node) in sample.graph.nodes.iter().enumerate() {
            for &f in &node.features {
                write!(w, ",n{i}:{}", fmt_sig6(f))?;
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Interior grid values of two equal-spaced grids over the same range only
/// collide where spacings align; used to prove train/test separation.
pub fn interior_overlap(lo: f64, hi: f64, n_a: usize, n_b: usize) -> usize {
    let a: BTreeSet<u64> = linspace(lo, hi, n_a)[1..n_a - 1]
        .iter()
        .map(|x| x.to_bits())
        .collect();
    linspace(lo, hi, n_b)[1..n_b - 1]
        .iter()
        .filter(|x| a.contains(&x.to_bits()))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::build_default_catalog;

    #[test]
    fn silicon_5_point_grid_is_125_corners_with_stated_vdd_values() {
        let corners = corner_grid(Technology::Silicon45, 5).unwrap();
        assert_eq!(corners.len(), 125);
        let mut vdds: Vec<f64> = corners.iter().map(|c| c.vdd).collect();
        vdds.dedup();
        let uniq: BTreeSet<u64> = corners.iter().map(|c| c.vdd.to_bits()).collect();
        let expect = [0.90f64, 0.95, 1.00, 1.05, 1.10];
        assert_eq!(uniq.len(), 5);
        for v in expect {
            assert!(
                corners.iter().any(|c| (c.vdd - v).abs() < 1e-12),
                "missing vdd {v}"
            );
        }
    }

    #[test]
    fn silicon_8_point_grid_is_512_corners() {
        assert_eq!(corner_grid(Technology::Silicon45, 8).unwrap().len(), 512);
    }

    #[test]
    fn flexible_2_point_grid_hits_range_corners() {
        let corners = corner_grid(Technology::Flexible, 2).unwrap();
        assert_eq!(corners.len(), 8);
        assert_eq!(corners[0].vdd, 0.5);
        assert_eq!(corners[7].vdd, 2.5);
        assert_eq!(corners[0].vth, 0.3);
        assert_eq!(corners[7].vth, 1.1);
    }

    #[test]
    fn stimulus_grids() {
        let g = stimulus_grid(Technology::Silicon45, 2, 2).unwrap();
        assert_eq!(g, vec![(5.0, 0.25), (5.0, 25.0), (950.0, 0.25), (950.0, 25.0)]);
        let fx = stimulus_grid(Technology::Flexible, 3, 2).unwrap();
        let slews: Vec<f64> = fx.iter().map(|p| p.0).collect();
        assert_eq!(slews, vec![1.0, 1.0, 50.5, 50.5, 100.0, 100.0]);
        assert!(matches!(
            stimulus_grid(Technology::Silicon45, 1, 2),
            Err(DatasetError::GridTooSmall(1))
        ));
    }

    #[test]
    fn interior_values_of_5_and_8_point_grids_are_disjoint() {
        assert_eq!(interior_overlap(0.9, 1.1, 5, 8), 0);
        assert_eq!(interior_overlap(20.0, 120.0, 5, 8), 0);
        assert_eq!(interior_overlap(0.1, 0.5, 3, 4), 0);
    }

    #[test]
    fn sample_counts_follow_closed_forms() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.subset(&["INVX1"]).unwrap();
        let params = SurrogateParams::silicon45();
        let corner = vec![Corner {
            technology: Technology::Silicon45,
            vdd: 1.0,
            vth: 0.3,
            third_axis: 70.0,
        }];
        let stim = stimulus_grid(Technology::Silicon45, 2, 2).unwrap();
        let sets = build_dataset(
            &inv,
            &corner,
            &stim,
            &[Task::Delay],
            &params,
            DatasetOptions::default(),
        )
        .unwrap();
        assert_eq!(sets[0].samples.len(), 8); // 2 arcs x 4 stimulus points

        let nand = cat.subset(&["NAND2X1"]).unwrap();
        let sets = build_dataset(
            &nand,
            &corner,
            &stim,
            &[Task::Leakage, Task::Capacitance],
            &params,
            DatasetOptions::default(),
        )
        .unwrap();
        assert_eq!(sets[0].samples.len(), 4); // 2^2 states
        assert_eq!(sets[1].samples.len(), 2); // 2 pins
    }

    #[test]
    fn normalization_examples() {
        let spec = NormalizationSpec {
            mins: vec![0.0],
            maxs: vec![10.0],
        };
        assert_eq!(spec.scale(0, 5.0), 0.5);
        assert_eq!(spec.scale(0, 0.0), 0.0);
        assert_eq!(spec.scale(0, 10.0), 1.0);
        assert!((spec.scale(0, 12.0) - 1.2).abs() < 1e-15); // unclamped
        let constant = NormalizationSpec {
            mins: vec![3.0],
            maxs: vec![3.0],
        };
        assert_eq!(constant.scale(0, 3.0), 3.0); // constant features pass through
    }

    #[test]
    fn fit_apply_stays_in_unit_interval_on_train() {
        let cat = build_default_catalog(Technology::Silicon45);
        let sub = cat.subset(&["INVX1", "NAND2X1"]).unwrap();
        let params = SurrogateParams::silicon45();
        let corners = corner_grid(Technology::Silicon45, 2).unwrap();
        let stim = stimulus_grid(Technology::Silicon45, 2, 2).unwrap();
        let sets = build_dataset(
            &sub,
            &corners,
            &stim,
            &[Task::Delay],
            &params,
            DatasetOptions::default(),
        )
        .unwrap();
        let spec = NormalizationSpec::fit(&sets[0].samples);
        for sample in &sets[0].samples {
            let g = spec.normalize_graph(&sample.graph);
            for node in &g.nodes {
                for (i, &f) in node.features.iter().enumerate() {
                    if spec.maxs[i] > spec.mins[i] {
                        assert!(
                            (-1e-12..=1.0 + 1e-12).contains(&f),
                            "feature {i} = {f} out of unit range"
                        );
                    }
                }
            }
        }
        // text round trip is exact
        let spec2 = NormalizationSpec::from_text(&spec.to_text()).unwrap();
        assert_eq!(spec, spec2);
    }

    #[test]
    fn dataset_file_roundtrip_and_regeneration() {
        let cat = build_default_catalog(Technology::Silicon45);
        let sub = cat.subset(&["INVX1", "NAND2X1"]).unwrap();
        let params = SurrogateParams::silicon45();
        let corners = corner_grid(Technology::Silicon45, 2).unwrap();
        let stim = stimulus_grid(Technology::Silicon45, 2, 2).unwrap();
        let sets = build_dataset(
            &sub,
            &corners,
            &stim,
            &[Task::Delay, Task::Leakage],
            &params,
            DatasetOptions::default(),
        )
        .unwrap();
        for set in &sets {
            let mut bytes = Vec::new();
            write_samples(&mut bytes, set).unwrap();
            let back = read_samples(&bytes[..]).unwrap();
            assert_eq!(back.task, set.task);
            assert_eq!(back.samples.len(), set.samples.len());
            for (a, b) in set.samples.iter().zip(&back.samples) {
                assert_eq!(a.target, b.target);
                assert_eq!(a.provenance, b.provenance);
                assert_eq!(a.graph.nodes, b.graph.nodes);
                assert_eq!(a.graph.edges, b.graph.edges);
                // provenance regenerates the identical sample
                let regen = regenerate_sample(&sub, set.task, &a.provenance, &params).unwrap();
                assert_eq!(regen.target, a.target);
                assert_eq!(regen.graph.nodes, a.graph.nodes);
                assert_eq!(regen.graph.edges, a.graph.edges);
            }
        }
    }

    #[test]
    fn corner_validation_names_the_axis() {
        let c = Corner {
            technology: Technology::Silicon45,
            vdd: 1.3,
            vth: 0.3,
            third_axis: 70.0,
        };
        match c.validate() {
            Err(DatasetError::AxisOutOfRange { axis, .. }) => assert_eq!(axis, "vdd"),
            other => panic!("expected axis error, got {other:?}"),
        }
        let c = Corner {
            technology: Technology::Flexible,
            vdd: 1.0,
            vth: 0.5,
            third_axis: 10.0,
        };
        match c.validate() {
            Err(DatasetError::AxisOutOfRange { axis, .. }) => assert_eq!(axis, "cox"),
            other => panic!("expected axis error, got {other:?}"),
        }
    }
}
