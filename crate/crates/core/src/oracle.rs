//! Analytical characterization engine.
//!
//! Stands in for transistor-level simulation: it derives each cell's boolean
//! function from the FET network, enumerates timing/power arcs, and computes
//! delay, output slew, switching energies, leakage, and pin capacitance from
//! a smooth closed-form device model. Internally everything runs in
//! microamps, volts, femtofarads and megaohms, so RC products come out in
//! nanoseconds and are scaled to the technology's time unit at the end.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::dataset::Corner;
use crate::netlist::{CellNetlist, NetlistError, Polarity, Technology};

/// Device-model constants. Two presets ship with the crate; values can also
/// be loaded from a `key = value` text file.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    pub technology: Technology,
    /// Drive constant, µA per width unit per V^alpha.
    pub k_drive: f64,
    /// Velocity-saturation exponent on the gate overdrive.
    pub alpha: f64,
    /// Input-slew contribution to delay (dimensionless).
    pub beta_slew: f64,
    /// Gate capacitance, fF per width unit.
    pub c_gate: f64,
    /// Drain/source capacitance, fF per width unit.
    pub c_drain: f64,
    /// Leakage scale, nA per width unit.
    pub i0_leak: f64,
    /// Subthreshold slope factor.
    pub n_ss: f64,
    /// Short-circuit energy coefficient, fJ per (time-unit · µA).
    pub gamma_sc: f64,
    /// Output slew as a multiple of the RC product.
    pub eta_slew: f64,
    /// Mobility-temperature exponent (silicon only).
    pub theta_t: f64,
    /// Reference gate unit capacitance, nF/cm² (flexible scaling).
    pub cox_ref: f64,
    /// Charge internal stage flips into non-flip energy.
    pub include_internal_nonflip: bool,
}

pub const SILICON45_PRESET: &str = include_str!("../presets/silicon45.params");
pub const FLEXIBLE_PRESET: &str = include_str!("../presets/flexible.params");

/// Conductance floor, as a fraction of `k_drive * width`, applied when the
/// supply no longer exceeds the threshold. Keeps grid generation total.
const G_FLOOR_FRAC: f64 = 1e-6;
const T0_KELVIN: f64 = 300.0;
const VT_300K: f64 = 0.02585;
const LN2: f64 = std::f64::consts::LN_2;

impl SurrogateParams {
    pub fn silicon45() -> SurrogateParams {
        parse_params(SILICON45_PRESET).expect("bundled silicon45 preset parses")
    }

    pub fn flexible() -> SurrogateParams {
        parse_params(FLEXIBLE_PRESET).expect("bundled flexible preset parses")
    }

    pub fn preset(technology: Technology) -> SurrogateParams {
        match technology {
            Technology::Silicon45 => SurrogateParams::silicon45(),
            Technology::Flexible => SurrogateParams::flexible(),
        }
    }

    fn validate(&self) -> Result<(), OracleError> {
        let fields = [
            ("k_drive", self.k_drive),
            ("alpha", self.alpha),
            ("beta_slew", self.beta_slew),
            ("c_gate", self.c_gate),
            ("c_drain", self.c_drain),
            ("i0_leak", self.i0_leak),
            ("n_ss", self.n_ss),
            ("gamma_sc", self.gamma_sc),
            ("eta_slew", self.eta_slew),
            ("theta_t", self.theta_t),
            ("cox_ref", self.cox_ref),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(OracleError::BadParams(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Parse device-model constants from `key = value` lines (`#` comments).
pub fn parse_params(text: &str) -> Result<SurrogateParams, OracleError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            OracleError::BadParams(format!("line {}: expected key = value", lineno + 1))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    let take = |key: &str| -> Result<String, OracleError> {
        map.get(key)
            .cloned()
            .ok_or_else(|| OracleError::BadParams(format!("missing key {key}")))
    };
    let num = |key: &str| -> Result<f64, OracleError> {
        take(key)?
            .parse()
            .map_err(|_| OracleError::BadParams(format!("key {key} is not a number")))
    };
    let technology = Technology::parse(&take("technology")?)
        .ok_or_else(|| OracleError::BadParams("unknown technology".into()))?;
    let params = SurrogateParams {
        technology,
        k_drive: num("k_drive")?,
        alpha: num("alpha")?,
        beta_slew: num("beta_slew")?,
        c_gate: num("c_gate")?,
        c_drain: num("c_drain")?,
        i0_leak: num("i0_leak")?,
        n_ss: num("n_ss")?,
        gamma_sc: num("gamma_sc")?,
        eta_slew: num("eta_slew")?,
        theta_t: num("theta_t")?,
        cox_ref: num("cox_ref")?,
        include_internal_nonflip: take("include_internal_nonflip")? == "true",
    };
    params.validate()?;
    Ok(params)
}

/// One input-pin transition under a fixed side-input assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub cell: String,
    /// Index of the transitioning pin.
    pub pin: usize,
    /// States of the non-transitioning pins, in pin order.
    pub side: Vec<bool>,
    /// Input direction: true = rise.
    pub rising: bool,
    /// Whether the output toggles for this transition.
    pub output_flips: bool,
    /// Full input vectors before/after the transition.
    pub pre: Vec<bool>,
    pub post: Vec<bool>,
}

impl Arc {
    /// `A:R B=1 -> flip` style description for reports and provenance.
    pub fn describe(&self, inputs: &[String]) -> String {
        let mut s = format!(
            "{}:{}",
            inputs
                .get(self.pin)
                .map(String::as_str)
                .unwrap_or("?"),
            if self.rising { "R" } else { "F" }
        );
        let mut side_iter = self.side.iter();
        for (i, name) in inputs.iter().enumerate() {
            if i == self.pin {
                continue;
            }
            let v = side_iter.next().copied().unwrap_or(false);
            s.push_str(&format!(" {}={}", name, if v { 1 } else { 0 }));
        }
        s.push_str(if self.output_flips { " flip" } else { " static" });
        s
    }
}

/// One fully characterized stimulus point.
#[derive(Debug, Clone, PartialEq)]
pub struct CharPoint {
    /// Present only for output-flipping arcs. Technology time units.
    pub delay: Option<f64>,
    pub out_slew: Option<f64>,
    /// fJ, output-flipping arcs.
    pub flip_energy: Option<f64>,
    /// fJ, output-static arcs.
    pub non_flip_energy: Option<f64>,
    /// nW at the arc's pre-transition state.
    pub leakage_power: f64,
    /// fF per input pin.
    pub pin_caps: Vec<f64>,
    /// Set when the drive conductance hit the degenerate-supply floor.
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("cell {cell}: contention at input state {state}")]
    Contention { cell: String, state: String },
    #[error("cell {cell}: output undriven at input state {state}")]
    HighZ { cell: String, state: String },
    #[error("cell {cell}: gate net {net} never resolves at input state {state}")]
    UndeterminedGate {
        cell: String,
        net: String,
        state: String,
    },
    #[error("cell {cell}: no conducting path between output and {rail}")]
    NoConductingPath { cell: String, rail: String },
    #[error("bad device parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

fn state_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Indexed view of a cell netlist: nets as dense ids, FET terminals resolved.
/// Building one is cheap; reuse it when sweeping many points per cell.
pub struct CellView<'a> {
    pub cell: &'a CellNetlist,
    nets: Vec<String>,
    net_ids: BTreeMap<&'a str, usize>,
    vdd: usize,
    vss: usize,
    out: usize,
    inputs: Vec<usize>,
    /// (drain, gate, source) net ids per FET.
    fet_nets: Vec<(usize, usize, usize)>,
}

impl<'a> CellView<'a> {
    pub fn new(cell: &'a CellNetlist) -> CellView<'a> {
        let mut nets: Vec<String> = Vec::new();
        let mut net_ids: BTreeMap<&str, usize> = BTreeMap::new();
        let intern = |name: &'a str, nets: &mut Vec<String>, ids: &mut BTreeMap<&'a str, usize>| {
            *ids.entry(name).or_insert_with(|| {
                nets.push(name.to_string());
                nets.len() - 1
            })
        };
        let vdd = intern(&cell.vdd, &mut nets, &mut net_ids);
        let vss = intern(&cell.vss, &mut nets, &mut net_ids);
        let out = intern(&cell.output, &mut nets, &mut net_ids);
        let inputs: Vec<usize> = cell
            .inputs
            .iter()
            .map(|p| intern(p, &mut nets, &mut net_ids))
            .collect();
        let fet_nets = cell
            .fets
            .iter()
            .map(|f| {
                (
                    intern(&f.drain, &mut nets, &mut net_ids),
                    intern(&f.gate, &mut nets, &mut net_ids),
                    intern(&f.source, &mut nets, &mut net_ids),
                )
            })
            .collect();
        CellView {
            cell,
            nets,
            net_ids,
            vdd,
            vss,
            out,
            inputs,
            fet_nets,
        }
    }

    fn net_name(&self, id: usize) -> &str {
        &self.nets[id]
    }

    /// Dense id of a net name, if the cell uses it.
    pub fn net_id(&self, name: &str) -> Option<usize> {
        self.net_ids.get(name).copied()
    }

    /// Dense id of the output net.
    pub fn output_id(&self) -> usize {
        self.out
    }

    /// Solve every net's logic value for an input assignment.
    ///
    /// Iterates to a fixpoint: a net is 1 when ON PFETs connect it to VDD,
    /// 0 when ON NFETs connect it to VSS, contention when both. Floating
    /// series midpoints stay `None`; an unresolved gate net or output is an
    /// error.
    pub fn evaluate_nets(&self, inputs: &[bool]) -> Result<Vec<Option<bool>>, OracleError> {
        assert_eq!(inputs.len(), self.inputs.len(), "input vector width");
        let n = self.nets.len();
        let mut values: Vec<Option<bool>> = vec![None; n];
        values[self.vdd] = Some(true);
        values[self.vss] = Some(false);
        for (idx, &net) in self.inputs.iter().enumerate() {
            values[net] = Some(inputs[idx]);
        }
        for _round in 0..n + 1 {
            let mut changed = false;
            for net in 0..n {
                if values[net].is_some() {
                    continue;
                }
                let up = self.search_rail(net, Polarity::P, self.vdd, &values);
                let down = self.search_rail(net, Polarity::N, self.vss, &values);
                match (up, down) {
                    (true, true) => {
                        return Err(OracleError::Contention {
                            cell: self.cell.name.clone(),
                            state: state_string(inputs),
                        })
                    }
                    (true, false) => {
                        values[net] = Some(true);
                        changed = true;
                    }
                    (false, true) => {
                        values[net] = Some(false);
                        changed = true;
                    }
                    (false, false) => {}
                }
            }
            if !changed {
                break;
            }
        }
        if values[self.out].is_none() {
            return Err(OracleError::HighZ {
                cell: self.cell.name.clone(),
                state: state_string(inputs),
            });
        }
        for &(_, gate, _) in &self.fet_nets {
            if values[gate].is_none() {
                return Err(OracleError::UndeterminedGate {
                    cell: self.cell.name.clone(),
                    net: self.net_name(gate).to_string(),
                    state: state_string(inputs),
                });
            }
        }
        Ok(values)
    }

    /// DFS through ON FETs of one polarity from `from` to `rail`. A FET
    /// whose gate value is still unknown does not conduct yet.
    fn search_rail(
        &self,
        from: usize,
        polarity: Polarity,
        rail: usize,
        values: &[Option<bool>],
    ) -> bool {
        let mut stack = vec![from];
        let mut seen = vec![false; self.nets.len()];
        seen[from] = true;
        while let Some(net) = stack.pop() {
            if net == rail {
                return true;
            }
            for (f, &(drain, gate, source)) in self.fet_nets.iter().enumerate() {
                if self.cell.fets[f].polarity != polarity {
                    continue;
                }
                let on = match (self.cell.fets[f].polarity, values[gate]) {
                    (Polarity::P, Some(v)) => !v,
                    (Polarity::N, Some(v)) => v,
                    (_, None) => false,
                };
                if !on {
                    continue;
                }
                let next = if drain == net {
                    source
                } else if source == net {
                    drain
                } else {
                    continue;
                };
                if !seen[next] {
                    seen[next] = true;
                    stack.push(next);
                }
            }
        }
        false
    }

    /// Internal nets that gate at least one FET (stage outputs).
    fn stage_nets(&self) -> Vec<usize> {
        let mut nets: Vec<usize> = self
            .fet_nets
            .iter()
            .map(|&(_, g, _)| g)
            .filter(|&g| {
                g != self.vdd && g != self.vss && g != self.out && !self.inputs.contains(&g)
            })
            .collect();
        nets.sort_unstable();
        nets.dedup();
        nets
    }
}

/// Truth table over all input vectors; entry `i` uses pin 0 as the most
/// significant bit of `i`.
pub fn boolean_function(cell: &CellNetlist) -> Result<Vec<bool>, OracleError> {
    let view = CellView::new(cell);
    let n = cell.inputs.len();
    let mut table = Vec::with_capacity(1 << n);
    for idx in 0..(1usize << n) {
        let bits = index_to_bits(idx, n);
        let values = view.evaluate_nets(&bits)?;
        table.push(values[view.out].expect("output resolved"));
    }
    Ok(table)
}

pub fn index_to_bits(idx: usize, n: usize) -> Vec<bool> {
    (0..n).map(|b| (idx >> (n - 1 - b)) & 1 == 1).collect()
}

pub fn bits_to_index(bits: &[bool]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | usize::from(b))
}

/// All arcs of a cell in a fixed order: pins in declaration order, side
/// assignments in binary order, rise before fall.
pub fn enumerate_arcs(cell: &CellNetlist) -> Result<Vec<Arc>, OracleError> {
    let table = boolean_function(cell)?;
    let n = cell.inputs.len();
    let mut arcs = Vec::new();
    for pin in 0..n {
        let others = n - 1;
        for side_idx in 0..(1usize << others) {
            let side = index_to_bits(side_idx, others);
            for &rising in &[true, false] {
                let mut pre = Vec::with_capacity(n);
                let mut side_it = side.iter();
                for i in 0..n {
                    if i == pin {
                        pre.push(!rising);
                    } else {
                        pre.push(*side_it.next().unwrap());
                    }
                }
                let mut post = pre.clone();
                post[pin] = rising;
                let output_flips = table[bits_to_index(&pre)] != table[bits_to_index(&post)];
                arcs.push(Arc {
                    cell: cell.name.clone(),
                    pin,
                    side: side.clone(),
                    rising,
                    output_flips,
                    pre,
                    post,
                });
            }
        }
    }
    Ok(arcs)
}

/// Per-FET channel conductance in µS. Returns the value and whether the
/// degenerate floor kicked in.
fn drive_conductance(params: &SurrogateParams, corner: &Corner, width: f64) -> (f64, bool) {
    let overdrive = corner.vdd - corner.vth.abs();
    let temp_factor = match params.technology {
        Technology::Silicon45 => {
            let t_kelvin = corner.third_axis + 273.15;
            (T0_KELVIN / t_kelvin).powf(params.theta_t)
        }
        Technology::Flexible => 1.0,
    };
    if overdrive <= 0.0 {
        (G_FLOOR_FRAC * params.k_drive * width, true)
    } else {
        (
            params.k_drive * width * overdrive.powf(params.alpha) / corner.vdd * temp_factor,
            false,
        )
    }
}

/// Gate-capacitance scale: flexible technology tracks the Cox axis.
fn cox_scale(params: &SurrogateParams, corner: &Corner) -> f64 {
    match params.technology {
        Technology::Silicon45 => 1.0,
        Technology::Flexible => corner.third_axis / params.cox_ref,
    }
}

fn thermal_voltage(params: &SurrogateParams, corner: &Corner) -> f64 {
    match params.technology {
        Technology::Silicon45 => VT_300K * (corner.third_axis + 273.15) / T0_KELVIN,
        Technology::Flexible => VT_300K,
    }
}

/// Effective resistance (MΩ) between the output and `rail` through the ON
/// FETs of the rail's polarity, via a grounded-Laplacian solve with a unit
/// current injection at the output.
pub fn effective_resistance(
    cell: &CellNetlist,
    state: &[bool],
    rail: Polarity,
    params: &SurrogateParams,
    corner: &Corner,
) -> Result<f64, OracleError> {
    let view = CellView::new(cell);
    let values = view.evaluate_nets(state)?;
    effective_resistance_view(&view, &values, rail, params, corner).map(|(r, _)| r)
}

fn effective_resistance_view(
    view: &CellView,
    values: &[Option<bool>],
    rail: Polarity,
    params: &SurrogateParams,
    corner: &Corner,
) -> Result<(f64, bool), OracleError> {
    let rail_net = match rail {
        Polarity::P => view.vdd,
        Polarity::N => view.vss,
    };
    // ON FETs of the rail polarity form the conductance network
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    let mut degenerate = false;
    for (f, &(drain, gate, source)) in view.fet_nets.iter().enumerate() {
        let fet = &view.cell.fets[f];
        if fet.polarity != rail {
            continue;
        }
        let on = match (fet.polarity, values[gate]) {
            (Polarity::P, Some(v)) => !v,
            (Polarity::N, Some(v)) => v,
            (_, None) => false,
        };
        if !on || drain == source {
            continue;
        }
        let (g, floored) = drive_conductance(params, corner, fet.width);
        degenerate |= floored;
        edges.push((drain, source, g));
    }
    // restrict to the component containing the output
    let n = view.nets.len();
    let mut in_comp = vec![false; n];
    in_comp[view.out] = true;
    let mut stack = vec![view.out];
    while let Some(net) = stack.pop() {
        for &(a, b, _) in &edges {
            let next = if a == net {
                b
            } else if b == net {
                a
            } else {
                continue;
            };
            if !in_comp[next] {
                in_comp[next] = true;
                stack.push(next);
            }
        }
    }
    if !in_comp[rail_net] {
        return Err(OracleError::NoConductingPath {
            cell: view.cell.name.clone(),
            rail: view.net_name(rail_net).to_string(),
        });
    }
    // unknowns: component nets except the grounded rail
    let mut unknown_of_net = vec![usize::MAX; n];
    let mut unknowns = Vec::new();
    for net in 0..n {
        if in_comp[net] && net != rail_net {
            unknown_of_net[net] = unknowns.len();
            unknowns.push(net);
        }
    }
    let m = unknowns.len();
    let mut lap = vec![0.0f64; m * m];
    let mut rhs = vec![0.0f64; m];
    for &(a, b, g) in &edges {
        if !in_comp[a] {
            continue;
        }
        let ia = unknown_of_net[a];
        let ib = unknown_of_net[b];
        if ia != usize::MAX {
            lap[ia * m + ia] += g;
        }
        if ib != usize::MAX {
            lap[ib * m + ib] += g;
        }
        if ia != usize::MAX && ib != usize::MAX {
            lap[ia * m + ib] -= g;
            lap[ib * m + ia] -= g;
        }
    }
    rhs[unknown_of_net[view.out]] = 1.0;
    solve_dense(&mut lap, &mut rhs, m);
    Ok((rhs[unknown_of_net[view.out]], degenerate))
}

/// In-place Gaussian elimination with partial pivoting. The systems here
/// are tiny (a handful of nets), so dense is the uniform choice.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) {
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row * n + col].abs() > a[pivot * n + col].abs() {
                pivot = row;
            }
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut sum = b[col];
        for k in col + 1..n {
            sum -= a[col * n + k] * b[k];
        }
        b[col] = sum / a[col * n + col];
    }
}

/// Reusable per-cell engine; build once, characterize many points.
pub struct CharEngine<'a> {
    view: CellView<'a>,
    params: &'a SurrogateParams,
}

impl<'a> CharEngine<'a> {
    pub fn new(cell: &'a CellNetlist, params: &'a SurrogateParams) -> CharEngine<'a> {
        CharEngine {
            view: CellView::new(cell),
            params,
        }
    }

    pub fn cell(&self) -> &CellNetlist {
        self.view.cell
    }

    /// Internal + output-node capacitance seen by the switching stage, fF.
    fn output_node_cap(&self) -> f64 {
        self.view
            .fet_nets
            .iter()
            .zip(&self.view.cell.fets)
            .filter(|(&(d, _, s), _)| d == self.view.out || s == self.view.out)
            .map(|(_, f)| self.params.c_drain * f.width)
            .sum()
    }

    /// Leakage power (nW) at a static input state: every OFF device leaks
    /// with an exponential threshold/temperature law.
    pub fn leakage_power(&self, state: &[bool], corner: &Corner) -> Result<f64, OracleError> {
        let values = self.view.evaluate_nets(state)?;
        let vt = thermal_voltage(self.params, corner);
        let expo = (-corner.vth.abs() / (self.params.n_ss * vt)).exp();
        let mut sum = 0.0;
        for (f, &(_, gate, _)) in self.view.fet_nets.iter().enumerate() {
            let fet = &self.view.cell.fets[f];
            let gate_high = values[gate].expect("gate nets resolved");
            let off = match fet.polarity {
                Polarity::N => !gate_high,
                Polarity::P => gate_high,
            };
            if off {
                sum += self.params.i0_leak * fet.width * expo;
            }
        }
        Ok(corner.vdd * sum)
    }

    /// Input pin capacitance, fF: the gate loading of every FET tied to it.
    pub fn pin_capacitance(&self, pin: usize, corner: &Corner) -> f64 {
        let pin_net = self.view.inputs[pin];
        let scale = cox_scale(self.params, corner);
        self.view
            .fet_nets
            .iter()
            .zip(&self.view.cell.fets)
            .filter(|(&(_, g, _), _)| g == pin_net)
            .map(|(_, f)| self.params.c_gate * f.width * scale)
            .sum::<f64>()
    }

    /// Capacitance on an internal stage net: gate loading plus diffusion.
    fn stage_net_cap(&self, net: usize, corner: &Corner) -> f64 {
        let scale = cox_scale(self.params, corner);
        let mut c = 0.0;
        for (f, &(d, g, s)) in self.view.fet_nets.iter().enumerate() {
            let fet = &self.view.cell.fets[f];
            if g == net {
                c += self.params.c_gate * fet.width * scale;
            }
            if d == net || s == net {
                c += self.params.c_drain * fet.width;
            }
        }
        c
    }

    /// Characterize one arc at one stimulus point.
    pub fn characterize(
        &self,
        arc: &Arc,
        corner: &Corner,
        slew: f64,
        load: f64,
    ) -> Result<CharPoint, OracleError> {
        let pre_values = self.view.evaluate_nets(&arc.pre)?;
        let post_values = self.view.evaluate_nets(&arc.post)?;
        let time_per_ns = self.params.technology.time_per_ns();
        let mut degenerate = false;

        let leakage_power = self.leakage_power(&arc.pre, corner)?;
        let pin_caps: Vec<f64> = (0..self.view.inputs.len())
            .map(|p| self.pin_capacitance(p, corner))
            .collect();

        let (mut delay, mut out_slew, mut flip_energy, mut non_flip_energy) =
            (None, None, None, None);

        if arc.output_flips {
            let out_high = post_values[self.view.out].expect("output resolved");
            let rail = if out_high { Polarity::P } else { Polarity::N };
            let (r_eff, floored) =
                effective_resistance_view(&self.view, &post_values, rail, self.params, corner)?;
            degenerate |= floored;
            let c_total = load + self.output_node_cap();
            let rc = r_eff * c_total * time_per_ns;
            delay = Some(LN2 * rc + self.params.beta_slew * slew);
            out_slew = Some(self.params.eta_slew * rc);

            // short-circuit term: drive current of the conducting devices
            // adjacent to the output during the input ramp
            let w_drive: f64 = self
                .view
                .fet_nets
                .iter()
                .enumerate()
                .filter(|(f, &(d, g, s))| {
                    let fet = &self.view.cell.fets[*f];
                    if fet.polarity != rail || (d != self.view.out && s != self.view.out) {
                        return false;
                    }
                    match (fet.polarity, post_values[g]) {
                        (Polarity::P, Some(v)) => !v,
                        (Polarity::N, Some(v)) => v,
                        (_, None) => false,
                    }
                })
                .map(|(f, _)| self.view.cell.fets[f].width)
                .sum();
            let overdrive = (corner.vdd - corner.vth.abs()).max(0.0);
            let i_drive = self.params.k_drive * w_drive * overdrive.powf(self.params.alpha);
            flip_energy = Some(
                0.5 * c_total * corner.vdd * corner.vdd
                    + self.params.gamma_sc * slew * i_drive,
            );
        } else {
            let pin_net = self.view.inputs[arc.pin];
            let scale = cox_scale(self.params, corner);
            let mut charged: f64 = self
                .view
                .fet_nets
                .iter()
                .zip(&self.view.cell.fets)
                .filter(|(&(_, g, _), _)| g == pin_net)
                .map(|(_, f)| self.params.c_gate * f.width * scale)
                .sum();
            if self.params.include_internal_nonflip {
                for net in self.view.stage_nets() {
                    if let (Some(a), Some(b)) = (pre_values[net], post_values[net]) {
                        if a != b {
                            charged += self.stage_net_cap(net, corner);
                        }
                    }
                }
            }
            non_flip_energy = Some(0.5 * corner.vdd * corner.vdd * charged);
        }

        Ok(CharPoint {
            delay,
            out_slew,
            flip_energy,
            non_flip_energy,
            leakage_power,
            pin_caps,
            degenerate,
        })
    }
}

/// One-shot convenience wrapper around [`CharEngine`].
pub fn characterize(
    cell: &CellNetlist,
    arc: &Arc,
    corner: &Corner,
    slew: f64,
    load: f64,
    params: &SurrogateParams,
) -> Result<CharPoint, OracleError> {
    CharEngine::new(cell, params).characterize(arc, corner, slew, load)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{build_default_catalog, parse_subckt};

    fn corner() -> Corner {
        Corner {
            technology: Technology::Silicon45,
            vdd: 1.0,
            vth: 0.3,
            third_axis: 70.0,
        }
    }

    fn params() -> SurrogateParams {
        SurrogateParams::silicon45()
    }

    /// Reference boolean functions per family, pin order (A, B, C) / (A, B, S).
    fn reference_function(base: &str, bits: &[bool]) -> bool {
        let (a, b, c) = (
            bits[0],
            bits.get(1).copied().unwrap_or(false),
            bits.get(2).copied().unwrap_or(false),
        );
        match base {
            "INV" => !a,
            "BUF" => a,
            "NAND2" => !(a && b),
            "NAND3" => !(a && b && c),
            "NOR2" => !(a || b),
            "NOR3" => !(a || b || c),
            "AND2" => a && b,
            "AND3" => a && b && c,
            "OR2" => a || b,
            "OR3" => a || b || c,
            "AOI21" => !((a && b) || c),
            "OAI21" => !((a || b) && c),
            "XOR2" => a ^ b,
            "XNOR2" => !(a ^ b),
            "MX2" => {
                // pins (A, B, S): S selects B when high
                if c {
                    b
                } else {
                    a
                }
            }
            other => panic!("no reference for {other}"),
        }
    }

    #[test]
    fn truth_tables_match_reference_for_all_cells() {
        let cat = build_default_catalog(Technology::Silicon45);
        for cell in cat.cells() {
            let base = cell.base_name().unwrap().to_string();
            let table = boolean_function(cell).unwrap();
            let n = cell.inputs.len();
            assert_eq!(table.len(), 1 << n);
            for idx in 0..(1 << n) {
                let bits = index_to_bits(idx, n);
                assert_eq!(
                    table[idx],
                    reference_function(&base, &bits),
                    "{} at {:?}",
                    cell.name,
                    bits
                );
            }
        }
    }

    #[test]
    fn contention_detected_in_malformed_cell() {
        // pull-up gated by A, pull-down by B: (A, B) = (0, 1) fights
        let src = "\
.subckt BADX1 A B Y VDD VSS
M1 Y A VDD VDD P W=2
M2 Y B VSS VSS N W=1
.ends
";
        let cell = parse_subckt(src).unwrap();
        let err = boolean_function(&cell).unwrap_err();
        assert!(matches!(err, OracleError::Contention { .. }), "{err}");
    }

    #[test]
    fn arc_enumeration_counts() {
        let cat = build_default_catalog(Technology::Silicon45);
        let flips = |name: &str| {
            let arcs = enumerate_arcs(cat.get(name).unwrap()).unwrap();
            (
                arcs.len(),
                arcs.iter().filter(|a| a.output_flips).count(),
            )
        };
        assert_eq!(flips("INVX1"), (2, 2));
        assert_eq!(flips("BUFX2"), (2, 2));
        assert_eq!(flips("NAND2X1"), (8, 4));
        assert_eq!(flips("XOR2X1"), (8, 8));
        assert_eq!(flips("MX2X1"), (24, 12));
        assert_eq!(flips("AOI21X1"), (24, 10));
        assert_eq!(flips("OAI21X1"), (24, 10));
        assert_eq!(flips("NAND3X1"), (24, 6));

        // NAND2 pin A: side B=1 sensitizes, B=0 gives static arcs
        let arcs = enumerate_arcs(cat.get("NAND2X1").unwrap()).unwrap();
        let pin_a: Vec<&Arc> = arcs.iter().filter(|a| a.pin == 0).collect();
        assert_eq!(pin_a.len(), 4);
        for arc in pin_a {
            assert_eq!(arc.output_flips, arc.side[0]);
        }
    }

    #[test]
    fn arc_order_is_deterministic() {
        let cat = build_default_catalog(Technology::Silicon45);
        let arcs = enumerate_arcs(cat.get("NAND2X1").unwrap()).unwrap();
        let first = &arcs[0];
        assert_eq!((first.pin, first.side[0], first.rising), (0, false, true));
        let second = &arcs[1];
        assert_eq!((second.pin, second.side[0], second.rising), (0, false, false));
    }

    /// Series/parallel reduction of a two-terminal resistor multigraph;
    /// an independent route to the Laplacian solve.
    fn sp_reduce(mut edges: Vec<(usize, usize, f64)>, s: usize, t: usize) -> f64 {
        loop {
            if edges.len() == 1 {
                let (a, b, r) = edges[0];
                assert!((a, b) == (s, t) || (a, b) == (t, s));
                return r;
            }
            // parallel pairs
            let mut merged = false;
            'outer: for i in 0..edges.len() {
                for j in i + 1..edges.len() {
                    let (a1, b1, r1) = edges[i];
                    let (a2, b2, r2) = edges[j];
                    if (a1, b1) == (a2, b2) || (a1, b1) == (b2, a2) {
                        edges[i] = (a1, b1, r1 * r2 / (r1 + r2));
                        edges.remove(j);
                        merged = true;
                        break 'outer;
                    }
                }
            }
            if merged {
                continue;
            }
            let max_node = edges.iter().map(|&(a, b, _)| a.max(b)).max().unwrap();
            let mut degree = vec![0usize; max_node + 1];
            for &(a, b, _) in &edges {
                degree[a] += 1;
                degree[b] += 1;
            }
            // dangling stubs carry no current
            let before = edges.len();
            edges.retain(|&(a, b, _)| {
                let stub = |n: usize| n != s && n != t && degree[n] == 1;
                !stub(a) && !stub(b)
            });
            if edges.len() != before {
                continue;
            }
            // series nodes: internal, degree exactly 2
            let mut done = true;
            for node in 0..=max_node {
                if node == s || node == t || degree[node] != 2 {
                    continue;
                }
                let idxs: Vec<usize> = edges
                    .iter()
                    .enumerate()
                    .filter(|(_, &(a, b, _))| a == node || b == node)
                    .map(|(i, _)| i)
                    .collect();
                if idxs.len() != 2 {
                    continue;
                }
                let (a1, b1, r1) = edges[idxs[0]];
                let (a2, b2, r2) = edges[idxs[1]];
                let u = if a1 == node { b1 } else { a1 };
                let v = if a2 == node { b2 } else { a2 };
                edges[idxs[0]] = (u, v, r1 + r2);
                edges.remove(idxs[1]);
                done = false;
                break;
            }
            assert!(!done, "graph is not series-parallel");
        }
    }

    #[test]
    fn effective_resistance_matches_series_parallel_reduction() {
        let cat = build_default_catalog(Technology::Silicon45);
        let p = params();
        let c = corner();
        for cell in cat.cells() {
            let view = CellView::new(cell);
            let table = boolean_function(cell).unwrap();
            let n = cell.inputs.len();
            for idx in 0..(1 << n) {
                let bits = index_to_bits(idx, n);
                let out = table[idx];
                let rail = if out { Polarity::P } else { Polarity::N };
                let r_lap = effective_resistance(cell, &bits, rail, &p, &c).unwrap();
                // independent reduction over the same ON network
                let values = view.evaluate_nets(&bits).unwrap();
                let mut edges = Vec::new();
                for (f, &(d, g, s)) in view.fet_nets.iter().enumerate() {
                    let fet = &cell.fets[f];
                    if fet.polarity != rail {
                        continue;
                    }
                    let on = match (fet.polarity, values[g]) {
                        (Polarity::P, Some(v)) => !v,
                        (Polarity::N, Some(v)) => v,
                        (_, None) => false,
                    };
                    if on {
                        let (g_fet, _) = drive_conductance(&p, &c, fet.width);
                        edges.push((d, s, 1.0 / g_fet));
                    }
                }
                // keep only the component reachable from the output
                let mut keep = vec![view.out];
                let mut grown = true;
                while grown {
                    grown = false;
                    for &(a, b, _) in &edges {
                        if keep.contains(&a) && !keep.contains(&b) {
                            keep.push(b);
                            grown = true;
                        }
                        if keep.contains(&b) && !keep.contains(&a) {
                            keep.push(a);
                            grown = true;
                        }
                    }
                }
                edges.retain(|&(a, b, _)| keep.contains(&a) && keep.contains(&b));
                let rail_net = if out { 1000 } else { 1001 };
                // remap rail net id: reduction wants distinct terminal ids
                let target = match rail {
                    Polarity::P => view.net_id(&cell.vdd).unwrap(),
                    Polarity::N => view.net_id(&cell.vss).unwrap(),
                };
                for e in edges.iter_mut() {
                    if e.0 == target {
                        e.0 = rail_net;
                    }
                    if e.1 == target {
                        e.1 = rail_net;
                    }
                }
                let r_sp = sp_reduce(edges, view.out, rail_net);
                assert!(
                    (r_lap - r_sp).abs() <= 1e-10 * r_sp.abs(),
                    "{} state {:?}: laplacian {} vs reduction {}",
                    cell.name,
                    bits,
                    r_lap,
                    r_sp
                );
            }
        }
    }

    #[test]
    fn series_and_parallel_laws() {
        let cat = build_default_catalog(Technology::Silicon45);
        let p = params();
        let c = corner();
        // NAND2 pull-down: two series NFETs of width 2 vs INVX1's single width-1
        let inv = cat.get("INVX1").unwrap();
        let nand = cat.get("NAND2X1").unwrap();
        let r_inv = effective_resistance(inv, &[true], Polarity::N, &p, &c).unwrap();
        let r_nand = effective_resistance(nand, &[true, true], Polarity::N, &p, &c).unwrap();
        assert!((r_nand / r_inv - 1.0).abs() < 1e-12);
        // NAND2 pull-up with both PFETs on: half the single-PFET resistance
        let r_one = effective_resistance(nand, &[false, true], Polarity::P, &p, &c).unwrap();
        let r_both = effective_resistance(nand, &[false, false], Polarity::P, &p, &c).unwrap();
        assert!((r_one / r_both - 2.0).abs() < 1e-12);
    }

    #[test]
    fn inverter_delay_formula_at_zero_load() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.get("INVX1").unwrap();
        let p = params();
        let c = corner();
        let arcs = enumerate_arcs(inv).unwrap();
        let rise_in = &arcs[0]; // A rising -> output falls through the NFET
        let point = characterize(inv, rise_in, &c, 40.0, 0.0, &p).unwrap();
        let r = effective_resistance(inv, &[true], Polarity::N, &p, &c).unwrap();
        let c_int = p.c_drain * (2.0 + 1.0);
        let expected = LN2 * r * c_int * 1000.0 + p.beta_slew * 40.0;
        assert!((point.delay.unwrap() - expected).abs() < 1e-12);
        assert!((point.out_slew.unwrap() - p.eta_slew * r * c_int * 1000.0).abs() < 1e-12);
    }

    #[test]
    fn doubling_widths_halves_rc_up_to_internal_cap() {
        let cat = build_default_catalog(Technology::Silicon45);
        let p = params();
        let c = corner();
        let load = 10.0;
        let slew = 100.0;
        let d = |name: &str| {
            let cell = cat.get(name).unwrap();
            let arcs = enumerate_arcs(cell).unwrap();
            let point = characterize(cell, &arcs[0], &c, slew, load, &p).unwrap();
            point.delay.unwrap() - p.beta_slew * slew
        };
        let d1 = d("INVX1");
        let d2 = d("INVX2");
        // R halves, C_int doubles: ratio fixed by the closed form
        let c1 = load + p.c_drain * 3.0;
        let c2 = load + p.c_drain * 6.0;
        let expected = (c2 / 2.0) / c1;
        assert!(
            (d2 / d1 - expected).abs() < 1e-12,
            "got {} want {}",
            d2 / d1,
            expected
        );
    }

    #[test]
    fn inverter_leakage_ratio_follows_widths() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.get("INVX1").unwrap();
        let p = params();
        let c = corner();
        let engine = CharEngine::new(inv, &p);
        let leak0 = engine.leakage_power(&[false], &c).unwrap(); // NFET off, width 1
        let leak1 = engine.leakage_power(&[true], &c).unwrap(); // PFET off, width 2
        assert!((leak1 / leak0 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn monotonicity_spot_checks() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.get("INVX1").unwrap();
        let p = params();
        let arcs = enumerate_arcs(inv).unwrap();
        let arc = &arcs[0];
        let delay = |vdd: f64, vth: f64, t: f64, slew: f64, load: f64| {
            let c = Corner {
                technology: Technology::Silicon45,
                vdd,
                vth,
                third_axis: t,
            };
            characterize(inv, arc, &c, slew, load, &p)
                .unwrap()
                .delay
                .unwrap()
        };
        // increasing in load and slew
        assert!(delay(1.0, 0.3, 70.0, 40.0, 5.0) < delay(1.0, 0.3, 70.0, 40.0, 6.0));
        assert!(delay(1.0, 0.3, 70.0, 40.0, 5.0) < delay(1.0, 0.3, 70.0, 50.0, 5.0));
        // decreasing in supply
        assert!(delay(1.1, 0.3, 70.0, 40.0, 5.0) < delay(0.9, 0.3, 70.0, 40.0, 5.0));

        let engine = CharEngine::new(inv, &p);
        let leak = |vth: f64, t: f64| {
            engine
                .leakage_power(
                    &[false],
                    &Corner {
                        technology: Technology::Silicon45,
                        vdd: 1.0,
                        vth,
                        third_axis: t,
                    },
                )
                .unwrap()
        };
        assert!(leak(0.4, 70.0) < leak(0.2, 70.0));
        assert!(leak(0.3, 20.0) < leak(0.3, 120.0));
    }

    #[test]
    fn degenerate_supply_is_flagged_not_fatal() {
        let cat = build_default_catalog(Technology::Flexible);
        let inv = cat.get("INVX1").unwrap();
        let p = SurrogateParams::flexible();
        let c = Corner {
            technology: Technology::Flexible,
            vdd: 0.5,
            vth: 1.1,
            third_axis: 90.0,
        };
        let arcs = enumerate_arcs(inv).unwrap();
        let point = characterize(inv, &arcs[0], &c, 10.0, 50.0, &p).unwrap();
        assert!(point.degenerate);
        assert!(point.delay.unwrap().is_finite());
    }

    #[test]
    fn characterize_is_deterministic() {
        let cat = build_default_catalog(Technology::Silicon45);
        let nand = cat.get("NAND2X1").unwrap();
        let p = params();
        let c = corner();
        let arcs = enumerate_arcs(nand).unwrap();
        for arc in &arcs {
            let x = characterize(nand, arc, &c, 123.0, 7.5, &p).unwrap();
            let y = characterize(nand, arc, &c, 123.0, 7.5, &p).unwrap();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn presets_parse_and_roundtrip_keys() {
        let si = SurrogateParams::silicon45();
        assert_eq!(si.technology, Technology::Silicon45);
        assert_eq!(si.k_drive, 40.0);
        assert_eq!(si.alpha, 1.3);
        assert_eq!(si.n_ss, 1.5);
        let fx = SurrogateParams::flexible();
        assert_eq!(fx.technology, Technology::Flexible);
        assert!(parse_params("nonsense").is_err());
        assert!(parse_params("technology = silicon45").is_err());
    }

    #[test]
    fn non_flip_energy_counts_flipping_pin_gates() {
        let cat = build_default_catalog(Technology::Silicon45);
        let nand = cat.get("NAND2X1").unwrap();
        let p = params();
        let c = corner();
        let arcs = enumerate_arcs(nand).unwrap();
        // pin A toggling with B=0: output static, no internal stages in NAND2
        let arc = arcs.iter().find(|a| !a.output_flips && a.pin == 0).unwrap();
        let point = characterize(nand, arc, &c, 40.0, 5.0, &p).unwrap();
        // A gates one PFET (w=2) and one NFET (w=2)
        let expected = 0.5 * c.vdd * c.vdd * p.c_gate * 4.0;
        assert!((point.non_flip_energy.unwrap() - expected).abs() < 1e-12);
        assert!(point.delay.is_none());
    }
}
