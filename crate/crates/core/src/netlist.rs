//! Transistor-level cell netlists and the built-in standard-cell catalog.
//!
//! Cells are static CMOS: a pull-up network of PFETs between VDD and the
//! output and a pull-down network of NFETs between the output and VSS.
//! Widths are dimensionless multiples of the unit NFET width.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

use crate::util::fmt_sig6;

/// Process family a catalog or corner refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Technology {
    Silicon45,
    Flexible,
}

impl Technology {
    pub fn name(self) -> &'static str {
        match self {
            Technology::Silicon45 => "silicon45",
            Technology::Flexible => "flexible",
        }
    }

    /// Display unit for slews and delays.
    pub fn time_unit(self) -> &'static str {
        match self {
            Technology::Silicon45 => "ps",
            Technology::Flexible => "ns",
        }
    }

    /// Conversion factor from internal RC products (MΩ·fF = ns) to the
    /// technology's time unit.
    pub fn time_per_ns(self) -> f64 {
        match self {
            Technology::Silicon45 => 1000.0,
            Technology::Flexible => 1.0,
        }
    }

    pub fn parse(s: &str) -> Option<Technology> {
        match s {
            "silicon45" => Some(Technology::Silicon45),
            "flexible" => Some(Technology::Flexible),
            _ => None,
        }
    }
}

impl fmt::Display for Technology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    N,
    P,
}

impl Polarity {
    pub fn letter(self) -> &'static str {
        match self {
            Polarity::N => "N",
            Polarity::P => "P",
        }
    }
}

/// One FET instance inside a cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Transistor {
    pub id: String,
    pub polarity: Polarity,
    pub drain: String,
    pub gate: String,
    pub source: String,
    pub bulk: String,
    /// Width as a multiple of the unit NFET width. Always > 0.
    pub width: f64,
}

/// A single-output combinational cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellNetlist {
    pub name: String,
    pub inputs: Vec<String>,
    pub output: String,
    pub vdd: String,
    pub vss: String,
    pub fets: Vec<Transistor>,
}

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: missing rail nets (subckt header needs inputs, output, VDD, VSS)")]
    MissingRails { line: usize },
    #[error("line {line}: non-positive width {width} on {id}")]
    NonPositiveWidth { line: usize, id: String, width: f64 },
    #[error("cell {cell}: FET {fet} references undeclared net {net}")]
    UndeclaredNet { cell: String, fet: String, net: String },
    #[error("cell {cell}: no path between the output and {rail}")]
    NoRailPath { cell: String, rail: String },
    #[error("cell {cell}: more than 3 input pins ({n})")]
    TooManyInputs { cell: String, n: usize },
    #[error("cell {cell}: cannot identify a last output stage")]
    NoLastStage { cell: String },
    #[error("cell {cell}: drive suffix missing or invalid")]
    BadDriveSuffix { cell: String },
    #[error("unknown cell {0}")]
    UnknownCell(String),
}

impl CellNetlist {
    /// Nets that appear only inside the FET network (not pins or rails).
    pub fn internal_nets(&self) -> BTreeSet<String> {
        let mut nets = BTreeSet::new();
        for fet in &self.fets {
            for net in [&fet.drain, &fet.gate, &fet.source] {
                if !self.is_interface_net(net) {
                    nets.insert(net.clone());
                }
            }
        }
        nets
    }

    fn is_interface_net(&self, net: &str) -> bool {
        net == self.output
            || net == self.vdd
            || net == self.vss
            || self.inputs.iter().any(|p| p == net)
    }

    /// Drive multiple encoded in the name suffix (`X1`, `X2`, ...).
    pub fn drive(&self) -> Result<u32, NetlistError> {
        parse_drive_suffix(&self.name)
            .map(|(_, d)| d)
            .ok_or_else(|| NetlistError::BadDriveSuffix {
                cell: self.name.clone(),
            })
    }

    /// Cell name with the drive suffix stripped (`NAND2X4` -> `NAND2`).
    pub fn base_name(&self) -> Result<&str, NetlistError> {
        parse_drive_suffix(&self.name)
            .map(|(b, _)| b)
            .ok_or_else(|| NetlistError::BadDriveSuffix {
                cell: self.name.clone(),
            })
    }

    /// Sum of all transistor widths; the unit-area model used for cell area.
    pub fn width_sum(&self) -> f64 {
        self.fets.iter().map(|f| f.width).sum()
    }

    /// FETs forming the output stage: every FET whose drain/source network
    /// reaches the output without crossing a gate-driven net or a rail.
    pub fn last_stage(&self) -> Result<Vec<usize>, NetlistError> {
        let gate_nets: BTreeSet<&str> = self.fets.iter().map(|f| f.gate.as_str()).collect();
        let mut frontier = vec![self.output.clone()];
        let mut seen_nets = BTreeSet::new();
        let mut stage = BTreeSet::new();
        while let Some(net) = frontier.pop() {
            if !seen_nets.insert(net.clone()) {
                continue;
            }
            for (idx, fet) in self.fets.iter().enumerate() {
                if fet.drain != net && fet.source != net {
                    continue;
                }
                if stage.insert(idx) {
                    for other in [&fet.drain, &fet.source] {
                        let boundary = *other == self.vdd
                            || *other == self.vss
                            || gate_nets.contains(other.as_str());
                        if !boundary {
                            frontier.push(other.clone());
                        }
                    }
                }
            }
        }
        if stage.is_empty() {
            return Err(NetlistError::NoLastStage {
                cell: self.name.clone(),
            });
        }
        Ok(stage.into_iter().collect())
    }

    /// Structural checks beyond what the parser enforces.
    pub fn validate(&self) -> Result<(), NetlistError> {
        if self.inputs.len() > 3 {
            return Err(NetlistError::TooManyInputs {
                cell: self.name.clone(),
                n: self.inputs.len(),
            });
        }
        // every gate net must be an input pin or driven by some FET channel
        let driven: BTreeSet<&str> = self
            .fets
            .iter()
            .flat_map(|f| [f.drain.as_str(), f.source.as_str()])
            .collect();
        for fet in &self.fets {
            let g = fet.gate.as_str();
            let ok = self.inputs.iter().any(|p| p == g)
                || (driven.contains(g) && g != self.vdd && g != self.vss && g != self.output);
            if !ok {
                return Err(NetlistError::UndeclaredNet {
                    cell: self.name.clone(),
                    fet: fet.id.clone(),
                    net: fet.gate.clone(),
                });
            }
        }
        self.check_rail_path(Polarity::P, &self.vdd)?;
        self.check_rail_path(Polarity::N, &self.vss)?;
        Ok(())
    }

    /// Connectivity-only search: is there a chain of FETs of `polarity`
    /// linking the output to `rail`?
    fn check_rail_path(&self, polarity: Polarity, rail: &str) -> Result<(), NetlistError> {
        let mut reach = BTreeSet::new();
        let mut frontier = vec![self.output.as_str()];
        while let Some(net) = frontier.pop() {
            if !reach.insert(net) {
                continue;
            }
            if net == rail {
                return Ok(());
            }
            for fet in &self.fets {
                if fet.polarity != polarity {
                    continue;
                }
                if fet.drain == net {
                    frontier.push(&fet.source);
                } else if fet.source == net {
                    frontier.push(&fet.drain);
                }
            }
        }
        Err(NetlistError::NoRailPath {
            cell: self.name.clone(),
            rail: rail.to_string(),
        })
    }
}

/// Split `NAND2X4` into (`NAND2`, 4). None when the suffix is missing.
pub fn parse_cell_name(name: &str) -> Option<(&str, u32)> {
    parse_drive_suffix(name)
}

fn parse_drive_suffix(name: &str) -> Option<(&str, u32)> {
    let pos = name.rfind('X')?;
    let digits = &name[pos + 1..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let drive: u32 = digits.parse().ok()?;
    if drive == 0 {
        return None;
    }
    Some((&name[..pos], drive))
}

/// Parse a single cell from the line-oriented subckt format.
///
/// ```text
/// .subckt NAME in1 [in2 [in3]] out VDD VSS
/// M<id> <drain> <gate> <source> <bulk> <N|P> W=<float>
/// .ends
/// ```
///
/// `*` starts a comment line.
pub fn parse_subckt(text: &str) -> Result<CellNetlist, NetlistError> {
    let mut cell: Option<CellNetlist> = None;
    let mut ended = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        if ended {
            return Err(NetlistError::Syntax {
                line,
                msg: "content after .ends".into(),
            });
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens[0] == ".subckt" {
            if cell.is_some() {
                return Err(NetlistError::Syntax {
                    line,
                    msg: "nested .subckt".into(),
                });
            }
            // name + at least one input + output + VDD + VSS
            if tokens.len() < 6 {
                return Err(NetlistError::MissingRails { line });
            }
            let nets = &tokens[2..];
            let (rails, rest) = nets.split_at(nets.len() - 2);
            let _ = rails;
            let (vdd, vss) = (rest[0], rest[1]);
            if vdd != "VDD" || vss != "VSS" {
                return Err(NetlistError::MissingRails { line });
            }
            let pins = &nets[..nets.len() - 2];
            let output = pins[pins.len() - 1];
            let inputs = &pins[..pins.len() - 1];
            if inputs.len() > 3 {
                return Err(NetlistError::Syntax {
                    line,
                    msg: format!("{} input pins (max 3)", inputs.len()),
                });
            }
            cell = Some(CellNetlist {
                name: tokens[1].to_string(),
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
                output: output.to_string(),
                vdd: vdd.to_string(),
                vss: vss.to_string(),
                fets: Vec::new(),
            });
        } else if tokens[0] == ".ends" {
            if cell.is_none() {
                return Err(NetlistError::Syntax {
                    line,
                    msg: ".ends before .subckt".into(),
                });
            }
            ended = true;
        } else if tokens[0].starts_with('M') {
            let cell = cell.as_mut().ok_or(NetlistError::Syntax {
                line,
                msg: "device line before .subckt".into(),
            })?;
            if tokens.len() != 7 {
                return Err(NetlistError::Syntax {
                    line,
                    msg: format!("expected 7 fields on device line, got {}", tokens.len()),
                });
            }
            let polarity = match tokens[5] {
                "N" => Polarity::N,
                "P" => Polarity::P,
                other => {
                    return Err(NetlistError::Syntax {
                        line,
                        msg: format!("polarity must be N or P, got {other}"),
                    })
                }
            };
            let width_str = tokens[6].strip_prefix("W=").ok_or(NetlistError::Syntax {
                line,
                msg: "missing W= field".into(),
            })?;
            let width: f64 = width_str.parse().map_err(|_| NetlistError::Syntax {
                line,
                msg: format!("bad width {width_str}"),
            })?;
            if !(width > 0.0) {
                return Err(NetlistError::NonPositiveWidth {
                    line,
                    id: tokens[0].to_string(),
                    width,
                });
            }
            cell.fets.push(Transistor {
                id: tokens[0].to_string(),
                polarity,
                drain: tokens[1].to_string(),
                gate: tokens[2].to_string(),
                source: tokens[3].to_string(),
                bulk: tokens[4].to_string(),
                width,
            });
        } else {
            return Err(NetlistError::Syntax {
                line,
                msg: format!("unrecognized line starting with {}", tokens[0]),
            });
        }
    }
    let cell = cell.ok_or(NetlistError::Syntax {
        line: 0,
        msg: "no .subckt found".into(),
    })?;
    if !ended {
        return Err(NetlistError::Syntax {
            line: 0,
            msg: "missing .ends".into(),
        });
    }
    Ok(cell)
}

/// Inverse of [`parse_subckt`]: single spaces, widths with 6 significant
/// digits, one device per line.
pub fn emit_subckt(cell: &CellNetlist) -> String {
    let mut out = String::new();
    out.push_str(".subckt ");
    out.push_str(&cell.name);
    for pin in &cell.inputs {
        out.push(' ');
        out.push_str(pin);
    }
    out.push(' ');
    out.push_str(&cell.output);
    out.push(' ');
    out.push_str(&cell.vdd);
    out.push(' ');
    out.push_str(&cell.vss);
    out.push('\n');
    for fet in &cell.fets {
        out.push_str(&format!(
            "{} {} {} {} {} {} W={}\n",
            fet.id,
            fet.drain,
            fet.gate,
            fet.source,
            fet.bulk,
            fet.polarity.letter(),
            fmt_sig6(fet.width)
        ));
    }
    out.push_str(".ends\n");
    out
}

/// Scale a cell's output stage to `multiple` times its X1 widths and rename
/// accordingly. Earlier stages are left untouched.
pub fn scale_drive(cell: &CellNetlist, multiple: u32) -> Result<CellNetlist, NetlistError> {
    assert!(multiple >= 1, "drive multiple must be >= 1");
    let stage = cell.last_stage()?;
    let drive = cell.drive()?;
    let base = cell.base_name()?.to_string();
    let mut scaled = cell.clone();
    let factor = multiple as f64 / drive as f64;
    for idx in stage {
        scaled.fets[idx].width *= factor;
    }
    scaled.name = format!("{base}X{multiple}");
    Ok(scaled)
}

/// The 33-cell catalog.
#[derive(Debug, Clone)]
pub struct CellCatalog {
    cells: Vec<CellNetlist>,
    by_name: HashMap<String, usize>,
    pub technology: Technology,
}

impl CellCatalog {
    pub fn new(technology: Technology, cells: Vec<CellNetlist>) -> CellCatalog {
        let by_name = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), i))
            .collect();
        CellCatalog {
            cells,
            by_name,
            technology,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&CellNetlist> {
        self.by_name.get(name).map(|&i| &self.cells[i])
    }

    pub fn cells(&self) -> &[CellNetlist] {
        &self.cells
    }

    /// Restrict to a named subset, preserving catalog order.
    pub fn subset(&self, names: &[&str]) -> Result<CellCatalog, NetlistError> {
        for n in names {
            if !self.by_name.contains_key(*n) {
                return Err(NetlistError::UnknownCell(n.to_string()));
            }
        }
        let cells = self
            .cells
            .iter()
            .filter(|c| names.contains(&c.name.as_str()))
            .cloned()
            .collect();
        Ok(CellCatalog::new(self.technology, cells))
    }

    /// Add a cell (used by drive interpolation). Replaces any same-named cell.
    pub fn insert(&mut self, cell: CellNetlist) {
        if let Some(&i) = self.by_name.get(&cell.name) {
            self.cells[i] = cell;
        } else {
            self.by_name.insert(cell.name.clone(), self.cells.len());
            self.cells.push(cell);
        }
    }
}

const UNIT_N: f64 = 1.0;
const UNIT_P: f64 = 2.0;

struct CellBuilder {
    cell: CellNetlist,
    next_id: usize,
}

impl CellBuilder {
    fn new(name: &str, inputs: &[&str]) -> CellBuilder {
        CellBuilder {
            cell: CellNetlist {
                name: name.to_string(),
                inputs: inputs.iter().map(|s| s.to_string()).collect(),
                output: "Y".into(),
                vdd: "VDD".into(),
                vss: "VSS".into(),
                fets: Vec::new(),
            },
            next_id: 1,
        }
    }

    fn fet(&mut self, polarity: Polarity, drain: &str, gate: &str, source: &str, width: f64) {
        let bulk = match polarity {
            Polarity::P => "VDD",
            Polarity::N => "VSS",
        };
        self.cell.fets.push(Transistor {
            id: format!("M{}", self.next_id),
            polarity,
            drain: drain.into(),
            gate: gate.into(),
            source: source.into(),
            bulk: bulk.into(),
            width,
        });
        self.next_id += 1;
    }

    /// Complementary inverter stage; `scale` multiplies both widths.
    fn inv_stage(&mut self, input: &str, output: &str, scale: f64) {
        self.fet(Polarity::P, output, input, "VDD", UNIT_P * scale);
        self.fet(Polarity::N, output, input, "VSS", UNIT_N * scale);
    }

    /// NAND-style stage: parallel PFETs, series NFET stack. The first input
    /// gates the NFET adjacent to `output`. Series devices are widened by
    /// the stack depth.
    fn nand_stage(&mut self, inputs: &[&str], output: &str, prefix: &str, scale: f64) {
        let n = inputs.len();
        for pin in inputs {
            self.fet(Polarity::P, output, pin, "VDD", UNIT_P * scale);
        }
        let mut upper = output.to_string();
        for (i, pin) in inputs.iter().enumerate() {
            let lower = if i + 1 == n {
                "VSS".to_string()
            } else {
                format!("{prefix}{}", i + 1)
            };
            self.fet(
                Polarity::N,
                &upper,
                pin,
                &lower,
                UNIT_N * n as f64 * scale,
            );
            upper = lower;
        }
    }

    /// NOR-style stage: parallel NFETs, series PFET stack with the first
    /// input adjacent to `output`.
    fn nor_stage(&mut self, inputs: &[&str], output: &str, prefix: &str, scale: f64) {
        let n = inputs.len();
        let mut lower = output.to_string();
        for (i, pin) in inputs.iter().enumerate() {
            let upper = if i + 1 == n {
                "VDD".to_string()
            } else {
                format!("{prefix}{}", i + 1)
            };
            self.fet(
                Polarity::P,
                &lower,
                pin,
                &upper,
                UNIT_P * n as f64 * scale,
            );
            lower = upper;
        }
        for pin in inputs {
            self.fet(Polarity::N, output, pin, "VSS", UNIT_N * scale);
        }
    }

    fn finish(self) -> CellNetlist {
        self.cell
    }
}

fn build_inv(drive: u32) -> CellNetlist {
    let mut b = CellBuilder::new(&format!("INVX{drive}"), &["A"]);
    b.inv_stage("A", "Y", drive as f64);
    b.finish()
}

fn build_buf(drive: u32) -> CellNetlist {
    let mut b = CellBuilder::new(&format!("BUFX{drive}"), &["A"]);
    b.inv_stage("A", "n1", 1.0);
    b.inv_stage("n1", "Y", drive as f64);
    b.finish()
}

fn build_nand(n: usize, drive: u32) -> CellNetlist {
    let inputs: Vec<&str> = ["A", "B", "C"][..n].to_vec();
    let mut b = CellBuilder::new(&format!("NAND{n}X{drive}"), &inputs);
    b.nand_stage(&inputs, "Y", "mid", drive as f64);
    b.finish()
}

fn build_nor(n: usize, drive: u32) -> CellNetlist {
    let inputs: Vec<&str> = ["A", "B", "C"][..n].to_vec();
    let mut b = CellBuilder::new(&format!("NOR{n}X{drive}"), &inputs);
    b.nor_stage(&inputs, "Y", "mid", drive as f64);
    b.finish()
}

fn build_and(n: usize, drive: u32) -> CellNetlist {
    let inputs: Vec<&str> = ["A", "B", "C"][..n].to_vec();
    let mut b = CellBuilder::new(&format!("AND{n}X{drive}"), &inputs);
    b.nand_stage(&inputs, "n1", "mid", 1.0);
    b.inv_stage("n1", "Y", drive as f64);
    b.finish()
}

fn build_or(n: usize, drive: u32) -> CellNetlist {
    let inputs: Vec<&str> = ["A", "B", "C"][..n].to_vec();
    let mut b = CellBuilder::new(&format!("OR{n}X{drive}"), &inputs);
    b.nor_stage(&inputs, "n1", "mid", 1.0);
    b.inv_stage("n1", "Y", drive as f64);
    b.finish()
}

/// Y = !((A & B) | C)
fn build_aoi21(drive: u32) -> CellNetlist {
    let s = drive as f64;
    let mut b = CellBuilder::new(&format!("AOI21X{drive}"), &["A", "B", "C"]);
    b.fet(Polarity::P, "m1", "A", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "m1", "B", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "C", "m1", 2.0 * UNIT_P * s);
    b.fet(Polarity::N, "Y", "A", "k1", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "k1", "B", "VSS", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "Y", "C", "VSS", UNIT_N * s);
    b.finish()
}

/// Y = !((A | B) & C)
fn build_oai21(drive: u32) -> CellNetlist {
    let s = drive as f64;
    let mut b = CellBuilder::new(&format!("OAI21X{drive}"), &["A", "B", "C"]);
    b.fet(Polarity::P, "m1", "A", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "B", "m1", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "C", "VDD", UNIT_P * s);
    b.fet(Polarity::N, "Y", "A", "k1", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "Y", "B", "k1", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "k1", "C", "VSS", 2.0 * UNIT_N * s);
    b.finish()
}

/// Y = A ^ B, complementary CMOS with input inverters feeding a branched
/// series/parallel stage. The branched stage is the output stage.
fn build_xor2(drive: u32) -> CellNetlist {
    let s = drive as f64;
    let mut b = CellBuilder::new(&format!("XOR2X{drive}"), &["A", "B"]);
    b.inv_stage("A", "ab", 1.0);
    b.inv_stage("B", "bb", 1.0);
    b.fet(Polarity::P, "m1", "A", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "bb", "m1", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "m2", "ab", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "B", "m2", 2.0 * UNIT_P * s);
    b.fet(Polarity::N, "Y", "A", "k1", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "k1", "B", "VSS", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "Y", "ab", "k2", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "k2", "bb", "VSS", 2.0 * UNIT_N * s);
    b.finish()
}

/// Y = !(A ^ B)
fn build_xnor2(drive: u32) -> CellNetlist {
    let s = drive as f64;
    let mut b = CellBuilder::new(&format!("XNOR2X{drive}"), &["A", "B"]);
    b.inv_stage("A", "ab", 1.0);
    b.inv_stage("B", "bb", 1.0);
    b.fet(Polarity::P, "m1", "A", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "B", "m1", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "m2", "ab", "VDD", 2.0 * UNIT_P * s);
    b.fet(Polarity::P, "Y", "bb", "m2", 2.0 * UNIT_P * s);
    b.fet(Polarity::N, "Y", "A", "k1", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "k1", "bb", "VSS", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "Y", "ab", "k2", 2.0 * UNIT_N * s);
    b.fet(Polarity::N, "k2", "B", "VSS", 2.0 * UNIT_N * s);
    b.finish()
}

/// Y = S ? B : A. Select inverter, complex select stage, output inverter.
fn build_mx2(drive: u32) -> CellNetlist {
    let s = drive as f64;
    let mut b = CellBuilder::new(&format!("MX2X{drive}"), &["A", "B", "S"]);
    b.inv_stage("S", "sb", 1.0);
    b.fet(Polarity::P, "m1", "S", "VDD", 2.0 * UNIT_P);
    b.fet(Polarity::P, "m1", "B", "VDD", 2.0 * UNIT_P);
    b.fet(Polarity::P, "n1", "sb", "m1", 2.0 * UNIT_P);
    b.fet(Polarity::P, "n1", "A", "m1", 2.0 * UNIT_P);
    b.fet(Polarity::N, "n1", "A", "k1", 2.0 * UNIT_N);
    b.fet(Polarity::N, "k1", "sb", "VSS", 2.0 * UNIT_N);
    b.fet(Polarity::N, "n1", "B", "k2", 2.0 * UNIT_N);
    b.fet(Polarity::N, "k2", "S", "VSS", 2.0 * UNIT_N);
    b.inv_stage("n1", "Y", s);
    b.finish()
}

/// Build a cell of the given family at a drive strength. Families:
/// INV, BUF, NAND2/3, NOR2/3, AND2/3, OR2/3, AOI21, OAI21, XOR2, XNOR2, MX2.
pub fn build_cell(base: &str, drive: u32) -> Result<CellNetlist, NetlistError> {
    let cell = match base {
        "INV" => build_inv(drive),
        "BUF" => build_buf(drive),
        "NAND2" => build_nand(2, drive),
        "NAND3" => build_nand(3, drive),
        "NOR2" => build_nor(2, drive),
        "NOR3" => build_nor(3, drive),
        "AND2" => build_and(2, drive),
        "AND3" => build_and(3, drive),
        "OR2" => build_or(2, drive),
        "OR3" => build_or(3, drive),
        "AOI21" => build_aoi21(drive),
        "OAI21" => build_oai21(drive),
        "XOR2" => build_xor2(drive),
        "XNOR2" => build_xnor2(drive),
        "MX2" => build_mx2(drive),
        _ => return Err(NetlistError::UnknownCell(base.to_string())),
    };
    Ok(cell)
}

/// The default 33-cell catalog.
pub fn build_default_catalog(technology: Technology) -> CellCatalog {
    let mut cells = Vec::new();
    for base in ["AND2", "OR2", "NAND2", "NOR2"] {
        for drive in [1, 2, 4] {
            cells.push(build_cell(base, drive).unwrap());
        }
    }
    for base in ["AND3", "OR3", "NAND3", "NOR3", "AOI21", "OAI21"] {
        cells.push(build_cell(base, 1).unwrap());
    }
    for base in ["MX2", "XOR2", "XNOR2"] {
        for drive in [1, 2] {
            cells.push(build_cell(base, drive).unwrap());
        }
    }
    for drive in [1, 2, 4, 8, 16] {
        cells.push(build_cell("INV", drive).unwrap());
    }
    for drive in [2, 4, 8, 16] {
        cells.push(build_cell("BUF", drive).unwrap());
    }
    CellCatalog::new(technology, cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INV_SRC: &str = "\
* minimal inverter
.subckt INVX1 A Y VDD VSS
M1 Y A VDD VDD P W=2
M2 Y A VSS VSS N W=1
.ends
";

    #[test]
    fn parse_minimal_inverter() {
        let cell = parse_subckt(INV_SRC).unwrap();
        assert_eq!(cell.name, "INVX1");
        assert_eq!(cell.inputs, vec!["A"]);
        assert_eq!(cell.output, "Y");
        assert_eq!(cell.fets.len(), 2);
        assert_eq!(cell.fets[0].polarity, Polarity::P);
        assert_eq!(cell.fets[0].width, 2.0);
        cell.validate().unwrap();
    }

    #[test]
    fn parse_nand2_internal_net() {
        let cat = build_default_catalog(Technology::Silicon45);
        let nand = cat.get("NAND2X1").unwrap();
        let src = emit_subckt(nand);
        let parsed = parse_subckt(&src).unwrap();
        let internals: Vec<String> = parsed.internal_nets().into_iter().collect();
        assert_eq!(internals, vec!["mid1".to_string()]);
    }

    #[test]
    fn negative_width_rejected() {
        let src = INV_SRC.replace("W=1", "W=-1");
        let err = parse_subckt(&src).unwrap_err();
        match err {
            NetlistError::NonPositiveWidth { width, .. } => assert_eq!(width, -1.0),
            other => panic!("expected NonPositiveWidth, got {other}"),
        }
    }

    #[test]
    fn missing_rails_rejected() {
        let err = parse_subckt(".subckt INVX1 A Y VDD\nM1 Y A VDD VDD P W=2\n.ends\n").unwrap_err();
        assert!(matches!(err, NetlistError::MissingRails { .. }));
    }

    #[test]
    fn undriven_gate_rejected() {
        let src = "\
.subckt INVX1 A Y VDD VSS
M1 Y typo VDD VDD P W=2
M2 Y A VSS VSS N W=1
.ends
";
        let cell = parse_subckt(src).unwrap();
        assert!(matches!(
            cell.validate(),
            Err(NetlistError::UndeclaredNet { .. })
        ));
    }

    #[test]
    fn default_catalog_is_33_cells() {
        for tech in [Technology::Silicon45, Technology::Flexible] {
            let cat = build_default_catalog(tech);
            assert_eq!(cat.len(), 33);
            assert_eq!(cat.technology, tech);
        }
        let cat = build_default_catalog(Technology::Silicon45);
        assert!(cat.get("INVX16").is_some());
        assert!(cat.get("BUFX16").is_some());
        assert!(cat.get("BUFX1").is_none());
        // family counts
        let count = |p: &str| cat.cells().iter().filter(|c| c.name.starts_with(p)).count();
        assert_eq!(count("AND2") + count("OR2") + count("NAND2") + count("NOR2"), 12);
        assert_eq!(count("AND3") + count("OR3") + count("NAND3") + count("NOR3"), 4);
        assert_eq!(count("AOI21") + count("OAI21"), 2);
        assert_eq!(count("MX2") + count("XOR2") + count("XNOR2"), 6);
        assert_eq!(count("INV"), 5);
        assert_eq!(count("BUF"), 4);
    }

    #[test]
    fn catalog_cells_validate_and_roundtrip() {
        let cat = build_default_catalog(Technology::Silicon45);
        for cell in cat.cells() {
            cell.validate().unwrap_or_else(|e| panic!("{}: {e}", cell.name));
            let back = parse_subckt(&emit_subckt(cell)).unwrap();
            assert_eq!(&back, cell, "round trip mismatch for {}", cell.name);
        }
    }

    #[test]
    fn every_input_gates_both_polarities() {
        let cat = build_default_catalog(Technology::Silicon45);
        for cell in cat.cells() {
            for pin in &cell.inputs {
                let p = cell
                    .fets
                    .iter()
                    .any(|f| f.gate == *pin && f.polarity == Polarity::P);
                let n = cell
                    .fets
                    .iter()
                    .any(|f| f.gate == *pin && f.polarity == Polarity::N);
                assert!(p && n, "{} pin {pin} must gate a PFET and an NFET", cell.name);
            }
        }
    }

    #[test]
    fn scale_drive_inverter() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv3 = scale_drive(cat.get("INVX1").unwrap(), 3).unwrap();
        assert_eq!(inv3.name, "INVX3");
        assert_eq!(inv3.fets[0].width, 6.0);
        assert_eq!(inv3.fets[1].width, 3.0);
    }

    #[test]
    fn scale_drive_buffer_scales_last_stage_only() {
        let cat = build_default_catalog(Technology::Silicon45);
        let buf2 = cat.get("BUFX2").unwrap();
        let buf4 = cat.get("BUFX4").unwrap();
        // catalog consistency: scaling BUFX2 to 4 reproduces BUFX4
        let scaled = scale_drive(buf2, 4).unwrap();
        assert_eq!(&scaled, buf4);
        let buf5 = scale_drive(buf2, 5).unwrap();
        assert_eq!(buf5.name, "BUFX5");
        // first stage untouched
        assert_eq!(buf5.fets[0].width, 2.0);
        assert_eq!(buf5.fets[1].width, 1.0);
        // second stage 5/2 of BUFX2's
        assert_eq!(buf5.fets[2].width, 10.0);
        assert_eq!(buf5.fets[3].width, 5.0);
    }

    #[test]
    fn scale_drive_nand_scales_all_fets() {
        let cat = build_default_catalog(Technology::Silicon45);
        let nand3x = scale_drive(cat.get("NAND2X1").unwrap(), 3).unwrap();
        assert_eq!(nand3x.name, "NAND2X3");
        for fet in &nand3x.fets {
            assert_eq!(fet.width, 6.0, "all four FETs sit in the output stage");
        }
    }

    #[test]
    fn scale_drive_normalize_composes() {
        let cat = build_default_catalog(Technology::Silicon45);
        for cell in cat.cells() {
            for (a, b) in [(2u32, 3u32), (4, 1), (3, 7)] {
                let via = scale_drive(&scale_drive(cell, a).unwrap(), 1).unwrap();
                let direct = scale_drive(cell, b).unwrap();
                let via_b = scale_drive(&via, b).unwrap();
                assert_eq!(via_b.name, direct.name);
                for (x, y) in via_b.fets.iter().zip(&direct.fets) {
                    assert!(
                        (x.width - y.width).abs() < 1e-12,
                        "{}: {} vs {}",
                        cell.name,
                        x.width,
                        y.width
                    );
                }
            }
        }
    }

    #[test]
    fn last_stage_of_and2_is_the_inverter() {
        let cat = build_default_catalog(Technology::Silicon45);
        let and2 = cat.get("AND2X1").unwrap();
        let stage = and2.last_stage().unwrap();
        // The NAND part is 4 FETs (indices 0..4); the inverter is 4,5.
        assert_eq!(stage, vec![4, 5]);
    }
}
