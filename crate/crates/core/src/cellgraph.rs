//! Directed cell graphs with per-task node feature vectors.
//!
//! A cell maps to one node per input pin, one output node, one node per FET,
//! and one node per rail. Edge directions follow the terminal rules: input
//! and VDD nodes only source edges, the output node only sinks them, and a
//! FET receives edges at its gate and source terminals while its drain
//! terminal sources edges. When an NFET sits directly on VSS the FET-local
//! rule wins, so the rail still feeds the device (VSS -> NFET); a pure-sink
//! VSS would never propagate rail information. Internal nets are collapsed
//! into direct FET->FET (or FET->gate) edges.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::Corner;
use crate::netlist::{CellNetlist, NetlistError, Polarity};
use crate::util::fmt_sig6;

/// Node categories with their 3-bit type codes (IN=001, OUT=010, FET=011,
/// VDD=100, VSS=101). The codes occupy the first three feature slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    In,
    Out,
    Fet,
    Vdd,
    Vss,
}

impl NodeKind {
    pub fn type_bits(self) -> [f64; 3] {
        match self {
            NodeKind::In => [0.0, 0.0, 1.0],
            NodeKind::Out => [0.0, 1.0, 0.0],
            NodeKind::Fet => [0.0, 1.0, 1.0],
            NodeKind::Vdd => [1.0, 0.0, 0.0],
            NodeKind::Vss => [1.0, 0.0, 1.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::In => "IN",
            NodeKind::Out => "OUT",
            NodeKind::Fet => "FET",
            NodeKind::Vdd => "VDD",
            NodeKind::Vss => "VSS",
        }
    }
}

/// Which feature vector a graph carries.
///
/// DelayPower (12 wide): type bits, polarity, Vdd, width, temperature (or
/// Cox), Vth, input slew, output load, current state, next state.
/// Leakage (9): type bits, polarity, Vdd, width, temperature, Vth, current
/// state. Capacitance (9): same but the last slot flags the chosen pin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureLayout {
    DelayPower,
    Leakage,
    Capacitance,
}

impl FeatureLayout {
    pub fn width(self) -> usize {
        match self {
            FeatureLayout::DelayPower => 12,
            FeatureLayout::Leakage | FeatureLayout::Capacitance => 9,
        }
    }

    pub fn id(self) -> u8 {
        match self {
            FeatureLayout::DelayPower => 0,
            FeatureLayout::Leakage => 1,
            FeatureLayout::Capacitance => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<FeatureLayout> {
        match id {
            0 => Some(FeatureLayout::DelayPower),
            1 => Some(FeatureLayout::Leakage),
            2 => Some(FeatureLayout::Capacitance),
            _ => None,
        }
    }
}

/// Per-graph stimulus, matching the layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Stimulus {
    /// One input pin transitions (`current[i] != next[i]` for exactly one
    /// `i`); that pin carries the slew. Load sits on the output node.
    DelayPower {
        slew: f64,
        load: f64,
        current: Vec<bool>,
        next: Vec<bool>,
    },
    /// Static input state, one entry per pin.
    Leakage { state: Vec<bool> },
    /// Pin selected for capacitance prediction.
    Capacitance { pin: usize },
}

impl Stimulus {
    pub fn layout(&self) -> FeatureLayout {
        match self {
            Stimulus::DelayPower { .. } => FeatureLayout::DelayPower,
            Stimulus::Leakage { .. } => FeatureLayout::Leakage,
            Stimulus::Capacitance { .. } => FeatureLayout::Capacitance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    pub features: Vec<f64>,
}

/// Immutable encoded graph. Node order is fixed: input pins in declaration
/// order, then the output, the FETs in netlist order, VDD, VSS. Edges are
/// sorted `(src, dst)` pairs without self loops.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<(u32, u32)>,
    pub layout: FeatureLayout,
    pub target: Option<f64>,
    pub cell: String,
    pub corner: Corner,
    pub arc_desc: String,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("stimulus does not match cell {cell}: {msg}")]
    StimulusMismatch { cell: String, msg: String },
    #[error("corner has non-finite fields")]
    NonFiniteCorner,
    #[error(transparent)]
    Netlist(#[from] NetlistError),
}

fn state_bit(high: bool) -> f64 {
    if high {
        1.0
    } else {
        -1.0
    }
}

/// Encode a cell at a corner under a stimulus.
pub fn encode(
    cell: &CellNetlist,
    corner: &Corner,
    stimulus: &Stimulus,
    layout: FeatureLayout,
) -> Result<CellGraph, GraphError> {
    if !(corner.vdd.is_finite() && corner.vth.is_finite() && corner.third_axis.is_finite()) {
        return Err(GraphError::NonFiniteCorner);
    }
    cell.validate()?;
    let n_in = cell.inputs.len();
    let mismatch = |msg: &str| GraphError::StimulusMismatch {
        cell: cell.name.clone(),
        msg: msg.to_string(),
    };
    if stimulus.layout() != layout {
        return Err(mismatch("stimulus kind differs from requested layout"));
    }
    match stimulus {
        Stimulus::DelayPower { current, next, .. } => {
            if current.len() != n_in || next.len() != n_in {
                return Err(mismatch("state vectors must cover every input pin"));
            }
            let flips = current.iter().zip(next).filter(|(c, n)| c != n).count();
            if flips != 1 {
                return Err(mismatch("exactly one input pin must transition"));
            }
        }
        Stimulus::Leakage { state } => {
            if state.len() != n_in {
                return Err(mismatch("state vector must cover every input pin"));
            }
        }
        Stimulus::Capacitance { pin } => {
            if *pin >= n_in {
                return Err(mismatch("chosen pin index out of range"));
            }
        }
    }

    let idx_out = n_in;
    let idx_fet0 = n_in + 1;
    let idx_vdd = idx_fet0 + cell.fets.len();
    let idx_vss = idx_vdd + 1;

    // net -> node resolution for non-internal nets
    let mut net_node: BTreeMap<&str, u32> = BTreeMap::new();
    for (i, pin) in cell.inputs.iter().enumerate() {
        net_node.insert(pin.as_str(), i as u32);
    }
    net_node.insert(cell.output.as_str(), idx_out as u32);
    net_node.insert(cell.vdd.as_str(), idx_vdd as u32);
    net_node.insert(cell.vss.as_str(), idx_vss as u32);

    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    for (j, fet) in cell.fets.iter().enumerate() {
        let me = (idx_fet0 + j) as u32;
        // gate edge arrives from a pin node; internal gate nets are handled
        // in the collapse pass below
        if let Some(&src) = net_node.get(fet.gate.as_str()) {
            edges.insert((src, me));
        }
        if let Some(&src) = net_node.get(fet.source.as_str()) {
            edges.insert((src, me));
        }
        if let Some(&dst) = net_node.get(fet.drain.as_str()) {
            edges.insert((me, dst));
        }
    }
    // collapse internal nets: drain side produces, gate/source sides consume
    for net in cell.internal_nets() {
        let producers: Vec<u32> = cell
            .fets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.drain == net)
            .map(|(j, _)| (idx_fet0 + j) as u32)
            .collect();
        let consumers: Vec<u32> = cell
            .fets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.gate == net || f.source == net)
            .map(|(j, _)| (idx_fet0 + j) as u32)
            .collect();
        for &p in &producers {
            for &c in &consumers {
                if p != c {
                    edges.insert((p, c));
                }
            }
        }
    }

    let width = layout.width();
    let mut nodes = Vec::with_capacity(idx_vss + 1);
    let flip_pin = match stimulus {
        Stimulus::DelayPower { current, next, .. } => current
            .iter()
            .zip(next)
            .position(|(c, n)| c != n)
            .unwrap_or(0),
        _ => 0,
    };
    for i in 0..n_in {
        let mut f = vec![0.0; width];
        f[..3].copy_from_slice(&NodeKind::In.type_bits());
        match stimulus {
            Stimulus::DelayPower {
                slew,
                current,
                next,
                ..
            } => {
                if i == flip_pin {
                    f[8] = *slew;
                }
                f[10] = state_bit(current[i]);
                f[11] = state_bit(next[i]);
            }
            Stimulus::Leakage { state } => {
                f[8] = state_bit(state[i]);
            }
            Stimulus::Capacitance { pin } => {
                f[8] = if i == *pin { 1.0 } else { 0.0 };
            }
        }
        nodes.push(Node {
            kind: NodeKind::In,
            features: f,
        });
    }
    {
        let mut f = vec![0.0; width];
        f[..3].copy_from_slice(&NodeKind::Out.type_bits());
        if let Stimulus::DelayPower { load, .. } = stimulus {
            f[9] = *load;
        }
        nodes.push(Node {
            kind: NodeKind::Out,
            features: f,
        });
    }
    for fet in &cell.fets {
        let mut f = vec![0.0; width];
        f[..3].copy_from_slice(&NodeKind::Fet.type_bits());
        let (polar, vth) = match fet.polarity {
            Polarity::N => (-1.0, corner.vth),
            Polarity::P => (1.0, -corner.vth),
        };
        f[3] = polar;
        f[5] = fet.width;
        f[6] = corner.third_axis;
        f[7] = vth;
        nodes.push(Node {
            kind: NodeKind::Fet,
            features: f,
        });
    }
    {
        let mut f = vec![0.0; width];
        f[..3].copy_from_slice(&NodeKind::Vdd.type_bits());
        f[4] = corner.vdd;
        nodes.push(Node {
            kind: NodeKind::Vdd,
            features: f,
        });
    }
    {
        let mut f = vec![0.0; width];
        f[..3].copy_from_slice(&NodeKind::Vss.type_bits());
        nodes.push(Node {
            kind: NodeKind::Vss,
            features: f,
        });
    }

    Ok(CellGraph {
        nodes,
        edges: edges.into_iter().collect(),
        layout,
        target: None,
        cell: cell.name.clone(),
        corner: *corner,
        arc_desc: stimulus_desc(stimulus),
    })
}

fn stimulus_desc(stimulus: &Stimulus) -> String {
    match stimulus {
        Stimulus::DelayPower {
            slew,
            load,
            current,
            next,
        } => {
            let cur: String = current.iter().map(|&b| if b { '1' } else { '0' }).collect();
            let nxt: String = next.iter().map(|&b| if b { '1' } else { '0' }).collect();
            format!(
                "dp cur={cur} next={nxt} slew={} load={}",
                fmt_sig6(*slew),
                fmt_sig6(*load)
            )
        }
        Stimulus::Leakage { state } => {
            let s: String = state.iter().map(|&b| if b { '1' } else { '0' }).collect();
            format!("leak state={s}")
        }
        Stimulus::Capacitance { pin } => format!("cap pin={pin}"),
    }
}

impl CellGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// In-neighbor lists including the implicit self loop, plus 1/in-degree
    /// weights. This is the propagation operator in sparse form.
    pub fn in_neighbors(&self) -> (Vec<Vec<u32>>, Vec<f64>) {
        let n = self.nodes.len();
        let mut lists: Vec<Vec<u32>> = (0..n).map(|i| vec![i as u32]).collect();
        for &(src, dst) in &self.edges {
            lists[dst as usize].push(src);
        }
        let weights = lists.iter().map(|l| 1.0 / l.len() as f64).collect();
        (lists, weights)
    }

    /// Plain-text dump for golden tests: `node <idx> <kind> <features...>`
    /// then `edge <src> <dst>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            write!(out, "node {i} {}", node.kind.name()).unwrap();
            for &f in &node.features {
                write!(out, " {}", fmt_sig6(f)).unwrap();
            }
            out.push('\n');
        }
        for &(s, d) in &self.edges {
            writeln!(out, "edge {s} {d}").unwrap();
        }
        out
    }
}

/// Row-normalized dense propagation matrix with self loops:
/// entry (i, j) is 1/indeg(i) when j feeds i (or j == i), else 0.
pub fn adjacency(graph: &CellGraph) -> Vec<Vec<f64>> {
    let n = graph.nodes.len();
    let mut mat = vec![vec![0.0; n]; n];
    let (lists, weights) = graph.in_neighbors();
    for (i, list) in lists.iter().enumerate() {
        for &j in list {
            mat[i][j as usize] = weights[i];
        }
    }
    mat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{build_default_catalog, Technology};

    fn silicon_corner() -> Corner {
        Corner {
            technology: Technology::Silicon45,
            vdd: 1.0,
            vth: 0.3,
            third_axis: 70.0,
        }
    }

    fn dp_stim(n_in: usize, flip: usize) -> Stimulus {
        let current: Vec<bool> = (0..n_in).map(|i| i != flip).collect();
        let mut next = current.clone();
        next[flip] = true;
        Stimulus::DelayPower {
            slew: 40.0,
            load: 5.0,
            current,
            next,
        }
    }

    #[test]
    fn inverter_graph_nodes_and_edges() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.get("INVX1").unwrap();
        let g = encode(inv, &silicon_corner(), &dp_stim(1, 0), FeatureLayout::DelayPower).unwrap();
        assert_eq!(g.node_count(), 6);
        // order: A=0, Y=1, P=2, N=3, VDD=4, VSS=5
        let expected: Vec<(u32, u32)> = vec![(0, 2), (0, 3), (2, 1), (3, 1), (4, 2), (5, 3)];
        assert_eq!(g.edges, {
            let mut e = expected;
            e.sort();
            e
        });
        assert_eq!(g.nodes[0].kind, NodeKind::In);
        assert_eq!(g.nodes[1].kind, NodeKind::Out);
        assert_eq!(g.nodes[4].kind, NodeKind::Vdd);
        // feature spot checks: PFET polarity +1 with mirrored Vth
        assert_eq!(g.nodes[2].features[3], 1.0);
        assert_eq!(g.nodes[2].features[7], -0.3);
        assert_eq!(g.nodes[3].features[3], -1.0);
        assert_eq!(g.nodes[3].features[7], 0.3);
        assert_eq!(g.nodes[4].features[4], 1.0);
        assert_eq!(g.nodes[1].features[9], 5.0);
        assert_eq!(g.nodes[0].features[8], 40.0);
    }

    #[test]
    fn nand2_graph_matches_hand_derivation() {
        let cat = build_default_catalog(Technology::Silicon45);
        let nand = cat.get("NAND2X1").unwrap();
        let g = encode(nand, &silicon_corner(), &dp_stim(2, 0), FeatureLayout::DelayPower).unwrap();
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.edge_count(), 11);
        // nodes: A=0 B=1 Y=2 P_A=3 P_B=4 N_top=5 N_bot=6 VDD=7 VSS=8
        let mut expected = vec![
            (0, 3), // A gates P_A
            (1, 4), // B gates P_B
            (0, 5), // A gates the OUT-adjacent NFET
            (1, 6), // B gates the VSS-adjacent NFET
            (7, 3),
            (7, 4), // VDD feeds both PFET sources
            (3, 2),
            (4, 2), // PFET drains to OUT
            (5, 2), // top NFET drain to OUT
            (6, 5), // series stack: lower drain -> upper source
            (8, 6), // VSS feeds the bottom NFET source
        ];
        expected.sort();
        assert_eq!(g.edges, expected);
    }

    #[test]
    fn direction_invariants_hold_for_all_cells() {
        let cat = build_default_catalog(Technology::Silicon45);
        for cell in cat.cells() {
            let g = encode(
                cell,
                &silicon_corner(),
                &dp_stim(cell.inputs.len(), 0),
                FeatureLayout::DelayPower,
            )
            .unwrap();
            let n_in = cell.inputs.len();
            assert_eq!(
                g.nodes.iter().filter(|n| n.kind == NodeKind::In).count(),
                n_in
            );
            assert_eq!(
                g.nodes.iter().filter(|n| n.kind == NodeKind::Fet).count(),
                cell.fets.len()
            );
            for kind in [NodeKind::Out, NodeKind::Vdd, NodeKind::Vss] {
                assert_eq!(g.nodes.iter().filter(|n| n.kind == kind).count(), 1);
            }
            for &(s, d) in &g.edges {
                assert_ne!(s, d, "{}: self loop", cell.name);
                let sk = g.nodes[s as usize].kind;
                let dk = g.nodes[d as usize].kind;
                assert_ne!(dk, NodeKind::In, "{}: edge into an input node", cell.name);
                assert_ne!(dk, NodeKind::Vdd, "{}: edge into VDD", cell.name);
                assert_ne!(sk, NodeKind::Out, "{}: edge out of the output", cell.name);
            }
        }
    }

    #[test]
    fn capacitance_layout_flags_exactly_one_pin() {
        let cat = build_default_catalog(Technology::Silicon45);
        let nand = cat.get("NAND2X1").unwrap();
        let g = encode(
            nand,
            &silicon_corner(),
            &Stimulus::Capacitance { pin: 1 },
            FeatureLayout::Capacitance,
        )
        .unwrap();
        assert_eq!(g.nodes[0].features.len(), 9);
        let chosen: Vec<f64> = g
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::In)
            .map(|n| n.features[8])
            .collect();
        assert_eq!(chosen, vec![0.0, 1.0]);
    }

    #[test]
    fn delay_states_are_plus_minus_one() {
        let cat = build_default_catalog(Technology::Silicon45);
        for cell in cat.cells() {
            let g = encode(
                cell,
                &silicon_corner(),
                &dp_stim(cell.inputs.len(), 0),
                FeatureLayout::DelayPower,
            )
            .unwrap();
            for node in g.nodes.iter().filter(|n| n.kind == NodeKind::In) {
                assert!(node.features[10].abs() == 1.0);
                assert!(node.features[11].abs() == 1.0);
            }
        }
    }

    #[test]
    fn stimulus_layout_mismatch_is_an_error() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.get("INVX1").unwrap();
        let err = encode(
            inv,
            &silicon_corner(),
            &Stimulus::Capacitance { pin: 0 },
            FeatureLayout::DelayPower,
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::StimulusMismatch { .. }));
    }

    #[test]
    fn adjacency_examples() {
        // two nodes, one edge 0 -> 1
        let g = CellGraph {
            nodes: vec![
                Node {
                    kind: NodeKind::In,
                    features: vec![0.0],
                },
                Node {
                    kind: NodeKind::Out,
                    features: vec![0.0],
                },
            ],
            edges: vec![(0, 1)],
            layout: FeatureLayout::DelayPower,
            target: None,
            cell: "toy".into(),
            corner: Corner {
                technology: Technology::Silicon45,
                vdd: 1.0,
                vth: 0.3,
                third_axis: 70.0,
            },
            arc_desc: String::new(),
        };
        let a = adjacency(&g);
        assert_eq!(a, vec![vec![1.0, 0.0], vec![0.5, 0.5]]);

        let single = CellGraph {
            nodes: vec![Node {
                kind: NodeKind::Out,
                features: vec![0.0],
            }],
            edges: vec![],
            ..g.clone()
        };
        assert_eq!(adjacency(&single), vec![vec![1.0]]);

        let cat = build_default_catalog(Technology::Silicon45);
        let inv = encode(
            cat.get("INVX1").unwrap(),
            &silicon_corner(),
            &dp_stim(1, 0),
            FeatureLayout::DelayPower,
        )
        .unwrap();
        for row in adjacency(&inv) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_golden_inverter() {
        let cat = build_default_catalog(Technology::Silicon45);
        let inv = cat.get("INVX1").unwrap();
        let g = encode(inv, &silicon_corner(), &dp_stim(1, 0), FeatureLayout::DelayPower).unwrap();
        let expected = "\
node 0 IN 0 0 1 0 0 0 0 0 40 0 -1 1
node 1 OUT 0 1 0 0 0 0 0 0 0 5 0 0
node 2 FET 0 1 1 1 0 2 70 -0.3 0 0 0 0
node 3 FET 0 1 1 -1 0 1 70 0.3 0 0 0 0
node 4 VDD 1 0 0 0 1 0 0 0 0 0 0 0
node 5 VSS 1 0 1 0 0 0 0 0 0 0 0 0
edge 0 2
edge 0 3
edge 2 1
edge 3 1
edge 4 2
edge 5 3
";
        assert_eq!(g.dump(), expected);
    }
}
