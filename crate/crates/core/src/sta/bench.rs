//! Bundled benchmark netlists, generated deterministically: inverter
//! chains, ripple-carry adders, a 4x4 array multiplier, and seeded random
//! DAGs. Everything is built from the two-input subset of the catalog so
//! the same netlists work against both full and reduced libraries.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::{Gate, GateNetlist};
use crate::util::derive_seed;

const DEFAULT_SLEW: f64 = 40.0;
const DEFAULT_LOAD: f64 = 5.0;
const DEFAULT_ACTIVITY: f64 = 0.2;

fn base(name: &str, period: f64) -> GateNetlist {
    GateNetlist {
        name: name.to_string(),
        gates: Vec::new(),
        primary_inputs: Vec::new(),
        primary_outputs: Vec::new(),
        period,
        default_slew: DEFAULT_SLEW,
        slew_overrides: BTreeMap::new(),
        default_load: DEFAULT_LOAD,
        load_overrides: BTreeMap::new(),
        default_activity: DEFAULT_ACTIVITY,
        activity_overrides: BTreeMap::new(),
    }
}

/// `n` inverters in a line.
pub fn inv_chain(n: usize, period: f64) -> GateNetlist {
    assert!(n >= 1);
    let mut nl = base(&format!("inv-chain-{n}"), period);
    nl.primary_inputs.push("a".into());
    let mut prev = "a".to_string();
    for i in 0..n {
        let out = if i + 1 == n {
            "y".to_string()
        } else {
            format!("n{}", i + 1)
        };
        nl.gates.push(Gate {
            name: format!("g{}", i + 1),
            cell: "INVX1".into(),
            output: out.clone(),
            inputs: vec![prev],
        });
        prev = out;
    }
    nl.primary_outputs.push("y".into());
    nl
}

struct NetNamer {
    counter: usize,
}

impl NetNamer {
    fn next(&mut self) -> String {
        self.counter += 1;
        format!("t{}", self.counter)
    }
}

/// Full adder from two-input gates:
/// sum = (a^b)^cin, cout = nand(nand(a,b), nand(a^b, cin)). Five gates.
fn full_adder(
    nl: &mut GateNetlist,
    namer: &mut NetNamer,
    prefix: &str,
    a: &str,
    b: &str,
    cin: &str,
) -> (String, String) {
    let s1 = namer.next();
    let sum = namer.next();
    let n1 = namer.next();
    let n2 = namer.next();
    let cout = namer.next();
    let mut push = |tag: &str, cell: &str, out: &str, ins: Vec<&str>| {
        nl.gates.push(Gate {
            name: format!("{prefix}_{tag}"),
            cell: cell.into(),
            output: out.into(),
            inputs: ins.into_iter().map(String::from).collect(),
        });
    };
    push("x1", "XOR2X1", &s1, vec![a, b]);
    push("x2", "XOR2X1", &sum, vec![&s1, cin]);
    push("n1", "NAND2X1", &n1, vec![a, b]);
    push("n2", "NAND2X1", &n2, vec![&s1, cin]);
    push("n3", "NAND2X1", &cout, vec![&n1, &n2]);
    (sum, cout)
}

/// Half adder: sum = a^b, carry = a&b. Two gates.
fn half_adder(
    nl: &mut GateNetlist,
    namer: &mut NetNamer,
    prefix: &str,
    a: &str,
    b: &str,
) -> (String, String) {
    let sum = namer.next();
    let carry = namer.next();
    nl.gates.push(Gate {
        name: format!("{prefix}_hx"),
        cell: "XOR2X1".into(),
        output: sum.clone(),
        inputs: vec![a.into(), b.into()],
    });
    nl.gates.push(Gate {
        name: format!("{prefix}_ha"),
        cell: "AND2X1".into(),
        output: carry.clone(),
        inputs: vec![a.into(), b.into()],
    });
    (sum, carry)
}

/// Ripple-carry adder, `bits` full-adder slices (5 gates each).
pub fn rca(bits: usize, period: f64) -> GateNetlist {
    assert!(bits >= 1);
    let mut nl = base(&format!("rca{bits}"), period);
    for i in 0..bits {
        nl.primary_inputs.push(format!("a{i}"));
        nl.primary_inputs.push(format!("b{i}"));
    }
    nl.primary_inputs.push("cin".into());
    let mut namer = NetNamer { counter: 0 };
    let mut carry = "cin".to_string();
    for i in 0..bits {
        let (sum, cout) = full_adder(
            &mut nl,
            &mut namer,
            &format!("fa{i}"),
            &format!("a{i}"),
            &format!("b{i}"),
            &carry,
        );
        // expose the slice sum as a primary output under a stable name
        let sum_po = format!("s{i}");
        rename_net(&mut nl, &sum, &sum_po);
        nl.primary_outputs.push(sum_po);
        carry = cout;
    }
    let cout_po = "cout".to_string();
    rename_net(&mut nl, &carry, &cout_po);
    nl.primary_outputs.push(cout_po);
    nl
}

fn rename_net(nl: &mut GateNetlist, from: &str, to: &str) {
    for gate in nl.gates.iter_mut() {
        if gate.output == from {
            gate.output = to.to_string();
        }
        for input in gate.inputs.iter_mut() {
            if input == from {
                *input = to.to_string();
            }
        }
    }
}

/// 4x4 array multiplier: 16 partial-product AND gates reduced with half
/// and full adders by bit weight (64 gates).
pub fn mult4x4(period: f64) -> GateNetlist {
    let mut nl = base("mult4x4", period);
    for i in 0..4 {
        nl.primary_inputs.push(format!("a{i}"));
    }
    for j in 0..4 {
        nl.primary_inputs.push(format!("b{j}"));
    }
    let mut namer = NetNamer { counter: 0 };
    // bit heaps per weight
    let mut heaps: Vec<Vec<String>> = vec![Vec::new(); 8];
    for i in 0..4 {
        for j in 0..4 {
            let pp = format!("pp{i}{j}");
            nl.gates.push(Gate {
                name: format!("and{i}{j}"),
                cell: "AND2X1".into(),
                output: pp.clone(),
                inputs: vec![format!("a{i}"), format!("b{j}")],
            });
            heaps[i + j].push(pp);
        }
    }
    let mut k = 0;
    while k < heaps.len() {
        while heaps[k].len() >= 3 {
            let a = heaps[k].remove(0);
            let b = heaps[k].remove(0);
            let c = heaps[k].remove(0);
            let tag = format!("fa_w{k}_{}", namer.counter);
            let (sum, cout) = full_adder(&mut nl, &mut namer, &tag, &a, &b, &c);
            heaps[k].push(sum);
            if k + 1 == heaps.len() {
                heaps.push(Vec::new());
            }
            heaps[k + 1].push(cout);
        }
        if heaps[k].len() == 2 {
            let a = heaps[k].remove(0);
            let b = heaps[k].remove(0);
            let tag = format!("ha_w{k}_{}", namer.counter);
            let (sum, cout) = half_adder(&mut nl, &mut namer, &tag, &a, &b);
            heaps[k].push(sum);
            if k + 1 == heaps.len() {
                heaps.push(Vec::new());
            }
            heaps[k + 1].push(cout);
        }
        k += 1;
    }
    for (w, heap) in heaps.iter().enumerate() {
        if let Some(bit) = heap.first() {
            let po = format!("p{w}");
            rename_net(&mut nl, bit, &po);
            nl.primary_outputs.push(po);
        }
    }
    nl
}

/// Random combinational DAG over the two-input cell menu; acyclic by
/// construction (inputs always come from earlier nets).
pub fn rand_dag(seed: u64, n_gates: usize, period: f64) -> GateNetlist {
    let mut nl = base(&format!("rand-dag-{seed}"), period);
    let n_pi = 8usize;
    for i in 0..n_pi {
        nl.primary_inputs.push(format!("i{i}"));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(derive_seed(seed, "rand-dag"));
    let menu: [(&str, usize); 5] = [
        ("INVX1", 1),
        ("NAND2X1", 2),
        ("NOR2X1", 2),
        ("AND2X1", 2),
        ("XOR2X1", 2),
    ];
    let mut nets: Vec<String> = nl.primary_inputs.clone();
    for g in 0..n_gates {
        let (cell, arity) = menu[rng.random_range(0..menu.len())];
        let mut inputs = Vec::with_capacity(arity);
        while inputs.len() < arity {
            let pick = nets[rng.random_range(0..nets.len())].clone();
            if !inputs.contains(&pick) {
                inputs.push(pick);
            }
        }
        let out = format!("n{g}");
        nl.gates.push(Gate {
            name: format!("g{g}"),
            cell: cell.into(),
            output: out.clone(),
            inputs,
        });
        nets.push(out);
    }
    // outputs: every net with no fanout
    let consumed: std::collections::BTreeSet<&str> = nl
        .gates
        .iter()
        .flat_map(|g| g.inputs.iter().map(String::as_str))
        .collect();
    for gate in &nl.gates {
        if !consumed.contains(gate.output.as_str()) {
            nl.primary_outputs.push(gate.output.clone());
        }
    }
    nl
}

/// The bundled benchmark set used by system-level comparisons.
pub fn standard_suite(period: f64) -> Vec<GateNetlist> {
    vec![
        inv_chain(32, period),
        rca(8, period),
        rca(16, period),
        mult4x4(period),
        rand_dag(1, 60, period),
        rand_dag(2, 60, period),
        rand_dag(3, 60, period),
    ]
}
