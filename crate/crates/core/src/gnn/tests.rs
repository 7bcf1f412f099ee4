use super::linalg::Mat;
use super::*;
use crate::cellgraph::{encode, FeatureLayout, Stimulus};
use crate::dataset::{
    build_dataset, corner_grid, stimulus_grid, Corner, DatasetOptions, NormalizationSpec, Task,
};
use crate::netlist::{build_default_catalog, parse_subckt, Technology};
use crate::oracle::SurrogateParams;

fn identity_spec(width: usize) -> NormalizationSpec {
    NormalizationSpec {
        mins: vec![0.0; width],
        maxs: vec![1.0; width],
    }
}

fn tiny_delay_samples(cells: &[&str], grid_points: usize) -> Vec<crate::dataset::Sample> {
    let cat = build_default_catalog(Technology::Silicon45);
    let sub = cat.subset(cells).unwrap();
    let params = SurrogateParams::silicon45();
    let corners = corner_grid(Technology::Silicon45, grid_points).unwrap();
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
    sets.into_iter().next().unwrap().samples
}

#[test]
fn he_init_statistics_and_determinism() {
    let p: ModelParams<f64> = ModelParams::init(FeatureLayout::DelayPower, 42);
    assert_eq!(p.in_dim, 12);
    assert_eq!(p.hidden, 128);
    let w2 = &p.w_gcn2.data;
    assert_eq!(w2.len(), 16384);
    let mean: f64 = w2.iter().sum::<f64>() / w2.len() as f64;
    let var: f64 = w2.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w2.len() as f64;
    let expected_std = (2.0 / 128.0f64).sqrt();
    assert!(
        (var.sqrt() - expected_std).abs() / expected_std < 0.1,
        "std {} vs {}",
        var.sqrt(),
        expected_std
    );
    assert!(p.b_fc1.iter().all(|&b| b == 0.0));
    assert_eq!(p.b_fc2, 0.0);
    let q: ModelParams<f64> = ModelParams::init(FeatureLayout::DelayPower, 42);
    assert_eq!(p, q);
    let r: ModelParams<f64> = ModelParams::init(FeatureLayout::DelayPower, 43);
    assert_ne!(p, r);
}

#[test]
fn zero_weights_predict_output_bias() {
    let cat = build_default_catalog(Technology::Silicon45);
    let inv = cat.get("INVX1").unwrap();
    let corner = Corner {
        technology: Technology::Silicon45,
        vdd: 1.0,
        vth: 0.3,
        third_axis: 70.0,
    };
    let stim = Stimulus::DelayPower {
        slew: 40.0,
        load: 5.0,
        current: vec![false],
        next: vec![true],
    };
    let graph = encode(inv, &corner, &stim, FeatureLayout::DelayPower).unwrap();
    let mut p: ModelParams<f64> = ModelParams::init(FeatureLayout::DelayPower, 1);
    for t in p.tensors_mut() {
        t.fill(0.0);
    }
    p.b_fc2 = 3.25;
    let spec = identity_spec(12);
    let out = forward_graph(&p, &graph, &spec).unwrap();
    assert_eq!(out, 3.25);
}

#[test]
fn one_dimensional_trace_reduces_to_relu_chain() {
    // single node, no edges, all weights 1: the network collapses to
    // out = relu(x)
    let mk_graph = |x: f64| crate::cellgraph::CellGraph {
        nodes: vec![crate::cellgraph::Node {
            kind: crate::cellgraph::NodeKind::Out,
            features: vec![x],
        }],
        edges: vec![],
        layout: FeatureLayout::DelayPower, // width unused; spec is 1-wide
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
    let mut p: ModelParams<f64> = ModelParams::init_dims(1, 1, 7);
    for t in p.tensors_mut() {
        t.fill(1.0);
    }
    p.b_fc1[0] = 0.0;
    p.b_fc2 = 0.0;
    let spec = identity_spec(1);
    let set = PreparedSet {
        in_dim: 1,
        graphs: vec![
            prepare_graph::<f64>(&mk_graph(0.7), &spec, 1.0),
            prepare_graph::<f64>(&mk_graph(-0.3), &spec, 1.0),
        ],
    };
    let outs = predict_indices(&p, &set, &[0, 1], None);
    assert_eq!(outs[0], 0.7);
    assert_eq!(outs[1], 0.0);
}

#[test]
fn node_permutation_leaves_prediction_unchanged() {
    let cat = build_default_catalog(Technology::Silicon45);
    let nand = cat.get("NAND2X1").unwrap();
    // swap the FET declaration order
    let mut swapped = nand.clone();
    swapped.fets.reverse();
    let corner = Corner {
        technology: Technology::Silicon45,
        vdd: 1.0,
        vth: 0.3,
        third_axis: 70.0,
    };
    let stim = Stimulus::DelayPower {
        slew: 40.0,
        load: 5.0,
        current: vec![false, true],
        next: vec![true, true],
    };
    let g1 = encode(nand, &corner, &stim, FeatureLayout::DelayPower).unwrap();
    let g2 = encode(&swapped, &corner, &stim, FeatureLayout::DelayPower).unwrap();
    let p: ModelParams<f64> = ModelParams::init(FeatureLayout::DelayPower, 11);
    let spec = identity_spec(12);
    let o1 = forward_graph(&p, &g1, &spec).unwrap();
    let o2 = forward_graph(&p, &g2, &spec).unwrap();
    assert!((o1 - o2).abs() <= 1e-12, "{o1} vs {o2}");
}

#[test]
fn mape_examples() {
    let (sum, grad) = mape_terms(&[110.0f64], &[100.0]).unwrap();
    assert!((100.0 * sum / 1.0 - 10.0).abs() < 1e-12);
    assert_eq!(grad[0], 0.01);

    let (sum, grad) = mape_terms(&[100.0f64], &[100.0]).unwrap();
    assert_eq!(sum, 0.0);
    assert_eq!(grad[0], 0.0);

    let (sum, _) = mape_terms(&[90.0f64, 110.0], &[100.0, 100.0]).unwrap();
    assert!((100.0 * sum / 2.0 - 10.0).abs() < 1e-12);

    assert!(mape_terms(&[1.0f64], &[0.0]).is_err());
    assert!(mape_terms(&[1.0f64], &[-2.0]).is_err());
}

#[test]
fn gradients_match_finite_differences_small_model() {
    let samples = tiny_delay_samples(&["INVX1", "NAND2X1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f64>(&samples, &spec);
    let params = ModelParams::<f64>::init_dims(12, 16, 5);
    let idxs: Vec<usize> = (0..8).collect();
    let report = gradcheck::check_gradients(&params, &set, &idxs, 1e-5, 1e-4, 1e-8, 50);
    assert!(
        report.meta_max_rel < 1e-9,
        "delta evaluator drifted: {}",
        report.meta_max_rel
    );
    assert_eq!(
        report.failures, 0,
        "worst {}, samples {:?}",
        report.worst_rel, report.failure_samples
    );
    assert!(report.params_checked > 100);
}

#[test]
fn zero_loss_means_zero_gradients() {
    let samples = tiny_delay_samples(&["INVX1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let mut set = prepare_set::<f64>(&samples, &spec);
    let mut params = ModelParams::<f64>::init(FeatureLayout::DelayPower, 3);
    for t in params.tensors_mut() {
        t.fill(0.0);
    }
    params.b_fc2 = 7.5;
    for g in set.graphs.iter_mut() {
        g.target = 7.5; // predictions equal targets exactly
    }
    let idxs: Vec<usize> = (0..set.graphs.len()).collect();
    let (loss, grads) = loss_and_gradients(&params, &set, &idxs, None).unwrap();
    assert_eq!(loss, 0.0);
    for t in grads.tensors() {
        assert!(t.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn output_bias_gradient_is_mean_of_signed_inverse_targets() {
    let samples = tiny_delay_samples(&["INVX1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f64>(&samples, &spec);
    let params = ModelParams::<f64>::init(FeatureLayout::DelayPower, 9);
    let idxs: Vec<usize> = (0..set.graphs.len()).collect();
    let preds = predict_indices(&params, &set, &idxs, None);
    let (_, grads) = loss_and_gradients(&params, &set, &idxs, None).unwrap();
    let n = idxs.len() as f64;
    let expected: f64 = idxs
        .iter()
        .map(|&i| {
            let t = set.graphs[i].target;
            let sign = (preds[i] - t).signum();
            100.0 / n * sign / t
        })
        .sum();
    assert!(
        (grads.b_fc2 - expected).abs() < 1e-9,
        "{} vs {}",
        grads.b_fc2,
        expected
    );
}

#[test]
fn batch_equals_singletons_bitwise() {
    let samples = tiny_delay_samples(&["INVX1", "NAND2X1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f64>(&samples, &spec);
    let params = ModelParams::<f64>::init(FeatureLayout::DelayPower, 21);
    let idxs: Vec<usize> = (0..set.graphs.len().min(40)).collect();
    let batched = predict_indices(&params, &set, &idxs, None);
    for &i in &idxs {
        let single = predict_indices(&params, &set, &[i], None);
        assert_eq!(batched[i].to_bits(), single[0].to_bits(), "graph {i}");
    }
    // threading must not change a single bit either
    let pool = make_pool(2);
    let threaded = predict_indices(&params, &set, &idxs, pool.as_ref());
    for (a, b) in batched.iter().zip(&threaded) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let samples = tiny_delay_samples(&["INVX1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f32>(&samples, &spec);
    let cfg = TrainConfig {
        epochs: 1,
        lr0: 0.0,
        batch_size: 512,
        seed: 4,
        valid_interval: 1,
        ..TrainConfig::default()
    };
    let before: ModelParams<f32> =
        ModelParams::init_dims(12, HIDDEN, crate::util::derive_seed(4, "init"));
    let out = train(&set, &set, &cfg).unwrap();
    assert_eq!(out.final_params, before);
}

#[test]
fn learning_rate_schedule_halves_every_period() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(1), 1e-4);
    assert_eq!(cfg.lr_at(500), 1e-4);
    assert_eq!(cfg.lr_at(501), 5e-5);
    assert_eq!(cfg.lr_at(1000), 5e-5);
    assert_eq!(cfg.lr_at(1001), 2.5e-5);
}

#[test]
fn training_is_deterministic_and_loss_improves() {
    let samples = tiny_delay_samples(&["INVX1", "NAND2X1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f32>(&samples, &spec);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 512,
        seed: 7,
        valid_interval: 10,
        ..TrainConfig::default()
    };
    let a = train(&set, &set, &cfg).unwrap();
    let b = train(&set, &set, &cfg).unwrap();
    assert_eq!(a.final_params, b.final_params, "same seed, same weights");
    let first = a.log.first().unwrap().train_mape;
    let last = a.log.last().unwrap().train_mape;
    assert!(
        last <= first,
        "loss should not increase over 50 epochs: {first} -> {last}"
    );
    // threaded run reproduces the single-threaded weights exactly
    let cfg2 = TrainConfig { jobs: 2, ..cfg };
    let c = train(&set, &set, &cfg2).unwrap();
    assert_eq!(a.final_params, c.final_params);
}

#[test]
fn loss_nonincreasing_over_50_epochs_across_seeds() {
    let samples = tiny_delay_samples(&["INVX1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f32>(&samples, &spec);
    let mut ok = 0;
    for seed in 0..10u64 {
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 512,
            seed,
            valid_interval: 50,
            ..TrainConfig::default()
        };
        let out = train(&set, &set, &cfg).unwrap();
        if out.log.last().unwrap().train_mape <= out.log.first().unwrap().train_mape {
            ok += 1;
        }
    }
    assert!(ok >= 9, "loss decreased in only {ok}/10 seeds");
}

#[test]
fn resume_matches_uninterrupted_run() {
    let samples = tiny_delay_samples(&["INVX1"], 2);
    let spec = NormalizationSpec::fit(&samples);
    let set = prepare_set::<f32>(&samples, &spec);
    let cfg = TrainConfig {
        epochs: 12,
        batch_size: 64,
        seed: 3,
        valid_interval: 4,
        ..TrainConfig::default()
    };
    let full = train(&set, &set, &cfg).unwrap();

    let cfg_half = TrainConfig {
        epochs: 6,
        ..cfg.clone()
    };
    let half = train(&set, &set, &cfg_half).unwrap();
    let resumed = train_resume(half.final_params, half.opt, 6, &set, &set, &cfg).unwrap();
    assert_eq!(full.final_params, resumed.final_params);
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("delay.ckpt");
    let params = ModelParams::<f64>::init(FeatureLayout::DelayPower, 31);
    let mut opt = AdamState::new(&params);
    opt.step = 17;
    opt.m[1][5] = 0.25;
    opt.v[2][7] = 1e-9;
    save_checkpoint(&path, Task::Delay, &params, Some((&opt, 3))).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.task, Task::Delay);
    assert_eq!(back.params, params);
    let (bopt, epoch) = back.opt.unwrap();
    assert_eq!(epoch, 3);
    assert_eq!(bopt.step, 17);
    assert_eq!(bopt.m, opt.m);
    assert_eq!(bopt.v, opt.v);

    // f32 -> f64 -> f32 conversion is lossless
    let p32: ModelParams<f32> = params.convert();
    let p64 = p32.convert::<f64>();
    let p32b: ModelParams<f32> = p64.convert();
    assert_eq!(p32, p32b);
}

#[test]
fn layout_mismatch_is_reported() {
    let cat = build_default_catalog(Technology::Silicon45);
    let inv = cat.get("INVX1").unwrap();
    let corner = Corner {
        technology: Technology::Silicon45,
        vdd: 1.0,
        vth: 0.3,
        third_axis: 70.0,
    };
    let graph = encode(
        inv,
        &corner,
        &Stimulus::Leakage {
            state: vec![true],
        },
        FeatureLayout::Leakage,
    )
    .unwrap();
    let params: ModelParams<f64> = ModelParams::init(FeatureLayout::DelayPower, 2);
    let spec = identity_spec(9);
    assert!(matches!(
        forward_graph(&params, &graph, &spec),
        Err(ModelError::LayoutMismatch { .. })
    ));
}

#[test]
fn malformed_netlist_rejected_before_batching() {
    // graphs from a parsed-but-invalid cell never reach the model: encode
    // validates. This pins the error path end to end.
    let src = "\
.subckt BROKENX1 A Y VDD VSS
M1 Y typo VDD VDD P W=2
M2 Y A VSS VSS N W=1
.ends
";
    let cell = parse_subckt(src).unwrap();
    let corner = Corner {
        technology: Technology::Silicon45,
        vdd: 1.0,
        vth: 0.3,
        third_axis: 70.0,
    };
    let stim = Stimulus::DelayPower {
        slew: 40.0,
        load: 5.0,
        current: vec![false],
        next: vec![true],
    };
    assert!(encode(&cell, &corner, &stim, FeatureLayout::DelayPower).is_err());
}

#[test]
fn matmul_smoke_reexported_types() {
    let a = Mat::<f64>::from_rows(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
    let b = Mat::<f64>::from_rows(2, 2, vec![5.0, 6.0, 7.0, 8.0]);
    let c = super::linalg::matmul(&a, &b);
    assert_eq!(c.data, vec![19.0, 22.0, 43.0, 50.0]);
}
