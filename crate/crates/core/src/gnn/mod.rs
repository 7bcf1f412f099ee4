//! Per-task graph models: three graph-convolution layers into two fully
//! connected layers, 128 units wide, mean-pool readout, trained with Adam
//! on a percentage-error loss.
//!
//! All math is generic over the float precision. Training instantiates
//! `f32` for throughput on the batched kernels; prediction, checkpoints,
//! and the finite-difference verification path use `f64`. Gradient
//! accumulation is chunked at a fixed size and reduced in chunk order, so
//! results are bit-identical no matter how many worker threads run.

pub mod gradcheck;
pub mod linalg;

use std::io::{self, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::cellgraph::{CellGraph, FeatureLayout};
use crate::dataset::{NormalizationSpec, Sample, Task};
use crate::util::derive_seed;
use linalg::{matmul_into, Mat, Scalar};

/// Hidden width of every layer.
pub const HIDDEN: usize = 128;
/// Graphs per gradient-accumulation chunk. Fixed so that the reduction
/// order (and therefore every trained weight) is independent of threading.
pub const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("target {0} must be positive for the percentage loss")]
    NonPositiveTarget(f64),
    #[error("graph layout width {got} does not match model input width {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss not finite")]
    Diverged { epoch: usize },
    #[error("empty sample set: {0}")]
    EmptySet(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Weights of one model. GCN layers have no bias; the two dense layers do.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub in_dim: usize,
    pub hidden: usize,
    pub w_gcn1: Mat<T>,
    pub w_gcn2: Mat<T>,
    pub w_gcn3: Mat<T>,
    pub w_fc1: Mat<T>,
    pub b_fc1: Vec<T>,
    pub w_fc2: Mat<T>,
    pub b_fc2: T,
}

impl<T: Scalar> ModelParams<T> {
    /// He-initialized weights, zero biases; deterministic per seed.
    pub fn init(layout: FeatureLayout, seed: u64) -> ModelParams<T> {
        ModelParams::init_dims(layout.width(), HIDDEN, seed)
    }

    pub fn init_dims(in_dim: usize, hidden: usize, seed: u64) -> ModelParams<T> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut he = |rows: usize, cols: usize| -> Mat<T> {
            let normal = Normal::new(0.0, (2.0 / rows as f64).sqrt()).expect("he std");
            let data = (0..rows * cols)
                .map(|_| T::from_f64(normal.sample(&mut rng)))
                .collect();
            Mat {
                rows,
                cols,
                data,
            }
        };
        ModelParams {
            in_dim,
            hidden,
            w_gcn1: he(in_dim, hidden),
            w_gcn2: he(hidden, hidden),
            w_gcn3: he(hidden, hidden),
            w_fc1: he(hidden, hidden),
            b_fc1: vec![T::ZERO; hidden],
            w_fc2: he(hidden, 1),
            b_fc2: T::ZERO,
        }
    }

    /// Tensors in a fixed order; used by the optimizer and checkpoints.
    pub fn tensors(&self) -> [&[T]; 7] {
        [
            &self.w_gcn1.data,
            &self.w_gcn2.data,
            &self.w_gcn3.data,
            &self.w_fc1.data,
            &self.b_fc1,
            &self.w_fc2.data,
            std::slice::from_ref(&self.b_fc2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 7] {
        [
            &mut self.w_gcn1.data,
            &mut self.w_gcn2.data,
            &mut self.w_gcn3.data,
            &mut self.w_fc1.data,
            &mut self.b_fc1,
            &mut self.w_fc2.data,
            std::slice::from_mut(&mut self.b_fc2),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn convert<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |m: &Mat<T>| Mat::<U>::from_f64_slice(m.rows, m.cols, &m.to_f64_vec());
        ModelParams {
            in_dim: self.in_dim,
            hidden: self.hidden,
            w_gcn1: conv(&self.w_gcn1),
            w_gcn2: conv(&self.w_gcn2),
            w_gcn3: conv(&self.w_gcn3),
            w_fc1: conv(&self.w_fc1),
            b_fc1: self.b_fc1.iter().map(|&x| U::from_f64(x.to_f64())).collect(),
            w_fc2: conv(&self.w_fc2),
            b_fc2: U::from_f64(self.b_fc2.to_f64()),
        }
    }
}

/// Parameter gradients, same shapes as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub w_gcn1: Mat<T>,
    pub w_gcn2: Mat<T>,
    pub w_gcn3: Mat<T>,
    pub w_fc1: Mat<T>,
    pub b_fc1: Vec<T>,
    pub w_fc2: Mat<T>,
    pub b_fc2: T,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros(p: &ModelParams<T>) -> Gradients<T> {
        Gradients {
            w_gcn1: Mat::zeros(p.in_dim, p.hidden),
            w_gcn2: Mat::zeros(p.hidden, p.hidden),
            w_gcn3: Mat::zeros(p.hidden, p.hidden),
            w_fc1: Mat::zeros(p.hidden, p.hidden),
            b_fc1: vec![T::ZERO; p.hidden],
            w_fc2: Mat::zeros(p.hidden, 1),
            b_fc2: T::ZERO,
        }
    }

    pub fn tensors(&self) -> [&[T]; 7] {
        [
            &self.w_gcn1.data,
            &self.w_gcn2.data,
            &self.w_gcn3.data,
            &self.w_fc1.data,
            &self.b_fc1,
            &self.w_fc2.data,
            std::slice::from_ref(&self.b_fc2),
        ]
    }

    fn add_assign(&mut self, other: &Gradients<T>) {
        let add = |a: &mut Mat<T>, b: &Mat<T>| {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += *y;
            }
        };
        add(&mut self.w_gcn1, &other.w_gcn1);
        add(&mut self.w_gcn2, &other.w_gcn2);
        add(&mut self.w_gcn3, &other.w_gcn3);
        add(&mut self.w_fc1, &other.w_fc1);
        for (x, y) in self.b_fc1.iter_mut().zip(&other.b_fc1) {
            *x += *y;
        }
        add(&mut self.w_fc2, &other.w_fc2);
        self.b_fc2 += other.b_fc2;
    }
}

/// One graph with normalized features and its propagation structure.
#[derive(Debug, Clone)]
pub struct PreparedGraph<T> {
    pub features: Vec<T>,
    pub n_nodes: usize,
    /// CSR in-neighbor lists including the self loop, local indices.
    pub in_offsets: Vec<u32>,
    pub in_srcs: Vec<u32>,
    pub inv_indeg: Vec<T>,
    pub target: f64,
}

/// A set of prepared graphs sharing one layout width.
#[derive(Debug, Clone)]
pub struct PreparedSet<T> {
    pub in_dim: usize,
    pub graphs: Vec<PreparedGraph<T>>,
}

pub fn prepare_graph<T: Scalar>(
    graph: &CellGraph,
    spec: &NormalizationSpec,
    target: f64,
) -> PreparedGraph<T> {
    let n = graph.nodes.len();
    let width = graph.layout.width();
    let mut features = Vec::with_capacity(n * width);
    for node in &graph.nodes {
        for (i, &f) in node.features.iter().enumerate() {
            features.push(T::from_f64(spec.scale(i, f)));
        }
    }
    let (lists, weights) = graph.in_neighbors();
    let mut in_offsets = Vec::with_capacity(n + 1);
    let mut in_srcs = Vec::new();
    in_offsets.push(0u32);
    for list in &lists {
        in_srcs.extend_from_slice(list);
        in_offsets.push(in_srcs.len() as u32);
    }
    PreparedGraph {
        features,
        n_nodes: n,
        in_offsets,
        in_srcs,
        inv_indeg: weights.iter().map(|&w| T::from_f64(w)).collect(),
        target,
    }
}

pub fn prepare_set<T: Scalar>(samples: &[Sample], spec: &NormalizationSpec) -> PreparedSet<T> {
    assert!(!samples.is_empty());
    let in_dim = samples[0].graph.layout.width();
    PreparedSet {
        in_dim,
        graphs: samples
            .iter()
            .map(|s| prepare_graph(&s.graph, spec, s.target))
            .collect(),
    }
}

/// Contiguous batch over a list of prepared graphs.
struct Batch<T> {
    x: Mat<T>,
    offsets: Vec<u32>,
    srcs: Vec<u32>,
    inv_indeg: Vec<T>,
    ranges: Vec<(u32, u32)>,
    targets: Vec<f64>,
}

fn assemble<T: Scalar>(set: &PreparedSet<T>, idxs: &[usize]) -> Batch<T> {
    let total: usize = idxs.iter().map(|&i| set.graphs[i].n_nodes).sum();
    let mut x = Mat::zeros(total, set.in_dim);
    let mut offsets = Vec::with_capacity(total + 1);
    let mut srcs = Vec::new();
    let mut inv_indeg = Vec::with_capacity(total);
    let mut ranges = Vec::with_capacity(idxs.len());
    let mut targets = Vec::with_capacity(idxs.len());
    offsets.push(0u32);
    let mut base = 0u32;
    for &i in idxs {
        let g = &set.graphs[i];
        let n = g.n_nodes;
        x.data[base as usize * set.in_dim..(base as usize + n) * set.in_dim]
            .copy_from_slice(&g.features);
        for node in 0..n {
            let s = g.in_offsets[node] as usize;
            let e = g.in_offsets[node + 1] as usize;
            for &src in &g.in_srcs[s..e] {
                srcs.push(base + src);
            }
            offsets.push(srcs.len() as u32);
        }
        inv_indeg.extend_from_slice(&g.inv_indeg);
        ranges.push((base, base + n as u32));
        targets.push(g.target);
        base += n as u32;
    }
    Batch {
        x,
        offsets,
        srcs,
        inv_indeg,
        ranges,
        targets,
    }
}

/// dst[i] = inv_indeg[i] * sum of src rows feeding node i (self included).
/// Touches only the active `src.rows` region.
fn aggregate<T: Scalar>(dst: &mut Mat<T>, src: &Mat<T>, batch: &Batch<T>) {
    let cols = src.cols;
    for i in 0..src.rows {
        let s = batch.offsets[i] as usize;
        let e = batch.offsets[i + 1] as usize;
        let w = batch.inv_indeg[i];
        let out = &mut dst.data[i * cols..(i + 1) * cols];
        out.fill(T::ZERO);
        for &j in &batch.srcs[s..e] {
            let row = &src.data[j as usize * cols..(j as usize + 1) * cols];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o = *o * w;
        }
    }
}

/// Transposed aggregation: dst[j] += inv_indeg[i] * src[i] for j feeding i.
fn aggregate_transpose<T: Scalar>(dst: &mut Mat<T>, src: &Mat<T>, batch: &Batch<T>) {
    let cols = src.cols;
    dst.data[..src.rows * cols].fill(T::ZERO);
    for i in 0..src.rows {
        let s = batch.offsets[i] as usize;
        let e = batch.offsets[i + 1] as usize;
        let w = batch.inv_indeg[i];
        let row = &src.data[i * cols..(i + 1) * cols];
        for &j in &batch.srcs[s..e] {
            let out = &mut dst.data[j as usize * cols..(j as usize + 1) * cols];
            for (o, &v) in out.iter_mut().zip(row) {
                *o = v.mul_add(w, *o);
            }
        }
    }
}

fn relu_into<T: Scalar>(dst: &mut Mat<T>, src: &Mat<T>) {
    let len = src.rows * src.cols;
    for (d, &s) in dst.data[..len].iter_mut().zip(&src.data[..len]) {
        *d = if s > T::ZERO { s } else { T::ZERO };
    }
}

fn gate<T: Scalar>(dst: &mut Mat<T>, upstream: &Mat<T>, pre: &Mat<T>) {
    let len = pre.rows * pre.cols;
    for ((d, &u), &s) in dst.data[..len]
        .iter_mut()
        .zip(&upstream.data[..len])
        .zip(&pre.data[..len])
    {
        *d = if s > T::ZERO { u } else { T::ZERO };
    }
}

fn ensure<T: Scalar>(mat: &mut Mat<T>, rows: usize, cols: usize) {
    if mat.data.len() < rows * cols {
        mat.data.resize(rows * cols, T::ZERO);
    }
    mat.rows = rows;
    mat.cols = cols;
}

fn transpose_into<T: Scalar>(dst: &mut Mat<T>, src: &Mat<T>) {
    ensure(dst, src.cols, src.rows);
    for i in 0..src.rows {
        for j in 0..src.cols {
            dst.data[j * src.rows + i] = src.data[i * src.cols + j];
        }
    }
}

/// Scratch buffers for one evaluation worker. Everything grows on demand
/// and is reused across chunks and steps; the forward activations stay
/// resident for the backward pass and the finite-difference evaluator.
pub struct Workspace<T> {
    p1: Mat<T>,
    s1: Mat<T>,
    h1: Mat<T>,
    p2: Mat<T>,
    s2: Mat<T>,
    h2: Mat<T>,
    p3: Mat<T>,
    s3: Mat<T>,
    h3: Mat<T>,
    g: Mat<T>,
    z4: Mat<T>,
    h4: Mat<T>,
    out: Vec<T>,
    dz4: Mat<T>,
    dg: Mat<T>,
    dh3: Mat<T>,
    ds3: Mat<T>,
    dp3: Mat<T>,
    dh2: Mat<T>,
    ds2: Mat<T>,
    dp2: Mat<T>,
    dh1: Mat<T>,
    ds1: Mat<T>,
    dp1: Mat<T>,
    tr_nh: Mat<T>,
    tr_xk: Mat<T>,
    tr_g: Mat<T>,
}

impl<T: Scalar> Workspace<T> {
    pub fn new() -> Workspace<T> {
        let empty = || Mat::zeros(0, 0);
        Workspace {
            p1: empty(),
            s1: empty(),
            h1: empty(),
            p2: empty(),
            s2: empty(),
            h2: empty(),
            p3: empty(),
            s3: empty(),
            h3: empty(),
            g: empty(),
            z4: empty(),
            h4: empty(),
            out: Vec::new(),
            dz4: empty(),
            dg: empty(),
            dh3: empty(),
            ds3: empty(),
            dp3: empty(),
            dh2: empty(),
            ds2: empty(),
            dp2: empty(),
            dh1: empty(),
            ds1: empty(),
            dp1: empty(),
            tr_nh: empty(),
            tr_xk: empty(),
            tr_g: empty(),
        }
    }
}

impl<T: Scalar> Default for Workspace<T> {
    fn default() -> Self {
        Workspace::new()
    }
}

/// Transposed copies of the weights shared by every chunk of a step.
struct ParamTransposes<T> {
    w2t: Mat<T>,
    w3t: Mat<T>,
    w4t: Mat<T>,
}

impl<T: Scalar> ParamTransposes<T> {
    fn of(params: &ModelParams<T>) -> ParamTransposes<T> {
        ParamTransposes {
            w2t: params.w_gcn2.transpose(),
            w3t: params.w_gcn3.transpose(),
            w4t: params.w_fc1.transpose(),
        }
    }
}

fn forward_into<T: Scalar>(params: &ModelParams<T>, batch: &Batch<T>, ws: &mut Workspace<T>) {
    let n = batch.x.rows;
    let h = params.hidden;
    let b = batch.ranges.len();

    ensure(&mut ws.p1, n, h);
    matmul_into(&mut ws.p1, &batch.x, &params.w_gcn1);
    ensure(&mut ws.s1, n, h);
    aggregate(&mut ws.s1, &ws.p1, batch);
    ensure(&mut ws.h1, n, h);
    relu_into(&mut ws.h1, &ws.s1);

    ensure(&mut ws.p2, n, h);
    matmul_into(&mut ws.p2, &ws.h1, &params.w_gcn2);
    ensure(&mut ws.s2, n, h);
    aggregate(&mut ws.s2, &ws.p2, batch);
    ensure(&mut ws.h2, n, h);
    relu_into(&mut ws.h2, &ws.s2);

    ensure(&mut ws.p3, n, h);
    matmul_into(&mut ws.p3, &ws.h2, &params.w_gcn3);
    ensure(&mut ws.s3, n, h);
    aggregate(&mut ws.s3, &ws.p3, batch);
    ensure(&mut ws.h3, n, h);
    relu_into(&mut ws.h3, &ws.s3);

    // mean-pool readout per graph
    ensure(&mut ws.g, b, h);
    for (bi, &(lo, hi)) in batch.ranges.iter().enumerate() {
        let inv = T::from_f64(1.0 / (hi - lo) as f64);
        let out = ws.g.row_mut(bi);
        out.fill(T::ZERO);
        for i in lo..hi {
            let row = &ws.h3.data[i as usize * h..(i as usize + 1) * h];
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv;
        }
    }

    ensure(&mut ws.z4, b, h);
    matmul_into(&mut ws.z4, &ws.g, &params.w_fc1);
    for bi in 0..b {
        let row = ws.z4.row_mut(bi);
        for (z, &bias) in row.iter_mut().zip(&params.b_fc1) {
            *z += bias;
        }
    }
    ensure(&mut ws.h4, b, h);
    relu_into(&mut ws.h4, &ws.z4);

    ws.out.clear();
    for bi in 0..b {
        let mut acc = T::ZERO;
        let h4row = ws.h4.row(bi);
        for j in 0..h {
            acc = h4row[j].mul_add(params.w_fc2.data[j], acc);
        }
        ws.out.push(acc + params.b_fc2);
    }
}

/// Gradients of the chunk loss; forward activations must be resident in
/// `ws` from a matching [`forward_into`] call.
fn backward_into<T: Scalar>(
    params: &ModelParams<T>,
    wt: &ParamTransposes<T>,
    batch: &Batch<T>,
    ws: &mut Workspace<T>,
    dout: &[T],
    grads: &mut Gradients<T>,
) {
    let n = batch.x.rows;
    let h = params.hidden;
    let b = batch.ranges.len();

    // output layer
    for bi in 0..b {
        let d = dout[bi];
        grads.b_fc2 += d;
        let h4row = ws.h4.row(bi);
        for (gw, &v) in grads.w_fc2.data.iter_mut().zip(h4row) {
            *gw = v.mul_add(d, *gw);
        }
    }
    // dh4 -> dz4 (relu gate)
    ensure(&mut ws.dz4, b, h);
    for bi in 0..b {
        let d = dout[bi];
        let z4row = &ws.z4.data[bi * h..(bi + 1) * h];
        let out = &mut ws.dz4.data[bi * h..(bi + 1) * h];
        for j in 0..h {
            out[j] = if z4row[j] > T::ZERO {
                d * params.w_fc2.data[j]
            } else {
                T::ZERO
            };
        }
    }
    // dense layer
    transpose_into(&mut ws.tr_g, &ws.g);
    matmul_into(&mut grads.w_fc1, &ws.tr_g, &ws.dz4);
    for bi in 0..b {
        let row = ws.dz4.row(bi);
        for (gb, &v) in grads.b_fc1.iter_mut().zip(row) {
            *gb += v;
        }
    }
    ensure(&mut ws.dg, b, h);
    matmul_into(&mut ws.dg, &ws.dz4, &wt.w4t);

    // unpool
    ensure(&mut ws.dh3, n, h);
    for (bi, &(lo, hi)) in batch.ranges.iter().enumerate() {
        let inv = T::from_f64(1.0 / (hi - lo) as f64);
        let grow = &ws.dg.data[bi * h..(bi + 1) * h];
        for i in lo..hi {
            let out = &mut ws.dh3.data[i as usize * h..(i as usize + 1) * h];
            for (o, &v) in out.iter_mut().zip(grow) {
                *o = v * inv;
            }
        }
    }

    // layer 3
    ensure(&mut ws.ds3, n, h);
    gate(&mut ws.ds3, &ws.dh3, &ws.s3);
    ensure(&mut ws.dp3, n, h);
    aggregate_transpose(&mut ws.dp3, &ws.ds3, batch);
    transpose_into(&mut ws.tr_nh, &ws.h2);
    matmul_into(&mut grads.w_gcn3, &ws.tr_nh, &ws.dp3);
    ensure(&mut ws.dh2, n, h);
    matmul_into(&mut ws.dh2, &ws.dp3, &wt.w3t);

    // layer 2
    ensure(&mut ws.ds2, n, h);
    gate(&mut ws.ds2, &ws.dh2, &ws.s2);
    ensure(&mut ws.dp2, n, h);
    aggregate_transpose(&mut ws.dp2, &ws.ds2, batch);
    transpose_into(&mut ws.tr_nh, &ws.h1);
    matmul_into(&mut grads.w_gcn2, &ws.tr_nh, &ws.dp2);
    ensure(&mut ws.dh1, n, h);
    matmul_into(&mut ws.dh1, &ws.dp2, &wt.w2t);

    // layer 1
    ensure(&mut ws.ds1, n, h);
    gate(&mut ws.ds1, &ws.dh1, &ws.s1);
    ensure(&mut ws.dp1, n, h);
    aggregate_transpose(&mut ws.dp1, &ws.ds1, batch);
    transpose_into(&mut ws.tr_xk, &batch.x);
    matmul_into(&mut grads.w_gcn1, &ws.tr_xk, &ws.dp1);
}

/// Percentage-error terms for a chunk: sum of |p - t| / t and the
/// per-sample unscaled gradients sign(p - t) / t. The caller scales by
/// 100 / N for the batch-level loss.
pub fn mape_terms<T: Scalar>(pred: &[T], target: &[f64]) -> Result<(f64, Vec<T>), ModelError> {
    let mut sum = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.iter().zip(target) {
        if !(t > 0.0) {
            return Err(ModelError::NonPositiveTarget(t));
        }
        let e = p.to_f64() - t;
        sum += e.abs() / t;
        let g = if e > 0.0 {
            1.0 / t
        } else if e < 0.0 {
            -1.0 / t
        } else {
            0.0
        };
        grad.push(T::from_f64(g));
    }
    Ok((sum, grad))
}

/// Mean absolute percentage error of a full prediction vector.
pub fn mape_of(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    assert!(!pred.is_empty());
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| ((p - t) / t).abs())
        .sum();
    100.0 * sum / pred.len() as f64
}

/// Optional worker pool; `None` runs sequentially. Results are identical
/// either way because chunk boundaries and the reduction order are fixed.
pub fn make_pool(jobs: usize) -> Option<rayon::ThreadPool> {
    if jobs > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .expect("thread pool"),
        )
    } else {
        None
    }
}

/// Map fixed chunks of `idxs`, each worker owning a reusable workspace.
fn run_chunks<T: Scalar, R: Send, F>(
    idxs: &[usize],
    pool: Option<&rayon::ThreadPool>,
    f: F,
) -> Vec<R>
where
    F: Fn(&mut Workspace<T>, &[usize]) -> R + Sync,
{
    let chunks: Vec<&[usize]> = idxs.chunks(CHUNK).collect();
    match pool {
        Some(p) => p.install(|| {
            use rayon::prelude::*;
            chunks
                .par_iter()
                .map_init(Workspace::new, |ws, c| f(ws, c))
                .collect()
        }),
        None => {
            let mut ws = Workspace::new();
            chunks.into_iter().map(|c| f(&mut ws, c)).collect()
        }
    }
}

/// Batch loss plus gradients, evaluated over fixed chunks of [`CHUNK`]
/// graphs and reduced in chunk order.
pub fn loss_and_gradients<T: Scalar>(
    params: &ModelParams<T>,
    set: &PreparedSet<T>,
    idxs: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(f64, Gradients<T>), ModelError> {
    let n_total = idxs.len();
    let scale = 100.0 / n_total as f64;
    let wt = ParamTransposes::of(params);
    let chunk_results: Vec<Result<(f64, Gradients<T>), ModelError>> =
        run_chunks(idxs, pool, |ws, chunk| {
            let batch = assemble(set, chunk);
            forward_into(params, &batch, ws);
            let (err_sum, mut dout) = mape_terms(&ws.out, &batch.targets)?;
            let s = T::from_f64(scale);
            for d in dout.iter_mut() {
                *d = *d * s;
            }
            let mut grads = Gradients::zeros(params);
            backward_into(params, &wt, &batch, ws, &dout, &mut grads);
            Ok((err_sum, grads))
        });
    let mut total = Gradients::zeros(params);
    let mut err_sum = 0.0;
    for res in chunk_results {
        let (e, g) = res?;
        err_sum += e;
        total.add_assign(&g);
    }
    Ok((scale * err_sum, total))
}

/// Forward-only evaluation; returns predictions in `idxs` order.
pub fn predict_indices<T: Scalar>(
    params: &ModelParams<T>,
    set: &PreparedSet<T>,
    idxs: &[usize],
    pool: Option<&rayon::ThreadPool>,
) -> Vec<f64> {
    let chunk_results: Vec<Vec<f64>> = run_chunks(idxs, pool, |ws, chunk| {
        let batch = assemble(set, chunk);
        forward_into(params, &batch, ws);
        ws.out.iter().map(|&o| o.to_f64()).collect()
    });
    chunk_results.into_iter().flatten().collect()
}

/// Evaluate MAPE of a whole prepared set.
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    set: &PreparedSet<T>,
    pool: Option<&rayon::ThreadPool>,
) -> f64 {
    let idxs: Vec<usize> = (0..set.graphs.len()).collect();
    let preds = predict_indices(params, set, &idxs, pool);
    let targets: Vec<f64> = set.graphs.iter().map(|g| g.target).collect();
    mape_of(&preds, &targets)
}

/// Forward pass over one graph (reference path used by tests and tools).
pub fn forward_graph<T: Scalar>(
    params: &ModelParams<T>,
    graph: &CellGraph,
    spec: &NormalizationSpec,
) -> Result<f64, ModelError> {
    if graph.layout.width() != params.in_dim {
        return Err(ModelError::LayoutMismatch {
            expected: params.in_dim,
            got: graph.layout.width(),
        });
    }
    let prepared = prepare_graph::<T>(graph, spec, 0.0);
    let set = PreparedSet {
        in_dim: params.in_dim,
        graphs: vec![prepared],
    };
    Ok(predict_indices(params, &set, &[0], None)[0])
}

/// Normalize and predict a batch of graphs sharing one layout.
pub fn predict_graphs(
    params: &ModelParams<f64>,
    spec: &NormalizationSpec,
    graphs: &[CellGraph],
    jobs: usize,
) -> Result<Vec<f64>, ModelError> {
    if graphs.is_empty() {
        return Ok(Vec::new());
    }
    for g in graphs {
        if g.layout.width() != params.in_dim {
            return Err(ModelError::LayoutMismatch {
                expected: params.in_dim,
                got: g.layout.width(),
            });
        }
    }
    let set = PreparedSet {
        in_dim: params.in_dim,
        graphs: graphs
            .iter()
            .map(|g| prepare_graph::<f64>(g, spec, 0.0))
            .collect(),
    };
    let idxs: Vec<usize> = (0..graphs.len()).collect();
    let pool = make_pool(jobs);
    Ok(predict_indices(params, &set, &idxs, pool.as_ref()))
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> AdamState<T> {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            v: shapes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            step: 0,
        }
    }

    pub fn convert<U: Scalar>(&self) -> AdamState<U> {
        AdamState {
            m: self
                .m
                .iter()
                .map(|t| t.iter().map(|&x| U::from_f64(x.to_f64())).collect())
                .collect(),
            v: self
                .v
                .iter()
                .map(|t| t.iter().map(|&x| U::from_f64(x.to_f64())).collect())
                .collect(),
            step: self.step,
        }
    }
}

/// Training hyperparameters. Defaults: batch 512, 5000 epochs, initial
/// learning rate 1e-4 halved every 500 epochs, Adam (0.9, 0.999, 1e-8).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epoch interval between validation evaluations.
    pub valid_interval: usize,
    /// Worker threads for chunk-level parallelism (1 = sequential).
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            epochs: 5000,
            lr0: 1e-4,
            lr_halving_period: 500,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            valid_interval: 25,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    /// Learning rate for a 1-based epoch number.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = (epoch - 1) / self.lr_halving_period;
        self.lr0 * 0.5f64.powi(halvings as i32)
    }
}

fn adam_update<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
    let corr1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
    let corr2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
    let lr_t = T::from_f64(lr);
    let eps = T::from_f64(cfg.eps);
    let gts = grads.tensors();
    let pts = params.tensors_mut();
    for (ti, (p, g)) in pts.into_iter().zip(gts.into_iter()).enumerate() {
        let m = &mut state.m[ti];
        let v = &mut state.v[ti];
        for k in 0..p.len() {
            let gk = g[k];
            m[k] = b1 * m[k] + one_m_b1 * gk;
            v[k] = b2 * v[k] + one_m_b2 * gk * gk;
            let mhat = m[k] * corr1;
            let vhat = v[k] * corr2;
            p[k] -= lr_t * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_mape: f64,
    pub valid_mape: Option<f64>,
}

pub struct TrainOutcome<T> {
    /// Parameters with the best validation MAPE seen.
    pub best: ModelParams<T>,
    pub best_valid: f64,
    /// Parameters after the last epoch (for resuming).
    pub final_params: ModelParams<T>,
    pub opt: AdamState<T>,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
}

/// Train from scratch.
pub fn train<T: Scalar>(
    train_set: &PreparedSet<T>,
    valid_set: &PreparedSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, ModelError> {
    let layout_width = train_set.in_dim;
    let params = ModelParams::init_dims(layout_width, HIDDEN, derive_seed(cfg.seed, "init"));
    let opt = AdamState::new(&params);
    train_resume(params, opt, 0, train_set, valid_set, cfg)
}

/// Continue training from epoch `start_epoch` (0 = fresh). Epoch shuffles
/// are seeded per epoch, so a resumed run reproduces an uninterrupted one.
pub fn train_resume<T: Scalar>(
    mut params: ModelParams<T>,
    mut opt: AdamState<T>,
    start_epoch: usize,
    train_set: &PreparedSet<T>,
    valid_set: &PreparedSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, ModelError> {
    if train_set.graphs.is_empty() {
        return Err(ModelError::EmptySet("training set".into()));
    }
    if valid_set.graphs.is_empty() {
        return Err(ModelError::EmptySet("validation set".into()));
    }
    let n = train_set.graphs.len();
    let mut log = Vec::new();
    let mut best: ModelParams<T> = params.clone();
    let mut best_valid = f64::INFINITY;
    let pool = make_pool(cfg.jobs);

    for epoch in start_epoch + 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut idxs: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha20Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle-{epoch}")));
        shuffle(&mut idxs, &mut rng);

        let mut err_weighted = 0.0f64;
        for batch_idxs in idxs.chunks(cfg.batch_size) {
            let (loss, grads) = loss_and_gradients(&params, train_set, batch_idxs, pool.as_ref())?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            err_weighted += loss * batch_idxs.len() as f64;
            adam_update(&mut params, &grads, &mut opt, lr, cfg);
        }
        let train_mape = err_weighted / n as f64;

        let run_valid = epoch % cfg.valid_interval == 0 || epoch == cfg.epochs || epoch == 1;
        let valid_mape = if run_valid {
            let v = evaluate(&params, valid_set, pool.as_ref());
            if v < best_valid {
                best_valid = v;
                best = params.clone();
            }
            Some(v)
        } else {
            None
        };
        log.push(EpochLog {
            epoch,
            lr,
            train_mape,
            valid_mape,
        });
    }
    if best_valid.is_infinite() {
        best = params.clone();
    }
    Ok(TrainOutcome {
        best,
        best_valid,
        final_params: params,
        opt,
        epochs_run: cfg.epochs,
        log,
    })
}

/// Fisher-Yates with the given RNG; kept local so the byte stream feeding
/// the shuffle is pinned by this crate, not a dependency's internals.
fn shuffle<R: rand::Rng>(idxs: &mut [usize], rng: &mut R) {
    for i in (1..idxs.len()).rev() {
        let j = rng.random_range(0..=i);
        idxs.swap(i, j);
    }
}

const CKPT_MAGIC: &[u8; 8] = b"CGNNCKP1";

/// Serialized model: header, then tensors as little-endian f64 in the
/// fixed order W1 W2 W3 W4 b4 W5 b5; optional optimizer state (step,
/// epoch, first and second moments).
pub fn save_checkpoint(
    path: &Path,
    task: Task,
    params: &ModelParams<f64>,
    opt: Option<(&AdamState<f64>, u64)>,
) -> Result<(), ModelError> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&[
        task.id(),
        task.layout().id(),
        u8::from(opt.is_some()),
        0,
    ])?;
    w.write_all(&(params.in_dim as u32).to_le_bytes())?;
    w.write_all(&(params.hidden as u32).to_le_bytes())?;
    for tensor in params.tensors() {
        for &x in tensor {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    if let Some((state, epoch)) = opt {
        w.write_all(&state.step.to_le_bytes())?;
        w.write_all(&epoch.to_le_bytes())?;
        for part in [&state.m, &state.v] {
            for tensor in part {
                for &x in tensor {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub struct Checkpoint {
    pub task: Task,
    pub params: ModelParams<f64>,
    pub opt: Option<(AdamState<f64>, u64)>,
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut r = io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(ModelError::Format("bad checkpoint magic".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != 1 {
        return Err(ModelError::Format("unsupported checkpoint version".into()));
    }
    let mut head = [0u8; 4];
    r.read_exact(&mut head)?;
    let task =
        Task::from_id(head[0]).ok_or_else(|| ModelError::Format("bad task id".into()))?;
    if task.layout().id() != head[1] {
        return Err(ModelError::Format("layout does not match task".into()));
    }
    let has_opt = head[2] == 1;
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim)?;
    let in_dim = u32::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim)?;
    let hidden = u32::from_le_bytes(dim) as usize;
    if in_dim != task.layout().width() {
        return Err(ModelError::Format("input width does not match layout".into()));
    }
    let mut params = ModelParams::<f64>::init_dims(in_dim, hidden, 0);
    for tensor in params.tensors_mut() {
        for x in tensor.iter_mut() {
            *x = read_f64(&mut r)?;
        }
    }
    let opt = if has_opt {
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let step = u64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let epoch = u64::from_le_bytes(b8);
        let mut state = AdamState::new(&params);
        state.step = step;
        for part in [&mut state.m, &mut state.v] {
            for tensor in part.iter_mut() {
                for x in tensor.iter_mut() {
                    *x = read_f64(&mut r)?;
                }
            }
        }
        Some((state, epoch))
    } else {
        None
    };
    Ok(Checkpoint { task, params, opt })
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests;
