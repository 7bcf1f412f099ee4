//! Exhaustive central-difference verification of the analytic gradients.
//!
//! A naive check recomputes the whole forward pass twice per parameter,
//! which is hopeless for ~84k parameters. Instead each perturbation is
//! evaluated through a delta path that reuses the cached base activations
//! and only recomputes what the perturbed entry can influence: a column
//! through the remaining layers. The delta evaluator itself is validated
//! against full recomputation on randomly probed parameters, so the check
//! stays an independent oracle for the backward pass.

use super::linalg::Mat;
use super::{
    aggregate, assemble, backward_into, forward_into, mape_terms, Batch, Gradients, ModelParams,
    ParamTransposes, PreparedSet, Workspace,
};

/// Outcome of one exhaustive gradient comparison.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Parameters compared (every entry of every tensor).
    pub params_total: usize,
    /// Parameters whose analytic gradient magnitude exceeded the floor.
    pub params_checked: usize,
    /// Worst relative disagreement among checked parameters.
    pub worst_rel: f64,
    /// Checked parameters exceeding the tolerance.
    pub failures: usize,
    /// Sample of failing entries: (tensor, index, analytic, numeric).
    pub failure_samples: Vec<(usize, usize, f64, f64)>,
    /// Largest relative error of the delta evaluator against full
    /// recomputation over the probed subset.
    pub meta_max_rel: f64,
}

struct FdEval<'a> {
    params: &'a ModelParams<f64>,
    batch: &'a Batch<f64>,
    ws: &'a Workspace<f64>,
    scale: f64,
}

impl<'a> FdEval<'a> {
    fn n_nodes(&self) -> usize {
        self.batch.x.rows
    }

    fn n_graphs(&self) -> usize {
        self.batch.ranges.len()
    }

    fn loss_base(&self) -> f64 {
        self.loss_with_delta_out(&vec![0.0; self.n_graphs()])
    }

    fn loss_with_delta_out(&self, delta_out: &[f64]) -> f64 {
        let mut sum = 0.0;
        for (b, &d) in delta_out.iter().enumerate() {
            let out = self.ws.out[b] + d;
            let t = self.batch.targets[b];
            sum += (out - t).abs() / t;
        }
        self.scale * sum
    }

    /// dst[i] = inv_indeg[i] * sum over in-neighbors (plus self) of src.
    fn agg_vec(&self, src: &[f64]) -> Vec<f64> {
        let n = self.n_nodes();
        let mut dst = vec![0.0; n];
        for i in 0..n {
            let s = self.batch.offsets[i] as usize;
            let e = self.batch.offsets[i + 1] as usize;
            let mut acc = 0.0;
            for &j in &self.batch.srcs[s..e] {
                acc += src[j as usize];
            }
            dst[i] = acc * self.batch.inv_indeg[i];
        }
        dst
    }

    fn pool_vec(&self, src: &[f64]) -> Vec<f64> {
        self.batch
            .ranges
            .iter()
            .map(|&(lo, hi)| {
                let mut acc = 0.0;
                for i in lo..hi {
                    acc += src[i as usize];
                }
                acc / (hi - lo) as f64
            })
            .collect()
    }

    /// Columns of H4 shifted by a dense Z4 delta, folded straight into the
    /// output delta.
    fn out_delta_from_z4_delta(&self, dz4: &Mat<f64>) -> Vec<f64> {
        let h = self.params.hidden;
        (0..self.n_graphs())
            .map(|b| {
                let z4row = self.ws.z4.row(b);
                let h4row = self.ws.h4.row(b);
                let drow = dz4.row(b);
                let mut acc = 0.0;
                for j in 0..h {
                    let nh = (z4row[j] + drow[j]).max(0.0);
                    acc += (nh - h4row[j]) * self.params.w_fc2.data[j];
                }
                acc
            })
            .collect()
    }

    /// Perturbation of the graph-level feature G confined to one column.
    fn dout_from_g_col_delta(&self, col: usize, dg: &[f64]) -> Vec<f64> {
        let h = self.params.hidden;
        let b = self.n_graphs();
        let mut dz4 = Mat::zeros(b, h);
        for bi in 0..b {
            let d = dg[bi];
            if d != 0.0 {
                let w4row = self.params.w_fc1.row(col);
                let out = dz4.row_mut(bi);
                for j in 0..h {
                    out[j] = d * w4row[j];
                }
            }
        }
        self.out_delta_from_z4_delta(&dz4)
    }

    /// Perturbation entering as a single column of the layer-3 input
    /// product: dp3col[i] added into P3[:, col].
    fn dout_from_p3_col_delta(&self, col: usize, dp3col: &[f64]) -> Vec<f64> {
        let ds3col = self.agg_vec(dp3col);
        let n = self.n_nodes();
        let mut dh3col = vec![0.0; n];
        for i in 0..n {
            let s = self.ws.s3.data[i * self.params.hidden + col];
            let hcur = self.ws.h3.data[i * self.params.hidden + col];
            dh3col[i] = (s + ds3col[i]).max(0.0) - hcur;
        }
        let dg = self.pool_vec(&dh3col);
        self.dout_from_g_col_delta(col, &dg)
    }

    /// Perturbation entering as a single column of the layer-2 product.
    fn dout_from_p2_col_delta(&self, col: usize, dp2col: &[f64]) -> Vec<f64> {
        let ds2col = self.agg_vec(dp2col);
        let n = self.n_nodes();
        let h = self.params.hidden;
        let mut dh2col = vec![0.0; n];
        for i in 0..n {
            let s = self.ws.s2.data[i * h + col];
            let hcur = self.ws.h2.data[i * h + col];
            dh2col[i] = (s + ds2col[i]).max(0.0) - hcur;
        }
        // dS3 = agg(dh2col) outer W3[col, :]
        let u = self.agg_vec(&dh2col);
        let w3row = self.params.w_gcn3.row(col);
        let mut dh3 = Mat::zeros(n, h);
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            let s3row = self.ws.s3.row(i);
            let h3row = self.ws.h3.row(i);
            let out = dh3.row_mut(i);
            for j in 0..h {
                out[j] = (s3row[j] + u[i] * w3row[j]).max(0.0) - h3row[j];
            }
        }
        self.dout_from_h3_delta(&dh3)
    }

    fn dout_from_h3_delta(&self, dh3: &Mat<f64>) -> Vec<f64> {
        let h = self.params.hidden;
        let b = self.n_graphs();
        let mut dg = Mat::zeros(b, h);
        for (bi, &(lo, hi)) in self.batch.ranges.iter().enumerate() {
            let inv = 1.0 / (hi - lo) as f64;
            let out = dg.row_mut(bi);
            for i in lo..hi {
                let row = dh3.row(i as usize);
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        let dz4 = super::matmul(&dg, &self.params.w_fc1);
        self.out_delta_from_z4_delta(&dz4)
    }

    fn dout_w_gcn1(&self, r: usize, c: usize, delta: f64) -> Vec<f64> {
        let n = self.n_nodes();
        let h = self.params.hidden;
        let in_dim = self.params.in_dim;
        let dp1col: Vec<f64> = (0..n).map(|i| delta * self.batch.x.data[i * in_dim + r]).collect();
        let ds1col = self.agg_vec(&dp1col);
        let mut dh1col = vec![0.0; n];
        for i in 0..n {
            let s = self.ws.s1.data[i * h + c];
            let hcur = self.ws.h1.data[i * h + c];
            dh1col[i] = (s + ds1col[i]).max(0.0) - hcur;
        }
        // dS2 = agg(dh1col) outer W2[c, :]
        let u = self.agg_vec(&dh1col);
        let w2row = self.params.w_gcn2.row(c);
        let mut dh2 = Mat::zeros(n, h);
        for i in 0..n {
            if u[i] == 0.0 {
                continue;
            }
            let s2row = self.ws.s2.row(i);
            let h2row = self.ws.h2.row(i);
            let out = dh2.row_mut(i);
            for j in 0..h {
                out[j] = (s2row[j] + u[i] * w2row[j]).max(0.0) - h2row[j];
            }
        }
        // dP3 = dH2 W3 ; dS3 = agg(dP3); dH3 gated
        let dp3 = super::matmul(&dh2, &self.params.w_gcn3);
        let mut ds3 = Mat::zeros(n, h);
        aggregate(&mut ds3, &dp3, self.batch);
        let mut dh3 = Mat::zeros(n, h);
        for i in 0..n {
            let s3row = self.ws.s3.row(i);
            let h3row = self.ws.h3.row(i);
            let drow = ds3.row(i);
            let out = dh3.row_mut(i);
            for j in 0..h {
                out[j] = (s3row[j] + drow[j]).max(0.0) - h3row[j];
            }
        }
        self.dout_from_h3_delta(&dh3)
    }

    fn dout_w_gcn2(&self, r: usize, c: usize, delta: f64) -> Vec<f64> {
        let n = self.n_nodes();
        let h = self.params.hidden;
        let dp2col: Vec<f64> = (0..n).map(|i| delta * self.ws.h1.data[i * h + r]).collect();
        self.dout_from_p2_col_delta(c, &dp2col)
    }

    fn dout_w_gcn3(&self, r: usize, c: usize, delta: f64) -> Vec<f64> {
        let n = self.n_nodes();
        let h = self.params.hidden;
        let dp3col: Vec<f64> = (0..n).map(|i| delta * self.ws.h2.data[i * h + r]).collect();
        self.dout_from_p3_col_delta(c, &dp3col)
    }

    fn dout_w_fc1(&self, r: usize, c: usize, delta: f64) -> Vec<f64> {
        let b = self.n_graphs();
        let h = self.params.hidden;
        let mut dz4 = Mat::zeros(b, h);
        for bi in 0..b {
            dz4.row_mut(bi)[c] = delta * self.ws.g.data[bi * h + r];
        }
        self.out_delta_from_z4_delta(&dz4)
    }

    fn dout_b_fc1(&self, c: usize, delta: f64) -> Vec<f64> {
        let b = self.n_graphs();
        let h = self.params.hidden;
        let mut dz4 = Mat::zeros(b, h);
        for bi in 0..b {
            dz4.row_mut(bi)[c] = delta;
        }
        self.out_delta_from_z4_delta(&dz4)
    }

    fn dout_w_fc2(&self, c: usize, delta: f64) -> Vec<f64> {
        (0..self.n_graphs())
            .map(|b| delta * self.ws.h4.data[b * self.params.hidden + c])
            .collect()
    }

    fn dout_b_fc2(&self, delta: f64) -> Vec<f64> {
        vec![delta; self.n_graphs()]
    }

    /// Output deltas with tensor `ti` entry `idx` shifted by `delta`.
    fn dout_perturbed(&self, ti: usize, idx: usize, delta: f64) -> Vec<f64> {
        let h = self.params.hidden;
        match ti {
            0 => self.dout_w_gcn1(idx / h, idx % h, delta),
            1 => self.dout_w_gcn2(idx / h, idx % h, delta),
            2 => self.dout_w_gcn3(idx / h, idx % h, delta),
            3 => self.dout_w_fc1(idx / h, idx % h, delta),
            4 => self.dout_b_fc1(idx, delta),
            5 => self.dout_w_fc2(idx, delta),
            _ => self.dout_b_fc2(delta),
        }
    }

    /// Loss at params with tensor `ti` entry `idx` shifted by `delta`.
    fn loss_perturbed(&self, ti: usize, idx: usize, delta: f64) -> f64 {
        self.loss_with_delta_out(&self.dout_perturbed(ti, idx, delta))
    }

    /// Central difference (L(+h) - L(-h)) / 2h with the unperturbed part of
    /// the loss cancelled symbolically. Away from kinks of |.| the
    /// difference reduces to sign(e) * (d+ - d-), which avoids losing the
    /// tiny deltas against the O(1) residuals.
    fn central_diff(&self, ti: usize, idx: usize, h: f64) -> f64 {
        let dp = self.dout_perturbed(ti, idx, h);
        let dm = self.dout_perturbed(ti, idx, -h);
        let mut acc = 0.0;
        for b in 0..self.n_graphs() {
            let e = self.ws.out[b] - self.batch.targets[b];
            let plus = e + dp[b];
            let minus = e + dm[b];
            let contrib = if plus > 0.0 && minus > 0.0 {
                dp[b] - dm[b]
            } else if plus < 0.0 && minus < 0.0 {
                dm[b] - dp[b]
            } else {
                plus.abs() - minus.abs()
            };
            acc += contrib / self.batch.targets[b];
        }
        self.scale * acc / (2.0 * h)
    }
}

/// Full recomputation after perturbing one entry; the meta-oracle for the
/// delta evaluator.
fn loss_full_recompute(
    params: &ModelParams<f64>,
    batch: &Batch<f64>,
    ti: usize,
    idx: usize,
    delta: f64,
    scale: f64,
) -> f64 {
    let mut perturbed = params.clone();
    perturbed.tensors_mut()[ti][idx] += delta;
    let mut ws = Workspace::new();
    forward_into(&perturbed, batch, &mut ws);
    let (err_sum, _) = mape_terms(&ws.out, &batch.targets).expect("positive targets");
    scale * err_sum
}

/// Compare analytic gradients against central finite differences for every
/// parameter, over the graphs selected by `idxs`.
///
/// `h` is the absolute step; parameters whose analytic magnitude is below
/// `gradient_floor` are skipped (the difference quotient is noise there);
/// `meta_probes` parameters are re-evaluated by full recomputation to bound
/// the delta evaluator's own error.
pub fn check_gradients(
    params: &ModelParams<f64>,
    set: &PreparedSet<f64>,
    idxs: &[usize],
    h: f64,
    tolerance: f64,
    gradient_floor: f64,
    meta_probes: usize,
) -> GradCheckReport {
    let batch = assemble(set, idxs);
    let mut ws = Workspace::new();
    forward_into(params, &batch, &mut ws);
    let scale = 100.0 / idxs.len() as f64;
    let (_, mut dout) = mape_terms(&ws.out, &batch.targets).expect("positive targets");
    for d in dout.iter_mut() {
        *d *= scale;
    }
    let mut analytic: Gradients<f64> = Gradients::zeros(params);
    let wt = ParamTransposes::of(params);
    backward_into(params, &wt, &batch, &mut ws, &dout, &mut analytic);
    let eval = FdEval {
        params,
        batch: &batch,
        ws: &ws,
        scale,
    };
    debug_assert!((eval.loss_base() - scale * mape_terms(&ws.out, &batch.targets).unwrap().0).abs() < 1e-12);

    let tensor_sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let mut report = GradCheckReport {
        params_total: tensor_sizes.iter().sum(),
        params_checked: 0,
        worst_rel: 0.0,
        failures: 0,
        failure_samples: Vec::new(),
        meta_max_rel: 0.0,
    };

    let grad_tensors = analytic.tensors();
    for (ti, &size) in tensor_sizes.iter().enumerate() {
        for idx in 0..size {
            let ga = grad_tensors[ti][idx];
            if ga.abs() <= gradient_floor {
                continue;
            }
            let gn = eval.central_diff(ti, idx, h);
            let rel = (ga - gn).abs() / ga.abs().max(gn.abs());
            report.params_checked += 1;
            if rel > report.worst_rel {
                report.worst_rel = rel;
            }
            if rel > tolerance {
                report.failures += 1;
                if report.failure_samples.len() < 16 {
                    report.failure_samples.push((ti, idx, ga, gn));
                }
            }
        }
    }

    // validate the delta evaluator against full recomputation
    let mut state = 0x243f6a8885a308d3u64 ^ (idxs.len() as u64);
    for _ in 0..meta_probes {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let ti = (state % 7) as usize;
        let idx = (state >> 8) as usize % tensor_sizes[ti];
        let delta = if state & 1 == 0 { h } else { -h };
        let fast = eval.loss_perturbed(ti, idx, delta);
        let slow = loss_full_recompute(params, &batch, ti, idx, delta, scale);
        let rel = (fast - slow).abs() / slow.abs().max(1e-300);
        if rel > report.meta_max_rel {
            report.meta_max_rel = rel;
        }
    }
    report
}
