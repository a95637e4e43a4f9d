//! Input-convex recurrent networks.
//!
//! ```text
//! z_t = relu(U x̂_t + W z_{t-1} + D2 x̂_{t-1} + b_z)
//! y_t =      V z_t + D1 z_{t-1} + D3 x̂_t     + b_y
//! ```
//!
//! Each frame is passed unexpanded as `[s; u]` and expanded internally to
//! `x̂ = [s; u; -u]`. With `U, W, V, D1, D2, D3 >= 0` the unrolled output
//! `y_t` is convex in `(u_1, ..., u_t)` and nondecreasing in every state entry.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::icnn::{expand_into, TrainReport};
use crate::numeric::{relu_grad, relu_scalar, Adam, Matrix, RngStream};

/// Recurrent memory carried between calls: `z_{t-1}` and `x̂_{t-1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenState {
    pub z: Vec<f64>,
    pub prev_input: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcrnnModel {
    state_dim: usize,
    input_dim: usize,
    hidden: usize,
    output: usize,
    n_w: usize,
    pub u: Matrix,
    pub w: Matrix,
    pub v: Matrix,
    pub d1: Matrix,
    pub d2: Matrix,
    pub d3: Matrix,
    pub b_z: Vec<f64>,
    pub b_y: Vec<f64>,
}

/// Shape of an [`IcrnnModel`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcrnnDims {
    /// Unexpanded leading entries of each frame (states, not duplicated).
    pub state_dim: usize,
    /// Expanded entries of each frame (the decision variables).
    pub d: usize,
    pub hidden: usize,
    pub output: usize,
    pub n_w: usize,
}

pub struct SequenceTrace {
    raw: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl SequenceTrace {
    /// Smallest |pre-activation| over all steps and hidden units.
    pub fn kink_distance(&self) -> f64 {
        self.pre.iter().flatten().fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    pub fn final_state(&self) -> HiddenState {
        HiddenState {
            z: self.z.last().cloned().unwrap_or_default(),
            prev_input: self.raw.last().cloned().unwrap_or_default(),
        }
    }
}

impl IcrnnModel {
    pub fn zeros(dims: IcrnnDims) -> Result<Self> {
        if dims.hidden == 0 || dims.output == 0 {
            return Err(invalid("icrnn needs nonzero hidden and output widths"));
        }
        let raw = dims.state_dim + 2 * dims.d;
        Ok(Self {
            state_dim: dims.state_dim,
            input_dim: dims.d,
            hidden: dims.hidden,
            output: dims.output,
            n_w: dims.n_w,
            u: Matrix::zeros(dims.hidden, raw),
            w: Matrix::zeros(dims.hidden, dims.hidden),
            v: Matrix::zeros(dims.output, dims.hidden),
            d1: Matrix::zeros(dims.output, dims.hidden),
            d2: Matrix::zeros(dims.hidden, raw),
            d3: Matrix::zeros(dims.output, raw),
            b_z: vec![0.0; dims.hidden],
            b_y: vec![0.0; dims.output],
        })
    }

    /// Weights `|N(0, 1/fan_in)|` with fan-in taken per destination unit, biases zero.
    pub fn random(dims: IcrnnDims, rng: &mut RngStream) -> Result<Self> {
        let mut m = Self::zeros(dims)?;
        let raw = m.raw_dim() as f64;
        let h = dims.hidden as f64;
        let fz = 2.0 * raw + h;
        let fy = 2.0 * h + raw;
        for (mat, fan) in [
            (&mut m.u, fz),
            (&mut m.w, fz),
            (&mut m.d2, fz),
            (&mut m.v, fy),
            (&mut m.d1, fy),
            (&mut m.d3, fy),
        ] {
            for x in mat.data_mut() {
                *x = rng.gaussian(0.0, 1.0 / fan).abs();
            }
        }
        Ok(m)
    }

    pub fn dims(&self) -> IcrnnDims {
        IcrnnDims {
            state_dim: self.state_dim,
            d: self.input_dim,
            hidden: self.hidden,
            output: self.output,
            n_w: self.n_w,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn arg_dim(&self) -> usize {
        self.state_dim + self.input_dim
    }

    pub fn raw_dim(&self) -> usize {
        self.state_dim + 2 * self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn memory_window(&self) -> usize {
        self.n_w
    }

    pub fn set_memory_window(&mut self, n_w: usize) {
        self.n_w = n_w;
    }

    pub fn initial_state(&self) -> HiddenState {
        HiddenState {
            z: vec![0.0; self.hidden],
            prev_input: vec![0.0; self.raw_dim()],
        }
    }

    fn mats(&self) -> [&Matrix; 6] {
        [&self.u, &self.w, &self.v, &self.d1, &self.d2, &self.d3]
    }

    fn mats_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.u,
            &mut self.w,
            &mut self.v,
            &mut self.d1,
            &mut self.d2,
            &mut self.d3,
        ]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.min_constrained_weight() >= 0.0
    }

    pub fn min_constrained_weight(&self) -> f64 {
        self.mats().iter().map(|m| m.min_value()).fold(f64::INFINITY, f64::min)
    }

    /// `(matrix name, row, col, value)` of the most negative constrained weight.
    pub fn most_negative_weight(&self) -> Option<(&'static str, usize, usize, f64)> {
        let names = ["U", "W", "V", "D1", "D2", "D3"];
        let mut best: Option<(&'static str, usize, usize, f64)> = None;
        for (name, m) in names.iter().zip(self.mats()) {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let v = m.get(r, c);
                    if v < 0.0 && best.is_none_or(|b| v < b.3) {
                        best = Some((name, r, c, v));
                    }
                }
            }
        }
        best
    }

    pub fn project_nonnegative(&mut self) {
        for m in self.mats_mut() {
            m.clamp_min(0.0);
        }
    }

    fn check_frames(&self, frames: &[Vec<f64>]) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::Empty("icrnn sequence"));
        }
        for f in frames {
            check_dim("icrnn frame", self.arg_dim(), f.len())?;
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("icrnn frame"));
            }
        }
        Ok(())
    }

    fn run(&self, frames: &[Vec<f64>], init: &HiddenState) -> SequenceTrace {
        let l = frames.len();
        let mut raw = Vec::with_capacity(l + 1);
        raw.push(init.prev_input.clone());
        let mut z = Vec::with_capacity(l + 1);
        z.push(init.z.clone());
        let mut pre = Vec::with_capacity(l);
        let mut outputs = Vec::with_capacity(l);
        let s = self.state_dim;
        for f in frames {
            let mut r = Vec::with_capacity(self.raw_dim());
            expand_into(&f[..s], &f[s..], &mut r);
            let zp = z.last().expect("z seeded");
            let rp = raw.last().expect("raw seeded");
            let mut p = self.b_z.clone();
            self.u.gemv_acc(&r, &mut p);
            self.w.gemv_acc(zp, &mut p);
            self.d2.gemv_acc(rp, &mut p);
            let zt: Vec<f64> = p.iter().map(|&v| relu_scalar(v)).collect();
            let mut y = self.b_y.clone();
            self.v.gemv_acc(&zt, &mut y);
            self.d1.gemv_acc(zp, &mut y);
            self.d3.gemv_acc(&r, &mut y);
            pre.push(p);
            z.push(zt);
            raw.push(r);
            outputs.push(y);
        }
        SequenceTrace { raw, pre, z, outputs }
    }

    /// Runs the recursion from `init` (zeros when `None`).
    pub fn forward(&self, frames: &[Vec<f64>], init: Option<&HiddenState>) -> Result<SequenceTrace> {
        self.check_frames(frames)?;
        let zero;
        let init = match init {
            Some(h) => {
                check_dim("icrnn hidden state", self.hidden, h.z.len())?;
                check_dim("icrnn previous input", self.raw_dim(), h.prev_input.len())?;
                h
            }
            None => {
                zero = self.initial_state();
                &zero
            }
        };
        Ok(self.run(frames, init))
    }

    /// Outputs at every step of a sequence started from zero memory.
    pub fn outputs(&self, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward(frames, None)?.outputs)
    }

    /// Output at the last frame of a window started from zero memory.
    pub fn window_output(&self, frames: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(self.forward(frames, None)?.outputs.pop().unwrap_or_default())
    }

    /// Reverse pass through steps `hi..=lo` (1-based trace indices) seeded by the
    /// output adjoints in `d_y`. Accumulates into `grad` and `d_raw`.
    fn backward_range(
        &self,
        tr: &SequenceTrace,
        d_y: &[Vec<f64>],
        lo: usize,
        hi: usize,
        mut grad: Option<&mut [f64]>,
        d_raw: &mut [Vec<f64>],
    ) {
        let offs = self.param_offsets();
        let mut carry = vec![0.0; self.hidden];
        for t in (lo..=hi).rev() {
            let dy = &d_y[t - 1];
            let mut dz = carry;
            self.v.gemv_t_acc(dy, &mut dz);
            let delta: Vec<f64> = dz.iter().zip(&tr.pre[t - 1]).map(|(d, &p)| d * relu_grad(p)).collect();
            if let Some(g) = grad.as_deref_mut() {
                outer_into(&mut g[offs[0]..offs[1]], &delta, &tr.raw[t]);
                outer_into(&mut g[offs[1]..offs[2]], &delta, &tr.z[t - 1]);
                outer_into(&mut g[offs[2]..offs[3]], dy, &tr.z[t]);
                outer_into(&mut g[offs[3]..offs[4]], dy, &tr.z[t - 1]);
                outer_into(&mut g[offs[4]..offs[5]], &delta, &tr.raw[t - 1]);
                outer_into(&mut g[offs[5]..offs[6]], dy, &tr.raw[t]);
                for (a, b) in g[offs[6]..offs[7]].iter_mut().zip(&delta) {
                    *a += b;
                }
                for (a, b) in g[offs[7]..offs[8]].iter_mut().zip(dy) {
                    *a += b;
                }
            }
            self.d3.gemv_t_acc(dy, &mut d_raw[t]);
            self.u.gemv_t_acc(&delta, &mut d_raw[t]);
            self.d2.gemv_t_acc(&delta, &mut d_raw[t - 1]);
            let mut next = vec![0.0; self.hidden];
            self.w.gemv_t_acc(&delta, &mut next);
            self.d1.gemv_t_acc(dy, &mut next);
            carry = next;
            if t == lo {
                break;
            }
        }
    }

    /// Full reverse pass for adjoints on every output. `window` truncates the
    /// gradient of each `y_t` to frames `t - window ..= t`.
    fn backward(
        &self,
        tr: &SequenceTrace,
        d_y: &[Vec<f64>],
        window: Option<usize>,
        grad: Option<&mut [f64]>,
    ) -> Vec<Vec<f64>> {
        let l = tr.outputs.len();
        let mut d_raw = vec![vec![0.0; self.raw_dim()]; l + 1];
        match window {
            Some(nw) if nw < l => {
                let mut grad = grad;
                for t in 1..=l {
                    if d_y[t - 1].iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    let mut seed = vec![vec![0.0; self.output]; l];
                    seed[t - 1] = d_y[t - 1].clone();
                    let lo = t.saturating_sub(nw).max(1);
                    self.backward_range(tr, &seed, lo, t, grad.as_deref_mut(), &mut d_raw);
                }
            }
            _ => self.backward_range(tr, d_y, 1, l, grad, &mut d_raw),
        }
        d_raw
    }

    fn fold(&self, d_raw: &[f64]) -> Vec<f64> {
        let s = self.state_dim;
        let d = self.input_dim;
        let mut out = d_raw[..s].to_vec();
        out.extend((0..d).map(|j| d_raw[s + j] - d_raw[s + d + j]));
        out
    }

    /// Given adjoints on every output step, returns the outputs and the
    /// gradient with respect to each unexpanded frame `[s_τ; u_τ]`.
    pub fn input_vjp(&self, frames: &[Vec<f64>], d_outputs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_frames(frames)?;
        check_dim("icrnn output adjoints", frames.len(), d_outputs.len())?;
        for d in d_outputs {
            check_dim("icrnn output adjoint", self.output, d.len())?;
        }
        let tr = self.run(frames, &self.initial_state());
        let d_raw = self.backward(&tr, d_outputs, None, None);
        let grads = d_raw[1..].iter().map(|r| self.fold(r)).collect();
        Ok((tr.outputs, grads))
    }

    /// Gradient of `Σ_t Σ_j y_{t,j}` with respect to every action `u_τ`, with the
    /// states in `states` held fixed.
    pub fn grad_actions(&self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_dim("icrnn state/action sequence", states.len(), actions.len())?;
        let frames: Vec<Vec<f64>> = states
            .iter()
            .zip(actions)
            .map(|(s, u)| {
                let mut f = s.clone();
                f.extend_from_slice(u);
                f
            })
            .collect();
        let ones = vec![vec![1.0; self.output]; frames.len()];
        let (_, g) = self.input_vjp(&frames, &ones)?;
        Ok(g.into_iter().map(|f| f[self.state_dim..].to_vec()).collect())
    }

    pub fn param_count(&self) -> usize {
        self.mats().iter().map(|m| m.data().len()).sum::<usize>() + self.hidden + self.output
    }

    fn param_offsets(&self) -> [usize; 9] {
        let mut offs = [0; 9];
        let mats = self.mats();
        for i in 0..6 {
            offs[i + 1] = offs[i] + mats[i].data().len();
        }
        offs[7] = offs[6] + self.hidden;
        offs[8] = offs[7] + self.output;
        offs
    }

    /// Flat parameters `U, W, V, D1, D2, D3, b_z, b_y`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for m in self.mats() {
            out.extend_from_slice(m.data());
        }
        out.extend_from_slice(&self.b_z);
        out.extend_from_slice(&self.b_y);
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim("icrnn parameter vector", self.param_count(), p.len())?;
        let offs = self.param_offsets();
        for (i, m) in self.mats_mut().into_iter().enumerate() {
            m.data_mut().copy_from_slice(&p[offs[i]..offs[i + 1]]);
        }
        self.b_z.copy_from_slice(&p[offs[6]..offs[7]]);
        self.b_y.copy_from_slice(&p[offs[7]..offs[8]]);
        Ok(())
    }

    pub fn constrained_len(&self) -> usize {
        self.param_offsets()[6]
    }

    /// MSE over every output of every sequence and its gradient by BPTT.
    /// `window` truncates backpropagation per output; `None` is full BPTT.
    pub fn bptt(
        &self,
        sequences: &[Vec<Vec<f64>>],
        targets: &[Vec<Vec<f64>>],
        window: Option<usize>,
    ) -> Result<(f64, Vec<f64>)> {
        if sequences.is_empty() {
            return Err(Error::Empty("icrnn batch"));
        }
        check_dim("icrnn batch targets", sequences.len(), targets.len())?;
        let len = sequences[0].len();
        for (s, t) in sequences.iter().zip(targets) {
            if s.len() != len || t.len() != len {
                return Err(invalid("ragged batch: sequences must share length"));
            }
            self.check_frames(s)?;
            for y in t {
                check_dim("icrnn target", self.output, y.len())?;
            }
        }
        let scale = 1.0 / (sequences.len() * len * self.output) as f64;
        self.batched_grad(sequences, scale, window, |n, outs| {
            outs.iter().zip(&targets[n]).map(|(o, t)| residual(o, t, scale)).collect()
        })
    }

    /// MSE on the last output of each window only, the training objective for
    /// windowed system identification.
    pub fn window_loss_grad(&self, windows: &[Vec<Vec<f64>>], targets: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        if windows.is_empty() {
            return Err(Error::Empty("icrnn batch"));
        }
        check_dim("icrnn window targets", windows.len(), targets.len())?;
        for (w, t) in windows.iter().zip(targets) {
            self.check_frames(w)?;
            check_dim("icrnn target", self.output, t.len())?;
        }
        let scale = 1.0 / (windows.len() * self.output) as f64;
        let zero = vec![0.0; self.output];
        self.batched_grad(windows, scale, None, |n, outs| {
            let l = outs.len();
            let mut d = vec![(zero.clone(), 0.0); l];
            d[l - 1] = residual(&outs[l - 1], &targets[n], scale);
            d
        })
    }

    fn batched_grad<F>(&self, seqs: &[Vec<Vec<f64>>], scale: f64, window: Option<usize>, seed: F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(usize, &[Vec<f64>]) -> Vec<(Vec<f64>, f64)> + Sync,
    {
        let np = self.param_count();
        let idx: Vec<usize> = (0..seqs.len()).collect();
        let partials: Vec<(f64, Vec<f64>)> = idx
            .par_chunks(16)
            .map(|chunk| {
                let mut g = vec![0.0; np];
                let mut loss = 0.0;
                for &n in chunk {
                    let tr = self.run(&seqs[n], &self.initial_state());
                    let (d_y, sq): (Vec<Vec<f64>>, Vec<f64>) = seed(n, &tr.outputs).into_iter().unzip();
                    loss += sq.iter().sum::<f64>();
                    self.backward(&tr, &d_y, window, Some(&mut g));
                }
                (loss, g)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; np];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((loss * scale, grad))
    }

    /// Mean squared error on the last output of each window.
    pub fn window_mse(&self, windows: &[Vec<Vec<f64>>], targets: &[Vec<f64>]) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::Empty("icrnn evaluation set"));
        }
        let sq: Vec<f64> = windows
            .par_iter()
            .zip(targets)
            .map(|(w, t)| -> Result<f64> {
                let y = self.window_output(w)?;
                Ok(y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(sq.iter().sum::<f64>() / (windows.len() * self.output) as f64)
    }

    pub fn to_doc(&self) -> IcrnnDoc {
        IcrnnDoc {
            kind: "icrnn".into(),
            dims: self.dims(),
            u: self.u.clone(),
            w: self.w.clone(),
            v: self.v.clone(),
            d1: self.d1.clone(),
            d2: self.d2.clone(),
            d3: self.d3.clone(),
            biases: IcrnnBiases {
                hidden: self.b_z.clone(),
                output: self.b_y.clone(),
            },
            n_w: self.n_w,
        }
    }

    pub fn from_doc(doc: IcrnnDoc) -> Result<Self> {
        if doc.kind != "icrnn" {
            return Err(invalid(format!("expected model type \"icrnn\", found {:?}", doc.kind)));
        }
        let mut dims = doc.dims;
        dims.n_w = doc.n_w;
        let template = Self::zeros(dims)?;
        let pairs = [
            (&template.u, &doc.u),
            (&template.w, &doc.w),
            (&template.v, &doc.v),
            (&template.d1, &doc.d1),
            (&template.d2, &doc.d2),
            (&template.d3, &doc.d3),
        ];
        for (t, m) in pairs {
            check_dim("icrnn matrix rows", t.rows(), m.rows())?;
            check_dim("icrnn matrix cols", t.cols(), m.cols())?;
        }
        check_dim("icrnn hidden bias", dims.hidden, doc.biases.hidden.len())?;
        check_dim("icrnn output bias", dims.output, doc.biases.output.len())?;
        if doc.biases.hidden.iter().chain(&doc.biases.output).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("icrnn bias"));
        }
        Ok(Self {
            state_dim: dims.state_dim,
            input_dim: dims.d,
            hidden: dims.hidden,
            output: dims.output,
            n_w: dims.n_w,
            u: doc.u,
            w: doc.w,
            v: doc.v,
            d1: doc.d1,
            d2: doc.d2,
            d3: doc.d3,
            b_z: doc.biases.hidden,
            b_y: doc.biases.output,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&self.to_doc())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(crate::json::from_str(s)?)
    }
}

fn residual(o: &[f64], t: &[f64], scale: f64) -> (Vec<f64>, f64) {
    let mut sq = 0.0;
    let d = o
        .iter()
        .zip(t)
        .map(|(a, b)| {
            sq += (a - b) * (a - b);
            2.0 * (a - b) * scale
        })
        .collect();
    (d, sq)
}

fn outer_into(g: &mut [f64], rows: &[f64], cols: &[f64]) {
    let n = cols.len();
    for (r, &dr) in rows.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        for (a, &c) in g[r * n..(r + 1) * n].iter_mut().zip(cols) {
            *a += dr * c;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IcrnnBiases {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

/// On-disk form `{type:"icrnn", dims, U, W, V, D1, D2, D3, biases, n_w}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IcrnnDoc {
    #[serde(rename = "type")]
    pub kind: String,
    pub dims: IcrnnDims,
    #[serde(rename = "U")]
    pub u: Matrix,
    #[serde(rename = "W")]
    pub w: Matrix,
    #[serde(rename = "V")]
    pub v: Matrix,
    #[serde(rename = "D1")]
    pub d1: Matrix,
    #[serde(rename = "D2")]
    pub d2: Matrix,
    #[serde(rename = "D3")]
    pub d3: Matrix,
    pub biases: IcrnnBiases,
    pub n_w: usize,
}

/// Windows of `n_w + 1` frames with one target for the last frame.
#[derive(Clone, Debug, Default)]
pub struct WindowData {
    pub state_dim: usize,
    pub windows: Vec<Vec<Vec<f64>>>,
    pub targets: Vec<Vec<f64>>,
}

impl WindowData {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct IcrnnTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for IcrnnTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 30,
            lr: 1e-3,
            batch: 512,
            seed: 0,
        }
    }
}

pub fn train_icrnn(data: &WindowData, config: &IcrnnTrainConfig) -> Result<TrainReport<IcrnnModel>> {
    if data.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    if !(config.lr > 0.0) {
        return Err(invalid(format!("learning rate must be positive, got {}", config.lr)));
    }
    if config.batch == 0 {
        return Err(invalid("batch size must be positive"));
    }
    check_dim("training targets", data.windows.len(), data.targets.len())?;
    let frame = data.windows[0].first().map_or(0, Vec::len);
    if data.state_dim > frame {
        return Err(invalid("state block larger than frame"));
    }
    let dims = IcrnnDims {
        state_dim: data.state_dim,
        d: frame - data.state_dim,
        hidden: config.hidden,
        output: data.targets[0].len(),
        n_w: data.windows[0].len().saturating_sub(1),
    };
    let mut rng = RngStream::new(config.seed, 0);
    let mut model = IcrnnModel::random(dims, &mut rng)?;
    let mut shuffle = RngStream::new(config.seed, 1);
    let mut params = model.params();
    let n_con = model.constrained_len();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch) {
            let ws: Vec<Vec<Vec<f64>>> = chunk.iter().map(|&i| data.windows[i].clone()).collect();
            let ts: Vec<Vec<f64>> = chunk.iter().map(|&i| data.targets[i].clone()).collect();
            let (loss, grad) = model.window_loss_grad(&ws, &ts)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut params, &grad, config.lr);
            for p in &mut params[..n_con] {
                if *p < 0.0 {
                    *p = 0.0;
                }
            }
            model.set_params(&params)?;
        }
        history.push(total / data.len() as f64);
    }
    Ok(TrainReport {
        model,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, relative_error, seeded_stream};

    fn dims(state: usize, d: usize, hidden: usize, n_w: usize) -> IcrnnDims {
        IcrnnDims {
            state_dim: state,
            d,
            hidden,
            output: 1,
            n_w,
        }
    }

    fn random_model(seed: u64, dm: IcrnnDims) -> IcrnnModel {
        let mut rng = seeded_stream(seed, 0);
        let mut m = IcrnnModel::random(dm, &mut rng).unwrap();
        for b in m.b_z.iter_mut().chain(m.b_y.iter_mut()) {
            *b = rng.gaussian(0.0, 0.3);
        }
        // scale up so the hidden units switch inside the sampled box
        for mat in m.mats_mut() {
            for x in mat.data_mut() {
                *x *= 4.0;
            }
        }
        m
    }

    fn rand_frames(rng: &mut RngStream, l: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..l).map(|_| rng.uniform_vec(&vec![-1.0; dim], &vec![1.0; dim])).collect()
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = IcrnnModel::zeros(dims(1, 2, 4, 3)).unwrap();
        let mut rng = seeded_stream(0, 0);
        let f = rand_frames(&mut rng, 5, 3);
        assert!(m.outputs(&f).unwrap().iter().all(|y| y == &vec![0.0]));
        let (_, g) = m.bptt(std::slice::from_ref(&f), &[vec![vec![0.0]; 5]], None).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        let ga = m.grad_actions(&f.iter().map(|x| vec![x[0]]).collect::<Vec<_>>(), &f.iter().map(|x| x[1..].to_vec()).collect::<Vec<_>>()).unwrap();
        assert!(ga.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn length_one_matches_feedforward() {
        let m = random_model(3, dims(1, 1, 3, 2));
        let x = vec![0.4, -0.3];
        let y = m.outputs(std::slice::from_ref(&x)).unwrap()[0][0];
        let raw = [0.4, -0.3, 0.3];
        let z: Vec<f64> = (0..3)
            .map(|h| relu_scalar(m.b_z[h] + (0..3).map(|c| m.u.get(h, c) * raw[c]).sum::<f64>()))
            .collect();
        let expect = m.b_y[0] + (0..3).map(|h| m.v.get(0, h) * z[h]).sum::<f64>() + (0..3).map(|c| m.d3.get(0, c) * raw[c]).sum::<f64>();
        assert!((y - expect).abs() < 1e-14);
    }

    #[test]
    fn errors_on_empty_and_ragged() {
        let m = random_model(4, dims(0, 1, 2, 2));
        assert!(m.outputs(&[]).is_err());
        assert!(m.outputs(&[vec![1.0, 2.0]]).is_err());
        let a = vec![vec![0.1], vec![0.2]];
        let b = vec![vec![0.1]];
        assert!(m
            .bptt(&[a, b], &[vec![vec![0.0]; 2], vec![vec![0.0]; 1]], None)
            .is_err());
    }

    #[test]
    fn unrolled_output_is_midpoint_convex() {
        let m = random_model(5, dims(0, 2, 6, 4));
        let mut rng = seeded_stream(6, 0);
        let t = 4;
        for _ in 0..10_000 {
            let a = rand_frames(&mut rng, t, 2);
            let b = rand_frames(&mut rng, t, 2);
            let mid: Vec<Vec<f64>> = a
                .iter()
                .zip(&b)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect())
                .collect();
            let f = |s: &[Vec<f64>]| m.outputs(s).unwrap()[t - 1][0];
            assert!(f(&mid) <= 0.5 * (f(&a) + f(&b)) + 1e-8);
        }
    }

    #[test]
    fn raw_map_is_monotone_in_states() {
        let m = random_model(15, dims(2, 1, 5, 3));
        let mut rng = seeded_stream(16, 0);
        for _ in 0..1000 {
            let a = rand_frames(&mut rng, 4, 3);
            let b: Vec<Vec<f64>> = a
                .iter()
                .map(|f| vec![f[0] + rng.uniform(0.0, 0.5), f[1] + rng.uniform(0.0, 0.5), f[2]])
                .collect();
            let ya = m.outputs(&a).unwrap();
            let yb = m.outputs(&b).unwrap();
            for (p, q) in ya.iter().zip(&yb) {
                assert!(q[0] >= p[0] - 1e-12);
            }
        }
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let m = random_model(7, dims(1, 1, 4, 5));
        let mut rng = seeded_stream(8, 0);
        let seqs: Vec<Vec<Vec<f64>>> = (0..3).map(|_| rand_frames(&mut rng, 5, 2)).collect();
        let tgts: Vec<Vec<Vec<f64>>> = (0..3).map(|_| rand_frames(&mut rng, 5, 1)).collect();
        let (_, g) = m.bptt(&seqs, &tgts, None).unwrap();
        let fd = finite_difference_gradient(
            |p| {
                let mut mm = m.clone();
                mm.set_params(p).unwrap();
                mm.bptt(&seqs, &tgts, None).unwrap().0
            },
            &m.params(),
            1e-5,
        )
        .unwrap();
        assert!(relative_error(&g, &fd, 1e-6) < 1e-4, "{}", relative_error(&g, &fd, 1e-6));
    }

    #[test]
    fn truncation_covering_sequence_equals_full() {
        let m = random_model(9, dims(1, 1, 4, 5));
        let mut rng = seeded_stream(10, 0);
        let seqs: Vec<Vec<Vec<f64>>> = (0..2).map(|_| rand_frames(&mut rng, 5, 2)).collect();
        let tgts: Vec<Vec<Vec<f64>>> = (0..2).map(|_| rand_frames(&mut rng, 5, 1)).collect();
        let (_, full) = m.bptt(&seqs, &tgts, None).unwrap();
        let (_, trunc) = m.bptt(&seqs, &tgts, Some(5)).unwrap();
        assert_eq!(full, trunc);
        let (_, short) = m.bptt(&seqs, &tgts, Some(1)).unwrap();
        assert_ne!(full, short);
    }

    #[test]
    fn action_gradient_matches_finite_differences_and_is_causal() {
        let m = random_model(11, dims(1, 2, 5, 6));
        let mut rng = seeded_stream(12, 0);
        let states = rand_frames(&mut rng, 6, 1);
        let actions = rand_frames(&mut rng, 6, 2);
        let g = m.grad_actions(&states, &actions).unwrap();
        let flat: Vec<f64> = actions.iter().flatten().copied().collect();
        let total = |p: &[f64]| {
            let acts: Vec<Vec<f64>> = p.chunks(2).map(<[f64]>::to_vec).collect();
            let frames: Vec<Vec<f64>> = states.iter().zip(&acts).map(|(s, a)| [s.clone(), a.clone()].concat()).collect();
            m.outputs(&frames).unwrap().iter().map(|y| y[0]).sum::<f64>()
        };
        let fd = finite_difference_gradient(total, &flat, 1e-5).unwrap();
        let gf: Vec<f64> = g.iter().flatten().copied().collect();
        assert!(relative_error(&gf, &fd, 1e-6) < 1e-4);

        // y_t cannot depend on u_τ for τ > t
        let frames: Vec<Vec<f64>> = states.iter().zip(&actions).map(|(s, a)| [s.clone(), a.clone()].concat()).collect();
        for t in 0..6 {
            let mut seed = vec![vec![0.0]; 6];
            seed[t] = vec![1.0];
            let (_, gr) = m.input_vjp(&frames, &seed).unwrap();
            for later in gr.iter().skip(t + 1) {
                assert!(later.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let m = random_model(13, dims(2, 1, 3, 4));
        let back = IcrnnModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
