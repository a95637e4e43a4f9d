//! Input-convex feedforward networks.
//!
//! The network sees the expanded input `x̂ = [s; u; -u]`, where `s` is an
//! optional block of state coordinates that is passed through unexpanded and
//! `u` is the decision variable. With every layer weight `W_i` and every
//! passthrough weight `D_i` nonnegative and ReLU hidden activations, the output
//! is convex and nondecreasing in `x̂`, hence convex in `u`.
//!
//! ```text
//! z_1 = relu(W_1 x̂ + b_1)
//! z_i = relu(W_i z_{i-1} + D_i x̂ + b_i)      2 <= i < k
//! y   =      W_k z_{k-1} + D_k x̂ + b_k
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::numeric::{relu_grad, relu_scalar, Adam, Matrix, RngStream};

/// A decision vector together with its negation.
///
/// `v` is always derived from `u`; there is no way to build one with an
/// inconsistent negation.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandedInput {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl ExpandedInput {
    pub fn new(u: &[f64]) -> Self {
        Self {
            u: u.to_vec(),
            v: u.iter().map(|x| -x).collect(),
        }
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// `[u; v]`
    pub fn concat(&self) -> Vec<f64> {
        let mut out = self.u.clone();
        out.extend_from_slice(&self.v);
        out
    }
}

/// Writes `[plain; x; -x]` into `out`.
pub(crate) fn expand_into(plain: &[f64], x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(plain);
    out.extend_from_slice(x);
    out.extend(x.iter().map(|v| -v));
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcnnLayer {
    pub w: Matrix,
    pub d: Option<Matrix>,
    pub b: Vec<f64>,
}

impl IcnnLayer {
    fn out_dim(&self) -> usize {
        self.b.len()
    }

    fn param_count(&self) -> usize {
        self.w.data().len() + self.d.as_ref().map_or(0, |d| d.data().len()) + self.b.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcnnModel {
    state_dim: usize,
    input_dim: usize,
    layers: Vec<IcnnLayer>,
}

struct Trace {
    raw: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl IcnnModel {
    /// Builds a model from explicit layers, checking shapes and finiteness.
    ///
    /// Weight signs are not checked here so that corrupted models can be loaded
    /// and rejected by the verification suites; see [`IcnnModel::is_nonnegative`].
    pub fn from_layers(state_dim: usize, input_dim: usize, layers: Vec<IcnnLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("icnn layers"));
        }
        let raw = state_dim + 2 * input_dim;
        let mut prev = raw;
        for (i, layer) in layers.iter().enumerate() {
            let out = layer.out_dim();
            if out == 0 {
                return Err(invalid(format!("icnn layer {i} has zero width")));
            }
            check_dim("icnn W rows", out, layer.w.rows())?;
            check_dim("icnn W cols", prev, layer.w.cols())?;
            match (&layer.d, i) {
                (Some(_), 0) => return Err(invalid("icnn first layer cannot have a passthrough")),
                (None, 0) => {}
                (None, _) => return Err(invalid(format!("icnn layer {i} is missing its passthrough"))),
                (Some(d), _) => {
                    check_dim("icnn D rows", out, d.rows())?;
                    check_dim("icnn D cols", raw, d.cols())?;
                }
            }
            if layer.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("icnn bias"));
            }
            prev = out;
        }
        Ok(Self {
            state_dim,
            input_dim,
            layers,
        })
    }

    /// All-zero model. `widths` lists every layer width including the output.
    pub fn zeros(state_dim: usize, input_dim: usize, widths: &[usize]) -> Result<Self> {
        let raw = state_dim + 2 * input_dim;
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = raw;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(IcnnLayer {
                w: Matrix::zeros(w, prev),
                d: (i > 0).then(|| Matrix::zeros(w, raw)),
                b: vec![0.0; w],
            });
            prev = w;
        }
        Self::from_layers(state_dim, input_dim, layers)
    }

    /// Weights drawn as `|N(0, 1/fan_in)|`, biases zero.
    pub fn random(state_dim: usize, input_dim: usize, widths: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut model = Self::zeros(state_dim, input_dim, widths)?;
        for layer in &mut model.layers {
            let fan_in = layer.w.cols().max(1) as f64;
            for v in layer.w.data_mut() {
                *v = rng.gaussian(0.0, 1.0 / fan_in).abs();
            }
            if let Some(d) = &mut layer.d {
                let fan_in = d.cols().max(1) as f64;
                for v in d.data_mut() {
                    *v = rng.gaussian(0.0, 1.0 / fan_in).abs();
                }
            }
        }
        Ok(model)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Length of the unexpanded argument `[s; u]`.
    pub fn arg_dim(&self) -> usize {
        self.state_dim + self.input_dim
    }

    pub fn raw_dim(&self) -> usize {
        self.state_dim + 2 * self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, IcnnLayer::out_dim)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(IcnnLayer::out_dim).collect()
    }

    pub fn layers(&self) -> &[IcnnLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [IcnnLayer] {
        &mut self.layers
    }

    /// Number of ReLU units (all hidden widths).
    pub fn relu_count(&self) -> usize {
        self.layers[..self.layers.len() - 1].iter().map(IcnnLayer::out_dim).sum()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.min_constrained_weight() >= 0.0
    }

    pub fn min_constrained_weight(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.min_value().min(l.d.as_ref().map_or(f64::INFINITY, Matrix::min_value)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Location `(layer, "W"|"D", row, col, value)` of the most negative constrained weight.
    pub fn most_negative_weight(&self) -> Option<(usize, &'static str, usize, usize, f64)> {
        let mut best: Option<(usize, &'static str, usize, usize, f64)> = None;
        let mut visit = |li: usize, name: &'static str, m: &Matrix| {
            for r in 0..m.rows() {
                for c in 0..m.cols() {
                    let v = m.get(r, c);
                    if v < 0.0 && best.is_none_or(|b| v < b.4) {
                        best = Some((li, name, r, c, v));
                    }
                }
            }
        };
        for (li, l) in self.layers.iter().enumerate() {
            visit(li, "W", &l.w);
            if let Some(d) = &l.d {
                visit(li, "D", d);
            }
        }
        best
    }

    /// Clamps every constrained weight to `max(w, 0)`; biases are untouched.
    pub fn project_nonnegative(&mut self) {
        for l in &mut self.layers {
            l.w.clamp_min(0.0);
            if let Some(d) = &mut l.d {
                d.clamp_min(0.0);
            }
        }
    }

    pub fn projected(mut self) -> Self {
        self.project_nonnegative();
        self
    }

    fn expand(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("icnn input", self.arg_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("icnn input"));
        }
        let mut raw = Vec::with_capacity(self.raw_dim());
        expand_into(&x[..self.state_dim], &x[self.state_dim..], &mut raw);
        Ok(raw)
    }

    fn trace(&self, raw: Vec<f64>) -> Trace {
        let k = self.layers.len();
        let mut pre = Vec::with_capacity(k);
        let mut act: Vec<Vec<f64>> = Vec::with_capacity(k);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut p = layer.b.clone();
            if i == 0 {
                layer.w.gemv_acc(&raw, &mut p);
            } else {
                layer.w.gemv_acc(&act[i - 1], &mut p);
                if let Some(d) = &layer.d {
                    d.gemv_acc(&raw, &mut p);
                }
            }
            let a = if i + 1 == k {
                p.clone()
            } else {
                p.iter().map(|&v| relu_scalar(v)).collect()
            };
            pre.push(p);
            act.push(a);
        }
        Trace { raw, pre, act }
    }

    /// Evaluates the network at `x = [s; u]` (just `u` when there is no state block).
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let raw = self.expand(x)?;
        Ok(self.trace(raw).act.pop().unwrap_or_default())
    }

    /// Evaluates the network on an already expanded input of length [`raw_dim`](Self::raw_dim),
    /// treating every coordinate as free.
    pub fn forward_raw(&self, raw: &[f64]) -> Result<Vec<f64>> {
        check_dim("icnn raw input", self.raw_dim(), raw.len())?;
        Ok(self.trace(raw.to_vec()).act.pop().unwrap_or_default())
    }

    /// Smallest |pre-activation| of any hidden unit at `x`; the network is
    /// differentiable at `x` when this is positive.
    pub fn kink_distance(&self, x: &[f64]) -> Result<f64> {
        let tr = self.trace(self.expand(x)?);
        let hidden = &tr.pre[..tr.pre.len() - 1];
        Ok(hidden.iter().flatten().fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }

    /// Scalar convenience for single-output models.
    pub fn eval_scalar(&self, x: &[f64]) -> Result<f64> {
        check_dim("icnn scalar output", 1, self.output_dim())?;
        Ok(self.forward(x)?[0])
    }

    /// Reverse pass. Accumulates parameter gradients into `grad` (flat layout of
    /// [`params`](Self::params)) when given and returns `dL/d raw`.
    fn backward(&self, tr: &Trace, d_out: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let k = self.layers.len();
        let offsets = self.param_offsets();
        let mut d_raw = vec![0.0; tr.raw.len()];
        let mut delta = d_out.to_vec();
        for i in (0..k).rev() {
            let layer = &self.layers[i];
            if i + 1 != k {
                for (d, &p) in delta.iter_mut().zip(&tr.pre[i]) {
                    *d *= relu_grad(p);
                }
            }
            let input: &[f64] = if i == 0 { &tr.raw } else { &tr.act[i - 1] };
            if let Some(g) = grad.as_deref_mut() {
                let mut off = offsets[i];
                add_outer_flat(&mut g[off..off + layer.w.data().len()], &delta, input);
                off += layer.w.data().len();
                if let Some(d) = &layer.d {
                    add_outer_flat(&mut g[off..off + d.data().len()], &delta, &tr.raw);
                    off += d.data().len();
                }
                for (gb, &dv) in g[off..off + layer.b.len()].iter_mut().zip(&delta) {
                    *gb += dv;
                }
            }
            if let Some(d) = &layer.d {
                d.gemv_t_acc(&delta, &mut d_raw);
            }
            if i == 0 {
                layer.w.gemv_t_acc(&delta, &mut d_raw);
            } else {
                let mut next = vec![0.0; layer.w.cols()];
                layer.w.gemv_t_acc(&delta, &mut next);
                delta = next;
            }
        }
        d_raw
    }

    /// Folds a gradient over `[s; u; -u]` back onto `[s; u]`.
    fn fold(&self, d_raw: &[f64]) -> Vec<f64> {
        let s = self.state_dim;
        let d = self.input_dim;
        let mut out = d_raw[..s].to_vec();
        out.extend((0..d).map(|j| d_raw[s + j] - d_raw[s + d + j]));
        out
    }

    /// Vector-Jacobian product at `x`: returns `(f(x), d_out^T ∂f/∂x)` over the
    /// unexpanded argument.
    pub fn input_vjp(&self, x: &[f64], d_out: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_dim("icnn output adjoint", self.output_dim(), d_out.len())?;
        let tr = self.trace(self.expand(x)?);
        let d_raw = self.backward(&tr, d_out, None);
        let y = tr.act.last().cloned().unwrap_or_default();
        Ok((y, self.fold(&d_raw)))
    }

    /// `∂f/∂u` (and `∂f/∂s` for the state block) of a single-output model.
    ///
    /// The two halves of the expanded input contribute `g_u - g_v` through the
    /// chain rule on `v = -u`.
    pub fn grad_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("icnn scalar output", 1, self.output_dim())?;
        Ok(self.input_vjp(x, &[1.0])?.1)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(IcnnLayer::param_count).sum()
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut acc = 0;
        for l in &self.layers {
            offs.push(acc);
            acc += l.param_count();
        }
        offs
    }

    /// Flat parameters: per layer `W` row-major, then `D`, then `b`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.w.data());
            if let Some(d) = &l.d {
                out.extend_from_slice(d.data());
            }
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim("icnn parameter vector", self.param_count(), p.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.w.data().len();
            l.w.data_mut().copy_from_slice(&p[off..off + n]);
            off += n;
            if let Some(d) = &mut l.d {
                let n = d.data().len();
                d.data_mut().copy_from_slice(&p[off..off + n]);
                off += n;
            }
            let n = l.b.len();
            l.b.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// `true` for entries of [`params`](Self::params) that must stay nonnegative.
    pub fn constrained_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(std::iter::repeat_n(true, l.w.data().len()));
            if let Some(d) = &l.d {
                out.extend(std::iter::repeat_n(true, d.data().len()));
            }
            out.extend(std::iter::repeat_n(false, l.b.len()));
        }
        out
    }

    /// Mean squared error over all samples and output coordinates, and its exact
    /// gradient in the flat parameter layout.
    pub fn grad_params(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        if inputs.is_empty() {
            return Err(Error::Empty("icnn batch"));
        }
        check_dim("icnn batch targets", inputs.len(), targets.len())?;
        let m = self.output_dim();
        for (x, y) in inputs.iter().zip(targets) {
            check_dim("icnn input", self.arg_dim(), x.len())?;
            check_dim("icnn target", m, y.len())?;
        }
        let scale = 1.0 / (inputs.len() * m) as f64;
        let np = self.param_count();
        let idx: Vec<usize> = (0..inputs.len()).collect();
        let partials: Vec<(f64, Vec<f64>)> = idx
            .par_chunks(32)
            .map(|chunk| {
                let mut g = vec![0.0; np];
                let mut loss = 0.0;
                for &n in chunk {
                    let tr = self.trace(self.expand(&inputs[n]).unwrap_or_default());
                    let out = tr.act.last().map(Vec::as_slice).unwrap_or(&[]);
                    let d_out: Vec<f64> = out
                        .iter()
                        .zip(&targets[n])
                        .map(|(o, t)| {
                            loss += (o - t) * (o - t);
                            2.0 * (o - t) * scale
                        })
                        .collect();
                    self.backward(&tr, &d_out, Some(&mut g));
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

    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::Empty("icnn evaluation set"));
        }
        let m = self.output_dim();
        let mut sse = 0.0;
        for (x, y) in inputs.iter().zip(targets) {
            check_dim("icnn target", m, y.len())?;
            let out = self.forward(x)?;
            sse += out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        }
        Ok(sse / (inputs.len() * m) as f64)
    }

    pub fn to_doc(&self) -> IcnnDoc {
        IcnnDoc {
            kind: "icnn".into(),
            d: self.input_dim,
            state_dim: self.state_dim,
            widths: self.widths(),
            w: self.layers.iter().map(|l| l.w.clone()).collect(),
            d_pass: self.layers.iter().filter_map(|l| l.d.clone()).collect(),
            b: self.layers.iter().map(|l| l.b.clone()).collect(),
        }
    }

    pub fn from_doc(doc: IcnnDoc) -> Result<Self> {
        if doc.kind != "icnn" {
            return Err(invalid(format!("expected model type \"icnn\", found {:?}", doc.kind)));
        }
        let k = doc.widths.len();
        check_dim("icnn W list", k, doc.w.len())?;
        check_dim("icnn b list", k, doc.b.len())?;
        check_dim("icnn D list", k.saturating_sub(1), doc.d_pass.len())?;
        let mut d_iter = doc.d_pass.into_iter();
        let layers = doc
            .w
            .into_iter()
            .zip(doc.b)
            .enumerate()
            .map(|(i, (w, b))| IcnnLayer {
                w,
                d: if i == 0 { None } else { d_iter.next() },
                b,
            })
            .collect();
        let model = Self::from_layers(doc.state_dim, doc.d, layers)?;
        if model.widths() != doc.widths {
            return Err(invalid("icnn widths do not match layer shapes"));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&self.to_doc())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_doc(crate::json::from_str(s)?)
    }
}

fn add_outer_flat(g: &mut [f64], rows: &[f64], cols: &[f64]) {
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

/// On-disk form: `{type:"icnn", d, state_dim, widths, W, D, b}` with row-major arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IcnnDoc {
    #[serde(rename = "type")]
    pub kind: String,
    pub d: usize,
    #[serde(default)]
    pub state_dim: usize,
    pub widths: Vec<usize>,
    #[serde(rename = "W")]
    pub w: Vec<Matrix>,
    #[serde(rename = "D")]
    pub d_pass: Vec<Matrix>,
    pub b: Vec<Vec<f64>>,
}

/// Hand-built one-unit model for `|u| = v + 2 relu(u)` with `v = -u`.
pub fn abs_model() -> IcnnModel {
    let layers = vec![
        IcnnLayer {
            w: Matrix::from_rows(&[vec![1.0, 0.0]]).expect("static shape"),
            d: None,
            b: vec![0.0],
        },
        IcnnLayer {
            w: Matrix::from_rows(&[vec![2.0]]).expect("static shape"),
            d: Some(Matrix::from_rows(&[vec![0.0, 1.0]]).expect("static shape")),
            b: vec![0.0],
        },
    ];
    IcnnModel::from_layers(0, 1, layers).expect("static model")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden widths; the output width comes from the targets.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 32],
            epochs: 100,
            lr: 1e-3,
            batch: 512,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport<M> {
    pub model: M,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Inputs `[s; u]` and targets for regression.
#[derive(Clone, Debug, Default)]
pub struct RegressionData {
    pub state_dim: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl RegressionData {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Self {
        Self {
            state_dim: 0,
            inputs,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Adam on the MSE followed by projection onto nonnegative weights after every step.
pub fn train_icnn(data: &RegressionData, config: &TrainConfig) -> Result<TrainReport<IcnnModel>> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if !(config.lr > 0.0) {
        return Err(invalid(format!("learning rate must be positive, got {}", config.lr)));
    }
    if config.batch == 0 {
        return Err(invalid("batch size must be positive"));
    }
    check_dim("training targets", data.inputs.len(), data.targets.len())?;
    let arg = data.inputs[0].len();
    if data.state_dim > arg {
        return Err(invalid("state block larger than input"));
    }
    let out_dim = data.targets[0].len();
    let mut widths = config.widths.clone();
    widths.push(out_dim);
    let mut init_rng = RngStream::new(config.seed, 0);
    let model = IcnnModel::random(data.state_dim, arg - data.state_dim, &widths, &mut init_rng)?;
    fit_icnn(model, data, config)
}

/// Continues training an existing model.
pub fn fit_icnn(mut model: IcnnModel, data: &RegressionData, config: &TrainConfig) -> Result<TrainReport<IcnnModel>> {
    if data.is_empty() {
        return Err(Error::Empty("training data"));
    }
    if !(config.lr > 0.0) {
        return Err(invalid(format!("learning rate must be positive, got {}", config.lr)));
    }
    let mut shuffle_rng = RngStream::new(config.seed, 1);
    let mut params = model.params();
    let mask = model.constrained_mask();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let batch = config.batch.max(1);
    for _ in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| data.inputs[i].clone()).collect();
            let ys: Vec<Vec<f64>> = chunk.iter().map(|&i| data.targets[i].clone()).collect();
            let (loss, grad) = model.grad_params(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            epoch_loss += loss * chunk.len() as f64;
            adam.step(&mut params, &grad, config.lr);
            for (p, &c) in params.iter_mut().zip(&mask) {
                if c && *p < 0.0 {
                    *p = 0.0;
                }
            }
            model.set_params(&params)?;
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(TrainReport {
        model,
        loss_history: history,
    })
}

/// Trains a logit model on `{0,1}` labels with squared loss; sublevel sets of
/// the logit are convex.
pub fn classify_circles(points: &[[f64; 2]], labels: &[u8], config: &TrainConfig) -> Result<IcnnModel> {
    check_dim("circle labels", points.len(), labels.len())?;
    if labels.iter().any(|&l| l > 1) {
        return Err(invalid("labels must be 0 or 1"));
    }
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == labels.len() {
        return Err(invalid("classifier needs both classes in the training data"));
    }
    let data = RegressionData::new(
        points.iter().map(|p| p.to_vec()).collect(),
        labels.iter().map(|&l| vec![f64::from(l)]).collect(),
    );
    Ok(train_icnn(&data, config)?.model)
}
