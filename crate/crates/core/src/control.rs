//! Convex optimization over network inputs: single-shot minimization of an
//! ICNN and receding-horizon MPC through learned or exact dynamics.
//!
//! Time indexing over a horizon of `T` steps: frames `x_τ = [s_τ; e_τ; u_τ]`
//! for `τ = 0..T`, where `s_0` is measured and later states are predicted.
//! The output `y_τ` and the next state `s_{τ+1}` are both read from the window
//! of frames `τ - n_w ..= τ`; frames before 0 come from the realized history.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::icnn::{IcnnDoc, IcnnModel, RegressionData};
use crate::icrnn::{IcrnnDoc, IcrnnModel, WindowData};
use crate::numeric::{least_squares, relu_scalar, Adam, Matrix, RngStream};
use crate::plants::{Plant, RcThermal, TouProfile};
use crate::sysid::{run_rollout, ModelNormalization, Rollout};

/// A realized (unnormalized) frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawFrame {
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
}

/// Everything known at solve time besides the decision variables.
#[derive(Clone, Debug, Default)]
pub struct HorizonContext {
    /// Past frames, oldest first.
    pub history: Vec<RawFrame>,
    pub s0: Vec<f64>,
    /// Exogenous inputs `e_0..e_{T-1}`.
    pub exogenous: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `s_1..s_T`.
    pub states: Vec<Vec<f64>>,
    /// `y_0..y_{T-1}`.
    pub outputs: Vec<Vec<f64>>,
}

pub trait HorizonModel: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn exo_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Past frames each prediction looks at.
    fn memory(&self) -> usize;
    fn predict(&self, ctx: &HorizonContext, actions: &[Vec<f64>]) -> Result<Prediction>;
    /// Gradient with respect to every action given adjoints on the predicted
    /// states (`s_1..s_T`) and outputs.
    fn vjp(&self, ctx: &HorizonContext, actions: &[Vec<f64>], d_states: &[Vec<f64>], d_outputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;
}

fn check_ctx(m: &dyn HorizonModel, ctx: &HorizonContext, actions: &[Vec<f64>]) -> Result<()> {
    check_dim("initial state", m.state_dim(), ctx.s0.len())?;
    if ctx.exogenous.len() < actions.len() {
        return Err(invalid(format!(
            "exogenous forecast covers {} steps, horizon is {}",
            ctx.exogenous.len(),
            actions.len()
        )));
    }
    for (u, e) in actions.iter().zip(&ctx.exogenous) {
        check_dim("action", m.action_dim(), u.len())?;
        check_dim("exogenous input", m.exo_dim(), e.len())?;
    }
    Ok(())
}

// ---------------------------------------------------------------- plant oracle

/// The plant's own equations used as the prediction model.
pub struct PlantModel<'a> {
    pub plant: &'a dyn Plant,
}

impl HorizonModel for PlantModel<'_> {
    fn state_dim(&self) -> usize {
        self.plant.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.plant.action_dim()
    }
    fn exo_dim(&self) -> usize {
        self.plant.exo_dim()
    }
    fn output_dim(&self) -> usize {
        self.plant.output_dim()
    }
    fn memory(&self) -> usize {
        0
    }
    fn predict(&self, ctx: &HorizonContext, actions: &[Vec<f64>]) -> Result<Prediction> {
        check_ctx(self, ctx, actions)?;
        let mut s = ctx.s0.clone();
        let mut p = Prediction {
            states: Vec::with_capacity(actions.len()),
            outputs: Vec::with_capacity(actions.len()),
        };
        for (u, e) in actions.iter().zip(&ctx.exogenous) {
            let (sn, y) = self.plant.step(&s, u, e);
            p.states.push(sn.clone());
            p.outputs.push(y);
            s = sn;
        }
        Ok(p)
    }
    fn vjp(&self, ctx: &HorizonContext, actions: &[Vec<f64>], d_states: &[Vec<f64>], d_outputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let p = self.predict(ctx, actions)?;
        let t = actions.len();
        let mut du = vec![Vec::new(); t];
        if t == 0 {
            return Ok(du);
        }
        let mut adj = d_states[t - 1].clone();
        for tau in (0..t).rev() {
            let s = if tau == 0 { &ctx.s0 } else { &p.states[tau - 1] };
            let (ds, g) = self.plant.step_vjp(s, &actions[tau], &ctx.exogenous[tau], &adj, &d_outputs[tau]);
            du[tau] = g;
            if tau > 0 {
                adj = ds.iter().zip(&d_states[tau - 1]).map(|(a, b)| a + b).collect();
            }
        }
        Ok(du)
    }
}

// ---------------------------------------------------------------- learned nets

/// Affine map `θ [x; 1]`, the linear resistor-circuit style baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearNet {
    pub theta: Matrix,
}

impl LinearNet {
    /// Least-squares fit of `targets ≈ θ [inputs; 1]`.
    pub fn fit(inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::Empty("linear fit data"));
        }
        check_dim("linear fit targets", n, targets.len())?;
        let d = inputs[0].len();
        let o = targets[0].len();
        let mut rows = Vec::with_capacity(n * (d + 1));
        for x in inputs {
            check_dim("linear fit input", d, x.len())?;
            rows.extend_from_slice(x);
            rows.push(1.0);
        }
        let a = Matrix::from_row_major(n, d + 1, rows)?;
        if n < d + 1 {
            return Err(Error::Singular(format!("{n} samples cannot determine {} coefficients", d + 1)));
        }
        let mut theta = Matrix::zeros(o, d + 1);
        for j in 0..o {
            let b: Vec<f64> = targets.iter().map(|t| t[j]).collect();
            let c = least_squares(&a, &b)?;
            for (k, v) in c.into_iter().enumerate() {
                theta.set(j, k, v);
            }
        }
        Ok(Self { theta })
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let d = self.theta.cols() - 1;
        (0..self.theta.rows())
            .map(|j| {
                let row = self.theta.row(j);
                row[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[d]
            })
            .collect()
    }
}

/// The network families usable as `f` or `g`.
#[derive(Clone, Debug, PartialEq)]
pub enum Net {
    Icnn(IcnnModel),
    Icrnn(IcrnnModel),
    Linear(LinearNet),
}

impl Net {
    pub fn memory(&self) -> usize {
        match self {
            Net::Icrnn(m) => m.memory_window(),
            _ => 0,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Net::Icnn(m) => m.output_dim(),
            Net::Icrnn(m) => m.output_dim(),
            Net::Linear(l) => l.theta.rows(),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Net::Icnn(m) => m.arg_dim(),
            Net::Icrnn(m) => m.arg_dim(),
            Net::Linear(l) => l.theta.cols() - 1,
        }
    }

    /// Output at the last frame of `window`.
    pub fn eval(&self, window: &[Vec<f64>]) -> Result<Vec<f64>> {
        let last = window.last().ok_or(Error::Empty("window"))?;
        match self {
            Net::Icnn(m) => m.forward(last),
            Net::Icrnn(m) => m.window_output(&window[window.len() - m.memory_window().min(window.len() - 1) - 1..]),
            Net::Linear(l) => {
                check_dim("linear input", l.theta.cols() - 1, last.len())?;
                Ok(l.eval(last))
            }
        }
    }

    /// Output at the last frame and the gradient of `d_out · output` with
    /// respect to each frame of `window`.
    pub fn vjp(&self, window: &[Vec<f64>], d_out: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = window.len();
        let last = window.last().ok_or(Error::Empty("window"))?;
        let mut grads = vec![vec![0.0; last.len()]; n];
        let y = match self {
            Net::Icnn(m) => {
                let (y, g) = m.input_vjp(last, d_out)?;
                grads[n - 1] = g;
                y
            }
            Net::Icrnn(m) => {
                let lo = n - m.memory_window().min(n - 1) - 1;
                let mut seeds = vec![vec![0.0; m.output_dim()]; n - lo];
                seeds[n - lo - 1] = d_out.to_vec();
                let (ys, g) = m.input_vjp(&window[lo..], &seeds)?;
                for (k, gk) in g.into_iter().enumerate() {
                    grads[lo + k] = gk;
                }
                ys.last().cloned().unwrap_or_default()
            }
            Net::Linear(l) => {
                let d = l.theta.cols() - 1;
                check_dim("linear input", d, last.len())?;
                for (j, &dy) in d_out.iter().enumerate() {
                    for (g, &w) in grads[n - 1].iter_mut().zip(&l.theta.row(j)[..d]) {
                        *g += dy * w;
                    }
                }
                l.eval(last)
            }
        };
        Ok((y, grads))
    }

    /// Mean squared error on windowed targets.
    pub fn window_mse(&self, data: &WindowData) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("evaluation windows"));
        }
        let sq: Vec<f64> = data
            .windows
            .par_iter()
            .zip(&data.targets)
            .map(|(w, t)| -> Result<f64> {
                let y = self.eval(w)?;
                Ok(y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(sq.iter().sum::<f64>() / (data.len() * self.out_dim()) as f64)
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Net::Icnn(m) => serde_json::to_value(m.to_doc())?,
            Net::Icrnn(m) => serde_json::to_value(m.to_doc())?,
            Net::Linear(l) => serde_json::json!({"type": "linear", "theta": l.theta}),
        })
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        let kind = v.get("type").and_then(|t| t.as_str()).unwrap_or("").to_string();
        match kind.as_str() {
            "icnn" => Ok(Net::Icnn(IcnnModel::from_doc(serde_json::from_value::<IcnnDoc>(v)?)?)),
            "icrnn" => Ok(Net::Icrnn(IcrnnModel::from_doc(serde_json::from_value::<IcrnnDoc>(v)?)?)),
            "linear" => {
                #[derive(Deserialize)]
                struct Doc {
                    theta: Matrix,
                }
                let d: Doc = serde_json::from_value(v)?;
                if d.theta.cols() == 0 {
                    return Err(invalid("linear model needs at least the bias column"));
                }
                Ok(Net::Linear(LinearNet { theta: d.theta }))
            }
            other => Err(invalid(format!("unknown model type {other:?}"))),
        }
    }
}

/// Output and dynamics networks operating in normalized units, exposed in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedModel {
    pub f: Option<Net>,
    pub g: Net,
    pub norm: ModelNormalization,
}

impl LearnedModel {
    pub fn new(f: Option<Net>, g: Net, norm: ModelNormalization) -> Result<Self> {
        let ns = norm.state.dim();
        let frame = ns + norm.exogenous.dim() + norm.action.dim();
        check_dim("dynamics model input", frame, g.in_dim())?;
        check_dim("dynamics model output", ns, g.out_dim())?;
        if let Some(f) = &f {
            check_dim("output model input", frame, f.in_dim())?;
            check_dim("output model output", norm.output.dim(), f.out_dim())?;
            if f.memory() != g.memory() && f.memory() > 0 && g.memory() > 0 {
                return Err(invalid("output and dynamics models must share the memory window"));
            }
        }
        Ok(Self { f, g, norm })
    }

    fn frames(&self, ctx: &HorizonContext, actions: &[Vec<f64>], states: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nw = self.memory();
        let mut out = Vec::with_capacity(nw + actions.len());
        let hist = &ctx.history[ctx.history.len().saturating_sub(nw)..];
        // short histories are padded with the oldest known frame
        let pad = hist.first().map_or_else(
            || {
                self.norm
                    .frame(&ctx.s0, &ctx.exogenous[0], &vec![0.0; self.norm.action.dim()])
            },
            |h| self.norm.frame(&h.s, &h.e, &h.u),
        );
        for _ in hist.len()..nw {
            out.push(pad.clone());
        }
        out.extend(hist.iter().map(|h| self.norm.frame(&h.s, &h.e, &h.u)));
        for (tau, u) in actions.iter().enumerate() {
            let s = if tau == 0 { &ctx.s0 } else { &states[tau - 1] };
            out.push(self.norm.frame(s, &ctx.exogenous[tau], u));
        }
        out
    }

    pub fn out_dim(&self) -> usize {
        self.f.as_ref().map_or(0, Net::out_dim)
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = serde_json::json!({
            "type": "learned_dynamics",
            "f": match &self.f { Some(f) => f.to_value()?, None => serde_json::Value::Null },
            "g": self.g.to_value()?,
            "normalization": self.norm,
        });
        crate::json::to_string(&doc)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut v: serde_json::Value = crate::json::from_str(s)?;
        if v.get("type").and_then(|t| t.as_str()) != Some("learned_dynamics") {
            return Err(invalid("expected a learned_dynamics document"));
        }
        let norm: ModelNormalization = serde_json::from_value(v["normalization"].take())?;
        let f = match v["f"].take() {
            serde_json::Value::Null => None,
            f => Some(Net::from_value(f)?),
        };
        let g = Net::from_value(v["g"].take())?;
        Self::new(f, g, norm)
    }
}

impl HorizonModel for LearnedModel {
    fn state_dim(&self) -> usize {
        self.norm.state.dim()
    }
    fn action_dim(&self) -> usize {
        self.norm.action.dim()
    }
    fn exo_dim(&self) -> usize {
        self.norm.exogenous.dim()
    }
    fn output_dim(&self) -> usize {
        self.out_dim()
    }
    fn memory(&self) -> usize {
        self.g.memory().max(self.f.as_ref().map_or(0, Net::memory))
    }
    fn predict(&self, ctx: &HorizonContext, actions: &[Vec<f64>]) -> Result<Prediction> {
        check_ctx(self, ctx, actions)?;
        let nw = self.memory();
        let mut p = Prediction {
            states: Vec::with_capacity(actions.len()),
            outputs: Vec::with_capacity(actions.len()),
        };
        let mut frames = self.frames(ctx, &[], &[]);
        for (tau, u) in actions.iter().enumerate() {
            let s = if tau == 0 { &ctx.s0 } else { &p.states[tau - 1] };
            frames.push(self.norm.frame(s, &ctx.exogenous[tau], u));
            let w = &frames[tau..=tau + nw];
            let sn = self.norm.state.denormalize(&self.g.eval(w)?);
            let y = match &self.f {
                Some(f) => self.norm.output.denormalize(&f.eval(w)?),
                None => Vec::new(),
            };
            p.states.push(sn);
            p.outputs.push(y);
        }
        Ok(p)
    }
    fn vjp(&self, ctx: &HorizonContext, actions: &[Vec<f64>], d_states: &[Vec<f64>], d_outputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let p = self.predict(ctx, actions)?;
        let t = actions.len();
        let nw = self.memory();
        let frames = self.frames(ctx, actions, &p.states);
        let ns = self.state_dim();
        let ne = self.exo_dim();
        let s_scale = self.norm.state.scale();
        let u_scale = self.norm.action.scale();
        let y_scale = self.norm.output.scale();
        let mut d_frame = vec![vec![0.0; frames[0].len()]; t];
        let mut d_s: Vec<Vec<f64>> = d_states.to_vec();
        for tau in (0..t).rev() {
            if tau + 1 < t {
                for i in 0..ns {
                    d_s[tau][i] += d_frame[tau + 1][i] * s_scale[i];
                }
            }
            let w = &frames[tau..=tau + nw];
            // raw = lo + (n + 1)(hi - lo)/2, so d raw / d norm = 1 / scale
            let dg: Vec<f64> = d_s[tau].iter().zip(&s_scale).map(|(d, k)| d / k).collect();
            let mut acc = self.g.vjp(w, &dg)?.1;
            if let Some(f) = &self.f {
                let df: Vec<f64> = d_outputs[tau].iter().zip(&y_scale).map(|(d, k)| d / k).collect();
                for (a, b) in acc.iter_mut().zip(f.vjp(w, &df)?.1) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
            for (j, g) in acc.into_iter().enumerate() {
                // frame index in horizon coordinates
                if let Some(k) = (tau + j).checked_sub(nw) {
                    for (x, y) in d_frame[k].iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
        Ok(d_frame
            .into_iter()
            .map(|f| f[ns + ne..].iter().zip(&u_scale).map(|(g, k)| g * k).collect())
            .collect())
    }
}

// ---------------------------------------------------------------- RC baseline

/// Fits linear output and dynamics maps on normalized frames.
pub fn fit_linear_model(rollouts: &[Rollout], norm: &ModelNormalization) -> Result<LearnedModel> {
    let (f, g) = crate::sysid::make_one_step(rollouts, norm)?;
    let lf = LinearNet::fit(&f.inputs, &f.targets)?;
    let lg = LinearNet::fit(&g.inputs, &g.targets)?;
    LearnedModel::new(Some(Net::Linear(lf)), Net::Linear(lg), norm.clone())
}

pub fn regression_rmse(net: &Net, data: &RegressionData) -> Result<f64> {
    let w = WindowData {
        state_dim: data.state_dim,
        windows: data.inputs.iter().map(|x| vec![x.clone()]).collect(),
        targets: data.targets.clone(),
    };
    Ok(net.window_mse(&w)?.sqrt())
}

// ---------------------------------------------------------------- costs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `Σ_j y_τj`.
    SumOutputs,
    /// `λ_τ Σ_j y_τj`.
    PriceWeighted { prices: Vec<f64> },
    /// `λ_τ Σ_j u_τj + Σ_j y_τj`: buy/sell at price plus the output cost.
    Arbitrage { prices: Vec<f64> },
    /// `-(s_{τ+1}[vel_idx] - c ||u_τ / α||²)`.
    NegativeReward { vel_idx: usize, c: f64, alpha: f64 },
    /// `w_s ||s_{τ+1} - target||² + w_u ||u_τ||²`.
    QuadraticTracking {
        target: Vec<f64>,
        state_weight: f64,
        action_weight: f64,
    },
}

/// Which composition rules the cost satisfies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostStructure {
    pub convex_in_u: bool,
    pub nondecreasing_in_y: bool,
    pub nondecreasing_in_s: bool,
}

struct Stage {
    value: f64,
    du: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
}

impl CostSpec {
    pub fn structure(&self) -> CostStructure {
        match self {
            CostSpec::SumOutputs | CostSpec::PriceWeighted { .. } | CostSpec::Arbitrage { .. } => CostStructure {
                convex_in_u: true,
                nondecreasing_in_y: true,
                nondecreasing_in_s: true,
            },
            CostSpec::NegativeReward { .. } | CostSpec::QuadraticTracking { .. } => CostStructure {
                convex_in_u: true,
                nondecreasing_in_y: true,
                nondecreasing_in_s: false,
            },
        }
    }

    fn price(prices: &[f64], tau: usize) -> f64 {
        prices.get(tau).or(prices.last()).copied().unwrap_or(1.0)
    }

    fn stage(&self, tau: usize, u: &[f64], y: &[f64], s_next: &[f64]) -> Stage {
        let mut st = Stage {
            value: 0.0,
            du: vec![0.0; u.len()],
            dy: vec![0.0; y.len()],
            ds: vec![0.0; s_next.len()],
        };
        match self {
            CostSpec::SumOutputs => {
                st.value = y.iter().sum();
                st.dy.fill(1.0);
            }
            CostSpec::PriceWeighted { prices } => {
                let p = Self::price(prices, tau);
                st.value = p * y.iter().sum::<f64>();
                st.dy.fill(p);
            }
            CostSpec::Arbitrage { prices } => {
                let p = Self::price(prices, tau);
                st.value = p * u.iter().sum::<f64>() + y.iter().sum::<f64>();
                st.du.fill(p);
                st.dy.fill(1.0);
            }
            CostSpec::NegativeReward { vel_idx, c, alpha } => {
                let a2 = alpha * alpha;
                st.value = -s_next[*vel_idx] + c * u.iter().map(|x| x * x).sum::<f64>() / a2;
                st.ds[*vel_idx] = -1.0;
                for (d, x) in st.du.iter_mut().zip(u) {
                    *d = 2.0 * c * x / a2;
                }
            }
            CostSpec::QuadraticTracking {
                target,
                state_weight,
                action_weight,
            } => {
                for (i, s) in s_next.iter().enumerate() {
                    let e = s - target.get(i).copied().unwrap_or(0.0);
                    st.value += state_weight * e * e;
                    st.ds[i] = 2.0 * state_weight * e;
                }
                for (d, x) in st.du.iter_mut().zip(u) {
                    st.value += action_weight * x * x;
                    *d = 2.0 * action_weight * x;
                }
            }
        }
        st
    }
}

// ---------------------------------------------------------------- problem

#[derive(Clone, Debug)]
pub struct MpcProblem {
    pub horizon: usize,
    pub cost: CostSpec,
    pub action_lo: Vec<f64>,
    pub action_hi: Vec<f64>,
    pub state_bounds: Option<(Vec<f64>, Vec<f64>)>,
    pub context: HorizonContext,
}

impl MpcProblem {
    pub fn validate(&self, model: &dyn HorizonModel) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        check_dim("action bounds", model.action_dim(), self.action_lo.len())?;
        check_dim("action bounds", model.action_dim(), self.action_hi.len())?;
        if self.action_lo.iter().zip(&self.action_hi).any(|(l, h)| !(l <= h)) {
            return Err(invalid("action box is empty"));
        }
        if let Some((lo, hi)) = &self.state_bounds {
            check_dim("state bounds", model.state_dim(), lo.len())?;
            check_dim("state bounds", model.state_dim(), hi.len())?;
            if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                return Err(invalid("state bounds are not ordered"));
            }
        }
        if self.context.exogenous.len() < self.horizon {
            return Err(invalid("exogenous forecast shorter than the horizon"));
        }
        Ok(())
    }

    fn project(&self, x: &mut [f64]) {
        let m = self.action_lo.len();
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.action_lo[k % m], self.action_hi[k % m]);
        }
    }

    fn unflatten(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.chunks(self.action_lo.len()).map(<[f64]>::to_vec).collect()
    }
}

/// Largest state-bound violation in a predicted trajectory.
fn max_violation(bounds: &Option<(Vec<f64>, Vec<f64>)>, states: &[Vec<f64>]) -> f64 {
    let Some((lo, hi)) = bounds else { return 0.0 };
    states
        .iter()
        .flat_map(|s| s.iter().zip(lo.iter().zip(hi)).map(|(&v, (&l, &h))| relu_scalar(l - v).max(relu_scalar(v - h))))
        .fold(0.0, f64::max)
}

struct Evaluation {
    cost: f64,
    penalized: f64,
    violation: f64,
    grad: Vec<f64>,
    pred: Prediction,
}

fn evaluate(model: &dyn HorizonModel, prob: &MpcProblem, x: &[f64], rho: f64, want_grad: bool) -> Result<Evaluation> {
    let actions = prob.unflatten(x);
    let pred = model.predict(&prob.context, &actions)?;
    let t = prob.horizon;
    let mut cost = 0.0;
    let mut pen = 0.0;
    let mut du_direct = Vec::with_capacity(t);
    let mut d_out = Vec::with_capacity(t);
    let mut d_st = Vec::with_capacity(t);
    for tau in 0..t {
        let st = prob.cost.stage(tau, &actions[tau], &pred.outputs[tau], &pred.states[tau]);
        cost += st.value;
        let mut ds = st.ds;
        if let Some((lo, hi)) = &prob.state_bounds {
            for (i, &v) in pred.states[tau].iter().enumerate() {
                let over = relu_scalar(v - hi[i]);
                let under = relu_scalar(lo[i] - v);
                pen += rho * (over * over + under * under);
                ds[i] += 2.0 * rho * (over - under);
            }
        }
        du_direct.push(st.du);
        d_out.push(st.dy);
        d_st.push(ds);
    }
    let penalized = cost + pen;
    if !penalized.is_finite() {
        return Err(Error::NonFinite("mpc objective"));
    }
    let violation = max_violation(&prob.state_bounds, &pred.states);
    let grad = if want_grad {
        let g = model.vjp(&prob.context, &actions, &d_st, &d_out)?;
        g.iter().zip(&du_direct).flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q)).collect()
    } else {
        Vec::new()
    };
    Ok(Evaluation {
        cost,
        penalized,
        violation,
        grad,
        pred,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Exit once the projected-gradient norm falls below this.
    pub tol: f64,
    /// Starting points tried, in order: warm start (if any), zeros, then random.
    pub restarts: usize,
    /// Base step as a fraction of the action box width.
    pub lr: f64,
    /// Step at iteration k is `lr / (1 + k / lr_decay)`.
    pub lr_decay: f64,
    pub rho: f64,
    /// Penalty rounds; the weight grows ×10 between rounds.
    pub rho_rounds: usize,
    /// Largest state-bound violation accepted without flagging.
    pub violation_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tol: 1e-6,
            restarts: 3,
            lr: 0.05,
            lr_decay: 200.0,
            rho: 10.0,
            rho_rounds: 3,
            violation_tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MpcSolution {
    pub actions: Vec<Vec<f64>>,
    /// Cost without the state penalty.
    pub objective: f64,
    pub penalized: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub predicted_states: Vec<Vec<f64>>,
    pub predicted_outputs: Vec<Vec<f64>>,
    pub max_violation: f64,
    /// Set when the violation exceeds the configured tolerance at exit.
    pub violation_flag: bool,
    pub rho: f64,
}

fn projected_grad_norm(prob: &MpcProblem, x: &[f64], g: &[f64]) -> f64 {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    prob.project(&mut y);
    x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

struct Descent {
    x: Vec<f64>,
    eval: Evaluation,
    iterations: usize,
    grad_norm: f64,
}

/// Projected Adam from `x0`; returns the best iterate seen, `x0` included.
fn descend(model: &dyn HorizonModel, prob: &MpcProblem, x0: Vec<f64>, rho: f64, cfg: &SolverConfig) -> Result<Descent> {
    let m = prob.action_lo.len();
    let width: Vec<f64> = (0..x0.len()).map(|k| (prob.action_hi[k % m] - prob.action_lo[k % m]).max(1e-12)).collect();
    let mut x = x0;
    prob.project(&mut x);
    let mut ev = evaluate(model, prob, &x, rho, true)?;
    let mut best = Descent {
        x: x.clone(),
        grad_norm: projected_grad_norm(prob, &x, &ev.grad),
        eval: evaluate(model, prob, &x, rho, false)?,
        iterations: 0,
    };
    let mut adam = Adam::new(x.len());
    let mut step = vec![0.0; x.len()];
    for k in 0..cfg.max_iters {
        let gn = projected_grad_norm(prob, &x, &ev.grad);
        if gn < cfg.tol {
            best.iterations = k;
            break;
        }
        let lr = cfg.lr / (1.0 + k as f64 / cfg.lr_decay.max(1e-12));
        // Adam works in box-width units so every coordinate moves at the same pace
        step.copy_from_slice(&x);
        let scaled_grad: Vec<f64> = ev.grad.iter().zip(&width).map(|(g, w)| g * w).collect();
        let mut z: Vec<f64> = x.iter().zip(&width).map(|(a, w)| a / w).collect();
        adam.step(&mut z, &scaled_grad, lr);
        for ((xi, zi), w) in x.iter_mut().zip(&z).zip(&width) {
            *xi = zi * w;
        }
        prob.project(&mut x);
        ev = evaluate(model, prob, &x, rho, true)?;
        best.iterations = k + 1;
        if ev.penalized < best.eval.penalized {
            best.grad_norm = projected_grad_norm(prob, &x, &ev.grad);
            best.x = x.clone();
            best.eval = Evaluation {
                cost: ev.cost,
                penalized: ev.penalized,
                violation: ev.violation,
                grad: Vec::new(),
                pred: ev.pred.clone(),
            };
        }
    }
    Ok(best)
}

fn solve_from(model: &dyn HorizonModel, prob: &MpcProblem, x0: Vec<f64>, cfg: &SolverConfig) -> Result<MpcSolution> {
    let mut rho = cfg.rho;
    let mut x = x0;
    let mut iters = 0;
    let rounds = if prob.state_bounds.is_some() { cfg.rho_rounds.max(1) } else { 1 };
    let mut last = None;
    for round in 0..rounds {
        let d = descend(model, prob, x, rho, cfg)?;
        iters += d.iterations;
        x = d.x.clone();
        let done = d.eval.violation <= cfg.violation_tol;
        last = Some(d);
        if done || round + 1 == rounds {
            break;
        }
        rho *= 10.0;
    }
    let d = last.expect("at least one round");
    Ok(MpcSolution {
        actions: prob.unflatten(&d.x),
        objective: d.eval.cost,
        penalized: d.eval.penalized,
        iterations: iters,
        grad_norm: d.grad_norm,
        predicted_states: d.eval.pred.states,
        predicted_outputs: d.eval.pred.outputs,
        max_violation: d.eval.violation,
        violation_flag: d.eval.violation > cfg.violation_tol,
        rho,
    })
}

/// Feasible solutions first, then lower cost; violation breaks the remaining ties.
fn better(a: &MpcSolution, b: &MpcSolution, tol: f64) -> bool {
    let (fa, fb) = (a.max_violation <= tol, b.max_violation <= tol);
    if fa != fb {
        return fa;
    }
    if fa {
        a.objective < b.objective
    } else {
        a.max_violation < b.max_violation || (a.max_violation == b.max_violation && a.objective < b.objective)
    }
}

/// Multi-start projected descent over the whole action sequence.
pub fn mpc_solve(model: &dyn HorizonModel, prob: &MpcProblem, cfg: &SolverConfig, warm: Option<&[Vec<f64>]>) -> Result<MpcSolution> {
    prob.validate(model)?;
    let n = prob.horizon * prob.action_lo.len();
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(w) = warm {
        check_dim("warm start length", prob.horizon, w.len())?;
        starts.push(w.iter().flatten().copied().collect());
    }
    starts.push(vec![0.0; n]);
    let mut rng = RngStream::new(cfg.seed, 7);
    let m = prob.action_lo.len();
    while starts.len() < cfg.restarts.max(1) {
        starts.push((0..n).map(|k| rng.uniform(prob.action_lo[k % m], prob.action_hi[k % m])).collect());
    }
    starts.truncate(cfg.restarts.max(1));
    let sols: Vec<MpcSolution> = starts
        .into_par_iter()
        .map(|x0| solve_from(model, prob, x0, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<MpcSolution> = None;
    for s in sols {
        if best.as_ref().is_none_or(|b| better(&s, b, cfg.violation_tol)) {
            best = Some(s);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Objective of a given action sequence (penalty at weight `rho`).
pub fn evaluate_sequence(model: &dyn HorizonModel, prob: &MpcProblem, actions: &[Vec<f64>], rho: f64) -> Result<(f64, f64)> {
    prob.validate(model)?;
    check_dim("action sequence", prob.horizon, actions.len())?;
    let x: Vec<f64> = actions.iter().flatten().copied().collect();
    let e = evaluate(model, prob, &x, rho, false)?;
    Ok((e.cost, e.penalized))
}

#[derive(Clone, Debug, Serialize)]
pub struct ShootingResult {
    pub actions: Vec<Vec<f64>>,
    pub objective: f64,
    pub penalized: f64,
    pub index: usize,
    pub max_violation: f64,
}

/// Best of `k` uniform action sequences by penalized objective; lowest index on ties.
pub fn random_shooting(model: &dyn HorizonModel, prob: &MpcProblem, k: usize, rho: f64, seed: u64) -> Result<ShootingResult> {
    prob.validate(model)?;
    if k == 0 {
        return Err(invalid("random shooting needs K >= 1"));
    }
    let n = prob.horizon * prob.action_lo.len();
    let m = prob.action_lo.len();
    let mut rng = RngStream::new(seed, 0);
    let cands: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..n).map(|j| rng.uniform(prob.action_lo[j % m], prob.action_hi[j % m])).collect())
        .collect();
    let scores: Vec<(f64, f64, f64)> = cands
        .par_iter()
        .map(|x| evaluate(model, prob, x, rho, false).map(|e| (e.cost, e.penalized, e.violation)))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 < scores[best].1 {
            best = i;
        }
    }
    Ok(ShootingResult {
        actions: prob.unflatten(&cands[best]),
        objective: scores[best].0,
        penalized: scores[best].1,
        index: best,
        max_violation: scores[best].2,
    })
}

// ---------------------------------------------------------------- single shot

#[derive(Clone, Debug)]
pub struct SingleShot {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

/// Minimizes the first output of an ICNN with no state block over a box,
/// starting from the box centre.
pub fn single_shot_minimize(model: &IcnnModel, lo: &[f64], hi: &[f64], cfg: &SolverConfig) -> Result<SingleShot> {
    if model.state_dim() != 0 {
        return Err(invalid("single-shot minimization expects a model without state inputs"));
    }
    check_dim("lower bound", model.input_dim(), lo.len())?;
    check_dim("upper bound", model.input_dim(), hi.len())?;
    if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
        return Err(invalid("box is empty"));
    }
    let clamp = |x: &mut Vec<f64>| {
        for (v, (l, h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
            *v = v.clamp(*l, *h);
        }
    };
    let width: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).max(1e-12)).collect();
    let mut x: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect();
    let first = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut d = vec![0.0; model.output_dim()];
        d[0] = 1.0;
        let (y, g) = model.input_vjp(x, &d)?;
        if !y[0].is_finite() {
            return Err(Error::NonFinite("single-shot objective"));
        }
        Ok((y[0], g))
    };
    let (mut val, mut g) = first(&x)?;
    let mut best = SingleShot {
        argmin: x.clone(),
        value: val,
        iterations: 0,
    };
    let mut adam = Adam::new(x.len());
    for k in 0..cfg.max_iters {
        let mut probe: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        clamp(&mut probe);
        let pg = x.iter().zip(&probe).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        best.iterations = k;
        if pg < cfg.tol {
            break;
        }
        let lr = cfg.lr / (1.0 + k as f64 / cfg.lr_decay.max(1e-12));
        let sg: Vec<f64> = g.iter().zip(&width).map(|(a, w)| a * w).collect();
        let mut z: Vec<f64> = x.iter().zip(&width).map(|(a, w)| a / w).collect();
        adam.step(&mut z, &sg, lr);
        x = z.iter().zip(&width).map(|(a, w)| a * w).collect();
        clamp(&mut x);
        (val, g) = first(&x)?;
        if val < best.value {
            best.value = val;
            best.argmin = x.clone();
        }
        best.iterations = k + 1;
    }
    Ok(best)
}

// ---------------------------------------------------------------- closed loop

/// Objective of a closed-loop run, instantiated per solve at the current clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    Energy,
    Tou { profile: TouProfile },
    Reward { vel_idx: usize, c: f64, alpha: f64 },
    Quadratic { target: Vec<f64>, state_weight: f64, action_weight: f64 },
    Arbitrage { prices: Vec<f64> },
}

impl Objective {
    pub fn at(&self, t: usize, horizon: usize) -> CostSpec {
        match self {
            Objective::Energy => CostSpec::SumOutputs,
            Objective::Tou { profile } => CostSpec::PriceWeighted {
                prices: profile.prices(t, horizon),
            },
            Objective::Reward { vel_idx, c, alpha } => CostSpec::NegativeReward {
                vel_idx: *vel_idx,
                c: *c,
                alpha: *alpha,
            },
            Objective::Quadratic {
                target,
                state_weight,
                action_weight,
            } => CostSpec::QuadraticTracking {
                target: target.clone(),
                state_weight: *state_weight,
                action_weight: *action_weight,
            },
            Objective::Arbitrage { prices } => CostSpec::Arbitrage {
                prices: (t..t + horizon).map(|k| prices[k % prices.len().max(1)]).collect(),
            },
        }
    }

    /// Realized stage cost of one plant step.
    pub fn realized(&self, t: usize, u: &[f64], y: &[f64], s_next: &[f64]) -> f64 {
        self.at(t, 1).stage(0, u, y, s_next).value
    }
}

/// How each receding-horizon step picks its action sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Planner {
    #[default]
    Gradient,
    /// Best of `k` uniform sequences, reseeded every step.
    Shooting { k: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClosedLoopConfig {
    pub horizon: usize,
    pub objective: Objective,
    /// Solver for the first step (cold start).
    pub first: SolverConfig,
    /// Solver for later, warm-started steps.
    pub warm: SolverConfig,
    /// Shrinks the plant's state band by this much on each side inside the planner.
    pub margin: f64,
    #[serde(default)]
    pub planner: Planner,
}

#[derive(Clone, Debug, Serialize)]
pub struct StepInfo {
    pub objective: f64,
    pub iterations: usize,
    pub violation: f64,
    pub flagged: bool,
}

#[derive(Clone, Debug)]
pub struct ClosedLoopRun {
    pub rollout: Rollout,
    pub steps: Vec<StepInfo>,
}

fn band(plant: &dyn Plant, margin: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    plant.state_bounds().map(|(lo, hi)| {
        let lo: Vec<f64> = lo.iter().map(|v| v + margin).collect();
        let hi: Vec<f64> = hi.iter().map(|v| v - margin).collect();
        (lo, hi)
    })
}

/// Receding-horizon control: solve, apply the first action, shift, re-solve.
pub fn receding_horizon_run(
    plant: &dyn Plant,
    model: &dyn HorizonModel,
    cfg: &ClosedLoopConfig,
    start: usize,
    episode: usize,
    s0: Vec<f64>,
    history: Vec<RawFrame>,
) -> Result<ClosedLoopRun> {
    check_dim("model state dim vs plant", plant.state_dim(), model.state_dim())?;
    check_dim("model action dim vs plant", plant.action_dim(), model.action_dim())?;
    check_dim("model exogenous dim vs plant", plant.exo_dim(), model.exo_dim())?;
    let (lo, hi) = plant.action_bounds();
    let bounds = band(plant, cfg.margin);
    let mut hist = history;
    let mut prev: Option<Vec<Vec<f64>>> = None;
    let mut steps = Vec::with_capacity(episode);
    let mem = model.memory();
    let rollout = run_rollout(plant, s0, start, episode, 0, |s, t| {
        let prob = MpcProblem {
            horizon: cfg.horizon,
            cost: cfg.objective.at(t, cfg.horizon),
            action_lo: lo.clone(),
            action_hi: hi.clone(),
            state_bounds: bounds.clone(),
            context: HorizonContext {
                history: hist[hist.len().saturating_sub(mem)..].to_vec(),
                s0: s.to_vec(),
                exogenous: (t..t + cfg.horizon).map(|k| plant.exogenous(k)).collect(),
            },
        };
        let warm = prev.as_ref().map(|p: &Vec<Vec<f64>>| {
            let mut w = p[1..].to_vec();
            w.push(p.last().expect("nonempty").clone());
            w
        });
        let solver = if warm.is_some() { &cfg.warm } else { &cfg.first };
        let (actions, info) = match cfg.planner {
            Planner::Gradient => {
                let sol = mpc_solve(model, &prob, solver, warm.as_deref())?;
                let info = StepInfo {
                    objective: sol.objective,
                    iterations: sol.iterations,
                    violation: sol.max_violation,
                    flagged: sol.violation_flag,
                };
                (sol.actions, info)
            }
            Planner::Shooting { k } => {
                let seed = solver.seed.wrapping_mul(0x2545_f491).wrapping_add(t as u64);
                let sh = random_shooting(model, &prob, k, solver.rho, seed)?;
                let info = StepInfo {
                    objective: sh.objective,
                    iterations: k,
                    violation: sh.max_violation,
                    flagged: sh.max_violation > solver.violation_tol,
                };
                (sh.actions, info)
            }
        };
        steps.push(info);
        let u = actions[0].clone();
        hist.push(RawFrame {
            s: s.to_vec(),
            e: plant.exogenous(t),
            u: u.clone(),
        });
        prev = Some(actions);
        Ok(u)
    })?;
    Ok(ClosedLoopRun { rollout, steps })
}

/// Fixed-setpoint thermostat that lands each zone on `setpoint` every step.
pub fn setpoint_run(plant: &RcThermal, setpoint: f64, start: usize, episode: usize, s0: Vec<f64>) -> Result<Rollout> {
    run_rollout(plant, s0, start, episode, 0, |s, t| Ok(plant.deadbeat_action(s, setpoint, t)))
}

/// Realized frames of the last `n` steps of `rollout`, for seeding a planner.
pub fn history_from(rollout: &Rollout, n: usize) -> Vec<RawFrame> {
    let h = rollout.len();
    (h.saturating_sub(n)..h)
        .map(|t| RawFrame {
            s: rollout.states[t].clone(),
            e: rollout.exogenous[t].clone(),
            u: rollout.actions[t].clone(),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: usize,
    pub total_cost: f64,
    /// Sum of the first output (power for the building).
    pub energy: f64,
    pub peak_energy: f64,
    pub max_band_violation: f64,
    pub max_band_violation_normalized: f64,
    pub steps_outside_band: usize,
    pub flagged_solves: usize,
    pub savings_percent: Option<f64>,
}

/// Realized metrics of a trajectory. `state_range` converts band violations
/// into normalized units (`2 · violation / (max - min)`).
pub fn episode_metrics(
    plant: &dyn Plant,
    rollout: &Rollout,
    objective: &Objective,
    tou: Option<&TouProfile>,
    state_range: Option<&crate::sysid::NormalizationSpec>,
) -> RunMetrics {
    let mut m = RunMetrics {
        steps: rollout.len(),
        ..Default::default()
    };
    let bounds = plant.state_bounds();
    for k in 0..rollout.len() {
        let t = rollout.start + k;
        let y = &rollout.outputs[k];
        m.total_cost += objective.realized(t, &rollout.actions[k], y, &rollout.states[k + 1]);
        let e = y.first().copied().unwrap_or(0.0);
        m.energy += e;
        if tou.is_some_and(|p| p.is_peak(t)) {
            m.peak_energy += e;
        }
        if let Some((lo, hi)) = &bounds {
            let s = &rollout.states[k + 1];
            let mut outside = false;
            for i in 0..s.len() {
                let v = relu_scalar(lo[i] - s[i]).max(relu_scalar(s[i] - hi[i]));
                if v > 0.0 {
                    outside = true;
                }
                m.max_band_violation = m.max_band_violation.max(v);
                if let Some(r) = state_range {
                    m.max_band_violation_normalized = m.max_band_violation_normalized.max(v * r.scale()[i]);
                }
            }
            if outside {
                m.steps_outside_band += 1;
            }
        }
    }
    m
}

pub fn savings_percent(baseline: f64, value: f64) -> f64 {
    100.0 * (baseline - value) / baseline
}

/// Trajectory CSV: `t, s.., e.., u.., y.., objective, iterations, violation`.
pub fn write_trajectory_csv(path: &Path, run: &ClosedLoopRun) -> Result<()> {
    let r = &run.rollout;
    let mut w = csv::Writer::from_writer(Vec::new());
    let ns = r.states.first().map_or(0, Vec::len);
    let ne = r.exogenous.first().map_or(0, Vec::len);
    let nu = r.actions.first().map_or(0, Vec::len);
    let ny = r.outputs.first().map_or(0, Vec::len);
    let mut head = vec!["t".to_string()];
    head.extend((0..ns).map(|i| format!("s{i}")));
    head.extend((0..ne).map(|i| format!("e{i}")));
    head.extend((0..nu).map(|i| format!("u{i}")));
    head.extend((0..ny).map(|i| format!("y{i}")));
    head.extend(["objective", "iterations", "violation"].map(String::from));
    w.write_record(&head)?;
    let f = |v: f64| format!("{v:.16e}");
    for k in 0..r.len() {
        let mut row = vec![(r.start + k).to_string()];
        row.extend(r.states[k].iter().map(|&v| f(v)));
        row.extend(r.exogenous[k].iter().map(|&v| f(v)));
        row.extend(r.actions[k].iter().map(|&v| f(v)));
        row.extend(r.outputs[k].iter().map(|&v| f(v)));
        match run.steps.get(k) {
            Some(st) => {
                row.push(f(st.objective));
                row.push(st.iterations.to_string());
                row.push(f(st.violation));
            }
            None => row.extend([String::new(), String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::json::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icnn::abs_model;
    use crate::icrnn::IcrnnDims;
    use crate::maxaffine::{compile_to_icnn, MaxAffine};
    use crate::numeric::{finite_difference_gradient, relative_error, seeded_stream};
    use crate::plants::{Battery, BatteryConfig, RcThermalConfig};
    use crate::sysid::NormalizationSpec;

    fn rc_norm() -> ModelNormalization {
        ModelNormalization {
            state: NormalizationSpec::new(vec![10.0; 4], vec![30.0; 4]).unwrap(),
            exogenous: NormalizationSpec::new(vec![0.0], vec![25.0]).unwrap(),
            action: NormalizationSpec::identity(4),
            output: NormalizationSpec::new(vec![0.0], vec![5.0]).unwrap(),
        }
    }

    fn random_icrnn_pair(seed: u64, n_w: usize) -> LearnedModel {
        let mut rng = seeded_stream(seed, 0);
        let dims = |o| IcrnnDims {
            state_dim: 4,
            d: 5,
            hidden: 6,
            output: o,
            n_w,
        };
        let mut f = IcrnnModel::random(dims(1), &mut rng).unwrap();
        let mut g = IcrnnModel::random(dims(4), &mut rng).unwrap();
        for b in f.b_z.iter_mut().chain(g.b_z.iter_mut()) {
            *b = rng.gaussian(0.0, 0.3);
        }
        for m in [&mut f.u, &mut g.u] {
            for x in m.data_mut() {
                *x *= 3.0;
            }
        }
        LearnedModel::new(Some(Net::Icrnn(f)), Net::Icrnn(g), rc_norm()).unwrap()
    }

    fn rc_context(rng: &mut RngStream, t: usize, hist: usize) -> HorizonContext {
        let frame = |rng: &mut RngStream| RawFrame {
            s: rng.uniform_vec(&[18.0; 4], &[24.0; 4]),
            e: vec![rng.uniform(5.0, 20.0)],
            u: rng.uniform_vec(&[-1.0; 4], &[1.0; 4]),
        };
        HorizonContext {
            history: (0..hist).map(|_| frame(rng)).collect(),
            s0: rng.uniform_vec(&[18.0; 4], &[24.0; 4]),
            exogenous: (0..t).map(|_| vec![rng.uniform(5.0, 20.0)]).collect(),
        }
    }

    #[test]
    fn learned_model_vjp_matches_finite_differences() {
        let model = random_icrnn_pair(1, 3);
        let mut rng = seeded_stream(2, 0);
        let t = 6;
        let ctx = rc_context(&mut rng, t, 3);
        let acts: Vec<Vec<f64>> = (0..t).map(|_| rng.uniform_vec(&[-1.0; 4], &[1.0; 4])).collect();
        let ds: Vec<Vec<f64>> = (0..t).map(|_| rng.uniform_vec(&[-1.0; 4], &[1.0; 4])).collect();
        let dy: Vec<Vec<f64>> = (0..t).map(|_| vec![rng.uniform(-1.0, 1.0)]).collect();
        let g = model.vjp(&ctx, &acts, &ds, &dy).unwrap();
        let flat: Vec<f64> = acts.iter().flatten().copied().collect();
        let fd = finite_difference_gradient(
            |x| {
                let a: Vec<Vec<f64>> = x.chunks(4).map(<[f64]>::to_vec).collect();
                let p = model.predict(&ctx, &a).unwrap();
                let mut v = 0.0;
                for k in 0..t {
                    v += p.states[k].iter().zip(&ds[k]).map(|(a, b)| a * b).sum::<f64>();
                    v += p.outputs[k][0] * dy[k][0];
                }
                v
            },
            &flat,
            1e-5,
        )
        .unwrap();
        let gf: Vec<f64> = g.iter().flatten().copied().collect();
        assert!(relative_error(&gf, &fd, 1e-6) < 1e-4, "{}", relative_error(&gf, &fd, 1e-6));
    }

    #[test]
    fn zero_dynamics_quadratic_cost_gives_zero_actions() {
        let norm = ModelNormalization {
            state: NormalizationSpec::identity(2),
            exogenous: NormalizationSpec::identity(0),
            action: NormalizationSpec::identity(2),
            output: NormalizationSpec::identity(1),
        };
        let zero = |o| Net::Icnn(IcnnModel::zeros(2, 2, &[3, o]).unwrap());
        let model = LearnedModel::new(Some(zero(1)), zero(2), norm).unwrap();
        let prob = MpcProblem {
            horizon: 4,
            cost: CostSpec::QuadraticTracking {
                target: vec![0.0; 2],
                state_weight: 1.0,
                action_weight: 1.0,
            },
            action_lo: vec![-1.0; 2],
            action_hi: vec![1.0; 2],
            state_bounds: None,
            context: HorizonContext {
                history: vec![],
                s0: vec![0.3, -0.2],
                exogenous: vec![vec![]; 4],
            },
        };
        let sol = mpc_solve(&model, &prob, &SolverConfig::default(), None).unwrap();
        assert!(sol.actions.iter().flatten().all(|u| u.abs() < 1e-6));
    }

    #[test]
    fn warm_start_never_worsens_and_restarts_are_deterministic() {
        let model = random_icrnn_pair(3, 2);
        let mut rng = seeded_stream(4, 0);
        let ctx = rc_context(&mut rng, 5, 2);
        let prob = MpcProblem {
            horizon: 5,
            cost: CostSpec::SumOutputs,
            action_lo: vec![-1.0; 4],
            action_hi: vec![1.0; 4],
            state_bounds: None,
            context: ctx,
        };
        let warm: Vec<Vec<f64>> = (0..5).map(|_| rng.uniform_vec(&[-1.0; 4], &[1.0; 4])).collect();
        let cfg = SolverConfig {
            max_iters: 50,
            restarts: 1,
            ..Default::default()
        };
        let (init, _) = evaluate_sequence(&model, &prob, &warm, cfg.rho).unwrap();
        let sol = mpc_solve(&model, &prob, &cfg, Some(&warm)).unwrap();
        assert!(sol.objective <= init);
        let cfg3 = SolverConfig {
            max_iters: 50,
            ..Default::default()
        };
        let a = mpc_solve(&model, &prob, &cfg3, None).unwrap();
        let b = mpc_solve(&model, &prob, &cfg3, None).unwrap();
        assert_eq!(a.actions, b.actions);
        for u in a.actions.iter().flatten() {
            assert!((-1.0..=1.0).contains(u));
        }
    }

    #[test]
    fn objective_is_midpoint_convex_along_segments() {
        let model = random_icrnn_pair(5, 3);
        let mut rng = seeded_stream(6, 0);
        let ctx = rc_context(&mut rng, 6, 3);
        let prices: Vec<f64> = (0..6).map(|_| rng.uniform(0.5, 3.0)).collect();
        for cost in [CostSpec::SumOutputs, CostSpec::PriceWeighted { prices }] {
            let prob = MpcProblem {
                horizon: 6,
                cost,
                action_lo: vec![-1.0; 4],
                action_hi: vec![1.0; 4],
                state_bounds: None,
                context: ctx.clone(),
            };
            for _ in 0..100 {
                let a: Vec<Vec<f64>> = (0..6).map(|_| rng.uniform_vec(&[-1.0; 4], &[1.0; 4])).collect();
                let b: Vec<Vec<f64>> = (0..6).map(|_| rng.uniform_vec(&[-1.0; 4], &[1.0; 4])).collect();
                let m: Vec<Vec<f64>> = a.iter().zip(&b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| 0.5 * (p + q)).collect()).collect();
                let j = |x: &[Vec<f64>]| evaluate_sequence(&model, &prob, x, 0.0).unwrap().0;
                assert!(j(&m) <= 0.5 * (j(&a) + j(&b)) + 1e-8);
            }
        }
    }

    #[test]
    fn battery_oracle_vjp_and_shooting_basics() {
        let plant = Battery::new(BatteryConfig::default());
        let model = PlantModel { plant: &plant };
        let prob = MpcProblem {
            horizon: 3,
            cost: CostSpec::Arbitrage {
                prices: vec![0.8, -0.6, 0.3],
            },
            action_lo: vec![-1.0],
            action_hi: vec![1.0],
            state_bounds: plant.state_bounds(),
            context: HorizonContext {
                history: vec![],
                s0: vec![0.5],
                exogenous: vec![vec![]; 3],
            },
        };
        let one = random_shooting(&model, &prob, 1, 10.0, 3).unwrap();
        assert_eq!(one.index, 0);
        let a = random_shooting(&model, &prob, 50, 10.0, 3).unwrap();
        let b = random_shooting(&model, &prob, 50, 10.0, 3).unwrap();
        assert_eq!(a.actions, b.actions);
        let sol = mpc_solve(&model, &prob, &SolverConfig::default(), None).unwrap();
        assert!(sol.objective <= a.objective);
        assert!(matches!(
            random_shooting(&model, &prob, 0, 10.0, 3),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_shot_examples() {
        let sol = single_shot_minimize(&abs_model(), &[-2.0], &[2.0], &SolverConfig::default()).unwrap();
        assert!(sol.argmin[0].abs() < 1e-4);
        // tangent-line approximation of (x - 0.7)^2 on a 0.25 grid
        let pieces: Vec<(Vec<f64>, f64)> = (0..17)
            .map(|i| {
                let c = -2.0 + 0.25 * i as f64;
                (vec![2.0 * (c - 0.7)], (c - 0.7) * (c - 0.7) - 2.0 * (c - 0.7) * c)
            })
            .collect();
        let net = compile_to_icnn(&MaxAffine::new(pieces).unwrap());
        let sol = single_shot_minimize(&net, &[-2.0], &[2.0], &SolverConfig::default()).unwrap();
        let grid_min = (0..=4000)
            .map(|i| -2.0 + 1e-3 * i as f64)
            .map(|x| (net.eval_scalar(&[x]).unwrap(), x))
            .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
        assert!((sol.argmin[0] - 0.7).abs() <= 0.125 + 1e-9);
        assert!(sol.value <= grid_min.0 + 1e-6);
        assert!(single_shot_minimize(&abs_model(), &[1.0], &[-1.0], &SolverConfig::default()).is_err());
    }

    #[test]
    fn closed_loop_zero_episode_is_empty() {
        let plant = RcThermal::new(RcThermalConfig::default()).unwrap();
        let model = PlantModel { plant: &plant };
        let cfg = ClosedLoopConfig {
            horizon: 4,
            objective: Objective::Energy,
            first: SolverConfig::default(),
            warm: SolverConfig::default(),
            margin: 0.0,
            planner: Planner::Gradient,
        };
        let run = receding_horizon_run(&plant, &model, &cfg, 0, 0, vec![21.0; 4], vec![]).unwrap();
        assert!(run.rollout.is_empty());
        let m = episode_metrics(&plant, &run.rollout, &Objective::Energy, None, None);
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn learned_model_json_round_trip() {
        let m = random_icrnn_pair(7, 2);
        assert_eq!(LearnedModel::from_json(&m.to_json().unwrap()).unwrap(), m);
    }
}
