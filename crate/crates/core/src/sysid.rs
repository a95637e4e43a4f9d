//! Rollout collection, normalization and dataset shaping for model fitting.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::icnn::RegressionData;
use crate::icrnn::WindowData;
use crate::numeric::RngStream;
use crate::plants::{checked_step, Plant};

/// One trajectory: `states` has one more entry than `actions`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub plant: String,
    pub seed: u64,
    /// Plant clock at the first step (indexes the exogenous signal).
    pub start: usize,
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub exogenous: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.actions.len();
        check_dim("rollout states", h + 1, self.states.len())?;
        check_dim("rollout outputs", h, self.outputs.len())?;
        check_dim("rollout exogenous", h, self.exogenous.len())
    }

    /// Unnormalized frame `[s_t; e_t; u_t]`.
    pub fn frame(&self, t: usize) -> Vec<f64> {
        let mut f = self.states[t].clone();
        f.extend_from_slice(&self.exogenous[t]);
        f.extend_from_slice(&self.actions[t]);
        f
    }
}

/// Per-dimension affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormalizationSpec {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        check_dim("normalization bounds", min.len(), max.len())?;
        if min.iter().zip(&max).any(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
            return Err(invalid("normalization needs finite max > min in every dimension"));
        }
        Ok(Self { min, max })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![-1.0; dim],
            max: vec![1.0; dim],
        }
    }

    /// Fits min/max over `rows`; constant columns are widened by ±1.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a Vec<f64>>, dim: usize) -> Result<Self> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for r in rows {
            check_dim("normalization sample", dim, r.len())?;
            any = true;
            for (j, &v) in r.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if !any {
            if dim == 0 {
                return Ok(Self::identity(0));
            }
            return Err(Error::Empty("normalization samples"));
        }
        for j in 0..dim {
            if max[j] - min[j] < 1e-12 {
                min[j] -= 1.0;
                max[j] += 1.0;
            }
        }
        Self::new(min, max)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `d norm / d raw` per dimension.
    pub fn scale(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| 2.0 / (b - a)).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&a, &b))| 2.0 * (v - a) / (b - a) - 1.0)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&a, &b))| a + 0.5 * (v + 1.0) * (b - a))
            .collect()
    }
}

/// Normalizations for each block of a frame plus the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelNormalization {
    pub state: NormalizationSpec,
    pub exogenous: NormalizationSpec,
    pub action: NormalizationSpec,
    pub output: NormalizationSpec,
}

impl ModelNormalization {
    /// States and outputs fitted to data; actions mapped from the plant bounds.
    pub fn fit(rollouts: &[Rollout], action_bounds: &(Vec<f64>, Vec<f64>)) -> Result<Self> {
        let first = rollouts.first().ok_or(Error::Empty("rollouts"))?;
        let ns = first.states[0].len();
        let ne = first.exogenous.first().map_or(0, Vec::len);
        let ny = first.outputs.first().map_or(0, Vec::len);
        Ok(Self {
            state: NormalizationSpec::fit(rollouts.iter().flat_map(|r| &r.states), ns)?,
            exogenous: NormalizationSpec::fit(rollouts.iter().flat_map(|r| &r.exogenous), ne)?,
            action: NormalizationSpec::new(action_bounds.0.clone(), action_bounds.1.clone())?,
            output: NormalizationSpec::fit(rollouts.iter().flat_map(|r| &r.outputs), ny)?,
        })
    }

    pub fn frame(&self, s: &[f64], e: &[f64], u: &[f64]) -> Vec<f64> {
        let mut f = self.state.normalize(s);
        f.extend(self.exogenous.normalize(e));
        f.extend(self.action.normalize(u));
        f
    }

    /// Errors unless both specs describe the same spaces.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self != other {
            return Err(invalid("output and dynamics models carry different normalization specs"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exploration {
    /// Independent `Uniform[lo, hi]` action every step.
    Uniform,
    /// Uniform action held for a random number of steps in `[min_hold, max_hold]`.
    Held { min_hold: usize, max_hold: usize },
}

/// `n` rollouts of random actions; rollout `i` uses RNG stream `i` and starts
/// at plant clock `i * horizon`.
pub fn collect_random_rollouts(
    plant: &dyn Plant,
    n: usize,
    horizon: usize,
    seed: u64,
    exploration: Exploration,
) -> Result<Vec<Rollout>> {
    if n == 0 {
        return Err(invalid("need at least one rollout"));
    }
    if let Exploration::Held { min_hold, max_hold } = exploration {
        if min_hold == 0 || max_hold < min_hold {
            return Err(invalid("hold range must satisfy 1 <= min_hold <= max_hold"));
        }
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let (lo, hi) = plant.action_bounds();
            let mut held = Vec::new();
            let mut left = 0usize;
            let s0 = plant.initial_state(&mut rng);
            run_rollout(plant, s0, i * horizon, horizon, seed, |_, _| {
                let u = match exploration {
                    Exploration::Uniform => rng.uniform_vec(&lo, &hi),
                    Exploration::Held { min_hold, max_hold } => {
                        if left == 0 {
                            held = rng.uniform_vec(&lo, &hi);
                            left = min_hold + rng.index(max_hold - min_hold + 1);
                        }
                        left -= 1;
                        held.clone()
                    }
                };
                Ok(u)
            })
            .map_err(|e| Error::Rollout {
                index: i,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Steps `plant` for `horizon` steps under `policy(state, clock)`.
pub fn run_rollout<P>(plant: &dyn Plant, s0: Vec<f64>, start: usize, horizon: usize, seed: u64, mut policy: P) -> Result<Rollout>
where
    P: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let mut r = Rollout {
        plant: plant.name().to_string(),
        seed,
        start,
        states: vec![s0],
        actions: Vec::with_capacity(horizon),
        exogenous: Vec::with_capacity(horizon),
        outputs: Vec::with_capacity(horizon),
    };
    let (lo, hi) = plant.action_bounds();
    for k in 0..horizon {
        let t = start + k;
        let s = r.states.last().expect("seeded").clone();
        let u = policy(&s, t)?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("controller action"));
        }
        let u: Vec<f64> = u.iter().zip(lo.iter().zip(&hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();
        let (sn, y) = checked_step(plant, &s, &u, t)?;
        r.exogenous.push(plant.exogenous(t));
        r.actions.push(u);
        r.outputs.push(y);
        r.states.push(sn);
    }
    Ok(r)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DaggerConfig {
    pub iters: usize,
    pub on_policy: usize,
    pub random: usize,
    pub horizon: usize,
    /// Gaussian std added to controller actions, in normalized action units.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        // 9 on-policy rollouts to 1 random keeps the 90/10 mix
        Self {
            iters: 6,
            on_policy: 9,
            random: 1,
            horizon: 200,
            noise_sigma: 0.001,
            seed: 0,
        }
    }
}

/// Dataset aggregation: each iteration fits a model on everything so far, rolls
/// out the controller with exploration noise, and appends those rollouts plus
/// fresh random ones.
pub fn dagger_aggregate<M, T, C>(
    plant: &dyn Plant,
    initial: Vec<Rollout>,
    config: &DaggerConfig,
    mut train: T,
    controller: C,
) -> Result<(Vec<Rollout>, Option<M>)>
where
    T: FnMut(&[Rollout]) -> Result<M>,
    C: Fn(&M, &[f64], usize) -> Result<Vec<f64>>,
{
    let mut data = initial;
    let mut model = None;
    let (lo, hi) = plant.action_bounds();
    for it in 0..config.iters {
        let m = train(&data)?;
        let base = data.len();
        for j in 0..config.on_policy {
            let mut rng = RngStream::new(config.seed, 1_000_000 + (it * config.on_policy + j) as u64);
            let s0 = plant.initial_state(&mut rng);
            let r = run_rollout(plant, s0, 0, config.horizon, config.seed, |s, t| {
                let mut u = controller(&m, s, t)?;
                if config.noise_sigma > 0.0 {
                    for (k, v) in u.iter_mut().enumerate() {
                        *v += rng.gaussian(0.0, config.noise_sigma) * 0.5 * (hi[k] - lo[k]);
                    }
                }
                Ok(u)
            })
            .map_err(|e| Error::Rollout {
                index: base + j,
                source: Box::new(e),
            })?;
            data.push(r);
        }
        if config.random > 0 {
            let fresh = collect_random_rollouts(
                plant,
                config.random,
                config.horizon,
                config.seed.wrapping_add(1 + it as u64),
                Exploration::Uniform,
            )?;
            data.extend(fresh);
        }
        model = Some(m);
    }
    Ok((data, model))
}

/// Supervised windows for the output model (`y_τ`) and the dynamics model (`s_{τ+1}`).
#[derive(Clone, Debug, Default)]
pub struct WindowSet {
    pub output: WindowData,
    pub dynamics: WindowData,
}

/// Sliding windows of `n_w + 1` normalized frames ending at every `τ >= n_w`.
pub fn make_windows(rollouts: &[Rollout], n_w: usize, norm: &ModelNormalization) -> Result<WindowSet> {
    let ns = norm.state.dim();
    let mut set = WindowSet {
        output: WindowData {
            state_dim: ns,
            ..Default::default()
        },
        dynamics: WindowData {
            state_dim: ns,
            ..Default::default()
        },
    };
    for r in rollouts {
        r.validate()?;
        if n_w >= r.len() {
            return Err(invalid(format!("memory window {n_w} needs rollouts longer than {}", r.len())));
        }
        let frames: Vec<Vec<f64>> = (0..r.len())
            .map(|t| norm.frame(&r.states[t], &r.exogenous[t], &r.actions[t]))
            .collect();
        for tau in n_w..r.len() {
            let w = frames[tau - n_w..=tau].to_vec();
            set.output.windows.push(w.clone());
            set.output.targets.push(norm.output.normalize(&r.outputs[tau]));
            set.dynamics.windows.push(w);
            set.dynamics.targets.push(norm.state.normalize(&r.states[tau + 1]));
        }
    }
    Ok(set)
}

/// One-step pairs `[s; e; u] -> s'` (normalized) for a feedforward dynamics model.
pub fn make_one_step(rollouts: &[Rollout], norm: &ModelNormalization) -> Result<(RegressionData, RegressionData)> {
    let set = make_windows(rollouts, 0, norm)?;
    let flat = |w: WindowData| RegressionData {
        state_dim: w.state_dim,
        inputs: w.windows.into_iter().map(|mut f| f.remove(0)).collect(),
        targets: w.targets,
    };
    Ok((flat(set.output), flat(set.dynamics)))
}

/// Splits in order: the first `round(ratio · n)` items train, the rest test.
pub fn split_chronological<T: Clone>(items: &[T], ratio: f64) -> Result<(Vec<T>, Vec<T>)> {
    let cut = split_point(items.len(), ratio)?;
    Ok((items[..cut].to_vec(), items[cut..].to_vec()))
}

/// Seeded shuffle, then the same cut as [`split_chronological`].
pub fn split_shuffled<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let cut = split_point(items.len(), ratio)?;
    let mut idx: Vec<usize> = (0..items.len()).collect();
    RngStream::new(seed, 0).shuffle(&mut idx);
    let pick = |r: &[usize]| r.iter().map(|&i| items[i].clone()).collect();
    Ok((pick(&idx[..cut]), pick(&idx[cut..])))
}

fn split_point(n: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let cut = (ratio * n as f64).round() as usize;
    if cut == 0 || cut >= n {
        return Err(Error::Empty("side of the split"));
    }
    Ok(cut)
}

fn header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per step `rollout, t, s.., e.., u.., y..`; a final row per rollout
/// carries the terminal state with empty action and output cells.
pub fn write_rollouts_csv(path: &Path, rollouts: &[Rollout]) -> Result<()> {
    let first = rollouts.first().ok_or(Error::Empty("rollouts"))?;
    let (ns, ne, nu, ny) = (
        first.states[0].len(),
        first.exogenous.first().map_or(0, Vec::len),
        first.actions.first().map_or(0, Vec::len),
        first.outputs.first().map_or(0, Vec::len),
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["rollout".to_string(), "t".to_string()];
    head.extend(header("s", ns));
    head.extend(header("e", ne));
    head.extend(header("u", nu));
    head.extend(header("y", ny));
    w.write_record(&head)?;
    for (id, r) in rollouts.iter().enumerate() {
        r.validate()?;
        for t in 0..=r.len() {
            let mut row = vec![id.to_string(), (r.start + t).to_string()];
            row.extend(r.states[t].iter().map(|&v| fmt(v)));
            if t < r.len() {
                row.extend(r.exogenous[t].iter().map(|&v| fmt(v)));
                row.extend(r.actions[t].iter().map(|&v| fmt(v)));
                row.extend(r.outputs[t].iter().map(|&v| fmt(v)));
            } else {
                row.extend(std::iter::repeat_n(String::new(), ne + nu + ny));
            }
            w.write_record(&row)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::json::write_atomic(path, &bytes)
}

struct Columns {
    groups: Vec<(char, Vec<usize>)>,
}

impl Columns {
    fn parse(head: &csv::StringRecord) -> Self {
        let mut groups: Vec<(char, Vec<usize>)> = Vec::new();
        for (i, name) in head.iter().enumerate() {
            let mut ch = name.chars();
            let (Some(p), rest) = (ch.next(), ch.as_str()) else { continue };
            if rest.is_empty() || !rest.chars().all(|c| c.is_ascii_digit()) {
                continue;
            }
            match groups.iter_mut().find(|g| g.0 == p) {
                Some(g) => g.1.push(i),
                None => groups.push((p, vec![i])),
            }
        }
        Self { groups }
    }

    fn get(&self, prefix: char) -> &[usize] {
        self.groups.iter().find(|g| g.0 == prefix).map_or(&[], |g| &g.1)
    }
}

fn parse_cells(rec: &csv::StringRecord, cols: &[usize]) -> Result<Option<Vec<f64>>> {
    let cells: Vec<&str> = cols.iter().map(|&c| rec.get(c).unwrap_or("")).collect();
    if !cols.is_empty() && cells.iter().all(|c| c.is_empty()) {
        return Ok(None);
    }
    cells
        .iter()
        .map(|c| c.trim().parse::<f64>().map_err(|_| invalid(format!("bad number {c:?} in csv"))))
        .collect::<Result<Vec<f64>>>()
        .map(Some)
}

pub fn read_rollouts_csv(path: &Path, plant: &str) -> Result<Vec<Rollout>> {
    let mut rd = csv::Reader::from_path(path)?;
    let cols = Columns::parse(rd.headers()?);
    let head = rd.headers()?.clone();
    let find = |name: &str| head.iter().position(|h| h == name).ok_or_else(|| invalid(format!("rollout csv is missing column {name:?}")));
    let (c_id, c_t) = (find("rollout")?, find("t")?);
    let mut out: Vec<Rollout> = Vec::new();
    let mut current: Option<String> = None;
    for rec in rd.records() {
        let rec = rec?;
        let id = rec.get(c_id).unwrap_or("").to_string();
        let t: usize = rec.get(c_t).unwrap_or("").parse().map_err(|_| invalid("bad t in rollout csv"))?;
        let s = parse_cells(&rec, cols.get('s'))?.ok_or_else(|| invalid("rollout csv row without state"))?;
        if current.as_deref() != Some(id.as_str()) {
            out.push(Rollout {
                plant: plant.to_string(),
                seed: 0,
                start: t,
                states: Vec::new(),
                actions: Vec::new(),
                exogenous: Vec::new(),
                outputs: Vec::new(),
            });
            current = Some(id);
        }
        let r = out.last_mut().expect("pushed");
        r.states.push(s);
        if let Some(u) = parse_cells(&rec, cols.get('u'))? {
            r.actions.push(u);
            r.exogenous.push(parse_cells(&rec, cols.get('e'))?.unwrap_or_default());
            r.outputs.push(parse_cells(&rec, cols.get('y'))?.unwrap_or_default());
        }
    }
    for r in &out {
        r.validate()?;
    }
    if out.is_empty() {
        return Err(Error::Empty("rollout csv"));
    }
    Ok(out)
}

/// Regression table: `s*` columns form the state prefix, `u*` the expanded
/// inputs and `y*` the targets.
pub fn read_regression_csv(path: &Path) -> Result<RegressionData> {
    let mut rd = csv::Reader::from_path(path)?;
    let cols = Columns::parse(rd.headers()?);
    let (cs, cu, cy) = (cols.get('s').to_vec(), cols.get('u').to_vec(), cols.get('y').to_vec());
    if cy.is_empty() || (cs.is_empty() && cu.is_empty()) {
        return Err(invalid("regression csv needs u*/s* input columns and y* target columns"));
    }
    let mut data = RegressionData {
        state_dim: cs.len(),
        inputs: Vec::new(),
        targets: Vec::new(),
    };
    for rec in rd.records() {
        let rec = rec?;
        let mut x = parse_cells(&rec, &cs)?.unwrap_or_default();
        x.extend(parse_cells(&rec, &cu)?.unwrap_or_default());
        let y = parse_cells(&rec, &cy)?.ok_or_else(|| invalid("regression csv row without target"))?;
        data.inputs.push(x);
        data.targets.push(y);
    }
    if data.inputs.is_empty() {
        return Err(Error::Empty("regression csv"));
    }
    Ok(data)
}

pub fn write_regression_csv(path: &Path, data: &RegressionData) -> Result<()> {
    let first = data.inputs.first().ok_or(Error::Empty("regression data"))?;
    let nu = first.len() - data.state_dim;
    let ny = data.targets.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = header("s", data.state_dim).collect();
    head.extend(header("u", nu));
    head.extend(header("y", ny));
    w.write_record(&head)?;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        w.write_record(x.iter().chain(y).map(|&v| fmt(v)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    crate::json::write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{PointMass, PointMassConfig, RcThermal, RcThermalConfig};

    fn pm() -> PointMass {
        PointMass::new(PointMassConfig::default())
    }

    #[test]
    fn rollouts_are_deterministic_and_in_bounds() {
        let p = pm();
        let a = collect_random_rollouts(&p, 2, 200, 7, Exploration::Uniform).unwrap();
        let b = collect_random_rollouts(&p, 2, 200, 7, Exploration::Uniform).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].actions, a[1].actions);
        assert!(a.iter().flat_map(|r| r.actions.iter().flatten()).all(|u| (-1.0..=1.0).contains(u)));
    }

    #[test]
    fn rc_rollouts_stay_in_physical_envelope() {
        let p = RcThermal::new(RcThermalConfig::default()).unwrap();
        let rs = collect_random_rollouts(&p, 3, 144, 1, Exploration::Held { min_hold: 6, max_hold: 36 }).unwrap();
        let (wmin, wmax) = p.outside_series().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, &w| (a.0.min(w), a.1.max(w)));
        let bmax = p.config.beta.iter().cloned().fold(0.0, f64::max);
        let amin = p.config.alpha.iter().cloned().fold(1.0, f64::min);
        // equilibrium under full action sits within β/α of the outside range
        let (lo, hi) = (wmin.min(16.0) - bmax / amin, wmax.max(26.0) + bmax / amin);
        for s in rs.iter().flat_map(|r| r.states.iter().flatten()) {
            assert!(s.is_finite() && *s >= lo && *s <= hi);
        }
    }

    #[test]
    fn normalization_round_trip() {
        let rows = vec![vec![1.0, -3.0, 5.0], vec![2.5, 7.0, 5.0]];
        let spec = NormalizationSpec::fit(rows.iter(), 3).unwrap();
        for r in &rows {
            let n = spec.normalize(r);
            assert!(n.iter().all(|v| (-1.0..=1.0).contains(v)));
            let back = spec.denormalize(&n);
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(NormalizationSpec::new(vec![1.0], vec![1.0]).is_err());
    }

    #[test]
    fn windows_count_and_alignment() {
        let p = pm();
        let rs = collect_random_rollouts(&p, 1, 10, 0, Exploration::Uniform).unwrap();
        let norm = ModelNormalization::fit(&rs, &p.action_bounds()).unwrap();
        let w = make_windows(&rs, 3, &norm).unwrap();
        assert_eq!(w.output.len(), 7);
        for (k, win) in w.output.windows.iter().enumerate() {
            let tau = k + 3;
            assert_eq!(win.len(), 4);
            for (j, f) in win.iter().enumerate() {
                let t = tau - 3 + j;
                assert_eq!(f, &norm.frame(&rs[0].states[t], &rs[0].exogenous[t], &rs[0].actions[t]));
            }
            assert_eq!(w.output.targets[k], norm.output.normalize(&rs[0].outputs[tau]));
            assert_eq!(w.dynamics.targets[k], norm.state.normalize(&rs[0].states[tau + 1]));
        }
        assert!(make_windows(&rs, 10, &norm).is_err());
    }

    #[test]
    fn splits() {
        let months: Vec<usize> = (0..12).collect();
        let (tr, te) = split_chronological(&months, 10.0 / 12.0).unwrap();
        assert_eq!(tr, (0..10).collect::<Vec<_>>());
        assert_eq!(te, vec![10, 11]);
        let items: Vec<usize> = (0..1000).collect();
        let (a, b) = split_shuffled(&items, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (800, 200));
        assert_eq!(split_shuffled(&items, 0.8, 3).unwrap().0, a);
        assert!(split_chronological(&items[..1], 0.5).is_err());
    }

    #[test]
    fn dagger_growth_and_noise() {
        let p = pm();
        let init = collect_random_rollouts(&p, 3, 20, 0, Exploration::Uniform).unwrap();
        let cfg = DaggerConfig {
            iters: 0,
            horizon: 20,
            ..Default::default()
        };
        let (d, m) = dagger_aggregate(&p, init.clone(), &cfg, |_| Ok(()), |_, _, _| Ok(vec![0.3, -0.2])).unwrap();
        assert_eq!(d, init);
        assert!(m.is_none());
        let cfg = DaggerConfig {
            iters: 2,
            on_policy: 4,
            random: 1,
            horizon: 20,
            noise_sigma: 0.0,
            seed: 1,
        };
        let mut sizes = Vec::new();
        let (d, _) = dagger_aggregate(
            &p,
            init,
            &cfg,
            |data| {
                sizes.push(data.len());
                Ok(())
            },
            |_, _, _| Ok(vec![0.3, -0.2]),
        )
        .unwrap();
        assert_eq!(sizes, vec![3, 8]);
        assert_eq!(d.len(), 13);
        assert!(d[3].actions.iter().all(|u| u == &vec![0.3, -0.2]));
        let bad = dagger_aggregate(&p, vec![], &cfg, |_| Ok(()), |_, _, _| Ok(vec![f64::NAN, 0.0]));
        assert!(matches!(bad, Err(Error::Rollout { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let p = RcThermal::new(RcThermalConfig::default()).unwrap();
        let rs = collect_random_rollouts(&p, 2, 15, 4, Exploration::Uniform).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_rollouts_csv(&path, &rs).unwrap();
        let back = read_rollouts_csv(&path, "rc_thermal").unwrap();
        for (a, b) in rs.iter().zip(&back) {
            assert_eq!(a.states, b.states);
            assert_eq!(a.actions, b.actions);
            assert_eq!(a.exogenous, b.exogenous);
            assert_eq!(a.outputs, b.outputs);
            assert_eq!(a.start, b.start);
        }
    }
}
