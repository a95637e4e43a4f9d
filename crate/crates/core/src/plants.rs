//! Ground-truth simulators used to generate data and score controllers.
//!
//! Every plant maps `(s_t, u_t, e_t) -> (s_{t+1}, y_t)` where `e_t` is a known
//! exogenous signal (outside temperature for the building, nothing otherwise).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::numeric::RngStream;

pub trait Plant: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn exo_dim(&self) -> usize {
        0
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>);
    /// Operating band for the state, if the plant has one.
    fn state_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
    fn exogenous(&self, _t: usize) -> Vec<f64> {
        Vec::new()
    }
    fn step(&self, s: &[f64], u: &[f64], e: &[f64]) -> (Vec<f64>, Vec<f64>);
    /// Pulls adjoints on `(s_next, y)` back to `(s, u)`.
    fn step_vjp(&self, s: &[f64], u: &[f64], e: &[f64], ds_next: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>);
    fn initial_state(&self, rng: &mut RngStream) -> Vec<f64>;
    fn nominal_state(&self) -> Vec<f64>;
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_step(p: &dyn Plant, s: &[f64], u: &[f64]) -> Result<()> {
    check_dim("plant state", p.state_dim(), s.len())?;
    check_dim("plant action", p.action_dim(), u.len())
}

/// Checked wrapper around [`Plant::step`] that also clips the action to bounds.
pub fn checked_step(p: &dyn Plant, s: &[f64], u: &[f64], t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    check_step(p, s, u)?;
    let (lo, hi) = p.action_bounds();
    let uc: Vec<f64> = u.iter().zip(lo.iter().zip(&hi)).map(|(&v, (&l, &h))| v.clamp(l, h)).collect();
    let (sn, y) = p.step(s, &uc, &p.exogenous(t));
    if sn.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(crate::Error::NonFinite("plant step"));
    }
    Ok((sn, y))
}

// ---------------------------------------------------------------- point mass

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassConfig {
    pub dt: f64,
    pub thrust: f64,
    pub drag: f64,
    pub reward_c: f64,
    pub reward_alpha: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            thrust: 1.0,
            drag: 0.5,
            reward_c: 0.5,
            reward_alpha: 2.0,
        }
    }
}

/// Planar double integrator with linear drag. State `[p_x, p_y, v_x, v_y]`,
/// action is thrust in `[-1, 1]^2`, output is `r = v_x' - c ||u / α||²`.
#[derive(Clone, Debug)]
pub struct PointMass {
    pub config: PointMassConfig,
}

impl PointMass {
    pub fn new(config: PointMassConfig) -> Self {
        Self { config }
    }

    /// Speed at which drag balances thrust `u`: `thrust · u / drag`.
    pub fn terminal_velocity(&self, u: f64) -> f64 {
        self.config.thrust * u / self.config.drag
    }

    pub fn reward(&self, v_next_x: f64, u: &[f64]) -> f64 {
        let a = self.config.reward_alpha;
        v_next_x - self.config.reward_c * u.iter().map(|x| (x / a) * (x / a)).sum::<f64>()
    }
}

impl Plant for PointMass {
    fn name(&self) -> &'static str {
        "point_mass"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0; 2], vec![1.0; 2])
    }
    fn step(&self, s: &[f64], u: &[f64], _e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let vx = s[2] + c.dt * (c.thrust * u[0] - c.drag * s[2]);
        let vy = s[3] + c.dt * (c.thrust * u[1] - c.drag * s[3]);
        let sn = vec![s[0] + c.dt * vx, s[1] + c.dt * vy, vx, vy];
        let r = self.reward(vx, u);
        (sn, vec![r])
    }
    fn step_vjp(&self, _s: &[f64], u: &[f64], _e: &[f64], ds: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let keep = 1.0 - c.dt * c.drag;
        // adjoint on v' collects the position update and the reward
        let gvx = ds[2] + c.dt * ds[0] + dy[0];
        let gvy = ds[3] + c.dt * ds[1];
        let a2 = c.reward_alpha * c.reward_alpha;
        let d_s = vec![ds[0], ds[1], keep * gvx, keep * gvy];
        let d_u = vec![
            c.dt * c.thrust * gvx - dy[0] * 2.0 * c.reward_c * u[0] / a2,
            c.dt * c.thrust * gvy - dy[0] * 2.0 * c.reward_c * u[1] / a2,
        ];
        (d_s, d_u)
    }
    fn initial_state(&self, rng: &mut RngStream) -> Vec<f64> {
        let vmax = self.config.thrust / self.config.drag;
        vec![
            rng.uniform(-1.0, 1.0),
            rng.uniform(-1.0, 1.0),
            rng.uniform(-vmax, vmax),
            rng.uniform(-vmax, vmax),
        ]
    }
    fn nominal_state(&self) -> Vec<f64> {
        vec![0.0; 4]
    }
}

// ---------------------------------------------------------------- RC thermal

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RcThermalConfig {
    /// Envelope loss rate per zone, per step.
    pub alpha: Vec<f64>,
    /// Heating/cooling gain per zone, °C per step at full action.
    pub beta: Vec<f64>,
    /// Coupling between neighbouring zones (zones form a ring).
    pub kappa: f64,
    pub c1: f64,
    pub c2: f64,
    pub base_load: f64,
    pub band: (f64, f64),
    pub steps_per_day: usize,
    pub days_per_month: usize,
    pub months: usize,
    pub outside_mean: f64,
    pub outside_daily: f64,
    pub outside_seasonal: f64,
    pub outside_noise: f64,
    pub seed: u64,
}

impl Default for RcThermalConfig {
    fn default() -> Self {
        Self {
            alpha: vec![0.012, 0.015, 0.018, 0.02],
            beta: vec![0.25, 0.3, 0.3, 0.35],
            kappa: 0.005,
            c1: 1.0,
            c2: 0.2,
            base_load: 0.5,
            band: (19.0, 24.0),
            steps_per_day: 144,
            days_per_month: 3,
            months: 12,
            outside_mean: 12.0,
            outside_daily: 6.0,
            outside_seasonal: 4.0,
            outside_noise: 0.5,
            seed: 0,
        }
    }
}

/// Multi-zone resistor-capacitor building with a convex HVAC power map:
///
/// ```text
/// T_i' = T_i + α_i (w - T_i) + Σ_j κ (T_j - T_i) + β_i u_i
/// y    = Σ_i (c1 u_i² + c2 |u_i|) + base_load
/// ```
#[derive(Clone, Debug)]
pub struct RcThermal {
    pub config: RcThermalConfig,
    outside: Vec<f64>,
}

impl RcThermal {
    pub fn new(config: RcThermalConfig) -> Result<Self> {
        let n = config.alpha.len();
        if n == 0 {
            return Err(invalid("rc thermal needs at least one zone"));
        }
        check_dim("rc thermal beta", n, config.beta.len())?;
        if config.steps_per_day == 0 || config.days_per_month == 0 || config.months == 0 {
            return Err(invalid("rc thermal calendar lengths must be positive"));
        }
        let len = config.steps_per_day * config.days_per_month * config.months;
        let mut rng = RngStream::new(config.seed, 0x0d7);
        let mut noise = 0.0;
        let month_len = (config.steps_per_day * config.days_per_month) as f64;
        let outside = (0..len)
            .map(|t| {
                let day = 2.0 * PI * (t % config.steps_per_day) as f64 / config.steps_per_day as f64;
                let year = 2.0 * PI * t as f64 / (month_len * config.months as f64);
                // AR(1) noise with stationary std outside_noise
                noise = 0.95 * noise + rng.gaussian(0.0, config.outside_noise * (1.0f64 - 0.95 * 0.95).sqrt());
                config.outside_mean - config.outside_daily * (day - 0.25 * PI).cos() - config.outside_seasonal * year.cos() + noise
            })
            .collect();
        Ok(Self { config, outside })
    }

    pub fn zones(&self) -> usize {
        self.config.alpha.len()
    }

    pub fn month_len(&self) -> usize {
        self.config.steps_per_day * self.config.days_per_month
    }

    pub fn outside_series(&self) -> &[f64] {
        &self.outside
    }

    fn neighbours(&self, i: usize) -> [usize; 2] {
        let n = self.zones();
        [(i + n - 1) % n, (i + 1) % n]
    }

    /// `(A, b_w, B_u)` with `T' = A T + b_w w + B_u u` (B_u diagonal, returned as its diagonal).
    pub fn linear_matrices(&self) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        let n = self.zones();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += 1.0 - self.config.alpha[i];
            if n > 1 {
                for j in self.neighbours(i) {
                    if j != i {
                        row[j] += self.config.kappa;
                        row[i] -= self.config.kappa;
                    }
                }
            }
        }
        (a, self.config.alpha.clone(), self.config.beta.clone())
    }

    pub fn power(&self, u: &[f64]) -> f64 {
        let c = &self.config;
        u.iter().map(|&x| c.c1 * x * x + c.c2 * x.abs()).sum::<f64>() + c.base_load
    }

    /// Action that lands every zone on `setpoint` next step (clipped to bounds).
    pub fn deadbeat_action(&self, s: &[f64], setpoint: f64, t: usize) -> Vec<f64> {
        let free = self.step(s, &vec![0.0; self.zones()], &self.exogenous(t)).0;
        free.iter()
            .zip(&self.config.beta)
            .map(|(f, b)| ((setpoint - f) / b).clamp(-1.0, 1.0))
            .collect()
    }

    pub fn write_exogenous_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "outside_temp"])?;
        for (t, v) in self.outside.iter().enumerate() {
            w.write_record([t.to_string(), format!("{v:.16e}")])?;
        }
        let bytes = w.into_inner().map_err(|e| crate::Error::Io(e.into_error()))?;
        crate::json::write_atomic(path, &bytes)
    }
}

impl Plant for RcThermal {
    fn name(&self) -> &'static str {
        "rc_thermal"
    }
    fn state_dim(&self) -> usize {
        self.zones()
    }
    fn action_dim(&self) -> usize {
        self.zones()
    }
    fn exo_dim(&self) -> usize {
        1
    }
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0; self.zones()], vec![1.0; self.zones()])
    }
    fn state_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.zones();
        Some((vec![self.config.band.0; n], vec![self.config.band.1; n]))
    }
    fn exogenous(&self, t: usize) -> Vec<f64> {
        vec![self.outside[t % self.outside.len()]]
    }
    fn step(&self, s: &[f64], u: &[f64], e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let w = e[0];
        let n = self.zones();
        let sn = (0..n)
            .map(|i| {
                let mut t = s[i] + c.alpha[i] * (w - s[i]) + c.beta[i] * u[i];
                if n > 1 {
                    for j in self.neighbours(i) {
                        if j != i {
                            t += c.kappa * (s[j] - s[i]);
                        }
                    }
                }
                t
            })
            .collect();
        (sn, vec![self.power(u)])
    }
    fn step_vjp(&self, s: &[f64], u: &[f64], _e: &[f64], ds: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (a, _, b) = self.linear_matrices();
        let n = s.len();
        let d_s = (0..n).map(|j| (0..n).map(|i| a[i][j] * ds[i]).sum()).collect();
        let c = &self.config;
        let d_u = (0..n)
            .map(|i| b[i] * ds[i] + dy[0] * (2.0 * c.c1 * u[i] + c.c2 * sign0(u[i])))
            .collect();
        (d_s, d_u)
    }
    fn initial_state(&self, rng: &mut RngStream) -> Vec<f64> {
        (0..self.zones()).map(|_| rng.uniform(16.0, 26.0)).collect()
    }
    fn nominal_state(&self) -> Vec<f64> {
        vec![0.5 * (self.config.band.0 + self.config.band.1); self.zones()]
    }
}

// ---------------------------------------------------------------- battery

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryConfig {
    pub dt: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    /// Degradation `a|u| + b u² + c relu(|u| - knee)²`.
    pub deg_a: f64,
    pub deg_b: f64,
    pub deg_c: f64,
    pub knee: f64,
    pub initial_soc: f64,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        Self {
            dt: 0.08,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            deg_a: 0.05,
            deg_b: 0.5,
            deg_c: 2.0,
            knee: 0.6,
            initial_soc: 0.5,
        }
    }
}

/// Single-cell battery. State is SoC in `[0, 1]`, action is power in `[-1, 1]`
/// (positive charges), output is the convex degradation cost of the action.
#[derive(Clone, Debug)]
pub struct Battery {
    pub config: BatteryConfig,
}

impl Battery {
    pub fn new(config: BatteryConfig) -> Self {
        Self { config }
    }

    pub fn degradation(&self, u: f64) -> f64 {
        let c = &self.config;
        let m = u.abs();
        let over = (m - c.knee).max(0.0);
        c.deg_a * m + c.deg_b * u * u + c.deg_c * over * over
    }

    fn degradation_grad(&self, u: f64) -> f64 {
        let c = &self.config;
        let over = (u.abs() - c.knee).max(0.0);
        c.deg_a * sign0(u) + 2.0 * c.deg_b * u + 2.0 * c.deg_c * over * sign0(u)
    }

    fn efficiency(&self, u: f64) -> f64 {
        if u >= 0.0 {
            self.config.eta_charge
        } else {
            1.0 / self.config.eta_discharge
        }
    }
}

impl Plant for Battery {
    fn name(&self) -> &'static str {
        "battery"
    }
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0], vec![1.0])
    }
    fn state_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((vec![0.0], vec![1.0]))
    }
    fn step(&self, s: &[f64], u: &[f64], _e: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sn = s[0] + self.efficiency(u[0]) * u[0] * self.config.dt;
        (vec![sn], vec![self.degradation(u[0])])
    }
    fn step_vjp(&self, _s: &[f64], u: &[f64], _e: &[f64], ds: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let du = ds[0] * self.efficiency(u[0]) * self.config.dt + dy[0] * self.degradation_grad(u[0]);
        (vec![ds[0]], vec![du])
    }
    fn initial_state(&self, rng: &mut RngStream) -> Vec<f64> {
        vec![rng.uniform(0.2, 0.8)]
    }
    fn nominal_state(&self) -> Vec<f64> {
        vec![self.config.initial_soc]
    }
}

// ---------------------------------------------------------------- configs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plant", rename_all = "snake_case")]
pub enum PlantConfig {
    PointMass(PointMassConfig),
    RcThermal(RcThermalConfig),
    Battery(BatteryConfig),
}

impl PlantConfig {
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "point_mass" | "point-mass" => Ok(Self::PointMass(PointMassConfig::default())),
            "rc_thermal" | "rc-thermal" => Ok(Self::RcThermal(RcThermalConfig::default())),
            "battery" => Ok(Self::Battery(BatteryConfig::default())),
            other => Err(invalid(format!("unknown plant {other:?}; expected point_mass, rc_thermal or battery"))),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Plant>> {
        Ok(match self {
            Self::PointMass(c) => Box::new(PointMass::new(c.clone())),
            Self::RcThermal(c) => Box::new(RcThermal::new(c.clone())?),
            Self::Battery(c) => Box::new(Battery::new(c.clone())),
        })
    }
}

// ---------------------------------------------------------------- prices

/// Daily time-of-use tariff: `peak` inside `[peak_start, peak_end)` of each period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TouProfile {
    pub period: usize,
    pub peak_start: usize,
    pub peak_end: usize,
    pub peak: f64,
    pub off_peak: f64,
}

impl TouProfile {
    pub fn new(period: usize, peak_start: usize, peak_end: usize, peak: f64, off_peak: f64) -> Result<Self> {
        if period == 0 || peak_start > peak_end || peak_end > period {
            return Err(invalid("peak window must lie inside a positive period"));
        }
        if !(peak >= 0.0 && off_peak >= 0.0) {
            return Err(invalid("prices must be nonnegative"));
        }
        Ok(Self {
            period,
            peak_start,
            peak_end,
            peak,
            off_peak,
        })
    }

    /// Noon to 6 pm at 10-minute resolution, peak three times off-peak.
    pub fn building_default() -> Self {
        Self::new(144, 72, 108, 3.0, 1.0).expect("valid default")
    }

    pub fn flat(price: f64, period: usize) -> Result<Self> {
        Self::new(period, 0, 0, price, price)
    }

    pub fn is_peak(&self, t: usize) -> bool {
        let h = t % self.period;
        h >= self.peak_start && h < self.peak_end
    }

    pub fn price(&self, t: usize) -> f64 {
        if self.is_peak(t) {
            self.peak
        } else {
            self.off_peak
        }
    }

    pub fn prices(&self, start: usize, len: usize) -> Vec<f64> {
        (start..start + len).map(|t| self.price(t)).collect()
    }
}

pub fn tou_price(profile: &TouProfile, t: usize) -> f64 {
    profile.price(t)
}

// ---------------------------------------------------------------- circles

#[derive(Clone, Debug, PartialEq)]
pub struct CirclesData {
    pub points: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
    pub radii: (f64, f64),
}

/// Two concentric noisy circles: the first `ceil(n/2)` points on the inner
/// circle (label 0), the rest on the outer (label 1). Noise is radial, Gaussian.
pub fn circles_dataset(n: usize, radii: (f64, f64), noise: f64, seed: u64) -> Result<CirclesData> {
    if n < 2 {
        return Err(invalid("circles dataset needs at least two points"));
    }
    if !(radii.0 > 0.0 && radii.1 > radii.0) {
        return Err(invalid("radii must satisfy 0 < inner < outer"));
    }
    let mut rng = RngStream::new(seed, 0);
    let inner = n.div_ceil(2);
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (r, label) = if i < inner { (radii.0, 0) } else { (radii.1, 1) };
        let theta = rng.uniform(0.0, 2.0 * PI);
        let rr = if noise > 0.0 { r + rng.gaussian(0.0, noise) } else { r };
        points.push([rr * theta.cos(), rr * theta.sin()]);
        labels.push(label);
    }
    Ok(CirclesData { points, labels, radii })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_difference_gradient, relative_error, seeded_stream};

    #[test]
    fn point_mass_rest_and_terminal_velocity() {
        let p = PointMass::new(PointMassConfig::default());
        let (sn, r) = p.step(&[0.0; 4], &[0.0, 0.0], &[]);
        assert_eq!(sn[2], 0.0);
        assert_eq!(r[0], 0.0);
        let mut s = vec![0.0; 4];
        for _ in 0..2000 {
            s = p.step(&s, &[1.0, 0.0], &[]).0;
        }
        assert!((s[2] - p.terminal_velocity(1.0)).abs() < 1e-9);
    }

    #[test]
    fn reward_is_concave_in_action() {
        let p = PointMass::new(PointMassConfig::default());
        let mut rng = seeded_stream(1, 0);
        let s = [0.1, 0.2, 0.3, -0.1];
        for _ in 0..10_000 {
            let a = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let b = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let m = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            let r = |u: &[f64; 2]| p.step(&s, u, &[]).1[0];
            assert!(r(&m) >= 0.5 * (r(&a) + r(&b)) - 1e-12);
        }
    }

    #[test]
    fn rc_steady_state_and_base_load() {
        let p = RcThermal::new(RcThermalConfig::default()).unwrap();
        let (sn, y) = p.step(&[15.0; 4], &[0.0; 4], &[15.0]);
        for v in sn {
            assert!((v - 15.0).abs() < 1e-12);
        }
        assert_eq!(y[0], p.config.base_load);
    }

    #[test]
    fn vjps_match_finite_differences() {
        let plants: Vec<Box<dyn Plant>> = vec![
            Box::new(PointMass::new(PointMassConfig::default())),
            Box::new(RcThermal::new(RcThermalConfig::default()).unwrap()),
            Box::new(Battery::new(BatteryConfig::default())),
        ];
        let mut rng = seeded_stream(2, 0);
        for p in &plants {
            let ns = p.state_dim();
            let nu = p.action_dim();
            for _ in 0..20 {
                let s = p.initial_state(&mut rng);
                let u: Vec<f64> = (0..nu).map(|_| rng.uniform(-0.9, 0.9)).collect();
                let e = p.exogenous(7);
                let ds: Vec<f64> = (0..ns).map(|_| rng.gaussian(0.0, 1.0)).collect();
                let dy = vec![rng.gaussian(0.0, 1.0)];
                let (gs, gu) = p.step_vjp(&s, &u, &e, &ds, &dy);
                let scalar = |s: &[f64], u: &[f64]| {
                    let (sn, y) = p.step(s, u, &e);
                    sn.iter().zip(&ds).map(|(a, b)| a * b).sum::<f64>() + y[0] * dy[0]
                };
                let fs = finite_difference_gradient(|x| scalar(x, &u), &s, 1e-6).unwrap();
                let fu = finite_difference_gradient(|x| scalar(&s, x), &u, 1e-6).unwrap();
                assert!(relative_error(&gs, &fs, 1e-6) < 1e-6, "{}", p.name());
                assert!(relative_error(&gu, &fu, 1e-6) < 1e-5, "{}", p.name());
            }
        }
    }

    #[test]
    fn battery_examples() {
        let b = Battery::new(BatteryConfig::default());
        let (s, c) = b.step(&[0.4], &[0.0], &[]);
        assert_eq!((s[0], c[0]), (0.4, 0.0));
        let up = b.step(&[0.4], &[0.5], &[]).0;
        let back = b.step(&up, &[-0.5], &[]).0;
        // charging stores η u dt, discharging drains u dt / η
        let expect = 0.4 + 0.5 * 0.08 * (0.95 - 1.0 / 0.95);
        assert!((back[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn costs_are_midpoint_convex_in_actions() {
        let b = Battery::new(BatteryConfig::default());
        let rc = RcThermal::new(RcThermalConfig::default()).unwrap();
        let mut rng = seeded_stream(3, 0);
        for _ in 0..10_000 {
            let (x, y) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            assert!(b.degradation(0.5 * (x + y)) <= 0.5 * (b.degradation(x) + b.degradation(y)) + 1e-15);
            let ua = rng.uniform_vec(&[-1.0; 4], &[1.0; 4]);
            let ub = rng.uniform_vec(&[-1.0; 4], &[1.0; 4]);
            let um: Vec<f64> = ua.iter().zip(&ub).map(|(p, q)| 0.5 * (p + q)).collect();
            assert!(rc.power(&um) <= 0.5 * (rc.power(&ua) + rc.power(&ub)) + 1e-12);
        }
    }

    #[test]
    fn circles_examples() {
        let d = circles_dataset(100, (1.0, 2.0), 0.1, 5).unwrap();
        assert_eq!(d.labels.iter().filter(|&&l| l == 0).count(), 50);
        let exact = circles_dataset(10, (1.0, 2.0), 0.0, 5).unwrap();
        for (p, l) in exact.points.iter().zip(&exact.labels) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - if *l == 0 { 1.0 } else { 2.0 }).abs() < 1e-12);
        }
        assert_eq!(circles_dataset(100, (1.0, 2.0), 0.1, 5).unwrap(), d);
        assert!(circles_dataset(1, (1.0, 2.0), 0.1, 5).is_err());
    }

    #[test]
    fn tou_examples() {
        let p = TouProfile::building_default();
        assert_eq!(p.price(10), 1.0);
        assert_eq!(p.price(80), 3.0);
        assert_eq!(p.price(144 + 80), 3.0);
        assert!((0..1000).all(|t| p.price(t) >= 0.0));
        assert!(TouProfile::new(10, 5, 11, 1.0, 1.0).is_err());
    }

    #[test]
    fn plant_config_json_round_trip() {
        let c = PlantConfig::by_name("rc_thermal").unwrap();
        let s = crate::json::to_string(&c).unwrap();
        assert!(s.contains("\"plant\": \"rc_thermal\""));
        let back: PlantConfig = crate::json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert!(PlantConfig::by_name("cartpole").is_err());
    }
}
