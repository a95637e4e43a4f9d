//! End-to-end pipelines shared by the command line and the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::control::{
    episode_metrics, fit_linear_model, history_from, mpc_solve, random_shooting, receding_horizon_run, regression_rmse,
    savings_percent, setpoint_run, single_shot_minimize, ClosedLoopConfig, ClosedLoopRun, CostSpec, HorizonContext,
    LearnedModel, MpcProblem, Net, Objective, PlantModel, RunMetrics, SolverConfig,
};
use crate::error::{invalid, Result};
use crate::icnn::{classify_circles, IcnnModel, TrainConfig};
use crate::icrnn::{train_icrnn, IcrnnTrainConfig};
use crate::numeric::RngStream;
use crate::plants::{circles_dataset, Battery, BatteryConfig, Plant, RcThermal, RcThermalConfig, TouProfile};
use crate::sysid::{
    collect_random_rollouts, make_one_step, make_windows, split_chronological, Exploration, ModelNormalization, Rollout,
};
use crate::verify::{sublevel_check, VerifyReport};

// ---------------------------------------------------------------- building

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildingConfig {
    pub plant: RcThermalConfig,
    pub seed: u64,
    pub exploration: Exploration,
    pub n_w: usize,
    pub train: IcrnnTrainConfig,
    /// Fraction of months used for training, in calendar order.
    pub train_ratio: f64,
    pub test_month: usize,
    pub episode: usize,
    pub horizon: usize,
    pub setpoint: f64,
    pub margin: f64,
    pub first: SolverConfig,
    pub warm: SolverConfig,
    pub tou: TouProfile,
    pub run_oracle: bool,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        Self {
            plant: RcThermalConfig::default(),
            seed: 0,
            exploration: Exploration::Held {
                min_hold: 6,
                max_hold: 36,
            },
            n_w: 12,
            train: IcrnnTrainConfig {
                hidden: 32,
                epochs: 60,
                lr: 3e-3,
                batch: 64,
                seed: 0,
            },
            train_ratio: 10.0 / 12.0,
            test_month: 10,
            episode: 144,
            horizon: 36,
            setpoint: 21.5,
            margin: 0.0,
            // violations are in °C here; 0.05 is well inside sensor resolution
            first: SolverConfig {
                max_iters: 300,
                violation_tol: 0.05,
                ..SolverConfig::default()
            },
            warm: SolverConfig {
                max_iters: 40,
                restarts: 1,
                rho_rounds: 2,
                violation_tol: 0.05,
                ..SolverConfig::default()
            },
            tou: TouProfile::building_default(),
            run_oracle: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitErrors {
    /// Normalized test RMSE of the power model.
    pub output: f64,
    /// Normalized test RMSE of the next-state model.
    pub dynamics: f64,
}

pub struct BuildingModels {
    pub icrnn: LearnedModel,
    pub linear: LearnedModel,
    pub icrnn_fit: FitErrors,
    pub linear_fit: FitErrors,
    pub loss_output: Vec<f64>,
    pub loss_dynamics: Vec<f64>,
    pub train: Vec<Rollout>,
    pub test: Vec<Rollout>,
}

/// One rollout per calendar month, split chronologically.
pub fn building_data(plant: &RcThermal, cfg: &BuildingConfig) -> Result<(Vec<Rollout>, Vec<Rollout>)> {
    let months = collect_random_rollouts(plant, cfg.plant.months, plant.month_len(), cfg.seed, cfg.exploration)?;
    split_chronological(&months, cfg.train_ratio)
}

pub fn building_models(plant: &RcThermal, cfg: &BuildingConfig) -> Result<BuildingModels> {
    let (train, test) = building_data(plant, cfg)?;
    let norm = ModelNormalization::fit(&train, &plant.action_bounds())?;
    let tr = make_windows(&train, cfg.n_w, &norm)?;
    let te = make_windows(&test, cfg.n_w, &norm)?;
    let f = train_icrnn(&tr.output, &cfg.train)?;
    let g = train_icrnn(
        &tr.dynamics,
        &IcrnnTrainConfig {
            seed: cfg.train.seed + 1,
            ..cfg.train.clone()
        },
    )?;
    let (f_net, g_net) = (Net::Icrnn(f.model), Net::Icrnn(g.model));
    let icrnn_fit = FitErrors {
        output: f_net.window_mse(&te.output)?.sqrt(),
        dynamics: g_net.window_mse(&te.dynamics)?.sqrt(),
    };
    let icrnn = LearnedModel::new(Some(f_net), g_net, norm.clone())?;
    let linear = fit_linear_model(&train, &norm)?;
    // score the linear model on the same targets the windows use
    let (tf, tg) = make_one_step(&test, &norm)?;
    let linear_fit = FitErrors {
        output: regression_rmse(linear.f.as_ref().expect("linear output model"), &tf)?,
        dynamics: regression_rmse(&linear.g, &tg)?,
    };
    Ok(BuildingModels {
        icrnn,
        linear,
        icrnn_fit,
        linear_fit,
        loss_output: f.loss_history,
        loss_dynamics: g.loss_history,
        train,
        test,
    })
}

/// Start clock, initial state and history for the test episode: the setpoint
/// thermostat runs for `n_w` steps from the setpoint at the start of the test month.
pub fn building_start(plant: &RcThermal, cfg: &BuildingConfig) -> Result<(usize, Vec<f64>, Vec<crate::control::RawFrame>)> {
    let t0 = cfg.test_month * plant.month_len();
    let warm = setpoint_run(plant, cfg.setpoint, t0, cfg.n_w, vec![cfg.setpoint; plant.zones()])?;
    let s0 = warm.states.last().cloned().expect("rollout has a terminal state");
    Ok((t0 + cfg.n_w, s0, history_from(&warm, cfg.n_w)))
}

pub fn building_episode(
    plant: &RcThermal,
    cfg: &BuildingConfig,
    model: &dyn crate::control::HorizonModel,
    objective: Objective,
) -> Result<ClosedLoopRun> {
    let (start, s0, hist) = building_start(plant, cfg)?;
    let cl = ClosedLoopConfig {
        horizon: cfg.horizon,
        objective,
        first: cfg.first.clone(),
        warm: cfg.warm.clone(),
        margin: cfg.margin,
        planner: crate::control::Planner::Gradient,
    };
    receding_horizon_run(plant, model, &cl, start, cfg.episode, s0, hist)
}

#[derive(Clone, Debug, Serialize)]
pub struct NamedRun {
    pub name: String,
    pub metrics: RunMetrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct BuildingReport {
    pub icrnn_fit: FitErrors,
    pub linear_fit: FitErrors,
    pub baseline: NamedRun,
    pub icrnn: NamedRun,
    pub rc: NamedRun,
    pub icrnn_tou: NamedRun,
    pub oracle: Option<NamedRun>,
    /// Band tolerance in normalized units used for the comfort checks.
    pub band_tolerance: f64,
}

pub struct BuildingOutcome {
    pub report: BuildingReport,
    pub runs: Vec<(String, ClosedLoopRun)>,
    pub models: BuildingModels,
}

pub fn building_experiment(cfg: &BuildingConfig) -> Result<BuildingOutcome> {
    let plant = RcThermal::new(cfg.plant.clone())?;
    let models = building_models(&plant, cfg)?;
    let range = models.icrnn.norm.state.clone();
    let tou_obj = Objective::Tou { profile: cfg.tou.clone() };
    let metrics = |r: &crate::sysid::Rollout, obj: &Objective| {
        let mut m = episode_metrics(&plant, r, obj, Some(&cfg.tou), Some(&range));
        if obj == &Objective::Energy {
            m.total_cost = m.energy;
        }
        m
    };
    let (start, s0, _) = building_start(&plant, cfg)?;
    let base = setpoint_run(&plant, cfg.setpoint, start, cfg.episode, s0)?;
    let baseline = NamedRun {
        name: "setpoint".into(),
        metrics: metrics(&base, &Objective::Energy),
    };
    let mut runs = vec![("setpoint".to_string(), ClosedLoopRun { rollout: base, steps: vec![] })];
    let mut run = |name: &str, model: &dyn crate::control::HorizonModel, obj: Objective| -> Result<NamedRun> {
        let r = building_episode(&plant, cfg, model, obj.clone())?;
        let mut m = metrics(&r.rollout, &Objective::Energy);
        m.flagged_solves = r.steps.iter().filter(|s| s.flagged).count();
        m.savings_percent = Some(savings_percent(baseline.metrics.energy, m.energy));
        if obj != Objective::Energy {
            m.total_cost = metrics(&r.rollout, &obj).total_cost;
        }
        runs.push((name.to_string(), r));
        Ok(NamedRun {
            name: name.into(),
            metrics: m,
        })
    };
    let icrnn = run("icrnn", &models.icrnn, Objective::Energy)?;
    let rc = run("rc", &models.linear, Objective::Energy)?;
    let icrnn_tou = run("icrnn_tou", &models.icrnn, tou_obj)?;
    let oracle = if cfg.run_oracle {
        Some(run("oracle", &PlantModel { plant: &plant }, Objective::Energy)?)
    } else {
        None
    };
    let band_tolerance = 0.25;
    let mut baseline = baseline;
    baseline.metrics.savings_percent = Some(0.0);
    Ok(BuildingOutcome {
        report: BuildingReport {
            icrnn_fit: models.icrnn_fit.clone(),
            linear_fit: models.linear_fit.clone(),
            baseline,
            icrnn,
            rc,
            icrnn_tou,
            oracle,
            band_tolerance,
        },
        runs,
        models,
    })
}

// ---------------------------------------------------------------- battery

/// Random battery arbitrage instance: prices `U[0, 2]` minus their horizon mean.
pub fn battery_instance(plant: &Battery, horizon: usize, seed: u64) -> MpcProblem {
    let mut rng = RngStream::new(seed, 0);
    let raw: Vec<f64> = (0..horizon).map(|_| rng.uniform(0.0, 2.0)).collect();
    let mean = raw.iter().sum::<f64>() / horizon.max(1) as f64;
    let (lo, hi) = plant.action_bounds();
    MpcProblem {
        horizon,
        cost: CostSpec::Arbitrage {
            prices: raw.iter().map(|p| p - mean).collect(),
        },
        action_lo: lo,
        action_hi: hi,
        state_bounds: plant.state_bounds(),
        context: HorizonContext {
            history: vec![],
            s0: plant.initial_state(&mut rng),
            exogenous: vec![vec![]; horizon],
        },
    }
}

/// Exhaustive search over the action lattice `{-1, -1 + res, .., 1}^T`,
/// skipping sequences that leave the state-of-charge box.
pub fn battery_lattice_oracle(plant: &Battery, prob: &MpcProblem, res: f64) -> Result<(f64, Vec<f64>)> {
    let CostSpec::Arbitrage { prices } = &prob.cost else {
        return Err(invalid("lattice oracle expects an arbitrage cost"));
    };
    let n = (2.0 / res).round() as usize + 1;
    let grid: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let t = prob.horizon;
    let (lo, hi) = plant.state_bounds().unwrap_or((vec![f64::NEG_INFINITY], vec![f64::INFINITY]));
    // stage cost and state increment per lattice value, per step
    let stage: Vec<Vec<f64>> = (0..t)
        .map(|tau| grid.iter().map(|&u| prices[tau] * u + plant.step(&[0.0], &[u], &[]).1[0]).collect())
        .collect();
    let delta: Vec<f64> = grid.iter().map(|&u| plant.step(&[0.0], &[u], &[]).0[0]).collect();
    let mut best = (f64::INFINITY, vec![0usize; t]);
    let mut idx = vec![0usize; t];
    fn dfs(
        tau: usize,
        soc: f64,
        acc: f64,
        stage: &[Vec<f64>],
        delta: &[f64],
        bounds: (f64, f64),
        idx: &mut [usize],
        best: &mut (f64, Vec<usize>),
    ) {
        if tau == stage.len() {
            if acc < best.0 {
                best.0 = acc;
                best.1.copy_from_slice(idx);
            }
            return;
        }
        for (i, (&c, &d)) in stage[tau].iter().zip(delta).enumerate() {
            let s = soc + d;
            if s < bounds.0 || s > bounds.1 {
                continue;
            }
            idx[tau] = i;
            dfs(tau + 1, s, acc + c, stage, delta, bounds, idx, best);
        }
    }
    dfs(0, prob.context.s0[0], 0.0, &stage, &delta, (lo[0], hi[0]), &mut idx, &mut best);
    if !best.0.is_finite() {
        return Err(invalid("no feasible lattice sequence"));
    }
    Ok((best.0, best.1.iter().map(|&i| grid[i]).collect()))
}

#[derive(Clone, Debug, Serialize)]
pub struct BatteryInstance {
    pub seed: u64,
    pub mpc: f64,
    pub lattice: f64,
    pub shooting: f64,
    pub mpc_violation: f64,
}

impl BatteryInstance {
    /// `mpc` may beat the lattice since the lattice is a subset of the box.
    pub fn within(&self, rel: f64) -> bool {
        self.mpc - self.lattice <= rel * self.lattice.abs()
    }
}

pub fn battery_experiment(instances: usize, horizon: usize, k: usize, res: f64, seed: u64) -> Result<Vec<BatteryInstance>> {
    let plant = Battery::new(BatteryConfig::default());
    let model = PlantModel { plant: &plant };
    let cfg = SolverConfig {
        seed,
        ..SolverConfig::default()
    };
    (0..instances as u64)
        .map(|i| {
            let prob = battery_instance(&plant, horizon, seed.wrapping_add(i));
            let sol = mpc_solve(&model, &prob, &cfg, None)?;
            let (lattice, _) = battery_lattice_oracle(&plant, &prob, res)?;
            let shoot = random_shooting(&model, &prob, k, cfg.rho, seed.wrapping_add(i))?;
            Ok(BatteryInstance {
                seed: seed.wrapping_add(i),
                mpc: sol.objective,
                lattice,
                shooting: shoot.objective,
                mpc_violation: sol.max_violation,
            })
        })
        .collect()
}

// ---------------------------------------------------------------- circles

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct CirclesConfig {
    pub n: usize,
    pub radii: (f64, f64),
    pub noise: f64,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for CirclesConfig {
    fn default() -> Self {
        Self {
            n: 100,
            radii: (1.0, 2.0),
            noise: 0.1,
            seed: 0,
            train: TrainConfig {
                widths: vec![200, 200],
                epochs: 1500,
                lr: 1e-3,
                batch: 100,
                seed: 0,
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CirclesReport {
    pub accuracy: f64,
    pub sublevel: VerifyReport,
    pub minimizer: Vec<f64>,
    pub minimizer_radius: f64,
    pub inner_radius: f64,
}

pub fn circles_experiment(cfg: &CirclesConfig) -> Result<(IcnnModel, CirclesReport)> {
    let data = circles_dataset(cfg.n, cfg.radii, cfg.noise, cfg.seed)?;
    let model = classify_circles(&data.points, &data.labels, &cfg.train)?;
    let mut correct = 0;
    for (p, &l) in data.points.iter().zip(&data.labels) {
        let pred = u8::from(model.eval_scalar(p)? > 0.5);
        if pred == l {
            correct += 1;
        }
    }
    let sublevel = sublevel_check(&model, 0.5, -3.0, 3.0, 10_000, cfg.seed)?;
    let b = 1.5 * cfg.radii.1;
    let shot = single_shot_minimize(&model, &[-b, -b], &[b, b], &SolverConfig::default())?;
    let radius = shot.argmin.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((
        model,
        CirclesReport {
            accuracy: correct as f64 / data.points.len() as f64,
            sublevel,
            minimizer: shot.argmin,
            minimizer_radius: radius,
            inner_radius: cfg.radii.0,
        },
    ))
}
