use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use icnn_core::control::{
    episode_metrics, history_from, receding_horizon_run, savings_percent, setpoint_run, write_trajectory_csv,
    ClosedLoopConfig, ClosedLoopRun, HorizonModel, LearnedModel, Net, Objective, PlantModel, Planner, RawFrame,
    RunMetrics, SolverConfig,
};
use icnn_core::experiments::{
    battery_experiment, building_experiment, circles_experiment, BuildingConfig, CirclesConfig,
};
use icnn_core::icnn::{train_icnn, IcnnModel, RegressionData, TrainConfig};
use icnn_core::icrnn::{train_icrnn, IcrnnModel, IcrnnTrainConfig};
use icnn_core::json;
use icnn_core::maxaffine::{compile_to_icnn, enumerate_pieces, fit_cpl, CplConfig, MaxAffine};
use icnn_core::numeric::RngStream;
use icnn_core::plants::{circles_dataset, PlantConfig, RcThermal, TouProfile};
use icnn_core::sysid::{
    collect_random_rollouts, make_one_step, make_windows, read_regression_csv, read_rollouts_csv,
    write_regression_csv, write_rollouts_csv, Exploration, ModelNormalization, Rollout,
};
use icnn_core::verify::{
    convexity_icnn, convexity_icrnn, gradients_icnn, gradients_icrnn, grid, midpoint_check, theorem1_suite,
    theorem2_suite, VerifyReport,
};

use crate::run::{loss_csv, Run};
use crate::{Cli, Command, ExperimentName, ModelKind, ObjectiveKind, Outcome, Suite};

pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Generate { plant, n, horizon } => generate(cli, plant, *n, *horizon),
        Command::Train { kind, data, plant } => train(cli, *kind, data, plant.as_deref()),
        Command::Construct { model, data, k } => construct(cli, model.as_deref(), data.as_deref(), *k),
        Command::Enumerate { model } => enumerate(cli, model),
        Command::Control {
            plant,
            model,
            objective,
            horizon,
            episode,
            k,
            tol,
            max_iters,
        } => control(
            cli,
            plant,
            model,
            *objective,
            ControlFlags {
                horizon: *horizon,
                episode: *episode,
                k: *k,
                tol: *tol,
                max_iters: *max_iters,
            },
        ),
        Command::Verify { suite, model, samples } => verify(cli, *suite, model.as_deref(), *samples),
        Command::Experiment { name } => experiment(cli, *name),
    }
}

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T> {
    match &cli.config {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn model_type(text: &str) -> Result<String> {
    let v: serde_json::Value = json::from_str(text)?;
    Ok(v.get("type").and_then(|t| t.as_str()).unwrap_or_default().to_string())
}

fn plant_from(cli_name: &str, cfg: Option<&PlantConfig>) -> Result<PlantConfig> {
    let by_name = PlantConfig::by_name(cli_name)?;
    match cfg {
        None => Ok(by_name),
        Some(c) if std::mem::discriminant(c) == std::mem::discriminant(&by_name) => Ok(c.clone()),
        Some(_) => bail!("config file describes a different plant than --plant {cli_name}"),
    }
}

// ---------------------------------------------------------------- generate

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct GenerateConfig {
    n: Option<usize>,
    horizon: Option<usize>,
    exploration: Exploration,
    plant: Option<PlantConfig>,
    radii: (f64, f64),
    noise: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            n: None,
            horizon: None,
            exploration: Exploration::Held {
                min_hold: 6,
                max_hold: 36,
            },
            plant: None,
            radii: (1.0, 2.0),
            noise: 0.1,
        }
    }
}

fn generate(cli: &Cli, plant: &str, n: Option<usize>, horizon: Option<usize>) -> Result<Outcome> {
    let mut cfg: GenerateConfig = load_config(cli)?;
    cfg.n = n.or(cfg.n);
    cfg.horizon = horizon.or(cfg.horizon);
    let mut run = Run::new(&cli.out, "generate", cli.seed)?;
    match plant {
        "circles" => {
            let d = circles_dataset(cfg.n.unwrap_or(100), cfg.radii, cfg.noise, cli.seed)?;
            let data = RegressionData::new(
                d.points.iter().map(|p| p.to_vec()).collect(),
                d.labels.iter().map(|&l| vec![f64::from(l)]).collect(),
            );
            write_regression_csv(&run.output("circles.csv"), &data)?;
        }
        "abs" => {
            let mut rng = RngStream::new(cli.seed, 0);
            let xs: Vec<Vec<f64>> = (0..cfg.n.unwrap_or(200)).map(|_| vec![rng.uniform(-2.0, 2.0)]).collect();
            let ys = xs.iter().map(|x| vec![x[0].abs()]).collect();
            write_regression_csv(&run.output("abs.csv"), &RegressionData::new(xs, ys))?;
        }
        name => {
            let pc = plant_from(name, cfg.plant.as_ref())?;
            let p = pc.build()?;
            let (dn, dh) = match &pc {
                PlantConfig::RcThermal(c) => (c.months, c.steps_per_day * c.days_per_month),
                PlantConfig::PointMass(_) => (20, 200),
                PlantConfig::Battery(_) => (20, 100),
            };
            let n = cfg.n.unwrap_or(dn);
            let h = cfg.horizon.unwrap_or(dh);
            let rollouts = collect_random_rollouts(p.as_ref(), n, h, cli.seed, cfg.exploration)?;
            write_rollouts_csv(&run.output("rollouts.csv"), &rollouts)?;
            if let PlantConfig::RcThermal(c) = &pc {
                RcThermal::new(c.clone())?.write_exogenous_csv(&run.output("exogenous.csv"))?;
            }
            run.write_json("plant.json", &pc)?;
            cfg.plant = Some(pc);
        }
    }
    run.set_config(&cfg)?;
    run.finish()?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------- train

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct TrainFile {
    icnn: TrainConfig,
    icrnn: IcrnnTrainConfig,
    n_w: usize,
    plant: Option<PlantConfig>,
}

impl Default for TrainFile {
    fn default() -> Self {
        Self {
            icnn: TrainConfig::default(),
            icrnn: IcrnnTrainConfig::default(),
            n_w: 12,
            plant: None,
        }
    }
}

fn train(cli: &Cli, kind: ModelKind, data: &Path, plant: Option<&str>) -> Result<Outcome> {
    let mut cfg: TrainFile = load_config(cli)?;
    cfg.icnn.seed = cli.seed;
    cfg.icrnn.seed = cli.seed;
    if !data.exists() {
        bail!("data file {} does not exist", data.display());
    }
    let mut run = Run::new(&cli.out, "train", cli.seed)?;
    run.input(data);
    match (kind, plant) {
        (ModelKind::Icnn, None) => {
            let d = read_regression_csv(data)?;
            let rep = train_icnn(&d, &cfg.icnn)?;
            run.write_text("model.json", &rep.model.to_json()?)?;
            run.write_text("loss.csv", &loss_csv(&rep.loss_history))?;
            run.write_json("fit.json", &serde_json::json!({"train_rmse": rep.model.mse(&d.inputs, &d.targets)?.sqrt()}))?;
        }
        (ModelKind::Icrnn, None) => bail!("icrnn training reads plant rollouts; pass --plant"),
        (kind, Some(name)) => {
            let pc = plant_from(name, cfg.plant.as_ref())?;
            let p = pc.build()?;
            let rollouts = read_rollouts_csv(data, p.name())?;
            let norm = ModelNormalization::fit(&rollouts, &p.action_bounds())?;
            // the point mass output is the reward, which the controller computes itself
            let want_f = !matches!(pc, PlantConfig::PointMass(_));
            let (f, g, lf, lg) = match kind {
                ModelKind::Icnn => {
                    let (fd, gd) = make_one_step(&rollouts, &norm)?;
                    let g = train_icnn(&gd, &TrainConfig { seed: cli.seed + 1, ..cfg.icnn.clone() })?;
                    let f = if want_f { Some(train_icnn(&fd, &cfg.icnn)?) } else { None };
                    let lf = f.as_ref().map(|r| r.loss_history.clone());
                    (f.map(|r| Net::Icnn(r.model)), Net::Icnn(g.model), lf, g.loss_history)
                }
                ModelKind::Icrnn => {
                    let w = make_windows(&rollouts, cfg.n_w, &norm)?;
                    let g = train_icrnn(&w.dynamics, &IcrnnTrainConfig { seed: cli.seed + 1, ..cfg.icrnn.clone() })?;
                    let f = if want_f { Some(train_icrnn(&w.output, &cfg.icrnn)?) } else { None };
                    let lf = f.as_ref().map(|r| r.loss_history.clone());
                    (f.map(|r| Net::Icrnn(r.model)), Net::Icrnn(g.model), lf, g.loss_history)
                }
            };
            let model = LearnedModel::new(f, g, norm)?;
            run.write_text("model.json", &model.to_json()?)?;
            if let Some(lf) = lf {
                run.write_text("loss_output.csv", &loss_csv(&lf))?;
            }
            run.write_text("loss_dynamics.csv", &loss_csv(&lg))?;
            cfg.plant = Some(pc);
        }
    }
    run.set_config(&cfg)?;
    run.finish()?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------- construct / enumerate

fn grid_deviation(d: usize, f: impl Fn(&[f64]) -> Result<f64>, g: impl Fn(&[f64]) -> Result<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in grid(d, -2.0, 2.0, 10_000) {
        worst = worst.max((f(&x)? - g(&x)?).abs());
    }
    Ok(worst)
}

fn construct(cli: &Cli, model: Option<&Path>, data: Option<&Path>, k: Option<usize>) -> Result<Outcome> {
    let mut cfg: CplConfig = load_config(cli)?;
    cfg.seed = cli.seed;
    if let Some(k) = k {
        cfg.k = k;
    }
    let mut run = Run::new(&cli.out, "construct", cli.seed)?;
    let ma = match (model, data) {
        (Some(m), None) => {
            run.input(m);
            MaxAffine::from_json(&read_text(m)?)?
        }
        (None, Some(d)) => {
            run.input(d);
            let rd = read_regression_csv(d)?;
            if rd.targets.first().map_or(0, Vec::len) != 1 {
                bail!("max-affine fitting needs exactly one target column");
            }
            let ys: Vec<f64> = rd.targets.iter().map(|t| t[0]).collect();
            let fit = fit_cpl(&rd.inputs, &ys, &cfg)?;
            run.write_json("fit.json", &serde_json::json!({"k": cfg.k, "rmse": fit.rmse}))?;
            run.write_text("maxaffine.json", &fit.model.to_json()?)?;
            fit.model
        }
        _ => bail!("construct needs exactly one of --model (max-affine file) or --data with --k"),
    };
    let net = compile_to_icnn(&ma);
    let dev = grid_deviation(ma.dim(), |x| net.eval_scalar(x).map_err(Into::into), |x| ma.eval(x).map_err(Into::into))?;
    run.write_text("icnn.json", &net.to_json()?)?;
    run.write_json(
        "report.json",
        &serde_json::json!({"pieces": ma.len(), "relu_count": net.relu_count(), "grid_max_deviation": dev}),
    )?;
    run.set_config(&cfg)?;
    run.finish()?;
    Ok(Outcome::Success)
}

fn enumerate(cli: &Cli, model: &Path) -> Result<Outcome> {
    let mut run = Run::new(&cli.out, "enumerate", cli.seed)?;
    run.input(model);
    let net = IcnnModel::from_json(&read_text(model)?)?;
    let ma = enumerate_pieces(&net)?;
    let dev = grid_deviation(ma.dim(), |x| net.eval_scalar(x).map_err(Into::into), |x| ma.eval(x).map_err(Into::into))?;
    let back = compile_to_icnn(&ma);
    let round = grid_deviation(ma.dim(), |x| net.eval_scalar(x).map_err(Into::into), |x| back.eval_scalar(x).map_err(Into::into))?;
    run.write_text("maxaffine.json", &ma.to_json()?)?;
    run.write_json(
        "report.json",
        &serde_json::json!({"pieces": ma.len(), "grid_max_deviation": dev, "round_trip_max_deviation": round}),
    )?;
    run.finish()?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------- control

struct ControlFlags {
    horizon: Option<usize>,
    episode: Option<usize>,
    k: Option<usize>,
    tol: Option<f64>,
    max_iters: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct ControlConfig {
    plant: Option<PlantConfig>,
    horizon: Option<usize>,
    episode: Option<usize>,
    /// Plant clock at the start of the episode; the building default is the first test month.
    start: Option<usize>,
    first: SolverConfig,
    warm: SolverConfig,
    margin: f64,
    tou: TouProfile,
    setpoint: f64,
    target: Option<Vec<f64>>,
    state_weight: f64,
    action_weight: f64,
    shooting_k: Option<usize>,
}

impl Default for ControlConfig {
    fn default() -> Self {
        let b = BuildingConfig::default();
        Self {
            plant: None,
            horizon: None,
            episode: None,
            start: None,
            first: b.first,
            warm: b.warm,
            margin: 0.0,
            tou: b.tou,
            setpoint: b.setpoint,
            target: None,
            state_weight: 1.0,
            action_weight: 0.1,
            shooting_k: None,
        }
    }
}

#[derive(Serialize)]
struct ControlMetrics {
    plant: String,
    objective: ObjectiveKind,
    horizon: usize,
    runs: Vec<(String, RunMetrics)>,
    baseline: Option<(String, RunMetrics)>,
}

fn objective_for(kind: ObjectiveKind, pc: &PlantConfig, cfg: &ControlConfig, state_dim: usize) -> Result<Objective> {
    Ok(match (kind, pc) {
        (ObjectiveKind::Energy, _) => Objective::Energy,
        (ObjectiveKind::Tou, PlantConfig::Battery(_)) => {
            let p = cfg.tou.prices(0, cfg.tou.period);
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            Objective::Arbitrage {
                prices: p.iter().map(|x| x - mean).collect(),
            }
        }
        (ObjectiveKind::Tou, _) => Objective::Tou { profile: cfg.tou.clone() },
        (ObjectiveKind::Reward, PlantConfig::PointMass(c)) => Objective::Reward {
            vel_idx: 2,
            c: c.reward_c,
            alpha: c.reward_alpha,
        },
        (ObjectiveKind::Reward, _) => bail!("the reward objective is defined for the point mass only"),
        (ObjectiveKind::Quadratic, _) => Objective::Quadratic {
            target: cfg.target.clone().unwrap_or_else(|| vec![0.0; state_dim]),
            state_weight: cfg.state_weight,
            action_weight: cfg.action_weight,
        },
    })
}

fn control(cli: &Cli, plant: &str, model: &str, objective: ObjectiveKind, flags: ControlFlags) -> Result<Outcome> {
    let mut cfg: ControlConfig = load_config(cli)?;
    let pc = plant_from(plant, cfg.plant.as_ref())?;
    let p = pc.build()?;
    let (dh, de) = match pc {
        PlantConfig::RcThermal(_) => (36, 144),
        PlantConfig::PointMass(_) => (10, 100),
        PlantConfig::Battery(_) => (24, 48),
    };
    cfg.horizon = flags.horizon.or(cfg.horizon).or(Some(dh));
    cfg.episode = flags.episode.or(cfg.episode).or(Some(de));
    cfg.shooting_k = flags.k.or(cfg.shooting_k);
    for s in [&mut cfg.first, &mut cfg.warm] {
        s.seed = cli.seed;
        if let Some(t) = flags.tol {
            s.tol = t;
        }
        if let Some(m) = flags.max_iters {
            s.max_iters = m;
        }
    }
    let mut run = Run::new(&cli.out, "control", cli.seed)?;
    let learned = if model == "oracle" {
        None
    } else {
        let path = Path::new(model);
        run.input(path);
        Some(LearnedModel::from_json(&read_text(path)?)?)
    };
    let oracle = PlantModel { plant: p.as_ref() };
    let m: &dyn HorizonModel = match &learned {
        Some(l) => l,
        None => &oracle,
    };
    if m.state_dim() != p.state_dim() || m.action_dim() != p.action_dim() || m.exo_dim() != p.exo_dim() {
        bail!(
            "model dimensions (state {}, action {}, exogenous {}) do not match plant {} ({}, {}, {})",
            m.state_dim(),
            m.action_dim(),
            m.exo_dim(),
            p.name(),
            p.state_dim(),
            p.action_dim(),
            p.exo_dim()
        );
    }
    let obj = objective_for(objective, &pc, &cfg, p.state_dim())?;
    let horizon = cfg.horizon.expect("set above");
    let episode = cfg.episode.expect("set above");
    let rc = match &pc {
        PlantConfig::RcThermal(c) => Some(RcThermal::new(c.clone())?),
        _ => None,
    };
    // starting point and realized history
    let mem = m.memory();
    let (start, s0, hist): (usize, Vec<f64>, Vec<RawFrame>) = match &rc {
        Some(b) => {
            let t0 = cfg.start.unwrap_or(10 * b.month_len());
            let warm = setpoint_run(b, cfg.setpoint, t0, mem, vec![cfg.setpoint; b.zones()])?;
            let s0 = warm.states.last().cloned().expect("terminal state");
            (t0 + mem, s0, history_from(&warm, mem))
        }
        None => (cfg.start.unwrap_or(0), p.nominal_state(), Vec::new()),
    };
    let mut cl = ClosedLoopConfig {
        horizon,
        objective: obj.clone(),
        first: cfg.first.clone(),
        warm: cfg.warm.clone(),
        margin: cfg.margin,
        planner: Planner::Gradient,
    };
    let tou = matches!(obj, Objective::Tou { .. }).then_some(&cfg.tou);
    let range = learned.as_ref().map(|l| l.norm.state.clone());
    let metrics_of = |r: &Rollout, steps: &[icnn_core::control::StepInfo]| {
        let mut mm = episode_metrics(p.as_ref(), r, &obj, tou, range.as_ref());
        mm.flagged_solves = steps.iter().filter(|s| s.flagged).count();
        mm
    };
    let mut runs = Vec::new();
    let mpc = receding_horizon_run(p.as_ref(), m, &cl, start, episode, s0.clone(), hist.clone())?;
    write_trajectory_csv(&run.output("trajectory.csv"), &mpc)?;
    runs.push(("mpc".to_string(), metrics_of(&mpc.rollout, &mpc.steps)));
    if let Some(k) = cfg.shooting_k {
        cl.planner = Planner::Shooting { k };
        let sh = receding_horizon_run(p.as_ref(), m, &cl, start, episode, s0.clone(), hist)?;
        write_trajectory_csv(&run.output("shooting_trajectory.csv"), &sh)?;
        runs.push((format!("shooting_k{k}"), metrics_of(&sh.rollout, &sh.steps)));
    }
    let baseline = match &rc {
        Some(b) => {
            let r = setpoint_run(b, cfg.setpoint, start, episode, s0)?;
            let bm = metrics_of(&r, &[]);
            write_trajectory_csv(&run.output("baseline_trajectory.csv"), &ClosedLoopRun { rollout: r, steps: vec![] })?;
            Some(("setpoint".to_string(), bm))
        }
        None => None,
    };
    if let Some((_, b)) = &baseline {
        if b.total_cost.abs() > 0.0 {
            for (_, r) in &mut runs {
                r.savings_percent = Some(savings_percent(b.total_cost, r.total_cost));
            }
        }
    }
    run.write_json(
        "metrics.json",
        &ControlMetrics {
            plant: p.name().to_string(),
            objective,
            horizon,
            runs,
            baseline,
        },
    )?;
    run.set_config(&cfg)?;
    run.finish()?;
    Ok(Outcome::Success)
}

// ---------------------------------------------------------------- verify

fn verify_net(net: &Net, suite: Suite, samples: usize, seed: u64, label: &str) -> Result<Vec<VerifyReport>> {
    let mut reps = match (net, suite) {
        (Net::Icnn(m), Suite::Convexity) => vec![convexity_icnn(m, samples, seed)?],
        (Net::Icrnn(m), Suite::Convexity) => vec![convexity_icrnn(m, m.memory_window() + 1, samples, seed)?],
        (Net::Icnn(m), Suite::Gradients) => gradients_icnn(m, samples, seed)?,
        (Net::Icrnn(m), Suite::Gradients) => gradients_icrnn(m, m.memory_window() + 1, samples, seed)?,
        (Net::Linear(l), Suite::Convexity) => {
            let d = l.theta.cols() - 1;
            vec![midpoint_check(d, -2.0, 2.0, samples, seed, 1e-8, |x| Ok(l.eval(x)))?]
        }
        (Net::Linear(_), _) => bail!("gradient suite is defined for icnn and icrnn models"),
        _ => unreachable!("suite checked by caller"),
    };
    for r in &mut reps {
        r.target = format!("{label} {}", r.target).trim().to_string();
    }
    Ok(reps)
}

fn verify(cli: &Cli, suite: Suite, model: Option<&Path>, samples: Option<usize>) -> Result<Outcome> {
    let mut run = Run::new(&cli.out, "verify", cli.seed)?;
    let seed = cli.seed;
    let reports = match suite {
        Suite::Theorem1 => vec![theorem1_suite(50, 8, 5, samples.unwrap_or(100_000), seed)?],
        Suite::Theorem2 => vec![theorem2_suite(&(1..=10).collect::<Vec<_>>(), samples.unwrap_or(10_000), seed)?],
        Suite::Convexity | Suite::Gradients => {
            let path = model.ok_or_else(|| anyhow!("--model is required for the {suite:?} suite"))?;
            run.input(path);
            let text = read_text(path)?;
            let n = samples.unwrap_or(if suite == Suite::Convexity { 100_000 } else { 100 });
            match model_type(&text)?.as_str() {
                "icnn" => verify_net(&Net::Icnn(IcnnModel::from_json(&text)?), suite, n, seed, "")?,
                "icrnn" => verify_net(&Net::Icrnn(IcrnnModel::from_json(&text)?), suite, n, seed, "")?,
                "learned_dynamics" => {
                    let lm = LearnedModel::from_json(&text)?;
                    let mut v = Vec::new();
                    if let Some(f) = &lm.f {
                        v.extend(verify_net(f, suite, n, seed, "output")?);
                    }
                    v.extend(verify_net(&lm.g, suite, n, seed, "dynamics")?);
                    v
                }
                "maxaffine" if suite == Suite::Convexity => {
                    let ma = MaxAffine::from_json(&text)?;
                    let mut r = midpoint_check(ma.dim(), -2.0, 2.0, n, seed, 1e-8, |x| Ok(vec![ma.eval(x)?]))?;
                    r.target = "maxaffine".into();
                    vec![r]
                }
                other => bail!("cannot run the {suite:?} suite on a model of type {other:?}"),
            }
        }
    };
    for r in &reports {
        println!("{}", r.line());
        if !r.passed {
            if let Some(o) = &r.offending {
                println!("  offending sample {} (component {}): {:?}", o.index, o.component, o.point);
            }
            if let Some(w) = &r.weight_issue {
                println!("  negative constrained weight: {w}");
            }
        }
    }
    run.write_json("verify_report.json", &reports)?;
    run.set_config(&serde_json::json!({"suite": suite, "samples": samples}))?;
    run.finish()?;
    Ok(if reports.iter().all(|r| r.passed) {
        Outcome::Success
    } else {
        Outcome::VerificationFailed
    })
}

// ---------------------------------------------------------------- experiment

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct BatteryExperimentConfig {
    instances: usize,
    horizon: usize,
    k: usize,
    resolution: f64,
}

impl Default for BatteryExperimentConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            horizon: 5,
            k: 100,
            resolution: 0.05,
        }
    }
}

fn experiment(cli: &Cli, name: ExperimentName) -> Result<Outcome> {
    let mut run = Run::new(&cli.out, "experiment", cli.seed)?;
    match name {
        ExperimentName::Building => {
            let mut cfg: BuildingConfig = load_config(cli)?;
            cfg.seed = cli.seed;
            cfg.train.seed = cli.seed;
            let out = building_experiment(&cfg)?;
            run.write_json("report.json", &out.report)?;
            for (n, r) in &out.runs {
                write_trajectory_csv(&run.output(&format!("trajectory_{n}.csv")), r)?;
            }
            run.write_text("icrnn_model.json", &out.models.icrnn.to_json()?)?;
            run.write_text("linear_model.json", &out.models.linear.to_json()?)?;
            run.write_text("loss_output.csv", &loss_csv(&out.models.loss_output))?;
            run.write_text("loss_dynamics.csv", &loss_csv(&out.models.loss_dynamics))?;
            run.set_config(&cfg)?;
        }
        ExperimentName::Battery => {
            let cfg: BatteryExperimentConfig = load_config(cli)?;
            let res = battery_experiment(cfg.instances, cfg.horizon, cfg.k, cfg.resolution, cli.seed)?;
            run.write_json("battery.json", &res)?;
            run.set_config(&cfg)?;
        }
        ExperimentName::Circles => {
            let mut cfg: CirclesConfig = load_config(cli)?;
            cfg.seed = cli.seed;
            cfg.train.seed = cli.seed;
            let (model, rep) = circles_experiment(&cfg)?;
            run.write_text("model.json", &model.to_json()?)?;
            run.write_json("report.json", &rep)?;
            run.set_config(&cfg)?;
        }
    }
    run.finish()?;
    Ok(Outcome::Success)
}
