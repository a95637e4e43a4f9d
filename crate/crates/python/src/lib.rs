//! Python bindings: models, conversions, the verification suites and a few
//! plant/controller entry points. Errors surface as `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use icnn_core::control::{mpc_solve, CostSpec, HorizonContext, HorizonModel, LearnedModel, MpcProblem, PlantModel, SolverConfig};
use icnn_core::icnn::{train_icnn, IcnnModel, RegressionData, TrainConfig};
use icnn_core::icrnn::{IcrnnDims, IcrnnModel};
use icnn_core::maxaffine::{compile_to_icnn, enumerate_pieces, fit_cpl, CplConfig, MaxAffine};
use icnn_core::numeric::RngStream;
use icnn_core::plants::{Battery, BatteryConfig, PlantConfig};
use icnn_core::verify;

fn err(e: icnn_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Icnn", module = "icnn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyIcnn {
    inner: IcnnModel,
}

#[pymethods]
impl PyIcnn {
    /// Random nonnegative weights; `widths` includes the output width.
    #[staticmethod]
    #[pyo3(signature = (state_dim, input_dim, widths, seed=0))]
    fn random(state_dim: usize, input_dim: usize, widths: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut rng = RngStream::new(seed, 0);
        Ok(Self {
            inner: IcnnModel::random(state_dim, input_dim, &widths, &mut rng).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: IcnnModel::from_json(s).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Fits a model; `widths` are the hidden widths. Returns `(model, loss_history)`.
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, widths, epochs=200, lr=1e-3, batch=64, seed=0, state_dim=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        inputs: Vec<Vec<f64>>,
        targets: Vec<Vec<f64>>,
        widths: Vec<usize>,
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        state_dim: usize,
    ) -> PyResult<(Self, Vec<f64>)> {
        let data = RegressionData {
            state_dim,
            inputs,
            targets,
        };
        let cfg = TrainConfig {
            widths,
            epochs,
            lr,
            batch,
            seed,
        };
        let rep = train_icnn(&data, &cfg).map_err(err)?;
        Ok((Self { inner: rep.model }, rep.loss_history))
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(err)
    }

    fn grad_input(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_input(&x).map_err(err)
    }

    #[getter]
    fn relu_count(&self) -> usize {
        self.inner.relu_count()
    }

    fn is_nonnegative(&self) -> bool {
        self.inner.is_nonnegative()
    }

    /// All `2^K` affine pieces of a one-hidden-layer model with zero passthrough.
    fn enumerate_pieces(&self) -> PyResult<PyMaxAffine> {
        Ok(PyMaxAffine {
            inner: enumerate_pieces(&self.inner).map_err(err)?,
        })
    }

    /// Midpoint-convexity sampling check; returns `(passed, max_violation)`.
    #[pyo3(signature = (samples=10_000, seed=0))]
    fn check_convexity(&self, samples: usize, seed: u64) -> PyResult<(bool, f64)> {
        let r = verify::convexity_icnn(&self.inner, samples, seed).map_err(err)?;
        Ok((r.passed, r.max_violation))
    }

    /// Gradient checks against central differences; returns `(passed, worst relative error)`.
    #[pyo3(signature = (points=100, seed=0))]
    fn check_gradients(&self, points: usize, seed: u64) -> PyResult<(bool, f64)> {
        let reps = verify::gradients_icnn(&self.inner, points, seed).map_err(err)?;
        Ok((reps.iter().all(|r| r.passed), reps.iter().map(|r| r.max_violation).fold(0.0, f64::max)))
    }
}

#[pyclass(name = "Icrnn", module = "icnn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyIcrnn {
    inner: IcrnnModel,
}

#[pymethods]
impl PyIcrnn {
    #[staticmethod]
    #[pyo3(signature = (state_dim, d, hidden, output, n_w, seed=0))]
    fn random(state_dim: usize, d: usize, hidden: usize, output: usize, n_w: usize, seed: u64) -> PyResult<Self> {
        let dims = IcrnnDims {
            state_dim,
            d,
            hidden,
            output,
            n_w,
        };
        let mut rng = RngStream::new(seed, 0);
        Ok(Self {
            inner: IcrnnModel::random(dims, &mut rng).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: IcrnnModel::from_json(s).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Outputs at every frame of a sequence started from zero memory.
    fn outputs(&self, frames: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.inner.outputs(&frames).map_err(err)
    }

    #[pyo3(signature = (length, samples=10_000, seed=0))]
    fn check_convexity(&self, length: usize, samples: usize, seed: u64) -> PyResult<(bool, f64)> {
        let r = verify::convexity_icrnn(&self.inner, length, samples, seed).map_err(err)?;
        Ok((r.passed, r.max_violation))
    }

    #[pyo3(signature = (length, points=100, seed=0))]
    fn check_gradients(&self, length: usize, points: usize, seed: u64) -> PyResult<(bool, f64)> {
        let reps = verify::gradients_icrnn(&self.inner, length, points, seed).map_err(err)?;
        Ok((reps.iter().all(|r| r.passed), reps.iter().map(|r| r.max_violation).fold(0.0, f64::max)))
    }
}

#[pyclass(name = "MaxAffine", module = "icnn_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMaxAffine {
    inner: MaxAffine,
}

#[pymethods]
impl PyMaxAffine {
    /// `pieces` is a list of `(a, b)` for `max_i a_i . x + b_i`.
    #[new]
    fn new(pieces: Vec<(Vec<f64>, f64)>) -> PyResult<Self> {
        Ok(Self {
            inner: MaxAffine::new(pieces).map_err(err)?,
        })
    }

    /// Convex piecewise-linear least-squares fit with `k` pieces.
    #[staticmethod]
    #[pyo3(signature = (inputs, targets, k, seed=0))]
    fn fit(inputs: Vec<Vec<f64>>, targets: Vec<f64>, k: usize, seed: u64) -> PyResult<(Self, f64)> {
        let cfg = CplConfig {
            k,
            seed,
            ..CplConfig::default()
        };
        let f = fit_cpl(&inputs, &targets, &cfg).map_err(err)?;
        Ok((Self { inner: f.model }, f.rmse))
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MaxAffine::from_json(s).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&x).map_err(err)
    }

    fn pieces(&self) -> Vec<(Vec<f64>, f64)> {
        self.inner.pieces().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Exact nonnegative-weight network with `K - 1` ReLUs.
    fn compile(&self) -> PyIcnn {
        PyIcnn {
            inner: compile_to_icnn(&self.inner),
        }
    }
}

#[pyclass(name = "LearnedModel", module = "icnn_py")]
struct PyLearnedModel {
    inner: LearnedModel,
}

#[pymethods]
impl PyLearnedModel {
    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: LearnedModel::from_json(s).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    /// Rolls the model forward from `s0` with no recorded history; returns
    /// `(states s_1..s_T, outputs y_0..y_{T-1})` in physical units.
    fn predict(&self, s0: Vec<f64>, exogenous: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let ctx = HorizonContext {
            history: Vec::new(),
            s0,
            exogenous,
        };
        let p = self.inner.predict(&ctx, &actions).map_err(err)?;
        Ok((p.states, p.outputs))
    }
}

/// Simulates a named plant under an action sequence; returns `(states, outputs)`
/// with `states` including `s0`.
#[pyfunction]
#[pyo3(signature = (plant, s0, actions, start=0))]
fn simulate(plant: &str, s0: Vec<f64>, actions: Vec<Vec<f64>>, start: usize) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let p = PlantConfig::by_name(plant).and_then(|c| c.build()).map_err(err)?;
    let mut states = vec![s0];
    let mut outputs = Vec::with_capacity(actions.len());
    for (k, u) in actions.iter().enumerate() {
        let s = states.last().expect("seeded");
        let (sn, y) = icnn_core::plants::checked_step(p.as_ref(), s, u, start + k).map_err(err)?;
        states.push(sn);
        outputs.push(y);
    }
    Ok((states, outputs))
}

/// Battery arbitrage MPC on the exact plant model; returns `(actions, objective)`.
#[pyfunction]
#[pyo3(signature = (prices, soc, seed=0))]
fn battery_mpc(prices: Vec<f64>, soc: f64, seed: u64) -> PyResult<(Vec<f64>, f64)> {
    let plant = Battery::new(BatteryConfig::default());
    let t = prices.len();
    let prob = MpcProblem {
        horizon: t,
        cost: CostSpec::Arbitrage { prices },
        action_lo: vec![-1.0],
        action_hi: vec![1.0],
        state_bounds: Some((vec![0.0], vec![1.0])),
        context: HorizonContext {
            history: Vec::new(),
            s0: vec![soc],
            exogenous: vec![Vec::new(); t],
        },
    };
    let model = PlantModel { plant: &plant };
    let cfg = SolverConfig {
        seed,
        ..SolverConfig::default()
    };
    let sol = mpc_solve(&model, &prob, &cfg, None).map_err(err)?;
    Ok((sol.actions.into_iter().map(|u| u[0]).collect(), sol.objective))
}

/// Compiler exactness over random max-affine instances; returns `(passed, max_error)`.
#[pyfunction]
#[pyo3(signature = (instances=50, points=100_000, seed=0))]
fn check_compiler(instances: usize, points: usize, seed: u64) -> PyResult<(bool, f64)> {
    let r = verify::theorem1_suite(instances, 8, 5, points, seed).map_err(err)?;
    Ok((r.passed, r.max_violation))
}

/// Piece enumeration for K = 1..=max_k; returns `(passed, max_error)`.
#[pyfunction]
#[pyo3(signature = (max_k=10, grid_points=10_000, seed=0))]
fn check_enumeration(max_k: usize, grid_points: usize, seed: u64) -> PyResult<(bool, f64)> {
    let ks: Vec<usize> = (1..=max_k).collect();
    let r = verify::theorem2_suite(&ks, grid_points, seed).map_err(err)?;
    Ok((r.passed, r.max_violation))
}

#[pymodule]
fn icnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIcnn>()?;
    m.add_class::<PyIcrnn>()?;
    m.add_class::<PyMaxAffine>()?;
    m.add_class::<PyLearnedModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(battery_mpc, m)?)?;
    m.add_function(wrap_pyfunction!(check_compiler, m)?)?;
    m.add_function(wrap_pyfunction!(check_enumeration, m)?)?;
    Ok(())
}
