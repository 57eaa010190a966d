//! Python bindings: scenarios, rate evaluation, feasibility runs and boundary sweeps.

use misobf_core::apb::{DecisionThresholds, Verdict};
use misobf_core::model::{compute_rates_with, compute_sinrs};
use misobf_core::pareto::{sweep_boundary, BisectionConfig, Solver};
use misobf_core::projop::ProjectionConfig;
use misobf_core::sim::{simulate, Algorithm};
use misobf_core::transform::make_betas;
use misobf_core::{BeamformerSet, FeasibilityTarget, LiftedInstance, LogBase, RateProfile, Scenario};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_err)
}

/// An M-cell, K-antenna MISO interference channel.
#[pyclass(name = "Scenario", module = "misobf", frozen)]
struct PyScenario {
    inner: Scenario,
}

#[pymethods]
impl PyScenario {
    /// `channels[j][i]` is the channel h_ji from BS j to user i.
    #[new]
    fn new(channels: Vec<Vec<Vec<Complex64>>>, powers: Vec<f64>, noise_vars: Vec<f64>) -> PyResult<Self> {
        let m = channels.len();
        let k = channels.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if channels.iter().any(|r| r.len() != m) {
            return Err(value_err("channels must be M x M x K"));
        }
        let flat = channels.into_iter().flatten().collect();
        let inner = Scenario::new(m, k, flat, powers, noise_vars).map_err(value_err)?;
        Ok(PyScenario { inner })
    }

    /// I.i.d. CN(0, 1) channels drawn from a seeded generator.
    #[staticmethod]
    #[pyo3(signature = (m, k, powers, noise_vars=None, seed=0))]
    fn random(m: usize, k: usize, powers: Vec<f64>, noise_vars: Option<Vec<f64>>, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = noise_vars.unwrap_or_else(|| vec![1.0; m]);
        let inner = Scenario::random_cscg(m, k, powers, noise, &mut rng).map_err(value_err)?;
        Ok(PyScenario { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: Scenario::from_json(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells()
    }

    #[getter]
    fn antennas(&self) -> usize {
        self.inner.antennas()
    }

    #[getter]
    fn powers(&self) -> Vec<f64> {
        self.inner.powers().to_vec()
    }

    #[getter]
    fn noise_vars(&self) -> Vec<f64> {
        self.inner.noise_vars().to_vec()
    }

    fn channel(&self, j: usize, i: usize) -> PyResult<Vec<Complex64>> {
        let m = self.inner.cells();
        if j >= m || i >= m {
            return Err(value_err(format!("cell index out of range for M = {m}")));
        }
        Ok(self.inner.channel(j, i).to_vec())
    }

    fn __repr__(&self) -> String {
        format!("Scenario(M={}, K={})", self.inner.cells(), self.inner.antennas())
    }
}

/// Outcome of one feasibility run.
#[pyclass(name = "FeasibilityResult", module = "misobf", frozen, get_all)]
struct PyFeasibilityResult {
    /// "feasible", "infeasible" or "timeout".
    verdict: String,
    rounds: usize,
    messages: usize,
    /// Achieved SINRs of the returned beamformers, or of the last candidate.
    snrs: Vec<f64>,
    /// Beamformers of a feasible run, else `None`.
    beamformers: Option<Vec<Vec<Complex64>>>,
    /// Per-round `v_i` values.
    v: Vec<Vec<f64>>,
    /// Per-round change of the candidate point.
    x_delta: Vec<f64>,
}

#[pymethods]
impl PyFeasibilityResult {
    #[getter]
    fn feasible(&self) -> bool {
        self.verdict == "feasible"
    }

    fn __repr__(&self) -> String {
        format!("FeasibilityResult(verdict={:?}, rounds={})", self.verdict, self.rounds)
    }
}

fn beamformer_set(s: &Scenario, w: Vec<Vec<Complex64>>) -> PyResult<BeamformerSet> {
    if w.len() != s.cells() || w.iter().any(|o| o.len() != s.antennas()) {
        return Err(value_err("beamformers must be M vectors of length K"));
    }
    Ok(BeamformerSet::new(w))
}

/// Rates of every user for the given beamformers.
#[pyfunction]
#[pyo3(signature = (scenario, beamformers, log_base="2"))]
fn rates(scenario: &PyScenario, beamformers: Vec<Vec<Complex64>>, log_base: &str) -> PyResult<Vec<f64>> {
    let w = beamformer_set(&scenario.inner, beamformers)?;
    let r = compute_rates_with(&scenario.inner, &w, parse(log_base)?).map_err(value_err)?;
    Ok(r.as_slice().to_vec())
}

#[pyfunction]
fn sinrs(scenario: &PyScenario, beamformers: Vec<Vec<Complex64>>) -> PyResult<Vec<f64>> {
    let w = beamformer_set(&scenario.inner, beamformers)?;
    compute_sinrs(&scenario.inner, &w).map_err(value_err)
}

/// SNR targets `base^(alpha_i r0) - 1`.
#[pyfunction]
#[pyo3(name = "make_betas", signature = (alpha, r0, log_base="2"))]
fn py_make_betas(alpha: Vec<f64>, r0: f64, log_base: &str) -> PyResult<Vec<f64>> {
    let p = RateProfile::new(alpha).map_err(value_err)?;
    Ok(make_betas(&p, r0, parse(log_base)?).map_err(value_err)?.betas)
}

/// Decides whether the targets are jointly achievable.
///
/// Give either `targets` (SNR values) or `alpha` together with `r0`.
#[pyfunction]
#[pyo3(signature = (
    scenario, targets=None, alpha=None, r0=None, algorithm="apb",
    eps=0.002, xi=0.1, max_rounds=2000, log_base="2"
))]
#[allow(clippy::too_many_arguments)]
fn feasible(
    py: Python<'_>,
    scenario: &PyScenario,
    targets: Option<Vec<f64>>,
    alpha: Option<Vec<f64>>,
    r0: Option<f64>,
    algorithm: &str,
    eps: f64,
    xi: f64,
    max_rounds: usize,
    log_base: &str,
) -> PyResult<PyFeasibilityResult> {
    let s = &scenario.inner;
    let base: LogBase = parse(log_base)?;
    let target = match (targets, alpha, r0) {
        (Some(b), None, None) => FeasibilityTarget::from_betas(b),
        (None, Some(a), Some(r)) => RateProfile::new(a).and_then(|p| make_betas(&p, r, base)),
        _ => return Err(value_err("give targets, or alpha together with r0")),
    }
    .map_err(value_err)?;
    let algorithm: Algorithm = parse(algorithm)?;
    let th = DecisionThresholds {
        eps,
        xi,
        max_rounds,
        ..Default::default()
    };
    let out = py.detach(|| {
        let instance = LiftedInstance::build(s, &target)?;
        simulate(&instance, algorithm, &th, &ProjectionConfig::default())
    });
    let out = out.map_err(value_err)?;
    let report = out.report;
    let (snrs, beamformers) = match &report.verdict {
        Verdict::Feasible { beamformers, .. } => (
            compute_sinrs(s, beamformers).map_err(value_err)?,
            Some(beamformers.omegas.clone()),
        ),
        _ => (
            report
                .trace
                .last()
                .map(|t| t.snr.clone())
                .unwrap_or_else(|| vec![0.0; s.cells()]),
            None,
        ),
    };
    Ok(PyFeasibilityResult {
        verdict: report.verdict.label().to_string(),
        rounds: report.rounds,
        messages: out.log.messages,
        snrs,
        beamformers,
        v: report.trace.iter().map(|t| t.v.clone()).collect(),
        x_delta: report.trace.iter().map(|t| t.x_delta).collect(),
    })
}

/// Pareto boundary over a simplex grid of rate profiles.
///
/// Returns one dict per profile with keys `alpha`, `r_sum`, `rates`.
#[pyfunction]
#[pyo3(signature = (scenario, alpha_grid=11, tol=1e-3, algorithm="cpb", max_rounds=300, log_base="2"))]
fn boundary<'py>(
    py: Python<'py>,
    scenario: &PyScenario,
    alpha_grid: usize,
    tol: f64,
    algorithm: &str,
    max_rounds: usize,
    log_base: &str,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let s = &scenario.inner;
    let cfg = BisectionConfig {
        tol,
        solver: parse::<Solver>(algorithm)?,
        base: parse(log_base)?,
        max_rounds,
        ..Default::default()
    };
    let points = py
        .detach(|| {
            let alphas = RateProfile::simplex_grid(s.cells(), alpha_grid)?;
            sweep_boundary(
                s,
                &alphas,
                &cfg,
                &DecisionThresholds::default(),
                &ProjectionConfig::default(),
            )
        })
        .map_err(value_err)?;
    points
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("alpha", p.alpha.as_slice().to_vec())?;
            d.set_item("r_sum", p.r_sum)?;
            d.set_item("rates", p.rates.as_slice().to_vec())?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn misobf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyFeasibilityResult>()?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    m.add_function(wrap_pyfunction!(sinrs, m)?)?;
    m.add_function(wrap_pyfunction!(py_make_betas, m)?)?;
    m.add_function(wrap_pyfunction!(feasible, m)?)?;
    m.add_function(wrap_pyfunction!(boundary, m)?)?;
    Ok(())
}
