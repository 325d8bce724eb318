use peierls::experiments::{make_semiclassical_state, wigner, SemiclassicalState, Setup};
use peierls::fiber::{compute_band, default_gap_min, FiberModel};
use peierls::grid::{GridSpec, MomentumWindow};
use peierls::harness::{self, ExperimentKind, SlopeOutcome};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: peierls::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Momentum grid of N = L / eps nodes on the torus.
#[pyclass(name = "Grid", frozen)]
struct PyGrid {
    inner: GridSpec,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(l: f64, eps: f64) -> PyResult<Self> {
        Ok(Self {
            inner: GridSpec::new(l, eps).map_err(err)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn eps(&self) -> f64 {
        self.inner.eps()
    }

    fn p_nodes(&self) -> Vec<f64> {
        self.inner.p_nodes()
    }

    fn x_nodes(&self) -> Vec<f64> {
        self.inner.x_nodes()
    }

    fn __repr__(&self) -> String {
        format!("Grid(L={}, eps={}, N={})", self.inner.l(), self.inner.eps(), self.inner.n())
    }
}

/// Nelson fiber: one boson mode truncated at n_max quanta.
#[pyclass(name = "FiberModel", frozen)]
struct PyFiberModel {
    inner: FiberModel,
}

#[pymethods]
impl PyFiberModel {
    #[new]
    #[pyo3(signature = (omega=1.0, k0=1.0, g=0.2, n_max=4))]
    fn new(omega: f64, k0: f64, g: f64, n_max: usize) -> PyResult<Self> {
        Ok(Self {
            inner: FiberModel::nelson(omega, k0, g, n_max).map_err(err)?,
        })
    }

    #[staticmethod]
    fn twolevel(gap0: f64, theta_amp: f64, e_amp: f64) -> PyResult<Self> {
        Ok(Self {
            inner: FiberModel::twolevel(gap0, theta_amp, e_amp).map_err(err)?,
        })
    }

    #[getter]
    fn f(&self) -> usize {
        self.inner.f()
    }

    /// (energies, gaps) of the ground band at the window nodes.
    #[pyo3(signature = (grid, center=0.0, half_width=1.2))]
    fn band(&self, grid: &PyGrid, center: f64, half_width: f64) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let w = MomentumWindow::new(center, half_width).map_err(err)?;
        let gm = default_gap_min(&self.inner, &grid.inner, &w).map_err(err)?;
        let b = compute_band(&self.inner, &grid.inner, &w, gm).map_err(err)?;
        let nodes = w.nodes(&grid.inner);
        Ok((
            nodes.iter().map(|&j| b.p[j]).collect(),
            nodes.iter().map(|&j| b.e[j]).collect(),
            nodes.iter().map(|&j| b.gap[j]).collect(),
        ))
    }
}

/// Confinement time of the reference geometry.
#[pyfunction]
fn max_time() -> PyResult<f64> {
    Setup::reference().and_then(|s| s.max_time()).map_err(err)
}

/// Least-squares slope, intercept and R^2 of log value against log eps.
#[pyfunction]
fn fit_slope(eps: Vec<f64>, values: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let rows: Vec<(f64, f64)> = eps.into_iter().zip(values).collect();
    let f = harness::fit_slope(&rows).map_err(err)?;
    Ok((f.slope, f.intercept, f.r2))
}

/// Runs a sweep from configuration text; returns (rows, slopes, config hash).
#[pyfunction]
#[pyo3(signature = (config, experiment=None))]
fn sweep(
    py: Python<'_>,
    config: &str,
    experiment: Option<&str>,
) -> PyResult<(Vec<(f64, f64, f64)>, Vec<(f64, Option<f64>, Option<f64>)>, String)> {
    let cfg = harness::parse_config(config).map_err(err)?;
    let exp = match experiment {
        Some(name) => ExperimentKind::parse(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown experiment `{name}`")))?,
        None => cfg
            .experiment
            .ok_or_else(|| PyValueError::new_err("no experiment selected"))?,
    };
    let r = py.detach(|| harness::run_sweep(&cfg, exp)).map_err(err)?;
    let rows = r.rows.iter().map(|m| (m.eps, m.t_macro, m.estimate)).collect();
    let slopes = r
        .slopes
        .iter()
        .map(|s| match &s.outcome {
            SlopeOutcome::Fit(f) => (s.t, Some(f.slope), Some(f.r2)),
            _ => (s.t, None, None),
        })
        .collect();
    Ok((rows, slopes, r.config_hash))
}

/// Self-test assertions as (name, value, tolerance, passed).
#[pyfunction]
fn selftest(py: Python<'_>) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let checks = py.detach(harness::selftest).map_err(err)?;
    Ok(checks.into_iter().map(|c| {
        let pass = c.pass();
        (c.name, c.value, c.tol, pass)
    }).collect())
}

/// Wigner table of a Gaussian wavepacket as rows over positions.
#[pyfunction]
#[pyo3(signature = (grid, x0=0.5, p0=0.3, sigma=1.0))]
fn wavepacket_wigner(grid: &PyGrid, x0: f64, p0: f64, sigma: f64) -> PyResult<Vec<Vec<f64>>> {
    let st = SemiclassicalState::Wavepacket { x0, p0, sigma };
    let phi = make_semiclassical_state(&st, &grid.inner).map_err(err)?;
    let w = wigner(&phi, &grid.inner).map_err(err)?;
    Ok(w.values.outer_iter().map(|r| r.to_vec()).collect())
}

#[pymodule]
fn peierls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyFiberModel>()?;
    m.add_function(wrap_pyfunction!(max_time, m)?)?;
    m.add_function(wrap_pyfunction!(fit_slope, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    m.add_function(wrap_pyfunction!(wavepacket_wigner, m)?)?;
    Ok(())
}
