//! Python bindings. Results come back as plain dicts and lists; two-qubit
//! states are wrapped in `State`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sagnac_core::chsh::{s_from_count_grid, s_of_state, ChshAngles, CountGrid, SResult};
use sagnac_core::expsim::{self, BudgetInputs, ExperimentPlan};
use sagnac_core::io::{parse_count_table, polarization_ket, LayoutMap, RunConfig};
use sagnac_core::polarization::{self, StokesSample};
use sagnac_core::qstate::{bell_psi_minus, concurrence, fidelity_to_pure, DensityMatrix};
use sagnac_core::source::{self, combined_source_state, SourceParams};
use sagnac_core::tomography::{self, standard_tomo_settings, TomoCounts};

fn err(e: sagnac_core::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn s_dict<'py>(py: Python<'py>, r: &SResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("s", r.s)?;
    d.set_item("abs_s", r.abs_s())?;
    d.set_item("delta_s", r.delta_s)?;
    d.set_item("tsirelson_gap", r.tsirelson_gap())?;
    d.set_item("e", r.e.to_vec())?;
    d.set_item("delta_e", r.delta_e.to_vec())?;
    d.set_item("total_counts", r.total_counts)?;
    Ok(d)
}

fn angles_from(directions_deg: Option<[f64; 4]>) -> ChshAngles {
    match directions_deg {
        Some([a, ap, b, bp]) => ChshAngles::from_directions(a.to_radians(), ap.to_radians(), b.to_radians(), bp.to_radians()),
        None => ChshAngles::canonical(),
    }
}

/// A two-qubit density matrix in the (HH, HV, VH, VV) basis.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct State {
    rho: DensityMatrix,
}

#[pymethods]
impl State {
    /// Fidelity ⟨Ψ⁻|ρ|Ψ⁻⟩.
    fn fidelity(&self) -> PyResult<f64> {
        fidelity_to_pure(&self.rho, &bell_psi_minus()).map_err(err)
    }

    fn concurrence(&self) -> PyResult<f64> {
        concurrence(&self.rho).map_err(err)
    }

    /// Signed S for analyzer directions (a, a′, b, b′) in degrees; canonical by default.
    #[pyo3(signature = (directions_deg=None))]
    fn s(&self, directions_deg: Option<[f64; 4]>) -> f64 {
        s_of_state(&self.rho, &angles_from(directions_deg))
    }

    fn min_eigenvalue(&self) -> f64 {
        self.rho.min_eigenvalue()
    }

    /// (real part, imaginary part) as nested lists.
    fn matrix(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let m = self.rho.matrix();
        let part = |f: fn(&sagnac_core::numerics::C64) -> f64| (0..4).map(|i| (0..4).map(|j| f(&m[(i, j)])).collect()).collect();
        (part(|z| z.re), part(|z| z.im))
    }

    fn __repr__(&self) -> String {
        format!("State(fidelity={:.6}, min_eigenvalue={:.3e})", self.fidelity().unwrap_or(f64::NAN), self.min_eigenvalue())
    }
}

#[pyfunction]
fn psi_minus() -> State {
    State { rho: bell_psi_minus().density() }
}

/// State of the source with balance P, phase and crystal offset (mm).
#[pyfunction]
#[pyo3(signature = (balance=1.0, phase=0.0, crystal_offset_mm=0.0))]
fn source_state(balance: f64, phase: f64, crystal_offset_mm: f64) -> PyResult<State> {
    let params = SourceParams { balance, phase, crystal_offset_mm, ..SourceParams::default() };
    Ok(State { rho: combined_source_state(&params).map_err(err)? })
}

/// CHSH analysis of a count table file.
#[pyfunction]
#[pyo3(signature = (path, layout=None))]
fn analyze_counts<'py>(py: Python<'py>, path: PathBuf, layout: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let layout = layout.map_or_else(|| Ok(LayoutMap::default()), LayoutMap::parse).map_err(err)?;
    let grid = parse_count_table(&path, &layout).map_err(err)?;
    s_dict(py, &s_from_count_grid(&grid).map_err(err)?)
}

/// CHSH analysis of a 4×4 grid indexed [A][B], A = (a, a⊥, a′, a′⊥).
#[pyfunction]
fn s_from_counts<'py>(py: Python<'py>, counts: [[f64; 4]; 4]) -> PyResult<Bound<'py, PyDict>> {
    let grid = CountGrid::new(counts, 0.0).map_err(err)?;
    s_from_count_grid(&grid).map_err(err).and_then(|r| s_dict(py, &r))
}

/// Simulated CHSH campaign on Ψ⁻.
#[pyfunction]
#[pyo3(signature = (seed, repetitions=25, pair_rate=4100.0, integration_time=60.0))]
fn run_campaign<'py>(
    py: Python<'py>,
    seed: u64,
    repetitions: usize,
    pair_rate: f64,
    integration_time: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = ExperimentPlan { repetitions, pair_rate, integration_time, ..ExperimentPlan::reference_campaign(seed) };
    let c = py.detach(|| expsim::run_chsh_campaign(&plan)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("pooled", s_dict(py, &c.pooled)?)?;
    d.set_item("scatter", c.scatter)?;
    d.set_item("repetition_abs_s", c.repetitions.iter().map(|r| r.abs_s()).collect::<Vec<_>>())?;
    Ok(d)
}

/// Tomography counts for the 16 standard settings (order H, V, D, R per arm).
#[pyfunction]
fn simulate_tomo_counts(state: &State, flux: f64, seed: u64) -> PyResult<Vec<f64>> {
    let settings = standard_tomo_settings();
    Ok(expsim::simulate_tomo_counts(&state.rho, &settings, flux, seed).map_err(err)?.counts().to_vec())
}

/// Reconstructs a state from 16 standard-setting counts ("mle" or "linear").
#[pyfunction]
#[pyo3(signature = (counts, method="mle"))]
fn reconstruct(py: Python<'_>, counts: [f64; 16], method: &str) -> PyResult<State> {
    let settings = standard_tomo_settings();
    let counts = TomoCounts::new(counts, 0.0).map_err(err)?;
    let rho = match method {
        "mle" => py.detach(|| tomography::mle_reconstruct(&counts, &settings)),
        "linear" => tomography::linear_inversion(&counts, &settings),
        other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
    }
    .map_err(err)?;
    Ok(State { rho })
}

/// Error budget: as-built inputs by default, or a TOML config.
#[pyfunction]
#[pyo3(signature = (seed=1, trials=None, config=None))]
fn error_budget<'py>(
    py: Python<'py>,
    seed: u64,
    trials: Option<usize>,
    config: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut inputs = match config {
        Some(path) => RunConfig::load(&path).and_then(|c| c.budget_inputs()).map_err(err)?,
        None => BudgetInputs::as_built(seed),
    };
    inputs.seed = seed;
    if let Some(t) = trials {
        inputs.trials = t;
    }
    let b = py.detach(|| expsim::error_budget(&inputs)).map_err(err)?;
    let d = PyDict::new(py);
    for e in &b.entries {
        d.set_item(e.source.name(), e.delta_s)?;
    }
    d.set_item("total", b.total)?;
    Ok(d)
}

/// (η_A, η_B, pair rate, p) from singles, coincidences and the window.
#[pyfunction]
fn multipair_params<'py>(
    py: Python<'py>,
    singles_a: f64,
    singles_b: f64,
    coincidences: f64,
    window_ps: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mp = source::multipair_params_from_rates(singles_a, singles_b, coincidences, window_ps).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("eta_a", mp.eta_a)?;
    d.set_item("eta_b", mp.eta_b)?;
    d.set_item("pair_rate", mp.pair_rate)?;
    d.set_item("ratio", mp.ratio)?;
    Ok(d)
}

/// (O_ordinary, O_extraordinary) for a crystal offset in mm.
#[pyfunction]
fn crystal_offset_overlaps(z_c: f64) -> PyResult<(f64, f64)> {
    source::crystal_offset_overlaps(z_c, &SourceParams::default().geometry).map_err(err)
}

/// Fits retardance and zero point to rows of (angle_deg, s0, s1, s2, s3).
#[pyfunction]
#[pyo3(signature = (rows, plate="hwp", input="H"))]
fn fit_waveplate<'py>(py: Python<'py>, rows: Vec<[f64; 5]>, plate: &str, input: &str) -> PyResult<Bound<'py, PyDict>> {
    let nominal = match plate {
        "hwp" => std::f64::consts::PI,
        "qwp" => std::f64::consts::FRAC_PI_2,
        other => return Err(PyValueError::new_err(format!("plate must be 'hwp' or 'qwp', got '{other}'"))),
    };
    let ket = polarization_ket(input).map_err(err)?;
    let samples: Vec<StokesSample> = rows
        .iter()
        .map(|r| StokesSample::new(r[0].to_radians(), [r[1], r[2], r[3], r[4]]))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let fit = polarization::fit_waveplate(&samples, &ket, nominal).map_err(err)?;
    let c = fit.calibration;
    let d = PyDict::new(py);
    d.set_item("retardance_rad", c.retardance)?;
    d.set_item("retardance_unc_rad", c.retardance_uncertainty)?;
    d.set_item("zero_point_rad", c.zero_point)?;
    d.set_item("zero_point_unc_rad", c.zero_point_uncertainty)?;
    d.set_item("residual", fit.residual)?;
    Ok(d)
}

#[pymodule]
fn sagnac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<State>()?;
    m.add("TSIRELSON", sagnac_core::chsh::TSIRELSON)?;
    m.add_function(wrap_pyfunction!(psi_minus, m)?)?;
    m.add_function(wrap_pyfunction!(source_state, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_counts, m)?)?;
    m.add_function(wrap_pyfunction!(s_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(run_campaign, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_tomo_counts, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(error_budget, m)?)?;
    m.add_function(wrap_pyfunction!(multipair_params, m)?)?;
    m.add_function(wrap_pyfunction!(crystal_offset_overlaps, m)?)?;
    m.add_function(wrap_pyfunction!(fit_waveplate, m)?)?;
    Ok(())
}
