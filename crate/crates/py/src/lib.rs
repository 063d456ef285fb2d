//! Python bindings: pointwise linear algebra on traceless symmetric
//! matrices, the multiplicity combinatorics, and the scenario-driven
//! traces and verification suites.
//!
//! Matrices cross the boundary as nested lists (row major); reports come
//! back as JSON strings with deterministic key order.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use ebin_core::asymptotics::log_linear_fit;
use ebin_core::curvature::{curvature_trace, GeodesicSpec, Method};
use ebin_core::scenario::Scenario;
use ebin_core::symcore::{Multiplicity, NormalFormCoords, TracelessSym};
use ebin_core::{strata, symcore, verify};
use nalgebra::DMatrix;

fn err<T>(r: ebin_core::Result<T>) -> PyResult<T> {
    r.map_err(|e| PyValueError::new_err(e.to_string()))
}

fn to_dmatrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Sorted eigendecomposition of a traceless symmetric matrix: ascending
/// eigenvalues and eigenvector columns under the deterministic sign
/// convention.
#[pyfunction]
fn sorted_eigen(mat: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let s = err(TracelessSym::new(to_dmatrix(mat)?))?;
    let spec = err(symcore::sorted_eigen(&s))?;
    Ok((
        spec.values.iter().copied().collect(),
        from_dmatrix(&spec.vectors),
    ))
}

/// exp(t S) through the eigendecomposition; determinant 1 for traceless S.
#[pyfunction]
fn sym_exp(mat: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    let s = err(TracelessSym::new(to_dmatrix(mat)?))?;
    Ok(from_dmatrix(&err(symcore::sym_exp(&s, t))?))
}

/// tr(S1 S2).
#[pyfunction]
fn frobenius_inner(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let sa = err(TracelessSym::new(to_dmatrix(a)?))?;
    let sb = err(TracelessSym::new(to_dmatrix(b)?))?;
    err(symcore::frobenius_inner(&sa, &sb))
}

/// Run lengths of ascending eigenvalues under the gap tolerance.
#[pyfunction]
fn multiplicity_of(values: Vec<f64>, gap_tol: f64) -> Vec<usize> {
    symcore::multiplicity_of(&values, gap_tol).parts().to_vec()
}

/// d(k) = k(k+1)/2 - 1.
#[pyfunction]
fn d_of(k: usize) -> usize {
    symcore::d_of(k)
}

/// The normal-form matrix S(b) on one block of size m.
#[pyfunction]
fn normal_form_embed(m: usize, coords: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    let b = err(NormalFormCoords::new(m, coords))?;
    Ok(from_dmatrix(&symcore::normal_form_embed(&b)))
}

/// Coordinates of a traceless symmetric block in the normal-form layout.
#[pyfunction]
fn normal_form_extract(mat: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let m = to_dmatrix(mat)?;
    Ok(err(symcore::normal_form_extract(&m))?.coords)
}

/// All multiplicities of n with codim <= max_codim as
/// (parts, codim, orbit_space_dim), sorted by (codim desc, lex).
#[pyfunction]
fn enumerate_multiplicities(n: usize, max_codim: usize) -> Vec<(Vec<usize>, usize, usize)> {
    strata::enumerate_multiplicities(n, max_codim)
        .into_iter()
        .map(|f| (f.m.parts().to_vec(), f.codim, f.orbit_space_dim))
        .collect()
}

/// Triplets (1, b, c) with pi(b) < pi(c) for a multiplicity.
#[pyfunction]
fn enumerate_triplets(parts: Vec<usize>) -> PyResult<Vec<(usize, usize, usize)>> {
    let m = err(Multiplicity::new(parts))?;
    Ok(strata::enumerate_triplets(&m)
        .into_iter()
        .map(|t| (1, t.b, t.c))
        .collect())
}

/// The face partial order (consecutive-merge relation).
#[pyfunction]
fn leq(a: Vec<usize>, b: Vec<usize>) -> PyResult<bool> {
    let ma = err(Multiplicity::new(a))?;
    let mb = err(Multiplicity::new(b))?;
    err(strata::leq(&ma, &mb))
}

/// Everything strictly below a multiplicity in the face order.
#[pyfunction]
fn closure_boundary(parts: Vec<usize>) -> PyResult<Vec<Vec<usize>>> {
    let m = err(Multiplicity::new(parts))?;
    Ok(strata::closure_boundary(&m)
        .into_iter()
        .map(|m| m.parts().to_vec())
        .collect())
}

/// Check the n + 1 triplet lower bound; returns (pass, multiplicities
/// checked).
#[pyfunction]
fn verify_triplet_bound(n: usize) -> PyResult<(bool, usize)> {
    let report = err(strata::verify_triplet_bound(n))?;
    Ok((report.passed(), report.checked))
}

/// Compare the enumeration against the embedded reference table for
/// n = 4, 5 or 6; raises on mismatch.
#[pyfunction]
fn check_paper_tables(n: usize) -> PyResult<bool> {
    err(strata::check_reference_table(n))?;
    Ok(true)
}

/// Run a scalar-curvature trace for a scenario file; returns rows
/// (t, sup_R, inf_R, mean_R) over the full grid.
#[pyfunction]
#[pyo3(signature = (scenario_path, method = "diagonal", workers = 1))]
fn run_trace(
    scenario_path: &str,
    method: &str,
    workers: usize,
) -> PyResult<Vec<(f64, f64, f64, f64)>> {
    let path = std::path::Path::new(scenario_path);
    let sc = err(Scenario::load(path))?;
    let base = path.parent().unwrap_or(std::path::Path::new("."));
    let built = err(sc.build(base))?;
    let method: Method = err(method.parse())?;
    let bf = match method {
        Method::Oracle => None,
        _ => Some(err(built.block_frame())?),
    };
    let spec = GeodesicSpec {
        g0: &built.g0,
        h: &built.h,
        times: &sc.times,
        region: &built.full,
    };
    let trace = err(curvature_trace(&spec, method, bf.as_ref(), workers, false))?;
    Ok(trace
        .times
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, trace.sup[i], trace.inf[i], trace.mean[i]))
        .collect())
}

/// Least-squares decay fit of positive magnitudes: returns (c1, c2, rms)
/// for |y| = c1 e^{c2 t}.
#[pyfunction]
fn fit_log_linear(times: Vec<f64>, magnitudes: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    if times.len() != magnitudes.len() || times.len() < 2 {
        return Err(PyValueError::new_err("need matching samples, at least 2"));
    }
    if magnitudes.iter().any(|&v| v <= 0.0) {
        return Err(PyValueError::new_err("magnitudes must be positive"));
    }
    let logs: Vec<f64> = magnitudes.iter().map(|v| v.ln()).collect();
    let (intercept, slope, rms) = log_linear_fit(&times, &logs);
    Ok((intercept.exp(), slope, rms))
}

/// Run a named verification suite; returns the deterministic JSON report.
#[pyfunction]
#[pyo3(signature = (suite, scenario_path = None, seed = 0, workers = 1))]
fn run_suite(
    suite: &str,
    scenario_path: Option<&str>,
    seed: u64,
    workers: usize,
) -> PyResult<String> {
    let (scenario, base) = match scenario_path {
        Some(p) => {
            let path = std::path::Path::new(p);
            let sc = err(Scenario::load(path))?;
            let base = path
                .parent()
                .map(std::path::Path::to_path_buf)
                .unwrap_or_else(|| std::path::PathBuf::from("."));
            (Some(sc), base)
        }
        None => (None, std::path::PathBuf::from(".")),
    };
    let report = err(verify::run_suite(
        suite,
        scenario.as_ref(),
        &base,
        seed,
        workers,
    ))?;
    Ok(report.to_json())
}

#[pymodule]
fn ebinpy(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sorted_eigen, m)?)?;
    m.add_function(wrap_pyfunction!(sym_exp, m)?)?;
    m.add_function(wrap_pyfunction!(frobenius_inner, m)?)?;
    m.add_function(wrap_pyfunction!(multiplicity_of, m)?)?;
    m.add_function(wrap_pyfunction!(d_of, m)?)?;
    m.add_function(wrap_pyfunction!(normal_form_embed, m)?)?;
    m.add_function(wrap_pyfunction!(normal_form_extract, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_multiplicities, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_triplets, m)?)?;
    m.add_function(wrap_pyfunction!(leq, m)?)?;
    m.add_function(wrap_pyfunction!(closure_boundary, m)?)?;
    m.add_function(wrap_pyfunction!(verify_triplet_bound, m)?)?;
    m.add_function(wrap_pyfunction!(check_paper_tables, m)?)?;
    m.add_function(wrap_pyfunction!(run_trace, m)?)?;
    m.add_function(wrap_pyfunction!(fit_log_linear, m)?)?;
    m.add_function(wrap_pyfunction!(run_suite, m)?)?;
    Ok(())
}
