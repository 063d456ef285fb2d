//! Discrete periodic manifolds: uniform grids on the flat-coordinate torus
//! [0,1)^n, scalar- and matrix-valued fields, periodic finite differences,
//! orthonormal frames, structure functions, and the L2 inner product.
//!
//! All curved geometry enters through the metric coefficient field G(x);
//! the chart itself is always the flat torus, so there is no boundary
//! handling and coordinate vector fields commute exactly.

use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::symcore::{self, Multiplicity};

/// Uniform periodic grid over [0,1)^n with `res` samples per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusGrid {
    n: usize,
    res: usize,
    strides: [usize; 8],
}

impl TorusGrid {
    pub fn new(n: usize, res: usize) -> Result<Self> {
        if n == 0 || n > 8 {
            return Err(Error::DimensionMismatch(format!(
                "grid dimension must be 1..=8, got {n}"
            )));
        }
        if res < 8 {
            return Err(Error::Config(format!("res must be >= 8, got {res}")));
        }
        let mut strides = [0usize; 8];
        for axis in 0..n {
            strides[axis] = res.pow((n - 1 - axis) as u32);
        }
        Ok(Self { n, res, strides })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.res as f64
    }

    pub fn len(&self) -> usize {
        self.res.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of an axis in the flat C-order layout (last axis fastest).
    #[inline]
    fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.n);
        let mut idx = 0;
        for &c in coords {
            debug_assert!(c < self.res);
            idx = idx * self.res + c;
        }
        idx
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for axis in (0..self.n).rev() {
            out[axis] = idx % self.res;
            idx /= self.res;
        }
        out
    }

    /// The sample position x in [0,1)^n.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        self.coords(idx)
            .into_iter()
            .map(|c| c as f64 * self.spacing())
            .collect()
    }

    /// Periodic neighbour along one axis.
    #[inline]
    pub fn neighbor(&self, idx: usize, axis: usize, delta: isize) -> usize {
        let stride = self.stride(axis);
        let pos = (idx / stride) % self.res;
        let shifted = (pos as isize + delta).rem_euclid(self.res as isize) as usize;
        idx + shifted * stride - pos * stride
    }

    /// The four order-4 stencil neighbours (+1, +2, -1, -2) along one axis.
    #[inline]
    pub fn stencil4(&self, idx: usize, axis: usize) -> [usize; 4] {
        let stride = self.stride(axis);
        let pos = (idx / stride) % self.res;
        let base = idx - pos * stride;
        let shift = |d: isize| -> usize {
            let p = (pos as isize + d).rem_euclid(self.res as isize) as usize;
            base + p * stride
        };
        [shift(1), shift(2), shift(-1), shift(-2)]
    }
}

/// A box of grid indices, half-open per axis (no wrap-around).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
}

impl Region {
    pub fn new(lo: Vec<usize>, hi: Vec<usize>, grid: &TorusGrid) -> Result<Self> {
        if lo.len() != grid.dim() || hi.len() != grid.dim() {
            return Err(Error::Config("region arity differs from grid".into()));
        }
        for a in 0..lo.len() {
            if lo[a] >= hi[a] || hi[a] > grid.res() {
                return Err(Error::Config(format!(
                    "empty or out-of-range region on axis {a}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn full(grid: &TorusGrid) -> Self {
        Self {
            lo: vec![0; grid.dim()],
            hi: vec![grid.res(); grid.dim()],
        }
    }

    pub fn len(&self) -> usize {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| h - l)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, coords: &[usize]) -> bool {
        coords
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&c, (&l, &h))| c >= l && c < h)
    }

    /// Anchor point: the lexicographically smallest corner.
    pub fn anchor(&self, grid: &TorusGrid) -> usize {
        grid.index(&self.lo)
    }

    /// Grow the box by `by` samples per side, clamped to the grid bounds
    /// (no wrap-around).
    pub fn dilate(&self, grid: &TorusGrid, by: usize) -> Region {
        let lo = self.lo.iter().map(|&l| l.saturating_sub(by)).collect();
        let hi = self
            .hi
            .iter()
            .map(|&h| (h + by).min(grid.res()))
            .collect();
        Region { lo, hi }
    }

    /// Flat indices of the region in lexicographic coordinate order.
    pub fn indices(&self, grid: &TorusGrid) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut cur = self.lo.clone();
        loop {
            out.push(grid.index(&cur));
            let mut axis = grid.dim();
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                cur[axis] += 1;
                if cur[axis] < self.hi[axis] {
                    break;
                }
                cur[axis] = self.lo[axis];
            }
        }
    }
}

/// Scalar samples over a torus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn from_fn(grid: TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
        Self { grid, data }
    }

    pub fn from_data(grid: TorusGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "field length {} differs from grid length {}",
                data.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, data })
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.data[idx]
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min_over(&self, region: &Region) -> f64 {
        region
            .indices(&self.grid)
            .into_iter()
            .map(|i| self.data[i])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_over(&self, region: &Region) -> f64 {
        region
            .indices(&self.grid)
            .into_iter()
            .map(|i| self.data[i])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_over(&self, region: &Region) -> f64 {
        let idx = region.indices(&self.grid);
        idx.iter().map(|&i| self.data[i]).sum::<f64>() / idx.len() as f64
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{{\"kind\":\"scalar\",\"dim\":{},\"res\":{},\"components\":1}}",
            self.grid.dim(),
            self.grid.res()
        )?;
        for v in &self.data {
            writeln!(w, "{v:.17e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let (grid, comps, _) = read_header(r)?;
        if comps != 1 {
            return Err(Error::Config("expected a scalar field dump".into()));
        }
        let data = read_values(r, grid.len())?;
        Self::from_data(grid, data)
    }
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(TorusGrid, usize, (usize, usize))> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let v: serde_json::Value = serde_json::from_str(line.trim())
        .map_err(|e| Error::Config(format!("bad field header: {e}")))?;
    let dim = v["dim"].as_u64().ok_or_else(|| Error::Config("header dim".into()))? as usize;
    let res = v["res"].as_u64().ok_or_else(|| Error::Config("header res".into()))? as usize;
    let comps = v["components"]
        .as_u64()
        .ok_or_else(|| Error::Config("header components".into()))? as usize;
    let rows = v["rows"].as_u64().unwrap_or(1) as usize;
    let cols = v["cols"].as_u64().unwrap_or(comps as u64) as usize;
    Ok((TorusGrid::new(dim, res)?, comps, (rows, cols)))
}

fn read_values<R: BufRead>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut data = Vec::with_capacity(count);
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        data.push(
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad field value: {e}")))?,
        );
        if data.len() == count {
            break;
        }
    }
    if data.len() != count {
        return Err(Error::Config(format!(
            "field dump truncated: expected {count} values, got {}",
            data.len()
        )));
    }
    Ok(data)
}

/// Matrix-valued samples over a torus grid, stored flat in row-major order
/// per point.
#[derive(Debug, Clone, PartialEq)]
pub struct MatField {
    grid: TorusGrid,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatField {
    pub fn from_fn(grid: TorusGrid, rows: usize, cols: usize, f: impl Fn(&[f64]) -> DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(grid.len() * rows * cols);
        for i in 0..grid.len() {
            let m = f(&grid.point(i));
            debug_assert_eq!((m.nrows(), m.ncols()), (rows, cols));
            for r in 0..rows {
                for c in 0..cols {
                    data.push(m[(r, c)]);
                }
            }
        }
        Self {
            grid,
            rows,
            cols,
            data,
        }
    }

    pub fn zeros(grid: TorusGrid, rows: usize, cols: usize) -> Self {
        Self {
            grid,
            rows,
            cols,
            data: vec![0.0; grid.len() * rows * cols],
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn comps(&self) -> usize {
        self.rows * self.cols
    }

    pub fn entry(&self, idx: usize, r: usize, c: usize) -> f64 {
        self.data[idx * self.comps() + r * self.cols + c]
    }

    pub fn set_entry(&mut self, idx: usize, r: usize, c: usize, v: f64) {
        let comps = self.comps();
        self.data[idx * comps + r * self.cols + c] = v;
    }

    pub fn get(&self, idx: usize) -> DMatrix<f64> {
        let comps = self.comps();
        DMatrix::from_row_slice(self.rows, self.cols, &self.data[idx * comps..(idx + 1) * comps])
    }

    /// The row-major component slice of one sample.
    #[inline]
    pub fn point_slice(&self, idx: usize) -> &[f64] {
        let comps = self.comps();
        &self.data[idx * comps..(idx + 1) * comps]
    }

    pub fn read_into(&self, idx: usize, out: &mut DMatrix<f64>) {
        debug_assert_eq!((out.nrows(), out.ncols()), (self.rows, self.cols));
        let comps = self.comps();
        let base = idx * comps;
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(r, c)] = self.data[base + r * self.cols + c];
            }
        }
    }

    pub fn set(&mut self, idx: usize, m: &DMatrix<f64>) {
        debug_assert_eq!((m.nrows(), m.ncols()), (self.rows, self.cols));
        let comps = self.comps();
        let base = idx * comps;
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.data[base + r * self.cols + c] = m[(r, c)];
            }
        }
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(
            w,
            "{{\"kind\":\"matrix\",\"dim\":{},\"res\":{},\"components\":{},\"rows\":{},\"cols\":{}}}",
            self.grid.dim(),
            self.grid.res(),
            self.comps(),
            self.rows,
            self.cols
        )?;
        for v in &self.data {
            writeln!(w, "{v:.17e}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: &mut R) -> Result<Self> {
        let (grid, comps, (rows, cols)) = read_header(r)?;
        if rows * cols != comps {
            return Err(Error::Config("inconsistent matrix header".into()));
        }
        let data = read_values(r, grid.len() * comps)?;
        Ok(Self {
            grid,
            rows,
            cols,
            data,
        })
    }
}

/// Fill a scalar vector in parallel; output is identical for every worker
/// count because the map is pure per index and writes are disjoint.
pub fn par_fill(len: usize, workers: usize, f: impl Fn(usize) -> f64 + Sync) -> Vec<f64> {
    let workers = workers.max(1);
    let mut out = vec![0.0f64; len];
    if workers == 1 || len < 1024 {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
        return out;
    }
    let chunk = len.div_ceil(workers);
    std::thread::scope(|s| {
        for (ci, slice) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                let base = ci * chunk;
                for (off, v) in slice.iter_mut().enumerate() {
                    *v = f(base + off);
                }
            });
        }
    });
    out
}

/// [`par_fill`] with per-worker scratch state, for kernels that reuse
/// buffers across points. Output is still worker-count independent.
pub fn par_fill_with<S>(
    len: usize,
    workers: usize,
    init: impl Fn() -> S + Sync,
    f: impl Fn(&mut S, usize) -> f64 + Sync,
) -> Vec<f64> {
    let workers = workers.max(1);
    let mut out = vec![0.0f64; len];
    if workers == 1 || len < 1024 {
        let mut state = init();
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(&mut state, i);
        }
        return out;
    }
    let chunk = len.div_ceil(workers);
    std::thread::scope(|s| {
        for (ci, slice) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            let init = &init;
            s.spawn(move || {
                let mut state = init();
                let base = ci * chunk;
                for (off, v) in slice.iter_mut().enumerate() {
                    *v = f(&mut state, base + off);
                }
            });
        }
    });
    out
}

/// Same as [`par_fill`] for a fixed number of components per index.
pub fn par_fill_comps(
    len: usize,
    comps: usize,
    workers: usize,
    f: impl Fn(usize, &mut [f64]) + Sync,
) -> Vec<f64> {
    let workers = workers.max(1);
    let mut out = vec![0.0f64; len * comps];
    if workers == 1 || len < 1024 {
        for (i, slice) in out.chunks_mut(comps).enumerate() {
            f(i, slice);
        }
        return out;
    }
    let points_per_chunk = len.div_ceil(workers);
    let chunk = points_per_chunk * comps;
    std::thread::scope(|s| {
        for (ci, slice) in out.chunks_mut(chunk).enumerate() {
            let f = &f;
            s.spawn(move || {
                let base = ci * points_per_chunk;
                for (off, point_slice) in slice.chunks_mut(comps).enumerate() {
                    f(base + off, point_slice);
                }
            });
        }
    });
    out
}

/// Central finite difference of the stated order along one axis, periodic.
pub fn finite_diff(f: &ScalarField, axis: usize, order: usize) -> ScalarField {
    let grid = *f.grid();
    let h = grid.spacing();
    let data = match order {
        2 => (0..grid.len())
            .map(|i| {
                (f.get(grid.neighbor(i, axis, 1)) - f.get(grid.neighbor(i, axis, -1))) / (2.0 * h)
            })
            .collect(),
        4 => (0..grid.len())
            .map(|i| {
                (-f.get(grid.neighbor(i, axis, 2)) + 8.0 * f.get(grid.neighbor(i, axis, 1))
                    - 8.0 * f.get(grid.neighbor(i, axis, -1))
                    + f.get(grid.neighbor(i, axis, -2)))
                    / (12.0 * h)
            })
            .collect(),
        _ => panic!("finite_diff supports orders 2 and 4"),
    };
    ScalarField { grid, data }
}

/// Order-4 derivative of one matrix entry at one point.
#[inline]
pub fn d4_entry(f: &MatField, idx: usize, axis: usize, r: usize, c: usize) -> f64 {
    let grid = f.grid();
    let h = grid.spacing();
    (-f.entry(grid.neighbor(idx, axis, 2), r, c) + 8.0 * f.entry(grid.neighbor(idx, axis, 1), r, c)
        - 8.0 * f.entry(grid.neighbor(idx, axis, -1), r, c)
        + f.entry(grid.neighbor(idx, axis, -2), r, c))
        / (12.0 * h)
}

/// Order-4 derivative of a scalar entry at one point.
#[inline]
pub fn d4_scalar(f: &ScalarField, idx: usize, axis: usize) -> f64 {
    let grid = f.grid();
    let h = grid.spacing();
    (-f.get(grid.neighbor(idx, axis, 2)) + 8.0 * f.get(grid.neighbor(idx, axis, 1))
        - 8.0 * f.get(grid.neighbor(idx, axis, -1))
        + f.get(grid.neighbor(idx, axis, -2)))
        / (12.0 * h)
}

/// Metric coefficient field G(x), symmetric positive definite per sample.
#[derive(Debug, Clone)]
pub struct MetricField {
    mat: MatField,
}

impl MetricField {
    pub fn new(mat: MatField) -> Result<Self> {
        let n = mat.rows();
        if n != mat.cols() {
            return Err(Error::DimensionMismatch("metric must be square".into()));
        }
        let mut buf = DMatrix::zeros(n, n);
        for idx in 0..mat.grid().len() {
            mat.read_into(idx, &mut buf);
            let asym = (&buf - buf.transpose()).norm();
            if asym > 1e-10 * (1.0 + buf.norm()) {
                return Err(Error::NotSymmetric(asym));
            }
            let shifted = &buf - DMatrix::identity(n, n) * 1e-8;
            if shifted.cholesky().is_none() {
                return Err(Error::NotPositiveDefinite);
            }
        }
        Ok(Self { mat })
    }

    pub fn flat(grid: TorusGrid) -> Self {
        let n = grid.dim();
        Self {
            mat: MatField::from_fn(grid, n, n, |_| DMatrix::identity(n, n)),
        }
    }

    /// Conformal metric e^{2 phi} * I.
    pub fn conformal(grid: TorusGrid, phi: &ScalarField) -> Self {
        let n = grid.dim();
        let mut mat = MatField::zeros(grid, n, n);
        for idx in 0..grid.len() {
            let factor = (2.0 * phi.get(idx)).exp();
            for r in 0..n {
                mat.set_entry(idx, r, r, factor);
            }
        }
        Self { mat }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.mat.grid()
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn mat(&self) -> &MatField {
        &self.mat
    }

    pub fn get(&self, idx: usize) -> DMatrix<f64> {
        self.mat.get(idx)
    }

    /// Wrap a raw matrix field without the per-sample SPD sweep; the caller
    /// guarantees positivity (used for metrics built as G0 exp(tH)).
    pub fn from_mat_unchecked(mat: MatField) -> Self {
        Self { mat }
    }
}

/// A g-orthonormal frame: column j of E(x) holds the coordinate components
/// of the j-th frame vector.
#[derive(Debug, Clone)]
pub struct FrameField {
    mat: MatField,
}

impl FrameField {
    /// Validate g-orthonormality |E^T G E - I| <= tol at every sample.
    pub fn new(mat: MatField, g: &MetricField, tol: f64) -> Result<Self> {
        let frame = Self { mat };
        let res = frame.orthonormality_residual(g);
        if res > tol {
            return Err(Error::Config(format!(
                "frame orthonormality residual {res:.3e} exceeds {tol:.3e}"
            )));
        }
        Ok(frame)
    }

    pub fn from_mat_unchecked(mat: MatField) -> Self {
        Self { mat }
    }

    pub fn identity(grid: TorusGrid) -> Self {
        let n = grid.dim();
        Self {
            mat: MatField::from_fn(grid, n, n, |_| DMatrix::identity(n, n)),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.mat.grid()
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn mat(&self) -> &MatField {
        &self.mat
    }

    pub fn get(&self, idx: usize) -> DMatrix<f64> {
        self.mat.get(idx)
    }

    pub fn orthonormality_residual(&self, g: &MetricField) -> f64 {
        let n = self.dim();
        let id = DMatrix::identity(n, n);
        let mut e = DMatrix::zeros(n, n);
        let mut gm = DMatrix::zeros(n, n);
        let mut worst = 0.0f64;
        for idx in 0..self.grid().len() {
            self.mat.read_into(idx, &mut e);
            g.mat().read_into(idx, &mut gm);
            let r = (e.transpose() * &gm * &e - &id).norm();
            worst = worst.max(r);
        }
        worst
    }
}

/// Gram-Schmidt frame of the coordinate basis under G, column by column in
/// coordinate order. Deterministic and periodic whenever G is.
pub fn gram_schmidt_frame(g: &MetricField) -> FrameField {
    let grid = *g.grid();
    let n = g.dim();
    let mat = MatField::from_fn(grid, n, n, |_| DMatrix::identity(n, n));
    let mut mat = mat;
    let mut gm = DMatrix::zeros(n, n);
    for idx in 0..grid.len() {
        g.mat().read_into(idx, &mut gm);
        let mut e = DMatrix::<f64>::identity(n, n);
        for j in 0..n {
            let mut col = e.column(j).into_owned();
            for k in 0..j {
                let prev = e.column(k).into_owned();
                let proj = (prev.transpose() * &gm * &col)[0];
                col -= prev * proj;
            }
            let norm = (col.transpose() * &gm * &col)[0].sqrt();
            col /= norm;
            e.set_column(j, &col);
        }
        mat.set(idx, &e);
    }
    FrameField { mat }
}

/// Exponential of an antisymmetric matrix by scaling and squaring on the
/// series; the result is special orthogonal.
pub fn so_exp(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let norm = v.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let base = v / 2f64.powi(squarings);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &base / k as f64;
        sum += &term;
        if term.norm() < 1e-17 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Frame obtained from a pointwise antisymmetric generator V:
/// E(x) = sqrt(G^{-1}) exp(V) sqrt(G) E0(x), with E0 the Gram-Schmidt frame
/// of the coordinate basis. The conjugation keeps the frame g-orthonormal.
pub fn frame_from_generator(g: &MetricField, v: &MatField) -> Result<FrameField> {
    let grid = *g.grid();
    let n = g.dim();
    if v.rows() != n || v.cols() != n {
        return Err(Error::DimensionMismatch("generator size".into()));
    }
    let e0 = gram_schmidt_frame(g);
    let mut out = MatField::zeros(grid, n, n);
    let mut gm = DMatrix::zeros(n, n);
    let mut vm = DMatrix::zeros(n, n);
    let mut em = DMatrix::zeros(n, n);
    for idx in 0..grid.len() {
        g.mat().read_into(idx, &mut gm);
        v.read_into(idx, &mut vm);
        let asym = (&vm + vm.transpose()).norm();
        if asym > 1e-10 * (1.0 + vm.norm()) {
            return Err(Error::Config(format!(
                "generator not antisymmetric at index {idx}: residual {asym:.3e}"
            )));
        }
        e0.mat().read_into(idx, &mut em);
        let sqrt_g = symcore::spd_sqrt(&gm)?;
        let inv_sqrt_g = symcore::spd_inv_sqrt(&gm)?;
        let a = inv_sqrt_g * so_exp(&vm) * sqrt_g;
        out.set(idx, &(a * &em));
    }
    FrameField::new(out, g, 1e-10)
}

/// Structure functions c_{ijk}(x) = g([e_i, e_j], e_k)(x) of a frame under
/// a metric, flattened as c[(i * n + j) * n + k]. The bracket components are
/// [e_i, e_j]^l = sum_m (E_{mi} d_m E_{lj} - E_{mj} d_m E_{li}), derivatives
/// by order-4 periodic differences. Antisymmetry in (i, j) is exact by
/// construction.
pub fn structure_functions(e: &FrameField, g: &MetricField) -> Vec<ScalarField> {
    let grid = *e.grid();
    let n = e.dim();
    let mut fields: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; n * n * n];
    let mut em = DMatrix::zeros(n, n);
    let mut gm = DMatrix::zeros(n, n);
    // dE[axis] entry (l, j) = d_axis E_{lj} at the current point.
    let mut de = vec![DMatrix::zeros(n, n); n];
    for idx in 0..grid.len() {
        e.mat().read_into(idx, &mut em);
        g.mat().read_into(idx, &mut gm);
        for (axis, dmat) in de.iter_mut().enumerate() {
            for l in 0..n {
                for j in 0..n {
                    dmat[(l, j)] = d4_entry(e.mat(), idx, axis, l, j);
                }
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                // bracket^l = sum_m E_{mi} d_m E_{lj} - E_{mj} d_m E_{li}
                let mut bracket = vec![0.0; n];
                for l in 0..n {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += em[(m, i)] * de[m][(l, j)] - em[(m, j)] * de[m][(l, i)];
                    }
                    bracket[l] = acc;
                }
                for k in 0..n {
                    let mut c = 0.0;
                    for l in 0..n {
                        for q in 0..n {
                            c += bracket[l] * gm[(l, q)] * em[(q, k)];
                        }
                    }
                    fields[(i * n + j) * n + k][idx] = c;
                    fields[(j * n + i) * n + k][idx] = -c;
                }
            }
        }
    }
    fields
        .into_iter()
        .map(|data| ScalarField { grid, data })
        .collect()
}

/// A traceless g0-self-adjoint endomorphism field, stored through its
/// symmetric matrix representation in a recorded g0-orthonormal frame.
#[derive(Debug, Clone)]
pub struct EndoField {
    frame: Arc<FrameField>,
    mat: MatField,
}

impl EndoField {
    pub fn new(frame: Arc<FrameField>, mat: MatField) -> Result<Self> {
        let n = frame.dim();
        if mat.rows() != n || mat.cols() != n {
            return Err(Error::DimensionMismatch("endomorphism size".into()));
        }
        let mut buf = DMatrix::zeros(n, n);
        for idx in 0..mat.grid().len() {
            mat.read_into(idx, &mut buf);
            let scale = 1.0 + buf.norm();
            let asym = (&buf - buf.transpose()).norm();
            if asym > 1e-10 * scale {
                return Err(Error::NotSymmetric(asym));
            }
            if buf.trace().abs() > 1e-10 * scale {
                return Err(Error::TraceViolation {
                    trace: buf.trace(),
                    tol: 1e-10 * scale,
                });
            }
        }
        Ok(Self { frame, mat })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.mat.grid()
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn frame(&self) -> &Arc<FrameField> {
        &self.frame
    }

    /// Matrix of H in the recorded frame at one sample.
    pub fn frame_rep(&self, idx: usize) -> DMatrix<f64> {
        self.mat.get(idx)
    }

    pub fn frame_rep_field(&self) -> &MatField {
        &self.mat
    }

    /// Coordinate components H_c = E Hf E^T G at one sample.
    pub fn coord_rep(&self, idx: usize, g: &MetricField) -> DMatrix<f64> {
        let e = self.frame.get(idx);
        let hf = self.mat.get(idx);
        let gm = g.get(idx);
        &e * hf * e.transpose() * gm
    }

    /// Sorted eigenvalues at one sample (frame independent).
    pub fn eigenvalues(&self, idx: usize) -> Vec<f64> {
        let spec = symcore::sorted_eigen_mat(&self.frame_rep(idx)).expect("finite entries");
        spec.values.iter().copied().collect()
    }
}

/// Block data for [`assemble_endo`]: per-cluster eigenvalue fields and
/// optional traceless block fields.
pub struct BlockData<'a> {
    pub m: &'a Multiplicity,
    pub lambdas: &'a [ScalarField],
    /// One traceless symmetric m_i x m_i field per cluster; `None` means all
    /// blocks vanish.
    pub blocks: Option<&'a [MatField]>,
}

/// Assemble H block-diagonal in the given frame with stated eigenvalue and
/// block fields. The pointwise trace sum_i m_i lambda_i + sum_i tr S_i must
/// vanish within 1e-10.
pub fn assemble_endo(frame: Arc<FrameField>, data: &BlockData) -> Result<EndoField> {
    let grid = *frame.grid();
    let n = frame.dim();
    if data.m.total() != n {
        return Err(Error::DimensionMismatch(
            "multiplicity does not sum to frame dimension".into(),
        ));
    }
    if data.lambdas.len() != data.m.len() {
        return Err(Error::DimensionMismatch(
            "one eigenvalue field per cluster required".into(),
        ));
    }
    if let Some(blocks) = data.blocks {
        if blocks.len() != data.m.len() {
            return Err(Error::DimensionMismatch(
                "one block field per cluster required".into(),
            ));
        }
        for (b, &mi) in blocks.iter().zip(data.m.parts()) {
            if b.rows() != mi || b.cols() != mi {
                return Err(Error::DimensionMismatch("block size mismatch".into()));
            }
        }
    }
    let mut mat = MatField::zeros(grid, n, n);
    for idx in 0..grid.len() {
        let mut trace = 0.0;
        let mut start = 0;
        for (i, &mi) in data.m.parts().iter().enumerate() {
            let lam = data.lambdas[i].get(idx);
            trace += mi as f64 * lam;
            for a in 0..mi {
                mat.set_entry(idx, start + a, start + a, lam);
            }
            if let Some(blocks) = data.blocks {
                for a in 0..mi {
                    for b in 0..mi {
                        let v = blocks[i].entry(idx, a, b);
                        if a == b {
                            trace += v;
                        }
                        let cur = mat.entry(idx, start + a, start + b);
                        mat.set_entry(idx, start + a, start + b, cur + v);
                    }
                }
            }
            start += mi;
        }
        if trace.abs() > 1e-10 {
            return Err(Error::TraceViolation {
                trace,
                tol: 1e-10,
            });
        }
    }
    EndoField::new(frame, mat)
}

/// Symmetric (0,2)-tensor field h_{ij}(x) in coordinate components.
#[derive(Debug, Clone)]
pub struct SymTensorField {
    mat: MatField,
}

impl SymTensorField {
    pub fn new(mat: MatField) -> Result<Self> {
        let n = mat.rows();
        if n != mat.cols() {
            return Err(Error::DimensionMismatch("tensor must be square".into()));
        }
        let mut buf = DMatrix::zeros(n, n);
        for idx in 0..mat.grid().len() {
            mat.read_into(idx, &mut buf);
            let asym = (&buf - buf.transpose()).norm();
            if asym > 1e-10 * (1.0 + buf.norm()) {
                return Err(Error::NotSymmetric(asym));
            }
        }
        Ok(Self { mat })
    }

    pub fn mat(&self) -> &MatField {
        &self.mat
    }

    pub fn grid(&self) -> &TorusGrid {
        self.mat.grid()
    }

    /// Residual of the g0-trace condition tr(g0^{-1} h) = 0 over the grid.
    pub fn trace_residual(&self, g0: &MetricField) -> f64 {
        let mut worst = 0.0f64;
        for idx in 0..self.grid().len() {
            let g = g0.get(idx);
            let h = self.mat.get(idx);
            let ginv = g.try_inverse().expect("metric invertible");
            worst = worst.max((ginv * h).trace().abs());
        }
        worst
    }
}

/// L2 inner product <h, k>_g = integral of (h, k)_g dmu_g, with
/// (h, k)_g = tr(G^{-1} h G^{-1} k) and rectangle quadrature (exact
/// trapezoid on the periodic grid).
pub fn l2_inner(h: &SymTensorField, k: &SymTensorField, g: &MetricField) -> Result<f64> {
    if h.grid() != g.grid() || k.grid() != g.grid() {
        return Err(Error::DimensionMismatch("fields on different grids".into()));
    }
    let grid = g.grid();
    let weight = grid.spacing().powi(grid.dim() as i32);
    let mut acc = 0.0;
    for idx in 0..grid.len() {
        let gm = g.get(idx);
        let det = gm.determinant();
        if det <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let ginv = gm.try_inverse().ok_or(Error::NotPositiveDefinite)?;
        let hm = h.mat().get(idx);
        let km = k.mat().get(idx);
        let integrand = (&ginv * hm * &ginv * km).trace();
        acc += integrand * det.sqrt() * weight;
    }
    Ok(acc)
}
