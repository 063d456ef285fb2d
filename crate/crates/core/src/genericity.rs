//! Singular-locus detection, numerical transversality of the section
//! against the codimension-two stratified set of repeated eigenvalues,
//! perturbation-to-genericity, and the constructive three-dimensional
//! scenario with a scalar-curvature spike.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::cluster::BlockFrame;
use crate::error::{Error, Result};
use crate::field::{
    assemble_endo, frame_from_generator, so_exp, BlockData, EndoField, FrameField, MatField,
    MetricField, Region, ScalarField, TorusGrid,
};
use crate::strata::codim_of;
use crate::symcore::{self, d_of, Multiplicity};

/// A location where the spectrum of H degenerates.
#[derive(Debug, Clone)]
pub struct SingularHit {
    /// Grid point at which the hit was flagged (a local minimum of the gap
    /// field).
    pub grid_index: usize,
    /// Refined fractional position in [0,1)^n after edge bisection.
    pub position: Vec<f64>,
    /// Eigenvalue multiplicity at the refined point.
    pub m: Multiplicity,
    /// Smallest consecutive eigenvalue gap at the refined point.
    pub gap: f64,
    /// Smallest singular value of the transversality map, when computed.
    pub margin: Option<f64>,
    pub transversal: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct LocusReport {
    pub hits: Vec<SingularHit>,
    /// Number of grid points whose gap falls below the tolerance; the
    /// codimension-two scaling test tracks this fraction.
    pub flagged: usize,
    pub gap_tol: f64,
}

fn min_gap(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

/// Scan the grid for near-degenerate spectra: a hit is a strict local
/// minimum of the gap field below `gap_tol` (ties broken towards the lower
/// flat index, so plateaus yield one hit). Each hit is refined by ternary
/// bisection along its incident grid edges, interpolating the frame
/// representation linearly.
pub fn singular_locus(h: &EndoField, gap_tol: f64) -> LocusReport {
    assert!(gap_tol > 0.0, "gap_tol must be positive");
    let grid = *h.grid();
    let n = grid.dim();
    let gap: Vec<f64> = (0..grid.len())
        .map(|idx| min_gap(&h.eigenvalues(idx)))
        .collect();
    let flagged = gap.iter().filter(|&&g| g < gap_tol).count();
    let mut hits = Vec::new();
    for idx in 0..grid.len() {
        if gap[idx] >= gap_tol {
            continue;
        }
        let mut is_min = true;
        for axis in 0..n {
            for delta in [-1isize, 1] {
                let nb = grid.neighbor(idx, axis, delta);
                let better = gap[nb] < gap[idx] || (gap[nb] == gap[idx] && nb < idx);
                if better {
                    is_min = false;
                    break;
                }
            }
            if !is_min {
                break;
            }
        }
        if !is_min {
            continue;
        }
        let (position, refined_gap, values) = refine_hit(h, idx);
        let m = symcore::multiplicity_of(&values, gap_tol);
        hits.push(SingularHit {
            grid_index: idx,
            position,
            m,
            gap: refined_gap,
            margin: None,
            transversal: None,
        });
    }
    LocusReport {
        hits,
        flagged,
        gap_tol,
    }
}

/// Ternary-search the gap minimiser along each incident edge (20
/// iterations) and keep the best edge.
fn refine_hit(h: &EndoField, idx: usize) -> (Vec<f64>, f64, Vec<f64>) {
    let grid = *h.grid();
    let n = grid.dim();
    let here = h.frame_rep(idx);
    let spacing = grid.spacing();
    let base_pos = grid.point(idx);
    let eig_gap = |mat: &DMatrix<f64>| -> (f64, Vec<f64>) {
        let spec = symcore::sorted_eigen_mat(mat).expect("finite entries");
        let vals: Vec<f64> = spec.values.iter().copied().collect();
        (min_gap(&vals), vals)
    };
    let (mut best_gap, mut best_vals) = eig_gap(&here);
    let mut best_pos = base_pos.clone();
    for axis in 0..n {
        for delta in [-1isize, 1] {
            let there = h.frame_rep(grid.neighbor(idx, axis, delta));
            let mut lo = 0.0f64;
            let mut hi = 1.0f64;
            for _ in 0..20 {
                let t1 = lo + (hi - lo) / 3.0;
                let t2 = hi - (hi - lo) / 3.0;
                let g1 = eig_gap(&(&here * (1.0 - t1) + &there * t1)).0;
                let g2 = eig_gap(&(&here * (1.0 - t2) + &there * t2)).0;
                if g1 <= g2 {
                    hi = t2;
                } else {
                    lo = t1;
                }
            }
            let t = (lo + hi) / 2.0;
            let (g, vals) = eig_gap(&(&here * (1.0 - t) + &there * t));
            if g < best_gap {
                best_gap = g;
                best_vals = vals;
                best_pos = base_pos.clone();
                best_pos[axis] =
                    (base_pos[axis] + delta as f64 * t * spacing).rem_euclid(1.0);
            }
        }
    }
    (best_pos, best_gap, best_vals)
}

/// Orthonormal basis of Sym_0(m) as m x m matrices: normalised off-diagonal
/// pairs and an orthonormal ladder of traceless diagonals.
fn sym0_basis(m: usize) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::with_capacity(d_of(m));
    for a in 0..m {
        for b in (a + 1)..m {
            let mut e = DMatrix::zeros(m, m);
            let v = std::f64::consts::FRAC_1_SQRT_2;
            e[(a, b)] = v;
            e[(b, a)] = v;
            basis.push(e);
        }
    }
    for k in 1..m {
        let mut e = DMatrix::zeros(m, m);
        let norm = (k as f64 * (k as f64 + 1.0)).sqrt();
        for j in 0..k {
            e[(j, j)] = 1.0 / norm;
        }
        e[(k, k)] = -(k as f64) / norm;
        basis.push(e);
    }
    basis
}

#[derive(Debug, Clone)]
pub struct MarginReport {
    pub margin: f64,
    pub tol: f64,
    pub transversal: bool,
    /// The finite-difference scale of H used to set the tolerance.
    pub grad_scale: f64,
}

/// Smallest singular value of the map x -> (S_1(x), ..., S_r(x)) of
/// block remainders near the hit, differentiated by central grid-step
/// differences in the frame trivialisation. Transversal when the margin
/// clears 1e-4 times the gradient scale of H (or the supplied tolerance).
pub fn transversality_margin(
    h: &EndoField,
    hit: &SingularHit,
    margin_tol: Option<f64>,
) -> Result<MarginReport> {
    let grid = *h.grid();
    let n = grid.dim();
    let codim = codim_of(&hit.m);
    if codim > n {
        return Err(Error::CodimensionTooLarge { codim, n });
    }
    let idx = hit.grid_index;
    let base = h.frame_rep(idx);
    let spec = symcore::sorted_eigen_mat(&base)?;
    let parts = hit.m.parts().to_vec();
    let prefix = hit.m.prefix_sums();
    // Cluster intervals from midpoints between cluster means at the hit.
    let mut means = Vec::with_capacity(parts.len());
    {
        let mut start = 0;
        for &end in &prefix {
            let s: f64 = (start..end).map(|j| spec.values[j]).sum();
            means.push(s / (end - start) as f64);
            start = end;
        }
    }
    let interval = |i: usize| -> (f64, f64) {
        let lo = if i == 0 {
            means[0] - 1.0 - (spec.values[prefix[0] - 1] - spec.values[0]).abs()
        } else {
            (means[i - 1] + means[i]) / 2.0
        };
        let hi = if i + 1 == means.len() {
            *means.last().unwrap() + 1.0 + (spec.values[n - 1] - spec.values[0]).abs()
        } else {
            (means[i] + means[i + 1]) / 2.0
        };
        (lo, hi)
    };
    // Reference bases for the clusters with m_i >= 2.
    let mut ref_bases = Vec::new();
    for (i, &mi) in parts.iter().enumerate() {
        if mi < 2 {
            ref_bases.push(None);
            continue;
        }
        let start = if i == 0 { 0 } else { prefix[i - 1] };
        let cols = spec.vectors.columns(start, mi).into_owned();
        ref_bases.push(Some(cols));
    }
    let spacing = grid.spacing();
    let rows: usize = parts.iter().map(|&p| d_of(p)).sum();
    let mut jac = DMatrix::zeros(rows, n);
    let mut grad_scale = 0.0f64;
    for axis in 0..n {
        let plus = h.frame_rep(grid.neighbor(idx, axis, 1));
        let minus = h.frame_rep(grid.neighbor(idx, axis, -1));
        grad_scale = grad_scale.max((&plus - &minus).norm() / (2.0 * spacing));
        let col_p = block_vector(&plus, &parts, &ref_bases, &interval)?;
        let col_m = block_vector(&minus, &parts, &ref_bases, &interval)?;
        for r in 0..rows {
            jac[(r, axis)] = (col_p[r] - col_m[r]) / (2.0 * spacing);
        }
    }
    let svd = jac.svd(false, false);
    let margin = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let tol = margin_tol.unwrap_or(1e-4 * grad_scale.max(1e-8));
    Ok(MarginReport {
        margin,
        tol,
        transversal: margin > tol,
        grad_scale,
    })
}

/// The stacked Sym_0(m_i) coordinates of the block remainders of `mat`,
/// using projector-propagated bases from the reference point.
fn block_vector(
    mat: &DMatrix<f64>,
    parts: &[usize],
    ref_bases: &[Option<DMatrix<f64>>],
    interval: &dyn Fn(usize) -> (f64, f64),
) -> Result<Vec<f64>> {
    let spec = symcore::sorted_eigen_mat(mat)?;
    let n = mat.nrows();
    let mut out = Vec::new();
    for (i, &mi) in parts.iter().enumerate() {
        if mi < 2 {
            continue;
        }
        let (lo, hi) = interval(i);
        // Projector onto the cluster from the sorted eigendecomposition.
        let mut p = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            if spec.values[j] > lo && spec.values[j] < hi {
                let v = spec.vectors.column(j);
                for r in 0..n {
                    for c in 0..n {
                        p[(r, c)] += v[r] * v[c];
                    }
                }
            }
        }
        let reference = ref_bases[i].as_ref().expect("basis for wide cluster");
        // Project and re-orthonormalise in column order.
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(mi);
        for a in 0..mi {
            let mut v: DVector<f64> = &p * reference.column(a).into_owned();
            for prev in &cols {
                let proj = prev.dot(&v);
                v -= prev * proj;
            }
            let norm = v.norm();
            if norm < 1e-8 {
                return Err(Error::Config(
                    "projected cluster basis degenerated near the hit".into(),
                ));
            }
            v /= norm;
            cols.push(v);
        }
        let mut b = DMatrix::zeros(n, mi);
        for (a, v) in cols.iter().enumerate() {
            b.set_column(a, v);
        }
        let block = b.transpose() * mat * &b;
        let s = &block - DMatrix::identity(mi, mi) * (block.trace() / mi as f64);
        for e in sym0_basis(mi) {
            out.push(symcore::mat_inner(&s, &e));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PerturbReport {
    /// Index of the accepted candidate in the seeded sequence (0 means the
    /// input was already generic).
    pub candidate: usize,
    pub hits: usize,
    pub worst_margin: f64,
}

/// Seeded low-frequency traceless symmetric perturbation field with
/// sup-Frobenius norm exactly `magnitude`.
fn perturbation_field(grid: TorusGrid, n: usize, magnitude: f64, seed: u64) -> MatField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut modes = Vec::new();
    for _ in 0..=grid.dim() {
        let a = symcore::random_traceless(n, 1.0, &mut rng);
        let b = symcore::random_traceless(n, 1.0, &mut rng);
        modes.push((a, b));
    }
    let mut raw = MatField::zeros(grid, n, n);
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let mut acc = modes[0].0.matrix().clone();
        for axis in 0..grid.dim() {
            let w = 2.0 * std::f64::consts::PI * x[axis];
            acc += modes[axis + 1].0.matrix() * w.sin() + modes[axis + 1].1.matrix() * w.cos();
        }
        raw.set(idx, &acc);
    }
    let mut sup = 0.0f64;
    for idx in 0..grid.len() {
        sup = sup.max(raw.get(idx).norm());
    }
    let scale = if sup > 0.0 { magnitude / sup } else { 0.0 };
    let mut out = MatField::zeros(grid, n, n);
    for idx in 0..grid.len() {
        out.set(idx, &(raw.get(idx) * scale));
    }
    out
}

/// Search the seeded candidate sequence for a perturbation of H (in its
/// own frame, so self-adjointness and tracelessness are exact) whose
/// singular hits all pass the transversality test. The zeroth candidate is
/// the unperturbed input.
pub fn perturb_to_generic(
    h: &EndoField,
    seed: u64,
    magnitude: f64,
    gap_tol: f64,
    margin_tol: Option<f64>,
    budget: usize,
) -> Result<(EndoField, PerturbReport)> {
    if !(magnitude > 0.0) {
        return Err(Error::Config("perturbation magnitude must be positive".into()));
    }
    let grid = *h.grid();
    let n = h.dim();
    let mut best = f64::NEG_INFINITY;
    for candidate in 0..budget.max(1) {
        let trial = if candidate == 0 {
            h.clone()
        } else {
            let p = perturbation_field(grid, n, magnitude, seed.wrapping_add(candidate as u64));
            let mut mat = MatField::zeros(grid, n, n);
            for idx in 0..grid.len() {
                mat.set(idx, &(h.frame_rep(idx) + p.get(idx)));
            }
            EndoField::new(Arc::clone(h.frame()), mat)?
        };
        let locus = singular_locus(&trial, gap_tol);
        let mut ok = true;
        let mut worst = f64::INFINITY;
        for hit in &locus.hits {
            match transversality_margin(&trial, hit, margin_tol) {
                Ok(report) => {
                    worst = worst.min(report.margin);
                    if !report.transversal {
                        ok = false;
                        break;
                    }
                }
                Err(Error::CodimensionTooLarge { .. }) => {
                    // A stratum too deep to meet transversally: the
                    // candidate is not generic.
                    ok = false;
                    worst = 0.0;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if ok {
            return Ok((
                trial,
                PerturbReport {
                    candidate,
                    hits: locus.hits.len(),
                    worst_margin: if worst.is_finite() { worst } else { f64::INFINITY },
                },
            ));
        }
        best = best.max(if worst.is_finite() { worst } else { 0.0 });
    }
    Err(Error::BudgetExhausted {
        tried: budget,
        best,
    })
}

/// Smooth cutoff equal to 1 on the region, falling to 0 across a pad of
/// `pad` samples outside it.
fn cutoff(grid: &TorusGrid, region: &Region, pad: usize, idx: usize) -> f64 {
    let coords = grid.coords(idx);
    let mut psi = 1.0;
    for a in 0..grid.dim() {
        let c = coords[a] as isize;
        let lo = region.lo[a] as isize;
        let hi = region.hi[a] as isize;
        let d = if c >= lo && c < hi {
            0
        } else {
            let below = (lo - c).max(0);
            let above = (c - (hi - 1)).max(0);
            below.max(above)
        };
        if d == 0 {
            continue;
        }
        if d as usize >= pad {
            return 0.0;
        }
        let u = d as f64 / pad as f64;
        psi *= (std::f64::consts::FRAC_PI_2 * u).cos().powi(2);
    }
    psi
}

/// Perturb only the frame of a block decomposition (leaving the lambda and
/// S data untouched) until the J-indexed first-leg structure sum is
/// strictly positive at every region sample. J lists eigen-index pairs
/// (j, k) with 1 < j < k, and must have more than n members.
pub fn posstr_frame_perturbation(
    bf: &BlockFrame,
    g0: &MetricField,
    region: &Region,
    j_set: &[(usize, usize)],
    seed: u64,
    magnitude: f64,
    budget: usize,
) -> Result<(BlockFrame, usize)> {
    let grid = *bf.frame.grid();
    let n = bf.frame.dim();
    if j_set.len() <= n {
        return Err(Error::TooFewTriplets {
            got: j_set.len(),
            need: n,
        });
    }
    for &(j, k) in j_set {
        if !(1 < j && j < k && k <= n) {
            return Err(Error::Config(format!("bad index pair ({j},{k})")));
        }
    }
    let sum_min = |frame: &FrameField| -> f64 {
        let slot = |a: usize, b: usize, cc: usize| (a * n + b) * n + cc;
        let mut min = f64::INFINITY;
        for idx in region.indices(&grid) {
            let c = crate::curvature::c_tensor_at(frame.mat(), g0.mat(), idx);
            let mut acc = 0.0;
            for &(j, k) in j_set {
                let v = c[slot(0, j - 1, k - 1)];
                acc += v * v;
            }
            min = min.min(acc);
        }
        min
    };
    let floor = 1e-12;
    if sum_min(&bf.frame) > floor {
        return Ok((bf.clone(), 0));
    }
    let pad = (grid.res() / 8).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for candidate in 1..=budget {
        // Low-frequency antisymmetric generator, cut off outside the region.
        let mut rand_antisym = || {
            let mut a = DMatrix::zeros(n, n);
            for r in 0..n {
                for c in (r + 1)..n {
                    let v = rng.random_range(-1.0..1.0);
                    a[(r, c)] = v;
                    a[(c, r)] = -v;
                }
            }
            a
        };
        let base = rand_antisym();
        let modes: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..grid.dim())
            .map(|_| (rand_antisym(), rand_antisym()))
            .collect();
        let mut frame_mat = MatField::zeros(grid, n, n);
        for idx in 0..grid.len() {
            let x = grid.point(idx);
            let mut v = base.clone();
            for axis in 0..grid.dim() {
                let w = 2.0 * std::f64::consts::PI * x[axis];
                v += &modes[axis].0 * w.sin() + &modes[axis].1 * w.cos();
            }
            let psi = cutoff(&grid, region, pad, idx);
            let rot = so_exp(&(v * (psi * magnitude)));
            // The generator conjugation keeps g0-orthonormality:
            // E' = sqrt(G^{-1}) exp(V) sqrt(G) E.
            let g = g0.get(idx);
            let sg = symcore::spd_sqrt(&g)?;
            let isg = symcore::spd_inv_sqrt(&g)?;
            frame_mat.set(idx, &(isg * rot * sg * bf.frame.get(idx)));
        }
        let frame = FrameField::new(frame_mat, g0, 1e-9)?;
        if sum_min(&frame) > floor {
            let mut out = bf.clone();
            out.frame = frame;
            return Ok((out, candidate));
        }
    }
    Err(Error::BudgetExhausted {
        tried: budget,
        best: 0.0,
    })
}

/// The constructive three-dimensional scenario: an H whose scalar
/// curvature blows up to +infinity at a designed point p while the decay
/// membership test fails.
pub struct SpikeScenario {
    pub g0: MetricField,
    pub frame: Arc<FrameField>,
    pub lambdas: Vec<ScalarField>,
    pub h: EndoField,
    /// Grid index of the designed point (the origin).
    pub p: usize,
}

/// Build the spike on a flat 3-torus. At the origin p the structure
/// function c_123 vanishes with e_3(c_123) = 1, the eigenvalue derivatives
/// e_1(lambda_1) and e_1(lambda_2) vanish, and e_1 e_1 lambda_1 > C, so
/// the t-linear coefficient of e^{-lambda_1 t} dominates and R(p) grows.
/// The ordering lambda_1 < 0 < lambda_2 < lambda_3 holds on the whole
/// grid. Coordinate fields on the flat chart commute globally, which is
/// all the construction needs from geodesic normal coordinates.
pub fn build_3d_spike(grid: TorusGrid, c_big: f64) -> Result<SpikeScenario> {
    if grid.dim() != 3 {
        return Err(Error::Config("spike lives on a 3-torus".into()));
    }
    if !(c_big > 0.0) {
        return Err(Error::Config("C must be positive".into()));
    }
    let g0 = MetricField::flat(grid);
    let two_pi = 2.0 * std::f64::consts::PI;
    let s = move |u: f64| (two_pi * u).sin() / two_pi;
    // Generator with V_32 = s(x1) s(x3): second derivatives at p give
    // e_3(c_123) = 1 while V and DV vanish there.
    let gen = MatField::from_fn(grid, 3, 3, |x| {
        let v = s(x[0]) * s(x[2]);
        let mut m = DMatrix::zeros(3, 3);
        m[(2, 1)] = v;
        m[(1, 2)] = -v;
        m
    });
    let frame = Arc::new(frame_from_generator(&g0, &gen)?);
    let q1 = (c_big + 1.0) / (two_pi * two_pi);
    let mf = 2.0 * q1;
    let q2 = 1.0 / (two_pi * two_pi);
    let k1 = -mf - 1.0;
    let k2 = q2 + 0.2;
    let lam1 = ScalarField::from_fn(grid, move |x| q1 * (1.0 - (two_pi * x[0]).cos()) + k1);
    let lam2 = ScalarField::from_fn(grid, move |x| s(x[0]) * s(x[1]) + k2);
    let lam3 = {
        let l1 = lam1.clone();
        let l2 = lam2.clone();
        ScalarField::from_data(
            grid,
            (0..grid.len()).map(|i| -l1.get(i) - l2.get(i)).collect(),
        )
        .expect("sized")
    };
    // The displayed ordering must hold everywhere.
    for idx in 0..grid.len() {
        let (a, b, c) = (lam1.get(idx), lam2.get(idx), lam3.get(idx));
        if !(a < 0.0 && 0.0 < b && b < c) {
            return Err(Error::Config(format!(
                "spike ordering violated at {:?}: ({a}, {b}, {c})",
                grid.coords(idx)
            )));
        }
    }
    let m = Multiplicity::new(vec![1, 1, 1]).expect("parts");
    let lambdas = vec![lam1, lam2, lam3];
    let h = assemble_endo(
        Arc::clone(&frame),
        &BlockData {
            m: &m,
            lambdas: &lambdas,
            blocks: None,
        },
    )?;
    Ok(SpikeScenario {
        g0,
        frame,
        lambdas,
        h,
        p: 0,
    })
}

/// The designed-locus scenario on the 3-torus: a 2x2 rotation family plus
/// a split-off third eigenvalue, singular exactly on the four circles
/// {sin(2 pi x1) = sin(2 pi x2) = 0}. The split must exceed sqrt(2)/3 so
/// the third eigenvalue never approaches the rotating pair.
pub fn designed_locus_t3(grid: TorusGrid, split: f64) -> Result<EndoField> {
    if grid.dim() != 3 {
        return Err(Error::Config("designed locus lives on a 3-torus".into()));
    }
    if 3.0 * split <= std::f64::consts::SQRT_2 {
        return Err(Error::Config(
            "split too small: the third eigenvalue would graze the pair".into(),
        ));
    }
    let frame = Arc::new(FrameField::identity(grid));
    let two_pi = 2.0 * std::f64::consts::PI;
    let mat = MatField::from_fn(grid, 3, 3, move |x| {
        let a = (two_pi * x[0]).sin();
        let b = (two_pi * x[1]).sin();
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 0)] = a + split;
        m[(0, 1)] = b;
        m[(1, 0)] = b;
        m[(1, 1)] = -a + split;
        m[(2, 2)] = -2.0 * split;
        m
    });
    EndoField::new(frame, mat)
}

/// The n = 2 family H(a(x), b(x)); `degenerate` replaces a by a quadratic
/// zero so the hit fails transversality by design.
pub fn two_torus_family(grid: TorusGrid, degenerate: bool) -> Result<EndoField> {
    if grid.dim() != 2 {
        return Err(Error::Config("family lives on a 2-torus".into()));
    }
    let frame = Arc::new(FrameField::identity(grid));
    let two_pi = 2.0 * std::f64::consts::PI;
    let mat = MatField::from_fn(grid, 2, 2, move |x| {
        let a = if degenerate {
            (1.0 - (two_pi * x[0]).cos()) / 2.0
        } else {
            (two_pi * x[0]).sin()
        };
        let b = (two_pi * x[1]).sin();
        DMatrix::from_row_slice(2, 2, &[a, b, b, -a])
    });
    EndoField::new(frame, mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::DiagonalData;
    use crate::field::structure_functions;

    #[test]
    fn simple_spectrum_everywhere_has_no_hits() {
        let grid = TorusGrid::new(2, 16).unwrap();
        let frame = Arc::new(FrameField::identity(grid));
        let m = Multiplicity::new(vec![1, 1]).unwrap();
        let lambdas = vec![
            ScalarField::constant(grid, -1.0),
            ScalarField::constant(grid, 1.0),
        ];
        let h = assemble_endo(
            frame,
            &BlockData {
                m: &m,
                lambdas: &lambdas,
                blocks: None,
            },
        )
        .unwrap();
        let report = singular_locus(&h, 0.5);
        assert!(report.hits.is_empty());
        assert_eq!(report.flagged, 0);
    }

    #[test]
    fn two_torus_hits_at_zero_set() {
        // Zeros of (sin 2 pi x1, sin 2 pi x2): four points.
        let h = two_torus_family(TorusGrid::new(2, 32).unwrap(), false).unwrap();
        let report = singular_locus(&h, 0.5);
        assert_eq!(report.hits.len(), 4, "{:?}", report.hits);
        for hit in &report.hits {
            assert!(hit.gap <= 1e-8, "gap {}", hit.gap);
            assert_eq!(hit.m.parts(), &[2]);
        }
        // Stable under resolution doubling, twice.
        for res in [64, 128] {
            let h = two_torus_family(TorusGrid::new(2, res).unwrap(), false).unwrap();
            assert_eq!(singular_locus(&h, 0.5).hits.len(), 4);
        }
    }

    #[test]
    fn two_torus_margin_matches_analytic_jacobian() {
        // At the origin the map is x -> (sqrt(2) sin(2 pi x1), sqrt(2)
        // sin(2 pi x2)) in the orthonormal Sym_0(2) coordinates, so both
        // singular values are 2 sqrt(2) pi (central differences of sin are
        // exact up to O(h^2)).
        let h = two_torus_family(TorusGrid::new(2, 64).unwrap(), false).unwrap();
        let report = singular_locus(&h, 0.5);
        let hit = report
            .hits
            .iter()
            .find(|h| h.grid_index == 0)
            .expect("hit at origin");
        let margin = transversality_margin(&h, hit, None).unwrap();
        let want = 2.0 * std::f64::consts::SQRT_2 * std::f64::consts::PI;
        assert!(
            (margin.margin - want).abs() <= 0.02 * want,
            "margin {} want {want}",
            margin.margin
        );
        assert!(margin.transversal);
    }

    #[test]
    fn degenerate_family_flagged_and_repaired() {
        let grid = TorusGrid::new(2, 32).unwrap();
        let h = two_torus_family(grid, true).unwrap();
        let report = singular_locus(&h, 0.5);
        assert!(!report.hits.is_empty());
        let bad = report
            .hits
            .iter()
            .map(|hit| transversality_margin(&h, hit, None).unwrap())
            .filter(|r| !r.transversal)
            .count();
        assert!(bad > 0, "designed degeneracy should fail transversality");
        // Repair by seeded perturbation.
        let (fixed, info) = perturb_to_generic(&h, 7, 0.35, 0.5, None, 24).unwrap();
        assert!(info.candidate > 0);
        let locus = singular_locus(&fixed, 0.5);
        for hit in &locus.hits {
            let m = transversality_margin(&fixed, hit, None).unwrap();
            assert!(m.transversal, "margin {} tol {}", m.margin, m.tol);
        }
        // The output stays within the requested sup-norm of the input and
        // is exactly symmetric traceless.
        let mut worst = 0.0f64;
        for idx in 0..grid.len() {
            let d = fixed.frame_rep(idx) - h.frame_rep(idx);
            worst = worst.max(d.norm());
            assert!(d.trace().abs() <= 1e-12);
        }
        assert!(worst <= 0.35 + 1e-12, "{worst}");
    }

    #[test]
    fn already_generic_input_returned_unchanged() {
        let h = two_torus_family(TorusGrid::new(2, 32).unwrap(), false).unwrap();
        let (out, info) = perturb_to_generic(&h, 3, 0.2, 0.5, None, 8).unwrap();
        assert_eq!(info.candidate, 0);
        for idx in (0..out.grid().len()).step_by(17) {
            assert_eq!(out.frame_rep(idx), h.frame_rep(idx));
        }
    }

    #[test]
    fn tiny_magnitude_exhausts_budget_on_deep_degeneracy() {
        // A field sitting identically on the triple-degenerate stratum:
        // no 1e-6-sized perturbation can make its hits transversal (the
        // (3)-stratum has codimension 5 > 3).
        let grid = TorusGrid::new(3, 8).unwrap();
        let frame = Arc::new(FrameField::identity(grid));
        let mat = MatField::zeros(grid, 3, 3);
        let h = EndoField::new(frame, mat).unwrap();
        let err = perturb_to_generic(&h, 1, 1e-6, 0.5, None, 4);
        assert!(matches!(err, Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn margin_invariant_under_constant_conjugation() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = TorusGrid::new(2, 32).unwrap();
        let h = two_torus_family(grid, false).unwrap();
        let a = symcore::random_orthogonal(2, &mut rng);
        let mut mat = MatField::zeros(grid, 2, 2);
        for idx in 0..grid.len() {
            mat.set(idx, &(&a * h.frame_rep(idx) * a.transpose()));
        }
        let hr = EndoField::new(Arc::clone(h.frame()), mat).unwrap();
        let hits = singular_locus(&h, 0.5).hits;
        let hits_r = singular_locus(&hr, 0.5).hits;
        assert_eq!(hits.len(), hits_r.len());
        for (x, y) in hits.iter().zip(&hits_r) {
            let mx = transversality_margin(&h, x, None).unwrap().margin;
            let my = transversality_margin(&hr, y, None).unwrap().margin;
            assert!((mx - my).abs() <= 1e-8 * (1.0 + mx), "{mx} vs {my}");
        }
    }

    #[test]
    fn codim_too_large_is_reported() {
        let grid = TorusGrid::new(3, 8).unwrap();
        let frame = Arc::new(FrameField::identity(grid));
        let mat = MatField::zeros(grid, 3, 3);
        let h = EndoField::new(frame, mat).unwrap();
        let report = singular_locus(&h, 0.5);
        assert!(!report.hits.is_empty());
        // The zero matrix carries multiplicity (3): codim 5 > 3.
        match transversality_margin(&h, &report.hits[0], None) {
            Err(Error::CodimensionTooLarge { codim, n }) => {
                assert_eq!((codim, n), (5, 3));
            }
            other => panic!("expected codimension error, got {other:?}"),
        }
    }

    #[test]
    fn designed_locus_scales_like_codimension_two() {
        // Fraction of flagged points scales like res^-2 when the gap
        // tolerance tracks the spacing.
        let mut fractions = Vec::new();
        for res in [32usize, 64, 128] {
            let grid = TorusGrid::new(3, res).unwrap();
            let h = designed_locus_t3(grid, 1.2).unwrap();
            // gap ~ 2 |(a,b)|; tolerance proportional to the spacing.
            let tol = 8.0 / res as f64;
            let report = singular_locus(&h, tol);
            fractions.push(report.flagged as f64 / grid.len() as f64);
        }
        for w in fractions.windows(2) {
            let ratio = w[0] / w[1];
            assert!(
                ratio >= 4.0 / 3.0 && ratio <= 4.0 * 3.0,
                "scaling ratio {ratio}, fractions {fractions:?}"
            );
        }
    }

    #[test]
    fn posstr_perturbation_turns_on_constant_frame() {
        // A constant frame on T^6 with simple spectrum has every structure
        // function zero; a single generator candidate must make the
        // J-indexed sum positive on the region.
        let grid = TorusGrid::new(6, 8).unwrap();
        let g0 = MetricField::flat(grid);
        let frame = FrameField::identity(grid);
        let m = Multiplicity::new(vec![1; 6]).unwrap();
        let lam: Vec<ScalarField> = (0..6)
            .map(|i| ScalarField::constant(grid, i as f64 - 2.5))
            .collect();
        let spec = crate::cluster::ClusterSpec::new(
            m,
            (0..6).map(|i| i as f64 - 2.5).collect(),
            None,
        )
        .unwrap();
        let bf = BlockFrame {
            frame,
            lambdas: lam,
            blocks: (0..6).map(|_| MatField::zeros(grid, 1, 1)).collect(),
            spec,
            region: Region::full(&grid),
        };
        let region = Region::full(&grid);
        // All (j,k) with 1 < j < k <= 6: seven or more pairs needed.
        let mut j_set = Vec::new();
        for j in 2..=6usize {
            for k in (j + 1)..=6 {
                j_set.push((j, k));
            }
        }
        assert!(j_set.len() > 6);
        let (out, candidate) =
            posstr_frame_perturbation(&bf, &g0, &region, &j_set, 9, 0.4, 12).unwrap();
        assert!(candidate >= 1);
        // Lambda data untouched.
        for i in 0..6 {
            assert_eq!(out.lambdas[i].get(0), bf.lambdas[i].get(0));
        }
        // Rejects undersized J.
        assert!(matches!(
            posstr_frame_perturbation(&bf, &g0, &region, &j_set[..5], 9, 0.4, 2),
            Err(Error::TooFewTriplets { .. })
        ));
    }

    #[test]
    fn posstr_perturbation_is_idempotent_once_positive() {
        // Run the search once to turn the sum on, then feed the output
        // back: the second call must return it unchanged (candidate 0).
        let grid = TorusGrid::new(6, 8).unwrap();
        let g0 = MetricField::flat(grid);
        let frame = FrameField::identity(grid);
        let m = Multiplicity::new(vec![1; 6]).unwrap();
        let lam: Vec<ScalarField> = (0..6)
            .map(|i| ScalarField::constant(grid, i as f64 - 2.5))
            .collect();
        let spec = crate::cluster::ClusterSpec::new(
            m,
            (0..6).map(|i| i as f64 - 2.5).collect(),
            None,
        )
        .unwrap();
        let bf = BlockFrame {
            frame,
            lambdas: lam,
            blocks: (0..6).map(|_| MatField::zeros(grid, 1, 1)).collect(),
            spec,
            region: Region::full(&grid),
        };
        let region = Region::full(&grid);
        let mut j_set = Vec::new();
        for j in 2..=6usize {
            for k in (j + 1)..=6 {
                j_set.push((j, k));
            }
        }
        let (on, candidate) =
            posstr_frame_perturbation(&bf, &g0, &region, &j_set, 9, 0.4, 12).unwrap();
        assert!(candidate >= 1);
        let (_again, candidate2) =
            posstr_frame_perturbation(&on, &g0, &region, &j_set, 10, 0.4, 12).unwrap();
        assert_eq!(candidate2, 0);
    }

    #[test]
    fn spike_construction_hits_its_marks() {
        let grid = TorusGrid::new(3, 48).unwrap();
        let c_big = 10.0;
        let spike = build_3d_spike(grid, c_big).unwrap();
        let p = spike.p;
        let g0 = &spike.g0;
        // Structure functions and eigenvalue derivatives at p.
        let c0 = structure_functions(&spike.frame, g0);
        let n = 3;
        let slot = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let c123 = &c0[slot(0, 1, 2)];
        assert!(c123.get(p).abs() <= 1e-3, "c_123(p) = {}", c123.get(p));
        // e_3 c_123 = 1 at p.
        let d3 = crate::field::finite_diff(c123, 2, 4);
        assert!(
            (d3.get(p) - 1.0).abs() <= 1e-2,
            "e_3 c_123(p) = {}",
            d3.get(p)
        );
        // e_1 lambda_1 = e_1 lambda_2 = 0 at p.
        let d1l1 = crate::field::finite_diff(&spike.lambdas[0], 0, 4);
        let d1l2 = crate::field::finite_diff(&spike.lambdas[1], 0, 4);
        assert!(d1l1.get(p).abs() <= 1e-9);
        assert!(d1l2.get(p).abs() <= 1e-9);
        // e_1 e_1 lambda_1 > C at p.
        let dd = crate::field::finite_diff(&d1l1, 0, 4);
        assert!(dd.get(p) > c_big, "{}", dd.get(p));
        // Curvature at p grows: positive fitted slope of log R(p, t).
        let data = DiagonalData::from_parts(&spike.frame, &spike.lambdas, g0).unwrap();
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for k in 0..=8 {
            let t = 1.0 + k as f64 * 0.5;
            let r = data.eval(t, 2).get(p);
            assert!(r > 0.0, "R(p, {t}) = {r}");
            ts.push(t);
            ys.push(r.ln());
        }
        let (_b, slope, _rms) = crate::asymptotics::log_linear_fit(&ts, &ys);
        assert!(slope > 0.5, "slope {slope}");
    }
}
