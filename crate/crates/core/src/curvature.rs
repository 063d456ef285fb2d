//! Geodesics g_t = g_0 exp(tH) of the volume-preserving L2 geometry,
//! evolved orthonormal frames, frame-based Christoffel symbols and scalar
//! curvature, the type I/II/III decomposition of the evolved structure
//! functions, the diagonal-case closed form, and an independent coordinate
//! oracle.
//!
//! Scalar curvature is computed through three routes that only share the
//! finite-difference substrate:
//!
//! * [`scalar_curvature_frame`]: the orthonormal-frame formula
//!   R = 2 sum e_i(Gamma^i_jj) - sum(Gamma^k_ii Gamma^k_jj +
//!   Gamma^j_ik Gamma^j_ki) evaluated on the evolved frame;
//! * [`DiagonalData::eval`]: the closed form with exponential weights
//!   e^{(lambda_k - lambda_i - lambda_j) t} and the F-coefficient families,
//!   valid whenever a smooth eigenframe exists;
//! * [`scalar_curvature_coords`]: coordinate Christoffel symbols and the
//!   Ricci contraction, used as the oracle.

use nalgebra::DMatrix;

use crate::cluster::BlockFrame;
use crate::error::{Error, Result};
use crate::field::{
    d4_entry, d4_scalar, par_fill, par_fill_comps, par_fill_with, structure_functions, EndoField,
    FrameField, MatField, MetricField, Region, ScalarField,
};
use crate::symcore;

/// A geodesic experiment: base metric, direction field, sample times, and
/// the region over which statistics are taken.
pub struct GeodesicSpec<'a> {
    pub g0: &'a MetricField,
    pub h: &'a EndoField,
    pub times: &'a [f64],
    pub region: &'a Region,
}

/// Which scalar-curvature route a trace uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Frame,
    Diagonal,
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Frame => "frame",
            Method::Diagonal => "diagonal",
            Method::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Method::Frame),
            "diagonal" => Ok(Method::Diagonal),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Time-indexed scalar-curvature record with per-time region statistics.
#[derive(Debug, Clone)]
pub struct CurvatureTrace {
    pub method: Method,
    pub times: Vec<f64>,
    pub sup: Vec<f64>,
    pub inf: Vec<f64>,
    pub mean: Vec<f64>,
    /// Set when the |t lambda| > 40 overflow guard truncated the trace: the
    /// first unusable time.
    pub horizon: Option<f64>,
    pub fields: Option<Vec<ScalarField>>,
}

/// The geodesic metric G_t(x) = G_0 exp(t H_coord) in coordinates,
/// assembled per point as G0 E exp(t Hf) E^T G0 from the frame
/// representation. Volume is preserved exactly up to rounding.
pub fn geodesic_metric(g0: &MetricField, h: &EndoField, t: f64) -> Result<MetricField> {
    let grid = *g0.grid();
    let n = g0.dim();
    let mut out = MatField::zeros(grid, n, n);
    let mut gm = DMatrix::zeros(n, n);
    let mut em = DMatrix::zeros(n, n);
    let mut hf = DMatrix::zeros(n, n);
    for idx in 0..grid.len() {
        g0.mat().read_into(idx, &mut gm);
        h.frame().mat().read_into(idx, &mut em);
        h.frame_rep_field().read_into(idx, &mut hf);
        let b = symcore::sym_exp_mat(&hf, t)?;
        let ge = &gm * &em;
        let gt = &ge * b * ge.transpose();
        let gt = (&gt + gt.transpose()) * 0.5;
        out.set(idx, &gt);
    }
    Ok(MetricField::from_mat_unchecked(out))
}

/// The g_t-orthonormal evolved frame
/// e^t_{i_a} = alpha_i^{-1/2} sum exp(-S_i t / 2)_{a a~} e_{i_a~}.
pub fn evolved_frame(bf: &BlockFrame, t: f64) -> Result<FrameField> {
    let grid = *bf.frame.grid();
    let n = bf.frame.dim();
    let parts = bf.spec.m.parts().to_vec();
    let mut out = MatField::zeros(grid, n, n);
    let mut em = DMatrix::zeros(n, n);
    for idx in 0..grid.len() {
        bf.frame.mat().read_into(idx, &mut em);
        let mut b = DMatrix::zeros(n, n);
        let mut start = 0;
        for (i, &mi) in parts.iter().enumerate() {
            let lam = bf.lambdas[i].get(idx);
            let e = -lam * t / 2.0;
            if e.abs() > 700.0 {
                return Err(Error::Overflow(e));
            }
            let scale = e.exp();
            let s = bf.blocks[i].get(idx);
            let block = symcore::sym_exp_mat(&s, -t / 2.0)? * scale;
            for a in 0..mi {
                for c in 0..mi {
                    b[(start + a, start + c)] = block[(a, c)];
                }
            }
            start += mi;
        }
        out.set(idx, &(&em * b));
    }
    Ok(FrameField::from_mat_unchecked(out))
}

/// Structure-function tensor of a frame under a metric at a single point,
/// flattened as c[(i n + j) n + k]. Order-4 stencil on the frame entries.
pub fn c_tensor_at(e: &MatField, g: &MatField, idx: usize) -> Vec<f64> {
    let n = e.rows();
    let mut c = vec![0.0; n * n * n];
    c_tensor_into(e, g, idx, &mut CTensorWorkspace::new(n), &mut c);
    c
}

/// Reusable buffers for the structure-function kernel.
pub struct CTensorWorkspace {
    /// de[axis * n * n + l * n + j] = d_axis E_{lj}
    de: Vec<f64>,
    w: Vec<f64>,
    bracket: Vec<f64>,
}

impl CTensorWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            de: vec![0.0; n * n * n],
            w: vec![0.0; n * n],
            bracket: vec![0.0; n],
        }
    }
}

/// [`c_tensor_at`] into caller-provided storage, with hoisted stencil
/// index computation and whole-sample slice reads.
pub fn c_tensor_into(
    e: &MatField,
    g: &MatField,
    idx: usize,
    ws: &mut CTensorWorkspace,
    out: &mut [f64],
) {
    let n = e.rows();
    let grid = e.grid();
    let h12 = 12.0 * grid.spacing();
    let em = e.point_slice(idx);
    let gm = g.point_slice(idx);
    for axis in 0..n {
        let [p1, p2, m1, m2] = grid.stencil4(idx, axis);
        let sp1 = e.point_slice(p1);
        let sp2 = e.point_slice(p2);
        let sm1 = e.point_slice(m1);
        let sm2 = e.point_slice(m2);
        let dst = &mut ws.de[axis * n * n..(axis + 1) * n * n];
        for (q, d) in dst.iter_mut().enumerate() {
            *d = (-sp2[q] + 8.0 * sp1[q] - 8.0 * sm1[q] + sm2[q]) / h12;
        }
    }
    // w[l * n + k] = (G E)_{lk}
    for l in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for q in 0..n {
                acc += gm[l * n + q] * em[q * n + k];
            }
            ws.w[l * n + k] = acc;
        }
    }
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            for l in 0..n {
                let mut acc = 0.0;
                for m in 0..n {
                    acc += em[m * n + i] * ws.de[m * n * n + l * n + j]
                        - em[m * n + j] * ws.de[m * n * n + l * n + i];
                }
                ws.bracket[l] = acc;
            }
            for k in 0..n {
                let mut acc = 0.0;
                for (l, br) in ws.bracket.iter().enumerate() {
                    acc += br * ws.w[l * n + k];
                }
                out[(i * n + j) * n + k] = acc;
                out[(j * n + i) * n + k] = -acc;
            }
        }
    }
}

#[inline]
fn gamma_from_c(c: &[f64], n: usize, i: usize, j: usize, k: usize) -> f64 {
    // Koszul: 2 Gamma^k_{ij} = c^{ijk} + c^{kij} + c^{kji}
    0.5 * (c[(i * n + j) * n + k] + c[(k * n + i) * n + j] + c[(k * n + j) * n + i])
}

/// Frame Christoffel symbols Gamma^k_{ij} of g_t in the frame E_t, as n^3
/// scalar fields indexed [(i n + j) n + k].
pub fn christoffel_frame(gt: &MetricField, et: &FrameField) -> Vec<ScalarField> {
    let grid = *et.grid();
    let n = et.dim();
    let data = par_fill_comps(grid.len(), n * n * n, 1, |idx, out| {
        let c = c_tensor_at(et.mat(), gt.mat(), idx);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out[(i * n + j) * n + k] = gamma_from_c(&c, n, i, j, k);
                }
            }
        }
    });
    split_fields(grid, data, n * n * n)
}

fn split_fields(grid: crate::field::TorusGrid, data: Vec<f64>, comps: usize) -> Vec<ScalarField> {
    let len = grid.len();
    let mut out = Vec::with_capacity(comps);
    for c in 0..comps {
        let field: Vec<f64> = (0..len).map(|i| data[i * comps + c]).collect();
        out.push(ScalarField::from_data(grid, field).expect("sized"));
    }
    out
}

/// Scalar curvature of g_t through the orthonormal-frame formula
/// R = 2 sum_i e_i(f_i) - sum_k f_k^2 - sum Gamma^j_ik Gamma^j_ki, with
/// f_i = sum_j c^{ijj} the contracted Christoffel symbols, evaluated
/// pointwise from the structure functions of E_t under g_t.
pub fn scalar_curvature_frame(gt: &MetricField, et: &FrameField, workers: usize) -> ScalarField {
    let grid = *et.grid();
    let n = et.dim();
    // Pass one: the contracted fields f_i = sum_j c^{ijj}.
    let fdata = {
        let mut out = vec![0.0; grid.len() * n];
        let chunk_workers = workers.max(1);
        std::thread::scope(|scope| {
            let chunk = grid.len().div_ceil(chunk_workers);
            for (ci, slice) in out.chunks_mut(chunk * n).enumerate() {
                scope.spawn(move || {
                    let mut ws = CTensorWorkspace::new(n);
                    let mut c = vec![0.0; n * n * n];
                    let base = ci * chunk;
                    for (off, point) in slice.chunks_mut(n).enumerate() {
                        let idx = base + off;
                        c_tensor_into(et.mat(), gt.mat(), idx, &mut ws, &mut c);
                        for i in 0..n {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += c[(i * n + j) * n + j];
                            }
                            point[i] = acc;
                        }
                    }
                });
            }
        });
        out
    };
    let f_fields = split_fields(grid, fdata, n);
    // Pass two: assemble R.
    let data = par_fill_with(
        grid.len(),
        workers,
        || (CTensorWorkspace::new(n), vec![0.0; n * n * n]),
        |(ws, c), idx| {
            c_tensor_into(et.mat(), gt.mat(), idx, ws, c);
            let em = et.mat().point_slice(idx);
            let mut term_e = 0.0;
            for (i, f_field) in f_fields.iter().enumerate() {
                let mut dir = 0.0;
                for m in 0..n {
                    dir += em[m * n + i] * d4_scalar(f_field, idx, m);
                }
                term_e += dir;
            }
            let mut term_f = 0.0;
            for f_field in &f_fields {
                let fk = f_field.get(idx);
                term_f += fk * fk;
            }
            let mut term_g = 0.0;
            for i in 0..n {
                for k in 0..n {
                    for j in 0..n {
                        term_g += gamma_from_c(c, n, i, k, j) * gamma_from_c(c, n, k, i, j);
                    }
                }
            }
            2.0 * term_e - term_f - term_g
        },
    );
    ScalarField::from_data(grid, data).expect("sized")
}

/// Reusable buffers for the coordinate-oracle kernel; one per worker.
struct CoordsWorkspace {
    gm: DMatrix<f64>,
    ginv: DMatrix<f64>,
    dg: Vec<DMatrix<f64>>,
    center: Vec<f64>,
    stencil: [Vec<f64>; 4],
    dgamma: Vec<Vec<f64>>,
}

impl CoordsWorkspace {
    fn new(n: usize) -> Self {
        Self {
            gm: DMatrix::zeros(n, n),
            ginv: DMatrix::zeros(n, n),
            dg: vec![DMatrix::zeros(n, n); n],
            center: vec![0.0; n * n * n],
            stencil: std::array::from_fn(|_| vec![0.0; n * n * n]),
            dgamma: vec![vec![0.0; n * n * n]; n],
        }
    }

    /// Coordinate Christoffel symbols at one point,
    /// Gamma^k_{ij} = 1/2 g^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij}),
    /// flattened as [(i n + j) n + k].
    fn christoffel_into(&mut self, g: &MatField, idx: usize, out_slot: usize) {
        let n = g.rows();
        g.read_into(idx, &mut self.ginv);
        let ok = self.ginv.try_inverse_mut();
        debug_assert!(ok, "metric invertible");
        let grid = g.grid();
        let h12 = 12.0 * grid.spacing();
        for (axis, d) in self.dg.iter_mut().enumerate() {
            let [p1, p2, m1, m2] = grid.stencil4(idx, axis);
            let sp1 = g.point_slice(p1);
            let sp2 = g.point_slice(p2);
            let sm1 = g.point_slice(m1);
            let sm2 = g.point_slice(m2);
            for a in 0..n {
                for b in a..n {
                    let q = a * n + b;
                    let v = (-sp2[q] + 8.0 * sp1[q] - 8.0 * sm1[q] + sm2[q]) / h12;
                    d[(a, b)] = v;
                    d[(b, a)] = v;
                }
            }
        }
        let out = if out_slot == 4 {
            &mut self.center
        } else {
            &mut self.stencil[out_slot]
        };
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let mut acc = 0.0;
                    for l in 0..n {
                        acc += self.ginv[(k, l)]
                            * (self.dg[i][(j, l)] + self.dg[j][(i, l)] - self.dg[l][(i, j)]);
                    }
                    out[(i * n + j) * n + k] = 0.5 * acc;
                }
            }
        }
    }
}

/// Independent coordinate oracle: scalar curvature from coordinate
/// Christoffel symbols and the Ricci contraction, all derivatives by
/// order-4 periodic differences (4th-order convergent).
pub fn scalar_curvature_coords(g: &MetricField, workers: usize) -> ScalarField {
    let grid = *g.grid();
    let n = g.dim();
    let h = grid.spacing();
    let data = par_fill_with(
        grid.len(),
        workers,
        || CoordsWorkspace::new(n),
        |ws, idx| {
            ws.christoffel_into(g.mat(), idx, 4);
            for axis in 0..n {
                ws.christoffel_into(g.mat(), grid.neighbor(idx, axis, 1), 0);
                ws.christoffel_into(g.mat(), grid.neighbor(idx, axis, 2), 1);
                ws.christoffel_into(g.mat(), grid.neighbor(idx, axis, -1), 2);
                ws.christoffel_into(g.mat(), grid.neighbor(idx, axis, -2), 3);
                for s in 0..n * n * n {
                    ws.dgamma[axis][s] = (-ws.stencil[1][s] + 8.0 * ws.stencil[0][s]
                        - 8.0 * ws.stencil[2][s]
                        + ws.stencil[3][s])
                        / (12.0 * h);
                }
            }
            g.mat().read_into(idx, &mut ws.gm);
            let ok = ws.gm.try_inverse_mut();
            debug_assert!(ok, "metric invertible");
            let slot = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
            let mut r = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut ric = 0.0;
                    for k in 0..n {
                        ric += ws.dgamma[k][slot(i, j, k)];
                        ric -= ws.dgamma[i][slot(k, j, k)];
                    }
                    for k in 0..n {
                        for l in 0..n {
                            ric += ws.center[slot(k, l, k)] * ws.center[slot(i, j, l)];
                            ric -= ws.center[slot(i, l, k)] * ws.center[slot(k, j, l)];
                        }
                    }
                    r += ws.gm[(i, j)] * ric;
                }
            }
            r
        },
    );
    ScalarField::from_data(grid, data).expect("sized")
}

/// The three pieces of the evolved structure functions, each flattened as
/// n^3 scalar fields over frame-vector indices.
pub struct TypeTerms {
    pub type_i: Vec<ScalarField>,
    pub type_ii: Vec<ScalarField>,
    pub type_iii: Vec<ScalarField>,
}

/// Evaluate the type I/II/III decomposition of (g_t)^{i_a, j_b, k_c} from
/// the block data: type I conjugates the t = 0 structure functions by the
/// in-block exponentials and the alpha weights; types II and III carry the
/// frame derivatives of exp(-t (lambda_j I + S_j) / 2), gated by the
/// cluster Kronecker deltas.
pub fn type_decomposition(bf: &BlockFrame, g0: &MetricField, t: f64) -> Result<TypeTerms> {
    let grid = *bf.frame.grid();
    let n = bf.frame.dim();
    let parts = bf.spec.m.parts().to_vec();
    let l = parts.len();
    let offsets: Vec<usize> = {
        let mut o = vec![0];
        for &p in &parts {
            o.push(o.last().unwrap() + p);
        }
        o
    };
    let c0 = structure_functions(&bf.frame, g0);
    // M_j(x) = exp(-t lambda_j / 2) exp(-t S_j / 2) per cluster, as fields
    // (they get differentiated).
    let mut mfields = Vec::with_capacity(l);
    for (j, &mj) in parts.iter().enumerate() {
        let mut mf = MatField::zeros(grid, mj, mj);
        for idx in 0..grid.len() {
            let lam = bf.lambdas[j].get(idx);
            let s = bf.blocks[j].get(idx);
            let m = symcore::sym_exp_mat(&s, -t / 2.0)? * (-lam * t / 2.0).exp();
            mf.set(idx, &m);
        }
        mfields.push(mf);
    }
    let slot = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let len = grid.len();
    let comps = n * n * n;
    let mut data_i = vec![0.0; len * comps];
    let mut data_ii = vec![0.0; len * comps];
    let mut data_iii = vec![0.0; len * comps];
    for idx in 0..len {
        let mut em = DMatrix::zeros(n, n);
        bf.frame.mat().read_into(idx, &mut em);
        let alphas: Vec<f64> = (0..l).map(|i| (bf.lambdas[i].get(idx) * t).exp()).collect();
        let a_m: Vec<DMatrix<f64>> = (0..l)
            .map(|i| symcore::sym_exp_mat(&bf.blocks[i].get(idx), -t / 2.0))
            .collect::<Result<_>>()?;
        let a_p: Vec<DMatrix<f64>> = (0..l)
            .map(|i| symcore::sym_exp_mat(&bf.blocks[i].get(idx), t / 2.0))
            .collect::<Result<_>>()?;
        // Directional derivatives of the M fields along every frame vector:
        // dm[j][u][(b, bt)] = e_u(M_j)_{b bt} for global frame index u.
        let mut dm: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(l);
        for (j, &mj) in parts.iter().enumerate() {
            let mut per_dir = Vec::with_capacity(n);
            for u in 0..n {
                let mut d = DMatrix::zeros(mj, mj);
                for b in 0..mj {
                    for bt in 0..mj {
                        let mut acc = 0.0;
                        for ax in 0..n {
                            acc += em[(ax, u)] * d4_entry(&mfields[j], idx, ax, b, bt);
                        }
                        d[(b, bt)] = acc;
                    }
                }
                per_dir.push(d);
            }
            dm.push(per_dir);
        }
        for ci in 0..l {
            for cj in 0..l {
                for ck in 0..l {
                    let weight = (alphas[ck] / (alphas[ci] * alphas[cj])).sqrt();
                    for a in 0..parts[ci] {
                        for b in 0..parts[cj] {
                            for c in 0..parts[ck] {
                                let (ga, gb, gc) =
                                    (offsets[ci] + a, offsets[cj] + b, offsets[ck] + c);
                                // Type I
                                let mut acc = 0.0;
                                for at in 0..parts[ci] {
                                    for bt in 0..parts[cj] {
                                        let mut inner = 0.0;
                                        for ct in 0..parts[ck] {
                                            inner += a_p[ck][(c, ct)]
                                                * c0[slot(
                                                    offsets[ci] + at,
                                                    offsets[cj] + bt,
                                                    offsets[ck] + ct,
                                                )]
                                                .get(idx);
                                        }
                                        acc += a_m[ci][(a, at)] * a_m[cj][(b, bt)] * inner;
                                    }
                                }
                                data_i[idx * comps + slot(ga, gb, gc)] = weight * acc;
                                // Type II: j and k clusters coincide.
                                if cj == ck {
                                    let w2 = alphas[ck].sqrt() / alphas[ci].sqrt();
                                    let mut acc = 0.0;
                                    for at in 0..parts[ci] {
                                        let dir = &dm[cj][offsets[ci] + at];
                                        for bt in 0..parts[cj] {
                                            acc += a_m[ci][(a, at)]
                                                * dir[(b, bt)]
                                                * a_p[cj][(c, bt)];
                                        }
                                    }
                                    data_ii[idx * comps + slot(ga, gb, gc)] = w2 * acc;
                                }
                                // Type III: i and k clusters coincide.
                                if ci == ck {
                                    let w3 = -(alphas[ck].sqrt() / alphas[cj].sqrt());
                                    let mut acc = 0.0;
                                    for bt in 0..parts[cj] {
                                        let dir = &dm[ci][offsets[cj] + bt];
                                        for at in 0..parts[ci] {
                                            acc += dir[(a, at)]
                                                * a_m[cj][(b, bt)]
                                                * a_p[ci][(c, at)];
                                        }
                                    }
                                    data_iii[idx * comps + slot(ga, gb, gc)] = w3 * acc;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(TypeTerms {
        type_i: split_fields(grid, data_i, comps),
        type_ii: split_fields(grid, data_ii, comps),
        type_iii: split_fields(grid, data_iii, comps),
    })
}

/// Precomputed ingredients of the diagonal closed form: structure
/// functions, eigenvalue frame-derivatives, and the contracted fields.
pub struct DiagonalData {
    n: usize,
    grid: crate::field::TorusGrid,
    c0: Vec<ScalarField>,
    lambdas: Vec<ScalarField>,
    /// e_lam[i n + j] = e_i(lambda_j)
    e_lam: Vec<ScalarField>,
    /// ee_lam[i] = e_i(e_i lambda_i)
    ee_lam: Vec<ScalarField>,
    /// ef[i] = e_i(f_i) with f_i = sum_j c^{ijj}
    ef: Vec<ScalarField>,
}

impl DiagonalData {
    /// Requires a simple representation: one eigenvalue field per frame
    /// vector and vanishing blocks.
    pub fn new(bf: &BlockFrame, g0: &MetricField) -> Result<Self> {
        if !bf.spec.m.is_simple() {
            return Err(Error::NonSimpleRepresentation(bf.spec.m.parts().to_vec()));
        }
        Self::from_parts(&bf.frame, &bf.lambdas, g0)
    }

    /// Build from a frame of eigenvectors and per-eigenvalue fields.
    pub fn from_parts(
        frame: &FrameField,
        lambdas: &[ScalarField],
        g0: &MetricField,
    ) -> Result<Self> {
        let grid = *frame.grid();
        let n = frame.dim();
        if lambdas.len() != n {
            return Err(Error::NonSimpleRepresentation(vec![lambdas.len()]));
        }
        let c0 = structure_functions(frame, g0);
        let frame_dir = |f: &ScalarField, i: usize| -> ScalarField {
            let data: Vec<f64> = (0..grid.len())
                .map(|idx| {
                    let mut acc = 0.0;
                    for m in 0..n {
                        acc += frame.mat().entry(idx, m, i) * d4_scalar(f, idx, m);
                    }
                    acc
                })
                .collect();
            ScalarField::from_data(grid, data).expect("sized")
        };
        let mut e_lam = Vec::with_capacity(n * n);
        for i in 0..n {
            for lam in lambdas {
                e_lam.push(frame_dir(lam, i));
            }
        }
        let mut ee_lam = Vec::with_capacity(n);
        for i in 0..n {
            ee_lam.push(frame_dir(&e_lam[i * n + i], i));
        }
        let mut ef = Vec::with_capacity(n);
        for i in 0..n {
            let mut f_data = vec![0.0; grid.len()];
            for j in 0..n {
                let cf = &c0[(i * n + j) * n + j];
                for (idx, v) in f_data.iter_mut().enumerate() {
                    *v += cf.get(idx);
                }
            }
            let f = ScalarField::from_data(grid, f_data).expect("sized");
            ef.push(frame_dir(&f, i));
        }
        Ok(Self {
            n,
            grid,
            c0,
            lambdas: lambdas.to_vec(),
            e_lam,
            ee_lam,
            ef,
        })
    }

    pub fn structure_fields(&self) -> &[ScalarField] {
        &self.c0
    }

    /// The closed form
    /// R(g_t) = sum_PD e^{(lambda_k - lambda_i - lambda_j) t} F^k_ij
    ///        + sum_i e^{-lambda_i t} (t^2 F_i^(2) + t F_i^(1) + F_i^(0)).
    pub fn eval(&self, t: f64, workers: usize) -> ScalarField {
        let n = self.n;
        let slot = |i: usize, j: usize, k: usize| (i * n + j) * n + k;
        let data = par_fill(self.grid.len(), workers, |idx| {
            let lam: Vec<f64> = self.lambdas.iter().map(|f| f.get(idx)).collect();
            let mut r = 0.0;
            // Pairwise-distinct part with F^k_ij = -1/4 c_ijk^2.
            for i in 0..n {
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    for k in 0..n {
                        if k == i || k == j {
                            continue;
                        }
                        let c = self.c0[slot(i, j, k)].get(idx);
                        r += ((lam[k] - lam[i] - lam[j]) * t).exp() * (-0.25 * c * c);
                    }
                }
            }
            for i in 0..n {
                let eii = self.e_lam[i * n + i].get(idx);
                let mut f2 = -0.75 * eii * eii;
                let mut f1 = self.ee_lam[i].get(idx);
                let mut f0 = 2.0 * self.ef[i].get(idx);
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let eij = self.e_lam[i * n + j].get(idx);
                    f2 -= 0.25 * eij * eij;
                    let cijj = self.c0[slot(i, j, j)].get(idx);
                    f1 += cijj * (eij - 2.0 * eii);
                    f0 -= 2.0 * cijj * cijj;
                    for k in 0..n {
                        if k == i || k == j {
                            continue;
                        }
                        let cijk = self.c0[slot(i, j, k)].get(idx);
                        let ckij = self.c0[slot(k, i, j)].get(idx);
                        let cikk = self.c0[slot(i, k, k)].get(idx);
                        f0 += 0.5 * cijk * ckij - cijj * cikk;
                    }
                }
                r += (-lam[i] * t).exp() * (t * t * f2 + t * f1 + f0);
            }
            r
        });
        ScalarField::from_data(self.grid, data).expect("sized")
    }
}

/// Quadrature of R against the volume density of g over the torus.
pub fn weighted_integral(r: &ScalarField, g: &MetricField) -> f64 {
    let grid = g.grid();
    let weight = grid.spacing().powi(grid.dim() as i32);
    let mut acc = 0.0;
    for idx in 0..grid.len() {
        let det = g.get(idx).determinant();
        acc += r.get(idx) * det.sqrt() * weight;
    }
    acc
}

/// Largest |eigenvalue| of H over the grid; the overflow guard compares
/// t times this value against [`HORIZON_EXPONENT`].
pub fn max_abs_eigenvalue(h: &EndoField) -> f64 {
    let mut worst = 0.0f64;
    for idx in 0..h.grid().len() {
        for lam in h.eigenvalues(idx) {
            worst = worst.max(lam.abs());
        }
    }
    worst
}

/// Horizon guard threshold on |t lambda|; e^40 approaches the usable f64
/// dynamic range once squared in curvature products.
pub const HORIZON_EXPONENT: f64 = 40.0;

/// Run a scalar-curvature trace with the requested method. Times past the
/// overflow horizon are dropped and reported.
pub fn curvature_trace(
    spec: &GeodesicSpec,
    method: Method,
    bf: Option<&BlockFrame>,
    workers: usize,
    keep_fields: bool,
) -> Result<CurvatureTrace> {
    let lam_max = max_abs_eigenvalue(spec.h);
    let mut times = Vec::new();
    let mut horizon = None;
    for &t in spec.times {
        if t < 0.0 {
            return Err(Error::Config("trace times must be nonnegative".into()));
        }
        if t * lam_max > HORIZON_EXPONENT {
            horizon = Some(t);
            break;
        }
        times.push(t);
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("trace times must strictly increase".into()));
    }
    let diag = match method {
        Method::Diagonal => {
            let bf = bf
                .ok_or_else(|| Error::Config("diagonal method needs a block frame".into()))?;
            Some(DiagonalData::new(bf, spec.g0)?)
        }
        _ => None,
    };
    let mut sup = Vec::new();
    let mut inf = Vec::new();
    let mut mean = Vec::new();
    let mut fields = Vec::new();
    for &t in &times {
        let r = match method {
            Method::Oracle => {
                let gt = geodesic_metric(spec.g0, spec.h, t)?;
                scalar_curvature_coords(&gt, workers)
            }
            Method::Frame => {
                let bf = bf
                    .ok_or_else(|| Error::Config("frame method needs a block frame".into()))?;
                let gt = geodesic_metric(spec.g0, spec.h, t)?;
                let et = evolved_frame(bf, t)?;
                scalar_curvature_frame(&gt, &et, workers)
            }
            Method::Diagonal => diag.as_ref().expect("prepared above").eval(t, workers),
        };
        if r.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("curvature field at t = {t}")));
        }
        sup.push(r.max_over(spec.region));
        inf.push(r.min_over(spec.region));
        mean.push(r.mean_over(spec.region));
        if keep_fields {
            fields.push(r);
        }
    }
    Ok(CurvatureTrace {
        method,
        times,
        sup,
        inf,
        mean,
        horizon,
        fields: if keep_fields { Some(fields) } else { None },
    })
}
