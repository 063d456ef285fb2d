//! Asymptotic verification: the delta positivity condition on the
//! first-cluster structure functions, membership in the set of directions
//! with uniformly decaying scalar curvature, predicted dominant exponents,
//! log-linear decay fits, and numerical audits of the two growth-bound
//! inequalities for the evolved structure functions.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::{block_decompose, propose_clustering, BlockFrame};
use crate::curvature::{type_decomposition, CurvatureTrace};
use crate::error::{Error, Result};
use crate::field::{d4_scalar, structure_functions, EndoField, MetricField, Region, ScalarField};
use crate::symcore::{op_norm_sym, Multiplicity};

/// Cluster offsets: first global frame index of each cluster.
fn offsets(m: &Multiplicity) -> Vec<usize> {
    let mut o = vec![0];
    for &p in m.parts() {
        o.push(o.last().unwrap() + p);
    }
    o
}

/// The delta double sum at one sample: squares of c^{1_a, j_b, k_c} over
/// cluster pairs 1 <= j < k <= L, with a ranging over the whole first
/// cluster.
pub fn delta_sum_at(c0: &[ScalarField], m: &Multiplicity, idx: usize) -> f64 {
    let n = m.total();
    let off = offsets(m);
    let l = m.len();
    let slot = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let mut acc = 0.0;
    for j in 0..l {
        for k in (j + 1)..l {
            for a in 0..m.parts()[0] {
                for b in 0..m.parts()[j] {
                    for c in 0..m.parts()[k] {
                        let v = c0[slot(a, off[j] + b, off[k] + c)].get(idx);
                        acc += v * v;
                    }
                }
            }
        }
    }
    acc
}

/// The open-condition sum: as [`delta_sum_at`] but with a fixed to the
/// first frame vector of the first cluster.
pub fn posstr_sum_at(c0: &[ScalarField], m: &Multiplicity, idx: usize) -> f64 {
    let n = m.total();
    let off = offsets(m);
    let l = m.len();
    let slot = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let mut acc = 0.0;
    for j in 0..l {
        for k in (j + 1)..l {
            for b in 0..m.parts()[j] {
                for c in 0..m.parts()[k] {
                    let v = c0[slot(0, off[j] + b, off[k] + c)].get(idx);
                    acc += v * v;
                }
            }
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub struct DeltaReport {
    /// inf over the region of the delta double sum.
    pub delta: f64,
    /// Grid coordinates where the infimum is attained.
    pub argmin: Vec<usize>,
}

/// delta_p = inf over the region of the first-cluster structure-function
/// sum, with the structure functions taken in the block frame's own basis.
pub fn delta_condition(
    c0: &[ScalarField],
    m: &Multiplicity,
    region: &Region,
    grid: &crate::field::TorusGrid,
) -> DeltaReport {
    let mut delta = f64::INFINITY;
    let mut argmin = Vec::new();
    for idx in region.indices(grid) {
        let v = delta_sum_at(c0, m, idx);
        if v < delta {
            delta = v;
            argmin = grid.coords(idx);
        }
    }
    DeltaReport { delta, argmin }
}

/// Verdict for one cover region of a membership check.
#[derive(Debug, Clone)]
pub struct RegionVerdict {
    pub region: Region,
    pub admissible: bool,
    pub reason: String,
    /// min over the region of the open-condition sum (when admissible).
    pub min_posstr: f64,
    pub member: bool,
}

#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub regions: Vec<RegionVerdict>,
    pub member: bool,
}

/// Membership test over a cover: every region must admit an eps-admissible
/// clustering with L >= 2 (the hypothesis is checked on the stencil-dilated
/// region, mirroring the nested-neighbourhood setup), and the
/// first-frame-vector structure sum must be strictly positive at every
/// region sample.
pub fn y_membership(
    h: &EndoField,
    g0: &MetricField,
    cover: &[Region],
    eps_divisor: f64,
) -> Result<MembershipReport> {
    let grid = h.grid();
    if cover.is_empty() {
        return Err(Error::Config("membership needs a nonempty cover".into()));
    }
    for idx in 0..grid.len() {
        let coords = grid.coords(idx);
        if !cover.iter().any(|r| r.contains(&coords)) {
            return Err(Error::Config(format!("cover misses grid point {coords:?}")));
        }
    }
    let mut regions = Vec::new();
    let mut member = true;
    for region in cover {
        let work = region.dilate(grid, 2);
        let verdict = match propose_clustering(h, &work, eps_divisor) {
            Err(e) => RegionVerdict {
                region: region.clone(),
                admissible: false,
                reason: e.to_string(),
                min_posstr: f64::NAN,
                member: false,
            },
            Ok(spec) => match block_decompose(h, &spec, &work, g0) {
                Err(e) => RegionVerdict {
                    region: region.clone(),
                    admissible: false,
                    reason: e.to_string(),
                    min_posstr: f64::NAN,
                    member: false,
                },
                Ok(bf) => {
                    let c0 = structure_functions(&bf.frame, g0);
                    let mut min_posstr = f64::INFINITY;
                    for idx in region.indices(grid) {
                        min_posstr = min_posstr.min(posstr_sum_at(&c0, &spec.m, idx));
                    }
                    let ok = min_posstr > 0.0;
                    RegionVerdict {
                        region: region.clone(),
                        admissible: true,
                        reason: if ok {
                            format!("clustering {} admissible", spec.m)
                        } else {
                            "structure sum vanishes on the region".into()
                        },
                        min_posstr,
                        member: ok,
                    }
                }
            },
        };
        member &= verdict.member;
        regions.push(verdict);
    }
    Ok(MembershipReport { regions, member })
}

/// Predicted dominant exponent and its derivation.
#[derive(Debug, Clone)]
pub struct RateReport {
    /// max over active cluster triples of inf_region(lambda_k - lambda_i -
    /// lambda_j).
    pub rho: f64,
    /// The conservative bound -lambda_1 + r/2, uniform over the region.
    pub floor: f64,
    /// Active triples (i, j, k) with their exponents, 0-based cluster ids.
    pub active: Vec<(usize, usize, usize, f64)>,
}

/// Dominant-exponent prediction from the active structure-function
/// support: a pairwise-distinct cluster triple is active when its
/// region-max squared structure function exceeds `threshold_factor` times
/// the global maximum.
pub fn predicted_rate(
    bf: &BlockFrame,
    c0: &[ScalarField],
    region: &Region,
    delta_p: f64,
    threshold_factor: f64,
) -> Result<RateReport> {
    if !(delta_p > 0.0) {
        return Err(Error::DeltaNotPositive(delta_p));
    }
    let m = &bf.spec.m;
    let l = m.len();
    let n = m.total();
    let off = offsets(m);
    let grid = bf.frame.grid();
    let slot = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let indices = region.indices(grid);
    let mut cmax = vec![0.0f64; l * l * l];
    for (ci, cj, ck) in pd_triples(l) {
        let mut worst = 0.0f64;
        for &idx in &indices {
            for a in 0..m.parts()[ci] {
                for b in 0..m.parts()[cj] {
                    for c in 0..m.parts()[ck] {
                        let v = c0[slot(off[ci] + a, off[cj] + b, off[ck] + c)].get(idx);
                        worst = worst.max(v * v);
                    }
                }
            }
        }
        cmax[(ci * l + cj) * l + ck] = worst;
    }
    let global = cmax.iter().copied().fold(0.0f64, f64::max);
    let mut active = Vec::new();
    let mut rho = f64::NEG_INFINITY;
    for (ci, cj, ck) in pd_triples(l) {
        if cmax[(ci * l + cj) * l + ck] <= threshold_factor * global {
            continue;
        }
        let mut exponent = f64::INFINITY;
        for &idx in &indices {
            let v = bf.lambdas[ck].get(idx) - bf.lambdas[ci].get(idx) - bf.lambdas[cj].get(idx);
            exponent = exponent.min(v);
        }
        rho = rho.max(exponent);
        active.push((ci, cj, ck, exponent));
    }
    let lam1_sup = bf.lambdas[0].max_over(region);
    let floor = -lam1_sup + bf.spec.r / 2.0;
    Ok(RateReport { rho, floor, active })
}

fn pd_triples(l: usize) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for i in 0..l {
        for j in 0..l {
            for k in 0..l {
                if i != j && j != k && i != k {
                    out.push((i, j, k));
                }
            }
        }
    }
    out
}

/// A windowed log-linear fit of a decaying trace:
/// -sup R(t) = C1 e^{C2 t} over [t_lo, t_hi].
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub t_lo: f64,
    pub t_hi: f64,
    pub c1: f64,
    pub c2: f64,
    /// RMS residual of the straight-line fit in log space.
    pub residual: f64,
    pub samples: usize,
}

/// Least squares for y = a + b t; returns (intercept, slope, rms).
pub fn log_linear_fit(ts: &[f64], log_ys: &[f64]) -> (f64, f64, f64) {
    let n = ts.len() as f64;
    let sum_t: f64 = ts.iter().sum();
    let sum_y: f64 = log_ys.iter().sum();
    let sum_tt: f64 = ts.iter().map(|t| t * t).sum();
    let sum_ty: f64 = ts.iter().zip(log_ys).map(|(t, y)| t * y).sum();
    let denom = n * sum_tt - sum_t * sum_t;
    let slope = (n * sum_ty - sum_t * sum_y) / denom;
    let intercept = (sum_y - slope * sum_t) / n;
    let mut rss = 0.0;
    for (t, y) in ts.iter().zip(log_ys) {
        let e = y - (intercept + slope * t);
        rss += e * e;
    }
    (intercept, slope, (rss / n).sqrt())
}

/// Fit the decay law through log(-sup R) on the window. Every sample in
/// the window must have negative sup R; fewer than five samples is a
/// configuration error.
pub fn fit_decay(trace: &CurvatureTrace, window: (f64, f64)) -> Result<DecayFit> {
    let (t_lo, t_hi) = window;
    if t_hi <= t_lo {
        return Err(Error::Config("empty fit window".into()));
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (t, sup) in trace.times.iter().zip(&trace.sup) {
        if *t < t_lo || *t > t_hi {
            continue;
        }
        if *sup >= 0.0 {
            return Err(Error::NonNegativeCurvature { t: *t, sup_r: *sup });
        }
        ts.push(*t);
        ys.push((-sup).ln());
    }
    if ts.len() < 5 {
        return Err(Error::Config(format!(
            "decay fit needs at least 5 samples in the window, got {}",
            ts.len()
        )));
    }
    let (intercept, slope, residual) = log_linear_fit(&ts, &ys);
    Ok(DecayFit {
        t_lo,
        t_hi,
        c1: intercept.exp(),
        c2: slope,
        residual,
        samples: ts.len(),
    })
}

/// Outcome of the growth-bound audit.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub checked: usize,
    pub violations: usize,
    /// min over audited tuples of lhs/rhs for the lower bound (>= 1 means
    /// no violation).
    pub worst_lower_ratio: f64,
    /// max over audited tuples of lhs/rhs for the upper bound (<= 1 means
    /// no violation).
    pub worst_upper_ratio: f64,
    /// The derivative constant entering the upper bound.
    pub c_h: f64,
    pub witnesses: Vec<String>,
}

/// Audit constants: both exponent constants and both prefactors are 1.
/// The lower bound is then an exact identity at t = 0 (calibration
/// tightness) and stays provable from operator-norm submultiplicativity;
/// the upper bound absorbs the derivative terms into C(h).
pub const AUDIT_C1: f64 = 1.0;
pub const AUDIT_C2: f64 = 1.0;
pub const AUDIT_C1_TILDE: f64 = 1.0;
pub const AUDIT_C2_TILDE: f64 = 1.0;

/// The derivative constant C(h): the largest |e_u lambda_l| + |e_u S_l|_F
/// over region samples, clusters, and frame directions. The un-halved sum
/// covers the joint contribution of the type II and III terms.
pub fn derivative_constant(bf: &BlockFrame, region: &Region) -> f64 {
    let grid = bf.frame.grid();
    let n = bf.frame.dim();
    let mut worst = 0.0f64;
    for idx in region.indices(grid) {
        for u in 0..n {
            for (l, lam) in bf.lambdas.iter().enumerate() {
                let mut dlam = 0.0;
                let mut ds = 0.0f64;
                for ax in 0..n {
                    let w = bf.frame.mat().entry(idx, ax, u);
                    dlam += w * d4_scalar(lam, idx, ax);
                    let blk = &bf.blocks[l];
                    let mut sq = 0.0;
                    for r in 0..blk.rows() {
                        for c in 0..blk.cols() {
                            let d = crate::field::d4_entry(blk, idx, ax, r, c);
                            sq += d * d;
                        }
                    }
                    ds += w.abs() * sq.sqrt();
                }
                worst = worst.max(dlam.abs() + ds);
            }
        }
    }
    worst
}

/// Verify the two displayed growth inequalities on sampled (point, time,
/// cluster-triple) tuples:
///
/// * lower: sum_abc (g_t)_I^2 >= C1 (alpha_k / (alpha_i alpha_j))
///   e^{-3 C2 |S| t} sum_abc (g_0)^2;
/// * upper: |(g_t)_I| + |(g_t)_II| + |(g_t)_III| <= C1~ (1 + t)
///   sqrt(alpha_k / (alpha_i alpha_j)) e^{3 C2~ |S| t} (max |g_0| + C(h)).
pub fn bound_audit(
    bf: &BlockFrame,
    g0: &MetricField,
    times: &[f64],
    samples_per_time: usize,
    seed: u64,
) -> Result<AuditReport> {
    let m = &bf.spec.m;
    let grid = bf.frame.grid();
    let region = &bf.region;
    // Precondition guard: block remainders must respect the certificate.
    let mut snorm_max = 0.0f64;
    for idx in region.indices(grid) {
        for blk in &bf.blocks {
            snorm_max = snorm_max.max(op_norm_sym(&blk.get(idx)));
        }
    }
    if snorm_max > 4.0 * bf.spec.eps {
        return Err(Error::Config(format!(
            "block norm {snorm_max:.3e} exceeds 4 eps = {:.3e}",
            4.0 * bf.spec.eps
        )));
    }
    let c0 = structure_functions(&bf.frame, g0);
    let c_h = derivative_constant(bf, region);
    let l = m.len();
    let n = m.total();
    let off = offsets(m);
    let slot = |a: usize, b: usize, c: usize| (a * n + b) * n + c;
    let indices = region.indices(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0usize;
    let mut violations = 0usize;
    let mut worst_lower = f64::INFINITY;
    let mut worst_upper: f64 = 0.0;
    let mut witnesses = Vec::new();
    for &t in times {
        let terms = type_decomposition(bf, g0, t)?;
        for _ in 0..samples_per_time {
            let idx = indices[rng.random_range(0..indices.len())];
            let (ci, cj, ck) = (
                rng.random_range(0..l),
                rng.random_range(0..l),
                rng.random_range(0..l),
            );
            let alphas: Vec<f64> =
                (0..l).map(|i| (bf.lambdas[i].get(idx) * t).exp()).collect();
            let mut snorm = 0.0f64;
            for blk in &bf.blocks {
                snorm = snorm.max(op_norm_sym(&blk.get(idx)));
            }
            let weight = alphas[ck] / (alphas[ci] * alphas[cj]);
            let mut lhs = 0.0;
            let mut rhs0 = 0.0;
            let mut c0_max = 0.0f64;
            for a in 0..m.parts()[ci] {
                for b in 0..m.parts()[cj] {
                    for c in 0..m.parts()[ck] {
                        let s = slot(off[ci] + a, off[cj] + b, off[ck] + c);
                        let v = terms.type_i[s].get(idx);
                        lhs += v * v;
                        let w = c0[s].get(idx);
                        rhs0 += w * w;
                        c0_max = c0_max.max(w.abs());
                    }
                }
            }
            let rhs = AUDIT_C1 * weight * (-3.0 * AUDIT_C2 * snorm * t).exp() * rhs0;
            checked += 1;
            if rhs > 0.0 {
                let ratio = lhs / rhs;
                worst_lower = worst_lower.min(ratio);
                if ratio < 1.0 - 1e-9 {
                    violations += 1;
                    if witnesses.len() < 8 {
                        witnesses.push(format!(
                            "lower bound at {:?}, t = {t}, clusters ({ci},{cj},{ck}): ratio {ratio:.6}",
                            grid.coords(idx)
                        ));
                    }
                }
            }
            let cap = AUDIT_C1_TILDE
                * (1.0 + t)
                * weight.sqrt()
                * (3.0 * AUDIT_C2_TILDE * snorm * t).exp()
                * (c0_max + c_h);
            for a in 0..m.parts()[ci] {
                for b in 0..m.parts()[cj] {
                    for c in 0..m.parts()[ck] {
                        let s = slot(off[ci] + a, off[cj] + b, off[ck] + c);
                        let total = terms.type_i[s].get(idx).abs()
                            + terms.type_ii[s].get(idx).abs()
                            + terms.type_iii[s].get(idx).abs();
                        checked += 1;
                        if cap > 0.0 {
                            let ratio = total / cap;
                            worst_upper = worst_upper.max(ratio);
                            if ratio > 1.0 + 1e-9 {
                                violations += 1;
                                if witnesses.len() < 8 {
                                    witnesses.push(format!(
                                        "upper bound at {:?}, t = {t}, slot ({a},{b},{c}) of ({ci},{cj},{ck}): ratio {ratio:.6}",
                                        grid.coords(idx)
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(AuditReport {
        checked,
        violations,
        worst_lower_ratio: worst_lower,
        worst_upper_ratio: worst_upper,
        c_h,
        witnesses,
    })
}
