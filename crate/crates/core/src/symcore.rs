//! Pointwise linear algebra on traceless symmetric matrices.
//!
//! The ambient space is Sym_0(n), real symmetric n x n matrices with zero
//! trace and inner product <S1, S2> = tr(S1 S2). This module provides
//! spectra with a reproducible eigenvector convention, eigenvalue
//! multiplicities, canonical diagonal representatives, the orthogonal
//! normal-space decomposition attached to a multiplicity, the linear
//! normal-form coordinates on a traceless block, and the symmetric matrix
//! exponential.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Relative tolerance used when validating symmetry and trace on input.
const INPUT_TOL: f64 = 1e-12;

/// A real symmetric n x n matrix with zero trace, 2 <= n <= 8.
///
/// Stored fully symmetric; the constructor symmetrises the input exactly
/// (average with the transpose) after rejecting inputs whose asymmetry or
/// trace exceed `1e-12 * (1 + |S|_F)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TracelessSym {
    mat: DMatrix<f64>,
}

impl TracelessSym {
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        let n = mat.nrows();
        if n != mat.ncols() || !(2..=8).contains(&n) {
            return Err(Error::DimensionMismatch(format!(
                "expected square matrix with 2 <= n <= 8, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("traceless symmetric input".into()));
        }
        let scale = 1.0 + mat.norm();
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((mat[(i, j)] - mat[(j, i)]).abs());
            }
        }
        if asym > INPUT_TOL * scale {
            return Err(Error::NotSymmetric(asym));
        }
        let trace = mat.trace();
        if trace.abs() > INPUT_TOL * scale {
            return Err(Error::TraceViolation {
                trace,
                tol: INPUT_TOL * scale,
            });
        }
        let sym = (&mat + mat.transpose()) * 0.5;
        Ok(Self { mat: sym })
    }

    /// Diagonal representative D_lambda = Diag(lambda_1, ..., lambda_n).
    ///
    /// The entries must sum to zero within `1e-10 * (1 + |lambda|)`.
    pub fn diag_rep(lambda: &[f64]) -> Result<Self> {
        let n = lambda.len();
        let scale = 1.0 + lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
        let sum: f64 = lambda.iter().sum();
        if sum.abs() > 1e-10 * scale {
            return Err(Error::NonZeroSum(sum));
        }
        let mut mat = DMatrix::zeros(n, n);
        for (i, &v) in lambda.iter().enumerate() {
            mat[(i, i)] = v - sum / n as f64;
        }
        Self::new(mat)
    }

    /// The 2x2 family H(a, b) = [[a, b], [b, -a]].
    pub fn two_by_two(a: f64, b: f64) -> Self {
        let mat = DMatrix::from_row_slice(2, 2, &[a, b, b, -a]);
        Self::new(mat).expect("2x2 family is symmetric and traceless by construction")
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.mat
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        self.mat.norm()
    }

    /// Operator norm; for symmetric matrices this is the largest |eigenvalue|.
    pub fn norm_op(&self) -> f64 {
        op_norm_sym(&self.mat)
    }

    /// Conjugate by an orthogonal matrix: S -> A S A^T.
    pub fn conjugate(&self, a: &DMatrix<f64>) -> Result<Self> {
        Self::new(a * &self.mat * a.transpose())
    }
}

/// Operator norm of a symmetric matrix via its spectrum.
pub fn op_norm_sym(mat: &DMatrix<f64>) -> f64 {
    let eig = mat.clone().symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// tr(S1 * S2), the Sym_0(n) inner product.
pub fn frobenius_inner(s1: &TracelessSym, s2: &TracelessSym) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "inner product needs equal dimensions, got {} and {}",
            s1.dim(),
            s2.dim()
        )));
    }
    Ok(mat_inner(s1.matrix(), s2.matrix()))
}

/// tr(A^T B) for plain matrices (equals tr(A B) on symmetric inputs).
pub fn mat_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Eigendecomposition of a traceless symmetric matrix, in ascending order
/// and with a deterministic eigenvector sign convention.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues, ascending.
    pub values: DVector<f64>,
    /// Orthogonal matrix whose columns are the corresponding eigenvectors.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Residual |Q^T Q - I|_F of the eigenvector matrix.
    pub fn orthogonality_residual(&self) -> f64 {
        let n = self.dim();
        (self.vectors.transpose() * &self.vectors - DMatrix::identity(n, n)).norm()
    }

    /// Residual |Q diag(lambda) Q^T - S|_F against the original matrix.
    pub fn reconstruction_residual(&self, s: &TracelessSym) -> f64 {
        (self.reconstruct() - s.matrix()).norm()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose()
    }
}

/// Sorted symmetric eigendecomposition.
///
/// Eigenvalues ascend; each eigenvector is normalised so that its entry of
/// largest magnitude (ties broken by lowest index) is positive.
pub fn sorted_eigen(s: &TracelessSym) -> Result<Spectrum> {
    sorted_eigen_mat(s.matrix())
}

/// `sorted_eigen` on a raw symmetric matrix (callers guarantee symmetry).
pub fn sorted_eigen_mat(mat: &DMatrix<f64>) -> Result<Spectrum> {
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigendecomposition input".into()));
    }
    let n = mat.nrows();
    let eig = mat.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .expect("finite eigenvalues")
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        // Sign convention: largest-magnitude entry positive, ties by lowest index.
        let mut pivot = 0;
        for r in 1..n {
            if col[r].abs() > col[pivot].abs() {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[(r, dst)] = sign * col[r];
        }
    }
    Ok(Spectrum { values, vectors })
}

/// Ordered eigenvalue multiplicities (m_1, ..., m_L), positive, summing to n.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Multiplicity {
    parts: Vec<usize>,
}

impl Multiplicity {
    pub fn new(parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() || parts.iter().any(|&p| p == 0) {
            return Err(Error::DimensionMismatch(
                "multiplicity parts must be positive".into(),
            ));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[usize] {
        &self.parts
    }

    /// Number of clusters L.
    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Total dimension n = sum of the parts.
    pub fn total(&self) -> usize {
        self.parts.iter().sum()
    }

    /// Prefix sums M_1, ..., M_L.
    pub fn prefix_sums(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.parts.len());
        let mut acc = 0;
        for &p in &self.parts {
            acc += p;
            out.push(acc);
        }
        out
    }

    /// True when every eigenvalue is simple.
    pub fn is_simple(&self) -> bool {
        self.parts.iter().all(|&p| p == 1)
    }

    /// True when some eigenvalue repeats (L < n).
    pub fn is_singular(&self) -> bool {
        self.len() < self.total()
    }
}

impl std::fmt::Display for Multiplicity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.parts.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

/// Group ascending eigenvalues into clusters: consecutive values belong to
/// the same cluster when their gap is strictly below `gap_tol`.
pub fn multiplicity_of(values: &[f64], gap_tol: f64) -> Multiplicity {
    assert!(gap_tol > 0.0, "gap_tol must be positive");
    let mut parts = Vec::new();
    let mut run = 1usize;
    for w in values.windows(2) {
        if w[1] - w[0] < gap_tol {
            run += 1;
        } else {
            parts.push(run);
            run = 1;
        }
    }
    parts.push(run);
    Multiplicity::new(parts).expect("run lengths are positive")
}

/// Library default gap tolerance, scaled by the matrix size.
pub fn default_gap_tol(s: &TracelessSym) -> f64 {
    1e-6 * (1.0 + s.norm_fro())
}

/// The orthogonal decomposition of S relative to a block pattern m:
/// per-block traceless parts, per-block scalar multiples of the identity,
/// and the off-block remainder.
#[derive(Debug, Clone)]
pub struct NormalSplit {
    /// Traceless block S_i in Sym_0(m_i); this tuple spans the normal space
    /// of the face F(m) at a diagonal point.
    pub block_traceless: Vec<DMatrix<f64>>,
    /// Scalars mu_i with sum m_i * mu_i = 0.
    pub diag_scalars: Vec<f64>,
    /// The complement with zero diagonal blocks.
    pub offdiag: DMatrix<f64>,
}

impl NormalSplit {
    /// Reassemble blockdiag(mu_i I + S_i) + offdiag.
    pub fn reconstruct(&self, m: &Multiplicity) -> DMatrix<f64> {
        let n = m.total();
        let mut out = self.offdiag.clone();
        let mut start = 0;
        for (i, &mi) in m.parts().iter().enumerate() {
            for a in 0..mi {
                for b in 0..mi {
                    out[(start + a, start + b)] += self.block_traceless[i][(a, b)];
                }
                out[(start + a, start + a)] += self.diag_scalars[i];
            }
            start += mi;
        }
        debug_assert_eq!(start, n);
        out
    }
}

/// Split S into the three mutually orthogonal components attached to m.
pub fn normal_space_split(s: &TracelessSym, m: &Multiplicity) -> Result<NormalSplit> {
    let n = s.dim();
    if m.total() != n {
        return Err(Error::DimensionMismatch(format!(
            "multiplicity sums to {}, matrix has dimension {n}",
            m.total()
        )));
    }
    let mat = s.matrix();
    let mut block_traceless = Vec::with_capacity(m.len());
    let mut diag_scalars = Vec::with_capacity(m.len());
    let mut offdiag = mat.clone();
    let mut start = 0;
    for &mi in m.parts() {
        let block = mat.view((start, start), (mi, mi)).into_owned();
        let mu = block.trace() / mi as f64;
        let traceless = &block - DMatrix::identity(mi, mi) * mu;
        for a in 0..mi {
            for b in 0..mi {
                offdiag[(start + a, start + b)] = 0.0;
            }
        }
        block_traceless.push(traceless);
        diag_scalars.push(mu);
        start += mi;
    }
    Ok(NormalSplit {
        block_traceless,
        diag_scalars,
        offdiag,
    })
}

/// d(m) = m(m+1)/2 - 1, the dimension of Sym_0(m).
pub fn d_of(m: usize) -> usize {
    m * (m + 1) / 2 - 1
}

/// Coordinates b of the normal form S(b) on one block of size m.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormCoords {
    pub m: usize,
    pub coords: Vec<f64>,
}

impl NormalFormCoords {
    pub fn new(m: usize, coords: Vec<f64>) -> Result<Self> {
        let want = d_of(m);
        if coords.len() != want {
            return Err(Error::BadCoordLength {
                m,
                got: coords.len(),
                want,
            });
        }
        Ok(Self { m, coords })
    }
}

/// Row-major index of the upper-triangle slot (r, c), r <= c, within the
/// coordinate vector; the slot (m-1, m-1) is excluded (it closes the trace).
fn nf_index(m: usize, r: usize, c: usize) -> usize {
    debug_assert!(r <= c && c < m && !(r == m - 1 && c == m - 1));
    // Row r contributes (m - r) slots, starting after all previous rows.
    let offset: usize = (0..r).map(|k| m - k).sum();
    offset + (c - r)
}

/// The matrix S(b): upper triangle filled row by row from the coordinates,
/// symmetric completion, and last diagonal entry z(b) = -(sum of the other
/// diagonal entries). A linear bijection onto Sym_0(m).
pub fn normal_form_embed(b: &NormalFormCoords) -> DMatrix<f64> {
    let m = b.m;
    let mut mat = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in r..m {
            if r == m - 1 && c == m - 1 {
                continue;
            }
            let v = b.coords[nf_index(m, r, c)];
            mat[(r, c)] = v;
            mat[(c, r)] = v;
        }
    }
    let zbar: f64 = -(0..m - 1).map(|r| mat[(r, r)]).sum::<f64>();
    mat[(m - 1, m - 1)] = zbar;
    mat
}

/// Inverse of [`normal_form_embed`]: read the coordinates off a traceless
/// symmetric block.
pub fn normal_form_extract(s: &DMatrix<f64>) -> Result<NormalFormCoords> {
    let m = s.nrows();
    if m != s.ncols() {
        return Err(Error::DimensionMismatch("square block expected".into()));
    }
    let scale = 1.0 + s.norm();
    if s.trace().abs() > 1e-10 * scale {
        return Err(Error::TraceViolation {
            trace: s.trace(),
            tol: 1e-10 * scale,
        });
    }
    let mut coords = vec![0.0; d_of(m)];
    for r in 0..m {
        for c in r..m {
            if r == m - 1 && c == m - 1 {
                continue;
            }
            coords[nf_index(m, r, c)] = s[(r, c)];
        }
    }
    NormalFormCoords::new(m, coords)
}

/// exp(t S) through the eigendecomposition Q diag(e^{t lambda}) Q^T.
///
/// The result is symmetric positive definite with determinant 1 (trace-free
/// input). Exponents beyond the f64 range are reported as overflow.
pub fn sym_exp(s: &TracelessSym, t: f64) -> Result<DMatrix<f64>> {
    sym_exp_mat(s.matrix(), t)
}

/// `sym_exp` on a raw symmetric matrix.
pub fn sym_exp_mat(mat: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let spec = sorted_eigen_mat(mat)?;
    let mut exp_vals = DVector::zeros(spec.dim());
    for i in 0..spec.dim() {
        let e = t * spec.values[i];
        if e.abs() > 700.0 {
            return Err(Error::Overflow(e));
        }
        exp_vals[i] = e.exp();
    }
    Ok(&spec.vectors * DMatrix::from_diagonal(&exp_vals) * spec.vectors.transpose())
}

/// Unique symmetric positive definite square root of an SPD matrix.
pub fn spd_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let spec = sorted_eigen_mat(mat)?;
    if spec.values[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let roots = spec.values.map(|v| v.sqrt());
    Ok(&spec.vectors * DMatrix::from_diagonal(&roots) * spec.vectors.transpose())
}

/// Inverse square root of an SPD matrix.
pub fn spd_inv_sqrt(mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let spec = sorted_eigen_mat(mat)?;
    if spec.values[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite);
    }
    let roots = spec.values.map(|v| 1.0 / v.sqrt());
    Ok(&spec.vectors * DMatrix::from_diagonal(&roots) * spec.vectors.transpose())
}

/// Seeded random traceless symmetric matrix with entries of order `scale`.
pub fn random_traceless<R: Rng>(n: usize, scale: f64, rng: &mut R) -> TracelessSym {
    let mut mat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-scale..scale);
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    let trace = mat.trace();
    for i in 0..n {
        mat[(i, i)] -= trace / n as f64;
    }
    TracelessSym::new(mat).expect("constructed symmetric and traceless")
}

/// Seeded random special orthogonal matrix (QR of a Gaussian-ish sample).
pub fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let mut mat = DMatrix::zeros(n, n);
    for v in mat.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let qr = mat.qr();
    let mut q = qr.q();
    let r = qr.r();
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for row in 0..n {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for row in 0..n {
            q[(row, 0)] = -q[(row, 0)];
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn frobenius_inner_diagonal_pair() {
        let s = TracelessSym::diag_rep(&[1.0, -1.0]).unwrap();
        assert_relative_eq!(frobenius_inner(&s, &s).unwrap(), 2.0);
    }

    #[test]
    fn frobenius_inner_orthogonal_summands() {
        let d = TracelessSym::diag_rep(&[1.0, -1.0]).unwrap();
        let off = TracelessSym::two_by_two(0.0, 1.0);
        assert_relative_eq!(frobenius_inner(&d, &off).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_inner_matches_entrywise_sum() {
        // Brute-force oracle: |S|_F^2 as the entrywise sum of squares.
        let mut r = rng(11);
        for n in 2..=8 {
            let s = random_traceless(n, 1.5, &mut r);
            let brute: f64 = s.matrix().iter().map(|v| v * v).sum();
            assert_relative_eq!(
                frobenius_inner(&s, &s).unwrap(),
                brute,
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn frobenius_inner_dimension_mismatch() {
        let a = TracelessSym::diag_rep(&[1.0, -1.0]).unwrap();
        let b = TracelessSym::diag_rep(&[1.0, 0.0, -1.0]).unwrap();
        assert!(frobenius_inner(&a, &b).is_err());
    }

    #[test]
    fn sorted_eigen_reorders_diagonal() {
        let s = TracelessSym::diag_rep(&[2.0, -1.0, -1.0]).unwrap();
        let spec = sorted_eigen(&s).unwrap();
        assert_relative_eq!(spec.values[0], -1.0, epsilon = 1e-12);
        assert_relative_eq!(spec.values[1], -1.0, epsilon = 1e-12);
        assert_relative_eq!(spec.values[2], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn sorted_eigen_two_by_two_closed_form() {
        // Eigenvalues of H(a, b) are +-r with r = sqrt(a^2 + b^2); the +r
        // eigenvector is parallel to (1 + cos(phi), sin(phi)).
        for &(a, b) in &[(0.3, 0.4), (-0.5, 0.2), (0.0, 1.0), (2.0, -1.0)] {
            let r = f64::hypot(a, b);
            let s = TracelessSym::two_by_two(a, b);
            let spec = sorted_eigen(&s).unwrap();
            assert_relative_eq!(spec.values[0], -r, epsilon = 1e-12);
            assert_relative_eq!(spec.values[1], r, epsilon = 1e-12);
            let phi = b.atan2(a).rem_euclid(2.0 * std::f64::consts::PI);
            if phi > 1e-9 && (phi - std::f64::consts::PI).abs() > 1e-9 {
                let dir = DVector::from_vec(vec![1.0 + phi.cos(), phi.sin()]);
                let unit = &dir / dir.norm();
                let v = spec.vectors.column(1).into_owned();
                let dot = (unit.transpose() * &v)[0].abs();
                assert_relative_eq!(dot, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn sorted_eigen_reconstructs_random_inputs() {
        let mut r = rng(5);
        for n in 2..=8 {
            let s = random_traceless(n, 2.0, &mut r);
            let spec = sorted_eigen(&s).unwrap();
            let tol = 1e-10 * (1.0 + s.norm_fro());
            assert!(spec.reconstruction_residual(&s) <= tol);
            assert!(spec.orthogonality_residual() <= 1e-10);
            assert!(spec.values.iter().sum::<f64>().abs() <= tol);
        }
    }

    #[test]
    fn sorted_eigen_sign_convention_is_stable() {
        let mut r = rng(17);
        let s = random_traceless(5, 1.0, &mut r);
        let a = sorted_eigen(&s).unwrap();
        let b = sorted_eigen(&s).unwrap();
        assert_eq!(a.vectors, b.vectors);
        for c in 0..5 {
            let col = a.vectors.column(c);
            let mut pivot = 0;
            for i in 1..5 {
                if col[i].abs() > col[pivot].abs() {
                    pivot = i;
                }
            }
            assert!(col[pivot] > 0.0);
        }
    }

    #[test]
    fn multiplicity_grouping_respects_tolerance() {
        let m = multiplicity_of(&[-1.0, -1.0, 2.0], 1e-8);
        assert_eq!(m.parts(), &[2, 1]);
        let m = multiplicity_of(&[-1.0005, -0.9995, 2.0], 0.01);
        assert_eq!(m.parts(), &[2, 1]);
        let m = multiplicity_of(&[-1.0005, -0.9995, 2.0], 1e-4);
        assert_eq!(m.parts(), &[1, 1, 1]);
    }

    #[test]
    fn multiplicity_invariant_under_conjugation() {
        let mut r = rng(23);
        for _ in 0..20 {
            let s = random_traceless(5, 1.0, &mut r);
            let a = random_orthogonal(5, &mut r);
            let c = s.conjugate(&a).unwrap();
            let tol = 1e-3;
            let ms = multiplicity_of(sorted_eigen(&s).unwrap().values.as_slice(), tol);
            let mc = multiplicity_of(sorted_eigen(&c).unwrap().values.as_slice(), tol);
            assert_eq!(ms, mc);
        }
    }

    #[test]
    fn diag_rep_examples() {
        let z = TracelessSym::diag_rep(&[0.0, 0.0]).unwrap();
        assert_eq!(z.norm_fro(), 0.0);
        let d = TracelessSym::diag_rep(&[-1.0, -1.0, 2.0]).unwrap();
        assert_relative_eq!(d.matrix()[(2, 2)], 2.0);
        let inv = std::f64::consts::FRAC_1_SQRT_2;
        let unit = TracelessSym::diag_rep(&[inv, -inv]).unwrap();
        assert_relative_eq!(unit.norm_fro(), 1.0, epsilon = 1e-14);
        assert!(TracelessSym::diag_rep(&[1.0, 1.0]).is_err());
    }

    #[test]
    fn normal_split_diagonal_case() {
        let s = TracelessSym::diag_rep(&[-1.0, -1.0, 2.0]).unwrap();
        let m = Multiplicity::new(vec![2, 1]).unwrap();
        let split = normal_space_split(&s, &m).unwrap();
        assert!(split.block_traceless[0].norm() < 1e-14);
        assert!(split.block_traceless[1].norm() < 1e-14);
        assert_relative_eq!(split.diag_scalars[0], -1.0);
        assert_relative_eq!(split.diag_scalars[1], 2.0);
        assert!(split.offdiag.norm() < 1e-14);
    }

    #[test]
    fn normal_split_single_off_block_entry() {
        let mut mat = DMatrix::zeros(3, 3);
        mat[(0, 2)] = 1.0;
        mat[(2, 0)] = 1.0;
        let s = TracelessSym::new(mat).unwrap();
        let m = Multiplicity::new(vec![2, 1]).unwrap();
        let split = normal_space_split(&s, &m).unwrap();
        assert!(split.block_traceless.iter().all(|b| b.norm() < 1e-14));
        assert!(split.diag_scalars.iter().all(|&v| v.abs() < 1e-14));
        assert!(split.offdiag.norm() > 0.9);
        // Components pairwise orthogonal: block/scalar parts vanish here.
        let rebuilt = split.reconstruct(&m);
        assert!((rebuilt - s.matrix()).norm() < 1e-14);
    }

    #[test]
    fn normal_split_reconstructs_random_m22() {
        let mut r = rng(3);
        let m = Multiplicity::new(vec![2, 2]).unwrap();
        for _ in 0..20 {
            let s = random_traceless(4, 1.0, &mut r);
            let split = normal_space_split(&s, &m).unwrap();
            let rebuilt = split.reconstruct(&m);
            assert!((rebuilt - s.matrix()).norm() <= 1e-12);
            // Pairwise Frobenius orthogonality of the three components.
            let mut only_blocks = split.clone();
            only_blocks.diag_scalars = vec![0.0; 2];
            only_blocks.offdiag.fill(0.0);
            let mut only_scalars = split.clone();
            only_scalars.block_traceless = vec![DMatrix::zeros(2, 2); 2];
            only_scalars.offdiag.fill(0.0);
            let b = only_blocks.reconstruct(&m);
            let d = only_scalars.reconstruct(&m);
            assert!(mat_inner(&b, &d).abs() < 1e-13);
            assert!(mat_inner(&b, &split.offdiag).abs() < 1e-13);
            assert!(mat_inner(&d, &split.offdiag).abs() < 1e-13);
        }
    }

    #[test]
    fn normal_form_layout_m2() {
        let b = NormalFormCoords::new(2, vec![0.7, -0.3]).unwrap();
        let s = normal_form_embed(&b);
        assert_relative_eq!(s[(0, 0)], 0.7);
        assert_relative_eq!(s[(0, 1)], -0.3);
        assert_relative_eq!(s[(1, 0)], -0.3);
        assert_relative_eq!(s[(1, 1)], -0.7);
    }

    #[test]
    fn normal_form_layout_m3_diagonal_closure() {
        // z(b) = -(b^1 + b^4) for m = 3.
        let b = NormalFormCoords::new(3, vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let s = normal_form_embed(&b);
        assert_relative_eq!(s[(0, 0)], 1.0);
        assert_relative_eq!(s[(1, 1)], 4.0);
        assert_relative_eq!(s[(2, 2)], -5.0);
        assert_relative_eq!(s[(1, 2)], 5.0);
        assert!(s.trace().abs() < 1e-14);
    }

    #[test]
    fn normal_form_zero_and_simple_cases() {
        let b = NormalFormCoords::new(3, vec![0.0; 5]).unwrap();
        assert_eq!(normal_form_embed(&b), DMatrix::zeros(3, 3));
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let coords = normal_form_extract(&s).unwrap();
        assert_eq!(coords.coords, vec![1.0, 0.0]);
    }

    #[test]
    fn normal_form_round_trip_random() {
        let mut r = rng(7);
        for m in 2..=6 {
            for _ in 0..10 {
                let coords: Vec<f64> =
                    (0..d_of(m)).map(|_| r.random_range(-1.0..1.0)).collect();
                let b = NormalFormCoords::new(m, coords.clone()).unwrap();
                let s = normal_form_embed(&b);
                assert!(s.trace().abs() <= 1e-14);
                let back = normal_form_extract(&s).unwrap();
                for (x, y) in back.coords.iter().zip(coords.iter()) {
                    assert!((x - y).abs() <= 1e-14);
                }
                // extract . embed on a matrix built from Sym_0(m).
                let again = normal_form_embed(&back);
                assert!((again - &s).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn normal_form_is_linear() {
        let mut r = rng(9);
        let m = 4;
        for _ in 0..10 {
            let b1: Vec<f64> = (0..d_of(m)).map(|_| r.random_range(-1.0..1.0)).collect();
            let b2: Vec<f64> = (0..d_of(m)).map(|_| r.random_range(-1.0..1.0)).collect();
            let (alpha, beta) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
            let combo: Vec<f64> = b1
                .iter()
                .zip(&b2)
                .map(|(x, y)| alpha * x + beta * y)
                .collect();
            let lhs = normal_form_embed(&NormalFormCoords::new(m, combo).unwrap());
            let rhs = normal_form_embed(&NormalFormCoords::new(m, b1.clone()).unwrap()) * alpha
                + normal_form_embed(&NormalFormCoords::new(m, b2.clone()).unwrap()) * beta;
            assert!((lhs - rhs).norm() <= 1e-13);
        }
    }

    #[test]
    fn normal_form_rejects_bad_lengths_and_trace() {
        assert!(NormalFormCoords::new(3, vec![0.0; 4]).is_err());
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 1.0;
        assert!(normal_form_extract(&m).is_err());
    }

    /// Test-side oracle for the matrix exponential: scaling and squaring on
    /// the raw Taylor series, independent of the eigendecomposition path.
    fn exp_series_oracle(mat: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
        let n = mat.nrows();
        let scaled = mat * t;
        let norm = scaled.norm();
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let base = &scaled / 2f64.powi(squarings as i32);
        let mut term = DMatrix::identity(n, n);
        let mut sum = DMatrix::identity(n, n);
        for k in 1..40 {
            term = &term * &base / k as f64;
            sum += &term;
            if term.norm() < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn sym_exp_identity_and_diagonal() {
        let z = TracelessSym::diag_rep(&[0.0, 0.0, 0.0]).unwrap();
        assert!((sym_exp(&z, 3.0).unwrap() - DMatrix::identity(3, 3)).norm() < 1e-14);
        let d = TracelessSym::diag_rep(&[1.0, -1.0]).unwrap();
        let e = sym_exp(&d, 1.0).unwrap();
        assert_relative_eq!(e[(0, 0)], std::f64::consts::E, epsilon = 1e-12);
        assert_relative_eq!(e[(1, 1)], 1.0 / std::f64::consts::E, epsilon = 1e-12);
    }

    #[test]
    fn sym_exp_matches_series_oracle_and_preserves_volume() {
        let mut r = rng(13);
        for _ in 0..10 {
            let s = random_traceless(5, 0.8, &mut r);
            let t = 3.0;
            let ours = sym_exp(&s, t).unwrap();
            let oracle = exp_series_oracle(s.matrix(), t);
            let scale = 1.0 + oracle.norm();
            assert!((&ours - &oracle).norm() <= 1e-9 * scale);
            assert_relative_eq!(ours.determinant(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sym_exp_group_property() {
        let mut r = rng(19);
        for _ in 0..5 {
            let s = random_traceless(4, 1.0, &mut r);
            let (t, u) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
            let lhs = sym_exp(&s, t + u).unwrap();
            let rhs = sym_exp(&s, t).unwrap() * sym_exp(&s, u).unwrap();
            let scale = 1.0 + lhs.norm();
            assert!((lhs - rhs).norm() <= 1e-9 * scale);
        }
    }

    #[test]
    fn sym_exp_overflow_reports_exponent() {
        let d = TracelessSym::diag_rep(&[30.0, -30.0]).unwrap();
        match sym_exp(&d, 30.0) {
            Err(Error::Overflow(e)) => assert!(e.abs() > 700.0),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let mut r = rng(29);
        let s = random_traceless(4, 0.5, &mut r);
        let g = sym_exp(&s, 1.0).unwrap();
        let root = spd_sqrt(&g).unwrap();
        assert!((&root * &root - &g).norm() <= 1e-11 * (1.0 + g.norm()));
        let inv_root = spd_inv_sqrt(&g).unwrap();
        assert!((&root * &inv_root - DMatrix::identity(4, 4)).norm() <= 1e-11);
    }
}
