//! Dense complex matrices, unitary/self-adjoint wrappers and the functional
//! calculus (logarithm, exponential, polar part, spectral projections).
//!
//! The exponential convention is `exp(2 pi i h)` throughout: `unitary_log`
//! returns `h` with `u = exp(2 pi i h)` and eigenvalues of `h` in a unit
//! window `(r - 1/2, r + 1/2]`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use faer::prelude::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use num_complex::Complex64 as C64;

pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `exp(2 pi i x)`.
pub fn cis_turns(x: f64) -> C64 {
    let a = 2.0 * PI * x;
    C64::new(a.cos(), a.sin())
}

/// Square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    m: Mat<C64>,
}

impl CMatrix {
    pub fn zeros(n: usize) -> Self {
        CMatrix { m: Mat::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        CMatrix { m: Mat::identity(n, n) }
    }

    pub fn scalar(n: usize, c: C64) -> Self {
        Self::from_fn(n, |i, j| if i == j { c } else { ZERO })
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        CMatrix { m: Mat::from_fn(n, n, f) }
    }

    pub fn from_diag(d: &[C64]) -> Self {
        Self::from_fn(d.len(), |i, j| if i == j { d[i] } else { ZERO })
    }

    /// Build from row-major nested vectors; rows must be square.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimMismatch { expected: n, found: r.len() });
            }
        }
        Ok(Self::from_fn(n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.m[(i, j)] = v;
    }

    pub fn adjoint(&self) -> CMatrix {
        CMatrix { m: self.m.adjoint().to_owned() }
    }

    pub fn scale(&self, c: C64) -> CMatrix {
        CMatrix { m: Mat::from_fn(self.dim(), self.dim(), |i, j| c * self.m[(i, j)]) }
    }

    pub fn scale_re(&self, c: f64) -> CMatrix {
        self.scale(C64::new(c, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim()).map(|i| self.m[(i, i)]).sum()
    }

    /// Trace normalised so that the identity has trace one.
    pub fn normalized_trace(&self) -> C64 {
        self.trace() / self.dim() as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm_l2()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.norm_max()
    }

    /// Operator norm (largest singular value).
    pub fn op_norm(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 0.0;
        }
        let fro = self.frobenius_norm();
        if fro == 0.0 {
            return 0.0;
        }
        // Rescale first so that the Gram matrix stays well inside f64 range.
        let a = self.scale_re(1.0 / fro);
        let g = &a.adjoint() * &a;
        let top = hermitian_eigenvalues(&g).last().copied().unwrap_or(0.0);
        top.max(0.0).sqrt() * fro
    }

    /// Operator norm of a matrix assumed self-adjoint.
    pub fn op_norm_sa(&self) -> f64 {
        let ev = hermitian_eigenvalues(self);
        ev.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
    }

    /// `||a - a*||`, zero for self-adjoint matrices.
    pub fn self_adjoint_defect(&self) -> f64 {
        (self - &self.adjoint()).op_norm()
    }

    /// `||u* u - 1||`, zero for unitaries.
    pub fn unitary_defect(&self) -> f64 {
        let g = &self.adjoint() * self;
        (&g - &CMatrix::identity(self.dim())).op_norm_sa()
    }

    /// Self-adjoint part `(a + a*)/2`.
    pub fn hermitian_part(&self) -> CMatrix {
        (self + &self.adjoint()).scale_re(0.5)
    }

    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (n, k) = (self.dim(), other.dim());
        CMatrix::from_fn(n * k, |i, j| self.m[(i / k, j / k)] * other.m[(i % k, j % k)])
    }

    /// Solve `self * x = rhs` by partial-pivot LU.
    pub fn solve(&self, rhs: &CMatrix) -> CMatrix {
        let lu = self.m.partial_piv_lu();
        CMatrix { m: lu.solve(&rhs.m) }
    }

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        (0..self.dim()).map(|i| (0..self.dim()).map(|j| self.m[(i, j)]).collect()).collect()
    }
}

/// `ab - ba`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    &(a * b) - &(b * a)
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.dim(), rhs.dim(), "matrix product dimension mismatch");
        CMatrix { m: &self.m * &rhs.m }
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        CMatrix { m: &self.m + &rhs.m }
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix { m: &self.m - &rhs.m }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        self.scale_re(-1.0)
    }
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn hermitian_eigenvalues(a: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = a
        .m
        .self_adjoint_eigenvalues(Side::Lower)
        .expect("Hermitian eigensolver did not converge");
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let e = a.m.self_adjoint_eigen(Side::Lower).expect("Hermitian eigensolver did not converge");
    let n = a.dim();
    let s = e.S().column_vector();
    let vals: Vec<f64> = (0..n).map(|i| s[i].re).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    let u = e.U();
    let q = CMatrix::from_fn(n, |i, j| u[(i, order[j])]);
    (order.iter().map(|&i| vals[i]).collect(), q)
}

/// Unit-circle angle in `[0, 2 pi)`.
fn angle_0_2pi(z: C64) -> f64 {
    let a = z.im.atan2(z.re);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Center (as an angle) of the largest gap between the given circle angles.
fn largest_gap_center(mut angles: Vec<f64>) -> (f64, f64) {
    if angles.is_empty() {
        return (PI, 2.0 * PI);
    }
    for a in angles.iter_mut() {
        *a = a.rem_euclid(2.0 * PI);
    }
    angles.sort_by(|x, y| x.total_cmp(y));
    let mut best = (angles[0] + 2.0 * PI - angles[angles.len() - 1], angles[angles.len() - 1]);
    for w in angles.windows(2) {
        let g = w[1] - w[0];
        if g > best.0 {
            best = (g, w[0]);
        }
    }
    ((best.1 + best.0 / 2.0).rem_euclid(2.0 * PI), best.0)
}

/// A cut point on the circle guaranteed to lie in a spectral gap of `u`,
/// found from the symmetrised spectrum of the real part of `u`.
fn spectral_cut(u: &CMatrix) -> f64 {
    let c = hermitian_eigenvalues(&u.hermitian_part());
    let mut angles = Vec::with_capacity(2 * c.len());
    for x in c {
        let t = x.clamp(-1.0, 1.0).acos();
        angles.push(t);
        angles.push(-t);
    }
    largest_gap_center(angles).0
}

/// Eigen-decomposition of a unitary through the Cayley transform.
///
/// `cut` is an angle with `e^{i cut}` not in the spectrum of `u`. Returns
/// eigenvalue angles (in `(cut, cut + 2 pi)`) and, if requested, an
/// orthonormal eigenbasis.
fn cayley_eigen(u: &CMatrix, cut: f64, vectors: bool) -> (Vec<f64>, Option<CMatrix>) {
    let n = u.dim();
    let v = u.scale(C64::from_polar(1.0, -cut));
    let id = CMatrix::identity(n);
    let num = &id + &v;
    let den = &id - &v;
    // C = i (1 + V)(1 - V)^{-1}; V has no eigenvalue at 1.
    let c = den.solve(&num).scale(C64::new(0.0, 1.0)).hermitian_part();
    let to_angle = |x: f64| cut + 2.0 * 1f64.atan2(-x);
    if vectors {
        let (vals, q) = hermitian_eigen(&c);
        (vals.into_iter().map(to_angle).collect(), Some(q))
    } else {
        (hermitian_eigenvalues(&c).into_iter().map(to_angle).collect(), None)
    }
}

/// Eigenvalues of a unitary as points on the unit circle.
pub fn unitary_eigenvalues(u: &CMatrix) -> Vec<C64> {
    let cut = spectral_cut(u);
    cayley_eigen(u, cut, false).0.into_iter().map(|a| C64::from_polar(1.0, a)).collect()
}

/// Eigenvalue phases (in turns, within `(-1/2, 1/2)`) of a unitary whose
/// spectrum is known to avoid `-1`. Used for near-identity ratios.
pub fn phases_avoiding_minus_one(u: &CMatrix) -> Vec<f64> {
    cayley_eigen(u, PI, false)
        .0
        .into_iter()
        .map(|a| (a - 2.0 * PI) / (2.0 * PI))
        .collect()
}

/// Full eigen-decomposition of a unitary: eigenvalues on the circle and an
/// orthonormal eigenbasis (columns).
pub fn unitary_eigen(u: &CMatrix) -> (Vec<C64>, CMatrix) {
    let cut = spectral_cut(u);
    let (a, q) = cayley_eigen(u, cut, true);
    (a.into_iter().map(|x| C64::from_polar(1.0, x)).collect(), q.unwrap())
}

/// Matrix `Q diag(d) Q*`.
pub fn conjugate_diag(q: &CMatrix, d: &[C64]) -> CMatrix {
    let n = q.dim();
    let qd = CMatrix::from_fn(n, |i, j| q.get(i, j) * d[j]);
    &qd * &q.adjoint()
}

/// Unitary matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Unitary(CMatrix);

/// Self-adjoint matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfAdjoint(CMatrix);

/// Orthogonal projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection(CMatrix);

impl Unitary {
    /// Checks `||u*u - 1|| <= tol`.
    pub fn new(m: CMatrix, tol: f64) -> Result<Self> {
        let defect = m.unitary_defect();
        if defect > tol || !defect.is_finite() {
            return Err(Error::NotUnitary { defect });
        }
        Ok(Unitary(m))
    }

    /// Wraps without checking; callers guarantee unitarity by construction.
    pub fn new_unchecked(m: CMatrix) -> Self {
        Unitary(m)
    }

    pub fn identity(n: usize) -> Self {
        Unitary(CMatrix::identity(n))
    }

    pub fn scalar(n: usize, c: C64) -> Self {
        Unitary(CMatrix::scalar(n, c / c.norm()))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn adjoint(&self) -> Unitary {
        Unitary(self.0.adjoint())
    }

    /// `self * x * self^*`.
    pub fn conj(&self, x: &CMatrix) -> CMatrix {
        &(&self.0 * x) * &self.0.adjoint()
    }

    pub fn conj_u(&self, x: &Unitary) -> Unitary {
        Unitary(self.conj(&x.0))
    }

    pub fn kron(&self, other: &Unitary) -> Unitary {
        Unitary(self.0.kron(&other.0))
    }

    /// Integer power (negative powers use the adjoint).
    pub fn pow(&self, k: i64) -> Unitary {
        let base = if k < 0 { self.adjoint() } else { self.clone() };
        let mut e = k.unsigned_abs();
        let mut acc = Unitary::identity(self.dim());
        let mut b = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = &acc * &b;
            }
            e >>= 1;
            if e > 0 {
                b = &b * &b;
            }
        }
        acc
    }

    /// `||self - other||`.
    pub fn dist(&self, other: &Unitary) -> f64 {
        (&self.0 - &other.0).op_norm()
    }

    /// `||self - 1||`.
    pub fn dist_to_identity(&self) -> f64 {
        (&self.0 - &CMatrix::identity(self.dim())).op_norm()
    }
}

impl<'a> Mul<&'a Unitary> for &'a Unitary {
    type Output = Unitary;
    fn mul(self, rhs: &Unitary) -> Unitary {
        Unitary(&self.0 * &rhs.0)
    }
}

impl SelfAdjoint {
    pub fn new(m: CMatrix, tol: f64) -> Result<Self> {
        let defect = m.self_adjoint_defect();
        if defect > tol || !defect.is_finite() {
            return Err(Error::NotSelfAdjoint { defect });
        }
        Ok(SelfAdjoint(m.hermitian_part()))
    }

    /// Symmetrises without checking.
    pub fn from_hermitian_part(m: &CMatrix) -> Self {
        SelfAdjoint(m.hermitian_part())
    }

    pub fn zeros(n: usize) -> Self {
        SelfAdjoint(CMatrix::zeros(n))
    }

    pub fn scalar(n: usize, x: f64) -> Self {
        SelfAdjoint(CMatrix::scalar(n, C64::new(x, 0.0)))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn norm(&self) -> f64 {
        self.0.op_norm_sa()
    }

    pub fn scale(&self, x: f64) -> SelfAdjoint {
        SelfAdjoint(self.0.scale_re(x))
    }

    pub fn add(&self, other: &SelfAdjoint) -> SelfAdjoint {
        SelfAdjoint(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SelfAdjoint) -> SelfAdjoint {
        SelfAdjoint(&self.0 - &other.0)
    }

    /// Normalised trace `tau(h)`.
    pub fn tau(&self) -> f64 {
        self.0.normalized_trace().re
    }
}

impl Projection {
    pub fn new(m: CMatrix, tol: f64) -> Result<Self> {
        let sa = m.self_adjoint_defect();
        let idem = (&(&m * &m) - &m).op_norm();
        let defect = sa.max(idem);
        if defect > tol || !defect.is_finite() {
            return Err(Error::NotProjection { defect });
        }
        Ok(Projection(m))
    }

    /// Projection onto the span of orthonormal columns `v` (`n x k` stored in
    /// the first `k` columns of an `n x n` buffer is awkward, so take a list).
    pub fn from_orthonormal(n: usize, cols: &[Vec<C64>]) -> Self {
        let mut m = CMatrix::zeros(n);
        for c in cols {
            for i in 0..n {
                if c[i] == ZERO {
                    continue;
                }
                for j in 0..n {
                    let v = m.get(i, j) + c[i] * c[j].conj();
                    m.set(i, j, v);
                }
            }
        }
        Projection(m)
    }

    pub fn new_unchecked(m: CMatrix) -> Self {
        Projection(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn rank(&self) -> usize {
        self.0.trace().re.round() as usize
    }
}

/// `h` with `u = exp(2 pi i h)` and spectrum of `h` in `(r - 1/2, r + 1/2]`,
/// where `r = rotation` (zero gives the principal branch).
///
/// Fails with `BranchCut` when an eigenvalue of `u` lies within `guard` of
/// the cut point `exp(2 pi i (r + 1/2))`.
pub fn unitary_log(u: &Unitary, rotation: f64, guard: f64) -> Result<SelfAdjoint> {
    let (vals, q) = unitary_eigen(u.matrix());
    let cut = cis_turns(rotation + 0.5);
    let mut phases = Vec::with_capacity(vals.len());
    let mut closest = f64::INFINITY;
    for z in &vals {
        closest = closest.min((z - cut).norm());
        let a = z.im.atan2(z.re) / (2.0 * PI);
        // Shift into the window (r - 1/2, r + 1/2].
        let k = (rotation + 0.5 - a).floor();
        phases.push(C64::new(a + k, 0.0));
    }
    if closest < guard {
        return Err(Error::BranchCut { distance: closest });
    }
    Ok(SelfAdjoint::from_hermitian_part(&conjugate_diag(&q, &phases)))
}

/// Rotation (in turns) that places the branch cut in the middle of the
/// largest spectral gap of `u`.
pub fn auto_rotation(u: &Unitary) -> f64 {
    let angles: Vec<f64> = unitary_eigenvalues(u.matrix()).into_iter().map(angle_0_2pi).collect();
    let (center, _) = largest_gap_center(angles);
    let r = center / (2.0 * PI) - 0.5;
    r - r.round()
}

/// Logarithm with the branch cut placed in the largest spectral gap.
pub fn unitary_log_auto(u: &Unitary, guard: f64) -> Result<SelfAdjoint> {
    unitary_log(u, auto_rotation(u), guard)
}

/// `exp(2 pi i h)` for self-adjoint `h`.
pub fn expm_sa(h: &SelfAdjoint) -> Unitary {
    let (vals, q) = hermitian_eigen(h.matrix());
    let d: Vec<C64> = vals.iter().map(|&x| cis_turns(x)).collect();
    Unitary(conjugate_diag(&q, &d))
}

/// Unitary part of the polar decomposition `m = w |m|`.
pub fn polar_unitary(m: &CMatrix, singular_tol: f64) -> Result<Unitary> {
    let svd = m.m.svd().map_err(|_| Error::numerical("SVD did not converge"))?;
    let s = svd.S().column_vector();
    let n = m.dim();
    let sigma_min = (0..n).map(|i| s[i].re).fold(f64::INFINITY, f64::min);
    if !(sigma_min >= singular_tol) {
        return Err(Error::Singular { sigma_min });
    }
    Ok(Unitary(CMatrix { m: svd.U() * svd.V().adjoint() }))
}

/// One eigenspace of a unitary after clustering nearby eigenvalues.
#[derive(Clone, Debug)]
pub struct SpectralCluster {
    /// Representative eigenvalue (normalised mean of the cluster).
    pub eigenvalue: C64,
    /// Individual eigenvalues in the cluster.
    pub members: Vec<C64>,
    /// Orthonormal basis of the eigenspace.
    pub vectors: Vec<Vec<C64>>,
    pub projection: Projection,
}

/// Spectral decomposition of a unitary. Eigenvalues closer than
/// `cluster_tol` (along chains) are merged; clusters are ordered by angle.
pub fn spectral_decomp(u: &Unitary, cluster_tol: f64) -> Vec<SpectralCluster> {
    let n = u.dim();
    let (vals, q) = unitary_eigen(u.matrix());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| angle_0_2pi(vals[i]).total_cmp(&angle_0_2pi(vals[j])));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if (vals[*g.last().unwrap()] - vals[i]).norm() < cluster_tol => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    if groups.len() > 1 {
        let first = groups[0][0];
        let last = *groups.last().unwrap().last().unwrap();
        if (vals[first] - vals[last]).norm() < cluster_tol {
            let tail = groups.pop().unwrap();
            let mut merged = tail;
            merged.extend(groups[0].iter().copied());
            groups[0] = merged;
        }
    }
    groups
        .into_iter()
        .map(|g| {
            let members: Vec<C64> = g.iter().map(|&i| vals[i]).collect();
            let mean: C64 = members.iter().sum::<C64>() / members.len() as f64;
            let eigenvalue = if mean.norm() > 0.0 { mean / mean.norm() } else { members[0] };
            let vectors: Vec<Vec<C64>> =
                g.iter().map(|&j| (0..n).map(|i| q.get(i, j)).collect()).collect();
            let projection = Projection::from_orthonormal(n, &vectors);
            SpectralCluster { eigenvalue, members, vectors, projection }
        })
        .collect()
}

/// JSON form `{"dim": n, "re": [[..]], "im": [[..]]}` (row-major).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMatrix> for MatrixJson {
    fn from(m: &CMatrix) -> Self {
        let rows = m.to_rows();
        MatrixJson {
            dim: m.dim(),
            re: rows.iter().map(|r| r.iter().map(|z| z.re).collect()).collect(),
            im: rows.iter().map(|r| r.iter().map(|z| z.im).collect()).collect(),
        }
    }
}

impl TryFrom<&MatrixJson> for CMatrix {
    type Error = Error;
    fn try_from(j: &MatrixJson) -> Result<CMatrix> {
        let n = j.dim;
        if j.re.len() != n || j.im.len() != n {
            return Err(Error::DimMismatch { expected: n, found: j.re.len().max(j.im.len()) });
        }
        for r in j.re.iter().chain(j.im.iter()) {
            if r.len() != n {
                return Err(Error::DimMismatch { expected: n, found: r.len() });
            }
        }
        Ok(CMatrix::from_fn(n, |a, b| C64::new(j.re[a][b], j.im[a][b])))
    }
}

impl Serialize for CMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for CMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = MatrixJson::deserialize(d)?;
        CMatrix::try_from(&j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_unitary, random_self_adjoint, rng_from_seed};

    fn naive_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let n = a.dim();
        CMatrix::from_fn(n, |i, j| (0..n).map(|k| a.get(i, k) * b.get(k, j)).sum())
    }

    #[test]
    fn product_matches_naive() {
        let mut rng = rng_from_seed(1);
        let a = haar_unitary(6, &mut rng).into_matrix();
        let b = random_self_adjoint(6, 1.0, &mut rng).into_matrix();
        assert!((&(&a * &b) - &naive_mul(&a, &b)).max_abs() < 1e-13);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let d = CMatrix::from_diag(&[C64::new(0.5, 0.0), C64::new(0.0, -3.0), ONE]);
        assert!((d.op_norm() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn op_norm_against_power_iteration() {
        let n = 9;
        let a = CMatrix::from_fn(n, |i, j| C64::new(((i * 3 + j) % 7) as f64 - 3.0, (i as f64) - (j as f64) * 0.5));
        let g = &a.adjoint() * &a;
        let mut x: Vec<C64> = (0..n).map(|i| C64::new(1.0 + i as f64, 0.5)).collect();
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let y: Vec<C64> = (0..n).map(|i| (0..n).map(|k| g.get(i, k) * x[k]).sum()).collect();
            let nrm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            lambda = nrm;
            x = y.into_iter().map(|z| z / nrm).collect();
        }
        assert!((a.op_norm() - lambda.sqrt()).abs() < 1e-9 * lambda.sqrt());
    }

    #[test]
    fn log_inverts_exp() {
        let mut rng = rng_from_seed(3);
        for n in [1, 2, 5, 12] {
            let h = random_self_adjoint(n, 0.45, &mut rng);
            let u = expm_sa(&h);
            assert!(u.matrix().unitary_defect() < 1e-12);
            let h2 = unitary_log(&u, 0.0, 1e-8).unwrap();
            assert!((h.matrix() - h2.matrix()).op_norm() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn exp_of_log_with_rotation() {
        let mut rng = rng_from_seed(4);
        let u = haar_unitary(10, &mut rng);
        for r in [0.0, 0.13, -0.3] {
            let h = unitary_log(&u, r, 1e-9).unwrap();
            let ev = hermitian_eigenvalues(h.matrix());
            assert!(ev[0] > r - 0.5 - 1e-12 && ev[ev.len() - 1] <= r + 0.5 + 1e-12);
            assert!(expm_sa(&h).dist(&u) < 1e-10);
        }
    }

    #[test]
    fn log_detects_branch_cut() {
        let u = Unitary::new_unchecked(CMatrix::from_diag(&[ONE, C64::new(-1.0, 0.0)]));
        assert!(matches!(unitary_log(&u, 0.0, 1e-8), Err(Error::BranchCut { .. })));
        let h = unitary_log_auto(&u, 1e-8).unwrap();
        assert!(expm_sa(&h).dist(&u) < 1e-12);
    }

    #[test]
    fn eigen_handles_degenerate_spectrum() {
        let mut rng = rng_from_seed(5);
        let w = haar_unitary(8, &mut rng);
        let d: Vec<C64> = (0..8).map(|i| cis_turns(if i < 5 { 0.2 } else { -0.35 })).collect();
        let u = Unitary::new_unchecked(w.conj(&CMatrix::from_diag(&d)));
        let cl = spectral_decomp(&u, 1e-8);
        assert_eq!(cl.len(), 2);
        let ranks: Vec<usize> = cl.iter().map(|c| c.projection.rank()).collect();
        assert!(ranks.contains(&5) && ranks.contains(&3));
        let mut sum = CMatrix::zeros(8);
        let mut recon = CMatrix::zeros(8);
        for c in &cl {
            sum = &sum + c.projection.matrix();
            recon = &recon + &c.projection.matrix().scale(c.eigenvalue);
            assert!((c.eigenvalue.norm() - 1.0).abs() < 1e-14);
        }
        assert!((&sum - &CMatrix::identity(8)).op_norm() < 1e-10);
        assert!((&recon - u.matrix()).op_norm() < 1e-10);
    }

    #[test]
    fn polar_of_scaled_unitary() {
        let mut rng = rng_from_seed(6);
        let u = haar_unitary(7, &mut rng);
        let p = random_self_adjoint(7, 0.3, &mut rng);
        let pos = &CMatrix::identity(7) + p.matrix();
        let m = u.matrix() * &pos;
        let w = polar_unitary(&m, 1e-12).unwrap();
        assert!(w.dist(&u) < 1e-10);
        assert!(matches!(polar_unitary(&CMatrix::zeros(3), 1e-12), Err(Error::Singular { .. })));
    }

    #[test]
    fn matrix_json_round_trip() {
        let mut rng = rng_from_seed(7);
        let u = haar_unitary(3, &mut rng).into_matrix();
        let s = serde_json::to_string(&u).unwrap();
        let back: CMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(u, back);
        let bad = r#"{"dim":2,"re":[[1,0]],"im":[[0,0],[0,0]]}"#;
        assert!(serde_json::from_str::<CMatrix>(bad).is_err());
    }

    #[test]
    fn near_identity_phases() {
        let d = [0.1, -0.2, 0.3, 0.0];
        let u = CMatrix::from_diag(&d.map(cis_turns));
        let mut p = phases_avoiding_minus_one(&u);
        p.sort_by(|a, b| a.total_cmp(b));
        let mut e = d.to_vec();
        e.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in p.iter().zip(e.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn power_of_unitary() {
        let mut rng = rng_from_seed(8);
        let u = haar_unitary(4, &mut rng);
        let u3 = &(&u * &u) * &u;
        assert!(u.pow(3).dist(&u3) < 1e-12);
        assert!(u.pow(-3).dist(&u3.adjoint()) < 1e-12);
        assert!(u.pow(0).dist_to_identity() < 1e-15);
    }
}
