//! Constructive path machinery: eigenvalue threads, short paths, almost
//! commuting homotopies, Lipschitz logarithms of loops, boundary maps of
//! almost cocycles on the unit square and their extensions to the square.
//!
//! The square is `E = [-1, 1]^2` with the sup norm. Its boundary is
//! parametrised by `s in [0, 1]` starting at the corner `(1, 1)`: top side
//! to `(-1, 1)`, left side down to `(-1, -1)`, bottom side to `(1, -1)` and
//! right side back up, each side taking a quarter of the parameter.

use std::f64::consts::PI;

use serde::Serialize;

use crate::actions::{cocycle_corners, Action};
use crate::algebra::{
    cis_turns, commutator, conjugate_diag, expm_sa, hermitian_eigen, polar_unitary, unitary_eigen, unitary_log, CMatrix,
    SelfAdjoint, Unitary, C64, ONE, ZERO,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::invariants::{bott, kappa_fast, winding_tau};
use crate::path::{SelfAdjointPath, UnitaryPath};
use crate::uhf::TruncatedUHF;
use crate::weyl::weyl_average;

type Vector = Vec<C64>;

/// Tolerance on `||u(0) - 1||` for loops based at the identity.
const BASE_TOL: f64 = 1e-9;
/// Accuracy used when shrinking a boundary loop before extending it; it
/// keeps the extension guard `||z - z_0|| < 1/2` with margin.
pub const DISK_SHRINK_EPS: f64 = 0.25;
/// Boundary loops within this distance of 1 are extended through their
/// principal logarithm instead of the shrinking construction.
pub const PRINCIPAL_LOG_RADIUS: f64 = 1.0;
/// Largest number of knots `lip_shrink_loop` will use.
const MAX_KNOTS: usize = 200_000;

fn phase(z: C64) -> f64 {
    z.im.atan2(z.re) / (2.0 * PI)
}

/// `x` reduced to `[-1/2, 1/2]`.
fn wrap(x: f64) -> f64 {
    x - x.round()
}

fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn column(q: &CMatrix, j: usize) -> Vector {
    (0..q.dim()).map(|i| q.get(i, j)).collect()
}

fn from_columns(cols: &[Vector]) -> CMatrix {
    CMatrix::from_fn(cols.len(), |i, j| cols[j][i])
}

/// `sum_i c_i v_i v_i*`.
fn spectral_sum(vectors: &[Vector], coeffs: &[C64]) -> CMatrix {
    let q = from_columns(vectors);
    conjugate_diag(&q, coeffs)
}

/// Orthonormal vectors spanning the same space as `ys`, as close as possible
/// to `ys` (Löwdin orthonormalisation). `None` if the vectors are dependent.
fn orthonormalize(ys: &[Vector]) -> Option<Vec<Vector>> {
    let m = ys.len();
    let g = CMatrix::from_fn(m, |a, b| inner(&ys[a], &ys[b]));
    let (vals, q) = hermitian_eigen(&g.hermitian_part());
    if vals.iter().any(|&x| x < 1e-12) {
        return None;
    }
    let inv_sqrt: Vec<C64> = vals.iter().map(|&x| C64::new(1.0 / x.sqrt(), 0.0)).collect();
    let gi = conjugate_diag(&q, &inv_sqrt);
    let n = ys[0].len();
    Some(
        (0..m)
            .map(|b| {
                let mut v = vec![ZERO; n];
                for (a, y) in ys.iter().enumerate() {
                    let c = gi.get(a, b);
                    for (vi, yi) in v.iter_mut().zip(y) {
                        *vi += yi * c;
                    }
                }
                v
            })
            .collect(),
    )
}

/// Minimum-cost perfect matching of a square cost matrix: `row -> column`.
fn assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Eigen-decomposition with eigenvalues sorted by phase in `[0, 1)` and
/// grouped into clusters of chord width below `tol`.
struct Spectrum {
    phases: Vec<f64>,
    vectors: Vec<Vector>,
    cluster_of: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

fn spectrum(u: &Unitary, tol: f64) -> Spectrum {
    let (vals, q) = unitary_eigen(u.matrix());
    let n = vals.len();
    let mut order: Vec<usize> = (0..n).collect();
    let key = |z: C64| phase(z).rem_euclid(1.0);
    order.sort_by(|&a, &b| key(vals[a]).total_cmp(&key(vals[b])));
    let phases: Vec<f64> = order.iter().map(|&i| phase(vals[i])).collect();
    let vectors: Vec<Vector> = order.iter().map(|&i| column(&q, i)).collect();
    let zs: Vec<C64> = phases.iter().map(|&p| cis_turns(p)).collect();
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for j in 0..n {
        match clusters.last_mut() {
            Some(c) if (zs[*c.last().unwrap()] - zs[j]).norm() < tol => c.push(j),
            _ => clusters.push(vec![j]),
        }
    }
    if clusters.len() > 1 && (zs[0] - zs[n - 1]).norm() < tol {
        let tail = clusters.pop().unwrap();
        clusters[0].extend(tail);
    }
    let mut cluster_of = vec![0; n];
    for (c, members) in clusters.iter().enumerate() {
        for &j in members {
            cluster_of[j] = c;
        }
    }
    Spectrum { phases, vectors, cluster_of, clusters }
}

/// Continuous eigenvalue threads along a sequence of unitaries: lifted
/// phases and the eigenvector each thread sits on, per sample.
struct Threads {
    lifts: Vec<Vec<f64>>,
    vectors: Vec<Vec<Vector>>,
    positions: Vec<Vec<usize>>,
}

/// Follows eigenvectors from sample to sample by maximum-overlap assignment.
///
/// Inside a degenerate cluster whose threads all carry the same lift, the
/// basis is free; it is re-chosen to fit the next sample. Otherwise thread
/// vectors are carried into clusters by projection, so threads keep their
/// identity through exact crossings.
fn follow_threads(values: &[Unitary], cfg: &Config) -> Result<Threads> {
    let specs: Vec<Spectrum> = values.iter().map(|u| spectrum(u, cfg.cluster_tol)).collect();
    let n = values[0].dim();
    let mut lifts = vec![specs[0].phases.clone()];
    let mut vectors: Vec<Vec<Vector>> = vec![specs[0].vectors.clone()];
    let mut positions: Vec<Vec<usize>> = vec![(0..n).collect()];
    for k in 0..values.len() - 1 {
        let (cur, next) = (&specs[k], &specs[k + 1]);
        let g = lifts[k].clone();
        let mut x = vectors[k].clone();
        let pos = positions[k].clone();
        // Re-choose free bases inside degenerate clusters.
        for members in cur.clusters.iter().filter(|c| c.len() > 1) {
            let threads: Vec<usize> = (0..n).filter(|&i| members.contains(&pos[i])).collect();
            let lo = threads.iter().map(|&i| g[i]).fold(f64::INFINITY, f64::min);
            let hi = threads.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > 1e-9 {
                continue;
            }
            let basis: Vec<Vector> = threads.iter().map(|&i| x[i].clone()).collect();
            let project = |q: &Vector| -> Vector {
                let mut out = vec![ZERO; n];
                for b in &basis {
                    let c = inner(b, q);
                    for (o, bi) in out.iter_mut().zip(b) {
                        *o += bi * c;
                    }
                }
                out
            };
            let mut scored: Vec<(f64, usize)> = (0..n)
                .map(|j| {
                    let p = project(&next.vectors[j]);
                    (inner(&p, &p).re, j)
                })
                .collect();
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let picked: Vec<Vector> =
                scored.iter().take(threads.len()).map(|&(_, j)| project(&next.vectors[j])).collect();
            let Some(fresh) = orthonormalize(&picked) else { continue };
            let cost: Vec<Vec<f64>> = threads
                .iter()
                .map(|&i| fresh.iter().map(|f| 1.0 - inner(f, &x[i]).norm_sqr()).collect())
                .collect();
            let a = assignment(&cost);
            for (r, &i) in threads.iter().enumerate() {
                x[i] = fresh[a[r]].clone();
            }
        }
        vectors[k] = x.clone();
        // Overlap of each thread with each cluster of the next spectrum.
        let weight: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| {
                let per: Vec<f64> = next.vectors.iter().map(|q| inner(q, xi).norm_sqr()).collect();
                let by_cluster: Vec<f64> =
                    next.clusters.iter().map(|c| c.iter().map(|&j| per[j]).sum()).collect();
                (0..n).map(|j| by_cluster[next.cluster_of[j]]).collect()
            })
            .collect();
        let cost: Vec<Vec<f64>> = weight.iter().map(|row| row.iter().map(|w| 1.0 - w).collect()).collect();
        let a = assignment(&cost);
        if (0..n).any(|i| weight[i][a[i]] < 0.5) {
            return Err(Error::AmbiguousMatching { index: k });
        }
        let mut new_x: Vec<Vector> = vec![Vec::new(); n];
        for (c, members) in next.clusters.iter().enumerate() {
            let threads: Vec<usize> = (0..n).filter(|&i| next.cluster_of[a[i]] == c).collect();
            if members.len() == 1 {
                let i = threads[0];
                let q = &next.vectors[members[0]];
                let ov = inner(q, &x[i]);
                let rot = if ov.norm() > 0.0 { ov / ov.norm() } else { ONE };
                new_x[i] = q.iter().map(|z| z * rot).collect();
                continue;
            }
            let projected: Vec<Vector> = threads
                .iter()
                .map(|&i| {
                    let mut out = vec![ZERO; n];
                    for &j in members {
                        let q = &next.vectors[j];
                        let cf = inner(q, &x[i]);
                        for (o, qi) in out.iter_mut().zip(q) {
                            *o += qi * cf;
                        }
                    }
                    out
                })
                .collect();
            let fresh = orthonormalize(&projected).ok_or(Error::AmbiguousMatching { index: k })?;
            for (r, &i) in threads.iter().enumerate() {
                new_x[i] = fresh[r].clone();
            }
        }
        let new_g: Vec<f64> = (0..n).map(|i| g[i] + wrap(next.phases[a[i]] - g[i])).collect();
        lifts.push(new_g);
        vectors.push(new_x);
        positions.push(a);
    }
    Ok(Threads { lifts, vectors, positions })
}

/// Continuous eigenvalue functions along a sampled path.
#[derive(Clone, Debug, Serialize)]
pub struct EigenPathBundle {
    pub times: Vec<f64>,
    /// `lambdas[i][k]`: lifted phase (turns) of thread `i` at sample `k`;
    /// the eigenvalue is `exp(2 pi i lambdas[i][k])`.
    pub lambdas: Vec<Vec<f64>>,
    /// `pairing[k][i]`: index (in phase order on `[0, 1)`) of the eigenvalue
    /// occupied by thread `i` at sample `k`.
    pub pairing: Vec<Vec<usize>>,
    /// Per-thread Lipschitz estimate of `t -> exp(2 pi i lambda(t))`.
    pub lips: Vec<f64>,
    /// Per-thread windings of a closed path whose threads return to their
    /// starting eigenvalue; `None` for open paths or permuted threads.
    pub windings: Option<Vec<i64>>,
}

impl EigenPathBundle {
    /// Eigenvalue of thread `i` at sample `k`.
    pub fn eigenvalue(&self, i: usize, k: usize) -> C64 {
        cis_turns(self.lambdas[i][k])
    }
}

/// Eigenvalue threads of a path, following eigenvectors step by step.
///
/// Fails with `AmbiguousMatching` when some thread vector does not overlap
/// any single cluster of the next sample by at least one half; the grid
/// must then be refined.
pub fn track_eigenvalues(path: &UnitaryPath, cfg: &Config) -> Result<EigenPathBundle> {
    let th = follow_threads(path.values(), cfg)?;
    let n = path.dim();
    let times = path.times().to_vec();
    let samples = times.len();
    let lambdas: Vec<Vec<f64>> = (0..n).map(|i| (0..samples).map(|k| th.lifts[k][i]).collect()).collect();
    let lips = lambdas
        .iter()
        .map(|l| {
            (0..samples - 1)
                .map(|k| (cis_turns(l[k + 1] - l[k]) - ONE).norm() / (times[k + 1] - times[k]))
                .fold(0.0, f64::max)
        })
        .collect();
    let windings = if path.is_closed() {
        let w: Vec<f64> = lambdas.iter().map(|l| l[samples - 1] - l[0]).collect();
        if w.iter().all(|x| (x - x.round()).abs() < 1e-6) {
            Some(w.iter().map(|x| x.round() as i64).collect())
        } else {
            None
        }
    } else {
        None
    };
    Ok(EigenPathBundle { times, lambdas, pairing: th.positions, lips, windings })
}

/// Rotation `r` (turns) with every eigenvalue phase at least `guard` away
/// from the cut `r + 1/2`, as close to zero as possible.
fn short_rotation(u: &Unitary, guard: f64) -> f64 {
    let (vals, _) = unitary_eigen(u.matrix());
    let mut ph: Vec<f64> = vals.iter().map(|&z| phase(z).rem_euclid(1.0)).collect();
    ph.sort_by(f64::total_cmp);
    let n = ph.len();
    let mut best: Option<(f64, f64)> = None;
    for j in 0..n {
        let a = ph[j];
        let b = if j + 1 < n { ph[j + 1] } else { ph[0] + 1.0 };
        if b - a <= 2.0 * guard {
            continue;
        }
        let (lo, hi) = (a + guard, b - guard);
        // Cut position nearest to 1/2 (mod 1) inside [lo, hi].
        for shift in [-1.0, 0.0, 1.0] {
            let target: f64 = 0.5 + shift;
            let c = target.clamp(lo, hi);
            let dist = (c - target).abs();
            if best.map_or(true, |(d, _)| dist < d - 1e-15) {
                best = Some((dist, c - target));
            }
        }
    }
    best.map_or(0.0, |(_, r)| r)
}

/// Logarithm of `u` (in turns) whose branch cut is the admissible one
/// nearest to `-1`, so that its norm is as small as the guard allows.
pub fn short_log(u: &Unitary, cfg: &Config) -> Result<SelfAdjoint> {
    unitary_log(u, short_rotation(u, cfg.branch_guard), cfg.branch_guard)
}

/// `t -> exp(2 pi i t h)` with `h` the shortest logarithm of `u`; its
/// length is `2 pi ||h||`, at most `pi` up to the branch guard.
pub fn short_path(u: &Unitary, cfg: &Config) -> Result<UnitaryPath> {
    Ok(UnitaryPath::exp_path(&short_log(u, cfg)?, None))
}

/// Largest `||[v, z(t)]||` over the samples of a path.
pub fn max_commutator(v: &Unitary, path: &UnitaryPath) -> f64 {
    path.values()
        .iter()
        .map(|z| commutator(v.matrix(), z.matrix()).op_norm())
        .fold(0.0, f64::max)
}

/// Path from `1` to `w` produced by `super_homotopy`, with its certificate.
#[derive(Clone, Debug)]
pub struct AlmostCommutingPath {
    pub path: UnitaryPath,
    /// Largest sampled `||[v, w(t)]||`.
    pub max_commutator: f64,
    pub lip: f64,
    /// Number of spectral clusters of `v` used (1 for the direct logarithm).
    pub clusters: usize,
}

/// Arc clusters of the spectrum of `v` obtained by cutting at the `cuts`
/// widest gaps; returned as eigenvector lists.
fn arc_clusters(spec: &Spectrum, cuts: usize) -> Vec<Vec<usize>> {
    let n = spec.phases.len();
    let ph: Vec<f64> = spec.phases.iter().map(|p| p.rem_euclid(1.0)).collect();
    let mut gaps: Vec<(f64, usize)> =
        (0..n).map(|j| (if j + 1 < n { ph[j + 1] - ph[j] } else { ph[0] + 1.0 - ph[j] }, j)).collect();
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut ends: Vec<usize> = gaps.iter().take(cuts).map(|&(_, j)| j).collect();
    ends.sort();
    let mut out = Vec::new();
    for (c, &e) in ends.iter().enumerate() {
        let prev = if c == 0 { ends[ends.len() - 1] } else { ends[c - 1] };
        let mut members = Vec::new();
        let mut j = (prev + 1) % n;
        loop {
            members.push(j);
            if j == e {
                break;
            }
            j = (j + 1) % n;
        }
        out.push(members);
    }
    out
}

/// Path from `1` to `w` along which every sample almost commutes with `v`.
///
/// Tries the direct shortest-logarithm path first. Otherwise `w` is
/// compressed to the block diagonal with respect to arcs of the spectrum of
/// `v` (cut at its widest gaps), the compression is polar-corrected and
/// joined to `1` by its blockwise logarithm and to `w` by the polar
/// correction of the straight segment. Every candidate is verified on its
/// samples; the first one meeting both bounds is returned.
pub fn super_homotopy(v: &Unitary, w: &Unitary, eps: f64, cfg: &Config) -> Result<AlmostCommutingPath> {
    if v.dim() != w.dim() {
        return Err(Error::DimMismatch { expected: v.dim(), found: w.dim() });
    }
    let b = bott(v, w, cfg)?;
    if b != 0 {
        return Err(Error::BottObstruction { bott: b });
    }
    let lip_max = PI + eps;
    let mut best = (f64::INFINITY, f64::INFINITY);
    let direct = short_path(w, cfg)?;
    let comm = max_commutator(v, &direct);
    if comm < eps && direct.lip_estimate() <= lip_max {
        return Ok(AlmostCommutingPath { lip: direct.lip_estimate(), path: direct, max_commutator: comm, clusters: 1 });
    }
    best = (best.0.min(comm), best.1.min(direct.lip_estimate()));
    let spec = spectrum(v, cfg.cluster_tol);
    let n = v.dim();
    for cuts in 2..=n.min(16) {
        let blocks = arc_clusters(&spec, cuts);
        let projections: Vec<CMatrix> = blocks
            .iter()
            .map(|members| {
                let vs: Vec<Vector> = members.iter().map(|&j| spec.vectors[j].clone()).collect();
                let mut coeffs = vec![ZERO; n];
                coeffs[..vs.len()].iter_mut().for_each(|c| *c = ONE);
                let mut cols = vs;
                cols.resize(n, vec![ZERO; n]);
                conjugate_diag(&from_columns(&cols), &coeffs)
            })
            .collect();
        let mut compressed = CMatrix::zeros(n);
        for p in &projections {
            compressed = &compressed + &(&(p * w.matrix()) * p);
        }
        let Ok(w1) = polar_unitary(&compressed, cfg.singular_tol) else { continue };
        if w1.dist(w) >= 1.0 {
            continue;
        }
        let Ok(h) = short_log(&w1, cfg) else { continue };
        let first = UnitaryPath::exp_path(&h, None);
        let steps = ((w1.dist(w) * 16.0).ceil() as usize).max(2);
        let second = UnitaryPath::sample(steps, |t| {
            let m = &w1.matrix().scale_re(1.0 - t) + &w.matrix().scale_re(t);
            polar_unitary(&m, 0.0).expect("segment between close unitaries is invertible")
        });
        let Ok(second) = second else { continue };
        let (l1, l2) = (first.lip_estimate(), second.lip_estimate());
        let Ok(joined) = UnitaryPath::concat_weighted(&[&first, &second], &[l1, l2]) else { continue };
        let comm = max_commutator(v, &joined);
        let lip = joined.lip_estimate();
        if comm < eps && lip <= lip_max {
            return Ok(AlmostCommutingPath { path: joined, max_commutator: comm, lip, clusters: blocks.len() });
        }
        best = (best.0.min(comm), best.1.min(lip));
    }
    Err(Error::SynthesisFailure { achieved: best.0, required: eps })
}

/// Self-adjoint path `h` with `exp(2 pi i h)` uniformly close to a loop.
#[derive(Clone, Debug)]
pub struct ShrinkResult {
    pub h: SelfAdjointPath,
    /// Number of intervals `L`.
    pub knots: usize,
    /// Lipschitz bound `C` of the input loop.
    pub c: f64,
    /// Certified bound `2 C L / 3 + C / 6` on `Lip(h)`.
    pub c_prime: f64,
    /// Measured `Lip(h)`.
    pub lip: f64,
    /// Largest sampled `||u(t) - exp(2 pi i h(t))||`.
    pub max_error: f64,
    /// Largest `||[u_k, w_k]||` over the knots.
    pub max_knot_commutator: f64,
}

/// Number of intervals: least `L` with `2 C / L < delta`.
fn knot_count(c: f64, delta: f64) -> usize {
    if c <= 0.0 {
        return 1;
    }
    (2.0 * c / delta).floor() as usize + 1
}

/// Lipschitz logarithm of a loop based at `1` with zero eigenvalue windings.
///
/// Samples `u_k = u(k / L)`, follows eigenvector threads with lifts `g_i`,
/// maps the thread projections at `k` onto those at `k + 1` by `w_k`,
/// joins `1` to `w_k` almost commuting with `u_k`, and conjugates the
/// interpolated spectral sum `sum_i g_i(t) p_{k,i}` along that join.
pub fn lip_shrink_loop(u: &UnitaryPath, c: f64, eps: f64, cfg: &Config) -> Result<ShrinkResult> {
    let n = u.dim();
    if !u.is_closed() {
        return Err(Error::invalid("lip_shrink_loop needs a closed loop"));
    }
    let base = u.start().dist_to_identity();
    if base > BASE_TOL {
        return Err(Error::invalid(format!("loop must start at 1 (distance {base:.3e})")));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    if u.lip_estimate() > c * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::invalid(format!("loop Lipschitz estimate {:.6} exceeds C = {c}", u.lip_estimate())));
    }
    let delta = cfg.homotopy_ratio * eps / 2.0;
    let l = knot_count(c, delta);
    if l > MAX_KNOTS {
        return Err(Error::invalid(format!("{l} knots needed; reduce C or increase eps")));
    }
    let c_prime = 2.0 * c * l as f64 / 3.0 + c / 6.0;
    let knots: Vec<Unitary> = (0..=l).map(|k| u.eval(k as f64 / l as f64)).collect();
    let th = follow_threads(&knots, cfg)?;
    for i in 0..n {
        let w = th.lifts[l][i] - th.lifts[0][i];
        if w.abs() > 1e-6 {
            return Err(Error::WindingObstruction { winding: w });
        }
    }
    let mut times = Vec::new();
    let mut values: Vec<SelfAdjoint> = Vec::new();
    let mut max_error: f64 = 0.0;
    let mut max_comm: f64 = 0.0;
    for k in 0..l {
        let (e0, e1) = (&th.vectors[k], &th.vectors[k + 1]);
        // w_k maps each thread vector at k onto the one at k + 1.
        let w = Unitary::new_unchecked(&from_columns(e1) * &from_columns(e0).adjoint());
        let uk = &knots[k];
        max_comm = max_comm.max(commutator(uk.matrix(), w.matrix()).op_norm());
        let b = bott(uk, &w, cfg)?;
        if b != 0 {
            return Err(Error::BottObstruction { bott: b });
        }
        let z = super_homotopy(uk, &w, eps / 2.0, cfg)?;
        let (g0, g1) = (&th.lifts[k], &th.lifts[k + 1]);
        for (j, (&s, zs)) in z.path.times().iter().zip(z.path.values()).enumerate() {
            if k > 0 && j == 0 {
                continue;
            }
            let t = (k as f64 + s) / l as f64;
            let gs: Vec<C64> = (0..n).map(|i| C64::new(g0[i] + s * (g1[i] - g0[i]), 0.0)).collect();
            let inner_sum = spectral_sum(e0, &gs);
            let h = SelfAdjoint::from_hermitian_part(&zs.conj(&inner_sum));
            let err = u.eval(t).dist(&expm_sa(&h));
            max_error = max_error.max(err);
            times.push(if k + 1 == l && j + 1 == z.path.len() { 1.0 } else { t });
            values.push(h);
        }
    }
    let h = SelfAdjointPath { times, values };
    let lip = h.lip_estimate();
    if max_error >= eps {
        return Err(Error::SynthesisFailure { achieved: max_error, required: eps });
    }
    if lip > c_prime * (1.0 + 1e-9) + 1e-12 {
        return Err(Error::SynthesisFailure { achieved: lip, required: c_prime });
    }
    Ok(ShrinkResult { h, knots: l, c, c_prime, lip, max_error, max_knot_commutator: max_comm })
}

/// Point of `dE` for a boundary parameter `s in [0, 1]`.
pub fn boundary_point(s: f64) -> (f64, f64) {
    let s = s.clamp(0.0, 1.0);
    if s <= 0.25 {
        (1.0 - 8.0 * s, 1.0)
    } else if s <= 0.5 {
        (-1.0, 1.0 - 8.0 * (s - 0.25))
    } else if s <= 0.75 {
        (-1.0 + 8.0 * (s - 0.5), -1.0)
    } else {
        (1.0, -1.0 + 8.0 * (s - 0.75))
    }
}

/// Boundary parameter of a point with sup norm one.
pub fn boundary_param(p: (f64, f64)) -> f64 {
    let (x, y) = p;
    if y >= 1.0 {
        (1.0 - x) / 8.0
    } else if x <= -1.0 {
        0.25 + (1.0 - y) / 8.0
    } else if y <= -1.0 {
        0.5 + (x + 1.0) / 8.0
    } else {
        0.75 + (y + 1.0) / 8.0
    }
}

/// `s -> exp(2 pi i s h)` with `h` diagonalised once.
struct ExpFamily {
    vals: Vec<f64>,
    q: CMatrix,
}

impl ExpFamily {
    fn new(h: &SelfAdjoint) -> Self {
        let (vals, q) = hermitian_eigen(h.matrix());
        ExpFamily { vals, q }
    }

    fn at(&self, s: f64) -> Unitary {
        let d: Vec<C64> = self.vals.iter().map(|&x| cis_turns(s * x)).collect();
        Unitary::new_unchecked(conjugate_diag(&self.q, &d))
    }
}

/// Map `z: dE -> U(A)` sampled along the boundary loop.
#[derive(Clone, Debug)]
pub struct BoundaryMap {
    /// The loop `s -> z(boundary_point(s))`, starting and ending at `1`.
    pub loop_path: UnitaryPath,
    /// Lipschitz estimate with respect to the sup norm on the square.
    pub lip_estimate: f64,
    /// Sampled `sup_t ||z(-1, t) - u_1 alpha_1(z(1, t))||` and
    /// `sup_t ||z(t, -1) - u_2 alpha_2(z(t, 1))||`.
    pub conditions: [f64; 2],
    /// `sup ||z - z_raw||` of the commutant correction, when one was applied.
    pub commutant_correction: Option<f64>,
}

impl BoundaryMap {
    pub fn dim(&self) -> usize {
        self.loop_path.dim()
    }

    /// `z` at a point of `dE`.
    pub fn eval(&self, p: (f64, f64)) -> Unitary {
        self.loop_path.eval(boundary_param(p))
    }
}

/// Conditional expectation onto the commutant of the listed factors.
fn commutant_expectation(x: &CMatrix, trunc: &TruncatedUHF, factors: &[usize]) -> CMatrix {
    factors.iter().fold(x.clone(), |acc, &k| weyl_average(&acc, trunc, k))
}

/// Measured boundary conditions of a sampled boundary loop.
fn boundary_conditions(loop_path: &UnitaryPath, u1: &Unitary, u2: &Unitary, action: &Action, n: usize) -> [f64; 2] {
    let mut c = [0.0f64; 2];
    for m in 0..=n {
        let t = 1.0 - 2.0 * m as f64 / n as f64;
        let left = loop_path.eval(boundary_param((-1.0, t)));
        let right = loop_path.eval(boundary_param((1.0, t)));
        c[0] = c[0].max(left.dist(&(u1 * &action.apply_gen_u(0, &right))));
        let bottom = loop_path.eval(boundary_param((t, -1.0)));
        let top = loop_path.eval(boundary_param((t, 1.0)));
        c[1] = c[1].max(bottom.dist(&(u2 * &action.apply_gen_u(1, &top))));
    }
    c
}

/// Boundary map of an admissible almost cocycle.
///
/// Top side: `1 -> u_1` along the short path `h_1`; right side: `1 -> u_2`
/// along `h_2` (read downwards); left side `u_1 alpha_1(h_2)` corrected by
/// `exp(-2 pi i s a)` with `exp(2 pi i a) = u_1 alpha_1(u_2) (u_2
/// alpha_2(u_1))*`, so that it ends at `u_2 alpha_2(u_1)`; bottom side
/// `u_2 alpha_2(h_1)`. With `a0 = Some((trunc, factors))` every sample is
/// mapped into the commutant of those factors by the Weyl-average
/// expectation followed by the polar correction.
pub fn boundary_map(
    u1: &Unitary,
    u2: &Unitary,
    action: &Action,
    a0: Option<(&TruncatedUHF, &[usize])>,
    eps: f64,
    cfg: &Config,
) -> Result<BoundaryMap> {
    let d = u1.dim();
    if u2.dim() != d || action.dim() != d {
        return Err(Error::DimMismatch { expected: d, found: if u2.dim() != d { u2.dim() } else { action.dim() } });
    }
    let kappa = kappa_fast(u1, u2, action, cfg)?;
    if kappa.defect >= eps {
        return Err(Error::NotAlmostCocycle { defect: kappa.defect });
    }
    if kappa.integer_form != 0 {
        return Err(Error::NotAdmissible { detail: format!("kappa = {}", kappa.value.as_fraction()) });
    }
    let h1 = ExpFamily::new(&short_log(u1, cfg)?);
    let h2 = ExpFamily::new(&short_log(u2, cfg)?);
    let (c1, c2) = cocycle_corners(u1, u2, action);
    let x = &c1 * &c2.adjoint();
    let a = ExpFamily::new(&unitary_log(&x, 0.0, cfg.branch_guard)?);
    let n = cfg.samples_per_side.max(2);
    let mut samples: Vec<(f64, Unitary)> = Vec::with_capacity(4 * n + 1);
    for side in 0..4 {
        for m in 0..n {
            let sigma = m as f64 / n as f64;
            let s = (side as f64 + sigma) / 4.0;
            let z = match side {
                0 => h1.at(sigma),
                1 => &a.at(-sigma) * &(u1 * &action.apply_gen_u(0, &h2.at(sigma))),
                2 => u2 * &action.apply_gen_u(1, &h1.at(1.0 - sigma)),
                _ => h2.at(1.0 - sigma),
            };
            samples.push((s, z));
        }
    }
    samples.push((1.0, Unitary::identity(d)));
    let mut correction = None;
    if let Some((trunc, factors)) = a0 {
        if trunc.dim() != d {
            return Err(Error::DimMismatch { expected: d, found: trunc.dim() });
        }
        let mut worst: f64 = 0.0;
        for (_, z) in samples.iter_mut() {
            let e = commutant_expectation(z.matrix(), trunc, factors);
            let z1 = polar_unitary(&e, cfg.singular_tol).map_err(|_| Error::CommutantDefect { defect: 1.0, allowed: 0.5 })?;
            let dev = z1.dist(z);
            if dev >= 0.5 {
                return Err(Error::CommutantDefect { defect: dev, allowed: 0.5 });
            }
            worst = worst.max(dev);
            *z = z1;
        }
        correction = Some(worst);
    }
    let loop_path = UnitaryPath::new(samples)?;
    let w = winding_tau(&loop_path, cfg)?;
    if w.value.numerator != 0 {
        return Err(Error::WindingObstruction { winding: w.value.to_f64() });
    }
    let lip_estimate = loop_path.lip_estimate() / 8.0;
    if lip_estimate > cfg.boundary_lip_max {
        return Err(Error::SynthesisFailure { achieved: lip_estimate, required: cfg.boundary_lip_max });
    }
    let conditions = boundary_conditions(&loop_path, u1, u2, action, n);
    if conditions[0] >= eps || conditions[1] >= eps {
        return Err(Error::AssemblyDefect { achieved: conditions[0].max(conditions[1]), target: eps });
    }
    Ok(BoundaryMap { loop_path, lip_estimate, conditions, commutant_correction: correction })
}

/// Extension `z~: E -> U(A)` of a boundary map.
#[derive(Clone, Debug)]
pub struct DiskMap {
    boundary: BoundaryMap,
    h: SelfAdjointPath,
    /// Shrinking data of the boundary loop (`knots`, `c`, `c_prime`).
    pub knots: usize,
    pub c: f64,
    pub c_prime: f64,
    /// `"log_patch"` or `"shrink"`.
    pub method: &'static str,
    /// Lipschitz estimate over a grid of the square (sup norm).
    pub lip_estimate: f64,
    /// Largest distance between `z~` and `z` at the boundary samples.
    pub restriction_error: f64,
    /// Largest `||z - z_0||` on the boundary samples.
    pub guard: f64,
}

/// Grid size (points per axis) used for the Lipschitz estimate of a disk map.
const DISK_GRID: usize = 17;

impl DiskMap {
    pub fn boundary(&self) -> &BoundaryMap {
        &self.boundary
    }

    pub fn dim(&self) -> usize {
        self.boundary.dim()
    }

    /// `z_0(r theta) = exp(2 pi i r h(theta))` on the scaled square.
    fn z0(&self, r: f64, s: f64) -> Unitary {
        expm_sa(&self.h.eval(s).scale(r))
    }

    /// Transfinite interpolation of the boundary logarithm `h`:
    /// `H(x, y) = (1-s) h(-1, y) + s h(1, y) + (1-t) h(x, -1) + t h(x, 1)`
    /// minus the bilinear interpolation of the corners, with
    /// `s = (x+1)/2`, `t = (y+1)/2`. It equals `h` on the boundary.
    fn log_patch(&self, p: (f64, f64)) -> SelfAdjoint {
        let (x, y) = (p.0.clamp(-1.0, 1.0), p.1.clamp(-1.0, 1.0));
        let (s, t) = ((x + 1.0) / 2.0, (y + 1.0) / 2.0);
        let hb = |a: f64, b: f64| self.h.eval(boundary_param((a, b)));
        let edges = hb(-1.0, y)
            .scale(1.0 - s)
            .add(&hb(1.0, y).scale(s))
            .add(&hb(x, -1.0).scale(1.0 - t))
            .add(&hb(x, 1.0).scale(t));
        let corners = hb(-1.0, -1.0)
            .scale((1.0 - s) * (1.0 - t))
            .add(&hb(1.0, -1.0).scale(s * (1.0 - t)))
            .add(&hb(-1.0, 1.0).scale((1.0 - s) * t))
            .add(&hb(1.0, 1.0).scale(s * t));
        edges.sub(&corners)
    }

    /// `z~(p)`: on `||p|| >= 1/2` the log-corrected interpolation
    /// `z(theta) exp(2 pi i (2 - 2||p||) k(theta))` with
    /// `k = (1/2 pi i) log(z* z_0)`; inside, `z_0(2p)`.
    pub fn eval(&self, p: (f64, f64)) -> Result<Unitary> {
        if self.method == "log_patch" {
            return Ok(expm_sa(&self.log_patch(p)));
        }
        let r = p.0.abs().max(p.1.abs()).min(1.0);
        if r < 1e-15 {
            return Ok(Unitary::identity(self.dim()));
        }
        let s = boundary_param((p.0 / r, p.1 / r));
        if r < 0.5 {
            return Ok(self.z0(2.0 * r, s));
        }
        let z = self.boundary.loop_path.eval(s);
        let z0 = self.z0(1.0, s);
        let gap = z.dist(&z0);
        if gap >= 0.5 {
            return Err(Error::GuardViolated { value: gap, limit: 0.5 });
        }
        let ratio = Unitary::new_unchecked(z.adjoint().matrix() * z0.matrix());
        let k = unitary_log(&ratio, 0.0, 0.0)?;
        Ok(&z * &expm_sa(&k.scale(2.0 - 2.0 * r)))
    }
}

/// Extends a boundary map of trivial class to the whole square.
///
/// The boundary loop is shrunk with `lip_shrink_loop` to `h`, giving the
/// inner family `z_0(r theta) = exp(2 pi i r h(theta))`; the outer annulus
/// interpolates between `z` and `z_0` through `k = (1/2 pi i) log(z* z_0)`,
/// defined because `||z - z_0|| < 1/2` on the boundary. Loops within
/// `PRINCIPAL_LOG_RADIUS` of 1 instead take `h` to be the principal
/// logarithm of the loop and fill the square with the exponential of its
/// transfinite interpolation, which has a much smaller Lipschitz constant.
pub fn disk_extension(z: &BoundaryMap, cfg: &Config) -> Result<DiskMap> {
    extend_disk(z, true, cfg)
}

/// `disk_extension` that always goes through `lip_shrink_loop`.
pub fn disk_extension_shrink(z: &BoundaryMap, cfg: &Config) -> Result<DiskMap> {
    extend_disk(z, false, cfg)
}

fn extend_disk(z: &BoundaryMap, allow_log: bool, cfg: &Config) -> Result<DiskMap> {
    let c = z.loop_path.lip_estimate();
    let near_one = allow_log && z.loop_path.values().iter().all(|u| u.dist_to_identity() <= PRINCIPAL_LOG_RADIUS);
    let (h, knots, c_prime, method) = if near_one {
        // Spectra stay away from -1, so the principal logarithm is continuous
        // along the loop and exp(2 pi i h) reproduces it exactly.
        let values = z
            .loop_path
            .values()
            .iter()
            .map(|u| unitary_log(u, 0.0, cfg.branch_guard))
            .collect::<Result<Vec<_>>>()?;
        let h = SelfAdjointPath { times: z.loop_path.times().to_vec(), values };
        let lip = h.lip_estimate();
        (h, 0, lip, "log_patch")
    } else {
        let shrink = lip_shrink_loop(&z.loop_path, c, DISK_SHRINK_EPS, cfg)?;
        (shrink.h, shrink.knots, shrink.c_prime, "shrink")
    };
    let mut guard: f64 = 0.0;
    let check = |s: f64| z.loop_path.eval(s).dist(&expm_sa(&h.eval(s)));
    for &s in h.times.iter().chain(z.loop_path.times()) {
        guard = guard.max(check(s));
    }
    if guard >= 0.5 {
        return Err(Error::GuardViolated { value: guard, limit: 0.5 });
    }
    let mut disk = DiskMap {
        boundary: z.clone(),
        h,
        knots,
        c,
        c_prime,
        method,
        lip_estimate: 0.0,
        restriction_error: 0.0,
        guard,
    };
    let mut restriction: f64 = 0.0;
    for (&s, u) in z.loop_path.times().iter().zip(z.loop_path.values()) {
        restriction = restriction.max(disk.eval(boundary_point(s))?.dist(u));
    }
    let g = DISK_GRID;
    let coord = |i: usize| -1.0 + 2.0 * i as f64 / (g - 1) as f64;
    let mut grid: Vec<Vec<Unitary>> = Vec::with_capacity(g);
    for i in 0..g {
        let mut row = Vec::with_capacity(g);
        for j in 0..g {
            row.push(disk.eval((coord(i), coord(j)))?);
        }
        grid.push(row);
    }
    let step = 2.0 / (g - 1) as f64;
    let mut lip: f64 = z.lip_estimate;
    for i in 0..g {
        for j in 0..g {
            if i + 1 < g {
                lip = lip.max(grid[i][j].dist(&grid[i + 1][j]) / step);
            }
            if j + 1 < g {
                lip = lip.max(grid[i][j].dist(&grid[i][j + 1]) / step);
            }
        }
    }
    disk.lip_estimate = lip;
    disk.restriction_error = restriction;
    Ok(disk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{clock, coboundary, shift};
    use crate::random::{haar_unitary, random_self_adjoint, rng_from_seed};

    fn cfg() -> Config {
        Config::default()
    }

    fn diag_loop(steps: usize) -> UnitaryPath {
        UnitaryPath::sample(steps, |t| {
            Unitary::new_unchecked(CMatrix::from_diag(&[cis_turns(t), cis_turns(-t)]))
        })
        .unwrap()
    }

    #[test]
    fn assignment_solves_small_instances() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = assignment(&cost);
        let total: f64 = (0..3).map(|i| cost[i][a[i]]).sum();
        // Brute force over the six permutations.
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let best = perms.iter().map(|p| (0..3).map(|i| cost[i][p[i]]).sum::<f64>()).fold(f64::INFINITY, f64::min);
        assert_eq!(total, best);
    }

    #[test]
    fn constant_path_has_flat_threads() {
        let mut rng = rng_from_seed(1);
        let u = haar_unitary(4, &mut rng);
        let p = UnitaryPath::sample(5, |_| u.clone()).unwrap();
        let b = track_eigenvalues(&p, &cfg()).unwrap();
        for l in &b.lambdas {
            assert!(l.iter().all(|x| (x - l[0]).abs() < 1e-12));
        }
        assert!(b.lips.iter().all(|&x| x < 1e-9));
        assert_eq!(b.windings, Some(vec![0; 4]));
    }

    #[test]
    fn diagonal_loop_threads_cross_and_wind() {
        // Odd and even step counts: the second grid hits the crossing at -1.
        for steps in [63, 64] {
            let b = track_eigenvalues(&diag_loop(steps), &cfg()).unwrap();
            let mut w = b.windings.clone().unwrap();
            w.sort();
            assert_eq!(w, vec![-1, 1], "steps {steps}");
            for l in &b.lambdas {
                let slope = (l[1] - l[0]) * steps as f64;
                assert!((slope.abs() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn thread_windings_sum_to_trace_winding_and_survive_refinement() {
        let mut rng = rng_from_seed(2);
        let q = haar_unitary(5, &mut rng);
        let h = random_self_adjoint(5, 0.3, &mut rng);
        let eh = ExpFamily::new(&h);
        let f = |t: f64| {
            let d = CMatrix::from_diag(&[cis_turns(2.0 * t), cis_turns(-t), ONE, cis_turns(t), ONE]);
            let core = Unitary::new_unchecked(q.conj(&d));
            let bump = eh.at((PI * t).sin());
            &(&bump * &core) * &bump.adjoint()
        };
        let coarse = UnitaryPath::sample(200, f).unwrap();
        let fine = UnitaryPath::sample(400, f).unwrap();
        let wc = track_eigenvalues(&coarse, &cfg()).unwrap().windings.unwrap();
        let wf = track_eigenvalues(&fine, &cfg()).unwrap().windings.unwrap();
        let mut a = wc.clone();
        let mut b = wf.clone();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert_eq!(a, vec![-1, 0, 0, 1, 2]);
        let tw = winding_tau(&coarse, &cfg()).unwrap();
        assert_eq!(wc.iter().sum::<i64>(), tw.value.numerator);
    }

    #[test]
    fn short_paths() {
        let one = Unitary::identity(3);
        let p = short_path(&one, &cfg()).unwrap();
        assert!(p.lip_estimate() < 1e-12);
        let minus = Unitary::scalar(1, C64::new(-1.0, 0.0));
        let p = short_path(&minus, &cfg()).unwrap();
        // Arc length of the half circle.
        let len: f64 = p.step_phases().iter().map(|ph| 2.0 * PI * ph[0].abs()).sum();
        assert!((len - PI).abs() < 1e-9);
        assert!(p.end().dist(&minus) < 1e-12);
        let mut rng = rng_from_seed(3);
        let u = haar_unitary(8, &mut rng);
        let p = short_path(&u, &cfg()).unwrap();
        assert!(p.end().dist(&u) < 1e-9);
        assert!(p.start().dist_to_identity() < 1e-12);
        assert!(p.lip_estimate() <= PI + 0.01);
    }

    #[test]
    fn super_homotopy_commuting_and_trivial_cases() {
        let v = clock(8);
        let one = Unitary::identity(8);
        let z = super_homotopy(&v, &one, 0.1, &cfg()).unwrap();
        assert!(z.max_commutator < 1e-12 && z.lip < 1e-12);
        // A permutation of the clock eigenvectors' blocks commutes with clock^4.
        let v4 = clock(8).pow(4);
        let w = shift(8).pow(2);
        assert!(commutator(v4.matrix(), w.matrix()).max_abs() < 1e-12);
        let z = super_homotopy(&v4, &w, 0.1, &cfg()).unwrap();
        assert!(z.max_commutator < 1e-9);
        assert!(z.path.end().dist(&w) < 1e-9);
    }

    #[test]
    fn super_homotopy_noisy_instances() {
        let mut rng = rng_from_seed(4);
        for _ in 0..5 {
            let noise = expm_sa(&random_self_adjoint(12, 1e-3, &mut rng));
            let v = &noise * &clock(12);
            // w is a function of clock(12) composed with small noise.
            let f = CMatrix::from_diag(&(0..12).map(|j| cis_turns(0.3 * ((j % 3) as f64 - 1.0))).collect::<Vec<_>>());
            let w0 = Unitary::new_unchecked(f);
            let w = &expm_sa(&random_self_adjoint(12, 1e-3, &mut rng)) * &w0;
            let z = super_homotopy(&v, &w, 0.1, &cfg()).unwrap();
            assert!(z.max_commutator < 0.1);
            assert!(z.lip <= PI + 0.1);
            assert!(z.path.end().dist(&w) < 1e-9);
            assert!(max_commutator(&v, &z.path) < 0.1);
        }
    }

    #[test]
    fn super_homotopy_rejects_bott_one() {
        let err = super_homotopy(&clock(7), &shift(7), 0.1, &cfg()).unwrap_err();
        assert_eq!(err, Error::BottObstruction { bott: 1 });
    }

    #[test]
    fn constant_loop_shrinks_to_zero() {
        let p = UnitaryPath::constant(&Unitary::identity(3));
        let r = lip_shrink_loop(&p, 0.0, 0.2, &cfg()).unwrap();
        assert_eq!(r.knots, 1);
        assert!(r.h.values.iter().all(|h| h.norm() < 1e-12));
    }

    #[test]
    fn sine_loop_is_recovered() {
        let mut rng = rng_from_seed(5);
        let h = random_self_adjoint(4, 0.2, &mut rng);
        let fam = ExpFamily::new(&h);
        let p = UnitaryPath::sample(256, |t| fam.at((PI * t).sin())).unwrap();
        let c = p.lip_estimate();
        let r = lip_shrink_loop(&p, c, 0.2, &cfg()).unwrap();
        assert!(r.max_error < 0.2);
        assert!(r.lip <= r.c_prime);
        assert_eq!(r.knots, knot_count(c, cfg().homotopy_ratio * 0.1));
        for (t, v) in r.h.times.iter().zip(&r.h.values) {
            let expect = h.scale((PI * t).sin());
            let gap = v.sub(&expect).norm();
            assert!(gap < 1e-4, "t = {t}: {gap:.3e}");
        }
        assert!(r.h.values[0].norm() < 1e-12 && r.h.values.last().unwrap().norm() < 1e-12);
    }

    #[test]
    fn per_branch_winding_is_rejected() {
        let p = diag_loop(63);
        let err = lip_shrink_loop(&p, p.lip_estimate(), 0.2, &cfg()).unwrap_err();
        assert!(matches!(err, Error::WindingObstruction { .. }), "{err:?}");
    }

    fn small_coboundary(seed: u64) -> (Action, Unitary, Unitary) {
        let mut rng = rng_from_seed(seed);
        let action = Action::new(clock(3).kron(&Unitary::identity(2)), Unitary::identity(3).kron(&shift(2)), 1e-10)
            .unwrap();
        let v = expm_sa(&random_self_adjoint(6, 0.03, &mut rng));
        let c = coboundary(&v, &action);
        let [u1, u2] = c.u;
        (action, u1, u2)
    }

    #[test]
    fn boundary_map_of_trivial_cocycle_is_constant() {
        let a = Action::trivial(3);
        let one = Unitary::identity(3);
        let z = boundary_map(&one, &one, &a, None, 0.1, &cfg()).unwrap();
        assert!(z.lip_estimate < 1e-12);
        assert!(z.loop_path.values().iter().all(|u| u.dist_to_identity() < 1e-12));
        let disk = disk_extension(&z, &cfg()).unwrap();
        assert!(disk.eval((0.3, -0.7)).unwrap().dist_to_identity() < 1e-12);
        assert!(disk.lip_estimate < 1e-12);
    }

    #[test]
    fn boundary_map_and_extension_of_coboundary() {
        for seed in 0..3 {
            let (action, u1, u2) = small_coboundary(10 + seed);
            let z = boundary_map(&u1, &u2, &action, None, 0.1, &cfg()).unwrap();
            assert!(z.lip_estimate <= 4.0);
            assert!(z.conditions[0] < 0.1 && z.conditions[1] < 0.1);
            assert!(z.eval((1.0, 1.0)).dist_to_identity() < 1e-12);
            // Corners carry the expected values.
            assert!(z.eval((-1.0, 1.0)).dist(&u1) < 1e-9);
            assert!(z.eval((1.0, -1.0)).dist(&u2) < 1e-9);
            let disk = disk_extension(&z, &cfg()).unwrap();
            assert_eq!(disk.method, "log_patch");
            let slow = disk_extension_shrink(&z, &cfg()).unwrap();
            assert_eq!(slow.method, "shrink");
            for d in [&disk, &slow] {
                assert!(d.restriction_error < 1e-8);
                assert!(d.guard < 0.5);
                assert!(d.lip_estimate.is_finite());
            }
            assert!(disk.lip_estimate <= slow.lip_estimate + 1e-9);
        }
    }

    #[test]
    fn boundary_map_rejects_nonzero_kappa() {
        let (u1, u2) = (clock(7), shift(7));
        let err = boundary_map(&u1, &u2, &Action::trivial(7), None, 0.9, &cfg()).unwrap_err();
        assert!(matches!(err, Error::NotAdmissible { .. }), "{err:?}");
    }

    #[test]
    fn relative_boundary_map_lives_in_commutant() {
        let (action, u1, u2) = small_coboundary(20);
        // Extend to M_6 ⊗ M_2 with an untouched last factor.
        let t = TruncatedUHF::new(vec![3, 2, 2]).unwrap();
        let id2 = Unitary::identity(2);
        let big = Action::new(
            action.implementer(0).kron(&id2),
            action.implementer(1).kron(&id2),
            1e-10,
        )
        .unwrap();
        let (b1, b2) = (u1.kron(&id2), u2.kron(&id2));
        let z = boundary_map(&b1, &b2, &big, Some((&t, &[2])), 0.1, &cfg()).unwrap();
        assert!(z.commutant_correction.unwrap() < 1e-12);
        let e = t.embed_factor(&shift(2).into_matrix(), 2).unwrap();
        for u in z.loop_path.values() {
            assert!(commutator(u.matrix(), &e).max_abs() < 1e-12);
        }
    }
}
