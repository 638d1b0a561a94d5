//! Trace windings, the Bott index, the almost-cocycle invariant `kappa`, the
//! trace determinant and the pair invariants `[beta, alpha](p)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::actions::{cocycle_corners, Action, Cocycle, ProductAction};
use crate::algebra::{
    phases_avoiding_minus_one, polar_unitary, unitary_eigenvalues, unitary_log, unitary_log_auto, Unitary,
    C64,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::path::{UnitaryPath, CLOSURE_TOL};
use crate::uhf::{is_prime, k0_reduce, K0Residue, K0Value, TruncatedUHF};
use crate::weyl::{embed_with_identity, partial_trace};

/// Phase of `z` in turns, in `(-1/2, 1/2]`.
fn turns(z: C64) -> f64 {
    z.im.atan2(z.re) / (2.0 * PI)
}

/// Nearest integer to `x` with the distance to it.
fn snap(x: f64) -> (i64, f64) {
    let n = x.round();
    (n as i64, (x - n).abs())
}

/// Closed-loop trace winding on the lattice `(1/d) Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Winding {
    pub value: K0Value,
    /// `|raw - value|` in trace units.
    pub residual: f64,
}

/// `(1/2 pi i) sum_k tau(log(U_{k+1} U_k*))` for a closed path, snapped to
/// `(1/d) Z`.
pub fn winding_tau(path: &UnitaryPath, cfg: &Config) -> Result<Winding> {
    if !path.is_closed() {
        return Err(Error::invalid("trace winding needs a closed path"));
    }
    let d = path.dim() as u64;
    let raw = path.raw_trace_winding();
    let (n, res) = snap(raw * d as f64);
    let residual = res / d as f64;
    if residual > cfg.lattice_tol {
        return Err(Error::NotOnLattice { value: raw, residual });
    }
    Ok(Winding { value: K0Value::new(n, d), residual })
}

/// `Tr((1/2 pi i) log(v w v* w*))`, which is an integer because the
/// commutator has determinant one.
pub fn bott(v: &Unitary, w: &Unitary, cfg: &Config) -> Result<i64> {
    Ok(bott_report(v, w, cfg)?.0)
}

/// Bott index together with its rounding residual.
pub fn bott_report(v: &Unitary, w: &Unitary, cfg: &Config) -> Result<(i64, f64)> {
    if v.dim() != w.dim() {
        return Err(Error::DimMismatch { expected: v.dim(), found: w.dim() });
    }
    let x = &(v * w) * &(&v.adjoint() * &w.adjoint());
    let vals = unitary_eigenvalues(x.matrix());
    let closest = vals.iter().map(|z| (z + 1.0).norm()).fold(f64::INFINITY, f64::min);
    if closest < cfg.branch_guard {
        return Err(Error::BranchCut { distance: closest });
    }
    let tr: f64 = vals.iter().map(|&z| turns(z)).sum();
    let (n, residual) = snap(tr);
    if residual > cfg.integer_tol {
        return Err(Error::NotInteger { value: tr, residual });
    }
    Ok((n, residual))
}

/// Result of a `kappa` computation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaResult {
    /// `tau(a)` on the lattice `(1/d) Z`.
    pub value: K0Value,
    /// `Tr(a)`, the integer numerator.
    pub integer_form: i64,
    /// Distance of the unrounded `Tr(a)` from `integer_form`.
    pub residual: f64,
    /// Cocycle defect `||u_1 alpha_1(u_2) - u_2 alpha_2(u_1)||`.
    pub defect: f64,
}

#[derive(Serialize)]
struct KappaJson {
    integer: i64,
    tau_value: String,
    residual: f64,
}

impl Serialize for KappaResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KappaJson { integer: self.integer_form, tau_value: self.value.as_fraction(), residual: self.residual }
            .serialize(s)
    }
}

/// `x = u_1 alpha_1(u_2) (u_2 alpha_2(u_1))*` and the defect `||x - 1||`.
pub fn kappa_unitary(u1: &Unitary, u2: &Unitary, action: &Action) -> (Unitary, f64) {
    let (a, b) = cocycle_corners(u1, u2, action);
    let x = &a * &b.adjoint();
    let defect = a.dist(&b);
    (x, defect)
}

/// `kappa` through the trace of the logarithm of `x`: the two path segments
/// coming from `h_1` and `h_2` cancel because automorphisms preserve the
/// trace, leaving `tau(a)` with `a = (1/2 pi i) log x`.
pub fn kappa_fast(u1: &Unitary, u2: &Unitary, action: &Action, cfg: &Config) -> Result<KappaResult> {
    let (x, defect) = kappa_unitary(u1, u2, action);
    if defect >= 1.0 {
        return Err(Error::NotAlmostCocycle { defect });
    }
    let d = x.dim();
    let phases = phases_avoiding_minus_one(x.matrix());
    let tr: f64 = phases.iter().sum();
    let (n, residual) = snap(tr);
    if residual > cfg.integer_tol {
        return Err(Error::NotOnLattice { value: tr / d as f64, residual });
    }
    let bound = defect.asin() / (2.0 * PI);
    let tau = tr / d as f64;
    if tau.abs() > bound + 1e-14 {
        return Err(Error::numerical(format!("|tau(kappa)| = {tau:.3e} exceeds arcsin(defect)/2pi = {bound:.3e}")));
    }
    Ok(KappaResult { value: K0Value::new(n, d as u64), integer_form: n, residual, defect })
}

/// `kappa` through the closed path `H` assembled from `h_1`, the image
/// `u_1 alpha_1(h_2)`, the logarithmic segment `k` (reversed), the image
/// `u_2 alpha_2(h_1)` (reversed) and `h_2` (reversed).
///
/// The trace winding of `H` is `-tau(a)`; it is negated so that the result
/// agrees with `kappa_fast`.
pub fn kappa_loop(
    u1: &Unitary,
    u2: &Unitary,
    action: &Action,
    h1: &UnitaryPath,
    h2: &UnitaryPath,
    cfg: &Config,
) -> Result<KappaResult> {
    let (x, defect) = kappa_unitary(u1, u2, action);
    if defect >= 1.0 {
        return Err(Error::NotAlmostCocycle { defect });
    }
    let d = x.dim();
    let one = Unitary::identity(d);
    for (h, u, name) in [(h1, u1, "h1"), (h2, u2, "h2")] {
        if h.start().dist(&one) > CLOSURE_TOL || h.end().dist(u) > CLOSURE_TOL {
            return Err(Error::invalid(format!("{name} must run from 1 to u")));
        }
    }
    let a = unitary_log(&x, 0.0, cfg.branch_guard)?;
    let (_, base) = cocycle_corners(u1, u2, action);
    let k = UnitaryPath::exp_path(&a, Some(&base));
    let seg2 = h2.map(|v| u1 * &action.apply_gen_u(0, v))?;
    let seg4 = h1.map(|v| u2 * &action.apply_gen_u(1, v))?;
    let big_h = UnitaryPath::concat(&[h1, &seg2, &k.reversed(), &seg4.reversed(), &h2.reversed()])?;
    let w = winding_tau(&big_h, cfg)?;
    let n = -w.value.numerator;
    Ok(KappaResult { value: K0Value::new(n, d as u64), integer_form: n, residual: w.residual * d as f64, defect })
}

/// `kappa(u_1, u_2) = 0`.
pub fn admissible(c: &Cocycle, action: &Action, cfg: &Config) -> Result<bool> {
    Ok(kappa_fast(&c.u[0], &c.u[1], action, cfg)?.integer_form == 0)
}

/// `(u_1^{(m)}, u_2^{(n)})` with `u^{(j+1)} = u^{(j)} alpha^j(u)`: the pair
/// for the action generated by `alpha_1^m`, `alpha_2^n`.
pub fn power_pair(u1: &Unitary, u2: &Unitary, action: &Action, m: u32, n: u32) -> (Unitary, Unitary) {
    let pow = |u: &Unitary, i: usize, j: u32| {
        let w = action.implementer(i);
        let mut acc = Unitary::identity(u.dim());
        let mut wj = Unitary::identity(u.dim());
        for _ in 0..j {
            acc = &acc * &wj.conj_u(u);
            wj = &wj * w;
        }
        acc
    };
    (pow(u1, 0, m), pow(u2, 1, n))
}

/// Trace determinant value: a real number defined modulo `(1/d) Z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeltaTau {
    pub value: f64,
    /// The value is only meaningful modulo `1 / modulus_denominator`.
    pub modulus_denominator: u64,
}

impl DeltaTau {
    /// Representative in `[0, 1/d)`.
    pub fn canonical(&self) -> f64 {
        let m = 1.0 / self.modulus_denominator as f64;
        let r = self.value.rem_euclid(m);
        if (m - r).abs() < 1e-13 { 0.0 } else { r }
    }

    /// Distance between the two classes in `R / (1/d) Z`.
    pub fn distance(&self, other: &DeltaTau) -> f64 {
        let m = 1.0 / self.modulus_denominator as f64;
        let r = (self.value - other.value).rem_euclid(m);
        r.min(m - r)
    }
}

/// `(1/2 pi i) int tau(h' h*) dt` along `path` (default: the principal
/// exponential path to `u`).
pub fn delta_tau(u: &Unitary, path: Option<&UnitaryPath>, cfg: &Config) -> Result<DeltaTau> {
    let d = u.dim();
    let value = match path {
        Some(p) => {
            if p.start().dist(&Unitary::identity(d)) > CLOSURE_TOL || p.end().dist(u) > CLOSURE_TOL {
                return Err(Error::invalid("path must run from 1 to u"));
            }
            p.raw_trace_winding()
        }
        None => unitary_log(u, 0.0, cfg.branch_guard)?.tau(),
    };
    Ok(DeltaTau { value, modulus_denominator: d as u64 })
}

/// Primes `p` for which the truncation has exactly one factor divisible by
/// `p` and that factor is a power of `p`.
pub fn finite_primes(trunc: &TruncatedUHF) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::new();
    for &q in trunc.factors() {
        let mut m = q as u64;
        let mut p = 2;
        while m > 1 {
            if m % p == 0 {
                if !primes.contains(&p) {
                    primes.push(p);
                }
                while m % p == 0 {
                    m /= p;
                }
            }
            p += 1;
        }
    }
    primes.sort_unstable();
    primes.retain(|&p| {
        let hits: Vec<usize> = trunc.factors().iter().copied().filter(|&q| q as u64 % p == 0).collect();
        hits.len() == 1 && crate::actions::theta_block(trunc, p).is_ok()
    });
    primes
}

/// Full record of one pair invariant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairInvariant {
    pub prime: u64,
    /// Factor carrying `M_theta(p)`.
    pub block: usize,
    /// Trace winding of the path from 1 to `x` (before reduction).
    pub winding: K0Value,
    /// Signed reduction in `Z / theta Z`.
    pub residue: K0Residue,
    /// Certified bound on `sup_t ||[h(t), a]||` over unitaries `a` of the block.
    pub commutation_bound: f64,
    /// Upper bound on `||[x, a]||` over unitaries `a` of the block.
    pub x_commutator: f64,
}

fn prime_block(trunc: &TruncatedUHF, p: u64) -> Result<(usize, u64)> {
    if !is_prime(p) {
        return Err(Error::NotPrime { value: p });
    }
    let k = crate::actions::theta_block(trunc, p)?;
    Ok((k, trunc.factors()[k] as u64))
}

fn finish(
    p: u64,
    block: usize,
    theta: u64,
    tr: f64,
    d: usize,
    commutation_bound: f64,
    x_commutator: f64,
    cfg: &Config,
) -> Result<PairInvariant> {
    if x_commutator >= cfg.delta0 {
        return Err(Error::CommutationFailure {
            detail: format!("||[x, a]|| bound {x_commutator:.3e} is not below delta0 = {}", cfg.delta0),
        });
    }
    if commutation_bound >= 0.5 {
        return Err(Error::CommutationFailure {
            detail: format!("path commutator bound {commutation_bound:.3e} is not below 1/2"),
        });
    }
    let (n, res) = snap(tr);
    if res > cfg.lattice_tol {
        return Err(Error::NotOnLattice { value: tr / d as f64, residual: res / d as f64 });
    }
    let winding = K0Value::new(n, d as u64);
    let residue = k0_reduce(&winding, p, theta)?.scale(cfg.invariant_sign);
    Ok(PairInvariant { prime: p, block, winding, residue, commutation_bound, x_commutator })
}

/// Pair invariants of two product-type actions, computed factor by factor.
///
/// With `V_i`, `W_i` the implementers of `beta`, `alpha`, the intertwiners
/// `u_i = V_i W_i*` and `x = u_1 alpha_1(u_2) (u_2 alpha_2(u_1))*` are
/// tensor products `x = ⊗ x_k`. When `x_k` is scalar on the block of `p`,
/// `x` commutes with that block and the path
/// `h(t) = exp(2 pi i t sum_k 1 ⊗ c_k ⊗ 1)`, `c_k = (1/2 pi i) log x_k`,
/// stays in its commutant; its trace winding is `sum_k (d/q_k) Tr(c_k) / d`.
/// Falls back to the dense route when the block part is not scalar.
pub fn pair_invariant_report(
    beta: &ProductAction,
    alpha: &ProductAction,
    p: u64,
    cfg: &Config,
) -> Result<PairInvariant> {
    let trunc = alpha.trunc();
    if beta.trunc() != trunc {
        return Err(Error::SpecMismatch { detail: "actions live on different truncations".into() });
    }
    let (block, theta) = prime_block(trunc, p)?;
    let d = trunc.dim();
    let mut tr = 0.0;
    let mut x_block = None;
    for (k, &q) in trunc.factors().iter().enumerate() {
        let u = |i: usize| beta.local(i, k) * &alpha.local(i, k).adjoint();
        let (u1, u2) = (u(0), u(1));
        let a = &u1 * &alpha.local(0, k).conj_u(&u2);
        let b = &u2 * &alpha.local(1, k).conj_u(&u1);
        let xk = &a * &b.adjoint();
        if k == block {
            // Scalar logarithm: the path must stay scalar on the block.
            tr += d as f64 * turns(xk.matrix().normalized_trace());
            x_block = Some(xk);
        } else {
            let tk: f64 = unitary_eigenvalues(xk.matrix()).into_iter().map(turns).sum();
            tr += tk * (d / q) as f64;
        }
    }
    let xb = x_block.expect("block index is in range");
    let dev = crate::actions::scalar_deviation(xb.matrix());
    if dev > cfg.exact_tol.max(1e-10) {
        let dense = pair_invariants_dense(beta.action(), alpha.action(), trunc, &[p], cfg)?;
        return Ok(dense[0]);
    }
    // The path lies in the commutant of the block up to the scalar defect.
    finish(p, block, theta, tr, d, 4.0 * PI * dev, 2.0 * dev, cfg)
}

/// `[beta, alpha](p)` in `Z / theta(p) Z`.
pub fn pair_invariant(beta: &ProductAction, alpha: &ProductAction, p: u64, cfg: &Config) -> Result<K0Residue> {
    Ok(pair_invariant_report(beta, alpha, p, cfg)?.residue)
}

/// `[alpha] = [id, alpha]` for every prime with a finite block.
pub fn action_invariant(alpha: &ProductAction, cfg: &Config) -> Result<BTreeMap<u64, K0Residue>> {
    let id = ProductAction::identity(alpha.trunc());
    let mut out = BTreeMap::new();
    for p in finite_primes(alpha.trunc()) {
        out.insert(p, pair_invariant(&id, alpha, p, cfg)?);
    }
    Ok(out)
}

/// Pair invariants from dense implementers, for several primes sharing one
/// computation of `x`.
///
/// For each block, `x` is split as `x = y x_c` with `x_c` the polar part of
/// the conditional expectation of `x` onto the block's commutant; the path
/// `h(t) = exp(2 pi i t b) exp(2 pi i t c)` with `b = log y`, `c = log x_c`
/// (both divided by `2 pi i`) runs from 1 to `x`. Since `c` lies in the
/// commutant, `||[h(t), a]|| <= 2 min(2, 2 pi ||b||)`, and the trace
/// winding of `h` is `tau(b) + tau(c)`.
pub fn pair_invariants_dense(
    beta: &Action,
    alpha: &Action,
    trunc: &TruncatedUHF,
    primes: &[u64],
    cfg: &Config,
) -> Result<Vec<PairInvariant>> {
    let d = trunc.dim();
    if beta.dim() != d || alpha.dim() != d {
        return Err(Error::DimMismatch { expected: d, found: alpha.dim().max(beta.dim()) });
    }
    let u = |i: usize| beta.implementer(i) * &alpha.implementer(i).adjoint();
    let (x, _) = kappa_unitary(&u(0), &u(1), alpha);
    let mut out = Vec::with_capacity(primes.len());
    for &p in primes {
        let (block, theta) = prime_block(trunc, p)?;
        let reduced = partial_trace(x.matrix(), trunc, block);
        let xc_small = polar_unitary(&reduced, cfg.singular_tol)?;
        let c_small = unitary_log_auto(&xc_small, 0.0)?;
        let xc = Unitary::new_unchecked(embed_with_identity(xc_small.matrix(), trunc, block));
        let y = &x * &xc.adjoint();
        let x_comm = 2.0 * (x.matrix() - &embed_with_identity(&reduced, trunc, block)).op_norm();
        let y_vals = unitary_eigenvalues(y.matrix());
        let b_phases: Vec<f64> = y_vals.iter().map(|&z| turns(z)).collect();
        let b_norm = b_phases.iter().fold(0.0f64, |m, t| m.max(t.abs()));
        let tr = b_phases.iter().sum::<f64>() + d as f64 * c_small.tau();
        let bound = 2.0 * (2.0f64).min(2.0 * PI * b_norm);
        out.push(finish(p, block, theta, tr, d, bound, x_comm, cfg)?);
    }
    Ok(out)
}

/// Raw `x` for a pair of actions (exposed for diagnostics and tests).
pub fn pair_x(beta: &Action, alpha: &Action) -> Unitary {
    let u = |i: usize| beta.implementer(i) * &alpha.implementer(i).adjoint();
    kappa_unitary(&u(0), &u(1), alpha).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{clock, coboundary, make_model_action, shift, FactorGen, ModelSpec};
    use crate::algebra::{cis_turns, expm_sa, CMatrix, SelfAdjoint};
    use crate::random::{haar_unitary, random_self_adjoint, rng_from_seed};
    use proptest::prelude::*;

    fn cfg() -> Config {
        Config::default()
    }

    #[test]
    fn scalar_and_diagonal_loops() {
        let c = cfg();
        let p = UnitaryPath::constant(&Unitary::identity(3));
        assert_eq!(winding_tau(&p, &c).unwrap().value.numerator, 0);
        let p = UnitaryPath::sample(8, |t| Unitary::scalar(4, cis_turns(t))).unwrap();
        assert_eq!(winding_tau(&p, &c).unwrap().value, K0Value::new(4, 4));
        let p = UnitaryPath::sample(8, |t| {
            Unitary::new_unchecked(CMatrix::from_diag(&[cis_turns(t), C64::new(1.0, 0.0)]))
        })
        .unwrap();
        // Oracle: winding of the determinant t -> e^{2 pi i t}, divided by d.
        let w = winding_tau(&p, &c).unwrap();
        assert_eq!(w.value.as_fraction(), "1/2");
        let open = UnitaryPath::sample(4, |t| Unitary::scalar(2, cis_turns(0.3 * t))).unwrap();
        assert!(winding_tau(&open, &c).is_err());
    }

    /// The commutator multiplied out entrywise; for clock and shift it is the
    /// scalar `omega`, whose logarithm has trace `q * (1/q)`.
    fn commutator_scalar(q: usize) -> C64 {
        let (u, v) = (clock(q).into_matrix(), shift(q).into_matrix());
        let mul = |a: &CMatrix, b: &CMatrix| {
            CMatrix::from_fn(q, |i, j| (0..q).map(|k| a.get(i, k) * b.get(k, j)).sum())
        };
        let x = mul(&mul(&u, &v), &mul(&u.adjoint(), &v.adjoint()));
        let c = x.get(0, 0);
        assert!((&x - &CMatrix::scalar(q, c)).max_abs() < 1e-13);
        c
    }

    #[test]
    fn clock_shift_bott_is_one() {
        let c = cfg();
        for q in [5, 7, 9, 11] {
            let (u, v) = (clock(q), shift(q));
            assert_eq!(bott(&u, &v, &c).unwrap(), 1, "q = {q}");
            let c0 = commutator_scalar(q);
            assert!((q as f64 * turns(c0) - 1.0).abs() < 1e-12);
            assert_eq!(bott(&u, &v.adjoint(), &c).unwrap(), -1);
            assert_eq!(bott(&v, &u, &c).unwrap(), -1);
        }
        let mut rng = rng_from_seed(9);
        let h = random_self_adjoint(5, 0.4, &mut rng);
        let a = expm_sa(&h);
        let b = expm_sa(&h.scale(-2.0));
        assert_eq!(bott(&a, &b, &c).unwrap(), 0);
    }

    #[test]
    fn bott_antisymmetric_on_random_almost_commuting_pairs() {
        let c = cfg();
        let mut rng = rng_from_seed(10);
        for _ in 0..20 {
            let q = 7;
            let u0 = haar_unitary(q, &mut rng);
            let v = u0.conj_u(&clock(q));
            let w = u0.conj_u(&shift(q));
            let noise = expm_sa(&random_self_adjoint(q, 0.02, &mut rng));
            let w = &w * &noise;
            let (b1, b2) = (bott(&v, &w, &c).unwrap(), bott(&w, &v, &c).unwrap());
            assert_eq!(b1, -b2);
            assert_eq!(b1, 1);
        }
    }

    #[test]
    fn kappa_on_clock_shift_pair() {
        let c = cfg();
        let act = Action::trivial(7);
        let (u1, u2) = (clock(7), shift(7));
        let k = kappa_fast(&u1, &u2, &act, &c).unwrap();
        assert_eq!(k.integer_form, 1);
        assert_eq!(k.value.as_fraction(), "1/7");
        assert!((k.defect - (cis_turns(1.0 / 7.0) - 1.0).norm()).abs() < 1e-12);
        let h1 = UnitaryPath::exp_path(&unitary_log(&u1, 0.0, 1e-8).unwrap(), None);
        let h2 = UnitaryPath::exp_path(&unitary_log(&u2, 0.0, 1e-8).unwrap(), None);
        let kl = kappa_loop(&u1, &u2, &act, &h1, &h2, &c).unwrap();
        assert_eq!(kl.integer_form, 1);
        let json = serde_json::to_value(k).unwrap();
        assert_eq!(json["integer"], 1);
        assert_eq!(json["tau_value"], "1/7");
        let coc = Cocycle::new(u1, u2, &act);
        assert!(!admissible(&coc, &act, &c).unwrap());
        assert!(admissible(&Cocycle::trivial(7), &act, &c).unwrap());
    }

    #[test]
    fn kappa_trivial_and_coboundary() {
        let c = cfg();
        let mut rng = rng_from_seed(11);
        let act = Action::new(haar_unitary(6, &mut rng), Unitary::identity(6), 1e-10).unwrap();
        let one = Unitary::identity(6);
        assert_eq!(kappa_fast(&one, &one, &act, &c).unwrap().integer_form, 0);
        let h1 = UnitaryPath::constant(&one);
        assert_eq!(kappa_loop(&one, &one, &act, &h1, &h1, &c).unwrap().integer_form, 0);
        let v = haar_unitary(6, &mut rng);
        let cob = coboundary(&v, &act);
        assert!(admissible(&cob, &act, &c).unwrap());
    }

    #[test]
    fn kappa_fast_agrees_with_loop_on_perturbed_coboundaries() {
        let c = cfg();
        let mut rng = rng_from_seed(12);
        for _ in 0..10 {
            let d = 6;
            let w1 = haar_unitary(d, &mut rng);
            let act = Action::new(w1.clone(), w1.pow(2), 1e-10).unwrap();
            let v = expm_sa(&random_self_adjoint(d, 0.08, &mut rng));
            let cob = coboundary(&v, &act);
            let u2 = &cob.u[1] * &expm_sa(&random_self_adjoint(d, 0.05, &mut rng));
            let u1 = cob.u[0].clone();
            let kf = kappa_fast(&u1, &u2, &act, &c).unwrap();
            let l1 = unitary_log_auto(&u1, 1e-8).unwrap();
            let l2 = unitary_log_auto(&u2, 1e-8).unwrap();
            let h1 = UnitaryPath::exp_path(&l1, None);
            let h2 = UnitaryPath::exp_path(&l2, None);
            let kl = kappa_loop(&u1, &u2, &act, &h1, &h2, &c).unwrap();
            assert_eq!(kf.integer_form, kl.integer_form);
        }
    }

    #[test]
    fn delta_tau_examples_and_additivity() {
        let c = cfg();
        let d0 = delta_tau(&Unitary::identity(3), None, &c).unwrap();
        assert_eq!(d0.canonical(), 0.0);
        let u = Unitary::scalar(2, cis_turns(1.0 / 3.0));
        let dt = delta_tau(&u, None, &c).unwrap();
        assert!((dt.value - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(dt.modulus_denominator, 2);
        let mut rng = rng_from_seed(13);
        for _ in 0..20 {
            let a = haar_unitary(5, &mut rng);
            let b = haar_unitary(5, &mut rng);
            let sum = DeltaTau {
                value: delta_tau(&a, None, &c).unwrap().value + delta_tau(&b, None, &c).unwrap().value,
                modulus_denominator: 5,
            };
            assert!(delta_tau(&(&a * &b), None, &c).unwrap().distance(&sum) < 1e-10);
        }
        let h = random_self_adjoint(3, 2.3, &mut rng);
        let p = UnitaryPath::exp_path(&h, None);
        let along = delta_tau(p.end(), Some(&p), &c).unwrap();
        assert!((along.value - h.tau()).abs() < 1e-10);
    }

    #[test]
    fn power_relation_on_clock_shift_pair() {
        let c = cfg();
        let q = 61;
        let act = Action::trivial(q);
        let (u1, u2) = (clock(q), shift(q));
        assert_eq!(kappa_fast(&u1, &u2, &act, &c).unwrap().integer_form, 1);
        for (m, n) in [(2u32, 2u32), (2, 3), (3, 3)] {
            let (a, b) = power_pair(&u1, &u2, &act, m, n);
            let k = kappa_fast(&a, &b, &act.powers(m as i64, n as i64), &c).unwrap();
            assert_eq!(k.integer_form, (m * n) as i64);
        }
    }

    fn model(f2: u64, f3: u64, factors: Vec<usize>) -> ProductAction {
        let trunc = TruncatedUHF::new(factors).unwrap();
        let spec = ModelSpec { f: [(2, f2), (3, f3)].into_iter().collect(), ..Default::default() };
        make_model_action(&spec, &trunc).unwrap()
    }

    #[test]
    fn model_invariant_is_f() {
        let c = cfg();
        for f2 in 0..2 {
            for f3 in 0..3 {
                let a = model(f2, f3, vec![2, 3, 5, 5]);
                let inv = action_invariant(&a, &c).unwrap();
                assert_eq!(inv.keys().copied().collect::<Vec<_>>(), vec![2, 3]);
                assert_eq!(inv[&2].value, f2);
                assert_eq!(inv[&3].value, f3);
            }
        }
    }

    #[test]
    fn dense_route_matches_factorized_route() {
        let c = cfg();
        let a = model(1, 2, vec![2, 3, 5]);
        let b = model(0, 1, vec![2, 3, 5]);
        let dense = pair_invariants_dense(b.action(), a.action(), a.trunc(), &[2, 3], &c).unwrap();
        for inv in dense {
            let fact = pair_invariant_report(&b, &a, inv.prime, &c).unwrap();
            assert_eq!(inv.residue, fact.residue);
            assert!(inv.commutation_bound < 1e-8);
        }
        let same = pair_invariant(&a, &a, 3, &c).unwrap();
        assert_eq!(same.value, 0);
    }

    #[test]
    fn dense_route_handles_non_scalar_x() {
        // A small twist inside the 3-block makes x non-scalar but keeps it
        // close to the block's commutant.
        let c = cfg();
        let mut rng = rng_from_seed(15);
        let a = model(0, 2, vec![2, 3, 5]);
        let trunc = a.trunc().clone();
        let small = random_self_adjoint(3, 0.001, &mut rng);
        let tw = expm_sa(&SelfAdjoint::from_hermitian_part(&trunc.embed_factor(small.matrix(), 1).unwrap()));
        let w1 = &tw * a.action().implementer(0);
        let beta = Action::new_unchecked(w1, a.action().implementer(1).clone());
        let inv = pair_invariants_dense(&beta, a.action(), &trunc, &[3], &c).unwrap();
        assert!(inv[0].x_commutator > 1e-6);
        assert!(inv[0].commutation_bound > 1e-6 && inv[0].commutation_bound < 0.5);
        let plain = pair_invariants_dense(a.action(), a.action(), &trunc, &[3], &c).unwrap();
        assert_eq!(inv[0].residue, plain[0].residue);
    }

    #[test]
    fn finite_primes_of_truncations() {
        assert_eq!(finite_primes(&TruncatedUHF::new(vec![2, 3, 5, 5, 5]).unwrap()), vec![2, 3]);
        assert_eq!(finite_primes(&TruncatedUHF::new(vec![4, 3, 6]).unwrap()), Vec::<u64>::new());
        assert_eq!(finite_primes(&TruncatedUHF::new(vec![9, 2]).unwrap()), vec![2, 3]);
    }

    fn random_gen(q: usize, rng: &mut crate::random::TestRng) -> FactorGen {
        use rand::Rng;
        let power = rng.gen_range(0..q as i64);
        if rng.gen_bool(0.5) { FactorGen::Clock { power } } else { FactorGen::Shift { power } }
    }

    fn random_product(factors: &[usize], rng: &mut crate::random::TestRng) -> ProductAction {
        let trunc = TruncatedUHF::new(factors.to_vec()).unwrap();
        let g1 = factors.iter().map(|&q| random_gen(q, rng)).collect();
        let g2 = factors.iter().map(|&q| random_gen(q, rng)).collect();
        ProductAction::new(trunc, g1, g2).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn additivity_on_product_triples(seed in 0u64..10_000) {
            let c = cfg();
            let mut rng = rng_from_seed(seed);
            let factors = [4, 3, 5, 5];
            let x = random_product(&factors, &mut rng);
            let y = random_product(&factors, &mut rng);
            let z = random_product(&factors, &mut rng);
            for p in [2, 3] {
                let lhs = pair_invariant(&z, &x, p, &c).unwrap();
                let rhs = pair_invariant(&z, &y, p, &c).unwrap().add(&pair_invariant(&y, &x, p, &c).unwrap());
                prop_assert_eq!(lhs, rhs);
            }
        }
    }
}
