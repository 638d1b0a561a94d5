//! Z²-actions by inner automorphisms on a truncation, cocycles,
//! coboundaries, perturbed actions and the model actions `gamma^f`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::algebra::{cis_turns, CMatrix, Projection, Unitary, C64, ONE, ZERO};
use crate::error::{Error, Result};
use crate::uhf::{is_prime, SupernaturalNumber, TruncatedUHF};

/// Lattice point of Z².
pub type Z2 = (i64, i64);

pub const XI1: Z2 = (1, 0);
pub const XI2: Z2 = (0, 1);

/// `diag(1, w, .., w^{q-1})`, `w = exp(2 pi i / q)`.
pub fn clock(q: usize) -> Unitary {
    let d: Vec<C64> = (0..q).map(|j| cis_turns(j as f64 / q as f64)).collect();
    Unitary::new_unchecked(CMatrix::from_diag(&d))
}

/// Cyclic shift `e_j -> e_{j+1}`: ones on the subdiagonal and top-right.
pub fn shift(q: usize) -> Unitary {
    Unitary::new_unchecked(CMatrix::from_fn(q, |i, j| if i == (j + 1) % q { ONE } else { ZERO }))
}

fn one() -> i64 {
    1
}

/// Per-factor implementing unitary of a product-type generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FactorGen {
    Id,
    Clock {
        #[serde(default = "one")]
        power: i64,
    },
    Shift {
        #[serde(default = "one")]
        power: i64,
    },
    Dense {
        matrix: CMatrix,
    },
}

impl FactorGen {
    pub fn local_unitary(&self, q: usize, tol: f64) -> Result<Unitary> {
        Ok(match self {
            FactorGen::Id => Unitary::identity(q),
            FactorGen::Clock { power } => clock(q).pow(*power),
            FactorGen::Shift { power } => shift(q).pow(*power),
            FactorGen::Dense { matrix } => {
                if matrix.dim() != q {
                    return Err(Error::DimMismatch { expected: q, found: matrix.dim() });
                }
                Unitary::new(matrix.clone(), tol)?
            }
        })
    }

    /// Exponents `(c, s)` with the generator equal to `clock^c shift^s` up to
    /// a scalar, when it is of that symbolic form.
    pub fn clock_shift_powers(&self) -> Option<(i64, i64)> {
        match self {
            FactorGen::Id => Some((0, 0)),
            FactorGen::Clock { power } => Some((*power, 0)),
            FactorGen::Shift { power } => Some((0, *power)),
            FactorGen::Dense { .. } => None,
        }
    }
}

/// Z²-action given by two inner automorphisms `Ad(W_1)`, `Ad(W_2)`.
#[derive(Clone, Debug)]
pub struct Action {
    w: [Unitary; 2],
}

impl Action {
    /// Checks that `Ad W_1` and `Ad W_2` commute: `W_1 W_2 W_1* W_2*` must be
    /// scalar within `tol`.
    pub fn new(w1: Unitary, w2: Unitary, tol: f64) -> Result<Self> {
        if w1.dim() != w2.dim() {
            return Err(Error::DimMismatch { expected: w1.dim(), found: w2.dim() });
        }
        let a = Action { w: [w1, w2] };
        let dev = a.commutation_defect();
        if dev > tol {
            return Err(Error::CommutationFailure {
                detail: format!("generators do not commute: group commutator is {dev:.3e} from scalar"),
            });
        }
        Ok(a)
    }

    pub(crate) fn new_unchecked(w1: Unitary, w2: Unitary) -> Self {
        Action { w: [w1, w2] }
    }

    pub fn trivial(d: usize) -> Self {
        Action { w: [Unitary::identity(d), Unitary::identity(d)] }
    }

    pub fn dim(&self) -> usize {
        self.w[0].dim()
    }

    /// Implementing unitary of generator `i` (0 or 1).
    pub fn implementer(&self, i: usize) -> &Unitary {
        &self.w[i]
    }

    /// Distance of `W_1 W_2 W_1* W_2*` from the nearest scalar unitary.
    pub fn commutation_defect(&self) -> f64 {
        let g = &(&self.w[0] * &self.w[1]) * &(&self.w[0].adjoint() * &self.w[1].adjoint());
        scalar_deviation(g.matrix())
    }

    /// `W_1^{n_1} W_2^{n_2}`.
    pub fn implementer_at(&self, n: Z2) -> Unitary {
        &self.w[0].pow(n.0) * &self.w[1].pow(n.1)
    }

    /// `alpha_{xi_i}(a)`.
    pub fn apply_gen(&self, i: usize, a: &CMatrix) -> CMatrix {
        self.w[i].conj(a)
    }

    pub fn apply_gen_u(&self, i: usize, a: &Unitary) -> Unitary {
        self.w[i].conj_u(a)
    }

    /// `alpha_n(a)`.
    pub fn apply(&self, n: Z2, a: &CMatrix) -> CMatrix {
        if n == (0, 0) {
            return a.clone();
        }
        self.implementer_at(n).conj(a)
    }

    pub fn apply_u(&self, n: Z2, a: &Unitary) -> Unitary {
        Unitary::new_unchecked(self.apply(n, a.matrix()))
    }

    /// The action with generators `alpha_{xi_1}^m`, `alpha_{xi_2}^n`.
    pub fn powers(&self, m: i64, n: i64) -> Action {
        Action { w: [self.w[0].pow(m), self.w[1].pow(n)] }
    }

    /// `Ad(v) ∘ alpha ∘ Ad(v)^{-1}`.
    pub fn conjugate_by(&self, v: &Unitary) -> Action {
        Action { w: [v.conj_u(&self.w[0]), v.conj_u(&self.w[1])] }
    }
}

/// `||x - c||` for the unit scalar `c` closest to the normalised trace of `x`.
pub fn scalar_deviation(x: &CMatrix) -> f64 {
    let t = x.normalized_trace();
    let c = if t.norm() > 1e-300 { t / t.norm() } else { ONE };
    (x - &CMatrix::scalar(x.dim(), c)).op_norm()
}

/// Product-type action: each generator is a tensor product of per-factor
/// unitaries.
#[derive(Clone, Debug)]
pub struct ProductAction {
    trunc: TruncatedUHF,
    gens: [Vec<FactorGen>; 2],
    locals: [Vec<Unitary>; 2],
    action: Action,
}

/// Action spec JSON: `{"trunc":{"factors":[..]},"gen1":[..],"gen2":[..]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub trunc: TruncatedUHF,
    pub gen1: Vec<FactorGen>,
    pub gen2: Vec<FactorGen>,
}

/// Tolerance for the per-factor commutation-up-to-scalar check.
const FACTOR_COMMUTATION_TOL: f64 = 1e-9;

impl ProductAction {
    pub fn new(trunc: TruncatedUHF, gen1: Vec<FactorGen>, gen2: Vec<FactorGen>) -> Result<Self> {
        for g in [&gen1, &gen2] {
            if g.len() != trunc.len() {
                return Err(Error::SpecMismatch {
                    detail: format!("{} generator entries for {} factors", g.len(), trunc.len()),
                });
            }
        }
        let mut locals: [Vec<Unitary>; 2] = [Vec::new(), Vec::new()];
        for (i, g) in [&gen1, &gen2].into_iter().enumerate() {
            for (k, fg) in g.iter().enumerate() {
                locals[i].push(fg.local_unitary(trunc.factors()[k], 1e-10)?);
            }
        }
        for k in 0..trunc.len() {
            let (a, b) = (&locals[0][k], &locals[1][k]);
            let g = &(a * b) * &(&a.adjoint() * &b.adjoint());
            let dev = scalar_deviation(g.matrix());
            if dev > FACTOR_COMMUTATION_TOL {
                return Err(Error::SpecMismatch {
                    detail: format!("factor {k}: generators do not commute up to a scalar ({dev:.3e})"),
                });
            }
        }
        let w1 = Unitary::new_unchecked(trunc.embed_product(&mats(&locals[0]))?);
        let w2 = Unitary::new_unchecked(trunc.embed_product(&mats(&locals[1]))?);
        Ok(ProductAction { trunc, gens: [gen1, gen2], locals, action: Action::new_unchecked(w1, w2) })
    }

    pub fn from_spec(spec: &ActionSpec) -> Result<Self> {
        ProductAction::new(spec.trunc.clone(), spec.gen1.clone(), spec.gen2.clone())
    }

    pub fn to_spec(&self) -> ActionSpec {
        ActionSpec { trunc: self.trunc.clone(), gen1: self.gens[0].clone(), gen2: self.gens[1].clone() }
    }

    pub fn identity(trunc: &TruncatedUHF) -> Self {
        let ids = vec![FactorGen::Id; trunc.len()];
        ProductAction::new(trunc.clone(), ids.clone(), ids).expect("identity action is valid")
    }

    pub fn trunc(&self) -> &TruncatedUHF {
        &self.trunc
    }

    pub fn gens(&self, i: usize) -> &[FactorGen] {
        &self.gens[i]
    }

    /// Per-factor unitary of generator `i` on factor `k`.
    pub fn local(&self, i: usize, k: usize) -> &Unitary {
        &self.locals[i][k]
    }

    pub fn action(&self) -> &Action {
        &self.action
    }

    pub fn dim(&self) -> usize {
        self.trunc.dim()
    }

    /// Restriction to the listed factors (a product action on the tensor
    /// product of those factors, in the given order).
    pub fn restrict(&self, factors: &[usize]) -> Result<ProductAction> {
        let sub = self.trunc.sub(factors)?;
        let g1 = factors.iter().map(|&k| self.gens[0][k].clone()).collect();
        let g2 = factors.iter().map(|&k| self.gens[1][k].clone()).collect();
        ProductAction::new(sub, g1, g2)
    }

    /// Replace the generators on factor `k`.
    pub fn with_factor(&self, k: usize, g1: FactorGen, g2: FactorGen) -> Result<ProductAction> {
        let mut a = self.gens[0].clone();
        let mut b = self.gens[1].clone();
        a[k] = g1;
        b[k] = g2;
        ProductAction::new(self.trunc.clone(), a, b)
    }

    /// Scalar `c_k` with `w1_k w2_k = c_k w2_k w1_k` on factor `k`.
    pub fn factor_commutator_scalar(&self, k: usize) -> C64 {
        let (a, b) = (&self.locals[0][k], &self.locals[1][k]);
        let g = &(a * b) * &(&a.adjoint() * &b.adjoint());
        let t = g.matrix().normalized_trace();
        t / t.norm()
    }
}

fn mats(us: &[Unitary]) -> Vec<CMatrix> {
    us.iter().map(|u| u.matrix().clone()).collect()
}

/// Pair `(u_1, u_2)` of unitaries with its recorded cocycle defect
/// `||u_1 alpha_1(u_2) - u_2 alpha_2(u_1)||`.
#[derive(Clone, Debug)]
pub struct Cocycle {
    pub u: [Unitary; 2],
    pub defect: f64,
}

/// Defects at or below this count as exact cocycles.
pub const EXACT_COCYCLE_TOL: f64 = 1e-9;
/// Largest defect accepted where an exact cocycle is required.
pub const COCYCLE_INPUT_TOL: f64 = 1e-6;

impl Cocycle {
    pub fn new(u1: Unitary, u2: Unitary, action: &Action) -> Self {
        let defect = cocycle_defect(&u1, &u2, action);
        Cocycle { u: [u1, u2], defect }
    }

    pub fn trivial(d: usize) -> Self {
        Cocycle { u: [Unitary::identity(d), Unitary::identity(d)], defect: 0.0 }
    }

    pub fn is_exact(&self) -> bool {
        self.defect <= EXACT_COCYCLE_TOL
    }

    pub fn is_almost(&self) -> bool {
        self.defect < 1.0
    }

    pub fn dim(&self) -> usize {
        self.u[0].dim()
    }
}

/// `u_1 alpha_1(u_2)` and `u_2 alpha_2(u_1)`.
pub fn cocycle_corners(u1: &Unitary, u2: &Unitary, action: &Action) -> (Unitary, Unitary) {
    let a = u1 * &action.apply_gen_u(0, u2);
    let b = u2 * &action.apply_gen_u(1, u1);
    (a, b)
}

pub fn cocycle_defect(u1: &Unitary, u2: &Unitary, action: &Action) -> f64 {
    let (a, b) = cocycle_corners(u1, u2, action);
    a.dist(&b)
}

/// `u_i = v alpha_i(v*)`.
pub fn coboundary(v: &Unitary, action: &Action) -> Cocycle {
    let vs = v.adjoint();
    let u1 = v * &action.apply_gen_u(0, &vs);
    let u2 = v * &action.apply_gen_u(1, &vs);
    Cocycle::new(u1, u2, action)
}

/// Walks from 0 to `n` along unit steps, first in direction `first` then in
/// the other one, accumulating `u_{m + xi} = u_m alpha_m(u_xi)`.
fn staircase(c: &Cocycle, action: &Action, n: Z2, first: usize) -> Unitary {
    let d = c.dim();
    let mut u = Unitary::identity(d);
    let mut w = Unitary::identity(d);
    let order = if first == 0 { [0usize, 1] } else { [1, 0] };
    for &i in &order {
        let steps = if i == 0 { n.0 } else { n.1 };
        let wi = action.implementer(i);
        for _ in 0..steps.unsigned_abs() {
            if steps > 0 {
                // u_{m+xi} = u_m alpha_m(u_xi)
                u = &u * &w.conj_u(&c.u[i]);
                w = &w * wi;
            } else {
                // u_{m-xi} = u_m alpha_{m-xi}(u_xi)^*
                w = &w * &wi.adjoint();
                u = &u * &w.conj_u(&c.u[i]).adjoint();
            }
        }
    }
    u
}

/// `u_n` for the cocycle generated by `c`, checked against the reverse
/// staircase path.
pub fn extend_cocycle(c: &Cocycle, action: &Action, n: Z2) -> Result<Unitary> {
    let allowed = 10.0 * c.defect + EXACT_COCYCLE_TOL;
    if c.defect > COCYCLE_INPUT_TOL {
        return Err(Error::NotACocycle { discrepancy: c.defect, allowed: COCYCLE_INPUT_TOL });
    }
    let a = staircase(c, action, n, 0);
    if n.0 == 0 || n.1 == 0 {
        return Ok(a);
    }
    let b = staircase(c, action, n, 1);
    let discrepancy = a.dist(&b);
    if discrepancy > allowed {
        return Err(Error::NotACocycle { discrepancy, allowed });
    }
    Ok(a)
}

/// Perturbed action `Ad(u_i) ∘ alpha_i`.
pub fn perturb(action: &Action, c: &Cocycle) -> Result<Action> {
    if c.defect > COCYCLE_INPUT_TOL {
        return Err(Error::NotACocycle { discrepancy: c.defect, allowed: COCYCLE_INPUT_TOL });
    }
    let w1 = &c.u[0] * action.implementer(0);
    let w2 = &c.u[1] * action.implementer(1);
    let out = Action::new_unchecked(w1, w2);
    let allowed = 10.0 * c.defect + EXACT_COCYCLE_TOL;
    let dev = out.commutation_defect();
    if dev > allowed + action.commutation_defect() {
        return Err(Error::NotACocycle { discrepancy: dev, allowed });
    }
    Ok(out)
}

/// Input for the model actions: `f(p)` per prime and the split of the
/// remaining factors into `L1` and `L2`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub f: BTreeMap<u64, u64>,
    #[serde(rename = "L1", default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<Vec<usize>>,
    #[serde(rename = "L2", default, skip_serializing_if = "Option::is_none")]
    pub l2: Option<Vec<usize>>,
    /// Optional algebra description, truncated at the CLI budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sn: Option<SupernaturalNumber>,
    /// Optional explicit truncation (takes precedence over `sn`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trunc: Option<TruncatedUHF>,
}

fn is_power_of(q: usize, p: u64) -> bool {
    let mut q = q as u64;
    if q < p {
        return false;
    }
    while q % p == 0 {
        q /= p;
    }
    q == 1
}

/// Which factor of `trunc` carries `M_{theta(p)}`: the unique factor whose
/// size is a power of `p`.
pub fn theta_block(trunc: &TruncatedUHF, p: u64) -> Result<usize> {
    let hits: Vec<usize> = (0..trunc.len()).filter(|&k| is_power_of(trunc.factors()[k], p)).collect();
    match hits.as_slice() {
        [k] => Ok(*k),
        [] => Err(Error::NotEmbeddable { detail: format!("no factor of the truncation is a power of {p}") }),
        _ => Err(Error::NotEmbeddable {
            detail: format!("several factors are powers of {p}; theta({p}) is not finite at this stage"),
        }),
    }
}

/// Resolved partition of a truncation for a model action.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelPartition {
    /// Factor index -> value of `f` on it (nonzero entries only).
    pub lf: BTreeMap<usize, u64>,
    pub l1: Vec<usize>,
    pub l2: Vec<usize>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("model spec: {e}")))
    }

    /// Resolve `L_f`, `L1`, `L2` against a truncation.
    pub fn partition(&self, trunc: &TruncatedUHF) -> Result<ModelPartition> {
        let n = trunc.len();
        let mut lf = BTreeMap::new();
        for (&p, &val) in &self.f {
            if !is_prime(p) {
                return Err(Error::SpecMismatch { detail: format!("f is keyed by non-prime {p}") });
            }
            let k = theta_block(trunc, p).map_err(|e| Error::SpecMismatch { detail: e.to_string() })?;
            let theta = trunc.factors()[k] as u64;
            if val >= theta {
                return Err(Error::SpecMismatch { detail: format!("f({p}) = {val} is not below theta = {theta}") });
            }
            if val != 0 {
                lf.insert(k, val);
            }
        }
        let rest: Vec<usize> = (0..n).filter(|k| !lf.contains_key(k)).collect();
        let (l1, l2) = match (&self.l1, &self.l2) {
            (None, None) => {
                let l1 = rest.iter().step_by(2).copied().collect();
                let l2 = rest.iter().skip(1).step_by(2).copied().collect();
                (l1, l2)
            }
            (a, b) => {
                let l1 = a.clone().unwrap_or_default();
                let l2 = b.clone().unwrap_or_default();
                let mut seen = vec![0u8; n];
                for &k in l1.iter().chain(l2.iter()) {
                    if k >= n {
                        return Err(Error::SpecMismatch { detail: format!("factor index {k} out of range") });
                    }
                    seen[k] += 1;
                }
                if let Some(k) = (0..n).find(|&k| seen[k] > 1) {
                    return Err(Error::SpecMismatch { detail: format!("factor {k} is in both L1 and L2") });
                }
                if let Some(&k) = rest.iter().find(|&&k| seen[k] == 0) {
                    return Err(Error::SpecMismatch { detail: format!("factor {k} is in neither L1 nor L2") });
                }
                let keep = |v: Vec<usize>| v.into_iter().filter(|k| !lf.contains_key(k)).collect::<Vec<_>>();
                (keep(l1), keep(l2))
            }
        };
        Ok(ModelPartition { lf, l1, l2 })
    }

    /// Truncation named by the spec: explicit `trunc`, else `sn` at `budget`.
    pub fn resolve_trunc(&self, budget: Option<usize>) -> Result<TruncatedUHF> {
        if let Some(t) = &self.trunc {
            return Ok(t.clone());
        }
        match (&self.sn, budget) {
            (Some(sn), Some(b)) => crate::uhf::truncate(sn, b),
            (Some(_), None) => Err(Error::invalid("model spec names a supernatural number but no budget was given")),
            (None, _) => Err(Error::invalid("model spec needs \"trunc\" or \"sn\"")),
        }
    }
}

/// Model action `gamma^f`: generator 1 is `Ad(clock^{f(p)})` on `L_f`, the
/// identity on `L1 \ L_f` and `Ad(clock)` on `L2 \ L_f`; generator 2 is
/// `Ad(shift)` on `L_f` and `L1 \ L_f` and the identity on `L2 \ L_f`.
pub fn make_model_action(spec: &ModelSpec, trunc: &TruncatedUHF) -> Result<ProductAction> {
    let part = spec.partition(trunc)?;
    let n = trunc.len();
    let mut g1 = vec![FactorGen::Id; n];
    let mut g2 = vec![FactorGen::Id; n];
    for (&k, &val) in &part.lf {
        g1[k] = FactorGen::Clock { power: val as i64 };
        g2[k] = FactorGen::Shift { power: 1 };
    }
    for &k in &part.l1 {
        g2[k] = FactorGen::Shift { power: 1 };
    }
    for &k in &part.l2 {
        g1[k] = FactorGen::Clock { power: 1 };
    }
    ProductAction::new(trunc.clone(), g1, g2)
}

/// Projections witnessing outerness of `alpha_n` on `a` below `p`.
#[derive(Clone, Debug)]
pub struct OuternessWitness {
    pub factor: usize,
    pub projections: Vec<Projection>,
    /// `max_i ||p_i a alpha_n(p_i)||`.
    pub bound: f64,
}

/// Finds a factor on which `alpha_n` permutes a basis of minimal projections
/// without fixed points and on which neither `a` nor `p` is supported, and
/// splits `p` along that basis.
pub fn outerness_witness(
    action: &ProductAction,
    n: Z2,
    a: &CMatrix,
    p: &Projection,
    eps: f64,
) -> Result<OuternessWitness> {
    if n == (0, 0) {
        return Err(Error::invalid("outerness witness needs a nonzero group element"));
    }
    let trunc = action.trunc();
    for k in 0..trunc.len() {
        let q = trunc.factors()[k] as i64;
        let (Some((c1, s1)), Some((c2, s2))) =
            (action.gens(0)[k].clock_shift_powers(), action.gens(1)[k].clock_shift_powers())
        else {
            continue;
        };
        let c = (n.0 * c1 + n.1 * c2).rem_euclid(q);
        let s = (n.0 * s1 + n.1 * s2).rem_euclid(q);
        if c == 0 && s == 0 {
            continue;
        }
        // Off-factor support: a and p commute with all matrix units of factor k.
        if !supported_off(trunc, k, a) || !supported_off(trunc, k, p.matrix()) {
            continue;
        }
        // With s != 0 the standard basis is permuted; otherwise clock^c
        // permutes the Fourier basis. Either permutation must be fixed-point
        // free on every orbit, which holds since s (resp. c) is nonzero mod q.
        let basis = if s != 0 { standard_basis(q as usize) } else { fourier_basis(q as usize) };
        let alpha_n = action.action().implementer_at(n);
        let mut projections = Vec::new();
        let mut bound: f64 = 0.0;
        for e in &basis {
            let ek = trunc.embed_factor(e, k)?;
            let pi = p.matrix() * &ek;
            let val = (&(&pi * a) * &alpha_n.conj(&pi)).op_norm();
            bound = bound.max(val);
            projections.push(Projection::new_unchecked(pi));
        }
        if bound < eps {
            return Ok(OuternessWitness { factor: k, projections, bound });
        }
    }
    Err(Error::NoFreeTail)
}

fn standard_basis(q: usize) -> Vec<CMatrix> {
    (0..q).map(|j| CMatrix::from_fn(q, |a, b| if a == j && b == j { ONE } else { ZERO })).collect()
}

/// Rank-one projections onto the Fourier vectors `f_k = q^{-1/2} (w^{jk})_j`.
pub fn fourier_basis(q: usize) -> Vec<CMatrix> {
    (0..q)
        .map(|k| {
            let v: Vec<C64> = (0..q).map(|j| cis_turns((j * k) as f64 / q as f64) / (q as f64).sqrt()).collect();
            CMatrix::from_fn(q, |a, b| v[a] * v[b].conj())
        })
        .collect()
}

/// Whether `x` commutes with every matrix unit of factor `k`.
pub fn supported_off(trunc: &TruncatedUHF, k: usize, x: &CMatrix) -> bool {
    let q = trunc.factors()[k];
    let scale = x.max_abs().max(1.0);
    for i in 0..q {
        for j in 0..q {
            let e = CMatrix::from_fn(q, |a, b| if a == i && b == j { ONE } else { ZERO });
            let ek = trunc.embed_factor(&e, k).expect("index in range");
            if crate::algebra::commutator(&ek, x).max_abs() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{haar_unitary, random_self_adjoint, rng_from_seed};
    use crate::algebra::expm_sa;

    fn naive_mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
        let n = a.dim();
        CMatrix::from_fn(n, |i, j| (0..n).map(|k| a.get(i, k) * b.get(k, j)).sum())
    }

    #[test]
    fn clock_shift_q2() {
        assert!((clock(2).matrix() - &CMatrix::from_diag(&[ONE, C64::new(-1.0, 0.0)])).max_abs() < 1e-15);
        let s = shift(2);
        assert_eq!(s.matrix().get(0, 1), ONE);
        assert_eq!(s.matrix().get(1, 0), ONE);
        assert_eq!(s.matrix().get(0, 0), ZERO);
    }

    #[test]
    fn clock_shift_relation_q5() {
        let (u, v) = (clock(5), shift(5));
        let lhs = naive_mul(&naive_mul(v.matrix(), u.matrix()), &v.adjoint().into_matrix());
        let w = cis_turns(1.0 / 5.0);
        assert!((&lhs - &u.matrix().scale(w.conj())).max_abs() < 1e-14);
        for q in [3, 5, 8] {
            assert!(clock(q).pow(q as i64).dist_to_identity() < 1e-12);
            assert!(shift(q).pow(q as i64).dist_to_identity() < 1e-15);
        }
    }

    fn spec_2355() -> ModelSpec {
        ModelSpec { f: BTreeMap::from([(2, 1), (3, 0)]), l1: Some(vec![1, 2]), l2: Some(vec![3]), ..Default::default() }
    }

    #[test]
    fn model_action_example() {
        let t = TruncatedUHF::new(vec![2, 3, 5, 5]).unwrap();
        let a = make_model_action(&spec_2355(), &t).unwrap();
        let expect1 = t
            .embed_product(&[clock(2).into_matrix(), CMatrix::identity(3), CMatrix::identity(5), clock(5).into_matrix()])
            .unwrap();
        assert!((a.action().implementer(0).matrix() - &expect1).max_abs() < 1e-14);
        let expect2 = t
            .embed_product(&[shift(2).into_matrix(), shift(3).into_matrix(), shift(5).into_matrix(), CMatrix::identity(5)])
            .unwrap();
        assert!((a.action().implementer(1).matrix() - &expect2).max_abs() < 1e-14);
        assert!(a.action().commutation_defect() < 1e-9);
    }

    #[test]
    fn model_action_trivial_f() {
        let t = TruncatedUHF::new(vec![2, 3]).unwrap();
        let spec = ModelSpec { l1: Some(vec![0, 1]), l2: Some(vec![]), ..Default::default() };
        let a = make_model_action(&spec, &t).unwrap();
        assert!(a.action().implementer(0).dist_to_identity() < 1e-15);
        let s = t.embed_product(&[shift(2).into_matrix(), shift(3).into_matrix()]).unwrap();
        assert!((a.action().implementer(1).matrix() - &s).max_abs() < 1e-15);
    }

    #[test]
    fn model_spec_errors() {
        let t = TruncatedUHF::new(vec![2, 3, 5, 5]).unwrap();
        let bad_f = ModelSpec { f: BTreeMap::from([(2, 2)]), ..Default::default() };
        assert!(matches!(make_model_action(&bad_f, &t), Err(Error::SpecMismatch { .. })));
        let missing = ModelSpec { f: BTreeMap::from([(7, 1)]), ..Default::default() };
        assert!(matches!(make_model_action(&missing, &t), Err(Error::SpecMismatch { .. })));
        let uncovered = ModelSpec { l1: Some(vec![0]), l2: Some(vec![1]), ..Default::default() };
        assert!(matches!(make_model_action(&uncovered, &t), Err(Error::SpecMismatch { .. })));
        let twice = ModelSpec { l1: Some(vec![0, 1, 2]), l2: Some(vec![2, 3]), ..Default::default() };
        assert!(matches!(make_model_action(&twice, &t), Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn model_spec_json() {
        let s = ModelSpec::from_json(r#"{"f":{"2":1,"3":2},"L1":[2],"L2":[3,4]}"#).unwrap();
        assert_eq!(s.f[&3], 2);
        assert_eq!(s.l2, Some(vec![3, 4]));
        let spec: ActionSpec = serde_json::from_str(
            r#"{"trunc":{"factors":[2,3]},"gen1":[{"kind":"clock","power":1},{"kind":"id"}],"gen2":[{"kind":"shift"},{"kind":"shift"}]}"#,
        )
        .unwrap();
        let a = ProductAction::from_spec(&spec).unwrap();
        assert_eq!(a.dim(), 6);
    }

    #[test]
    fn noncommuting_spec_rejected() {
        let t = TruncatedUHF::new(vec![3]).unwrap();
        let mut rng = rng_from_seed(1);
        let m = haar_unitary(3, &mut rng).into_matrix();
        let r = ProductAction::new(t, vec![FactorGen::Dense { matrix: m }], vec![FactorGen::Shift { power: 1 }]);
        assert!(matches!(r, Err(Error::SpecMismatch { .. })));
    }

    #[test]
    fn apply_commutes_and_shifts_clock() {
        let t = TruncatedUHF::new(vec![2, 3, 5, 5]).unwrap();
        let a = make_model_action(&spec_2355(), &t).unwrap();
        let act = a.action();
        let mut rng = rng_from_seed(2);
        for _ in 0..20 {
            let x = crate::random::ginibre(150, &mut rng);
            let l = act.apply((1, 0), &act.apply((0, 1), &x));
            let r = act.apply((0, 1), &act.apply((1, 0), &x));
            assert!((&l - &r).max_abs() < 1e-9);
        }
        // Clock on the L_f factor (index 0) is moved by Ad(shift) to a scalar multiple.
        let c = t.embed_factor(clock(2).matrix(), 0).unwrap();
        let moved = act.apply((0, 1), &c);
        assert!((&moved + &c).max_abs() < 1e-12);
        assert_eq!(act.apply((0, 0), &c), c);
    }

    #[test]
    fn coboundary_and_extension() {
        let t = TruncatedUHF::new(vec![2, 3, 5]).unwrap();
        let a = make_model_action(&ModelSpec { f: BTreeMap::from([(2, 1)]), ..Default::default() }, &t).unwrap();
        let mut rng = rng_from_seed(3);
        let v = haar_unitary(30, &mut rng);
        let c = coboundary(&v, a.action());
        assert!(c.defect < 1e-9);
        let u23 = extend_cocycle(&c, a.action(), (2, 3)).unwrap();
        let expect = &v * &a.action().apply_u((2, 3), &v.adjoint());
        assert!(u23.dist(&expect) < 1e-8);
        let um = extend_cocycle(&c, a.action(), (-1, 2)).unwrap();
        let expect = &v * &a.action().apply_u((-1, 2), &v.adjoint());
        assert!(um.dist(&expect) < 1e-8);
        assert!(extend_cocycle(&c, a.action(), (1, 0)).unwrap().dist(&c.u[0]) < 1e-14);
        let c0 = coboundary(&Unitary::identity(30), a.action());
        assert!(c0.u[0].dist_to_identity() < 1e-15 && c0.u[1].dist_to_identity() < 1e-15);
    }

    #[test]
    fn extension_rejects_non_cocycle() {
        let act = Action::trivial(5);
        let c = Cocycle::new(clock(5), shift(5), &act);
        assert!(matches!(extend_cocycle(&c, &act, (1, 1)), Err(Error::NotACocycle { .. })));
    }

    #[test]
    fn perturb_by_coboundary_is_conjugation() {
        let t = TruncatedUHF::new(vec![2, 3, 5]).unwrap();
        let a = make_model_action(&ModelSpec { f: BTreeMap::from([(3, 2)]), ..Default::default() }, &t).unwrap();
        let mut rng = rng_from_seed(4);
        let v = haar_unitary(30, &mut rng);
        let c = coboundary(&v, a.action());
        let p = perturb(a.action(), &c).unwrap();
        let x = crate::random::ginibre(30, &mut rng);
        for n in [(1, 0), (0, 1), (2, -1)] {
            let lhs = p.apply(n, &x);
            let rhs = v.conj(&a.action().apply(n, &v.adjoint().conj(&x)));
            assert!((&lhs - &rhs).max_abs() < 1e-9);
        }
        // Perturbing back by the inverse cocycle v* alpha~(v) recovers alpha.
        let back = coboundary(&v.adjoint(), &p);
        let q = perturb(&p, &back).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let e = CMatrix::from_fn(30, |a, b| if a == i && b == j { ONE } else { ZERO });
                for g in 0..2 {
                    assert!((&q.apply_gen(g, &e) - &a.action().apply_gen(g, &e)).max_abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn perturb_small_coboundary() {
        let t = TruncatedUHF::new(vec![2, 3]).unwrap();
        let a = ProductAction::identity(&t);
        let mut rng = rng_from_seed(5);
        let v = expm_sa(&random_self_adjoint(6, 0.05, &mut rng));
        let c = coboundary(&v, a.action());
        assert!(perturb(a.action(), &c).is_ok());
        let same = perturb(a.action(), &Cocycle::trivial(6)).unwrap();
        assert!(same.implementer(0).dist_to_identity() < 1e-15);
    }

    #[test]
    fn outerness_witness_shift_tail() {
        let t = TruncatedUHF::new(vec![2, 3]).unwrap();
        let spec = ModelSpec { l1: Some(vec![0, 1]), l2: Some(vec![]), ..Default::default() };
        let a = make_model_action(&spec, &t).unwrap();
        let id = Projection::new_unchecked(CMatrix::identity(6));
        let w = outerness_witness(&a, (0, 1), &CMatrix::identity(6), &id, 1e-9).unwrap();
        assert_eq!(w.bound, 0.0);
        let mut sum = CMatrix::zeros(6);
        for p in &w.projections {
            sum = &sum + p.matrix();
        }
        assert!((&sum - &CMatrix::identity(6)).max_abs() < 1e-15);
        // Supported on the first factor: the witness moves to factor 1.
        let x = t.embed_factor(&shift(2).into_matrix(), 0).unwrap();
        let w = outerness_witness(&a, (0, 1), &x, &id, 1e-9).unwrap();
        assert_eq!(w.factor, 1);
        assert!(w.bound < 1e-12);
        assert!(outerness_witness(&a, (0, 0), &x, &id, 1e-9).is_err());
        assert!(matches!(outerness_witness(&a, (1, 0), &x, &id, 1e-9), Err(Error::NoFreeTail)));
    }

    #[test]
    fn outerness_witness_clock_direction_uses_fourier_basis() {
        let t = TruncatedUHF::new(vec![5]).unwrap();
        let spec = ModelSpec { l1: Some(vec![]), l2: Some(vec![0]), ..Default::default() };
        let a = make_model_action(&spec, &t).unwrap();
        let id = Projection::new_unchecked(CMatrix::identity(5));
        let w = outerness_witness(&a, (1, 0), &CMatrix::identity(5), &id, 1e-9).unwrap();
        assert!(w.bound < 1e-12);
    }
}
