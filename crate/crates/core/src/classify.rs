//! Invariant comparison, approximate matching of actions by coboundaries and
//! alternating Evans–Kishimoto rounds.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::actions::{coboundary, cocycle_corners, scalar_deviation, Action, Cocycle, ProductAction, EXACT_COCYCLE_TOL};
use crate::algebra::{polar_unitary, CMatrix, Unitary, C64};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::invariants::{finite_primes, kappa_fast, pair_invariant, pair_invariants_dense};
use crate::rohlin::{build_line_tower, vanish_cocycle, VanishReport};
use crate::uhf::{K0Residue, TruncatedUHF};
use crate::weyl::{factor_support, reduce_to};

/// Relative size below which a matrix entry counts as supported off a factor.
const SUPPORT_TOL: f64 = 1e-12;
/// Slack allowed when checking that round defects do not increase.
const MONOTONE_SLACK: f64 = 1e-12;
/// Largest order searched for the commutator scalar of the intertwiners.
const MAX_CORRECTION_ORDER: usize = 1 << 16;

/// `Ad(g) ∘ alpha ∘ Ad(g)*` for a product-type `alpha`.
#[derive(Clone, Debug)]
pub struct TwistedAction {
    base: ProductAction,
    conj: Option<Unitary>,
    action: Action,
}

impl TwistedAction {
    pub fn product(base: ProductAction) -> Self {
        let action = base.action().clone();
        TwistedAction { base, conj: None, action }
    }

    pub fn conjugated(base: ProductAction, g: Unitary) -> Result<Self> {
        if g.dim() != base.dim() {
            return Err(Error::DimMismatch { expected: base.dim(), found: g.dim() });
        }
        let action = base.action().conjugate_by(&g);
        Ok(TwistedAction { base, conj: Some(g), action })
    }

    pub fn base(&self) -> &ProductAction {
        &self.base
    }

    pub fn conj(&self) -> Option<&Unitary> {
        self.conj.as_ref()
    }

    pub fn action(&self) -> &Action {
        &self.action
    }

    pub fn trunc(&self) -> &TruncatedUHF {
        self.base.trunc()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// `Ad(v) ∘ self ∘ Ad(v)*`.
    pub fn conjugate_by(&self, v: &Unitary) -> TwistedAction {
        let g = match &self.conj {
            Some(g) => v * g,
            None => v.clone(),
        };
        let action = self.base.action().conjugate_by(&g);
        TwistedAction { base: self.base.clone(), conj: Some(g), action }
    }

    fn conj_or_identity(&self) -> Unitary {
        self.conj.clone().unwrap_or_else(|| Unitary::identity(self.dim()))
    }

    /// Invariant residues for `primes`; product actions use the factorized
    /// route, twisted ones the dense route.
    fn invariants(&self, primes: &[u64], cfg: &Config) -> Result<Vec<K0Residue>> {
        let id = ProductAction::identity(self.trunc());
        match &self.conj {
            None => primes.iter().map(|&p| pair_invariant(&id, &self.base, p, cfg)).collect(),
            Some(_) => Ok(pair_invariants_dense(id.action(), &self.action, self.trunc(), primes, cfg)?
                .into_iter()
                .map(|r| r.residue)
                .collect()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PrimeComparison {
    pub prime: u64,
    pub alpha: K0Residue,
    pub beta: K0Residue,
    pub equal: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct InvariantComparison {
    pub primes: Vec<PrimeComparison>,
    /// Number of primes where the invariants differ (the outer conjugacy
    /// criterion asks for finitely many; at a finite stage every count is
    /// finite, so the count itself is reported).
    pub mismatches: usize,
    pub all_equal: bool,
}

impl InvariantComparison {
    fn detail(&self) -> String {
        let bad: Vec<String> = self
            .primes
            .iter()
            .filter(|c| !c.equal)
            .map(|c| format!("p = {}: {} vs {} mod {}", c.prime, c.alpha.value, c.beta.value, c.alpha.modulus))
            .collect();
        bad.join("; ")
    }
}

/// Compares `[alpha](p)` and `[beta](p)` for the given primes (all primes
/// with a finite block when `primes` is `None`).
pub fn invariants_equal(
    alpha: &TwistedAction,
    beta: &TwistedAction,
    primes: Option<&[u64]>,
    cfg: &Config,
) -> Result<InvariantComparison> {
    if alpha.trunc() != beta.trunc() {
        return Err(Error::SpecMismatch { detail: "actions live on different truncations".into() });
    }
    let primes: Vec<u64> = match primes {
        Some(p) => p.to_vec(),
        None => finite_primes(alpha.trunc()),
    };
    let a = alpha.invariants(&primes, cfg)?;
    let b = beta.invariants(&primes, cfg)?;
    let cmp: Vec<PrimeComparison> = primes
        .iter()
        .zip(a.into_iter().zip(b))
        .map(|(&prime, (alpha, beta))| PrimeComparison { prime, alpha, beta, equal: alpha == beta })
        .collect();
    let mismatches = cmp.iter().filter(|c| !c.equal).count();
    Ok(InvariantComparison { primes: cmp, mismatches, all_equal: mismatches == 0 })
}

/// `max ||beta_i(a) - Ad(u_i) alpha_i(a)||` over `a` in `F` and `i = 1, 2`.
pub fn match_defect(alpha: &Action, c: &Cocycle, beta: &Action, f_set: &[CMatrix]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in f_set {
        for i in 0..2 {
            let lhs = beta.apply_gen(i, a);
            let rhs = c.u[i].conj(&alpha.apply_gen(i, a));
            worst = worst.max((&lhs - &rhs).op_norm());
        }
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct MatchReport {
    pub eps: f64,
    /// Measured `max ||beta_i(a) - Ad(u_i) alpha_i(a)||` over `F`.
    pub defect: f64,
    /// Commutator scalar of the raw intertwiners, in turns.
    pub lambda_turns: f64,
    pub kappa_corrections: usize,
    /// Order `l` of the commutator scalar when a correction was applied.
    pub correction_order: Option<usize>,
    pub correction_factors: Vec<usize>,
    /// `kappa` of the corrected intertwiner cocycle on its support.
    pub kappa_after: String,
    pub vanish: VanishReport,
}

/// An `alpha`-coboundary `u_i = v alpha_i(v*)` matching `beta` on `F`.
#[derive(Clone, Debug)]
pub struct Match {
    pub v: Unitary,
    pub cocycle: Cocycle,
    /// `v` in the frame of the base product action of `alpha`.
    pub base_v: Unitary,
    /// Factors carrying the vanished cocycle, in the base frame.
    pub cocycle_factors: Vec<usize>,
    pub report: MatchReport,
}

fn order_of_root_of_unity(lambda: C64) -> Option<usize> {
    let mut z = lambda;
    for l in 1..=MAX_CORRECTION_ORDER {
        if (z - C64::new(1.0, 0.0)).norm() < 1e-8 {
            return Some(l);
        }
        z *= lambda;
    }
    None
}

/// Finds an `alpha`-coboundary `{u_n}` with
/// `||beta_i(a) - Ad(u_i) alpha_i(a)|| < eps` for `a` in `F`.
///
/// The intertwiners `u_i = V_i W_i*` of the implementers satisfy
/// `Ad(u_i) alpha_i = beta_i` exactly and form a cocycle up to the scalar
/// `lambda = u_1 alpha_1(u_2) (u_2 alpha_2(u_1))*`. When `lambda` is a
/// nontrivial `l`-th root of unity, `u_1` is multiplied by
/// `y = sum_j conj(lambda)^j e_j` for a tower `e_j` of the second generator
/// on free factors, which gives `alpha_2(y) = lambda y` and an exact cocycle.
/// That cocycle is then written as an approximate coboundary.
pub fn approximate_match(
    alpha: &TwistedAction,
    beta: &TwistedAction,
    f_set: &[CMatrix],
    eps: f64,
    cfg: &Config,
) -> Result<Match> {
    let cmp = invariants_equal(alpha, beta, None, cfg)?;
    if !cmp.all_equal {
        return Err(Error::InvariantMismatch { detail: cmp.detail() });
    }
    match_unchecked(alpha, beta, f_set, eps, cfg)
}

fn match_unchecked(
    alpha: &TwistedAction,
    beta: &TwistedAction,
    f_set: &[CMatrix],
    eps: f64,
    cfg: &Config,
) -> Result<Match> {
    let d = alpha.dim();
    if beta.trunc() != alpha.trunc() {
        return Err(Error::SpecMismatch { detail: "actions live on different truncations".into() });
    }
    for a in f_set {
        if a.dim() != d {
            return Err(Error::DimMismatch { expected: d, found: a.dim() });
        }
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let trunc = alpha.trunc();
    let base = alpha.base().action();
    let ga = alpha.conj_or_identity();
    let k = &ga.adjoint() * &beta.conj_or_identity();
    // Intertwiners in the frame of alpha's base action.
    let mut u: Vec<Unitary> = (0..2)
        .map(|i| &k.conj_u(beta.base().action().implementer(i)) * &base.implementer(i).adjoint())
        .collect();
    let (a, b) = cocycle_corners(&u[0], &u[1], base);
    let x = &a * &b.adjoint();
    if scalar_deviation(x.matrix()) > 1e-8 {
        return Err(Error::numerical("intertwiner commutator is not scalar"));
    }
    let t = x.matrix().normalized_trace();
    let lambda = t / t.norm();
    let lambda_turns = lambda.arg() / (2.0 * std::f64::consts::PI);

    let f_base: Vec<CMatrix> = f_set.iter().map(|a| ga.adjoint().conj(a)).collect();
    let mut correction_order = None;
    let mut correction_factors = Vec::new();
    if (lambda - C64::new(1.0, 0.0)).norm() > 1e-9 {
        let l = order_of_root_of_unity(lambda).ok_or_else(|| Error::CorrectionFailure {
            detail: format!("commutator scalar {lambda_turns:.6} turns is not a root of unity of order <= {MAX_CORRECTION_ORDER}"),
        })?;
        let mut protected: Vec<usize> = Vec::new();
        for m in u.iter().map(|w| w.matrix()).chain(f_base.iter()) {
            protected.extend(factor_support(m, trunc, SUPPORT_TOL));
        }
        protected.sort();
        protected.dedup();
        let tower = build_line_tower(alpha.base(), 1, &protected, l).map_err(|e| Error::CorrectionFailure {
            detail: format!("order l = {l}, factor orders {:?}, protected {:?}: {e}", trunc.factors(), protected),
        })?;
        let mu = lambda.conj();
        let mut y = CMatrix::zeros(tower.levels[0].dim());
        let mut phase = C64::new(1.0, 0.0);
        for e in &tower.levels {
            y = &y + &e.scale(phase);
            phase *= mu;
        }
        let y = Unitary::new(trunc.embed_on(&tower.factors, &y)?, 1e-8)?;
        u[0] = &u[0] * &y;
        correction_order = Some(l);
        correction_factors = tower.factors.clone();
    }
    let c0 = Cocycle::new(u[0].clone(), u[1].clone(), base);
    if c0.defect > EXACT_COCYCLE_TOL {
        return Err(Error::CorrectionFailure { detail: format!("corrected cocycle defect {:.3e}", c0.defect) });
    }

    let mut support = factor_support(c0.u[0].matrix(), trunc, SUPPORT_TOL);
    support.extend(factor_support(c0.u[1].matrix(), trunc, SUPPORT_TOL));
    support.sort();
    support.dedup();
    let kappa_after = if support.is_empty() {
        "0/1".to_string()
    } else {
        let local = alpha.base().restrict(&support)?;
        let r = |w: &Unitary| -> Result<Unitary> { Unitary::new(reduce_to(w.matrix(), trunc, &support)?, 1e-8) };
        let kap = kappa_fast(&r(&c0.u[0])?, &r(&c0.u[1])?, local.action(), cfg)?;
        if kap.integer_form != 0 {
            return Err(Error::CorrectionFailure { detail: format!("kappa after correction is {}", kap.value.as_fraction()) });
        }
        kap.value.as_fraction()
    };

    // Replacing u by u' changes Ad(u) alpha(a) by at most 2 ||u - u'|| ||a||.
    let scale = f_set.iter().map(|a| a.op_norm()).fold(1.0, f64::max);
    let eps_v = 0.99 * eps / (2.0 * scale);
    let van = vanish_cocycle(alpha.base(), &c0, &[], eps_v, cfg)?;
    let base_v = van.v;
    let v = match alpha.conj() {
        Some(g) => g.conj_u(&base_v),
        None => base_v.clone(),
    };
    let cocycle = coboundary(&v, alpha.action());
    let defect = match_defect(alpha.action(), &cocycle, beta.action(), f_set);
    if defect >= eps {
        return Err(Error::AssemblyDefect { achieved: defect, target: eps });
    }
    let report = MatchReport {
        eps,
        defect,
        lambda_turns,
        kappa_corrections: usize::from(correction_order.is_some()),
        correction_order,
        correction_factors,
        kappa_after,
        vanish: van.report,
    };
    Ok(Match { v, cocycle, base_v, cocycle_factors: support, report })
}

/// One round of the alternation.
#[derive(Clone, Debug, Serialize)]
pub struct EkRound {
    pub round: usize,
    /// Which action was perturbed this round.
    pub side: &'static str,
    /// `max ||target_i(a) - moved_i(a)||` over the round's `F` after the
    /// perturbation.
    pub matcher_defect: f64,
    /// Largest measured coboundary error of the vanishing step.
    pub vanish_eps: Option<f64>,
    /// `max_i ||u_i - 1||` for the perturbing coboundary.
    pub cocycle_size: f64,
    pub kappa_corrections: usize,
    /// Obstruction reported by the match when the round fell back to no
    /// perturbation.
    pub match_error: Option<String>,
    /// Perturbation applied: the vanishing unitary (`"vanish"`), its
    /// compression onto the cocycle's factors (`"compressed"`) or none
    /// (`"identity"`), whichever has the smallest defect.
    pub choice: &'static str,
    pub wall_time: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StallInfo {
    pub round: usize,
    pub defect: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EkTranscript {
    pub rounds: Vec<EkRound>,
    pub monotone: bool,
    pub final_defect: f64,
    pub stalled: Option<StallInfo>,
}

/// Conditional expectation of `base_v` onto `factors`, made unitary and
/// embedded back.
fn compress(base_v: &Unitary, trunc: &TruncatedUHF, factors: &[usize], cfg: &Config) -> Result<Unitary> {
    let small = polar_unitary(&reduce_to(base_v.matrix(), trunc, factors)?, cfg.singular_tol)?;
    Ok(Unitary::new_unchecked(trunc.embed_on(factors, small.matrix())?))
}

/// Alternately perturbs `alpha` (odd rounds) and `beta` (even rounds) by
/// coboundaries so that the two agree on the round's `F` within its `eps`.
///
/// The schedules are indexed by round; the last entry repeats when a
/// schedule is shorter than `rounds`. Each round compares three
/// perturbations on the round's `F`: the unitary from the match, its
/// compression onto the factors of the vanished cocycle (which keeps free
/// factors available for later towers) and no perturbation at all. A round
/// whose defect exceeds the previous one is reported in `stalled`.
pub fn ek_rounds(
    alpha: &TwistedAction,
    beta: &TwistedAction,
    rounds: usize,
    f_schedule: &[Vec<CMatrix>],
    eps_schedule: &[f64],
    cfg: &Config,
) -> Result<EkTranscript> {
    if f_schedule.is_empty() || eps_schedule.is_empty() {
        return Err(Error::invalid("schedules must be nonempty"));
    }
    if eps_schedule.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("eps schedule must be non-increasing"));
    }
    let cmp = invariants_equal(alpha, beta, None, cfg)?;
    if !cmp.all_equal {
        return Err(Error::InvariantMismatch { detail: cmp.detail() });
    }
    let trunc = alpha.trunc().clone();
    let mut sides = [alpha.clone(), beta.clone()];
    let mut out: Vec<EkRound> = Vec::with_capacity(rounds);
    let mut stalled = None;
    let mut previous = f64::INFINITY;
    for r in 1..=rounds {
        let start = Instant::now();
        let f_set = &f_schedule[(r - 1).min(f_schedule.len() - 1)];
        let eps = eps_schedule[(r - 1).min(eps_schedule.len() - 1)];
        let (mover, target) = if r % 2 == 1 { (0, 1) } else { (1, 0) };
        let mover_action = sides[mover].action().clone();
        let target_action = sides[target].action().clone();
        let defect_of = |w: &Unitary| match_defect(&mover_action, &coboundary(w, &mover_action), &target_action, f_set);
        let one = Unitary::identity(trunc.dim());
        let d0 = defect_of(&one);
        let (mut v, mut defect, mut choice, vanish_eps, kappa_corrections, match_error) =
            match match_unchecked(&sides[mover], &sides[target], f_set, eps, cfg) {
                Ok(m) => {
                    let mut v = m.v.clone();
                    let mut defect = m.report.defect;
                    let mut choice = "vanish";
                    let full: Vec<usize> = (0..trunc.len()).collect();
                    if !m.cocycle_factors.is_empty() && m.cocycle_factors != full {
                        let small = compress(&m.base_v, &trunc, &m.cocycle_factors, cfg)?;
                        let vc = match sides[mover].conj() {
                            Some(g) => g.conj_u(&small),
                            None => small,
                        };
                        let dc = defect_of(&vc);
                        if dc < defect {
                            v = vc;
                            defect = dc;
                            choice = "compressed";
                        }
                    }
                    let ve = m.report.vanish.eps_achieved[0].max(m.report.vanish.eps_achieved[1]);
                    (v, defect, choice, Some(ve), m.report.kappa_corrections, None)
                }
                // An already matched pair needs no perturbation even when the
                // finite stage has no room for another match.
                Err(e) if e.is_obstruction() && d0 < eps => (one.clone(), d0, "identity", None, 0, Some(e.to_string())),
                Err(e) => return Err(e),
            };
        if d0 <= defect {
            v = one;
            defect = d0;
            choice = "identity";
        }
        let c = coboundary(&v, sides[mover].action());
        let cocycle_size = c.u.iter().map(|w| w.dist_to_identity()).fold(0.0, f64::max);
        sides[mover] = sides[mover].conjugate_by(&v);
        if stalled.is_none() && defect > previous + MONOTONE_SLACK {
            stalled = Some(StallInfo { round: r, defect });
        }
        previous = defect;
        out.push(EkRound {
            round: r,
            side: if mover == 0 { "alpha" } else { "beta" },
            matcher_defect: defect,
            vanish_eps,
            cocycle_size,
            kappa_corrections,
            match_error,
            choice,
            wall_time: cfg.record_timing.then(|| start.elapsed().as_secs_f64()),
        });
    }
    let final_defect = out.last().map_or(0.0, |r| r.matcher_defect);
    Ok(EkTranscript { monotone: stalled.is_none(), rounds: out, final_defect, stalled })
}

/// Per-prime residues of an invariant map, keyed by prime (for reports).
pub fn residue_map(values: &[PrimeComparison]) -> BTreeMap<u64, (u64, u64)> {
    values.iter().map(|c| (c.prime, (c.alpha.value, c.beta.value))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{make_model_action, FactorGen, ModelSpec};
    use crate::algebra::expm_sa;
    use crate::random::{ginibre, random_self_adjoint, rng_from_seed};

    fn model(f2: u64, f3: u64, factors: Vec<usize>) -> ProductAction {
        let mut f = BTreeMap::new();
        f.insert(2, f2);
        f.insert(3, f3);
        let t = TruncatedUHF::new(factors).unwrap();
        let spec = ModelSpec { f, trunc: Some(t.clone()), ..ModelSpec::default() };
        make_model_action(&spec, &t).unwrap()
    }

    fn local_unitary(t: &TruncatedUHF, s: &[usize], norm: f64, seed: u64) -> Unitary {
        let mut rng = rng_from_seed(seed);
        let sub = t.sub(s).unwrap();
        let h = random_self_adjoint(sub.dim(), norm, &mut rng);
        Unitary::new_unchecked(t.embed_on(s, expm_sa(&h).matrix()).unwrap())
    }

    fn local_f(t: &TruncatedUHF, k: usize, seed: u64) -> CMatrix {
        let mut rng = rng_from_seed(seed);
        let a = ginibre(t.factors()[k], &mut rng);
        let a = a.scale_re(1.0 / a.op_norm());
        t.embed_factor(&a, k).unwrap()
    }

    #[test]
    fn equal_actions_have_equal_invariants() {
        let a = TwistedAction::product(model(1, 2, vec![2, 3, 5]));
        let cmp = invariants_equal(&a, &a, None, &Config::default()).unwrap();
        assert!(cmp.all_equal);
        assert_eq!(cmp.primes.iter().map(|c| c.prime).collect::<Vec<_>>(), vec![2, 3, 5]);
    }

    #[test]
    fn different_models_mismatch_at_two() {
        let a = TwistedAction::product(model(1, 2, vec![2, 3, 5]));
        let b = TwistedAction::product(model(0, 2, vec![2, 3, 5]));
        let cmp = invariants_equal(&a, &b, None, &Config::default()).unwrap();
        assert_eq!(cmp.mismatches, 1);
        assert!(!cmp.primes.iter().find(|c| c.prime == 2).unwrap().equal);
        let err = approximate_match(&a, &b, &[], 0.1, &Config::default()).unwrap_err();
        assert!(matches!(err, Error::InvariantMismatch { .. }));
    }

    #[test]
    fn conjugated_model_keeps_its_invariants() {
        let base = model(1, 1, vec![2, 3, 5]);
        let t = base.trunc().clone();
        let g = local_unitary(&t, &[0, 1], 0.5, 7);
        let a = TwistedAction::product(base.clone());
        let b = TwistedAction::conjugated(base, g).unwrap();
        let cmp = invariants_equal(&a, &b, None, &Config::default()).unwrap();
        assert!(cmp.all_equal, "{cmp:?}");
    }

    #[test]
    fn self_match_is_trivial() {
        let a = TwistedAction::product(model(1, 1, vec![2, 3, 5]));
        let f = vec![local_f(a.trunc(), 2, 1)];
        let m = approximate_match(&a, &a, &f, 0.1, &Config::default()).unwrap();
        assert!(m.report.defect < 1e-12);
        assert!(m.cocycle.defect < 1e-9);
    }

    #[test]
    fn coboundary_perturbation_is_recovered() {
        let base = model(1, 1, vec![2, 3, 5, 5, 5]);
        let t = base.trunc().clone();
        let v0 = local_unitary(&t, &[0, 1], 0.01, 11);
        let a = TwistedAction::product(base.clone());
        let b = TwistedAction::conjugated(base, v0).unwrap();
        let f = vec![local_f(&t, 0, 2), local_f(&t, 1, 3)];
        let m = approximate_match(&a, &b, &f, 0.2, &Config::default()).unwrap();
        assert!(m.report.defect < 0.2, "{:?}", m.report);
        assert!(m.cocycle.defect <= 1e-9);
    }

    #[test]
    fn commutator_scalar_is_corrected() {
        // Factor 0 carries the scalar, factor 2 the correction tower and
        // factors 1 and 3 the vanishing tower.
        let t = TruncatedUHF::new(vec![3, 3, 3, 3]).unwrap();
        let g1 = vec![FactorGen::Id, FactorGen::Clock { power: 1 }, FactorGen::Id, FactorGen::Id];
        let g2 = vec![FactorGen::Id, FactorGen::Id, FactorGen::Shift { power: 1 }, FactorGen::Shift { power: 1 }];
        let alpha = ProductAction::new(t.clone(), g1, g2).unwrap();
        let beta = alpha.with_factor(0, FactorGen::Clock { power: 1 }, FactorGen::Shift { power: 1 }).unwrap();
        let (a, b) = (TwistedAction::product(alpha), TwistedAction::product(beta));
        let f = vec![local_f(&t, 0, 4)];
        let m = approximate_match(&a, &b, &f, 0.1, &Config::default()).unwrap();
        assert_eq!(m.report.kappa_corrections, 1);
        assert_eq!(m.report.correction_order, Some(3));
        assert_eq!(m.report.correction_factors, vec![2]);
        assert_eq!(m.report.kappa_after, "0/1");
        assert!(m.report.defect < 0.1, "{:?}", m.report);
    }

    #[test]
    fn missing_correction_tower_is_reported() {
        let t = TruncatedUHF::new(vec![3, 3, 2]).unwrap();
        let alpha = ProductAction::new(
            t.clone(),
            vec![FactorGen::Id, FactorGen::Clock { power: 1 }, FactorGen::Clock { power: 1 }],
            vec![FactorGen::Id, FactorGen::Id, FactorGen::Id],
        )
        .unwrap();
        let beta = alpha.with_factor(0, FactorGen::Clock { power: 1 }, FactorGen::Shift { power: 1 }).unwrap();
        let err = approximate_match(&TwistedAction::product(alpha), &TwistedAction::product(beta), &[], 0.1, &Config::default())
            .unwrap_err();
        assert!(matches!(err, Error::CorrectionFailure { .. }), "{err:?}");
    }

    #[test]
    fn rounds_on_equal_actions_are_zero() {
        let a = TwistedAction::product(model(1, 0, vec![2, 3, 5]));
        let f = vec![vec![local_f(a.trunc(), 2, 5)]];
        let tr = ek_rounds(&a, &a, 3, &f, &[0.1, 0.05, 0.02], &Config::default()).unwrap();
        assert_eq!(tr.rounds.len(), 3);
        assert!(tr.rounds.iter().all(|r| r.matcher_defect < 1e-12 && r.wall_time.is_none()));
        assert!(tr.monotone);
    }

    #[test]
    fn rounds_shrink_the_defect_of_a_perturbation() {
        let base = model(1, 1, vec![2, 3, 5, 5]);
        let t = base.trunc().clone();
        let v0 = local_unitary(&t, &[1], 0.05, 21);
        let a = TwistedAction::product(base.clone());
        let b = TwistedAction::conjugated(base, v0).unwrap();
        let f: Vec<Vec<CMatrix>> =
            (1..=3).map(|r| (0..r).map(|j| local_f(&t, [1, 0, 3][j], 30 + j as u64)).collect()).collect();
        let tr = ek_rounds(&a, &b, 3, &f, &[0.5, 0.3, 0.3], &Config::default()).unwrap();
        assert!(tr.monotone, "{tr:?}");
        assert!(tr.final_defect < 0.05);
        assert_eq!(tr.rounds.iter().map(|r| r.side).collect::<Vec<_>>(), vec!["alpha", "beta", "alpha"]);
    }

    #[test]
    fn rounds_reject_increasing_eps() {
        let a = TwistedAction::product(model(1, 0, vec![2, 3, 5]));
        let err = ek_rounds(&a, &a, 2, &[vec![]], &[0.1, 0.2], &Config::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput { .. }));
    }
}
