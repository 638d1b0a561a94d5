//! Exact Rohlin towers for product-type actions and the cocycle vanishing
//! solver built on them.

use serde::Serialize;

use crate::actions::{fourier_basis, Action, Cocycle, FactorGen, ProductAction, COCYCLE_INPUT_TOL};
use crate::algebra::{commutator, CMatrix, Unitary};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::homotopy::{boundary_map, disk_extension};
use crate::invariants::kappa_fast;
use crate::uhf::TruncatedUHF;
use crate::weyl::{factor_support, reduce_to};

/// Relative size below which a matrix entry counts as supported off a factor.
const SUPPORT_TOL: f64 = 1e-12;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Grid of projections `e_g`, `g in Z_{m_1} x Z_{m_2}`, built on free factors.
///
/// Direction `i` uses the factors `factors[i]`, on which generator `i` acts
/// by a clock or shift power and the other generator trivially.
#[derive(Clone, Debug, Serialize)]
pub struct RohlinTower {
    pub shape: [usize; 2],
    pub factors: [Vec<usize>; 2],
    /// Height contributed by each factor, parallel to `factors`.
    pub heights: [Vec<usize>; 2],
    pub protected: Vec<usize>,
    #[serde(skip)]
    trunc: TruncatedUHF,
    /// Level projections of direction `i` embedded in the sub-truncation of
    /// `support()`.
    #[serde(skip)]
    levels: [Vec<CMatrix>; 2],
}

/// Orbit projections of one factor under `Ad(clock^a)` or `Ad(shift^a)`:
/// `level_j = sum_{r < gcd(a, q)} P_{j a + r}` in the basis that the
/// generator permutes cyclically.
fn factor_levels(q: usize, gen: &FactorGen) -> Option<Vec<CMatrix>> {
    let (basis, power) = match gen {
        FactorGen::Clock { power } => (fourier_basis(q), *power),
        FactorGen::Shift { power } => {
            let b = (0..q)
                .map(|j| CMatrix::from_fn(q, |a, c| if a == j && c == j { crate::algebra::ONE } else { crate::algebra::ZERO }))
                .collect();
            (b, *power)
        }
        _ => return None,
    };
    let a = power.rem_euclid(q as i64) as usize;
    if a == 0 {
        return None;
    }
    let g = gcd(a, q);
    let h = q / g;
    Some(
        (0..h)
            .map(|j| {
                let mut acc = CMatrix::zeros(q);
                for r in 0..g {
                    acc = &acc + &basis[(j * a + r) % q];
                }
                acc
            })
            .collect(),
    )
}

fn acts_trivially(q: usize, gen: &FactorGen) -> bool {
    match gen {
        FactorGen::Id => true,
        FactorGen::Clock { power } | FactorGen::Shift { power } => power.rem_euclid(q as i64) == 0,
        FactorGen::Dense { .. } => false,
    }
}

impl RohlinTower {
    pub fn trunc(&self) -> &TruncatedUHF {
        &self.trunc
    }

    /// All factors used by the tower, ascending.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.factors[0].iter().chain(&self.factors[1]).copied().collect();
        s.sort();
        s
    }

    /// `e_g` as a matrix on the sub-truncation of `support()`.
    pub fn local_projection(&self, g: [usize; 2]) -> CMatrix {
        let a = &self.levels[0][g[0] % self.shape[0]];
        let b = &self.levels[1][g[1] % self.shape[1]];
        a * b
    }

    /// `e_g` on the full truncation.
    pub fn projection(&self, g: [usize; 2]) -> CMatrix {
        self.trunc.embed_on(&self.support(), &self.local_projection(g)).expect("tower support is valid")
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds a single grid tower with both heights at least `min_height`.
///
/// Factors are taken in ascending order; a factor joins a direction when its
/// orbit length is coprime to the height collected so far, so the combined
/// levels `e_j = ⊗_f level_f(j mod h_f)` are again cyclically permuted.
pub fn build_tower(action: &ProductAction, protected: &[usize], min_height: usize) -> Result<RohlinTower> {
    let trunc = action.trunc().clone();
    let mut factors: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut heights: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut local: [Vec<Vec<CMatrix>>; 2] = [Vec::new(), Vec::new()];
    let mut shape = [1usize, 1];
    let mut any = [false, false];
    for i in 0..2 {
        for k in 0..trunc.len() {
            if protected.contains(&k) {
                continue;
            }
            let q = trunc.factors()[k];
            if !acts_trivially(q, &action.gens(1 - i)[k]) {
                continue;
            }
            let Some(levels) = factor_levels(q, &action.gens(i)[k]) else { continue };
            any[i] = true;
            if shape[i] >= min_height.max(2) {
                break;
            }
            let h = levels.len();
            if gcd(h, shape[i]) != 1 {
                continue;
            }
            shape[i] *= h;
            factors[i].push(k);
            heights[i].push(h);
            local[i].push(levels);
        }
    }
    if !any[0] || !any[1] {
        return Err(Error::NoFreeFactors);
    }
    if shape[0] < min_height.max(2) || shape[1] < min_height.max(2) {
        return Err(Error::TowerUnavailable {
            detail: format!("reached heights {:?}, need {}", shape, min_height.max(2)),
        });
    }
    let mut support: Vec<usize> = factors[0].iter().chain(&factors[1]).copied().collect();
    support.sort();
    let sub = trunc.sub(&support)?;
    let mut levels: [Vec<CMatrix>; 2] = [Vec::new(), Vec::new()];
    for i in 0..2 {
        let positions: Vec<usize> =
            factors[i].iter().map(|k| support.iter().position(|s| s == k).unwrap()).collect();
        for j in 0..shape[i] {
            let mut m = CMatrix::identity(1);
            for (f, lv) in local[i].iter().enumerate() {
                m = m.kron(&lv[j % heights[i][f]]);
            }
            levels[i].push(sub.embed_on(&positions, &m)?);
        }
    }
    let mut protected: Vec<usize> = protected.to_vec();
    protected.sort();
    protected.dedup();
    Ok(RohlinTower { shape, factors, heights, protected, trunc, levels })
}

/// Tower for one generator: levels `e_0, ..., e_{H-1}` summing to 1 with
/// `alpha_{xi_dir}(e_j) = e_{j+1}`.
#[derive(Clone, Debug, Serialize)]
pub struct LineTower {
    pub dir: usize,
    pub factors: Vec<usize>,
    pub heights: Vec<usize>,
    pub height: usize,
    /// Levels on the sub-truncation of `factors`.
    #[serde(skip)]
    pub levels: Vec<CMatrix>,
}

/// Builds a tower for generator `dir` whose height is a multiple of
/// `divisor`, using unprotected factors with coprime orbit lengths.
pub fn build_line_tower(action: &ProductAction, dir: usize, protected: &[usize], divisor: usize) -> Result<LineTower> {
    let trunc = action.trunc();
    let divisor = divisor.max(1);
    let mut factors = Vec::new();
    let mut heights = Vec::new();
    let mut local = Vec::new();
    let mut height = 1usize;
    let mut available = Vec::new();
    for k in 0..trunc.len() {
        if height % divisor == 0 && height > 1 {
            break;
        }
        if protected.contains(&k) {
            continue;
        }
        let q = trunc.factors()[k];
        let Some(levels) = factor_levels(q, &action.gens(dir)[k]) else { continue };
        let h = levels.len();
        available.push(h);
        let missing = divisor / gcd(divisor, height);
        if gcd(h, height) != 1 || (gcd(h, missing) == 1 && missing > 1) {
            continue;
        }
        height *= h;
        factors.push(k);
        heights.push(h);
        local.push(levels);
    }
    if available.is_empty() {
        return Err(Error::NoFreeFactors);
    }
    if height % divisor != 0 {
        return Err(Error::TowerUnavailable {
            detail: format!("need a height divisible by {divisor}; free orbit lengths are {available:?}"),
        });
    }
    let levels = (0..height)
        .map(|j| {
            local.iter().enumerate().fold(CMatrix::identity(1), |m, (f, lv): (usize, &Vec<CMatrix>)| {
                m.kron(&lv[j % heights[f]])
            })
        })
        .collect();
    Ok(LineTower { dir, factors, heights, height, levels })
}

/// Measured tower defects.
#[derive(Clone, Debug, Serialize)]
pub struct TowerReport {
    /// `||sum_g e_g - 1||`.
    pub sum_defect: f64,
    /// Largest `||e_g^2 - e_g||` or `||e_g* - e_g||`.
    pub projection_defect: f64,
    /// Largest `||alpha_i(e_g) - e_{g + xi_i}||` per direction.
    pub shift_defect: [f64; 2],
    /// Largest `||[a, e_g]||` over `a` in `F`.
    pub commutator_max: f64,
    pub max_defect: f64,
    pub eps: f64,
    pub passed: bool,
}

/// Measures the tower relations against `action` and the commutators with
/// `f_set` on the full truncation with dense products. Costs `O(d^3)` per
/// cell; `verify_tower` is the scalable form.
pub fn verify_tower_dense(tower: &RohlinTower, action: &Action, f_set: &[CMatrix], eps: f64) -> TowerReport {
    let d = tower.trunc.dim();
    let [m1, m2] = tower.shape;
    let mut sum = CMatrix::zeros(d);
    let mut proj: f64 = 0.0;
    let mut shift = [0.0f64; 2];
    let mut comm: f64 = 0.0;
    for g1 in 0..m1 {
        for g2 in 0..m2 {
            let e = tower.projection([g1, g2]);
            sum = &sum + &e;
            proj = proj.max((&(&e * &e) - &e).op_norm()).max((&e.adjoint() - &e).op_norm());
            for (i, next) in [[g1 + 1, g2], [g1, g2 + 1]].into_iter().enumerate() {
                let moved = action.apply_gen(i, &e);
                shift[i] = shift[i].max((&moved - &tower.projection(next)).op_norm());
            }
            for a in f_set {
                comm = comm.max(commutator(a, &e).op_norm());
            }
        }
    }
    let sum_defect = (&sum - &CMatrix::identity(d)).op_norm();
    let max_defect = sum_defect.max(proj).max(shift[0]).max(shift[1]).max(comm);
    TowerReport {
        sum_defect,
        projection_defect: proj,
        shift_defect: shift,
        commutator_max: comm,
        max_defect,
        eps,
        passed: max_defect < eps,
    }
}

/// `x` cut into blocks `x_{r r'}` over the split `support ⊗ rest`, so that
/// `[x, e ⊗ 1]` has blocks `[x_{r r'}, e]`.
fn support_blocks(x: &CMatrix, trunc: &TruncatedUHF, support: &[usize]) -> Result<Vec<CMatrix>> {
    let rest: Vec<usize> = (0..trunc.len()).filter(|k| !support.contains(k)).collect();
    let (sub, other) = (trunc.sub(support)?, trunc.sub(&rest)?);
    let (s, n) = (sub.dim(), other.dim());
    let mut index = vec![0usize; s * n];
    for i in 0..trunc.dim() {
        let p: usize = support.iter().enumerate().map(|(j, &k)| trunc.digit(i, k) * sub.stride(j)).sum();
        let r: usize = rest.iter().enumerate().map(|(j, &k)| trunc.digit(i, k) * other.stride(j)).sum();
        index[r * s + p] = i;
    }
    let mut blocks = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            blocks.push(CMatrix::from_fn(s, |p, q| x.get(index[r * s + p], index[c * s + q])));
        }
    }
    Ok(blocks)
}

/// Measures the tower relations on the tower's own factors, where they are
/// exact statements about `e_g ⊗ 1`, and the commutators with `f_set`
/// blockwise. Commutator norms are Frobenius bounds `||[a, e_g]||_2`.
pub fn verify_tower(tower: &RohlinTower, action: &ProductAction, f_set: &[CMatrix], eps: f64) -> Result<TowerReport> {
    let support = tower.support();
    let local = action.restrict(&support)?;
    let s = local.dim();
    let blocks: Vec<Vec<CMatrix>> =
        f_set.iter().map(|a| support_blocks(a, &tower.trunc, &support)).collect::<Result<_>>()?;
    let [m1, m2] = tower.shape;
    let mut sum = CMatrix::zeros(s);
    let mut proj: f64 = 0.0;
    let mut shift = [0.0f64; 2];
    let mut comm: f64 = 0.0;
    for g1 in 0..m1 {
        for g2 in 0..m2 {
            let e = tower.local_projection([g1, g2]);
            sum = &sum + &e;
            proj = proj.max((&(&e * &e) - &e).op_norm()).max((&e.adjoint() - &e).op_norm());
            for (i, next) in [[g1 + 1, g2], [g1, g2 + 1]].into_iter().enumerate() {
                let moved = local.action().apply_gen(i, &e);
                shift[i] = shift[i].max((&moved - &tower.local_projection(next)).op_norm());
            }
            for bl in &blocks {
                let sq: f64 = bl.iter().map(|b| commutator(b, &e).frobenius_norm().powi(2)).sum();
                comm = comm.max(sq.sqrt());
            }
        }
    }
    let sum_defect = (&sum - &CMatrix::identity(s)).op_norm();
    let max_defect = sum_defect.max(proj).max(shift[0]).max(shift[1]).max(comm);
    Ok(TowerReport {
        sum_defect,
        projection_defect: proj,
        shift_defect: shift,
        commutator_max: comm,
        max_defect,
        eps,
        passed: max_defect < eps,
    })
}

/// Error budget of one vanishing run.
#[derive(Clone, Debug, Serialize)]
pub struct VanishBudget {
    /// Factors carrying the cocycle.
    pub cocycle_factors: Vec<usize>,
    pub tower_shape: [usize; 2],
    pub tower_factors: [Vec<usize>; 2],
    /// Boundary conditions of the boundary map of the cocycle powers.
    pub boundary_defect: [f64; 2],
    /// Measured Lipschitz constant of the disk map.
    pub disk_lip: f64,
    /// Certified constant `C'` of the shrinking step.
    pub c_prime: f64,
    pub knots: usize,
    /// Grid steps `2 Lip / m_i`.
    pub grid_step: [f64; 2],
    /// Boundary defect plus grid step, per direction.
    pub predicted: [f64; 2],
}

/// Report of `vanish_cocycle`.
#[derive(Clone, Debug, Serialize)]
pub struct VanishReport {
    pub eps_target: f64,
    /// Measured `||u_i - v alpha_i(v*)||`.
    pub eps_achieved: [f64; 2],
    /// Largest measured `||[v, a]||` over `F`.
    pub commutator_max: f64,
    pub budget: Option<VanishBudget>,
}

/// Output of `vanish_cocycle`.
#[derive(Clone, Debug)]
pub struct Vanishing {
    pub v: Unitary,
    pub report: VanishReport,
}

/// `max_i ||u_i - v alpha_i(v*)||`, per direction.
pub fn coboundary_errors(c: &Cocycle, v: &Unitary, action: &Action) -> [f64; 2] {
    let vs = v.adjoint();
    let mut out = [0.0; 2];
    for (i, o) in out.iter_mut().enumerate() {
        *o = c.u[i].dist(&(v * &action.apply_gen_u(i, &vs)));
    }
    out
}

fn commutator_max(v: &Unitary, f_set: &[CMatrix]) -> f64 {
    f_set.iter().map(|a| commutator(v.matrix(), a).op_norm()).fold(0.0, f64::max)
}

/// The cocycle `u_g` on the grid `g in [0, m_1] x [0, m_2]`, from
/// `u_{g + xi_i} = u_g alpha_g(u_{xi_i})`.
fn cocycle_grid(c: &[Unitary; 2], action: &Action, shape: [usize; 2]) -> Vec<Vec<Unitary>> {
    let d = c[0].dim();
    let (w1, w2) = (action.implementer(0), action.implementer(1));
    let mut out = Vec::with_capacity(shape[0] + 1);
    let mut row_start = Unitary::identity(d);
    let mut w_row = Unitary::identity(d);
    for g1 in 0..=shape[0] {
        if g1 > 0 {
            row_start = &row_start * &(w_row.conj_u(&c[0]));
            w_row = &w_row * w1;
        }
        let mut row = Vec::with_capacity(shape[1] + 1);
        let mut u = row_start.clone();
        let mut w = w_row.clone();
        for g2 in 0..=shape[1] {
            if g2 > 0 {
                u = &u * &w.conj_u(&c[1]);
                w = &w * w2;
            }
            row.push(u.clone());
        }
        out.push(row);
    }
    out
}

/// Unitary `v` with `u_i ≈ v alpha_i(v*)` and `[v, a] ≈ 0` for `a` in `F`.
///
/// The cocycle is reduced to the factors it lives on; a tower is built on
/// factors carrying neither the cocycle nor `F`. The powers `u_{m_1 xi_1}`,
/// `u_{m_2 xi_2}` give a boundary map on the square, which is extended to
/// the disk map `z~`; with `w_g = z~(2 g_1 / m_1 - 1, 2 g_2 / m_2 - 1)` the
/// solution is `v = sum_g u_g alpha_g(w_g) e_g`. Heights grow until the
/// measured errors are below `eps` or the free factors run out.
pub fn vanish_cocycle(
    action: &ProductAction,
    c: &Cocycle,
    f_set: &[CMatrix],
    eps: f64,
    cfg: &Config,
) -> Result<Vanishing> {
    let trunc = action.trunc();
    let d = trunc.dim();
    if c.dim() != d {
        return Err(Error::DimMismatch { expected: d, found: c.dim() });
    }
    if c.defect > COCYCLE_INPUT_TOL {
        let kappa = kappa_fast(&c.u[0], &c.u[1], action.action(), cfg)?;
        if kappa.integer_form != 0 {
            return Err(Error::NotAdmissible { detail: format!("kappa = {}", kappa.value.as_fraction()) });
        }
        return Err(Error::NotACocycle { discrepancy: c.defect, allowed: COCYCLE_INPUT_TOL });
    }
    let mut support: Vec<usize> = factor_support(c.u[0].matrix(), trunc, SUPPORT_TOL);
    support.extend(factor_support(c.u[1].matrix(), trunc, SUPPORT_TOL));
    support.sort();
    support.dedup();
    if support.is_empty() {
        let trivial = c.u.iter().all(|u| u.dist_to_identity() <= cfg.exact_tol.max(1e-10));
        if !trivial {
            return Err(Error::invalid("scalar cocycles other than 1 cannot be solved on free factors"));
        }
        let v = Unitary::identity(d);
        let report = VanishReport {
            eps_target: eps,
            eps_achieved: coboundary_errors(c, &v, action.action()),
            commutator_max: 0.0,
            budget: None,
        };
        return Ok(Vanishing { v, report });
    }
    let mut protected = support.clone();
    for a in f_set {
        if a.dim() != d {
            return Err(Error::DimMismatch { expected: d, found: a.dim() });
        }
        protected.extend(factor_support(a, trunc, SUPPORT_TOL));
    }
    protected.sort();
    protected.dedup();

    let local_action = action.restrict(&support)?;
    let local = [
        Unitary::new(reduce_to(c.u[0].matrix(), trunc, &support)?, 1e-8)?,
        Unitary::new(reduce_to(c.u[1].matrix(), trunc, &support)?, 1e-8)?,
    ];
    let kappa = kappa_fast(&local[0], &local[1], local_action.action(), cfg)?;
    if kappa.integer_form != 0 {
        return Err(Error::NotAdmissible { detail: format!("kappa = {}", kappa.value.as_fraction()) });
    }

    let mut min_height = 2;
    let mut last_failure: Option<(f64, VanishBudget)> = None;
    loop {
        let tower = match build_tower(action, &protected, min_height) {
            Ok(t) => t,
            Err(e) => {
                return Err(match last_failure {
                    Some((achieved, _)) => Error::AssemblyDefect { achieved, target: eps },
                    None => e,
                });
            }
        };
        let shape = tower.shape;
        let grid = cocycle_grid(&local, local_action.action(), shape);
        let powered = local_action.action().powers(shape[0] as i64, shape[1] as i64);
        let (u_eta1, u_eta2) = (&grid[shape[0]][0], &grid[0][shape[1]]);
        let bmap = boundary_map(u_eta1, u_eta2, &powered, None, eps / 4.0, cfg)?;
        let disk = disk_extension(&bmap, cfg)?;

        // Assemble on the factors of the cocycle and of the tower.
        let mut joint: Vec<usize> = support.iter().chain(&tower.support()).copied().collect();
        joint.sort();
        let joint_trunc = trunc.sub(&joint)?;
        let pos = |set: &[usize]| -> Vec<usize> {
            set.iter().map(|k| joint.iter().position(|j| j == k).unwrap()).collect()
        };
        let (s_pos, t_pos) = (pos(&support), pos(&tower.support()));
        let mut v = CMatrix::zeros(joint_trunc.dim());
        let mut w_g = Unitary::identity(local[0].dim());
        for g1 in 0..shape[0] {
            for g2 in 0..shape[1] {
                let x = 2.0 * g1 as f64 / shape[0] as f64 - 1.0;
                let y = 2.0 * g2 as f64 / shape[1] as f64 - 1.0;
                let w = disk.eval((x, y))?;
                w_g = local_action.action().apply_u((g1 as i64, g2 as i64), &w);
                let block = &grid[g1][g2] * &w_g;
                let a = joint_trunc.embed_on(&s_pos, block.matrix())?;
                let e = joint_trunc.embed_on(&t_pos, &tower.local_projection([g1, g2]))?;
                v = &v + &(&a * &e);
            }
        }
        let _ = w_g;
        let v = Unitary::new(v, 1e-8)?;
        let joint_action = action.restrict(&joint)?;
        let joint_c = Cocycle::new(
            Unitary::new_unchecked(joint_trunc.embed_on(&s_pos, local[0].matrix())?),
            Unitary::new_unchecked(joint_trunc.embed_on(&s_pos, local[1].matrix())?),
            joint_action.action(),
        );
        let errs = coboundary_errors(&joint_c, &v, joint_action.action());
        let step = [2.0 * disk.lip_estimate / shape[0] as f64, 2.0 * disk.lip_estimate / shape[1] as f64];
        let budget = VanishBudget {
            cocycle_factors: support.clone(),
            tower_shape: shape,
            tower_factors: tower.factors.clone(),
            boundary_defect: bmap.conditions,
            disk_lip: disk.lip_estimate,
            c_prime: disk.c_prime,
            knots: disk.knots,
            grid_step: step,
            predicted: [bmap.conditions[0] + step[0], bmap.conditions[1] + step[1]],
        };
        let achieved = errs[0].max(errs[1]);
        if achieved >= eps {
            last_failure = Some((achieved, budget));
            min_height = shape[0].min(shape[1]) + 1;
            continue;
        }
        let v_full = Unitary::new(trunc.embed_on(&joint, v.matrix())?, 1e-8)?;
        let eps_achieved = coboundary_errors(c, &v_full, action.action());
        let comm = commutator_max(&v_full, f_set);
        let worst = eps_achieved[0].max(eps_achieved[1]).max(comm);
        if worst >= eps {
            return Err(Error::AssemblyDefect { achieved: worst, target: eps });
        }
        let report = VanishReport { eps_target: eps, eps_achieved, commutator_max: comm, budget: Some(budget) };
        return Ok(Vanishing { v: v_full, report });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{coboundary, make_model_action, ModelSpec};
    use crate::algebra::expm_sa;
    use crate::random::{random_self_adjoint, rng_from_seed};
    use std::collections::BTreeMap;

    fn model(f2: u64, f3: u64, factors: Vec<usize>) -> ProductAction {
        let mut f = BTreeMap::new();
        f.insert(2, f2);
        f.insert(3, f3);
        let spec = ModelSpec { f, sn: None, trunc: Some(TruncatedUHF::new(factors).unwrap()), ..ModelSpec::default() };
        let t = spec.trunc.clone().unwrap();
        make_model_action(&spec, &t).unwrap()
    }

    #[test]
    fn towers_are_exact() {
        let a = model(0, 0, vec![2, 3, 5, 5]);
        let t = build_tower(&a, &[], 2).unwrap();
        assert!(t.shape[0] >= 2 && t.shape[1] >= 2);
        let r = verify_tower(&t, &a, &[], 1e-9).unwrap();
        assert!(r.max_defect <= 1e-12, "{r:?}");
        assert!(r.passed);
    }

    #[test]
    fn tall_towers_use_coprime_factors() {
        let a = model(0, 0, vec![2, 3, 5, 5]);
        let t = build_tower(&a, &[], 6).unwrap();
        for i in 0..2 {
            let prod: usize = t.heights[i].iter().product();
            assert_eq!(prod, t.shape[i]);
        }
        let r = verify_tower(&t, &a, &[], 1e-9).unwrap();
        assert!(r.max_defect <= 1e-12, "{r:?}");
    }

    #[test]
    fn tower_errors() {
        let t = TruncatedUHF::new(vec![2, 3]).unwrap();
        let id = ProductAction::identity(&t);
        assert_eq!(build_tower(&id, &[], 2).unwrap_err(), Error::NoFreeFactors);
        let a = model(0, 0, vec![2, 3, 5, 5]);
        assert_eq!(build_tower(&a, &[0, 1, 2, 3], 2).unwrap_err(), Error::NoFreeFactors);
    }

    #[test]
    fn local_and_dense_checks_agree() {
        let a = model(1, 0, vec![2, 3, 5, 5]);
        let t = build_tower(&a, &[0], 2).unwrap();
        let mut rng = rng_from_seed(9);
        let off = a.trunc().embed_factor(&crate::random::ginibre(2, &mut rng), 0).unwrap();
        let k = t.support()[0];
        let on = a.trunc().embed_factor(&crate::random::ginibre(a.trunc().factors()[k], &mut rng), k).unwrap();
        for f in [off, on] {
            let local = verify_tower(&t, &a, std::slice::from_ref(&f), 1e-9).unwrap();
            let dense = verify_tower_dense(&t, a.action(), std::slice::from_ref(&f), 1e-9);
            assert!((local.shift_defect[0] - dense.shift_defect[0]).abs() < 1e-12);
            assert!((local.sum_defect - dense.sum_defect).abs() < 1e-12);
            assert!(local.commutator_max >= dense.commutator_max - 1e-12);
            assert!(local.commutator_max <= dense.commutator_max * (t.trunc().dim() as f64).sqrt() + 1e-12);
            assert_eq!(local.passed, dense.passed);
        }
    }

    #[test]
    fn rotated_tower_is_reported() {
        let a = model(0, 0, vec![2, 3, 5]);
        let mut t = build_tower(&a, &[], 2).unwrap();
        let mut rng = rng_from_seed(1);
        let sub_dim = t.levels[0][0].dim();
        let r = expm_sa(&random_self_adjoint(sub_dim, 0.05, &mut rng));
        t.levels[0][0] = r.conj(&t.levels[0][0]);
        let rep = verify_tower(&t, &a, &[], 1e-9).unwrap();
        assert!(!rep.passed && rep.max_defect > 1e-4);
    }

    #[test]
    fn protected_factors_commute_exactly() {
        let a = model(1, 0, vec![2, 3, 5, 5]);
        let mut rng = rng_from_seed(2);
        let local = crate::random::ginibre(2, &mut rng);
        let f = a.trunc().embed_factor(&local, 0).unwrap();
        let t = build_tower(&a, &[0], 2).unwrap();
        assert!(!t.support().contains(&0));
        let r = verify_tower(&t, &a, &[f], 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn trivial_cocycle_vanishes_with_identity() {
        let a = model(0, 0, vec![2, 3, 5]);
        let c = Cocycle::trivial(a.dim());
        let out = vanish_cocycle(&a, &c, &[], 0.25, &Config::default()).unwrap();
        assert!(out.v.dist_to_identity() < 1e-12);
        assert!(out.report.eps_achieved[0] < 1e-12);
    }

    #[test]
    fn coboundaries_vanish() {
        let mut rng = rng_from_seed(3);
        for (f2, f3, s) in [(1u64, 1u64, vec![0usize, 1]), (0, 2, vec![1]), (1, 0, vec![0])] {
            let a = model(f2, f3, vec![2, 3, 5, 5, 5]);
            let t = a.trunc().clone();
            let sub = t.sub(&s).unwrap();
            let h = random_self_adjoint(sub.dim(), 0.03, &mut rng);
            let v0 = Unitary::new_unchecked(t.embed_on(&s, expm_sa(&h).matrix()).unwrap());
            let c = coboundary(&v0, a.action());
            let out = vanish_cocycle(&a, &c, &[], 0.25, &Config::default()).unwrap();
            assert!(out.report.eps_achieved[0] < 0.25 && out.report.eps_achieved[1] < 0.25, "{:?}", out.report);
        }
    }

    #[test]
    fn kappa_nonzero_is_rejected() {
        // u_i = U_i W_i* with (U_1, U_2) = (clock, shift) of the whole algebra:
        // the pair has defect |omega - 1| and kappa = Bott(U_1, U_2) != 0.
        let a = model(0, 0, vec![2, 3, 5]);
        let d = a.dim();
        let u1 = &crate::actions::clock(d) * &a.action().implementer(0).adjoint();
        let u2 = &crate::actions::shift(d) * &a.action().implementer(1).adjoint();
        let c = Cocycle::new(u1, u2, a.action());
        assert!(c.defect > 0.1 && c.defect < 0.25);
        let err = vanish_cocycle(&a, &c, &[], 0.25, &Config::default()).unwrap_err();
        assert!(matches!(err, Error::NotAdmissible { .. }), "{err:?}");
    }
}
