//! Conditional expectation onto the commutant of one tensor factor.
//!
//! For `A = M_r ⊗ B` (with `M_r` sitting at factor `k`), averaging
//! `x -> (1/r^2) sum_{j,l} g_{jl} x g_{jl}*` over the clock/shift Weyl
//! unitaries `g_{jl} = clock^j shift^l` of the factor gives `1 ⊗ tr_k(x)`,
//! where `tr_k` is the normalised partial trace over the factor.

use crate::actions::{clock, shift};
use crate::algebra::{CMatrix, ZERO};
use crate::error::Result;
use crate::uhf::TruncatedUHF;

fn split(trunc: &TruncatedUHF, k: usize) -> (usize, usize, usize) {
    let r = trunc.factors()[k];
    let lo = trunc.stride(k);
    let hi = trunc.dim() / (r * lo);
    (hi, r, lo)
}

/// `tr_k(x)`: normalised partial trace over factor `k`, a matrix on the
/// remaining factors (in their original order).
pub fn partial_trace(x: &CMatrix, trunc: &TruncatedUHF, k: usize) -> CMatrix {
    let (hi, r, lo) = split(trunc, k);
    let m = hi * lo;
    let scale = 1.0 / r as f64;
    CMatrix::from_fn(m, |i, j| {
        let (ih, il) = (i / lo, i % lo);
        let (jh, jl) = (j / lo, j % lo);
        let mut s = ZERO;
        for a in 0..r {
            s += x.get(ih * r * lo + a * lo + il, jh * r * lo + a * lo + jl);
        }
        s * scale
    })
}

/// `1_r ⊗ m` with the identity placed at factor `k`.
pub fn embed_with_identity(m: &CMatrix, trunc: &TruncatedUHF, k: usize) -> CMatrix {
    let (_, r, lo) = split(trunc, k);
    let d = trunc.dim();
    CMatrix::from_fn(d, |i, j| {
        let (ia, ja) = ((i / lo) % r, (j / lo) % r);
        if ia != ja {
            return ZERO;
        }
        let ri = (i / (r * lo)) * lo + i % lo;
        let rj = (j / (r * lo)) * lo + j % lo;
        m.get(ri, rj)
    })
}

/// Conditional expectation onto the commutant of factor `k`.
pub fn weyl_average(x: &CMatrix, trunc: &TruncatedUHF, k: usize) -> CMatrix {
    embed_with_identity(&partial_trace(x, trunc, k), trunc, k)
}

/// The same expectation evaluated literally as the average of the `r^2`
/// Weyl conjugations. Costs `2 r^2` dense products.
pub fn weyl_average_explicit(x: &CMatrix, trunc: &TruncatedUHF, k: usize) -> Result<CMatrix> {
    let r = trunc.factors()[k];
    let (c, s) = (clock(r), shift(r));
    let mut acc = CMatrix::zeros(trunc.dim());
    for j in 0..r as i64 {
        for l in 0..r as i64 {
            let g = &c.pow(j) * &s.pow(l);
            let big = trunc.embed_factor(g.matrix(), k)?;
            let term = &(&big * x) * &big.adjoint();
            acc = &acc + &term;
        }
    }
    Ok(acc.scale_re(1.0 / (r * r) as f64))
}

/// `||x - E(x)||`, an upper bound for `sup ||[x, a]|| / 2` over unitaries
/// `a` of factor `k`.
pub fn commutant_defect(x: &CMatrix, trunc: &TruncatedUHF, k: usize) -> f64 {
    (x - &weyl_average(x, trunc, k)).op_norm()
}

/// Factors `k` on which `x` acts nontrivially, i.e. with
/// `max |x - E_k(x)|` above `tol` times the size of `x`.
pub fn factor_support(x: &CMatrix, trunc: &TruncatedUHF, tol: f64) -> Vec<usize> {
    let scale = x.max_abs().max(1.0);
    (0..trunc.len()).filter(|&k| (x - &weyl_average(x, trunc, k)).max_abs() > tol * scale).collect()
}

/// Normalised partial trace of `x` onto the factors in `keep` (ascending
/// order), removing all the others.
pub fn reduce_to(x: &CMatrix, trunc: &TruncatedUHF, keep: &[usize]) -> Result<CMatrix> {
    let mut factors: Vec<usize> = trunc.factors().to_vec();
    let mut current = x.clone();
    for k in (0..trunc.len()).rev() {
        if keep.contains(&k) {
            continue;
        }
        let t = TruncatedUHF::new(factors.clone())?;
        current = partial_trace(&current, &t, k);
        factors.remove(k);
    }
    Ok(current)
}
