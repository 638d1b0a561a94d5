//! Supernatural numbers, finite tensor-product truncations and the K0
//! arithmetic `K0(A) / K0(A ∩ A0') = Z / theta(p) Z`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::algebra::{CMatrix, ONE, ZERO};
use crate::error::{Error, Result};

/// Exponent of a prime in a supernatural number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exponent {
    Finite(u32),
    Infinite,
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(k) => s.serialize_u32(*k),
            Exponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(Exponent::Finite(k)),
            Raw::Str(s) if s == "inf" || s == "∞" => Ok(Exponent::Infinite),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad exponent {s:?}"))),
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(k) => write!(f, "{k}"),
            Exponent::Infinite => write!(f, "inf"),
        }
    }
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut k = 2;
    while k * k <= n {
        if n % k == 0 {
            return false;
        }
        k += 1;
    }
    true
}

/// Formal product of prime powers with exponents in `N ∪ {inf}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupernaturalNumber {
    exponents: BTreeMap<u64, Exponent>,
}

impl SupernaturalNumber {
    pub fn new(entries: impl IntoIterator<Item = (u64, Exponent)>) -> Result<Self> {
        let mut exponents = BTreeMap::new();
        for (p, e) in entries {
            if !is_prime(p) {
                return Err(Error::NotPrime { value: p });
            }
            if e != Exponent::Finite(0) {
                exponents.insert(p, e);
            }
        }
        if exponents.is_empty() {
            return Err(Error::invalid("supernatural number has no nonzero exponent"));
        }
        Ok(SupernaturalNumber { exponents })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: SupernaturalNumber =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("supernatural number: {e}")))?;
        Self::new(raw.exponents)
    }

    pub fn exponents(&self) -> &BTreeMap<u64, Exponent> {
        &self.exponents
    }

    /// Exponent of `p` (zero when absent).
    pub fn zeta(&self, p: u64) -> Result<Exponent> {
        if !is_prime(p) {
            return Err(Error::NotPrime { value: p });
        }
        Ok(self.exponents.get(&p).copied().unwrap_or(Exponent::Finite(0)))
    }

    /// Primes with finite nonzero exponent, ascending.
    pub fn prime_set_p(&self) -> Vec<u64> {
        self.exponents
            .iter()
            .filter(|(_, e)| matches!(e, Exponent::Finite(k) if *k >= 1))
            .map(|(p, _)| *p)
            .collect()
    }

    /// `p^{zeta(p)}` for a prime with finite exponent.
    pub fn theta(&self, p: u64) -> Result<u64> {
        match self.zeta(p)? {
            Exponent::Infinite => Err(Error::InfiniteExponent { prime: p }),
            Exponent::Finite(k) => Ok(p.pow(k)),
        }
    }

    /// Whether the formal product is infinite (a genuine UHF algebra).
    pub fn is_infinite(&self) -> bool {
        self.exponents.values().any(|e| *e == Exponent::Infinite)
    }
}

/// Finite stage `M_{q_1} ⊗ ... ⊗ M_{q_N}` of a UHF algebra.
///
/// Factor 0 is the most significant tensor index: basis vector `i`
/// corresponds to digits `(i_0, ..., i_{N-1})` in mixed radix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TruncatedUHF {
    factors: Vec<usize>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct TruncJson {
    factors: Vec<usize>,
}

impl Serialize for TruncatedUHF {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TruncJson { factors: self.factors.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TruncatedUHF {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TruncJson::deserialize(d)?;
        TruncatedUHF::new(j.factors).map_err(serde::de::Error::custom)
    }
}

impl TruncatedUHF {
    pub fn new(factors: Vec<usize>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("truncation needs at least one factor"));
        }
        if let Some(&q) = factors.iter().find(|&&q| q < 2) {
            return Err(Error::invalid(format!("factor size {q} is below 2")));
        }
        let dim = factors.iter().try_fold(1usize, |acc, &q| acc.checked_mul(q));
        let dim = dim.ok_or_else(|| Error::invalid("truncation dimension overflows"))?;
        Ok(TruncatedUHF { factors, dim })
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Product of the sizes of factors after `k` (the stride of digit `k`).
    pub fn stride(&self, k: usize) -> usize {
        self.factors[k + 1..].iter().product()
    }

    /// Digit of basis index `i` in factor `k`.
    pub fn digit(&self, i: usize, k: usize) -> usize {
        (i / self.stride(k)) % self.factors[k]
    }

    /// Truncation made of the listed factors, in the given order.
    pub fn sub(&self, indices: &[usize]) -> Result<TruncatedUHF> {
        TruncatedUHF::new(indices.iter().map(|&i| self.factors[i]).collect())
    }

    /// Index of the factor block carrying `M_{theta(p)}`: the first single
    /// factor of size `theta(p)`.
    pub fn block_for(&self, theta: u64) -> Option<usize> {
        self.factors.iter().position(|&q| q as u64 == theta)
    }

    /// Embed `x ∈ M_{q_k}` as `1 ⊗ .. ⊗ x ⊗ .. ⊗ 1`.
    pub fn embed_factor(&self, local: &CMatrix, k: usize) -> Result<CMatrix> {
        if k >= self.len() {
            return Err(Error::invalid(format!("factor index {k} out of range")));
        }
        let q = self.factors[k];
        if local.dim() != q {
            return Err(Error::DimMismatch { expected: q, found: local.dim() });
        }
        let s = self.stride(k);
        Ok(CMatrix::from_fn(self.dim, |i, j| {
            let (di, dj) = ((i / s) % q, (j / s) % q);
            // Off-factor digits must agree.
            if i - di * s == j - dj * s {
                local.get(di, dj)
            } else {
                ZERO
            }
        }))
    }

    /// Embed `x`, a matrix on the sub-truncation made of `factors` (in the
    /// given order), with the identity on all other factors.
    pub fn embed_on(&self, factors: &[usize], x: &CMatrix) -> Result<CMatrix> {
        let sub = self.sub(factors)?;
        if x.dim() != sub.dim() {
            return Err(Error::DimMismatch { expected: sub.dim(), found: x.dim() });
        }
        let mut seen = vec![false; self.len()];
        for &k in factors {
            if seen[k] {
                return Err(Error::invalid(format!("factor {k} listed twice")));
            }
            seen[k] = true;
        }
        let strides: Vec<usize> = factors.iter().map(|&k| self.stride(k)).collect();
        let sub_strides: Vec<usize> = (0..factors.len()).map(|r| sub.stride(r)).collect();
        // Split each index into its part on `factors` (as a sub index) and
        // the remainder with those digits zeroed.
        let split = |i: usize| -> (usize, usize) {
            let mut rest = i;
            let mut idx = 0;
            for (r, &k) in factors.iter().enumerate() {
                let digit = (i / strides[r]) % self.factors[k];
                rest -= digit * strides[r];
                idx += digit * sub_strides[r];
            }
            (idx, rest)
        };
        let parts: Vec<(usize, usize)> = (0..self.dim).map(split).collect();
        Ok(CMatrix::from_fn(self.dim, |i, j| {
            let (a, ra) = parts[i];
            let (b, rb) = parts[j];
            if ra == rb {
                x.get(a, b)
            } else {
                ZERO
            }
        }))
    }

    /// Tensor product of one local matrix per factor.
    pub fn embed_product(&self, locals: &[CMatrix]) -> Result<CMatrix> {
        if locals.len() != self.len() {
            return Err(Error::DimMismatch { expected: self.len(), found: locals.len() });
        }
        for (k, x) in locals.iter().enumerate() {
            if x.dim() != self.factors[k] {
                return Err(Error::DimMismatch { expected: self.factors[k], found: x.dim() });
            }
        }
        let strides: Vec<usize> = (0..self.len()).map(|k| self.stride(k)).collect();
        Ok(CMatrix::from_fn(self.dim, |i, j| {
            let mut acc = ONE;
            for k in 0..locals.len() {
                let q = self.factors[k];
                let v = locals[k].get((i / strides[k]) % q, (j / strides[k]) % q);
                if v == ZERO {
                    return ZERO;
                }
                acc *= v;
            }
            acc
        }))
    }
}

/// Deterministic truncation of `sn` to dimension at most `budget`.
///
/// Each prime with finite exponent contributes a single factor of size
/// `theta(p)` (ascending prime order); primes with infinite exponent are
/// then appended one factor at a time, cycling through them in ascending
/// order and skipping primes that no longer fit, until nothing fits.
pub fn truncate(sn: &SupernaturalNumber, budget: usize) -> Result<TruncatedUHF> {
    let mut factors = Vec::new();
    let mut dim: usize = 1;
    for p in sn.prime_set_p() {
        let t = sn.theta(p)? as usize;
        factors.push(t);
        dim = dim.saturating_mul(t);
    }
    if dim > budget {
        return Err(Error::BudgetTooSmall { budget, needed: dim });
    }
    let inf: Vec<usize> = sn
        .exponents()
        .iter()
        .filter(|(_, e)| **e == Exponent::Infinite)
        .map(|(p, _)| *p as usize)
        .collect();
    'outer: loop {
        let mut added = false;
        for &p in &inf {
            if dim.saturating_mul(p) <= budget {
                factors.push(p);
                dim *= p;
                added = true;
            }
        }
        if !added {
            break 'outer;
        }
    }
    if factors.is_empty() {
        let needed = inf.first().copied().unwrap_or(2);
        return Err(Error::BudgetTooSmall { budget, needed });
    }
    TruncatedUHF::new(factors)
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Modular inverse of `a` mod `m` (`m >= 1`), if it exists.
pub fn mod_inverse(a: i128, m: i128) -> Option<i128> {
    let (mut r0, mut r1) = (a.rem_euclid(m), m);
    let (mut s0, mut s1) = (1i128, 0i128);
    while r1 != 0 {
        let q = r0 / r1;
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
    }
    if r0 == 1 || m == 1 {
        Some(s0.rem_euclid(m))
    } else {
        None
    }
}

/// Trace value `numerator / denominator` at a stage of dimension `denominator`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct K0Value {
    pub numerator: i64,
    pub denominator: u64,
}

impl K0Value {
    pub fn new(numerator: i64, denominator: u64) -> Self {
        K0Value { numerator, denominator }
    }

    pub fn zero(d: u64) -> Self {
        K0Value { numerator: 0, denominator: d }
    }

    /// Lowest-terms form `(p, q)`.
    pub fn reduced(&self) -> (i64, u64) {
        let g = gcd(self.numerator as i128, self.denominator as i128).max(1);
        ((self.numerator as i128 / g) as i64, (self.denominator as i128 / g) as u64)
    }

    /// `"p/q"` in lowest terms.
    pub fn as_fraction(&self) -> String {
        let (p, q) = self.reduced();
        format!("{p}/{q}")
    }

    pub fn to_f64(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// Same value expressed at a finer stage `d'` (a multiple of `d`).
    pub fn rescale(&self, finer: u64) -> Result<K0Value> {
        if finer % self.denominator != 0 {
            return Err(Error::invalid(format!("{finer} is not a refinement of {}", self.denominator)));
        }
        Ok(K0Value::new(self.numerator * (finer / self.denominator) as i64, finer))
    }

    pub fn add(&self, other: &K0Value) -> Result<K0Value> {
        if self.denominator != other.denominator {
            return Err(Error::DimMismatch {
                expected: self.denominator as usize,
                found: other.denominator as usize,
            });
        }
        Ok(K0Value::new(self.numerator + other.numerator, self.denominator))
    }
}

/// Element of `Z / theta(p) Z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct K0Residue {
    pub prime: u64,
    pub modulus: u64,
    pub value: u64,
}

impl K0Residue {
    pub fn add(&self, other: &K0Residue) -> K0Residue {
        assert_eq!(self.modulus, other.modulus);
        K0Residue { prime: self.prime, modulus: self.modulus, value: (self.value + other.value) % self.modulus }
    }

    pub fn neg(&self) -> K0Residue {
        K0Residue { value: (self.modulus - self.value) % self.modulus, ..*self }
    }

    pub fn scale(&self, k: i64) -> K0Residue {
        let m = self.modulus as i128;
        K0Residue { value: ((self.value as i128 * k as i128).rem_euclid(m)) as u64, ..*self }
    }
}

/// Image of `v` in `K0(A)/K0(A ∩ A0') ≅ Z/theta Z`.
///
/// With `A = M_theta ⊗ B` at stage `d`, `v = n/d` maps to
/// `n · (d/theta)^{-1} mod theta`; this is independent of the stage.
pub fn k0_reduce(v: &K0Value, p: u64, theta: u64) -> Result<K0Residue> {
    let d = v.denominator;
    if theta == 0 || d % theta != 0 {
        return Err(Error::NotEmbeddable { detail: format!("theta({p}) = {theta} does not divide d = {d}") });
    }
    let cof = (d / theta) as i128;
    let inv = mod_inverse(cof, theta as i128).ok_or_else(|| Error::NotEmbeddable {
        detail: format!("d/theta = {cof} is not coprime to {p}; the stage carries extra powers of {p}"),
    })?;
    let value = (v.numerator as i128 * inv).rem_euclid(theta as i128) as u64;
    Ok(K0Residue { prime: p, modulus: theta, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::C64;

    fn sn(entries: &[(u64, Exponent)]) -> SupernaturalNumber {
        SupernaturalNumber::new(entries.iter().copied()).unwrap()
    }

    use Exponent::{Finite, Infinite};

    #[test]
    fn zeta_and_theta() {
        let a = sn(&[(2, Finite(1)), (3, Finite(1)), (5, Infinite)]);
        assert_eq!(a.zeta(2).unwrap(), Finite(1));
        assert_eq!(a.zeta(7).unwrap(), Finite(0));
        assert_eq!(a.zeta(5).unwrap(), Infinite);
        assert!(matches!(a.zeta(4), Err(Error::NotPrime { value: 4 })));
        let b = sn(&[(2, Finite(1)), (3, Finite(2)), (5, Infinite)]);
        assert_eq!(b.prime_set_p(), vec![2, 3]);
        assert_eq!(b.theta(3).unwrap(), 9);
        assert!(matches!(b.theta(5), Err(Error::InfiniteExponent { prime: 5 })));
        assert!(sn(&[(2, Infinite), (3, Infinite)]).prime_set_p().is_empty());
        assert_eq!(sn(&[(7, Finite(1))]).theta(7).unwrap(), 7);
    }

    #[test]
    fn truncation_examples() {
        let a = sn(&[(2, Finite(1)), (3, Finite(1)), (5, Infinite)]);
        let t = truncate(&a, 750).unwrap();
        assert_eq!(t.factors(), &[2, 3, 5, 5, 5]);
        assert_eq!(t.dim(), 750);
        assert_eq!(truncate(&sn(&[(2, Infinite)]), 16).unwrap().factors(), &[2, 2, 2, 2]);
        assert!(matches!(
            truncate(&sn(&[(2, Finite(1)), (3, Finite(1))]), 5),
            Err(Error::BudgetTooSmall { budget: 5, needed: 6 })
        ));
        assert_eq!(truncate(&sn(&[(2, Infinite), (3, Infinite)]), 100).unwrap().factors(), &[2, 3, 2, 3, 2]);
    }

    #[test]
    fn supernatural_json() {
        let a = SupernaturalNumber::from_json(r#"{"exponents": {"2": 1, "3": 1, "5": "inf"}}"#).unwrap();
        assert_eq!(a.zeta(5).unwrap(), Infinite);
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(s, r#"{"exponents":{"2":1,"3":1,"5":"inf"}}"#);
        assert!(SupernaturalNumber::from_json(r#"{"exponents": {"4": 1}}"#).is_err());
        let t: TruncatedUHF = serde_json::from_str(r#"{"factors":[2,3,5,5,5]}"#).unwrap();
        assert_eq!(t.dim(), 750);
    }

    #[test]
    fn embed_matches_kron() {
        let t = TruncatedUHF::new(vec![2, 3]).unwrap();
        let u2 = CMatrix::from_diag(&[ONE, C64::new(-1.0, 0.0)]);
        let e = t.embed_factor(&u2, 0).unwrap();
        assert_eq!(e, u2.kron(&CMatrix::identity(3)));
        let x = CMatrix::from_fn(3, |i, j| C64::new(i as f64, j as f64));
        assert_eq!(t.embed_factor(&x, 1).unwrap(), CMatrix::identity(2).kron(&x));
        assert!(matches!(t.embed_factor(&x, 0), Err(Error::DimMismatch { .. })));
        let tr = t.embed_factor(&x, 1).unwrap().normalized_trace();
        assert!((tr - x.trace() / 3.0).norm() < 1e-14);
        assert_eq!(t.embed_product(&[u2.clone(), x.clone()]).unwrap(), u2.kron(&x));
    }

    #[test]
    fn k0_examples() {
        assert_eq!(k0_reduce(&K0Value::new(375, 750), 2, 2).unwrap().value, 1);
        assert_eq!(k0_reduce(&K0Value::new(250, 750), 3, 3).unwrap().value, 1);
        assert_eq!(k0_reduce(&K0Value::new(0, 750), 3, 3).unwrap().value, 0);
        assert!(matches!(k0_reduce(&K0Value::new(1, 10), 3, 3), Err(Error::NotEmbeddable { .. })));
    }

    /// Coset oracle: `n/d` reduces to zero iff it lies in `(theta/d) Z`.
    #[test]
    fn k0_zero_iff_in_sublattice() {
        for (d, p, theta) in [(6u64, 2u64, 2u64), (6, 3, 3), (750, 2, 2), (750, 3, 3), (36, 2, 4), (180, 3, 9)] {
            if (d / theta) % p == 0 {
                continue;
            }
            // Enumerate the sublattice (theta/d)Z inside [-1, 1] as numerators over d.
            let lattice: std::collections::BTreeSet<i64> =
                (-(d as i64)..=(d as i64)).map(|k| k * theta as i64).filter(|n| n.abs() <= d as i64).collect();
            for n in -(d as i64)..=(d as i64) {
                let r = k0_reduce(&K0Value::new(n, d), p, theta).unwrap();
                assert_eq!(r.value == 0, lattice.contains(&n), "d={d} n={n}");
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn k0_reduce_is_additive(a in -2000i64..2000, b in -2000i64..2000) {
            for (d, p, theta) in [(750u64, 2u64, 2u64), (750, 3, 3), (180, 3, 9)] {
                let ra = k0_reduce(&K0Value::new(a, d), p, theta).unwrap();
                let rb = k0_reduce(&K0Value::new(b, d), p, theta).unwrap();
                let rs = k0_reduce(&K0Value::new(a + b, d), p, theta).unwrap();
                proptest::prop_assert_eq!(rs, ra.add(&rb));
            }
        }
    }

    #[test]
    fn k0_stage_independent() {
        let v = K0Value::new(7, 30);
        let a = k0_reduce(&v, 2, 2).unwrap();
        let b = k0_reduce(&v.rescale(150).unwrap(), 2, 2).unwrap();
        assert_eq!(a, b);
    }
}
