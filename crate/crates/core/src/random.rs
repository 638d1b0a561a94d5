//! Seeded random matrices for tests, benchmarks and the self-test suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::algebra::{polar_unitary, CMatrix, SelfAdjoint, Unitary, C64};

pub type TestRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `index` derived from `seed`.
pub fn sub_rng(seed: u64, index: u64) -> TestRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index.wrapping_add(1));
    r
}

pub fn ginibre(n: usize, rng: &mut impl Rng) -> CMatrix {
    CMatrix::from_fn(n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im)
    })
}

/// Haar-distributed unitary (polar part of a Ginibre matrix).
pub fn haar_unitary(n: usize, rng: &mut impl Rng) -> Unitary {
    loop {
        if let Ok(u) = polar_unitary(&ginibre(n, rng), 1e-12) {
            return u;
        }
    }
}

/// Random self-adjoint matrix with operator norm exactly `norm`.
pub fn random_self_adjoint(n: usize, norm: f64, rng: &mut impl Rng) -> SelfAdjoint {
    let g = ginibre(n, rng);
    let h = g.hermitian_part();
    let s = h.op_norm_sa();
    if s == 0.0 {
        return SelfAdjoint::zeros(n);
    }
    SelfAdjoint::from_hermitian_part(&h.scale_re(norm / s))
}
