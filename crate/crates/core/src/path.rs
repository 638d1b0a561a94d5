//! Sampled paths of unitaries and of self-adjoint matrices.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::algebra::{
    cis_turns, conjugate_diag, hermitian_eigen, phases_avoiding_minus_one, unitary_log, CMatrix, SelfAdjoint,
    Unitary, C64,
};
use crate::error::{Error, Result};

/// Endpoints closer than this count as equal (closed loops, joins).
pub const CLOSURE_TOL: f64 = 1e-9;

/// Path `t -> U(t)` on `[0, 1]` given by samples.
///
/// Adjacent samples satisfy `||U(t_{k+1}) U(t_k)* - 1|| < sqrt 2`, so each
/// step ratio has spectrum in the open right half plane and a well-defined
/// principal logarithm. The eigenvalue phases of every step ratio are kept:
/// they give the step lengths and the discrete trace winding.
#[derive(Clone, Debug)]
pub struct UnitaryPath {
    times: Vec<f64>,
    values: Vec<Unitary>,
    step_phases: Vec<Vec<f64>>,
    lip: f64,
    closed: bool,
}

fn step_spectrum(a: &Unitary, b: &Unitary, index: usize) -> Result<Vec<f64>> {
    let r = b.matrix() * &a.adjoint().into_matrix();
    let phases = phases_avoiding_minus_one(&r);
    let mut gap: f64 = 0.0;
    for &p in &phases {
        if !p.is_finite() || p.abs() >= 0.25 {
            return Err(Error::StepTooCoarse { gap: if p.is_finite() { (cis_turns(p) - 1.0).norm() } else { 2.0 }, index });
        }
        gap = gap.max((cis_turns(p) - 1.0).norm());
    }
    if gap >= SQRT_2 {
        return Err(Error::StepTooCoarse { gap, index });
    }
    Ok(phases)
}

/// `||e^{2 pi i phi} - 1||` maximised over the phases.
fn step_length(phases: &[f64]) -> f64 {
    phases.iter().map(|&p| (cis_turns(p) - 1.0).norm()).fold(0.0, f64::max)
}

impl UnitaryPath {
    pub fn new(samples: Vec<(f64, Unitary)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("a path needs at least two samples"));
        }
        let d = samples[0].1.dim();
        let (times, values): (Vec<f64>, Vec<Unitary>) = samples.into_iter().unzip();
        if times[0] != 0.0 || *times.last().unwrap() != 1.0 {
            return Err(Error::invalid("path times must start at 0 and end at 1"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("path times must be strictly increasing"));
        }
        if values.iter().any(|u| u.dim() != d) {
            return Err(Error::invalid("path samples have different dimensions"));
        }
        let mut step_phases = Vec::with_capacity(values.len() - 1);
        let mut lip: f64 = 0.0;
        for k in 0..values.len() - 1 {
            let ph = step_spectrum(&values[k], &values[k + 1], k)?;
            lip = lip.max(step_length(&ph) / (times[k + 1] - times[k]));
            step_phases.push(ph);
        }
        let closed = values[0].dist(values.last().unwrap()) <= CLOSURE_TOL;
        Ok(UnitaryPath { times, values, step_phases, lip, closed })
    }

    /// Samples `f` on the uniform grid with `steps` intervals.
    pub fn sample(steps: usize, f: impl Fn(f64) -> Unitary) -> Result<Self> {
        let steps = steps.max(1);
        UnitaryPath::new((0..=steps).map(|k| { let t = k as f64 / steps as f64; (t, f(t)) }).collect())
    }

    pub fn constant(u: &Unitary) -> Self {
        UnitaryPath::new(vec![(0.0, u.clone()), (1.0, u.clone())]).expect("constant path is valid")
    }

    /// `t -> exp(2 pi i t h) * base`, sampled so each step rotates phases by
    /// at most `1/8`.
    pub fn exp_path(h: &SelfAdjoint, base: Option<&Unitary>) -> Self {
        let (vals, q) = hermitian_eigen(h.matrix());
        let norm = vals.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let steps = ((norm * 8.0).ceil() as usize).max(1);
        let at = |t: f64| {
            let d: Vec<C64> = vals.iter().map(|&x| cis_turns(t * x)).collect();
            let e = Unitary::new_unchecked(conjugate_diag(&q, &d));
            match base {
                Some(b) => &e * b,
                None => e,
            }
        };
        UnitaryPath::sample(steps, at).expect("exponential path steps are short")
    }

    pub fn dim(&self) -> usize {
        self.values[0].dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Unitary] {
        &self.values
    }

    pub fn start(&self) -> &Unitary {
        &self.values[0]
    }

    pub fn end(&self) -> &Unitary {
        self.values.last().unwrap()
    }

    /// Maximum of `||U(t_{k+1}) - U(t_k)|| / (t_{k+1} - t_k)`.
    pub fn lip_estimate(&self) -> f64 {
        self.lip
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Eigenvalue phases (turns) of each step ratio `U(t_{k+1}) U(t_k)*`.
    pub fn step_phases(&self) -> &[Vec<f64>] {
        &self.step_phases
    }

    /// Sum over steps of `tau(log(U_{k+1} U_k*)) / (2 pi i)`, unrounded.
    pub fn raw_trace_winding(&self) -> f64 {
        let d = self.dim() as f64;
        self.step_phases.iter().map(|ph| ph.iter().sum::<f64>()).sum::<f64>() / d
    }

    /// Value at `t`, interpolating geodesically between neighbouring samples.
    pub fn eval(&self, t: f64) -> Unitary {
        let t = t.clamp(0.0, 1.0);
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return self.values[k].clone(),
            Err(k) => k - 1,
        };
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let s = (t - t0) / (t1 - t0);
        let r = Unitary::new_unchecked(self.values[k + 1].matrix() * &self.values[k].adjoint().into_matrix());
        let h = unitary_log(&r, 0.0, 0.0).expect("step ratio avoids -1");
        &crate::algebra::expm_sa(&h.scale(s)) * &self.values[k]
    }

    /// `t -> U(1 - t)`.
    pub fn reversed(&self) -> Self {
        let n = self.values.len();
        let samples = (0..n).map(|k| (1.0 - self.times[n - 1 - k], self.values[n - 1 - k].clone()));
        let mut samples: Vec<(f64, Unitary)> = samples.collect();
        samples[0].0 = 0.0;
        samples[n - 1].0 = 1.0;
        UnitaryPath::new(samples).expect("reversal keeps steps short")
    }

    /// Pointwise image `t -> f(U(t))`.
    pub fn map(&self, f: impl Fn(&Unitary) -> Unitary) -> Result<Self> {
        UnitaryPath::new(self.times.iter().copied().zip(self.values.iter().map(f)).collect())
    }

    /// Joins paths end to end, each getting an equal share of `[0, 1]`.
    /// Consecutive endpoints must agree within `CLOSURE_TOL`.
    pub fn concat(parts: &[&UnitaryPath]) -> Result<Self> {
        let n = parts.len() as f64;
        let mut samples: Vec<(f64, Unitary)> = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                let gap = parts[i - 1].end().dist(p.start());
                if gap > CLOSURE_TOL {
                    return Err(Error::invalid(format!("path pieces {} and {} do not meet (gap {gap:.3e})", i - 1, i)));
                }
            }
            for (k, (t, u)) in p.times.iter().zip(p.values.iter()).enumerate() {
                if i > 0 && k == 0 {
                    continue;
                }
                samples.push(((i as f64 + t) / n, u.clone()));
            }
        }
        let last = samples.len() - 1;
        samples[last].0 = 1.0;
        UnitaryPath::new(samples)
    }

    /// Joins paths end to end, piece `i` getting a share of `[0, 1]`
    /// proportional to `weights[i]` (zero weights are bumped to a tiny share).
    pub fn concat_weighted(parts: &[&UnitaryPath], weights: &[f64]) -> Result<Self> {
        if parts.len() != weights.len() || parts.is_empty() {
            return Err(Error::invalid("one weight per path piece is required"));
        }
        let w: Vec<f64> = weights.iter().map(|&x| x.max(1e-9)).collect();
        let total: f64 = w.iter().sum();
        let mut start = 0.0;
        let mut samples: Vec<(f64, Unitary)> = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                let gap = parts[i - 1].end().dist(p.start());
                if gap > CLOSURE_TOL {
                    return Err(Error::invalid(format!("path pieces {} and {} do not meet (gap {gap:.3e})", i - 1, i)));
                }
            }
            let share = w[i] / total;
            for (k, (t, u)) in p.times.iter().zip(p.values.iter()).enumerate() {
                if i > 0 && k == 0 {
                    continue;
                }
                samples.push((start + share * t, u.clone()));
            }
            start += share;
        }
        let last = samples.len() - 1;
        samples[last].0 = 1.0;
        UnitaryPath::new(samples)
    }

    /// Resamples on a uniform grid with `steps` intervals.
    pub fn resample(&self, steps: usize) -> Result<Self> {
        UnitaryPath::sample(steps, |t| self.eval(t))
    }

    /// Maximum distance between the two paths at this path's sample times.
    pub fn sup_distance(&self, other: &UnitaryPath) -> f64 {
        self.times.iter().zip(self.values.iter()).map(|(&t, u)| u.dist(&other.eval(t))).fold(0.0, f64::max)
    }
}

/// JSON view of a sampled path.
#[derive(Serialize)]
pub struct PathJson {
    pub times: Vec<f64>,
    pub samples: Vec<CMatrix>,
    pub lip_estimate: f64,
    pub closed: bool,
}

impl From<&UnitaryPath> for PathJson {
    fn from(p: &UnitaryPath) -> Self {
        PathJson {
            times: p.times.clone(),
            samples: p.values.iter().map(|u| u.matrix().clone()).collect(),
            lip_estimate: p.lip,
            closed: p.closed,
        }
    }
}

/// Path of self-adjoint matrices given by samples on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SelfAdjointPath {
    pub times: Vec<f64>,
    pub values: Vec<SelfAdjoint>,
}

impl SelfAdjointPath {
    /// Maximum of `||h(t_{k+1}) - h(t_k)|| / (t_{k+1} - t_k)`.
    pub fn lip_estimate(&self) -> f64 {
        let mut lip: f64 = 0.0;
        for k in 0..self.values.len().saturating_sub(1) {
            let dh = self.values[k + 1].sub(&self.values[k]).norm();
            lip = lip.max(dh / (self.times[k + 1] - self.times[k]));
        }
        lip
    }

    /// Linear interpolation between samples.
    pub fn eval(&self, t: f64) -> SelfAdjoint {
        let t = t.clamp(0.0, 1.0);
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(k) => return self.values[k].clone(),
            Err(k) => k - 1,
        };
        let s = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        self.values[k].scale(1.0 - s).add(&self.values[k + 1].scale(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::expm_sa;
    use crate::random::{haar_unitary, random_self_adjoint, rng_from_seed};

    #[test]
    fn scalar_loop_winds_once() {
        let p = UnitaryPath::sample(16, |t| Unitary::scalar(3, cis_turns(t))).unwrap();
        assert!(p.is_closed());
        assert!((p.raw_trace_winding() - 1.0).abs() < 1e-12);
        assert!((p.lip_estimate() - 16.0 * (cis_turns(1.0 / 16.0) - 1.0).norm()).abs() < 1e-12);
    }

    #[test]
    fn coarse_step_rejected() {
        let r = UnitaryPath::new(vec![(0.0, Unitary::scalar(1, C64::new(1.0, 0.0))), (1.0, Unitary::scalar(1, C64::new(-1.0, 0.0)))]);
        assert!(matches!(r, Err(Error::StepTooCoarse { .. })));
        let r = UnitaryPath::new(vec![(0.0, Unitary::identity(1)), (0.0, Unitary::identity(1)), (1.0, Unitary::identity(1))]);
        assert!(r.is_err());
    }

    #[test]
    fn exp_path_matches_endpoint_and_winding() {
        let mut rng = rng_from_seed(1);
        let h = random_self_adjoint(6, 0.7, &mut rng);
        let p = UnitaryPath::exp_path(&h, None);
        assert!(p.end().dist(&expm_sa(&h)) < 1e-12);
        assert!((p.raw_trace_winding() - h.tau()).abs() < 1e-12);
    }

    #[test]
    fn eval_reproduces_samples_and_geodesics() {
        let mut rng = rng_from_seed(2);
        let u = haar_unitary(4, &mut rng);
        let h = random_self_adjoint(4, 0.3, &mut rng);
        let p = UnitaryPath::sample(4, |t| &expm_sa(&h.scale(t)) * &u).unwrap();
        let mid = p.eval(0.3);
        assert!(mid.dist(&(&expm_sa(&h.scale(0.3)) * &u)) < 1e-10);
        assert!(p.eval(0.5).dist(&p.values()[2]) < 1e-15);
    }

    #[test]
    fn concat_and_reverse() {
        let a = UnitaryPath::sample(4, |t| Unitary::scalar(2, cis_turns(0.5 * t))).unwrap();
        let b = UnitaryPath::sample(4, |t| Unitary::scalar(2, cis_turns(0.5 + 0.5 * t))).unwrap();
        let c = UnitaryPath::concat(&[&a, &b]).unwrap();
        assert!(c.is_closed());
        assert!((c.raw_trace_winding() - 1.0).abs() < 1e-12);
        let r = c.reversed();
        assert!((r.raw_trace_winding() + 1.0).abs() < 1e-12);
        assert!(UnitaryPath::concat(&[&b, &b]).is_err());
    }
}
