//! Parsing of command-line operands: unitaries, actions, cocycles, loops.

use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use uhfz2_core::actions::{clock, coboundary, make_model_action, shift, ActionSpec, Cocycle, ModelSpec, ProductAction};
use uhfz2_core::algebra::{expm_sa, CMatrix, Unitary};
use uhfz2_core::path::UnitaryPath;
use uhfz2_core::random::{ginibre, random_self_adjoint, TestRng};
use uhfz2_core::uhf::TruncatedUHF;
use uhfz2_core::{Config, Error, Result};

pub fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn from_value<T: for<'de> Deserialize<'de>>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::invalid(format!("{what}: {e}")))
}

/// `clock:q`, `shift:q` and `id:q`, optionally raised to a power as in
/// `clock:7^3`; anything else is read as a matrix JSON file.
pub fn parse_unitary(spec: &str, cfg: &Config) -> Result<Unitary> {
    if let Some((kind, rest)) = spec.split_once(':') {
        let (q, power) = match rest.split_once('^') {
            Some((q, k)) => (q, k.parse::<i64>().map_err(|_| Error::invalid(format!("bad power in {spec}")))?),
            None => (rest, 1),
        };
        let q: usize = q.parse().map_err(|_| Error::invalid(format!("bad size in {spec}")))?;
        if q == 0 {
            return Err(Error::invalid("matrix size must be positive"));
        }
        return match kind {
            "clock" => Ok(clock(q).pow(power)),
            "shift" => Ok(shift(q).pow(power)),
            "id" => Ok(Unitary::identity(q)),
            _ => Err(Error::invalid(format!("unknown generator {kind:?}; expected clock, shift or id"))),
        };
    }
    let m: CMatrix = from_value(read_json(Path::new(spec))?, spec)?;
    Unitary::new(m, cfg.unitarity_tol)
}

/// An action file holds either an action spec (`trunc`, `gen1`, `gen2`) or
/// a model spec (`f`, optional `L1`/`L2`, `trunc` or `sn`).
pub fn load_action(path: &Path, budget: Option<usize>) -> Result<ProductAction> {
    let v = read_json(path)?;
    if v.get("gen1").is_some() || v.get("gen2").is_some() {
        let spec: ActionSpec = from_value(v, "action spec")?;
        return ProductAction::from_spec(&spec);
    }
    let spec: ModelSpec = from_value(v, "model spec")?;
    let trunc = spec.resolve_trunc(budget)?;
    make_model_action(&spec, &trunc)
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    from_value(read_json(path)?, "model spec")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CocycleJson {
    u1: CMatrix,
    u2: CMatrix,
}

pub fn load_cocycle(path: &Path, action: &ProductAction, cfg: &Config) -> Result<Cocycle> {
    let c: CocycleJson = from_value(read_json(path)?, "cocycle")?;
    let u1 = Unitary::new(c.u1, cfg.unitarity_tol)?;
    let u2 = Unitary::new(c.u2, cfg.unitarity_tol)?;
    if u1.dim() != action.dim() || u2.dim() != action.dim() {
        return Err(Error::DimMismatch { expected: action.dim(), found: u1.dim().max(u2.dim()) });
    }
    Ok(Cocycle::new(u1, u2, action.action()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopJson {
    times: Vec<f64>,
    samples: Vec<CMatrix>,
}

pub fn load_loop(path: &Path, cfg: &Config) -> Result<UnitaryPath> {
    let l: LoopJson = from_value(read_json(path)?, "loop")?;
    if l.times.len() != l.samples.len() {
        return Err(Error::invalid("loop needs one time per sample"));
    }
    let samples = l
        .times
        .into_iter()
        .zip(l.samples)
        .map(|(t, m)| Ok((t, Unitary::new(m, cfg.unitarity_tol)?)))
        .collect::<Result<Vec<_>>>()?;
    UnitaryPath::new(samples)
}

/// `exp(2 pi i h)` with `h` a random self-adjoint element of the given norm
/// supported on `factors`.
pub fn random_local_unitary(trunc: &TruncatedUHF, factors: &[usize], norm: f64, rng: &mut TestRng) -> Result<Unitary> {
    check_factors(trunc, factors)?;
    let sub = trunc.sub(factors)?;
    let h = random_self_adjoint(sub.dim(), norm, rng);
    Ok(Unitary::new_unchecked(trunc.embed_on(factors, expm_sa(&h).matrix())?))
}

pub fn random_coboundary(action: &ProductAction, factors: &[usize], norm: f64, rng: &mut TestRng) -> Result<Cocycle> {
    let v0 = random_local_unitary(action.trunc(), factors, norm, rng)?;
    Ok(coboundary(&v0, action.action()))
}

/// One unit-norm random element on each listed factor.
pub fn random_f_set(trunc: &TruncatedUHF, factors: &[usize], rng: &mut TestRng) -> Result<Vec<CMatrix>> {
    check_factors(trunc, factors)?;
    factors
        .iter()
        .map(|&k| {
            let x = ginibre(trunc.factors()[k], rng);
            trunc.embed_factor(&x.scale_re(1.0 / x.op_norm()), k)
        })
        .collect()
}

pub fn check_factors(trunc: &TruncatedUHF, factors: &[usize]) -> Result<()> {
    if let Some(k) = factors.iter().find(|&&k| k >= trunc.len()) {
        return Err(Error::invalid(format!("factor index {k} out of range for {} factors", trunc.len())));
    }
    Ok(())
}
