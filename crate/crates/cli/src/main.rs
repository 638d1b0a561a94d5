mod inputs;
mod schema;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};
use uhfz2_core::actions::{make_model_action, Action, Cocycle, ProductAction};
use uhfz2_core::algebra::{commutator, expm_sa};
use uhfz2_core::classify::{approximate_match, ek_rounds, invariants_equal, TwistedAction};
use uhfz2_core::homotopy::{boundary_map, disk_extension, disk_extension_shrink, lip_shrink_loop, short_path};
use uhfz2_core::invariants::{bott_report, finite_primes, kappa_fast, kappa_loop, pair_invariant_report};
use uhfz2_core::path::UnitaryPath;
use uhfz2_core::random::{random_self_adjoint, rng_from_seed, TestRng};
use uhfz2_core::rohlin::{build_tower, vanish_cocycle, verify_tower, verify_tower_dense};
use uhfz2_core::selftest::run_selftest;
use uhfz2_core::{Config, Error, Result};

use inputs::*;

#[derive(Parser)]
#[command(name = "uhfz2", version, about = "Invariants, homotopies and cohomology vanishing for Z^2-actions on truncated UHF algebras")]
#[command(args_conflicts_with_subcommands = false, subcommand_required = false)]
struct Cli {
    /// JSON file overriding numerical tolerances.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Dimension budget used to truncate supernatural numbers.
    #[arg(long, global = true)]
    budget: Option<usize>,
    /// Unitarity tolerance for input matrices.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Write the JSON result to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for `selftest` (default: available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the JSON formats used for inputs and outputs.
    #[arg(long)]
    schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Bott index of an almost commuting pair of unitaries.
    Bott {
        /// `clock:q`, `shift:q`, `id:q` (optionally `^k`) or a matrix file.
        #[arg(long)]
        v: String,
        #[arg(long)]
        w: String,
    },
    /// `kappa` of an almost cocycle.
    Kappa(KappaArgs),
    /// Invariant `[alpha](p)` of a product-type action for every finite prime.
    Invariant {
        #[arg(long)]
        action: PathBuf,
        /// Restrict to these primes.
        #[arg(long, value_delimiter = ',')]
        primes: Option<Vec<u64>>,
    },
    /// Resolve a model spec into its truncation, partition and action.
    Model {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Build a Rohlin tower and measure its relations.
    Towers {
        #[arg(long)]
        action: PathBuf,
        /// Factors the tower must avoid.
        #[arg(long, value_delimiter = ',')]
        protected: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        min_height: usize,
        /// Factors carrying one random element of `F` each.
        #[arg(long, value_delimiter = ',')]
        f_factors: Vec<usize>,
        #[arg(long, default_value_t = 1e-9)]
        eps: f64,
        /// Also measure the relations with dense products on the full algebra.
        #[arg(long)]
        dense: bool,
    },
    /// Write an admissible cocycle as an approximate coboundary.
    Vanish {
        #[arg(long)]
        action: PathBuf,
        #[command(flatten)]
        source: CocycleSource,
        #[arg(long, value_delimiter = ',')]
        f_factors: Vec<usize>,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
    },
    /// Lipschitz logarithm of a loop with zero winding.
    Shrink {
        /// Loop file; a random loop of `--dim` is used when absent.
        #[arg(long = "loop")]
        loop_file: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        dim: usize,
        /// Amplitude of the random loop generator.
        #[arg(long, default_value_t = 0.2)]
        amp: f64,
        /// Lipschitz constant of the loop (measured when absent).
        #[arg(long)]
        c: Option<f64>,
        #[arg(long, default_value_t = 0.2)]
        eps: f64,
    },
    /// Boundary map of an admissible cocycle and its extension to the square.
    Extend {
        #[arg(long)]
        action: PathBuf,
        #[command(flatten)]
        source: CocycleSource,
        /// Map the boundary into the commutant of these factors.
        #[arg(long, value_delimiter = ',')]
        commutant: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
        /// Always extend through the shrinking construction.
        #[arg(long)]
        shrink: bool,
    },
    /// Coboundary perturbation of `alpha` matching `beta` on `F`.
    Match {
        #[arg(long)]
        alpha: PathBuf,
        #[command(flatten)]
        beta: BetaSource,
        #[arg(long, value_delimiter = ',')]
        f_factors: Vec<usize>,
        #[arg(long, default_value_t = 0.25)]
        eps: f64,
    },
    /// Alternating perturbation rounds between `alpha` and `beta`.
    Ek {
        #[arg(long)]
        alpha: PathBuf,
        #[command(flatten)]
        beta: BetaSource,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
        /// Factors of `F`; round `r` uses the first `r` of them.
        #[arg(long, value_delimiter = ',', default_value = "0,1,4")]
        f_factors: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.3,0.3")]
        eps: Vec<f64>,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Criterion ids to run (all when absent).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

#[derive(Args)]
struct KappaArgs {
    /// Action file; the trivial action when absent.
    #[arg(long)]
    action: Option<PathBuf>,
    #[arg(long, required_unless_present = "cocycle", requires = "u2")]
    u1: Option<String>,
    #[arg(long, requires = "u1")]
    u2: Option<String>,
    /// Cocycle file with `u1` and `u2`.
    #[arg(long, conflicts_with_all = ["u1", "u2"])]
    cocycle: Option<PathBuf>,
    /// Also compute `kappa` through the closed path of short logarithms.
    #[arg(long = "loop")]
    with_loop: bool,
}

#[derive(Args)]
struct CocycleSource {
    /// Cocycle file with `u1` and `u2`.
    #[arg(long)]
    cocycle: Option<PathBuf>,
    /// Factors carrying a random coboundary (used when no file is given).
    #[arg(long, value_delimiter = ',', default_value = "0")]
    support: Vec<usize>,
    /// Norm of the self-adjoint generating the random coboundary.
    #[arg(long, default_value_t = 0.02)]
    norm: f64,
}

#[derive(Args)]
struct BetaSource {
    /// Second action file; when absent `beta` is `alpha` conjugated by a
    /// random local unitary.
    #[arg(long)]
    beta: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    perturb_support: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    norm: f64,
}

struct Ctx {
    cfg: Config,
    seed: u64,
    budget: Option<usize>,
    threads: usize,
}

impl Ctx {
    fn rng(&self) -> TestRng {
        rng_from_seed(self.seed)
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialize")
}

fn load_config(path: Option<&Path>, tol: Option<f64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::invalid(format!("{}: {e}", p.display())))?;
            Config::from_json(&text)?
        }
        None => Config::default(),
    };
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::invalid("--tol must be positive"));
        }
        cfg.unitarity_tol = t;
    }
    Ok(cfg)
}

fn trivial_action(d: usize) -> Action {
    Action::trivial(d)
}

fn cocycle_from(source: &CocycleSource, action: &ProductAction, ctx: &Ctx) -> Result<Cocycle> {
    match &source.cocycle {
        Some(p) => load_cocycle(p, action, &ctx.cfg),
        None => random_coboundary(action, &source.support, source.norm, &mut ctx.rng()),
    }
}

fn beta_from(source: &BetaSource, alpha: &ProductAction, ctx: &Ctx, rng: &mut TestRng) -> Result<TwistedAction> {
    match &source.beta {
        Some(p) => Ok(TwistedAction::product(load_action(p, ctx.budget)?)),
        None => {
            let v0 = random_local_unitary(alpha.trunc(), &source.perturb_support, source.norm, rng)?;
            TwistedAction::conjugated(alpha.clone(), v0)
        }
    }
}

fn cmd_bott(v: &str, w: &str, ctx: &Ctx) -> Result<Value> {
    let v = parse_unitary(v, &ctx.cfg)?;
    let w = parse_unitary(w, &ctx.cfg)?;
    if v.dim() != w.dim() {
        return Err(Error::DimMismatch { expected: v.dim(), found: w.dim() });
    }
    let (b, residual) = bott_report(&v, &w, &ctx.cfg)?;
    let comm = commutator(v.matrix(), w.matrix()).op_norm();
    Ok(json!({ "bott": b, "commutator_norm": comm, "residual": residual }))
}

fn cmd_kappa(a: &KappaArgs, ctx: &Ctx) -> Result<Value> {
    let product = a.action.as_deref().map(|p| load_action(p, ctx.budget)).transpose()?;
    let (u1, u2) = match (&a.cocycle, &a.u1, &a.u2) {
        (Some(p), _, _) => {
            let pa = product.clone().ok_or_else(|| Error::invalid("--cocycle needs --action"))?;
            let c = load_cocycle(p, &pa, &ctx.cfg)?;
            let [u1, u2] = c.u;
            (u1, u2)
        }
        (None, Some(x), Some(y)) => (parse_unitary(x, &ctx.cfg)?, parse_unitary(y, &ctx.cfg)?),
        _ => return Err(Error::invalid("give --u1 and --u2, or --cocycle")),
    };
    if u1.dim() != u2.dim() {
        return Err(Error::DimMismatch { expected: u1.dim(), found: u2.dim() });
    }
    let action = match &product {
        Some(p) if p.dim() != u1.dim() => return Err(Error::DimMismatch { expected: p.dim(), found: u1.dim() }),
        Some(p) => p.action().clone(),
        None => trivial_action(u1.dim()),
    };
    let k = kappa_fast(&u1, &u2, &action, &ctx.cfg)?;
    let mut out = json!({ "kappa": k, "defect": k.defect, "admissible": k.integer_form == 0 });
    if a.with_loop {
        let h1 = short_path(&u1, &ctx.cfg)?;
        let h2 = short_path(&u2, &ctx.cfg)?;
        let kl = kappa_loop(&u1, &u2, &action, &h1, &h2, &ctx.cfg)?;
        out["kappa_loop"] = to_value(&kl);
        out["routes_agree"] = json!(kl.integer_form == k.integer_form);
    }
    Ok(out)
}

fn cmd_invariant(action: &Path, primes: Option<&[u64]>, ctx: &Ctx) -> Result<Value> {
    let alpha = load_action(action, ctx.budget)?;
    let id = ProductAction::identity(alpha.trunc());
    let primes = primes.map(<[u64]>::to_vec).unwrap_or_else(|| finite_primes(alpha.trunc()));
    let mut out = Map::new();
    let mut reports = Map::new();
    for p in primes {
        let r = pair_invariant_report(&id, &alpha, p, &ctx.cfg)?;
        out.insert(p.to_string(), json!(r.residue.value));
        reports.insert(p.to_string(), to_value(&r));
    }
    out.insert("trunc".into(), to_value(alpha.trunc()));
    out.insert("reports".into(), Value::Object(reports));
    Ok(Value::Object(out))
}

fn cmd_model(spec: &Path, ctx: &Ctx) -> Result<Value> {
    let spec = load_model(spec)?;
    let trunc = spec.resolve_trunc(ctx.budget)?;
    let part = spec.partition(&trunc)?;
    let action = make_model_action(&spec, &trunc)?;
    let lf: Map<String, Value> = part.lf.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    Ok(json!({
        "trunc": trunc,
        "dim": trunc.dim(),
        "partition": { "Lf": lf, "L1": part.l1, "L2": part.l2 },
        "action": action.to_spec(),
        "commutation_defect": action.action().commutation_defect(),
    }))
}

fn cmd_towers(
    action: &Path,
    protected: &[usize],
    min_height: usize,
    f_factors: &[usize],
    eps: f64,
    dense: bool,
    ctx: &Ctx,
) -> Result<Value> {
    let a = load_action(action, ctx.budget)?;
    check_factors(a.trunc(), protected)?;
    let f_set = random_f_set(a.trunc(), f_factors, &mut ctx.rng())?;
    let tower = build_tower(&a, protected, min_height)?;
    let report = verify_tower(&tower, &a, &f_set, eps)?;
    let mut out = json!({ "tower": tower, "report": report });
    if dense {
        out["dense_report"] = to_value(&verify_tower_dense(&tower, a.action(), &f_set, eps));
    }
    Ok(out)
}

fn cmd_vanish(action: &Path, source: &CocycleSource, f_factors: &[usize], eps: f64, ctx: &Ctx) -> Result<Value> {
    let a = load_action(action, ctx.budget)?;
    let c = cocycle_from(source, &a, ctx)?;
    let mut rng = rng_from_seed(ctx.seed.wrapping_add(1));
    let f_set = random_f_set(a.trunc(), f_factors, &mut rng)?;
    let res = vanish_cocycle(&a, &c, &f_set, eps, &ctx.cfg)?;
    Ok(json!({ "cocycle_defect": c.defect, "report": res.report }))
}

fn random_loop(dim: usize, amp: f64, rng: &mut TestRng) -> Result<UnitaryPath> {
    if dim == 0 {
        return Err(Error::invalid("--dim must be positive"));
    }
    let h1 = random_self_adjoint(dim, amp, rng);
    let h2 = random_self_adjoint(dim, amp / 2.0, rng);
    UnitaryPath::sample(256, |t| &expm_sa(&h1.scale((PI * t).sin())) * &expm_sa(&h2.scale((2.0 * PI * t).sin())))
}

fn cmd_shrink(loop_file: Option<&Path>, dim: usize, amp: f64, c: Option<f64>, eps: f64, ctx: &Ctx) -> Result<Value> {
    let u = match loop_file {
        Some(p) => load_loop(p, &ctx.cfg)?,
        None => random_loop(dim, amp, &mut ctx.rng())?,
    };
    let c = c.unwrap_or_else(|| u.lip_estimate());
    let r = lip_shrink_loop(&u, c, eps, &ctx.cfg)?;
    Ok(json!({
        "dim": u.dim(),
        "knots": r.knots,
        "c": r.c,
        "c_prime": r.c_prime,
        "lip": r.lip,
        "max_error": r.max_error,
        "eps": eps,
        "max_knot_commutator": r.max_knot_commutator,
    }))
}

fn cmd_extend(
    action: &Path,
    source: &CocycleSource,
    commutant: Option<&[usize]>,
    eps: f64,
    shrink: bool,
    ctx: &Ctx,
) -> Result<Value> {
    let a = load_action(action, ctx.budget)?;
    let c = cocycle_from(source, &a, ctx)?;
    if let Some(f) = commutant {
        check_factors(a.trunc(), f)?;
    }
    let a0 = commutant.map(|f| (a.trunc(), f));
    let z = boundary_map(&c.u[0], &c.u[1], a.action(), a0, eps, &ctx.cfg)?;
    let disk = if shrink { disk_extension_shrink(&z, &ctx.cfg)? } else { disk_extension(&z, &ctx.cfg)? };
    Ok(json!({
        "boundary": {
            "lip_estimate": z.lip_estimate,
            "conditions": z.conditions,
            "commutant_correction": z.commutant_correction,
        },
        "disk": {
            "method": disk.method,
            "knots": disk.knots,
            "c": disk.c,
            "c_prime": disk.c_prime,
            "lip_estimate": disk.lip_estimate,
            "restriction_error": disk.restriction_error,
            "guard": disk.guard,
        },
    }))
}

fn cmd_match(alpha: &Path, beta: &BetaSource, f_factors: &[usize], eps: f64, ctx: &Ctx) -> Result<Value> {
    let a = load_action(alpha, ctx.budget)?;
    let mut rng = ctx.rng();
    let b = beta_from(beta, &a, ctx, &mut rng)?;
    let f_set = random_f_set(a.trunc(), f_factors, &mut rng)?;
    let alpha = TwistedAction::product(a);
    let cmp = invariants_equal(&alpha, &b, None, &ctx.cfg)?;
    let m = approximate_match(&alpha, &b, &f_set, eps, &ctx.cfg)?;
    Ok(json!({
        "invariants": cmp,
        "cocycle_factors": m.cocycle_factors,
        "cocycle_defect": m.cocycle.defect,
        "report": m.report,
    }))
}

fn cmd_ek(alpha: &Path, beta: &BetaSource, rounds: usize, f_factors: &[usize], eps: &[f64], ctx: &Ctx) -> Result<Value> {
    let a = load_action(alpha, ctx.budget)?;
    check_factors(a.trunc(), f_factors)?;
    if f_factors.is_empty() {
        return Err(Error::invalid("--f-factors must be nonempty"));
    }
    let mut rng = ctx.rng();
    let b = beta_from(beta, &a, ctx, &mut rng)?;
    let elements = random_f_set(a.trunc(), f_factors, &mut rng)?;
    let schedule: Vec<_> = (1..=rounds.max(1)).map(|r| elements[..r.min(elements.len())].to_vec()).collect();
    let alpha = TwistedAction::product(a);
    let tr = ek_rounds(&alpha, &b, rounds, &schedule, eps, &ctx.cfg)?;
    Ok(to_value(&tr))
}

fn cmd_selftest(only: Option<&[u32]>, ctx: &Ctx) -> Result<(Value, bool)> {
    let report = run_selftest(ctx.seed, only, ctx.threads, &ctx.cfg)?;
    Ok((to_value(&report), report.passed))
}

/// Runs a parsed command; the flag is false when the command completed but
/// reported a failed check.
fn dispatch(cmd: &Command, ctx: &Ctx) -> Result<(Value, bool)> {
    let ok = |v: Value| Ok((v, true));
    match cmd {
        Command::Bott { v, w } => ok(cmd_bott(v, w, ctx)?),
        Command::Kappa(a) => ok(cmd_kappa(a, ctx)?),
        Command::Invariant { action, primes } => ok(cmd_invariant(action, primes.as_deref(), ctx)?),
        Command::Model { spec } => ok(cmd_model(spec, ctx)?),
        Command::Towers { action, protected, min_height, f_factors, eps, dense } => {
            ok(cmd_towers(action, protected, *min_height, f_factors, *eps, *dense, ctx)?)
        }
        Command::Vanish { action, source, f_factors, eps } => ok(cmd_vanish(action, source, f_factors, *eps, ctx)?),
        Command::Shrink { loop_file, dim, amp, c, eps } => {
            ok(cmd_shrink(loop_file.as_deref(), *dim, *amp, *c, *eps, ctx)?)
        }
        Command::Extend { action, source, commutant, eps, shrink } => {
            ok(cmd_extend(action, source, commutant.as_deref(), *eps, *shrink, ctx)?)
        }
        Command::Match { alpha, beta, f_factors, eps } => ok(cmd_match(alpha, beta, f_factors, *eps, ctx)?),
        Command::Ek { alpha, beta, rounds, f_factors, eps } => ok(cmd_ek(alpha, beta, *rounds, f_factors, eps, ctx)?),
        Command::Selftest { only } => cmd_selftest(only.as_deref(), ctx),
    }
}

fn error_json(e: &Error) -> Value {
    let mut v = to_value(e);
    v["message"] = json!(e.to_string());
    v
}

fn emit(v: &Value, out: Option<&Path>) -> std::result::Result<(), String> {
    let text = serde_json::to_string_pretty(v).expect("values serialize") + "\n";
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> ExitCode {
    let out = cli.out.as_deref();
    let finish = |v: Value, code: u8| match emit(&v, out) {
        Ok(()) => ExitCode::from(code),
        Err(msg) => {
            println!("{}", json!({ "error": "InvalidInput", "message": msg }));
            ExitCode::from(1)
        }
    };
    if cli.schema {
        return finish(schema::schemas(), 0);
    }
    let Some(cmd) = &cli.command else {
        return finish(json!({ "error": "Usage", "message": "missing subcommand (try --help)" }), 1);
    };
    let cfg = match load_config(cli.config.as_deref(), cli.tol) {
        Ok(c) => c,
        Err(e) => return finish(error_json(&e), 1),
    };
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let ctx = Ctx { cfg, seed: cli.seed, budget: cli.budget, threads };
    match dispatch(cmd, &ctx) {
        Ok((v, true)) => finish(v, 0),
        Ok((v, false)) => finish(v, 1),
        Err(e) => finish(error_json(&e), if e.is_obstruction() { 2 } else { 1 }),
    }
}

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => run(cli),
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            println!("{}", json!({ "error": "Usage", "message": msg.trim() }));
            ExitCode::from(1)
        }
    }
}
