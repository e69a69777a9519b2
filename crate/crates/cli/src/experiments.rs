//! Experiment kinds: load inputs, call into the core crate, emit one
//! structured record per sub-result, and collect invariant violations.
//!
//! Every kind is deterministic for a fixed (config, seed, threads); the
//! seed steers only sampling choices such as Lipschitz-modulus pairs and
//! the randomized chain-check draws.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use arealab::{
    chain_constants, chain_estimate_check, estimate_capacity, exhaustion, gradient, io,
    lipschitz_modulus, maximal_at, maximal_function, precise_representative, riesz_potential,
    sublevel_set, synth, telescoping_identity_check, truncation_sets, vector_magnitude,
    verify_area_formula, weak_type_table, AreaOptions, BoxRegion, CapacityProblem, ConvMode,
    Error, ExhaustionConfig, ExhaustionMasks, Grid, KernelSpec, MappingProblem, RadiusLadder,
    RegionMask, ScalarField, SolverOptions, VectorField,
};

use crate::config::{self, ExperimentConfig};
use crate::report;
use crate::{CliResult, Failure};

pub struct RunOutput {
    pub records: Vec<Value>,
    pub violations: Vec<String>,
}

struct Ctx {
    config_dir: PathBuf,
    out_dir: PathBuf,
    seed: u64,
    threads: usize,
}

impl Ctx {
    fn resolve(&self, p: &str) -> PathBuf {
        let pb = PathBuf::from(p);
        if pb.is_absolute() {
            pb
        } else {
            self.config_dir.join(pb)
        }
    }

    fn scalar(&self, p: &str) -> CliResult<ScalarField> {
        let path = self.resolve(p);
        io::read_scalar(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    fn vector(&self, p: &str) -> CliResult<VectorField> {
        let path = self.resolve(p);
        io::read_vector(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    fn mask(&self, p: &str) -> CliResult<RegionMask> {
        let path = self.resolve(p);
        io::read_mask(&path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    fn save_scalar(&self, name: &str, f: &ScalarField) -> CliResult<()> {
        let path = self.out_dir.join(name);
        io::write_scalar(&path, f).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    fn save_mask(&self, name: &str, m: &RegionMask) -> CliResult<()> {
        let path = self.out_dir.join(name);
        io::write_mask(&path, m).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }
}

pub fn run(
    config_path: &Path,
    out_flag: Option<&Path>,
    threads: usize,
    seed_flag: Option<u64>,
) -> CliResult<()> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Failure::Input(format!("{}: {e}", config_path.display())))?;
    let cfg = config::parse(&text)?;
    let seed = seed_flag.unwrap_or(cfg.seed);
    let out_dir = out_flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Input(format!("{}: {e}", out_dir.display())))?;
    let ctx = Ctx {
        config_dir: config_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        out_dir: out_dir.clone(),
        seed,
        threads: threads.max(1),
    };
    let resolved = json!({
        "kind": cfg.kind,
        "seed": seed,
        "threads": ctx.threads,
        "out": out_dir.display().to_string(),
        "params": serde_json::to_value(&cfg.params).expect("params serialize"),
    });
    let output = dispatch(&cfg, &ctx)?;
    let report_path = report::write(&ctx.out_dir, &resolved, &output)?;
    println!("report: {}", report_path.display());
    if output.violations.is_empty() {
        Ok(())
    } else {
        Err(Failure::Invariant(output.violations.join("; ")))
    }
}

fn dispatch(cfg: &ExperimentConfig, ctx: &Ctx) -> CliResult<RunOutput> {
    match cfg.kind.as_str() {
        "maximal" => run_maximal(config::params(&cfg.params)?, ctx),
        "potential" => run_potential(config::params(&cfg.params)?, ctx),
        "capacity" => run_capacity(config::params(&cfg.params)?, ctx),
        "weak_type" => run_weak_type(config::params(&cfg.params)?, ctx),
        "truncation" => run_truncation(config::params(&cfg.params)?, ctx),
        "exhaustion" => run_exhaustion(config::params(&cfg.params)?, ctx),
        "area" => run_area(config::params(&cfg.params)?, ctx),
        "chain_checks" => run_chain_checks(config::params(&cfg.params)?, ctx),
        "identity_checks" => run_identity_checks(config::params(&cfg.params)?, ctx),
        _ => unreachable!("config::parse guards the kind"),
    }
}

fn ladder_for(
    grid: &Grid,
    rho: Option<f64>,
    r_max: Option<f64>,
) -> CliResult<(f64, RadiusLadder)> {
    let rho = rho.unwrap_or_else(RadiusLadder::default_ratio);
    let ladder = match r_max {
        Some(r) => RadiusLadder::geometric_up_to(grid, rho, r)?,
        None => RadiusLadder::geometric(grid, rho)?,
    };
    Ok((rho, ladder))
}

// ---------------------------------------------------------------- maximal

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MaximalParams {
    f_file: String,
    rho: Option<f64>,
    r_max: Option<f64>,
    #[serde(default)]
    lambdas: Vec<f64>,
}

fn run_maximal(p: MaximalParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let f = ctx.scalar(&p.f_file)?;
    let (rho, ladder) = ladder_for(f.grid(), p.rho, p.r_max)?;
    for w in p.lambdas.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Failure::Input(format!(
                "lambdas must be strictly ascending, got {} after {}",
                w[1], w[0]
            )));
        }
    }
    let mf = maximal_function(&f, &ladder)?;
    ctx.save_scalar("maximal.toml", &mf)?;
    let mut records = vec![json!({
        "record": "maximal",
        "rho": rho,
        "rungs": ladder.len(),
        "min": mf.min(),
        "max": mf.max(),
        "output": "maximal.toml",
    })];
    let mut violations = Vec::new();
    let mut prev: Option<(f64, RegionMask)> = None;
    for &lambda in &p.lambdas {
        let set = sublevel_set(&mf, lambda);
        records.push(json!({
            "record": "sublevel",
            "lambda": lambda,
            "nodes": set.count(),
            "measure": set.measure(),
        }));
        if let Some((l0, s0)) = &prev {
            if !s0.is_subset_of(&set)? {
                violations.push(format!(
                    "sublevel sets fail to nest between lambda {l0} and {lambda}"
                ));
            }
        }
        prev = Some((lambda, set));
    }
    Ok(RunOutput { records, violations })
}

// -------------------------------------------------------------- potential

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PotentialParams {
    phi_file: String,
    alpha: f64,
    /// "direct", "fft", "auto", or "both" (the default): both engines,
    /// checked against each other.
    mode: Option<String>,
    compare_tol: Option<f64>,
}

fn run_potential(p: PotentialParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let phi = ctx.scalar(&p.phi_file)?;
    let spec = KernelSpec::new(phi.grid().dim(), p.alpha)?;
    let gamma = spec.normalization();
    let mode = p.mode.as_deref().unwrap_or("both");
    let mut records = Vec::new();
    let mut violations = Vec::new();
    match mode {
        "both" => {
            let direct = riesz_potential(&phi, &spec, ConvMode::Direct)?;
            let fast = riesz_potential(&phi, &spec, ConvMode::Fft)?;
            let mut worst = 0.0f64;
            for (a, b) in direct.values().iter().zip(fast.values()) {
                let denom = a.abs().max(b.abs()).max(1e-300);
                worst = worst.max((a - b).abs() / denom);
            }
            let tol = p.compare_tol.unwrap_or(1e-8);
            ctx.save_scalar("potential.toml", &direct)?;
            records.push(json!({
                "record": "potential",
                "alpha": p.alpha,
                "gamma": gamma,
                "mode": "both",
                "min": direct.min(),
                "max": direct.max(),
                "max_rel_disagreement": worst,
                "tolerance": tol,
                "output": "potential.toml",
            }));
            if worst > tol {
                violations.push(format!(
                    "direct and fft potentials disagree by {worst:.3e} (tolerance {tol:.3e})"
                ));
            }
        }
        single => {
            let m = match single {
                "direct" => ConvMode::Direct,
                "fft" => ConvMode::Fft,
                "auto" => ConvMode::Auto,
                other => {
                    return Err(Failure::Input(format!(
                        "mode '{other}' is not one of direct, fft, auto, both"
                    )))
                }
            };
            let pot = riesz_potential(&phi, &spec, m)?;
            ctx.save_scalar("potential.toml", &pot)?;
            records.push(json!({
                "record": "potential",
                "alpha": p.alpha,
                "gamma": gamma,
                "mode": single,
                "min": pot.min(),
                "max": pot.max(),
                "output": "potential.toml",
            }));
        }
    }
    Ok(RunOutput { records, violations })
}

// --------------------------------------------------------------- capacity

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PenaltySchedule {
    initial: f64,
    growth: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CapacityParams {
    alpha: f64,
    p: f64,
    mask_file: String,
    padding: Option<f64>,
    penalty_schedule: Option<PenaltySchedule>,
    max_iters: Option<usize>,
    tol: Option<f64>,
}

fn run_capacity(p: CapacityParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let mask = ctx.mask(&p.mask_file)?;
    let padding = p.padding.unwrap_or(0.5);
    let defaults = SolverOptions::default();
    let opts = SolverOptions {
        margin_tol: p.tol.unwrap_or(defaults.margin_tol),
        max_outer: p.max_iters.unwrap_or(defaults.max_outer),
        initial_penalty: p
            .penalty_schedule
            .as_ref()
            .map_or(defaults.initial_penalty, |s| s.initial),
        penalty_growth: p
            .penalty_schedule
            .as_ref()
            .map_or(defaults.penalty_growth, |s| s.growth),
        ..defaults
    };
    let problem = CapacityProblem::with_padding(&mask, p.alpha, p.p, padding)?;
    let start = Instant::now();
    let est = estimate_capacity(&problem, &opts)?;
    let wall = start.elapsed().as_millis() as u64;
    let mut violations = Vec::new();
    if est.feasibility_margin < -1e-9 {
        violations.push(format!(
            "returned density is infeasible: margin {:.3e}",
            est.feasibility_margin
        ));
    }
    if !est.converged {
        violations.push("penalty solver stopped before its margin tolerance".into());
    }
    let records = vec![json!({
        "record": "capacity",
        "inputs": {
            "alpha": p.alpha,
            "p": p.p,
            "mask_file": p.mask_file,
            "padding": padding,
            "penalty_schedule": {"initial": opts.initial_penalty, "growth": opts.penalty_growth},
            "max_iters": opts.max_outer,
            "tol": opts.margin_tol,
        },
        "value": est.value,
        "margin": est.feasibility_margin,
        "iterations": est.iterations,
        "wall_time_ms": wall,
    })];
    Ok(RunOutput { records, violations })
}

// -------------------------------------------------------------- weak_type

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeakTypeParams {
    f_file: String,
    k: usize,
    p: f64,
    lambdas: Vec<f64>,
    /// When set, the fitted log-log slope must stay at or below this.
    slope_cap: Option<f64>,
}

/// Least-squares slope of y against x.
fn fitted_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

fn run_weak_type(p: WeakTypeParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let f = ctx.scalar(&p.f_file)?;
    let rows = weak_type_table(&f, p.k, p.p, &p.lambdas, &SolverOptions::default())?;
    let mut records = Vec::new();
    let mut points = Vec::new();
    for row in &rows {
        records.push(json!({
            "record": "weak_type",
            "lambda": row.lambda,
            "set_nodes": row.set_nodes,
            "capacity": row.capacity,
            "product": row.product,
        }));
        if row.capacity > 0.0 && row.set_nodes > 0 {
            points.push((row.lambda.ln(), row.capacity.ln()));
        }
    }
    let slope = fitted_slope(&points);
    records.push(json!({
        "record": "weak_type_fit",
        "slope": slope,
        "points": points.len(),
        "slope_cap": p.slope_cap,
    }));
    let mut violations = Vec::new();
    if let Some(cap) = p.slope_cap {
        match slope {
            Some(s) if s <= cap => {}
            Some(s) => violations.push(format!(
                "weak-type decay slope {s:.4} is above the cap {cap:.4}"
            )),
            None => violations
                .push("cannot fit a decay slope: fewer than two nonzero capacities".into()),
        }
    }
    Ok(RunOutput { records, violations })
}

// ------------------------------------------------------------- truncation

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationParams {
    f_file: String,
    levels: Vec<f64>,
    rho: Option<f64>,
    r_max: Option<f64>,
    eps_c: Option<f64>,
    pairs: Option<usize>,
}

fn run_truncation(p: TruncationParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let f = ctx.scalar(&p.f_file)?;
    let (_, ladder) = ladder_for(f.grid(), p.rho, p.r_max)?;
    let sets = truncation_sets(&f, &p.levels, &ladder)?;
    let eps_c = p.eps_c.unwrap_or(1e-3 * f.range());
    let rep = precise_representative(&f, &ladder, eps_c)?;
    let pairs = p.pairs.unwrap_or(20_000);
    let mut records = vec![json!({
        "record": "representative",
        "eps_c": eps_c,
        "nonconvergent_nodes": rep.nonconvergent.count(),
    })];
    let mut violations = Vec::new();
    for (lambda, set) in p.levels.iter().zip(&sets) {
        let modulus = match lipschitz_modulus(&rep, set, pairs, ctx.seed) {
            Ok(m) => Some(m),
            Err(Error::InsufficientNodes { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        records.push(json!({
            "record": "truncation",
            "lambda": lambda,
            "set_nodes": set.count(),
            "modulus": modulus,
            "modulus_over_lambda": modulus.map(|m| m / lambda),
        }));
    }
    for (w, lam) in sets.windows(2).zip(p.levels.windows(2)) {
        if !w[0].is_subset_of(&w[1])? {
            violations.push(format!(
                "truncation sets fail to nest between lambda {} and {}",
                lam[0], lam[1]
            ));
        }
    }
    Ok(RunOutput { records, violations })
}

// ------------------------------------------------------------- exhaustion

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxSpec {
    min: Vec<f64>,
    max: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExhaustionParams {
    f_file: String,
    omega_boxes: Vec<BoxSpec>,
    #[serde(rename = "J")]
    j: Option<usize>,
    k: usize,
    p: f64,
    alpha_cap: f64,
    /// Radius-ladder ratio for the maximal function.
    ladder: Option<f64>,
    eps_c: Option<f64>,
    capacity_alpha: Option<f64>,
}

fn run_exhaustion(p: ExhaustionParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let f = ctx.scalar(&p.f_file)?;
    let mut boxes = Vec::with_capacity(p.omega_boxes.len());
    for b in &p.omega_boxes {
        boxes.push(BoxRegion::new(b.min.clone(), b.max.clone())?);
    }
    if let Some(j) = p.j {
        if j + 1 > boxes.len() {
            return Err(Failure::Input(format!(
                "J = {j} needs {} nested boxes, got {}",
                j + 1,
                boxes.len()
            )));
        }
        boxes.truncate(j + 1);
    }
    let ratio = p.ladder.unwrap_or_else(RadiusLadder::default_ratio);
    let config = ExhaustionConfig {
        boxes,
        k: p.k,
        p: p.p,
        alpha_cap: p.alpha_cap,
        ladder_ratio: ratio,
        capacity_alpha: p.capacity_alpha,
        capacity_opts: SolverOptions::default(),
    };
    let start = Instant::now();
    let dec = match exhaustion(&f, &config) {
        Ok(d) => d,
        Err(e @ Error::ThresholdUnachievable { .. }) => {
            return Err(Failure::Invariant(e.to_string()))
        }
        Err(e) => return Err(e.into()),
    };
    let wall = start.elapsed().as_millis() as u64;

    let mut records = Vec::new();
    let mut violations = Vec::new();
    let mut piece_files = Vec::new();
    for (j, level) in dec.levels.iter().enumerate() {
        let piece_file = format!("piece_{j}.toml");
        ctx.save_mask(&piece_file, &dec.pieces[j])?;
        records.push(json!({
            "record": "exhaustion_level",
            "level": j + 1,
            "threshold": level.threshold,
            "grad_norm": level.grad_norm,
            "sublevel_nodes": level.sublevel.count(),
            "piece_nodes": dec.pieces[j].count(),
            "piece_file": piece_file,
        }));
        piece_files.push(piece_file);
    }
    ctx.save_mask("residual.toml", &dec.residual)?;
    let mut manifest = toml::Table::new();
    manifest.insert(
        "pieces".into(),
        toml::Value::Array(piece_files.iter().cloned().map(toml::Value::String).collect()),
    );
    manifest.insert("residual".into(), toml::Value::String("residual.toml".into()));
    let manifest_path = ctx.out_dir.join("manifest.toml");
    std::fs::write(&manifest_path, toml::to_string(&manifest).expect("manifest serializes"))
        .map_err(|e| Failure::Input(format!("{}: {e}", manifest_path.display())))?;
    records.push(json!({
        "record": "residual",
        "nodes": dec.residual.count(),
        "capacity_value": dec.residual_capacity.value,
        "capacity_margin": dec.residual_capacity.feasibility_margin,
        "iterations": dec.residual_capacity.iterations,
        "wall_time_ms": wall,
        "output": "residual.toml",
        "manifest": "manifest.toml",
    }));

    // Nonconvergence set of the precise representative, reported next to
    // the residual: the two notions of bad points need not coincide on a
    // grid, so both sets and their symmetric difference go in the record.
    let eps_c = p.eps_c.unwrap_or(1e-3 * f.range());
    let ladder = RadiusLadder::geometric(f.grid(), ratio)?;
    let rep = precise_representative(&f, &ladder, eps_c)?;
    let sym_diff = rep
        .nonconvergent
        .flags()
        .iter()
        .zip(dec.residual.flags())
        .filter(|(a, b)| *a != *b)
        .count();
    records.push(json!({
        "record": "bad_sets",
        "eps_c": eps_c,
        "nonconvergent_nodes": rep.nonconvergent.count(),
        "residual_nodes": dec.residual.count(),
        "symmetric_difference_nodes": sym_diff,
    }));

    for w in dec.pieces.windows(2) {
        if !w[0].is_subset_of(&w[1])? {
            violations.push("exhaustion pieces fail to nest".into());
        }
    }
    Ok(RunOutput { records, violations })
}

// ------------------------------------------------------------------- area

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AreaParams {
    phi_file: String,
    f_file: String,
    mask_file: String,
    s_file: Option<String>,
    exhaustion_manifest: Option<String>,
    hy: Option<f64>,
    merge_radius: Option<f64>,
    subdivision_floor: Option<f64>,
    y_margin: Option<f64>,
    multiplicity_cap: Option<usize>,
    /// Declared tolerance on rel_error; exceeding it is an invariant
    /// violation.
    tolerance: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    pieces: Vec<String>,
    residual: String,
}

fn run_area(p: AreaParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let phi = ctx.vector(&p.phi_file)?;
    let f = ctx.scalar(&p.f_file)?;
    let mask = ctx.mask(&p.mask_file)?;
    let exhaustion = match (&p.s_file, &p.exhaustion_manifest) {
        (Some(_), Some(_)) => {
            return Err(Failure::Input(
                "give s_file or exhaustion_manifest, not both".into(),
            ))
        }
        (Some(s), None) => {
            let residual = ctx.mask(s)?;
            let piece = mask.minus(&residual)?;
            Some(ExhaustionMasks { pieces: vec![piece], residual })
        }
        (None, Some(m)) => {
            let mp = ctx.resolve(m);
            let text = std::fs::read_to_string(&mp)
                .map_err(|e| Failure::Input(format!("{}: {e}", mp.display())))?;
            let man: Manifest = toml::from_str(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", mp.display())))?;
            let dir = mp.parent().unwrap_or(Path::new("."));
            let mut pieces = Vec::with_capacity(man.pieces.len());
            for name in &man.pieces {
                let path = dir.join(name);
                pieces.push(
                    io::read_mask(&path)
                        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
                );
            }
            let rpath = dir.join(&man.residual);
            let residual = io::read_mask(&rpath)
                .map_err(|e| Failure::Input(format!("{}: {e}", rpath.display())))?;
            Some(ExhaustionMasks { pieces, residual })
        }
        (None, None) => None,
    };
    let problem = MappingProblem::new(phi, f, mask)?;
    let opts = AreaOptions {
        y_spacing: p.hy,
        y_margin: p.y_margin.unwrap_or(0.0),
        merge_radius: p.merge_radius,
        subdivision_floor: p.subdivision_floor,
        multiplicity_cap: p.multiplicity_cap.unwrap_or(64),
        exhaustion,
        threads: ctx.threads,
    };
    let report = verify_area_formula(&problem, &opts)?;

    let mut violations = Vec::new();
    if report.invalid {
        violations.push(format!(
            "{} of {} image samples had degenerate fibers",
            report.degenerate_samples, report.total_samples
        ));
    }
    for w in report.lhs_partials.windows(2) {
        if !(w[0] <= w[1]) {
            violations.push("domain-side partial sums are not nondecreasing".into());
            break;
        }
    }
    for w in report.rhs_partials.windows(2) {
        if !(w[0] <= w[1]) {
            violations.push("image-side partial sums are not nondecreasing".into());
            break;
        }
    }
    if let Some(tol) = p.tolerance {
        if !(report.rel_error <= tol) {
            violations.push(format!(
                "rel_error {:.6e} exceeds the declared tolerance {tol:.6e}",
                report.rel_error
            ));
        }
    }

    let mut rec = serde_json::to_value(&report).expect("report serializes");
    let obj = rec.as_object_mut().expect("report is an object");
    obj.insert("record".into(), "area".into());
    obj.insert(
        "hy".into(),
        json!(p.hy.unwrap_or_else(|| problem.grid().spacing())),
    );
    if let Some(tol) = p.tolerance {
        obj.insert("tolerance".into(), json!(tol));
    }
    Ok(RunOutput { records: vec![rec], violations })
}

// ----------------------------------------------------------- chain_checks

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainChecksParams {
    dim: usize,
    checks: Option<usize>,
    nodes: Option<usize>,
    ladder_top: Option<f64>,
}

fn run_chain_checks(p: ChainChecksParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let constants = chain_constants(p.dim)?;
    let nodes = p.nodes.unwrap_or(match p.dim {
        1 => 513,
        2 => 129,
        _ => 33,
    });
    let checks = p.checks.unwrap_or(100);
    if checks == 0 {
        return Err(Failure::Input("checks must be positive".into()));
    }
    let g = Grid::cube(p.dim, -1.0, 1.0, nodes)?;
    let top = p.ladder_top.unwrap_or(0.5);
    let ladder = RadiusLadder::geometric_up_to(&g, RadiusLadder::default_ratio(), top)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut records = Vec::new();
    let mut violations = Vec::new();
    let mut maxes = [0.0f64; 3];
    let mut done = 0usize;
    let mut attempts = 0usize;
    while done < checks {
        attempts += 1;
        if attempts > 50 * checks {
            return Err(Failure::Input(format!(
                "drew {attempts} parameter sets but only {done} satisfied the preconditions"
            )));
        }
        let f = synth::random_smooth(&g, rng.random(), 4)?;
        let mag = vector_magnitude(&gradient(&f));
        let alpha = mag.max() * rng.random_range(1.0..1.5);
        let x = rng.random_range(0..g.len());
        let y = rng.random_range(0..g.len());
        if g.node_distance(x, y) < g.spacing() {
            continue;
        }
        let r = rng.random_range(4.0 * g.spacing()..0.4);
        let s = rng.random_range(g.spacing()..0.5 * r);
        let eps = 1e-3 * f.range();
        let checks_out = match chain_estimate_check(&f, x, y, r, s, alpha, &ladder, eps) {
            Ok(c) => c,
            Err(Error::PreconditionViolated(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        done += 1;
        let ratios = [
            checks_out.radius_change.ratio(),
            checks_out.representative_gap.ratio(),
            checks_out.center_change.ratio(),
        ];
        let names = ["radius_change", "representative_gap", "center_change"];
        for ((ratio, name), constant) in ratios.iter().zip(names).zip(constants) {
            maxes
                .iter_mut()
                .zip(&ratios)
                .for_each(|(m, r)| *m = m.max(*r));
            if *ratio > constant {
                violations.push(format!(
                    "check {done}: {name} ratio {ratio:.4} exceeds the constant {constant}"
                ));
            }
        }
        records.push(json!({
            "record": "chain_check",
            "index": done,
            "alpha": alpha,
            "r": r,
            "s": s,
            "radius_change": ratios[0],
            "representative_gap": ratios[1],
            "center_change": ratios[2],
        }));
    }
    records.push(json!({
        "record": "chain_summary",
        "dim": p.dim,
        "checks": done,
        "constants": {
            "radius_change": constants[0],
            "representative_gap": constants[1],
            "center_change": constants[2],
        },
        "max_ratios": {
            "radius_change": maxes[0],
            "representative_gap": maxes[1],
            "center_change": maxes[2],
        },
        "violations": violations.len(),
    }));
    Ok(RunOutput { records, violations })
}

// -------------------------------------------------------- identity_checks

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityChecksParams {
    names: Option<Vec<String>>,
    shape: Option<usize>,
    tolerance: Option<f64>,
}

const IDENTITY_NAMES: &[&str] = &[
    "newtonian_kernel",
    "identity_area_1d",
    "identity_area_2d",
    "maximal_indicator",
    "telescoping_order",
];

fn run_identity_checks(p: IdentityChecksParams, ctx: &Ctx) -> CliResult<RunOutput> {
    let shape = p.shape.unwrap_or(256);
    let tolerance = p.tolerance.unwrap_or(1e-3);
    let selected: Vec<&str> = match &p.names {
        None => IDENTITY_NAMES.to_vec(),
        Some(list) => {
            let mut out = Vec::new();
            for n in list {
                let known = IDENTITY_NAMES
                    .iter()
                    .find(|k| *k == n)
                    .ok_or_else(|| {
                        Failure::Input(format!(
                            "unknown identity '{n}'; available: {}",
                            IDENTITY_NAMES.join(", ")
                        ))
                    })?;
                out.push(*known);
            }
            out
        }
    };
    let mut records = Vec::new();
    let mut violations = Vec::new();
    for name in selected {
        let (value, detail, bound, pass) = match name {
            "newtonian_kernel" => {
                let spec = KernelSpec::new(3, 2.0)?;
                let v = spec.kernel_value(1.0)?;
                let reference = 1.0 / (4.0 * std::f64::consts::PI);
                let err = (v - reference).abs();
                (v, json!({"reference": reference, "error": err}), 1e-10, err <= 1e-10)
            }
            "identity_area_1d" | "identity_area_2d" => {
                let dim = if name.ends_with("1d") { 1 } else { 2 };
                let g = Grid::cube(dim, -1.0, 1.0, shape)?;
                let problem = MappingProblem::with_unit_weight(synth::identity_map(&g))?;
                let opts = AreaOptions { threads: ctx.threads, ..AreaOptions::default() };
                let report = verify_area_formula(&problem, &opts)?;
                (
                    report.rel_error,
                    json!({"lhs": report.lhs, "rhs": report.rhs}),
                    tolerance,
                    report.rel_error <= tolerance,
                )
            }
            "maximal_indicator" => {
                // M of the unit-interval indicator evaluated at x = 2; the
                // exact supremum over all radii is 1/4, attained at r = 2.
                let g = Grid::new(&[601], &[-1.0], 0.01)?;
                let f = ScalarField::from_fn(g.clone(), |x| {
                    if (0.0..=1.0).contains(&x[0]) {
                        1.0
                    } else {
                        0.0
                    }
                });
                let rho = RadiusLadder::default_ratio();
                let ladder = RadiusLadder::geometric(&g, rho)?;
                let node = g.nearest_node(&[2.0])?;
                let m = maximal_at(&f, &ladder, node)?;
                let reference = 0.25;
                let bound = 2.0 * g.spacing() + (rho - 1.0) / 4.0;
                let err = (m - reference).abs();
                (m, json!({"reference": reference, "error": err}), bound, err <= bound)
            }
            "telescoping_order" => {
                let mut residuals = Vec::new();
                for nodes in [129usize, 257, 513] {
                    let g = Grid::cube(1, -1.0, 1.0, nodes)?;
                    let f = ScalarField::from_fn(g.clone(), |x| x[0].exp());
                    let center = g.nearest_node(&[0.25])?;
                    let check = telescoping_identity_check(&f, center, 0.5, 0.125)?;
                    residuals.push(check.residual);
                }
                let orders: Vec<f64> = residuals
                    .windows(2)
                    .map(|w| (w[0] / w[1]).log2())
                    .collect();
                let value = orders.iter().cloned().fold(f64::INFINITY, f64::min);
                (
                    value,
                    json!({"residuals": residuals, "orders": orders}),
                    0.9,
                    value >= 0.9,
                )
            }
            _ => unreachable!("guarded by IDENTITY_NAMES"),
        };
        if !pass {
            violations.push(format!("identity '{name}' failed"));
        }
        records.push(json!({
            "record": "identity",
            "name": name,
            "value": value,
            "bound": bound,
            "pass": pass,
            "detail": detail,
        }));
    }
    Ok(RunOutput { records, violations })
}
