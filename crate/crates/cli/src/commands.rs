use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use tracing::{info, warn};

use lamcloak::cloak_transform::{anisotropy_metrics, rho_ec, write_curve_csv, CloakField};
use lamcloak::dtn_verifier::{
    operator_gap, report, sweep_epsilon, sweep_rho, verify_shielded, verify_shielded_field, virtual_medium,
    write_epsilon_csv, write_modes_csv, write_sweep_csv, DtnReport, LaminateModel, ShieldedField, SweepMode,
    DEFAULT_K_MAX,
};
use lamcloak::gpt_design::{design_gpt_vanishing, write_convergence_csv, DesignConfig};
use lamcloak::laminate_builder::{
    alpha_feasible_interval, build_laminate, build_shielded_laminate, plan_materials, recommended_epsilon,
    shield_conductivity, write_shells_csv, AlphaChoice, GammaStrategy, Laminate, MaterialPlan, MaterialRequest,
    ShellOrder,
};
use lamcloak::{Dimension, LayeredProfile};

use crate::config::{output_dir, usage, EpsChoice, FileConfig};
use crate::output::{read_json, Meta, Sink};
use crate::{
    Cli, Command, DesignArgs, LaminateArgs, MaterialArgs, Medium, ShieldArgs, SourceArgs, SweepArgs, SweepKind,
    Target, VerifyArgs,
};

const DEFAULT_RHO: f64 = 1e-4;
const DEFAULT_SWEEP_EPS_RHO: f64 = 0.1;
const DEFAULT_CURVE_POINTS: usize = 400;
const DEFAULT_BETAS: [f64; 4] = [0.0, 1e-3, 1.0, 1e3];

pub fn run(cli: Cli) -> Result<ExitCode> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let out = output_dir(cli.out, &file);
    match cli.command {
        Command::Design(a) => design(a, &file, &out),
        Command::Laminate(a) => laminate(a, &file, &out),
        Command::Verify(a) => verify(a, &file, &out),
        Command::Sweep(a) => sweep(a, &file, &out),
        Command::Shield(a) => shield(a, &file, &out),
    }
}

fn dimension(flag: Option<u32>, file: &FileConfig) -> Result<Option<Dimension>> {
    flag.or(file.dim)
        .map(|d| Dimension::try_from(d).map_err(|_| usage(format!("--dim must be 2 or 3, got {d}"))))
        .transpose()
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(usage(format!("--{name} must be positive, got {v}")))
    }
}

fn finish(sink: &Sink) -> ExitCode {
    for p in sink.written() {
        println!("wrote {}", p.display());
    }
    ExitCode::SUCCESS
}

fn design(a: DesignArgs, file: &FileConfig, out: &Path) -> Result<ExitCode> {
    let dim = dimension(a.dim, file)?.ok_or_else(|| usage("design needs --dim"))?;
    let layers = a.layers.or(file.layers).ok_or_else(|| usage("design needs --layers"))?;
    let mut cfg = DesignConfig::new(dim, layers);
    if let Some(order) = a.order.or(file.order) {
        cfg = cfg.with_order(order);
    }
    if let Some(n) = a.max_iterations.or(file.max_iterations) {
        cfg.max_iterations = n;
    }
    if let Some(t) = a.tolerance.or(file.tolerance) {
        cfg.tolerance = t;
    }
    cfg.seed = a.seed.or(file.seed).or(cfg.seed);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let rho = positive("rho", a.rho.or(file.rho).unwrap_or(DEFAULT_RHO))?;
    let settings = json!({
        "command": "design",
        "dimension": dim,
        "layers": cfg.layers,
        "order": cfg.order,
        "max_iterations": cfg.max_iterations,
        "tolerance": cfg.tolerance,
        "seed": cfg.seed,
        "rho": rho,
    });
    let mut sink = Sink::new(out, Meta::for_settings(&settings)?)?;

    let outcome = design_gpt_vanishing(&cfg).context("design did not converge")?;
    for w in &outcome.warnings {
        warn!("{w}");
    }
    info!(iterations = outcome.iterations, residual = outcome.residual_sup, "design converged");
    let hole = rho_ec(rho, dim.value(), cfg.order);
    let interval = CloakField::new(outcome.profile.clone(), hole)
        .and_then(|f| alpha_feasible_interval(&f))
        .map(|i| json!({ "rho": rho, "hole": hole, "lo": i.lo, "hi": i.hi }))
        .unwrap_or(Value::Null);
    sink.json(
        "profile.json",
        &json!({
            "settings": settings,
            "profile": outcome.profile,
            "iterations": outcome.iterations,
            "residual_sup": outcome.residual_sup,
            "contrast": outcome.profile.contrast(),
            "alpha_interval": interval,
            "warnings": outcome.warnings,
        }),
    )?;
    sink.csv("convergence.csv", |w| write_convergence_csv(&outcome.log, w))?;
    println!(
        "residual sup {:.3e} after {} iterations; sigma {:?}",
        outcome.residual_sup,
        outcome.iterations,
        outcome.profile.sigma()
    );
    Ok(finish(&sink))
}

/// Coating profile and its order from `--profile`, `--uncoated` or `--order`.
struct Source {
    profile: LayeredProfile,
    order: usize,
}

fn load_profile(path: &Path) -> Result<LayeredProfile> {
    let v = read_json(path, "profile")?;
    serde_json::from_value(v).with_context(|| format!("{} is not a profile", path.display()))
}

fn resolve_source(a: &SourceArgs, file: &FileConfig) -> Result<Source> {
    let dim = dimension(a.dim, file)?;
    let order = a.order.or(file.order);
    let uncoated = a.uncoated || file.uncoated.unwrap_or(false);
    if let Some(path) = a.profile.as_ref().or(file.profile.as_ref()) {
        if uncoated {
            return Err(usage("--profile and --uncoated exclude each other"));
        }
        let profile = load_profile(path)?;
        if dim.is_some_and(|d| d != profile.dimension()) {
            return Err(usage("--dim disagrees with the profile's dimension"));
        }
        let order = order.unwrap_or(profile.layers());
        return Ok(Source { profile, order });
    }
    let dim = dim.unwrap_or(Dimension::Two);
    match (uncoated, order) {
        (true, Some(n)) if n > 0 => Err(usage("--uncoated cannot have a nonzero --order")),
        (true, _) | (false, None) | (false, Some(0)) => {
            Ok(Source { profile: LayeredProfile::insulating_ball(dim, 1.0)?, order: 0 })
        }
        (false, Some(n)) => {
            let mut cfg = DesignConfig::new(dim, n);
            cfg.seed = a.seed.or(file.seed).or(cfg.seed);
            info!(layers = n, "designing coating");
            let outcome = design_gpt_vanishing(&cfg).context("designing the coating")?;
            Ok(Source { profile: outcome.profile, order: n })
        }
    }
}

/// Material flags merged with the file.
struct Materials {
    eps: EpsChoice,
    alpha: Option<f64>,
    gamma: Option<Vec<f64>>,
    safety: f64,
    split: bool,
    max_materials: Option<usize>,
    shell_order: ShellOrder,
}

impl Materials {
    fn resolve(a: &MaterialArgs, file: &FileConfig) -> Result<Self> {
        let shell_order = a.shell_order.or(file.shell_order).unwrap_or([0, 1, 2]);
        Ok(Materials {
            eps: a.eps.or(file.eps).unwrap_or_default(),
            alpha: a.alpha.or(file.alpha),
            gamma: a.gamma.clone().map(|g| g.0).or_else(|| file.gamma.clone()),
            safety: positive("safety", a.safety.or(file.safety).unwrap_or(1.0))?,
            split: a.split || file.split.unwrap_or(false),
            max_materials: a.max_materials.or(file.max_materials),
            shell_order: ShellOrder::new(shell_order).map_err(|e| usage(e.to_string()))?,
        })
    }

    fn epsilon(&self, d: Dimension, rho: f64, kappa: f64, order: usize) -> Result<f64> {
        match self.eps {
            EpsChoice::Value(v) => Ok(v),
            EpsChoice::Auto => Ok(recommended_epsilon(d, rho, kappa, order, self.safety)?),
        }
    }

    fn request(&self, epsilon: f64, order: usize) -> MaterialRequest {
        let mut req = MaterialRequest::new(epsilon, order);
        if let Some(a) = self.alpha {
            req.alpha = AlphaChoice::Value(a);
        }
        if let Some(g) = &self.gamma {
            req.gammas = GammaStrategy::Explicit(g.clone());
        }
        req.max_materials = self.max_materials.or(req.max_materials);
        req.split_at_breakpoints = self.split;
        req
    }

    fn settings(&self, epsilon: f64) -> Value {
        json!({
            "eps": self.eps,
            "epsilon": epsilon,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "safety": self.safety,
            "split": self.split,
            "max_materials": self.max_materials,
            "shell_order": self.shell_order,
        })
    }
}

fn plan_summary(plan: &MaterialPlan) -> String {
    let g: Vec<String> = plan.gammas.iter().map(|g| format!("{:.4}", g.value)).collect();
    format!("alpha {:.6}, gamma [{}], {} cells", plan.alpha, g.join(", "), plan.cells.len())
}

fn laminate(a: LaminateArgs, file: &FileConfig, out: &Path) -> Result<ExitCode> {
    let src = resolve_source(&a.source, file)?;
    let mats = Materials::resolve(&a.materials, file)?;
    let rho = positive("rho", a.rho.or(file.rho).unwrap_or(DEFAULT_RHO))?;
    let enhanced = a.enhanced || file.enhanced.unwrap_or(false);
    let points = a.points.or(file.points).unwrap_or(DEFAULT_CURVE_POINTS);
    let d = src.profile.dimension();
    let hole = if enhanced { rho_ec(rho, d.value(), src.order) } else { rho };
    let epsilon = mats.epsilon(d, rho, src.profile.contrast(), src.order)?;
    let settings = json!({
        "command": "laminate",
        "profile": src.profile,
        "order": src.order,
        "rho": rho,
        "enhanced": enhanced,
        "hole": hole,
        "points": points,
        "materials": mats.settings(epsilon),
    });
    let mut sink = Sink::new(out, Meta::for_settings(&settings)?)?;

    let field = CloakField::new(src.profile.clone(), hole)?;
    let plan = plan_materials(&field, &mats.request(epsilon, src.order))?;
    let lam = build_laminate(&field, &plan, mats.shell_order)?;
    sink.json(
        "plan.json",
        &json!({
            "settings": settings,
            "transform_alpha": field.alpha(),
            "anisotropy": anisotropy_metrics(&field),
            "plan": plan,
        }),
    )?;
    sink.json("laminate.json", &lam)?;
    sink.csv("shells.csv", |w| write_shells_csv(&lam.shells(), w))?;
    sink.csv("curve.csv", |w| write_curve_csv(&field, points, w))?;
    println!("{}", plan_summary(&plan));
    Ok(finish(&sink))
}

fn load_laminate(path: &Path) -> Result<Laminate> {
    let v = read_json(path, "laminate")?;
    serde_json::from_value(v).with_context(|| format!("{} is not a laminate", path.display()))
}

fn report_json(r: &DtnReport) -> Value {
    json!({
        "surrogate_norm": r.surrogate_norm,
        "k_max": r.k_max,
        "truncation_estimate": r.truncation_estimate,
    })
}

fn verify(a: VerifyArgs, file: &FileConfig, out: &Path) -> Result<ExitCode> {
    let k_max = a.k_max.or(file.k_max).unwrap_or(DEFAULT_K_MAX);
    let beta = a.beta.or(file.beta).unwrap_or(0.0);
    let enhanced = a.enhanced || file.enhanced.unwrap_or(false);
    let rho = a.rho.or(file.rho).map(|r| positive("rho", r)).transpose()?;
    let lam_path = a.laminate.as_ref().or(file.laminate.as_ref());
    let lam = lam_path.map(|p| load_laminate(p)).transpose()?;
    let needs_field = lam.is_none() || a.reference;
    let field = if needs_field {
        let src = resolve_source(&a.source, file)?;
        let rho = rho.unwrap_or(DEFAULT_RHO);
        let hole = if enhanced { rho_ec(rho, src.profile.dimension().value(), src.order) } else { rho };
        Some(CloakField::new(src.profile, hole)?)
    } else {
        None
    };
    let settings = json!({
        "command": "verify",
        "laminate": lam,
        "target": if lam.is_some() { "laminate" } else { match a.target { Target::Cloak => "cloak", Target::Virtual => "virtual" } },
        "field": field.as_ref().map(|f| json!({ "profile": f.source(), "hole": f.rho() })),
        "beta": beta,
        "k_max": k_max,
    });
    let mut sink = Sink::new(out, Meta::for_settings(&settings)?)?;

    let (main, reference) = match (&lam, &field) {
        (Some(lam), f) => {
            let r = report(&LaminateModel { laminate: lam, beta }, k_max)?;
            let reference = match (f, lam.shield) {
                (None, _) => None,
                (Some(f), Some(sh)) => Some(report(&ShieldedField { field: f, zeta: sh.zeta, beta }, k_max)?),
                (Some(f), None) => Some(report(f, k_max)?),
            };
            (r, reference)
        }
        (None, Some(f)) => {
            let r = match a.target {
                Target::Cloak => report(f, k_max)?,
                Target::Virtual => report(&virtual_medium(f)?, k_max)?,
            };
            (r, None)
        }
        (None, None) => unreachable!("a field is built whenever no laminate is given"),
    };
    let comparison = reference.as_ref().map(|r| {
        json!({
            "reference": report_json(r),
            "ratio": main.surrogate_norm / r.surrogate_norm,
            "operator_gap": operator_gap(&main, r),
        })
    });
    sink.json("report.json", &json!({ "settings": settings, "report": report_json(&main), "comparison": comparison }))?;
    sink.csv("modes.csv", |w| write_modes_csv(&main, w))?;
    println!("surrogate norm {:.6e} (k_max {})", main.surrogate_norm, main.k_max);
    if let Some(r) = &reference {
        println!("reference {:.6e}, ratio {:.3}", r.surrogate_norm, main.surrogate_norm / r.surrogate_norm);
    }
    Ok(finish(&sink))
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

fn sweep(a: SweepArgs, file: &FileConfig, out: &Path) -> Result<ExitCode> {
    let src = resolve_source(&a.source, file)?;
    let k_max = a.k_max.or(file.k_max).unwrap_or(DEFAULT_K_MAX);
    let enhanced = a.enhanced || file.enhanced.unwrap_or(false);
    let d = src.profile.dimension();
    match a.kind {
        SweepKind::Rho => {
            let lo = positive("rho-min", a.rho_min.or(file.rho_min).unwrap_or(0.02))?;
            let hi = positive("rho-max", a.rho_max.or(file.rho_max).unwrap_or(0.2))?;
            let n = a.points.or(file.points).unwrap_or(6);
            if n < 2 || hi <= lo {
                return Err(usage("radius grid needs rho-min < rho-max and at least 2 points"));
            }
            let safety = positive("safety", a.materials.safety.or(file.safety).unwrap_or(1.0))?;
            let beta = a.beta.or(file.beta).unwrap_or(0.0);
            let (mode, expected) = match a.medium {
                Medium::Virtual if src.order == 0 => (SweepMode::VirtualUncoated { dimension: d }, d.value() as f64),
                Medium::Virtual => (
                    SweepMode::VirtualCoated { profile: src.profile.clone() },
                    (d.value() + 2 * src.order as u32) as f64,
                ),
                Medium::Laminate => (
                    SweepMode::Laminate { profile: src.profile.clone(), order: src.order, enhanced, safety },
                    if d == Dimension::Two { 2.0 } else { 3.0 + 3.0 / (2.0 * src.order as f64 + 3.0) },
                ),
                Medium::Shielded => {
                    if d != Dimension::Two {
                        return Err(usage("shielded sweeps are two-dimensional"));
                    }
                    (SweepMode::Shielded { profile: src.profile.clone(), order: src.order, beta }, 2.0)
                }
            };
            let rhos = geomspace(lo, hi, n);
            let settings = json!({ "command": "sweep", "kind": "rho", "mode": mode, "rhos": rhos, "k_max": k_max });
            let mut sink = Sink::new(out, Meta::for_settings(&settings)?)?;
            let r = sweep_rho(&mode, &rhos, k_max)?;
            sink.json(
                "sweep.json",
                &json!({
                    "settings": settings,
                    "slope": r.fit.slope,
                    "half_width": r.fit.half_width,
                    "fit": r.fit,
                    "expected_slope": expected,
                    "k_max": r.k_max,
                    "rows": r.rows,
                }),
            )?;
            sink.csv("sweep.csv", |w| write_sweep_csv(&r.rows, w))?;
            println!("slope {:.4} +- {:.4} (expected {expected})", r.fit.slope, r.fit.half_width);
            Ok(finish(&sink))
        }
        SweepKind::Eps => {
            if a.medium != Medium::Laminate && a.medium != Medium::Virtual {
                return Err(usage("epsilon sweeps compare a laminate with its cloak; use --medium laminate"));
            }
            let mats = Materials::resolve(&a.materials, file)?;
            let rho = positive("rho", a.rho.or(file.rho).unwrap_or(DEFAULT_SWEEP_EPS_RHO))?;
            let e_lo = a.eps_min_exp.or(file.eps_min_exp).unwrap_or(7);
            let e_hi = a.eps_max_exp.or(file.eps_max_exp).unwrap_or(13);
            if e_hi - e_lo < 3 {
                return Err(usage("epsilon sweep needs at least 4 scales"));
            }
            let eps: Vec<f64> = (e_lo..=e_hi).map(|e| 2f64.powi(-e)).collect();
            let hole = if enhanced { rho_ec(rho, d.value(), src.order) } else { rho };
            let settings = json!({
                "command": "sweep",
                "kind": "eps",
                "profile": src.profile,
                "order": src.order,
                "rho": rho,
                "hole": hole,
                "epsilons": eps,
                "materials": mats.settings(eps[0]),
                "k_max": k_max,
            });
            let mut sink = Sink::new(out, Meta::for_settings(&settings)?)?;
            let field = CloakField::new(src.profile.clone(), hole)?;
            let plan = plan_materials(&field, &mats.request(eps[0], src.order))?;
            let r = sweep_epsilon(&field, &plan, &eps, k_max, mats.shell_order)?;
            sink.json(
                "sweep.json",
                &json!({
                    "settings": settings,
                    "slope": r.fit.slope,
                    "half_width": r.fit.half_width,
                    "fit": r.fit,
                    "operator_fit": r.operator_fit,
                    "expected_slope": 1.0,
                    "k_max": r.k_max,
                    "rows": r.rows,
                }),
            )?;
            sink.csv("sweep.csv", |w| write_epsilon_csv(&r.rows, w))?;
            println!(
                "gap slope {:.4} +- {:.4}; operator gap slope {:.4}",
                r.fit.slope, r.fit.half_width, r.operator_fit.slope
            );
            Ok(finish(&sink))
        }
    }
}

fn shield(a: ShieldArgs, file: &FileConfig, out: &Path) -> Result<ExitCode> {
    let src = resolve_source(&a.source, file)?;
    if src.profile.dimension() != Dimension::Two {
        return Err(usage("the shielded construction is two-dimensional"));
    }
    let mats = Materials::resolve(&a.materials, file)?;
    let rho = positive("rho", a.rho.or(file.rho).unwrap_or(DEFAULT_RHO))?;
    if rho >= 0.5 {
        return Err(usage("--rho must be below 1/2"));
    }
    let betas = a.betas.map(|b| b.0).or_else(|| file.betas.clone()).unwrap_or(DEFAULT_BETAS.to_vec());
    if betas.is_empty() || betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(usage("--betas must be finite and nonnegative"));
    }
    let k_max = a.k_max.or(file.k_max).unwrap_or(DEFAULT_K_MAX);
    let hole = rho_ec(rho, 2, src.order);
    let zeta = shield_conductivity(rho, src.order);
    let epsilon = mats.epsilon(Dimension::Two, rho, src.profile.contrast(), src.order)?;
    let settings = json!({
        "command": "shield",
        "profile": src.profile,
        "order": src.order,
        "rho": rho,
        "hole": hole,
        "zeta": zeta,
        "betas": betas,
        "materials": mats.settings(epsilon),
        "k_max": k_max,
    });
    let mut sink = Sink::new(out, Meta::for_settings(&settings)?)?;

    let field = CloakField::new(src.profile.clone(), hole)?;
    let plan = plan_materials(&field, &mats.request(epsilon, src.order))?;
    let lam = build_shielded_laminate(&field, &plan, rho, src.order, mats.shell_order)?;
    let lam_check = verify_shielded(&lam, &betas, k_max)?;
    let field_check = verify_shielded_field(&field, zeta, &betas, k_max)?;
    let consistent = lam_check.consistent && field_check.consistent;
    let summarize = |v: &lamcloak::dtn_verifier::ShieldVerification| {
        json!({
            "spread": v.spread,
            "consistent": v.consistent,
            "norms": v.reports.iter().map(|r| json!({ "beta": r.beta, "report": report_json(&r.report) })).collect::<Vec<_>>(),
        })
    };
    sink.json(
        "shield.json",
        &json!({
            "settings": settings,
            "laminate_check": summarize(&lam_check),
            "field_check": summarize(&field_check),
            "consistent": consistent,
        }),
    )?;
    sink.json("laminate.json", &lam)?;
    sink.csv("shells.csv", |w| write_shells_csv(&lam.shells(), w))?;
    println!(
        "zeta {zeta:.3e}; laminate spread {:.4}, field spread {:.4}; {}",
        lam_check.spread,
        field_check.spread,
        plan_summary(&plan)
    );
    let code = finish(&sink);
    if consistent {
        Ok(code)
    } else {
        eprintln!("error: surrogate norms disagree across core conductivities");
        Ok(ExitCode::from(1))
    }
}
