//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use lamcloak::cloak_transform::{alpha_of_rho, rho_ec, CloakField};
use lamcloak::dtn_verifier::{
    mode_dtn, report, small_volume_check, sweep_epsilon, sweep_rho, verify_shielded, virtual_medium,
    virtual_shielded_medium, DtnModel, ShieldedField, SweepMode,
};
use lamcloak::gpt_design::{design_gpt_vanishing, DesignConfig, DesignOutcome};
use lamcloak::laminate_builder::{
    alpha_feasible_interval, build_laminate, build_shielded_laminate, cell_count, gamma_lower, piece_gamma_bounds,
    plan_materials, recommended_epsilon, shield_conductivity, AlphaChoice, GammaStrategy, Laminate, MaterialRequest,
    ShellOrder,
};
use lamcloak::radial_media::{cgpt, cgpt_residual, Core, Dimension, LayeredProfile};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
}

struct Designs {
    d2: [DesignOutcome; 3],
    d3: [DesignOutcome; 3],
}

impl Designs {
    fn two(&self, n: usize) -> &LayeredProfile {
        &self.d2[n / 2 - 1].profile
    }
}

fn design(d: Dimension, l: usize) -> DesignOutcome {
    design_gpt_vanishing(&DesignConfig::new(d, l)).expect("design converges")
}

/// Dense simultaneous solve of every continuity and flux condition, with
/// amplitudes normalized at the radius where each basis function peaks.
fn dense_cgpt(p: &LayeredProfile, k: u32) -> f64 {
    let d = p.dimension();
    let kf = k as f64;
    let q = match d {
        Dimension::Two => kf,
        Dimension::Three => kf + 1.0,
    };
    let l = p.layers();
    let r = p.radii();
    let cond = |j: usize| if j == 0 { 1.0 } else { p.sigma()[j - 1] };
    let conducting = matches!(p.core(), Core::Conductivity(_));
    // Unknown layout: B_0, (A_j, B_j) for j = 1..=L, then A_{L+1} if the core conducts.
    let n = 1 + 2 * l + usize::from(conducting);
    let idx_a = |j: usize| 1 + 2 * (j - 1);
    let idx_b = |j: usize| if j == 0 { 0 } else { 2 + 2 * (j - 1) };
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    let mut row = 0;
    for j in 1..=l + 1 {
        let rj = r[j - 1];
        // Region j-1 outside; its A is scaled at its outer radius, B at rj.
        let a_out = if j == 1 { None } else { Some((idx_a(j - 1), (rj / r[j - 2]).powi(k as i32))) };
        let b_out = idx_b(j - 1);
        let s_out = cond(j - 1);
        let last = j == l + 1;
        if last && !conducting {
            // Zero flux: s (k A_out - q B_out) = 0.
            if let Some((ia, fa)) = a_out {
                m[(row, ia)] = s_out * kf * fa;
            } else {
                rhs[row] -= s_out * kf;
            }
            m[(row, b_out)] = -s_out * q;
            row += 1;
            continue;
        }
        let s_in = if last {
            match p.core() {
                Core::Conductivity(b) => b,
                Core::Insulating => unreachable!(),
            }
        } else {
            cond(j)
        };
        let ia_in = if last { n - 1 } else { idx_a(j) };
        let b_in = if last { None } else { Some((idx_b(j), (r[j] / rj).powf(q))) };
        // Continuity.
        match a_out {
            Some((ia, fa)) => m[(row, ia)] += fa,
            None => rhs[row] -= 1.0,
        }
        m[(row, b_out)] += 1.0;
        m[(row, ia_in)] -= 1.0;
        if let Some((ib, fb)) = b_in {
            m[(row, ib)] -= fb;
        }
        // Flux.
        match a_out {
            Some((ia, fa)) => m[(row + 1, ia)] += s_out * kf * fa,
            None => rhs[row + 1] -= s_out * kf,
        }
        m[(row + 1, b_out)] -= s_out * q;
        m[(row + 1, ia_in)] -= s_in * kf;
        if let Some((ib, fb)) = b_in {
            m[(row + 1, ib)] += s_in * q * fb;
        }
        row += 2;
    }
    assert_eq!(row, n);
    let x = m.full_piv_lu().solve(&rhs).expect("nonsingular transmission system");
    // A_0 = 1 means a_0 = r_1^-k; rescale b_0 to unit a_0.
    let b0 = x[0] * r[0].powf(q) * r[0].powi(k as i32);
    match d {
        Dimension::Two => -2.0 * PI * kf * b0,
        Dimension::Three => (2.0 * kf + 1.0) * b0,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = if rng.random_bool(0.5) { Dimension::Two } else { Dimension::Three };
        let l = rng.random_range(0..=6);
        let mut radii: Vec<f64> = (0..=l).map(|_| rng.random_range(0.5..2.0)).collect();
        radii.sort_by(|a, b| b.total_cmp(a));
        radii.dedup();
        if radii.len() != l + 1 {
            continue;
        }
        let sigma = (0..l).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
        let core = if rng.random_bool(0.3) {
            Core::Insulating
        } else {
            Core::Conductivity(10f64.powf(rng.random_range(-1.0..1.0)))
        };
        let p = LayeredProfile::new(d, radii, sigma, core).unwrap();
        let k = rng.random_range(1..=20);
        let a = cgpt(&p, k).unwrap();
        let b = dense_cgpt(&p, k);
        worst = worst.max(rel(a, b));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-10 && secs < 10.0, format!("max rel err {worst:.2e} over 200 profiles in {secs:.2}s"))
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    for &(r, s) in &[(1.0, 3.0), (0.7, 0.2), (1.3, 8.0)] {
        let disk = LayeredProfile::new(Dimension::Two, vec![r], vec![], Core::Conductivity(s)).unwrap();
        let hole = LayeredProfile::insulating_ball(Dimension::Two, r).unwrap();
        for k in 1..=8u32 {
            let kf = k as f64;
            let r2k = r.powi(2 * k as i32);
            worst = worst.max(rel(cgpt(&disk, k).unwrap(), 2.0 * PI * kf * r2k * (s - 1.0) / (s + 1.0)));
            worst = worst.max(rel(cgpt(&hole, k).unwrap(), -2.0 * PI * kf * r2k));
        }
    }
    let ball = LayeredProfile::insulating_ball(Dimension::Three, 1.0).unwrap();
    let m1 = cgpt(&ball, 1).unwrap();
    let b0 = -cgpt_residual(&ball, 1).unwrap()[0];
    worst = worst.max(rel(m1, 1.5)).max(rel(b0, 0.5));
    outcome(worst <= 1e-12, format!("max rel err {worst:.2e}; 3D insulating ball M1 = {m1}, b0 = {b0}"))
}

fn criterion_3(ds: &Designs) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (d, out) in ds.d2.iter().map(|o| (2, o)).chain(std::iter::once((3, &ds.d3[2]))) {
        let ok = out.residual_sup <= 1e-10 && out.iterations <= 500;
        pass &= ok;
        parts.push(format!("d={d} L={} res {:.1e} in {} it", out.profile.layers(), out.residual_sup, out.iterations));
    }
    let f3 = CloakField::new(ds.d3[2].profile.clone(), rho_ec(1e-4, 3, 3)).unwrap();
    let i3 = alpha_feasible_interval(&f3).unwrap();
    let ok3 = rel(i3.lo, 0.0054) <= 0.05 && rel(i3.hi, 0.0097) <= 0.05;
    let f4 = CloakField::new(ds.two(4).clone(), rho_ec(1e-4, 2, 4)).unwrap();
    let i4 = alpha_feasible_interval(&f4).unwrap();
    let ok4 = rel(i4.hi, 0.0734) <= 0.05;
    pass &= ok3 && ok4;
    parts.push(format!("3D alpha ({:.5}, {:.5})", i3.lo, i3.hi));
    parts.push(format!("2D N=4 alpha hi {:.5}", i4.hi));
    outcome(pass, parts.join("; "))
}

fn criterion_4(ds: &Designs) -> Outcome {
    let a = alpha_of_rho(1e-4);
    let thr = gamma_lower(a, 1.0 / a, 0.0227);
    let r4 = rho_ec(1e-4, 2, 4);
    let r6 = rho_ec(1e-4, 2, 6);
    let f6 = CloakField::new(ds.two(6).clone(), r6).unwrap();
    let two_sided: Vec<(f64, f64)> = piece_gamma_bounds(&f6, 0.05)
        .into_iter()
        .filter_map(|b| b.upper.map(|u| (b.lower, u)))
        .collect();
    let expected = [(29.8968, 36.5563), (9.4240, 27.4342)];
    let intervals_ok = two_sided.len() == 2
        && expected.iter().all(|e| two_sided.iter().any(|g| (g.0 - e.0).abs() <= 0.05 && (g.1 - e.1).abs() <= 0.05));
    let pass = (a - 0.04544).abs() <= 1e-4
        && (thr - 43.9665).abs() <= 0.05
        && (r4 - 0.1585).abs() <= 5e-4
        && (r6 - 0.2683).abs() <= 5e-4
        && intervals_ok;
    let shown: Vec<String> = two_sided.iter().map(|(l, u)| format!("({l:.4}, {u:.4})")).collect();
    outcome(
        pass,
        format!(
            "alpha(1e-4) {a:.6}; gamma threshold {thr:.4}; rho_ec {r4:.4}, {r6:.4}; N=6 gamma {}",
            shown.join(" ")
        ),
    )
}

fn laminate_identity_error(field: &CloakField, lam: &Laminate) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    for c in &lam.cells {
        let (s1, s2) = field.eigenvalues(c.s_lo).unwrap();
        let (arith, harm) = c.means();
        worst = worst.max(rel(arith, s2)).max(rel(harm, s1));
    }
    let shells = lam.shells();
    let tiled = shells[0].r_lo == 0.5
        && shells[shells.len() - 1].r_hi == 1.0
        && shells.windows(2).all(|w| w[0].r_hi == w[1].r_lo && w[0].r_hi > w[0].r_lo);
    (worst, tiled)
}

fn criterion_5(ds: &Designs) -> Outcome {
    let eps = 1.0 / 50.0;
    let mut cases: Vec<(String, CloakField, MaterialRequest)> = Vec::new();
    let mut req = MaterialRequest::new(eps, 0);
    req.alpha = AlphaChoice::Value(0.0227);
    req.gammas = GammaStrategy::Explicit(vec![65.9498]);
    cases.push(("uncoated".into(), CloakField::uncoated(Dimension::Two, 1e-4).unwrap(), req));
    cases.push((
        "2D N=4".into(),
        CloakField::new(ds.two(4).clone(), rho_ec(1e-4, 2, 4)).unwrap(),
        MaterialRequest::new(eps, 4),
    ));
    let mut req = MaterialRequest::new(eps, 6);
    req.alpha = AlphaChoice::Value(0.05);
    req.gammas = GammaStrategy::Explicit(vec![32.0, 15.0]);
    cases.push(("2D N=6".into(), CloakField::new(ds.two(6).clone(), rho_ec(1e-4, 2, 6)).unwrap(), req));
    cases.push((
        "3D N=3".into(),
        CloakField::new(ds.d3[2].profile.clone(), rho_ec(1e-4, 3, 3)).unwrap(),
        MaterialRequest::new(eps, 3),
    ));
    let mut worst: f64 = 0.0;
    let mut tiled = true;
    let mut counts = Vec::new();
    for (name, field, req) in &cases {
        let plan = plan_materials(field, req).unwrap();
        let lam = build_laminate(field, &plan, ShellOrder::default()).unwrap();
        let (w, t) = laminate_identity_error(field, &lam);
        worst = worst.max(w);
        tiled &= t;
        counts.push(format!("{name}: {} cells", lam.cells.len()));
    }
    let n25 = cell_count(eps).unwrap() == 25;
    outcome(
        worst <= 1e-12 && tiled && n25,
        format!("max mean err {worst:.2e}; tiled {tiled}; {}", counts.join(", ")),
    )
}

fn criterion_6(ds: &Designs) -> Outcome {
    let sphere = LayeredProfile::new(Dimension::Three, vec![1.0], vec![], Core::Conductivity(5.0)).unwrap();
    let mut worst: f64 = 0.0;
    for k in 1..=5 {
        worst = worst.max(small_volume_check(&sphere, 0.01, 0.9, k).unwrap().rel_err);
    }
    let mut vanish: f64 = 0.0;
    for p in [ds.two(2), ds.two(4), &ds.d3[2].profile] {
        for k in 1..=p.layers() as u32 {
            vanish = vanish.max(small_volume_check(p, 0.05, 0.9, k).unwrap().exact_delta.abs());
        }
    }
    outcome(
        worst <= 1e-9 && vanish <= 1e-12,
        format!("sphere max rel err {worst:.2e}; GPT-vanishing max |delta| {vanish:.2e}"),
    )
}

fn criterion_7(ds: &Designs) -> Outcome {
    let mut worst: f64 = 0.0;
    let sources = [LayeredProfile::insulating_ball(Dimension::Two, 1.0).unwrap(), ds.two(2).clone(), ds.two(4).clone()];
    for src in &sources {
        for rho in [0.05, 0.1] {
            let f = CloakField::new(src.clone(), rho).unwrap();
            let a = DtnModel::eigenvalues(&f, 32).unwrap();
            let v = virtual_medium(&f).unwrap().eigenvalues(32).unwrap();
            for (x, y) in a.iter().zip(&v) {
                worst = worst.max(rel(*x, *y));
            }
        }
    }
    outcome(worst <= 1e-10, format!("max rel err {worst:.2e} over k <= 32"))
}

fn criterion_8(ds: &Designs) -> Outcome {
    let rhos = geomspace(0.02, 0.2, 6);
    let cases: Vec<(String, SweepMode, f64)> = vec![
        ("2D N=0".into(), SweepMode::VirtualUncoated { dimension: Dimension::Two }, 2.0),
        ("2D N=1".into(), SweepMode::VirtualCoated { profile: design(Dimension::Two, 1).profile }, 4.0),
        ("2D N=2".into(), SweepMode::VirtualCoated { profile: ds.two(2).clone() }, 6.0),
        ("3D N=0".into(), SweepMode::VirtualUncoated { dimension: Dimension::Three }, 3.0),
        ("3D N=1".into(), SweepMode::VirtualCoated { profile: ds.d3[0].profile.clone() }, 5.0),
        ("3D N=2".into(), SweepMode::VirtualCoated { profile: ds.d3[1].profile.clone() }, 7.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, mode, target) in cases {
        let t = Instant::now();
        let r = sweep_rho(&mode, &rhos, 64).unwrap();
        let secs = t.elapsed().as_secs_f64();
        let ok = (r.fit.slope - target).abs() <= 0.1 * target && secs < 60.0;
        pass &= ok;
        parts.push(format!("{name} {:.3} (want {target})", r.fit.slope));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_9(ds: &Designs) -> Outcome {
    let start = Instant::now();
    let rho = 0.1;
    let field = CloakField::new(ds.two(2).clone(), rho).unwrap();
    let eps: Vec<f64> = (7..=13).map(|e| 2f64.powi(-e)).collect();
    let plan = plan_materials(&field, &MaterialRequest::new(eps[0], 2)).unwrap();
    let sweep = sweep_epsilon(&field, &plan, &eps, 64, ShellOrder::default()).unwrap();
    let slope_ok = (sweep.fit.slope - 1.0).abs() <= 0.3;

    let kappa = field.source().contrast();
    let e_rec = recommended_epsilon(Dimension::Two, rho, kappa, 2, 1.0).unwrap();
    let mut req = MaterialRequest::new(e_rec, 2);
    req.alpha = AlphaChoice::Value(plan.alpha);
    req.gammas = GammaStrategy::Explicit(plan.gammas.iter().map(|g| g.value).collect());
    let rec_plan = plan_materials(&field, &req).unwrap();
    let lam = build_laminate(&field, &rec_plan, ShellOrder::default()).unwrap();
    let lam_norm = report(&lam, 64).unwrap().surrogate_norm;
    let ref_norm = report(&field, 64).unwrap().surrogate_norm;
    let ratio = lam_norm / ref_norm;
    let ratio_ok = (0.5..=2.0).contains(&ratio);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        slope_ok && ratio_ok && secs < 300.0,
        format!(
            "eps-slope {:.3} +- {:.3} (operator gap slope {:.3}); at recommended eps {e_rec:.3e} laminate/reference = {ratio:.2} ({lam_norm:.3e} vs {ref_norm:.3e}); {secs:.1}s",
            sweep.fit.slope, sweep.fit.half_width, sweep.operator_fit.slope
        ),
    )
}

fn criterion_10(ds: &Designs) -> Outcome {
    let betas = [0.0, 1e-3, 1.0, 1e3];
    let uncoated = LayeredProfile::insulating_ball(Dimension::Two, 1.0).unwrap();
    let setups = [(uncoated, 0usize, geomspace(0.02, 0.2, 6)), (ds.two(2).clone(), 2, geomspace(1e-3, 2e-2, 6))];
    let mut pass = true;
    let mut parts = Vec::new();
    for (profile, order, rhos) in &setups {
        let mut slopes = Vec::new();
        for &beta in &betas {
            let mode = SweepMode::Shielded { profile: profile.clone(), order: *order, beta };
            let r = sweep_rho(&mode, rhos, 64).unwrap();
            pass &= (r.fit.slope - 2.0).abs() <= 0.3;
            slopes.push(format!("{:.3}", r.fit.slope));
        }
        let mut spread: f64 = 1.0;
        for &rho in rhos {
            let field = CloakField::new(profile.clone(), rho_ec(rho, 2, *order)).unwrap();
            let zeta = shield_conductivity(rho, *order);
            let norms: Vec<f64> = betas
                .iter()
                .map(|&beta| report(&ShieldedField { field: &field, zeta, beta }, 64).unwrap().surrogate_norm)
                .collect();
            let hi = norms.iter().cloned().fold(0.0, f64::max);
            let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
            spread = spread.max(hi / lo);
            // The exact anisotropic solve must agree with the virtual picture.
            let v = virtual_shielded_medium(&field, zeta, 1.0).unwrap();
            let a = ShieldedField { field: &field, zeta, beta: 1.0 };
            let (x, y) = (mode_dtn(&a, 3).unwrap().eigenvalue, mode_dtn(&v, 3).unwrap().eigenvalue);
            pass &= rel(x, y) <= 1e-10;
        }
        pass &= spread < 2.0;
        parts.push(format!("N={order} slopes [{}] spread {spread:.3}", slopes.join(", ")));
    }
    // Laminated version at one radius.
    let rho = 0.1;
    let field = CloakField::uncoated(Dimension::Two, rho).unwrap();
    let plan = plan_materials(&field, &MaterialRequest::new(2f64.powi(-10), 0)).unwrap();
    let lam = build_shielded_laminate(&field, &plan, rho, 0, ShellOrder::default()).unwrap();
    let v = verify_shielded(&lam, &betas, 64).unwrap();
    pass &= v.consistent;
    parts.push(format!("laminate spread {:.3}", v.spread));
    outcome(pass, parts.join("; "))
}

fn main() -> ExitCode {
    let ds = Designs {
        d2: [design(Dimension::Two, 2), design(Dimension::Two, 4), design(Dimension::Two, 6)],
        d3: [design(Dimension::Three, 1), design(Dimension::Three, 2), design(Dimension::Three, 3)],
    };
    let results = [
        ("1 cgpt oracle equivalence", criterion_1()),
        ("2 closed forms", criterion_2()),
        ("3 GPT-vanishing design", criterion_3(&ds)),
        ("4 reference constants", criterion_4(&ds)),
        ("5 laminate identities", criterion_5(&ds)),
        ("6 small-volume expansion", criterion_6(&ds)),
        ("7 transformation invariance", criterion_7(&ds)),
        ("8 invisibility orders", criterion_8(&ds)),
        ("9 laminate convergence", criterion_9(&ds)),
        ("10 shielded arbitrary core", criterion_10(&ds)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
