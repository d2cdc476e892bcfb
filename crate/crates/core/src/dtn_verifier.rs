//! Per-mode Dirichlet-to-Neumann eigenvalues of radially layered media.
//!
//! In every homogeneous shell a mode is `A (r/r0)^p + B (r/r0)^-q` in local
//! amplitudes. Only the ratio `tau = B/A` at the inner edge of the current
//! shell is carried, so no power of the radius ever overflows. All modes
//! `1..=k_max` advance together in one pass over the shells.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cloak_transform::{rho_ec, CloakField, HOLE};
use crate::csv_util::{fmt_f64, write_rows};
use crate::laminate_builder::{
    build_laminate, plan_materials, recommended_epsilon, shield_conductivity, AlphaChoice, GammaStrategy, Laminate,
    MaterialPlan, MaterialRequest, Shell, ShellOrder,
};
use crate::radial_media::{cgpt, Core, Dimension, LayeredProfile};
use crate::stats::{loglog_slope, SlopeFit};
use crate::{Error, Result};

pub const DEFAULT_K_MAX: u32 = 64;
pub const K_MAX_CAP: u32 = 512;
/// Norms below this are not refined further.
pub const NORM_FLOOR: f64 = 1e-13;
const TAIL_MODES: usize = 5;
const TILE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerCondition {
    /// Zero flux at `r_in`.
    NeumannZero,
    /// Homogeneous core of conductivity `beta` filling `r < r_in`.
    Core(f64),
    /// Shell of conductivity `zeta` on `[core_radius, r_in]` around a core `beta`.
    Shielded { zeta: f64, core_radius: f64, beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialMedium {
    pub dimension: Dimension,
    pub r_in: f64,
    pub inner: InnerCondition,
    pub shells: Vec<Shell>,
}

impl RadialMedium {
    pub fn new(dimension: Dimension, r_in: f64, inner: InnerCondition, shells: Vec<Shell>) -> Result<Self> {
        if !(r_in > 0.0 && r_in < 1.0) {
            return Err(Error::invalid(format!("r_in = {r_in} must lie in (0, 1)")));
        }
        check_tiling(r_in, &shells)?;
        match inner {
            InnerCondition::Core(b) if !(b >= 0.0 && b.is_finite()) => {
                return Err(Error::invalid(format!("core conductivity {b} must be finite and >= 0")));
            }
            InnerCondition::Shielded { zeta, core_radius, beta } => {
                if !(zeta > 0.0 && zeta.is_finite() && beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::invalid("shield needs zeta > 0 and beta >= 0"));
                }
                if !(core_radius > 0.0 && core_radius < r_in) {
                    return Err(Error::invalid(format!("shield core radius {core_radius} must lie in (0, r_in)")));
                }
            }
            _ => {}
        }
        Ok(RadialMedium { dimension, r_in, inner, shells })
    }

    /// Unit-conductivity annulus `[r_in, 1]`.
    pub fn homogeneous(dimension: Dimension, r_in: f64, inner: InnerCondition) -> Result<Self> {
        Self::new(dimension, r_in, inner, vec![Shell { r_lo: r_in, r_hi: 1.0, sigma: 1.0 }])
    }

    fn start_and_prefix(&self) -> (Start, Option<Seg>) {
        match self.inner {
            InnerCondition::NeumannZero => (Start::Neumann, None),
            InnerCondition::Core(b) => (Start::core(b), None),
            InnerCondition::Shielded { zeta, core_radius, beta } => {
                (Start::core(beta), Some(Seg::iso(core_radius, self.r_in, zeta)))
            }
        }
    }
}

fn check_tiling(r_in: f64, shells: &[Shell]) -> Result<()> {
    let Some(first) = shells.first() else {
        return Err(Error::invalid("medium has no shells"));
    };
    if (first.r_lo - r_in).abs() > TILE_TOL {
        return Err(Error::invalid(format!("first shell starts at {} instead of {r_in}", first.r_lo)));
    }
    if (shells[shells.len() - 1].r_hi - 1.0).abs() > TILE_TOL {
        return Err(Error::invalid("last shell must end at 1"));
    }
    for w in shells.windows(2) {
        if (w[0].r_hi - w[1].r_lo).abs() > TILE_TOL {
            return Err(Error::invalid(format!("shells do not tile at r = {}", w[0].r_hi)));
        }
    }
    for s in shells {
        if !(s.r_hi > s.r_lo && s.sigma > 0.0 && s.sigma.is_finite()) {
            return Err(Error::invalid(format!("bad shell [{}, {}] sigma {}", s.r_lo, s.r_hi, s.sigma)));
        }
    }
    Ok(())
}

/// Homogeneous piece: effective conductance `cond` and exponent stretch `mu`
/// (anisotropic 2D pieces have solutions `r^(+-k mu)`).
#[derive(Debug, Clone, Copy)]
struct Seg {
    lo: f64,
    hi: f64,
    cond: f64,
    mu: f64,
}

impl Seg {
    fn iso(lo: f64, hi: f64, cond: f64) -> Self {
        Seg { lo, hi, cond, mu: 1.0 }
    }
}

#[derive(Debug, Clone, Copy)]
enum Start {
    Neumann,
    Core(f64),
}

impl Start {
    fn core(beta: f64) -> Self {
        if beta == 0.0 {
            Start::Neumann
        } else {
            Start::Core(beta)
        }
    }
}

/// Modes `1..=k_max` on the unit sphere.
fn propagate(dim: Dimension, start: Start, segs: impl IntoIterator<Item = Seg>, k_max: u32) -> Result<Vec<ModeDtn>> {
    let n = k_max as usize;
    let ks: Vec<f64> = (1..=n).map(|k| k as f64).collect();
    let ms: Vec<f64> = (1..=k_max).map(|k| dim.outgoing(k)).collect();
    let mut tau = vec![0.0; n];
    let mut cond = f64::NAN;
    let mut first = true;
    let mut end = f64::NAN;
    for seg in segs {
        if first {
            match start {
                Start::Neumann => {
                    for i in 0..n {
                        tau[i] = ks[i] / ms[i];
                    }
                }
                Start::Core(beta) => {
                    tau.iter_mut().for_each(|t| *t = 0.0);
                    cross(&mut tau, &ks, &ms, beta / seg.cond);
                }
            }
            first = false;
        } else if seg.cond != cond {
            cross(&mut tau, &ks, &ms, cond / seg.cond);
        }
        advance(dim, &mut tau, seg);
        cond = seg.cond;
        end = seg.hi;
    }
    if first {
        return Err(Error::invalid("medium has no shells"));
    }
    if (end - 1.0).abs() > TILE_TOL {
        return Err(Error::invalid(format!("medium ends at {end}, not at 1")));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let denom = 1.0 + tau[i];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::Degenerate(format!("resonance at k = {}", i + 1)));
        }
        let e = cond * (ks[i] - ms[i] * tau[i]) / denom;
        // Same quantity minus k, arranged so a unit outer conductance does not cancel.
        let delta = ((cond - 1.0) * ks[i] - (cond * ms[i] + ks[i]) * tau[i]) / denom;
        if !e.is_finite() || !delta.is_finite() {
            return Err(Error::Degenerate(format!("non-finite eigenvalue at k = {}", i + 1)));
        }
        out.push(ModeDtn { k: i as u32 + 1, eigenvalue: e, delta });
    }
    Ok(out)
}

/// Transmission into a new medium; `ratio` is old over new conductance.
fn cross(tau: &mut [f64], ks: &[f64], ms: &[f64], ratio: f64) {
    for i in 0..tau.len() {
        let s = 1.0 + tau[i];
        let f = ratio * (ks[i] - ms[i] * tau[i]);
        tau[i] = (ks[i] * s - f) / (f + ms[i] * s);
    }
}

/// Moves the reference radius from `lo` to `hi`: `tau *= (lo/hi)^(k + m)`.
fn advance(dim: Dimension, tau: &mut [f64], seg: Seg) {
    let r = seg.lo / seg.hi;
    let (mut f, q) = match dim {
        Dimension::Two => {
            let q = r.powf(2.0 * seg.mu);
            (q, q)
        }
        Dimension::Three => (r * r * r, r * r),
    };
    for t in tau.iter_mut() {
        if f < 1e-300 {
            *t = 0.0;
            continue;
        }
        *t *= f;
        f *= q;
    }
}

/// Anything with per-mode DtN eigenvalues on the unit sphere.
pub trait DtnModel {
    fn dimension(&self) -> Dimension;

    fn modes(&self, k_max: u32) -> Result<Vec<ModeDtn>>;

    fn eigenvalues(&self, k_max: u32) -> Result<Vec<f64>> {
        Ok(self.modes(k_max)?.into_iter().map(|m| m.eigenvalue).collect())
    }
}

impl DtnModel for RadialMedium {
    fn dimension(&self) -> Dimension {
        self.dimension
    }

    fn modes(&self, k_max: u32) -> Result<Vec<ModeDtn>> {
        let (start, prefix) = self.start_and_prefix();
        let segs = prefix.into_iter().chain(self.shells.iter().map(|s| Seg::iso(s.r_lo, s.r_hi, s.sigma)));
        propagate(self.dimension, start, segs, k_max)
    }
}

fn field_segments(field: &CloakField) -> impl Iterator<Item = Seg> + '_ {
    let a = field.alpha();
    field.pieces().iter().map(move |p| {
        if p.transformed() {
            Seg { lo: p.s_lo, hi: p.s_hi, cond: p.sigma, mu: 1.0 / a }
        } else {
            Seg::iso(p.s_lo, p.s_hi, p.sigma)
        }
    })
}

/// The anisotropic cloak itself: exact radial solve in 2D; in 3D the
/// equivalent virtual medium.
impl DtnModel for CloakField {
    fn dimension(&self) -> Dimension {
        CloakField::dimension(self)
    }

    fn modes(&self, k_max: u32) -> Result<Vec<ModeDtn>> {
        match CloakField::dimension(self) {
            Dimension::Two => propagate(Dimension::Two, Start::Neumann, field_segments(self), k_max),
            Dimension::Three => virtual_medium(self)?.modes(k_max),
        }
    }
}

/// 2D cloak behind a shield on `[1/4, 1/2]` with core `beta`.
#[derive(Debug, Clone)]
pub struct ShieldedField<'a> {
    pub field: &'a CloakField,
    pub zeta: f64,
    pub beta: f64,
}

impl DtnModel for ShieldedField<'_> {
    fn dimension(&self) -> Dimension {
        self.field.dimension()
    }

    fn modes(&self, k_max: u32) -> Result<Vec<ModeDtn>> {
        if self.field.dimension() != Dimension::Two {
            return Err(Error::UnsupportedDimension(self.field.dimension().value()));
        }
        let shield = Seg::iso(0.25, HOLE, self.zeta);
        propagate(Dimension::Two, Start::core(self.beta), std::iter::once(shield).chain(field_segments(self.field)), k_max)
    }
}

/// Laminate with a given core conductivity under its shield (0 = insulating).
/// Without a shield the laminate closes with zero flux at 1/2.
#[derive(Debug, Clone)]
pub struct LaminateModel<'a> {
    pub laminate: &'a Laminate,
    pub beta: f64,
}

impl DtnModel for LaminateModel<'_> {
    fn dimension(&self) -> Dimension {
        self.laminate.dimension
    }

    fn modes(&self, k_max: u32) -> Result<Vec<ModeDtn>> {
        let lam = self.laminate;
        let order = lam.shell_order;
        let cells = lam.cells.iter().flat_map(move |c| c.shells(order)).map(|s| Seg::iso(s.r_lo, s.r_hi, s.sigma));
        match lam.shield {
            Some(sh) => {
                let shield = Seg::iso(sh.r_lo, sh.r_hi, sh.zeta);
                propagate(lam.dimension, Start::core(self.beta), std::iter::once(shield).chain(cells), k_max)
            }
            None => propagate(lam.dimension, Start::Neumann, cells, k_max),
        }
    }
}

impl DtnModel for Laminate {
    fn dimension(&self) -> Dimension {
        self.dimension
    }

    fn modes(&self, k_max: u32) -> Result<Vec<ModeDtn>> {
        LaminateModel { laminate: self, beta: 0.0 }.modes(k_max)
    }
}

/// Pre-image of the cloak: the coated hole of radius `rho` in `[rho, 1]`.
pub fn virtual_medium(field: &CloakField) -> Result<RadialMedium> {
    let (shells, r_in) = virtual_shells(field);
    RadialMedium::new(field.dimension(), r_in, InnerCondition::NeumannZero, shells)
}

/// Virtual counterpart of [`ShieldedField`]: shield on `[rho/2, rho]`.
pub fn virtual_shielded_medium(field: &CloakField, zeta: f64, beta: f64) -> Result<RadialMedium> {
    let (shells, r_in) = virtual_shells(field);
    let inner = InnerCondition::Shielded { zeta, core_radius: 0.5 * r_in, beta };
    RadialMedium::new(field.dimension(), r_in, inner, shells)
}

fn virtual_shells(field: &CloakField) -> (Vec<Shell>, f64) {
    let rho = field.rho();
    let src = field.source();
    let radii = src.radii();
    let mut shells = Vec::with_capacity(src.layers() + 1);
    for j in (0..src.layers()).rev() {
        shells.push(Shell { r_lo: rho * radii[j + 1], r_hi: rho * radii[j], sigma: src.sigma()[j] });
    }
    shells.push(Shell { r_lo: rho * radii[0], r_hi: 1.0, sigma: 1.0 });
    (shells, rho * src.core_radius())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeDtn {
    pub k: u32,
    pub eigenvalue: f64,
    /// Eigenvalue minus the homogeneous value `k`.
    pub delta: f64,
}

pub fn mode_dtn(model: &impl DtnModel, k: u32) -> Result<ModeDtn> {
    if k == 0 {
        return Err(Error::invalid("mode index must be >= 1"));
    }
    Ok(model.modes(k)?[k as usize - 1])
}

pub fn mode_dtn_aniso_2d(field: &CloakField, k: u32) -> Result<ModeDtn> {
    if field.dimension() != Dimension::Two {
        return Err(Error::UnsupportedDimension(field.dimension().value()));
    }
    mode_dtn(field, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtnReport {
    pub modes: Vec<ModeDtn>,
    pub surrogate_norm: f64,
    pub k_max: u32,
    /// Geometric-tail bound on the weighted deltas beyond `k_max`; infinite
    /// when the last modes do not decay.
    pub truncation_estimate: f64,
}

fn weighted(m: &ModeDtn) -> f64 {
    m.delta.abs() / (1.0 + m.k as f64)
}

fn tail_estimate(modes: &[ModeDtn]) -> f64 {
    let last = &modes[modes.len() - TAIL_MODES..];
    let w: Vec<f64> = last.iter().map(weighted).collect();
    if w.contains(&0.0) {
        return 0.0;
    }
    // Least-squares decay rate of ln w against k over the last modes.
    let n = w.len() as f64;
    let xs: Vec<f64> = last.iter().map(|m| m.k as f64).collect();
    let ys: Vec<f64> = w.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let ratio = (sxy / sxx).exp();
    if ratio >= 1.0 {
        f64::INFINITY
    } else {
        w[w.len() - 1] / (1.0 - ratio)
    }
}

fn report_at(model: &impl DtnModel, k_max: u32) -> Result<DtnReport> {
    let modes = model.modes(k_max)?;
    let surrogate_norm = modes.iter().map(weighted).fold(0.0, f64::max);
    let truncation_estimate = tail_estimate(&modes);
    Ok(DtnReport { modes, surrogate_norm, k_max, truncation_estimate })
}

/// Per-mode table and surrogate norm; `k_max` doubles (up to 512) while the
/// tail estimate is at least 1% of the norm.
pub fn report(model: &impl DtnModel, k_max: u32) -> Result<DtnReport> {
    if k_max < 8 {
        return Err(Error::invalid(format!("k_max = {k_max} must be >= 8")));
    }
    let mut k = k_max;
    loop {
        let r = report_at(model, k)?;
        let settled = r.surrogate_norm < NORM_FLOOR || r.truncation_estimate < 0.01 * r.surrogate_norm;
        if settled || k >= K_MAX_CAP {
            return Ok(r);
        }
        k = (2 * k).min(K_MAX_CAP);
    }
}

/// `sup_k |a_k - b_k| / (1 + k)` over the common modes of two reports.
pub fn operator_gap(a: &DtnReport, b: &DtnReport) -> f64 {
    a.modes
        .iter()
        .zip(&b.modes)
        .map(|(x, y)| (x.eigenvalue - y.eigenvalue).abs() / (1.0 + x.k as f64))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallVolumeCheck {
    pub exact_delta: f64,
    pub predicted_delta: f64,
    /// Relative error, or the absolute error when the prediction is zero.
    pub rel_err: f64,
}

/// Compares the exact DtN perturbation on `B_s` caused by the profile shrunk
/// by `rho` with the prediction from its polarization tensor.
pub fn small_volume_check(profile: &LayeredProfile, rho: f64, s: f64, k: u32) -> Result<SmallVolumeCheck> {
    if k == 0 {
        return Err(Error::invalid("mode index must be >= 1"));
    }
    if !(rho > 0.0 && s > 0.0 && s <= 1.0) {
        return Err(Error::invalid(format!("need rho > 0 and s in (0, 1], got {rho}, {s}")));
    }
    if rho * profile.outer_radius() >= s {
        return Err(Error::Geometry(format!(
            "inclusion radius {} does not fit inside s = {s}",
            rho * profile.outer_radius()
        )));
    }
    // Exact: rescale B_s to the unit ball.
    let scaled = profile.scale(rho / s)?;
    let radii = scaled.radii();
    let mut shells = Vec::with_capacity(scaled.layers() + 1);
    for j in (0..scaled.layers()).rev() {
        shells.push(Shell { r_lo: radii[j + 1], r_hi: radii[j], sigma: scaled.sigma()[j] });
    }
    shells.push(Shell { r_lo: radii[0], r_hi: 1.0, sigma: 1.0 });
    let inner = match scaled.core() {
        Core::Insulating => InnerCondition::NeumannZero,
        Core::Conductivity(b) => InnerCondition::Core(b),
    };
    let medium = RadialMedium::new(profile.dimension(), scaled.core_radius(), inner, shells)?;
    let exact = mode_dtn(&medium, k)?.delta / s;

    let m = cgpt(profile, k)?;
    let kf = k as f64;
    let predicted = match profile.dimension() {
        Dimension::Three => {
            let b0 = m * rho.powi(k as i32) * s.powi(k as i32 + 1)
                / (m * rho.powi(2 * k as i32 + 1) + (2.0 * kf + 1.0) * s.powi(2 * k as i32 + 1));
            -(2.0 * kf + 1.0) * b0 * rho.powi(k as i32 + 1) / s.powi(k as i32 + 2)
        }
        Dimension::Two => {
            let mr = m * rho.powi(2 * k as i32);
            2.0 * kf * mr / (s * (2.0 * std::f64::consts::PI * kf * s.powi(2 * k as i32) - mr))
        }
    };
    let rel_err = if predicted == 0.0 {
        exact.abs()
    } else {
        (exact - predicted).abs() / predicted.abs()
    };
    Ok(SmallVolumeCheck { exact_delta: exact, predicted_delta: predicted, rel_err })
}

/// Medium built for each point of a radius sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Uncoated insulating hole of radius `rho` (virtual side).
    VirtualUncoated { dimension: Dimension },
    /// Coated hole: the profile scaled by `rho` (virtual side).
    VirtualCoated { profile: LayeredProfile },
    /// Physical laminate. With `enhanced`, the hole is enlarged to
    /// `rho_ec(rho, d, order)` and `rho` is the targeted level.
    Laminate {
        profile: LayeredProfile,
        order: usize,
        enhanced: bool,
        safety: f64,
    },
    /// 2D shielded cloak, exact anisotropic solve, hole `rho^(1/(1+N))`,
    /// shield `zeta = rho^2`, core `beta`.
    Shielded { profile: LayeredProfile, order: usize, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rho_or_eps: f64,
    pub surrogate_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub fit: SlopeFit,
    pub k_max: u32,
}

fn sweep_point(mode: &SweepMode, rho: f64, k_max: u32) -> Result<f64> {
    Ok(match mode {
        SweepMode::VirtualUncoated { dimension } => {
            let f = CloakField::uncoated(*dimension, rho)?;
            report(&virtual_medium(&f)?, k_max)?.surrogate_norm
        }
        SweepMode::VirtualCoated { profile } => {
            let f = CloakField::new(profile.clone(), rho)?;
            report(&virtual_medium(&f)?, k_max)?.surrogate_norm
        }
        SweepMode::Laminate { profile, order, enhanced, safety } => {
            let d = profile.dimension();
            let hole = if *enhanced { rho_ec(rho, d.value(), *order) } else { rho };
            let field = CloakField::new(profile.clone(), hole)?;
            let eps = recommended_epsilon(d, rho, profile.contrast(), *order, *safety)?;
            let mut req = MaterialRequest::new(eps, *order);
            req.alpha = AlphaChoice::Auto;
            let plan = plan_materials(&field, &req)?;
            let lam = build_laminate(&field, &plan, ShellOrder::default())?;
            report(&lam, k_max)?.surrogate_norm
        }
        SweepMode::Shielded { profile, order, beta } => {
            let field = CloakField::new(profile.clone(), rho_ec(rho, 2, *order))?;
            let model = ShieldedField { field: &field, zeta: shield_conductivity(rho, *order), beta: *beta };
            report(&model, k_max)?.surrogate_norm
        }
    })
}

/// Surrogate norm against `rho` and the fitted log-log slope.
pub fn sweep_rho(mode: &SweepMode, rhos: &[f64], k_max: u32) -> Result<SweepResult> {
    if rhos.len() < 4 {
        return Err(Error::invalid("a radius sweep needs at least 4 values"));
    }
    let lo = rhos.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = rhos.iter().cloned().fold(0.0, f64::max);
    if hi / lo < 10.0 * (1.0 - 1e-9) {
        return Err(Error::invalid("a radius sweep must span at least one decade"));
    }
    let mut sorted = rhos.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rows = sorted
        .iter()
        .map(|&rho| {
            sweep_point(mode, rho, k_max)
                .map(|n| SweepRow { rho_or_eps: rho, surrogate_norm: n })
                .map_err(|e| Error::Sweep { param: rho, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_rows(&rows)?;
    Ok(SweepResult { rows, fit, k_max })
}

fn fit_rows(rows: &[SweepRow]) -> Result<SlopeFit> {
    let x: Vec<f64> = rows.iter().map(|r| r.rho_or_eps).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.surrogate_norm).collect();
    loglog_slope(&x, &y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    pub laminate_norm: f64,
    pub reference_norm: f64,
    /// `|laminate_norm - reference_norm|`.
    pub gap: f64,
    /// `sup_k |lambda_laminate - lambda_reference| / (1 + k)`.
    pub operator_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSweep {
    pub rows: Vec<EpsilonRow>,
    /// Slope of `gap` against epsilon.
    pub fit: SlopeFit,
    /// Slope of `operator_gap` against epsilon.
    pub operator_fit: SlopeFit,
    pub k_max: u32,
}

/// Laminates of the plan's materials at each lamination scale against the
/// exact anisotropic cloak.
pub fn sweep_epsilon(
    field: &CloakField,
    plan: &MaterialPlan,
    epsilons: &[f64],
    k_max: u32,
    shell_order: ShellOrder,
) -> Result<EpsilonSweep> {
    let reference = report(field, k_max)?;
    let gammas: Vec<f64> = plan.gammas.iter().filter(|g| !g.cells.is_empty()).map(|g| g.value).collect();
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let mut rows = Vec::with_capacity(eps.len());
    for &e in &eps {
        let run = || -> Result<EpsilonRow> {
            if crate::laminate_builder::cell_count(e)? < 2 {
                return Err(Error::invalid(format!("epsilon {e} gives fewer than 2 cells")));
            }
            let req = MaterialRequest {
                epsilon: e,
                alpha: AlphaChoice::Value(plan.alpha),
                gammas: GammaStrategy::Explicit(gammas.clone()),
                order: plan.order,
                max_materials: None,
                split_at_breakpoints: false,
            };
            let p = plan_materials(field, &req)?;
            let lam = build_laminate(field, &p, shell_order)?;
            let r = report_at(&lam, reference.k_max)?;
            Ok(EpsilonRow {
                epsilon: e,
                laminate_norm: r.surrogate_norm,
                reference_norm: reference.surrogate_norm,
                gap: (r.surrogate_norm - reference.surrogate_norm).abs(),
                operator_gap: operator_gap(&r, &reference),
            })
        };
        rows.push(run().map_err(|err| Error::Sweep { param: e, source: Box::new(err) })?);
    }
    let fit = loglog_slope(
        &rows.iter().map(|r| r.epsilon).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.gap).collect::<Vec<_>>(),
    )?;
    let operator_fit = loglog_slope(
        &rows.iter().map(|r| r.epsilon).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.operator_gap).collect::<Vec<_>>(),
    )?;
    Ok(EpsilonSweep { rows, fit, operator_fit, k_max: reference.k_max })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldedReport {
    pub beta: f64,
    pub report: DtnReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldVerification {
    pub reports: Vec<ShieldedReport>,
    /// Largest over smallest surrogate norm across the cores.
    pub spread: f64,
    /// Whether the spread stays below 2.
    pub consistent: bool,
}

fn verify_with(betas: &[f64], mut build: impl FnMut(f64) -> Result<DtnReport>) -> Result<ShieldVerification> {
    if betas.is_empty() {
        return Err(Error::invalid("need at least one core conductivity"));
    }
    if betas.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::invalid("core conductivities must be finite and >= 0"));
    }
    let mut sorted = betas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let reports = sorted
        .iter()
        .map(|&beta| build(beta).map(|report| ShieldedReport { beta, report }))
        .collect::<Result<Vec<_>>>()?;
    let hi = reports.iter().map(|r| r.report.surrogate_norm).fold(0.0, f64::max);
    let lo = reports.iter().map(|r| r.report.surrogate_norm).fold(f64::INFINITY, f64::min);
    let spread = if lo > 0.0 { hi / lo } else if hi == 0.0 { 1.0 } else { f64::INFINITY };
    Ok(ShieldVerification { reports, spread, consistent: spread < 2.0 })
}

/// Reports of a shielded laminate for each core conductivity.
pub fn verify_shielded(laminate: &Laminate, betas: &[f64], k_max: u32) -> Result<ShieldVerification> {
    if laminate.dimension != Dimension::Two {
        return Err(Error::UnsupportedDimension(laminate.dimension.value()));
    }
    if laminate.shield.is_none() {
        return Err(Error::invalid("laminate has no shield"));
    }
    verify_with(betas, |beta| report(&LaminateModel { laminate, beta }, k_max))
}

/// Same check on the exact anisotropic cloak behind a shield `zeta`.
pub fn verify_shielded_field(field: &CloakField, zeta: f64, betas: &[f64], k_max: u32) -> Result<ShieldVerification> {
    verify_with(betas, |beta| report(&ShieldedField { field, zeta, beta }, k_max))
}

pub fn write_modes_csv<W: Write>(report: &DtnReport, out: W) -> Result<()> {
    write_rows(
        out,
        &["k", "eigenvalue", "delta"],
        report.modes.iter().map(|m| vec![m.k.to_string(), fmt_f64(m.eigenvalue), fmt_f64(m.delta)]),
    )
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    write_rows(
        out,
        &["rho_or_eps", "surrogate_norm"],
        rows.iter().map(|r| vec![fmt_f64(r.rho_or_eps), fmt_f64(r.surrogate_norm)]),
    )
}

pub fn write_epsilon_csv<W: Write>(rows: &[EpsilonRow], out: W) -> Result<()> {
    write_rows(
        out,
        &["epsilon", "laminate_norm", "reference_norm", "gap", "operator_gap"],
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.epsilon),
                fmt_f64(r.laminate_norm),
                fmt_f64(r.reference_norm),
                fmt_f64(r.gap),
                fmt_f64(r.operator_gap),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn homogeneous_ball_is_exactly_k() {
        for d in [Dimension::Two, Dimension::Three] {
            let m = RadialMedium::homogeneous(d, 0.3, InnerCondition::Core(1.0)).unwrap();
            let r = report(&m, 16).unwrap();
            assert!(r.surrogate_norm <= 1e-13);
        }
    }

    #[test]
    fn neumann_annulus_closed_forms() {
        let m = RadialMedium::homogeneous(Dimension::Two, 0.5, InnerCondition::NeumannZero).unwrap();
        assert_relative_eq!(mode_dtn(&m, 1).unwrap().eigenvalue, 0.6, max_relative = 1e-15);
        let m = RadialMedium::homogeneous(Dimension::Three, 0.5, InnerCondition::NeumannZero).unwrap();
        assert_relative_eq!(mode_dtn(&m, 1).unwrap().eigenvalue, 14.0 / 17.0, max_relative = 1e-15);
    }

    #[test]
    fn identical_split_shell_changes_nothing() {
        let a = RadialMedium::new(
            Dimension::Three,
            0.4,
            InnerCondition::NeumannZero,
            vec![Shell { r_lo: 0.4, r_hi: 0.6, sigma: 3.0 }, Shell { r_lo: 0.6, r_hi: 1.0, sigma: 1.0 }],
        )
        .unwrap();
        let b = RadialMedium::new(
            Dimension::Three,
            0.4,
            InnerCondition::NeumannZero,
            vec![
                Shell { r_lo: 0.4, r_hi: 0.5, sigma: 3.0 },
                Shell { r_lo: 0.5, r_hi: 0.6, sigma: 3.0 },
                Shell { r_lo: 0.6, r_hi: 1.0, sigma: 1.0 },
            ],
        )
        .unwrap();
        let (x, y) = (a.eigenvalues(20).unwrap(), b.eigenvalues(20).unwrap());
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() <= 1e-13 * p.abs().max(1.0));
        }
    }

    #[test]
    fn tiling_is_checked() {
        let gap = vec![Shell { r_lo: 0.5, r_hi: 0.7, sigma: 1.0 }, Shell { r_lo: 0.8, r_hi: 1.0, sigma: 1.0 }];
        assert!(RadialMedium::new(Dimension::Two, 0.5, InnerCondition::NeumannZero, gap).is_err());
        assert!(RadialMedium::homogeneous(Dimension::Two, 1.0, InnerCondition::NeumannZero).is_err());
    }

    #[test]
    fn identity_field_matches_plain_annulus() {
        // Outside 3/4 the field is untouched; compare a medium that is plain on [1/2, 1].
        let f = CloakField::uncoated(Dimension::Two, 0.1).unwrap();
        let aniso = mode_dtn_aniso_2d(&f, 1).unwrap().eigenvalue;
        // Virtual side: insulating hole of radius 0.1 in a unit disk.
        let t: f64 = 0.01;
        assert_relative_eq!(aniso, (1.0 - t) / (1.0 + t), max_relative = 1e-13);
    }

    #[test]
    fn shield_limits() {
        // A vanishing shield conductivity acts as an insulating wall.
        let neumann = RadialMedium::homogeneous(Dimension::Two, 0.5, InnerCondition::NeumannZero).unwrap();
        let shielded = RadialMedium::homogeneous(
            Dimension::Two,
            0.5,
            InnerCondition::Shielded { zeta: 1e-14, core_radius: 0.25, beta: 1e3 },
        )
        .unwrap();
        let (a, b) = (neumann.eigenvalues(10).unwrap(), shielded.eigenvalues(10).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-10);
        }
    }

    #[test]
    fn small_volume_homogeneous() {
        let p = LayeredProfile::new(Dimension::Three, vec![1.0], vec![], Core::Conductivity(1.0)).unwrap();
        let c = small_volume_check(&p, 0.01, 0.9, 2).unwrap();
        assert_eq!(c.predicted_delta, 0.0);
        assert!(c.exact_delta.abs() < 1e-13);
        assert!(small_volume_check(&p, 1.0, 0.9, 1).is_err());
    }

    #[test]
    fn report_needs_enough_modes() {
        let m = RadialMedium::homogeneous(Dimension::Two, 0.5, InnerCondition::NeumannZero).unwrap();
        assert!(report(&m, 4).is_err());
    }

    #[test]
    fn sweep_needs_a_decade() {
        let mode = SweepMode::VirtualUncoated { dimension: Dimension::Two };
        assert!(sweep_rho(&mode, &[0.1, 0.12, 0.14, 0.16], 16).is_err());
        assert!(sweep_rho(&mode, &[0.02, 0.2], 16).is_err());
    }
}
