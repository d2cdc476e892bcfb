//! Realization of the anisotropic cloak by thin isotropic shells.
//!
//! Each cell of width `epsilon` holds one period of three shells with
//! conductivities `alpha < 1 < gamma`. The volume fractions are chosen so that
//! the width-weighted arithmetic mean matches the tangential eigenvalue and the
//! harmonic mean matches the radial one at the cell's left endpoint.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cloak_transform::{rho_ec, CloakField, Region, HOLE};
use crate::csv_util::{fmt_f64, write_rows};
use crate::radial_media::Dimension;
use crate::{Error, Result};

/// Tolerance on fractions before clamping.
const FRACTION_SLACK: f64 = 1e-12;
/// One-sided cells get this multiple of their largest lower bound.
pub const ONE_SIDED_MARGIN: f64 = 1.5;
/// Largest accepted cell count.
pub const MAX_CELLS: usize = 10_000_000;
/// Scale factor used when the scaling rule picks `alpha`.
pub const ALPHA_SCALE: f64 = 0.5;

/// Volume fractions `(l0, l1)` of the `alpha` and unit shells; the `gamma`
/// shell takes the rest.
pub fn solve_fractions(sigma1: f64, sigma2: f64, alpha: f64, gamma: f64) -> Result<(f64, f64)> {
    if ![sigma1, sigma2, alpha, gamma].iter().all(|x| x.is_finite() && *x > 0.0) {
        return Err(Error::InvalidMaterials(format!(
            "non-positive input: sigma1 {sigma1}, sigma2 {sigma2}, alpha {alpha}, gamma {gamma}"
        )));
    }
    if alpha == 1.0 || gamma == 1.0 || gamma == alpha {
        return Err(Error::InvalidMaterials(format!("degenerate materials alpha {alpha}, gamma {gamma}")));
    }
    if !(alpha < 1.0 && 1.0 < gamma) {
        return Err(Error::InvalidMaterials(format!("need alpha < 1 < gamma, got {alpha}, {gamma}")));
    }
    if sigma1 == 1.0 && sigma2 == 1.0 {
        return Ok((0.0, 1.0));
    }
    let l0 = alpha * (sigma2 + gamma / sigma1 - gamma - 1.0) / ((1.0 - alpha) * (gamma - alpha));
    let l1 = (sigma2 + alpha * gamma / sigma1 - alpha - gamma) / ((alpha - 1.0) * (gamma - 1.0));
    let l2 = gamma * (sigma2 + alpha / sigma1 - alpha - 1.0) / ((gamma - alpha) * (gamma - 1.0));
    for (name, l) in [("l0", l0), ("l1", l1), ("1-l0-l1", l2)] {
        if !(-FRACTION_SLACK..=1.0 + FRACTION_SLACK).contains(&l) {
            return Err(Error::InfeasibleFractions {
                s: f64::NAN,
                bound: format!("{name} = {l} outside [0, 1]"),
            });
        }
    }
    let l0 = l0.clamp(0.0, 1.0);
    let l1 = l1.clamp(0.0, 1.0 - l0);
    let l2 = 1.0 - l0 - l1;
    let arith = alpha * l0 + l1 + gamma * l2;
    let harm = l0 / alpha + l1 + l2 / gamma;
    if (arith - sigma2).abs() > 1e-12 * sigma2.max(1.0) || (harm - 1.0 / sigma1).abs() > 1e-12 * (1.0 / sigma1).max(1.0)
    {
        return Err(Error::InfeasibleFractions {
            s: f64::NAN,
            bound: format!("back-substitution residual too large (means {arith}, {harm})"),
        });
    }
    Ok((l0, l1))
}

fn with_s(e: Error, s: f64) -> Error {
    match e {
        Error::InfeasibleFractions { bound, .. } => Error::InfeasibleFractions { s, bound },
        other => other,
    }
}

/// Lower bound on `gamma` at a point: `(sigma2 - alpha) / (1 - alpha/sigma1)`.
pub fn gamma_lower(sigma1: f64, sigma2: f64, alpha: f64) -> f64 {
    (sigma2 - alpha) / (1.0 - alpha / sigma1)
}

/// Upper bound on `gamma` where `sigma1 > 1`: `(1 - sigma2) / (1/sigma1 - 1)`.
pub fn gamma_upper(sigma1: f64, sigma2: f64) -> f64 {
    (1.0 - sigma2) / (1.0 / sigma1 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleInterval {
    pub lo: f64,
    pub hi: f64,
    /// Lower bound before clamping at zero.
    pub lo_raw: f64,
}

impl FeasibleInterval {
    pub fn contains(&self, x: f64, margin: f64) -> bool {
        x > self.lo + margin && x < self.hi - margin
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Stretch factor range `[u_lo, u_hi]` of a transformed piece; the radial and
/// tangential eigenvalues there are `A u` and `B u`.
fn piece_coefficients(field: &CloakField, idx: usize) -> (f64, f64, f64, f64) {
    let p = &field.pieces()[idx];
    let a = field.alpha();
    (p.sigma * a, p.sigma / a, field.stretch(p.s_lo), field.stretch(p.s_hi))
}

/// Stationary points of `u (B u - c) / (A u - c)`-type bounds, scaled by `c`.
fn critical_points(a: f64, b: f64, c: f64) -> [f64; 2] {
    let root = (b * b - a * b).max(0.0).sqrt();
    [c * (b - root) / (a * b), c * (b + root) / (a * b)]
}

/// Range of `alpha` for which the fraction system has a solution wherever `sigma1 < 1`.
pub fn alpha_feasible_interval(field: &CloakField) -> Result<FeasibleInterval> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut any = false;
    for (idx, piece) in field.pieces().iter().enumerate() {
        if !piece.transformed() {
            continue;
        }
        let (a, b, u0, u1) = piece_coefficients(field, idx);
        let cut = 1.0 / a;
        if u0 >= cut {
            continue;
        }
        any = true;
        hi = hi.min(a * u0);
        let f = |u: f64| a * u * (1.0 - b * u) / (1.0 - a * u);
        let top = u1.min(cut);
        let mut cands = vec![u0];
        if u1 < cut {
            cands.push(u1);
        }
        cands.extend(critical_points(a, b, 1.0).into_iter().filter(|&u| u > u0 && u < top));
        for u in cands {
            lo = lo.max(f(u));
        }
    }
    if !any {
        return Err(Error::invalid("radial eigenvalue is >= 1 everywhere; no low-conductivity constraint"));
    }
    let clamped = lo.max(0.0);
    if clamped >= hi {
        return Err(Error::NoFeasibleAlpha { lo: clamped, hi });
    }
    Ok(FeasibleInterval { lo: clamped, hi, lo_raw: lo })
}

/// Sub-interval `[s_lo, s_hi)` of `[1/2, 1]` carrying one laminate period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpan {
    pub s_lo: f64,
    pub s_hi: f64,
}

pub fn cell_count(epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let n = ((0.5 / epsilon) - 1e-9).ceil().max(1.0);
    if n > MAX_CELLS as f64 {
        return Err(Error::invalid(format!("epsilon {epsilon} needs {n} cells, more than {MAX_CELLS}")));
    }
    Ok(n as usize)
}

/// Cells `[1/2 + k eps, 1/2 + (k+1) eps)`, the last one truncated at 1.
pub fn cell_grid(epsilon: f64) -> Result<Vec<CellSpan>> {
    let n = cell_count(epsilon)?;
    Ok((0..n)
        .map(|k| CellSpan {
            s_lo: HOLE + k as f64 * epsilon,
            s_hi: if k + 1 == n { 1.0 } else { HOLE + (k + 1) as f64 * epsilon },
        })
        .collect())
}

/// Splits every cell at the breakpoints it contains.
pub fn split_at_breakpoints(cells: &[CellSpan], field: &CloakField) -> Vec<CellSpan> {
    let bps = field.breakpoints();
    let mut out = Vec::with_capacity(cells.len() + bps.len());
    for c in cells {
        let mut lo = c.s_lo;
        for &b in bps.iter().filter(|&&b| b > c.s_lo && b < c.s_hi) {
            out.push(CellSpan { s_lo: lo, s_hi: b });
            lo = b;
        }
        out.push(CellSpan { s_lo: lo, s_hi: c.s_hi });
    }
    out
}

/// Admissible `gamma` range of one cell; `upper = None` means unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaConstraint {
    pub cell: usize,
    pub s: f64,
    pub lower: f64,
    pub upper: Option<f64>,
}

impl GammaConstraint {
    pub fn admits(&self, gamma: f64) -> bool {
        gamma > self.lower && self.upper.is_none_or(|u| gamma < u)
    }
}

pub fn gamma_constraints(field: &CloakField, alpha: f64, cells: &[CellSpan]) -> Result<Vec<GammaConstraint>> {
    cells
        .iter()
        .enumerate()
        .map(|(cell, c)| {
            let s = c.s_lo;
            let (s1, s2) = field.eigenvalues(s)?;
            if s1 <= 1.0 {
                if alpha >= s1 {
                    return Err(Error::InfeasibleGamma { s, lower: f64::INFINITY, upper: f64::INFINITY });
                }
                Ok(GammaConstraint { cell, s, lower: gamma_lower(s1, s2, alpha), upper: None })
            } else {
                let lower = gamma_lower(s1, s2, alpha);
                let upper = gamma_upper(s1, s2);
                if lower >= upper {
                    return Err(Error::InfeasibleGamma { s, lower, upper });
                }
                Ok(GammaConstraint { cell, s, lower, upper: Some(upper) })
            }
        })
        .collect()
}

/// Exact `gamma` range over a whole piece of the field (supremum of lower
/// bounds, infimum of upper bounds), split where the radial eigenvalue crosses 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PieceGammaBound {
    pub region: Region,
    pub s_lo: f64,
    pub s_hi: f64,
    pub lower: f64,
    pub upper: Option<f64>,
}

pub fn piece_gamma_bounds(field: &CloakField, alpha: f64) -> Vec<PieceGammaBound> {
    let mut out = Vec::new();
    for (idx, piece) in field.pieces().iter().enumerate() {
        if !piece.transformed() {
            out.push(PieceGammaBound {
                region: piece.region,
                s_lo: piece.s_lo,
                s_hi: piece.s_hi,
                lower: 1.0,
                upper: None,
            });
            continue;
        }
        let (a, b, u0, u1) = piece_coefficients(field, idx);
        let lower_at = |u: f64| a * u * (b * u - alpha) / (a * u - alpha);
        let upper_at = |u: f64| a * u * (1.0 - b * u) / (1.0 - a * u);
        let s_of = |u: f64| field.params().g(piece_u_inverse(field, u)).unwrap_or(f64::NAN);
        let cut = 1.0 / a;
        // One-sided part: u < cut.
        if u0 < cut {
            let top = u1.min(cut);
            let mut cands = vec![u0, top];
            cands.extend(critical_points(a, b, alpha).into_iter().filter(|&u| u > u0 && u < top));
            let lower = cands.iter().map(|&u| lower_at(u)).fold(f64::NEG_INFINITY, f64::max);
            let s_hi = if u1 <= cut { piece.s_hi } else { s_of(cut) };
            out.push(PieceGammaBound { region: piece.region, s_lo: piece.s_lo, s_hi, lower, upper: None });
        }
        // Two-sided part: u > cut.
        if u1 > cut {
            let bottom = u0.max(cut);
            let mut lows = vec![u1];
            let mut ups = vec![u1];
            if u0 > cut {
                lows.push(u0);
                ups.push(u0);
            }
            let inside = |u: &f64| *u > bottom && *u < u1;
            lows.extend(critical_points(a, b, alpha).into_iter().filter(inside));
            ups.extend(critical_points(a, b, 1.0).into_iter().filter(inside));
            let lower = lows.iter().map(|&u| lower_at(u)).fold(f64::NEG_INFINITY, f64::max);
            let upper = ups.iter().map(|&u| upper_at(u)).fold(f64::INFINITY, f64::min);
            let s_lo = if u0 >= cut { piece.s_lo } else { s_of(cut) };
            out.push(PieceGammaBound { region: piece.region, s_lo, s_hi: piece.s_hi, lower, upper: Some(upper) });
        }
    }
    out
}

/// Virtual radius with stretch factor `u` (3D only; 2D pieces never split).
fn piece_u_inverse(field: &CloakField, u: f64) -> f64 {
    // u = g_inv(s)/s with g_inv(s) = rho (2s)^(1/alpha): solve for t = g_inv(s).
    let (rho, a) = (field.rho(), field.alpha());
    // t / s = u and s = (t/rho)^a / 2  =>  t^(1-a) = u rho^(-a) / 2.
    (u * rho.powf(-a) / 2.0).powf(1.0 / (1.0 - a))
}

/// How the high-conductivity values are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaStrategy {
    /// Greedy cover of the two-sided intervals plus one shared one-sided value.
    Auto,
    /// User-supplied values; each cell takes the smallest admissible one.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGroup {
    pub value: f64,
    pub cells: Vec<usize>,
}

/// Chooses the high conductivities and assigns one to every cell.
pub fn select_materials(
    constraints: &[GammaConstraint],
    strategy: &GammaStrategy,
    cap: Option<usize>,
) -> Result<Vec<GammaGroup>> {
    let mut groups: Vec<GammaGroup> = Vec::new();
    match strategy {
        GammaStrategy::Explicit(values) => {
            if values.iter().any(|g| !(*g > 1.0 && g.is_finite())) {
                return Err(Error::InvalidMaterials(format!("gamma values must exceed 1: {values:?}")));
            }
            groups = values.iter().map(|&value| GammaGroup { value, cells: Vec::new() }).collect();
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
            for c in constraints {
                let Some(&i) = order.iter().find(|&&i| c.admits(values[i])) else {
                    return Err(Error::InfeasibleGamma { s: c.s, lower: c.lower, upper: c.upper.unwrap_or(f64::INFINITY) });
                };
                groups[i].cells.push(c.cell);
            }
        }
        GammaStrategy::Auto => {
            let mut two: Vec<&GammaConstraint> = constraints.iter().filter(|c| c.upper.is_some()).collect();
            two.sort_by(|a, b| a.upper.unwrap().total_cmp(&b.upper.unwrap()).then(a.cell.cmp(&b.cell)));
            let mut done = vec![false; two.len()];
            for i in 0..two.len() {
                if done[i] {
                    continue;
                }
                let top = two[i].upper.unwrap();
                let members: Vec<usize> = (i..two.len()).filter(|&j| !done[j] && two[j].lower < top).collect();
                let bottom = members.iter().map(|&j| two[j].lower).fold(f64::NEG_INFINITY, f64::max);
                let mut cells = Vec::with_capacity(members.len());
                for j in members {
                    done[j] = true;
                    cells.push(two[j].cell);
                }
                cells.sort_unstable();
                groups.push(GammaGroup { value: 0.5 * (bottom + top), cells });
            }
            let one: Vec<&GammaConstraint> = constraints.iter().filter(|c| c.upper.is_none()).collect();
            if !one.is_empty() {
                let need = one.iter().map(|c| c.lower).fold(1.0_f64, f64::max);
                let reuse = groups
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.value > need)
                    .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
                    .map(|(i, _)| i);
                let i = match reuse {
                    Some(i) => i,
                    None => {
                        groups.push(GammaGroup { value: ONE_SIDED_MARGIN * need, cells: Vec::new() });
                        groups.len() - 1
                    }
                };
                groups[i].cells.extend(one.iter().map(|c| c.cell));
                groups[i].cells.sort_unstable();
            }
        }
    }
    let used = groups.iter().filter(|g| !g.cells.is_empty()).count();
    if let Some(cap) = cap {
        if used > cap {
            return Err(Error::TooManyMaterials { needed: used, cap });
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaChoice {
    /// Scaling rule if feasible, else the interval midpoint.
    Auto,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    Scaling,
    Midpoint,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialRequest {
    pub epsilon: f64,
    pub alpha: AlphaChoice,
    pub gammas: GammaStrategy,
    /// Order of the coating; sets the target radius `rho_field^((d+2N)/d)`.
    pub order: usize,
    pub max_materials: Option<usize>,
    pub split_at_breakpoints: bool,
}

impl MaterialRequest {
    pub fn new(epsilon: f64, order: usize) -> Self {
        MaterialRequest {
            epsilon,
            alpha: AlphaChoice::Auto,
            gammas: GammaStrategy::Auto,
            order,
            max_materials: None,
            split_at_breakpoints: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialPlan {
    pub alpha: f64,
    pub alpha_source: AlphaSource,
    pub alpha_interval: FeasibleInterval,
    pub gammas: Vec<GammaGroup>,
    pub cells: Vec<CellSpan>,
    pub constraints: Vec<GammaConstraint>,
    pub kappa: f64,
    pub gamma_max: f64,
    pub epsilon: f64,
    pub order: usize,
    /// Radius whose invisibility level the plan targets.
    pub target_rho: f64,
    /// `alpha * kappa |ln rho| / rho_field^(d-2)`.
    pub alpha_scale: f64,
    /// `gamma / (kappa |ln rho|)` per group.
    pub gamma_scales: Vec<f64>,
}

impl MaterialPlan {
    /// High conductivity assigned to each cell.
    pub fn cell_gammas(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.cells.len()];
        for g in &self.gammas {
            for &c in &g.cells {
                out[c] = g.value;
            }
        }
        out
    }
}

pub fn plan_materials(field: &CloakField, req: &MaterialRequest) -> Result<MaterialPlan> {
    let d = field.dimension().value();
    let interval = alpha_feasible_interval(field)?;
    let kappa = field.source().contrast();
    let df = d as f64;
    let target_rho = field.rho().powf((df + 2.0 * req.order as f64) / df);
    let log_scale = kappa * target_rho.ln().abs();
    let geom = field.rho().powi(d as i32 - 2);
    let (alpha, alpha_source) = match req.alpha {
        AlphaChoice::Value(a) => {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::InvalidMaterials(format!("alpha {a} must lie in (0, 1)")));
            }
            if !(a > interval.lo && a < interval.hi) {
                return Err(Error::AlphaOutOfRange { alpha: a, lo: interval.lo, hi: interval.hi });
            }
            (a, AlphaSource::Explicit)
        }
        AlphaChoice::Auto => {
            let a = ALPHA_SCALE * geom / log_scale;
            if interval.contains(a, 1e-9) {
                (a, AlphaSource::Scaling)
            } else {
                (interval.midpoint(), AlphaSource::Midpoint)
            }
        }
    };
    let mut cells = cell_grid(req.epsilon)?;
    if req.split_at_breakpoints {
        cells = split_at_breakpoints(&cells, field);
    }
    let constraints = gamma_constraints(field, alpha, &cells)?;
    let gammas = select_materials(&constraints, &req.gammas, req.max_materials)?;
    let gamma_max = gammas.iter().filter(|g| !g.cells.is_empty()).map(|g| g.value).fold(1.0, f64::max);
    Ok(MaterialPlan {
        alpha,
        alpha_source,
        alpha_interval: interval,
        gamma_scales: gammas.iter().map(|g| g.value / log_scale).collect(),
        gammas,
        cells,
        constraints,
        kappa,
        gamma_max,
        epsilon: req.epsilon,
        order: req.order,
        target_rho,
        alpha_scale: alpha * log_scale / geom,
    })
}

/// Material order inside a period, listed from the inner shell outward as
/// indices into `[alpha, 1, gamma]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShellOrder(pub [usize; 3]);

impl Default for ShellOrder {
    fn default() -> Self {
        ShellOrder([0, 1, 2])
    }
}

impl ShellOrder {
    pub fn new(order: [usize; 3]) -> Result<Self> {
        let mut seen = [false; 3];
        for &i in &order {
            if i > 2 || seen[i] {
                return Err(Error::invalid(format!("{order:?} is not a permutation of 0, 1, 2")));
            }
            seen[i] = true;
        }
        Ok(ShellOrder(order))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub r_lo: f64,
    pub r_hi: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaminateCell {
    pub s_lo: f64,
    pub s_hi: f64,
    pub l0: f64,
    pub l1: f64,
    pub materials: [f64; 3],
}

impl LaminateCell {
    pub fn fractions(&self) -> [f64; 3] {
        [self.l0, self.l1, 1.0 - self.l0 - self.l1]
    }

    /// Width-weighted arithmetic and harmonic means over one period.
    pub fn means(&self) -> (f64, f64) {
        let f = self.fractions();
        let arith = (0..3).map(|i| f[i] * self.materials[i]).sum();
        let harm = 1.0 / (0..3).map(|i| f[i] / self.materials[i]).sum::<f64>();
        (arith, harm)
    }

    /// Shells of this period from the inner edge outward; empty fractions are skipped.
    pub fn shells(&self, order: ShellOrder) -> impl Iterator<Item = Shell> {
        let f = self.fractions();
        let width = self.s_hi - self.s_lo;
        let last = order.0.iter().rposition(|&i| f[i] > 0.0).unwrap_or(2);
        let (s_lo, s_hi, materials) = (self.s_lo, self.s_hi, self.materials);
        let mut r = s_lo;
        order.0.into_iter().enumerate().filter_map(move |(n, i)| {
            if f[i] <= 0.0 {
                return None;
            }
            let r_hi = if n == last { s_hi } else { r + f[i] * width };
            let shell = Shell { r_lo: r, r_hi, sigma: materials[i] };
            r = r_hi;
            Some(shell)
        })
    }
}

/// Thin homogeneous shell on `[1/4, 1/2]` in front of an arbitrary core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shield {
    pub r_lo: f64,
    pub r_hi: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LaminateDoc", into = "LaminateDoc")]
pub struct Laminate {
    pub dimension: Dimension,
    pub epsilon: f64,
    pub n_cells: usize,
    pub shell_order: ShellOrder,
    pub cells: Vec<LaminateCell>,
    pub shield: Option<Shield>,
}

#[derive(Serialize, Deserialize)]
struct LaminateDoc {
    dimension: Dimension,
    epsilon: f64,
    n_cells: usize,
    #[serde(default)]
    shell_order: ShellOrder,
    cells: Vec<LaminateCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shield: Option<Shield>,
    /// Core marker for shielded laminates; the verifier supplies the value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    core: Option<String>,
    shells: Vec<Shell>,
}

impl From<Laminate> for LaminateDoc {
    fn from(l: Laminate) -> Self {
        let shells = l.shells();
        LaminateDoc {
            dimension: l.dimension,
            epsilon: l.epsilon,
            n_cells: l.n_cells,
            shell_order: l.shell_order,
            core: l.shield.map(|_| "arbitrary".to_string()),
            cells: l.cells,
            shield: l.shield,
            shells,
        }
    }
}

impl TryFrom<LaminateDoc> for Laminate {
    type Error = Error;

    fn try_from(doc: LaminateDoc) -> Result<Self> {
        let lam = Laminate {
            dimension: doc.dimension,
            epsilon: doc.epsilon,
            n_cells: doc.n_cells,
            shell_order: doc.shell_order,
            cells: doc.cells,
            shield: doc.shield,
        };
        lam.validate()?;
        if lam.shells() != doc.shells {
            return Err(Error::invalid("laminate shells do not match its cells"));
        }
        Ok(lam)
    }
}

impl Laminate {
    /// Cells partition `[1/2, 1]` and every fraction lies in `[0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::invalid("laminate has no cells"));
        }
        if self.cells[0].s_lo != HOLE || self.cells[self.cells.len() - 1].s_hi != 1.0 {
            return Err(Error::invalid("cells must cover [1/2, 1]"));
        }
        for w in self.cells.windows(2) {
            if w[0].s_hi != w[1].s_lo {
                return Err(Error::invalid(format!("gap or overlap at s = {}", w[0].s_hi)));
            }
        }
        for c in &self.cells {
            let f = c.fractions();
            if !(c.s_hi > c.s_lo) || f.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::invalid(format!("bad cell at s = {}", c.s_lo)));
            }
            if c.materials.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                return Err(Error::invalid(format!("bad materials at s = {}", c.s_lo)));
            }
        }
        Ok(())
    }

    /// Shells of the laminated part only, from `s = 1/2` outward.
    pub fn cell_shells(&self) -> Vec<Shell> {
        let mut out = Vec::with_capacity(3 * self.cells.len());
        for c in &self.cells {
            out.extend(c.shells(self.shell_order));
        }
        out
    }

    /// Every shell including the shield, innermost first.
    pub fn shells(&self) -> Vec<Shell> {
        let mut out = Vec::new();
        if let Some(s) = self.shield {
            out.push(Shell { r_lo: s.r_lo, r_hi: s.r_hi, sigma: s.zeta });
        }
        out.extend(self.cell_shells());
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn build_laminate(field: &CloakField, plan: &MaterialPlan, order: ShellOrder) -> Result<Laminate> {
    let gammas = plan.cell_gammas();
    let mut cells = Vec::with_capacity(plan.cells.len());
    for (k, span) in plan.cells.iter().enumerate() {
        let gamma = gammas[k];
        if gamma.is_nan() {
            return Err(Error::invalid(format!("cell {k} has no assigned gamma")));
        }
        let (s1, s2) = field.eigenvalues(span.s_lo)?;
        let (l0, l1) = solve_fractions(s1, s2, plan.alpha, gamma).map_err(|e| with_s(e, span.s_lo))?;
        cells.push(LaminateCell { s_lo: span.s_lo, s_hi: span.s_hi, l0, l1, materials: [plan.alpha, 1.0, gamma] });
    }
    let lam = Laminate {
        dimension: field.dimension(),
        epsilon: plan.epsilon,
        n_cells: cell_count(plan.epsilon)?,
        shell_order: order,
        cells,
        shield: None,
    };
    lam.validate()?;
    Ok(lam)
}

/// `zeta = rho_ec^(2N+2)` with `rho_ec = rho^(1/(1+N))`, that is `rho^2`.
pub fn shield_conductivity(rho: f64, order: usize) -> f64 {
    rho_ec(rho, 2, order).powi(2 * order as i32 + 2)
}

pub fn build_shielded_laminate(
    field: &CloakField,
    plan: &MaterialPlan,
    rho: f64,
    order: usize,
    shell_order: ShellOrder,
) -> Result<Laminate> {
    if field.dimension() != Dimension::Two {
        return Err(Error::UnsupportedDimension(field.dimension().value()));
    }
    if !(rho > 0.0 && rho < 0.5) {
        return Err(Error::invalid(format!("rho = {rho} must lie in (0, 1/2)")));
    }
    let mut lam = build_laminate(field, plan, shell_order)?;
    lam.shield = Some(Shield { r_lo: 0.25, r_hi: HOLE, zeta: shield_conductivity(rho, order) });
    Ok(lam)
}

/// Lamination scale at which the homogenization error matches the cloaking level.
pub fn recommended_epsilon(d: Dimension, rho: f64, kappa: f64, order: usize, safety: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 0.5) {
        return Err(Error::invalid(format!("rho = {rho} must lie in (0, 1/2)")));
    }
    if !(kappa >= 1.0) {
        return Err(Error::invalid(format!("kappa = {kappa} must be >= 1")));
    }
    let l = rho.ln().abs();
    let base = match d {
        Dimension::Two => rho * rho / l.powi(3),
        Dimension::Three => rho.powf(3.0 + 3.0 / (2.0 * order as f64 + 3.0)) / l,
    };
    Ok(safety * base / kappa.powi(3))
}

pub fn write_shells_csv<W: Write>(shells: &[Shell], out: W) -> Result<()> {
    write_rows(
        out,
        &["r_lo", "r_hi", "sigma"],
        shells.iter().map(|s| vec![fmt_f64(s.r_lo), fmt_f64(s.r_hi), fmt_f64(s.sigma)]),
    )
}
