//! Blow-up map that inflates the hole `B_rho` to `B_{1/2}` and the eigenvalues of
//! the resulting anisotropic conductivity.
//!
//! Only the radial (`sigma1`) and tangential (`sigma2`) eigenvalues are stored;
//! every consumer downstream is radial.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::csv_util::{fmt_f64, write_rows};
use crate::radial_media::{Core, Dimension, LayeredProfile};
use crate::{Error, Result};

/// End of the transformed zone in the physical radius.
pub const TRANSITION: f64 = 0.75;
/// Physical radius of the cloaked hole.
pub const HOLE: f64 = 0.5;

/// Exponent of the middle branch of the map for a hole of radius `rho`.
pub fn alpha_of_rho(rho: f64) -> f64 {
    1.5_f64.ln() / (TRANSITION.ln() - rho.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rho: f64,
    pub alpha: f64,
}

impl TransformParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 0.5) {
            return Err(Error::invalid(format!("rho = {rho} must lie in (0, 1/2)")));
        }
        Ok(TransformParams { rho, alpha: alpha_of_rho(rho) })
    }

    /// Forward map from virtual radius `t` to physical radius.
    pub fn g(&self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("g: argument {t} outside [0, 1]")));
        }
        Ok(if t <= self.rho {
            t / (2.0 * self.rho)
        } else if t <= TRANSITION {
            0.5 * (t / self.rho).powf(self.alpha)
        } else {
            t
        })
    }

    pub fn g_inv(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("g_inv: argument {s} outside [0, 1]")));
        }
        Ok(self.g_inv_unchecked(s))
    }

    fn g_inv_unchecked(&self, s: f64) -> f64 {
        if s <= HOLE {
            2.0 * s * self.rho
        } else if s <= TRANSITION {
            self.rho * (2.0 * s).powf(1.0 / self.alpha)
        } else {
            s
        }
    }

    /// Derivative of `g_inv`; right-limit at the branch points.
    pub fn g_inv_prime(&self, s: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("g_inv_prime: argument {s} outside [0, 1]")));
        }
        Ok(if s < HOLE {
            2.0 * self.rho
        } else if s < TRANSITION {
            self.g_inv_unchecked(s) / (self.alpha * s)
        } else {
            1.0
        })
    }
}

/// Which part of the physical annulus `[1/2, 1]` a piece belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Image of coating layer `j` (outer first).
    Coating(usize),
    /// Image of the background between the coating and radius 3/4.
    Background,
    /// Untouched medium on `(3/4, 1]`.
    Exterior,
}

/// Interval of `s` on which the virtual conductivity is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub s_lo: f64,
    pub s_hi: f64,
    pub sigma: f64,
    pub region: Region,
}

impl Piece {
    pub fn transformed(&self) -> bool {
        self.region != Region::Exterior
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CloakField {
    params: TransformParams,
    source: LayeredProfile,
    pieces: Vec<Piece>,
}

impl CloakField {
    /// `source` is the unscaled coated structure with core radius 1 and an
    /// insulating core; the coating must fit inside the transformed zone.
    pub fn new(source: LayeredProfile, rho: f64) -> Result<Self> {
        let params = TransformParams::new(rho)?;
        if (source.core_radius() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "source core radius must be 1, got {}",
                source.core_radius()
            )));
        }
        if source.core() != Core::Insulating {
            return Err(Error::invalid("source core must be insulating"));
        }
        if rho * source.outer_radius() >= TRANSITION {
            return Err(Error::Geometry(format!(
                "coating radius {} exceeds the transformed zone (3/4)",
                rho * source.outer_radius()
            )));
        }
        let radii = source.radii();
        let l = source.layers();
        let mut pieces = Vec::with_capacity(l + 2);
        let mut lo = HOLE;
        for j in (0..l).rev() {
            let hi = params.g(rho * radii[j])?;
            pieces.push(Piece { s_lo: lo, s_hi: hi, sigma: source.sigma()[j], region: Region::Coating(j) });
            lo = hi;
        }
        pieces.push(Piece { s_lo: lo, s_hi: TRANSITION, sigma: 1.0, region: Region::Background });
        pieces.push(Piece { s_lo: TRANSITION, s_hi: 1.0, sigma: 1.0, region: Region::Exterior });
        Ok(CloakField { params, source, pieces })
    }

    /// Field of the uncoated insulating hole.
    pub fn uncoated(dimension: Dimension, rho: f64) -> Result<Self> {
        Self::new(LayeredProfile::insulating_ball(dimension, 1.0)?, rho)
    }

    pub fn params(&self) -> TransformParams {
        self.params
    }

    pub fn rho(&self) -> f64 {
        self.params.rho
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn dimension(&self) -> Dimension {
        self.source.dimension()
    }

    pub fn source(&self) -> &LayeredProfile {
        &self.source
    }

    /// Pieces from `s = 1/2` outward.
    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Interior points where some eigenvalue jumps or changes formula.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.s_lo).collect()
    }

    /// Piece containing `s`, taking the right-limit at breakpoints.
    pub fn piece_at(&self, s: f64) -> Result<&Piece> {
        if !(HOLE..=1.0).contains(&s) {
            return Err(Error::invalid(format!("s = {s} outside [1/2, 1]")));
        }
        Ok(self.pieces.iter().rev().find(|p| p.s_lo <= s).unwrap_or(&self.pieces[0]))
    }

    /// Geometric factor `(g_inv(s)/s)^(d-2)` of the transformed zone.
    pub(crate) fn stretch(&self, s: f64) -> f64 {
        match self.dimension() {
            Dimension::Two => 1.0,
            Dimension::Three => self.params.g_inv_unchecked(s) / s,
        }
    }

    /// `(lambda1, lambda2)` as evaluated with the formula of `piece` at `s`.
    pub(crate) fn lambdas_on(&self, piece: &Piece, s: f64) -> (f64, f64) {
        if piece.transformed() {
            let u = self.stretch(s);
            (u * self.params.alpha, u / self.params.alpha)
        } else {
            (1.0, 1.0)
        }
    }

    pub fn lambdas(&self, s: f64) -> Result<(f64, f64)> {
        let p = self.piece_at(s)?;
        Ok(self.lambdas_on(p, s))
    }

    pub fn lambda(&self, s: f64) -> Result<f64> {
        Ok(if self.piece_at(s)?.transformed() { 1.0 / self.params.alpha } else { 1.0 })
    }

    /// Conductivity of the virtual medium at the preimage of `s`.
    pub fn virtual_conductivity(&self, s: f64) -> Result<f64> {
        Ok(self.piece_at(s)?.sigma)
    }

    /// Radial and tangential eigenvalues `(sigma1, sigma2)` at `s`.
    pub fn eigenvalues(&self, s: f64) -> Result<(f64, f64)> {
        let p = self.piece_at(s)?;
        let (l1, l2) = self.lambdas_on(p, s);
        Ok((p.sigma * l1, p.sigma * l2))
    }
}

pub fn eigenvalues(s: f64, field: &CloakField) -> Result<(f64, f64)> {
    field.eigenvalues(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyMetrics {
    pub chi_max: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
}

/// Extremes over `[1/2, 1]`. Each evaluator is monotone on a piece, so the
/// piece endpoints suffice.
pub fn anisotropy_metrics(field: &CloakField) -> AnisotropyMetrics {
    let mut chi: f64 = 1.0;
    let mut lmin = f64::INFINITY;
    let mut lmax: f64 = 0.0;
    for p in field.pieces() {
        for s in [p.s_lo, p.s_hi] {
            let (l1, l2) = field.lambdas_on(p, s);
            chi = chi.max(l1 / l2).max(l2 / l1);
            lmin = lmin.min(l1).min(l2);
            lmax = lmax.max(l1).max(l2);
        }
    }
    AnisotropyMetrics { chi_max: chi, lambda_min: lmin, lambda_max: lmax, kappa: field.source().contrast() }
}

/// Enlarged hole radius that keeps the invisibility order of a plain hole of
/// radius `rho` when the coating cancels `order` tensors.
pub fn rho_ec(rho: f64, d: u32, order: usize) -> f64 {
    let d = d as f64;
    rho.powf(d / (d + 2.0 * order as f64))
}

/// Sample points: `points` uniform samples on `[1/2, 1]` plus each breakpoint +- 1e-9.
pub fn curve_samples(field: &CloakField, points: usize) -> Vec<f64> {
    let mut s: Vec<f64> = (0..points)
        .map(|i| if points == 1 { HOLE } else { HOLE + 0.5 * i as f64 / (points - 1) as f64 })
        .collect();
    for b in field.breakpoints() {
        s.push((b - 1e-9).max(HOLE));
        s.push((b + 1e-9).min(1.0));
    }
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

pub fn write_curve_csv<W: Write>(field: &CloakField, points: usize, out: W) -> Result<()> {
    let rows = curve_samples(field, points)
        .into_iter()
        .map(|s| {
            let (s1, s2) = field.eigenvalues(s)?;
            Ok(vec![fmt_f64(s), fmt_f64(s1), fmt_f64(s2), fmt_f64(field.lambda(s)?)])
        })
        .collect::<Result<Vec<_>>>()?;
    write_rows(out, &["s", "sigma1_star", "sigma2_star", "lambda"], rows)
}
