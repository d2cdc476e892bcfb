//! Radially layered conductivity profiles and their contracted polarization
//! tensors, evaluated with 2x2 transfer matrices.
//!
//! Coefficients use the basis `r^k, r^-k` in 2D and `r^k, r^(-k-1)` in 3D. A
//! transfer matrix maps the pair `(a, b)` of the outer region to the pair of the
//! inner region across one interface.

use std::f64::consts::PI;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Dimension {
    Two,
    Three,
}

impl Dimension {
    pub fn value(self) -> u32 {
        match self {
            Dimension::Two => 2,
            Dimension::Three => 3,
        }
    }

    /// Decay exponent of the outgoing solution: `r^-(k + d - 2)`.
    pub(crate) fn outgoing(self, k: u32) -> f64 {
        match self {
            Dimension::Two => k as f64,
            Dimension::Three => k as f64 + 1.0,
        }
    }
}

impl TryFrom<u32> for Dimension {
    type Error = Error;

    fn try_from(d: u32) -> Result<Self> {
        match d {
            2 => Ok(Dimension::Two),
            3 => Ok(Dimension::Three),
            other => Err(Error::UnsupportedDimension(other)),
        }
    }
}

impl From<Dimension> for u32 {
    fn from(d: Dimension) -> u32 {
        d.value()
    }
}

/// What fills the innermost disk or ball.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Core {
    Insulating,
    Conductivity(f64),
}

impl Core {
    /// A zero-conductivity core is the insulating one.
    pub fn normalized(self) -> Core {
        match self {
            Core::Conductivity(0.0) => Core::Insulating,
            c => c,
        }
    }
}

/// Coated inclusion in a unit-conductivity background.
///
/// `radii[0]` is the outer radius; layer `j` occupies `radii[j+1] < r <= radii[j]`
/// and the core fills `r < radii[L]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileDoc")]
pub struct LayeredProfile {
    dimension: Dimension,
    radii: Vec<f64>,
    sigma: Vec<f64>,
    core: Core,
}

#[derive(Deserialize)]
struct ProfileDoc {
    dimension: Dimension,
    radii: Vec<f64>,
    sigma: Vec<f64>,
    core: Core,
}

impl TryFrom<ProfileDoc> for LayeredProfile {
    type Error = Error;

    fn try_from(doc: ProfileDoc) -> Result<Self> {
        LayeredProfile::new(doc.dimension, doc.radii, doc.sigma, doc.core)
    }
}

impl LayeredProfile {
    pub fn new(dimension: Dimension, radii: Vec<f64>, sigma: Vec<f64>, core: Core) -> Result<Self> {
        if radii.len() != sigma.len() + 1 {
            return Err(Error::invalid(format!(
                "{} radii for {} layers, expected {}",
                radii.len(),
                sigma.len(),
                sigma.len() + 1
            )));
        }
        if radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("radii must be finite and positive"));
        }
        if radii.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("radii must be strictly decreasing"));
        }
        if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("layer conductivities must be finite and positive"));
        }
        if let Core::Conductivity(b) = core {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::invalid(format!("core conductivity {b} must be finite and >= 0")));
            }
        }
        Ok(LayeredProfile { dimension, radii, sigma, core: core.normalized() })
    }

    /// Uncoated insulating inclusion of the given radius.
    pub fn insulating_ball(dimension: Dimension, radius: f64) -> Result<Self> {
        Self::new(dimension, vec![radius], Vec::new(), Core::Insulating)
    }

    pub fn dimension(&self) -> Dimension {
        self.dimension
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn core(&self) -> Core {
        self.core
    }

    pub fn layers(&self) -> usize {
        self.sigma.len()
    }

    pub fn outer_radius(&self) -> f64 {
        self.radii[0]
    }

    pub fn core_radius(&self) -> f64 {
        self.radii[self.radii.len() - 1]
    }

    /// Contrast `max(max sigma, 1 / min sigma)` over the coating layers, 1 if uncoated.
    pub fn contrast(&self) -> f64 {
        self.sigma.iter().fold(1.0_f64, |acc, &s| acc.max(s).max(1.0 / s))
    }

    /// Conductivity at radius `r`, with the background outside and the core inside.
    /// Interfaces belong to the inner side.
    pub fn conductivity_at(&self, r: f64) -> f64 {
        if r > self.radii[0] {
            return 1.0;
        }
        for (j, s) in self.sigma.iter().enumerate() {
            if r > self.radii[j + 1] {
                return *s;
            }
        }
        match self.core {
            Core::Insulating => 0.0,
            Core::Conductivity(b) => b,
        }
    }

    pub fn with_sigma(&self, sigma: Vec<f64>) -> Result<Self> {
        Self::new(self.dimension, self.radii.clone(), sigma, self.core)
    }

    /// Dilate every radius by `rho`; conductivities are unchanged.
    pub fn scale(&self, rho: f64) -> Result<Self> {
        scale_profile(self, rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferMatrix {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl TransferMatrix {
    pub const IDENTITY: TransferMatrix = TransferMatrix { m11: 1.0, m12: 0.0, m21: 0.0, m22: 1.0 };

    pub fn det(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn is_finite(&self) -> bool {
        [self.m11, self.m12, self.m21, self.m22].iter().all(|x| x.is_finite())
    }

    fn max_abs(&self) -> f64 {
        self.m11.abs().max(self.m12.abs()).max(self.m21.abs()).max(self.m22.abs())
    }

    /// Same matrix divided by its largest entry; ratios of entries are unchanged.
    fn normalized(self) -> Self {
        let s = self.max_abs();
        if s == 0.0 || !s.is_finite() {
            return self;
        }
        TransferMatrix { m11: self.m11 / s, m12: self.m12 / s, m21: self.m21 / s, m22: self.m22 / s }
    }
}

impl Mul for TransferMatrix {
    type Output = TransferMatrix;

    fn mul(self, o: TransferMatrix) -> TransferMatrix {
        TransferMatrix {
            m11: self.m11 * o.m11 + self.m12 * o.m21,
            m12: self.m11 * o.m12 + self.m12 * o.m22,
            m21: self.m21 * o.m11 + self.m22 * o.m21,
            m22: self.m21 * o.m12 + self.m22 * o.m22,
        }
    }
}

/// Contracted polarization tensors `M_1 .. M_N` of one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CgptVector {
    pub order: usize,
    pub values: Vec<f64>,
}

fn check_mode(k: u32) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("mode index must be >= 1"));
    }
    Ok(())
}

/// Transmission across the sphere of radius `r` from conductivity `sigma_prev`
/// (outside) to `sigma_next` (inside).
pub fn interface_matrix(
    dimension: Dimension,
    k: u32,
    sigma_prev: f64,
    sigma_next: f64,
    r: f64,
) -> Result<TransferMatrix> {
    check_mode(k)?;
    if !(sigma_prev > 0.0 && sigma_next > 0.0) || !sigma_prev.is_finite() || !sigma_next.is_finite() {
        return Err(Error::invalid(format!(
            "interface conductivities must be positive, got {sigma_prev} and {sigma_next}"
        )));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("interface radius must be positive, got {r}")));
    }
    let kf = k as f64;
    let m = match dimension {
        Dimension::Two => {
            let p = r.powi(2 * k as i32);
            let c = 1.0 / (2.0 * sigma_next);
            let diag = c * (sigma_prev + sigma_next);
            let jump = c * (sigma_next - sigma_prev);
            TransferMatrix { m11: diag, m12: jump / p, m21: jump * p, m22: diag }
        }
        Dimension::Three => {
            let p = r.powi(2 * k as i32 + 1);
            let c = 1.0 / ((2.0 * kf + 1.0) * sigma_next);
            let jump = sigma_next - sigma_prev;
            TransferMatrix {
                m11: c * (kf * sigma_prev + (kf + 1.0) * sigma_next),
                m12: c * (kf + 1.0) * jump / p,
                m21: c * kf * jump * p,
                m22: c * ((kf + 1.0) * sigma_prev + kf * sigma_next),
            }
        }
    };
    if !m.is_finite() {
        return Err(Error::Degenerate(format!("interface matrix overflows at k = {k}, r = {r}")));
    }
    Ok(m)
}

/// Closing matrix at the core boundary. A conducting core is an ordinary
/// interface; an insulating one imposes zero flux through its second row.
pub fn core_matrix(dimension: Dimension, k: u32, core: Core, sigma_prev: f64, r: f64) -> Result<TransferMatrix> {
    check_mode(k)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("core radius must be positive, got {r}")));
    }
    match core {
        Core::Conductivity(b) if b < 0.0 || !b.is_finite() => {
            Err(Error::invalid(format!("core conductivity {b} must be finite and >= 0")))
        }
        Core::Conductivity(b) if b > 0.0 => interface_matrix(dimension, k, sigma_prev, b, r),
        _ => {
            let kf = k as f64;
            let (m21, m22) = match dimension {
                Dimension::Two => (-r.powi(2 * k as i32), 1.0),
                Dimension::Three => (-kf * r.powi(2 * k as i32 + 1), kf + 1.0),
            };
            Ok(TransferMatrix { m11: 0.0, m12: 0.0, m21, m22 })
        }
    }
}

/// Full product `Core * P_L * ... * P_1`, renormalized after every factor.
pub fn total_matrix(profile: &LayeredProfile, k: u32) -> Result<TransferMatrix> {
    check_mode(k)?;
    let d = profile.dimension;
    let mut total = TransferMatrix::IDENTITY;
    let mut outside = 1.0;
    for (j, &s) in profile.sigma.iter().enumerate() {
        let p = interface_matrix(d, k, outside, s, profile.radii[j])?;
        total = (p * total).normalized();
        outside = s;
    }
    let c = core_matrix(d, k, profile.core, outside, profile.core_radius())?;
    total = (c * total).normalized();
    if !total.is_finite() {
        return Err(Error::Degenerate(format!("transfer product is not finite at k = {k}")));
    }
    Ok(total)
}

/// Scale-free residual `t21 / t22`; zero exactly when `M_k` vanishes.
pub fn mode_residual(profile: &LayeredProfile, k: u32) -> Result<f64> {
    let t = total_matrix(profile, k)?;
    if t.m22 == 0.0 {
        return Err(Error::Degenerate(format!("resonant profile at k = {k}")));
    }
    Ok(t.m21 / t.m22)
}

pub fn cgpt(profile: &LayeredProfile, k: u32) -> Result<f64> {
    let ratio = mode_residual(profile, k)?;
    let kf = k as f64;
    Ok(match profile.dimension {
        Dimension::Two => 2.0 * PI * kf * ratio,
        Dimension::Three => -(2.0 * kf + 1.0) * ratio,
    })
}

pub fn cgpt_vector(profile: &LayeredProfile, order: usize) -> Result<CgptVector> {
    let values = (1..=order as u32).map(|k| cgpt(profile, k)).collect::<Result<Vec<_>>>()?;
    Ok(CgptVector { order, values })
}

pub fn cgpt_residual(profile: &LayeredProfile, order: usize) -> Result<Vec<f64>> {
    if order == 0 {
        return Err(Error::invalid("order must be >= 1"));
    }
    (1..=order as u32).map(|k| mode_residual(profile, k)).collect()
}

pub fn scale_profile(profile: &LayeredProfile, rho: f64) -> Result<LayeredProfile> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("scale factor must be positive, got {rho}")));
    }
    LayeredProfile::new(
        profile.dimension,
        profile.radii.iter().map(|r| r * rho).collect(),
        profile.sigma.clone(),
        profile.core,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interface_without_contrast_is_identity() {
        let m = interface_matrix(Dimension::Three, 1, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(m, TransferMatrix::IDENTITY);
    }

    #[test]
    fn interface_2d_entries() {
        let m = interface_matrix(Dimension::Two, 1, 1.0, 3.0, 1.0).unwrap();
        assert_relative_eq!(m.m11, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.m12, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.m21, 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.m22, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn interface_3d_lower_left() {
        let m = interface_matrix(Dimension::Three, 2, 2.0, 5.0, 1.5).unwrap();
        assert_relative_eq!(m.m21, 2.0 * 3.0 * 1.5_f64.powi(5) / 25.0, max_relative = 1e-14);
        assert!(m.det() > 0.0);
    }

    #[test]
    fn interface_rejects_bad_input() {
        assert!(interface_matrix(Dimension::Two, 1, 0.0, 1.0, 1.0).is_err());
        assert!(interface_matrix(Dimension::Two, 1, 1.0, 1.0, -1.0).is_err());
        assert!(interface_matrix(Dimension::Two, 0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn insulating_core_rows() {
        let m = core_matrix(Dimension::Three, 1, Core::Insulating, 1.0, 1.0).unwrap();
        assert_eq!((m.m11, m.m12, m.m21, m.m22), (0.0, 0.0, -1.0, 2.0));
        let m = core_matrix(Dimension::Two, 3, Core::Insulating, 1.0, 0.5).unwrap();
        assert_relative_eq!(m.m21, -0.5_f64.powi(6));
        assert_eq!(m.m22, 1.0);
        let m = core_matrix(Dimension::Three, 1, Core::Conductivity(1.0), 1.0, 1.0).unwrap();
        assert_eq!(m, TransferMatrix::IDENTITY);
        assert!(core_matrix(Dimension::Two, 1, Core::Conductivity(-1.0), 1.0, 1.0).is_err());
    }

    #[test]
    fn disk_values() {
        let disk = LayeredProfile::new(Dimension::Two, vec![1.0], vec![], Core::Conductivity(3.0)).unwrap();
        assert_relative_eq!(cgpt(&disk, 1).unwrap(), PI, max_relative = 1e-14);
        let hole = LayeredProfile::insulating_ball(Dimension::Two, 1.0).unwrap();
        for k in 1..6 {
            assert_relative_eq!(cgpt(&hole, k).unwrap(), -2.0 * PI * k as f64, max_relative = 1e-14);
        }
        let ball = LayeredProfile::insulating_ball(Dimension::Three, 1.0).unwrap();
        assert_relative_eq!(cgpt(&ball, 1).unwrap(), 1.5, max_relative = 1e-14);
    }

    #[test]
    fn single_disk_residuals() {
        let disk = LayeredProfile::new(Dimension::Two, vec![1.0], vec![], Core::Conductivity(3.0)).unwrap();
        let r = cgpt_residual(&disk, 2).unwrap();
        assert_relative_eq!(r[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(r[1], 0.5, max_relative = 1e-14);
    }

    #[test]
    fn homogeneous_profile_is_invisible() {
        let p = LayeredProfile::new(Dimension::Three, vec![2.0, 1.5, 1.0], vec![1.0, 1.0], Core::Conductivity(1.0))
            .unwrap();
        for m in cgpt_vector(&p, 6).unwrap().values {
            assert_eq!(m, 0.0);
        }
    }

    #[test]
    fn profile_validation() {
        assert!(LayeredProfile::new(Dimension::Two, vec![1.0, 1.0], vec![2.0], Core::Insulating).is_err());
        assert!(LayeredProfile::new(Dimension::Two, vec![1.0, 2.0], vec![2.0], Core::Insulating).is_err());
        assert!(LayeredProfile::new(Dimension::Two, vec![2.0, 1.0], vec![0.0], Core::Insulating).is_err());
        assert!(LayeredProfile::new(Dimension::Two, vec![2.0], vec![2.0], Core::Insulating).is_err());
        let p = LayeredProfile::new(Dimension::Two, vec![2.0, 1.0], vec![2.0], Core::Conductivity(0.0)).unwrap();
        assert_eq!(p.core(), Core::Insulating);
    }

    #[test]
    fn json_shape() {
        let p = LayeredProfile::new(Dimension::Two, vec![2.0, 1.0], vec![0.5], Core::Insulating).unwrap();
        let v: serde_json::Value = serde_json::to_value(&p).unwrap();
        assert_eq!(v["dimension"], 2);
        assert_eq!(v["core"], "insulating");
        let back: LayeredProfile = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let doc = r#"{"core": {"conductivity": 4.0}, "sigma": [2.0], "radii": [2.0, 1.0], "dimension": 3}"#;
        let p: LayeredProfile = serde_json::from_str(doc).unwrap();
        assert_eq!(p.core(), Core::Conductivity(4.0));
        let bad = r#"{"core": "insulating", "sigma": [2.0], "radii": [1.0, 2.0], "dimension": 2}"#;
        assert!(serde_json::from_str::<LayeredProfile>(bad).is_err());
        let bad = r#"{"core": "insulating", "sigma": [], "radii": [1.0], "dimension": 4}"#;
        assert!(serde_json::from_str::<LayeredProfile>(bad).is_err());
    }

    #[test]
    fn scaling() {
        let p = LayeredProfile::new(Dimension::Two, vec![2.0, 1.0], vec![3.0], Core::Insulating).unwrap();
        assert_eq!(scale_profile(&p, 1.0).unwrap(), p);
        assert_eq!(scale_profile(&p, 0.1).unwrap().radii(), &[0.2, 0.1]);
        assert!(scale_profile(&p, 0.0).is_err());
    }
}
