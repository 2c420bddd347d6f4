//! Heat-equation residuals, boundary descriptions and loss assembly.
//!
//! The residual is evaluated in normalized coordinates but enforces the
//! physical equation: with `x_i = L_i u_i`, `t = t_span s` and
//! `T = T_ref + T_scale v`,
//!
//! ```text
//! P / T_scale = Σ_i v_uu,i / L_i² + (g/k) / T_scale - v_s / (alpha t_span)
//! ```
//!
//! so the returned residual has units of 1/m² and vanishes exactly on
//! solutions of the physical PDE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::scaling::NormalizationMap;
use crate::surrogate::{evaluate_batch, Architecture, EvalSensitivity, NetworkEval, PointSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PdeKind {
    /// Steady conduction, `ΔT + g/k = 0`.
    Laplace,
    /// Transient conduction, `ΔT + g/k = (1/alpha) dT/dt`.
    Diffusion,
}

/// Thermal diffusivity in m²/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diffusivity {
    Fixed(f64),
    /// Learned jointly with the network; the value is supplied per call.
    Trainable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeSpec {
    pub kind: PdeKind,
    pub alpha: Diffusivity,
    /// Volumetric source over conductivity, K/m².
    #[serde(default)]
    pub source_over_k: f64,
    pub scaling: NormalizationMap,
}

impl PdeSpec {
    pub fn laplace(scaling: NormalizationMap) -> Self {
        Self {
            kind: PdeKind::Laplace,
            alpha: Diffusivity::Trainable,
            source_over_k: 0.0,
            scaling,
        }
    }

    pub fn diffusion(alpha: Diffusivity, scaling: NormalizationMap) -> Result<Self> {
        let spec = Self {
            kind: PdeKind::Diffusion,
            alpha,
            source_over_k: 0.0,
            scaling,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_source(mut self, source_over_k: f64) -> Self {
        self.source_over_k = source_over_k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.source_over_k.is_finite() {
            return Err(Error::InvalidArgument("source term must be finite".into()));
        }
        if self.kind == PdeKind::Diffusion {
            if let Diffusivity::Fixed(a) = self.alpha {
                if !(a > 0.0 && a.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "diffusivity must be positive, got {a}"
                    )));
                }
            }
            if self.scaling.time.is_none() {
                return Err(Error::InvalidArgument(
                    "diffusion residual needs a time axis in the normalization map".into(),
                ));
            }
        }
        Ok(())
    }

    /// Linear coefficients of the residual for a given diffusivity.
    pub fn operator(&self, alpha: Option<f64>) -> Result<ResidualOperator> {
        self.validate()?;
        let hess_coef = self
            .scaling
            .space
            .iter()
            .map(|m| 1.0 / (m.scale * m.scale))
            .collect();
        let source = self.source_over_k / self.scaling.temperature_scale();
        let time_coef = match self.kind {
            PdeKind::Laplace => None,
            PdeKind::Diffusion => {
                let a = match (self.alpha, alpha) {
                    (_, Some(a)) => a,
                    (Diffusivity::Fixed(a), None) => a,
                    (Diffusivity::Trainable, None) => {
                        return Err(Error::InvalidArgument(
                            "trainable diffusivity needs a current value".into(),
                        ))
                    }
                };
                if !(a.is_finite() && a != 0.0) {
                    return Err(Error::NumericalFailure(format!("diffusivity {a} unusable")));
                }
                let span = self.scaling.time.expect("validated").scale;
                Some(1.0 / (a * span))
            }
        };
        Ok(ResidualOperator {
            hess_coef,
            source,
            time_coef,
        })
    }
}

/// `P = Σ c_i h_i + source - c_t g_t` on a [`NetworkEval`].
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualOperator {
    pub hess_coef: Vec<f64>,
    pub source: f64,
    /// `1/(alpha t_span)`; `None` for the steady equation.
    pub time_coef: Option<f64>,
}

impl ResidualOperator {
    pub fn apply(&self, eval: &NetworkEval) -> Result<f64> {
        ensure_len("hessian diagonal", self.hess_coef.len(), eval.hess_diag.len())?;
        let mut r = self.source;
        for (c, h) in self.hess_coef.iter().zip(&eval.hess_diag) {
            r += c * h;
        }
        if let Some(ct) = self.time_coef {
            let gt = eval.grad_time.ok_or_else(|| {
                Error::InvalidArgument("diffusion residual needs a time derivative".into())
            })?;
            r -= ct * gt;
        }
        Ok(r)
    }

    /// Adds `weight * dP/d(field)` into a sensitivity.
    pub fn add_sensitivity(&self, weight: f64, sens: &mut EvalSensitivity) {
        for (s, c) in sens.hess_diag.iter_mut().zip(&self.hess_coef) {
            *s += weight * c;
        }
        if let Some(ct) = self.time_coef {
            sens.grad_time -= weight * ct;
        }
    }
}

/// Normalized residual at one evaluation, using the fixed diffusivity.
pub fn residual(eval: &NetworkEval, pde: &PdeSpec) -> Result<f64> {
    pde.operator(None)?.apply(eval)
}

/// Mean squared residual over observation and collocation points.
pub fn pde_loss(
    params: &[f64],
    arch: &Architecture,
    pde: &PdeSpec,
    obs_points: &PointSet,
    collocation: &PointSet,
) -> Result<f64> {
    if obs_points.is_empty() && collocation.is_empty() {
        return Err(Error::InvalidArgument(
            "pde loss needs observation or collocation points".into(),
        ));
    }
    let op = pde.operator(None)?;
    let all = obs_points.concat(collocation)?;
    let evals = evaluate_batch(params, arch, &all)?;
    let mut sum = 0.0;
    for e in &evals {
        let r = op.apply(e)?;
        sum += r * r;
    }
    Ok(sum / evals.len() as f64)
}

/// Data term, PDE term and their weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_term: f64,
    pub pde_term: f64,
    pub lambda: f64,
    pub total: f64,
}

pub fn total_loss(data_term: f64, pde_term: f64, lambda: f64) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "pde weight must be nonnegative, got {lambda}"
        )));
    }
    if pde_term < 0.0 {
        return Err(Error::InvalidArgument("pde term must be nonnegative".into()));
    }
    Ok(LossBreakdown {
        data_term,
        pde_term,
        lambda,
        total: data_term + lambda * pde_term,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Low,
    High,
}

/// An axis-aligned facet of the rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Facet {
    pub axis: usize,
    pub side: Side,
}

impl Facet {
    pub const LEFT: Facet = Facet {
        axis: 0,
        side: Side::Low,
    };
    pub const RIGHT: Facet = Facet {
        axis: 0,
        side: Side::High,
    };
    pub const BOTTOM: Facet = Facet {
        axis: 1,
        side: Side::Low,
    };
    pub const TOP: Facet = Facet {
        axis: 1,
        side: Side::High,
    };

    pub fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }

    pub fn outward_normal(&self, dims: usize) -> Vec<f64> {
        let mut n = vec![0.0; dims];
        n[self.axis] = match self.side {
            Side::Low => -1.0,
            Side::High => 1.0,
        };
        n
    }

    /// Normalized coordinate of the facet along its axis.
    pub fn normalized_position(&self) -> f64 {
        match self.side {
            Side::Low => 0.0,
            Side::High => 1.0,
        }
    }
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Low => "low",
            Side::High => "high",
        };
        match AXIS_NAMES.get(self.axis) {
            Some(a) => write!(f, "{a}_{side}"),
            None => write!(f, "axis{}_{side}", self.axis),
        }
    }
}

impl FromStr for Facet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => return Ok(Facet::LEFT),
            "right" => return Ok(Facet::RIGHT),
            "bottom" => return Ok(Facet::BOTTOM),
            "top" => return Ok(Facet::TOP),
            _ => {}
        }
        let bad = || Error::InvalidArgument(format!("unknown facet {s:?}"));
        let (axis, side) = s.split_once('_').ok_or_else(bad)?;
        let axis = match axis {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            other => other
                .strip_prefix("axis")
                .and_then(|n| n.parse().ok())
                .ok_or_else(bad)?,
        };
        let side = match side {
            "low" => Side::Low,
            "high" => Side::High,
            _ => return Err(bad()),
        };
        Ok(Facet { axis, side })
    }
}

impl Serialize for Facet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Facet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Thermal condition on one facet. Fluxes are in W/m², `h` in W/(m²·K).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet { temperature: f64 },
    /// Prescribed heat flux entering the body through the facet.
    Neumann { flux: f64 },
    /// Convective exchange `-k dT/dn = h (T - t_inf)` with outward `n`.
    Robin { h: f64, t_inf: f64 },
    Adiabatic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub facet: Facet,
    #[serde(flatten)]
    pub kind: BoundaryKind,
}

impl BoundaryCondition {
    pub fn new(facet: Facet, kind: BoundaryKind) -> Result<Self> {
        match kind {
            BoundaryKind::Robin { h, t_inf } if !(h >= 0.0) || !t_inf.is_finite() => {
                Err(Error::InvalidArgument(format!("invalid Robin condition h={h}")))
            }
            BoundaryKind::Dirichlet { temperature } if !temperature.is_finite() => {
                Err(Error::InvalidArgument("Dirichlet temperature not finite".into()))
            }
            BoundaryKind::Neumann { flux } if !flux.is_finite() => {
                Err(Error::InvalidArgument("Neumann flux not finite".into()))
            }
            _ => Ok(Self { facet, kind }),
        }
    }
}

/// Heat flux entering the body through a facet with the given outward unit
/// normal, `k * dT/dn`, in W/m².
///
/// With Fourier's law the conductive flux is `-k ∇T`; its component along
/// the inward normal is `k ∇T · n_out`.
pub fn boundary_flux_from_eval(
    eval: &NetworkEval,
    normal: &[f64],
    conductivity: f64,
    scaling: &NormalizationMap,
) -> Result<f64> {
    ensure_len("normal", eval.grad_space.len(), normal.len())?;
    let norm: f64 = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "normal must be a unit vector (norm {norm})"
        )));
    }
    if !(conductivity > 0.0) {
        return Err(Error::InvalidArgument("conductivity must be positive".into()));
    }
    let grad = scaling.physical_gradient(&eval.grad_space);
    let dtdn: f64 = grad.iter().zip(normal).map(|(g, n)| g * n).sum();
    Ok(conductivity * dtdn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scaling::AxisMap;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn eval(value: f64, grad: Vec<f64>, hess: Vec<f64>, gt: Option<f64>) -> NetworkEval {
        NetworkEval {
            value,
            grad_space: grad,
            hess_diag: hess,
            grad_time: gt,
        }
    }

    #[test]
    fn harmonic_and_quadratic_fields() {
        let pde = PdeSpec::laplace(NormalizationMap::identity(2, false));
        // T = x² - y²
        let e = eval(0.0, vec![0.6, -0.4], vec![2.0, -2.0], None);
        assert_eq!(residual(&e, &pde).unwrap(), 0.0);
        // T = x²
        let e = eval(0.0, vec![0.6], vec![2.0], None);
        let pde1 = PdeSpec::laplace(NormalizationMap::identity(1, false));
        assert_eq!(residual(&e, &pde1).unwrap(), 2.0);
    }

    #[test]
    fn exact_diffusion_mode() {
        let alpha = 0.37;
        let pde = PdeSpec::diffusion(Diffusivity::Fixed(alpha), NormalizationMap::identity(1, true))
            .unwrap();
        for &(x, t) in &[(0.1, 0.0), (0.5, 0.3), (0.87, 0.9)] {
            let decay = (-alpha * PI * PI * t).exp();
            let e = eval(
                decay * (PI * x).sin(),
                vec![PI * decay * (PI * x).cos()],
                vec![-PI * PI * decay * (PI * x).sin()],
                Some(-alpha * PI * PI * decay * (PI * x).sin()),
            );
            assert!(residual(&e, &pde).unwrap().abs() < 1e-12);
        }
        let missing = eval(0.0, vec![0.0], vec![0.0], None);
        assert!(residual(&missing, &pde).is_err());
    }

    #[test]
    fn chain_rule_factors_on_physical_solution() {
        // T(x, t) = 300 + 20 exp(-alpha π² t / L²) sin(π x / L) in physical units
        let (l, alpha, horizon, t_ref, t_scale) = (0.1, 1.526e-5, 60.0, 300.0, 20.0);
        let map = NormalizationMap::new(
            vec![AxisMap::new(0.0, l).unwrap()],
            Some(AxisMap::new(0.0, horizon).unwrap()),
            AxisMap::new(t_ref, t_scale).unwrap(),
        )
        .unwrap();
        let pde = PdeSpec::diffusion(Diffusivity::Fixed(alpha), map).unwrap();
        let k = PI / l;
        for &(u, s) in &[(0.2, 0.1), (0.7, 0.8)] {
            let (x, t) = (u * l, s * horizon);
            let decay = (-alpha * k * k * t).exp();
            // normalized field v = (T - t_ref)/t_scale and its derivatives in (u, s)
            let v = decay * (k * x).sin();
            let v_uu = -k * k * l * l * v;
            let v_s = -alpha * k * k * horizon * v;
            let e = eval(v, vec![0.0], vec![v_uu], Some(v_s));
            assert!(residual(&e, &pde).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn residual_is_affine_in_source() {
        let pde = PdeSpec::laplace(NormalizationMap::identity(2, false));
        let e = eval(0.0, vec![0.0, 0.0], vec![1.0, 0.5], None);
        let r0 = residual(&e, &pde).unwrap();
        let r1 = residual(&e, &pde.clone().with_source(3.0)).unwrap();
        assert_eq!(r1 - r0, 3.0);
    }

    #[test]
    fn trainable_alpha_needs_value() {
        let pde = PdeSpec::diffusion(Diffusivity::Trainable, NormalizationMap::identity(1, true))
            .unwrap();
        let e = eval(0.0, vec![0.0], vec![1.0], Some(2.0));
        assert!(residual(&e, &pde).is_err());
        let r = pde.operator(Some(0.5)).unwrap().apply(&e).unwrap();
        assert_eq!(r, 1.0 - 4.0);
        assert!(PdeSpec::diffusion(Diffusivity::Fixed(-1.0), NormalizationMap::identity(1, true)).is_err());
        assert!(PdeSpec::diffusion(Diffusivity::Fixed(1.0), NormalizationMap::identity(1, false)).is_err());
    }

    #[test]
    fn total_loss_assembly() {
        let b = total_loss(2.5, 4.0, 0.0).unwrap();
        assert_eq!(b.total, b.data_term);
        let b = total_loss(2.5, 4.0, 0.001).unwrap();
        assert_eq!(b.total, 2.5 + 0.001 * 4.0);
        let b = total_loss(1.0, 2.0, 1e5).unwrap();
        assert_eq!(b.total, b.data_term + b.lambda * b.pde_term);
        assert!(total_loss(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn flux_of_linear_field() {
        let (q, k) = (10_000.0, 52.0);
        let map = NormalizationMap::identity(2, false);
        // T = -(q/k) x + c
        let e = eval(0.0, vec![-q / k, 0.0], vec![0.0, 0.0], None);
        let left = Facet::LEFT.outward_normal(2);
        assert_relative_eq!(boundary_flux_from_eval(&e, &left, k, &map).unwrap(), q, max_relative = 1e-14);
        assert_relative_eq!(
            boundary_flux_from_eval(&e, &left, 2.0 * k, &map).unwrap(),
            2.0 * q,
            max_relative = 1e-14
        );
        let flat = eval(1.0, vec![0.0, 0.0], vec![0.0, 0.0], None);
        for f in [Facet::LEFT, Facet::RIGHT, Facet::TOP, Facet::BOTTOM] {
            assert_eq!(boundary_flux_from_eval(&flat, &f.outward_normal(2), k, &map).unwrap(), 0.0);
        }
        assert!(boundary_flux_from_eval(&e, &[2.0, 0.0], k, &map).is_err());
    }

    #[test]
    fn flux_uses_physical_gradient() {
        // normalized slope -1 over L = 0.05 m with T_scale 40 K is -800 K/m
        let map = NormalizationMap::for_box(&[0.05, 0.05], None, 300.0, 40.0).unwrap();
        let e = eval(0.0, vec![-1.0, 0.0], vec![0.0, 0.0], None);
        let q = boundary_flux_from_eval(&e, &[-1.0, 0.0], 52.0, &map).unwrap();
        assert_relative_eq!(q, 52.0 * 800.0, max_relative = 1e-12);
    }

    #[test]
    fn facet_names_roundtrip() {
        for s in ["x_low", "y_high", "z_low", "axis4_high"] {
            assert_eq!(s.parse::<Facet>().unwrap().to_string(), s);
        }
        assert_eq!("left".parse::<Facet>().unwrap(), Facet::LEFT);
        assert_eq!("top".parse::<Facet>().unwrap(), Facet::TOP);
        assert!("middle".parse::<Facet>().is_err());
    }

    #[test]
    fn boundary_condition_validation() {
        assert!(BoundaryCondition::new(Facet::LEFT, BoundaryKind::Robin { h: -1.0, t_inf: 300.0 }).is_err());
        assert!(BoundaryCondition::new(Facet::LEFT, BoundaryKind::Robin { h: 40.0, t_inf: 273.15 }).is_ok());
    }
}
