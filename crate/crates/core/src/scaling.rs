//! Affine maps between physical units and the network's normalized units.
//!
//! Space axes map metres onto `[0, 1]`, time maps seconds onto `[0, 1]`, and
//! temperature maps Kelvin through a reference value and scale. The chain-rule
//! factors used by the residual and by flux recovery all come from here.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::surrogate::SpaceTimePoint;

/// `normalized = (physical - origin) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisMap {
    pub origin: f64,
    pub scale: f64,
}

impl AxisMap {
    pub fn new(origin: f64, scale: f64) -> Result<Self> {
        if !origin.is_finite() || !scale.is_finite() || scale == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "axis map needs finite origin and nonzero finite scale (origin {origin}, scale {scale})"
            )));
        }
        Ok(Self { origin, scale })
    }

    pub const IDENTITY: AxisMap = AxisMap {
        origin: 0.0,
        scale: 1.0,
    };

    #[inline]
    pub fn to_normalized(&self, x: f64) -> f64 {
        (x - self.origin) / self.scale
    }

    #[inline]
    pub fn to_physical(&self, u: f64) -> f64 {
        self.origin + self.scale * u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub space: Vec<AxisMap>,
    pub time: Option<AxisMap>,
    pub temperature: AxisMap,
}

impl NormalizationMap {
    pub fn new(space: Vec<AxisMap>, time: Option<AxisMap>, temperature: AxisMap) -> Result<Self> {
        for m in space.iter().chain(time.iter()).chain(std::iter::once(&temperature)) {
            AxisMap::new(m.origin, m.scale)?;
        }
        Ok(Self {
            space,
            time,
            temperature,
        })
    }

    pub fn identity(spatial_dims: usize, has_time: bool) -> Self {
        Self {
            space: vec![AxisMap::IDENTITY; spatial_dims],
            time: has_time.then_some(AxisMap::IDENTITY),
            temperature: AxisMap::IDENTITY,
        }
    }

    /// Box `[0, extent_i]` per axis, time `[0, horizon]`, temperature
    /// `T_ref + T_scale * u`.
    pub fn for_box(
        extents: &[f64],
        time_horizon: Option<f64>,
        t_ref: f64,
        t_scale: f64,
    ) -> Result<Self> {
        let space = extents
            .iter()
            .map(|&l| AxisMap::new(0.0, l))
            .collect::<Result<Vec<_>>>()?;
        let time = time_horizon.map(|h| AxisMap::new(0.0, h)).transpose()?;
        Self::new(space, time, AxisMap::new(t_ref, t_scale)?)
    }

    pub fn spatial_dims(&self) -> usize {
        self.space.len()
    }

    pub fn has_time(&self) -> bool {
        self.time.is_some()
    }

    pub fn normalize_point(&self, coords: &[f64], time: Option<f64>) -> Result<SpaceTimePoint> {
        ensure_len("point spatial dimension", self.space.len(), coords.len())?;
        let time = match (self.time, time) {
            (Some(m), Some(t)) => Some(m.to_normalized(t)),
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::InvalidArgument(
                    "time-dependent map needs a time coordinate".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::InvalidArgument(
                    "steady map cannot take a time coordinate".into(),
                ))
            }
        };
        Ok(SpaceTimePoint {
            coords: coords
                .iter()
                .zip(&self.space)
                .map(|(&x, m)| m.to_normalized(x))
                .collect(),
            time,
        })
    }

    pub fn physical_point(&self, p: &SpaceTimePoint) -> (Vec<f64>, Option<f64>) {
        let coords = p
            .coords
            .iter()
            .zip(&self.space)
            .map(|(&u, m)| m.to_physical(u))
            .collect();
        let time = match (self.time, p.time) {
            (Some(m), Some(u)) => Some(m.to_physical(u)),
            _ => None,
        };
        (coords, time)
    }

    pub fn normalize_temperature(&self, t: f64) -> f64 {
        self.temperature.to_normalized(t)
    }

    pub fn physical_temperature(&self, u: f64) -> f64 {
        self.temperature.to_physical(u)
    }

    /// Kelvin per normalized temperature unit.
    pub fn temperature_scale(&self) -> f64 {
        self.temperature.scale
    }

    /// dT/dx_i in K/m from normalized first derivatives.
    pub fn physical_gradient(&self, grad: &[f64]) -> Vec<f64> {
        grad.iter()
            .zip(&self.space)
            .map(|(&g, m)| g * self.temperature.scale / m.scale)
            .collect()
    }

    /// d²T/dx_i² in K/m² from normalized second derivatives.
    pub fn physical_hessian_diag(&self, hess: &[f64]) -> Vec<f64> {
        hess.iter()
            .zip(&self.space)
            .map(|(&h, m)| h * self.temperature.scale / (m.scale * m.scale))
            .collect()
    }

    /// dT/dt in K/s from the normalized time derivative.
    pub fn physical_time_derivative(&self, dt: f64) -> Option<f64> {
        self.time.map(|m| dt * self.temperature.scale / m.scale)
    }
}
