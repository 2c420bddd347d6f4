//! Ground truth for rectangular domains: closed-form fields, a
//! finite-difference solver, sensor layouts, Latin hypercube designs and
//! measurement noise.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bayes::ObservationTag;
use crate::error::{ensure_len, Error, Result};
use crate::physics::{BoundaryCondition, BoundaryKind, Facet, Side};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Conductivity, W/(m·K).
    pub k: f64,
    /// Density, kg/m³.
    pub rho: f64,
    /// Specific heat, J/(kg·K).
    pub c: f64,
}

impl Material {
    /// Steel plate used throughout the transient examples.
    pub const STEEL: Material = Material {
        k: 52.0,
        rho: 7850.0,
        c: 434.0,
    };

    pub fn new(k: f64, rho: f64, c: f64) -> Result<Self> {
        if !(k > 0.0 && rho > 0.0 && c > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "material constants must be positive (k {k}, rho {rho}, c {c})"
            )));
        }
        Ok(Self { k, rho, c })
    }

    pub fn alpha(&self) -> f64 {
        self.k / (self.rho * self.c)
    }
}

/// Rectangular domain `[0, L_0] x ... x [0, L_{d-1}]`.
///
/// Facets without an entry in `boundaries` are adiabatic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub extents: Vec<f64>,
    #[serde(default)]
    pub time_horizon: Option<f64>,
    #[serde(default)]
    pub initial_temperature: Option<f64>,
    pub material: Material,
    #[serde(default)]
    pub boundaries: Vec<BoundaryCondition>,
    #[serde(default)]
    pub source_over_k: f64,
}

impl DomainSpec {
    pub fn new(extents: Vec<f64>, material: Material) -> Result<Self> {
        let d = Self {
            extents,
            time_horizon: None,
            initial_temperature: None,
            material,
            boundaries: Vec::new(),
            source_over_k: 0.0,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn with_boundary(mut self, facet: Facet, kind: BoundaryKind) -> Result<Self> {
        let bc = BoundaryCondition::new(facet, kind)?;
        self.boundaries.retain(|b| b.facet != facet);
        self.boundaries.push(bc);
        self.validate()?;
        Ok(self)
    }

    pub fn with_transient(mut self, horizon: f64, initial_temperature: f64) -> Result<Self> {
        self.time_horizon = Some(horizon);
        self.initial_temperature = Some(initial_temperature);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.extents.is_empty() || self.extents.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "domain must have 1 to 3 axes, got {}",
                self.extents.len()
            )));
        }
        if self.extents.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("domain extents must be positive".into()));
        }
        if let Some(h) = self.time_horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::InvalidArgument("time horizon must be positive".into()));
            }
        }
        for (i, b) in self.boundaries.iter().enumerate() {
            if b.facet.axis >= self.extents.len() {
                return Err(Error::InvalidArgument(format!(
                    "boundary on facet {} outside a {}-axis domain",
                    b.facet,
                    self.extents.len()
                )));
            }
            if self.boundaries[..i].iter().any(|o| o.facet == b.facet) {
                return Err(Error::InvalidArgument(format!(
                    "facet {} has more than one condition",
                    b.facet
                )));
            }
        }
        Material::new(self.material.k, self.material.rho, self.material.c)?;
        Ok(())
    }

    pub fn spatial_dims(&self) -> usize {
        self.extents.len()
    }

    pub fn boundary(&self, facet: Facet) -> BoundaryKind {
        self.boundaries
            .iter()
            .find(|b| b.facet == facet)
            .map(|b| b.kind)
            .unwrap_or(BoundaryKind::Adiabatic)
    }

    /// Facets in canonical order: axis ascending, low side first.
    pub fn facets(&self) -> Vec<Facet> {
        (0..self.extents.len())
            .flat_map(|a| [Facet::new(a, Side::Low), Facet::new(a, Side::High)])
            .collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.extents.iter().map(|&l| (0.0, l)).collect()
    }
}

/// Tensor-product grid; values are stored with axis 0 varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Vec<f64>>,
}

impl Grid {
    pub fn uniform(extents: &[f64], nodes: &[usize]) -> Result<Self> {
        ensure_len("grid node counts", extents.len(), nodes.len())?;
        if nodes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument("each axis needs at least 2 nodes".into()));
        }
        Ok(Self {
            axes: extents
                .iter()
                .zip(nodes)
                .map(|(&l, &n)| (0..n).map(|i| l * i as f64 / (n - 1) as f64).collect())
                .collect(),
        })
    }

    /// Grid strictly inside the box: `n` cell-centred nodes per axis.
    pub fn interior(extents: &[f64], nodes: &[usize]) -> Result<Self> {
        ensure_len("grid node counts", extents.len(), nodes.len())?;
        if nodes.contains(&0) {
            return Err(Error::InvalidArgument("each axis needs at least 1 node".into()));
        }
        Ok(Self {
            axes: extents
                .iter()
                .zip(nodes)
                .map(|(&l, &n)| (0..n).map(|i| l * (i as f64 + 0.5) / n as f64).collect())
                .collect(),
        })
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        self.axes
            .iter()
            .map(|a| {
                let i = flat % a.len();
                flat /= a.len();
                i
            })
            .collect()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        let mut stride = 1;
        for (a, &i) in self.axes.iter().zip(idx) {
            flat += i * stride;
            stride *= a.len();
        }
        flat
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a[i])
            .collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Analytic,
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub grid: Grid,
    /// Kelvin, axis 0 fastest.
    pub values: Vec<f64>,
    pub time: Option<f64>,
    pub provenance: Provenance,
}

impl FieldSnapshot {
    /// Trapezoid-weighted spatial mean.
    pub fn mean(&self) -> f64 {
        let weights: Vec<Vec<f64>> = self.grid.axes.iter().map(|a| trapezoid_weights(a)).collect();
        let mut num = 0.0;
        let mut den = 0.0;
        for (flat, v) in self.values.iter().enumerate() {
            let w: f64 = self
                .grid
                .multi_index(flat)
                .iter()
                .zip(&weights)
                .map(|(&i, w)| w[i])
                .product();
            num += w * v;
            den += w;
        }
        num / den
    }

    /// Multilinear interpolation; points outside the grid are clamped.
    pub fn interpolate(&self, coords: &[f64]) -> Result<f64> {
        ensure_len("interpolation point", self.grid.dims(), coords.len())?;
        let mut cells = Vec::with_capacity(coords.len());
        for (a, &x) in self.grid.axes.iter().zip(coords) {
            if a.len() == 1 {
                cells.push((0, 0.0));
                continue;
            }
            let i = match a.partition_point(|&g| g <= x) {
                0 => 0,
                p => (p - 1).min(a.len() - 2),
            };
            let f = ((x - a[i]) / (a[i + 1] - a[i])).clamp(0.0, 1.0);
            cells.push((i, f));
        }
        let d = coords.len();
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = Vec::with_capacity(d);
            for (k, &(i, f)) in cells.iter().enumerate() {
                let up = corner >> k & 1 == 1;
                if up && self.grid.axes[k].len() == 1 {
                    w = 0.0;
                    idx.push(i);
                    continue;
                }
                w *= if up { f } else { 1.0 - f };
                idx.push(if up { i + 1 } else { i });
            }
            if w != 0.0 {
                acc += w * self.values[self.grid.flat_index(&idx)];
            }
        }
        Ok(acc)
    }
}

fn trapezoid_weights(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| {
            let left = if i > 0 { axis[i] - axis[i - 1] } else { 0.0 };
            let right = if i + 1 < n { axis[i + 1] - axis[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Closed-form temperature fields used as oracles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum AnalyticCase {
    /// `T = t_a + (t_b - t_a) x / L` on a rod.
    #[serde(rename = "steady_1d_linear")]
    Steady1dLinear { length: f64, t_a: f64, t_b: f64 },
    /// `T = offset + amplitude sin(πx/L) sinh(πy/L) / sinh(π)` on a square.
    #[serde(rename = "steady_2d_separable")]
    Steady2dSeparable {
        length: f64,
        offset: f64,
        amplitude: f64,
    },
    /// `T = t_ref + amplitude exp(-α π² t / L²) sin(πx/L)` on a rod.
    #[serde(rename = "transient_1d_mode")]
    Transient1dMode {
        length: f64,
        alpha: f64,
        t_ref: f64,
        amplitude: f64,
    },
}

impl AnalyticCase {
    pub fn id(&self) -> &'static str {
        match self {
            AnalyticCase::Steady1dLinear { .. } => "steady_1d_linear",
            AnalyticCase::Steady2dSeparable { .. } => "steady_2d_separable",
            AnalyticCase::Transient1dMode { .. } => "transient_1d_mode",
        }
    }

    pub fn spatial_dims(&self) -> usize {
        match self {
            AnalyticCase::Steady2dSeparable { .. } => 2,
            _ => 1,
        }
    }

    pub fn is_transient(&self) -> bool {
        matches!(self, AnalyticCase::Transient1dMode { .. })
    }

    pub fn extents(&self) -> Vec<f64> {
        match *self {
            AnalyticCase::Steady1dLinear { length, .. }
            | AnalyticCase::Transient1dMode { length, .. } => vec![length],
            AnalyticCase::Steady2dSeparable { length, .. } => vec![length, length],
        }
    }

    pub fn evaluate(&self, coords: &[f64], time: Option<f64>) -> Result<f64> {
        ensure_len("analytic point", self.spatial_dims(), coords.len())?;
        Ok(match *self {
            AnalyticCase::Steady1dLinear { length, t_a, t_b } => t_a + (t_b - t_a) * coords[0] / length,
            AnalyticCase::Steady2dSeparable {
                length,
                offset,
                amplitude,
            } => {
                let (u, v) = (coords[0] / length, coords[1] / length);
                offset + amplitude * (PI * u).sin() * (PI * v).sinh() / PI.sinh()
            }
            AnalyticCase::Transient1dMode {
                length,
                alpha,
                t_ref,
                amplitude,
            } => {
                let t = time.ok_or_else(|| {
                    Error::InvalidArgument("transient case needs a time coordinate".into())
                })?;
                let decay = (-alpha * PI * PI * t / (length * length)).exp();
                t_ref + amplitude * decay * (PI * coords[0] / length).sin()
            }
        })
    }

    /// Snapshot on a grid at an optional time.
    pub fn snapshot(&self, grid: &Grid, time: Option<f64>) -> Result<FieldSnapshot> {
        let values = (0..grid.len())
            .map(|i| self.evaluate(&grid.coords(i), time))
            .collect::<Result<Vec<_>>>()?;
        Ok(FieldSnapshot {
            grid: grid.clone(),
            values,
            time,
            provenance: Provenance::Analytic,
        })
    }
}

impl FromStr for AnalyticCase {
    type Err = Error;
    /// Case ids with unit-scale default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "steady_1d_linear" => Ok(AnalyticCase::Steady1dLinear {
                length: 1.0,
                t_a: 300.0,
                t_b: 400.0,
            }),
            "steady_2d_separable" => Ok(AnalyticCase::Steady2dSeparable {
                length: 1.0,
                offset: 300.0,
                amplitude: 100.0,
            }),
            "transient_1d_mode" => Ok(AnalyticCase::Transient1dMode {
                length: 1.0,
                alpha: 1.0,
                t_ref: 300.0,
                amplitude: 50.0,
            }),
            other => Err(Error::InvalidArgument(format!("unknown analytic case {other:?}"))),
        }
    }
}

pub fn analytic_solution(case: &AnalyticCase, coords: &[f64], time: Option<f64>) -> Result<f64> {
    case.evaluate(coords, time)
}

/// Banded matrix with partial-pivoting LU. Row `i` keeps columns
/// `i - kl ..= i + kl + ku` so that pivoting fill-in fits.
struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

impl BandedLu {
    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
            factored: false,
        }
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "entry ({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.slot(i, j)]
    }

    fn factor(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tiny = scale * 1e-13;
        self.pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::SingularSystem(format!(
                    "zero pivot at unknown {k} of {n}"
                )));
            }
            self.pivots[k] = p;
            let last_col = (k + self.kl + self.ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last_row {
                let s = self.slot(i, k);
                let l = self.data[s] / pivot;
                self.data[s] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let u = self.data[self.slot(k, j)];
                        let t = self.slot(i, j);
                        self.data[t] -= l * u;
                    }
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    fn solve(&self, b: &mut [f64]) {
        assert!(self.factored);
        let n = self.n;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                b[i] -= self.get(i, k) * bk;
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.get(k, j) * b[j];
            }
            b[k] = s / self.get(k, k);
        }
    }
}

/// Discretization choices for [`fd_solve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Nodes per axis, boundaries included.
    pub nodes: Vec<usize>,
    /// Implicit time step in seconds; ignored for steady problems.
    #[serde(default)]
    pub time_step: Option<f64>,
    /// Emit a snapshot every this many steps (the initial state is always emitted).
    #[serde(default = "one")]
    pub output_every: usize,
}

fn one() -> usize {
    1
}

/// Optional spatially varying inputs for [`fd_solve_with`].
#[derive(Default)]
pub struct FdOverrides<'a> {
    /// Initial field on the grid, overriding the uniform initial temperature.
    pub initial: Option<&'a [f64]>,
    /// Position-dependent values on Dirichlet facets.
    pub dirichlet: Option<&'a dyn Fn(&[f64]) -> f64>,
}

/// Steady solve (one snapshot) or backward-Euler transient run.
pub fn fd_solve(domain: &DomainSpec, cfg: &FdConfig) -> Result<Vec<FieldSnapshot>> {
    fd_solve_with(domain, cfg, FdOverrides::default())
}

pub fn fd_solve_with(
    domain: &DomainSpec,
    cfg: &FdConfig,
    overrides: FdOverrides<'_>,
) -> Result<Vec<FieldSnapshot>> {
    domain.validate()?;
    let grid = Grid::uniform(&domain.extents, &cfg.nodes)?;
    let d = grid.dims();
    let n = grid.len();
    let shape = grid.shape();
    let spacing: Vec<f64> = domain
        .extents
        .iter()
        .zip(&shape)
        .map(|(&l, &m)| l / (m - 1) as f64)
        .collect();
    let strides: Vec<usize> = (0..d).map(|a| shape[..a].iter().product()).collect();
    let band = strides[d - 1];
    let k = domain.material.k;

    let transient = domain.time_horizon.map(|h| -> Result<(f64, usize)> {
        let dt = cfg.time_step.ok_or_else(|| {
            Error::InvalidArgument("transient solve needs a time step".into())
        })?;
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument("time step must be positive".into()));
        }
        let steps = (h / dt).round().max(1.0) as usize;
        Ok((h / steps as f64, steps))
    });
    let transient = transient.transpose()?;

    // Dirichlet facets win at shared edges and corners, earliest facet first.
    let facets = domain.facets();
    let dirichlet_value = |idx: &[usize], coords: &[f64]| -> Option<f64> {
        facets.iter().find_map(|f| {
            let on = match f.side {
                Side::Low => idx[f.axis] == 0,
                Side::High => idx[f.axis] == shape[f.axis] - 1,
            };
            match (on, domain.boundary(*f)) {
                (true, BoundaryKind::Dirichlet { temperature }) => Some(
                    overrides
                        .dirichlet
                        .map(|g| g(coords))
                        .unwrap_or(temperature),
                ),
                _ => None,
            }
        })
    };

    if transient.is_none() {
        let anchored = domain.boundaries.iter().any(|b| match b.kind {
            BoundaryKind::Dirichlet { .. } => true,
            BoundaryKind::Robin { h, .. } => h > 0.0,
            _ => false,
        });
        if !anchored {
            return Err(Error::SingularSystem(
                "steady problem without Dirichlet or convective boundary has no unique solution"
                    .into(),
            ));
        }
    }

    // Discrete operator L T + c, assembled row by row.
    let mut lu = BandedLu::new(n, band, band);
    let mut constant = vec![0.0; n];
    let mut fixed = vec![None; n];
    let dt_alpha = transient.map(|(dt, _)| dt * domain.material.alpha());
    for p in 0..n {
        let idx = grid.multi_index(p);
        let coords = grid.coords(p);
        if let Some(v) = dirichlet_value(&idx, &coords) {
            lu.add(p, p, 1.0);
            fixed[p] = Some(v);
            continue;
        }
        // row holds coefficients of -(L); the system is (I*m - s L) with s = dt α or 1
        let s = dt_alpha.unwrap_or(1.0);
        let mut diag = 0.0;
        let mut c = domain.source_over_k;
        for a in 0..d {
            let h2 = spacing[a] * spacing[a];
            let i = idx[a];
            let last = shape[a] - 1;
            if i > 0 && i < last {
                lu.add(p, p - strides[a], -s / h2);
                lu.add(p, p + strides[a], -s / h2);
                diag += 2.0 / h2;
                continue;
            }
            let (facet, mirror) = if i == 0 {
                (Facet::new(a, Side::Low), p + strides[a])
            } else {
                (Facet::new(a, Side::High), p - strides[a])
            };
            // ghost = mirror + 2h g with g = dT/dn_out = g0 + g1 T_p
            let (g0, g1) = match domain.boundary(facet) {
                BoundaryKind::Neumann { flux } => (flux / k, 0.0),
                BoundaryKind::Adiabatic => (0.0, 0.0),
                BoundaryKind::Robin { h, t_inf } => (h * t_inf / k, -h / k),
                BoundaryKind::Dirichlet { .. } => unreachable!("handled above"),
            };
            lu.add(p, mirror, -2.0 * s / h2);
            diag += 2.0 / h2 - 2.0 * spacing[a] * g1 / h2;
            c += 2.0 * spacing[a] * g0 / h2;
        }
        let m = if dt_alpha.is_some() { 1.0 } else { 0.0 };
        lu.add(p, p, m + s * diag);
        constant[p] = s * c;
    }
    lu.factor()?;

    let snapshot = |values: Vec<f64>, time: Option<f64>| FieldSnapshot {
        grid: grid.clone(),
        values,
        time,
        provenance: Provenance::FiniteDifference,
    };

    let Some((dt, steps)) = transient else {
        let mut rhs: Vec<f64> = (0..n).map(|p| fixed[p].unwrap_or(constant[p])).collect();
        lu.solve(&mut rhs);
        return Ok(vec![snapshot(rhs, None)]);
    };

    let mut state = match overrides.initial {
        Some(init) => {
            ensure_len("initial field", n, init.len())?;
            init.to_vec()
        }
        None => {
            let t0 = domain.initial_temperature.ok_or_else(|| {
                Error::InvalidArgument("transient solve needs an initial temperature".into())
            })?;
            vec![t0; n]
        }
    };
    let every = cfg.output_every.max(1);
    let mut out = vec![snapshot(state.clone(), Some(0.0))];
    for step in 1..=steps {
        for p in 0..n {
            state[p] = match fixed[p] {
                Some(v) => v,
                None => state[p] + constant[p],
            };
        }
        lu.solve(&mut state);
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure(format!(
                "non-finite temperature at step {step}"
            )));
        }
        if step % every == 0 || step == steps {
            out.push(snapshot(state.clone(), Some(step as f64 * dt)));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorScheme {
    UniformBoundary,
    RandomBoundary,
    RandomInterior,
    /// Any node of the snap grid, boundary included.
    RandomNodes,
}

impl FromStr for SensorScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_boundary" => Ok(SensorScheme::UniformBoundary),
            "random_boundary" => Ok(SensorScheme::RandomBoundary),
            "random_interior" => Ok(SensorScheme::RandomInterior),
            "random_nodes" => Ok(SensorScheme::RandomNodes),
            other => Err(Error::InvalidArgument(format!("unknown sensor scheme {other:?}"))),
        }
    }
}

/// Sensor locations in metres.
///
/// `uniform_boundary` walks the perimeter counterclockwise from the origin
/// and puts sensor `j` at arc length `(j + 1/2) P / n`; on a square with
/// `n = 4` these are the edge midpoints. In 1D the boundary is the two rod
/// ends. With `snap` the points are moved to the nearest node of a uniform
/// grid with that many nodes per axis, and must stay distinct;
/// `random_nodes` draws from that grid and is only valid with `snap`.
pub fn place_sensors(
    domain: &DomainSpec,
    n: usize,
    scheme: SensorScheme,
    seed: u64,
    snap: Option<&[usize]>,
) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one sensor".into()));
    }
    let ext = &domain.extents;
    let d = ext.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if let Some(nodes) = snap {
        let grid = Grid::uniform(ext, nodes)?;
        let on_boundary = |flat: usize| {
            grid.multi_index(flat)
                .iter()
                .zip(nodes)
                .any(|(&i, &m)| i == 0 || i == m - 1)
        };
        match scheme {
            SensorScheme::UniformBoundary => {
                let pts = place_sensors(domain, n, scheme, seed, None)?;
                let snapped: Vec<Vec<f64>> = pts
                    .iter()
                    .map(|p| {
                        let idx: Vec<usize> = p
                            .iter()
                            .zip(ext.iter().zip(nodes))
                            .map(|(&x, (&l, &m))| ((x / l) * (m - 1) as f64).round() as usize)
                            .collect();
                        grid.coords(grid.flat_index(&idx))
                    })
                    .collect();
                let mut uniq = snapped.clone();
                uniq.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
                uniq.dedup();
                if uniq.len() != snapped.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{n} sensors do not fit on distinct boundary nodes of the grid"
                    )));
                }
                return Ok(snapped);
            }
            SensorScheme::RandomBoundary | SensorScheme::RandomInterior | SensorScheme::RandomNodes => {
                let mut pool: Vec<usize> = (0..grid.len())
                    .filter(|&f| match scheme {
                        SensorScheme::RandomBoundary => on_boundary(f),
                        SensorScheme::RandomInterior => !on_boundary(f),
                        _ => true,
                    })
                    .collect();
                if n > pool.len() {
                    return Err(Error::InvalidArgument(format!(
                        "{n} sensors exceed the {} available grid locations",
                        pool.len()
                    )));
                }
                pool.shuffle(&mut rng);
                return Ok(pool[..n].iter().map(|&f| grid.coords(f)).collect());
            }
        }
    }

    match scheme {
        SensorScheme::RandomNodes => Err(Error::InvalidArgument(
            "random_nodes placement needs a snap grid".into(),
        )),
        SensorScheme::UniformBoundary => match d {
            1 => {
                if n > 2 {
                    return Err(Error::InvalidArgument(
                        "a rod has only two boundary locations".into(),
                    ));
                }
                Ok([vec![0.0], vec![ext[0]]][..n].to_vec())
            }
            2 => {
                let perimeter = 2.0 * (ext[0] + ext[1]);
                Ok((0..n)
                    .map(|j| perimeter_point(ext, (j as f64 + 0.5) * perimeter / n as f64))
                    .collect())
            }
            _ => Err(Error::InvalidArgument(
                "uniform boundary placement is defined for 1D and 2D domains".into(),
            )),
        },
        SensorScheme::RandomBoundary => {
            if d == 1 {
                return Ok((0..n)
                    .map(|_| vec![if rng.random::<bool>() { ext[0] } else { 0.0 }])
                    .collect());
            }
            // facet chosen with probability proportional to its measure
            let facets = domain.facets();
            let measures: Vec<f64> = facets
                .iter()
                .map(|f| (0..d).filter(|&a| a != f.axis).map(|a| ext[a]).product())
                .collect();
            let total: f64 = measures.iter().sum();
            Ok((0..n)
                .map(|_| {
                    let mut r = rng.random::<f64>() * total;
                    let mut pick = facets.len() - 1;
                    for (i, m) in measures.iter().enumerate() {
                        if r < *m {
                            pick = i;
                            break;
                        }
                        r -= m;
                    }
                    let f = facets[pick];
                    (0..d)
                        .map(|a| {
                            if a == f.axis {
                                f.normalized_position() * ext[a]
                            } else {
                                rng.random::<f64>() * ext[a]
                            }
                        })
                        .collect()
                })
                .collect())
        }
        SensorScheme::RandomInterior => Ok((0..n)
            .map(|_| {
                ext.iter()
                    .map(|&l| {
                        // open interval so no interior sensor lands on the boundary
                        let u: f64 = rng.random();
                        l * (u * (1.0 - 2e-9) + 1e-9)
                    })
                    .collect()
            })
            .collect()),
    }
}

fn perimeter_point(ext: &[f64], s: f64) -> Vec<f64> {
    let (a, b) = (ext[0], ext[1]);
    if s < a {
        vec![s, 0.0]
    } else if s < a + b {
        vec![a, s - a]
    } else if s < 2.0 * a + b {
        vec![a - (s - a - b), b]
    } else {
        vec![0.0, b - (s - 2.0 * a - b)]
    }
}

/// Latin hypercube design: each axis is cut into `n` equal strata and every
/// stratum holds exactly one point.
pub fn lhs_sample(n: usize, bounds: &[(f64, f64)], seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("lhs needs at least one point".into()));
    }
    if bounds.is_empty() {
        return Err(Error::InvalidArgument("lhs needs at least one axis".into()));
    }
    for &(lo, hi) in bounds {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidArgument(format!("invalid lhs bounds [{lo}, {hi}]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = vec![Vec::with_capacity(bounds.len()); n];
    for &(lo, hi) in bounds {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let w = (hi - lo) / n as f64;
        for (p, &s) in pts.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            p.push((lo + (s as f64 + u) * w).min(hi));
        }
    }
    Ok(pts)
}

/// A temperature reading in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub coords: Vec<f64>,
    pub time: Option<f64>,
    /// Kelvin.
    pub temperature: f64,
    pub tag: ObservationTag,
}

/// Adds Gaussian noise with standard deviation `level * (max T - min T)`
/// taken over the clean readings.
pub fn add_noise(readings: &[Measurement], level: f64, seed: u64) -> Result<Vec<Measurement>> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {level}")));
    }
    if level == 0.0 || readings.is_empty() {
        return Ok(readings.to_vec());
    }
    let (lo, hi) = readings.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), m| {
        (lo.min(m.temperature), hi.max(m.temperature))
    });
    let std = level * (hi - lo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(readings
        .iter()
        .map(|m| {
            let e: f64 = rng.sample(StandardNormal);
            Measurement {
                temperature: m.temperature + std * e,
                ..m.clone()
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rod(length: f64) -> DomainSpec {
        DomainSpec::new(vec![length], Material::STEEL).unwrap()
    }

    #[test]
    fn steel_diffusivity() {
        assert_relative_eq!(Material::STEEL.alpha(), 1.526e-5, max_relative = 1e-3);
    }

    #[test]
    fn analytic_examples() {
        let lin = AnalyticCase::Steady1dLinear {
            length: 2.0,
            t_a: 300.0,
            t_b: 400.0,
        };
        assert_eq!(lin.evaluate(&[1.0], None).unwrap(), 350.0);
        let sep: AnalyticCase = "steady_2d_separable".parse().unwrap();
        assert_eq!(sep.evaluate(&[0.3, 0.0], None).unwrap(), 300.0);
        let mode = AnalyticCase::Transient1dMode {
            length: 0.1,
            alpha: 1e-5,
            t_ref: 290.0,
            amplitude: 5.0,
        };
        let x = 0.03;
        assert_eq!(
            mode.evaluate(&[x], Some(0.0)).unwrap(),
            290.0 + 5.0 * (PI * x / 0.1).sin()
        );
        assert!(mode.evaluate(&[x], None).is_err());
        assert!("steady_3d".parse::<AnalyticCase>().is_err());
    }

    #[test]
    fn grid_indexing_roundtrip() {
        let g = Grid::uniform(&[1.0, 2.0, 3.0], &[3, 4, 5]).unwrap();
        for f in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(f)), f);
        }
        assert_eq!(g.coords(1), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn interpolation_is_exact_for_bilinear_fields() {
        let g = Grid::uniform(&[1.0, 2.0], &[5, 7]).unwrap();
        let f = |p: &[f64]| 1.0 + 2.0 * p[0] - p[1] + 0.5 * p[0] * p[1];
        let snap = FieldSnapshot {
            values: g.points().iter().map(|p| f(p)).collect(),
            grid: g,
            time: None,
            provenance: Provenance::Analytic,
        };
        for p in [[0.13, 1.7], [1.0, 2.0], [0.0, 0.0], [0.5, 0.33]] {
            assert_relative_eq!(snap.interpolate(&p).unwrap(), f(&p), max_relative = 1e-12);
        }
    }

    #[test]
    fn banded_lu_matches_dense_solution() {
        // tridiagonal with a zero diagonal entry forces a row swap
        let n = 6;
        let mut lu = BandedLu::new(n, 1, 1);
        let mut dense = vec![vec![0.0; n]; n];
        for i in 0..n {
            let d = if i == 0 { 0.0 } else { 4.0 };
            lu.add(i, i, d);
            dense[i][i] = d;
            if i + 1 < n {
                lu.add(i, i + 1, 1.0 + i as f64);
                lu.add(i + 1, i, 2.0);
                dense[i][i + 1] = 1.0 + i as f64;
                dense[i + 1][i] = 2.0;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 2.5).collect();
        let mut b: Vec<f64> = dense.iter().map(|r| r.iter().zip(&x).map(|(a, v)| a * v).sum()).collect();
        lu.factor().unwrap();
        lu.solve(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn steady_rod_is_exactly_linear() {
        let d = rod(0.5)
            .with_boundary(Facet::LEFT, BoundaryKind::Dirichlet { temperature: 300.0 })
            .unwrap()
            .with_boundary(Facet::RIGHT, BoundaryKind::Dirichlet { temperature: 400.0 })
            .unwrap();
        let cfg = FdConfig {
            nodes: vec![11],
            time_step: None,
            output_every: 1,
        };
        let out = fd_solve(&d, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        for (x, v) in out[0].grid.axes[0].iter().zip(&out[0].values) {
            let exact = 300.0 + 100.0 * x / 0.5;
            assert!((v - exact).abs() <= 1e-10 * exact);
        }
    }

    #[test]
    fn neumann_and_robin_ghost_nodes_are_exact_on_linear_fields() {
        let (q, k) = (10_000.0, Material::STEEL.k);
        // inward flux q at x = 0, fixed 300 K at x = L: T = 300 + (q/k)(L - x)
        let d = rod(0.1)
            .with_boundary(Facet::LEFT, BoundaryKind::Neumann { flux: q })
            .unwrap()
            .with_boundary(Facet::RIGHT, BoundaryKind::Dirichlet { temperature: 300.0 })
            .unwrap();
        let cfg = FdConfig {
            nodes: vec![9],
            time_step: None,
            output_every: 1,
        };
        let s = &fd_solve(&d, &cfg).unwrap()[0];
        for (x, v) in s.grid.axes[0].iter().zip(&s.values) {
            assert_relative_eq!(*v, 300.0 + q / k * (0.1 - x), max_relative = 1e-12);
        }
        // same flux leaving by convection: k (T_L - ...) slope q/k, h (T_L - T_inf) = q
        let h = 40.0;
        let d = rod(0.1)
            .with_boundary(Facet::LEFT, BoundaryKind::Neumann { flux: q })
            .unwrap()
            .with_boundary(Facet::RIGHT, BoundaryKind::Robin { h, t_inf: 273.15 })
            .unwrap();
        let s = &fd_solve(&d, &cfg).unwrap()[0];
        let t_right = 273.15 + q / h;
        for (x, v) in s.grid.axes[0].iter().zip(&s.values) {
            assert_relative_eq!(*v, t_right + q / k * (0.1 - x), max_relative = 1e-12);
        }
    }

    #[test]
    fn all_neumann_steady_is_singular() {
        let d = DomainSpec::new(vec![1.0, 1.0], Material::STEEL)
            .unwrap()
            .with_boundary(Facet::LEFT, BoundaryKind::Neumann { flux: 5.0 })
            .unwrap();
        let cfg = FdConfig {
            nodes: vec![5, 5],
            time_step: None,
            output_every: 1,
        };
        assert!(matches!(fd_solve(&d, &cfg), Err(Error::SingularSystem(_))));
    }

    fn separable_error(nodes: usize) -> f64 {
        let case = AnalyticCase::Steady2dSeparable {
            length: 0.05,
            offset: 300.0,
            amplitude: 100.0,
        };
        let mut d = DomainSpec::new(case.extents(), Material::STEEL).unwrap();
        for f in d.facets() {
            d = d.with_boundary(f, BoundaryKind::Dirichlet { temperature: 0.0 }).unwrap();
        }
        let profile = |p: &[f64]| case.evaluate(p, None).unwrap();
        let cfg = FdConfig {
            nodes: vec![nodes, nodes],
            time_step: None,
            output_every: 1,
        };
        let s = &fd_solve_with(
            &d,
            &cfg,
            FdOverrides {
                dirichlet: Some(&profile),
                ..Default::default()
            },
        )
        .unwrap()[0];
        s.grid
            .points()
            .iter()
            .zip(&s.values)
            .map(|(p, v)| (v - case.evaluate(p, None).unwrap()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn second_order_convergence_on_separable_case() {
        let e1 = separable_error(17);
        let e2 = separable_error(33);
        let e3 = separable_error(65);
        let order1 = (e1 / e2).log2();
        let order2 = (e2 / e3).log2();
        assert!(order1 > 1.9 && order2 > 1.9, "orders {order1} {order2}");
    }

    #[test]
    fn transient_tracks_decaying_mode() {
        let (l, alpha) = (0.05, Material::STEEL.alpha());
        let case = AnalyticCase::Transient1dMode {
            length: l,
            alpha,
            t_ref: 300.0,
            amplitude: 20.0,
        };
        let tau = l * l / (alpha * PI * PI);
        let d = rod(l)
            .with_boundary(Facet::LEFT, BoundaryKind::Dirichlet { temperature: 300.0 })
            .unwrap()
            .with_boundary(Facet::RIGHT, BoundaryKind::Dirichlet { temperature: 300.0 })
            .unwrap()
            .with_transient(tau, 300.0)
            .unwrap();
        let grid = Grid::uniform(&[l], &[41]).unwrap();
        let init = case.snapshot(&grid, Some(0.0)).unwrap().values;
        let cfg = FdConfig {
            nodes: vec![41],
            time_step: Some(tau / 400.0),
            output_every: 400,
        };
        let out = fd_solve_with(
            &d,
            &cfg,
            FdOverrides {
                initial: Some(&init),
                ..Default::default()
            },
        )
        .unwrap();
        let last = out.last().unwrap();
        assert_relative_eq!(last.time.unwrap(), tau, max_relative = 1e-12);
        let err = last
            .grid
            .points()
            .iter()
            .zip(&last.values)
            .map(|(p, v)| (v - case.evaluate(p, last.time).unwrap()).abs())
            .fold(0.0, f64::max);
        // amplitude has decayed to 20/e ≈ 7.4 K
        assert!(err < 0.02, "max error {err}");
    }

    #[test]
    fn adiabatic_transient_conserves_mean() {
        let d = DomainSpec::new(vec![0.1, 0.06], Material::STEEL)
            .unwrap()
            .with_transient(200.0, 0.0)
            .unwrap();
        let grid = Grid::uniform(&d.extents, &[11, 7]).unwrap();
        let init: Vec<f64> = grid
            .points()
            .iter()
            .map(|p| 300.0 + 50.0 * (p[0] * 40.0).sin() + 30.0 * p[1] / 0.06)
            .collect();
        let cfg = FdConfig {
            nodes: vec![11, 7],
            time_step: Some(5.0),
            output_every: 4,
        };
        let out = fd_solve_with(
            &d,
            &cfg,
            FdOverrides {
                initial: Some(&init),
                ..Default::default()
            },
        )
        .unwrap();
        let m0 = out[0].mean();
        for s in &out[1..] {
            assert!(((s.mean() - m0) / m0).abs() < 1e-8);
        }
        let spread = |s: &FieldSnapshot| {
            s.values.iter().cloned().fold(f64::MIN, f64::max)
                - s.values.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(spread(out.last().unwrap()) < spread(&out[0]));
    }

    #[test]
    fn uniform_sensors_on_square_are_edge_midpoints() {
        let d = DomainSpec::new(vec![2.0, 2.0], Material::STEEL).unwrap();
        let pts = place_sensors(&d, 4, SensorScheme::UniformBoundary, 0, None).unwrap();
        assert_eq!(
            pts,
            vec![vec![1.0, 0.0], vec![2.0, 1.0], vec![1.0, 2.0], vec![0.0, 1.0]]
        );
    }

    fn on_boundary(p: &[f64], ext: &[f64]) -> bool {
        p.iter()
            .zip(ext)
            .any(|(&x, &l)| x.abs() < 1e-12 || (x - l).abs() < 1e-12)
    }

    #[test]
    fn boundary_sensors_lie_on_boundary() {
        let d = DomainSpec::new(vec![0.1, 0.05], Material::STEEL).unwrap();
        for scheme in [SensorScheme::UniformBoundary, SensorScheme::RandomBoundary] {
            let pts = place_sensors(&d, 37, scheme, 5, None).unwrap();
            assert_eq!(pts.len(), 37);
            assert!(pts.iter().all(|p| on_boundary(p, &d.extents)));
        }
        let a = place_sensors(&d, 20, SensorScheme::RandomBoundary, 9, None).unwrap();
        let b = place_sensors(&d, 20, SensorScheme::RandomBoundary, 9, None).unwrap();
        assert_eq!(a, b);
        let inner = place_sensors(&d, 50, SensorScheme::RandomInterior, 9, None).unwrap();
        assert!(inner.iter().all(|p| !on_boundary(p, &d.extents)));
    }

    #[test]
    fn snapped_sensors_must_be_distinct() {
        let d = DomainSpec::new(vec![1.0, 1.0], Material::STEEL).unwrap();
        // a 3x3 grid has 8 boundary nodes and one interior node
        assert!(place_sensors(&d, 8, SensorScheme::RandomBoundary, 1, Some(&[3, 3])).is_ok());
        assert!(place_sensors(&d, 9, SensorScheme::RandomBoundary, 1, Some(&[3, 3])).is_err());
        assert!(place_sensors(&d, 2, SensorScheme::RandomInterior, 1, Some(&[3, 3])).is_err());
        let all = place_sensors(&d, 9, SensorScheme::RandomNodes, 1, Some(&[3, 3])).unwrap();
        assert_eq!(all.len(), 9);
        assert!(place_sensors(&d, 10, SensorScheme::RandomNodes, 1, Some(&[3, 3])).is_err());
        assert!(place_sensors(&d, 3, SensorScheme::RandomNodes, 1, None).is_err());
        assert!(place_sensors(&d, 12, SensorScheme::UniformBoundary, 1, Some(&[3, 3])).is_err());
        let pts = place_sensors(&d, 4, SensorScheme::UniformBoundary, 1, Some(&[3, 3])).unwrap();
        assert_eq!(pts[0], vec![0.5, 0.0]);
    }

    fn check_strata(pts: &[Vec<f64>], bounds: &[(f64, f64)]) {
        let n = pts.len();
        for (a, &(lo, hi)) in bounds.iter().enumerate() {
            let mut hit = vec![0; n];
            for p in pts {
                let s = (((p[a] - lo) / (hi - lo)) * n as f64).floor() as usize;
                hit[s.min(n - 1)] += 1;
            }
            assert!(hit.iter().all(|&h| h == 1), "axis {a}: {hit:?}");
        }
    }

    #[test]
    fn lhs_stratification() {
        check_strata(&lhs_sample(4, &[(0.0, 1.0)], 3).unwrap(), &[(0.0, 1.0)]);
        let b = [(0.0, 0.1), (0.0, 0.05)];
        check_strata(&lhs_sample(100, &b, 3).unwrap(), &b);
        assert_eq!(lhs_sample(10, &b, 7).unwrap(), lhs_sample(10, &b, 7).unwrap());
        assert!(lhs_sample(10, &[(1.0, 1.0)], 0).is_err());
    }

    fn readings(n: usize) -> Vec<Measurement> {
        (0..n)
            .map(|i| Measurement {
                coords: vec![i as f64 / n as f64],
                time: None,
                temperature: 300.0 + 100.0 * i as f64 / (n - 1) as f64,
                tag: ObservationTag::Interior,
            })
            .collect()
    }

    #[test]
    fn noise_level_zero_is_identity() {
        let r = readings(10);
        assert_eq!(add_noise(&r, 0.0, 1).unwrap(), r);
        assert!(add_noise(&r, -0.1, 1).is_err());
    }

    #[test]
    fn noise_std_is_range_relative() {
        let r = readings(10_000);
        let noisy = add_noise(&r, 0.005, 42).unwrap();
        let diffs: Vec<f64> = noisy
            .iter()
            .zip(&r)
            .map(|(a, b)| a.temperature - b.temperature)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
        assert!((std - 0.5).abs() < 0.05, "std {std}");
        assert_eq!(noisy, add_noise(&r, 0.005, 42).unwrap());
    }
}
