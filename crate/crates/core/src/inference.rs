//! Post-training analysis: predictive fields, boundary identification from
//! the surrogate's normal derivatives, diffusivity trace summaries and
//! regression metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::{posterior_predictive, sample_weights, GaussianVariationalPosterior};
use crate::error::{ensure_len, Error, Result};
use crate::physics::{boundary_flux_from_eval, Facet};
use crate::scaling::NormalizationMap;
use crate::surrogate::{evaluate_batch, Architecture, PointSet, SpaceTimePoint};
use crate::trainer::TrainingTrace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub r_squared: f64,
    pub n: usize,
    /// True when computed on normalized temperatures rather than Kelvin.
    #[serde(default)]
    pub normalized: bool,
}

pub fn metrics(predictions: &[f64], truths: &[f64]) -> Result<MetricReport> {
    ensure_len("predictions", truths.len(), predictions.len())?;
    if truths.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one point".into()));
    }
    let n = truths.len() as f64;
    let mean = truths.iter().sum::<f64>() / n;
    let ss_tot: f64 = truths.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidArgument(
            "R² is undefined for a constant truth set".into(),
        ));
    }
    let ss_res: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(MetricReport {
        rmse: (ss_res / n).sqrt(),
        r_squared: 1.0 - ss_res / ss_tot,
        n: truths.len(),
        normalized: false,
    })
}

/// Fraction of truths inside `mean ± k std`.
pub fn coverage(mean: &[f64], std: &[f64], truths: &[f64], k: f64) -> Result<f64> {
    ensure_len("predictive std", mean.len(), std.len())?;
    ensure_len("truths", mean.len(), truths.len())?;
    if truths.is_empty() {
        return Err(Error::InvalidArgument("coverage needs at least one point".into()));
    }
    let inside = mean
        .iter()
        .zip(std)
        .zip(truths)
        .filter(|((m, s), t)| (*t - *m).abs() <= k * *s)
        .count();
    Ok(inside as f64 / truths.len() as f64)
}

/// Mean and unbiased standard deviation; the std of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryQuantity {
    /// Inward heat flux, W/m².
    Flux,
    /// Convection coefficient, W/(m²·K).
    Convection,
}

/// Boundary estimates pooled over test points and posterior samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedBoundary {
    pub facet: Facet,
    pub quantity: BoundaryQuantity,
    /// Point-major: all samples of the first used point, then the next.
    pub estimates: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub truth: Option<f64>,
    /// `None` without a truth or when the truth is zero.
    pub relative_error: Option<f64>,
    pub used_points: usize,
    pub excluded_points: usize,
}

impl IdentifiedBoundary {
    fn from_estimates(
        facet: Facet,
        quantity: BoundaryQuantity,
        estimates: Vec<f64>,
        truth: Option<f64>,
        used_points: usize,
        excluded_points: usize,
    ) -> Self {
        let (mean, std) = mean_std(&estimates);
        Self {
            facet,
            quantity,
            relative_error: truth.filter(|&t| t != 0.0).map(|t| ((mean - t) / t).abs()),
            estimates,
            mean,
            std,
            truth,
            used_points,
            excluded_points,
        }
    }
}

/// `n` evenly spaced normalized points on a facet (cell centres along the
/// facet, a square lattice of about `n` points on 3D faces).
pub fn facet_points(spatial_dims: usize, facet: Facet, n: usize, time: Option<f64>) -> Result<Vec<SpaceTimePoint>> {
    if facet.axis >= spatial_dims {
        return Err(Error::InvalidArgument(format!("facet {facet} outside a {spatial_dims}D domain")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one facet point".into()));
    }
    let make = |coords: Vec<f64>| SpaceTimePoint { coords, time };
    let pos = facet.normalized_position();
    Ok(match spatial_dims {
        1 => vec![make(vec![pos])],
        2 => (0..n)
            .map(|i| {
                let mut c = vec![0.0; 2];
                c[facet.axis] = pos;
                c[1 - facet.axis] = (i as f64 + 0.5) / n as f64;
                make(c)
            })
            .collect(),
        _ => {
            let m = (n as f64).sqrt().round().max(1.0) as usize;
            let others: Vec<usize> = (0..spatial_dims).filter(|&a| a != facet.axis).collect();
            (0..m * m)
                .map(|k| {
                    let mut c = vec![pos; spatial_dims];
                    c[others[0]] = ((k % m) as f64 + 0.5) / m as f64;
                    c[others[1]] = ((k / m) as f64 + 0.5) / m as f64;
                    make(c)
                })
                .collect()
        }
    })
}

fn check_on_facet(points: &[SpaceTimePoint], facet: Facet) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no test points".into()));
    }
    for p in points {
        let on = p
            .coords
            .get(facet.axis)
            .is_some_and(|&u| (u - facet.normalized_position()).abs() <= 1e-9);
        if !on {
            return Err(Error::InvalidArgument(format!(
                "test point {:?} is not on facet {facet}",
                p.coords
            )));
        }
    }
    Ok(())
}

/// Per sample, per point: (value in K, inward flux in W/m²), point-major.
#[allow(clippy::too_many_arguments)]
fn facet_samples<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    arch: &Architecture,
    scaling: &NormalizationMap,
    points: &[SpaceTimePoint],
    facet: Facet,
    conductivity: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<(f64, f64)>>> {
    check_on_facet(points, facet)?;
    if samples < 2 {
        return Err(Error::InvalidArgument(format!(
            "boundary identification needs at least 2 samples, got {samples}"
        )));
    }
    let set = PointSet::new(points)?;
    let normal = facet.outward_normal(set.spatial_dims());
    let mut out = vec![Vec::with_capacity(samples); points.len()];
    for _ in 0..samples {
        let w = sample_weights(post, rng);
        for (slot, e) in out.iter_mut().zip(evaluate_batch(&w.weights, arch, &set)?) {
            let q = boundary_flux_from_eval(&e, &normal, conductivity, scaling)?;
            slot.push((scaling.physical_temperature(e.value), q));
        }
    }
    Ok(out)
}

/// Inward heat flux `k dT/dn` on a facet, pooled over points and samples.
#[allow(clippy::too_many_arguments)]
pub fn identify_neumann<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    arch: &Architecture,
    scaling: &NormalizationMap,
    points: &[SpaceTimePoint],
    facet: Facet,
    conductivity: f64,
    samples: usize,
    truth: Option<f64>,
    rng: &mut R,
) -> Result<IdentifiedBoundary> {
    let per_point = facet_samples(post, arch, scaling, points, facet, conductivity, samples, rng)?;
    let estimates = per_point.iter().flatten().map(|&(_, q)| q).collect();
    Ok(IdentifiedBoundary::from_estimates(
        facet,
        BoundaryQuantity::Flux,
        estimates,
        truth,
        points.len(),
        0,
    ))
}

/// Convection coefficient from `-k dT/dn = h (T - T_inf)` with outward `n`.
///
/// A point is excluded when any of its samples has `|T - T_inf|` below
/// `1e-3` of the temperature scale.
#[allow(clippy::too_many_arguments)]
pub fn identify_robin<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    arch: &Architecture,
    scaling: &NormalizationMap,
    points: &[SpaceTimePoint],
    facet: Facet,
    conductivity: f64,
    t_inf: f64,
    samples: usize,
    truth: Option<f64>,
    rng: &mut R,
) -> Result<IdentifiedBoundary> {
    let per_point = facet_samples(post, arch, scaling, points, facet, conductivity, samples, rng)?;
    let floor = 1e-3 * scaling.temperature_scale().abs();
    let mut estimates = Vec::new();
    let mut excluded = 0;
    for draws in &per_point {
        if draws.iter().any(|&(t, _)| (t - t_inf).abs() < floor) {
            excluded += 1;
            continue;
        }
        estimates.extend(draws.iter().map(|&(t, q)| -q / (t - t_inf)));
    }
    let used = points.len() - excluded;
    if used == 0 {
        return Err(Error::NumericalFailure(
            "every test point sits at the ambient temperature".into(),
        ));
    }
    Ok(IdentifiedBoundary::from_estimates(
        facet,
        BoundaryQuantity::Convection,
        estimates,
        truth,
        used,
        excluded,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub mean: f64,
    pub std: f64,
    pub truth: Option<f64>,
    /// `None` without a truth or when the truth is zero.
    pub relative_error: Option<f64>,
    pub tail_records: usize,
}

/// Diffusivity statistics over the last `ceil(tail_fraction * epochs)`
/// recorded values, in m²/s.
pub fn summarize_alpha_trace(trace: &TrainingTrace, tail_fraction: f64, truth: Option<f64>) -> Result<AlphaSummary> {
    let scale = trace
        .alpha_scale
        .ok_or_else(|| Error::InvalidArgument("trace has no diffusivity records".into()))?;
    let values: Vec<f64> = trace
        .records
        .iter()
        .map(|r| r.alpha_tilde.map(|a| a * scale))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidArgument("trace has epochs without diffusivity".into()))?;
    summarize_alpha_values(&values, tail_fraction, truth)
}

/// As [`summarize_alpha_trace`] on per-epoch diffusivities already in m²/s.
pub fn summarize_alpha_values(values: &[f64], tail_fraction: f64, truth: Option<f64>) -> Result<AlphaSummary> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidArgument("trace has no epochs".into()));
    }
    let k = ((tail_fraction * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let (mean, std) = mean_std(&values[values.len() - k..]);
    Ok(AlphaSummary {
        mean,
        std,
        truth,
        relative_error: truth.filter(|&t| t != 0.0).map(|t| ((mean - t) / t).abs()),
        tail_records: k,
    })
}

/// Predictive field in physical units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldPrediction {
    pub coords: Vec<Vec<f64>>,
    pub time: Vec<Option<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn predict_field<R: Rng + ?Sized>(
    post: &GaussianVariationalPosterior,
    arch: &Architecture,
    scaling: &NormalizationMap,
    points: &[SpaceTimePoint],
    samples: usize,
    rng: &mut R,
) -> Result<FieldPrediction> {
    let set = PointSet::new(points)?;
    let pred = posterior_predictive(post, arch, &set, samples, rng)?;
    let scale = scaling.temperature_scale().abs();
    let (coords, time) = points.iter().map(|p| scaling.physical_point(p)).unzip();
    Ok(FieldPrediction {
        coords,
        time,
        mean: pred.mean.iter().map(|&m| scaling.physical_temperature(m)).collect(),
        std: pred.std.iter().map(|&s| s * scale).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SortedRow {
    pub rank: usize,
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
}

/// Rows ordered by true temperature, for plotting prediction bands.
pub fn sorted_truth_table(mean: &[f64], std: &[f64], truths: &[f64]) -> Result<Vec<SortedRow>> {
    ensure_len("predictive std", mean.len(), std.len())?;
    ensure_len("truths", mean.len(), truths.len())?;
    let mut order: Vec<usize> = (0..truths.len()).collect();
    order.sort_by(|&a, &b| truths[a].total_cmp(&truths[b]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, i)| SortedRow {
            rank,
            truth: truths[i],
            mean: mean[i],
            std: std[i],
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::Side;
    use crate::surrogate::Activation;
    use crate::trainer::EpochRecord;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!((m.rmse, m.r_squared), (0.0, 1.0));
        let t = [1.0, 2.0, 6.0];
        let m = metrics(&[3.0; 3], &t).unwrap();
        assert_eq!(m.r_squared, 0.0);
        let m = metrics(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_relative_eq!(m.rmse, (1.0f64 / 3.0).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(m.r_squared, 0.5, max_relative = 1e-15);
        assert!(metrics(&[1.0, 2.0], &[5.0, 5.0]).is_err());
        assert!(metrics(&[1.0], &[5.0, 5.0]).is_err());
    }

    #[test]
    fn r_squared_is_affine_invariant() {
        let t = [0.3, 1.7, 2.2, 5.0];
        let p = [0.5, 1.5, 2.9, 4.1];
        let base = metrics(&p, &t).unwrap().r_squared;
        let f = |v: &[f64]| v.iter().map(|x| 273.15 + 40.0 * x).collect::<Vec<_>>();
        assert_relative_eq!(metrics(&f(&p), &f(&t)).unwrap().r_squared, base, max_relative = 1e-12);
    }

    /// Two-layer identity network computing `a x + b y + c`.
    fn plane(a: f64, b: f64, c: f64) -> (Architecture, Vec<f64>) {
        let arch = Architecture::new(vec![2, 1, 1], Activation::Identity).unwrap();
        (arch, vec![a, b, c, 1.0, 0.0])
    }

    #[test]
    fn neumann_on_exact_linear_field() {
        let (q, k, l, t_scale) = (10_000.0, 52.0, 0.1, 20.0);
        let map = NormalizationMap::for_box(&[l, l], None, 300.0, t_scale).unwrap();
        // T = 300 - (q/k) x, so v = -(q/k) L / T_scale * u
        let (arch, w) = plane(-(q / k) * l / t_scale, 0.0, 0.5);
        let post = GaussianVariationalPosterior::delta(w);
        let pts = facet_points(2, Facet::LEFT, 400, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = identify_neumann(&post, &arch, &map, &pts, Facet::LEFT, k, 3, Some(q), &mut rng).unwrap();
        assert_eq!(id.estimates.len(), 1200);
        assert_relative_eq!(id.mean, q, max_relative = 1e-12);
        assert!(id.std < 1e-9 * q);
        assert!(id.relative_error.unwrap() < 1e-12);
        let off = vec![SpaceTimePoint::spatial(vec![0.5, 0.5])];
        assert!(identify_neumann(&post, &arch, &map, &off, Facet::LEFT, k, 3, None, &mut rng).is_err());
    }

    #[test]
    fn robin_on_constructed_field() {
        // T = T_inf + c exp(-(h/k) s) with s the outward coordinate from x = L;
        // only the wall value and slope enter, so its tangent plane suffices
        let (h, k, l, t_inf, c) = (40.0, 52.0, 0.1, 273.15, 30.0);
        let map = NormalizationMap::for_box(&[l, l], None, 273.15, 10.0).unwrap();
        let slope = -c * (h / k) * l / 10.0;
        let (arch, w) = plane(slope, 0.0, c / 10.0 - slope);
        let post = GaussianVariationalPosterior::delta(w);
        let pts = facet_points(2, Facet::RIGHT, 50, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = identify_robin(&post, &arch, &map, &pts, Facet::RIGHT, k, t_inf, 2, Some(h), &mut rng)
            .unwrap();
        assert_relative_eq!(id.mean, h, max_relative = 1e-10);
        assert_eq!(id.used_points + id.excluded_points, 50);
        assert_eq!(id.excluded_points, 0);
    }

    #[test]
    fn robin_excludes_ambient_points() {
        let map = NormalizationMap::for_box(&[1.0, 1.0], None, 300.0, 10.0).unwrap();
        // v = 0.3 u + y - 0.8 vanishes mid-facet, where T = T_inf
        let (arch, w) = plane(0.3, 1.0, -0.8);
        let post = GaussianVariationalPosterior::delta(w);
        let pts = vec![
            SpaceTimePoint::spatial(vec![1.0, 0.5]),
            SpaceTimePoint::spatial(vec![1.0, 0.9]),
            SpaceTimePoint::spatial(vec![1.0, 0.1]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let id = identify_robin(&post, &arch, &map, &pts, Facet::RIGHT, 1.0, 300.0, 2, None, &mut rng).unwrap();
        assert_eq!((id.used_points, id.excluded_points), (2, 1));
        let only = &pts[..1];
        assert!(identify_robin(&post, &arch, &map, only, Facet::RIGHT, 1.0, 300.0, 2, None, &mut rng).is_err());
    }

    fn trace_with(values: &[f64]) -> TrainingTrace {
        TrainingTrace {
            records: values
                .iter()
                .enumerate()
                .map(|(epoch, &a)| EpochRecord {
                    epoch,
                    data_term: 0.0,
                    pde_term: 0.0,
                    total: 0.0,
                    alpha_tilde: Some(a),
                })
                .collect(),
            posterior: GaussianVariationalPosterior::delta(vec![0.0]),
            alpha_tilde: values.last().copied(),
            alpha_scale: Some(1e-5),
            iterations: values.len() * 100,
            wall_clock_seconds: 0.0,
        }
    }

    #[test]
    fn alpha_trace_summary() {
        let s = summarize_alpha_trace(&trace_with(&[1.5; 10]), 0.2, None).unwrap();
        assert_relative_eq!(s.mean, 1.5e-5, max_relative = 1e-14);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.tail_records, 2);
        let vals = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        let s = summarize_alpha_trace(&trace_with(&vals), 1.0, Some(4e-6)).unwrap();
        assert_relative_eq!(s.mean, 4e-6, max_relative = 1e-12);
        assert!(s.relative_error.unwrap() < 1e-12);
        let s = summarize_alpha_trace(&trace_with(&vals), 0.3, None).unwrap();
        assert_eq!(s.tail_records, 3);
        assert!(s.mean >= 0.5e-5 && s.mean <= 0.7e-5);
        let mut t = trace_with(&vals);
        t.alpha_scale = None;
        assert!(summarize_alpha_trace(&t, 0.2, None).is_err());
    }

    #[test]
    fn delta_posterior_field_has_zero_std() {
        let map = NormalizationMap::for_box(&[0.1, 0.1], None, 300.0, 50.0).unwrap();
        let (arch, w) = plane(1.0, -0.5, 0.2);
        let post = GaussianVariationalPosterior::delta(w);
        let pts = facet_points(2, Facet::new(1, Side::High), 7, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = predict_field(&post, &arch, &map, &pts, 5, &mut rng).unwrap();
        assert!(f.std.iter().all(|&s| s == 0.0));
        assert_relative_eq!(f.mean[0], 300.0 + 50.0 * (1.0 / 14.0 - 0.5 + 0.2), max_relative = 1e-12);
        assert_relative_eq!(f.coords[0][1], 0.1, max_relative = 1e-15);
    }

    #[test]
    fn sorted_table_orders_by_truth() {
        let rows = sorted_truth_table(&[1.0, 2.0, 3.0], &[0.1, 0.2, 0.3], &[5.0, 1.0, 3.0]).unwrap();
        let truths: Vec<f64> = rows.iter().map(|r| r.truth).collect();
        assert_eq!(truths, vec![1.0, 3.0, 5.0]);
        assert_eq!(rows[0].mean, 2.0);
    }

    #[test]
    fn coverage_counts_band() {
        let c = coverage(&[0.0, 0.0, 0.0, 0.0], &[1.0; 4], &[0.5, 1.9, 2.1, -3.0], 2.0).unwrap();
        assert_eq!(c, 0.5);
    }
}
