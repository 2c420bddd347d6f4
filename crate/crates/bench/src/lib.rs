//! Fixtures shared by the benchmarks.

use hcebnn::reference::FdConfig;
use hcebnn::surrogate::init_parameters;
use hcebnn::{Activation, Architecture, BoundaryKind, DomainSpec, Facet, Material, PointSet, SpaceTimePoint};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three hidden sigmoid layers of 20, the default surrogate.
pub fn network(input_dim: usize) -> (Architecture, Vec<f64>) {
    let mut sizes = vec![input_dim];
    sizes.extend([20, 20, 20, 1]);
    let arch = Architecture::new(sizes, Activation::Sigmoid).expect("valid architecture");
    let params = init_parameters(&arch, 7).into_inner();
    (arch, params)
}

/// `n` uniform points in the unit square, with unit time when `has_time`.
pub fn unit_points(n: usize, has_time: bool, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<SpaceTimePoint> = (0..n)
        .map(|_| {
            let c = vec![rng.random(), rng.random()];
            if has_time {
                SpaceTimePoint::with_time(c, rng.random())
            } else {
                SpaceTimePoint::spatial(c)
            }
        })
        .collect();
    PointSet::new(&pts).expect("non-empty point set")
}

/// Square plate with heated, fixed, convective and insulated sides.
pub fn mixed_plate() -> DomainSpec {
    DomainSpec::new(vec![0.5, 0.5], Material::STEEL)
        .and_then(|d| d.with_boundary(Facet::LEFT, BoundaryKind::Neumann { flux: 1.0e4 }))
        .and_then(|d| d.with_boundary(Facet::RIGHT, BoundaryKind::Dirichlet { temperature: 283.15 }))
        .and_then(|d| d.with_boundary(Facet::TOP, BoundaryKind::Robin { h: 40.0, t_inf: 273.15 }))
        .expect("valid plate")
}

pub fn grid(nodes: usize, time_step: Option<f64>) -> FdConfig {
    FdConfig {
        nodes: vec![nodes, nodes],
        time_step,
        output_every: 10,
    }
}
