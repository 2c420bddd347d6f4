//! Fully connected surrogate network with an exact input-derivative engine.
//!
//! The network maps a normalized space-time point to a normalized
//! temperature. Alongside the value, every evaluation can carry the first
//! derivatives with respect to all inputs and the diagonal of the spatial
//! Hessian. These are propagated layer by layer through the affine maps and
//! activations, so they are exact analytic derivatives of the network rather
//! than finite-difference estimates.
//!
//! Parameter gradients of a loss that depends on those derivatives are
//! obtained by running reverse mode through the extended forward pass.
//!
//! # Parameter layout
//!
//! A [`ParameterVector`] is flat and layer-major. For each consecutive pair of
//! layer sizes `(n_in, n_out)` it stores the weight matrix row by row
//! (`n_out` rows of `n_in` entries, entry `[j][i]` connecting input `i` to
//! unit `j`), followed by the `n_out` biases.
//!
//! # Batched evaluation
//!
//! Points are processed in fixed-size chunks. Inside a chunk the state of a
//! layer is a matrix with one row per unit and one column block per
//! derivative channel (value, first derivative per input, second derivative
//! per spatial input), so each affine map is a single matrix product. Chunk
//! results are reduced in chunk order, which keeps sums bitwise reproducible
//! regardless of how many threads evaluate the chunks.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Points evaluated together in one matrix pass.
pub const CHUNK_SIZE: usize = 64;

/// Hidden-layer nonlinearity. The output layer is always affine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// Identity on hidden layers; turns the network into an affine map.
    /// Intended for tests.
    Identity,
}

impl Activation {
    /// Value and first three derivatives at a pre-activation `z`.
    #[inline]
    fn derivatives(self, z: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                let d1 = s * (1.0 - s);
                let d2 = d1 * (1.0 - 2.0 * s);
                let d3 = d1 * (1.0 - 6.0 * s + 6.0 * s * s);
                (s, d1, d2, d3)
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d1 = 1.0 - t * t;
                let d2 = -2.0 * t * d1;
                let d3 = d1 * (6.0 * t * t - 2.0);
                (t, d1, d2, d3)
            }
            Activation::Identity => (z, 1.0, 0.0, 0.0),
        }
    }

    /// Derivatives recovered from the stored activation value.
    #[inline]
    fn derivatives_from_output(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Sigmoid => {
                let d1 = a * (1.0 - a);
                (d1, d1 * (1.0 - 2.0 * a), d1 * (1.0 - 6.0 * a + 6.0 * a * a))
            }
            Activation::Tanh => {
                let d1 = 1.0 - a * a;
                (d1, -2.0 * a * d1, d1 * (6.0 * a * a - 2.0))
            }
            Activation::Identity => (1.0, 0.0, 0.0),
        }
    }

    #[inline]
    fn value(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Layer sizes plus hidden activation, e.g. `[3, 20, 20, 20, 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ArchitectureRepr", into = "ArchitectureRepr")]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct ArchitectureRepr {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl TryFrom<ArchitectureRepr> for Architecture {
    type Error = Error;
    fn try_from(r: ArchitectureRepr) -> Result<Self> {
        Architecture::new(r.layer_sizes, r.activation)
    }
}

impl From<Architecture> for ArchitectureRepr {
    fn from(a: Architecture) -> Self {
        ArchitectureRepr {
            layer_sizes: a.layer_sizes,
            activation: a.activation,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct LayerShape {
    n_in: usize,
    n_out: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::InvalidArchitecture(format!(
                "need input, at least one hidden layer and output; got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "layer sizes must be positive; got {layer_sizes:?}"
            )));
        }
        if *layer_sizes.last().unwrap() != 1 {
            return Err(Error::InvalidArchitecture(format!(
                "output layer must have a single unit; got {layer_sizes:?}"
            )));
        }
        Ok(Self {
            layer_sizes,
            activation,
        })
    }

    /// `[input_dim, width, ..., width, 1]` with `hidden_layers` hidden layers.
    pub fn uniform(
        input_dim: usize,
        width: usize,
        hidden_layers: usize,
        activation: Activation,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend(std::iter::repeat_n(width, hidden_layers));
        sizes.push(1);
        Self::new(sizes, activation)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of affine maps (hidden layers + output layer).
    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut offset = 0;
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let shape = LayerShape {
                    n_in,
                    n_out,
                    weight_offset: offset,
                    bias_offset: offset + n_in * n_out,
                };
                offset += n_in * n_out + n_out;
                shape
            })
            .collect()
    }
}

/// Weights and biases of one affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Flat parameter vector in the documented layer-major layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(arch: &Architecture, values: Vec<f64>) -> Result<Self> {
        ensure_len("parameter vector", arch.num_params(), values.len())?;
        Ok(Self(values))
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Self(vec![0.0; arch.num_params()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Splits the flat vector into per-layer weight matrices and biases.
    pub fn unpack(&self, arch: &Architecture) -> Result<Vec<LayerParams>> {
        ensure_len("parameter vector", arch.num_params(), self.0.len())?;
        Ok(arch
            .layer_shapes()
            .iter()
            .map(|l| LayerParams {
                weights: weight_view(&self.0, l).to_owned(),
                bias: bias_view(&self.0, l).to_owned(),
            })
            .collect())
    }

    /// Inverse of [`unpack`](Self::unpack).
    pub fn pack(arch: &Architecture, layers: &[LayerParams]) -> Result<Self> {
        let shapes = arch.layer_shapes();
        ensure_len("layer count", shapes.len(), layers.len())?;
        let mut out = Vec::with_capacity(arch.num_params());
        for (shape, layer) in shapes.iter().zip(layers) {
            if layer.weights.dim() != (shape.n_out, shape.n_in) {
                return Err(Error::DimensionMismatch {
                    what: "layer weights",
                    expected: shape.n_out * shape.n_in,
                    found: layer.weights.len(),
                });
            }
            ensure_len("layer bias", shape.n_out, layer.bias.len())?;
            out.extend(layer.weights.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        Ok(Self(out))
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn weight_view<'a>(params: &'a [f64], l: &LayerShape) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape(
        (l.n_out, l.n_in),
        &params[l.weight_offset..l.weight_offset + l.n_in * l.n_out],
    )
    .expect("layer shape matches slice")
}

fn bias_view<'a>(params: &'a [f64], l: &LayerShape) -> ArrayView1<'a, f64> {
    ArrayView1::from(&params[l.bias_offset..l.bias_offset + l.n_out])
}

/// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
pub fn init_parameters(arch: &Architecture, seed: u64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; arch.num_params()];
    for l in arch.layer_shapes() {
        let dist = Normal::new(0.0, 1.0 / (l.n_in as f64).sqrt()).expect("positive std");
        for v in &mut values[l.weight_offset..l.bias_offset] {
            *v = dist.sample(&mut rng);
        }
    }
    ParameterVector(values)
}

/// Normalized spatial coordinates plus optional normalized time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub coords: Vec<f64>,
    pub time: Option<f64>,
}

impl SpaceTimePoint {
    pub fn spatial(coords: Vec<f64>) -> Self {
        Self { coords, time: None }
    }

    pub fn with_time(coords: Vec<f64>, time: f64) -> Self {
        Self {
            coords,
            time: Some(time),
        }
    }

    /// Network input dimension: spatial coordinates plus one for time.
    pub fn input_dim(&self) -> usize {
        self.coords.len() + usize::from(self.time.is_some())
    }

    fn write_input(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.coords);
        if let Some(t) = self.time {
            out.push(t);
        }
    }
}

/// Network value with its input derivatives at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkEval {
    pub value: f64,
    /// dT/dx_i per spatial axis.
    pub grad_space: Vec<f64>,
    /// d²T/dx_i² per spatial axis.
    pub hess_diag: Vec<f64>,
    /// dT/dt, present iff the point carries time.
    pub grad_time: Option<f64>,
}

/// Sensitivity of a scalar loss to each field of a [`NetworkEval`].
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSensitivity {
    pub value: f64,
    pub grad_space: Vec<f64>,
    pub hess_diag: Vec<f64>,
    pub grad_time: f64,
}

impl EvalSensitivity {
    pub fn zeros(spatial_dims: usize) -> Self {
        Self {
            value: 0.0,
            grad_space: vec![0.0; spatial_dims],
            hess_diag: vec![0.0; spatial_dims],
            grad_time: 0.0,
        }
    }
}

/// A validated, homogeneous set of points stored as a flat input matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSet {
    spatial_dims: usize,
    has_time: bool,
    inputs: Vec<f64>,
}

impl PointSet {
    pub fn new(points: &[SpaceTimePoint]) -> Result<Self> {
        let (spatial_dims, has_time) = match points.first() {
            Some(p) => (p.coords.len(), p.time.is_some()),
            None => (0, false),
        };
        let mut inputs = Vec::with_capacity(points.len() * (spatial_dims + 1));
        for p in points {
            ensure_len("point spatial dimension", spatial_dims, p.coords.len())?;
            if p.time.is_some() != has_time {
                return Err(Error::InvalidArgument(
                    "mixed time-dependent and steady points in one set".into(),
                ));
            }
            p.write_input(&mut inputs);
        }
        Ok(Self {
            spatial_dims,
            has_time,
            inputs,
        })
    }

    /// Empty set with a declared dimensionality.
    pub fn empty(spatial_dims: usize, has_time: bool) -> Self {
        Self {
            spatial_dims,
            has_time,
            inputs: Vec::new(),
        }
    }

    /// Concatenation; both sets must share dimensionality unless one is empty.
    pub fn concat(&self, other: &PointSet) -> Result<PointSet> {
        if self.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() {
            return Ok(self.clone());
        }
        ensure_len("point spatial dimension", self.spatial_dims, other.spatial_dims)?;
        if self.has_time != other.has_time {
            return Err(Error::InvalidArgument(
                "mixed time-dependent and steady point sets".into(),
            ));
        }
        let mut inputs = self.inputs.clone();
        inputs.extend_from_slice(&other.inputs);
        Ok(Self {
            spatial_dims: self.spatial_dims,
            has_time: self.has_time,
            inputs,
        })
    }

    pub fn spatial_dims(&self) -> usize {
        self.spatial_dims
    }

    pub fn has_time(&self) -> bool {
        self.has_time
    }

    pub fn input_dim(&self) -> usize {
        self.spatial_dims + usize::from(self.has_time)
    }

    pub fn len(&self) -> usize {
        match self.input_dim() {
            0 => 0,
            d => self.inputs.len() / d,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn point(&self, i: usize) -> SpaceTimePoint {
        let d = self.input_dim();
        let row = &self.inputs[i * d..(i + 1) * d];
        SpaceTimePoint {
            coords: row[..self.spatial_dims].to_vec(),
            time: self.has_time.then(|| row[self.spatial_dims]),
        }
    }

    fn chunk(&self, index: usize) -> &[f64] {
        let d = self.input_dim();
        let start = index * CHUNK_SIZE * d;
        let end = ((index + 1) * CHUNK_SIZE * d).min(self.inputs.len());
        &self.inputs[start..end]
    }

    fn num_chunks(&self) -> usize {
        self.len().div_ceil(CHUNK_SIZE)
    }
}

/// Column-block layout of a layer state matrix.
#[derive(Clone, Copy, Debug)]
struct Channels {
    inputs: usize,
    spatial: usize,
    derivs: bool,
}

impl Channels {
    fn count(&self) -> usize {
        if self.derivs {
            1 + self.inputs + self.spatial
        } else {
            1
        }
    }

    #[inline]
    fn first(&self, k: usize) -> usize {
        1 + k
    }

    #[inline]
    fn second(&self, k: usize) -> usize {
        1 + self.inputs + k
    }
}

struct HiddenRecord {
    input: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

struct Tape {
    hidden: Vec<HiddenRecord>,
    last_input: Array2<f64>,
    out: Array2<f64>,
    batch: usize,
}

fn check_params(params: &[f64], arch: &Architecture) -> Result<()> {
    ensure_len("parameter vector", arch.num_params(), params.len())
}

fn check_points(points: &PointSet, arch: &Architecture) -> Result<()> {
    if points.is_empty() {
        return Ok(());
    }
    ensure_len("network input", arch.input_dim(), points.input_dim())
}

fn forward_chunk(params: &[f64], arch: &Architecture, inputs: &[f64], ch: Channels) -> Tape {
    let d = ch.inputs;
    let b = inputs.len() / d;
    let c = ch.count();
    let mut a = Array2::<f64>::zeros((d, c * b));
    for p in 0..b {
        for k in 0..d {
            a[[k, p]] = inputs[p * d + k];
            if ch.derivs {
                a[[k, ch.first(k) * b + p]] = 1.0;
            }
        }
    }
    let shapes = arch.layer_shapes();
    let act = arch.activation();
    let mut hidden = Vec::with_capacity(shapes.len() - 1);
    for (li, l) in shapes.iter().enumerate() {
        let w = weight_view(params, l);
        let bias = bias_view(params, l);
        let mut z = w.dot(&a);
        for (j, mut row) in z.outer_iter_mut().enumerate() {
            let bj = bias[j];
            for v in row.slice_mut(s![0..b]) {
                *v += bj;
            }
        }
        if li + 1 == shapes.len() {
            return Tape {
                hidden,
                last_input: a,
                out: z,
                batch: b,
            };
        }
        let mut next = Array2::<f64>::zeros((l.n_out, c * b));
        let mut vals = Array2::<f64>::zeros((l.n_out, b));
        for j in 0..l.n_out {
            let zr = z.row(j);
            let zr = zr.as_slice().expect("contiguous row");
            let mut nr = next.row_mut(j);
            let nr = nr.as_slice_mut().expect("contiguous row");
            let mut vr = vals.row_mut(j);
            let vr = vr.as_slice_mut().expect("contiguous row");
            for p in 0..b {
                if !ch.derivs {
                    let s0 = act.value(zr[p]);
                    nr[p] = s0;
                    vr[p] = s0;
                    continue;
                }
                let (s0, s1, s2, _) = act.derivatives(zr[p]);
                nr[p] = s0;
                vr[p] = s0;
                for k in 0..d {
                    let idx = ch.first(k) * b + p;
                    nr[idx] = s1 * zr[idx];
                }
                for k in 0..ch.spatial {
                    let zk = zr[ch.first(k) * b + p];
                    let idx = ch.second(k) * b + p;
                    nr[idx] = s2 * zk * zk + s1 * zr[idx];
                }
            }
        }
        hidden.push(HiddenRecord {
            input: a,
            pre: z,
            act: vals,
        });
        a = next;
    }
    unreachable!("architecture has an output layer")
}

fn accumulate_weight_grad(
    grad: &mut [f64],
    l: &LayerShape,
    zbar: &Array2<f64>,
    input: &Array2<f64>,
    b: usize,
) {
    let gw = zbar.dot(&input.t());
    let mut gw_dst = ArrayViewMut2::from_shape(
        (l.n_out, l.n_in),
        &mut grad[l.weight_offset..l.bias_offset],
    )
    .expect("layer shape matches slice");
    gw_dst += &gw;
    for j in 0..l.n_out {
        grad[l.bias_offset + j] += zbar.slice(s![j, 0..b]).sum();
    }
}

fn backward_chunk(
    params: &[f64],
    arch: &Architecture,
    tape: &Tape,
    out_adj: Array2<f64>,
    ch: Channels,
    grad: &mut [f64],
) {
    let shapes = arch.layer_shapes();
    let act = arch.activation();
    let b = tape.batch;
    let d = ch.inputs;
    let last = shapes.len() - 1;

    accumulate_weight_grad(grad, &shapes[last], &out_adj, &tape.last_input, b);
    let mut adj = weight_view(params, &shapes[last]).t().dot(&out_adj);

    for li in (0..last).rev() {
        let l = &shapes[li];
        let rec = &tape.hidden[li];
        let mut zbar = Array2::<f64>::zeros(adj.raw_dim());
        for j in 0..l.n_out {
            let ar = adj.row(j);
            let ar = ar.as_slice().expect("contiguous row");
            let zr = rec.pre.row(j);
            let zr = zr.as_slice().expect("contiguous row");
            let sr = rec.act.row(j);
            let sr = sr.as_slice().expect("contiguous row");
            let mut br = zbar.row_mut(j);
            let br = br.as_slice_mut().expect("contiguous row");
            for p in 0..b {
                let (s1, s2, s3) = act.derivatives_from_output(sr[p]);
                let mut v = ar[p] * s1;
                if ch.derivs {
                    for k in 0..d {
                        let idx = ch.first(k) * b + p;
                        br[idx] = ar[idx] * s1;
                        v += ar[idx] * s2 * zr[idx];
                    }
                    for k in 0..ch.spatial {
                        let ik = ch.first(k) * b + p;
                        let ikk = ch.second(k) * b + p;
                        let zk = zr[ik];
                        let a_kk = ar[ikk];
                        br[ikk] = a_kk * s1;
                        br[ik] += 2.0 * a_kk * s2 * zk;
                        v += a_kk * (s3 * zk * zk + s2 * zr[ikk]);
                    }
                }
                br[p] = v;
            }
        }
        accumulate_weight_grad(grad, l, &zbar, &rec.input, b);
        if li > 0 {
            adj = weight_view(params, l).t().dot(&zbar);
        }
    }
}

fn extract_eval(out: &Array2<f64>, p: usize, b: usize, ch: Channels, has_time: bool) -> NetworkEval {
    let row = out.row(0);
    let grad_space = (0..ch.spatial)
        .map(|k| row[ch.first(k) * b + p])
        .collect();
    let hess_diag = (0..ch.spatial)
        .map(|k| row[ch.second(k) * b + p])
        .collect();
    NetworkEval {
        value: row[p],
        grad_space,
        hess_diag,
        grad_time: has_time.then(|| row[ch.first(ch.spatial) * b + p]),
    }
}

fn derivative_channels(points: &PointSet) -> Channels {
    Channels {
        inputs: points.input_dim(),
        spatial: points.spatial_dims(),
        derivs: true,
    }
}

/// Network output at one point.
pub fn forward(params: &[f64], arch: &Architecture, p: &SpaceTimePoint) -> Result<f64> {
    let set = PointSet::new(std::slice::from_ref(p))?;
    Ok(forward_batch(params, arch, &set)?[0])
}

/// Network outputs at every point of a set, value channel only.
pub fn forward_batch(params: &[f64], arch: &Architecture, points: &PointSet) -> Result<Vec<f64>> {
    check_params(params, arch)?;
    check_points(points, arch)?;
    let ch = Channels {
        inputs: points.input_dim(),
        spatial: points.spatial_dims(),
        derivs: false,
    };
    let mut out = Vec::with_capacity(points.len());
    for ci in 0..points.num_chunks() {
        let tape = forward_chunk(params, arch, points.chunk(ci), ch);
        out.extend(tape.out.row(0).iter().copied());
    }
    Ok(out)
}

/// Network value and exact input derivatives at one point.
pub fn forward_with_derivs(
    params: &[f64],
    arch: &Architecture,
    p: &SpaceTimePoint,
) -> Result<NetworkEval> {
    let set = PointSet::new(std::slice::from_ref(p))?;
    Ok(evaluate_batch(params, arch, &set)?.remove(0))
}

/// [`forward_with_derivs`] over a whole point set.
pub fn evaluate_batch(
    params: &[f64],
    arch: &Architecture,
    points: &PointSet,
) -> Result<Vec<NetworkEval>> {
    check_params(params, arch)?;
    check_points(points, arch)?;
    let ch = derivative_channels(points);
    let mut out = Vec::with_capacity(points.len());
    for ci in 0..points.num_chunks() {
        let tape = forward_chunk(params, arch, points.chunk(ci), ch);
        for p in 0..tape.batch {
            out.push(extract_eval(&tape.out, p, tape.batch, ch, points.has_time()));
        }
    }
    Ok(out)
}

/// Summed loss, its parameter gradient and any auxiliary accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub aux: Vec<f64>,
}

/// Gradient of `Σ_i loss(i, eval_i)` with respect to the network parameters.
///
/// The closure receives the point index and its [`NetworkEval`] and returns
/// the point's loss contribution together with the loss sensitivity to each
/// eval field. Sensitivities to derivative fields are differentiated through
/// the derivative propagation, so losses built from PDE residuals get exact
/// parameter gradients.
pub fn loss_parameter_gradient<F>(
    params: &[f64],
    arch: &Architecture,
    points: &PointSet,
    loss: F,
) -> Result<LossGradient>
where
    F: Fn(usize, &NetworkEval) -> (f64, EvalSensitivity) + Sync,
{
    loss_parameter_gradient_with_aux(params, arch, points, 0, |i, e, _| loss(i, e))
}

/// Like [`loss_parameter_gradient`], with `n_aux` extra per-point sums.
///
/// The closure may add into the auxiliary slice; the slices are summed over
/// points in point order. This carries derivatives with respect to
/// quantities outside the network (e.g. a trainable PDE coefficient).
pub fn loss_parameter_gradient_with_aux<F>(
    params: &[f64],
    arch: &Architecture,
    points: &PointSet,
    n_aux: usize,
    loss: F,
) -> Result<LossGradient>
where
    F: Fn(usize, &NetworkEval, &mut [f64]) -> (f64, EvalSensitivity) + Sync,
{
    check_params(params, arch)?;
    check_points(points, arch)?;
    let ch = derivative_channels(points);
    let has_time = points.has_time();
    let n_params = params.len();

    let partials: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..points.num_chunks())
        .into_par_iter()
        .map(|ci| {
            let tape = forward_chunk(params, arch, points.chunk(ci), ch);
            let b = tape.batch;
            let mut out_adj = Array2::<f64>::zeros((1, ch.count() * b));
            let mut aux = vec![0.0; n_aux];
            let mut total = 0.0;
            for p in 0..b {
                let eval = extract_eval(&tape.out, p, b, ch, has_time);
                let (l, sens) = loss(ci * CHUNK_SIZE + p, &eval, &mut aux);
                total += l;
                let mut row = out_adj.row_mut(0);
                row[p] = sens.value;
                for k in 0..ch.spatial {
                    row[ch.first(k) * b + p] = sens.grad_space[k];
                    row[ch.second(k) * b + p] = sens.hess_diag[k];
                }
                if has_time {
                    row[ch.first(ch.spatial) * b + p] = sens.grad_time;
                }
            }
            let mut grad = vec![0.0; n_params];
            backward_chunk(params, arch, &tape, out_adj, ch, &mut grad);
            (total, grad, aux)
        })
        .collect();

    let mut result = LossGradient {
        loss: 0.0,
        gradient: vec![0.0; n_params],
        aux: vec![0.0; n_aux],
    };
    for (l, g, a) in partials {
        result.loss += l;
        for (dst, v) in result.gradient.iter_mut().zip(&g) {
            *dst += v;
        }
        for (dst, v) in result.aux.iter_mut().zip(&a) {
            *dst += v;
        }
    }
    if !result.loss.is_finite()
        || result.gradient.iter().any(|g| !g.is_finite())
        || result.aux.iter().any(|g| !g.is_finite())
    {
        return Err(Error::NumericalFailure(
            "non-finite loss or parameter gradient".into(),
        ));
    }
    Ok(result)
}
