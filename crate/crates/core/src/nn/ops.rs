//! Differentiable layers. Each forward returns its output plus whatever the
//! matching backward needs; a backward can only be called with a cache that a
//! forward produced.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::graph::Propagation;

/// Glorot-uniform `fan_in x fan_out` matrix.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::from_vec(fan_in, fan_out, data).expect("sized")
}

/// Parameters of one topology-adaptive graph convolution:
/// `X' = Σ_{k=0..K} M^k X Θ_k + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TagConvParams {
    /// `K + 1` matrices of shape `in x out`; `theta[0]` multiplies `X` itself.
    pub theta: Vec<Tensor>,
    /// `1 x out`.
    pub bias: Tensor,
}

impl TagConvParams {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize, hops: usize) -> Self {
        Self {
            theta: (0..=hops).map(|_| glorot(rng, in_dim, out_dim)).collect(),
            bias: Tensor::zeros(1, out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, hops: usize) -> Self {
        Self {
            theta: (0..=hops).map(|_| Tensor::zeros(in_dim, out_dim)).collect(),
            bias: Tensor::zeros(1, out_dim),
        }
    }

    pub fn hops(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn in_dim(&self) -> usize {
        self.theta[0].rows()
    }

    pub fn out_dim(&self) -> usize {
        self.theta[0].cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim(), self.hops())
    }

    pub fn parameter_count(&self) -> usize {
        self.theta.iter().map(Tensor::len).sum::<usize>() + self.bias.len()
    }
}

/// Propagated inputs `M^k X` for `k = 0..=K`.
#[derive(Debug, Clone)]
pub struct TagConvCache {
    powers: Vec<Tensor>,
}

pub fn tag_conv_forward(
    params: &TagConvParams,
    x: &Tensor,
    prop: &Propagation,
) -> Result<(Tensor, TagConvCache)> {
    if x.cols() != params.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "graph conv expects {} input features, got {}",
            params.in_dim(),
            x.cols()
        )));
    }
    if x.rows() != prop.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} feature rows for a {}-node propagation matrix",
            x.rows(),
            prop.len()
        )));
    }
    let mut powers = Vec::with_capacity(params.theta.len());
    powers.push(x.clone());
    for k in 1..params.theta.len() {
        let next = prop.apply(&powers[k - 1]);
        powers.push(next);
    }
    let mut out = Tensor::zeros(x.rows(), params.out_dim());
    for (p, theta) in powers.iter().zip(&params.theta) {
        out.add_assign(&p.matmul(theta));
    }
    out.add_row_broadcast(&params.bias);
    Ok((out, TagConvCache { powers }))
}

/// Gradients of a graph convolution given `upstream = dL/dX'`.
///
/// `dΘ_k = (M^k X)ᵀ G`, `db = Σ_rows G`, `dX = Σ_k M^k G Θ_kᵀ` (M is symmetric).
pub fn tag_conv_backward(
    params: &TagConvParams,
    prop: &Propagation,
    cache: &TagConvCache,
    upstream: &Tensor,
) -> (Tensor, TagConvParams) {
    let theta: Vec<Tensor> = cache
        .powers
        .iter()
        .map(|p| p.t_matmul(upstream))
        .collect();
    let bias = upstream.column_sums();
    let k_max = params.theta.len() - 1;
    let mut acc = upstream.matmul_t(&params.theta[k_max]);
    for k in (0..k_max).rev() {
        let mut next = prop.apply(&acc);
        next.add_assign(&upstream.matmul_t(&params.theta[k]));
        acc = next;
    }
    (acc, TagConvParams { theta, bias })
}

/// Fully connected layer `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `in x out`.
    pub weight: Tensor,
    /// `1 x out`.
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: glorot(rng, in_dim, out_dim),
            bias: Tensor::zeros(1, out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(in_dim, out_dim),
            bias: Tensor::zeros(1, out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim())
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

pub fn fc_forward(params: &DenseParams, x: &Tensor) -> Result<Tensor> {
    if x.cols() != params.in_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dense layer expects {} inputs, got {}",
            params.in_dim(),
            x.cols()
        )));
    }
    let mut y = x.matmul(&params.weight);
    y.add_row_broadcast(&params.bias);
    Ok(y)
}

/// Returns `(dL/dx, parameter gradients)`.
pub fn fc_backward(params: &DenseParams, x: &Tensor, upstream: &Tensor) -> (Tensor, DenseParams) {
    let grads = DenseParams {
        weight: x.t_matmul(upstream),
        bias: upstream.column_sums(),
    };
    (upstream.matmul_t(&params.weight), grads)
}

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "sigmoid" => Some(Activation::Sigmoid),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub fn forward(self, x: &Tensor) -> Tensor {
        match self {
            Activation::Relu => relu(x),
            Activation::Tanh => x.map(f64::tanh),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x.clone(),
        }
    }

    /// Gradient through the activation, expressed in terms of its output.
    pub fn backward(self, output: &Tensor, upstream: &Tensor) -> Tensor {
        match self {
            Activation::Relu => relu_backward(output, upstream),
            Activation::Tanh => zip_map(output, upstream, |y, g| g * (1.0 - y * y)),
            Activation::Sigmoid => sigmoid_backward(output, upstream),
            Activation::Identity => upstream.clone(),
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape());
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    zip_map(output, upstream, |y, g| if y > 0.0 { g } else { 0.0 })
}

#[inline]
pub fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn sigmoid_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    zip_map(output, upstream, |y, g| g * y * (1.0 - y))
}

/// Channel-wise maximum over rows. Ties go to the lowest row.
pub fn scatter_max(x: &Tensor) -> (Tensor, Vec<usize>) {
    assert!(x.rows() >= 1, "scatter_max over zero rows");
    let d = x.cols();
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; d];
    for r in 1..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            if v > best[c] {
                best[c] = v;
                arg[c] = r;
            }
        }
    }
    (Tensor::row_vector(best), arg)
}

/// Routes each channel's gradient to its argmax row.
pub fn scatter_max_backward(argmax: &[usize], rows: usize, upstream: &Tensor) -> Tensor {
    let d = argmax.len();
    let mut out = Tensor::zeros(rows, d);
    for (c, &r) in argmax.iter().enumerate() {
        out.set(r, c, upstream.get(0, c));
    }
    out
}

pub const NORM_EPS: f64 = 1e-12;

/// `v / max(|v|, eps)` for a `1 x d` row; returns the output and the divisor.
pub fn l2_normalize(v: &Tensor) -> (Tensor, f64) {
    let norm = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let s = norm.max(NORM_EPS);
    (v.map(|x| x / s), s)
}

pub fn l2_normalize_backward(output: &Tensor, divisor: f64, upstream: &Tensor) -> Tensor {
    let clamped = divisor <= NORM_EPS;
    let dot: f64 = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(y, g)| y * g)
        .sum();
    zip_map(output, upstream, |y, g| {
        if clamped {
            g / divisor
        } else {
            (g - y * dot) / divisor
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{PatchGraph, Radius};
    use crate::nn::gradcheck::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_prop(rng: &mut ChaCha8Rng, n: usize) -> Propagation {
        let nodes: Vec<[f64; 6]> = (0..n)
            .map(|_| [rng.random(), rng.random(), rng.random(), 0.0, 0.0, 1.0])
            .collect();
        PatchGraph::build(nodes, Radius::Fixed(0.8)).unwrap().propagation()
    }

    #[test]
    fn zero_hops_is_dense_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TagConvParams::new(&mut rng, 4, 3, 0);
        let x = random_tensor(&mut rng, 5, 4);
        let prop = random_prop(&mut rng, 5);
        let (y, _) = tag_conv_forward(&p, &x, &prop).unwrap();
        let dense = DenseParams { weight: p.theta[0].clone(), bias: p.bias.clone() };
        assert!(y.max_abs_diff(&fc_forward(&dense, &x).unwrap()) < 1e-15);
    }

    #[test]
    fn zero_propagation_keeps_only_identity_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = TagConvParams::new(&mut rng, 3, 2, 3);
        p.bias = random_tensor(&mut rng, 1, 2);
        let x = random_tensor(&mut rng, 6, 3);
        let (y, _) = tag_conv_forward(&p, &x, &Propagation::empty(6)).unwrap();
        let mut want = x.matmul(&p.theta[0]);
        want.add_row_broadcast(&p.bias);
        assert_eq!(y, want);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TagConvParams::new(&mut rng, 3, 2, 1);
        let x = random_tensor(&mut rng, 4, 5);
        assert!(tag_conv_forward(&p, &x, &Propagation::empty(4)).is_err());
        let x = random_tensor(&mut rng, 4, 3);
        assert!(tag_conv_forward(&p, &x, &Propagation::empty(5)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = TagConvParams::new(&mut rng, 3, 2, 2);
        let x = random_tensor(&mut rng, 6, 3);
        let prop = random_prop(&mut rng, 6);
        let (y, cache) = tag_conv_forward(&p, &x, &prop).unwrap();
        let (dx, g) = tag_conv_backward(&p, &prop, &cache, &y.zeros_like());
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(g.theta.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn tag_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = TagConvParams::new(&mut rng, 3, 4, 2);
            let x = random_tensor(&mut rng, 6, 3);
            let prop = random_prop(&mut rng, 6);
            let w = random_tensor(&mut rng, 6, 4);
            let loss = |p: &TagConvParams, x: &Tensor| -> f64 {
                let (y, _) = tag_conv_forward(p, x, &prop).unwrap();
                y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
            };
            let (_, cache) = tag_conv_forward(&p, &x, &prop).unwrap();
            let (dx, g) = tag_conv_backward(&p, &prop, &cache, &w);
            for i in 0..x.len() {
                let num = central_difference(|h| {
                    let mut xx = x.clone();
                    xx.data_mut()[i] += h;
                    loss(&p, &xx)
                });
                assert!(relative_error(dx.data()[i], num) < 1e-4);
            }
            for k in 0..3 {
                for i in 0..p.theta[k].len() {
                    let num = central_difference(|h| {
                        let mut pp = p.clone();
                        pp.theta[k].data_mut()[i] += h;
                        loss(&pp, &x)
                    });
                    assert!(relative_error(g.theta[k].data()[i], num) < 1e-4);
                }
            }
        }
    }

    #[test]
    fn scatter_max_single_row_and_permutation() {
        let x = Tensor::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let (m, a) = scatter_max(&x);
        assert_eq!(m.data(), x.data());
        assert_eq!(a, vec![0, 0, 0]);

        let x = Tensor::from_vec(3, 2, vec![1.0, 5.0, 3.0, 2.0, -1.0, 7.0]).unwrap();
        let y = Tensor::from_vec(3, 2, vec![-1.0, 7.0, 1.0, 5.0, 3.0, 2.0]).unwrap();
        assert_eq!(scatter_max(&x).0, scatter_max(&y).0);
    }

    #[test]
    fn scatter_max_ignores_non_argmax_perturbation() {
        let x = Tensor::from_vec(3, 2, vec![1.0, 5.0, 3.0, 2.0, -1.0, 7.0]).unwrap();
        let (m0, _) = scatter_max(&x);
        let mut y = x.clone();
        y.set(0, 0, 1.5); // gap to the max is 1.5
        assert_eq!(scatter_max(&y).0, m0);
        let (_, arg) = scatter_max(&x);
        let g = scatter_max_backward(&arg, 3, &Tensor::row_vector(vec![1.0, 1.0]));
        assert_eq!(g.get(0, 0), 0.0);
        assert_eq!(g.get(1, 0), 1.0);
        assert_eq!(g.get(2, 1), 1.0);
    }

    #[test]
    fn l2_normalize_unit_output() {
        let v = Tensor::row_vector(vec![3.0, 4.0, 0.0]);
        let (y, s) = l2_normalize(&v);
        assert_eq!(s, 5.0);
        assert!((y.data().iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-15);
        let (z, _) = l2_normalize(&Tensor::row_vector(vec![0.0, 0.0]));
        assert!(z.is_finite());
    }

    #[test]
    fn relu_zeroes_negative_side() {
        let x = Tensor::row_vector(vec![-2.0, 3.0]);
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 3.0]);
        let g = relu_backward(&y, &Tensor::row_vector(vec![1.0, 1.0]));
        assert_eq!(g.data(), &[0.0, 1.0]);
    }
}
