//! Fully connected networks with ELU hidden activations and hand-written
//! backpropagation.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Floating-point types the networks run in: `f32` for training, `f64` for
/// gradient checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ScalarOperand
    + ndarray::LinalgScalar
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Weights are stored `inputs x outputs`, so a batch `X` maps to `X W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Layer<F>>,
}

/// Layer inputs recorded during a forward pass.
pub struct Cache<F> {
    inputs: Vec<Array2<F>>,
}

#[inline]
fn elu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x.exp_m1()
    }
}

/// ELU derivative written in terms of the activation value.
#[inline]
fn elu_grad_from_output<F: Scalar>(a: F) -> F {
    if a > F::zero() {
        F::one()
    } else {
        a + F::one()
    }
}

impl<F: Scalar> Mlp<F> {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs input and output sizes");
        let layers =
            sizes.windows(2).map(|p| Layer { w: Array2::zeros((p[0], p[1])), b: Array1::zeros(p[1]) }).collect();
        Self { layers }
    }

    /// Uniform fan-in initialization; the output layer is scaled by `out_gain`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let gain = if i == last { out_gain } else { 3f64.sqrt() };
            let bound = gain / (layer.inputs() as f64).sqrt();
            layer.w.mapv_inplace(|_| F::of(rng.random_range(-bound..=bound)));
        }
        net
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Layer::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn affine(layer: &Layer<F>, x: &ArrayView2<F>) -> Array2<F> {
        let mut y = Array2::from_shape_fn((x.nrows(), layer.outputs()), |(_, j)| layer.b[j]);
        general_mat_mul(F::one(), x, &layer.w, F::one(), &mut y);
        y
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", self.input_dim(), x.ncols())));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let mut h = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(elu);
            h = Self::affine(layer, &h.view());
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Cache<F>)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut h = Self::affine(&self.layers[0], &x);
        for layer in &self.layers[1..] {
            h.mapv_inplace(elu);
            let next = Self::affine(layer, &h.view());
            inputs.push(h);
            h = next;
        }
        Ok((h, Cache { inputs }))
    }

    /// Accumulates parameter gradients into `grads` (laid out as in
    /// [`Mlp::write_params`]) and optionally returns the input gradient.
    pub fn backward(
        &self,
        cache: &Cache<F>,
        grad_out: Array2<F>,
        grads: &mut [F],
        input_grad: bool,
    ) -> Option<Array2<F>> {
        assert_eq!(grads.len(), self.param_count());
        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let o = *acc;
                *acc += l.param_count();
                Some(o)
            })
            .collect();
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let (n_in, n_out) = (layer.inputs(), layer.outputs());
            let slot = &mut grads[offsets[i]..offsets[i] + layer.param_count()];
            let (gw, gb) = slot.split_at_mut(n_in * n_out);
            let mut gw = ArrayViewMut2::from_shape((n_in, n_out), gw).expect("weight gradient shape");
            general_mat_mul(F::one(), &x.t(), &g, F::one(), &mut gw);
            for (acc, s) in gb.iter_mut().zip(g.sum_axis(Axis(0))) {
                *acc += s;
            }
            if i == 0 && !input_grad {
                return None;
            }
            let mut gx = g.dot(&layer.w.t());
            if i > 0 {
                gx.zip_mut_with(x, |d, &a| *d *= elu_grad_from_output(a));
            }
            g = gx;
        }
        Some(g)
    }

    /// Appends parameters: per layer, weights row-major then biases.
    pub fn write_params(&self, out: &mut Vec<F>) {
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
    }

    /// Reads parameters in [`Mlp::write_params`] order; returns the count consumed.
    pub fn read_params(&mut self, src: &[F]) -> usize {
        let mut k = 0;
        for l in &mut self.layers {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = src[k];
                k += 1;
            }
        }
        k
    }

    pub fn cast<G: Scalar>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { w: l.w.mapv(|v| G::of(v.as_f64())), b: l.b.mapv(|v| G::of(v.as_f64())) })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn hand_evaluated_two_layer_net() {
        let mut net = Mlp::<f64>::zeros(&[2, 2, 1]);
        net.layers[0].w = array![[1.0, -1.0], [0.5, 2.0]];
        net.layers[0].b = array![0.0, -1.0];
        net.layers[1].w = array![[2.0], [3.0]];
        net.layers[1].b = array![0.25];
        let y = net.forward(array![[1.0, 0.5]].view()).unwrap();
        // hidden pre-activations: 1.25 and -1.0
        let expected = 0.25 + 2.0 * 1.25 + 3.0 * (-1.0f64).exp_m1();
        assert!((y[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn param_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mlp::<f32>::random(&[5, 4, 3], 1.0, &mut rng);
        let mut flat = Vec::new();
        a.write_params(&mut flat);
        assert_eq!(flat.len(), a.param_count());
        let mut b = Mlp::<f32>::zeros(&[5, 4, 3]);
        assert_eq!(b.read_params(&flat), flat.len());
        assert_eq!(a, b);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::<f64>::random(&[3, 4, 2], 1.0, &mut rng);
        let x = array![[0.3, -0.7, 1.1], [-0.2, 0.4, -0.9]];
        // loss = sum(y * c)
        let c = array![[1.0, -2.0], [0.5, 0.25]];
        let (_, cache) = net.forward_cached(x.view()).unwrap();
        let mut g = vec![0.0; net.param_count()];
        let gx = net.backward(&cache, c.clone(), &mut g, true).unwrap();
        let loss = |n: &Mlp<f64>, x: &Array2<f64>| (n.forward(x.view()).unwrap() * &c).sum();
        let mut p = Vec::new();
        net.write_params(&mut p);
        let h = 1e-6;
        for k in 0..p.len() {
            let mut n2 = net.clone();
            let mut q = p.clone();
            q[k] += h;
            n2.read_params(&q);
            let up = loss(&n2, &x);
            q[k] -= 2.0 * h;
            n2.read_params(&q);
            let down = loss(&n2, &x);
            assert!(((up - down) / (2.0 * h) - g[k]).abs() < 1e-7, "param {k}");
        }
        let mut x2 = x.clone();
        x2[[1, 2]] += h;
        let up = loss(&net, &x2);
        x2[[1, 2]] -= 2.0 * h;
        let down = loss(&net, &x2);
        assert!(((up - down) / (2.0 * h) - gx[[1, 2]]).abs() < 1e-7);
    }
}
