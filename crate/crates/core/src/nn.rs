//! Dense rectifier networks with hand-written backpropagation and Adam.
//!
//! Each layer stores its weights row-major as `[n_in][n_out]`, so every
//! pass is a sequence of axpy updates over contiguous rows. Hidden layers
//! use ReLU, the output layer is linear.

use std::fmt::Debug;
use std::io::{Read, Write};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Floating-point type a network can be instantiated with.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq)]
struct Dense<T> {
    n_in: usize,
    n_out: usize,
    weights: Vec<T>,
    biases: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![T::zero(); n_in * n_out],
            biases: vec![T::zero(); n_out],
        }
    }
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `out += x * w` for one input row `x` and a `[x.len()][out.len()]` matrix,
/// skipping zero inputs. Rectified activations are mostly zero, so the skip
/// roughly halves the work.
#[inline]
fn accumulate_row<T: Scalar>(out: &mut [T], x: &[T], w: &[T]) {
    let n = out.len();
    for (&xi, w_row) in x.iter().zip(w.chunks_exact(n)) {
        if xi != T::zero() {
            axpy(out, xi, w_row);
        }
    }
}

fn transpose<T: Scalar>(rows: usize, cols: usize, src: &[T], dst: &mut Vec<T>) {
    dst.clear();
    dst.resize(rows * cols, T::zero());
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
}

/// Number of trainable parameters of a dense net with the given layer sizes.
pub fn parameter_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "a network needs at least 2 layer sizes, got {}",
            layer_sizes.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    Ok(())
}

/// Multi-layer perceptron mapping an observation to one value per action.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork<T> {
    layer_sizes: Vec<usize>,
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> QNetwork<T> {
    /// Network with every weight and bias set to zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers: layer_sizes
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
        })
    }

    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes)?;
        for layer in &mut net.layers {
            let bound = (6.0 / layer.n_in as f64).sqrt();
            for w in &mut layer.weights {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(&self.layer_sizes)
    }

    /// Weight `(i, o)` of layer `layer`, connecting input unit `i` to output unit `o`.
    pub fn weight(&self, layer: usize, i: usize, o: usize) -> T {
        let l = &self.layers[layer];
        l.weights[i * l.n_out + o]
    }

    pub fn set_weight(&mut self, layer: usize, i: usize, o: usize, value: T) {
        let l = &mut self.layers[layer];
        l.weights[i * l.n_out + o] = value;
    }

    pub fn bias(&self, layer: usize, o: usize) -> T {
        self.layers[layer].biases[o]
    }

    pub fn set_bias(&mut self, layer: usize, o: usize, value: T) {
        self.layers[layer].biases[o] = value;
    }

    /// All parameters, layer by layer: weights (row-major `[n_in][n_out]`) then biases.
    pub fn flat_parameters(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn load_flat_parameters(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Overwrites this network's parameters with those of `src`.
    pub fn copy_from(&mut self, src: &QNetwork<T>) -> Result<()> {
        if self.layer_sizes != src.layer_sizes {
            return Err(Error::Shape(format!(
                "cannot copy {:?} into {:?}",
                src.layer_sizes, self.layer_sizes
            )));
        }
        for (dst, s) in self.layers.iter_mut().zip(&src.layers) {
            dst.weights.copy_from_slice(&s.weights);
            dst.biases.copy_from_slice(&s.biases);
        }
        Ok(())
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut act = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut out = layer.biases.clone();
            accumulate_row(&mut out, &act, &layer.weights);
            if li != last {
                relu(&mut out);
            }
            act = out;
        }
        Ok(act)
    }

    /// Forward pass over `batch` row-major inputs. Keeps every layer's
    /// activations in `scratch` and returns the output rows.
    pub fn forward_batch<'s>(
        &self,
        inputs: &[T],
        batch: usize,
        scratch: &'s mut Activations<T>,
    ) -> Result<&'s [T]> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::Shape(format!(
                "batch of {batch} needs {} inputs, got {}",
                batch * self.input_dim(),
                inputs.len()
            )));
        }
        scratch.resize(&self.layer_sizes, batch);
        scratch.layers[0].copy_from_slice(inputs);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (prev, next) = scratch.layers.split_at_mut(li + 1);
            let output = &mut next[0];
            for (row, x) in output
                .chunks_exact_mut(layer.n_out)
                .zip(prev[li].chunks_exact(layer.n_in))
            {
                row.copy_from_slice(&layer.biases);
                accumulate_row(row, x, &layer.weights);
            }
            if li != last {
                relu(output);
            }
        }
        Ok(&scratch.layers[last + 1])
    }

    /// Mean squared TD error `mean_b (Q(s_b, a_b) - y_b)^2`, forward only.
    pub fn td_loss(&self, inputs: &[T], actions: &[usize], targets: &[T]) -> Result<T> {
        let batch = check_batch(self, inputs, actions, targets)?;
        let mut scratch = Activations::default();
        let q = self.forward_batch(inputs, batch, &mut scratch)?;
        let n_out = self.output_dim();
        let mut loss = T::zero();
        for b in 0..batch {
            let r = q[b * n_out + actions[b]] - targets[b];
            loss += r * r;
        }
        Ok(loss / T::of(batch as f64))
    }

    /// Loss and parameter gradients of the mean squared TD error. Only the
    /// output unit of the taken action receives error.
    pub fn backward_td(
        &self,
        inputs: &[T],
        actions: &[usize],
        targets: &[T],
        scratch: &mut Activations<T>,
        grads: &mut Gradients<T>,
    ) -> Result<T> {
        let batch = check_batch(self, inputs, actions, targets)?;
        grads.reset(self);
        self.forward_batch(inputs, batch, scratch)?;
        let n_layers = self.layers.len();
        let n_out = self.output_dim();
        let scale = T::of(2.0 / batch as f64);

        let mut loss = T::zero();
        let mut delta = vec![T::zero(); batch * n_out];
        {
            let q = &scratch.layers[n_layers];
            for b in 0..batch {
                let r = q[b * n_out + actions[b]] - targets[b];
                loss += r * r;
                delta[b * n_out + actions[b]] = scale * r;
            }
        }
        loss = loss / T::of(batch as f64);

        let mut next_delta = Vec::new();
        let mut transposed = Vec::new();
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            let input = &scratch.layers[li];
            let g = &mut grads.layers[li];
            for d in delta.chunks_exact(layer.n_out) {
                axpy(&mut g.biases, T::one(), d);
            }
            for (x, d) in input
                .chunks_exact(layer.n_in)
                .zip(delta.chunks_exact(layer.n_out))
            {
                for (&xi, g_row) in x.iter().zip(g.weights.chunks_exact_mut(layer.n_out)) {
                    if xi != T::zero() {
                        axpy(g_row, xi, d);
                    }
                }
            }
            if li == 0 {
                break;
            }
            // dX = Δ Wᵀ, then masked where the unit was clipped
            transpose(layer.n_in, layer.n_out, &layer.weights, &mut transposed);
            next_delta.clear();
            next_delta.resize(batch * layer.n_in, T::zero());
            for (nd, d) in next_delta
                .chunks_exact_mut(layer.n_in)
                .zip(delta.chunks_exact(layer.n_out))
            {
                accumulate_row(nd, d, &transposed);
            }
            for (nd, x) in next_delta.iter_mut().zip(input.iter()) {
                if *x <= T::zero() {
                    *nd = T::zero();
                }
            }
            std::mem::swap(&mut delta, &mut next_delta);
        }
        Ok(loss)
    }

    /// Writes the layer sizes and parameters as little-endian 64-bit values:
    /// `u64` layer count, one `u64` per layer size, then every parameter as
    /// `f64` in [`flat_parameters`](Self::flat_parameters) order.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.layer_sizes.len() as u64).to_le_bytes())?;
        for &s in &self.layer_sizes {
            w.write_all(&(s as u64).to_le_bytes())?;
        }
        for p in self.flat_parameters() {
            let v = p.to_f64().unwrap_or(f64::NAN);
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word)
                .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
            Ok(u64::from_le_bytes(word))
        };
        let n_layers = next_u64(&mut r)? as usize;
        if !(2..=64).contains(&n_layers) {
            return Err(Error::Checkpoint(format!("implausible layer count {n_layers}")));
        }
        let mut sizes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            sizes.push(next_u64(&mut r)? as usize);
        }
        let mut net = Self::zeros(&sizes)?;
        let mut bytes = vec![0u8; net.parameter_count() * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated parameters: {e}")))?;
        let params: Vec<T> = bytes
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        net.load_flat_parameters(&params)?;
        Ok(net)
    }
}

fn check_batch<T: Scalar>(
    net: &QNetwork<T>,
    inputs: &[T],
    actions: &[usize],
    targets: &[T],
) -> Result<usize> {
    let batch = actions.len();
    if targets.len() != batch || inputs.len() != batch * net.input_dim() {
        return Err(Error::Shape(format!(
            "batch mismatch: {} inputs, {} actions, {} targets for input width {}",
            inputs.len(),
            batch,
            targets.len(),
            net.input_dim()
        )));
    }
    if let Some(&a) = actions.iter().find(|&&a| a >= net.output_dim()) {
        return Err(Error::Shape(format!(
            "action {a} out of range for {} outputs",
            net.output_dim()
        )));
    }
    Ok(batch)
}

#[inline]
fn relu<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Per-layer activations of a batched forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Activations<T> {
    layers: Vec<Vec<T>>,
}

impl<T: Scalar> Activations<T> {
    fn resize(&mut self, sizes: &[usize], batch: usize) {
        self.layers.resize(sizes.len(), Vec::new());
        for (buf, &n) in self.layers.iter_mut().zip(sizes) {
            buf.resize(n * batch, T::zero());
        }
    }
}

/// Gradients with the same shapes as a network's parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients<T> {
    layers: Vec<Dense<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &QNetwork<T>) -> Self {
        let mut g = Self::default();
        g.reset(net);
        g
    }

    fn reset(&mut self, net: &QNetwork<T>) {
        let same = self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.n_in == l.n_in && g.n_out == l.n_out);
        if same {
            for g in &mut self.layers {
                g.weights.iter_mut().for_each(|w| *w = T::zero());
                g.biases.iter_mut().for_each(|b| *b = T::zero());
            }
        } else {
            self.layers = net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.n_in, l.n_out))
                .collect();
        }
    }

    /// Same ordering as [`QNetwork::flat_parameters`].
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn from_flat(net: &QNetwork<T>, values: &[T]) -> Result<Self> {
        let mut proxy = QNetwork::zeros(net.layer_sizes())?;
        proxy.load_flat_parameters(values)?;
        Ok(Self {
            layers: proxy.layers,
        })
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Dense<T>>,
    second_moment: Vec<Dense<T>>,
}

impl<T: Scalar> Adam<T> {
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(net: &QNetwork<T>, learning_rate: f64) -> Self {
        let zeros: Vec<Dense<T>> = net
            .layers
            .iter()
            .map(|l| Dense::zeros(l.n_in, l.n_out))
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam step on `net`.
    pub fn update(&mut self, net: &mut QNetwork<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.layers.len() != net.layers.len() || self.first_moment.len() != net.layers.len() {
            return Err(Error::Shape("optimizer/gradient/network layer mismatch".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one_m_b1 = T::of(1.0 - self.beta1);
        let one_m_b2 = T::of(1.0 - self.beta2);
        let corr1 = T::of(1.0 / (1.0 - self.beta1.powi(t)));
        let corr2 = T::of(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = T::of(self.learning_rate);
        let eps = T::of(self.epsilon);

        let apply = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
            for k in 0..p.len() {
                let gk = g[k];
                m[k] = b1 * m[k] + one_m_b1 * gk;
                v[k] = b2 * v[k] + one_m_b2 * gk * gk;
                let m_hat = m[k] * corr1;
                let v_hat = v[k] * corr2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let g = &grads.layers[li];
            let m = &mut self.first_moment[li];
            let v = &mut self.second_moment[li];
            if g.weights.len() != layer.weights.len() || m.weights.len() != layer.weights.len() {
                return Err(Error::Shape(format!("layer {li} shape mismatch")));
            }
            apply(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
            apply(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
        }
        Ok(())
    }
}

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub trials: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
}

/// Compares backpropagated TD-loss gradients with central differences of
/// [`QNetwork::td_loss`] on random double-precision nets of at most
/// 10 inputs, hidden layers of at most 8 units and 4 outputs.
///
/// The relative error of one parameter is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(trials: usize, step: f64, seed: u64) -> Result<GradientCheck> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..trials {
        let mut sizes = vec![rng.gen_range(1..=10)];
        for _ in 0..rng.gen_range(1..=2) {
            sizes.push(rng.gen_range(1..=8));
        }
        sizes.push(4);
        let mut net = QNetwork::<f64>::new(&sizes, &mut rng)?;
        for l in 0..sizes.len() - 1 {
            for o in 0..sizes[l + 1] {
                net.set_bias(l, o, rng.gen_range(-0.5..0.5));
            }
        }
        let batch = rng.gen_range(1..=6);
        let inputs: Vec<f64> = (0..batch * sizes[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..4)).collect();
        let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-3.0..3.0)).collect();

        let mut scratch = Activations::default();
        let mut grads = Gradients::zeros_like(&net);
        net.backward_td(&inputs, &actions, &targets, &mut scratch, &mut grads)?;
        let analytic = grads.flat();

        let base = net.flat_parameters();
        let mut probe = net.clone();
        let mut params = base.clone();
        for (k, &a) in analytic.iter().enumerate() {
            params[k] = base[k] + step;
            probe.load_flat_parameters(&params)?;
            let up = probe.td_loss(&inputs, &actions, &targets)?;
            params[k] = base[k] - step;
            probe.load_flat_parameters(&params)?;
            let down = probe.td_loss(&inputs, &actions, &targets)?;
            params[k] = base[k];
            let numeric = (up - down) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(err);
            checked += 1;
        }
    }
    Ok(GradientCheck {
        trials,
        parameters_checked: checked,
        max_relative_error: worst,
    })
}
