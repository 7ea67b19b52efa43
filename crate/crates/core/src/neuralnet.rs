//! Dense feed-forward layers, Adam, and a central-difference gradient checker.
//!
//! Weights are row-major with shape `(output_dim, input_dim)`. Flat parameter
//! vectors list each layer's weights followed by its bias, layer by layer.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
    /// Row-major `(output_dim, input_dim)`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGradients<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        DenseLayer {
            input_dim,
            output_dim,
            activation,
            weights: vec![T::zero(); input_dim * output_dim],
            bias: vec![T::zero(); output_dim],
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let mut layer = Self::zeros(input_dim, output_dim, activation);
        for w in &mut layer.weights {
            *w = T::lit(rng.random_range(-limit..limit));
        }
        layer
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Affine map only, written into `out`.
    pub fn affine_into(&self, input: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.weights.chunks(self.input_dim).zip(&self.bias).map(|(row, &b)| {
            row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x)
        }));
    }

    /// Returns `(pre_activation, output)`.
    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if input.len() != self.input_dim {
            return Err(Error::shape("dense layer input", self.input_dim, input.len()));
        }
        let mut pre = Vec::with_capacity(self.output_dim);
        self.affine_into(input, &mut pre);
        let out = pre.iter().map(|&z| self.activation.apply(z)).collect();
        Ok((pre, out))
    }

    /// Backward pass given the gradient on the pre-activation. Accumulates
    /// into `grads` and returns the gradient on the input.
    pub fn backward_affine(&self, input: &[T], grad_pre: &[T], grads: &mut DenseGradients<T>) -> Vec<T> {
        let mut grad_in = vec![T::zero(); self.input_dim];
        for (o, &g) in grad_pre.iter().enumerate() {
            if g == T::zero() {
                continue;
            }
            grads.bias[o] = grads.bias[o] + g;
            let row = o * self.input_dim;
            for (i, &x) in input.iter().enumerate() {
                grads.weights[row + i] = grads.weights[row + i] + g * x;
                grad_in[i] = grad_in[i] + g * self.weights[row + i];
            }
        }
        grad_in
    }

    pub fn zero_gradients(&self) -> DenseGradients<T> {
        DenseGradients {
            weights: vec![T::zero(); self.weights.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }

    /// Reads this layer's parameters from the front of `src`, returning the
    /// remainder.
    pub fn read_params<'a>(&mut self, src: &'a [T]) -> &'a [T] {
        let (w, rest) = src.split_at(self.weights.len());
        let (b, rest) = rest.split_at(self.bias.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        rest
    }
}

impl<T: Scalar> DenseGradients<T> {
    pub fn write_flat(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork<T> {
    pub layers: Vec<DenseLayer<T>>,
}

/// Activations recorded by [`DenseNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `inputs[k]` is the input of layer `k`.
    pub inputs: Vec<Vec<T>>,
    pub pre: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Scalar> DenseNetwork<T> {
    /// Hidden layers use `hidden_activation`; the final layer uses
    /// `output_activation`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::ParameterDomain("layer widths must be positive".into()));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 2 == dims.len() {
                    output_activation
                } else {
                    hidden_activation
                };
                DenseLayer::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Ok(DenseNetwork { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].output_dim != w[1].input_dim {
                return Err(Error::shape("chained layer widths", w[0].output_dim, w[1].input_dim));
            }
        }
        if layers.is_empty() {
            return Err(Error::ParameterDomain("network needs at least one layer".into()));
        }
        Ok(DenseNetwork { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward(&self, input: &[T]) -> Result<ForwardCache<T>> {
        if input.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), input.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for layer in &self.layers {
            let (z, y) = layer.forward(&x)?;
            inputs.push(x);
            pre.push(z);
            x = y;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: x,
        })
    }

    /// Returns per-layer gradients and the gradient on the input.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &[T]) -> Result<(Vec<DenseGradients<T>>, Vec<T>)> {
        if grad_out.len() != self.output_dim() {
            return Err(Error::shape("network output gradient", self.output_dim(), grad_out.len()));
        }
        if cache.pre.len() != self.layers.len() {
            return Err(Error::shape("forward cache", self.layers.len(), cache.pre.len()));
        }
        let mut grads: Vec<DenseGradients<T>> =
            self.layers.iter().map(DenseLayer::zero_gradients).collect();
        let mut g = grad_out.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let out_k = if k + 1 == self.layers.len() {
                &cache.output
            } else {
                &cache.inputs[k + 1]
            };
            let grad_pre: Vec<T> = g
                .iter()
                .zip(&cache.pre[k])
                .zip(out_k)
                .map(|((&g, &z), &y)| g * layer.activation.derivative(z, y))
                .collect();
            g = layer.backward_affine(&cache.inputs[k], &grad_pre, &mut grads[k]);
        }
        Ok((grads, g))
    }

    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, src: &[T]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(Error::shape("network parameters", self.param_count(), src.len()));
        }
        let mut rest = src;
        for l in &mut self.layers {
            rest = l.read_params(rest);
        }
        Ok(())
    }
}

pub fn flatten_gradients<T: Scalar>(grads: &[DenseGradients<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for g in grads {
        g.write_flat(&mut out);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        AdamState {
            config,
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Leaves everything untouched if any
/// gradient entry is non-finite.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("adam gradients", params.len(), grads.len()));
    }
    if state.m.len() != params.len() {
        return Err(Error::shape("adam moments", params.len(), state.m.len()));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let lr = T::lit(c.learning_rate);
    let eps = T::lit(c.epsilon);
    let t = i32::try_from(state.step).unwrap_or(i32::MAX);
    let correction1 = T::one() - b1.powi(t);
    let correction2 = T::one() - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates checked; a random subset is drawn when there are more.
    pub max_coordinates: usize,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero (or nearly so) on both sides compare as absolute differences.
    pub floor: f64,
    /// Multiple of the cancellation bound `eps * (|f+| + |f-|) / 2h` that
    /// is forgiven before the excess error is measured.
    pub roundoff_allowance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            max_coordinates: 200,
            floor: 1e-8,
            roundoff_allowance: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
    /// Worst relative error left after subtracting the roundoff allowance.
    pub worst_excess_error: f64,
}

impl GradCheckReport {
    /// Keeps whichever of the two reports has the larger error.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let excess = if self.worst_excess_error.is_nan() || other.worst_excess_error.is_nan() {
            f64::NAN
        } else {
            self.worst_excess_error.max(other.worst_excess_error)
        };
        let mut worst = if other.worst_relative_error > self.worst_relative_error {
            other
        } else {
            self
        };
        worst.checked = checked;
        worst.worst_excess_error = excess;
        worst
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn finite_diff_check<T, F, R>(
    mut loss: F,
    params: &[T],
    analytic: &[T],
    options: GradCheckOptions,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[T]) -> T,
    R: Rng + ?Sized,
{
    if !(options.step > 0.0) {
        return Err(Error::ParameterDomain(format!(
            "finite-difference step must be positive, got {}",
            options.step
        )));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape("analytic gradient", params.len(), analytic.len()));
    }
    let coords: Vec<usize> = if params.len() <= options.max_coordinates {
        (0..params.len()).collect()
    } else {
        let mut c = index::sample(rng, params.len(), options.max_coordinates).into_vec();
        c.sort_unstable();
        c
    };

    let h = T::lit(options.step);
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        checked: coords.len(),
        worst_relative_error: 0.0,
        worst_coordinate: coords.first().copied().unwrap_or(0),
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
        worst_excess_error: 0.0,
    };
    for &i in &coords {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = loss(&probe);
        probe[i] = orig - h;
        let down = loss(&probe);
        probe[i] = orig;
        let numeric = ((up - down) / (h + h)).as_f64();
        let a = analytic[i].as_f64();
        let err = relative_error(a, numeric, options.floor);
        let roundoff = options.roundoff_allowance * T::epsilon().as_f64() * (up.abs() + down.abs()).as_f64()
            / (2.0 * options.step);
        let excess = ((a - numeric).abs() - roundoff).max(0.0) / a.abs().max(numeric.abs()).max(options.floor);
        if excess > report.worst_excess_error || excess.is_nan() {
            report.worst_excess_error = excess;
        }
        if err > report.worst_relative_error || err.is_nan() {
            report.worst_relative_error = err;
            report.worst_coordinate = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    Ok(report)
}
