//! Dense feed-forward networks with hand-rolled reverse-mode differentiation.
//!
//! `forward` records the per-layer activations on a `Tape`; `backward` walks it
//! to produce the gradient of a scalar loss with respect to every parameter
//! (as a `FlatParams` vector) and with respect to the input. Gradients are
//! checked against central finite differences in the tests.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value `a`.
    /// For relu, a > 0 iff z > 0 (the subgradient at 0 is taken as 0).
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Data(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// output x input, row-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn spec(&self) -> LayerSpec {
        LayerSpec {
            input: self.weight.cols(),
            output: self.weight.rows(),
            activation: self.activation,
        }
    }
}

/// Flattened parameter vector: for each layer, weights row-major then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl FlatParams {
    pub fn zeros(n: usize) -> Self {
        FlatParams(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|&x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for x in &mut self.0 {
            *x *= s;
        }
    }

    /// self += other.
    pub fn add_assign(&mut self, other: &FlatParams) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "cannot add parameter vectors of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &FlatParams) -> Result<FlatParams> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "cannot subtract parameter vectors of lengths {} and {}",
                self.len(),
                other.len()
            )));
        }
        Ok(FlatParams(
            self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect(),
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn bits(&self) -> Vec<u64> {
        self.0.iter().map(|x| x.to_bits()).collect()
    }
}

/// Recorded activations from one forward pass: activations[0] is the input,
/// activations[i] the output of layer i-1.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("tape is never empty")
    }
}

#[derive(Debug, Clone)]
pub struct Backprop {
    pub param_grad: FlatParams,
    pub input_grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Glorot-uniform weight initialization, biases zero. Weights are drawn
    /// layer by layer in row-major order, so the consumed RNG sequence is part
    /// of the reproducibility contract.
    pub fn init(specs: &[LayerSpec], rng: &mut RngStream) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        for (i, s) in specs.iter().enumerate() {
            if s.input == 0 || s.output == 0 {
                return Err(Error::Shape(format!(
                    "layer {i} has zero dimension ({}x{})",
                    s.output, s.input
                )));
            }
            if i + 1 < specs.len() && s.output != specs[i + 1].input {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    s.output,
                    i + 1,
                    specs[i + 1].input
                )));
            }
        }
        let layers = specs
            .iter()
            .map(|s| {
                let limit = (6.0 / (s.input + s.output) as f64).sqrt();
                let mut weight = Matrix::zeros(s.output, s.input);
                for r in 0..s.output {
                    for c in 0..s.input {
                        weight.set(r, c, (2.0 * rng.next_uniform() - 1.0) * limit);
                    }
                }
                Layer {
                    weight,
                    bias: vec![0.0; s.output],
                    activation: s.activation,
                }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(Layer::spec).collect();
        for (i, s) in specs.iter().enumerate() {
            if i + 1 < specs.len() && s.output != specs[i + 1].input {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    s.output,
                    i + 1,
                    specs[i + 1].input
                )));
            }
        }
        if layers.is_empty() {
            return Err(Error::Shape("a network needs at least one layer".into()));
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    /// Forward pass recording a tape for `backward`.
    pub fn forward(&self, input: &[f64]) -> Result<Tape> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "forward: input length {} but network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().expect("nonempty");
            let out: Vec<f64> = (0..layer.weight.rows())
                .map(|r| {
                    let z = layer
                        .weight
                        .row(r)
                        .iter()
                        .zip(x)
                        .map(|(&w, &v)| w * v)
                        .sum::<f64>()
                        + layer.bias[r];
                    layer.activation.apply(z)
                })
                .collect();
            activations.push(out);
        }
        Ok(Tape { activations })
    }

    /// Forward pass without a tape, for inference.
    pub fn output(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(input)?.activations.pop().expect("nonempty"))
    }

    /// Reverse pass. `output_grad` is dLoss/d(output); the tape must come from
    /// a `forward` call on this same network.
    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<Backprop> {
        if tape.activations.len() != self.layers.len() + 1 {
            return Err(Error::InvalidState(format!(
                "tape records {} activations but the network has {} layers",
                tape.activations.len(),
                self.layers.len()
            )));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if tape.activations[i].len() != layer.weight.cols()
                || tape.activations[i + 1].len() != layer.weight.rows()
            {
                return Err(Error::InvalidState(format!(
                    "tape does not match the network at layer {i}"
                )));
            }
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape(format!(
                "backward: output grad length {} but network outputs {}",
                output_grad.len(),
                self.output_dim()
            )));
        }

        let mut param_grad = FlatParams::zeros(self.param_count());
        // Offset of each layer's block inside the flat vector.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.weight.rows() * layer.weight.cols() + layer.bias.len();
        }

        let mut upstream = output_grad.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &tape.activations[i];
            let a_out = &tape.activations[i + 1];
            let rows = layer.weight.rows();
            let cols = layer.weight.cols();
            // dz = upstream (.) act'(z), expressed through a_out.
            let dz: Vec<f64> = upstream
                .iter()
                .zip(a_out)
                .map(|(&g, &a)| g * layer.activation.derivative_from_output(a))
                .collect();
            let block = &mut param_grad.0[offsets[i]..offsets[i] + rows * cols + rows];
            let (wblock, bblock) = block.split_at_mut(rows * cols);
            for r in 0..rows {
                let d = dz[r];
                if d != 0.0 {
                    for (w, &a) in wblock[r * cols..(r + 1) * cols].iter_mut().zip(a_in) {
                        *w = d * a;
                    }
                }
                bblock[r] = d;
            }
            // Propagate to the layer input: W^T dz.
            let mut next = vec![0.0; cols];
            for r in 0..rows {
                let d = dz[r];
                if d != 0.0 {
                    for (n, &w) in next.iter_mut().zip(layer.weight.row(r)) {
                        *n += w * d;
                    }
                }
            }
            upstream = next;
        }
        Ok(Backprop {
            param_grad,
            input_grad: upstream,
        })
    }

    /// Parameters flattened layer by layer (weights row-major, then bias).
    pub fn params(&self) -> FlatParams {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        FlatParams(out)
    }

    /// Adam update applied directly to the layer storage, walking parameters
    /// in flat-vector order. Bitwise identical to flattening, calling
    /// `adam_step_in_place`, and writing the result back, without the copies.
    pub fn adam_update(
        &mut self,
        grad: &FlatParams,
        state: &mut AdamState,
        lr: f64,
    ) -> Result<()> {
        if grad.len() != self.param_count() || state.dim() != self.param_count() {
            return Err(Error::Shape(format!(
                "adam_update: network has {} parameters, grad {}, state {}",
                self.param_count(),
                grad.len(),
                state.dim()
            )));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::invalid_parameter(
                "lr",
                format!("must be finite and nonnegative, got {lr}"),
            ));
        }
        state.step += 1;
        let b1 = state.beta1;
        let b2 = state.beta2;
        let corr1 = 1.0 - b1.powi(state.step as i32);
        let corr2 = 1.0 - b2.powi(state.step as i32);
        let eps = state.epsilon;
        let mut off = 0;
        for layer in &mut self.layers {
            let rows = layer.weight.rows();
            let cols = layer.weight.cols();
            for r in 0..rows {
                for (p, i) in layer
                    .weight
                    .row_mut(r)
                    .iter_mut()
                    .zip(off + r * cols..off + (r + 1) * cols)
                {
                    let g = grad.0[i];
                    let m = b1 * state.m[i] + (1.0 - b1) * g;
                    let v = b2 * state.v[i] + (1.0 - b2) * g * g;
                    state.m[i] = m;
                    state.v[i] = v;
                    *p -= lr * (m / corr1) / ((v / corr2).sqrt() + eps);
                }
            }
            off += rows * cols;
            for (p, i) in layer.bias.iter_mut().zip(off..off + rows) {
                let g = grad.0[i];
                let m = b1 * state.m[i] + (1.0 - b1) * g;
                let v = b2 * state.v[i] + (1.0 - b2) * g * g;
                state.m[i] = m;
                state.v[i] = v;
                *p -= lr * (m / corr1) / ((v / corr2).sqrt() + eps);
            }
            off += rows;
        }
        Ok(())
    }

    /// Inverse of `params`; the flat vector round-trips bitwise.
    pub fn set_params(&mut self, params: &FlatParams) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "set_params: vector length {} but network has {} parameters",
                params.len(),
                self.param_count()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let (rows, cols) = (layer.weight.rows(), layer.weight.cols());
            for r in 0..rows {
                layer
                    .weight
                    .row_mut(r)
                    .copy_from_slice(&params.0[off + r * cols..off + (r + 1) * cols]);
            }
            off += rows * cols;
            layer.bias.copy_from_slice(&params.0[off..off + rows]);
            off += rows;
        }
        Ok(())
    }
}

// ----------------------------------------------------------------------------
// Adam

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// First/second moment accumulators plus the step counter for bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// One Adam update, pure-functional form.
pub fn adam_step(
    params: &FlatParams,
    grad: &FlatParams,
    state: &AdamState,
    lr: f64,
) -> Result<(FlatParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    adam_step_in_place(&mut p, grad, &mut s, lr)?;
    Ok((p, s))
}

/// One Adam update, mutating form used by the training loops.
pub fn adam_step_in_place(
    params: &mut FlatParams,
    grad: &FlatParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grad.len() != params.len() || state.dim() != params.len() {
        return Err(Error::Shape(format!(
            "adam_step: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.dim()
        )));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::invalid_parameter(
            "lr",
            format!("must be finite and nonnegative, got {lr}"),
        ));
    }
    state.step += 1;
    let b1 = state.beta1;
    let b2 = state.beta2;
    let corr1 = 1.0 - b1.powi(state.step as i32);
    let corr2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grad.0[i];
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let m_hat = m / corr1;
        let v_hat = v / corr2;
        params.0[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

// ----------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> DenseNet {
        let mut rng = RngStream::new(seed, 0);
        DenseNet::init(
            &[
                LayerSpec {
                    input: 5,
                    output: 7,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    input: 7,
                    output: 4,
                    activation: Activation::Sigmoid,
                },
                LayerSpec {
                    input: 4,
                    output: 3,
                    activation: Activation::Identity,
                },
            ],
            &mut rng,
        )
        .unwrap()
    }

    /// Quadratic loss against a fixed target: L = 0.5 * ||y - t||^2.
    fn loss_and_grad(y: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
        let loss = y
            .iter()
            .zip(target)
            .map(|(&a, &b)| 0.5 * (a - b) * (a - b))
            .sum();
        let grad = y.iter().zip(target).map(|(&a, &b)| a - b).collect();
        (loss, grad)
    }

    #[test]
    fn flatten_roundtrip_is_bitwise() {
        let net = small_net(1);
        let p = net.params();
        let mut other = small_net(2);
        assert_ne!(other.params().bits(), p.bits());
        other.set_params(&p).unwrap();
        assert_eq!(other.params().bits(), p.bits());
        assert_eq!(p.len(), net.param_count());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = small_net(9);
        let b = small_net(9);
        assert_eq!(a.params().bits(), b.params().bits());
        for layer in a.layers() {
            let limit = (6.0 / (layer.weight.cols() + layer.weight.rows()) as f64).sqrt();
            assert!(layer.weight.as_slice().iter().all(|w| w.abs() <= limit));
            assert!(layer.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_rejects_bad_specs() {
        let mut rng = RngStream::new(0, 0);
        assert!(DenseNet::init(&[], &mut rng).is_err());
        let zero = [LayerSpec {
            input: 0,
            output: 3,
            activation: Activation::Relu,
        }];
        assert!(DenseNet::init(&zero, &mut rng).is_err());
        let mismatch = [
            LayerSpec {
                input: 2,
                output: 3,
                activation: Activation::Relu,
            },
            LayerSpec {
                input: 4,
                output: 1,
                activation: Activation::Identity,
            },
        ];
        assert!(DenseNet::init(&mismatch, &mut rng).is_err());
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let net = small_net(1);
        assert!(matches!(net.forward(&[0.0; 4]), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_rejects_foreign_tape() {
        let net = small_net(1);
        let mut rng = RngStream::new(3, 0);
        let other = DenseNet::init(
            &[LayerSpec {
                input: 2,
                output: 3,
                activation: Activation::Relu,
            }],
            &mut rng,
        )
        .unwrap();
        let tape = other.forward(&[0.1, 0.2]).unwrap();
        assert!(matches!(
            net.backward(&tape, &[0.0; 3]),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        // h = 1e-5; per-coordinate tolerance 1e-4 relative (floored at 1).
        let h = 1e-5;
        for seed in 0..5u64 {
            let mut net = small_net(seed + 10);
            let mut rng = RngStream::new(seed, 99);
            let input: Vec<f64> = (0..5).map(|_| rng.next_uniform()).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.next_uniform()).collect();

            let tape = net.forward(&input).unwrap();
            let (_, out_grad) = loss_and_grad(tape.output(), &target);
            let analytic = net.backward(&tape, &out_grad).unwrap();

            let base = net.params();
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus.0[i] += h;
                net.set_params(&plus).unwrap();
                let (lp, _) = loss_and_grad(net.output(&input).unwrap().as_slice(), &target);
                let mut minus = base.clone();
                minus.0[i] -= h;
                net.set_params(&minus).unwrap();
                let (lm, _) = loss_and_grad(net.output(&input).unwrap().as_slice(), &target);
                let fd = (lp - lm) / (2.0 * h);
                let ad = analytic.param_grad.0[i];
                let tol = 1e-4 * fd.abs().max(ad.abs()).max(1.0);
                assert!(
                    (fd - ad).abs() <= tol,
                    "seed {seed} coord {i}: fd {fd} vs ad {ad}"
                );
            }
            net.set_params(&base).unwrap();

            // Input gradient via the same finite-difference route.
            for p in 0..input.len() {
                let mut xp = input.clone();
                xp[p] += h;
                let (lp, _) = loss_and_grad(net.output(&xp).unwrap().as_slice(), &target);
                let mut xm = input.clone();
                xm[p] -= h;
                let (lm, _) = loss_and_grad(net.output(&xm).unwrap().as_slice(), &target);
                let fd = (lp - lm) / (2.0 * h);
                let ad = analytic.input_grad[p];
                let tol = 1e-4 * fd.abs().max(ad.abs()).max(1.0);
                assert!((fd - ad).abs() <= tol, "input coord {p}: {fd} vs {ad}");
            }
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let p = FlatParams(vec![1.0, -2.0, 3.0]);
        let g = FlatParams::zeros(3);
        let s = AdamState::new(3);
        let (p2, s2) = adam_step(&p, &g, &s, 1e-3).unwrap();
        assert_eq!(p2.bits(), p.bits());
        assert_eq!(s2.step, 1);
    }

    #[test]
    fn adam_zero_lr_is_identity_on_params() {
        let p = FlatParams(vec![1.0, -2.0]);
        let g = FlatParams(vec![0.5, 0.25]);
        let (p2, _) = adam_step(&p, &g, &AdamState::new(2), 0.0).unwrap();
        assert_eq!(p2.bits(), p.bits());
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        // With a constant gradient, m_hat/sqrt(v_hat) -> sign(g), so the step
        // magnitude converges to lr. Checked after 1e4 steps at 1e-3 absolute.
        let lr = 0.5;
        let mut p = FlatParams(vec![0.0]);
        let g = FlatParams(vec![2.0]);
        let mut s = AdamState::new(1);
        let mut prev = p.0[0];
        let mut last_step = 0.0;
        for _ in 0..10_000 {
            adam_step_in_place(&mut p, &g, &mut s, lr).unwrap();
            last_step = prev - p.0[0];
            prev = p.0[0];
        }
        assert!(
            (last_step - lr).abs() < 1e-3,
            "step magnitude {last_step} vs lr {lr}"
        );
    }

    #[test]
    fn adam_pure_and_in_place_agree_bitwise() {
        let p = FlatParams(vec![0.3, -0.7, 1.1]);
        let g = FlatParams(vec![0.01, 0.02, -0.05]);
        let s = AdamState::new(3);
        let (p_pure, s_pure) = adam_step(&p, &g, &s, 1e-2).unwrap();
        let mut p_mut = p.clone();
        let mut s_mut = s.clone();
        adam_step_in_place(&mut p_mut, &g, &mut s_mut, 1e-2).unwrap();
        assert_eq!(p_pure.bits(), p_mut.bits());
        assert_eq!(s_pure, s_mut);
    }

    #[test]
    fn net_adam_update_matches_flat_path_bitwise() {
        let mut direct = small_net(31);
        let mut flat = direct.clone();
        let mut rng = RngStream::new(8, 0);
        let n = direct.param_count();
        let mut s_direct = AdamState::new(n);
        let mut s_flat = AdamState::new(n);
        for _ in 0..5 {
            let g = FlatParams((0..n).map(|_| rng.next_gaussian() * 0.1).collect());
            direct.adam_update(&g, &mut s_direct, 1e-2).unwrap();
            let mut p = flat.params();
            adam_step_in_place(&mut p, &g, &mut s_flat, 1e-2).unwrap();
            flat.set_params(&p).unwrap();
        }
        assert_eq!(direct.params().bits(), flat.params().bits());
        assert_eq!(s_direct, s_flat);
    }

    #[test]
    fn adam_rejects_mismatched_dims() {
        let p = FlatParams(vec![0.0; 3]);
        let g = FlatParams(vec![0.0; 2]);
        assert!(adam_step(&p, &g, &AdamState::new(3), 1e-3).is_err());
        let g3 = FlatParams(vec![0.0; 3]);
        assert!(adam_step(&p, &g3, &AdamState::new(2), 1e-3).is_err());
        assert!(adam_step(&p, &g3, &AdamState::new(3), -1.0).is_err());
    }
}
