//! Trainable layers with hand-written backward passes. Everything runs on
//! NHWC activation tensors with the batch in dim 0.

use crate::error::{Error, Result};
use crate::quantize::{
    compute_delta, quantize_binary, quantize_signed_binary, quantize_ternary, QuantVariant,
    RegionMap,
};
use crate::rng::Xorshift64Star;
use crate::tensor::{naive_conv2d, ConvSpec, Tensor4};

use super::grad::{backward_quant, EDESchedule};

/// A learnable parameter with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f32>) -> Self {
        let n = value.len();
        Self { value, grad: vec![0.0; n], m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// One Adam update with bias correction; `step` counts from 1.
    pub fn adam_step(&mut self, lr: f64, step: u64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        let c1 = 1.0 - B1.powi(step as i32);
        let c2 = 1.0 - B2.powi(step as i32);
        for i in 0..self.value.len() {
            let g = self.grad[i] as f64;
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            self.value[i] -= (lr * mh / (vh.sqrt() + EPS)) as f32;
        }
    }

    pub fn clamp(&mut self, lo: f32, hi: f32) {
        self.value.iter_mut().for_each(|w| *w = w.clamp(lo, hi));
    }
}

/// Per-layer quantizer settings. The region map exists only for the
/// signed-binary variant and never changes once built.
#[derive(Debug, Clone)]
pub struct QuantConfig {
    pub variant: QuantVariant,
    pub map: Option<RegionMap>,
    pub ede: bool,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub w: Param,
    pub quant: Option<QuantConfig>,
    cached_input: Option<Tensor4>,
    cached_delta: f32,
}

impl ConvLayer {
    pub fn new(spec: ConvSpec, quant: Option<QuantConfig>, rng: &mut Xorshift64Star) -> Self {
        let fan_in = (spec.r * spec.s * spec.c) as f64;
        let std = (2.0 / fan_in).sqrt();
        let n = spec.r * spec.s * spec.c * spec.k;
        let value = (0..n).map(|_| (rng.next_gaussian() * std) as f32).collect();
        Self { spec, w: Param::new(value), quant, cached_input: None, cached_delta: 0.0 }
    }

    pub fn latent(&self) -> Result<Tensor4> {
        Tensor4::from_data(self.spec.weight_dims(), self.w.value.clone())
    }

    /// Weights used by the forward pass: the latent tensor, or its
    /// dequantized image when a quantizer is attached. The threshold is
    /// recomputed from the current latent weights on every call.
    pub fn effective_weights(&mut self) -> Result<Tensor4> {
        let latent = self.latent()?;
        let Some(q) = &self.quant else {
            self.cached_delta = 0.0;
            return Ok(latent);
        };
        let delta = compute_delta(&latent, 0.05)?;
        self.cached_delta = delta;
        let layer = match q.variant {
            QuantVariant::Binary => quantize_binary(&latent)?,
            QuantVariant::Ternary => quantize_ternary(&latent, delta)?,
            QuantVariant::SignedBinary => {
                let map = q.map.as_ref().ok_or_else(|| {
                    Error::InvalidArgument("signed-binary layer without region map".into())
                })?;
                quantize_signed_binary(&latent, map, delta)?
            }
        };
        Ok(layer.dequantize())
    }

    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4> {
        let weights = self.effective_weights()?;
        let out = naive_conv2d(input, &weights, &self.spec)?;
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Tensor4, sched: &EDESchedule) -> Result<Tensor4> {
        let input = self
            .cached_input
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward before forward".into()))?;
        let weights = self.effective_weights()?;
        let [n, h, w, c_in] = input.dims();
        let [_, oh, ow, k_out] = dout.dims();
        let pad = self.spec.padding as isize;
        let mut dinput = Tensor4::zeros(input.dims());
        let mut dweff = Tensor4::zeros(self.spec.weight_dims());
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let obase = dout.idx(ni, oy, ox, 0);
                    for r in 0..self.spec.r {
                        let iy = (oy * self.spec.stride + r) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for s in 0..self.spec.s {
                            let ix = (ox * self.spec.stride + s) as isize - pad;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c_in {
                                let ibase = input.idx(ni, iy as usize, ix as usize, ci);
                                let a = input.data()[ibase];
                                let wbase = weights.idx(r, s, ci, 0);
                                let mut da = 0.0f32;
                                for ki in 0..k_out {
                                    let g = dout.data()[obase + ki];
                                    da += g * weights.data()[wbase + ki];
                                    dweff.data_mut()[wbase + ki] += g * a;
                                }
                                dinput.data_mut()[ibase] += da;
                            }
                        }
                    }
                }
            }
        }
        // Map the effective-weight gradient back to the latent weights.
        let dlatent = match &self.quant {
            None => dweff,
            Some(q) => {
                let latent = self.latent()?;
                backward_quant(
                    &latent,
                    q.map.as_ref(),
                    self.cached_delta,
                    &dweff,
                    q.ede,
                    sched,
                )?
            }
        };
        for (g, d) in self.w.grad.iter_mut().zip(dlatent.data()) {
            *g += d;
        }
        Ok(dinput)
    }
}

/// Batch normalization over the channel axis with running statistics for
/// evaluation.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    xhat: Tensor4,
    inv_std: Vec<f32>,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(vec![1.0; c]),
            beta: Param::new(vec![0.0; c]),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, input: &Tensor4, training: bool) -> Result<Tensor4> {
        let [n, h, w, c] = input.dims();
        let count = (n * h * w) as f32;
        let mut out = Tensor4::zeros(input.dims());
        if training {
            let mut mean = vec![0.0f32; c];
            let mut var = vec![0.0f32; c];
            for (i, &x) in input.data().iter().enumerate() {
                mean[i % c] += x;
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for (i, &x) in input.data().iter().enumerate() {
                let d = x - mean[i % c];
                var[i % c] += d * d;
            }
            var.iter_mut().for_each(|v| *v /= count);
            let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let mut xhat = Tensor4::zeros(input.dims());
            for (i, &x) in input.data().iter().enumerate() {
                let ci = i % c;
                let xh = (x - mean[ci]) * inv_std[ci];
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = self.gamma.value[ci] * xh + self.beta.value[ci];
            }
            for ci in 0..c {
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean[ci];
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var[ci];
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            for (i, &x) in input.data().iter().enumerate() {
                let ci = i % c;
                let xh = (x - self.running_mean[ci]) / (self.running_var[ci] + self.eps).sqrt();
                out.data_mut()[i] = self.gamma.value[ci] * xh + self.beta.value[ci];
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Tensor4) -> Result<Tensor4> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward before forward".into()))?;
        let [n, h, w, c] = dout.dims();
        let count = (n * h * w) as f32;
        let mut sum_dy = vec![0.0f32; c];
        let mut sum_dy_xhat = vec![0.0f32; c];
        for (i, &dy) in dout.data().iter().enumerate() {
            let ci = i % c;
            sum_dy[ci] += dy;
            sum_dy_xhat[ci] += dy * cache.xhat.data()[i];
        }
        for ci in 0..c {
            self.beta.grad[ci] += sum_dy[ci];
            self.gamma.grad[ci] += sum_dy_xhat[ci];
        }
        let mut dinput = Tensor4::zeros(dout.dims());
        for (i, &dy) in dout.data().iter().enumerate() {
            let ci = i % c;
            let xh = cache.xhat.data()[i];
            dinput.data_mut()[i] = self.gamma.value[ci] * cache.inv_std[ci] / count
                * (count * dy - sum_dy[ci] - xh * sum_dy_xhat[ci]);
        }
        Ok(dinput)
    }
}

/// Per-channel parametric rectifier.
#[derive(Debug, Clone)]
pub struct PRelu {
    pub slope: Param,
    cache: Option<Tensor4>,
}

impl PRelu {
    pub fn new(c: usize) -> Self {
        Self { slope: Param::new(vec![0.25; c]), cache: None }
    }

    pub fn forward(&mut self, input: &Tensor4) -> Tensor4 {
        let c = input.dims()[3];
        let mut out = Tensor4::zeros(input.dims());
        for (i, &x) in input.data().iter().enumerate() {
            out.data_mut()[i] = if x > 0.0 { x } else { self.slope.value[i % c] * x };
        }
        self.cache = Some(input.clone());
        out
    }

    pub fn backward(&mut self, dout: &Tensor4) -> Result<Tensor4> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward before forward".into()))?;
        let c = input.dims()[3];
        let mut dinput = Tensor4::zeros(dout.dims());
        for (i, &dy) in dout.data().iter().enumerate() {
            let x = input.data()[i];
            let ci = i % c;
            if x > 0.0 {
                dinput.data_mut()[i] = dy;
            } else {
                dinput.data_mut()[i] = self.slope.value[ci] * dy;
                self.slope.grad[ci] += dy * x;
            }
        }
        Ok(dinput)
    }
}

/// 2x2 average pooling with stride 2; odd trailing rows or columns are
/// dropped.
#[derive(Debug, Clone, Default)]
pub struct AvgPool2 {
    in_dims: [usize; 4],
}

impl AvgPool2 {
    pub fn forward(&mut self, input: &Tensor4) -> Tensor4 {
        let [n, h, w, c] = input.dims();
        self.in_dims = input.dims();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor4::zeros([n, oh, ow, c]);
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        let s = input.get(ni, 2 * oy, 2 * ox, ci)
                            + input.get(ni, 2 * oy, 2 * ox + 1, ci)
                            + input.get(ni, 2 * oy + 1, 2 * ox, ci)
                            + input.get(ni, 2 * oy + 1, 2 * ox + 1, ci);
                        out.set(ni, oy, ox, ci, s / 4.0);
                    }
                }
            }
        }
        out
    }

    pub fn backward(&self, dout: &Tensor4) -> Tensor4 {
        let [n, oh, ow, c] = dout.dims();
        let mut dinput = Tensor4::zeros(self.in_dims);
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        let g = dout.get(ni, oy, ox, ci) / 4.0;
                        for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                            let i = dinput.idx(ni, 2 * oy + dy, 2 * ox + dx, ci);
                            dinput.data_mut()[i] += g;
                        }
                    }
                }
            }
        }
        dinput
    }
}

/// Spatial mean reducing [N, H, W, C] to [N, 1, 1, C].
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    in_dims: [usize; 4],
}

impl GlobalAvgPool {
    pub fn forward(&mut self, input: &Tensor4) -> Tensor4 {
        let [n, h, w, c] = input.dims();
        self.in_dims = input.dims();
        let mut out = Tensor4::zeros([n, 1, 1, c]);
        let area = (h * w) as f32;
        for (i, &x) in input.data().iter().enumerate() {
            let ci = i % c;
            let ni = i / (h * w * c);
            let o = out.idx(ni, 0, 0, ci);
            out.data_mut()[o] += x / area;
        }
        out
    }

    pub fn backward(&self, dout: &Tensor4) -> Tensor4 {
        let [n, h, w, c] = self.in_dims;
        let _ = n;
        let mut dinput = Tensor4::zeros(self.in_dims);
        let area = (h * w) as f32;
        for (i, g) in dinput.data_mut().iter_mut().enumerate() {
            let ci = i % c;
            let ni = i / (h * w * c);
            *g = dout.get(ni, 0, 0, ci) / area;
        }
        dinput
    }
}

/// Fully connected layer over flattened [N, 1, 1, In] activations.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub w: Param,
    pub b: Param,
    cache: Option<Tensor4>,
}

impl Dense {
    pub fn new(inp: usize, out: usize, rng: &mut Xorshift64Star) -> Self {
        let std = (2.0 / inp as f64).sqrt();
        let w = (0..inp * out).map(|_| (rng.next_gaussian() * std) as f32).collect();
        Self { inp, out, w: Param::new(w), b: Param::new(vec![0.0; out]), cache: None }
    }

    pub fn forward(&mut self, input: &Tensor4) -> Result<Tensor4> {
        let [n, h, w, c] = input.dims();
        if h * w * c != self.inp {
            return Err(Error::ShapeMismatch(format!(
                "dense expects {} inputs, got {h}x{w}x{c}",
                self.inp
            )));
        }
        let mut out = Tensor4::zeros([n, 1, 1, self.out]);
        for ni in 0..n {
            for o in 0..self.out {
                let mut acc = self.b.value[o];
                for i in 0..self.inp {
                    acc += input.data()[ni * self.inp + i] * self.w.value[i * self.out + o];
                }
                out.data_mut()[ni * self.out + o] = acc;
            }
        }
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, dout: &Tensor4) -> Result<Tensor4> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidArgument("backward before forward".into()))?;
        let n = input.dims()[0];
        let mut dinput = Tensor4::zeros(input.dims());
        for ni in 0..n {
            for o in 0..self.out {
                let g = dout.data()[ni * self.out + o];
                self.b.grad[o] += g;
                for i in 0..self.inp {
                    let x = input.data()[ni * self.inp + i];
                    self.w.grad[i * self.out + o] += g * x;
                    dinput.data_mut()[ni * self.inp + i] += g * self.w.value[i * self.out + o];
                }
            }
        }
        Ok(dinput)
    }
}

/// Softmax cross-entropy over [N, 1, 1, classes] logits. Returns the mean
/// loss and the gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[u8]) -> Result<(f32, Tensor4)> {
    let [n, _, _, classes] = logits.dims();
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    let mut grad = Tensor4::zeros(logits.dims());
    let mut loss = 0.0f64;
    for ni in 0..n {
        let row = &logits.data()[ni * classes..(ni + 1) * classes];
        let maxv = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f64> = row.iter().map(|&x| ((x - maxv) as f64).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let label = labels[ni] as usize;
        if label >= classes {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        loss -= (exps[label] / sum).ln();
        for (ci, &e) in exps.iter().enumerate() {
            let p = (e / sum) as f32;
            let target = if ci == label { 1.0 } else { 0.0 };
            grad.data_mut()[ni * classes + ci] = (p - target) / n as f32;
        }
    }
    Ok((loss as f32 / n as f32, grad))
}

/// Finite-difference check of the convolution backward pass. Returns the
/// largest absolute error between analytic and numeric gradients over the
/// weights and the input of a small random unquantized layer.
pub fn conv_oracle_check(seed: u64) -> Result<f64> {
    let mut rng = Xorshift64Star::new(seed);
    let spec = ConvSpec::new(3, 3, 2, 3, 1, 1)?;
    let mut layer = ConvLayer::new(spec, None, &mut rng);
    let in_dims = [2, 4, 4, 2];
    let input = Tensor4::from_data(
        in_dims,
        (0..in_dims.iter().product())
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect(),
    )?;
    let coeffs: Vec<f32> = {
        let out_dims = spec.out_dims(in_dims)?;
        (0..out_dims.iter().product::<usize>())
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect()
    };
    // Scalar loss: dot(output, coeffs).
    let loss = |layer: &mut ConvLayer, input: &Tensor4| -> Result<f64> {
        let out = layer.forward(input)?;
        Ok(out
            .data()
            .iter()
            .zip(&coeffs)
            .map(|(&o, &c)| o as f64 * c as f64)
            .sum())
    };
    let out = layer.forward(&input)?;
    let dout = Tensor4::from_data(out.dims(), coeffs.clone())?;
    let sched = EDESchedule::new(0, 1)?;
    layer.w.zero_grad();
    let dinput = layer.backward(&dout, &sched)?;

    let h = 1e-3;
    let mut max_err = 0.0f64;
    for i in 0..layer.w.value.len() {
        let orig = layer.w.value[i];
        layer.w.value[i] = orig + h;
        let lp = loss(&mut layer, &input)?;
        layer.w.value[i] = orig - h;
        let lm = loss(&mut layer, &input)?;
        layer.w.value[i] = orig;
        let fd = (lp - lm) / (2.0 * h as f64);
        max_err = max_err.max((fd - layer.w.grad[i] as f64).abs());
    }
    let mut input_var = input.clone();
    for i in 0..input_var.len() {
        let orig = input_var.data()[i];
        input_var.data_mut()[i] = orig + h;
        let lp = loss(&mut layer, &input_var)?;
        input_var.data_mut()[i] = orig - h;
        let lm = loss(&mut layer, &input_var)?;
        input_var.data_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * h as f64);
        max_err = max_err.max((fd - dinput.data()[i] as f64).abs());
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(dims: [usize; 4], rng: &mut Xorshift64Star) -> Tensor4 {
        Tensor4::from_data(
            dims,
            (0..dims.iter().product())
                .map(|_| rng.uniform(-1.0, 1.0) as f32)
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        for seed in [1, 2, 3] {
            let err = conv_oracle_check(seed).unwrap();
            assert!(err < 1e-2, "seed {seed}: max grad error {err}");
        }
    }

    #[test]
    fn quantized_conv_uses_quantizer_weights() {
        let mut rng = Xorshift64Star::new(5);
        let spec = ConvSpec::new(3, 3, 4, 4, 1, 1).unwrap();
        let q = QuantConfig { variant: QuantVariant::Binary, ede: false, map: None };
        let mut layer = ConvLayer::new(spec, Some(q), &mut rng);
        let w = layer.effective_weights().unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn batchnorm_normalizes_and_backprop_checks() {
        let mut rng = Xorshift64Star::new(7);
        let dims = [4, 3, 3, 2];
        let input = rand_tensor(dims, &mut rng);
        let mut bn = BatchNorm::new(2);
        let out = bn.forward(&input, true).unwrap();
        let c = 2;
        let count = (4 * 3 * 3) as f32;
        for ci in 0..c {
            let vals: Vec<f32> = out
                .data()
                .iter()
                .enumerate()
                .filter(|(i, _)| i % c == ci)
                .map(|(_, &v)| v)
                .collect();
            let mean: f32 = vals.iter().sum::<f32>() / count;
            assert!(mean.abs() < 1e-5);
        }
        // Gradient check on a dot-product loss.
        let coeffs = rand_tensor(dims, &mut rng);
        let _ = bn.forward(&input, true).unwrap();
        bn.gamma.zero_grad();
        bn.beta.zero_grad();
        let dinput = bn.backward(&coeffs).unwrap();
        let h = 1e-3f32;
        let loss = |bn: &mut BatchNorm, x: &Tensor4| -> f64 {
            let o = bn.forward(x, true).unwrap();
            o.data()
                .iter()
                .zip(coeffs.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };
        let mut x = input.clone();
        for i in (0..x.len()).step_by(7) {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let lp = loss(&mut bn, &x);
            x.data_mut()[i] = orig - h;
            let lm = loss(&mut bn, &x);
            x.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!(
                (fd - dinput.data()[i] as f64).abs() < 1e-2,
                "i={i}: {fd} vs {}",
                dinput.data()[i]
            );
        }
    }

    #[test]
    fn prelu_forward_backward() {
        let mut p = PRelu::new(1);
        let input = Tensor4::from_data([1, 1, 2, 1], vec![2.0, -2.0]).unwrap();
        let out = p.forward(&input);
        assert_eq!(out.data(), &[2.0, -0.5]);
        let dout = Tensor4::from_data([1, 1, 2, 1], vec![1.0, 1.0]).unwrap();
        let dinput = p.backward(&dout).unwrap();
        assert_eq!(dinput.data(), &[1.0, 0.25]);
        assert_eq!(p.slope.grad[0], -2.0);
    }

    #[test]
    fn pooling_backward_distributes_mass() {
        let mut rng = Xorshift64Star::new(11);
        let input = rand_tensor([1, 4, 4, 2], &mut rng);
        let mut pool = AvgPool2::default();
        let out = pool.forward(&input);
        assert_eq!(out.dims(), [1, 2, 2, 2]);
        let dout = rand_tensor([1, 2, 2, 2], &mut rng);
        let dinput = pool.backward(&dout);
        let total_in: f32 = dinput.data().iter().sum();
        let total_out: f32 = dout.data().iter().sum();
        assert!((total_in - total_out).abs() < 1e-5);

        let mut gap = GlobalAvgPool::default();
        let out = gap.forward(&input);
        assert_eq!(out.dims(), [1, 1, 1, 2]);
        let mean0: f32 = input
            .data()
            .iter()
            .step_by(2)
            .sum::<f32>()
            / 16.0;
        assert!((out.data()[0] - mean0).abs() < 1e-5);
    }

    #[test]
    fn dense_gradient_check() {
        let mut rng = Xorshift64Star::new(13);
        let mut d = Dense::new(6, 3, &mut rng);
        let input = rand_tensor([2, 1, 1, 6], &mut rng);
        let coeffs = rand_tensor([2, 1, 1, 3], &mut rng);
        let _ = d.forward(&input).unwrap();
        d.w.zero_grad();
        d.b.zero_grad();
        let dinput = d.backward(&coeffs).unwrap();
        let h = 1e-3f32;
        let loss = |d: &mut Dense, x: &Tensor4| -> f64 {
            let o = d.forward(x).unwrap();
            o.data()
                .iter()
                .zip(coeffs.data())
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum()
        };
        for i in 0..d.w.value.len() {
            let orig = d.w.value[i];
            d.w.value[i] = orig + h;
            let lp = loss(&mut d, &input);
            d.w.value[i] = orig - h;
            let lm = loss(&mut d, &input);
            d.w.value[i] = orig;
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - d.w.grad[i] as f64).abs() < 1e-3);
        }
        for i in 0..input.len() {
            let mut x = input.clone();
            x.data_mut()[i] += h;
            let lp = loss(&mut d, &x);
            x.data_mut()[i] -= 2.0 * h;
            let lm = loss(&mut d, &x);
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - dinput.data()[i] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn cross_entropy_gradient_and_value() {
        // Uniform logits give loss ln(classes) and symmetric gradients.
        let logits = Tensor4::zeros([1, 1, 1, 4]);
        let (loss, grad) = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((loss - (4.0f32).ln()).abs() < 1e-6);
        assert!((grad.data()[2] - (0.25 - 1.0)).abs() < 1e-6);
        assert!((grad.data()[0] - 0.25).abs() < 1e-6);
        // Finite-difference check.
        let mut rng = Xorshift64Star::new(17);
        let logits = Tensor4::from_data(
            [2, 1, 1, 3],
            (0..6).map(|_| rng.uniform(-2.0, 2.0) as f32).collect(),
        )
        .unwrap();
        let labels = [0u8, 2];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-3f32;
        for i in 0..6 {
            let mut l = logits.clone();
            l.data_mut()[i] += h;
            let (lp, _) = softmax_cross_entropy(&l, &labels).unwrap();
            l.data_mut()[i] -= 2.0 * h;
            let (lm, _) = softmax_cross_entropy(&l, &labels).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad.data()[i]).abs() < 1e-3);
        }
    }

    #[test]
    fn adam_descends_on_quadratic() {
        let mut p = Param::new(vec![5.0, -3.0]);
        for step in 1..=2000u64 {
            p.grad[0] = 2.0 * p.value[0];
            p.grad[1] = 2.0 * p.value[1];
            p.adam_step(0.01, step);
        }
        assert!(p.value[0].abs() < 0.05);
        assert!(p.value[1].abs() < 0.05);
        p.value[0] = 3.0;
        p.clamp(-1.0, 1.0);
        assert_eq!(p.value[0], 1.0);
    }
}
