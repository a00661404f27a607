//! Quantizer gradients: straight-through estimator and the annealed
//! error-decay surrogate.

use crate::error::{Error, Result};
use crate::quantize::RegionMap;
use crate::tensor::Tensor4;

/// Annealing schedule of the error-decay estimator. The sharpness t grows
/// geometrically from t_min to t_max over the run; the gain k = max(1/t, 1)
/// compensates the early, flat surrogate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EDESchedule {
    pub t_min: f64,
    pub t_max: f64,
    pub t: f64,
    pub k: f64,
}

impl EDESchedule {
    pub fn new(epoch: usize, total: usize) -> Result<Self> {
        Self::with_bounds(epoch, total, 1e-1, 1e1)
    }

    pub fn with_bounds(epoch: usize, total: usize, t_min: f64, t_max: f64) -> Result<Self> {
        let (t, k) = ede_schedule(epoch, total, t_min, t_max)?;
        Ok(Self { t_min, t_max, t, k })
    }
}

/// t = t_min * 10^((i/N) * log10(t_max/t_min)), k = max(1/t, 1).
pub fn ede_schedule(epoch: usize, total: usize, t_min: f64, t_max: f64) -> Result<(f64, f64)> {
    if total == 0 {
        return Err(Error::InvalidArgument("total epochs must be > 0".into()));
    }
    let frac = epoch as f64 / total as f64;
    let t = t_min * 10f64.powf(frac * (t_max / t_min).log10());
    let k = (1.0 / t).max(1.0);
    Ok((t, k))
}

/// Surrogate derivative k*t*(1 - tanh^2(t*(w - beta*delta))): the bell is
/// centered at the active region's own threshold.
pub fn ede_grad_factor(w: f64, beta: i8, delta: f64, t: f64, k: f64) -> f64 {
    let th = (t * (w - beta as f64 * delta)).tanh();
    k * t * (1.0 - th * th)
}

/// Straight-through gradient with the region's scales. With the default
/// alpha = +-1 every branch is pass-through; the scales stay explicit so
/// scale ablations remain possible.
pub fn ste_grad(
    w: f32,
    upstream: f32,
    beta: i8,
    delta: f32,
    alpha_pos: f32,
    alpha_neg: f32,
) -> f32 {
    if beta > 0 && w > delta {
        alpha_pos * upstream
    } else if beta < 0 && w < -delta {
        -alpha_neg * upstream
    } else {
        upstream
    }
}

/// Elementwise gradient of the loss w.r.t. latent weights, given the
/// gradient w.r.t. the quantized weights. Without a region map (binary /
/// ternary training) the estimator treats every weight as beta-free:
/// straight-through is the identity and the surrogate is centered at zero.
pub fn backward_quant(
    latent: &Tensor4,
    map: Option<&RegionMap>,
    delta: f32,
    upstream: &Tensor4,
    ede_on: bool,
    schedule: &EDESchedule,
) -> Result<Tensor4> {
    if latent.dims() != upstream.dims() {
        return Err(Error::ShapeMismatch(format!(
            "latent {:?} vs upstream {:?}",
            latent.dims(),
            upstream.dims()
        )));
    }
    let [_, s, c, k] = latent.dims();
    let mut grad = Tensor4::zeros(latent.dims());
    for i in 0..latent.len() {
        let w = latent.data()[i];
        let up = upstream.data()[i];
        let beta = match map {
            Some(m) => {
                let ki = i % k;
                let ci = (i / k) % c;
                let _ = s;
                m.beta_at_channel(ki, ci)
            }
            None => 0,
        };
        grad.data_mut()[i] = if ede_on {
            let center = beta as f64 * delta as f64;
            let factor = {
                let th = (schedule.t * (w as f64 - center)).tanh();
                schedule.k * schedule.t * (1.0 - th * th)
            };
            (up as f64 * factor) as f32
        } else if beta == 0 {
            up
        } else {
            ste_grad(w, up, beta, delta, 1.0, -1.0)
        };
    }
    Ok(grad)
}
