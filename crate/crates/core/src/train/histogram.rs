//! Latent-weight distribution analysis: binned counts for the whole
//! block, per-sign-factor subpopulations, and the effectual/ineffectual
//! split.

use crate::error::{Error, Result};
use crate::quantize::RegionMap;
use crate::tensor::Tensor4;

/// Equal-width bins over [lo, hi] with one count row per population.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f32,
    pub hi: f32,
    pub bins: usize,
    pub total: Vec<u64>,
    pub beta_pos: Vec<u64>,
    pub beta_neg: Vec<u64>,
    /// Weights whose quantized value is nonzero.
    pub effectual: Vec<u64>,
    /// Weights that quantize to zero.
    pub ineffectual: Vec<u64>,
    pub mean: f32,
    pub std: f32,
    pub mean_beta_pos: f32,
    pub mean_beta_neg: f32,
}

impl Histogram {
    pub fn bin_of(&self, w: f32) -> usize {
        let frac = (w - self.lo) / (self.hi - self.lo);
        ((frac * self.bins as f32) as usize).min(self.bins - 1)
    }

    pub fn bin_center(&self, i: usize) -> f32 {
        self.lo + (i as f32 + 0.5) * (self.hi - self.lo) / self.bins as f32
    }

    /// True when bin `i` holds strictly more mass than both neighbors.
    pub fn is_peak(&self, i: usize) -> bool {
        let c = self.total[i];
        let left = if i == 0 { 0 } else { self.total[i - 1] };
        let right = if i + 1 == self.bins { 0 } else { self.total[i + 1] };
        c > left && c > right
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center,total,beta_pos,beta_neg,effectual,ineffectual\n");
        for i in 0..self.bins {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.bin_center(i),
                self.total[i],
                self.beta_pos[i],
                self.beta_neg[i],
                self.effectual[i],
                self.ineffectual[i],
            ));
        }
        s
    }
}

/// Histograms `latent` over [-1, 1]. With a region map the per-beta rows
/// are split by each weight's region sign; effectual means the weight
/// survives signed-binary quantization at threshold `delta`. Without a
/// map the per-beta rows stay empty and effectual means |w| >= delta.
pub fn weight_histogram(
    latent: &Tensor4,
    map: Option<&RegionMap>,
    delta: f32,
    bins: usize,
) -> Result<Histogram> {
    if bins < 3 {
        return Err(Error::InvalidArgument("need at least 3 bins".into()));
    }
    let [_, _, c, k] = latent.dims();
    if let Some(m) = map {
        if m.k() != k || m.c() != c {
            return Err(Error::UncoveredRegion(format!(
                "map covers K={} C={}, weights have K={k} C={c}",
                m.k(),
                m.c()
            )));
        }
    }
    let mut h = Histogram {
        lo: -1.0,
        hi: 1.0,
        bins,
        total: vec![0; bins],
        beta_pos: vec![0; bins],
        beta_neg: vec![0; bins],
        effectual: vec![0; bins],
        ineffectual: vec![0; bins],
        mean: 0.0,
        std: 0.0,
        mean_beta_pos: 0.0,
        mean_beta_neg: 0.0,
    };
    let n = latent.len() as f64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut sum_pos = 0.0f64;
    let mut count_pos = 0u64;
    let mut sum_neg = 0.0f64;
    let mut count_neg = 0u64;
    for (i, &w) in latent.data().iter().enumerate() {
        sum += w as f64;
        sum_sq += (w as f64) * (w as f64);
        let bin = h.bin_of(w);
        h.total[bin] += 1;
        let (beta, effectual) = match map {
            Some(m) => {
                let ki = i % k;
                let ci = (i / k) % c;
                let b = m.beta_at_channel(ki, ci);
                let eff = (b > 0 && w >= delta) || (b < 0 && w <= -delta);
                (b, eff)
            }
            None => (0, w.abs() >= delta),
        };
        match beta.cmp(&0) {
            std::cmp::Ordering::Greater => {
                h.beta_pos[bin] += 1;
                sum_pos += w as f64;
                count_pos += 1;
            }
            std::cmp::Ordering::Less => {
                h.beta_neg[bin] += 1;
                sum_neg += w as f64;
                count_neg += 1;
            }
            std::cmp::Ordering::Equal => {}
        }
        if effectual {
            h.effectual[bin] += 1;
        } else {
            h.ineffectual[bin] += 1;
        }
    }
    h.mean = (sum / n) as f32;
    h.std = ((sum_sq / n - (sum / n) * (sum / n)).max(0.0)).sqrt() as f32;
    if count_pos > 0 {
        h.mean_beta_pos = (sum_pos / count_pos as f64) as f32;
    }
    if count_neg > 0 {
        h.mean_beta_neg = (sum_neg / count_neg as f64) as f32;
    }
    Ok(h)
}
