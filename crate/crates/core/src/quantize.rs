//! Binary, ternary, and signed-binary weight quantization.
//!
//! Signed binarization assigns each region (an R x S x C_t slab of one
//! filter) a fixed sign-factor beta; the region is then quantized to
//! {0, +1} when beta = +1 or {0, -1} when beta = -1. With C_t = C this is
//! a per-filter (inter-filter) scheme: two unique values per filter,
//! three per layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Xorshift64Star;
use crate::tensor::Tensor4;

/// Default threshold coefficient: delta = 0.05 * max|W|.
pub const DEFAULT_DELTA_COEFF: f32 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantVariant {
    Binary,
    Ternary,
    SignedBinary,
}

impl std::fmt::Display for QuantVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuantVariant::Binary => write!(f, "binary"),
            QuantVariant::Ternary => write!(f, "ternary"),
            QuantVariant::SignedBinary => write!(f, "signed-binary"),
        }
    }
}

impl std::str::FromStr for QuantVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "b" => Ok(QuantVariant::Binary),
            "ternary" | "t" => Ok(QuantVariant::Ternary),
            "signed-binary" | "sb" | "signed_binary" => Ok(QuantVariant::SignedBinary),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

/// Region geometry for signed-binary quantization. The binarized slab is
/// R x S x C_t with C_t = min(multiplier * c_tile, C); C_t must divide C so
/// regions partition each filter exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Tile size C* of the inference system, along the C dimension.
    pub c_tile: usize,
    /// Positive integer multiplier relating C* to the binarized region.
    pub multiplier: usize,
}

impl RegionSpec {
    pub fn new(c_tile: usize, multiplier: usize) -> Result<Self> {
        if c_tile == 0 || multiplier == 0 {
            return Err(Error::InvalidArgument(
                "c_tile and multiplier must be positive".into(),
            ));
        }
        Ok(Self { c_tile, multiplier })
    }

    /// Region extent along C for a layer with `c` input channels.
    pub fn c_t(&self, c: usize) -> Result<usize> {
        let ct = (self.c_tile * self.multiplier).min(c);
        if c % ct != 0 {
            return Err(Error::InvalidArgument(format!(
                "C_t = {ct} does not divide C = {c}"
            )));
        }
        Ok(ct)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantScheme {
    pub variant: QuantVariant,
    pub delta_coeff: f32,
    pub region: Option<RegionSpec>,
}

impl QuantScheme {
    pub fn binary() -> Self {
        Self { variant: QuantVariant::Binary, delta_coeff: DEFAULT_DELTA_COEFF, region: None }
    }

    pub fn ternary() -> Self {
        Self { variant: QuantVariant::Ternary, delta_coeff: DEFAULT_DELTA_COEFF, region: None }
    }

    pub fn signed_binary() -> Self {
        Self {
            variant: QuantVariant::SignedBinary,
            delta_coeff: DEFAULT_DELTA_COEFF,
            // Inter-filter default: C_t = C.
            region: None,
        }
    }

    pub fn with_delta_coeff(mut self, coeff: f32) -> Result<Self> {
        if !(coeff > 0.0) {
            return Err(Error::InvalidArgument("delta_coeff must be > 0".into()));
        }
        self.delta_coeff = coeff;
        Ok(self)
    }
}

/// Fixed assignment of each (filter, channel-tile) region to a sign-factor.
/// Created once before training and immutable afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMap {
    k: usize,
    c: usize,
    /// Region extent along C.
    c_t: usize,
    /// beta per region, filter-major then tile index; entries are +1 / -1.
    betas: Vec<i8>,
    pub fraction_pos: f32,
    pub seed: u64,
}

impl RegionMap {
    /// Builds a map directly from per-filter betas (inter-filter mode).
    pub fn from_filter_betas(c: usize, betas: Vec<i8>, fraction_pos: f32, seed: u64) -> Result<Self> {
        if betas.iter().any(|&b| b != 1 && b != -1) {
            return Err(Error::InvalidArgument("betas must be +1 or -1".into()));
        }
        Ok(Self { k: betas.len(), c, c_t: c, betas, fraction_pos, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn c_t(&self) -> usize {
        self.c_t
    }

    pub fn tiles_per_filter(&self) -> usize {
        self.c / self.c_t
    }

    pub fn region_count(&self) -> usize {
        self.betas.len()
    }

    #[inline]
    pub fn beta(&self, filter: usize, tile: usize) -> i8 {
        self.betas[filter * self.tiles_per_filter() + tile]
    }

    #[inline]
    pub fn beta_at_channel(&self, filter: usize, channel: usize) -> i8 {
        self.beta(filter, channel / self.c_t)
    }

    /// Per-filter betas; only meaningful in inter-filter mode (C_t = C).
    pub fn filter_betas(&self) -> &[i8] {
        &self.betas
    }

    pub fn is_per_filter(&self) -> bool {
        self.c_t == self.c
    }
}

/// Threshold delta = coeff * max|W|.
pub fn compute_delta(weights: &Tensor4, coeff: f32) -> Result<f32> {
    if weights.is_empty() {
        return Err(Error::EmptyTensor);
    }
    Ok(coeff * weights.max_abs())
}

/// Ternary-valued weights plus the scheme metadata needed to execute and
/// pack them.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    dims: [usize; 4],
    values: Vec<i8>,
    pub scheme: QuantScheme,
    pub region_map: Option<RegionMap>,
    pub delta: f32,
    pub alpha_pos: f32,
    pub alpha_neg: f32,
}

impl QuantizedLayer {
    /// Assembles a layer from raw parts, validating the value alphabet.
    /// Used by unpacking and by synthetic layer generators.
    pub fn from_parts(
        dims: [usize; 4],
        values: Vec<i8>,
        scheme: QuantScheme,
        region_map: Option<RegionMap>,
        delta: f32,
    ) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {:?}",
                values.len(),
                dims
            )));
        }
        if values.iter().any(|&v| !(-1..=1).contains(&v)) {
            return Err(Error::InvalidArgument("values must be in {-1,0,+1}".into()));
        }
        Ok(Self {
            dims,
            values,
            scheme,
            region_map,
            delta,
            alpha_pos: 1.0,
            alpha_neg: -1.0,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    #[inline]
    pub fn value_at(&self, r: usize, s: usize, c: usize, k: usize) -> i8 {
        let [_, sd, cd, kd] = self.dims;
        self.values[((r * sd + s) * cd + c) * kd + k]
    }

    /// Real-valued weights. alpha_neg is the signed scale of the negative
    /// level, so the default (alpha_pos, alpha_neg) = (1, -1) makes this
    /// the values as f32.
    pub fn dequantize(&self) -> Tensor4 {
        let data = self
            .values
            .iter()
            .map(|&v| match v.cmp(&0) {
                std::cmp::Ordering::Greater => self.alpha_pos,
                std::cmp::Ordering::Less => self.alpha_neg,
                std::cmp::Ordering::Equal => 0.0,
            })
            .collect();
        Tensor4::from_data(self.dims, data).expect("internal dims consistent")
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }
}

/// sign(W), with sign(0) = +1. No zeros in the output.
pub fn quantize_binary(weights: &Tensor4) -> Result<QuantizedLayer> {
    let values = weights
        .data()
        .iter()
        .map(|&w| if w >= 0.0 { 1i8 } else { -1i8 })
        .collect();
    Ok(QuantizedLayer {
        dims: weights.dims(),
        values,
        scheme: QuantScheme::binary(),
        region_map: None,
        delta: 0.0,
        alpha_pos: 1.0,
        alpha_neg: -1.0,
    })
}

/// +1 above delta, -1 below -delta, 0 inside the band.
pub fn quantize_ternary(weights: &Tensor4, delta: f32) -> Result<QuantizedLayer> {
    if delta < 0.0 {
        return Err(Error::InvalidArgument("delta must be >= 0".into()));
    }
    let values = weights
        .data()
        .iter()
        .map(|&w| {
            if w > delta {
                1i8
            } else if w < -delta {
                -1i8
            } else {
                0i8
            }
        })
        .collect();
    Ok(QuantizedLayer {
        dims: weights.dims(),
        values,
        scheme: QuantScheme::ternary(),
        region_map: None,
        delta,
        alpha_pos: 1.0,
        alpha_neg: -1.0,
    })
}

/// Per-region signed binarization: beta = +1 regions map to {0, +1}
/// (W >= delta), beta = -1 regions to {0, -1} (W <= -delta).
pub fn quantize_signed_binary(
    weights: &Tensor4,
    map: &RegionMap,
    delta: f32,
) -> Result<QuantizedLayer> {
    let [r, s, c, k] = weights.dims();
    if map.k() != k || map.c() != c {
        return Err(Error::UncoveredRegion(format!(
            "map covers K={} C={}, weights have K={k} C={c}",
            map.k(),
            map.c()
        )));
    }
    let mut values = vec![0i8; weights.len()];
    let kd = k;
    for ri in 0..r {
        for si in 0..s {
            for ci in 0..c {
                let base = ((ri * s + si) * c + ci) * kd;
                for ki in 0..k {
                    let w = weights.data()[base + ki];
                    let beta = map.beta_at_channel(ki, ci);
                    values[base + ki] = if beta > 0 {
                        (w >= delta) as i8
                    } else {
                        -((w <= -delta) as i8)
                    };
                }
            }
        }
    }
    Ok(QuantizedLayer {
        dims: weights.dims(),
        values,
        scheme: QuantScheme::signed_binary(),
        region_map: Some(map.clone()),
        delta,
        alpha_pos: 1.0,
        alpha_neg: -1.0,
    })
}

/// Randomly assigns each region a sign-factor before training. Exactly
/// `round(P * region_count)` regions (and in per-filter mode exactly
/// `K * P` filters, which must be an integer) carry beta = +1. Pure
/// function of its arguments.
pub fn assign_regions(k: usize, c: usize, c_tile: usize, p: f64, seed: u64) -> Result<RegionMap> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("P = {p} outside [0,1]")));
    }
    if c_tile == 0 || c % c_tile != 0 {
        return Err(Error::InvalidArgument(format!(
            "c_tile {c_tile} must divide C = {c}"
        )));
    }
    let tiles = c / c_tile;
    let region_count = k * tiles;
    let n_pos = if c_tile == c {
        let exact = k as f64 * p;
        if (exact - exact.round()).abs() > 1e-9 {
            return Err(Error::NonIntegerSplit(exact));
        }
        exact.round() as usize
    } else {
        (p * region_count as f64).round() as usize
    };
    let mut betas = vec![-1i8; region_count];
    let mut order: Vec<usize> = (0..region_count).collect();
    let mut rng = Xorshift64Star::new(seed);
    rng.shuffle(&mut order);
    for &i in order.iter().take(n_pos) {
        betas[i] = 1;
    }
    Ok(RegionMap {
        k,
        c,
        c_t: c_tile,
        betas,
        fraction_pos: p as f32,
        seed,
    })
}

/// Fraction of nonzero quantized weights.
pub fn density(layer: &QuantizedLayer) -> f64 {
    if layer.values.is_empty() {
        return 0.0;
    }
    layer.nonzero_count() as f64 / layer.values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(dims: [usize; 4], data: Vec<f32>) -> Tensor4 {
        Tensor4::from_data(dims, data).unwrap()
    }

    #[test]
    fn delta_formula() {
        let w = tensor([1, 1, 1, 2], vec![1.0, -0.5]);
        assert_eq!(compute_delta(&w, 0.05).unwrap(), 0.05);
        assert_eq!(compute_delta(&w, 0.01).unwrap(), 0.01);
        let zero = Tensor4::zeros([1, 1, 2, 2]);
        assert_eq!(compute_delta(&zero, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn binary_sign_and_tie_break() {
        let w = tensor([1, 1, 1, 3], vec![0.3, -0.2, 0.0]);
        let q = quantize_binary(&w).unwrap();
        assert_eq!(q.values(), &[1, -1, 1]);
        assert_eq!(q.nonzero_count(), 3);
        assert_eq!(density(&q), 1.0);
    }

    #[test]
    fn ternary_thresholding() {
        let w = tensor([1, 1, 1, 3], vec![0.3, -0.2, 0.01]);
        let q = quantize_ternary(&w, 0.05).unwrap();
        assert_eq!(q.values(), &[1, -1, 0]);
    }

    #[test]
    fn ternary_with_zero_delta_matches_binary_on_nonzeros() {
        let w = tensor([1, 1, 2, 2], vec![0.4, -0.1, 0.2, -0.9]);
        let t = quantize_ternary(&w, 0.0).unwrap();
        let b = quantize_binary(&w).unwrap();
        for (tv, bv) in t.values().iter().zip(b.values()) {
            assert_eq!(tv, bv);
        }
    }

    #[test]
    fn signed_binary_per_region() {
        // One filter beta=+1, one beta=-1, same weights along C.
        let w = tensor(
            [1, 1, 3, 2],
            vec![0.3, 0.3, -0.2, -0.2, 0.01, 0.01],
        );
        let map = RegionMap::from_filter_betas(3, vec![1, -1], 0.5, 0).unwrap();
        let q = quantize_signed_binary(&w, &map, 0.05).unwrap();
        // filter 0 (beta=+1): [+1, 0, 0]; filter 1 (beta=-1): [0, -1, 0]
        assert_eq!(q.value_at(0, 0, 0, 0), 1);
        assert_eq!(q.value_at(0, 0, 1, 0), 0);
        assert_eq!(q.value_at(0, 0, 2, 0), 0);
        assert_eq!(q.value_at(0, 0, 0, 1), 0);
        assert_eq!(q.value_at(0, 0, 1, 1), -1);
        assert_eq!(q.value_at(0, 0, 2, 1), 0);
    }

    #[test]
    fn signed_binary_values_are_beta_times_bitmap() {
        let mut rng = Xorshift64Star::new(11);
        let data: Vec<f32> = (0..3 * 3 * 8 * 4).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let w = tensor([3, 3, 8, 4], data);
        let map = assign_regions(4, 8, 8, 0.5, 9).unwrap();
        let delta = compute_delta(&w, 0.05).unwrap();
        let q = quantize_signed_binary(&w, &map, delta).unwrap();
        for ki in 0..4 {
            let beta = map.beta(ki, 0);
            for ri in 0..3 {
                for si in 0..3 {
                    for ci in 0..8 {
                        let v = q.value_at(ri, si, ci, ki);
                        // v = beta * u with u in {0, 1}
                        assert!(v == 0 || v == beta);
                    }
                }
            }
        }
    }

    #[test]
    fn assign_regions_counts_and_determinism() {
        let m = assign_regions(4, 16, 16, 0.5, 123).unwrap();
        assert_eq!(m.filter_betas().iter().filter(|&&b| b == 1).count(), 2);
        let m2 = assign_regions(4, 16, 16, 0.5, 123).unwrap();
        assert_eq!(m, m2);
        let all_neg = assign_regions(4, 16, 16, 0.0, 7).unwrap();
        assert!(all_neg.filter_betas().iter().all(|&b| b == -1));
        // K*P non-integer in per-filter mode is rejected.
        assert!(assign_regions(3, 16, 16, 0.5, 1).is_err());
        // Sub-filter tiling has no integrality requirement.
        let sub = assign_regions(3, 16, 8, 0.5, 1).unwrap();
        assert_eq!(sub.region_count(), 6);
        assert_eq!(sub.filter_betas().iter().filter(|&&b| b == 1).count(), 3);
    }

    #[test]
    fn density_edge_cases() {
        let zeros = quantize_ternary(&Tensor4::zeros([1, 1, 2, 2]), 0.5).unwrap();
        assert_eq!(density(&zeros), 0.0);
    }

    #[test]
    fn unique_value_bounds_per_filter() {
        let mut rng = Xorshift64Star::new(5);
        let data: Vec<f32> = (0..3 * 3 * 4 * 8).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let w = tensor([3, 3, 4, 8], data);
        let delta = compute_delta(&w, 0.05).unwrap();
        let map = assign_regions(8, 4, 4, 0.5, 2).unwrap();
        for (layer, bound) in [
            (quantize_binary(&w).unwrap(), 2),
            (quantize_signed_binary(&w, &map, delta).unwrap(), 2),
            (quantize_ternary(&w, delta).unwrap(), 3),
        ] {
            for ki in 0..8 {
                let mut seen = std::collections::BTreeSet::new();
                for ri in 0..3 {
                    for si in 0..3 {
                        for ci in 0..4 {
                            seen.insert(layer.value_at(ri, si, ci, ki));
                        }
                    }
                }
                assert!(seen.len() <= bound, "filter {ki} has {} values", seen.len());
            }
        }
    }

    #[test]
    fn signed_binary_agrees_with_ternary_where_signs_match() {
        let mut rng = Xorshift64Star::new(21);
        let data: Vec<f32> = (0..3 * 3 * 4 * 4).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let w = tensor([3, 3, 4, 4], data);
        let delta = compute_delta(&w, 0.05).unwrap();
        let map = assign_regions(4, 4, 4, 0.5, 3).unwrap();
        let sb = quantize_signed_binary(&w, &map, delta).unwrap();
        let t = quantize_ternary(&w, delta).unwrap();
        for ki in 0..4 {
            let beta = map.beta(ki, 0);
            for ri in 0..3 {
                for si in 0..3 {
                    for ci in 0..4 {
                        let sv = sb.value_at(ri, si, ci, ki);
                        let tv = t.value_at(ri, si, ci, ki);
                        if tv.signum() == beta {
                            // Boundary |w| == delta differs (>= vs >), but
                            // random draws never land exactly on it.
                            assert_eq!(sv, tv);
                        } else {
                            assert_eq!(sv, 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn laplace_sparsity_matches_cdf_mass() {
        // Monte-Carlo oracle: for Laplace(0, b) samples and threshold
        // delta, the zero fraction should match the closed-form CDF mass
        // of (-delta, delta), i.e. 1 - exp(-delta/b), within 2pp at 1e6
        // samples.
        let b = 0.4f64;
        let n = 1_000_000usize;
        let mut rng = Xorshift64Star::new(77);
        let samples: Vec<f32> = (0..n)
            .map(|_| {
                let u = rng.next_f64() - 0.5;
                (-b * (1.0 - 2.0 * u.abs()).ln() * u.signum()) as f32
            })
            .collect();
        let w = Tensor4::from_data([1, 1, 1000, 1000], samples).unwrap();
        let delta = compute_delta(&w, 0.05).unwrap();
        let q = quantize_ternary(&w, delta).unwrap();
        let sparsity = 1.0 - density(&q);
        let expected = 1.0 - (-(delta as f64) / b).exp();
        assert!(
            (sparsity - expected).abs() < 0.02,
            "sparsity {sparsity} vs Laplace mass {expected}"
        );
    }
}
