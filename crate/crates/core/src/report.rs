//! Benchmark profiles and efficiency analysis: planned-op accounting,
//! wall-clock timing over repeated trials, density and throughput
//! potential, and unique-filter-pattern counts.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pack::PackedModel;
use crate::quantize::{density, QuantVariant, QuantizedLayer};
use crate::repkernel::{build_plan, execute_plan, execute_plan_parallel, synth_layer};
use crate::rng::Xorshift64Star;
use crate::tensor::{count_naive_ops, ConvSpec, OpCounts, Tensor4};

/// A named convolution shape plus the spatial extent it is benchmarked at.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub r: usize,
    pub s: usize,
    pub c: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    /// Square input height and width used for execution and op counting.
    pub input_hw: usize,
}

impl LayerShape {
    pub fn spec(&self) -> Result<ConvSpec> {
        ConvSpec::new(self.r, self.s, self.c, self.k, self.stride, self.padding)
    }

    pub fn input_dims(&self) -> [usize; 4] {
        [1, self.input_hw, self.input_hw, self.c]
    }
}

/// The quantized convolutions of an 18-layer residual network: four
/// stages of two basic blocks, plus the 1x1 downsample convolutions. The
/// stem and classifier stay full precision and are excluded. Spatial
/// extents are scaled down so a full benchmark pass stays desk-sized
/// while preserving the per-stage halving.
pub fn resnet18_layers() -> Vec<LayerShape> {
    let mut layers = Vec::new();
    let mut push = |name: &str, r, s, c, k, stride, padding, hw| {
        layers.push(LayerShape {
            name: name.to_string(),
            r,
            s,
            c,
            k,
            stride,
            padding,
            input_hw: hw,
        });
    };
    // Stage 1: 64 channels at 16x16.
    for i in 0..4 {
        push(&format!("stage1_conv{i}"), 3, 3, 64, 64, 1, 1, 16);
    }
    // Stages 2 to 4 halve the extent and double the width.
    let mut c = 64;
    let mut hw = 16;
    for stage in 2..=4 {
        let k = c * 2;
        push(&format!("stage{stage}_conv0"), 3, 3, c, k, 2, 1, hw);
        push(&format!("stage{stage}_down"), 1, 1, c, k, 2, 0, hw);
        hw /= 2;
        for i in 1..4 {
            push(&format!("stage{stage}_conv{i}"), 3, 3, k, k, 1, 1, hw);
        }
        c = k;
    }
    layers
}

/// One benchmarked layer. Planned-op fields are exact and machine
/// independent; wall-clock fields depend on the environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerProfile {
    pub name: String,
    pub scheme: String,
    pub sparsity_support: bool,
    pub plan_ops: OpCounts,
    pub naive_ops: OpCounts,
    pub reduction: f64,
    pub wall_min_s: f64,
    pub wall_median_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub scheme: String,
    pub sparsity_support: bool,
    pub sparsity: f64,
    pub trials: usize,
    pub seed: u64,
    pub parallel: bool,
    pub layers: Vec<LayerProfile>,
    pub total_plan_ops: u64,
    pub total_naive_ops: u64,
    pub total_wall_min_s: f64,
    pub total_wall_median_s: f64,
    pub mean_density: f64,
}

impl EfficiencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Benchmarks one scheme over a layer list with synthetic weights at the
/// given sparsity. Each layer is executed `trials` times on a fixed
/// random input; minimum and median wall-clock are recorded.
pub fn bench_layers(
    shapes: &[LayerShape],
    variant: QuantVariant,
    sparsity: f64,
    sparsity_support: bool,
    trials: usize,
    seed: u64,
    parallel: bool,
) -> Result<EfficiencyReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be > 0".into()));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    let mut total_plan = 0u64;
    let mut total_naive = 0u64;
    let mut total_min = 0.0f64;
    let mut total_median = 0.0f64;
    let mut density_sum = 0.0f64;
    for (i, shape) in shapes.iter().enumerate() {
        let spec = shape.spec()?;
        let layer = synth_layer(variant, spec.weight_dims(), sparsity, seed.wrapping_add(i as u64))?;
        density_sum += density(&layer);
        let plan = build_plan(&layer, &spec, sparsity_support, spec.c)?;
        let in_dims = shape.input_dims();
        let out_dims = spec.out_dims(in_dims)?;
        let plan_ops = plan.op_counts_for(out_dims);
        let naive_ops = count_naive_ops(&spec, out_dims);
        let mut rng = Xorshift64Star::new(seed ^ 0x77 ^ i as u64);
        let input = Tensor4::from_data(
            in_dims,
            (0..in_dims.iter().product())
                .map(|_| rng.uniform(-1.0, 1.0) as f32)
                .collect(),
        )?;
        let mut times = Vec::with_capacity(trials);
        for _ in 0..trials {
            let start = Instant::now();
            let out = if parallel {
                execute_plan_parallel(&plan, &input)?
            } else {
                execute_plan(&plan, &input)?
            };
            times.push(start.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
        let wall_min = times.iter().cloned().fold(f64::INFINITY, f64::min);
        let wall_median = median(&mut times);
        total_plan += plan_ops.total();
        total_naive += naive_ops.total();
        total_min += wall_min;
        total_median += wall_median;
        layers.push(LayerProfile {
            name: shape.name.clone(),
            scheme: variant.to_string(),
            sparsity_support,
            plan_ops,
            naive_ops,
            reduction: naive_ops.total() as f64 / plan_ops.total().max(1) as f64,
            wall_min_s: wall_min,
            wall_median_s: wall_median,
        });
    }
    Ok(EfficiencyReport {
        scheme: variant.to_string(),
        sparsity_support,
        sparsity,
        trials,
        seed,
        parallel,
        layers,
        total_plan_ops: total_plan,
        total_naive_ops: total_naive,
        total_wall_min_s: total_min,
        total_wall_median_s: total_median,
        mean_density: density_sum / shapes.len().max(1) as f64,
    })
}

/// Density-based efficiency figures for a quantized model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityReport {
    pub density: f64,
    /// 1 / density: the speedup available if every ineffectual
    /// multiplication were skipped.
    pub throughput_potential: f64,
    /// Fraction of multiplications that move energy; a proxy, not a
    /// simulation.
    pub energy_proxy: f64,
    pub unique_filter_patterns: usize,
    pub total_filter_patterns: usize,
}

/// Distinct R x S value patterns over all (channel, filter) pairs.
pub fn unique_filter_patterns(layer: &QuantizedLayer) -> usize {
    use std::collections::HashSet;
    let [r, s, c, k] = layer.dims();
    let mut seen = HashSet::new();
    for ci in 0..c {
        for ki in 0..k {
            let mut pattern = Vec::with_capacity(r * s);
            for ri in 0..r {
                for si in 0..s {
                    pattern.push(layer.value_at(ri, si, ci, ki));
                }
            }
            seen.insert(pattern);
        }
    }
    seen.len()
}

pub fn analyze_layer(layer: &QuantizedLayer) -> DensityReport {
    let d = density(layer);
    let [_, _, c, k] = layer.dims();
    DensityReport {
        density: d,
        throughput_potential: if d > 0.0 { 1.0 / d } else { f64::INFINITY },
        energy_proxy: d,
        unique_filter_patterns: unique_filter_patterns(layer),
        total_filter_patterns: c * k,
    }
}

pub fn analyze_packed(packed: &PackedModel) -> Result<DensityReport> {
    let layer = crate::pack::unpack(packed)?;
    Ok(analyze_layer(&layer))
}

/// CSV rows for a multi-scheme sparsity sweep, with a reproducibility
/// header embedding the shape, grid and seed.
pub fn sweep_csv(
    spec: &ConvSpec,
    variants: &[QuantVariant],
    grid: &[f64],
    seed: u64,
) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!(
        "# shape=[{},{},{},{}] seed={seed}\n",
        spec.r, spec.s, spec.c, spec.k
    ));
    out.push_str("scheme,sparsity,reduction,plan_ops\n");
    for &variant in variants {
        let points = crate::repkernel::sweep_sparsity(spec, variant, grid, seed)?;
        for p in points {
            out.push_str(&format!(
                "{variant},{},{},{}\n",
                p.sparsity, p.reduction, p.plan_ops
            ));
        }
    }
    Ok(out)
}
