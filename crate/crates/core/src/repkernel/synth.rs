//! Synthetic quantized layers and the sparsity sweep.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::quantize::{assign_regions, QuantScheme, QuantVariant, QuantizedLayer};
use crate::rng::Xorshift64Star;
use crate::tensor::ConvSpec;

use super::{arithmetic_reduction, build_plan};

/// One row of a sparsity sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SparsityPoint {
    pub sparsity: f64,
    pub reduction: f64,
    pub plan_ops: u64,
}

/// Generates a synthetic layer at a target sparsity with equal positive
/// and negative mix. Binary layers ignore the sparsity target (they have
/// no zero level); signed-binary layers draw per-filter sign-factors with
/// P = 0.5 first, then zero out weights independently.
pub fn synth_layer(
    variant: QuantVariant,
    dims: [usize; 4],
    sparsity: f64,
    seed: u64,
) -> Result<QuantizedLayer> {
    let [r, s, c, k] = dims;
    let total = r * s * c * k;
    let mut rng = Xorshift64Star::new(seed);
    match variant {
        QuantVariant::Binary => {
            let values = (0..total)
                .map(|_| if rng.next_f64() < 0.5 { 1i8 } else { -1i8 })
                .collect();
            QuantizedLayer::from_parts(dims, values, QuantScheme::binary(), None, 0.0)
        }
        QuantVariant::Ternary => {
            let values = (0..total)
                .map(|_| {
                    let u = rng.next_f64();
                    if u < sparsity {
                        0i8
                    } else if u < sparsity + (1.0 - sparsity) / 2.0 {
                        1i8
                    } else {
                        -1i8
                    }
                })
                .collect();
            QuantizedLayer::from_parts(dims, values, QuantScheme::ternary(), None, 0.0)
        }
        QuantVariant::SignedBinary => {
            // K is even in every benchmark shape, giving an exact 50/50
            // filter split.
            let map = assign_regions(k, c, c, 0.5, seed)?;
            let mut values = vec![0i8; total];
            for (i, v) in values.iter_mut().enumerate() {
                if rng.next_f64() >= sparsity {
                    *v = map.filter_betas()[i % k];
                }
            }
            QuantizedLayer::from_parts(dims, values, QuantScheme::signed_binary(), Some(map), 0.0)
        }
    }
}

/// Arithmetic reduction across a sparsity grid for one scheme, synthetic
/// uniformly distributed weights, sparsity support on.
pub fn sweep_sparsity(
    spec: &ConvSpec,
    variant: QuantVariant,
    sparsity_grid: &[f64],
    seed: u64,
) -> Result<Vec<SparsityPoint>> {
    let tile = spec.c;
    sparsity_grid
        .iter()
        .map(|&sparsity| {
            let layer = synth_layer(variant, spec.weight_dims(), sparsity, seed)?;
            let plan = build_plan(&layer, spec, true, tile)?;
            Ok(SparsityPoint {
                sparsity,
                reduction: arithmetic_reduction(&plan),
                plan_ops: plan.op_counts.total(),
            })
        })
        .collect()
}
