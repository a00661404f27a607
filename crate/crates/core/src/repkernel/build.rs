//! Plan construction: value grouping, zero handling, cross-filter reuse.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::quantize::{QuantVariant, QuantizedLayer};
use crate::tensor::{ConvSpec, OpCounts, Tensor4};

use super::{NodeId, Offset, PlanNode, RepetitionPlan};

/// Builds a plan for a quantized layer. For signed-binary layers the tile
/// must sit inside a single beta region (local binarization), which is
/// checked against the layer's region map.
pub fn build_plan(
    layer: &QuantizedLayer,
    spec: &ConvSpec,
    sparsity_support: bool,
    tile_size: usize,
) -> Result<RepetitionPlan> {
    if layer.dims() != spec.weight_dims() {
        return Err(Error::ShapeMismatch(format!(
            "layer {:?} does not match spec {:?}",
            layer.dims(),
            spec.weight_dims()
        )));
    }
    if layer.scheme.variant == QuantVariant::SignedBinary {
        let map = layer
            .region_map
            .as_ref()
            .ok_or(Error::UncoveredRegion("signed-binary layer without region map".into()))?;
        let c_t = map.c_t();
        // Every tile [lo, lo+tile) must live inside one region.
        let mut lo = 0;
        while lo < spec.c {
            let hi = (lo + tile_size).min(spec.c);
            if lo / c_t != (hi - 1) / c_t {
                return Err(Error::TileCrossesRegion { lo, hi, region: c_t });
            }
            lo = hi;
        }
    }
    build_plan_tensor(&layer.dequantize(), spec, sparsity_support, tile_size)
}

/// Builds a plan from raw weights with (few) repeated values. Grouping is
/// by exact value; this also serves arbitrary-valued worked examples.
pub fn build_plan_tensor(
    weights: &Tensor4,
    spec: &ConvSpec,
    sparsity_support: bool,
    tile_size: usize,
) -> Result<RepetitionPlan> {
    if weights.dims() != spec.weight_dims() {
        return Err(Error::ShapeMismatch(format!(
            "weights {:?} do not match spec {:?}",
            weights.dims(),
            spec.weight_dims()
        )));
    }
    if tile_size == 0 || spec.c % tile_size != 0 {
        return Err(Error::InvalidArgument(format!(
            "tile_size {} must divide C = {}",
            tile_size, spec.c
        )));
    }

    let mut builder = Builder::default();
    let tiles = spec.c / tile_size;
    for k in 0..spec.k {
        let mut terms: Vec<NodeId> = Vec::new();
        for tile in 0..tiles {
            let c_lo = tile * tile_size;
            let c_hi = c_lo + tile_size;
            // Group offsets by exact weight value, deterministic order.
            let mut groups: Vec<(f32, Vec<Offset>)> = Vec::new();
            let mut index: HashMap<u32, usize> = HashMap::new();
            for r in 0..spec.r {
                for s in 0..spec.s {
                    for c in c_lo..c_hi {
                        let v = weights.get(r, s, c, k);
                        if v == 0.0 && sparsity_support {
                            continue;
                        }
                        let off = Offset { r: r as u16, s: s as u16, c: c as u32 };
                        match index.get(&v.to_bits()) {
                            Some(&g) => groups[g].1.push(off),
                            None => {
                                index.insert(v.to_bits(), groups.len());
                                groups.push((v, vec![off]));
                            }
                        }
                    }
                }
            }
            // Positive groups first so negated groups land in subtraction
            // slots of the accumulate.
            groups.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite weights"));
            for (value, offsets) in groups {
                let gather = builder.gather(offsets);
                let node = if value == 1.0 {
                    gather
                } else if value == -1.0 {
                    builder.negate(gather)
                } else {
                    builder.scale(gather, value)
                };
                terms.push(node);
            }
        }
        let source = match terms.as_slice() {
            [single] => *single,
            _ => builder.accumulate(terms),
        };
        builder.output(k, source);
    }

    let op_counts = builder.count();
    Ok(RepetitionPlan {
        nodes: builder.nodes,
        spec: *spec,
        sparsity_support,
        tile_size,
        op_counts,
    })
}

#[derive(Default)]
struct Builder {
    nodes: Vec<PlanNode>,
    gather_ids: HashMap<Vec<Offset>, NodeId>,
    negate_ids: HashMap<NodeId, NodeId>,
    scale_ids: HashMap<(NodeId, u32), NodeId>,
}

impl Builder {
    fn push(&mut self, node: PlanNode) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    fn gather(&mut self, offsets: Vec<Offset>) -> NodeId {
        if let Some(&id) = self.gather_ids.get(&offsets) {
            return id;
        }
        let id = self.push(PlanNode::GatherSum { offsets: offsets.clone() });
        self.gather_ids.insert(offsets, id);
        id
    }

    fn negate(&mut self, operand: NodeId) -> NodeId {
        if let Some(&id) = self.negate_ids.get(&operand) {
            return id;
        }
        let id = self.push(PlanNode::Negate { operand });
        self.negate_ids.insert(operand, id);
        id
    }

    fn scale(&mut self, operand: NodeId, alpha: f32) -> NodeId {
        let key = (operand, alpha.to_bits());
        if let Some(&id) = self.scale_ids.get(&key) {
            return id;
        }
        let id = self.push(PlanNode::Scale { operand, alpha });
        self.scale_ids.insert(key, id);
        id
    }

    fn accumulate(&mut self, terms: Vec<NodeId>) -> NodeId {
        self.push(PlanNode::Accumulate { terms })
    }

    fn output(&mut self, filter: usize, source: NodeId) -> NodeId {
        self.push(PlanNode::Output { filter, source })
    }

    fn count(&self) -> OpCounts {
        let mut counts = OpCounts::default();
        for node in &self.nodes {
            match node {
                PlanNode::GatherSum { offsets } => {
                    counts.additions += offsets.len().saturating_sub(1) as u64;
                }
                PlanNode::Negate { .. } => {}
                PlanNode::Scale { .. } => {
                    // Scale nodes only exist for alpha outside {+1, -1};
                    // the alpha = 0 case is the zero group kept under
                    // repetition-only execution.
                    counts.multiplies += 1;
                }
                PlanNode::Accumulate { terms } => {
                    for &t in terms.iter().skip(1) {
                        if matches!(self.nodes[t], PlanNode::Negate { .. }) {
                            counts.subtractions += 1;
                        } else {
                            counts.additions += 1;
                        }
                    }
                }
                PlanNode::Output { .. } => {}
            }
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantize::{assign_regions, quantize_signed_binary};

    fn tap_spec() -> ConvSpec {
        ConvSpec::new(1, 1, 4, 1, 1, 0).unwrap()
    }

    #[test]
    fn worked_example_counts() {
        // a(w+y+z) + b(x) with a=2, b=3: three additions (two in the
        // gather, one accumulating the b term), two scale multiplies.
        let w = Tensor4::from_data([1, 1, 4, 1], vec![2.0, 3.0, 2.0, 2.0]).unwrap();
        let plan = build_plan_tensor(&w, &tap_spec(), true, 4).unwrap();
        assert_eq!(plan.op_counts.additions, 3);
        assert_eq!(plan.op_counts.multiplies, 2);
        assert_eq!(plan.op_counts.subtractions, 0);
        assert_eq!(plan.op_counts.total(), 5);
    }

    #[test]
    fn worked_example_with_zero_and_sparsity() {
        // b = 0 and sparsity on: a(w+y+z) only.
        let w = Tensor4::from_data([1, 1, 4, 1], vec![2.0, 0.0, 2.0, 2.0]).unwrap();
        let plan = build_plan_tensor(&w, &tap_spec(), true, 4).unwrap();
        assert_eq!(plan.op_counts.additions, 2);
        assert_eq!(plan.op_counts.multiplies, 1);
        assert_eq!(plan.op_counts.total(), 3);

        // Sparsity off keeps the zero group: + one multiply (by zero) and
        // one accumulate addition.
        let plan_off = build_plan_tensor(&w, &tap_spec(), false, 4).unwrap();
        assert_eq!(plan_off.op_counts.additions, 3);
        assert_eq!(plan_off.op_counts.multiplies, 2);
    }

    #[test]
    fn identical_filters_share_gathers() {
        let spec2 = ConvSpec::new(1, 1, 4, 2, 1, 0).unwrap();
        // Two identical +-1 filters (interleaved K-major storage).
        let w = Tensor4::from_data(
            [1, 1, 4, 2],
            vec![1.0, 1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let spec1 = ConvSpec::new(1, 1, 4, 1, 1, 0).unwrap();
        let w1 = Tensor4::from_data([1, 1, 4, 1], vec![1.0, -1.0, 1.0, 1.0]).unwrap();
        let one = build_plan_tensor(&w1, &spec1, true, 4).unwrap();
        let two = build_plan_tensor(&w, &spec2, true, 4).unwrap();
        // Marginal gather cost of the duplicate filter is zero; only its
        // accumulate (one subtraction for the negated group) is new.
        assert_eq!(two.op_counts.additions, one.op_counts.additions);
        assert_eq!(two.op_counts.subtractions, one.op_counts.subtractions + 1);
        let gathers =
            |p: &RepetitionPlan| p.nodes.iter().filter(|n| matches!(n, PlanNode::GatherSum { .. })).count();
        assert_eq!(gathers(&one), gathers(&two));
    }

    #[test]
    fn signed_binary_tile_crossing_is_rejected() {
        let spec = ConvSpec::new(1, 1, 4, 2, 1, 0).unwrap();
        let w = Tensor4::from_data([1, 1, 4, 2], vec![0.5; 8]).unwrap();
        // Regions of 2 channels within each filter.
        let map = assign_regions(2, 4, 2, 0.5, 1).unwrap();
        let layer = quantize_signed_binary(&w, &map, 0.1).unwrap();
        // tile_size 4 spans two 2-channel regions.
        let err = build_plan(&layer, &spec, true, 4);
        assert!(matches!(err, Err(Error::TileCrossesRegion { .. })));
        // tile_size 2 respects local binarization.
        assert!(build_plan(&layer, &spec, true, 2).is_ok());
    }

    #[test]
    fn deterministic_construction() {
        let w = Tensor4::from_data(
            [1, 1, 8, 2],
            vec![1.0, -1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0, -1.0, -1.0, 0.0, 0.0, 1.0, -1.0, 1.0, 1.0],
        )
        .unwrap();
        let spec = ConvSpec::new(1, 1, 8, 2, 1, 0).unwrap();
        let a = build_plan_tensor(&w, &spec, true, 4).unwrap();
        let b = build_plan_tensor(&w, &spec, true, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_json_round_trip() {
        let w = Tensor4::from_data([1, 1, 4, 1], vec![1.0, -1.0, 0.0, 1.0]).unwrap();
        let plan = build_plan_tensor(&w, &tap_spec(), true, 4).unwrap();
        let back = RepetitionPlan::from_json(&plan.to_json()).unwrap();
        assert_eq!(back, plan);
    }
}
