//! Repetition-and-sparsity-aware convolution plans.
//!
//! A plan is a DAG of partial-sum nodes instantiated once per layer and
//! replayed at every output position (weights are static during
//! inference). Within each filter-tile, positions are grouped by
//! quantized value: activations sharing a weight value are summed first
//! and the sum is scaled once, so `[a, b, a, a] . [w, x, y, z]` becomes
//! `a*(w+y+z) + b*x`. Tiles with identical offset signatures share one
//! GatherSum across filters.
//!
//! Operation accounting, applied per node and counted once for shared
//! nodes:
//!
//! * GatherSum of m offsets: max(m-1, 0) additions
//! * Negate: 0 (folded into a subtraction at the accumulate)
//! * Scale by +-1: 0; by any other value (including the zero group kept
//!   when sparsity support is off): 1 multiply
//! * Accumulate of j terms: j-1 operations, a subtraction where the term
//!   is negated, an addition otherwise; the first term is free
//! * Output: 0

mod build;
mod exec;
mod synth;

pub use build::{build_plan, build_plan_tensor};
pub use exec::{execute_plan, execute_plan_parallel};
pub use synth::{sweep_sparsity, synth_layer, SparsityPoint};

use serde::{Deserialize, Serialize};

use crate::tensor::{ConvSpec, OpCounts};

pub type NodeId = usize;

/// Activation tap relative to the output position: kernel row, kernel
/// column, input channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offset {
    pub r: u16,
    pub s: u16,
    pub c: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum PlanNode {
    /// Sum of activations at a duplicate-free, non-empty set of offsets.
    GatherSum { offsets: Vec<Offset> },
    Negate { operand: NodeId },
    Scale { operand: NodeId, alpha: f32 },
    /// Sum of previously computed partial sums. An empty list is the zero
    /// constant (an all-zero filter under sparsity support).
    Accumulate { terms: Vec<NodeId> },
    Output { filter: usize, source: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionPlan {
    /// Topologically ordered: operands precede their consumers.
    pub nodes: Vec<PlanNode>,
    pub spec: ConvSpec,
    pub sparsity_support: bool,
    pub tile_size: usize,
    /// Static per-output-position tally.
    pub op_counts: OpCounts,
}

impl RepetitionPlan {
    /// Op counts scaled to a full output tensor.
    pub fn op_counts_for(&self, out_dims: [usize; 4]) -> OpCounts {
        let pixels = (out_dims[0] * out_dims[1] * out_dims[2]) as u64;
        OpCounts {
            additions: self.op_counts.additions * pixels,
            subtractions: self.op_counts.subtractions * pixels,
            multiplies: self.op_counts.multiplies * pixels,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> crate::error::Result<Self> {
        serde_json::from_str(s).map_err(|e| crate::error::Error::CorruptFile(e.to_string()))
    }
}

impl std::fmt::Display for RepetitionPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "plan: {}x{}x{}x{} tile={} sparsity={} ops/pixel: {} add, {} sub, {} mul",
            self.spec.r,
            self.spec.s,
            self.spec.c,
            self.spec.k,
            self.tile_size,
            self.sparsity_support,
            self.op_counts.additions,
            self.op_counts.subtractions,
            self.op_counts.multiplies,
        )?;
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                PlanNode::GatherSum { offsets } => {
                    write!(f, "  n{i}: gather[")?;
                    for (j, o) in offsets.iter().enumerate() {
                        if j > 0 {
                            write!(f, " ")?;
                        }
                        write!(f, "({},{},{})", o.r, o.s, o.c)?;
                    }
                    writeln!(f, "]")?;
                }
                PlanNode::Negate { operand } => writeln!(f, "  n{i}: neg n{operand}")?,
                PlanNode::Scale { operand, alpha } => {
                    writeln!(f, "  n{i}: scale n{operand} * {alpha}")?
                }
                PlanNode::Accumulate { terms } => {
                    write!(f, "  n{i}: acc")?;
                    for t in terms {
                        write!(f, " n{t}")?;
                    }
                    writeln!(f)?;
                }
                PlanNode::Output { filter, source } => {
                    writeln!(f, "  n{i}: out[{filter}] = n{source}")?
                }
            }
        }
        Ok(())
    }
}

/// naive dense ops / plan ops at matching output size (per output
/// position; the ratio is independent of spatial extent). A fully empty
/// plan counts as one operation to keep the ratio finite.
pub fn arithmetic_reduction(plan: &RepetitionPlan) -> f64 {
    let naive = crate::tensor::count_naive_ops(&plan.spec, [1, 1, 1, plan.spec.k]);
    naive.total() as f64 / plan.op_counts.total().max(1) as f64
}
