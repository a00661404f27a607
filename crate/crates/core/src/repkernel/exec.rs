//! Plan execution over NHWC activations.
//!
//! The per-pixel node program is compiled once into flattened activation
//! offsets against a zero-padded copy of the input, then replayed at every
//! output position. The plan and input are read-only during execution;
//! each worker in the parallel path owns a disjoint slice of the output.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

use super::{PlanNode, RepetitionPlan};

enum Compiled {
    Gather(Vec<u32>),
    Negate(usize),
    Scale(usize, f32),
    Accumulate(Vec<usize>),
    Output(usize, usize),
}

fn compile(plan: &RepetitionPlan, padded_w: usize, channels: usize) -> Vec<Compiled> {
    plan.nodes
        .iter()
        .map(|node| match node {
            PlanNode::GatherSum { offsets } => Compiled::Gather(
                offsets
                    .iter()
                    .map(|o| ((o.r as usize * padded_w + o.s as usize) * channels + o.c as usize) as u32)
                    .collect(),
            ),
            PlanNode::Negate { operand } => Compiled::Negate(*operand),
            PlanNode::Scale { operand, alpha } => Compiled::Scale(*operand, *alpha),
            PlanNode::Accumulate { terms } => Compiled::Accumulate(terms.clone()),
            PlanNode::Output { filter, source } => Compiled::Output(*filter, *source),
        })
        .collect()
}

fn pad_input(input: &Tensor4, pad: usize) -> Tensor4 {
    if pad == 0 {
        return input.clone();
    }
    let [n, h, w, c] = input.dims();
    let mut out = Tensor4::zeros([n, h + 2 * pad, w + 2 * pad, c]);
    for ni in 0..n {
        for y in 0..h {
            let src = input.idx(ni, y, 0, 0);
            let dst = out.idx(ni, y + pad, pad, 0);
            out.data_mut()[dst..dst + w * c].copy_from_slice(&input.data()[src..src + w * c]);
        }
    }
    out
}

#[inline]
fn run_pixel(program: &[Compiled], base: &[f32], vals: &mut [f32], out_pixel: &mut [f32]) {
    for (i, node) in program.iter().enumerate() {
        vals[i] = match node {
            Compiled::Gather(deltas) => {
                let mut acc = 0.0f32;
                for &d in deltas {
                    acc += base[d as usize];
                }
                acc
            }
            Compiled::Negate(op) => -vals[*op],
            Compiled::Scale(op, alpha) => vals[*op] * alpha,
            Compiled::Accumulate(terms) => {
                let mut acc = 0.0f32;
                for &t in terms {
                    acc += vals[t];
                }
                acc
            }
            Compiled::Output(filter, source) => {
                out_pixel[*filter] = vals[*source];
                0.0
            }
        };
    }
}

pub fn execute_plan(plan: &RepetitionPlan, input: &Tensor4) -> Result<Tensor4> {
    execute_inner(plan, input, false)
}

/// Parallelizes over output rows. Results are identical to the serial
/// path; reported separately by the benchmark driver.
pub fn execute_plan_parallel(plan: &RepetitionPlan, input: &Tensor4) -> Result<Tensor4> {
    execute_inner(plan, input, true)
}

fn execute_inner(plan: &RepetitionPlan, input: &Tensor4, parallel: bool) -> Result<Tensor4> {
    let spec = &plan.spec;
    let out_dims = spec.out_dims(input.dims())?;
    let [_, oh, ow, k] = out_dims;
    let padded = pad_input(input, spec.padding);
    let [_, _, pw, c] = padded.dims();
    let program = compile(plan, pw, c);
    let mut out = Tensor4::zeros(out_dims);

    let row_len = ow * k;
    let do_row = |ni: usize, oy: usize, row: &mut [f32], vals: &mut Vec<f32>| {
        for ox in 0..ow {
            let base_idx = padded.idx(ni, oy * spec.stride, ox * spec.stride, 0);
            run_pixel(
                &program,
                &padded.data()[base_idx..],
                vals,
                &mut row[ox * k..(ox + 1) * k],
            );
        }
    };

    if parallel {
        out.data_mut()
            .par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(row_i, row)| {
                let ni = row_i / oh;
                let oy = row_i % oh;
                let mut vals = vec![0.0f32; program.len()];
                do_row(ni, oy, row, &mut vals);
            });
    } else {
        let mut vals = vec![0.0f32; program.len()];
        for (row_i, row) in out.data_mut().chunks_mut(row_len).enumerate() {
            do_row(row_i / oh, row_i % oh, row, &mut vals);
        }
    }

    if !out.data().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("execute_plan"));
    }
    Ok(out)
}
