//! Shared fixtures for the criterion benchmarks.

use plum_core::quantize::QuantVariant;
use plum_core::repkernel::{build_plan, synth_layer, RepetitionPlan};
use plum_core::rng::Xorshift64Star;
use plum_core::tensor::{ConvSpec, Tensor4};

/// A plan over a mid-size layer with a matching random input.
pub struct Fixture {
    pub plan: RepetitionPlan,
    pub input: Tensor4,
}

pub fn fixture(variant: QuantVariant, sparsity: f64, sparsity_support: bool) -> Fixture {
    let spec = ConvSpec::new(3, 3, 64, 64, 1, 1).expect("valid spec");
    let layer = synth_layer(variant, spec.weight_dims(), sparsity, 7).expect("synth layer");
    let plan = build_plan(&layer, &spec, sparsity_support, spec.c).expect("plan builds");
    let dims = [1, 16, 16, 64];
    let mut rng = Xorshift64Star::new(11);
    let input = Tensor4::from_data(
        dims,
        (0..dims.iter().product())
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect(),
    )
    .expect("finite input");
    Fixture { plan, input }
}
