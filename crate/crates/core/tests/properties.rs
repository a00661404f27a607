//! Cross-module properties: plan execution against the direct
//! convolution oracle, linearity, padding equivalence, op-count
//! monotonicity, and packed-model round trips.

use proptest::prelude::*;

use plum_core::pack::{pack, unpack};
use plum_core::quantize::{assign_regions, density, QuantVariant};
use plum_core::repkernel::{build_plan, execute_plan, synth_layer, sweep_sparsity};
use plum_core::rng::Xorshift64Star;
use plum_core::tensor::{naive_conv2d, ConvSpec, Tensor4};

fn random_input(dims: [usize; 4], seed: u64) -> Tensor4 {
    let mut rng = Xorshift64Star::new(seed);
    Tensor4::from_data(
        dims,
        (0..dims.iter().product())
            .map(|_| rng.uniform(-1.0, 1.0) as f32)
            .collect(),
    )
    .unwrap()
}

// Relative to the dot-product scale: each output sums up to `taps`
// products of magnitude <= 1, so rounding error grows with that length.
fn assert_close(a: &Tensor4, b: &Tensor4, rel: f32, taps: usize) {
    assert_eq!(a.dims(), b.dims());
    let scale_floor = taps as f32;
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        let scale = x.abs().max(y.abs()).max(scale_floor);
        assert!(
            (x - y).abs() <= rel * scale,
            "element {i}: {x} vs {y}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(80))]

    // Criterion-1 style oracle: random shapes and schemes, plan output
    // matches the direct convolution elementwise.
    #[test]
    fn plan_matches_direct_convolution(
        r in prop::sample::select(vec![1usize, 3]),
        c in prop::sample::select(vec![4usize, 16, 64]),
        k in prop::sample::select(vec![4usize, 16, 64]),
        scheme in prop::sample::select(vec![
            QuantVariant::Binary,
            QuantVariant::Ternary,
            QuantVariant::SignedBinary,
        ]),
        sparsity_support in any::<bool>(),
        sparsity in 0.0f64..0.9,
        seed in 1u64..10_000,
    ) {
        let s = r;
        let padding = r / 2;
        let spec = ConvSpec::new(r, s, c, k, 1, padding).unwrap();
        let layer = synth_layer(scheme, spec.weight_dims(), sparsity, seed).unwrap();
        let plan = build_plan(&layer, &spec, sparsity_support, c).unwrap();
        let input = random_input([1, 5, 5, c], seed ^ 0xabc);
        let got = execute_plan(&plan, &input).unwrap();
        let want = naive_conv2d(&input, &layer.dequantize(), &spec).unwrap();
        assert_close(&got, &want, 1e-5, r * s * c);
    }

    // Plans compute a linear map of the input.
    #[test]
    fn plan_execution_is_linear(seed in 1u64..1000) {
        let spec = ConvSpec::new(3, 3, 8, 8, 1, 1).unwrap();
        let layer = synth_layer(QuantVariant::SignedBinary, spec.weight_dims(), 0.4, seed).unwrap();
        let plan = build_plan(&layer, &spec, true, 8).unwrap();
        let x = random_input([1, 6, 6, 8], seed);
        let y = random_input([1, 6, 6, 8], seed ^ 1);
        let mut sum = x.clone();
        for (a, b) in sum.data_mut().iter_mut().zip(y.data()) {
            *a += b;
        }
        let out_sum = execute_plan(&plan, &sum).unwrap();
        let out_x = execute_plan(&plan, &x).unwrap();
        let out_y = execute_plan(&plan, &y).unwrap();
        let mut combined = out_x.clone();
        for (a, b) in combined.data_mut().iter_mut().zip(out_y.data()) {
            *a += b;
        }
        assert_close(&out_sum, &combined, 1e-4, 72);
    }

    // 1000 total random layers round-trip through the packed format.
    #[test]
    fn packed_layers_round_trip(seed in 1u64..100_000) {
        let mut rng = Xorshift64Star::new(seed);
        let k = 4 + 2 * rng.below(6);
        let c = 2 + rng.below(14);
        let r = 1 + rng.below(3);
        let s = 1 + rng.below(3);
        let sparsity = rng.next_f64();
        let layer = synth_layer(
            QuantVariant::SignedBinary,
            [r, s, c, k],
            sparsity,
            seed ^ 0x55,
        ).unwrap();
        let packed = pack(&layer).unwrap();
        assert_eq!(packed.payload_bits(), r * s * c * k + k);
        let back = unpack(&packed).unwrap();
        assert_eq!(back.values(), layer.values());
        assert_eq!(back.dims(), layer.dims());
    }
}

#[test]
fn padding_matches_explicit_zero_border() {
    let spec_padded = ConvSpec::new(3, 3, 4, 4, 1, 1).unwrap();
    let spec_valid = ConvSpec::new(3, 3, 4, 4, 1, 0).unwrap();
    let layer = synth_layer(QuantVariant::Ternary, [3, 3, 4, 4], 0.3, 5).unwrap();
    let input = random_input([1, 5, 5, 4], 9);
    let mut bordered = Tensor4::zeros([1, 7, 7, 4]);
    for y in 0..5 {
        for x in 0..5 {
            for c in 0..4 {
                bordered.set(0, y + 1, x + 1, c, input.get(0, y, x, c));
            }
        }
    }
    let plan = build_plan(&layer, &spec_padded, true, 4).unwrap();
    let got = execute_plan(&plan, &input).unwrap();
    let plan_valid = build_plan(&layer, &spec_valid, true, 4).unwrap();
    let want = execute_plan(&plan_valid, &bordered).unwrap();
    assert_eq!(got.dims(), want.dims());
    for (a, b) in got.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn ternary_plan_ops_decrease_with_sparsity() {
    let spec = ConvSpec::new(3, 3, 32, 32, 1, 1).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let points = sweep_sparsity(&spec, QuantVariant::Ternary, &grid, 13).unwrap();
    for pair in points.windows(2) {
        assert!(
            pair[1].plan_ops <= pair[0].plan_ops + pair[0].plan_ops / 20,
            "ops rose from {} to {} at sparsity {}",
            pair[0].plan_ops,
            pair[1].plan_ops,
            pair[1].sparsity
        );
    }
}

// Signed binary has one unique value per region, so at zero sparsity
// identical whole-region gathers are shared across filters and op counts
// collapse; mid-grid sparsity breaks the sharing. The curve dips at both
// ends of the grid rather than decreasing monotonically.
#[test]
fn signed_binary_reduction_peaks_at_grid_ends() {
    let spec = ConvSpec::new(3, 3, 32, 32, 1, 1).unwrap();
    let grid = [0.0, 0.5, 1.0];
    let points = sweep_sparsity(&spec, QuantVariant::SignedBinary, &grid, 13).unwrap();
    assert!(points[0].reduction > points[1].reduction);
    assert!(points[2].reduction > points[1].reduction);
}

#[test]
fn signed_binary_reduction_dominates_ternary() {
    let spec = ConvSpec::new(3, 3, 32, 32, 1, 1).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let ternary = sweep_sparsity(&spec, QuantVariant::Ternary, &grid, 21).unwrap();
    let sb = sweep_sparsity(&spec, QuantVariant::SignedBinary, &grid, 21).unwrap();
    for (t, s) in ternary.iter().zip(&sb) {
        assert!(
            s.reduction >= t.reduction - 1e-9,
            "sparsity {}: sb {} < ternary {}",
            t.sparsity,
            s.reduction,
            t.reduction
        );
    }
}

#[test]
fn region_assignment_respects_fraction() {
    for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let map = assign_regions(16, 8, 8, p, 3).unwrap();
        let pos = map.filter_betas().iter().filter(|&&b| b > 0).count();
        assert_eq!(pos, (16.0 * p).round() as usize);
    }
}

#[test]
fn synthetic_density_tracks_target() {
    for sparsity in [0.0, 0.35, 0.65, 1.0] {
        let layer = synth_layer(
            QuantVariant::SignedBinary,
            [3, 3, 64, 64],
            sparsity,
            17,
        )
        .unwrap();
        let d = density(&layer);
        assert!(
            (d - (1.0 - sparsity)).abs() < 0.02,
            "sparsity {sparsity}: density {d}"
        );
    }
}
