//! Model descriptions and their runtime form. A model is a flat list of
//! layers; residual blocks nest two sub-lists whose outputs are summed.

use crate::error::{Error, Result};
use crate::quantize::{assign_regions, QuantVariant};
use crate::rng::Xorshift64Star;
use crate::tensor::{ConvSpec, Tensor4};

use super::grad::EDESchedule;
use super::layers::{
    AvgPool2, BatchNorm, ConvLayer, Dense, GlobalAvgPool, PRelu, Param, QuantConfig,
};

/// One layer in a model description. `quantize` on a convolution marks it
/// as a candidate; whether it actually quantizes depends on the variant
/// chosen at build time.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { r: usize, s: usize, c: usize, k: usize, stride: usize, padding: usize, quantize: bool },
    BatchNorm { c: usize },
    PRelu { c: usize },
    AvgPool2,
    GlobalAvgPool,
    Dense { inp: usize, out: usize },
    Residual { body: Vec<LayerSpec>, shortcut: Vec<LayerSpec> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl ModelSpec {
    /// Four-layer CNN sized for 28x28x1 inputs. Only the middle two
    /// convolutions are quantization candidates; the first and last
    /// layers always stay full precision.
    pub fn small_cnn(classes: usize) -> Self {
        let conv = |c, k, quantize| LayerSpec::Conv {
            r: 3, s: 3, c, k, stride: 1, padding: 1, quantize,
        };
        Self {
            layers: vec![
                conv(1, 16, false),
                LayerSpec::BatchNorm { c: 16 },
                LayerSpec::PRelu { c: 16 },
                LayerSpec::AvgPool2,
                conv(16, 32, true),
                LayerSpec::BatchNorm { c: 32 },
                LayerSpec::PRelu { c: 32 },
                LayerSpec::AvgPool2,
                conv(32, 32, true),
                LayerSpec::BatchNorm { c: 32 },
                LayerSpec::PRelu { c: 32 },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense { inp: 32, out: classes },
            ],
            classes,
        }
    }

    /// 20-layer residual network for 32x32x3 inputs: three stages of three
    /// blocks at 16, 32 and 64 channels. Interior convolutions are
    /// quantization candidates; the stem and the classifier are not.
    pub fn resnet20(classes: usize) -> Self {
        let mut layers = vec![
            LayerSpec::Conv { r: 3, s: 3, c: 3, k: 16, stride: 1, padding: 1, quantize: false },
            LayerSpec::BatchNorm { c: 16 },
            LayerSpec::PRelu { c: 16 },
        ];
        let mut c_in = 16;
        for (stage, width) in [16usize, 32, 64].iter().enumerate() {
            for block in 0..3 {
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                let body = vec![
                    LayerSpec::Conv {
                        r: 3, s: 3, c: c_in, k: *width, stride, padding: 1, quantize: true,
                    },
                    LayerSpec::BatchNorm { c: *width },
                    LayerSpec::PRelu { c: *width },
                    LayerSpec::Conv {
                        r: 3, s: 3, c: *width, k: *width, stride: 1, padding: 1, quantize: true,
                    },
                    LayerSpec::BatchNorm { c: *width },
                ];
                let shortcut = if stride != 1 || c_in != *width {
                    vec![
                        LayerSpec::Conv {
                            r: 1, s: 1, c: c_in, k: *width, stride, padding: 0, quantize: true,
                        },
                        LayerSpec::BatchNorm { c: *width },
                    ]
                } else {
                    vec![]
                };
                layers.push(LayerSpec::Residual { body, shortcut });
                layers.push(LayerSpec::PRelu { c: *width });
                c_in = *width;
            }
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Dense { inp: 64, out: classes });
        Self { layers, classes }
    }

    pub fn conv_candidates(&self) -> usize {
        fn count(layers: &[LayerSpec]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    LayerSpec::Conv { quantize: true, .. } => 1,
                    LayerSpec::Residual { body, shortcut } => count(body) + count(shortcut),
                    _ => 0,
                })
                .sum()
        }
        count(&self.layers)
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvLayer),
    BatchNorm(BatchNorm),
    PRelu(PRelu),
    AvgPool2(AvgPool2),
    GlobalAvgPool(GlobalAvgPool),
    Dense(Dense),
    Residual { body: Vec<Layer>, shortcut: Vec<Layer> },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub classes: usize,
}

fn build_layers(
    specs: &[LayerSpec],
    variant: Option<QuantVariant>,
    fraction_pos: f64,
    rng: &mut Xorshift64Star,
) -> Result<Vec<Layer>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        out.push(match spec {
            LayerSpec::Conv { r, s, c, k, stride, padding, quantize } => {
                let cs = ConvSpec::new(*r, *s, *c, *k, *stride, *padding)?;
                let quant = match (variant, quantize) {
                    (Some(v), true) => {
                        let map = if v == QuantVariant::SignedBinary {
                            Some(assign_regions(*k, *c, *c, fraction_pos, rng.next_u64())?)
                        } else {
                            None
                        };
                        Some(QuantConfig { variant: v, map, ede: true })
                    }
                    _ => None,
                };
                Layer::Conv(ConvLayer::new(cs, quant, rng))
            }
            LayerSpec::BatchNorm { c } => Layer::BatchNorm(BatchNorm::new(*c)),
            LayerSpec::PRelu { c } => Layer::PRelu(PRelu::new(*c)),
            LayerSpec::AvgPool2 => Layer::AvgPool2(AvgPool2::default()),
            LayerSpec::GlobalAvgPool => Layer::GlobalAvgPool(GlobalAvgPool::default()),
            LayerSpec::Dense { inp, out: o } => Layer::Dense(Dense::new(*inp, *o, rng)),
            LayerSpec::Residual { body, shortcut } => Layer::Residual {
                body: build_layers(body, variant, fraction_pos, rng)?,
                shortcut: build_layers(shortcut, variant, fraction_pos, rng)?,
            },
        });
    }
    Ok(out)
}

fn forward_layers(
    layers: &mut [Layer],
    input: &Tensor4,
    training: bool,
) -> Result<Tensor4> {
    let mut x = input.clone();
    for layer in layers {
        x = match layer {
            Layer::Conv(l) => l.forward(&x)?,
            Layer::BatchNorm(l) => l.forward(&x, training)?,
            Layer::PRelu(l) => l.forward(&x),
            Layer::AvgPool2(l) => l.forward(&x),
            Layer::GlobalAvgPool(l) => l.forward(&x),
            Layer::Dense(l) => l.forward(&x)?,
            Layer::Residual { body, shortcut } => {
                let main = forward_layers(body, &x, training)?;
                let side = if shortcut.is_empty() {
                    x.clone()
                } else {
                    forward_layers(shortcut, &x, training)?
                };
                if main.dims() != side.dims() {
                    return Err(Error::ShapeMismatch(format!(
                        "residual {:?} vs {:?}",
                        main.dims(),
                        side.dims()
                    )));
                }
                let mut sum = main;
                for (a, b) in sum.data_mut().iter_mut().zip(side.data()) {
                    *a += b;
                }
                sum
            }
        };
    }
    Ok(x)
}

fn backward_layers(
    layers: &mut [Layer],
    dout: &Tensor4,
    sched: &EDESchedule,
) -> Result<Tensor4> {
    let mut g = dout.clone();
    for layer in layers.iter_mut().rev() {
        g = match layer {
            Layer::Conv(l) => l.backward(&g, sched)?,
            Layer::BatchNorm(l) => l.backward(&g)?,
            Layer::PRelu(l) => l.backward(&g)?,
            Layer::AvgPool2(l) => l.backward(&g),
            Layer::GlobalAvgPool(l) => l.backward(&g),
            Layer::Dense(l) => l.backward(&g)?,
            Layer::Residual { body, shortcut } => {
                let mut db = backward_layers(body, &g, sched)?;
                let ds = if shortcut.is_empty() {
                    g.clone()
                } else {
                    backward_layers(shortcut, &g, sched)?
                };
                for (a, b) in db.data_mut().iter_mut().zip(ds.data()) {
                    *a += b;
                }
                db
            }
        };
    }
    Ok(g)
}

fn visit_params<'a>(layers: &'a mut [Layer], out: &mut Vec<(&'a mut Param, bool)>) {
    for layer in layers {
        match layer {
            Layer::Conv(l) => out.push((&mut l.w, l.quant.is_some())),
            Layer::BatchNorm(l) => {
                out.push((&mut l.gamma, false));
                out.push((&mut l.beta, false));
            }
            Layer::PRelu(l) => out.push((&mut l.slope, false)),
            Layer::Dense(l) => {
                out.push((&mut l.w, false));
                out.push((&mut l.b, false));
            }
            Layer::Residual { body, shortcut } => {
                visit_params(body, out);
                visit_params(shortcut, out);
            }
            _ => {}
        }
    }
}

fn visit_convs<'a>(layers: &'a [Layer], out: &mut Vec<&'a ConvLayer>) {
    for layer in layers {
        match layer {
            Layer::Conv(l) => out.push(l),
            Layer::Residual { body, shortcut } => {
                visit_convs(body, out);
                visit_convs(shortcut, out);
            }
            _ => {}
        }
    }
}

impl Model {
    pub fn build(
        spec: &ModelSpec,
        variant: Option<QuantVariant>,
        fraction_pos: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = Xorshift64Star::new(seed);
        Ok(Self {
            layers: build_layers(&spec.layers, variant, fraction_pos, &mut rng)?,
            classes: spec.classes,
        })
    }

    pub fn forward(&mut self, input: &Tensor4, training: bool) -> Result<Tensor4> {
        forward_layers(&mut self.layers, input, training)
    }

    pub fn backward(&mut self, dout: &Tensor4, sched: &EDESchedule) -> Result<Tensor4> {
        backward_layers(&mut self.layers, dout, sched)
    }

    /// Every learnable parameter, paired with whether the owner is a
    /// quantized convolution (those are clamped after each step).
    pub fn params_mut(&mut self) -> Vec<(&mut Param, bool)> {
        let mut out = Vec::new();
        visit_params(&mut self.layers, &mut out);
        out
    }

    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        let mut out = Vec::new();
        visit_convs(&self.layers, &mut out);
        out
    }
}
