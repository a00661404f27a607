//! The training loop: Adam with step decay, per-epoch metrics, latent
//! clamping, and deterministic shuffling.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pack;
use crate::quantize::QuantVariant;
use crate::rng::Xorshift64Star;
use crate::tensor::Tensor4;

use super::config::{DatasetKind, ModelKind, TrainConfig};
use super::data::{load_cifar10, load_mnist, synthetic_dataset, Dataset};
use super::grad::EDESchedule;
use super::layers::softmax_cross_entropy;
use super::model::{Model, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f32,
    pub top1: f32,
}

/// A trained (or in-progress) model together with its schedule position.
#[derive(Debug)]
pub struct TrainState {
    pub model: Model,
    pub epoch: usize,
    pub total: usize,
    pub seed: u64,
    pub step: u64,
    pub metrics: Vec<EpochMetrics>,
}

impl TrainState {
    /// Region map signatures of every quantized convolution, in layer
    /// order. Compared across epochs to verify the maps never move.
    pub fn region_signature(&self) -> Vec<Vec<i8>> {
        self.model
            .conv_layers()
            .iter()
            .filter_map(|l| l.quant.as_ref())
            .filter_map(|q| q.map.as_ref())
            .map(|m| m.filter_betas().to_vec())
            .collect()
    }

    /// Writes latent weights (and packed quantized form where the layer
    /// is inter-filter signed-binary) into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (i, conv) in self.model.conv_layers().iter().enumerate() {
            let latent = conv.latent()?;
            latent.save(&dir.join(format!("conv{i}_latent.plt4")))?;
            if let Some(q) = &conv.quant {
                if q.variant == QuantVariant::SignedBinary {
                    let map = q.map.as_ref().expect("signed-binary layer has a map");
                    let delta = crate::quantize::compute_delta(&latent, 0.05)?;
                    let layer = crate::quantize::quantize_signed_binary(&latent, map, delta)?;
                    let packed = pack::pack(&layer)?;
                    packed.save(&dir.join(format!("conv{i}.plum")))?;
                }
            }
        }
        Ok(())
    }
}

fn load_dataset(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    Ok(match cfg.dataset {
        DatasetKind::Mnist => (
            load_mnist(&cfg.data_dir, true)?,
            load_mnist(&cfg.data_dir, false)?,
        ),
        DatasetKind::Cifar10 => (
            load_cifar10(&cfg.data_dir, true)?,
            load_cifar10(&cfg.data_dir, false)?,
        ),
        DatasetKind::Synthetic => {
            // One generation, then a split, so train and eval share the
            // same class templates but not the same noise draws.
            let eval_n = (cfg.synth_samples / 4).max(cfg.synth_classes);
            let all = synthetic_dataset(
                cfg.synth_samples + eval_n,
                cfg.synth_side,
                cfg.synth_side,
                cfg.synth_channels,
                cfg.synth_classes,
                cfg.synth_noise,
                cfg.seed ^ 0xa5a5,
            )?;
            all.split_at(cfg.synth_samples)
        }
    })
}

fn model_spec(cfg: &TrainConfig, classes: usize) -> Result<ModelSpec> {
    let spec = match cfg.model {
        ModelKind::SmallCnn => ModelSpec::small_cnn(classes),
        ModelKind::Resnet20 => ModelSpec::resnet20(classes),
    };
    if cfg.dataset == DatasetKind::Synthetic && cfg.model == ModelKind::SmallCnn {
        // The small CNN's stem expects one input channel; rebuild it for
        // the configured channel count.
        let mut layers = spec.layers.clone();
        if let super::model::LayerSpec::Conv { c, .. } = &mut layers[0] {
            *c = cfg.synth_channels;
        }
        return Ok(ModelSpec { layers, classes });
    }
    Ok(spec)
}

/// Top-1 accuracy of `model` in evaluation mode.
pub fn evaluate(model: &mut Model, data: &Dataset, batch_size: usize) -> Result<f32> {
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let mut correct = 0usize;
    let mut at = 0usize;
    while at < n {
        let hi = (at + batch_size).min(n);
        let indices: Vec<usize> = (at..hi).collect();
        let (images, labels) = data.batch(&indices);
        let logits = model.forward(&images, false)?;
        let classes = logits.dims()[3];
        for (bi, &label) in labels.iter().enumerate() {
            let row = &logits.data()[bi * classes..(bi + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == label as usize {
                correct += 1;
            }
        }
        at = hi;
    }
    Ok(correct as f32 / n as f32)
}

/// Trains according to `cfg`, loading the dataset it names.
pub fn train(cfg: &TrainConfig) -> Result<TrainState> {
    cfg.validate()?;
    let (train_set, eval_set) = load_dataset(cfg)?;
    train_on(cfg, &train_set, &eval_set)
}

/// Trains on already-loaded data. Deterministic given the config seed.
pub fn train_on(cfg: &TrainConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<TrainState> {
    cfg.validate()?;
    let train_set_cap;
    let train_set = if cfg.train_limit > 0 {
        train_set_cap = train_set.clone().truncate(cfg.train_limit);
        &train_set_cap
    } else {
        train_set
    };
    let eval_set_cap;
    let eval_set = if cfg.eval_limit > 0 {
        eval_set_cap = eval_set.clone().truncate(cfg.eval_limit);
        &eval_set_cap
    } else {
        eval_set
    };
    let spec = model_spec(cfg, train_set.classes)?;
    let mut model = Model::build(&spec, cfg.variant, cfg.fraction_pos, cfg.seed)?;
    if !cfg.ede {
        for layer in model.layers.iter_mut() {
            set_ede(layer, false);
        }
    }
    let mut state = TrainState {
        model,
        epoch: 0,
        total: cfg.epochs,
        seed: cfg.seed,
        step: 0,
        metrics: Vec::new(),
    };
    let region_sig = state.region_signature();

    let mut metrics_file = match &cfg.metrics_path {
        Some(path) => {
            let mut f = File::create(path)?;
            for line in cfg.to_key_values().lines() {
                writeln!(f, "# {line}")?;
            }
            writeln!(f, "epoch,loss,top1")?;
            Some(f)
        }
        None => None,
    };

    let mut rng = Xorshift64Star::new(cfg.seed ^ 0xdeadbeef);
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let sched = EDESchedule::new(epoch, cfg.epochs)?;
        let lr = cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_step.max(1)) as i32);
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (images, labels) = train_set.batch(chunk);
            let logits = state.model.forward(&images, true)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            loss_sum += loss as f64;
            batches += 1;
            for (p, _) in state.model.params_mut() {
                p.zero_grad();
            }
            state.model.backward(&dlogits, &sched)?;
            state.step += 1;
            let step = state.step;
            for (p, quantized) in state.model.params_mut() {
                p.adam_step(lr, step);
                if quantized {
                    p.clamp(-1.0, 1.0);
                }
            }
        }
        state.epoch = epoch + 1;
        let top1 = evaluate(&mut state.model, eval_set, cfg.batch_size)?;
        let m = EpochMetrics {
            epoch: epoch + 1,
            loss: (loss_sum / batches.max(1) as f64) as f32,
            top1,
        };
        if let Some(f) = &mut metrics_file {
            writeln!(f, "{},{},{}", m.epoch, m.loss, m.top1)?;
        }
        state.metrics.push(m);
        if state.region_signature() != region_sig {
            return Err(Error::InvalidArgument(
                "region maps changed during training".into(),
            ));
        }
    }
    if let Some(dir) = &cfg.checkpoint_path {
        state.save_checkpoint(dir)?;
    }
    Ok(state)
}

fn set_ede(layer: &mut super::model::Layer, on: bool) {
    use super::model::Layer;
    match layer {
        Layer::Conv(l) => {
            if let Some(q) = &mut l.quant {
                q.ede = on;
            }
        }
        Layer::Residual { body, shortcut } => {
            body.iter_mut().for_each(|l| set_ede(l, on));
            shortcut.iter_mut().for_each(|l| set_ede(l, on));
        }
        _ => {}
    }
}

/// Concatenated latent weights of every quantized convolution.
pub fn quantized_latents(state: &TrainState) -> Result<Vec<Tensor4>> {
    state
        .model
        .conv_layers()
        .iter()
        .filter(|l| l.quant.is_some())
        .map(|l| l.latent())
        .collect()
}
