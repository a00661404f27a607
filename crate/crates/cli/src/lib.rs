//! Command-line front end: benchmarking, sparsity sweeps, model analysis,
//! training, and packed-model conversion.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use plum_core::pack::{pack, unpack, PackedModel};
use plum_core::quantize::{
    assign_regions, compute_delta, density, quantize_signed_binary, QuantVariant,
};
use plum_core::report::{
    analyze_layer, bench_layers, resnet18_layers, sweep_csv, DensityReport, EfficiencyReport,
};
use plum_core::tensor::{ConvSpec, Tensor4};
use plum_core::train::{self, weight_histogram, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "plum", about = "Quantized-convolution planning, training and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Time plan execution over a layer list and report op counts and
    /// speedups against the binary sparsity-off baseline.
    Bench(BenchArgs),
    /// Emit (scheme, sparsity, reduction) CSV over a sparsity grid.
    Sweep(SweepArgs),
    /// Report density, throughput potential, energy proxy and filter
    /// statistics for a packed model or checkpoint directory.
    Analyze(AnalyzeArgs),
    /// Train a model from a key=value config file.
    Train(TrainArgs),
    /// Quantize a latent weight tensor to signed binary and pack it.
    Pack(PackArgs),
    /// Expand a packed model back to a dense weight tensor.
    Unpack(UnpackArgs),
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Scheme to benchmark: binary, ternary or signed-binary.
    #[arg(long, default_value = "signed-binary")]
    pub scheme: String,
    /// Synthetic weight sparsity for schemes with a zero level.
    #[arg(long, default_value_t = 0.65)]
    pub sparsity: f64,
    /// Build plans that skip the zero value group.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub sparsity_support: bool,
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Execute plans with one worker per output row instead of serially.
    #[arg(long, default_value_t = false)]
    pub parallel: bool,
    /// Write the full JSON report here instead of stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Weight shape as R,S,C,K.
    #[arg(long, default_value = "3,3,512,512")]
    pub shape: String,
    /// Comma-separated schemes.
    #[arg(long, default_value = "binary,ternary,signed-binary")]
    pub schemes: String,
    /// Sparsity grid as start:stop:step.
    #[arg(long, default_value = "0:1:0.1")]
    pub grid: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// A .plum packed model file or a checkpoint directory.
    pub model: PathBuf,
    /// Histogram bin count for latent-weight distributions.
    #[arg(long, default_value_t = 41)]
    pub bins: usize,
    /// Directory for histogram CSVs; defaults alongside the input.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides in key=value form, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PackArgs {
    /// Latent weight tensor (.plt4).
    pub input: PathBuf,
    pub output: PathBuf,
    /// Fraction of regions assigned the {0,+1} quantizer.
    #[arg(long, default_value_t = 0.5)]
    pub fraction_pos: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Threshold coefficient applied to max|W|.
    #[arg(long, default_value_t = 0.05)]
    pub delta_coeff: f32,
}

#[derive(Args, Debug)]
pub struct UnpackArgs {
    pub input: PathBuf,
    pub output: PathBuf,
}

fn parse_scheme(s: &str) -> Result<QuantVariant> {
    s.parse::<QuantVariant>()
        .with_context(|| format!("unknown scheme '{s}'"))
}

fn parse_shape(s: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad shape '{s}', expected R,S,C,K"))?;
    match parts.as_slice() {
        [r, s2, c, k] => Ok([*r, *s2, *c, *k]),
        _ => bail!("bad shape '{s}', expected four comma-separated sizes"),
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad grid '{s}', expected start:stop:step"))?;
    let [start, stop, step] = match parts.as_slice() {
        [a, b, c] => [*a, *b, *c],
        _ => bail!("bad grid '{s}', expected start:stop:step"),
    };
    if step <= 0.0 || stop < start {
        bail!("bad grid '{s}': step must be positive and stop >= start");
    }
    let mut grid = Vec::new();
    let mut v = start;
    while v <= stop + 1e-9 {
        grid.push((v * 1e9).round() / 1e9);
        v += step;
    }
    Ok(grid)
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn run_bench(args: &BenchArgs) -> Result<(EfficiencyReport, EfficiencyReport)> {
    let variant = parse_scheme(&args.scheme)?;
    let shapes = resnet18_layers();
    let baseline = bench_layers(
        &shapes,
        QuantVariant::Binary,
        0.0,
        false,
        args.trials,
        args.seed,
        args.parallel,
    )?;
    let report = bench_layers(
        &shapes,
        variant,
        args.sparsity,
        args.sparsity_support,
        args.trials,
        args.seed,
        args.parallel,
    )?;
    let op_speedup = baseline.total_plan_ops as f64 / report.total_plan_ops.max(1) as f64;
    let wall_speedup = baseline.total_wall_median_s / report.total_wall_median_s.max(1e-12);
    let summary = serde_json::json!({
        "baseline": baseline,
        "report": report,
        "planned_op_speedup_vs_binary": op_speedup,
        "wall_clock_speedup_vs_binary": wall_speedup,
        "note": "planned-op speedups are exact; wall-clock depends on this machine",
    });
    emit(
        &format!("{}\n", serde_json::to_string_pretty(&summary)?),
        args.output.as_ref(),
    )?;
    Ok((baseline, report))
}

pub fn run_sweep(args: &SweepArgs) -> Result<String> {
    let [r, s, c, k] = parse_shape(&args.shape)?;
    let spec = ConvSpec::new(r, s, c, k, 1, 1)?;
    let variants: Vec<QuantVariant> = args
        .schemes
        .split(',')
        .map(|p| parse_scheme(p.trim()))
        .collect::<Result<_>>()?;
    let grid = parse_grid(&args.grid)?;
    let csv = sweep_csv(&spec, &variants, &grid, args.seed)?;
    emit(&csv, args.output.as_ref())?;
    Ok(csv)
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<Vec<DensityReport>> {
    let mut reports = Vec::new();
    let out_dir = args
        .output_dir
        .clone()
        .unwrap_or_else(|| {
            if args.model.is_dir() {
                args.model.clone()
            } else {
                args.model.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
            }
        });
    if args.model.is_dir() {
        // Checkpoint directory: analyze every packed layer, histogram
        // every latent tensor.
        std::fs::create_dir_all(&out_dir)?;
        let mut entries: Vec<_> = std::fs::read_dir(&args.model)?
            .collect::<std::io::Result<_>>()?;
        entries.sort_by_key(|e| e.file_name());
        let mut found = false;
        for entry in entries {
            let path = entry.path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if name.ends_with(".plum") {
                found = true;
                let packed = PackedModel::load(&path)?;
                let layer = unpack(&packed)?;
                let rep = analyze_layer(&layer);
                println!("{name}: {}", serde_json::to_string(&rep)?);
                // Histogram the matching latent tensor when present.
                let stem = name.trim_end_matches(".plum");
                let latent_path = args.model.join(format!("{stem}_latent.plt4"));
                if latent_path.exists() {
                    let latent = Tensor4::load(&latent_path)?;
                    let hist = weight_histogram(
                        &latent,
                        layer.region_map.as_ref(),
                        packed.delta,
                        args.bins,
                    )?;
                    let csv_path = out_dir.join(format!("{stem}_hist.csv"));
                    std::fs::write(&csv_path, hist.to_csv())?;
                    println!(
                        "{stem}: mean={} std={} beta_pos_mean={} beta_neg_mean={} hist={}",
                        hist.mean,
                        hist.std,
                        hist.mean_beta_pos,
                        hist.mean_beta_neg,
                        csv_path.display()
                    );
                }
                reports.push(rep);
            }
        }
        if !found {
            bail!("no .plum files in {}", args.model.display());
        }
    } else {
        let packed = PackedModel::load(&args.model)?;
        let layer = unpack(&packed)?;
        let rep = analyze_layer(&layer);
        println!("{}", serde_json::to_string_pretty(&rep)?);
        reports.push(rep);
    }
    Ok(reports)
}

pub fn run_train(args: &TrainArgs) -> Result<train::TrainState> {
    let mut cfg = match &args.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    let state = train::train(&cfg)?;
    for m in &state.metrics {
        println!("epoch {} loss {:.4} top1 {:.4}", m.epoch, m.loss, m.top1);
    }
    Ok(state)
}

pub fn run_pack(args: &PackArgs) -> Result<PackedModel> {
    let latent = Tensor4::load(&args.input)?;
    let [_, _, c, k] = latent.dims();
    let map = assign_regions(k, c, c, args.fraction_pos, args.seed)?;
    let delta = compute_delta(&latent, args.delta_coeff)?;
    let layer = quantize_signed_binary(&latent, &map, delta)?;
    let packed = pack(&layer)?;
    packed.save(&args.output)?;
    println!(
        "packed {} -> {} (density {:.4}, payload {} bits)",
        args.input.display(),
        args.output.display(),
        density(&layer),
        packed.payload_bits()
    );
    Ok(packed)
}

pub fn run_unpack(args: &UnpackArgs) -> Result<Tensor4> {
    let packed = PackedModel::load(&args.input)?;
    let layer = unpack(&packed)?;
    let dense = layer.dequantize();
    dense.save(&args.output)?;
    println!(
        "unpacked {} -> {} (dims {:?}, density {:.4})",
        args.input.display(),
        args.output.display(),
        dense.dims(),
        density(&layer)
    );
    Ok(dense)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Bench(args) => run_bench(&args).map(|_| ()),
        Command::Sweep(args) => run_sweep(&args).map(|_| ()),
        Command::Analyze(args) => run_analyze(&args).map(|_| ()),
        Command::Train(args) => run_train(&args).map(|_| ()),
        Command::Pack(args) => run_pack(&args).map(|_| ()),
        Command::Unpack(args) => run_unpack(&args).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_shape_parsing() {
        assert_eq!(parse_shape("3,3,512,512").unwrap(), [3, 3, 512, 512]);
        assert!(parse_shape("3,3,512").is_err());
        let grid = parse_grid("0:1:0.25").unwrap();
        assert_eq!(grid, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from([
            "plum", "bench", "--scheme", "sb", "--trials", "3", "--sparsity", "0.5",
        ])
        .unwrap();
        match cli.command {
            Command::Bench(a) => {
                assert_eq!(a.scheme, "sb");
                assert_eq!(a.trials, 3);
            }
            other => panic!("parsed {other:?}"),
        }
        assert!(Cli::try_parse_from(["plum", "quux"]).is_err());
    }
}
