//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lmcsc_core::gradcheck::{run_gradcheck, GradcheckConfig};
use lmcsc_core::metrics::{evaluate_pairs, psnr_from_mse, Bicubic, EvalOptions, SrMethod};
use lmcsc_core::network::network_forward;
use lmcsc_core::prox::{prox_l1l1_oracle, prox_l1l1_scalar, ProxParams};
use lmcsc_core::solver::{solve_coupled_csc, CSCProblem};
use lmcsc_core::synthetic::{generate_synthetic_coupled, SyntheticConfig};
use lmcsc_core::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::manifest::{load_manifest, load_split, Split};
use crate::model::{as_luminance, load_training_manifest, super_resolve, training_patches, Network};
use crate::netpbm;
use crate::trainer::{baseline_mse, train, TrainOptions};

#[derive(Debug, Parser)]
#[command(name = "lmcsc", version, about = "Guided super-resolution with learned multimodal convolutional sparse coding")]
pub struct Cli {
    /// Worker threads for data-parallel work. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: u16,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a TOML config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split and print a metrics CSV.
    Eval(EvalArgs),
    /// Super-resolve one low-resolution target with its guidance image.
    Sr(SrArgs),
    /// Run the coupled iterative solver and print `iter,objective`.
    Solve(SolveArgs),
    /// Compare analytic gradients with finite differences on a tiny network.
    Gradcheck(GradcheckArgs),
    /// Print samples of the l1-l1 proximal operator next to its brute-force oracle.
    ProxTable(ProxTableArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    /// Override `steps` from the config.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Override `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override `output_dir` from the config.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Train with the guidance image replaced by zeros.
    #[arg(long)]
    pub zero_guidance: bool,
    /// Print progress every N steps (0 = silent).
    #[arg(long, default_value_t = 100)]
    pub progress: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Lmcsc,
    Bicubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Lmcsc)]
    pub method: MethodArg,
    /// Pixels ignored at every image border.
    #[arg(long, default_value_t = 0)]
    pub border: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SrArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Low-resolution target (PGM).
    #[arg(long)]
    pub lr: PathBuf,
    /// Guidance image (PGM, or PPM converted to luminance).
    #[arg(long)]
    pub guidance: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Take the dictionary from this checkpoint's decoder and the side
    /// information from its guidance branch. Without it, synthetic data is used.
    #[arg(long, requires_all = ["target", "guidance"])]
    pub checkpoint: Option<PathBuf>,
    /// Image to code (PGM); used with --checkpoint.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Guidance image (PGM or PPM); used with --checkpoint.
    #[arg(long)]
    pub guidance: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub lambda: f64,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Solve with all-zero side information.
    #[arg(long)]
    pub no_side: bool,
    /// Synthetic data: number of atoms.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Synthetic data: image side length.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub density: f64,
    #[arg(long, default_value_t = 0.9)]
    pub overlap: f64,
    #[arg(long, default_value_t = 7)]
    pub atom_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct ProxTableArgs {
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    /// Side information value.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub s: f64,
    #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
    pub min: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub max: f64,
    #[arg(long, default_value_t = 61)]
    pub samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(io_err(p)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(io_err("<stdout>")),
    }
}

fn domain(msg: String) -> Error {
    lmcsc_core::Error::Domain(msg).into()
}

fn cmd_train(args: &TrainArgs, threads: usize) -> Result<ExitCode> {
    let mut cfg = TrainConfig::load(&args.config)?;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    let manifest = load_training_manifest(&cfg)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let (train_set, val_set) = training_patches(&cfg, &manifest)?;
    if args.progress > 0 && cfg.eval_every > 0 {
        let base = psnr_from_mse(baseline_mse(&val_set)?, 1.0);
        eprintln!("bicubic validation PSNR {base:.3} dB");
    }
    let opts = TrainOptions {
        threads,
        zero_guidance: args.zero_guidance,
        progress_every: args.progress,
    };
    let out = train(&cfg, &train_set, Some(&val_set), &opts)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    out.best.save(dir.join("best.lmcs"))?;
    out.last.save(dir.join("last.lmcs"))?;
    let log_path = dir.join("train_log.csv");
    fs::write(&log_path, out.log.to_csv()).map_err(io_err(&log_path))?;
    if let Some(p) = out.best_val_psnr {
        eprintln!("best validation PSNR {p:.3} dB at step {}", out.best.step);
    }
    if out.stopped_early {
        eprintln!("stopped early after step {}", out.last.step);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    let split = match args.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let pairs = load_split::<f32>(&manifest, split, ckpt.config.scale)?;
    let opts = EvalOptions {
        border: args.border,
        ..EvalOptions::default()
    };
    let net = Network { params: ckpt.params };
    let method: &dyn SrMethod<f32> = match args.method {
        MethodArg::Lmcsc => &net,
        MethodArg::Bicubic => &Bicubic,
    };
    let table = evaluate_pairs(method, &pairs, &opts)?;
    emit(args.out.as_deref(), &table.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sr(args: &SrArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let lr: Tensor<f32> = netpbm::load_pgm(&args.lr)?;
    let guidance = as_luminance(netpbm::load(&args.guidance)?)?;
    let sr = super_resolve(&ckpt.params, &lr, &guidance)?;
    netpbm::save(&sr, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: &SolveArgs) -> Result<ExitCode> {
    let prob = if let Some(path) = &args.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let params = ckpt.params.cast::<f64>();
        let target: Tensor<f64> = netpbm::load_pgm(args.target.as_ref().expect("required by clap"))?;
        let guidance = as_luminance(netpbm::load(args.guidance.as_ref().expect("required by clap"))?)?.cast::<f64>();
        let side = if args.no_side {
            Tensor::zeros(params.num_atoms(), target.height(), target.width())
        } else {
            network_forward(&target, &guidance, &params)?.side_information().clone()
        };
        CSCProblem::new(target, params.decoder.clone(), side, args.lambda, None)?
    } else {
        let data = generate_synthetic_coupled::<f64>(&SyntheticConfig {
            k: args.k,
            height: args.size,
            width: args.size,
            density: args.density,
            overlap: args.overlap,
            atom_size: args.atom_size,
            seed: args.seed,
        })?;
        let side = if args.no_side {
            data.z_star.map(|_| 0.0)
        } else {
            data.z_star
        };
        CSCProblem::new(data.y, data.d, side, args.lambda, None)?
    };
    let trace = solve_coupled_csc(&prob, args.iters, None)?;
    let mut csv = String::from("iter,objective\n");
    for (t, obj) in trace.objectives.iter().enumerate() {
        csv.push_str(&format!("{t},{obj}\n"));
    }
    emit(args.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let mut ok = true;
    for seed in args.seed..args.seed + args.seeds {
        let report = run_gradcheck(&GradcheckConfig {
            seed,
            ..GradcheckConfig::default()
        })?;
        for p in &report.params {
            let pass = p.max_rel_error <= args.tol;
            ok &= pass;
            println!(
                "seed {seed} {:<16} max rel err {:.3e} {}",
                p.name,
                p.max_rel_error,
                if pass { "ok" } else { "FAIL" }
            );
        }
        println!("seed {seed}: max rel err {:.3e} (tolerance {:.1e})", report.max_rel_error(), args.tol);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_prox_table(args: &ProxTableArgs) -> Result<ExitCode> {
    if args.samples < 2 || !(args.max > args.min) {
        return Err(domain("prox-table needs --samples >= 2 and --max > --min".into()));
    }
    let params = ProxParams::new(args.mu)?;
    let mut csv = String::from("v,s,mu,xi,oracle\n");
    for i in 0..args.samples {
        let v = args.min + (args.max - args.min) * i as f64 / (args.samples - 1) as f64;
        let xi = prox_l1l1_scalar(v, args.s, params)?;
        let oracle = prox_l1l1_oracle(v, args.s, params)?;
        csv.push_str(&format!("{v},{},{},{xi},{oracle}\n", args.s, args.mu));
    }
    emit(args.out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

/// Run a parsed command line. Operational failures come back as `Err`.
pub fn run(cli: &Cli) -> Result<ExitCode> {
    let threads = usize::from(cli.threads);
    match &cli.command {
        Command::Train(a) => cmd_train(a, threads),
        Command::Eval(a) => cmd_eval(a),
        Command::Sr(a) => cmd_sr(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::ProxTable(a) => cmd_prox_table(a),
    }
}
