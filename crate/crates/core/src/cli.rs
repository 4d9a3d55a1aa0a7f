//! Command-line surface: reachability, certification, theorem comparisons,
//! training, model conversion, and Lipschitz bounds over JSON model files and
//! CSV datasets.
//!
//! Exit codes are a stable contract: 0 success, 1 I/O or schema problems,
//! 2 no well-posedness certificate, 3 a theorem comparison failed,
//! 4 training divergence.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::certify::{certify, strict_argmax};
use crate::dataset::{generate_toy, read_csv, write_csv, LabeledDataset, ToyGenerator};
use crate::error::Error;
use crate::linalg::Matrix;
use crate::model_io::{load_model, save_model, NetworkModel};
use crate::network::{ffnn_forward, ffnn_to_inn, Activation, ImplicitNetwork};
use crate::reach::{
    compare_ffnn_equal, compare_weight_tied_dominance, reach_ibp_ffnn, reach_ibp_weight_tied,
    reach_inn, Depth, IntervalVector,
};
use crate::solver::{solve_fixed_point, wellposedness_certificate, SolverConfig};
use crate::train::{train, GradientMode, TrainConfig, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO_OR_SCHEMA: i32 = 1;
pub const EXIT_NO_CERTIFICATE: i32 = 2;
pub const EXIT_THEOREM_VIOLATION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

/// Test-only hook: when set to a float, the named comparison's lower bound is
/// shifted by that amount before checking, forcing a theorem-violation exit.
const CORRUPT_COMPARE_ENV: &str = "INNBOUND_CORRUPT_COMPARE";

#[derive(Parser)]
#[command(
    name = "innbound",
    about = "Interval reachability and robustness certification for implicit and feedforward networks",
    version
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bound the output box of a model over an input box.
    Reach(ReachArgs),
    /// Certify dataset robustness and report certified accuracy.
    Certify(CertifyArgs),
    /// Check that the converted-network bound equals layer-wise propagation.
    CompareFfnn(CompareFfnnArgs),
    /// Check that the mixed-monotone box nests inside the weight-tied limit.
    CompareWeightTied(CompareWeightTiedArgs),
    /// Train an implicit network on a synthetic dataset.
    Train(TrainArgs),
    /// Convert a feedforward model file to the equivalent implicit model.
    Convert(ConvertArgs),
    /// Print the certified global Lipschitz upper bound of a model.
    Lipschitz(LipschitzArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Mixed-monotone embedded fixed point.
    Mm,
    /// Layer-wise interval propagation (feedforward models).
    Ibp,
    /// Weight-tied interval propagation.
    IbpWt,
}

#[derive(Args)]
struct ReachArgs {
    /// Model JSON file.
    model: PathBuf,
    /// Box center as comma-separated numbers.
    #[arg(long, conflicts_with = "center_file")]
    center: Option<String>,
    /// File holding the box center (one number per line or comma-separated).
    #[arg(long)]
    center_file: Option<PathBuf>,
    /// Box radius around the center.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Mm)]
    method: MethodArg,
    /// Fixed-point solver tolerance.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Write the bounds as CSV (index,lo,hi,width).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Model JSON file (implicit, or convertible to implicit).
    model: PathBuf,
    /// Dataset CSV: feature columns then an integer label column.
    dataset: PathBuf,
    /// Perturbation radius.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Zero-based label column (defaults to the last column).
    #[arg(long)]
    label_col: Option<usize>,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Write per-sample verdicts as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareFfnnArgs {
    /// Feedforward model JSON file.
    model: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct CompareWeightTiedArgs {
    /// Weight-tied model JSON file.
    model: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration JSON file.
    config: PathBuf,
    /// Where to write the trained model.
    #[arg(long)]
    out_model: PathBuf,
    /// Where to write the history CSV.
    #[arg(long)]
    out_history: PathBuf,
    /// Optionally write the generated dataset as CSV.
    #[arg(long)]
    out_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// Feedforward model JSON file.
    model: PathBuf,
    /// Where to write the implicit model.
    #[arg(long)]
    out: PathBuf,
    /// Equivalence spot-check sample count.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct LipschitzArgs {
    /// Model JSON file (implicit, or convertible to implicit).
    model: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

/// Entry point for the binary: parses `std::env::args`.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

/// Parses and executes a command line, returning the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match CliArgs::try_parse_from(args) {
        Ok(p) => p,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_IO_OR_SCHEMA,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match parsed.command {
        Command::Reach(args) => cmd_reach(&args),
        Command::Certify(args) => cmd_certify(&args),
        Command::CompareFfnn(args) => cmd_compare_ffnn(&args),
        Command::CompareWeightTied(args) => cmd_compare_weight_tied(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Convert(args) => cmd_convert(&args),
        Command::Lipschitz(args) => cmd_lipschitz(&args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NoCertificate { .. } => EXIT_NO_CERTIFICATE,
        Error::Diverged { .. } => EXIT_DIVERGENCE,
        _ => EXIT_IO_OR_SCHEMA,
    }
}

fn parse_center(args: &ReachArgs, expected_dim: usize) -> Result<Vec<f64>, Error> {
    let text = match (&args.center, &args.center_file) {
        (Some(inline), None) => inline.clone(),
        (None, Some(path)) => fs::read_to_string(path)?,
        (None, None) => return Ok(vec![0.0; expected_dim]),
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    let center: Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect();
    let center = center.map_err(|e| Error::Config(format!("invalid center value: {e}")))?;
    if center.len() != expected_dim {
        return Err(Error::DimensionMismatch(format!(
            "center has dim {}, model expects {expected_dim}",
            center.len()
        )));
    }
    Ok(center)
}

/// Reads any model kind as an implicit network (converting feedforward
/// models, reinterpreting weight-tied parameters).
fn as_implicit(model: &NetworkModel) -> ImplicitNetwork {
    match model {
        NetworkModel::Implicit(net) => net.clone(),
        NetworkModel::Feedforward(net) => ffnn_to_inn(net),
        NetworkModel::WeightTied(net) => net.as_implicit(),
    }
}

fn write_or_print(path: Option<&Path>, content: &str) -> Result<(), Error> {
    if let Some(path) = path {
        fs::write(path, content)?;
    }
    Ok(())
}

fn cmd_reach(args: &ReachArgs) -> Result<i32, Error> {
    let model = load_model(&args.model)?;
    let center = parse_center(args, model.input_dim())?;
    let input = IntervalVector::linf_ball(&center, args.eps)?;
    let cfg = SolverConfig::with_tol(args.tol);

    let result = match (args.method, &model) {
        (MethodArg::Mm, _) => {
            let net = as_implicit(&model);
            let cert = wellposedness_certificate(&net, 1e-12)?;
            reach_inn(&net, &input, &cert, &cfg)?
        }
        (MethodArg::Ibp, NetworkModel::Feedforward(net)) => reach_ibp_ffnn(net, &input)?,
        (MethodArg::Ibp, other) => {
            return Err(Error::Config(format!(
                "--method ibp needs a feedforward model, got {}",
                other.kind()
            )))
        }
        (MethodArg::IbpWt, NetworkModel::WeightTied(net)) => {
            let depth = match net.depth {
                Some(k) => Depth::Finite(k),
                None => Depth::UntilConverged,
            };
            reach_ibp_weight_tied(net, &input, depth, args.tol)?
        }
        (MethodArg::IbpWt, other) => {
            return Err(Error::Config(format!(
                "--method ibp-wt needs a weight-tied model, got {}",
                other.kind()
            )))
        }
    };

    let mut csv = String::from("index,lo,hi,width\n");
    println!("output bounds ({} coordinates):", result.output.dim());
    for i in 0..result.output.dim() {
        let (lo, hi) = (result.output.lo()[i], result.output.hi()[i]);
        println!("  [{i}] lo={lo} hi={hi} width={}", hi - lo);
        csv.push_str(&format!("{i},{lo},{hi},{}\n", hi - lo));
    }
    if let Some(d) = &result.diagnostics {
        println!(
            "solver: {} iterations, residual {:e}",
            d.iterations, d.final_residual
        );
    }
    write_or_print(args.out.as_deref(), &csv)?;
    Ok(EXIT_OK)
}

fn cmd_certify(args: &CertifyArgs) -> Result<i32, Error> {
    let model = load_model(&args.model)?;
    let net = as_implicit(&model);
    let dataset = read_csv(&args.dataset, args.label_col)?;
    if dataset.input_dim() != net.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset rows have dim {}, model expects {}",
            dataset.input_dim(),
            net.input_dim()
        )));
    }
    let cert = wellposedness_certificate(&net, 1e-12)?;
    let cfg = SolverConfig::with_tol(args.tol);

    let mut csv = String::from("index,predicted,label,min_margin,certified\n");
    let mut certified_count = 0usize;
    for (idx, (x, &label)) in dataset.inputs.iter().zip(&dataset.labels).enumerate() {
        if label >= net.output_dim() {
            return Err(Error::ClassIndexOutOfRange {
                index: label,
                classes: net.output_dim(),
            });
        }
        let z = solve_fixed_point(&net, x, &cert, &cfg)?.z_star;
        let y = net.output(&z);
        let predicted = y
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        let report = certify(&net, x, label, args.eps, &cert, &cfg)?;
        let min_margin = report
            .margin_lower
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != label)
            .map(|(_, m)| *m)
            .fold(f64::INFINITY, f64::min);
        let hit = strict_argmax(&y) == Some(label) && report.certified;
        if hit {
            certified_count += 1;
        }
        csv.push_str(&format!(
            "{idx},{predicted},{label},{min_margin},{}\n",
            hit as u8
        ));
    }
    let accuracy = certified_count as f64 / dataset.len() as f64;
    println!(
        "certified accuracy at eps={}: {certified_count}/{} = {accuracy}",
        args.eps,
        dataset.len()
    );
    write_or_print(args.out.as_deref(), &csv)?;
    Ok(EXIT_OK)
}

fn corruption_offset() -> f64 {
    std::env::var(CORRUPT_COMPARE_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0.0)
}

fn cmd_compare_ffnn(args: &CompareFfnnArgs) -> Result<i32, Error> {
    let model = load_model(&args.model)?;
    let NetworkModel::Feedforward(net) = &model else {
        return Err(Error::Config(format!(
            "compare-ffnn needs a feedforward model, got {}",
            model.kind()
        )));
    };
    let cfg = SolverConfig::with_tol(args.tol);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let corrupt = corruption_offset();
    let mut all_pass = true;
    for trial in 0..args.trials {
        let center: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let input = IntervalVector::linf_ball(&center, args.eps)?;
        let report = compare_ffnn_equal(net, &input, &cfg)?;
        let discrepancy = report.max_discrepancy + corrupt.abs();
        let pass = discrepancy <= report.tolerance;
        all_pass &= pass;
        println!(
            "trial {trial}: max discrepancy {discrepancy:e} (tolerance {:e}) {}",
            report.tolerance,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "equality check: {}",
        if all_pass {
            "all trials PASS"
        } else {
            "FAILED"
        }
    );
    Ok(if all_pass {
        EXIT_OK
    } else {
        EXIT_THEOREM_VIOLATION
    })
}

fn cmd_compare_weight_tied(args: &CompareWeightTiedArgs) -> Result<i32, Error> {
    let model = load_model(&args.model)?;
    let NetworkModel::WeightTied(net) = &model else {
        return Err(Error::Config(format!(
            "compare-weight-tied needs a weight-tied model, got {}",
            model.kind()
        )));
    };
    let cfg = SolverConfig::with_tol(args.tol);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let corrupt = corruption_offset();
    let mut all_pass = true;
    for trial in 0..args.trials {
        let center: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let input = IntervalVector::linf_ball(&center, args.eps)?;
        let report = compare_weight_tied_dominance(net, &input, &cfg)?;
        let violation = report.max_violation + corrupt.abs();
        let pass = violation <= report.tolerance;
        all_pass &= pass;
        println!(
            "trial {trial}: containment violation {violation:e}, tightness gap {} {}",
            report.tightness_gap,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!(
        "dominance check: {}",
        if all_pass {
            "all trials PASS"
        } else {
            "FAILED"
        }
    );
    Ok(if all_pass {
        EXIT_OK
    } else {
        EXIT_THEOREM_VIOLATION
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFileConfig {
    seed: u64,
    dataset: DatasetConfig,
    network: NetworkConfig,
    epsilon_test: f64,
    kappa_nom: f64,
    #[serde(default)]
    gamma: f64,
    epochs: usize,
    learning_rate: f64,
    warmup: (usize, usize),
    #[serde(default = "default_gradient_mode")]
    gradient_mode: String,
}

fn default_gradient_mode() -> String {
    "implicit_function".to_string()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetConfig {
    generator: String,
    points: usize,
    #[serde(default = "default_classes")]
    classes: usize,
    #[serde(default = "default_separation")]
    separation: f64,
    #[serde(default = "default_spread")]
    spread: f64,
    #[serde(default = "default_noise")]
    noise: f64,
}

fn default_classes() -> usize {
    2
}
fn default_separation() -> f64 {
    1.2
}
fn default_spread() -> f64 {
    0.35
}
fn default_noise() -> f64 {
    0.1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkConfig {
    hidden: usize,
    #[serde(default = "default_activation")]
    activation: String,
    #[serde(default = "default_init_scale")]
    init_scale: f64,
}

fn default_activation() -> String {
    "relu".to_string()
}
fn default_init_scale() -> f64 {
    0.7
}

fn build_dataset(cfg: &DatasetConfig, seed: u64) -> Result<LabeledDataset, Error> {
    let generator = match cfg.generator.as_str() {
        "gaussian_clusters" => ToyGenerator::GaussianClusters {
            classes: cfg.classes,
            separation: cfg.separation,
            spread: cfg.spread,
        },
        "two_moons" => ToyGenerator::TwoMoons { noise: cfg.noise },
        other => {
            return Err(Error::Config(format!(
                "unknown dataset generator {other:?}"
            )))
        }
    };
    generate_toy(generator, cfg.points, seed)
}

fn init_network(
    cfg: &NetworkConfig,
    input_dim: usize,
    classes: usize,
    seed: u64,
) -> Result<ImplicitNetwork, Error> {
    let act = Activation::from_name(&cfg.activation)?;
    let n = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let scale = cfg.init_scale;
    let w = Matrix::new(
        n,
        n,
        (0..n * n)
            .map(|_| rng.gen_range(-1.0..1.0) * scale / n as f64)
            .collect(),
    )?;
    let u = Matrix::new(
        n,
        input_dim,
        (0..n * input_dim)
            .map(|_| rng.gen_range(-1.0..1.0) * scale)
            .collect(),
    )?;
    let c = Matrix::new(
        classes,
        n,
        (0..classes * n)
            .map(|_| rng.gen_range(-1.0..1.0) * scale)
            .collect(),
    )?;
    ImplicitNetwork::new(w, u, vec![0.0; n], c, vec![0.0; classes], act)
}

fn history_csv(outcome: &TrainOutcome) -> String {
    let mut csv = String::from("epoch,loss,clean_accuracy,certified_accuracy\n");
    for rec in &outcome.history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            rec.epoch, rec.loss, rec.clean_accuracy, rec.certified_accuracy
        ));
    }
    csv
}

fn cmd_train(args: &TrainArgs) -> Result<i32, Error> {
    let text = fs::read_to_string(&args.config)?;
    let file_cfg: TrainFileConfig =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("config: {e}")))?;
    let dataset = build_dataset(&file_cfg.dataset, file_cfg.seed)?;
    let classes = dataset.num_classes().max(2);
    let net_init = init_network(
        &file_cfg.network,
        dataset.input_dim(),
        classes,
        file_cfg.seed,
    )?;
    let gradient_mode = match file_cfg.gradient_mode.as_str() {
        "implicit_function" => GradientMode::ImplicitFunction,
        "finite_difference" => GradientMode::FiniteDifference,
        other => return Err(Error::Config(format!("unknown gradient mode {other:?}"))),
    };
    let cfg = TrainConfig {
        epsilon_test: file_cfg.epsilon_test,
        kappa_nom: file_cfg.kappa_nom,
        gamma: file_cfg.gamma,
        epochs: file_cfg.epochs,
        learning_rate: file_cfg.learning_rate,
        warmup: file_cfg.warmup,
        seed: file_cfg.seed,
        gradient_mode,
    };

    if let Some(path) = &args.out_dataset {
        write_csv(&dataset, path)?;
    }
    let outcome = train(&net_init, &dataset, &cfg)?;
    save_model(
        &NetworkModel::Implicit(outcome.network.clone()),
        &args.out_model,
    )?;
    fs::write(&args.out_history, history_csv(&outcome))?;

    if let Some(epoch) = outcome.diverged_at {
        eprintln!("training diverged at epoch {epoch}; history preserved");
        return Ok(EXIT_DIVERGENCE);
    }
    if let Some(last) = outcome.history.last() {
        println!(
            "final clean accuracy {} | certified accuracy at eps={} {}",
            last.clean_accuracy, cfg.epsilon_test, last.certified_accuracy
        );
    } else {
        println!("no epochs run; wrote projected initial model");
    }
    Ok(EXIT_OK)
}

fn cmd_convert(args: &ConvertArgs) -> Result<i32, Error> {
    let model = load_model(&args.model)?;
    let NetworkModel::Feedforward(net) = &model else {
        return Err(Error::Config(format!(
            "convert needs a feedforward model, got {}",
            model.kind()
        )));
    };
    let inn = ffnn_to_inn(net);
    let cert = wellposedness_certificate(&inn, 1e-12)?;
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut max_diff = 0.0f64;
    for _ in 0..args.trials {
        let x: Vec<f64> = (0..net.input_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let expect = ffnn_forward(net, &x)?;
        let z = solve_fixed_point(&inn, &x, &cert, &cfg)?.z_star;
        let got = inn.output(&z);
        for (a, b) in got.iter().zip(&expect) {
            max_diff = max_diff.max((a - b).abs());
        }
    }
    println!(
        "conversion spot-check over {} inputs: max |difference| = {max_diff:e}",
        args.trials
    );
    save_model(&NetworkModel::Implicit(inn), &args.out)?;
    Ok(EXIT_OK)
}

fn cmd_lipschitz(args: &LipschitzArgs) -> Result<i32, Error> {
    let model = load_model(&args.model)?;
    let net = as_implicit(&model);
    let cert = wellposedness_certificate(&net, args.tol.min(1e-10))?;
    let bound = crate::certify::lipschitz_upper_bound(&net, &cert);
    let eta = cert.eta().as_slice();
    let eta_min = eta.iter().cloned().fold(f64::INFINITY, f64::min);
    println!("global Lipschitz upper bound (inf-norm): {bound}");
    println!(
        "certificate: mu = {}, alpha* = {}, eta in [{eta_min}, 1]",
        cert.mu(),
        cert.alpha_star()
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_exits_zero_and_unknown_flag_exits_one() {
        assert_eq!(run_from(["innbound", "--help"]), EXIT_OK);
        assert_eq!(run_from(["innbound", "--definitely-not-a-flag"]), 1);
        assert_eq!(run_from(["innbound", "reach"]), 1); // missing model path
    }

    #[test]
    fn center_parsing() {
        let args = ReachArgs {
            model: PathBuf::new(),
            center: Some("0.5, -1.25, 3".into()),
            center_file: None,
            eps: 0.0,
            method: MethodArg::Mm,
            tol: 1e-10,
            out: None,
        };
        assert_eq!(parse_center(&args, 3).unwrap(), vec![0.5, -1.25, 3.0]);
        assert!(parse_center(&args, 2).is_err());
        let defaulted = ReachArgs {
            center: None,
            ..args
        };
        assert_eq!(parse_center(&defaulted, 2).unwrap(), vec![0.0, 0.0]);
    }
}
