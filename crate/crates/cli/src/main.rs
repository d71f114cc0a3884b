//! `spdinv` command-line front end.
//!
//! Every subcommand starts from the config file given by `--config` (or the
//! built-in lab defaults) and then applies the command-line flags on top, so a
//! flag always wins over the file. Failures print one line of the form
//! `error: kind=<kind> message=<text>` to stderr followed by the usage line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, CommandFactory, Parser, Subcommand};
use spdinv::harness::{
    collect_reports, gap_table, generate_trials, run_ablation, run_experiment_in, save_trajectory, write_ablation,
    ExperimentConfig, Summary,
};
use spdinv::{Error, Method, Result, SpdInvConfig};

/// Environment variable naming the root under which runs land when neither
/// `--out` nor the config sets an output directory.
const OUT_ROOT_VAR: &str = "SPDINV_OUT";

#[derive(Parser)]
#[command(name = "spdinv", version, about = "Seeded diffusion-inversion experiments on closed-form and small learned predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample ground-truth trajectories from seeded noise codes.
    Generate(RunArgs),
    /// Invert every trial with the selected methods and write trajectories and reports.
    Invert(RunArgs),
    /// Full generate, invert, regenerate comparison with summary checks.
    Roundtrip(RunArgs),
    /// Invert under the source condition and regenerate under the target one.
    Edit(RunArgs),
    /// Sweep K, delta, eta or T one at a time around the first spdinv method.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Grid axis such as `k=5,25,50`; repeat for several axes. Replaces
        /// the same axis from the config file.
        #[arg(long, value_name = "PARAM=V1,V2,...")]
        grid: Vec<GridAxis>,
    },
    /// Collect reports under a directory and emit the per-step gap table.
    Report {
        /// A run directory, or a directory of run directories.
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        /// Write the plot table here instead of stdout.
        #[arg(long, value_name = "FILE")]
        plot: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Methods to run, comma separated or repeated (naive, aidi, spdinv).
    #[arg(long, value_delimiter = ',', value_name = "METHOD")]
    method: Vec<Method>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory. Defaults to the config value, then `$SPDINV_OUT/<command>`, then `runs/<command>`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Give AIDI the same predictor-call budget as SPDInv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    budget_matched: Option<bool>,
    /// Treat the predictor output as constant inside SPDInv gradients.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    stop_gradient: Option<bool>,
}

#[derive(Debug, Clone)]
struct GridAxis {
    param: String,
    values: Vec<f64>,
}

impl FromStr for GridAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (param, list) = s.split_once('=').ok_or_else(|| format!("expected PARAM=V1,V2,... but got {s:?}"))?;
        let param = param.trim().to_ascii_lowercase();
        if !matches!(param.as_str(), "k" | "delta" | "eta" | "steps" | "t") {
            return Err(format!("unknown grid parameter {param:?} (k, delta, eta, steps)"));
        }
        let values = list
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad value {v:?} for {param}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(format!("no values for {param}"));
        }
        let integral = matches!(param.as_str(), "k" | "steps" | "t");
        if integral && values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) {
            return Err(format!("{param} takes non-negative integers"));
        }
        let param = if param == "t" { "steps".to_string() } else { param };
        Ok(Self { param, values })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            fail("usage", first);
            return ExitCode::from(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

fn fail(kind: &str, message: &str) {
    let message = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error: kind={kind} message={message}");
    eprintln!("{}", Cli::command().render_usage());
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Generate(args) => generate(&args),
        Command::Invert(args) => experiment("invert", &args, print_inversion),
        Command::Roundtrip(args) => experiment("roundtrip", &args, print_roundtrip),
        Command::Edit(args) => experiment("edit", &args, print_edit),
        Command::Ablate { run, grid } => ablate(&run, &grid),
        Command::Report { input, plot } => report(&input, plot.as_deref()),
    }
}

fn resolve(args: &RunArgs, command: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = match &args.config {
        // Parsed without validation: the flags may repair what the file lacks.
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<ExperimentConfig>(&text)?
        }
        None => ExperimentConfig::lab_default(0),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if !args.method.is_empty() {
        config.methods = args
            .method
            .iter()
            .map(|m| {
                config
                    .methods
                    .iter()
                    .find(|c| c.method == *m)
                    .copied()
                    .unwrap_or_else(|| SpdInvConfig::with_method(*m))
            })
            .collect();
    }
    match args.budget_matched {
        Some(b) => config.budget_matched = b,
        // Without an spdinv method there is no budget to match.
        None if !config.methods.iter().any(|m| m.method == Method::Spdinv) => config.budget_matched = false,
        None => {}
    }
    if let Some(sg) = args.stop_gradient {
        for m in &mut config.methods {
            m.stop_gradient = sg;
        }
    }
    config.normalize();
    config.validate()?;

    let out = match (&args.out, &config.output_dir) {
        (Some(out), _) => out.clone(),
        (None, Some(dir)) => dir.clone(),
        (None, None) => std::env::var_os(OUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    };
    config.output_dir = Some(out.clone());
    Ok((config, out))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_config(config: &ExperimentConfig, dir: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    write_file(&dir.join("config.json"), text)
}

fn generate(args: &RunArgs) -> Result<()> {
    let (config, out) = resolve(args, "generate")?;
    let trajectories = generate_trials(&config)?;
    write_config(&config, &out)?;
    let traj_dir = out.join("trajectories");
    std::fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    for (i, tr) in trajectories.iter().enumerate() {
        save_trajectory(traj_dir.join(format!("trial-{i:04}-truth.traj")), tr)?;
    }
    println!("wrote {} trajectories to {}", trajectories.len(), out.display());
    Ok(())
}

fn experiment(command: &str, args: &RunArgs, print: fn(&Summary) -> String) -> Result<()> {
    let (config, out) = resolve(args, command)?;
    let (_, summary) = run_experiment_in(&config, &out)?;
    print!("{}", print(&summary));
    print!("{}", checks(&summary));
    println!("wrote {}", out.display());
    Ok(())
}

fn print_inversion(summary: &Summary) -> String {
    let mut out = String::from("label         final_gap    residual     rounds  calls\n");
    for r in &summary.rows {
        let _ = writeln!(
            out,
            "{:<13} {:<12.4e} {:<12.4e} {:<7.2} {:.1}",
            r.label, r.final_noise_gap, r.mean_final_residual, r.mean_rounds, r.mean_predictor_calls
        );
    }
    let _ = writeln!(out, "ranking: {}", summary.ranking.join(" < "));
    out
}

fn print_roundtrip(summary: &Summary) -> String {
    let mut out = String::from("label         ok/failed  final_gap    recon_mse\n");
    for r in &summary.rows {
        let _ = writeln!(
            out,
            "{:<13} {:<10} {:<12.4e} {:.4e}",
            r.label,
            format!("{}/{}", r.trials_ok, r.trials_failed),
            r.final_noise_gap,
            r.reconstruction_mse
        );
    }
    let _ = writeln!(out, "ranking: {}", summary.ranking.join(" < "));
    out
}

fn print_edit(summary: &Summary) -> String {
    let mut out = String::from("label         edit_div     coupling\n");
    for r in &summary.rows {
        let coupling = r.coupling.map_or_else(|| "-".to_string(), |c| format!("{c:.4e}"));
        let _ = writeln!(out, "{:<13} {:<12.4e} {coupling}", r.label, r.edit_divergence);
    }
    out
}

fn checks(summary: &Summary) -> String {
    let mut out = String::new();
    for c in &summary.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{verdict} {} value={:.4e} threshold={:.4e}", c.name, c.value, c.threshold);
    }
    out
}

fn ablate(args: &RunArgs, grid: &[GridAxis]) -> Result<()> {
    let (mut config, out) = resolve(args, "ablate")?;
    for axis in grid {
        let g = &mut config.ablation;
        match axis.param.as_str() {
            "k" => g.k = axis.values.iter().map(|v| *v as usize).collect(),
            "delta" => g.delta = axis.values.clone(),
            "eta" => g.eta = axis.values.clone(),
            _ => g.steps = axis.values.iter().map(|v| *v as usize).collect(),
        }
    }
    let rows = run_ablation(&config)?;
    write_config(&config, &out)?;
    write_ablation(&rows, &out)?;
    println!("parameter value        trials  guard  final_gap    residual     rounds");
    for r in &rows {
        println!(
            "{:<9} {:<12.4e} {:<7} {:<6} {:<12.4e} {:<12.4e} {:.2}",
            r.parameter,
            r.value,
            format!("{}/{}", r.trials_ok, r.trials_ok + r.trials_failed),
            r.guard_trips,
            r.final_noise_gap,
            r.mean_final_residual,
            r.mean_rounds
        );
    }
    println!("wrote {}", out.join("ablation.csv").display());
    Ok(())
}

fn report(input: &Path, plot: Option<&Path>) -> Result<()> {
    let runs = collect_reports(input)?;
    if runs.is_empty() {
        return Err(Error::InvalidConfig(format!("no report.json under {}", input.display())));
    }
    let table = gap_table(&runs);
    match plot {
        Some(path) => {
            write_file(path, &table)?;
            for (name, run) in &runs {
                let finals: Vec<String> = run
                    .labels
                    .iter()
                    .zip(&run.reports)
                    .map(|(l, r)| format!("{l}={:.4e}", r.aggregate.final_noise_gap))
                    .collect();
                println!("{name}: {}", finals.join(" "));
            }
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
