use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use scca_cli::config::{ExperimentConfig, Overrides};
use scca_cli::error::{CliError, CliResult, Context};
use scca_cli::experiment::{project_saved, run, sweep_csv, sweep_l, write_outputs};
use scca_cli::io::{format_dense, format_value, load_dense};
use scca_cli::synth::{synth_nonlinear, synth_paired_topics};
use sparse_cca::eval;

#[derive(Parser)]
#[command(name = "scca", version, about = "Sparse CCA and sparse kernel CCA experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Nonlinear,
    Topics,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired data set.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 300)]
        d1: usize,
        #[arg(long, default_value_t = 250)]
        d2: usize,
        #[arg(long, default_value_t = 10)]
        topics: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, evaluate and write the model and result record.
    Train(Overrides),
    /// Project new samples with a saved model.
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        x: PathBuf,
        #[arg(long)]
        y: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score paired projections (`l x N` each): correlation sum and retrieval AROC.
    Eval {
        #[arg(long)]
        px: PathBuf,
        #[arg(long)]
        py: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every number of directions from 1 to --l.
    SweepL(Overrides),
    /// Cross-validate the regularizer over --grid, then train with the selection.
    Cv(Overrides),
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("results"))
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::Synth { kind, n, noise, d1, d2, topics, seed, out } => {
            let (x, y) = match kind {
                SynthKind::Nonlinear => synth_nonlinear(n, noise, seed)?,
                SynthKind::Topics => {
                    let data = synth_paired_topics(n, d1, d2, topics, noise, seed)?;
                    (data.x, data.y)
                }
            };
            write_outputs(
                &out,
                &[
                    ("x.csv".into(), format_dense(&x, None)),
                    ("y.csv".into(), format_dense(&y, None)),
                ],
            )
        }
        Command::Train(overrides) => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            let output = run(&cfg)?;
            write_outputs(&out_dir(&cfg), &output.files)?;
            println!("{}", scca_cli::ResultRecord::table_header());
            println!("{}", output.record.table_row());
            Ok(())
        }
        Command::Cv(overrides) => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            let Some(cv) = &cfg.cv else {
                return Err(CliError::Config("cv needs a --grid".into()));
            };
            let folds = cv.folds;
            let output = run(&cfg)?;
            write_outputs(&out_dir(&cfg), &output.files)?;
            if let Some(outcome) = &output.cv {
                println!("selected={} ({folds} folds)", format_value(outcome.selected));
            }
            println!("{}", output.record.table_row());
            Ok(())
        }
        Command::SweepL(overrides) => {
            let cfg = ExperimentConfig::resolve(&overrides)?;
            let l_max = match cfg.l {
                scca_cli::config::LSetting::Count(l) => l,
                scca_cli::config::LSetting::All => {
                    return Err(CliError::Config("sweep-l needs a numeric --l upper bound".into()))
                }
            };
            let (name, rows) = sweep_l(&cfg, l_max)?;
            let csv = sweep_csv(&name, &rows);
            write_outputs(&out_dir(&cfg), &[("sweep_l.csv".into(), csv.clone())])?;
            print!("{csv}");
            Ok(())
        }
        Command::Project { model, x, y, out } => {
            let xm = load_dense(&x, false)?;
            let ym = y.as_deref().map(|p: &Path| load_dense(p, false)).transpose()?;
            let (px, py) = project_saved(&model, &xm, ym.as_ref())?;
            let mut files = vec![("projection_x.csv".to_string(), format_dense(&px, None))];
            if let Some(py) = py {
                files.push(("projection_y.csv".to_string(), format_dense(&py, None)));
            }
            write_outputs(&out, &files)
        }
        Command::Eval { px, py, out } => {
            let a = load_dense(&px, false)?;
            let b = load_dense(&py, false)?;
            let corr = eval::corr_sum(&a, &b).context("eval::corr_sum")?;
            let aroc = eval::retrieval_aroc(&a, &b).context("eval::retrieval_aroc")?;
            let text = format!(
                "corr_sum={}\naroc={}\n",
                format_value(corr),
                format_value(aroc.mean_aroc)
            );
            print!("{text}");
            match out {
                Some(dir) => write_outputs(&dir, &[("eval.txt".into(), text)]),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
