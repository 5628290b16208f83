//! Command-line entry point. `cli_main` returns the process exit code so it
//! can be driven from tests without spawning a process.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{DataSource, ExperimentConfig, Method};
use crate::data::{generate_benchmark, load_csv, write_csv, GeneratorConfig, ViewMode};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradcheckOptions};
use crate::losses::RegSign;
use crate::model::Checkpoint;
use crate::pipeline::{ablation_csv, ablation_grid, evaluate, run_experiment};
use crate::report::{write_json, write_report, MetricsReport, RunMetrics};

#[derive(Debug, Parser)]
#[command(name = "ordinal-noise", version, about = "Noise-robust ordinal classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic train/test pair as CSV.
    Generate {
        /// Generator settings (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 400)]
        n_test: usize,
    },
    /// Run an experiment and write report, checkpoints and training traces.
    Train(RunArgs),
    /// Score a checkpoint on a dataset CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Single/multi view × {full, -uni, -uni-reg, baseline}.
    Ablate(RunArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// 1 = first view only, 3 = all views concatenated.
    #[arg(long, value_parser = clap::builder::TypedValueParser::map(clap::builder::PossibleValuesParser::new(["1", "3"]), |s| s.parse::<u8>().unwrap()))]
    views: Option<u8>,
    #[arg(long)]
    no_con: bool,
    #[arg(long)]
    no_reg: bool,
    #[arg(long)]
    no_uni: bool,
    #[arg(long)]
    reg_sign: Option<String>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::read(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(v) = self.views {
            cfg.hyper.view_mode = match v {
                1 => ViewMode::Single,
                3 => ViewMode::Multi,
                _ => return Err(Error::Config(format!("--views must be 1 or 3, got {v}"))),
            };
        }
        cfg.ablation.contrastive &= !self.no_con;
        cfg.ablation.memory_reg &= !self.no_reg;
        cfg.ablation.unimodal &= !self.no_uni;
        if let Some(s) = &self.reg_sign {
            cfg.hyper.reg_sign = s.parse::<RegSign>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig, fallback: &str) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(fallback))
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Generate {
            config,
            seed,
            out,
            n_test,
        } => generate(config.as_deref(), seed, &out, n_test),
        Command::Train(args) => {
            let cfg = args.load()?;
            let out = args.out_dir(&cfg, &format!("runs/{}", cfg.method));
            let outcome = run_experiment(&cfg)?;
            outcome.persist(&out)?;
            print_summary(&outcome.report);
            println!("wrote {}", out.join("report.json").display());
            Ok(0)
        }
        Command::Evaluate {
            checkpoint,
            data,
            classes,
            seed,
            out,
        } => {
            let ckpt = Checkpoint::read(&checkpoint)?;
            let test = load_csv(&data, classes)?;
            let input = ckpt.dims.input;
            let mode = if input == test.view_count * test.view_dim {
                ViewMode::Multi
            } else {
                ViewMode::Single
            };
            let (tasks, unimodal_fraction) = evaluate(&ckpt.model, &test, &test.inputs(mode)?)?;
            let mut cfg = ExperimentConfig {
                data: DataSource::Csv {
                    train: data.clone(),
                    test: data,
                    classes,
                },
                ..ExperimentConfig::default()
            };
            cfg.hyper.view_mode = mode;
            cfg.seeds = vec![seed.unwrap_or(0)];
            let run = RunMetrics {
                seed: cfg.seeds[0],
                tasks,
                unimodal_fraction,
                selection: None,
                notes: vec![format!("checkpoint {}", checkpoint.display())],
            };
            let report = MetricsReport::from_runs(&cfg, vec![run]);
            write_report(&report, &out.join("report.json"))?;
            print_summary(&report);
            Ok(0)
        }
        Command::Ablate(args) => {
            let cfg = args.load()?;
            let out = args.out_dir(&cfg, "runs/ablation");
            let rows = ablation_grid(&cfg)?;
            write_json(&rows, &out.join("ablation.json"))?;
            let lines = ablation_csv(&rows);
            let csv = out.join("ablation.csv");
            std::fs::write(&csv, lines.join("\n") + "\n").map_err(|e| Error::io(&csv, e))?;
            for line in &lines {
                println!("{line}");
            }
            Ok(0)
        }
        Command::Gradcheck { seed, instances } => {
            let report = run_suite(&GradcheckOptions {
                seed,
                instances,
                ..GradcheckOptions::default()
            })?;
            for c in &report.checks {
                let verdict = if c.passed { "ok" } else { "FAILED" };
                println!("{:<20} {:>4} instances  max rel err {:.3e}  {verdict}", c.name, c.instances, c.max_relative_error);
            }
            println!("{:.2}s", report.elapsed_secs);
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn generate(config: Option<&Path>, seed: Option<u64>, out: &Path, n_test: usize) -> Result<i32> {
    let mut g = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<GeneratorConfig>(&text).map_err(|e| Error::json(p, e))?
        }
        None => GeneratorConfig::default(),
    };
    if let Some(s) = seed {
        g.seed = s;
    }
    let (train, test) = generate_benchmark(&g, n_test)?;
    write_csv(&train, &out.join("train.csv"))?;
    write_csv(&test, &out.join("test.csv"))?;
    println!(
        "wrote {} training and {} test samples to {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(0)
}

fn print_summary(report: &MetricsReport) {
    for t in &report.summary {
        println!(
            "{:<8} acc {:.4} ± {:.4}  f1 {:.4} ± {:.4}  auc {:.4} ± {:.4}",
            t.task, t.accuracy.mean, t.accuracy.std, t.macro_f1.mean, t.macro_f1.std, t.macro_auc.mean, t.macro_auc.std
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> RunArgs {
        let argv = ["ordinal-noise", "train"].iter().chain(extra);
        match Cli::try_parse_from(argv).unwrap().command {
            Command::Train(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_the_config() {
        let cfg = args(&["--seed", "7", "--method", "LS", "--views", "1", "--no-con", "--no-reg", "--reg-sign", "literal"])
            .load()
            .unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.method, Method::Ls);
        assert_eq!(cfg.hyper.view_mode, ViewMode::Single);
        assert!(!cfg.ablation.contrastive && !cfg.ablation.memory_reg && cfg.ablation.unimodal);
        assert_eq!(cfg.hyper.reg_sign, RegSign::Literal);
    }

    #[test]
    fn defaults_when_no_flags() {
        let a = args(&[]);
        let cfg = a.load().unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(a.out_dir(&cfg, "runs/URL"), PathBuf::from("runs/URL"));
        assert_eq!(args(&["--out", "x"]).out_dir(&cfg, "runs/URL"), PathBuf::from("x"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(cli_main(["ordinal-noise"]), 2);
        assert_eq!(cli_main(["ordinal-noise", "train", "--views", "4"]), 2);
        assert_eq!(cli_main(["ordinal-noise", "nope"]), 2);
    }
}
