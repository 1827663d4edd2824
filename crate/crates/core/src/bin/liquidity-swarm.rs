use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use liquidity_swarm::config::ExperimentConfig;
use liquidity_swarm::error::Error;
use liquidity_swarm::exec::Execution;
use liquidity_swarm::runner::{self, SweepPlan};
use liquidity_swarm::{ClearingRule, PolicyKind};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "liquidity-swarm", version, about = "Bilateral liquidity simulator with difference-reward learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single configuration.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Replace an already completed run directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Run the grid clearing rule x strategy x seed.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated clearing rules.
        #[arg(long, value_delimiter = ',', default_value = "exact,minfill")]
        rules: Vec<ClearingRule>,
        /// Comma-separated strategies.
        #[arg(long, value_delimiter = ',', default_value = "diff,local,global,random,greedy")]
        strategies: Vec<PolicyKind>,
        /// Comma-separated master seeds.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Recompute series.csv and summary.csv from a run's episodes.csv.
    Report {
        /// Run directory containing episodes.csv.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = liquidity_swarm::metrics::DEFAULT_SMOOTHING_WINDOW)]
        smoothing_window: usize,
        #[arg(long, default_value_t = liquidity_swarm::metrics::DEFAULT_HIT_THRESHOLD)]
        hit_threshold: f64,
    },
}

/// Flags mirror the config-file keys; anything given here beats the file.
#[derive(Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Require an explicit master_seed.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    n_agents: Option<String>,
    #[arg(long)]
    fraction_large: Option<String>,
    #[arg(long)]
    cap_small: Option<String>,
    #[arg(long)]
    cap_large: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    episodes: Option<String>,
    #[arg(long)]
    clearing_rule: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    q_init: Option<String>,
    #[arg(long)]
    repeat_penalty: Option<String>,
    #[arg(long)]
    greedy_penalty_rate: Option<String>,
    #[arg(long)]
    smoothing_window: Option<String>,
    #[arg(long)]
    carryover: Option<String>,
    #[arg(long)]
    next_state: Option<String>,
    #[arg(long)]
    hit_threshold: Option<String>,
    #[arg(long)]
    parallel: Option<String>,
    #[arg(long)]
    export_qtables: Option<String>,
    #[arg(long)]
    master_seed: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("n_agents", &self.n_agents),
            ("fraction_large", &self.fraction_large),
            ("cap_small", &self.cap_small),
            ("cap_large", &self.cap_large),
            ("episodes", &self.episodes),
            ("clearing_rule", &self.clearing_rule),
            ("strategy", &self.strategy),
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("epsilon", &self.epsilon),
            ("q_init", &self.q_init),
            ("repeat_penalty", &self.repeat_penalty),
            ("greedy_penalty_rate", &self.greedy_penalty_rate),
            ("smoothing_window", &self.smoothing_window),
            ("carryover", &self.carryover),
            ("next_state", &self.next_state),
            ("hit_threshold", &self.hit_threshold),
            ("parallel", &self.parallel),
            ("export_qtables", &self.export_qtables),
            ("master_seed", &self.master_seed),
            ("output_dir", &self.output_dir),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone()))).collect()
    }

    fn load(&self) -> Result<ExperimentConfig, Error> {
        Ok(ExperimentConfig::load(self.config.as_deref(), &self.overrides(), self.strict)?)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::AlreadyComplete(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_code(&err))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match cli.command {
        Command::Run { cfg, overwrite } => {
            let config = match cfg.load() {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let dir = config.output_dir.join(config.run_name());
            match runner::run_to_dir(&config, &dir, overwrite) {
                Ok(out) => {
                    let s = out.summary;
                    println!(
                        "{}: total_liquidity={} mean_hit_rate_tail={:.4} episodes_to_threshold={}",
                        dir.display(),
                        s.total_liquidity,
                        s.mean_hit_rate_tail,
                        s.episodes_to_threshold.map_or("none".to_string(), |e| e.to_string())
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Sweep {
            cfg,
            rules,
            strategies,
            seeds,
            overwrite,
        } => {
            let base = match cfg.load() {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let root = base.output_dir.clone();
            let exec = Execution::from_flag(base.parallel);
            let plan = SweepPlan {
                base,
                rules,
                strategies,
                seeds,
            };
            match runner::run_sweep(&plan.configs(), &root, overwrite, exec) {
                Ok(report) => {
                    for r in &report.runs {
                        match &r.result {
                            Ok(s) => println!(
                                "ok      {:<28} total_liquidity={} mean_hit_rate_tail={:.4}",
                                r.name, s.total_liquidity, s.mean_hit_rate_tail
                            ),
                            Err(e) => println!("FAILED  {:<28} {e}", r.name),
                        }
                    }
                    if report.all_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(EXIT_PARTIAL)
                    }
                }
                Err(e) => fail(e),
            }
        }
        Command::Report {
            run_dir,
            smoothing_window,
            hit_threshold,
        } => {
            if smoothing_window == 0 {
                eprintln!("error: smoothing_window must be at least 1");
                return ExitCode::from(EXIT_CONFIG);
            }
            match runner::report(&run_dir, smoothing_window, hit_threshold) {
                Ok(s) => {
                    println!("{}: {:?}", run_dir.display(), s);
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
