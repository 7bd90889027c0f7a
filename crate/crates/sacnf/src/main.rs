use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sacnf::report::{analyze, AnalysisSettings};
use sacnf::runner::write_reward_field;
use sacnf::{run_experiment, Checkpoint, Error, ExperimentConfig};
use sacnf_core::sac::{evaluate, Trajectory};
use sacnf_core::{EnvKind, Environment, PointEnv, Stream, Streams};

/// Soft actor-critic with normalizing-flow policies on point-mass tasks.
#[derive(Parser)]
#[command(name = "sacnf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment configuration.
    Train { config: PathBuf },
    /// Deterministic evaluation of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        env: String,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Policy-shape diagnostics of a checkpoint, as JSON.
    Analyze {
        checkpoint: PathBuf,
        env: String,
        /// Seed of the analysis sampling stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        rollouts: usize,
    },
    /// Reward map of an environment on a regular grid, as `x,y,r` CSV.
    RewardField {
        env: String,
        out: PathBuf,
        #[arg(long, default_value_t = 121)]
        resolution: usize,
    },
}

fn env_of(name: &str) -> Result<PointEnv, Error> {
    Ok(PointEnv::new(EnvKind::from_name(name)?))
}

fn load_agent(path: &std::path::Path, env: &PointEnv) -> Result<sacnf_core::Agent, Error> {
    let ck = Checkpoint::load(path)?;
    if ck.obs_dim != env.obs_dim() || ck.action_dim != env.action_dim() {
        return Err(Error::Shape {
            group: "header".into(),
            reason: format!("checkpoint is for obs/action dims {}/{}", ck.obs_dim, ck.action_dim),
        });
    }
    ck.to_agent()
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Train { config } => {
            let (parsed, text) = ExperimentConfig::load(&config)?;
            let mut first_error = None;
            for outcome in run_experiment(&parsed, &text) {
                let seed = outcome.artifacts.seed;
                match outcome.result {
                    Ok(summary) => {
                        let line = serde_json::json!({
                            "seed": seed,
                            "dir": outcome.artifacts.dir.display().to_string(),
                            "env_steps": summary.env_steps,
                            "learn_steps": summary.learn_steps,
                            "policy_params": summary.analysis.parameters.policy,
                            "final_eval_return_mean": summary.final_eval.and_then(|r| r.eval_return_mean),
                            "shape_kl": summary.analysis.shape_kl.value,
                        });
                        println!("{line}");
                    }
                    Err(e) => {
                        eprintln!("{}", e.to_json_line());
                        first_error.get_or_insert(e);
                    }
                }
            }
            first_error.map_or(Ok(()), Err)
        }
        Command::Eval { checkpoint, env, episodes } => {
            let env = env_of(&env)?;
            let agent = load_agent(&checkpoint, &env)?;
            let report = evaluate(&agent.policy, &env, episodes)?;
            let finals: Vec<[f64; 2]> = report.trajectories.iter().map(Trajectory::final_position).collect();
            let reached = finals.iter().filter(|p| env.in_goal(**p)).count();
            let line = serde_json::json!({
                "episodes": episodes,
                "return_mean": report.mean,
                "return_std": report.std,
                "returns": report.returns,
                "final_positions": finals,
                "reached_goal": reached,
            });
            println!("{line}");
            Ok(())
        }
        Command::Analyze { checkpoint, env, seed, rollouts } => {
            let env = env_of(&env)?;
            let agent = load_agent(&checkpoint, &env)?;
            let settings = AnalysisSettings { rollouts, ..AnalysisSettings::default() };
            let mut rng = Streams::new(seed).stream(Stream::Analysis);
            let (report, _) = analyze(&agent, &env, &settings, &mut rng)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            Ok(())
        }
        Command::RewardField { env, out, resolution } => {
            if resolution < 2 {
                return Err(Error::Usage("resolution must be at least 2".into()));
            }
            write_reward_field(EnvKind::from_name(&env)?, resolution, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string();
            eprintln!("{}", Error::Usage(format!("{message}: {}", e.to_string().lines().next().unwrap_or(""))).to_json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
