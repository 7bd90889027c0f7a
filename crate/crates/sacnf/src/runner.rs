//! Seeded multi-run execution with per-run artifact directories.
//!
//! Each seed writes into `<output_dir>/seed-<seed>/`:
//!
//! * `config.toml`: the configuration text exactly as read;
//! * `run.json`: seed, environment and parameter counts;
//! * `metrics.csv`: one row per finished episode and per evaluation, flushed
//!   as training proceeds;
//! * `trajectories.csv`: the first deterministic episode of every evaluation
//!   and, after training, the stochastic rollouts used by the analysis;
//! * `checkpoints/step-<n>.ckpt` at the configured cadence and `final.ckpt`;
//! * `analysis.json`: the final policy diagnostics;
//! * `FAILED`: present only when the run aborted, holding the error line.

use std::fs::File;
use std::path::{Path, PathBuf};

use sacnf_core::sac::{train, Agent, EvalReport, LogRow, TrainObserver, Trajectory};
use sacnf_core::{EnvKind, PointEnv, Stream, Streams};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::metrics::MetricsWriter;
use crate::report::{analyze, AnalysisReport, AnalysisSettings, ParamCounts};

pub const FAILED_MARKER: &str = "FAILED";

/// Paths of everything one run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub seed: u64,
    pub dir: PathBuf,
    pub config_echo: PathBuf,
    pub metrics: PathBuf,
    pub trajectories: PathBuf,
    pub analysis: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

impl RunArtifacts {
    fn new(seed: u64, dir: PathBuf) -> Self {
        Self {
            seed,
            config_echo: dir.join("config.toml"),
            metrics: dir.join("metrics.csv"),
            trajectories: dir.join("trajectories.csv"),
            analysis: dir.join("analysis.json"),
            checkpoints: Vec::new(),
            dir,
        }
    }
}

/// Result of one seed.
#[derive(Debug)]
pub struct RunOutcome {
    pub artifacts: RunArtifacts,
    pub result: Result<RunSummary, Error>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub env_steps: usize,
    pub learn_steps: usize,
    pub final_eval: Option<LogRow>,
    pub analysis: AnalysisReport,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    seed: u64,
    env: &'a str,
    parameters: ParamCounts,
}

pub fn settings(config: &ExperimentConfig) -> AnalysisSettings {
    AnalysisSettings {
        states: config.analysis_states,
        actions: config.analysis_actions,
        gap_k_max: config.gap_k_max,
        gap_refs: config.gap_refs,
        rollouts: config.analysis_rollouts,
    }
}

/// Run every seed, concurrently, each in its own directory.
pub fn run_experiment(config: &ExperimentConfig, config_text: &str) -> Vec<RunOutcome> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = config
            .seeds
            .iter()
            .map(|&seed| scope.spawn(move || run_seed(config, config_text, seed)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    })
}

pub fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(format!("seed-{seed}"))
}

/// Train and analyze one seed. Failures leave partial artifacts and a marker.
pub fn run_seed(config: &ExperimentConfig, config_text: &str, seed: u64) -> RunOutcome {
    let mut artifacts = RunArtifacts::new(seed, seed_dir(config, seed));
    let result = execute(config, config_text, seed, &mut artifacts);
    if let Err(e) = &result {
        let marker = artifacts.dir.join(FAILED_MARKER);
        // Best effort: the directory itself may be what failed.
        let _ = std::fs::write(marker, format!("{}\n", e.to_json_line()));
    }
    RunOutcome { artifacts, result }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn execute(config: &ExperimentConfig, config_text: &str, seed: u64, artifacts: &mut RunArtifacts) -> Result<RunSummary, Error> {
    let kind = config.env_kind()?;
    let train_config = config.train_config()?;
    let dir = artifacts.dir.clone();
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    write_file(&artifacts.config_echo, config_text.as_bytes())?;

    let env = PointEnv::new(kind);
    let streams = Streams::new(seed);
    let template = Agent::new(&train_config.arch, 2, 2, &mut streams.stream(Stream::Init))?;
    let manifest = RunManifest { seed, env: kind.name(), parameters: ParamCounts::of(&template) };
    write_file(&dir.join("run.json"), to_json(&manifest).as_bytes())?;

    let mut recorder = Recorder {
        metrics: MetricsWriter::create(&artifacts.metrics)?,
        trajectories: TrajectoryWriter::create(&artifacts.trajectories)?,
        checkpoint_dir: dir.join("checkpoints"),
        checkpoints: Vec::new(),
        error: None,
    };
    let outcome = train(&train_config, &env, streams, &mut recorder);
    artifacts.checkpoints.append(&mut recorder.checkpoints);
    if let Some(e) = recorder.error.take() {
        return Err(e);
    }
    let outcome = match outcome {
        Ok(o) => o,
        Err(failure) => {
            let path = dir.join("checkpoints").join("failed.ckpt");
            Checkpoint::from_agent(&failure.agent).save(&path)?;
            artifacts.checkpoints.push(path);
            return Err(Error::Train { env_step: failure.env_step, source: failure.error });
        }
    };

    let final_path = dir.join("checkpoints").join("final.ckpt");
    Checkpoint::from_agent(&outcome.agent).save(&final_path)?;
    artifacts.checkpoints.push(final_path);

    let mut rng = streams.stream(Stream::Analysis);
    let (analysis, rollouts) = analyze(&outcome.agent, &env, &settings(config), &mut rng)?;
    for (i, t) in rollouts.iter().enumerate() {
        recorder.trajectories.write("rollout", outcome.env_steps, i, t)?;
    }
    recorder.trajectories.flush()?;
    write_file(&artifacts.analysis, to_json(&analysis).as_bytes())?;

    let final_eval = outcome.log.eval_rows().next_back().cloned();
    Ok(RunSummary { env_steps: outcome.env_steps, learn_steps: outcome.learn_steps, final_eval, analysis })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// `trajectories.csv` rows: `source,env_step,episode,t,x,y,reward`; `t = 0`
/// is the reset position and carries no reward.
pub struct TrajectoryWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
        let mut w = Self { path: path.to_path_buf(), inner };
        w.inner
            .write_record(["source", "env_step", "episode", "t", "x", "y", "reward"])
            .map_err(|e| w.err(e))?;
        Ok(w)
    }

    fn err(&self, e: csv::Error) -> Error {
        Error::io(&self.path, std::io::Error::other(e))
    }

    pub fn write(&mut self, source: &str, env_step: usize, episode: usize, t: &Trajectory) -> Result<(), Error> {
        for (i, p) in t.positions.iter().enumerate() {
            let reward = if i == 0 { String::new() } else { format!("{:.16e}", t.rewards[i - 1]) };
            let record = [
                source.to_string(),
                env_step.to_string(),
                episode.to_string(),
                i.to_string(),
                format!("{:.16e}", p[0]),
                format!("{:.16e}", p[1]),
                reward,
            ];
            self.inner.write_record(&record).map_err(|e| self.err(e))?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), Error> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

struct Recorder {
    metrics: MetricsWriter,
    trajectories: TrajectoryWriter,
    checkpoint_dir: PathBuf,
    checkpoints: Vec<PathBuf>,
    /// First artifact write failure; training cannot be interrupted from here.
    error: Option<Error>,
}

impl Recorder {
    fn keep(&mut self, r: Result<(), Error>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }
}

impl TrainObserver for Recorder {
    fn on_row(&mut self, row: &LogRow) {
        let r = self.metrics.append(row).map_err(|e| Error::io(Path::new("metrics.csv"), e));
        self.keep(r);
    }

    fn on_eval(&mut self, env_step: usize, report: &EvalReport) {
        if let Some(t) = report.trajectories.first() {
            let r = self.trajectories.write("eval", env_step, 0, t).and_then(|_| self.trajectories.flush());
            self.keep(r);
        }
    }

    fn on_checkpoint(&mut self, env_step: usize, agent: &Agent) {
        let path = self.checkpoint_dir.join(format!("step-{env_step:09}.ckpt"));
        let r = Checkpoint::from_agent(agent).save(&path);
        if r.is_ok() {
            self.checkpoints.push(path);
        }
        self.keep(r);
    }
}

/// `x,y,r` rows of the reward map on an `n × n` grid over the room.
pub fn write_reward_field(kind: EnvKind, n: usize, path: &Path) -> Result<(), Error> {
    let err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file);
    w.write_record(["x", "y", "r"]).map_err(err)?;
    for (x, y, r) in PointEnv::new(kind).reward_field(n) {
        w.write_record([format!("{x:.16e}"), format!("{y:.16e}"), format!("{r:.16e}")]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
