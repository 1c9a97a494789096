//! Batch episode execution and replay. Workers run independent environments;
//! results are aggregated in episode-id order so worker count never changes
//! the output.

use crate::manifest::{InitialStateSource, RunManifest};
use serde::{Deserialize, Serialize};
use splatsim_core::env::log::{
    hash_hex, EpisodeFooter, EpisodeHeader, EpisodeLog, EpisodeLogWriter, FrameRecord,
};
use splatsim_core::env::policy::{Policy, PolicyInput};
use splatsim_core::env::{sample_initial_grid, Action, Environment, InitialState, Scenario};
use splatsim_core::metrics::clopper_pearson;
use splatsim_core::{CoreError, Result};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub seed: u64,
    pub success: bool,
    pub truncated: bool,
    pub frames: usize,
    pub trajectory_hash: String,
    /// Fault description when the episode could not complete (policy error,
    /// simulation fault). Faulted episodes count as failures.
    pub fault: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scenario: String,
    pub config_hash: String,
    pub episodes: usize,
    pub successes: usize,
    pub faults: usize,
    pub success_rate: f64,
    /// 95% Clopper-Pearson interval on the success rate.
    pub interval: (f64, f64),
}

/// Per-episode seed: FNV-1a mix of the batch seed and the episode index, so
/// seeds do not depend on worker scheduling.
pub fn episode_seed(base: u64, index: usize) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in base.to_le_bytes().iter().chain(&(index as u64).to_le_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Drive one episode to the horizon, logging every applied action.
pub fn run_episode(
    env: &mut Environment,
    policy: &mut dyn Policy,
    initial: &InitialState,
    seed: u64,
    log: Option<&mut EpisodeLogWriter<std::fs::File>>,
) -> Result<(bool, bool, usize, u64)> {
    policy.begin_episode(&initial.episode_id, seed)?;
    let mut obs = env.reset(initial)?;
    let mut chunk: Vec<Action> = Vec::new();
    let mut frames;
    let mut log = log;
    loop {
        if chunk.is_empty() {
            let input = PolicyInput {
                episode: initial.episode_id.clone(),
                frame: obs.frame,
                ee_position: obs.ee_position,
                ee_quat_wxyz: obs.ee_quat_wxyz,
                gripper_opening: obs.gripper_opening,
            };
            chunk = policy.act(&input)?;
            chunk.reverse();
        }
        let action = chunk.pop().expect("non-empty action chunk");
        let (o, info) = env.step(&action)?;
        obs = o;
        frames = info.frame;
        if let Some(w) = log.as_deref_mut() {
            w.frame(FrameRecord {
                frame: info.frame,
                action,
                joints: env.joints().to_vec(),
                hash: hash_hex(env.trajectory_hash()),
            })?;
        }
        if info.done {
            break;
        }
    }
    let verdict = env.verdict()?;
    Ok((verdict.success, verdict.truncated, frames, env.trajectory_hash()))
}

fn initial_states(manifest: &RunManifest, scenario: &Scenario) -> Result<Vec<InitialState>> {
    match &manifest.initial_states {
        InitialStateSource::Grid => Ok(sample_initial_grid(
            &scenario.randomization,
            manifest.episodes,
        )),
        InitialStateSource::File { path } => {
            let path = manifest.resolve(path);
            let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            let states: Vec<InitialState> =
                serde_json::from_str(&text).map_err(|e| CoreError::Parse {
                    path: path.display().to_string(),
                    line: e.line(),
                    msg: e.to_string(),
                })?;
            if states.len() < manifest.episodes {
                return Err(CoreError::Invalid(format!(
                    "initial-state file has {} states, manifest wants {}",
                    states.len(),
                    manifest.episodes
                )));
            }
            Ok(states.into_iter().take(manifest.episodes).collect())
        }
    }
}

fn one_worker(
    scenario: &Scenario,
    manifest: &RunManifest,
    states: &[InitialState],
    queue: &Mutex<Vec<usize>>,
    out_dir: &Path,
    tx: &mpsc::Sender<(usize, EpisodeRecord)>,
) -> Result<()> {
    let mut env = Environment::new(scenario.clone())?;
    let mut policy = manifest.policy.build()?;
    loop {
        let idx = match queue.lock().expect("queue lock").pop() {
            Some(i) => i,
            None => return Ok(()),
        };
        let initial = &states[idx];
        let seed = episode_seed(manifest.seed, idx);
        let ep_dir = out_dir.join("episodes").join(&initial.episode_id);
        std::fs::create_dir_all(&ep_dir).map_err(|e| CoreError::Io {
            path: ep_dir.display().to_string(),
            source: e,
        })?;
        let header = EpisodeHeader {
            scenario: scenario.name.clone(),
            config_hash: hash_hex(scenario.config_hash()),
            episode_id: initial.episode_id.clone(),
            seed,
            policy_id: policy.id(),
            initial: initial.clone(),
        };
        let log_path = ep_dir.join("log.jsonl");
        let mut writer = EpisodeLogWriter::create(&log_path, &header)?;
        let record = match run_episode(&mut env, policy.as_mut(), initial, seed, Some(&mut writer))
        {
            Ok((success, truncated, frames, hash)) => {
                writer.finish(EpisodeFooter {
                    success,
                    truncated,
                    frames,
                    trajectory_hash: hash_hex(hash),
                })?;
                EpisodeRecord {
                    episode_id: initial.episode_id.clone(),
                    seed,
                    success,
                    truncated,
                    frames,
                    trajectory_hash: hash_hex(hash),
                    fault: None,
                }
            }
            Err(e) => EpisodeRecord {
                episode_id: initial.episode_id.clone(),
                seed,
                success: false,
                truncated: true,
                frames: 0,
                trajectory_hash: hash_hex(0),
                fault: Some(e.to_string()),
            },
        };
        tx.send((idx, record)).expect("aggregator alive");
    }
}

/// Execute the batch described by the manifest. Returns the summary; all
/// artifacts (manifest copy, per-episode logs, flat outcome file, summary)
/// land under the manifest's output directory.
pub fn run_eval(manifest: &RunManifest) -> Result<(EvalSummary, Vec<EpisodeRecord>)> {
    manifest.validate()?;
    let scenario = Scenario::load(manifest.resolve(&manifest.scenario))?;
    let states = initial_states(manifest, &scenario)?;
    let out_dir: PathBuf = manifest.resolve(&manifest.out);
    std::fs::create_dir_all(&out_dir).map_err(|e| CoreError::Io {
        path: out_dir.display().to_string(),
        source: e,
    })?;
    manifest.save(out_dir.join("manifest.json"))?;

    // LIFO queue of episode indices; results are re-ordered by index below,
    // so pop order is irrelevant to the output.
    let queue = Arc::new(Mutex::new((0..states.len()).rev().collect::<Vec<_>>()));
    let (tx, rx) = mpsc::channel();
    let workers = manifest.workers.min(states.len()).max(1);
    let mut records: Vec<Option<EpisodeRecord>> = vec![None; states.len()];
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for _ in 0..workers {
            let queue = Arc::clone(&queue);
            let tx = tx.clone();
            let scenario = &scenario;
            let states = &states;
            let out_dir = &out_dir;
            handles.push(
                scope.spawn(move || one_worker(scenario, manifest, states, &queue, out_dir, &tx)),
            );
        }
        drop(tx);
        for (idx, record) in rx {
            records[idx] = Some(record);
        }
        for h in handles {
            h.join().expect("worker panicked")?;
        }
        Ok(())
    })?;
    let records: Vec<EpisodeRecord> = records.into_iter().map(|r| r.expect("all episodes ran")).collect();

    let successes = records.iter().filter(|r| r.success).count();
    let faults = records.iter().filter(|r| r.fault.is_some()).count();
    let interval = clopper_pearson(successes, records.len(), 0.95)?;
    let summary = EvalSummary {
        scenario: scenario.name.clone(),
        config_hash: hash_hex(scenario.config_hash()),
        episodes: records.len(),
        successes,
        faults,
        success_rate: successes as f64 / records.len() as f64,
        interval,
    };

    let mut outcomes = String::new();
    for r in &records {
        outcomes.push_str(&serde_json::to_string(r).map_err(|e| CoreError::Invalid(e.to_string()))?);
        outcomes.push('\n');
    }
    std::fs::write(out_dir.join("outcomes.jsonl"), outcomes).map_err(|e| CoreError::Io {
        path: out_dir.join("outcomes.jsonl").display().to_string(),
        source: e,
    })?;
    let summary_text = serde_json::to_string_pretty(&summary)
        .map_err(|e| CoreError::Invalid(e.to_string()))?;
    std::fs::write(out_dir.join("summary.json"), summary_text).map_err(|e| CoreError::Io {
        path: out_dir.join("summary.json").display().to_string(),
        source: e,
    })?;
    let mut csv = String::from("episode_id,seed,success,truncated,frames,trajectory_hash,fault\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.episode_id,
            r.seed,
            r.success,
            r.truncated,
            r.frames,
            r.trajectory_hash,
            r.fault.as_deref().unwrap_or("")
        ));
    }
    std::fs::write(out_dir.join("report.csv"), csv).map_err(|e| CoreError::Io {
        path: out_dir.join("report.csv").display().to_string(),
        source: e,
    })?;
    Ok((summary, records))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub episode_id: String,
    pub success: bool,
    pub truncated: bool,
    pub trajectory_hash: String,
    /// Whether the replayed hash matches the logged one (None when the log
    /// has no footer).
    pub matches_original: Option<bool>,
}

/// Re-execute a logged episode's exact action sequence against a scenario.
/// Refuses config-hash mismatches unless `allow_config_mismatch` (the
/// perturbed-dynamics ablation path).
pub fn run_replay(
    log_path: &Path,
    scenario: &Scenario,
    allow_config_mismatch: bool,
) -> Result<ReplayRecord> {
    let log = EpisodeLog::load(log_path)?;
    let scenario_hash = hash_hex(scenario.config_hash());
    if log.header.config_hash != scenario_hash && !allow_config_mismatch {
        return Err(CoreError::Invalid(format!(
            "config hash mismatch: log {} vs scenario {} (pass --allow-config-mismatch to replay anyway)",
            log.header.config_hash, scenario_hash
        )));
    }
    let mut env = Environment::new(scenario.clone())?;
    env.reset(&log.header.initial)?;
    for f in &log.frames {
        env.step(&f.action)?;
    }
    let verdict = env.verdict()?;
    let hash = hash_hex(env.trajectory_hash());
    let matches_original = log
        .footer
        .as_ref()
        .map(|f| f.trajectory_hash == hash && log.header.config_hash == scenario_hash);
    Ok(ReplayRecord {
        episode_id: log.header.episode_id.clone(),
        success: verdict.success,
        truncated: verdict.truncated,
        trajectory_hash: hash,
        matches_original,
    })
}

/// Load a flat outcome file written by [`run_eval`].
pub fn load_outcomes(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| CoreError::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(records)
}
