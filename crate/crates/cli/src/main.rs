use clap::{Args, Parser, Subcommand};
use splatsim_cli::{commands, manifest::RunManifest, runner};
use splatsim_core::env::{demo, Scenario};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "splatsim", about = "Real-to-sim policy evaluation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch evaluation described by a run manifest.
    Eval {
        /// Run manifest (JSON); paths inside are relative to the file.
        manifest: PathBuf,
        /// Override the manifest's batch seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the manifest's worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the manifest's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-execute a logged episode's exact action sequence.
    Replay {
        /// Episode log (JSONL) written by `eval`.
        log: PathBuf,
        /// Scenario to replay against.
        #[arg(long)]
        scenario: PathBuf,
        /// Replay even when the scenario's config hash differs from the log
        /// (perturbed-dynamics ablations).
        #[arg(long)]
        allow_config_mismatch: bool,
    },
    /// Real-to-sim alignment tools.
    #[command(subcommand)]
    Align(AlignCommand),
    /// Identify spring-mass twin parameters from a tracked trajectory.
    Sysid {
        /// Rest-state particle positions (JSON list of [x,y,z]).
        points: PathBuf,
        /// Tracked trajectory (JSONL, one {time, points, controls} per line).
        trajectory: PathBuf,
        /// Identification config (JSON: total_mass, max_neighbors, ground_z,
        /// ranges, refinement settings).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for twin_spec.json and loss_trace.csv.
        #[arg(long)]
        out: PathBuf,
        /// Skip per-spring refinement; keep the global uniform stiffness.
        #[arg(long)]
        uniform_stiffness: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a scenario's first initial state to a PNG (debug).
    Render {
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        camera: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Success-rate statistics over outcome files; with exactly two files,
    /// also a confusion matrix (first = predicted, second = truth).
    Report {
        /// outcomes.jsonl files written by `eval`.
        #[arg(required = true)]
        outcomes: Vec<PathBuf>,
    },
    /// Write the self-contained demo assets (gantry robot + cube scenarios)
    /// and a ready-to-run manifest into a directory.
    Demo {
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AlignCommand {
    /// Rigid registration of two point clouds (RANSAC + trimmed ICP).
    Pose(PoseArgs),
    /// Fit the per-channel polynomial color transform from pixel pairs.
    Color {
        /// JSON list of [[r,g,b] rendered, [r,g,b] captured] pairs.
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        degree: usize,
    },
    /// Label splat kernels by nearest point in a labeled cloud.
    Segment {
        /// Gaussian splat PLY.
        splat: PathBuf,
        /// Labeled cloud (JSON: points + labels).
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PoseArgs {
    /// Source cloud (JSON list of [x,y,z]).
    src: PathBuf,
    /// Destination cloud (JSON list of [x,y,z]).
    dst: PathBuf,
    /// Output transform JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    #[arg(long, default_value_t = 0.01)]
    inlier_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(command: Command) -> splatsim_core::Result<ExitCode> {
    match command {
        Command::Eval { manifest, seed, workers, out } => {
            let mut m = RunManifest::load(&manifest)?;
            if let Some(s) = seed {
                m.seed = s;
            }
            if let Some(w) = workers {
                m.workers = w;
            }
            if let Some(o) = out {
                m.out = o.display().to_string();
            }
            let (summary, _records) = runner::run_eval(&m)?;
            println!(
                "{} episodes, {} successes ({:.1}%), {} faults, 95% CI [{:.4}, {:.4}]",
                summary.episodes,
                summary.successes,
                100.0 * summary.success_rate,
                summary.faults,
                summary.interval.0,
                summary.interval.1
            );
            Ok(if summary.faults > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
        }
        Command::Replay { log, scenario, allow_config_mismatch } => {
            let scenario = Scenario::load(&scenario)?;
            let record = runner::run_replay(&log, &scenario, allow_config_mismatch)?;
            println!(
                "{}: success={} truncated={} hash={} matches_original={}",
                record.episode_id,
                record.success,
                record.truncated,
                record.trajectory_hash,
                record
                    .matches_original
                    .map(|b| b.to_string())
                    .unwrap_or_else(|| "unknown".into())
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Align(cmd) => {
            match cmd {
                AlignCommand::Pose(a) => {
                    let report = commands::cmd_align_pose(
                        &a.src, &a.dst, &a.out, a.trials, a.inlier_tol, a.seed,
                    )?;
                    println!(
                        "rms={:.3e} after {} iterations{}",
                        report.rms,
                        report.iterations,
                        if report.stalled { " (stalled)" } else { "" }
                    );
                }
                AlignCommand::Color { pairs, out, degree } => {
                    commands::cmd_align_color(&pairs, &out, degree)?;
                    println!("wrote degree-{degree} color transform to {}", out.display());
                }
                AlignCommand::Segment { splat, cloud, out } => {
                    let histogram = commands::cmd_align_segment(&splat, &cloud, &out)?;
                    for (label, count) in histogram {
                        println!("label {label}: {count} kernels");
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sysid { points, trajectory, config, out, uniform_stiffness, seed } => {
            let spec = commands::cmd_sysid(
                &points,
                &trajectory,
                &config,
                &out,
                uniform_stiffness,
                seed,
            )?;
            println!(
                "identified {} twin: stiffness={:.4} mu={:.4} damping={:.4} loss={:.3e}",
                spec.stiffness_mode,
                spec.uniform_stiffness,
                spec.friction_mu,
                spec.spring_damping,
                spec.final_loss
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Render { scenario, camera, out } => {
            commands::cmd_render(&scenario, camera, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { outcomes } => {
            let report = commands::cmd_report(&outcomes)?;
            for o in &report.outcomes {
                println!(
                    "{}: {}/{} successes ({:.1}%), {} faults, 95% CI [{:.4}, {:.4}]",
                    o.file,
                    o.successes,
                    o.episodes,
                    100.0 * o.success_rate,
                    o.faults,
                    o.interval.0,
                    o.interval.1
                );
            }
            if let Some(c) = &report.confusion {
                println!("confusion: tp={} fp={} fn={} tn={}", c.tp, c.fp, c.fn_, c.tn);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Demo { out } => {
            let (pick, push) = demo::write_demo_assets(&out)?;
            let manifest = RunManifest {
                scenario: "pick_place.json".into(),
                policy: splatsim_cli::manifest::PolicySpec::demo_pick_place(0.0),
                initial_states: Default::default(),
                episodes: 4,
                seed: 0,
                out: "results".into(),
                workers: 2,
                base_dir: out.clone(),
            };
            manifest.save(out.join("manifest.json"))?;
            println!("wrote {} and {}", pick.display(), push.display());
            println!("run: splatsim eval {}", out.join("manifest.json").display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
