//! Policies: scripted controllers for smoke tests and consistency sweeps,
//! plus a line-delimited-JSON bridge to external processes.

use super::{Action, ActionPayload};
use crate::error::{CoreError, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

/// What a policy sees each frame. Images are deliberately excluded here;
/// external policies that need pixels read them from the episode directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyInput {
    pub episode: String,
    pub frame: usize,
    pub ee_position: [f64; 3],
    pub ee_quat_wxyz: [f64; 4],
    pub gripper_opening: f64,
}

pub trait Policy: Send {
    fn id(&self) -> String;
    fn begin_episode(&mut self, episode: &str, seed: u64) -> Result<()>;
    /// Return an action chunk; the runner consumes one action per frame and
    /// calls again when the chunk is exhausted.
    fn act(&mut self, input: &PolicyInput) -> Result<Vec<Action>>;
}

/// Open-loop pick-and-place: hover over the pick point, descend, close,
/// lift, carry, release. Per-episode Gaussian noise on the pick/place
/// waypoints models execution variability for consistency sweeps.
pub struct ScriptedPickPlace {
    pub pick: [f64; 3],
    pub place: [f64; 3],
    pub hover_height: f64,
    pub grasp_height: f64,
    pub phase_frames: usize,
    pub noise_sigma: f64,
    pick_jitter: [f64; 2],
    place_jitter: [f64; 2],
}

impl ScriptedPickPlace {
    pub fn new(
        pick: [f64; 3],
        place: [f64; 3],
        hover_height: f64,
        grasp_height: f64,
        phase_frames: usize,
        noise_sigma: f64,
    ) -> Self {
        Self {
            pick,
            place,
            hover_height,
            grasp_height,
            phase_frames,
            noise_sigma,
            pick_jitter: [0.0; 2],
            place_jitter: [0.0; 2],
        }
    }

    fn waypoint(&self, frame: usize) -> ([f64; 3], f64) {
        let phase = frame / self.phase_frames;
        let pick = [
            self.pick[0] + self.pick_jitter[0],
            self.pick[1] + self.pick_jitter[1],
            self.pick[2],
        ];
        let place = [
            self.place[0] + self.place_jitter[0],
            self.place[1] + self.place_jitter[1],
            self.place[2],
        ];
        match phase {
            0 => ([pick[0], pick[1], pick[2] + self.hover_height], 1.0),
            1 => ([pick[0], pick[1], pick[2] + self.grasp_height], 1.0),
            2 => ([pick[0], pick[1], pick[2] + self.grasp_height], 0.0),
            3 => ([pick[0], pick[1], pick[2] + self.hover_height], 0.0),
            4 => ([place[0], place[1], place[2] + self.hover_height], 0.0),
            5 => ([place[0], place[1], place[2] + self.grasp_height], 0.0),
            _ => ([place[0], place[1], place[2] + self.hover_height], 1.0),
        }
    }
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    // Marsaglia polar method; matches the sampler used in identification.
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return sigma * u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

impl Policy for ScriptedPickPlace {
    fn id(&self) -> String {
        format!("scripted-pick-place-s{:.4}", self.noise_sigma)
    }

    fn begin_episode(&mut self, _episode: &str, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.pick_jitter = [gauss(&mut rng, self.noise_sigma), gauss(&mut rng, self.noise_sigma)];
        self.place_jitter = [gauss(&mut rng, self.noise_sigma), gauss(&mut rng, self.noise_sigma)];
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput) -> Result<Vec<Action>> {
        let (position, gripper) = self.waypoint(input.frame);
        Ok(vec![Action {
            payload: ActionPayload::EePoseTarget {
                position,
                quat_wxyz: [1.0, 0.0, 0.0, 0.0],
            },
            gripper,
        }])
    }
}

/// Straight-line planar push from a start point through the object toward a
/// goal, with per-episode lateral noise.
pub struct ScriptedPush {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub frames: usize,
    pub noise_sigma: f64,
    jitter: [f64; 2],
}

impl ScriptedPush {
    pub fn new(start: [f64; 2], goal: [f64; 2], frames: usize, noise_sigma: f64) -> Self {
        Self { start, goal, frames, noise_sigma, jitter: [0.0; 2] }
    }
}

impl Policy for ScriptedPush {
    fn id(&self) -> String {
        format!("scripted-push-s{:.4}", self.noise_sigma)
    }

    fn begin_episode(&mut self, _episode: &str, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.jitter = [gauss(&mut rng, self.noise_sigma), gauss(&mut rng, self.noise_sigma)];
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput) -> Result<Vec<Action>> {
        let t = (input.frame as f64 / self.frames as f64).min(1.0);
        let x = self.start[0] + (self.goal[0] - self.start[0]) * t + self.jitter[0];
        let y = self.start[1] + (self.goal[1] - self.start[1]) * t + self.jitter[1];
        Ok(vec![Action {
            payload: ActionPayload::PlanarTarget { x, y },
            gripper: 0.0,
        }])
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum ExternalRequest<'a> {
    BeginEpisode { episode: &'a str, seed: u64 },
    Act(&'a PolicyInput),
}

#[derive(Debug, Deserialize)]
struct ExternalResponse {
    #[serde(default)]
    actions: Vec<Action>,
    #[serde(default)]
    ok: bool,
}

/// Bridge to an external policy process speaking line-delimited JSON over
/// stdio: one request per line out, one response per line back. A reader
/// thread decouples the child's stdout so a hung policy trips the timeout
/// instead of blocking the runner.
pub struct ExternalPolicy {
    name: String,
    child: Child,
    stdin: std::process::ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
    pub timeout: Duration,
}

pub const EXTERNAL_POLICY_TIMEOUT: Duration = Duration::from_secs(30);

impl ExternalPolicy {
    pub fn spawn(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| CoreError::Policy(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            name: program.to_string(),
            child,
            stdin,
            lines: rx,
            timeout: EXTERNAL_POLICY_TIMEOUT,
        })
    }

    fn roundtrip(&mut self, request: &ExternalRequest<'_>) -> Result<ExternalResponse> {
        let mut line = serde_json::to_string(request)
            .map_err(|e| CoreError::Policy(e.to_string()))?;
        line.push('\n');
        self.stdin
            .write_all(line.as_bytes())
            .and_then(|_| self.stdin.flush())
            .map_err(|e| CoreError::Policy(format!("write to {}: {e}", self.name)))?;
        let reply = self
            .lines
            .recv_timeout(self.timeout)
            .map_err(|_| {
                CoreError::Policy(format!(
                    "{} did not respond within {:?}",
                    self.name, self.timeout
                ))
            })?
            .map_err(|e| CoreError::Policy(format!("read from {}: {e}", self.name)))?;
        serde_json::from_str(&reply)
            .map_err(|e| CoreError::Policy(format!("bad response from {}: {e}", self.name)))
    }
}

impl Policy for ExternalPolicy {
    fn id(&self) -> String {
        format!("external:{}", self.name)
    }

    fn begin_episode(&mut self, episode: &str, seed: u64) -> Result<()> {
        let resp = self.roundtrip(&ExternalRequest::BeginEpisode { episode, seed })?;
        if !resp.ok {
            return Err(CoreError::Policy(format!(
                "{} rejected episode {episode}",
                self.name
            )));
        }
        Ok(())
    }

    fn act(&mut self, input: &PolicyInput) -> Result<Vec<Action>> {
        let resp = self.roundtrip(&ExternalRequest::Act(input))?;
        if resp.actions.is_empty() {
            return Err(CoreError::Policy(format!(
                "{} returned an empty action chunk",
                self.name
            )));
        }
        Ok(resp.actions)
    }
}

impl Drop for ExternalPolicy {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ECHO_POLICY: &str = r#"
import sys, json
for line in sys.stdin:
    req = json.loads(line)
    if "begin_episode" in req:
        print(json.dumps({"ok": True}), flush=True)
    else:
        f = req["act"]["frame"]
        print(json.dumps({"actions": [{"payload": {"joint_target": [float(f)]}, "gripper": 1.0}]}), flush=True)
"#;

    #[test]
    fn external_policy_roundtrip() {
        let mut p = ExternalPolicy::spawn("python3", &["-c".into(), ECHO_POLICY.into()]).unwrap();
        p.begin_episode("ep000", 7).unwrap();
        let input = PolicyInput {
            episode: "ep000".into(),
            frame: 5,
            ee_position: [0.0; 3],
            ee_quat_wxyz: [1.0, 0.0, 0.0, 0.0],
            gripper_opening: 0.08,
        };
        let actions = p.act(&input).unwrap();
        assert_eq!(actions.len(), 1);
        match &actions[0].payload {
            ActionPayload::JointTarget(t) => assert_eq!(t, &vec![5.0]),
            other => panic!("unexpected payload {other:?}"),
        }
    }

    #[test]
    fn external_policy_timeout_is_an_error() {
        let mut p = ExternalPolicy::spawn(
            "python3",
            &["-c".into(), "import time; time.sleep(60)".into()],
        )
        .unwrap();
        p.timeout = Duration::from_millis(200);
        let err = p.begin_episode("ep000", 0).unwrap_err();
        assert!(matches!(err, CoreError::Policy(_)), "{err}");
    }

    #[test]
    fn scripted_pick_place_noise_is_seeded() {
        let mut a = ScriptedPickPlace::new([0.1, 0.0, 0.0], [0.3, 0.0, 0.0], 0.1, 0.02, 20, 0.01);
        let mut b = ScriptedPickPlace::new([0.1, 0.0, 0.0], [0.3, 0.0, 0.0], 0.1, 0.02, 20, 0.01);
        a.begin_episode("ep000", 42).unwrap();
        b.begin_episode("ep000", 42).unwrap();
        assert_eq!(a.pick_jitter, b.pick_jitter);
        a.begin_episode("ep000", 43).unwrap();
        assert_ne!(a.pick_jitter, b.pick_jitter);
        // Zero sigma means no jitter at all.
        let mut c = ScriptedPickPlace::new([0.1, 0.0, 0.0], [0.3, 0.0, 0.0], 0.1, 0.02, 20, 0.0);
        c.begin_episode("ep000", 42).unwrap();
        assert_eq!(c.pick_jitter, [0.0, 0.0]);
    }
}
