//! Uniform steering-policy interface and the synthetic perturbed-policy zoo
//! used for the correlation studies.
//!
//! A policy instance carries per-episode noise state: clone one instance per
//! episode, call [`Policy::begin_episode`], then call [`Policy::predict`]
//! sequentially. All wrapper randomness is derived from
//! (seed, episode index, step index), so action streams are reproducible and
//! episodes can run concurrently on independent clones.

use crate::expert::{expert_action_from_features, feature_vector, FEATURES, F_SPEED};
use crate::rng;
use crate::vehicle::{Action, CONTROL_DT};
use crate::world::{Command, LaneFrame};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Lane-relative state features plus the navigation command; the artifact's
/// stand-in for a camera observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: [f64; FEATURES],
    pub command: Command,
    /// Duplicated from the feature vector for metric weighting.
    pub speed: f64,
}

impl Observation {
    pub fn new(features: [f64; FEATURES], command: Command) -> Self {
        let speed = features[F_SPEED];
        Self { features, command, speed }
    }

    pub fn from_frame(frame: &LaneFrame, command: Command, speed: f64) -> Self {
        Self::new(feature_vector(frame, speed), command)
    }
}

/// Anything mapping (observation, command) to an action. Steering is the
/// predicted component; throttle and brake always come from the expert
/// longitudinal controller.
pub trait Policy: Send {
    /// Reset per-episode noise state for the given episode index.
    fn begin_episode(&mut self, episode: u64);

    /// Predict the action for one observation. `step` indexes the
    /// observation within the run (control step online, global sample index
    /// offline) and seeds any wrapper noise.
    fn predict(&mut self, obs: &Observation, step: u64) -> Action<f64>;

    fn clone_box(&self) -> Box<dyn Policy>;
}

impl Clone for Box<dyn Policy> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// The expert as a policy over observations.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn begin_episode(&mut self, _episode: u64) {}

    fn predict(&mut self, obs: &Observation, _step: u64) -> Action<f64> {
        expert_action_from_features(&obs.features, obs.command)
    }

    fn clone_box(&self) -> Box<dyn Policy> {
        Box::new(*self)
    }
}

/// Synthetic steering perturbations layered over a base policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PerturbationSpec {
    /// Independent zero-mean Gaussian offset per step.
    WhiteNoise { std: f64 },
    /// Constant offset per episode; the sign is drawn at episode start, so
    /// averaged offline error stays zero-mean while each drive diverges.
    EpisodeBias { magnitude: f64 },
    /// Temporally correlated noise: x' = x (1 - theta dt) + N(0, std^2 dt).
    OuNoise { theta: f64, std: f64 },
    /// Negates steering with the given probability while the command is a
    /// turn.
    TurnFlip { prob: f64 },
    /// Rounds steering to a grid (ties away from zero).
    Quantize { step: f64 },
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            PerturbationSpec::WhiteNoise { std } if std < 0.0 => {
                Err(format!("white_noise std must be >= 0, got {std}"))
            }
            PerturbationSpec::EpisodeBias { magnitude } if magnitude < 0.0 => {
                Err(format!("episode_bias magnitude must be >= 0, got {magnitude}"))
            }
            PerturbationSpec::OuNoise { theta, std } if theta <= 0.0 || std < 0.0 => {
                Err(format!("ou_noise needs theta > 0 and std >= 0, got ({theta}, {std})"))
            }
            PerturbationSpec::TurnFlip { prob } if !(0.0..=1.0).contains(&prob) => {
                Err(format!("turn_flip prob must be in [0, 1], got {prob}"))
            }
            PerturbationSpec::Quantize { step } if step < 0.0 => {
                Err(format!("quantize step must be >= 0, got {step}"))
            }
            _ => Ok(()),
        }
    }

    /// Short identifier used in model ids and reports.
    pub fn label(&self) -> String {
        match self {
            PerturbationSpec::WhiteNoise { std } => format!("white-{std}"),
            PerturbationSpec::EpisodeBias { magnitude } => format!("bias-{magnitude}"),
            PerturbationSpec::OuNoise { theta, std } => format!("ou-{theta}-{std}"),
            PerturbationSpec::TurnFlip { prob } => format!("flip-{prob}"),
            PerturbationSpec::Quantize { step } => format!("quant-{step}"),
        }
    }
}

/// Round to the nearest grid point, ties away from zero.
fn quantize_steering(x: f64, step: f64) -> f64 {
    if step <= 0.0 {
        return x;
    }
    (x / step).round() * step
}

/// A base policy with a steering perturbation applied on top.
pub struct PerturbedPolicy {
    base: Box<dyn Policy>,
    spec: PerturbationSpec,
    seed: u64,
    episode: u64,
    /// EpisodeBias sign for the current episode.
    bias_sign: f64,
    /// OU state, reset each episode.
    ou_state: f64,
}

/// Wrap a base policy with a perturbation. Panics on an invalid spec (specs
/// from config files are validated at parse time).
pub fn make_perturbed(base: Box<dyn Policy>, spec: PerturbationSpec, seed: u64) -> PerturbedPolicy {
    if let Err(msg) = spec.validate() {
        panic!("invalid perturbation spec: {msg}");
    }
    let mut p = PerturbedPolicy { base, spec, seed, episode: 0, bias_sign: 1.0, ou_state: 0.0 };
    p.begin_episode(0);
    p
}

impl Policy for PerturbedPolicy {
    fn begin_episode(&mut self, episode: u64) {
        self.base.begin_episode(episode);
        self.episode = episode;
        self.ou_state = 0.0;
        let mut rng = rng::stream(self.seed, "episode-bias", &[episode]);
        self.bias_sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }

    fn predict(&mut self, obs: &Observation, step: u64) -> Action<f64> {
        let base = self.base.predict(obs, step);
        let steering = match self.spec {
            PerturbationSpec::WhiteNoise { std } => {
                if std == 0.0 {
                    base.steering
                } else {
                    let mut rng = rng::stream(self.seed, "white", &[self.episode, step]);
                    let z: f64 = rng.sample(StandardNormal);
                    base.steering + std * z
                }
            }
            PerturbationSpec::EpisodeBias { magnitude } => base.steering + self.bias_sign * magnitude,
            PerturbationSpec::OuNoise { theta, std } => {
                let mut rng = rng::stream(self.seed, "ou", &[self.episode, step]);
                let z: f64 = rng.sample(StandardNormal);
                self.ou_state = self.ou_state * (1.0 - theta * CONTROL_DT)
                    + std * CONTROL_DT.sqrt() * z;
                base.steering + self.ou_state
            }
            PerturbationSpec::TurnFlip { prob } => {
                if matches!(obs.command, Command::Left | Command::Right) {
                    let mut rng = rng::stream(self.seed, "flip", &[self.episode, step]);
                    if rng.random::<f64>() < prob {
                        -base.steering
                    } else {
                        base.steering
                    }
                } else {
                    base.steering
                }
            }
            PerturbationSpec::Quantize { step: grid } => quantize_steering(base.steering, grid),
        };
        Action::new(steering, base.throttle, base.brake)
    }

    fn clone_box(&self) -> Box<dyn Policy> {
        Box::new(PerturbedPolicy {
            base: self.base.clone_box(),
            spec: self.spec,
            seed: self.seed,
            episode: self.episode,
            bias_sign: self.bias_sign,
            ou_state: self.ou_state,
        })
    }
}

/// A fixed-action policy (test and guard-rail scaffolding: full-left,
/// zero-throttle, and similar degenerate drivers).
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub action: Action<f64>,
}

impl Policy for ConstantPolicy {
    fn begin_episode(&mut self, _episode: u64) {}

    fn predict(&mut self, _obs: &Observation, _step: u64) -> Action<f64> {
        self.action
    }

    fn clone_box(&self) -> Box<dyn Policy> {
        Box::new(*self)
    }
}
