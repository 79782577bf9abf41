//! The frame loop shared by DQN and the robust student variant.
//!
//! Per frame: resample the exploring network's noise, let the adversary
//! perturb the observation against that network, act ε-greedily on the
//! perturbed observation, step the game, and store the transition as the
//! agent saw it. After warmup every `train_every` frames a prioritized batch
//! updates Q and then, for the student variant, the student on the same
//! batch. Q⁻ is refreshed after the update of every `target_sync`-th frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{q_update, student_update, DistillSettings};
use super::{Algorithm, LossKind, RunSpec};
use crate::agents::{epsilon_greedy_in, AgentNet, ArchSpec, Mode};
use crate::attacks::{perturb_for_agent, AttackSpec};
use crate::envs::{clip_reward, EnvKind, StackedEnv};
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint};
use crate::replay::{observation, Observation, PrioritizedBuffer, Transition};

/// Something standing between the game and the agent.
pub trait Adversary {
    fn perturb(&mut self, net: &AgentNet, observation: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

impl Adversary for AttackSpec {
    fn perturb(&mut self, net: &AgentNet, observation: &[f64], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        perturb_for_agent(self, net, observation, mode, rng)
    }
}

/// Independent random streams, so that e.g. enabling an attack with random
/// starts does not shift the exploration sequence.
#[derive(Debug, Clone)]
pub struct Streams {
    pub init: ChaCha8Rng,
    pub env: ChaCha8Rng,
    pub explore: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub attack: ChaCha8Rng,
    pub validation: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        Self {
            init: stream(0),
            env: stream(1),
            explore: stream(2),
            replay: stream(3),
            noise: stream(4),
            attack: stream(5),
            validation: stream(6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Episode,
    Validation,
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub kind: RecordKind,
    /// Training episodes finished so far.
    pub episode: u64,
    pub frame: u64,
    pub score: f64,
    pub steps: usize,
    /// Mean Q loss over the updates of the episode.
    pub loss_q: Option<f64>,
    /// Mean student loss over the updates of the episode.
    pub loss_s: Option<f64>,
    pub exploration_epsilon: f64,
    /// Provable-loss λ, when that loss is in use.
    pub lambda: Option<f64>,
    /// Provable-loss box radius, when that loss is in use.
    pub box_epsilon: Option<f64>,
    /// Whether this validation score became the retained checkpoint.
    pub retained: Option<bool>,
}

/// What happened in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvent {
    pub frame: u64,
    /// Observation the agent acted on, after the adversary.
    pub observed: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
    pub trained: bool,
}

/// Header of a training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointInfo {
    pub format: String,
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub defense: LossKind,
    pub seed: u64,
    pub frame: u64,
    pub q: ArchSpec,
    pub student: Option<ArchSpec>,
    pub validation_score: Option<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "rsdqn-agent";

impl CheckpointInfo {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let info: Self = serde_json::from_value(ck.header.clone())
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if info.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not an agent checkpoint: {}", info.format)));
        }
        Ok(info)
    }

    /// Name of the deployed network: the student for RS-DQN, Q otherwise.
    pub fn deployed(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Dqn => "q",
            Algorithm::Rsdqn => "student",
        }
    }
}

/// Rebuilds the deployed network of a checkpoint.
pub fn deployed_network(ck: &Checkpoint) -> Result<(CheckpointInfo, AgentNet)> {
    let info = CheckpointInfo::from_checkpoint(ck)?;
    let arch = match info.algorithm {
        Algorithm::Dqn => info.q.clone(),
        Algorithm::Rsdqn => info
            .student
            .clone()
            .ok_or_else(|| Error::Format("RS-DQN checkpoint without a student architecture".into()))?,
    };
    let mut net = AgentNet::new(arch, &mut ChaCha8Rng::seed_from_u64(0))?;
    ck.load_params(info.deployed(), net.params_mut())?;
    Ok((info, net))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation weights, or final weights for the provable defense.
    pub checkpoint: Checkpoint,
    pub final_checkpoint: Checkpoint,
    pub metrics: Vec<MetricRecord>,
}

#[derive(Debug, Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let m = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Mean::default();
        m
    }
}

pub struct Trainer {
    spec: RunSpec,
    env: StackedEnv,
    q: AgentNet,
    target: AgentNet,
    student: Option<AgentNet>,
    opt_q: Adam,
    opt_s: Option<Adam>,
    buffer: PrioritizedBuffer,
    streams: Streams,
    adversary: Box<dyn Adversary>,
    frame: u64,
    episodes: u64,
    clean: Option<Vec<f64>>,
    pending: Option<(Observation, usize, f64)>,
    loss_q: Mean,
    loss_s: Mean,
    metrics: Vec<MetricRecord>,
    best: Option<(f64, Checkpoint)>,
}

impl Trainer {
    pub fn new(spec: RunSpec) -> Result<Self> {
        let adversary = Box::new(spec.train_attack);
        Self::with_adversary(spec, adversary)
    }

    pub fn with_adversary(spec: RunSpec, adversary: Box<dyn Adversary>) -> Result<Self> {
        let env = StackedEnv::new(spec.env);
        Self::with_env(spec, env, adversary)
    }

    /// Trainer on an arbitrary game, e.g. a scripted stub.
    pub fn with_env(spec: RunSpec, env: StackedEnv, adversary: Box<dyn Adversary>) -> Result<Self> {
        spec.validate()?;
        let cfg = &spec.config;
        let mut streams = Streams::new(spec.seed);
        let (input, actions) = (env.observation_len(), env.actions());
        let rsdqn = spec.algorithm == Algorithm::Rsdqn;
        let q = AgentNet::new(cfg.arch(input, actions, !rsdqn), &mut streams.init)?;
        let target = q.clone();
        let student = if rsdqn {
            Some(AgentNet::new(cfg.arch(input, actions, true), &mut streams.init)?)
        } else {
            None
        };
        let opt_q = Adam::new(cfg.adam_q(), q.params());
        let opt_s = student.as_ref().map(|s| Adam::new(cfg.adam_s(), s.params()));
        let buffer = PrioritizedBuffer::new(cfg.replay)?;
        Ok(Self {
            spec,
            env,
            q,
            target,
            student,
            opt_q,
            opt_s,
            buffer,
            streams,
            adversary,
            frame: 0,
            episodes: 0,
            clean: None,
            pending: None,
            loss_q: Mean::default(),
            loss_s: Mean::default(),
            metrics: Vec::new(),
            best: None,
        })
    }

    pub fn spec(&self) -> &RunSpec {
        &self.spec
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn q(&self) -> &AgentNet {
        &self.q
    }

    pub fn target(&self) -> &AgentNet {
        &self.target
    }

    pub fn student(&self) -> Option<&AgentNet> {
        self.student.as_ref()
    }

    pub fn buffer(&self) -> &PrioritizedBuffer {
        &self.buffer
    }

    pub fn metrics(&self) -> &[MetricRecord] {
        &self.metrics
    }

    /// The network that explores and is deployed.
    pub fn deployed(&self) -> &AgentNet {
        self.student.as_ref().unwrap_or(&self.q)
    }

    fn provable(&self) -> bool {
        self.spec.algorithm == Algorithm::Rsdqn && self.spec.defense == LossKind::Provable
    }

    fn schedule_values(&self) -> (Option<f64>, Option<f64>) {
        if self.provable() {
            let cfg = &self.spec.config;
            (Some(cfg.lambda().value(self.frame)), Some(cfg.box_radius().value(self.frame)))
        } else {
            (None, None)
        }
    }

    /// Advances one frame.
    pub fn step(&mut self) -> Result<FrameEvent> {
        let t = self.frame + 1;
        let clean = match self.clean.take() {
            Some(obs) => obs,
            None => {
                let seed = self.streams.env.random::<u64>();
                self.env.reset(seed)
            }
        };
        let exploring = self.student.as_mut().unwrap_or(&mut self.q);
        exploring.resample_noise(&mut self.streams.noise);
        let seen = self
            .adversary
            .perturb(exploring, &clean, Mode::Explore, &mut self.streams.attack)?;
        let seen_obs = observation(&seen);
        if let Some((state, action, reward)) = self.pending.take() {
            self.buffer.push(Transition {
                state,
                action,
                reward,
                next_state: seen_obs.clone(),
                done: false,
            });
        }
        let eps = self.spec.config.exploration.value(self.frame);
        let action = epsilon_greedy_in(exploring, &seen, eps, Mode::Explore, &mut self.streams.explore)?;
        let out = self.env.step(action)?;
        let reward = if self.spec.config.clip_rewards {
            clip_reward(out.reward)
        } else {
            out.reward
        };
        if out.done {
            self.buffer.push(Transition {
                state: seen_obs,
                action,
                reward,
                next_state: observation(&out.observation),
                done: true,
            });
        } else {
            self.pending = Some((seen_obs, action, reward));
            self.clean = Some(out.observation);
        }
        self.frame = t;

        let cfg = &self.spec.config;
        let trained = t > cfg.warmup && t % cfg.train_every == 0 && self.buffer.len() >= cfg.batch_size;
        if trained {
            self.train()?;
        }
        if t % self.spec.config.target_sync == 0 {
            self.target.copy_params_from(&self.q)?;
        }
        if out.done {
            self.finish_episode()?;
        }
        Ok(FrameEvent {
            frame: t,
            observed: seen,
            action,
            reward: out.reward,
            done: out.done,
            trained,
        })
    }

    fn train(&mut self) -> Result<()> {
        let cfg = &self.spec.config;
        let noise = &mut self.streams.noise;
        self.q.resample_noise(noise);
        self.target.resample_noise(noise);
        let batch = self.buffer.sample(cfg.batch_size, &mut self.streams.replay)?;
        let upd = q_update(&mut self.q, &self.target, &batch, &mut self.opt_q, cfg.gamma, cfg.double_q)?;
        self.buffer.update_priorities(&batch.indices, &upd.td_errors)?;
        self.loss_q.add(upd.loss);
        let (lambda, box_epsilon) = self.schedule_values();
        if let (Some(student), Some(opt)) = (self.student.as_mut(), self.opt_s.as_mut()) {
            student.resample_noise(&mut self.streams.noise);
            let settings = DistillSettings {
                kind: self.spec.defense,
                lambda_d: cfg.lambda_d,
                attack: self.spec.defense_attack,
                lambda: lambda.unwrap_or(1.0),
                box_epsilon: box_epsilon.unwrap_or(0.0),
            };
            let loss = student_update(&settings, &batch.states(), &self.q, student, opt, &mut self.streams.attack)?;
            self.loss_s.add(loss);
        }
        Ok(())
    }

    fn finish_episode(&mut self) -> Result<()> {
        self.episodes += 1;
        let stats = self.env.stats();
        let (lambda, box_epsilon) = self.schedule_values();
        let exploration_epsilon = self.spec.config.exploration.value(self.frame);
        self.metrics.push(MetricRecord {
            kind: RecordKind::Episode,
            episode: self.episodes,
            frame: self.frame,
            score: stats.score,
            steps: stats.steps,
            loss_q: self.loss_q.take(),
            loss_s: self.loss_s.take(),
            exploration_epsilon,
            lambda,
            box_epsilon,
            retained: None,
        });
        if self.episodes % self.spec.config.validation_interval == 0 {
            let (score, steps) = self.validate()?;
            // Ties go to the later, longer-trained weights.
            let retained = self.best.as_ref().is_none_or(|(best, _)| score >= *best);
            if retained {
                self.best = Some((score, self.checkpoint(Some(score))));
            }
            self.metrics.push(MetricRecord {
                kind: RecordKind::Validation,
                episode: self.episodes,
                frame: self.frame,
                score,
                steps,
                loss_q: None,
                loss_s: None,
                exploration_epsilon: self.spec.config.validation_epsilon,
                lambda,
                box_epsilon,
                retained: Some(retained),
            });
        }
        Ok(())
    }

    /// One episode of the deployed network with noise off, small ε-greedy
    /// and the training adversary in place.
    fn validate(&mut self) -> Result<(f64, usize)> {
        let mut env = StackedEnv::new(self.spec.env);
        let rng = &mut self.streams.validation;
        let mut obs = env.reset(rng.random::<u64>());
        let net = self.student.as_ref().unwrap_or(&self.q);
        let eps = self.spec.config.validation_epsilon;
        loop {
            let seen = self.adversary.perturb(net, &obs, Mode::Eval, rng)?;
            let action = epsilon_greedy_in(net, &seen, eps, Mode::Eval, rng)?;
            let out = env.step(action)?;
            if out.done {
                let stats = env.stats();
                return Ok((stats.score, stats.steps));
            }
            obs = out.observation;
        }
    }

    /// Current weights of all networks.
    pub fn checkpoint(&self, validation_score: Option<f64>) -> Checkpoint {
        let info = CheckpointInfo {
            format: CHECKPOINT_FORMAT.into(),
            env: self.spec.env,
            algorithm: self.spec.algorithm,
            defense: self.spec.defense,
            seed: self.spec.seed,
            frame: self.frame,
            q: self.q.spec().clone(),
            student: self.student.as_ref().map(|s| s.spec().clone()),
            validation_score,
        };
        let mut ck = Checkpoint::new(serde_json::to_value(info).expect("header serializes"));
        ck.push_params("q", self.q.params());
        if let Some(s) = &self.student {
            ck.push_params("student", s.params());
        }
        ck
    }

    /// Runs the remaining frames of the budget.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while self.frame < self.spec.config.frames {
            self.step()?;
        }
        let final_checkpoint = self.checkpoint(None);
        let checkpoint = match (&self.best, self.provable()) {
            (Some((_, best)), false) => best.clone(),
            _ => final_checkpoint.clone(),
        };
        Ok(TrainOutcome {
            checkpoint,
            final_checkpoint,
            metrics: self.metrics,
        })
    }
}

/// Trains one run to completion.
pub fn run_training(spec: RunSpec) -> Result<TrainOutcome> {
    Trainer::new(spec)?.run()
}
