//! Asynchronous multi-worker training.
//!
//! Every worker owns an environment, a replay memory, its own ε and step
//! counter, and runs the per-learner loop against shared policy and target
//! networks:
//!
//! 1. snapshot θ and θ⁻, pick an ε-greedy action, step the environment and
//!    append the transition to the segment buffer; bump the local counter `Z`
//!    and the global counter `Y`;
//! 2. when `Z mod S == 0` or the episode ended, push the segment to replay,
//!    sample a batch, compute the weighted loss and gradient against the
//!    snapshot, write back new priorities and apply one RMSprop step to θ;
//! 3. copy θ into θ⁻ once for every multiple of `C` that `Y` has crossed;
//! 4. decay ε.
//!
//! θ, θ⁻, the optimizer state and the sync register live behind one mutex.
//! `T` (episodes) and `Y` (steps) are atomics. With one worker the run is a
//! deterministic function of the seed.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, EpsilonSchedule, LossKind, LossSettings};
use crate::env::{CartPole, EnvConfig, EnvVariant};
use crate::error::{Error, Result};
use crate::model::{ModelParams, QNetwork, Variant};
use crate::optimizer::{RmsConfig, RmsState};
use crate::replay::{PrioritizedMemory, ReplayConfig, ReplayIndex, Trajectory, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Proportional prioritized sampling with IS weights.
    #[default]
    Prioritized,
    /// Same memory, but `per_alpha = 0` and every IS weight is 1.
    Uniform,
    /// No memory: each flushed segment is trained on once, immediately.
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub network: QNetwork,
    pub env: EnvConfig,
    pub replay: ReplayConfig,
    pub replay_mode: ReplayMode,
    pub rms: RmsConfig,
    pub loss: LossKind,
    pub epsilon: EpsilonSchedule,
    pub gamma: f64,
    /// Segment length `S`.
    pub segment_len: usize,
    /// Trajectories per update `B`.
    pub batch_size: usize,
    /// Target sync period `C`, in global steps.
    pub target_sync: u64,
    pub workers: usize,
    /// `T_max`.
    pub episodes: u64,
    pub seed: u64,
    /// Keep a per-worker event trace in the report.
    #[serde(default)]
    pub record_trace: bool,
}

impl TrainerConfig {
    pub fn new(variant: Variant, env: EnvVariant) -> Self {
        Self {
            network: QNetwork::new(variant),
            env: EnvConfig::new(env),
            replay: ReplayConfig::default(),
            replay_mode: ReplayMode::Prioritized,
            rms: RmsConfig::default(),
            loss: LossKind::Matrix,
            epsilon: EpsilonSchedule::default(),
            gamma: 0.9,
            segment_len: 5,
            batch_size: 4,
            target_sync: 2000,
            workers: 4,
            episodes: 50_000,
            seed: 0,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        if self.segment_len == 0 || self.batch_size == 0 || self.target_sync == 0 {
            return Err(Error::Config(
                "segment length, batch size and target sync period must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.rms.lr > 0.0 && (0.0..1.0).contains(&self.rms.rms_alpha) && self.rms.eps > 0.0) {
            return Err(Error::Config(format!("invalid RMSprop settings {:?}", self.rms)));
        }
        let e = self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.min) && (0.0..=1.0).contains(&e.decay)) {
            return Err(Error::Config(format!("invalid epsilon schedule {e:?}")));
        }
        PrioritizedMemory::new(self.effective_replay())?;
        Ok(())
    }

    fn effective_replay(&self) -> ReplayConfig {
        match self.replay_mode {
            ReplayMode::Uniform => ReplayConfig {
                per_alpha: 0.0,
                ..self.replay
            },
            _ => self.replay,
        }
    }
}

/// Random source for initial parameters.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random source for one worker: env resets and noise, exploration and
/// replay sampling, drawn in program order.
pub fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + worker as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub global_episode: u64,
    pub worker_id: usize,
    pub score: f64,
    pub epsilon_at_end: f64,
    pub wall_clock_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncEvent {
    /// The multiple of `C` this copy covers.
    pub multiple: u64,
    /// `Y` as seen by the worker that performed the copy.
    pub global_step: u64,
    pub worker_id: usize,
}

/// Per-worker trace used for reproducibility checks.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Action {
        episode_step: usize,
        action: usize,
    },
    Update {
        indices: Vec<ReplayIndex>,
        losses: Vec<f64>,
        total: f64,
    },
    Sync {
        multiple: u64,
    },
    EpisodeEnd {
        score: f64,
        recorded: Option<u64>,
    },
}

#[derive(Debug, Clone)]
pub struct TrainingReport {
    /// Recorded episodes in global-episode order.
    pub episodes: Vec<EpisodeRecord>,
    pub wall_time: Duration,
    pub final_params: ModelParams,
    pub final_target: ModelParams,
    /// Final `Y`.
    pub global_steps: u64,
    /// Environment steps per worker.
    pub worker_steps: Vec<u64>,
    pub updates: u64,
    pub syncs: Vec<SyncEvent>,
    /// Empty unless `record_trace` was set.
    pub traces: Vec<Vec<TraceEvent>>,
}

struct Shared {
    policy: ModelParams,
    target: ModelParams,
    rms: RmsState,
    /// Multiples of `C` already copied.
    synced: BTreeSet<u64>,
    syncs: Vec<SyncEvent>,
    updates: u64,
}

/// State shared by all workers.
pub struct GlobalState {
    shared: Mutex<Shared>,
    /// `T`.
    episodes: AtomicU64,
    /// `Y`.
    steps: AtomicU64,
    stop: AtomicBool,
    episode_limit: u64,
    sync_period: u64,
}

impl GlobalState {
    pub fn new(policy: ModelParams, rms: RmsConfig, episode_limit: u64, sync_period: u64) -> Self {
        let target = policy.clone();
        let n = policy.param_count();
        Self {
            shared: Mutex::new(Shared {
                policy,
                target,
                rms: RmsState::new(rms, n),
                synced: BTreeSet::new(),
                syncs: Vec::new(),
                updates: 0,
            }),
            episodes: AtomicU64::new(0),
            steps: AtomicU64::new(0),
            stop: AtomicBool::new(episode_limit == 0),
            episode_limit,
            sync_period,
        }
    }

    pub fn episodes(&self) -> u64 {
        self.episodes.load(Ordering::SeqCst)
    }

    pub fn steps(&self) -> u64 {
        self.steps.load(Ordering::SeqCst)
    }

    pub fn should_stop(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    fn halt(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    /// Consistent copies of θ and θ⁻.
    pub fn snapshot(&self) -> (ModelParams, ModelParams) {
        let s = self.shared.lock();
        (s.policy.clone(), s.target.clone())
    }

    /// `Y += 1`; returns the new value.
    pub fn tick(&self) -> u64 {
        self.steps.fetch_add(1, Ordering::SeqCst) + 1
    }

    pub fn apply_gradient(&self, grad: &crate::model::Gradient) -> Result<()> {
        let mut s = self.shared.lock();
        let Shared { policy, rms, .. } = &mut *s;
        rms.step(policy, grad)?;
        s.updates += 1;
        Ok(())
    }

    /// Copies θ → θ⁻ when `global_step` is the tick that reached a multiple
    /// of `C`. `Y` moves one step at a time, so every multiple is reached by
    /// exactly one tick; the register rejects repeated calls. Returns the
    /// multiple when a copy happened.
    pub fn maybe_sync_target(&self, global_step: u64, worker_id: usize) -> Option<u64> {
        if global_step == 0 || global_step % self.sync_period != 0 {
            return None;
        }
        let multiple = global_step / self.sync_period;
        let mut s = self.shared.lock();
        if !s.synced.insert(multiple) {
            return None;
        }
        let Shared { policy, target, .. } = &mut *s;
        policy.copy_into(target);
        s.syncs.push(SyncEvent {
            multiple,
            global_step,
            worker_id,
        });
        Some(multiple)
    }

    /// Claims the next episode slot, if any remain.
    pub fn record_episode(&self) -> Option<u64> {
        let claimed = self
            .episodes
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |t| {
                (t < self.episode_limit).then_some(t + 1)
            })
            .ok();
        if claimed.map_or(true, |t| t + 1 >= self.episode_limit) {
            self.halt();
        }
        claimed
    }
}

struct WorkerOutcome {
    steps: u64,
    trace: Vec<TraceEvent>,
}

struct Worker<'a> {
    id: usize,
    config: &'a TrainerConfig,
    global: &'a GlobalState,
    env: CartPole,
    replay: PrioritizedMemory,
    rng: ChaCha8Rng,
    epsilon: f64,
    local_steps: u64,
    buffer: Vec<Transition>,
    trace: Option<Vec<TraceEvent>>,
    started: Instant,
    sink: mpsc::Sender<EpisodeRecord>,
}

impl Worker<'_> {
    fn log(&mut self, event: TraceEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(event);
        }
    }

    fn run(mut self) -> Result<WorkerOutcome> {
        while !self.global.should_stop() {
            self.episode()?;
        }
        Ok(WorkerOutcome {
            steps: self.local_steps,
            trace: self.trace.unwrap_or_default(),
        })
    }

    fn episode(&mut self) -> Result<()> {
        let net = self.config.network;
        self.buffer.clear();
        let mut obs = self.env.reset(&mut self.rng);
        let mut score = 0.0;
        let mut episode_step = 0;
        loop {
            if self.global.should_stop() {
                // In-flight episodes past T_max are discarded.
                return Ok(());
            }
            let (policy, target) = self.global.snapshot();
            let action = agent::select_action(&net, &policy, &obs, self.epsilon, &mut self.rng)?;
            self.log(TraceEvent::Action {
                episode_step,
                action,
            });
            let out = self.env.step(action, &mut self.rng)?;
            self.buffer.push(Transition {
                state: obs,
                action,
                reward: out.reward,
                next_state: out.observation,
                done: out.done,
            });
            score += out.reward;
            episode_step += 1;
            self.local_steps += 1;
            let global_step = self.global.tick();

            if self.local_steps % self.config.segment_len as u64 == 0 || out.done {
                self.learn(&policy, &target)?;
            }
            if let Some(multiple) = self.global.maybe_sync_target(global_step, self.id) {
                self.log(TraceEvent::Sync { multiple });
            }
            self.epsilon = self.config.epsilon.next(self.epsilon);
            obs = out.observation;

            if out.done {
                let recorded = self.global.record_episode();
                self.log(TraceEvent::EpisodeEnd { score, recorded });
                if let Some(global_episode) = recorded {
                    // The receiver only disappears once training is over.
                    let _ = self.sink.send(EpisodeRecord {
                        global_episode,
                        worker_id: self.id,
                        score,
                        epsilon_at_end: self.epsilon,
                        wall_clock_ms: self.started.elapsed().as_millis() as u64,
                    });
                }
                return Ok(());
            }
        }
    }

    fn learn(&mut self, policy: &ModelParams, target: &ModelParams) -> Result<()> {
        let trajectory = Trajectory::new(std::mem::take(&mut self.buffer), self.config.segment_len)?;
        let (batch, weights, indices) = match self.config.replay_mode {
            ReplayMode::Off => (vec![trajectory], vec![1.0], Vec::new()),
            mode => {
                self.replay.push(trajectory)?;
                let mut sample = self.replay.sample(self.config.batch_size, &mut self.rng)?;
                if mode == ReplayMode::Uniform {
                    sample.weights.iter_mut().for_each(|w| *w = 1.0);
                }
                (sample.trajectories, sample.weights, sample.indices)
            }
        };
        let settings = LossSettings {
            kind: self.config.loss,
            gamma: self.config.gamma,
            keep_matrices: false,
        };
        let (breakdown, grad) = agent::batch_loss_and_gradient(
            &self.config.network,
            &batch,
            &weights,
            policy,
            target,
            settings,
        )?;
        if !indices.is_empty() {
            self.replay.update_priorities(&indices, &breakdown.losses)?;
        }
        self.global.apply_gradient(&grad)?;
        self.log(TraceEvent::Update {
            indices,
            losses: breakdown.losses,
            total: breakdown.total,
        });
        Ok(())
    }
}

/// Runs training to `config.episodes` recorded episodes.
pub fn run_training(config: &TrainerConfig) -> Result<TrainingReport> {
    run_training_with_sink(config, |_| {})
}

/// Like [`run_training`], calling `on_episode` on the caller's thread for
/// each recorded episode as it arrives.
pub fn run_training_with_sink<F>(config: &TrainerConfig, mut on_episode: F) -> Result<TrainingReport>
where
    F: FnMut(&EpisodeRecord),
{
    config.validate()?;
    let started = Instant::now();
    let policy = ModelParams::init(&mut init_rng(config.seed), config.network.variant);
    let global = GlobalState::new(policy, config.rms, config.episodes, config.target_sync);
    let replay_config = config.effective_replay();

    let (tx, rx) = mpsc::channel();
    let mut records = Vec::new();
    let workers = (0..config.workers)
        .map(|id| {
            Ok(Worker {
                id,
                config,
                global: &global,
                env: CartPole::new(config.env)?,
                replay: PrioritizedMemory::new(replay_config)?,
                rng: worker_rng(config.seed, id),
                epsilon: config.epsilon.start,
                local_steps: 0,
                buffer: Vec::with_capacity(config.segment_len),
                trace: config.record_trace.then(Vec::new),
                started,
                sink: tx.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<Result<WorkerOutcome>> = std::thread::scope(|scope| {
        let global = &global;
        let handles: Vec<_> = workers
            .into_iter()
            .map(|worker| {
                scope.spawn(move || {
                    let result = worker.run();
                    if result.is_err() {
                        global.halt();
                    }
                    result
                })
            })
            .collect();
        drop(tx);
        for record in rx.iter() {
            on_episode(&record);
            records.push(record);
        }
        handles
                .into_iter()
                .enumerate()
                .map(|(id, h)| {
                    h.join().unwrap_or_else(|panic| {
                        global.halt();
                        let message = panic
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| panic.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "panic".into());
                        Err(Error::Worker { worker: id, message })
                    })
                })
                .collect()
    });

    let mut worker_steps = Vec::with_capacity(outcomes.len());
    let mut traces = Vec::new();
    for (id, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(o) => {
                worker_steps.push(o.steps);
                if config.record_trace {
                    traces.push(o.trace);
                }
            }
            Err(e @ Error::Worker { .. }) => return Err(e),
            Err(e) => {
                return Err(Error::Worker {
                    worker: id,
                    message: e.to_string(),
                })
            }
        }
    }
    records.sort_by_key(|r| r.global_episode);
    let shared = global.shared.into_inner();
    Ok(TrainingReport {
        episodes: records,
        wall_time: started.elapsed(),
        final_params: shared.policy,
        final_target: shared.target,
        global_steps: global.steps.into_inner(),
        worker_steps,
        updates: shared.updates,
        syncs: shared.syncs,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(variant: Variant) -> TrainerConfig {
        TrainerConfig {
            episodes: 6,
            workers: 1,
            seed: 3,
            ..TrainerConfig::new(variant, EnvVariant::V0)
        }
    }

    #[test]
    fn sync_fires_once_per_multiple() {
        let g = GlobalState::new(ModelParams::zeros(Variant::Classical), RmsConfig::default(), 10, 2000);
        assert_eq!(g.maybe_sync_target(1999, 0), None);
        assert_eq!(g.maybe_sync_target(2000, 0), Some(1));
        assert_eq!(g.maybe_sync_target(2000, 1), None);
        assert_eq!(g.maybe_sync_target(2001, 1), None);
        assert_eq!(g.maybe_sync_target(4000, 1), Some(2));
        assert_eq!(g.maybe_sync_target(0, 1), None);
    }

    #[test]
    fn episode_claims_stop_at_limit() {
        let g = GlobalState::new(ModelParams::zeros(Variant::Classical), RmsConfig::default(), 2, 10);
        assert_eq!(g.record_episode(), Some(0));
        assert!(!g.should_stop());
        assert_eq!(g.record_episode(), Some(1));
        assert!(g.should_stop());
        assert_eq!(g.record_episode(), None);
        assert_eq!(g.episodes(), 2);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = small(Variant::Classical);
        c.workers = 0;
        assert!(matches!(run_training(&c), Err(Error::Config(_))));
        let mut c = small(Variant::Classical);
        c.segment_len = 0;
        assert!(run_training(&c).is_err());
        let mut c = small(Variant::Classical);
        c.replay.capacity = 0;
        assert!(run_training(&c).is_err());
    }

    #[test]
    fn records_exactly_t_max_episodes() {
        let report = run_training(&small(Variant::Classical)).unwrap();
        assert_eq!(report.episodes.len(), 6);
        let idx: Vec<u64> = report.episodes.iter().map(|e| e.global_episode).collect();
        assert_eq!(idx, (0..6).collect::<Vec<_>>());
        assert_eq!(report.global_steps, report.worker_steps.iter().sum::<u64>());
        let total: f64 = report.episodes.iter().map(|e| e.score).sum();
        assert_eq!(total as u64, report.global_steps);
    }

    #[test]
    fn replay_off_and_uniform_modes_run() {
        for mode in [ReplayMode::Off, ReplayMode::Uniform] {
            let mut c = small(Variant::Classical);
            c.replay_mode = mode;
            let report = run_training(&c).unwrap();
            assert_eq!(report.episodes.len(), 6);
            assert!(report.updates > 0);
        }
    }

    #[test]
    fn epsilon_follows_closed_form_per_worker() {
        let report = run_training(&small(Variant::Classical)).unwrap();
        let last = report.episodes.last().unwrap();
        let k = report.worker_steps[0] as i32;
        assert!((last.epsilon_at_end - 0.9999f64.powi(k).max(0.001)).abs() < 1e-12);
    }
}
