//! Drive-reduction rewards and the two learning agents.
//!
//! The monolithic agent trains one Q-network on the reduction of the
//! combined drive `(Σ_i |h*_i - h_i|^n)^(1/m)`. The modular agent trains one
//! Q-network per stat on that stat's own drive reduction and acts on the sum
//! of the module Q-values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Activations, Adam, Gradients, QNetwork};
use crate::qlearn::{select_epsilon_greedy, should_sync_target, td_target, EpsilonSchedule, ReplayBuffer, Transition};

/// Network precision used by the agents.
pub type Real = f32;

/// Exponents of the drive function.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveParams {
    pub n: u32,
    pub m: u32,
    pub setpoints: Vec<f64>,
}

impl DriveParams {
    pub fn new(n: u32, m: u32, setpoints: Vec<f64>) -> Self {
        assert!(n >= 1 && m >= 1, "drive exponents must be positive");
        Self { n, m, setpoints }
    }
}

fn root(x: f64, m: u32) -> f64 {
    match m {
        1 => x,
        2 => x.sqrt(),
        _ => x.powf(1.0 / m as f64),
    }
}

/// Combined drive over all stats.
pub fn drive_mono(h: &[f64], params: &DriveParams) -> f64 {
    let sum = h
        .iter()
        .zip(&params.setpoints)
        .fold(0.0, |acc, (hi, sp)| acc + (sp - hi).abs().powi(params.n as i32));
    root(sum, params.m)
}

/// Drive of a single stat. Evaluated exactly as a one-term [`drive_mono`].
pub fn drive_single(h: f64, setpoint: f64, params: &DriveParams) -> f64 {
    root(0.0 + (setpoint - h).abs().powi(params.n as i32), params.m)
}

pub fn reward_mono(h_now: &[f64], h_next: &[f64], params: &DriveParams) -> f64 {
    drive_mono(h_now, params) - drive_mono(h_next, params)
}

/// Per-stat drive reductions. A stat that did not change yields exactly 0.
pub fn reward_modular(h_now: &[f64], h_next: &[f64], params: &DriveParams) -> Vec<f64> {
    h_now
        .iter()
        .zip(h_next)
        .zip(&params.setpoints)
        .map(|((a, b), sp)| drive_single(*a, *sp, params) - drive_single(*b, *sp, params))
        .collect()
}

/// Hyperparameters shared by both agent kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSettings {
    pub obs_len: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_period: usize,
    pub schedule: EpsilonSchedule,
}

impl AgentSettings {
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.obs_len];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(crate::env::Action::COUNT);
        sizes
    }
}

/// Something that picks actions and optionally learns from experience.
pub trait Controller {
    fn epsilon(&self, t: usize) -> f64;

    /// Action index for observation `obs` at step `t` (0-based).
    fn act(&mut self, obs: &[Real], t: usize) -> Result<usize>;

    fn remember(&mut self, transition: Transition);

    /// One learning step after `steps_done` environment steps. Returns the
    /// summed TD loss, or `None` while the replay buffer is warming up.
    fn learn(&mut self, steps_done: usize) -> Result<Option<f64>>;
}

/// Online network, target network and optimizer trained on one reward stream.
#[derive(Debug, Clone)]
pub struct QHead {
    pub online: QNetwork<Real>,
    pub target: QNetwork<Real>,
    pub adam: Adam<Real>,
    scratch: Activations<Real>,
    target_scratch: Activations<Real>,
    grads: Gradients<Real>,
}

impl QHead {
    fn new<R: Rng>(sizes: &[usize], learning_rate: f64, rng: &mut R) -> Result<Self> {
        let online = QNetwork::new(sizes, rng)?;
        let target = online.clone();
        let adam = Adam::new(&online, learning_rate);
        let grads = Gradients::zeros_like(&online);
        Ok(Self {
            online,
            target,
            adam,
            scratch: Activations::default(),
            target_scratch: Activations::default(),
            grads,
        })
    }

    fn train(&mut self, batch: &Batch, rewards: &[Real], gamma: Real) -> Result<f64> {
        let n_out = self.target.output_dim();
        let q_next = self
            .target
            .forward_batch(&batch.next_inputs, batch.len(), &mut self.target_scratch)?;
        let targets: Vec<Real> = rewards
            .iter()
            .enumerate()
            .map(|(b, &r)| td_target(r, gamma, &q_next[b * n_out..(b + 1) * n_out]))
            .collect();
        let loss = self.online.backward_td(
            &batch.inputs,
            &batch.actions,
            &targets,
            &mut self.scratch,
            &mut self.grads,
        )?;
        self.adam.update(&mut self.online, &self.grads)?;
        Ok(loss as f64)
    }

    fn sync(&mut self) {
        self.target
            .copy_from(&self.online)
            .expect("online and target share a shape");
    }
}

struct Batch {
    inputs: Vec<Real>,
    next_inputs: Vec<Real>,
    actions: Vec<usize>,
    scalar_rewards: Vec<Real>,
    /// `[stat][item]`
    stat_rewards: Vec<Vec<Real>>,
}

impl Batch {
    fn gather(items: &[&Transition], n_stats: usize) -> Self {
        let mut b = Batch {
            inputs: Vec::new(),
            next_inputs: Vec::new(),
            actions: Vec::with_capacity(items.len()),
            scalar_rewards: Vec::with_capacity(items.len()),
            stat_rewards: vec![Vec::with_capacity(items.len()); n_stats],
        };
        for t in items {
            b.inputs.extend_from_slice(&t.obs);
            b.next_inputs.extend_from_slice(&t.next_obs);
            b.actions.push(t.action);
            b.scalar_rewards.push(t.scalar_reward as Real);
            for (i, r) in t.rewards.iter().enumerate().take(n_stats) {
                b.stat_rewards[i].push(*r as Real);
            }
        }
        b
    }

    fn len(&self) -> usize {
        self.actions.len()
    }
}

fn check_loss(loss: f64, step: usize, what: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence {
            step,
            detail: format!("{what} TD loss is {loss}"),
        })
    }
}

/// Single DQN trained on the combined drive reduction.
#[derive(Debug, Clone)]
pub struct MonolithicAgent {
    settings: AgentSettings,
    head: QHead,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

impl MonolithicAgent {
    pub fn new(settings: AgentSettings, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = QHead::new(&settings.layer_sizes(), settings.learning_rate, &mut rng)?;
        let buffer = ReplayBuffer::new(settings.buffer_capacity);
        Ok(Self {
            settings,
            head,
            buffer,
            rng,
        })
    }

    pub fn head(&self) -> &QHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut QHead {
        &mut self.head
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn q_values(&self, obs: &[Real]) -> Result<Vec<Real>> {
        self.head.online.forward(obs)
    }
}

impl Controller for MonolithicAgent {
    fn epsilon(&self, t: usize) -> f64 {
        self.settings.schedule.epsilon_at(t)
    }

    fn act(&mut self, obs: &[Real], t: usize) -> Result<usize> {
        let q = self.q_values(obs)?;
        let eps = self.epsilon(t);
        select_epsilon_greedy(&q, eps, &mut self.rng)
    }

    fn remember(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn learn(&mut self, steps_done: usize) -> Result<Option<f64>> {
        let mut loss = None;
        if self.buffer.len() >= self.settings.batch_size {
            let items = self.buffer.sample(self.settings.batch_size, &mut self.rng)?;
            let batch = Batch::gather(&items, 0);
            let l = self
                .head
                .train(&batch, &batch.scalar_rewards, self.settings.gamma as Real)?;
            loss = Some(check_loss(l, steps_done, "monolithic")?);
        }
        if should_sync_target(steps_done, self.settings.target_period) {
            self.head.sync();
        }
        Ok(loss)
    }
}

/// Greatest-mass Q-learning: one DQN per stat, actions by summed Q-values.
#[derive(Debug, Clone)]
pub struct ModularAgent {
    settings: AgentSettings,
    modules: Vec<QHead>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
}

impl ModularAgent {
    pub fn new(settings: AgentSettings, n_modules: usize, seed: u64) -> Result<Self> {
        if n_modules == 0 {
            return Err(Error::Config("a modular agent needs at least one module".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = settings.layer_sizes();
        let modules = (0..n_modules)
            .map(|_| QHead::new(&sizes, settings.learning_rate, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let buffer = ReplayBuffer::new(settings.buffer_capacity);
        Ok(Self {
            settings,
            modules,
            buffer,
            rng,
        })
    }

    pub fn modules(&self) -> &[QHead] {
        &self.modules
    }

    pub fn modules_mut(&mut self) -> &mut [QHead] {
        &mut self.modules
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    /// Component-wise sum of the module Q-vectors.
    pub fn summed_q_values(&self, obs: &[Real]) -> Result<Vec<Real>> {
        let mut total = self.modules[0].online.forward(obs)?;
        for m in &self.modules[1..] {
            for (acc, q) in total.iter_mut().zip(m.online.forward(obs)?) {
                *acc += q;
            }
        }
        Ok(total)
    }

    /// Learning step with modules visited in `order`.
    pub fn learn_in_order(&mut self, steps_done: usize, order: &[usize]) -> Result<Option<f64>> {
        let mut total = None;
        if self.buffer.len() >= self.settings.batch_size {
            let items = self.buffer.sample(self.settings.batch_size, &mut self.rng)?;
            let batch = Batch::gather(&items, self.modules.len());
            let gamma = self.settings.gamma as Real;
            let mut sum = 0.0;
            for &i in order {
                let l = self.modules[i].train(&batch, &batch.stat_rewards[i], gamma)?;
                sum += check_loss(l, steps_done, &format!("module {i}"))?;
            }
            total = Some(sum);
        }
        if should_sync_target(steps_done, self.settings.target_period) {
            self.modules.iter_mut().for_each(QHead::sync);
        }
        Ok(total)
    }
}

impl Controller for ModularAgent {
    fn epsilon(&self, t: usize) -> f64 {
        self.settings.schedule.epsilon_at(t)
    }

    fn act(&mut self, obs: &[Real], t: usize) -> Result<usize> {
        let q = self.summed_q_values(obs)?;
        let eps = self.epsilon(t);
        select_epsilon_greedy(&q, eps, &mut self.rng)
    }

    fn remember(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    fn learn(&mut self, steps_done: usize) -> Result<Option<f64>> {
        let order: Vec<usize> = (0..self.modules.len()).collect();
        self.learn_in_order(steps_done, &order)
    }
}

/// Uniform random actions, no learning. Used as the chance baseline.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for RandomPolicy {
    fn epsilon(&self, _t: usize) -> f64 {
        1.0
    }

    fn act(&mut self, _obs: &[Real], _t: usize) -> Result<usize> {
        Ok(self.rng.gen_range(0..crate::env::Action::COUNT))
    }

    fn remember(&mut self, _transition: Transition) {}

    fn learn(&mut self, _steps_done: usize) -> Result<Option<f64>> {
        Ok(None)
    }
}
