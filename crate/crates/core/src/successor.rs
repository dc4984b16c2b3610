//! Successor representations and successor features.
//!
//! [`analytic_sr`] is the exact tabular oracle `M = (I - γP̄)⁻¹` under the
//! uniform-random policy. [`SfLearner`] estimates the same quantity from
//! replayed random-policy transitions by TD learning with a target network,
//! n-step returns and global-norm gradient clipping.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::FeatureVec;
use crate::gridworld::{SourcePolicy, TabularDynamics, Transition, World};
use crate::nn::{clip_global_norm, Mlp, Optimizer, OptimizerConfig};

#[derive(Debug, Error, PartialEq)]
pub enum SrError {
    #[error("discount {0} outside (0, 1)")]
    BadDiscount(f64),
    #[error("I - γP is singular")]
    Singular,
}

#[derive(Debug, Error, PartialEq)]
pub enum SfError {
    #[error("state is not part of the enumerated state space")]
    UnknownState,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("encoder failed: {0}")]
    Encoding(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("only random-policy transitions may enter the SF replay buffer")]
    PolicyMismatch,
}

#[derive(Debug, Error, PartialEq)]
pub enum TdError {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
    #[error("non-finite TD loss at update {update}")]
    NonFinite { update: u64 },
    #[error(transparent)]
    Features(#[from] SfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SfVariant {
    State,
    StateAction(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfVector {
    pub values: Vec<f64>,
    pub variant: SfVariant,
}

impl SfVector {
    pub fn state(values: Vec<f64>) -> Self {
        SfVector {
            values,
            variant: SfVariant::State,
        }
    }

    pub fn state_action(values: Vec<f64>, action: usize) -> Self {
        SfVector {
            values,
            variant: SfVariant::StateAction(action),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SfVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> SfVector {
        SfVector {
            values: self.values.iter().map(|v| v * c).collect(),
            variant: self.variant,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Anything that can produce state and state-action successor features.
pub trait SfSource<S> {
    fn state_sf(&self, state: &S) -> Result<SfVector, SfError>;
    /// One vector per action, in action-index order.
    fn action_sfs(&self, state: &S) -> Result<Vec<SfVector>, SfError>;
}

impl<S, T: SfSource<S> + ?Sized> SfSource<S> for &T {
    fn state_sf(&self, state: &S) -> Result<SfVector, SfError> {
        (**self).state_sf(state)
    }

    fn action_sfs(&self, state: &S) -> Result<Vec<SfVector>, SfError> {
        (**self).action_sfs(state)
    }
}

/// Exact successor representation of a deterministic tabular MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct SrMatrix {
    pub gamma: f64,
    pub num_actions: usize,
    /// `|S| x |S|`, state-only.
    pub m: DMatrix<f64>,
    /// `(|S| * |A|) x |S|`, row `s * |A| + a`.
    pub m_sa: DMatrix<f64>,
}

impl SrMatrix {
    pub fn num_states(&self) -> usize {
        self.m.nrows()
    }

    pub fn state_row(&self, s: usize) -> Vec<f64> {
        self.m.row(s).iter().copied().collect()
    }

    pub fn state_action_row(&self, s: usize, a: usize) -> Vec<f64> {
        self.m_sa.row(s * self.num_actions + a).iter().copied().collect()
    }
}

/// `M = (I - γP̄)⁻¹` and `M_sa(s, a) = e_s + γ M(next(s, a))`.
pub fn analytic_sr(dynamics: &TabularDynamics, gamma: f64) -> Result<SrMatrix, SrError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(SrError::BadDiscount(gamma));
    }
    let n = dynamics.num_states();
    let na = dynamics.num_actions();
    let p = dynamics.random_policy_matrix();
    let system = DMatrix::<f64>::identity(n, n) - p * gamma;
    let m = system
        .lu()
        .solve(&DMatrix::<f64>::identity(n, n))
        .ok_or(SrError::Singular)?;
    let mut m_sa = DMatrix::<f64>::zeros(n * na, n);
    for s in 0..n {
        for a in 0..na {
            let row = s * na + a;
            let next = dynamics.next(s, a);
            for j in 0..n {
                m_sa[(row, j)] = gamma * m[(next, j)];
            }
            m_sa[(row, s)] += 1.0;
        }
    }
    Ok(SrMatrix {
        gamma,
        num_actions: na,
        m,
        m_sa,
    })
}

/// Analytic SR rows served through [`SfSource`].
pub struct AnalyticSf<'w, W: World> {
    world: &'w W,
    sr: &'w SrMatrix,
}

impl<'w, W: World> AnalyticSf<'w, W> {
    pub fn new(world: &'w W, sr: &'w SrMatrix) -> Self {
        AnalyticSf { world, sr }
    }
}

impl<W: World> SfSource<W::State> for AnalyticSf<'_, W> {
    fn state_sf(&self, state: &W::State) -> Result<SfVector, SfError> {
        let s = self.world.state_index(state).ok_or(SfError::UnknownState)?;
        Ok(SfVector::state(self.sr.state_row(s)))
    }

    fn action_sfs(&self, state: &W::State) -> Result<Vec<SfVector>, SfError> {
        let s = self.world.state_index(state).ok_or(SfError::UnknownState)?;
        Ok((0..self.sr.num_actions)
            .map(|a| SfVector::state_action(self.sr.state_action_row(s, a), a))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfConfig {
    /// Hidden layer widths; empty means a single linear (tabular) layer.
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub n_step: usize,
    pub buffer_capacity: usize,
    pub gamma: f64,
    pub target_update_interval: u64,
    pub grad_clip: f64,
    /// When false the output bias stays at zero, so a one-hot input with no
    /// hidden layer is exactly a table of SF rows.
    pub output_bias: bool,
}

impl Default for SfConfig {
    fn default() -> Self {
        SfConfig {
            hidden: vec![512],
            optimizer: OptimizerConfig::adam(5e-4),
            batch_size: 128,
            n_step: 1,
            buffer_capacity: 20_000,
            gamma: 0.99,
            target_update_interval: 250,
            grad_clip: 1.0,
            output_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReplayEntry<S> {
    transition: Transition<S>,
    segment: u64,
}

/// FIFO buffer of random-policy transitions tagged with a segment id; n-step
/// returns never cross a segment boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<S> {
    capacity: usize,
    entries: VecDeque<ReplayEntry<S>>,
}

impl<S: Clone> ReplayBuffer<S> {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition<S>, segment: u64) -> Result<(), ReplayError> {
        if transition.source_policy != SourcePolicy::Random {
            return Err(ReplayError::PolicyMismatch);
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(ReplayEntry {
            transition,
            segment,
        });
        Ok(())
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition<S>> {
        self.entries.iter().map(|e| &e.transition)
    }

    /// Up to `n` consecutive transitions starting at `index` within one segment.
    pub fn segment_from(&self, index: usize, n: usize) -> Vec<&Transition<S>> {
        let seg = self.entries[index].segment;
        self.entries
            .range(index..)
            .take(n)
            .take_while(|e| e.segment == seg)
            .map(|e| &e.transition)
            .collect()
    }
}

/// TD learner for `ψ_θ(φ(s), a)` under the uniform-random policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfLearner<S> {
    config: SfConfig,
    num_actions: usize,
    feature_dim: usize,
    net: Mlp,
    target: Mlp,
    optimizer: Optimizer,
    buffer: ReplayBuffer<S>,
    updates: u64,
    syncs: u64,
    #[serde(skip)]
    scratch: Scratch,
}

/// Reused gradient buffer; carries no state between updates, so it never
/// affects equality.
#[derive(Debug, Clone, Default)]
struct Scratch(Vec<f64>);

impl PartialEq for Scratch {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl<S: Clone> SfLearner<S> {
    pub fn new<R: Rng>(config: SfConfig, feature_dim: usize, num_actions: usize, rng: &mut R) -> Self {
        let mut sizes = vec![feature_dim];
        sizes.extend(&config.hidden);
        sizes.push(feature_dim * num_actions);
        let net = Mlp::new(&sizes, true, rng);
        let optimizer = Optimizer::new(config.optimizer, net.params().len());
        SfLearner {
            target: net.clone(),
            net,
            optimizer,
            buffer: ReplayBuffer::new(config.buffer_capacity),
            config,
            num_actions,
            feature_dim,
            updates: 0,
            syncs: 0,
            scratch: Scratch::default(),
        }
    }

    pub fn config(&self) -> &SfConfig {
        &self.config
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn target_network(&self) -> &Mlp {
        &self.target
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn buffer(&self) -> &ReplayBuffer<S> {
        &self.buffer
    }

    pub fn buffer_mut(&mut self) -> &mut ReplayBuffer<S> {
        &mut self.buffer
    }

    pub(crate) fn restore(&mut self, net: Mlp, target: Mlp, optimizer: Optimizer, updates: u64, syncs: u64) {
        self.net = net;
        self.target = target;
        self.optimizer = optimizer;
        self.updates = updates;
        self.syncs = syncs;
    }

    fn check_dim(&self, phi: &FeatureVec) -> Result<(), SfError> {
        if phi.values.len() != self.feature_dim {
            return Err(SfError::DimensionMismatch {
                expected: self.feature_dim,
                found: phi.values.len(),
            });
        }
        Ok(())
    }

    fn heads(net: &Mlp, phi: &[f64], d: usize, na: usize) -> Vec<SfVector> {
        let out = net.forward(phi);
        (0..na)
            .map(|a| SfVector::state_action(out[a * d..(a + 1) * d].to_vec(), a))
            .collect()
    }

    fn mean_head(net: &Mlp, phi: &[f64], d: usize, na: usize) -> Vec<f64> {
        let out = net.forward(phi);
        let mut mean = vec![0.0; d];
        for a in 0..na {
            for (m, v) in mean.iter_mut().zip(&out[a * d..(a + 1) * d]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= na as f64;
        }
        mean
    }

    pub fn predict_sf_sa(&self, phi: &FeatureVec, action: usize) -> Result<SfVector, SfError> {
        self.check_dim(phi)?;
        let mut heads = Self::heads(&self.net, &phi.values, self.feature_dim, self.num_actions);
        Ok(heads.swap_remove(action))
    }

    pub fn predict_all(&self, phi: &FeatureVec) -> Result<Vec<SfVector>, SfError> {
        self.check_dim(phi)?;
        Ok(Self::heads(&self.net, &phi.values, self.feature_dim, self.num_actions))
    }

    /// State-only SF: the uniform mean over action heads.
    pub fn predict_sf(&self, phi: &FeatureVec) -> Result<SfVector, SfError> {
        self.check_dim(phi)?;
        Ok(SfVector::state(Self::mean_head(
            &self.net,
            &phi.values,
            self.feature_dim,
            self.num_actions,
        )))
    }

    pub fn predict_target_sf(&self, phi: &FeatureVec) -> Result<SfVector, SfError> {
        self.check_dim(phi)?;
        Ok(SfVector::state(Self::mean_head(
            &self.target,
            &phi.values,
            self.feature_dim,
            self.num_actions,
        )))
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
        self.syncs += 1;
    }

    /// Overwrites a tabular (no hidden layer) network with an exact SR,
    /// assuming one-hot features with α = 1.
    pub fn load_tabular_sr(&mut self, sr: &SrMatrix) {
        assert!(self.config.hidden.is_empty(), "tabular load needs a linear network");
        let d = self.feature_dim;
        let na = self.num_actions;
        assert_eq!(sr.num_states(), d);
        let out = d * na;
        let params = self.net.params_mut();
        for s in 0..d {
            for a in 0..na {
                for j in 0..d {
                    params[s * out + a * d + j] = sr.m_sa[(s * na + a, j)];
                }
            }
        }
        for b in &mut params[d * out..] {
            *b = 0.0;
        }
        self.sync_target();
    }

    pub fn sample_batch<R: Rng>(&self, rng: &mut R, size: usize) -> Vec<usize> {
        (0..size).map(|_| rng.random_range(0..self.buffer.len())).collect()
    }

    fn n_step_target<F>(&self, index: usize, features: &F) -> Result<(Vec<f64>, Vec<f64>, usize), SfError>
    where
        F: Fn(&S) -> Result<FeatureVec, SfError>,
    {
        let segment = self.buffer.segment_from(index, self.config.n_step.max(1));
        let first = segment[0];
        let phi0 = features(&first.state)?;
        self.check_dim(&phi0)?;
        let mut target = vec![0.0; self.feature_dim];
        let mut discount = 1.0;
        for t in &segment {
            let phi = features(&t.state)?;
            for (acc, v) in target.iter_mut().zip(&phi.values) {
                *acc += discount * v;
            }
            discount *= self.config.gamma;
        }
        let last = segment.last().unwrap();
        let boot = self.predict_target_sf(&features(&last.next_state)?)?;
        for (acc, v) in target.iter_mut().zip(&boot.values) {
            *acc += discount * v;
        }
        Ok((phi0.values, target, first.action))
    }

    /// Mean squared TD error over the batch and feature dimensions.
    pub fn td_loss<F>(&self, batch: &[usize], features: &F) -> Result<f64, TdError>
    where
        F: Fn(&S) -> Result<FeatureVec, SfError>,
    {
        let d = self.feature_dim;
        let mut total = 0.0;
        for &i in batch {
            let (phi, target, action) = self.n_step_target(i, features)?;
            let out = self.net.forward(&phi);
            total += out[action * d..(action + 1) * d]
                .iter()
                .zip(&target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>();
        }
        Ok(total / (batch.len() * d) as f64)
    }

    /// One optimizer step on a sampled batch; syncs the target network every
    /// `target_update_interval` updates. Returns the pre-update loss.
    pub fn td_update<R, F>(&mut self, rng: &mut R, features: &F) -> Result<f64, TdError>
    where
        R: Rng,
        F: Fn(&S) -> Result<FeatureVec, SfError>,
    {
        let need = self.config.batch_size;
        if self.buffer.is_empty() || self.buffer.len() < need {
            return Err(TdError::NotEnoughData {
                have: self.buffer.len(),
                need,
            });
        }
        let batch = self.sample_batch(rng, need);
        self.td_update_on(&batch, features)
    }

    pub fn td_update_on<F>(&mut self, batch: &[usize], features: &F) -> Result<f64, TdError>
    where
        F: Fn(&S) -> Result<FeatureVec, SfError>,
    {
        let d = self.feature_dim;
        let scale = 2.0 / (batch.len() * d) as f64;
        let mut grads = std::mem::take(&mut self.scratch.0);
        grads.clear();
        grads.resize(self.net.params().len(), 0.0);
        let mut total = 0.0;
        let mut grad_out = vec![0.0; d * self.num_actions];
        for &i in batch {
            let (phi, target, action) = self.n_step_target(i, features)?;
            let trace = self.net.forward_trace(&phi);
            let out = trace.output();
            grad_out.iter_mut().for_each(|g| *g = 0.0);
            for j in 0..d {
                let r = out[action * d + j] - target[j];
                total += r * r;
                grad_out[action * d + j] = scale * r;
            }
            self.net.backward(&trace, &grad_out, &mut grads);
        }
        let loss = total / (batch.len() * d) as f64;
        if !loss.is_finite() {
            return Err(TdError::NonFinite {
                update: self.updates,
            });
        }
        if !self.config.output_bias {
            let n = grads.len();
            grads[n - self.net.output_dim()..].fill(0.0);
        }
        clip_global_norm(&mut grads, self.config.grad_clip);
        self.optimizer.step(self.net.params_mut(), &grads);
        self.scratch.0 = grads;
        self.updates += 1;
        if self.config.target_update_interval > 0
            && self.updates.is_multiple_of(self.config.target_update_interval)
        {
            self.sync_target();
        }
        Ok(loss)
    }
}
