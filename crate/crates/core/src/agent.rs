//! The exploration loop: pick a rarely visited frontier landmark, plan to
//! it, follow the plan with the SFS-greedy policy, then explore at random
//! and learn successor features from the random segment only.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{EncoderMode, SflConfig};
use crate::encoder::{train_encoder, Encoder, EncoderError, EpisodeBuffer, LearnedEncoder, OneHotEncoder};
use crate::gridworld::{EnvRunner, SourcePolicy, StateSpaceError, Transition, World};
use crate::landmarks::{GraphError, LandmarkGraph, Observation, Tracker};
use crate::planner::{next_waypoint, shortest_path, NextWaypoint, Plan};
use crate::rng::{stream, Stream};
use crate::similarity::{greedy_action, SimilarityError};
use crate::successor::{SfError, SfLearner, SfSource, SfVector, TdError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Sf(#[from] SfError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Td(#[from] TdError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    StateSpace(#[from] StateSpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontierStrategy {
    /// Softmax over inverse visit counts.
    Count,
    /// Every landmark equally likely (ablation).
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    FixedSpawn,
    RandomSpawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub n_front: usize,
    pub n_explore: usize,
    pub n_land: usize,
    pub frontier_temperature: f64,
    pub frontier: FrontierStrategy,
    /// TD batches after each random-exploration segment.
    pub td_updates_per_segment: usize,
    pub k_goal: usize,
    pub eval_mode: EvalMode,
    pub difficulty_bins: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            n_front: 40,
            n_explore: 40,
            n_land: 8,
            frontier_temperature: 1.0,
            frontier: FrontierStrategy::Count,
            td_updates_per_segment: 1,
            k_goal: 5,
            eval_mode: EvalMode::FixedSpawn,
            difficulty_bins: 3,
        }
    }
}

/// `softmax(1 / max(count, 1) / temperature)`.
pub fn frontier_probabilities(counts: &[u64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = counts
        .iter()
        .map(|&c| 1.0 / (c.max(1) as f64) / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::MIN, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws a frontier landmark among `candidates` (all landmarks when `None`).
pub fn sample_frontier<S: Clone + Eq + std::hash::Hash, R: Rng>(
    graph: &LandmarkGraph<S>,
    candidates: Option<&[usize]>,
    strategy: FrontierStrategy,
    temperature: f64,
    rng: &mut R,
) -> Option<usize> {
    let all: Vec<usize> = (0..graph.len()).collect();
    let ids = candidates.unwrap_or(&all);
    if ids.is_empty() {
        return None;
    }
    let probs = match strategy {
        FrontierStrategy::Count => {
            let counts: Vec<u64> = ids.iter().map(|&i| graph.landmarks()[i].visit_count).collect();
            frontier_probabilities(&counts, temperature)
        }
        FrontierStrategy::Uniform => vec![1.0 / ids.len() as f64; ids.len()],
    };
    Some(ids[sample_index(&probs, rng)])
}

/// Successor features from an encoder and a TD learner.
pub struct LearnedSf<'a, W: World> {
    pub world: &'a W,
    pub encoder: &'a Encoder,
    pub learner: &'a SfLearner<W::State>,
}

impl<W: World> Clone for LearnedSf<'_, W> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<W: World> Copy for LearnedSf<'_, W> {}

impl<W: World> SfSource<W::State> for LearnedSf<'_, W> {
    fn state_sf(&self, state: &W::State) -> Result<SfVector, SfError> {
        self.learner.predict_sf(&self.encoder.encode(self.world, state)?)
    }

    fn action_sfs(&self, state: &W::State) -> Result<Vec<SfVector>, SfError> {
        self.learner.predict_all(&self.encoder.encode(self.world, state)?)
    }
}

/// Result of one traverse leg.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg<S> {
    pub trajectory: Vec<Transition<S>>,
    /// Ungated argmax landmark after the last step.
    pub final_nearest: Option<usize>,
    pub reached: bool,
    /// Set when `interrupt` stopped the leg early.
    pub interrupted: Option<Observation>,
}

/// Walks toward landmark `target` with the ε-greedy SFS policy until the
/// ungated argmax landmark is `target`, the budget runs out, the episode
/// ends or `interrupt` fires. `observe` is called after every step.
#[allow(clippy::too_many_arguments)]
pub fn traverse<W, P, R, O, I>(
    runner: &mut EnvRunner<'_, W>,
    source: &P,
    target: usize,
    target_sf: &SfVector,
    current: Option<usize>,
    budget: usize,
    epsilon: f64,
    rng: &mut R,
    mut observe: O,
    mut interrupt: I,
) -> Result<Leg<W::State>, AgentError>
where
    W: World,
    P: SfSource<W::State> + ?Sized,
    R: Rng,
    O: FnMut(&W::State) -> Result<Observation, AgentError>,
    I: FnMut(&W::State, &Observation) -> bool,
{
    let mut leg = Leg {
        trajectory: Vec::new(),
        final_nearest: current,
        reached: current == Some(target),
        interrupted: None,
    };
    while !leg.reached && leg.trajectory.len() < budget && !runner.done() {
        let state = runner.state().clone();
        let action = greedy_action(source, &state, target_sf, epsilon, true, rng)?;
        let step = runner.step(action);
        leg.trajectory.push(Transition {
            state,
            action,
            reward: 0.0,
            next_state: step.state.clone(),
            done: step.done,
            source_policy: SourcePolicy::GoalConditioned,
        });
        let obs = observe(&step.state)?;
        leg.final_nearest = obs.nearest.map(|n| n.0);
        if leg.final_nearest == Some(target) {
            leg.reached = true;
        } else if interrupt(&step.state, &obs) {
            leg.interrupted = Some(obs);
            break;
        }
    }
    Ok(leg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace<S> {
    pub episode: u64,
    pub start_step: u64,
    pub transitions: Vec<Transition<S>>,
    /// `(global step, landmark)` for every gated localization event.
    pub localizations: Vec<(u64, usize)>,
    pub plans: Vec<Plan>,
    pub frontier_id: Option<usize>,
    pub success: bool,
    pub steps: usize,
    pub num_landmarks: usize,
    pub num_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub episode: u64,
    pub num_landmarks: usize,
    pub num_edges: usize,
    pub coverage_pct: f64,
    pub frontier_id: Option<usize>,
    pub success: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub success: bool,
    pub steps: usize,
    /// Whether a landmark plan to the goal existed.
    pub planned: bool,
}

/// Percentage of the world's reachable cells with at least one visit.
pub fn coverage<W: World>(world: &W, visits: &BTreeMap<(usize, usize), u64>) -> f64 {
    let visited = visits.values().filter(|&&c| c >= 1).count();
    100.0 * visited as f64 / world.num_cells() as f64
}

fn reachable_from(n: usize, edges: &[crate::landmarks::Edge], from: usize) -> Vec<usize> {
    let mut seen = BTreeSet::from([from]);
    let mut stack = vec![from];
    while let Some(u) = stack.pop() {
        for e in edges.iter().filter(|e| e.from == u && e.to < n) {
            if seen.insert(e.to) {
                stack.push(e.to);
            }
        }
    }
    seen.into_iter().collect()
}

/// Mutable per-step bookkeeping shared by traverse legs and random
/// exploration within one episode.
struct StepContext<'a, W: World> {
    source: LearnedSf<'a, W>,
    graph: &'a mut LandmarkGraph<W::State>,
    tracker: &'a mut Tracker,
    visits: &'a mut BTreeMap<(usize, usize), u64>,
    step: &'a mut u64,
    rng: &'a mut ChaCha8Rng,
    localizations: Vec<(u64, usize)>,
}

impl<W: World> StepContext<'_, W> {
    fn observe(&mut self, state: &W::State, advance: bool) -> Result<Observation, AgentError> {
        if advance {
            *self.step += 1;
        }
        *self.visits.entry(self.source.world.cell_of(state)).or_insert(0) += 1;
        let sf = self.source.state_sf(state)?;
        let before = self.tracker.l_prev;
        let obs = self.graph.observe(self.tracker, state, &sf, *self.step);
        if let Some(l) = obs.localized {
            if before != Some(l) {
                self.localizations.push((*self.step, l));
            }
        }
        self.graph.maintain(&self.source, *self.step, self.rng)?;
        Ok(obs)
    }
}

pub struct Agent<W: World> {
    world: W,
    config: SflConfig,
    config_hash: String,
    encoder: Encoder,
    learner: SfLearner<W::State>,
    graph: LandmarkGraph<W::State>,
    tracker: Tracker,
    visits: BTreeMap<(usize, usize), u64>,
    step: u64,
    episodes: u64,
    segment: u64,
    policy_rng: ChaCha8Rng,
    frontier_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    graph_rng: ChaCha8Rng,
}

/// Counters restored from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCounters {
    pub step: u64,
    pub episodes: u64,
    pub segment: u64,
}

impl<W: World> Agent<W> {
    pub fn new(world: W, config: SflConfig, seed: u64) -> Result<Self, AgentError> {
        let config_hash = config.hash();
        let encoder = match config.encoder.mode {
            EncoderMode::OneHot => Encoder::OneHot(OneHotEncoder::new(world.states()?.len(), config.encoder.alpha)),
            EncoderMode::Learned => {
                let mut rng = stream(seed, Stream::Encoder);
                let e = &config.encoder;
                let obs_dim = world.observation(&world.start_state()).len();
                let mut enc = LearnedEncoder::new(obs_dim, &e.hidden, e.output_dim, e.alpha, &mut rng);
                let buf = EpisodeBuffer::random_walks(&world, e.pretrain_episodes, e.pretrain_episode_len, &mut rng);
                train_encoder(&mut enc, &buf, e.pretrain_steps, &e.train, &mut rng)?;
                Encoder::Learned(enc)
            }
        };
        let mut init = stream(seed, Stream::Init);
        let learner = SfLearner::new(config.sf.clone(), encoder.dim(), world.num_actions(), &mut init);
        Ok(Agent {
            graph: LandmarkGraph::new(config.graph.clone()),
            tracker: Tracker::new(config.sfs.window),
            world,
            config_hash,
            encoder,
            learner,
            config,
            visits: BTreeMap::new(),
            step: 0,
            episodes: 0,
            segment: 0,
            policy_rng: stream(seed, Stream::Policy),
            frontier_rng: stream(seed, Stream::Frontier),
            replay_rng: stream(seed, Stream::Replay),
            graph_rng: stream(seed, Stream::Graph),
        })
    }

    /// Reassembles a trained agent from checkpointed parts.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        world: W,
        config: SflConfig,
        seed: u64,
        encoder: Encoder,
        learner: SfLearner<W::State>,
        graph: LandmarkGraph<W::State>,
        visits: BTreeMap<(usize, usize), u64>,
        counters: AgentCounters,
    ) -> Self {
        Agent {
            config_hash: config.hash(),
            tracker: Tracker::new(config.sfs.window),
            world,
            config,
            encoder,
            learner,
            graph,
            visits,
            step: counters.step,
            episodes: counters.episodes,
            segment: counters.segment,
            policy_rng: stream(seed, Stream::Policy),
            frontier_rng: stream(seed, Stream::Frontier),
            replay_rng: stream(seed, Stream::Replay),
            graph_rng: stream(seed, Stream::Graph),
        }
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn config(&self) -> &SflConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn learner(&self) -> &SfLearner<W::State> {
        &self.learner
    }

    pub fn graph(&self) -> &LandmarkGraph<W::State> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut LandmarkGraph<W::State> {
        &mut self.graph
    }

    pub fn visits(&self) -> &BTreeMap<(usize, usize), u64> {
        &self.visits
    }

    pub fn counters(&self) -> AgentCounters {
        AgentCounters {
            step: self.step,
            episodes: self.episodes,
            segment: self.segment,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn coverage_pct(&self) -> f64 {
        coverage(&self.world, &self.visits)
    }

    pub fn sf_source(&self) -> LearnedSf<'_, W> {
        LearnedSf {
            world: &self.world,
            encoder: &self.encoder,
            learner: &self.learner,
        }
    }

    /// One episode of the exploration loop.
    pub fn explore_episode(&mut self) -> Result<EpisodeTrace<W::State>, AgentError> {
        let start_step = self.step;
        let cfg = self.config.agent.clone();
        let eps = self.config.sfs.epsilon_train;
        self.tracker.reset();
        let mut trace = EpisodeTrace {
            episode: self.episodes,
            start_step,
            transitions: Vec::new(),
            localizations: Vec::new(),
            plans: Vec::new(),
            frontier_id: None,
            success: false,
            steps: 0,
            num_landmarks: 0,
            num_edges: 0,
        };
        let source = LearnedSf {
            world: &self.world,
            encoder: &self.encoder,
            learner: &self.learner,
        };
        let mut ctx = StepContext {
            source,
            graph: &mut self.graph,
            tracker: &mut self.tracker,
            visits: &mut self.visits,
            step: &mut self.step,
            rng: &mut self.graph_rng,
            localizations: Vec::new(),
        };
        let start = self.world.start_state();
        let mut runner = EnvRunner::new(&self.world, start.clone(), self.world.time_limit());
        let first = ctx.observe(&start, false)?;

        if ctx.graph.len() > 1 {
            if let Some((cur, _)) = first.nearest {
                let edges = ctx.graph.edges();
                let reachable = reachable_from(ctx.graph.len(), &edges, cur);
                let frontier = sample_frontier(
                    ctx.graph,
                    Some(&reachable),
                    cfg.frontier,
                    cfg.frontier_temperature,
                    &mut self.frontier_rng,
                )
                .expect("reachable set holds the current landmark");
                trace.frontier_id = Some(frontier);
                let plan = shortest_path(ctx.graph.len(), &edges, cur, frontier, *ctx.step)
                    .expect("frontier drawn from the reachable set");
                let budget = cfg.n_front.min(cfg.n_land * plan.waypoints.len()).min(runner.remaining());
                let mut plan = plan;
                trace.plans.push(plan.clone());
                let mut current = cur;
                let mut spent = 0;
                loop {
                    match next_waypoint(&plan, current) {
                        NextWaypoint::Done => {
                            trace.success = true;
                            break;
                        }
                        NextWaypoint::Replan => {
                            let edges = ctx.graph.edges();
                            match shortest_path(ctx.graph.len(), &edges, current, frontier, *ctx.step) {
                                Ok(p) => {
                                    plan = p;
                                    trace.plans.push(plan.clone());
                                }
                                Err(_) => break,
                            }
                        }
                        NextWaypoint::Next(target) => {
                            if spent >= budget || runner.done() {
                                ctx.graph.record_failure(current, target, *ctx.step)?;
                                break;
                            }
                            let target_sf = source.state_sf(&ctx.graph.landmark(target)?.snapshot)?;
                            let on_plan: Vec<usize> = plan.waypoints.clone();
                            let leg = traverse(
                                &mut runner,
                                &source,
                                target,
                                &target_sf,
                                Some(current),
                                budget - spent,
                                eps,
                                &mut self.policy_rng,
                                |s| ctx.observe(s, true),
                                |_, obs| obs.localized.is_some_and(|l| !on_plan.contains(&l)),
                            )?;
                            spent += leg.trajectory.len();
                            trace.transitions.extend(leg.trajectory);
                            if leg.reached {
                                current = target;
                            } else if let Some(l) = leg.interrupted.and_then(|o| o.localized) {
                                current = l;
                            } else {
                                ctx.graph.record_failure(current, target, *ctx.step)?;
                                break;
                            }
                        }
                    }
                }
            }
        }

        let mut random_segment = Vec::with_capacity(cfg.n_explore);
        for _ in 0..cfg.n_explore {
            if runner.done() {
                break;
            }
            let state = runner.state().clone();
            let action = self.policy_rng.random_range(0..self.world.num_actions());
            let step = runner.step(action);
            ctx.observe(&step.state, true)?;
            random_segment.push(Transition {
                state,
                action,
                reward: 0.0,
                next_state: step.state,
                done: step.done,
                source_policy: SourcePolicy::Random,
            });
        }
        trace.localizations = std::mem::take(&mut ctx.localizations);
        trace.transitions.extend(random_segment.iter().cloned());
        trace.steps = runner.elapsed();
        drop(ctx);

        self.segment += 1;
        for t in random_segment {
            self.learner
                .buffer_mut()
                .push(t, self.segment)
                .expect("random segment is tagged Random");
        }
        let world = &self.world;
        let encoder = &self.encoder;
        let features = |s: &W::State| encoder.encode(world, s);
        for _ in 0..cfg.td_updates_per_segment {
            if self.learner.buffer().len() < self.learner.config().batch_size {
                break;
            }
            self.learner.td_update(&mut self.replay_rng, &features)?;
        }
        self.episodes += 1;
        trace.num_landmarks = self.graph.len();
        trace.num_edges = self.graph.num_edges();
        Ok(trace)
    }

    pub fn metrics(&self, trace: &EpisodeTrace<W::State>) -> MetricsRecord {
        MetricsRecord {
            step: self.step,
            episode: trace.episode,
            num_landmarks: trace.num_landmarks,
            num_edges: trace.num_edges,
            coverage_pct: self.coverage_pct(),
            frontier_id: trace.frontier_id,
            success: trace.success,
            config_hash: self.config_hash.clone(),
        }
    }

    /// Runs whole episodes until at least `steps` environment steps have
    /// been taken in total, calling `on_episode` after each.
    pub fn train<F>(&mut self, steps: u64, mut on_episode: F) -> Result<(), AgentError>
    where
        F: FnMut(&Self, &EpisodeTrace<W::State>),
    {
        while self.step < steps {
            let trace = self.explore_episode()?;
            on_episode(self, &trace);
        }
        Ok(())
    }

    /// Plans through the landmark graph with `goal` inserted as a temporary
    /// landmark and follows the plan; success iff `goal` itself is reached.
    pub fn evaluate<R: Rng>(
        &self,
        start: &W::State,
        goal: &W::State,
        budget: usize,
        rng: &mut R,
    ) -> Result<EvalOutcome, AgentError> {
        let mut out = EvalOutcome {
            success: start == goal,
            steps: 0,
            planned: false,
        };
        if out.success {
            return Ok(out);
        }
        let source = self.sf_source();
        let eps = self.config.sfs.epsilon_eval;
        let goal_sf = source.state_sf(goal)?;
        // An unlearned goal gives no direction to head in; count it as a miss.
        if goal_sf.norm() == 0.0 {
            return Ok(out);
        }
        let (mut graph, goal_id) = self.graph.with_goal(goal.clone(), goal_sf.clone(), self.config.agent.k_goal, self.step)?;
        let mut tracker = Tracker::new(self.config.sfs.window);
        let mut runner = EnvRunner::new(&self.world, start.clone(), budget);
        let first = graph.observe(&mut tracker, start, &source.state_sf(start)?, self.step);
        let plan = first
            .nearest
            .and_then(|(cur, _)| shortest_path(graph.len(), &graph.edges(), cur, goal_id, self.step).ok());
        let mut observe = |s: &W::State| -> Result<Observation, AgentError> {
            let sf = source.state_sf(s)?;
            Ok(graph.observe(&mut tracker, s, &sf, self.step))
        };
        let at_goal = |s: &W::State, _: &Observation| s == goal;
        if let Some(plan) = plan {
            out.planned = true;
            let mut current = plan.waypoints[0];
            for &target in &plan.waypoints[1..] {
                if target == goal_id || runner.done() {
                    break;
                }
                let target_sf = source.state_sf(&self.graph.landmark(target)?.snapshot)?;
                if target_sf.norm() == 0.0 {
                    break;
                }
                let leg = traverse(
                    &mut runner,
                    &source,
                    target,
                    &target_sf,
                    Some(current),
                    self.config.agent.n_front,
                    eps,
                    rng,
                    &mut observe,
                    at_goal,
                )?;
                if runner.state() == goal {
                    out.success = true;
                    out.steps = runner.elapsed();
                    return Ok(out);
                }
                if !leg.reached {
                    break;
                }
                current = target;
            }
        }
        // Final leg, or direct pursuit when no plan exists.
        let remaining = runner.remaining();
        traverse(
            &mut runner,
            &source,
            usize::MAX,
            &goal_sf,
            None,
            remaining,
            eps,
            rng,
            |_| Ok(Observation::default()),
            at_goal,
        )?;
        out.success = runner.state() == goal;
        out.steps = runner.elapsed();
        Ok(out)
    }
}

/// Uniform-random policy from `start`; success iff `goal` is hit within budget.
pub fn random_baseline<W: World, R: Rng>(world: &W, start: &W::State, goal: &W::State, budget: usize, rng: &mut R) -> EvalOutcome {
    let mut s = start.clone();
    for t in 0..=budget {
        if &s == goal {
            return EvalOutcome {
                success: true,
                steps: t,
                planned: false,
            };
        }
        if t == budget {
            break;
        }
        s = world.transition(&s, rng.random_range(0..world.num_actions()));
    }
    EvalOutcome {
        success: false,
        steps: budget,
        planned: false,
    }
}

/// Shortest-path oracle: succeeds iff the geodesic distance fits the budget.
pub fn oracle_baseline<W: World>(world: &W, start: &W::State, goal: &W::State, budget: usize) -> EvalOutcome {
    match crate::gridworld::geodesic_distance(world, start, goal) {
        Some(d) if d <= budget => EvalOutcome {
            success: true,
            steps: d,
            planned: true,
        },
        _ => EvalOutcome {
            success: false,
            steps: budget,
            planned: false,
        },
    }
}
