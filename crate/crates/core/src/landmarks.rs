//! The landmark graph: localization by argmax SFS, novelty-driven landmark
//! addition through a candidate buffer, empirical transition counts between
//! landmarks and the filtered, weighted edge set derived from them.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::hash::Hash;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::World;
use crate::similarity::{argmax, aggregate_sfs, median, sfs_or_zero, SfsHistory};
use crate::successor::{SfError, SfSource, SfVector};

/// Slack on the localization gate; cosine tops out at exactly 1.
pub const LOCAL_TOLERANCE: f64 = 1e-9;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown landmark id {0}")]
    UnknownLandmark(usize),
    #[error(transparent)]
    Sf(#[from] SfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum EdgeThreshold {
    Constant(f64),
    /// Median of all non-zero transition counts.
    DynamicMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub delta_add: f64,
    pub delta_local: f64,
    pub edge_threshold: EdgeThreshold,
    pub landmark_cap: usize,
    pub temporal_filter: bool,
    pub tau_temporal: f64,
    /// Keep only the `k` most-travelled outgoing edges per landmark.
    pub k_nearest: Option<usize>,
    pub failure_cleanup: bool,
    pub failure_forget_window: u64,
    pub n_cand: usize,
    pub n_add: u64,
    pub n_update: u64,
    pub n_form_edges: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            delta_add: 0.99,
            delta_local: 1.0,
            edge_threshold: EdgeThreshold::Constant(1.0),
            landmark_cap: 10,
            temporal_filter: false,
            tau_temporal: 0.1,
            k_nearest: None,
            failure_cleanup: true,
            failure_forget_window: 80_000,
            n_cand: 1,
            n_add: 3_000,
            n_update: 1_000,
            n_form_edges: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Landmark<S> {
    pub id: usize,
    pub snapshot: S,
    pub sf_cache: SfVector,
    pub visit_count: u64,
    pub added_at_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub from: usize,
    pub to: usize,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeFilter {
    Threshold,
    Temporal,
    KNearest,
    Failure,
}

impl EdgeFilter {
    fn name(self) -> &'static str {
        match self {
            EdgeFilter::Threshold => "threshold",
            EdgeFilter::Temporal => "temporal",
            EdgeFilter::KNearest => "k_nearest",
            EdgeFilter::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub count: u64,
    pub weight: f64,
    /// Empty for edges that made it into the edge set.
    pub filtered_by: Vec<EdgeFilter>,
}

impl Edge {
    pub fn is_active(&self) -> bool {
        self.filtered_by.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Localization {
    Empty,
    Found { id: usize, value: f64 },
}

/// Per-actor localization state, reset at episode boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracker {
    pub l_prev: Option<usize>,
    pub history: SfsHistory,
}

impl Tracker {
    pub fn new(window: usize) -> Self {
        Tracker {
            l_prev: None,
            history: SfsHistory::new(window),
        }
    }

    pub fn reset(&mut self) {
        self.l_prev = None;
        self.history.clear();
    }
}

/// What one call to [`LandmarkGraph::observe`] did.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    /// Argmax landmark and its aggregated SFS, gated or not.
    pub nearest: Option<(usize, f64)>,
    /// Set when the gate passed.
    pub localized: Option<usize>,
    pub enqueued: bool,
    pub transition: Option<(usize, usize)>,
    pub bootstrapped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: Deserialize<'de>"))]
pub struct LandmarkGraph<S: Eq + Hash> {
    config: GraphConfig,
    landmarks: Vec<Landmark<S>>,
    #[serde(with = "pair_map")]
    counts: BTreeMap<(usize, usize), u64>,
    failures: Vec<Failure>,
    edges: Vec<Edge>,
    /// Edges added for a temporary evaluation goal; never filtered.
    synthetic: Vec<Edge>,
    candidates: Vec<S>,
    #[serde(skip)]
    candidate_set: HashSet<S>,
    last_flush: u64,
    last_refresh: u64,
    last_edges: u64,
}

/// Serializes a map keyed by pairs as a list of `[a, b, value]` triples,
/// since JSON object keys must be strings.
pub mod pair_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(map: &BTreeMap<(usize, usize), u64>, ser: S) -> Result<S::Ok, S::Error> {
        let triples: Vec<(usize, usize, u64)> = map.iter().map(|(&(a, b), &v)| (a, b, v)).collect();
        triples.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<BTreeMap<(usize, usize), u64>, D::Error> {
        let triples = Vec::<(usize, usize, u64)>::deserialize(de)?;
        Ok(triples.into_iter().map(|(a, b, v)| ((a, b), v)).collect())
    }
}

impl<S: Clone + Eq + Hash> LandmarkGraph<S> {
    pub fn new(config: GraphConfig) -> Self {
        LandmarkGraph {
            config,
            landmarks: Vec::new(),
            counts: BTreeMap::new(),
            failures: Vec::new(),
            edges: Vec::new(),
            synthetic: Vec::new(),
            candidates: Vec::new(),
            candidate_set: HashSet::new(),
            last_flush: 0,
            last_refresh: 0,
            last_edges: 0,
        }
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn landmarks(&self) -> &[Landmark<S>] {
        &self.landmarks
    }

    pub fn landmark(&self, id: usize) -> Result<&Landmark<S>, GraphError> {
        self.landmarks.get(id).ok_or(GraphError::UnknownLandmark(id))
    }

    pub fn counts(&self) -> &BTreeMap<(usize, usize), u64> {
        &self.counts
    }

    pub fn count(&self, from: usize, to: usize) -> u64 {
        self.counts.get(&(from, to)).copied().unwrap_or(0)
    }

    pub fn failures(&self) -> &[Failure] {
        &self.failures
    }

    pub fn pending_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Rebuilds the candidate dedup index, which is not serialized.
    pub fn reindex_candidates(&mut self) {
        self.candidate_set = self.candidates.iter().cloned().collect();
    }

    /// Every count-bearing pair with its filter verdict, plus synthetic edges.
    pub fn all_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().chain(&self.synthetic)
    }

    /// The active (unfiltered) edge set as last formed.
    pub fn edges(&self) -> Vec<Edge> {
        self.all_edges().filter(|e| e.is_active()).cloned().collect()
    }

    pub fn num_edges(&self) -> usize {
        self.all_edges().filter(|e| e.is_active()).count()
    }

    /// Adds a landmark unconditionally, subject to the cap.
    pub fn add_landmark(&mut self, snapshot: S, sf: SfVector, step: u64) -> Option<usize> {
        if self.landmarks.len() >= self.config.landmark_cap {
            return None;
        }
        let id = self.landmarks.len();
        self.landmarks.push(Landmark {
            id,
            snapshot,
            sf_cache: sf,
            visit_count: 0,
            added_at_step: step,
        });
        Some(id)
    }

    /// Raw SFS between `sf` and every landmark cache; zero vectors score 0.
    pub fn similarities(&self, sf: &SfVector) -> Result<Vec<f64>, GraphError> {
        self.landmarks
            .iter()
            .map(|l| {
                sfs_or_zero(sf, &l.sf_cache).map_err(|e| match e {
                    crate::similarity::SimilarityError::Sf(s) => GraphError::Sf(s),
                    other => GraphError::Sf(SfError::Encoding(other.to_string())),
                })
            })
            .collect()
    }

    /// Argmax over aggregated SFS, lowest id on ties. Does not apply the gate.
    pub fn localize(&self, aggregated: &[f64]) -> Localization {
        if self.landmarks.is_empty() || aggregated.is_empty() {
            return Localization::Empty;
        }
        let id = argmax(aggregated);
        Localization::Found {
            id,
            value: aggregated[id],
        }
    }

    pub fn passes_gate(&self, value: f64) -> bool {
        value >= self.config.delta_local - LOCAL_TOLERANCE
    }

    /// One step of graph bookkeeping for state `state` with state SF `sf`.
    pub fn observe(&mut self, tracker: &mut Tracker, state: &S, sf: &SfVector, step: u64) -> Observation {
        let mut obs = Observation::default();
        if sf.norm() == 0.0 || !sf.is_finite() {
            return obs;
        }
        if self.landmarks.is_empty() {
            let id = self.add_landmark(state.clone(), sf.clone(), step).expect("cap is at least 1");
            self.landmarks[id].visit_count = 1;
            tracker.l_prev = Some(id);
            tracker.history.push(vec![1.0]);
            obs.bootstrapped = true;
            obs.nearest = Some((id, 1.0));
            obs.localized = Some(id);
            return obs;
        }
        let Ok(raw) = self.similarities(sf) else {
            return obs;
        };
        tracker.history.push(raw);
        let agg = aggregate_sfs(&tracker.history).expect("history was just pushed");
        let Localization::Found { id, value } = self.localize(&agg) else {
            return obs;
        };
        obs.nearest = Some((id, value));
        if value < self.config.delta_add && self.landmarks.len() < self.config.landmark_cap {
            if self.candidate_set.insert(state.clone()) {
                self.candidates.push(state.clone());
            }
            obs.enqueued = true;
        }
        if self.passes_gate(value) {
            obs.localized = Some(id);
            if tracker.l_prev != Some(id) {
                if let Some(prev) = tracker.l_prev {
                    *self.counts.entry((prev, id)).or_insert(0) += 1;
                    obs.transition = Some((prev, id));
                }
                self.landmarks[id].visit_count += 1;
                tracker.l_prev = Some(id);
            }
        }
        obs
    }

    /// Adds up to `n_cand` of the most novel pending candidates, re-scored
    /// under the current SF source, then clears the buffer. Candidates tied
    /// on novelty are chosen between uniformly.
    pub fn flush_candidates<P, R>(&mut self, source: &P, step: u64, rng: &mut R) -> Result<Vec<usize>, GraphError>
    where
        P: SfSource<S> + ?Sized,
        R: Rng + ?Sized,
    {
        let pending = std::mem::take(&mut self.candidates);
        self.candidate_set.clear();
        let mut scored = Vec::with_capacity(pending.len());
        for s in pending {
            let sf = source.state_sf(&s)?;
            if sf.norm() == 0.0 {
                continue;
            }
            scored.push((s, sf));
        }
        let mut added = Vec::new();
        for _ in 0..self.config.n_cand {
            if self.landmarks.len() >= self.config.landmark_cap {
                break;
            }
            let mut scores = Vec::with_capacity(scored.len());
            for (_, sf) in &scored {
                scores.push(self.similarities(sf)?.into_iter().fold(f64::MIN, f64::max));
            }
            let lowest = scores.iter().copied().fold(f64::INFINITY, f64::min);
            if !(lowest < self.config.delta_add) {
                break;
            }
            let tied: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] <= lowest + TIE_TOLERANCE).collect();
            let i = tied[rng.random_range(0..tied.len())];
            let (s, sf) = scored.swap_remove(i);
            added.extend(self.add_landmark(s, sf, step));
        }
        self.last_flush = step;
        Ok(added)
    }

    pub fn refresh_landmark_sfs<P: SfSource<S> + ?Sized>(&mut self, source: &P, step: u64) -> Result<(), GraphError> {
        for l in &mut self.landmarks {
            l.sf_cache = source.state_sf(&l.snapshot)?;
        }
        self.last_refresh = step;
        Ok(())
    }

    pub fn record_failure(&mut self, from: usize, to: usize, step: u64) -> Result<(), GraphError> {
        for id in [from, to] {
            if id >= self.landmarks.len() {
                return Err(GraphError::UnknownLandmark(id));
            }
        }
        self.failures.push(Failure { from, to, step });
        Ok(())
    }

    /// Current value of δ_edge.
    pub fn dynamic_edge_threshold(&self) -> f64 {
        match self.config.edge_threshold {
            EdgeThreshold::Constant(c) => c,
            EdgeThreshold::DynamicMedian => {
                let mut v: Vec<f64> = self.counts.values().filter(|&&c| c > 0).map(|&c| c as f64).collect();
                if v.is_empty() {
                    0.0
                } else {
                    median(&mut v)
                }
            }
        }
    }

    /// Recomputes the derived edge set from counts, filters and failures.
    pub fn form_edges(&mut self, step: u64) {
        let cfg = &self.config;
        if cfg.failure_cleanup {
            let window = cfg.failure_forget_window;
            self.failures.retain(|f| step.saturating_sub(f.step) <= window);
        }
        let threshold = self.dynamic_edge_threshold();
        let n = self.landmarks.len() as f64;
        let mut edges: Vec<Edge> = self
            .counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&(from, to), &count)| {
                let mut filtered_by = Vec::new();
                if (count as f64) <= threshold {
                    filtered_by.push(EdgeFilter::Threshold);
                }
                if cfg.temporal_filter && (from.abs_diff(to) as f64) >= cfg.tau_temporal * n {
                    filtered_by.push(EdgeFilter::Temporal);
                }
                Edge {
                    from,
                    to,
                    count,
                    weight: (-(count as f64)).exp(),
                    filtered_by,
                }
            })
            .collect();
        if let Some(k) = cfg.k_nearest {
            let mut by_source: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, e) in edges.iter().enumerate() {
                by_source.entry(e.from).or_default().push(i);
            }
            for idx in by_source.values_mut() {
                idx.sort_by(|&a, &b| edges[b].count.cmp(&edges[a].count).then(edges[a].to.cmp(&edges[b].to)));
                for &i in idx.iter().skip(k) {
                    edges[i].filtered_by.push(EdgeFilter::KNearest);
                }
            }
        }
        if cfg.failure_cleanup {
            for e in &mut edges {
                if self.failures.iter().any(|f| f.from == e.from && f.to == e.to) {
                    e.filtered_by.push(EdgeFilter::Failure);
                }
            }
        }
        self.edges = edges;
        self.last_edges = step;
    }

    /// Runs whichever of flush / refresh / edge formation is due at `step`.
    pub fn maintain<P, R>(&mut self, source: &P, step: u64, rng: &mut R) -> Result<Vec<usize>, GraphError>
    where
        P: SfSource<S> + ?Sized,
        R: Rng + ?Sized,
    {
        let mut added = Vec::new();
        if step >= self.last_flush + self.config.n_add {
            added = self.flush_candidates(source, step, rng)?;
        }
        if step >= self.last_refresh + self.config.n_update {
            self.refresh_landmark_sfs(source, step)?;
        }
        if step >= self.last_edges + self.config.n_form_edges {
            self.form_edges(step);
        }
        Ok(added)
    }

    /// A copy with `goal` appended as a landmark, reachable from the `k`
    /// landmarks most similar to it through edges of weight e⁻¹.
    pub fn with_goal(&self, goal: S, goal_sf: SfVector, k: usize, step: u64) -> Result<(Self, usize), GraphError> {
        let mut g = self.clone();
        g.config.landmark_cap = g.config.landmark_cap.max(g.landmarks.len() + 1);
        let sims = g.similarities(&goal_sf)?;
        let id = g.add_landmark(goal, goal_sf, step).expect("cap raised");
        let mut order: Vec<usize> = (0..sims.len()).collect();
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
        for &l in order.iter().take(k) {
            g.synthetic.push(Edge {
                from: l,
                to: id,
                count: 1,
                weight: (-1.0f64).exp(),
                filtered_by: Vec::new(),
            });
        }
        Ok((g, id))
    }

    /// Graphviz rendering; `describe` supplies node attributes for a
    /// snapshot, e.g. `x=1, y=2`.
    pub fn to_dot<F: Fn(&S) -> String>(&self, describe: F) -> String {
        let mut out = String::from("digraph landmarks {\n");
        for l in &self.landmarks {
            let _ = writeln!(
                out,
                "  {} [{}, visit_count={}, added_at_step={}];",
                l.id,
                describe(&l.snapshot),
                l.visit_count,
                l.added_at_step
            );
        }
        for e in self.all_edges() {
            let filtered: Vec<&str> = e.filtered_by.iter().map(|f| f.name()).collect();
            let _ = writeln!(
                out,
                "  {} -> {} [count={}, weight={:.6}, filtered_by=\"{}\"{}];",
                e.from,
                e.to,
                e.count,
                e.weight,
                filtered.join(","),
                if e.is_active() { "" } else { ", style=dashed" }
            );
        }
        out.push_str("}\n");
        out
    }
}

/// Counts derived edges that span more than `factor` times the median
/// nearest-neighbour geodesic spacing between landmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoundnessReport {
    pub edges: usize,
    pub unsound: usize,
    pub median_spacing: f64,
}

impl SoundnessReport {
    pub fn fraction(&self) -> f64 {
        if self.edges == 0 {
            0.0
        } else {
            self.unsound as f64 / self.edges as f64
        }
    }
}

pub fn edge_soundness<W: World>(
    graph: &LandmarkGraph<W::State>,
    world: &W,
    factor: f64,
) -> Result<SoundnessReport, crate::gridworld::StateSpaceError> {
    let n = graph.len();
    let mut dist = vec![vec![None; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        let from = crate::gridworld::distances_from(world, &graph.landmarks[i].snapshot)?;
        for (j, d) in row.iter_mut().enumerate() {
            *d = world
                .state_index(&graph.landmarks[j].snapshot)
                .and_then(|k| from[k]);
        }
    }
    let mut spacing = Vec::new();
    for i in 0..n {
        let nearest = (0..n)
            .filter(|&j| j != i)
            .filter_map(|j| match (dist[i][j], dist[j][i]) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            })
            .min();
        if let Some(d) = nearest {
            spacing.push(d as f64);
        }
    }
    let median_spacing = if spacing.is_empty() { 0.0 } else { median(&mut spacing) };
    let active = graph.edges();
    let unsound = active
        .iter()
        .filter(|e| match dist[e.from][e.to] {
            Some(d) => d as f64 > factor * median_spacing,
            None => true,
        })
        .count();
    Ok(SoundnessReport {
        edges: active.len(),
        unsound,
        median_spacing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::TabularDynamics;
    use crate::successor::{analytic_sr, AnalyticSf, SrMatrix};
    use rand::SeedableRng;

    fn line3() -> (TabularDynamics, SrMatrix) {
        let d = TabularDynamics::line(3);
        let sr = analytic_sr(&d, 0.5).unwrap();
        (d, sr)
    }

    fn graph_with(src: &AnalyticSf<TabularDynamics>, states: &[usize], cfg: GraphConfig) -> LandmarkGraph<usize> {
        let mut g = LandmarkGraph::new(cfg);
        for &s in states {
            g.add_landmark(s, src.state_sf(&s).unwrap(), 0);
        }
        g
    }

    #[test]
    fn localize_examples() {
        let (d, sr) = line3();
        let src = AnalyticSf::new(&d, &sr);
        let g = graph_with(&src, &[0, 2], GraphConfig::default());
        let q0 = g.similarities(&src.state_sf(&0).unwrap()).unwrap();
        assert_eq!(g.localize(&q0), Localization::Found { id: 0, value: q0[0] });
        assert!((q0[0] - 1.0).abs() < 1e-12);
        let q1 = g.similarities(&src.state_sf(&1).unwrap()).unwrap();
        assert!((q1[0] - q1[1]).abs() < 1e-12);
        let Localization::Found { id, value } = g.localize(&q1) else { panic!() };
        assert_eq!(id, 0);
        assert!((value - 0.553).abs() < 1e-3);
        assert_eq!(LandmarkGraph::<usize>::new(GraphConfig::default()).localize(&[]), Localization::Empty);
    }

    #[test]
    fn gate_rejects_without_visit() {
        let (d, sr) = line3();
        let src = AnalyticSf::new(&d, &sr);
        let cfg = GraphConfig {
            delta_local: 0.9,
            ..GraphConfig::default()
        };
        let mut g = graph_with(&src, &[0, 2], cfg);
        let mut t = Tracker::new(1);
        let obs = g.observe(&mut t, &1, &src.state_sf(&1).unwrap(), 1);
        assert_eq!(obs.nearest.unwrap().0, 0);
        assert_eq!(obs.localized, None);
        assert_eq!(g.landmarks()[0].visit_count, 0);
    }

    #[test]
    fn bootstrap_and_addition() {
        let (d, sr) = line3();
        let src = AnalyticSf::new(&d, &sr);
        let cfg = GraphConfig {
            delta_add: 0.6,
            n_add: 1,
            ..GraphConfig::default()
        };
        let mut g = LandmarkGraph::new(cfg);
        let mut t = Tracker::new(1);
        assert!(g.observe(&mut t, &0, &src.state_sf(&0).unwrap(), 0).bootstrapped);
        assert_eq!(g.len(), 1);
        g.add_landmark(2, src.state_sf(&2).unwrap(), 0);
        let obs = g.observe(&mut t, &1, &src.state_sf(&1).unwrap(), 1);
        assert!(obs.enqueued);
        assert_eq!(g.len(), 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.maintain(&src, 1, &mut rng).unwrap(), vec![2]);
        assert_eq!(g.landmarks()[2].snapshot, 1);
        assert_eq!(g.pending_candidates(), 0);
    }

    #[test]
    fn walk_counts_transitions() {
        let (d, sr) = line3();
        let src = AnalyticSf::new(&d, &sr);
        let cfg = GraphConfig {
            delta_local: 0.4,
            ..GraphConfig::default()
        };
        let mut g = graph_with(&src, &[0, 1, 2], cfg);
        let mut t = Tracker::new(1);
        for (step, s) in [0usize, 1, 2].into_iter().enumerate() {
            g.observe(&mut t, &s, &src.state_sf(&s).unwrap(), step as u64);
        }
        assert_eq!(g.count(0, 1), 1);
        assert_eq!(g.count(1, 2), 1);
        assert_eq!(g.counts().values().sum::<u64>(), 2);
        t.reset();
        g.observe(&mut t, &2, &src.state_sf(&2).unwrap(), 5);
        assert_eq!(g.counts().values().sum::<u64>(), 2);
    }

    fn counted(counts: &[((usize, usize), u64)], n: usize, cfg: GraphConfig) -> LandmarkGraph<usize> {
        let mut g = LandmarkGraph::new(GraphConfig {
            landmark_cap: 100,
            ..cfg
        });
        for i in 0..n {
            g.add_landmark(i, SfVector::state(vec![1.0]), 0);
        }
        for &(k, c) in counts {
            g.counts.insert(k, c);
        }
        g
    }

    #[test]
    fn dynamic_threshold() {
        let cfg = GraphConfig {
            edge_threshold: EdgeThreshold::DynamicMedian,
            ..GraphConfig::default()
        };
        let mut g = counted(&[((0, 1), 1), ((1, 2), 2), ((2, 0), 5)], 3, cfg.clone());
        assert_eq!(g.dynamic_edge_threshold(), 2.0);
        g.form_edges(0);
        let e = g.edges();
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].from, e[0].to), (2, 0));

        let mut g = counted(&[((0, 1), 3)], 2, cfg.clone());
        g.form_edges(0);
        assert!(g.edges().is_empty());
        assert_eq!(counted(&[], 2, cfg).dynamic_edge_threshold(), 0.0);
        assert_eq!(LandmarkGraph::<usize>::new(GraphConfig::default()).dynamic_edge_threshold(), 1.0);
    }

    #[test]
    fn filters() {
        let cfg = GraphConfig {
            temporal_filter: true,
            ..GraphConfig::default()
        };
        let mut g = counted(&[((3, 9), 4), ((3, 5), 3)], 50, cfg);
        g.form_edges(0);
        let e = g.edges();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].to, 5);
        assert!((e[0].weight - 0.049_787_068).abs() < 1e-8);
        let removed = g.all_edges().find(|e| e.to == 9).unwrap();
        assert_eq!(removed.filtered_by, vec![EdgeFilter::Temporal]);

        let cfg = GraphConfig {
            k_nearest: Some(1),
            ..GraphConfig::default()
        };
        let mut g = counted(&[((0, 1), 4), ((0, 2), 9), ((1, 0), 2)], 3, cfg);
        g.form_edges(0);
        let active: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(active, vec![(0, 2), (1, 0)]);
    }

    #[test]
    fn failures_are_directed_and_forgotten() {
        let mut g = counted(&[((2, 7), 5), ((7, 2), 5)], 8, GraphConfig::default());
        g.record_failure(2, 7, 10_000).unwrap();
        g.form_edges(20_000);
        let active: Vec<(usize, usize)> = g.edges().iter().map(|e| (e.from, e.to)).collect();
        assert_eq!(active, vec![(7, 2)]);
        g.record_failure(2, 7, 11_000).unwrap();
        g.form_edges(95_000);
        assert_eq!(g.num_edges(), 2);
        assert!(g.failures().is_empty());
        // Failure on a pair without counts changes nothing.
        g.record_failure(0, 5, 95_000).unwrap();
        g.form_edges(95_001);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(g.record_failure(0, 99, 1), Err(GraphError::UnknownLandmark(99)));
    }

    #[test]
    fn refresh_is_stable_and_self_localizes() {
        let (d, sr) = line3();
        let src = AnalyticSf::new(&d, &sr);
        let mut g = graph_with(&src, &[0, 2], GraphConfig::default());
        let before = g.clone();
        g.refresh_landmark_sfs(&src, 1000).unwrap();
        assert_eq!(g.landmarks(), before.landmarks());
        for l in g.landmarks() {
            let q = g.similarities(&src.state_sf(&l.snapshot).unwrap()).unwrap();
            let Localization::Found { id, value } = g.localize(&q) else { panic!() };
            assert_eq!(id, l.id);
            assert!((value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_is_respected() {
        let mut g = LandmarkGraph::new(GraphConfig {
            landmark_cap: 2,
            ..GraphConfig::default()
        });
        assert!(g.add_landmark(0usize, SfVector::state(vec![1.0]), 0).is_some());
        assert!(g.add_landmark(1, SfVector::state(vec![1.0]), 0).is_some());
        assert!(g.add_landmark(2, SfVector::state(vec![1.0]), 0).is_none());
    }

    #[test]
    fn goal_insertion() {
        let (d, sr) = line3();
        let src = AnalyticSf::new(&d, &sr);
        let g = graph_with(&src, &[0, 1], GraphConfig::default());
        let (h, id) = g.with_goal(2, src.state_sf(&2).unwrap(), 5, 0).unwrap();
        assert_eq!(id, 2);
        assert_eq!(h.num_edges(), 2);
        assert!(h.edges().iter().all(|e| e.to == 2 && (e.weight - (-1.0f64).exp()).abs() < 1e-15));
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn dot_export() {
        let mut g = counted(&[((0, 1), 2), ((1, 0), 1)], 2, GraphConfig::default());
        g.form_edges(0);
        let dot = g.to_dot(|s| format!("state={s}"));
        assert!(dot.contains("0 -> 1 [count=2"));
        assert!(dot.contains("filtered_by=\"threshold\""));
        assert!(dot.contains("state=1, visit_count=0"));
    }
}
