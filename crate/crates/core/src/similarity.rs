//! SFS: cosine similarity between successor features, the goal-conditioned
//! Q-function built from it, and median aggregation over a short window.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{GridMap, GridState, Heading, World};
use crate::successor::{SfError, SfSource, SfVector};

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("zero-norm successor feature")]
    ZeroNorm,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty SFS history")]
    EmptyHistory,
    #[error(transparent)]
    Sf(#[from] SfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfsConfig {
    /// Cosine when set, raw dot product otherwise.
    pub normalize: bool,
    pub window: usize,
    pub epsilon_train: f64,
    pub epsilon_eval: f64,
}

impl Default for SfsConfig {
    fn default() -> Self {
        SfsConfig {
            normalize: true,
            window: 1,
            epsilon_train: 0.1,
            epsilon_eval: 0.05,
        }
    }
}

fn check_dims(a: &SfVector, b: &SfVector) -> Result<(), SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(())
}

/// Cosine similarity of two SF vectors.
pub fn sfs(a: &SfVector, b: &SfVector) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok(a.dot(b) / (na * nb))
}

pub fn sfs_raw(a: &SfVector, b: &SfVector) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    Ok(a.dot(b))
}

pub fn similarity(a: &SfVector, b: &SfVector, normalize: bool) -> Result<f64, SimilarityError> {
    if normalize {
        sfs(a, b)
    } else {
        sfs_raw(a, b)
    }
}

/// Cosine similarity where a zero vector, which carries no occupancy
/// evidence, scores 0 against anything.
pub fn sfs_or_zero(a: &SfVector, b: &SfVector) -> Result<f64, SimilarityError> {
    match sfs(a, b) {
        Err(SimilarityError::ZeroNorm) => Ok(0.0),
        other => other,
    }
}

/// `Q(s, a, g) = SFS(ψ(s, a), ψ(g))` for every action head. An untrained
/// all-zero head scores 0.
pub fn goal_q(sf_sa: &[SfVector], goal: &SfVector, normalize: bool) -> Result<Vec<f64>, SimilarityError> {
    if goal.norm() == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    sf_sa
        .iter()
        .map(|v| if normalize { sfs_or_zero(v, goal) } else { sfs_raw(v, goal) })
        .collect()
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy action on the SFS Q-values. One uniform draw decides
/// exploration and, if exploring, a second picks the action.
pub fn greedy_action<S, P, R>(
    source: &P,
    state: &S,
    goal_sf: &SfVector,
    epsilon: f64,
    normalize: bool,
    rng: &mut R,
) -> Result<usize, SimilarityError>
where
    P: SfSource<S> + ?Sized,
    R: Rng,
{
    let heads = source.action_sfs(state)?;
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..heads.len()));
    }
    Ok(argmax(&goal_q(&heads, goal_sf, normalize)?))
}

/// Ring of per-landmark SFS vectors over the last `window` steps. Vectors
/// may grow as landmarks are added.
#[derive(Debug, Clone, PartialEq)]
pub struct SfsHistory {
    window: usize,
    entries: VecDeque<Vec<f64>>,
}

impl SfsHistory {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "aggregation window must be at least 1");
        SfsHistory {
            window,
            entries: VecDeque::with_capacity(window),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, values: Vec<f64>) {
        if self.entries.len() == self.window {
            self.entries.pop_front();
        }
        self.entries.push_back(values);
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-landmark median over the stored window; a landmark only counts the
/// entries recorded after it existed.
pub fn aggregate_sfs(history: &SfsHistory) -> Result<Vec<f64>, SimilarityError> {
    let width = history
        .entries
        .iter()
        .map(Vec::len)
        .max()
        .ok_or(SimilarityError::EmptyHistory)?;
    let mut out = Vec::with_capacity(width);
    let mut column = Vec::with_capacity(history.len());
    for l in 0..width {
        column.clear();
        column.extend(history.entries.iter().filter_map(|e| e.get(l).copied()));
        out.push(median(&mut column));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub sfs: f64,
}

/// SFS between `reference` and every state sharing its door configuration.
pub fn heatmap<P>(map: &GridMap, source: &P, reference: &GridState) -> Result<Vec<HeatmapRow>, SimilarityError>
where
    P: SfSource<GridState> + ?Sized,
{
    let ref_sf = source.state_sf(reference)?;
    if ref_sf.norm() == 0.0 {
        return Err(SimilarityError::ZeroNorm);
    }
    let mut rows = Vec::new();
    for &(x, y) in map.passable_cells() {
        for h in Heading::ALL {
            let s = GridState::new(x, y, h).with_doors(reference.door_open);
            if !map.is_valid(&s) || map.state_index(&s).is_none() {
                continue;
            }
            let sf = source.state_sf(&s)?;
            rows.push(HeatmapRow {
                x,
                y,
                heading: h,
                sfs: sfs_or_zero(&ref_sf, &sf)?,
            });
        }
    }
    Ok(rows)
}

pub fn write_heatmap_csv<W: Write>(out: &mut W, rows: &[HeatmapRow], config_hash: &str) -> std::io::Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    writeln!(out, "x,y,heading,sfs")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.9}", r.x, r.y, r.heading, r.sfs)?;
    }
    Ok(())
}
