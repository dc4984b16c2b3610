//! State features φ(s).
//!
//! Two modes share one interface: a one-hot encoder over the enumerated state
//! space (the SF learner then reproduces the tabular SR exactly) and a small
//! MLP trained with a time-contrastive triplet loss on random-walk episodes.
//! Both emit vectors rescaled to norm α.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::World;
use crate::nn::{Mlp, Optimizer, OptimizerConfig};
use crate::successor::SfError;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("episode buffer too short: need an episode longer than {needed} steps, longest is {longest}")]
    BufferTooShort { needed: usize, longest: usize },
    #[error("triplet loss diverged at step {step}: {loss} > 10x initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64 },
    #[error("empty triplet batch")]
    EmptyBatch,
    #[error("encoder produced a zero vector")]
    ZeroOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVec {
    pub values: Vec<f64>,
    pub norm_target: f64,
}

impl FeatureVec {
    pub fn new(values: Vec<f64>, norm_target: f64) -> Self {
        FeatureVec { values, norm_target }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    dim: usize,
    alpha: f64,
}

impl OneHotEncoder {
    pub fn new(dim: usize, alpha: f64) -> Self {
        OneHotEncoder { dim, alpha }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode_index(&self, id: usize) -> Result<FeatureVec, SfError> {
        if id >= self.dim {
            return Err(SfError::UnknownState);
        }
        let mut values = vec![0.0; self.dim];
        values[id] = self.alpha;
        Ok(FeatureVec::new(values, self.alpha))
    }
}

/// MLP over the flat observation, output rescaled to norm α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedEncoder {
    net: Mlp,
    alpha: f64,
}

impl LearnedEncoder {
    pub fn new<R: Rng>(input_dim: usize, hidden: &[usize], output_dim: usize, alpha: f64, rng: &mut R) -> Self {
        let mut sizes = vec![input_dim];
        sizes.extend(hidden);
        sizes.push(output_dim);
        LearnedEncoder {
            net: Mlp::new(&sizes, false, rng),
            alpha,
        }
    }

    pub fn from_network(net: Mlp, alpha: f64) -> Self {
        LearnedEncoder { net, alpha }
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn encode(&self, obs: &[f64]) -> Result<FeatureVec, EncoderError> {
        let u = self.net.forward(obs);
        let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(EncoderError::ZeroOutput);
        }
        Ok(FeatureVec::new(
            u.iter().map(|v| self.alpha * v / n).collect(),
            self.alpha,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoder {
    OneHot(OneHotEncoder),
    Learned(LearnedEncoder),
}

impl Encoder {
    pub fn dim(&self) -> usize {
        match self {
            Encoder::OneHot(e) => e.dim(),
            Encoder::Learned(e) => e.dim(),
        }
    }

    pub fn encode<W: World>(&self, world: &W, state: &W::State) -> Result<FeatureVec, SfError> {
        match self {
            Encoder::OneHot(e) => e.encode_index(world.state_index(state).ok_or(SfError::UnknownState)?),
            Encoder::Learned(e) => e
                .encode(&world.observation(state))
                .map_err(|err| SfError::Encoding(err.to_string())),
        }
    }
}

/// Sampling windows around an anchor at time t: positives from
/// `[t - k_p, t + k_p]`, negatives from `[t - l_n, t - u_n] ∪ [t + u_n, t + l_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletWindows {
    pub k_p: usize,
    pub u_n: usize,
    pub l_n: usize,
}

impl Default for TripletWindows {
    fn default() -> Self {
        TripletWindows {
            k_p: 2,
            u_n: 10,
            l_n: 15,
        }
    }
}

impl TripletWindows {
    pub fn positive_ok(&self, anchor: usize, positive: usize) -> bool {
        anchor != positive && anchor.abs_diff(positive) <= self.k_p
    }

    pub fn negative_ok(&self, anchor: usize, negative: usize) -> bool {
        let d = anchor.abs_diff(negative);
        d >= self.u_n && d <= self.l_n
    }

    fn negatives(&self, t: usize, len: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if t >= self.u_n {
            out.extend(t.saturating_sub(self.l_n)..=t - self.u_n);
        }
        out.extend((t + self.u_n..=t + self.l_n).filter(|&i| i < len));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletIndex {
    pub episode: usize,
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<Vec<f64>>,
    pub positives: Vec<Vec<f64>>,
    pub negatives: Vec<Vec<f64>>,
    pub margin: f64,
    pub index: Vec<TripletIndex>,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Observations grouped by episode, in time order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeBuffer {
    episodes: Vec<Vec<Vec<f64>>>,
}

impl EpisodeBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_episode(&mut self, observations: Vec<Vec<f64>>) {
        self.episodes.push(observations);
    }

    pub fn episodes(&self) -> &[Vec<Vec<f64>>] {
        &self.episodes
    }

    /// Uniform-random-policy episodes of `length` steps from the world's start state.
    pub fn random_walks<W: World, R: Rng>(world: &W, episodes: usize, length: usize, rng: &mut R) -> Self {
        let mut buf = EpisodeBuffer::new();
        for _ in 0..episodes {
            let mut s = world.start_state();
            let mut obs = vec![world.observation(&s)];
            for _ in 1..length {
                s = world.transition(&s, rng.random_range(0..world.num_actions()));
                obs.push(world.observation(&s));
            }
            buf.push_episode(obs);
        }
        buf
    }
}

pub fn sample_triplets<R: Rng>(
    buffer: &EpisodeBuffer,
    count: usize,
    windows: TripletWindows,
    margin: f64,
    rng: &mut R,
) -> Result<TripletBatch, EncoderError> {
    let longest = buffer.episodes.iter().map(Vec::len).max().unwrap_or(0);
    let usable: Vec<usize> = (0..buffer.episodes.len())
        .filter(|&e| buffer.episodes[e].len() > windows.l_n)
        .collect();
    if usable.is_empty() {
        return Err(EncoderError::BufferTooShort {
            needed: windows.l_n,
            longest,
        });
    }
    let mut batch = TripletBatch {
        anchors: Vec::with_capacity(count),
        positives: Vec::with_capacity(count),
        negatives: Vec::with_capacity(count),
        margin,
        index: Vec::with_capacity(count),
    };
    while batch.len() < count {
        let e = usable[rng.random_range(0..usable.len())];
        let ep = &buffer.episodes[e];
        let t = rng.random_range(0..ep.len());
        let negs = windows.negatives(t, ep.len());
        let poss: Vec<usize> = (t.saturating_sub(windows.k_p)..=(t + windows.k_p).min(ep.len() - 1))
            .filter(|&i| i != t)
            .collect();
        if negs.is_empty() || poss.is_empty() {
            continue;
        }
        let p = poss[rng.random_range(0..poss.len())];
        let n = negs[rng.random_range(0..negs.len())];
        batch.anchors.push(ep[t].clone());
        batch.positives.push(ep[p].clone());
        batch.negatives.push(ep[n].clone());
        batch.index.push(TripletIndex {
            episode: e,
            anchor: t,
            positive: p,
            negative: n,
        });
    }
    Ok(batch)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Per-triple hinge `max(0, |f(a)-f(p)|² - |f(a)-f(n)|² + m)`.
pub fn triplet_hinge(fa: &[f64], fp: &[f64], fn_: &[f64], margin: f64) -> f64 {
    (sq_dist(fa, fp) - sq_dist(fa, fn_) + margin).max(0.0)
}

/// Mean hinge loss over the batch and its gradient w.r.t. the encoder
/// parameters. The gradient passes through the α-normalization.
pub fn triplet_loss(encoder: &LearnedEncoder, batch: &TripletBatch) -> Result<(f64, Vec<f64>), EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let net = &encoder.net;
    let alpha = encoder.alpha;
    let mut grads = vec![0.0; net.params().len()];
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for i in 0..batch.len() {
        let traces = [
            net.forward_trace(&batch.anchors[i]),
            net.forward_trace(&batch.positives[i]),
            net.forward_trace(&batch.negatives[i]),
        ];
        let mut unit = Vec::with_capacity(3);
        let mut norms = [0.0; 3];
        for (k, tr) in traces.iter().enumerate() {
            let u = tr.output();
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(EncoderError::ZeroOutput);
            }
            norms[k] = n;
            unit.push(u.iter().map(|v| v / n).collect::<Vec<f64>>());
        }
        let f: Vec<Vec<f64>> = unit.iter().map(|u| u.iter().map(|v| alpha * v).collect()).collect();
        let h = triplet_hinge(&f[0], &f[1], &f[2], batch.margin);
        total += h;
        if h <= 0.0 {
            continue;
        }
        let d = f[0].len();
        let mut g = [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
        for j in 0..d {
            g[0][j] = 2.0 * (f[2][j] - f[1][j]);
            g[1][j] = -2.0 * (f[0][j] - f[1][j]);
            g[2][j] = 2.0 * (f[0][j] - f[2][j]);
        }
        for k in 0..3 {
            // d f / d u = α/|u| (I - û ûᵀ)
            let proj: f64 = unit[k].iter().zip(&g[k]).map(|(a, b)| a * b).sum();
            let c = scale * alpha / norms[k];
            let gu: Vec<f64> = g[k]
                .iter()
                .zip(&unit[k])
                .map(|(gj, uj)| c * (gj - uj * proj))
                .collect();
            net.backward(&traces[k], &gu, &mut grads);
        }
    }
    Ok((total * scale, grads))
}

/// Fraction of triples with `|f(a)-f(p)| < |f(a)-f(n)|`.
pub fn triplet_accuracy(encoder: &LearnedEncoder, batch: &TripletBatch) -> Result<f64, EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    let mut ok = 0usize;
    for i in 0..batch.len() {
        let a = encoder.encode(&batch.anchors[i])?;
        let p = encoder.encode(&batch.positives[i])?;
        let n = encoder.encode(&batch.negatives[i])?;
        if sq_dist(&a.values, &p.values) < sq_dist(&a.values, &n.values) {
            ok += 1;
        }
    }
    Ok(ok as f64 / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderTrainConfig {
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub margin: f64,
    pub windows: TripletWindows,
}

impl Default for EncoderTrainConfig {
    fn default() -> Self {
        EncoderTrainConfig {
            optimizer: OptimizerConfig::adam(5e-4),
            batch_size: 128,
            margin: 2.0,
            windows: TripletWindows::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
}

pub fn train_encoder<R: Rng>(
    encoder: &mut LearnedEncoder,
    buffer: &EpisodeBuffer,
    steps: usize,
    config: &EncoderTrainConfig,
    rng: &mut R,
) -> Result<TrainReport, EncoderError> {
    let mut opt = Optimizer::new(config.optimizer, encoder.net.params().len());
    let mut losses = Vec::with_capacity(steps);
    let mut initial = None;
    for step in 0..steps {
        let batch = sample_triplets(buffer, config.batch_size, config.windows, config.margin, rng)?;
        let (loss, grads) = triplet_loss(encoder, &batch)?;
        let init = *initial.get_or_insert(loss);
        if !loss.is_finite() || (init > 0.0 && loss > 10.0 * init) {
            return Err(EncoderError::Diverged {
                step,
                loss,
                initial: init,
            });
        }
        losses.push(loss);
        opt.step(encoder.net.params_mut(), &grads);
    }
    Ok(TrainReport {
        initial_loss: initial.unwrap_or(0.0),
        final_loss: losses.last().copied().unwrap_or(0.0),
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::GridMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_basis() {
        let enc = OneHotEncoder::new(12, 1.0);
        let v = enc.encode_index(2).unwrap();
        assert_eq!(v.values.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_eq!(v.values[2], 1.0);
        assert_eq!(enc.encode_index(12).unwrap_err(), SfError::UnknownState);
    }

    #[test]
    fn learned_norm_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = LearnedEncoder::new(6, &[16], 8, 10.0, &mut rng);
        for _ in 0..20 {
            let obs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = enc.encode(&obs).unwrap();
            assert!((a.norm() - 10.0).abs() < 1e-6);
            assert_eq!(a, enc.encode(&obs).unwrap());
        }
    }

    #[test]
    fn hinge_examples() {
        let a = [0.0, 0.0];
        let n = [3f64.sqrt(), 0.0];
        assert_eq!(triplet_hinge(&a, &a, &n, 2.0), 0.0);
        assert_eq!(triplet_hinge(&a, &a, &a, 2.0), 2.0);
    }

    #[test]
    fn windows() {
        let w = TripletWindows::default();
        let negs = w.negatives(20, 100);
        assert_eq!(negs, vec![5, 6, 7, 8, 9, 10, 30, 31, 32, 33, 34, 35]);
        assert!((18..=22).filter(|&p| w.positive_ok(20, p)).count() == 4);
    }

    #[test]
    fn short_buffer_errors() {
        let mut buf = EpisodeBuffer::new();
        buf.push_episode(vec![vec![0.0]; 8]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_triplets(&buf, 4, TripletWindows::default(), 2.0, &mut rng).unwrap_err(),
            EncoderError::BufferTooShort {
                needed: 15,
                longest: 8
            }
        );
    }

    #[test]
    fn sampled_triples_respect_windows() {
        let mut buf = EpisodeBuffer::new();
        for len in [16, 40, 100] {
            buf.push_episode((0..len).map(|i| vec![i as f64]).collect());
        }
        let w = TripletWindows::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = sample_triplets(&buf, 500, w, 2.0, &mut rng).unwrap();
        for (i, ix) in batch.index.iter().enumerate() {
            assert!(w.positive_ok(ix.anchor, ix.positive));
            assert!(w.negative_ok(ix.anchor, ix.negative));
            assert_eq!(batch.anchors[i][0], ix.anchor as f64);
            assert_eq!(batch.negatives[i][0], ix.negative as f64);
        }
    }

    #[test]
    fn zero_steps_leave_parameters() {
        let map = GridMap::parse(include_str!("../maps/fourroom.txt")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let buf = EpisodeBuffer::random_walks(&map, 2, 40, &mut rng);
        let mut enc = LearnedEncoder::new(map.observation(&map.start_state()).len(), &[32], 16, 10.0, &mut rng);
        let before = enc.clone();
        train_encoder(&mut enc, &buf, 0, &EncoderTrainConfig::default(), &mut rng).unwrap();
        assert_eq!(enc, before);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let map = GridMap::parse(include_str!("../maps/fourroom.txt")).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let buf = EpisodeBuffer::random_walks(&map, 4, 50, &mut rng);
            let mut enc = LearnedEncoder::new(map.observation(&map.start_state()).len(), &[32], 16, 10.0, &mut rng);
            let cfg = EncoderTrainConfig {
                batch_size: 16,
                ..Default::default()
            };
            train_encoder(&mut enc, &buf, 5, &cfg, &mut rng).unwrap();
            enc
        };
        assert_eq!(run(), run());
    }
}
