//! Run bundles on disk.
//!
//! A bundle is a directory:
//!
//! | file          | contents                                              |
//! |---------------|-------------------------------------------------------|
//! | `params.bin`  | SF network, target network, Adam moments, encoder     |
//! | `graph.json`  | the landmark graph                                    |
//! | `meta.json`   | counters, seed, config hash, visitation counts        |
//! | `config.toml` | the full run configuration                            |
//! | `map.txt`     | the map the run was trained on                        |
//!
//! `params.bin` is a flat little-endian tensor file:
//!
//! ```text
//! magic      b"SFLT"
//! version    u32
//! count      u32
//! count x {  name_len u32, name utf-8, ndim u32, dims u64 * ndim }
//! values     f64 * (sum of products of dims), tensors in table order,
//!            each row-major
//! ```
//!
//! Network layer `l` is stored as `<prefix>.<l>.weight` with shape
//! `[inputs, outputs]` and `<prefix>.<l>.bias` with shape `[outputs]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentCounters, AgentError};
use crate::config::{ConfigError, EncoderMode, SflConfig};
use crate::encoder::{Encoder, LearnedEncoder, OneHotEncoder};
use crate::gridworld::{GridMap, MapError, World};
use crate::landmarks::{pair_map, LandmarkGraph};
use crate::nn::{Mlp, Optimizer};
use crate::successor::SfLearner;

pub const MAGIC: &[u8; 4] = b"SFLT";
pub const VERSION: u32 = 1;

pub const PARAMS_FILE: &str = "params.bin";
pub const GRAPH_FILE: &str = "graph.json";
pub const META_FILE: &str = "meta.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const MAP_FILE: &str = "map.txt";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("not a tensor file (bad magic)")]
    BadMagic,
    #[error("unsupported tensor file version {0}")]
    UnsupportedVersion(u32),
    #[error("tensor file truncated")]
    Truncated,
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("config hash {found} does not match recorded {recorded}")]
    HashMismatch { recorded: String, found: String },
    #[error("no checkpoint at {0}")]
    Missing(PathBuf),
    #[error("malformed {file}: {source}")]
    Json {
        file: &'static str,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        let t = Tensor {
            name: name.into(),
            dims,
            values,
        };
        assert_eq!(t.dims.iter().product::<usize>(), t.values.len(), "tensor {} shape/value mismatch", t.name);
        t
    }
}

pub fn write_tensors<W: Write>(w: &mut W, tensors: &[Tensor]) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.name.len() as u32).to_le_bytes())?;
        w.write_all(t.name.as_bytes())?;
        w.write_all(&(t.dims.len() as u32).to_le_bytes())?;
        for &d in &t.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
    }
    for t in tensors {
        for v in &t.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_exact<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], CheckpointError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|_| CheckpointError::Truncated)?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

pub fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>, CheckpointError> {
    if &read_exact::<_, 4>(r)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = read_u32(r)? as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| CheckpointError::Truncated)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::Truncated)?;
        let ndim = read_u32(r)? as usize;
        let dims = (0..ndim)
            .map(|_| Ok(u64::from_le_bytes(read_exact(r)?) as usize))
            .collect::<Result<Vec<_>, CheckpointError>>()?;
        table.push((name, dims));
    }
    table
        .into_iter()
        .map(|(name, dims)| {
            let n: usize = dims.iter().product();
            let values = (0..n)
                .map(|_| Ok(f64::from_le_bytes(read_exact(r)?)))
                .collect::<Result<Vec<_>, CheckpointError>>()?;
            Ok(Tensor { name, dims, values })
        })
        .collect()
}

/// One weight and one bias tensor per layer.
pub fn mlp_tensors(prefix: &str, net: &Mlp) -> Vec<Tensor> {
    let sizes = net.sizes();
    let params = net.params();
    let mut out = Vec::new();
    let mut offset = 0;
    for (l, w) in sizes.windows(2).enumerate() {
        let (inp, outp) = (w[0], w[1]);
        out.push(Tensor::new(
            format!("{prefix}.{l}.weight"),
            vec![inp, outp],
            params[offset..offset + inp * outp].to_vec(),
        ));
        offset += inp * outp;
        out.push(Tensor::new(format!("{prefix}.{l}.bias"), vec![outp], params[offset..offset + outp].to_vec()));
        offset += outp;
    }
    out
}

fn take(set: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor, CheckpointError> {
    set.remove(name).ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))
}

fn expect_shape(t: &Tensor, dims: &[usize]) -> Result<(), CheckpointError> {
    if t.dims != dims {
        return Err(CheckpointError::ShapeMismatch {
            name: t.name.clone(),
            expected: dims.to_vec(),
            found: t.dims.clone(),
        });
    }
    Ok(())
}

/// Reassembles a network with the given layer sizes from its tensors.
pub fn mlp_from_tensors(prefix: &str, sizes: &[usize], set: &mut BTreeMap<String, Tensor>) -> Result<Mlp, CheckpointError> {
    let mut params = Vec::with_capacity(Mlp::param_count(sizes));
    for (l, w) in sizes.windows(2).enumerate() {
        let weight = take(set, &format!("{prefix}.{l}.weight"))?;
        expect_shape(&weight, &[w[0], w[1]])?;
        let bias = take(set, &format!("{prefix}.{l}.bias"))?;
        expect_shape(&bias, &[w[1]])?;
        params.extend(weight.values);
        params.extend(bias.values);
    }
    Ok(Mlp::from_params(sizes, params).expect("sizes checked per layer"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub counters: AgentCounters,
    pub sf_updates: u64,
    pub sf_syncs: u64,
    pub optimizer_steps: u64,
    #[serde(with = "pair_map")]
    pub visits: BTreeMap<(usize, usize), u64>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, CheckpointError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes a complete bundle for `agent` into `dir`, creating it if needed.
pub fn save(dir: &Path, agent: &Agent<GridMap>, seed: u64) -> Result<(), CheckpointError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let learner = agent.learner();
    let mut tensors = mlp_tensors("sf", learner.network());
    tensors.extend(mlp_tensors("sf_target", learner.target_network()));
    let (m, v) = learner.optimizer().moments();
    if !m.is_empty() {
        tensors.push(Tensor::new("adam.m", vec![m.len()], m.to_vec()));
        tensors.push(Tensor::new("adam.v", vec![v.len()], v.to_vec()));
    }
    if let Encoder::Learned(enc) = agent.encoder() {
        tensors.extend(mlp_tensors("encoder", enc.network()));
    }
    let mut bin = Vec::new();
    write_tensors(&mut bin, &tensors).map_err(io_err(dir))?;
    write_file(&dir.join(PARAMS_FILE), &bin)?;

    let graph = serde_json::to_vec(agent.graph()).map_err(|source| CheckpointError::Json {
        file: GRAPH_FILE,
        source,
    })?;
    write_file(&dir.join(GRAPH_FILE), &graph)?;

    let meta = Meta {
        format_version: VERSION,
        config_hash: agent.config_hash().to_string(),
        seed,
        counters: agent.counters(),
        sf_updates: learner.updates(),
        sf_syncs: learner.syncs(),
        optimizer_steps: learner.optimizer().steps(),
        visits: agent.visits().clone(),
    };
    let meta = serde_json::to_vec_pretty(&meta).map_err(|source| CheckpointError::Json { file: META_FILE, source })?;
    write_file(&dir.join(META_FILE), &meta)?;
    write_file(&dir.join(CONFIG_FILE), agent.config().to_toml().as_bytes())?;
    write_file(&dir.join(MAP_FILE), agent.world().render().as_bytes())
}

/// Loads a bundle written by [`save`]. The replay buffer is not persisted,
/// so the agent is fit for evaluation and export, not bit-exact resumption.
pub fn load(dir: &Path) -> Result<(Agent<GridMap>, Meta), CheckpointError> {
    if !dir.join(META_FILE).is_file() {
        return Err(CheckpointError::Missing(dir.to_path_buf()));
    }
    let config = SflConfig::from_toml(&read_text(&dir.join(CONFIG_FILE))?)?;
    let meta: Meta = serde_json::from_str(&read_text(&dir.join(META_FILE))?)
        .map_err(|source| CheckpointError::Json { file: META_FILE, source })?;
    if config.hash() != meta.config_hash {
        return Err(CheckpointError::HashMismatch {
            recorded: meta.config_hash,
            found: config.hash(),
        });
    }
    let map = GridMap::parse(&read_text(&dir.join(MAP_FILE))?)?;
    let mut graph: LandmarkGraph<_> = serde_json::from_str(&read_text(&dir.join(GRAPH_FILE))?)
        .map_err(|source| CheckpointError::Json { file: GRAPH_FILE, source })?;
    graph.reindex_candidates();

    let path = dir.join(PARAMS_FILE);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let mut set: BTreeMap<String, Tensor> = read_tensors(&mut bytes.as_slice())?
        .into_iter()
        .map(|t| (t.name.clone(), t))
        .collect();

    let encoder = match config.encoder.mode {
        EncoderMode::OneHot => Encoder::OneHot(OneHotEncoder::new(
            map.states().map_err(AgentError::from)?.len(),
            config.encoder.alpha,
        )),
        EncoderMode::Learned => {
            let e = &config.encoder;
            let mut sizes = vec![map.observation(&map.start_state()).len()];
            sizes.extend(&e.hidden);
            sizes.push(e.output_dim);
            let net = mlp_from_tensors("encoder", &sizes, &mut set)?;
            Encoder::Learned(LearnedEncoder::from_network(net, e.alpha))
        }
    };
    let mut learner = SfLearner::new(
        config.sf.clone(),
        encoder.dim(),
        map.num_actions(),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let sizes = learner.network().sizes().to_vec();
    let net = mlp_from_tensors("sf", &sizes, &mut set)?;
    let target = mlp_from_tensors("sf_target", &sizes, &mut set)?;
    let mut optimizer = Optimizer::new(config.sf.optimizer, net.params().len());
    if !optimizer.moments().0.is_empty() {
        let n = net.params().len();
        let m = take(&mut set, "adam.m")?;
        expect_shape(&m, &[n])?;
        let v = take(&mut set, "adam.v")?;
        expect_shape(&v, &[n])?;
        optimizer.restore(m.values, v.values, meta.optimizer_steps);
    }
    learner.restore(net, target, optimizer, meta.sf_updates, meta.sf_syncs);
    let agent = Agent::from_parts(
        map,
        config,
        meta.seed,
        encoder,
        learner,
        graph,
        meta.visits.clone(),
        meta.counters,
    );
    Ok((agent, meta))
}
