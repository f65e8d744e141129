//! Self-describing binary checkpoint.
//!
//! Layout (little-endian): magic `ACTA`, `u32` format version, `u32` array
//! count, then for each array: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` per dimension, and the `f64` values in row-major order.
//!
//! Everything needed to rebuild the model lives in the table: the input
//! space is encoded in array names, integers are stored as exact `f64`
//! values (split into 32-bit halves where they may exceed 2^53).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{CganModel, Discriminator, Generator};
use crate::codec::{InputSpace, InputVariableSpec, TestPoint, VariableKind};
use crate::nn::{Activation, AdamState, ConditionalNet, DenseLayer, EmbeddingLayer, Matrix};
use crate::sim::ExecutedTest;

pub const MAGIC: &[u8; 4] = b"ACTA";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("missing array `{0}`")]
    Missing(String),
    #[error("inconsistent shape for `{name}`: {reason}")]
    Shape { name: String, reason: String },
    #[error("invalid checkpoint content: {0}")]
    Invalid(String),
}

/// A trained model together with the tail of its execution history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: CganModel,
    pub history: Vec<ExecutedTest>,
}

#[derive(Debug, Clone, PartialEq)]
struct Array {
    dims: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Default)]
struct Table {
    order: Vec<String>,
    arrays: BTreeMap<String, Array>,
}

impl Table {
    fn put(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        self.order.push(name.clone());
        self.arrays.insert(name, Array { dims, data });
    }

    fn get(&self, name: &str) -> Result<&Array, CheckpointError> {
        self.arrays
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_owned()))
    }

    fn get_dims(&self, name: &str, dims: &[usize]) -> Result<&[f64], CheckpointError> {
        let a = self.get(name)?;
        if a.dims != dims {
            return Err(CheckpointError::Shape {
                name: name.to_owned(),
                reason: format!("expected dims {dims:?}, found {:?}", a.dims),
            });
        }
        Ok(&a.data)
    }

    fn scalar(&self, name: &str) -> Result<f64, CheckpointError> {
        Ok(self.get_dims(name, &[1])?[0])
    }

    fn count(&self, name: &str) -> Result<usize, CheckpointError> {
        let v = self.scalar(name)?;
        as_count(v).ok_or_else(|| CheckpointError::Invalid(format!("`{name}` is not a count: {v}")))
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.order.len() as u32).to_le_bytes());
        for name in &self.order {
            let a = &self.arrays[name];
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
            for &d in &a.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| CheckpointError::BadMagic)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version });
        }
        let count = r.u32("array count")?;
        let mut table = Table::default();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "array name")?.to_vec())
                .map_err(|_| CheckpointError::Invalid("array name is not UTF-8".into()))?;
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                dims.push(r.u64("dimension")? as usize);
            }
            let len = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(CheckpointError::Truncated("array data"))?;
            let raw = r.take(
                len.checked_mul(8).ok_or(CheckpointError::Truncated("array data"))?,
                "array data",
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if table.arrays.contains_key(&name) {
                return Err(CheckpointError::Invalid(format!("duplicate array `{name}`")));
            }
            table.put(name, dims, data);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Invalid(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        Ok(table)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let s = self.bytes.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn as_count(v: f64) -> Option<usize> {
    (v >= 0.0 && v.fract() == 0.0 && v < 9.0e15).then_some(v as usize)
}

fn split_u64(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xffff_ffff) as f64]
}

fn join_u64(hi: f64, lo: f64) -> Result<u64, CheckpointError> {
    let part = |v: f64| {
        as_count(v)
            .filter(|&x| x <= u32::MAX as usize)
            .map(|x| x as u64)
            .ok_or_else(|| CheckpointError::Invalid(format!("bad 32-bit word {v}")))
    };
    Ok((part(hi)? << 32) | part(lo)?)
}

fn put_space(t: &mut Table, space: &InputSpace) {
    t.put("space.len", vec![1], vec![space.dim() as f64]);
    for (i, var) in space.variables.iter().enumerate() {
        match &var.kind {
            VariableKind::IntegerRange { lo, hi } => {
                t.put(
                    format!("space.{i}.int:{}", var.name),
                    vec![2],
                    vec![*lo as f64, *hi as f64],
                );
            }
            VariableKind::Categorical { categories } => {
                t.put(
                    format!("space.{i}.cat:{}", var.name),
                    vec![1],
                    vec![categories.len() as f64],
                );
                for (k, c) in categories.iter().enumerate() {
                    t.put(format!("space.{i}.category.{k}:{c}"), vec![0], vec![]);
                }
            }
        }
    }
}

fn find_prefixed<'t>(t: &'t Table, prefix: &str) -> Option<(&'t str, &'t Array)> {
    t.arrays
        .range(prefix.to_owned()..)
        .take_while(|(k, _)| k.starts_with(prefix))
        .next()
        .map(|(k, a)| (&k[prefix.len()..], a))
}

fn get_space(t: &Table) -> Result<InputSpace, CheckpointError> {
    let n = t.count("space.len")?;
    let mut variables = Vec::with_capacity(n);
    for i in 0..n {
        if let Some((name, a)) = find_prefixed(t, &format!("space.{i}.int:")) {
            if a.data.len() != 2 {
                return Err(CheckpointError::Shape {
                    name: name.to_owned(),
                    reason: "integer range needs [lo, hi]".into(),
                });
            }
            variables.push(
                InputVariableSpec::integer(name, a.data[0] as i64, a.data[1] as i64)
                    .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
            );
        } else if let Some((name, a)) = find_prefixed(t, &format!("space.{i}.cat:")) {
            let count = a.data.first().copied().and_then(as_count).unwrap_or(0);
            let mut categories = Vec::with_capacity(count);
            for k in 0..count {
                let (c, _) = find_prefixed(t, &format!("space.{i}.category.{k}:"))
                    .ok_or_else(|| CheckpointError::Missing(format!("space.{i}.category.{k}")))?;
                categories.push(c.to_owned());
            }
            variables.push(
                InputVariableSpec::categorical(name, categories)
                    .map_err(|e| CheckpointError::Invalid(e.to_string()))?,
            );
        } else {
            return Err(CheckpointError::Missing(format!("space.{i}")));
        }
    }
    InputSpace::new(variables).map_err(|e| CheckpointError::Invalid(e.to_string()))
}

fn put_net(t: &mut Table, prefix: &str, net: &ConditionalNet) {
    t.put(format!("{prefix}.feature_dim"), vec![1], vec![net.feature_dim() as f64]);
    let emb = net.embedding().table();
    t.put(
        format!("{prefix}.embedding"),
        vec![emb.rows(), emb.cols()],
        emb.data().to_vec(),
    );
    t.put(format!("{prefix}.layers"), vec![1], vec![net.layers().len() as f64]);
    for (k, layer) in net.layers().iter().enumerate() {
        let w = layer.weights();
        t.put(
            format!("{prefix}.layer.{k}.weights"),
            vec![w.rows(), w.cols()],
            w.data().to_vec(),
        );
        t.put(
            format!("{prefix}.layer.{k}.bias"),
            vec![w.rows()],
            layer.bias().to_vec(),
        );
        t.put(
            format!("{prefix}.layer.{k}.activation"),
            vec![1],
            vec![f64::from(layer.activation().code())],
        );
    }
}

fn get_matrix(t: &Table, name: &str) -> Result<Matrix, CheckpointError> {
    let a = t.get(name)?;
    if a.dims.len() != 2 {
        return Err(CheckpointError::Shape {
            name: name.to_owned(),
            reason: format!("expected a matrix, found rank {}", a.dims.len()),
        });
    }
    Matrix::from_vec(a.dims[0], a.dims[1], a.data.clone()).map_err(|e| CheckpointError::Shape {
        name: name.to_owned(),
        reason: e.to_string(),
    })
}

fn get_net(t: &Table, prefix: &str) -> Result<ConditionalNet, CheckpointError> {
    let feature_dim = t.count(&format!("{prefix}.feature_dim"))?;
    let embedding = EmbeddingLayer::new(get_matrix(t, &format!("{prefix}.embedding"))?);
    let n = t.count(&format!("{prefix}.layers"))?;
    let mut layers = Vec::with_capacity(n);
    for k in 0..n {
        let weights = get_matrix(t, &format!("{prefix}.layer.{k}.weights"))?;
        let bias = t
            .get_dims(&format!("{prefix}.layer.{k}.bias"), &[weights.rows()])?
            .to_vec();
        let code = t.scalar(&format!("{prefix}.layer.{k}.activation"))?;
        let act = as_count(code)
            .and_then(|c| u8::try_from(c).ok())
            .and_then(Activation::from_code)
            .ok_or_else(|| CheckpointError::Invalid(format!("unknown activation code {code}")))?;
        layers.push(DenseLayer::new(weights, bias, act).map_err(|e| CheckpointError::Shape {
            name: format!("{prefix}.layer.{k}"),
            reason: e.to_string(),
        })?);
    }
    ConditionalNet::from_parts(feature_dim, embedding, layers).map_err(|e| CheckpointError::Shape {
        name: prefix.to_owned(),
        reason: e.to_string(),
    })
}

fn put_adam(t: &mut Table, prefix: &str, adam: &AdamState) {
    t.put(
        format!("{prefix}.hyper"),
        vec![4],
        vec![adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon],
    );
    t.put(format!("{prefix}.step"), vec![2], split_u64(adam.step_count()).to_vec());
    t.put(
        format!("{prefix}.tensors"),
        vec![1],
        vec![adam.first_moment().len() as f64],
    );
    for (k, (m, v)) in adam.first_moment().iter().zip(adam.second_moment()).enumerate() {
        t.put(format!("{prefix}.m.{k}"), vec![m.len()], m.clone());
        t.put(format!("{prefix}.v.{k}"), vec![v.len()], v.clone());
    }
}

fn get_adam(t: &Table, prefix: &str, net: &ConditionalNet) -> Result<AdamState, CheckpointError> {
    let h = t.get_dims(&format!("{prefix}.hyper"), &[4])?;
    let step = t.get_dims(&format!("{prefix}.step"), &[2])?;
    let n = t.count(&format!("{prefix}.tensors"))?;
    let shapes: Vec<usize> = net.parameters().iter().map(|p| p.len()).collect();
    if n != shapes.len() {
        return Err(CheckpointError::Shape {
            name: prefix.to_owned(),
            reason: format!("{n} moment tensors for {} parameter tensors", shapes.len()),
        });
    }
    let mut first = Vec::with_capacity(n);
    let mut second = Vec::with_capacity(n);
    for (k, &len) in shapes.iter().enumerate() {
        first.push(t.get_dims(&format!("{prefix}.m.{k}"), &[len])?.to_vec());
        second.push(t.get_dims(&format!("{prefix}.v.{k}"), &[len])?.to_vec());
    }
    AdamState::from_parts([h[0], h[1], h[2], h[3]], first, second, join_u64(step[0], step[1])?).map_err(|e| {
        CheckpointError::Shape {
            name: prefix.to_owned(),
            reason: e.to_string(),
        }
    })
}

fn put_rng(t: &mut Table, rng: &ChaCha8Rng) {
    let mut v: Vec<f64> = rng.get_seed().iter().map(|&b| f64::from(b)).collect();
    v.extend(split_u64(rng.get_stream()));
    let pos = rng.get_word_pos();
    v.extend(split_u64((pos >> 64) as u64));
    v.extend(split_u64(pos as u64));
    t.put("meta.rng_state", vec![v.len()], v);
}

fn get_rng(t: &Table) -> Result<ChaCha8Rng, CheckpointError> {
    use rand::SeedableRng;
    let v = t.get_dims("meta.rng_state", &[38])?;
    let mut seed = [0u8; 32];
    for (s, &x) in seed.iter_mut().zip(&v[..32]) {
        *s = as_count(x)
            .and_then(|b| u8::try_from(b).ok())
            .ok_or_else(|| CheckpointError::Invalid(format!("bad rng seed byte {x}")))?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(join_u64(v[32], v[33])?);
    let hi = join_u64(v[34], v[35])? as u128;
    let lo = join_u64(v[36], v[37])? as u128;
    rng.set_word_pos((hi << 64) | lo);
    Ok(rng)
}

fn put_history(t: &mut Table, dim: usize, history: &[ExecutedTest]) {
    let mut points = Vec::with_capacity(history.len() * dim);
    for h in history {
        points.extend(h.point.values.iter().map(|&v| v as f64));
    }
    t.put("history.points", vec![history.len(), dim], points);
    t.put(
        "history.t_exe",
        vec![history.len()],
        history.iter().map(|h| h.t_exe).collect(),
    );
    t.put(
        "history.labels",
        vec![history.len()],
        history.iter().map(|h| h.label as f64).collect(),
    );
}

fn get_history(t: &Table, space: &InputSpace) -> Result<Vec<ExecutedTest>, CheckpointError> {
    let points = t.get("history.points")?;
    let dim = space.dim();
    if points.dims.len() != 2 || points.dims[1] != dim {
        return Err(CheckpointError::Shape {
            name: "history.points".into(),
            reason: format!("expected [N, {dim}], found {:?}", points.dims),
        });
    }
    let n = points.dims[0];
    let t_exe = t.get_dims("history.t_exe", &[n])?;
    let labels = t.get_dims("history.labels", &[n])?;
    (0..n)
        .map(|i| {
            let point = TestPoint::new(points.data[i * dim..(i + 1) * dim].iter().map(|&v| v as i64).collect());
            space
                .check(&point)
                .map_err(|e| CheckpointError::Invalid(format!("history row {i}: {e}")))?;
            let label =
                as_count(labels[i]).ok_or_else(|| CheckpointError::Invalid(format!("history label {}", labels[i])))?;
            Ok(ExecutedTest {
                point,
                t_exe: t_exe[i],
                label,
            })
        })
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.model;
        let mut t = Table::default();
        t.put("meta.num_requirements", vec![1], vec![m.num_requirements as f64]);
        t.put("meta.rng_seed", vec![2], split_u64(m.rng_seed).to_vec());
        t.put(
            "meta.mismatch_negatives",
            vec![1],
            vec![f64::from(u8::from(m.mismatch_negatives))],
        );
        put_rng(&mut t, &m.rng);
        put_space(&mut t, &m.space);
        put_net(&mut t, "gen", &m.gen.net);
        put_net(&mut t, "disc", &m.disc.net);
        put_adam(&mut t, "gen_opt", &m.gen_optimizer);
        put_adam(&mut t, "disc_opt", &m.disc_optimizer);
        put_history(&mut t, m.space.dim(), &self.history);
        t.encode()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let t = Table::decode(bytes)?;
        let space = get_space(&t)?;
        let num_requirements = t.count("meta.num_requirements")?;
        let seed = t.get_dims("meta.rng_seed", &[2])?;
        let rng_seed = join_u64(seed[0], seed[1])?;
        let mismatch_negatives = t.count("meta.mismatch_negatives")? == 1;
        let gen = Generator {
            net: get_net(&t, "gen")?,
        };
        let disc = Discriminator {
            net: get_net(&t, "disc")?,
        };
        for (name, net, out) in [("gen", &gen.net, space.dim()), ("disc", &disc.net, 1)] {
            if net.feature_dim() != space.dim() || net.num_labels() != num_requirements || net.output_dim() != out {
                return Err(CheckpointError::Shape {
                    name: name.into(),
                    reason: format!(
                        "network is {}→{} with {} labels; space has {} variables and {} requirements",
                        net.feature_dim(),
                        net.output_dim(),
                        net.num_labels(),
                        space.dim(),
                        num_requirements
                    ),
                });
            }
        }
        let gen_optimizer = get_adam(&t, "gen_opt", &gen.net)?;
        let disc_optimizer = get_adam(&t, "disc_opt", &disc.net)?;
        let rng = get_rng(&t)?;
        let history = get_history(&t, &space)?;
        Ok(Self {
            model: CganModel {
                space,
                num_requirements,
                gen,
                disc,
                gen_optimizer,
                disc_optimizer,
                rng_seed,
                mismatch_negatives,
                rng,
            },
            history,
        })
    }
}

/// Writes the checkpoint atomically: a sibling temp file is renamed into place.
pub fn save(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let mut tmp_name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&checkpoint.to_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
