use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, XrecError};

/// Shape of a named parameter array. Matrices are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        match *self {
            Shape::Vector(_) => 1,
            Shape::Matrix(r, _) => r,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(_, c) => c,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f64>,
    // Adam moment estimates, zero until the first optimizer step.
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
}

/// Named parameter arrays with deterministic creation order.
///
/// Matrices are initialized uniformly in `[-0.5/sqrt(cols), 0.5/sqrt(cols)]`
/// from the store's seeded generator; vectors (biases) start at zero. The
/// registration order is part of the store's identity: two stores built by
/// the same sequence of calls with the same seed hold bit-identical values.
#[derive(Debug, Clone)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
    seed: u64,
    rng: ChaCha8Rng,
    step: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            params: Vec::new(),
            index: BTreeMap::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Optimizer step counter (number of completed `adam_step` calls).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance_step(&mut self) -> u64 {
        self.step += 1;
        self.step
    }

    fn insert(&mut self, name: &str, shape: Shape, values: Vec<f64>) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(XrecError::Invalid(format!("duplicate parameter `{name}`")));
        }
        let len = shape.len();
        debug_assert_eq!(values.len(), len);
        let id = self.params.len();
        self.params.push(Param {
            name: name.to_string(),
            shape,
            values,
            m: vec![0.0; len],
            v: vec![0.0; len],
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Register a matrix initialized uniformly in `[-0.5/sqrt(cols), 0.5/sqrt(cols)]`.
    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<usize> {
        if rows == 0 || cols == 0 {
            return Err(XrecError::Invalid(format!("parameter `{name}` has a zero dimension")));
        }
        let bound = 0.5 / (cols as f64).sqrt();
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(self.rng.random_range(-bound..bound));
        }
        self.insert(name, Shape::Matrix(rows, cols), values)
    }

    /// Register a zero-initialized vector (used for biases).
    pub fn add_vector(&mut self, name: &str, len: usize) -> Result<usize> {
        if len == 0 {
            return Err(XrecError::Invalid(format!("parameter `{name}` has a zero dimension")));
        }
        self.insert(name, Shape::Vector(len), vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| XrecError::Invalid(format!("unknown parameter `{name}`")))
    }

    pub fn param(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn param_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        Ok(self.param(self.id(name)?))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Param> {
        let id = self.id(name)?;
        Ok(self.param_mut(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Row `r` of a matrix parameter (a vector parameter is its own row 0).
    pub fn row(&self, id: usize, r: usize) -> &[f64] {
        let p = &self.params[id];
        let cols = p.shape.cols();
        &p.values[r * cols..(r + 1) * cols]
    }

    /// Serialize all arrays: a JSON header (format version, seed, caller
    /// extra, array names and shapes) followed by the concatenated f64
    /// little-endian payload in registration order.
    pub fn write_arrays<W: Write>(&self, w: &mut W, extra: &serde_json::Value) -> std::io::Result<()> {
        let arrays: Vec<serde_json::Value> = self
            .params
            .iter()
            .map(|p| {
                serde_json::json!({
                    "name": p.name,
                    "rows": p.shape.rows(),
                    "cols": p.shape.cols(),
                    "vector": matches!(p.shape, Shape::Vector(_)),
                })
            })
            .collect();
        let header = serde_json::json!({
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "seed": self.seed,
            "meta": extra,
            "arrays": arrays,
        });
        let header = serde_json::to_vec(&header).expect("header serializes");
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for p in &self.params {
            for &x in &p.values {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Inverse of [`write_arrays`](Self::write_arrays). Returns the rebuilt
    /// store and the caller extra stored in the header. The rebuilt store's
    /// generator state is reseeded from the stored seed; moments are zero.
    pub fn read_arrays<R: Read>(r: &mut R, path: &str) -> Result<(Self, serde_json::Value)> {
        let bad = |msg: &str| XrecError::Checkpoint { path: path.to_string(), msg: msg.to_string() };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
        let len = u32::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        let header: serde_json::Value =
            serde_json::from_slice(&header).map_err(|e| bad(&format!("bad header json: {e}")))?;
        let version = header["format_version"].as_u64();
        if version != Some(CHECKPOINT_FORMAT_VERSION) {
            return Err(bad(&format!("unsupported format version {version:?}")));
        }
        let seed = header["seed"]
            .as_u64()
            .ok_or_else(|| bad("header missing seed"))?;
        let arrays = header["arrays"]
            .as_array()
            .ok_or_else(|| bad("header missing arrays"))?;
        let mut store = ParamStore::new(seed);
        for a in arrays {
            let name = a["name"].as_str().ok_or_else(|| bad("array missing name"))?;
            let rows = a["rows"].as_u64().ok_or_else(|| bad("array missing rows"))? as usize;
            let cols = a["cols"].as_u64().ok_or_else(|| bad("array missing cols"))? as usize;
            let vector = a["vector"].as_bool().unwrap_or(false);
            let shape = if vector { Shape::Vector(cols) } else { Shape::Matrix(rows, cols) };
            let mut values = Vec::with_capacity(shape.len());
            let mut buf = [0u8; 8];
            for _ in 0..shape.len() {
                r.read_exact(&mut buf)
                    .map_err(|_| bad(&format!("truncated payload for `{name}`")))?;
                values.push(f64::from_le_bytes(buf));
            }
            store.insert(name, shape, values)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| bad(&format!("read: {e}")))? != 0 {
            return Err(bad("trailing bytes after payload"));
        }
        Ok((store, header["meta"].clone()))
    }
}

const MAGIC: &[u8; 4] = b"XRCP";
pub const CHECKPOINT_FORMAT_VERSION: u64 = 1;
