//! Named parameter storage. Registration order is fixed by model
//! construction, which keeps binding, optimization, and checkpoints
//! deterministic for a given configuration and seed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, ValueId};
use super::Tensor;

/// Index of a parameter within its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    /// Register a rows×cols weight initialized uniform(−s, s), s = 1/√fan_in.
    pub fn register(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
        self.register_with(name, rows, cols, data)
    }

    /// Register a parameter with explicit initial values (layer-norm gains,
    /// zero biases, and the like).
    pub fn register_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.register_with(name, rows, cols, vec![value; rows * cols])
    }

    pub fn register_with(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name: {name}"
        );
        assert_eq!(rows * cols, data.len());
        self.names.push(name.to_string());
        self.tensors.push(Tensor::new(vec![rows, cols], data));
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn index_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        (0..self.names.len())
            .filter(|&i| self.names[i].starts_with(prefix))
            .map(ParamId)
            .collect()
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Load every parameter as a tape leaf, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let ids = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.rows(), t.cols(), t.data.clone()))
            .collect();
        Binding { ids }
    }

    /// Overwrite tensors by name from another store. Names in `self` that are
    /// absent from `src` are left at their current values when their prefix is
    /// listed in `optional_prefixes`; otherwise this is an error.
    pub fn load_from(
        &mut self,
        src: &ParamStore,
        optional_prefixes: &[&str],
    ) -> Result<(), String> {
        for i in 0..self.names.len() {
            let name = self.names[i].clone();
            match src.index_of(&name) {
                Some(pid) => {
                    let t = src.tensor(pid);
                    if t.shape != self.tensors[i].shape {
                        return Err(format!(
                            "parameter {name}: shape {:?} does not match expected {:?}",
                            t.shape, self.tensors[i].shape
                        ));
                    }
                    self.tensors[i].data.clone_from(&t.data);
                }
                None => {
                    if !optional_prefixes.iter().any(|p| name.starts_with(p)) {
                        return Err(format!("checkpoint is missing parameter {name}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Tape leaves for one forward pass, parallel to the store's entries.
pub struct Binding {
    ids: Vec<ValueId>,
}

impl Binding {
    pub fn id(&self, p: ParamId) -> ValueId {
        self.ids[p.0]
    }

    pub fn ids(&self) -> &[ValueId] {
        &self.ids
    }
}
