use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`]. Stable for the lifetime of
/// the store; checkpoints address parameters by name, not by id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Coarse ownership of a parameter, used to freeze whole subsystems during
/// training (e.g. the discriminator after the adversarial rounds).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    MetaGraph,
    Phase,
    Decoder,
    Convergence,
    Discriminator,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub value: Vec<f64>,
    /// Non-trainable parameters (frozen lookup tables) still serialize and
    /// bind onto tapes, but never receive gradients or optimizer updates.
    pub trainable: bool,
    pub group: ParamGroup,
}

/// Named registry of every tensor the model owns. Registration order is the
/// serialization order; no parameter dimension may depend on the number of
/// sensors in a batch.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        trainable: bool,
        group: ParamGroup,
    ) -> Result<ParamId> {
        let name = name.into();
        if value.len() != rows * cols {
            return Err(Error::Invalid(format!(
                "parameter {name}: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                value.len()
            )));
        }
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Invalid(format!("duplicate parameter name {name}")));
        }
        self.params.push(Param {
            name,
            rows,
            cols,
            value,
            trainable,
            group,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// `(name, rows, cols, trainable)` for every parameter, in registration
    /// order. Used to assert that the registry is independent of batch size.
    pub fn registry(&self) -> Vec<(String, usize, usize, bool)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.rows, p.cols, p.trainable))
            .collect()
    }

    pub fn total_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Per-parameter gradients collected from a tape, aligned with the store.
/// `None` means the parameter was never bound on that tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub(crate) fn new(grads: Vec<Option<Vec<f64>>>) -> Self {
        Gradients { grads }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Accumulate another tape's gradients into this one (used when a batch is
    /// split across tapes).
    pub fn merge(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            match (dst.as_mut(), src) {
                (Some(d), Some(s)) => {
                    for (x, y) in d.iter_mut().zip(s) {
                        *x += y;
                    }
                }
                (None, Some(s)) => *dst = Some(s.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.iter_mut() {
                *x *= c;
            }
        }
    }
}
