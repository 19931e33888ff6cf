//! Named parameter tensors and their gradients.
//!
//! Every trainable matrix in the model lives in one [`ParamStore`] under a
//! dotted hierarchical name (`hgt.l0.q.text.w`). Modules keep [`ParamId`]s
//! and read values through the tape, so the optimizer, the checkpoint
//! writer and the gradient checker all see the same flat view.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EcssError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    /// Replaces the value of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, value: Array2<f64>) -> Result<()> {
        let id = self
            .id_of(name)
            .ok_or_else(|| EcssError::Lookup(format!("unknown parameter {name}")))?;
        if self.values[id.0].dim() != value.dim() {
            return Err(EcssError::Shape(format!(
                "parameter {name}: expected {:?}, got {:?}",
                self.values[id.0].dim(),
                value.dim()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Sparse-by-tensor gradient set aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    inner: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn new(n_params: usize) -> Self {
        Self {
            inner: vec![None; n_params],
        }
    }

    pub fn for_store(store: &ParamStore) -> Self {
        Self::new(store.len())
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.inner.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        match &mut self.inner[id.0] {
            Some(acc) => *acc += g,
            slot @ None => *slot = Some(g.clone()),
        }
    }

    pub fn accumulate_owned(&mut self, id: ParamId, g: Array2<f64>) {
        match &mut self.inner[id.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (i, g) in other.inner.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.inner.iter_mut().flatten() {
            g.mapv_inplace(|x| x * s);
        }
    }

    /// Gradient for `id`, or zeros shaped like the parameter.
    pub fn dense(&self, store: &ParamStore, id: ParamId) -> Array2<f64> {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(store.get(id).dim()))
    }

    /// Fails with the offending parameter path on the first NaN/inf entry.
    pub fn check_finite(&self, store: &ParamStore, step: usize) -> Result<()> {
        for (i, g) in self.inner.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(EcssError::NonFinite {
                        step,
                        what: format!("gradient of {}", store.name(ParamId(i))),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
pub fn uniform_init(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// How [`ParamBuilder::weight`] and [`ParamBuilder::bias`] draw values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights and biases from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    FanIn,
    /// Weights from uniform(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases.
    /// Keeps activations from shrinking through deep GELU stacks.
    He,
}

/// Registers parameters under a name prefix while drawing from one seeded stream.
pub struct ParamBuilder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
    prefix: String,
    scheme: InitScheme,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            store,
            rng,
            prefix: String::new(),
            scheme: InitScheme::FanIn,
        }
    }

    /// Like [`ParamBuilder::scoped`], switching the init scheme inside.
    pub fn scoped_with<R>(&mut self, name: &str, scheme: InitScheme, f: impl FnOnce(&mut ParamBuilder<'_>) -> R) -> R {
        let saved = self.scheme;
        self.scheme = scheme;
        let r = self.scoped(name, f);
        self.scheme = saved;
        r
    }

    pub fn scheme(&self) -> InitScheme {
        self.scheme
    }

    /// A weight matrix drawn with the current scheme.
    pub fn weight(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        match self.scheme {
            InitScheme::FanIn => self.uniform(name, rows, cols, fan_in),
            InitScheme::He => {
                let v = uniform_init(self.rng, rows, cols, fan_in) * 6f64.sqrt();
                let n = self.full_name(name);
                self.store.add(n, v)
            }
        }
    }

    /// A `1 × cols` bias drawn with the current scheme.
    pub fn bias(&mut self, name: &str, cols: usize, fan_in: usize) -> ParamId {
        match self.scheme {
            InitScheme::FanIn => self.uniform(name, 1, cols, fan_in),
            InitScheme::He => self.constant(name, 1, cols, 0.0),
        }
    }

    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut ParamBuilder<'_>) -> R) -> R {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        let mut child = ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix,
            scheme: self.scheme,
        };
        f(&mut child)
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let v = uniform_init(self.rng, rows, cols, fan_in);
        let n = self.full_name(name);
        self.store.add(n, v)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, Array2::from_elem((rows, cols), value))
    }

    pub fn custom(&mut self, name: &str, value: Array2<f64>) -> ParamId {
        let n = self.full_name(name);
        self.store.add(n, value)
    }
}
