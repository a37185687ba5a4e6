//! Central parameter store: layers hold [`ParamId`] handles, the optimizer
//! and checkpoint code walk the store.

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayViewMut2};

use super::Elem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
    /// Buffers such as batch-norm running statistics live in the store for
    /// checkpointing but are skipped by the optimizer.
    pub trainable: bool,
}

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Elem> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Elem> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            trainable: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.params[id.0].value
    }

    pub fn a1(&self, id: ParamId) -> ArrayView1<'_, T> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("param is 1-d")
    }

    pub fn a2(&self, id: ParamId) -> ArrayView2<'_, T> {
        self.params[id.0]
            .value
            .view()
            .into_dimensionality()
            .expect("param is 2-d")
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Number of scalar values across all params whose name starts with
    /// `prefix` (trainable and buffers alike).
    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    /// Number of trainable scalar values with the given name prefix.
    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable && p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }
}

/// Gradient buffers matching a [`ParamStore`] layout. Backward passes
/// accumulate, so two loss paths through shared layers compose.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    data: Vec<ArrayD<T>>,
}

impl<T: Elem> Grads<T> {
    pub fn zeros_like(store: &ParamStore<T>) -> Self {
        Grads {
            data: store
                .params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.data {
            g.fill(T::zero());
        }
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.data[id.0]
    }

    pub fn a2_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, T> {
        self.data[id.0]
            .view_mut()
            .into_dimensionality()
            .expect("grad is 2-d")
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArrayD<T>> {
        self.data.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ArrayD<T>> {
        self.data.iter_mut()
    }
}
