use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// A named, shaped block of `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(usize);

/// Trainable parameters plus non-trainable buffers (running statistics).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Tensor>,
    buffers: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> ParamId {
        let tensor = Tensor {
            name: name.into(),
            shape,
            data,
        };
        assert_eq!(tensor.numel(), tensor.data.len(), "{}", tensor.name);
        self.params.push(tensor);
        ParamId(self.params.len() - 1)
    }

    pub fn add_filled(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f32) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![value; n])
    }

    pub fn add_normal<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        std: f32,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, shape, data)
    }

    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f32,
        rng: &mut R,
    ) -> ParamId {
        let n = shape.iter().product();
        let dist = Uniform::new_inclusive(-bound, bound);
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.add(name, shape, data)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, shape: Vec<usize>, value: f32) -> BufferId {
        let n = shape.iter().product();
        self.buffers.push(Tensor {
            name: name.into(),
            shape,
            data: vec![value; n],
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.params[id.0].data
    }

    pub fn buffer(&self, id: BufferId) -> &[f32] {
        &self.buffers[id.0].data
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut [f32] {
        &mut self.buffers[id.0].data
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Tensor] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Tensor] {
        &mut self.buffers
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }
}

/// Gradient buffers parallel to a [`ParamStore`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    data: Vec<Vec<f32>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.data[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.data.iter().map(Vec::as_slice)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Vec<f32>> {
        self.data.iter_mut()
    }

    pub fn global_norm(&self) -> f32 {
        self.data
            .iter()
            .flat_map(|g| g.iter())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt() as f32
    }

    pub fn scale(&mut self, factor: f32) {
        for g in self.data.iter_mut().flat_map(|g| g.iter_mut()) {
            *g *= factor;
        }
    }

    /// Fraction of scalars whose gradient is exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let total: usize = self.data.iter().map(Vec::len).sum();
        let zeros = self
            .data
            .iter()
            .flat_map(|g| g.iter())
            .filter(|&&v| v == 0.0)
            .count();
        zeros as f64 / total.max(1) as f64
    }
}
