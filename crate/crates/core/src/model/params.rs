use super::real::Real;
use rand::Rng;

pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<R>,
}

/// Named parameter tensors in registration order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<R> {
    pub tensors: Vec<Tensor<R>>,
}

pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
}

impl<R: Real> ParamSet<R> {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init, rng: &mut impl Rng) -> ParamId {
        let len = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![R::zero(); len],
            Init::Ones => vec![R::one(); len],
            Init::Uniform(bound) => (0..len).map(|_| R::c(rng.gen_range(-bound..=bound))).collect(),
        };
        self.tensors.push(Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            data,
        });
        self.tensors.len() - 1
    }

    pub fn data(&self, id: ParamId) -> &[R] {
        &self.tensors[id].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [R] {
        &mut self.tensors[id].data
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers shaped like a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Grads<R> {
    pub data: Vec<Vec<R>>,
}

impl<R: Real> Grads<R> {
    pub fn zeros_like(params: &ParamSet<R>) -> Self {
        Grads {
            data: params.tensors.iter().map(|t| vec![R::zero(); t.data.len()]).collect(),
        }
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [R] {
        &mut self.data[id]
    }

    pub fn scale(&mut self, factor: R) {
        for v in self.data.iter_mut().flatten() {
            *v *= factor;
        }
    }

    pub fn add_scaled(&mut self, other: &Grads<R>, factor: R) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y * factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Adaptive-moment optimizer state, one moment pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<R: Real> AdamState<R> {
    pub fn new(params: &ParamSet<R>) -> Self {
        let zeros: Vec<Vec<R>> = params.tensors.iter().map(|t| vec![R::zero(); t.data.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one bias-corrected update; `step` is 1-based.
    pub fn apply(&mut self, cfg: &AdamConfig, step: u64, params: &mut ParamSet<R>, grads: &Grads<R>) {
        let b1 = R::c(cfg.beta1);
        let b2 = R::c(cfg.beta2);
        let c1 = R::c(1.0 - cfg.beta1.powi(step as i32));
        let c2 = R::c(1.0 - cfg.beta2.powi(step as i32));
        let lr = R::c(cfg.lr);
        let eps = R::c(cfg.eps);
        for (i, t) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.data[i]);
            for j in 0..t.data.len() {
                m[j] = b1 * m[j] + (R::one() - b1) * g[j];
                v[j] = b2 * v[j] + (R::one() - b2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                t.data[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
