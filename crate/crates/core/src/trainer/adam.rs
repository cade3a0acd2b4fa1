use crate::appearance::Tensor;
use crate::scene::{slot, PARAM_LEN};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;

/// Adam over per-Gaussian parameter rows, with one learning rate per slot.
#[derive(Clone, Debug, Default)]
pub struct GaussianAdam {
    pub m: Vec<[f64; PARAM_LEN]>,
    pub v: Vec<[f64; PARAM_LEN]>,
    /// Per-row step counts; rows created by densification start from zero.
    pub steps: Vec<u32>,
    pub eps: f64,
}

impl GaussianAdam {
    pub fn new(n: usize, eps: f64) -> Self {
        Self {
            m: vec![[0.0; PARAM_LEN]; n],
            v: vec![[0.0; PARAM_LEN]; n],
            steps: vec![0; n],
            eps,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Updates only rows with `active[i]`; others keep their moments untouched.
    pub fn step(&mut self, params: &mut [[f64; PARAM_LEN]], grads: &[[f64; PARAM_LEN]], active: &[bool], lr: &[f64; PARAM_LEN]) {
        for i in 0..params.len() {
            if !active[i] {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let bc1 = 1.0 - BETA1.powi(t);
            let bc2 = 1.0 - BETA2.powi(t);
            let (m, v, p, g) = (&mut self.m[i], &mut self.v[i], &mut params[i], &grads[i]);
            for k in 0..PARAM_LEN {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr[k] * mh / (vh.sqrt() + self.eps);
            }
        }
    }

    /// Appends `n` rows with fresh moments.
    pub fn grow(&mut self, n: usize) {
        self.m.extend(std::iter::repeat_n([0.0; PARAM_LEN], n));
        self.v.extend(std::iter::repeat_n([0.0; PARAM_LEN], n));
        self.steps.extend(std::iter::repeat_n(0, n));
    }

    pub fn retain(&mut self, keep: &[bool]) {
        let mut k = keep.iter();
        self.m.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.v.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.steps.retain(|_| *k.next().unwrap());
    }
}

/// Learning rate per parameter slot.
pub fn slot_rates(position: f64, scale: f64, rotation: f64, opacity: f64, color: f64, sh: f64) -> [f64; PARAM_LEN] {
    let mut lr = [0.0; PARAM_LEN];
    lr[slot::POSITION..slot::POSITION + 3].fill(position);
    lr[slot::LOG_SCALE..slot::LOG_SCALE + 3].fill(scale);
    lr[slot::ROTATION..slot::ROTATION + 4].fill(rotation);
    lr[slot::OPACITY] = opacity;
    lr[slot::COLOR..slot::COLOR + 3].fill(color);
    lr[slot::SH..].fill(sh);
    lr
}

/// Adam over a list of network tensors.
#[derive(Clone, Debug)]
pub struct TensorAdam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u32,
    pub lr: f64,
    pub eps: f64,
}

impl TensorAdam {
    pub fn new(tensors: &[Tensor], lr: f64) -> Self {
        Self {
            m: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            step: 0,
            lr,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, tensors: &mut [Tensor], grads: &[Tensor]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for ((p, g), (m, v)) in tensors.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                p.data[k] -= self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
            }
        }
    }
}
