//! Riemannian Adam, learning-rate scheduling and early stopping.

use log::warn;

use super::backend::{k_lorentz, Eager};
use super::func::Func;
use super::params::{Gradients, ParamId, ParamSpace, ParamStore};
use crate::manifold::{ops, Model, CURVATURE_FLOOR};

/// Curvature scale stored in raw (pre-softplus) form in a scalar tensor.
pub fn curvature_value(store: &ParamStore, id: ParamId) -> f64 {
    Func::Softplus.eval(store.get(id).data[0]) + CURVATURE_FLOOR
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm clip applied to raw gradients before the Riemannian rescale.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

/// Converts a Euclidean gradient into a Riemannian one, row by row.
///
/// Lorentz rows: the time component is negated (inverse metric) and the
/// result projected onto the tangent space at the row. Poincaré rows are
/// scaled by `(1 − ‖p‖²)²/4`.
pub fn riemannian_grad(space: ParamSpace, x: &[f64], g: &[f64], k: f64) -> Vec<f64> {
    match space {
        ParamSpace::Euclidean => g.to_vec(),
        ParamSpace::Lorentz { .. } => {
            let mut h = g.to_vec();
            h[0] = -h[0];
            tangent_project(x, &h, k)
        }
        ParamSpace::Poincare => {
            let n2: f64 = x.iter().map(|v| v * v).sum();
            let s = (1.0 - n2).powi(2) / 4.0;
            g.iter().map(|v| v * s).collect()
        }
    }
}

/// `v + ⟨x,v⟩_L x / k`, the Minkowski-orthogonal projection onto `T_x`.
pub fn tangent_project(x: &[f64], v: &[f64], k: f64) -> Vec<f64> {
    let c = k_lorentz(x, v) / k;
    v.iter().zip(x).map(|(a, b)| a + c * b).collect()
}

/// Moment buffers and counters, serialisable through checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub skipped: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// The gradient or the update was non-finite; nothing changed.
    Skipped,
}

#[derive(Debug, Clone)]
pub struct RiemannianAdam {
    pub config: AdamConfig,
    pub state: AdamState,
}

fn rows(shape: &[usize], len: usize) -> (usize, usize) {
    match shape {
        [r, c] => (*r, *c),
        _ => (1, len),
    }
}

impl RiemannianAdam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.data.len()]).collect();
        Self {
            config,
            state: AdamState {
                step: 0,
                skipped: 0,
                m: zeros.clone(),
                v: zeros,
            },
        }
    }

    pub fn with_state(config: AdamConfig, state: AdamState) -> Self {
        Self { config, state }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> StepOutcome {
        let mut grads = grads.clone();
        for (id, t) in store.iter() {
            if !t.trainable {
                grads.get_mut(id).iter_mut().for_each(|g| *g = 0.0);
            }
        }
        if grads.grads.iter().flatten().any(|g| !g.is_finite()) {
            return self.skip("non-finite gradient");
        }
        if let Some(c) = self.config.clip_norm {
            grads.clip_global_norm(c);
        }

        // Curvatures are read once so every Lorentz row moves on the manifold
        // it sat on at the start of the step.
        let k_old: Vec<f64> = store
            .iter()
            .map(|(_, t)| match t.space {
                ParamSpace::Lorentz { curvature } => curvature_value(store, curvature),
                _ => 1.0,
            })
            .collect();

        let t = self.state.step + 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);

        let mut new_data = Vec::with_capacity(store.len());
        let mut new_m = self.state.m.clone();
        let mut new_v = self.state.v.clone();
        for (id, tensor) in store.iter() {
            if !tensor.trainable {
                new_data.push(None);
                continue;
            }
            let (nr, nc) = rows(&tensor.shape, tensor.data.len());
            let mut data = tensor.data.clone();
            let g_all = grads.get(id);
            for r in 0..nr {
                let span = r * nc..(r + 1) * nc;
                let x = &tensor.data[span.clone()];
                let rg = riemannian_grad(tensor.space, x, &g_all[span.clone()], k_old[id.0]);
                let m = &mut new_m[id.0][span.clone()];
                let v = &mut new_v[id.0][span.clone()];
                for i in 0..nc {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * rg[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * rg[i] * rg[i];
                }
                let dir: Vec<f64> = (0..nc)
                    .map(|i| -lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps))
                    .collect();
                let out = &mut data[span];
                match tensor.space {
                    ParamSpace::Euclidean => {
                        out.iter_mut().zip(&dir).for_each(|(o, d)| *o += d);
                    }
                    ParamSpace::Poincare => {
                        let mut b = Eager::new();
                        let kk = vec![1.0];
                        let y = ops::expmap(&mut b, Model::PoincareBall, &kk, &x.to_vec(), &dir);
                        out.copy_from_slice(&y);
                    }
                    ParamSpace::Lorentz { .. } => {
                        let k = k_old[id.0];
                        let kk = vec![k];
                        let dir = tangent_project(x, &dir, k);
                        let mut b = Eager::new();
                        let y = ops::expmap(&mut b, Model::Lorentz, &kk, &x.to_vec(), &dir);
                        let moved = ops::lorentz_transport(&mut b, &kk, &x.to_vec(), &y, &m.to_vec());
                        m.copy_from_slice(&moved);
                        out.copy_from_slice(&y);
                    }
                }
            }
            new_data.push(Some(data));
        }

        let finite = new_data.iter().flatten().flatten().all(|v| v.is_finite())
            && new_m.iter().flatten().all(|v| v.is_finite())
            && new_v.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return self.skip("non-finite update");
        }

        for (i, data) in new_data.into_iter().enumerate() {
            if let Some(d) = data {
                store.get_mut(ParamId(i)).data = d;
            }
        }
        self.state.m = new_m;
        self.state.v = new_v;
        self.state.step = t;
        reproject(store, &mut self.state.m);
        StepOutcome::Applied
    }

    fn skip(&mut self, why: &str) -> StepOutcome {
        self.state.skipped += 1;
        warn!(
            "optimizer step skipped ({why}); {} skipped so far",
            self.state.skipped
        );
        StepOutcome::Skipped
    }
}

/// Re-asserts every manifold constraint with the store's current curvatures,
/// projecting Lorentz first moments back onto their tangent spaces.
pub fn reproject(store: &mut ParamStore, moments: &mut [Vec<f64>]) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let t = store.get(id);
        let (nr, nc) = rows(&t.shape, t.data.len());
        let space = t.space;
        let k = match space {
            ParamSpace::Lorentz { curvature } => curvature_value(store, curvature),
            ParamSpace::Poincare => 1.0,
            ParamSpace::Euclidean => continue,
        };
        let model = match space {
            ParamSpace::Lorentz { .. } => Model::Lorentz,
            _ => Model::PoincareBall,
        };
        let kk = vec![k];
        let mut data = store.get(id).data.clone();
        for r in 0..nr {
            let span = r * nc..(r + 1) * nc;
            let mut b = Eager::new();
            let y = ops::project(&mut b, model, &kk, &data[span.clone()].to_vec());
            if model == Model::Lorentz {
                if let Some(m) = moments.get_mut(id.0) {
                    let pm = tangent_project(&y, &m[span.clone()], k);
                    m[span.clone()].copy_from_slice(&pm);
                }
            }
            data[span].copy_from_slice(&y);
        }
        store.get_mut(id).data = data;
    }
}

/// Burn-in followed by reduce-on-plateau.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub burn_in: usize,
    pub lr_burnin: f64,
    pub lr_main: f64,
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
    lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl LrSchedule {
    pub fn new(burn_in: usize, lr_burnin: f64, lr_main: f64, patience: usize) -> Self {
        Self {
            burn_in,
            lr_burnin,
            lr_main,
            patience,
            factor: 0.5,
            min_lr: 1e-6,
            lr: lr_main,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Learning rate in effect during `epoch`.
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.burn_in {
            self.lr_burnin
        } else {
            self.lr
        }
    }

    pub fn bad_epochs(&self) -> usize {
        self.bad_epochs
    }

    /// Records the validation metric for `epoch` and returns the rate in effect
    /// after the update. Burn-in epochs do not feed the plateau monitor.
    pub fn step(&mut self, epoch: usize, metric: f64) -> f64 {
        if epoch < self.burn_in {
            return self.lr_burnin;
        }
        match self.best {
            Some(b) if metric <= b => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.lr = (self.lr * self.factor).max(self.min_lr);
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
    improved: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            bad_epochs: 0,
            improved: false,
        }
    }

    pub fn update(&mut self, metric: f64) -> StopDecision {
        self.improved = self.best.is_none_or(|b| metric > b);
        if self.improved {
            self.best = Some(metric);
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    /// Whether the last update set a new best.
    pub fn improved(&self) -> bool {
        self.improved
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}
