use std::fmt;
use std::str::FromStr;

use super::model::Params;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::invalid(format!("unknown optimizer `{other}` (expected sgd or adam)"))),
        }
    }
}

/// Optimizer hyperparameters. `momentum` applies to SGD; `beta1`, `beta2`
/// and `eps` to Adam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    /// Adam, learning rate 0.005 (tuned for the 60-epoch desk task).
    pub fn adam() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 5e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// SGD with momentum 0.9, learning rate 0.1.
    pub fn sgd() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 0.1,
            ..Self::adam()
        }
    }

    pub fn defaults_for(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(),
            OptimizerKind::Adam => Self::adam(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer settings: {self:?}")))
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

/// Optimizer with its moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    pub config: OptimizerConfig,
    steps: u64,
    first: Option<Params<T>>,
    second: Option<Params<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            steps: 0,
            first: None,
            second: None,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
        let names = grads.tensor_names();
        for (name, t) in names.iter().zip(grads.tensors()) {
            if let Some(i) = t.iter().position(|x| !x.is_finite()) {
                return Err(Error::state(format!("non-finite gradient in {name}[{i}]: {}", t[i])));
            }
        }
        {
            let shapes = |p: &Params<T>| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
            if shapes(params) != shapes(grads) {
                return Err(Error::invalid("gradient shapes do not match parameters"));
            }
        }
        let cfg = self.config;
        let lr = T::of(cfg.lr);
        self.steps += 1;
        match cfg.kind {
            OptimizerKind::Sgd => {
                let mu = T::of(cfg.momentum);
                let velocity = self.first.get_or_insert_with(|| grads.zeros_like());
                for ((p, v), g) in params.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(grads.tensors()) {
                    for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = mu * *v + g;
                        *p = *p - lr * *v;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
                let eps = T::of(cfg.eps);
                let t = self.steps as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                let m = self.first.get_or_insert_with(|| grads.zeros_like());
                let v = self.second.get_or_insert_with(|| grads.zeros_like());
                for (((p, m), v), g) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                    .zip(grads.tensors())
                {
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        params.bump_generation();
        if !params.is_finite() {
            return Err(Error::state("parameters became non-finite after update"));
        }
        Ok(())
    }
}

/// One optimizer update of `params` with `grads`.
pub fn optimizer_step<T: Scalar>(optimizer: &mut Optimizer<T>, params: &mut Params<T>, grads: &Params<T>) -> Result<()> {
    optimizer.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::model::ModelSpec;

    /// A model with exactly one head scalar weight and one bias, both used as
    /// free parameters.
    fn scalar_params(p: f64) -> Params<f64> {
        let model = ModelSpec {
            input_dim: 1,
            layers: vec![],
            head: vec![2],
        };
        let mut params = Params::init(&model, 0).unwrap();
        for t in params.tensors_mut() {
            t.fill(0.0);
        }
        params.tensors_mut()[0][0] = p;
        params
    }

    fn first(p: &Params<f64>) -> f64 {
        p.tensors()[0][0]
    }

    fn grad_of(p: &Params<f64>, g: f64) -> Params<f64> {
        let mut out = p.zeros_like();
        out.tensors_mut()[0][0] = g;
        out
    }

    #[test]
    fn zero_lr_keeps_params() {
        for cfg in [OptimizerConfig::sgd(), OptimizerConfig::adam()] {
            let mut opt = Optimizer::new(OptimizerConfig { lr: 0.0, ..cfg });
            let mut p = scalar_params(1.0);
            let before = p.clone();
            let g = grad_of(&p, 3.0);
            opt.step(&mut p, &g).unwrap();
            assert_eq!(p.tensors(), before.tensors());
        }
    }

    #[test]
    fn plain_sgd_arithmetic() {
        let mut opt = Optimizer::new(OptimizerConfig {
            momentum: 0.0,
            lr: 0.1,
            ..OptimizerConfig::sgd()
        });
        let mut p = scalar_params(1.0);
        let g = grad_of(&p, 2.0);
        opt.step(&mut p, &g).unwrap();
        assert!((first(&p) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_contracts_quadratic_bowl() {
        let mut opt = Optimizer::new(OptimizerConfig {
            momentum: 0.0,
            lr: 0.1,
            ..OptimizerConfig::sgd()
        });
        let mut p = scalar_params(1.0);
        for _ in 0..100 {
            let g = grad_of(&p, 2.0 * first(&p));
            opt.step(&mut p, &g).unwrap();
        }
        // (1 − 2·0.1)^100 ≈ 2.04e-10
        assert!(first(&p).abs() <= 1e-9);
        assert!((first(&p) - 0.8f64.powi(100)).abs() < 1e-20);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerConfig::adam());
        let mut p = scalar_params(1.0);
        let g = grad_of(&p, 5.0);
        opt.step(&mut p, &g).unwrap();
        assert!((first(&p) - (1.0 - 5e-3)).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = Optimizer::new(OptimizerConfig::adam());
        let mut p = scalar_params(1.0);
        let g = grad_of(&p, f64::NAN);
        let err = opt.step(&mut p, &g).unwrap_err();
        assert!(matches!(err, Error::InvalidState(ref m) if m.contains("head0.weight[0]")));
    }

    #[test]
    fn optimizer_defaults() {
        let a = OptimizerConfig::default();
        assert_eq!((a.kind, a.lr), (OptimizerKind::Adam, 0.005));
        let s = OptimizerConfig::sgd();
        assert_eq!((s.lr, s.momentum), (0.1, 0.9));
    }
}
