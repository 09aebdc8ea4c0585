use serde::{Deserialize, Serialize};

use super::params::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub kind: OptimizerKind,
    pub momentum: f64,
    /// Adam first- and second-moment decay rates and denominator offset.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            kind: OptimizerKind::Sgd,
            momentum: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            kind: OptimizerKind::Adam,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !((0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0)
        {
            return Err(Error::Config(
                "Adam betas must lie in [0, 1) and epsilon be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stateful optimizer. The momentum variant keeps one velocity per
/// parameter; Adam keeps bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Option<ParameterSet>,
    second: Option<ParameterSet>,
    steps: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: None,
            second: None,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step(&mut self, params: &ParameterSet, grads: &ParameterSet) -> Result<ParameterSet> {
        params.check_compatible(grads)?;
        let c = self.config;
        let lr = c.learning_rate;
        let mut next = params.clone();
        self.steps += 1;
        match c.kind {
            OptimizerKind::Sgd => {
                for (p, g) in next.entries_mut().iter_mut().zip(grads.entries()) {
                    for (w, &d) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::SgdMomentum => {
                let velocity = self.first.get_or_insert_with(|| grads.zeros_like());
                for ((p, g), v) in next
                    .entries_mut()
                    .iter_mut()
                    .zip(grads.entries())
                    .zip(velocity.entries_mut())
                {
                    for ((w, &d), vel) in p
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.tensor.data())
                        .zip(v.tensor.data_mut())
                    {
                        *vel = c.momentum * *vel + d;
                        *w -= lr * *vel;
                    }
                }
            }
            OptimizerKind::Adam => {
                let m = self.first.get_or_insert_with(|| grads.zeros_like());
                let v = self.second.get_or_insert_with(|| grads.zeros_like());
                let correct1 = 1.0 - c.beta1.powi(self.steps);
                let correct2 = 1.0 - c.beta2.powi(self.steps);
                let entries = next
                    .entries_mut()
                    .iter_mut()
                    .zip(grads.entries())
                    .zip(m.entries_mut())
                    .zip(v.entries_mut());
                for (((p, g), m), v) in entries {
                    let cells = p
                        .tensor
                        .data_mut()
                        .iter_mut()
                        .zip(g.tensor.data())
                        .zip(m.tensor.data_mut())
                        .zip(v.tensor.data_mut());
                    for (((w, &d), m), v) in cells {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * d;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * d * d;
                        *w -= lr * (*m / correct1) / ((*v / correct2).sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(next)
    }
}

/// One stateless update from a fresh optimizer (zero velocity).
pub fn optimizer_step(
    params: &ParameterSet,
    grads: &ParameterSet,
    config: &OptimizerConfig,
) -> Result<ParameterSet> {
    Optimizer::new(*config)?.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamRole;
    use crate::nn::tensor::Tensor;

    fn scalar(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push(0, ParamRole::Weight, Tensor::from_vec(vec![v]))
            .unwrap();
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p = scalar(1.25);
        assert_eq!(
            optimizer_step(&p, &scalar(0.0), &OptimizerConfig::default()).unwrap(),
            p
        );
    }

    #[test]
    fn hand_evaluated_update() {
        let next = optimizer_step(&scalar(1.0), &scalar(0.5), &OptimizerConfig::sgd(0.01)).unwrap();
        assert_eq!(next.entries()[0].tensor.data()[0], 0.995);
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            ..OptimizerConfig::sgd(0.01)
        };
        let mut opt = Optimizer::new(cfg).unwrap();
        let p1 = opt.step(&scalar(0.7), &scalar(0.3)).unwrap();
        let p2 = opt.step(&p1, &scalar(-1.1)).unwrap();
        let once = optimizer_step(&scalar(0.7), &scalar(0.3 - 1.1), &cfg).unwrap();
        let (a, b) = (
            p2.entries()[0].tensor.data()[0],
            once.entries()[0].tensor.data()[0],
        );
        assert!((a - b).abs() < 1e-15, "{a} vs {b}");
    }

    #[test]
    fn momentum_accumulates_velocity() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            momentum: 0.5,
            ..OptimizerConfig::sgd(0.1)
        };
        let mut opt = Optimizer::new(cfg).unwrap();
        let p1 = opt.step(&scalar(0.0), &scalar(1.0)).unwrap();
        let p2 = opt.step(&p1, &scalar(1.0)).unwrap();
        // v1 = 1, v2 = 1.5
        assert!((p2.entries()[0].tensor.data()[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01)).unwrap();
        let p1 = opt.step(&scalar(1.0), &scalar(250.0)).unwrap();
        assert!((p1.entries()[0].tensor.data()[0] - 0.99).abs() < 1e-10);
        let p2 = opt.step(&p1, &scalar(0.0)).unwrap();
        assert!(p2.entries()[0].tensor.data()[0] < 0.99);
    }

    #[test]
    fn ordering_mismatch_is_structural() {
        let mut other = ParameterSet::new();
        other
            .push(1, ParamRole::Weight, Tensor::from_vec(vec![0.0]))
            .unwrap();
        assert!(matches!(
            optimizer_step(&scalar(1.0), &other, &OptimizerConfig::default()),
            Err(Error::Structural(_))
        ));
        assert!(OptimizerConfig::sgd(0.0).validate().is_err());
    }
}
