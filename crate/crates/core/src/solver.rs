//! Gradient application: plain SGD and RMSProp.

use crate::backend::Real;
use crate::error::{invalid, Result};
use crate::net::Net;
use crate::tensor::Blob;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sgd,
    RmsProp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub learning_rate: Real,
    pub method: Method,
    pub rms_decay: Real,
    pub epsilon: Real,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            learning_rate: 1e-3,
            method: Method::RmsProp,
            rms_decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn sgd(learning_rate: Real) -> Self {
        SolverConfig {
            learning_rate,
            method: Method::Sgd,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return invalid(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return invalid(format!("rms_decay must lie in [0, 1), got {}", self.rms_decay));
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Applies accumulated parameter diffs to a net's weights.
///
/// RMSProp keeps one squared-gradient cache per parameter blob, created on
/// the first update.
pub struct Solver {
    cfg: SolverConfig,
    caches: Vec<Blob>,
}

impl Solver {
    pub fn new(cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Solver {
            cfg,
            caches: Vec::new(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// Updates every parameter from its diff, then zeroes the diffs.
    ///
    /// SGD: w ← w − lr·diff.
    /// RMSProp: cache ← decay·cache + (1−decay)·diff², w ← w − lr·diff/(√cache + ε).
    pub fn apply_update(&mut self, net: &Net) -> Result<()> {
        let params: Vec<&Blob> = net.params().collect();
        let be = net.backend();
        match self.cfg.method {
            Method::Sgd => {
                for p in &params {
                    be.axpy(p.count(), -self.cfg.learning_rate, p.diff(), p.data())?;
                }
            }
            Method::RmsProp => {
                if self.caches.is_empty() {
                    for p in &params {
                        self.caches
                            .push(Blob::new(be, format!("{}.rms_cache", p.name()), p.shape())?);
                    }
                }
                if self.caches.len() != params.len()
                    || self.caches.iter().zip(&params).any(|(c, p)| c.shape() != p.shape())
                {
                    return invalid("solver state does not match this net's parameters");
                }
                for (p, cache) in params.iter().zip(&self.caches) {
                    be.rmsprop_update(
                        p.count(),
                        self.cfg.learning_rate,
                        self.cfg.rms_decay,
                        self.cfg.epsilon,
                        p.diff(),
                        cache.data(),
                        p.data(),
                    )?;
                }
            }
        }
        net.clear_param_diffs()
    }
}

/// True iff every parameter diff element is exactly zero.
pub fn diffs_are_zeroed(net: &Net) -> Result<bool> {
    for p in net.params() {
        if net.backend().amax(p.count(), p.diff())? != 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}
