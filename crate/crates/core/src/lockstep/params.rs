use serde::{Deserialize, Serialize};

use crate::Mode;

/// Tolerances below this tend to produce degenerate locksteps.
pub const RECOMMENDED_MIN_RHO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionParams {
    /// Minimum users in a reported lockstep.
    pub n: usize,
    /// Minimum products in a reported lockstep; also the cap on growth.
    pub m: usize,
    /// Fraction of the counterpart set a member must cover, in (0, 1].
    pub rho: f64,
    /// Half-width of the time window, seconds.
    pub delta_t: u64,
    pub kappa: u8,
    pub mode: Mode,
    pub n_seeds: usize,
    pub rng_seed: u64,
    pub initial_users_per_seed: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid detection parameters: {0}")]
pub struct ParamError(pub String);

impl DetectionParams {
    pub fn new(n: usize, m: usize, rho: f64, delta_t: u64, mode: Mode) -> Self {
        Self {
            n,
            m,
            rho,
            delta_t,
            kappa: mode.default_kappa(),
            mode,
            n_seeds: 1000,
            rng_seed: 0,
            initial_users_per_seed: 3,
        }
    }

    pub fn with_kappa(mut self, kappa: u8) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_seeds(mut self, n_seeds: usize) -> Self {
        self.n_seeds = n_seeds;
        self
    }

    pub fn with_rng_seed(mut self, rng_seed: u64) -> Self {
        self.rng_seed = rng_seed;
        self
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        let fail = |msg: &str| Err(ParamError(msg.to_owned()));
        if self.n == 0 {
            return fail("n must be at least 1");
        }
        if self.m == 0 {
            return fail("m must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return fail("rho must lie in (0, 1]");
        }
        if self.delta_t == 0 {
            return fail("delta_t must be positive");
        }
        if self.n_seeds == 0 {
            return fail("n_seeds must be at least 1");
        }
        if self.initial_users_per_seed == 0 {
            return fail("initial_users_per_seed must be at least 1");
        }
        Ok(())
    }

    /// Non-fatal advice about the parameter choice.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rho < RECOMMENDED_MIN_RHO {
            out.push(format!(
                "rho {} is below recommended {RECOMMENDED_MIN_RHO}; locksteps may degenerate",
                self.rho
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = DetectionParams::new(10, 5, 0.8, 100, Mode::Promotion);
        assert!(ok.validate().is_ok());
        assert!(ok.warnings().is_empty());
        for bad in [
            DetectionParams { n: 0, ..ok.clone() },
            DetectionParams { m: 0, ..ok.clone() },
            DetectionParams {
                rho: 0.0,
                ..ok.clone()
            },
            DetectionParams {
                rho: 1.5,
                ..ok.clone()
            },
            DetectionParams {
                rho: f64::NAN,
                ..ok.clone()
            },
            DetectionParams {
                delta_t: 0,
                ..ok.clone()
            },
            DetectionParams {
                n_seeds: 0,
                ..ok.clone()
            },
            DetectionParams {
                initial_users_per_seed: 0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        let low = DetectionParams { rho: 0.5, ..ok };
        assert!(low.validate().is_ok());
        assert_eq!(low.warnings().len(), 1);
    }
}
