//! Local predictors on (possibly warped) inputs.

pub mod knn;
pub mod lagp;
pub mod vecchia;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use knn::{knn_predict, knn_predict_batch, loo_knn_mse, NeighborIndex};
pub use lagp::{local_gp_predict, local_gp_predict_batch, LocalGpTrace};
pub use vecchia::{vecchia_fit, vecchia_log_likelihood, vecchia_predict, vecchia_predict_batch, Ordering, VecchiaModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalModel {
    Knn,
    LocalGp,
    Vecchia,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub model: LocalModel,
    /// Neighbors averaged by k-NN.
    pub k: usize,
    /// Nearest neighbors seeding a local GP design.
    pub kappa: usize,
    /// Final local GP design size.
    pub n_max: usize,
    /// Vecchia conditioning-set size.
    pub cond_size: usize,
    pub ordering: Ordering,
    /// Local GP search pool is `candidate_pool * n_max` nearest neighbors.
    pub candidate_pool: usize,
    pub seed: u64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            model: LocalModel::Knn,
            k: 10,
            kappa: 6,
            n_max: 50,
            cond_size: 30,
            ordering: Ordering::Maxmin,
            candidate_pool: 10,
            seed: 0,
        }
    }
}

impl LocalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.kappa == 0 {
            return Err(Error::contract("neighbor counts must be at least 1"));
        }
        if self.n_max < self.kappa {
            return Err(Error::contract(format!("n_max = {} is below kappa = {}", self.n_max, self.kappa)));
        }
        if self.cond_size == 0 {
            return Err(Error::contract("conditioning-set size must be at least 1"));
        }
        if self.candidate_pool == 0 {
            return Err(Error::contract("candidate pool multiplier must be at least 1"));
        }
        Ok(())
    }
}
