//! Task environments: the synthetic cluster generator, tabular rating data
//! and meta-level splitting.

mod split;
mod synthetic;
mod tabular;

use std::path::PathBuf;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

pub use split::{split_meta, MetaSplit};
pub use synthetic::{gen_synthetic, SyntheticEnvironment};
pub use tabular::{generate_lenk_like, load_tabular, load_tabular_str, TabularOptions};

/// One task with its within-task split. The side information is the
/// training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    /// Task index (synthetic) or user id (tabular).
    pub id: u64,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Cluster index for synthetic tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    /// Ground-truth weights for synthetic tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

impl TaskInstance {
    pub fn side_info(&self) -> &LabeledDataset {
        &self.train
    }

    pub fn d(&self) -> usize {
        self.train.d()
    }

    pub fn target_vector(&self) -> Option<DVector<f64>> {
        self.target.as_ref().map(|t| DVector::from_column_slice(t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Synthetic,
    Lenk,
    Movielens,
    Jester,
}

impl EnvKind {
    pub fn name(&self) -> &'static str {
        match self {
            EnvKind::Synthetic => "synthetic",
            EnvKind::Lenk => "lenk",
            EnvKind::Movielens => "movielens",
            EnvKind::Jester => "jester",
        }
    }
}

/// Environment description. Synthetic fields are ignored for tabular kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub d: usize,
    pub clusters: usize,
    pub subspace_dim: usize,
    pub noise_sd: f64,
    pub t_tr: usize,
    pub t_va: usize,
    pub t_te: usize,
    pub n_tr: usize,
    pub n_te: usize,
    pub seed: u64,
    pub rating_max: f64,
    pub rating_min: f64,
    /// CSV file for tabular kinds.
    pub data_path: Option<PathBuf>,
    /// Items kept for recommendation data.
    pub top_items: usize,
    /// Minimum ratings per user for recommendation data.
    pub min_ratings: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::synthetic(2)
    }
}

impl EnvConfig {
    pub fn synthetic(clusters: usize) -> Self {
        EnvConfig {
            kind: EnvKind::Synthetic,
            d: 20,
            clusters,
            subspace_dim: 2,
            noise_sd: 0.1,
            t_tr: 500,
            t_va: 300,
            t_te: 100,
            n_tr: 40,
            n_te: 40,
            seed: 0,
            rating_max: 10.0,
            rating_min: -10.0,
            data_path: None,
            top_items: 20,
            min_ratings: 5,
        }
    }

    fn tabular(kind: EnvKind, d: usize, t: (usize, usize, usize), n: (usize, usize), rating: (f64, f64)) -> Self {
        EnvConfig {
            kind,
            d,
            t_tr: t.0,
            t_va: t.1,
            t_te: t.2,
            n_tr: n.0,
            n_te: n.1,
            rating_max: rating.0,
            rating_min: rating.1,
            ..EnvConfig::synthetic(1)
        }
    }

    pub fn lenk() -> Self {
        Self::tabular(EnvKind::Lenk, 13, (100, 40, 30), (16, 4), (10.0, 0.0))
    }

    pub fn movielens() -> Self {
        Self::tabular(EnvKind::Movielens, 20, (200, 100, 100), (15, 5), (5.0, 1.0))
    }

    pub fn jester() -> Self {
        Self::tabular(EnvKind::Jester, 20, (250, 100, 100), (15, 5), (10.0, -10.0))
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Synthetic => Self::synthetic(2),
            EnvKind::Lenk => Self::lenk(),
            EnvKind::Movielens => Self::movielens(),
            EnvKind::Jester => Self::jester(),
        }
    }

    pub fn total_tasks(&self) -> usize {
        self.t_tr + self.t_va + self.t_te
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("t_tr", self.t_tr),
            ("t_va", self.t_va),
            ("t_te", self.t_te),
            ("n_tr", self.n_tr),
            ("n_te", self.n_te),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.kind == EnvKind::Synthetic {
            if self.clusters == 0 || self.subspace_dim == 0 || self.subspace_dim > self.d {
                return Err(Error::Infeasible(format!(
                    "{} clusters of rank {} in dimension {}",
                    self.clusters, self.subspace_dim, self.d
                )));
            }
            if !(self.noise_sd >= 0.0) {
                return Err(Error::InvalidArgument("noise_sd must be non-negative".into()));
            }
        } else if self.data_path.is_none() {
            return Err(Error::InvalidArgument(format!("{} environment needs a data path", self.kind.name())));
        }
        if !(self.rating_max > self.rating_min) {
            return Err(Error::InvalidArgument("rating_max must exceed rating_min".into()));
        }
        Ok(())
    }

    pub fn tabular_options(&self, seed: u64) -> TabularOptions {
        TabularOptions {
            n_tr: self.n_tr,
            n_te: self.n_te,
            seed,
            top_items: self.top_items,
            min_ratings: self.min_ratings,
        }
    }
}

/// Builds the environment for one repetition and splits it into
/// meta-train/validation/test tasks.
pub fn build_environment(cfg: &EnvConfig, seed: u64) -> Result<MetaSplit> {
    cfg.validate()?;
    let tasks = match cfg.kind {
        EnvKind::Synthetic => {
            let mut c = cfg.clone();
            c.seed = seed;
            gen_synthetic(&c)?.tasks
        }
        kind => {
            let path = cfg.data_path.as_ref().expect("validated");
            let tasks = load_tabular(path, kind, &cfg.tabular_options(seed))?;
            if let Some(t) = tasks.first() {
                if t.d() != cfg.d {
                    log::info!("{} data has d = {} (config said {})", kind.name(), t.d(), cfg.d);
                }
            }
            tasks
        }
    };
    split_meta(tasks, (cfg.t_tr, cfg.t_va, cfg.t_te), seed)
}
