use serde::{Deserialize, Serialize};

use crate::conditioner::FeatureMap;
use crate::env::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::inner::{BatchOptions, InnerMode};
use crate::loss::Loss;
use crate::meta::MetaConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Fixed identity representation.
    Itl,
    /// One learned representation shared by all tasks.
    Unconditional,
    /// Learned map from side information to a representation.
    Conditional,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Itl, Method::Unconditional, Method::Conditional];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Itl => "itl",
            Method::Unconditional => "unconditional",
            Method::Conditional => "conditional",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "itl" => Ok(Method::Itl),
            "unconditional" => Ok(Method::Unconditional),
            "conditional" => Ok(Method::Conditional),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// How the unconditional method is trained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnconditionalPath {
    /// Plain projected SGD over a single matrix.
    #[default]
    Dedicated,
    /// Conditional meta-SGD with the constant map and `H` frozen at zero.
    Meta,
}

/// Log-spaced step-size candidates `10^lo, …, 10^hi`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaGrid {
    pub count: usize,
    pub log10_min: f64,
    pub log10_max: f64,
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid {
            count: 14,
            log10_min: -5.0,
            log10_max: 5.0,
        }
    }
}

impl GammaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("gamma grid needs at least one value".into()));
        }
        if !(self.log10_min <= self.log10_max) {
            return Err(Error::InvalidArgument("gamma grid range is empty".into()));
        }
        if self.count == 1 {
            return Ok(vec![10f64.powf(self.log10_min)]);
        }
        let step = (self.log10_max - self.log10_min) / (self.count - 1) as f64;
        Ok((0..self.count)
            .map(|i| 10f64.powf(self.log10_min + step * i as f64))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub method: Method,
    /// `mean_embedding`, `ridge`, `trig` or `constant`; defaults by environment kind.
    pub feature_map: Option<String>,
    pub inner_mode: InnerMode,
    pub loss: Loss,
    pub batch: BatchOptions,
    pub gamma_grid: GammaGrid,
    /// Fixed step size; skips validation when set.
    pub gamma: Option<f64>,
    /// Task counts at which the running average is evaluated.
    pub checkpoints: Option<Vec<usize>>,
    pub repetitions: usize,
    /// Passes over the meta-training tasks.
    pub epochs: usize,
    /// `C₀ = c0_scale · I`; `H₀ = 0`.
    pub c0_scale: f64,
    pub unconditional_path: UnconditionalPath,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_env(EnvConfig::synthetic(2))
    }
}

const CHECKPOINT_FRACTIONS: [f64; 8] = [0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0];

impl RunConfig {
    pub fn for_env(env: EnvConfig) -> Self {
        RunConfig {
            env,
            method: Method::Conditional,
            feature_map: None,
            inner_mode: InnerMode::LastIterate,
            loss: Loss::Absolute,
            batch: BatchOptions::default(),
            gamma_grid: GammaGrid::default(),
            gamma: None,
            checkpoints: None,
            repetitions: 5,
            epochs: 1,
            c0_scale: 1.0,
            unconditional_path: UnconditionalPath::Dedicated,
        }
    }

    /// Number of meta-SGD steps in a full run.
    pub fn total_steps(&self) -> usize {
        self.env.t_tr * self.epochs
    }

    /// Feature map of the conditional method.
    pub fn conditional_map(&self) -> Result<FeatureMap> {
        let default = match self.env.kind {
            EnvKind::Synthetic | EnvKind::Movielens => "mean_embedding",
            EnvKind::Lenk => "ridge",
            EnvKind::Jester => "trig",
        };
        let name = self.feature_map.as_deref().unwrap_or(default);
        FeatureMap::from_name(name, self.env.rating_max, self.env.rating_min)
    }

    pub fn checkpoint_list(&self) -> Vec<usize> {
        match &self.checkpoints {
            Some(c) => c.clone(),
            None => {
                let total = self.total_steps() as f64;
                let mut v: Vec<usize> = CHECKPOINT_FRACTIONS.iter().map(|f| (f * total).round() as usize).collect();
                v.dedup();
                v
            }
        }
    }

    pub fn meta_config(&self, gamma: f64) -> MetaConfig {
        MetaConfig {
            gamma,
            loss: self.loss,
            mode: self.inner_mode,
            batch: self.batch,
            freeze_h: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.gamma_grid.values()?;
        if let Some(g) = self.gamma {
            if !(g >= 0.0) || !g.is_finite() {
                return Err(Error::InvalidArgument(format!("gamma must be finite and non-negative, got {g}")));
            }
        }
        if self.repetitions == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("repetitions and epochs must be positive".into()));
        }
        if !(self.c0_scale >= 0.0) || !self.c0_scale.is_finite() {
            return Err(Error::InvalidArgument("c0_scale must be finite and non-negative".into()));
        }
        let cps = self.checkpoint_list();
        if cps.is_empty() {
            return Err(Error::InvalidArgument("at least one checkpoint is required".into()));
        }
        if cps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("checkpoints must be strictly ascending".into()));
        }
        if *cps.last().unwrap() > self.total_steps() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint {} exceeds the {} meta-training steps",
                cps.last().unwrap(),
                self.total_steps()
            )));
        }
        self.conditional_map()?;
        Ok(())
    }
}
