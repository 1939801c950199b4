//! Engine configuration, loadable from TOML. Every key is optional; missing
//! keys take the defaults below. See `docs/config.md` for the key set.

use super::HarnessError;
use crate::data::{CurriculumStage, MixWeights, Source};
use crate::grpo::GrpoConfig;
use crate::policy::{RemoteConfig, SamplingParams, ToyConfig};
use crate::prompt::TEMPLATE_VERSION;
use crate::rewards::RewardConfig;
use crate::rollout::RolloutConfig;
use crate::videorep::ViewConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Optimization steps drawn from the first stage before switching.
    pub stage1_steps: usize,
    /// Sources admitted in the first stage (labeled samples only).
    pub stage1_sources: Vec<Source>,
    pub skip_stage1: bool,
    pub mix: MixWeights,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            stage1_steps: 50,
            stage1_sources: vec![Source::NextGqa],
            skip_stage1: false,
            mix: MixWeights::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn stage1(&self) -> CurriculumStage {
        CurriculumStage::stage1_from(self.stage1_sources.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub step_size: f64,
    pub fd_eps: f64,
    /// Gradients longer than this are rescaled before each step.
    pub max_grad_norm: f64,
    /// Fresh group rollouts allowed per zero-variance group.
    pub resample_budget: usize,
    /// Stop after this many consecutive steps without any informative group.
    pub max_degenerate_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 1.0,
            fd_eps: 1e-4,
            max_grad_norm: 5.0,
            resample_budget: 2,
            max_degenerate_batches: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_duration_s: f64,
    pub min_label_coverage: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_duration_s: 20.0,
            min_label_coverage: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub max_turns: u32,
    pub views: ViewConfig,
    pub grpo: GrpoConfig,
    pub rewards: RewardConfig,
    pub curriculum: CurriculumConfig,
    /// Rollout sampling for training and for evaluation retries.
    pub sampling: SamplingParams,
    /// First-attempt sampling during evaluation.
    pub eval_sampling: SamplingParams,
    /// Extra evaluation attempts for trajectories without a final answer.
    pub eval_retries: u32,
    /// Rollout worker threads; 0 uses one per core.
    pub workers: usize,
    pub seed: u64,
    pub template_version: String,
    pub train: TrainConfig,
    pub toy: ToyConfig,
    pub remote: RemoteConfig,
    pub filters: FilterConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_turns: 3,
            views: ViewConfig::default(),
            grpo: GrpoConfig::default(),
            rewards: RewardConfig::default(),
            curriculum: CurriculumConfig::default(),
            sampling: SamplingParams::training(),
            eval_sampling: SamplingParams::greedy(),
            eval_retries: 3,
            workers: 0,
            seed: 0,
            template_version: TEMPLATE_VERSION.into(),
            train: TrainConfig::default(),
            toy: ToyConfig::default(),
            remote: RemoteConfig::default(),
            filters: FilterConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            max_turns: self.max_turns,
            views: self.views,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.rollout().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.grpo.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.rewards.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.sampling.validate().map_err(HarnessError::Config)?;
        self.eval_sampling.validate().map_err(HarnessError::Config)?;
        if self.template_version != TEMPLATE_VERSION {
            return bad(format!(
                "template version {} is not supported (this build ships {TEMPLATE_VERSION})",
                self.template_version
            ));
        }
        if !(self.train.step_size.is_finite() && self.train.fd_eps > 0.0 && self.train.max_grad_norm > 0.0) {
            return bad("train.step_size must be finite, train.fd_eps and train.max_grad_norm > 0".into());
        }
        if self.toy.coarse_frames != self.views.coarse_frames {
            return bad(format!(
                "toy.coarse_frames ({}) must equal views.coarse_frames ({})",
                self.toy.coarse_frames, self.views.coarse_frames
            ));
        }
        self.toy.validate().map_err(HarnessError::Config)?;
        Ok(())
    }
}
