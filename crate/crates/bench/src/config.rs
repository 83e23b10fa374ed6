//! Harness configuration, read from TOML. Every field has a default, so an
//! empty file is a valid configuration.
//!
//! ```toml
//! benchmark = "gaia_like"
//! world_seed = 7
//! t_max = 10
//! parallelism = 4
//! validation_size = 30
//! meter_orchestrator_tokens = true
//!
//! [prices."claude-3-7-sonnet-latest"]
//! input_per_1k = "0.003"
//! output_per_1k = "0.015"
//!
//! [planner]
//! k = 3
//! n_rollouts = 5
//!
//! [world]
//! p_hit = 0.35
//!
//! [policy]
//! finish = 3.0
//!
//! [selfplay]
//! rounds = 5
//! budget_per_task = "1"
//!
//! [chat]
//! policy_model = "claude-3-7-sonnet-latest"
//! judge = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use weaver_core::agents::{RolePrompts, WorldParams};
use weaver_core::collab::{Benchmark, SONNET};
use weaver_core::orchestrator::RuleParams;
use weaver_core::planner::PlannerParams;
use weaver_core::reflection::MinerParams;
use weaver_core::{Dollars, PriceSheet};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub benchmark: Benchmark,
    pub prices: PriceSheet,
    pub planner: PlannerParams,
    pub world: WorldParams,
    pub world_seed: u64,
    pub policy: RuleParams,
    pub prompts: RolePrompts,
    pub chat: ChatSettings,
    pub selfplay: SelfPlaySettings,
    pub meter_orchestrator_tokens: bool,
    pub t_max: usize,
    /// Leading tasks reserved for self-play and never scored.
    pub validation_size: usize,
    /// Worker threads for sweep cells.
    pub parallelism: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            benchmark: Benchmark::GaiaLike,
            prices: PriceSheet::reference(),
            planner: PlannerParams::default(),
            world: WorldParams::default(),
            world_seed: 0,
            policy: RuleParams::default(),
            prompts: RolePrompts::default(),
            chat: ChatSettings::default(),
            selfplay: SelfPlaySettings::default(),
            meter_orchestrator_tokens: true,
            t_max: 10,
            validation_size: 30,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatSettings {
    /// Model behind the orchestrator and the speculator.
    pub policy_model: String,
    pub max_tokens: u32,
    /// Ask a model judge about answers that fail exact match.
    pub judge: bool,
    pub judge_model: String,
}

impl Default for ChatSettings {
    fn default() -> Self {
        ChatSettings {
            policy_model: SONNET.to_string(),
            max_tokens: 1024,
            judge: false,
            judge_model: SONNET.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfPlaySettings {
    pub rounds: u32,
    pub budget_per_task: Dollars,
    pub miner: MinerParams,
}

impl Default for SelfPlaySettings {
    fn default() -> Self {
        SelfPlaySettings {
            rounds: 5,
            budget_per_task: Dollars::from_cents(100),
            miner: MinerParams::default(),
        }
    }
}

impl BenchConfig {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: BenchConfig =
            toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.prices
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.planner
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if self.t_max == 0 || self.parallelism == 0 || self.selfplay.rounds == 0 {
            return Err(BenchError::Config(
                "t_max, parallelism and selfplay.rounds must be ≥ 1".into(),
            ));
        }
        if !self.selfplay.budget_per_task.is_positive() {
            return Err(BenchError::Config(
                "selfplay.budget_per_task must be > 0".into(),
            ));
        }
        Ok(())
    }
}
