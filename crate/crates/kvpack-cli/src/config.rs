//! Run configuration: model shape, seed, and default dialect, resolved from
//! defaults, an optional flat `key = value` config file, the `KVPACK_SEED`
//! environment variable, and command-line flags, in that order.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kvpack::model::TemplateSet;
use kvpack::{Model, ModelConfig};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub dialect: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            dialect: "chatml".to_string(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`", idx + 1))?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = || -> Result<usize> {
                value
                    .parse()
                    .with_context(|| format!("config line {}: bad number `{value}`", idx + 1))
            };
            match key {
                "n_layers" => cfg.model.n_layers = parse_usize()?,
                "n_heads" => cfg.model.n_heads = parse_usize()?,
                "d_model" => cfg.model.d_model = parse_usize()?,
                "d_head" => cfg.model.d_head = parse_usize()?,
                "vocab_size" => cfg.model.vocab_size = parse_usize()?,
                "max_position" => cfg.model.max_position = parse_usize()?,
                "rope_theta" => {
                    cfg.model.rope_theta = value
                        .parse()
                        .with_context(|| format!("config line {}: bad float", idx + 1))?
                }
                "seed" => {
                    cfg.model.weight_seed = value
                        .parse()
                        .with_context(|| format!("config line {}: bad seed", idx + 1))?
                }
                "template" => cfg.dialect = value.to_string(),
                other => bail!("config line {}: unknown key `{other}`", idx + 1),
            }
        }
        Ok(cfg)
    }

    /// Apply overrides: `KVPACK_SEED` beats the config file, explicit flags
    /// beat the environment.
    pub fn with_overrides(
        mut self,
        seed_flag: Option<u64>,
        template_flag: Option<&str>,
    ) -> Result<Self> {
        if let Ok(env_seed) = std::env::var("KVPACK_SEED") {
            self.model.weight_seed = env_seed
                .parse()
                .with_context(|| format!("KVPACK_SEED is not a number: `{env_seed}`"))?;
        }
        if let Some(seed) = seed_flag {
            self.model.weight_seed = seed;
        }
        if let Some(t) = template_flag {
            self.dialect = t.to_string();
        }
        Ok(self)
    }

    /// Validate against the registry and construct the model.
    pub fn build_model(&self, templates: &TemplateSet) -> Result<Model> {
        self.model
            .validate_with_specials(templates.specials().len())
            .context("invalid model configuration")?;
        templates
            .get(&self.dialect)
            .map_err(|e| anyhow!("{e}"))
            .context("default template dialect")?;
        Model::new(self.model.clone()).context("constructing model")
    }
}
