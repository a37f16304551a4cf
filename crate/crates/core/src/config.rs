//! Training configuration with TOML serialization.
//!
//! Every field has a desk-scale default so a config file only states what
//! it changes. `full_profile` holds the production-scale settings.

use crate::decoder::{validate_key, FeatureMask};
use crate::error::TrainError;
use crate::optim::GroupRates;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub max_gaussians: usize,
    /// SSIM weight inside each photometric term.
    pub lambda_cover: f64,
    pub lambda_secret: f64,
    pub lambda_incorrect: f64,
    /// Weight of each term in the total loss; one secret weight per key.
    pub beta_cover: f64,
    pub beta_secret: Vec<f64>,
    pub beta_incorrect: f64,
    pub densify_interval: usize,
    pub densify_grad_threshold: f64,
    pub prune_opacity_threshold: f64,
    /// Densification stops here; 0 means half of `iterations`.
    pub densify_stop_iteration: usize,
    pub metrics_interval: usize,
    pub rates: GroupRates,
    /// The position rate decays exponentially to this value.
    pub position_lr_final: f64,
    pub decoder_lr: f64,
    pub secret_keys: Vec<String>,
    pub mask: FeatureMask,
    pub decoder_hidden: usize,
    pub decoder_key_dim: usize,
    pub sh_degree: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            iterations: 2000,
            max_gaussians: 4096,
            lambda_cover: 0.5,
            lambda_secret: 0.5,
            lambda_incorrect: 0.5,
            beta_cover: 0.5,
            beta_secret: Vec::new(),
            beta_incorrect: 0.01,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            prune_opacity_threshold: 0.005,
            densify_stop_iteration: 0,
            metrics_interval: 100,
            rates: GroupRates::default(),
            position_lr_final: 1.6e-6,
            decoder_lr: 1e-3,
            secret_keys: Vec::new(),
            mask: FeatureMask::ALL,
            decoder_hidden: 128,
            decoder_key_dim: 64,
            sh_degree: 3,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// Desk-scale defaults: small enough to train on one core.
    pub fn desk() -> Self {
        TrainingConfig::default()
    }

    /// Production-scale profile.
    pub fn full_profile() -> Self {
        TrainingConfig {
            iterations: 30_000,
            max_gaussians: 500_000,
            ..TrainingConfig::default()
        }
    }

    pub fn profile(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(TrainingConfig::desk()),
            "full" => Some(TrainingConfig::full_profile()),
            _ => None,
        }
    }

    /// Effective densification stop.
    pub fn densify_stop(&self) -> usize {
        if self.densify_stop_iteration == 0 {
            self.iterations / 2
        } else {
            self.densify_stop_iteration
        }
    }

    /// Per-secret weights: the configured list, or the 0.5 default repeated
    /// when the list was omitted.
    pub fn secret_betas(&self) -> Vec<f64> {
        if self.beta_secret.is_empty() {
            vec![0.5; self.secret_keys.len()]
        } else {
            self.beta_secret.clone()
        }
    }

    pub fn validate(&self, n_secret_scenes: usize) -> Result<(), TrainError> {
        let bad = |message: String| Err(TrainError::BadConfig { message });
        for (name, l) in [
            ("lambda_cover", self.lambda_cover),
            ("lambda_secret", self.lambda_secret),
            ("lambda_incorrect", self.lambda_incorrect),
        ] {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("{name} = {l} outside [0, 1]"));
            }
        }
        let betas = self.secret_betas();
        for (name, b) in [
            ("beta_cover", self.beta_cover),
            ("beta_incorrect", self.beta_incorrect),
        ]
        .into_iter()
        .chain(betas.iter().map(|b| ("beta_secret", *b)))
        {
            if b < 0.0 || !b.is_finite() {
                return bad(format!("{name} = {b} must be nonnegative"));
            }
        }
        if self.secret_keys.len() != n_secret_scenes {
            return Err(TrainError::BadKeys {
                message: format!(
                    "{} keys for {} secret scenes",
                    self.secret_keys.len(),
                    n_secret_scenes
                ),
            });
        }
        if betas.len() != self.secret_keys.len() {
            return bad(format!(
                "beta_secret has {} entries for {} keys",
                betas.len(),
                self.secret_keys.len()
            ));
        }
        for key in &self.secret_keys {
            validate_key(key).map_err(|e| TrainError::BadKeys {
                message: e.to_string(),
            })?;
        }
        for (a, key) in self.secret_keys.iter().enumerate() {
            if self.secret_keys[..a].contains(key) {
                return Err(TrainError::BadKeys {
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        if self.max_gaussians == 0 {
            return bad("max_gaussians must be positive".into());
        }
        if self.densify_interval == 0 || self.metrics_interval == 0 {
            return bad("intervals must be positive".into());
        }
        if self.densify_grad_threshold <= 0.0 {
            return bad("densify_grad_threshold must be positive".into());
        }
        if !(0.0..1.0).contains(&self.prune_opacity_threshold) {
            return bad("prune_opacity_threshold must lie in [0, 1)".into());
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return bad(format!("sh_degree {} above maximum", self.sh_degree));
        }
        if self.decoder_hidden == 0 || self.decoder_key_dim == 0 {
            return bad("decoder dimensions must be positive".into());
        }
        for (name, r) in [
            ("position", self.rates.position),
            ("sh", self.rates.sh),
            ("opacity", self.rates.opacity),
            ("scale", self.rates.scale),
            ("rotation", self.rates.rotation),
            ("decoder_lr", self.decoder_lr),
            ("position_lr_final", self.position_lr_final),
        ] {
            if r <= 0.0 || !r.is_finite() {
                return bad(format!("learning rate {name} = {r} must be positive"));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, TrainError> {
        toml::from_str(text).map_err(|e| TrainError::BadConfig {
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
