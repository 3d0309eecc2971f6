use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::latent::GmmDraw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorFamily {
    /// No latent variable (HRED).
    None,
    Unimodal,
    Gmm,
    Lgm,
}

impl std::str::FromStr for PriorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "unimodal" => Ok(Self::Unimodal),
            "gmm" => Ok(Self::Gmm),
            "lgm" => Ok(Self::Lgm),
            other => Err(Error::Config(format!("unknown prior family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: PriorFamily,
    #[serde(rename = "K")]
    pub k: usize,
}

impl PriorSpec {
    pub const NONE: PriorSpec = PriorSpec { family: PriorFamily::None, k: 0 };
    pub const UNIMODAL: PriorSpec = PriorSpec { family: PriorFamily::Unimodal, k: 1 };

    pub fn gmm(k: usize) -> Self {
        Self { family: PriorFamily::Gmm, k }
    }

    pub fn lgm(k: usize) -> Self {
        Self { family: PriorFamily::Lgm, k }
    }

    pub fn is_variational(&self) -> bool {
        self.family != PriorFamily::None
    }

    /// Number of prior components (0 for HRED).
    pub fn components(&self) -> usize {
        match self.family {
            PriorFamily::None => 0,
            PriorFamily::Unimodal => 1,
            _ => self.k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.family {
            PriorFamily::Gmm | PriorFamily::Lgm if self.k == 0 => {
                Err(Error::Config("mixture priors need K >= 1".into()))
            }
            PriorFamily::Unimodal if self.k > 1 => Err(Error::Config("unimodal prior has K = 1".into())),
            _ => Ok(()),
        }
    }
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self::NONE
    }
}

/// Architecture hyper-parameters. Keys in config files use these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub latent_dim: usize,
    pub floor_embedding_dim: usize,
    pub embedding_dim: usize,
    pub prior: PriorSpec,
    pub vocab_size: usize,
    pub dropout: f64,
    pub max_decode_len: usize,
    /// Uniform init range for weights; biases start at zero.
    pub init_range: f64,
    /// Lower bound added after the softplus that makes stddevs positive.
    pub stddev_floor: f64,
    pub gmm_draw: GmmDraw,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_size: 500,
            num_layers: 1,
            latent_dim: 200,
            floor_embedding_dim: 30,
            embedding_dim: 500,
            prior: PriorSpec::NONE,
            vocab_size: 0,
            dropout: 0.2,
            max_decode_len: 40,
            init_range: 0.08,
            stddev_floor: 1e-5,
            gmm_draw: GmmDraw::Hard,
        }
    }
}

impl ModelConfig {
    pub fn hred(vocab_size: usize) -> Self {
        Self { vocab_size, ..Self::default() }
    }

    /// Two layers of 1000 units.
    pub fn hred_l(vocab_size: usize) -> Self {
        Self { hidden_size: 1000, num_layers: 2, ..Self::hred(vocab_size) }
    }

    /// Two layers of 2000 units.
    pub fn hred_xl(vocab_size: usize) -> Self {
        Self { hidden_size: 2000, num_layers: 2, ..Self::hred(vocab_size) }
    }

    pub fn vhred(vocab_size: usize) -> Self {
        Self { prior: PriorSpec::UNIMODAL, ..Self::hred(vocab_size) }
    }

    pub fn vhred_gmm(vocab_size: usize, k: usize) -> Self {
        Self { prior: PriorSpec::gmm(k), ..Self::hred(vocab_size) }
    }

    pub fn vhred_lgm(vocab_size: usize, k: usize) -> Self {
        Self { prior: PriorSpec::lgm(k), ..Self::hred(vocab_size) }
    }

    pub fn with_prior(mut self, prior: PriorSpec) -> Self {
        self.prior = prior;
        self
    }

    /// Shrinks every width at once; handy for desk-scale experiments.
    pub fn with_sizes(mut self, hidden: usize, embedding: usize, latent: usize, floor: usize) -> Self {
        self.hidden_size = hidden;
        self.embedding_dim = embedding;
        self.latent_dim = latent;
        self.floor_embedding_dim = floor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("latent_dim", self.latent_dim),
            ("floor_embedding_dim", self.floor_embedding_dim),
            ("embedding_dim", self.embedding_dim),
            ("vocab_size", self.vocab_size),
            ("max_decode_len", self.max_decode_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        if !(self.stddev_floor > 0.0) {
            return Err(Error::Config("stddev_floor must be positive".into()));
        }
        self.prior.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = ModelConfig::hred(100);
        assert_eq!((c.hidden_size, c.num_layers, c.latent_dim, c.floor_embedding_dim), (500, 1, 200, 30));
        assert_eq!(c.dropout, 0.2);
        let l = ModelConfig::hred_l(100);
        assert_eq!((l.hidden_size, l.num_layers), (1000, 2));
        let xl = ModelConfig::hred_xl(100);
        assert_eq!((xl.hidden_size, xl.num_layers), (2000, 2));
    }

    #[test]
    fn config_keys_round_trip() {
        let c = ModelConfig::vhred_lgm(50, 20);
        let text = toml::to_string(&c).unwrap();
        assert!(text.contains("hidden_size = 500"));
        assert!(text.contains("K = 20"));
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(toml::from_str::<ModelConfig>("hidden = 3").is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(ModelConfig::hred(0).validate().is_err());
        assert!(ModelConfig::vhred_gmm(10, 0).validate().is_err());
        assert!(ModelConfig::vhred_lgm(10, 3).validate().is_ok());
    }
}
