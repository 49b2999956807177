use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::objectives::{LossMask, LossWeights};
use crate::zo::ZoConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "fedzge", alias = "fed_zge")]
    FedZge,
    #[serde(rename = "fedavg", alias = "fed_avg")]
    FedAvg,
    /// Distillation on labeled auxiliary data; clients also fine-tune on it.
    Mhat,
    /// Distillation on unlabeled auxiliary data.
    #[serde(alias = "distill_fl", alias = "dsfl")]
    DsFl,
    /// FedZGE with uploaded local models and exact generator gradients.
    WhiteboxDatafree,
    /// Clients train alone; the reported accuracy is the best client's.
    Standalone,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::FedZge, Method::FedAvg, Method::Mhat, Method::DsFl, Method::WhiteboxDatafree, Method::Standalone];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FedZge => "fedzge",
            Method::FedAvg => "fedavg",
            Method::Mhat => "mhat",
            Method::DsFl => "ds_fl",
            Method::WhiteboxDatafree => "whitebox_datafree",
            Method::Standalone => "standalone",
        }
    }

    pub fn needs_aux_data(self) -> bool {
        matches!(self, Method::Mhat | Method::DsFl)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "fedzge" => Ok(Method::FedZge),
            "fedavg" => Ok(Method::FedAvg),
            "mhat" => Ok(Method::Mhat),
            "ds_fl" | "dsfl" | "distill_fl" => Ok(Method::DsFl),
            "whitebox_datafree" | "whitebox" => Ok(Method::WhiteboxDatafree),
            "standalone" | "local" => Ok(Method::Standalone),
            _ => Err(Error::Parse(format!("unknown method '{s}'"))),
        }
    }
}

/// Everything needed to run one federated training job on given shards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub method: Method,
    pub clients: usize,
    /// Fraction of clients sampled per round.
    pub sample_fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub local_distill_epochs: usize,
    pub global_distill_epochs: usize,
    pub local_lr: f64,
    pub global_lr: f64,
    pub generator_lr: f64,
    /// Minibatch size for local cross-entropy training.
    pub local_batch: usize,
    /// Synthetic (or auxiliary) batch size per round.
    pub batch: usize,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    /// Hidden widths per client, assigned cyclically by client id.
    pub client_hidden: Vec<Vec<usize>>,
    /// Global model widths; defaults to the largest client architecture.
    pub global_hidden: Option<Vec<usize>>,
    pub activation: Activation,
    pub loss_weights: LossWeights,
    pub zo: ZoConfig,
    pub mask: LossMask,
    pub local_distill: bool,
    pub seed: u64,
    /// Run client-side phases on the rayon pool. Results do not depend on it.
    #[serde(skip, default = "yes")]
    pub parallel: bool,
}

fn yes() -> bool {
    true
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            method: Method::FedZge,
            clients: 10,
            sample_fraction: 1.0,
            rounds: 100,
            local_epochs: 10,
            local_distill_epochs: 10,
            global_distill_epochs: 10,
            local_lr: 1e-2,
            global_lr: 1e-2,
            generator_lr: 1e-3,
            local_batch: 256,
            batch: 500,
            noise_dim: 16,
            generator_hidden: vec![64, 64],
            client_hidden: vec![vec![32]],
            global_hidden: None,
            activation: Activation::Relu,
            loss_weights: LossWeights::default(),
            zo: ZoConfig::default(),
            mask: LossMask::ALL,
            local_distill: true,
            seed: 0,
            parallel: true,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::InvalidArgument(format!("{key}: {why}")));
        if self.clients == 0 {
            return bad("clients", "must be at least 1");
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            return bad("sample_fraction", "must lie in (0, 1]");
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1");
        }
        for (key, v) in [
            ("local_epochs", self.local_epochs),
            ("local_distill_epochs", self.local_distill_epochs),
            ("global_distill_epochs", self.global_distill_epochs),
            ("local_batch", self.local_batch),
            ("batch", self.batch),
            ("noise_dim", self.noise_dim),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        for (key, v) in [("local_lr", self.local_lr), ("global_lr", self.global_lr), ("generator_lr", self.generator_lr)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(key, "must be a finite non-negative number");
            }
        }
        if self.client_hidden.is_empty() || self.client_hidden.iter().any(|h| h.is_empty() || h.contains(&0)) {
            return bad("client_hidden", "needs at least one architecture with positive widths");
        }
        if self.generator_hidden.is_empty() || self.generator_hidden.contains(&0) {
            return bad("generator_hidden", "needs positive widths");
        }
        let w = &self.loss_weights;
        if [w.adv, w.div, w.info].iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
            return bad("loss_weights", "betas must be finite and non-negative");
        }
        if !(w.tau > 0.0) || !w.tau.is_finite() {
            return bad("tau", "must be positive");
        }
        self.zo.validate()
    }

    /// Number of clients sampled each round.
    pub fn participants(&self) -> usize {
        sampled_count(self.clients, self.sample_fraction)
    }

    pub fn client_arch(&self, id: usize) -> &[usize] {
        &self.client_hidden[id % self.client_hidden.len()]
    }

    /// Whether clients use more than one architecture.
    pub fn heterogeneous(&self) -> bool {
        let n = self.client_hidden.len().min(self.clients);
        self.client_hidden[..n].iter().any(|h| h != &self.client_hidden[0])
    }
}

/// ⌈fraction · K⌉, clamped to [1, K].
pub fn sampled_count(clients: usize, fraction: f64) -> usize {
    // guard against 0.1 * 50 = 5.000000000000001
    let raw = fraction * clients as f64;
    let n = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    (n as usize).clamp(1, clients)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("distill_fl".parse::<Method>().unwrap(), Method::DsFl);
        assert!("fedprox".parse::<Method>().is_err());
        for m in Method::ALL {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
    }

    #[test]
    fn sampled_counts() {
        assert_eq!(sampled_count(50, 0.1), 5);
        assert_eq!(sampled_count(50, 0.5), 25);
        assert_eq!(sampled_count(10, 1.0), 10);
        assert_eq!(sampled_count(10, 0.15), 2);
        assert_eq!(sampled_count(3, 0.01), 1);
    }

    #[test]
    fn validation_names_key() {
        let cfg = FederationConfig { sample_fraction: 0.0, ..FederationConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("sample_fraction"));
        let cfg = FederationConfig { global_distill_epochs: 0, ..FederationConfig::default() };
        assert!(cfg.validate().unwrap_err().to_string().contains("global_distill_epochs"));
        FederationConfig::default().validate().unwrap();
    }

    #[test]
    fn heterogeneity_flag() {
        let mut cfg = FederationConfig::default();
        assert!(!cfg.heterogeneous());
        cfg.client_hidden = vec![vec![32], vec![16, 16]];
        assert!(cfg.heterogeneous());
        assert_eq!(cfg.client_arch(3), &[16, 16]);
    }
}
