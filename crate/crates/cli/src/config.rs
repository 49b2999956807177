use anyhow::{bail, Context, Result};
use fedzge_core::federation::{DataConfig, FederationConfig, Method};
use fedzge_core::nn::Activation;
use fedzge_core::objectives::{LossMask, LossWeights};
use fedzge_core::zo::ZoConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// `[federation]` section: protocol and model settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub method: Method,
    pub clients: usize,
    pub sample_fraction: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub local_distill_epochs: usize,
    pub global_distill_epochs: usize,
    pub local_lr: f64,
    pub global_lr: f64,
    pub generator_lr: f64,
    pub local_batch: usize,
    pub batch: usize,
    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub client_hidden: Vec<Vec<usize>>,
    pub global_hidden: Option<Vec<usize>>,
    pub activation: Activation,
}

impl Default for FederationSection {
    fn default() -> Self {
        let f = FederationConfig::default();
        Self {
            method: f.method,
            clients: f.clients,
            sample_fraction: f.sample_fraction,
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            local_distill_epochs: f.local_distill_epochs,
            global_distill_epochs: f.global_distill_epochs,
            local_lr: f.local_lr,
            global_lr: f.global_lr,
            generator_lr: f.generator_lr,
            local_batch: f.local_batch,
            batch: f.batch,
            noise_dim: f.noise_dim,
            generator_hidden: f.generator_hidden,
            client_hidden: f.client_hidden,
            global_hidden: f.global_hidden,
            activation: f.activation,
        }
    }
}

/// Terms that can be switched off; `LocalDistill` disables client-side
/// distillation rather than a generator-loss term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Fid,
    Adv,
    Div,
    Info,
    #[serde(alias = "localdistill")]
    LocalDistill,
}

impl std::str::FromStr for Ablation {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "fid" => Ablation::Fid,
            "adv" => Ablation::Adv,
            "div" => Ablation::Div,
            "info" => Ablation::Info,
            "localdistill" | "local_distill" => Ablation::LocalDistill,
            other => bail!("unknown ablation '{other}' (expected fid, adv, div, info or localdistill)"),
        })
    }
}

/// Parse an ablation set: `full`, `fid_only`, or `+`-joined flags such as
/// `adv+div`.
pub fn parse_ablation_set(s: &str) -> Result<Vec<Ablation>> {
    match s.trim() {
        "full" | "" => Ok(Vec::new()),
        "fid_only" => Ok(vec![Ablation::Adv, Ablation::Div, Ablation::Info]),
        other => other.split('+').map(str::parse).collect(),
    }
}

/// `[loss]` section: generator-loss weights and switched-off terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub adv: f64,
    pub div: f64,
    pub info: f64,
    pub tau: f64,
    pub tau_squared: bool,
    pub ablate: Vec<Ablation>,
}

impl Default for LossSection {
    fn default() -> Self {
        let w = LossWeights::default();
        Self { adv: w.adv, div: w.div, info: w.info, tau: w.tau, tau_squared: w.tau_squared, ablate: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub data: DataConfig,
    pub federation: FederationSection,
    pub loss: LossSection,
    pub zo: ZoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            out: PathBuf::from("out"),
            data: DataConfig::default(),
            federation: FederationSection::default(),
            loss: LossSection::default(),
            zo: ZoConfig::default(),
        }
    }
}

/// Command-line overrides; unset fields keep the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub method: Option<Method>,
    pub alpha: Option<f64>,
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub q: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub ablate: Vec<Ablation>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| anyhow::anyhow!("{e}"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.method {
            self.federation.method = m;
        }
        if let Some(a) = o.alpha {
            self.data.alpha = a;
        }
        if let Some(k) = o.clients {
            self.federation.clients = k;
        }
        if let Some(t) = o.rounds {
            self.federation.rounds = t;
        }
        if let Some(q) = o.q {
            self.zo.q = q;
        }
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        for a in &o.ablate {
            if !self.loss.ablate.contains(a) {
                self.loss.ablate.push(*a);
            }
        }
    }

    /// The core run description for this config; validates every section.
    pub fn federation_config(&self) -> Result<FederationConfig> {
        let f = &self.federation;
        let mut mask = LossMask::ALL;
        let mut local_distill = true;
        for a in &self.loss.ablate {
            match a {
                Ablation::Fid => mask.fid = false,
                Ablation::Adv => mask.adv = false,
                Ablation::Div => mask.div = false,
                Ablation::Info => mask.info = false,
                Ablation::LocalDistill => local_distill = false,
            }
        }
        let cfg = FederationConfig {
            method: f.method,
            clients: f.clients,
            sample_fraction: f.sample_fraction,
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            local_distill_epochs: f.local_distill_epochs,
            global_distill_epochs: f.global_distill_epochs,
            local_lr: f.local_lr,
            global_lr: f.global_lr,
            generator_lr: f.generator_lr,
            local_batch: f.local_batch,
            batch: f.batch,
            noise_dim: f.noise_dim,
            generator_hidden: f.generator_hidden.clone(),
            client_hidden: f.client_hidden.clone(),
            global_hidden: f.global_hidden.clone(),
            activation: f.activation,
            loss_weights: LossWeights {
                adv: self.loss.adv,
                div: self.loss.div,
                info: self.loss.info,
                tau: self.loss.tau,
                tau_squared: self.loss.tau_squared,
            },
            zo: self.zo,
            mask,
            local_distill,
            seed: self.seeds.first().copied().unwrap_or(0),
            parallel: true,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds: at least one seed is required");
        }
        self.data.validate()?;
        self.federation_config()?;
        Ok(())
    }
}

/// Parse `S[,S...]`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().with_context(|| format!("seed: '{p}' is not a non-negative integer")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(c.loss.tau, 5.0);
        assert_eq!((c.loss.adv, c.loss.div, c.loss.info), (1.0, 1.0, 1.0));
        assert_eq!(c.zo.q, 10);
        assert_eq!(c.zo.eps, 1e-3);
        assert_eq!(c.federation.noise_dim, 16);
        c.validate().unwrap();
    }

    #[test]
    fn sections_parse_and_flags_override() {
        let mut c = ExperimentConfig::from_toml_str("seeds = [3]\n[zo]\nq = 10\n[federation]\nmethod = \"ds_fl\"\n").unwrap();
        assert_eq!(c.federation.method, Method::DsFl);
        c.apply(&Overrides { q: Some(5), ..Overrides::default() });
        assert_eq!(c.zo.q, 5);
        assert_eq!(c.seeds, vec![3]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_toml_str("[federation]\nrounds = 3\nwarp = 9\n").unwrap_err().to_string();
        assert!(err.contains("warp"), "{err}");
        let err = ExperimentConfig::from_toml_str("[zo]\nq = \"ten\"\n").unwrap_err().to_string();
        assert!(err.contains("q = "), "{err}");
    }

    #[test]
    fn constraint_violation_is_named() {
        let mut c = ExperimentConfig::default();
        c.federation.sample_fraction = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("sample_fraction"));
        c = ExperimentConfig::default();
        c.data.alpha = -1.0;
        assert!(c.validate().unwrap_err().to_string().contains("alpha"));
    }

    #[test]
    fn missing_file_names_path() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/exp.toml")).unwrap_err();
        assert!(format!("{err:#}").contains("/nonexistent/exp.toml"));
    }

    #[test]
    fn ablations_map_to_switches() {
        let mut c = ExperimentConfig::default();
        c.loss.ablate = parse_ablation_set("fid_only").unwrap();
        let f = c.federation_config().unwrap();
        assert_eq!(f.mask, LossMask::FID_ONLY);
        c.loss.ablate = parse_ablation_set("localdistill").unwrap();
        assert!(!c.federation_config().unwrap().local_distill);
        assert!(parse_ablation_set("adv+nope").is_err());
        assert_eq!(parse_seed_list("1, 2,3").unwrap(), vec![1, 2, 3]);
    }
}
