//! Experiment manifest schema and method-roster expansion.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::ProbeFamily;
use crate::sae::PoolMode;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaeEntry {
    pub path: PathBuf,
    pub width: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l0: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaeProbeSpec {
    /// Latent counts per probe; defaults to {1, 16, 128}.
    #[serde(default = "default_k_values")]
    pub k: Vec<usize>,
    #[serde(default = "default_pooling")]
    pub pooling: Vec<PoolMode>,
    /// Threshold pooled latents to {0,1} at 1.0 before selection/training.
    #[serde(default)]
    pub binarize: bool,
}

fn default_k_values() -> Vec<usize> {
    vec![1, 16, 128]
}

fn default_pooling() -> Vec<PoolMode> {
    vec![PoolMode::Last]
}

fn default_families() -> Vec<String> {
    ["logreg", "pca", "knn", "gbt", "mlp"]
        .into_iter()
        .map(String::from)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodRoster {
    #[serde(default = "default_families")]
    pub baseline_families: Vec<String>,
    #[serde(default = "default_pooling")]
    pub baseline_pooling: Vec<PoolMode>,
    /// Include the attention-pooled probe over multi-token activations.
    #[serde(default)]
    pub attn_probe: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sae_probes: Option<SaeProbeSpec>,
}

impl Default for MethodRoster {
    fn default() -> Self {
        MethodRoster {
            baseline_families: default_families(),
            baseline_pooling: default_pooling(),
            attn_probe: false,
            sae_probes: None,
        }
    }
}

/// One roster entry after expansion.
#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Baseline {
        family: ProbeFamily,
        pooling: PoolMode,
    },
    Attn,
    Sae {
        sae_index: usize,
        k: usize,
        pooling: PoolMode,
        binarize: bool,
    },
}

impl Method {
    pub fn id(&self, saes: &[SaeEntry]) -> String {
        match self {
            Method::Baseline { family, pooling } => {
                format!("{}+acts+{}", family.name(), pooling.name())
            }
            Method::Attn => "attn+acts+multi".to_string(),
            Method::Sae {
                sae_index,
                k,
                pooling,
                binarize,
            } => {
                let stem = saes[*sae_index]
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| format!("sae{sae_index}"));
                format!(
                    "sae-logreg+{stem}+k{k}+{}{}",
                    pooling.name(),
                    if *binarize { "+bin" } else { "" }
                )
            }
        }
    }

    pub fn pooling_name(&self) -> &'static str {
        match self {
            Method::Baseline { pooling, .. } => pooling.name(),
            Method::Attn => "multi",
            Method::Sae { pooling, .. } => pooling.name(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentManifest {
    /// Dataset manifest paths (JSON documents of the tensor module).
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub saes: Vec<SaeEntry>,
    #[serde(default)]
    pub methods: MethodRoster,
    /// Regime kinds to sweep: standard, scarcity, imbalance, noise, shift.
    /// Empty means a standard-only run.
    #[serde(default)]
    pub regimes: Vec<String>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: ExperimentManifest = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            let resolve = |p: &PathBuf| {
                if p.is_absolute() {
                    p.clone()
                } else {
                    dir.join(p)
                }
            };
            m.datasets = m.datasets.iter().map(&resolve).collect();
            for sae in &mut m.saes {
                sae.path = resolve(&sae.path);
            }
            m.out_dir = resolve(&m.out_dir);
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Expand the roster into concrete methods, in deterministic order.
    pub fn expand_methods(&self) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for family in &self.methods.baseline_families {
            let family: ProbeFamily = family.parse()?;
            for &pooling in &self.methods.baseline_pooling {
                out.push(Method::Baseline { family, pooling });
            }
        }
        if self.methods.attn_probe {
            out.push(Method::Attn);
        }
        if let Some(spec) = &self.methods.sae_probes {
            if self.saes.is_empty() {
                return Err(Error::Manifest(
                    "sae_probes requested but no saes listed".into(),
                ));
            }
            for sae_index in 0..self.saes.len() {
                for &k in &spec.k {
                    for &pooling in &spec.pooling {
                        out.push(Method::Sae {
                            sae_index,
                            k,
                            pooling,
                            binarize: spec.binarize,
                        });
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::Manifest("method roster is empty".into()));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Manifest("no datasets listed".into()));
        }
        for path in &self.datasets {
            if !path.exists() {
                return Err(Error::Manifest(format!(
                    "dataset manifest {} does not exist",
                    path.display()
                )));
            }
        }
        for sae in &self.saes {
            if !sae.path.exists() {
                return Err(Error::Manifest(format!(
                    "sae weights {} do not exist",
                    sae.path.display()
                )));
            }
        }
        for regime in &self.regimes {
            if !["standard", "scarcity", "imbalance", "noise", "shift"]
                .contains(&regime.as_str())
            {
                return Err(Error::Manifest(format!("unknown regime {regime:?}")));
            }
        }
        self.expand_methods()?;
        Ok(())
    }

    /// Stable hash of the manifest's semantic content, used for idempotent
    /// task identification.
    pub fn content_hash(&self) -> u64 {
        let text = serde_json::to_string(self).unwrap_or_default();
        crate::rng::fnv1a(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roster_expansion_counts() {
        let manifest = ExperimentManifest {
            datasets: vec![PathBuf::from("ds.json")],
            saes: vec![SaeEntry {
                path: PathBuf::from("sae.spsw"),
                width: 256,
                l0: Some(2.0),
            }],
            methods: MethodRoster {
                baseline_families: vec!["logreg".into(), "knn".into()],
                baseline_pooling: vec![PoolMode::Last, PoolMode::Max],
                attn_probe: true,
                sae_probes: Some(SaeProbeSpec {
                    k: vec![1, 16, 128],
                    pooling: vec![PoolMode::Last],
                    binarize: false,
                }),
            },
            regimes: vec![],
            seed: 0,
            out_dir: PathBuf::from("out"),
        };
        let methods = manifest.expand_methods().unwrap();
        // 2 families x 2 pooling + attn + 3 k values x 1 sae x 1 pooling.
        assert_eq!(methods.len(), 2 * 2 + 1 + 3);
        let ids: Vec<String> = methods.iter().map(|m| m.id(&manifest.saes)).collect();
        assert!(ids.contains(&"logreg+acts+last".to_string()));
        assert!(ids.contains(&"attn+acts+multi".to_string()));
        assert!(ids.contains(&"sae-logreg+sae+k16+last".to_string()));
        let unique: std::collections::HashSet<_> = ids.iter().collect();
        assert_eq!(unique.len(), ids.len());
    }

    #[test]
    fn default_k_values_match_protocol() {
        let spec: SaeProbeSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(spec.k, vec![1, 16, 128]);
        assert!(!spec.binarize);
    }

    #[test]
    fn empty_roster_is_rejected() {
        let manifest = ExperimentManifest {
            datasets: vec![PathBuf::from("ds.json")],
            saes: vec![],
            methods: MethodRoster {
                baseline_families: vec![],
                baseline_pooling: vec![],
                attn_probe: false,
                sae_probes: None,
            },
            regimes: vec![],
            seed: 0,
            out_dir: PathBuf::from("out"),
        };
        assert!(manifest.expand_methods().is_err());
    }
}
