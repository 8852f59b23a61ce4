//! Run configuration: defaults, TOML/JSON files and command-line overrides.

use std::collections::BTreeSet;
use std::path::Path;

use hoi_core::attention::DEFAULT_TAU;
use hoi_core::registry::{DEFAULT_CAPACITY, DEFAULT_PSEUDO_THRESHOLD};
use hoi_core::signature::DEFAULT_DESCRIPTIONS;
use hoi_core::{HeadKind, HeadSet, PairingRules, ScoringConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tau: f64,
    pub gamma: f64,
    pub lambda_neg: f64,
    /// Registry capacity per category.
    pub j: usize,
    /// Descriptions per interaction signature.
    pub m: usize,
    pub detection: DetectionConfig,
    pub heads: HeadsConfig,
    pub bias: Toggle,
    pub mhom: Toggle,
    pub pseudo: PseudoConfig,
    /// Categories removed from visual memory for zero-shot runs.
    pub held_out: Vec<usize>,
    pub object_filter: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub threshold: f32,
    pub min_keep: usize,
    pub max_keep: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadsConfig {
    pub enable: HeadFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadFlags {
    pub tf: bool,
    pub tc: bool,
    pub vi: bool,
    pub vc: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggle {
    pub enable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PseudoConfig {
    pub threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tau: DEFAULT_TAU,
            gamma: 1.0,
            lambda_neg: 1.0,
            j: DEFAULT_CAPACITY,
            m: DEFAULT_DESCRIPTIONS,
            detection: DetectionConfig::default(),
            heads: HeadsConfig::default(),
            bias: Toggle::default(),
            mhom: Toggle::default(),
            pseudo: PseudoConfig::default(),
            held_out: Vec::new(),
            object_filter: true,
        }
    }
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let rules = PairingRules::default();
        DetectionConfig { threshold: rules.threshold, min_keep: rules.min_keep, max_keep: rules.max_keep }
    }
}

impl Default for HeadFlags {
    fn default() -> Self {
        HeadFlags { tf: true, tc: true, vi: true, vc: true }
    }
}

impl Default for Toggle {
    fn default() -> Self {
        Toggle { enable: true }
    }
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig { threshold: DEFAULT_PSEUDO_THRESHOLD }
    }
}

impl From<HeadSet> for HeadFlags {
    fn from(h: HeadSet) -> Self {
        HeadFlags { tf: h.tf, tc: h.tc, vi: h.vi, vc: h.vc }
    }
}

impl From<HeadFlags> for HeadSet {
    fn from(h: HeadFlags) -> Self {
        HeadSet { tf: h.tf, tc: h.tc, vi: h.vi, vc: h.vc }
    }
}

/// Parses a comma-separated head list such as `tf,tc`.
pub fn parse_heads(list: &str) -> Result<HeadSet> {
    let mut heads = HeadSet { tf: false, tc: false, vi: false, vc: false };
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = HeadKind::from_short_name(name)
            .ok_or_else(|| Error::Usage(format!("unknown head `{name}` (expected tf, tc, vi or vc)")))?;
        heads.set(kind, true);
    }
    Ok(heads)
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda_neg: Option<f64>,
    pub j: Option<usize>,
    pub m: Option<usize>,
    pub detection_threshold: Option<f32>,
    pub heads: Option<HeadSet>,
    pub no_bias: bool,
    pub no_mhom: bool,
    pub no_object_filter: bool,
    pub pseudo_threshold: Option<f64>,
    pub held_out: Option<Vec<usize>>,
}

impl RunConfig {
    /// Reads a `.toml` or `.json` file; missing keys take their defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source }),
            _ => toml::from_str(&text).map_err(|source| Error::Toml { path: path.into(), source }),
        }
    }

    /// Defaults, then `file`, then `overrides`; the result is validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut config = match file {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.tau {
            self.tau = v;
        }
        if let Some(v) = o.gamma {
            self.gamma = v;
        }
        if let Some(v) = o.lambda_neg {
            self.lambda_neg = v;
        }
        if let Some(v) = o.j {
            self.j = v;
        }
        if let Some(v) = o.m {
            self.m = v;
        }
        if let Some(v) = o.detection_threshold {
            self.detection.threshold = v;
        }
        if let Some(v) = o.heads {
            self.heads.enable = v.into();
        }
        if o.no_bias {
            self.bias.enable = false;
        }
        if o.no_mhom {
            self.mhom.enable = false;
        }
        if o.no_object_filter {
            self.object_filter = false;
        }
        if let Some(v) = o.pseudo_threshold {
            self.pseudo.threshold = v;
        }
        if let Some(v) = &o.held_out {
            self.held_out = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Usage(msg));
        if !(0.0..=1.0).contains(&self.pseudo.threshold) {
            return bad(format!("pseudolabel threshold {} is outside [0, 1]", self.pseudo.threshold));
        }
        if !(0.0..=1.0).contains(&self.detection.threshold) {
            return bad(format!("detection threshold {} is outside [0, 1]", self.detection.threshold));
        }
        if self.j == 0 || self.m == 0 {
            return bad("j and m must be positive".into());
        }
        self.pairing().validate().map_err(|e| Error::Usage(e.to_string()))?;
        self.scoring().validate().map_err(|e| Error::Usage(e.to_string()))
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            tau: self.tau,
            gamma: self.gamma,
            lambda_neg: self.lambda_neg,
            heads: self.heads.enable.into(),
            bias: self.bias.enable,
            mhom: self.mhom.enable,
            object_filter: self.object_filter,
        }
    }

    pub fn pairing(&self) -> PairingRules {
        PairingRules {
            threshold: self.detection.threshold,
            min_keep: self.detection.min_keep,
            max_keep: self.detection.max_keep,
        }
    }

    pub fn held_out_set(&self) -> BTreeSet<usize> {
        self.held_out.iter().copied().collect()
    }

    /// The effective configuration as echoed into output manifests.
    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }
}
