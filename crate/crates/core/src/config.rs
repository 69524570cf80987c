//! Plain-text `key = value` configuration with command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::Profile;
use crate::model::ModelConfig;
use crate::numerics::{AdamConfig, FocalParams};
use crate::objective::LossSettings;

/// Ordered `key = value` pairs. `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    pub entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::config(format!("line {}: empty key", n + 1)));
            }
            if entries.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses `key=value` assignments, as given to `--set`.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::argument(format!("override {o:?} is not key=value")))?;
            self.entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(())
    }
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(format!("invalid boolean {value:?} for {key}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub input_len: usize,
    /// Feature channels; 0 takes them from the feature files.
    pub in_channels: usize,
    pub channels: usize,
    pub gamma: f64,
    pub edges_k: usize,
    pub gap: usize,
    pub levels: usize,
    pub profile: Profile,
    /// Finest-level anchor widths; empty uses the profile's.
    pub anchor_base: Vec<f64>,
    /// 0 takes the class count from the manifest.
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loc_threshold: f64,
    pub adj_threshold: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub nms_sigma: f64,
    pub score_floor: f64,
    /// 0 uses the profile's.
    pub keep_n: usize,
    pub class_nms_threshold: f64,
    pub seed: u64,
    pub gn_groups: usize,
    pub head_blocks: usize,
    pub graph_branch: bool,
    pub cross_scale_edges: bool,
    pub vss: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input_len: 1280,
            in_channels: 0,
            channels: 256,
            gamma: 0.4,
            edges_k: 10,
            gap: 30,
            levels: 5,
            profile: Profile::ActivityNet,
            anchor_base: Vec::new(),
            num_classes: 0,
            epochs: 15,
            batch_size: 32,
            learning_rate: 1e-4,
            loc_threshold: 0.6,
            adj_threshold: 0.7,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            nms_sigma: 0.5,
            score_floor: 1e-4,
            keep_n: 0,
            class_nms_threshold: 0.65,
            seed: 0,
            gn_groups: 32,
            head_blocks: 4,
            graph_branch: true,
            cross_scale_edges: true,
            vss: true,
        }
    }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in &kv.entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "input_len" => self.input_len = parse_value(key, v)?,
            "in_channels" => self.in_channels = parse_value(key, v)?,
            "channels" => self.channels = parse_value(key, v)?,
            "gamma" => self.gamma = parse_value(key, v)?,
            "edges_k" => self.edges_k = parse_value(key, v)?,
            "gap" => self.gap = parse_value(key, v)?,
            "levels" => self.levels = parse_value(key, v)?,
            "profile" => self.profile = v.parse()?,
            "anchor_base" => {
                self.anchor_base = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|x| parse_value(key, x.trim())).collect::<Result<_>>()?
                }
            }
            "num_classes" => self.num_classes = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "learning_rate" => self.learning_rate = parse_value(key, v)?,
            "loc_threshold" => self.loc_threshold = parse_value(key, v)?,
            "adj_threshold" => self.adj_threshold = parse_value(key, v)?,
            "focal_gamma" => self.focal_gamma = parse_value(key, v)?,
            "focal_alpha" => self.focal_alpha = parse_value(key, v)?,
            "nms_sigma" => self.nms_sigma = parse_value(key, v)?,
            "score_floor" => self.score_floor = parse_value(key, v)?,
            "keep_n" => self.keep_n = parse_value(key, v)?,
            "class_nms_threshold" => self.class_nms_threshold = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "gn_groups" => self.gn_groups = parse_value(key, v)?,
            "head_blocks" => self.head_blocks = parse_value(key, v)?,
            "graph_branch" => self.graph_branch = parse_bool(key, v)?,
            "cross_scale_edges" => self.cross_scale_edges = parse_bool(key, v)?,
            "vss" => self.vss = parse_bool(key, v)?,
            other => return Err(Error::config(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.input_len == 0 || self.input_len % 64 != 0 {
            return bad(format!("input_len must be a positive multiple of 64, got {}", self.input_len));
        }
        if self.edges_k < 2 || self.edges_k % 2 != 0 {
            return bad(format!("edges_k must be even and at least 2, got {}", self.edges_k));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        let short = crate::vss::short_length(self.input_len, self.gamma);
        if self.vss && (short < 2 || self.gap + 2 * short > self.input_len) {
            return bad(format!("a clip of {short} snippets plus gap {} must fit twice in {}", self.gap, self.input_len));
        }
        if !self.anchor_base.is_empty() && self.anchor_base.len() != 2 {
            return bad("anchor_base needs exactly two widths".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive".into());
        }
        for (name, t) in [("loc_threshold", self.loc_threshold), ("adj_threshold", self.adj_threshold)] {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {t}"));
            }
        }
        if !(self.nms_sigma > 0.0) || !(self.score_floor >= 0.0) {
            return bad("nms_sigma must be positive and score_floor non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.focal_alpha) || self.focal_gamma < 0.0 {
            return bad("focal_alpha must lie in [0, 1] and focal_gamma be non-negative".into());
        }
        if self.channels == 0 || self.gn_groups == 0 || self.channels % self.gn_groups != 0 {
            return bad(format!("channels {} must be divisible by gn_groups {}", self.channels, self.gn_groups));
        }
        if self.levels == 0 || self.input_len % (1 << (self.levels + 1)) != 0 {
            return bad(format!("input_len {} cannot be halved over {} levels", self.input_len, self.levels));
        }
        Ok(())
    }

    pub fn anchor_base(&self) -> [f64; 2] {
        match self.anchor_base.as_slice() {
            [a, b] => [*a, *b],
            _ => match self.profile {
                Profile::Thumos | Profile::Synthetic => [4.0, 6.0],
                Profile::ActivityNet => [32.0, 48.0],
            },
        }
    }

    pub fn keep_n(&self) -> usize {
        match (self.keep_n, self.profile) {
            (0, Profile::Thumos) => 200,
            (0, _) => 100,
            (n, _) => n,
        }
    }

    pub fn model_config(&self, in_channels: usize, num_classes: usize) -> Result<ModelConfig> {
        let in_channels = if self.in_channels == 0 { in_channels } else { self.in_channels };
        let num_classes = if self.num_classes == 0 { num_classes } else { self.num_classes };
        let m = ModelConfig {
            input_len: self.input_len,
            in_channels,
            channels: self.channels,
            levels: self.levels,
            edges_k: self.edges_k,
            num_classes,
            anchor_base: self.anchor_base(),
            gn_groups: self.gn_groups,
            head_blocks: self.head_blocks,
            graph_branch: self.graph_branch,
            cross_scale_edges: self.cross_scale_edges,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            loc_threshold: self.loc_threshold,
            adj_threshold: self.adj_threshold,
            focal: FocalParams { gamma: self.focal_gamma, alpha: Some(self.focal_alpha) },
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.learning_rate, ..AdamConfig::default() }
    }

    /// Text form that parses back to the same configuration.
    pub fn to_text(&self) -> String {
        let json = serde_json::to_value(self).expect("serializable");
        let mut out = String::new();
        for (k, v) in json.as_object().expect("object") {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                serde_json::Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                other => other.to_string(),
            };
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_values() {
        let c = RunConfig::default();
        assert_eq!((c.input_len, c.channels, c.edges_k, c.gap, c.levels), (1280, 256, 10, 30, 5));
        assert_eq!((c.gamma, c.epochs, c.batch_size, c.learning_rate), (0.4, 15, 32, 1e-4));
        assert_eq!(c.anchor_base(), [32.0, 48.0]);
        assert_eq!(c.keep_n(), 100);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.anchor_base = vec![4.0, 6.0];
        c.profile = Profile::Thumos;
        c.vss = false;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn violations_rejected() {
        assert!(RunConfig::parse("input_len = 100").is_err());
        assert!(RunConfig::parse("edges_k = 5").is_err());
        assert!(RunConfig::parse("gamma = 1.0").is_err());
        assert!(RunConfig::parse("colour = blue").is_err());
        assert!(RunConfig::parse("epochs").is_err());
        assert!(RunConfig::parse("epochs = 2\nepochs = 3").is_err());
    }

    #[test]
    fn overrides_win() {
        let mut kv = KeyValues::parse("epochs = 2 # short run\nseed = 4").unwrap();
        kv.apply_overrides(&["epochs=7".into()]).unwrap();
        let c = RunConfig::from_key_values(&kv).unwrap();
        assert_eq!((c.epochs, c.seed), (7, 4));
    }
}
