use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::prompt::ProcessPart;
use super::SynthError;
use crate::backend::ControlKind;
use crate::conditioning::CannyParams;
use crate::dataio::sha256_hex;

/// Order in which cumulative presets add control signals.
pub const CUMULATIVE_ORDER: [ControlKind; 4] = [
    ControlKind::Depth,
    ControlKind::Pose,
    ControlKind::Edges,
    ControlKind::Normals,
];

/// Uniform strength used by every control-ablation preset.
pub const CONTROL_ABLATION_STRENGTH: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartStrengths {
    pub head: f64,
    pub hair: f64,
    pub body: f64,
    pub feet: f64,
}

impl Default for PartStrengths {
    fn default() -> Self {
        Self {
            head: 0.35,
            hair: 0.35,
            body: 0.35,
            feet: 0.5,
        }
    }
}

impl PartStrengths {
    pub fn uniform(s: f64) -> Self {
        Self {
            head: s,
            hair: s,
            body: s,
            feet: s,
        }
    }

    pub fn get(&self, part: ProcessPart) -> f64 {
        match part {
            ProcessPart::Head => self.head,
            ProcessPart::Hair => self.hair,
            ProcessPart::Body => self.body,
            ProcessPart::Feet => self.feet,
        }
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        ProcessPart::ORDER
            .iter()
            .map(|&p| (p.as_str().to_string(), self.get(p)))
            .collect()
    }
}

/// `None` disables a control signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlWeights {
    pub depth: Option<f64>,
    pub normals: Option<f64>,
    pub edges: Option<f64>,
    pub pose: Option<f64>,
}

impl Default for ControlWeights {
    fn default() -> Self {
        Self::only(&ControlKind::ALL)
    }
}

impl ControlWeights {
    /// Weight 1.0 for `kinds`, disabled otherwise.
    pub fn only(kinds: &[ControlKind]) -> Self {
        let w = |k| kinds.contains(&k).then_some(1.0);
        Self {
            depth: w(ControlKind::Depth),
            normals: w(ControlKind::Normals),
            edges: w(ControlKind::Edges),
            pose: w(ControlKind::Pose),
        }
    }

    pub fn get(&self, kind: ControlKind) -> Option<f64> {
        match kind {
            ControlKind::Depth => self.depth,
            ControlKind::Normals => self.normals,
            ControlKind::Edges => self.edges,
            ControlKind::Pose => self.pose,
        }
    }

    /// Enabled signals in [`ControlKind::ALL`] order.
    pub fn enabled(&self) -> Vec<(ControlKind, f64)> {
        ControlKind::ALL
            .into_iter()
            .filter_map(|k| self.get(k).map(|w| (k, w)))
            .collect()
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.enabled()
            .into_iter()
            .map(|(k, w)| (k.as_str().to_string(), w))
            .collect()
    }
}

/// Named ablation configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preset {
    None,
    /// One control signal at [`CONTROL_ABLATION_STRENGTH`].
    Single(ControlKind),
    /// The first `k` signals of [`CUMULATIVE_ORDER`] at
    /// [`CONTROL_ABLATION_STRENGTH`].
    Cumulative(usize),
    /// All four controls, one strength for every part.
    Noise(f64),
}

impl Preset {
    /// The control presets followed by the noise sweep.
    pub fn ablation_suite() -> Vec<Preset> {
        let mut v: Vec<Preset> = [ControlKind::Edges, ControlKind::Depth, ControlKind::Normals, ControlKind::Pose]
            .into_iter()
            .map(Preset::Single)
            .collect();
        v.extend((2..=4).map(Preset::Cumulative));
        v.extend([0.3, 0.5, 0.7, 0.9].map(Preset::Noise));
        v
    }

    pub fn controls(&self) -> Option<Vec<ControlKind>> {
        match *self {
            Preset::None => None,
            Preset::Single(k) => Some(vec![k]),
            Preset::Cumulative(k) => Some(CUMULATIVE_ORDER[..k].to_vec()),
            Preset::Noise(_) => Some(ControlKind::ALL.to_vec()),
        }
    }

    pub fn strength(&self) -> Option<f64> {
        match *self {
            Preset::None => None,
            Preset::Single(_) | Preset::Cumulative(_) => Some(CONTROL_ABLATION_STRENGTH),
            Preset::Noise(s) => Some(s),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Preset::None => f.write_str("none"),
            Preset::Single(k) => write!(f, "single-{}", k.as_str()),
            Preset::Cumulative(k) => write!(f, "cumulative-{k}"),
            Preset::Noise(s) => write!(f, "noise-{s}"),
        }
    }
}

impl FromStr for Preset {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        let bad = || SynthError::InvalidConfig(format!("unknown preset {s:?}"));
        if s == "none" {
            return Ok(Preset::None);
        }
        if let Some(sig) = s.strip_prefix("single-") {
            return ControlKind::ALL
                .into_iter()
                .find(|k| k.as_str() == sig)
                .map(Preset::Single)
                .ok_or_else(bad);
        }
        if let Some(k) = s.strip_prefix("cumulative-") {
            return match k.parse::<usize>() {
                Ok(k @ 1..=4) => Ok(Preset::Cumulative(k)),
                _ => Err(bad()),
            };
        }
        if let Some(v) = s.strip_prefix("noise-") {
            return match v.parse::<f64>() {
                Ok(x) if x > 0.0 && x <= 1.0 => Ok(Preset::Noise(x)),
                _ => Err(bad()),
            };
        }
        Err(bad())
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn default_steps() -> usize {
    40
}

fn default_guidance() -> f64 {
    7.5
}

fn default_preset() -> Preset {
    Preset::None
}

/// Generation settings as read from the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default)]
    pub strengths: PartStrengths,
    #[serde(default)]
    pub controls: ControlWeights,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub negative_prompt: String,
    #[serde(default)]
    pub canny: CannyParams,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if !(self.guidance.is_finite() && self.guidance >= 0.0) {
            return bad(format!("guidance {} must be finite and non-negative", self.guidance));
        }
        for p in ProcessPart::ORDER {
            let s = self.strengths.get(p);
            if !(s > 0.0 && s <= 1.0) {
                return bad(format!("strength {s} for {p} outside (0, 1]"));
            }
        }
        for (k, w) in self.controls.enabled() {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{} weight {w} must be finite and non-negative", k.as_str()));
            }
        }
        self.canny.validate().map_err(SynthError::InvalidConfig)
    }

    /// The configuration actually run: preset overrides applied.
    pub fn effective(&self) -> GenerationConfig {
        let mut c = self.clone();
        if let Some(kinds) = self.preset.controls() {
            c.controls = ControlWeights::only(&kinds);
        }
        if let Some(s) = self.preset.strength() {
            c.strengths = PartStrengths::uniform(s);
        }
        c
    }

    /// SHA-256 of the canonical JSON of the effective configuration.
    pub fn config_hash(&self) -> String {
        let v = serde_json::to_value(self.effective()).expect("config serializes");
        sha256_hex(v.to_string().as_bytes())
    }
}
