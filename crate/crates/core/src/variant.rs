//! Ablation variants: which context branches a model uses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::RasterKind;
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Motion only: no grouping/occupancy and no scene context.
    Baseline,
    Gp,
    Hm,
    HmGp,
    ApGp,
    SmGp,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Baseline,
        Variant::Gp,
        Variant::Hm,
        Variant::HmGp,
        Variant::ApGp,
        Variant::SmGp,
    ];

    /// Whether the grouping-aware occupancy branch is enabled.
    pub fn uses_grouping(self) -> bool {
        matches!(self, Variant::Gp | Variant::HmGp | Variant::ApGp | Variant::SmGp)
    }

    pub fn scene_kind(self) -> Option<RasterKind> {
        match self {
            Variant::Baseline | Variant::Gp => None,
            Variant::Hm | Variant::HmGp => Some(RasterKind::HeatMap),
            Variant::ApGp => Some(RasterKind::Aerial),
            Variant::SmGp => Some(RasterKind::Segmented),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Gp => "+gp",
            Variant::Hm => "+hm",
            Variant::HmGp => "+hm+gp",
            Variant::ApGp => "+ap+gp",
            Variant::SmGp => "+sm+gp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts `baseline`, `+gp`, `gp`, `mce+hm+gp`, `hm_gp` and similar.
    fn from_str(s: &str) -> Result<Self, Error> {
        let norm = s.trim().to_ascii_lowercase();
        let norm = norm.strip_prefix("mce").unwrap_or(&norm);
        let mut parts: Vec<&str> = norm
            .split(['+', '_', '-', ','])
            .filter(|p| !p.is_empty())
            .collect();
        parts.sort_unstable();
        match parts.as_slice() {
            ["baseline"] => Ok(Variant::Baseline),
            ["gp"] => Ok(Variant::Gp),
            ["hm"] => Ok(Variant::Hm),
            ["gp", "hm"] => Ok(Variant::HmGp),
            ["ap", "gp"] => Ok(Variant::ApGp),
            ["gp", "sm"] => Ok(Variant::SmGp),
            _ => Err(Error::UnknownVariant(s.to_string())),
        }
    }
}
