//! Module configurations and the flat key/value config file.

use std::path::Path;

use anyhow::Result;
use canopy::eval::EvalConfig;
use canopy::strata::StrataConfig;
use canopy::treeseg::SegConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub seg: SegConfig,
    pub strata: StrataConfig,
    pub eval: EvalConfig,
}

impl Settings {
    /// Applies `key = value` lines. A key goes to every configuration that
    /// has a field of that name; a key none of them knows is an error.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(a, b)| (a.trim(), b.trim()))
                .ok_or_else(|| Failure::Input(format!("config line {}: expected `key = value`", k + 1)))?;
            let located = |e: canopy::Error| Failure::Input(format!("config line {}: {e}", k + 1));
            let mut known = self.seg.set(key, value).map_err(located)?;
            known |= self.strata.set(key, value).map_err(located)?;
            known |= self.eval.set(key, value).map_err(located)?;
            if !known {
                return Err(Failure::Input(format!("config line {}: unknown key `{key}`", k + 1)).into());
            }
        }
        self.validate()
    }

    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Input(format!("reading config {}: {e}", path.display())))?;
        let mut s = Settings::default();
        s.apply_text(&text)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.seg.validate()?;
        self.strata.validate()?;
        self.eval.validate()?;
        Ok(())
    }
}
