//! INI-style pipeline configuration.
//!
//! Grammar: `[section]` headers, `key = value` pairs, blank lines, and
//! full-line comments starting with `#` or `;`. Keys before any section
//! header are top-level. Unknown sections and keys are errors, not
//! warnings — a typo must not silently fall back to a default. When one
//! key appears twice, the later line wins.
//!
//! Precedence across sources is: command-line flag, then config file, then
//! built-in default. The file itself only implements the last two layers;
//! flag overrides are the caller's job. `DEMOFORGE_CONFIG` names the file
//! to load when the caller does not pass a path.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::demo::Workspace;
use crate::mixup::MixupPolicy;
use crate::render::InvertMode;
use crate::repair::RepairConfig;
use crate::replay::strategy_by_name;

/// Name of the environment variable holding the default config path.
pub const CONFIG_ENV: &str = "DEMOFORGE_CONFIG";

/// Rendering and localization knobs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderConfig {
    /// Square raster resolution per view.
    pub resolution: usize,
    pub splat_radius: usize,
    pub invert_mode: InvertMode,
    /// Ground-truth heatmap Gaussian std, in pixels.
    pub heatmap_sigma: f64,
    pub coarse_grid: usize,
    pub fine_grid: usize,
    /// Zoomed cube edge length, meters.
    pub zoom_side: f64,
}

impl Default for RenderConfig {
    fn default() -> RenderConfig {
        RenderConfig {
            resolution: 224,
            splat_radius: 1,
            invert_mode: InvertMode::Occupied,
            heatmap_sigma: 1.5,
            coarse_grid: 100,
            fine_grid: 50,
            zoom_side: 0.2,
        }
    }
}

/// Replay-buffer construction knobs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferConfig {
    /// Registered strategy name.
    pub strategy: String,
    /// Observation sampling interval, frames.
    pub interval: usize,
}

impl Default for BufferConfig {
    fn default() -> BufferConfig {
        BufferConfig { strategy: "optimized".to_string(), interval: 10 }
    }
}

/// Everything the pipeline reads from one config file.
///
/// Risk zones are geometry, not scalars, and stay out of the INI surface;
/// they default to empty and are supplied programmatically.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker-thread cap; 0 leaves the library default.
    pub threads: usize,
    pub workspace: Workspace,
    pub repair: RepairConfig,
    pub render: RenderConfig,
    pub buffer: BufferConfig,
    pub mixup: MixupPolicy,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: expected `[section]` or `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown section [{name}]")]
    UnknownSection { line: usize, name: String },
    #[error("line {line}: unknown key {key:?} in {section}")]
    UnknownKey { line: usize, section: String, key: String },
    #[error("line {line}: bad value for {key}: {detail}")]
    BadValue { line: usize, key: String, detail: String },
    #[error("invalid configuration: {detail}")]
    Invalid { detail: String },
}

impl PipelineConfig {
    /// Parse a config file's text over the defaults.
    pub fn parse_str(text: &str) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, text: trimmed.to_string() })?
                    .trim();
                if !["workspace", "repair", "render", "buffer", "mixup"].contains(&name) {
                    return Err(ConfigError::UnknownSection { line, name: name.to_string() });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, text: trimmed.to_string() })?;
            cfg.apply(&section, key.trim(), value.trim(), line)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }

    /// Load from an explicit path, else from `DEMOFORGE_CONFIG`, else
    /// defaults. Returns the path actually read, if any.
    pub fn load(path: Option<&Path>) -> Result<(PipelineConfig, Option<PathBuf>), ConfigError> {
        let chosen: Option<PathBuf> = match path {
            Some(p) => Some(p.to_path_buf()),
            None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
        };
        match chosen {
            Some(p) => {
                let text = fs::read_to_string(&p)
                    .map_err(|e| ConfigError::Io { path: p.display().to_string(), source: e })?;
                Ok((PipelineConfig::parse_str(&text)?, Some(p)))
            }
            None => Ok((PipelineConfig::default(), None)),
        }
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError>
        where
            T::Err: Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                line,
                key: key.to_string(),
                detail: format!("{e} (got {value:?})"),
            })
        }
        let unknown = || {
            Err(ConfigError::UnknownKey {
                line,
                section: if section.is_empty() {
                    "the top level".to_string()
                } else {
                    format!("section [{section}]")
                },
                key: key.to_string(),
            })
        };
        match section {
            "" => match key {
                "seed" => self.seed = parse(key, value, line)?,
                "threads" => self.threads = parse(key, value, line)?,
                _ => return unknown(),
            },
            "workspace" => match key {
                "min_x" => self.workspace.aabb.min[0] = parse(key, value, line)?,
                "min_y" => self.workspace.aabb.min[1] = parse(key, value, line)?,
                "min_z" => self.workspace.aabb.min[2] = parse(key, value, line)?,
                "max_x" => self.workspace.aabb.max[0] = parse(key, value, line)?,
                "max_y" => self.workspace.aabb.max[1] = parse(key, value, line)?,
                "max_z" => self.workspace.aabb.max[2] = parse(key, value, line)?,
                "floor_z" => self.workspace.floor_z = parse(key, value, line)?,
                "boundary_margin" => self.workspace.boundary_margin = parse(key, value, line)?,
                _ => return unknown(),
            },
            "repair" => match key {
                "saliency_min_dist" => self.repair.saliency_min_dist = parse(key, value, line)?,
                "retreat_alpha" => self.repair.retreat_alpha = parse(key, value, line)?,
                "retreat_dense_path" => self.repair.retreat_dense_path = parse(key, value, line)?,
                "clearance_delta" => self.repair.clearance_delta = parse(key, value, line)?,
                "via_count" => self.repair.via_count = parse(key, value, line)?,
                "gripper_change_detect" => {
                    self.repair.gripper_change_detect = parse(key, value, line)?
                }
                "velocity_epsilon" => self.repair.velocity_epsilon = parse(key, value, line)?,
                _ => return unknown(),
            },
            "render" => match key {
                "resolution" => self.render.resolution = parse(key, value, line)?,
                "splat_radius" => self.render.splat_radius = parse(key, value, line)?,
                "invert_mode" => {
                    self.render.invert_mode = match value {
                        "occupied" => InvertMode::Occupied,
                        "full" => InvertMode::Full,
                        other => {
                            return Err(ConfigError::BadValue {
                                line,
                                key: key.to_string(),
                                detail: format!("expected occupied or full, got {other:?}"),
                            })
                        }
                    }
                }
                "heatmap_sigma" => self.render.heatmap_sigma = parse(key, value, line)?,
                "coarse_grid" => self.render.coarse_grid = parse(key, value, line)?,
                "fine_grid" => self.render.fine_grid = parse(key, value, line)?,
                "zoom_side" => self.render.zoom_side = parse(key, value, line)?,
                _ => return unknown(),
            },
            "buffer" => match key {
                "strategy" => {
                    strategy_by_name(value).map_err(|e| ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        detail: e.to_string(),
                    })?;
                    self.buffer.strategy = value.to_string();
                }
                "interval" => self.buffer.interval = parse(key, value, line)?,
                _ => return unknown(),
            },
            "mixup" => match key {
                "intra_rate" => self.mixup.intra_rate = parse(key, value, line)?,
                "cross_rate" => self.mixup.cross_rate = parse(key, value, line)?,
                "max_distractors" => self.mixup.max_distractors = parse(key, value, line)?,
                "renormalize" => self.mixup.renormalize = parse(key, value, line)?,
                _ => return unknown(),
            },
            _ => unreachable!("section names are validated at the header"),
        }
        Ok(())
    }

    /// Cross-field validation, run once after all assignments.
    fn finish(&mut self) -> Result<(), ConfigError> {
        let invalid = |detail: String| Err(ConfigError::Invalid { detail });
        // Re-run workspace construction so box/margin invariants hold.
        match Workspace::new(
            self.workspace.aabb,
            self.workspace.floor_z,
            self.workspace.boundary_margin,
        ) {
            Ok(ws) => self.workspace = ws,
            Err(e) => return invalid(e.to_string()),
        }
        if !(self.repair.retreat_alpha > 0.0 && self.repair.retreat_alpha <= 1.0) {
            return invalid(format!(
                "retreat_alpha {} outside (0, 1]",
                self.repair.retreat_alpha
            ));
        }
        if self.render.resolution == 0 {
            return invalid("resolution must be positive".to_string());
        }
        if !(self.render.heatmap_sigma > 0.0) {
            return invalid(format!("heatmap_sigma {} must be positive", self.render.heatmap_sigma));
        }
        if self.render.coarse_grid < 2 || self.render.fine_grid < 2 {
            return invalid(format!(
                "localization grids must be at least 2, got coarse {} / fine {}",
                self.render.coarse_grid, self.render.fine_grid
            ));
        }
        if !(self.render.zoom_side > 0.0) {
            return invalid(format!("zoom_side {} must be positive", self.render.zoom_side));
        }
        if self.buffer.interval == 0 {
            return invalid("buffer interval must be at least 1".to_string());
        }
        if let Err(e) = self.mixup.validate() {
            return invalid(e.to_string());
        }
        Ok(())
    }
}
