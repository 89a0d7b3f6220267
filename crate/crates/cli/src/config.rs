use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use resseg::components::PostprocessParams;
use resseg::roiar::{RoiMethod, RoiSpec};
use resseg::trainer::TrainConfig;
use serde::Deserialize;

use crate::backend::BackendSpec;
use crate::stages::ModelConfig;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPipeline {
    mosaic: PathBuf,
    phase1: RawPhase,
    postprocess: RawPostprocess,
    roi: RawRoi,
    phase2: RawPhase2,
    #[serde(default)]
    evaluate: Option<EvaluateConfig>,
    #[serde(default)]
    train: Option<TrainConfig>,
    #[serde(default)]
    model: Option<ModelConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    backend: String,
    patch_height: usize,
    patch_width: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase2 {
    backend: String,
    patch_height: usize,
    patch_width: usize,
    threshold: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPostprocess {
    threshold: f64,
    kernel_m: f64,
    size_ratio: f64,
    max_dist_m: f64,
    object_rules: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoi {
    method: String,
    margin_m: f64,
    simplify_epsilon_px: f64,
    fill: u8,
}

/// Ground truth for the optional scoring step; any subset may be given.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub reservoir_gt: Option<PathBuf>,
    pub manmade_gt: Option<PathBuf>,
    pub regions: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub backend: BackendSpec,
    pub patch_height: usize,
    pub patch_width: usize,
}

/// A validated pipeline configuration. Paths are resolved against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub mosaic: PathBuf,
    pub phase1: PhaseConfig,
    pub postprocess: PostprocessParams,
    pub roi: RoiSpec,
    pub fill: u8,
    pub phase2: PhaseConfig,
    pub phase2_threshold: f64,
    pub evaluate: EvaluateConfig,
    pub train: Option<TrainConfig>,
    pub model: Option<ModelConfig>,
}

fn invalid(what: &'static str, msg: String) -> anyhow::Error {
    resseg::Error::Validation { what, msg }.into()
}

fn read_table(path: &Path, overrides: &[String]) -> Result<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| resseg::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut value: toml::Value =
        toml::from_str(&text).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(value)
}

/// Applies `dotted.key=value`. The value is read as a TOML scalar; anything
/// that does not parse as one is taken as a string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid("override", format!("`{assignment}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid("override", format!("bad key `{key}`")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            invalid(
                "override",
                format!("`{key}`: `{part}` is not inside a table"),
            )
        })?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| invalid("override", format!("`{key}` does not name a table entry")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn deserialize<T: serde::de::DeserializeOwned>(value: toml::Value, origin: &Path) -> Result<T> {
    // Round-trip through text so errors carry the key name and position.
    let text = toml::to_string(&value).context("re-encoding config")?;
    toml::from_str(&text)
        .map_err(|e| invalid("config", format!("{}: {}", origin.display(), e.message())))
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn check_patch(what: &'static str, h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(invalid(
            what,
            format!("patch size {h}x{w} must be positive"),
        ));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<PipelineConfig> {
        let raw: RawPipeline = deserialize(read_table(path, overrides)?, path)?;
        let base = base_dir(path);
        let phase = |what, backend: &str, h, w| -> Result<PhaseConfig> {
            check_patch(what, h, w)?;
            Ok(PhaseConfig {
                backend: backend.parse::<BackendSpec>()?.relative_to(&base),
                patch_height: h,
                patch_width: w,
            })
        };
        let phase1 = phase(
            "phase1",
            &raw.phase1.backend,
            raw.phase1.patch_height,
            raw.phase1.patch_width,
        )?;
        let phase2 = phase(
            "phase2",
            &raw.phase2.backend,
            raw.phase2.patch_height,
            raw.phase2.patch_width,
        )?;
        if !(0.0..=1.0).contains(&raw.phase2.threshold) {
            return Err(invalid(
                "phase2.threshold",
                format!("{} is outside [0, 1]", raw.phase2.threshold),
            ));
        }
        let p = raw.postprocess;
        let postprocess = PostprocessParams {
            threshold: p.threshold,
            kernel_m: p.kernel_m,
            size_ratio: p.size_ratio,
            max_dist_m: p.max_dist_m,
            object_rules: p.object_rules,
        };
        postprocess.validate()?;
        let roi = RoiSpec {
            method: raw.roi.method.parse::<RoiMethod>()?,
            margin_m: raw.roi.margin_m,
            simplify_epsilon_px: raw.roi.simplify_epsilon_px,
        };
        roi.validate()?;
        if let Some(t) = &raw.train {
            t.validate()?;
        }
        if let Some(m) = &raw.model {
            resseg::trainer::TinyFcn::new(&m.widths, m.seed)?;
        }
        let evaluate = raw.evaluate.unwrap_or_default();
        Ok(PipelineConfig {
            mosaic: base.join(raw.mosaic),
            phase1,
            postprocess,
            roi,
            fill: raw.roi.fill,
            phase2,
            phase2_threshold: raw.phase2.threshold,
            evaluate: EvaluateConfig {
                reservoir_gt: evaluate.reservoir_gt.map(|p| base.join(p)),
                manmade_gt: evaluate.manmade_gt.map(|p| base.join(p)),
                regions: evaluate.regions.map(|p| base.join(p)),
            },
            train: raw.train,
            model: raw.model,
        })
    }
}

/// Reads the `[train]` table (required) and `[model]` table (optional) of a
/// config file, ignoring everything else, so a pipeline config can be reused.
pub fn load_train(path: &Path, overrides: &[String]) -> Result<(TrainConfig, ModelConfig)> {
    let mut table = match read_table(path, overrides)? {
        toml::Value::Table(t) => t,
        _ => return Err(anyhow!("{}: not a table", path.display())),
    };
    let train = table.remove("train").ok_or_else(|| {
        invalid(
            "config",
            format!("{}: missing table `[train]`", path.display()),
        )
    })?;
    let train: TrainConfig = deserialize(train, path).context("in table [train]")?;
    train.validate()?;
    let model = match table.remove("model") {
        Some(v) => deserialize(v, path).context("in table [model]")?,
        None => ModelConfig::default(),
    };
    resseg::trainer::TinyFcn::new(&model.widths, model.seed)?;
    Ok((train, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys_and_keep_types() {
        let mut v: toml::Value = toml::from_str("[a]\nx = 1\n").unwrap();
        apply_override(&mut v, "a.x=2.5").unwrap();
        apply_override(&mut v, "a.name=external:maps").unwrap();
        apply_override(&mut v, "b.flag=false").unwrap();
        assert_eq!(v["a"]["x"].as_float(), Some(2.5));
        assert_eq!(v["a"]["name"].as_str(), Some("external:maps"));
        assert_eq!(v["b"]["flag"].as_bool(), Some(false));
        assert!(apply_override(&mut v, "noequals").is_err());
        assert!(apply_override(&mut v, "a.x.y=1").is_err());
    }
}
