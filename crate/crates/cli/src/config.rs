//! Run configuration: every tunable of the model, loss, optimizer,
//! synthesizer and evaluation in one struct, parsed from plain
//! `key=value` lines. Unknown keys are rejected so typos cannot silently
//! fall back to defaults. Serialization round-trips exactly; the echoed
//! config is itself a valid config file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use tcyc_core::config::Config;
use tcyc_core::scalar::Dtype;
use tcyc_core::synth::SynthConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: Config,
    pub synth: SynthConfig,
    /// Always use the first frame as a propagation reference.
    pub include_first_frame: bool,
    /// Boundary-match tolerance of the F metric, in pixels.
    pub f_tolerance: f64,
    /// PCK distance threshold as a fraction of the normalization size.
    pub pck_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: Config::default(),
            synth: SynthConfig::default(),
            include_first_frame: true,
            f_tolerance: 1.0,
            pck_alpha: 0.1,
        }
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str, ty: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("key {key}: expected {ty}, got {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("key {key}: expected bool (true or false), got {value:?}"),
    }
}

impl RunConfig {
    /// Apply one `key=value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let sy = &mut self.synth;
        match key {
            "image_side" => m.image_side = parse_as(key, value, "usize")?,
            "patch_side" => m.patch_side = parse_as(key, value, "usize")?,
            "channels" => {
                let parts: Result<Vec<usize>> = value
                    .split(',')
                    .map(|p| parse_as(key, p.trim(), "comma-separated usize list"))
                    .collect();
                m.channels = parts?;
            }
            "feature_dim" => m.feature_dim = parse_as(key, value, "usize")?,
            "localizer_channels" => m.localizer_channels = parse_as(key, value, "usize")?,
            "in_channels" => m.in_channels = parse_as(key, value, "usize")?,
            "eps_norm" => m.eps_norm = parse_as(key, value, "f64")?,
            "k" => m.k = parse_as(key, value, "usize")?,
            "lambda" => m.lambda = parse_as(key, value, "f64")?,
            "enable_sim" => m.enable_sim = parse_bool(key, value)?,
            "enable_skip" => m.enable_skip = parse_bool(key, value)?,
            "enable_long" => m.enable_long = parse_bool(key, value)?,
            "dedup_unit_cycle" => m.dedup_unit_cycle = parse_bool(key, value)?,
            "renorm_sampled" => m.renorm_sampled = parse_bool(key, value)?,
            "lr" => m.lr = parse_as(key, value, "f64")?,
            "beta1" => m.beta1 = parse_as(key, value, "f64")?,
            "beta2" => m.beta2 = parse_as(key, value, "f64")?,
            "adam_eps" => m.adam_eps = parse_as(key, value, "f64")?,
            "batch_size" => m.batch_size = parse_as(key, value, "usize")?,
            "steps" => m.steps = parse_as(key, value, "usize")?,
            "seed" => m.seed = parse_as(key, value, "u64")?,
            "log_every" => m.log_every = parse_as(key, value, "usize")?,
            "checkpoint_every" => m.checkpoint_every = parse_as(key, value, "usize")?,
            "dtype" => {
                m.dtype = match value {
                    "f64" => Dtype::F64,
                    "f32" => Dtype::F32,
                    _ => bail!("key dtype: expected f64 or f32, got {value:?}"),
                }
            }
            "knn" => m.knn = parse_as(key, value, "usize")?,
            "ref_window" => m.ref_window = parse_as(key, value, "usize")?,
            "synth.object_side" => sy.object_side = parse_as(key, value, "usize")?,
            "synth.clip_len" => sy.clip_len = parse_as(key, value, "usize")?,
            "synth.max_speed" => sy.max_speed = parse_as(key, value, "f64")?,
            "synth.rotate" => sy.rotate = parse_bool(key, value)?,
            "synth.max_spin" => sy.max_spin = parse_as(key, value, "f64")?,
            "synth.occluder" => sy.occluder = parse_bool(key, value)?,
            "synth.occluder_side" => sy.occluder_side = parse_as(key, value, "usize")?,
            "synth.cell_px" => sy.cell_px = parse_as(key, value, "usize")?,
            "synth.margin" => sy.margin = parse_as(key, value, "usize")?,
            "synth.image_side" | "synth.in_channels" => {
                bail!("key {key} is derived from the model geometry; set image_side / in_channels")
            }
            "include_first_frame" => self.include_first_frame = parse_bool(key, value)?,
            "f_tolerance" => self.f_tolerance = parse_as(key, value, "f64")?,
            "pck_alpha" => self.pck_alpha = parse_as(key, value, "f64")?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }

    /// Parse `key=value` lines; `#` starts a comment, later assignments win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, got {raw:?}", ln + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| anyhow!("line {}: {e:#}", ln + 1))?;
        }
        Ok(())
    }

    /// Sync derived fields and check every invariant.
    pub fn finalize(&mut self) -> Result<()> {
        self.synth.image_side = self.model.image_side;
        self.synth.in_channels = self.model.in_channels;
        tcyc_core::train::validate_pair(&self.model, &self.synth)?;
        if !(self.f_tolerance.is_finite() && self.f_tolerance >= 0.0) {
            bail!("f_tolerance {} must be a nonnegative number", self.f_tolerance);
        }
        if !(self.pck_alpha.is_finite() && self.pck_alpha > 0.0) {
            bail!("pck_alpha {} must be positive", self.pck_alpha);
        }
        Ok(())
    }

    /// The effective configuration as config-file text, stable order.
    pub fn serialize(&self) -> String {
        let m = &self.model;
        let sy = &self.synth;
        let mut out = String::new();
        let channels = m
            .channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let dtype = match m.dtype {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("image_side", m.image_side.to_string()),
            ("patch_side", m.patch_side.to_string()),
            ("channels", channels),
            ("feature_dim", m.feature_dim.to_string()),
            ("localizer_channels", m.localizer_channels.to_string()),
            ("in_channels", m.in_channels.to_string()),
            ("eps_norm", m.eps_norm.to_string()),
            ("k", m.k.to_string()),
            ("lambda", m.lambda.to_string()),
            ("enable_sim", m.enable_sim.to_string()),
            ("enable_skip", m.enable_skip.to_string()),
            ("enable_long", m.enable_long.to_string()),
            ("dedup_unit_cycle", m.dedup_unit_cycle.to_string()),
            ("renorm_sampled", m.renorm_sampled.to_string()),
            ("lr", m.lr.to_string()),
            ("beta1", m.beta1.to_string()),
            ("beta2", m.beta2.to_string()),
            ("adam_eps", m.adam_eps.to_string()),
            ("batch_size", m.batch_size.to_string()),
            ("steps", m.steps.to_string()),
            ("seed", m.seed.to_string()),
            ("log_every", m.log_every.to_string()),
            ("checkpoint_every", m.checkpoint_every.to_string()),
            ("dtype", dtype.to_string()),
            ("knn", m.knn.to_string()),
            ("ref_window", m.ref_window.to_string()),
            ("synth.object_side", sy.object_side.to_string()),
            ("synth.clip_len", sy.clip_len.to_string()),
            ("synth.max_speed", sy.max_speed.to_string()),
            ("synth.rotate", sy.rotate.to_string()),
            ("synth.max_spin", sy.max_spin.to_string()),
            ("synth.occluder", sy.occluder.to_string()),
            ("synth.occluder_side", sy.occluder_side.to_string()),
            ("synth.cell_px", sy.cell_px.to_string()),
            ("synth.margin", sy.margin.to_string()),
            ("include_first_frame", self.include_first_frame.to_string()),
            ("f_tolerance", self.f_tolerance.to_string()),
            ("pck_alpha", self.pck_alpha.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}

/// Defaults, overlaid with the config file when one is given. Callers
/// apply flag overrides afterwards and then `finalize`.
pub fn parse_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        cfg.apply_text(&text)?;
    }
    Ok(cfg)
}

/// Keys whose values differ between two configs, in serialization order.
pub fn config_diff(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    a.serialize()
        .lines()
        .zip(b.serialize().lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| {
            let key = x.split('=').next().unwrap_or(x);
            format!("{key} ({} vs {})", x.split_once('=').map_or("", |p| p.1), y.split_once('=').map_or("", |p| p.1))
        })
        .collect()
}
