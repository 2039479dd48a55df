//! Flat `key = value` configuration with `#` comments and no nesting.
//! Unknown keys are rejected so typos fail fast.

use std::path::Path;

use crate::error::{ensure_arg, Error, Result};
use crate::l2mu::Variant;
use crate::train::TrainConfig;

/// Everything the command-line surface reads: training setup plus dataset,
/// compression and benchmark options.
#[derive(Clone, Debug)]
pub struct Config {
    pub train: TrainConfig,
    /// Global magnitude-pruning target.
    pub target_sparsity: f64,
    /// Activity letter codes defining the classes, in label order.
    pub whitelist: Vec<char>,
    /// Assign whole subjects to one split each instead of per-window.
    pub split_by_subject: bool,
    /// Standardize each channel when preparing a dataset cache (default off:
    /// the pipeline consumes raw values).
    pub normalize_input: bool,
    pub bin_width_ms: f64,
    pub synth_classes: usize,
    pub synth_per_class: usize,
}

impl Config {
    pub fn defaults(variant: Variant) -> Self {
        Config {
            train: TrainConfig::defaults(variant),
            target_sparsity: match variant {
                Variant::Leaky => 0.55,
                Variant::Synaptic => 0.80,
            },
            whitelist: crate::data::DEFAULT_WHITELIST.to_vec(),
            split_by_subject: false,
            normalize_input: false,
            bin_width_ms: crate::bench::DEFAULT_BIN_WIDTH_MS,
            synth_classes: 3,
            synth_per_class: 300,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        ensure_arg!(
            (0.0..1.0).contains(&self.target_sparsity),
            "target_sparsity must lie in [0, 1)"
        );
        ensure_arg!(!self.whitelist.is_empty(), "whitelist must not be empty");
        ensure_arg!(self.bin_width_ms > 0.0, "bin_width_ms must be positive");
        ensure_arg!(
            (1..=7).contains(&self.synth_classes),
            "synth_classes must lie in 1..=7"
        );
        ensure_arg!(self.synth_per_class >= 1, "synth_per_class must be >= 1");
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "variant" => t.variant = Variant::parse(value)?, // handled in load(); kept for single-pass files
            "seed" => t.seed = parse(key, value)?,
            "threads" => t.threads = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "grad_clip" => t.grad_clip = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "surrogate_slope" => t.surrogate_slope = parse(key, value)?,
            "n_channels" => t.dims.n_channels = parse(key, value)?,
            "n_expand" => t.dims.n_expand = parse(key, value)?,
            "n_fuse" => t.dims.n_fuse = parse(key, value)?,
            "n_harm" => t.dims.n_harm = parse(key, value)?,
            "n_u" => t.dims.n_u = parse(key, value)?,
            "n_h" => t.dims.n_h = parse(key, value)?,
            "d" => t.dims.d = parse(key, value)?,
            "theta" => t.dims.theta = parse(key, value)?,
            "dt" => t.dims.dt = parse(key, value)?,
            "n_classes" => t.dims.n_classes = parse(key, value)?,
            "alpha_enc_expand" => t.pops.enc_expand.alpha = parse(key, value)?,
            "beta_enc_expand" => t.pops.enc_expand.beta = parse(key, value)?,
            "theta_enc_expand" => t.pops.enc_expand.theta_v = parse(key, value)?,
            "alpha_enc_fuse" => t.pops.enc_fuse.alpha = parse(key, value)?,
            "beta_enc_fuse" => t.pops.enc_fuse.beta = parse(key, value)?,
            "theta_enc_fuse" => t.pops.enc_fuse.theta_v = parse(key, value)?,
            "alpha_enc_harm" => t.pops.enc_harm.alpha = parse(key, value)?,
            "beta_enc_harm" => t.pops.enc_harm.beta = parse(key, value)?,
            "theta_enc_harm" => t.pops.enc_harm.theta_v = parse(key, value)?,
            "alpha_u" => t.pops.u.alpha = parse(key, value)?,
            "beta_u" => t.pops.u.beta = parse(key, value)?,
            "theta_u" => t.pops.u.theta_v = parse(key, value)?,
            "alpha_m" => t.pops.m.alpha = parse(key, value)?,
            "beta_m" => t.pops.m.beta = parse(key, value)?,
            "theta_m" => t.pops.m.theta_v = parse(key, value)?,
            "alpha_h" => t.pops.h.alpha = parse(key, value)?,
            "beta_h" => t.pops.h.beta = parse(key, value)?,
            "theta_h" => t.pops.h.theta_v = parse(key, value)?,
            "target_sparsity" => self.target_sparsity = parse(key, value)?,
            "whitelist" => {
                let mut codes = Vec::new();
                for item in value.split(',') {
                    let item = item.trim();
                    let mut chars = item.chars();
                    match (chars.next(), chars.next()) {
                        (Some(c), None) if c.is_ascii_alphabetic() => codes.push(c),
                        _ => {
                            return Err(Error::arg(format!(
                                "whitelist entry '{item}' is not a single letter"
                            )))
                        }
                    }
                }
                self.whitelist = codes;
            }
            "split_by_subject" => self.split_by_subject = parse_bool(key, value)?,
            "normalize_input" => self.normalize_input = parse_bool(key, value)?,
            "bin_width_ms" => self.bin_width_ms = parse(key, value)?,
            "synth_classes" => self.synth_classes = parse(key, value)?,
            "synth_per_class" => self.synth_per_class = parse(key, value)?,
            other => return Err(Error::arg(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::arg(format!("config key '{key}': cannot parse value '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::arg(format!("config key '{key}': expected a bool, got '{other}'"))),
    }
}

/// Splits config text into ordered (key, value) pairs, stripping comments.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::arg(format!(
                "config line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Builds the effective configuration: defaults for the variant (the file's
/// `variant` key unless a CLI flag overrides it), then the file's values,
/// then the CLI seed/threads overrides.
pub fn load(
    path: Option<&Path>,
    variant_flag: Option<Variant>,
    seed_flag: Option<u64>,
    threads_flag: Option<usize>,
) -> Result<Config> {
    let pairs = match path {
        Some(p) => parse_config_text(&std::fs::read_to_string(p)?)?,
        None => Vec::new(),
    };
    let variant = match variant_flag {
        Some(v) => v,
        None => match pairs.iter().rev().find(|(k, _)| k == "variant") {
            Some((_, value)) => Variant::parse(value)?,
            None => Variant::Leaky,
        },
    };
    let mut config = Config::defaults(variant);
    for (key, value) in &pairs {
        config.apply(key, value)?;
    }
    config.train.variant = variant;
    if let Some(seed) = seed_flag {
        config.train.seed = seed;
    }
    if let Some(threads) = threads_flag {
        config.train.threads = threads;
    }
    config.validate()?;
    Ok(config)
}
