//! Training configuration: `key = value` text format.

use std::path::Path;

use super::{FusionError, Result};

/// Training and model-shape settings.
///
/// File keys: `seed`, `epochs`, `batch_size`, `learning_rate`, `lambda`,
/// `L`, `D_l` (list), `D`, `heads`, `classes`, `epsilon_cosine`. Lines
/// starting with `#` are comments. Missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Weight of the distillation loss in the total loss.
    pub lambda: f64,
    /// Number of feature scales L.
    pub layers: usize,
    /// Per-layer feature widths D_l; must list `layers` entries.
    pub layer_widths: Vec<usize>,
    /// Fused hidden size D.
    pub hidden: usize,
    pub heads: usize,
    pub classes: usize,
    pub epsilon_cosine: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 7,
            epochs: 150,
            batch_size: 4,
            learning_rate: 0.5,
            lambda: 0.1,
            layers: 3,
            layer_widths: vec![16, 16, 16],
            hidden: 32,
            heads: 2,
            classes: 4,
            epsilon_cosine: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.layers == 0 {
            problems.push("L must be at least 1".to_string());
        }
        if self.layer_widths.len() != self.layers {
            problems.push(format!(
                "D_l lists {} widths for L = {}",
                self.layer_widths.len(),
                self.layers
            ));
        }
        if self.layer_widths.contains(&0) {
            problems.push("D_l entries must be positive".to_string());
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads.max(1)) {
            problems.push(format!(
                "D = {} must be divisible by heads = {}",
                self.hidden, self.heads
            ));
        }
        if self.classes < 2 {
            problems.push("classes must be at least 2".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be positive".to_string());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            problems.push("learning_rate must be a non-negative finite number".to_string());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            problems.push("lambda must be a non-negative finite number".to_string());
        }
        if !(self.epsilon_cosine.is_finite() && self.epsilon_cosine > 0.0) {
            problems.push("epsilon_cosine must be positive".to_string());
        }
        if let Some(msg) = problems.into_iter().next() {
            return Err(FusionError::Config { msg });
        }
        Ok(())
    }

    /// Parse the `key = value` text format over the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut explicit_widths = false;
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FusionError::ConfigParse {
                line: line_no,
                msg: format!("expected `key = value`, found `{}`", line),
            })?;
            let key = key.trim();
            let value = value.trim();
            let parse_err = |what: &str| FusionError::ConfigParse {
                line: line_no,
                msg: format!("invalid {} `{}`", what, value),
            };
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| parse_err("seed"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| parse_err("epochs"))?,
                "batch_size" => {
                    cfg.batch_size = value.parse().map_err(|_| parse_err("batch_size"))?
                }
                "learning_rate" => {
                    cfg.learning_rate = value.parse().map_err(|_| parse_err("learning_rate"))?
                }
                "lambda" => cfg.lambda = value.parse().map_err(|_| parse_err("lambda"))?,
                "L" => cfg.layers = value.parse().map_err(|_| parse_err("L"))?,
                "D_l" => {
                    cfg.layer_widths = value
                        .split(|c: char| c == ',' || c.is_whitespace())
                        .filter(|t| !t.is_empty())
                        .map(|t| t.parse::<usize>().map_err(|_| parse_err("D_l entry")))
                        .collect::<Result<Vec<_>>>()?;
                    explicit_widths = true;
                }
                "D" => cfg.hidden = value.parse().map_err(|_| parse_err("D"))?,
                "heads" => cfg.heads = value.parse().map_err(|_| parse_err("heads"))?,
                "classes" => cfg.classes = value.parse().map_err(|_| parse_err("classes"))?,
                "epsilon_cosine" => {
                    cfg.epsilon_cosine = value.parse().map_err(|_| parse_err("epsilon_cosine"))?
                }
                other => {
                    return Err(FusionError::ConfigParse {
                        line: line_no,
                        msg: format!("unknown key `{}`", other),
                    })
                }
            }
        }
        if !explicit_widths && cfg.layer_widths.len() != cfg.layers {
            // L changed without an explicit width list: replicate the default width.
            let width = cfg.layer_widths.first().copied().unwrap_or(16);
            cfg.layer_widths = vec![width; cfg.layers];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| FusionError::ConfigIo {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_str(&text)
    }

    /// Sum of the fused per-layer widths, the downsampler input size.
    pub fn fused_width(&self) -> usize {
        self.layer_widths.iter().map(|w| 2 * w).sum()
    }
}
