//! Pipeline configuration and its flat `key = value` file format.
//!
//! Every runtime parameter has a key; unknown keys are errors so typos
//! cannot silently fall back to defaults. `#` starts a comment.

use thiserror::Error;

use crate::consistency::ConsistencyParams;
use crate::validation::ValidationParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key '{key}'")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: expected 'key = value'")]
    BadLine { line: usize },
    #[error("line {line}: bad value '{value}' for '{key}'")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// How the prior map is built across the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapMode {
    /// Frame 0 bootstraps the map; each later frame is classified against
    /// the map so far and its static points are folded in.
    Incremental,
    /// Pass 1 accumulates every point into the map; pass 2 classifies all
    /// frames against that fixed map.
    TwoPass,
}

impl MapMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MapMode::Incremental => "incremental",
            MapMode::TwoPass => "two_pass",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_az: usize,
    pub n_el: usize,
    /// Vertical field of view; when unset it is derived per frame from the
    /// scan's observed elevation span, padded by one bin.
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    /// Ingestion range gate, meters. The far limit also truncates rays.
    pub range_min: f64,
    pub range_max: f64,
    pub voxel_size: f64,
    pub consistency: ConsistencyParams,
    pub validation: ValidationParams,
    pub map_mode: MapMode,
    pub evidence_enabled: bool,
    pub miss_threshold: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_az: 720,
            n_el: 450,
            beta_min: None,
            beta_max: None,
            range_min: 0.5,
            range_max: 60.0,
            voxel_size: 0.2,
            consistency: ConsistencyParams::default(),
            validation: ValidationParams::default(),
            map_mode: MapMode::Incremental,
            evidence_enabled: false,
            miss_threshold: 3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_az == 0 || self.n_el == 0 {
            return Err(ConfigError::Invalid("bin counts must be positive".into()));
        }
        if let (Some(lo), Some(hi)) = (self.beta_min, self.beta_max) {
            if !(lo < hi) {
                return Err(ConfigError::Invalid("need beta_min < beta_max".into()));
            }
        }
        if !(self.range_min >= 0.0 && self.range_min < self.range_max) {
            return Err(ConfigError::Invalid(
                "need 0 <= range_min < range_max".into(),
            ));
        }
        if !(self.voxel_size > 0.0) {
            return Err(ConfigError::Invalid("voxel size must be positive".into()));
        }
        if self.miss_threshold < 1 {
            return Err(ConfigError::Invalid(
                "miss threshold must be at least 1".into(),
            ));
        }
        self.consistency.validate().map_err(ConfigError::Invalid)?;
        self.validation.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    /// All effective parameters as `key = value` lines, in the order the
    /// config file format defines them. Runs write these into their output
    /// metadata so every result is reproducible from its header.
    pub fn meta_lines(&self) -> Vec<String> {
        let fmt_beta = |v: Option<f64>| match v {
            Some(x) => format!("{x}"),
            None => "auto".to_string(),
        };
        vec![
            format!("n_az = {}", self.n_az),
            format!("n_el = {}", self.n_el),
            format!("beta_min = {}", fmt_beta(self.beta_min)),
            format!("beta_max = {}", fmt_beta(self.beta_max)),
            format!("range_min = {}", self.range_min),
            format!("range_max = {}", self.range_max),
            format!("voxel_size = {}", self.voxel_size),
            format!("neighbor_radius = {}", self.consistency.neighbor_radius),
            format!("quantile = {}", self.consistency.quantile),
            format!("tau0 = {}", self.consistency.tau0),
            format!("tau1 = {}", self.consistency.tau1),
            format!("cluster_eps0 = {}", self.validation.eps0),
            format!("cluster_eps1 = {}", self.validation.eps1),
            format!("size_rule_scale = {}", self.validation.size_rule_scale),
            format!("width_rule_angle = {}", self.validation.width_rule_angle),
            format!("min_cluster_size = {}", self.validation.min_cluster_size),
            format!(
                "min_cluster_diameter = {}",
                self.validation.min_cluster_diameter
            ),
            format!("map_dilation = {}", self.validation.map_dilation),
            format!(
                "coverage_threshold = {}",
                self.validation.coverage_threshold
            ),
            format!(
                "edge_coverage_threshold = {}",
                self.validation.edge_coverage_threshold
            ),
            format!("thin_threshold = {}", self.validation.thin_threshold),
            format!("map_mode = {}", self.map_mode.as_str()),
            format!("evidence_enabled = {}", self.evidence_enabled),
            format!("miss_threshold = {}", self.miss_threshold),
        ]
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse::<T>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_finite(line: usize, key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = parse_num(line, key, value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
        })
    }
}

/// Parses the flat key/value config format on top of the defaults.
pub fn parse_config_str(text: &str) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => return Err(ConfigError::BadLine { line: line_no }),
        };
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::BadLine { line: line_no });
        }
        if seen.iter().any(|k| k == key) {
            return Err(ConfigError::DuplicateKey {
                line: line_no,
                key: key.to_string(),
            });
        }
        seen.push(key.to_string());

        match key {
            "n_az" => cfg.n_az = parse_num(line_no, key, value)?,
            "n_el" => cfg.n_el = parse_num(line_no, key, value)?,
            "beta_min" => cfg.beta_min = Some(parse_finite(line_no, key, value)?),
            "beta_max" => cfg.beta_max = Some(parse_finite(line_no, key, value)?),
            "range_min" => cfg.range_min = parse_finite(line_no, key, value)?,
            "range_max" => cfg.range_max = parse_finite(line_no, key, value)?,
            "voxel_size" => cfg.voxel_size = parse_finite(line_no, key, value)?,
            "neighbor_radius" => cfg.consistency.neighbor_radius = parse_num(line_no, key, value)?,
            "quantile" => cfg.consistency.quantile = parse_finite(line_no, key, value)?,
            "tau0" => cfg.consistency.tau0 = parse_finite(line_no, key, value)?,
            "tau1" => cfg.consistency.tau1 = parse_finite(line_no, key, value)?,
            "cluster_eps0" => cfg.validation.eps0 = parse_finite(line_no, key, value)?,
            "cluster_eps1" => cfg.validation.eps1 = parse_finite(line_no, key, value)?,
            "size_rule_scale" => {
                cfg.validation.size_rule_scale = parse_finite(line_no, key, value)?
            }
            "width_rule_angle" => {
                cfg.validation.width_rule_angle = parse_finite(line_no, key, value)?
            }
            "min_cluster_size" => cfg.validation.min_cluster_size = parse_num(line_no, key, value)?,
            "min_cluster_diameter" => {
                cfg.validation.min_cluster_diameter = parse_finite(line_no, key, value)?
            }
            "map_dilation" => cfg.validation.map_dilation = parse_num(line_no, key, value)?,
            "coverage_threshold" => {
                cfg.validation.coverage_threshold = parse_finite(line_no, key, value)?
            }
            "edge_coverage_threshold" => {
                cfg.validation.edge_coverage_threshold = parse_finite(line_no, key, value)?
            }
            "thin_threshold" => cfg.validation.thin_threshold = parse_finite(line_no, key, value)?,
            "map_mode" => {
                cfg.map_mode = match value {
                    "incremental" => MapMode::Incremental,
                    "two_pass" => MapMode::TwoPass,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line: line_no,
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "evidence_enabled" => {
                cfg.evidence_enabled = match value {
                    "true" => true,
                    "false" => false,
                    _ => {
                        return Err(ConfigError::BadValue {
                            line: line_no,
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "miss_threshold" => cfg.miss_threshold = parse_num(line_no, key, value)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line: line_no,
                    key: key.to_string(),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let cfg = PipelineConfig::default();
        assert_eq!((cfg.n_az, cfg.n_el), (720, 450));
        assert_eq!(cfg.range_max, 60.0);
        assert_eq!(cfg.voxel_size, 0.2);
        assert_eq!(cfg.consistency.tau0, 0.30);
        assert_eq!(cfg.consistency.tau1, 0.35);
        assert_eq!(cfg.consistency.neighbor_radius, 1);
        assert_eq!(cfg.consistency.quantile, 0.9);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn parses_overrides_and_comments() {
        let text = "\
# comment
voxel_size = 0.1   # trailing comment
quantile = 0.5
map_mode = two_pass
evidence_enabled = true
";
        let cfg = parse_config_str(text).unwrap();
        assert_eq!(cfg.voxel_size, 0.1);
        assert_eq!(cfg.consistency.quantile, 0.5);
        assert_eq!(cfg.map_mode, MapMode::TwoPass);
        assert!(cfg.evidence_enabled);
        // Untouched keys keep defaults.
        assert_eq!(cfg.n_az, 720);
    }

    #[test]
    fn unknown_and_duplicate_keys_error() {
        match parse_config_str("not_a_key = 1\n") {
            Err(ConfigError::UnknownKey { line: 1, key }) => assert_eq!(key, "not_a_key"),
            other => panic!("unexpected {other:?}"),
        }
        match parse_config_str("tau0 = 0.3\ntau0 = 0.4\n") {
            Err(ConfigError::DuplicateKey { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_config_str("tau0 0.3\n"),
            Err(ConfigError::BadLine { line: 1 })
        ));
    }

    #[test]
    fn semantic_validation_runs() {
        assert!(parse_config_str("quantile = 1.5\n").is_err());
        assert!(parse_config_str("beta_min = 0.5\nbeta_max = -0.5\n").is_err());
        assert!(parse_config_str("range_min = 70\n").is_err());
        assert!(parse_config_str("edge_coverage_threshold = 0.9\n").is_err());
    }

    #[test]
    fn meta_lines_round_trip_through_parser() {
        let mut cfg = PipelineConfig::default();
        cfg.voxel_size = 0.25;
        cfg.map_mode = MapMode::TwoPass;
        let text: String = cfg
            .meta_lines()
            .iter()
            .filter(|l| !l.contains("auto"))
            .cloned()
            .collect::<Vec<_>>()
            .join("\n");
        let parsed = parse_config_str(&text).unwrap();
        assert_eq!(parsed, cfg);
    }
}
