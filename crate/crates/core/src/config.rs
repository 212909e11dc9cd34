//! Flat `key=value` fit configuration files.
//!
//! ```text
//! # comments and blank lines are ignored
//! rank=3
//! t_iter=100
//! outer_tol=1e-6
//! rho=1
//! rho_rule=fixed            # or design_scaled
//! admm_tol=1e-5
//! seed=7
//! init=random_uniform_nonneg  # random_gaussian, or warm:<model.nskm>
//! mode.1.lambda1=0.5
//! mode.2.lambda2=5.0
//! mode.2.nonneg=true
//! ```
//!
//! Mode numbers start at 1. Absent keys keep their defaults, and modes
//! without a block stay unpenalized. Unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;

use crate::admm::RhoRule;
use crate::error::{NsktrError, Result};
use crate::io::read_model;
use crate::model::{FitOptions, Init};
use crate::regularizer::ModeRegConfig;

/// Parses configuration text. Warm-start paths are resolved relative to
/// `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<FitOptions> {
    let mut opts = FitOptions::default();
    let mut modes: Vec<Option<ModeRegConfig>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |detail: String| NsktrError::ConfigParse { line: line_no, detail };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key=value, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| parse_err(format!("`{key}`: `{v}` is not a number")))
        };
        let int = |v: &str| -> Result<u64> {
            v.parse::<u64>()
                .map_err(|_| parse_err(format!("`{key}`: `{v}` is not a nonnegative integer")))
        };
        let domain = |detail: &str| NsktrError::ConfigDomain {
            key: key.to_string(),
            detail: detail.to_string(),
        };
        match key {
            "rank" => {
                opts.rank = int(value)? as usize;
                if opts.rank == 0 {
                    return Err(domain("must be at least 1"));
                }
            }
            "t_iter" => {
                opts.outer_iters = int(value)? as usize;
                if opts.outer_iters == 0 {
                    return Err(domain("must be at least 1"));
                }
            }
            "outer_tol" => {
                opts.outer_tol = num(value)?;
                if !(opts.outer_tol >= 0.0) {
                    return Err(domain("must be >= 0"));
                }
            }
            "rho" => {
                opts.admm.rho = num(value)?;
                if !(opts.admm.rho > 0.0 && opts.admm.rho.is_finite()) {
                    return Err(domain("must be > 0"));
                }
            }
            "rho_rule" => {
                opts.admm.rho_rule = match value {
                    "fixed" => RhoRule::Fixed,
                    "design_scaled" => RhoRule::DesignScaled,
                    other => return Err(parse_err(format!("`{key}`: unknown rule `{other}`"))),
                }
            }
            "admm_tol" => {
                opts.admm.tol = num(value)?;
                if !(opts.admm.tol > 0.0) {
                    return Err(domain("must be > 0"));
                }
            }
            "seed" => opts.seed = int(value)?,
            "init" => {
                opts.init = match value {
                    "random_uniform_nonneg" => Init::RandomUniformNonneg,
                    "random_gaussian" => Init::RandomGaussian,
                    v => match v.strip_prefix("warm:") {
                        Some(path) => Init::Warm(read_model(base_dir.join(path.trim()))?.model),
                        None => return Err(parse_err(format!("`{key}`: unknown init `{v}`"))),
                    },
                }
            }
            _ => {
                let rest = key
                    .strip_prefix("mode.")
                    .ok_or_else(|| parse_err(format!("unknown key `{key}`")))?;
                let (d, field) = rest
                    .split_once('.')
                    .ok_or_else(|| parse_err(format!("unknown key `{key}`")))?;
                let d: usize = d
                    .parse()
                    .ok()
                    .filter(|&d| d >= 1)
                    .ok_or_else(|| parse_err(format!("`{key}`: mode numbers start at 1")))?;
                if modes.len() < d {
                    modes.resize(d, None);
                }
                let cfg = modes[d - 1].get_or_insert_with(ModeRegConfig::default);
                match field {
                    "lambda1" | "lambda2" | "lambda3" => {
                        let v = num(value)?;
                        if !(v >= 0.0 && v.is_finite()) {
                            return Err(domain("penalty weights must be finite and >= 0"));
                        }
                        match field {
                            "lambda1" => cfg.lambda1 = v,
                            "lambda2" => cfg.lambda2 = v,
                            _ => cfg.lambda3 = v,
                        }
                    }
                    "nonneg" => {
                        cfg.nonneg = match value {
                            "true" | "1" => true,
                            "false" | "0" => false,
                            v => return Err(parse_err(format!("`{key}`: `{v}` is not a boolean"))),
                        }
                    }
                    _ => return Err(parse_err(format!("unknown key `{key}`"))),
                }
            }
        }
    }
    opts.per_mode = modes.into_iter().map(Option::unwrap_or_default).collect();
    Ok(opts)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<FitOptions> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| NsktrError::io(path, e))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}

/// Renders options back into the file format. A warm start cannot be
/// expressed without a model path, so it is written as the default init.
pub fn format_config(opts: &FitOptions) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "rank={}", opts.rank);
    let _ = writeln!(out, "t_iter={}", opts.outer_iters);
    let _ = writeln!(out, "outer_tol={:?}", opts.outer_tol);
    let _ = writeln!(out, "rho={:?}", opts.admm.rho);
    let rule = match opts.admm.rho_rule {
        RhoRule::Fixed => "fixed",
        RhoRule::DesignScaled => "design_scaled",
    };
    let _ = writeln!(out, "rho_rule={rule}");
    let _ = writeln!(out, "admm_tol={:?}", opts.admm.tol);
    let _ = writeln!(out, "seed={}", opts.seed);
    let init = match opts.init {
        Init::RandomGaussian => "random_gaussian",
        _ => "random_uniform_nonneg",
    };
    let _ = writeln!(out, "init={init}");
    for (d, cfg) in opts.per_mode.iter().enumerate() {
        let _ = writeln!(out, "mode.{}.lambda1={:?}", d + 1, cfg.lambda1);
        let _ = writeln!(out, "mode.{}.lambda2={:?}", d + 1, cfg.lambda2);
        let _ = writeln!(out, "mode.{}.lambda3={:?}", d + 1, cfg.lambda3);
        let _ = writeln!(out, "mode.{}.nonneg={}", d + 1, cfg.nonneg);
    }
    out
}
