//! Flat key=value config files and their mapping onto [`TrainConfig`].
//!
//! Grammar: one `key=value` pair per line; blank lines and lines starting
//! with `#` are ignored; whitespace around keys and values is trimmed.

use crate::deform::ConstraintDrops;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().to_string())),
            None => {
                return Err(Error::Parse {
                    line: i + 1,
                    detail: format!("expected key=value, got '{}'", line),
                })
            }
        }
    }
    Ok(out)
}

fn parse_drops(value: &str) -> Result<ConstraintDrops> {
    match value {
        "all" => return Ok(ConstraintDrops::all()),
        "none" | "" => return Ok(ConstraintDrops::none()),
        _ => {}
    }
    let mut drops = ConstraintDrops::none();
    for part in value.split(',') {
        match part.trim() {
            "orth" => drops.orth = true,
            "rot" => drops.rot = true,
            "sigma" => drops.sigma = true,
            "trans" => drops.trans = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown constraint '{}' (expected orth,rot,sigma,trans,all,none)",
                    other
                )))
            }
        }
    }
    Ok(drops)
}

fn drops_string(d: &ConstraintDrops) -> String {
    if *d == ConstraintDrops::all() {
        return "all".to_string();
    }
    let mut parts = Vec::new();
    if d.orth {
        parts.push("orth");
    }
    if d.rot {
        parts.push("rot");
    }
    if d.sigma {
        parts.push("sigma");
    }
    if d.trans {
        parts.push("trans");
    }
    if parts.is_empty() {
        "none".to_string()
    } else {
        parts.join(",")
    }
}

/// Apply one key=value override. Unknown keys are rejected.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("invalid {} value '{}'", what, value));
    match key {
        "alpha" => cfg.alpha = value.parse().map_err(|_| bad(key))?,
        "beta" => cfg.beta = value.parse().map_err(|_| bad(key))?,
        "gamma" => cfg.gamma = value.parse().map_err(|_| bad(key))?,
        "delta" => cfg.delta = value.parse().map_err(|_| bad(key))?,
        "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad(key))?,
        "adam_beta1" => cfg.adam_beta1 = value.parse().map_err(|_| bad(key))?,
        "adam_beta2" => cfg.adam_beta2 = value.parse().map_err(|_| bad(key))?,
        "adam_epsilon" => cfg.adam_epsilon = value.parse().map_err(|_| bad(key))?,
        "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad(key))?,
        "epochs" => cfg.epochs = value.parse().map_err(|_| bad(key))?,
        "seed" => cfg.seed = value.parse().map_err(|_| bad(key))?,
        "augment" => cfg.augment = value.parse().map_err(|_| bad(key))?,
        "probe_size" => cfg.probe_size = value.parse().map_err(|_| bad(key))?,
        "no_global_align" => cfg.toggles.no_global_align = value.parse().map_err(|_| bad(key))?,
        "chamfer_global_align" => {
            cfg.toggles.chamfer_global_align = value.parse().map_err(|_| bad(key))?
        }
        "reverse_global_align" => {
            cfg.toggles.reverse_global_align = value.parse().map_err(|_| bad(key))?
        }
        "no_stroke_feature" => {
            cfg.toggles.no_stroke_feature = value.parse().map_err(|_| bad(key))?
        }
        "drop_constraints" => cfg.toggles.drop_constraints = parse_drops(value)?,
        other => return Err(Error::Config(format!("unknown config key '{}'", other))),
    }
    Ok(())
}

/// Build a config from defaults plus pairs.
pub fn train_config_from(pairs: &[(String, String)]) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in pairs {
        apply_key(&mut cfg, k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a config as key=value lines (the checkpoint echo).
pub fn echo(cfg: &TrainConfig) -> String {
    format!(
        "alpha={}\nbeta={}\ngamma={}\ndelta={}\nlearning_rate={}\nadam_beta1={}\nadam_beta2={}\nadam_epsilon={}\nbatch_size={}\nepochs={}\nseed={}\naugment={}\nprobe_size={}\nno_global_align={}\nchamfer_global_align={}\nreverse_global_align={}\nno_stroke_feature={}\ndrop_constraints={}\n",
        cfg.alpha,
        cfg.beta,
        cfg.gamma,
        cfg.delta,
        cfg.learning_rate,
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_epsilon,
        cfg.batch_size,
        cfg.epochs,
        cfg.seed,
        cfg.augment,
        cfg.probe_size,
        cfg.toggles.no_global_align,
        cfg.toggles.chamfer_global_align,
        cfg.toggles.reverse_global_align,
        cfg.toggles.no_stroke_feature,
        drops_string(&cfg.toggles.drop_constraints),
    )
}
