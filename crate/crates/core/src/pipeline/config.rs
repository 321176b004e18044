use std::collections::BTreeMap;

use serde::Deserialize;

use super::{PipelineError, RunConfig};
use crate::refine::EntryConstraint;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    refine: Option<RefineSection>,
    verify: Option<VerifySection>,
    #[serde(default)]
    functions: BTreeMap<String, FunctionSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineSection {
    enabled: Option<bool>,
    loop_cap: Option<usize>,
    path_cap: Option<usize>,
    domain: Option<[i32; 2]>,
    skip_known: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifySection {
    window: Option<usize>,
    depth: Option<usize>,
    domain: Option<[i32; 2]>,
    max_runs: Option<usize>,
    max_inputs: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FunctionSection {
    #[serde(default)]
    constraints: Vec<String>,
}

fn range(d: [i32; 2], what: &str) -> Result<std::ops::RangeInclusive<i32>, PipelineError> {
    if d[0] > d[1] {
        return Err(PipelineError::Config(format!("{what} domain [{}, {}] is empty", d[0], d[1])));
    }
    Ok(d[0]..=d[1])
}

/// Applies a TOML config on top of `cfg`.
///
/// ```toml
/// [refine]
/// loop_cap = 16
/// domain = [0, 15]
///
/// [verify]
/// window = 16
///
/// [functions.sort]
/// constraints = ["n >= 0"]
/// ```
pub fn apply_config(cfg: &mut RunConfig, text: &str) -> Result<(), PipelineError> {
    let file: File = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
    if let Some(r) = file.refine {
        if let Some(v) = r.enabled {
            cfg.refine = v;
        }
        if let Some(v) = r.loop_cap {
            cfg.refine_limits.loop_cap = v;
        }
        if let Some(v) = r.path_cap {
            cfg.refine_limits.path_cap = v;
        }
        if let Some(d) = r.domain {
            cfg.refine_limits.domain = range(d, "refine")?;
        }
        if let Some(v) = r.skip_known {
            cfg.refine_limits.skip_known = v;
        }
    }
    if let Some(v) = file.verify {
        if let Some(w) = v.window {
            cfg.verify_limits.window = w;
        }
        if let Some(d) = v.depth {
            cfg.verify_limits.depth = d;
        }
        if let Some(d) = v.domain {
            cfg.verify_limits.domain = range(d, "verify")?;
        }
        if let Some(m) = v.max_runs {
            cfg.verify_limits.max_runs = m;
        }
        if let Some(m) = v.max_inputs {
            cfg.verify_limits.max_inputs = m;
        }
    }
    for (name, sec) in file.functions {
        let cs = sec
            .constraints
            .iter()
            .map(|c| c.parse::<EntryConstraint>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.constraints.insert(name, cs);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config() {
        let mut cfg = RunConfig::default();
        let text = "[refine]\nloop_cap = 3\ndomain = [0, 7]\n[verify]\nwindow = 8\n[functions.sort]\nconstraints = [\"n >= 2\"]\n";
        apply_config(&mut cfg, text).unwrap();
        assert_eq!(cfg.refine_limits.loop_cap, 3);
        assert_eq!(cfg.refine_limits.domain, 0..=7);
        assert_eq!(cfg.verify_limits.window, 8);
        assert_eq!(cfg.constraints["sort"][0].to_string(), "n >= 2");
    }

    #[test]
    fn bad_configs() {
        let mut cfg = RunConfig::default();
        assert!(apply_config(&mut cfg, "[refine]\nloop_limit = 3\n").is_err());
        assert!(apply_config(&mut cfg, "[functions.f]\nconstraints = [\"n >>= 2\"]\n").is_err());
        assert!(apply_config(&mut cfg, "[verify]\ndomain = [3, 0]\n").is_err());
    }
}
