//! The full analysis: knowledge, frontiers and summaries per function in
//! callee-first order, optional refinement of functions that are not fully
//! declassified, barrier placement and verification.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::cfg::{dominators, expand_loops, Cfg, CfgError, ExpandedFunction};
use crate::frontier::{block_knowledge, compute_frontiers, BlockKnowledge, Frontier};
use crate::ir::{Function, Inst, Program};
use crate::knowledge::{
    init_knowledge, project_to_original, propagate, propagate_seeded, summarize, FunctionSummary, KnowledgeError,
    KnowledgeMap,
};
use crate::oracle::{check_frontier_property, FrontierMap, OracleError, PropertyConfig, Verdict};
use crate::protect::{emit_protected, plan_protection, protected_name, ProtectionPlan};
use crate::refine::{refine_function, EntryConstraint, RefineConfig, RefineError, Refinement};

pub use config::apply_config;
pub use report::{emit_report, Format, Report};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("function `{function}`: {source}")]
    Refine { function: String, source: RefineError },
    #[error("verifying `{function}`: {source}")]
    Verify { function: String, source: OracleError },
    #[error("config: {0}")]
    Config(String),
    #[error("`{caller}` was reached before its callee `{callee}`")]
    Order { caller: String, callee: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub refine: bool,
    pub protect: bool,
    pub verify: bool,
    /// Verify the functions as written instead of their protected clones.
    pub verify_unprotected: bool,
    pub refine_limits: RefineConfig,
    /// Entry constraints per function name.
    pub constraints: BTreeMap<String, Vec<EntryConstraint>>,
    pub verify_limits: PropertyConfig,
    pub emit_knowledge: bool,
    pub emit_frontiers: bool,
    /// Process worklist tasks in an order drawn from this seed.
    pub seed: Option<u64>,
    /// Record wall time per phase in the report.
    pub timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            refine: true,
            protect: true,
            verify: false,
            verify_unprotected: false,
            refine_limits: RefineConfig::default(),
            constraints: BTreeMap::new(),
            verify_limits: PropertyConfig::default(),
            emit_knowledge: false,
            emit_frontiers: false,
            seed: None,
            timing: false,
        }
    }
}

/// Everything computed for one function.
#[derive(Clone, Debug)]
pub struct FunctionResult {
    pub name: String,
    pub expanded: ExpandedFunction,
    /// Knowledge on the edges of the loop-simplified function.
    pub knowledge: KnowledgeMap,
    pub block_knowledge: BlockKnowledge,
    pub frontiers: Frontier,
    pub summary: FunctionSummary,
    pub refinement: Option<Refinement>,
    pub plan: Option<ProtectionPlan>,
}

impl FunctionResult {
    /// The analyzed (loop-simplified) function.
    pub fn base(&self) -> &Function {
        &self.expanded.base
    }
}

#[derive(Clone, Debug)]
pub struct VerifyResult {
    pub function: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    /// In callee-first order.
    pub functions: Vec<FunctionResult>,
    pub protected: Option<Program>,
    pub verification: Vec<VerifyResult>,
    pub timing: Vec<(String, f64)>,
}

impl PipelineOutput {
    pub fn function(&self, name: &str) -> Option<&FunctionResult> {
        self.functions.iter().find(|f| f.name == name)
    }

    /// `limits` with the functions whose callers enforce their frontiers:
    /// pseudo transmitters that are not top level.
    pub fn property_config(&self, p: &Program, limits: &PropertyConfig) -> PropertyConfig {
        let top = p.top_level();
        let enforced = self
            .functions
            .iter()
            .filter(|r| r.summary.is_pseudo_transmitter && !top.contains(&r.name.as_str()))
            .map(|r| r.name.clone())
            .collect();
        PropertyConfig { enforced, ..limits.clone() }
    }

    /// Frontier labels of every function, keyed by function name.
    pub fn frontier_map(&self) -> FrontierMap {
        self.functions
            .iter()
            .map(|r| {
                (
                    r.name.clone(),
                    r.frontiers
                        .labels(&Cfg::build(r.base()))
                        .into_iter()
                        .map(|(v, bs)| (v, bs.into_iter().collect()))
                        .collect(),
                )
            })
            .collect()
    }
}

/// Drops blocks unreachable from the entry, and φ entries naming them.
pub fn prune_unreachable(f: &Function) -> Function {
    let cfg = Cfg::build(f);
    let mut seen = vec![false; f.blocks.len()];
    if f.blocks.is_empty() {
        return f.clone();
    }
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(b) = stack.pop() {
        for &s in &cfg.succs[b] {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    if seen.iter().all(|&s| s) {
        return f.clone();
    }
    let dead: BTreeSet<&str> =
        f.blocks.iter().zip(&seen).filter(|(_, s)| !**s).map(|(b, _)| b.label.as_str()).collect();
    let mut g = f.clone();
    g.blocks.retain(|b| !dead.contains(b.label.as_str()));
    for b in &mut g.blocks {
        for inst in &mut b.insts {
            if let Inst::Phi { incoming, .. } = inst {
                incoming.retain(|(_, l)| !dead.contains(l.as_str()));
            }
        }
    }
    g
}

/// Knowledge of one function on the edges of its loop-simplified form.
pub fn analyze_edges(
    f: &Function,
    summaries: &BTreeMap<String, FunctionSummary>,
    seed: Option<u64>,
) -> Result<(ExpandedFunction, KnowledgeMap), PipelineError> {
    let ef = expand_loops(&prune_unreachable(f))?;
    let init = init_knowledge(&ef.function, summaries)?;
    let km = match seed {
        Some(s) => propagate_seeded(init, &ef.function, s),
        None => propagate(init, &ef.function),
    };
    let projected = project_to_original(&km, &ef);
    Ok((ef, projected))
}

fn frontiers_of(f: &Function, kb: &BlockKnowledge, cfg: &Cfg) -> Frontier {
    compute_frontiers(kb, cfg, f.variables())
}

fn time<T>(timing: &mut Vec<(String, f64)>, label: String, on: bool, run: impl FnOnce() -> T) -> T {
    let t0 = Instant::now();
    let out = run();
    if on {
        timing.push((label, t0.elapsed().as_secs_f64()));
    }
    out
}

/// Runs the enabled passes over `p`.
pub fn run_pipeline(p: &Program, cfg: &RunConfig) -> Result<PipelineOutput, PipelineError> {
    let mut timing = Vec::new();
    let mut summaries: BTreeMap<String, FunctionSummary> = BTreeMap::new();
    let mut results = Vec::new();
    for i in p.callee_first_order() {
        let f = &p.functions[i];
        for c in f.callees() {
            if p.function(c).is_some() && !summaries.contains_key(c) {
                return Err(PipelineError::Order { caller: f.name.clone(), callee: c.to_string() });
            }
        }
        let (ef, km) =
            time(&mut timing, format!("{}/knowledge", f.name), cfg.timing, || analyze_edges(f, &summaries, cfg.seed))?;
        let bcfg = Cfg::build(&ef.base);
        let mut kb = block_knowledge(&km, &bcfg);
        let mut frontiers = frontiers_of(&ef.base, &kb, &bcfg);
        let mut summary = summarize(&ef, &kb, &frontiers, &summaries)?;
        let mut refinement = None;
        if cfg.refine && !summary.is_fully_declassified {
            let mut rc = cfg.refine_limits.clone();
            rc.constraints = cfg.constraints.get(&f.name).cloned().unwrap_or_default();
            let dom = dominators(&bcfg, &ef.base.name)?;
            let r = time(&mut timing, format!("{}/refine", f.name), cfg.timing, || {
                refine_function(p, &ef.base, &dom, &kb, &rc)
            })
            .map_err(|source| PipelineError::Refine { function: f.name.clone(), source })?;
            kb = r.kb.clone();
            frontiers = frontiers_of(&ef.base, &kb, &bcfg);
            summary = summarize(&ef, &kb, &frontiers, &summaries)?;
            refinement = Some(r);
        }
        summaries.insert(f.name.clone(), summary.clone());
        results.push(FunctionResult {
            name: f.name.clone(),
            expanded: ef,
            knowledge: km,
            block_knowledge: kb,
            frontiers,
            summary,
            refinement,
            plan: None,
        });
    }

    let mut out = PipelineOutput { functions: results, protected: None, verification: Vec::new(), timing: Vec::new() };
    if cfg.protect || cfg.verify {
        let top: BTreeSet<&str> = p.top_level().into_iter().collect();
        let mut plans = BTreeMap::new();
        for r in &mut out.functions {
            let plan = plan_protection(r.base(), &r.frontiers, &r.summary, &summaries, top.contains(r.name.as_str()))?;
            plans.insert(r.name.clone(), plan.clone());
            r.plan = Some(plan);
        }
        let bases = Program {
            functions: p.functions.iter().map(|f| out.function(&f.name).unwrap().base().clone()).collect(),
            entry_function: p.entry_function.clone(),
        };
        let mut prot = emit_protected(&bases, &plans);
        // keep the functions as written; only the clones use the simplified form
        prot.functions[..p.functions.len()].clone_from_slice(&p.functions);
        out.protected = Some(prot);
    }
    if cfg.verify {
        let fm = out.frontier_map();
        let pc = out.property_config(p, &cfg.verify_limits);
        let prot = out.protected.as_ref().unwrap();
        for name in p.top_level() {
            let verdict = time(&mut timing, format!("{name}/verify"), cfg.timing, || {
                let target = if cfg.verify_unprotected { name.to_string() } else { protected_name(name) };
                check_frontier_property(prot, &target, &fm, &pc)
            })
            .map_err(|source| PipelineError::Verify { function: name.to_string(), source })?;
            out.verification.push(VerifyResult { function: name.to_string(), verdict });
        }
    }
    out.timing = timing;
    Ok(out)
}
