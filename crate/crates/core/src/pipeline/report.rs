use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use super::{PipelineOutput, RunConfig};
use crate::cfg::Cfg;
use crate::ir::{pretty_print, Program};
use crate::knowledge::{edge_labels, FunctionSummary};
use crate::oracle::{Verdict as PropVerdict, Witness};
use crate::protect::{barrier_labels, CallRedirect, Mode};
use crate::refine::Verdict;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EdgeReport {
    pub from: String,
    pub to: String,
    pub known: BTreeSet<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct KnowledgeReport {
    pub edges: Vec<EdgeReport>,
    pub blocks: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct QueryReport {
    pub header: String,
    pub variable: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefinementReport {
    pub regions: Vec<String>,
    pub queries: Vec<QueryReport>,
    pub skipped: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PlanReport {
    pub mode: Mode,
    pub barriers: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub redirects: Vec<CallRedirect>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionReport {
    pub name: String,
    pub blocks: usize,
    pub loops_expanded: usize,
    pub summary: FunctionSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<KnowledgeReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontiers: Option<BTreeMap<String, Vec<String>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protection: Option<PlanReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub function: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub functions: Vec<FunctionReport>,
    /// Barrier blocks of every function that has any.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub barriers: BTreeMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub verification: Vec<VerificationReport>,
    /// The protected program, originals followed by clones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protected: Option<String>,
    /// Seconds per phase.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub timing: BTreeMap<String, f64>,
}

impl Report {
    /// Functions appear in program order.
    pub fn new(p: &Program, out: &PipelineOutput, cfg: &RunConfig) -> Report {
        let mut functions = Vec::new();
        let mut barriers = BTreeMap::new();
        for f in &p.functions {
            let Some(r) = out.function(&f.name) else { continue };
            let base = r.base();
            let bcfg = Cfg::build(base);
            let knowledge = cfg.emit_knowledge.then(|| KnowledgeReport {
                edges: edge_labels(&bcfg)
                    .into_iter()
                    .zip(r.knowledge.sets())
                    .map(|((from, to), known)| EdgeReport { from, to, known: known.clone() })
                    .collect(),
                blocks: base
                    .blocks
                    .iter()
                    .map(|b| b.label.clone())
                    .zip(r.block_knowledge.sets().iter().cloned())
                    .collect(),
            });
            let frontiers = cfg.emit_frontiers.then(|| r.frontiers.labels(&bcfg));
            let refinement = r.refinement.as_ref().map(|rf| RefinementReport {
                regions: rf.regions.iter().map(|g| base.blocks[g.header].label.clone()).collect(),
                queries: rf
                    .results
                    .iter()
                    .map(|q| QueryReport {
                        header: base.blocks[q.region.header].label.clone(),
                        variable: q.variable.clone(),
                        verdict: q.verdict.clone(),
                    })
                    .collect(),
                skipped: rf.skipped,
            });
            let protection = r.plan.as_ref().map(|plan| {
                let labels = barrier_labels(base, plan);
                if !labels.is_empty() {
                    barriers.insert(r.name.clone(), labels.clone());
                }
                PlanReport { mode: plan.mode, barriers: labels, redirects: plan.redirects.clone() }
            });
            functions.push(FunctionReport {
                name: r.name.clone(),
                blocks: base.blocks.len(),
                loops_expanded: r.expanded.loops_expanded,
                summary: r.summary.clone(),
                knowledge,
                frontiers,
                refinement,
                protection,
            });
        }
        let verification = out
            .verification
            .iter()
            .map(|v| match &v.verdict {
                PropVerdict::Pass { runs } => {
                    VerificationReport { function: v.function.clone(), pass: true, runs: Some(*runs), witness: None }
                }
                PropVerdict::Fail(w) => VerificationReport {
                    function: v.function.clone(),
                    pass: false,
                    runs: None,
                    witness: Some((**w).clone()),
                },
            })
            .collect();
        Report {
            functions,
            barriers,
            verification,
            protected: out.protected.as_ref().filter(|p| !p.functions.is_empty()).map(pretty_print),
            timing: out.timing.iter().cloned().collect(),
        }
    }

    /// Every verified function passed.
    pub fn verified(&self) -> bool {
        self.verification.iter().all(|v| v.pass)
    }
}

fn set(s: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let v: Vec<String> = s.into_iter().map(|x| x.as_ref().to_string()).collect();
    format!("{{{}}}", v.join(", "))
}

fn text(r: &Report) -> String {
    let mut o = String::new();
    for f in &r.functions {
        let s = &f.summary;
        let _ = writeln!(o, "fn {} ({} blocks, {} loops expanded)", f.name, f.blocks, f.loops_expanded);
        let _ = writeln!(o, "  leaked args: {}", set(s.leaked_args.iter().map(|j| j.to_string())));
        let _ = writeln!(o, "  declassified params: {}", set(s.declassified_params.iter().map(|j| j.to_string())));
        let _ = writeln!(o, "  internal leaks: {}", set(&s.internal_leaks));
        let _ = writeln!(o, "  fully declassified: {}", s.is_fully_declassified);
        let _ = writeln!(o, "  pseudo transmitter: {}", s.is_pseudo_transmitter);
        if let Some(k) = &f.knowledge {
            for e in &k.edges {
                let _ = writeln!(o, "  edge {} -> {}: {}", e.from, e.to, set(&e.known));
            }
        }
        if let Some(fr) = &f.frontiers {
            for (v, bs) in fr {
                let _ = writeln!(o, "  F({v}) = {}", set(bs));
            }
        }
        if let Some(rf) = &f.refinement {
            for q in &rf.queries {
                let v = match &q.verdict {
                    Verdict::Inevitable => "inevitable".to_string(),
                    Verdict::Escapable { witness } => format!("escapable via {}", witness.path.join(" ")),
                    Verdict::Unknown { reason } => format!("unknown ({reason})"),
                };
                let _ = writeln!(o, "  refine {} in region {}: {v}", q.variable, q.header);
            }
        }
        if let Some(pl) = &f.protection {
            let mode = match pl.mode {
                Mode::Callee => "callee",
                Mode::Caller => "caller",
            };
            let _ = writeln!(o, "  barriers ({mode}): {}", set(&pl.barriers));
        }
    }
    for v in &r.verification {
        match &v.witness {
            None => {
                let _ = writeln!(o, "verify {}: PASS ({} runs)", v.function, v.runs.unwrap_or(0));
            }
            Some(w) => {
                let ob = &w.observation;
                let _ = writeln!(
                    o,
                    "verify {}: FAIL args {:?} inputs {:?} schedule {:?}: {:?} in {}/{}",
                    v.function, w.args, w.inputs, w.schedule, ob.kind, ob.function, ob.block
                );
            }
        }
    }
    for (k, t) in &r.timing {
        let _ = writeln!(o, "time {k}: {t:.6}s");
    }
    o
}

pub fn emit_report(r: &Report, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(r).expect("report serializes"),
        Format::Text => text(r),
    }
}
