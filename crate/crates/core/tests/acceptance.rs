mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use common::{edge, frontier, load, run, set, FIXTURES};
use declassiflow_core::cfg::expand_loops;
use declassiflow_core::gen::{random_program, GenConfig};
use declassiflow_core::ir::{Inst, Program};
use declassiflow_core::knowledge::{init_knowledge, propagate, propagate_seeded};
use declassiflow_core::oracle::{check_frontier_property, exact_knowledge, replay, Verdict};
use declassiflow_core::pipeline::{analyze_edges, emit_report, run_pipeline, Format, Report};
use declassiflow_core::protect::{count_barriers, protected_name};
use declassiflow_core::refine::Verdict as Refined;
use rand::rngs::StdRng;
use rand::SeedableRng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn expect_edge(
    r: &declassiflow_core::pipeline::FunctionResult,
    from: &str,
    to: &str,
    want: &[&str],
) -> Result<(), String> {
    let got = edge(r, from, to);
    ensure(got == set(want), || format!("{from}->{to}: got {got:?}, want {want:?}"))
}

fn expect_frontier(r: &declassiflow_core::pipeline::FunctionResult, v: &str, want: &[&str]) -> Result<(), String> {
    let got = frontier(r, v);
    ensure(got == set(want), || format!("F({v}): got {got:?}, want {want:?}"))
}

/// Every analyzed edge set must be contained in what the runs reveal.
/// Returns the analyzed and exact set sizes summed over edges.
fn below_exact(p: &Program) -> Result<(usize, usize), String> {
    let mut sizes = (0, 0);
    for f in &p.functions {
        let (ef, km) = analyze_edges(f, &BTreeMap::new(), None).map_err(|e| e.to_string())?;
        let exact = exact_knowledge(&ef.base, 0..=3, 1 << 20).map_err(|e| e.to_string())?;
        for e in 0..km.len() {
            if !km.get(e).is_subset(exact.get(e)) {
                return Err(format!("{}: edge {e}: {:?} not within {:?}", f.name, km.get(e), exact.get(e)));
            }
            sizes.0 += km.get(e).len();
            sizes.1 += exact.get(e).len();
        }
    }
    Ok(sizes)
}

fn branch_join() -> Outcome {
    let (p, out) = run("branch_join", |c| c.refine = false);
    let r = out.function("f").unwrap();
    let b = ["b1", "b2", "b3"];
    let bx = ["b1", "b2", "b3", "x1", "x2"];
    expect_edge(r, "ENTRY", "B1", &[])?;
    expect_edge(r, "B1", "B3", &b)?;
    expect_edge(r, "B1", "B2", &bx)?;
    expect_edge(r, "B2", "B3", &bx)?;
    expect_edge(r, "B3", "EXIT", &b)?;
    for v in b {
        expect_frontier(r, v, &["B1"])?;
    }
    expect_frontier(r, "x1", &["B2"])?;
    expect_frontier(r, "x2", &["B2"])?;
    below_exact(&p)?;
    Ok("edge sets and frontiers match".into())
}

fn nondet_join() -> Outcome {
    let (p, out) = run("nondet_join", |c| c.refine = false);
    let r = out.function("f").unwrap();
    expect_edge(r, "B1", "B3", &["a1"])?;
    expect_edge(r, "B1", "B2", &["x1", "x2", "a2"])?;
    expect_edge(r, "B2", "B3", &["x1", "x2", "a2"])?;
    expect_edge(r, "B3", "EXIT", &["a3"])?;
    expect_frontier(r, "a1", &[])?;
    expect_frontier(r, "a3", &["B3"])?;
    below_exact(&p)?;
    Ok("edge sets and frontiers match".into())
}

fn two_guards() -> Outcome {
    let (p, plain) = run("two_guards", |c| c.refine = false);
    let r = plain.function("f").unwrap();
    ensure(!edge(r, "B1", "B3").contains("x"), || "flow analysis alone already knows x on B1->B3".into())?;
    // every run transmits x, so the runs agree it is known from the start
    let exact = exact_knowledge(&p.functions[0], 0..=3, 1 << 16).map_err(|e| e.to_string())?;
    ensure(exact.get(0).contains("x"), || "x is not known on the entry edge of any run".into())?;

    let (_, refined) = run("two_guards", |_| {});
    let r = refined.function("f").unwrap();
    let rf = r.refinement.as_ref().ok_or("refinement did not run")?;
    let q = rf.results.iter().find(|q| q.variable == "x").ok_or("x was not queried")?;
    ensure(q.verdict == Refined::Inevitable, || format!("verdict {:?}", q.verdict))?;
    ensure(r.block_knowledge.knows(0, "x"), || "x not known in the entry block".into())?;
    expect_frontier(r, "x", &["B1"])?;
    Ok("refinement lifts x to the entry block".into())
}

fn loop_pair() -> Outcome {
    let (_, fresh) = run("loop_unknown", |c| c.refine = false);
    let (_, copy) = run("loop_copy", |c| c.refine = false);
    let a = edge(fresh.function("f").unwrap(), "B2", "B3");
    let b = edge(copy.function("f").unwrap(), "B2", "B3");
    ensure(!a.contains("x2"), || format!("fresh value loop: x2 known after the loop: {a:?}"))?;
    ensure(b.contains("x2"), || format!("copying loop: x2 unknown after the loop: {b:?}"))?;
    Ok("x2 after the loop differs as expected".into())
}

fn barrier_count(out: &declassiflow_core::pipeline::PipelineOutput, f: &str) -> usize {
    count_barriers(out.protected.as_ref().unwrap().function(&protected_name(f)).unwrap())
}

fn barriers() -> Outcome {
    let mut notes = Vec::new();
    let cases: [(&str, &str, &str, &[&str], bool); 3] = [
        ("aes_like", "encrypt", "B1", &["f", "g", "h"], false),
        ("sort_like", "sort", "B2", &[], true),
        ("stream_like", "chacha", "ph", &[], true),
    ];
    for (fixture, top, block, callees, refined) in cases {
        let (_, out) = run(fixture, |_| {});
        let plan = out.function(top).unwrap().plan.as_ref().unwrap();
        let labels: Vec<&str> =
            plan.barriers.iter().map(|&b| out.function(top).unwrap().base().blocks[b].label.as_str()).collect();
        ensure(labels == [block], || format!("{fixture}: barriers in {labels:?}, want [{block}]"))?;
        ensure(barrier_count(&out, top) == 1, || format!("{fixture}: {} barriers emitted", barrier_count(&out, top)))?;
        let prot = out.protected.as_ref().unwrap().function(&protected_name(top)).unwrap();
        let b = prot.block(block).unwrap();
        ensure(b.insts.get(b.phi_count()) == Some(&Inst::SpecBarr), || {
            format!("{fixture}: barrier not at the head of {block}")
        })?;
        for c in callees {
            ensure(barrier_count(&out, c) == 0, || format!("{fixture}: barrier inside {c}"))?;
            ensure(out.function(c).unwrap().summary.is_pseudo_transmitter, || {
                format!("{c} is not a pseudo transmitter")
            })?;
        }
        let ran = out.function(top).unwrap().refinement.is_some();
        ensure(ran == refined, || format!("{fixture}: refinement ran = {ran}"))?;
        notes.push(format!("{top}:{block}"));
    }
    Ok(format!("one barrier each at {}", notes.join(", ")))
}

fn soundness() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let cfg = GenConfig::default();
    let (mut found, mut exact) = (0, 0);
    for i in 0..100 {
        let p = random_program(&mut rng, &cfg);
        let (a, b) =
            below_exact(&p).map_err(|e| format!("program {i}: {e}\n{}", declassiflow_core::ir::pretty_print(&p)))?;
        found += a;
        exact += b;
    }
    ensure(found > 0, || "the analysis found nothing at all".into())?;
    Ok(format!("100 programs, no edge above the exact sets ({found} of {exact} edge facts found)"))
}

fn strip_barriers(p: &Program, f: &str) -> Program {
    let mut q = p.clone();
    let g = q.functions.iter_mut().find(|g| g.name == f).unwrap();
    for b in &mut g.blocks {
        b.insts.retain(|i| *i != Inst::SpecBarr);
    }
    q
}

fn verification() -> Outcome {
    let mut runs = 0;
    for name in FIXTURES {
        let (p, out) = run(name, |c| c.verify = true);
        for v in &out.verification {
            match &v.verdict {
                Verdict::Pass { runs: n } => runs += n,
                Verdict::Fail(w) => return Err(format!("{name}: {} fails: {w:?}", v.function)),
            }
        }
        ensure(out.verification.len() == p.top_level().len(), || {
            format!("{name}: not every top-level function verified")
        })?;
    }
    for (name, top) in [("aes_like", "encrypt"), ("sort_like", "sort")] {
        let (p, out) = run(name, |_| {});
        let pc = out.property_config(&p, &common::config(name).verify_limits);
        let fm = out.frontier_map();
        let bare = strip_barriers(out.protected.as_ref().unwrap(), &protected_name(top));
        let target = protected_name(top);
        match check_frontier_property(&bare, &target, &fm, &pc).map_err(|e| e.to_string())? {
            Verdict::Pass { .. } => return Err(format!("{name}: still passes without its barrier")),
            Verdict::Fail(w) => {
                let again = replay(&bare, &w, &fm, &pc).map_err(|e| e.to_string())?;
                ensure(again.as_ref() == Some(&w.observation), || {
                    format!("{name}: witness does not replay: {again:?}")
                })?;
            }
        }
    }
    Ok(format!("all fixtures pass ({runs} runs); removing the barrier fails aes_like and sort_like"))
}

fn determinism() -> Outcome {
    let mut programs: Vec<Program> = FIXTURES.iter().map(|n| load(n)).collect();
    let mut rng = StdRng::seed_from_u64(8);
    programs.extend((0..30).map(|_| random_program(&mut rng, &GenConfig::default())));
    for p in &programs {
        for f in &p.functions {
            if !f.callees().is_empty() {
                continue;
            }
            let ef = expand_loops(f).map_err(|e| e.to_string())?;
            let init = init_knowledge(&ef.function, &BTreeMap::new()).map_err(|e| e.to_string())?;
            let base = propagate(init.clone(), &ef.function);
            for seed in 1..=5 {
                if propagate_seeded(init.clone(), &ef.function, seed) != base {
                    return Err(format!("{}: seed {seed} reaches a different fixpoint", f.name));
                }
            }
        }
    }
    for name in FIXTURES {
        let p = load(name);
        let mut cfg = common::config(name);
        cfg.emit_knowledge = true;
        cfg.emit_frontiers = true;
        cfg.verify = true;
        let once = |seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            let out = run_pipeline(&p, &c).unwrap();
            emit_report(&Report::new(&p, &out, &c), Format::Json)
        };
        let a = once(None);
        ensure(a == once(None), || format!("{name}: repeated reports differ"))?;
        ensure(a == once(Some(3)), || format!("{name}: shuffled worklist changes the report"))?;
    }
    Ok(format!("{} functions agree under 5 orders; reports repeat byte for byte", programs.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("knowledge at a join of related values", Duration::from_secs(1), branch_join),
        ("knowledge at a join of unrelated inputs", Duration::from_secs(1), nondet_join),
        ("refinement of complementary guards", Duration::from_secs(5), two_guards),
        ("loop carried copies after expansion", Duration::from_secs(1), loop_pair),
        ("barrier placement on crypto kernels", Duration::from_secs(10), barriers),
        ("analysis below exact knowledge on random programs", Duration::from_secs(120), soundness),
        ("speculative leakage check of protected fixtures", Duration::from_secs(300), verification),
        ("determinism across worklist orders and runs", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (i, (desc, limit, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let res = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let dt = t0.elapsed();
        let res = match res {
            Ok(m) if dt > *limit => Err(format!("{m}, but took {dt:.2?} (limit {limit:?})")),
            r => r,
        };
        match res {
            Ok(m) => println!("PASS {} {desc}: {m} ({dt:.2?})", i + 1),
            Err(m) => {
                failed += 1;
                println!("FAIL {} {desc}: {m} ({dt:.2?})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
