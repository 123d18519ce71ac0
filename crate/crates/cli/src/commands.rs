use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use statrag::attribution::{run_generation, AnswerRecord, GenerationContext, SchemaMode};
use statrag::benchkit::{audit_subclauses, classify_difficulty, validate_closure, ClosureRuleConfig};
use statrag::clients::Clients;
use statrag::evalkit::{dataset_to_jsonl, evaluate_run, load_dataset, parse_outputs, EvalConfig, RunOutput};
use statrag::okg::{connected_components, graph_stats, perturb, EdgeType, GraphStats, PerturbMode};
use statrag::retrieval::{Engine, Retrieval};
use statrag::templates;
use statrag::{Error, Result};

use crate::artifacts::{self, Loaded};
use crate::config::{sha256_hex, RunConfig, StubHandles};

pub struct Ctx {
    pub cfg: RunConfig,
    pub clients: Clients,
    pub stubs: Option<StubHandles>,
    pub retrieval_only: bool,
}

/// Labels an error with the pipeline stage it came from.
fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{name}: {m}")),
        Error::Transport(m) => Error::Transport(format!("{name}: {m}")),
        Error::Data(m) => Error::Data(format!("{name}: {m}")),
        other => other,
    })
}

fn stats_table(s: &GraphStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:>7}", "edge_type", "count");
    for (t, n) in &s.by_type {
        let _ = writeln!(out, "{:<14} {:>7}", t.as_str(), n);
    }
    let _ = writeln!(out, "{:<14} {:>7}", "total", s.edges);
    let _ = write!(out, "nodes {} (external stubs {})", s.nodes, s.external_stubs);
    out
}

fn stats_line(s: &GraphStats) -> String {
    let types: Vec<String> = s.by_type.iter().map(|(t, n)| format!("{}={n}", t.as_str())).collect();
    format!("nodes={} edges={} {}", s.nodes, s.edges, types.join(" "))
}

pub fn index(ctx: &Ctx) -> Result<()> {
    let (loaded, meta) = artifacts::build(&ctx.cfg, &ctx.clients)?;
    let out = ctx.cfg.out();
    artifacts::save(&out, &loaded, &meta)?;
    println!("indexed {} articles into {}", meta.articles, out.display());
    println!("{}", stats_line(&graph_stats(&loaded.okg)));
    for w in loaded.okg.warnings() {
        eprintln!("warning: {}: {}", w.node_id, w.message);
    }
    Ok(())
}

fn engine<'a>(ctx: &'a Ctx, loaded: &'a Loaded) -> Result<Engine<'a>> {
    Ok(Engine {
        corpus: &loaded.corpus,
        okg: &loaded.okg,
        index: &loaded.index,
        clients: &ctx.clients,
        profile: templates::profile(&ctx.cfg.template_profile)?,
        config: &ctx.cfg.retrieval,
    })
}

fn answer(ctx: &Ctx, loaded: &Loaded, qid: &str, question: &str, r: &Retrieval) -> Result<AnswerRecord> {
    let gctx = GenerationContext::from_ranked(
        question,
        r.trace.anchor.clone(),
        &r.ids(),
        &loaded.corpus,
        &ctx.cfg.template_profile,
    )?;
    stage(
        "generation",
        run_generation(qid, &gctx, ctx.clients.generator.as_ref(), ctx.cfg.schema_mode),
    )
}

fn run_query(ctx: &Ctx, loaded: &Loaded, qid: &str, question: &str) -> Result<(Retrieval, Option<AnswerRecord>)> {
    let e = engine(ctx, loaded)?;
    let r = stage("retrieval", e.retrieve(question))?;
    let a = if ctx.retrieval_only {
        None
    } else {
        Some(answer(ctx, loaded, qid, question, &r)?)
    };
    Ok((r, a))
}

pub fn ask(ctx: &Ctx, question: &str) -> Result<()> {
    let loaded = stage("load", artifacts::load(&ctx.cfg, &ctx.clients))?;
    let (r, a) = run_query(ctx, &loaded, "ask", question)?;
    let digest = &sha256_hex(question.as_bytes())[..12];
    let trace_path = ctx.cfg.out().join("traces").join(format!("ask-{digest}.json"));
    let body = json!({
        "config_hash": ctx.cfg.hash(),
        "retrieval": r,
        "answer": a,
    });
    artifacts::write(&trace_path, &serde_json::to_string_pretty(&body)?)?;

    println!("ranked:");
    for (i, c) in r.candidates.iter().enumerate() {
        println!("{:>3}. {}  final={:.6} fused={:.6}", i + 1, c.node_id, c.final_score, c.fused_score);
    }
    if let Some(a) = &a {
        println!();
        match a.schema_mode {
            SchemaMode::PerRule => {
                println!("answer: {}", a.answer);
                for (rule, claims) in &a.rules {
                    println!("[{rule}]");
                    for c in claims {
                        println!("  - {c}");
                    }
                }
            }
            SchemaMode::FreeForm => {
                let footer = templates::profile(&ctx.cfg.template_profile)?.footer;
                println!("{}", a.answer);
                println!("{footer} {}", a.predicted_citations().join(", "));
            }
        }
        if !a.hallucinated.is_empty() {
            println!("hallucinated: {}", a.hallucinated.join(", "));
        }
    }
    println!("trace: {}", trace_path.display());
    if let Some(h) = &ctx.stubs {
        eprintln!("{}", h.summary());
    }
    Ok(())
}

fn jsonl<T: serde::Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn eval(ctx: &Ctx, dataset_path: &Path, outputs: Option<&Path>, slice: bool) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    let out = ctx.cfg.out();
    let (outputs, pack_id) = match outputs {
        Some(p) => (parse_outputs(&artifacts::read(p)?, p)?, None),
        None => {
            let loaded = stage("load", artifacts::load(&ctx.cfg, &ctx.clients))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(ctx.cfg.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            let results: Vec<Result<RunOutput>> = pool.install(|| {
                use rayon::prelude::*;
                dataset
                    .par_iter()
                    .map(|item| {
                        let (r, a) = run_query(ctx, &loaded, &item.qid, &item.question)
                            .map_err(|e| relabel(&item.qid, e))?;
                        Ok(RunOutput {
                            qid: item.qid.clone(),
                            ranked: r.ids(),
                            answer: a,
                        })
                    })
                    .collect()
            });
            let outputs = results.into_iter().collect::<Result<Vec<_>>>()?;
            artifacts::write(&out.join("outputs.jsonl"), &jsonl(&outputs)?)?;
            (outputs, Some(loaded.okg.pattern_pack_id().to_string()))
        }
    };
    let fingerprints: Vec<String> = ctx.clients.fingerprints().to_vec();
    let metadata = json!({
        "config": ctx.cfg.provenance(),
        "config_hash": ctx.cfg.hash(),
        "pattern_pack_id": pack_id,
        "clients": {
            "embedder": fingerprints[0],
            "reranker": fingerprints[1],
            "generator": fingerprints[2],
            "judge": fingerprints[3],
        },
        "dataset_sha256": sha256_hex(artifacts::read(dataset_path)?.as_bytes()),
        "retrieval_only": ctx.retrieval_only,
    });
    let ecfg = EvalConfig {
        k: ctx.cfg.eval.k,
        id_profile: statrag::corpus::load_corpus(&ctx.cfg.corpus_path())
            .map(|c| c.id_profile())
            .unwrap_or_default(),
        slice_difficulty: slice,
    };
    let report = stage(
        "evaluation",
        evaluate_run(&dataset, &outputs, &ecfg, ctx.clients.judge.as_ref(), metadata),
    )?;
    let path = out.join("report.json");
    artifacts::write(&path, &serde_json::to_string_pretty(&report)?)?;
    let a = &report.aggregates;
    let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "n={} recall@{k}={} ndcg@{k}={} fullcov@{k}={} citation_f1={} claim_f1={}",
        a.n,
        f(a.recall),
        f(a.ndcg),
        f(a.fullcov),
        f(a.citation_f1),
        f(a.claim_f1),
        k = ecfg.k
    );
    println!("report: {}", path.display());
    if let Some(h) = &ctx.stubs {
        eprintln!("{}", h.summary());
    }
    Ok(())
}

fn relabel(qid: &str, e: Error) -> Error {
    match e {
        Error::Transport(m) => Error::Transport(format!("query {qid}: {m}")),
        Error::Data(m) => Error::Data(format!("query {qid}: {m}")),
        other => other,
    }
}

pub enum GraphCmd {
    Stats,
    Components { edges: String },
    Perturb { mode: PerturbMode, rate: f64 },
    Export { to: Option<PathBuf> },
}

pub fn parse_edge_filter(s: &str) -> Result<BTreeSet<EdgeType>> {
    match s {
        "citation" => Ok(EdgeType::CITATION.into_iter().collect()),
        "all" => Ok(EdgeType::ALL.into_iter().collect()),
        list => list.split(',').map(|t| EdgeType::parse(t.trim())).collect(),
    }
}

pub fn graph(ctx: &Ctx, cmd: GraphCmd) -> Result<()> {
    let loaded = stage("load", artifacts::load(&ctx.cfg, &ctx.clients))?;
    let g = &loaded.okg;
    match cmd {
        GraphCmd::Stats => println!("{}", stats_table(&graph_stats(g))),
        GraphCmd::Components { edges } => {
            let filter = parse_edge_filter(&edges)?;
            let comps = connected_components(g, &filter);
            println!("{:>5} {:>5}  {:<40} documents", "size", "docs", "first");
            for c in comps.iter().filter(|c| c.size > 1) {
                println!(
                    "{:>5} {:>5}  {:<40} {}",
                    c.size,
                    c.documents.len(),
                    c.nodes[0].as_str(),
                    c.documents.join(",")
                );
            }
            let singletons = comps.iter().filter(|c| c.size == 1).count();
            println!("components={} singletons={singletons}", comps.len());
        }
        GraphCmd::Perturb { mode, rate } => {
            let p = perturb(g, mode, rate, ctx.cfg.seed)?;
            let name = format!("graph.{}.{rate}.seed{}.json", mode.as_str(), ctx.cfg.seed);
            let path = ctx.cfg.out().join(name);
            artifacts::write(&path, &p.to_json()?)?;
            println!("{}", stats_line(&graph_stats(&p)));
            println!("wrote {}", path.display());
        }
        GraphCmd::Export { to } => {
            let body = g.to_json()?;
            match to {
                Some(p) => artifacts::write(&p, &body)?,
                None => println!("{body}"),
            }
        }
    }
    Ok(())
}

pub enum BenchCmd {
    Classify,
    Validate,
    Audit,
}

pub fn bench(ctx: &Ctx, cmd: BenchCmd, dataset_path: &Path) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    let corpus = statrag::corpus::load_corpus(&ctx.cfg.corpus_path())?;
    let profile = corpus.id_profile();
    let dir = ctx.cfg.out().join("bench");
    let (name, items, log, findings): (&str, Vec<_>, Vec<serde_json::Value>, Vec<serde_json::Value>) = match cmd {
        BenchCmd::Classify => {
            let mut items = Vec::new();
            let mut log = Vec::new();
            for it in &dataset {
                let refs: BTreeSet<_> = it.gt_refs.iter().map(|r| profile.rollup_lenient(r)).collect();
                let level = classify_difficulty(&it.flags, refs.len(), &ctx.cfg.rubric)
                    .map_err(|e| relabel(&it.qid, e))?;
                if it.difficulty != Some(level) {
                    log.push(json!({"qid": it.qid, "from": it.difficulty, "to": level}));
                }
                let mut x = it.clone();
                x.difficulty = Some(level);
                items.push(x);
            }
            ("classify", items, log, Vec::new())
        }
        BenchCmd::Validate => {
            let path = ctx
                .cfg
                .closure
                .as_ref()
                .map(|p| ctx.cfg.resolve(p))
                .ok_or_else(|| Error::Config("bench validate needs `closure` in the config".into()))?;
            let rules = ClosureRuleConfig::from_file(&path)?;
            rules.check(&corpus)?;
            let compiled = artifacts::pack(&ctx.cfg)?.compile()?;
            let okg = statrag::okg::build_okg(&corpus, &compiled)?;
            let mut items = Vec::new();
            let mut log = Vec::new();
            let mut findings = Vec::new();
            for it in &dataset {
                let (x, audit) = validate_closure(it, &rules, &okg, profile)?;
                log.extend(audit.added.iter().map(|a| serde_json::to_value(a).expect("audit entry")));
                findings.extend(audit.findings.iter().map(|f| serde_json::to_value(f).expect("finding")));
                items.push(x);
            }
            ("validate", items, log, findings)
        }
        BenchCmd::Audit => {
            let mut items = Vec::new();
            let mut log = Vec::new();
            for it in &dataset {
                let (x, fixes) = audit_subclauses(it, &corpus);
                log.extend(fixes.iter().map(|c| serde_json::to_value(c).expect("correction")));
                items.push(x);
            }
            ("audit", items, log, Vec::new())
        }
    };
    let data_path = dir.join(format!("{name}.jsonl"));
    let log_path = dir.join(format!("{name}.audit.jsonl"));
    artifacts::write(&data_path, &dataset_to_jsonl(&items)?)?;
    artifacts::write(&log_path, &jsonl(&log)?)?;
    if matches!(cmd, BenchCmd::Validate) {
        artifacts::write(&dir.join("validate.findings.jsonl"), &jsonl(&findings)?)?;
    }
    if matches!(cmd, BenchCmd::Classify) {
        let mut counts = std::collections::BTreeMap::new();
        for it in &items {
            *counts.entry(it.difficulty.expect("classified").to_string()).or_insert(0usize) += 1;
        }
        let parts: Vec<String> = counts.iter().map(|(l, n)| format!("{l}={n}")).collect();
        println!("{}", parts.join(" "));
    }
    println!(
        "{name}: {} items, {} audit entries, {} findings -> {}",
        items.len(),
        log.len(),
        findings.len(),
        data_path.display()
    );
    Ok(())
}
