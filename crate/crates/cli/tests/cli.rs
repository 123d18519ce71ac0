use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini").join(name)
}

fn run_with(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statrag"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(out: &Path, args: &[&str]) -> Output {
    run_with(&fixture("config.json"), out, args)
}

fn ok(o: Output) -> (String, String) {
    let stdout = String::from_utf8(o.stdout).unwrap();
    let stderr = String::from_utf8(o.stderr).unwrap();
    assert!(o.status.success(), "exit {:?}\nstdout {stdout}\nstderr {stderr}", o.status.code());
    (stdout, stderr)
}

fn indexed() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(run(dir.path(), &["index"]));
    dir
}

fn lines(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn index_is_byte_identical_across_runs() {
    let a = indexed();
    let b = indexed();
    for f in ["graph.json", "index.json", "corpus.jsonl", "index.meta.json"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn index_reports_stats() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = ok(run(dir.path(), &["index"]));
    assert!(out.contains("indexed 20 articles"), "{out}");
    assert!(out.contains("nodes=29 edges=27"), "{out}");
}

#[test]
fn missing_corpus_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"corpus": "absent.jsonl"}"#).unwrap();
    let o = run_with(&cfg, &dir.path().join("out"), &["index"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.jsonl"));
}

#[test]
fn ask_before_index_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["ask", "질문"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("statrag index"));
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["bogus"]).status.code(), Some(1));
    let o = run_with(&dir.path().join("nope.json"), dir.path(), &["index"]);
    assert_eq!(o.status.code(), Some(1));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"corpus": "c.jsonl", "retrieval": {"top_k": 0}}"#).unwrap();
    assert_eq!(run_with(&bad, dir.path(), &["index"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn unreachable_endpoint_exits_three_without_leaking_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let ep = json!({"base_url": "http://127.0.0.1:9", "model": "m", "api_key_env": "STATRAG_TEST_KEY", "max_retries": 0, "timeout_s": 2.0});
    let cfg = json!({
        "corpus": fixture("corpus.jsonl"),
        "clients": {"kind": "remote", "embedder": ep, "reranker": ep, "generator": ep, "judge": ep},
    });
    let path = dir.path().join("remote.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_statrag"))
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .arg("index")
        .env("STATRAG_TEST_KEY", "sk-very-secret-token")
        .env("RUST_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    let all = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    assert!(!all.contains("sk-very-secret-token"));
}

#[test]
fn ask_prints_rules_and_writes_a_trace() {
    let dir = indexed();
    let (out, err) = ok(run(dir.path(), &["ask", "연구시설 관리 비용은?"]));
    assert!(out.starts_with("ranked:\n  1. "), "{out}");
    assert!(out.contains("answer: "), "{out}");
    assert!(err.contains("generate=2"), "{err}");
    let traces: Vec<_> = std::fs::read_dir(dir.path().join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 1);
    let t: Value = serde_json::from_str(&std::fs::read_to_string(traces[0].as_ref().unwrap().path()).unwrap()).unwrap();
    assert!(t["retrieval"]["trace"]["fused"].is_array());
    assert!(t["answer"]["rules"].is_object());
}

#[test]
fn free_form_ask_ends_with_a_citation_footer() {
    let dir = indexed();
    let (out, _) = ok(run(dir.path(), &["--schema-mode", "free_form", "ask", "연구시설 관리 비용은?"]));
    let footer = out.lines().find(|l| l.starts_with("[참조] ")).expect("footer line");
    assert!(footer.len() > "[참조] ".len());
    assert!(!out.contains("answer: "));
}

#[test]
fn retrieval_only_skips_generation() {
    let dir = indexed();
    let (out, err) = ok(run(dir.path(), &["--retrieval-only", "ask", "연구시설 관리 비용은?"]));
    assert!(!out.contains("answer:"));
    // one generator call for the anchor, none for the answer
    assert!(err.contains("generate=1"), "{err}");

    ok(run(dir.path(), &["--retrieval-only", "eval", "--dataset", fixture("dataset.jsonl").to_str().unwrap()]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["retrieval_only"], json!(true));
    assert!(report["aggregates"].get("citation_f1").is_none());
    assert!(report["aggregates"]["recall"].is_number());
}

fn write_scored_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let dataset = dir.join("hand.jsonl");
    let items = [
        json!({"qid": "a", "question": "qa", "gt_refs": ["사용기준_제30조", "사용기준_제31조"], "difficulty": "L2"}),
        json!({"qid": "b", "question": "qb", "gt_refs": ["혁신법_제32조"], "difficulty": "L1"}),
    ];
    std::fs::write(&dataset, items.map(|v| v.to_string()).join("\n")).unwrap();
    let outputs = dir.join("hand.outputs.jsonl");
    let answer = json!({
        "qid": "a", "answer": "x", "rules": {"사용기준_제30조": ["c"]},
        "cited": ["사용기준_제30조"], "hallucinated": ["가짜법_제1조"],
        "violations": [], "raw": "", "schema_mode": "per_rule",
    });
    let outs = [
        json!({"qid": "a", "ranked": ["사용기준_제30조", "매뉴얼_제1조", "사용기준_제31조_제1항"], "answer": answer}),
        json!({"qid": "b", "ranked": ["시행령_제26조"]}),
    ];
    std::fs::write(&outputs, outs.map(|v| v.to_string()).join("\n")).unwrap();
    (dataset, outputs)
}

#[test]
fn eval_over_saved_outputs_matches_hand_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, outputs) = write_scored_fixture(dir.path());
    let (_, err) = ok(run(
        dir.path(),
        &["--slice", "difficulty", "eval", "--dataset", dataset.to_str().unwrap(), "--outputs", outputs.to_str().unwrap()],
    ));
    assert!(err.contains("embed=0 rerank=0 generate=0 judge=0"), "{err}");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();

    // a: both refs in the top 3 (31's sub-clause rolls up), hits at ranks 1 and 3
    let ndcg_a = (1.0 + 1.0 / 4f64.log2()) / (1.0 + 1.0 / 3f64.log2());
    let row_a = &r["rows"][0];
    assert_eq!(row_a["qid"], "a");
    assert_eq!(row_a["recall"], 1.0);
    assert_eq!(row_a["fullcov"], 1.0);
    assert!((row_a["ndcg"].as_f64().unwrap() - ndcg_a).abs() < 1e-12);
    // pred {30, fabricated} against {30, 31}
    assert_eq!(row_a["citation"], json!({"p": 0.5, "r": 0.5, "f1": 0.5}));
    let row_b = &r["rows"][1];
    assert_eq!((row_b["recall"].as_f64(), row_b["ndcg"].as_f64()), (Some(0.0), Some(0.0)));
    assert!(row_b.get("citation").is_none());

    let agg = &r["aggregates"];
    assert_eq!(agg["n"], 2);
    assert_eq!(agg["recall"], 0.5);
    assert_eq!(agg["fullcov"], 0.5);
    assert!((agg["ndcg"].as_f64().unwrap() - ndcg_a / 2.0).abs() < 1e-12);
    assert_eq!(agg["citation_f1"], 0.5);

    let slices = r["slices"].as_object().unwrap();
    assert_eq!(slices.keys().collect::<Vec<_>>(), ["L1", "L2", "L3", "L4"]);
    assert_eq!(slices["L1"]["recall"], 0.0);
    assert_eq!(slices["L2"]["recall"], 1.0);
    assert_eq!(slices["L3"], json!({"n": 0}));
    assert!(r["metadata"]["pattern_pack_id"].is_null());
}

#[test]
fn eval_rejects_outputs_for_unknown_queries() {
    let dir = tempfile::tempdir().unwrap();
    let (dataset, outputs) = write_scored_fixture(dir.path());
    let mut body = std::fs::read_to_string(&outputs).unwrap();
    body.push_str("\n{\"qid\": \"zz\", \"ranked\": []}");
    std::fs::write(&outputs, body).unwrap();
    let o = run(dir.path(), &["eval", "--dataset", dataset.to_str().unwrap(), "--outputs", outputs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zz"));
}

#[test]
fn full_eval_writes_outputs_and_metadata() {
    let dir = indexed();
    ok(run(dir.path(), &["eval", "--dataset", fixture("dataset.jsonl").to_str().unwrap()]));
    assert_eq!(lines(&dir.path().join("outputs.jsonl")).len(), 4);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let m = &r["metadata"];
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(!m["pattern_pack_id"].as_str().unwrap().is_empty());
    assert!(m["config"].get("out_dir").is_none());
    assert!(r.get("slices").is_none());
    let qids: Vec<&str> = r["rows"].as_array().unwrap().iter().map(|x| x["qid"].as_str().unwrap()).collect();
    assert_eq!(qids, ["q1", "q2", "q3", "q4"]);
}

#[test]
fn graph_stats_are_balanced() {
    let dir = indexed();
    let (out, _) = ok(run(dir.path(), &["graph", "stats"]));
    let count = |t: &str| -> u64 {
        let l = out.lines().find(|l| l.starts_with(t)).unwrap();
        l.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert_eq!(count("DELEGATES_TO"), count("SPECIFIES"));
    assert_eq!(count("total"), 27);
}

#[test]
fn citation_components_match_the_hand_list() {
    let dir = indexed();
    let (out, _) = ok(run(dir.path(), &["graph", "components"]));
    let rows: Vec<Vec<&str>> = out.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0], ["8", "2", "매뉴얼_제1조", "매뉴얼,사용기준"]);
    assert_eq!(rows[1], ["4", "4", "매뉴얼_제2조", "매뉴얼,사용기준,시행령,혁신법"]);
    assert_eq!(rows[2], ["3", "3", "사용기준_제1조", "사용기준,시행령,혁신법"]);
    assert_eq!(out.lines().last().unwrap(), "components=17 singletons=14");

    let (all, _) = ok(run(dir.path(), &["graph", "components", "--edges", "all"]));
    assert!(all.lines().last().unwrap().starts_with("components="));
}

#[test]
fn perturbation_is_seeded() {
    let dir = indexed();
    let file = dir.path().join("graph.rewire.0.2.seed42.json");
    ok(run(dir.path(), &["graph", "perturb", "--mode", "rewire", "--rate", "0.2"]));
    let first = std::fs::read(&file).unwrap();
    ok(run(dir.path(), &["graph", "perturb", "--mode", "rewire", "--rate", "0.2"]));
    assert_eq!(first, std::fs::read(&file).unwrap());
    let (out, _) = ok(run(dir.path(), &["--seed", "7", "graph", "perturb", "--mode", "drop", "--rate", "0.2"]));
    assert!(dir.path().join("graph.drop.0.2.seed7.json").is_file());
    // 15 citation edges; a fifth of them go, mirror pairs leaving together
    let edges: u64 = out.split_whitespace().find_map(|w| w.strip_prefix("edges=")).unwrap().parse().unwrap();
    assert!((23..=25).contains(&edges), "{out}");
    assert_eq!(
        run(dir.path(), &["graph", "perturb", "--mode", "drop", "--rate", "1.5"]).status.code(),
        Some(1)
    );
}

#[test]
fn graph_export_round_trips() {
    let dir = indexed();
    let to = dir.path().join("export.json");
    ok(run(dir.path(), &["graph", "export", "--to", to.to_str().unwrap()]));
    assert_eq!(std::fs::read(&to).unwrap(), std::fs::read(dir.path().join("graph.json")).unwrap());
}

#[test]
fn bench_classify_labels_the_simple_item_l1() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = ok(run(dir.path(), &["bench", "classify", "--dataset", fixture("dataset.jsonl").to_str().unwrap()]));
    assert!(out.contains("L1=1"), "{out}");
    let items = lines(&dir.path().join("bench/classify.jsonl"));
    let q3 = items.iter().find(|i| i["qid"] == "q3").unwrap();
    assert_eq!(q3["difficulty"], "L1");
}

#[test]
fn bench_validate_settles_after_one_pass() {
    let dir = tempfile::tempdir().unwrap();
    let original = lines(&fixture("dataset.jsonl"));
    ok(run(dir.path(), &["bench", "validate", "--dataset", fixture("dataset.jsonl").to_str().unwrap()]));
    let first = dir.path().join("bench/validate.jsonl");
    let audit = lines(&dir.path().join("bench/validate.audit.jsonl"));
    assert!(!audit.is_empty());
    let closed = lines(&first);

    // sanction items grow by at most the two configured anchors
    for (before, after) in original.iter().zip(&closed) {
        let grew = after["gt_refs"].as_array().unwrap().len() - before["gt_refs"].as_array().unwrap().len();
        if before["flags"]["sanction"] == true {
            let r4 = audit.iter().filter(|e| e["qid"] == before["qid"] && e["rule"] == "R4").count();
            assert!(r4 <= 2);
        }
        if before["flags"].get("parallel_topic").is_none() {
            assert!(grew <= 2, "{} grew by {grew}", before["qid"]);
        }
    }
    let q2 = closed.iter().find(|i| i["qid"] == "q2").unwrap();
    let refs: Vec<&str> = q2["gt_refs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(refs.contains(&"시행령_제26조") && refs.contains(&"사용기준_제83조"));

    let second = tempfile::tempdir().unwrap();
    ok(run(second.path(), &["bench", "validate", "--dataset", first.to_str().unwrap()]));
    assert!(lines(&second.path().join("bench/validate.audit.jsonl")).is_empty());
    assert_eq!(lines(&second.path().join("bench/validate.jsonl")), closed);
}

#[test]
fn bench_audit_truncates_missing_provisions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.jsonl");
    std::fs::write(
        &data,
        json!({"qid": "x", "question": "q", "gt_refs": ["사용기준_제30조_제9항", "사용기준_제31조"]}).to_string(),
    )
    .unwrap();
    ok(run(dir.path(), &["bench", "audit", "--dataset", data.to_str().unwrap()]));
    let items = lines(&dir.path().join("bench/audit.jsonl"));
    assert_eq!(items[0]["gt_refs"], json!(["사용기준_제30조", "사용기준_제31조"]));
    let log = lines(&dir.path().join("bench/audit.audit.jsonl"));
    assert_eq!(log.len(), 1);
    assert_eq!(log[0]["to"], "사용기준_제30조");
}
