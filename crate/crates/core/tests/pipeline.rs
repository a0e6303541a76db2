use std::fs;

use emma_core::harness::{evaluate_corpus, parse_csv, render_csv, Manifest, SweepReport};

#[test]
fn manifest_to_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..4 {
        let tokens: Vec<u32> = (0..5).map(|t| t + i).collect();
        let source: Vec<String> = tokens.iter().map(|t| format!(r#"{{"dur_ms":500,"token":{t}}}"#)).collect();
        lines.push_str(&format!(
            "{{\"id\":\"x{i}\",\"source\":[{}],\"reference\":{tokens:?}}}\n",
            source.join(",")
        ));
    }
    fs::write(dir.path().join("data.jsonl"), lines).unwrap();
    let path = dir.path().join("m.json");
    fs::write(
        &path,
        r#"{"instances":"data.jsonl","model":{"kind":"scripted_waitk","params":{"k":3}},"seed":1}"#,
    )
    .unwrap();

    let manifest = Manifest::load(&path).unwrap();
    let instances = manifest.load_instances().unwrap();
    let model = manifest.build_model().unwrap();
    let run = evaluate_corpus(&model, &instances, &manifest.runtime, manifest.latency_unit, 2).unwrap();
    assert_eq!(run.report.n_failures, 0);
    assert!((run.report.quality.bleu - 100.0).abs() < 1e-9);
    assert!((run.report.latency.al - 1.5).abs() < 1e-9, "{}", run.report.latency.al);

    let csv = render_csv(&SweepReport::from_reports([&run.report]));
    let rows = parse_csv(&csv).unwrap().rows;
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].n_instances, 4);
}
