use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neurotag::{cmd_inspect, cmd_run, neuron_card, RunConfig};
use neurotag_core::annotate::{AnnotationFile, AnnotationRecord, ConceptEntry};
use neurotag_core::Category;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn synthetic() -> PathBuf {
    workspace().join("fixtures/synthetic")
}

fn neurotag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neurotag"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_matches_golden_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (mut cfg, base) = RunConfig::read(&synthetic().join("run.toml")).unwrap();
    cfg.out = Some(tmp.path().to_path_buf());
    cmd_run(&cfg, &base).unwrap();
    for name in ["annotations.json", "report.json", "report.txt", "selections.json", "distribution_final.tsv"] {
        let got = std::fs::read_to_string(tmp.path().join(name)).unwrap();
        let want = std::fs::read_to_string(synthetic().join("golden").join(name)).unwrap();
        assert!(got == want, "{name} differs from golden");
    }
}

#[test]
fn binary_run_with_overrides_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let out = neurotag(&["run", s(&synthetic().join("run.toml")), "--workers", "3", "--out", s(tmp.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = std::fs::read(tmp.path().join("annotations.json")).unwrap();
    let want = std::fs::read(synthetic().join("golden/annotations.json")).unwrap();
    assert_eq!(got, want);
}

#[test]
fn staged_commands_agree_with_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synthetic().join("manifest.toml");
    let sel = tmp.path().join("sel.json");
    let ann = tmp.path().join("ann.json");
    let rep = tmp.path().join("rep.json");
    let out = neurotag(&["select", "--manifest", s(&manifest), "--alpha", "0.93", "--k", "14", "--out", s(&sel)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = neurotag(&[
        "annotate", "--manifest", s(&manifest), "--selections", s(&sel), "--encoder", "vlm", "--template", "base",
        "--out", s(&ann),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = neurotag(&[
        "evaluate", "--manifest", s(&manifest), "--annotations", s(&ann), "--encoders", "clip,mpnet", "--out", s(&rep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let staged = AnnotationFile::from_json(&std::fs::read_to_string(&ann).unwrap(), "staged").unwrap();
    let golden = AnnotationFile::from_json(
        &std::fs::read_to_string(synthetic().join("golden/annotations.json")).unwrap(),
        "golden",
    )
    .unwrap();
    assert_eq!(staged.records, golden.records);
    assert_eq!(
        std::fs::read(tmp.path().join("sel.json")).unwrap(),
        std::fs::read(synthetic().join("golden/selections.json")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    let golden_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(synthetic().join("golden/report.json")).unwrap()).unwrap();
    assert_eq!(report, golden_report["evaluation"]);
}

#[test]
fn invalid_alpha_fails_validation_before_compute() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = neurotag(&["run", s(&synthetic().join("run.toml")), "--alpha", "2", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(Category::Validation.exit_code()));
    assert!(String::from_utf8_lossy(&out.stderr).contains("validation"));
    assert!(!out_dir.exists());
}

#[test]
fn usage_error_exits_two() {
    let out = neurotag(&["select", "--mode", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inspect_matches_golden_card() {
    let card = cmd_inspect(&synthetic().join("golden/annotations.json"), "final/n03").unwrap();
    let want = std::fs::read_to_string(synthetic().join("golden/inspect_n03.txt")).unwrap();
    assert_eq!(card, want);

    let out = neurotag(&["inspect", "--annotations", s(&synthetic().join("golden/annotations.json")), "--neuron", "n03"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout), want);
}

#[test]
fn inspect_unknown_neuron_is_lookup_error() {
    let out = neurotag(&["inspect", "--annotations", s(&synthetic().join("golden/annotations.json")), "--neuron", "n99"]);
    assert_eq!(out.status.code(), Some(Category::Lookup.exit_code()));
}

#[test]
fn degenerate_card_shows_flag() {
    let top = ConceptEntry {
        concept: "heart".into(),
        index: 4,
        score: -0.25,
    };
    let rec = AnnotationRecord {
        layer: "final".into(),
        neuron: "n07".into(),
        tau: 1.5,
        n: 1,
        fallback: true,
        theta: -0.2375,
        degenerate: true,
        forced: true,
        annotated: vec![top.clone()],
        top: vec![top],
    };
    let card = neuron_card(&rec);
    assert!(card.contains("degenerate  yes"), "{card}");
    assert!(card.contains("forced      yes"), "{card}");
    assert!(card.contains("(argmax fallback)"), "{card}");
}

#[test]
fn build_concepts_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = workspace().join("fixtures/concepts");
    let out_file = tmp.path().join("c.txt");

    let out = neurotag(&[
        "build-concepts", "--corpus", s(&dir.join("reports.txt")), "--lexicon", s(&dir.join("lexicon.txt")),
        "--min-frequency", "2", "--out", s(&out_file),
    ]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&out_file).unwrap(),
        std::fs::read(dir.join("expected_min2.txt")).unwrap()
    );

    let out = neurotag(&["build-concepts", "--corpus", s(&tmp.path().join("none.txt")), "--lexicon",
        s(&dir.join("lexicon.txt")), "--out", s(&out_file)]);
    assert_eq!(out.status.code(), Some(Category::InputMissing.exit_code()));

    let out = neurotag(&[
        "build-concepts", "--corpus", s(&dir.join("reports.txt")), "--lexicon", s(&dir.join("lexicon.txt")),
        "--min-frequency", "1000", "--out", s(&out_file),
    ]);
    assert_eq!(out.status.code(), Some(Category::EmptyResult.exit_code()));
    assert!(!String::from_utf8_lossy(&out.stderr).trim().is_empty());
}

#[test]
fn heuristic_and_pretagged_strategies_run() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("tagged.txt");
    std::fs::write(&corpus, "Small\tJJ\neffusion\tNN\n.\t.\n\nEffusion\tNN\nresolved\tVBN\n").unwrap();
    let out_file = tmp.path().join("c.txt");
    let out = neurotag(&["build-concepts", "--corpus", s(&corpus), "--strategy", "pretagged", "--out", s(&out_file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&out_file).unwrap(), "effusion\n");

    let plain = tmp.path().join("plain.txt");
    std::fs::write(&plain, "Mild cardiomegaly. Small effusion.\n\nEffusion resolved.\n").unwrap();
    let out = neurotag(&["build-concepts", "--corpus", s(&plain), "--strategy", "heuristic", "--out", s(&out_file)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let got = std::fs::read_to_string(&out_file).unwrap();
    assert!(got.starts_with("effusion\n"), "{got}");
    assert!(!got.contains("resolved"), "{got}");
}

#[test]
fn table_format_is_written() {
    let tmp = tempfile::tempdir().unwrap();
    let rep = tmp.path().join("rep.txt");
    let out = neurotag(&[
        "evaluate", "--manifest", s(&synthetic().join("manifest.toml")), "--annotations",
        s(&synthetic().join("golden/annotations.json")), "--encoders", "clip", "--match", "substring", "--agg", "max",
        "--format", "table", "--out", s(&rep),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&rep).unwrap();
    assert!(text.starts_with("# layer=final match=substring agg=max encoders=clip\n"), "{text}");
    assert!(text.contains("f1/substring"));
}
