//! Fixture round trips and golden-file comparisons. Set `UPDATE_GOLDEN=1`
//! to rewrite the golden files after an intended change.

use std::path::{Path, PathBuf};

use ehr_rag::kg::{load_kg, node_knowledge};
use ehr_rag::summarizer::{build_summary_prompt, EnhancementBundle, SummaryPrompt};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn check_golden(name: &str, actual: &str) {
    let path = fixture(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} differs from the golden file");
}

#[test]
fn mini_kg_round_trips() {
    let kg = load_kg(
        &fixture("mini_kg_nodes.jsonl"),
        &fixture("mini_kg_edges.jsonl"),
    )
    .unwrap();
    assert_eq!(kg.nodes().len(), 50);
    assert_eq!(kg.edges().len(), 120);
    let dir = tempfile::tempdir().unwrap();
    let (n, e) = (dir.path().join("n.jsonl"), dir.path().join("e.jsonl"));
    kg.write(&n, &e).unwrap();
    let again = load_kg(&n, &e).unwrap();
    assert_eq!(again, kg);
    // a second write is byte-stable
    let (n2, e2) = (dir.path().join("n2.jsonl"), dir.path().join("e2.jsonl"));
    again.write(&n2, &e2).unwrap();
    assert_eq!(std::fs::read(&n).unwrap(), std::fs::read(&n2).unwrap());
    assert_eq!(std::fs::read(&e).unwrap(), std::fs::read(&e2).unwrap());
}

#[test]
fn exported_node_knowledge_text() {
    // extra export columns are ignored
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("edges.jsonl");
    std::fs::write(&edges, "").unwrap();
    let kg = load_kg(&fixture("export_node.jsonl"), &edges).unwrap();
    let text = node_knowledge(&kg, 27165).unwrap();
    check_golden("export_node.knowledge.txt", &format!("{text}\n"));
}

#[test]
fn summary_prompt_for_golden_bundle() {
    let bundle: EnhancementBundle =
        serde_json::from_str(&std::fs::read_to_string(fixture("golden_bundle.json")).unwrap())
            .unwrap();
    let prompt = build_summary_prompt(&bundle, &SummaryPrompt::default()).unwrap();
    check_golden("golden_bundle.prompt.txt", &prompt);
}
