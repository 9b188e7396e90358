use twinpilot_core::dataset::{sample_dataset, sample_dataset_text, Category};
use twinpilot_core::session::{build_sample_dataset, bundled_script, replay, Session, SessionConfig};

fn golden(name: &str) -> Vec<String> {
    let path = format!("{}/tests/golden/{name}.log", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn storage_retrieval_replay_matches_golden() {
    let lines = replay(&bundled_script("storage-retrieval").unwrap()).unwrap();
    assert_eq!(lines, golden("storage-retrieval"));
}

#[test]
fn storage_export_replay_matches_golden() {
    let lines = replay(&bundled_script("storage-export").unwrap()).unwrap();
    assert_eq!(lines, golden("storage-export"));
}

fn strip_time(line: &str) -> String {
    // [scope][source][HH:MM:SS] text -> [scope][source] text
    let end = line.find("][").and_then(|a| line[a + 2..].find("][").map(|b| a + 2 + b + 1));
    match end {
        Some(i) => format!("{}{}", &line[..i], &line[i + 10..]),
        None => line.to_string(),
    }
}

#[test]
fn demo_agents_reproduce_the_retrieval_sequence() {
    let script = bundled_script("demo-scenario").unwrap();
    let mut session = Session::new(&SessionConfig::demo()).unwrap();
    session.schedule(script.entries.clone()).unwrap();
    session.run_until(script.header.until).unwrap();
    let op = session.agents().find(|a| a.id == "storage-operator").unwrap().subscription.clone();
    let log = session.log();
    let got: Vec<String> = log.render_all(&log.view(&op, 0)).iter().map(|l| strip_time(l)).collect();
    let want: Vec<String> = golden("storage-retrieval").iter().map(|l| strip_time(l)).collect();
    assert!(got.len() >= want.len(), "{got:#?}");
    assert_eq!(&got[..want.len()], &want[..]);
}

#[test]
fn bundled_sample_is_reproducible() {
    let built = build_sample_dataset().unwrap();
    if std::env::var_os("TWINPILOT_BLESS").is_some() {
        let path = format!("{}/assets/sample-dataset.jsonl", env!("CARGO_MANIFEST_DIR"));
        std::fs::write(path, built.to_jsonl()).unwrap();
        return;
    }
    assert_eq!(built.to_jsonl(), sample_dataset_text());
    let sample = sample_dataset();
    let m = sample.manifest();
    assert_eq!(m.totals, 10);
    assert_eq!(
        sample.cases().filter(|(_, c)| c.category == Category::Unexpected).count(),
        1
    );
    let first = sample.cases().next().unwrap().1;
    assert_eq!(first.expected.reason, "Carrier detected at entrance, initiate transport to pick and place point");
    sample.validate().unwrap();
}
