//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p twinpilot-control --test acceptance`.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use twinpilot_core::agent::{parse_output, AgentCommand};
use twinpilot_core::call::FunctionCall;
use twinpilot_core::dataset::{
    evaluate, sample_dataset, Category, Dataset, EvalOptions, SftRecord, TestCase, TestSuite,
};
use twinpilot_core::event::{Event, SemanticLevel, Source};
use twinpilot_core::session::{bundled_script, Session, SessionConfig};
use twinpilot_core::testkit;

type Outcome = Result<String, String>;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twinpilot"))
}

fn golden(name: &str) -> Vec<String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/tests/golden/{name}.log"));
    std::fs::read_to_string(path).expect("golden file").lines().map(str::to_string).collect()
}

fn seconds(line: &str) -> Result<u64, String> {
    // Third bracket holds HH:MM:SS.
    let stamp = line.split(']').nth(2).and_then(|s| s.strip_prefix('[')).ok_or(format!("no timestamp in {line:?}"))?;
    let parts: Vec<u64> = stamp.split(':').map(|p| p.parse().map_err(|_| format!("bad time {stamp}"))).collect::<Result<_, _>>()?;
    Ok(parts[0] * 3600 + parts[1] * 60 + parts[2])
}

fn strip_time(line: &str) -> String {
    let mut parts = line.splitn(4, ']');
    let (a, b, _, rest) = (parts.next(), parts.next(), parts.next(), parts.next());
    format!("{}]{}]{}", a.unwrap_or(""), b.unwrap_or(""), rest.unwrap_or(""))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn golden_trace(script: &str, deltas: &[u64], limit: Duration) -> Outcome {
    let want = golden(script);
    let start = Instant::now();
    let out = bin().args(["sim", "replay", script]).output().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
    let got: Vec<String> = String::from_utf8_lossy(&out.stdout).lines().map(str::to_string).collect();
    check(got == want, || format!("output differs from golden:\n{}", got.join("\n")))?;
    let times = got.iter().map(|l| seconds(l)).collect::<Result<Vec<_>, _>>()?;
    let got_deltas: Vec<u64> = times.iter().map(|t| t - times[0]).collect();
    check(got_deltas == deltas, || format!("deltas {got_deltas:?} != {deltas:?}"))?;
    check(elapsed < limit, || format!("took {elapsed:?}"))?;
    Ok(format!("{} lines verbatim, deltas {got_deltas:?}, {elapsed:.2?}", got.len()))
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let script = bundled_script("demo-scenario").ok_or("missing demo scenario")?;
    let mut session = Session::new(&SessionConfig::demo()).map_err(|e| e.to_string())?;
    session.schedule(script.entries).map_err(|e| e.to_string())?;
    session.run_until(script.header.until).map_err(|e| e.to_string())?;
    let log = session.log();
    let got: Vec<String> = log.render_all(log.events()).iter().map(|l| strip_time(l)).collect();
    let fig = golden("storage-retrieval");
    let wanted: Vec<String> = fig
        .iter()
        .filter(|l| l.contains("task assigned:") || l.contains("calls function:") || l.contains("is located on shelf"))
        .map(|l| strip_time(l))
        .collect();
    let mut pos = 0;
    for w in &wanted {
        match got[pos..].iter().position(|g| g == w) {
            Some(i) => pos += i + 1,
            None => return Err(format!("missing (in order) {w:?}")),
        }
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{} reference lines found in order among {} events, {elapsed:.2?}", wanted.len(), got.len()))
}

fn oracle_eval() -> Outcome {
    let out = bin().args(["eval", "sample", "--backend", "oracle"]).output().map_err(|e| e.to_string())?;
    check(out.status.code() == Some(0), || format!("exit {:?}", out.status.code()))?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let line = text.lines().find(|l| l.starts_with("routine")).ok_or("no routine row")?.to_string();
    check(line.contains("100.0%"), || format!("routine row: {line}"))?;
    Ok(line.split_whitespace().collect::<Vec<_>>().join(" "))
}

fn planted_faults() -> Outcome {
    let sample = sample_dataset();
    let oracle = sample.oracle("oracle");
    let mut corrupted = sample.clone();
    let mut planted = 0;
    for case in corrupted.suites.iter_mut().flat_map(|s| s.cases.iter_mut()) {
        if planted == 3 {
            break;
        }
        case.expected.command = AgentCommand::Call(FunctionCall::new("planted_fault", vec![]));
        planted += 1;
    }
    let report = evaluate(&corrupted, &oracle, EvalOptions::default());
    check(report.overall.cases == 10, || format!("{} cases", report.overall.cases))?;
    check(report.overall.rate == 0.7, || format!("overall rate {}", report.overall.rate))?;
    check(
        report.routine.matches + report.unexpected.matches == report.overall.matches
            && report.routine.cases + report.unexpected.cases == report.overall.cases,
        || "strata do not recombine".into(),
    )?;
    Ok(format!(
        "overall {:.1}% ({}/{}), routine {}/{} + unexpected {}/{}",
        report.overall.rate * 100.0,
        report.overall.matches,
        report.overall.cases,
        report.routine.matches,
        report.routine.cases,
        report.unexpected.matches,
        report.unexpected.cases
    ))
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = bin()
            .args(["run", "demo", "demo-scenario", "--summary", "--out-dir"])
            .arg(&out_dir)
            .output()
            .map_err(|e| e.to_string())?;
        check(out.status.success(), || String::from_utf8_lossy(&out.stderr).into_owned())?;
        logs.push(std::fs::read(out_dir.join("events.log")).map_err(|e| e.to_string())?);
    }
    check(!logs[0].is_empty() && logs[0] == logs[1], || "events.log differs between runs".into())?;
    let cases = 1000;
    for (name, f) in [
        ("log subsequence", testkit::check_log_subsequence as fn(u32) -> Result<(), String>),
        ("call round trip", testkit::check_call_round_trip),
        ("dataset round trip", testkit::check_dataset_round_trip),
        ("snapshot replay", testkit::check_snapshot_replay),
        ("no teleportation", testkit::check_no_teleportation),
    ] {
        f(cases).map_err(|e| format!("{name}: {e}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("identical events.log ({} bytes); 5 property suites x {cases} cases, {elapsed:.2?}", logs[0].len()))
}

/// `n` single-event cases for the sample's operator, the first `routine`
/// of them routine. Each case sees a short sliding window.
fn synthetic(n: usize, routine: usize) -> Dataset {
    let sample = sample_dataset();
    let mut ds = Dataset {
        epoch: sample.epoch,
        agents: sample.agents.clone(),
        suites: Vec::new(),
        notes: vec!["synthetic".into()],
    };
    let agent = ds.agents.keys().next().expect("sample has an agent").clone();
    let event = |seq: u64| Event {
        seq,
        sim_time: seq,
        scope: "Storage Station".into(),
        source: Source::System,
        level: SemanticLevel::Field,
        text: format!("BG56 detects a carrier at the infeed of conveyor C1 (#{seq})."),
    };
    let mut cases = Vec::new();
    for i in 0..n as u64 {
        let seq = i + 1;
        let mut case = TestCase {
            id: format!("synthetic/{seq}"),
            agent: agent.clone(),
            category: if (i as usize) < routine { Category::Routine } else { Category::Unexpected },
            prefix_events: (seq.saturating_sub(5).max(1)..seq).map(event).collect(),
            new_events: vec![event(seq)],
            expected: twinpilot_core::agent::AgentOutput::new(
                "Carrier detected at entrance, initiate transport to pick and place point",
                "conveyor_1_run('forward', 13)".parse::<FunctionCall>().expect("valid call"),
            ),
            prompt: String::new(),
        };
        case.prompt = ds.render_case_prompt(&case).expect("known agent");
        cases.push(case);
    }
    ds.suites.push(TestSuite {
        name: "synthetic".into(),
        task_description: "synthetic scale check".into(),
        cases,
    });
    ds
}

fn dataset_scale() -> Outcome {
    let m = sample_dataset().manifest();
    check(m.routine + m.unexpected == m.totals && m.totals > 0, || "sample manifest inconsistent".into())?;
    check((m.routine_ratio - m.routine as f64 / m.totals as f64).abs() < 1e-12, || "ratio mismatch".into())?;
    let big = synthetic(100, 68);
    let report = evaluate(&big, &big.oracle("oracle"), EvalOptions::default());
    check(report.routine.cases == 68 && report.unexpected.cases == 32, || {
        format!("denominators {} / {}", report.routine.cases, report.unexpected.cases)
    })?;
    Ok(format!(
        "sample ratio {:.2} ({} routine / {} unexpected); synthetic denominators {} and {}",
        m.routine_ratio, m.routine, m.unexpected, report.routine.cases, report.unexpected.cases
    ))
}

fn sft_validity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    let mut worst = Duration::ZERO;
    for (name, ds) in [("sample", sample_dataset()), ("synthetic", synthetic(1000, 680))] {
        let start = Instant::now();
        let path = dir.path().join(format!("{name}.sft.jsonl"));
        let n = ds.export_sft(&path).map_err(|e| e.to_string())?;
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let cases: Vec<&TestCase> = ds.cases().map(|(_, c)| c).collect();
        check(text.lines().count() == n && n == cases.len(), || format!("{name}: record count"))?;
        for (line, case) in text.lines().zip(&cases) {
            let record: SftRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
            let output = parse_output(&record.completion).map_err(|e| format!("{}: {e}", case.id))?;
            check(output == case.expected, || format!("{}: completion differs", case.id))?;
            let prompt = ds.render_case_prompt(case).map_err(|e| e.to_string())?;
            check(prompt == record.prompt, || format!("{}: prompt does not re-render", case.id))?;
            checked += 1;
        }
        let per_thousand = start.elapsed().mul_f64(1000.0 / n.max(1) as f64);
        worst = worst.max(per_thousand);
    }
    check(worst < Duration::from_secs(10), || format!("{worst:?} per 1000 records"))?;
    Ok(format!("{checked} records re-parse and re-render; {worst:.2?} per 1000 records"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("golden trace: storage retrieval", || {
            golden_trace("storage-retrieval", &[0, 0, 21, 22, 22, 22, 24, 29, 30, 30, 31, 31], Duration::from_secs(1))
        }),
        ("golden trace: storage export", || {
            golden_trace("storage-export", &[0, 1, 1, 3, 7, 7, 7, 8, 8, 9, 9, 10], Duration::from_secs(1))
        }),
        ("end-to-end agent run", end_to_end),
        ("oracle evaluation", oracle_eval),
        ("planted-fault arithmetic", planted_faults),
        ("determinism and property suites", determinism),
        ("dataset scale check", dataset_scale),
        ("SFT export validity", sft_validity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
