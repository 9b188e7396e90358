//! Random generators and property checks, shared by the unit tests and the
//! acceptance suite. Each `check_*` runs `cases` random instances and returns
//! the minimal counterexample as an error message.

use std::collections::BTreeMap;

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::sample::select;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use crate::agent::{AgentCommand, AgentConfig, AgentOutput, AgentRole};
use crate::call::{Arg, FunctionCall};
use crate::dataset::{Category, Dataset, TestCase, TestSuite};
use crate::event::{ClockTime, Event, EventLog, Filter, SemanticLevel, Source, Subscription};
use crate::sim::{Disturbance, EntityKind, LayoutConfig, Plant, RawChange};

const SCOPES: [&str; 3] = ["Storage Station", "Inspection Station", "Task Planner"];
const PATTERNS: [&str; 6] = [
    "Storage Station",
    "Inspection Station",
    "Task Planner",
    "*",
    "Storage*",
    "Nowhere",
];

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new(config)
        .run(&strategy, test)
        .map_err(|e| e.to_string())
}

pub fn arb_arg() -> impl Strategy<Value = Arg> {
    prop_oneof![
        any::<i64>().prop_map(Arg::Int),
        "\\PC{0,10}".prop_map(Arg::Str),
        "[a-z '\"\\\\\n\r]{0,8}".prop_map(Arg::Str),
    ]
}

pub fn arb_call() -> impl Strategy<Value = FunctionCall> {
    ("[a-zA-Z_][a-zA-Z0-9_]{0,15}", vec(arb_arg(), 0..4)).prop_map(|(n, a)| FunctionCall::new(n, a))
}

/// Canonical rendering re-parses to the same call, and a loosely spaced
/// rendering parses to it as well.
pub fn check_call_round_trip(cases: u32) -> Result<(), String> {
    run(cases, arb_call(), |call| {
        let text = call.to_string();
        let parsed: FunctionCall = text.parse().map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert_eq!(&parsed, &call);
        prop_assert_eq!(parsed.to_string(), text);
        let args: Vec<String> = call.args.iter().map(Arg::to_string).collect();
        let loose = format!("{} (  {} )", call.name, args.join(" ,\t"));
        let parsed: FunctionCall = loose.parse().map_err(|e| TestCaseError::fail(format!("{loose}: {e}")))?;
        prop_assert_eq!(parsed, call);
        Ok(())
    })
}

fn arb_filter() -> impl Strategy<Value = Filter> {
    (
        select(PATTERNS.to_vec()),
        proptest::option::of(vec(select(Source::ALL.to_vec()), 0..3)),
        proptest::option::of(vec(select(SemanticLevel::ALL.to_vec()), 0..3)),
    )
        .prop_map(|(scope, sources, levels)| {
            let mut f = Filter::scope(scope);
            if let Some(s) = sources {
                f = f.with_sources(s);
            }
            if let Some(l) = levels {
                f = f.with_levels(l);
            }
            f
        })
}

pub fn arb_subscription() -> impl Strategy<Value = Subscription> {
    vec(arb_filter(), 0..4).prop_map(Subscription::new)
}

/// A log built through `append`, from random scopes, sources, levels and
/// non-decreasing times.
pub fn arb_log() -> impl Strategy<Value = EventLog> {
    vec(
        (
            select(SCOPES.to_vec()),
            select(Source::ALL.to_vec()),
            select(SemanticLevel::ALL.to_vec()),
            "[a-z][a-z .]{0,10}",
            0u64..3,
        ),
        0..40,
    )
    .prop_map(|rows| {
        let mut log = EventLog::default();
        let mut t = 0;
        for (scope, source, level, text, dt) in rows {
            t += dt;
            log.append(scope, source, level, text, t).expect("valid generated event");
        }
        log
    })
}

/// Views are exactly the filtered subsequence of the log.
pub fn check_log_subsequence(cases: u32) -> Result<(), String> {
    run(cases, (arb_log(), arb_subscription()), |(log, sub)| {
        let view = log.view(&sub, 0);
        let expected: Vec<Event> = log.events().iter().filter(|e| sub.matches(e)).cloned().collect();
        prop_assert_eq!(&view, &expected);
        for pair in view.windows(2) {
            prop_assert!(pair[0].seq < pair[1].seq);
        }
        for e in &view {
            prop_assert_eq!(log.get(e.seq), Some(e));
            prop_assert!(sub.filters.iter().any(|f| f.matches(e)));
        }
        for (i, e) in log.events().iter().enumerate() {
            prop_assert_eq!(e.seq, i as u64 + 1);
        }
        Ok(())
    })
}

fn operator_agent() -> crate::agent::ResolvedAgent {
    AgentConfig {
        id: "storage-operator".into(),
        role: AgentRole::Operator,
        module: Some("Storage Station".into()),
        role_text: "You operate the Storage Station.".into(),
        components: None,
        sop: vec!["Run conveyor_1_run('forward', 13) when a carrier arrives.".into()],
        auxiliary: vec![],
        subscription: Subscription::new(vec![Filter::scope("Storage Station")]),
        backend: "b".into(),
    }
    .resolve(&LayoutConfig::bundled())
    .expect("bundled layout resolves")
}

fn arb_command() -> impl Strategy<Value = AgentCommand> {
    prop_oneof![
        1 => Just(AgentCommand::NoAction),
        4 => arb_call().prop_map(AgentCommand::Call),
    ]
}

type CaseSpec = (u8, Vec<String>, String, AgentCommand, bool);

fn arb_case_spec() -> impl Strategy<Value = CaseSpec> {
    (0u8..4, vec("[A-Za-z][A-Za-z0-9 ',.]{0,20}", 1..6), "\\PC{0,30}", arb_command(), any::<bool>())
}

/// Random datasets with consistent prompts and manifests.
pub fn arb_dataset() -> impl Strategy<Value = Dataset> {
    (
        vec(("[a-z][a-z-]{0,8}", "\\PC{0,20}", vec(arb_case_spec(), 0..4)), 0..4),
        vec("\\PC{0,20}", 0..2),
        0u32..86_400,
    )
        .prop_map(|(suites, notes, epoch)| {
            let agent = operator_agent();
            let mut ds = Dataset {
                epoch: ClockTime::from_hms(epoch / 3600, epoch / 60 % 60, epoch % 60).expect("in range"),
                agents: BTreeMap::from([(agent.id.clone(), agent.clone())]),
                suites: Vec::new(),
                notes,
            };
            for (si, (name, task, specs)) in suites.into_iter().enumerate() {
                let name = format!("{name}{si}");
                let mut cases = Vec::new();
                let mut seen: Vec<Event> = Vec::new();
                for (ci, (gap, texts, reason, command, unexpected)) in specs.into_iter().enumerate() {
                    // `gap` events happen outside the agent's view between cases.
                    let start = seen.last().map_or(0, |e| e.seq) + gap as u64 + 1;
                    let new: Vec<Event> = texts
                        .into_iter()
                        .enumerate()
                        .map(|(i, text)| Event {
                            seq: start + i as u64,
                            sim_time: (start + i as u64) * 2,
                            scope: agent.scope.clone(),
                            source: if i % 2 == 0 { Source::System } else { Source::Operator },
                            level: SemanticLevel::Field,
                            text,
                        })
                        .collect();
                    let prefix = seen.clone();
                    seen.extend(new.iter().cloned());
                    let mut case = TestCase {
                        id: format!("{name}/{}", ci + 1),
                        agent: agent.id.clone(),
                        category: if unexpected { Category::Unexpected } else { Category::Routine },
                        prefix_events: prefix,
                        new_events: new,
                        expected: AgentOutput { reason, command },
                        prompt: String::new(),
                    };
                    case.prompt = ds.render_case_prompt(&case).expect("agent is known");
                    cases.push(case);
                }
                ds.suites.push(TestSuite {
                    name,
                    task_description: task,
                    cases,
                });
            }
            ds
        })
}

/// Export then import is the identity.
pub fn check_dataset_round_trip(cases: u32) -> Result<(), String> {
    run(cases, arb_dataset(), |ds| {
        ds.validate().map_err(|e| TestCaseError::fail(e.to_string()))?;
        let text = ds.to_jsonl();
        let back = Dataset::parse_str(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_jsonl(), text);
        Ok(())
    })
}

/// One random stimulus applied to the plant between ticks.
#[derive(Debug, Clone)]
pub enum PlantOp {
    Place(Disturbance),
    Invoke { module: &'static str, call: FunctionCall },
    Fault { sensor: &'static str },
}

fn arb_place() -> impl Strategy<Value = PlantOp> {
    let kinds = select(vec![EntityKind::Carrier, EntityKind::Workpiece, EntityKind::CarrierWithWorkpiece]);
    let tracks = select(vec![
        ("Storage Station", "C1", 14u32),
        ("Storage Station", "C2", 12),
        ("Inspection Station", "C2", 10),
    ]);
    (tracks, 0u32..15, kinds).prop_map(|((module, track, len), pos, kind)| {
        PlantOp::Place(Disturbance::PlaceEntity {
            module: module.into(),
            track: track.into(),
            position: pos.min(len),
            kind,
            payload: kind.carries_workpiece().then(|| "white plastic cylinder".to_string()),
        })
    })
}

fn arb_invoke() -> impl Strategy<Value = PlantOp> {
    let run = (
        select(vec![
            ("Storage Station", "conveyor_1_run"),
            ("Storage Station", "conveyor_2_run"),
            ("Inspection Station", "conveyor_2_run"),
        ]),
        select(vec!["forward", "backward"]),
        1i64..20,
    )
        .prop_map(|((module, name), dir, secs)| PlantOp::Invoke {
            module,
            call: FunctionCall::new(name, vec![dir.into(), secs.into()]),
        });
    let unary = (
        select(vec!["query_inventory_workpiece_position", "robot_arm_pick"]),
        select(vec!["A_11", "A_13", "B_21", "white plastic cylinder", "Z_99"]),
    )
        .prop_map(|(name, arg)| PlantOp::Invoke {
            module: "Storage Station",
            call: FunctionCall::new(name, vec![arg.into()]),
        });
    let nullary = select(vec!["export_verify", "H1_release", "H1_engage", "H2_release", "H2_engage"])
        .prop_map(|name| PlantOp::Invoke {
            module: "Storage Station",
            call: FunctionCall::new(name, vec![]),
        });
    prop_oneof![3 => run, 1 => unary, 2 => nullary]
}

pub fn arb_plant_op() -> impl Strategy<Value = PlantOp> {
    prop_oneof![
        2 => arb_place(),
        4 => arb_invoke(),
        1 => select(vec!["BG51", "BG56", "BG26", "BG21"]).prop_map(|sensor| PlantOp::Fault { sensor }),
    ]
}

/// Ops per tick; index 0 runs before the first tick.
pub fn arb_schedule(ticks: usize) -> impl Strategy<Value = Vec<Vec<PlantOp>>> {
    vec(vec(arb_plant_op(), 0..2), ticks)
}

/// Applies an op; errors are part of normal operation and only yield no changes.
pub fn apply(plant: &mut Plant, op: &PlantOp) -> Vec<RawChange> {
    let result = match op {
        PlantOp::Place(d) => plant.inject(d),
        PlantOp::Invoke { module, call } => plant.invoke(module, call),
        PlantOp::Fault { sensor } => plant.inject(&Disturbance::SensorFault {
            module: "Storage Station".into(),
            sensor: (*sensor).into(),
        }),
    };
    result.unwrap_or_default()
}

/// Restoring a snapshot (after a JSON round trip) and replaying the remaining
/// stimuli yields the same changes and final state as the original run.
pub fn check_snapshot_replay(cases: u32) -> Result<(), String> {
    let ticks = 40;
    run(cases, (arb_schedule(ticks), 0..ticks), move |(schedule, cut)| {
        let layout = std::sync::Arc::new(LayoutConfig::bundled());
        let mut original = Plant::new(layout.clone());
        let mut restored = None;
        let mut tail_a = Vec::new();
        let mut tail_b = Vec::new();
        for (t, ops) in schedule.iter().enumerate() {
            if t > 0 {
                let a = original.tick();
                if restored.is_some() {
                    tail_a.extend(a);
                }
                if let Some(p) = restored.as_mut() {
                    tail_b.extend(Plant::tick(p));
                }
            }
            for op in ops {
                let a = apply(&mut original, op);
                if let Some(p) = restored.as_mut() {
                    tail_a.extend(a);
                    tail_b.extend(apply(p, op));
                }
            }
            if t == cut {
                let json = serde_json::to_string(&original.snapshot()).expect("snapshot serializes");
                let snap = serde_json::from_str(&json).expect("snapshot parses");
                restored = Some(Plant::restore(layout.clone(), snap).map_err(|e| TestCaseError::fail(e.to_string()))?);
            }
        }
        let restored = restored.expect("cut is within the schedule");
        prop_assert_eq!(tail_a, tail_b);
        prop_assert_eq!(original.state(), restored.state());
        Ok(())
    })
}

/// Within a tick, an entity that stays on its track moves at most one
/// position.
pub fn check_no_teleportation(cases: u32) -> Result<(), String> {
    run(cases, arb_schedule(40), |schedule| {
        let mut plant = Plant::new(LayoutConfig::bundled());
        for (t, ops) in schedule.iter().enumerate() {
            if t > 0 {
                let before: BTreeMap<String, (String, String, u32)> = plant
                    .state()
                    .entities
                    .iter()
                    .map(|e| (e.id.clone(), (e.module.clone(), e.track.clone(), e.position)))
                    .collect();
                plant.tick();
                for e in &plant.state().entities {
                    if let Some((module, track, pos)) = before.get(&e.id) {
                        if *module == e.module && *track == e.track {
                            prop_assert!(
                                pos.abs_diff(e.position) <= 1,
                                "{} jumped from {} to {} at t={}",
                                e.id,
                                pos,
                                e.position,
                                plant.now()
                            );
                        }
                    }
                }
            }
            for op in ops {
                apply(&mut plant, op);
            }
        }
        Ok(())
    })
}
