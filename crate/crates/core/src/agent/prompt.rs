use serde::{Deserialize, Serialize};

use super::config::ResolvedAgent;
use crate::event::{ClockTime, Event, EventLog};

pub const SECTION_TITLES: [&str; 6] = [
    "Role Definition",
    "Component Description",
    "Callable Functions",
    "Standard Operation Procedure",
    "Auxiliary Instruction",
    "Event Log",
];

const EMPTY: &str = "(none)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPrompt {
    pub text: String,
    /// Seq of the last event included; 0 when the view is empty.
    pub cursor: u64,
}

fn bullets(items: impl IntoIterator<Item = String>) -> String {
    let lines: Vec<String> = items.into_iter().map(|i| format!("- {i}")).collect();
    if lines.is_empty() {
        EMPTY.to_string()
    } else {
        lines.join("\n")
    }
}

/// Assembles the prompt from the agent's sections and an explicit event list.
pub fn render_prompt(agent: &ResolvedAgent, events: &[Event], epoch: ClockTime) -> AgentPrompt {
    let log = if events.is_empty() {
        EMPTY.to_string()
    } else {
        events
            .iter()
            .map(|e| e.render(epoch))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let bodies = [
        agent.role_text.trim().to_string(),
        bullets(agent.components.iter().cloned()),
        bullets(agent.functions.iter().map(|f| format!("{} - {}", f.signature, f.doc))),
        bullets(agent.sop.iter().cloned()),
        bullets(agent.auxiliary.iter().cloned()),
        log,
    ];
    let text = SECTION_TITLES
        .iter()
        .zip(bodies)
        .map(|(title, body)| {
            let body = if body.is_empty() { EMPTY.to_string() } else { body };
            format!("{title}:\n{body}")
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    AgentPrompt {
        text,
        cursor: events.last().map_or(0, |e| e.seq),
    }
}

/// Prompt over the agent's full subscribed view of `log`.
pub fn build_prompt(agent: &ResolvedAgent, log: &EventLog) -> AgentPrompt {
    render_prompt(agent, &log.view(&agent.subscription, 0), log.epoch())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::config::{AgentConfig, AgentRole};
    use crate::event::{Filter, SemanticLevel, Source, Subscription};
    use crate::sim::LayoutConfig;

    fn agent(sop: Vec<String>) -> ResolvedAgent {
        AgentConfig {
            id: "op".into(),
            role: AgentRole::Operator,
            module: Some("Storage Station".into()),
            role_text: "You are the operator.".into(),
            components: Some(vec!["BG56 is a sensor.".into()]),
            sop,
            auxiliary: vec!["Answer in JSON.".into()],
            subscription: Subscription::new(vec![Filter::scope("Storage Station")]),
            backend: "x".into(),
        }
        .resolve(&LayoutConfig::bundled())
        .unwrap()
    }

    #[test]
    fn sections_in_order_and_empty_marker() {
        let log = EventLog::default();
        let p = build_prompt(&agent(vec![]), &log);
        let positions: Vec<usize> = SECTION_TITLES
            .iter()
            .map(|t| p.text.find(&format!("{t}:\n")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert!(p.text.contains("Standard Operation Procedure:\n(none)\n\n"));
        assert!(p.text.ends_with("Event Log:\n(none)"));
        assert_eq!(p.cursor, 0);
    }

    #[test]
    fn event_section_is_the_filtered_view() {
        let mut log = EventLog::default();
        log.append("Storage Station", Source::System, SemanticLevel::Field, "one", 1).unwrap();
        log.append("Elsewhere", Source::System, SemanticLevel::Field, "hidden", 1).unwrap();
        log.append("Storage Station", Source::Operator, SemanticLevel::Field, "two", 2).unwrap();
        let a = agent(vec!["Be careful.".into()]);
        let p = build_prompt(&a, &log);
        assert!(p.text.ends_with(
            "Event Log:\n[Storage Station][System][12:00:01] one\n[Storage Station][Operator][12:00:02] two"
        ));
        assert!(!p.text.contains("hidden"));
        assert!(p.text.contains("- conveyor_1_run(direction, time) - Starts conveyor C1"));
        assert_eq!(p.cursor, 3);
        assert_eq!(build_prompt(&a, &log), p);
    }
}
