//! Raw state changes produced by the simulator.
//!
//! These are the information-model deltas the observer turns into text. Each
//! change has a kind, a subject id (sensor, holder, track, function, ...) and a
//! fixed set of named bindings that rule templates may reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::state::{Direction, EntityKind};
use crate::call::FunctionCall;

/// Identity and load of the entity a change is about.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRef {
    pub id: String,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum RawChange {
    SensorDetect {
        module: String,
        sensor: String,
        track: String,
        entity: EntityRef,
    },
    SensorPass {
        module: String,
        sensor: String,
        track: String,
        entity: EntityRef,
    },
    HolderCaptured {
        module: String,
        holder: String,
        track: String,
        entity: EntityRef,
    },
    TrackStarted {
        module: String,
        track: String,
        direction: Direction,
        seconds: u32,
    },
    TrackStopped {
        module: String,
        track: String,
    },
    HolderReleased {
        module: String,
        holder: String,
    },
    HolderEngaged {
        module: String,
        holder: String,
    },
    RobotStarted {
        module: String,
        robot: String,
        shelf: String,
        workpiece: String,
    },
    RobotCompleted {
        module: String,
        robot: String,
        shelf: String,
        workpiece: String,
        deposited_on: Option<String>,
    },
    ExportVerified {
        module: String,
        track: String,
        holder: String,
        entity: EntityRef,
    },
    /// A callable function was executed. Queries carry their answer.
    FunctionInvoked {
        module: String,
        call: FunctionCall,
        answer: Option<String>,
    },
    EntityPlaced {
        module: String,
        track: String,
        position: u32,
        entity: EntityRef,
        unregistered: bool,
    },
    EntityRemoved {
        module: String,
        track: String,
        entity: EntityRef,
    },
    SensorFaulted {
        module: String,
        sensor: String,
    },
    EntityHandedOff {
        module: String,
        track: String,
        to_module: String,
        to_track: String,
        entity: EntityRef,
    },
}

/// Every change kind, with the placeholders its bindings provide.
pub const CHANGE_KINDS: &[(&str, &[&str])] = &[
    ("sensor_detect", &["module", "sensor", "track", "entity", "kind", "payload"]),
    ("sensor_pass", &["module", "sensor", "track", "entity", "kind", "payload"]),
    ("holder_captured", &["module", "holder", "track", "entity", "kind", "payload"]),
    ("track_started", &["module", "track", "direction", "seconds"]),
    ("track_stopped", &["module", "track"]),
    ("holder_released", &["module", "holder"]),
    ("holder_engaged", &["module", "holder"]),
    ("robot_started", &["module", "robot", "shelf", "workpiece"]),
    ("robot_completed", &["module", "robot", "shelf", "workpiece", "deposited"]),
    ("export_verified", &["module", "track", "holder", "entity", "kind", "payload"]),
    (
        "function_invoked",
        &[
            "module", "call", "function", "answer", "answer_status", "arg0", "arg1", "arg2",
            "arg3", "arg4", "arg5", "arg6", "arg7",
        ],
    ),
    (
        "entity_placed",
        &["module", "track", "position", "entity", "kind", "payload", "unregistered"],
    ),
    ("entity_removed", &["module", "track", "entity", "kind", "payload"]),
    ("sensor_faulted", &["module", "sensor"]),
    (
        "entity_handed_off",
        &["module", "track", "to_module", "to_track", "entity", "kind", "payload"],
    ),
];

pub fn placeholders_for(kind: &str) -> Option<&'static [&'static str]> {
    CHANGE_KINDS.iter().find(|(k, _)| *k == kind).map(|(_, p)| *p)
}

fn entity_bindings(b: &mut BTreeMap<&'static str, String>, e: &EntityRef) {
    b.insert("entity", e.id.clone());
    b.insert("kind", e.kind.noun().to_string());
    b.insert("payload", e.payload.clone().unwrap_or_default());
}

impl RawChange {
    pub fn kind(&self) -> &'static str {
        match self {
            RawChange::SensorDetect { .. } => "sensor_detect",
            RawChange::SensorPass { .. } => "sensor_pass",
            RawChange::HolderCaptured { .. } => "holder_captured",
            RawChange::TrackStarted { .. } => "track_started",
            RawChange::TrackStopped { .. } => "track_stopped",
            RawChange::HolderReleased { .. } => "holder_released",
            RawChange::HolderEngaged { .. } => "holder_engaged",
            RawChange::RobotStarted { .. } => "robot_started",
            RawChange::RobotCompleted { .. } => "robot_completed",
            RawChange::ExportVerified { .. } => "export_verified",
            RawChange::FunctionInvoked { .. } => "function_invoked",
            RawChange::EntityPlaced { .. } => "entity_placed",
            RawChange::EntityRemoved { .. } => "entity_removed",
            RawChange::SensorFaulted { .. } => "sensor_faulted",
            RawChange::EntityHandedOff { .. } => "entity_handed_off",
        }
    }

    pub fn module(&self) -> &str {
        match self {
            RawChange::SensorDetect { module, .. }
            | RawChange::SensorPass { module, .. }
            | RawChange::HolderCaptured { module, .. }
            | RawChange::TrackStarted { module, .. }
            | RawChange::TrackStopped { module, .. }
            | RawChange::HolderReleased { module, .. }
            | RawChange::HolderEngaged { module, .. }
            | RawChange::RobotStarted { module, .. }
            | RawChange::RobotCompleted { module, .. }
            | RawChange::ExportVerified { module, .. }
            | RawChange::FunctionInvoked { module, .. }
            | RawChange::EntityPlaced { module, .. }
            | RawChange::EntityRemoved { module, .. }
            | RawChange::SensorFaulted { module, .. }
            | RawChange::EntityHandedOff { module, .. } => module,
        }
    }

    /// The id a rule trigger's `subject` is compared against.
    pub fn subject(&self) -> &str {
        match self {
            RawChange::SensorDetect { sensor, .. }
            | RawChange::SensorPass { sensor, .. }
            | RawChange::SensorFaulted { sensor, .. } => sensor,
            RawChange::HolderCaptured { holder, .. }
            | RawChange::HolderReleased { holder, .. }
            | RawChange::HolderEngaged { holder, .. }
            | RawChange::ExportVerified { holder, .. } => holder,
            RawChange::TrackStarted { track, .. }
            | RawChange::TrackStopped { track, .. }
            | RawChange::EntityPlaced { track, .. }
            | RawChange::EntityRemoved { track, .. }
            | RawChange::EntityHandedOff { track, .. } => track,
            RawChange::RobotStarted { robot, .. } | RawChange::RobotCompleted { robot, .. } => {
                robot
            }
            RawChange::FunctionInvoked { call, .. } => &call.name,
        }
    }

    pub fn bindings(&self) -> BTreeMap<&'static str, String> {
        let mut b = BTreeMap::new();
        b.insert("module", self.module().to_string());
        match self {
            RawChange::SensorDetect {
                sensor,
                track,
                entity,
                ..
            }
            | RawChange::SensorPass {
                sensor,
                track,
                entity,
                ..
            } => {
                b.insert("sensor", sensor.clone());
                b.insert("track", track.clone());
                entity_bindings(&mut b, entity);
            }
            RawChange::HolderCaptured {
                holder,
                track,
                entity,
                ..
            }
            | RawChange::ExportVerified {
                holder,
                track,
                entity,
                ..
            } => {
                b.insert("holder", holder.clone());
                b.insert("track", track.clone());
                entity_bindings(&mut b, entity);
            }
            RawChange::TrackStarted {
                track,
                direction,
                seconds,
                ..
            } => {
                b.insert("track", track.clone());
                b.insert("direction", direction.as_str().to_string());
                b.insert("seconds", seconds.to_string());
            }
            RawChange::TrackStopped { track, .. } => {
                b.insert("track", track.clone());
            }
            RawChange::HolderReleased { holder, .. } | RawChange::HolderEngaged { holder, .. } => {
                b.insert("holder", holder.clone());
            }
            RawChange::RobotStarted {
                robot,
                shelf,
                workpiece,
                ..
            } => {
                b.insert("robot", robot.clone());
                b.insert("shelf", shelf.clone());
                b.insert("workpiece", workpiece.clone());
            }
            RawChange::RobotCompleted {
                robot,
                shelf,
                workpiece,
                deposited_on,
                ..
            } => {
                b.insert("robot", robot.clone());
                b.insert("shelf", shelf.clone());
                b.insert("workpiece", workpiece.clone());
                let deposited = if deposited_on.is_some() { "yes" } else { "no" };
                b.insert("deposited", deposited.to_string());
            }
            RawChange::FunctionInvoked { call, answer, .. } => {
                b.insert("call", call.to_string());
                b.insert("function", call.name.clone());
                b.insert("answer", answer.clone().unwrap_or_default());
                let status = if answer.is_some() { "found" } else { "missing" };
                b.insert("answer_status", status.to_string());
                const ARGS: [&str; 8] =
                    ["arg0", "arg1", "arg2", "arg3", "arg4", "arg5", "arg6", "arg7"];
                for (slot, arg) in ARGS.iter().zip(&call.args) {
                    b.insert(slot, arg.plain());
                }
            }
            RawChange::EntityPlaced {
                track,
                position,
                entity,
                unregistered,
                ..
            } => {
                b.insert("track", track.clone());
                b.insert("position", position.to_string());
                entity_bindings(&mut b, entity);
                b.insert("unregistered", if *unregistered { "yes" } else { "no" }.to_string());
            }
            RawChange::EntityRemoved { track, entity, .. } => {
                b.insert("track", track.clone());
                entity_bindings(&mut b, entity);
            }
            RawChange::SensorFaulted { sensor, .. } => {
                b.insert("sensor", sensor.clone());
            }
            RawChange::EntityHandedOff {
                track,
                to_module,
                to_track,
                entity,
                ..
            } => {
                b.insert("track", track.clone());
                b.insert("to_module", to_module.clone());
                b.insert("to_track", to_track.clone());
                entity_bindings(&mut b, entity);
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_stay_within_declared_placeholders() {
        let entity = EntityRef {
            id: "E1".into(),
            kind: EntityKind::Carrier,
            payload: None,
        };
        let samples = vec![
            RawChange::SensorDetect {
                module: "M".into(),
                sensor: "S".into(),
                track: "C1".into(),
                entity: entity.clone(),
            },
            RawChange::RobotCompleted {
                module: "M".into(),
                robot: "R1".into(),
                shelf: "A_13".into(),
                workpiece: "w".into(),
                deposited_on: Some("E1".into()),
            },
            RawChange::FunctionInvoked {
                module: "M".into(),
                call: "f('a', 1)".parse().unwrap(),
                answer: None,
            },
            RawChange::EntityHandedOff {
                module: "M".into(),
                track: "C2".into(),
                to_module: "N".into(),
                to_track: "C1".into(),
                entity,
            },
        ];
        for change in samples {
            let allowed = placeholders_for(change.kind()).unwrap();
            for key in change.bindings().keys() {
                assert!(allowed.contains(key), "{} binds undeclared {key}", change.kind());
            }
        }
    }

    #[test]
    fn function_bindings_expose_positional_args() {
        let change = RawChange::FunctionInvoked {
            module: "Storage Station".into(),
            call: "conveyor_1_run('forward', 13)".parse().unwrap(),
            answer: None,
        };
        let b = change.bindings();
        assert_eq!(change.subject(), "conveyor_1_run");
        assert_eq!(b["arg0"], "forward");
        assert_eq!(b["arg1"], "13");
        assert_eq!(b["answer_status"], "missing");
        assert_eq!(b["call"], "conveyor_1_run('forward', 13)");
    }
}
