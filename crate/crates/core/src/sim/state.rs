use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(format!("direction must be 'forward' or 'backward', got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Carrier,
    Workpiece,
    CarrierWithWorkpiece,
}

impl EntityKind {
    /// Word used in event text.
    pub fn noun(self) -> &'static str {
        match self {
            EntityKind::Carrier => "carrier",
            EntityKind::Workpiece => "workpiece",
            EntityKind::CarrierWithWorkpiece => "loaded carrier",
        }
    }

    pub fn carries_workpiece(self) -> bool {
        !matches!(self, EntityKind::Carrier)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.noun())
    }
}

pub const FLAG_EXPORT_VERIFIED: &str = "export_verified";
pub const FLAG_UNREGISTERED: &str = "unregistered";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    pub module: String,
    pub track: String,
    pub position: u32,
    #[serde(default)]
    pub flags: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackState {
    pub module: String,
    pub id: String,
    pub running: bool,
    pub direction: Direction,
    pub remaining_run: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorState {
    pub module: String,
    pub id: String,
    pub faulty: bool,
    /// Entities detected and not yet passed.
    pub present: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolderState {
    pub module: String,
    pub id: String,
    pub engaged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotJob {
    pub busy_until: u64,
    pub shelf: String,
    pub workpiece: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotState {
    pub module: String,
    pub id: String,
    pub job: Option<RobotJob>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transit {
    pub entity: Entity,
    pub arrive_at: u64,
}

/// Complete dynamic state of the plant. Serializes losslessly, so it doubles
/// as the snapshot format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantState {
    pub now: u64,
    pub next_entity: u64,
    pub tracks: Vec<TrackState>,
    pub sensors: Vec<SensorState>,
    pub holders: Vec<HolderState>,
    pub robots: Vec<RobotState>,
    pub entities: Vec<Entity>,
    pub in_transit: Vec<Transit>,
    /// module -> shelf -> workpiece
    pub inventory: BTreeMap<String, BTreeMap<String, String>>,
}

/// Scenario perturbations, used to author unexpected situations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Disturbance {
    PlaceEntity {
        module: String,
        track: String,
        position: u32,
        kind: EntityKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        payload: Option<String>,
    },
    SensorFault {
        module: String,
        sensor: String,
    },
    RemoveEntity {
        entity: String,
    },
    /// A workpiece that is not registered anywhere shows up at a track infeed.
    UnknownWorkpiece {
        module: String,
        track: String,
        payload: String,
    },
}
