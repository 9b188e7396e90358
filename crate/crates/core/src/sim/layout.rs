//! Plant layout configuration (JSON).
//!
//! A layout lists the automation modules of the plant. Each module owns its
//! conveyor tracks (with sensors and holders), devices, storage inventory,
//! the natural-language component descriptions handed to its operator agent
//! and the callable functions the digital twin exposes for it.
//!
//! Positions and lengths are measured in travel-seconds: the distance an
//! entity covers in one tick on a running conveyor.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::is_identifier;

const BUNDLED_LAYOUT: &str = include_str!("../../assets/storage-layout.json");

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> LayoutError {
    LayoutError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub modules: Vec<ModuleLayout>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleLayout {
    pub name: String,
    #[serde(default)]
    pub components: Vec<String>,
    #[serde(default)]
    pub tracks: Vec<TrackLayout>,
    #[serde(default)]
    pub devices: Vec<DeviceLayout>,
    /// shelf id -> workpiece name
    #[serde(default)]
    pub inventory: BTreeMap<String, String>,
    #[serde(default)]
    pub functions: Vec<FunctionDescriptor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackLayout {
    pub id: String,
    pub length: u32,
    #[serde(default)]
    pub sensors: Vec<SensorLayout>,
    #[serde(default)]
    pub holders: Vec<HolderLayout>,
    /// Where entities go when they run off the downstream end.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handoff: Option<Handoff>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    #[default]
    Proximity,
    Rfid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorLayout {
    pub id: String,
    pub position: u32,
    /// Travel-seconds between the "detects" and the "passes" edge.
    #[serde(default = "one")]
    pub dwell: u32,
    #[serde(default)]
    pub kind: SensorKind,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderLayout {
    pub id: String,
    pub position: u32,
    #[serde(default)]
    pub initially_engaged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Handoff {
    pub module: String,
    pub track: String,
    pub delay: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviceLayout {
    /// Single-action robot: picks a workpiece from a shelf and drops it on the
    /// carrier sitting at `deposit_holder`.
    RobotArm {
        id: String,
        pick_duration: u32,
        deposit_track: String,
        deposit_holder: String,
    },
}

impl DeviceLayout {
    pub fn id(&self) -> &str {
        match self {
            DeviceLayout::RobotArm { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Enum(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

/// Which simulator primitive a callable function drives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// params: (direction, time)
    RunTrack { track: String },
    ReleaseHolder { holder: String },
    EngageHolder { holder: String },
    /// params: (workpiece name)
    QueryInventory,
    /// params: (shelf id)
    RobotPick { robot: String },
    VerifyExport { track: String, holder: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionDescriptor {
    pub name: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    /// Injected verbatim into operator prompts.
    pub doc: String,
    pub effect: Effect,
}

impl FunctionDescriptor {
    /// `conveyor_1_run(direction, time)`
    pub fn signature(&self) -> String {
        let names: Vec<&str> = self.params.iter().map(|p| p.name.as_str()).collect();
        format!("{}({})", self.name, names.join(", "))
    }
}

impl LayoutConfig {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LAYOUT).expect("bundled layout is valid")
    }

    pub fn bundled_text() -> &'static str {
        BUNDLED_LAYOUT
    }

    pub fn parse(text: &str) -> Result<Self, LayoutError> {
        let layout: LayoutConfig = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn module(&self, name: &str) -> Option<&ModuleLayout> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let mut names = BTreeSet::new();
        for (mi, module) in self.modules.iter().enumerate() {
            let mp = format!("modules[{mi}]");
            if module.name.trim().is_empty() || module.name.contains(['[', ']', '\n']) {
                return Err(invalid(format!("{mp}.name"), "invalid module name"));
            }
            if !names.insert(module.name.as_str()) {
                return Err(invalid(
                    format!("{mp}.name"),
                    format!("duplicate module {:?}", module.name),
                ));
            }
            module.validate(&mp, self)?;
        }
        Ok(())
    }
}

impl ModuleLayout {
    pub fn track(&self, id: &str) -> Option<&TrackLayout> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDescriptor> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn holder(&self, id: &str) -> Option<(&TrackLayout, &HolderLayout)> {
        self.tracks
            .iter()
            .find_map(|t| t.holders.iter().find(|h| h.id == id).map(|h| (t, h)))
    }

    fn validate(&self, mp: &str, layout: &LayoutConfig) -> Result<(), LayoutError> {
        let mut track_ids = BTreeSet::new();
        let mut sensor_ids = BTreeSet::new();
        let mut holder_ids = BTreeSet::new();
        for (ti, track) in self.tracks.iter().enumerate() {
            let tp = format!("{mp}.tracks[{ti}]");
            if !track_ids.insert(track.id.as_str()) {
                return Err(invalid(format!("{tp}.id"), format!("duplicate track {:?}", track.id)));
            }
            if track.length == 0 {
                return Err(invalid(format!("{tp}.length"), "track length must be positive"));
            }
            let mut last = 0;
            for (si, sensor) in track.sensors.iter().enumerate() {
                let sp = format!("{tp}.sensors[{si}]");
                if !sensor_ids.insert(sensor.id.as_str()) {
                    return Err(invalid(
                        format!("{sp}.id"),
                        format!("duplicate sensor id {:?}", sensor.id),
                    ));
                }
                if sensor.position > track.length {
                    return Err(invalid(format!("{sp}.position"), "sensor lies beyond the track"));
                }
                if sensor.position < last {
                    return Err(invalid(
                        format!("{sp}.position"),
                        "sensor positions must be listed in increasing order",
                    ));
                }
                last = sensor.position;
                if sensor.dwell == 0 {
                    return Err(invalid(format!("{sp}.dwell"), "dwell must be at least 1"));
                }
            }
            for (hi, holder) in track.holders.iter().enumerate() {
                let hp = format!("{tp}.holders[{hi}]");
                if !holder_ids.insert(holder.id.as_str()) {
                    return Err(invalid(
                        format!("{hp}.id"),
                        format!("duplicate holder id {:?}", holder.id),
                    ));
                }
                if holder.position > track.length {
                    return Err(invalid(format!("{hp}.position"), "holder lies beyond the track"));
                }
            }
            if let Some(h) = &track.handoff {
                let target = layout.module(&h.module).and_then(|m| m.track(&h.track));
                if target.is_none() {
                    return Err(invalid(
                        format!("{tp}.handoff"),
                        format!("unknown hand-off target {}/{}", h.module, h.track),
                    ));
                }
            }
        }

        let mut device_ids = BTreeSet::new();
        for (di, device) in self.devices.iter().enumerate() {
            let dp = format!("{mp}.devices[{di}]");
            if !device_ids.insert(device.id()) {
                return Err(invalid(format!("{dp}.id"), "duplicate device id"));
            }
            match device {
                DeviceLayout::RobotArm {
                    pick_duration,
                    deposit_track,
                    deposit_holder,
                    ..
                } => {
                    if *pick_duration == 0 {
                        return Err(invalid(format!("{dp}.pick_duration"), "must be positive"));
                    }
                    let ok = self
                        .track(deposit_track)
                        .is_some_and(|t| t.holders.iter().any(|h| &h.id == deposit_holder));
                    if !ok {
                        return Err(invalid(
                            format!("{dp}.deposit_holder"),
                            format!("no holder {deposit_holder:?} on track {deposit_track:?}"),
                        ));
                    }
                }
            }
        }

        let mut fn_names = BTreeSet::new();
        for (fi, func) in self.functions.iter().enumerate() {
            let fp = format!("{mp}.functions[{fi}]");
            if !is_identifier(&func.name) {
                return Err(invalid(format!("{fp}.name"), "function name is not an identifier"));
            }
            if !fn_names.insert(func.name.as_str()) {
                return Err(invalid(
                    format!("{fp}.name"),
                    format!("duplicate function {:?}", func.name),
                ));
            }
            if func.doc.trim().is_empty() || func.doc.contains('\n') {
                return Err(invalid(format!("{fp}.doc"), "documentation must be one non-empty line"));
            }
            self.validate_effect(&fp, func)?;
        }
        Ok(())
    }

    fn validate_effect(&self, fp: &str, func: &FunctionDescriptor) -> Result<(), LayoutError> {
        use ParamType as P;
        let types: Vec<&ParamType> = func.params.iter().map(|p| &p.ty).collect();
        let shape_ok = match &func.effect {
            Effect::RunTrack { track } => {
                if self.track(track).is_none() {
                    return Err(invalid(format!("{fp}.effect"), format!("unknown track {track:?}")));
                }
                matches!(types.as_slice(), [P::Enum(_) | P::String, P::Integer])
            }
            Effect::ReleaseHolder { holder } | Effect::EngageHolder { holder } => {
                if self.holder(holder).is_none() {
                    return Err(invalid(format!("{fp}.effect"), format!("unknown holder {holder:?}")));
                }
                types.is_empty()
            }
            Effect::QueryInventory => matches!(types.as_slice(), [P::String]),
            Effect::RobotPick { robot } => {
                if !self.devices.iter().any(|d| d.id() == robot) {
                    return Err(invalid(format!("{fp}.effect"), format!("unknown robot {robot:?}")));
                }
                matches!(types.as_slice(), [P::String | P::Enum(_)])
            }
            Effect::VerifyExport { track, holder } => {
                let ok = self
                    .track(track)
                    .is_some_and(|t| t.holders.iter().any(|h| &h.id == holder));
                if !ok {
                    return Err(invalid(
                        format!("{fp}.effect"),
                        format!("no holder {holder:?} on track {track:?}"),
                    ));
                }
                types.is_empty()
            }
        };
        if !shape_ok {
            return Err(invalid(
                format!("{fp}.params"),
                "parameter list does not fit the function's effect",
            ));
        }
        Ok(())
    }
}
