//! Deterministic discrete-event simulator of the automation modules.
//!
//! Time advances in whole seconds. Every unheld entity on a running track
//! moves exactly one travel-second per tick; sensors report rising
//! ("detects") and falling ("passes") edges; holders stop entities; the robot
//! arm runs one pick at a time. All mutation goes through [`Plant::invoke`],
//! [`Plant::tick`] and [`Plant::inject`], which return the raw changes for
//! the observer.

mod change;
mod layout;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

pub use change::{placeholders_for, EntityRef, RawChange, CHANGE_KINDS};
pub use layout::{
    DeviceLayout, Effect, FunctionDescriptor, Handoff, HolderLayout, LayoutConfig, LayoutError,
    ModuleLayout, ParamSpec, ParamType, SensorKind, SensorLayout, TrackLayout,
};
pub use state::{
    Direction, Disturbance, Entity, EntityKind, HolderState, PlantState, RobotJob, RobotState,
    SensorState, TrackState, Transit, FLAG_EXPORT_VERIFIED, FLAG_UNREGISTERED,
};

use crate::call::{Arg, FunctionCall};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("unknown module {0:?}")]
    UnknownModule(String),
    #[error("unknown function '{function}' in {module}")]
    UnknownFunction { module: String, function: String },
    #[error("{function} expects {expected} argument(s), got {got}")]
    ArityMismatch {
        function: String,
        expected: usize,
        got: usize,
    },
    #[error("bad argument '{param}' for {function}: {reason}")]
    BadArgument {
        function: String,
        param: String,
        reason: String,
    },
    #[error("{device} is busy")]
    DeviceBusy { device: String },
    #[error("{0}")]
    InvalidState(String),
    #[error("unknown track {module}/{track}")]
    UnknownTrack { module: String, track: String },
    #[error("position {position} lies outside track {track} (length {length})")]
    BadPosition {
        track: String,
        position: u32,
        length: u32,
    },
    #[error("unknown sensor {module}/{sensor}")]
    UnknownSensor { module: String, sensor: String },
    #[error("no entity {0:?} in the plant")]
    UnknownEntity(String),
    #[error("snapshot does not fit the layout: {0}")]
    SnapshotMismatch(String),
}

/// A layout plus its dynamic state.
#[derive(Debug, Clone)]
pub struct Plant {
    layout: Arc<LayoutConfig>,
    state: PlantState,
}

impl Plant {
    pub fn new(layout: impl Into<Arc<LayoutConfig>>) -> Self {
        let layout = layout.into();
        let mut state = PlantState {
            now: 0,
            next_entity: 1,
            tracks: Vec::new(),
            sensors: Vec::new(),
            holders: Vec::new(),
            robots: Vec::new(),
            entities: Vec::new(),
            in_transit: Vec::new(),
            inventory: BTreeMap::new(),
        };
        for module in &layout.modules {
            for track in &module.tracks {
                state.tracks.push(TrackState {
                    module: module.name.clone(),
                    id: track.id.clone(),
                    running: false,
                    direction: Direction::Forward,
                    remaining_run: 0,
                });
                for sensor in &track.sensors {
                    state.sensors.push(SensorState {
                        module: module.name.clone(),
                        id: sensor.id.clone(),
                        faulty: false,
                        present: BTreeSet::new(),
                    });
                }
                for holder in &track.holders {
                    state.holders.push(HolderState {
                        module: module.name.clone(),
                        id: holder.id.clone(),
                        engaged: holder.initially_engaged,
                    });
                }
            }
            for device in &module.devices {
                match device {
                    DeviceLayout::RobotArm { id, .. } => state.robots.push(RobotState {
                        module: module.name.clone(),
                        id: id.clone(),
                        job: None,
                    }),
                }
            }
            if !module.inventory.is_empty() {
                state
                    .inventory
                    .insert(module.name.clone(), module.inventory.clone());
            }
        }
        Self { layout, state }
    }

    /// Rebuilds a plant from a snapshot taken with [`Plant::snapshot`].
    pub fn restore(layout: impl Into<Arc<LayoutConfig>>, snapshot: PlantState) -> Result<Self, SimError> {
        let fresh = Plant::new(layout);
        let same_shape = |a: &[TrackState], b: &[TrackState]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.module == y.module && x.id == y.id)
        };
        if !same_shape(&fresh.state.tracks, &snapshot.tracks)
            || fresh.state.sensors.len() != snapshot.sensors.len()
            || fresh.state.holders.len() != snapshot.holders.len()
            || fresh.state.robots.len() != snapshot.robots.len()
        {
            return Err(SimError::SnapshotMismatch(
                "track, sensor, holder or robot lists differ".into(),
            ));
        }
        Ok(Self {
            layout: fresh.layout,
            state: snapshot,
        })
    }

    pub fn layout(&self) -> &LayoutConfig {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<LayoutConfig> {
        Arc::clone(&self.layout)
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn now(&self) -> u64 {
        self.state.now
    }

    pub fn snapshot(&self) -> PlantState {
        self.state.clone()
    }

    fn module(&self, name: &str) -> Result<&ModuleLayout, SimError> {
        self.layout
            .module(name)
            .ok_or_else(|| SimError::UnknownModule(name.to_string()))
    }

    fn track_index(&self, module: &str, track: &str) -> Option<usize> {
        self.state
            .tracks
            .iter()
            .position(|t| t.module == module && t.id == track)
    }

    fn holder_index(&self, module: &str, holder: &str) -> Option<usize> {
        self.state
            .holders
            .iter()
            .position(|h| h.module == module && h.id == holder)
    }

    fn holder_engaged_at(&self, module: &str, track: &TrackLayout, position: u32) -> bool {
        track.holders.iter().any(|h| {
            h.position == position
                && self
                    .holder_index(module, &h.id)
                    .is_some_and(|i| self.state.holders[i].engaged)
        })
    }

    fn new_entity_id(&mut self) -> String {
        let id = format!("E{}", self.state.next_entity);
        self.state.next_entity += 1;
        id
    }

    /// Executes one callable function of `module`.
    ///
    /// The call is fully validated before anything is mutated; on error the
    /// plant is unchanged.
    pub fn invoke(&mut self, module: &str, call: &FunctionCall) -> Result<Vec<RawChange>, SimError> {
        let layout = Arc::clone(&self.layout);
        let module_layout = layout
            .module(module)
            .ok_or_else(|| SimError::UnknownModule(module.to_string()))?;
        let func = module_layout
            .function(&call.name)
            .ok_or_else(|| SimError::UnknownFunction {
                module: module.to_string(),
                function: call.name.clone(),
            })?;
        check_args(func, call)?;

        let bad = |param: usize, reason: String| SimError::BadArgument {
            function: func.name.clone(),
            param: func.params[param].name.clone(),
            reason,
        };
        let invoked = |answer: Option<String>| RawChange::FunctionInvoked {
            module: module.to_string(),
            call: call.clone(),
            answer,
        };

        match &func.effect {
            Effect::RunTrack { track } => {
                let direction: Direction = call.args[0]
                    .as_str()
                    .unwrap_or_default()
                    .parse()
                    .map_err(|e| bad(0, e))?;
                let seconds = call.args[1].as_int().unwrap_or_default();
                if seconds <= 0 {
                    return Err(bad(1, "must be a positive number of seconds".into()));
                }
                let seconds = u32::try_from(seconds).map_err(|_| bad(1, "too large".into()))?;
                let idx = self
                    .track_index(module, track)
                    .expect("validated layout track");
                let ts = &mut self.state.tracks[idx];
                ts.running = true;
                ts.direction = direction;
                ts.remaining_run = seconds;
                Ok(vec![
                    invoked(None),
                    RawChange::TrackStarted {
                        module: module.to_string(),
                        track: track.clone(),
                        direction,
                        seconds,
                    },
                ])
            }
            Effect::ReleaseHolder { holder } | Effect::EngageHolder { holder } => {
                let engage = matches!(func.effect, Effect::EngageHolder { .. });
                let idx = self
                    .holder_index(module, holder)
                    .expect("validated layout holder");
                self.state.holders[idx].engaged = engage;
                let change = if engage {
                    RawChange::HolderEngaged {
                        module: module.to_string(),
                        holder: holder.clone(),
                    }
                } else {
                    RawChange::HolderReleased {
                        module: module.to_string(),
                        holder: holder.clone(),
                    }
                };
                Ok(vec![invoked(None), change])
            }
            Effect::QueryInventory => {
                let wanted = call.args[0].as_str().unwrap_or_default();
                let answer = self.state.inventory.get(module).and_then(|shelves| {
                    shelves
                        .iter()
                        .find(|(_, name)| name.as_str() == wanted)
                        .map(|(shelf, _)| shelf.clone())
                });
                Ok(vec![invoked(answer)])
            }
            Effect::RobotPick { robot } => {
                let shelf = call.args[0].as_str().unwrap_or_default().to_string();
                let ridx = self
                    .state
                    .robots
                    .iter()
                    .position(|r| r.module == module && &r.id == robot)
                    .expect("validated layout robot");
                if self.state.robots[ridx].job.is_some() {
                    return Err(SimError::DeviceBusy {
                        device: format!("robot arm {robot}"),
                    });
                }
                let workpiece = self
                    .state
                    .inventory
                    .get(module)
                    .and_then(|s| s.get(&shelf))
                    .cloned()
                    .ok_or_else(|| bad(0, format!("shelf {shelf:?} holds no workpiece")))?;
                let duration = module_layout
                    .devices
                    .iter()
                    .find_map(|d| match d {
                        DeviceLayout::RobotArm {
                            id, pick_duration, ..
                        } if id == robot => Some(*pick_duration),
                        _ => None,
                    })
                    .expect("validated layout robot");
                if let Some(shelves) = self.state.inventory.get_mut(module) {
                    shelves.remove(&shelf);
                }
                self.state.robots[ridx].job = Some(RobotJob {
                    busy_until: self.state.now + u64::from(duration),
                    shelf: shelf.clone(),
                    workpiece: workpiece.clone(),
                });
                Ok(vec![
                    invoked(None),
                    RawChange::RobotStarted {
                        module: module.to_string(),
                        robot: robot.clone(),
                        shelf,
                        workpiece,
                    },
                ])
            }
            Effect::VerifyExport { track, holder } => {
                let (_, h) = module_layout.holder(holder).expect("validated layout holder");
                let pos = h.position;
                let entity = self
                    .state
                    .entities
                    .iter_mut()
                    .find(|e| e.module == module && &e.track == track && e.position == pos)
                    .ok_or_else(|| {
                        SimError::InvalidState(format!("no workpiece is held at {holder}"))
                    })?;
                if entity.flags.contains(FLAG_UNREGISTERED) {
                    return Err(SimError::InvalidState(format!(
                        "the workpiece at {holder} is not registered for export"
                    )));
                }
                entity.flags.insert(FLAG_EXPORT_VERIFIED.to_string());
                let entity = entity_ref(entity);
                Ok(vec![
                    invoked(None),
                    RawChange::ExportVerified {
                        module: module.to_string(),
                        track: track.clone(),
                        holder: holder.clone(),
                        entity,
                    },
                ])
            }
        }
    }

    /// Advances simulated time by one second.
    pub fn tick(&mut self) -> Vec<RawChange> {
        let layout = Arc::clone(&self.layout);
        let mut changes = Vec::new();
        self.state.now += 1;
        let now = self.state.now;

        // robot completions
        for ridx in 0..self.state.robots.len() {
            let done = matches!(&self.state.robots[ridx].job, Some(j) if j.busy_until <= now);
            if !done {
                continue;
            }
            let job = self.state.robots[ridx].job.take().expect("checked above");
            let module = self.state.robots[ridx].module.clone();
            let robot = self.state.robots[ridx].id.clone();
            let deposit = layout.module(&module).and_then(|m| {
                m.devices.iter().find_map(|d| match d {
                    DeviceLayout::RobotArm {
                        id,
                        deposit_track,
                        deposit_holder,
                        ..
                    } if *id == robot => m
                        .holder(deposit_holder)
                        .map(|(_, h)| (deposit_track.clone(), h.position)),
                    _ => None,
                })
            });
            let mut deposited_on = None;
            if let Some((track, pos)) = deposit {
                if let Some(carrier) = self.state.entities.iter_mut().find(|e| {
                    e.module == module
                        && e.track == track
                        && e.position == pos
                        && e.kind == EntityKind::Carrier
                }) {
                    carrier.kind = EntityKind::CarrierWithWorkpiece;
                    carrier.payload = Some(job.workpiece.clone());
                    deposited_on = Some(carrier.id.clone());
                }
            }
            changes.push(RawChange::RobotCompleted {
                module,
                robot,
                shelf: job.shelf,
                workpiece: job.workpiece,
                deposited_on,
            });
        }

        // arrivals from inter-station hand-offs
        let (arrived, waiting): (Vec<Transit>, Vec<Transit>) = std::mem::take(&mut self.state.in_transit)
            .into_iter()
            .partition(|t| t.arrive_at <= now);
        self.state.in_transit = waiting;
        self.state.entities.extend(arrived.into_iter().map(|t| t.entity));

        // conveyor movement
        for tidx in 0..self.state.tracks.len() {
            if !self.state.tracks[tidx].running {
                continue;
            }
            let module = self.state.tracks[tidx].module.clone();
            let track_id = self.state.tracks[tidx].id.clone();
            let direction = self.state.tracks[tidx].direction;
            let track = layout
                .module(&module)
                .and_then(|m| m.track(&track_id))
                .expect("state mirrors layout");

            let mut eidx = 0;
            while eidx < self.state.entities.len() {
                let e = &self.state.entities[eidx];
                if e.module != module || e.track != track_id {
                    eidx += 1;
                    continue;
                }
                if self.holder_engaged_at(&module, track, e.position) {
                    eidx += 1;
                    continue;
                }
                let pos = e.position;
                match direction {
                    Direction::Forward if pos >= track.length => {
                        if let Some(h) = &track.handoff {
                            let mut entity = self.state.entities.remove(eidx);
                            changes.push(RawChange::EntityHandedOff {
                                module: module.clone(),
                                track: track_id.clone(),
                                to_module: h.module.clone(),
                                to_track: h.track.clone(),
                                entity: entity_ref(&entity),
                            });
                            entity.module = h.module.clone();
                            entity.track = h.track.clone();
                            entity.position = 0;
                            self.state.in_transit.push(Transit {
                                entity,
                                arrive_at: now + u64::from(h.delay),
                            });
                            continue;
                        }
                    }
                    Direction::Backward if pos == 0 => {}
                    _ => {
                        let next = match direction {
                            Direction::Forward => pos + 1,
                            Direction::Backward => pos - 1,
                        };
                        self.state.entities[eidx].position = next;
                        if let Some(h) = track.holders.iter().find(|h| {
                            h.position == next
                                && self
                                    .holder_index(&module, &h.id)
                                    .is_some_and(|i| self.state.holders[i].engaged)
                        }) {
                            changes.push(RawChange::HolderCaptured {
                                module: module.clone(),
                                holder: h.id.clone(),
                                track: track_id.clone(),
                                entity: entity_ref(&self.state.entities[eidx]),
                            });
                        }
                    }
                }
                eidx += 1;
            }

            let ts = &mut self.state.tracks[tidx];
            ts.remaining_run -= 1;
            if ts.remaining_run == 0 {
                ts.running = false;
                changes.push(RawChange::TrackStopped {
                    module: module.clone(),
                    track: track_id.clone(),
                });
            }
        }

        changes.extend(self.sensor_edges());
        changes
    }

    fn sensor_edges(&mut self) -> Vec<RawChange> {
        let layout = Arc::clone(&self.layout);
        let mut changes = Vec::new();
        let mut sidx = 0;
        for module in &layout.modules {
            for track in &module.tracks {
                for sensor in &track.sensors {
                    let state_idx = sidx;
                    sidx += 1;
                    if self.state.sensors[state_idx].faulty {
                        continue;
                    }
                    let on_track: Vec<&Entity> = self
                        .state
                        .entities
                        .iter()
                        .filter(|e| e.module == module.name && e.track == track.id)
                        .collect();
                    let present = &self.state.sensors[state_idx].present;

                    let mut passed = Vec::new();
                    for id in present {
                        match on_track.iter().find(|e| &e.id == id) {
                            Some(e) if e.position.abs_diff(sensor.position) >= sensor.dwell => {
                                passed.push((id.clone(), Some(entity_ref(e))));
                            }
                            Some(_) => {}
                            None => passed.push((id.clone(), None)),
                        }
                    }
                    let arrived: Vec<EntityRef> = on_track
                        .iter()
                        .filter(|e| e.position == sensor.position && !present.contains(&e.id))
                        .map(|e| entity_ref(e))
                        .collect();

                    let sensor_state = &mut self.state.sensors[state_idx];
                    for (id, entity) in passed {
                        sensor_state.present.remove(&id);
                        if let Some(entity) = entity {
                            changes.push(RawChange::SensorPass {
                                module: module.name.clone(),
                                sensor: sensor.id.clone(),
                                track: track.id.clone(),
                                entity,
                            });
                        }
                    }
                    for entity in arrived {
                        sensor_state.present.insert(entity.id.clone());
                        changes.push(RawChange::SensorDetect {
                            module: module.name.clone(),
                            sensor: sensor.id.clone(),
                            track: track.id.clone(),
                            entity,
                        });
                    }
                }
            }
        }
        changes
    }

    /// Applies a scenario disturbance.
    pub fn inject(&mut self, disturbance: &Disturbance) -> Result<Vec<RawChange>, SimError> {
        match disturbance {
            Disturbance::PlaceEntity {
                module,
                track,
                position,
                kind,
                payload,
            } => {
                if kind.carries_workpiece() != payload.is_some() {
                    return Err(SimError::InvalidState(format!(
                        "a {kind} {} a payload name",
                        if payload.is_some() { "cannot carry" } else { "needs" }
                    )));
                }
                self.place(module, track, *position, *kind, payload.clone(), false)
            }
            Disturbance::UnknownWorkpiece {
                module,
                track,
                payload,
            } => self.place(module, track, 0, EntityKind::Workpiece, Some(payload.clone()), true),
            Disturbance::SensorFault { module, sensor } => {
                let idx = self
                    .state
                    .sensors
                    .iter()
                    .position(|s| &s.module == module && &s.id == sensor)
                    .ok_or_else(|| SimError::UnknownSensor {
                        module: module.clone(),
                        sensor: sensor.clone(),
                    })?;
                self.state.sensors[idx].faulty = true;
                Ok(vec![RawChange::SensorFaulted {
                    module: module.clone(),
                    sensor: sensor.clone(),
                }])
            }
            Disturbance::RemoveEntity { entity } => {
                let idx = self
                    .state
                    .entities
                    .iter()
                    .position(|e| &e.id == entity)
                    .ok_or_else(|| SimError::UnknownEntity(entity.clone()))?;
                let removed = self.state.entities.remove(idx);
                Ok(vec![RawChange::EntityRemoved {
                    module: removed.module.clone(),
                    track: removed.track.clone(),
                    entity: entity_ref(&removed),
                }])
            }
        }
    }

    fn place(
        &mut self,
        module: &str,
        track: &str,
        position: u32,
        kind: EntityKind,
        payload: Option<String>,
        unregistered: bool,
    ) -> Result<Vec<RawChange>, SimError> {
        let length = self
            .module(module)?
            .track(track)
            .ok_or_else(|| SimError::UnknownTrack {
                module: module.to_string(),
                track: track.to_string(),
            })?
            .length;
        if position > length {
            return Err(SimError::BadPosition {
                track: track.to_string(),
                position,
                length,
            });
        }
        let id = self.new_entity_id();
        let mut flags = BTreeSet::new();
        if unregistered {
            flags.insert(FLAG_UNREGISTERED.to_string());
        }
        let entity = Entity {
            id,
            kind,
            payload,
            module: module.to_string(),
            track: track.to_string(),
            position,
            flags,
        };
        let change = RawChange::EntityPlaced {
            module: module.to_string(),
            track: track.to_string(),
            position,
            entity: entity_ref(&entity),
            unregistered,
        };
        self.state.entities.push(entity);
        Ok(vec![change])
    }

    /// True when nothing will change on the next tick unless acted upon.
    pub fn is_idle(&self) -> bool {
        self.state.tracks.iter().all(|t| !t.running)
            && self.state.robots.iter().all(|r| r.job.is_none())
            && self.state.in_transit.is_empty()
    }
}

fn entity_ref(e: &Entity) -> EntityRef {
    EntityRef {
        id: e.id.clone(),
        kind: e.kind,
        payload: e.payload.clone(),
    }
}

fn check_args(func: &FunctionDescriptor, call: &FunctionCall) -> Result<(), SimError> {
    if func.params.len() != call.args.len() {
        return Err(SimError::ArityMismatch {
            function: func.name.clone(),
            expected: func.params.len(),
            got: call.args.len(),
        });
    }
    for (param, arg) in func.params.iter().zip(&call.args) {
        let reason = match (&param.ty, arg) {
            (ParamType::String, Arg::Str(_)) | (ParamType::Integer, Arg::Int(_)) => None,
            (ParamType::Enum(options), Arg::Str(s)) if options.contains(s) => None,
            (ParamType::Enum(options), _) => Some(format!(
                "expected one of {}",
                options
                    .iter()
                    .map(|o| format!("'{o}'"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )),
            (ParamType::String, Arg::Int(_)) => Some("expected a string".to_string()),
            (ParamType::Integer, Arg::Str(_)) => Some("expected an integer".to_string()),
        };
        if let Some(reason) = reason {
            return Err(SimError::BadArgument {
                function: func.name.clone(),
                param: param.name.clone(),
                reason,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const STORAGE: &str = "Storage Station";

    fn plant() -> Plant {
        Plant::new(LayoutConfig::bundled())
    }

    fn call(text: &str) -> FunctionCall {
        text.parse().unwrap()
    }

    fn place(plant: &mut Plant, track: &str, kind: EntityKind, payload: Option<&str>) {
        plant
            .inject(&Disturbance::PlaceEntity {
                module: STORAGE.into(),
                track: track.into(),
                position: 0,
                kind,
                payload: payload.map(str::to_string),
            })
            .unwrap();
    }

    /// (tick index, kind, subject) for every change over `n` ticks.
    fn run(plant: &mut Plant, n: u64) -> Vec<(u64, &'static str, String)> {
        let mut out = Vec::new();
        for _ in 0..n {
            for c in plant.tick() {
                out.push((plant.now(), c.kind(), c.subject().to_string()));
            }
        }
        out
    }

    #[test]
    fn idle_plant_tick_is_silent() {
        let mut p = plant();
        assert!(p.tick().is_empty());
        assert_eq!(p.now(), 1);
    }

    #[test]
    fn run_call_starts_the_track() {
        let mut p = plant();
        let changes = p.invoke(STORAGE, &call("conveyor_1_run('forward', 13)")).unwrap();
        assert_eq!(changes[0].kind(), "function_invoked");
        assert_eq!(
            changes[1],
            RawChange::TrackStarted {
                module: STORAGE.into(),
                track: "C1".into(),
                direction: Direction::Forward,
                seconds: 13
            }
        );
        let c1 = &p.state().tracks[0];
        assert!(c1.running);
        assert_eq!(c1.remaining_run, 13);
    }

    #[test]
    fn carrier_reaches_h2_after_seven_seconds() {
        let mut p = plant();
        place(&mut p, "C1", EntityKind::Carrier, None);
        let detect = run(&mut p, 1);
        assert_eq!(detect, vec![(1, "sensor_detect", "BG56".to_string())]);
        p.invoke(STORAGE, &call("conveyor_1_run('forward', 13)")).unwrap();
        let trace = run(&mut p, 13);
        assert_eq!(
            trace,
            vec![
                (3, "sensor_pass", "BG56".to_string()),
                (8, "holder_captured", "H2".to_string()),
                (8, "sensor_detect", "TF81".to_string()),
                (8, "sensor_detect", "BG51".to_string()),
                (14, "track_stopped", "C1".to_string()),
            ]
        );
        // held at H2 for the rest of the run
        assert_eq!(p.state().entities[0].position, 7);
    }

    #[test]
    fn release_then_pass_with_dwell_one() {
        let mut p = plant();
        place(&mut p, "C2", EntityKind::Workpiece, Some("white plastic cylinder"));
        run(&mut p, 1);
        p.invoke(STORAGE, &call("conveyor_2_run('forward', 13)")).unwrap();
        let trace = run(&mut p, 6);
        assert!(trace.contains(&(7, "sensor_detect", "BG21".to_string())));
        p.invoke(STORAGE, &call("export_verify()")).unwrap();
        assert!(p.state().entities[0].flags.contains(FLAG_EXPORT_VERIFIED));
        run(&mut p, 1);
        assert_eq!(p.state().entities[0].position, 6);
        p.invoke(STORAGE, &call("H1_release()")).unwrap();
        assert_eq!(run(&mut p, 1), vec![(9, "sensor_pass", "BG21".to_string())]);
    }

    #[test]
    fn placing_a_workpiece_on_c2_trips_bg26_next_tick() {
        let mut p = plant();
        place(&mut p, "C2", EntityKind::Workpiece, Some("white plastic cylinder"));
        let c = p.tick();
        assert_eq!(c.len(), 1);
        match &c[0] {
            RawChange::SensorDetect { sensor, entity, .. } => {
                assert_eq!(sensor, "BG26");
                assert_eq!(entity.kind, EntityKind::Workpiece);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn faulty_sensor_stays_silent() {
        let mut p = plant();
        p.inject(&Disturbance::SensorFault {
            module: STORAGE.into(),
            sensor: "BG21".into(),
        })
        .unwrap();
        place(&mut p, "C2", EntityKind::Workpiece, Some("w"));
        p.invoke(STORAGE, &call("conveyor_2_run('forward', 6)")).unwrap();
        let trace = run(&mut p, 6);
        assert!(trace.iter().all(|(_, _, s)| s != "BG21"), "{trace:?}");
        assert_eq!(p.state().entities[0].position, 6);
    }

    #[test]
    fn query_reports_the_shelf() {
        let mut p = plant();
        let changes = p
            .invoke(STORAGE, &call("query_inventory_workpiece_position('white plastic cylinder')"))
            .unwrap();
        assert_eq!(
            changes,
            vec![RawChange::FunctionInvoked {
                module: STORAGE.into(),
                call: call("query_inventory_workpiece_position('white plastic cylinder')"),
                answer: Some("A_13".into())
            }]
        );
        let missing = p
            .invoke(STORAGE, &call("query_inventory_workpiece_position('gold bar')"))
            .unwrap();
        assert!(matches!(&missing[0], RawChange::FunctionInvoked { answer: None, .. }));
    }

    #[test]
    fn robot_pick_deposits_on_the_held_carrier() {
        let mut p = plant();
        place(&mut p, "C1", EntityKind::Carrier, None);
        p.invoke(STORAGE, &call("conveyor_1_run('forward', 8)")).unwrap();
        run(&mut p, 8);
        p.invoke(STORAGE, &call("robot_arm_pick('A_13')")).unwrap();
        assert!(matches!(
            p.invoke(STORAGE, &call("robot_arm_pick('A_11')")),
            Err(SimError::DeviceBusy { .. })
        ));
        let trace = run(&mut p, 8);
        assert_eq!(trace, vec![(16, "robot_completed", "R1".to_string())]);
        let carrier = &p.state().entities[0];
        assert_eq!(carrier.kind, EntityKind::CarrierWithWorkpiece);
        assert_eq!(carrier.payload.as_deref(), Some("white plastic cylinder"));
        assert!(!p.state().inventory[STORAGE].contains_key("A_13"));
    }

    #[test]
    fn invoke_errors() {
        let mut p = plant();
        let before = p.snapshot();
        assert!(matches!(
            p.invoke(STORAGE, &call("foo()")),
            Err(SimError::UnknownFunction { .. })
        ));
        assert!(matches!(
            p.invoke("Paint Shop", &call("foo()")),
            Err(SimError::UnknownModule(_))
        ));
        assert!(matches!(
            p.invoke(STORAGE, &call("conveyor_1_run('forward')")),
            Err(SimError::ArityMismatch { expected: 2, got: 1, .. })
        ));
        assert!(matches!(
            p.invoke(STORAGE, &call("conveyor_1_run('sideways', 3)")),
            Err(SimError::BadArgument { ref param, .. }) if param == "direction"
        ));
        assert!(matches!(
            p.invoke(STORAGE, &call("conveyor_1_run('forward', 0)")),
            Err(SimError::BadArgument { ref param, .. }) if param == "time"
        ));
        assert!(matches!(
            p.invoke(STORAGE, &call("conveyor_1_run('forward', '3')")),
            Err(SimError::BadArgument { .. })
        ));
        assert!(matches!(
            p.invoke(STORAGE, &call("robot_arm_pick('Z_99')")),
            Err(SimError::BadArgument { .. })
        ));
        assert!(matches!(
            p.invoke(STORAGE, &call("export_verify()")),
            Err(SimError::InvalidState(_))
        ));
        assert_eq!(p.snapshot(), before);
    }

    #[test]
    fn unregistered_workpiece_fails_export_verification() {
        let mut p = plant();
        p.inject(&Disturbance::UnknownWorkpiece {
            module: STORAGE.into(),
            track: "C2".into(),
            payload: "unlabelled part".into(),
        })
        .unwrap();
        p.invoke(STORAGE, &call("conveyor_2_run('forward', 6)")).unwrap();
        run(&mut p, 6);
        let err = p.invoke(STORAGE, &call("export_verify()")).unwrap_err();
        assert!(err.to_string().contains("not registered"));
    }

    #[test]
    fn inject_errors() {
        let mut p = plant();
        assert!(matches!(
            p.inject(&Disturbance::RemoveEntity { entity: "E9".into() }),
            Err(SimError::UnknownEntity(_))
        ));
        assert!(matches!(
            p.inject(&Disturbance::PlaceEntity {
                module: STORAGE.into(),
                track: "C1".into(),
                position: 15,
                kind: EntityKind::Carrier,
                payload: None
            }),
            Err(SimError::BadPosition { .. })
        ));
        assert!(matches!(
            p.inject(&Disturbance::PlaceEntity {
                module: STORAGE.into(),
                track: "C9".into(),
                position: 0,
                kind: EntityKind::Carrier,
                payload: None
            }),
            Err(SimError::UnknownTrack { .. })
        ));
        assert!(p
            .inject(&Disturbance::PlaceEntity {
                module: STORAGE.into(),
                track: "C1".into(),
                position: 0,
                kind: EntityKind::Workpiece,
                payload: None
            })
            .is_err());
    }

    #[test]
    fn handoff_moves_entity_to_the_next_station() {
        let mut p = plant();
        p.inject(&Disturbance::PlaceEntity {
            module: STORAGE.into(),
            track: "C2".into(),
            position: 12,
            kind: EntityKind::Workpiece,
            payload: Some("w".into()),
        })
        .unwrap();
        p.invoke(STORAGE, &call("conveyor_2_run('forward', 1)")).unwrap();
        let trace = run(&mut p, 3);
        assert_eq!(trace[0], (1, "entity_handed_off", "C2".to_string()));
        let e = &p.state().entities[0];
        assert_eq!((e.module.as_str(), e.track.as_str(), e.position), ("Inspection Station", "C2", 0));
    }

    #[test]
    fn snapshot_restore_replays_identically() {
        let mut p = plant();
        place(&mut p, "C1", EntityKind::Carrier, None);
        p.invoke(STORAGE, &call("conveyor_1_run('forward', 13)")).unwrap();
        run(&mut p, 4);
        let snap = p.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        assert!(json.contains(r#""A_13":"white plastic cylinder""#));
        let mut q = Plant::restore(p.layout_arc(), serde_json::from_str(&json).unwrap()).unwrap();
        for _ in 0..5 {
            assert_eq!(p.tick(), q.tick());
        }
        assert_eq!(p.snapshot(), q.snapshot());
    }

    #[test]
    fn idle_snapshot_is_a_fixpoint() {
        let p = plant();
        let q = Plant::restore(p.layout_arc(), p.snapshot()).unwrap();
        assert_eq!(q.snapshot(), p.snapshot());
        let empty = Plant::new(LayoutConfig::default());
        assert!(Plant::restore(empty.layout_arc(), p.snapshot()).is_err());
    }
}
