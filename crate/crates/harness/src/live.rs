//! Live mode: the simulation stepped in scaled real time behind HTTP.
//!
//! The loop thread owns the [`Simulation`]. Request handlers never touch it;
//! they push commands into a queue that the loop drains between steps, and
//! read panels from a snapshot the loop republishes after each batch.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wem_core::firmware::Lcd;
use wem_core::{units_display, ConsumptionClass, Key};
use wem_station::http::{self as station_http, ApiError};
use wem_station::ReadingRecord;

use crate::sim::{clock, mode_name, MeterSim, Simulation};

/// Simulated seconds per real second unless configured otherwise.
pub const DEFAULT_TIME_SCALE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Keys { meter_id: String, keys: Vec<Key> },
    /// `None` hands the meter back to its scenario profile.
    Load { meter_id: String, power_w: Option<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Panel {
    pub meter_id: String,
    pub t: u64,
    pub rtc: String,
    pub mode: String,
    pub lcd: Lcd,
    pub power_w: u32,
    pub load_limit_w: u32,
    /// Class the current load is being metered as.
    pub class: ConsumptionClass,
    pub ncu_pulses: u64,
    pub ecu_pulses: u64,
    pub ncu_display: String,
    pub ecu_display: String,
    pub total_display: String,
    pub latest_reading: Option<ReadingRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Snapshot {
    pub t: u64,
    pub panels: BTreeMap<String, Panel>,
}

fn panel(m: &MeterSim, t: u64, latest: Option<ReadingRecord>) -> Panel {
    let fw = m.firmware();
    let now = m.rtc().now();
    let policy = fw.config().policy();
    let power_w = m.power_at(t);
    let class = policy.classify(policy.peak_window.position_of(now.seconds_of_day()), power_w);
    let reg = fw.register();
    Panel {
        meter_id: m.id().to_string(),
        t,
        rtc: clock(&now),
        mode: mode_name(fw.mode()),
        lcd: *fw.lcd(),
        power_w,
        load_limit_w: fw.config().load_limit_w,
        class,
        ncu_pulses: reg.ncu_pulses,
        ecu_pulses: reg.ecu_pulses,
        ncu_display: units_display(reg.ncu_pulses),
        ecu_display: units_display(reg.ecu_pulses),
        total_display: fw.total_display(),
        latest_reading: latest,
    }
}

pub struct Live {
    sim: Simulation,
    commands: Receiver<Command>,
    snapshot: Arc<RwLock<Snapshot>>,
    stop: Arc<AtomicBool>,
}

/// The request-handler side: a command queue and the latest snapshot.
#[derive(Clone)]
pub struct LiveHandle {
    commands: Sender<Command>,
    snapshot: Arc<RwLock<Snapshot>>,
    stop: Arc<AtomicBool>,
}

impl LiveHandle {
    pub fn snapshot(&self) -> Snapshot {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn knows(&self, meter_id: &str) -> bool {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).panels.contains_key(meter_id)
    }

    /// Returns false once the loop is gone.
    pub fn send(&self, command: Command) -> bool {
        self.commands.send(command).is_ok()
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

impl Live {
    pub fn new(sim: Simulation) -> (Self, LiveHandle) {
        let (tx, rx) = mpsc::channel();
        let snapshot = Arc::new(RwLock::new(Snapshot::default()));
        let stop = Arc::new(AtomicBool::new(false));
        let live = Self { sim, commands: rx, snapshot: snapshot.clone(), stop: stop.clone() };
        live.publish();
        (live, LiveHandle { commands: tx, snapshot, stop })
    }

    pub fn sim(&self) -> &Simulation {
        &self.sim
    }

    fn apply_commands(&mut self) {
        while let Ok(cmd) = self.commands.try_recv() {
            match cmd {
                Command::Keys { meter_id, keys } => {
                    self.sim.queue_keys(&meter_id, &keys);
                }
                Command::Load { meter_id, power_w } => {
                    self.sim.set_load(&meter_id, power_w);
                }
            }
        }
    }

    /// Runs `steps` seconds, taking queued commands before each one, then
    /// publishes a fresh snapshot. Live scenarios are open-ended: the
    /// scenario duration does not stop the loop.
    pub fn advance(&mut self, steps: u64) {
        for _ in 0..steps {
            self.apply_commands();
            self.sim.step();
        }
        self.publish();
    }

    pub fn take_events(&mut self) -> Vec<crate::Event> {
        self.sim.take_events()
    }

    fn publish(&self) {
        let t = self.sim.now();
        let station = station_http::read(self.sim.station());
        let panels = self
            .sim
            .meters()
            .iter()
            .map(|m| (m.id().to_string(), panel(m, t, station.latest(m.id()).cloned())))
            .collect();
        drop(station);
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Snapshot { t, panels };
    }

    /// Steps the simulation at `time_scale` simulated seconds per real second
    /// on a dedicated thread until [`LiveHandle::stop`]. `on_event` sees every
    /// event in order.
    pub fn spawn(mut self, time_scale: f64, mut on_event: impl FnMut(&crate::Event) + Send + 'static) -> JoinHandle<()> {
        thread::spawn(move || {
            let started = Instant::now();
            let base = self.sim.now();
            while !self.stop.load(Ordering::Relaxed) {
                let target = base + (started.elapsed().as_secs_f64() * time_scale) as u64;
                let due = target.saturating_sub(self.sim.now());
                if due > 0 {
                    self.advance(due);
                    for e in self.take_events() {
                        on_event(&e);
                    }
                }
                thread::sleep(Duration::from_millis(10));
            }
        })
    }
}

#[derive(Debug, Deserialize)]
struct KeysBody {
    keys: Vec<Key>,
}

#[derive(Debug, Deserialize)]
struct LoadBody {
    power_w: Option<u32>,
}

pub fn router(handle: LiveHandle) -> Router {
    Router::new()
        .route("/sim/status", get(status))
        .route("/sim/meters", get(list_panels))
        .route("/sim/meters/{id}/panel", get(get_panel))
        .route("/sim/meters/{id}/keys", post(post_keys))
        .route("/sim/meters/{id}/load", post(post_load))
        .with_state(handle)
}

async fn status(State(h): State<LiveHandle>) -> Json<serde_json::Value> {
    let snap = h.snapshot();
    Json(json!({ "t": snap.t, "meters": snap.panels.len() }))
}

async fn list_panels(State(h): State<LiveHandle>) -> Json<Vec<Panel>> {
    Json(h.snapshot().panels.into_values().collect())
}

async fn get_panel(State(h): State<LiveHandle>, Path(id): Path<String>) -> Result<Json<Panel>, ApiError> {
    h.snapshot().panels.remove(&id).map(Json).ok_or_else(|| ApiError::invalid_entry(&id))
}

fn enqueue(h: &LiveHandle, id: &str, command: Command) -> Result<(), ApiError> {
    if !h.knows(id) {
        return Err(ApiError::invalid_entry(id));
    }
    if !h.send(command) {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "simulation stopped", id));
    }
    Ok(())
}

async fn post_keys(
    State(h): State<LiveHandle>,
    Path(id): Path<String>,
    body: Result<Json<KeysBody>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(body) = body?;
    let queued = body.keys.len();
    enqueue(&h, &id, Command::Keys { meter_id: id.clone(), keys: body.keys })?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "meter_id": id, "queued": queued }))))
}

async fn post_load(
    State(h): State<LiveHandle>,
    Path(id): Path<String>,
    body: Result<Json<LoadBody>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(body) = body?;
    enqueue(&h, &id, Command::Load { meter_id: id.clone(), power_w: body.power_w })?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "meter_id": id, "power_w": body.power_w }))))
}
