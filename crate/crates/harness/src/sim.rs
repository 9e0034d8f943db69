//! The single-threaded event loop.
//!
//! Each step advances simulated time by one second, in a fixed order:
//! RTC tick, metering of the elapsed second, minute hooks (reports) and
//! queued key presses, channel delivery, head-end ingestion.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use serde::Serialize;
use wem_core::firmware::{Lcd, ModemLink};
use wem_core::nv_store::NvError;
use wem_core::{
    units_display, Action, AtSession, ChannelConfig, FirmwareState, Key, LoadProfile, MeterConfig, Mode, NvStore,
    ReportSchedule, RtcRegisterFile, RtcTime, SmsChannel,
};
use wem_station::http::{self, SharedStation};
use wem_station::station::{IngestError, IngestOutcome, RegistryError};
use wem_station::{MeterEntry, Station};

use crate::scenario::{MeterSetup, Scenario};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub t: u64,
    pub meter: String,
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} meter={} kind={} detail={}", self.t, self.meter, self.kind, self.detail)
    }
}

#[derive(Debug)]
pub struct MeterSim {
    factory: MeterConfig,
    own_number: String,
    rtc: RtcRegisterFile,
    nv: NvStore,
    firmware: FirmwareState,
    modem: AtSession,
    link: ModemLink,
    profile: LoadProfile,
    load_override: Option<u32>,
    power_cycles: VecDeque<u64>,
    keys: VecDeque<Key>,
    telegrams_sent: u64,
    nv_commits: u64,
    reboots: u64,
}

impl MeterSim {
    fn new(setup: &MeterSetup, start: RtcTime, schedule: ReportSchedule, nv: NvStore) -> Self {
        let mut rtc = RtcRegisterFile::at(start);
        let firmware = FirmwareState::boot(setup.config.clone(), schedule, &mut rtc, &nv);
        Self {
            factory: setup.config.clone(),
            own_number: setup.own_number.clone(),
            rtc,
            nv,
            firmware,
            modem: AtSession::new(setup.own_number.clone()),
            link: ModemLink::new(),
            profile: setup.profile.clone(),
            load_override: None,
            power_cycles: setup.power_cycles_s.iter().copied().collect(),
            keys: VecDeque::new(),
            telegrams_sent: 0,
            nv_commits: 0,
            reboots: 0,
        }
    }

    pub fn id(&self) -> &str {
        &self.factory.meter_id
    }

    pub fn firmware(&self) -> &FirmwareState {
        &self.firmware
    }

    pub fn rtc(&self) -> &RtcRegisterFile {
        &self.rtc
    }

    pub fn nv(&self) -> &NvStore {
        &self.nv
    }

    pub fn own_number(&self) -> &str {
        &self.own_number
    }

    pub fn power_at(&self, t: u64) -> u32 {
        self.load_override.unwrap_or_else(|| self.profile.power_at(t))
    }

    fn reboot(&mut self) {
        self.firmware = FirmwareState::boot(self.factory.clone(), self.firmware.schedule(), &mut self.rtc, &self.nv);
        self.modem = AtSession::new(self.own_number.clone());
        self.link.reset();
        self.reboots += 1;
    }
}

pub struct Simulation {
    t: u64,
    duration_s: u64,
    seed: u64,
    meters: Vec<MeterSim>,
    channel: SmsChannel,
    station: SharedStation,
    events: Vec<Event>,
}

impl Simulation {
    /// Builds the fleet with in-memory NV and a fresh in-memory head end.
    pub fn new(scenario: &Scenario) -> Self {
        let station = http::shared(Station::in_memory(scenario.tariff));
        Self::with_parts(scenario, station, |_| Ok(NvStore::in_memory())).expect("in-memory setup cannot fail")
    }

    /// Like [`Simulation::new`] but each meter logs to `<dir>/meter_<id>.nvlog`,
    /// created empty.
    pub fn with_state_dir(scenario: &Scenario, dir: &Path) -> Result<Self, NvError> {
        std::fs::create_dir_all(dir)?;
        let station = http::shared(Station::in_memory(scenario.tariff));
        Self::with_parts(scenario, station, |id| NvStore::create(dir.join(format!("meter_{id}.nvlog"))))
    }

    /// Builds the fleet against an existing head end. Meters already known to
    /// it are left as they are.
    pub fn with_parts(
        scenario: &Scenario,
        station: SharedStation,
        mut nv_for: impl FnMut(&str) -> Result<NvStore, NvError>,
    ) -> Result<Self, NvError> {
        let mut events = Vec::new();
        let mut meters = Vec::new();
        for setup in &scenario.meters {
            let id = &setup.config.meter_id;
            let entry = MeterEntry { meter_id: id.clone(), dest_number: setup.config.dest_number.clone() };
            match http::write(&station).register(entry) {
                Ok(()) | Err(RegistryError::Duplicate(_)) => {}
                Err(e) => events.push(Event { t: 0, meter: id.clone(), kind: "register_error", detail: e.to_string() }),
            }
            let meter = MeterSim::new(setup, scenario.start, scenario.schedule, nv_for(id)?);
            events.push(Event { t: 0, meter: id.clone(), kind: "boot", detail: format!("rtc={}", clock(&meter.rtc.now())) });
            meters.push(meter);
        }
        let channel = SmsChannel::new(scenario.channel).expect("validated channel");
        Ok(Self { t: 0, duration_s: scenario.duration_s, seed: scenario.seed, meters, channel, station, events })
    }

    pub fn now(&self) -> u64 {
        self.t
    }

    pub fn duration_s(&self) -> u64 {
        self.duration_s
    }

    pub fn finished(&self) -> bool {
        self.t >= self.duration_s
    }

    pub fn meters(&self) -> &[MeterSim] {
        &self.meters
    }

    pub fn meter(&self, id: &str) -> Option<&MeterSim> {
        self.meters.iter().find(|m| m.id() == id)
    }

    fn meter_mut(&mut self, id: &str) -> Option<&mut MeterSim> {
        self.meters.iter_mut().find(|m| m.id() == id)
    }

    pub fn station(&self) -> &SharedStation {
        &self.station
    }

    pub fn channel_config(&self) -> &ChannelConfig {
        self.channel.config()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    /// Queues key presses, handled at the next step. Returns false for an unknown meter.
    pub fn queue_keys(&mut self, meter_id: &str, keys: &[Key]) -> bool {
        match self.meter_mut(meter_id) {
            Some(m) => {
                m.keys.extend(keys.iter().copied());
                true
            }
            None => false,
        }
    }

    /// Replaces the meter's load profile with a constant load (`None` restores the profile).
    pub fn set_load(&mut self, meter_id: &str, power_w: Option<u32>) -> bool {
        match self.meter_mut(meter_id) {
            Some(m) => {
                m.load_override = power_w;
                true
            }
            None => false,
        }
    }

    pub fn run(&mut self) {
        while !self.finished() {
            self.step();
        }
    }

    /// Runs until `t` (or the end of the scenario).
    pub fn run_until(&mut self, t: u64) {
        while self.t < t.min(self.duration_s) {
            self.step();
        }
    }

    /// Simulates the second `[t, t + 1)`.
    pub fn step(&mut self) {
        let t = self.t;
        let now = t + 1;
        let mut outbox = Vec::new();
        for m in &mut self.meters {
            if m.power_cycles.front() == Some(&t) {
                m.power_cycles.pop_front();
                m.reboot();
                let rtc = clock(&m.rtc.now());
                self.events.push(Event { t, meter: m.id().to_string(), kind: "reboot", detail: format!("rtc={rtc}") });
            }

            let before = m.rtc.now();
            m.rtc.tick(1);
            let after = m.rtc.now();
            let mut actions = m.firmware.meter_second(m.power_at(t), &before);
            if after.second == 0 {
                actions.extend(m.firmware.on_minute(&after));
            }
            while let Some(key) = m.keys.pop_front() {
                let previous = m.firmware.config().clone();
                actions.extend(m.firmware.on_key(key));
                let detail = format!("key={key} mode={}", mode_name(m.firmware.mode()));
                self.events.push(Event { t: now, meter: m.id().to_string(), kind: "key", detail });
                if m.firmware.config() != &previous {
                    let detail = config_change(&previous, m.firmware.config());
                    self.events.push(Event { t: now, meter: m.id().to_string(), kind: "config", detail });
                }
            }

            let mut commit = false;
            for action in actions {
                match action {
                    Action::CommitNv => commit = true,
                    Action::LcdUpdate => {}
                    Action::SendTelegram(telegram) => {
                        let body = telegram.to_string();
                        let dest = m.firmware.config().dest_number.clone();
                        match m.link.send_sms(&mut m.modem, &dest, body.as_bytes(), now) {
                            Ok(report) => {
                                m.telegrams_sent += 1;
                                outbox.extend(report.submitted);
                                self.events.push(Event { t: now, meter: m.id().to_string(), kind: "telegram", detail: body });
                            }
                            Err(e) => self.events.push(Event {
                                t: now,
                                meter: m.id().to_string(),
                                kind: "link_error",
                                detail: e.to_string(),
                            }),
                        }
                    }
                }
            }
            if commit {
                match m.nv.commit(&m.firmware.nv_payload()) {
                    Ok(_) => m.nv_commits += 1,
                    Err(e) => self.events.push(Event {
                        t: now,
                        meter: m.id().to_string(),
                        kind: "nv_error",
                        detail: e.to_string(),
                    }),
                }
            }
        }

        for msg in outbox {
            let meter = sender(&self.meters, &msg.from_number);
            if !self.channel.submit(msg.clone()) {
                let detail = String::from_utf8_lossy(&msg.body).into_owned();
                self.events.push(Event { t: now, meter, kind: "dropped", detail });
            }
        }
        for msg in self.channel.step(now) {
            let meter = sender(&self.meters, &msg.from_number);
            let raw = String::from_utf8_lossy(&msg.body).into_owned();
            let result = http::write(&self.station).ingest(&msg, now);
            let (kind, detail) = match result {
                Ok(IngestOutcome::Stored(_)) => ("stored", raw),
                Ok(IngestOutcome::Duplicate(_)) => ("duplicate", raw),
                Err(IngestError::Rejected(r)) => ("rejected", format!("{raw} {:?}", r.category)),
                Err(IngestError::Storage(e)) => ("storage_error", e.to_string()),
            };
            self.events.push(Event { t: now, meter, kind, detail });
        }
        self.t = now;
    }

    pub fn report(&self) -> RunReport {
        let station = http::read(&self.station);
        let meters = self
            .meters
            .iter()
            .map(|m| {
                let reg = m.firmware.register();
                MeterReport {
                    meter_id: m.id().to_string(),
                    ncu_pulses: reg.ncu_pulses,
                    ecu_pulses: reg.ecu_pulses,
                    ncu_display: units_display(reg.ncu_pulses),
                    ecu_display: units_display(reg.ecu_pulses),
                    total_display: m.firmware.total_display(),
                    telegrams_sent: m.telegrams_sent,
                    nv_commits: m.nv_commits,
                    reboots: m.reboots,
                    rtc: clock(&m.rtc.now()),
                    lcd: *m.firmware.lcd(),
                    latest_reading: station.latest(m.id()).map(|r| r.raw.clone()),
                }
            })
            .collect();
        let readings = station
            .meters()
            .map(|e| (e.meter_id.clone(), station.readings(&e.meter_id, 0, u64::MAX).unwrap_or_default().len()))
            .collect();
        RunReport {
            seed: self.seed,
            duration_s: self.duration_s,
            simulated_s: self.t,
            meters,
            channel: ChannelReport {
                submitted: self.channel.stats().submitted,
                delivered: self.channel.stats().delivered,
                dropped: self.channel.stats().dropped,
                in_flight: self.channel.stats().in_flight(),
            },
            station: StationReport { readings, dead_letters: station.dead_letters().len() },
            events: self.events.iter().map(Event::to_string).collect(),
        }
    }
}

fn sender(meters: &[MeterSim], number: &str) -> String {
    meters.iter().find(|m| m.own_number == number).map_or_else(|| number.to_string(), |m| m.id().to_string())
}

pub fn clock(t: &RtcTime) -> String {
    format!("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}", t.year, t.month, t.day, t.hour, t.minute, t.second)
}

pub fn mode_name(mode: Mode) -> String {
    match mode {
        Mode::Run => "run".into(),
        Mode::PasswordEntry => "password".into(),
        Mode::Menu(item) => format!("menu:{}", item.letter()),
        Mode::EditField(item) => format!("edit:{}", item.letter()),
    }
}

fn config_change(old: &MeterConfig, new: &MeterConfig) -> String {
    let mut parts = Vec::new();
    if old.meter_id != new.meter_id {
        parts.push(format!("meter_id={}", new.meter_id));
    }
    if old.load_limit_w != new.load_limit_w {
        parts.push(format!("load_limit_w={}", new.load_limit_w));
    }
    if old.dest_number != new.dest_number {
        parts.push(format!("dest_number={}", new.dest_number));
    }
    parts.join(",")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeterReport {
    pub meter_id: String,
    pub ncu_pulses: u64,
    pub ecu_pulses: u64,
    pub ncu_display: String,
    pub ecu_display: String,
    pub total_display: String,
    pub telegrams_sent: u64,
    pub nv_commits: u64,
    pub reboots: u64,
    pub rtc: String,
    pub lcd: Lcd,
    pub latest_reading: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ChannelReport {
    pub submitted: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StationReport {
    /// Stored readings per registered meter.
    pub readings: BTreeMap<String, usize>,
    pub dead_letters: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub duration_s: u64,
    pub simulated_s: u64,
    pub meters: Vec<MeterReport>,
    pub channel: ChannelReport,
    pub station: StationReport,
    pub events: Vec<String>,
}

impl RunReport {
    pub fn meter(&self, id: &str) -> Option<&MeterReport> {
        self.meters.iter().find(|m| m.meter_id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
