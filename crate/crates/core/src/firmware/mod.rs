//! Meter controller: boot, reporting schedule, peak accounting, LCD and the
//! keypad password/menu state machine.

mod lcd;
mod link;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::metering::{units_display, EnergyRegister, PeakPolicy, PeakWindow};
use crate::nv_store::{NvPayload, NvStore};
use crate::rtc::{RtcRegisterFile, RtcTime, REG_MINUTES, REG_SECONDS};
use crate::telegram::{valid_meter_id, Telegram};

pub use lcd::{Lcd, COLUMNS, ROWS};
pub use link::{Exchange, LinkError, LinkReport, ModemLink};

pub const DEFAULT_PASSWORD: &str = "1234";

const MAX_LOAD_LIMIT_DIGITS: usize = 6;
const DIGEST_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("meter id must be 1-8 digits, got {0:?}")]
    MeterId(String),
    #[error("password must be exactly 4 digits")]
    Password,
    #[error("destination number must be 10-12 digits, got {0:?}")]
    DestNumber(String),
    #[error(transparent)]
    PeakWindow(#[from] crate::metering::MeteringError),
}

fn default_password() -> String {
    DEFAULT_PASSWORD.to_string()
}

fn default_window() -> PeakWindow {
    PeakWindow::DEMO
}

/// Settings editable from the keypad (plus the peak window preset).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterConfig {
    pub meter_id: String,
    #[serde(default = "default_password")]
    pub password: String,
    pub dest_number: String,
    /// The keypad's "Fixed unit value": permissible load during peak time.
    pub load_limit_w: u32,
    #[serde(default = "default_window")]
    pub peak_window: PeakWindow,
}

fn valid_dest(s: &str) -> bool {
    (10..=12).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit())
}

impl MeterConfig {
    pub fn new(meter_id: &str, dest_number: &str, load_limit_w: u32) -> Result<Self, ConfigError> {
        let c = Self {
            meter_id: meter_id.to_string(),
            password: default_password(),
            dest_number: dest_number.to_string(),
            load_limit_w,
            peak_window: PeakWindow::DEMO,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !valid_meter_id(&self.meter_id) {
            return Err(ConfigError::MeterId(self.meter_id.clone()));
        }
        if self.password.len() != 4 || !self.password.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ConfigError::Password);
        }
        if !valid_dest(&self.dest_number) {
            return Err(ConfigError::DestNumber(self.dest_number.clone()));
        }
        self.peak_window.validate()?;
        Ok(())
    }

    pub fn policy(&self) -> PeakPolicy {
        PeakPolicy { peak_window: self.peak_window, load_limit_w: self.load_limit_w }
    }

    /// Compact binary form stored alongside the reading in the NV log.
    pub fn to_digest(&self) -> Vec<u8> {
        let mut d = vec![DIGEST_VERSION, self.meter_id.len() as u8];
        d.extend_from_slice(self.meter_id.as_bytes());
        d.extend_from_slice(self.password.as_bytes());
        d.push(self.dest_number.len() as u8);
        d.extend_from_slice(self.dest_number.as_bytes());
        d.extend_from_slice(&self.load_limit_w.to_le_bytes());
        let (kind, start, end) = match self.peak_window {
            PeakWindow::MinuteOfHour { start, end } => (0, start, end),
            PeakWindow::HourOfDay { start, end } => (1, start, end),
        };
        d.extend_from_slice(&[kind, start, end]);
        d
    }

    pub fn from_digest(bytes: &[u8]) -> Option<Self> {
        let mut rest = bytes;
        let mut take = |n: usize| -> Option<&[u8]> {
            let (head, tail) = rest.split_at_checked(n)?;
            rest = tail;
            Some(head)
        };
        if take(1)? != [DIGEST_VERSION] {
            return None;
        }
        let id_len = usize::from(take(1)?[0]);
        let meter_id = String::from_utf8(take(id_len)?.to_vec()).ok()?;
        let password = String::from_utf8(take(4)?.to_vec()).ok()?;
        let dest_len = usize::from(take(1)?[0]);
        let dest_number = String::from_utf8(take(dest_len)?.to_vec()).ok()?;
        let load_limit_w = u32::from_le_bytes(take(4)?.try_into().ok()?);
        let w = take(3)?;
        let peak_window = match w[0] {
            0 => PeakWindow::MinuteOfHour { start: w[1], end: w[2] },
            1 => PeakWindow::HourOfDay { start: w[1], end: w[2] },
            _ => return None,
        };
        let config = Self { meter_id, password, dest_number, load_limit_w, peak_window };
        config.validate().ok()?;
        Some(config)
    }
}

/// When the meter reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportSchedule {
    /// Once an hour, when the minute-of-hour equals `minute`.
    Hourly { minute: u8 },
    /// Once on day `day` of every `month_interval`-th month (January first).
    Monthly { day: u8, month_interval: u8 },
}

impl Default for ReportSchedule {
    fn default() -> Self {
        ReportSchedule::Hourly { minute: 2 }
    }
}

impl ReportSchedule {
    /// The period this clock reading reports for, if a report is due.
    fn due(&self, t: &RtcTime) -> Option<u64> {
        match *self {
            ReportSchedule::Hourly { minute } => (t.minute == minute).then(|| t.hour_index()),
            ReportSchedule::Monthly { day, month_interval } => {
                let interval = month_interval.max(1);
                (t.day == day && (t.month - 1).is_multiple_of(interval))
                    .then(|| u64::from(t.year) * 12 + u64::from(t.month))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Key {
    Digit(u8),
    Star,
    Hash,
    Up,
    Down,
    Enter,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown key {0:?}")]
pub struct UnknownKey(String);

impl FromStr for Key {
    type Err = UnknownKey;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "*" => Ok(Key::Star),
            "#" => Ok(Key::Hash),
            "UP" => Ok(Key::Up),
            "DOWN" => Ok(Key::Down),
            "ENTER" => Ok(Key::Enter),
            d if d.len() == 1 && d.as_bytes()[0].is_ascii_digit() => Ok(Key::Digit(d.as_bytes()[0] - b'0')),
            _ => Err(UnknownKey(s.to_string())),
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Key::Digit(d) => write!(f, "{d}"),
            Key::Star => f.write_str("*"),
            Key::Hash => f.write_str("#"),
            Key::Up => f.write_str("UP"),
            Key::Down => f.write_str("DOWN"),
            Key::Enter => f.write_str("ENTER"),
        }
    }
}

impl Serialize for Key {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MenuItem {
    Id,
    FixedUnitValue,
    MobileNumber,
    Exit,
}

impl MenuItem {
    const ALL: [MenuItem; 4] = [MenuItem::Id, MenuItem::FixedUnitValue, MenuItem::MobileNumber, MenuItem::Exit];

    pub fn label(&self) -> &'static str {
        match self {
            MenuItem::Id => "ID",
            MenuItem::FixedUnitValue => "Fixed unit value",
            MenuItem::MobileNumber => "Mobile Number",
            MenuItem::Exit => "Exit",
        }
    }

    pub fn letter(&self) -> char {
        (b'a' + self.index() as u8) as char
    }

    fn index(&self) -> usize {
        Self::ALL.iter().position(|i| i == self).unwrap()
    }

    fn step(&self, delta: isize) -> Self {
        let n = Self::ALL.len() as isize;
        Self::ALL[(self.index() as isize + delta).rem_euclid(n) as usize]
    }

    fn max_digits(&self) -> usize {
        match self {
            MenuItem::Id => crate::telegram::MAX_ID_DIGITS,
            MenuItem::FixedUnitValue => MAX_LOAD_LIMIT_DIGITS,
            MenuItem::MobileNumber => 12,
            MenuItem::Exit => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "item")]
pub enum Mode {
    Run,
    PasswordEntry,
    Menu(MenuItem),
    EditField(MenuItem),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Notice {
    WrongPassword,
    InvalidEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    SendTelegram(Telegram),
    CommitNv,
    LcdUpdate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FirmwareState {
    mode: Mode,
    config: MeterConfig,
    register: EnergyRegister,
    lcd: Lcd,
    last_report_mark: Option<u64>,
    input_buffer: String,
    notice: Option<Notice>,
    schedule: ReportSchedule,
}

impl FirmwareState {
    /// Power-on: sets the RTC to minute 1 (second 0, clock running), restores
    /// the reading and configuration from NV, and shows the reading.
    /// `factory` is used when NV holds no valid configuration.
    pub fn boot(factory: MeterConfig, schedule: ReportSchedule, rtc: &mut RtcRegisterFile, nv: &NvStore) -> Self {
        rtc.write_byte(REG_SECONDS, 0x00).expect("valid seconds register");
        rtc.write_byte(REG_MINUTES, 0x01).expect("valid minutes register");

        let record = nv.recover();
        let config = MeterConfig::from_digest(&record.config_digest).unwrap_or(factory);
        let mut state = Self {
            mode: Mode::Run,
            config,
            register: EnergyRegister::from_pulses(record.ncu_pulses, record.ecu_pulses),
            lcd: Lcd::default(),
            last_report_mark: None,
            input_buffer: String::new(),
            notice: None,
            schedule,
        };
        state.lcd = state.render_lcd();
        state
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &MeterConfig {
        &self.config
    }

    pub fn register(&self) -> &EnergyRegister {
        &self.register
    }

    pub fn lcd(&self) -> &Lcd {
        &self.lcd
    }

    pub fn input_buffer(&self) -> &str {
        &self.input_buffer
    }

    pub fn notice(&self) -> Option<Notice> {
        self.notice
    }

    pub fn schedule(&self) -> ReportSchedule {
        self.schedule
    }

    pub fn total_display(&self) -> String {
        units_display(self.register.total_pulses())
    }

    pub fn telegram(&self) -> Telegram {
        Telegram::from_pulses(&self.config.meter_id, self.register.ncu_pulses, self.register.ecu_pulses)
            .expect("validated meter id")
    }

    pub fn nv_payload(&self) -> NvPayload {
        NvPayload {
            ncu_pulses: self.register.ncu_pulses,
            ecu_pulses: self.register.ecu_pulses,
            config_digest: self.config.to_digest(),
        }
    }

    /// Meters one second of load drawn while the clock read `clock`.
    pub fn meter_second(&mut self, power_w: u32, clock: &RtcTime) -> Vec<Action> {
        let policy = self.config.policy();
        let position = policy.peak_window.position_of(clock.seconds_of_day());
        let class = policy.classify(position, power_w);
        if self.register.accumulate(u64::from(power_w), class) == 0 {
            return Vec::new();
        }
        self.refresh();
        vec![Action::CommitNv, Action::LcdUpdate]
    }

    /// Minute-boundary hook.
    pub fn on_minute(&mut self, clock: &RtcTime) -> Vec<Action> {
        let mut actions = Vec::new();
        if let Some(mark) = self.schedule.due(clock) {
            if self.last_report_mark != Some(mark) {
                self.last_report_mark = Some(mark);
                actions.push(Action::SendTelegram(self.telegram()));
            }
        }
        self.refresh();
        actions.push(Action::LcdUpdate);
        actions
    }

    pub fn on_key(&mut self, key: Key) -> Vec<Action> {
        let mut actions = Vec::new();
        match (self.mode, key) {
            (Mode::Run, Key::Hash) => {
                self.mode = Mode::PasswordEntry;
                self.input_buffer.clear();
                self.notice = None;
            }
            (Mode::Run, _) => {}

            (Mode::PasswordEntry, Key::Digit(d)) => {
                if self.input_buffer.len() < 4 {
                    self.input_buffer.push(char::from(b'0' + d));
                }
            }
            (Mode::PasswordEntry, Key::Enter) => {
                if self.input_buffer == self.config.password {
                    self.mode = Mode::Menu(MenuItem::Id);
                    self.notice = None;
                } else {
                    self.notice = Some(Notice::WrongPassword);
                }
                self.input_buffer.clear();
            }
            (Mode::PasswordEntry, Key::Star) => self.leave_to_run(),
            (Mode::PasswordEntry, _) => {}

            (Mode::Menu(item), Key::Up) => self.mode = Mode::Menu(item.step(-1)),
            (Mode::Menu(item), Key::Down) => self.mode = Mode::Menu(item.step(1)),
            (Mode::Menu(MenuItem::Exit), Key::Enter) | (Mode::Menu(_), Key::Star) => self.leave_to_run(),
            (Mode::Menu(item), Key::Enter) => {
                self.mode = Mode::EditField(item);
                self.input_buffer.clear();
                self.notice = None;
            }
            (Mode::Menu(_), _) => {}

            (Mode::EditField(item), Key::Digit(d)) => {
                if self.input_buffer.len() < item.max_digits() {
                    self.input_buffer.push(char::from(b'0' + d));
                }
                self.notice = None;
            }
            (Mode::EditField(item), Key::Enter) => {
                if self.apply_edit(item) {
                    self.mode = Mode::Menu(item);
                    self.notice = None;
                    actions.push(Action::CommitNv);
                } else {
                    self.notice = Some(Notice::InvalidEntry);
                }
                self.input_buffer.clear();
            }
            (Mode::EditField(item), Key::Star) => {
                self.mode = Mode::Menu(item);
                self.input_buffer.clear();
                self.notice = None;
            }
            (Mode::EditField(_), _) => {}
        }
        self.refresh();
        actions.push(Action::LcdUpdate);
        actions
    }

    fn leave_to_run(&mut self) {
        self.mode = Mode::Run;
        self.input_buffer.clear();
        self.notice = None;
    }

    fn apply_edit(&mut self, item: MenuItem) -> bool {
        let input = self.input_buffer.as_str();
        match item {
            MenuItem::Id if valid_meter_id(input) => self.config.meter_id = input.to_string(),
            MenuItem::FixedUnitValue if !input.is_empty() => match input.parse() {
                Ok(w) => self.config.load_limit_w = w,
                Err(_) => return false,
            },
            MenuItem::MobileNumber if valid_dest(input) => self.config.dest_number = input.to_string(),
            _ => return false,
        }
        true
    }

    fn refresh(&mut self) {
        self.lcd = self.render_lcd();
    }

    pub fn render_lcd(&self) -> Lcd {
        match self.mode {
            Mode::Run => Lcd::from_lines(
                &format!("ID:{}", self.config.meter_id),
                &format!("TOT:{} EX:{}", self.total_display(), units_display(self.register.ecu_pulses)),
            ),
            Mode::PasswordEntry => {
                let top = match self.notice {
                    Some(Notice::WrongPassword) => "WRONG PASSWORD",
                    _ => "ENTER PASSWORD",
                };
                Lcd::from_lines(top, &"*".repeat(self.input_buffer.len()))
            }
            Mode::Menu(item) => Lcd::from_lines(&format!("MENU {}.", item.letter()), item.label()),
            Mode::EditField(item) => {
                let bottom = match self.notice {
                    Some(Notice::InvalidEntry) => "INVALID ENTRY",
                    _ => self.input_buffer.as_str(),
                };
                Lcd::from_lines(item.label(), bottom)
            }
        }
    }
}
