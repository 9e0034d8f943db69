//! Device-side model of a single-phase wireless energy meter.
//!
//! The meter counts metering-IC pulses (3200 per kWh), splits them into
//! normal and extra consumption depending on a peak window and a permissible
//! load, keeps time with an emulated DS1307, persists its reading to an
//! append-only NV log, and reports over a GSM modem in SMS text mode.

pub mod firmware;
pub mod metering;
pub mod modem;
pub mod nv_store;
pub mod rtc;
pub mod telegram;

pub use firmware::{Action, FirmwareState, Key, MeterConfig, Mode, ReportSchedule};
pub use metering::{
    units_display, ConsumptionClass, EnergyRegister, LoadProfile, LoadSample, PeakPolicy,
    PeakWindow, JOULES_PER_PULSE, PULSES_PER_UNIT,
};
pub use modem::{AtSession, ChannelConfig, SmsChannel, SmsMessage};
pub use nv_store::{NvPayload, NvRecord, NvStore};
pub use rtc::{RtcRegisterFile, RtcTime};
pub use telegram::Telegram;
