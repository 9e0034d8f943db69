//! Head-end service for the wireless energy meters.
//!
//! Telegrams arrive as SMS bodies, are decoded and checked against the meter
//! registry, and are stored as cumulative readings. Bills are computed from
//! differences between readings under the configured [`TariffSchedule`].

pub mod config;
pub mod http;
pub mod money;
pub mod station;
pub mod storage;

pub use config::ServiceConfig;
pub use money::{Money, Units};
pub use station::{
    Bill, DeadLetter, IngestError, IngestOutcome, MeterEntry, ReadingRecord, Rejection, RejectionCategory, Station,
    TariffSchedule,
};
