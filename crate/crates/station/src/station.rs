//! Head-end state: meter registry, reading history, dead letters, billing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wem_core::telegram::{display_hundredths, valid_meter_id, Telegram};
use wem_core::SmsMessage;

use crate::money::{Money, Units};
use crate::storage::{Storage, StorageError, DEAD_LETTER_FILE, METERS_FILE, READINGS_FILE, TARIFF_FILE};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterEntry {
    pub meter_id: String,
    pub dest_number: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingRecord {
    pub meter_id: String,
    pub received_at_s: u64,
    pub ncu_units: Units,
    pub ecu_units: Units,
    /// The telegram exactly as received.
    pub raw: String,
}

impl ReadingRecord {
    pub fn total_units(&self) -> Units {
        Units(self.ncu_units.0 + self.ecu_units.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub normal_rate: Money,
    pub peak_rate: Money,
    pub fixed_charge: Money,
}

impl Default for TariffSchedule {
    fn default() -> Self {
        Self { normal_rate: Money(300), peak_rate: Money(500), fixed_charge: Money(0) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("peak rate {peak} is below normal rate {normal}")]
pub struct TariffError {
    pub normal: Money,
    pub peak: Money,
}

impl TariffSchedule {
    pub fn validate(&self) -> Result<(), TariffError> {
        if self.peak_rate < self.normal_rate {
            return Err(TariffError { normal: self.normal_rate, peak: self.peak_rate });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RejectionCategory {
    Parse,
    UnknownMeter,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{category:?}: {detail}")]
pub struct Rejection {
    pub category: RejectionCategory,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub received_at_s: u64,
    pub from_number: String,
    pub raw: String,
    pub category: RejectionCategory,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "record", rename_all = "snake_case")]
pub enum IngestOutcome {
    Stored(ReadingRecord),
    /// The same (meter, raw, received_at) was already stored.
    Duplicate(ReadingRecord),
}

impl IngestOutcome {
    pub fn record(&self) -> &ReadingRecord {
        match self {
            IngestOutcome::Stored(r) | IngestOutcome::Duplicate(r) => r,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Rejected(#[from] Rejection),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("meter {0} is already registered")]
    Duplicate(String),
    #[error("invalid meter id {0:?}")]
    InvalidId(String),
    #[error("invalid destination number {0:?}")]
    InvalidDest(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("meter {0} not found")]
pub struct NotFound(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BillError {
    #[error(transparent)]
    UnknownMeter(#[from] NotFound),
    #[error("no reading for meter {meter_id} in ({from_s}, {to_s}]")]
    NoReadings { meter_id: String, from_s: u64, to_s: u64 },
    #[error("period start {from_s} is after end {to_s}")]
    InvalidPeriod { from_s: u64, to_s: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingRef {
    pub received_at_s: u64,
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BillPeriod {
    /// `None` when billing from the zero baseline.
    pub start: Option<ReadingRef>,
    pub end: ReadingRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bill {
    pub meter_id: String,
    pub period: BillPeriod,
    pub ncu_consumed: Units,
    pub ecu_consumed: Units,
    pub amount_without_extra: Money,
    pub amount_total: Money,
}

/// Bill arithmetic for consumed units under `tariff`.
pub fn bill_amounts(ncu: Units, ecu: Units, tariff: &TariffSchedule) -> (Money, Money) {
    let without_extra = tariff.fixed_charge + Money::for_units(tariff.normal_rate, ncu);
    let total = without_extra + Money::for_units(tariff.peak_rate, ecu);
    (without_extra, total)
}

fn valid_dest(s: &str) -> bool {
    (1..=20).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Default)]
pub struct Station {
    meters: BTreeMap<String, MeterEntry>,
    readings: BTreeMap<String, Vec<ReadingRecord>>,
    dead_letters: Vec<DeadLetter>,
    tariff: TariffSchedule,
    storage: Option<Storage>,
}

impl Station {
    pub fn in_memory(tariff: TariffSchedule) -> Self {
        Self { tariff, ..Self::default() }
    }

    /// Loads all tables from `dir`. A tariff saved through the API takes
    /// precedence over `tariff`.
    pub fn open(dir: impl Into<PathBuf>, tariff: TariffSchedule) -> Result<Self, StorageError> {
        let storage = Storage::open(dir)?;
        let mut station = Self::in_memory(tariff);
        for m in storage.load::<MeterEntry>(METERS_FILE)? {
            station.meters.insert(m.meter_id.clone(), m);
        }
        for r in storage.load::<ReadingRecord>(READINGS_FILE)? {
            station.readings.entry(r.meter_id.clone()).or_default().push(r);
        }
        station.dead_letters = storage.load(DEAD_LETTER_FILE)?;
        if let Some(saved) = storage.load_document(TARIFF_FILE)? {
            station.tariff = saved;
        }
        station.storage = Some(storage);
        Ok(station)
    }

    pub fn register(&mut self, entry: MeterEntry) -> Result<(), RegistryError> {
        if !valid_meter_id(&entry.meter_id) {
            return Err(RegistryError::InvalidId(entry.meter_id));
        }
        if !valid_dest(&entry.dest_number) {
            return Err(RegistryError::InvalidDest(entry.dest_number));
        }
        if self.meters.contains_key(&entry.meter_id) {
            return Err(RegistryError::Duplicate(entry.meter_id));
        }
        if let Some(s) = &self.storage {
            s.append(METERS_FILE, &entry)?;
        }
        self.meters.insert(entry.meter_id.clone(), entry);
        Ok(())
    }

    pub fn lookup(&self, meter_id: &str) -> Result<&MeterEntry, NotFound> {
        self.meters.get(meter_id).ok_or_else(|| NotFound(meter_id.to_string()))
    }

    pub fn meters(&self) -> impl Iterator<Item = &MeterEntry> {
        self.meters.values()
    }

    pub fn tariff(&self) -> TariffSchedule {
        self.tariff
    }

    pub fn set_tariff(&mut self, tariff: TariffSchedule) -> Result<(), TariffError> {
        tariff.validate()?;
        if let Some(s) = &self.storage {
            // A failed save keeps the old tariff on disk; the running value still changes.
            let _ = s.store_document(TARIFF_FILE, &tariff);
        }
        self.tariff = tariff;
        Ok(())
    }

    pub fn dead_letters(&self) -> &[DeadLetter] {
        &self.dead_letters
    }

    pub fn ingest(&mut self, sms: &SmsMessage, now_s: u64) -> Result<IngestOutcome, IngestError> {
        self.ingest_raw(&sms.from_number, &sms.body, now_s)
    }

    /// Decodes and stores one telegram body, or records why it was rejected.
    pub fn ingest_raw(&mut self, from_number: &str, body: &[u8], received_at_s: u64) -> Result<IngestOutcome, IngestError> {
        match self.check(body, received_at_s) {
            Ok(Ok(record)) => {
                if let Some(s) = &self.storage {
                    s.append(READINGS_FILE, &record)?;
                }
                self.readings.entry(record.meter_id.clone()).or_default().push(record.clone());
                Ok(IngestOutcome::Stored(record))
            }
            Ok(Err(existing)) => Ok(IngestOutcome::Duplicate(existing)),
            Err(rejection) => {
                let letter = DeadLetter {
                    received_at_s,
                    from_number: from_number.to_string(),
                    raw: String::from_utf8_lossy(body).into_owned(),
                    category: rejection.category,
                    detail: rejection.detail.clone(),
                };
                if let Some(s) = &self.storage {
                    s.append(DEAD_LETTER_FILE, &letter)?;
                }
                self.dead_letters.push(letter);
                Err(rejection.into())
            }
        }
    }

    /// `Ok(Ok(new))` to store, `Ok(Err(existing))` for a replay.
    fn check(&self, body: &[u8], received_at_s: u64) -> Result<Result<ReadingRecord, ReadingRecord>, Rejection> {
        let reject = |category, detail: String| Rejection { category, detail };
        let telegram = Telegram::decode(body).map_err(|e| reject(RejectionCategory::Parse, e.to_string()))?;
        if !self.meters.contains_key(&telegram.meter_id) {
            return Err(reject(RejectionCategory::UnknownMeter, format!("meter {} is not registered", telegram.meter_id)));
        }
        let units = |s: &str| {
            display_hundredths(s)
                .map(Units)
                .ok_or_else(|| reject(RejectionCategory::Parse, format!("value {s} out of range")))
        };
        let record = ReadingRecord {
            meter_id: telegram.meter_id.clone(),
            received_at_s,
            ncu_units: units(&telegram.ncu_display)?,
            ecu_units: units(&telegram.ecu_display)?,
            raw: telegram.to_string(),
        };
        let history = self.readings.get(&record.meter_id).map(Vec::as_slice).unwrap_or(&[]);
        if let Some(existing) = history.iter().find(|r| r.raw == record.raw && r.received_at_s == received_at_s) {
            return Ok(Err(existing.clone()));
        }
        if let Some(last) = history.last() {
            if record.ncu_units < last.ncu_units || record.ecu_units < last.ecu_units {
                return Err(reject(
                    RejectionCategory::Stale,
                    format!("{} is below the last stored reading {}", record.raw, last.raw),
                ));
            }
        }
        Ok(Ok(record))
    }

    /// Readings with `from_s <= received_at_s <= to_s`, in arrival order.
    pub fn readings(&self, meter_id: &str, from_s: u64, to_s: u64) -> Result<Vec<&ReadingRecord>, NotFound> {
        self.lookup(meter_id)?;
        Ok(self
            .history(meter_id)
            .iter()
            .filter(|r| (from_s..=to_s).contains(&r.received_at_s))
            .collect())
    }

    pub fn latest(&self, meter_id: &str) -> Option<&ReadingRecord> {
        self.history(meter_id).last()
    }

    fn history(&self, meter_id: &str) -> &[ReadingRecord] {
        self.readings.get(meter_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Latest reading received at or before `t` (later arrival wins ties).
    fn reading_at(&self, meter_id: &str, t: u64) -> Option<&ReadingRecord> {
        self.history(meter_id)
            .iter()
            .enumerate()
            .filter(|(_, r)| r.received_at_s <= t)
            .max_by_key(|(i, r)| (r.received_at_s, *i))
            .map(|(_, r)| r)
    }

    /// Bills consumption between the reading in force at `from_s` (or zero)
    /// and the latest reading in `(from_s, to_s]`.
    pub fn compute_bill(&self, meter_id: &str, from_s: u64, to_s: u64, tariff: &TariffSchedule) -> Result<Bill, BillError> {
        self.lookup(meter_id)?;
        if from_s > to_s {
            return Err(BillError::InvalidPeriod { from_s, to_s });
        }
        let start = self.reading_at(meter_id, from_s);
        let end = self
            .reading_at(meter_id, to_s)
            .filter(|r| r.received_at_s > from_s)
            .ok_or_else(|| BillError::NoReadings { meter_id: meter_id.to_string(), from_s, to_s })?;

        let (base_ncu, base_ecu) = start.map_or((Units::ZERO, Units::ZERO), |r| (r.ncu_units, r.ecu_units));
        let ncu_consumed = end.ncu_units.saturating_sub(base_ncu);
        let ecu_consumed = end.ecu_units.saturating_sub(base_ecu);
        let (amount_without_extra, amount_total) = bill_amounts(ncu_consumed, ecu_consumed, tariff);
        let as_ref = |r: &ReadingRecord| ReadingRef { received_at_s: r.received_at_s, raw: r.raw.clone() };
        Ok(Bill {
            meter_id: meter_id.to_string(),
            period: BillPeriod { start: start.map(as_ref), end: as_ref(end) },
            ncu_consumed,
            ecu_consumed,
            amount_without_extra,
            amount_total,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn station() -> Station {
        let mut s = Station::in_memory(TariffSchedule::default());
        s.register(MeterEntry { meter_id: "12345".into(), dest_number: "919876543210".into() }).unwrap();
        s
    }

    fn sms(body: &str) -> SmsMessage {
        SmsMessage { from_number: "919000000001".into(), to_number: "919876543210".into(), body: body.into(), submit_time_s: 0 }
    }

    fn category(r: Result<IngestOutcome, IngestError>) -> RejectionCategory {
        match r {
            Err(IngestError::Rejected(rej)) => rej.category,
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn registry() {
        let mut s = station();
        assert!(s.lookup("12345").is_ok());
        assert_eq!(s.lookup("99999"), Err(NotFound("99999".into())));
        assert!(matches!(
            s.register(MeterEntry { meter_id: "12345".into(), dest_number: "1".into() }),
            Err(RegistryError::Duplicate(_))
        ));
        assert!(matches!(
            s.register(MeterEntry { meter_id: "12x".into(), dest_number: "1".into() }),
            Err(RegistryError::InvalidId(_))
        ));
        for id in ["1", "2"] {
            s.register(MeterEntry { meter_id: id.into(), dest_number: "1".into() }).unwrap();
        }
        assert_eq!(s.meters().count(), 3);
    }

    #[test]
    fn ingest_valid() {
        let mut s = station();
        let out = s.ingest(&sms("#$12345$00.00$00.00$*"), 60).unwrap();
        assert!(matches!(out, IngestOutcome::Stored(_)));
        let latest = s.latest("12345").unwrap();
        assert_eq!((latest.ncu_units, latest.ecu_units, latest.received_at_s), (Units(0), Units(0), 60));
    }

    #[test]
    fn ingest_rejections_go_to_dead_letter() {
        let mut s = station();
        assert_eq!(category(s.ingest(&sms("#$99999$00.00$00.00$*"), 1)), RejectionCategory::UnknownMeter);
        assert_eq!(category(s.ingest(&sms("garbage"), 2)), RejectionCategory::Parse);
        s.ingest(&sms("#$12345$02.00$01.00$*"), 3).unwrap();
        assert_eq!(category(s.ingest(&sms("#$12345$01.99$01.00$*"), 4)), RejectionCategory::Stale);
        assert_eq!(category(s.ingest(&sms("#$12345$02.00$00.50$*"), 5)), RejectionCategory::Stale);
        let cats: Vec<_> = s.dead_letters().iter().map(|d| d.category).collect();
        assert_eq!(cats, vec![RejectionCategory::UnknownMeter, RejectionCategory::Parse, RejectionCategory::Stale, RejectionCategory::Stale]);
        assert_eq!(s.dead_letters()[1].raw, "garbage");
    }

    #[test]
    fn replay_is_idempotent() {
        let mut s = station();
        s.ingest(&sms("#$12345$01.00$00.00$*"), 10).unwrap();
        s.ingest(&sms("#$12345$02.00$00.00$*"), 20).unwrap();
        let again = s.ingest(&sms("#$12345$01.00$00.00$*"), 10).unwrap();
        assert!(matches!(again, IngestOutcome::Duplicate(_)));
        assert_eq!(s.readings("12345", 0, u64::MAX).unwrap().len(), 2);
    }

    #[test]
    fn bill_example() {
        let mut s = station();
        s.ingest(&sms("#$12345$14.00$01.00$*"), 100).unwrap();
        let tariff = TariffSchedule { normal_rate: Money(300), peak_rate: Money(500), fixed_charge: Money(0) };
        let bill = s.compute_bill("12345", 0, 100, &tariff).unwrap();
        assert_eq!(bill.ncu_consumed, Units(1400));
        assert_eq!(bill.ecu_consumed, Units(100));
        assert_eq!(bill.amount_without_extra, Money(4200));
        assert_eq!(bill.amount_total, Money(4700));
        assert!(bill.period.start.is_none());
    }

    #[test]
    fn bill_uses_differences_and_fixed_charge() {
        let mut s = station();
        s.ingest(&sms("#$12345$01.00$00.50$*"), 100).unwrap();
        s.ingest(&sms("#$12345$03.25$00.50$*"), 200).unwrap();
        s.ingest(&sms("#$12345$05.00$00.75$*"), 300).unwrap();
        let tariff = TariffSchedule { normal_rate: Money(300), peak_rate: Money(500), fixed_charge: Money(1000) };
        let bill = s.compute_bill("12345", 100, 250, &tariff).unwrap();
        assert_eq!((bill.ncu_consumed, bill.ecu_consumed), (Units(225), Units(0)));
        assert_eq!(bill.amount_without_extra, bill.amount_total);
        assert_eq!(bill.amount_total, Money(1000 + 675));

        // No new reading in the period: both amounts would be the fixed charge,
        // but there is nothing to bill against.
        assert!(matches!(s.compute_bill("12345", 300, 400, &tariff), Err(BillError::NoReadings { .. })));
        assert!(matches!(s.compute_bill("99999", 0, 1, &tariff), Err(BillError::UnknownMeter(_))));
        assert!(matches!(s.compute_bill("12345", 5, 1, &tariff), Err(BillError::InvalidPeriod { .. })));
    }

    #[test]
    fn zero_consumption_costs_the_fixed_charge() {
        let mut s = station();
        s.ingest(&sms("#$12345$01.00$00.00$*"), 100).unwrap();
        s.ingest(&sms("#$12345$01.00$00.00$*"), 200).unwrap();
        let tariff = TariffSchedule { fixed_charge: Money(250), ..TariffSchedule::default() };
        let bill = s.compute_bill("12345", 100, 200, &tariff).unwrap();
        assert_eq!(bill.amount_without_extra, Money(250));
        assert_eq!(bill.amount_total, Money(250));
    }

    #[test]
    fn tariff_validation() {
        let mut s = station();
        assert!(s.set_tariff(TariffSchedule { normal_rate: Money(500), peak_rate: Money(300), fixed_charge: Money(0) }).is_err());
        assert_eq!(s.tariff(), TariffSchedule::default());
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Station::open(dir.path(), TariffSchedule::default()).unwrap();
            s.register(MeterEntry { meter_id: "12345".into(), dest_number: "919876543210".into() }).unwrap();
            s.ingest(&sms("#$12345$01.00$00.00$*"), 60).unwrap();
            let _ = s.ingest(&sms("junk"), 61);
            s.set_tariff(TariffSchedule { normal_rate: Money(100), peak_rate: Money(900), fixed_charge: Money(5) }).unwrap();
        }
        let s = Station::open(dir.path(), TariffSchedule::default()).unwrap();
        assert!(s.lookup("12345").is_ok());
        assert_eq!(s.latest("12345").unwrap().raw, "#$12345$01.00$00.00$*");
        assert_eq!(s.dead_letters().len(), 1);
        assert_eq!(s.tariff().peak_rate, Money(900));
    }

    proptest! {
        #[test]
        fn bill_consistency(ncu in 0u64..10_000_000, ecu in 0u64..10_000_000, n in 0u64..100_000, p in 0u64..100_000, f in 0u64..100_000) {
            let tariff = TariffSchedule { normal_rate: Money(n), peak_rate: Money(n + p), fixed_charge: Money(f) };
            let (without, total) = bill_amounts(Units(ncu), Units(ecu), &tariff);
            prop_assert_eq!(total.0 - without.0, Money::for_units(tariff.peak_rate, Units(ecu)).0);
            prop_assert!(without.0 >= f);
        }

        #[test]
        fn stored_records_reencode(ncu in 0u64..100_000, ecu in 0u64..100_000) {
            let mut s = station();
            let t = Telegram::from_pulses("12345", ncu, ecu).unwrap();
            s.ingest(&sms(&t.to_string()), 1).unwrap();
            let r = s.latest("12345").unwrap();
            let decoded = Telegram::decode(r.raw.as_bytes()).unwrap();
            prop_assert_eq!(display_hundredths(&decoded.ncu_display), Some(r.ncu_units.0));
            prop_assert_eq!(display_hundredths(&decoded.ecu_display), Some(r.ecu_units.0));
            prop_assert_eq!(decoded.to_string(), r.raw.clone());
        }
    }
}
