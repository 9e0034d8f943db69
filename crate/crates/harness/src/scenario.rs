//! Scenario files: the meter fleet, their loads, the SMS channel and the clock.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wem_core::firmware::DEFAULT_PASSWORD;
use wem_core::{ChannelConfig, LoadProfile, LoadSample, MeterConfig, PeakWindow, ReportSchedule, RtcTime};
use wem_station::TariffSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// Compressed time: one hour stands for a billing cycle, minute 2 for
    /// report day 2, minutes 5 to 8 for the peak hours.
    #[default]
    Demo,
    /// Calendar time: evening peak hours, reports on day 2 of every second month.
    Production,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ClockProfile {
    #[serde(default)]
    pub kind: ProfileKind,
    /// Overrides the profile's peak window for every meter without its own.
    #[serde(default)]
    pub peak_window: Option<PeakWindow>,
    #[serde(default)]
    pub schedule: Option<ReportSchedule>,
}

impl ClockProfile {
    pub const PRODUCTION_PEAK: PeakWindow = PeakWindow::HourOfDay { start: 18, end: 21 };
    pub const PRODUCTION_SCHEDULE: ReportSchedule = ReportSchedule::Monthly { day: 2, month_interval: 2 };

    pub fn peak_window(&self) -> PeakWindow {
        self.peak_window.unwrap_or(match self.kind {
            ProfileKind::Demo => PeakWindow::DEMO,
            ProfileKind::Production => Self::PRODUCTION_PEAK,
        })
    }

    pub fn schedule(&self) -> ReportSchedule {
        self.schedule.unwrap_or(match self.kind {
            ProfileKind::Demo => ReportSchedule::default(),
            ProfileKind::Production => Self::PRODUCTION_SCHEDULE,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub latency_s: u64,
    #[serde(default)]
    pub drop_probability: f64,
    /// Defaults to the scenario seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartTime {
    pub year: u16,
    pub month: u8,
    pub day: u8,
    #[serde(default)]
    pub hour: u8,
}

impl Default for StartTime {
    fn default() -> Self {
        Self { year: 2024, month: 1, day: 1, hour: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterSpec {
    pub meter_id: String,
    pub dest_number: String,
    pub load_limit_w: u32,
    #[serde(default)]
    pub password: Option<String>,
    #[serde(default)]
    pub peak_window: Option<PeakWindow>,
    /// The meter's SIM number. Defaults to `91` followed by the id padded to ten digits.
    #[serde(default)]
    pub own_number: Option<String>,
    pub profile: Vec<LoadSample>,
    /// Simulated seconds at which the meter loses power and reboots.
    #[serde(default)]
    pub power_cycles_s: Vec<u64>,
}

impl MeterSpec {
    pub fn own_number(&self) -> String {
        self.own_number.clone().unwrap_or_else(|| format!("91{:0>10}", self.meter_id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub duration_s: u64,
    #[serde(default)]
    pub start: StartTime,
    #[serde(default)]
    pub clock_profile: ClockProfile,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub tariff: Option<TariffSchedule>,
    pub meters: Vec<MeterSpec>,
}

/// Every problem found in a spec, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub problems: Vec<String>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid scenario ({} problems):", self.problems.len())?;
        for p in &self.problems {
            writeln!(f, "  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

/// A meter ready to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct MeterSetup {
    pub config: MeterConfig,
    pub own_number: String,
    pub profile: LoadProfile,
    pub power_cycles_s: Vec<u64>,
}

/// A validated scenario. Meters are ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub duration_s: u64,
    pub start: RtcTime,
    pub schedule: ReportSchedule,
    pub channel: ChannelConfig,
    pub tariff: TariffSchedule,
    pub meters: Vec<MeterSetup>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError { problems: vec![e.to_string()] })
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError { problems: vec![format!("{}: {e}", path.display())] })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<Scenario, ScenarioError> {
        let mut problems = Vec::new();
        if self.duration_s == 0 {
            problems.push("duration_s must be positive".to_string());
        }
        if self.meters.is_empty() {
            problems.push("no meters declared".to_string());
        }
        let start = RtcTime::new(self.start.year, self.start.month, self.start.day, self.start.hour, 0, 0)
            .map_err(|_| problems.push(format!("start time {:?} is not a valid date in 2000-2099", self.start)))
            .ok();

        let channel = ChannelConfig {
            latency_s: self.channel.latency_s,
            drop_probability: self.channel.drop_probability,
            seed: self.channel.seed.unwrap_or(self.seed),
        };
        if let Err(e) = channel.validate() {
            problems.push(format!("channel: {e}"));
        }
        let tariff = self.tariff.unwrap_or_default();
        if let Err(e) = tariff.validate() {
            problems.push(format!("tariff: {e}"));
        }
        let window = self.clock_profile.peak_window();
        if let Err(e) = window.validate() {
            problems.push(format!("clock_profile: {e}"));
        }

        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for m in &self.meters {
            *seen.entry(&m.meter_id).or_default() += 1;
        }
        for (id, n) in &seen {
            if *n > 1 {
                problems.push(format!("meter id {id} declared {n} times"));
            }
        }

        let mut meters = Vec::new();
        for m in &self.meters {
            let config = MeterConfig {
                meter_id: m.meter_id.clone(),
                password: m.password.clone().unwrap_or_else(|| DEFAULT_PASSWORD.to_string()),
                dest_number: m.dest_number.clone(),
                load_limit_w: m.load_limit_w,
                peak_window: m.peak_window.unwrap_or(window),
            };
            if let Err(e) = config.validate() {
                problems.push(format!("meter {}: {e}", m.meter_id));
            }
            let profile = LoadProfile::new(m.profile.clone())
                .map_err(|e| problems.push(format!("meter {}: profile: {e}", m.meter_id)))
                .unwrap_or_default();
            let mut cycles = m.power_cycles_s.clone();
            cycles.sort_unstable();
            cycles.dedup();
            if let Some(t) = cycles.iter().find(|&&t| t == 0 || t >= self.duration_s) {
                problems.push(format!("meter {}: power cycle at {t} s is outside (0, duration_s)", m.meter_id));
            }
            meters.push(MeterSetup { config, own_number: m.own_number(), profile, power_cycles_s: cycles });
        }

        if !problems.is_empty() {
            return Err(ScenarioError { problems });
        }
        meters.sort_by(|a, b| a.config.meter_id.cmp(&b.config.meter_id));
        Ok(Scenario {
            seed: self.seed,
            duration_s: self.duration_s,
            start: start.expect("checked above"),
            schedule: self.clock_profile.schedule(),
            channel,
            tariff,
            meters,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ScenarioSpec {
        ScenarioSpec::from_json(
            r#"{
                "seed": 7,
                "duration_s": 3600,
                "meters": [
                    {"meter_id": "12345", "dest_number": "919876543210", "load_limit_w": 500,
                     "profile": [{"start_s": 0, "power_w": 1000, "voltage_v": 230}]}
                ]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults() {
        let s = spec().validate().unwrap();
        assert_eq!(s.schedule, ReportSchedule::Hourly { minute: 2 });
        assert_eq!(s.meters[0].config.peak_window, PeakWindow::DEMO);
        assert_eq!(s.meters[0].config.password, "1234");
        assert_eq!(s.meters[0].own_number, "910000012345");
        assert_eq!(s.channel.seed, 7);
        assert_eq!(s.start, RtcTime::new(2024, 1, 1, 0, 0, 0).unwrap());
    }

    #[test]
    fn production_profile() {
        let mut spec = spec();
        spec.clock_profile.kind = ProfileKind::Production;
        let s = spec.validate().unwrap();
        assert_eq!(s.schedule, ClockProfile::PRODUCTION_SCHEDULE);
        assert_eq!(s.meters[0].config.peak_window, ClockProfile::PRODUCTION_PEAK);
    }

    #[test]
    fn zero_duration_is_rejected() {
        let mut spec = spec();
        spec.duration_s = 0;
        let err = spec.validate().unwrap_err();
        assert_eq!(err.problems, vec!["duration_s must be positive".to_string()]);
    }

    #[test]
    fn all_problems_are_listed() {
        let mut spec = spec();
        spec.duration_s = 0;
        spec.channel.drop_probability = 2.0;
        let mut dup = spec.meters[0].clone();
        dup.profile = vec![LoadSample::new(0, 1, 0)];
        spec.meters.push(dup);
        let other = MeterSpec { meter_id: "77".into(), dest_number: "12".into(), ..spec.meters[0].clone() };
        spec.meters.push(other);
        let err = spec.validate().unwrap_err();
        let text = err.to_string();
        assert!(text.contains("duration_s"), "{text}");
        assert!(text.contains("channel"), "{text}");
        assert!(text.contains("meter id 12345 declared 2 times"), "{text}");
        assert!(text.contains("meter 12345: profile"), "{text}");
        assert!(text.contains("meter 77"), "{text}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ScenarioSpec::from_json(r#"{"seed":1,"duration_s":1,"meters":[],"extra":1}"#).unwrap_err();
        assert!(err.problems[0].contains("extra"));
    }
}
