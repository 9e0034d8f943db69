#![allow(dead_code)]

use wem_harness::scenario::{ChannelSpec, ClockProfile, MeterSpec, ScenarioSpec, StartTime};
use wem_core::LoadSample;

pub const JOULES_PER_PULSE: u64 = 1125;

/// Boot puts the RTC at 00:01:00, so scenario second `s` reads `60 + s` on the clock.
pub const BOOT_CLOCK_S: u64 = 60;

pub fn meter(id: &str, limit: u32, profile: &[(u64, u32, u32)]) -> MeterSpec {
    MeterSpec {
        meter_id: id.into(),
        dest_number: "919876543210".into(),
        load_limit_w: limit,
        password: None,
        peak_window: None,
        own_number: None,
        profile: profile.iter().map(|&(t, p, v)| LoadSample::new(t, p, v)).collect(),
        power_cycles_s: Vec::new(),
    }
}

pub fn scenario(seed: u64, duration_s: u64, meters: Vec<MeterSpec>) -> ScenarioSpec {
    ScenarioSpec {
        seed,
        duration_s,
        start: StartTime::default(),
        clock_profile: ClockProfile::default(),
        channel: ChannelSpec::default(),
        tariff: None,
        meters,
    }
}

fn power_at(profile: &[(u64, u32, u32)], s: u64) -> u64 {
    profile.iter().take_while(|(t, _, _)| *t <= s).last().map_or(0, |&(_, p, _)| u64::from(p))
}

/// Brute-force metering over `[0, until)`: one second at a time, classified
/// by the demo window (minutes 5 to 8 inclusive), each class floored separately.
pub fn oracle_pulses(profile: &[(u64, u32, u32)], limit: u32, until: u64) -> (u64, u64) {
    let (mut normal_j, mut extra_j) = (0u64, 0u64);
    for s in 0..until {
        let p = power_at(profile, s);
        let minute = ((BOOT_CLOCK_S + s) / 60) % 60;
        if (5..=8).contains(&minute) && p > u64::from(limit) {
            extra_j += p;
        } else {
            normal_j += p;
        }
    }
    (normal_j / JOULES_PER_PULSE, extra_j / JOULES_PER_PULSE)
}

/// `pulses / 32` hundredths of a unit, at least two integer digits.
pub fn oracle_display(pulses: u64) -> String {
    let hundredths = pulses * 100 / 3200;
    format!("{:02}.{:02}", hundredths / 100, hundredths % 100)
}

/// Scenario seconds at which an hourly minute-2 report falls, within `(0, duration]`.
pub fn oracle_report_times(duration: u64) -> Vec<u64> {
    (1..=duration).filter(|t| (BOOT_CLOCK_S + t) % 3600 == 120).collect()
}
