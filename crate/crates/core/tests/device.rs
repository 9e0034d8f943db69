//! A single meter wired by hand: clock, firmware, NV log, modem and channel.

use wem_core::firmware::ModemLink;
use wem_core::{
    Action, AtSession, ChannelConfig, FirmwareState, MeterConfig, NvStore, ReportSchedule, RtcRegisterFile, RtcTime,
    SmsChannel, Telegram,
};

struct Device {
    rtc: RtcRegisterFile,
    nv: NvStore,
    fw: FirmwareState,
    modem: AtSession,
    link: ModemLink,
}

impl Device {
    fn boot(nv: NvStore) -> Self {
        let mut rtc = RtcRegisterFile::at(RtcTime::new(2024, 3, 1, 9, 30, 15).unwrap());
        let config = MeterConfig::new("777", "919876543210", 400).unwrap();
        let fw = FirmwareState::boot(config, ReportSchedule::default(), &mut rtc, &nv);
        Self { rtc, nv, fw, modem: AtSession::new("910000000777"), link: ModemLink::new() }
    }

    /// One second at `power_w`; returns the SMS bodies handed to the network.
    fn second(&mut self, power_w: u32, t: u64, channel: &mut SmsChannel) {
        let before = self.rtc.now();
        self.rtc.tick(1);
        let mut actions = self.fw.meter_second(power_w, &before);
        if self.rtc.now().second == 0 {
            actions.extend(self.fw.on_minute(&self.rtc.now()));
        }
        for a in actions {
            match a {
                Action::CommitNv => {
                    self.nv.commit(&self.fw.nv_payload()).unwrap();
                }
                Action::SendTelegram(telegram) => {
                    let dest = self.fw.config().dest_number.clone();
                    let report = self.link.send_sms(&mut self.modem, &dest, telegram.to_string().as_bytes(), t).unwrap();
                    for msg in report.submitted {
                        channel.submit(msg);
                    }
                }
                Action::LcdUpdate => {}
            }
        }
    }
}

#[test]
fn two_hours_of_reports_through_the_modem() {
    let mut channel = SmsChannel::new(ChannelConfig { latency_s: 3, drop_probability: 0.0, seed: 1 }).unwrap();
    let mut dev = Device::boot(NvStore::in_memory());
    assert_eq!((dev.rtc.now().hour, dev.rtc.now().minute, dev.rtc.now().second), (9, 1, 0));

    let mut delivered = Vec::new();
    for t in 0..7200 {
        dev.second(300, t, &mut channel);
        delivered.extend(channel.step(t + 1));
    }
    // Reports at 09:02 and 10:02, i.e. 60 s and 3660 s after boot.
    assert_eq!(delivered.len(), 2);
    assert_eq!(delivered.iter().map(|m| m.submit_time_s).collect::<Vec<_>>(), vec![59, 3659]);
    let second = Telegram::decode(&delivered[1].body).unwrap();
    // 300 W is under the 400 W limit, so it is all normal consumption: 3659 s × 300 W.
    assert_eq!(second.ncu_display, format!("{:02}.{:02}", 0, 3659 * 300 / 1125 * 100 / 3200));
    assert_eq!(second.ecu_display, "00.00");
    assert_eq!(delivered[0].to_number, "919876543210");
    assert_eq!(delivered[0].from_number, "910000000777");
}

#[test]
fn power_loss_keeps_every_committed_pulse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meter.nvlog");
    let mut channel = SmsChannel::new(ChannelConfig::default()).unwrap();
    let mut dev = Device::boot(NvStore::create(&path).unwrap());
    for t in 0..1000 {
        dev.second(900, t, &mut channel);
    }
    let pulses = dev.fw.register().total_pulses();
    assert_eq!(pulses, 900 * 1000 / 1125);
    drop(dev);

    let dev = Device::boot(NvStore::open(&path).unwrap());
    assert_eq!(dev.fw.register().total_pulses(), pulses);
    assert_eq!(dev.rtc.now().minute, 1);
}
