//! DS1307 timekeeping register file.
//!
//! Address map: 0x00-0x06 seconds, minutes, hours, day, date, month, year
//! (packed BCD), 0x07 control, 0x08-0x3F battery-backed NVRAM. Bit 7 of the
//! seconds register is CH (clock halt). The bus transaction layer is not
//! modelled; access is per register.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const REG_SECONDS: u8 = 0x00;
pub const REG_MINUTES: u8 = 0x01;
pub const REG_HOURS: u8 = 0x02;
pub const REG_DAY: u8 = 0x03;
pub const REG_DATE: u8 = 0x04;
pub const REG_MONTH: u8 = 0x05;
pub const REG_YEAR: u8 = 0x06;
pub const REG_CONTROL: u8 = 0x07;
pub const NVRAM_START: u8 = 0x08;
pub const LAST_ADDRESS: u8 = 0x3F;

const CLOCK_HALT: u8 = 0x80;
const MODE_12H: u8 = 0x40;
const PM: u8 = 0x20;

const SECONDS_PER_DAY: u64 = 86_400;
/// Days from 2000-01-01 to 2100-01-01; the year register wraps after 99.
const DAYS_PER_CENTURY: u64 = 36_525;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RtcError {
    #[error("value {0} cannot be BCD encoded (0..=99)")]
    BcdRange(u8),
    #[error("byte {0:#04x} is not valid BCD")]
    InvalidBcd(u8),
    #[error("register address {0:#04x} out of range (0x00..=0x3f)")]
    AddressOutOfRange(u8),
    #[error("value {value:#04x} invalid for register {addr:#04x}")]
    InvalidValue { addr: u8, value: u8 },
    #[error("invalid calendar time")]
    InvalidTime,
}

pub fn bcd_encode(n: u8) -> Result<u8, RtcError> {
    if n > 99 {
        return Err(RtcError::BcdRange(n));
    }
    Ok(((n / 10) << 4) | (n % 10))
}

pub fn bcd_decode(b: u8) -> Result<u8, RtcError> {
    let (hi, lo) = (b >> 4, b & 0x0F);
    if hi > 9 || lo > 9 {
        return Err(RtcError::InvalidBcd(b));
    }
    Ok(hi * 10 + lo)
}

/// Decoded calendar time. `weekday` is 1..=7, 1 = Monday.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtcTime {
    pub year: u16,
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    pub minute: u8,
    pub second: u8,
    pub weekday: u8,
}

impl RtcTime {
    pub fn new(year: u16, month: u8, day: u8, hour: u8, minute: u8, second: u8) -> Result<Self, RtcError> {
        if !(2000..=2099).contains(&year)
            || !(1..=12).contains(&month)
            || day == 0
            || day > days_in_month(year, month)
            || hour > 23
            || minute > 59
            || second > 59
        {
            return Err(RtcError::InvalidTime);
        }
        let days = days_since_2000(year, month, day);
        // 2000-01-01 was a Saturday.
        let weekday = ((days + 5) % 7) as u8 + 1;
        Ok(Self { year, month, day, hour, minute, second, weekday })
    }

    pub fn seconds_of_day(&self) -> u64 {
        u64::from(self.hour) * 3600 + u64::from(self.minute) * 60 + u64::from(self.second)
    }

    /// Hours elapsed since 2000-01-01 00:00.
    pub fn hour_index(&self) -> u64 {
        days_since_2000(self.year, self.month, self.day) * 24 + u64::from(self.hour)
    }

    fn seconds_since_2000(&self) -> u64 {
        days_since_2000(self.year, self.month, self.day) * SECONDS_PER_DAY + self.seconds_of_day()
    }
}

impl Default for RtcTime {
    fn default() -> Self {
        RtcTime { year: 2000, month: 1, day: 1, hour: 0, minute: 0, second: 0, weekday: 6 }
    }
}

fn is_leap(year: u16) -> bool {
    (year.is_multiple_of(4) && !year.is_multiple_of(100)) || year.is_multiple_of(400)
}

pub fn days_in_month(year: u16, month: u8) -> u8 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap(year) => 29,
        2 => 28,
        _ => 0,
    }
}

/// Days from 2000-01-01. `day` may exceed the month length; the overflow
/// carries into the following days.
fn days_since_2000(year: u16, month: u8, day: u8) -> u64 {
    let mut days = 0u64;
    for y in 2000..year {
        days += if is_leap(y) { 366 } else { 365 };
    }
    for m in 1..month {
        days += u64::from(days_in_month(year, m));
    }
    days + u64::from(day) - 1
}

fn civil_from_days(mut days: u64) -> (u16, u8, u8) {
    let mut year = 2000u16;
    loop {
        let len = if is_leap(year) { 366 } else { 365 };
        if days < len {
            break;
        }
        days -= len;
        year += 1;
    }
    let mut month = 1u8;
    loop {
        let len = u64::from(days_in_month(year, month));
        if days < len {
            break;
        }
        days -= len;
        month += 1;
    }
    (year, month, days as u8 + 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtcRegisterFile {
    regs: [u8; 8],
    nvram: Vec<u8>,
}

impl Default for RtcRegisterFile {
    fn default() -> Self {
        Self::at(RtcTime::default())
    }
}

impl RtcRegisterFile {
    /// A running clock (CH clear, 24-hour mode) set to `time`.
    pub fn at(time: RtcTime) -> Self {
        let mut rtc = Self { regs: [0; 8], nvram: vec![0; usize::from(LAST_ADDRESS - NVRAM_START) + 1] };
        rtc.store_time(&time, false);
        rtc
    }

    pub fn halted(&self) -> bool {
        self.regs[0] & CLOCK_HALT != 0
    }

    pub fn twelve_hour_mode(&self) -> bool {
        self.regs[2] & MODE_12H != 0
    }

    pub fn registers(&self) -> [u8; 8] {
        self.regs
    }

    pub fn nvram(&self) -> &[u8] {
        &self.nvram
    }

    pub fn read_byte(&self, addr: u8) -> Result<u8, RtcError> {
        match addr {
            0x00..=0x07 => Ok(self.regs[usize::from(addr)]),
            0x08..=LAST_ADDRESS => Ok(self.nvram[usize::from(addr - NVRAM_START)]),
            _ => Err(RtcError::AddressOutOfRange(addr)),
        }
    }

    /// Writes one register. Time registers only accept values that decode to
    /// a valid field, so the calendar stays readable.
    pub fn write_byte(&mut self, addr: u8, value: u8) -> Result<(), RtcError> {
        let invalid = RtcError::InvalidValue { addr, value };
        // Checks that `bits` holds BCD in lo..=hi and nothing outside `mask` is set.
        let field = |bits: u8, mask: u8, lo: u8, hi: u8| -> Result<(), RtcError> {
            if bits & !mask != 0 {
                return Err(invalid);
            }
            match bcd_decode(bits) {
                Ok(n) if (lo..=hi).contains(&n) => Ok(()),
                _ => Err(invalid),
            }
        };
        match addr {
            REG_SECONDS => field(value & !CLOCK_HALT, 0x7F, 0, 59)?,
            REG_MINUTES => field(value, 0x7F, 0, 59)?,
            REG_HOURS if value & MODE_12H != 0 => field(value & !(MODE_12H | PM), 0x1F, 1, 12)?,
            REG_HOURS => field(value, 0x3F, 0, 23)?,
            REG_DAY => field(value, 0x07, 1, 7)?,
            REG_DATE => field(value, 0x3F, 1, 31)?,
            REG_MONTH => field(value, 0x1F, 1, 12)?,
            REG_YEAR => field(value, 0xFF, 0, 99)?,
            REG_CONTROL => {}
            0x08..=LAST_ADDRESS => {
                self.nvram[usize::from(addr - NVRAM_START)] = value;
                return Ok(());
            }
            _ => return Err(RtcError::AddressOutOfRange(addr)),
        }
        self.regs[usize::from(addr)] = value;
        Ok(())
    }

    /// Decodes the time registers.
    pub fn now(&self) -> RtcTime {
        let d = |b: u8| bcd_decode(b).unwrap_or(0);
        let hours = self.regs[2];
        let hour = if hours & MODE_12H != 0 {
            let h12 = d(hours & 0x1F) % 12;
            if hours & PM != 0 { h12 + 12 } else { h12 }
        } else {
            d(hours & 0x3F)
        };
        RtcTime {
            year: 2000 + u16::from(d(self.regs[6])),
            month: d(self.regs[5] & 0x1F),
            day: d(self.regs[4] & 0x3F),
            hour,
            minute: d(self.regs[1] & 0x7F),
            second: d(self.regs[0] & 0x7F),
            weekday: d(self.regs[3] & 0x07),
        }
    }

    /// Re-seeds the calendar, keeping the halt flag and the 12/24 h mode.
    pub fn set_time(&mut self, time: &RtcTime) {
        let halted = self.halted();
        self.store_time(time, halted);
    }

    fn store_time(&mut self, t: &RtcTime, halted: bool) {
        let e = |n: u8| bcd_encode(n).expect("calendar field below 100");
        self.regs[0] = e(t.second) | if halted { CLOCK_HALT } else { 0 };
        self.regs[1] = e(t.minute);
        self.regs[2] = if self.twelve_hour_mode() {
            let h12 = match t.hour % 12 {
                0 => 12,
                h => h,
            };
            MODE_12H | if t.hour >= 12 { PM } else { 0 } | e(h12)
        } else {
            e(t.hour)
        };
        self.regs[3] = t.weekday;
        self.regs[4] = e(t.day);
        self.regs[5] = e(t.month);
        self.regs[6] = e((t.year - 2000) as u8);
    }

    /// Advances the calendar by `dt_s` seconds. No-op while CH is set.
    pub fn tick(&mut self, dt_s: u64) {
        if self.halted() || dt_s == 0 {
            return;
        }
        let now = self.now();
        let old = now.seconds_since_2000();
        let new = old + dt_s;
        let days_advanced = new / SECONDS_PER_DAY - old / SECONDS_PER_DAY;
        let new = new % (DAYS_PER_CENTURY * SECONDS_PER_DAY);

        let (year, month, day) = civil_from_days(new / SECONDS_PER_DAY);
        let sod = new % SECONDS_PER_DAY;
        let weekday = ((u64::from(now.weekday.clamp(1, 7)) - 1 + days_advanced) % 7) as u8 + 1;
        let time = RtcTime {
            year,
            month,
            day,
            hour: (sod / 3600) as u8,
            minute: (sod / 60 % 60) as u8,
            second: (sod % 60) as u8,
            weekday,
        };
        self.store_time(&time, false);
    }

    pub fn ticked(mut self, dt_s: u64) -> Self {
        self.tick(dt_s);
        self
    }
}
