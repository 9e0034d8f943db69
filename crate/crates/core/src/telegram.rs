//! SMS reading telegram: `#$<meter id>$<ncu>$<ecu>$*`.
//!
//! Grammar: `#$ [0-9]{1,8} $ [0-9]{2,}.[0-9]{2} $ [0-9]{2,}.[0-9]{2} $*`,
//! ASCII, no whitespace. The first decimal is total minus extra (normal
//! units), the second is extra units.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metering::units_display;

pub const MAX_ID_DIGITS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    MissingHeader,
    MissingTrailer,
    TrailingBytes,
    FieldCount,
    NonDigitId,
    IdLength,
    MalformedDecimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("{kind:?} at byte {position}")]
pub struct ParseError {
    pub kind: ErrorKind,
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("meter id must be 1-8 ASCII digits, got {0:?}")]
    MeterId(String),
    #[error("display value must look like 00.00, got {0:?}")]
    Display(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Telegram {
    pub meter_id: String,
    pub ncu_display: String,
    pub ecu_display: String,
}

pub fn valid_meter_id(id: &str) -> bool {
    (1..=MAX_ID_DIGITS).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_digit())
}

pub fn valid_display(s: &str) -> bool {
    match s.split_once('.') {
        Some((int, frac)) => {
            int.len() >= 2
                && frac.len() == 2
                && int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit())
        }
        None => false,
    }
}

/// Parses a display value into hundredths of a unit.
pub fn display_hundredths(s: &str) -> Option<u64> {
    if !valid_display(s) {
        return None;
    }
    let (int, frac) = s.split_once('.')?;
    let int: u64 = int.parse().ok()?;
    let frac: u64 = frac.parse().ok()?;
    int.checked_mul(100)?.checked_add(frac)
}

impl Telegram {
    pub fn new(
        meter_id: impl Into<String>,
        ncu_display: impl Into<String>,
        ecu_display: impl Into<String>,
    ) -> Result<Self, FieldError> {
        let t = Self {
            meter_id: meter_id.into(),
            ncu_display: ncu_display.into(),
            ecu_display: ecu_display.into(),
        };
        t.validate()?;
        Ok(t)
    }

    /// Builds the telegram for cumulative pulse counters.
    pub fn from_pulses(meter_id: &str, ncu_pulses: u64, ecu_pulses: u64) -> Result<Self, FieldError> {
        Self::new(meter_id, units_display(ncu_pulses), units_display(ecu_pulses))
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !valid_meter_id(&self.meter_id) {
            return Err(FieldError::MeterId(self.meter_id.clone()));
        }
        for d in [&self.ncu_display, &self.ecu_display] {
            if !valid_display(d) {
                return Err(FieldError::Display(d.clone()));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, FieldError> {
        self.validate()?;
        Ok(self.to_string().into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ParseError> {
        Parser { input: bytes, pos: 0 }.telegram()
    }
}

impl fmt::Display for Telegram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#${}${}${}$*", self.meter_id, self.ncu_display, self.ecu_display)
    }
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, kind: ErrorKind) -> ParseError {
        ParseError { kind, position: self.pos }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn telegram(mut self) -> Result<Telegram, ParseError> {
        for expected in *b"#$" {
            if self.peek() != Some(expected) {
                return Err(self.err(ErrorKind::MissingHeader));
            }
            self.pos += 1;
        }

        let meter_id = self.meter_id()?;
        self.separator()?;
        self.field_start()?;
        let ncu = self.decimal()?;
        self.separator()?;
        self.field_start()?;
        let ecu = self.decimal()?;
        self.separator()?;

        match self.peek() {
            Some(b'*') => self.pos += 1,
            None => return Err(self.err(ErrorKind::MissingTrailer)),
            Some(b) if b.is_ascii_digit() || b == b'$' => return Err(self.err(ErrorKind::FieldCount)),
            Some(_) => return Err(self.err(ErrorKind::MissingTrailer)),
        }
        if self.pos != self.input.len() {
            return Err(self.err(ErrorKind::TrailingBytes));
        }
        Ok(Telegram { meter_id, ncu_display: ncu, ecu_display: ecu })
    }

    fn meter_id(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            match b {
                b'0'..=b'9' => {
                    if self.pos - start == MAX_ID_DIGITS {
                        return Err(self.err(ErrorKind::IdLength));
                    }
                    self.pos += 1;
                }
                b'$' => break,
                _ => return Err(self.err(ErrorKind::NonDigitId)),
            }
        }
        if self.peek().is_none() {
            return Err(self.err(ErrorKind::MissingTrailer));
        }
        if self.pos == start {
            return Err(self.err(ErrorKind::IdLength));
        }
        Ok(ascii(&self.input[start..self.pos]))
    }

    /// A `$` ends every field; end of input here means the trailer is missing.
    fn separator(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(b'$') => {
                self.pos += 1;
                Ok(())
            }
            None => Err(self.err(ErrorKind::MissingTrailer)),
            Some(_) => Err(self.err(ErrorKind::MalformedDecimal)),
        }
    }

    /// Reports a premature `*` as too few fields.
    fn field_start(&self) -> Result<(), ParseError> {
        match self.peek() {
            Some(b'*') => Err(self.err(ErrorKind::FieldCount)),
            None => Err(self.err(ErrorKind::MissingTrailer)),
            _ => Ok(()),
        }
    }

    fn decimal(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        match self.peek() {
            Some(b'.') if self.pos - start >= 2 => self.pos += 1,
            None => return Err(self.err(ErrorKind::MissingTrailer)),
            _ => return Err(self.err(ErrorKind::MalformedDecimal)),
        }
        for _ in 0..2 {
            match self.peek() {
                Some(b'0'..=b'9') => self.pos += 1,
                None => return Err(self.err(ErrorKind::MissingTrailer)),
                _ => return Err(self.err(ErrorKind::MalformedDecimal)),
            }
        }
        Ok(ascii(&self.input[start..self.pos]))
    }
}

fn ascii(bytes: &[u8]) -> String {
    bytes.iter().map(|&b| char::from(b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use regex::bytes::Regex;

    fn oracle() -> Regex {
        Regex::new(r"^#\$[0-9]{1,8}\$[0-9]{2,}\.[0-9]{2}\$[0-9]{2,}\.[0-9]{2}\$\*$").unwrap()
    }

    #[test]
    fn encode_examples() {
        let t = Telegram::new("12345", "00.00", "00.00").unwrap();
        assert_eq!(t.encode().unwrap(), b"#$12345$00.00$00.00$*");
        let t = Telegram::new("1", "00.00", "00.00").unwrap();
        assert_eq!(t.encode().unwrap(), b"#$1$00.00$00.00$*");
        let t = Telegram::from_pulses("12345", 44_800, 3200).unwrap();
        assert_eq!(t.encode().unwrap(), b"#$12345$14.00$01.00$*");
    }

    #[test]
    fn encode_rejects_bad_fields() {
        assert!(Telegram::new("", "00.00", "00.00").is_err());
        assert!(Telegram::new("123456789", "00.00", "00.00").is_err());
        assert!(Telegram::new("12a", "00.00", "00.00").is_err());
        assert!(Telegram::new("1", "0.00", "00.00").is_err());
        assert!(Telegram::new("1", "00.0", "00.00").is_err());
        let t = Telegram { meter_id: "1".into(), ncu_display: "x".into(), ecu_display: "00.00".into() };
        assert!(t.encode().is_err());
    }

    #[test]
    fn decode_literal() {
        let t = Telegram::decode(b"#$12345$00.00$00.00$*").unwrap();
        assert_eq!(t, Telegram::new("12345", "00.00", "00.00").unwrap());
    }

    #[test]
    fn decode_errors() {
        let e = |s: &str| Telegram::decode(s.as_bytes()).unwrap_err();
        assert_eq!(e("#$12345$00.00$*"), ParseError { kind: ErrorKind::FieldCount, position: 14 });
        assert_eq!(e("#$12345$00.00$00.00$00.00$*").kind, ErrorKind::FieldCount);
        assert_eq!(e("garbage"), ParseError { kind: ErrorKind::MissingHeader, position: 0 });
        assert_eq!(e("#12345"), ParseError { kind: ErrorKind::MissingHeader, position: 1 });
        assert_eq!(e(""), ParseError { kind: ErrorKind::MissingHeader, position: 0 });
        assert_eq!(e("#$12a45$00.00$00.00$*"), ParseError { kind: ErrorKind::NonDigitId, position: 4 });
        assert_eq!(e("#$123456789$00.00$00.00$*"), ParseError { kind: ErrorKind::IdLength, position: 10 });
        assert_eq!(e("#$$00.00$00.00$*"), ParseError { kind: ErrorKind::IdLength, position: 2 });
        assert_eq!(e("#$1$0.00$00.00$*"), ParseError { kind: ErrorKind::MalformedDecimal, position: 5 });
        assert_eq!(e("#$1$00.0$00.00$*"), ParseError { kind: ErrorKind::MalformedDecimal, position: 8 });
        assert_eq!(e("#$1$00.00$00.00$"), ParseError { kind: ErrorKind::MissingTrailer, position: 16 });
        assert_eq!(e("#$1$00.00$00.00"), ParseError { kind: ErrorKind::MissingTrailer, position: 15 });
        assert_eq!(e("#$1$00.00$00.00$*\r\n"), ParseError { kind: ErrorKind::TrailingBytes, position: 17 });
    }

    #[test]
    fn display_hundredths_parses() {
        assert_eq!(display_hundredths("14.00"), Some(1400));
        assert_eq!(display_hundredths("100.07"), Some(10007));
        assert_eq!(display_hundredths("1.00"), None);
    }

    fn arb_telegram() -> impl Strategy<Value = Telegram> {
        ("[0-9]{1,8}", "[0-9]{2,5}\\.[0-9]{2}", "[0-9]{2,5}\\.[0-9]{2}")
            .prop_map(|(id, n, e)| Telegram { meter_id: id, ncu_display: n, ecu_display: e })
    }

    /// Mutates a valid telegram so most cases land near the grammar boundary.
    fn arb_near_miss() -> impl Strategy<Value = Vec<u8>> {
        (arb_telegram(), prop::collection::vec((any::<prop::sample::Index>(), any::<u8>(), 0u8..3), 0..4))
            .prop_map(|(t, edits)| {
                let mut bytes = t.to_string().into_bytes();
                for (at, b, op) in edits {
                    let i = at.index(bytes.len() + 1);
                    match op {
                        0 if i < bytes.len() => bytes[i] = b"#$*.0123456789a"[usize::from(b) % 15],
                        1 => bytes.insert(i, b"#$*.0123456789a"[usize::from(b) % 15]),
                        _ if i < bytes.len() => {
                            bytes.remove(i);
                        }
                        _ => {}
                    }
                }
                bytes
            })
    }

    proptest! {
        #[test]
        fn round_trip(t in arb_telegram()) {
            let bytes = t.encode().unwrap();
            prop_assert!(oracle().is_match(&bytes));
            prop_assert_eq!(Telegram::decode(&bytes).unwrap(), t);
        }

        #[test]
        fn accepts_exactly_the_grammar(bytes in arb_near_miss()) {
            let decoded = Telegram::decode(&bytes);
            prop_assert_eq!(decoded.is_ok(), oracle().is_match(&bytes), "{:?}", String::from_utf8_lossy(&bytes));
            if let Err(e) = decoded {
                prop_assert!(e.position <= bytes.len());
            }
        }

        #[test]
        fn never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let decoded = Telegram::decode(&bytes);
            prop_assert_eq!(decoded.is_ok(), oracle().is_match(&bytes));
        }
    }
}
