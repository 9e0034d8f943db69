//! Fixed-point amounts: currency and energy units, both in hundredths.

use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not a non-negative decimal with at most 2 fractional digits: {0:?}")]
pub struct DecimalError(String);

fn parse_hundredths(s: &str) -> Result<u64, DecimalError> {
    let err = || DecimalError(s.to_string());
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() || frac.len() > 2 || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    let int: u64 = int.parse().map_err(|_| err())?;
    let frac: u64 = format!("{frac:0<2}").parse().map_err(|_| err())?;
    int.checked_mul(100).and_then(|v| v.checked_add(frac)).ok_or_else(err)
}

macro_rules! hundredths_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u64);

        impl $name {
            pub const ZERO: $name = $name(0);

            pub fn hundredths(self) -> u64 {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
            }
        }

        impl FromStr for $name {
            type Err = DecimalError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_hundredths(s).map($name)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                // Accept "3.00" as well as plain JSON numbers such as 3 or 3.5.
                match serde_json::Value::deserialize(d)? {
                    serde_json::Value::String(s) => s.parse().map_err(de::Error::custom),
                    serde_json::Value::Number(n) => n.to_string().parse().map_err(de::Error::custom),
                    other => Err(de::Error::custom(format!("expected decimal, got {other}"))),
                }
            }
        }
    };
}

hundredths_type!(
    /// Currency in hundredths (cents).
    Money
);
hundredths_type!(
    /// Energy units (kWh) in hundredths, as carried by telegrams.
    Units
);

impl Money {
    /// `rate × units`, rounded half-up to the cent.
    pub fn for_units(rate: Money, units: Units) -> Money {
        let product = u128::from(rate.0) * u128::from(units.0);
        Money(((product + 50) / 100) as u64)
    }
}

impl std::ops::Add for Money {
    type Output = Money;

    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl Units {
    pub fn saturating_sub(self, rhs: Units) -> Units {
        Units(self.0.saturating_sub(rhs.0))
    }
}
