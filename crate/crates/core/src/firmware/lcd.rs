use std::fmt;

use serde::{Serialize, Serializer};

pub const COLUMNS: usize = 16;
pub const ROWS: usize = 2;

/// Character buffer of a 16x2 HD44780-style display. Always full width,
/// printable ASCII only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Lcd {
    cells: [[u8; COLUMNS]; ROWS],
}

impl Default for Lcd {
    fn default() -> Self {
        Self { cells: [[b' '; COLUMNS]; ROWS] }
    }
}

impl Lcd {
    /// Pads or truncates each line to 16 columns; non-printable characters
    /// show as `?`.
    pub fn from_lines(top: &str, bottom: &str) -> Self {
        let mut lcd = Self::default();
        for (row, text) in lcd.cells.iter_mut().zip([top, bottom]) {
            for (cell, c) in row.iter_mut().zip(text.chars()) {
                *cell = if c.is_ascii_graphic() || c == ' ' { c as u8 } else { b'?' };
            }
        }
        lcd
    }

    pub fn row(&self, i: usize) -> String {
        self.cells[i].iter().map(|&b| char::from(b)).collect()
    }

    pub fn rows(&self) -> [String; ROWS] {
        [self.row(0), self.row(1)]
    }
}

impl fmt::Display for Lcd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "+{}+", "-".repeat(COLUMNS))?;
        for i in 0..ROWS {
            writeln!(f, "|{}|", self.row(i))?;
        }
        write!(f, "+{}+", "-".repeat(COLUMNS))
    }
}

impl Serialize for Lcd {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}
