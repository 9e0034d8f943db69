//! GSM modem emulation (SMS text mode subset) and a lossy SMS channel.
//!
//! Supported command lines, each terminated by CR LF:
//!
//! | line               | effect                         | result     |
//! |--------------------|--------------------------------|------------|
//! | `AT`               | none                           | `OK`       |
//! | `ATE0` / `ATE1`    | echo off / on                  | `OK`       |
//! | `AT+CMGF=0` / `=1` | PDU / text mode                | `OK`       |
//! | `AT+CMGS="<num>"`  | start message (text mode only) | `> ` prompt|
//!
//! After the prompt, bytes up to Ctrl-Z (0x1A) form the message body; Esc
//! (0x1B) aborts it. Result codes are framed `\r\nOK\r\n`,
//! `\r\nERROR\r\n`, prompt `\r\n> `.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CR: u8 = 0x0D;
pub const LF: u8 = 0x0A;
pub const CTRL_Z: u8 = 0x1A;
pub const ESC: u8 = 0x1B;

pub const OK: &[u8] = b"\r\nOK\r\n";
pub const ERROR: &[u8] = b"\r\nERROR\r\n";
pub const PROMPT: &[u8] = b"\r\n> ";

pub const MAX_BODY_LEN: usize = 160;
const MAX_LINE_LEN: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SmsMessage {
    pub from_number: String,
    pub to_number: String,
    pub body: Vec<u8>,
    pub submit_time_s: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Command,
    AwaitBody,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedOutput {
    pub response: Vec<u8>,
    pub submitted: Vec<SmsMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtSession {
    own_number: String,
    echo: bool,
    text_mode: bool,
    state: SessionState,
    pending_dest: Option<String>,
    line_buffer: Vec<u8>,
    body: Vec<u8>,
}

impl AtSession {
    /// A freshly powered modem: echo on, PDU mode.
    pub fn new(own_number: impl Into<String>) -> Self {
        Self {
            own_number: own_number.into(),
            echo: true,
            text_mode: false,
            state: SessionState::Command,
            pending_dest: None,
            line_buffer: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn echo(&self) -> bool {
        self.echo
    }

    pub fn text_mode(&self) -> bool {
        self.text_mode
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn pending_dest(&self) -> Option<&str> {
        self.pending_dest.as_deref()
    }

    /// Feeds serial bytes from the host. `now_s` stamps submitted messages.
    pub fn feed(&mut self, input: &[u8], now_s: u64) -> FeedOutput {
        let mut out = FeedOutput::default();
        for &b in input {
            match self.state {
                SessionState::Command => self.command_byte(b, &mut out),
                SessionState::AwaitBody => self.body_byte(b, now_s, &mut out),
            }
        }
        out
    }

    fn command_byte(&mut self, b: u8, out: &mut FeedOutput) {
        if self.echo && b != CTRL_Z {
            out.response.push(b);
        }
        // Stray Ctrl-Z is ignored; a lone LF at line start is leftover framing.
        if b == CTRL_Z || (b == LF && self.line_buffer.is_empty()) {
            return;
        }
        self.line_buffer.push(b);
        if self.line_buffer.ends_with(&[CR, LF]) {
            let len = self.line_buffer.len() - 2;
            let line: Vec<u8> = self.line_buffer.drain(..).take(len).collect();
            if !line.is_empty() {
                self.execute(&line, out);
            }
        } else if self.line_buffer.len() > MAX_LINE_LEN {
            self.line_buffer.clear();
            out.response.extend_from_slice(ERROR);
        }
    }

    fn execute(&mut self, line: &[u8], out: &mut FeedOutput) {
        let upper = line.to_ascii_uppercase();
        let result = match upper.as_slice() {
            b"AT" => OK,
            b"ATE0" => {
                self.echo = false;
                OK
            }
            b"ATE1" => {
                self.echo = true;
                OK
            }
            b"AT+CMGF=0" => {
                self.text_mode = false;
                OK
            }
            b"AT+CMGF=1" => {
                self.text_mode = true;
                OK
            }
            cmd if cmd.starts_with(b"AT+CMGS=") => match parse_destination(&line[8..]) {
                Some(dest) if self.text_mode => {
                    self.pending_dest = Some(dest);
                    self.body.clear();
                    self.state = SessionState::AwaitBody;
                    PROMPT
                }
                _ => ERROR,
            },
            _ => ERROR,
        };
        out.response.extend_from_slice(result);
    }

    fn body_byte(&mut self, b: u8, now_s: u64, out: &mut FeedOutput) {
        match b {
            CTRL_Z => {
                let dest = self.pending_dest.take().unwrap_or_default();
                self.state = SessionState::Command;
                let body = std::mem::take(&mut self.body);
                if body.len() > MAX_BODY_LEN {
                    out.response.extend_from_slice(ERROR);
                } else {
                    out.submitted.push(SmsMessage {
                        from_number: self.own_number.clone(),
                        to_number: dest,
                        body,
                        submit_time_s: now_s,
                    });
                    out.response.extend_from_slice(OK);
                }
            }
            ESC => {
                self.pending_dest = None;
                self.body.clear();
                self.state = SessionState::Command;
            }
            _ => {
                if self.echo {
                    out.response.push(b);
                }
                // Keep one byte past the limit so the overflow is detected at Ctrl-Z.
                if self.body.len() <= MAX_BODY_LEN {
                    self.body.push(b);
                }
            }
        }
    }
}

/// `"<digits>"`, optionally with a leading `+` inside the quotes.
fn parse_destination(arg: &[u8]) -> Option<String> {
    let inner = arg.strip_prefix(b"\"")?.strip_suffix(b"\"")?;
    let digits = inner.strip_prefix(b"+").unwrap_or(inner);
    if digits.is_empty() || digits.len() > 20 || !digits.iter().all(u8::is_ascii_digit) {
        return None;
    }
    Some(String::from_utf8_lossy(digits).into_owned())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("drop probability {0} outside [0, 1]")]
    DropProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    #[serde(default)]
    pub latency_s: u64,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { latency_s: 0, drop_probability: 0.0, seed: 0 }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(ChannelError::DropProbability(self.drop_probability));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub submitted: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl ChannelStats {
    pub fn in_flight(&self) -> u64 {
        self.submitted - self.delivered - self.dropped
    }
}

/// Store-and-forward SMS network with fixed latency and seeded loss. The
/// drop decision is drawn at submission, so a given seed and submission
/// sequence always yields the same trace.
#[derive(Debug, Clone)]
pub struct SmsChannel {
    config: ChannelConfig,
    rng: ChaCha8Rng,
    in_flight: VecDeque<SmsMessage>,
    stats: ChannelStats,
}

impl SmsChannel {
    pub fn new(config: ChannelConfig) -> Result<Self, ChannelError> {
        config.validate()?;
        Ok(Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            in_flight: VecDeque::new(),
            stats: ChannelStats::default(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    /// Hands a message to the network. Returns `false` if it was lost.
    pub fn submit(&mut self, msg: SmsMessage) -> bool {
        self.stats.submitted += 1;
        let draw: f64 = self.rng.random();
        if draw < self.config.drop_probability {
            self.stats.dropped += 1;
            return false;
        }
        self.in_flight.push_back(msg);
        true
    }

    /// Delivers, in submission order, every message that has waited out the latency.
    pub fn step(&mut self, now_s: u64) -> Vec<SmsMessage> {
        let mut delivered = Vec::new();
        while let Some(front) = self.in_flight.front() {
            if front.submit_time_s + self.config.latency_s > now_s {
                break;
            }
            delivered.extend(self.in_flight.pop_front());
        }
        self.stats.delivered += delivered.len() as u64;
        delivered
    }
}
