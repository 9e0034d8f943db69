//! Host side of the modem conversation: the four-step text-mode script.

use thiserror::Error;

use crate::modem::{AtSession, SmsMessage, CTRL_Z, OK, PROMPT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("modem answered {response:?} to {command:?}")]
    Rejected { command: String, response: String },
}

/// One command written to the modem and everything it answered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub command: Vec<u8>,
    pub response: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkReport {
    pub transcript: Vec<Exchange>,
    pub submitted: Vec<SmsMessage>,
}

/// Tracks whether the modem has been through `AT`, `ATE0`, `AT+CMGF=1`
/// since the last reset.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModemLink {
    initialized: bool,
}

enum Expect {
    Ok,
    Prompt,
}

impl ModemLink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn initialized(&self) -> bool {
        self.initialized
    }

    /// Forgets the modem setup, e.g. after a modem power cycle.
    pub fn reset(&mut self) {
        self.initialized = false;
    }

    /// Sends one SMS, initialising the modem first if needed. A rejected
    /// `AT+CMGS` on an initialised link triggers one re-initialisation.
    pub fn send_sms(
        &mut self,
        modem: &mut AtSession,
        dest: &str,
        body: &[u8],
        now_s: u64,
    ) -> Result<LinkReport, LinkError> {
        let mut report = LinkReport::default();
        let was_initialized = self.initialized;
        if !self.initialized {
            self.initialize(modem, now_s, &mut report)?;
        }
        let cmgs = format!("AT+CMGS=\"{dest}\"\r\n").into_bytes();
        if let Err(e) = exchange(modem, &cmgs, Expect::Prompt, now_s, &mut report) {
            if !was_initialized {
                return Err(e);
            }
            self.initialized = false;
            self.initialize(modem, now_s, &mut report)?;
            exchange(modem, &cmgs, Expect::Prompt, now_s, &mut report)?;
        }
        let mut frame = body.to_vec();
        frame.push(CTRL_Z);
        exchange(modem, &frame, Expect::Ok, now_s, &mut report)?;
        Ok(report)
    }

    fn initialize(&mut self, modem: &mut AtSession, now_s: u64, report: &mut LinkReport) -> Result<(), LinkError> {
        for cmd in [&b"AT\r\n"[..], b"ATE0\r\n", b"AT+CMGF=1\r\n"] {
            exchange(modem, cmd, Expect::Ok, now_s, report)?;
        }
        self.initialized = true;
        Ok(())
    }
}

fn exchange(
    modem: &mut AtSession,
    command: &[u8],
    expect: Expect,
    now_s: u64,
    report: &mut LinkReport,
) -> Result<(), LinkError> {
    let out = modem.feed(command, now_s);
    let ok = match expect {
        Expect::Ok => out.response.ends_with(OK),
        Expect::Prompt => out.response.ends_with(PROMPT),
    };
    report.transcript.push(Exchange { command: command.to_vec(), response: out.response.clone() });
    report.submitted.extend(out.submitted);
    if ok {
        Ok(())
    } else {
        Err(LinkError::Rejected {
            command: String::from_utf8_lossy(command).into_owned(),
            response: String::from_utf8_lossy(&out.response).into_owned(),
        })
    }
}
