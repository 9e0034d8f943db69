use std::io::{self, BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use wem_core::modem::{AtSession, CTRL_Z, ESC};
use wem_core::telegram::display_hundredths;
use wem_core::Telegram;
use wem_harness::live::{self, Live, DEFAULT_TIME_SCALE};
use wem_harness::{ScenarioSpec, Simulation};
use wem_station::http as station_http;
use wem_station::{ServiceConfig, Station};

#[derive(Parser)]
#[command(name = "wem", version, about = "Wireless energy meter simulator and head end")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to completion and write its report.
    Run {
        scenario: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the event log, one line per event.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Keep each meter's NV log in `<dir>/meter_<id>.nvlog`.
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
    /// Start the head-end API, optionally with a live scenario.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured listen address.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Simulated seconds per real second.
        #[arg(long, default_value_t = DEFAULT_TIME_SCALE)]
        time_scale: f64,
        /// Print simulation events to stderr.
        #[arg(long)]
        trace: bool,
    },
    /// Print the wire form of a telegram.
    Encode {
        meter_id: String,
        /// Normal consumption units, e.g. 14.00
        ncu: String,
        /// Extra consumption units, e.g. 01.00
        ecu: String,
    },
    /// Parse a telegram and print its fields.
    Decode { telegram: String },
    /// Talk to a simulated modem. Each line is sent with CR LF; `^Z` sends
    /// Ctrl-Z and `^[` sends Esc.
    AtRepl {
        #[arg(long, default_value = "919000000000")]
        own_number: String,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { scenario, out, trace, state_dir } => run(scenario, out, trace, state_dir),
        Command::Serve { config, listen, scenario, time_scale, trace } => {
            serve(config, listen, scenario, time_scale, trace)
        }
        Command::Encode { meter_id, ncu, ecu } => {
            let t = Telegram::new(&meter_id, &ncu, &ecu)?;
            println!("{t}");
            Ok(())
        }
        Command::Decode { telegram } => {
            let t = Telegram::decode(telegram.as_bytes())?;
            println!("meter_id: {}", t.meter_id);
            println!("ncu:      {}", t.ncu_display);
            println!("ecu:      {}", t.ecu_display);
            let total = display_hundredths(&t.ncu_display).unwrap_or(0) + display_hundredths(&t.ecu_display).unwrap_or(0);
            println!("total:    {}.{:02}", total / 100, total % 100);
            Ok(())
        }
        Command::AtRepl { own_number } => at_repl(&own_number),
    }
}

fn run(path: PathBuf, out: Option<PathBuf>, trace: Option<PathBuf>, state_dir: Option<PathBuf>) -> Result<()> {
    let spec = ScenarioSpec::load(&path)?;
    let scenario = spec.validate()?;
    let mut sim = match &state_dir {
        Some(dir) => Simulation::with_state_dir(&scenario, dir).with_context(|| format!("state dir {}", dir.display()))?,
        None => Simulation::new(&scenario),
    };
    sim.run();
    let report = sim.report();
    if let Some(trace) = trace {
        let mut log = report.events.join("\n");
        log.push('\n');
        std::fs::write(&trace, log).with_context(|| format!("writing {}", trace.display()))?;
    }
    match out {
        Some(out) => {
            std::fs::write(&out, report.to_json()).with_context(|| format!("writing {}", out.display()))?;
            for m in &report.meters {
                eprintln!(
                    "meter {}: NCU {} ECU {} ({} telegrams)",
                    m.meter_id, m.ncu_display, m.ecu_display, m.telegrams_sent
                );
            }
            let c = report.channel;
            eprintln!("channel: {} sent, {} delivered, {} dropped", c.submitted, c.delivered, c.dropped);
        }
        None => print!("{}", report.to_json()),
    }
    Ok(())
}

fn serve(
    config: Option<PathBuf>,
    listen: Option<String>,
    scenario: Option<PathBuf>,
    time_scale: f64,
    trace: bool,
) -> Result<()> {
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        bail!("--time-scale must be positive");
    }
    let mut config = ServiceConfig::load(config.as_deref())?;
    if let Some(listen) = listen {
        config.listen = listen;
    }
    let station = match &config.storage_dir {
        Some(dir) => Station::open(dir, config.tariff)?,
        None => Station::in_memory(config.tariff),
    };
    let station = station_http::shared(station);
    let mut app = station_http::router(station.clone());

    let mut live_handle = None;
    if let Some(path) = scenario {
        let scenario = ScenarioSpec::load(&path)?.validate()?;
        let sim = Simulation::with_parts(&scenario, station.clone(), |_| Ok(wem_core::NvStore::in_memory()))?;
        let (live, handle) = Live::new(sim);
        app = app.merge(live::router(handle.clone()));
        let thread = live.spawn(time_scale, move |e| {
            if trace {
                eprintln!("{e}");
            }
        });
        live_handle = Some((handle, thread));
    }

    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })?;
    if let Some((handle, thread)) = live_handle {
        handle.stop();
        let _ = thread.join();
    }
    Ok(())
}

fn escape(bytes: &[u8]) -> String {
    bytes.iter().flat_map(|&b| std::ascii::escape_default(b)).map(char::from).collect()
}

fn at_repl(own_number: &str) -> Result<()> {
    let mut modem = AtSession::new(own_number);
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    for (t, line) in stdin.lock().lines().enumerate() {
        let line = line?;
        let mut input = Vec::new();
        let mut rest = line.as_str();
        let mut terminated = false;
        while !rest.is_empty() {
            if let Some(r) = rest.strip_prefix("^Z") {
                input.push(CTRL_Z);
                terminated = true;
                rest = r;
            } else if let Some(r) = rest.strip_prefix("^[") {
                input.push(ESC);
                terminated = true;
                rest = r;
            } else {
                let c = rest.chars().next().expect("non-empty");
                let mut buf = [0; 4];
                input.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                rest = &rest[c.len_utf8()..];
            }
        }
        if !terminated {
            input.extend_from_slice(b"\r\n");
        }
        let out = modem.feed(&input, t as u64);
        writeln!(stdout, "{}", escape(&out.response))?;
        for sms in out.submitted {
            writeln!(stdout, "[sent to {}: {}]", sms.to_number, escape(&sms.body))?;
        }
        stdout.flush()?;
    }
    Ok(())
}
