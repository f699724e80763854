//! Standalone stub server for dry-running the live measurement path.
//!
//! Usage: slo-tuner-stub [--port N] [--latency-ms N] [--stall-every N] [--model NAME]

use std::net::TcpListener;
use std::process::exit;
use std::sync::atomic::{AtomicBool, AtomicU64};
use std::sync::Arc;
use std::time::Duration;

use slo_tuner_core::backend::stub::{serve, StubOptions};

fn main() {
    let mut port: u16 = 8000;
    let mut opts = StubOptions::default();

    let mut args = std::env::args().skip(1);
    while let Some(flag) = args.next() {
        let mut value = |name: &str| {
            args.next().unwrap_or_else(|| {
                eprintln!("missing value for {name}");
                exit(2);
            })
        };
        match flag.as_str() {
            "--port" => port = parse(&value("--port")),
            "--latency-ms" => opts.latency = Duration::from_millis(parse(&value("--latency-ms"))),
            "--stall-every" => opts.stall_every = Some(parse(&value("--stall-every"))),
            "--model" => opts.model = value("--model"),
            "--help" | "-h" => {
                println!(
                    "slo-tuner-stub [--port N] [--latency-ms N] [--stall-every N] [--model NAME]"
                );
                return;
            }
            other => {
                eprintln!("unknown flag {other}");
                exit(2);
            }
        }
    }

    let listener = match TcpListener::bind(("127.0.0.1", port)) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("bind 127.0.0.1:{port}: {e}");
            exit(1);
        }
    };
    eprintln!(
        "stub server on 127.0.0.1:{port} (latency {:?}, stall_every {:?})",
        opts.latency, opts.stall_every
    );
    serve(
        listener,
        opts,
        Arc::new(AtomicBool::new(false)),
        Arc::new(AtomicU64::new(0)),
    );
}

fn parse<T: std::str::FromStr>(s: &str) -> T {
    s.parse().unwrap_or_else(|_| {
        eprintln!("invalid numeric value: {s}");
        exit(2)
    })
}
