//! Stand-in backend speaking the detector and upscaler line protocols, for
//! exercising `exec:` and `tcp:` backends without a real model.
//!
//! `detect` answers every request with the detections from `--canned` (or
//! none), honoring the request's score floor and cap. `sr` upscales by
//! pixel replication. `fail` answers every request with an error.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, ValueEnum};
use srdet::detector::{decode_request, encode_error_response, encode_response, Detection};
use srdet::superres::{decode_sr_request, encode_sr_error_response, encode_sr_response, upscale, UpscaleMethod};

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Detect,
    Sr,
    Fail,
}

#[derive(Parser)]
#[command(name = "srdet-mock")]
struct Args {
    #[arg(value_enum)]
    mode: Mode,
    /// JSON list of detections returned for every detect request.
    #[arg(long)]
    canned: Option<PathBuf>,
    /// Serve TCP on this address instead of standard input/output.
    #[arg(long)]
    listen: Option<String>,
}

fn answer(mode: Mode, canned: &[Detection], line: &str) -> String {
    match mode {
        Mode::Detect => match decode_request(line) {
            Ok(req) => {
                let mut dets: Vec<Detection> = canned
                    .iter()
                    .filter(|d| d.score >= req.config.min_score)
                    .copied()
                    .collect();
                dets.truncate(req.config.max_detections);
                encode_response(req.request_id, &dets)
            }
            Err((id, e)) => encode_error_response(id.unwrap_or(0), &e.to_string()),
        },
        Mode::Sr => match decode_sr_request(line) {
            Ok(req) => match upscale(&req.image, req.zoom, &UpscaleMethod::Nearest) {
                Ok(img) => encode_sr_response(req.request_id, &img)
                    .unwrap_or_else(|e| encode_sr_error_response(req.request_id, &e.to_string())),
                Err(e) => encode_sr_error_response(req.request_id, &e.to_string()),
            },
            Err((id, e)) => encode_sr_error_response(id.unwrap_or(0), &e.to_string()),
        },
        Mode::Fail => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("request_id").and_then(|i| i.as_u64()))
                .unwrap_or(0);
            encode_error_response(id, "mock failure")
        }
    }
}

fn serve(mode: Mode, canned: &[Detection], input: impl BufRead, mut output: impl Write) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(output, "{}", answer(mode, canned, &line))?;
        output.flush()?;
    }
    Ok(())
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let canned: Vec<Detection> = match &args.canned {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => Vec::new(),
    };
    let canned = Arc::new(canned);
    match &args.listen {
        None => serve(args.mode, &canned, io::stdin().lock(), io::stdout().lock()),
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            println!("{}", listener.local_addr()?);
            io::stdout().flush()?;
            for stream in listener.incoming() {
                let stream = stream?;
                let canned = Arc::clone(&canned);
                let mode = args.mode;
                std::thread::spawn(move || {
                    let reader = BufReader::new(stream.try_clone()?);
                    serve(mode, &canned, reader, stream)
                });
            }
            Ok(())
        }
    }
}
