//! Controlled workload for profiler tests and demos.
//!
//! Reads one input file and, after a short ramp delay, allocates
//! `base-mb + bytes-per-input-byte × size(input)` of committed memory,
//! optionally sleeps proportionally to the input size, holds, then exits.
//!
//!     workload-stub [--bytes-per-input-byte F] [--base-mb F] [--ramp-s F]
//!                   [--hold-s F] [--sleep-s-per-mb F] [--exit-code N] <input>

use std::time::Duration;

fn main() {
    let mut bytes_per_input_byte = 0.0f64;
    let mut base_mb = 0.0f64;
    let mut ramp_s = 0.3f64;
    let mut hold_s = 1.0f64;
    let mut sleep_s_per_mb = 0.0f64;
    let mut exit_code = 0i32;
    let mut input: Option<String> = None;

    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let mut value = |name: &str| {
            args.next().unwrap_or_else(|| die(&format!("{name} needs a value")))
        };
        match arg.as_str() {
            "--bytes-per-input-byte" => {
                bytes_per_input_byte = parse(&value("--bytes-per-input-byte"))
            }
            "--base-mb" => base_mb = parse(&value("--base-mb")),
            "--ramp-s" => ramp_s = parse(&value("--ramp-s")),
            "--hold-s" => hold_s = parse(&value("--hold-s")),
            "--sleep-s-per-mb" => sleep_s_per_mb = parse(&value("--sleep-s-per-mb")),
            "--exit-code" => exit_code = parse(&value("--exit-code")) as i32,
            other if !other.starts_with("--") && input.is_none() => {
                input = Some(other.to_string())
            }
            other => die(&format!("unexpected argument {other}")),
        }
    }
    let input = input.unwrap_or_else(|| die("missing input path"));
    let input_bytes = match std::fs::metadata(&input) {
        Ok(meta) => meta.len(),
        Err(e) => die(&format!("cannot stat {input}: {e}")),
    };

    // Let the monitor observe the pre-allocation floor.
    std::thread::sleep(Duration::from_secs_f64(ramp_s));

    let footprint =
        (base_mb * 1024.0 * 1024.0 + bytes_per_input_byte * input_bytes as f64) as usize;
    // Nonzero fill forces the pages resident.
    let buffer = vec![1u8; footprint];

    let proportional = sleep_s_per_mb * input_bytes as f64 / (1024.0 * 1024.0);
    std::thread::sleep(Duration::from_secs_f64(hold_s + proportional));

    // Touch the buffer again so the allocation cannot be optimized away.
    let checksum: u64 = buffer.iter().step_by(4096).map(|&b| b as u64).sum();
    if checksum == u64::MAX {
        println!("unreachable checksum");
    }
    std::process::exit(exit_code);
}

fn parse(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| die(&format!("not a number: {s}")))
}

fn die(message: &str) -> ! {
    eprintln!("workload-stub: {message}");
    std::process::exit(64);
}
