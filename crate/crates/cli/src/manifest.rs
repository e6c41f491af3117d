//! Run manifest emitted alongside every output: the resolved parameters,
//! input digests, and tool version needed to reproduce a run bit-for-bit.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: &'static str,
    pub subcommand: String,
    /// Every parameter after defaults were applied.
    pub parameters: serde_json::Value,
    /// FNV-1a 64-bit digest per input file.
    pub input_digests: BTreeMap<String, String>,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        parameters: impl Serialize,
        inputs: &[&Path],
        seed: u64,
    ) -> std::io::Result<Self> {
        let mut input_digests = BTreeMap::new();
        for path in inputs {
            input_digests.insert(path.display().to_string(), fnv1a64_file(path)?);
        }
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            parameters: serde_json::to_value(parameters).expect("parameters serialize"),
            input_digests,
            seed,
        })
    }

    /// Serialization is field-ordered and map keys are sorted, so equal
    /// manifests are byte-equal.
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        std::fs::write(path, json)
    }
}

/// FNV-1a 64-bit over the file contents, hex encoded.
pub fn fnv1a64_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hash: u64 = 0xcbf29ce484222325;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        for &b in &buf[..n] {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
    }
    Ok(format!("{hash:016x}"))
}
