//! Small output helpers shared by the report writers and the CLI: a stable
//! config hash and CSV assembly.

/// FNV-1a over the canonical (serde_json) serialization of a config.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Hex config hash of a serializable config.
pub fn config_hash<T: serde::Serialize>(config: &T) -> String {
    let s = serde_json::to_string(config).expect("config serializes");
    format!("{:016x}", fnv1a64(s.as_bytes()))
}

/// Assemble a CSV body: a `# config_hash=...` comment line, a header, and
/// rows of `Display`-formatted fields. All output files embed the hash.
pub fn csv_body(hash: &str, header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={hash}\n"));
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
