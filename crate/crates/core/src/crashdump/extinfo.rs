use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DumpError;

/// Faulting addresses below this value are treated as null plus a small
/// member offset.
pub const NPE_THRESHOLD: u64 = 0x1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashExtInfo {
    pub signal_name: String,
    pub signal_number: Option<i64>,
    pub signal_code: Option<i64>,
    pub faulting_address: Option<u64>,
    /// Remaining `key: value` lines in file order.
    pub host_metadata: Vec<(String, String)>,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CrashType {
    SigAbrt,
    SigSegvNpe,
    SigSegvNonNpe,
    SigBus,
    SigFpe,
    Other,
}

impl CrashType {
    pub const ALL: [CrashType; 6] = [
        CrashType::SigAbrt,
        CrashType::SigSegvNpe,
        CrashType::SigSegvNonNpe,
        CrashType::SigBus,
        CrashType::SigFpe,
        CrashType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CrashType::SigAbrt => "SigAbrt",
            CrashType::SigSegvNpe => "SigSegvNpe",
            CrashType::SigSegvNonNpe => "SigSegvNonNpe",
            CrashType::SigBus => "SigBus",
            CrashType::SigFpe => "SigFpe",
            CrashType::Other => "Other",
        }
    }

    pub fn signal_name(self) -> &'static str {
        match self {
            CrashType::SigAbrt => "SIGABRT",
            CrashType::SigSegvNpe | CrashType::SigSegvNonNpe => "SIGSEGV",
            CrashType::SigBus => "SIGBUS",
            CrashType::SigFpe => "SIGFPE",
            CrashType::Other => "SIGILL",
        }
    }
}

impl fmt::Display for CrashType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CrashType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CrashType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown crash type '{s}'"))
    }
}

fn signal_name_for(number: i64) -> Option<&'static str> {
    Some(match number {
        4 => "SIGILL",
        6 => "SIGABRT",
        7 => "SIGBUS",
        8 => "SIGFPE",
        11 => "SIGSEGV",
        _ => return None,
    })
}

fn sig_token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(SIG[A-Z0-9]+)\b").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+").unwrap())
}

fn key_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Za-z][A-Za-z0-9_ ./()\-]*$").unwrap())
}

/// Banner lines such as `--> Dump of siginfo contents <--` or `=====`.
fn is_decoration(line: &str) -> bool {
    let t = line.trim();
    (t.starts_with("-->") && t.ends_with("<--"))
        || (t.len() >= 3 && t.chars().all(|c| matches!(c, '-' | '=' | '*' | '#' | '+')))
}

fn parse_int(value: &str) -> Option<i64> {
    number_re().find(value).and_then(|m| m.as_str().parse().ok())
}

fn parse_address(value: &str) -> Option<u64> {
    let token = value.split_whitespace().next()?;
    let token = token.trim_end_matches([',', ';']);
    match token.strip_prefix("0x").or_else(|| token.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok(),
        None => token.parse().ok(),
    }
}

pub fn parse_crash_extinfo(body: &str) -> Result<CrashExtInfo, DumpError> {
    let mut signal_name: Option<String> = None;
    let mut signal_number = None;
    let mut signal_code = None;
    let mut faulting_address = None;
    let mut host_metadata = Vec::new();

    for line in body.lines() {
        if is_decoration(line) {
            continue;
        }
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if !key_re().is_match(key) {
            continue;
        }
        let norm = key.to_ascii_lowercase().replace([' ', '-'], "_");
        match norm.as_str() {
            "signal" | "signal_name" | "si_signo" | "signo" | "signal_number" => {
                if let Some(m) = sig_token_re().captures(value) {
                    signal_name.get_or_insert_with(|| m[1].to_string());
                }
                // "SIGSEGV (11)" or a bare number
                let rest = sig_token_re().replace(value, "");
                if let Some(n) = parse_int(&rest) {
                    signal_number.get_or_insert(n);
                    if signal_name.is_none() {
                        signal_name = signal_name_for(n).map(str::to_string);
                    }
                }
            }
            "code" | "signal_code" | "si_code" => signal_code = parse_int(value),
            "address" | "faulting_address" | "fault_address" | "si_addr" | "addr" => {
                faulting_address = parse_address(value)
            }
            _ => host_metadata.push((key.to_string(), value.to_string())),
        }
    }

    Ok(CrashExtInfo {
        signal_name: signal_name.ok_or(DumpError::MissingSignal)?,
        signal_number,
        signal_code,
        faulting_address,
        host_metadata,
        raw_text: body.to_string(),
    })
}

/// Flat `key: value` rendering: signal fields first, then host metadata in
/// file order. Decorative banners never survive.
pub fn sanitize_crash_extinfo(info: &CrashExtInfo) -> String {
    let mut lines = vec![format!("signal_name: {}", info.signal_name)];
    if let Some(n) = info.signal_number {
        lines.push(format!("signal_number: {n}"));
    }
    if let Some(c) = info.signal_code {
        lines.push(format!("signal_code: {c}"));
    }
    if let Some(a) = info.faulting_address {
        lines.push(format!("faulting_address: {a:#x}"));
    }
    lines.extend(info.host_metadata.iter().map(|(k, v)| format!("{k}: {v}")));
    lines.join("\n")
}

pub fn classify_crash_type(info: &CrashExtInfo) -> CrashType {
    classify_signal(&info.signal_name, info.faulting_address)
}

pub(crate) fn classify_signal(signal_name: &str, faulting_address: Option<u64>) -> CrashType {
    match signal_name {
        "SIGSEGV" => match faulting_address {
            Some(addr) if addr < NPE_THRESHOLD => CrashType::SigSegvNpe,
            _ => CrashType::SigSegvNonNpe,
        },
        "SIGABRT" => CrashType::SigAbrt,
        "SIGBUS" => CrashType::SigBus,
        "SIGFPE" => CrashType::SigFpe,
        _ => CrashType::Other,
    }
}
