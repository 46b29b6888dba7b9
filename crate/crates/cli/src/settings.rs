//! Layered run settings: flags > environment > config file > defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_CONFIG: &str = "CRASHFL_CONFIG";

/// Environment variable for each settings field.
pub const ENV_VARS: [(&str, &str); 9] = [
    ("runs", "CRASHFL_RUNS"),
    ("max_tool_interactions", "CRASHFL_MAX_TOOLS"),
    ("jobs", "CRASHFL_JOBS"),
    ("endpoint", "CRASHFL_ENDPOINT"),
    ("model", "CRASHFL_MODEL"),
    ("temperature", "CRASHFL_TEMPERATURE"),
    ("max_response_tokens", "CRASHFL_MAX_TOKENS"),
    ("sanitize", "CRASHFL_SANITIZE"),
    ("lsp_command", "CRASHFL_LSP_COMMAND"),
];

/// One layer. Unset fields fall through to the next layer down. The API
/// key is deliberately absent: it is read from `CRASHFL_API_KEY` only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub runs: Option<usize>,
    pub max_tool_interactions: Option<usize>,
    pub jobs: Option<usize>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_response_tokens: Option<u32>,
    pub sanitize: Option<bool>,
    pub deep_search: Option<bool>,
    pub lsp_command: Option<String>,
}

fn parse_value<T: std::str::FromStr>(var: &str, raw: &str) -> Result<T, CliError> {
    raw.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{var}: cannot parse '{raw}'")))
}

fn parse_bool(var: &str, raw: &str) -> Result<bool, CliError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        _ => Err(CliError::Usage(format!(
            "{var}: expected a boolean, got '{raw}'"
        ))),
    }
}

impl Settings {
    /// Values of `self`, with gaps filled from `lower`.
    pub fn over(self, lower: Settings) -> Settings {
        Settings {
            runs: self.runs.or(lower.runs),
            max_tool_interactions: self.max_tool_interactions.or(lower.max_tool_interactions),
            jobs: self.jobs.or(lower.jobs),
            endpoint: self.endpoint.or(lower.endpoint),
            model: self.model.or(lower.model),
            temperature: self.temperature.or(lower.temperature),
            max_response_tokens: self.max_response_tokens.or(lower.max_response_tokens),
            sanitize: self.sanitize.or(lower.sanitize),
            deep_search: self.deep_search.or(lower.deep_search),
            lsp_command: self.lsp_command.or(lower.lsp_command),
        }
    }

    pub fn from_env(env: &dyn Fn(&str) -> Option<String>) -> Result<Settings, CliError> {
        let get = |field: &str| {
            let var = ENV_VARS
                .iter()
                .find(|(f, _)| *f == field)
                .expect("known field")
                .1;
            env(var).map(|v| (var, v))
        };
        let mut s = Settings::default();
        if let Some((var, v)) = get("runs") {
            s.runs = Some(parse_value(var, &v)?);
        }
        if let Some((var, v)) = get("max_tool_interactions") {
            s.max_tool_interactions = Some(parse_value(var, &v)?);
        }
        if let Some((var, v)) = get("jobs") {
            s.jobs = Some(parse_value(var, &v)?);
        }
        s.endpoint = get("endpoint").map(|(_, v)| v);
        s.model = get("model").map(|(_, v)| v);
        if let Some((var, v)) = get("temperature") {
            s.temperature = Some(parse_value(var, &v)?);
        }
        if let Some((var, v)) = get("max_response_tokens") {
            s.max_response_tokens = Some(parse_value(var, &v)?);
        }
        if let Some((var, v)) = get("sanitize") {
            s.sanitize = Some(parse_bool(var, &v)?);
        }
        s.lsp_command = get("lsp_command").map(|(_, v)| v);
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Settings, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Merges every layer. The config file comes from `--config`, else
    /// from `CRASHFL_CONFIG`.
    pub fn layered(
        flags: Settings,
        config_flag: Option<&Path>,
        env: &dyn Fn(&str) -> Option<String>,
    ) -> Result<Settings, CliError> {
        let env_layer = Settings::from_env(env)?;
        let config_path = config_flag
            .map(Path::to_path_buf)
            .or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let file_layer = match config_path {
            Some(p) => Settings::from_file(&p)?,
            None => Settings::default(),
        };
        Ok(flags.over(env_layer).over(file_layer))
    }
}
