//! Minimal Language Server Protocol client: enough of the lifecycle to ask
//! a C/C++ server (clangd or similar) for definitions.
//!
//! Messages are JSON-RPC 2.0 framed with `Content-Length` headers. Requests
//! on one session are strictly serialized.

use std::collections::HashSet;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use thiserror::Error;
use url::Url;

use super::{DefinitionQuery, RepoSnapshot, ResolvedSite, SymbolResolver};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LspConfig {
    pub command: String,
    pub args: Vec<String>,
    /// Per-request deadline.
    pub timeout: Duration,
}

#[derive(Debug, Error)]
pub enum LspError {
    #[error("language server i/o: {0}")]
    Io(#[from] io::Error),
    #[error("language server did not answer {method} within {timeout:?}")]
    Timeout { method: String, timeout: Duration },
    #[error("language server closed the connection")]
    Closed,
    #[error("language server error {code}: {message}")]
    Server { code: i64, message: String },
    #[error("bad language server message: {0}")]
    Protocol(String),
}

pub fn write_message(w: &mut impl Write, msg: &Value) -> io::Result<()> {
    let body = serde_json::to_vec(msg)?;
    write!(w, "Content-Length: {}\r\n\r\n", body.len())?;
    w.write_all(&body)?;
    w.flush()
}

/// Read one framed message; `Ok(None)` at a clean end of stream.
pub fn read_message(r: &mut impl BufRead) -> io::Result<Option<Value>> {
    let mut length: Option<usize> = None;
    let mut saw_header = false;
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return if saw_header {
                Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated header"))
            } else {
                Ok(None)
            };
        }
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            if saw_header {
                break;
            }
            continue;
        }
        saw_header = true;
        if let Some((name, value)) = line.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().ok();
            }
        }
    }
    let length = length
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing Content-Length"))?;
    let mut body = vec![0; length];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

pub struct LspClient {
    writer: Box<dyn Write + Send>,
    incoming: Receiver<io::Result<Value>>,
    child: Option<Child>,
    next_id: i64,
    timeout: Duration,
    shut_down: bool,
}

impl LspClient {
    /// Talk to a server over arbitrary streams. A background thread decodes
    /// incoming frames so requests can time out.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        timeout: Duration,
    ) -> Self {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            loop {
                match read_message(&mut reader) {
                    Ok(Some(msg)) => {
                        if tx.send(Ok(msg)).is_err() {
                            break;
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });
        Self {
            writer: Box::new(writer),
            incoming: rx,
            child: None,
            next_id: 1,
            timeout,
            shut_down: false,
        }
    }

    pub fn spawn(config: &LspConfig, cwd: &Path) -> Result<Self, LspError> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .current_dir(cwd)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdin = child.stdin.take().ok_or(LspError::Closed)?;
        let stdout = child.stdout.take().ok_or(LspError::Closed)?;
        let mut client = Self::from_streams(stdout, stdin, config.timeout);
        client.child = Some(child);
        Ok(client)
    }

    pub fn notify(&mut self, method: &str, params: Value) -> Result<(), LspError> {
        write_message(
            &mut self.writer,
            &json!({"jsonrpc": "2.0", "method": method, "params": params}),
        )?;
        Ok(())
    }

    pub fn request(&mut self, method: &str, params: Value) -> Result<Value, LspError> {
        let id = self.next_id;
        self.next_id += 1;
        write_message(
            &mut self.writer,
            &json!({"jsonrpc": "2.0", "id": id, "method": method, "params": params}),
        )?;

        let deadline = Instant::now() + self.timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let msg = match self.incoming.recv_timeout(remaining) {
                Ok(msg) => msg?,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(LspError::Timeout {
                        method: method.to_string(),
                        timeout: self.timeout,
                    })
                }
                Err(RecvTimeoutError::Disconnected) => return Err(LspError::Closed),
            };
            let has_method = msg.get("method").is_some();
            match msg.get("id") {
                // Server-to-client request (progress tokens, configuration):
                // acknowledge with an empty result.
                Some(server_id) if has_method => {
                    let reply = json!({"jsonrpc": "2.0", "id": server_id, "result": null});
                    write_message(&mut self.writer, &reply)?;
                }
                Some(reply_id) if reply_id.as_i64() == Some(id) => {
                    if let Some(err) = msg.get("error") {
                        return Err(LspError::Server {
                            code: err.get("code").and_then(Value::as_i64).unwrap_or(0),
                            message: err
                                .get("message")
                                .and_then(Value::as_str)
                                .unwrap_or_default()
                                .to_string(),
                        });
                    }
                    return Ok(msg.get("result").cloned().unwrap_or(Value::Null));
                }
                // Notifications and stale replies.
                _ => {}
            }
        }
    }

    pub fn initialize(&mut self, root: &Path) -> Result<Value, LspError> {
        let root_uri = file_uri(root)?;
        let result = self.request(
            "initialize",
            json!({
                "processId": std::process::id(),
                "rootUri": root_uri,
                "capabilities": {
                    "textDocument": {"definition": {"linkSupport": true}}
                },
                "workspaceFolders": [{"uri": root_uri, "name": "repo"}],
            }),
        )?;
        self.notify("initialized", json!({}))?;
        Ok(result)
    }

    pub fn did_open(&mut self, path: &Path, text: &str) -> Result<(), LspError> {
        let language = match path.extension().and_then(|e| e.to_str()) {
            Some("c") => "c",
            _ => "cpp",
        };
        self.notify(
            "textDocument/didOpen",
            json!({"textDocument": {
                "uri": file_uri(path)?,
                "languageId": language,
                "version": 1,
                "text": text,
            }}),
        )
    }

    /// Definition sites for a 0-based position; paths are absolute.
    pub fn definition(
        &mut self,
        path: &Path,
        line0: u32,
        character: u32,
    ) -> Result<Vec<ResolvedSite>, LspError> {
        let result = self.request(
            "textDocument/definition",
            json!({
                "textDocument": {"uri": file_uri(path)?},
                "position": {"line": line0, "character": character},
            }),
        )?;
        parse_locations(&result)
    }

    pub fn shutdown(&mut self) -> Result<(), LspError> {
        if self.shut_down {
            return Ok(());
        }
        self.shut_down = true;
        self.request("shutdown", Value::Null)?;
        self.notify("exit", Value::Null)
    }
}

impl Drop for LspClient {
    fn drop(&mut self) {
        if let Err(e) = self.shutdown() {
            log::debug!("language server shutdown: {e}");
        }
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

fn file_uri(path: &Path) -> Result<String, LspError> {
    Url::from_file_path(path)
        .map(String::from)
        .map_err(|_| LspError::Protocol(format!("cannot build a URI for {}", path.display())))
}

/// Accepts `Location`, `Location[]`, `LocationLink[]` or null.
fn parse_locations(result: &Value) -> Result<Vec<ResolvedSite>, LspError> {
    let items: Vec<&Value> = match result {
        Value::Null => return Ok(Vec::new()),
        Value::Array(list) => list.iter().collect(),
        single @ Value::Object(_) => vec![single],
        other => return Err(LspError::Protocol(format!("unexpected definition result {other}"))),
    };
    items
        .into_iter()
        .map(|item| {
            let uri = item
                .get("uri")
                .or_else(|| item.get("targetUri"))
                .and_then(Value::as_str)
                .ok_or_else(|| LspError::Protocol("location without uri".into()))?;
            let range = item
                .get("range")
                .or_else(|| item.get("targetSelectionRange"))
                .or_else(|| item.get("targetRange"))
                .ok_or_else(|| LspError::Protocol("location without range".into()))?;
            let line0 = range
                .pointer("/start/line")
                .and_then(Value::as_u64)
                .ok_or_else(|| LspError::Protocol("range without start line".into()))?;
            let path = Url::parse(uri)
                .ok()
                .and_then(|u| u.to_file_path().ok())
                .ok_or_else(|| LspError::Protocol(format!("not a file uri: {uri}")))?;
            Ok(ResolvedSite {
                path,
                line: line0 as u32 + 1,
            })
        })
        .collect()
}

/// Definition lookup through a language server session.
pub struct LspResolver {
    client: LspClient,
    opened: HashSet<PathBuf>,
}

impl LspResolver {
    pub fn spawn(config: &LspConfig, repo: &RepoSnapshot) -> Result<Self, LspError> {
        let client = LspClient::spawn(config, repo.root())?;
        Self::with_client(client, repo)
    }

    pub fn with_client(mut client: LspClient, repo: &RepoSnapshot) -> Result<Self, LspError> {
        client.initialize(repo.root())?;
        Ok(Self {
            client,
            opened: HashSet::new(),
        })
    }
}

impl SymbolResolver for LspResolver {
    fn name(&self) -> &'static str {
        "language server"
    }

    fn definition(
        &mut self,
        repo: &RepoSnapshot,
        query: &DefinitionQuery,
    ) -> Result<Option<ResolvedSite>, String> {
        let path = repo.absolute(&query.path);
        if !self.opened.contains(&path) {
            let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
            self.client.did_open(&path, &text).map_err(|e| e.to_string())?;
            self.opened.insert(path.clone());
        }
        let sites = self
            .client
            .definition(&path, query.line - 1, query.column)
            .map_err(|e| e.to_string())?;
        Ok(sites.into_iter().next())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::reponav::test_repo::write;
    use crate::reponav::{get_term_definition, NavErrorKind, TermOptions};
    use std::collections::HashMap;

    #[test]
    fn framing_round_trip_and_eof() {
        let mut buf = Vec::new();
        let msg = json!({"jsonrpc": "2.0", "id": 1, "result": {"é": [1, 2]}});
        write_message(&mut buf, &msg).unwrap();
        write_message(&mut buf, &json!(null)).unwrap();
        let header = String::from_utf8_lossy(&buf[..20]).to_string();
        assert!(header.starts_with("Content-Length: "));
        let mut r = BufReader::new(&buf[..]);
        assert_eq!(read_message(&mut r).unwrap(), Some(msg));
        assert_eq!(read_message(&mut r).unwrap(), Some(Value::Null));
        assert_eq!(read_message(&mut r).unwrap(), None);
    }

    #[test]
    fn missing_content_length_is_rejected() {
        let mut r = BufReader::new(&b"X-Other: 3\r\n\r\n{}"[..]);
        assert!(read_message(&mut r).is_err());
    }

    #[test]
    fn location_shapes() {
        let loc = json!({"uri": "file:///r/a.h", "range": {"start": {"line": 4, "character": 0}}});
        let link = json!([{"targetUri": "file:///r/b.h", "targetRange": {"start": {"line": 0}},
                           "targetSelectionRange": {"start": {"line": 9}}}]);
        assert_eq!(parse_locations(&loc).unwrap()[0].line, 5);
        let l = &parse_locations(&link).unwrap()[0];
        assert_eq!((l.path.as_path(), l.line), (Path::new("/r/b.h"), 10));
        assert!(parse_locations(&Value::Null).unwrap().is_empty());
        assert!(parse_locations(&json!(3)).is_err());
    }

    fn repo() -> (tempfile::TempDir, RepoSnapshot) {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            &[
                ("src/a.cpp", "#include \"widget.h\"\nvoid f() {\n  Widget w;\n}\n"),
                ("include/widget.h", "#pragma once\nstruct Widget {\n};\n"),
            ],
        );
        let repo = RepoSnapshot::open(dir.path(), None).unwrap();
        (dir, repo)
    }

    #[test]
    fn resolves_through_fake_server_and_agrees_with_lexical() {
        let (_d, repo) = repo();
        let table = HashMap::from([("Widget".to_string(), ("include/widget.h".to_string(), 2))]);
        let (r, w) = fake::serve(repo.root().to_path_buf(), table, false);
        let client = LspClient::from_streams(r, w, Duration::from_secs(5));
        let mut lsp = LspResolver::with_client(client, &repo).unwrap();
        let opts = TermOptions::default();
        let via_lsp = get_term_definition(&repo, &mut lsp, "src/a.cpp", 3, "Widget", opts).unwrap();
        let mut lex = crate::reponav::LexicalResolver;
        let via_lex = get_term_definition(&repo, &mut lex, "src/a.cpp", 3, "Widget", opts).unwrap();
        assert_eq!(via_lsp, via_lex);
        assert_eq!((via_lsp.path.as_str(), via_lsp.line), ("include/widget.h", 2));

        let e = get_term_definition(&repo, &mut lsp, "src/a.cpp", 3, "w", opts).unwrap_err();
        assert_eq!(e.kind, NavErrorKind::NavigationFailed);
    }

    #[test]
    fn silent_server_times_out_as_navigation_failure() {
        let (_d, repo) = repo();
        let (r, w) = fake::serve(repo.root().to_path_buf(), HashMap::new(), true);
        let client = LspClient::from_streams(r, w, Duration::from_millis(200));
        let mut lsp = LspResolver::with_client(client, &repo).unwrap();
        let e = get_term_definition(&repo, &mut lsp, "src/a.cpp", 3, "Widget", TermOptions::default())
            .unwrap_err();
        assert_eq!(e.kind, NavErrorKind::NavigationFailed);
        assert!(e.detail.contains("within"), "{}", e.detail);
    }

    #[test]
    fn missing_server_binary_falls_back_to_lexical() {
        let (_d, repo) = repo();
        let cfg = crate::reponav::ResolverConfig::lsp("/nonexistent/clangd-xyz", vec![]);
        let resolver = cfg.build(&repo);
        assert_eq!(resolver.name(), "lexical");
    }
}
