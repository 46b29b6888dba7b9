//! Definition lookup without a compiler: scan the tree for
//! declaration-shaped lines.

use regex::{escape, Regex};

use super::{DefinitionQuery, RepoSnapshot, ResolvedSite, SymbolResolver};

#[derive(Debug, Default, Clone)]
pub struct LexicalResolver;

const CONTROL_WORDS: [&str; 8] = ["return", "if", "while", "for", "switch", "else", "case", "delete"];

struct Patterns {
    type_decl: Regex,
    macro_def: Regex,
    alias: Regex,
    function: Regex,
}

impl Patterns {
    fn new(term: &str) -> Self {
        let t = escape(term);
        let build = |p: String| Regex::new(&p).expect("escaped term yields a valid regex");
        Self {
            type_decl: build(format!(
                r"^\s*(?:template\s*<.*>\s*)?(?:class|struct|union|enum(?:\s+class)?)\s+(?:[A-Z_][A-Z0-9_]*\s+)*{t}\b\s*(?:final\b)?\s*(?:[:{{]|$)"
            )),
            macro_def: build(format!(r"^\s*#\s*define\s+{t}\b")),
            alias: build(format!(r"^\s*(?:typedef\b.*\b{t}\s*;|using\s+{t}\s*=)")),
            function: build(format!(
                r"^\s*(?:[A-Za-z_][\w:<>,]*[\s*&]+)+(?:[A-Za-z_]\w*::)*{t}\s*\([^;]*$"
            )),
        }
    }
}

fn is_function_definition(lines: &[String], i: usize, re: &Regex) -> bool {
    let line = &lines[i];
    if !re.is_match(line) {
        return false;
    }
    let first = line.split_whitespace().next().unwrap_or("");
    if CONTROL_WORDS.contains(&first) {
        return false;
    }
    let trimmed = line.trim_end();
    if trimmed.ends_with('{') {
        return true;
    }
    // Brace on one of the following lines, before any statement end.
    lines[i + 1..]
        .iter()
        .map(|l| l.trim())
        .filter(|l| !l.is_empty())
        .take(3)
        .find_map(|l| {
            if l.starts_with('{') || l.ends_with('{') {
                Some(true)
            } else if l.ends_with(';') {
                Some(false)
            } else {
                None
            }
        })
        .unwrap_or(false)
}

impl SymbolResolver for LexicalResolver {
    fn name(&self) -> &'static str {
        "lexical"
    }

    fn definition(
        &mut self,
        repo: &RepoSnapshot,
        query: &DefinitionQuery,
    ) -> Result<Option<ResolvedSite>, String> {
        let p = Patterns::new(&query.term);
        // (rank, path, line); lower rank wins, then path order.
        let mut best: Option<(u8, usize, u32)> = None;
        for (fi, rel) in repo.files().iter().enumerate() {
            if !is_source(rel) {
                continue;
            }
            let Ok(lines) = repo.read_lines(rel) else {
                continue;
            };
            for (i, line) in lines.iter().enumerate() {
                if !line.contains(query.term.as_str()) {
                    continue;
                }
                let rank = if p.type_decl.is_match(line) && !line.trim_end().ends_with(';') {
                    0
                } else if p.macro_def.is_match(line) {
                    1
                } else if p.alias.is_match(line) {
                    2
                } else if is_function_definition(&lines, i, &p.function) {
                    3
                } else {
                    continue;
                };
                if best.is_none_or(|(r, _, _)| rank < r) {
                    best = Some((rank, fi, i as u32 + 1));
                }
            }
        }
        Ok(best.map(|(_, fi, line)| ResolvedSite {
            path: repo.files()[fi].clone().into(),
            line,
        }))
    }
}

fn is_source(rel: &str) -> bool {
    const SUFFIXES: [&str; 9] = [".c", ".cc", ".cpp", ".cxx", ".h", ".hh", ".hpp", ".hxx", ".inl"];
    SUFFIXES.iter().any(|s| rel.ends_with(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reponav::test_repo::write;

    fn lookup(files: &[(&str, &str)], term: &str) -> Option<(String, u32)> {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), files);
        let repo = RepoSnapshot::open(dir.path(), None).unwrap();
        let q = DefinitionQuery {
            path: String::new(),
            line: 1,
            column: 0,
            term: term.into(),
        };
        LexicalResolver
            .definition(&repo, &q)
            .unwrap()
            .map(|s| (s.path.to_str().unwrap().to_string(), s.line))
    }

    #[test]
    fn class_beats_forward_declaration_and_uses() {
        let got = lookup(
            &[
                ("a.cpp", "class Pool;\nPool* p = nullptr;\n"),
                ("b/pool.h", "#pragma once\n\nclass EXPORT Pool : public Base {\n};\n"),
            ],
            "Pool",
        );
        assert_eq!(got, Some(("b/pool.h".into(), 3)));
    }

    #[test]
    fn function_definitions_with_brace_on_next_line() {
        let files = [
            ("a.cpp", "  if (drain(q)) {\n  }\nvoid run();\n"),
            ("q.cpp", "// drain all\nbool JobQueue::drain(Queue& q)\n{\n  return true;\n}\n"),
        ];
        assert_eq!(lookup(&files, "drain"), Some(("q.cpp".into(), 2)));
        assert_eq!(lookup(&files, "run"), None);
    }

    #[test]
    fn macros_and_aliases() {
        let files = [
            ("m.h", "#define MAX_JOBS 16\nusing JobId = unsigned long;\ntypedef int Handle;\n"),
        ];
        assert_eq!(lookup(&files, "MAX_JOBS"), Some(("m.h".into(), 1)));
        assert_eq!(lookup(&files, "JobId"), Some(("m.h".into(), 2)));
        assert_eq!(lookup(&files, "Handle"), Some(("m.h".into(), 3)));
    }

    #[test]
    fn non_source_files_are_ignored() {
        assert_eq!(lookup(&[("notes.txt", "struct Widget {\n")], "Widget"), None);
    }
}
