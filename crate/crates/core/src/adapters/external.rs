use std::env;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{LazyLock, Mutex};

use regex::Regex;

use super::{count_lines, AdapterError, CompileOutcome, Compiler, Diagnostic};

static DIAGNOSTIC_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?P<file>[^:\n]+):(?P<line>\d+):(?P<col>\d+): (?P<sev>error|warning): (?P<msg>.*)$")
        .expect("diagnostic regex")
});

pub const E_EXTERNAL: &str = "E_EXTERNAL";
pub const W_EXTERNAL: &str = "W_EXTERNAL";
pub const E_TOOLCHAIN: &str = "E_TOOLCHAIN";

/// Runs a real toolchain as a subprocess.
///
/// The source is written to a temp file `<dir>/main.<extension>` and the
/// command is invoked as `program args... <file>`. Diagnostics are parsed
/// from stdout and stderr lines shaped like
/// `<file>:<line>:<col>: error|warning: <message>`. A nonzero exit without
/// any parsed error becomes a single `E_TOOLCHAIN` diagnostic.
#[derive(Debug)]
pub struct ExternalCompiler {
    program: String,
    args: Vec<String>,
    extension: String,
    /// One subprocess at a time per adapter handle.
    gate: Mutex<()>,
}

impl ExternalCompiler {
    pub fn new(program: impl Into<String>, args: Vec<String>, extension: impl Into<String>) -> Self {
        ExternalCompiler {
            program: program.into(),
            args,
            extension: extension.into(),
            gate: Mutex::new(()),
        }
    }

    /// Parses a command line like `swiftc -typecheck` (whitespace split).
    pub fn from_command_line(command: &str, extension: &str) -> Result<Self, AdapterError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| AdapterError::Config("empty external compiler command".into()))?;
        Ok(Self::new(program, parts.collect(), extension))
    }

    /// Fails with a configuration error when the binary cannot be found.
    pub fn check_available(&self) -> Result<PathBuf, AdapterError> {
        resolve_program(&self.program).ok_or_else(|| {
            AdapterError::Config(format!("external compiler `{}` not found", self.program))
        })
    }
}

fn resolve_program(program: &str) -> Option<PathBuf> {
    let direct = Path::new(program);
    if program.contains(std::path::MAIN_SEPARATOR) {
        return direct.is_file().then(|| direct.to_path_buf());
    }
    env::split_paths(&env::var_os("PATH")?)
        .map(|dir| dir.join(program))
        .find(|p| p.is_file())
}

/// Extracts diagnostics from toolchain output.
pub fn parse_diagnostics(output: &str) -> Vec<Diagnostic> {
    output
        .lines()
        .filter_map(|line| DIAGNOSTIC_LINE.captures(line.trim_end()))
        .map(|caps| {
            let line: usize = caps["line"].parse().unwrap_or(1).max(1);
            let col: usize = caps["col"].parse().unwrap_or(1).max(1);
            let message = caps["msg"].to_string();
            if &caps["sev"] == "error" {
                Diagnostic::error(line, Some(col), E_EXTERNAL, message)
            } else {
                Diagnostic::warning(line, Some(col), W_EXTERNAL, message)
            }
        })
        .collect()
}

impl Compiler for ExternalCompiler {
    fn compile(&self, source: &str) -> Result<CompileOutcome, AdapterError> {
        let program = self.check_available()?;
        let _gate = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        let dir = tempfile::tempdir()?;
        let file = dir.path().join(format!("main.{}", self.extension));
        std::fs::File::create(&file)?.write_all(source.as_bytes())?;
        let output = Command::new(program).args(&self.args).arg(&file).output()?;
        let text = format!(
            "{}\n{}",
            String::from_utf8_lossy(&output.stdout),
            String::from_utf8_lossy(&output.stderr)
        );
        let total_lines = count_lines(source);
        let mut diagnostics = parse_diagnostics(&text);
        if !output.status.success() && !diagnostics.iter().any(Diagnostic::is_error) {
            let detail = text.trim().lines().last().unwrap_or("no output").to_string();
            diagnostics.push(Diagnostic::error(
                1,
                None,
                E_TOOLCHAIN,
                format!("toolchain exited with {} and no diagnostics: {detail}", output.status),
            ));
        }
        Ok(CompileOutcome::new(diagnostics, total_lines))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::os::unix::fs::PermissionsExt;

    fn script(dir: &Path, body: &str) -> String {
        let path = dir.join("fakec.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path.to_string_lossy().into_owned()
    }

    #[test]
    fn parses_swift_style_lines() {
        let out = "main.swift:3:7: error: cannot find 'Foo' in scope\n\
                   main.swift:5:1: warning: unused variable\n\
                   note: unrelated\n";
        let d = parse_diagnostics(out);
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].line, d[0].column, d[0].is_error()), (3, Some(7), true));
        assert_eq!(d[0].message, "cannot find 'Foo' in scope");
        assert!(!d[1].is_error());
    }

    #[test]
    fn subprocess_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let prog = script(dir.path(), "echo \"$1:2:4: error: expected '}'\" >&2; exit 1");
        let c = ExternalCompiler::new(prog, vec![], "swift");
        let o = c.compile("line one\nline two\n").unwrap();
        assert!(!o.success);
        assert_eq!(o.total_lines, 2);
        assert_eq!(o.diagnostics[0].line, 2);
    }

    #[test]
    fn warnings_only_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let prog = script(dir.path(), "echo \"$1:1:1: warning: deprecated\"; exit 0");
        let o = ExternalCompiler::new(prog, vec![], "swift").compile("x").unwrap();
        assert!(o.success);
        assert_eq!(o.diagnostics.len(), 1);
    }

    #[test]
    fn nonzero_exit_without_errors_is_toolchain_error() {
        let dir = tempfile::tempdir().unwrap();
        let prog = script(dir.path(), "echo 'segfault' >&2; exit 3");
        let o = ExternalCompiler::new(prog, vec![], "swift").compile("x").unwrap();
        assert!(!o.success);
        assert_eq!(o.diagnostics[0].code, E_TOOLCHAIN);
    }

    #[test]
    fn missing_binary_is_configuration_error() {
        let c = ExternalCompiler::from_command_line("definitely-not-a-compiler-xyz -typecheck", "swift")
            .unwrap();
        assert!(matches!(c.compile("x"), Err(AdapterError::Config(_))));
        assert!(ExternalCompiler::from_command_line("   ", "swift").is_err());
    }
}
