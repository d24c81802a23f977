use serde_json::json;
use std::fmt::Display;

/// A failure reported as JSON on stderr.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub details: Vec<String>,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Display) -> Self {
        CliError {
            kind,
            message: message.to_string(),
            details: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        json!({
            "schema_version": crate::commands::SCHEMA_VERSION,
            "error": { "kind": self.kind, "message": self.message, "details": self.details },
        })
        .to_string()
    }

    /// 2 for bad invocations and unreadable inputs, 3 for inputs that are
    /// readable but cannot be processed.
    pub fn exit_code(&self) -> u8 {
        match self.kind {
            "usage" | "io" | "parse" | "manifest" | "proof" => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io(path: &std::path::Path, e: impl Display) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}
