use std::fmt::Display;

use nrec_corpus::CorpusError;
use serde_json::Value;

use crate::Ctx;

/// Bad input the user can fix, as opposed to a runtime failure.
#[derive(Debug)]
pub struct Invalid(pub String);

impl Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// Core errors the user fixes by changing input: validation failures, plus
/// malformed records in input files and checkpoints trained under another
/// config.
fn core_bad_input(e: &nrec_core::Error) -> bool {
    use nrec_core::Error as E;
    match e {
        E::Record { .. } | E::StaleArtifact { .. } => true,
        E::Stage { source, .. } => core_bad_input(source),
        other => other.is_validation(),
    }
}

pub fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        if c.is::<Invalid>() {
            return true;
        }
        if let Some(core) = c.downcast_ref::<nrec_core::Error>() {
            return core_bad_input(core);
        }
        match c.downcast_ref::<CorpusError>() {
            Some(CorpusError::Precondition(_)) => true,
            Some(CorpusError::Core(inner)) => core_bad_input(inner),
            _ => false,
        }
    })
}

/// The error chain joined with ": ", skipping causes whose text the outer
/// message already repeats.
pub fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for c in e.chain() {
        let msg = c.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

/// Prints `human` normally, `json` (one line) under `--json`.
pub fn emit(ctx: &Ctx, human: impl Display, json: Value) {
    if ctx.json {
        println!("{json}");
    } else {
        println!("{human}");
    }
}
