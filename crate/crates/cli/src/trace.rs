//! Trace files: JSON-Lines, one event per line, preceded by a header line
//! carrying the scenario summary so a trace can be checked on its own.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use bdso_core::history::{Event, History};
use bdso_core::scenario::ScenarioMeta;
use serde_json::json;

pub fn write_trace(path: &Path, meta: &ScenarioMeta, history: &History) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    let header = json!({ "kind": "meta", "meta": meta });
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for event in &history.events {
        serde_json::to_writer(&mut w, event)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<(ScenarioMeta, History)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(line) => line?,
        None => bail!("{}: empty trace", path.display()),
    };
    let header: serde_json::Value =
        serde_json::from_str(&header_line).with_context(|| format!("{}: corrupt header", path.display()))?;
    if header.get("kind").and_then(|k| k.as_str()) != Some("meta") {
        bail!("{}: first line is not a meta header", path.display());
    }
    let meta: ScenarioMeta = serde_json::from_value(
        header.get("meta").cloned().unwrap_or(serde_json::Value::Null),
    )
    .with_context(|| format!("{}: corrupt scenario summary", path.display()))?;
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line)
            .with_context(|| format!("{}: corrupt event on line {}", path.display(), i + 2))?;
        events.push(event);
    }
    Ok((meta, History { events }))
}
