use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Emit `rows` with a provenance line recording the tool version and the
/// resolved configuration.
pub fn write_rows<R: Serialize, C: Serialize>(
    out: Option<&Path>,
    format: Format,
    config: &C,
    rows: &[R],
) -> Result<()> {
    let mut sink: Box<dyn Write> = match out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let config_json = serde_json::to_string(config)?;
    match format {
        Format::Csv => {
            writeln!(sink, "# nlgqkd {} config={}", env!("CARGO_PKG_VERSION"), config_json)?;
            let mut w = csv::Writer::from_writer(sink);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            let doc = serde_json::json!({
                "version": env!("CARGO_PKG_VERSION"),
                "config": config,
                "rows": rows,
            });
            serde_json::to_writer_pretty(&mut sink, &doc)?;
            writeln!(sink)?;
        }
    }
    Ok(())
}
