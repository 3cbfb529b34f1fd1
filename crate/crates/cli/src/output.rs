use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub const TOOL: &str = concat!("pehsim ", env!("CARGO_PKG_VERSION"));

#[derive(Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
}

/// Destination for a command's primary artifact: a file or stdout.
pub struct Sink {
    path: Option<PathBuf>,
}

impl Sink {
    pub fn new(path: Option<&Path>) -> Self {
        Self {
            path: path.map(Path::to_path_buf),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn open(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.path {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
            )),
            None => Box::new(io::stdout().lock()),
        })
    }

    /// `{"provenance": …, <body fields>}` as pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&self, prov: &Provenance, body: &T) -> Result<()> {
        write_json_to(self.open()?, prov, body)
    }

    /// CSV with `#`-prefixed provenance lines ahead of the header row.
    pub fn write_csv<R: Serialize>(&self, prov: &Provenance, rows: &[R]) -> Result<()> {
        let mut out = self.open()?;
        writeln!(out, "# {}", prov.tool)?;
        writeln!(out, "# command: {}", prov.command)?;
        writeln!(out, "# config: {}", serde_json::to_string(prov.config)?)?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn write_json_to<T: Serialize>(out: impl Write, prov: &Provenance, body: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a, T> {
        provenance: &'a Provenance<'a>,
        #[serde(flatten)]
        body: &'a T,
    }
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &Doc { provenance: prov, body })?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
