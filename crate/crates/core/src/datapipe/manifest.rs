//! Tab-separated manifests: `id  source  duration  transcript  chapter  order`.
//! `-` marks a missing chapter or order; lines starting with `#` are comments.

use std::io::{BufRead, Write};
use std::path::Path;

use super::{Source, UtteranceRecord};
use crate::error::{Error, Result};

pub const HEADER: &str = "# id\tsource\tduration\ttranscript\tchapter\torder";

pub fn parse_line(line: &str, lineno: usize) -> Result<UtteranceRecord> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 6 {
        return Err(Error::Format(format!("manifest line {lineno}: expected 6 columns, got {}", cols.len())));
    }
    let duration_seconds = cols[2]
        .parse()
        .map_err(|_| Error::Format(format!("manifest line {lineno}: bad duration `{}`", cols[2])))?;
    let opt = |s: &str| (s != "-").then(|| s.to_string());
    let order_in_chapter = match opt(cols[5]) {
        Some(s) => Some(
            s.parse()
                .map_err(|_| Error::Format(format!("manifest line {lineno}: bad order `{s}`")))?,
        ),
        None => None,
    };
    let record = UtteranceRecord {
        id: cols[0].to_string(),
        source: cols[1].parse()?,
        duration_seconds,
        transcript: cols[3].to_string(),
        chapter_id: opt(cols[4]),
        order_in_chapter,
    };
    record.validate()?;
    Ok(record)
}

pub fn format_line(r: &UtteranceRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}",
        r.id,
        r.source,
        r.duration_seconds,
        r.transcript,
        r.chapter_id.as_deref().unwrap_or("-"),
        r.order_in_chapter.map_or("-".to_string(), |o| o.to_string())
    )
}

pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<UtteranceRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_line(trimmed, i + 1)?);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(mut w: W, records: &[UtteranceRecord]) -> Result<()> {
    writeln!(w, "{HEADER}")?;
    for r in records {
        writeln!(w, "{}", format_line(r))?;
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open manifest {}: {e}", path.display())))?;
    read_manifest(std::io::BufReader::new(f))
}

pub fn save_manifest(path: &Path, records: &[UtteranceRecord]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_manifest(std::io::BufWriter::new(f), records)
}

/// Synthetic sources referenced by a record, in order.
pub fn synthetic_indices(source: &Source) -> Option<Vec<u64>> {
    match source {
        Source::Synthetic(i) => Some(vec![*i]),
        Source::Concat(ids) => Some(ids.clone()),
        _ => None,
    }
}
