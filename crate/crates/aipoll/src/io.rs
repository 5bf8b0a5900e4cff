//! Artifact files. Every JSON-lines file opens with a `{"meta": ...}` line and
//! every delimited file with a `# run_id=...` comment, so each artifact names
//! the run and corpus it came from.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use comfy_table::{presets, CellAlignment, Table as TextTable};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{format_err, Error, IoContext, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).at(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusHashes {
    pub questions: String,
    pub respondents: String,
    pub tags: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub corpus: CorpusHashes,
}

impl RunMeta {
    pub fn comment_line(&self) -> String {
        format!(
            "# run_id={} questions={} respondents={} tags={}",
            self.run_id, self.corpus.questions, self.corpus.respondents, self.corpus.tags
        )
    }
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: RunMeta,
}

/// Writes through a sibling temp file so readers never see half an artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_pretty(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<T> {
    let text = read_artifact(path, stage)?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, meta: &RunMeta, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut out = serde_json::to_string(&MetaLine { meta: meta.clone() }).expect("meta serializes");
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("artifact types serialize"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, stage: &'static str) -> Result<(RunMeta, Vec<T>)> {
    let text = read_artifact(path, stage)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| format_err(path, "empty file"))?;
    let meta: MetaLine = serde_json::from_str(first).map_err(|e| format_err(path, format!("meta line: {e}")))?;
    let items = lines
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format_err(path, format!("line {}: {e}", i + 2))))
        .collect::<Result<_>>()?;
    Ok((meta.meta, items))
}

fn read_artifact(path: &Path, stage: &'static str) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(Error::MissingArtifact { path: path.to_path_buf(), stage })
        }
        Err(source) => Err(Error::Io { path: path.to_path_buf(), source }),
    }
}

/// A rectangular table rendered both as CSV and as aligned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: Into<String>>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(Into::into).collect();
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, meta: &RunMeta) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        format!("{}\n{body}", meta.comment_line())
    }

    pub fn to_text(&self) -> String {
        let mut t = TextTable::new();
        t.load_preset(presets::ASCII_MARKDOWN);
        t.set_header(&self.header);
        for r in &self.rows {
            t.add_row(r);
        }
        for (i, col) in t.column_iter_mut().enumerate() {
            if i > 0 {
                col.set_cell_alignment(CellAlignment::Right);
            }
        }
        let mut s = t.trim_fmt();
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.txt` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str, meta: &RunMeta) -> Result<(PathBuf, PathBuf)> {
        let csv_path = dir.join(format!("{stem}.csv"));
        let txt_path = dir.join(format!("{stem}.txt"));
        write_atomic(&csv_path, self.to_csv(meta).as_bytes())?;
        write_atomic(&txt_path, format!("{}\n{}", meta.comment_line(), self.to_text()).as_bytes())?;
        Ok((csv_path, txt_path))
    }
}

/// Reads a delimited artifact, skipping `#` comment lines.
pub fn read_csv(path: &Path, stage: &'static str) -> Result<Table> {
    let text = read_artifact(path, stage)?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| format_err(path, e))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| format_err(path, e)))
        .collect::<Result<_>>()?;
    Ok(Table { header, rows })
}

pub fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.digits$}"))
}

/// Appends lines to a JSON-lines file, creating it if needed.
pub struct Appender {
    path: PathBuf,
    file: fs::File,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).at(dir)?;
        }
        let file = fs::OpenOptions::new().create(true).append(true).open(path).at(path)?;
        Ok(Appender { path: path.to_path_buf(), file })
    }

    pub fn append<T: Serialize>(&mut self, item: &T) -> Result<()> {
        let mut line = serde_json::to_string(item).expect("artifact types serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes()).at(&self.path)?;
        self.file.flush().at(&self.path)
    }
}

/// Reads every parseable line of an append-only log. A torn final line from
/// an interrupted write is skipped.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(Error::Io { path: path.to_path_buf(), source }),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>().at(path)?;
    let last = lines.len().saturating_sub(1);
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i == last => {}
            Err(e) => return Err(format_err(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(out)
}
