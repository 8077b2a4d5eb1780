use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Article, ConflictEvent, DyadProbabilityRow};
use crate::error::{Error, Result};

/// A row that failed to parse or validate. `line` is 1-based and counts the
/// CSV header as line 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct LoadReport<T> {
    pub records: Vec<T>,
    pub errors: Vec<RowError>,
    pub warnings: Vec<String>,
}

impl<T> LoadReport<T> {
    fn empty() -> Self {
        LoadReport {
            records: Vec::new(),
            errors: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false)
}

/// Reads JSONL or CSV (chosen by extension) into raw rows, keeping line
/// numbers. A CSV missing any required column fails as a whole.
fn read_rows<R: DeserializeOwned>(path: &Path, required: &[&str]) -> Result<LoadReport<(usize, R)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut report = LoadReport::empty();
    if text.trim().is_empty() {
        let msg = format!("{}: file is empty", path.display());
        warn!("{msg}");
        report.warnings.push(msg);
        return Ok(report);
    }

    if is_csv(path) {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        for col in required {
            if !headers.iter().any(|h| h == *col) {
                return Err(Error::MissingColumn {
                    path: PathBuf::from(path),
                    column: (*col).to_string(),
                });
            }
        }
        for (i, row) in reader.deserialize::<R>().enumerate() {
            let line = i + 2;
            match row {
                Ok(r) => report.records.push((line, r)),
                Err(e) => report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                }),
            }
        }
    } else {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<R>(raw) {
                Ok(r) => report.records.push((line, r)),
                Err(e) => report.errors.push(RowError {
                    line,
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(report)
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    let head = s.trim().get(..10).unwrap_or(s.trim());
    NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|e| format!("bad date `{s}`: {e}"))
}

#[derive(Deserialize)]
struct RawEvent {
    event_id: String,
    dyad_id: String,
    #[serde(default)]
    country_id: String,
    date: String,
    fatalities: i64,
    headline: String,
}

const EVENT_COLUMNS: &[&str] = &["event_id", "dyad_id", "date", "fatalities", "headline"];

/// Loads conflict events. Row-level problems (negative fatalities, bad
/// dates, empty dyad ids) are reported and the row skipped.
pub fn load_events(path: &Path) -> Result<LoadReport<ConflictEvent>> {
    let raw = read_rows::<RawEvent>(path, EVENT_COLUMNS)?;
    let mut out = LoadReport {
        records: Vec::with_capacity(raw.records.len()),
        errors: raw.errors,
        warnings: raw.warnings,
    };
    for (line, r) in raw.records {
        let reject = |message: String| RowError { line, message };
        if r.fatalities < 0 {
            out.errors
                .push(reject(format!("negative fatalities {} for event {}", r.fatalities, r.event_id)));
            continue;
        }
        if r.dyad_id.trim().is_empty() {
            out.errors.push(reject(format!("empty dyad_id for event {}", r.event_id)));
            continue;
        }
        let date = match parse_date(&r.date) {
            Ok(d) => d,
            Err(m) => {
                out.errors.push(reject(m));
                continue;
            }
        };
        out.records.push(ConflictEvent {
            event_id: r.event_id,
            dyad_id: r.dyad_id,
            country_id: r.country_id,
            date,
            fatalities: r.fatalities as u64,
            headline: r.headline,
        });
    }
    for e in &out.errors {
        warn!("{}:{}: {}", path.display(), e.line, e.message);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawArticle {
    article_id: String,
    date: String,
    #[serde(default)]
    headline: String,
    #[serde(default)]
    body: String,
}

pub fn load_articles(path: &Path) -> Result<LoadReport<Article>> {
    let raw = read_rows::<RawArticle>(path, &["article_id", "date", "headline", "body"])?;
    let mut out = LoadReport {
        records: Vec::with_capacity(raw.records.len()),
        errors: raw.errors,
        warnings: raw.warnings,
    };
    for (line, r) in raw.records {
        match parse_date(&r.date) {
            Ok(date) => out.records.push(Article {
                article_id: r.article_id,
                date,
                headline: r.headline,
                body: r.body,
                embedding: None,
            }),
            Err(message) => out.errors.push(RowError { line, message }),
        }
    }
    Ok(out)
}

pub fn load_dyad_probs(path: &Path) -> Result<LoadReport<DyadProbabilityRow>> {
    let raw = read_rows::<DyadProbabilityRow>(path, &["article_id", "probs"])?;
    let mut out = LoadReport {
        records: Vec::with_capacity(raw.records.len()),
        errors: raw.errors,
        warnings: raw.warnings,
    };
    for (line, r) in raw.records {
        if let Some((d, p)) = r
            .probabilities
            .iter()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            out.errors.push(RowError {
                line,
                message: format!("probability {p} for dyad {d} outside [0,1]"),
            });
            continue;
        }
        out.records.push(r);
    }
    Ok(out)
}

/// Sidecar describing a row-major little-endian f32 matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMeta {
    pub dim: usize,
    pub ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub ids: Vec<String>,
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<f32>> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), self.row(i).to_vec()))
            .collect()
    }
}

/// `embeddings.f32` pairs with `embeddings.meta.json` next to it.
pub fn meta_path(matrix: &Path) -> PathBuf {
    let stem = matrix
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    matrix.with_file_name(format!("{stem}.meta.json"))
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let meta_file = meta_path(path);
    let meta_text = fs::read_to_string(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: EmbeddingMeta = serde_json::from_str(&meta_text)?;
    if meta.dim == 0 {
        return Err(Error::invalid("embedding dimension must be positive"));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta.dim * meta.ids.len() * 4;
    if bytes.len() != expected {
        return Err(Error::invalid(format!(
            "{}: {} bytes, expected {} ({} rows x {} dims x 4)",
            path.display(),
            bytes.len(),
            expected,
            meta.ids.len(),
            meta.dim
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "non-finite embedding component in row {}",
            meta.ids[pos / meta.dim]
        )));
    }
    Ok(EmbeddingMatrix {
        dim: meta.dim,
        ids: meta.ids,
        data,
    })
}

pub fn write_embeddings(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(matrix.data.len() * 4);
    for v in &matrix.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let meta = EmbeddingMeta {
        dim: matrix.dim,
        ids: matrix.ids.clone(),
    };
    let meta_file = meta_path(path);
    fs::write(&meta_file, serde_json::to_vec(&meta)?).map_err(|e| Error::io(&meta_file, e))
}

/// Attaches embeddings by article id; returns how many articles got one.
pub fn attach_embeddings(articles: &mut [Article], matrix: &EmbeddingMatrix) -> usize {
    let index: BTreeMap<&str, usize> = matrix
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut attached = 0;
    for a in articles.iter_mut() {
        if let Some(&i) = index.get(a.article_id.as_str()) {
            a.embedding = Some(matrix.row(i).to_vec());
            attached += 1;
        }
    }
    attached
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn three_valid_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "events.jsonl",
            r#"{"event_id":"e1","dyad_id":"A","country_id":"C1","date":"2021-06-03","fatalities":3,"headline":"x"}
{"event_id":"e2","dyad_id":"A","country_id":"C1","date":"2021-07-03","fatalities":0,"headline":"y"}
{"event_id":"e3","dyad_id":"B","country_id":"C2","date":"2021-07-09T12:00:00Z","fatalities":10,"headline":"z"}
"#,
        );
        let r = load_events(&p).unwrap();
        assert_eq!(r.records.len(), 3);
        assert!(r.errors.is_empty());
    }

    #[test]
    fn negative_fatalities_rejects_only_that_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "events.csv",
            "event_id,dyad_id,country_id,date,fatalities,headline\n\
             e1,A,C,2021-06-01,4,a\n\
             e2,A,C,2021-06-02,-1,b\n\
             e3,A,C,2021-06-03,2,c\n",
        );
        let r = load_events(&p).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].line, 3);
        assert!(r.errors[0].message.contains("negative"));
    }

    #[test]
    fn empty_file_warns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "events.jsonl", "");
        let r = load_events(&p).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn missing_file_and_missing_column() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_events(&dir.path().join("nope.jsonl")),
            Err(Error::Io { .. })
        ));
        let p = write(dir.path(), "events.csv", "event_id,dyad_id,date,headline\ne1,A,2021-01-01,h\n");
        match load_events(&p) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "fatalities"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embeddings_round_trip_and_attach() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix {
            dim: 2,
            ids: vec!["a".into(), "b".into()],
            data: vec![1.0, 0.0, 0.5, -0.5],
        };
        let p = dir.path().join("embeddings.f32");
        write_embeddings(&p, &m).unwrap();
        assert!(dir.path().join("embeddings.meta.json").exists());
        let back = load_embeddings(&p).unwrap();
        assert_eq!(back, m);

        let mut arts = vec![Article {
            article_id: "b".into(),
            date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
            headline: "h".into(),
            body: "b".into(),
            embedding: None,
        }];
        assert_eq!(attach_embeddings(&mut arts, &back), 1);
        assert_eq!(arts[0].embedding.as_deref(), Some(&[0.5f32, -0.5][..]));
    }

    #[test]
    fn truncated_embedding_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("embeddings.f32");
        fs::write(&p, [0u8; 12]).unwrap();
        fs::write(
            dir.path().join("embeddings.meta.json"),
            r#"{"dim":2,"ids":["a","b"]}"#,
        )
        .unwrap();
        assert!(load_embeddings(&p).is_err());
    }

    #[test]
    fn dyad_probs_out_of_range_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "dyad_probs.jsonl",
            r#"{"article_id":"a1","probs":{"A":0.9,"B":0.05}}
{"article_id":"a2","probs":{"A":1.5}}
"#,
        );
        let r = load_dyad_probs(&p).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.errors[0].line, 2);
    }
}
