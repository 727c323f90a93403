//! Message-export ingestion.
//!
//! Exports are read row by row into [`ForwardRecord`]s using the canonical
//! six-field schema (`message_id`, `chat`, `chat_kind`, `posted_at`,
//! `forward_source`, `forward_source_kind`). Foreign column names are mapped
//! onto it with a [`FieldMap`]. Malformed rows are tallied, never fatal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::model::{canonical_id, is_public_handle, EntityKind, ForwardRecord, KindRegistry};

pub const CANONICAL_FIELDS: [&str; 6] = [
    "message_id",
    "chat",
    "chat_kind",
    "posted_at",
    "forward_source",
    "forward_source_kind",
];

/// Prefix of every pseudonym produced by [`anonymize`].
pub const PSEUDONYM_PREFIX: &str = "u_";
/// Pseudonym payload size in bytes (128 bits, hex-encoded).
const PSEUDONYM_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Ndjson,
    Csv,
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndjson" | "jsonl" => Ok(InputFormat::Ndjson),
            "csv" => Ok(InputFormat::Csv),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

/// Foreign column name -> canonical field name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldMap(pub BTreeMap<String, String>);

impl FieldMap {
    pub fn validate(&self) -> Result<()> {
        for target in self.0.values() {
            if !CANONICAL_FIELDS.contains(&target.as_str()) {
                return Err(Error::Config(format!(
                    "field map target {target:?} is not a canonical field"
                )));
            }
        }
        Ok(())
    }

    fn canonical<'a>(&'a self, column: &'a str) -> &'a str {
        self.0.get(column).map(String::as_str).unwrap_or(column)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: u64,
    /// Well-formed rows carrying a forward source (public or not).
    pub records_forwarded: u64,
    pub non_forwarded: u64,
    pub records_skipped: u64,
    pub skip_reasons: BTreeMap<String, u64>,
    pub distinct_sources: u64,
}

impl IngestReport {
    fn skip(&mut self, reason: &str) {
        self.records_skipped += 1;
        *self.skip_reasons.entry(reason.to_string()).or_default() += 1;
    }

    fn accept(&mut self, r: &ForwardRecord) {
        if r.is_forward() {
            self.records_forwarded += 1;
        } else {
            self.non_forwarded += 1;
        }
    }

    /// Combines per-file reports; `distinct_sources` is recomputed from the
    /// merged records.
    pub fn combine(reports: &[IngestReport], records: &[ForwardRecord]) -> IngestReport {
        let mut out = IngestReport::default();
        for r in reports {
            out.records_read += r.records_read;
            out.records_forwarded += r.records_forwarded;
            out.non_forwarded += r.non_forwarded;
            out.records_skipped += r.records_skipped;
            for (k, v) in &r.skip_reasons {
                *out.skip_reasons.entry(k.clone()).or_default() += v;
            }
        }
        out.distinct_sources = count_sources(records);
        out
    }
}

fn count_sources(records: &[ForwardRecord]) -> u64 {
    records
        .iter()
        .filter_map(|r| r.source())
        .map(canonical_id)
        .collect::<HashSet<_>>()
        .len() as u64
}

#[derive(Debug)]
enum RawValue {
    Text(String),
    Int(i64),
}

fn parse_timestamp(v: RawValue) -> Option<DateTime<Utc>> {
    match v {
        RawValue::Int(secs) => DateTime::from_timestamp(secs, 0),
        RawValue::Text(s) => {
            let s = s.trim();
            if let Ok(secs) = s.parse::<i64>() {
                return DateTime::from_timestamp(secs, 0);
            }
            if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
                return Some(dt.with_timezone(&Utc));
            }
            // Naive ISO-8601 is taken as UTC.
            ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S%.f"]
                .iter()
                .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
                .map(|n| n.and_utc())
        }
    }
}

/// Builds a record from canonical-name lookups, or the skip reason.
fn assemble(mut get: impl FnMut(&str) -> Option<RawValue>) -> std::result::Result<ForwardRecord, &'static str> {
    let text = |v: Option<RawValue>| match v {
        Some(RawValue::Text(s)) => Some(s),
        Some(RawValue::Int(i)) => Some(i.to_string()),
        None => None,
    };
    let chat = text(get("chat"))
        .filter(|s| !s.trim().is_empty())
        .ok_or("missing chat")?;
    let chat_kind = match text(get("chat_kind")) {
        Some(s) => EntityKind::from_str(&s).map_err(|_| "invalid kind")?,
        None => EntityKind::Unknown,
    };
    let posted_at = match get("posted_at") {
        None => return Err("missing posted_at"),
        Some(v) => parse_timestamp(v).ok_or("invalid posted_at")?,
    };
    let forward_source = text(get("forward_source"))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let forward_source_kind = match text(get("forward_source_kind")) {
        Some(s) => EntityKind::from_str(&s).map_err(|_| "invalid kind")?,
        None => EntityKind::Unknown,
    };
    Ok(ForwardRecord {
        message_id: text(get("message_id")).unwrap_or_default(),
        chat: chat.trim().to_string(),
        chat_kind,
        posted_at,
        forward_source,
        forward_source_kind,
    })
}

/// Parses one export file. Unreadable files and unknown formats are fatal;
/// malformed rows are counted in the report.
pub fn parse_export(
    path: impl AsRef<Path>,
    format: InputFormat,
    fields: &FieldMap,
) -> Result<(Vec<ForwardRecord>, IngestReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    match format {
        InputFormat::Ndjson => parse_ndjson(reader, fields, path),
        InputFormat::Csv => parse_csv(reader, fields),
    }
}

fn parse_ndjson(reader: impl BufRead, fields: &FieldMap, path: &Path) -> Result<(Vec<ForwardRecord>, IngestReport)> {
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        report.records_read += 1;
        let obj = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(serde_json::Value::Object(obj)) => obj,
            _ => {
                report.skip("invalid json");
                continue;
            }
        };
        let mut row: HashMap<&str, RawValue> = HashMap::new();
        for (k, v) in &obj {
            let v = match v {
                serde_json::Value::String(s) => RawValue::Text(s.clone()),
                serde_json::Value::Number(n) => match n.as_i64() {
                    Some(i) => RawValue::Int(i),
                    None => RawValue::Text(n.to_string()),
                },
                serde_json::Value::Bool(b) => RawValue::Text(b.to_string()),
                _ => continue,
            };
            row.insert(fields.canonical(k), v);
        }
        match assemble(|name| row.remove(name)) {
            Ok(r) => {
                report.accept(&r);
                records.push(r);
            }
            Err(reason) => report.skip(reason),
        }
    }
    report.distinct_sources = count_sources(&records);
    Ok((records, report))
}

fn parse_csv(reader: impl std::io::Read, fields: &FieldMap) -> Result<(Vec<ForwardRecord>, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| fields.canonical(h.trim()).to_string())
        .collect();
    let mut records = Vec::new();
    let mut report = IngestReport::default();
    for row in rdr.records() {
        report.records_read += 1;
        let row = match row {
            Ok(row) => row,
            Err(_) => {
                report.skip("malformed csv row");
                continue;
            }
        };
        let lookup = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .and_then(|i| row.get(i))
                .filter(|v| !v.is_empty())
                .map(|v| RawValue::Text(v.to_string()))
        };
        match assemble(lookup) {
            Ok(r) => {
                report.accept(&r);
                records.push(r);
            }
            Err(reason) => report.skip(reason),
        }
    }
    report.distinct_sources = count_sources(&records);
    Ok((records, report))
}

/// Records whose forward source is present and has a public handle.
/// Pseudonyms produced by [`anonymize`] count as public.
pub fn filter_forwarded(records: &[ForwardRecord]) -> Vec<ForwardRecord> {
    records
        .iter()
        .filter(|r| r.source().is_some_and(is_public_handle))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub username: String,
    pub kind: EntityKind,
    pub occurrences: u64,
}

/// Second-wave collection list: every forward source seen at least
/// `threshold` times, most frequent first, ties broken by username.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionPlan {
    pub threshold: u64,
    pub candidates: Vec<Candidate>,
}

impl ExpansionPlan {
    pub fn count_by_kind(&self) -> BTreeMap<EntityKind, usize> {
        let mut out = BTreeMap::new();
        for c in &self.candidates {
            *out.entry(c.kind).or_default() += 1;
        }
        out
    }
}

pub fn expansion_candidates(records: &[ForwardRecord], threshold: u64) -> Result<ExpansionPlan> {
    if threshold < 1 {
        return Err(Error::Config("expansion threshold must be at least 1".into()));
    }
    // id -> (display name, kind, count)
    let mut seen: HashMap<String, (String, EntityKind, u64)> = HashMap::new();
    for r in records {
        let Some(src) = r.source() else { continue };
        let display = src.trim_start_matches('@');
        let slot = seen
            .entry(canonical_id(src))
            .or_insert_with(|| (display.to_string(), EntityKind::Unknown, 0));
        if display < slot.0.as_str() {
            slot.0 = display.to_string();
        }
        slot.1 = slot.1.merge(r.forward_source_kind);
        slot.2 += 1;
    }
    let mut candidates: Vec<Candidate> = seen
        .into_values()
        .filter(|(_, _, n)| *n >= threshold)
        .map(|(username, kind, occurrences)| Candidate {
            username,
            kind,
            occurrences,
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.occurrences
            .cmp(&a.occurrences)
            .then_with(|| a.username.cmp(&b.username))
    });
    Ok(ExpansionPlan { threshold, candidates })
}

/// Keyed pseudonym for a handle: `u_` followed by the first 128 bits of
/// HMAC-SHA256(key, canonical handle), hex-encoded.
pub fn pseudonym(username: &str, key: &[u8]) -> Result<String> {
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let mut mac = Hmac::<Sha256>::new_from_slice(key).map_err(|_| Error::EmptyKey)?;
    mac.update(canonical_id(username).as_bytes());
    let digest = mac.finalize().into_bytes();
    Ok(format!("{PSEUDONYM_PREFIX}{}", hex::encode(&digest[..PSEUDONYM_BYTES])))
}

/// Replaces every public handle whose (merged) kind is `User` by its keyed
/// pseudonym. Every other kind passes through untouched.
/// The mapping is never stored.
pub fn anonymize(records: &[ForwardRecord], key: &[u8]) -> Result<Vec<ForwardRecord>> {
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let registry = KindRegistry::from_records(records);
    let mut cache: HashMap<String, String> = HashMap::new();
    let mut swap = |name: &str| -> Result<Option<String>> {
        if registry.kind_of(name) != EntityKind::User || !is_public_handle(name) {
            return Ok(None);
        }
        let id = canonical_id(name);
        if let Some(p) = cache.get(&id) {
            return Ok(Some(p.clone()));
        }
        let p = pseudonym(&id, key)?;
        cache.insert(id, p.clone());
        Ok(Some(p))
    };
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut r = r.clone();
        if let Some(p) = swap(&r.chat)? {
            r.chat = p;
        }
        if let Some(src) = r.source().map(str::to_string) {
            if let Some(p) = swap(&src)? {
                r.forward_source = Some(p);
                r.forward_source_kind = EntityKind::User;
            }
        }
        out.push(r);
    }
    Ok(out)
}

/// Writes records as canonical NDJSON, one object per line.
pub fn write_ndjson(records: &[ForwardRecord], path: impl AsRef<Path>) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn fwd(chat: &str, src: Option<&str>, kind: EntityKind) -> ForwardRecord {
        ForwardRecord {
            message_id: "1".into(),
            chat: chat.into(),
            chat_kind: EntityKind::Group,
            posted_at: DateTime::from_timestamp(1_660_000_000, 0).unwrap(),
            forward_source: src.map(Into::into),
            forward_source_kind: kind,
        }
    }

    #[test]
    fn ndjson_missing_chat_is_skipped() {
        let f = write_tmp(concat!(
            r#"{"message_id":"1","chat":"g1","chat_kind":"group","posted_at":"2022-08-01T10:00:00Z","forward_source":"chanA","forward_source_kind":"channel"}"#,
            "\n",
            r#"{"message_id":"2","chat_kind":"group","posted_at":1659348000}"#,
            "\n",
            r#"{"message_id":3,"chat":"g1","chat_kind":"group","posted_at":1659348000,"extra":true}"#,
            "\n",
        ));
        let (recs, rep) = parse_export(f.path(), InputFormat::Ndjson, &FieldMap::default()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(rep.records_read, 3);
        assert_eq!(rep.records_skipped, 1);
        assert_eq!(rep.skip_reasons["missing chat"], 1);
        assert_eq!(rep.records_forwarded, 1);
        assert_eq!(rep.non_forwarded, 1);
        assert_eq!(recs[1].message_id, "3");
        assert_eq!(recs[0].forward_source_kind, EntityKind::Channel);
    }

    #[test]
    fn empty_file_has_no_records() {
        let f = write_tmp("");
        let (recs, rep) = parse_export(f.path(), InputFormat::Ndjson, &FieldMap::default()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep, IngestReport::default());
    }

    #[test]
    fn garbage_lines_are_tallied() {
        let f = write_tmp("not json\n[1,2]\n{\"chat\":\"g\",\"posted_at\":\"yesterday\"}\n");
        let (recs, rep) = parse_export(f.path(), InputFormat::Ndjson, &FieldMap::default()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(rep.skip_reasons["invalid json"], 2);
        assert_eq!(rep.skip_reasons["invalid posted_at"], 1);
        assert_eq!(rep.records_read, rep.records_skipped);
    }

    #[test]
    fn missing_file_is_fatal() {
        let err = parse_export("/nonexistent/x.ndjson", InputFormat::Ndjson, &FieldMap::default());
        assert!(matches!(err, Err(Error::Io { .. })));
        assert!(matches!("xml".parse::<InputFormat>(), Err(Error::UnknownFormat(_))));
    }

    #[test]
    fn csv_with_mapped_columns() {
        let f = write_tmp(
            "id,channel,type,date,fwd_from,fwd_type\n\
             10,grp,group,2022-08-02 12:00:00,\"Chan, A\",channel\n\
             11,grp,group,1659441600,,\n\
             12,,group,1659441600,x,user\n",
        );
        let map = FieldMap(
            [
                ("id", "message_id"),
                ("channel", "chat"),
                ("type", "chat_kind"),
                ("date", "posted_at"),
                ("fwd_from", "forward_source"),
                ("fwd_type", "forward_source_kind"),
            ]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect(),
        );
        let (recs, rep) = parse_export(f.path(), InputFormat::Csv, &map).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].forward_source.as_deref(), Some("Chan, A"));
        assert_eq!(recs[0].posted_at.timestamp(), 1_659_441_600);
        assert_eq!(rep.skip_reasons["missing chat"], 1);
        assert_eq!(rep.distinct_sources, 1);
    }

    #[test]
    fn field_map_rejects_unknown_targets() {
        let map = FieldMap([("a".to_string(), "nope".to_string())].into_iter().collect());
        assert!(map.validate().is_err());
    }

    #[test]
    fn filter_keeps_public_forwards() {
        let mut recs = vec![fwd("g", None, EntityKind::Unknown); 6];
        recs.push(fwd("g", Some("a"), EntityKind::Channel));
        recs.push(fwd("g", Some("b"), EntityKind::Channel));
        recs.push(fwd("g", Some("c"), EntityKind::User));
        recs.push(fwd("g", Some("777000"), EntityKind::User));
        assert_eq!(filter_forwarded(&recs).len(), 3);
        assert!(filter_forwarded(&recs[..6]).is_empty());
    }

    #[test]
    fn expansion_threshold_is_inclusive() {
        let mut recs = vec![fwd("g", Some("fifty"), EntityKind::Channel); 50];
        recs.extend(vec![fwd("g", Some("fortynine"), EntityKind::Channel); 49]);
        let plan = expansion_candidates(&recs, 50).unwrap();
        assert_eq!(plan.candidates.len(), 1);
        assert_eq!(plan.candidates[0].username, "fifty");
        assert_eq!(plan.candidates[0].occurrences, 50);
        assert!(expansion_candidates(&recs, 0).is_err());
    }

    #[test]
    fn expansion_ties_sorted_by_username() {
        let mut recs = vec![fwd("g", Some("zeta"), EntityKind::Channel); 3];
        recs.extend(vec![fwd("g", Some("alpha"), EntityKind::Channel); 3]);
        recs.extend(vec![fwd("g", Some("mid"), EntityKind::Channel); 4]);
        let names: Vec<_> = expansion_candidates(&recs, 1)
            .unwrap()
            .candidates
            .into_iter()
            .map(|c| c.username)
            .collect();
        assert_eq!(names, ["mid", "alpha", "zeta"]);
    }

    #[test]
    fn anonymize_users_only() {
        let recs = vec![
            fwd("g", Some("Alice"), EntityKind::User),
            fwd("g", Some("alice"), EntityKind::User),
            fwd("g", Some("NewsChan"), EntityKind::Channel),
        ];
        let out = anonymize(&recs, b"k").unwrap();
        let a = out[0].forward_source.clone().unwrap();
        assert!(a.starts_with(PSEUDONYM_PREFIX));
        assert_eq!(a.len(), PSEUDONYM_PREFIX.len() + 32);
        assert_eq!(out[1].forward_source.as_deref(), Some(a.as_str()));
        assert_eq!(out[2].forward_source.as_deref(), Some("NewsChan"));
        assert_eq!(out[0].chat, "g");
        // Same key, separate call: identical pseudonym. Different key: different.
        assert_eq!(anonymize(&recs, b"k").unwrap(), out);
        assert_ne!(
            anonymize(&recs, b"other").unwrap()[0].forward_source,
            out[0].forward_source
        );
        assert!(matches!(anonymize(&recs, b""), Err(Error::EmptyKey)));
    }

    #[test]
    fn pseudonyms_are_distinct_over_large_corpus() {
        let mut seen = HashSet::new();
        for i in 0..100_000 {
            assert!(seen.insert(pseudonym(&format!("user{i}"), b"secret").unwrap()));
        }
    }
}
