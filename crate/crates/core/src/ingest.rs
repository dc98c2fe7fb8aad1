//! Delimited event files and the node universes they induce.
//!
//! Every line is one dyadic event `source,target,time`. Events are kept in
//! a strict order: by time, and by position in the input for events that
//! share a timestamp. User and article ids are interned to dense indices at
//! first sight, so the universe at any point of the stream is an index
//! prefix `0..n`.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use thiserror::Error;

/// Seconds since the Unix epoch.
pub type Timestamp = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArticleId(pub u32);

impl UserId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl ArticleId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// One time-stamped interaction of a user with an article.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub user: UserId,
    pub article: ArticleId,
    pub time: Timestamp,
    /// 0-based position in the input.
    pub seq: u64,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
    #[error("line {line}: time {time} precedes {previous} (pass --sort to reorder)")]
    OutOfOrder {
        line: u64,
        time: Timestamp,
        previous: Timestamp,
    },
    #[error("too many distinct nodes for 32-bit indices")]
    TooManyNodes,
}

/// Append-only string interner.
#[derive(Clone, Debug, Default)]
struct Interner {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> Result<(u32, bool), IngestError> {
        if let Some(&id) = self.index.get(name) {
            return Ok((id, false));
        }
        let id = u32::try_from(self.names.len()).map_err(|_| IngestError::TooManyNodes)?;
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), id);
        Ok((id, true))
    }
}

/// Users and articles seen so far, with the event at which each first
/// appeared.
#[derive(Clone, Debug, Default)]
pub struct NodeUniverse {
    users: Interner,
    articles: Interner,
    user_first_seq: Vec<u64>,
    article_first_seq: Vec<u64>,
}

impl NodeUniverse {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_users(&self) -> usize {
        self.users.names.len()
    }

    pub fn n_articles(&self) -> usize {
        self.articles.names.len()
    }

    pub fn intern_user(&mut self, name: &str, seq: u64) -> Result<UserId, IngestError> {
        let (id, fresh) = self.users.intern(name)?;
        if fresh {
            self.user_first_seq.push(seq);
        }
        Ok(UserId(id))
    }

    pub fn intern_article(&mut self, name: &str, seq: u64) -> Result<ArticleId, IngestError> {
        let (id, fresh) = self.articles.intern(name)?;
        if fresh {
            self.article_first_seq.push(seq);
        }
        Ok(ArticleId(id))
    }

    pub fn user_name(&self, id: UserId) -> &str {
        &self.users.names[id.index()]
    }

    pub fn article_name(&self, id: ArticleId) -> &str {
        &self.articles.names[id.index()]
    }

    pub fn user(&self, name: &str) -> Option<UserId> {
        self.users.index.get(name).copied().map(UserId)
    }

    pub fn article(&self, name: &str) -> Option<ArticleId> {
        self.articles.index.get(name).copied().map(ArticleId)
    }

    pub fn user_first_seq(&self, id: UserId) -> u64 {
        self.user_first_seq[id.index()]
    }

    pub fn article_first_seq(&self, id: ArticleId) -> u64 {
        self.article_first_seq[id.index()]
    }
}

/// How event files are laid out. Lines starting with `#` are comments.
#[derive(Clone, Copy, Debug)]
pub struct EventFormat {
    pub delimiter: u8,
    pub has_header: bool,
    /// Stable-sort out-of-order input by time instead of failing.
    pub sort: bool,
}

impl Default for EventFormat {
    fn default() -> Self {
        EventFormat {
            delimiter: b',',
            has_header: false,
            sort: false,
        }
    }
}

/// A fully parsed event stream.
#[derive(Clone, Debug, Default)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub universe: NodeUniverse,
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Parses a timestamp: integer or decimal epoch seconds, or ISO-8601.
/// Fractional seconds are truncated.
pub fn parse_time(field: &str) -> Option<Timestamp> {
    let s = field.trim();
    if let Ok(t) = s.parse::<i64>() {
        return Some(t);
    }
    if let Ok(x) = s.parse::<f64>() {
        if x.is_finite() && x.abs() < 9.0e18 {
            return Some(x.trunc() as i64);
        }
        return None;
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

struct RawEvent {
    user: String,
    article: String,
    time: Timestamp,
}

fn csv_reader<R: Read>(reader: R, format: &EventFormat) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(format.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader)
}

fn decode_record(record: &csv::StringRecord) -> Result<RawEvent, IngestError> {
    let line = record.position().map_or(0, |p| p.line());
    if record.len() < 3 {
        return Err(IngestError::Malformed {
            line,
            reason: format!("expected at least 3 fields, found {}", record.len()),
        });
    }
    let time = parse_time(&record[2]).ok_or_else(|| IngestError::Malformed {
        line,
        reason: format!("cannot parse time {:?}", &record[2]),
    })?;
    Ok(RawEvent {
        user: record[0].to_owned(),
        article: record[1].to_owned(),
        time,
    })
}

fn csv_error(err: csv::Error) -> IngestError {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => IngestError::Io(e),
        other => IngestError::Malformed {
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Streaming reader over an ordered event file.
///
/// Nodes are interned as events are yielded, so after event `e` the
/// universe holds exactly the nodes of events up to and including `e`.
/// Input must already be ordered by time.
pub struct EventReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    universe: NodeUniverse,
    next_seq: u64,
    last_time: Option<Timestamp>,
}

impl<R: Read> EventReader<R> {
    pub fn new(reader: R, format: &EventFormat) -> Self {
        EventReader {
            records: csv_reader(reader, format).into_records(),
            universe: NodeUniverse::new(),
            next_seq: 0,
            last_time: None,
        }
    }

    pub fn universe(&self) -> &NodeUniverse {
        &self.universe
    }

    pub fn into_universe(self) -> NodeUniverse {
        self.universe
    }
}

impl EventReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, format: &EventFormat) -> Result<Self, IngestError> {
        let file = File::open(path)?;
        Ok(Self::new(BufReader::with_capacity(1 << 20, file), format))
    }
}

impl<R: Read> Iterator for EventReader<R> {
    type Item = Result<Event, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        let record = match self.records.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(csv_error(e))),
        };
        let raw = match decode_record(&record) {
            Ok(raw) => raw,
            Err(e) => return Some(Err(e)),
        };
        if let Some(previous) = self.last_time {
            if raw.time < previous {
                return Some(Err(IngestError::OutOfOrder {
                    line: record.position().map_or(0, |p| p.line()),
                    time: raw.time,
                    previous,
                }));
            }
        }
        self.last_time = Some(raw.time);
        let seq = self.next_seq;
        self.next_seq += 1;
        let user = match self.universe.intern_user(&raw.user, seq) {
            Ok(id) => id,
            Err(e) => return Some(Err(e)),
        };
        let article = match self.universe.intern_article(&raw.article, seq) {
            Ok(id) => id,
            Err(e) => return Some(Err(e)),
        };
        Some(Ok(Event {
            user,
            article,
            time: raw.time,
            seq,
        }))
    }
}

/// Reads a whole event stream into memory.
pub fn read_events<R: Read>(reader: R, format: &EventFormat) -> Result<EventLog, IngestError> {
    if !format.sort {
        let mut reader = EventReader::new(reader, format);
        let events = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
        return Ok(EventLog {
            events,
            universe: reader.into_universe(),
        });
    }

    let mut raw = Vec::new();
    for record in csv_reader(reader, format).into_records() {
        raw.push(decode_record(&record.map_err(csv_error)?)?);
    }
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by_key(|&i| raw[i].time); // stable: ties keep input order
    let mut universe = NodeUniverse::new();
    let mut events = Vec::with_capacity(raw.len());
    for i in order {
        let seq = i as u64;
        let r = &raw[i];
        events.push(Event {
            user: universe.intern_user(&r.user, seq)?,
            article: universe.intern_article(&r.article, seq)?,
            time: r.time,
            seq,
        });
    }
    Ok(EventLog { events, universe })
}

/// Reads an event file from disk. See [`read_events`].
pub fn parse_events(path: impl AsRef<Path>, format: &EventFormat) -> Result<EventLog, IngestError> {
    let file = File::open(path)?;
    read_events(BufReader::with_capacity(1 << 20, file), format)
}

/// Writes events in the format [`read_events`] consumes.
pub fn write_events<W: Write>(
    mut out: W,
    events: &[Event],
    universe: &NodeUniverse,
    delimiter: u8,
) -> io::Result<()> {
    let d = delimiter as char;
    for e in events {
        writeln!(
            out,
            "{}{d}{}{d}{}",
            universe.user_name(e.user),
            universe.article_name(e.article),
            e.time
        )?;
    }
    out.flush()
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "u#{}", self.0)
    }
}

impl fmt::Display for ArticleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a#{}", self.0)
    }
}
