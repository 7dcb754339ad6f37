//! Sensor events and the line-oriented log format.
//!
//! One record per line:
//!
//! ```text
//! timestamp,count,package.class.method.id.vid.vvid,value
//! ```
//!
//! `timestamp` is epoch milliseconds and `count` disambiguates records that
//! share a timestamp. The value is decoded according to the `vid` segment of
//! the sensor id: `0` is a 64-bit measurement, `1` a 32-bit state code and
//! `2` a free-form string. String values may contain commas, so a record is
//! split on its first three commas only.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

/// `vid` of 64-bit numeric measurements (durations, sizes).
pub const VID_NUMERIC: u32 = 0;
/// `vid` of 32-bit state codes.
pub const VID_STATE: u32 = 1;
/// `vid` of string payloads.
pub const VID_TEXT: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("malformed sensor id `{sid}`: {reason}")]
    MalformedSid { sid: String, reason: String },
    #[error("value `{value}` cannot be decoded for vid {vid}")]
    ValueTypeMismatch { vid: u32, value: String },
}

/// Identity of one injected sensor point: `package.class.method.id.vid.vvid`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SensorId {
    package: String,
    class: String,
    method: String,
    id: u32,
    vid: u32,
    vvid: u32,
}

impl SensorId {
    pub fn new(
        package: impl Into<String>,
        class: impl Into<String>,
        method: impl Into<String>,
        id: u32,
        vid: u32,
        vvid: u32,
    ) -> Result<Self, ParseError> {
        let sid = SensorId {
            package: package.into(),
            class: class.into(),
            method: method.into(),
            id,
            vid,
            vvid,
        };
        let bad = |reason: &str| ParseError::MalformedSid {
            sid: sid.to_string(),
            reason: reason.to_string(),
        };
        if sid.package.split('.').any(|s| !valid_segment(s)) {
            return Err(bad("invalid package segment"));
        }
        if !valid_segment(&sid.class) {
            return Err(bad("invalid class segment"));
        }
        if !valid_segment(&sid.method) {
            return Err(bad("invalid method segment"));
        }
        Ok(sid)
    }

    pub fn package(&self) -> &str {
        &self.package
    }

    pub fn class(&self) -> &str {
        &self.class
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    /// Overload discriminator.
    pub fn id(&self) -> u32 {
        self.id
    }

    /// Value-type discriminator.
    pub fn vid(&self) -> u32 {
        self.vid
    }

    /// Discriminates co-located sensors in the same method.
    pub fn vvid(&self) -> u32 {
        self.vvid
    }

    /// Same sensor point with a different `vvid`.
    pub fn with_vvid(&self, vvid: u32) -> SensorId {
        SensorId {
            vvid,
            ..self.clone()
        }
    }
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c != '.' && c != ',' && !c.is_whitespace() && !c.is_control())
}

fn parse_decimal<T: FromStr>(s: &str) -> Option<T> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}.{}.{}.{}.{}",
            self.package, self.class, self.method, self.id, self.vid, self.vvid
        )
    }
}

impl FromStr for SensorId {
    type Err = ParseError;

    /// Parses right to left: the package itself is dotted, everything else is
    /// a single segment.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| ParseError::MalformedSid {
            sid: s.to_string(),
            reason: reason.to_string(),
        };
        let mut parts = s.rsplitn(6, '.');
        let mut next = |what: &str| parts.next().ok_or_else(|| bad(&format!("missing {what}")));
        let vvid = next("vvid")?;
        let vid = next("vid")?;
        let id = next("id")?;
        let method = next("method")?;
        let class = next("class")?;
        let package = next("package")?;

        let int = |v: &str, what: &str| {
            parse_decimal::<u32>(v).ok_or_else(|| bad(&format!("{what} is not a decimal integer")))
        };
        let (id, vid, vvid) = (int(id, "id")?, int(vid, "vid")?, int(vvid, "vvid")?);
        SensorId::new(package, class, method, id, vid, vvid)
            .map_err(|_| bad("empty or invalid segment"))
    }
}

/// Payload of a sensor event. The variant is fixed by the SID's `vid`.
#[derive(Debug, Clone, PartialEq)]
pub enum SensorValue {
    /// Finite 64-bit measurement, e.g. a method duration in milliseconds.
    Numeric64(f64),
    State32(u32),
    Text(String),
}

impl SensorValue {
    /// The `vid` this variant is encoded under.
    pub fn vid(&self) -> u32 {
        match self {
            SensorValue::Numeric64(_) => VID_NUMERIC,
            SensorValue::State32(_) => VID_STATE,
            SensorValue::Text(_) => VID_TEXT,
        }
    }

    /// Numeric view of numeric and state values.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            SensorValue::Numeric64(v) => Some(*v),
            SensorValue::State32(v) => Some(f64::from(*v)),
            SensorValue::Text(_) => None,
        }
    }

    fn decode(vid: u32, raw: &str) -> Result<Self, ParseError> {
        let mismatch = || ParseError::ValueTypeMismatch {
            vid,
            value: raw.to_string(),
        };
        match vid {
            VID_NUMERIC => raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(SensorValue::Numeric64)
                .ok_or_else(mismatch),
            VID_STATE => parse_decimal(raw)
                .map(SensorValue::State32)
                .ok_or_else(mismatch),
            VID_TEXT => Ok(SensorValue::Text(raw.to_string())),
            _ => Err(mismatch()),
        }
    }
}

impl fmt::Display for SensorValue {
    /// Decimal rendering without exponent; `f64`'s `Display` never uses
    /// scientific notation and round-trips exactly through `parse`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorValue::Numeric64(v) => write!(f, "{v}"),
            SensorValue::State32(v) => write!(f, "{v}"),
            SensorValue::Text(s) => f.write_str(s),
        }
    }
}

/// One log record.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorEvent {
    /// UNIX epoch milliseconds.
    pub timestamp: u64,
    /// Position among the records sharing `timestamp`, starting at 0.
    pub count: u32,
    pub sid: SensorId,
    pub value: SensorValue,
}

impl SensorEvent {
    pub fn new(timestamp: u64, count: u32, sid: SensorId, value: SensorValue) -> Self {
        SensorEvent {
            timestamp,
            count,
            sid,
            value,
        }
    }

    /// Ordering key of the record within a stream.
    pub fn key(&self) -> (u64, u32) {
        (self.timestamp, self.count)
    }
}

impl fmt::Display for SensorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.timestamp, self.count, self.sid, self.value
        )
    }
}

impl FromStr for SensorEvent {
    type Err = ParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        parse_event(line)
    }
}

/// Parses one record (without its trailing newline).
pub fn parse_event(line: &str) -> Result<SensorEvent, ParseError> {
    let mut fields = line.splitn(4, ',');
    let (Some(ts), Some(count), Some(sid), Some(raw)) =
        (fields.next(), fields.next(), fields.next(), fields.next())
    else {
        return Err(ParseError::MalformedRecord(format!(
            "expected `timestamp,count,SID,value`, got `{line}`"
        )));
    };
    let timestamp = parse_decimal::<u64>(ts).ok_or_else(|| {
        ParseError::MalformedRecord(format!("timestamp `{ts}` is not an integer"))
    })?;
    let count = parse_decimal::<u32>(count)
        .ok_or_else(|| ParseError::MalformedRecord(format!("count `{count}` is not an integer")))?;
    let sid: SensorId = sid.parse()?;
    let value = SensorValue::decode(sid.vid(), raw)?;
    Ok(SensorEvent {
        timestamp,
        count,
        sid,
        value,
    })
}

/// Renders one record without a trailing newline.
pub fn format_event(event: &SensorEvent) -> String {
    event.to_string()
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}")]
    Parse {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("reading log: {0}")]
    Io(#[from] std::io::Error),
}

impl LogError {
    /// 1-based line number of a parse failure.
    pub fn line(&self) -> Option<usize> {
        match self {
            LogError::Parse { line, .. } => Some(*line),
            LogError::Io(_) => None,
        }
    }
}

/// A record whose `(timestamp, count)` does not advance past its predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderWarning {
    pub line: usize,
    pub previous: (u64, u32),
    pub current: (u64, u32),
}

impl fmt::Display for OrderWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: record ({}, {}) does not follow ({}, {})",
            self.line, self.current.0, self.current.1, self.previous.0, self.previous.1
        )
    }
}

/// Events of one log in file order, plus any ordering anomalies seen.
#[derive(Debug, Clone, Default)]
pub struct Log {
    pub events: Vec<SensorEvent>,
    pub warnings: Vec<OrderWarning>,
}

/// Streaming reader over a newline-delimited log. Blank lines are skipped.
pub struct LogReader<R> {
    inner: R,
    line: usize,
    buf: String,
    last: Option<(u64, u32)>,
    warnings: Vec<OrderWarning>,
}

impl<R: BufRead> LogReader<R> {
    pub fn new(inner: R) -> Self {
        LogReader {
            inner,
            line: 0,
            buf: String::new(),
            last: None,
            warnings: Vec::new(),
        }
    }

    /// Ordering anomalies encountered so far.
    pub fn warnings(&self) -> &[OrderWarning] {
        &self.warnings
    }

    pub fn into_warnings(self) -> Vec<OrderWarning> {
        self.warnings
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<SensorEvent, LogError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e.into())),
            }
            self.line += 1;
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.is_empty() {
                continue;
            }
            let event = match parse_event(text) {
                Ok(e) => e,
                Err(source) => {
                    return Some(Err(LogError::Parse {
                        line: self.line,
                        source,
                    }))
                }
            };
            let key = event.key();
            if let Some(prev) = self.last {
                if key <= prev {
                    let w = OrderWarning {
                        line: self.line,
                        previous: prev,
                        current: key,
                    };
                    log::warn!("{w}");
                    self.warnings.push(w);
                }
            }
            self.last = Some(key);
            return Some(Ok(event));
        }
    }
}

/// Reads a whole log, stopping at the first malformed line.
pub fn read_log<R: BufRead>(source: R) -> Result<Log, LogError> {
    let mut reader = LogReader::new(source);
    let events = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(Log {
        events,
        warnings: reader.into_warnings(),
    })
}

/// Writes events one per line.
pub fn write_log<W: Write>(mut out: W, events: &[SensorEvent]) -> std::io::Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    out.flush()
}

/// Hands out per-timestamp counts in emission order.
#[derive(Debug, Default, Clone)]
pub struct CountAssigner {
    current: Option<(u64, u32)>,
}

impl CountAssigner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Next count for a record at `timestamp`. Restarts at 0 whenever the
    /// timestamp changes.
    pub fn next(&mut self, timestamp: u64) -> u32 {
        let count = match self.current {
            Some((ts, c)) if ts == timestamp => c + 1,
            _ => 0,
        };
        self.current = Some((timestamp, count));
        count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sid(s: &str) -> SensorId {
        s.parse().unwrap()
    }

    #[test]
    fn parses_numeric_record() {
        let e = parse_event("1370000000123,0,org.app.Core.login.0.0.0,12").unwrap();
        assert_eq!(e.timestamp, 1370000000123);
        assert_eq!(e.count, 0);
        assert_eq!(e.sid.package(), "org.app");
        assert_eq!(e.sid.class(), "Core");
        assert_eq!(e.sid.method(), "login");
        assert_eq!((e.sid.id(), e.sid.vid(), e.sid.vvid()), (0, 0, 0));
        assert_eq!(e.value, SensorValue::Numeric64(12.0));
    }

    #[test]
    fn parses_state_record() {
        let e = parse_event("1370000000123,1,org.app.Core.login.1.1.0,1").unwrap();
        assert_eq!(e.count, 1);
        assert_eq!(e.sid.id(), 1);
        assert_eq!(e.value, SensorValue::State32(1));
    }

    #[test]
    fn rejects_non_integer_timestamp() {
        assert!(matches!(
            parse_event("abc,0,x.y.z.0.0.0,1"),
            Err(ParseError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_event("1,-1,x.y.z.0.0.0,1"),
            Err(ParseError::MalformedRecord(_))
        ));
        assert!(matches!(
            parse_event("1,0,x.y.z.0.0.0"),
            Err(ParseError::MalformedRecord(_))
        ));
    }

    #[test]
    fn rejects_bad_sids() {
        for s in [
            "a.b.c.0.0",
            "a.b.c.x.0.0",
            "a.b.c.0.0.-1",
            ".b.c.0.0.0",
            "a..c.0.0.0",
        ] {
            assert!(
                matches!(s.parse::<SensorId>(), Err(ParseError::MalformedSid { .. })),
                "{s}"
            );
        }
    }

    #[test]
    fn rejects_undecodable_values() {
        for line in [
            "1,0,a.b.c.0.0.0,twelve",
            "1,0,a.b.c.0.0.0,inf",
            "1,0,a.b.c.0.1.0,-3",
            "1,0,a.b.c.0.1.0,1.5",
            "1,0,a.b.c.0.9.0,1",
        ] {
            assert!(
                matches!(parse_event(line), Err(ParseError::ValueTypeMismatch { .. })),
                "{line}"
            );
        }
    }

    #[test]
    fn formats_zero_event() {
        let e = SensorEvent::new(0, 0, sid("a.b.c.0.0.0"), SensorValue::Numeric64(0.0));
        assert_eq!(format_event(&e), "0,0,a.b.c.0.0.0,0");
    }

    #[test]
    fn text_with_commas_survives() {
        let e = SensorEvent::new(
            5,
            2,
            sid("org.x.Http.header.0.2.1"),
            SensorValue::Text("Mozilla/5.0 (X11, Linux), a,b,,c".into()),
        );
        let line = format_event(&e);
        assert!(line.ends_with(",Mozilla/5.0 (X11, Linux), a,b,,c"));
        assert_eq!(parse_event(&line).unwrap(), e);
    }

    #[test]
    fn numeric_rendering_has_no_exponent() {
        let v = SensorValue::Numeric64(1e21);
        assert_eq!(v.to_string(), "1000000000000000000000");
        assert_eq!(SensorValue::Numeric64(404.0).to_string(), "404");
    }

    #[test]
    fn deep_package_parses_from_the_right() {
        let s = sid("org.opencms.jsp.util.CmsJspStandardContextBean.getPage.3.0.7");
        assert_eq!(s.package(), "org.opencms.jsp.util");
        assert_eq!(s.class(), "CmsJspStandardContextBean");
        assert_eq!(s.method(), "getPage");
        assert_eq!((s.id(), s.vid(), s.vvid()), (3, 0, 7));
    }

    #[test]
    fn read_log_empty() {
        let log = read_log("".as_bytes()).unwrap();
        assert!(log.events.is_empty());
        assert!(log.warnings.is_empty());
    }

    #[test]
    fn read_log_in_order() {
        let text = "1,0,a.b.c.0.0.0,1\n1,1,a.b.d.0.0.0,2\n2,0,a.b.c.0.0.0,3\n";
        let log = read_log(text.as_bytes()).unwrap();
        assert_eq!(log.events.len(), 3);
        let values: Vec<_> = log.events.iter().map(|e| e.value.clone()).collect();
        assert_eq!(
            values,
            vec![
                SensorValue::Numeric64(1.0),
                SensorValue::Numeric64(2.0),
                SensorValue::Numeric64(3.0)
            ]
        );
        assert!(log.warnings.is_empty());
    }

    #[test]
    fn read_log_reports_line_of_malformed_record() {
        let text = "1,0,a.b.c.0.0.0,1\nnot a record\n2,0,a.b.c.0.0.0,3\n";
        let err = read_log(text.as_bytes()).unwrap_err();
        assert_eq!(err.line(), Some(2));
    }

    #[test]
    fn out_of_order_is_a_warning() {
        let text = "5,0,a.b.c.0.0.0,1\n3,0,a.b.c.0.0.0,2\n3,0,a.b.c.0.0.0,2\n";
        let log = read_log(text.as_bytes()).unwrap();
        assert_eq!(log.events.len(), 3);
        assert_eq!(log.warnings.len(), 2);
        assert_eq!(log.warnings[0].line, 2);
        assert_eq!(log.warnings[0].previous, (5, 0));
        assert_eq!(log.warnings[1].current, (3, 0));
    }

    #[test]
    fn count_assigner_resets_per_timestamp() {
        let mut c = CountAssigner::new();
        let got: Vec<_> = [7, 7, 7, 8, 8, 9].iter().map(|&t| c.next(t)).collect();
        assert_eq!(got, vec![0, 1, 2, 0, 1, 0]);
    }
}
