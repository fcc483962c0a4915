//! Parsers for the three source CSV families and drainage-phase segmentation.
//!
//! Parsing is total: a malformed row is skipped and listed in the
//! [`IngestReport`] with its line number, never a panic. `strict` mode turns
//! the first skip into an error instead.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::hash::Hash;
use std::io::{self, Read, Write};
use std::path::Path;

use csv::{ByteRecord, ReaderBuilder, Trim};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{ParsedTimestamp, Timestamp};

pub const METEO_COLUMNS: [&str; 6] = [
    "timestamp",
    "t_ambient_c",
    "rh_pct",
    "precip_mm",
    "wind_speed_ms",
    "wind_dir_deg",
];
pub const PROBE_COLUMNS: [&str; 4] = ["timestamp", "probe_id", "depth_cm", "temp_c"];
pub const OPS_COLUMNS: [&str; 3] = ["timestamp", "valve_state", "water_level_cm"];

pub const PROBE_IDS: [u8; 3] = [1, 2, 3];
/// 5, 15, ..., 115 cm.
pub const PROBE_DEPTHS_CM: [u32; 12] = [5, 15, 25, 35, 45, 55, 65, 75, 85, 95, 105, 115];
pub const TOPSOIL_DEPTH_CM: u32 = 5;
pub const SENSORS_PER_TIMESTEP: usize = PROBE_IDS.len() * PROBE_DEPTHS_CM.len();

pub const AMBIENT_T_RANGE: (f64, f64) = (-20.0, 60.0);
pub const PROBE_T_RANGE: (f64, f64) = (-5.0, 60.0);
pub const DEFAULT_LEVEL_FLOOR_CM: f64 = 1.0;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{source_name}: missing column `{column}` in header")]
    Schema { source_name: String, column: String },
    #[error("{source_name}:{line}: {reason}: {detail}")]
    Strict {
        source_name: String,
        line: u64,
        reason: SkipReason,
        detail: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    MissingField,
    BadTimestamp,
    BadNumber,
    RangeViolation,
    ProbeIdViolation,
    DepthSetViolation,
    EnumValueViolation,
    Duplicate,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::MissingField => "missing field",
            Self::BadTimestamp => "unparseable timestamp",
            Self::BadNumber => "unparseable number",
            Self::RangeViolation => "range violation",
            Self::ProbeIdViolation => "probe id violation",
            Self::DepthSetViolation => "depth-set violation",
            Self::EnumValueViolation => "enumerated-value violation",
            Self::Duplicate => "duplicate key",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: u64,
    pub reason: SkipReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub source: String,
    pub rows_read: usize,
    pub rows_kept: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
    pub issues: Vec<RowIssue>,
    /// Count of rows per source UTC offset (`"+02:00"`, or `"none"` when the text had no offset).
    pub utc_offsets: BTreeMap<String, usize>,
}

impl IngestReport {
    pub fn rows_skipped(&self) -> usize {
        self.skipped.values().sum()
    }

    fn skip(&mut self, line: u64, reason: SkipReason, detail: String) {
        *self.skipped.entry(reason).or_default() += 1;
        self.issues.push(RowIssue {
            line,
            reason,
            detail,
        });
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} rows read, {} kept, {} skipped",
            self.source,
            self.rows_read,
            self.rows_kept,
            self.rows_skipped()
        )?;
        for (reason, n) in &self.skipped {
            writeln!(f, "  {reason}: {n}")?;
        }
        for (offset, n) in &self.utc_offsets {
            writeln!(f, "  utc offset {offset}: {n} rows")?;
        }
        for issue in self.issues.iter().take(20) {
            writeln!(
                f,
                "  line {}: {}: {}",
                issue.line, issue.reason, issue.detail
            )?;
        }
        if self.issues.len() > 20 {
            writeln!(f, "  ... {} more", self.issues.len() - 20)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeteoRecord {
    pub ts: Timestamp,
    pub t_ambient_c: f64,
    pub rh_pct: f64,
    pub precip_mm: f64,
    pub wind_speed_ms: f64,
    pub wind_dir_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub ts: Timestamp,
    pub probe_id: u8,
    pub depth_cm: u32,
    pub temp_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValveState {
    Open,
    Closed,
}

impl fmt::Display for ValveState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Open => "open",
            Self::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpsRecord {
    pub ts: Timestamp,
    pub valve_state: ValveState,
    pub water_level_cm: f64,
}

/// Half-open interval `[start, end)` during which the basin drains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrainageInterval {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl DrainageInterval {
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts < self.end
    }
}

/// Whether `ts` falls in any of the sorted, disjoint `intervals`.
pub fn in_any_interval(intervals: &[DrainageInterval], ts: Timestamp) -> bool {
    let i = intervals.partition_point(|iv| iv.end <= ts);
    intervals.get(i).is_some_and(|iv| iv.contains(ts))
}

type RowResult<T> = Result<(ParsedTimestamp, T), (SkipReason, String)>;

struct Fields<'a> {
    record: &'a ByteRecord,
    index: &'a [usize],
    names: &'a [&'a str],
}

impl Fields<'_> {
    fn text(&self, col: usize) -> Result<&str, (SkipReason, String)> {
        let name = self.names[col];
        let raw = self
            .record
            .get(self.index[col])
            .ok_or_else(|| (SkipReason::MissingField, format!("no value for `{name}`")))?;
        let s = std::str::from_utf8(raw)
            .map_err(|_| (SkipReason::BadNumber, format!("`{name}` is not UTF-8")))?
            .trim();
        if s.is_empty() {
            return Err((SkipReason::MissingField, format!("empty `{name}`")));
        }
        Ok(s)
    }

    fn timestamp(&self, col: usize) -> Result<ParsedTimestamp, (SkipReason, String)> {
        let s = self.text(col)?;
        Timestamp::parse(s).map_err(|e| (SkipReason::BadTimestamp, e.to_string()))
    }

    fn number(&self, col: usize) -> Result<f64, (SkipReason, String)> {
        let s = self.text(col)?;
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err((
                SkipReason::BadNumber,
                format!("`{}` = {s:?}", self.names[col]),
            )),
        }
    }
}

fn check_range(
    name: &str,
    v: f64,
    lo: f64,
    hi: f64,
    hi_inclusive: bool,
) -> Result<(), (SkipReason, String)> {
    let ok = v >= lo && if hi_inclusive { v <= hi } else { v < hi };
    if ok {
        Ok(())
    } else {
        let close = if hi_inclusive { ']' } else { ')' };
        Err((
            SkipReason::RangeViolation,
            format!("`{name}` = {v} outside [{lo}, {hi}{close}"),
        ))
    }
}

fn format_offset(minutes: Option<i32>) -> String {
    match minutes {
        None => "none".to_string(),
        Some(m) => {
            let sign = if m < 0 { '-' } else { '+' };
            format!("{sign}{:02}:{:02}", m.abs() / 60, m.abs() % 60)
        }
    }
}

fn read_table<R, T, K>(
    reader: R,
    source_name: &str,
    columns: &[&str],
    opts: ParseOptions,
    parse_row: impl Fn(&Fields) -> RowResult<T>,
    key: impl Fn(&T) -> K,
    ts_of: impl Fn(&T) -> Timestamp,
) -> Result<(Vec<T>, IngestReport), IngestError>
where
    R: Read,
    K: Eq + Hash,
{
    let mut rdr = ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .trim(Trim::All)
        .from_reader(reader);
    let io_err = |e: csv::Error| IngestError::Io {
        path: source_name.to_string(),
        source: io::Error::other(e),
    };
    let header = rdr.byte_headers().map_err(io_err)?.clone();
    let mut index = Vec::with_capacity(columns.len());
    for col in columns {
        let pos = header
            .iter()
            .position(|h| std::str::from_utf8(h).map(str::trim) == Ok(*col))
            .ok_or_else(|| IngestError::Schema {
                source_name: source_name.to_string(),
                column: col.to_string(),
            })?;
        index.push(pos);
    }

    let mut report = IngestReport {
        source: source_name.to_string(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut record = ByteRecord::new();
    loop {
        match rdr.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(io_err(e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        report.rows_read += 1;
        let fields = Fields {
            record: &record,
            index: &index,
            names: columns,
        };
        let outcome = parse_row(&fields).and_then(|(pts, row)| {
            if seen.insert(key(&row)) {
                Ok((pts, row))
            } else {
                Err((
                    SkipReason::Duplicate,
                    format!("repeated key at {}", ts_of(&row)),
                ))
            }
        });
        match outcome {
            Ok((pts, row)) => {
                *report
                    .utc_offsets
                    .entry(format_offset(pts.offset_minutes))
                    .or_default() += 1;
                out.push(row);
            }
            Err((reason, detail)) => {
                if opts.strict {
                    return Err(IngestError::Strict {
                        source_name: source_name.to_string(),
                        line,
                        reason,
                        detail,
                    });
                }
                report.skip(line, reason, detail);
            }
        }
    }
    out.sort_by_key(|r| ts_of(r));
    report.rows_kept = out.len();
    Ok((out, report))
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_meteo<R: Read>(
    reader: R,
    source_name: &str,
    opts: ParseOptions,
) -> Result<(Vec<MeteoRecord>, IngestReport), IngestError> {
    read_table(
        reader,
        source_name,
        &METEO_COLUMNS,
        opts,
        |f| {
            let pts = f.timestamp(0)?;
            let rec = MeteoRecord {
                ts: pts.ts,
                t_ambient_c: f.number(1)?,
                rh_pct: f.number(2)?,
                precip_mm: f.number(3)?,
                wind_speed_ms: f.number(4)?,
                wind_dir_deg: f.number(5)?,
            };
            check_range(
                "t_ambient_c",
                rec.t_ambient_c,
                AMBIENT_T_RANGE.0,
                AMBIENT_T_RANGE.1,
                true,
            )?;
            check_range("rh_pct", rec.rh_pct, 0.0, 100.0, true)?;
            check_range("precip_mm", rec.precip_mm, 0.0, f64::INFINITY, false)?;
            check_range(
                "wind_speed_ms",
                rec.wind_speed_ms,
                0.0,
                f64::INFINITY,
                false,
            )?;
            check_range("wind_dir_deg", rec.wind_dir_deg, 0.0, 360.0, false)?;
            Ok((pts, rec))
        },
        |r| r.ts,
        |r| r.ts,
    )
}

pub fn parse_meteo_csv(
    path: impl AsRef<Path>,
    opts: ParseOptions,
) -> Result<(Vec<MeteoRecord>, IngestReport), IngestError> {
    let path = path.as_ref();
    read_meteo(open(path)?, &path.display().to_string(), opts)
}

pub fn read_probes<R: Read>(
    reader: R,
    source_name: &str,
    opts: ParseOptions,
) -> Result<(Vec<ProbeRecord>, IngestReport), IngestError> {
    read_table(
        reader,
        source_name,
        &PROBE_COLUMNS,
        opts,
        |f| {
            let pts = f.timestamp(0)?;
            let probe = f.text(1)?;
            let probe_id = probe
                .parse::<u8>()
                .ok()
                .filter(|p| PROBE_IDS.contains(p))
                .ok_or_else(|| {
                    (
                        SkipReason::ProbeIdViolation,
                        format!("probe_id {probe:?} not in {{1,2,3}}"),
                    )
                })?;
            let depth = f.text(2)?;
            let depth_cm = depth
                .parse::<u32>()
                .ok()
                .filter(|d| PROBE_DEPTHS_CM.contains(d))
                .ok_or_else(|| {
                    (
                        SkipReason::DepthSetViolation,
                        format!("depth_cm {depth:?} not in 5..=115 step 10"),
                    )
                })?;
            let temp_c = f.number(3)?;
            check_range("temp_c", temp_c, PROBE_T_RANGE.0, PROBE_T_RANGE.1, true)?;
            Ok((
                pts,
                ProbeRecord {
                    ts: pts.ts,
                    probe_id,
                    depth_cm,
                    temp_c,
                },
            ))
        },
        |r| (r.ts, r.probe_id, r.depth_cm),
        |r| r.ts,
    )
}

pub fn parse_probe_csv(
    path: impl AsRef<Path>,
    opts: ParseOptions,
) -> Result<(Vec<ProbeRecord>, IngestReport), IngestError> {
    let path = path.as_ref();
    read_probes(open(path)?, &path.display().to_string(), opts)
}

pub fn read_ops<R: Read>(
    reader: R,
    source_name: &str,
    opts: ParseOptions,
) -> Result<(Vec<OpsRecord>, IngestReport), IngestError> {
    read_table(
        reader,
        source_name,
        &OPS_COLUMNS,
        opts,
        |f| {
            let pts = f.timestamp(0)?;
            let state = f.text(1)?;
            let valve_state = if state.eq_ignore_ascii_case("open") {
                ValveState::Open
            } else if state.eq_ignore_ascii_case("closed") {
                ValveState::Closed
            } else {
                return Err((
                    SkipReason::EnumValueViolation,
                    format!("valve_state {state:?} not open/closed"),
                ));
            };
            let water_level_cm = f.number(2)?;
            check_range("water_level_cm", water_level_cm, 0.0, f64::INFINITY, false)?;
            Ok((
                pts,
                OpsRecord {
                    ts: pts.ts,
                    valve_state,
                    water_level_cm,
                },
            ))
        },
        |r| r.ts,
        |r| r.ts,
    )
}

pub fn parse_ops_csv(
    path: impl AsRef<Path>,
    opts: ParseOptions,
) -> Result<(Vec<OpsRecord>, IngestReport), IngestError> {
    let path = path.as_ref();
    read_ops(open(path)?, &path.display().to_string(), opts)
}

fn write_comment<W: Write>(w: &mut W, comment: Option<&str>) -> io::Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(w, "# {line}")?;
        }
    }
    Ok(())
}

/// Writes records in the parser's schema. Floats use the shortest text that
/// parses back to the same bits.
pub fn write_meteo<W: Write>(
    mut w: W,
    records: &[MeteoRecord],
    comment: Option<&str>,
) -> io::Result<()> {
    write_comment(&mut w, comment)?;
    writeln!(w, "{}", METEO_COLUMNS.join(","))?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.ts, r.t_ambient_c, r.rh_pct, r.precip_mm, r.wind_speed_ms, r.wind_dir_deg
        )?;
    }
    Ok(())
}

pub fn write_probes<W: Write>(
    mut w: W,
    records: &[ProbeRecord],
    comment: Option<&str>,
) -> io::Result<()> {
    write_comment(&mut w, comment)?;
    writeln!(w, "{}", PROBE_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.ts, r.probe_id, r.depth_cm, r.temp_c)?;
    }
    Ok(())
}

pub fn write_ops<W: Write>(
    mut w: W,
    records: &[OpsRecord],
    comment: Option<&str>,
) -> io::Result<()> {
    write_comment(&mut w, comment)?;
    writeln!(w, "{}", OPS_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{},{},{}", r.ts, r.valve_state, r.water_level_cm)?;
    }
    Ok(())
}

/// Segments the operations log into drainage phases.
///
/// A phase opens at the first record with the valve closed and the water
/// level above `level_floor_cm`, and closes at the first later record where
/// the valve is open or the level is at or below the floor. A phase still open
/// at the end of the log closes at the last record's timestamp.
pub fn identify_drainage_phases(ops: &[OpsRecord], level_floor_cm: f64) -> Vec<DrainageInterval> {
    let mut sorted: Vec<&OpsRecord> = ops.iter().collect();
    sorted.sort_by_key(|r| r.ts);

    let mut intervals = Vec::new();
    let mut open_at: Option<Timestamp> = None;
    for rec in &sorted {
        let draining = rec.valve_state == ValveState::Closed && rec.water_level_cm > level_floor_cm;
        match (open_at, draining) {
            (None, true) => open_at = Some(rec.ts),
            (Some(start), false) => {
                if start < rec.ts {
                    intervals.push(DrainageInterval { start, end: rec.ts });
                }
                open_at = None;
            }
            _ => {}
        }
    }
    if let (Some(start), Some(last)) = (open_at, sorted.last()) {
        if start < last.ts {
            intervals.push(DrainageInterval {
                start,
                end: last.ts,
            });
        }
    }
    intervals
}

/// Greatest common divisor of consecutive timestamp gaps, in minutes.
pub fn infer_step(timestamps: impl IntoIterator<Item = Timestamp>) -> Option<i64> {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut prev: Option<Timestamp> = None;
    let mut g = 0;
    for ts in timestamps {
        if let Some(p) = prev {
            let d = (ts.minutes() - p.minutes()).abs();
            if d > 0 {
                g = gcd(g, d);
            }
        }
        prev = Some(ts);
    }
    (g > 0).then_some(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meteo(text: &str) -> (Vec<MeteoRecord>, IngestReport) {
        read_meteo(text.as_bytes(), "meteo", ParseOptions::default()).unwrap()
    }

    const METEO_HEADER: &str =
        "timestamp,t_ambient_c,rh_pct,precip_mm,wind_speed_ms,wind_dir_deg\n";

    #[test]
    fn meteo_well_formed() {
        let text = format!(
            "{METEO_HEADER}2022-06-03T00:20:00Z,20.5,60,0,1.2,180\n2022-06-03T00:00:00Z,20,61,0,1,170\n2022-06-03T00:10:00Z,20.1,60.5,0.2,1.1,175\n"
        );
        let (recs, report) = meteo(&text);
        assert_eq!(recs.len(), 3);
        assert_eq!(report.rows_skipped(), 0);
        assert!(recs.windows(2).all(|w| w[0].ts < w[1].ts));
        assert_eq!(report.utc_offsets.get("+00:00"), Some(&3));
    }

    #[test]
    fn meteo_range_violation_is_reported() {
        let text = format!("{METEO_HEADER}2022-06-03T00:00:00Z,20,134,0,1,170\n2022-06-03T00:10:00Z,20,50,0,1,170\n");
        let (recs, report) = meteo(&text);
        assert_eq!(recs.len(), 1);
        assert_eq!(report.skipped.get(&SkipReason::RangeViolation), Some(&1));
        assert_eq!(report.issues[0].line, 2);
        assert!(report.issues[0].detail.contains("rh_pct"));
    }

    #[test]
    fn meteo_header_only_and_schema() {
        let (recs, report) = meteo(METEO_HEADER);
        assert!(recs.is_empty());
        assert_eq!(report.rows_read, 0);

        let err = read_meteo(
            "timestamp,t_ambient_c,humidity\n".as_bytes(),
            "m",
            ParseOptions::default(),
        )
        .unwrap_err();
        match err {
            IngestError::Schema { column, .. } => assert_eq!(column, "rh_pct"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            read_meteo("".as_bytes(), "m", ParseOptions::default()),
            Err(IngestError::Schema { .. })
        ));
    }

    #[test]
    fn meteo_garbage_rows_are_skipped() {
        let mut text = format!(
            "{METEO_HEADER}not-a-date,1,2,3,4,5\n2022-06-03T00:00:00Z,abc,2,3,4,5\n2022-06-03T00:00:00Z,1\n2022-06-03T00:00:00Z,NaN,2,3,4,5\n"
        )
        .into_bytes();
        text.extend_from_slice(b"\xff\xfe,1,2,3,4,5\n");
        let (recs, report) = read_meteo(text.as_slice(), "m", ParseOptions::default()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.rows_read, 5);
        assert_eq!(report.rows_skipped(), 5);
    }

    #[test]
    fn strict_mode_promotes_skips() {
        let text = format!("{METEO_HEADER}2022-06-03T00:00:00Z,20,134,0,1,170\n");
        let err = read_meteo(text.as_bytes(), "m", ParseOptions { strict: true }).unwrap_err();
        assert!(matches!(
            err,
            IngestError::Strict {
                line: 2,
                reason: SkipReason::RangeViolation,
                ..
            }
        ));
    }

    #[test]
    fn local_offsets_are_normalized_and_recorded() {
        let text = format!("{METEO_HEADER}2022-06-03T03:00:00+03:00,20,50,0,1,170\n");
        let (recs, report) = meteo(&text);
        assert_eq!(
            recs[0].ts,
            Timestamp::from_ymd_hm(2022, 6, 3, 0, 0).unwrap()
        );
        assert_eq!(report.utc_offsets.get("+03:00"), Some(&1));
    }

    #[test]
    fn probe_full_timestep() {
        let mut text = String::from("timestamp,probe_id,depth_cm,temp_c\n");
        for p in PROBE_IDS {
            for d in PROBE_DEPTHS_CM {
                text.push_str(&format!("2022-06-03T00:00:00Z,{p},{d},21.5\n"));
            }
        }
        let (recs, report) = read_probes(text.as_bytes(), "p", ParseOptions::default()).unwrap();
        assert_eq!(recs.len(), SENSORS_PER_TIMESTEP);
        assert_eq!(recs.len(), 36);
        assert_eq!(report.rows_skipped(), 0);
    }

    #[test]
    fn probe_depth_and_duplicates() {
        let text = "timestamp,probe_id,depth_cm,temp_c\n\
            2022-06-03T00:00:00Z,1,12,20\n\
            2022-06-03T00:00:00Z,1,5,20\n\
            2022-06-03T00:00:00Z,1,5,25\n\
            2022-06-03T00:00:00Z,4,5,25\n";
        let (recs, report) = read_probes(text.as_bytes(), "p", ParseOptions::default()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].temp_c, 20.0);
        assert_eq!(report.skipped.get(&SkipReason::DepthSetViolation), Some(&1));
        assert_eq!(report.skipped.get(&SkipReason::Duplicate), Some(&1));
        assert_eq!(report.skipped.get(&SkipReason::ProbeIdViolation), Some(&1));
        let dup = report
            .issues
            .iter()
            .find(|i| i.reason == SkipReason::Duplicate)
            .unwrap();
        assert_eq!(dup.line, 4);
    }

    #[test]
    fn ops_parsing() {
        let text = "timestamp,valve_state,water_level_cm\n\
            2022-06-03T00:00:00Z,open,10\n\
            2022-06-03T00:30:00Z,CLOSED,40\n\
            2022-06-03T01:00:00Z,Open,30\n\
            2022-06-03T01:30:00Z,ajar,30\n\
            2022-06-03T02:00:00Z,closed,-1\n";
        let (recs, report) = read_ops(text.as_bytes(), "o", ParseOptions::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].valve_state, ValveState::Closed);
        assert_eq!(
            report.skipped.get(&SkipReason::EnumValueViolation),
            Some(&1)
        );
        assert_eq!(report.skipped.get(&SkipReason::RangeViolation), Some(&1));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            parse_ops_csv("/nonexistent/ops.csv", ParseOptions::default()),
            Err(IngestError::Io { .. })
        ));
    }

    fn op(minute: i64, state: ValveState, level: f64) -> OpsRecord {
        OpsRecord {
            ts: Timestamp::from_minutes(minute),
            valve_state: state,
            water_level_cm: level,
        }
    }

    #[test]
    fn drainage_closed_then_open() {
        use ValveState::*;
        let ops = [
            op(0, Closed, 40.0),
            op(1, Closed, 35.0),
            op(2, Closed, 30.0),
            op(5, Open, 10.0),
        ];
        assert_eq!(
            identify_drainage_phases(&ops, 1.0),
            vec![DrainageInterval {
                start: Timestamp::from_minutes(0),
                end: Timestamp::from_minutes(5)
            }]
        );
    }

    #[test]
    fn drainage_valve_never_closes() {
        let ops: Vec<_> = (0..10).map(|i| op(i, ValveState::Open, 30.0)).collect();
        assert!(identify_drainage_phases(&ops, 1.0).is_empty());
        assert!(identify_drainage_phases(&[], 1.0).is_empty());
    }

    #[test]
    fn drainage_ends_at_floor_crossing() {
        use ValveState::*;
        let ops = [
            op(0, Closed, 40.0),
            op(1, Closed, 20.0),
            op(2, Closed, 5.0),
            op(3, Closed, 0.0),
            op(4, Closed, 0.0),
        ];
        let iv = identify_drainage_phases(&ops, 1.0);
        assert_eq!(
            iv,
            vec![DrainageInterval {
                start: Timestamp::from_minutes(0),
                end: Timestamp::from_minutes(3)
            }]
        );
    }

    #[test]
    fn drainage_trailing_interval_closes_at_last_record() {
        use ValveState::*;
        let ops = [op(0, Open, 10.0), op(2, Closed, 40.0), op(7, Closed, 30.0)];
        assert_eq!(
            identify_drainage_phases(&ops, 1.0),
            vec![DrainageInterval {
                start: Timestamp::from_minutes(2),
                end: Timestamp::from_minutes(7)
            }]
        );
    }

    #[test]
    fn interval_lookup() {
        let iv = [
            DrainageInterval {
                start: Timestamp::from_minutes(0),
                end: Timestamp::from_minutes(10),
            },
            DrainageInterval {
                start: Timestamp::from_minutes(20),
                end: Timestamp::from_minutes(30),
            },
        ];
        assert!(in_any_interval(&iv, Timestamp::from_minutes(0)));
        assert!(!in_any_interval(&iv, Timestamp::from_minutes(10)));
        assert!(in_any_interval(&iv, Timestamp::from_minutes(29)));
        assert!(!in_any_interval(&iv, Timestamp::from_minutes(30)));
        assert!(!in_any_interval(&iv, Timestamp::from_minutes(-1)));
    }

    #[test]
    fn step_inference() {
        let ts = [0, 10, 20, 40, 50].map(Timestamp::from_minutes);
        assert_eq!(infer_step(ts), Some(10));
        assert_eq!(infer_step([Timestamp::from_minutes(0)]), None);
    }

    fn arb_meteo() -> impl Strategy<Value = MeteoRecord> {
        (
            0i64..5_000_000,
            -20.0f64..=60.0,
            0.0f64..=100.0,
            0.0f64..50.0,
            0.0f64..30.0,
            0.0f64..360.0,
        )
            .prop_map(|(m, t, rh, p, ws, wd)| MeteoRecord {
                ts: Timestamp::from_minutes(27_000_000 + m),
                t_ambient_c: t,
                rh_pct: rh,
                precip_mm: p,
                wind_speed_ms: ws,
                wind_dir_deg: wd,
            })
    }

    proptest! {
        #[test]
        fn meteo_round_trip_is_bit_exact(mut recs in prop::collection::vec(arb_meteo(), 0..40)) {
            recs.sort_by_key(|r| r.ts);
            recs.dedup_by_key(|r| r.ts);
            let mut buf = Vec::new();
            write_meteo(&mut buf, &recs, Some("fixture")).unwrap();
            let (back, report) = read_meteo(buf.as_slice(), "rt", ParseOptions { strict: true }).unwrap();
            prop_assert_eq!(report.rows_kept, recs.len());
            for (a, b) in recs.iter().zip(&back) {
                prop_assert_eq!(a.ts, b.ts);
                prop_assert_eq!(a.t_ambient_c.to_bits(), b.t_ambient_c.to_bits());
                prop_assert_eq!(a.rh_pct.to_bits(), b.rh_pct.to_bits());
                prop_assert_eq!(a.precip_mm.to_bits(), b.precip_mm.to_bits());
                prop_assert_eq!(a.wind_speed_ms.to_bits(), b.wind_speed_ms.to_bits());
                prop_assert_eq!(a.wind_dir_deg.to_bits(), b.wind_dir_deg.to_bits());
            }
        }

        #[test]
        fn parser_is_total(bytes in prop::collection::vec(any::<u8>(), 0..400)) {
            let mut input = METEO_HEADER.as_bytes().to_vec();
            input.extend(bytes);
            let (recs, report) = read_meteo(input.as_slice(), "fuzz", ParseOptions::default()).unwrap();
            prop_assert_eq!(recs.len() + report.rows_skipped(), report.rows_read);
            prop_assert_eq!(report.issues.len(), report.rows_skipped());
        }

        #[test]
        fn drainage_intervals_disjoint_sorted_within_span(
            states in prop::collection::vec((any::<bool>(), 0.0f64..50.0, 1i64..60), 0..80)
        ) {
            let mut t = 0;
            let ops: Vec<OpsRecord> = states.iter().map(|&(closed, level, dt)| {
                t += dt;
                op(t, if closed { ValveState::Closed } else { ValveState::Open }, level)
            }).collect();
            let iv = identify_drainage_phases(&ops, 1.0);
            for w in iv.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
            for i in &iv {
                prop_assert!(i.start < i.end);
                prop_assert!(i.start >= ops[0].ts && i.end <= ops.last().unwrap().ts);
            }
        }
    }
}
