//! Session logs, environment specs and CSV/JSON exports.
//!
//! A session file is JSON Lines: a header object, one object per flight, and
//! an end marker once the session is complete. Every line carries a `type`
//! tag. Indices in files (route, flight, airline) are 1-based.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{ConditionLabel, Environment, EnvironmentSpec, RouteRates};
use crate::error::{Error, Result};
use crate::likelihood::ParticipantHistory;
use crate::policies::AgentConfig;
use crate::simulate::{Step, Trajectory};

pub const FORMAT_VERSION: &str = "1.0";
pub const POINTS_PER_ON_TIME: u64 = 10;
pub const BONUS_PER_ON_TIME: f64 = 0.005;

/// Dollar bonus for `on_time` on-time flights.
pub fn bonus_dollars(on_time: u64) -> f64 {
    on_time as f64 * BONUS_PER_ON_TIME
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectKind {
    Human,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub version: String,
    pub session_id: String,
    pub subject: SubjectKind,
    pub condition: Option<ConditionLabel>,
    pub env: EnvironmentSpec,
    pub env_hash: String,
    pub route_rates: Vec<RouteRates>,
    /// Policy of a bot subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightRecord {
    pub route: usize,
    pub flight: usize,
    pub airline: usize,
    pub outcome: u8,
    pub reaction_time_ms: Option<u64>,
    pub wall_clock: String,
    pub points_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Line {
    Header(SessionHeader),
    Flight(FlightRecord),
    End { completed: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub header: SessionHeader,
    pub rows: Vec<FlightRecord>,
    pub completed: bool,
}

impl SessionRecord {
    pub fn new(
        session_id: impl Into<String>,
        subject: SubjectKind,
        env: &Environment,
        agent: Option<AgentConfig>,
    ) -> Self {
        Self {
            header: SessionHeader {
                version: FORMAT_VERSION.into(),
                session_id: session_id.into(),
                subject,
                condition: env.spec.condition_label,
                env: env.spec.clone(),
                env_hash: env.spec.content_hash(),
                route_rates: env.routes.clone(),
                agent,
            },
            rows: Vec::new(),
            completed: false,
        }
    }

    pub fn expected_rows(&self) -> usize {
        self.header.env.m * self.header.env.t
    }

    pub fn points(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.points_after)
    }

    pub fn on_time(&self) -> u64 {
        self.rows.iter().filter(|r| r.outcome == 1).count() as u64
    }

    /// `(route, flight)` of the next flight, or `None` once every flight is flown.
    pub fn cursor(&self) -> Option<(usize, usize)> {
        let n = self.rows.len();
        let t = self.header.env.t;
        (n < self.expected_rows()).then(|| (n / t + 1, n % t + 1))
    }

    /// Appends the next flight; `airline` is 1-based.
    pub fn push_flight(
        &mut self,
        airline: usize,
        outcome: u8,
        reaction_time_ms: Option<u64>,
        wall_clock: String,
    ) -> Result<&FlightRecord> {
        let (route, flight) = self.cursor().ok_or(Error::RouteComplete {
            flights: self.expected_rows(),
        })?;
        let points_after = self.points() + POINTS_PER_ON_TIME * u64::from(outcome);
        let row = FlightRecord {
            route,
            flight,
            airline,
            outcome,
            reaction_time_ms,
            wall_clock,
            points_after,
        };
        check_row(&self.header, self.rows.last(), &row, self.rows.len() + 1)?;
        self.rows.push(row);
        if self.cursor().is_none() {
            self.completed = true;
        }
        Ok(self.rows.last().expect("just pushed"))
    }

    /// Checks header/row consistency; errors name the first offending row.
    pub fn validate(&self) -> Result<()> {
        check_version(&self.header.version)?;
        self.header.env.validate()?;
        if self.header.route_rates.len() != self.header.env.m
            || self.header.route_rates.iter().any(|r| r.rates.len() != self.header.env.k)
        {
            return Err(Error::Invariant {
                row: 0,
                msg: "route-rate matrix does not match M x K".into(),
            });
        }
        let mut prev = None;
        for (i, row) in self.rows.iter().enumerate() {
            check_row(&self.header, prev, row, i + 1)?;
            prev = Some(row);
        }
        if self.completed && self.rows.len() != self.expected_rows() {
            return Err(Error::Invariant {
                row: self.rows.len(),
                msg: format!("marked complete with {} of {} flights", self.rows.len(), self.expected_rows()),
            });
        }
        Ok(())
    }
}

fn check_version(version: &str) -> Result<()> {
    let major = version.split('.').next().unwrap_or("");
    let ours = FORMAT_VERSION.split('.').next().unwrap_or("");
    if major != ours {
        return Err(Error::Version(version.to_string()));
    }
    Ok(())
}

fn check_row(header: &SessionHeader, prev: Option<&FlightRecord>, row: &FlightRecord, n: usize) -> Result<()> {
    let fail = |msg: String| Err(Error::Invariant { row: n, msg });
    let t = header.env.t;
    let (want_route, want_flight) = ((n - 1) / t + 1, (n - 1) % t + 1);
    if n > header.env.m * t {
        return fail(format!("more than {} flights", header.env.m * t));
    }
    if (row.route, row.flight) != (want_route, want_flight) {
        return fail(format!(
            "expected route {want_route} flight {want_flight}, found route {} flight {}",
            row.route, row.flight
        ));
    }
    if row.airline < 1 || row.airline > header.env.k {
        return fail(format!("airline {} outside 1..={}", row.airline, header.env.k));
    }
    if row.outcome > 1 {
        return fail(format!("outcome {} is not 0 or 1", row.outcome));
    }
    let before = prev.map_or(0, |p| p.points_after);
    if row.points_after != before + POINTS_PER_ON_TIME * u64::from(row.outcome) {
        return fail(format!("points_after {} after {before} with outcome {}", row.points_after, row.outcome));
    }
    if chrono::DateTime::parse_from_rfc3339(&row.wall_clock).is_err() {
        return fail(format!("wall_clock {:?} is not RFC 3339", row.wall_clock));
    }
    Ok(())
}

fn json_line(line: &Line) -> String {
    serde_json::to_string(line).expect("session lines serialise")
}

/// Writes a whole session file, replacing any existing one.
pub fn write_session(path: &Path, record: &SessionRecord) -> Result<()> {
    record.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", json_line(&Line::Header(record.header.clone())))?;
    for row in &record.rows {
        writeln!(w, "{}", json_line(&Line::Flight(row.clone())))?;
    }
    if record.completed {
        writeln!(w, "{}", json_line(&Line::End { completed: true }))?;
    }
    w.flush()?;
    Ok(())
}

/// Append-only writer for a live session.
#[derive(Debug)]
pub struct SessionWriter {
    path: PathBuf,
    file: File,
}

impl SessionWriter {
    pub fn create(path: impl Into<PathBuf>, header: &SessionHeader) -> Result<Self> {
        let path = path.into();
        let mut file = File::create(&path)?;
        writeln!(file, "{}", json_line(&Line::Header(header.clone())))?;
        file.flush()?;
        Ok(Self { path, file })
    }

    /// Reopens an existing session file for appending.
    pub fn append_to(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, row: &FlightRecord) -> Result<()> {
        writeln!(self.file, "{}", json_line(&Line::Flight(row.clone())))?;
        self.file.flush()?;
        Ok(())
    }

    pub fn finish(&mut self) -> Result<()> {
        writeln!(self.file, "{}", json_line(&Line::End { completed: true }))?;
        self.file.sync_all()?;
        Ok(())
    }
}

pub fn read_session(path: &Path) -> Result<SessionRecord> {
    let reader = BufReader::new(File::open(path)?);
    let mut header = None;
    let mut rows = Vec::new();
    let mut completed = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        match (parsed, header.is_some()) {
            (Line::Header(h), false) => {
                check_version(&h.version)?;
                header = Some(h);
            }
            (Line::Header(_), true) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "second header".into(),
                })
            }
            (_, false) => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "missing header".into(),
                })
            }
            (Line::Flight(_), true) if completed => {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "flight after end marker".into(),
                })
            }
            (Line::Flight(r), true) => rows.push(r),
            (Line::End { completed: c }, true) => completed = c,
        }
    }
    let header = header.ok_or(Error::Parse {
        line: 0,
        msg: "empty session file".into(),
    })?;
    let record = SessionRecord {
        header,
        rows,
        completed,
    };
    record.validate()?;
    Ok(record)
}

/// Choice grid and latent rates of a complete session.
pub fn to_participant_history(record: &SessionRecord) -> Result<ParticipantHistory> {
    if !record.completed || record.rows.len() != record.expected_rows() {
        return Err(Error::IncompleteSession(format!("{} of {} flights", record.rows.len(), record.expected_rows())));
    }
    let t = record.header.env.t;
    let routes = record
        .rows
        .chunks(t)
        .map(|chunk| {
            chunk
                .iter()
                .map(|r| Step {
                    airline: r.airline - 1,
                    outcome: r.outcome,
                })
                .collect()
        })
        .collect();
    let mut h = ParticipantHistory::new(
        record.header.session_id.clone(),
        record.header.condition,
        record.header.env.k,
        routes,
    )?;
    h.rates = Some(record.header.route_rates.clone());
    Ok(h)
}

/// A complete session record for a simulated episode, one row per flight.
pub fn record_from_trajectory(
    session_id: impl Into<String>,
    env: &Environment,
    traj: &Trajectory,
    agent: Option<AgentConfig>,
    wall_clock: &str,
) -> Result<SessionRecord> {
    let mut rec = SessionRecord::new(session_id, SubjectKind::Bot, env, agent);
    for route in &traj.routes {
        for s in &route.steps {
            rec.push_flight(s.airline + 1, s.outcome, None, wall_clock.to_string())?;
        }
    }
    Ok(rec)
}

/// Reads every `*.jsonl` session in `dir` (sorted by file name). Incomplete or
/// unreadable sessions are skipped and reported in the returned warnings.
pub fn load_histories(dir: &Path) -> Result<(Vec<ParticipantHistory>, Vec<String>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut histories = Vec::new();
    let mut warnings = Vec::new();
    for p in paths {
        match read_session(&p).and_then(|r| to_participant_history(&r)) {
            Ok(h) => histories.push(h),
            Err(e) => warnings.push(format!("{}: {e}", p.display())),
        }
    }
    Ok((histories, warnings))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn write_env_spec(path: &Path, spec: &EnvironmentSpec) -> Result<()> {
    spec.validate()?;
    write_json(path, spec)
}

pub fn read_env_spec(path: &Path) -> Result<EnvironmentSpec> {
    let spec: EnvironmentSpec = read_json(path)?;
    spec.validate()?;
    Ok(spec)
}

/// Writes serialisable rows as CSV with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::spec_from_condition;

    const NOW: &str = "2026-01-01T12:00:00Z";

    fn env() -> Environment {
        let spec = spec_from_condition(&ConditionLabel::FarLow.spec(), 10, 10, 3).unwrap();
        Environment::realize(spec).unwrap()
    }

    fn full_record(on_time_target: usize) -> SessionRecord {
        let env = env();
        let mut rec = SessionRecord::new("s-1", SubjectKind::Human, &env, None);
        for i in 0..100 {
            let y = u8::from(i < on_time_target);
            rec.push_flight(i % 3 + 1, y, Some(400 + i as u64), NOW.into()).unwrap();
        }
        rec
    }

    #[test]
    fn points_and_bonus() {
        let rec = full_record(63);
        assert!(rec.completed);
        assert_eq!(rec.points(), 630);
        assert!((bonus_dollars(rec.on_time()) - 0.315).abs() < 1e-12);
        assert_eq!(rec.cursor(), None);
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let rec = full_record(50);
        write_session(&path, &rec).unwrap();
        assert_eq!(read_session(&path).unwrap(), rec);
    }

    #[test]
    fn truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        write_session(&path, &full_record(10)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let cut = text.len() - text.lines().last().unwrap().len() / 2 - 1;
        let lines_before = text[..cut].lines().count();
        fs::write(&path, &text[..cut]).unwrap();
        match read_session(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, lines_before),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_names_row() {
        let mut rec = full_record(5);
        rec.rows[7].points_after += 10;
        match rec.validate() {
            Err(Error::Invariant { row, .. }) => assert_eq!(row, 8),
            other => panic!("expected invariant error, got {other:?}"),
        }
        let mut rec = full_record(5);
        rec.rows.swap(3, 4);
        assert!(matches!(rec.validate(), Err(Error::Invariant { row: 4, .. })));
    }

    #[test]
    fn unknown_major_version_is_rejected() {
        let mut rec = full_record(5);
        rec.header.version = "2.0".into();
        assert!(matches!(rec.validate(), Err(Error::Version(_))));
        rec.header.version = "1.7".into();
        rec.validate().unwrap();
    }

    #[test]
    fn history_requires_completion() {
        let env = env();
        let mut rec = SessionRecord::new("s", SubjectKind::Human, &env, None);
        rec.push_flight(1, 1, None, NOW.into()).unwrap();
        assert!(matches!(to_participant_history(&rec), Err(Error::IncompleteSession(_))));
        let h = to_participant_history(&full_record(20)).unwrap();
        assert_eq!(h.num_routes(), 10);
        assert_eq!(h.horizon(), 10);
        assert_eq!(h.routes[0][1].airline, 1);
        assert!(h.rates.is_some());
    }

    #[test]
    fn directory_ingest_skips_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        write_session(&dir.path().join("a.jsonl"), &full_record(30)).unwrap();
        let env = env();
        let mut partial = SessionRecord::new("b", SubjectKind::Human, &env, None);
        partial.push_flight(2, 0, None, NOW.into()).unwrap();
        write_session(&dir.path().join("b.jsonl"), &partial).unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let (hs, warnings) = load_histories(dir.path()).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("b.jsonl"));
    }

    #[test]
    fn appending_writer_matches_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let rec = full_record(40);
        let path = dir.path().join("live.jsonl");
        let mut w = SessionWriter::create(&path, &rec.header).unwrap();
        for row in &rec.rows[..30] {
            w.append(row).unwrap();
        }
        drop(w);
        let mut w = SessionWriter::append_to(&path).unwrap();
        for row in &rec.rows[30..] {
            w.append(row).unwrap();
        }
        w.finish().unwrap();
        assert_eq!(read_session(&path).unwrap(), rec);
    }

    #[test]
    fn env_spec_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("env.json");
        let spec = env().spec;
        write_env_spec(&path, &spec).unwrap();
        assert_eq!(read_env_spec(&path).unwrap(), spec);
    }
}
