//! Parsing and validation of the course data sources (VLE event log,
//! gradebook, demographics roster, effort survey, grade history) and their
//! assembly into a [`Cohort`].
//!
//! All inputs are UTF-8 CSV with fixed headers. Writers for the same formats
//! live here too so that exported cohorts re-ingest unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Days, NaiveDate, SecondsFormat, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::{evaluate_outcome, Demographics, FinalOutcome, Gender, GradeScheme, StudentId};

/// Days before semester start from which VLE events are kept.
pub const PRE_SEMESTER_DAYS: u64 = 60;
/// Days after semester end up to which VLE events are kept.
pub const POST_SEMESTER_DAYS: u64 = 30;

pub const EVENTS_FILE: &str = "events.csv";
pub const GRADEBOOK_FILE: &str = "gradebook.csv";
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";
pub const SURVEY_FILE: &str = "survey.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const META_FILE: &str = "cohort.json";

const EVENTS_HEADER: [&str; 4] = ["student_id", "timestamp", "component", "action"];
const GRADEBOOK_HEADER: [&str; 3] = ["student_id", "item_id", "points"];
const DEMOGRAPHICS_HEADER: [&str; 4] = ["student_id", "gender", "disability", "schedule_group"];
const SURVEY_HEADER: [&str; 3] = ["bucket_low_hours", "bucket_high_hours", "count"];
const HISTORY_HEADER: [&str; 3] = ["year", "grade", "count"];

/// Half-open calendar range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::Validation(format!("date range inverted: {start} > {end}")));
        }
        Ok(DateRange { start, end })
    }

    pub fn days(&self) -> u32 {
        (self.end - self.start).num_days() as u32
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        date >= self.start && date < self.end
    }

    pub fn weeks(&self) -> usize {
        (self.days() as usize).div_ceil(7)
    }
}

/// Semester bounds; `end` is the last day of teaching (inclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortMeta {
    pub semester_start: NaiveDate,
    pub semester_end: NaiveDate,
    pub academic_year: String,
}

impl CohortMeta {
    /// Window of accepted event dates: 60 days before start through 30 days
    /// after end.
    pub fn event_window(&self) -> DateRange {
        DateRange {
            start: self.semester_start - Days::new(PRE_SEMESTER_DAYS),
            end: self.semester_end + Days::new(POST_SEMESTER_DAYS + 1),
        }
    }

    pub fn semester(&self) -> DateRange {
        DateRange {
            start: self.semester_start,
            end: self.semester_end + Days::new(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Resource,
    Assignment,
    Quiz,
    Forum,
    Page,
    Url,
    Folder,
    Other,
}

impl Component {
    pub const ALL: [Component; 8] = [
        Component::Resource,
        Component::Assignment,
        Component::Quiz,
        Component::Forum,
        Component::Page,
        Component::Url,
        Component::Folder,
        Component::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Component::Resource => "resource",
            Component::Assignment => "assignment",
            Component::Quiz => "quiz",
            Component::Forum => "forum",
            Component::Page => "page",
            Component::Url => "url",
            Component::Folder => "folder",
            Component::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Unknown activity types fall into `Other`.
    pub fn parse_lenient(raw: &str) -> Component {
        let raw = raw.trim().to_ascii_lowercase();
        Component::ALL
            .into_iter()
            .find(|c| c.as_str() == raw)
            .unwrap_or(Component::Other)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VleEvent {
    pub student: StudentId,
    pub timestamp: DateTime<Utc>,
    pub component: Component,
    pub action: String,
}

impl VleEvent {
    fn sort_key(&self) -> (DateTime<Utc>, &StudentId, Component, &str) {
        (self.timestamp, &self.student, self.component, &self.action)
    }
}

/// Canonical event order: by timestamp, ties broken by student, component
/// and action.
pub fn sort_events(events: &mut [VleEvent]) {
    events.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortBucket {
    pub low_hours: u32,
    /// `None` for the open-ended top bucket.
    pub high_hours: Option<u32>,
    pub count: u32,
}

impl EffortBucket {
    pub fn label(&self) -> String {
        match self.high_hours {
            Some(h) => format!("{}-{}", self.low_hours, h),
            None => format!("{}+", self.low_hours),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffortSurvey {
    pub course_year: String,
    pub buckets: Vec<EffortBucket>,
}

impl EffortSurvey {
    pub fn empty(course_year: impl Into<String>) -> Self {
        EffortSurvey {
            course_year: course_year.into(),
            buckets: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.buckets.iter().enumerate() {
            if let Some(h) = b.high_hours {
                if h <= b.low_hours {
                    return Err(Error::Validation(format!("survey bucket {} is empty or inverted", b.label())));
                }
            } else if i + 1 != self.buckets.len() {
                return Err(Error::Validation("open-ended survey bucket must be last".into()));
            }
            if let Some(next) = self.buckets.get(i + 1) {
                // high_hours is Some here, otherwise the branch above errored
                if b.high_hours.is_some_and(|h| h > next.low_hours) {
                    return Err(Error::Validation(format!(
                        "survey buckets {} and {} overlap or are out of order",
                        b.label(),
                        next.label()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoricalStats {
    pub year: String,
    /// Final grade (5..=10) → number of students. Every grade is present.
    pub grade_distribution: BTreeMap<u8, u32>,
    pub passability: f64,
}

impl HistoricalStats {
    pub fn from_distribution(year: impl Into<String>, counts: BTreeMap<u8, u32>) -> Result<Self> {
        let year = year.into();
        let mut dist: BTreeMap<u8, u32> = (5..=10).map(|g| (g, 0)).collect();
        for (g, c) in counts {
            if !(5..=10).contains(&g) {
                return Err(Error::Validation(format!("history {year}: grade {g} outside 5..=10")));
            }
            dist.insert(g, c);
        }
        let total: u32 = dist.values().sum();
        if total == 0 {
            return Err(Error::Validation(format!("history {year}: no students")));
        }
        let passability = 1.0 - f64::from(dist[&5]) / f64::from(total);
        Ok(HistoricalStats {
            year,
            grade_distribution: dist,
            passability,
        })
    }

    pub fn total(&self) -> u32 {
        self.grade_distribution.values().sum()
    }
}

pub type Gradebook = BTreeMap<StudentId, BTreeMap<String, u32>>;
pub type Roster = BTreeMap<StudentId, Demographics>;

/// Joined, validated dataset for one course offering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub meta: CohortMeta,
    pub roster: Roster,
    /// Sorted by [`sort_events`].
    pub events: Vec<VleEvent>,
    pub grades: Gradebook,
    /// Present for students whose gradebook is complete.
    pub outcomes: BTreeMap<StudentId, FinalOutcome>,
    pub survey: EffortSurvey,
    pub history: Vec<HistoricalStats>,
}

impl Cohort {
    pub fn semester_start(&self) -> NaiveDate {
        self.meta.semester_start
    }

    pub fn semester_end(&self) -> NaiveDate {
        self.meta.semester_end
    }

    /// Declared schedule groups, sorted.
    pub fn schedule_groups(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.roster.values().map(|d| d.schedule_group.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn students(&self) -> impl Iterator<Item = &StudentId> {
        self.roster.keys()
    }

    pub fn has_all_outcomes(&self) -> bool {
        !self.roster.is_empty() && self.outcomes.len() == self.roster.len()
    }

    /// Re-checks every cohort invariant.
    pub fn validate(&self, scheme: &GradeScheme) -> Result<()> {
        if self.meta.semester_end < self.meta.semester_start {
            return Err(Error::Validation("semester window inverted".into()));
        }
        let orphans = orphan_ids(&self.roster, &self.events, &self.grades);
        if !orphans.is_empty() {
            return Err(Error::OrphanIds(orphans));
        }
        if self.events.windows(2).any(|w| w[0].sort_key() > w[1].sort_key()) {
            return Err(Error::Validation("events not sorted".into()));
        }
        let window = self.meta.event_window();
        if let Some(e) = self.events.iter().find(|e| !window.contains(e.timestamp.date_naive())) {
            return Err(Error::Validation(format!("event at {} outside cohort window", e.timestamp)));
        }
        for (s, items) in &self.grades {
            check_points(s, items, scheme)?;
        }
        for s in self.outcomes.keys() {
            if !self.roster.contains_key(s) {
                return Err(Error::OrphanIds(vec![s.to_string()]));
            }
        }
        Ok(())
    }
}

fn check_points(student: &StudentId, items: &BTreeMap<String, u32>, scheme: &GradeScheme) -> Result<()> {
    for (id, &p) in items {
        let item = scheme
            .item(id)
            .ok_or_else(|| Error::Validation(format!("{student}: unknown grade item `{id}`")))?;
        if p > item.max_points {
            return Err(Error::Validation(format!(
                "{student}: item `{id}` has {p} points, maximum {}",
                item.max_points
            )));
        }
    }
    Ok(())
}

fn orphan_ids(roster: &Roster, events: &[VleEvent], grades: &Gradebook) -> Vec<String> {
    let mut orphans = BTreeSet::new();
    for e in events {
        if !roster.contains_key(&e.student) {
            orphans.insert(e.student.to_string());
        }
    }
    for s in grades.keys() {
        if !roster.contains_key(s) {
            orphans.insert(s.to_string());
        }
    }
    orphans.into_iter().collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedEvents {
    pub events: Vec<VleEvent>,
    /// Rows dropped because their timestamp fell outside the window.
    pub dropped_out_of_window: usize,
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers()?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Parses a VLE log (`student_id,timestamp,component,action`). Timestamps
/// are RFC 3339 with whole seconds; rows outside `window` are dropped and
/// counted.
pub fn parse_events<R: Read>(source: R, window: DateRange) -> Result<ParsedEvents> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &EVENTS_HEADER)?;
    let mut out = ParsedEvents::default();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", record.len())));
        }
        let student = &record[0];
        if student.is_empty() {
            return Err(parse_err(line, "empty student_id"));
        }
        let timestamp = DateTime::parse_from_rfc3339(&record[1])
            .map_err(|e| parse_err(line, format!("invalid timestamp `{}`: {e}", &record[1])))?
            .with_timezone(&Utc);
        if timestamp.nanosecond() != 0 {
            return Err(parse_err(line, "timestamps must have whole-second resolution"));
        }
        if !window.contains(timestamp.date_naive()) {
            tracing::warn!(line, %timestamp, "event outside cohort window dropped");
            out.dropped_out_of_window += 1;
            continue;
        }
        out.events.push(VleEvent {
            student: StudentId::new(student),
            timestamp,
            component: Component::parse_lenient(&record[2]),
            action: record[3].to_string(),
        });
    }
    sort_events(&mut out.events);
    Ok(out)
}

fn parse_points(raw: &str, line: u64) -> Result<u32> {
    u32::from_str(raw).map_err(|_| parse_err(line, format!("points `{raw}` is not a non-negative integer")))
}

/// Parses a gradebook (`student_id,item_id,points`). Absent pairs mean the
/// item is not graded yet.
pub fn parse_gradebook<R: Read>(source: R, scheme: &GradeScheme) -> Result<Gradebook> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &GRADEBOOK_HEADER)?;
    let mut book = Gradebook::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", record.len())));
        }
        let student = StudentId::new(&record[0]);
        let item_id = &record[1];
        let item = scheme
            .item(item_id)
            .ok_or_else(|| parse_err(line, format!("unknown item `{item_id}`")))?;
        let points = parse_points(&record[2], line)?;
        if points > item.max_points {
            return Err(Error::Validation(format!(
                "line {line}: {student} item `{item_id}` has {points} points, maximum {}",
                item.max_points
            )));
        }
        let entry = book.entry(student.clone()).or_default();
        if entry.insert(item_id.to_string(), points).is_some() {
            return Err(Error::Validation(format!(
                "line {line}: duplicate grade for ({student}, {item_id})"
            )));
        }
    }
    Ok(book)
}

fn parse_flag(raw: &str, line: u64) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        _ => Err(parse_err(line, format!("unparseable disability flag `{raw}`"))),
    }
}

/// Parses the roster (`student_id,gender,disability,schedule_group`).
pub fn parse_demographics<R: Read>(source: R) -> Result<Roster> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &DEMOGRAPHICS_HEADER)?;
    let mut roster = Roster::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 4 {
            return Err(parse_err(line, format!("expected 4 fields, got {}", record.len())));
        }
        if record[0].is_empty() || record[3].is_empty() {
            return Err(parse_err(line, "empty student_id or schedule_group"));
        }
        let student = StudentId::new(&record[0]);
        let demo = Demographics {
            gender: Gender::normalize(&record[1]),
            disability: parse_flag(&record[2], line)?,
            schedule_group: record[3].to_string(),
        };
        if roster.insert(student.clone(), demo).is_some() {
            return Err(Error::Validation(format!("line {line}: duplicate student `{student}`")));
        }
    }
    Ok(roster)
}

/// Parses the effort histogram (`bucket_low_hours,bucket_high_hours,count`);
/// an empty high bound marks the open-ended bucket.
pub fn parse_survey<R: Read>(source: R, course_year: &str) -> Result<EffortSurvey> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &SURVEY_HEADER)?;
    let mut buckets = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", record.len())));
        }
        let low = parse_points(&record[0], line)?;
        let high = if record[1].is_empty() {
            None
        } else {
            Some(parse_points(&record[1], line)?)
        };
        let count = parse_points(&record[2], line)?;
        buckets.push(EffortBucket {
            low_hours: low,
            high_hours: high,
            count,
        });
    }
    let survey = EffortSurvey {
        course_year: course_year.to_string(),
        buckets,
    };
    survey.validate()?;
    Ok(survey)
}

/// Parses grade history (`year,grade,count`), ordered by year label.
pub fn parse_history<R: Read>(source: R) -> Result<Vec<HistoricalStats>> {
    let mut rdr = reader(source);
    check_header(&mut rdr, &HISTORY_HEADER)?;
    let mut years: BTreeMap<String, BTreeMap<u8, u32>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        if record.len() != 3 {
            return Err(parse_err(line, format!("expected 3 fields, got {}", record.len())));
        }
        let grade = u8::from_str(&record[1]).map_err(|_| parse_err(line, format!("bad grade `{}`", &record[1])))?;
        let count = parse_points(&record[2], line)?;
        if years.entry(record[0].to_string()).or_default().insert(grade, count).is_some() {
            return Err(Error::Validation(format!(
                "line {line}: duplicate history row ({}, {grade})",
                &record[0]
            )));
        }
    }
    years
        .into_iter()
        .map(|(year, counts)| HistoricalStats::from_distribution(year, counts))
        .collect()
}

/// Joins parsed sources, enforcing referential integrity and computing
/// outcomes for every student with a complete gradebook.
pub fn assemble_cohort(
    roster: Roster,
    mut events: Vec<VleEvent>,
    grades: Gradebook,
    survey: EffortSurvey,
    history: Vec<HistoricalStats>,
    scheme: &GradeScheme,
    meta: CohortMeta,
) -> Result<Cohort> {
    if meta.semester_end < meta.semester_start {
        return Err(Error::Validation(format!(
            "semester window inverted: {} > {}",
            meta.semester_start, meta.semester_end
        )));
    }
    let orphans = orphan_ids(&roster, &events, &grades);
    if !orphans.is_empty() {
        return Err(Error::OrphanIds(orphans));
    }
    let window = meta.event_window();
    if let Some(e) = events.iter().find(|e| !window.contains(e.timestamp.date_naive())) {
        return Err(Error::Validation(format!(
            "event for {} at {} outside cohort window",
            e.student, e.timestamp
        )));
    }
    survey.validate()?;
    sort_events(&mut events);

    let mut outcomes = BTreeMap::new();
    for (student, items) in &grades {
        check_points(student, items, scheme)?;
        if scheme.items.iter().all(|i| items.contains_key(&i.id)) {
            outcomes.insert(student.clone(), evaluate_outcome(items, scheme)?);
        }
    }
    Ok(Cohort {
        meta,
        roster,
        events,
        grades,
        outcomes,
        survey,
        history,
    })
}

/// Report of a directory ingest.
#[derive(Debug, Clone)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    pub dropped_events: usize,
}

fn open(dir: &Path, name: &str) -> Result<File> {
    File::open(dir.join(name)).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", dir.join(name).display()),
        ))
    })
}

pub fn read_meta(dir: &Path) -> Result<CohortMeta> {
    Ok(serde_json::from_reader(open(dir, META_FILE)?)?)
}

/// Ingests a directory laid out by [`crate::synth::export_cohort`]. The
/// survey and history files are optional.
pub fn load_cohort_dir(dir: &Path, scheme: &GradeScheme) -> Result<LoadedCohort> {
    let meta = read_meta(dir)?;
    let parsed = parse_events(open(dir, EVENTS_FILE)?, meta.event_window())?;
    let grades = parse_gradebook(open(dir, GRADEBOOK_FILE)?, scheme)?;
    let roster = parse_demographics(open(dir, DEMOGRAPHICS_FILE)?)?;
    let survey = match File::open(dir.join(SURVEY_FILE)) {
        Ok(f) => parse_survey(f, &meta.academic_year)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => EffortSurvey::empty(&meta.academic_year),
        Err(e) => return Err(e.into()),
    };
    let history = match File::open(dir.join(HISTORY_FILE)) {
        Ok(f) => parse_history(f)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let cohort = assemble_cohort(roster, parsed.events, grades, survey, history, scheme, meta)?;
    Ok(LoadedCohort {
        cohort,
        dropped_events: parsed.dropped_out_of_window,
    })
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink)
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

pub fn write_events<W: Write>(sink: W, events: &[VleEvent]) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            e.student.as_str(),
            &format_timestamp(&e.timestamp),
            e.component.as_str(),
            &e.action,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gradebook<W: Write>(sink: W, grades: &Gradebook, scheme: &GradeScheme) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(GRADEBOOK_HEADER)?;
    for (student, items) in grades {
        // scheme order keeps files readable
        for item in &scheme.items {
            if let Some(p) = items.get(&item.id) {
                w.write_record([student.as_str(), item.id.as_str(), &p.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_demographics<W: Write>(sink: W, roster: &Roster) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(DEMOGRAPHICS_HEADER)?;
    for (student, d) in roster {
        w.write_record([
            student.as_str(),
            d.gender.as_str(),
            if d.disability { "1" } else { "0" },
            &d.schedule_group,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_survey<W: Write>(sink: W, survey: &EffortSurvey) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(SURVEY_HEADER)?;
    for b in &survey.buckets {
        w.write_record([
            b.low_hours.to_string(),
            b.high_hours.map(|h| h.to_string()).unwrap_or_default(),
            b.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history<W: Write>(sink: W, history: &[HistoricalStats]) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(HISTORY_HEADER)?;
    for h in history {
        for (g, c) in &h.grade_distribution {
            w.write_record([h.year.clone(), g.to_string(), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
