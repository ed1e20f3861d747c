//! Per-checkpoint feature matrices and the behaviour statistics shown on
//! the dashboard.
//!
//! Only data visible before a checkpoint's cutoff contributes: events with
//! a timestamp strictly before the cutoff (midnight UTC) and grade items
//! released at or before the checkpoint.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Datelike, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grading::{Gender, GradeScheme, StudentId, CHECKPOINTS};
use crate::ingest::{Cohort, Component, DateRange, VleEvent};

const MONTH_NAMES: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

fn month_name(date: NaiveDate) -> &'static str {
    MONTH_NAMES[date.month0() as usize]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub index: u8,
    pub label: String,
    /// Exclusive upper bound on data visibility.
    pub cutoff: NaiveDate,
}

impl Checkpoint {
    /// Checkpoint `index` whose cutoff is `index` calendar months after the
    /// semester start (the first day of the following month for a semester
    /// starting on the 1st).
    pub fn monthly(semester_start: NaiveDate, index: u8) -> Result<Self> {
        if !(1..=CHECKPOINTS).contains(&index) {
            return Err(Error::Domain(format!("checkpoint {index} outside 1..={CHECKPOINTS}")));
        }
        let month_start = add_months(semester_start, u32::from(index) - 1)?;
        Ok(Checkpoint {
            index,
            label: month_name(month_start).to_string(),
            cutoff: add_months(semester_start, u32::from(index))?,
        })
    }

    /// Checkpoint with an explicit cutoff, labelled by the month of the day
    /// before it.
    pub fn with_cutoff(index: u8, cutoff: NaiveDate) -> Result<Self> {
        if !(1..=CHECKPOINTS).contains(&index) {
            return Err(Error::Domain(format!("checkpoint {index} outside 1..={CHECKPOINTS}")));
        }
        let last_day = cutoff
            .pred_opt()
            .ok_or_else(|| Error::Validation(format!("cutoff {cutoff} out of range")))?;
        Ok(Checkpoint {
            index,
            label: month_name(last_day).to_string(),
            cutoff,
        })
    }

    pub fn series(semester_start: NaiveDate) -> Result<Vec<Checkpoint>> {
        (1..=CHECKPOINTS).map(|i| Checkpoint::monthly(semester_start, i)).collect()
    }

    pub fn cutoff_instant(&self) -> DateTime<Utc> {
        self.cutoff.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
    }

    /// Days visible from semester start up to the cutoff.
    pub fn visible_days(&self, semester_start: NaiveDate) -> i64 {
        (self.cutoff - semester_start).num_days()
    }
}

fn add_months(date: NaiveDate, months: u32) -> Result<NaiveDate> {
    date.checked_add_months(Months::new(months))
        .ok_or_else(|| Error::Domain(format!("date overflow adding {months} months to {date}")))
}

/// Calendar-month buckets `[start + (m-1) months, start + m months)` for
/// `m = 1..=cp.index`, each clipped to the cutoff.
fn month_buckets(semester_start: NaiveDate, cp: &Checkpoint) -> Result<Vec<(String, DateRange)>> {
    (0..u32::from(cp.index))
        .map(|m| {
            let start = add_months(semester_start, m)?;
            let end = add_months(semester_start, m + 1)?.min(cp.cutoff);
            Ok((month_name(start).to_ascii_lowercase(), DateRange { start, end: end.max(start) }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum FeatureRole {
    Gender { value: Gender },
    Disability,
    ScheduleGroup { group: String },
    PreSemesterClicks,
    MonthClicks { month: String },
    ComponentClicks { component: Component },
    FirstInteraction,
    TotalClicks,
    GradeItem { item: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    #[serde(flatten)]
    pub role: FeatureRole,
}

impl Feature {
    pub fn new(name: String, role: FeatureRole) -> Self {
        Feature { name, role }
    }

    pub fn kind(&self) -> FeatureKind {
        match self.role {
            FeatureRole::Gender { .. } | FeatureRole::ScheduleGroup { .. } => FeatureKind::OneHot,
            _ => FeatureKind::Numeric,
        }
    }

    /// Name of the one-hot group this column belongs to.
    pub fn one_hot_group(&self) -> Option<&'static str> {
        match self.role {
            FeatureRole::Gender { .. } => Some("gender"),
            FeatureRole::ScheduleGroup { .. } => Some("schedule_group"),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub checkpoint: Checkpoint,
    pub schema: Vec<Feature>,
    pub rows: BTreeMap<StudentId, Vec<f64>>,
}

impl FeatureMatrix {
    pub fn names(&self) -> Vec<&str> {
        self.schema.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn width(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, s: &StudentId) -> Result<&[f64]> {
        self.rows
            .get(s)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownStudent(s.to_string()))
    }

    pub fn students(&self) -> impl Iterator<Item = &StudentId> {
        self.rows.keys()
    }

    /// All rows in student-id order.
    pub fn dense(&self) -> Vec<Vec<f64>> {
        self.rows.values().cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.schema.len();
        for (s, row) in &self.rows {
            if row.len() != w {
                return Err(Error::SchemaMismatch {
                    expected: w,
                    got: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("{s}: non-finite feature value")));
            }
            let mut groups: BTreeMap<&str, f64> = BTreeMap::new();
            for (f, v) in self.schema.iter().zip(row) {
                if let Some(g) = f.one_hot_group() {
                    *groups.entry(g).or_default() += v;
                }
            }
            if groups.values().any(|&sum| sum != 1.0) {
                return Err(Error::Validation(format!("{s}: one-hot group does not sum to 1")));
            }
        }
        Ok(())
    }

    /// CSV dump with a `student_id` column followed by the schema.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
        let mut header = vec!["student_id"];
        header.extend(self.names());
        w.write_record(&header)?;
        for (s, row) in &self.rows {
            let mut rec = vec![s.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Feature schema for a checkpoint. Later checkpoints append month and grade
/// columns; every earlier column name is preserved.
pub fn feature_schema(cohort: &Cohort, cp: &Checkpoint, scheme: &GradeScheme) -> Result<Vec<Feature>> {
    let mut schema = Vec::new();
    for g in Gender::ALL {
        schema.push(Feature::new(format!("gender_{}", g.as_str()), FeatureRole::Gender { value: g }));
    }
    schema.push(Feature::new("disability".into(), FeatureRole::Disability));
    for group in cohort.schedule_groups() {
        schema.push(Feature::new(
            format!("schedule_group_{group}"),
            FeatureRole::ScheduleGroup { group },
        ));
    }
    schema.push(Feature::new("clicks_pre_semester".into(), FeatureRole::PreSemesterClicks));
    for (month, _) in month_buckets(cohort.semester_start(), cp)? {
        schema.push(Feature::new(format!("clicks_month_{month}"), FeatureRole::MonthClicks { month }));
    }
    for c in Component::ALL {
        schema.push(Feature::new(
            format!("clicks_component_{c}"),
            FeatureRole::ComponentClicks { component: c },
        ));
    }
    schema.push(Feature::new("first_interaction_offset_days".into(), FeatureRole::FirstInteraction));
    schema.push(Feature::new("clicks_total".into(), FeatureRole::TotalClicks));
    for item in scheme.released_items(cp.index) {
        schema.push(Feature::new(
            format!("points_{}", item.id),
            FeatureRole::GradeItem { item: item.id.clone() },
        ));
    }
    Ok(schema)
}

#[derive(Default)]
struct ClickTally {
    pre_semester: u64,
    months: Vec<u64>,
    components: [u64; 8],
    first: Option<NaiveDate>,
    total: u64,
}

/// Builds the feature matrix for `cp`. Rows exist for every roster student.
pub fn extract_features(cohort: &Cohort, cp: &Checkpoint, scheme: &GradeScheme) -> Result<FeatureMatrix> {
    if cp.cutoff > cohort.semester_end().succ_opt().unwrap_or(cohort.semester_end()) {
        return Err(Error::Validation(format!(
            "checkpoint {} cutoff {} is after semester end {}",
            cp.index,
            cp.cutoff,
            cohort.semester_end()
        )));
    }
    let schema = feature_schema(cohort, cp, scheme)?;
    let start = cohort.semester_start();
    let buckets = month_buckets(start, cp)?;
    let cutoff = cp.cutoff_instant();

    let mut tallies: BTreeMap<&StudentId, ClickTally> = cohort
        .roster
        .keys()
        .map(|s| {
            (
                s,
                ClickTally {
                    months: vec![0; buckets.len()],
                    ..Default::default()
                },
            )
        })
        .collect();
    for e in cohort.events.iter().take_while(|e| e.timestamp < cutoff) {
        let Some(t) = tallies.get_mut(&e.student) else {
            return Err(Error::OrphanIds(vec![e.student.to_string()]));
        };
        let day = e.timestamp.date_naive();
        t.total += 1;
        t.components[e.component.index()] += 1;
        if t.first.is_none() {
            t.first = Some(day);
        }
        if day < start {
            t.pre_semester += 1;
        } else if let Some(m) = buckets.iter().position(|(_, r)| r.contains(day)) {
            t.months[m] += 1;
        }
    }

    let groups = cohort.schedule_groups();
    let sentinel = (cp.visible_days(start) + 1) as f64;
    let released: Vec<_> = scheme.released_items(cp.index).collect();
    let mut rows = BTreeMap::new();
    for (s, demo) in &cohort.roster {
        let t = &tallies[s];
        let mut row = Vec::with_capacity(schema.len());
        row.extend(Gender::ALL.iter().map(|&g| f64::from(u8::from(demo.gender == g))));
        row.push(f64::from(u8::from(demo.disability)));
        row.extend(groups.iter().map(|g| f64::from(u8::from(&demo.schedule_group == g))));
        row.push(t.pre_semester as f64);
        row.extend(t.months.iter().map(|&c| c as f64));
        row.extend(t.components.iter().map(|&c| c as f64));
        row.push(t.first.map_or(sentinel, |d| (d - start).num_days() as f64));
        row.push(t.total as f64);
        let earned = cohort.grades.get(s);
        for item in &released {
            let p = earned.and_then(|g| g.get(&item.id)).copied().unwrap_or(0);
            row.push(f64::from(p));
        }
        debug_assert_eq!(row.len(), schema.len());
        rows.insert(s.clone(), row);
    }
    Ok(FeatureMatrix {
        checkpoint: cp.clone(),
        schema,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub window: DateRange,
    pub clicks_total: u64,
    pub clicks_per_week: Vec<u64>,
    pub active_days: u32,
    pub inactive_days: u32,
    pub max_consecutive_active: u32,
    pub max_consecutive_inactive: u32,
}

fn student_events<'a>(cohort: &'a Cohort, s: &'a StudentId) -> impl Iterator<Item = &'a VleEvent> + 'a {
    cohort.events.iter().filter(move |e| &e.student == s)
}

/// A day is active when the student has at least one event on that UTC
/// calendar date.
pub fn behavior_stats(cohort: &Cohort, s: &StudentId, window: DateRange) -> Result<BehaviorStats> {
    if !cohort.roster.contains_key(s) {
        return Err(Error::UnknownStudent(s.to_string()));
    }
    let bounds = cohort.meta.event_window();
    if window.start < bounds.start || window.end > bounds.end {
        return Err(Error::Validation(format!(
            "window {}..{} outside cohort window",
            window.start, window.end
        )));
    }
    let days = window.days() as usize;
    let mut per_day = vec![0u64; days];
    for e in student_events(cohort, s) {
        let d = e.timestamp.date_naive();
        if window.contains(d) {
            per_day[(d - window.start).num_days() as usize] += 1;
        }
    }
    let mut stats = BehaviorStats {
        window,
        clicks_total: per_day.iter().sum(),
        clicks_per_week: per_day.chunks(7).map(|w| w.iter().sum()).collect(),
        active_days: 0,
        inactive_days: 0,
        max_consecutive_active: 0,
        max_consecutive_inactive: 0,
    };
    let (mut run_active, mut run_inactive) = (0u32, 0u32);
    for &c in &per_day {
        if c > 0 {
            stats.active_days += 1;
            run_active += 1;
            run_inactive = 0;
        } else {
            stats.inactive_days += 1;
            run_inactive += 1;
            run_active = 0;
        }
        stats.max_consecutive_active = stats.max_consecutive_active.max(run_active);
        stats.max_consecutive_inactive = stats.max_consecutive_inactive.max(run_inactive);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub window: DateRange,
    pub passed_mean_weekly_clicks: Vec<f64>,
    pub failed_mean_weekly_clicks: Vec<f64>,
    pub passed_count: usize,
    pub failed_count: usize,
    /// Set when a group has no members; its series is all zeros.
    pub passed_group_empty: bool,
    pub failed_group_empty: bool,
}

/// Mean weekly clicks over the semester for students who passed versus
/// failed. Weeks start at semester start; the last week may be partial.
pub fn cohort_trends(cohort: &Cohort) -> Result<TrendSeries> {
    if cohort.outcomes.is_empty() {
        return Err(Error::MissingOutcomes("trend series need final outcomes".into()));
    }
    let window = cohort.meta.semester();
    let weeks = window.weeks();
    let mut sums = [vec![0u64; weeks], vec![0u64; weeks]];
    let mut counts = [0usize; 2];
    for o in cohort.outcomes.values() {
        counts[usize::from(!o.passed)] += 1;
    }
    for e in &cohort.events {
        let d = e.timestamp.date_naive();
        if !window.contains(d) {
            continue;
        }
        if let Some(o) = cohort.outcomes.get(&e.student) {
            sums[usize::from(!o.passed)][(d - window.start).num_days() as usize / 7] += 1;
        }
    }
    let mean = |g: usize| -> Vec<f64> {
        if counts[g] == 0 {
            vec![0.0; weeks]
        } else {
            sums[g].iter().map(|&c| c as f64 / counts[g] as f64).collect()
        }
    };
    Ok(TrendSeries {
        window,
        passed_mean_weekly_clicks: mean(0),
        failed_mean_weekly_clicks: mean(1),
        passed_count: counts[0],
        failed_count: counts[1],
        passed_group_empty: counts[0] == 0,
        failed_group_empty: counts[1] == 0,
    })
}

/// Sum of points on items released by `cp` (ungraded items count as zero).
pub fn released_points(cohort: &Cohort, s: &StudentId, cp: &Checkpoint, scheme: &GradeScheme) -> u32 {
    let Some(g) = cohort.grades.get(s) else {
        return 0;
    };
    scheme
        .released_items(cp.index)
        .map(|i| g.get(&i.id).copied().unwrap_or(0))
        .sum()
}

/// Fraction of the cohort with a strictly lower released-points total.
pub fn percentile_of(cohort: &Cohort, s: &StudentId, cp: &Checkpoint, scheme: &GradeScheme) -> Result<f64> {
    if !cohort.roster.contains_key(s) {
        return Err(Error::UnknownStudent(s.to_string()));
    }
    let mine = released_points(cohort, s, cp, scheme);
    let lower = cohort
        .roster
        .keys()
        .filter(|o| released_points(cohort, o, cp, scheme) < mine)
        .count();
    Ok(lower as f64 / cohort.roster.len() as f64)
}
