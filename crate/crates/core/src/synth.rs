//! Seeded synthetic cohorts calibrated to published course statistics.
//!
//! Every student has a latent ability `a ~ N(0, 1)`, drawn by stratified
//! sampling so the cohort's ability quantiles stay close to the target
//! distribution even for ~100 students. Item fractions are
//! `μ + σ·a + noise`, clipped to `[0, 1]` and scaled to the item maximum;
//! `μ` and `σ` are solved so that the expected fail share and the mean
//! passing grade hit their targets. Daily click counts are Poisson with a
//! rate driven by an engagement score `z = s·a' + (1 − s)·ε`, where `s` is
//! the engagement signal.
//!
//! Students in the lowest ability band (a configurable share of the
//! expected failures) are disengaged: their item level drops by a fixed gap
//! and their engagement `a' = a − drop`. Both shifts are monotone in `a`, so
//! at zero noise clicks and points stay rank-aligned.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Days, NaiveDate, Utc, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grading::{grade_from_points, Demographics, Gender, GradeScheme, ItemKind, StudentId};
use crate::ingest::{
    assemble_cohort, sort_events, write_demographics, write_events, write_gradebook, write_history, write_survey,
    Cohort, CohortMeta, Component, EffortBucket, EffortSurvey, Gradebook, HistoricalStats, Roster, VleEvent,
    DEMOGRAPHICS_FILE, EVENTS_FILE, GRADEBOOK_FILE, HISTORY_FILE, META_FILE, SURVEY_FILE,
};
use crate::pipeline::AssessmentCalendar;
use crate::trees::{PortableRng, RngKind};

/// Share of each component among generated events, in [`Component::ALL`]
/// order.
const COMPONENT_MIX: [f64; 8] = [0.35, 0.20, 0.10, 0.08, 0.12, 0.07, 0.05, 0.03];
/// Effort survey buckets (hours per week) and their response shares.
const EFFORT_BUCKETS: [(u32, Option<u32>, f64); 6] = [
    (0, Some(2), 0.12),
    (2, Some(4), 0.30),
    (4, Some(6), 0.28),
    (6, Some(8), 0.16),
    (8, Some(10), 0.08),
    (10, None, 0.06),
];
const SURVEY_RESPONSE_RATE: f64 = 0.6;
/// Activity starts this many days before the semester.
const LEAD_IN_DAYS: u64 = 14;
const WEEKDAY_RATE: f64 = 4.0;
const WEEKEND_RATE: f64 = 1.5;
const LEAD_IN_RATE: f64 = 0.5;
/// Rate multiplier in the days before each checkpoint cutoff.
const DEADLINE_BOOST: f64 = 1.8;
const DEADLINE_DAYS: u64 = 3;
/// exp(ENGAGEMENT_LEVEL·z + ENGAGEMENT_TREND·z·t) scales the daily rate.
const ENGAGEMENT_LEVEL: f64 = 0.6;
const ENGAGEMENT_TREND: f64 = 0.4;
/// Item-fraction and engagement penalties of the disengaged band.
const DISENGAGED_GAP: f64 = 0.25;
const DISENGAGED_ENGAGEMENT_DROP: f64 = 1.0;
/// Virtual cohort used to solve for μ and σ.
const CALIBRATION_SIZE: usize = 3000;
const CALIBRATION_SEED: u64 = 0x5EED_CA11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenderMix {
    pub male: f64,
    pub female: f64,
    pub other: f64,
}

impl Default for GenderMix {
    fn default() -> Self {
        GenderMix {
            male: 0.60,
            female: 0.35,
            other: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub seed: u64,
    pub n_students: usize,
    /// Weight of ability in the engagement score, in `[0, 1]`.
    pub engagement_signal: f64,
    /// Scale of every random perturbation. At 0, grades and click counts
    /// are deterministic functions of ability.
    pub noise: f64,
    /// Mean final grade over passing students.
    pub target_mean_grade: f64,
    pub target_fail_count: usize,
    /// Share of the target failures drawn from the disengaged band.
    pub disengaged_share: f64,
    pub gender_mix: GenderMix,
    pub disability_rate: f64,
    /// Assigned uniformly.
    pub schedule_groups: Vec<String>,
    pub semester_start: NaiveDate,
    pub semester_end: NaiveDate,
    pub academic_year: String,
    /// Prior years synthesized for the history file.
    pub history_years: usize,
    pub rng: RngKind,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 42,
            n_students: 106,
            engagement_signal: 0.7,
            noise: 1.0,
            target_mean_grade: 7.8,
            target_fail_count: 18,
            disengaged_share: 0.7,
            gender_mix: GenderMix::default(),
            disability_rate: 0.04,
            schedule_groups: (1..=4).map(|g| format!("G{g}")).collect(),
            semester_start: NaiveDate::from_ymd_opt(2021, 10, 1).expect("valid date"),
            semester_end: NaiveDate::from_ymd_opt(2022, 1, 31).expect("valid date"),
            academic_year: "2021/22".into(),
            history_years: 3,
            rng: RngKind::default(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_students < 10 {
            return Err(Error::Validation(format!("n_students {} is below 10", self.n_students)));
        }
        if !(0.0..=1.0).contains(&self.engagement_signal) {
            return Err(Error::Validation("engagement_signal outside [0, 1]".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Validation("noise must be a non-negative number".into()));
        }
        let g = &self.gender_mix;
        if [g.male, g.female, g.other].iter().any(|&p| !(0.0..=1.0).contains(&p))
            || (g.male + g.female + g.other - 1.0).abs() > 1e-9
        {
            return Err(Error::Validation("gender_mix proportions must lie in [0, 1] and sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.disengaged_share) {
            return Err(Error::Validation("disengaged_share outside [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.disability_rate) {
            return Err(Error::Validation("disability_rate outside [0, 1]".into()));
        }
        if self.schedule_groups.is_empty() || self.schedule_groups.iter().any(String::is_empty) {
            return Err(Error::Validation("schedule_groups must be non-empty names".into()));
        }
        if self.semester_end < self.semester_start {
            return Err(Error::Validation("semester_end precedes semester_start".into()));
        }
        if self.target_fail_count >= self.n_students {
            return Err(Error::Validation(format!(
                "infeasible calibration: {} failures requested among {} students",
                self.target_fail_count, self.n_students
            )));
        }
        if !(6.0..=10.0).contains(&self.target_mean_grade) {
            return Err(Error::Validation(format!(
                "infeasible calibration: mean passing grade {} outside 6..=10",
                self.target_mean_grade
            )));
        }
        Ok(())
    }

    /// Abilities below this value belong to the disengaged band.
    fn disengaged_below(&self) -> f64 {
        let q = self.disengaged_share * self.target_fail_count as f64 / self.n_students as f64;
        if q <= 0.0 {
            f64::NEG_INFINITY
        } else {
            std_normal().inverse_cdf(q)
        }
    }

    pub fn meta(&self) -> CohortMeta {
        CohortMeta {
            semester_start: self.semester_start,
            semester_end: self.semester_end,
            academic_year: self.academic_year.clone(),
        }
    }
}

/// Solved location and spread of item fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub mu: f64,
    pub sigma: f64,
    /// Ability below which a student is disengaged.
    pub disengaged_below: f64,
}

impl Calibration {
    fn level(&self, a: f64) -> f64 {
        let gap = if a < self.disengaged_below { DISENGAGED_GAP } else { 0.0 };
        self.mu + self.sigma * a - gap
    }

    fn engagement_ability(&self, a: f64) -> f64 {
        if a < self.disengaged_below {
            a - DISENGAGED_ENGAGEMENT_DROP
        } else {
            a
        }
    }
}

/// Per-kind standard deviation of item-fraction noise.
fn item_noise_sd(kind: ItemKind) -> f64 {
    match kind {
        ItemKind::Assignment => 0.12,
        ItemKind::Quiz => 0.15,
        ItemKind::Midterm => 0.12,
        ItemKind::OralExam => 0.10,
    }
}

fn item_points(max: u32, level: f64, offset: f64) -> u32 {
    ((level + offset).clamp(0.0, 1.0) * f64::from(max)).round() as u32
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Virtual cohort at ability quantiles `(m + 0.5)/M` with fixed noise
/// draws, so that fail share and mean grade are deterministic in (μ, σ).
struct VirtualCohort {
    ability: Vec<f64>,
    /// offsets[m][j] for scheme item j
    offsets: Vec<Vec<f64>>,
}

struct VirtualStats {
    fail_share: f64,
    mean_pass_grade: f64,
}

impl VirtualCohort {
    fn new(scheme: &GradeScheme, noise: f64) -> Self {
        let n = std_normal();
        let mut rng = PortableRng::new(RngKind::Xoshiro256PlusPlus, CALIBRATION_SEED);
        let ability = (0..CALIBRATION_SIZE)
            .map(|m| n.inverse_cdf((m as f64 + 0.5) / CALIBRATION_SIZE as f64))
            .collect();
        let offsets = (0..CALIBRATION_SIZE)
            .map(|_| {
                scheme
                    .items
                    .iter()
                    .map(|i| {
                        let eta: f64 = StandardNormal.sample(&mut rng);
                        noise * item_noise_sd(i.kind) * eta
                    })
                    .collect()
            })
            .collect();
        VirtualCohort { ability, offsets }
    }

    fn stats(&self, scheme: &GradeScheme, c: Calibration) -> VirtualStats {
        let (mut fails, mut grade_sum) = (0usize, 0u64);
        for (a, off) in self.ability.iter().zip(&self.offsets) {
            let level = c.level(*a);
            let (mut total, mut formative) = (0u32, 0u32);
            for (item, o) in scheme.items.iter().zip(off) {
                let p = item_points(item.max_points, level, *o);
                total += p;
                if item.kind.is_formative() {
                    formative += p;
                }
            }
            if total >= scheme.pass_threshold_points && formative >= scheme.formative_min_points {
                grade_sum += u64::from(grade_from_points(total.min(100)).unwrap_or(5));
            } else {
                fails += 1;
            }
        }
        let passes = self.ability.len() - fails;
        VirtualStats {
            fail_share: fails as f64 / self.ability.len() as f64,
            mean_pass_grade: if passes == 0 {
                0.0
            } else {
                grade_sum as f64 / passes as f64
            },
        }
    }

    /// Smallest μ (to bisection precision) whose fail share does not exceed
    /// `target`.
    fn solve_mu(&self, scheme: &GradeScheme, sigma: f64, disengaged_below: f64, target: f64) -> f64 {
        let (mut lo, mut hi) = (-1.0, 2.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let c = Calibration {
                mu: mid,
                sigma,
                disengaged_below,
            };
            if self.stats(scheme, c).fail_share > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Solves (μ, σ) so that the expected fail share is
/// `target_fail_count / n_students` and the expected mean passing grade is
/// `target_mean_grade`.
pub fn calibrate(p: &SynthParams, scheme: &GradeScheme) -> Result<Calibration> {
    p.validate()?;
    scheme.validate()?;
    let vc = VirtualCohort::new(scheme, p.noise);
    let target_fail = p.target_fail_count as f64 / p.n_students as f64;
    let cut = p.disengaged_below();
    let at = |sigma: f64| {
        let mu = vc.solve_mu(scheme, sigma, cut, target_fail);
        let c = Calibration {
            mu,
            sigma,
            disengaged_below: cut,
        };
        (c, vc.stats(scheme, c).mean_pass_grade)
    };
    let (mut lo, mut hi) = (0.01, 1.0);
    let (_, g_lo) = at(lo);
    let (_, g_hi) = at(hi);
    if !(g_lo..=g_hi).contains(&p.target_mean_grade) {
        return Err(Error::Validation(format!(
            "infeasible calibration: mean passing grade {} outside reachable [{g_lo:.2}, {g_hi:.2}] for {} failures",
            p.target_mean_grade, p.target_fail_count
        )));
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 < p.target_mean_grade {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(at(0.5 * (lo + hi)).0)
}

fn student_id(i: usize, n: usize) -> StudentId {
    let width = n.to_string().len().max(3);
    StudentId::new(format!("s{:0width$}", i + 1))
}

/// Index into a cumulative distribution given `u ∈ [0, 1)`.
fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Stratified standard-normal abilities: one draw per `1/n` quantile band,
/// bands assigned to students in shuffled order.
fn abilities<R: RngCore>(n: usize, noise: f64, rng: &mut R) -> Vec<f64> {
    let norm = std_normal();
    let mut band: Vec<usize> = (0..n).collect();
    band.shuffle(rng);
    band.into_iter()
        .map(|b| {
            let jitter = if noise > 0.0 {
                rng.random::<f64>().clamp(1e-6, 1.0 - 1e-6)
            } else {
                0.5
            };
            norm.inverse_cdf((b as f64 + jitter) / n as f64)
        })
        .collect()
}

fn grades_for<R: RngCore>(scheme: &GradeScheme, c: Calibration, a: f64, noise: f64, rng: &mut R) -> BTreeMap<String, u32> {
    let level = c.level(a);
    scheme
        .items
        .iter()
        .map(|item| {
            let offset = if noise > 0.0 {
                let eta: f64 = StandardNormal.sample(rng);
                noise * item_noise_sd(item.kind) * eta
            } else {
                0.0
            };
            (item.id.clone(), item_points(item.max_points, level, offset))
        })
        .collect()
}

fn actions(component: Component) -> &'static [&'static str] {
    match component {
        Component::Assignment => &["viewed", "submitted"],
        Component::Quiz => &["attempted", "reviewed"],
        Component::Forum => &["viewed", "posted"],
        Component::Url => &["clicked"],
        _ => &["viewed"],
    }
}

struct ActivityPlan {
    start: NaiveDate,
    days: Vec<(NaiveDate, f64, f64)>, // (day, base rate, semester progress)
}

impl ActivityPlan {
    fn new(p: &SynthParams, calendar: &AssessmentCalendar) -> Self {
        let start = p.semester_start - Days::new(LEAD_IN_DAYS);
        let span = (p.semester_end - p.semester_start).num_days().max(1) as f64;
        let mut days = Vec::new();
        let mut d = start;
        while d <= p.semester_end {
            let base = if d < p.semester_start {
                LEAD_IN_RATE
            } else if matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                WEEKEND_RATE
            } else {
                WEEKDAY_RATE
            };
            let boost = calendar
                .checkpoints
                .iter()
                .any(|cp| d < cp.cutoff && d + Days::new(DEADLINE_DAYS) >= cp.cutoff);
            let progress = ((d - p.semester_start).num_days() as f64 / span).clamp(0.0, 1.0);
            days.push((d, if boost { base * DEADLINE_BOOST } else { base }, progress));
            d = d + Days::new(1);
        }
        ActivityPlan { start, days }
    }
}

fn events_for<R: RngCore>(
    student: &StudentId,
    z: f64,
    noise: f64,
    plan: &ActivityPlan,
    rng: &mut R,
    out: &mut Vec<VleEvent>,
) -> Result<()> {
    for &(day, base, t) in &plan.days {
        let rate = base * (ENGAGEMENT_LEVEL * z + ENGAGEMENT_TREND * z * t).exp();
        let count = if noise > 0.0 {
            Poisson::new(rate)
                .map_err(|e| Error::Validation(format!("activity rate {rate}: {e}")))?
                .sample(rng) as u64
        } else {
            (rate + 0.5).floor() as u64
        };
        let midnight: DateTime<Utc> = day.and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        for _ in 0..count {
            let second = rng.random_range(0..86_400i64);
            let component = Component::ALL[pick(&COMPONENT_MIX, rng.random())];
            let options = actions(component);
            let action = options[rng.random_range(0..options.len())];
            out.push(VleEvent {
                student: student.clone(),
                timestamp: midnight + chrono::Duration::seconds(second),
                component,
                action: action.to_string(),
            });
        }
    }
    debug_assert!(plan.days.first().is_none_or(|d| d.0 == plan.start));
    Ok(())
}

fn survey<R: RngCore>(n: usize, year: &str, rng: &mut R) -> EffortSurvey {
    let weights: Vec<f64> = EFFORT_BUCKETS.iter().map(|b| b.2).collect();
    let mut counts = [0u32; EFFORT_BUCKETS.len()];
    let respondents = (n as f64 * SURVEY_RESPONSE_RATE).round() as usize;
    for _ in 0..respondents {
        counts[pick(&weights, rng.random())] += 1;
    }
    EffortSurvey {
        course_year: year.to_string(),
        buckets: EFFORT_BUCKETS
            .iter()
            .zip(counts)
            .map(|(&(low, high, _), count)| EffortBucket {
                low_hours: low,
                high_hours: high,
                count,
            })
            .collect(),
    }
}

/// `2021/22` shifted back `k` years; other labels get a numeric suffix.
fn prior_year_label(year: &str, k: usize) -> String {
    let first = year.split('/').next().and_then(|y| y.parse::<i32>().ok());
    match first {
        Some(y) => {
            let y = y - k as i32;
            format!("{y}/{:02}", (y + 1).rem_euclid(100))
        }
        None => format!("{year}-minus-{k}"),
    }
}

fn history_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Grade distributions of `p.history_years` earlier offerings, oldest
/// first, each generated from its own seed.
fn history(p: &SynthParams, scheme: &GradeScheme, c: Calibration) -> Result<Vec<HistoricalStats>> {
    (1..=p.history_years)
        .rev()
        .map(|k| {
            let mut rng = PortableRng::new(p.rng, history_seed(p.seed, k));
            let mut counts: BTreeMap<u8, u32> = BTreeMap::new();
            for a in abilities(p.n_students, p.noise, &mut rng) {
                let g = grades_for(scheme, c, a, p.noise, &mut rng);
                let o = crate::grading::evaluate_outcome(&g, scheme)?;
                *counts.entry(o.final_grade).or_default() += 1;
            }
            HistoricalStats::from_distribution(prior_year_label(&p.academic_year, k), counts)
        })
        .collect()
}

/// Generates one cohort. The result depends only on `p` and `scheme`; the
/// calendar's checkpoint cutoffs shape activity peaks.
pub fn generate_cohort(p: &SynthParams, scheme: &GradeScheme, calendar: &AssessmentCalendar) -> Result<Cohort> {
    calendar.validate(scheme)?;
    let c = calibrate(p, scheme)?;
    let mut rng = PortableRng::new(p.rng, p.seed);
    let n = p.n_students;
    let ability = abilities(n, p.noise, &mut rng);
    let plan = ActivityPlan::new(p, calendar);
    let gender_weights = [p.gender_mix.male, p.gender_mix.female, p.gender_mix.other];

    let mut roster = Roster::new();
    let mut grades = Gradebook::new();
    let mut events = Vec::new();
    for (i, &a) in ability.iter().enumerate() {
        let id = student_id(i, n);
        let demo = Demographics {
            gender: Gender::ALL[pick(&gender_weights, rng.random())],
            disability: rng.random::<f64>() < p.disability_rate,
            schedule_group: p.schedule_groups[rng.random_range(0..p.schedule_groups.len())].clone(),
        };
        let eps: f64 = StandardNormal.sample(&mut rng);
        let z = p.engagement_signal * c.engagement_ability(a) + (1.0 - p.engagement_signal) * p.noise * eps;
        grades.insert(id.clone(), grades_for(scheme, c, a, p.noise, &mut rng));
        events_for(&id, z, p.noise, &plan, &mut rng, &mut events)?;
        roster.insert(id, demo);
    }
    sort_events(&mut events);
    let survey = survey(n, &p.academic_year, &mut rng);
    let history = history(p, scheme, c)?;
    assemble_cohort(roster, events, grades, survey, history, scheme, p.meta())
}

/// Writes the ingest files for `cohort` into `dir`; returns the paths.
pub fn export_cohort(cohort: &Cohort, dir: &Path, scheme: &GradeScheme) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let create = |name: &str| -> Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
        let path = dir.join(name);
        Ok((path.clone(), std::io::BufWriter::new(std::fs::File::create(path)?)))
    };
    let mut paths = Vec::new();

    let (path, mut f) = create(META_FILE)?;
    serde_json::to_writer_pretty(&mut f, &cohort.meta)?;
    std::io::Write::write_all(&mut f, b"\n")?;
    std::io::Write::flush(&mut f)?;
    paths.push(path);

    let (path, f) = create(EVENTS_FILE)?;
    write_events(f, &cohort.events)?;
    paths.push(path);
    let (path, f) = create(GRADEBOOK_FILE)?;
    write_gradebook(f, &cohort.grades, scheme)?;
    paths.push(path);
    let (path, f) = create(DEMOGRAPHICS_FILE)?;
    write_demographics(f, &cohort.roster)?;
    paths.push(path);
    let (path, f) = create(SURVEY_FILE)?;
    write_survey(f, &cohort.survey)?;
    paths.push(path);
    let (path, f) = create(HISTORY_FILE)?;
    write_history(f, &cohort.history)?;
    paths.push(path);
    Ok(paths)
}

/// Mean final grade over passing students; `None` when nobody passed.
pub fn mean_pass_grade(cohort: &Cohort) -> Option<f64> {
    let grades: Vec<u8> = cohort
        .outcomes
        .values()
        .filter(|o| o.passed)
        .map(|o| o.final_grade)
        .collect();
    (!grades.is_empty()).then(|| grades.iter().map(|&g| f64::from(g)).sum::<f64>() / grades.len() as f64)
}

pub fn fail_count(cohort: &Cohort) -> usize {
    cohort.outcomes.values().filter(|o| !o.passed).count()
}

/// Total clicks per roster student, in roster order.
pub fn click_totals(cohort: &Cohort) -> Vec<u64> {
    let mut totals: BTreeMap<&StudentId, u64> = cohort.roster.keys().map(|s| (s, 0)).collect();
    for e in &cohort.events {
        if let Some(t) = totals.get_mut(&e.student) {
            *t += 1;
        }
    }
    totals.into_values().collect()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either side is constant.
pub fn rank_correlation(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthParams {
        SynthParams {
            seed,
            n_students: 20,
            target_fail_count: 4,
            ..SynthParams::default()
        }
    }

    fn calendar(p: &SynthParams, scheme: &GradeScheme) -> AssessmentCalendar {
        AssessmentCalendar::monthly(scheme, p.semester_start).unwrap()
    }

    #[test]
    fn same_seed_same_cohort() {
        let scheme = GradeScheme::reference();
        let p = small(7);
        let cal = calendar(&p, &scheme);
        let a = generate_cohort(&p, &scheme, &cal).unwrap();
        let b = generate_cohort(&p, &scheme, &cal).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_cohort(&small(8), &scheme, &cal).unwrap());
        assert!(a.has_all_outcomes());
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.history[0].year, "2018/19");
        assert_eq!(a.history[2].year, "2020/21");
    }

    #[test]
    fn perfect_signal_has_no_discordant_pairs() {
        let scheme = GradeScheme::reference();
        let p = SynthParams {
            engagement_signal: 1.0,
            noise: 0.0,
            ..small(3)
        };
        let c = generate_cohort(&p, &scheme, &calendar(&p, &scheme)).unwrap();
        let clicks = click_totals(&c);
        let points: Vec<u32> = c.outcomes.values().map(|o| o.total_points).collect();
        for i in 0..clicks.len() {
            for j in 0..clicks.len() {
                let dc = clicks[i] as i64 - clicks[j] as i64;
                let dp = i64::from(points[i]) - i64::from(points[j]);
                assert!(dc * dp >= 0, "students {i} and {j} are discordant");
            }
        }
        let x: Vec<f64> = clicks.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = points.iter().map(|&v| f64::from(v)).collect();
        assert!(rank_correlation(&x, &y).unwrap() > 0.99);
    }

    #[test]
    fn infeasible_targets() {
        let scheme = GradeScheme::reference();
        let cal = calendar(&SynthParams::default(), &scheme);
        let too_many = SynthParams {
            target_fail_count: 200,
            ..SynthParams::default()
        };
        assert!(generate_cohort(&too_many, &scheme, &cal).is_err());
        let bad_grade = SynthParams {
            target_mean_grade: 10.5,
            ..SynthParams::default()
        };
        assert!(generate_cohort(&bad_grade, &scheme, &cal).is_err());
        let bad_mix = SynthParams {
            gender_mix: GenderMix {
                male: 0.5,
                female: 0.4,
                other: 0.2,
            },
            ..SynthParams::default()
        };
        assert!(bad_mix.validate().is_err());
        let tiny = SynthParams {
            n_students: 9,
            ..SynthParams::default()
        };
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn calibration_hits_virtual_targets() {
        let scheme = GradeScheme::reference();
        let p = SynthParams::default();
        let c = calibrate(&p, &scheme).unwrap();
        let s = VirtualCohort::new(&scheme, p.noise).stats(&scheme, c);
        assert!((s.fail_share - 18.0 / 106.0).abs() < 0.01, "{}", s.fail_share);
        assert!((s.mean_pass_grade - 7.8).abs() < 0.05, "{}", s.mean_pass_grade);
    }

    #[test]
    fn year_labels() {
        assert_eq!(prior_year_label("2021/22", 1), "2020/21");
        assert_eq!(prior_year_label("2000/01", 1), "1999/00");
        assert_eq!(prior_year_label("spring", 2), "spring-minus-2");
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(rank_correlation(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn ids_are_padded() {
        assert_eq!(student_id(0, 106).as_str(), "s001");
        assert_eq!(student_id(1233, 2000).as_str(), "s1234");
    }
}
