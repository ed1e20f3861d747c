//! Course grading rules: the grade-point scheme, the 5–10 final grade scale
//! and the conjunctive pass rule (total threshold and formative minimum).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of monthly prediction checkpoints in a semester.
pub const CHECKPOINTS: u8 = 4;

/// Pseudonymous student identifier. Carries no personal data.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StudentId(String);

impl StudentId {
    pub fn new(value: impl Into<String>) -> Self {
        StudentId(value.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StudentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StudentId {
    fn from(s: &str) -> Self {
        StudentId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Assignment,
    Quiz,
    Midterm,
    OralExam,
}

impl ItemKind {
    /// Assignments and quizzes count toward the formative minimum.
    pub fn is_formative(self) -> bool {
        matches!(self, ItemKind::Assignment | ItemKind::Quiz)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeItem {
    pub id: String,
    pub kind: ItemKind,
    pub max_points: u32,
    /// Checkpoint at which the item's grade becomes visible; `None` means
    /// it is only graded after the semester (e.g. the oral exam).
    #[serde(default)]
    pub release_checkpoint: Option<u8>,
}

impl GradeItem {
    fn new(id: &str, kind: ItemKind, max_points: u32, release: Option<u8>) -> Self {
        GradeItem {
            id: id.to_string(),
            kind,
            max_points,
            release_checkpoint: release,
        }
    }

    pub fn released_by(&self, checkpoint: u8) -> bool {
        self.release_checkpoint.is_some_and(|r| r <= checkpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeScheme {
    pub items: Vec<GradeItem>,
    pub pass_threshold_points: u32,
    pub formative_min_points: u32,
}

impl Default for GradeScheme {
    fn default() -> Self {
        Self::reference()
    }
}

impl GradeScheme {
    /// The reference course: eight assignments (35), two quizzes (15), two
    /// midterms (15 each) and an oral exam (20), with the default release
    /// calendar spreading items over the four checkpoints.
    pub fn reference() -> Self {
        use ItemKind::*;
        let items = vec![
            GradeItem::new("assignment1", Assignment, 5, Some(1)),
            GradeItem::new("assignment2", Assignment, 5, Some(1)),
            GradeItem::new("assignment3", Assignment, 5, Some(2)),
            GradeItem::new("assignment4", Assignment, 4, Some(2)),
            GradeItem::new("assignment5", Assignment, 4, Some(2)),
            GradeItem::new("assignment6", Assignment, 4, Some(3)),
            GradeItem::new("assignment7", Assignment, 4, Some(3)),
            GradeItem::new("assignment8", Assignment, 4, Some(3)),
            GradeItem::new("quiz1", Quiz, 7, Some(1)),
            GradeItem::new("quiz2", Quiz, 8, Some(3)),
            GradeItem::new("midterm1", Midterm, 15, Some(2)),
            GradeItem::new("midterm2", Midterm, 15, Some(4)),
            GradeItem::new("oral_exam", OralExam, 20, None),
        ];
        GradeScheme {
            items,
            pass_threshold_points: 50,
            formative_min_points: 25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u32 = self.items.iter().map(|i| i.max_points).sum();
        if total != 100 {
            return Err(Error::Validation(format!(
                "item maxima sum to {total}, expected 100"
            )));
        }
        let mut seen = BTreeSet::new();
        for item in &self.items {
            if item.id.is_empty() {
                return Err(Error::Validation("grade item with empty id".into()));
            }
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Validation(format!("duplicate grade item `{}`", item.id)));
            }
            if let Some(r) = item.release_checkpoint {
                if !(1..=CHECKPOINTS).contains(&r) {
                    return Err(Error::Validation(format!(
                        "item `{}` released at checkpoint {r}, expected 1..={CHECKPOINTS}",
                        item.id
                    )));
                }
            }
        }
        if self.pass_threshold_points > 100 {
            return Err(Error::Validation("pass threshold above 100".into()));
        }
        if self.formative_min_points > self.formative_max_points() {
            return Err(Error::Validation(
                "formative minimum exceeds available formative points".into(),
            ));
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Option<&GradeItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn formative_max_points(&self) -> u32 {
        self.items
            .iter()
            .filter(|i| i.kind.is_formative())
            .map(|i| i.max_points)
            .sum()
    }

    /// Items visible at `checkpoint`, in scheme order.
    pub fn released_items(&self, checkpoint: u8) -> impl Iterator<Item = &GradeItem> {
        self.items.iter().filter(move |i| i.released_by(checkpoint))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Other,
}

impl Gender {
    pub const ALL: [Gender; 3] = [Gender::Male, Gender::Female, Gender::Other];

    /// Lenient parse: anything unrecognised becomes `Other`.
    pub fn normalize(raw: &str) -> Gender {
        match raw.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Gender::Male,
            "female" | "f" => Gender::Female,
            _ => Gender::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub gender: Gender,
    pub disability: bool,
    pub schedule_group: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalOutcome {
    pub total_points: u32,
    pub formative_points: u32,
    pub passed: bool,
    pub final_grade: u8,
}

/// Maps 0–100 grade points onto the 5–10 scale: 0–49 → 5, then one grade
/// per decade, with 90–100 → 10.
pub fn grade_from_points(points: u32) -> Result<u8> {
    match points {
        0..=49 => Ok(5),
        50..=59 => Ok(6),
        60..=69 => Ok(7),
        70..=79 => Ok(8),
        80..=89 => Ok(9),
        90..=100 => Ok(10),
        _ => Err(Error::Domain(format!("grade points {points} outside 0..=100"))),
    }
}

/// Items missing from `earned` count as zero. A student who reaches the
/// total threshold but misses the formative minimum fails with grade 5.
pub fn evaluate_outcome(earned: &BTreeMap<String, u32>, scheme: &GradeScheme) -> Result<FinalOutcome> {
    for (id, &points) in earned {
        let item = scheme
            .item(id)
            .ok_or_else(|| Error::Validation(format!("unknown grade item `{id}`")))?;
        if points > item.max_points {
            return Err(Error::Validation(format!(
                "item `{id}`: {points} points exceeds maximum {}",
                item.max_points
            )));
        }
    }
    let mut total = 0;
    let mut formative = 0;
    for item in &scheme.items {
        let p = earned.get(&item.id).copied().unwrap_or(0);
        total += p;
        if item.kind.is_formative() {
            formative += p;
        }
    }
    let passed = total >= scheme.pass_threshold_points && formative >= scheme.formative_min_points;
    let final_grade = if passed { grade_from_points(total)? } else { 5 };
    Ok(FinalOutcome {
        total_points: total,
        formative_points: formative,
        passed,
        final_grade,
    })
}
