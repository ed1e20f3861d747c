use serde::{Deserialize, Serialize};

use super::{Attribution, ExplainedOutput};
use crate::features::{Feature, FeatureRole};
use crate::ingest::Component;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    AtRisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    SupportsPass,
    SupportsRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub text: String,
    pub direction: Direction,
    /// Feature the sentence talks about; `None` for the course-average note.
    pub feature: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub attribution: Attribution,
    pub sentences: Vec<Sentence>,
}

fn capitalized(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// `assignment3` → `assignment 3`, `oral_exam` → `oral exam`.
fn item_label(id: &str) -> String {
    let mut out = String::with_capacity(id.len() + 2);
    let mut prev_alpha = false;
    for ch in id.chars() {
        if ch == '_' {
            out.push(' ');
            prev_alpha = false;
            continue;
        }
        if ch.is_ascii_digit() && prev_alpha {
            out.push(' ');
        }
        prev_alpha = ch.is_alphabetic();
        out.push(ch);
    }
    out
}

fn subject(feature: &Feature) -> String {
    match &feature.role {
        FeatureRole::Gender { .. } => "Your demographic profile (gender)".into(),
        FeatureRole::Disability => "Your demographic profile (disability status)".into(),
        FeatureRole::ScheduleGroup { .. } => "Your schedule group".into(),
        FeatureRole::PreSemesterClicks => "Your activity before the semester started".into(),
        FeatureRole::MonthClicks { month } => format!("Your activity in {}", capitalized(month)),
        FeatureRole::ComponentClicks { component } => match component {
            Component::Other => "Your use of other course activities".into(),
            c => format!("Your use of {c} activities"),
        },
        FeatureRole::FirstInteraction => "The timing of your first course login".into(),
        FeatureRole::TotalClicks => "Your overall activity so far".into(),
        FeatureRole::GradeItem { item } => format!("Your result in {}", item_label(item)),
    }
}

fn effect(output: ExplainedOutput, phi: f64) -> String {
    let verb = if phi > 0.0 { "raised" } else { "lowered" };
    match output {
        ExplainedOutput::GradePoints => format!("{verb} the predicted result by {:.1} points", phi.abs()),
        ExplainedOutput::PassProbability => format!(
            "{verb} the predicted chance of passing by {:.1} percentage points",
            phi.abs() * 100.0
        ),
    }
}

/// Renders the `k` largest non-zero contributions (by |φ|, ties in schema
/// order) as sentences. An all-zero attribution yields a single sentence
/// noting that the prediction is the course average.
pub fn textual_explanation(attr: &Attribution, schema: &[Feature], k: usize, verdict: Verdict) -> Explanation {
    let mut ranked: Vec<usize> = (0..attr.phi.len().min(schema.len()))
        .filter(|&i| attr.phi[i] != 0.0)
        .collect();
    ranked.sort_by(|&a, &b| attr.phi[b].abs().total_cmp(&attr.phi[a].abs()).then(a.cmp(&b)));
    ranked.truncate(k.max(1));

    let sentences = if ranked.is_empty() {
        let text = match attr.output {
            ExplainedOutput::GradePoints => format!(
                "The prediction equals the course average of {:.1} points.",
                attr.base_value
            ),
            ExplainedOutput::PassProbability => format!(
                "The prediction equals the course average chance of passing ({:.1}%).",
                attr.base_value * 100.0
            ),
        };
        vec![Sentence {
            text,
            direction: match verdict {
                Verdict::Pass => Direction::SupportsPass,
                Verdict::AtRisk => Direction::SupportsRisk,
            },
            feature: None,
        }]
    } else {
        ranked
            .into_iter()
            .map(|i| {
                let phi = attr.phi[i];
                Sentence {
                    text: format!("{} {}.", subject(&schema[i]), effect(attr.output, phi)),
                    direction: if phi > 0.0 {
                        Direction::SupportsPass
                    } else {
                        Direction::SupportsRisk
                    },
                    feature: Some(schema[i].name.clone()),
                }
            })
            .collect()
    };
    Explanation {
        attribution: attr.clone(),
        sentences,
    }
}
