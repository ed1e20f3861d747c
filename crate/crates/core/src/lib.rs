//! Checkpoint-based final-grade prediction for a single course.
//!
//! The crate covers the whole offline path: ingesting VLE logs, gradebooks
//! and rosters ([`ingest`]), turning them into monthly feature matrices
//! ([`features`]), fitting CART trees and random forests ([`trees`]),
//! explaining predictions with exact interventional Shapley values
//! ([`explain`]), the classifier/regressor cascade with cross-validation
//! ([`pipeline`]) and a calibrated synthetic cohort generator ([`synth`]).

pub mod error;
pub mod explain;
pub mod features;
pub mod grading;
pub mod ingest;
pub mod pipeline;
pub mod synth;
pub mod trees;

pub use error::{Error, Result};
pub use grading::{
    evaluate_outcome, grade_from_points, Demographics, FinalOutcome, Gender, GradeItem, GradeScheme, ItemKind,
    StudentId,
};
