//! The `gradecast` command line.

use std::future::Future;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use gradecast_core::explain::Verdict;
use gradecast_core::features::extract_features;
use gradecast_core::ingest::Cohort;
use gradecast_core::pipeline::{evaluate_all, save_models, train_all, with_workers, AssessmentCalendar};
use gradecast_core::synth::{export_cohort, fail_count, generate_cohort, mean_pass_grade, SynthParams};
use gradecast_core::StudentId;

use crate::api::{router, ApiSettings, AppState};
use crate::config::ServiceConfig;
use crate::store::{ModelStore, StoreSettings};
use crate::views::PredictionView;

pub const EVAL_TABLE_FILE: &str = "evaluation.txt";
pub const EVAL_JSON_FILE: &str = "evaluation.json";

#[derive(Debug, Parser)]
#[command(name = "gradecast", version, about = "Checkpoint grade prediction for a single course")]
pub struct Cli {
    /// TOML configuration file; `GRADECAST_*` variables override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Also write each checkpoint's feature matrix as CSV to the report
    /// directory.
    #[arg(long, global = true)]
    pub dump_features: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort in the ingest layout.
    Synth {
        #[arg(long, default_value_t = 106)]
        n: usize,
        /// Defaults to the configured cohort directory.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// How strongly activity tracks ability (0..=1).
        #[arg(long)]
        signal: Option<f64>,
        /// Scale of the per-item and click noise (0 = deterministic).
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Ingest and validate the cohort directory; print a summary.
    Ingest,
    /// Train all checkpoint models and write them to the model directory.
    Train,
    /// Cross-validate every checkpoint; write a table and a JSON report.
    Evaluate,
    /// Print one prediction as JSON.
    Predict {
        #[arg(long)]
        student: String,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        checkpoint: u8,
    },
    /// Print one prediction with its explanation as text.
    Explain {
        #[arg(long)]
        student: String,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        checkpoint: u8,
        /// Number of attribution rows to print (all when omitted).
        #[arg(long)]
        top: Option<usize>,
    },
    /// Run the HTTP API.
    Serve {
        /// Overrides `server.bind`.
        #[arg(long)]
        bind: Option<String>,
    },
}

pub fn load_config(cli: &Cli) -> anyhow::Result<ServiceConfig> {
    let mut config = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = load_config(&cli)?;
    let dump = cli.dump_features;
    match cli.command {
        Command::Synth { n, out: dir, signal, noise } => {
            let dir = dir.unwrap_or_else(|| config.data.cohort_dir.clone());
            synth(&config, n, signal, noise, &dir, out)
        }
        Command::Ingest => {
            let (cohort, calendar) = load(&config, dump)?;
            ingest_summary(&cohort, &calendar, out)
        }
        Command::Train => {
            let (cohort, calendar) = load(&config, dump)?;
            let params = config.pipeline_params();
            let models = with_workers(config.workers, || train_all(&cohort, &calendar, &config.scheme, &params))??;
            for path in save_models(&config.data.model_dir, &models)? {
                writeln!(out, "wrote {}", path.display())?;
            }
            Ok(())
        }
        Command::Evaluate => {
            let (cohort, calendar) = load(&config, dump)?;
            let params = config.pipeline_params();
            let report =
                with_workers(config.workers, || evaluate_all(&cohort, &calendar, &config.scheme, &params))??;
            let table = report.render_table();
            let dir = &config.data.report_dir;
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            std::fs::write(dir.join(EVAL_TABLE_FILE), &table)?;
            let mut json = serde_json::to_vec_pretty(&report)?;
            json.push(b'\n');
            std::fs::write(dir.join(EVAL_JSON_FILE), json)?;
            write!(out, "{table}")?;
            Ok(())
        }
        Command::Predict { student, checkpoint } => {
            let view = predict(&config, dump, &student, checkpoint)?;
            serde_json::to_writer_pretty(&mut *out, &view)?;
            writeln!(out)?;
            Ok(())
        }
        Command::Explain { student, checkpoint, top } => {
            let view = predict(&config, dump, &student, checkpoint)?;
            write_explanation(&view, top, out)
        }
        Command::Serve { bind } => {
            let mut config = config;
            if let Some(b) = bind {
                config.server.bind = b;
            }
            if dump {
                load(&config, true)?;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(config, shutdown_signal()))
        }
    }
}

fn synth(
    config: &ServiceConfig,
    n: usize,
    signal: Option<f64>,
    noise: Option<f64>,
    dir: &Path,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let defaults = SynthParams::default();
    let mut p = SynthParams {
        seed: config.seed,
        n_students: n,
        // keep the reference failure rate for other cohort sizes
        target_fail_count: (n * defaults.target_fail_count).div_ceil(defaults.n_students),
        ..defaults
    };
    if let Some(s) = signal {
        p.engagement_signal = s;
    }
    if let Some(z) = noise {
        p.noise = z;
    }
    let calendar = config.calendar(p.semester_start)?;
    let cohort = generate_cohort(&p, &config.scheme, &calendar)?;
    for path in export_cohort(&cohort, dir, &config.scheme)? {
        writeln!(out, "wrote {}", path.display())?;
    }
    writeln!(
        out,
        "{} students, {} failed, mean passing grade {:.2}",
        cohort.roster.len(),
        fail_count(&cohort),
        mean_pass_grade(&cohort).unwrap_or(f64::NAN)
    )?;
    Ok(())
}

fn load(config: &ServiceConfig, dump: bool) -> anyhow::Result<(Cohort, AssessmentCalendar)> {
    let settings = StoreSettings::from_config(config);
    let cohort = settings
        .load_cohort()
        .with_context(|| format!("ingesting {}", config.data.cohort_dir.display()))?;
    let calendar = settings.calendar(&cohort)?;
    if dump {
        dump_features(config, &cohort, &calendar)?;
    }
    Ok((cohort, calendar))
}

fn dump_features(config: &ServiceConfig, cohort: &Cohort, calendar: &AssessmentCalendar) -> anyhow::Result<()> {
    let dir = &config.data.report_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for cp in &calendar.checkpoints {
        let matrix = extract_features(cohort, cp, &config.scheme)?;
        let path = dir.join(format!("features_cp{}.csv", cp.index));
        matrix.write_csv(std::fs::File::create(&path)?)?;
        tracing::info!(path = %path.display(), "feature matrix written");
    }
    Ok(())
}

fn ingest_summary(cohort: &Cohort, calendar: &AssessmentCalendar, out: &mut dyn Write) -> anyhow::Result<()> {
    let failed = cohort.outcomes.values().filter(|o| !o.passed).count();
    writeln!(out, "academic year   {}", cohort.meta.academic_year)?;
    writeln!(out, "semester        {} .. {}", cohort.semester_start(), cohort.semester_end())?;
    writeln!(out, "students        {}", cohort.roster.len())?;
    writeln!(out, "events          {}", cohort.events.len())?;
    writeln!(out, "final outcomes  {} ({failed} failed)", cohort.outcomes.len())?;
    writeln!(out, "history years   {}", cohort.history.len())?;
    writeln!(
        out,
        "survey answers  {}",
        cohort.survey.buckets.iter().map(|b| b.count).sum::<u32>()
    )?;
    for cp in &calendar.checkpoints {
        writeln!(out, "checkpoint {}    {} (data before {})", cp.index, cp.label, cp.cutoff)?;
    }
    Ok(())
}

fn predict(config: &ServiceConfig, dump: bool, student: &str, checkpoint: u8) -> anyhow::Result<PredictionView> {
    if dump {
        load(config, true)?;
    }
    let store = ModelStore::open(StoreSettings::from_config(config))?;
    let snap = store.snapshot();
    let id = StudentId::new(student);
    if !snap.knows(&id) {
        bail!("unknown student `{student}`");
    }
    let view = snap.compute_prediction(&id, checkpoint, config.top_k, config.model.shapley_budget)?;
    view.check_local_accuracy().map_err(anyhow::Error::msg)?;
    Ok(view)
}

pub fn write_explanation(view: &PredictionView, top: Option<usize>, out: &mut dyn Write) -> anyhow::Result<()> {
    match view.verdict {
        Verdict::Pass => writeln!(
            out,
            "{} at checkpoint {} ({}): pass, {:.1} points, grade {} (risk {:.2})",
            view.student,
            view.checkpoint,
            view.label,
            view.predicted_points.unwrap_or(f64::NAN),
            view.predicted_grade.unwrap_or(0),
            view.risk_probability
        )?,
        Verdict::AtRisk => writeln!(
            out,
            "{} at checkpoint {} ({}): at risk of failing (risk {:.2})",
            view.student, view.checkpoint, view.label, view.risk_probability
        )?,
    }
    for s in &view.sentences {
        writeln!(out, "  - {}", s.text)?;
    }
    let a = &view.attribution;
    let mut rows: Vec<_> = a.phi.iter().collect();
    rows.sort_by(|x, y| y.value.abs().total_cmp(&x.value.abs()));
    rows.truncate(top.unwrap_or(rows.len()));
    let width = rows.iter().map(|r| r.feature.len()).max().unwrap_or(0).max(10);
    writeln!(out, "{:<width$}  {:>12}", "base", format!("{:.4}", a.base))?;
    for r in rows {
        writeln!(out, "{:<width$}  {:>+12.4}", r.feature, r.value)?;
    }
    writeln!(out, "{:<width$}  {:>12}", "prediction", format!("{:.4}", a.prediction))?;
    Ok(())
}

pub fn app_state(config: &ServiceConfig, store: Arc<ModelStore>) -> AppState {
    AppState {
        store,
        settings: Arc::new(ApiSettings {
            admin_token: config.server.admin_token.clone(),
            top_k: config.top_k,
            shapley_budget: config.model.shapley_budget,
            cors_origins: config.server.cors_origins.clone(),
            static_dir: config.data.static_dir.clone(),
        }),
    }
}

/// Loads or trains the models, binds and serves until `shutdown` resolves.
pub async fn serve(config: ServiceConfig, shutdown: impl Future<Output = ()> + Send + 'static) -> anyhow::Result<()> {
    let settings = StoreSettings::from_config(&config);
    let store = tokio::task::spawn_blocking(move || ModelStore::open(settings))
        .await?
        .context("refusing to start")?;
    let app = router(app_state(&config, Arc::new(store)));
    let listener = tokio::net::TcpListener::bind(&config.server.bind)
        .await
        .with_context(|| format!("binding {}", config.server.bind))?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    Ok(())
}

async fn shutdown_signal() {
    if let Err(e) = tokio::signal::ctrl_c().await {
        tracing::error!(error = %e, "cannot listen for ctrl-c");
        std::future::pending::<()>().await;
    }
}
