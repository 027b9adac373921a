//! Command line.
//!
//! Settings come from flags, then `VPU_*` environment variables, then the
//! config file named by `--config`, then defaults. The config file is TOML
//! with flat keys:
//!
//! ```toml
//! store = "data/store"          # store directory
//! rules = "rules.toml"          # modifier rules; default rules when absent
//! payers = "payers.csv"         # replaces the store's payer table
//! listen = "127.0.0.1:8080"
//! token = "secret"              # bearer token for POST /ingest
//! static_dir = "dashboard"      # served for paths the API does not handle
//! machine = false
//! pace = "business_days"        # or "calendar_days"
//! slicer_enabled = false
//! slicer_clamp_min = 0.5        # both bounds or neither
//! slicer_clamp_max = 1.5
//! ```
//!
//! Relative paths in the file are resolved against the file's directory.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use vpu_core::engine::{MonthlyStatement, SlicerClamp};
use vpu_core::pipeline::{EngineConfig, FeedbackView, PaceBasis};
use vpu_core::store::{IngestReport, RecordKind, Store};
use vpu_core::wire::to_machine;

use crate::app::{load_payers, load_rules, parse_date, parse_month, App, AppError, ErrorClass, ProposedService, WhatIfRequest};

const DEFAULT_STORE: &str = "vpu-store";
const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "vpu", version, about = "Value-per-unit clinical productivity engine")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file.
    #[arg(long, global = true, env = "VPU_CONFIG")]
    pub config: Option<PathBuf>,
    /// Store directory.
    #[arg(long, global = true, env = "VPU_STORE")]
    pub store: Option<PathBuf>,
    /// Modifier rules file.
    #[arg(long, global = true, env = "VPU_RULES")]
    pub rules: Option<PathBuf>,
    /// Payer CSV that replaces the store's payer table.
    #[arg(long, global = true, env = "VPU_PAYERS")]
    pub payers: Option<PathBuf>,
    /// Emit machine-readable JSON.
    #[arg(long, global = true, env = "VPU_MACHINE")]
    pub machine: bool,
    /// Listen address for `serve`.
    #[arg(long, global = true, env = "VPU_LISTEN")]
    pub listen: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest CSV files of one record kind.
    Ingest {
        /// staff, services, payers, outcomes or eligibility.
        kind: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Monthly statement for one staff member.
    Statement {
        #[arg(long)]
        staff: String,
        #[arg(long)]
        month: String,
    },
    /// Month-to-date feedback as of a date.
    Feedback {
        #[arg(long)]
        staff: String,
        #[arg(long)]
        date: String,
    },
    /// Project a month with proposed services added. Nothing is stored.
    Whatif {
        #[arg(long)]
        staff: String,
        #[arg(long)]
        month: String,
        /// JSON array of proposed services.
        #[arg(long)]
        proposed: Option<PathBuf>,
    },
    #[command(subcommand)]
    Report(Report),
    /// Run the HTTP API.
    Serve {
        /// Bearer token guarding POST /ingest.
        #[arg(long, env = "VPU_TOKEN")]
        token: Option<String>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Check the config file, rules and payers.
    ValidateConfig,
}

#[derive(Debug, Subcommand)]
pub enum Report {
    /// Baseline versus comparison month for a per-staff metric.
    Prepost {
        /// productivity, vpu, revenue or treatment_plan.
        #[arg(long)]
        metric: String,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        compare: String,
        /// CSV instead of text.
        #[arg(long)]
        csv: bool,
    },
    /// Intake access intervals from a CSV of scheduled_at,occurred_at.
    Access { file: PathBuf },
    /// Eligible clients for a month.
    Eligibility {
        #[arg(long)]
        month: String,
        #[arg(long, default_value_t = 0)]
        baseline: u64,
    },
    /// Actual versus VPU revenue by month.
    Variance {
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Per-staff totals for a month.
    Roster {
        #[arg(long)]
        month: String,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub store: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub payers: Option<PathBuf>,
    pub listen: Option<String>,
    pub token: Option<String>,
    pub static_dir: Option<PathBuf>,
    pub machine: Option<bool>,
    pub pace: Option<String>,
    pub slicer_enabled: Option<bool>,
    pub slicer_clamp_min: Option<Decimal>,
    pub slicer_clamp_max: Option<Decimal>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::new(ErrorClass::Config, format!("{}: {e}", path.display())))?;
        let mut config: FileConfig =
            toml::from_str(&text).map_err(|e| AppError::new(ErrorClass::Config, format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.store, &mut config.rules, &mut config.payers, &mut config.static_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    fn engine(&self) -> Result<EngineConfig, AppError> {
        let pace = match &self.pace {
            Some(p) => p.parse().map_err(|e: String| AppError::new(ErrorClass::Config, e))?,
            None => PaceBasis::default(),
        };
        let slicer_clamp = match (self.slicer_clamp_min, self.slicer_clamp_max) {
            (None, None) => None,
            (Some(min), Some(max)) if min <= max => Some(SlicerClamp { min, max }),
            (Some(_), Some(_)) => {
                return Err(AppError::new(ErrorClass::Config, "slicer_clamp_min exceeds slicer_clamp_max"));
            }
            _ => {
                return Err(AppError::new(
                    ErrorClass::Config,
                    "slicer_clamp_min and slicer_clamp_max must be set together",
                ));
            }
        };
        Ok(EngineConfig {
            slicer_enabled: self.slicer_enabled.unwrap_or(false),
            slicer_clamp,
            pace,
        })
    }
}

/// Flags, environment and config file merged.
#[derive(Debug)]
pub struct Settings {
    pub store: PathBuf,
    pub rules: Option<PathBuf>,
    pub payers: Option<PathBuf>,
    pub listen: String,
    pub machine: bool,
    pub token: Option<String>,
    pub static_dir: Option<PathBuf>,
    pub engine: EngineConfig,
}

impl Settings {
    pub fn resolve(global: &GlobalArgs) -> Result<Self, AppError> {
        let file = match &global.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Ok(Settings {
            store: global
                .store
                .clone()
                .or(file.store.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_STORE)),
            rules: global.rules.clone().or(file.rules.clone()),
            payers: global.payers.clone().or(file.payers.clone()),
            listen: global
                .listen
                .clone()
                .or(file.listen.clone())
                .unwrap_or_else(|| DEFAULT_LISTEN.into()),
            machine: global.machine || file.machine.unwrap_or(false),
            token: file.token.clone(),
            static_dir: file.static_dir.clone(),
            engine: file.engine()?,
        })
    }

    pub fn app(&self) -> Result<App, AppError> {
        let store = Store::open(&self.store)?;
        let mut app = App::new(store);
        app.rules = load_rules(self.rules.as_deref())?;
        app.payers = self.payers.as_deref().map(load_payers).transpose()?;
        app.config = self.engine.clone();
        app.token = self.token.clone();
        Ok(app)
    }
}

/// Exit status for an error class.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Internal => 1,
        ErrorClass::BadRequest => 2,
        ErrorClass::NotFound => 3,
        ErrorClass::Unprocessable => 4,
        ErrorClass::Config => 5,
        ErrorClass::Unauthorized | ErrorClass::Forbidden => 6,
    }
}

/// Runs the command line with `args` (program name first), writing to `out`
/// and `err`, and returns the exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {}", e.class.code(), e.message);
            exit_code(e.class)
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), AppError> {
    out.write_all(text.as_bytes())
        .map_err(|e| AppError::new(ErrorClass::Internal, format!("writing output: {e}")))
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), AppError> {
    emit(out, &to_machine(value))
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), AppError> {
    let settings = Settings::resolve(&cli.global)?;
    let machine = settings.machine;
    match cli.command {
        Command::Ingest { kind, files } => {
            let kind: RecordKind = kind.parse()?;
            let app = settings.app()?;
            let mut reports = Vec::new();
            for f in &files {
                reports.push(app.store.ingest_path(kind, f)?);
            }
            if machine {
                emit_json(out, &reports)
            } else {
                reports.iter().try_for_each(|r| emit(out, &ingest_text(r)))
            }
        }
        Command::Statement { staff, month } => {
            let app = settings.app()?;
            let st = app.statement(&app.snapshot(), &staff, parse_month(&month)?)?;
            if machine {
                emit_json(out, &st)
            } else {
                emit(out, &statement_text(&st))
            }
        }
        Command::Feedback { staff, date } => {
            let app = settings.app()?;
            let fb = app.feedback(&app.snapshot(), &staff, parse_date(&date)?)?;
            if machine {
                emit_json(out, &fb)
            } else {
                emit(out, &feedback_text(&fb))
            }
        }
        Command::Whatif { staff, month, proposed } => {
            let app = settings.app()?;
            let proposed: Vec<ProposedService> = match proposed {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| AppError::bad_request(format!("{}: {e}", path.display())))?;
                    serde_json::from_str(&text)
                        .map_err(|e| AppError::bad_request(format!("{}: invalid proposed services: {e}", path.display())))?
                }
                None => Vec::new(),
            };
            let request = WhatIfRequest {
                staff_id: staff,
                month,
                proposed,
            };
            let st = app.whatif(&app.snapshot(), &request)?;
            if machine {
                emit_json(out, &st)
            } else {
                emit(out, &statement_text(&st))
            }
        }
        Command::Report(report) => run_report(&settings, report, out),
        Command::Serve { token, static_dir } => {
            let mut app = settings.app()?;
            app.token = token.or(app.token);
            serve(Arc::new(app), &settings.listen, static_dir.or(settings.static_dir.clone()))
        }
        Command::ValidateConfig => {
            let rules = load_rules(settings.rules.as_deref())?;
            let payers = settings.payers.as_deref().map(load_payers).transpose()?;
            #[derive(Serialize)]
            struct Checked {
                rules: usize,
                claim_gates: Vec<String>,
                payers: Option<usize>,
            }
            let checked = Checked {
                rules: rules.rules().len(),
                claim_gates: rules.claim_gates().iter().map(|c| c.as_str().to_string()).collect(),
                payers: payers.map(|p| p.len()),
            };
            if machine {
                emit_json(out, &checked)
            } else {
                let mut text = format!("ok: {} rules; claim gates: {}", checked.rules, checked.claim_gates.join(", "));
                if let Some(n) = checked.payers {
                    text.push_str(&format!("; {n} payers"));
                }
                text.push('\n');
                emit(out, &text)
            }
        }
    }
}

fn run_report(settings: &Settings, report: Report, out: &mut dyn Write) -> Result<(), AppError> {
    let machine = settings.machine;
    match report {
        Report::Access { file } => {
            let text = std::fs::read_to_string(&file)
                .map_err(|e| AppError::bad_request(format!("{}: {e}", file.display())))?;
            let app = App::new(Store::in_memory());
            let r = app.access(&file.display().to_string(), &text)?;
            if machine {
                return emit_json(out, &r);
            }
            let f = |v: Option<f64>| v.map(vpu_core::wire::format_f64).unwrap_or_else(|| "undefined".into());
            let mut text = format!("cases: {}\nmean days: {}\nmedian days: {}\n", r.days.len(), f(r.mean), f(r.median));
            for x in &r.excluded {
                text.push_str(&format!("excluded record {}: {}\n", x.index, x.reason));
            }
            emit(out, &text)
        }
        other => {
            let app = settings.app()?;
            let snap = app.snapshot();
            match other {
                Report::Prepost {
                    metric,
                    baseline,
                    compare,
                    csv,
                } => {
                    let r = app.prepost(&snap, &metric, parse_month(&baseline)?, parse_month(&compare)?)?;
                    if machine {
                        emit_json(out, &r)
                    } else if csv {
                        emit(out, &r.to_csv())
                    } else {
                        emit(out, &r.to_text())
                    }
                }
                Report::Eligibility { month, baseline } => {
                    let r = app.eligibility(&snap, parse_month(&month)?, baseline);
                    if machine {
                        return emit_json(out, &r);
                    }
                    let rate = |v: &Option<vpu_core::Exact>| v.as_ref().map(|x| x.to_fixed(4)).unwrap_or_else(|| "undefined".into());
                    emit(
                        out,
                        &format!(
                            "{}: caseload {}, eligible {}, rate {}, eligible vs baseline {}\n",
                            r.month,
                            r.caseload_count,
                            r.eligible_count,
                            rate(&r.rate),
                            rate(&r.eligible_vs_baseline)
                        ),
                    )
                }
                Report::Variance { from, to } => {
                    let r = app.variance(&snap, parse_month(&from)?, parse_month(&to)?)?;
                    if machine {
                        return emit_json(out, &r);
                    }
                    let mut text = String::from("month    actual        vpu_revenue   variance\n");
                    for row in &r.rows {
                        text.push_str(&format!(
                            "{}  {:>12}  {:>12}  {}\n",
                            row.month,
                            row.actual_revenue.display(),
                            row.vpu_revenue.to_fixed(2),
                            row.variance_pct
                                .as_ref()
                                .map(|v| format!("{}%", v.to_fixed(2)))
                                .unwrap_or_else(|| "undefined".into())
                        ));
                    }
                    emit(out, &text)
                }
                Report::Roster { month } => {
                    let r = app.roster(&snap, parse_month(&month)?)?;
                    if machine {
                        return emit_json(out, &r);
                    }
                    let mut text = format!("roster {}\n", r.month);
                    for s in &r.staff {
                        text.push_str(&format!(
                            "{:<12} fte {:>6}  vpu {:>8}  target {:>8}  {:>7}%  flags {}\n",
                            s.staff_id,
                            s.clinical_fte.round_dp(2),
                            s.vpu_final_total.to_fixed(2),
                            s.target.to_fixed(2),
                            percent(&s.productivity_percentage),
                            s.flags
                        ));
                    }
                    text.push_str(&format!(
                        "total vpu {} of {} ({}%)\n",
                        r.vpu_final_total.to_fixed(2),
                        r.target_total.to_fixed(2),
                        percent(&r.productivity_percentage)
                    ));
                    emit(out, &text)
                }
                Report::Access { .. } => unreachable!("handled above"),
            }
        }
    }
}

fn serve(app: Arc<App>, listen: &str, static_dir: Option<PathBuf>) -> Result<(), AppError> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| AppError::new(ErrorClass::Internal, e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| AppError::new(ErrorClass::Config, format!("binding {listen}: {e}")))?;
        if app.token.is_none() {
            tracing::warn!("no ingest token configured; POST /ingest is disabled");
        }
        tracing::info!(address = %listen, "serving");
        axum::serve(listener, crate::api::router(app, static_dir))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| AppError::new(ErrorClass::Internal, e.to_string()))
    })
}

fn percent(ratio: &vpu_core::Exact) -> String {
    (ratio.clone() * vpu_core::Exact::from_integer(100)).to_fixed(2)
}

fn ingest_text(r: &IngestReport) -> String {
    let mut text = format!("{}: {} accepted, {} rejected\n", r.source, r.accepted, r.rejected);
    for x in &r.rejections {
        text.push_str(&format!("  line {}: {}\n", x.line, x.reason));
    }
    text
}

fn statement_text(st: &MonthlyStatement) -> String {
    let mut text = format!(
        "statement {} {}\nclinical fte {}  target {}  vpu {} (base {})  productivity {}%\n\n",
        st.staff_id,
        st.month,
        st.clinical_fte.round_dp(2),
        st.target.to_fixed(2),
        st.vpu_final_total.to_fixed(2),
        st.vpu_base_total.to_fixed(2),
        percent(&st.productivity_percentage)
    );
    text.push_str("date        service       client        type    hours   revenue   base  factor   final\n");
    for l in &st.per_service_lines {
        text.push_str(&format!(
            "{}  {:<12}  {:<12}  {:<6}  {:>5}  {:>8}  {:>5}  {:>6}  {:>6}\n",
            l.date,
            l.service_id,
            l.client_id,
            l.service_type,
            l.duration_hours.round_dp(2),
            l.revenue.display(),
            l.vpu_base.to_fixed(2),
            l.modifier_factor.to_fixed(2),
            l.vpu_final.to_fixed(2)
        ));
    }
    flags_text(&mut text, &st.flags);
    text
}

fn feedback_text(fb: &FeedbackView) -> String {
    let mut text = format!(
        "feedback {} as of {}\nmonth to date vpu {}  target {}  productivity {}%\npro-rata target {} ({} of {} days)  pace {}\n",
        fb.staff_id,
        fb.as_of,
        fb.month_to_date_vpu.to_fixed(2),
        fb.target.to_fixed(2),
        percent(&fb.productivity_percentage),
        fb.prorata_target.to_fixed(2),
        fb.elapsed_days,
        fb.total_days,
        fb.pace
            .as_ref()
            .map(|p| format!("{}%", percent(p)))
            .unwrap_or_else(|| "undefined".into())
    );
    flags_text(&mut text, &fb.flags);
    text
}

fn flags_text(text: &mut String, flags: &[vpu_core::engine::Flag]) {
    if flags.is_empty() {
        return;
    }
    text.push_str("\nflags:\n");
    for f in flags {
        match &f.service_id {
            Some(id) => text.push_str(&format!("  [{}] {}: {}\n", f.code, id, f.message)),
            None => text.push_str(&format!("  [{}] {}\n", f.code, f.message)),
        }
    }
}
