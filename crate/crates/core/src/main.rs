//! `ctg`: command-line front end for the CTG pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use ctg_core::events::EventAnalysis;
use ctg_core::ingest::{synth_cohort, write_dataset, CohortConfig};
use ctg_core::labels::Label;
use ctg_core::ml::{train_svm, Normalizer, RocPoint};
use ctg_core::pipeline::{load, process_patient, write_run, PipelineError, RunConfig, RunOutcome, Stage, CONFIG_KEYS};
use ctg_core::render::{roc_svg, scatter_svg, trace_svg, ScatterPoint};

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn cli() -> Command {
    let mut root = Command::new("ctg")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Cardiotocography cleaning, event detection, ARMA response features and outcome classification")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("flat key = value config file; flags override it"),
        );
    for (key, help) in CONFIG_KEYS {
        let name: &'static str = Box::leak(flag_name(key).into_boxed_str());
        root = root.arg(Arg::new(*key).long(name).global(true).value_name("VALUE").help(*help));
    }
    let stage = |name: &'static str, about: &'static str| Command::new(name).about(about);
    root.subcommand(stage("ingest", "Load a dataset and summarize each record"))
        .subcommand(stage("preprocess", "Mask artifacts, bridge short gaps, report signal quality"))
        .subcommand(stage("events", "Detect accelerations, decelerations and contractions"))
        .subcommand(stage("arma", "Fit windowed ARMA models and pole-magnitude ranges"))
        .subcommand(stage("features", "Compute per-patient features and the selected feature set"))
        .subcommand(stage("labels", "Assign outcome labels and summarize the cohort"))
        .subcommand(stage("eval", "Run the whole pipeline and evaluate a classifier"))
        .subcommand(stage("table-ii", "SVM on pole-magnitude ranges across quality tiers"))
        .subcommand(stage("table-iii", "Logistic regression on FS1..FS4, 5-fold and leave-one-out"))
        .subcommand(
            stage("synth", "Write a synthetic labelled cohort in the dataset format")
                .arg(Arg::new("patients").long("patients").default_value("40").value_parser(clap::value_parser!(usize)))
                .arg(Arg::new("at-risk-fraction").long("at-risk-fraction").default_value("0.3").value_parser(clap::value_parser!(f64)))
                .arg(Arg::new("ambiguous-fraction").long("ambiguous-fraction").default_value("0.1").value_parser(clap::value_parser!(f64)))
                .arg(Arg::new("duration-s").long("duration-s").default_value("5400").value_parser(clap::value_parser!(f64)))
                .arg(Arg::new("noise-sd").long("noise-sd").default_value("1").value_parser(clap::value_parser!(f64)))
                .arg(
                    Arg::new("max-missing-fraction")
                        .long("max-missing-fraction")
                        .default_value("0.05")
                        .value_parser(clap::value_parser!(f64)),
                ),
        )
        .subcommand(
            stage("render", "Render an SVG figure from a dataset or run outputs")
                .arg(
                    Arg::new("kind")
                        .long("kind")
                        .required(true)
                        .value_parser(["trace", "roc", "delta-r"])
                        .help("trace: one patient's signals and events; roc: curves from roc.csv files; delta-r: pole-range scatter from a run directory"),
                )
                .arg(Arg::new("patient").long("patient").help("patient id for --kind trace"))
                .arg(Arg::new("input").long("input").action(ArgAction::Append).help("roc.csv file(s) or a run directory"))
                .arg(Arg::new("output").long("output").required(true).help("SVG file to write")),
        )
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = m.get_one::<String>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("reading {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    for (key, _) in CONFIG_KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into())
}

fn print_outcome(o: &RunOutcome) {
    let c = &o.manifest.cohort;
    println!(
        "patients loaded: {} (normal {}, at-risk {}, excluded by outcome {}, excluded by quality {})",
        o.manifest.patients_loaded, c.normal, c.at_risk, c.excluded, c.quality_excluded
    );
    for d in &o.manifest.diagnostics {
        eprintln!("warning: {}: {}", d.patient_id.as_deref().unwrap_or("dataset"), d.message);
    }
    for p in &o.manifest.patient_errors {
        eprintln!("warning: {}: {}", p.patient_id, p.errors.join("; "));
    }
    if let Some(r) = &o.report {
        println!(
            "{} {} {}: n={} AUC {} TPR {} FPR {} MCC {:.3}",
            r.mode,
            r.model,
            r.feature_set,
            r.n_patients,
            fmt(r.auc),
            fmt(r.tpr),
            fmt(r.fpr),
            r.mcc
        );
    }
    if let Some(t) = &o.table_ii {
        println!("quality_min  normal  at_risk  AUC    TPR    FPR");
        for r in &t.rows {
            let rep = r.report.as_ref();
            println!(
                "{:<11}  {:<6}  {:<7}  {:<5}  {:<5}  {}",
                r.quality_min,
                r.n_normal,
                r.n_at_risk,
                fmt(rep.and_then(|x| x.auc)),
                fmt(rep.and_then(|x| x.tpr)),
                fmt(rep.and_then(|x| x.fpr))
            );
        }
    }
    if let Some(rows) = &o.table_iii {
        println!("set  mode   n    AUC    TPR    FPR    MCC");
        for r in rows {
            println!(
                "{:<4} {:<6} {:<4} {:<6} {:<6} {:<6} {:.3}",
                r.feature_set,
                r.mode.name(),
                r.n,
                fmt(r.auc),
                fmt(r.tpr),
                fmt(r.fpr),
                r.mcc
            );
        }
    }
    println!("outputs written to {}", o.manifest.config.out.display());
}

fn synth(cfg: &RunConfig, m: &ArgMatches) -> Result<(), PipelineError> {
    let cc = CohortConfig {
        patients: *m.get_one("patients").expect("defaulted"),
        at_risk_fraction: *m.get_one("at-risk-fraction").expect("defaulted"),
        ambiguous_fraction: *m.get_one("ambiguous-fraction").expect("defaulted"),
        duration_s: *m.get_one("duration-s").expect("defaulted"),
        noise_sd: *m.get_one("noise-sd").expect("defaulted"),
        max_missing_fraction: *m.get_one("max-missing-fraction").expect("defaulted"),
        seed: cfg.seed,
        ..CohortConfig::default()
    };
    let records = synth_cohort(&cc).map_err(|e| PipelineError::Config(e.to_string()))?;
    write_dataset(&cfg.out, &records)?;
    println!("wrote {} synthetic records to {}", records.len(), cfg.out.display());
    Ok(())
}

fn read_csv(path: &Path) -> Result<Vec<csv::StringRecord>, PipelineError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    rdr.records().collect::<Result<_, _>>().map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn render(cfg: &RunConfig, m: &ArgMatches) -> Result<(), PipelineError> {
    let output = PathBuf::from(m.get_one::<String>("output").expect("required"));
    let inputs: Vec<PathBuf> = m.get_many::<String>("input").into_iter().flatten().map(PathBuf::from).collect();
    let svg = match m.get_one::<String>("kind").map(String::as_str) {
        Some("trace") => {
            let id = m.get_one::<String>("patient").ok_or_else(|| PipelineError::Config("--patient is required for --kind trace".into()))?;
            let (records, _) = load(cfg)?;
            let rec = records
                .iter()
                .find(|r| r.patient_id() == id)
                .ok_or_else(|| PipelineError::Config(format!("patient {id} not found in {}", cfg.dataset.display())))?;
            let out = process_patient(rec, cfg, Stage::Events);
            let events: Option<&EventAnalysis> = out.events.as_ref();
            trace_svg(&format!("{id} (quality {:.2})", out.quality), &out.fhr, &out.uc, events)
        }
        Some("roc") => {
            if inputs.is_empty() {
                return Err(PipelineError::Config("--input roc.csv is required for --kind roc".into()));
            }
            let mut curves = Vec::new();
            for path in &inputs {
                let rows = read_csv(path)?;
                let pts = rows
                    .iter()
                    .map(|r| {
                        let f = |i: usize| r.get(i).and_then(|v| v.parse::<f64>().ok());
                        Some(RocPoint { threshold: f(0)?, fpr: f(1)?, tpr: f(2)? })
                    })
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| PipelineError::Config(format!("{}: expected threshold,fpr,tpr rows", path.display())))?;
                let name = path.parent().and_then(|p| p.file_name()).map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
                curves.push((name, pts));
            }
            roc_svg("ROC", &curves)
        }
        Some("delta-r") => {
            let dir = inputs.first().ok_or_else(|| PipelineError::Config("--input <run dir> is required for --kind delta-r".into()))?;
            delta_r_figure(dir, cfg)?
        }
        _ => unreachable!("clap restricts the values"),
    };
    std::fs::write(&output, svg).map_err(|source| PipelineError::Io { path: output.clone(), source })?;
    println!("wrote {}", output.display());
    Ok(())
}

/// Scatter of the first two pole-magnitude ranges by class, shaded by an
/// SVM fitted on the plotted points.
fn delta_r_figure(dir: &Path, cfg: &RunConfig) -> Result<String, PipelineError> {
    let labels: std::collections::HashMap<String, Label> = read_csv(&dir.join("labels.csv"))?
        .iter()
        .filter_map(|r| Some((r.get(0)?.to_string(), Label::parse(r.get(1)?)?)))
        .collect();
    let mut raw = Vec::new();
    let mut y = Vec::new();
    for r in read_csv(&dir.join("arma_summary.csv"))? {
        let (Some(id), Some(a), Some(b)) = (r.get(0), r.get(1).and_then(|v| v.parse::<f64>().ok()), r.get(2).and_then(|v| v.parse::<f64>().ok())) else {
            continue;
        };
        if let Some(t) = labels.get(id).and_then(|l| l.target()) {
            raw.push(vec![Some(a), Some(b)]);
            y.push(t);
        }
    }
    let points: Vec<ScatterPoint> = raw.iter().zip(&y).map(|(r, t)| ScatterPoint { x: r[0].unwrap_or(0.0), y: r[1].unwrap_or(0.0), class: *t }).collect();
    let both = y.contains(&0) && y.contains(&1) && y.len() >= 2;
    if !both {
        return Ok(scatter_svg("pole-magnitude ranges", "delta_r1", "delta_r2", &points, None));
    }
    let norm = Normalizer::fit(&raw)?;
    let model = train_svm(&norm.apply_all(&raw), &y, &cfg.svm)?;
    let surface = |a: f64, b: f64| model.predict_proba(&norm.apply(&[Some(a), Some(b)]));
    Ok(scatter_svg("pole-magnitude ranges", "delta_r1", "delta_r2", &points, Some(&surface)))
}

fn run(m: &ArgMatches) -> Result<(), PipelineError> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    let cfg = resolve_config(sub)?;
    let stage = match name {
        "synth" => return synth(&cfg, sub),
        "render" => return render(&cfg, sub),
        "ingest" => Stage::Ingest,
        "preprocess" => Stage::Preprocess,
        "events" => Stage::Events,
        "arma" => Stage::Arma,
        "features" => Stage::Features,
        "labels" => Stage::Labels,
        "eval" => Stage::Eval,
        "table-ii" => Stage::TableIi,
        "table-iii" => Stage::TableIii,
        other => unreachable!("unknown subcommand {other}"),
    };
    let outcome = write_run(&cfg, stage)?;
    print_outcome(&outcome);
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
