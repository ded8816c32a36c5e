use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lrd::data::persist::{Table, TextDoc};
use lrd::data::AlignmentReport;
use lrd::solver::{SolverConfig, TraceRecord, TraceSink};

use crate::config::RunSettings;
use crate::CliError;

pub const MANIFEST_DOC: &str = "manifest.txt";
pub const TRACE_FILE: &str = "trace.txt";

/// Renders rows in the column order `Method | Mean error | Error std. | Max error`.
pub fn metrics_table(rows: &[(String, AlignmentReport)]) -> String {
    let header = ["Method", "Mean error", "Error std.", "Max error"];
    let body: Vec<[String; 4]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                format!("{:.4}", r.mean_error),
                format!("{:.4}", r.error_std),
                format!("{:.4}", r.max_error),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..4)
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: [&str; 4]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out += &format!("|-{}-|\n", rule.join("-|-"));
    for r in &body {
        out += &line([&r[0], &r[1], &r[2], &r[3]]);
    }
    out
}

/// Key/value form of an alignment report plus its per-image table.
pub fn report_doc(rows: &[(String, AlignmentReport)]) -> TextDoc {
    let mut doc = TextDoc::default();
    let mut summary = Table::new("metrics", &["method", "mean_error", "error_std", "max_error"]);
    for (name, r) in rows {
        summary.push(vec![
            name.clone(),
            r.mean_error.to_string(),
            r.error_std.to_string(),
            r.max_error.to_string(),
        ]);
    }
    doc.tables.push(summary);
    for (name, r) in rows {
        let mut t = Table::new(&format!("per_image_{name}"), &["image", "mean_error"]);
        for (i, e) in r.per_image.iter().enumerate() {
            t.push(vec![i.to_string(), e.to_string()]);
        }
        doc.tables.push(t);
    }
    doc
}

pub fn unix_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Everything needed to rerun a command.
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub started: f64,
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<PathBuf>,
    pub settings: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            seed,
            started: unix_seconds(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            settings: Vec::new(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) {
        self.inputs.push((key.to_string(), value.to_string()));
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.to_string(), value.to_string()));
    }

    pub fn solver(&mut self, run: &RunSettings) {
        let c: &SolverConfig = &run.solver;
        self.setting("method", c.method);
        self.setting("transform", run.group);
        self.setting("lambda", c.lambda.map_or("auto".into(), |v| v.to_string()));
        self.setting("mu0", c.mu0.map_or("auto".into(), |v| v.to_string()));
        self.setting("mu_schedule", c.mu_schedule);
        self.setting("mu_decay", c.mu_decay);
        self.setting("mu_growth", c.mu_growth);
        self.setting("inner_tol", c.inner_tol);
        self.setting("max_inner", c.inner_max_iters);
        self.setting("tol", c.outer_tol);
        self.setting("max_outer", c.outer_max_iters);
        self.setting("k", c.manifold.k);
        self.setting("alpha", c.manifold.alpha);
        self.setting("epsilon_prime", c.manifold.epsilon_prime);
        self.setting("projection_source", c.projection_source);
        self.setting("freeze_manifold", c.freeze_manifold);
        self.setting("free_gauge", !c.fix_gauge);
        self.setting("interpolation", c.interpolation);
        self.setting("sequential", !c.execution.is_parallel());
        if let Some((h, w)) = run.resize {
            self.setting("resize", format!("{h}x{w}"));
        }
        if let Some(p) = &run.config_file {
            self.input("config_file", p.display());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut doc = TextDoc::default();
        doc.set("tool", concat!("lrd ", env!("CARGO_PKG_VERSION")));
        doc.set("command", &self.command);
        doc.set("seed", self.seed);
        doc.set("started_unix", format!("{:.3}", self.started));
        doc.set("finished_unix", format!("{:.3}", unix_seconds()));
        for (k, v) in &self.inputs {
            doc.set(k, v);
        }
        let mut s = Table::new("settings", &["key", "value"]);
        for (k, v) in &self.settings {
            s.push(vec![k.clone(), v.clone()]);
        }
        doc.tables.push(s);
        let mut o = Table::new("outputs", &["path"]);
        for p in &self.outputs {
            o.push(vec![p.display().to_string()]);
        }
        doc.tables.push(o);
        doc.write(dir.join(MANIFEST_DOC))?;
        Ok(())
    }
}

/// Writes every record to a trace file and mirrors it to the log.
pub struct TraceLog {
    out: BufWriter<File>,
    label: String,
    failed: Option<std::io::Error>,
}

impl TraceLog {
    pub fn create(path: &Path, label: &str) -> Result<Self, CliError> {
        let f = File::create(path)
            .map_err(|e| CliError::Run(format!("data: cannot create {}: {e}", path.display())))?;
        Ok(TraceLog {
            out: BufWriter::new(f),
            label: label.to_string(),
            failed: None,
        })
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        if let Some(e) = self.failed.take() {
            return Err(CliError::Run(format!("data: trace write failed: {e}")));
        }
        self.out
            .flush()
            .map_err(|e| CliError::Run(format!("data: trace write failed: {e}")))
    }
}

impl TraceSink for TraceLog {
    fn record(&mut self, record: &TraceRecord) {
        if self.failed.is_none() {
            if let Err(e) = writeln!(self.out, "{record}") {
                self.failed = Some(e);
            }
        }
        match record {
            TraceRecord::Iteration { inner: 0, outer, .. } => {
                log::info!("{}: outer iteration {outer}", self.label)
            }
            TraceRecord::Manifold { .. } => log::info!("{}: {record}", self.label),
            _ => {}
        }
        log::debug!("{}: {record}", self.label);
    }
}
