//! Report documents and flat sweep tables.
//!
//! A report is a JSON object carrying a `format_version`, the tool version,
//! the run seed, an echo of the configuration and the records themselves.
//! Wall-clock timing lives in a separate top-level `timing` field so that
//! [`Report::canonical_json`] can drop it: two runs with the same
//! configuration and seed produce byte-identical canonical documents.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::SweepRow;
use crate::model::SparsityBudget;

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "sfsparse";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub format_version: u32,
    pub tool: String,
    pub tool_version: String,
    /// `solve`, `sweep`, `oracle` or `gen`.
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub records: T,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<Timing>,
}

fn json_err(e: serde_json::Error) -> Error {
    Error::InvalidArgument(format!("report serialization: {e}"))
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, records: T) -> Result<Self> {
        Ok(Self {
            format_version: FORMAT_VERSION,
            tool: TOOL_NAME.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config).map_err(json_err)?,
            records,
            timing: None,
        })
    }

    pub fn with_timing(mut self, wall_seconds: f64) -> Self {
        self.timing = Some(Timing { wall_seconds });
        self
    }

    /// Pretty-printed document including timing, newline-terminated.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self).map_err(json_err)?;
        text.push('\n');
        Ok(text)
    }

    /// The document with timing removed, as compared for reproducibility.
    pub fn canonical_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self).map_err(json_err)?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("timing");
        }
        let mut text = serde_json::to_string_pretty(&value).map_err(json_err)?;
        text.push('\n');
        Ok(text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Column names of [`write_sweep_csv`].
pub const SWEEP_COLUMNS: [&str; 23] = [
    "index",
    "family",
    "budget_kind",
    "budget_value",
    "rank_approx",
    "rank_used",
    "bidual",
    "dual",
    "opt",
    "opt_card",
    "lower",
    "upper",
    "gap",
    "rho",
    "zeta",
    "zeta_r",
    "dispersion",
    "opt_std",
    "trials",
    "p_x",
    "slack_used",
    "converged",
    "chain_ok",
];

fn opt_field<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per grid point; empty cells mark quantities a sweep kind does not
/// produce. Floats use shortest round-trip formatting.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::InvalidArgument(format!("sweep table: {e}"));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<&str> = SWEEP_COLUMNS.to_vec();
    header.push("violations");
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let c = &row.certificate;
        let (kind, value) = match row.budget {
            SparsityBudget::Constrained(k) => ("k", k.to_string()),
            SparsityBudget::Penalized(l) => ("lambda", l.to_string()),
        };
        let violations: Vec<String> = c
            .violations()
            .map(|v| format!("{} (residual {})", v.name, v.residual))
            .collect();
        let record = [
            row.index.to_string(),
            c.family.as_str().to_string(),
            kind.to_string(),
            value,
            opt_field(row.rank_approx),
            c.rank_used.to_string(),
            c.bidual_value.to_string(),
            c.dual_value.to_string(),
            c.opt_value.to_string(),
            c.opt_card.to_string(),
            c.lower_bound.to_string(),
            c.upper_bound.to_string(),
            c.gap().to_string(),
            c.rho.to_string(),
            c.zeta.to_string(),
            c.zeta_r.to_string(),
            c.dispersion.to_string(),
            c.opt_std.to_string(),
            c.trials.to_string(),
            opt_field(row.p_x),
            c.slack_used.to_string(),
            c.converged.to_string(),
            c.chain_ok().to_string(),
            violations.join("; "),
        ];
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidArgument(format!("sweep table: {e}")))
}

pub fn write_sweep_csv_file(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_sweep_csv(std::io::BufWriter::new(file), rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::CertifyOptions;
    use crate::experiment::{generate, run_sweep, GenSpec, SweepGrid, SweepOptions};
    use crate::model::{Loss, ProblemInstance, RidgeForm};

    fn rows(seed: u64) -> Vec<SweepRow> {
        let spec = GenSpec {
            n: 30,
            m: 8,
            rank: 2,
            sparsity: 3,
            ..GenSpec::experiment1(Loss::Quadratic, seed)
        };
        let d = generate(&spec).unwrap();
        let inst = ProblemInstance::new(
            d.x,
            d.y,
            Loss::Quadratic,
            RidgeForm::penalty(0.1),
            SparsityBudget::Penalized(0.01),
        )
        .unwrap();
        let grid = SweepGrid::Lambda {
            values: vec![1e-3, 1e-2],
        };
        let opts = SweepOptions {
            certify: CertifyOptions {
                trials: 3,
                ..CertifyOptions::default()
            },
            ..SweepOptions::default()
        };
        run_sweep(&inst, &grid, seed, &opts).unwrap()
    }

    #[test]
    fn canonical_form_drops_timing_only() {
        let a = Report::new("sweep", 3, &"cfg", rows(3)).unwrap();
        let b = a.clone().with_timing(1.25);
        assert_eq!(a.canonical_json().unwrap(), b.canonical_json().unwrap());
        assert!(b.to_json().unwrap().contains("wall_seconds"));
        assert!(!b.canonical_json().unwrap().contains("wall_seconds"));
        let c = Report::new("sweep", 3, &"cfg", rows(3))
            .unwrap()
            .with_timing(9.0);
        assert_eq!(b.canonical_json().unwrap(), c.canonical_json().unwrap());
    }

    #[test]
    fn report_round_trips_and_is_versioned() {
        let r = Report::new("sweep", 3, &"cfg", rows(4)).unwrap();
        let text = r.to_json().unwrap();
        let back: Report<Vec<SweepRow>> = serde_json::from_str(&text).unwrap();
        assert_eq!(back.format_version, FORMAT_VERSION);
        assert_eq!(back.records, r.records);
    }

    #[test]
    fn sweep_table_layout() {
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows(5)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("index,family,budget_kind,budget_value"));
        assert!(lines[0].contains("dispersion"));
        assert!(lines[1].starts_with("0,penalized-penalty,lambda,0.001"));
        assert!(!text.contains('\r'));
        let width = SWEEP_COLUMNS.len() + 1;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        for rec in reader.records() {
            assert_eq!(rec.unwrap().len(), width);
        }
    }
}
