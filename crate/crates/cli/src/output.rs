//! Rendering of result files. Everything here is a pure function of its
//! inputs so identical runs produce identical bytes.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// One file to be written into the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

pub fn json<T: Serialize>(name: &str, value: &T) -> Artifact {
    let mut bytes = serde_json::to_vec_pretty(value).expect("result types serialize");
    bytes.push(b'\n');
    Artifact { name: name.to_string(), bytes }
}

pub fn csv_rows<T: Serialize>(name: &str, rows: &[T]) -> Artifact {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("result rows serialize");
    }
    Artifact { name: name.to_string(), bytes: w.into_inner().expect("in-memory writer") }
}

/// CSV with a header built at run time (for per-state columns).
pub fn csv_table(name: &str, header: &[String], rows: &[Vec<String>]) -> Artifact {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory writer");
    for r in rows {
        w.write_record(r).expect("in-memory writer");
    }
    Artifact { name: name.to_string(), bytes: w.into_inner().expect("in-memory writer") }
}

pub fn num(x: f64) -> String {
    if x.is_infinite() && x > 0.0 {
        "inf".into()
    } else {
        format!("{x}")
    }
}

/// gnuplot script drawing MAoII against the sweep axis, one curve per family.
pub fn plot_script(csv_name: &str, axis: &str, families: &[&str]) -> Artifact {
    let list = families.join(" ");
    let text = format!(
        "# gnuplot script for {csv_name}\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel '{axis}'\n\
         set ylabel 'MAoII'\n\
         set grid\n\
         families = \"{list}\"\n\
         plot for [f in families] '{csv_name}' using 1:(strcol(2) eq f ? $4 : NaN) \\\n\
         \x20   with linespoints title f\n\
         pause -1\n"
    );
    Artifact { name: csv_name.trim_end_matches(".csv").to_string() + ".gp", bytes: text.into_bytes() }
}

pub fn write_all(dir: &Path, artifacts: &[Artifact]) -> Result<Vec<PathBuf>, CliError> {
    let err = |path: &Path, source| CliError::Output { path: path.display().to_string(), source };
    std::fs::create_dir_all(dir).map_err(|e| err(dir, e))?;
    let mut written = Vec::new();
    for a in artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.bytes).map_err(|e| err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
