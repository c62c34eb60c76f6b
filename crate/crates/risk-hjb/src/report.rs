//! Artifact writers: CSV for fields and tables, JSON for scalars and
//! diagnostics. UTF-8, LF line endings, '.' decimal separator, fixed column
//! orders. Floats print in shortest round-trip form, so identical runs
//! produce byte-identical files; volatile data (timings, timestamps) belongs
//! in the `run_meta.json` sidecar, never in payload files.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::ergodic::{ErgodicSolution, QBUDiagnostic};
use crate::hjb::{GridField, StrategyField, ValueField};
use crate::sim::{ComparisonTable, PathBundle};

fn write_atomic(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| {
        crate::error::Error::Config(format!("json serialization failure: {e}"))
    })?;
    text.push('\n');
    write_atomic(path, &text)
}

fn coord_header(n: usize) -> String {
    (1..=n).map(|d| format!("x{d}")).collect::<Vec<_>>().join(",")
}

/// Value-field CSV: `t,x1[,x2],u`, one row per (time, node) pair.
pub fn write_value_field_csv(path: &Path, field: &ValueField) -> Result<()> {
    let grid = field.u.grid();
    let n = grid.dim();
    let mut out = String::new();
    writeln!(out, "t,{},u", coord_header(n)).unwrap();
    for (k, &t) in field.u.times().iter().enumerate() {
        for i in 0..grid.node_count() {
            let x = grid.node(i);
            write!(out, "{t}").unwrap();
            for d in 0..n {
                write!(out, ",{}", x[d]).unwrap();
            }
            writeln!(out, ",{}", field.u.value(k, i)).unwrap();
        }
    }
    write_atomic(path, &out)
}

/// Strategy-field CSV: `t,x1[,x2],h1[,h2,...]`.
pub fn write_strategy_field_csv(path: &Path, field: &StrategyField) -> Result<()> {
    let grid = field.grid();
    let n = grid.dim();
    let m = field.assets();
    let mut out = String::new();
    let h_header = (1..=m).map(|l| format!("h{l}")).collect::<Vec<_>>().join(",");
    writeln!(out, "t,{},{h_header}", coord_header(n)).unwrap();
    for (k, &t) in field.times().iter().enumerate() {
        for i in 0..grid.node_count() {
            let x = grid.node(i);
            write!(out, "{t}").unwrap();
            for d in 0..n {
                write!(out, ",{}", x[d]).unwrap();
            }
            for &hv in field.fractions(k, i) {
                write!(out, ",{hv}").unwrap();
            }
            out.push('\n');
        }
    }
    write_atomic(path, &out)
}

/// Bias-function CSV: `x1[,x2],u_hat`.
pub fn write_bias_csv(path: &Path, u_hat: &GridField) -> Result<()> {
    let grid = u_hat.grid();
    let n = grid.dim();
    let mut out = String::new();
    writeln!(out, "{},u_hat", coord_header(n)).unwrap();
    for i in 0..grid.node_count() {
        let x = grid.node(i);
        for d in 0..n {
            if d > 0 {
                out.push(',');
            }
            write!(out, "{}", x[d]).unwrap();
        }
        writeln!(out, ",{}", u_hat.value(0, i)).unwrap();
    }
    write_atomic(path, &out)
}

/// Gradient-bound diagnostic CSV: `x1[,x2],q_11..,b_1..,u`.
pub fn write_qbu_csv(path: &Path, sol: &ErgodicSolution, qbu: &QBUDiagnostic) -> Result<()> {
    let grid = sol.u_hat.grid();
    let n = grid.dim();
    let mut out = String::new();
    let mut header = coord_header(n);
    for a in 1..=n {
        for b in 1..=n {
            header.push_str(&format!(",q_{a}{b}"));
        }
    }
    for a in 1..=n {
        header.push_str(&format!(",b_{a}"));
    }
    header.push_str(",u");
    writeln!(out, "{header}").unwrap();
    for i in 0..grid.node_count() {
        let x = grid.node(i);
        for d in 0..n {
            if d > 0 {
                out.push(',');
            }
            write!(out, "{}", x[d]).unwrap();
        }
        for a in 0..n {
            for b in 0..n {
                write!(out, ",{}", qbu.q_field[i * n * n + a * n + b]).unwrap();
            }
        }
        for a in 0..n {
            write!(out, ",{}", qbu.b_field[i * n + a]).unwrap();
        }
        writeln!(out, ",{}", qbu.u_field[i]).unwrap();
    }
    write_atomic(path, &out)
}

/// Ranked comparison CSV with fixed columns.
pub fn write_comparison_csv(path: &Path, table: &ComparisonTable) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "name,value,std_error,ess,gap_to_reference,joint_std_error,beats_reference"
    )
    .unwrap();
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.name,
            row.value,
            row.std_error,
            row.ess,
            row.gap_to_reference,
            row.joint_std_error,
            row.beats_reference
        )
        .unwrap();
    }
    write_atomic(path, &out)
}

/// Full path dump (flag-gated; large): `path,t,x1[,x2],log_v`.
pub fn write_paths_csv(path: &Path, bundle: &PathBundle) -> Result<()> {
    let mut out = String::new();
    let with_wealth = !bundle.log_v.is_empty();
    let mut header = format!("path,t,{}", coord_header(bundle.n));
    if with_wealth {
        header.push_str(",log_v");
    }
    writeln!(out, "{header}").unwrap();
    for p in 0..bundle.n_paths {
        for (k, &t) in bundle.times.iter().enumerate() {
            write!(out, "{p},{t}").unwrap();
            for &xv in bundle.x_at(p, k) {
                write!(out, ",{xv}").unwrap();
            }
            if with_wealth {
                write!(out, ",{}", bundle.log_v_at(p, k)).unwrap();
            }
            out.push('\n');
        }
    }
    write_atomic(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Grid;

    #[test]
    fn bias_csv_layout() {
        let grid = Grid::line(0.0, 1.0, 3).unwrap();
        let f = GridField::new(grid, vec![0.0], vec![0.5, 1.0, 1.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bias.csv");
        write_bias_csv(&path, &f).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "x1,u_hat\n0,0.5\n0.5,1\n1,1.5\n");
    }

    #[test]
    fn value_field_csv_layout() {
        let grid = Grid::line(0.0, 1.0, 3).unwrap();
        let u = GridField::new(grid, vec![0.0, 1.0], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let field = ValueField {
            u,
            residual_interior_max: 0.0,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.csv");
        write_value_field_csv(&path, &field).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,u");
        assert_eq!(lines[1], "0,0,1");
        assert_eq!(lines.len(), 7);
        assert!(text.ends_with('\n'));
        assert!(!text.contains('\r'));
    }
}
