//! Plain CSV trace export, one row per recorded step, SI units and radians.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::TraceWriteError;
use crate::simulator::Trace;

pub fn trace_header(dof: usize, muscles: usize) -> String {
    let mut cols = vec!["t".to_string()];
    for (prefix, count) in [("q", dof), ("qdes", dof), ("qe", dof), ("qd", dof)] {
        cols.extend((1..=count).map(|i| format!("{prefix}{i}")));
    }
    for prefix in ["S", "L", "F", "u"] {
        cols.extend((1..=muscles).map(|i| format!("{prefix}{i}")));
    }
    cols.extend((1..=dof).map(|i| format!("tau{i}")));
    cols.push("V".into());
    cols.push("Vdot".into());
    cols.join(",")
}

/// Shortest text that parses back to exactly `x`.
pub fn format_value(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn write_trace_to<W: Write>(trace: &Trace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", trace_header(trace.dof, trace.muscles))?;
    let mut line = String::new();
    for r in &trace.records {
        line.clear();
        line.push_str(&format_value(r.t));
        let vectors = [
            &r.q, &r.q_des, &r.q_err, &r.qdot, &r.s, &r.lengths, &r.forces, &r.u, &r.tau,
        ];
        for x in vectors
            .into_iter()
            .flat_map(|v| v.iter())
            .chain([&r.v, &r.v_dot])
        {
            line.push(',');
            line.push_str(&format_value(*x));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceWriteError> {
    let path = path.as_ref();
    let wrap = |source| TraceWriteError {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(wrap)?;
    write_trace_to(trace, BufWriter::new(file)).map_err(wrap)
}
