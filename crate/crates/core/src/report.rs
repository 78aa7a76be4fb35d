//! Deterministic result files.
//!
//! Every table is UTF-8, comma-delimited, and opens with comment lines: a
//! schema line naming the columns, the hash of the config that produced it,
//! the hash of the data block below the header, and the config itself on one
//! line. JSON reports carry the same identifiers as fields. Nothing here
//! depends on the clock, so identical runs write identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::field::{SpaceTimeField, SpatialField};
use crate::forward::ObservationData;
use crate::grid::Grid;
use crate::scalar::{to_f64, Scalar};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Compact single-line JSON echo of a config, the canonical form that the
/// file headers quote and hash.
pub fn canonical_json<C: Serialize>(cfg: &C) -> Result<String> {
    serde_json::to_string(cfg)
        .map_err(|e| CoreError::Io(std::io::Error::other(format!("config echo: {e}"))))
}

fn header(schema: &str, columns: &[&str], config_json: &str, body: &str) -> String {
    let mut h = String::new();
    writeln!(h, "# schema: {schema}({})", columns.join(", ")).unwrap();
    writeln!(h, "# config_sha256: {}", sha256_hex(config_json.as_bytes())).unwrap();
    writeln!(h, "# content_sha256: {}", sha256_hex(body.as_bytes())).unwrap();
    writeln!(h, "# config: {config_json}").unwrap();
    h
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)
        .map_err(|e| CoreError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn push_row(body: &mut String, cells: &[f64]) {
    for (k, c) in cells.iter().enumerate() {
        if k > 0 {
            body.push(',');
        }
        write!(body, "{c}").unwrap();
    }
    body.push('\n');
}

/// Numeric table with a header row; `rows` are emitted in order.
pub fn write_table(
    path: &Path,
    schema: &str,
    columns: &[&str],
    rows: &[Vec<f64>],
    config_json: &str,
) -> Result<()> {
    let mut body = String::new();
    body.push_str(&columns.join(","));
    body.push('\n');
    for row in rows {
        if row.len() != columns.len() {
            return Err(CoreError::InvalidParameter(format!(
                "table {schema}: row with {} cells against {} columns",
                row.len(),
                columns.len()
            )));
        }
        push_row(&mut body, row);
    }
    let head = header(schema, columns, config_json, &body);
    write_file(path, &(head + &body))
}

fn coord_columns(dim: usize) -> Vec<String> {
    (0..dim).map(|a| format!("x{}", a + 1)).collect()
}

/// One row per node: coordinate columns, then one value column per named
/// field. All fields must share the grid.
pub fn write_fields_csv<T: Scalar>(
    path: &Path,
    schema: &str,
    fields: &[(&str, &SpatialField<T>)],
    config_json: &str,
) -> Result<()> {
    let Some((_, first)) = fields.first() else {
        return Err(CoreError::InvalidParameter(
            "field table needs at least one column".into(),
        ));
    };
    let grid = *first.grid();
    for (_, f) in fields {
        grid.same_as(f.grid())?;
    }
    let mut columns: Vec<String> = coord_columns(grid.dim());
    columns.extend(fields.iter().map(|(n, _)| n.to_string()));
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();

    let mut body = String::new();
    body.push_str(&column_refs.join(","));
    body.push('\n');
    let mut cells = vec![0.0; columns.len()];
    for node in 0..grid.total_nodes() {
        let xs = grid.node_coords(node);
        for (a, &x) in xs.iter().enumerate() {
            cells[a] = to_f64(x);
        }
        for (k, (_, f)) in fields.iter().enumerate() {
            cells[grid.dim() + k] = to_f64(f.data()[node]);
        }
        push_row(&mut body, &cells);
    }
    let head = header(schema, &column_refs, config_json, &body);
    write_file(path, &(head + &body))
}

/// One row per (frame, node): time, coordinates, value.
pub fn write_spacetime_csv<T: Scalar>(
    path: &Path,
    schema: &str,
    u: &SpaceTimeField<T>,
    config_json: &str,
) -> Result<()> {
    let grid = *u.grid();
    let mut columns = vec!["t".to_string()];
    columns.extend(coord_columns(grid.dim()));
    columns.push("value".to_string());
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();

    let mut body = String::new();
    body.push_str(&column_refs.join(","));
    body.push('\n');
    let mut cells = vec![0.0; columns.len()];
    for i in 0..u.frames().len() {
        cells[0] = to_f64(u.time(i));
        let frame = u.frame(i);
        for node in 0..grid.total_nodes() {
            let xs = grid.node_coords(node);
            for (a, &x) in xs.iter().enumerate() {
                cells[1 + a] = to_f64(x);
            }
            cells[1 + grid.dim()] = to_f64(frame.data()[node]);
            push_row(&mut body, &cells);
        }
    }
    let head = header(schema, &column_refs, config_json, &body);
    write_file(path, &(head + &body))
}

/// Boundary time series: one row per (face, frame, face node), with the
/// tangential coordinate `s` (zero in one dimension) and both observed
/// channels.
pub fn write_traces_csv<T: Scalar>(
    path: &Path,
    grid: &Grid<T>,
    data: &ObservationData<T>,
    config_json: &str,
) -> Result<()> {
    let columns = ["face", "t", "s", "z", "dz"];
    let mut body = String::new();
    body.push_str(&columns.join(","));
    body.push('\n');
    for (k, face) in data.faces.iter().enumerate() {
        let tangent = 1 - face.axis.min(1);
        for (i, &t) in data.times.iter().enumerate() {
            let z = &data.z_trace[k][i];
            let dz = &data.dz_trace[k][i];
            for j in 0..z.values.len() {
                let s = if grid.dim() == 1 {
                    0.0
                } else {
                    to_f64(grid.coord(tangent, j))
                };
                writeln!(
                    body,
                    "{},{},{s},{},{}",
                    face.name(),
                    to_f64(t),
                    to_f64(z.values[j]),
                    to_f64(dz.values[j])
                )
                .unwrap();
            }
        }
    }
    let head = header("traces", &columns, config_json, &body);
    write_file(path, &(head + &body))
}

#[derive(Serialize)]
struct JsonEnvelope<'a, P: Serialize> {
    schema: &'a str,
    config_sha256: String,
    config: serde_json::Value,
    payload: &'a P,
}

/// JSON report wrapping `payload` with the schema name and the config echo.
pub fn write_json_report<P: Serialize>(
    path: &Path,
    schema: &str,
    config_json: &str,
    payload: &P,
) -> Result<()> {
    let config: serde_json::Value = serde_json::from_str(config_json)
        .map_err(|e| CoreError::InvalidParameter(format!("config echo is not valid JSON: {e}")))?;
    let envelope = JsonEnvelope {
        schema,
        config_sha256: sha256_hex(config_json.as_bytes()),
        config,
        payload,
    };
    let text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| CoreError::Io(std::io::Error::other(format!("{schema} report: {e}"))))?;
    write_file(path, &(text + "\n"))
}
