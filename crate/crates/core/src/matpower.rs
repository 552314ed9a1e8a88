//! Matpower `.m` case-file subset: the `baseMVA`, `bus`, `gen` and `branch`
//! matrices. Anything else in the file (function wrapper, version string,
//! `gencost`, ...) is skipped.
//!
//! Supported syntax: `%` comments, numeric matrices delimited by `[`..`]`
//! with whitespace-separated fields and rows terminated by `;`. Trailing
//! columns beyond the documented set are ignored, matching how Matpower
//! versions append columns.

use crate::grid::{Branch, Bus, BusKind, Gen, Grid, GridError};
use crate::util::fmt_sig9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatpowerError {
    #[error("missing required section `{0}`")]
    MissingSection(&'static str),
    #[error("line {line}: malformed row in `{section}`: {reason}")]
    MalformedRow {
        section: &'static str,
        line: usize,
        reason: String,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

struct RawRow {
    line: usize,
    values: Vec<f64>,
}

/// Parse a Matpower case file into a validated [`Grid`].
pub fn parse_case(text: &str) -> Result<Grid, MatpowerError> {
    let mut base_mva: Option<f64> = None;
    let mut sections: [Option<Vec<RawRow>>; 3] = [None, None, None];
    let section_names = ["bus", "gen", "branch"];

    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let line = strip_comment(raw);
        let Some((lhs, rhs)) = line.split_once('=') else {
            continue;
        };
        let Some(name) = assignment_name(lhs) else {
            continue;
        };
        let rhs = rhs.trim_start();
        if name == "baseMVA" {
            let value = rhs.trim_end().trim_end_matches(';').trim();
            base_mva = Some(value.parse().map_err(|_| MatpowerError::MalformedRow {
                section: "baseMVA",
                line: idx + 1,
                reason: format!("expected a number, got `{value}`"),
            })?);
            continue;
        }
        let Some(slot) = section_names.iter().position(|&s| s == name) else {
            // Unknown assignment: if it opens a matrix, skip to its closing bracket.
            if rhs.starts_with('[') && !rhs.contains(']') {
                for (_, raw) in lines.by_ref() {
                    if strip_comment(raw).contains(']') {
                        break;
                    }
                }
            }
            continue;
        };
        if !rhs.starts_with('[') {
            continue;
        }
        let section = section_names[slot];
        let mut rows = Vec::new();
        let mut pending: Vec<f64> = Vec::new();
        let mut pending_line = idx + 1;
        let mut body = rhs[1..].to_string();
        let mut current_line = idx + 1;
        loop {
            let (content, done) = match body.find(']') {
                Some(p) => (body[..p].to_string(), true),
                None => (body.clone(), false),
            };
            for piece in content.split_inclusive(';') {
                let terminated = piece.ends_with(';');
                let piece = piece.trim_end_matches(';');
                for tok in piece.split_whitespace() {
                    if pending.is_empty() {
                        pending_line = current_line;
                    }
                    let v: f64 = tok.parse().map_err(|_| MatpowerError::MalformedRow {
                        section,
                        line: current_line,
                        reason: format!("non-numeric field `{tok}`"),
                    })?;
                    pending.push(v);
                }
                if terminated && !pending.is_empty() {
                    rows.push(RawRow {
                        line: pending_line,
                        values: std::mem::take(&mut pending),
                    });
                }
            }
            if done {
                break;
            }
            match lines.next() {
                Some((idx, raw)) => {
                    current_line = idx + 1;
                    body = strip_comment(raw).to_string();
                }
                None => {
                    return Err(MatpowerError::MalformedRow {
                        section,
                        line: current_line,
                        reason: "unterminated matrix (missing `]`)".to_string(),
                    })
                }
            }
        }
        if !pending.is_empty() {
            return Err(MatpowerError::MalformedRow {
                section,
                line: pending_line,
                reason: "row not terminated by `;`".to_string(),
            });
        }
        sections[slot] = Some(rows);
    }

    let base_mva = base_mva.ok_or(MatpowerError::MissingSection("baseMVA"))?;
    let [bus_rows, gen_rows, branch_rows] = sections;
    let bus_rows = bus_rows.ok_or(MatpowerError::MissingSection("bus"))?;
    let gen_rows = gen_rows.ok_or(MatpowerError::MissingSection("gen"))?;
    let branch_rows = branch_rows.ok_or(MatpowerError::MissingSection("branch"))?;

    let buses = bus_rows
        .iter()
        .map(|row| -> Result<Bus, MatpowerError> {
            let v = expect_cols(row, "bus", BUS_COLS)?;
            let kind = match v[1] as i64 {
                3 => BusKind::Slack,
                2 => BusKind::Pv,
                1 => BusKind::Pq,
                other => {
                    return Err(MatpowerError::MalformedRow {
                        section: "bus",
                        line: row.line,
                        reason: format!("unsupported bus type {other}"),
                    })
                }
            };
            Ok(Bus {
                id: int_field(row, "bus", v[0])?,
                kind,
                p_load: v[2],
                q_load: v[3],
                g_shunt: v[4],
                b_shunt: v[5],
                vm_init: v[7],
                va_init: v[8],
                base_kv: v[9],
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let gens = gen_rows
        .iter()
        .map(|row| -> Result<Gen, MatpowerError> {
            let v = expect_cols(row, "gen", GEN_COLS)?;
            Ok(Gen {
                bus: int_field(row, "gen", v[0])?,
                p_gen: v[1],
                q_gen: v[2],
                v_setpoint: v[5],
                status: v[7] > 0.0,
                p_max: v[8],
                p_min: v[9],
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let branches = branch_rows
        .iter()
        .map(|row| -> Result<Branch, MatpowerError> {
            let v = expect_cols(row, "branch", BRANCH_COLS)?;
            Ok(Branch {
                from_bus: int_field(row, "branch", v[0])?,
                to_bus: int_field(row, "branch", v[1])?,
                r: v[2],
                x: v[3],
                b_charging: v[4],
                // Matpower convention: ratio 0 means a nominal 1:1 tap.
                tap: if v[8] == 0.0 { 1.0 } else { v[8] },
                shift_deg: v[9],
                status: v[10] > 0.0,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let grid = Grid {
        base_mva,
        buses,
        branches,
        gens,
    };
    grid.validate()?;
    Ok(grid)
}

/// Serialize a grid back to Matpower case-file text. `parse_case` of the
/// output reproduces the grid field-for-field (floats at 9 significant
/// digits). Columns this model does not track are written as zeros.
pub fn serialize_case(grid: &Grid, name: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("function mpc = {name}\n"));
    out.push_str("mpc.version = '2';\n\n");
    out.push_str(&format!("mpc.baseMVA = {};\n\n", fmt_sig9(grid.base_mva)));

    out.push_str("%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n");
    out.push_str("mpc.bus = [\n");
    for b in &grid.buses {
        let kind = match b.kind {
            BusKind::Slack => 3,
            BusKind::Pv => 2,
            BusKind::Pq => 1,
        };
        out.push_str(&format!(
            "\t{}\t{}\t{}\t{}\t{}\t{}\t1\t{}\t{}\t{}\t1\t0\t0;\n",
            b.id,
            kind,
            fmt_sig9(b.p_load),
            fmt_sig9(b.q_load),
            fmt_sig9(b.g_shunt),
            fmt_sig9(b.b_shunt),
            fmt_sig9(b.vm_init),
            fmt_sig9(b.va_init),
            fmt_sig9(b.base_kv),
        ));
    }
    out.push_str("];\n\n");

    out.push_str("%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n");
    out.push_str("mpc.gen = [\n");
    for g in &grid.gens {
        out.push_str(&format!(
            "\t{}\t{}\t{}\t0\t0\t{}\t{}\t{}\t{}\t{};\n",
            g.bus,
            fmt_sig9(g.p_gen),
            fmt_sig9(g.q_gen),
            fmt_sig9(g.v_setpoint),
            fmt_sig9(grid.base_mva),
            i32::from(g.status),
            fmt_sig9(g.p_max),
            fmt_sig9(g.p_min),
        ));
    }
    out.push_str("];\n\n");

    out.push_str("%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\n");
    out.push_str("mpc.branch = [\n");
    for br in &grid.branches {
        out.push_str(&format!(
            "\t{}\t{}\t{}\t{}\t{}\t0\t0\t0\t{}\t{}\t{};\n",
            br.from_bus,
            br.to_bus,
            fmt_sig9(br.r),
            fmt_sig9(br.x),
            fmt_sig9(br.b_charging),
            fmt_sig9(br.tap),
            fmt_sig9(br.shift_deg),
            i32::from(br.status),
        ));
    }
    out.push_str("];\n");
    out
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(p) => &line[..p],
        None => line,
    }
}

/// `mpc.bus`, `bus`, `foo.bar.branch` -> last path component, if the side
/// looks like a plain identifier assignment.
fn assignment_name(lhs: &str) -> Option<&str> {
    let lhs = lhs.trim();
    if lhs.is_empty() || !lhs.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.') {
        return None;
    }
    lhs.rsplit('.').next()
}

fn expect_cols<'a>(row: &'a RawRow, section: &'static str, min: usize) -> Result<&'a [f64], MatpowerError> {
    if row.values.len() < min {
        return Err(MatpowerError::MalformedRow {
            section,
            line: row.line,
            reason: format!("expected at least {min} columns, got {}", row.values.len()),
        });
    }
    Ok(&row.values)
}

fn int_field(row: &RawRow, section: &'static str, v: f64) -> Result<u32, MatpowerError> {
    if v.fract() != 0.0 || v < 0.0 || v > u32::MAX as f64 {
        return Err(MatpowerError::MalformedRow {
            section,
            line: row.line,
            reason: format!("expected a bus number, got {v}"),
        });
    }
    Ok(v as u32)
}
