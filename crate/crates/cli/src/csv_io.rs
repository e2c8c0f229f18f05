//! Trajectory CSV emission and parsing.
//!
//! Columns, in order: `t`, occupancies `x_1..x_n`, metered commands
//! `u_<cell>` (one per metered cell), priority weights `d_2..d_n`,
//! off-ramp flows `qout_1..qout_n`, link flows `qlink_1..qlink_{n-1}`,
//! estimated exit probabilities `Phat_1..Phat_{n-1}`, estimated demand
//! slopes `rhat_1..rhat_n`, estimated uncontrolled inflows `vhat_<cell>`,
//! the overshoot `Xi`, and the recovery flag `inA` (1/0). Cell labels are
//! 1-based. The file has one row per step plus a final row carrying only
//! the terminal occupancies. Floats are written with 17 significant
//! digits, so re-parsing reproduces every value bit-exactly.

use anyhow::{bail, Context, Result};
use freeway_control::closed_loop::Trajectory;
use std::io::{BufRead, Write};

/// Formats a float with enough digits to round-trip exactly.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a trajectory; `controlled` and `uncontrolled` are the 0-based
/// metered/unmetered cell indices.
pub fn write_trajectory(
    out: &mut impl Write,
    traj: &Trajectory,
    controlled: &[usize],
    uncontrolled: &[usize],
) -> std::io::Result<()> {
    let n = traj.final_state.len();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend(controlled.iter().map(|c| format!("u_{}", c + 1)));
    header.extend((2..=n).map(|i| format!("d_{i}")));
    header.extend((1..=n).map(|i| format!("qout_{i}")));
    header.extend((1..n).map(|i| format!("qlink_{i}")));
    header.extend((1..n).map(|i| format!("Phat_{i}")));
    header.extend((1..=n).map(|i| format!("rhat_{i}")));
    header.extend(uncontrolled.iter().map(|c| format!("vhat_{}", c + 1)));
    header.push("Xi".into());
    header.push("inA".into());
    writeln!(out, "{}", header.join(","))?;

    let empty_tail = header.len() - 1 - n;
    for (t, rec) in traj.records.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(rec.x.iter().copied().map(fmt));
        row.extend(rec.u.iter().copied().map(fmt));
        row.extend(rec.d.iter().copied().map(fmt));
        row.extend(rec.y.q_out.iter().copied().map(fmt));
        row.extend(rec.y.q_link.iter().copied().map(fmt));
        row.extend(rec.theta_hat.p_exit.iter().copied().map(fmt));
        row.extend(rec.theta_hat.r.iter().copied().map(fmt));
        row.extend(rec.theta_hat.v_uncontrolled.iter().copied().map(fmt));
        row.push(fmt(rec.overshoot));
        row.push(if rec.in_a { "1" } else { "0" }.into());
        writeln!(out, "{}", row.join(","))?;
    }
    let mut last = vec![traj.records.len().to_string()];
    last.extend(traj.final_state.iter().copied().map(fmt));
    last.extend(std::iter::repeat(String::new()).take(empty_tail));
    writeln!(out, "{}", last.join(","))
}

/// One fully-populated trajectory row.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub q_out: Vec<f64>,
    pub q_link: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub r_hat: Vec<f64>,
    pub v_hat_uncontrolled: Vec<f64>,
    pub xi: f64,
    pub in_a: bool,
}

/// A parsed trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    /// Number of cells.
    pub n: usize,
    /// Metered cells, 0-based, recovered from the header.
    pub controlled: Vec<usize>,
    /// Unmetered cells, 0-based, recovered from the header.
    pub uncontrolled: Vec<usize>,
    pub rows: Vec<TableRow>,
    /// Terminal occupancies from the final row.
    pub final_x: Vec<f64>,
}

fn parse_f64(field: &str, label: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .with_context(|| format!("line {line}: bad {label} value {field:?}"))
}

/// Parses a trajectory written by [`write_trajectory`].
pub fn parse_trajectory(input: impl BufRead) -> Result<TrajectoryTable> {
    let mut lines = input.lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => bail!("empty trajectory file"),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("x_")).count();
    if n == 0 || cols.first() != Some(&"t") || cols.last() != Some(&"inA") {
        bail!("unrecognized trajectory header");
    }
    let cell_list = |prefix: &str| -> Result<Vec<usize>> {
        cols.iter()
            .filter_map(|c| c.strip_prefix(prefix))
            .map(|s| {
                let cell: usize = s.parse().with_context(|| format!("bad column {prefix}{s}"))?;
                Ok(cell - 1)
            })
            .collect()
    };
    let controlled = cell_list("u_")?;
    let uncontrolled = cell_list("vhat_")?;
    if controlled.len() + uncontrolled.len() != n {
        bail!(
            "header lists {} metered + {} unmetered cells for n = {n}",
            controlled.len(),
            uncontrolled.len()
        );
    }
    let expected_cols = 3 + 6 * n - 3 + controlled.len() + uncontrolled.len();
    if cols.len() != expected_cols {
        bail!("expected {expected_cols} columns, found {}", cols.len());
    }

    let mut rows = Vec::new();
    let mut final_x: Option<Vec<f64>> = None;
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        if final_x.is_some() {
            bail!("line {lineno}: rows after the terminal row");
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != expected_cols {
            bail!(
                "line {lineno}: expected {expected_cols} fields, found {}",
                fields.len()
            );
        }
        let t: usize = fields[0]
            .parse()
            .with_context(|| format!("line {lineno}: bad step index {:?}", fields[0]))?;
        let mut pos = 1;
        let take = |pos: &mut usize, count: usize, label: &str| -> Result<Vec<f64>> {
            let slice = &fields[*pos..*pos + count];
            *pos += count;
            slice
                .iter()
                .map(|f| parse_f64(f, label, lineno))
                .collect()
        };
        let x = take(&mut pos, n, "occupancy")?;
        if fields[pos].is_empty() {
            // Terminal row: everything after the occupancies is blank.
            if fields[pos..].iter().any(|f| !f.is_empty()) {
                bail!("line {lineno}: terminal row has non-empty step fields");
            }
            final_x = Some(x);
            continue;
        }
        let u = take(&mut pos, controlled.len(), "command")?;
        let d = take(&mut pos, n - 1, "priority weight")?;
        let q_out = take(&mut pos, n, "off-ramp flow")?;
        let q_link = take(&mut pos, n - 1, "link flow")?;
        let p_hat = take(&mut pos, n - 1, "exit estimate")?;
        let r_hat = take(&mut pos, n, "slope estimate")?;
        let v_hat_uncontrolled = take(&mut pos, uncontrolled.len(), "inflow estimate")?;
        let xi = parse_f64(fields[pos], "overshoot", lineno)?;
        let in_a = match fields[pos + 1] {
            "1" => true,
            "0" => false,
            other => bail!("line {lineno}: bad recovery flag {other:?}"),
        };
        rows.push(TableRow {
            t,
            x,
            u,
            d,
            q_out,
            q_link,
            p_hat,
            r_hat,
            v_hat_uncontrolled,
            xi,
            in_a,
        });
    }
    let final_x = final_x.ok_or_else(|| anyhow::anyhow!("missing terminal row"))?;
    Ok(TrajectoryTable {
        n,
        controlled,
        uncontrolled,
        rows,
        final_x,
    })
}
