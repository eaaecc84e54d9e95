//! Plain-text dump of a [`QpProblem`] for offline inspection.
//!
//! ```text
//! qp 1
//! dims <d> <m_eq> <m_in>
//! H            (d rows of d numbers)
//! g            (one row of d numbers)
//! A_eq         (m_eq rows)
//! b_eq         (one row)
//! A_ineq       (m_in rows)
//! b_ineq       (one row)
//! range        (one row; `inf` for one-sided rows)
//! ```
//!
//! Numbers are whitespace separated and printed in shortest round-trip form,
//! so parsing a dump reproduces the problem bit for bit. Several problems may
//! be concatenated in one file; lines starting with `#` are comments.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use super::QpProblem;

pub fn write_text(problem: &QpProblem, out: &mut String) {
    let d = problem.dim();
    let _ = writeln!(out, "qp 1");
    let _ = writeln!(out, "dims {d} {} {}", problem.n_eq(), problem.n_ineq());
    write_matrix(out, "H", &problem.h);
    write_vector(out, "g", &problem.g);
    write_matrix(out, "A_eq", &problem.a_eq);
    write_vector(out, "b_eq", &problem.b_eq);
    write_matrix(out, "A_ineq", &problem.a_ineq);
    write_vector(out, "b_ineq", &problem.b_ineq);
    write_vector(out, "range", &problem.range);
}

fn write_row<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name}");
    for r in 0..m.nrows() {
        write_row(out, m.row(r).iter());
    }
}

fn write_vector(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "{name}");
    write_row(out, v.iter());
}

/// Parse every problem in `text`.
pub fn parse_text(text: &str) -> Result<Vec<QpProblem>, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let mut problems = Vec::new();
    while lines.peek().is_some() {
        let mut next = |what: &str| lines.next().ok_or_else(|| format!("unexpected end of input, expected {what}"));
        let (n, header) = next("header")?;
        if header != "qp 1" {
            return Err(format!("line {n}: expected `qp 1`, found `{header}`"));
        }
        let (n, dims) = next("dims")?;
        let dims: Vec<usize> = dims
            .strip_prefix("dims")
            .ok_or_else(|| format!("line {n}: expected `dims`"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| format!("line {n}: {e}")))
            .collect::<Result<_, _>>()?;
        let [d, m_eq, m_in] = dims[..] else {
            return Err(format!("line {n}: `dims` needs three integers"));
        };
        let mut block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>, String> {
            let (n, tag) = next(name)?;
            if tag != name {
                return Err(format!("line {n}: expected `{name}`, found `{tag}`"));
            }
            let mut m = DMatrix::zeros(rows, cols);
            for r in 0..rows {
                let (n, line) = next(name)?;
                let vals: Vec<f64> = line
                    .split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| format!("line {n}: {e}")))
                    .collect::<Result<_, _>>()?;
                if vals.len() != cols {
                    return Err(format!("line {n}: {name} row has {} values, expected {cols}", vals.len()));
                }
                for (c, v) in vals.into_iter().enumerate() {
                    m[(r, c)] = v;
                }
            }
            Ok(m)
        };
        let row = |m: DMatrix<f64>| DVector::from_iterator(m.ncols(), m.iter().copied());
        let h = block("H", d, d)?;
        let g = row(block("g", 1, d)?);
        let a_eq = block("A_eq", m_eq, d)?;
        let b_eq = row(block("b_eq", 1, m_eq)?);
        let a_ineq = block("A_ineq", m_in, d)?;
        let b_ineq = row(block("b_ineq", 1, m_in)?);
        let range = row(block("range", 1, m_in)?);
        let p = QpProblem { h, g, a_eq, b_eq, a_ineq, b_ineq, range };
        p.validate()?;
        problems.push(p);
    }
    Ok(problems)
}
