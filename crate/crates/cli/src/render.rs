use std::fmt::Write as _;

use gumbel_mmt::Tensor;

use crate::{CliError, CliResult};

fn grid_width(n: usize) -> usize {
    let side = (n as f64).sqrt().round() as usize;
    if side * side == n {
        side
    } else {
        n
    }
}

/// One grid per source token. A cell shows `1` when the region is open in
/// at least one head; relevant regions are bracketed. The footer compares
/// open rates over all head entries.
pub fn render_gates(tokens: &[String], gates: &[Tensor], relevant: &[usize]) -> CliResult<String> {
    let first = gates
        .first()
        .ok_or_else(|| CliError::Runtime("no gate matrices to render".into()))?;
    let (rows, regions) = (first.rows(), first.cols());
    if rows != tokens.len() || gates.iter().any(|g| g.shape() != first.shape()) {
        return Err(CliError::Runtime(
            "gate matrices do not match the source length".into(),
        ));
    }
    let width = grid_width(regions);
    let is_relevant = |j: usize| relevant.binary_search(&j).is_ok();

    let mut s = String::new();
    for (i, token) in tokens.iter().enumerate() {
        let open: Vec<bool> = (0..regions)
            .map(|j| gates.iter().any(|g| g.row(i)[j] == 1.0))
            .collect();
        let n_open = open.iter().filter(|&&o| o).count();
        let _ = writeln!(s, "token {i} {token}: {n_open}/{regions} regions open");
        for line in open.chunks(width).enumerate() {
            let (r, cells) = line;
            s.push(' ');
            for (c, &o) in cells.iter().enumerate() {
                let bit = if o { '1' } else { '0' };
                if is_relevant(r * width + c) {
                    let _ = write!(s, "[{bit}]");
                } else {
                    let _ = write!(s, " {bit} ");
                }
            }
            s.push('\n');
        }
    }

    let (mut rel, mut rel_n, mut other, mut other_n) = (0usize, 0usize, 0usize, 0usize);
    for g in gates {
        for (k, &v) in g.data().iter().enumerate() {
            let open = usize::from(v == 1.0);
            if is_relevant(k % regions) {
                rel += open;
                rel_n += 1;
            } else {
                other += open;
                other_n += 1;
            }
        }
    }
    let rate = |a: usize, n: usize| {
        if n == 0 {
            "NA".to_string()
        } else {
            format!("{:.4}", a as f64 / n as f64)
        }
    };
    let _ = writeln!(
        s,
        "open rate over {} heads: relevant regions {} ({rel}/{rel_n}), other regions {} ({other}/{other_n})",
        gates.len(),
        rate(rel, rel_n),
        rate(other, other_n)
    );
    Ok(s)
}
