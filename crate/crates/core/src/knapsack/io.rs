//! Plain CSV exchange format for allocation instances:
//! a `# budget = B` line, then `revenue_0..K, cost_0..K` and an optional
//! `chosen` column.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{AllocationProblem, AllocationSolution, KnapsackError};
use crate::tensor::DenseMatrix;

pub fn write_allocation_csv<W: Write>(
    mut out: W,
    problem: &AllocationProblem,
    solution: Option<&AllocationSolution>,
) -> std::io::Result<()> {
    let levels = problem.num_options();
    writeln!(out, "# budget = {}", problem.budget())?;
    let mut header: Vec<String> = (0..levels).map(|k| format!("revenue_{k}")).collect();
    header.extend((0..levels).map(|k| format!("cost_{k}")));
    if solution.is_some() {
        header.push("chosen".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for i in 0..problem.num_users() {
        let mut fields: Vec<String> = problem.tau_revenue().row(i).iter().map(f64::to_string).collect();
        fields.extend(problem.tau_cost().row(i).iter().map(f64::to_string));
        if let Some(s) = solution {
            fields.push(s.choices[i].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// Parses the format written by [`write_allocation_csv`]. Returns the
/// problem and the `chosen` column when present.
pub fn read_allocation_csv<R: Read>(input: R) -> Result<(AllocationProblem, Option<Vec<usize>>), KnapsackError> {
    let bad = |m: String| KnapsackError::InvalidArgument(m);
    let mut lines = BufReader::new(input).lines();
    let mut next = || -> Result<Option<String>, KnapsackError> {
        lines.next().transpose().map_err(|e| bad(e.to_string()))
    };
    let first = next()?.ok_or_else(|| bad("empty allocation file".into()))?;
    let budget: f64 = first
        .strip_prefix('#')
        .and_then(|s| s.split_once('='))
        .filter(|(k, _)| k.trim() == "budget")
        .and_then(|(_, v)| v.trim().parse().ok())
        .ok_or_else(|| bad(format!("expected `# budget = B`, got `{first}`")))?;
    let header = next()?.ok_or_else(|| bad("missing header".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_choice = names.last() == Some(&"chosen");
    let width = names.len() - usize::from(has_choice);
    if width == 0 || !width.is_multiple_of(2) {
        return Err(bad(format!("header has {width} value columns")));
    }
    let levels = width / 2;
    for k in 0..levels {
        if names[k] != format!("revenue_{k}") || names[levels + k] != format!("cost_{k}") {
            return Err(bad(format!("unexpected header `{header}`")));
        }
    }
    let mut rev = Vec::new();
    let mut cost = Vec::new();
    let mut chosen = Vec::new();
    let mut row = 0usize;
    while let Some(line) = next()? {
        row += 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(bad(format!("row {row}: expected {} fields, got {}", names.len(), fields.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("row {row}: bad number `{s}`")));
        for f in &fields[..levels] {
            rev.push(parse(f)?);
        }
        for f in &fields[levels..width] {
            cost.push(parse(f)?);
        }
        if has_choice {
            let k: usize = fields[width]
                .parse()
                .map_err(|_| bad(format!("row {row}: bad choice `{}`", fields[width])))?;
            if k >= levels {
                return Err(bad(format!("row {row}: choice {k} out of range")));
            }
            chosen.push(k);
        }
    }
    let n = rev.len() / levels;
    let to_matrix = |v: Vec<f64>| DenseMatrix::from_vec(n, levels, v).map_err(|e| bad(e.to_string()));
    let problem = AllocationProblem::new(to_matrix(rev)?, to_matrix(cost)?, budget)?;
    Ok((problem, has_choice.then_some(chosen)))
}

/// File-path wrapper around [`read_allocation_csv`].
pub fn load_allocation_csv(path: &Path) -> Result<(AllocationProblem, Option<Vec<usize>>), KnapsackError> {
    let f = std::fs::File::open(path)
        .map_err(|e| KnapsackError::InvalidArgument(format!("{}: {e}", path.display())))?;
    read_allocation_csv(f)
}
