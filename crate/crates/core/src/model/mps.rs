//! Free-MPS export of the base model (without risk cuts, which are generated
//! during the solve), for cross-checking against external solvers.

use std::fmt::Write;

use crate::solver::lp::Sense;

use super::OptimizationModel;

fn token(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

pub fn to_mps(model: &OptimizationModel) -> String {
    let mut out = String::new();
    let var_names: Vec<String> = model
        .vars
        .iter()
        .enumerate()
        .map(|(j, v)| format!("x{}_{}", j, token(&v.name)))
        .collect();
    let row_names: Vec<String> = model
        .rows
        .iter()
        .enumerate()
        .map(|(r, row)| format!("r{}_{}", r, token(&row.name)))
        .collect();

    writeln!(out, "NAME COALITION_MODEL").unwrap();
    writeln!(out, "ROWS").unwrap();
    writeln!(out, " N OBJ").unwrap();
    for (r, row) in model.rows.iter().enumerate() {
        let sense = match row.sense {
            Sense::Le => 'L',
            Sense::Ge => 'G',
            Sense::Eq => 'E',
        };
        writeln!(out, " {sense} {}", row_names[r]).unwrap();
    }

    // column-major entries
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); model.vars.len()];
    for (r, row) in model.rows.iter().enumerate() {
        for &(j, a) in &row.coeffs {
            cols[j].push((r, a));
        }
    }

    writeln!(out, "COLUMNS").unwrap();
    let mut in_integer = false;
    let mut marker = 0usize;
    for (j, var) in model.vars.iter().enumerate() {
        if var.binary != in_integer {
            let kind = if var.binary { "INTORG" } else { "INTEND" };
            writeln!(out, " MARKER{marker} 'MARKER' '{kind}'").unwrap();
            marker += 1;
            in_integer = var.binary;
        }
        if var.objective != 0.0 {
            writeln!(out, " {} OBJ {}", var_names[j], var.objective).unwrap();
        }
        for &(r, a) in &cols[j] {
            writeln!(out, " {} {} {}", var_names[j], row_names[r], a).unwrap();
        }
        if var.objective == 0.0 && cols[j].is_empty() {
            writeln!(out, " {} OBJ 0", var_names[j]).unwrap();
        }
    }
    if in_integer {
        writeln!(out, " MARKER{marker} 'MARKER' 'INTEND'").unwrap();
    }

    writeln!(out, "RHS").unwrap();
    for (r, row) in model.rows.iter().enumerate() {
        if row.rhs != 0.0 {
            writeln!(out, " RHS {} {}", row_names[r], row.rhs).unwrap();
        }
    }

    writeln!(out, "BOUNDS").unwrap();
    for (j, var) in model.vars.iter().enumerate() {
        if var.binary {
            writeln!(out, " BV BND {}", var_names[j]).unwrap();
            continue;
        }
        if var.lower == var.upper {
            writeln!(out, " FX BND {} {}", var_names[j], var.lower).unwrap();
            continue;
        }
        if var.lower.is_infinite() && var.upper.is_infinite() {
            writeln!(out, " FR BND {}", var_names[j]).unwrap();
            continue;
        }
        if var.lower != 0.0 {
            if var.lower.is_infinite() {
                writeln!(out, " MI BND {}", var_names[j]).unwrap();
            } else {
                writeln!(out, " LO BND {} {}", var_names[j], var.lower).unwrap();
            }
        }
        if var.upper.is_finite() {
            writeln!(out, " UP BND {} {}", var_names[j], var.upper).unwrap();
        }
    }
    writeln!(out, "ENDATA").unwrap();
    out
}
