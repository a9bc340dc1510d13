use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use sheref_core::boosting::{boost_factor, boost_factor_auto, BoostError, BoostMethod, BoostQuery, BoostResult};
use sheref_core::models::NullLrLaw;
use toml::{Table, Value};

use crate::config::{boost_grid, comment_block, load_table, BoostGrid, GridLaw, Overrides};
use crate::error::CliError;
use crate::open_output;

pub const CSV_HEADER: &str = "alpha,c,law,cap,b_gd,gd_certified,b_tipd,tipd_certified";

fn law_label(law: &GridLaw) -> String {
    match law {
        GridLaw::PointMass => "point_mass".into(),
        GridLaw::LogNormal(v) => format!("lognormal_v{v}"),
    }
}

fn grid_echo(g: &BoostGrid) -> Table {
    let floats = |xs: &[f64]| Value::Array(xs.iter().map(|&x| Value::Float(x)).collect());
    let mut grid = Table::new();
    grid.insert("alpha".into(), floats(&g.alphas));
    grid.insert("c".into(), floats(&g.scales));
    grid.insert("point_mass".into(), Value::Boolean(g.laws.contains(&GridLaw::PointMass)));
    let vs: Vec<f64> = g
        .laws
        .iter()
        .filter_map(|l| match l {
            GridLaw::LogNormal(v) => Some(*v),
            GridLaw::PointMass => None,
        })
        .collect();
    grid.insert("lognormal_v".into(), floats(&vs));
    grid.insert("cap".into(), Value::Integer(g.cap as i64));
    grid.insert("tol".into(), Value::Float(g.tol));
    if let Some(b) = g.b_max {
        grid.insert("b_max".into(), Value::Float(b));
    }
    let mut root = Table::new();
    root.insert("grid".into(), Value::Table(grid));
    root
}

fn factors(g: &BoostGrid, q: &BoostQuery) -> Result<(BoostResult, BoostResult), BoostError> {
    let one = |m| match g.b_max {
        Some(b) => boost_factor(q, m, b, g.tol),
        None => boost_factor_auto(q, m, g.tol),
    };
    Ok((one(BoostMethod::Gd)?, one(BoostMethod::Tipd)?))
}

/// Renders the boosting table.
pub fn table(g: &BoostGrid) -> Result<String, CliError> {
    let mut text = comment_block(&grid_echo(g));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for &alpha in &g.alphas {
        for &c in &g.scales {
            for law in &g.laws {
                let null = match law {
                    GridLaw::PointMass => NullLrLaw::PointMass { value: 1.0 },
                    GridLaw::LogNormal(v) => NullLrLaw::unit_lognormal(*v),
                };
                let q = BoostQuery::new(null, c, alpha, g.cap).map_err(|e| CliError::config("grid", e.to_string()))?;
                let (gd, tipd) = factors(g, &q).map_err(|e| CliError::config("grid.b_max", e.to_string()))?;
                writeln!(
                    text,
                    "{alpha},{c},{},{},{},{},{},{}",
                    law_label(law),
                    g.cap,
                    gd.factor,
                    gd.certified,
                    tipd.factor,
                    tipd.certified
                )
                .expect("writing to a string");
            }
        }
    }
    Ok(text)
}

pub fn run(config: Option<&Path>, ov: &Overrides, out: Option<&Path>) -> Result<(), CliError> {
    let root = match config {
        Some(p) => load_table(p)?,
        None => Table::new(),
    };
    let grid = boost_grid(&root, ov)?;
    let text = table(&grid)?;
    let mut w = open_output(out)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))
}
