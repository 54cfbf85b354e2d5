//! CSV writers.

use std::path::Path;

use anyhow::{ensure, Context};

use ksos_core::eval::EvalGrid;
use ksos_core::ocp::ValueFunction;

use crate::experiment::Row;

pub fn write_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a Row>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut any = false;
    for row in rows {
        w.serialize(row).with_context(|| format!("writing {}", path.display()))?;
        any = true;
    }
    if !any {
        w.write_record(crate::experiment::COLUMNS).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Writes `t, x1, …, xd, v_model, v_true` at every grid point; `v_true` is
/// empty without ground truth.
pub fn dump_value_function(
    model: &dyn ValueFunction,
    truth: Option<&dyn ValueFunction>,
    grid: &EvalGrid,
    path: &Path,
) -> anyhow::Result<()> {
    ensure!(!grid.is_empty(), "empty evaluation grid");
    let d = grid.points()[0].1.len();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    header.extend(["v_model".to_string(), "v_true".to_string()]);
    w.write_record(&header).with_context(|| format!("writing {}", path.display()))?;
    for (t, x) in grid.points() {
        let mut rec = vec![t.to_string()];
        rec.extend(x.iter().map(f64::to_string));
        rec.push(model.value(*t, x).to_string());
        rec.push(truth.map(|v| v.value(*t, x).to_string()).unwrap_or_default());
        w.write_record(&rec).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
