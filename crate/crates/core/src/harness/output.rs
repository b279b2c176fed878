use std::io::Write;
use std::path::Path;

use crate::error::Result;

use super::config::{Scheme, SweepParam, SweepPoint};
use super::run::{nmse, nmse_stderr, ser, ser_stderr, SchemeTally};

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub point: SweepPoint,
    pub scheme: Scheme,
    pub tally: SchemeTally,
}

/// One row per (grid point, scheme), grid points in configuration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub sweep_parameter: Option<SweepParam>,
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn rows_for(&self, scheme: Scheme) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.scheme == scheme).collect()
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = Vec::new();
        if let Some(p) = self.sweep_parameter {
            h.push(p.name());
        }
        h.extend([
            "snr_db",
            "scheme",
            "ser",
            "nmse",
            "trials",
            "symbols_total",
            "wall_time_s",
            "ser_stderr",
            "nmse_stderr",
            "flagged_trials",
        ]);
        h
    }
}

/// Ten significant digits.
fn num(x: f64) -> String {
    format!("{x:.9e}")
}

/// Writes the table as CSV with a header row.
pub fn emit_csv<W: Write>(table: &ResultTable, mut out: W) -> Result<()> {
    writeln!(out, "{}", table.header().join(","))?;
    for row in &table.rows {
        let mut fields = Vec::new();
        if table.sweep_parameter.is_some() {
            fields.push(row.point.sweep_value.map_or_else(String::new, |v| v.to_string()));
        }
        let t = &row.tally;
        fields.extend([
            num(row.point.snr_db),
            row.scheme.name().to_string(),
            num(ser(t)),
            num(nmse(t)),
            t.trials.to_string(),
            t.symbols_total.to_string(),
            num(t.wall_time_s),
            num(ser_stderr(t)),
            num(nmse_stderr(t)),
            t.flagged.to_string(),
        ]);
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn write_csv_file(table: &ResultTable, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    emit_csv(table, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ser,
    Nmse,
}

/// Gnuplot data blocks of `x y yerr`, one block per scheme (and per SNR when
/// an outer sweep is present), separated by two blank lines.
pub fn emit_plot_data<W: Write>(table: &ResultTable, metric: Metric, mut out: W) -> Result<()> {
    let mut keys: Vec<(Scheme, Option<u64>)> = Vec::new();
    for row in &table.rows {
        let snr_key = table.sweep_parameter.map(|_| row.point.snr_db.to_bits());
        if !keys.contains(&(row.scheme, snr_key)) {
            keys.push((row.scheme, snr_key));
        }
    }
    for (i, (scheme, snr_key)) in keys.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
            writeln!(out)?;
        }
        match snr_key {
            Some(bits) => writeln!(out, "# {} snr_db={}", scheme.name(), f64::from_bits(*bits))?,
            None => writeln!(out, "# {}", scheme.name())?,
        }
        for row in &table.rows {
            if row.scheme != *scheme || table.sweep_parameter.map(|_| row.point.snr_db.to_bits()) != *snr_key {
                continue;
            }
            let x = match row.point.sweep_value {
                Some(v) => v as f64,
                None => row.point.snr_db,
            };
            let (y, e) = match metric {
                Metric::Ser => (ser(&row.tally), ser_stderr(&row.tally)),
                Metric::Nmse => (nmse(&row.tally), nmse_stderr(&row.tally)),
            };
            writeln!(out, "{} {} {}", num(x), num(y), num(e))?;
        }
    }
    Ok(())
}
