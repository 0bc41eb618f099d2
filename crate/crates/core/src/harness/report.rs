use std::io::Write;

use serde::Serialize;

use super::bench::BenchmarkReport;
use super::sweep::SweepCurve;
use crate::cm::ZonalStackCurve;
use crate::error::Result;

/// `algo,objective,time_ms,indicator`, one row per algorithm.
pub fn write_benchmark_csv<W: Write>(report: &BenchmarkReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["algo", "objective", "time_ms", "indicator"])?;
    for r in &report.rows {
        w.write_record([
            r.algo.name().to_string(),
            r.objective.to_string(),
            r.time_ms.to_string(),
            r.indicator.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `m,a,profit,x,v,ok`; failed points carry `ok = false`.
pub fn write_sweep_csv<W: Write>(curve: &SweepCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "a", "profit", "x", "v", "ok"])?;
    for r in &curve.rows {
        w.write_record([
            r.m.to_string(),
            r.a.to_string(),
            r.profit.to_string(),
            r.x.to_string(),
            r.v.to_string(),
            r.error.is_none().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Breakpoints of one zonal stack curve as `v,y`.
pub fn write_stack_csv<W: Write>(curve: &ZonalStackCurve, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "y"])?;
    for (v, y) in curve.breakpoints.iter().zip(&curve.quantities) {
        w.write_record([v.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON.
pub fn write_json<W: Write, T: Serialize>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}
