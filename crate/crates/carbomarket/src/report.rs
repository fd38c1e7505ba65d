//! Report bundle: `periods.csv`, `summary.csv`, `trace.csv`, `meta.json`.
//!
//! Column lists are fixed; see `docs/format.md`. Floats are written with
//! Rust's shortest round-trip formatting.

use std::fs;
use std::path::Path;

use carbomarket_core::clearing::curtailment_fraction;
use carbomarket_core::network::NetworkCase;
use carbomarket_core::simulator::{fit_revenue_rate, Aggregates, SimulationReport};

use crate::error::CliError;

pub const PERIOD_COLUMNS: [&str; 20] = [
    "scenario",
    "period",
    "kind",
    "id",
    "bus",
    "power_mw",
    "available_mw",
    "lmp_usd_per_mwh",
    "psi_usd_per_kwh",
    "cost_usd_per_h",
    "emission_kg_per_h",
    "energy_mwh",
    "queue_mwh",
    "gamma_usd_per_kwh",
    "revenue_usd",
    "allocation_usd",
    "allocated_emission_kg",
    "cost_sharing_error",
    "settlement_error",
    "flags",
];

pub const SUMMARY_COLUMNS: [&str; 4] = ["scenario", "metric", "id", "value"];

pub const TRACE_COLUMNS: [&str; 7] = ["scenario", "period", "segment", "y_start", "y_end", "basis_id", "gradient"];

/// Summary metric names in the order they are written.
pub const METRICS: [&str; 9] = [
    "avg_generation_cost_usd_per_h",
    "avg_emission_kg_per_h",
    "curtailment",
    "revenue_rate_usd_per_h",
    "storage_emission_rate_kg_per_h",
    "max_cost_sharing_error",
    "mean_cost_sharing_error",
    "max_settlement_error",
    "feasible_start_periods",
];

fn f(v: f64) -> String {
    v.to_string()
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Report(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Report(format!("{}: {e}", path.display()))
}

/// Rows of one simulated scenario, in `PERIOD_COLUMNS` order.
pub fn period_rows(case: &NetworkCase, report: &SimulationReport) -> Vec<Vec<String>> {
    let name = &report.scenario.name;
    let mut rows = Vec::new();
    let blank = || vec![String::new(); PERIOD_COLUMNS.len()];
    for rec in &report.periods {
        let t = rec.period.to_string();
        let mut row = blank();
        row[0] = name.clone();
        row[1] = t.clone();
        row[2] = "system".into();
        row[5] = f(case.demands(rec.period).iter().sum());
        row[7] = f(rec.lambda_bar);
        row[9] = f(rec.generation_cost);
        row[10] = f(rec.emission);
        row[17] = f(rec.cost_sharing_error);
        row[18] = f(rec.settlement.relative_error);
        let mut flags = Vec::new();
        if rec.feasible_start {
            flags.push("feasible_start");
        }
        if rec.degenerate {
            flags.push("degenerate");
        }
        row[19] = flags.join("|");
        rows.push(row);
        for (i, bus) in case.buses.iter().enumerate() {
            let mut row = blank();
            row[0] = name.clone();
            row[1] = t.clone();
            row[2] = "bus".into();
            row[3] = bus.id.to_string();
            row[4] = bus.id.to_string();
            row[5] = f(case.demands(rec.period)[i]);
            row[7] = f(rec.lmp[i]);
            row[8] = f(rec.psi[i]);
            row[15] = f(rec.load_allocation[i]);
            rows.push(row);
        }
        for (g, gen) in case.generators.iter().enumerate() {
            let mut row = blank();
            row[0] = name.clone();
            row[1] = t.clone();
            row[2] = if gen.is_renewable { "renewable".into() } else { "generator".into() };
            row[3] = gen.id.to_string();
            row[4] = case.buses[gen.bus].id.to_string();
            row[5] = f(rec.generator_dispatch[g]);
            if gen.is_renewable {
                row[6] = f(rec.renewable_available[g]);
            }
            row[9] = f(gen.fuel_curve.value(rec.generator_dispatch[g]));
            row[10] = f(gen.emission_curve.value(rec.generator_dispatch[g]));
            rows.push(row);
        }
        for (s, unit) in report_storages(case, report) {
            let mut row = blank();
            row[0] = name.clone();
            row[1] = t.clone();
            row[2] = "storage".into();
            row[3] = unit.id.to_string();
            row[4] = case.buses[unit.bus].id.to_string();
            row[5] = f(rec.storage_dispatch[s]);
            row[11] = f(rec.storage_energy[s]);
            row[12] = f(rec.storage_queue[s]);
            row[13] = f(rec.storage_gamma[s]);
            row[14] = f(rec.storage_revenue[s]);
            row[16] = f(rec.storage_allocated_emission[s]);
            rows.push(row);
        }
    }
    rows
}

fn report_storages<'a>(
    case: &'a NetworkCase,
    report: &SimulationReport,
) -> impl Iterator<Item = (usize, &'a carbomarket_core::network::StorageUnit)> {
    let active = report.scenario.enable_storage;
    case.storages.iter().enumerate().filter(move |_| active)
}

/// `(metric, id, value)` triples; per-storage metrics carry the storage id.
pub fn summary_triples(case: &NetworkCase, report: &SimulationReport) -> Vec<(&'static str, String, f64)> {
    aggregate_triples(case, &report.aggregates, report.scenario.enable_storage)
}

fn aggregate_triples(case: &NetworkCase, a: &Aggregates, storage: bool) -> Vec<(&'static str, String, f64)> {
    let mut out = vec![
        (METRICS[0], String::new(), a.avg_generation_cost),
        (METRICS[1], String::new(), a.avg_emission),
        (METRICS[2], String::new(), a.curtailment),
    ];
    if storage {
        for (s, unit) in case.storages.iter().enumerate() {
            out.push((METRICS[3], unit.id.to_string(), a.revenue_rate[s]));
        }
        for (s, unit) in case.storages.iter().enumerate() {
            out.push((METRICS[4], unit.id.to_string(), a.storage_emission_rate[s]));
        }
    }
    out.push((METRICS[5], String::new(), a.max_cost_sharing_error));
    out.push((METRICS[6], String::new(), a.mean_cost_sharing_error));
    out.push((METRICS[7], String::new(), a.max_settlement_error));
    out.push((METRICS[8], String::new(), a.feasible_start_periods as f64));
    out
}

/// Writes the four bundle files into `dir` for one or more scenarios.
pub fn write_bundle(dir: &Path, case: &NetworkCase, reports: &[SimulationReport], meta: &serde_json::Value) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.to_path_buf(), source })?;

    let path = dir.join("periods.csv");
    let mut w = writer(&path)?;
    w.write_record(PERIOD_COLUMNS).map_err(csv_err(&path))?;
    for r in reports {
        for row in period_rows(case, r) {
            w.write_record(&row).map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|source| CliError::Output { path: path.clone(), source })?;

    let path = dir.join("summary.csv");
    let mut w = writer(&path)?;
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err(&path))?;
    for r in reports {
        for (metric, id, value) in summary_triples(case, r) {
            w.write_record([r.scenario.name.as_str(), metric, &id, &f(value)]).map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|source| CliError::Output { path: path.clone(), source })?;

    let path = dir.join("trace.csv");
    let mut w = writer(&path)?;
    w.write_record(TRACE_COLUMNS).map_err(csv_err(&path))?;
    for r in reports {
        for rec in &r.periods {
            for (k, bp) in rec.breakpoints.iter().enumerate() {
                let grad = bp.gradient.iter().map(|g| f(*g)).collect::<Vec<_>>().join(" ");
                let row = [
                    r.scenario.name.clone(),
                    rec.period.to_string(),
                    k.to_string(),
                    f(bp.y_start),
                    f(bp.y_end),
                    format!("{:016x}", bp.basis_id),
                    grad,
                ];
                w.write_record(&row).map_err(csv_err(&path))?;
            }
        }
    }
    w.flush().map_err(|source| CliError::Output { path: path.clone(), source })?;

    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| CliError::Report(e.to_string()))?;
    fs::write(&path, text).map_err(|source| CliError::Output { path, source })
}

/// Recomputes the summary of `scenario` from a `periods.csv` file. Returns
/// `(metric, id, value)` triples in the same order as `summary.csv`.
pub fn recompute_summary(periods_csv: &Path, scenario: &str, tau: f64) -> Result<Vec<(String, String, f64)>, CliError> {
    let mut rdr = csv::Reader::from_path(periods_csv).map_err(csv_err(periods_csv))?;
    let num = |s: &str| -> Result<f64, CliError> { s.parse().map_err(|_| CliError::Report(format!("bad number \"{s}\""))) };
    let mut costs = Vec::new();
    let mut emissions = Vec::new();
    let mut cse = Vec::new();
    let mut settle = Vec::new();
    let mut feasible = 0usize;
    let mut available = Vec::new();
    let mut dispatched = Vec::new();
    let mut storage_ids: Vec<String> = Vec::new();
    let mut revenue: Vec<Vec<f64>> = Vec::new();
    let mut allocated: Vec<f64> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(periods_csv))?;
        if &rec[0] != scenario {
            continue;
        }
        match &rec[2] {
            "system" => {
                costs.push(num(&rec[9])?);
                emissions.push(num(&rec[10])?);
                cse.push(num(&rec[17])?);
                settle.push(num(&rec[18])?);
                if rec[19].split('|').any(|f| f == "feasible_start") {
                    feasible += 1;
                }
            }
            "renewable" => {
                available.push(num(&rec[6])?);
                dispatched.push(num(&rec[5])?);
            }
            "storage" => {
                let id = rec[3].to_string();
                let s = match storage_ids.iter().position(|i| *i == id) {
                    Some(s) => s,
                    None => {
                        storage_ids.push(id);
                        revenue.push(Vec::new());
                        allocated.push(0.0);
                        storage_ids.len() - 1
                    }
                };
                revenue[s].push(num(&rec[14])?);
                allocated[s] += num(&rec[16])?;
            }
            _ => {}
        }
    }
    let n = costs.len() as f64;
    if costs.is_empty() {
        return Err(CliError::Report(format!("no rows for scenario \"{scenario}\"")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let mut out = vec![
        (METRICS[0].to_string(), String::new(), mean(&costs)),
        (METRICS[1].to_string(), String::new(), mean(&emissions)),
        (METRICS[2].to_string(), String::new(), curtailment_fraction(&available, &dispatched).fraction),
    ];
    for (s, id) in storage_ids.iter().enumerate() {
        let cum = carbomarket_core::simulator::cumulative(&revenue[s]);
        out.push((METRICS[3].to_string(), id.clone(), fit_revenue_rate(&cum, tau)));
    }
    for (s, id) in storage_ids.iter().enumerate() {
        out.push((METRICS[4].to_string(), id.clone(), allocated[s] / (n * tau)));
    }
    out.push((METRICS[5].to_string(), String::new(), cse.iter().copied().fold(0.0, f64::max)));
    out.push((METRICS[6].to_string(), String::new(), mean(&cse)));
    out.push((METRICS[7].to_string(), String::new(), settle.iter().copied().fold(0.0, f64::max)));
    out.push((METRICS[8].to_string(), String::new(), feasible as f64));
    Ok(out)
}

/// Reads `summary.csv` rows of one scenario.
pub fn read_summary(summary_csv: &Path, scenario: &str) -> Result<Vec<(String, String, f64)>, CliError> {
    let mut rdr = csv::Reader::from_path(summary_csv).map_err(csv_err(summary_csv))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(summary_csv))?;
        if &rec[0] == scenario {
            let v = rec[3].parse().map_err(|_| CliError::Report(format!("bad number \"{}\"", &rec[3])))?;
            out.push((rec[1].to_string(), rec[2].to_string(), v));
        }
    }
    Ok(out)
}
