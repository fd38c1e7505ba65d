//! Case files: one TOML document plus two sidecar CSV series.
//!
//! Buses, generators and storages carry external ids in the file; the
//! loader maps them to the 0-based positions used by the core crate.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use carbomarket_core::curve::{PiecewiseLinearCurve, Segment};
use carbomarket_core::network::{validate_case, Branch, Bus, CaseData, Generator, NetworkCase, StorageUnit};
use carbomarket_core::units::KW_PER_MW;
use serde::{Deserialize, Serialize};

use crate::error::{CaseError, FieldError};

/// Units every case file must declare.
pub const UNITS: [(&str, &str); 6] = [
    ("power", "MW"),
    ("energy", "MWh"),
    ("time", "h"),
    ("price", "$/kWh"),
    ("intensity", "kgCO2/kWh"),
    ("carbon_price", "$/kgCO2"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseFile {
    pub name: String,
    pub units: BTreeMap<String, String>,
    pub market: MarketSection,
    pub series: SeriesSection,
    #[serde(default)]
    pub scenario: ScenarioDefaults,
    #[serde(rename = "bus", default)]
    pub buses: Vec<BusRow>,
    #[serde(rename = "branch", default)]
    pub branches: Vec<BranchRow>,
    #[serde(rename = "generator", default)]
    pub generators: Vec<GeneratorRow>,
    #[serde(rename = "storage", default)]
    pub storages: Vec<StorageRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub tau: f64,
    pub kappa: f64,
    pub epsilon: f64,
    pub delta: f64,
    /// Bus id.
    pub slack_bus: usize,
    #[serde(default)]
    pub loss_offset: f64,
    #[serde(default)]
    pub loss_iteration: bool,
}

/// Paths relative to the case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSection {
    pub load: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renewable: Option<String>,
}

/// Defaults picked up by `simulate` and `compare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioDefaults {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    pub first_period: usize,
    pub seed: u64,
    pub v_scale: f64,
    /// Thresholds of the simple two-price storage rule, $/kWh.
    pub b2_lo: f64,
    pub b2_hi: f64,
}

impl Default for ScenarioDefaults {
    fn default() -> Self {
        ScenarioDefaults { horizon: None, first_period: 0, seed: 0, v_scale: 1.0, b2_lo: 0.02, b2_hi: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusRow {
    pub id: usize,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub loss_sensitivity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub withdrawal_loss_sensitivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRow {
    pub from: usize,
    pub to: usize,
    /// MW; omitted for an unconstrained line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reactance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptdf: Option<Vec<f64>>,
}

/// Either a linear coefficient in $/kWh (kgCO2/kWh) or explicit segments
/// `[slope per MWh, intercept per h]` in listed order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRow {
    pub id: usize,
    pub bus: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fuel_segments: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission_segments: Option<Vec<[f64; 2]>>,
    /// Required with `emission_segments`; defaults to `emission` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_emission: Option<f64>,
    #[serde(default)]
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub renewable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageRow {
    pub id: usize,
    pub bus: usize,
    pub p_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub e_init: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub n_segments: usize,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

fn is_false(v: &bool) -> bool {
    !*v
}

/// A loaded case with its scenario defaults and the path it came from.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case: NetworkCase,
    pub defaults: ScenarioDefaults,
    pub path: PathBuf,
}

pub fn load_case(path: &Path) -> Result<LoadedCase, CaseError> {
    let text = fs::read_to_string(path).map_err(|source| CaseError::Io { path: path.to_path_buf(), source })?;
    let file = parse_case(&text)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let load_path = dir.join(&file.series.load);
    let load_text = fs::read_to_string(&load_path).map_err(|source| CaseError::Io { path: load_path.clone(), source })?;
    let renewable = match &file.series.renewable {
        Some(p) => {
            let p = dir.join(p);
            let text = fs::read_to_string(&p).map_err(|source| CaseError::Io { path: p.clone(), source })?;
            Some((p, text))
        }
        None => None,
    };
    let renewable_ref = renewable.as_ref().map(|(p, t)| (p.as_path(), t.as_str()));
    let case = build_case(&file, (&load_path, &load_text), renewable_ref)?;
    Ok(LoadedCase { case, defaults: file.scenario, path: path.to_path_buf() })
}

/// Parses the TOML document without touching the series.
pub fn parse_case(text: &str) -> Result<CaseFile, CaseError> {
    if text.trim().is_empty() {
        return Err(CaseError::Parse { line: 1, column: 1, message: "empty case file".into() });
    }
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((1, 1));
        CaseError::Parse { line, column, message: e.message().to_string() }
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn segments_curve(segs: &[[f64; 2]], lo: f64, hi: f64) -> Option<PiecewiseLinearCurve> {
    let segs = segs.iter().map(|&[slope, intercept]| Segment { slope, intercept }).collect();
    PiecewiseLinearCurve::new(segs, lo, hi).ok()
}

/// Schema check, id mapping and series ingestion. Collects every violation
/// before failing.
pub fn build_case(
    file: &CaseFile,
    load: (&Path, &str),
    renewable: Option<(&Path, &str)>,
) -> Result<NetworkCase, CaseError> {
    let mut errs = Vec::new();
    let mut err = |path: String, message: &str| errs.push(FieldError { path, message: message.to_string() });

    for (key, unit) in UNITS {
        match file.units.get(key) {
            Some(u) if u == unit => {}
            Some(_) => err(format!("units.{key}"), &format!("must be \"{unit}\"")),
            None => err(format!("units.{key}"), &format!("missing; declare \"{unit}\"")),
        }
    }
    for key in file.units.keys() {
        if !UNITS.iter().any(|(k, _)| k == key) {
            err(format!("units.{key}"), "unknown unit key");
        }
    }

    // unit mistakes leave the data intact; anything after this may not
    let unit_errs = errs.len();

    let mut bus_pos = HashMap::new();
    for (i, b) in file.buses.iter().enumerate() {
        if bus_pos.insert(b.id, i).is_some() {
            errs.push(FieldError { path: format!("bus[{i}].id"), message: "duplicate bus id".into() });
        }
    }
    let bus_ref = |path: String, id: usize, errs: &mut Vec<FieldError>| match bus_pos.get(&id) {
        Some(&i) => i,
        None => {
            errs.push(FieldError { path, message: format!("unknown bus id {id}") });
            0
        }
    };
    let slack_bus = bus_ref("market.slack_bus".into(), file.market.slack_bus, &mut errs);

    let mut branches = Vec::with_capacity(file.branches.len());
    for (l, br) in file.branches.iter().enumerate() {
        let from = bus_ref(format!("branch[{l}].from"), br.from, &mut errs);
        let to = bus_ref(format!("branch[{l}].to"), br.to, &mut errs);
        branches.push(Branch {
            from,
            to,
            capacity: br.capacity.unwrap_or(f64::INFINITY),
            reactance: br.reactance,
            ptdf_row: br.ptdf.clone(),
        });
    }

    let mut generators = Vec::with_capacity(file.generators.len());
    let mut gen_ids = HashMap::new();
    for (g, row) in file.generators.iter().enumerate() {
        let path = |f: &str| format!("generator[{g}].{f}");
        if gen_ids.insert(row.id, g).is_some() {
            errs.push(FieldError { path: path("id"), message: "duplicate generator id".into() });
        }
        let bus = bus_ref(path("bus"), row.bus, &mut errs);
        let (lo, hi) = (row.p_min, row.p_max);
        let curve = |coef: Option<f64>, segs: &Option<Vec<[f64; 2]>>, name: &str, errs: &mut Vec<FieldError>| {
            let c = match (coef, segs) {
                (Some(c), None) => PiecewiseLinearCurve::linear(c * KW_PER_MW, 0.0, lo, hi).ok(),
                (None, Some(s)) => segments_curve(s, lo, hi),
                (None, None) if row.renewable => PiecewiseLinearCurve::zero(lo, hi).ok(),
                (None, None) => {
                    errs.push(FieldError { path: path(name), message: "need a coefficient or segments".into() });
                    return PiecewiseLinearCurve::zero(0.0, 0.0).expect("finite");
                }
                (Some(_), Some(_)) => {
                    errs.push(FieldError { path: path(name), message: "give a coefficient or segments, not both".into() });
                    return PiecewiseLinearCurve::zero(0.0, 0.0).expect("finite");
                }
            };
            c.unwrap_or_else(|| {
                errs.push(FieldError { path: path(name), message: "curve is not finite on [p_min, p_max]".into() });
                PiecewiseLinearCurve::zero(0.0, 0.0).expect("finite")
            })
        };
        let fuel_curve = curve(row.fuel_cost, &row.fuel_segments, "fuel_cost", &mut errs);
        let emission_curve = curve(row.emission, &row.emission_segments, "emission", &mut errs);
        let unit_emission = match (row.unit_emission, row.emission) {
            (Some(u), _) => u,
            (None, Some(e)) => e,
            (None, None) if row.emission_segments.is_none() => 0.0,
            (None, None) => {
                errs.push(FieldError { path: path("unit_emission"), message: "required with emission_segments".into() });
                0.0
            }
        };
        generators.push(Generator {
            id: row.id,
            bus,
            fuel_curve,
            emission_curve,
            unit_emission,
            p_min: row.p_min,
            p_max: row.p_max,
            is_renewable: row.renewable,
        });
    }

    let mut storages = Vec::with_capacity(file.storages.len());
    let mut storage_ids = HashMap::new();
    for (s, row) in file.storages.iter().enumerate() {
        if storage_ids.insert(row.id, s).is_some() {
            errs.push(FieldError { path: format!("storage[{s}].id"), message: "duplicate storage id".into() });
        }
        let bus = bus_ref(format!("storage[{s}].bus"), row.bus, &mut errs);
        storages.push(StorageUnit {
            id: row.id,
            bus,
            p_max: row.p_max,
            eta_c: row.eta_c,
            eta_d: row.eta_d,
            e_min: row.e_min,
            e_max: row.e_max,
            e_init: row.e_init,
            gamma_lo: row.gamma_lo,
            gamma_hi: row.gamma_hi,
            n_segments: row.n_segments,
        });
    }

    let bus_ids: Vec<usize> = file.buses.iter().map(|b| b.id).collect();
    let load_series = read_series(load.0, load.1, "bus", &bus_ids, false)?;
    let renewable_ids: Vec<usize> = file.generators.iter().filter(|g| g.renewable).map(|g| g.id).collect();
    let renewable_series = match renewable {
        Some((p, text)) => read_series(p, text, "plant", &renewable_ids, true)?,
        None if renewable_ids.is_empty() => vec![Vec::new(); load_series.len()],
        None => {
            errs.push(FieldError { path: "series.renewable".into(), message: "required when renewable plants exist".into() });
            Vec::new()
        }
    };

    let data = CaseData {
        name: file.name.clone(),
        buses: file
            .buses
            .iter()
            .map(|b| Bus {
                id: b.id,
                loss_sensitivity: b.loss_sensitivity,
                withdrawal_loss_sensitivity: b.withdrawal_loss_sensitivity,
            })
            .collect(),
        branches,
        generators,
        storages,
        load_series,
        renewable_series,
        tau: file.market.tau,
        kappa: file.market.kappa,
        epsilon: file.market.epsilon,
        delta: file.market.delta,
        slack_bus,
        loss_offset: file.market.loss_offset,
        loss_iteration: file.market.loss_iteration,
    };
    // range checks on placeholder indices would only add noise
    if errs.len() == unit_errs {
        for v in validate_case(&data) {
            errs.push(FieldError { path: file_path(&v.field), message: v.rule });
        }
    }
    let d = &file.scenario;
    if !(d.v_scale > 0.0) {
        errs.push(FieldError { path: "scenario.v_scale".into(), message: "must be positive".into() });
    }
    if !(d.b2_lo <= d.b2_hi) {
        errs.push(FieldError { path: "scenario.b2_lo".into(), message: "must not exceed b2_hi".into() });
    }
    if !errs.is_empty() {
        return Err(CaseError::Schema(errs));
    }
    NetworkCase::new(data).map_err(CaseError::Network)
}

/// Core field names use `generators[3]`; the file uses `generator[3]`.
fn file_path(core: &str) -> String {
    for (from, to) in [("buses[", "bus["), ("branches[", "branch["), ("generators[", "generator["), ("storages[", "storage[")] {
        if let Some(rest) = core.strip_prefix(from) {
            return format!("{to}{rest}");
        }
    }
    match core {
        "slack_bus" => "market.slack_bus".into(),
        "tau" | "kappa" | "epsilon" | "delta" | "loss_offset" => format!("market.{core}"),
        _ if core.starts_with("load_series") => core.replacen("load_series", "series.load", 1),
        _ if core.starts_with("renewable_series") => core.replacen("renewable_series", "series.renewable", 1),
        _ => core.into(),
    }
}

/// Reads a `period,<prefix>_<id>,...` CSV into `[period][k]` ordered by
/// `ids`. Missing columns are zero unless `required`.
pub fn read_series(path: &Path, text: &str, prefix: &str, ids: &[usize], required: bool) -> Result<Vec<Vec<f64>>, CaseError> {
    let serr = |line: usize, message: String| CaseError::Series { path: path.to_path_buf(), line, message };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| serr(1, e.to_string()))?.clone();
    let mut column = vec![None; ids.len()];
    for (c, h) in headers.iter().enumerate() {
        if c == 0 {
            if h != "period" {
                return Err(serr(1, format!("first column must be \"period\", found \"{h}\"")));
            }
            continue;
        }
        let id = h
            .strip_prefix(prefix)
            .and_then(|r| r.strip_prefix('_'))
            .and_then(|r| r.parse::<usize>().ok())
            .ok_or_else(|| serr(1, format!("column \"{h}\" is not {prefix}_<id>")))?;
        let k = ids.iter().position(|&i| i == id).ok_or_else(|| serr(1, format!("column \"{h}\" names an unknown {prefix}")))?;
        if column[k].replace(c).is_some() {
            return Err(serr(1, format!("duplicate column \"{h}\"")));
        }
    }
    if required {
        if let Some(k) = column.iter().position(Option::is_none) {
            return Err(serr(1, format!("missing column {prefix}_{}", ids[k])));
        }
    }
    let mut out = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| serr(line, e.to_string()))?;
        let period: usize = rec[0].parse().map_err(|_| serr(line, format!("bad period \"{}\"", &rec[0])))?;
        if period != r {
            return Err(serr(line, format!("periods must run 0, 1, 2, ...; found {period}")));
        }
        let mut row = vec![0.0; ids.len()];
        for (k, c) in column.iter().enumerate() {
            if let Some(c) = *c {
                row[k] = rec[c].parse().map_err(|_| serr(line, format!("bad number \"{}\"", &rec[c])))?;
            }
        }
        out.push(row);
    }
    if out.is_empty() {
        return Err(serr(2, "series has no periods".into()));
    }
    Ok(out)
}

/// Writes `<dir>/<stem>.toml`, `<stem>_load.csv` and (if any renewable
/// plant exists) `<stem>_renewable.csv`. Returns the TOML path.
pub fn save_case(case: &CaseData, defaults: &ScenarioDefaults, dir: &Path, stem: &str) -> Result<PathBuf, CaseError> {
    fs::create_dir_all(dir).map_err(|source| CaseError::Io { path: dir.to_path_buf(), source })?;
    let load_name = format!("{stem}_load.csv");
    let renewable_ids: Vec<usize> = case.generators.iter().filter(|g| g.is_renewable).map(|g| g.id).collect();
    let renewable_name = (!renewable_ids.is_empty()).then(|| format!("{stem}_renewable.csv"));
    let file = to_case_file(case, defaults, &load_name, renewable_name.as_deref())?;
    let text = toml::to_string(&file).map_err(|e| CaseError::Serialize(e.to_string()))?;
    let path = dir.join(format!("{stem}.toml"));
    fs::write(&path, text).map_err(|source| CaseError::Io { path: path.clone(), source })?;
    let bus_ids: Vec<usize> = case.buses.iter().map(|b| b.id).collect();
    write_series(&dir.join(&load_name), "bus", &bus_ids, &case.load_series)?;
    if let Some(name) = renewable_name {
        write_series(&dir.join(name), "plant", &renewable_ids, &case.renewable_series)?;
    }
    Ok(path)
}

pub fn write_series(path: &Path, prefix: &str, ids: &[usize], series: &[Vec<f64>]) -> Result<(), CaseError> {
    let io = |e: csv::Error| CaseError::Serialize(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec![String::from("period")];
    header.extend(ids.iter().map(|i| format!("{prefix}_{i}")));
    w.write_record(&header).map_err(io)?;
    for (t, row) in series.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|source| CaseError::Io { path: path.to_path_buf(), source })
}

/// Linear coefficient if the curve is `c·1000·p` over its domain and the
/// division by 1000 round-trips; explicit segments otherwise.
fn curve_fields(c: &PiecewiseLinearCurve) -> (Option<f64>, Option<Vec<[f64; 2]>>) {
    let segs = c.segments();
    if segs.len() == 1 && segs[0].intercept == 0.0 {
        let coef = segs[0].slope / KW_PER_MW;
        if coef * KW_PER_MW == segs[0].slope {
            return (Some(coef), None);
        }
    }
    (None, Some(segs.iter().map(|s| [s.slope, s.intercept]).collect()))
}

pub fn to_case_file(
    case: &CaseData,
    defaults: &ScenarioDefaults,
    load: &str,
    renewable: Option<&str>,
) -> Result<CaseFile, CaseError> {
    let bus_id = |i: usize| case.buses[i].id;
    let mut generators = Vec::with_capacity(case.generators.len());
    for (g, gen) in case.generators.iter().enumerate() {
        for c in [&gen.fuel_curve, &gen.emission_curve] {
            if c.lo() != gen.p_min || c.hi() != gen.p_max {
                return Err(CaseError::Serialize(format!("generator {g}: curve domain differs from [p_min, p_max]")));
            }
        }
        let (mut fuel_cost, mut fuel_segments) = curve_fields(&gen.fuel_curve);
        let (mut emission, mut emission_segments) = curve_fields(&gen.emission_curve);
        let mut unit_emission = None;
        if gen.is_renewable && gen.fuel_curve.is_zero() && gen.fuel_curve.segments().len() == 1 {
            (fuel_cost, fuel_segments) = (None, None);
        }
        if gen.is_renewable && gen.emission_curve.is_zero() && gen.emission_curve.segments().len() == 1 && gen.unit_emission == 0.0 {
            (emission, emission_segments) = (None, None);
        } else if emission != Some(gen.unit_emission) {
            unit_emission = Some(gen.unit_emission);
            if let Some(e) = emission.take() {
                emission_segments = Some(vec![[e * KW_PER_MW, 0.0]]);
            }
        }
        generators.push(GeneratorRow {
            id: gen.id,
            bus: bus_id(gen.bus),
            fuel_cost,
            fuel_segments,
            emission,
            emission_segments,
            unit_emission,
            p_min: gen.p_min,
            p_max: gen.p_max,
            renewable: gen.is_renewable,
        });
    }
    Ok(CaseFile {
        name: case.name.clone(),
        units: UNITS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        market: MarketSection {
            tau: case.tau,
            kappa: case.kappa,
            epsilon: case.epsilon,
            delta: case.delta,
            slack_bus: bus_id(case.slack_bus),
            loss_offset: case.loss_offset,
            loss_iteration: case.loss_iteration,
        },
        series: SeriesSection { load: load.into(), renewable: renewable.map(Into::into) },
        scenario: defaults.clone(),
        buses: case
            .buses
            .iter()
            .map(|b| BusRow {
                id: b.id,
                loss_sensitivity: b.loss_sensitivity,
                withdrawal_loss_sensitivity: b.withdrawal_loss_sensitivity,
            })
            .collect(),
        branches: case
            .branches
            .iter()
            .map(|b| BranchRow {
                from: bus_id(b.from),
                to: bus_id(b.to),
                capacity: b.capacity.is_finite().then_some(b.capacity),
                reactance: b.reactance,
                ptdf: b.ptdf_row.clone(),
            })
            .collect(),
        generators,
        storages: case
            .storages
            .iter()
            .map(|s| StorageRow {
                id: s.id,
                bus: bus_id(s.bus),
                p_max: s.p_max,
                eta_c: s.eta_c,
                eta_d: s.eta_d,
                e_min: s.e_min,
                e_max: s.e_max,
                e_init: s.e_init,
                gamma_lo: s.gamma_lo,
                gamma_hi: s.gamma_hi,
                n_segments: s.n_segments,
            })
            .collect(),
    })
}
