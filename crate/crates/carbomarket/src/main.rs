use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carbomarket::case::{load_case, save_case, LoadedCase};
use carbomarket::error::{CliError, ExitClass};
use carbomarket::report::{summary_triples, write_bundle};
use carbomarket::synth::{bundled_replica30, single_gen, REPLICA_PERIODS};
use carbomarket::{branch_flows, cef_baseline, meta, resolve_scenario, run_through};
use carbomarket_core::simulator::{run_horizon, ScenarioConfig, SimulationReport};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "carbomarket", version, about = "Emission-aware market clearing and storage bidding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Built-in scenario (proposed, a1, a2, a3) or a scenario file.
    #[arg(long, default_value = "proposed")]
    scenario: String,
    /// Overrides the case's scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Allocation probe step.
    #[arg(long)]
    delta: Option<f64>,
    /// Emission tiebreak weight, $/kgCO2.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Clears one period and prints dispatch and prices.
    Clear {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        period: usize,
    },
    /// Prints emission prices and the allocation trace of one period.
    Allocate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        period: usize,
    },
    /// Runs the horizon and writes a report bundle.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Runs Proposed, A1, A2 and A3 and prints a comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Carbon-flow emission prices of one period next to the allocated ones.
    Cef {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        period: usize,
    },
    /// Writes a bundled case (the synthetic 30-bus replica or the two-bus
    /// single-plant example).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Replica30)]
        kind: Kind,
        #[arg(long, default_value_t = carbomarket::synth::REPLICA_SEED)]
        seed: u64,
        #[arg(long, default_value_t = REPLICA_PERIODS)]
        periods: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Kind {
    Replica30,
    SingleGen,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[{}:{}]: {first}", ExitClass::Usage.tag(), ExitClass::Usage.code());
            return ExitCode::from(ExitClass::Usage.code() as u8);
        }
    };
    let mut out = io::BufWriter::new(io::stdout().lock());
    let result = run(cli, &mut out).and_then(|()| out.flush().map_err(CliError::from));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe downstream (`| head`) is not an error
        Err(CliError::Stdout(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}:{}]: {msg}", class.tag(), class.code());
            ExitCode::from(class.code() as u8)
        }
    }
}

fn setup(common: &Common) -> Result<(LoadedCase, ScenarioConfig), CliError> {
    let loaded = load_case(&common.case)?;
    let mut sc = resolve_scenario(&common.scenario, &loaded.defaults)?;
    if let Some(s) = common.seed {
        sc.seed = s;
    }
    if common.delta.is_some() {
        sc.delta = common.delta;
    }
    if common.epsilon.is_some() {
        sc.epsilon = common.epsilon;
    }
    Ok((loaded, sc))
}

fn ids(case: &carbomarket_core::network::NetworkCase) -> Vec<usize> {
    case.buses.iter().map(|b| b.id).collect()
}

fn run(cli: Cli, w: &mut impl Write) -> Result<(), CliError> {
    match cli.command {
        Command::Clear { common, period } => {
            let (loaded, sc) = setup(&common)?;
            let case = &loaded.case;
            let report = run_through(case, &sc, period)?;
            let rec = report.periods.last().expect("at least one period");
            writeln!(w, "period,{period}")?;
            writeln!(w, "lambda_bar_usd_per_mwh,{}", rec.lambda_bar)?;
            writeln!(w, "cost_usd_per_h,{}", rec.generation_cost)?;
            writeln!(w, "emission_kg_per_h,{}", rec.emission)?;
            writeln!(w, "kind,id,bus,power_mw")?;
            for (g, gen) in case.generators.iter().enumerate() {
                writeln!(w, "generator,{},{},{}", gen.id, case.buses[gen.bus].id, rec.generator_dispatch[g])?;
            }
            for (s, unit) in case.storages.iter().enumerate().filter(|_| sc.enable_storage) {
                writeln!(w, "storage,{},{},{}", unit.id, case.buses[unit.bus].id, rec.storage_dispatch[s])?;
            }
            writeln!(w, "bus,lmp_usd_per_mwh")?;
            for (id, lmp) in ids(case).iter().zip(&rec.lmp) {
                writeln!(w, "{id},{lmp}")?;
            }
            writeln!(w, "branch,from,to,flow_mw")?;
            for (l, (br, f)) in case.branches.iter().zip(branch_flows(case, rec)).enumerate() {
                writeln!(w, "{l},{},{},{f}", case.buses[br.from].id, case.buses[br.to].id)?;
            }
        }
        Command::Allocate { common, period } => {
            let (loaded, mut sc) = setup(&common)?;
            sc.enable_allocation = true;
            let case = &loaded.case;
            let report = run_through(case, &sc, period)?;
            let rec = report.periods.last().expect("at least one period");
            writeln!(w, "period,{period}")?;
            writeln!(w, "cost_sharing_error,{}", rec.cost_sharing_error)?;
            writeln!(w, "feasible_start,{}", rec.feasible_start)?;
            writeln!(w, "bus,psi_usd_per_kwh,allocation_usd")?;
            for (i, id) in ids(case).iter().enumerate() {
                writeln!(w, "{id},{},{}", rec.psi[i], rec.load_allocation[i])?;
            }
            writeln!(w, "segment,y_start,y_end,basis_id")?;
            for (k, bp) in rec.breakpoints.iter().enumerate() {
                writeln!(w, "{k},{},{},{:016x}", bp.y_start, bp.y_end, bp.basis_id)?;
            }
        }
        Command::Simulate { common, out } => {
            let (loaded, sc) = setup(&common)?;
            let report = simulate(&loaded, &sc)?;
            let m = meta(&loaded.case, &loaded.path, std::slice::from_ref(&sc), "simulate");
            write_bundle(&out, &loaded.case, std::slice::from_ref(&report), &m)?;
            print_summary(w, &loaded, std::slice::from_ref(&report))?;
        }
        Command::Compare { common, out } => {
            let (loaded, base) = setup(&common)?;
            let configs: Vec<ScenarioConfig> = ScenarioConfig::table()
                .into_iter()
                .map(|mut s| {
                    s.horizon = base.horizon;
                    s.first_period = base.first_period;
                    s.seed = base.seed;
                    s.delta = base.delta;
                    s.epsilon = base.epsilon;
                    s.v_scale = base.v_scale;
                    s
                })
                .collect();
            let reports = std::thread::scope(|scope| {
                let handles: Vec<_> = configs.iter().map(|sc| scope.spawn(|| simulate(&loaded, sc))).collect();
                handles.into_iter().map(|h| h.join().expect("scenario thread")).collect::<Result<Vec<_>, _>>()
            })?;
            if let Some(out) = out {
                let m = meta(&loaded.case, &loaded.path, &configs, "compare");
                write_bundle(&out, &loaded.case, &reports, &m)?;
            }
            writeln!(w, "scenario,storage,allocation,avg_generation_cost_usd_per_h,avg_emission_kg_per_h,curtailment")?;
            for r in &reports {
                let a = &r.aggregates;
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    r.scenario.name,
                    yn(r.scenario.enable_storage),
                    yn(r.scenario.enable_allocation),
                    a.avg_generation_cost,
                    a.avg_emission,
                    a.curtailment
                )?;
            }
        }
        Command::Cef { common, period } => {
            let (loaded, mut sc) = setup(&common)?;
            sc.enable_allocation = true;
            let case = &loaded.case;
            let report = run_through(case, &sc, period)?;
            let cef = cef_baseline(case, &report)?;
            let last = cef.last().expect("at least one period");
            let rec = report.periods.last().expect("at least one period");
            writeln!(w, "period,{period}")?;
            writeln!(w, "bus,rho_kg_per_kwh,cef_psi_usd_per_kwh,allocated_psi_usd_per_kwh,zero_throughput")?;
            for (i, id) in ids(case).iter().enumerate() {
                let zero = last.zero_throughput.contains(&i);
                writeln!(w, "{id},{},{},{},{}", last.rho[i], last.psi[i], rec.psi[i], zero)?;
            }
        }
        Command::Synth { out, kind, seed, periods } => {
            let data = match kind {
                Kind::Replica30 => bundled_replica30(seed, periods).map_err(|e| CliError::Report(e.to_string()))?,
                Kind::SingleGen => single_gen(),
            };
            let defaults = carbomarket::ScenarioDefaults { seed, ..Default::default() };
            let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("replica30").to_string();
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let path = save_case(&data, &defaults, dir, &stem)?;
            writeln!(w, "{}", path.display())?;
        }
    }
    Ok(())
}

fn simulate(loaded: &LoadedCase, sc: &ScenarioConfig) -> Result<SimulationReport, CliError> {
    run_horizon(&loaded.case, sc).map_err(|f| CliError::Simulation(f.error))
}

fn yn(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn print_summary(w: &mut impl Write, loaded: &LoadedCase, reports: &[SimulationReport]) -> Result<(), CliError> {
    writeln!(w, "scenario,metric,id,value")?;
    for r in reports {
        for (metric, id, value) in summary_triples(&loaded.case, r) {
            writeln!(w, "{},{metric},{id},{value}", r.scenario.name)?;
        }
    }
    Ok(())
}
