use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use flexkit::aggregate::{aggregate, disaggregate, AggregateBinding};
use flexkit::codec::{parse_message, parse_schedule, parse_value, serialize_message, ROOT_KEY};
use flexkit::heatpump::{generate_fo, HeatPumpModel};
use flexkit::lifecycle::{run_exchange, Policy};
use flexkit::metric::{evaluate_heatpump, HeatPumpOracle, LITERATURE_RETENTION};
use flexkit::model::{check_schedule_with, DEFAULT_TOLERANCE};
use flexkit::optimize::{optimize, OptimizationResult, PriceCurve};
use flexkit::rdf::{fo_to_turtle_with, saref_coverage};
use flexkit::uncertain::DEFAULT_THRESHOLD;
use flexkit::{FlexError, FlexOffer, FoKind, Schedule, ScheduleKind};
use serde_json::Value;

const EXIT_VALIDATION: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "flexkit", version, about = "FlexOffer validation, optimization, aggregation and export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a message, check its invariants and the feasibility of its schedules.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Cost-minimizing schedule under a price curve.
    Optimize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        prices: PathBuf,
        /// Probability threshold for uncertain offers.
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        p0: f64,
        /// Also write the message with the optimized schedule attached.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate SFO/TECFO messages into one.
    Aggregate {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split an aggregate schedule over the member offers.
    Disaggregate {
        #[arg(long)]
        agg: PathBuf,
        /// A schedule object, or a message carrying a flexOfferSchedule.
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        members: Vec<PathBuf>,
    },
    /// Feasible energy intervals of an uncertain offer at a threshold.
    Thresh {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        p0: f64,
    },
    /// Generate an offer from a heat-pump room model.
    Gen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Profit and retention of each generated model against the exact oracle, as CSV.
    Metric {
        #[arg(long, required_unless_present = "literature")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "literature")]
        prices: Option<PathBuf>,
        #[arg(long, default_value_t = HeatPumpOracle::DEFAULT_TEMP_STEP)]
        temp_step: f64,
        #[arg(long, default_value_t = HeatPumpOracle::DEFAULT_ENERGY_STEP)]
        energy_step: f64,
        /// Print the retention figures reported in the literature instead.
        #[arg(long)]
        literature: bool,
    },
    /// Turtle export of a message.
    ExportRdf {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        p0: f64,
    },
    /// Which populated attributes SAREF4ENER can express.
    Coverage {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the prosumer/aggregator exchange for K identical rooms.
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        prices: PathBuf,
        /// `accept-all`, or `min-flex=<kWh>` (alias `accept-if=<kWh>`).
        #[arg(long, value_parser = parse_policy, default_value = "accept-all")]
        policy: Policy,
        /// Room model; the built-in desk room when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Where to write the JSON-lines exchange log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Per-slice lower/upper bounds and schedule energies as CSV.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Sfo,
    Tecfo,
    Dfo,
    Ufo,
}

impl From<KindArg> for FoKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Sfo => FoKind::Sfo,
            KindArg::Tecfo => FoKind::Tecfo,
            KindArg::Dfo => FoKind::Dfo,
            KindArg::Ufo => FoKind::Ufo,
        }
    }
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    if s == "accept-all" {
        return Ok(Policy::AcceptAll);
    }
    let kwh = s
        .strip_prefix("min-flex=")
        .or_else(|| s.strip_prefix("accept-if="))
        .ok_or_else(|| format!("unknown policy {s:?}; use accept-all or min-flex=<kWh>"))?;
    kwh.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Policy::MinFlexibility)
        .ok_or_else(|| format!("bad threshold {kwh:?}"))
}

/// An error together with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T> = Result<T, Failure>;

fn fail(code: u8, error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code,
        error: error.into(),
    }
}

fn engine(e: FlexError) -> Failure {
    let code = match e {
        FlexError::Infeasible(_) | FlexError::Unbounded => EXIT_INFEASIBLE,
        _ => EXIT_VALIDATION,
    };
    fail(code, e)
}

fn read(path: &Path) -> Outcome<Vec<u8>> {
    fs::read(path).map_err(|e| fail(EXIT_IO, anyhow!(e).context(format!("reading {}", path.display()))))
}

fn read_text(path: &Path) -> Outcome<String> {
    let bytes = read(path)?;
    String::from_utf8(bytes).map_err(|e| fail(EXIT_VALIDATION, anyhow!("{}: {e}", path.display())))
}

fn load_fo(path: &Path) -> Outcome<FlexOffer> {
    let bytes = read(path)?;
    parse_message(&bytes).map_err(|e| fail(EXIT_VALIDATION, anyhow!(e).context(path.display().to_string())))
}

fn load_model(path: &Path) -> Outcome<HeatPumpModel> {
    let text = read_text(path)?;
    HeatPumpModel::from_config_str(&text)
        .map_err(|e| fail(EXIT_VALIDATION, anyhow!(e).context(path.display().to_string())))
}

fn load_prices(path: &Path) -> Outcome<Vec<f64>> {
    let bytes = read(path)?;
    let bad = |e: anyhow::Error| fail(EXIT_VALIDATION, e.context(path.display().to_string()));
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = rdr.headers().map_err(|e| bad(e.into()))?;
    if headers.len() != 1 || &headers[0] != "price_eur_per_kwh" {
        return Err(bad(anyhow!("expected a single price_eur_per_kwh column")));
    }
    let mut prices = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.into()))?;
        let v: f64 = rec[0]
            .parse()
            .map_err(|_| bad(anyhow!("row {}: {:?} is not a number", i + 1, &rec[0])))?;
        prices.push(v);
    }
    PriceCurve::new(prices.clone()).map_err(|e| bad(e.into()))?;
    Ok(prices)
}

fn tolerance() -> Outcome<f64> {
    match std::env::var("FLEXKIT_TOLERANCE") {
        Err(_) => Ok(DEFAULT_TOLERANCE),
        Ok(s) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| fail(EXIT_VALIDATION, anyhow!("FLEXKIT_TOLERANCE={s:?} is not a non-negative number"))),
    }
}

/// Writes through a temporary file in the target directory, so a failed run
/// never leaves a partial output behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Outcome<()> {
    let io = |e: std::io::Error| fail(EXIT_IO, anyhow!(e).context(format!("writing {}", path.display())));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn num(v: f64) -> String {
    if v.abs() < 5e-7 {
        "0.000000".into()
    } else {
        format!("{v:.6}")
    }
}

fn optimal(result: OptimizationResult) -> Outcome<(Schedule, f64)> {
    match result {
        OptimizationResult::Optimal { schedule, objective } => Ok((schedule, objective)),
        OptimizationResult::Infeasible { reason } => Err(fail(EXIT_INFEASIBLE, anyhow!("infeasible: {reason}"))),
    }
}

fn validate(input: &Path) -> Outcome<String> {
    let tol = tolerance()?;
    let fo = load_fo(input)?;
    fo.validate().map_err(|e| fail(EXIT_VALIDATION, e))?;
    let mut out = format!("{} {} with {} slices\n", fo.kind(), fo.id, fo.len());
    let mut feasible = true;
    for (name, s) in [("defaultSchedule", &fo.default_schedule), ("flexOfferSchedule", &fo.flexoffer_schedule)] {
        if let Some(s) = s {
            let r = check_schedule_with(&fo, s, tol).map_err(engine)?;
            feasible &= r.feasible;
            let _ = writeln!(out, "{name}: {r}");
        }
    }
    if !feasible {
        return Err(fail(EXIT_INFEASIBLE, anyhow!("{}infeasible", out)));
    }
    out.push_str("feasible\n");
    Ok(out)
}

fn run_optimize(input: &Path, prices: &Path, p0: f64, out: Option<&Path>) -> Outcome<String> {
    let mut fo = load_fo(input)?;
    let prices = load_prices(prices)?;
    fo.validate().map_err(|e| fail(EXIT_VALIDATION, e))?;
    let (schedule, objective) = optimal(optimize(&fo, &prices, p0).map_err(engine)?)?;
    let mut text = format!("objective {}\n", num(objective));
    text.push_str("slice,energy_kwh,price_eur_per_kwh\n");
    for (t, (e, p)) in schedule.unit_energies().iter().zip(&prices).enumerate() {
        let _ = writeln!(text, "{},{},{}", t + 1, num(*e), num(*p));
    }
    if let Some(path) = out {
        fo.flexoffer_schedule = Some(schedule);
        write_atomic(path, &serialize_message(&fo))?;
    }
    Ok(text)
}

fn load_pool(paths: &[PathBuf]) -> Outcome<Vec<FlexOffer>> {
    paths.iter().map(|p| load_fo(p)).collect()
}

fn run_aggregate(inputs: &[PathBuf], out: &Path) -> Outcome<String> {
    let pool = load_pool(inputs)?;
    let binding = aggregate(&pool).map_err(engine)?;
    write_atomic(out, &serialize_message(&binding.aggregate_fo))?;
    Ok(summary(&binding))
}

fn summary(b: &AggregateBinding) -> String {
    let mut s = format!(
        "{} {} with {} slices from {} members\n",
        b.aggregate_fo.kind(),
        b.aggregate_fo.id,
        b.aggregate_fo.len(),
        b.members.len()
    );
    for m in &b.members {
        let _ = writeln!(s, "  {} at offset {}", m.id, m.offset);
    }
    s
}

fn load_schedule(path: &Path) -> Outcome<Schedule> {
    let bytes = read(path)?;
    let bad = |e: anyhow::Error| fail(EXIT_VALIDATION, e.context(path.display().to_string()));
    let v: Value = serde_json::from_slice(&bytes).map_err(|e| bad(e.into()))?;
    if v.get(ROOT_KEY).is_some() {
        let fo = parse_value(&v).map_err(|e| bad(e.into()))?;
        return fo
            .flexoffer_schedule
            .ok_or_else(|| bad(anyhow!("message carries no flexOfferSchedule")));
    }
    let node = v.get("flexOfferSchedule").unwrap_or(&v);
    parse_schedule(node, ScheduleKind::FlexOfferSchedule).map_err(|e| bad(e.into()))
}

fn run_disaggregate(agg: &Path, schedule: &Path, members: &[PathBuf]) -> Outcome<String> {
    let stored = load_fo(agg)?;
    let schedule = load_schedule(schedule)?;
    let pool = load_pool(members)?;
    let binding = aggregate(&pool).map_err(engine)?;
    // The members must rebuild the aggregate they are split from.
    let rebuilt = parse_message(&serialize_message(&binding.aggregate_fo)).map_err(|e| fail(EXIT_VALIDATION, e))?;
    if rebuilt.profile != stored.profile
        || rebuilt.total_energy != stored.total_energy
        || rebuilt.start_after_time != stored.start_after_time
    {
        return Err(fail(
            EXIT_VALIDATION,
            anyhow!("the members do not aggregate to {}", agg.display()),
        ));
    }
    let parts = disaggregate(&binding, &schedule).map_err(engine)?;
    let mut out = String::from("member,offset,slice,energy_kwh\n");
    for ((id, s), m) in parts.iter().zip(&binding.members) {
        for (k, e) in s.unit_energies().iter().enumerate() {
            let _ = writeln!(out, "{id},{},{},{}", m.offset, k + 1, num(*e));
        }
    }
    Ok(out)
}

fn run_thresh(input: &Path, p0: f64) -> Outcome<String> {
    let fo = load_fo(input)?;
    let fns = fo
        .uncertain
        .as_ref()
        .ok_or_else(|| fail(EXIT_VALIDATION, anyhow!("{} is not an uncertain offer", fo.id)))?;
    let mut out = String::new();
    for (t, f) in fns.iter().enumerate() {
        let ivs = f.threshold_intervals(p0).map_err(|e| fail(EXIT_VALIDATION, e))?;
        let text: Vec<String> = ivs
            .iter()
            .map(|b| format!("[{}, {}]", num(b.lower), num(b.upper)))
            .collect();
        let body = if text.is_empty() { "empty".to_string() } else { text.join(" ") };
        let _ = writeln!(out, "slice {}: {body}", t + 1);
    }
    Ok(out)
}

fn run_gen(model: &Path, kind: FoKind, out: &Path) -> Outcome<String> {
    let m = load_model(model)?;
    let fo = generate_fo(&m, kind).map_err(engine)?;
    write_atomic(out, &serialize_message(&fo))?;
    Ok(format!("{} {} with {} slices\n", fo.kind(), fo.id, fo.len()))
}

fn run_metric(model: &Path, prices: &Path, temp_step: f64, energy_step: f64) -> Outcome<String> {
    let m = load_model(model)?;
    let prices = load_prices(prices)?;
    let oracle = HeatPumpOracle {
        model: m.clone(),
        temp_step,
        energy_step,
    };
    let (_, reports) = evaluate_heatpump(&m, &oracle, &prices).map_err(engine)?;
    let mut out = String::from("model_kind,baseline_cost,optimized_cost,profit,retained\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.model_kind,
            num(r.baseline_cost),
            num(r.optimized_cost),
            num(r.profit),
            r.retained.map(num).unwrap_or_default()
        );
    }
    Ok(out)
}

fn literature() -> String {
    let mut out = String::from("# literature reference values from other experiments; not reproduced by this tool\n");
    out.push_str("device,model_kind,retained\n");
    for (device, kind, r) in LITERATURE_RETENTION {
        let _ = writeln!(out, "{device},{kind},{}", num(r));
    }
    out
}

fn run_simulate(
    n: usize,
    prices: &Path,
    policy: Policy,
    model: Option<&Path>,
    log: Option<&Path>,
) -> Outcome<String> {
    let m = match model {
        Some(p) => load_model(p)?,
        None => HeatPumpModel::default(),
    };
    let prices = load_prices(prices)?;
    let rooms = vec![m; n];
    let result = run_exchange(&rooms, &prices, policy).map_err(engine)?;
    if let Some(path) = log {
        write_atomic(path, result.to_json_lines().as_bytes())?;
    }
    let mut out = String::from("id,state,total_energy_kwh\n");
    for fo in &result.offers {
        let total = fo
            .flexoffer_schedule
            .as_ref()
            .map(|s| num(s.total_energy()))
            .unwrap_or_default();
        let _ = writeln!(out, "{},{},{total}", fo.id, fo.state);
    }
    Ok(out)
}

fn run_plot(input: &Path, out: &Path) -> Outcome<String> {
    let fo = load_fo(input)?;
    let schedule = fo.flexoffer_schedule.as_ref().or(fo.default_schedule.as_ref());
    let energies = schedule.map(Schedule::unit_energies);
    let mut csv = String::from("slice,lower,upper,schedule\n");
    for t in 0..fo.len() {
        let range = fo.slice_energy_range(t);
        let e = energies.as_ref().and_then(|e| e.get(t)).map(|v| num(*v)).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{e}",
            t + 1,
            range.map(|r| num(r.lower)).unwrap_or_default(),
            range.map(|r| num(r.upper)).unwrap_or_default()
        );
    }
    write_atomic(out, csv.as_bytes())?;
    Ok(format!("wrote {} slices to {}\n", fo.len(), out.display()))
}

fn run(cli: Cli) -> Outcome<String> {
    match cli.command {
        Command::Validate { input } => validate(&input),
        Command::Optimize { input, prices, p0, out } => run_optimize(&input, &prices, p0, out.as_deref()),
        Command::Aggregate { inputs, out } => run_aggregate(&inputs, &out),
        Command::Disaggregate { agg, schedule, members } => run_disaggregate(&agg, &schedule, &members),
        Command::Thresh { input, p0 } => run_thresh(&input, p0),
        Command::Gen { model, kind, out } => run_gen(&model, kind.into(), &out),
        Command::Metric { literature: true, .. } => Ok(literature()),
        Command::Metric {
            model,
            prices,
            temp_step,
            energy_step,
            ..
        } => {
            let (model, prices) = model.zip(prices).context("--model and --prices are required").map_err(|e| fail(EXIT_VALIDATION, e))?;
            run_metric(&model, &prices, temp_step, energy_step)
        }
        Command::ExportRdf { input, out, p0 } => {
            let fo = load_fo(&input)?;
            write_atomic(&out, fo_to_turtle_with(&fo, p0).as_bytes())?;
            Ok(format!("wrote {}\n", out.display()))
        }
        Command::Coverage { input } => Ok(saref_coverage(&load_fo(&input)?).to_string()),
        Command::Simulate {
            n,
            prices,
            policy,
            model,
            log,
        } => run_simulate(n, &prices, policy, model.as_deref(), log.as_deref()),
        Command::Plot { input, out } => run_plot(&input, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
