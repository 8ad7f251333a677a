use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use ppls_defense::output::{self, OutputMeta, Panel};
use ppls_defense::pipeline::{analyze, prepare};
use ppls_defense::scenario::Scenario;
use ppls_defense::sim::Strategy;
use ppls_defense::worst_case::BoundaryMode;
use ppls_defense::{Error, Result};

#[derive(Parser)]
#[command(name = "ppls-defense", version, about = "Cross-layered DoS defense for periodic piecewise linear systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundaryArg {
    PaperTable,
    Formula,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Cross,
    A,
    B,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario (`paper_example`).
    scenario: String,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the attack-trace seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the safe-state boundary rule of the scenario.
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    /// Defense strategy for `simulate`.
    #[arg(long, value_enum, default_value = "cross")]
    strategy: StrategyArg,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise Lyapunov matrices and default gains from the scenario's rates.
    Design(Common),
    /// Rate tables, worst-case rates per mode and the stability certificate.
    Analyze(Common),
    /// Closed-loop run of one strategy on the scenario's attack trace.
    Simulate(Common),
    /// All three strategies on one shared trace.
    Compare(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation { .. } | Error::Parse(_) | Error::InvalidInput(_) | Error::Dimension(_) | Error::Io(_) => 2,
        Error::Infeasible(_) => 3,
        Error::Solver(_) | Error::Conditioning { .. } => 4,
    }
}

fn hint(e: &Error) -> Option<&'static str> {
    match e {
        Error::Infeasible(_) => Some("raise the design rates alpha_i or lengthen the dwell-times"),
        Error::Solver(_) | Error::Conditioning { .. } => Some("rescale the system matrices or relax the design rates"),
        _ => None,
    }
}

struct Ctx {
    scenario: Scenario,
    out: PathBuf,
    seed: u64,
    boundary: BoundaryMode,
    strategy: Strategy,
}

impl Ctx {
    fn new(c: &Common) -> Result<Self> {
        let scenario = Scenario::resolve(&c.scenario)?;
        let seed = c.seed.unwrap_or(scenario.attack.trace.seed);
        let boundary = match c.boundary {
            Some(BoundaryArg::PaperTable) => BoundaryMode::PaperTable,
            Some(BoundaryArg::Formula) => BoundaryMode::Formula,
            None => scenario.options.boundary,
        };
        let strategy = match c.strategy {
            StrategyArg::Cross => Strategy::Cross,
            StrategyArg::A => Strategy::A,
            StrategyArg::B => Strategy::B,
        };
        Ok(Ctx {
            scenario,
            out: c.out.clone(),
            seed,
            boundary,
            strategy,
        })
    }

    fn save(&self, name: &str, content: &str) -> Result<()> {
        let path = output::write(&self.out, name, content)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn save_json(&self, name: &str, v: &serde_json::Value) -> Result<()> {
        let text = serde_json::to_string_pretty(v).map_err(|e| Error::Solver(e.to_string()))?;
        self.save(name, &(text + "\n"))
    }
}

fn cmd_design(ctx: &Ctx) -> Result<()> {
    let prep = prepare(&ctx.scenario, true)?;
    let meta = OutputMeta::new("design", &prep, ctx.seed, ctx.boundary, None);
    print!("{}", prep.report);
    ctx.save_json("design.json", &output::design_json(&meta, &prep.design, &prep))
}

fn cmd_analyze(ctx: &Ctx) -> Result<()> {
    let prep = prepare(&ctx.scenario, false)?;
    let solver = prep.solver()?;
    let analysis = analyze(&prep, &solver, ctx.boundary)?;
    let meta = OutputMeta::new("analyze", &prep, ctx.seed, ctx.boundary, None);
    print!("{}", output::analysis_summary(&analysis, &prep));
    ctx.save("beta_table.csv", &output::beta_table_csv(&meta, &analysis))?;
    ctx.save_json("analysis.json", &output::analysis_json(&meta, &analysis, &prep))
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let prep = prepare(&ctx.scenario, false)?;
    let solver = prep.solver()?;
    let trace = prep.trace(ctx.seed)?;
    let r = prep.simulate(&solver, &trace, ctx.strategy)?;
    let meta = OutputMeta::new("simulate", &prep, ctx.seed, ctx.boundary, Some(ctx.strategy.name()));
    let m = &r.metrics;
    println!(
        "{}: peak {:.4}, oscillation {:.4}, final {:.3e}, contract violations {}",
        ctx.strategy.name(),
        m.peak_ratio,
        m.oscillation,
        m.final_ratio,
        m.contract_violations
    );
    ctx.save("trajectory.csv", &output::trajectory_csv(&meta, &r))?;
    ctx.save("decisions.csv", &output::decisions_csv(&meta, &r))?;
    ctx.save("metrics.csv", &output::metrics_csv(&meta, &[&r]))?;
    let norm = Panel {
        title: "state norm".into(),
        series: vec![(ctx.strategy.name().into(), output::norm_series(&r))],
        log_y: true,
    };
    ctx.save("norm.svg", &output::svg_plot(&meta, &[norm]))?;
    let cfg = ctx.scenario.network();
    ctx.save("bandwidth.svg", &output::svg_plot(&meta, &output::bandwidth_panels(&r, &cfg.normal_flow)))
}

fn cmd_compare(ctx: &Ctx) -> Result<()> {
    let prep = prepare(&ctx.scenario, false)?;
    let solver = prep.solver()?;
    let trace = prep.trace(ctx.seed)?;
    let cmp = prep.compare(&solver, &trace)?;
    let meta = OutputMeta::new("compare", &prep, ctx.seed, ctx.boundary, Some("cross,a,b"));
    println!("{:<8} {:>10} {:>12} {:>10}", "strategy", "peak", "oscillation", "settling");
    for r in &cmp.results {
        let m = &r.metrics;
        let settle = m.settling_index.map_or("-".to_string(), |k| k.to_string());
        println!("{:<8} {:>10.4} {:>12.4} {:>10}", r.strategy.name(), m.peak_ratio, m.oscillation, settle);
    }
    let violations = cmp.dominance.iter().filter(|r| !r.holds(1e-6)).count();
    println!("per-step dominance violations: {violations} of {}", cmp.dominance.len());
    let refs: Vec<_> = cmp.results.iter().collect();
    ctx.save("metrics.csv", &output::metrics_csv(&meta, &refs))?;
    ctx.save("dominance.csv", &output::dominance_csv(&meta, &cmp.dominance))?;
    for r in &cmp.results {
        ctx.save(&format!("trajectory_{}.csv", r.strategy.name()), &output::trajectory_csv(&meta, r))?;
        ctx.save(&format!("decisions_{}.csv", r.strategy.name()), &output::decisions_csv(&meta, r))?;
    }
    let norm = Panel {
        title: "state norm".into(),
        series: cmp.results.iter().map(|r| (r.strategy.name().to_string(), output::norm_series(r))).collect(),
        log_y: true,
    };
    ctx.save("compare.svg", &output::svg_plot(&meta, &[norm]))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, run): (&Common, fn(&Ctx) -> Result<()>) = match &cli.command {
        Command::Design(c) => (c, cmd_design),
        Command::Analyze(c) => (c, cmd_analyze),
        Command::Simulate(c) => (c, cmd_simulate),
        Command::Compare(c) => (c, cmd_compare),
    };
    match Ctx::new(common).and_then(|ctx| run(&ctx)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = hint(&e) {
                eprintln!("hint: {h}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
