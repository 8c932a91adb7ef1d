use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bamlab::approx::{
    best_deterministic, corollary_alpha, default_msm, example1_bam, example1_instance, example1_revenue, exact_totals,
    msm_bam, revenue_upper_bound, three_approx, ApproxReport,
};
use bamlab::bam_engine::BankAccountMechanism;
use bamlab::dp_fptas::{backward_dp, extract_mechanism};
use bamlab::model::{DirectMechanism, HistoryTree, Instance};
use bamlab::verify::{bruteforce_opt, check_ic, check_ir, monte_carlo, node_cap, IrMode, DEFAULT_TOL};
use bamlab::BamError;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bamlab", version, about = "Bank account mechanisms for multi-stage revenue maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximately optimal mechanism via the promised-utility dynamic program.
    Solve {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        /// Where to write the extracted mechanism; inlined in the report if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and evaluate an approximation mechanism.
    Approx {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        mech: MechName,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Monte Carlo samples for continuous instances.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stage-wise IC and ex-post IR check of a tabular mechanism.
    Check {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        mechanism: PathBuf,
    },
    /// Revenue upper bound `Rev(M^SM) + E[Σ s*]`.
    Bound {
        #[arg(long)]
        instance: PathBuf,
    },
    /// Optimal revenue by the brute-force linear program.
    Oracle {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo estimate of a BAM's revenue and utility.
    Simulate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_enum)]
        mech: MechName,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// The two-stage equal-revenue example: quadrature, simulation and the cap of 2.
    Example1 {
        #[arg(long)]
        vmax: f64,
        #[arg(long, default_value_t = 1_000_000)]
        samples: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MechName {
    ThreeApprox,
    BestSigma,
    Msm,
    AlphaMix,
}

enum Failure {
    Usage(String),
    Verification(Value),
}

impl From<BamError> for Failure {
    fn from(e: BamError) -> Self {
        Failure::Usage(e.to_string())
    }
}

type CmdResult = Result<Vec<Value>, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_instance(path: &Path) -> Result<Instance, Failure> {
    Ok(Instance::from_json(&read(path)?)?)
}

fn check_samples(samples: u64) -> Result<(), Failure> {
    if samples == 0 {
        return Err(Failure::Usage("--samples must be at least 1".into()));
    }
    Ok(())
}

fn mechanism_json(mech: &DirectMechanism, inst: &Instance) -> Result<Value, Failure> {
    let tree = HistoryTree::new(inst)?;
    Ok(serde_json::to_value(mech.to_file(&tree)).expect("mechanism serializes"))
}

fn cmd_solve(instance: &Path, epsilon: f64, out: Option<&Path>) -> CmdResult {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Failure::Usage(format!("--epsilon must lie in (0, 1), got {epsilon}")));
    }
    let inst = load_instance(instance)?;
    let policy = backward_dp(&inst, epsilon)?;
    let mech = extract_mechanism(&policy, &inst)?;
    let mut rec = json!({
        "command": "solve",
        "value_lower": policy.value_lower,
        "value_upper": policy.value_upper,
        "epsilon": epsilon,
        "xi_star": policy.xi_star,
        "per_stage_breakpoint_counts": policy.per_stage_breakpoint_counts(),
        "lp_count": policy.lp_count,
    });
    match out {
        Some(p) => {
            write(p, &mech.to_json(&inst)?)?;
            rec["mechanism_path"] = json!(p.display().to_string());
        }
        None => rec["mechanism"] = mechanism_json(&mech, &inst)?,
    }
    Ok(vec![rec])
}

fn build_bam(inst: &Instance, name: MechName, alpha: f64) -> Result<(String, Box<dyn BankAccountMechanism>), Failure> {
    Ok(match name {
        MechName::ThreeApprox => ("three-approx".into(), Box::new(three_approx(inst, None)?)),
        MechName::Msm => ("msm".into(), Box::new(msm_bam(inst, None)?)),
        MechName::AlphaMix => (format!("alpha-mix({alpha})"), Box::new(corollary_alpha(inst, &default_msm(inst)?, alpha)?)),
        MechName::BestSigma => {
            let best = best_deterministic(inst, None, alpha)?;
            (best.mech.name(), Box::new(best.mech))
        }
    })
}

fn cmd_approx(instance: &Path, name: MechName, alpha: f64, samples: u64, seed: u64) -> CmdResult {
    let inst = load_instance(instance)?;
    if !inst.is_discrete() {
        check_samples(samples)?;
        if matches!(name, MechName::BestSigma) {
            inst.require_discrete()?;
        }
        let (label, bam) = build_bam(&inst, name, alpha)?;
        let mc = monte_carlo(bam.as_ref(), &inst, samples, seed)?;
        return Ok(vec![json!({
            "mechanism_name": label,
            "exact_revenue": null,
            "monte_carlo_revenue": mc.revenue_mean,
            "stderr": mc.stderr,
            "upper_bound": null,
            "ratio_vs_bound": null,
            "ratio_vs_bruteforce": null,
        })]);
    }
    let (label, bam) = build_bam(&inst, name, alpha)?;
    let revenue = exact_totals(bam.as_ref(), &inst)?.revenue;
    let bound = revenue_upper_bound(&inst, None)?.total;
    let opt = match bruteforce_opt(&inst) {
        Ok(b) => Some(b.revenue),
        Err(BamError::InstanceTooLarge { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let report = ApproxReport::new(&label, revenue, bound, opt);
    Ok(vec![serde_json::to_value(report).expect("report serializes")])
}

fn cmd_check(instance: &Path, mechanism: &Path) -> CmdResult {
    let inst = load_instance(instance)?;
    let mech = DirectMechanism::from_json(&read(mechanism)?, &inst)?;
    let mut rep = check_ic(&mech, &inst, DEFAULT_TOL)?;
    rep.merge(check_ir(&mech, &inst, IrMode::ExPost, DEFAULT_TOL)?);
    let value = serde_json::to_value(&rep).expect("report serializes");
    if rep.passed() {
        Ok(vec![value])
    } else {
        Err(Failure::Verification(value))
    }
}

fn cmd_bound(instance: &Path) -> CmdResult {
    let inst = load_instance(instance)?;
    let ub = revenue_upper_bound(&inst, None)?;
    Ok(vec![serde_json::to_value(ub).expect("bound serializes")])
}

fn cmd_oracle(instance: &Path, out: Option<&Path>) -> CmdResult {
    let inst = load_instance(instance)?;
    let b = bruteforce_opt(&inst)?;
    let tree = HistoryTree::new(&inst)?;
    let mut rec = json!({
        "command": "oracle",
        "revenue": b.revenue,
        "nodes": tree.num_nodes(),
        "node_cap": node_cap(),
    });
    if let Some(p) = out {
        write(p, &b.mech.to_json(&inst)?)?;
        rec["mechanism_path"] = json!(p.display().to_string());
    }
    Ok(vec![rec])
}

fn cmd_simulate(instance: &Path, name: MechName, alpha: f64, samples: u64, seed: u64) -> CmdResult {
    check_samples(samples)?;
    let inst = load_instance(instance)?;
    let (label, bam) = build_bam(&inst, name, alpha)?;
    let mc = monte_carlo(bam.as_ref(), &inst, samples, seed)?;
    Ok(vec![json!({
        "mechanism_name": label,
        "samples": samples,
        "seed": seed,
        "revenue_mean": mc.revenue_mean,
        "utility_mean": mc.utility_mean,
        "stderr": mc.stderr,
    })])
}

fn cmd_example1(v_max: f64, samples: u64, seed: u64) -> CmdResult {
    check_samples(samples)?;
    let quad = example1_revenue(v_max, true)?;
    let mc = monte_carlo(&example1_bam(v_max)?, &example1_instance(v_max)?, samples, seed)?;
    Ok(vec![json!({
        "command": "example1",
        "v_max": v_max,
        "quadrature_revenue": quad,
        "monte_carlo_revenue": mc.revenue_mean,
        "stderr": mc.stderr,
        "history_independent_cap": 2.0,
        "ln_ln_reference": 2.0 + v_max.ln().ln(),
    })])
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Solve { instance, epsilon, out } => cmd_solve(&instance, epsilon, out.as_deref()),
        Command::Approx { instance, mech, alpha, samples, seed } => cmd_approx(&instance, mech, alpha, samples, seed),
        Command::Check { instance, mechanism } => cmd_check(&instance, &mechanism),
        Command::Bound { instance } => cmd_bound(&instance),
        Command::Oracle { instance, out } => cmd_oracle(&instance, out.as_deref()),
        Command::Simulate { instance, mech, alpha, samples, seed } => cmd_simulate(&instance, mech, alpha, samples, seed),
        Command::Example1 { vmax, samples, seed } => cmd_example1(vmax, samples, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(Failure::Verification(v)) => {
            println!("{v}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("{}", json!({ "error": msg }));
            ExitCode::from(2)
        }
    }
}
