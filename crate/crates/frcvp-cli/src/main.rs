//! Batch entry point: generate instances, inspect the discretization,
//! build and export linear models, and run the embedded solvers and
//! approximation algorithms, emitting CSV result rows.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use frcvp::approx::{
    greedy_iterative, greedy_two_bucket, lp_round, ptas, PtasParams, Regularity, UniformBuckets,
};
use frcvp::looped::{heuristic_single_copy, loop_break};
use frcvp::milp::{build_ct, build_gva, build_lp_relax, build_twof, build_va, export_lp};
use frcvp::model::{build_route_graph, GraphShape, Instance};
use frcvp::objective::{decode_schedule, Schedule};
use frcvp::solvers::{branch_and_bound, exact_enumerate};
use frcvp::timewin::{adaptive_discretize, compute_rtws, pseudo_platoon_graph, BucketSet};
use frcvp::instgen::{gen_instance, gen_time_windows, GenParams};

const EXIT_USAGE: i32 = 1;
const EXIT_INVALID: i32 = 2;
const EXIT_BUDGET: i32 = 3;

#[derive(Parser)]
#[command(name = "frcvp", about = "Fixed-route coordinated platooning scheduler", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance file.
    Generate(GenerateArgs),
    /// Solve an instance with one of the embedded methods.
    Solve(SolveArgs),
    /// Build a formulation and write it as LP-format text.
    Export(ExportArgs),
    /// Re-draw departure windows over a range of extension ratios and solve
    /// each draw, reporting objective and bucket-count statistics.
    Sweep(SweepArgs),
    /// Write the adaptive time buckets of an instance as JSON.
    Discretize(DiscretizeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of network edges to grow.
    #[arg(long, default_value_t = 100)]
    edges: usize,
    /// Number of vehicles to route.
    #[arg(long, default_value_t = 100)]
    vehicles: usize,
    #[arg(long, default_value_t = 50.0)]
    gamma_full: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma_ext: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Platoon capacity; omit for unbounded platoons.
    #[arg(long)]
    lambda: Option<u32>,
    #[arg(long, default_value_t = 0.05)]
    sigma_l: f64,
    #[arg(long, default_value_t = 0.1)]
    sigma_f: f64,
    /// Output instance path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// exact | bnb | greedy | greedy2 | ptas | lp-round | heuristic-loop
    #[arg(long)]
    method: String,
    #[arg(long, default_value_t = 60.0)]
    budget_sec: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Uniform bucket count for greedy2/ptas.
    #[arg(long, default_value_t = 4)]
    t_buckets: usize,
    /// Rounding repetitions for lp-round.
    #[arg(long, default_value_t = 50)]
    reps: usize,
    /// Lattice quantum for loop handling.
    #[arg(long, default_value_t = 1.0)]
    quantum: f64,
    /// Contraction threshold for ptas.
    #[arg(long, default_value_t = 8)]
    n0: usize,
    /// Sub-tree size threshold for ptas.
    #[arg(long, default_value_t = 6)]
    n1: usize,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    /// Supply the three regularity constants to arm the ptas guarantee:
    /// cost ratio, route length bound, degree bound.
    #[arg(long, num_args = 3, value_names = ["RHO", "L", "D"])]
    regularity: Option<Vec<f64>>,
    /// Output prefix; writes {out}.csv and {out}_schedule.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    instance: PathBuf,
    /// va | twof | ct | gva | lp
    #[arg(long)]
    formulation: String,
    #[arg(long, default_value_t = 1.0)]
    quantum: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the variable/constraint counts as JSON.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Comma-separated extension ratios (idle slack over horizon).
    #[arg(long)]
    ratios: String,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "greedy")]
    method: String,
    #[arg(long, default_value_t = 50.0)]
    gamma_full: f64,
    #[arg(long, default_value_t = 60.0)]
    budget_sec: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiscretizeArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(EXIT_USAGE);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Solve(args) => solve(args),
        Command::Export(args) => export(args),
        Command::Sweep(args) => sweep(args),
        Command::Discretize(args) => discretize(args),
    }
}

fn load_instance(path: &Path) -> anyhow::Result<Instance> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Instance::from_json(&text).context("instance file is invalid")
}

fn tree_buckets(instance: &Instance) -> anyhow::Result<BucketSet> {
    let graph = build_route_graph(instance)?;
    if graph.shape == GraphShape::Loopy {
        bail!("route graph has loops; use heuristic-loop or the gva export");
    }
    let rtws = compute_rtws(instance, &graph)?;
    Ok(adaptive_discretize(&rtws)?)
}

fn generate(args: GenerateArgs) -> anyhow::Result<i32> {
    let params = GenParams {
        edge_count: args.edges,
        vehicle_count: args.vehicles,
        gamma_full: args.gamma_full,
        gamma_ext: args.gamma_ext,
        seed: args.seed,
        lambda: args.lambda,
        sigma_l: args.sigma_l,
        sigma_f: args.sigma_f,
    };
    let instance = gen_instance(&params)?;
    std::fs::write(&args.out, instance.to_json()?)?;
    let graph = build_route_graph(&instance)?;
    println!(
        "wrote {}: {} vehicles, {} union edges, shape {:?}",
        args.out.display(),
        instance.vehicles.len(),
        graph.edges.len(),
        graph.shape
    );
    Ok(0)
}

struct RunResult {
    objective: f64,
    bound: Option<f64>,
    gap: Option<f64>,
    schedule: Option<Schedule>,
    budget_exhausted: bool,
}

fn solve(args: SolveArgs) -> anyhow::Result<i32> {
    let instance = load_instance(&args.instance)?;
    let budget = Duration::from_secs_f64(args.budget_sec.max(0.0));
    let start = Instant::now();
    let result = solve_per_component(&instance, &args, budget)?;
    let wall = start.elapsed();

    let instance_id = args
        .instance
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "instance".into());
    let status = if result.budget_exhausted { "budget-exceeded" } else { "ok" };
    let row = format!(
        "{},{},{:.9},{},{},{:.3},{},{}\n",
        instance_id,
        args.method,
        result.objective,
        result.bound.map(|b| format!("{b:.9}")).unwrap_or_default(),
        result.gap.map(|g| format!("{g:.9}")).unwrap_or_default(),
        wall.as_secs_f64(),
        args.seed,
        status
    );
    let header = "instance,method,objective,bound,gap,wall_sec,seed,status\n";
    match &args.out {
        Some(prefix) => {
            let csv = prefix.with_extension("csv");
            let existing = std::fs::read_to_string(&csv).unwrap_or_default();
            let mut text = if existing.is_empty() { header.to_string() } else { existing };
            text.push_str(&row);
            std::fs::write(&csv, text)?;
            if let Some(schedule) = &result.schedule {
                let path = prefix.with_file_name(format!(
                    "{}_schedule.json",
                    prefix.file_name().unwrap_or_default().to_string_lossy()
                ));
                std::fs::write(&path, serde_json::to_string_pretty(&schedule.departure)?)?;
            }
        }
        None => {
            print!("{header}{row}");
        }
    }
    Ok(if result.budget_exhausted { EXIT_BUDGET } else { 0 })
}

/// A forest splits into independent single-tree sub-instances which are
/// solved separately; objectives add up and the schedules merge.
fn solve_per_component(
    instance: &Instance,
    args: &SolveArgs,
    budget: Duration,
) -> anyhow::Result<RunResult> {
    let parts = frcvp::model::split_components(instance)?;
    if parts.len() == 1 {
        return run_method(instance, args, budget);
    }
    let mut total = RunResult {
        objective: 0.0,
        bound: Some(0.0),
        gap: Some(0.0),
        schedule: Some(Schedule { departure: Default::default() }),
        budget_exhausted: false,
    };
    for part in &parts {
        let r = run_method(part, args, budget)?;
        total.objective += r.objective;
        total.bound = match (total.bound, r.bound) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        total.gap = match (total.gap, r.gap) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        match (&mut total.schedule, r.schedule) {
            (Some(all), Some(part)) => all.departure.extend(part.departure),
            (slot, _) => *slot = None,
        }
        total.budget_exhausted |= r.budget_exhausted;
    }
    Ok(total)
}

fn run_method(
    instance: &Instance,
    args: &SolveArgs,
    budget: Duration,
) -> anyhow::Result<RunResult> {
    let simple = |objective: f64, schedule: Option<Schedule>| RunResult {
        objective,
        bound: None,
        gap: None,
        schedule,
        budget_exhausted: false,
    };
    match args.method.as_str() {
        "exact" => {
            let buckets = tree_buckets(instance)?;
            let (value, assignment) = exact_enumerate(instance, &buckets, None)?;
            let schedule = decode_schedule(instance, &buckets, &assignment)?;
            Ok(RunResult {
                objective: value,
                bound: Some(value),
                gap: Some(0.0),
                schedule: Some(schedule),
                budget_exhausted: false,
            })
        }
        "bnb" => {
            let buckets = tree_buckets(instance)?;
            let model = build_va(instance, &buckets)?;
            let out = branch_and_bound(&model, budget)?;
            let assignment = out
                .assignment(&model)
                .ok_or_else(|| anyhow!("search returned no incumbent"))?;
            let schedule = decode_schedule(instance, &buckets, &assignment)?;
            Ok(RunResult {
                objective: out.objective.unwrap_or(0.0),
                bound: Some(out.best_bound),
                gap: Some(out.gap()),
                schedule: Some(schedule),
                budget_exhausted: out.budget_exhausted,
            })
        }
        "greedy" => {
            let buckets = tree_buckets(instance)?;
            let (value, assignment) = greedy_iterative(instance, &buckets)?;
            let schedule = decode_schedule(instance, &buckets, &assignment)?;
            Ok(simple(value, Some(schedule)))
        }
        "greedy2" => {
            let graph = build_route_graph(instance)?;
            let rtws = compute_rtws(instance, &graph)?;
            let uniform = UniformBuckets::from_rtws(&rtws, args.t_buckets)?;
            let (value, _assignment) = greedy_two_bucket(instance, &uniform)?;
            Ok(simple(value, None))
        }
        "ptas" => {
            let graph = build_route_graph(instance)?;
            let rtws = compute_rtws(instance, &graph)?;
            let uniform = UniformBuckets::from_rtws(&rtws, args.t_buckets)?;
            let regularity = args.regularity.as_ref().map(|r| Regularity {
                cost_ratio: r[0],
                max_route_len: r[1] as usize,
                max_degree: r[2] as usize,
            });
            let params = PtasParams {
                n0: args.n0,
                n1: args.n1,
                eps: args.eps,
                regularity,
                enum_limit: 1 << 22,
            };
            let out = ptas(instance, &uniform, &params)?;
            println!("guarantee: {}", out.guarantee);
            Ok(simple(out.value, None))
        }
        "lp-round" => {
            let buckets = tree_buckets(instance)?;
            let (value, assignment) = lp_round(instance, &buckets, args.reps, args.seed)?;
            let schedule = decode_schedule(instance, &buckets, &assignment)?;
            Ok(simple(value, Some(schedule)))
        }
        "heuristic-loop" => {
            let (value, schedule) = heuristic_single_copy(instance, budget)?;
            Ok(simple(value, Some(schedule)))
        }
        other => bail!("unknown method {other}"),
    }
}

fn export(args: ExportArgs) -> anyhow::Result<i32> {
    let instance = load_instance(&args.instance)?;
    let graph = build_route_graph(&instance)?;
    let model = match args.formulation.as_str() {
        "va" => build_va(&instance, &tree_buckets(&instance)?)?,
        "twof" => {
            let rtws = compute_rtws(&instance, &graph)?;
            build_twof(&instance, &pseudo_platoon_graph(&rtws))?
        }
        "ct" => build_ct(&instance)?,
        "lp" => build_lp_relax(&instance, &tree_buckets(&instance)?)?,
        "gva" => {
            if graph.shape != GraphShape::Loopy {
                println!("route graph has no loops; exporting the plain assignment model");
                build_va(&instance, &tree_buckets(&instance)?)?
            } else {
                let lb = loop_break(&instance, args.quantum, None)?;
                build_gva(&lb)?
            }
        }
        other => bail!("unknown formulation {other}"),
    };
    std::fs::write(&args.out, export_lp(&model))?;
    let stats = model.stats();
    if let Some(path) = &args.stats_out {
        std::fs::write(path, serde_json::to_string_pretty(&stats)?)?;
    }
    println!(
        "wrote {}: {} variables ({} binary, {} integer, {} continuous), {} constraints",
        args.out.display(),
        stats.vars(),
        stats.binary,
        stats.integer,
        stats.continuous,
        stats.constraints
    );
    Ok(0)
}

fn sweep(args: SweepArgs) -> anyhow::Result<i32> {
    let base = load_instance(&args.instance)?;
    let ratios: Vec<f64> = args
        .ratios
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad ratio {s}: {e}")))
        .collect::<anyhow::Result<_>>()?;
    if ratios.is_empty() || args.trials == 0 {
        bail!("need at least one ratio and one trial");
    }
    let budget = Duration::from_secs_f64(args.budget_sec.max(0.0));

    let mut csv = String::from("ratio,mean_objective,std_objective,mean_buckets,std_buckets,trials\n");
    for (ri, &ratio) in ratios.iter().enumerate() {
        let gamma_ext = ratio * args.gamma_full;
        let mut objectives = Vec::with_capacity(args.trials);
        let mut bucket_counts = Vec::with_capacity(args.trials);
        for trial in 0..args.trials {
            let seed = args
                .seed
                .wrapping_add(1_000_003u64.wrapping_mul(ri as u64))
                .wrapping_add(trial as u64);
            let mut drawn = base.clone();
            drawn.vehicles =
                gen_time_windows(&base.network, &base.vehicles, args.gamma_full, gamma_ext, seed);
            let buckets = tree_buckets(&drawn)?;
            bucket_counts.push(buckets.len() as f64);
            let solve_args = SolveArgs {
                instance: args.instance.clone(),
                method: args.method.clone(),
                budget_sec: args.budget_sec,
                seed,
                t_buckets: 4,
                reps: 50,
                quantum: 1.0,
                n0: 8,
                n1: 6,
                eps: 0.5,
                regularity: None,
                out: None,
            };
            let result = run_method(&drawn, &solve_args, budget)?;
            objectives.push(result.objective);
        }
        let (mean_obj, std_obj) = mean_std(&objectives);
        let (mean_b, std_b) = mean_std(&bucket_counts);
        csv.push_str(&format!(
            "{ratio},{mean_obj:.9},{std_obj:.9},{mean_b:.3},{std_b:.3},{}\n",
            args.trials
        ));
    }
    std::fs::write(&args.out, csv)?;
    println!("wrote {}", args.out.display());
    Ok(0)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn discretize(args: DiscretizeArgs) -> anyhow::Result<i32> {
    let instance = load_instance(&args.instance)?;
    let buckets = tree_buckets(&instance)?;
    let text = buckets.to_json()?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("wrote {} ({} buckets)", path.display(), buckets.len());
        }
        None => println!("{text}"),
    }
    Ok(0)
}
