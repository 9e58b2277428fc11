use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use heatsource::assembly::SpaceTimeField;
use heatsource::experiments::{
    probe_line, probe_time_series, probe_trajectory, run_level, run_scenario, BoundaryObservation, EocTable, LevelOutcome,
};
use heatsource::inverse::Tikhonov;
use heatsource::mesh::{Axis, Mesh};
use heatsource::pde::{ParabolicProblem, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_config, ConfigError, ExperimentSpec};
use crate::report::{emit_report, read_table_csv, Format, Manifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_CHECK: i32 = 4;

#[derive(Parser)]
#[command(name = "heatsource", version, about = "Heat source identification from boundary observations", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single inverse solve at one mesh size.
    Solve(SolveArgs),
    /// Refinement study over several levels with EOC table.
    Scenario(ScenarioArgs),
    /// Recompute the EOC table from a table.csv.
    Eoc(EocArgs),
    /// Compare the adjoint gradient with central finite differences.
    GradientCheck(GradientArgs),
    /// Extract a time series or spatial slice from a single solve.
    Probe(ProbeArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Built-in scenario: time_dependent[/smooth|hat|step], space_dependent, general, source_condition.
    name: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// Nominal mesh size; defaults to the config's `h` or its finest level.
    #[arg(long)]
    h: Option<f64>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    output: OutputArgs,
    /// `N` for levels 1..=N, `a..b`, or a comma list.
    #[arg(long)]
    levels: Option<String>,
}

#[derive(Args)]
struct EocArgs {
    table: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradientArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long, default_value_t = 1.5)]
    h: f64,
    #[arg(long = "M", default_value_t = 4)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    directions: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Slice {
    T,
    X,
    Y,
}

#[derive(Clone, Copy, ValueEnum)]
enum Field {
    Source,
    State,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long)]
    h: Option<f64>,
    /// Probe location `x,y`; the closest node is used.
    #[arg(long, value_parser = parse_point, conflicts_with = "node", allow_hyphen_values = true)]
    point: Option<[f64; 2]>,
    #[arg(long)]
    node: Option<usize>,
    #[arg(long, value_enum, default_value_t = Slice::T)]
    slice: Slice,
    /// Time of a spatial slice.
    #[arg(long, default_value_t = 0.5)]
    time: f64,
    #[arg(long, value_enum, default_value_t = Field::Source)]
    field: Field,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected x,y")?;
    Ok([a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?])
}

enum Failure {
    Config(String),
    Solver(String),
    Io(String),
    Check(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<heatsource::Error> for Failure {
    fn from(e: heatsource::Error) -> Self {
        match e {
            heatsource::Error::Io(e) => Failure::Io(e.to_string()),
            heatsource::Error::Csv(e) => Failure::Io(e.to_string()),
            e => Failure::Solver(e.to_string()),
        }
    }
}

impl From<crate::report::ReportError> for Failure {
    fn from(e: crate::report::ReportError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Scenario(a) => scenario(a),
        Command::Eoc(a) => eoc(a),
        Command::GradientCheck(a) => gradient_check(a),
        Command::Probe(a) => probe(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            EXIT_SOLVER
        }
        Err(Failure::Io(m)) => {
            eprintln!("i/o error: {m}");
            EXIT_IO
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            EXIT_CHECK
        }
    }
}

fn load_spec(args: &SpecArgs) -> Result<ExperimentSpec, Failure> {
    let mut spec = match (&args.name, &args.config) {
        (Some(_), Some(_)) => return Err(Failure::Config("give either a scenario name or --config, not both".into())),
        (Some(name), None) => ExperimentSpec::builtin(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            parse_config(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(Failure::Config("a scenario name or --config is required".into())),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        spec.numerics.jobs = jobs;
    }
    Ok(spec)
}

fn parse_levels(s: &str) -> Result<Vec<usize>, Failure> {
    let bad = || Failure::Config(format!("--levels {s:?}: expected N, a..b or a comma list"));
    let levels: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else if s.contains(',') {
        s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    } else {
        let n: usize = s.trim().parse().map_err(|_| bad())?;
        (1..=n).collect()
    };
    if levels.is_empty() || levels.contains(&0) || levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(bad());
    }
    Ok(levels)
}

fn print_table(table: &EocTable) -> Outcome {
    let stdout = io::stdout();
    table.write_table_csv(stdout.lock())?;
    if table.rows.len() > 1 {
        table.write_eoc_csv(stdout.lock())?;
    }
    Ok(())
}

fn scenario(args: ScenarioArgs) -> Outcome {
    let start = Instant::now();
    let mut spec = load_spec(&args.spec)?;
    if let Some(l) = &args.levels {
        spec.numerics.levels = parse_levels(l)?;
    }
    let sc = spec.scenario();
    let run = run_scenario(&sc, &spec.numerics.levels, spec.numerics.jobs)?;

    let mut manifest = Manifest::new("scenario", &spec, args.output.format);
    for (&level, o) in spec.numerics.levels.iter().zip(&run.outcomes) {
        let params = sc.level_params(level)?;
        manifest.push_level(params, sc.seed.wrapping_add(level as u64), o.as_ref().map_err(|e| e.to_string()));
    }
    print_table(&run.table)?;
    let ok: Vec<&LevelOutcome> = run.outcomes.iter().flatten().collect();
    if let Some(dir) = args.output.out.or(spec.output.clone()) {
        emit_report(&dir, &run.table, &ok, manifest, start.elapsed())?;
        eprintln!("wrote {}", dir.display());
    }
    if let Some(e) = run.outcomes.iter().find_map(|o| o.as_ref().err()) {
        return Err(Failure::Solver(format!("{} of {} levels failed; first: {e}", run.outcomes.len() - ok.len(), run.outcomes.len())));
    }
    Ok(())
}

fn single_level(spec: &ExperimentSpec, h: Option<f64>) -> Result<LevelOutcome, Failure> {
    let sc = spec.scenario();
    let params = match h.or(spec.numerics.h) {
        Some(h) => sc.params_for_h(h)?,
        None => sc.level_params(*spec.numerics.levels.last().expect("nonempty levels"))?,
    };
    Ok(run_level(&sc, params)?)
}

fn write_source_csv(path: &Path, o: &LevelOutcome) -> Outcome {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["slab", "t0", "t1", "node", "x", "y", "exact", "prior", "recovered"]).map_err(heatsource::Error::from)?;
    let g = o.f_exact.grid;
    for k in 0..g.steps {
        for (i, p) in o.mesh.nodes().iter().enumerate() {
            w.write_record([
                (k + 1).to_string(),
                format!("{:.16e}", g.level(k)),
                format!("{:.16e}", g.level(k + 1)),
                i.to_string(),
                format!("{:.16e}", p[0]),
                format!("{:.16e}", p[1]),
                format!("{:.16e}", o.f_exact.slabs[k][i]),
                format!("{:.16e}", o.f_star.slabs[k][i]),
                format!("{:.16e}", o.report.minimizer.slabs[k][i]),
            ])
            .map_err(heatsource::Error::from)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn solve(args: SolveArgs) -> Outcome {
    let start = Instant::now();
    let spec = load_spec(&args.spec)?;
    let o = single_level(&spec, args.h)?;
    let table = EocTable::from_rows(vec![heatsource::experiments::EocRow {
        level: o.params.level,
        h: o.params.h,
        delta: o.params.delta,
        rho: o.params.rho,
        errors: Some(o.errors),
        iterations: Some(o.report.iterations),
        failure: None,
    }]);
    print_table(&table)?;
    eprintln!(
        "{} iterations ({:?}), |grad J| = {:.3e}, threshold {:.3e}",
        o.report.iterations,
        o.report.stop,
        o.report.final_grad_norm(),
        o.report.threshold
    );
    if let Some(dir) = args.output.out.or(spec.output.clone()) {
        let mut manifest = Manifest::new("solve", &spec, args.output.format);
        manifest.push_level(o.params, o.seed, Ok(&o));
        std::fs::create_dir_all(&dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        write_source_csv(&dir.join("source.csv"), &o)?;
        o.u_exact.write_csv(BufWriter::new(File::create(dir.join("state_exact.csv"))?))?;
        o.report.state.write_csv(BufWriter::new(File::create(dir.join("state_recovered.csv"))?))?;
        let mut m = emit_report(&dir, &table, &[&o], manifest, start.elapsed())?;
        // record the extra files too
        m.files.extend(["source.csv", "state_exact.csv", "state_recovered.csv"].map(String::from));
        let out = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(out), &m).map_err(|e| Failure::Io(e.to_string()))?;
        eprintln!("wrote {}", dir.display());
    }
    Ok(())
}

fn eoc(args: EocArgs) -> Outcome {
    let table = read_table_csv(&args.table)?;
    if table.rows.len() < 2 {
        return Err(Failure::Config(format!("{}: need at least two rows", args.table.display())));
    }
    match args.out {
        Some(path) => table.write_eoc_csv(BufWriter::new(File::create(&path)?))?,
        None => table.write_eoc_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn gradient_check(args: GradientArgs) -> Outcome {
    let mut spec_args = args.spec;
    if spec_args.name.is_none() && spec_args.config.is_none() {
        spec_args.name = Some("source_condition".into());
    }
    let spec = load_spec(&spec_args)?;
    if !(args.h > 0.0) || args.steps == 0 || args.directions == 0 || !(args.eps > 0.0) {
        return Err(Failure::Config("--h, --M, --directions and --eps must be positive".into()));
    }
    let sc = spec.scenario();
    let diag = (sc.bounds.x1 - sc.bounds.x0).hypot(sc.bounds.y1 - sc.bounds.y0);
    let cells = ((diag / args.h) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let mesh = Mesh::rectangle(sc.bounds, cells)?.tag_boundary(&sc.observation)?;
    let pde = ParabolicProblem::new(Arc::new(mesh), TimeGrid::new(sc.final_time, args.steps)?, &sc.coeffs)?;
    let (grid, n) = (pde.grid(), pde.num_nodes());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut field = |lo: f64| {
        let slabs = (0..grid.steps).map(|_| (0..n).map(|_| rng.gen_range(lo..1.0)).collect()).collect();
        SpaceTimeField::from_slabs(grid, slabs).expect("consistent shape")
    };
    let data = BoundaryObservation { values: field(0.0).slabs, delta: 0.0, seed: spec.seed };
    let f_star = field(-1.0);
    let f = field(-1.0);
    let directions: Vec<SpaceTimeField> = (0..args.directions).map(|_| field(-1.0)).collect();

    let rho = sc.coupling.rho_factor * args.h;
    let j = Tikhonov::new(&pde, &data, rho, &f_star);
    let g = j.gradient(&f)?;
    let mut worst: f64 = 0.0;
    for (k, d) in directions.iter().enumerate() {
        let mut plus = f.clone();
        plus.add_scaled(args.eps, d);
        let mut minus = f.clone();
        minus.add_scaled(-args.eps, d);
        let fd = (j.cost(&plus)? - j.cost(&minus)?) / (2.0 * args.eps);
        let adj = g.inner(pde.mass(), d);
        let rel = (fd - adj).abs() / adj.abs().max(f64::MIN_POSITIVE);
        println!("direction {k}: adjoint {adj:+.12e} finite difference {fd:+.12e} relative error {rel:.3e}");
        worst = worst.max(rel);
    }
    println!("nodes {n}, steps {}, max relative error {worst:.3e}", grid.steps);
    if worst <= args.tolerance {
        Ok(())
    } else {
        Err(Failure::Check(format!("max relative error {worst:.3e} exceeds {:.1e}", args.tolerance)))
    }
}

fn probe(args: ProbeArgs) -> Outcome {
    let spec = load_spec(&args.spec)?;
    let o = single_level(&spec, args.h)?;
    let node = match (args.node, args.point) {
        (Some(i), _) => i,
        (None, Some(p)) => o.mesh.closest_node(p),
        (None, None) => o.mesh.closest_node(heatsource::experiments::PROBE_P1),
    };
    let grid = o.f_exact.grid;
    if !(0.0..=grid.final_time).contains(&args.time) {
        return Err(Failure::Config(format!("--time {} outside [0, {}]", args.time, grid.final_time)));
    }
    let (exact, recovered) = match (args.field, args.slice) {
        (Field::Source, Slice::T) => (probe_time_series(&o.f_exact, node)?, probe_time_series(&o.report.minimizer, node)?),
        (Field::State, Slice::T) => (probe_trajectory(&o.u_exact, node)?, probe_trajectory(&o.report.state, node)?),
        (field, slice) => {
            let axis = if matches!(slice, Slice::X) { Axis::X } else { Axis::Y };
            let (a, b) = match field {
                Field::Source => {
                    let k = grid.slab_of(args.time.max(f64::MIN_POSITIVE)) - 1;
                    (&o.f_exact.slabs[k], &o.report.minimizer.slabs[k])
                }
                Field::State => {
                    let n = (args.time / grid.tau()).round() as usize;
                    (&o.u_exact.states[n], &o.report.state.states[n])
                }
            };
            (probe_line(&o.mesh, a, node, axis)?, probe_line(&o.mesh, b, node, axis)?)
        }
    };
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let p = o.mesh.nodes()[node];
    eprintln!("node {node} at ({}, {})", p[0], p[1]);
    w.write_record(["coordinate", "exact", "recovered"]).map_err(heatsource::Error::from)?;
    for ((c, e), (_, r)) in exact.into_iter().zip(recovered) {
        w.write_record([format!("{c:.16e}"), format!("{e:.16e}"), format!("{r:.16e}")]).map_err(heatsource::Error::from)?;
    }
    w.flush()?;
    Ok(())
}
