use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use singlq::analyzer::{analyze, simulate, synthesize, verify_optimal_cost, Analysis, Synthesis, Verdict};
use singlq::matlib::{Matrix, Subspace, Tolerances, Vector};
use singlq::model::Problem;

use crate::document::{
    read_document, row_major, Bases, CostEntry, Dimensions, ProblemDocument, RdeSection, RdeSettings, ReportDocument,
    ToleranceSettings, VerdictSection,
};
use crate::generate::{documents, Family, InstanceClass};
use crate::{CliError, EXIT_INPUT, EXIT_OK, EXIT_UNDECIDED};

#[derive(Debug, Parser)]
#[command(name = "singlq", version, about = "Existence of regular optimal controls for singular LQ problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the four existence conditions and report.
    Analyze(AnalyzeArgs),
    /// Simulate the optimal closed loop (or a given feedback).
    Simulate(SimulateArgs),
    /// Write random problem instances.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct NumericFlags {
    /// Relative singular value cutoff for rank decisions.
    #[arg(long = "rank-tol")]
    pub rank_tol: Option<f64>,
    /// Scaled residual accepted for a Riccati solution.
    #[arg(long = "residual-tol")]
    pub residual_tol: Option<f64>,
    /// Derivative size at which the Riccati flow counts as settled.
    #[arg(long = "conv-tol")]
    pub conv_tol: Option<f64>,
    /// Integration horizon for the Riccati flow.
    #[arg(long = "max-time")]
    pub max_time: Option<f64>,
}

impl NumericFlags {
    fn tolerances(&self) -> ToleranceSettings {
        ToleranceSettings {
            rank_tol: self.rank_tol,
            residual_tol: self.residual_tol,
            psd_tol: None,
        }
    }

    fn rde(&self) -> RdeSettings {
        RdeSettings {
            step: None,
            max_time: self.max_time,
            conv_tol: self.conv_tol,
            div_bound: None,
            rtol: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Problem file.
    pub file: Option<PathBuf>,
    /// Machine-readable report (a directory with --batch).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Include orthonormal bases of the subspaces.
    #[arg(long)]
    pub bases: bool,
    /// Analyze every .json file in a directory.
    #[arg(long)]
    pub batch: Option<PathBuf>,
    #[command(flatten)]
    pub numeric: NumericFlags,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub file: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub x0: Vec<f64>,
    /// Simulation horizon.
    #[arg(long = "T")]
    pub horizon: f64,
    /// Sampling step (default T/1000).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Row-major feedback gain K (m×n) to use instead of the optimal one.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub gain: Option<Vec<f64>>,
    /// Trajectory file (default standard output).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub numeric: NumericFlags,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub m: usize,
    /// quadruple, regular, cheap or hurwitz.
    #[arg(long)]
    pub class: String,
    /// Number of instances.
    #[arg(long)]
    pub count: usize,
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    /// Shift A to be Hurwitz for any class.
    #[arg(long)]
    pub stable: bool,
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => cmd_analyze(a, out, err),
        Command::Simulate(s) => cmd_simulate(s, out),
        Command::Generate(g) => cmd_generate(g, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INPUT
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn basis_row_major(s: &Subspace) -> Vec<f64> {
    row_major(s.basis())
}

/// Analyzes one document and assembles the report.
pub fn analyze_document(
    doc: &ProblemDocument,
    numeric: &NumericFlags,
    with_bases: bool,
) -> Result<(ReportDocument, Analysis), CliError> {
    let tol = doc.tolerances(&numeric.tolerances())?;
    let opts = doc.rde_options(&numeric.rde())?;
    let problem = doc.problem(&tol)?;
    let analysis = analyze(&problem, &opts, &tol)?;
    let report = build_report(doc, &problem, &analysis, &tol, with_bases)?;
    Ok((report, analysis))
}

fn build_report(
    doc: &ProblemDocument,
    p: &Problem,
    analysis: &Analysis,
    tol: &Tolerances,
    with_bases: bool,
) -> Result<ReportDocument, CliError> {
    let v = &analysis.verdicts;
    let geo = &analysis.condition_d.geometry;
    let rde = &analysis.condition_b.rde;
    let mut diagnostics = v.notes.clone();
    let synthesis = match analysis.x_bar() {
        Some(x) => Some(synthesize(p, x, tol)?),
        None => None,
    };
    let mut costs = Vec::new();
    for x0 in &doc.x0 {
        if x0.len() != p.n() {
            return Err(CliError::Document(format!(
                "field x0: entry of length {} for n = {}",
                x0.len(),
                p.n()
            )));
        }
        let Some(syn) = &synthesis else {
            diagnostics.push("x0 costs skipped: no optimal feedback certified".into());
            break;
        };
        let check = verify_optimal_cost(p, syn, &Vector::from_column_slice(x0))?;
        costs.push(CostEntry {
            x0: x0.clone(),
            predicted: check.predicted,
            simulated: check.simulated,
            relative_error: check.relative_error,
            horizon: check.horizon,
            verdict: check.verdict.to_string(),
        });
    }
    Ok(ReportDocument {
        name: doc.name.clone(),
        n: p.n(),
        m: p.m(),
        verdicts: VerdictSection {
            a: v.a.to_string(),
            b: v.b.to_string(),
            c: v.c.to_string(),
            d: v.d.to_string(),
            finiteness: v.finiteness.to_string(),
            finiteness_fragile: v.finiteness_fragile,
            sstar_eq_rstar: v.sstar_eq_rstar,
            consistency_ok: v.consistency_ok,
        },
        dimensions: Dimensions {
            vstar: geo.vstar.dim(),
            sstar: geo.sstar.dim(),
            rstar: geo.rstar.dim(),
            reachable: geo.reachable.dim(),
            xstab: geo.xstab.dim(),
        },
        rde: RdeSection {
            status: format!("{:?}", rde.status),
            final_time: rde.final_time,
            final_trace: rde.final_state.trace(),
            diagnostic: rde.diagnostic.clone(),
        },
        x_bar: analysis.x_bar().map(row_major),
        k: synthesis.as_ref().map(|s| row_major(&s.k)),
        bases: with_bases.then(|| Bases {
            vstar: basis_row_major(&geo.vstar),
            sstar: basis_row_major(&geo.sstar),
            rstar: basis_row_major(&geo.rstar),
            reachable: basis_row_major(&geo.reachable),
            xstab: basis_row_major(&geo.xstab),
        }),
        costs,
        diagnostics,
    })
}

fn format_matrix(data: &[f64], rows: usize, cols: usize) -> String {
    let mut s = String::new();
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| format!("{:>14.8}", data[i * cols + j])).collect();
        let _ = writeln!(s, "    [{} ]", row.join(""));
    }
    s
}

/// Human-readable rendering of a report.
pub fn human_report(r: &ReportDocument) -> String {
    let v = &r.verdicts;
    let d = &r.dimensions;
    let mut s = String::new();
    let _ = writeln!(s, "problem {} (n = {}, m = {})", r.name, r.n, r.m);
    for (k, val) in [("A", &v.a), ("B", &v.b), ("C", &v.c), ("D", &v.d)] {
        let _ = writeln!(s, "  condition {k}: {val}");
    }
    let _ = writeln!(
        s,
        "  finiteness: {}{}",
        v.finiteness,
        if v.finiteness_fragile { " (fragile)" } else { "" }
    );
    let _ = writeln!(s, "  S* = R*: {}", if v.sstar_eq_rstar { "yes" } else { "no" });
    let _ = writeln!(
        s,
        "  dim V* = {}, dim S* = {}, dim R* = {}, dim reachable = {}, dim X_stab = {}",
        d.vstar, d.sstar, d.rstar, d.reachable, d.xstab
    );
    let _ = writeln!(
        s,
        "  Riccati flow: {} at t = {} (trace {:.6e})",
        r.rde.status, r.rde.final_time, r.rde.final_trace
    );
    if let Some(x) = &r.x_bar {
        let _ = write!(s, "  X_bar =\n{}", format_matrix(x, r.n, r.n));
    }
    if let Some(k) = &r.k {
        let _ = write!(s, "  K =\n{}", format_matrix(k, r.m, r.n));
    }
    for c in &r.costs {
        let _ = writeln!(
            s,
            "  x0 = {:?}: predicted {:.10e}, simulated {:.10e}, relative error {:.3e} ({})",
            c.x0, c.predicted, c.simulated, c.relative_error, c.verdict
        );
    }
    let _ = writeln!(s, "  consistency: {}", if v.consistency_ok { "ok" } else { "VIOLATED" });
    for n in &r.diagnostics {
        let _ = writeln!(s, "  note: {n}");
    }
    s
}

fn undecided(report: &ReportDocument) -> bool {
    let v = &report.verdicts;
    [&v.a, &v.b, &v.c, &v.d].iter().any(|x| x.as_str() == Verdict::Undecided.as_str())
}

fn analyze_path(path: &Path, numeric: &NumericFlags, bases: bool) -> Result<ReportDocument, CliError> {
    let doc = read_document(path)?;
    analyze_document(&doc, numeric, bases).map(|(r, _)| r)
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match (&args.file, &args.batch) {
        (Some(file), None) => {
            let report = analyze_path(file, &args.numeric, args.bases)?;
            write!(out, "{}", human_report(&report)).map_err(|e| CliError::Io(e.to_string()))?;
            if let Some(path) = &args.out {
                std::fs::write(path, report.to_json()).map_err(|e| io_err(path, e))?;
            }
            Ok(if undecided(&report) { EXIT_UNDECIDED } else { EXIT_OK })
        }
        (None, Some(dir)) => cmd_batch(dir, args, out, err),
        _ => Err(CliError::Usage("give either a problem file or --batch <dir>".into())),
    }
}

fn cmd_batch(dir: &Path, args: &AnalyzeArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if let Some(o) = &args.out {
        std::fs::create_dir_all(o).map_err(|e| io_err(o, e))?;
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(files.len().max(1));
    let mut results: Vec<Option<Result<ReportDocument, CliError>>> = (0..files.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<_> = results
            .chunks_mut(files.len().div_ceil(workers).max(1))
            .zip(files.chunks(files.len().div_ceil(workers).max(1)))
            .map(|(slots, paths)| {
                scope.spawn(move || {
                    for (slot, path) in slots.iter_mut().zip(paths) {
                        *slot = Some(analyze_path(path, &args.numeric, args.bases));
                    }
                })
            })
            .collect();
        for c in chunks {
            c.join().expect("analysis worker panicked");
        }
    });
    let mut code = EXIT_OK;
    for (path, res) in files.iter().zip(results) {
        match res.expect("every file analyzed") {
            Ok(report) => {
                write!(out, "{}", human_report(&report)).map_err(|e| CliError::Io(e.to_string()))?;
                if let Some(o) = &args.out {
                    let stem = path.file_stem().map_or("report".into(), |s| s.to_string_lossy().into_owned());
                    let target = o.join(format!("{stem}.report.json"));
                    std::fs::write(&target, report.to_json()).map_err(|e| io_err(&target, e))?;
                }
                if undecided(&report) && code == EXIT_OK {
                    code = EXIT_UNDECIDED;
                }
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                code = EXIT_INPUT;
            }
        }
    }
    Ok(code)
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let doc = read_document(&args.file)?;
    let tol = doc.tolerances(&args.numeric.tolerances())?;
    let opts = doc.rde_options(&args.numeric.rde())?;
    let p = doc.problem(&tol)?;
    let (n, m) = (p.n(), p.m());
    if args.x0.len() != n {
        return Err(CliError::Usage(format!("--x0 has {} entries, expected {n}", args.x0.len())));
    }
    let x0 = Vector::from_column_slice(&args.x0);
    let dt = args.dt.unwrap_or(args.horizon / 1000.0);
    let (syn, certified): (Synthesis, bool) = match &args.gain {
        Some(k) => {
            if k.len() != m * n {
                return Err(CliError::Usage(format!("--gain has {} entries, expected {m}×{n}", k.len())));
            }
            (Synthesis::from_gain(&p, Matrix::from_row_slice(m, n, k))?, false)
        }
        None => {
            let analysis = analyze(&p, &opts, &tol)?;
            match analysis.x_bar() {
                Some(x) => (synthesize(&p, x, &tol)?, true),
                None => {
                    return Err(CliError::Uncertified(format!(
                        "condition B {}: no regular optimal control certified (pass --gain to simulate a chosen feedback)",
                        analysis.verdicts.b
                    )))
                }
            }
        }
    };
    let traj = simulate(&p, &syn, &x0, None, args.horizon, dt)?;
    let mut text = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..m).map(|i| format!("u{i}")));
    header.push("J".into());
    let _ = writeln!(text, "{}", header.join("\t"));
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = vec![format!("{t:.16e}")];
        row.extend(traj.states.row(k).iter().map(|v| format!("{v:.16e}")));
        row.extend(traj.inputs.row(k).iter().map(|v| format!("{v:.16e}")));
        row.push(format!("{:.16e}", traj.running_cost[k]));
        let _ = writeln!(text, "{}", row.join("\t"));
    }
    if certified {
        let predicted = (x0.transpose() * &syn.x_bar * &x0)[(0, 0)];
        let rel = (traj.final_cost() - predicted).abs() / (1.0 + predicted.abs());
        let _ = writeln!(text, "# x0'X_bar x0 = {predicted:.16e}\trelative_error = {rel:.3e}");
    } else {
        let _ = writeln!(text, "# feedback from --gain; optimal cost not certified");
    }
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_err(path, e))?,
        None => out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))?,
    }
    Ok(EXIT_OK)
}

pub fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let class: InstanceClass = args.class.parse()?;
    let mut fam = Family::new(args.seed, class, args.n, args.m);
    if args.stable {
        fam = fam.stable();
    }
    crate::generate::check_dims(args.n, args.m)?;
    let docs = documents(&fam, args.count)?;
    if docs.is_empty() {
        warn!("count 0: nothing generated");
        return Ok(EXIT_OK);
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;
    for doc in docs {
        let path = args.out_dir.join(format!("{}.json", doc.name));
        std::fs::write(&path, doc.to_json()).map_err(|e| io_err(&path, e))?;
        writeln!(out, "{}", path.display()).map_err(|e| CliError::Io(e.to_string()))?;
    }
    Ok(EXIT_OK)
}
