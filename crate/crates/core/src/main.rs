//! Command-line interface for the collocation harness.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use radau_hp::harness::{
    emit_report, interp_error_experiment, parse_index_list, render_csv, render_json, run_h_sweep,
    run_p_sweep, RateReport, ReportFormat, SweepOptions, TestFunction,
};
use radau_hp::ocp::builtin_problem;
use radau_hp::radau::{scheme, scheme_property_report};
use radau_hp::transcription::{assumption_diagnostics, HpMesh};

#[derive(Parser)]
#[command(
    name = "radau-hp",
    about = "hp Radau collocation for constrained optimal control: convergence sweeps, \
             norm tables, interpolation experiments and assumption diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Composite KKT residual target.
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Exit 0 even when some sweep samples did not converge.
    #[arg(long)]
    allow_partial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Norm diagnostics of the inverse differentiation matrices, one
    /// row per degree.
    Tables {
        /// Degrees, e.g. `25,50,...,300` or `1..100`.
        #[arg(long = "n-list")]
        n_list: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mesh-refinement sweep at fixed degree.
    SweepH {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        degree: usize,
        /// Interval counts, e.g. `4,8,16,32,64`.
        #[arg(long = "k-list")]
        k_list: String,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Degree sweep on a fixed mesh.
    SweepP {
        #[arg(long)]
        problem: String,
        /// Mesh breakpoints, e.g. `0,0.25,0.75,1`; defaults to a single
        /// interval spanning the horizon.
        #[arg(long)]
        mesh: Option<String>,
        /// Degrees, e.g. `4..24`.
        #[arg(long = "n-list")]
        n_list: String,
        #[command(flatten)]
        solve: SolveArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Interpolation-error experiment on [-1, 1].
    Interp {
        #[arg(long = "n-list")]
        n_list: String,
        /// `exp`, `poly`, or `sobolev:ETA`.
        #[arg(long)]
        function: String,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Stability and convexity constants along the reference solution.
    Diagnose {
        #[arg(long)]
        problem: String,
        /// Number of uniform mesh intervals.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 4)]
        degree: usize,
    },
}

fn write_output(text: &str, out: &Option<PathBuf>) -> radau_hp::Result<()> {
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)?;
            file.write_all(text.as_bytes())?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn emit(report: &RateReport, output: &OutputArgs) -> radau_hp::Result<()> {
    match &output.out {
        Some(path) => emit_report(report, output.format.into(), path),
        None => {
            let text = match output.format {
                Format::Csv => render_csv(report),
                Format::Json => render_json(report)?,
            };
            print!("{text}");
            Ok(())
        }
    }
}

fn sweep_exit(report: &RateReport, allow_partial: bool) -> ExitCode {
    if report.samples.iter().all(|s| s.converged) || allow_partial {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run() -> radau_hp::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Tables { n_list, output } => {
            let degrees = parse_index_list(&n_list)?;
            let mut reports = Vec::with_capacity(degrees.len());
            for n in degrees {
                reports.push(scheme_property_report(scheme(n)?.as_ref()));
            }
            let text = match output.format {
                Format::Csv => {
                    let mut text =
                        String::from("n,p1_norm,p2_max_row_norm,p3_norm,p4_max_row_norm\n");
                    for r in &reports {
                        text.push_str(&format!(
                            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                            r.degree, r.p1_norm, r.p2_max_row_norm, r.p3_norm, r.p4_max_row_norm
                        ));
                    }
                    text
                }
                Format::Json => serde_json::to_string_pretty(&reports)?,
            };
            write_output(&text, &output.out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SweepH {
            problem,
            degree,
            k_list,
            solve,
            output,
        } => {
            let (prob, reference) = builtin_problem(&problem)?;
            let ks = parse_index_list(&k_list)?;
            let opts = SweepOptions {
                tol: solve.tol,
                max_iter: solve.max_iter,
                ..Default::default()
            };
            let mut report = run_h_sweep(&prob, &reference, degree, &ks, &opts)?;
            report.problem = Some(problem);
            emit(&report, &output)?;
            Ok(sweep_exit(&report, solve.allow_partial))
        }
        Command::SweepP {
            problem,
            mesh,
            n_list,
            solve,
            output,
        } => {
            let (prob, reference) = builtin_problem(&problem)?;
            let breakpoints = match mesh {
                Some(text) => text
                    .split(',')
                    .map(|t| {
                        t.trim().parse::<f64>().map_err(|_| {
                            radau_hp::Error::InvalidArgument(format!("bad breakpoint `{t}`"))
                        })
                    })
                    .collect::<radau_hp::Result<Vec<f64>>>()?,
                None => vec![prob.horizon.0, prob.horizon.1],
            };
            let ns = parse_index_list(&n_list)?;
            let opts = SweepOptions {
                tol: solve.tol,
                max_iter: solve.max_iter,
                ..Default::default()
            };
            let mut report = run_p_sweep(&prob, &reference, &breakpoints, &ns, &opts)?;
            report.problem = Some(problem);
            emit(&report, &output)?;
            Ok(sweep_exit(&report, solve.allow_partial))
        }
        Command::Interp {
            n_list,
            function,
            output,
        } => {
            let ns = parse_index_list(&n_list)?;
            let func = TestFunction::parse(&function)?;
            let report = interp_error_experiment(&ns, &func)?;
            emit(&report, &output)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose { problem, k, degree } => {
            let (prob, reference) = builtin_problem(&problem)?;
            let mesh = HpMesh::uniform(prob.horizon, k, degree)?;
            let report = assumption_diagnostics(&prob, &reference, &mesh);
            let h = (0..k).map(|j| mesh.half_width(j)).fold(0.0, f64::max);
            println!("problem:          {problem}");
            println!("intervals:        {k} (h = {h:.6e})");
            println!("d1:               {:.6e}", report.d1);
            println!("d2:               {:.6e}", report.d2);
            println!("2*h*max(d1,d2):   {:.6e}", 2.0 * h * report.d1.max(report.d2));
            println!("a2_ok:            {}", report.a2_ok);
            println!("min_hessian_eig:  {:.6e}", report.min_hessian_eig);
            if !report.a2_ok {
                println!("note: 2*h*d >= 1; increase the interval count for the stability regime");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("radau-hp: {err}");
            ExitCode::FAILURE
        }
    }
}
