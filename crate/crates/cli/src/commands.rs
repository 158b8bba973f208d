//! Subcommand runners. Each one writes its artifacts and `manifest.json`
//! under the output directory before reporting failures, so partial results
//! are always inspectable.

use std::path::PathBuf;

use drgp::linalg::linspace01;
use drgp::model::{marginal_variances, mean_path};
use drgp::solver::{DeterminantReport, TruncationReport};
use drgp::{
    correlation_from_covariance, determinant_diagnostic, field_second_moments, invertibility_guard,
    marginal_intervals, posterior_coefficient_gaussian, prior_coefficient_gaussian, sample_paths,
    table1_columns, truncation_convergence, CoefficientGaussian, DMatrix, EquilibriumResult,
    JointGaussian, Problem, ProblemSpec, SolverConfig, StopReason,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{csv_columns, csv_grid_matrix, csv_table, fmt_f64, OutputDir};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub trace: bool,
}

/// Everything reported about one solved instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveSummary {
    pub nominal_value: f64,
    pub worst_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub det_k: f64,
    pub distance_sq: f64,
    pub invertible: bool,
    pub foerstner_nominal: f64,
    pub foerstner_worst: f64,
}

/// A solved instance together with its summary.
pub struct Solved {
    pub problem: Problem,
    pub result: EquilibriumResult,
    pub summary: SolveSummary,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    seed: u64,
    config: String,
    #[serde(flatten)]
    body: T,
}

fn effective(cfg: &ExperimentConfig, opts: &RunOptions) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if opts.trace {
        cfg.record_trace = true;
    }
    cfg
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Builds and solves one instance.
pub fn solve_spec(spec: &ProblemSpec, solver: &SolverConfig) -> Result<Solved, CliError> {
    let problem = spec.build().map_err(CliError::from_build)?;
    let nominal_value = problem.nominal_value().map_err(CliError::from_solve)?;
    let foerstner_nominal = problem.nominal_distance().map_err(CliError::from_solve)?;
    let result = problem.solve(solver).map_err(CliError::from_solve)?;
    let foerstner_worst = problem
        .distance_under(&result.sigma_star)
        .map_err(CliError::from_solve)?;
    let summary = SolveSummary {
        nominal_value,
        worst_value: result.value,
        gap: result.gap,
        iterations: result.iterations,
        stop_reason: result.stop_reason,
        det_k: result.det_k,
        distance_sq: result.distance_sq,
        invertible: invertibility_guard(result.sigma_star.matrix(), &problem.map, None),
        foerstner_nominal,
        foerstner_worst,
    };
    Ok(Solved {
        problem,
        result,
        summary,
    })
}

fn solve_config(cfg: &ExperimentConfig) -> Result<Solved, CliError> {
    cfg.validate()?;
    solve_spec(&cfg.problem_spec()?, &cfg.solver_config()?)
}

fn write_trace(out: &mut OutputDir, name: &str, result: &EquilibriumResult) -> Result<(), CliError> {
    if let Some(trace) = &result.trace {
        let header = ["iteration", "value", "gap", "step"].map(String::from);
        let rows: Vec<Vec<String>> = trace
            .iter()
            .map(|t| {
                vec![
                    t.iteration.to_string(),
                    fmt_f64(t.value),
                    fmt_f64(t.gap),
                    fmt_f64(t.step),
                ]
            })
            .collect();
        out.write(name, "trace", &csv_table(&header, &rows))?;
    }
    Ok(())
}

fn gain_csv(phi: &DMatrix<f64>) -> String {
    let mut header = vec!["mode".to_string()];
    header.extend((1..=phi.ncols()).map(|j| format!("y{j}")));
    let rows: Vec<Vec<String>> = (0..phi.nrows())
        .map(|i| {
            let mut row = vec![(i + 1).to_string()];
            row.extend(phi.row(i).iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    csv_table(&header, &rows)
}

/// `solve`: one equilibrium, its summary and both estimator gains.
pub fn run_solve(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SolveSummary, CliError> {
    let cfg = effective(cfg, opts);
    let solved = solve_config(&cfg)?;
    let mut out = OutputDir::create(&opts.out)?;
    write_solve(&mut out, &cfg, "solve", &solved)?;
    out.finish("solve")?;
    Ok(solved.summary)
}

fn write_solve(out: &mut OutputDir, cfg: &ExperimentConfig, command: &str, solved: &Solved) -> Result<(), CliError> {
    out.write_json(
        "summary.json",
        "summary",
        &Envelope {
            command,
            seed: cfg.seed,
            config: cfg.to_text(),
            body: &solved.summary,
        },
    )?;
    let nominal = solved.problem.nominal_estimator().map_err(CliError::from_solve)?;
    out.write("estimator_nominal.csv", "estimator", &gain_csv(nominal.gain()))?;
    out.write("estimator_worst.csv", "estimator", &gain_csv(solved.result.estimator.gain()))?;
    write_trace(out, "trace.csv", &solved.result)
}

/// Per-measure figure statistics reported in the summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureSummary {
    pub name: String,
    pub mean_marginal_variance: f64,
    pub max_marginal_variance: f64,
}

#[derive(Serialize)]
struct FiguresBody<'a> {
    solve: &'a SolveSummary,
    grid_points: usize,
    observations: Vec<f64>,
    measures: Vec<MeasureSummary>,
}

/// `figures`: the solve artifacts plus correlation surfaces, pointwise 95%
/// bands and seeded sample paths for the nominal and worst-case prior and
/// posterior of the estimand.
pub fn run_figures(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<MeasureSummary>, CliError> {
    let cfg = effective(cfg, opts);
    cfg.validate()?;
    let y = cfg.observation_vector()?;
    let solved = solve_config(&cfg)?;
    let problem = &solved.problem;
    let grid = linspace01(cfg.grid_points);
    let interior = &grid[1..grid.len() - 1];

    let measures: [(&str, &JointGaussian, bool); 4] = [
        ("nominal_prior", &problem.sigma0, false),
        ("nominal_posterior", &problem.sigma0, true),
        ("worst_prior", &solved.result.sigma_star, false),
        ("worst_posterior", &solved.result.sigma_star, true),
    ];
    let mut out = OutputDir::create(&opts.out)?;
    let mut stats = Vec::new();
    for (k, (name, sigma, posterior)) in measures.iter().enumerate() {
        let g: CoefficientGaussian = if *posterior {
            posterior_coefficient_gaussian(sigma, &problem.map, &y)
        } else {
            prior_coefficient_gaussian(sigma, &problem.map)
        }
        .map_err(CliError::from_solve)?;

        let second = field_second_moments(&g.cov, &problem.basis, interior).map_err(CliError::from_solve)?;
        let corr = correlation_from_covariance(&second).map_err(CliError::from_solve)?;
        out.write(&format!("correlation_{name}.csv"), "correlation", &csv_grid_matrix(interior, &corr))?;

        let mean = mean_path(&g, &problem.basis, &grid).map_err(CliError::from_solve)?;
        let (lower, upper) = marginal_intervals(&g, &problem.basis, &grid).map_err(CliError::from_solve)?;
        out.write(
            &format!("bands_{name}.csv"),
            "bands",
            &csv_columns(&["x", "mean", "lower", "upper"], &[&grid, &mean, &lower, &upper]),
        )?;

        let seed = cfg.seed.wrapping_mul(measures.len() as u64).wrapping_add(k as u64);
        let paths = sample_paths(&g, &problem.basis, &grid, cfg.sample_paths, seed).map_err(CliError::from_solve)?;
        let rows: Vec<Vec<f64>> = (0..paths.nrows()).map(|i| paths.row(i).iter().copied().collect()).collect();
        let mut header = vec!["x".to_string()];
        header.extend((1..=rows.len()).map(|i| format!("path{i}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut columns: Vec<&[f64]> = vec![&grid];
        columns.extend(rows.iter().map(Vec::as_slice));
        out.write(&format!("paths_{name}.csv"), "paths", &csv_columns(&header, &columns))?;

        let var = marginal_variances(&g.cov, &problem.basis, &grid).map_err(CliError::from_solve)?;
        stats.push(MeasureSummary {
            name: name.to_string(),
            mean_marginal_variance: var.iter().sum::<f64>() / var.len() as f64,
            max_marginal_variance: var.iter().copied().fold(0.0, f64::max),
        });
    }
    write_solve(&mut out, &cfg, "figures", &solved)?;
    out.write_json(
        "summary.json",
        "summary",
        &Envelope {
            command: "figures",
            seed: cfg.seed,
            config: cfg.to_text(),
            body: FiguresBody {
                solve: &solved.summary,
                grid_points: cfg.grid_points,
                observations: y,
                measures: stats.clone(),
            },
        },
    )?;
    out.finish("figures")?;
    Ok(stats)
}

/// One row of a multi-instance table; failed instances carry the error.
#[derive(Debug, Clone, Serialize)]
pub struct CaseRow {
    pub label: String,
    pub status: String,
    #[serde(flatten)]
    pub summary: Option<SolveSummary>,
}

fn case_rows(cases: Vec<(String, Result<Solved, CliError>)>) -> (Vec<CaseRow>, Option<CliError>) {
    let mut first_error = None;
    let rows = cases
        .into_iter()
        .map(|(label, r)| match r {
            Ok(s) => CaseRow {
                label,
                status: "ok".into(),
                summary: Some(s.summary),
            },
            Err(e) => {
                let row = CaseRow {
                    label,
                    status: format!("failed: {}", e.message().replace(',', ";")),
                    summary: None,
                };
                first_error.get_or_insert(e);
                row
            }
        })
        .collect();
    (rows, first_error)
}

fn case_csv(first: &str, rows: &[CaseRow]) -> String {
    let header: Vec<String> = [
        first,
        "nominal_value",
        "worst_value",
        "gap",
        "iterations",
        "stop_reason",
        "det_k",
        "foerstner_nominal",
        "foerstner_worst",
        "status",
    ]
    .map(String::from)
    .to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone()];
            match &r.summary {
                Some(s) => row.extend([
                    fmt_f64(s.nominal_value),
                    fmt_f64(s.worst_value),
                    fmt_f64(s.gap),
                    s.iterations.to_string(),
                    serde_json::to_value(s.stop_reason)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                    fmt_f64(s.det_k),
                    fmt_f64(s.foerstner_nominal),
                    fmt_f64(s.foerstner_worst),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 8)),
            }
            row.push(r.status.clone());
            row
        })
        .collect();
    csv_table(&header, &body)
}

fn run_cases(
    command: &str,
    first_column: &str,
    file: &str,
    cfg: &ExperimentConfig,
    opts: &RunOptions,
    cases: Vec<(String, ExperimentConfig)>,
) -> Result<Vec<CaseRow>, CliError> {
    let solved = with_pool(opts.jobs, || {
        cases
            .into_par_iter()
            .map(|(label, c)| {
                let r = solve_config(&c);
                (label, r)
            })
            .collect::<Vec<_>>()
    })?;
    let mut out = OutputDir::create(&opts.out)?;
    for (label, r) in &solved {
        if let Ok(s) = r {
            write_trace(&mut out, &format!("trace/{}.csv", label.replace(['=', '/'], "_")), &s.result)?;
        }
    }
    let (rows, error) = case_rows(solved);
    out.write(file, "table", &case_csv(first_column, &rows))?;
    out.write_json(
        "summary.json",
        "summary",
        &Envelope {
            command,
            seed: cfg.seed,
            config: cfg.to_text(),
            body: serde_json::json!({ "rows": rows }),
        },
    )?;
    out.finish(command)?;
    match error {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

/// `table1`: the baseline and its one-at-a-time variations.
pub fn run_table1(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Vec<CaseRow>, CliError> {
    let cfg = effective(cfg, opts);
    cfg.validate()?;
    let base = cfg.problem_spec()?;
    let cases = table1_columns(&base)
        .into_iter()
        .map(|col| {
            let mut c = cfg.clone();
            c.alpha = col.spec.alpha;
            c.beta = col.spec.beta;
            c.delta_sq = col.spec.delta_sq;
            c.sigma = col.spec.sigma;
            (col.label, c)
        })
        .collect();
    run_cases("table1", "label", "table1.csv", &cfg, opts, cases)
}

/// Parses `key=v1,v2,...`.
pub fn parse_vary(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--vary {spec}: expected key=v1,v2,...")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("--vary {spec}: no values")));
    }
    Ok((key.trim().to_string(), values))
}

/// `sweep`: the same instance with one key taking each listed value.
pub fn run_sweep(cfg: &ExperimentConfig, opts: &RunOptions, vary: &str) -> Result<Vec<CaseRow>, CliError> {
    let cfg = effective(cfg, opts);
    let (key, values) = parse_vary(vary)?;
    let cases = values
        .into_iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(&key, &v)?;
            c.validate()?;
            Ok((v, c))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    run_cases("sweep", &key, "sweep.csv", &cfg, opts, cases)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub truncation: TruncationReport,
    pub determinant: DeterminantReport,
    pub decay_flagged: bool,
}

/// Parses `N1,N2,...` as strictly increasing truncation levels.
pub fn parse_levels(spec: &str) -> Result<Vec<usize>, CliError> {
    let levels = spec
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("--levels {spec}: {v} is not a truncation level")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if levels.len() < 2 || levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config(
            "--levels needs at least two strictly increasing values".into(),
        ));
    }
    Ok(levels)
}

/// `convergence`: game value and `det K` across truncation levels. Fails with
/// a diagnostic error when the determinants decay.
pub fn run_convergence(cfg: &ExperimentConfig, opts: &RunOptions, levels: &str) -> Result<ConvergenceReport, CliError> {
    let cfg = effective(cfg, opts);
    cfg.validate()?;
    let levels = parse_levels(levels)?;
    let solver = cfg.solver_config()?;
    let spec = cfg.problem_spec()?;
    let solved = with_pool(opts.jobs, || {
        levels
            .par_iter()
            .map(|&n| solve_spec(&spec.with_modes(n), &solver))
            .collect::<Vec<_>>()
    })?;
    let solved = solved.into_iter().collect::<Result<Vec<_>, _>>()?;

    let values: Vec<(usize, f64)> = levels.iter().zip(&solved).map(|(&n, s)| (n, s.summary.worst_value)).collect();
    let dets: Vec<(usize, f64)> = levels.iter().zip(&solved).map(|(&n, s)| (n, s.summary.det_k)).collect();
    let truncation = truncation_convergence(&values).map_err(CliError::from_solve)?;
    let determinant = determinant_diagnostic(&dets).map_err(CliError::from_solve)?;
    let report = ConvergenceReport {
        decay_flagged: determinant.decay_flagged(),
        truncation,
        determinant,
    };

    let mut out = OutputDir::create(&opts.out)?;
    let header = ["n", "value", "relative_increment", "det_k", "gap", "iterations"].map(String::from);
    let rows: Vec<Vec<String>> = report
        .truncation
        .rows
        .iter()
        .zip(&solved)
        .map(|(r, s)| {
            vec![
                r.n.to_string(),
                fmt_f64(r.value),
                r.relative_increment.map(fmt_f64).unwrap_or_default(),
                fmt_f64(s.summary.det_k),
                fmt_f64(s.summary.gap),
                s.summary.iterations.to_string(),
            ]
        })
        .collect();
    out.write("convergence.csv", "table", &csv_table(&header, &rows))?;
    for (n, s) in levels.iter().zip(&solved) {
        write_trace(&mut out, &format!("trace/n{n}.csv"), &s.result)?;
    }
    out.write_json(
        "summary.json",
        "summary",
        &Envelope {
            command: "convergence",
            seed: cfg.seed,
            config: cfg.to_text(),
            body: &report,
        },
    )?;
    out.finish("convergence")?;
    if report.decay_flagged {
        return Err(CliError::Diagnostic(format!(
            "observation covariance determinant decays with N: {:?}",
            report.determinant.levels
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vary_and_levels_parsing() {
        assert_eq!(
            parse_vary("noise.sigma=0.1, 1").unwrap(),
            ("noise.sigma".to_string(), vec!["0.1".to_string(), "1".to_string()])
        );
        assert!(parse_vary("noise.sigma").is_err());
        assert!(parse_vary("noise.sigma=").is_err());
        assert_eq!(parse_levels("10,20,40").unwrap(), vec![10, 20, 40]);
        for bad in ["10", "20,10", "10,x", "10,10"] {
            assert_eq!(parse_levels(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }

    #[test]
    fn failed_cases_are_marked() {
        let (rows, err) = case_rows(vec![("bad".into(), Err(CliError::Solver("x, y".into())))]);
        assert_eq!(rows[0].status, "failed: x; y");
        assert_eq!(err.unwrap().exit_code(), 3);
        let text = case_csv("label", &rows);
        assert_eq!(text.lines().nth(1).unwrap(), "bad,,,,,,,,,failed: x; y");
    }

    #[test]
    fn zero_jobs_is_a_config_error() {
        assert_eq!(with_pool(Some(0), || ()).unwrap_err().exit_code(), 2);
        assert_eq!(with_pool(Some(2), || 7).unwrap(), 7);
    }
}
