//! The five subcommands and the file layout they share.
//!
//! A directory may hold a scenario dump (`config.toml`, `towers.csv`,
//! `gtp.csv`, `counts.csv`) or a fixed-matrix problem (`config.toml`,
//! `matrix.csv`, `counts.csv`), plus estimates `estimate_<name>.csv`, the
//! run report `run_report.json`, the distance report `kwd_report.json` /
//! `kwd_table.txt` and heatmaps `heatmap_<name>.pgm`.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use celldense::benchmark::{run_benchmark, EstimateRun, GeoMode, RunSummary, Setup};
use celldense::estimators::{
    df_estimate, df_precompute, em_estimate, loglikelihood, ml_optimality_residual, mlbs_membership, sb_estimate,
    EmConfig,
};
use celldense::evaluation::{compare_report, KwdReport};
use celldense::grid::io::{read_cell_counts, read_matrix, read_tile_values, write_cell_counts, write_matrix, write_tile_values};
use celldense::grid::{consolidate, AssignmentMatrix, CountVector, Grid, PriorVector};
use celldense::scenario::{Scenario, GTP_FILE};
use serde::Serialize;

use crate::config::{RunConfig, CONFIG_FILE};
use crate::failure::Failure;
use crate::heatmap::write_pgm;
use crate::Cli;

pub const MATRIX_FILE: &str = "matrix.csv";
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const KWD_REPORT_FILE: &str = "kwd_report.json";
pub const KWD_TABLE_FILE: &str = "kwd_table.txt";
const ESTIMATE_PREFIX: &str = "estimate_";

fn io_context<T, E>(r: Result<T, E>, what: impl FnOnce() -> String) -> Result<T, Failure>
where
    E: std::error::Error + Send + Sync + 'static,
{
    r.map_err(|e| Failure::Io(anyhow::Error::new(e).context(what())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    io_context(File::create(path), || format!("creating {}", path.display())).map(BufWriter::new)
}

fn open(path: &Path) -> Result<File, Failure> {
    io_context(File::open(path), || format!("opening {}", path.display()))
}

fn make_dir(dir: &Path) -> Result<(), Failure> {
    io_context(fs::create_dir_all(dir), || format!("creating {}", dir.display()))
}

/// Loads `--config`, else `<fallback>/config.toml` when present, else the
/// defaults; then applies `--seed`.
fn load_config(cli: &Cli, fallback: Option<&Path>) -> Result<RunConfig, Failure> {
    let mut cfg = match (&cli.config, fallback.map(|d| d.join(CONFIG_FILE))) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(echo)) if echo.exists() => RunConfig::load(&echo)?,
        _ => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.scenario.seed = seed;
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), Failure> {
    let path = dir.join(CONFIG_FILE);
    io_context(fs::write(&path, cfg.to_toml()), || format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    serde_json::to_writer_pretty(create(path)?, value)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Io)
}

fn write_values(path: &Path, values: &[f64]) -> Result<(), Failure> {
    write_tile_values(values, create(path)?).map_err(|e| Failure::from(e).context(format!("writing {}", path.display())))
}

fn read_values(path: &Path, tiles: usize) -> Result<Vec<f64>, Failure> {
    read_tile_values(tiles, open(path)?).map_err(|e| Failure::from(e).context(format!("reading {}", path.display())))
}

fn estimate_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{ESTIMATE_PREFIX}{name}.csv"))
}

/// Writes the scenario dump together with the config that produced it.
fn write_dump(dir: &Path, cfg: &RunConfig, scenario: &Scenario) -> Result<(), Failure> {
    make_dir(dir)?;
    write_config(dir, cfg)?;
    scenario.write_csvs(dir).map_err(|e| Failure::from(e).context(format!("writing dump to {}", dir.display())))
}

pub fn generate(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli, None)?;
    let scenario = Scenario::generate(&cfg.scenario)?;
    let out = cli.out_dir();
    write_dump(&out, &cfg, &scenario)?;
    println!(
        "generated {} towers, {} cells, {} devices on a {}x{} grid into {}",
        scenario.towers.len(),
        scenario.counts.len(),
        scenario.gtp.total(),
        scenario.grid.width(),
        scenario.grid.height(),
        out.display()
    );
    Ok(())
}

/// What `estimate` works on.
enum Problem {
    Scenario(Box<Scenario>),
    Matrix { p: AssignmentMatrix, counts: CountVector },
}

fn load_problem(cfg: &RunConfig, dir: &Path, grid: &Grid) -> Result<Problem, Failure> {
    let matrix = dir.join(MATRIX_FILE);
    if !matrix.exists() {
        let scenario = Scenario::read_csvs(&cfg.scenario, dir)
            .map_err(|e| Failure::from(e).context(format!("reading scenario dump in {}", dir.display())))?;
        return Ok(Problem::Scenario(Box::new(scenario)));
    }
    let counts_path = dir.join(celldense::scenario::COUNTS_FILE);
    let rows = read_cell_counts(open(&counts_path)?)
        .map_err(|e| Failure::from(e).context(format!("reading {}", counts_path.display())))?;
    let counts = CountVector::new(rows.into_iter().map(|r| r.1).collect())?;
    let p = read_matrix(counts.len(), grid.len(), open(&matrix)?)
        .map_err(|e| Failure::from(e).context(format!("reading {}", matrix.display())))?;
    Ok(Problem::Matrix { p, counts })
}

fn load_prior(cfg: &RunConfig, grid: &Grid) -> Result<Option<PriorVector>, Failure> {
    let Some(path) = &cfg.estimators.prior_file else {
        return Ok(None);
    };
    let weights = read_values(path, grid.len())?;
    Ok(Some(PriorVector::from_weights(weights).map_err(|e| Failure::Config(anyhow!(e).context("prior file")))?))
}

#[derive(Debug, Serialize)]
struct RunReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<GeoMode>,
    tiles: usize,
    cells: usize,
    sections: usize,
    runs: Vec<RunSummary>,
}

/// Fails with a numerical error when an estimator stopped at its cap,
/// unless the user opted out.
fn check_converged(runs: &[EstimateRun], allow: bool) -> Result<(), Failure> {
    let stuck: Vec<&str> =
        runs.iter().filter(|r| !r.estimate.diagnostics.converged).map(|r| r.estimator.name()).collect();
    if stuck.is_empty() {
        return Ok(());
    }
    if allow {
        log::warn!("not converged: {}", stuck.join(", "));
        Ok(())
    } else {
        Err(Failure::Numerical(anyhow!(
            "{} did not converge within the iteration cap (outputs were written; pass --allow-nonconverged to accept)",
            stuck.join(", ")
        )))
    }
}

fn log_runs(runs: &[EstimateRun]) {
    for r in runs {
        let d = &r.estimate.diagnostics;
        log::info!(
            "{}: {} iterations, converged {}, ML residual {:?}, constraint residual {:?}, {:.2}s",
            r.estimator.name(),
            d.iterations,
            d.converged,
            d.ml_residual,
            d.constraint_residual,
            r.seconds
        );
        if let Some(hit) = r.df_cache_hit {
            log::info!("DF operator cache {}", if hit { "hit" } else { "miss" });
        }
    }
}

pub fn estimate(cli: &Cli) -> Result<(), Failure> {
    let input = cli.input_dir();
    let cfg = load_config(cli, Some(&input))?;
    let grid = cfg.scenario.grid()?;
    let prior = load_prior(&cfg, &grid)?;
    let tol = cfg.geolocation.consolidation_tol;
    let (setup, mode) = match load_problem(&cfg, &input, &grid)? {
        Problem::Scenario(s) => (Setup::new(&s, cfg.geolocation.mode, prior.as_ref(), tol)?, Some(cfg.geolocation.mode)),
        Problem::Matrix { p, counts } => {
            let flat = PriorVector::flat(grid.len());
            let (p, prior) = consolidate(&p, prior.as_ref().unwrap_or(&flat), tol)?;
            (Setup { p, prior, counts }, None)
        }
    };
    let runs = setup.run_all(&cfg.estimators.list, &cfg.settings(), cli.parallel)?;
    log_runs(&runs);

    let out = cli.out_dir();
    make_dir(&out)?;
    for r in &runs {
        write_values(&estimate_path(&out, r.estimator.name()), r.estimate.values())?;
    }
    let report = RunReport {
        mode,
        tiles: grid.len(),
        cells: setup.counts.len(),
        sections: setup.sections(),
        runs: runs.iter().map(RunSummary::from).collect(),
    };
    write_json(&out.join(RUN_REPORT_FILE), &report)?;
    println!("wrote {} estimates to {}", runs.len(), out.display());
    check_converged(&runs, cli.allow_nonconverged)
}

/// Estimates found in `dir`, sorted by name.
fn find_estimates(dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let entries = io_context(fs::read_dir(dir), || format!("listing {}", dir.display()))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = io_context(entry, || format!("listing {}", dir.display()))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if let Some(stem) = name.strip_prefix(ESTIMATE_PREFIX).and_then(|n| n.strip_suffix(".csv")) {
            found.push((stem.to_string(), path.clone()));
        }
    }
    found.sort();
    Ok(found)
}

fn write_evaluation(
    out: &Path,
    cfg: &RunConfig,
    grid: &Grid,
    report: &KwdReport,
    maps: &[(String, Vec<f64>)],
) -> Result<(), Failure> {
    make_dir(out)?;
    write_json(&out.join(KWD_REPORT_FILE), report)?;
    let table = report.table();
    let path = out.join(KWD_TABLE_FILE);
    io_context(fs::write(&path, &table), || format!("writing {}", path.display()))?;
    if cfg.evaluation.heatmaps {
        for (name, values) in maps {
            let path = out.join(format!("heatmap_{name}.pgm"));
            io_context(write_pgm(values, grid, create(&path)?), || format!("writing {}", path.display()))?;
        }
    }
    print!("{table}");
    Ok(())
}

pub fn evaluate(cli: &Cli) -> Result<(), Failure> {
    let input = cli.input_dir();
    let cfg = load_config(cli, Some(&input))?;
    let grid = cfg.scenario.grid()?;
    let gtp = read_values(&input.join(GTP_FILE), grid.len())?;
    let mut maps = vec![("gtp".to_string(), gtp.clone())];
    for (name, path) in find_estimates(&input)? {
        maps.push((name, read_values(&path, grid.len())?));
    }
    let report = compare_report(
        &gtp,
        &maps,
        &grid,
        cfg.evaluation.lattice_order,
        cfg.evaluation.include_flat,
        cli.parallel,
    )?;
    write_evaluation(&cli.out_dir(), &cfg, &grid, &report, &maps)
}

pub fn bench(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli, None)?;
    let result = run_benchmark(&cfg.bench(), cli.parallel)?;
    log_runs(&result.runs);
    let out = cli.out_dir();
    write_dump(&out, &cfg, &result.scenario)?;
    for (name, values) in &result.maps {
        write_values(&estimate_path(&out, name), values)?;
    }
    let report = RunReport {
        mode: Some(GeoMode::Of),
        tiles: result.scenario.grid.len(),
        cells: result.scenario.counts.len(),
        sections: result.sections,
        runs: result.runs.iter().map(RunSummary::from).collect(),
    };
    write_json(&out.join(RUN_REPORT_FILE), &report)?;
    println!(
        "{} sections from {} cells ({} Voronoi polygons)",
        result.sections,
        result.scenario.counts.len(),
        result.voronoi_cells
    );
    let mut maps = vec![("gtp".to_string(), result.scenario.gtp.to_estimate().into_values())];
    maps.extend(result.maps.iter().cloned());
    write_evaluation(&out, &cfg, &result.scenario.grid, &result.report, &maps)?;
    check_converged(&result.runs, cli.allow_nonconverged)
}

/// Shortest decimal form with at most five places: 32 and 30.38462.
fn num(x: f64) -> String {
    let s = format!("{x:.5}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

fn vector(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", "))
}

/// The three-tile, two-cell example: tile 2 is shared 1/4 : 3/4.
pub fn toy_problem() -> (AssignmentMatrix, CountVector) {
    let p = AssignmentMatrix::from_dense(&[vec![1.0, 0.25, 0.0], vec![0.0, 0.75, 1.0]]).expect("valid toy matrix");
    (p, CountVector::new(vec![40.0, 70.0]).expect("valid toy counts"))
}

pub fn toy(cli: &Cli) -> Result<(), Failure> {
    let (p, c) = toy_problem();
    let prior = PriorVector::flat(3);
    println!("P = [[1, 0.25, 0], [0, 0.75, 1]]  (rows: cells, columns: tiles)");
    println!("c = {}, C = {}", vector(c.counts()), num(c.total()));
    println!("flat prior a = {}", vector(&prior.rescaled(c.total())));

    let sb = sb_estimate(&p, &c, &prior)?;
    let em_cfg = EmConfig { max_iters: 100_000, ..Default::default() };
    let em = em_estimate(&p, &c, &prior, &em_cfg)?;
    let df = df_estimate(&df_precompute(&p, &prior)?, &c)?;
    let corner = [40.0, 0.0, 70.0];
    let rows: [(&str, &[f64], String); 4] = [
        ("SB", sb.values(), String::new()),
        ("EM", em.values(), format!(" after {} iterations", em.diagnostics.iterations)),
        ("DF", df.values(), String::new()),
        ("corner", &corner, String::new()),
    ];
    println!();
    for (name, u, note) in &rows {
        println!("{name:<6} u = {}{note}", vector(u));
    }
    println!();
    println!("{:<6} {:>6} {:>14} {:>16}", "", "MLBS", "ML residual", "log-likelihood");
    for (name, u, _) in &rows {
        println!(
            "{name:<6} {:>6} {:>14.3e} {:>16.9}",
            mlbs_membership(&p, &c, u, 1e-9),
            ml_optimality_residual(&p, &c, u)?,
            loglikelihood(&p, &c, u)?
        );
    }
    println!("\nEvery MLBS point attains the same log-likelihood; SB is outside the MLBS.");

    if let Some(out) = &cli.out {
        write_toy_fixture(out)?;
        println!("toy fixture written to {}", out.display());
    }
    Ok(())
}

/// A fixed-matrix problem directory that `estimate` accepts.
pub fn write_toy_fixture(dir: &Path) -> Result<(), Failure> {
    let (p, c) = toy_problem();
    let mut cfg = RunConfig::default();
    cfg.scenario.width = 3;
    cfg.scenario.height = 1;
    make_dir(dir)?;
    write_config(dir, &cfg)?;
    let ids: Vec<String> = (0..c.len()).map(|i| i.to_string()).collect();
    write_cell_counts(&ids, c.counts(), create(&dir.join(celldense::scenario::COUNTS_FILE))?)?;
    write_matrix(&p, create(&dir.join(MATRIX_FILE))?)?;
    Ok(())
}
