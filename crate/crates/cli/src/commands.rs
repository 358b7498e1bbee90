use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use mfg_core::eval::{atlas_distance, exploitability, rollout_population};
use mfg_core::io::{self, DiagnosticRow};
use mfg_core::rng::{Domain, StreamKey};
use mfg_core::{build_grid, exact, rl, EnvModel, Error as CoreError, MeanFieldState, SimplexGrid};

use crate::config::{ExperimentConfig, SolverKind, DEFAULT_CONFIG};
use crate::{exit, fail, Cli, Command, Common};

pub const OUTPUT_ENV: &str = "MFG_OUTPUT_DIR";

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    if cli.print_default_config {
        print!("{DEFAULT_CONFIG}");
        return Ok(());
    }
    match cli.command {
        None => Err(fail(exit::USAGE, "no subcommand given; see `mfg --help`")),
        Some(Command::SolveExact(c)) => solve_exact(&Experiment::load(&c)?),
        Some(Command::SolveRl(c)) => solve_rl(&Experiment::load(&c)?),
        Some(Command::Evaluate(c)) => evaluate(&Experiment::load(&c)?),
        Some(Command::Export(c)) => export(&Experiment::load(&c)?),
        Some(Command::Compare { a, b, config, out }) => {
            let cfg = config.as_deref().map(load_config).transpose()?;
            let root = output_root(out.as_deref(), cfg.as_ref());
            compare(&a, &b, &root, cfg.as_ref())
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(exit::CONFIG, format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).map_err(|e| fail(exit::CONFIG, format!("{}: {e}", path.display())))
}

fn output_root(flag: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn output_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| {
        fail(
            exit::OUTPUT,
            format!("cannot create output directory {}: {e}", path.display()),
        )
    })
}

fn written(path: &Path, result: mfg_core::Result<()>) -> Result<()> {
    result.map_err(|e| fail(exit::OUTPUT, format!("cannot write {}: {e}", path.display())))
}

struct Experiment {
    cfg: ExperimentConfig,
    env: EnvModel,
    grid: Arc<SimplexGrid>,
    root: PathBuf,
}

impl Experiment {
    fn load(common: &Common) -> Result<Self> {
        let cfg = load_config(&common.config)?;
        let env = cfg.build_env().map_err(|e| match e {
            CoreError::UnknownEnvironment(_) => fail(exit::UNKNOWN_ENV, e.to_string()),
            other => fail(exit::CONFIG, format!("environment: {other}")),
        })?;
        let grid = Arc::new(
            build_grid(env.n_types(), cfg.grid.resolution).map_err(|e| fail(exit::CONFIG, format!("grid: {e}")))?,
        );
        let root = output_root(common.out.as_deref(), Some(&cfg));
        Ok(Self { cfg, env, grid, root })
    }

    fn solver_dir(&self, kind: SolverKind) -> PathBuf {
        self.root.join(kind.dir_name())
    }
}

fn write_solution(
    dir: &Path,
    atlas: &mfg_core::PolicyAtlas,
    tables: &[mfg_core::StageTables],
    diagnostics: &[DiagnosticRow],
) -> Result<()> {
    output_dir(dir)?;
    let atlas_path = dir.join("atlas.csv");
    written(&atlas_path, io::write_atlas(&atlas_path, atlas))?;
    let values_path = dir.join("values.csv");
    written(&values_path, io::write_values(&values_path, tables))?;
    let diag_path = dir.join("diagnostics.csv");
    written(&diag_path, io::write_diagnostics(&diag_path, diagnostics))
}

fn report_convergence(rows: &[DiagnosticRow], dir: &Path) -> Result<()> {
    let failed = rows.iter().filter(|d| !d.converged).count();
    let worst = rows.iter().map(|d| d.residual).fold(0.0, f64::max);
    println!(
        "wrote {} ({} stage points, max residual {worst:.3e})",
        dir.display(),
        rows.len()
    );
    if failed > 0 {
        return Err(fail(
            exit::CHECK_FAILED,
            format!("{failed} of {} stage points did not converge", rows.len()),
        ));
    }
    Ok(())
}

fn solve_exact(x: &Experiment) -> Result<()> {
    let sol = exact::backward_solve(&x.env, x.grid.clone(), &x.cfg.exact).context("exact solve")?;
    let rows: Vec<DiagnosticRow> = sol.diagnostics.iter().map(DiagnosticRow::from).collect();
    let dir = x.solver_dir(SolverKind::Exact);
    write_solution(&dir, &sol.atlas, &sol.tables, &rows)?;
    report_convergence(&rows, &dir)
}

fn solve_rl(x: &Experiment) -> Result<()> {
    let sol = rl::rl_backward_solve(&x.env, x.grid.clone(), &x.cfg.rl_config()).context("model-free solve")?;
    let rows: Vec<DiagnosticRow> = sol.diagnostics.iter().map(DiagnosticRow::from).collect();
    let dir = x.solver_dir(SolverKind::Rl);
    write_solution(&dir, &sol.atlas, &sol.tables, &rows)?;
    report_convergence(&rows, &dir)
}

fn read_solved_atlas(dir: &Path) -> Result<mfg_core::PolicyAtlas> {
    let path = dir.join("atlas.csv");
    io::read_atlas(&path).with_context(|| format!("reading {} (run the solver first)", path.display()))
}

fn evaluate(x: &Experiment) -> Result<()> {
    let dir = x.solver_dir(x.cfg.evaluate.solver);
    let atlas = read_solved_atlas(&dir)?;
    if atlas.horizon() != x.env.horizon()
        || atlas.n_types() != x.env.n_types()
        || atlas.n_actions() != x.env.n_actions()
    {
        anyhow::bail!(
            "{} does not match the configured environment",
            dir.join("atlas.csv").display()
        );
    }
    let report = exploitability(&atlas, &x.env).context("exploitability")?;
    let path = dir.join("exploitability.csv");
    written(&path, io::write_exploitability(&path, &report))?;

    let z1 = MeanFieldState::new(x.cfg.evaluate.z1.clone())?;
    let key = StreamKey::new(x.cfg.seed, Domain::Rollout);
    let traj = rollout_population(
        x.cfg.evaluate.n_agents,
        &z1,
        &atlas,
        &x.env,
        x.cfg.evaluate.conditioning,
        key,
    )
    .context("population rollout")?;
    let path = dir.join("trajectory.csv");
    written(&path, io::write_trajectory(&path, &traj))?;

    println!("max exploitability {:.3e}", report.max_gap());
    println!("stage-1 exploitability {:.3e}", report.max_gap_at(1));
    println!(
        "rollout of {} agents: mean return {:.6} +/- {:.6}, max |z_emp - z_stat| {:.4}",
        traj.n_agents,
        traj.mean_return,
        traj.return_ci,
        traj.max_deviation()
    );
    if let Some(limit) = x.cfg.thresholds.max_exploitability {
        if report.max_gap() > limit {
            return Err(fail(
                exit::CHECK_FAILED,
                format!("exploitability {:.3e} exceeds {limit:.3e}", report.max_gap()),
            ));
        }
    }
    Ok(())
}

fn resolve_solution(arg: &str, root: &Path) -> PathBuf {
    let direct = PathBuf::from(arg);
    if direct.join("atlas.csv").is_file() {
        direct
    } else {
        root.join(arg)
    }
}

fn compare(a: &str, b: &str, root: &Path, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let (dir_a, dir_b) = (resolve_solution(a, root), resolve_solution(b, root));
    let atlas_a = read_solved_atlas(&dir_a)?;
    let atlas_b = read_solved_atlas(&dir_b)?;
    if !atlas_a.same_shape(&atlas_b) {
        anyhow::bail!(
            "{} and {} hold atlases of different shapes",
            dir_a.display(),
            dir_b.display()
        );
    }
    let values = |dir: &Path| {
        let path = dir.join("values.csv");
        path.is_file()
            .then(|| io::read_values(&path, atlas_a.n_actions()).with_context(|| format!("reading {}", path.display())))
            .transpose()
    };
    let (va, vb) = (values(&dir_a)?, values(&dir_b)?);

    let mut rows = Vec::with_capacity(atlas_a.horizon());
    for t in 1..=atlas_a.horizon() {
        let tv = atlas_distance(&atlas_a, &atlas_b, t)?;
        let dv = match (&va, &vb) {
            (Some(va), Some(vb)) => Some(
                va[t - 1]
                    .values()
                    .iter()
                    .zip(vb[t - 1].values())
                    .map(|(p, q)| (p - q).abs())
                    .fold(0.0, f64::max),
            ),
            _ => None,
        };
        rows.push((t, tv, dv));
    }
    output_dir(root)?;
    let path = root.join("compare.csv");
    written(&path, io::write_comparison(&path, &rows))?;

    let max_tv = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let max_dv = rows.iter().filter_map(|r| r.2).reduce(f64::max);
    println!("stage 1 atlas distance {:.4}", rows[0].1);
    println!("max atlas distance over stages {max_tv:.4}");
    if let Some(dv) = max_dv {
        println!("max value difference {dv:.4}");
    }
    println!("wrote {}", path.display());

    let Some(t) = cfg.map(|c| &c.thresholds) else {
        return Ok(());
    };
    let stage = t.compare_stage.unwrap_or(1);
    if stage > rows.len() {
        return Err(fail(
            exit::CONFIG,
            format!("thresholds.compare_stage {stage} exceeds the horizon"),
        ));
    }
    let mut violations = Vec::new();
    if let Some(limit) = t.max_atlas_distance {
        if rows[stage - 1].1 > limit {
            violations.push(format!(
                "stage {stage} atlas distance {:.4} exceeds {limit}",
                rows[stage - 1].1
            ));
        }
    }
    if let (Some(limit), Some(dv)) = (t.max_value_diff, max_dv) {
        if dv > limit {
            violations.push(format!("value difference {dv:.4} exceeds {limit}"));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(fail(exit::CHECK_FAILED, violations.join("; ")))
    }
}

fn export(x: &Experiment) -> Result<()> {
    output_dir(&x.root)?;
    let grid_path = x.root.join("grid.csv");
    written(&grid_path, io::write_grid(&grid_path, &x.grid))?;
    let cfg_path = x.root.join("config.toml");
    fs::write(&cfg_path, x.cfg.to_toml())
        .map_err(|e| fail(exit::OUTPUT, format!("cannot write {}: {e}", cfg_path.display())))?;
    println!("wrote {} and {}", grid_path.display(), cfg_path.display());
    Ok(())
}
