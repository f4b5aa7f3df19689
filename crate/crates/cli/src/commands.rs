use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fractal_forms::energy::{harmonic_coordinates, laplacian};
use fractal_forms::fields::{kusuoka_matrices, martingale_defect, p_energy, EigenStats};
use fractal_forms::quasilinear::{solve_divergence_form, weak_residual_max, Constraint};
use fractal_forms::spde::{moment_stats, simulate, uniqueness_probe, NoiseModel, UniquenessReport};
use fractal_forms::{linalg, DiscreteFunction, EnergyForm, FractalSpec, SolveReport, SpectrumResult};

use crate::config::{ConstraintChoice, InitialState, LoadSpec, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{self, fmt_real, GraphDump};
use crate::measure::{build_measure, coefficient};
use crate::oracle::interval_p_laplace;
use crate::verify::{self, VerifyReport};

/// Resolved run state shared by the subcommands.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub dir: PathBuf,
    pub spec: FractalSpec,
}

/// Files written by a command and a one-line summary for stdout.
#[derive(Clone, Debug, Default)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

impl Context {
    /// Creates the output directory and writes the resolved config.
    pub fn new(cfg: RunConfig) -> CliResult<Self> {
        let spec = cfg.spec()?;
        let dir = cfg.prepare_output()?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, dir, spec })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn form(&self, level: usize) -> CliResult<EnergyForm> {
        self.cfg.check_budget(level)?;
        Ok(EnergyForm::build(&self.spec, level)?)
    }

    fn spectrum(&self, form: &EnergyForm, k: usize) -> CliResult<SpectrumResult> {
        let mu = build_measure(form, &self.cfg.measure, &self.cfg.tolerances)?;
        let op = laplacian(form, &mu, self.cfg.measure.id())?;
        Ok(op.spectrum(form.level(), k.min(op.dim()), &self.cfg.tolerances)?)
    }
}

fn output(files: Vec<PathBuf>, summary: String) -> CommandOutput {
    CommandOutput { files, summary }
}

pub fn cmd_build(ctx: &Context) -> CliResult<CommandOutput> {
    let form = ctx.form(ctx.cfg.level)?;
    let g = form.graph();
    let path = ctx.path("graph.json");
    io::write_json(&path, &ctx.hash, "build", &GraphDump::from_graph(g))?;
    Ok(output(
        vec![path],
        format!(
            "level {} graph: {} vertices, {} edges, {} cells",
            g.level,
            g.n_vertices(),
            g.n_edges(),
            g.n_cells()
        ),
    ))
}

pub fn cmd_spectrum(ctx: &Context) -> CliResult<CommandOutput> {
    let form = ctx.form(ctx.cfg.level)?;
    let s = ctx.spectrum(&form, ctx.cfg.diagnostics.spectrum_k)?;
    let json = ctx.path("spectrum.json");
    io::write_json(&json, &ctx.hash, "spectrum", &s)?;
    let csv = ctx.path("eigenvalues.csv");
    io::write_table(
        &csv,
        &ctx.hash,
        &["index", "eigenvalue"],
        s.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, l)| vec![i.to_string(), fmt_real(*l)]),
    )?;
    let lambda1 = s.eigenvalues.get(1).copied().unwrap_or(f64::NAN);
    Ok(output(
        vec![json, csv],
        format!(
            "{} eigenpairs ({}), lambda_1 = {lambda1:.12e}, max residual {:.2e}",
            s.eigenvalues.len(),
            s.method,
            s.max_residual
        ),
    ))
}

pub fn cmd_measure(ctx: &Context) -> CliResult<CommandOutput> {
    let form = ctx.form(ctx.cfg.level)?;
    let mu = build_measure(&form, &ctx.cfg.measure, &ctx.cfg.tolerances)?;
    let path = ctx.path("measure.csv");
    io::write_measure_csv(&path, &ctx.hash, form.graph(), &mu)?;
    Ok(output(
        vec![path],
        format!("{} measure on {} cells, total mass {:.12e}", ctx.cfg.measure.id(), mu.n_cells(), mu.total()),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KusuokaRow {
    pub stats: EigenStats,
    pub max_trace_error: f64,
    /// Defect against the previous level, when it was computed.
    pub martingale_defect: Option<f64>,
}

pub fn cmd_kusuoka(ctx: &Context) -> CliResult<CommandOutput> {
    let top = ctx.cfg.level;
    let mut rows = Vec::new();
    let mut prev = None;
    let mut last = None;
    for n in ctx.cfg.diagnostics.min_level..=top {
        let form = ctx.form(n)?;
        let (_, z) = kusuoka_matrices(&form)?;
        let trace_err = (0..z.n_cells())
            .map(|w| (z.trace(w) - 1.0).abs())
            .fold(0.0, f64::max);
        let defect = match &prev {
            Some(coarse) => Some(martingale_defect(coarse, &z, ctx.spec.n_maps)?),
            None => None,
        };
        rows.push(KusuokaRow {
            stats: z.eigen_stats(),
            max_trace_error: trace_err,
            martingale_defect: defect,
        });
        if n == top {
            last = Some((form, z.clone()));
        }
        prev = Some(z);
    }
    let (form, z) = last.expect("level range is nonempty");
    let metric = ctx.path("fiber_metric.csv");
    io::write_fiber_metric_csv(&metric, &ctx.hash, form.graph(), &z)?;
    let stats = ctx.path("kusuoka_stats.csv");
    io::write_table(
        &stats,
        &ctx.hash,
        &["level", "min", "median", "mean", "max", "max_trace_error", "martingale_defect"],
        rows.iter().map(|r| {
            vec![
                r.stats.level.to_string(),
                fmt_real(r.stats.min),
                fmt_real(r.stats.median),
                fmt_real(r.stats.mean),
                fmt_real(r.stats.max),
                fmt_real(r.max_trace_error),
                r.martingale_defect.map(fmt_real).unwrap_or_default(),
            ]
        }),
    )?;
    let json = ctx.path("kusuoka_stats.json");
    io::write_json(&json, &ctx.hash, "kusuoka", &rows)?;
    let s = &rows.last().expect("nonempty").stats;
    Ok(output(
        vec![metric, stats, json],
        format!("level {top}: median smaller eigenvalue {:.6e}, max {:.6e}", s.median, s.max),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PEnergyRow {
    pub level: usize,
    pub energy: f64,
    pub p_energy: f64,
    pub ratio: Option<f64>,
    /// `r^{-np/2} Σ_w Σ_edges |Δf|^p m(w)^{1-p/2}`.
    pub comparable: f64,
    pub comparable_ratio: Option<f64>,
}

pub fn cmd_penergy(ctx: &Context) -> CliResult<CommandOutput> {
    let p = ctx.cfg.diagnostics.p;
    let c = ctx.cfg.diagnostics.polynomial;
    let mut rows: Vec<PEnergyRow> = Vec::new();
    for n in ctx.cfg.diagnostics.min_level..=ctx.cfg.level {
        let form = ctx.form(n)?;
        let g = form.graph();
        let mu = build_measure(&form, &ctx.cfg.measure, &ctx.cfg.tolerances)?;
        let phi = harmonic_coordinates(&form)?;
        let zero = DiscreteFunction::zeros(g);
        let a = &phi[0];
        let b = phi.get(1).unwrap_or(&zero);
        let f = DiscreteFunction::new(
            n,
            a.values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| c[0] * x + c[1] * y + c[2] * x * x + c[3] * x * y + c[4] * y * y)
                .collect(),
        );
        let ep = p_energy(&form, &f, &mu, p)?;
        let r = ctx.spec.r();
        let mut comparable = 0.0;
        for (w, m) in mu.masses.iter().enumerate() {
            let s: f64 = g.edges[g.cell_edge_range(w)]
                .iter()
                .map(|e| (f.values[e.u] - f.values[e.v]).abs().powf(p))
                .sum();
            comparable += s * m.powf(1.0 - 0.5 * p);
        }
        comparable *= r.powf(-(n as f64) * p / 2.0);
        let prev = rows.last();
        rows.push(PEnergyRow {
            level: n,
            energy: form.energy_of(&f)?,
            p_energy: ep,
            ratio: prev.map(|q| ep / q.p_energy),
            comparable,
            comparable_ratio: prev.map(|q| comparable / q.comparable),
        });
    }
    let path = ctx.path("penergy.csv");
    let opt = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
    io::write_table(
        &path,
        &ctx.hash,
        &["level", "energy", "p_energy", "ratio", "comparable", "comparable_ratio"],
        rows.iter().map(|r| {
            vec![
                r.level.to_string(),
                fmt_real(r.energy),
                fmt_real(r.p_energy),
                opt(r.ratio),
                fmt_real(r.comparable),
                opt(r.comparable_ratio),
            ]
        }),
    )?;
    let json = ctx.path("penergy.json");
    io::write_json(&json, &ctx.hash, "penergy", &rows)?;
    let last = rows.last().expect("nonempty");
    Ok(output(
        vec![path, json],
        format!("p = {p}: E_p at level {} is {:.12e}", last.level, last.p_energy),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOutput {
    pub coefficient: String,
    pub report: SolveReport,
    /// Largest weak residual over the hat test functions.
    pub weak_residual: f64,
    /// Sup distance to the 1-D reference, on the interval only.
    pub reference_sup_error: Option<f64>,
}

pub fn load_function(ctx: &Context, form: &EnergyForm, load: &LoadSpec) -> CliResult<DiscreteFunction> {
    let g = form.graph();
    Ok(match *load {
        LoadSpec::Sine { frequency, offset } => DiscreteFunction::new(
            g.level,
            g.vertices
                .iter()
                .map(|v| (frequency * v.coords[0]).sin() + offset)
                .collect(),
        ),
        LoadSpec::Constant { value } => DiscreteFunction::constant(g, value),
        LoadSpec::Eigenfunction { index } => {
            let s = ctx.spectrum(form, index + 1)?;
            if index >= s.eigenvalues.len() {
                return Err(CliError::Config(format!(
                    "at `pde.load.index`: only {} eigenpairs exist",
                    s.eigenvalues.len()
                )));
            }
            s.eigenfunction(index)
        }
    })
}

pub fn cmd_solve(ctx: &Context) -> CliResult<CommandOutput> {
    let pde = &ctx.cfg.pde;
    let form = ctx.form(ctx.cfg.level)?;
    let g = form.graph();
    let mu = build_measure(&form, &ctx.cfg.measure, &ctx.cfg.tolerances)?;
    let w = mu.vertex_weights(g)?;
    let mut f = load_function(ctx, &form, &pde.load)?;
    let constraint = match pde.constraint {
        ConstraintChoice::Dirichlet => Constraint::boundary_zero(g),
        ConstraintChoice::ZeroMean => {
            if pde.center_load {
                let mean = linalg::dot(&f.values, &w) / w.iter().sum::<f64>();
                f = f.map(|x| x - mean);
            }
            Constraint::ZeroMean
        }
    };
    let coeff = coefficient(pde.p, pde.kappa)?;
    let (u, report) = solve_divergence_form(&form, coeff.as_ref(), &f, &mu, &constraint, &pde.solver, None)?;
    let weak = weak_residual_max(&form, coeff.as_ref(), &u, &f, &mu, &constraint)?;
    let reference = if ctx.spec.is_unit_interval()
        && pde.constraint == ConstraintChoice::Dirichlet
        && pde.kappa == 0.0
    {
        let r = interval_p_laplace(g, &w, &f, pde.p)?;
        Some(
            r.values
                .iter()
                .zip(&u.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };
    let sol = ctx.path("solution.csv");
    io::write_function_csv(&sol, &ctx.hash, g, &u)?;
    let load = ctx.path("load.csv");
    io::write_function_csv(&load, &ctx.hash, g, &f)?;
    let out = SolveOutput {
        coefficient: coeff.name(),
        report,
        weak_residual: weak,
        reference_sup_error: reference,
    };
    let json = ctx.path("solve_report.json");
    io::write_json(&json, &ctx.hash, "solve", &out)?;
    let mut summary = format!(
        "{}: {} iterations, residual {:.3e}",
        out.coefficient, out.report.iterations, out.report.residual
    );
    if let Some(e) = reference {
        summary.push_str(&format!(", sup error vs 1-D reference {e:.3e}"));
    }
    Ok(output(vec![sol, load, json], summary))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdeOutput {
    pub seed: u64,
    pub coefficient: String,
    pub truncation: usize,
    pub trace: f64,
    pub tail_bound: f64,
    pub lambda1: f64,
    pub n_steps: usize,
    pub final_l2: Vec<f64>,
    pub uniqueness: Option<UniquenessReport>,
}

pub fn cmd_spde(ctx: &Context, seed: u64) -> CliResult<CommandOutput> {
    let sc = &ctx.cfg.spde;
    let form = ctx.form(ctx.cfg.level)?;
    let g = form.graph();
    let mu = build_measure(&form, &ctx.cfg.measure, &ctx.cfg.tolerances)?;
    let k = g
        .n_vertices()
        .min(ctx.cfg.tolerances.dense_eigen_limit.max(sc.truncation + 1));
    let spectrum = ctx.spectrum(&form, k)?;
    if sc.truncation + 1 > spectrum.eigenvalues.len() {
        return Err(CliError::Config(format!(
            "at `spde.truncation`: at most {} modes are available",
            spectrum.eigenvalues.len().saturating_sub(1)
        )));
    }
    let noise = NoiseModel::new(&spectrum, sc.truncation, &sc.covariance, seed)?;
    let u0 = match sc.initial {
        InitialState::Zero => DiscreteFunction::zeros(g),
        InitialState::Eigenfunction { index, amplitude } => {
            if index >= spectrum.eigenvalues.len() {
                return Err(CliError::Config("at `spde.initial.index`: out of range".into()));
            }
            spectrum.eigenfunction(index).scaled(amplitude)
        }
    };
    let coeff = coefficient(sc.p, sc.kappa)?;
    let opts = &sc.simulation;
    let mut files = Vec::new();
    let mut final_l2 = Vec::new();
    for path in 0..sc.paths as u64 {
        let r = simulate(&form, coeff.as_ref(), &mu, &u0, &noise, opts, path)?;
        final_l2.push(*r.l2_norm.last().expect("initial state is recorded"));
        let series = ctx.path(&format!("path_{path:03}.csv"));
        io::write_table(
            &series,
            &ctx.hash,
            &["step", "time", "l2_norm", "p_energy", "iterations", "residual"],
            (0..r.l2_norm.len()).map(|k| {
                let (it, res) = if k == 0 {
                    (0, 0.0)
                } else {
                    (r.steps[k - 1].iterations, r.steps[k - 1].residual)
                };
                vec![
                    k.to_string(),
                    fmt_real(r.times[k]),
                    fmt_real(r.l2_norm[k]),
                    fmt_real(r.p_energy[k]),
                    it.to_string(),
                    fmt_real(res),
                ]
            }),
        )?;
        files.push(series);
        if path == 0 {
            let snaps = ctx.path("snapshots_000.csv");
            io::write_table(
                &snaps,
                &ctx.hash,
                &["step", "time", "vertex", "value"],
                r.snapshots.iter().flat_map(|s| {
                    s.values.iter().enumerate().map(move |(v, x)| {
                        vec![s.step.to_string(), fmt_real(s.time), v.to_string(), fmt_real(*x)]
                    })
                }),
            )?;
            files.push(snaps);
        }
    }
    if sc.paths >= 2 {
        let rows = moment_stats(&form, coeff.as_ref(), &mu, &u0, &noise, opts, sc.paths)?;
        let m = ctx.path("moments.csv");
        io::write_table(
            &m,
            &ctx.hash,
            &["step", "time", "mean_l2_sq", "stderr_l2_sq", "mean_p_energy", "stderr_p_energy"],
            rows.iter().map(|r| {
                vec![
                    r.step.to_string(),
                    fmt_real(r.time),
                    fmt_real(r.mean_l2_sq),
                    fmt_real(r.stderr_l2_sq),
                    fmt_real(r.mean_p_energy),
                    fmt_real(r.stderr_p_energy),
                ]
            }),
        )?;
        files.push(m);
    }
    let uniqueness = if sc.uniqueness_trials > 0 {
        Some(uniqueness_probe(
            &form,
            coeff.as_ref(),
            &mu,
            &noise,
            opts,
            sc.uniqueness_trials,
            seed,
        )?)
    } else {
        None
    };
    let out = SpdeOutput {
        seed,
        coefficient: coeff.name(),
        truncation: sc.truncation,
        trace: noise.trace(),
        tail_bound: noise.tail_bound,
        lambda1: spectrum.eigenvalues[1],
        n_steps: opts.n_steps()?,
        final_l2,
        uniqueness,
    };
    let json = ctx.path("spde_report.json");
    io::write_json(&json, &ctx.hash, "spde", &out)?;
    files.push(json);
    let mut summary = format!(
        "{} path(s), {} steps, trace Q {:.3e}, tail bound {:.3e}",
        sc.paths, out.n_steps, out.trace, out.tail_bound
    );
    if let Some(u) = &out.uniqueness {
        summary.push_str(&format!(", max contraction factor {:.12}", u.max_factor));
        if u.flagged {
            return Err(CliError::Invariant(format!(
                "pathwise contraction violated: factor {}",
                u.max_factor
            )));
        }
    }
    Ok(output(files, summary))
}

pub fn cmd_verify(ctx: &Context) -> CliResult<(CommandOutput, VerifyReport)> {
    let report = verify::run(&ctx.cfg)?;
    let path = ctx.path("verify.json");
    io::write_json(&path, &ctx.hash, "verify", &report)?;
    let passed = report.checks.iter().filter(|c| c.passed).count();
    let summary = format!("{passed} of {} checks passed", report.checks.len());
    Ok((output(vec![path], summary), report))
}

/// Reads the config hash recorded in any output file.
pub fn recorded_hash(path: &Path) -> CliResult<String> {
    if path.extension().is_some_and(|e| e == "csv") {
        Ok(io::read_table(path)?.config_hash)
    } else {
        Ok(io::read_json::<serde_json::Value>(path)?.config_hash)
    }
}
