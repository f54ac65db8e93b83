//! Subcommands, one per pipeline stage.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::result::Result;
use vorwave_core::isp::{
    candidate_radius, default_layout, max_linear_slope, Inversion, RichardsonFd,
};
use vorwave_core::spectrum::{characteristic_residual, default_closeness};
use vorwave_core::*;

use crate::config::{BasisKind, Refresh, RunConfig};
use crate::error::{CliError, Context};
use crate::export::{csv, dat, export_results, json, toml_text, Artifact, ManifestEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SelectB,
    Spectrum,
    IspJacobian,
    BuildBasis,
    TuneMu,
    LinearWave,
    Solve,
    Scan,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::SelectB,
        Command::Spectrum,
        Command::IspJacobian,
        Command::BuildBasis,
        Command::TuneMu,
        Command::LinearWave,
        Command::Solve,
        Command::Scan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SelectB => "select-b",
            Command::Spectrum => "spectrum",
            Command::IspJacobian => "isp-jacobian",
            Command::BuildBasis => "build-basis",
            Command::TuneMu => "tune-mu",
            Command::LinearWave => "linear-wave",
            Command::Solve => "solve",
            Command::Scan => "scan",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::validation("command", format!("unknown subcommand `{s}`")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: Command,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: RunConfig,
    pub outputs: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
    pub wall_time_s: f64,
}

pub const REPORT_FILE: &str = "run_report.json";

/// Runs `cmd`, writes its data files and `run_report.json` into `out`.
pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path) -> (RunReport, Result<(), CliError>) {
    let start = Instant::now();
    let mut warnings = Vec::new();
    let result = compute(cmd, cfg, &mut warnings).and_then(|arts| export_results(&arts, out));
    let (outputs, outcome) = match result {
        Ok(m) => (m, Ok(())),
        Err(e) => (Vec::new(), Err(e)),
    };
    let report = RunReport {
        command: cmd,
        status: if outcome.is_ok() { "ok" } else { "error" },
        exit_code: outcome.as_ref().err().map_or(0, |e| e.exit_code()),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        config: cfg.clone(),
        outputs,
        warnings,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let written = std::fs::create_dir_all(out)
        .and_then(|_| std::fs::write(out.join(REPORT_FILE), json(&report).0))
        .map_err(|e| CliError::io(out.join(REPORT_FILE), e));
    let outcome = match (outcome, written) {
        (Err(e), _) => Err(e),
        (Ok(()), Err(e)) => Err(e),
        (Ok(()), Ok(())) => Ok(()),
    };
    (report, outcome)
}

fn compute(
    cmd: Command,
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<Artifact>, CliError> {
    match cmd {
        Command::SelectB => select_b_cmd(cfg),
        Command::Spectrum => spectrum_cmd(cfg, warnings),
        Command::IspJacobian => isp_jacobian_cmd(cfg, warnings),
        Command::BuildBasis => build_basis_cmd(cfg, warnings),
        Command::TuneMu => tune_mu_cmd(cfg, warnings),
        Command::LinearWave => linear_wave_cmd(cfg, warnings),
        Command::Solve => solve_cmd(cfg, warnings),
        Command::Scan => scan_cmd(cfg, warnings),
    }
}

// ------------------------------------------------------------------ plumbing

fn base_resolution(cfg: &RunConfig) -> Resolution {
    Resolution {
        intervals: cfg.grid.z_intervals,
        substeps: cfg.grid.substeps.unwrap_or(Resolution::default().substeps),
    }
}

fn closeness(cfg: &RunConfig) -> f64 {
    cfg.spectrum
        .closeness
        .unwrap_or_else(|| default_closeness(cfg.d))
}

fn resolve_b(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<f64, CliError> {
    match cfg.b {
        Some(b) => Ok(b),
        None => {
            let sel =
                select_b(cfg.n, cfg.d, closeness(cfg), base_resolution(cfg)).op("select_b")?;
            warnings.push(format!(
                "b not given; selected b = {} with {} negative eigenvalues",
                sel.b, sel.negative_count
            ));
            Ok(sel.b)
        }
    }
}

fn isp_context(cfg: &RunConfig, b: f64) -> Result<IspContext, CliError> {
    let layout = default_layout();
    let span = cfg.isp.span.unwrap_or(4 * cfg.n + 2);
    let radius = candidate_radius(span, &layout).op("candidate bumps")?;
    let auto = Resolution::resolving_with(cfg.grid.z_intervals, max_linear_slope(b, cfg.d), radius);
    let res = Resolution {
        intervals: cfg.grid.z_intervals,
        substeps: cfg.grid.substeps.unwrap_or(auto.substeps),
    };
    let mut ctx = IspContext::new(b, cfg.d, cfg.n, res, span, &layout).op("isp context")?;
    ctx.stream_tol = cfg.stream.tol;
    Ok(ctx)
}

fn basis(
    cfg: &RunConfig,
    ctx: &IspContext,
) -> Result<(Vec<SmoothBump>, Option<AdaptedBasis>), CliError> {
    match cfg.isp.basis {
        BasisKind::Adapted => {
            let ab = adapted_basis(ctx).op("adapted_basis")?;
            Ok((ab.omegas.clone(), Some(ab)))
        }
        BasisKind::Partition => {
            let b = make_bump_basis(cfg.n, &BumpLayout::Partition { lo: 0.05, hi: 0.95 })
                .op("make_bump_basis")?;
            Ok((b, None))
        }
        BasisKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let b = (0..cfg.n)
                .map(|_| {
                    let c: Vec<f64> = ctx
                        .candidates
                        .iter()
                        .map(|_| rng.gen_range(-1.0..1.0))
                        .collect();
                    SmoothBump::combine(&ctx.candidates, &c)
                })
                .collect();
            Ok((b, None))
        }
    }
}

fn invert_options(cfg: &RunConfig) -> InvertOptions {
    InvertOptions {
        tol: cfg.isp.tol,
        max_iter: cfg.isp.max_iter,
        refresh: match cfg.isp.refresh {
            Refresh::Frozen => JacobianRefresh::Frozen,
            Refresh::Fd => JacobianRefresh::FiniteDifference,
        },
        radius: cfg.isp.radius,
        fd_step: cfg.isp.fd_step,
    }
}

fn solver_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        epsilon: cfg.solver.epsilon,
        delta_bound: cfg.solver.delta_bound,
        isp_tol: cfg.solver.isp_tol,
        isp_radius: cfg.solver.isp_radius,
    }
}

fn nonlinear_context(
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<NonlinearContext, CliError> {
    let b = resolve_b(cfg, warnings)?;
    let ctx = isp_context(cfg, b)?;
    if cfg.isp.basis != BasisKind::Adapted {
        warnings.push("the nonlinear solver always uses the adapted basis".into());
    }
    let ab = adapted_basis(&ctx).op("adapted_basis")?;
    let target = tune_commensurate(&ctx.lambda, cfg.isp.pattern_max, cfg.isp.radius)
        .op("tune_commensurate")?;
    if target.distance > 0.5 {
        warnings.push(format!(
            "nearest commensurate eigenvalues are {:.3e} away; the background will be strongly perturbed",
            target.distance
        ));
    }
    NonlinearContext::new(
        ctx,
        ab.omegas,
        target,
        cfg.grid.x_points,
        solver_options(cfg),
    )
    .op("nonlinear context")
}

fn amplitudes(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    cfg.solver
        .t
        .clone()
        .ok_or_else(|| CliError::validation("solver.t", "amplitudes are required for this command"))
}

fn column(m: &nalgebra::DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

// ----------------------------------------------------------------- commands

fn select_b_cmd(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let c = closeness(cfg);
    let sel = select_b(cfg.n, cfg.d, c, base_resolution(cfg)).op("select_b")?;
    #[derive(Serialize)]
    struct Out<'a> {
        n: usize,
        d: f64,
        closeness: f64,
        #[serde(flatten)]
        selection: &'a BSelection,
    }
    Ok(vec![json(&Out {
        n: cfg.n,
        d: cfg.d,
        closeness: c,
        selection: &sel,
    })
    .named("select_b.json")])
}

fn spectrum_cmd(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let b = resolve_b(cfg, warnings)?;
    let stream = linear_stream(b, cfg.d, base_resolution(cfg)).op("linear_stream")?;
    let count = cfg.spectrum.count.unwrap_or(cfg.n + 2);
    let spec = sturm_liouville_spectrum(&stream, &VorticityModel::linear(b), count, None)
        .op("sturm_liouville_spectrum")?;
    if spec.negative_count != cfg.n {
        warnings.push(format!(
            "b = {b} has {} negative eigenvalues, not n = {}",
            spec.negative_count, cfg.n
        ));
    }
    let mu = spec.mu();
    #[derive(Serialize)]
    struct Out {
        b: f64,
        d: f64,
        kappa: f64,
        negative_count: usize,
        mu: Vec<f64>,
        characteristic_residual: Vec<f64>,
        dirichlet: Vec<f64>,
        bernoulli_r: f64,
        surface_slope: f64,
    }
    let out = Out {
        b,
        d: cfg.d,
        kappa: spec.kappa,
        negative_count: spec.negative_count,
        characteristic_residual: mu
            .iter()
            .map(|&m| characteristic_residual(b, cfg.d, spec.kappa, m))
            .collect(),
        dirichlet: dirichlet_spectrum(b, cfg.d, count),
        mu,
        bernoulli_r: stream.r(),
        surface_slope: stream.slope_at_surface,
    };
    let z = &stream.z_grid;
    let mut header = vec!["z".to_string()];
    header.extend((1..=count).map(|j| format!("phi_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut cols: Vec<&[f64]> = vec![z];
    cols.extend(spec.pairs.iter().map(|p| p.phi.as_slice()));
    let mut arts = vec![
        json(&out).named("spectrum.json"),
        csv(&["z", "u", "u_prime"], &[z, &stream.u, &stream.u_prime]).named("stream.csv"),
        dat(["z", "u"], z, &stream.u).named("u.dat"),
        csv(&header, &cols).named("eigenfunctions.csv"),
    ];
    for (j, p) in spec.pairs.iter().enumerate() {
        arts.push(dat(["z", "phi"], z, &p.phi).named(format!("phi_{}.dat", j + 1)));
    }
    Ok(arts)
}

fn isp_jacobian_cmd(
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<Artifact>, CliError> {
    let b = resolve_b(cfg, warnings)?;
    let ctx = isp_context(cfg, b)?;
    let (basis, _) = basis(cfg, &ctx)?;
    let analytic = jacobian_analytic(&ctx, &basis).op("jacobian_analytic")?;
    let fd: RichardsonFd =
        jacobian_fd_richardson(&ctx, &basis, cfg.isp.fd_step).op("jacobian_fd")?;
    if !fd.confirmed {
        warnings.push(format!(
            "Richardson check not confirmed (ratio {:.3}, spread {:.3e})",
            fd.ratio, fd.spread
        ));
    }
    let mut rel = 0.0f64;
    for l in 0..cfg.n {
        for j in 0..cfg.n {
            let a = analytic.entries[l][j];
            let f = fd.jacobian.entries[l][j];
            rel = rel.max((a - f).abs() / a.abs().max(f.abs()).max(1e-300));
        }
    }
    #[derive(Serialize)]
    struct Out<'a> {
        b: f64,
        d: f64,
        basis: BasisKind,
        lambda: &'a [f64],
        analytic: &'a IspJacobian,
        finite_difference: &'a RichardsonFd,
        max_relative_difference: f64,
    }
    Ok(vec![json(&Out {
        b,
        d: cfg.d,
        basis: cfg.isp.basis,
        lambda: &ctx.lambda,
        analytic: &analytic,
        finite_difference: &fd,
        max_relative_difference: rel,
    })
    .named("isp_jacobian.json")])
}

fn build_basis_cmd(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let b = resolve_b(cfg, warnings)?;
    let ctx = isp_context(cfg, b)?;
    let ab = adapted_basis(&ctx).op("adapted_basis")?;
    let jac = jacobian_analytic(&ctx, &ab.omegas).op("jacobian_analytic")?;
    #[derive(Serialize)]
    struct Out<'a> {
        b: f64,
        d: f64,
        candidates: usize,
        #[serde(flatten)]
        basis: &'a AdaptedBasis,
        jacobian: &'a IspJacobian,
    }
    let p: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    let values: Vec<Vec<f64>> = ab
        .omegas
        .iter()
        .map(|w| p.iter().map(|&x| w.value(x)).collect())
        .collect();
    let mut header = vec!["p".to_string()];
    header.extend((1..=cfg.n).map(|j| format!("omega_{j}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut cols: Vec<&[f64]> = vec![&p];
    cols.extend(values.iter().map(Vec::as_slice));
    let mut arts = vec![
        json(&Out {
            b,
            d: cfg.d,
            candidates: ctx.candidates.len(),
            basis: &ab,
            jacobian: &jac,
        })
        .named("basis.json"),
        csv(&header, &cols).named("basis.csv"),
    ];
    for (j, v) in values.iter().enumerate() {
        arts.push(dat(["p", "omega"], &p, v).named(format!("omega_{}.dat", j + 1)));
    }
    Ok(arts)
}

fn tune_mu_cmd(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let b = resolve_b(cfg, warnings)?;
    let ctx = isp_context(cfg, b)?;
    let (basis, _) = basis(cfg, &ctx)?;
    let commensurate = match &cfg.isp.target {
        Some(_) => None,
        None => Some(
            tune_commensurate(&ctx.lambda, cfg.isp.pattern_max, cfg.isp.radius)
                .op("tune_commensurate")?,
        ),
    };
    let target = cfg.isp.target.clone().unwrap_or_else(|| {
        commensurate
            .as_ref()
            .map(|c| c.mu_star.clone())
            .unwrap_or_default()
    });
    let inv: Inversion =
        invert_t(&target, &ctx, &basis, None, None, &invert_options(cfg)).op("invert_T")?;
    #[derive(Serialize)]
    struct Out<'a> {
        b: f64,
        d: f64,
        lambda: &'a [f64],
        #[serde(skip_serializing_if = "Option::is_none")]
        commensurate: Option<&'a Commensurate>,
        target: &'a [f64],
        delta: &'a [f64],
        mu: &'a [f64],
        residual: f64,
        iterations: usize,
        history: &'a [f64],
    }
    let residual = inv
        .eval
        .mu
        .iter()
        .zip(&target)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(vec![
        json(&Out {
            b,
            d: cfg.d,
            lambda: &ctx.lambda,
            commensurate: commensurate.as_ref(),
            target: &target,
            delta: &inv.delta,
            mu: &inv.eval.mu,
            residual,
            iterations: inv.iterations,
            history: &inv.history,
        })
        .named("tune_mu.json"),
        toml_text(&inv.eval.model).named("vorticity.toml"),
    ])
}

fn eta_artifacts(field: &WaveField) -> Vec<Artifact> {
    let x = field.full_x();
    let eta = field.full_eta();
    vec![
        csv(&["x", "eta"], &[&x, &eta]).named("eta.csv"),
        dat(["x", "eta"], &x, &eta).named("eta.dat"),
    ]
}

fn linear_wave_cmd(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let t = amplitudes(cfg)?;
    let ctx = nonlinear_context(cfg, warnings)?;
    let modal = ctx.modal_state(t).op("modal_state")?;
    let bg = &ctx.background_star;
    let field = assemble_linear(&modal, bg, &ctx.grid).op("assemble_linear")?;
    let (hat, _) = to_physical(&field, &field.eta, &bg.stream).op("to_physical")?;
    let report =
        residual_strip(&hat, &field.eta, &bg.model, bg.r, bg, &ctx.grid).op("residual_strip")?;
    #[derive(Serialize)]
    struct Out<'a> {
        t: &'a [f64],
        b: f64,
        pattern: &'a [u32],
        k: &'a [f64],
        lambda_star: f64,
        mu_star: &'a [f64],
        delta_star: &'a [f64],
        residual: &'a ResidualReport,
    }
    let mut arts = vec![json(&Out {
        t: &modal.t,
        b: ctx.isp.b,
        pattern: &modal.pattern,
        k: &modal.k,
        lambda_star: modal.lambda_star,
        mu_star: &modal.mu_star,
        delta_star: &ctx.delta_star,
        residual: &report,
    })
    .named("linear_wave.json")];
    arts.extend(eta_artifacts(&field));
    Ok(arts)
}

fn solve_cmd(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let t = amplitudes(cfg)?;
    let ctx = nonlinear_context(cfg, warnings)?;
    let sol = lyapunov_schmidt_solve(&t, &ctx).op("lyapunov_schmidt_solve")?;
    #[derive(Serialize)]
    struct Out<'a> {
        t: &'a [f64],
        b: f64,
        pattern: &'a [u32],
        k: &'a [f64],
        lambda_star: f64,
        mu_star: &'a [f64],
        mu: &'a [f64],
        delta: &'a [f64],
        iterations: usize,
        residual_history: &'a [f64],
        residual: &'a ResidualReport,
        g: &'a [f64],
        zeta_sup: &'a [f64],
        eta_nonlinear: f64,
        tilde_defect: f64,
        admissibility: Admissibility,
    }
    let mut arts = vec![json(&Out {
        t: &t,
        b: ctx.isp.b,
        pattern: &ctx.target.pattern,
        k: &ctx.target.k,
        lambda_star: ctx.target.lambda_star,
        mu_star: &ctx.target.mu_star,
        mu: &sol.mu,
        delta: &sol.state.delta,
        iterations: sol.state.iteration,
        residual_history: &sol.state.residual_history,
        residual: &sol.report,
        g: &sol.g,
        zeta_sup: &sol.zeta_sup,
        eta_nonlinear: sol.eta_nonlinear,
        tilde_defect: sol.tilde_defect,
        admissibility: admissibility(&t, cfg.solver.epsilon, cfg.solver.delta_bound),
    })
    .named("solve.json")];
    arts.extend(eta_artifacts(&sol.field));
    arts.push(toml_text(&sol.background.model).named("vorticity.toml"));
    if let Some(parts) = &sol.field.modal {
        let x = ctx.grid.half_x();
        let mut header = vec!["x".to_string()];
        header.extend((1..=cfg.n).map(|j| format!("a_{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut cols: Vec<&[f64]> = vec![&x];
        cols.extend(parts.amplitudes.iter().map(Vec::as_slice));
        arts.push(csv(&header, &cols).named("modal.csv"));
        for (j, a) in parts.amplitudes.iter().enumerate() {
            arts.push(dat(["x", "a"], &x, a).named(format!("modal_{}.dat", j + 1)));
        }
    }
    let x = ctx.grid.half_x();
    let (mut xs, mut zs, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for (p, &xp) in x.iter().enumerate() {
        let row = column(&sol.field.values.transpose(), p);
        for (i, v) in row.into_iter().enumerate() {
            xs.push(xp);
            zs.push(sol.field.z[i]);
            vs.push(v);
        }
    }
    arts.push(csv(&["x", "z", "phi"], &[&xs, &zs, &vs]).named("field.csv"));
    Ok(arts)
}

fn scan_cmd(cfg: &RunConfig, warnings: &mut Vec<String>) -> Result<Vec<Artifact>, CliError> {
    let ctx = nonlinear_context(cfg, warnings)?;
    let dir = cfg
        .scan
        .direction
        .clone()
        .unwrap_or_else(|| vec![1.0; cfg.n]);
    let report =
        amplitude_scaling_study(&ctx, &dir, &cfg.scan.amplitudes).op("amplitude_scaling_study")?;
    let col = |f: fn(&nonlinear::ScalingSample) -> f64| -> Vec<f64> {
        report.samples.iter().map(f).collect()
    };
    let a = col(|s| s.amplitude);
    let z = col(|s| s.zeta_sup);
    let g = col(|s| s.g_max);
    let e = col(|s| s.eta_nonlinear);
    let it = col(|s| s.iterations as f64);
    let r = col(|s| s.residual);
    Ok(vec![
        json(&report).named("scan.json"),
        csv(
            &[
                "amplitude",
                "zeta_sup",
                "g_max",
                "eta_nonlinear",
                "iterations",
                "residual",
            ],
            &[&a, &z, &g, &e, &it, &r],
        )
        .named("scan.csv"),
    ])
}
