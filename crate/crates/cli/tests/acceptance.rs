//! End-to-end acceptance checks. One PASS/FAIL line per criterion.
//!
//! Exits 0 after reporting; set `VORWAVE_ACCEPTANCE_STRICT=1` to exit 1 on any FAIL.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vorwave_core::isp::{jacobian_folded, mode_profile};
use vorwave_core::nonlinear::{apply_linear, loglog_fit, modal_correction};
use vorwave_core::spectrum::{characteristic_residual, default_closeness};
use vorwave_core::*;

type Check = std::result::Result<String, String>;

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn within(elapsed: Duration, limit_s: f64) -> Check {
    if elapsed.as_secs_f64() < limit_s {
        Ok(String::new())
    } else {
        Err(format!(
            "took {:.1}s, limit {limit_s}s",
            elapsed.as_secs_f64()
        ))
    }
}

fn stream_oracle() -> Check {
    let start = Instant::now();
    let s = solve_stream(
        &VorticityModel::linear(1.0),
        1.0,
        1e-12,
        Resolution::default(),
    )
    .map_err(|e| e.to_string())?;
    if s.u.len() != 513 {
        return Err(format!("{} nodes", s.u.len()));
    }
    let exact: Vec<f64> = s.z_grid.iter().map(|z| z.sin() / 1f64.sin()).collect();
    let err = sup_diff(&s.u, &exact);
    let k = s.slope_at_surface;
    let bern = 3.0 * s.r() - k * k - 2.0;
    within(start.elapsed(), 1.0)?;
    let msg = format!("sup error {err:.2e}, Bernoulli identity {bern:.1e}");
    // 3r is formed from the slope; allow the last-bit rounding of the division by 3
    if err <= 1e-10 && bern.abs() <= 4.0 * f64::EPSILON * (k * k + 2.0) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn dirichlet() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &(b, d) in &[(1.0, 1.0), (11.0, 1.0), (5.0, 2.0)] {
        let got = dirichlet_spectrum(b, d, 10);
        for (j, g) in got.iter().enumerate() {
            let x = PI * (j + 1) as f64 / d;
            worst = worst.max((g - (x * x - b)).abs());
        }
    }
    within(start.elapsed(), 1.0)?;
    let msg = format!("max deviation {worst:.1e} over j <= 10");
    if worst <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn realization() -> Check {
    let start = Instant::now();
    let mut bs = Vec::new();
    for n in 1..=4 {
        let sel = select_b(n, 1.0, default_closeness(1.0), Resolution::default())
            .map_err(|e| format!("N={n}: {e}"))?;
        if sel.negative_count != n {
            return Err(format!("N={n}: count {}", sel.negative_count));
        }
        let sb = sel.b.sqrt();
        for j in 1..=64 {
            if (sb - PI * j as f64 / 2.0).abs() < 1e-9 {
                return Err(format!(
                    "N={n}: b={} hits sqrt(b) = pi j/2d at j={j}",
                    sel.b
                ));
            }
        }
        let dir = &sel.dirichlet;
        let mu = &sel.mu;
        let mut ok = mu[0] < dir[0];
        for j in 1..n {
            if dir[j - 1] < 0.0 {
                ok &= dir[j - 1] < mu[j] && mu[j] < dir[j];
            }
        }
        if !ok || !sel.interlacing {
            return Err(format!(
                "N={n}: interlacing fails, mu={mu:?} dirichlet={dir:?}"
            ));
        }
        bs.push(format!("{:.3}", sel.b));
    }
    within(start.elapsed(), 30.0)?;
    Ok(format!("b = [{}]", bs.join(", ")))
}

fn characteristic() -> Check {
    let mut worst = 0.0f64;
    let mut count = 0;
    for &(b, d) in &[
        (1.0, 1.0),
        (29.86, 1.0),
        (47.0, 1.0),
        (5.0, 2.0),
        (89.9, 1.0),
    ] {
        let s = linear_stream(b, d, Resolution::default()).map_err(|e| e.to_string())?;
        let sp = sturm_liouville_spectrum(&s, &VorticityModel::linear(b), 8, None)
            .map_err(|e| e.to_string())?;
        for p in &sp.pairs {
            worst = worst.max(characteristic_residual(b, d, sp.kappa, p.mu).abs());
            count += 1;
        }
    }
    let msg = format!("{count} eigenvalues, max residual {worst:.1e}");
    if worst < 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn jacobians() -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut failed = false;
    for &(b, n) in &[(47.0, 2), (73.5, 3)] {
        let ctx = IspContext::with_defaults(b, 1.0, n).map_err(|e| e.to_string())?;
        let generic = make_bump_basis(n, &BumpLayout::Partition { lo: 0.05, hi: 0.95 })
            .map_err(|e| e.to_string())?;
        let adapted = adapted_basis(&ctx).map_err(|e| e.to_string())?.omegas;
        for (name, basis) in [("generic", generic), ("adapted", adapted)] {
            let a = jacobian_analytic(&ctx, &basis).map_err(|e| e.to_string())?;
            let f = jacobian_fd_richardson(&ctx, &basis, 1e-5).map_err(|e| e.to_string())?;
            let scale = a.max_abs();
            let mut rel = 0.0f64;
            for l in 0..n {
                for j in 0..n {
                    let d = (a.entries[l][j] - f.jacobian.entries[l][j]).abs();
                    rel = rel.max(d / a.entries[l][j].abs().max(1e-3 * scale));
                }
            }
            failed |= rel > 1e-3 || !f.confirmed;
            lines.push(format!(
                "N={n} {name}: rel {rel:.1e}{}",
                if f.confirmed {
                    ""
                } else {
                    " (Richardson unconfirmed)"
                }
            ));
        }
    }
    within(start.elapsed(), 120.0)?;
    let msg = lines.join("; ");
    if failed {
        Err(msg)
    } else {
        Ok(msg)
    }
}

fn adapted() -> Check {
    let mut lines = Vec::new();
    let mut failed = false;
    for &(b, n) in &[(47.0, 2), (73.5, 3)] {
        let ctx = IspContext::with_defaults(b, 1.0, n).map_err(|e| e.to_string())?;
        let ab = adapted_basis(&ctx).map_err(|e| e.to_string())?;
        let j = jacobian_analytic(&ctx, &ab.omegas).map_err(|e| e.to_string())?;
        let mut id = 0.0f64;
        for l in 0..n {
            for k in 0..n {
                let e = if l == k { 1.0 } else { 0.0 };
                id = id.max((j.entries[l][k] - e).abs());
            }
        }
        let prof = mode_profile(&ctx).map_err(|e| e.to_string())?;
        let folded = jacobian_folded(&ctx, &prof, &ab.omegas).map_err(|e| e.to_string())?;
        let mut fold = 0.0f64;
        for l in 0..n {
            for k in 0..n {
                fold = fold.max((folded[l][k] - j.entries[l][k]).abs());
            }
        }
        failed |= !(ab.biorthogonality_residual < 1e-6
            && ab.cos_residual < 1e-6
            && id < 1e-3
            && j.condition < 2.0
            && fold < 1e-8);
        lines.push(format!(
            "N={n}: biorthogonality {:.1e}, cos {:.1e}, |J-I| {id:.1e}, cond {:.6}, fold {fold:.1e}",
            ab.biorthogonality_residual, ab.cos_residual, j.condition
        ));
    }
    let msg = lines.join("; ");
    if failed {
        Err(msg)
    } else {
        Ok(msg)
    }
}

fn inversion() -> Check {
    let start = Instant::now();
    let ctx = IspContext::with_defaults(47.0, 1.0, 2).map_err(|e| e.to_string())?;
    let basis = adapted_basis(&ctx).map_err(|e| e.to_string())?.omegas;
    let opts = InvertOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut hit = 0.0f64;
    let mut trip = 0.0f64;
    for _ in 0..4 {
        let target: Vec<f64> = ctx
            .lambda
            .iter()
            .map(|l| l + rng.gen_range(-1e-3..1e-3))
            .collect();
        let inv = invert_t(&target, &ctx, &basis, None, None, &opts).map_err(|e| e.to_string())?;
        hit = hit.max(sup_diff(&inv.eval.mu, &target));
        let delta: Vec<f64> = (0..2).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
        let mu = map_t(&delta, &ctx, &basis).map_err(|e| e.to_string())?.mu;
        let back = invert_t(&mu, &ctx, &basis, None, None, &opts).map_err(|e| e.to_string())?;
        trip = trip.max(sup_diff(&back.delta, &delta));
    }
    within(start.elapsed(), 120.0)?;
    let msg = format!("target residual {hit:.1e}, round trip {trip:.1e}");
    if hit < 1e-8 && trip < 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn linear_residual_slope(
    b: f64,
    n: usize,
    q_max: u32,
) -> std::result::Result<(f64, Vec<f64>), String> {
    let isp = IspContext::with_defaults(b, 1.0, n).map_err(|e| e.to_string())?;
    let basis = adapted_basis(&isp).map_err(|e| e.to_string())?.omegas;
    let target = tune_commensurate(&isp.lambda, q_max, 5.0).map_err(|e| e.to_string())?;
    let ctx = NonlinearContext::new(isp, basis, target, None, SolverOptions::default())
        .map_err(|e| e.to_string())?;
    let bg = &ctx.background_star;
    let amps = [1e-3, 2e-3, 4e-3, 8e-3];
    let mut res = Vec::new();
    for &s in &amps {
        let t = vec![s / (n as f64).sqrt(); n];
        let modal = ctx.modal_state(t).map_err(|e| e.to_string())?;
        let field = assemble_linear(&modal, bg, &ctx.grid).map_err(|e| e.to_string())?;
        let (hat, _) = to_physical(&field, &field.eta, &bg.stream).map_err(|e| e.to_string())?;
        let r = residual_strip(&hat, &field.eta, &bg.model, bg.r, bg, &ctx.grid)
            .map_err(|e| e.to_string())?;
        res.push(r.max());
    }
    Ok((loglog_fit(&amps, &res).slope, res))
}

fn linear_wave() -> Check {
    let start = Instant::now();
    // b chosen so that λ_1/λ_2 = 4 and the N = 2 background needs no perturbation
    let cases = [(1.0, 1, 1), (29.848635460421448, 2, 2), (76.5, 3, 24)];
    let mut lines = Vec::new();
    let mut failed = false;
    for &(b, n, q) in &cases {
        let (slope, res) = linear_residual_slope(b, n, q)?;
        failed |= !(1.85..=2.15).contains(&slope);
        lines.push(format!(
            "N={n} slope {slope:.3} (residual {:.1e}..{:.1e})",
            res[0], res[3]
        ));
    }
    within(start.elapsed(), 120.0)?;
    let msg = lines.join("; ");
    if failed {
        Err(msg)
    } else {
        Ok(msg)
    }
}

fn two_mode_context() -> std::result::Result<NonlinearContext, String> {
    let isp = IspContext::with_defaults(29.86, 1.0, 2).map_err(|e| e.to_string())?;
    let basis = adapted_basis(&isp).map_err(|e| e.to_string())?.omegas;
    let target = tune_commensurate(&isp.lambda, 2, 0.1).map_err(|e| e.to_string())?;
    NonlinearContext::new(isp, basis, target, None, SolverOptions::default())
        .map_err(|e| e.to_string())
}

fn spread(v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = v.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    max / min
}

fn nonlinear_solve(ctx: &NonlinearContext) -> Check {
    let start = Instant::now();
    let mut eta = Vec::new();
    let mut cmu: Vec<Vec<f64>> = vec![Vec::new(); 2];
    let mut worst_res = 0.0f64;
    let mut worst_it = 0;
    for &s in &[1e-3, 5e-4, 2.5e-4] {
        let t = [s, s];
        let adm = admissibility(&t, ctx.options.epsilon, ctx.options.delta_bound);
        if !adm.admissible {
            return Err(adm.describe());
        }
        let sol = lyapunov_schmidt_solve(&t, ctx).map_err(|e| e.to_string())?;
        let bg = &sol.background;
        let (hat, _) =
            to_physical(&sol.field, &sol.field.eta, &bg.stream).map_err(|e| e.to_string())?;
        let grid = CosineGrid::new(sol.field.period, sol.field.m).map_err(|e| e.to_string())?;
        let rep = residual_strip(&hat, &sol.field.eta, &bg.model, bg.r, bg, &grid)
            .map_err(|e| e.to_string())?;
        worst_res = worst_res.max(rep.max());
        worst_it = worst_it.max(sol.state.iteration);
        eta.push(sol.eta_nonlinear);
        let sq = 2.0 * s * s;
        for j in 0..2 {
            cmu[j].push((sol.mu[j] - ctx.target.mu_star[j]).abs() * s / sq);
        }
    }
    let ratios = [eta[0] / eta[1], eta[1] / eta[2]];
    within(start.elapsed(), 300.0)?;
    let cmu_spread = spread(&cmu[0]).max(spread(&cmu[1]));
    let msg = format!(
        "iterations <= {worst_it}, residual {worst_res:.1e}, eta ratios {:.3}/{:.3}, C = {:.3}, C' spread {cmu_spread:.2}",
        ratios[0],
        ratios[1],
        eta[0] / 2e-6
    );
    if worst_it <= 200
        && worst_res < 1e-9
        && ratios.iter().all(|r| (3.5..=4.5).contains(r))
        && cmu_spread < 2.0
    {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn smallness(ctx: &NonlinearContext) -> Check {
    let amps = [2e-3, 1e-3, 5e-4, 2.5e-4];
    let mut lines = Vec::new();
    let mut failed = false;
    for dir in [[1.0, 1.0], [2.0, 1.0], [1.0, 2.0]] {
        let rep = amplitude_scaling_study(ctx, &dir, &amps).map_err(|e| e.to_string())?;
        let zeta: Vec<f64> = rep
            .samples
            .iter()
            .map(|s| s.zeta_sup / s.amplitude.powi(2))
            .collect();
        let mut worst = spread(&zeta);
        for j in 0..2 {
            let g: Vec<f64> = rep
                .samples
                .iter()
                .map(|s| s.g[j] / s.amplitude.powi(2))
                .collect();
            worst = worst.max(spread(&g));
        }
        failed |= worst >= 2.0;
        lines.push(format!("direction {dir:?}: max variation {worst:.2}"));
    }
    let msg = lines.join("; ");
    if failed {
        Err(msg)
    } else {
        Ok(msg)
    }
}

fn manufactured(bg: &Background, grid: &CosineGrid) -> DMatrix<f64> {
    let x = grid.half_x();
    let kb = grid.base_wavenumber();
    let mut v = DMatrix::from_fn(x.len(), bg.z.len(), |p, i| {
        let z = bg.z[i];
        (1.0 + 0.3 * (kb * x[p]).cos() + 0.1 * (3.0 * kb * x[p]).cos())
            * (z * (1.5 - z) + 0.2 * (3.0 * z).sin())
    });
    for p in 0..x.len() {
        let row: Vec<f64> = v.row(p).iter().copied().collect();
        for j in 0..bg.n {
            let c = bg.inner(&row, j);
            for i in 0..bg.z.len() {
                v[(p, i)] -= c * bg.phi[j][i];
            }
        }
    }
    v
}

fn linear_background(ctx: &IspContext) -> std::result::Result<Background, String> {
    Background::new(
        VorticityModel::linear(ctx.b),
        ctx.stream.clone(),
        ctx.spectrum.clone(),
        ctx.n,
    )
    .map_err(|e| e.to_string())
}

fn round_trips() -> Check {
    let mut tilde = 0.0f64;
    for &(b, n) in &[(1.0, 1), (47.0, 2)] {
        let ctx = IspContext::with_defaults(b, 1.0, n).map_err(|e| e.to_string())?;
        let bg = linear_background(&ctx)?;
        let grid = CosineGrid::new(3.1, 32).map_err(|e| e.to_string())?;
        let v = manufactured(&bg, &grid);
        let (f, g) = apply_linear(&v, None, &bg, &grid);
        let (w, _) = solve_tilde(&f, &g, &bg, &grid).map_err(|e| e.to_string())?;
        tilde = tilde.max((&w - &v).amax());
    }
    let grid = CosineGrid::new(5.0, 32).map_err(|e| e.to_string())?;
    let mu_star = -grid.wavenumber(2).powi(2);
    let zeta: Vec<f64> = grid
        .half_x()
        .iter()
        .map(|&x| 0.3 + (grid.wavenumber(1) * x).cos() - 0.2 * (grid.wavenumber(4) * x).cos())
        .collect();
    let rhs: Vec<f64> = grid
        .dxx(&zeta)
        .iter()
        .zip(&zeta)
        .map(|(a, b)| a - mu_star * b)
        .collect();
    let back = grid.values(
        &modal_correction(&grid.coeffs(&rhs), mu_star, 2, &grid).map_err(|e| e.to_string())?,
    );
    let modal = sup_diff(&back, &zeta);

    let coarse = IspContext::with_defaults(1.0, 1.0, 1).map_err(|e| e.to_string())?;
    let fine = IspContext::new(
        1.0,
        1.0,
        1,
        coarse.resolution.doubled(),
        6,
        &vorwave_core::isp::default_layout(),
    )
    .map_err(|e| e.to_string())?;
    let a = inverse_norm_estimate(
        &linear_background(&coarse)?,
        &CosineGrid::new(3.1, 16).unwrap(),
        30,
    )
    .map_err(|e| e.to_string())?;
    let b = inverse_norm_estimate(
        &linear_background(&fine)?,
        &CosineGrid::new(3.1, 32).unwrap(),
        30,
    )
    .map_err(|e| e.to_string())?;
    let drift = ((a - b) / a).abs();
    let msg = format!(
        "tilde {tilde:.1e}, modal {modal:.1e}, inverse norm {a:.4} -> {b:.4} (drift {drift:.1e})"
    );
    if tilde < 1e-8 && modal < 1e-8 && drift < 1e-2 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_solve(dir: &Path, config: &Path) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vorwave"))
        .arg("solve")
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_report.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("wave.toml");
    std::fs::write(
        &config,
        "n = 2\nd = 1.0\nb = 29.86\n\n[solver]\nt = [1e-3, 1e-3]\n",
    )
    .map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_solve(&a, &config)?;
    run_solve(&b, &config)?;
    let (fa, fb) = (data_files(&a), data_files(&b));
    if fa.is_empty() {
        return Err("no data files written".into());
    }
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    if fa == fb {
        Ok(format!(
            "{} identical files: {}",
            fa.len(),
            names.join(", ")
        ))
    } else {
        Err(format!("outputs differ: {}", names.join(", ")))
    }
}

fn main() {
    let mut results: Vec<(usize, &str, Check, Duration)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &dyn Fn() -> Check| {
        let start = Instant::now();
        let r = f();
        let elapsed = start.elapsed();
        let (tag, detail) = match &r {
            Ok(m) => ("PASS", m),
            Err(m) => ("FAIL", m),
        };
        println!(
            "{tag} {id:>2} {name}: {detail} [{:.1}s]",
            elapsed.as_secs_f64()
        );
        results.push((id, name, r, elapsed));
    };
    run(1, "stream closed form", &stream_oracle);
    run(2, "Dirichlet spectrum", &dirichlet);
    run(3, "count realization", &realization);
    run(4, "characteristic equation", &characteristic);
    run(5, "analytic vs FD Jacobian", &jacobians);
    run(6, "adapted basis", &adapted);
    run(7, "ISP inversion", &inversion);
    run(8, "linear-wave residual order", &linear_wave);
    match two_mode_context() {
        Ok(ctx) => {
            run(9, "two-mode nonlinear solve", &|| nonlinear_solve(&ctx));
            run(10, "quadratic smallness", &|| smallness(&ctx));
        }
        Err(e) => {
            run(9, "two-mode nonlinear solve", &|| Err(e.clone()));
            run(10, "quadratic smallness", &|| Err(e.clone()));
        }
    }
    run(11, "operator round trips", &round_trips);
    run(12, "determinism", &determinism);
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| r.2.is_err())
        .map(|r| r.0)
        .collect();
    println!(
        "{}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() && std::env::var_os("VORWAVE_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
