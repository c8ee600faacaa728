//! Subcommands behind the `choquard` binary: run a configuration, persist
//! every artifact and map the outcome onto the exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::diagnostics::{concentration_metrics, decay_fit, ConcentrationMetrics, DecayFit};
use crate::energy::EnergyReport;
use crate::error::{Error, Result};
use crate::io::write_field;
use crate::model::{Field, Grid};
use crate::plot::Plot;
use crate::solvers::{
    ground_state_from, ground_state_limit, resample_radial, semiclassical_solve, Peak, SeedProfile, SolveFlags,
    SolveResult,
};
use crate::verify::{self, Fault};

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exit {
    Ok,
    /// Invalid configuration or unwritable output directory.
    Config,
    /// No convergence, a numerical failure, or an active truncation.
    NotConverged,
    /// The run collapsed: possible nonexistence of a ground state.
    Nonexistence,
    /// Converged with the penalty active.
    Penalty,
    /// The verify battery found a failing check.
    VerifyFailed,
}

impl Exit {
    pub fn code(self) -> i32 {
        match self {
            Exit::Ok => 0,
            Exit::Config => 1,
            Exit::NotConverged => 2,
            Exit::Nonexistence => 3,
            Exit::Penalty => 4,
            Exit::VerifyFailed => 5,
        }
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed_profile: Option<SeedProfile>,
}

fn load(path: &Path, overrides: &Overrides) -> std::result::Result<RunConfig, Exit> {
    let mut cfg = RunConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        Exit::Config
    })?;
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = &overrides.seed_profile {
        cfg.solver.seed_profile = seed.clone();
    }
    fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", cfg.output_dir.display());
        Exit::Config
    })?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundStateRecord {
    pub config: RunConfig,
    pub energy: EnergyReport,
    pub grad_norm: f64,
    pub pohozaev_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: SolveFlags,
    pub peak: Peak,
    pub threshold: Option<f64>,
    pub threshold_margin: Option<f64>,
    pub decay: Option<DecayFit>,
    pub exit: Exit,
}

/// One row of the sweep summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    #[serde(rename = "dist_to_M")]
    pub dist_to_m: f64,
    pub profile_gap: f64,
    /// Decay rate in original coordinates, `c / ε`.
    pub c_fit: f64,
    #[serde(rename = "Q_value")]
    pub q_value: f64,
    pub energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsRecord {
    pub eps: f64,
    pub energy: EnergyReport,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub flags: SolveFlags,
    pub peak: Peak,
    pub peak_original: [f64; 3],
    pub max_value: f64,
    pub kappa: f64,
    pub cap: f64,
    pub distance_from_initial: f64,
    pub metrics: ConcentrationMetrics,
    /// Fit in rescaled coordinates.
    pub decay: Option<DecayFit>,
    pub exit: Exit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiclassicalRecord {
    pub config: RunConfig,
    pub reference_energy: f64,
    pub runs: Vec<EpsRecord>,
    pub rows: Vec<SweepRow>,
    pub exit: Exit,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Input(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Input(e.to_string()))).collect()
}

/// `(distance from peak, u)` along the first axis through the peak.
fn profile_line(u: &Field, peak: [f64; 3]) -> Vec<(f64, f64)> {
    match u.grid() {
        Grid::Radial(g) => (0..g.n).map(|i| (g.node(i), u.values()[i])).collect(),
        Grid::Box(b) => {
            let c = b.split(u.argmax());
            (0..b.n)
                .map(|i| (b.coord(i) - peak[0], u.values()[b.index(i, c[1], c[2])]))
                .filter(|(d, _)| *d >= 0.0)
                .collect()
        }
    }
}

fn write_profile(dir: &Path, u: &Field, peak: [f64; 3], title: &str) -> Result<()> {
    let line = profile_line(u, peak);
    let mut w = csv::Writer::from_path(dir.join("profile.csv")).map_err(|e| Error::Input(e.to_string()))?;
    w.write_record(["r", "u"]).map_err(|e| Error::Input(e.to_string()))?;
    for (r, v) in &line {
        w.write_record([r.to_string(), v.to_string()]).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    let svg = Plot::new(title, "distance from peak", "u", true).add("u", line).to_svg();
    fs::write(dir.join("profile.svg"), svg)?;
    Ok(())
}

fn write_history(dir: &Path, history: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("history.csv")).map_err(|e| Error::Input(e.to_string()))?;
    w.write_record(["iteration", "energy"]).map_err(|e| Error::Input(e.to_string()))?;
    for (k, e) in history.iter().enumerate() {
        w.write_record([k.to_string(), e.to_string()]).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn ground_state_exit(r: &SolveResult) -> Exit {
    if r.flags.possible_nonexistence {
        Exit::Nonexistence
    } else if r.converged {
        Exit::Ok
    } else {
        Exit::NotConverged
    }
}

fn energy_lines(e: &EnergyReport) -> String {
    format!(
        "energy = {:.12e}\nkinetic = {:.12e}\nmass_term = {:.12e}\nnonlocal = {:.12e}\npenalty = {:.12e}\n",
        e.total, e.kinetic, e.mass_term, e.nonlocal, e.penalty
    )
}

fn groundstate_report(rec: &GroundStateRecord) -> String {
    let mut s = format!("backend = {}\n", rec.config.grid.backend_name());
    s.push_str(&energy_lines(&rec.energy));
    s.push_str(&format!(
        "gradient_norm = {:.6e}\npohozaev_residual = {:.6e}\niterations = {}\nconverged = {}\n",
        rec.grad_norm, rec.pohozaev_residual, rec.iterations, rec.converged
    ));
    if let (Some(t), Some(m)) = (rec.threshold, rec.threshold_margin) {
        s.push_str(&format!("mp_threshold = {t:.12e}\nthreshold_margin = {m:.6e}\n"));
    }
    match &rec.decay {
        Some(d) => s.push_str(&format!("decay_rate = {:.6e}\ndecay_nodes = {}\n", d.c, d.nodes)),
        None => s.push_str("decay_rate = unavailable\n"),
    }
    s.push_str(&format!(
        "peak_value = {:.6e}\npossible_nonexistence = {}\nstalled = {}\nexit_code = {}\n",
        rec.peak.value,
        rec.flags.possible_nonexistence,
        rec.flags.stalled,
        rec.exit.code()
    ));
    s
}

fn solve_ground_state(cfg: &RunConfig) -> std::result::Result<SolveResult, Exit> {
    ground_state_limit(&cfg.problem, cfg.grid, &cfg.solver).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Config(_) | Error::Domain(_) => Exit::Config,
            _ => Exit::NotConverged,
        }
    })
}

fn outputs_failed(e: Error) -> Exit {
    eprintln!("error: writing results: {e}");
    Exit::Config
}

/// Ground state of the limit problem with the full diagnostic set.
pub fn cmd_groundstate(config: &Path, overrides: &Overrides) -> Exit {
    let cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let r = match solve_ground_state(&cfg) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let exit = ground_state_exit(&r);
    let decay = decay_fit(&r.u, r.peak.position).ok();
    let rec = GroundStateRecord {
        config: cfg.clone(),
        energy: r.energy,
        grad_norm: r.grad_norm,
        pohozaev_residual: r.pohozaev_residual,
        iterations: r.iterations,
        converged: r.converged,
        flags: r.flags,
        peak: r.peak,
        threshold: r.threshold,
        threshold_margin: r.threshold_margin(),
        decay,
        exit,
    };
    let dir = &cfg.output_dir;
    let written = (|| -> Result<()> {
        write_json(&dir.join("result.json"), &rec)?;
        write_field(
            &dir.join("field.bin"),
            &r.u,
            &[("energy".into(), format!("{:e}", r.energy.total)), ("kind".into(), "ground_state".into())],
        )?;
        fs::write(dir.join("report.txt"), groundstate_report(&rec))?;
        write_profile(dir, &r.u, r.peak.position, "ground state profile")?;
        write_history(dir, &r.energy_history)
    })();
    if let Err(e) = written {
        return outputs_failed(e);
    }
    print!("{}", groundstate_report(&rec));
    exit
}

/// Exit code of one ε; a run only counts as penalty-active once the gradient has converged.
fn eps_exit(r: &SolveResult, tol_grad: f64) -> Exit {
    if r.flags.penalty_active && r.grad_norm <= tol_grad {
        Exit::Penalty
    } else if r.converged && !r.flags.truncation_active {
        Exit::Ok
    } else {
        Exit::NotConverged
    }
}

fn eps_report(rec: &EpsRecord, row: &SweepRow) -> String {
    let mut s = format!("eps = {}\n", rec.eps);
    s.push_str(&energy_lines(&rec.energy));
    s.push_str(&format!(
        "gradient_norm = {:.6e}\niterations = {}\nconverged = {}\ndist_to_M = {:.6e}\nprofile_gap = {:.6e}\n\
         c_fit = {:.6e}\nmax_value = {:.6e}\nkappa = {:.6e}\npenalty_active = {}\ntruncation_active = {}\n\
         exit_code = {}\n",
        rec.grad_norm,
        rec.iterations,
        rec.converged,
        row.dist_to_m,
        row.profile_gap,
        row.c_fit,
        rec.max_value,
        rec.kappa,
        rec.flags.penalty_active,
        rec.flags.truncation_active,
        rec.exit.code()
    ));
    s
}

/// The ε sweep: reference profile, one penalized solve per ε, sweep summary.
pub fn cmd_semiclassical(config: &Path, overrides: &Overrides) -> Exit {
    let cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let Some(sweep) = cfg.semiclassical.clone() else {
        eprintln!("error: {}: no \"semiclassical\" block", config.display());
        return Exit::Config;
    };
    let Grid::Box(bg) = sweep.grid else {
        eprintln!("error: semiclassical grid must use the box backend");
        return Exit::Config;
    };
    let pot = match cfg.potential_spec() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return Exit::Config;
        }
    };
    let mut ref_cfg = cfg.clone();
    ref_cfg.grid = sweep.reference_grid;
    let coarse = match solve_ground_state(&ref_cfg) {
        Ok(r) => r,
        Err(code) => return code,
    };
    let reference = match ground_state_exit(&coarse) {
        Exit::Ok if coarse.u.grid() == &sweep.grid => coarse,
        Exit::Ok => {
            let seeded = resample_radial(&coarse.u, sweep.grid, [0.0; 3])
                .and_then(|seed| ground_state_from(&cfg.problem, &seed, &cfg.solver));
            match seeded {
                Ok(r) if ground_state_exit(&r) == Exit::Ok => r,
                Ok(r) => return ground_state_exit(&r),
                Err(e) => {
                    eprintln!("error: reference profile on the sweep box: {e}");
                    return Exit::NotConverged;
                }
            }
        }
        code => {
            eprintln!("error: the reference ground state did not converge");
            return code;
        }
    };

    let dir = cfg.output_dir.clone();
    if let Err(e) = fs::create_dir_all(dir.join("reference"))
        .map_err(Error::from)
        .and_then(|_| write_field(&dir.join("reference").join("field.bin"), &reference.u, &[]))
    {
        return outputs_failed(e);
    }

    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut exit = Exit::Ok;
    for &eps in &sweep.eps {
        let sc = sweep.at(eps);
        let out = match semiclassical_solve(&cfg.problem, &pot, &sc, &cfg.solver, &bg, &reference.u) {
            Ok(o) => o,
            Err(e) => {
                eprintln!("error: eps = {eps}: {e}");
                exit = exit.max(Exit::NotConverged);
                continue;
            }
        };
        let metrics = match concentration_metrics(&out, &pot, &reference.u) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("error: eps = {eps}: {e}");
                exit = exit.max(Exit::NotConverged);
                continue;
            }
        };
        let r = &out.result;
        let decay = decay_fit(&r.u, r.peak.position).ok();
        let code = eps_exit(r, cfg.solver.tol_grad);
        exit = exit.max(code);
        let rec = EpsRecord {
            eps,
            energy: r.energy,
            grad_norm: r.grad_norm,
            iterations: r.iterations,
            converged: r.converged,
            flags: r.flags,
            peak: r.peak,
            peak_original: out.peak_original,
            max_value: r.u.max(),
            kappa: out.kappa,
            cap: out.cap,
            distance_from_initial: out.distance_from_initial,
            metrics,
            decay,
            exit: code,
        };
        let row = SweepRow {
            eps,
            dist_to_m: metrics.dist_to_m,
            profile_gap: metrics.profile_gap,
            c_fit: decay.map_or(f64::NAN, |d| d.c / eps),
            q_value: r.energy.penalty,
            energy: r.energy.total,
        };
        let sub = dir.join(format!("eps_{eps}"));
        let written = (|| -> Result<()> {
            fs::create_dir_all(&sub)?;
            write_json(&sub.join("result.json"), &rec)?;
            write_field(
                &sub.join("field.bin"),
                &r.u,
                &[("eps".into(), eps.to_string()), ("energy".into(), format!("{:e}", r.energy.total))],
            )?;
            fs::write(sub.join("report.txt"), eps_report(&rec, &row))?;
            write_profile(&sub, &r.u, r.peak.position, &format!("semiclassical profile, eps = {eps}"))?;
            write_history(&sub, &r.energy_history)
        })();
        if let Err(e) = written {
            return outputs_failed(e);
        }
        println!(
            "eps = {eps}: energy {:.10e}, dist_to_M {:.3e}, profile_gap {:.3e}, c_fit {:.4}, Q {:.3e}, exit {}",
            row.energy,
            row.dist_to_m,
            row.profile_gap,
            row.c_fit,
            row.q_value,
            code.code()
        );
        runs.push(rec);
        rows.push(row);
    }

    let rec = SemiclassicalRecord {
        config: cfg.clone(),
        reference_energy: reference.energy.total,
        runs,
        rows: rows.clone(),
        exit,
    };
    let written = (|| -> Result<()> {
        write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
        write_json(&dir.join("result.json"), &rec)?;
        let pts = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.eps.log2(), f(r))).collect::<Vec<_>>();
        let svg = Plot::new("concentration sweep", "log2 eps", "value", true)
            .add("profile_gap", pts(|r| r.profile_gap))
            .add("dist_to_M", pts(|r| r.dist_to_m))
            .add("c_fit", pts(|r| r.c_fit))
            .to_svg();
        fs::write(dir.join("sweep.svg"), svg)?;
        let mut report = format!("reference_energy = {:.12e}\n", reference.energy.total);
        for r in &rows {
            report.push_str(&format!(
                "eps = {} dist_to_M = {:.6e} profile_gap = {:.6e} c_fit = {:.6e} Q_value = {:.6e} energy = {:.12e}\n",
                r.eps, r.dist_to_m, r.profile_gap, r.c_fit, r.q_value, r.energy
            ));
        }
        report.push_str(&format!("exit_code = {}\n", exit.code()));
        fs::write(dir.join("report.txt"), report)
            .map_err(Error::from)
    })();
    if let Err(e) = written {
        return outputs_failed(e);
    }
    exit
}

/// Run the self-test battery; the report goes to stdout and, with `out`,
/// to `out/verify_report.txt`.
pub fn cmd_verify(out: Option<&Path>, fault: Option<Fault>) -> Exit {
    let report = verify::run(fault);
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        let written = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("verify_report.txt"), &text));
        if let Err(e) = written {
            return outputs_failed(e.into());
        }
    }
    if report.passed() {
        Exit::Ok
    } else {
        Exit::VerifyFailed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RadialGrid;

    fn result(grad_norm: f64, converged: bool, flags: SolveFlags) -> SolveResult {
        let grid = Grid::Radial(RadialGrid::new(1.0, 16).unwrap());
        SolveResult {
            u: Field::zeros(grid),
            energy: EnergyReport::default(),
            grad_norm,
            pohozaev_residual: 0.0,
            iterations: 1,
            converged,
            peak: Peak { position: [0.0; 3], value: 0.0 },
            flags,
            energy_history: vec![],
            threshold: None,
        }
    }

    #[test]
    fn exit_codes_follow_the_flags() {
        let clean = SolveFlags::default();
        let penalty = SolveFlags { penalty_active: true, ..clean };
        let truncation = SolveFlags { truncation_active: true, ..clean };
        let collapse = SolveFlags { possible_nonexistence: true, ..clean };
        assert_eq!(eps_exit(&result(1e-7, true, clean), 1e-6), Exit::Ok);
        assert_eq!(eps_exit(&result(1e-7, false, penalty), 1e-6), Exit::Penalty);
        assert_eq!(eps_exit(&result(1e-2, false, penalty), 1e-6), Exit::NotConverged);
        assert_eq!(eps_exit(&result(1e-7, false, truncation), 1e-6), Exit::NotConverged);
        assert_eq!(ground_state_exit(&result(1.0, false, collapse)), Exit::Nonexistence);
        assert_eq!(ground_state_exit(&result(1e-7, true, clean)), Exit::Ok);
        assert_eq!(ground_state_exit(&result(1.0, false, clean)), Exit::NotConverged);
        let codes: Vec<i32> = [Exit::Ok, Exit::Config, Exit::NotConverged, Exit::Nonexistence, Exit::Penalty, Exit::VerifyFailed]
            .iter()
            .map(|e| e.code())
            .collect();
        assert_eq!(codes, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn sweep_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow { eps: 0.5, dist_to_m: 0.0, profile_gap: 0.1, c_fit: 3.2, q_value: 0.0, energy: 0.41 },
            SweepRow { eps: 0.25, dist_to_m: 1e-3, profile_gap: 0.05, c_fit: f64::NAN, q_value: 2.5e-7, energy: 0.39 },
        ];
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &rows).unwrap();
        let back = read_sweep_csv(&path).unwrap();
        assert_eq!(back[0], rows[0]);
        assert!(back[1].c_fit.is_nan() && back[1].q_value == rows[1].q_value);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("eps,dist_to_M,profile_gap,c_fit,Q_value,energy"));
    }
}
