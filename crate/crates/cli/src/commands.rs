use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use microbranch::algebra::{WellCase, WellSpec};
use microbranch::bounds::{classify_bound, phase_diagram, scaling_bound};
use microbranch::constructions::{
    assemble_branched, branching_schedule_with, vertical_branched_k1_with, AssemblyOptions, ConstructionKind,
};
use microbranch::energy::{total_energy, EnergyBreakdown};
use microbranch::field::{PiecewiseDeformation, Rect};
use microbranch::minimizer::{discrete_energy, multi_start, seed_from_construction, DiscreteField, Mesh, MinimizeOptions};
use microbranch::sweep::{fit_branching, run_sweep, SweepConstruction, SweepRow};

use crate::config::RunConfig;
use crate::svg;
use crate::validate;
use crate::Failure;

pub const SWEEP_HEADER: &str = "case,alpha,epsilon,L,H,construction,elastic,tv_bulk,tv_jump,total,bound,ratio";
pub const PHASE_HEADER: &str = "case,alpha,log10_L_over_eps,log10_H_over_eps,regime,bound_value";

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn spec_of(cfg: &RunConfig) -> Result<WellSpec, Failure> {
    WellSpec::new(cfg.case, cfg.alpha).map_err(|e| Failure::Config(e.to_string()))
}

fn out_path(cfg: &RunConfig, name: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    Ok(cfg.out.join(name))
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn csv_row(case: WellCase, alpha: f64, eps: f64, l: f64, h: f64, kind: ConstructionKind, e: &EnergyBreakdown, bound: f64) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}\n",
        case.name(),
        fmt(alpha),
        fmt(eps),
        fmt(l),
        fmt(h),
        kind.label(),
        fmt(e.elastic),
        fmt(e.tv_bulk),
        fmt(e.tv_jump),
        fmt(e.total),
        fmt(bound),
        fmt(e.total / bound)
    )
}

fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s += &csv_row(r.case, r.alpha, r.epsilon, r.length, r.height, r.construction, &r.energy, r.bound);
    }
    s
}

/// Candidate fields honouring the `theta` override.
fn candidates(cfg: &RunConfig, spec: &WellSpec) -> Result<Vec<(ConstructionKind, PiecewiseDeformation)>, Failure> {
    let cfg_err = |e: microbranch::constructions::ConstructionError| Failure::Config(e.to_string());
    let omega = Rect::domain(cfg.length, cfg.height).map_err(|e| Failure::Config(e.to_string()))?;
    let horizontal = || -> Result<PiecewiseDeformation, Failure> {
        let s = branching_schedule_with(cfg.case, cfg.alpha, cfg.epsilon, cfg.length, cfg.height, cfg.theta).map_err(cfg_err)?;
        assemble_branched(spec, &s, omega).map_err(cfg_err)
    };
    let vertical = || vertical_branched_k1_with(spec, cfg.epsilon, cfg.length, cfg.height, cfg.theta, AssemblyOptions::default()).map_err(cfg_err);
    Ok(match cfg.construction {
        SweepConstruction::Horizontal => vec![(ConstructionKind::Horizontal, horizontal()?)],
        SweepConstruction::Vertical => {
            if cfg.case != WellCase::K1 {
                return Err(Failure::Config("the vertical construction exists only for k1".into()));
            }
            vec![(ConstructionKind::Vertical, vertical()?)]
        }
        SweepConstruction::Best => {
            let mut v = vec![(ConstructionKind::Identity, PiecewiseDeformation::identity(omega)), (ConstructionKind::Horizontal, horizontal()?)];
            if cfg.case == WellCase::K1 {
                v.push((ConstructionKind::Vertical, vertical()?));
            }
            v
        }
    })
}

fn evaluated(cfg: &RunConfig, spec: &WellSpec) -> Result<Vec<(ConstructionKind, PiecewiseDeformation, EnergyBreakdown)>, Failure> {
    Ok(candidates(cfg, spec)?
        .into_iter()
        .map(|(k, f)| {
            let e = total_energy(&f, spec, cfg.epsilon, &cfg.quadrature);
            (k, f, e)
        })
        .collect())
}

fn lowest(list: Vec<(ConstructionKind, PiecewiseDeformation, EnergyBreakdown)>) -> (ConstructionKind, PiecewiseDeformation, EnergyBreakdown) {
    list.into_iter()
        .reduce(|a, b| if b.2.total < a.2.total { b } else { a })
        .expect("at least one candidate")
}

fn describe(e: &EnergyBreakdown) -> String {
    format!(
        "elastic={:.6e} tv_bulk={:.6e} tv_jump={:.6e} total={:.6e}{}",
        e.elastic,
        e.tv_bulk,
        e.tv_jump,
        e.total,
        if e.truncated { " (quadrature truncated)" } else { "" }
    )
}

pub fn construct(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = spec_of(cfg)?;
    let (kind, field, energy) = lowest(evaluated(cfg, &spec)?);
    let mut manifest = format!(
        "# case {} alpha {} epsilon {} L {} H {} construction {}\n",
        cfg.case.name(),
        cfg.alpha,
        cfg.epsilon,
        cfg.length,
        cfg.height,
        kind.label()
    );
    manifest += &field.to_manifest();
    let mpath = out_path(cfg, "construction.txt")?;
    write_file(&mpath, &manifest)?;
    let spath = out_path(cfg, "construction.svg")?;
    write_file(&spath, &svg::construction_svg(&field, &spec, 200))?;

    let mut columns: BTreeMap<u64, usize> = BTreeMap::new();
    for b in field.blocks() {
        *columns.entry(b.footprint().x0.to_bits()).or_default() += 1;
    }
    let counts: Vec<String> = columns.values().map(|c| c.to_string()).collect();
    println!("construction {} with {} cells in {} blocks", kind.label(), field.cell_count(), field.block_count());
    println!("blocks per column (left to right): {}", counts.join(" "));
    println!("energy {}", describe(&energy));
    println!("wrote {} and {}", mpath.display(), spath.display());
    Ok(())
}

pub fn energy(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = spec_of(cfg)?;
    let bound = scaling_bound(cfg.case, cfg.alpha, cfg.epsilon, cfg.length, cfg.height);
    let list = evaluated(cfg, &spec)?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (k, _, e) in &list {
        csv += &csv_row(cfg.case, cfg.alpha, cfg.epsilon, cfg.length, cfg.height, *k, e, bound.value);
        println!("{:<10} {}", k.label(), describe(e));
    }
    println!("bound {:.6e} regime {}", bound.value, classify_bound(cfg.case, &bound));
    let path = out_path(cfg, "energy.csv")?;
    write_file(&path, &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = spec_of(cfg)?;
    let rows = run_sweep(&spec, &cfg.epsilons, cfg.length, cfg.height, cfg.construction, &cfg.quadrature)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let path = out_path(cfg, "sweep.csv")?;
    write_file(&path, &sweep_csv(&rows))?;
    println!("wrote {}", path.display());
    let ratios: Vec<f64> = rows.iter().map(SweepRow::ratio).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), r| (a.min(*r), b.max(*r)));
    println!("ratio total/bound in [{lo:.4}, {hi:.4}]");
    let fit = fit_branching(&rows).map_err(|e| Failure::Config(format!("fit refused: {e}")))?;
    println!("slope={:.6} residual={:.3e} points={}", fit.slope, fit.residual, fit.points);
    Ok(())
}

pub fn phase(cfg: &RunConfig) -> Result<(), Failure> {
    let d = phase_diagram(cfg.case, cfg.alpha, cfg.phase).map_err(|e| Failure::Config(e.to_string()))?;
    let mut csv = format!("{PHASE_HEADER}\n");
    for p in &d.points {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            cfg.case.name(),
            fmt(cfg.alpha),
            fmt(p.log_l_over_eps),
            fmt(p.log_h_over_eps),
            p.regime,
            fmt(p.bound.value)
        );
    }
    let cpath = out_path(cfg, "phase.csv")?;
    write_file(&cpath, &csv)?;
    let spath = out_path(cfg, "phase.svg")?;
    write_file(&spath, &svg::phase_svg(&d))?;
    let comps: Vec<String> = d.component_counts().iter().map(|(r, c)| format!("{r}:{c}")).collect();
    println!("regimes (connected components): {}", comps.join(" "));
    println!("wrote {} and {}", cpath.display(), spath.display());
    Ok(())
}

pub fn minimize(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = spec_of(cfg)?;
    let omega = Rect::domain(cfg.length, cfg.height).map_err(|e| Failure::Config(e.to_string()))?;
    let mesh = Mesh::new(cfg.mesh.0, cfg.mesh.1, omega).map_err(|e| Failure::Config(e.to_string()))?;
    let mut report = String::new();
    let mut starts = vec![("identity".to_string(), DiscreteField::identity(mesh.clone()))];
    let mut upper = f64::INFINITY;
    for (kind, def) in candidates(&RunConfig { construction: SweepConstruction::Best, ..cfg.clone() }, &spec)? {
        if kind == ConstructionKind::Identity {
            continue;
        }
        let (seed, res) = seed_from_construction(&def, &mesh).map_err(|e| Failure::Other(e.into()))?;
        if !res.resolved {
            let msg = format!(
                "warning: mesh under-resolves the {} construction ({:.2} cells per finest period)",
                kind.label(),
                res.cells_per_period
            );
            eprintln!("{msg}");
            report += &format!("{msg}\n");
        }
        let e = discrete_energy(&seed, &spec, cfg.epsilon, 0.0).map_err(|e| Failure::Other(e.into()))?;
        upper = upper.min(e.total);
        report += &format!("seed {} discrete energy {}\n", kind.label(), fmt(e.total));
        starts.push((kind.label().to_string(), seed));
    }
    let opts = MinimizeOptions { max_iter: cfg.max_iter, ..Default::default() };
    let ms = multi_start(starts, &spec, cfg.epsilon, &opts).map_err(|e| Failure::Other(e.into()))?;
    for (label, r) in &ms.runs {
        report += &format!(
            "run {label}: elastic {} tv {} total {} iterations {} converged {} gradient_norm {:.3e}\n",
            fmt(r.final_energy.elastic),
            fmt(r.final_energy.tv),
            fmt(r.final_energy.total),
            r.iterations,
            r.converged,
            r.gradient_norm
        );
    }
    let (label, best) = ms.best_run();
    let bound = scaling_bound(cfg.case, cfg.alpha, cfg.epsilon, cfg.length, cfg.height).value;
    let lower = bound / cfg.ratio_c;
    let min = best.final_energy.total;
    let sandwich = min >= lower && min <= upper;
    report += &format!(
        "best {label} {}\nsandwich bound/C {} <= min {} <= construction {}: {}\n",
        fmt(min),
        fmt(lower),
        fmt(min),
        fmt(upper),
        if sandwich { "holds" } else { "fails" }
    );
    let fpath = out_path(cfg, "minimized.csv")?;
    let file = fs::File::create(&fpath).with_context(|| format!("writing {}", fpath.display()))?;
    best.field.write_csv(BufWriter::new(file)).with_context(|| format!("writing {}", fpath.display()))?;
    let rpath = out_path(cfg, "minimize_report.txt")?;
    write_file(&rpath, &report)?;
    print!("{report}");
    println!("wrote {} and {}", fpath.display(), rpath.display());
    if !sandwich {
        return Err(Failure::Validation(format!("minimum {min:.6e} outside [{lower:.6e}, {upper:.6e}]")));
    }
    if !best.converged {
        return Err(Failure::NonConvergence(format!(
            "best run {label} stopped after {} iterations with gradient norm {:.3e}",
            best.iterations, best.gradient_norm
        )));
    }
    Ok(())
}

pub fn validate(cfg: &RunConfig) -> Result<(), Failure> {
    let results = validate::run_suite(cfg).map_err(Failure::Config)?;
    let mut failed = Vec::new();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in &results {
        let (tag, msg) = match &r.outcome {
            Ok(m) => ("PASS", m),
            Err(m) => {
                failed.push(r.name);
                ("FAIL", m)
            }
        };
        writeln!(out, "{tag} {}: {msg}", r.name).context("writing to stdout")?;
    }
    if failed.is_empty() {
        writeln!(out, "all {} checks passed (seed {})", results.len(), cfg.seed).context("writing to stdout")?;
        Ok(())
    } else {
        Err(Failure::Validation(failed.join(", ")))
    }
}
