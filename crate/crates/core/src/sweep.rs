//! ε-sweeps of constructed energies and log-log exponent fits.

use rayon::prelude::*;
use thiserror::Error;

use crate::algebra::{WellCase, WellSpec};
use crate::bounds::{classify_bound, scaling_bound, Regime};
use crate::constructions::{best_construction, horizontal_branched, vertical_branched_k1, ConstructionError, ConstructionKind};
use crate::energy::{total_energy, EnergyBreakdown, QuadratureSpec};

/// Which field a sweep evaluates at each ε.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SweepConstruction {
    /// Lowest energy among identity, horizontal and vertical.
    #[default]
    Best,
    Horizontal,
    /// K₁ only.
    Vertical,
}

impl SweepConstruction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "best" => Some(Self::Best),
            "horizontal" => Some(Self::Horizontal),
            "vertical" => Some(Self::Vertical),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub case: WellCase,
    pub alpha: f64,
    pub epsilon: f64,
    pub length: f64,
    pub height: f64,
    pub construction: ConstructionKind,
    pub energy: EnergyBreakdown,
    pub bound: f64,
    pub regime: Regime,
}

impl SweepRow {
    pub fn ratio(&self) -> f64 {
        self.energy.total / self.bound
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Construction(#[from] ConstructionError),
    #[error("vertical construction exists only for K1")]
    NoVertical,
    #[error("fit needs at least {need} BR points spanning {decades} decades of epsilon, got {got} spanning {span:.2}")]
    TooFewPoints { need: usize, decades: f64, got: usize, span: f64 },
}

pub fn evaluate_point(
    spec: &WellSpec,
    eps: f64,
    l: f64,
    h: f64,
    which: SweepConstruction,
    quad: &QuadratureSpec,
) -> Result<SweepRow, SweepError> {
    let (kind, energy) = match which {
        SweepConstruction::Best => {
            let b = best_construction(spec, eps, l, h, quad)?;
            (b.kind, b.energy)
        }
        SweepConstruction::Horizontal => {
            let f = horizontal_branched(spec, eps, l, h)?;
            (ConstructionKind::Horizontal, total_energy(&f, spec, eps, quad))
        }
        SweepConstruction::Vertical => {
            if spec.case() != WellCase::K1 {
                return Err(SweepError::NoVertical);
            }
            let f = vertical_branched_k1(spec, eps, l, h)?;
            (ConstructionKind::Vertical, total_energy(&f, spec, eps, quad))
        }
    };
    let b = scaling_bound(spec.case(), spec.alpha(), eps, l, h);
    Ok(SweepRow {
        case: spec.case(),
        alpha: spec.alpha(),
        epsilon: eps,
        length: l,
        height: h,
        construction: kind,
        energy,
        bound: b.value,
        regime: classify_bound(spec.case(), &b),
    })
}

/// Evaluates every ε in parallel; rows come back in input order.
pub fn run_sweep(
    spec: &WellSpec,
    epsilons: &[f64],
    l: f64,
    h: f64,
    which: SweepConstruction,
    quad: &QuadratureSpec,
) -> Result<Vec<SweepRow>, SweepError> {
    epsilons
        .par_iter()
        .map(|&eps| evaluate_point(spec, eps, l, h, which, quad))
        .collect()
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `ln y`.
    pub residual: f64,
    pub points: usize,
}

pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<LogLogFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Some(LogLogFit { slope, intercept, residual: (ss / n as f64).sqrt(), points: n })
}

/// Fit of total energy against ε over the BR-classified rows only.
pub fn fit_branching(rows: &[SweepRow]) -> Result<LogLogFit, SweepError> {
    const NEED: usize = 4;
    const DECADES: f64 = 2.0;
    let br: Vec<&SweepRow> = rows.iter().filter(|r| r.regime == Regime::BR).collect();
    let span = match (
        br.iter().map(|r| r.epsilon).reduce(f64::min),
        br.iter().map(|r| r.epsilon).reduce(f64::max),
    ) {
        (Some(lo), Some(hi)) => (hi / lo).log10(),
        _ => 0.0,
    };
    if br.len() < NEED || span < DECADES - 1e-9 {
        return Err(SweepError::TooFewPoints { need: NEED, decades: DECADES, got: br.len(), span });
    }
    let xs: Vec<f64> = br.iter().map(|r| r.epsilon).collect();
    let ys: Vec<f64> = br.iter().map(|r| r.energy.total).collect();
    log_log_fit(&xs, &ys).ok_or(SweepError::TooFewPoints { need: NEED, decades: DECADES, got: br.len(), span })
}
