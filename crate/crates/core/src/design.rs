//! Grid search over array size, canceler length and step sizes against
//! steady-state and transient MOP targets.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsc::{optimal_solutions, GscStructure, ResponseSpec};
use crate::harness::segment_rbb;
use crate::linalg::{sym_eigen_desc, symmetrize};
use crate::model::TRACE_BOUND;
use crate::scalar::{db, Real};
use crate::signal_model::{gen_lem_plant, steering_delays, FarEndModel, NearEndModel, PlantParams};

/// Level above `J[∞]` used when measuring convergence time.
pub const SETTLE_MARGIN_DB: f64 = 3.0;

/// 20 log-spaced trace budgets from 2/300 to 2/3.
pub fn default_budgets() -> Vec<f64> {
    let (lo, hi) = (2.0f64 / 300.0, 2.0f64 / 3.0);
    let r = (hi / lo).ln() / 19.0;
    let mut v: Vec<f64> = (0..20).map(|k| lo * (r * k as f64).exp()).collect();
    v[19] = hi;
    v
}

/// AEC shares 0.01, 0.03, …, 0.99 of the trace budget.
pub fn default_fractions() -> Vec<f64> {
    (0..50).map(|k| 0.01 + 0.02 * k as f64).collect()
}

/// Where the transient target is evaluated: a sample index, or a time in
/// seconds together with the sampling rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransientTarget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fs: Option<f64>,
    pub max_j_db: f64,
}

impl TransientTarget {
    pub fn at_n(&self) -> Result<usize> {
        let n = match (self.at_n, self.seconds, self.fs) {
            (Some(n), None, None) => n as f64,
            (None, Some(s), Some(fs)) if s > 0.0 && fs > 0.0 => (s * fs).round(),
            _ => {
                return Err(Error::InvalidParameter("transient target needs either at_n or both seconds and fs".into()))
            }
        };
        if n < 1.0 {
            return Err(Error::InvalidParameter("transient evaluation instant must be >= 1".into()));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub target_jinf_db: f64,
    pub transient: TransientTarget,
    /// Microphone counts to try; `plant.mics` is ignored.
    pub mics: Vec<usize>,
    pub n_aec: Vec<usize>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<f64>,
    #[serde(default = "default_fractions")]
    pub aec_fractions: Vec<f64>,
    /// Use the whitening step matrix instead of a scalar pair.
    #[serde(default)]
    pub whitened: bool,
    #[serde(default = "yes")]
    pub check_monotonicity: bool,
    pub n_bf: usize,
    pub n_f: usize,
    pub response: ResponseSpec,
    pub plant: PlantParams,
    pub plant_seed: u64,
    #[serde(default)]
    pub look_delay_step: i64,
    pub far_end: FarEndModel,
    pub near_end: NearEndModel,
}

fn yes() -> bool {
    true
}

impl DesignSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.mics.is_empty() || self.n_aec.is_empty() || self.budgets.is_empty() {
            return bad("design grids must be non-empty");
        }
        if !self.whitened && self.aec_fractions.is_empty() {
            return bad("AEC fraction grid must be non-empty");
        }
        if self.budgets.iter().any(|&b| !(b > 0.0 && b < 2.0)) {
            return bad("trace budgets must lie in (0, 2)");
        }
        if self.aec_fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return bad("AEC fractions must lie in (0, 1)");
        }
        if self.mics.contains(&0) || self.n_aec.contains(&0) {
            return bad("microphone counts and AEC lengths must be >= 1");
        }
        self.transient.at_n()?;
        self.far_end.validate()?;
        self.near_end.validate()
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DesignPoint {
    pub mics: usize,
    pub n_aec: usize,
    pub budget: f64,
    /// `None` for the whitening step matrix.
    pub aec_fraction: Option<f64>,
    pub mu_aec: Option<f64>,
    pub mu_bf: Option<f64>,
    /// Common `R_mod` eigenvalue of the whitening step matrix.
    pub lambda: Option<f64>,
    pub j_min_db: f64,
    pub j_inf_db: f64,
    pub j_at_n_db: f64,
}

/// What happened to the grid points of one `(M, N_AEC)` pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub mics: usize,
    pub n_aec: usize,
    pub j_min_db: f64,
    /// Points dropped by the Gershgorin or trace bound.
    pub unstable: usize,
    /// Stable points with `J[∞]` above target.
    pub steady_state_misses: usize,
    /// Points meeting `J[∞]` but not the transient target.
    pub transient_misses: usize,
    /// Lowest `J[at_n]` among points meeting the steady-state target.
    pub best_transient: Option<DesignPoint>,
    /// Lowest-`J[∞]` point meeting both targets.
    pub chosen: Option<DesignPoint>,
}

/// Convergence time growing with the trace budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotonicityFinding {
    pub mics: usize,
    pub n_aec: usize,
    pub aec_fraction: Option<f64>,
    pub budget_lo: f64,
    pub budget_hi: f64,
    pub settle_lo: usize,
    pub settle_hi: usize,
}

impl fmt::Display for MonotonicityFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "M={} N_AEC={}: budget {:.4} settles in {} samples, budget {:.4} in {}",
            self.mics, self.n_aec, self.budget_lo, self.settle_lo, self.budget_hi, self.settle_hi
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfeasibilityReport {
    pub target_jinf_db: f64,
    pub at_n: usize,
    pub target_j_db: f64,
    pub summaries: Vec<ConfigSummary>,
    /// Fastest point meeting the steady-state target, if any exists.
    pub closest: Option<DesignPoint>,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "infeasible: no configuration reaches J[inf] <= {:.2} dB together with J[{}] <= {:.2} dB",
            self.target_jinf_db, self.at_n, self.target_j_db
        )?;
        match &self.closest {
            Some(p) => writeln!(
                f,
                "fastest point meeting the steady-state target: M={} N_AEC={} budget {:.4} gives J[{}] = {:.2} dB",
                p.mics, p.n_aec, p.budget, self.at_n, p.j_at_n_db
            )?,
            None => writeln!(f, "no stable point meets the steady-state target")?,
        }
        for s in &self.summaries {
            writeln!(
                f,
                "  M={} N_AEC={}: J_min {:.2} dB, {} unstable, {} steady-state misses, {} transient misses",
                s.mics, s.n_aec, s.j_min_db, s.unstable, s.steady_state_misses, s.transient_misses
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleDesign {
    /// One point per feasible `(M, N_AEC)`, best first.
    pub ranked: Vec<DesignPoint>,
    pub summaries: Vec<ConfigSummary>,
    pub findings: Vec<MonotonicityFinding>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DesignOutcome {
    Feasible(FeasibleDesign),
    Infeasible(InfeasibilityReport),
}

impl DesignOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, DesignOutcome::Feasible(_))
    }

    pub fn summaries(&self) -> &[ConfigSummary] {
        match self {
            DesignOutcome::Feasible(d) => &d.summaries,
            DesignOutcome::Infeasible(r) => &r.summaries,
        }
    }
}

/// `R_mod` spectrum and initial modal energies at unit trace budget.
struct UnitModes<T> {
    lambda: Vec<T>,
    nu0: Vec<T>,
}

/// Second-order statistics of one `(M, N_AEC)` pair.
pub struct ConfigStats<T: Real> {
    pub mics: usize,
    pub n_aec: usize,
    pub n_psi: usize,
    pub r_bloc: DMatrix<T>,
    pub psi_opt: DVector<T>,
    pub j_min: T,
    /// MOP at `ψ = 0`.
    pub j0: T,
    pub tr_ru: T,
    pub tr_bxb: T,
}

pub fn config_stats<T: Real>(spec: &DesignSpec, mics: usize, n_aec: usize) -> Result<ConfigStats<T>> {
    let params = PlantParams { mics, ..spec.plant.clone() };
    let steering = steering_delays(mics, spec.look_delay_step);
    let plant = gen_lem_plant::<T>(&params, spec.plant_seed)?.presteer(&steering)?;
    let gsc = GscStructure::tap_sum(mics, spec.n_bf, spec.n_f, n_aec, &spec.response)?;
    let r_bb = segment_rbb(&spec.far_end, &plant, &spec.near_end, &steering, n_aec, spec.n_bf, spec.plant_seed)?;
    let stats = optimal_solutions(&r_bb, &gsc)?;
    let zero = DVector::zeros(gsc.n_psi());
    let j0 = stats.cost(&gsc, &zero);
    Ok(ConfigStats {
        mics,
        n_aec,
        n_psi: gsc.n_psi(),
        r_bloc: stats.r_bloc,
        psi_opt: stats.psi_opt,
        j_min: stats.j_min,
        j0,
        tr_ru: stats.tr_ru,
        tr_bxb: stats.tr_bxb,
    })
}

/// Per-coordinate scale `s` with `𝓜 = diag(s²)` at unit budget.
fn unit_scales<T: Real>(cs: &ConfigStats<T>, frac: f64) -> Vec<T> {
    let (a, b) = split_unit(cs, frac);
    (0..cs.n_psi).map(|i| if i < cs.n_aec { a.sqrt() } else { b.sqrt() }).collect()
}

/// `(μ_AEC, μ_BF)` per unit budget.
fn split_unit<T: Real>(cs: &ConfigStats<T>, frac: f64) -> (T, T) {
    let a = if cs.tr_ru > T::zero() { T::of(frac) / cs.tr_ru } else { T::zero() };
    let b = if cs.tr_bxb > T::zero() { T::of(1.0 - frac) / cs.tr_bxb } else { T::zero() };
    (a, b)
}

fn unit_modes<T: Real>(cs: &ConfigStats<T>, frac: f64) -> Result<UnitModes<T>> {
    let s = unit_scales(cs, frac);
    if s.iter().any(|&v| v <= T::zero()) {
        return Err(Error::InvalidParameter(format!("AEC fraction {frac} leaves a block without adaptation")));
    }
    let r_mod = symmetrize(&DMatrix::from_fn(cs.n_psi, cs.n_psi, |i, j| s[i] * s[j] * cs.r_bloc[(i, j)]));
    let (lambda, q) = sym_eigen_desc(&r_mod);
    let scaled = DVector::from_fn(cs.n_psi, |i, _| -cs.psi_opt[i] / s[i]);
    let phi = q.tr_mul(&scaled);
    Ok(UnitModes { lambda: lambda.iter().copied().collect(), nu0: phi.iter().map(|&v| v * v).collect() })
}

/// `J[n]` under `R_mod` eigenvalues `t·λ` and initial modal energies `ν₀/t`.
fn mop_at<T: Real>(modes: &UnitModes<T>, t: T, j_min: T, n: usize) -> T {
    let lam: Vec<T> = modes.lambda.iter().map(|&l| l * t).collect();
    let rho: Vec<T> = lam.iter().map(|&l| (T::one() - l) * (T::one() - l) + l * l).collect();
    let mut nu: Vec<T> = modes.nu0.iter().map(|&v| v / t).collect();
    for _ in 0..n {
        let drive = dot(&lam, &nu) + j_min;
        for ((v, &r), &l) in nu.iter_mut().zip(&rho).zip(&lam) {
            *v = r * *v + l * drive;
        }
    }
    j_min + dot(&lam, &nu)
}

/// First `n ≤ cap` with `J[n] ≤ level`.
fn settle_time<T: Real>(modes: &UnitModes<T>, t: T, j_min: T, level: T, cap: usize) -> Option<usize> {
    let lam: Vec<T> = modes.lambda.iter().map(|&l| l * t).collect();
    let rho: Vec<T> = lam.iter().map(|&l| (T::one() - l) * (T::one() - l) + l * l).collect();
    let mut nu: Vec<T> = modes.nu0.iter().map(|&v| v / t).collect();
    for n in 0..=cap {
        let s = dot(&lam, &nu);
        if j_min + s <= level {
            return Some(n);
        }
        let drive = s + j_min;
        for ((v, &r), &l) in nu.iter_mut().zip(&rho).zip(&lam) {
            *v = r * *v + l * drive;
        }
    }
    None
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Whitened `J[n]`: all `N` eigenvalues equal `λ`, so the excess MOP
/// `E = λ Σν` obeys `E' = (ρ + Nλ²) E + Nλ² J_min`.
fn whitened_mop_at(n_psi: usize, lam: f64, j_min: f64, j0: f64, n: usize) -> f64 {
    let nl2 = n_psi as f64 * lam * lam;
    let g = (1.0 - lam).powi(2) + lam * lam + nl2;
    let mut e = j0 - j_min;
    for _ in 0..n {
        e = g * e + nl2 * j_min;
    }
    j_min + e
}

/// `J[∞]` from the trace approximation.
fn trace_jinf(j_min: f64, t: f64) -> f64 {
    j_min / (1.0 - t / 2.0)
}

fn stable(max_lambda_unit: f64, t: f64) -> bool {
    t < TRACE_BOUND && 2.0 * t * max_lambda_unit + t < 2.0
}

/// Evaluates one `(M, N_AEC)` pair at one AEC fraction (or whitened).
fn evaluate_fraction<T: Real>(
    spec: &DesignSpec,
    cs: &ConfigStats<T>,
    frac: Option<f64>,
    at_n: usize,
    summary: &mut ConfigSummary,
) -> Result<Vec<DesignPoint>> {
    let j_min = cs.j_min.as_f64();
    let modes = match frac {
        Some(f) => Some(unit_modes(cs, f)?),
        None => None,
    };
    let max_unit = match &modes {
        Some(m) => m.lambda.first().map_or(0.0, |l| l.as_f64()),
        None => 1.0 / cs.n_psi as f64,
    };
    let mut out = Vec::new();
    for &t in &spec.budgets {
        if !stable(max_unit, t) {
            summary.unstable += 1;
            continue;
        }
        let j_inf = trace_jinf(j_min, t);
        if db(j_inf) > spec.target_jinf_db {
            summary.steady_state_misses += 1;
            continue;
        }
        let (j_at, mu_aec, mu_bf, lambda) = match (&modes, frac) {
            (Some(m), Some(f)) => {
                let (a, b) = split_unit(cs, f);
                let j = mop_at(m, T::of(t), cs.j_min, at_n).as_f64();
                (j, Some(a.as_f64() * t), Some(b.as_f64() * t), None)
            }
            _ => {
                let lam = t / cs.n_psi as f64;
                (whitened_mop_at(cs.n_psi, lam, j_min, cs.j0.as_f64(), at_n), None, None, Some(lam))
            }
        };
        let point = DesignPoint {
            mics: cs.mics,
            n_aec: cs.n_aec,
            budget: t,
            aec_fraction: frac,
            mu_aec,
            mu_bf,
            lambda,
            j_min_db: db(j_min),
            j_inf_db: db(j_inf),
            j_at_n_db: db(j_at),
        };
        if summary.best_transient.as_ref().is_none_or(|b| point.j_at_n_db < b.j_at_n_db) {
            summary.best_transient = Some(point.clone());
        }
        if point.j_at_n_db <= spec.transient.max_j_db {
            out.push(point);
        } else {
            summary.transient_misses += 1;
        }
    }
    Ok(out)
}

/// Budget pairs where the larger budget takes longer to come within
/// [`SETTLE_MARGIN_DB`] of its own `J[∞]`.
fn monotonicity<T: Real>(spec: &DesignSpec, cs: &ConfigStats<T>, at_n: usize) -> Result<Vec<MonotonicityFinding>> {
    let frac = if spec.whitened { None } else { Some(spec.aec_fractions[spec.aec_fractions.len() / 2]) };
    let modes = match frac {
        Some(f) => unit_modes(cs, f)?,
        None => UnitModes {
            lambda: vec![T::one() / T::of(cs.n_psi as f64); cs.n_psi],
            nu0: vec![cs.j0 - cs.j_min; cs.n_psi],
        },
    };
    let max_unit = modes.lambda.first().map_or(0.0, |l| l.as_f64());
    let mut budgets: Vec<f64> = spec.budgets.iter().copied().filter(|&t| stable(max_unit, t)).collect();
    budgets.sort_by(f64::total_cmp);
    let cap = 4 * at_n;
    let j_min = cs.j_min.as_f64();
    let times: Vec<(f64, Option<usize>)> = budgets
        .iter()
        .map(|&t| {
            let level = trace_jinf(j_min, t) * 10f64.powf(SETTLE_MARGIN_DB / 10.0);
            (t, settle_time(&modes, T::of(t), cs.j_min, T::of(level), cap))
        })
        .collect();
    let mut out = Vec::new();
    for w in times.windows(2) {
        if let ((lo, Some(a)), (hi, Some(b))) = (w[0], w[1]) {
            if b > a {
                out.push(MonotonicityFinding {
                    mics: cs.mics,
                    n_aec: cs.n_aec,
                    aec_fraction: frac,
                    budget_lo: lo,
                    budget_hi: hi,
                    settle_lo: a,
                    settle_hi: b,
                });
            }
        }
    }
    Ok(out)
}

struct ConfigResult {
    summary: ConfigSummary,
    findings: Vec<MonotonicityFinding>,
}

fn evaluate_config<T: Real>(spec: &DesignSpec, mics: usize, n_aec: usize, at_n: usize) -> Result<ConfigResult> {
    let cs = config_stats::<T>(spec, mics, n_aec)?;
    let mut summary = ConfigSummary {
        mics,
        n_aec,
        j_min_db: db(cs.j_min.as_f64()),
        unstable: 0,
        steady_state_misses: 0,
        transient_misses: 0,
        best_transient: None,
        chosen: None,
    };
    let fracs: Vec<Option<f64>> =
        if spec.whitened { vec![None] } else { spec.aec_fractions.iter().map(|&f| Some(f)).collect() };
    let mut feasible = Vec::new();
    for f in fracs {
        feasible.extend(evaluate_fraction(spec, &cs, f, at_n, &mut summary)?);
    }
    summary.chosen =
        feasible.into_iter().min_by(|a, b| a.j_inf_db.total_cmp(&b.j_inf_db).then(a.j_at_n_db.total_cmp(&b.j_at_n_db)));
    let findings = if spec.check_monotonicity { monotonicity(spec, &cs, at_n)? } else { Vec::new() };
    Ok(ConfigResult { summary, findings })
}

/// Evaluates every grid point and ranks the feasible `(M, N_AEC)` pairs by
/// lowest `J[∞]`, then lowest `M · N_AEC`.
pub fn search<T: Real>(spec: &DesignSpec) -> Result<DesignOutcome> {
    spec.validate()?;
    let at_n = spec.transient.at_n()?;
    let pairs: Vec<(usize, usize)> = spec.mics.iter().flat_map(|&m| spec.n_aec.iter().map(move |&n| (m, n))).collect();
    let results: Vec<Result<ConfigResult>> =
        pairs.par_iter().map(|&(m, n)| evaluate_config::<T>(spec, m, n, at_n)).collect();
    let mut summaries = Vec::with_capacity(results.len());
    let mut findings = Vec::new();
    for r in results {
        let r = r?;
        summaries.push(r.summary);
        findings.extend(r.findings);
    }
    for f in &findings {
        log::info!("monotonicity finding: {f}");
    }
    let mut ranked: Vec<DesignPoint> = summaries.iter().filter_map(|s| s.chosen.clone()).collect();
    for p in &ranked {
        if p.j_inf_db > spec.target_jinf_db || p.j_at_n_db > spec.transient.max_j_db {
            return Err(Error::Numerical(format!("design point M={} N_AEC={} violates its targets", p.mics, p.n_aec)));
        }
    }
    ranked.sort_by(|a, b| a.j_inf_db.total_cmp(&b.j_inf_db).then((a.mics * a.n_aec).cmp(&(b.mics * b.n_aec))));
    if ranked.is_empty() {
        let closest = summaries
            .iter()
            .filter_map(|s| s.best_transient.clone())
            .min_by(|a, b| a.j_at_n_db.total_cmp(&b.j_at_n_db));
        return Ok(DesignOutcome::Infeasible(InfeasibilityReport {
            target_jinf_db: spec.target_jinf_db,
            at_n,
            target_j_db: spec.transient.max_j_db,
            summaries,
            closest,
        }));
    }
    Ok(DesignOutcome::Feasible(FeasibleDesign { ranked, summaries, findings }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::StepMode;
    use crate::model::setup_model;

    fn small_spec() -> DesignSpec {
        DesignSpec {
            target_jinf_db: 10.0,
            transient: TransientTarget { at_n: Some(300), seconds: None, fs: None, max_j_db: 10.0 },
            mics: vec![2],
            n_aec: vec![10, 14],
            budgets: vec![0.01, 0.1, 0.5, 0.7],
            aec_fractions: vec![0.3, 0.7],
            whitened: false,
            check_monotonicity: true,
            n_bf: 3,
            n_f: 3,
            response: ResponseSpec::AllpassDelayless,
            plant: PlantParams { mics: 2, taps: 12, fs: 8000.0, t60: 0.005, oversampling: 4, mic_spacing: 2 },
            plant_seed: 5,
            look_delay_step: 0,
            far_end: FarEndModel::Ar1 { a1: -0.5, variance: 1.0 },
            near_end: NearEndModel { noise_var: 1e-2, interferer: None },
        }
    }

    #[test]
    fn default_grids() {
        let b = default_budgets();
        assert_eq!(b.len(), 20);
        assert!((b[0] - 2.0 / 300.0).abs() < 1e-15 && (b[19] - 2.0 / 3.0).abs() < 1e-15);
        let f = default_fractions();
        assert_eq!(f.len(), 50);
        assert!((f[49] - 0.99).abs() < 1e-12);
    }

    #[test]
    fn transient_instant() {
        let t = TransientTarget { at_n: None, seconds: Some(2.0), fs: Some(8000.0), max_j_db: -20.0 };
        assert_eq!(t.at_n().unwrap(), 16000);
        let t = TransientTarget { at_n: Some(0), seconds: None, fs: None, max_j_db: -20.0 };
        assert!(t.at_n().is_err());
        let t = TransientTarget { at_n: Some(5), seconds: Some(1.0), fs: Some(8000.0), max_j_db: -20.0 };
        assert!(t.at_n().is_err());
    }

    #[test]
    fn loose_targets_keep_every_stable_point() {
        let spec = small_spec();
        let out = search::<f64>(&spec).unwrap();
        let DesignOutcome::Feasible(d) = out else { panic!("expected feasible") };
        assert_eq!(d.ranked.len(), 2);
        for s in &d.summaries {
            // Budget 0.7 breaks the trace bound; everything else survives.
            assert_eq!(s.unstable, 2);
            assert_eq!(s.steady_state_misses + s.transient_misses, 0);
            // Lowest J[∞] is the smallest budget.
            assert_eq!(s.chosen.as_ref().unwrap().budget, 0.01);
        }
        assert!(d.ranked[0].j_inf_db <= d.ranked[1].j_inf_db);
    }

    #[test]
    fn grid_point_matches_direct_model() {
        let spec = small_spec();
        let cs = config_stats::<f64>(&spec, 2, 14).unwrap();
        let mut summary = ConfigSummary {
            mics: 2,
            n_aec: 14,
            j_min_db: 0.0,
            unstable: 0,
            steady_state_misses: 0,
            transient_misses: 0,
            best_transient: None,
            chosen: None,
        };
        let pts = evaluate_fraction(&spec, &cs, Some(0.3), 300, &mut summary).unwrap();
        let p = pts.iter().find(|p| p.budget == 0.1).unwrap();
        let mode = StepMode::ScalarPair { mu_aec: p.mu_aec.unwrap(), mu_bf: p.mu_bf.unwrap() };
        let m = mode.matrix(cs.n_aec, cs.n_psi);
        let setup = setup_model(&cs.r_bloc, &m, cs.j_min).unwrap();
        assert!((setup.trace() - 0.1).abs() < 1e-12);
        let nu0 = setup.nu0_from_theta(&(-&cs.psi_opt));
        let j = setup.mop_only(&nu0, 301)[300];
        assert!((db(j) - p.j_at_n_db).abs() < 1e-9, "{} vs {}", db(j), p.j_at_n_db);
    }

    #[test]
    fn whitened_scalar_recursion_matches_model() {
        let spec = small_spec();
        let cs = config_stats::<f64>(&spec, 2, 14).unwrap();
        let lam = 0.2 / cs.n_psi as f64;
        let m = crate::engine::quasi_newton_matrix(&cs.r_bloc, crate::engine::WhiteningTarget::Lambda(lam)).unwrap();
        let setup = setup_model(&cs.r_bloc, m.matrix(), cs.j_min).unwrap();
        let nu0 = setup.nu0_from_theta(&(-&cs.psi_opt));
        let j = setup.mop_only(&nu0, 201)[200];
        let w = whitened_mop_at(cs.n_psi, lam, cs.j_min, cs.j0, 200);
        assert!(((j - w) / j).abs() < 1e-9);
    }

    #[test]
    fn impossible_targets_report_infeasibility() {
        let mut spec = small_spec();
        spec.target_jinf_db = -60.0;
        let out = search::<f64>(&spec).unwrap();
        let DesignOutcome::Infeasible(r) = out else { panic!("expected infeasible") };
        assert!(r.closest.is_none());
        assert!(r.to_string().starts_with("infeasible"));
    }
}
