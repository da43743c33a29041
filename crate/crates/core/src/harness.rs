//! Monte Carlo ensembles, scripted state schedules, and model comparison.

use std::collections::HashMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, AdaptiveState, StepMatrix, StepMode, WhiteningRefresh, WhiteningTarget};
use crate::error::{Error, Result};
use crate::gsc::{optimal_solutions, GscStructure, ResponseSpec, SecondOrderStats};
use crate::model::PiecewiseModel;
use crate::scalar::{db, Real};
use crate::signal_model::{
    analytic_rbb, gen_lem_plant, sample_rbb, steering_delays, warmup_len, FarEndModel, FarEndSource, Interferer,
    LemPlant, NearEndModel, PlantParams, RegressorStream,
};

/// `|d[n]|` above this marks a run as divergent.
pub const DIVERGENCE_LIMIT: f64 = 1.0e6;

/// Samples used to estimate `R_bb` when the far end has no closed form.
pub const ESTIMATION_SAMPLES: usize = 200_000;

/// Step rule as written in a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    Split {
        mu_aec: f64,
        mu_bf: f64,
    },
    /// Step sizes that put `tr(R_mod)` at `budget`. With `aec_fraction`
    /// the AEC block takes that share of the budget; without it both blocks
    /// use one common step size.
    TraceBudget {
        budget: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        aec_fraction: Option<f64>,
    },
    /// `𝓜 = λ R_bloc⁻¹` with either `λ` given directly or
    /// `λ = (2/N_ψ) · jex_ratio` where `jex_ratio = J_ex[∞] / J[∞]`.
    QuasiNewton {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        jex_ratio: Option<f64>,
        /// Re-estimate `R_bloc` from the run's own data every this many samples.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        refresh_every: Option<u64>,
    },
    /// Explicit symmetric positive-definite `𝓜`, row by row.
    Matrix {
        rows: Vec<Vec<f64>>,
    },
}

impl PolicySpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            PolicySpec::Split { mu_aec, mu_bf } if !(*mu_aec >= 0.0 && *mu_bf >= 0.0) => {
                bad(format!("step sizes must be >= 0 (mu_aec = {mu_aec}, mu_bf = {mu_bf})"))
            }
            PolicySpec::TraceBudget { budget, aec_fraction } => {
                if !(*budget > 0.0 && budget.is_finite()) {
                    return bad(format!("trace budget must be positive, got {budget}"));
                }
                match aec_fraction {
                    Some(f) if !(0.0..=1.0).contains(f) => bad(format!("aec_fraction {f} outside [0, 1]")),
                    _ => Ok(()),
                }
            }
            PolicySpec::QuasiNewton { lambda, jex_ratio, refresh_every } => {
                match (lambda, jex_ratio) {
                    (Some(l), None) if *l > 0.0 => {}
                    (None, Some(r)) if *r > 0.0 && *r < 1.0 => {}
                    _ => return bad("quasi_newton needs exactly one of lambda > 0 or 0 < jex_ratio < 1".into()),
                }
                if *refresh_every == Some(0) {
                    return bad("refresh_every must be >= 1".into());
                }
                Ok(())
            }
            PolicySpec::Matrix { rows } => {
                if rows.iter().any(|r| r.len() != rows.len()) {
                    return bad("step-size matrix must be square".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Fixes the step rule against the statistics in force when it starts.
    pub fn resolve<T: Real>(&self, gsc: &GscStructure<T>, stats: &SecondOrderStats<T>) -> Result<ResolvedPolicy<T>> {
        self.validate()?;
        let n_psi = gsc.n_psi();
        let pair = |mu_aec: f64, mu_bf: f64| StepMode::ScalarPair { mu_aec: T::of(mu_aec), mu_bf: T::of(mu_bf) };
        let (mode, refresh) = match self {
            PolicySpec::Split { mu_aec, mu_bf } => (pair(*mu_aec, *mu_bf), None),
            PolicySpec::TraceBudget { budget, aec_fraction } => {
                let (mu_aec, mu_bf) =
                    budget_steps(*budget, *aec_fraction, stats.tr_ru.as_f64(), stats.tr_bxb.as_f64())?;
                (pair(mu_aec, mu_bf), None)
            }
            PolicySpec::QuasiNewton { lambda, jex_ratio, refresh_every } => {
                let target = match (lambda, jex_ratio) {
                    (Some(l), _) => WhiteningTarget::Lambda(T::of(*l)),
                    (None, Some(r)) => WhiteningTarget::Ratio { jex_inf: T::of(*r), j_inf: T::one() },
                    _ => unreachable!("validated"),
                };
                let lam = target.lambda(n_psi)?;
                let m = engine::quasi_newton_matrix(&stats.r_bloc, target)?;
                (StepMode::FullMatrix(m), refresh_every.map(|e| (e, lam)))
            }
            PolicySpec::Matrix { rows } => {
                if rows.len() != n_psi {
                    return Err(Error::Dimension(format!("step-size matrix has {} rows, N_ψ = {n_psi}", rows.len())));
                }
                let m = DMatrix::from_fn(n_psi, n_psi, |i, j| T::of(rows[i][j]));
                (StepMode::FullMatrix(StepMatrix::new(m)?), None)
            }
        };
        mode.validate(n_psi)?;
        Ok(ResolvedPolicy { mode, refresh })
    }
}

/// `(μ_AEC, μ_BF)` with `μ_AEC tr(R_u) + μ_BF tr(Bᵀ R_xx B) = budget`.
pub fn budget_steps(budget: f64, aec_fraction: Option<f64>, tr_ru: f64, tr_bxb: f64) -> Result<(f64, f64)> {
    let has_aec = tr_ru > 0.0;
    let has_bf = tr_bxb > 0.0;
    match (has_aec, has_bf, aec_fraction) {
        (false, false, _) => Err(Error::InvalidParameter("no adaptive coefficients to assign a budget to".into())),
        (true, false, _) => Ok((budget / tr_ru, 0.0)),
        (false, true, _) => Ok((0.0, budget / tr_bxb)),
        (true, true, None) => {
            let mu = budget / (tr_ru + tr_bxb);
            Ok((mu, mu))
        }
        (true, true, Some(f)) => Ok((f * budget / tr_ru, (1.0 - f) * budget / tr_bxb)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPolicy<T: Real> {
    pub mode: StepMode<T>,
    /// `(interval, λ)` for data-driven whitening refresh.
    pub refresh: Option<(u64, T)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Near-end interferer starts.
    DtalkOn,
    DtalkOff,
    /// The echo paths are replaced by a plant drawn with `seed`.
    PlantChange,
    PolicyChange,
}

/// A scripted state change taking effect before sample `at` is processed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub at: u64,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer: Option<Interferer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
}

impl Event {
    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("event at n = {}: {what}", self.at)))
            }
        };
        match self.kind {
            EventKind::DtalkOn => {
                need(self.interferer.is_some() && self.seed.is_none(), "dtalk_on takes an interferer and no seed")?
            }
            EventKind::DtalkOff => {
                need(self.interferer.is_none() && self.seed.is_none(), "dtalk_off takes neither interferer nor seed")?
            }
            EventKind::PlantChange => {
                need(self.seed.is_some() && self.interferer.is_none(), "plant_change takes a seed and no interferer")?
            }
            EventKind::PolicyChange => need(
                self.policy.is_some() && self.seed.is_none() && self.interferer.is_none(),
                "policy_change takes only a policy",
            )?,
        }
        if let Some(i) = &self.interferer {
            i.validate()?;
        }
        if let Some(p) = &self.policy {
            p.validate()?;
        }
        Ok(())
    }
}

/// Everything needed to reproduce an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub plant: PlantParams,
    pub plant_seed: u64,
    /// Draw a distinct plant per run (`plant_seed + run`) instead of sharing one.
    pub plant_per_run: bool,
    /// Look direction as an inter-microphone delay; the array is presteered
    /// so that this direction appears broadside.
    pub look_delay_step: i64,
    pub far_end: FarEndModel,
    /// Standard deviation of the per-sample far-end log-power increments
    /// (0 for a stationary far end).
    pub eta: f64,
    pub near_end: NearEndModel,
    pub n_bf: usize,
    pub n_f: usize,
    pub n_aec: usize,
    pub response: ResponseSpec,
    pub policy: PolicySpec,
    pub events: Vec<Event>,
    pub n_samples: usize,
    pub runs: usize,
    pub base_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be >= 0, got {}", self.eta)));
        }
        self.far_end.validate()?;
        self.near_end.validate()?;
        self.policy.validate()?;
        let mut last = 0u64;
        for e in &self.events {
            e.validate()?;
            if e.at <= last {
                return Err(Error::InvalidParameter(format!(
                    "event times must be strictly increasing and positive (n = {} after n = {last})",
                    e.at
                )));
            }
            if e.at as usize >= self.n_samples {
                return Err(Error::InvalidParameter(format!("event at n = {} is past the last sample", e.at)));
            }
            last = e.at;
        }
        Ok(())
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }

    fn plant_offset(&self, run: usize) -> u64 {
        if self.plant_per_run {
            run as u64
        } else {
            0
        }
    }
}

/// One stationary stretch of a schedule.
#[derive(Clone, Debug)]
pub struct SegmentPlan<T: Real> {
    pub start: usize,
    pub end: usize,
    /// Presteered echo paths.
    pub plant: LemPlant<T>,
    pub interferer: Option<Interferer>,
    pub policy: ResolvedPolicy<T>,
    pub stats: SecondOrderStats<T>,
}

impl<T: Real> SegmentPlan<T> {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Scenario resolved into concrete plants, statistics and step rules.
#[derive(Clone, Debug)]
pub struct Plan<T: Real> {
    pub gsc: GscStructure<T>,
    pub steering: Vec<usize>,
    pub segments: Vec<SegmentPlan<T>>,
    pub warmup: usize,
}

fn near_with(base: &NearEndModel, interferer: &Option<Interferer>) -> NearEndModel {
    NearEndModel { noise_var: base.noise_var, interferer: interferer.clone() }
}

/// `R_bb` for one segment, from the closed form when there is one.
pub fn segment_rbb<T: Real>(
    far_end: &FarEndModel,
    plant: &LemPlant<T>,
    near: &NearEndModel,
    steering: &[usize],
    n_aec: usize,
    n_bf: usize,
    seed: u64,
) -> Result<DMatrix<T>> {
    match analytic_rbb(far_end, &plant.h, near, steering, n_aec, n_bf) {
        Err(Error::NoClosedForm(_)) => {
            log::info!("estimating R_bb from {ESTIMATION_SAMPLES} samples");
            let far = FarEndSource::new(far_end, seed)?;
            let mut stream = RegressorStream::new(plant, far, near, steering, n_aec, n_bf, seed)?;
            let skip = warmup_len(plant.taps(), n_bf, n_aec);
            for _ in 0..skip {
                stream.advance();
            }
            let dim = stream.layout().dim();
            let it = (0..ESTIMATION_SAMPLES).map(|_| stream.advance().clone());
            Ok(crate::linalg::symmetrize(&sample_rbb(it, dim)))
        }
        other => other,
    }
}

pub fn build_plan<T: Real>(sc: &Scenario, run: usize) -> Result<Plan<T>> {
    sc.validate()?;
    let mics = sc.plant.mics;
    let gsc = GscStructure::tap_sum(mics, sc.n_bf, sc.n_f, sc.n_aec, &sc.response)?;
    let steering = steering_delays(mics, sc.look_delay_step);
    let offset = sc.plant_offset(run);
    let mut plants: HashMap<u64, LemPlant<T>> = HashMap::new();
    let mut plant_for = |seed: u64| -> Result<LemPlant<T>> {
        let seed = seed.wrapping_add(offset);
        if let Some(p) = plants.get(&seed) {
            return Ok(p.clone());
        }
        let p = gen_lem_plant::<T>(&sc.plant, seed)?.presteer(&steering)?;
        plants.insert(seed, p.clone());
        Ok(p)
    };

    let mut bounds: Vec<usize> = vec![0];
    bounds.extend(sc.events.iter().map(|e| e.at as usize));
    bounds.push(sc.n_samples);

    let mut plant_seed = sc.plant_seed;
    let mut interferer = sc.near_end.interferer.clone();
    let mut pending_policy = Some(sc.policy.clone());
    let mut current: Option<ResolvedPolicy<T>> = None;
    let mut segments = Vec::with_capacity(bounds.len() - 1);
    for k in 0..bounds.len() - 1 {
        if k > 0 {
            let e = &sc.events[k - 1];
            match e.kind {
                EventKind::DtalkOn => interferer = e.interferer.clone(),
                EventKind::DtalkOff => interferer = None,
                EventKind::PlantChange => plant_seed = e.seed.expect("validated"),
                EventKind::PolicyChange => {}
            }
            if let Some(p) = &e.policy {
                pending_policy = Some(p.clone());
            }
        }
        let plant = plant_for(plant_seed)?;
        let near = near_with(&sc.near_end, &interferer);
        let r_bb = segment_rbb(&sc.far_end, &plant, &near, &steering, sc.n_aec, sc.n_bf, sc.base_seed ^ 0x5eed)?;
        let stats = optimal_solutions(&r_bb, &gsc)?;
        if let Some(p) = pending_policy.take() {
            current = Some(p.resolve(&gsc, &stats)?);
        }
        segments.push(SegmentPlan {
            start: bounds[k],
            end: bounds[k + 1],
            plant,
            interferer: interferer.clone(),
            policy: current.clone().expect("initial policy resolved"),
            stats,
        });
    }
    let warmup = warmup_len(segments[0].plant.taps(), sc.n_bf, sc.n_aec);
    Ok(Plan { gsc, steering, segments, warmup })
}

/// Modeled MOP for every sample of the plan, starting from `ψ = 0`.
pub fn plan_model<T: Real>(plan: &Plan<T>) -> Result<Vec<f64>> {
    let n_psi = plan.gsc.n_psi();
    let mut pm = PiecewiseModel::new(&DVector::zeros(n_psi));
    let mut out = Vec::with_capacity(plan.segments.last().map_or(0, |s| s.end));
    for seg in &plan.segments {
        let m = seg.policy.mode.matrix(plan.gsc.n_aec, n_psi);
        pm.advance(&seg.stats.r_bloc, &seg.stats.psi_opt, seg.stats.j_min, &m, seg.len(), &mut out)?;
    }
    Ok(out.into_iter().map(|j| j.as_f64()).collect())
}

/// Output of a single Monte Carlo run.
#[derive(Clone, Debug)]
pub struct RunTrace<T: Real> {
    /// `d²[n]` up to (excluding) the divergence point.
    pub d2: Vec<f64>,
    pub diverged_at: Option<usize>,
    /// `ψ[n]` (before the update at `n`) for each requested `n`.
    pub snapshots: Vec<(usize, DVector<T>)>,
}

/// Runs one realization of the plan. Run `r` uses seed `base_seed + r`.
/// The signal streams are pre-rolled by `plan.warmup` samples before `n = 0`.
pub fn run_single<T: Real>(sc: &Scenario, plan: &Plan<T>, run: usize, snapshot_at: &[usize]) -> Result<RunTrace<T>> {
    let seed = sc.run_seed(run);
    let far = FarEndSource::new(&sc.far_end, seed)?.with_power_walk(sc.eta, seed);
    let first = &plan.segments[0];
    let near = near_with(&sc.near_end, &first.interferer);
    let mut stream = RegressorStream::new(&first.plant, far, &near, &plan.steering, sc.n_aec, sc.n_bf, seed)?;
    // Fill the delay lines so that the first regressor is already stationary.
    for _ in 0..plan.warmup {
        stream.advance();
    }
    let mut state = AdaptiveState::new(&plan.gsc);
    let mut d2 = Vec::with_capacity(sc.n_samples);
    let mut snapshots = Vec::with_capacity(snapshot_at.len());
    let limit = T::of(DIVERGENCE_LIMIT);
    for (k, seg) in plan.segments.iter().enumerate() {
        if k > 0 {
            let prev = &plan.segments[k - 1];
            if seg.plant != prev.plant {
                stream.set_plant(&seg.plant)?;
            }
            if seg.interferer != prev.interferer {
                stream.set_interferer(seg.interferer.as_ref());
            }
        }
        let mut mode = seg.policy.mode.clone();
        let mut refresh = match seg.policy.refresh {
            Some((every, lam)) => Some(WhiteningRefresh::new(every, lam, plan.gsc.n_psi())?),
            None => None,
        };
        for n in seg.start..seg.end {
            if snapshot_at.contains(&n) {
                snapshots.push((n, state.psi.clone()));
            }
            let b = stream.advance();
            let d = engine::step(&mut state, b, &mode, &plan.gsc);
            if !(d.abs() <= limit) {
                return Ok(RunTrace { d2, diverged_at: Some(n), snapshots });
            }
            d2.push((d * d).as_f64());
            if let Some(r) = refresh.as_mut() {
                if let Some(m) = r.observe(state.projected()) {
                    mode = StepMode::FullMatrix(m);
                }
            }
        }
    }
    if snapshot_at.contains(&sc.n_samples) {
        snapshots.push((sc.n_samples, state.psi.clone()));
    }
    Ok(RunTrace { d2, diverged_at: None, snapshots })
}

/// Ensemble-averaged output power and, optionally, its model.
#[derive(Clone, Debug, PartialEq)]
pub struct LearningCurve {
    pub j_mc: Vec<f64>,
    pub j_model: Option<Vec<f64>>,
    /// Runs contributing to `j_mc`.
    pub runs: usize,
    /// `(run, sample)` of every run dropped for divergence.
    pub divergent: Vec<(usize, usize)>,
    pub warmup: usize,
    pub segment_starts: Vec<usize>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.j_mc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.j_mc.is_empty()
    }

    pub fn j_mc_db(&self) -> Vec<f64> {
        self.j_mc.iter().map(|&j| db(j)).collect()
    }

    pub fn j_model_db(&self) -> Option<Vec<f64>> {
        self.j_model.as_ref().map(|m| m.iter().map(|&j| db(j)).collect())
    }
}

/// What [`simulate`] should produce besides the Monte Carlo average.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnsembleOptions {
    pub with_model: bool,
    pub with_mc: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self { with_model: true, with_mc: true }
    }
}

/// Runs per parallel batch; results are reduced in run order.
fn batch_len() -> usize {
    8 * rayon::current_num_threads().max(1)
}

/// Monte Carlo ensemble (and model) for a scenario with or without events.
pub fn simulate<T: Real>(sc: &Scenario, opts: EnsembleOptions) -> Result<LearningCurve> {
    sc.validate()?;
    let shared = if sc.plant_per_run { None } else { Some(build_plan::<T>(sc, 0)?) };
    let n = sc.n_samples;

    let j_model = if !opts.with_model {
        None
    } else if let Some(plan) = &shared {
        Some(plan_model(plan)?)
    } else {
        let mut acc = vec![0.0; n];
        for run in 0..sc.runs {
            let m = plan_model(&build_plan::<T>(sc, run)?)?;
            acc.iter_mut().zip(&m).for_each(|(a, v)| *a += v);
        }
        Some(acc.into_iter().map(|a| a / sc.runs as f64).collect())
    };

    let mut sum = vec![0.0; n];
    let mut ok = 0usize;
    let mut divergent = Vec::new();
    if opts.with_mc {
        let mut start = 0;
        while start < sc.runs {
            let end = (start + batch_len()).min(sc.runs);
            let traces: Vec<Result<RunTrace<T>>> = (start..end)
                .into_par_iter()
                .map(|run| match &shared {
                    Some(plan) => run_single(sc, plan, run, &[]),
                    None => run_single(sc, &build_plan::<T>(sc, run)?, run, &[]),
                })
                .collect();
            for (run, t) in (start..end).zip(traces) {
                let t = t?;
                match t.diverged_at {
                    Some(at) => {
                        log::warn!("run {run} diverged at n = {at}");
                        divergent.push((run, at));
                    }
                    None => {
                        ok += 1;
                        sum.iter_mut().zip(&t.d2).for_each(|(s, v)| *s += v);
                    }
                }
            }
            start = end;
        }
        if ok == 0 {
            return Err(Error::AllRunsDiverged(sc.runs));
        }
    }
    let j_mc = if opts.with_mc { sum.into_iter().map(|s| s / ok as f64).collect() } else { Vec::new() };
    let plan0 = match shared {
        Some(p) => p,
        None => build_plan::<T>(sc, 0)?,
    };
    Ok(LearningCurve {
        j_mc,
        j_model,
        runs: ok,
        divergent,
        warmup: plan0.warmup,
        segment_starts: plan0.segments.iter().map(|s| s.start).collect(),
    })
}

/// Stationary ensemble; events are not allowed here.
pub fn run_ensemble<T: Real>(sc: &Scenario) -> Result<LearningCurve> {
    if !sc.events.is_empty() {
        return Err(Error::InvalidParameter("scenario has events; use run_schedule".into()));
    }
    simulate::<T>(sc, EnsembleOptions::default())
}

/// Ensemble with scripted events and a piecewise-stationary model.
pub fn run_schedule<T: Real>(sc: &Scenario) -> Result<LearningCurve> {
    simulate::<T>(sc, EnsembleOptions::default())
}

/// Centered moving average; windows are truncated at the ends.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    if window <= 1 || n == 0 {
        return x.to_vec();
    }
    let half = window / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Deviation between smoothed Monte Carlo and model curves in dB.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    pub from: usize,
    pub to: usize,
    pub max_abs_db: f64,
    pub mean_abs_db: f64,
    /// Sample with the largest deviation.
    pub worst_n: usize,
    pub divergent_excluded: usize,
    pub window: usize,
}

impl fmt::Display for DeviationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n in [{}, {}): max |dJ| = {:.3} dB at n = {}, mean |dJ| = {:.3} dB (window {})",
            self.from, self.to, self.max_abs_db, self.worst_n, self.mean_abs_db, self.window
        )?;
        if self.divergent_excluded > 0 {
            write!(f, ", {} divergent runs excluded", self.divergent_excluded)?;
        }
        Ok(())
    }
}

fn smoothed(curve: &LearningCurve, window: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let model = curve.j_model.as_ref().ok_or_else(|| Error::InvalidParameter("curve has no model".into()))?;
    if model.len() != curve.j_mc.len() {
        return Err(Error::Dimension(format!(
            "{} model samples, {} Monte Carlo samples",
            model.len(),
            curve.j_mc.len()
        )));
    }
    Ok((moving_average(&curve.j_mc, window), moving_average(model, window)))
}

fn deviation(
    curve: &LearningCurve,
    (smooth, model): &(Vec<f64>, Vec<f64>),
    from: usize,
    to: usize,
    window: usize,
) -> Result<DeviationReport> {
    if from >= to {
        return Err(Error::InvalidParameter(format!("empty comparison range [{from}, {to})")));
    }
    let mut max = 0.0f64;
    let mut worst = from;
    let mut sum = 0.0;
    for n in from..to {
        let dev = (db(smooth[n]) - db(model[n])).abs();
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        if dev > max {
            max = dev;
            worst = n;
        }
        sum += dev;
    }
    Ok(DeviationReport {
        from,
        to,
        max_abs_db: max,
        mean_abs_db: sum / (to - from) as f64,
        worst_n: worst,
        divergent_excluded: curve.divergent.len(),
        window,
    })
}

/// Compares after warm-up. Both curves pass through the same centered
/// moving average of length `window`.
pub fn compare(curve: &LearningCurve, window: usize) -> Result<DeviationReport> {
    let smooth = smoothed(curve, window)?;
    let half = window / 2;
    deviation(curve, &smooth, curve.warmup + half, curve.len().saturating_sub(half), window)
}

/// Per-segment comparison, skipping `guard` samples after each segment start
/// and half a window before each segment end.
pub fn compare_segments(curve: &LearningCurve, window: usize, guard: usize) -> Result<Vec<DeviationReport>> {
    let smooth = smoothed(curve, window)?;
    let half = window / 2;
    let mut bounds = curve.segment_starts.clone();
    bounds.push(curve.len());
    let mut out = Vec::new();
    for k in 0..bounds.len() - 1 {
        let from = (bounds[k] + guard.max(half)).max(curve.warmup + half);
        let to = bounds[k + 1].saturating_sub(half);
        out.push(deviation(curve, &smooth, from, to, window)?);
    }
    Ok(out)
}
