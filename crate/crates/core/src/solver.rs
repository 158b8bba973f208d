//! Frank-Wolfe ascent on the concave value function `J` over the Gelbrich
//! ball. The limit point is the adversary's worst-case covariance `Σ*`; the
//! conditional mean under `Σ*` is the robust estimator, and the pair is a
//! Nash equilibrium of the truncated game.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gelbrich::{gelbrich_distance_sq, linear_oracle, GelbrichBall};
use crate::linalg::{inner, symmetrize, SortedEigen};
use crate::model::{
    risk_matrix, AffineEstimator, Conditioned, JointGaussian, ObservationMap,
    OBSERVATION_FLOOR_RELATIVE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineSearch {
    /// Maximize `J` along the segment by golden-section search.
    GoldenSection { iterations: usize },
    /// Classical open-loop step `2 / (k + 2)`.
    Fixed,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::GoldenSection { iterations: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Absolute Frank-Wolfe gap at which to stop.
    pub gap_tol: f64,
    /// Relative tolerance of the oracle bisection on `δ²`.
    pub bisect_tol: f64,
    pub line_search: LineSearch,
    pub record_trace: bool,
    /// Stop when `J` has moved by less than `stagnation_tol · |J|` over this
    /// many iterations.
    pub stagnation_window: usize,
    pub stagnation_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            gap_tol: 1e-7,
            bisect_tol: 1e-10,
            line_search: LineSearch::default(),
            record_trace: false,
            stagnation_window: 10,
            stagnation_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if !(self.gap_tol > 0.0) || !(self.bisect_tol > 0.0) || !(self.stagnation_tol > 0.0) {
            return invalid("solver tolerances must be strictly positive");
        }
        if let LineSearch::GoldenSection { iterations: 0 } = self.line_search {
            return invalid("golden-section search needs at least one iteration");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GapTolerance,
    MaxIterations,
    Stagnation,
    /// The gradient vanished, so every feasible point is optimal.
    DegenerateGradient,
    /// The ball is a single point.
    ZeroRadius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub value: f64,
    pub gap: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub sigma_star: JointGaussian,
    pub estimator: AffineEstimator,
    /// Game value `J(Σ*)`.
    pub value: f64,
    /// Frank-Wolfe gap at `Σ*`, an upper bound on `max J − J(Σ*)`.
    pub gap: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// `det(B Σ* Bᵀ)`.
    pub det_k: f64,
    pub distance_sq: f64,
    pub trace: Option<Vec<TracePoint>>,
}

/// What the observer sees at every iterate, before the step is taken.
pub struct IterateView<'a> {
    pub iteration: usize,
    pub sigma: &'a DMatrix<f64>,
    pub value: f64,
    pub gap: f64,
}

pub fn solve_equilibrium(
    ball: &GelbrichBall,
    map: &ObservationMap,
    config: &SolverConfig,
) -> Result<EquilibriumResult> {
    solve_equilibrium_observed(ball, map, config, |_| {})
}

pub fn solve_equilibrium_observed(
    ball: &GelbrichBall,
    map: &ObservationMap,
    config: &SolverConfig,
    mut observer: impl FnMut(&IterateView<'_>),
) -> Result<EquilibriumResult> {
    config.validate()?;
    if ball.dim() != map.dim() {
        return invalid(format!(
            "ball dimension {} does not match model dimension {}",
            ball.dim(),
            map.dim()
        ));
    }

    let mut sigma = ball.sigma0().clone();
    let mut trace = config.record_trace.then(Vec::new);
    let mut history: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let (stop_reason, last_gap) = loop {
        let cond = Conditioned::new(&sigma, map)?;
        let value = cond.value();
        let gradient = risk_matrix(&AffineEstimator::new(cond.gain()), map)?;

        let vertex = match linear_oracle(&gradient, ball, config.bisect_tol) {
            Ok(sol) => sol.sigma,
            Err(Error::DegenerateGradient) => {
                observer(&IterateView {
                    iteration: iterations,
                    sigma: &sigma,
                    value,
                    gap: 0.0,
                });
                break (StopReason::DegenerateGradient, 0.0);
            }
            Err(e) => return Err(e),
        };
        let direction = &vertex - &sigma;
        let gap = inner(&gradient, &direction);
        observer(&IterateView {
            iteration: iterations,
            sigma: &sigma,
            value,
            gap,
        });
        history.push(value);

        if ball.delta() == 0.0 {
            push_trace(&mut trace, iterations, value, gap, 0.0);
            break (StopReason::ZeroRadius, gap);
        }
        if gap <= config.gap_tol {
            push_trace(&mut trace, iterations, value, gap, 0.0);
            break (StopReason::GapTolerance, gap);
        }
        let w = config.stagnation_window;
        if w > 0 && history.len() > w {
            let then = history[history.len() - 1 - w];
            if (value - then).abs() <= config.stagnation_tol * value.abs() {
                push_trace(&mut trace, iterations, value, gap, 0.0);
                break (StopReason::Stagnation, gap);
            }
        }
        if iterations == config.max_iters {
            push_trace(&mut trace, iterations, value, gap, 0.0);
            break (StopReason::MaxIterations, gap);
        }

        let step = match config.line_search {
            LineSearch::Fixed => 2.0 / (iterations as f64 + 2.0),
            LineSearch::GoldenSection { iterations: n } => {
                let segment = Segment::new(&sigma, &direction, map);
                segment.maximize(n, value)
            }
        };
        push_trace(&mut trace, iterations, value, gap, step);
        sigma = symmetrize(&(&sigma + &direction * step));
        iterations += 1;
    };

    let cond = Conditioned::new(&sigma, map)?;
    let value = cond.value();
    let estimator = AffineEstimator::new(cond.gain());
    let det_k = observation_determinant(&sigma, map);
    let distance_sq = gelbrich_distance_sq(&sigma, ball)?;
    Ok(EquilibriumResult {
        sigma_star: JointGaussian::new_unchecked(sigma),
        estimator,
        value,
        gap: last_gap,
        iterations,
        stop_reason,
        det_k,
        distance_sq,
        trace,
    })
}

fn push_trace(
    trace: &mut Option<Vec<TracePoint>>,
    iteration: usize,
    value: f64,
    gap: f64,
    step: f64,
) {
    if let Some(t) = trace {
        t.push(TracePoint {
            iteration,
            value,
            gap,
            step,
        });
    }
}

/// `J` restricted to `Σ + η Δ`. Every block entering `J` is affine in `η`,
/// so each evaluation is a single small Cholesky factorization.
struct Segment {
    prior_trace: (f64, f64),
    cross: (DMatrix<f64>, DMatrix<f64>),
    k: (DMatrix<f64>, DMatrix<f64>),
}

impl Segment {
    fn new(sigma: &DMatrix<f64>, direction: &DMatrix<f64>, map: &ObservationMap) -> Self {
        let parts = |m: &DMatrix<f64>| {
            let a_m = map.a() * m;
            let prior_trace = inner(&a_m, map.a());
            let cross = &a_m * map.b().transpose();
            let k = map.b() * m * map.b().transpose();
            (prior_trace, cross, k)
        };
        let (p0, c0, k0) = parts(sigma);
        let (p1, c1, k1) = parts(direction);
        Self {
            prior_trace: (p0, p1),
            cross: (c0, c1),
            k: (k0, k1),
        }
    }

    fn value(&self, eta: f64) -> f64 {
        let k = symmetrize(&(&self.k.0 + &self.k.1 * eta));
        let cross = &self.cross.0 + &self.cross.1 * eta;
        let prior = self.prior_trace.0 + eta * self.prior_trace.1;
        match Cholesky::new(k) {
            Some(chol) => match chol.l().solve_lower_triangular(&cross.transpose()) {
                Some(half) => prior - half.norm_squared(),
                None => f64::NEG_INFINITY,
            },
            None => f64::NEG_INFINITY,
        }
    }

    /// Golden-section maximization on [0, 1]. The endpoints are compared
    /// too, and a step never decreases `J` below `current`.
    fn maximize(&self, iterations: usize, current: f64) -> f64 {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (0.0, 1.0);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let mut fc = self.value(c);
        let mut fd = self.value(d);
        for _ in 0..iterations {
            if fc >= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - inv_phi * (b - a);
                fc = self.value(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + inv_phi * (b - a);
                fd = self.value(d);
            }
        }
        let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
        let end = self.value(1.0);
        if end > best.1 {
            best = (1.0, end);
        }
        if best.1 >= current {
            best.0
        } else {
            0.0
        }
    }
}

/// `det(B Σ Bᵀ)`; 1 for an empty design.
pub fn observation_determinant(sigma: &DMatrix<f64>, map: &ObservationMap) -> f64 {
    let k = map.b() * sigma * map.b().transpose();
    SortedEigen::new(&k).values.iter().product()
}

/// True iff `λ_min(B Σ Bᵀ) ≥ floor`, with the default floor
/// `1e-12 · tr(B Σ Bᵀ)`.
pub fn invertibility_guard(sigma: &DMatrix<f64>, map: &ObservationMap, floor: Option<f64>) -> bool {
    if sigma.nrows() != map.dim() || sigma.ncols() != map.dim() {
        return false;
    }
    let k = symmetrize(&(map.b() * sigma * map.b().transpose()));
    if k.nrows() == 0 {
        return true;
    }
    let floor = floor.unwrap_or(OBSERVATION_FLOOR_RELATIVE * k.trace().abs());
    let min = SortedEigen::new(&k).min();
    min >= floor && min > 0.0
}

/// Relative change of the last two determinants below which the sequence
/// counts as stabilized.
pub const DETERMINANT_STABLE_RELATIVE: f64 = 5e-2;
/// A strictly decreasing sequence that has lost at least this fraction of
/// its first value counts as decaying toward zero.
pub const DETERMINANT_DECAY_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeterminantTrend {
    /// The determinants settle to a positive limit.
    Stabilizing,
    /// Strictly decreasing without settling: the limit model may lose
    /// invertibility of the observation covariance.
    Decaying,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminantReport {
    /// `(N, det K)` in increasing `N`.
    pub levels: Vec<(usize, f64)>,
    pub trend: DeterminantTrend,
}

impl DeterminantReport {
    pub fn decay_flagged(&self) -> bool {
        self.trend == DeterminantTrend::Decaying
    }
}

pub fn determinant_diagnostic(levels: &[(usize, f64)]) -> Result<DeterminantReport> {
    if levels.len() < 2 {
        return invalid("determinant diagnostic needs at least two truncation levels");
    }
    if levels.windows(2).any(|w| w[0].0 >= w[1].0) {
        return invalid("truncation levels must be strictly increasing");
    }
    let dets: Vec<f64> = levels.iter().map(|l| l.1).collect();
    let (first, prev, last) = (dets[0], dets[dets.len() - 2], dets[dets.len() - 1]);
    let decreasing = dets.windows(2).all(|w| w[1] < w[0]);
    let trend = if decreasing && last <= (1.0 - DETERMINANT_DECAY_FRACTION) * first {
        DeterminantTrend::Decaying
    } else if prev > 0.0 && ((last - prev) / prev).abs() <= DETERMINANT_STABLE_RELATIVE {
        DeterminantTrend::Stabilizing
    } else {
        DeterminantTrend::Inconclusive
    };
    Ok(DeterminantReport {
        levels: levels.to_vec(),
        trend,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub n: usize,
    pub value: f64,
    /// `|J_i − J_{i−1}| / |J_i|` against the previous level.
    pub relative_increment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub rows: Vec<TruncationRow>,
}

impl TruncationReport {
    pub fn increments(&self) -> Vec<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.relative_increment)
            .collect()
    }

    pub fn increments_decreasing(&self) -> bool {
        self.increments().windows(2).all(|w| w[1] <= w[0])
    }

    pub fn last_increment(&self) -> Option<f64> {
        self.increments().last().copied()
    }
}

/// Tabulates game values over truncation levels given in increasing order.
pub fn truncation_convergence(levels: &[(usize, f64)]) -> Result<TruncationReport> {
    if levels.is_empty() {
        return invalid("no truncation levels given");
    }
    if levels.windows(2).any(|w| w[0].0 > w[1].0) {
        return invalid("truncation levels must be non-decreasing");
    }
    let rows = levels
        .iter()
        .enumerate()
        .map(|(i, &(n, value))| TruncationRow {
            n,
            value,
            relative_increment: (i > 0).then(|| {
                let prev = levels[i - 1].1;
                if value == prev {
                    0.0
                } else {
                    (value - prev).abs() / value.abs()
                }
            }),
        })
        .collect();
    Ok(TruncationReport { rows })
}
