use crate::error::{Error, Result};
use crate::model::Decision;

use super::{DrpcrProblem, GammaInterval, PsiEvaluation, TraceRow};

/// Result of a ratio search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    /// Lower end of the final bracket.
    pub gamma_star: f64,
    pub interval: GammaInterval,
    pub trace: Vec<TraceRow>,
    /// Number of `psi` evaluations.
    pub evaluations: usize,
    /// Per-context decisions from the last accepted evaluation; `None` when
    /// no evaluated point was feasible.
    pub policy: Option<Vec<Decision>>,
    /// Ratio at which `policy` was computed.
    pub policy_gamma: Option<f64>,
}

impl SearchOutcome {
    fn new(interval: GammaInterval) -> Self {
        SearchOutcome {
            gamma_star: interval.lo(),
            interval,
            trace: Vec::new(),
            evaluations: 0,
            policy: None,
            policy_gamma: None,
        }
    }

    fn accept(&mut self, eval: &PsiEvaluation) {
        if self.policy_gamma.map_or(true, |g| eval.gamma >= g) {
            self.policy = Some(eval.phis.iter().map(|p| p.decision.clone()).collect());
            self.policy_gamma = Some(eval.gamma);
        }
    }

    fn finish(mut self, interval: GammaInterval) -> Self {
        self.interval = interval;
        self.gamma_star = interval.lo();
        self
    }
}

/// Strategy for locating the largest `gamma` with `psi(gamma) <= 0`.
pub trait GammaSearch: Send + Sync {
    fn name(&self) -> &'static str;
    fn search(&self, problem: &DrpcrProblem<'_>, epsilon: f64) -> Result<SearchOutcome>;
}

/// Plain bisection on `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bisection;

impl GammaSearch for Bisection {
    fn name(&self) -> &'static str {
        "bisection"
    }

    fn search(&self, problem: &DrpcrProblem<'_>, epsilon: f64) -> Result<SearchOutcome> {
        let mut interval = GammaInterval::unit(epsilon)?;
        let tol = problem.feasibility_tolerance();
        let mut out = SearchOutcome::new(interval);
        let mut iteration = 0;
        while !interval.converged() {
            iteration += 1;
            let mid = interval.midpoint();
            let eval = problem.psi(mid)?;
            out.evaluations += 1;
            if eval.value <= tol {
                interval.raise_lo(mid);
                out.accept(&eval);
            } else {
                interval.lower_hi(mid);
            }
            out.trace.push(row(iteration, &eval, &interval));
        }
        Ok(out.finish(interval))
    }
}

/// Bisection that also tightens the bracket with an affine minorant of `psi`
/// (from the worst-case weights at the midpoint) and a secant majorant
/// (valid only when `psi` is convex, i.e. for relaxed decisions).
///
/// The minorant is `a + b gamma`; its zero is `-a / b`. A secant lying below a
/// later evaluation inside its span means `psi` is not convex and the search
/// stops with [`Error::NonConvexDetected`].
#[derive(Debug, Clone, Copy, Default)]
pub struct AcceleratedBisection;

const CONVEXITY_SLACK: f64 = 1e-6;

struct Secant {
    g0: f64,
    p0: f64,
    g1: f64,
    p1: f64,
}

impl Secant {
    fn at(&self, g: f64) -> f64 {
        self.p0 + (self.p1 - self.p0) * (g - self.g0) / (self.g1 - self.g0)
    }

    fn check(&self, g: f64, value: f64) -> Result<()> {
        if g > self.g0 && g < self.g1 {
            let bound = self.at(g);
            if value > bound + CONVEXITY_SLACK {
                return Err(Error::NonConvexDetected {
                    gamma: g,
                    detail: format!(
                        "psi({g}) = {value} exceeds the secant through ({}, {}) and ({}, {}) at {bound}",
                        self.g0, self.p0, self.g1, self.p1
                    ),
                });
            }
        }
        Ok(())
    }
}

struct Evaluator<'p, 'a> {
    problem: &'p DrpcrProblem<'a>,
    tol: f64,
    out: SearchOutcome,
    secants: Vec<Secant>,
    /// Largest evaluated feasible point and smallest evaluated infeasible one.
    feasible: Option<(f64, f64)>,
    infeasible: Option<(f64, f64)>,
}

impl Evaluator<'_, '_> {
    fn eval(&mut self, gamma: f64) -> Result<PsiEvaluation> {
        let eval = self.problem.psi(gamma)?;
        self.out.evaluations += 1;
        for s in &self.secants {
            s.check(gamma, eval.value)?;
        }
        if eval.value <= self.tol {
            self.out.accept(&eval);
            if self.feasible.map_or(true, |(g, _)| gamma > g) {
                self.feasible = Some((gamma, eval.value));
            }
        } else if self.infeasible.map_or(true, |(g, _)| gamma < g) {
            self.infeasible = Some((gamma, eval.value));
        }
        Ok(eval)
    }
}

impl GammaSearch for AcceleratedBisection {
    fn name(&self) -> &'static str {
        "accelerated"
    }

    fn search(&self, problem: &DrpcrProblem<'_>, epsilon: f64) -> Result<SearchOutcome> {
        let mut interval = GammaInterval::unit(epsilon)?;
        let tol = problem.feasibility_tolerance();
        let mut ev = Evaluator {
            problem,
            tol,
            out: SearchOutcome::new(interval),
            secants: Vec::new(),
            feasible: None,
            infeasible: None,
        };
        let mut iteration = 0;
        while !interval.converged() {
            iteration += 1;
            let mid = interval.midpoint();
            let eval = ev.eval(mid)?;
            if eval.value <= tol {
                interval.raise_lo(mid);
            } else {
                interval.lower_hi(mid);
            }

            let (a, b) = problem.underestimator(&eval)?;
            if b > 0.0 {
                // Shifted by the feasibility tolerance so that every point
                // cut off has psi > tol.
                interval.lower_hi((tol - a) / b);
            }

            if !interval.converged() {
                if ev.feasible.is_none() {
                    let lo = interval.lo();
                    let e = ev.eval(lo)?;
                    ev.out.trace.push(row(iteration, &e, &interval));
                }
                if ev.infeasible.is_none() {
                    let hi = interval.hi();
                    let e = ev.eval(hi)?;
                    if e.value <= tol {
                        interval.raise_lo(hi);
                    }
                    ev.out.trace.push(row(iteration, &e, &interval));
                }
                if let (Some((g0, p0)), Some((g1, p1))) = (ev.feasible, ev.infeasible) {
                    if g0 < g1 {
                        let secant = Secant { g0, p0, g1, p1 };
                        let root = g0 + (tol - p0) * (g1 - g0) / (p1 - p0);
                        interval.raise_lo(root.min(interval.hi()));
                        ev.secants.push(secant);
                    }
                }
            }
            ev.out.trace.push(row(iteration, &eval, &interval));
        }
        Ok(ev.out.finish(interval))
    }
}

fn row(iteration: usize, eval: &PsiEvaluation, interval: &GammaInterval) -> TraceRow {
    TraceRow {
        iteration,
        gamma_mid: eval.gamma,
        psi_value: eval.value,
        lo: interval.lo(),
        hi: interval.hi(),
    }
}

pub const GAMMA_SEARCHES: [&str; 2] = ["bisection", "accelerated"];

pub fn gamma_search(name: &str) -> Result<&'static dyn GammaSearch> {
    match name {
        "bisection" => Ok(&Bisection),
        "accelerated" => Ok(&AcceleratedBisection),
        other => Err(Error::UnknownStrategy {
            kind: "gamma search",
            name: other.to_string(),
        }),
    }
}
