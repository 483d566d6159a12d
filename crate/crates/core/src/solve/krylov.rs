//! Conjugate gradients and BiCGStab over distributed owned vectors.
//!
//! Inner products go through the fixed-point global sum, so iterates are
//! bit-identical for any number of ranks.

use std::fmt;

use crate::error::{Error, Result};
use crate::partition::{global_dot, RankContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Method {
    Cg,
    #[default]
    BiCgStab,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cg => "cg",
            Method::BiCgStab => "bcgs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Preconditioner {
    None,
    #[default]
    Jacobi,
}

impl Preconditioner {
    pub fn name(self) -> &'static str {
        match self {
            Preconditioner::None => "none",
            Preconditioner::Jacobi => "jacobi",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub preconditioner: Preconditioner,
    pub max_iterations: usize,
    pub abs_tolerance: f64,
    pub rel_tolerance: f64,
    pub report_convergence: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            method: Method::BiCgStab,
            preconditioner: Preconditioner::Jacobi,
            max_iterations: 10_000,
            abs_tolerance: 1e-6,
            rel_tolerance: 1e-6,
            report_convergence: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tolerance > 0.0 && self.rel_tolerance > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvergedReason {
    AbsoluteTolerance,
    RelativeTolerance,
    MaxIterations,
    Breakdown,
}

impl ConvergedReason {
    pub fn converged(self) -> bool {
        matches!(self, ConvergedReason::AbsoluteTolerance | ConvergedReason::RelativeTolerance)
    }
}

impl fmt::Display for ConvergedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConvergedReason::AbsoluteTolerance => "CONVERGED_ATOL",
            ConvergedReason::RelativeTolerance => "CONVERGED_RTOL",
            ConvergedReason::MaxIterations => "DIVERGED_ITS",
            ConvergedReason::Breakdown => "DIVERGED_BREAKDOWN",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub reason: ConvergedReason,
    /// Residual norm before the first iteration and after each one.
    pub history: Vec<f64>,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.reason.converged()
    }
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "reason={} iterations={} residual={:.6e}",
            self.reason, self.iterations, self.residual_norm
        )
    }
}

/// Optional inputs beyond the operator and right-hand side.
#[derive(Default)]
pub struct SolveSetup<'a> {
    pub initial_guess: Option<Vec<f64>>,
    /// Operator diagonal; needed for Jacobi.
    pub diagonal: Option<Vec<f64>>,
    /// Iteration count already spent before `initial_guess` was saved.
    pub start_iteration: usize,
    /// Called after every iteration with the iteration number and iterate.
    #[allow(clippy::type_complexity)]
    pub monitor: Option<Box<dyn FnMut(usize, &[f64]) -> Result<()> + 'a>>,
}

fn norm(ctx: &RankContext, v: &[f64]) -> Result<f64> {
    Ok(global_dot(ctx, v, v)?.sqrt())
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

struct Jacobi(Option<Vec<f64>>);

impl Jacobi {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        match &self.0 {
            Some(inv) => r.iter().zip(inv).map(|(a, b)| a * b).collect(),
            None => r.to_vec(),
        }
    }
}

/// Solve `A x = b` with default setup.
pub fn krylov_solve<A>(ctx: &RankContext, apply: A, b: &[f64], options: &SolverOptions) -> Result<(Vec<f64>, SolveReport)>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    krylov_solve_with(ctx, apply, b, options, SolveSetup::default())
}

/// Solve `A x = b`. Stops when `‖r‖ ≤ max(atol, rtol‖b‖)` or at the
/// iteration limit.
pub fn krylov_solve_with<A>(
    ctx: &RankContext,
    mut apply: A,
    b: &[f64],
    options: &SolverOptions,
    mut setup: SolveSetup<'_>,
) -> Result<(Vec<f64>, SolveReport)>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    options.validate()?;
    let n = b.len();
    let precond = match options.preconditioner {
        Preconditioner::None => Jacobi(None),
        Preconditioner::Jacobi => {
            let d = setup
                .diagonal
                .take()
                .ok_or_else(|| Error::Contract("Jacobi preconditioning needs the operator diagonal".into()))?;
            if d.len() != n {
                return Err(Error::Contract("diagonal length differs from the right-hand side".into()));
            }
            Jacobi(Some(d.iter().map(|&v| if v != 0.0 { 1.0 / v } else { 1.0 }).collect()))
        }
    };
    let mut x = setup.initial_guess.take().unwrap_or_else(|| vec![0.0; n]);
    if x.len() != n {
        return Err(Error::Contract("initial guess length differs from the right-hand side".into()));
    }
    let bnorm = norm(ctx, b)?;
    if !bnorm.is_finite() {
        return Err(Error::Solver("non-finite right-hand side".into()));
    }
    let threshold = options.abs_tolerance.max(options.rel_tolerance * bnorm);
    let mut state = State {
        ctx,
        options,
        threshold,
        history: Vec::new(),
        iteration: setup.start_iteration,
        monitor: setup.monitor.take(),
    };
    let ax = apply(&x)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    match options.method {
        Method::Cg => cg(&mut state, &mut apply, &precond, &mut x, r),
        Method::BiCgStab => bicgstab(&mut state, &mut apply, &precond, &mut x, r),
    }
    .map(|report| (x, report))
}

struct State<'s, 'a> {
    ctx: &'s RankContext,
    options: &'s SolverOptions,
    threshold: f64,
    history: Vec<f64>,
    iteration: usize,
    monitor: Option<Box<dyn FnMut(usize, &[f64]) -> Result<()> + 'a>>,
}

impl State<'_, '_> {
    /// Record a residual norm; `Some(reason)` when done.
    fn check(&mut self, rnorm: f64) -> Result<Option<ConvergedReason>> {
        if rnorm.is_nan() {
            return Err(Error::Solver(format!("residual became NaN at iteration {}", self.iteration)));
        }
        self.history.push(rnorm);
        if rnorm <= self.threshold {
            return Ok(Some(if rnorm <= self.options.abs_tolerance {
                ConvergedReason::AbsoluteTolerance
            } else {
                ConvergedReason::RelativeTolerance
            }));
        }
        if self.iteration >= self.options.max_iterations {
            return Ok(Some(ConvergedReason::MaxIterations));
        }
        Ok(None)
    }

    fn step_done(&mut self, x: &[f64]) -> Result<()> {
        self.iteration += 1;
        if let Some(m) = self.monitor.as_mut() {
            m(self.iteration, x)?;
        }
        Ok(())
    }

    fn report(&mut self, reason: ConvergedReason) -> SolveReport {
        let report = SolveReport {
            iterations: self.iteration,
            residual_norm: self.history.last().copied().unwrap_or(0.0),
            reason,
            history: std::mem::take(&mut self.history),
        };
        if self.options.report_convergence && self.ctx.is_root() {
            log::info!("linear solve ({}): {report}", self.options.method.name());
        }
        report
    }
}

fn cg<A>(st: &mut State<'_, '_>, apply: &mut A, m: &Jacobi, x: &mut [f64], mut r: Vec<f64>) -> Result<SolveReport>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let ctx = st.ctx;
    if let Some(reason) = st.check(norm(ctx, &r)?)? {
        return Ok(st.report(reason));
    }
    let mut z = m.apply(&r);
    let mut p = z.clone();
    let mut rz = global_dot(ctx, &r, &z)?;
    loop {
        let ap = apply(&p)?;
        let pap = global_dot(ctx, &p, &ap)?;
        if pap == 0.0 || !pap.is_finite() {
            st.history.push(norm(ctx, &r)?);
            return Ok(st.report(ConvergedReason::Breakdown));
        }
        let alpha = rz / pap;
        axpy(x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        st.step_done(x)?;
        if let Some(reason) = st.check(norm(ctx, &r)?)? {
            return Ok(st.report(reason));
        }
        z = m.apply(&r);
        let rz_new = global_dot(ctx, &r, &z)?;
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
}

fn bicgstab<A>(st: &mut State<'_, '_>, apply: &mut A, m: &Jacobi, x: &mut [f64], mut r: Vec<f64>) -> Result<SolveReport>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let ctx = st.ctx;
    let mut rnorm = norm(ctx, &r)?;
    if let Some(reason) = st.check(rnorm)? {
        return Ok(st.report(reason));
    }
    let shadow = r.clone();
    let shadow_norm = rnorm;
    let n = r.len();
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let tiny = f64::EPSILON * f64::EPSILON;
    loop {
        let rho_new = global_dot(ctx, &shadow, &r)?;
        if rho_new.abs() <= tiny * shadow_norm * rnorm || omega == 0.0 {
            return Ok(st.report(ConvergedReason::Breakdown));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let y = m.apply(&p);
        v = apply(&y)?;
        let sv = global_dot(ctx, &shadow, &v)?;
        if sv == 0.0 || !sv.is_finite() {
            return Ok(st.report(ConvergedReason::Breakdown));
        }
        alpha = rho / sv;
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        let snorm = norm(ctx, &s)?;
        if snorm <= st.threshold {
            axpy(x, alpha, &y);
            st.step_done(x)?;
            let reason = st.check(snorm)?.expect("below threshold");
            return Ok(st.report(reason));
        }
        let z = m.apply(&s);
        let t = apply(&z)?;
        let tt = global_dot(ctx, &t, &t)?;
        omega = if tt == 0.0 { 0.0 } else { global_dot(ctx, &t, &s)? / tt };
        axpy(x, alpha, &y);
        axpy(x, omega, &z);
        r = s;
        axpy(&mut r, -omega, &t);
        st.step_done(x)?;
        rnorm = norm(ctx, &r)?;
        if let Some(reason) = st.check(rnorm)? {
            return Ok(st.report(reason));
        }
    }
}

/// Least-squares slope of `log E` against `log h`.
pub fn convergence_order(samples: &[(f64, f64)]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::Domain("need at least two (h, error) samples".into()));
    }
    if samples.iter().any(|&(h, e)| !(h > 0.0 && e > 0.0)) {
        return Err(Error::Domain("mesh sizes and errors must be positive".into()));
    }
    if samples.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(Error::Domain("mesh sizes must decrease".into()));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense(a: Vec<Vec<f64>>) -> impl FnMut(&[f64]) -> Result<Vec<f64>> {
        move |x: &[f64]| Ok(a.iter().map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum()).collect())
    }

    fn opts(method: Method, pc: Preconditioner, tol: f64) -> SolverOptions {
        SolverOptions {
            method,
            preconditioner: pc,
            max_iterations: 1000,
            abs_tolerance: tol,
            rel_tolerance: tol,
            report_convergence: false,
        }
    }

    fn solve_dense(a: Vec<Vec<f64>>, b: &[f64], o: &SolverOptions) -> (Vec<f64>, SolveReport) {
        let diag = (0..b.len()).map(|i| a[i][i]).collect();
        let ctx = RankContext::single();
        krylov_solve_with(
            &ctx,
            dense(a),
            b,
            o,
            SolveSetup {
                diagonal: Some(diag),
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn identity_takes_one_iteration() {
        for m in [Method::Cg, Method::BiCgStab] {
            let b = [1.0, -2.0, 3.5];
            let eye = (0..3).map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
            let (x, rep) = solve_dense(eye, &b, &opts(m, Preconditioner::None, 1e-12));
            assert_eq!(x, b);
            assert_eq!(rep.iterations, 1);
            assert!(rep.converged());
        }
    }

    #[test]
    fn two_by_two() {
        for m in [Method::Cg, Method::BiCgStab] {
            for pc in [Preconditioner::None, Preconditioner::Jacobi] {
                let (x, rep) = solve_dense(vec![vec![4.0, 1.0], vec![1.0, 3.0]], &[1.0, 2.0], &opts(m, pc, 1e-14));
                assert!((x[0] - 1.0 / 11.0).abs() < 1e-12 && (x[1] - 7.0 / 11.0).abs() < 1e-12, "{m:?} {pc:?}");
                assert!(rep.converged());
            }
        }
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let (x, rep) = solve_dense(vec![vec![2.0]], &[0.0], &opts(Method::Cg, Preconditioner::None, 1e-6));
        assert_eq!(x, vec![0.0]);
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.reason, ConvergedReason::AbsoluteTolerance);
    }

    #[test]
    fn iteration_limit_reported() {
        let a: Vec<Vec<f64>> = (0..20)
            .map(|i: usize| (0..20usize).map(|j| if i == j { 2.0 + i as f64 } else if i.abs_diff(j) == 1 { -1.0 } else { 0.0 }).collect())
            .collect();
        let mut o = opts(Method::Cg, Preconditioner::None, 1e-14);
        o.max_iterations = 2;
        let (_, rep) = solve_dense(a, &[1.0; 20], &o);
        assert_eq!(rep.reason, ConvergedReason::MaxIterations);
        assert_eq!(rep.iterations, 2);
        assert!(!rep.converged());
    }

    #[test]
    fn nan_operator_is_an_error() {
        let ctx = RankContext::single();
        let r = krylov_solve(&ctx, |x: &[f64]| Ok(x.iter().map(|_| f64::NAN).collect()), &[1.0], &opts(Method::Cg, Preconditioner::None, 1e-6));
        assert!(matches!(r, Err(Error::Solver(_))));
    }

    #[test]
    fn jacobi_needs_diagonal_and_options_validate() {
        let ctx = RankContext::single();
        let r = krylov_solve(&ctx, |x: &[f64]| Ok(x.to_vec()), &[1.0], &opts(Method::Cg, Preconditioner::Jacobi, 1e-6));
        assert!(matches!(r, Err(Error::Contract(_))));
        let mut o = opts(Method::Cg, Preconditioner::None, 1e-6);
        o.abs_tolerance = 0.0;
        assert!(matches!(krylov_solve(&ctx, |x: &[f64]| Ok(x.to_vec()), &[1.0], &o), Err(Error::Config(_))));
    }

    #[test]
    fn bicgstab_breakdown_reported() {
        // rotation: the shadow residual is orthogonal to A r
        let (_, rep) = solve_dense(
            vec![vec![0.0, 1.0], vec![-1.0, 0.0]],
            &[1.0, 0.0],
            &opts(Method::BiCgStab, Preconditioner::None, 1e-12),
        );
        assert_eq!(rep.reason, ConvergedReason::Breakdown);
    }

    #[test]
    fn monitor_sees_every_iteration() {
        let ctx = RankContext::single();
        let mut seen = Vec::new();
        let (_, rep) = krylov_solve_with(
            &ctx,
            dense(vec![vec![4.0, 1.0], vec![1.0, 3.0]]),
            &[1.0, 2.0],
            &opts(Method::Cg, Preconditioner::None, 1e-14),
            SolveSetup {
                start_iteration: 5,
                monitor: Some(Box::new(|it, _| {
                    seen.push(it);
                    Ok(())
                })),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(seen, (6..=rep.iterations).collect::<Vec<_>>());
    }

    #[test]
    fn order_of_exact_power_laws() {
        assert!((convergence_order(&[(0.5, 0.25), (0.25, 0.0625)]).unwrap() - 2.0).abs() < 1e-15);
        let s: Vec<_> = [0.5, 0.25, 0.125, 0.0625].iter().map(|&h: &f64| (h, 7.0 * h.powi(3))).collect();
        assert!((convergence_order(&s).unwrap() - 3.0).abs() < 1e-12);
        assert!(convergence_order(&[(0.5, 1.0)]).is_err());
        assert!(convergence_order(&[(0.5, 1.0), (0.25, 0.0)]).is_err());
        assert!(convergence_order(&[(0.25, 1.0), (0.5, 0.5)]).is_err());
    }

    fn spd(n: usize, seed: u64) -> Vec<Vec<f64>> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() / n as f64 + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cg_on_spd_converges_within_n_iterations(n in 2usize..50, seed in 0u64..1000) {
            let a = spd(n, seed);
            let b: Vec<f64> = (0..n).map(|i| ((i * 37 + 11) % 17) as f64 - 8.0).collect();
            let (x, rep) = solve_dense(a.clone(), &b, &opts(Method::Cg, Preconditioner::None, 1e-10));
            prop_assert!(rep.converged());
            // energy-norm optimality only bounds the 2-norm residual up to
            // conditioning; compare the true residual instead
            let ax: Vec<f64> = a.iter().map(|row| row.iter().zip(&x).map(|(p, q)| p * q).sum()).collect();
            let res = ax.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(res <= 1e-9 * (1.0 + b.iter().map(|v| v * v).sum::<f64>().sqrt()));
            prop_assert!(rep.iterations <= n, "{} iterations for n = {}", rep.iterations, n);
        }

        #[test]
        fn preconditioning_does_not_change_the_solution(n in 2usize..30, seed in 0u64..1000) {
            let a = spd(n, seed);
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            for m in [Method::Cg, Method::BiCgStab] {
                let (x0, _) = solve_dense(a.clone(), &b, &opts(m, Preconditioner::None, 1e-10));
                let (x1, _) = solve_dense(a.clone(), &b, &opts(m, Preconditioner::Jacobi, 1e-10));
                let d = x0.iter().zip(&x1).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
                prop_assert!(d <= 1e-8, "{:?}: {}", m, d);
            }
        }
    }
}
