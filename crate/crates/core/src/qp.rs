//! Solver for composite quadratic programs
//!
//!     minimize   0.5 g'Pg + q'g + lambda*||g||_1
//!     subject to A_eq g = b_eq,  A_in g <= b_in
//!
//! via ADMM on the consensus splitting z = [g; A_eq g; A_in g], with
//! over-relaxation, a larger penalty on the equality block, adaptive penalty
//! rescaling, and an active-set polish step that solves the reduced KKT system
//! directly once ADMM has located the support and active set.
//!
//! Convergence is certified by explicit KKT residuals of the candidate point
//! (stationarity through the l1 subdifferential, primal feasibility,
//! complementarity, dual sign), never by iterate-change heuristics.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::linalg::{self, inf_norm, soft_threshold};
use crate::Result;

/// Quadratic-plus-l1 objective. `p` must be symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct CompositeQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub lambda: f64,
}

impl CompositeQp {
    pub fn objective(&self, g: &DVector<f64>) -> f64 {
        0.5 * (g.transpose() * &self.p * g)[(0, 0)]
            + self.q.dot(g)
            + self.lambda * g.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "P is {}x{}, q has length {n}",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda = {}", self.lambda)));
        }
        let scale = self.p.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let mut asym = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((self.p[(i, j)] - self.p[(j, i)]).abs());
            }
        }
        if asym > 1e-10 * scale.max(1e-300) {
            return Err(Error::InvalidParameter(format!(
                "P is asymmetric (max deviation {asym:.3e} vs scale {scale:.3e})"
            )));
        }
        Ok(())
    }
}

/// Linear constraints; either block may have zero rows.
#[derive(Debug, Clone)]
pub struct Constraints {
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl Constraints {
    pub fn none(n: usize) -> Self {
        Self {
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.a_eq.ncols() != n || self.a_in.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "constraint matrices have {} / {} columns, variable count is {n}",
                self.a_eq.ncols(),
                self.a_in.ncols()
            )));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_in.nrows() != self.b_in.len() {
            return Err(Error::DimensionMismatch("constraint rhs length mismatch".into()));
        }
        if self.b_eq.iter().chain(self.b_in.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite constraint rhs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iters: usize,
    /// Initial penalty; the equality block uses `eq_weight` times this.
    pub rho: f64,
    pub eq_weight: f64,
    /// Over-relaxation in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// KKT residuals / penalty adaptation cadence, in iterations.
    pub check_every: usize,
    pub polish: bool,
    /// Skip polish when the reduced KKT system would exceed this dimension.
    pub polish_limit: usize,
    /// Scale the stationarity tolerance by the gradient magnitudes instead of
    /// using an absolute scale of one.
    pub scale_relative: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_abs: 1e-8,
            tol_rel: 1e-6,
            max_iters: 200_000,
            rho: 10.0,
            eq_weight: 1000.0,
            alpha: 1.6,
            adaptive_rho: true,
            check_every: 25,
            polish: true,
            polish_limit: 1200,
            scale_relative: false,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        let ok = self.tol_abs > 0.0
            && self.tol_rel >= 0.0
            && self.max_iters > 0
            && self.rho > 0.0
            && self.eq_weight > 0.0
            && self.alpha > 0.0
            && self.alpha < 2.0
            && self.check_every > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter("bad solver settings".into()))
        }
    }
}

/// KKT residuals of a candidate primal-dual point, with the tolerances they
/// were judged against.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub eq_residual: f64,
    pub in_residual: f64,
    pub complementarity: f64,
    /// Amount by which any inequality multiplier is negative.
    pub neg_dual: f64,
    pub stat_tol: f64,
    pub eq_tol: f64,
    pub in_tol: f64,
    pub comp_tol: f64,
    pub neg_dual_tol: f64,
}

impl KktResiduals {
    pub fn compute(
        qp: &CompositeQp,
        con: &Constraints,
        g: &DVector<f64>,
        y_eq: &DVector<f64>,
        y_in: &DVector<f64>,
        settings: &SolverSettings,
    ) -> Self {
        let pg = &qp.p * g;
        let at_yeq = con.a_eq.tr_mul(y_eq);
        let at_yin = con.a_in.tr_mul(y_in);
        let base = &pg + &qp.q + &at_yeq + &at_yin;
        let mut stat = 0.0_f64;
        for (i, &gi) in g.iter().enumerate() {
            let r = if gi > 0.0 {
                (base[i] + qp.lambda).abs()
            } else if gi < 0.0 {
                (base[i] - qp.lambda).abs()
            } else {
                (base[i].abs() - qp.lambda).max(0.0)
            };
            stat = stat.max(r);
        }
        let scale_d = if settings.scale_relative {
            inf_norm(&pg)
                .max(inf_norm(&qp.q))
                .max(inf_norm(&at_yeq))
                .max(inf_norm(&at_yin))
                .max(qp.lambda)
        } else {
            1.0
        };

        let aeq_g = &con.a_eq * g;
        let eq_residual = inf_norm(&(&aeq_g - &con.b_eq));
        let ain_g = &con.a_in * g;
        let slack = &con.b_in - &ain_g;
        let in_residual = slack.iter().fold(0.0_f64, |a, &s| a.max(-s));
        let complementarity =
            y_in.iter().zip(slack.iter()).fold(0.0_f64, |a, (&y, &s)| a.max((y * s).abs()));
        let neg_dual = y_in.iter().fold(0.0_f64, |a, &y| a.max(-y));

        let y_in_norm = inf_norm(y_in);
        let (ta, tr) = (settings.tol_abs, settings.tol_rel);
        KktResiduals {
            stationarity: stat,
            eq_residual,
            in_residual,
            complementarity,
            neg_dual,
            stat_tol: ta + tr * scale_d,
            eq_tol: ta + tr * inf_norm(&aeq_g).max(inf_norm(&con.b_eq)),
            in_tol: ta + tr * inf_norm(&ain_g).max(inf_norm(&con.b_in)),
            comp_tol: ta * (1.0 + y_in_norm)
                + tr * y_in_norm * inf_norm(&ain_g).max(inf_norm(&con.b_in)).max(1.0),
            neg_dual_tol: ta + tr * y_in_norm,
        }
    }

    pub fn satisfied(&self) -> bool {
        self.stationarity <= self.stat_tol
            && self.eq_residual <= self.eq_tol
            && self.in_residual <= self.in_tol
            && self.complementarity <= self.comp_tol
            && self.neg_dual <= self.neg_dual_tol
    }

    /// Worst residual-to-tolerance ratio; <= 1 means satisfied.
    pub fn max_ratio(&self) -> f64 {
        (self.stationarity / self.stat_tol)
            .max(self.eq_residual / self.eq_tol)
            .max(self.in_residual / self.in_tol)
            .max(self.complementarity / self.comp_tol)
            .max(self.neg_dual / self.neg_dual_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    /// KKT residuals within tolerance.
    Optimal,
    /// Iteration budget exhausted before the certificate passed.
    MaxIters,
    /// Primal residual stalled while the duals diverged.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub g: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
    pub status: SolveStatus,
    pub iters: usize,
    pub kkt: KktResiduals,
    pub objective: f64,
    pub polished: bool,
}

struct Factor {
    chol: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

fn factorize(
    p: &DMatrix<f64>,
    ata_eq: &DMatrix<f64>,
    ata_in: &DMatrix<f64>,
    rho: f64,
    rho_eq: f64,
) -> Result<Factor> {
    let n = p.nrows();
    let mut k = p.clone();
    k += ata_eq * rho_eq;
    k += ata_in * rho;
    for i in 0..n {
        k[(i, i)] += rho;
    }
    let mut jitter = 0.0;
    for _ in 0..4 {
        let mut kj = k.clone();
        if jitter > 0.0 {
            for i in 0..n {
                kj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = nalgebra::linalg::Cholesky::new(kj) {
            return Ok(Factor { chol });
        }
        let scale = k.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs())).max(1.0);
        jitter = if jitter == 0.0 { 1e-12 * scale } else { jitter * 100.0 };
    }
    Err(Error::InvalidParameter("quadratic term is not positive semidefinite".into()))
}

/// Feature-sign search for the unconstrained l1 composite: keep an active set
/// with an explicit sign vector, alternate exact sign-fixed reduced solves
/// (min-norm SVD) with a zero-crossing line search, and admit the single worst
/// subgradient violator once the current configuration is solved. The reduced
/// system can be inconsistent when the active columns are rank-deficient; the
/// residual then lies in the nullspace and is itself a descent ray, followed
/// to the first zero crossing. Objective descent is monotone, so the search
/// cannot cycle; it lands on machine-precision stationarity for PSD (possibly
/// singular) quadratics. Returns the best iterate by worst-case stationarity.
fn feature_sign_polish(
    qp: &CompositeQp,
    g0: &DVector<f64>,
    stat_target: f64,
) -> Option<DVector<f64>> {
    let n = g0.len();
    let lam = qp.lambda;
    let mut g = g0.clone();
    let mut active: Vec<usize> = (0..n).filter(|&i| g[i] != 0.0).collect();
    let mut sign: Vec<f64> = active.iter().map(|&i| g[i].signum()).collect();
    let mut best: Option<(f64, DVector<f64>)> = None;

    let stationarity = |g: &DVector<f64>, base: &DVector<f64>| -> f64 {
        let mut stat = 0.0_f64;
        for i in 0..n {
            let r = if g[i] > 0.0 {
                (base[i] + lam).abs()
            } else if g[i] < 0.0 {
                (base[i] - lam).abs()
            } else {
                (base[i].abs() - lam).max(0.0)
            };
            stat = stat.max(r);
        }
        stat
    };

    for _iter in 0..600 {
        let ns = active.len();
        let mut settled = ns == 0;
        if ns > 0 {
            let mut pss = DMatrix::zeros(ns, ns);
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    pss[(a, b)] = qp.p[(i, j)];
                }
            }
            let rhs = DVector::from_fn(ns, |a, _| -qp.q[active[a]] - lam * sign[a]);
            let gs = DVector::from_fn(ns, |a, _| g[active[a]]);
            let svd = nalgebra::linalg::SVD::new(pss.clone(), true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
            let gs_target = svd.solve(&rhs, 1e-12 * smax.max(f64::MIN_POSITIVE)).ok()?;
            let resid = &rhs - &pss * &gs_target;

            if inf_norm(&resid) <= 0.5 * stat_target {
                // consistent: walk toward the exact solve, stopping at the
                // best objective over the zero crossings en route
                let d = &gs_target - &gs;
                let pd = &pss * &d;
                let quad = 0.5 * d.dot(&pd);
                let lin = d.dot(&(&pss * &gs))
                    + (0..ns).map(|a| d[a] * qp.q[active[a]]).sum::<f64>();
                let l1 = |t: f64| (0..ns).map(|a| (gs[a] + t * d[a]).abs()).sum::<f64>();
                let obj = |t: f64| quad * t * t + lin * t + lam * l1(t);
                let mut t_best = 1.0;
                let mut f_best = obj(1.0);
                for a in 0..ns {
                    if d[a] != 0.0 {
                        let t = -gs[a] / d[a];
                        if t > 0.0 && t < 1.0 {
                            let f = obj(t);
                            if f < f_best {
                                f_best = f;
                                t_best = t;
                            }
                        }
                    }
                }
                if f_best >= obj(0.0) {
                    settled = true;
                } else {
                    let cross = (0..ns)
                        .min_by(|&a, &b| {
                            let ra = (gs[a] + t_best * d[a]).abs();
                            let rb = (gs[b] + t_best * d[b]).abs();
                            ra.partial_cmp(&rb).expect("finite")
                        })
                        .filter(|&a| t_best < 1.0 && d[a] != 0.0);
                    let mut flipped = false;
                    for a in 0..ns {
                        let v = gs[a] + t_best * d[a];
                        g[active[a]] = v;
                        if v != 0.0 && v.signum() != sign[a] {
                            flipped = true;
                        }
                    }
                    if let Some(a) = cross {
                        g[active[a]] = 0.0;
                    }
                    settled = t_best == 1.0 && !flipped;
                }
            } else {
                // rank-deficient and inconsistent: the unresolved residual is
                // a descent ray; ride it to the first zero crossing
                let mut t_hit = f64::INFINITY;
                let mut hit = usize::MAX;
                for a in 0..ns {
                    if resid[a] != 0.0 {
                        let t = -gs[a] / resid[a];
                        if t > 0.0 && t < t_hit {
                            t_hit = t;
                            hit = a;
                        }
                    }
                }
                if hit == usize::MAX {
                    break;
                }
                for a in 0..ns {
                    g[active[a]] = gs[a] + t_hit * resid[a];
                }
                g[active[hit]] = 0.0;
            }
            active.retain(|&i| g[i] != 0.0);
            sign = active.iter().map(|&i| g[i].signum()).collect();
        }

        let base = &qp.p * &g + &qp.q;
        let stat = stationarity(&g, &base);
        if best.as_ref().map_or(true, |(s, _)| stat < *s) {
            best = Some((stat, g.clone()));
        }
        if stat <= stat_target {
            break;
        }
        if settled {
            // optimal for the current configuration: admit the worst violator
            let mut worst = (0.0_f64, usize::MAX);
            for i in 0..n {
                if g[i] == 0.0 {
                    let v = base[i].abs() - lam;
                    if v > worst.0 {
                        worst = (v, i);
                    }
                }
            }
            if worst.1 == usize::MAX {
                break;
            }
            active.push(worst.1);
            sign.push(-base[worst.1].signum());
        }
    }
    best.map(|(_, g)| g)
}

/// Active-set polish. Starting from the ADMM candidate's l1 support, sign
/// pattern, and active inequalities, solve the reduced KKT system with a
/// truncated-SVD pseudo-inverse, then refine the sets: coordinates whose
/// subgradient is violated enter the support, coordinates whose solution
/// flipped sign leave it, and active constraints with negative multipliers are
/// released. The pseudo-inverse is deliberate: the reduced Hessian block is
/// often singular (wide data matrices) and a regularized LU solution blows up
/// along its nullspace. Unconstrained problems with an active l1 term go to
/// coordinate descent instead, which handles support discovery natively. The
/// caller keeps the result only if it improves the KKT residuals.
fn try_polish(
    qp: &CompositeQp,
    con: &Constraints,
    g: &DVector<f64>,
    y_in: &DVector<f64>,
    kkt: &KktResiduals,
    settings: &SolverSettings,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = g.len();
    let n_eq = con.a_eq.nrows();
    // unconstrained l1 goes to feature-sign search, which discovers the
    // support natively and is immune to rank-deficient sign degeneracy
    if qp.lambda > 0.0 && n_eq == 0 && con.a_in.nrows() == 0 {
        let gp = feature_sign_polish(qp, g, 0.25 * kkt.stat_tol)?;
        return Some((gp, DVector::zeros(0), DVector::zeros(0)));
    }
    let m_in = con.a_in.nrows();
    let all_coords = qp.lambda == 0.0;
    let mut signs: Vec<f64> = g.iter().map(|&v| v.signum()).collect();
    let mut support: Vec<usize> = if all_coords {
        (0..n).collect()
    } else {
        (0..n).filter(|&i| g[i] != 0.0).collect()
    };
    // band activity comes from the duals alone: slack gates misfire on tight
    // double-sided bands, where every row sits within tolerance of its bound
    let y_norm = inf_norm(y_in);
    let mut act: Vec<usize> =
        (0..m_in).filter(|&j| y_in[j] > 1e-6 * (1.0 + y_norm)).collect();

    let mut g_cur = g.clone();
    let mut best: Option<(f64, (DVector<f64>, DVector<f64>, DVector<f64>))> = None;
    // the theta bias scales with the iterate, so freeze the proxy once
    let theta = 0.25 * kkt.stat_tol / inf_norm(g).max(1.0);
    let rounds = if n + n_eq > 600 { 8 } else { 40 };

    for _round in 0..rounds {
        let ns = support.len();
        let dim = ns + n_eq + act.len();
        if dim > settings.polish_limit {
            break;
        }
        if ns == 0 {
            // nothing to solve for; admit the steepest coordinate if the
            // zero vector is not already stationary
            if all_coords {
                break;
            }
            let mut worst = (qp.lambda + 0.5 * kkt.stat_tol, usize::MAX);
            for i in 0..n {
                if qp.q[i].abs() > worst.0 {
                    worst = (qp.q[i].abs(), i);
                }
            }
            if worst.1 == usize::MAX {
                break;
            }
            signs[worst.1] = -qp.q[worst.1].signum();
            support.push(worst.1);
            continue;
        }

        // [ P_SS + theta*I  C'; C  0 ] over the working sets; theta keeps the
        // Hessian block nonsingular for degenerate supports while biasing
        // stationarity by at most a quarter of its tolerance
        let mut pss = DMatrix::zeros(ns, ns);
        for (a, &i) in support.iter().enumerate() {
            for (b, &j) in support.iter().enumerate() {
                pss[(a, b)] = qp.p[(i, j)];
            }
        }
        let mut kmat = DMatrix::zeros(dim, dim);
        kmat.view_mut((0, 0), (ns, ns)).copy_from(&pss);
        for a in 0..ns {
            kmat[(a, a)] += theta;
        }
        for e in 0..n_eq {
            for (c, &i) in support.iter().enumerate() {
                kmat[(ns + e, c)] = con.a_eq[(e, i)];
                kmat[(c, ns + e)] = con.a_eq[(e, i)];
            }
        }
        for (r, &j) in act.iter().enumerate() {
            for (c, &i) in support.iter().enumerate() {
                kmat[(ns + n_eq + r, c)] = con.a_in[(j, i)];
                kmat[(c, ns + n_eq + r)] = con.a_in[(j, i)];
            }
        }
        let mut rhs = DVector::zeros(dim);
        for (a, &i) in support.iter().enumerate() {
            rhs[a] = -qp.q[i] - qp.lambda * signs[i];
        }
        for e in 0..n_eq {
            rhs[ns + e] = con.b_eq[e];
        }
        for (r, &j) in act.iter().enumerate() {
            rhs[ns + n_eq + r] = con.b_in[j];
        }

        let svd = nalgebra::linalg::SVD::new(kmat.clone(), true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let eps = 1e-10 * smax;
        let Ok(mut x) = svd.solve(&rhs, eps) else { break };
        // one refinement pass to knock down the truncation error
        let resid = &rhs - &kmat * &x;
        let Ok(dx) = svd.solve(&resid, eps) else { break };
        x += dx;

        let mut g_solve = DVector::zeros(n);
        for (a, &i) in support.iter().enumerate() {
            g_solve[i] = x[a];
        }
        let y_eq_new = DVector::from_fn(n_eq, |r, _| x[ns + r]);
        let mut y_in_new = DVector::zeros(m_in);
        for (r, &j) in act.iter().enumerate() {
            y_in_new[j] = x[ns + n_eq + r];
        }

        // the exact solve is the certification candidate
        let kkt_round = KktResiduals::compute(qp, con, &g_solve, &y_eq_new, &y_in_new, settings);
        let ratio_round = kkt_round.max_ratio();
        if best.as_ref().map_or(true, |(r, _)| ratio_round < *r) {
            best = Some((ratio_round, (g_solve.clone(), y_eq_new.clone(), y_in_new.clone())));
        }
        if kkt_round.satisfied() {
            break;
        }

        // walk toward the solve along the feasible segment, stopping at the
        // best objective over the zero crossings en route; crossings leave
        // the support, which is what makes degenerate sign sets resolvable
        let mut settled_support = true;
        if all_coords {
            g_cur = g_solve;
        } else {
            let gs_old = DVector::from_fn(ns, |a, _| g_cur[support[a]]);
            let gs_new = DVector::from_fn(ns, |a, _| g_solve[support[a]]);
            let d = &gs_new - &gs_old;
            let quad = 0.5 * d.dot(&(&pss * &d));
            let lin = d.dot(&(&pss * &gs_old))
                + (0..ns).map(|a| d[a] * qp.q[support[a]]).sum::<f64>();
            let l1 = |t: f64| (0..ns).map(|a| (gs_old[a] + t * d[a]).abs()).sum::<f64>();
            let obj = |t: f64| quad * t * t + lin * t + qp.lambda * l1(t);
            let mut t_best = 1.0;
            let mut f_best = obj(1.0);
            for a in 0..ns {
                if d[a] != 0.0 {
                    let t = -gs_old[a] / d[a];
                    if t > 0.0 && t < 1.0 {
                        let f = obj(t);
                        if f < f_best {
                            f_best = f;
                            t_best = t;
                        }
                    }
                }
            }
            if f_best < obj(0.0) {
                let cross = (0..ns)
                    .min_by(|&a, &b| {
                        let ra = (gs_old[a] + t_best * d[a]).abs();
                        let rb = (gs_old[b] + t_best * d[b]).abs();
                        ra.partial_cmp(&rb).expect("finite")
                    })
                    .filter(|&a| t_best < 1.0 && d[a] != 0.0);
                for a in 0..ns {
                    let v = gs_old[a] + t_best * d[a];
                    g_cur[support[a]] = v;
                    if v != 0.0 && v.signum() != signs[support[a]] {
                        signs[support[a]] = v.signum();
                        settled_support = false;
                    }
                }
                if let Some(a) = cross {
                    g_cur[support[a]] = 0.0;
                }
                if t_best < 1.0 {
                    settled_support = false;
                }
                support.retain(|&i| g_cur[i] != 0.0);
            }
        }

        // one working-set move per round: release the most negative
        // multiplier, otherwise admit the most violated band
        let mut settled_act = true;
        if let Some((r, worst)) = act
            .iter()
            .enumerate()
            .map(|(r, &j)| (r, y_in_new[j]))
            .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
        {
            if worst < -1e-12 * (1.0 + y_norm) {
                act.remove(r);
                settled_act = false;
            }
        }
        if settled_act && m_in > 0 {
            let in_act = {
                let mut f = vec![false; m_in];
                for &j in &act {
                    f[j] = true;
                }
                f
            };
            let mut worst = (0.0_f64, usize::MAX);
            for j in 0..m_in {
                if !in_act[j] {
                    let viol = con.a_in.row(j).dot(&g_cur.transpose()) - con.b_in[j];
                    if viol > worst.0.max(1e-12 * (1.0 + con.b_in[j].abs())) {
                        worst = (viol, j);
                    }
                }
            }
            if worst.1 != usize::MAX {
                act.push(worst.1);
                settled_act = false;
            }
        }

        if settled_support && settled_act {
            if all_coords {
                break;
            }
            // optimal for the current configuration: admit the single worst
            // subgradient violator, or stop if none is left
            let base = &qp.p * &g_cur
                + &qp.q
                + con.a_eq.tr_mul(&y_eq_new)
                + con.a_in.tr_mul(&y_in_new);
            let mut in_support = vec![false; n];
            for &i in &support {
                in_support[i] = true;
            }
            let mut worst = (qp.lambda + 0.5 * kkt.stat_tol, usize::MAX);
            for i in 0..n {
                if !in_support[i] && base[i].abs() > worst.0 {
                    worst = (base[i].abs(), i);
                }
            }
            if worst.1 == usize::MAX {
                break;
            }
            signs[worst.1] = -base[worst.1].signum();
            support.push(worst.1);
        }
    }
    best.map(|(_, triple)| triple)
}

/// Solve the composite QP. Returns the best candidate found with an explicit
/// status; callers decide whether a non-`Optimal` status is an error.
pub fn solve(qp: &CompositeQp, con: &Constraints, settings: &SolverSettings) -> Result<Solution> {
    qp.validate()?;
    settings.validate()?;
    let n = qp.q.len();
    con.validate(n)?;

    let mut p = qp.p.clone();
    linalg::symmetrize(&mut p);
    let qp_sym = CompositeQp { p, q: qp.q.clone(), lambda: qp.lambda };

    let ata_eq = if con.a_eq.nrows() > 0 { linalg::gram(&con.a_eq) } else { DMatrix::zeros(n, n) };
    let ata_in = if con.a_in.nrows() > 0 { linalg::gram(&con.a_in) } else { DMatrix::zeros(n, n) };

    let mut rho = settings.rho;
    let mut factor = factorize(&qp_sym.p, &ata_eq, &ata_in, rho, settings.eq_weight * rho)?;
    let mut refactors = 0usize;

    let (m_eq, m_in) = (con.a_eq.nrows(), con.a_in.nrows());
    let mut z1 = DVector::<f64>::zeros(n);
    let mut z_in = DVector::from_fn(m_in, |i, _| con.b_in[i].min(0.0));
    let mut u1 = DVector::<f64>::zeros(n);
    let mut u_eq = DVector::<f64>::zeros(m_eq);
    let mut u_in = DVector::<f64>::zeros(m_in);

    let mut best: Option<(f64, Solution)> = None;
    let mut last_polish_ratio = f64::INFINITY;
    // (relative primal residual, dual magnitude) history for the
    // infeasibility heuristic, one entry per check.
    let mut history: Vec<(f64, f64)> = Vec::new();
    const STALL_WINDOW: usize = 60;

    let mut z1_prev = z1.clone();
    let mut z_in_prev = z_in.clone();

    let mut iters_done = settings.max_iters;
    for it in 1..=settings.max_iters {
        let rho_eq = settings.eq_weight * rho;

        let mut rhs = -&qp_sym.q;
        rhs += (&z1 - &u1) * rho;
        if m_eq > 0 {
            rhs += con.a_eq.tr_mul(&((&con.b_eq - &u_eq) * rho_eq));
        }
        if m_in > 0 {
            rhs += con.a_in.tr_mul(&((&z_in - &u_in) * rho));
        }
        let g = factor.chol.solve(&rhs);

        let mg_eq = if m_eq > 0 { &con.a_eq * &g } else { DVector::zeros(0) };
        let mg_in = if m_in > 0 { &con.a_in * &g } else { DVector::zeros(0) };

        z1_prev.copy_from(&z1);
        z_in_prev.copy_from(&z_in);

        let a = settings.alpha;
        let thresh = qp_sym.lambda / rho;
        for i in 0..n {
            let h = a * g[i] + (1.0 - a) * z1[i];
            z1[i] = soft_threshold(h + u1[i], thresh);
            u1[i] += h - z1[i];
        }
        for i in 0..m_eq {
            // z_eq is pinned at b_eq, so only the dual moves
            u_eq[i] += a * (mg_eq[i] - con.b_eq[i]);
        }
        for i in 0..m_in {
            let h = a * mg_in[i] + (1.0 - a) * z_in[i];
            z_in[i] = (h + u_in[i]).min(con.b_in[i]);
            u_in[i] += h - z_in[i];
        }

        if it % settings.check_every != 0 && it != settings.max_iters {
            continue;
        }

        let y_eq = &u_eq * rho_eq;
        let y_in = &u_in * rho;
        let kkt = KktResiduals::compute(&qp_sym, con, &z1, &y_eq, &y_in, settings);
        let ratio = kkt.max_ratio();
        let make_solution = |g: DVector<f64>,
                             y_eq: DVector<f64>,
                             y_in: DVector<f64>,
                             kkt: KktResiduals,
                             status: SolveStatus,
                             iters: usize,
                             polished: bool| {
            let objective = qp_sym.objective(&g);
            Solution { g, y_eq, y_in, status, iters, kkt, objective, polished }
        };

        // polish when close (or converged), keeping it only if it helps
        let mut polished_candidate: Option<(DVector<f64>, DVector<f64>, DVector<f64>, KktResiduals)> =
            None;
        if settings.polish && (kkt.satisfied() || (ratio <= 1e6 && ratio < 0.3 * last_polish_ratio))
        {
            last_polish_ratio = ratio;
            if let Some((gp, yeqp, yinp)) = try_polish(&qp_sym, con, &z1, &y_in, &kkt, settings) {
                let kkt_p = KktResiduals::compute(&qp_sym, con, &gp, &yeqp, &yinp, settings);
                if kkt_p.max_ratio() <= ratio {
                    polished_candidate = Some((gp, yeqp, yinp, kkt_p));
                }
            }
        }

        if let Some((gp, yeqp, yinp, kkt_p)) = &polished_candidate {
            if kkt_p.satisfied() {
                return Ok(make_solution(
                    gp.clone(),
                    yeqp.clone(),
                    yinp.clone(),
                    *kkt_p,
                    SolveStatus::Optimal,
                    it,
                    true,
                ));
            }
        }
        if kkt.satisfied() {
            return Ok(make_solution(
                z1.clone(),
                y_eq.clone(),
                y_in.clone(),
                kkt,
                SolveStatus::Optimal,
                it,
                false,
            ));
        }

        // remember the best non-optimal candidate for an honest MaxIters report
        let (cand_ratio, cand) = match polished_candidate {
            Some((gp, yeqp, yinp, kkt_p)) => (
                kkt_p.max_ratio(),
                make_solution(gp, yeqp, yinp, kkt_p, SolveStatus::MaxIters, it, true),
            ),
            None => (
                ratio,
                make_solution(
                    z1.clone(),
                    y_eq.clone(),
                    y_in.clone(),
                    kkt,
                    SolveStatus::MaxIters,
                    it,
                    false,
                ),
            ),
        };
        if best.as_ref().map_or(true, |(r, _)| cand_ratio < *r) {
            best = Some((cand_ratio, cand));
        }

        // primal/dual balance for penalty adaptation
        let r1 = inf_norm(&(&g - &z1));
        let r_eq = if m_eq > 0 { inf_norm(&(&mg_eq - &con.b_eq)) } else { 0.0 };
        let r_in = if m_in > 0 { inf_norm(&(&mg_in - &z_in)) } else { 0.0 };
        let r_prim = r1.max(r_eq).max(r_in);
        let scale_p = inf_norm(&g)
            .max(inf_norm(&z1))
            .max(inf_norm(&mg_eq))
            .max(inf_norm(&mg_in))
            .max(inf_norm(&con.b_eq))
            .max(1e-12);
        let mut s = (&z1_prev - &z1) * rho;
        if m_in > 0 {
            s += con.a_in.tr_mul(&((&z_in_prev - &z_in) * rho));
        }
        let r_dual = inf_norm(&s);
        let scale_d = inf_norm(&(&qp_sym.p * &z1)).max(inf_norm(&qp_sym.q)).max(1e-12);

        let r_prim_rel = r_prim / scale_p;
        let dual_mag = inf_norm(&y_eq).max(inf_norm(&y_in));
        history.push((r_prim_rel, dual_mag));
        if history.len() >= STALL_WINDOW {
            let (r_then, y_then) = history[history.len() - STALL_WINDOW];
            let stalled = r_prim_rel > 1e-4 && r_prim_rel > 0.99 * r_then;
            let diverging = dual_mag > 10.0 * (y_then + 1.0) && dual_mag > 1e4;
            if stalled && diverging {
                let (_, mut sol) = best.take().expect("candidate recorded above");
                sol.status = SolveStatus::Infeasible;
                sol.iters = it;
                return Ok(sol);
            }
        }

        if settings.adaptive_rho && refactors < 100 {
            let balance = (r_prim / scale_p) / (r_dual / scale_d).max(1e-300);
            let factor_change = if balance > 10.0 {
                2.0
            } else if balance < 0.1 {
                0.5
            } else {
                1.0
            };
            let new_rho = (rho * factor_change).clamp(1e-4, 1e8);
            if new_rho != rho {
                let rescale = rho / new_rho;
                u1 *= rescale;
                u_eq *= rescale;
                u_in *= rescale;
                rho = new_rho;
                factor =
                    factorize(&qp_sym.p, &ata_eq, &ata_in, rho, settings.eq_weight * rho)?;
                refactors += 1;
            }
        }
        iters_done = it;
    }

    let (_, mut sol) = best.expect("at least one check ran");
    sol.iters = iters_done;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn qp1(p: f64, q: f64, lambda: f64) -> CompositeQp {
        CompositeQp {
            p: DMatrix::from_element(1, 1, p),
            q: DVector::from_element(1, q),
            lambda,
        }
    }

    fn solve_ok(qp: &CompositeQp, con: &Constraints) -> Solution {
        let sol = solve(qp, con, &SolverSettings::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "kkt = {:?}", sol.kkt);
        assert!(sol.kkt.satisfied());
        sol
    }

    #[test]
    fn unconstrained_smooth_minimum() {
        let qp = CompositeQp {
            p: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0])),
            q: DVector::from_vec(vec![-2.0, -4.0]),
            lambda: 0.0,
        };
        let sol = solve_ok(&qp, &Constraints::none(2));
        assert_relative_eq!(sol.g[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.g[1], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn scalar_soft_threshold_solutions() {
        // min 0.5 x^2 - 3x + lambda |x|  =>  x = soft(3, lambda)
        let sol = solve_ok(&qp1(1.0, -3.0, 1.0), &Constraints::none(1));
        assert_relative_eq!(sol.g[0], 2.0, epsilon = 1e-6);
        let sol = solve_ok(&qp1(1.0, -3.0, 4.0), &Constraints::none(1));
        assert_eq!(sol.g[0], 0.0);
    }

    #[test]
    fn equality_constraint_and_multiplier() {
        // min 0.5||x||^2 s.t. x1 + x2 = 2  =>  x = (1,1), y = -1
        let qp = CompositeQp {
            p: DMatrix::identity(2, 2),
            q: DVector::zeros(2),
            lambda: 0.0,
        };
        let con = Constraints {
            a_eq: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b_eq: DVector::from_element(1, 2.0),
            a_in: DMatrix::zeros(0, 2),
            b_in: DVector::zeros(0),
        };
        let sol = solve_ok(&qp, &con);
        assert_relative_eq!(sol.g[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.g[1], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.y_eq[0], -1.0, epsilon = 1e-5);
        // polish pins the equality to near machine precision
        assert!(sol.kkt.eq_residual <= 1e-10, "eq residual {}", sol.kkt.eq_residual);
    }

    #[test]
    fn active_and_inactive_inequalities() {
        // min 0.5 (x-3)^2: unbounded side inactive, tight side active with y=2
        let con_active = Constraints {
            a_eq: DMatrix::zeros(0, 1),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::from_element(1, 1, 1.0),
            b_in: DVector::from_element(1, 1.0),
        };
        let sol = solve_ok(&qp1(1.0, -3.0, 0.0), &con_active);
        assert_relative_eq!(sol.g[0], 1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.y_in[0], 2.0, epsilon = 1e-5);

        let con_inactive = Constraints {
            b_in: DVector::from_element(1, 5.0),
            ..con_active
        };
        let sol = solve_ok(&qp1(1.0, -3.0, 0.0), &con_inactive);
        assert_relative_eq!(sol.g[0], 3.0, epsilon = 1e-6);
        assert!(sol.y_in[0].abs() <= 1e-6);
    }

    #[test]
    fn box_via_two_rows() {
        // min 0.5 (x+3)^2 with |x| <= 1  =>  x = -1
        let con = Constraints {
            a_eq: DMatrix::zeros(0, 1),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            b_in: DVector::from_element(2, 1.0),
        };
        let sol = solve_ok(&qp1(1.0, 3.0, 0.0), &con);
        assert_relative_eq!(sol.g[0], -1.0, epsilon = 1e-7);
        assert_relative_eq!(sol.y_in[1], 2.0, epsilon = 1e-5);
        assert!(sol.y_in[0].abs() <= 1e-6);
    }

    #[test]
    fn equality_overrides_l1_shrinkage() {
        // large lambda cannot move mass off the equality constraint
        let qp = CompositeQp {
            p: DMatrix::identity(2, 2),
            q: DVector::zeros(2),
            lambda: 10.0,
        };
        let con = Constraints {
            a_eq: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b_eq: DVector::from_element(1, 2.0),
            a_in: DMatrix::zeros(0, 2),
            b_in: DVector::zeros(0),
        };
        let sol = solve_ok(&qp, &con);
        assert_relative_eq!(sol.g[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(sol.g[1], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn separable_box_qp_matches_clamp_formula() {
        let n = 30;
        let mut rng = StdRng::seed_from_u64(11);
        let pd: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
        let qv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lo_hi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..1.0)).collect();
        let qp = CompositeQp {
            p: DMatrix::from_diagonal(&DVector::from_vec(pd.clone())),
            q: DVector::from_vec(qv.clone()),
            lambda: 0.0,
        };
        let mut a_in = DMatrix::zeros(2 * n, n);
        let mut b_in = DVector::zeros(2 * n);
        for i in 0..n {
            a_in[(2 * i, i)] = 1.0;
            b_in[2 * i] = lo_hi[i];
            a_in[(2 * i + 1, i)] = -1.0;
            b_in[2 * i + 1] = lo_hi[i];
        }
        let con = Constraints { a_eq: DMatrix::zeros(0, n), b_eq: DVector::zeros(0), a_in, b_in };
        let sol = solve_ok(&qp, &con);
        for i in 0..n {
            let expect = (-qv[i] / pd[i]).clamp(-lo_hi[i], lo_hi[i]);
            assert_relative_eq!(sol.g[i], expect, epsilon = 1e-6);
        }
    }

    #[test]
    fn separable_l1_matches_soft_threshold_formula() {
        let n = 30;
        let mut rng = StdRng::seed_from_u64(12);
        let pd: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..3.0)).collect();
        let qv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let lambda = 0.7;
        let qp = CompositeQp {
            p: DMatrix::from_diagonal(&DVector::from_vec(pd.clone())),
            q: DVector::from_vec(qv.clone()),
            lambda,
        };
        let sol = solve_ok(&qp, &Constraints::none(n));
        for i in 0..n {
            let expect = crate::linalg::soft_threshold(-qv[i], lambda) / pd[i];
            assert_relative_eq!(sol.g[i], expect, epsilon = 1e-6, max_relative = 1e-6);
        }
    }

    #[test]
    fn random_equality_qp_matches_direct_kkt_solve() {
        let n = 40;
        let mut rng = StdRng::seed_from_u64(13);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = &a.transpose() * &a + DMatrix::identity(n, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a_eq = DMatrix::from_fn(3, n, |_, _| rng.gen_range(-1.0..1.0));
        let b_eq = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let qp = CompositeQp { p: p.clone(), q: q.clone(), lambda: 0.0 };
        let con = Constraints {
            a_eq: a_eq.clone(),
            b_eq: b_eq.clone(),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
        };
        let sol = solve_ok(&qp, &con);

        // direct KKT solve as the oracle
        let dim = n + 3;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        kkt.view_mut((n, 0), (3, n)).copy_from(&a_eq);
        kkt.view_mut((0, n), (n, 3)).copy_from(&a_eq.transpose());
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&q));
        rhs.rows_mut(n, 3).copy_from(&b_eq);
        let x = kkt.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert_relative_eq!(sol.g[i], x[i], epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn infeasible_problem_is_flagged() {
        // x = 1 and x <= 0 cannot hold together
        let con = Constraints {
            a_eq: DMatrix::from_element(1, 1, 1.0),
            b_eq: DVector::from_element(1, 1.0),
            a_in: DMatrix::from_element(1, 1, 1.0),
            b_in: DVector::from_element(1, 0.0),
        };
        let settings = SolverSettings { max_iters: 100_000, ..Default::default() };
        let sol = solve(&qp1(1.0, 0.0, 0.0), &con, &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn max_iters_reports_honestly() {
        let qp = CompositeQp {
            p: DMatrix::identity(2, 2),
            q: DVector::from_vec(vec![-1.0, -1.0]),
            lambda: 0.3,
        };
        let settings = SolverSettings { max_iters: 3, check_every: 1, polish: false, ..Default::default() };
        let sol = solve(&qp, &Constraints::none(2), &settings).unwrap();
        assert_eq!(sol.status, SolveStatus::MaxIters);
        assert!(!sol.kkt.satisfied());
    }

    #[test]
    fn objective_never_worse_than_reference_points() {
        let n = 12;
        let mut rng = StdRng::seed_from_u64(14);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = &a.transpose() * &a + DMatrix::identity(n, n);
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let qp = CompositeQp { p: p.clone(), q: q.clone(), lambda: 0.4 };
        let sol = solve_ok(&qp, &Constraints::none(n));
        let at_zero = qp.objective(&DVector::zeros(n));
        let lsq = p.clone().lu().solve(&(-&q)).unwrap();
        assert!(sol.objective <= at_zero + 1e-9);
        assert!(sol.objective <= qp.objective(&lsq) + 1e-9);
    }

    #[test]
    fn l1_norm_shrinks_along_the_lambda_path() {
        let n = 10;
        let mut rng = StdRng::seed_from_u64(15);
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let p = &a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norms: Vec<f64> = [0.01, 0.1, 0.5, 2.0]
            .iter()
            .map(|&lambda| {
                let qp = CompositeQp { p: p.clone(), q: q.clone(), lambda };
                solve_ok(&qp, &Constraints::none(n)).g.iter().map(|v| v.abs()).sum()
            })
            .collect();
        for w in norms.windows(2) {
            assert!(w[0] >= w[1] - 1e-9, "l1 norms not monotone: {norms:?}");
        }
    }

    #[test]
    fn lattice_search_confirms_objective_on_tiny_instance() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.5]);
        let q = DVector::from_vec(vec![-1.0, 2.0]);
        let qp = CompositeQp { p, q, lambda: 0.5 };
        let con = Constraints {
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            b_in: DVector::from_element(4, 1.5),
        };
        let sol = solve_ok(&qp, &con);

        let step = 0.002;
        let mut best = f64::INFINITY;
        let steps = (3.0 / step) as i64;
        for i in 0..=steps {
            for j in 0..=steps {
                let g = DVector::from_vec(vec![-1.5 + step * i as f64, -1.5 + step * j as f64]);
                best = best.min(qp.objective(&g));
            }
        }
        assert!((sol.objective - best).abs() <= 1e-4, "solve {} vs lattice {best}", sol.objective);
    }

    #[test]
    fn rejects_malformed_problems() {
        let asym = CompositeQp {
            p: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
            q: DVector::zeros(2),
            lambda: 0.0,
        };
        assert!(solve(&asym, &Constraints::none(2), &SolverSettings::default()).is_err());

        let qp = CompositeQp { p: DMatrix::identity(2, 2), q: DVector::zeros(2), lambda: 0.0 };
        assert!(solve(&qp, &Constraints::none(3), &SolverSettings::default()).is_err());
        let bad = SolverSettings { alpha: 2.5, ..Default::default() };
        assert!(solve(&qp, &Constraints::none(2), &bad).is_err());
    }
}
