//! Type-symmetric equilibrium of the asymmetric first-price procurement.
//!
//! Strategies are computed in mirrored coordinates: with costs rescaled to
//! the effective reserve, a bidder's value is `v = 1 - c` and its mirrored
//! bid is `b = 1 - x` for procurement bid `x`, turning the procurement into a
//! first-price auction whose inverse bids `phi_tau` all start at 0 and reach
//! value 1 at a common (unknown) top bid `bbar`.
//!
//! The first-order conditions
//!
//! `1 - eta_i = (phi_i(b) - b) * sum_{j != i} f_j(phi_j) phi_j'(b) / F_j(phi_j)`
//!
//! are discretised on a fixed proportional grid `b = bbar * t_k` with central
//! differences for `phi_j'`, closed by `phi(0) = 0`, `phi(bbar) = 1`, and a
//! one-sided top-node condition for a benchmark type that pins `bbar`. The
//! resulting bordered block-tridiagonal system is solved by a damped Newton
//! method; a parameter homotopy from the uniform risk-neutral game provides a
//! fallback path for hard parameter values.

use crate::density::CostDensity;
use crate::error::{Error, Result};
use crate::interp::MonotoneCubic;
use crate::math::BandedLu;
use crate::model::{BidderConfig, DensityKind, Model, ModelParams};

/// Number of grid nodes per strategy curve.
pub const GRID_N: usize = 512;

/// Convergence threshold: largest per-type mean absolute iterate change.
const STEP_TOL: f64 = 1e-10;
/// Residual guard that must also hold at convergence.
const RES_TOL: f64 = 1e-8;
/// A residual this small is accepted as solved without further steps.
const RES_DONE: f64 = 1e-11;
/// Newton iteration cap.
const MAX_ITER: usize = 100;
/// Reserves below this mass of retained cost distribution are rejected.
const MIN_TRUNCATION_MASS: f64 = 1e-10;

/// One type's equilibrium bid curve in original (unscaled) coordinates.
#[derive(Debug, Clone)]
struct TypeCurves {
    /// Procurement bid -> cost.
    inverse: MonotoneCubic,
    /// Cost -> procurement bid.
    forward: MonotoneCubic,
}

/// Solved equilibrium for one bidder configuration and effective reserve.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    config: BidderConfig,
    reserve: f64,
    b_min: f64,
    bbar: f64,
    types: Vec<usize>,
    curves: Vec<TypeCurves>,
    y_norm: Vec<Vec<f64>>,
    iterations: usize,
}

impl EquilibriumSolution {
    /// Lowest bid any participant submits.
    pub fn b_min(&self) -> f64 {
        self.b_min
    }

    /// Highest possible bid, equal to the effective reserve.
    pub fn max_bid(&self) -> f64 {
        self.reserve
    }

    pub fn reserve(&self) -> f64 {
        self.reserve
    }

    pub fn config(&self) -> &BidderConfig {
        &self.config
    }

    /// Participating types, ascending.
    pub fn types(&self) -> &[usize] {
        &self.types
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn curve(&self, tau: usize) -> Result<&TypeCurves> {
        self.types
            .iter()
            .position(|&t| t == tau)
            .map(|i| &self.curves[i])
            .ok_or_else(|| Error::input(format!("type {tau} not in configuration")))
    }

    /// Equilibrium bid of a type-`tau` participant with cost `c`.
    pub fn bid(&self, tau: usize, c: f64) -> Result<f64> {
        let curve = self.curve(tau)?;
        if !(0.0..=self.reserve + 1e-12).contains(&c) {
            return Err(Error::domain(format!(
                "cost {c} outside [0, {}]",
                self.reserve
            )));
        }
        Ok(curve.forward.eval(c))
    }

    /// Slope of the bid function at cost `c`.
    pub fn bid_deriv(&self, tau: usize, c: f64) -> Result<f64> {
        let curve = self.curve(tau)?;
        if !(0.0..=self.reserve + 1e-12).contains(&c) {
            return Err(Error::domain(format!(
                "cost {c} outside [0, {}]",
                self.reserve
            )));
        }
        Ok(curve.forward.deriv(c))
    }

    /// Cost at which a type-`tau` participant would bid `b`.
    ///
    /// `b` must lie in the bid support `[b_min, reserve]`.
    pub fn inverse_bid(&self, tau: usize, b: f64) -> Result<f64> {
        let curve = self.curve(tau)?;
        if b < self.b_min - 1e-12 || b > self.reserve + 1e-12 {
            return Err(Error::domain(format!(
                "bid {b} outside support [{}, {}]",
                self.b_min, self.reserve
            )));
        }
        Ok(curve.inverse.eval(b))
    }

    /// Slope of the inverse bid function at bid `b`.
    pub fn inverse_bid_deriv(&self, tau: usize, b: f64) -> Result<f64> {
        let curve = self.curve(tau)?;
        if b < self.b_min - 1e-12 || b > self.reserve + 1e-12 {
            return Err(Error::domain(format!(
                "bid {b} outside support [{}, {}]",
                self.b_min, self.reserve
            )));
        }
        Ok(curve.inverse.deriv(b))
    }

    /// The common bid grid of the stored curves.
    pub fn bid_nodes(&self, tau: usize) -> Result<&[f64]> {
        Ok(self.curve(tau)?.inverse.xs())
    }

    /// Costs at the bid grid nodes.
    pub fn cost_nodes(&self, tau: usize) -> Result<&[f64]> {
        Ok(self.curve(tau)?.inverse.ys())
    }
}

/// Per-type density in mirrored, reserve-rescaled coordinates.
struct ValueView<'a> {
    density: &'a CostDensity,
    rho: f64,
    mass: f64,
}

impl<'a> ValueView<'a> {
    fn new(density: &'a CostDensity, rho: f64, tau: usize) -> Result<Self> {
        let mass = if rho == 1.0 { 1.0 } else { density.cdf(rho) };
        if mass < MIN_TRUNCATION_MASS {
            return Err(Error::EmptyTruncation { rho, mass, tau });
        }
        Ok(ValueView { density, rho, mass })
    }

    /// Density of the mirrored value at `v`.
    fn pdf(&self, v: f64) -> f64 {
        self.rho * self.density.pdf(self.rho * (1.0 - v)) / self.mass
    }

    /// Derivative of the mirrored value density at `v`.
    fn pdf_deriv(&self, v: f64) -> f64 {
        -self.rho * self.rho * self.density.pdf_deriv(self.rho * (1.0 - v)) / self.mass
    }

    /// CDF of the mirrored value at `v`.
    fn cdf(&self, v: f64) -> f64 {
        if self.rho == 1.0 {
            self.density.value_mass(v)
        } else {
            let c = self.rho * (1.0 - v);
            (self.density.survival(c) - self.density.survival(self.rho)) / self.mass
        }
    }
}

struct Solver<'a> {
    views: Vec<ValueView<'a>>,
    /// Bidders per participating type.
    counts: Vec<f64>,
    etas: Vec<f64>,
    n: f64,
    t: Vec<f64>,
    h: f64,
}

#[derive(Clone)]
struct Iterate {
    /// `y[type][node]`: mirrored value at grid node, endpoints fixed at 0, 1.
    y: Vec<Vec<f64>>,
    bbar: f64,
}

struct Residual {
    /// `g[type][cell]`: optimality defect at each cell midpoint.
    g: Vec<Vec<f64>>,
    norm: f64,
}

impl<'a> Solver<'a> {
    /// Count of type-`tau` opponents faced by a type-`i` bidder.
    fn opponents(&self, i: usize, tau: usize) -> f64 {
        self.counts[tau] - if i == tau { 1.0 } else { 0.0 }
    }

    fn project(&self, it: &mut Iterate) {
        it.bbar = it.bbar.clamp(1e-6, 1.0 - 1e-9);
        for y in &mut it.y {
            for k in 1..GRID_N - 1 {
                let floor = it.bbar * self.t[k] + 1e-13;
                y[k] = y[k].clamp(floor, 1.0);
            }
        }
    }

    /// Optimality defect of the box scheme: the first-order conditions
    /// collocated at cell midpoints with one-sided slopes. The compact
    /// difference sees odd-even oscillation at full strength, so sawtooth
    /// profiles cannot masquerade as roots the way they can under central
    /// differences. The bottom cell sits in the boundary layer where the
    /// type equations degenerate into one shared constraint, so only the
    /// `bench` type's equation is kept there; every other cell keeps all.
    fn residual(&self, it: &Iterate, bench: usize) -> Residual {
        let m = self.views.len();
        let cells = GRID_N - 1;
        let inv_bh = 1.0 / (it.bbar * self.h);
        let mut g = vec![vec![0.0; cells]; m];
        let mut norm: f64 = 0.0;

        let mut r = vec![0.0; m];
        let mut slope = vec![0.0; m];
        let mut ybar = vec![0.0; m];
        for k in 0..cells {
            let tbar = 0.5 * (self.t[k] + self.t[k + 1]);
            for tau in 0..m {
                let ya = it.y[tau][k];
                let yb = it.y[tau][k + 1];
                ybar[tau] = 0.5 * (ya + yb);
                slope[tau] = (yb - ya) * inv_bh;
                r[tau] = self.views[tau].pdf(ybar[tau]) / self.views[tau].cdf(ybar[tau]);
            }
            for i in 0..m {
                if k == 0 && i != bench {
                    continue;
                }
                let z = ybar[i] - it.bbar * tbar;
                let s: f64 =
                    (0..m).map(|tau| self.opponents(i, tau) * r[tau] * slope[tau]).sum();
                let gi = (1.0 - self.etas[i]) - z * s;
                g[i][k] = gi;
                norm = norm.max(gi.abs());
            }
        }
        Residual { g, norm }
    }

    /// One Newton step on the staircase system of the box scheme.
    ///
    /// Cell `k`'s equations involve nodes `k` and `k + 1`, so the Jacobian is
    /// a narrow band plus a dense range column. The band is factored with row
    /// pivoting; one-way block substitutions are not an option here because
    /// the linearised game carries modes that grow exponentially in each
    /// direction. The benchmark type's top-cell equation closes the system in
    /// `delta_bbar` as a scalar border.
    fn newton_direction(
        &self,
        it: &Iterate,
        res: &Residual,
        bench: usize,
    ) -> Result<(Vec<Vec<f64>>, f64)> {
        let m = self.views.len();
        let kk = GRID_N - 2; // interior node count
        let inv_bh = 1.0 / (it.bbar * self.h);

        let mut r = vec![0.0; m];
        let mut drdy = vec![0.0; m];
        let mut slope = vec![0.0; m];
        let mut ybar = vec![0.0; m];
        let mut u_block = vec![0.0; m * m];
        let mut l_block = vec![0.0; m * m];
        let mut border = vec![0.0; m];

        let fill_cell = |k: usize,
                             u_block: &mut [f64],
                             l_block: &mut [f64],
                             border: &mut [f64],
                             r: &mut [f64],
                             drdy: &mut [f64],
                             slope: &mut [f64],
                             ybar: &mut [f64]| {
            let tbar = 0.5 * (self.t[k] + self.t[k + 1]);
            for tau in 0..m {
                let ya = it.y[tau][k];
                let yb = it.y[tau][k + 1];
                ybar[tau] = 0.5 * (ya + yb);
                slope[tau] = (yb - ya) * inv_bh;
                let view = &self.views[tau];
                let ff = view.cdf(ybar[tau]);
                r[tau] = view.pdf(ybar[tau]) / ff;
                drdy[tau] = view.pdf_deriv(ybar[tau]) / ff - r[tau] * r[tau];
            }
            for i in 0..m {
                let z = ybar[i] - it.bbar * tbar;
                let s: f64 =
                    (0..m).map(|tau| self.opponents(i, tau) * r[tau] * slope[tau]).sum();
                for tau in 0..m {
                    let w = self.opponents(i, tau);
                    let curve = -z * w * 0.5 * drdy[tau] * slope[tau];
                    let grad = z * w * r[tau] * inv_bh;
                    let half_s = if i == tau { 0.5 * s } else { 0.0 };
                    u_block[i * m + tau] = curve - grad - half_s;
                    l_block[i * m + tau] = curve + grad - half_s;
                }
                border[i] = tbar * s + z * s / it.bbar;
            }
        };

        // Unknown layout: node k (1-based interior), type tau -> column.
        let col = |k: usize, tau: usize| (k - 1) * m + tau;
        let n = m * kk;
        let mut band = BandedLu::new(n, m, (2 * m).saturating_sub(2));
        let mut rhs_s = vec![0.0; n];
        let mut rhs_q = vec![0.0; n];
        let mut close_l = vec![0.0; m];
        let mut close_border = 0.0;
        let mut close_g = 0.0;

        for k in 0..=kk {
            fill_cell(
                k,
                &mut u_block,
                &mut l_block,
                &mut border,
                &mut r,
                &mut drdy,
                &mut slope,
                &mut ybar,
            );
            if k == 0 {
                // Bottom boundary-layer cell: benchmark equation only.
                for tau in 0..m {
                    band.set(0, col(1, tau), u_block[bench * m + tau]);
                }
                rhs_s[0] = -res.g[bench][0];
                rhs_q[0] = -border[bench];
            } else if k < kk {
                for i in 0..m {
                    let row = 1 + (k - 1) * m + i;
                    for tau in 0..m {
                        band.set(row, col(k, tau), l_block[i * m + tau]);
                        band.set(row, col(k + 1, tau), u_block[i * m + tau]);
                    }
                    rhs_s[row] = -res.g[i][k];
                    rhs_q[row] = -border[i];
                }
            } else {
                // Top cell: the benchmark row becomes the scalar closure, the
                // rest stay in the band (their upper side hits the fixed
                // boundary value and drops out).
                let mut j = 0;
                for i in 0..m {
                    if i == bench {
                        close_l.copy_from_slice(&l_block[bench * m..(bench + 1) * m]);
                        close_border = border[bench];
                        close_g = res.g[bench][kk];
                        continue;
                    }
                    let row = 1 + (kk - 1) * m + j;
                    for tau in 0..m {
                        band.set(row, col(kk, tau), l_block[i * m + tau]);
                    }
                    rhs_s[row] = -res.g[i][kk];
                    rhs_q[row] = -border[i];
                    j += 1;
                }
            }
        }

        if !band.factor() {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        band.solve_in_place(&mut rhs_s);
        band.solve_in_place(&mut rhs_q);

        let mut num = -close_g;
        let mut den = close_border;
        for tau in 0..m {
            num -= close_l[tau] * rhs_s[col(kk, tau)];
            den += close_l[tau] * rhs_q[col(kk, tau)];
        }
        if den.abs() < 1e-300 {
            return Err(Error::Singular { cond: f64::INFINITY });
        }
        let delta_bbar = num / den;

        let mut delta_y = vec![vec![0.0; GRID_N]; m];
        for k in 1..=kk {
            for tau in 0..m {
                let c = col(k, tau);
                delta_y[tau][k] = rhs_s[c] + rhs_q[c] * delta_bbar;
            }
        }
        Ok((delta_y, delta_bbar))
    }

    /// Reject converged iterates that are not strictly increasing; they are
    /// roots of the discrete system that do not correspond to a strategy.
    fn accept(&self, it: Iterate, iters: usize) -> Result<(Iterate, usize)> {
        for (tau, y) in it.y.iter().enumerate() {
            for k in 1..GRID_N {
                if !(y[k] > y[k - 1]) {
                    return Err(Error::SolveFailed {
                        config: self.counts.iter().map(|&c| c as u32).collect(),
                        reserve: self.views[0].rho,
                        reason: format!("non-monotone iterate for participant type {tau}"),
                        residual: f64::NAN,
                        iterations: iters,
                    });
                }
            }
        }
        Ok((it, iters))
    }

    /// Damped Newton iteration from `start`.
    fn solve_from(&self, start: Iterate, bench: usize) -> Result<(Iterate, usize)> {
        let mut it = start;
        self.project(&mut it);
        let mut res = self.residual(&it, bench);
        for iter in 1..=MAX_ITER {
            if res.norm < RES_DONE {
                return self.accept(it, iter - 1);
            }
            let (dy, dbbar) = self.newton_direction(&it, &res, bench)?;
            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..12 {
                let mut cand = it.clone();
                cand.bbar += lambda * dbbar;
                for tau in 0..self.views.len() {
                    for k in 1..GRID_N - 1 {
                        cand.y[tau][k] += lambda * dy[tau][k];
                    }
                }
                self.project(&mut cand);
                let cand_res = self.residual(&cand, bench);
                if cand_res.norm.is_finite() && cand_res.norm < res.norm {
                    accepted = Some((cand, cand_res, lambda));
                    break;
                }
                lambda *= 0.5;
            }
            let Some((next, next_res, lambda)) = accepted else {
                if res.norm < RES_TOL {
                    return self.accept(it, iter);
                }
                return Err(Error::SolveFailed {
                    config: self.counts.iter().map(|&c| c as u32).collect(),
                    reserve: self.views[0].rho,
                    reason: "line search stalled".into(),
                    residual: res.norm,
                    iterations: iter,
                });
            };
            // Convergence: largest per-type mean absolute change of the iterate.
            let mut step = (next.bbar - it.bbar).abs();
            for tau in 0..self.views.len() {
                let mean: f64 = (1..GRID_N - 1)
                    .map(|k| (next.y[tau][k] - it.y[tau][k]).abs())
                    .sum::<f64>()
                    / GRID_N as f64;
                step = step.max(mean);
            }
            it = next;
            res = next_res;
            if step < STEP_TOL {
                if res.norm < RES_TOL {
                    return self.accept(it, iter);
                }
                return Err(Error::SolveFailed {
                    config: self.counts.iter().map(|&c| c as u32).collect(),
                    reserve: self.views[0].rho,
                    reason: "stagnated above residual tolerance".into(),
                    residual: res.norm,
                    iterations: iter,
                });
            }
            let _ = lambda;
        }
        Err(Error::SolveFailed {
            config: self.counts.iter().map(|&c| c as u32).collect(),
            reserve: self.views[0].rho,
            reason: "iteration limit reached".into(),
            residual: res.norm,
            iterations: MAX_ITER,
        })
    }

    /// Node slopes `dphi/db` of the mirrored inverse bids, exact under the
    /// first-order conditions at the solved node values.
    fn node_slopes(&self, it: &Iterate) -> Vec<Vec<f64>> {
        let m = self.views.len();
        let mut slopes = vec![vec![0.0; GRID_N]; m];
        // Bottom of the mirrored game (procurement top): the boundary-layer
        // limit, independent of the densities.
        for i in 0..m {
            slopes[i][0] = 1.0 + (1.0 - self.etas[i]) / (self.n - 1.0);
        }
        for k in 1..GRID_N {
            // Invert the FOCs for the slope vector at this node.
            let mut wsum = 0.0;
            let mut ws = vec![0.0; m];
            for i in 0..m {
                let z = it.y[i][k] - it.bbar * self.t[k];
                ws[i] = (1.0 - self.etas[i]) / z;
                wsum += self.counts[i] * ws[i];
            }
            let total = wsum / (self.n - 1.0);
            for i in 0..m {
                let y = it.y[i][k];
                let r = self.views[i].pdf(y) / self.views[i].cdf(y);
                slopes[i][k] = ((total - ws[i]) / r).max(1e-9);
            }
        }
        slopes
    }
}

/// Solve the equilibrium with no binding reserve.
pub fn solve_equilibrium(model: &Model, config: &BidderConfig) -> Result<EquilibriumSolution> {
    solve_with_reserve(model, config, 1.0, None)
}

/// Solve with a warm start from a previously solved equilibrium of the same
/// participating types (any reserve).
pub fn solve_equilibrium_warm(
    model: &Model,
    config: &BidderConfig,
    warm: Option<&EquilibriumSolution>,
) -> Result<EquilibriumSolution> {
    solve_with_reserve(model, config, 1.0, warm)
}

/// Solve the equilibrium of the procurement truncated at effective reserve
/// `rho`: costs are conditioned on `c <= rho` and bids live on `[b_min, rho]`.
pub fn solve_with_reserve(
    model: &Model,
    config: &BidderConfig,
    rho: f64,
    warm: Option<&EquilibriumSolution>,
) -> Result<EquilibriumSolution> {
    if config.n_types() != model.n_types() {
        return Err(Error::shape(format!(
            "configuration spans {} types, model has {}",
            config.n_types(),
            model.n_types()
        )));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain(format!("reserve {rho} outside (0, 1]")));
    }
    let types: Vec<usize> = config.participating().collect();
    let m = types.len();
    let counts: Vec<f64> = types.iter().map(|&t| config.counts()[t] as f64).collect();
    let etas: Vec<f64> = types.iter().map(|&t| model.eta(t)).collect();
    let n: f64 = counts.iter().sum();

    let solver = build_solver(model, &types, &counts, &etas, rho)?;

    // Starting iterates: a compatible warm start first, then the default.
    let mut starts: Vec<Iterate> = Vec::new();
    if let Some(w) = warm {
        if w.types == types && w.y_norm.iter().all(|y| y.len() == GRID_N) {
            starts.push(Iterate { y: w.y_norm.clone(), bbar: w.bbar });
        }
    }
    starts.push(default_iterate(&etas, &counts, n));

    let mut last_err = None;
    for start in &starts {
        for bench in 0..m {
            match solver.solve_from(start.clone(), bench) {
                Ok((it, iters)) => {
                    return finish(model, config, &types, &solver, it, rho, iters);
                }
                Err(e) => last_err = Some(e),
            }
        }
    }

    // Homotopy from a damped parameter path; each stage warm-starts the next.
    let mut current = default_iterate(&etas, &counts, n);
    for stage in [0.25, 0.5, 0.75, 1.0] {
        let scaled_params = scale_params(model.params(), stage);
        let scaled_model = Model::new(scaled_params)?;
        let scaled_etas: Vec<f64> = types.iter().map(|&t| scaled_model.eta(t)).collect();
        let stage_solver = build_solver(&scaled_model, &types, &counts, &scaled_etas, rho)?;
        let mut solved = None;
        for bench in 0..m {
            match stage_solver.solve_from(current.clone(), bench) {
                Ok((it, iters)) => {
                    solved = Some((it, iters));
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        match solved {
            Some((it, iters)) => {
                if stage == 1.0 {
                    return finish(model, config, &types, &solver, it, rho, iters);
                }
                current = it;
            }
            None => break,
        }
    }
    Err(last_err.expect("at least one attempt"))
}

fn build_solver<'a>(
    model: &'a Model,
    types: &[usize],
    counts: &[f64],
    etas: &[f64],
    rho: f64,
) -> Result<Solver<'a>> {
    let views = types
        .iter()
        .map(|&t| ValueView::new(model.density(t), rho, t))
        .collect::<Result<Vec<_>>>()?;
    let t: Vec<f64> = (0..GRID_N)
        .map(|k| k as f64 / (GRID_N - 1) as f64)
        .collect();
    Ok(Solver {
        views,
        counts: counts.to_vec(),
        etas: etas.to_vec(),
        n: counts.iter().sum(),
        t,
        h: 1.0 / (GRID_N - 1) as f64,
    })
}

fn default_iterate(etas: &[f64], counts: &[f64], n: f64) -> Iterate {
    let eta_mean: f64 =
        etas.iter().zip(counts).map(|(e, c)| e * c).sum::<f64>() / n;
    let bbar = ((n - 1.0) / (n - eta_mean)).clamp(0.05, 1.0 - 1e-6);
    let y: Vec<Vec<f64>> = (0..etas.len())
        .map(|_| {
            (0..GRID_N)
                .map(|k| k as f64 / (GRID_N - 1) as f64)
                .collect()
        })
        .collect();
    Iterate { y, bbar }
}

/// Parameter path for the homotopy: risk parameters and density tilts are
/// scaled toward the uniform risk-neutral game.
fn scale_params(params: &ModelParams, s: f64) -> ModelParams {
    let densities = params
        .densities
        .iter()
        .map(|kind| match kind {
            DensityKind::Tilted(spec) => DensityKind::Tilted(crate::model::CostDensitySpec {
                psi: spec.psi.iter().map(|p| p * s).collect(),
            }),
            DensityKind::BetaMixture { uniform_weight, alpha, beta } => {
                DensityKind::BetaMixture {
                    uniform_weight: 1.0 - s * (1.0 - uniform_weight),
                    alpha: *alpha,
                    beta: *beta,
                }
            }
        })
        .collect();
    ModelParams {
        densities,
        eta: params.eta.iter().map(|e| e * s).collect(),
        uh: params.uh,
    }
}

fn finish(
    _model: &Model,
    config: &BidderConfig,
    types: &[usize],
    solver: &Solver,
    it: Iterate,
    rho: f64,
    iterations: usize,
) -> Result<EquilibriumSolution> {
    let m = types.len();
    // Sanity: strictly increasing mirrored values above the bid diagonal.
    for tau in 0..m {
        let y = &it.y[tau];
        for k in 1..GRID_N {
            if !(y[k] > y[k - 1]) {
                return Err(Error::SolveFailed {
                    config: config.counts().to_vec(),
                    reserve: rho,
                    reason: format!("non-monotone strategy for type {}", types[tau]),
                    residual: f64::NAN,
                    iterations,
                });
            }
        }
    }
    let slopes = solver.node_slopes(&it);
    let b_min = rho * (1.0 - it.bbar);
    let mut curves = Vec::with_capacity(m);
    // Mirror back to procurement coordinates, ascending in the bid.
    let bids: Vec<f64> = (0..GRID_N)
        .map(|k| {
            let j = GRID_N - 1 - k;
            rho * (1.0 - it.bbar * solver.t[j])
        })
        .collect();
    for tau in 0..m {
        let mut costs = Vec::with_capacity(GRID_N);
        let mut dphi = Vec::with_capacity(GRID_N);
        for k in 0..GRID_N {
            let j = GRID_N - 1 - k;
            costs.push(rho * (1.0 - it.y[tau][j]));
            dphi.push(slopes[tau][j]);
        }
        costs[0] = 0.0;
        costs[GRID_N - 1] = rho;
        let inverse = MonotoneCubic::with_slopes(bids.clone(), costs.clone(), dphi.clone())?;
        let beta_slopes: Vec<f64> = dphi.iter().map(|&s| 1.0 / s).collect();
        let forward = MonotoneCubic::with_slopes(costs, bids.clone(), beta_slopes)?;
        curves.push(TypeCurves { inverse, forward });
    }
    Ok(EquilibriumSolution {
        config: config.clone(),
        reserve: rho,
        b_min,
        bbar: it.bbar,
        types: types.to_vec(),
        curves,
        y_norm: it.y,
        iterations,
    })
}

/// First-order-condition residuals of a solved equilibrium at bid `b`.
///
/// Returns one residual per participating type (in `types()` order). The
/// conditions are meaningful on the open support `(b_min, max_bid)`.
pub fn foc_residual(
    model: &Model,
    sol: &EquilibriumSolution,
    b: f64,
) -> Result<Vec<f64>> {
    if b < sol.b_min - 1e-12 || b > sol.reserve + 1e-12 {
        return Err(Error::domain(format!(
            "bid {b} outside support [{}, {}]",
            sol.b_min, sol.reserve
        )));
    }
    let rho = sol.reserve;
    let types = &sol.types;
    let m = types.len();
    let views = types
        .iter()
        .map(|&t| ValueView::new(model.density(t), rho, t))
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<f64> = types
        .iter()
        .map(|&t| sol.config.counts()[t] as f64)
        .collect();

    // Finite-difference slopes keep this an independent check of the stored
    // curves rather than a readback of the slopes the solver derived. The
    // step balances rounding noise against curvature bias.
    let step = 4e-8 * (sol.reserve - sol.b_min).max(1e-12);
    let lo = (b - step).max(sol.b_min);
    let hi = (b + step).min(sol.reserve);
    let mut ratio = vec![0.0; m]; // f_j(phi_j) phi_j' / F_j(phi_j)
    let mut cost = vec![0.0; m];
    for j in 0..m {
        let c = sol.curves[j].inverse.eval(b);
        let slope = (sol.curves[j].inverse.eval(hi) - sol.curves[j].inverse.eval(lo)) / (hi - lo);
        let v = (1.0 - c / rho).clamp(0.0, 1.0);
        ratio[j] = views[j].pdf(v) * slope / views[j].cdf(v);
        cost[j] = c;
    }
    let x = b / rho;
    Ok((0..m)
        .map(|i| {
            let z = x - cost[i] / rho;
            let s: f64 = (0..m)
                .map(|tau| (counts[tau] - if tau == i { 1.0 } else { 0.0 }) * ratio[tau])
                .sum();
            (1.0 - model.eta(types[i])) - z * s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CostDensitySpec, ModelParams, UHSpec};

    fn uniform_model(n_types: usize, eta: Vec<f64>) -> Model {
        let densities = (0..n_types)
            .map(|_| DensityKind::Tilted(CostDensitySpec::uniform(0)))
            .collect();
        Model::new(ModelParams { densities, eta, uh: UHSpec { sigma_u: 0.0 } }).unwrap()
    }

    /// Symmetric uniform closed form: bid = (1 - eta + (n-1) c) / (n - eta).
    fn closed_form_bid(n: f64, eta: f64, c: f64) -> f64 {
        (1.0 - eta + (n - 1.0) * c) / (n - eta)
    }

    #[test]
    fn two_uniform_risk_neutral_bidders_match_closed_form() {
        let model = uniform_model(1, vec![0.0]);
        let config = BidderConfig::new(vec![2]).unwrap();
        let sol = solve_equilibrium(&model, &config).unwrap();
        assert!((sol.b_min() - 0.5).abs() < 1e-10, "b_min {}", sol.b_min());
        for i in 0..=100 {
            let c = i as f64 / 100.0;
            let bid = sol.bid(0, c).unwrap();
            assert!(
                (bid - closed_form_bid(2.0, 0.0, c)).abs() < 1e-8,
                "bid({c}) = {bid}"
            );
        }
    }

    #[test]
    fn symmetric_uniform_risk_averse_matches_closed_form() {
        for (n, eta) in [(2u32, 0.5), (3, 0.7), (4, 0.3)] {
            let model = uniform_model(1, vec![eta]);
            let config = BidderConfig::new(vec![n]).unwrap();
            let sol = solve_equilibrium(&model, &config).unwrap();
            let nf = n as f64;
            let expect_bmin = (1.0 - eta) / (nf - eta);
            assert!(
                (sol.b_min() - expect_bmin).abs() < 1e-9,
                "n={n} eta={eta}: b_min {} vs {expect_bmin}",
                sol.b_min()
            );
            for i in 0..=50 {
                let c = i as f64 / 50.0;
                let bid = sol.bid(0, c).unwrap();
                assert!(
                    (bid - closed_form_bid(nf, eta, c)).abs() < 1e-8,
                    "n={n} eta={eta} bid({c})"
                );
            }
        }
    }

    #[test]
    fn splitting_identical_types_leaves_the_equilibrium_unchanged() {
        let pooled = uniform_model(1, vec![0.4]);
        let split = uniform_model(2, vec![0.4, 0.4]);
        let sol_pooled =
            solve_equilibrium(&pooled, &BidderConfig::new(vec![3]).unwrap()).unwrap();
        let sol_split =
            solve_equilibrium(&split, &BidderConfig::new(vec![2, 1]).unwrap()).unwrap();
        assert!((sol_pooled.b_min() - sol_split.b_min()).abs() < 1e-9);
        for i in 0..=40 {
            let c = i as f64 / 40.0;
            let a = sol_pooled.bid(0, c).unwrap();
            let b0 = sol_split.bid(0, c).unwrap();
            let b1 = sol_split.bid(1, c).unwrap();
            assert!((a - b0).abs() < 1e-7, "type 0 at {c}: {a} vs {b0}");
            assert!((a - b1).abs() < 1e-7, "type 1 at {c}: {a} vs {b1}");
        }
    }

    #[test]
    fn asymmetric_equilibrium_passes_foc_and_roundtrip_checks() {
        let densities = vec![
            DensityKind::Tilted(CostDensitySpec::new(vec![-0.6, 0.2]).unwrap()),
            DensityKind::Tilted(CostDensitySpec::new(vec![0.4, -0.1]).unwrap()),
        ];
        let model = Model::new(ModelParams {
            densities,
            eta: vec![0.55, 0.2],
            uh: UHSpec { sigma_u: 0.0 },
        })
        .unwrap();
        let config = BidderConfig::new(vec![2, 1]).unwrap();
        let sol = solve_equilibrium(&model, &config).unwrap();

        // Interior first-order conditions hold at the stored grid nodes.
        let nodes = sol.bid_nodes(0).unwrap().to_vec();
        let mut worst: f64 = 0.0;
        for &b in &nodes[1..nodes.len() - 1] {
            for r in foc_residual(&model, &sol, b).unwrap() {
                worst = worst.max(r.abs());
            }
        }
        assert!(worst < 1e-6, "worst node residual {worst}");

        // Bid and inverse bid are mutual inverses well inside tolerance.
        for tau in [0usize, 1] {
            for i in 0..=200 {
                let b = sol.b_min() + (sol.max_bid() - sol.b_min()) * i as f64 / 200.0;
                let c = sol.inverse_bid(tau, b).unwrap();
                let back = sol.bid(tau, c).unwrap();
                assert!((back - b).abs() < 1e-8, "roundtrip type {tau} at {b}");
            }
        }

        // Between nodes the FOC residual stays small through the interior.
        // Cells near either support endpoint are held to a looser bound: at
        // the reserve end the bid-cost margin vanishes, so the residual
        // functional amplifies curve error by its reciprocal even though the
        // curves themselves stay accurate (the roundtrip bound above covers
        // them).
        let cells = nodes.len() - 1;
        let mut interior_worst: f64 = 0.0;
        let mut edge_worst: f64 = 0.0;
        for i in 0..cells {
            let b = 0.5 * (nodes[i] + nodes[i + 1]);
            if b <= sol.b_min() || b >= sol.max_bid() {
                continue;
            }
            for r in foc_residual(&model, &sol, b).unwrap() {
                if i < 24 || i >= cells - 24 {
                    edge_worst = edge_worst.max(r.abs());
                } else {
                    interior_worst = interior_worst.max(r.abs());
                }
            }
        }
        assert!(interior_worst < 1e-5, "between-node residual {interior_worst}");
        assert!(edge_worst < 5e-4, "endpoint-cell residual {edge_worst}");
    }

    #[test]
    fn truncated_uniform_reserve_matches_closed_form() {
        // Uniform costs truncated at rho are uniform on [0, rho]; the game
        // rescales, so bids are (rho + c) / 2 for two risk-neutral bidders.
        let model = uniform_model(1, vec![0.0]);
        let config = BidderConfig::new(vec![2]).unwrap();
        let sol = solve_with_reserve(&model, &config, 0.5, None).unwrap();
        assert!((sol.b_min() - 0.25).abs() < 1e-10);
        assert!((sol.max_bid() - 0.5).abs() < 1e-12);
        for i in 0..=50 {
            let c = 0.5 * i as f64 / 50.0;
            let bid = sol.bid(0, c).unwrap();
            assert!(((0.5 + c) / 2.0 - bid).abs() < 1e-8, "bid({c})");
        }
    }

    #[test]
    fn warm_start_reuses_previous_solution() {
        let model = uniform_model(1, vec![0.3]);
        let config = BidderConfig::new(vec![3]).unwrap();
        let cold = solve_equilibrium(&model, &config).unwrap();
        let warm = solve_equilibrium_warm(&model, &config, Some(&cold)).unwrap();
        assert!(warm.iterations() <= cold.iterations());
        assert!((warm.b_min() - cold.b_min()).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_and_degenerate_inputs() {
        let model = uniform_model(1, vec![0.0]);
        let config = BidderConfig::new(vec![2]).unwrap();
        assert!(solve_with_reserve(&model, &config, 0.0, None).is_err());
        assert!(solve_with_reserve(&model, &config, 1.5, None).is_err());
        let wide = BidderConfig::new(vec![1, 1]).unwrap();
        assert!(solve_equilibrium(&model, &wide).is_err());
    }

    #[test]
    fn support_errors_on_out_of_range_queries() {
        let model = uniform_model(1, vec![0.0]);
        let config = BidderConfig::new(vec![2]).unwrap();
        let sol = solve_equilibrium(&model, &config).unwrap();
        assert!(sol.inverse_bid(0, 0.4).is_err());
        assert!(sol.inverse_bid(0, 1.1).is_err());
        assert!(sol.bid(0, -0.1).is_err());
        assert!(sol.bid(1, 0.5).is_err());
    }

    #[test]
    fn strong_types_bid_below_weak_types_at_equal_cost() {
        // Type 0 is stochastically lower-cost (tilt toward 0).
        let densities = vec![
            DensityKind::Tilted(CostDensitySpec::new(vec![-1.0]).unwrap()),
            DensityKind::Tilted(CostDensitySpec::new(vec![1.0]).unwrap()),
        ];
        let model = Model::new(ModelParams {
            densities,
            eta: vec![0.0, 0.0],
            uh: UHSpec { sigma_u: 0.0 },
        })
        .unwrap();
        let config = BidderConfig::new(vec![1, 1]).unwrap();
        let sol = solve_equilibrium(&model, &config).unwrap();
        // In a two-bidder procurement the weak (high-cost) type shades more
        // aggressively: facing a strong opponent, it bids closer to cost.
        let c = 0.5;
        let strong = sol.bid(0, c).unwrap();
        let weak = sol.bid(1, c).unwrap();
        assert!(
            strong != weak,
            "asymmetric types should not bid identically"
        );
    }

    #[test]
    fn beta_mixture_study_configurations_all_solve() {
        let model = Model::new(crate::synth::study_truth()).unwrap();
        for counts in [
            vec![2, 0, 0],
            vec![3, 0, 0],
            vec![0, 2, 0],
            vec![0, 3, 0],
            vec![0, 0, 2],
            vec![0, 0, 3],
            vec![1, 1, 0],
            vec![1, 0, 1],
            vec![0, 1, 1],
            vec![1, 1, 1],
        ] {
            let config = BidderConfig::new(counts.clone()).unwrap();
            let sol = solve_equilibrium(&model, &config)
                .unwrap_or_else(|e| panic!("{counts:?} failed: {e}"));
            for &tau in sol.types() {
                let nodes = sol.cost_nodes(tau).unwrap();
                for k in 1..nodes.len() {
                    assert!(
                        nodes[k] > nodes[k - 1],
                        "{counts:?} type {tau}: costs not increasing at {k}"
                    );
                }
            }
            // The beta-mixture corners are steep (density ratio f'/f up to
            // ~200 at zero cost), so nodes inside the boundary layers at
            // either end of the bid support get a looser bound than the rest
            // of the grid.
            let mut worst: f64 = 0.0;
            let mut edge_worst: f64 = 0.0;
            let bids = sol.bid_nodes(sol.types()[0]).unwrap().to_vec();
            let last = bids.len() - 1;
            for (k, &b) in bids.iter().enumerate().take(last).skip(1) {
                for r in foc_residual(&model, &sol, b).unwrap() {
                    if k < 24 || k >= last - 24 {
                        edge_worst = edge_worst.max(r.abs());
                    } else {
                        worst = worst.max(r.abs());
                    }
                }
            }
            assert!(worst < 1e-6, "{counts:?}: node residual {worst}");
            assert!(edge_worst < 1e-3, "{counts:?}: edge residual {edge_worst}");
        }
    }
}
