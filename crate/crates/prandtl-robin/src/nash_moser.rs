//! Smoothed Newton iteration for the nonlinear wall-layer system.
//!
//! Each step mollifies the accumulated background at strength theta_n =
//! sqrt(theta_0^2 + n), solves the linearized vorticity system for an
//! increment, and feeds the quadratic and smoothing-mismatch error terms back
//! into the force recursion, whose partial sums telescope to
//! -S_{theta_n}(sum of errors + seed defect) identically.
//!
//! Residuals are always reported for the perturbation: the evaluator computes
//! P(u^s + p, v) - P(u^s, 0) in expanded form, so the pure-shear marching
//! defect cancels algebraically and a zero perturbation has residual exactly
//! zero. The error term of each step is stored in the expanded product-rule
//! form, which makes the one-step bookkeeping identity
//!   residual(next) = residual(prev) + linearized(increment) + error
//! hold to round-off on the grid, not merely to stencil accuracy.

use crate::error::{Error, Result};
use crate::fit::{fit_loglog, LineFit};
use crate::grid::{d_t, d_x, d_y, Field, FieldKind, GridSpec};
use crate::linearized::{
    build_background, recover_u, recover_v, solve_case_i_ft, solve_case_ii, BackgroundState,
    SolverOpts,
};
use crate::norms::{norm_a, norm_a_data_xy, norm_boundary_a, norm_boundary_a_data_x};
use crate::shear::{profile_d_y, project_wall_robin, ShearProfile};
use crate::smoothing::{smooth_interior, smooth_u, smooth_v};
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;

/// Schedule exponent slack used by the partial-sum audit.
pub const DELTA_THETA: f64 = 0.1;

/// theta_n = sqrt(theta_0^2 + n) and the forward gap theta_{n+1} - theta_n.
pub fn theta_schedule(theta0: f64, n: usize) -> (f64, f64) {
    let t0sq = theta0 * theta0;
    let cur = (t0sq + n as f64).sqrt();
    let next = (t0sq + (n + 1) as f64).sqrt();
    (cur, next - cur)
}

/// Partial-sum audit of one schedule exponent: the running constant
/// C_j = sum_{m<j} theta_m^{k - k_tilde} dtheta_m / theta_j^{max(k+1-k_tilde+0.1, 0)}.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ScheduleCheck {
    pub c_max: f64,
    pub c_last: f64,
    /// relative spread of C_j over the last quarter of the range
    pub drift: f64,
}

/// Measures the schedule partial sums for k in {k_tilde-3, ..., k_tilde+1}.
/// Keys are "k-k_tilde=<gap>". The constants must stay bounded and settle;
/// drift is (max - min) / max over j in the last quarter.
pub fn schedule_sum_check(
    theta0: f64,
    n_max: usize,
    k_tilde: f64,
) -> Result<BTreeMap<String, ScheduleCheck>> {
    if !(theta0 >= 1.0) || n_max < 8 {
        return Err(Error::config(
            "schedule audit needs theta0 >= 1 and at least 8 steps",
        ));
    }
    let mut out = BTreeMap::new();
    for gap in -3i32..=1 {
        let k = k_tilde + gap as f64;
        let denom_exp = (k + 1.0 - k_tilde + DELTA_THETA).max(0.0);
        let mut partial = 0.0;
        let mut c_max: f64 = 0.0;
        let mut c_last = 0.0;
        let tail_start = n_max - n_max / 4;
        let mut tail_min = f64::INFINITY;
        let mut tail_max: f64 = 0.0;
        for j in 1..=n_max {
            let (theta_prev, dtheta_prev) = theta_schedule(theta0, j - 1);
            partial += theta_prev.powf(k - k_tilde) * dtheta_prev;
            let (theta_j, _) = theta_schedule(theta0, j);
            let c = partial / theta_j.powf(denom_exp);
            c_max = c_max.max(c);
            c_last = c;
            if j >= tail_start {
                tail_min = tail_min.min(c);
                tail_max = tail_max.max(c);
            }
        }
        let drift = if tail_max > 0.0 {
            (tail_max - tail_min) / tail_max
        } else {
            0.0
        };
        out.insert(
            format!("k-k_tilde={gap}"),
            ScheduleCheck {
                c_max,
                c_last,
                drift,
            },
        );
    }
    Ok(out)
}

fn binom(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// d/dx of an (x, y) table, periodic central stencil.
fn slab_d_x(a: &Array2<f64>, dx: f64) -> Array2<f64> {
    let (n_x, n_y) = a.dim();
    let mut out = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        let ip = (ix + 1) % n_x;
        let im = (ix + n_x - 1) % n_x;
        for iy in 0..n_y {
            out[(ix, iy)] = (a[(ip, iy)] - a[(im, iy)]) / (2.0 * dx);
        }
    }
    out
}

/// Cumulative trapezoid from the wall along y of an (x, y) table.
fn slab_cumint_y(a: &Array2<f64>, dy: f64) -> Array2<f64> {
    let (n_x, n_y) = a.dim();
    let mut out = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        let mut acc = 0.0;
        for iy in 1..n_y {
            acc += 0.5 * dy * (a[(ix, iy - 1)] + a[(ix, iy)]);
            out[(ix, iy)] = acc;
        }
    }
    out
}

fn slab_d_y(a: &Array2<f64>, dy: f64, order: usize) -> Array2<f64> {
    let (n_x, n_y) = a.dim();
    let mut out = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        let col = a.row(ix).to_owned();
        let d = profile_d_y(&col, dy, order);
        for iy in 0..n_y {
            out[(ix, iy)] = d[iy];
        }
    }
    out
}

/// One-sided discrete wall law residual (g_y - beta g)|_{y=0} per x node.
fn wall_law_residuals(a: &Array2<f64>, beta: f64, dy: f64) -> Array1<f64> {
    let n_x = a.dim().0;
    Array1::from_shape_fn(n_x, |ix| {
        (-3.0 * a[(ix, 0)] + 4.0 * a[(ix, 1)] - a[(ix, 2)]) / (2.0 * dy) - beta * a[(ix, 0)]
    })
}

/// Worst discrete wall-law residual of a field over all (t, x), absolute and
/// relative to the scale of the terms entering the one-sided stencil.
pub fn wall_law_residual(f: &Field, beta: f64) -> Result<(f64, f64)> {
    if f.kind != FieldKind::Interior {
        return Err(Error::structural("wall-law residual needs an interior field"));
    }
    let spec = &f.spec;
    let dy = spec.dy();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for it in 0..spec.n_t {
        for ix in 0..spec.n_x {
            let f0 = f.values[(it, ix, 0)];
            let f1 = f.values[(it, ix, 1)];
            let f2 = f.values[(it, ix, 2)];
            let num = (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * dy) - beta * f0;
            let den = (3.0 * f0.abs() + 4.0 * f1.abs() + f2.abs()) / (2.0 * dy) + beta * f0.abs();
            worst = worst.max(num.abs());
            scale = scale.max(den);
        }
    }
    let rel = if scale > 0.0 { worst / scale } else { 0.0 };
    Ok((worst, rel))
}

/// Canonical perturbation shape: one x harmonic under a wall-flat envelope
/// that decays twice as fast as the canonical shear slope, so tail ratios
/// against the slope stay bounded. The envelope vanishes to second order at
/// the wall and the wall node carries the discrete wall-law projection,
/// making the shape seed-compatible on its own grid for the given beta.
pub fn canonical_perturbation(grid: &GridSpec, beta: f64, sigma: f64, phase: f64) -> Array2<f64> {
    let mut out = Array2::from_shape_fn((grid.n_x, grid.n_y), |(ix, iy)| {
        let x = grid.x(ix);
        let y = grid.y(iy);
        (2.0 * std::f64::consts::PI * x / grid.x_len + phase).sin()
            * y
            * y
            * (-2.0 * y * y / (sigma * sigma)).exp()
    });
    let dy = grid.dy();
    for ix in 0..grid.n_x {
        out[(ix, 0)] = (4.0 * out[(ix, 1)] - out[(ix, 2)]) / (3.0 + 2.0 * beta * dy);
    }
    out
}

/// A grid can only support k0 Taylor coefficients if 2 k0 repeated
/// y-derivative stencils still see interior nodes.
pub fn taylor_resolution_check(grid: &GridSpec, k0: usize) -> Result<()> {
    if k0 == 0 {
        return Err(Error::config("k0 must be at least 1"));
    }
    if grid.n_y < 4 * k0 + 4 {
        return Err(Error::structural(format!(
            "n_y = {} cannot resolve {} repeated y-derivatives (need n_y >= {})",
            grid.n_y,
            2 * k0,
            4 * k0 + 4
        )));
    }
    Ok(())
}

/// Taylor seed built from the data slice: time-derivative tables at t = 0
/// from the evolution recursion, summed into fields, plus the seed defect.
pub struct ZerothOrder {
    /// assembled tangential perturbation over the whole grid
    pub u_pert: Field,
    /// assembled normal velocity, zero at the wall by construction
    pub v: Field,
    /// discrete defect of the seed, shear part removed
    pub f_a: Field,
    /// d^j/dt^j of the perturbation data, j = 0..=k0, each wall-projected
    pub taylor_u: Vec<Array2<f64>>,
    pub taylor_v: Vec<Array2<f64>>,
    /// wall-law residual of each coefficient before its projection
    pub robin_pre_residuals: Vec<f64>,
}

/// Builds the order-k0 Taylor seed around the marched shear profile. Each
/// time-derivative table trades a time derivative for the evolution
/// right-hand side; the shear's own time derivatives enter as repeated
/// Laplacians of its t = 0 slice. Every coefficient has its wall node
/// projected onto the discrete wall law, so the assembled seed satisfies the
/// law exactly at every time node.
pub fn zeroth_order(
    shear: &ShearProfile,
    data: &Array2<f64>,
    k0: usize,
) -> Result<ZerothOrder> {
    let spec = shear.grid.clone();
    let (n_x, n_y) = (spec.n_x, spec.n_y);
    if data.dim() != (n_x, n_y) {
        return Err(Error::structural(format!(
            "seed data shape {:?} does not match (n_x, n_y) = ({n_x}, {n_y})",
            data.dim()
        )));
    }
    taylor_resolution_check(&spec, k0)?;
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("seed data contains non-finite values"));
    }
    let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let top = (0..n_x).fold(0.0f64, |m, ix| m.max(data[(ix, n_y - 1)].abs()));
    if top > 1e-8 * scale.max(1e-30) {
        return Err(Error::domain(format!(
            "seed data must decay by Y_max; top-row magnitude {top:.3e}"
        )));
    }
    let (dy, dx, beta) = (spec.dy(), spec.dx(), shear.beta);

    // data must arrive compatible with the wall law; the projection below
    // only absorbs round-off-to-stencil-level mismatch
    let pre0 = wall_law_residuals(data, beta, dy)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if pre0 > 1e-6 * (1.0 + beta) * scale.max(1e-30) {
        return Err(Error::domain(format!(
            "seed data violates the wall law: residual {pre0:.3e} at scale {scale:.3e}"
        )));
    }
    let mut robin_pre = vec![pre0];

    // shear time-derivative tables at the seed instant
    let us_t: Vec<Array1<f64>> = (0..=k0).map(|m| shear.dt_us_data(0, m)).collect();
    let us_ty: Vec<Array1<f64>> = (0..=k0)
        .map(|m| {
            if m == 0 {
                shear.u_y.row(0).to_owned()
            } else {
                profile_d_y(&us_t[m], dy, 1)
            }
        })
        .collect();

    let project = |slab: &mut Array2<f64>| {
        for ix in 0..n_x {
            let mut col = slab.row(ix).to_owned();
            project_wall_robin(&mut col, beta, dy, 0.0);
            slab[(ix, 0)] = col[0];
        }
    };

    let mut tu: Vec<Array2<f64>> = Vec::with_capacity(k0 + 1);
    let mut tv: Vec<Array2<f64>> = Vec::with_capacity(k0 + 1);
    let mut first = data.clone();
    project(&mut first);
    tv.push(slab_cumint_y(&slab_d_x(&first, dx), dy).mapv(|v| -v));
    tu.push(first);

    for j in 1..=k0 {
        let mut next = slab_d_y(&tu[j - 1], dy, 2);
        for m in 0..j {
            let c = binom(j - 1, m);
            let adv = slab_d_x(&tu[j - 1 - m], dx);
            let slope = slab_d_y(&tu[j - 1 - m], dy, 1);
            for ix in 0..n_x {
                for iy in 0..n_y {
                    let total_u = us_t[m][iy] + tu[m][(ix, iy)];
                    let total_slope = us_ty[j - 1 - m][iy] + slope[(ix, iy)];
                    next[(ix, iy)] -= c
                        * (total_u * adv[(ix, iy)] + tv[m][(ix, iy)] * total_slope);
                }
            }
        }
        robin_pre.push(
            wall_law_residuals(&next, beta, dy)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())),
        );
        project(&mut next);
        tv.push(slab_cumint_y(&slab_d_x(&next, dx), dy).mapv(|v| -v));
        tu.push(next);
    }

    // Taylor sums over the time axis
    let mut u_pert = Field::zeros(&spec, FieldKind::Interior);
    let mut v = Field::zeros(&spec, FieldKind::Interior);
    for it in 0..spec.n_t {
        let t = spec.t(it);
        let mut coef = 1.0;
        for j in 0..=k0 {
            if j > 0 {
                coef *= t / j as f64;
            }
            for ix in 0..n_x {
                for iy in 0..n_y {
                    u_pert.values[(it, ix, iy)] += coef * tu[j][(ix, iy)];
                    v.values[(it, ix, iy)] += coef * tv[j][(ix, iy)];
                }
            }
        }
    }

    let f_a = nonlinear_residual(&u_pert, &v, shear)?;
    f_a.ensure_finite("seed defect")?;
    Ok(ZerothOrder {
        u_pert,
        v,
        f_a,
        taylor_u: tu,
        taylor_v: tv,
        robin_pre_residuals: robin_pre,
    })
}

/// Defect of the full velocity field, with the pure-shear part removed in
/// expanded form: P(u^s + p, v) - P(u^s, 0) =
/// p_t + (u^s + p) p_x + v (u^s_y + p_y) - p_yy.
/// A zero perturbation therefore evaluates to exactly zero, independent of
/// how well the shear march satisfies its own stencil equation.
pub fn nonlinear_residual(
    pert_u: &Field,
    pert_v: &Field,
    shear: &ShearProfile,
) -> Result<Field> {
    let spec = &pert_u.spec;
    if pert_u.kind != FieldKind::Interior || pert_v.kind != FieldKind::Interior {
        return Err(Error::structural("residual needs interior fields"));
    }
    if pert_v.spec != *spec || shear.grid != *spec {
        return Err(Error::structural("residual fields on mismatched grids"));
    }
    let us = Field::from_ty(spec, &shear.u_s)?;
    let usy = Field::from_ty(spec, &shear.u_y)?;
    let pt = d_t(pert_u)?;
    let px = d_x(pert_u)?;
    let py = d_y(pert_u, 1)?;
    let pyy = d_y(pert_u, 2)?;
    let mut res = Field::zeros(spec, FieldKind::Interior);
    for (idx, out) in res.values.indexed_iter_mut() {
        *out = pt.values[idx] + (us.values[idx] + pert_u.values[idx]) * px.values[idx]
            + pert_v.values[idx] * (usy.values[idx] + py.values[idx])
            - pyy.values[idx];
    }
    Ok(res)
}

/// The linearization around a mollified background, applied to an increment:
/// du_t + u_bg du_x + du d_x(u_bg) + v_bg du_y + dv d_y(u_bg) - du_yy,
/// with the background slope taken from the assembled state (exact shear
/// identity plus perturbation stencil).
pub fn linearized_apply(bg: &BackgroundState, du: &Field, dv: &Field) -> Result<Field> {
    let dut = d_t(du)?;
    let dux = d_x(du)?;
    let duy = d_y(du, 1)?;
    let duyy = d_y(du, 2)?;
    let ux_bg = d_x(&bg.u_tilde)?;
    let mut out = Field::zeros(&bg.spec, FieldKind::Interior);
    for (idx, v) in out.values.indexed_iter_mut() {
        *v = dut.values[idx] + bg.u_tilde.values[idx] * dux.values[idx]
            + du.values[idx] * ux_bg.values[idx]
            + bg.v_tilde.values[idx] * duy.values[idx]
            + dv.values[idx] * bg.u_y.values[idx]
            - duyy.values[idx];
    }
    Ok(out)
}

/// Smooths the accumulated perturbation pair at strength theta and assembles
/// the background state around it. Returns the state together with the
/// smoothed perturbations (the error terms need the unsmoothed remainder).
pub fn mollify_background(
    shear: &ShearProfile,
    pert_u: &Field,
    pert_v: &Field,
    theta: f64,
    delta_floor: f64,
) -> Result<(BackgroundState, Field, Field)> {
    let sp_u = smooth_u(pert_u, theta)?;
    let sp_v = smooth_v(pert_v, theta)?;
    let us = Field::from_ty(&pert_u.spec, &shear.u_s)?;
    let u_theta = us.add(&sp_u)?;
    let bg = build_background(&u_theta, &sp_v, shear, shear.beta, delta_floor)?;
    Ok((bg, sp_u, sp_v))
}

/// Force recursion: f^0 = -S_0 f^a and, for n >= 1,
/// f^n = (S_{n-1} - S_n)(sum_{j<=n-2} e_j + f^a) - S_n e_{n-1}.
/// The carried sum is empty at n = 1, so the three cases share one body.
pub fn force_update(
    n: usize,
    theta_prev: f64,
    theta_n: f64,
    f_a: &Field,
    e_sum: &Field,
    e_last: &Field,
) -> Result<Field> {
    if n == 0 {
        return Ok(smooth_interior(f_a, theta_n)?.scaled(-1.0));
    }
    let carried = e_sum.add(f_a)?;
    let at_prev = smooth_interior(&carried, theta_prev)?;
    let at_cur = smooth_interior(&carried, theta_n)?;
    at_prev.sub(&at_cur)?.sub(&smooth_interior(e_last, theta_n)?)
}

/// Iteration knobs. `epsilon` scales the unit perturbation shape; `norm_k`
/// picks the tracked norm index; `k_tilde` is the reference regularity index
/// in the predicted rate theta_n^{max(norm_k - k_tilde, 3 - k_tilde)} dtheta_n.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct IterationConfig {
    pub theta0: f64,
    pub k_tilde: f64,
    pub k0: usize,
    pub epsilon: f64,
    pub delta_floor: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub norm_k: usize,
    pub ell: f64,
    pub boundary_theta: f64,
    pub max_backoffs: usize,
}

impl IterationConfig {
    pub fn canonical() -> Self {
        IterationConfig {
            theta0: 10.0,
            k_tilde: 7.0,
            k0: 2,
            epsilon: 1e-2,
            delta_floor: 1e-4,
            max_iters: 30,
            residual_tol: 1e-4,
            norm_k: 0,
            ell: 1.0,
            boundary_theta: 0.5,
            max_backoffs: 5,
        }
    }

    /// Parameter-band checks that do not involve the grid.
    pub fn validate_bands(&self) -> Result<()> {
        if !(self.theta0 >= 3.0) || !self.theta0.is_finite() {
            return Err(Error::config(format!(
                "theta0 = {} below the resolvable band (need >= 3)",
                self.theta0
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.k0 == 0 {
            return Err(Error::config("k0 must be at least 1"));
        }
        if !(self.residual_tol > 0.0 && self.residual_tol < 1.0) {
            return Err(Error::config("residual_tol must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be positive"));
        }
        if !(self.ell > 0.5) {
            return Err(Error::config(
                "weight exponent ell must exceed 1/2 for an integrable weight",
            ));
        }
        if !(0.5..=1.0).contains(&self.boundary_theta) {
            return Err(Error::config("boundary_theta must lie in [0.5, 1]"));
        }
        if !(self.delta_floor > 0.0) {
            return Err(Error::config("delta_floor must be positive"));
        }
        if self.norm_k > 3 {
            return Err(Error::config("norm_k above 3 is not tracked"));
        }
        Ok(())
    }

    /// Band checks plus the grid couplings: Taylor-order resolution and the
    /// smoothing schedule staying resolvable through the last step,
    /// 1/theta_{max_iters} >= 2 max(dt, dx, dy).
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        self.validate_bands()?;
        taylor_resolution_check(grid, self.k0)?;
        let theta_max = (self.theta0 * self.theta0 + self.max_iters as f64).sqrt();
        if 1.0 / theta_max < 2.0 * grid.max_step() {
            return Err(Error::config(format!(
                "schedule outruns the grid: 1/theta_{} = {:.4} < 2 max step = {:.4}",
                self.max_iters,
                1.0 / theta_max,
                2.0 * grid.max_step()
            )));
        }
        Ok(())
    }
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

/// Per-step measurements. The four audit columns are relative: bookkeeping
/// (one-step expansion identity), residual (accumulated-defect identity),
/// telescoping (force partial sums), reconstruction (seed + increments).
#[derive(Debug, Clone, serde::Serialize)]
pub struct IterationRecord {
    pub n: usize,
    pub theta: f64,
    pub d_theta: f64,
    /// perturbation-defect norm after this step
    pub residual: f64,
    pub delta_u_norm: f64,
    pub predicted_rate: f64,
    pub force_norm: f64,
    pub error_term_norm: f64,
    /// |linearized(increment) - force| relative to the force scale
    pub solver_defect: f64,
    pub bookkeeping_audit: f64,
    pub residual_audit: f64,
    pub telescoping_audit: f64,
    pub reconstruction_audit: f64,
    /// wall margin of the mollified background
    pub wall_margin: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub diverged: bool,
    pub divergence_reason: Option<String>,
    pub n_done: usize,
    pub epsilon_used: f64,
    pub backoffs: usize,
    pub initial_residual: f64,
    pub final_residual: f64,
    /// log |delta u^n| against log of the predicted rate, over n >= 1
    pub rate_fit: Option<LineFit>,
    pub records: Vec<IterationRecord>,
}

/// Full iteration state. The accumulated perturbation and the running sum of
/// increments are updated independently so the reconstruction identity
/// pert_u = seed + sum of increments is a measurement, not a tautology.
pub struct IterationState {
    pub n: usize,
    pub cfg: IterationConfig,
    shear: ShearProfile,
    pub pert_u: Field,
    pub pert_v: Field,
    seed_u: Field,
    delta_sum: Field,
    /// sum_{j <= n-2} e_j, the carried part of the force recursion
    e_sum: Field,
    /// e_{n-1}
    e_last: Field,
    f_sum: Field,
    pub f_a: Field,
    residual_field: Field,
    pub residual_0: f64,
    pub residual: f64,
}

impl IterationState {
    /// Builds the seed from already-scaled data and evaluates its defect.
    pub fn new(shear: &ShearProfile, data: &Array2<f64>, cfg: &IterationConfig) -> Result<Self> {
        cfg.validate(&shear.grid)?;
        let seed = zeroth_order(shear, data, cfg.k0)?;
        let residual_0 = norm_a(&seed.f_a, cfg.norm_k, cfg.ell)?;
        let spec = shear.grid.clone();
        Ok(IterationState {
            n: 0,
            cfg: cfg.clone(),
            shear: shear.clone(),
            pert_u: seed.u_pert.clone(),
            pert_v: seed.v.clone(),
            seed_u: seed.u_pert,
            delta_sum: Field::zeros(&spec, FieldKind::Interior),
            e_sum: Field::zeros(&spec, FieldKind::Interior),
            e_last: Field::zeros(&spec, FieldKind::Interior),
            f_sum: Field::zeros(&spec, FieldKind::Interior),
            residual_field: seed.f_a.clone(),
            f_a: seed.f_a,
            residual_0,
            residual: residual_0,
        })
    }
}

fn rel_to(v: f64, scales: &[f64]) -> f64 {
    let s = scales.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if s > 0.0 {
        v / s
    } else {
        v
    }
}

/// One Newton step: mollify, update the force, solve the linearized system,
/// recover the increment pair, form the error terms, and measure every
/// bookkeeping identity. The state advances only if the whole step succeeds.
pub fn iterate_once(state: &mut IterationState) -> Result<IterationRecord> {
    let n = state.n;
    let cfg = state.cfg.clone();
    let (theta_n, d_theta) = theta_schedule(cfg.theta0, n);
    let theta_prev = if n > 0 {
        theta_schedule(cfg.theta0, n - 1).0
    } else {
        theta_n
    };

    let (bg, _sp_u, _sp_v) = mollify_background(
        &state.shear,
        &state.pert_u,
        &state.pert_v,
        theta_n,
        cfg.delta_floor,
    )?;

    let f_n = force_update(n, theta_prev, theta_n, &state.f_a, &state.e_sum, &state.e_last)?;
    let f_sum_next = state.f_sum.add(&f_n)?;

    // telescoping: sum of forces + S_n(all errors so far + seed defect) = 0
    let e_full = state.e_sum.add(&state.e_last)?;
    let carried_full = e_full.add(&state.f_a)?;
    let smoothed_carry = smooth_interior(&carried_full, theta_n)?;
    let telescoping_audit = rel_to(
        f_sum_next.add(&smoothed_carry)?.max_abs(),
        &[f_sum_next.max_abs(), smoothed_carry.max_abs(), 1e-300],
    );

    // transformed force and the linear solve
    let mut f_tilde = Field::zeros(&bg.spec, FieldKind::Interior);
    for (idx, v) in f_tilde.values.indexed_iter_mut() {
        *v = f_n.values[idx] / bg.u_y.values[idx];
    }
    f_tilde.ensure_finite("transformed force")?;
    let opts = SolverOpts {
        ell: cfg.ell,
        boundary_theta: cfg.boundary_theta,
        cfl_limit: 0.45,
    };
    let sol = solve_case_i_ft(&bg, &f_tilde, &opts)?;
    let du = recover_u(&sol.w, &bg)?;
    let dv = recover_v(&du)?;
    du.ensure_finite("increment")?;

    // error terms in expanded product-rule form; q is the unsmoothed
    // remainder of the background perturbation
    let dux = d_x(&du)?;
    let duy = d_y(&du, 1)?;
    let us = Field::from_ty(&bg.spec, &state.shear.u_s)?;
    let q = us.add(&state.pert_u)?.sub(&bg.u_tilde)?;
    let qv = state.pert_v.sub(&bg.v_tilde)?;
    let e_quad = du.mul(&dux)?.add(&dv.mul(&duy)?)?;
    let e_mismatch = q
        .mul(&dux)?
        .add(&du.mul(&d_x(&q)?)?)?
        .add(&qv.mul(&duy)?)?
        .add(&dv.mul(&d_y(&q, 1)?)?)?;
    let e_n = e_quad.add(&e_mismatch)?;

    // audits
    let lin = linearized_apply(&bg, &du, &dv)?;
    let solver_defect = rel_to(
        lin.sub(&f_n)?.max_abs(),
        &[f_n.max_abs(), lin.max_abs(), 1e-300],
    );
    let new_pert_u = state.pert_u.add(&du)?;
    let new_pert_v = state.pert_v.add(&dv)?;
    let res_new = nonlinear_residual(&new_pert_u, &new_pert_v, &state.shear)?;
    res_new.ensure_finite("perturbation defect")?;
    let bookkeeping_audit = rel_to(
        res_new
            .sub(&state.residual_field)?
            .sub(&lin)?
            .sub(&e_n)?
            .max_abs(),
        &[
            res_new.max_abs(),
            state.residual_field.max_abs(),
            lin.max_abs(),
            e_n.max_abs(),
            1e-300,
        ],
    );
    let unsmoothed_carry = carried_full.sub(&smoothed_carry)?;
    let residual_audit = rel_to(
        res_new.sub(&e_n)?.sub(&unsmoothed_carry)?.max_abs(),
        &[
            res_new.max_abs(),
            e_n.max_abs(),
            unsmoothed_carry.max_abs(),
            1e-300,
        ],
    );

    // advance
    state.delta_sum = state.delta_sum.add(&du)?;
    state.pert_u = new_pert_u;
    state.pert_v = new_pert_v;
    let reconstruction_audit = rel_to(
        state
            .pert_u
            .sub(&state.seed_u)?
            .sub(&state.delta_sum)?
            .max_abs(),
        &[state.pert_u.max_abs(), state.delta_sum.max_abs(), 1e-300],
    );
    state.e_sum = e_full;
    state.e_last = e_n.clone();
    state.f_sum = f_sum_next;
    state.residual_field = res_new;
    state.residual = norm_a(&state.residual_field, cfg.norm_k, cfg.ell)?;
    state.n += 1;

    let exponent = (cfg.norm_k as f64 - cfg.k_tilde).max(3.0 - cfg.k_tilde);
    Ok(IterationRecord {
        n,
        theta: theta_n,
        d_theta,
        residual: state.residual,
        delta_u_norm: norm_a(&du, cfg.norm_k, cfg.ell)?,
        predicted_rate: theta_n.powf(exponent) * d_theta,
        force_norm: norm_a(&f_n, cfg.norm_k, cfg.ell)?,
        error_term_norm: norm_a(&e_n, cfg.norm_k, cfg.ell)?,
        solver_defect,
        bookkeeping_audit,
        residual_audit,
        telescoping_audit,
        reconstruction_audit,
        wall_margin: bg.delta,
    })
}

/// A finished run: the report plus the fields the caller may want to keep
/// (final perturbation pair and the seed defect).
pub struct IterationOutcome {
    pub report: ConvergenceReport,
    pub pert_u: Field,
    pub pert_v: Field,
    pub f_a: Field,
}

enum RunAttempt {
    Done(Box<IterationOutcome>),
    /// the monotonicity guard rejected the seed itself
    SeedGuard(String, Box<IterationOutcome>),
}

fn build_outcome(
    state: IterationState,
    records: Vec<IterationRecord>,
    converged: bool,
    diverged: bool,
    reason: Option<String>,
) -> IterationOutcome {
    let usable: Vec<&IterationRecord> = records
        .iter()
        .filter(|r| {
            r.n >= 1
                && r.delta_u_norm > 0.0
                && r.delta_u_norm.is_finite()
                && r.predicted_rate > 0.0
        })
        .collect();
    let rate_fit = if usable.len() >= 3 {
        let xs: Vec<f64> = usable.iter().map(|r| r.predicted_rate).collect();
        let ys: Vec<f64> = usable.iter().map(|r| r.delta_u_norm).collect();
        fit_loglog(&xs, &ys).ok()
    } else {
        None
    };
    IterationOutcome {
        report: ConvergenceReport {
            converged,
            diverged,
            divergence_reason: reason,
            n_done: state.n,
            epsilon_used: state.cfg.epsilon,
            backoffs: 0,
            initial_residual: state.residual_0,
            final_residual: state.residual,
            rate_fit,
            records,
        },
        pert_u: state.pert_u,
        pert_v: state.pert_v,
        f_a: state.f_a,
    }
}

/// True when the last `steps` transitions of the history never decreased.
fn plateaued(history: &[f64], steps: usize) -> bool {
    if history.len() < steps + 1 {
        return false;
    }
    history[history.len() - steps - 1..]
        .windows(2)
        .all(|p| p[1] >= p[0])
}

fn run_attempt(
    shear: &ShearProfile,
    shape: &Array2<f64>,
    cfg: &IterationConfig,
    eps: f64,
) -> Result<RunAttempt> {
    let data = shape.mapv(|v| eps * v);
    let mut cfg_used = cfg.clone();
    cfg_used.epsilon = eps;
    let mut state = IterationState::new(shear, &data, &cfg_used)?;
    // the iteration only linearizes around smoothed states, but the raw seed
    // itself must sit in the monotone concave class: downstream consumers
    // (the two-run comparison) build backgrounds from unsmoothed iterates,
    // and the class is the validity region of the whole construction. The
    // time-Taylor tail of the seed scales with epsilon, so backing off cures
    // a violation here.
    {
        let us = Field::from_ty(&shear.grid, &shear.u_s)?;
        let raw_u = us.add(&state.pert_u)?;
        match build_background(&raw_u, &state.pert_v, shear, shear.beta, cfg.delta_floor) {
            Ok(_) => {}
            Err(Error::Guard(msg)) => {
                let out = build_outcome(state, Vec::new(), false, true, Some(msg.clone()));
                return Ok(RunAttempt::SeedGuard(msg, Box::new(out)));
            }
            Err(e) => return Err(e),
        }
    }
    let mut records = Vec::new();
    let mut history = vec![state.residual_0];
    let mut converged = state.residual <= cfg.residual_tol * state.residual_0;
    let mut diverged = false;
    let mut reason = None;

    while !converged && !diverged && state.n < cfg.max_iters {
        match iterate_once(&mut state) {
            Ok(rec) => {
                history.push(rec.residual);
                records.push(rec);
            }
            Err(Error::Guard(msg)) => {
                if state.n == 0 {
                    let out = build_outcome(state, records, false, true, Some(msg.clone()));
                    return Ok(RunAttempt::SeedGuard(msg, Box::new(out)));
                }
                diverged = true;
                reason = Some(format!("monotonicity guard tripped at step {}: {msg}", state.n));
                break;
            }
            Err(e) => return Err(e),
        }
        converged = state.residual <= cfg.residual_tol * state.residual_0;
        if !converged && plateaued(&history, 5) {
            diverged = true;
            reason = Some(format!(
                "defect non-decreasing over 5 consecutive steps (last {:.6e})",
                state.residual
            ));
        }
    }
    Ok(RunAttempt::Done(Box::new(build_outcome(
        state, records, converged, diverged, reason,
    ))))
}

/// Runs the iteration on epsilon times the unit shape. If the monotonicity
/// guard rejects the seed itself, epsilon is halved and the run restarts,
/// up to `max_backoffs` times; exhausting the budget yields a divergence
/// report, not an error.
pub fn run(
    shear: &ShearProfile,
    shape: &Array2<f64>,
    cfg: &IterationConfig,
) -> Result<IterationOutcome> {
    cfg.validate(&shear.grid)?;
    let mut eps = cfg.epsilon;
    let mut backoffs = 0usize;
    loop {
        match run_attempt(shear, shape, cfg, eps)? {
            RunAttempt::Done(mut out) => {
                out.report.backoffs = backoffs;
                out.report.epsilon_used = eps;
                return Ok(*out);
            }
            RunAttempt::SeedGuard(msg, mut out) => {
                backoffs += 1;
                if backoffs > cfg.max_backoffs {
                    out.report.backoffs = backoffs - 1;
                    out.report.epsilon_used = eps;
                    out.report.divergence_reason = Some(format!(
                        "seed rejected by the monotonicity guard after {} halvings: {msg}",
                        backoffs - 1
                    ));
                    return Ok(*out);
                }
                eps *= 0.5;
            }
        }
    }
}

/// Two-run comparison: evolves both data sets concurrently, then checks the
/// difference dynamics. The difference of the two solutions is transformed
/// through the midpoint background and evolved as a zero-force system from
/// the transformed data gap; the report carries both the direct difference
/// norms and the fitted stability constant.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityReport {
    pub gap_interior_norm: f64,
    pub gap_trace_norm: f64,
    pub gap_v_norm: f64,
    pub w0_interior: f64,
    pub w0_trace: f64,
    /// data-side functional: |w0| + |w0 at the wall| / max(sqrt(beta - C_eta), sqrt(delta))
    pub data_functional: f64,
    pub fitted_c: f64,
    /// relative mismatch between the evolved difference and the direct one
    pub transform_consistency: f64,
    pub epsilon_used: f64,
    pub run1_converged: bool,
    pub run2_converged: bool,
}

pub fn stability_experiment(
    shear: &ShearProfile,
    shape1: &Array2<f64>,
    shape2: &Array2<f64>,
    cfg: &IterationConfig,
) -> Result<StabilityReport> {
    let (r1, r2) = rayon::join(|| run(shear, shape1, cfg), || run(shear, shape2, cfg));
    let o1 = r1?;
    let o2 = r2?;
    if o1.report.epsilon_used != o2.report.epsilon_used {
        return Err(Error::numerical(
            "the two runs backed off to different amplitudes; comparison void",
        ));
    }
    let eps = o1.report.epsilon_used;
    let spec = shear.grid.clone();

    let diff_u = o1.pert_u.sub(&o2.pert_u)?;
    let diff_v = o1.pert_v.sub(&o2.pert_v)?;
    let gap_interior_norm = norm_a(&diff_u, cfg.norm_k, cfg.ell)?;
    let gap_trace_norm = norm_boundary_a(&diff_u.trace()?, cfg.norm_k)?;
    let gap_v_norm = norm_a(&diff_v, cfg.norm_k, cfg.ell)?;

    // identical data short-circuits before any background work: the
    // difference is zero whatever the midpoint state looks like
    if gap_interior_norm <= 1e-300 && gap_trace_norm <= 1e-300 {
        return Ok(StabilityReport {
            gap_interior_norm,
            gap_trace_norm,
            gap_v_norm,
            w0_interior: 0.0,
            w0_trace: 0.0,
            data_functional: 0.0,
            fitted_c: 0.0,
            transform_consistency: 0.0,
            epsilon_used: eps,
            run1_converged: o1.report.converged,
            run2_converged: o2.report.converged,
        });
    }

    // midpoint background from the two finished runs
    let pert_mid = o1.pert_u.add(&o2.pert_u)?.scaled(0.5);
    let v_mid = o1.pert_v.add(&o2.pert_v)?.scaled(0.5);
    let us = Field::from_ty(&spec, &shear.u_s)?;
    let u_mid = us.add(&pert_mid)?;
    let bg = build_background(&u_mid, &v_mid, shear, shear.beta, cfg.delta_floor)?;

    // transformed data gap: w0 = 2 d_y((u1_0 - u2_0) / d_y(u1_0 + u2_0))
    let (n_x, n_y, dy) = (spec.n_x, spec.n_y, spec.dy());
    let us_y0 = shear.u_y.row(0).to_owned();
    let mut w0 = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        let num: Array1<f64> =
            (0..n_y).map(|iy| eps * (shape1[(ix, iy)] - shape2[(ix, iy)])).collect();
        let sum_col: Array1<f64> =
            (0..n_y).map(|iy| eps * (shape1[(ix, iy)] + shape2[(ix, iy)])).collect();
        let dsum = profile_d_y(&sum_col, dy, 1);
        let ratio: Array1<f64> = (0..n_y)
            .map(|iy| num[iy] / (2.0 * us_y0[iy] + dsum[iy]))
            .collect();
        let dr = profile_d_y(&ratio, dy, 1);
        for iy in 0..n_y {
            w0[(ix, iy)] = 2.0 * dr[iy];
        }
    }
    let w0_interior = norm_a_data_xy(&w0, &spec, cfg.norm_k, cfg.ell)?;
    let w0_trace = norm_boundary_a_data_x(&w0.column(0).to_owned(), &spec, cfg.norm_k)?;
    let denom = (bg.beta - bg.c_eta).max(0.0).sqrt().max(bg.delta.sqrt());
    let data_functional = w0_interior + w0_trace / denom.max(1e-300);

    let (fitted_c, transform_consistency) = {
        let mut w0_field = Field::zeros(&spec, FieldKind::Interior);
        for ix in 0..n_x {
            for iy in 0..n_y {
                w0_field.values[(0, ix, iy)] = w0[(ix, iy)];
            }
        }
        let opts = SolverOpts {
            ell: cfg.ell,
            boundary_theta: cfg.boundary_theta,
            cfl_limit: 0.45,
        };
        let sol = solve_case_ii(&bg, &w0_field, &opts)?;
        let evolved_gap = sol.u;
        let consistency =
            norm_a(&evolved_gap.sub(&diff_u)?, cfg.norm_k, cfg.ell)? / gap_interior_norm;
        let c = if data_functional > 0.0 {
            gap_interior_norm / data_functional
        } else {
            f64::INFINITY
        };
        (c, consistency)
    };

    Ok(StabilityReport {
        gap_interior_norm,
        gap_trace_norm,
        gap_v_norm,
        w0_interior,
        w0_trace,
        data_functional,
        fitted_c,
        transform_consistency,
        epsilon_used: eps,
        run1_converged: o1.report.converged,
        run2_converged: o2.report.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::slice_l2_xy;
    use crate::shear::{ShearFamily, ShearInitSpec};
    use approx::assert_relative_eq;

    /// Marches the canonical shear past the degenerate t = 0 wall ratio and
    /// windows to the requested grid.
    fn warm_shear(spec: &GridSpec, beta: f64, warm: usize) -> ShearProfile {
        let full = GridSpec::new(
            spec.n_t + warm,
            spec.n_x,
            spec.n_y,
            spec.dt() * (spec.n_t + warm - 1) as f64,
            spec.x_len,
            spec.y_max,
        )
        .unwrap();
        let init = ShearInitSpec {
            family: ShearFamily::GaussianDeficit { sigma: 1.0 },
            beta,
        };
        ShearProfile::generate(&init, &full)
            .unwrap()
            .window(warm, spec.n_t)
            .unwrap()
    }

    fn desk_spec() -> GridSpec {
        GridSpec::new(12, 12, 64, 0.3, 1.0, 6.0).unwrap()
    }

    fn desk_cfg() -> IterationConfig {
        IterationConfig {
            theta0: 3.0,
            epsilon: 1e-2,
            max_iters: 3,
            delta_floor: 1e-5,
            ..IterationConfig::canonical()
        }
    }

    #[test]
    fn schedule_values_and_gaps() {
        let (theta5, _) = theta_schedule(10.0, 5);
        assert_relative_eq!(theta5, 105.0f64.sqrt(), max_relative = 1e-15);
        let gaps: Vec<f64> = (0..20).map(|n| theta_schedule(10.0, n).1).collect();
        for p in gaps.windows(2) {
            assert!(p[1] < p[0], "schedule gaps must shrink");
        }
    }

    #[test]
    fn schedule_sums_settle() {
        let checks = schedule_sum_check(3.0, 200, 7.0).unwrap();
        assert_eq!(checks.len(), 5);
        for (key, c) in &checks {
            assert!(c.c_max.is_finite() && c.c_max > 0.0, "{key}: bad c_max");
            assert!(c.drift < 0.10, "{key}: drift {} not settled", c.drift);
        }
    }

    #[test]
    fn zero_data_has_zero_seed_defect() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        let data = Array2::zeros((spec.n_x, spec.n_y));
        let zo = zeroth_order(&shear, &data, 2).unwrap();
        assert_eq!(zo.f_a.max_abs(), 0.0);
        assert_eq!(zo.u_pert.max_abs(), 0.0);
        assert_eq!(zo.v.max_abs(), 0.0);
    }

    #[test]
    fn taylor_coefficients_satisfy_wall_law() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        let data = canonical_perturbation(&spec, 1.0, 1.0, 0.0).mapv(|v| 1e-2 * v);
        let zo = zeroth_order(&shear, &data, 2).unwrap();
        let dy = spec.dy();
        for (j, tab) in zo.taylor_u.iter().enumerate() {
            let res = wall_law_residuals(tab, shear.beta, dy);
            let scale = tab.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            let worst = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(
                worst <= 1e-11 * (1.0 + shear.beta) * scale / dy.min(1.0),
                "coefficient {j} wall-law residual {worst:.3e} at scale {scale:.3e}"
            );
        }
        // normal-velocity coefficients vanish at the wall by construction
        for tab in &zo.taylor_v {
            for ix in 0..spec.n_x {
                assert_eq!(tab[(ix, 0)], 0.0);
            }
        }
    }

    #[test]
    fn seed_defect_vanishes_at_taylor_order() {
        // larger time steps keep the fitted window above the stencil floor
        let spec = GridSpec::new(11, 48, 240, 0.5, 1.0, 6.0).unwrap();
        let shear = warm_shear(&spec, 1.0, 3);
        let data = canonical_perturbation(&spec, 1.0, 1.0, 0.0).mapv(|v| 1e-2 * v);
        let zo = zeroth_order(&shear, &data, 2).unwrap();
        let ts: Vec<f64> = (1..spec.n_t).map(|it| spec.t(it)).collect();
        let ns: Vec<f64> = (1..spec.n_t)
            .map(|it| slice_l2_xy(&zo.f_a, 1.0, it).unwrap())
            .collect();
        let fit = fit_loglog(&ts, &ns).unwrap();
        assert!(
            fit.slope >= 1.7,
            "seed defect grows at order {:.3}, wanted >= 1.7",
            fit.slope
        );
    }

    #[test]
    fn force_partial_sums_telescope() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        // synthetic smooth stand-ins for the seed defect and error terms
        let f_a = Field::from_fn(&spec, |t, x, y| {
            (2.0 * std::f64::consts::PI * x).cos() * t * (-2.0 * y * y).exp()
        });
        let es: Vec<Field> = (0..3)
            .map(|j| {
                Field::from_fn(&spec, |t, x, y| {
                    (2.0 * std::f64::consts::PI * x + j as f64).sin()
                        * t
                        * t
                        * (-2.0 * y * y).exp()
                        / (j + 1) as f64
                })
            })
            .collect();
        let _ = &shear;
        let zero = Field::zeros(&spec, FieldKind::Interior);
        let mut f_sum = Field::zeros(&spec, FieldKind::Interior);
        let mut e_sum = Field::zeros(&spec, FieldKind::Interior);
        let mut e_last = zero.clone();
        for n in 0..4usize {
            let (theta_n, _) = theta_schedule(3.0, n);
            let theta_prev = if n > 0 { theta_schedule(3.0, n - 1).0 } else { theta_n };
            let f_n = force_update(n, theta_prev, theta_n, &f_a, &e_sum, &e_last).unwrap();
            f_sum = f_sum.add(&f_n).unwrap();
            // audit against sum_{j<=n-1} e_j + f_a
            let e_full = e_sum.add(&e_last).unwrap();
            let carried = e_full.add(&f_a).unwrap();
            let lhs = f_sum
                .add(&smooth_interior(&carried, theta_n).unwrap())
                .unwrap();
            assert!(
                lhs.max_abs() <= 1e-12 * f_a.max_abs(),
                "telescoping broke at n = {n}: {:.3e}",
                lhs.max_abs()
            );
            if n < es.len() {
                e_sum = e_full;
                e_last = es[n].clone();
            }
        }
    }

    #[test]
    fn iteration_audits_hold() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        let shape = canonical_perturbation(&spec, 1.0, 1.0, 0.0);
        let out = run(&shear, &shape, &desk_cfg()).unwrap();
        assert_eq!(out.report.records.len(), out.report.n_done);
        assert!(out.report.n_done >= 1);
        for rec in &out.report.records {
            assert!(
                rec.bookkeeping_audit <= 1e-9,
                "one-step expansion identity drifted: {:.3e} at n = {}",
                rec.bookkeeping_audit,
                rec.n
            );
            assert!(
                rec.telescoping_audit <= 1e-10,
                "force telescoping drifted: {:.3e} at n = {}",
                rec.telescoping_audit,
                rec.n
            );
            assert!(
                rec.reconstruction_audit <= 1e-10,
                "seed + increments no longer reconstruct the iterate: {:.3e}",
                rec.reconstruction_audit
            );
            assert!(rec.wall_margin > 0.0);
            assert!(rec.residual.is_finite());
        }
        // increments vanish at t = 0, so the data slice is preserved at
        // whatever amplitude the back-off settled on
        let eps = out.report.epsilon_used;
        let seed = zeroth_order(&shear, &shape.mapv(|v| eps * v), 2).unwrap();
        let drift = out
            .pert_u
            .slice_xy(0)
            .iter()
            .zip(seed.u_pert.slice_xy(0).iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(drift <= 1e-12, "t = 0 data slice drifted by {drift:.3e}");
    }

    #[test]
    fn zero_data_converges_immediately() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        let shape = Array2::zeros((spec.n_x, spec.n_y));
        let out = run(&shear, &shape, &desk_cfg()).unwrap();
        assert!(out.report.converged);
        assert_eq!(out.report.n_done, 0);
        assert_eq!(out.report.initial_residual, 0.0);
    }

    #[test]
    fn violent_seed_backs_off() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        // slope-destroying amplitude: the guard must reject the first seed
        let shape = canonical_perturbation(&spec, 1.0, 1.0, 0.0).mapv(|v| 2e3 * v);
        let cfg = desk_cfg();
        let out = run(&shear, &shape, &cfg).unwrap();
        assert!(out.report.backoffs > 0, "expected at least one halving");
        assert!(out.report.epsilon_used < cfg.epsilon);
    }

    #[test]
    fn identical_data_gives_zero_gap() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        let shape = canonical_perturbation(&spec, 1.0, 1.0, 0.0);
        let rep = stability_experiment(&shear, &shape, &shape, &desk_cfg()).unwrap();
        assert!(rep.gap_interior_norm <= 1e-10);
        assert!(rep.gap_trace_norm <= 1e-10);
        assert_eq!(rep.fitted_c, 0.0);
    }

    #[test]
    fn distinct_data_reports_finite_constant() {
        let spec = desk_spec();
        let shear = warm_shear(&spec, 1.0, 4);
        let shape1 = canonical_perturbation(&spec, 1.0, 1.0, 0.0);
        let mut shape2 = shape1.clone();
        let gap = canonical_perturbation(&spec, 1.0, 1.0, 1.0);
        shape2.zip_mut_with(&gap, |a, b| *a += 0.3 * b);
        // amplitude low enough that neither seed needs a back-off, so both
        // runs share one epsilon and the comparison stays apples-to-apples
        let cfg = IterationConfig {
            epsilon: 5e-4,
            ..desk_cfg()
        };
        let rep = stability_experiment(&shear, &shape1, &shape2, &cfg).unwrap();
        assert!(rep.gap_interior_norm > 0.0);
        assert!(rep.fitted_c.is_finite() && rep.fitted_c > 0.0);
        assert!(rep.data_functional > 0.0);
        // the consistency ratio compares the evolved difference against the
        // direct one. Desk runs stay seed-dominated (their Taylor tails hold
        // frequencies no resolvable smoothing level reaches), so the ratio is
        // a reported diagnostic here, not a tight gate; the transform and its
        // recovery inverse are pinned down by the trace-identity tests.
        assert!(rep.transform_consistency.is_finite() && rep.transform_consistency > 0.0);
    }

    #[test]
    fn config_validation_rejects_bad_bands() {
        let spec = desk_spec();
        let mut cfg = desk_cfg();
        cfg.theta0 = 1.0;
        assert!(cfg.validate(&spec).is_err());
        let mut cfg = desk_cfg();
        cfg.max_iters = 4000;
        assert!(cfg.validate(&spec).is_err(), "schedule must outrun the grid");
        let mut cfg = desk_cfg();
        cfg.ell = 0.4;
        assert!(cfg.validate(&spec).is_err());
        let tight = GridSpec::new(12, 12, 10, 0.3, 1.0, 6.0).unwrap();
        assert!(desk_cfg().validate(&tight).is_err(), "n_y too small for k0");
    }
}
