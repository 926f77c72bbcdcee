//! The transformed vorticity system around a monotone background, with its
//! dynamic wall law.
//!
//! The tangential velocity perturbation u is traded for w = (u/ũ_y)_y, which
//! removes the normal velocity from the equation at the price of a nonlocal
//! tail integral and a genuine evolution equation on the wall. This module
//! builds the frozen coefficient fields of one linearized solve, steps the
//! system, and recovers (u, v).
//!
//! Splitting: Crank-Nicolson in y (diffusion plus the conservative
//! first-order terms 2(eta w)_y - (v w)_y, and the wall row), second-order
//! Adams-Bashforth for x-advection, the nonlocal term, and sources. The wall
//! row can be stepped backward-Euler (boundary_theta = 1) when large beta
//! makes it stiff.

use crate::error::{Error, Result};
use crate::grid::{
    d_t, d_x, d_y, integral_from_wall, tail_integral_all, Banded, Field, FieldKind, GridSpec,
};
use crate::shear::ShearProfile;
use ndarray::{Array1, Array2, Array3, Axis};
use rayon::prelude::*;

/// Frozen coefficients of one linearized solve. u_y carries the structural
/// first derivative (exact shear identity plus a stencil of the perturbation
/// only), so far-field monotonicity margins do not collapse in f64.
pub struct BackgroundState {
    pub spec: GridSpec,
    pub beta: f64,
    pub u_tilde: Field,
    pub v_tilde: Field,
    pub u_y: Field,
    pub u_yy: Field,
    /// u_yy / u_y
    pub eta: Field,
    /// shear curvature over total slope
    pub eta_bar: Field,
    /// material derivative of u_y over u_y, with the shear heat-flow part
    /// removed as an identity; exactly zero on pure shear
    pub zeta: Field,
    /// wall trace, shear part
    pub zeta1_tilde: Field,
    /// wall trace, remainder
    pub zeta2_tilde: Field,
    /// achieved wall margin min (beta - eta|_{y=0})
    pub delta: f64,
    /// margin over every node, not just the wall
    pub delta_interior: f64,
    /// measured max |eta|
    pub c_eta: f64,
    /// measured max |d_x u + d_y v|
    pub div_residual: f64,
    /// measured max |u(Y_max) - 1|
    pub tail_gap: f64,
}

impl BackgroundState {
    /// Wall trace of zeta1 + zeta2 at (it, ix).
    pub(crate) fn zeta_tilde_wall(&self, it: usize, ix: usize) -> f64 {
        self.zeta1_tilde.values[(it, ix, 0)] + self.zeta2_tilde.values[(it, ix, 0)]
    }
}

fn positivity_check(f: &Field, what: &str) -> Result<f64> {
    let mut min = f64::INFINITY;
    let mut at = (0usize, 0usize, 0usize);
    for (idx, &v) in f.values.indexed_iter() {
        if v < min {
            min = v;
            at = idx;
        }
    }
    if min <= 0.0 {
        return Err(Error::guard(format!(
            "{what} must stay positive: min {min:.3e} at node {at:?}"
        )));
    }
    Ok(min)
}

/// Assembles the coefficient fields around a total background (u_tilde,
/// v_tilde) whose shear part is known exactly. Rejects backgrounds that
/// violate monotonicity or whose wall margin drops below `delta_floor`.
pub fn build_background(
    u_tilde: &Field,
    v_tilde: &Field,
    shear: &ShearProfile,
    beta: f64,
    delta_floor: f64,
) -> Result<BackgroundState> {
    let spec = u_tilde.spec.clone();
    if u_tilde.kind != FieldKind::Interior || v_tilde.kind != FieldKind::Interior {
        return Err(Error::structural("background fields must be interior"));
    }
    if v_tilde.spec != spec {
        return Err(Error::structural("background fields on different grids"));
    }
    if shear.grid.n_t != spec.n_t
        || shear.grid.n_y != spec.n_y
        || (shear.grid.dt() - spec.dt()).abs() > 1e-12
        || (shear.grid.dy() - spec.dy()).abs() > 1e-12
    {
        return Err(Error::structural(
            "shear profile grid does not match the background grid",
        ));
    }
    if (beta - shear.beta).abs() > 1e-12 {
        return Err(Error::config(format!(
            "beta = {beta} does not match the shear profile beta = {}",
            shear.beta
        )));
    }

    let us_field = Field::from_ty(&spec, &shear.u_s)?;
    let pert = u_tilde.sub(&us_field)?;
    let u_y = Field::from_ty(&spec, &shear.u_y)?.add(&d_y(&pert, 1)?)?;
    let u_yy = Field::from_ty(&spec, &shear.u_yy)?.add(&d_y(&pert, 2)?)?;

    // wall trace of v must vanish; pin round-off to exact zero
    let mut v_tilde = v_tilde.clone();
    let v_wall = v_tilde.trace()?.max_abs();
    if v_wall > 1e-10 {
        return Err(Error::domain(format!(
            "normal background velocity at the wall: {v_wall:.3e}"
        )));
    }
    v_tilde.values.index_axis_mut(Axis(2), 0).fill(0.0);

    positivity_check(u_tilde, "background velocity")?;
    // the slope must stay positive wherever it is resolvable in f64; below
    // the floor the profile has decayed to stencil round-off and every ratio
    // against it is noise, so those coefficients are pinned to zero. Iterated
    // increments leave dead-tail junk a couple of decades above the ratio
    // floor, so the negativity guard gets its own, looser tolerance.
    let slope_floor = 1e-10 * u_y.max_abs();
    let junk_floor = 1e-8 * u_y.max_abs();
    {
        let mut min = f64::INFINITY;
        let mut at = (0usize, 0usize, 0usize);
        for (idx, &v) in u_y.values.indexed_iter() {
            if v < min {
                min = v;
                at = idx;
            }
        }
        if min < -junk_floor {
            return Err(Error::guard(format!(
                "background slope must stay positive: min {min:.3e} at node {at:?}"
            )));
        }
    }
    let resolved = |uy: f64| uy > slope_floor;

    let mut eta = Field::zeros(&spec, FieldKind::Interior);
    let mut eta_bar = Field::zeros(&spec, FieldKind::Interior);
    let us_yy = Field::from_ty(&spec, &shear.u_yy)?;
    for (idx, v) in eta.values.indexed_iter_mut() {
        let uy = u_y.values[idx];
        *v = if resolved(uy) { u_yy.values[idx] / uy } else { 0.0 };
    }
    for (idx, v) in eta_bar.values.indexed_iter_mut() {
        let uy = u_y.values[idx];
        *v = if resolved(uy) { us_yy.values[idx] / uy } else { 0.0 };
    }

    let mut delta = f64::INFINITY;
    let mut delta_at = (0usize, 0usize);
    for it in 0..spec.n_t {
        for ix in 0..spec.n_x {
            let m = beta - eta.values[(it, ix, 0)];
            if m < delta {
                delta = m;
                delta_at = (it, ix);
            }
        }
    }
    if delta < delta_floor {
        return Err(Error::guard(format!(
            "wall margin beta - eta = {delta:.6e} at (t,x) node {delta_at:?} \
             is below the floor {delta_floor:.3e}"
        )));
    }
    let delta_interior = eta
        .values
        .iter()
        .map(|&e| beta - e)
        .fold(f64::INFINITY, f64::min);
    let c_eta = eta.max_abs();

    // zeta = ((d_t + u d_x + v d_y - d_yy) u_y) / u_y with d_y u_y = u_yy.
    // The marched shear satisfies the heat flow, so its (d_t - d_yy) part is
    // dropped as an identity and only perturbation stencils plus transport
    // remain: zeta vanishes identically on a pure shear background instead of
    // carrying the table's truncation shadow, which grows like a fourth
    // Hermite ratio in the far tail.
    let p_y = d_y(&pert, 1)?;
    let p_y_t = d_t(&p_y)?;
    let p_y_yy = d_y(&p_y, 2)?;
    let u_y_t = d_t(&u_y)?;
    let u_y_x = d_x(&u_y)?;
    let mut zeta = Field::zeros(&spec, FieldKind::Interior);
    for (idx, v) in zeta.values.indexed_iter_mut() {
        let uy = u_y.values[idx];
        if !resolved(uy) {
            continue;
        }
        let num = p_y_t.values[idx] + u_tilde.values[idx] * u_y_x.values[idx]
            + v_tilde.values[idx] * u_yy.values[idx]
            - p_y_yy.values[idx];
        *v = num / uy;
    }

    // zeta-tilde wall traces: shear part from the profile's time derivatives,
    // remainder as (full) - (shear part) using the combined formula
    // (u_yyt + u u_yyx - eta (u_yt + u u_yx)) / u_y.
    let u_yy_t = d_t(&u_yy)?;
    let u_yy_x = d_x(&u_yy)?;
    let mut zeta1 = Field::zeros(&spec, FieldKind::Trace);
    let mut zeta2 = Field::zeros(&spec, FieldKind::Trace);
    for it in 0..spec.n_t {
        for ix in 0..spec.n_x {
            let uy = u_y.values[(it, ix, 0)];
            let z1 = shear.u_yyt[(it, 0)] / uy
                - eta_bar.values[(it, ix, 0)] * shear.u_yt[(it, 0)] / uy;
            let full = (u_yy_t.values[(it, ix, 0)]
                + u_tilde.values[(it, ix, 0)] * u_yy_x.values[(it, ix, 0)]
                - eta.values[(it, ix, 0)]
                    * (u_y_t.values[(it, ix, 0)]
                        + u_tilde.values[(it, ix, 0)] * u_y_x.values[(it, ix, 0)]))
                / uy;
            zeta1.values[(it, ix, 0)] = z1;
            zeta2.values[(it, ix, 0)] = full - z1;
        }
    }

    let div_residual = d_x(u_tilde)?.add(&d_y(&v_tilde, 1)?)?.max_abs();
    if div_residual > 1e-2 {
        return Err(Error::domain(format!(
            "background divergence residual {div_residual:.3e} is too large"
        )));
    }
    let mut tail_gap = 0.0f64;
    for it in 0..spec.n_t {
        for ix in 0..spec.n_x {
            tail_gap = tail_gap.max((u_tilde.values[(it, ix, spec.n_y - 1)] - 1.0).abs());
        }
    }
    if tail_gap > 0.05 {
        return Err(Error::domain(format!(
            "background does not approach 1 at Y_max: gap {tail_gap:.3e}"
        )));
    }

    Ok(BackgroundState {
        spec,
        beta,
        u_tilde: u_tilde.clone(),
        v_tilde,
        u_y,
        u_yy,
        eta,
        eta_bar,
        zeta,
        zeta1_tilde: zeta1,
        zeta2_tilde: zeta2,
        delta,
        delta_interior,
        c_eta,
        div_residual,
        tail_gap,
    })
}

impl BackgroundState {
    /// Static analytic shear-like background from exact profile derivatives;
    /// coefficients carry no stencil error, which isolates solver error in
    /// manufactured-solution studies. v = 0, zeta-tilde = 0.
    pub fn from_profile(
        spec: &GridSpec,
        beta: f64,
        u: impl Fn(f64) -> f64,
        u_y: impl Fn(f64) -> f64,
        u_yy: impl Fn(f64) -> f64,
        u_yyy: impl Fn(f64) -> f64,
        delta_floor: f64,
    ) -> Result<BackgroundState> {
        let u_tilde = Field::from_fn(spec, |_, _, y| u(y));
        let u_y_f = Field::from_fn(spec, |_, _, y| u_y(y));
        let u_yy_f = Field::from_fn(spec, |_, _, y| u_yy(y));
        positivity_check(&u_tilde, "background velocity")?;
        positivity_check(&u_y_f, "background slope")?;
        let eta = Field::from_fn(spec, |_, _, y| u_yy(y) / u_y(y));
        let zeta = Field::from_fn(spec, |_, _, y| -u_yyy(y) / u_y(y));
        let mut delta = f64::INFINITY;
        for ix in 0..1 {
            let m = beta - eta.values[(0, ix, 0)];
            delta = delta.min(m);
        }
        if delta < delta_floor {
            return Err(Error::guard(format!(
                "wall margin {delta:.6e} below floor {delta_floor:.3e}"
            )));
        }
        let delta_interior = eta
            .values
            .iter()
            .map(|&e| beta - e)
            .fold(f64::INFINITY, f64::min);
        let c_eta = eta.max_abs();
        let tail_gap = (u(spec.y_max) - 1.0).abs();
        Ok(BackgroundState {
            spec: spec.clone(),
            beta,
            u_tilde,
            v_tilde: Field::zeros(spec, FieldKind::Interior),
            u_y: u_y_f,
            u_yy: u_yy_f,
            eta_bar: eta.clone(),
            eta,
            zeta,
            zeta1_tilde: Field::zeros(spec, FieldKind::Trace),
            zeta2_tilde: Field::zeros(spec, FieldKind::Trace),
            delta,
            delta_interior,
            c_eta,
            div_residual: 0.0,
            tail_gap,
        })
    }
}

/// Per-step norm records of one solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EnergyRecord {
    pub t: f64,
    /// weighted interior L2 of the slice
    pub interior: f64,
    /// wall quadratic sum_x w0^2 / (beta - eta|_0) dx
    pub wall: f64,
}

pub struct VorticitySolution {
    pub w: Field,
    pub w_boundary: Field,
    pub u: Field,
    pub v: Field,
    pub energy_log: Vec<EnergyRecord>,
}

/// Solver knobs. boundary_theta = 0.5 steps the wall row with the same
/// Crank-Nicolson weight as the interior; 1.0 is backward Euler for stiff
/// (large beta) wall rows. ell weights the energy log.
#[derive(Debug, Clone, Copy)]
pub struct SolverOpts {
    pub ell: f64,
    pub boundary_theta: f64,
    pub cfl_limit: f64,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            ell: 1.0,
            boundary_theta: 0.5,
            cfl_limit: 0.45,
        }
    }
}

/// One x-column's implicit operator applied to a column vector:
/// rows 1..n-2: w_yy + d_y((2 eta - v) w) by central conservative stencils;
/// row 0: the wall law (beta - eta)(w_y + 2 eta w) - zeta-tilde w/(beta - eta)
/// with a one-sided second-order w_y; row n-1: 0 (pinned far field).
fn apply_implicit(bg: &BackgroundState, it: usize, ix: usize, w: &[f64], out: &mut [f64]) {
    let n = w.len();
    let dy = bg.spec.dy();
    let beta = bg.beta;
    let eta0 = bg.eta.values[(it, ix, 0)];
    let m0 = beta - eta0;
    let zt = bg.zeta_tilde_wall(it, ix);
    let wy0 = (-3.0 * w[0] + 4.0 * w[1] - w[2]) / (2.0 * dy);
    out[0] = m0 * (wy0 + 2.0 * eta0 * w[0]) - zt * w[0] / m0;
    for j in 1..n - 1 {
        let lap = (w[j + 1] - 2.0 * w[j] + w[j - 1]) / (dy * dy);
        let gp = (2.0 * bg.eta.values[(it, ix, j + 1)] - bg.v_tilde.values[(it, ix, j + 1)])
            * w[j + 1];
        let gm = (2.0 * bg.eta.values[(it, ix, j - 1)] - bg.v_tilde.values[(it, ix, j - 1)])
            * w[j - 1];
        out[j] = lap + (gp - gm) / (2.0 * dy);
    }
    out[n - 1] = 0.0;
}

/// Banded matrix I - dt * theta_row * L at time level it for one column.
fn implicit_matrix(bg: &BackgroundState, it: usize, ix: usize, dt: f64, theta_b: f64) -> Banded {
    let n = bg.spec.n_y;
    let dy = bg.spec.dy();
    let beta = bg.beta;
    let mut m = Banded::zeros(n, 1, 2);
    let eta0 = bg.eta.values[(it, ix, 0)];
    let m0 = beta - eta0;
    let zt = bg.zeta_tilde_wall(it, ix);
    let c = dt * theta_b;
    m.set(0, 0, 1.0 - c * (m0 * (-3.0 / (2.0 * dy) + 2.0 * eta0) - zt / m0));
    m.set(0, 1, -c * m0 * 4.0 / (2.0 * dy));
    m.set(0, 2, c * m0 / (2.0 * dy));
    let half = 0.5 * dt;
    for j in 1..n - 1 {
        let gp = 2.0 * bg.eta.values[(it, ix, j + 1)] - bg.v_tilde.values[(it, ix, j + 1)];
        let gm = 2.0 * bg.eta.values[(it, ix, j - 1)] - bg.v_tilde.values[(it, ix, j - 1)];
        m.set(j, j - 1, -half * (1.0 / (dy * dy) - gm / (2.0 * dy)));
        m.set(j, j, 1.0 + half * 2.0 / (dy * dy));
        m.set(j, j + 1, -half * (1.0 / (dy * dy) + gp / (2.0 * dy)));
    }
    m.set(n - 1, n - 1, 1.0);
    m
}

/// Explicit terms at one time level: interior rows get -(u w)_x +
/// (zeta T w)_y + src, the wall row gets -(u w)_x + (beta - eta)(f0 +
/// zeta T w|_0) + src_wall, where T w is the tail integral of w in y.
#[allow(clippy::too_many_arguments)]
fn explicit_slice(
    bg: &BackgroundState,
    it: usize,
    w: &Array2<f64>,
    f_wall: Option<&Field>,
    src_int: Option<&Field>,
    src_bdy: Option<&Field>,
) -> Array2<f64> {
    let (n_x, n_y) = w.dim();
    let dx = bg.spec.dx();
    let dy = bg.spec.dy();
    let mut out = Array2::zeros((n_x, n_y));
    // tail integrals per column: suffix trapezoid
    let mut tails = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        let mut acc = 0.0;
        tails[(ix, n_y - 1)] = 0.0;
        for j in (0..n_y - 1).rev() {
            acc += 0.5 * dy * (w[(ix, j)] + w[(ix, j + 1)]);
            tails[(ix, j)] = acc;
        }
    }
    for ix in 0..n_x {
        let ixp = (ix + 1) % n_x;
        let ixm = (ix + n_x - 1) % n_x;
        // x-advection at every row including the wall
        for j in 0..n_y {
            let fp = bg.u_tilde.values[(it, ixp, j)] * w[(ixp, j)];
            let fm = bg.u_tilde.values[(it, ixm, j)] * w[(ixm, j)];
            out[(ix, j)] = -(fp - fm) / (2.0 * dx);
        }
        // nonlocal term, interior rows
        for j in 1..n_y - 1 {
            let np = bg.zeta.values[(it, ix, j + 1)] * tails[(ix, j + 1)];
            let nm = bg.zeta.values[(it, ix, j - 1)] * tails[(ix, j - 1)];
            out[(ix, j)] += (np - nm) / (2.0 * dy);
        }
        // wall row: undifferentiated nonlocal and force entries
        let eta0 = bg.eta.values[(it, ix, 0)];
        let m0 = bg.beta - eta0;
        let f0 = f_wall.map_or(0.0, |f| f.values[(it, ix, 0)]);
        out[(ix, 0)] += m0 * (f0 + bg.zeta.values[(it, ix, 0)] * tails[(ix, 0)]);
        if let Some(s) = src_bdy {
            out[(ix, 0)] += s.values[(it, ix, 0)];
        }
        if let Some(s) = src_int {
            for j in 1..n_y - 1 {
                out[(ix, j)] += s.values[(it, ix, j)];
            }
        }
        out[(ix, n_y - 1)] = 0.0;
    }
    out
}

fn weighted_slice_l2(w: &Array2<f64>, spec: &GridSpec, ell: f64) -> f64 {
    let wy = spec.y_weights();
    let dx = spec.dx();
    let mut s = 0.0;
    for ix in 0..spec.n_x {
        for j in 0..spec.n_y {
            let y = spec.y(j);
            let wt = (1.0 + y * y).powf(ell);
            s += wt * w[(ix, j)] * w[(ix, j)] * wy[j] * dx;
        }
    }
    s.sqrt()
}

/// Core IMEX march. `f_tilde` enters as d_y(f_tilde) in the interior and
/// undifferentiated on the wall; `src_int`/`src_bdy` are extra sources for
/// manufactured-solution studies; `w0` seeds the t = 0 slice verbatim.
fn solve_core(
    bg: &BackgroundState,
    f_tilde: Option<&Field>,
    src_int: Option<&Field>,
    src_bdy: Option<&Field>,
    w0: Option<&Array2<f64>>,
    opts: &SolverOpts,
) -> Result<VorticitySolution> {
    let spec = &bg.spec;
    let (n_t, n_x, n_y) = (spec.n_t, spec.n_x, spec.n_y);
    let dt = spec.dt();
    let u_max = bg.u_tilde.max_abs();
    let cfl = dt * u_max / spec.dx();
    if cfl > opts.cfl_limit {
        return Err(Error::config(format!(
            "advective CFL {cfl:.3} exceeds {:.3}: refine dt below {:.3e}",
            opts.cfl_limit,
            opts.cfl_limit * spec.dx() / u_max
        )));
    }
    if !(opts.boundary_theta >= 0.5 && opts.boundary_theta <= 1.0) {
        return Err(Error::config("boundary_theta must lie in [0.5, 1]"));
    }

    // interior source: d_y(f_tilde) plus any extra term
    let dyf = match f_tilde {
        Some(f) => Some(d_y(f, 1)?),
        None => None,
    };
    let src_int_all: Option<Field> = match (dyf, src_int) {
        (Some(a), Some(b)) => Some(a.add(b)?),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b.clone()),
        (None, None) => None,
    };

    let mut w = Array3::<f64>::zeros((n_t, n_x, n_y));
    if let Some(init) = w0 {
        if init.dim() != (n_x, n_y) {
            return Err(Error::structural("w0 slice has the wrong shape"));
        }
        w.index_axis_mut(Axis(0), 0).assign(init);
    }

    let cap = 1e8 * (1.0 + w.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut energy = Vec::with_capacity(n_t);
    let rec = |w_slice: &Array2<f64>, it: usize| -> EnergyRecord {
        let mut wall = 0.0;
        for ix in 0..n_x {
            let m0 = bg.beta - bg.eta.values[(it, ix, 0)];
            wall += w_slice[(ix, 0)] * w_slice[(ix, 0)] / m0 * spec.dx();
        }
        EnergyRecord {
            t: spec.t(it),
            interior: weighted_slice_l2(w_slice, spec, opts.ell),
            wall,
        }
    };
    energy.push(rec(&w.index_axis(Axis(0), 0).to_owned(), 0));

    let mut expl_prev: Option<Array2<f64>> = None;
    for m in 1..n_t {
        let w_old = w.index_axis(Axis(0), m - 1).to_owned();
        let expl_old = explicit_slice(
            bg,
            m - 1,
            &w_old,
            f_tilde,
            src_int_all.as_ref(),
            src_bdy,
        );
        // Adams-Bashforth blend; first step falls back to forward Euler
        let expl_blend: Array2<f64> = match &expl_prev {
            Some(prev) => &expl_old * 1.5 - prev * 0.5,
            None => expl_old.clone(),
        };

        let theta_b = opts.boundary_theta;
        let columns: Vec<Vec<f64>> = (0..n_x)
            .into_par_iter()
            .map(|ix| -> Result<Vec<f64>> {
                let col: Vec<f64> = (0..n_y).map(|j| w_old[(ix, j)]).collect();
                let mut lw = vec![0.0; n_y];
                apply_implicit(bg, m - 1, ix, &col, &mut lw);
                let mut rhs = vec![0.0; n_y];
                rhs[0] = col[0] + dt * (1.0 - theta_b) * lw[0] + dt * expl_blend[(ix, 0)];
                for j in 1..n_y - 1 {
                    rhs[j] = col[j] + dt * 0.5 * lw[j] + dt * expl_blend[(ix, j)];
                }
                rhs[n_y - 1] = 0.0;
                let mat = implicit_matrix(bg, m, ix, dt, theta_b);
                mat.factor_and_solve(&mut rhs)?;
                Ok(rhs)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut slice = w.index_axis_mut(Axis(0), m);
        for (ix, col) in columns.iter().enumerate() {
            for j in 0..n_y {
                let v = col[j];
                if !v.is_finite() || v.abs() > cap.max(1e8) {
                    return Err(Error::numerical(format!(
                        "vorticity march lost finiteness at step {m}, column {ix}"
                    )));
                }
                slice[(ix, j)] = v;
            }
        }
        energy.push(rec(&slice.to_owned(), m));
        expl_prev = Some(expl_old);
    }

    let w_field = Field::new(spec.clone(), FieldKind::Interior, w)?;
    let w_boundary = w_field.trace()?;
    let u = recover_u(&w_field, bg)?;
    let v = recover_v(&u)?;
    Ok(VorticitySolution {
        w: w_field,
        w_boundary,
        u,
        v,
        energy_log: energy,
    })
}

/// Zero data, nonzero force f (raw, divided by the slope internally).
pub fn solve_case_i(bg: &BackgroundState, f: &Field, opts: &SolverOpts) -> Result<VorticitySolution> {
    if f.kind != FieldKind::Interior {
        return Err(Error::structural("force must be an interior field"));
    }
    let mut f_tilde = Field::zeros(&bg.spec, FieldKind::Interior);
    for (idx, v) in f_tilde.values.indexed_iter_mut() {
        *v = f.values[idx] / bg.u_y.values[idx];
    }
    f_tilde.ensure_finite("f/u_y")?;
    solve_core(bg, Some(&f_tilde), None, None, None, opts)
}

/// Case-i march that takes the already-divided force.
pub fn solve_case_i_ft(
    bg: &BackgroundState,
    f_tilde: &Field,
    opts: &SolverOpts,
) -> Result<VorticitySolution> {
    solve_core(bg, Some(f_tilde), None, None, None, opts)
}

/// Zero force, nonzero data. Only the t = 0 slice of `w0` is read; it is
/// copied into the solution verbatim. The wall law keeps its (zero) force
/// slot in this case.
pub fn solve_case_ii(
    bg: &BackgroundState,
    w0: &Field,
    opts: &SolverOpts,
) -> Result<VorticitySolution> {
    if w0.kind != FieldKind::Interior {
        return Err(Error::structural("w0 must be an interior field"));
    }
    let init = w0.slice_xy(0);
    let top = init
        .index_axis(Axis(1), w0.spec.n_y - 1)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if top > 1e-8 {
        return Err(Error::domain(format!(
            "w0 does not decay at Y_max: |w0(Y_max)| = {top:.3e}"
        )));
    }
    solve_core(bg, None, None, None, Some(&init), opts)
}

/// Manufactured-solution harness: optional extra interior/wall sources are
/// added to the forced march so a chosen exact field can drive the system.
pub fn solve_forced(
    bg: &BackgroundState,
    f_tilde: Option<&Field>,
    src_int: Option<&Field>,
    src_bdy: Option<&Field>,
    w0: Option<&Field>,
    opts: &SolverOpts,
) -> Result<VorticitySolution> {
    let init = w0.map(|f| f.slice_xy(0));
    solve_core(bg, f_tilde, src_int, src_bdy, init.as_ref(), opts)
}

/// u = -u_y * tail integral of w, with the wall node projected onto the
/// one-sided discrete Robin row (u_y - beta u = 0 at y = 0).
pub fn recover_u(w: &Field, bg: &BackgroundState) -> Result<Field> {
    let tails = tail_integral_all(w)?;
    let mut u = Field::zeros(&bg.spec, FieldKind::Interior);
    for (idx, v) in u.values.indexed_iter_mut() {
        *v = -bg.u_y.values[idx] * tails.values[idx];
    }
    let dy = bg.spec.dy();
    for it in 0..bg.spec.n_t {
        for ix in 0..bg.spec.n_x {
            let u1 = u.values[(it, ix, 1)];
            let u2 = u.values[(it, ix, 2)];
            u.values[(it, ix, 0)] = (4.0 * u1 - u2) / (3.0 + 2.0 * bg.beta * dy);
        }
    }
    Ok(u)
}

/// v(t,x,y) = -int_0^y d_x u; the wall value is exactly zero.
pub fn recover_v(u: &Field) -> Result<Field> {
    let ux = d_x(u)?;
    Ok(integral_from_wall(&ux)?.scaled(-1.0))
}

/// Discrete initial vorticity (u0 / u_y(0))_y for zero-force runs, from a
/// t = 0 tangential velocity slice.
pub fn w0_from_u0(u0: &Array2<f64>, bg: &BackgroundState) -> Result<Field> {
    let spec = &bg.spec;
    if u0.dim() != (spec.n_x, spec.n_y) {
        return Err(Error::structural("u0 slice has the wrong shape"));
    }
    let dy = spec.dy();
    let mut out = Field::zeros(spec, FieldKind::Interior);
    for ix in 0..spec.n_x {
        let ratio: Array1<f64> = (0..spec.n_y)
            .map(|j| u0[(ix, j)] / bg.u_y.values[(0, ix, j)])
            .collect();
        let d = crate::shear::profile_d_y(&ratio, dy, 1);
        for j in 0..spec.n_y {
            for it in 0..spec.n_t {
                out.values[(it, ix, j)] = if it == 0 { d[j] } else { 0.0 };
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::shear::{ShearFamily, ShearInitSpec, ShearProfile};

    fn shear_on(spec: &GridSpec, beta: f64) -> ShearProfile {
        let init = ShearInitSpec {
            family: ShearFamily::GaussianDeficit { sigma: 1.0 },
            beta,
        };
        // march on a longer window and start past the degenerate t = 0 node
        let warm = 4;
        let full = GridSpec::new(
            spec.n_t + warm,
            spec.n_x,
            spec.n_y,
            spec.dt() * (spec.n_t + warm - 1) as f64,
            spec.x_len,
            spec.y_max,
        )
        .unwrap();
        let p = ShearProfile::generate(&init, &full).unwrap();
        let p = p.window(warm, spec.n_t).unwrap();
        assert!((p.grid.dt() - spec.dt()).abs() < 1e-12);
        p
    }

    fn pure_shear_background(spec: &GridSpec, beta: f64) -> BackgroundState {
        let shear = shear_on(spec, beta);
        let u_tilde = Field::from_ty(spec, &shear.u_s).unwrap();
        let v_tilde = Field::zeros(spec, FieldKind::Interior);
        build_background(&u_tilde, &v_tilde, &shear, beta, 1e-8).unwrap()
    }

    fn test_spec() -> GridSpec {
        GridSpec::new(25, 12, 181, 0.3, 2.0, 12.0).unwrap()
    }

    #[test]
    fn pure_shear_coefficients() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        // eta equals eta_bar on pure shear
        let diff = bg.eta.sub(&bg.eta_bar).unwrap().max_abs();
        assert!(diff < 1e-13, "eta - eta_bar = {diff}");
        // zeta-tilde remainder trace vanishes
        assert!(bg.zeta2_tilde.max_abs() < 1e-10);
        // the slope transporter reduces to the heat-flow identity on pure shear
        let z = bg.zeta.max_abs();
        assert_eq!(z, 0.0, "zeta residual {z:.3e} on pure shear");
        assert!(bg.delta > 0.8 && bg.delta <= 2.0, "delta = {}", bg.delta);
    }

    #[test]
    fn guard_rejects_negative_margin() {
        let spec = test_spec();
        let shear = shear_on(&spec, 1.0);
        // a bump near the wall strong enough to flip the curvature ratio
        let bump = Field::from_fn(&spec, |_, _, y| 0.4 * (-(y - 0.4) * (y - 0.4) / 0.01).exp());
        let u_tilde = Field::from_ty(&spec, &shear.u_s).unwrap().add(&bump).unwrap();
        let v_tilde = Field::zeros(&spec, FieldKind::Interior);
        let err = build_background(&u_tilde, &v_tilde, &shear, 1.0, 0.05);
        assert!(err.is_err());
    }

    #[test]
    fn zero_force_zero_data_gives_zero() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        let f = Field::zeros(&spec, FieldKind::Interior);
        let sol = solve_case_i(&bg, &f, &SolverOpts::default()).unwrap();
        assert_eq!(sol.w.max_abs(), 0.0);
        assert_eq!(sol.u.max_abs(), 0.0);
        assert_eq!(sol.v.max_abs(), 0.0);
    }

    #[test]
    fn case_ii_keeps_initial_slice_verbatim() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        let w0 = Field::from_fn(&spec, |_, x, y| {
            (1.0 + 0.2 * (3.1415 * x).sin()) * y * (-2.0 * y).exp()
        });
        let sol = solve_case_ii(&bg, &w0, &SolverOpts::default()).unwrap();
        for ix in 0..spec.n_x {
            for j in 0..spec.n_y {
                assert_eq!(sol.w.values[(0, ix, j)], w0.values[(0, ix, j)]);
            }
        }
    }

    #[test]
    fn solution_scales_linearly_with_data() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        let w0 = Field::from_fn(&spec, |_, x, y| {
            (1.0 + 0.3 * (3.1415 * x).cos()) * y * (-2.0 * y).exp()
        });
        let opts = SolverOpts::default();
        let a = solve_case_ii(&bg, &w0, &opts).unwrap();
        let b = solve_case_ii(&bg, &w0.scaled(-2.5), &opts).unwrap();
        let err = b.w.sub(&a.w.scaled(-2.5)).unwrap().max_abs();
        assert!(err < 1e-11 * a.w.max_abs().max(1.0), "linearity error {err}");
    }

    #[test]
    fn energy_dissipates_then_stays_bounded() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        let w0 = Field::from_fn(&spec, |_, _, y| y * (-2.0 * y).exp());
        let sol = solve_case_ii(&bg, &w0, &SolverOpts::default()).unwrap();
        let e: Vec<f64> = sol.energy_log.iter().map(|r| r.interior).collect();
        // the dynamic wall row recycles vorticity back into the interior, so
        // after the initial diffusive transient the norm creeps up again at a
        // rate the wall margin controls. Pointwise monotone decay is not a
        // property of this system; boundedness and a capped growth rate are.
        let dt = spec.dt();
        for m in 1..e.len() {
            assert!(
                e[m] <= e[0] * (1.0 + 1e-9),
                "energy exceeded its initial value at step {m}: {} vs {}",
                e[m],
                e[0]
            );
            assert!(
                e[m] <= e[m - 1] * (1.0 + 2.0 * dt),
                "energy growth rate blew past the wall-margin cap at step {m}: {} -> {}",
                e[m - 1],
                e[m]
            );
        }
        let floor = e.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            floor < 0.95 * e[0],
            "no net dissipation: min {floor} vs initial {}",
            e[0]
        );
    }

    #[test]
    fn recovered_u_matches_analytic_tail() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        let w = Field::from_fn(&spec, |_, _, y| (-y).exp());
        let u = recover_u(&w, &bg).unwrap();
        // u = -u_y * (e^{-y} - e^{-Y_max}); compare away from the projected wall node
        let mut max_err = 0.0f64;
        let tail_at_top = (-spec.y_max).exp();
        for it in 0..spec.n_t {
            for j in 1..spec.n_y {
                let y = spec.y(j);
                let want = -bg.u_y.values[(it, 0, j)] * ((-y).exp() - tail_at_top);
                max_err = max_err.max((u.values[(it, 0, j)] - want).abs());
            }
        }
        assert!(max_err < 2.0 * spec.dy() * spec.dy(), "tail error {max_err}");
    }

    #[test]
    fn recovered_u_trace_identity_and_robin() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        // the trace identity u(0) = u_y(0) w(0) / (beta - eta(0)) holds only
        // for data whose wall value balances its own tail integral; shift the
        // profile by the constant that enforces that balance on this grid.
        let dy = spec.dy();
        let trap_tail = |g: &dyn Fn(f64) -> f64| -> f64 {
            (0..spec.n_y - 1)
                .map(|k| 0.5 * (g(spec.y(k)) + g(spec.y(k + 1))) * dy)
                .sum()
        };
        let m0 = bg.beta - bg.eta.values[(0, 0, 0)];
        let c = m0 * trap_tail(&|y| y * (-2.0 * y).exp())
            / (1.0 + m0 * trap_tail(&|y| (-2.0 * y).exp()));
        let w0 = Field::from_fn(&spec, |_, x, y| {
            (1.0 + 0.2 * (3.1415 * x).sin()) * (y - c) * (-2.0 * y).exp()
        });
        let sol = solve_case_ii(&bg, &w0, &SolverOpts::default()).unwrap();
        let mut robin = 0.0f64;
        let mut trace = 0.0f64;
        let scale = sol.u.max_abs().max(1e-30);
        for it in 0..spec.n_t {
            for ix in 0..spec.n_x {
                let u0 = sol.u.values[(it, ix, 0)];
                let u1 = sol.u.values[(it, ix, 1)];
                let u2 = sol.u.values[(it, ix, 2)];
                let r = (-3.0 * u0 + 4.0 * u1 - u2) / (2.0 * dy) - bg.beta * u0;
                robin = robin.max(r.abs() / scale);
                let m0 = bg.beta - bg.eta.values[(it, ix, 0)];
                let want = bg.u_y.values[(it, ix, 0)] / m0 * sol.w.values[(it, ix, 0)];
                trace = trace.max((u0 - want).abs());
            }
        }
        assert!(robin < 1e-12, "relative Robin residual {robin:.3e}");
        assert!(trace < 5.0 * dy * dy * scale.max(1.0), "trace residual {trace:.3e}");
    }

    #[test]
    fn recovered_v_wall_and_divergence() {
        let spec = GridSpec::new(9, 48, 181, 0.1, 2.0, 12.0).unwrap();
        let bg = pure_shear_background(&spec, 1.0);
        let w0 = Field::from_fn(&spec, |_, x, y| {
            (1.0 + 0.5 * (2.0 * 3.14159265 * x / 2.0).sin()) * (-2.0 * y).exp()
        });
        let sol = solve_case_ii(&bg, &w0, &SolverOpts::default()).unwrap();
        assert_eq!(sol.v.trace().unwrap().max_abs(), 0.0);
        let div = d_x(&sol.u).unwrap().add(&d_y(&sol.v, 1).unwrap()).unwrap();
        let scale = sol.u.max_abs().max(1.0);
        let tol = 5.0 * (spec.dx() * spec.dx() + spec.dy() * spec.dy()) * scale;
        assert!(div.max_abs() <= tol, "divergence {} vs {}", div.max_abs(), tol);
    }

    #[test]
    fn cfl_violation_is_a_config_error() {
        let spec = GridSpec::new(5, 4, 181, 2.0, 1.0, 12.0).unwrap();
        let bg = pure_shear_background(&spec, 1.0);
        let f = Field::from_fn(&spec, |_, _, y| (-y).exp());
        let err = solve_case_i(&bg, &f, &SolverOpts::default());
        match err {
            Err(e) => assert_eq!(e.exit_code(), 2),
            Ok(_) => panic!("expected a CFL rejection"),
        }
    }

    #[test]
    fn w0_from_u0_matches_stencil() {
        let spec = test_spec();
        let bg = pure_shear_background(&spec, 1.0);
        let u0 = Array2::from_shape_fn((spec.n_x, spec.n_y), |(_, j)| {
            let y = spec.y(j);
            y * (-y).exp()
        });
        let w0 = w0_from_u0(&u0, &bg).unwrap();
        assert_eq!(w0.values[(1, 0, 0)], 0.0);
        assert!(w0.max_abs() > 0.0);
    }
}
