//! Relaxation of a monotone shear profile u^s(t, y) toward 1 under the heat
//! equation with the Robin wall law du/dy = beta u at y = 0.
//!
//! The profile is evolved in deficit variables d = 1 - u^s and r = w1 + beta
//! (w1 = du^s/dy - beta u^s). Both deficits stay tiny-but-positive at the far
//! field where 1 - u^s and du^s/dy fall below machine epsilon relative to 1,
//! so monotonicity margins remain checkable at every node; du^s/dy = r - beta d
//! is then an exact identity, not a stencil.
//!
//! Two independent routes exist on purpose: the Crank-Nicolson finite
//! difference march and the image-kernel (odd reflection) integral for w1.
//! They cross-validate each other and are never merged.

use crate::error::{Error, Result};
use crate::grid::{lane_first_derivative, lane_second_derivative, Banded, GridSpec};
use ndarray::{Array1, Array2, Axis, Zip};

/// Initial-data families for the shear profile, given through w1 data.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub enum ShearFamily {
    /// w1_0 = -beta (1 - exp(-(y/sigma)^2)). Wall-compatible at order 0,
    /// convex at the wall (the wall curvature ratio starts exactly at beta).
    GaussianDeficit { sigma: f64 },
    /// u_0 = 1 - exp(-beta y)/2, i.e. w1_0 = -beta (1 - exp(-beta y)).
    /// Exactly Robin-compatible and concave: d^2 u_0 / dy^2 <= 0.
    ExponentialDeficit,
    /// Tabulated w1_0 on the grid's y nodes.
    Table { w1: Vec<f64> },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ShearInitSpec {
    pub family: ShearFamily,
    pub beta: f64,
}

/// Canonical initial w1 profile: -beta (1 - exp(-(y/sigma)^2)).
pub fn canonical_initial_w1(sigma: f64, beta: f64, grid: &GridSpec) -> Array1<f64> {
    Array1::from_shape_fn(grid.n_y, |j| {
        let y = grid.y(j);
        -beta * (-(-(y / sigma) * (y / sigma)).exp_m1())
    })
}

/// Deficit form of the canonical data: r_0 = w1_0 + beta = beta exp(-(y/sigma)^2).
pub fn canonical_initial_deficit(sigma: f64, beta: f64, grid: &GridSpec) -> Array1<f64> {
    Array1::from_shape_fn(grid.n_y, |j| {
        let y = grid.y(j);
        beta * (-(y / sigma) * (y / sigma)).exp()
    })
}

fn exp_cell_coeffs(beta: f64, dy: f64) -> (f64, f64, f64) {
    // decay = e^{-beta dy}; A = int_0^dy e^{-beta tau} dtau;
    // B = int_0^dy e^{-beta tau} (tau/dy) dtau. Series guards the b-part
    // against cancellation for small beta dy.
    let s = beta * dy;
    let decay = (-s).exp();
    let a = -(-s).exp_m1() / beta;
    let one_minus = if s < 1e-4 {
        s * s * (0.5 - s / 3.0 + s * s / 8.0)
    } else {
        1.0 - (1.0 + s) * decay
    };
    let b = one_minus / (beta * beta * dy);
    (decay, a, b)
}

/// Velocity recovery u^s(y) = 1 + int_y^inf e^{beta (y - s)} w1(s) ds, done
/// cell-by-cell with the exponential weight integrated exactly against the
/// linear interpolant of w1. Recovers u == 1 exactly for w1 == -beta, and is
/// overflow-free for large beta.
pub fn recover_us(w1: &Array1<f64>, beta: f64, grid: &GridSpec) -> Result<Array1<f64>> {
    if w1.len() != grid.n_y {
        return Err(Error::structural("recover_us: w1 length != n_y"));
    }
    if !(beta > 0.0) {
        return Err(Error::domain("recover_us: beta must be positive"));
    }
    let (decay, a_w, b_w) = exp_cell_coeffs(beta, grid.dy());
    let n = grid.n_y;
    let mut u = Array1::zeros(n);
    u[n - 1] = 1.0;
    for j in (0..n - 1).rev() {
        let a = w1[j];
        let b = w1[j + 1];
        // u(y_j) = e^{-beta dy} u(y_{j+1}) - int of e^{-beta tau} w1(y_j + tau)
        u[j] = decay * u[j + 1] - (a * a_w + (b - a) * b_w);
    }
    Ok(u)
}

/// Deficit recovery: d = 1 - u^s from r = w1 + beta, same exact-cell rule,
/// with a prescribed far-field deficit d(Y_max).
pub fn recover_us_deficit(
    r: &Array1<f64>,
    beta: f64,
    grid: &GridSpec,
    d_top: f64,
) -> Result<Array1<f64>> {
    if r.len() != grid.n_y {
        return Err(Error::structural("recover_us_deficit: r length != n_y"));
    }
    let (decay, a_w, b_w) = exp_cell_coeffs(beta, grid.dy());
    let n = grid.n_y;
    let mut d = Array1::zeros(n);
    d[n - 1] = d_top;
    for j in (0..n - 1).rev() {
        let a = r[j];
        let b = r[j + 1];
        d[j] = decay * d[j + 1] + a * a_w + (b - a) * b_w;
    }
    Ok(d)
}

/// Trapezoid refinement with Richardson extrapolation (Romberg table) until
/// two successive extrapolations agree to tol (relative to max(1, |I|)).
fn adaptive_trapezoid(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let mut n = 64usize;
    let h0 = (b - a) / n as f64;
    let mut sum = 0.5 * (f(a) + f(b));
    for i in 1..n {
        sum += f(a + h0 * i as f64);
    }
    let mut rows: Vec<Vec<f64>> = vec![vec![sum * h0]];
    for _level in 1..=14 {
        // refine: add midpoints
        let h = (b - a) / n as f64;
        let mut add = 0.0;
        for i in 0..n {
            add += f(a + h * (i as f64 + 0.5));
        }
        n *= 2;
        let new_trap = 0.5 * rows.last().unwrap()[0] + add * (b - a) / n as f64;
        let prev = rows.last().unwrap().clone();
        let mut row = vec![new_trap];
        let mut pow4 = 1.0;
        for j in 0..prev.len() {
            pow4 *= 4.0;
            let v = (pow4 * row[j] - prev[j]) / (pow4 - 1.0);
            row.push(v);
        }
        let best = *row.last().unwrap();
        let prev_best = *prev.last().unwrap();
        rows.push(row);
        if (best - prev_best).abs() <= tol * best.abs().max(1.0) && rows.len() > 3 {
            return best;
        }
    }
    *rows.last().unwrap().last().unwrap()
}

/// Dirichlet heat propagator for w1 by the odd-reflection image kernel:
/// w1(t, y) = (4 pi t)^{-1/2} int_0^inf [G(y - s) - G(y + s)] w1_0(s) ds.
/// Data is the linear interpolant of `w1_0` on the grid, extended by
/// `far_value` beyond Y_max; the integral is truncated at Y_max + 10 sqrt(t).
pub fn heat_kernel_w1(
    w1_0: &Array1<f64>,
    far_value: f64,
    t: f64,
    grid: &GridSpec,
) -> Result<Array1<f64>> {
    if w1_0.len() != grid.n_y {
        return Err(Error::structural("heat_kernel_w1: data length != n_y"));
    }
    if t < 0.0 {
        return Err(Error::domain("heat_kernel_w1: negative time"));
    }
    if t == 0.0 {
        return Ok(w1_0.clone());
    }
    let dy = grid.dy();
    let y_max = grid.y_max;
    let data = |s: f64| -> f64 {
        if s >= y_max {
            far_value
        } else {
            let j = (s / dy).floor() as usize;
            let j = j.min(grid.n_y - 2);
            let frac = (s - grid.y(j)) / dy;
            w1_0[j] * (1.0 - frac) + w1_0[j + 1] * frac
        }
    };
    let upper = y_max + 10.0 * t.sqrt();
    let norm = 1.0 / (4.0 * std::f64::consts::PI * t).sqrt();
    let mut out = Array1::zeros(grid.n_y);
    for jy in 0..grid.n_y {
        let y = grid.y(jy);
        let integrand = move |s: f64| {
            let g_minus = (-(y - s) * (y - s) / (4.0 * t)).exp();
            let g_plus = (-(y + s) * (y + s) / (4.0 * t)).exp();
            (g_minus - g_plus) * data(s)
        };
        out[jy] = norm * adaptive_trapezoid(&integrand, 0.0, upper, 1e-10);
    }
    Ok(out)
}

pub(crate) fn ty_d_t(arr: &Array2<f64>, dt: f64) -> Array2<f64> {
    let mut out = Array2::zeros(arr.dim());
    Zip::from(out.lanes_mut(Axis(0)))
        .and(arr.lanes(Axis(0)))
        .for_each(|dst, src| lane_first_derivative(src, dst, dt));
    out
}

pub(crate) fn ty_d_y(arr: &Array2<f64>, dy: f64, order: usize) -> Array2<f64> {
    let mut out = Array2::zeros(arr.dim());
    match order {
        1 => Zip::from(out.lanes_mut(Axis(1)))
            .and(arr.lanes(Axis(1)))
            .for_each(|dst, src| lane_first_derivative(src, dst, dy)),
        _ => Zip::from(out.lanes_mut(Axis(1)))
            .and(arr.lanes(Axis(1)))
            .for_each(|dst, src| lane_second_derivative(src, dst, dy)),
    }
    out
}

pub(crate) fn profile_d_y(arr: &Array1<f64>, dy: f64, order: usize) -> Array1<f64> {
    let mut out = Array1::zeros(arr.len());
    match order {
        1 => lane_first_derivative(arr.view(), out.view_mut(), dy),
        _ => lane_second_derivative(arr.view(), out.view_mut(), dy),
    }
    out
}

/// Wall projection enforcing the one-sided discrete Robin row
/// (-3 g0 + 4 g1 - g2)/(2 dy) - beta g0 = rhs on the wall node.
pub(crate) fn project_wall_robin(g: &mut Array1<f64>, beta: f64, dy: f64, rhs: f64) {
    g[0] = (4.0 * g[1] - g[2] - 2.0 * dy * rhs) / (3.0 + 2.0 * beta * dy);
}

/// Evolved shear profile with its derived wall-curvature ratios.
/// alpha = u_yy/u_y, alpha1 = u_yt/u_y, alpha2 = u_yyt/u_y; nodes where u_y
/// has collapsed to zero in f64 fall back to 0 and are counted.
#[derive(Debug, Clone)]
pub struct ShearProfile {
    pub grid: GridSpec,
    pub beta: f64,
    /// 1 - u_def; (n_t, n_y)
    pub u_s: Array2<f64>,
    /// deficit d = 1 - u^s, tiny positive at the far field
    pub u_def: Array2<f64>,
    /// r - beta
    pub w1: Array2<f64>,
    /// deficit r = w1 + beta
    pub w1_def: Array2<f64>,
    /// du^s/dy = r - beta d, exact identity
    pub u_y: Array2<f64>,
    pub u_yy: Array2<f64>,
    pub u_yt: Array2<f64>,
    pub u_yyt: Array2<f64>,
    pub alpha: Array2<f64>,
    pub alpha1: Array2<f64>,
    pub alpha2: Array2<f64>,
    /// measured data margin min_y (beta - alpha(0, y)); can be ~0 for the
    /// canonical family whose wall ratio starts exactly at beta
    pub delta_s0: f64,
    pub saturated_nodes: usize,
    /// |d^{2j}/dy^{2j} w1_0 (0)| for j = 0, 1, 2: wall-compatibility residuals
    pub compat_residuals: Vec<f64>,
}

fn compat_residuals_of(w1_0: &Array1<f64>, dy: f64) -> Vec<f64> {
    let d2 = profile_d_y(w1_0, dy, 2);
    let d4 = profile_d_y(&d2, dy, 2);
    vec![w1_0[0].abs(), d2[0].abs(), d4[0].abs()]
}

/// Crank-Nicolson march of the deficit pair (d, r). Wall rows: one-sided
/// Robin (affine) for d, Dirichlet r = beta for r. Top rows hold the initial
/// far-field deficits, so tail margins never saturate to zero artificially.
fn evolve_deficits(
    d0: &Array1<f64>,
    r0: &Array1<f64>,
    beta: f64,
    grid: &GridSpec,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n_t, n_y) = (grid.n_t, grid.n_y);
    let (dt, dy) = (grid.dt(), grid.dy());
    let mu = dt / (2.0 * dy * dy);

    let mut mat_d = Banded::zeros(n_y, 1, 2);
    let mut mat_r = Banded::zeros(n_y, 1, 2);
    // wall rows
    mat_d.set(0, 0, -3.0 - 2.0 * beta * dy);
    mat_d.set(0, 1, 4.0);
    mat_d.set(0, 2, -1.0);
    mat_r.set(0, 0, 1.0);
    for j in 1..n_y - 1 {
        for m in [&mut mat_d, &mut mat_r] {
            m.set(j, j - 1, -mu);
            m.set(j, j, 1.0 + 2.0 * mu);
            m.set(j, j + 1, -mu);
        }
    }
    mat_d.set(n_y - 1, n_y - 1, 1.0);
    mat_r.set(n_y - 1, n_y - 1, 1.0);
    mat_d.factor()?;
    mat_r.factor()?;

    let mut d = Array2::zeros((n_t, n_y));
    let mut r = Array2::zeros((n_t, n_y));
    d.row_mut(0).assign(d0);
    r.row_mut(0).assign(r0);
    let (d_top, r_top) = (d0[n_y - 1], r0[n_y - 1]);
    let cap = 10.0 * (1.0 + d0.iter().chain(r0.iter()).fold(0.0f64, |m, v| m.max(v.abs())));

    let mut rhs_d = vec![0.0; n_y];
    let mut rhs_r = vec![0.0; n_y];
    for m in 1..n_t {
        for j in 1..n_y - 1 {
            let lap_d = d[(m - 1, j + 1)] - 2.0 * d[(m - 1, j)] + d[(m - 1, j - 1)];
            let lap_r = r[(m - 1, j + 1)] - 2.0 * r[(m - 1, j)] + r[(m - 1, j - 1)];
            rhs_d[j] = d[(m - 1, j)] + mu * lap_d;
            rhs_r[j] = r[(m - 1, j)] + mu * lap_r;
        }
        rhs_d[0] = -2.0 * beta * dy; // Robin row: d_y - beta d = -beta
        rhs_r[0] = beta;
        rhs_d[n_y - 1] = d_top;
        rhs_r[n_y - 1] = r_top;
        mat_d.solve_factored(&mut rhs_d)?;
        mat_r.solve_factored(&mut rhs_r)?;
        for j in 0..n_y {
            if !rhs_d[j].is_finite() || rhs_d[j].abs() > cap || rhs_r[j].abs() > cap {
                return Err(Error::numerical(format!(
                    "shear march blew past the data scale at step {m}"
                )));
            }
            d[(m, j)] = rhs_d[j];
            r[(m, j)] = rhs_r[j];
        }
    }
    Ok((d, r))
}

impl ShearProfile {
    fn from_deficits(
        grid: &GridSpec,
        beta: f64,
        d: Array2<f64>,
        r: Array2<f64>,
        compat_residuals: Vec<f64>,
    ) -> Self {
        let u_s = d.mapv(|v| 1.0 - v);
        let w1 = r.mapv(|v| v - beta);
        let u_y = &r - &(beta * &d);
        let u_yy = ty_d_y(&u_y, grid.dy(), 1);
        let u_yt = ty_d_t(&u_y, grid.dt());
        let u_yyt = ty_d_t(&u_yy, grid.dt());
        // ratios are only meaningful where the slope is resolvable; below the
        // floor the slope is round-off and the ratio defaults to 0 (the true
        // curvature ratio is strongly negative out there, so this is the
        // conservative report). Nonpositive slopes still count as saturated.
        let uy_max = u_y.iter().fold(0.0f64, |m, &v| m.max(v));
        let floor = 1e-12 * uy_max;
        let mut saturated = 0usize;
        let mut ratio = |num: &Array2<f64>| -> Array2<f64> {
            let mut out = Array2::zeros(u_y.dim());
            for ((idx, &uy), &n) in u_y.indexed_iter().zip(num.iter()) {
                if uy > floor {
                    out[idx] = n / uy;
                } else {
                    if uy <= 0.0 {
                        saturated += 1;
                    }
                    out[idx] = 0.0;
                }
            }
            out
        };
        let alpha = ratio(&u_yy);
        let alpha1 = ratio(&u_yt);
        let alpha2 = ratio(&u_yyt);
        let delta_s0 = alpha
            .row(0)
            .iter()
            .map(|&a| beta - a)
            .fold(f64::INFINITY, f64::min);
        ShearProfile {
            grid: grid.clone(),
            beta,
            u_s,
            u_def: d,
            w1,
            w1_def: r,
            u_y,
            u_yy,
            u_yt,
            u_yyt,
            alpha,
            alpha1,
            alpha2,
            delta_s0,
            saturated_nodes: saturated / 3,
            compat_residuals,
        }
    }

    /// Build initial deficits for a family and march them.
    pub fn generate(init: &ShearInitSpec, grid: &GridSpec) -> Result<ShearProfile> {
        let beta = init.beta;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::config(format!("beta = {beta} must be positive")));
        }
        let (mut d0, r0, w1_0) = match &init.family {
            ShearFamily::GaussianDeficit { sigma } => {
                if !(*sigma > 0.0) {
                    return Err(Error::config("sigma must be positive"));
                }
                let r0 = canonical_initial_deficit(*sigma, beta, grid);
                let w1_0 = canonical_initial_w1(*sigma, beta, grid);
                // far-field deficit from the Gaussian asymptote of the
                // exponential-weighted tail integral
                let y_top = grid.y_max;
                let d_top = r0[grid.n_y - 1] / (beta + 2.0 * y_top / (sigma * sigma));
                let d0 = recover_us_deficit(&r0, beta, grid, d_top)?;
                (d0, r0, w1_0)
            }
            ShearFamily::ExponentialDeficit => {
                let r0 = Array1::from_shape_fn(grid.n_y, |j| beta * (-beta * grid.y(j)).exp());
                let w1_0 = r0.mapv(|v| v - beta);
                // closed form: u0 = 1 - e^{-beta y}/2
                let d0 = Array1::from_shape_fn(grid.n_y, |j| 0.5 * (-beta * grid.y(j)).exp());
                (d0, r0, w1_0)
            }
            ShearFamily::Table { w1 } => {
                if w1.len() != grid.n_y {
                    return Err(Error::config(format!(
                        "tabulated w1 has {} entries, grid has n_y = {}",
                        w1.len(),
                        grid.n_y
                    )));
                }
                let w1_0 = Array1::from_vec(w1.clone());
                let r0 = w1_0.mapv(|v| v + beta);
                let d_top = (r0[grid.n_y - 1] / beta).max(0.0);
                let d0 = recover_us_deficit(&r0, beta, grid, d_top)?;
                (d0, r0, w1_0)
            }
        };
        let compat = compat_residuals_of(&w1_0, grid.dy());
        // wall node obeys the one-sided Robin row exactly at t = 0
        project_wall_robin(&mut d0, beta, grid.dy(), -beta);
        let (d, r) = evolve_deficits(&d0, &r0, beta, grid)?;
        Ok(Self::from_deficits(grid, beta, d, r, compat))
    }

    /// March from a tabulated velocity profile. The deficit data comes from
    /// stencils here, so far-field margins may honestly saturate to zero if
    /// 1 - u0 falls below machine epsilon.
    pub fn solve_heat_robin_fd(
        u0: &Array1<f64>,
        beta: f64,
        grid: &GridSpec,
    ) -> Result<ShearProfile> {
        if u0.len() != grid.n_y {
            return Err(Error::structural("u0 length != n_y"));
        }
        if u0.iter().any(|&v| v <= 0.0) {
            return Err(Error::domain("u0 must be positive"));
        }
        let u0y = profile_d_y(u0, grid.dy(), 1);
        let w1_0 = &u0y - &(beta * u0);
        let compat = compat_residuals_of(&w1_0, grid.dy());
        let r0 = w1_0.mapv(|v| v + beta);
        let mut d0 = u0.mapv(|v| 1.0 - v);
        project_wall_robin(&mut d0, beta, grid.dy(), -beta);
        let (d, r) = evolve_deficits(&d0, &r0, beta, grid)?;
        Ok(Self::from_deficits(grid, beta, d, r, compat))
    }

    /// Sub-profile starting at time node i0, relabeled to t = 0.
    pub fn window(&self, i0: usize, n_t: usize) -> Result<ShearProfile> {
        if i0 + n_t > self.grid.n_t {
            return Err(Error::structural(format!(
                "window [{i0}, {}) exceeds n_t = {}",
                i0 + n_t,
                self.grid.n_t
            )));
        }
        let grid = GridSpec::new(
            n_t,
            self.grid.n_x,
            self.grid.n_y,
            self.grid.dt() * (n_t - 1) as f64,
            self.grid.x_len,
            self.grid.y_max,
        )?;
        let cut = |a: &Array2<f64>| a.slice(ndarray::s![i0..i0 + n_t, ..]).to_owned();
        let d = cut(&self.u_def);
        let r = cut(&self.w1_def);
        Ok(Self::from_deficits(
            &grid,
            self.beta,
            d,
            r,
            self.compat_residuals.clone(),
        ))
    }

    /// d^m/dt^m u^s at one time node, evaluated as the m-th repeated
    /// y-Laplacian of the profile (the evolution trades each time derivative
    /// for two y derivatives). m = 0 returns u^s itself.
    pub fn dt_us_data(&self, it: usize, m: usize) -> Array1<f64> {
        let mut cur = self.u_s.row(it).to_owned();
        if m == 0 {
            return cur;
        }
        // first Laplacian uses the exact first derivative identity
        let uy = self.u_y.row(it).to_owned();
        cur = profile_d_y(&uy, self.grid.dy(), 1);
        for _ in 1..m {
            cur = profile_d_y(&cur, self.grid.dy(), 2);
        }
        cur
    }
}

/// Nonlinear wall-curvature-ratio system: da/dt = d2a/dy2 + d(a^2)/dy with
/// the wall law da/dy + a^2 = beta a at y = 0 and a zero-curvature top row.
/// Crank-Nicolson diffusion, explicit conservative flux with CFL sub-steps,
/// lagged quadratic in the wall row.
pub fn solve_alpha_system(alpha0: &Array1<f64>, beta: f64, grid: &GridSpec) -> Result<Array2<f64>> {
    if alpha0.len() != grid.n_y {
        return Err(Error::structural("alpha0 length != n_y"));
    }
    let (n_t, n_y) = (grid.n_t, grid.n_y);
    let (dt, dy) = (grid.dt(), grid.dy());
    let mut out = Array2::zeros((n_t, n_y));
    out.row_mut(0).assign(alpha0);
    let scale0 = alpha0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cap = 50.0 * (scale0 + beta + 1.0);

    let mut cur = alpha0.to_owned();
    for m in 1..n_t {
        let max_a = cur.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        let dt_cfl = 0.4 * dy / (2.0 * max_a + 1e-12);
        let n_sub = (dt / dt_cfl).ceil().max(1.0) as usize;
        let h = dt / n_sub as f64;
        let mu = h / (2.0 * dy * dy);

        let mut mat = Banded::zeros(n_y, 2, 2);
        mat.set(0, 0, -3.0 - 2.0 * beta * dy);
        mat.set(0, 1, 4.0);
        mat.set(0, 2, -1.0);
        for j in 1..n_y - 1 {
            mat.set(j, j - 1, -mu);
            mat.set(j, j, 1.0 + 2.0 * mu);
            mat.set(j, j + 1, -mu);
        }
        mat.set(n_y - 1, n_y - 3, 1.0);
        mat.set(n_y - 1, n_y - 2, -2.0);
        mat.set(n_y - 1, n_y - 1, 1.0);
        mat.factor()?;

        let mut rhs = vec![0.0; n_y];
        for _ in 0..n_sub {
            for j in 1..n_y - 1 {
                let lap = cur[j + 1] - 2.0 * cur[j] + cur[j - 1];
                let flux = (cur[j + 1] * cur[j + 1] - cur[j - 1] * cur[j - 1]) / (2.0 * dy);
                rhs[j] = cur[j] + mu * lap + h * flux;
            }
            // wall row: (-3a0+4a1-a2) - 2 dy beta a0 = -2 dy a0_prev^2
            rhs[0] = -2.0 * dy * cur[0] * cur[0];
            rhs[n_y - 1] = 0.0;
            mat.solve_factored(&mut rhs)?;
            for j in 0..n_y {
                if !rhs[j].is_finite() || rhs[j].abs() > cap {
                    return Err(Error::numerical(format!(
                        "wall-ratio system blew up at outer step {m}"
                    )));
                }
                cur[j] = rhs[j];
            }
        }
        out.row_mut(m).assign(&cur);
    }
    Ok(out)
}

/// Pointwise monotonicity margins of an evolved profile.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MonotonicityReport {
    pub min_u: f64,
    pub min_u_y: f64,
    /// min over all nodes of beta - alpha
    pub min_margin: f64,
    /// min over the t = 0 row (the measured data margin)
    pub min_margin_t0: f64,
    pub max_alpha: f64,
    pub max_alpha_t0: f64,
    pub max_u_yy: f64,
    /// max over t of |one-sided Robin functional of u^s at the wall|
    pub wall_robin_residual: f64,
    pub saturated_nodes: usize,
}

pub fn check_monotonicity(p: &ShearProfile) -> MonotonicityReport {
    let min_of = |a: &Array2<f64>| a.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let max_of = |a: &Array2<f64>| a.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let dy = p.grid.dy();
    let mut robin = 0.0f64;
    for it in 0..p.grid.n_t {
        let u = p.u_s.row(it);
        let r_h = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dy) - p.beta * u[0];
        robin = robin.max(r_h.abs());
    }
    let margin = p.alpha.mapv(|a| p.beta - a);
    let margin_t0 = p
        .alpha
        .row(0)
        .iter()
        .map(|&a| p.beta - a)
        .fold(f64::INFINITY, f64::min);
    MonotonicityReport {
        min_u: min_of(&p.u_s),
        min_u_y: min_of(&p.u_y),
        min_margin: min_of(&margin),
        min_margin_t0: margin_t0,
        max_alpha: max_of(&p.alpha),
        max_alpha_t0: p
            .alpha
            .row(0)
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v)),
        max_u_yy: max_of(&p.u_yy),
        wall_robin_residual: robin,
        saturated_nodes: p.saturated_nodes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn shear_grid(n_t: usize, n_y: usize, t_max: f64, y_max: f64) -> GridSpec {
        GridSpec::new(n_t, 4, n_y, t_max, 2.0, y_max).unwrap()
    }

    #[test]
    fn canonical_data_shape() {
        let g = shear_grid(8, 201, 0.5, 12.0);
        let w1 = canonical_initial_w1(1.0, 2.0, &g);
        assert_eq!(w1[0], 0.0);
        assert!(w1.iter().skip(1).all(|&v| v < 0.0));
        assert_relative_eq!(w1[g.n_y - 1], -2.0, max_relative = 1e-10);
        let r = canonical_initial_deficit(1.0, 2.0, &g);
        for j in 0..g.n_y {
            assert_relative_eq!(r[j], w1[j] + 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn recover_us_constant_data_is_exactly_one() {
        for beta in [0.5, 1.0, 5.0, 1e4] {
            let g = shear_grid(8, 101, 0.5, 8.0);
            let w1 = Array1::from_elem(g.n_y, -beta);
            let u = recover_us(&w1, beta, &g).unwrap();
            assert!(u.iter().all(|&v| v == 1.0), "beta = {beta}");
        }
    }

    #[test]
    fn recover_us_matches_exponential_family() {
        // w1 = -beta(1 - e^{-beta y}) recovers u = 1 - e^{-beta y}/2 exactly
        // in the continuum; cell-linear interpolation leaves O(dy^2)
        let beta = 1.5;
        let err_on = |n_y: usize| -> f64 {
            let g = shear_grid(8, n_y, 0.5, 10.0);
            let w1 = Array1::from_shape_fn(g.n_y, |j| -beta * (1.0 - (-beta * g.y(j)).exp()));
            let u = recover_us(&w1, beta, &g).unwrap();
            let mut max_err = 0.0f64;
            for j in 0..g.n_y {
                let exact = 1.0 - 0.5 * (-beta * g.y(j)).exp();
                max_err = max_err.max((u[j] - exact).abs());
            }
            max_err
        };
        let coarse = err_on(401);
        let fine = err_on(801);
        assert!(coarse < 1e-4, "coarse err = {coarse}");
        let ratio = coarse / fine;
        assert!(
            (3.4..4.6).contains(&ratio),
            "halving ratio {ratio} is not second order (errs {coarse}, {fine})"
        );
    }

    #[test]
    fn deficit_recovery_consistent_with_direct() {
        let beta = 2.0;
        let g = shear_grid(8, 201, 0.5, 10.0);
        let r = canonical_initial_deficit(0.8, beta, &g);
        let w1 = r.mapv(|v| v - beta);
        let u = recover_us(&w1, beta, &g).unwrap();
        let d_top = r[g.n_y - 1] / (beta + 2.0 * g.y_max / 0.64);
        let d = recover_us_deficit(&r, beta, &g, d_top).unwrap();
        for j in 0..g.n_y {
            assert_relative_eq!(1.0 - d[j], u[j], epsilon = 1e-12, max_relative = 1e-9);
        }
        assert!(d.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn robin_identity_from_deficits() {
        // du/dy - beta u == w1 should hold to O(dy^2) when checked by stencils
        let g = shear_grid(10, 401, 0.2, 10.0);
        let p = ShearProfile::generate(
            &ShearInitSpec {
                family: ShearFamily::GaussianDeficit { sigma: 1.0 },
                beta: 1.0,
            },
            &g,
        )
        .unwrap();
        let uy_stencil = ty_d_y(&p.u_s, g.dy(), 1);
        let mut max_err = 0.0f64;
        for it in 0..g.n_t {
            for j in 0..g.n_y {
                let w1_check = uy_stencil[(it, j)] - p.u_s[(it, j)];
                max_err = max_err.max((w1_check - p.w1[(it, j)]).abs());
            }
        }
        assert!(max_err < 5e-3, "max_err = {max_err}");
    }

    #[test]
    fn generated_profile_margins_positive() {
        let g = shear_grid(24, 401, 0.5, 20.0);
        for beta in [0.5, 1.0, 5.0] {
            let p = ShearProfile::generate(
                &ShearInitSpec {
                    family: ShearFamily::GaussianDeficit { sigma: 1.0 },
                    beta,
                },
                &g,
            )
            .unwrap();
            let rep = check_monotonicity(&p);
            assert!(rep.min_u > 0.0, "beta={beta}: min_u = {}", rep.min_u);
            assert!(rep.min_u_y > 0.0, "beta={beta}: min_u_y = {}", rep.min_u_y);
            assert!(
                rep.min_margin > 0.0,
                "beta={beta}: min_margin = {}",
                rep.min_margin
            );
            assert_eq!(rep.saturated_nodes, 0);
            assert!(rep.wall_robin_residual < 1e-10);
        }
    }

    #[test]
    fn concave_family_stays_concave() {
        let g = shear_grid(24, 401, 0.5, 16.0);
        let p = ShearProfile::generate(
            &ShearInitSpec {
                family: ShearFamily::ExponentialDeficit,
                beta: 1.0,
            },
            &g,
        )
        .unwrap();
        let rep = check_monotonicity(&p);
        assert!(rep.max_u_yy <= 1e-8, "max_u_yy = {}", rep.max_u_yy);
        // concave data keeps the wall ratio nonpositive, margin >= beta
        assert!(rep.min_margin >= 1.0 - 1e-8);
    }

    #[test]
    fn wall_ratio_identities() {
        // alpha1 = d alpha/dy + alpha^2 and alpha2 = d alpha1/dy + alpha alpha1
        // trade a time derivative for two y derivatives, so they need data
        // without a diffusive corner layer: an odd w1_0 is wall-compatible to
        // every order. The identities then hold to stencil accuracy wherever
        // the slope is resolved.
        let g = shear_grid(33, 801, 0.4, 10.0);
        let w1: Vec<f64> = (0..g.n_y).map(|j| -g.y(j).tanh()).collect();
        let p = ShearProfile::generate(
            &ShearInitSpec {
                family: ShearFamily::Table { w1 },
                beta: 1.0,
            },
            &g,
        )
        .unwrap();
        let da = ty_d_y(&p.alpha, g.dy(), 1);
        let da1 = ty_d_y(&p.alpha1, g.dy(), 1);
        // skip the first time rows (one-sided t stencils); in y, stay where
        // the slope is resolved (the ratios amplify tail noise like y^4 dy^2)
        let mut e1 = 0.0f64;
        let mut e2 = 0.0f64;
        for it in 4..g.n_t - 4 {
            let row_max = (0..g.n_y).fold(0.0f64, |m, j| m.max(p.u_y[(it, j)]));
            for j in 0..g.n_y {
                if p.u_y[(it, j)] < 3e-3 * row_max {
                    continue;
                }
                let lhs1 = p.alpha1[(it, j)];
                let rhs1 = da[(it, j)] + p.alpha[(it, j)] * p.alpha[(it, j)];
                e1 = e1.max((lhs1 - rhs1).abs());
                let lhs2 = p.alpha2[(it, j)];
                let rhs2 = da1[(it, j)] + p.alpha[(it, j)] * p.alpha1[(it, j)];
                e2 = e2.max((lhs2 - rhs2).abs());
            }
        }
        assert!(e1 < 5e-2, "alpha1 identity residual {e1}");
        assert!(e2 < 0.2, "alpha2 identity residual {e2}");
    }

    #[test]
    fn window_relabels_time() {
        let g = shear_grid(21, 101, 0.5, 10.0);
        let p = ShearProfile::generate(
            &ShearInitSpec {
                family: ShearFamily::GaussianDeficit { sigma: 1.0 },
                beta: 1.0,
            },
            &g,
        )
        .unwrap();
        let w = p.window(4, 13).unwrap();
        assert_eq!(w.grid.n_t, 13);
        assert_relative_eq!(w.grid.dt(), g.dt(), max_relative = 1e-12);
        for j in 0..g.n_y {
            assert_eq!(w.u_s[(0, j)], p.u_s[(4, j)]);
            assert_eq!(w.u_s[(12, j)], p.u_s[(16, j)]);
        }
        // windowed data margin is strictly positive (wall ratio has relaxed)
        assert!(w.delta_s0 > 0.0);
    }

    #[test]
    fn kernel_zero_data() {
        let g = shear_grid(8, 51, 0.5, 6.0);
        let z = Array1::zeros(g.n_y);
        let w = heat_kernel_w1(&z, 0.0, 0.3, &g).unwrap();
        assert!(w.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn kernel_wall_value_vanishes() {
        let g = shear_grid(8, 101, 0.5, 10.0);
        let w1_0 = canonical_initial_w1(1.0, 1.0, &g);
        let w = heat_kernel_w1(&w1_0, -1.0, 0.25, &g).unwrap();
        assert!(w[0].abs() < 1e-12, "w(0) = {}", w[0]);
    }

    #[test]
    fn alpha_zero_fixed_point() {
        let g = shear_grid(12, 101, 0.3, 8.0);
        let a = solve_alpha_system(&Array1::zeros(g.n_y), 1.0, &g).unwrap();
        assert!(a.iter().all(|&v| v.abs() < 1e-13));
    }

    #[test]
    fn alpha_max_principle_quick() {
        let g = shear_grid(12, 201, 0.2, 10.0);
        let p = ShearProfile::generate(
            &ShearInitSpec {
                family: ShearFamily::GaussianDeficit { sigma: 1.0 },
                beta: 1.0,
            },
            &g,
        )
        .unwrap();
        let a0 = p.alpha.row(0).to_owned();
        let a = solve_alpha_system(&a0, 1.0, &g).unwrap();
        let bound = a0.iter().fold(0.0f64, |m, &v| m.max(v));
        let max_a = a.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        assert!(max_a <= bound + 1e-6, "max {max_a} vs bound {bound}");
    }

    #[test]
    fn compat_residuals_recorded() {
        let g = shear_grid(8, 201, 0.5, 10.0);
        let p = ShearProfile::generate(
            &ShearInitSpec {
                family: ShearFamily::GaussianDeficit { sigma: 1.0 },
                beta: 2.0,
            },
            &g,
        )
        .unwrap();
        assert_eq!(p.compat_residuals.len(), 3);
        // order 0 compatible, order 1 residual ~ 2 beta / sigma^2
        assert!(p.compat_residuals[0] < 1e-10);
        assert!((p.compat_residuals[1] - 4.0).abs() < 0.1);
    }

    #[test]
    fn solver_rejects_nonpositive_velocity() {
        let g = shear_grid(8, 101, 0.5, 8.0);
        let u0 = Array1::from_elem(g.n_y, -0.1);
        assert!(ShearProfile::solve_heat_robin_fd(&u0, 1.0, &g).is_err());
    }

    #[test]
    fn degenerate_profile_keeps_wall_residual() {
        // u == 1 solves the heat equation but not the wall law: the march
        // bends it; the t = 0 one-sided residual stays exactly beta
        let g = shear_grid(12, 201, 0.2, 10.0);
        let u0 = Array1::from_elem(g.n_y, 1.0);
        let u0y = profile_d_y(&u0, g.dy(), 1);
        let w1_0 = &u0y - &u0;
        assert_relative_eq!(w1_0[0].abs(), 1.0);
        let p = ShearProfile::solve_heat_robin_fd(&u0, 1.0, &g).unwrap();
        // after projection the wall node dips below 1
        assert!(p.u_s[(0, 0)] < 1.0);
    }
}
