//! Background-size diagnostics: the scalar catalog that measures how far a
//! background sits from pure shear, how large its coefficient fields are,
//! and how those sizes accumulate over derivative budgets.
//!
//! Interior entries combine rectangle-family norms of (u - u_s), u_x, the
//! curvature-ratio difference and the slope transporter with mixed-norm
//! sums over the shear, the normal velocity, and the shear curvature ratio.
//! Boundary entries collect wall traces. Totals accumulate both along the
//! parabolic index rule.
//!
//! The shear summand at derivative order (0,0) uses the raw profile, which
//! does not decay in y; on a finite grid it contributes about sqrt(Y_max).
//! A deficit-substituted variant (profile minus its far-field limit) is
//! reported alongside under `notes` for comparison.

use crate::error::{Error, Result};
use crate::grid::{d_t, d_x, Field};
use crate::linearized::BackgroundState;
use crate::norms::{index_set, norm_b, norm_boundary_a, tx_multi_indices, weight, DerivCache};
use crate::shear::{profile_d_y, ty_d_t, ShearProfile};
use ndarray::{Array1, Array2, Axis};
use std::collections::BTreeMap;

#[derive(Debug, Clone, serde::Serialize)]
pub struct LambdaReport {
    pub k_max: usize,
    pub ell: f64,
    /// "k1=_,k2=_" -> interior entry
    pub interior: BTreeMap<String, f64>,
    /// "k1=_" -> boundary entry
    pub boundary: BTreeMap<String, f64>,
    /// "k=_" -> accumulated total
    pub total: BTreeMap<String, f64>,
    /// individual summands of the lowest entry plus shear-term variants
    pub notes: BTreeMap<String, f64>,
}

impl LambdaReport {
    pub fn interior_at(&self, k1: usize, k2: usize) -> Option<f64> {
        self.interior.get(&format!("k1={k1},k2={k2}")).copied()
    }
    pub fn boundary_at(&self, k1: usize) -> Option<f64> {
        self.boundary.get(&format!("k1={k1}")).copied()
    }
    pub fn total_at(&self, k: usize) -> Option<f64> {
        self.total.get(&format!("k={k}")).copied()
    }
}

/// Single-term sup-tangential norm: weighted L^2_y of sup over (t, x).
fn l2y_sup_tx(d: &Field, ell: f64) -> f64 {
    let wy = d.spec.y_weights();
    let mut sq = 0.0;
    for iy in 0..d.spec.n_y {
        let sup = d
            .values
            .index_axis(Axis(2), iy)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let w = weight(d.spec.y(iy), ell);
        sq += wy[iy] * w * w * sup * sup;
    }
    sq.sqrt()
}

/// Single-term sup-normal norm: sup over y of the weighted L^2_{t,x}.
fn supy_l2_tx(d: &Field, ell: f64) -> f64 {
    let wt = d.spec.t_weights();
    let dx = d.spec.dx();
    let mut sup = 0.0f64;
    for iy in 0..d.spec.n_y {
        let mut sq = 0.0;
        for it in 0..d.spec.n_t {
            for ix in 0..d.spec.n_x {
                let v = d.values[(it, ix, iy)];
                sq += wt[it] * dx * v * v;
            }
        }
        sup = sup.max(weight(d.spec.y(iy), ell) * sq.sqrt());
    }
    sup
}

/// L^2_y of sup over t of a (t, y) table.
fn l2y_supt_data(arr: &Array2<f64>, grid: &crate::grid::GridSpec) -> f64 {
    let wy = grid.y_weights();
    let mut sq = 0.0;
    for iy in 0..grid.n_y {
        let sup = arr
            .index_axis(Axis(1), iy)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        sq += wy[iy] * sup * sup;
    }
    sq.sqrt()
}

/// d/dt^m d/dy^q of the shear profile as a (t, y) table. q = 1, 2 use the
/// structural derivatives; higher orders stack second-difference stencils.
fn shear_derivative(shear: &ShearProfile, m: usize, q: usize) -> Array2<f64> {
    let dy = shear.grid.dy();
    let mut base = match q {
        0 => shear.u_s.clone(),
        1 => shear.u_y.clone(),
        2 => shear.u_yy.clone(),
        _ => {
            let mut cur = shear.u_yy.clone();
            let mut left = q - 2;
            while left >= 2 {
                cur = crate::shear::ty_d_y(&cur, dy, 2);
                left -= 2;
            }
            if left == 1 {
                cur = crate::shear::ty_d_y(&cur, dy, 1);
            }
            cur
        }
    };
    for _ in 0..m {
        base = ty_d_t(&base, shear.grid.dt());
    }
    base
}

/// Max over t of |trace value| for the m-th time derivative of the shear
/// wall value.
fn shear_wall_sup(shear: &ShearProfile, m: usize) -> f64 {
    let tab = shear_derivative(shear, m, 0);
    tab.index_axis(Axis(1), 0)
        .iter()
        .fold(0.0f64, |mx, v| mx.max(v.abs()))
}

/// Sum over mixed tangential multi-indices of order m of grid maxima of a
/// trace field's derivatives.
fn trace_sup_sum(trace: &Field, m: usize) -> Result<f64> {
    let mut total = 0.0;
    for (jt, jx) in tx_multi_indices(m) {
        let mut d = trace.clone();
        for _ in 0..jt {
            d = d_t(&d)?;
        }
        for _ in 0..jx {
            d = d_x(&d)?;
        }
        total += d.max_abs();
    }
    Ok(total)
}

/// Evaluates the catalog on a background and its shear part up to budget k.
pub fn lambda_diagnostics(
    bg: &BackgroundState,
    shear: &ShearProfile,
    k: usize,
    ell: f64,
) -> Result<LambdaReport> {
    let spec = &bg.spec;
    if shear.grid.n_t != spec.n_t || shear.grid.n_y != spec.n_y {
        return Err(Error::structural(
            "shear profile and background grids differ",
        ));
    }
    let us_field = Field::from_ty(spec, &shear.u_s)?;
    let diff = bg.u_tilde.sub(&us_field)?;
    let ux = d_x(&bg.u_tilde)?;
    let eta_diff = bg.eta.sub(&bg.eta_bar)?;

    let mut interior = BTreeMap::new();
    let mut notes = BTreeMap::new();

    // shear deficit variant of the (m, q) = (0, 0) term
    let us_00_literal = l2y_supt_data(&shear.u_s, &shear.grid);
    let us_00_deficit = l2y_supt_data(&shear.u_def, &shear.grid);
    notes.insert("us_term_00_literal".into(), us_00_literal);
    notes.insert("us_term_00_deficit".into(), us_00_deficit);

    let mut v_cache = DerivCache::new(&bg.v_tilde);
    let mut etabar_cache = DerivCache::new(&bg.eta_bar);

    for (k1, k2) in index_set(k) {
        let mut val = norm_b(&diff, 0.0, 0.0, k1, k2)?;
        let b_diff = val;
        val += norm_b(&ux, 0.0, 0.0, k1, k2)?;
        if (k1, k2) == (0, 0) {
            let v_term = supy_l2_tx(&bg.v_tilde, 0.0);
            let etabar_term = l2y_sup_tx(&bg.eta_bar, 0.0);
            notes.insert("L00:diff".into(), b_diff);
            notes.insert("L00:v".into(), v_term);
            notes.insert("L00:etabar".into(), etabar_term);
            val += v_term + etabar_term;
        } else {
            for m in 0..=k1 {
                for q in 0..=k2 {
                    val += l2y_supt_data(&shear_derivative(shear, m, q), &shear.grid);
                    for (jt, jx) in tx_multi_indices(m) {
                        val += supy_l2_tx(v_cache.get(jt, jx, q)?, 0.0);
                        val += l2y_sup_tx(etabar_cache.get(jt, jx, q)?, 0.0);
                    }
                }
            }
        }
        let ed = norm_b(&eta_diff, 0.0, 0.0, k1, k2)?;
        let zt = norm_b(&bg.zeta, 0.0, ell, k1, k2)?;
        if (k1, k2) == (0, 0) {
            notes.insert("L00:etadiff".into(), ed);
            notes.insert("L00:zeta".into(), zt);
        }
        val += ed + zt;
        interior.insert(format!("k1={k1},k2={k2}"), val);
    }

    let diff_trace = diff.trace()?;
    let uxt = ux.trace()?;
    let eta_diff_trace = eta_diff.trace()?;
    let mut boundary = BTreeMap::new();
    for k1 in 0..=k {
        let mut val = norm_boundary_a(&diff_trace, k1)?;
        val += norm_boundary_a(&uxt, k1)?;
        for m in 0..=k1 {
            val += shear_wall_sup(shear, m);
            val += trace_sup_sum(&bg.zeta1_tilde, m)?;
            val += trace_sup_sum(&bg.eta_bar.trace()?, m)?;
        }
        val += norm_boundary_a(&bg.zeta2_tilde, k1)?;
        val += norm_boundary_a(&eta_diff_trace, k1)?;
        boundary.insert(format!("k1={k1}"), val);
    }

    let mut total = BTreeMap::new();
    for kk in 0..=k {
        let mut sum = 0.0;
        for (k1, k2) in index_set(kk) {
            sum += interior[&format!("k1={k1},k2={k2}")];
        }
        for k1 in 0..=kk {
            sum += boundary[&format!("k1={k1}")];
        }
        total.insert(format!("k={kk}"), sum);
    }

    Ok(LambdaReport {
        k_max: k,
        ell,
        interior,
        boundary,
        total,
        notes,
    })
}

/// Squared-deficit wall margin of a profile: min over the wall of
/// beta - curvature ratio, the quantity the wall law divides by.
pub fn wall_margin_profile(shear: &ShearProfile) -> f64 {
    let mut min = f64::INFINITY;
    for it in 0..shear.grid.n_t {
        min = min.min(shear.beta - shear.alpha[(it, 0)]);
    }
    min
}

/// Wall-compatibility residuals of tabulated initial data under repeated
/// even reflection: |d^{2j}/dy^{2j} g(0)| for j = 0, 1, 2.
pub fn wall_compat_residuals(g: &Array1<f64>, dy: f64) -> Vec<f64> {
    let d2 = profile_d_y(g, dy, 2);
    let d4 = profile_d_y(&d2, dy, 2);
    vec![g[0].abs(), d2[0].abs(), d4[0].abs()]
}
