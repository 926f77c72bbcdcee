//! Anisotropic weighted norm catalog. Tangential derivatives count at full
//! weight and wall-normal derivatives at half weight: the index set at level
//! k collects (k1, k2) with k1 + floor((k2+1)/2) <= k, and each tangential
//! order k1 expands into every mixed (j_t, j_x) with j_t + j_x = k1.

use crate::error::{Error, Result};
use crate::grid::{d_t, d_x, d_y, Field, FieldKind, GridSpec};
use ndarray::{Array1, Array2, Axis};
use std::collections::BTreeMap;

/// (k1, k2) pairs with k1 + floor((k2+1)/2) <= k. Equivalent cap: k2 <= 2(k-k1).
pub fn index_set(k: usize) -> Vec<(usize, usize)> {
    let mut set = Vec::new();
    for k1 in 0..=k {
        for k2 in 0..=2 * (k - k1) {
            set.push((k1, k2));
        }
    }
    set
}

/// Same set without the undifferentiated (0, 0) entry.
pub fn index_set_homogeneous(k: usize) -> Vec<(usize, usize)> {
    index_set(k).into_iter().filter(|&p| p != (0, 0)).collect()
}

/// Mixed tangential multi-indices (j_t, j_x) with j_t + j_x = k1.
pub fn tx_multi_indices(k1: usize) -> Vec<(usize, usize)> {
    (0..=k1).map(|jt| (jt, k1 - jt)).collect()
}

/// <y> = sqrt(1 + y^2) raised to ell.
pub fn weight(y: f64, ell: f64) -> f64 {
    (1.0 + y * y).powf(0.5 * ell)
}

/// Lazily built mixed derivatives of one field, keyed by (j_t, j_x, k_y).
/// Canonical build order: t-derivatives, then x, then y (odd y-order applies
/// the first-derivative stencil once, then second-derivative stencils).
pub struct DerivCache {
    map: BTreeMap<(usize, usize, usize), Field>,
}

impl DerivCache {
    pub fn new(f: &Field) -> Self {
        let mut map = BTreeMap::new();
        map.insert((0, 0, 0), f.clone());
        DerivCache { map }
    }

    pub fn get(&mut self, jt: usize, jx: usize, ky: usize) -> Result<&Field> {
        self.ensure(jt, jx, ky)?;
        Ok(self.map.get(&(jt, jx, ky)).expect("ensured"))
    }

    fn ensure(&mut self, jt: usize, jx: usize, ky: usize) -> Result<()> {
        if self.map.contains_key(&(jt, jx, ky)) {
            return Ok(());
        }
        let built = if ky >= 2 {
            self.ensure(jt, jx, ky - 2)?;
            d_y(&self.map[&(jt, jx, ky - 2)], 2)?
        } else if ky == 1 {
            self.ensure(jt, jx, 0)?;
            d_y(&self.map[&(jt, jx, 0)], 1)?
        } else if jx >= 1 {
            self.ensure(jt, jx - 1, 0)?;
            d_x(&self.map[&(jt, jx - 1, 0)])?
        } else {
            self.ensure(jt - 1, 0, 0)?;
            d_t(&self.map[&(jt - 1, 0, 0)])?
        };
        self.map.insert((jt, jx, ky), built);
        Ok(())
    }
}

/// Squared weighted L^2 over (t, x, y) with trapezoid in t and y, rectangle
/// in periodic x, optional exponential time damping exp(-2 lam t).
fn l2_sq_txy(f: &Field, ell: f64, lam: f64) -> f64 {
    let spec = &f.spec;
    let wt = spec.t_weights();
    let wy = spec.y_weights();
    let dx = spec.dx();
    let mut acc = 0.0;
    for it in 0..spec.n_t {
        let damp = (-2.0 * lam * spec.t(it)).exp();
        let mut slab = 0.0;
        for ix in 0..spec.n_x {
            for iy in 0..spec.n_y {
                let y = spec.y(iy);
                let v = f.values[(it, ix, iy)];
                slab += wy[iy] * (1.0 + y * y).powf(ell) * v * v;
            }
        }
        acc += wt[it] * damp * dx * slab;
    }
    acc
}

/// Squared weighted L^2 over (x, y) of one time slice.
fn l2_sq_xy_slice(f: &Field, ell: f64, it: usize) -> f64 {
    let spec = &f.spec;
    let wy = spec.y_weights();
    let dx = spec.dx();
    let mut acc = 0.0;
    for ix in 0..spec.n_x {
        for iy in 0..spec.n_y {
            let y = spec.y(iy);
            let v = f.values[(it, ix, iy)];
            acc += dx * wy[iy] * (1.0 + y * y).powf(ell) * v * v;
        }
    }
    acc
}

/// Squared L^2 over (t, x) of a trace field.
fn l2_sq_tx(f: &Field) -> f64 {
    let spec = &f.spec;
    let wt = spec.t_weights();
    let dx = spec.dx();
    let mut acc = 0.0;
    for it in 0..spec.n_t {
        for ix in 0..spec.n_x {
            let v = f.values[(it, ix, 0)];
            acc += wt[it] * dx * v * v;
        }
    }
    acc
}

/// Weighted L^2_{x,y} of one time slice (public: decay scans use it).
pub fn slice_l2_xy(f: &Field, ell: f64, it: usize) -> Result<f64> {
    if f.kind != FieldKind::Interior {
        return Err(Error::structural("slice_l2_xy needs an interior field"));
    }
    if it >= f.spec.n_t {
        return Err(Error::structural("slice_l2_xy: time index out of range"));
    }
    Ok(l2_sq_xy_slice(f, ell, it).sqrt())
}

fn require_interior(f: &Field, what: &str) -> Result<()> {
    if f.kind != FieldKind::Interior {
        return Err(Error::structural(format!("{what} needs an interior field")));
    }
    Ok(())
}

fn norm_a_over(f: &Field, set: &[(usize, usize)], ell: f64) -> Result<f64> {
    require_interior(f, "tangential-weighted norm")?;
    let mut cache = DerivCache::new(f);
    let mut sq = 0.0;
    for &(k1, k2) in set {
        for (jt, jx) in tx_multi_indices(k1) {
            let d = cache.get(jt, jx, k2)?;
            sq += l2_sq_txy(d, ell, 0.0);
        }
    }
    Ok(sq.sqrt())
}

/// Full anisotropic space-time norm at level k with weight ell.
pub fn norm_a(f: &Field, k: usize, ell: f64) -> Result<f64> {
    norm_a_over(f, &index_set(k), ell)
}

/// Homogeneous variant: drops the undifferentiated term.
pub fn norm_a_homogeneous(f: &Field, k: usize, ell: f64) -> Result<f64> {
    norm_a_over(f, &index_set_homogeneous(k), ell)
}

/// Time-slice variant: the same derivative family, integrated over (x, y)
/// at one time node.
pub fn norm_a_slice(f: &Field, k: usize, ell: f64, it: usize) -> Result<f64> {
    require_interior(f, "slice norm")?;
    if it >= f.spec.n_t {
        return Err(Error::structural("norm_a_slice: time index out of range"));
    }
    let mut cache = DerivCache::new(f);
    let mut sq = 0.0;
    for (k1, k2) in index_set(k) {
        for (jt, jx) in tx_multi_indices(k1) {
            let d = cache.get(jt, jx, k2)?;
            sq += l2_sq_xy_slice(d, ell, it);
        }
    }
    Ok(sq.sqrt())
}

/// Boundary norm: tangential derivatives up to k of a trace, in L^2_{t,x}.
pub fn norm_boundary_a(f: &Field, k: usize) -> Result<f64> {
    if f.kind != FieldKind::Trace {
        return Err(Error::structural("boundary norm needs a trace field"));
    }
    let mut cache = DerivCache::new(f);
    let mut sq = 0.0;
    for m in 0..=k {
        for (jt, jx) in tx_multi_indices(m) {
            let d = cache.get(jt, jx, 0)?;
            sq += l2_sq_tx(d);
        }
    }
    Ok(sq.sqrt())
}

/// Rectangle-index family: tangential orders m <= k1 against wall-normal
/// orders q <= k2, with weight ell and time damping lam.
pub fn norm_b(f: &Field, lam: f64, ell: f64, k1: usize, k2: usize) -> Result<f64> {
    require_interior(f, "rectangle-index norm")?;
    let mut cache = DerivCache::new(f);
    let mut sq = 0.0;
    for m in 0..=k1 {
        for (jt, jx) in tx_multi_indices(m) {
            for q in 0..=k2 {
                let d = cache.get(jt, jx, q)?;
                sq += l2_sq_txy(d, ell, lam);
            }
        }
    }
    Ok(sq.sqrt())
}

/// Sup-in-time variant of the rectangle family: each summand takes the
/// supremum over time slices of the damped L^2_{x,y} norm.
pub fn norm_b_sup_t(f: &Field, lam: f64, ell: f64, k1: usize, k2: usize) -> Result<f64> {
    require_interior(f, "rectangle-index sup norm")?;
    let mut cache = DerivCache::new(f);
    let mut sq = 0.0;
    for m in 0..=k1 {
        for (jt, jx) in tx_multi_indices(m) {
            for q in 0..=k2 {
                let d = cache.get(jt, jx, q)?;
                let mut sup = 0.0f64;
                for it in 0..f.spec.n_t {
                    let damp = (-lam * f.spec.t(it)).exp();
                    sup = sup.max(damp * l2_sq_xy_slice(d, ell, it).sqrt());
                }
                sq += sup * sup;
            }
        }
    }
    Ok(sq.sqrt())
}

/// Sup-over-(t,x) family: sum (not root-sum-square) over the index set of
/// L^2_y norms of the weighted pointwise sup in (t, x).
pub fn norm_c(f: &Field, k: usize, ell: f64, homogeneous: bool) -> Result<f64> {
    require_interior(f, "sup-tangential norm")?;
    let set = if homogeneous {
        index_set_homogeneous(k)
    } else {
        index_set(k)
    };
    let mut cache = DerivCache::new(f);
    let wy = f.spec.y_weights();
    let mut total = 0.0;
    for (k1, k2) in set {
        for (jt, jx) in tx_multi_indices(k1) {
            let d = cache.get(jt, jx, k2)?;
            let mut term_sq = 0.0;
            for iy in 0..f.spec.n_y {
                let sup = d
                    .values
                    .index_axis(Axis(2), iy)
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                let y = f.spec.y(iy);
                term_sq += wy[iy] * (1.0 + y * y).powf(ell) * sup * sup;
            }
            total += term_sq.sqrt();
        }
    }
    Ok(total)
}

/// Sup-in-y family: sum over the index set of the weighted sup over y of
/// L^2_{t,x} norms.
pub fn norm_d(f: &Field, k: usize, ell: f64) -> Result<f64> {
    require_interior(f, "sup-normal norm")?;
    let mut cache = DerivCache::new(f);
    let wt = f.spec.t_weights();
    let dx = f.spec.dx();
    let mut total = 0.0;
    for (k1, k2) in index_set(k) {
        for (jt, jx) in tx_multi_indices(k1) {
            let d = cache.get(jt, jx, k2)?;
            let mut sup = 0.0f64;
            for iy in 0..f.spec.n_y {
                let mut sq = 0.0;
                for it in 0..f.spec.n_t {
                    for ix in 0..f.spec.n_x {
                        let v = d.values[(it, ix, iy)];
                        sq += wt[it] * dx * v * v;
                    }
                }
                let y = f.spec.y(iy);
                sup = sup.max(weight(y, ell) * sq.sqrt());
            }
            total += sup;
        }
    }
    Ok(total)
}

/// Dispatcher over the mixed-norm families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MixedNorm {
    /// Sup over (t, x), L^2 in y; `homogeneous` drops the (0,0) term.
    SupTangential { k: usize, ell: f64, homogeneous: bool },
    /// Sup over y, L^2 over (t, x).
    SupNormal { k: usize, ell: f64 },
    /// Rectangle index family with damping.
    Rectangle { lam: f64, ell: f64, k1: usize, k2: usize },
    /// Rectangle family, sup over time slices.
    RectangleSupT { lam: f64, ell: f64, k1: usize, k2: usize },
}

pub fn norm_mixed(f: &Field, which: MixedNorm) -> Result<f64> {
    match which {
        MixedNorm::SupTangential { k, ell, homogeneous } => norm_c(f, k, ell, homogeneous),
        MixedNorm::SupNormal { k, ell } => norm_d(f, k, ell),
        MixedNorm::Rectangle { lam, ell, k1, k2 } => norm_b(f, lam, ell, k1, k2),
        MixedNorm::RectangleSupT { lam, ell, k1, k2 } => norm_b_sup_t(f, lam, ell, k1, k2),
    }
}

/// Data-slice norm at t = 0: tangential index runs over x only.
pub fn norm_a_data_xy(vals: &Array2<f64>, spec: &GridSpec, k: usize, ell: f64) -> Result<f64> {
    if vals.dim() != (spec.n_x, spec.n_y) {
        return Err(Error::structural(format!(
            "data norm: shape {:?} does not match (n_x, n_y) = ({}, {})",
            vals.dim(),
            spec.n_x,
            spec.n_y
        )));
    }
    let mut cache: BTreeMap<(usize, usize), Array2<f64>> = BTreeMap::new();
    cache.insert((0, 0), vals.clone());
    let wy = spec.y_weights();
    let dx = spec.dx();
    let mut sq = 0.0;
    for (k1, k2) in index_set(k) {
        ensure_xy(&mut cache, spec, k1, k2)?;
        let d = &cache[&(k1, k2)];
        for ix in 0..spec.n_x {
            for iy in 0..spec.n_y {
                let y = spec.y(iy);
                let v = d[(ix, iy)];
                sq += dx * wy[iy] * (1.0 + y * y).powf(ell) * v * v;
            }
        }
    }
    Ok(sq.sqrt())
}

fn ensure_xy(
    cache: &mut BTreeMap<(usize, usize), Array2<f64>>,
    spec: &GridSpec,
    kx: usize,
    ky: usize,
) -> Result<()> {
    if cache.contains_key(&(kx, ky)) {
        return Ok(());
    }
    let built = if ky >= 2 {
        ensure_xy(cache, spec, kx, ky - 2)?;
        xy_d_y(&cache[&(kx, ky - 2)], spec.dy(), 2)
    } else if ky == 1 {
        ensure_xy(cache, spec, kx, 0)?;
        xy_d_y(&cache[&(kx, 0)], spec.dy(), 1)
    } else {
        ensure_xy(cache, spec, kx - 1, 0)?;
        xy_d_x(&cache[&(kx - 1, 0)], spec.dx())
    };
    cache.insert((kx, ky), built);
    Ok(())
}

fn xy_d_x(vals: &Array2<f64>, dx: f64) -> Array2<f64> {
    let (n_x, n_y) = vals.dim();
    let mut out = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        let ip = (ix + 1) % n_x;
        let im = (ix + n_x - 1) % n_x;
        for iy in 0..n_y {
            out[(ix, iy)] = (vals[(ip, iy)] - vals[(im, iy)]) / (2.0 * dx);
        }
    }
    out
}

fn xy_d_y(vals: &Array2<f64>, dy: f64, order: usize) -> Array2<f64> {
    let (n_x, n_y) = vals.dim();
    let mut out = Array2::zeros((n_x, n_y));
    for ix in 0..n_x {
        match order {
            1 => {
                out[(ix, 0)] =
                    (-3.0 * vals[(ix, 0)] + 4.0 * vals[(ix, 1)] - vals[(ix, 2)]) / (2.0 * dy);
                for iy in 1..n_y - 1 {
                    out[(ix, iy)] = (vals[(ix, iy + 1)] - vals[(ix, iy - 1)]) / (2.0 * dy);
                }
                out[(ix, n_y - 1)] = (3.0 * vals[(ix, n_y - 1)] - 4.0 * vals[(ix, n_y - 2)]
                    + vals[(ix, n_y - 3)])
                    / (2.0 * dy);
            }
            _ => {
                let h2 = dy * dy;
                out[(ix, 0)] = (2.0 * vals[(ix, 0)] - 5.0 * vals[(ix, 1)] + 4.0 * vals[(ix, 2)]
                    - vals[(ix, 3)])
                    / h2;
                for iy in 1..n_y - 1 {
                    out[(ix, iy)] =
                        (vals[(ix, iy + 1)] - 2.0 * vals[(ix, iy)] + vals[(ix, iy - 1)]) / h2;
                }
                out[(ix, n_y - 1)] = (2.0 * vals[(ix, n_y - 1)] - 5.0 * vals[(ix, n_y - 2)]
                    + 4.0 * vals[(ix, n_y - 3)]
                    - vals[(ix, n_y - 4)])
                    / h2;
            }
        }
    }
    out
}

/// Boundary data norm at t = 0: x-derivatives only.
pub fn norm_boundary_a_data_x(vals: &Array1<f64>, spec: &GridSpec, k: usize) -> Result<f64> {
    if vals.len() != spec.n_x {
        return Err(Error::structural(
            "boundary data norm: length does not match n_x",
        ));
    }
    let dx = spec.dx();
    let mut cur = vals.clone();
    let mut sq = 0.0;
    for m in 0..=k {
        if m > 0 {
            let mut next = Array1::zeros(spec.n_x);
            for ix in 0..spec.n_x {
                let ip = (ix + 1) % spec.n_x;
                let im = (ix + spec.n_x - 1) % spec.n_x;
                next[ix] = (cur[ip] - cur[im]) / (2.0 * dx);
            }
            cur = next;
        }
        sq += cur.iter().map(|v| dx * v * v).sum::<f64>();
    }
    Ok(sq.sqrt())
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e12 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Keyed norm values for JSON reports. Keys are stable strings like
/// "A:k=1,l=1" so downstream tooling can diff runs.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct NormReport(pub BTreeMap<String, f64>);

impl NormReport {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn put_a(&mut self, k: usize, ell: f64, v: f64) {
        self.0.insert(format!("A:k={k},l={}", fmt_num(ell)), v);
    }
    pub fn put_a_homogeneous(&mut self, k: usize, ell: f64, v: f64) {
        self.0.insert(format!("Ah:k={k},l={}", fmt_num(ell)), v);
    }
    pub fn put_boundary_a(&mut self, k: usize, v: f64) {
        self.0.insert(format!("Ab:k={k}"), v);
    }
    pub fn put_b(&mut self, lam: f64, ell: f64, k1: usize, k2: usize, v: f64) {
        self.0.insert(
            format!("B:lam={},l={},k1={k1},k2={k2}", fmt_num(lam), fmt_num(ell)),
            v,
        );
    }
    pub fn put_b_sup(&mut self, lam: f64, ell: f64, k1: usize, k2: usize, v: f64) {
        self.0.insert(
            format!("Bs:lam={},l={},k1={k1},k2={k2}", fmt_num(lam), fmt_num(ell)),
            v,
        );
    }
    pub fn put_c(&mut self, k: usize, ell: f64, v: f64) {
        self.0.insert(format!("C:k={k},l={}", fmt_num(ell)), v);
    }
    pub fn put_d(&mut self, k: usize, ell: f64, v: f64) {
        self.0.insert(format!("D:k={k},l={}", fmt_num(ell)), v);
    }
    pub fn put_raw(&mut self, key: &str, v: f64) {
        self.0.insert(key.to_string(), v);
    }
    pub fn get(&self, key: &str) -> Option<f64> {
        self.0.get(key).copied()
    }
}

/// Catalog of the standard norms of one field, at levels 0..=k_max.
pub fn norm_report(f: &Field, k_max: usize, ell: f64) -> Result<NormReport> {
    let mut report = NormReport::new();
    for k in 0..=k_max {
        report.put_a(k, ell, norm_a(f, k, ell)?);
        report.put_a_homogeneous(k, ell, norm_a_homogeneous(f, k, ell)?);
        report.put_c(k, ell, norm_c(f, k, ell, false)?);
        report.put_d(k, ell, norm_d(f, k, ell)?);
        report.put_b(0.0, ell, k, k, norm_b(f, 0.0, ell, k, k)?);
    }
    let tr = f.trace()?;
    for k in 0..=k_max {
        report.put_boundary_a(k, norm_boundary_a(&tr, k)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use approx::assert_relative_eq;

    #[test]
    fn index_set_level_zero_and_one() {
        assert_eq!(index_set(0), vec![(0, 0)]);
        assert_eq!(index_set(1), vec![(0, 0), (0, 1), (0, 2), (1, 0)]);
        assert_eq!(index_set_homogeneous(1), vec![(0, 1), (0, 2), (1, 0)]);
    }

    #[test]
    fn index_set_level_two_members() {
        let s = index_set(2);
        assert_eq!(s.len(), 9);
        for p in [(0, 4), (1, 2), (2, 0), (0, 3), (1, 1)] {
            assert!(s.contains(&p), "{p:?} missing");
        }
        for p in [(1, 3), (2, 1), (0, 5)] {
            assert!(!s.contains(&p), "{p:?} should be excluded");
        }
    }

    #[test]
    fn index_sets_nest() {
        for k in 0..4 {
            let a = index_set(k);
            let b = index_set(k + 1);
            assert!(a.iter().all(|p| b.contains(p)));
        }
    }

    #[test]
    fn tx_expansion() {
        assert_eq!(tx_multi_indices(0), vec![(0, 0)]);
        assert_eq!(tx_multi_indices(2), vec![(0, 2), (1, 1), (2, 0)]);
    }

    fn norm_spec() -> GridSpec {
        GridSpec::new(9, 16, 801, 0.5, 2.0, 20.0).unwrap()
    }

    #[test]
    fn base_norm_matches_arctan_profile() {
        // u = (1+y^2)^{-1}: weighted square integrand collapses to (1+y^2)^{-1},
        // whose integral over [0, 20] is atan(20)
        let g = norm_spec();
        let u = Field::from_fn(&g, |_, _, y| 1.0 / (1.0 + y * y));
        let v = norm_a(&u, 0, 1.0).unwrap();
        let exact = (0.5 * 2.0 * 20.0f64.atan()).sqrt();
        assert_relative_eq!(v, exact, max_relative = 5e-3);
    }

    #[test]
    fn base_norm_equals_rectangle_family_at_origin() {
        let g = GridSpec::new(8, 8, 33, 0.5, 2.0, 4.0).unwrap();
        let u = Field::from_fn(&g, |t, x, y| (t + x) * (-y).exp());
        let a = norm_a(&u, 0, 1.0).unwrap();
        let b = norm_b(&u, 0.0, 1.0, 0, 0).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn homogeneity_is_exact() {
        let g = GridSpec::new(8, 8, 33, 0.5, 2.0, 4.0).unwrap();
        let u = Field::from_fn(&g, |t, x, y| (t * x + 1.0) * (-y).exp());
        let c = -2.5;
        for k in 0..=2 {
            let n1 = norm_a(&u.scaled(c), k, 1.0).unwrap();
            let n2 = c.abs() * norm_a(&u, k, 1.0).unwrap();
            assert_relative_eq!(n1, n2, max_relative = 1e-13);
        }
    }

    #[test]
    fn boundary_norm_of_sine() {
        let g = GridSpec::new(33, 64, 8, 0.5, 2.0, 4.0).unwrap();
        let kx = 2.0 * std::f64::consts::PI / g.x_len;
        let tr = Field::trace_from_fn(&g, |_, x| (kx * x).sin());
        let a0 = norm_boundary_a(&tr, 0).unwrap();
        // L2 of sine over a period is sqrt(L/2); the time integral adds sqrt(T)
        assert_relative_eq!(a0, (g.t_max * g.x_len / 2.0).sqrt(), max_relative = 1e-12);
        let a1 = norm_boundary_a(&tr, 1).unwrap();
        // adds the x-derivative at the discrete wavenumber sin(kx dx)/dx
        let kd = (kx * g.dx()).sin() / g.dx();
        let expected = a0 * (1.0 + kd * kd).sqrt();
        assert_relative_eq!(a1, expected, max_relative = 1e-12);
        assert!((kd - kx).abs() / kx < 2e-3);
    }

    #[test]
    fn damped_norm_decreases_in_lambda() {
        let g = GridSpec::new(8, 8, 33, 0.5, 2.0, 4.0).unwrap();
        let u = Field::from_fn(&g, |t, _, y| (1.0 + t) * (-y).exp());
        let b0 = norm_b(&u, 0.0, 1.0, 1, 1).unwrap();
        let b1 = norm_b(&u, 1.0, 1.0, 1, 1).unwrap();
        let b2 = norm_b(&u, 2.0, 1.0, 1, 1).unwrap();
        assert!(b0 > b1 && b1 > b2);
    }

    #[test]
    fn sup_t_variant_dominates_each_slice() {
        let g = GridSpec::new(8, 8, 33, 0.5, 2.0, 4.0).unwrap();
        let u = Field::from_fn(&g, |t, x, y| (1.0 + t * t + x) * (-y).exp());
        let sup = norm_b_sup_t(&u, 0.0, 1.0, 0, 0).unwrap();
        for it in 0..g.n_t {
            let s = slice_l2_xy(&u, 1.0, it).unwrap();
            assert!(sup >= s - 1e-13);
        }
    }

    #[test]
    fn sup_families_on_separable_field() {
        // u = sin(2 pi x / L) e^{-y}: sup_(t,x)|u| = e^{-y}, L2_{t,x} peak at y=0
        let g = GridSpec::new(17, 64, 401, 0.5, 2.0, 8.0).unwrap();
        let kx = 2.0 * std::f64::consts::PI / g.x_len;
        let u = Field::from_fn(&g, |_, x, y| (kx * x).sin() * (-y).exp());
        let c = norm_c(&u, 0, 0.0, false).unwrap();
        let exact_c = (0.5f64 * (1.0 - (-16.0f64).exp())).sqrt();
        assert_relative_eq!(c, exact_c, max_relative = 5e-3);
        let d = norm_d(&u, 0, 0.0).unwrap();
        let exact_d = (g.t_max * g.x_len / 2.0).sqrt();
        assert_relative_eq!(d, exact_d, max_relative = 1e-6);
    }

    #[test]
    fn slice_norm_of_static_field_is_time_free() {
        let g = GridSpec::new(8, 16, 101, 0.5, 2.0, 6.0).unwrap();
        let u = Field::from_fn(&g, |_, x, y| (1.0 + (2.0 * x).cos()) * (-y).exp());
        let s0 = norm_a_slice(&u, 1, 1.0, 0).unwrap();
        let s5 = norm_a_slice(&u, 1, 1.0, 5).unwrap();
        assert_relative_eq!(s0, s5, max_relative = 1e-12);
    }

    #[test]
    fn data_norm_matches_slice_norm_for_static_field() {
        // for a t-independent field, t-derivatives vanish, so the slice norm
        // equals the x-only data norm
        let g = GridSpec::new(8, 16, 101, 0.5, 2.0, 6.0).unwrap();
        let u = Field::from_fn(&g, |_, x, y| (1.0 + (2.0 * x).cos()) * (-y).exp());
        let s = norm_a_slice(&u, 2, 1.0, 3).unwrap();
        let d = norm_a_data_xy(&u.slice_xy(3), &g, 2, 1.0).unwrap();
        assert_relative_eq!(s, d, max_relative = 1e-10);
    }

    #[test]
    fn norm_grows_with_k() {
        let g = GridSpec::new(9, 16, 65, 0.5, 2.0, 6.0).unwrap();
        let u = Field::from_fn(&g, |t, x, y| (1.0 + t + (3.0 * x).sin()) * (-y).exp());
        let n0 = norm_a(&u, 0, 1.0).unwrap();
        let n1 = norm_a(&u, 1, 1.0).unwrap();
        let n2 = norm_a(&u, 2, 1.0).unwrap();
        assert!(n0 < n1 && n1 < n2);
    }

    #[test]
    fn weight_monotone_for_shifted_support() {
        // support on y >= 1 means a larger ell strictly increases the norm
        let g = GridSpec::new(8, 8, 101, 0.5, 2.0, 8.0).unwrap();
        let bump = |y: f64| {
            if y > 1.0 {
                (y - 1.0) * (-(y - 1.0)).exp()
            } else {
                0.0
            }
        };
        let u = Field::from_fn(&g, |_, _, y| bump(y));
        let n0 = norm_a(&u, 0, 0.0).unwrap();
        let n1 = norm_a(&u, 0, 1.0).unwrap();
        let n2 = norm_a(&u, 0, 2.0).unwrap();
        assert!(n0 < n1 && n1 < n2);
    }

    #[test]
    fn report_keys_are_stable() {
        let g = GridSpec::new(8, 8, 33, 0.5, 2.0, 4.0).unwrap();
        let u = Field::from_fn(&g, |t, x, y| (t + (x).sin()) * (-y).exp());
        let rep = norm_report(&u, 1, 1.0).unwrap();
        for key in ["A:k=0,l=1", "A:k=1,l=1", "Ab:k=1", "C:k=0,l=1", "D:k=1,l=1"] {
            assert!(rep.get(key).is_some(), "missing {key}");
        }
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"A:k=0,l=1\""));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn triangle_inequality(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let g = GridSpec::new(6, 6, 24, 0.5, 2.0, 4.0).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut mk = || {
                let a: f64 = rng.gen_range(-1.0..1.0);
                let b: f64 = rng.gen_range(0.5..2.0);
                let c: f64 = rng.gen_range(-1.0..1.0);
                Field::from_fn(&g, move |t, x, y| (a + t * c + (b * x).sin()) * (-b * y).exp())
            };
            let u = mk();
            let v = mk();
            let sum = u.add(&v).unwrap();
            for k in 0..=1usize {
                let lhs = norm_a(&sum, k, 1.0).unwrap();
                let rhs = norm_a(&u, k, 1.0).unwrap() + norm_a(&v, k, 1.0).unwrap();
                proptest::prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs));
            }
        }

        #[test]
        fn zero_field_has_zero_norms(k in 0usize..3) {
            let g = GridSpec::new(6, 6, 24, 0.5, 2.0, 4.0).unwrap();
            let z = Field::zeros(&g, FieldKind::Interior);
            proptest::prop_assert_eq!(norm_a(&z, k, 1.0).unwrap(), 0.0);
            proptest::prop_assert_eq!(norm_c(&z, k, 1.0, false).unwrap(), 0.0);
            proptest::prop_assert_eq!(norm_d(&z, k, 1.0).unwrap(), 0.0);
        }
    }
}
