//! Tensor grid on [0,T] x [0,L_x) x [0,Y_max], second-order stencils, and
//! trapezoid quadrature. The x direction is periodic; t and y use one-sided
//! closures at the ends. All fields are stored (t, x, y) row-major.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayViewMut1, Axis, Zip};

/// Grid geometry. dt = t_max/(n_t-1), dy = y_max/(n_y-1); the x step is
/// x_len/n_x because the last node wraps to the first (periodic).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub n_t: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub t_max: f64,
    pub x_len: f64,
    pub y_max: f64,
}

impl GridSpec {
    pub fn new(
        n_t: usize,
        n_x: usize,
        n_y: usize,
        t_max: f64,
        x_len: f64,
        y_max: f64,
    ) -> Result<Self> {
        for (name, n) in [("n_t", n_t), ("n_x", n_x), ("n_y", n_y)] {
            if n < 4 {
                return Err(Error::structural(format!(
                    "{name} = {n} but stencils need at least 4 nodes per axis"
                )));
            }
        }
        for (name, v) in [("t_max", t_max), ("x_len", x_len), ("y_max", y_max)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::structural(format!("{name} = {v} must be positive")));
            }
        }
        Ok(GridSpec {
            n_t,
            n_x,
            n_y,
            t_max,
            x_len,
            y_max,
        })
    }

    pub fn dt(&self) -> f64 {
        self.t_max / (self.n_t - 1) as f64
    }
    pub fn dx(&self) -> f64 {
        self.x_len / self.n_x as f64
    }
    pub fn dy(&self) -> f64 {
        self.y_max / (self.n_y - 1) as f64
    }
    pub fn t(&self, i: usize) -> f64 {
        self.dt() * i as f64
    }
    pub fn x(&self, i: usize) -> f64 {
        self.dx() * i as f64
    }
    pub fn y(&self, j: usize) -> f64 {
        self.dy() * j as f64
    }

    /// Trapezoid weights along y (dy/2 at the ends).
    pub fn y_weights(&self) -> Array1<f64> {
        trapezoid_weights(self.n_y, self.dy())
    }

    /// Trapezoid weights along t.
    pub fn t_weights(&self) -> Array1<f64> {
        trapezoid_weights(self.n_t, self.dt())
    }

    /// Largest step among the three axes (mollifier resolvability uses it).
    pub fn max_step(&self) -> f64 {
        self.dt().max(self.dx()).max(self.dy())
    }
}

pub fn trapezoid_weights(n: usize, h: f64) -> Array1<f64> {
    let mut w = Array1::from_elem(n, h);
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// What a Field's value array ranges over. Interior: (n_t, n_x, n_y).
/// Trace: (n_t, n_x, 1), a wall restriction or a y-integral. YProfile:
/// (1, 1, n_y), an x- and t-independent profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FieldKind {
    Interior,
    Trace,
    YProfile,
}

/// A scalar field sampled on the grid.
#[derive(Debug, Clone)]
pub struct Field {
    pub spec: GridSpec,
    pub kind: FieldKind,
    pub values: Array3<f64>,
}

impl Field {
    fn expected_dim(spec: &GridSpec, kind: FieldKind) -> (usize, usize, usize) {
        match kind {
            FieldKind::Interior => (spec.n_t, spec.n_x, spec.n_y),
            FieldKind::Trace => (spec.n_t, spec.n_x, 1),
            FieldKind::YProfile => (1, 1, spec.n_y),
        }
    }

    pub fn new(spec: GridSpec, kind: FieldKind, values: Array3<f64>) -> Result<Self> {
        if values.dim() != Self::expected_dim(&spec, kind) {
            return Err(Error::structural(format!(
                "field shape {:?} does not match kind {:?} on grid ({}, {}, {})",
                values.dim(),
                kind,
                spec.n_t,
                spec.n_x,
                spec.n_y
            )));
        }
        Ok(Field { spec, kind, values })
    }

    pub fn zeros(spec: &GridSpec, kind: FieldKind) -> Self {
        let dim = Self::expected_dim(spec, kind);
        Field {
            spec: spec.clone(),
            kind,
            values: Array3::zeros(dim),
        }
    }

    /// Interior field from a closure of the physical coordinates.
    pub fn from_fn(spec: &GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut values = Array3::zeros((spec.n_t, spec.n_x, spec.n_y));
        for it in 0..spec.n_t {
            for ix in 0..spec.n_x {
                for iy in 0..spec.n_y {
                    values[(it, ix, iy)] = f(spec.t(it), spec.x(ix), spec.y(iy));
                }
            }
        }
        Field {
            spec: spec.clone(),
            kind: FieldKind::Interior,
            values,
        }
    }

    /// Trace field (t, x) from a closure.
    pub fn trace_from_fn(spec: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Array3::zeros((spec.n_t, spec.n_x, 1));
        for it in 0..spec.n_t {
            for ix in 0..spec.n_x {
                values[(it, ix, 0)] = f(spec.t(it), spec.x(ix));
            }
        }
        Field {
            spec: spec.clone(),
            kind: FieldKind::Trace,
            values,
        }
    }

    /// Interior field broadcast from a (t, y) array across x.
    pub fn from_ty(spec: &GridSpec, ty: &Array2<f64>) -> Result<Self> {
        if ty.dim() != (spec.n_t, spec.n_y) {
            return Err(Error::structural(format!(
                "(t,y) table shape {:?} does not match grid ({}, {})",
                ty.dim(),
                spec.n_t,
                spec.n_y
            )));
        }
        let mut values = Array3::zeros((spec.n_t, spec.n_x, spec.n_y));
        for it in 0..spec.n_t {
            for ix in 0..spec.n_x {
                for iy in 0..spec.n_y {
                    values[(it, ix, iy)] = ty[(it, iy)];
                }
            }
        }
        Ok(Field {
            spec: spec.clone(),
            kind: FieldKind::Interior,
            values,
        })
    }

    /// Restriction to the wall y = 0.
    pub fn trace(&self) -> Result<Field> {
        if self.kind != FieldKind::Interior {
            return Err(Error::structural("trace needs an interior field"));
        }
        let mut values = Array3::zeros((self.spec.n_t, self.spec.n_x, 1));
        values
            .index_axis_mut(Axis(2), 0)
            .assign(&self.values.index_axis(Axis(2), 0));
        Ok(Field {
            spec: self.spec.clone(),
            kind: FieldKind::Trace,
            values,
        })
    }

    pub fn slice_xy(&self, it: usize) -> Array2<f64> {
        self.values.index_axis(Axis(0), it).to_owned()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            spec: self.spec.clone(),
            kind: self.kind,
            values: self.values.mapv(|v| f(v)),
        }
    }

    pub fn scaled(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b, "add")
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b, "sub")
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a * b, "mul")
    }

    fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64, what: &str) -> Result<Field> {
        if self.kind != other.kind || self.values.dim() != other.values.dim() {
            return Err(Error::structural(format!(
                "{what}: mismatched fields {:?}/{:?} vs {:?}/{:?}",
                self.kind,
                self.values.dim(),
                other.kind,
                other.values.dim()
            )));
        }
        let mut values = self.values.clone();
        Zip::from(&mut values).and(&other.values).for_each(|a, &b| {
            *a = f(*a, b);
        });
        Ok(Field {
            spec: self.spec.clone(),
            kind: self.kind,
            values,
        })
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("{what}: non-finite value")));
        }
        Ok(())
    }
}

pub(crate) fn lane_first_derivative(src: ArrayView1<f64>, mut dst: ArrayViewMut1<f64>, h: f64) {
    let n = src.len();
    dst[0] = (-3.0 * src[0] + 4.0 * src[1] - src[2]) / (2.0 * h);
    for i in 1..n - 1 {
        dst[i] = (src[i + 1] - src[i - 1]) / (2.0 * h);
    }
    dst[n - 1] = (3.0 * src[n - 1] - 4.0 * src[n - 2] + src[n - 3]) / (2.0 * h);
}

pub(crate) fn lane_second_derivative(src: ArrayView1<f64>, mut dst: ArrayViewMut1<f64>, h: f64) {
    let n = src.len();
    let h2 = h * h;
    dst[0] = (2.0 * src[0] - 5.0 * src[1] + 4.0 * src[2] - src[3]) / h2;
    for i in 1..n - 1 {
        dst[i] = (src[i + 1] - 2.0 * src[i] + src[i - 1]) / h2;
    }
    dst[n - 1] = (2.0 * src[n - 1] - 5.0 * src[n - 2] + 4.0 * src[n - 3] - src[n - 4]) / h2;
}

fn lane_periodic_derivative(src: ArrayView1<f64>, mut dst: ArrayViewMut1<f64>, h: f64) {
    let n = src.len();
    for i in 0..n {
        let ip = (i + 1) % n;
        let im = (i + n - 1) % n;
        dst[i] = (src[ip] - src[im]) / (2.0 * h);
    }
}

fn apply_along_axis(
    f: &Field,
    axis: Axis,
    h: f64,
    op: impl Fn(ArrayView1<f64>, ArrayViewMut1<f64>, f64) + Sync,
) -> Field {
    let mut out = Array3::zeros(f.values.dim());
    Zip::from(out.lanes_mut(axis))
        .and(f.values.lanes(axis))
        .for_each(|dst, src| op(src, dst, h));
    Field {
        spec: f.spec.clone(),
        kind: f.kind,
        values: out,
    }
}

/// Periodic central x-derivative. Defined for interior and trace fields.
pub fn d_x(f: &Field) -> Result<Field> {
    if f.kind == FieldKind::YProfile {
        return Err(Error::structural("d_x needs an x-resolved field"));
    }
    let out = apply_along_axis(f, Axis(1), f.spec.dx(), lane_periodic_derivative);
    out.ensure_finite("d_x")?;
    Ok(out)
}

/// Time derivative, one-sided second order at both ends.
pub fn d_t(f: &Field) -> Result<Field> {
    if f.kind == FieldKind::YProfile {
        return Err(Error::structural("d_t needs a t-resolved field"));
    }
    let out = apply_along_axis(f, Axis(0), f.spec.dt(), lane_first_derivative);
    out.ensure_finite("d_t")?;
    Ok(out)
}

/// Wall-normal derivative of the given order (1 or 2), one-sided at the ends.
pub fn d_y(f: &Field, order: usize) -> Result<Field> {
    if f.kind == FieldKind::Trace {
        return Err(Error::structural("d_y needs a y-resolved field"));
    }
    let out = match order {
        1 => apply_along_axis(f, Axis(2), f.spec.dy(), lane_first_derivative),
        2 => apply_along_axis(f, Axis(2), f.spec.dy(), lane_second_derivative),
        _ => {
            return Err(Error::structural(format!(
                "d_y supports order 1 or 2, got {order}"
            )))
        }
    };
    out.ensure_finite("d_y")?;
    Ok(out)
}

/// Trapezoid tail integral: out(t, x, j) = integral of w over [y_j, Y_max].
pub fn tail_integral_all(w: &Field) -> Result<Field> {
    if w.kind != FieldKind::Interior {
        return Err(Error::structural("tail_integral needs an interior field"));
    }
    let dy = w.spec.dy();
    let n_y = w.spec.n_y;
    let mut out = Array3::zeros(w.values.dim());
    Zip::from(out.lanes_mut(Axis(2)))
        .and(w.values.lanes(Axis(2)))
        .for_each(|mut dst, src| {
            let mut acc = 0.0;
            dst[n_y - 1] = 0.0;
            for j in (0..n_y - 1).rev() {
                acc += 0.5 * dy * (src[j] + src[j + 1]);
                dst[j] = acc;
            }
        });
    let out = Field {
        spec: w.spec.clone(),
        kind: FieldKind::Interior,
        values: out,
    };
    out.ensure_finite("tail_integral")?;
    Ok(out)
}

/// Tail integral evaluated at one y index, returned as a trace-kind field.
pub fn tail_integral(w: &Field, j: usize) -> Result<Field> {
    if j >= w.spec.n_y {
        return Err(Error::structural(format!(
            "tail_integral: y index {j} out of range (n_y = {})",
            w.spec.n_y
        )));
    }
    let all = tail_integral_all(w)?;
    let mut values = Array3::zeros((w.spec.n_t, w.spec.n_x, 1));
    values
        .index_axis_mut(Axis(2), 0)
        .assign(&all.values.index_axis(Axis(2), j));
    Field::new(w.spec.clone(), FieldKind::Trace, values)
}

/// Largest |w| on the top slab y = Y_max; callers log it as the tail-decay
/// check before trusting a tail integral.
pub fn tail_magnitude(w: &Field) -> f64 {
    w.values
        .index_axis(Axis(2), w.spec.n_y - 1)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Cumulative trapezoid integral from the wall: out(t,x,j) = integral over [0, y_j].
pub fn integral_from_wall(f: &Field) -> Result<Field> {
    if f.kind != FieldKind::Interior {
        return Err(Error::structural(
            "integral_from_wall needs an interior field",
        ));
    }
    let dy = f.spec.dy();
    let mut out = Array3::zeros(f.values.dim());
    Zip::from(out.lanes_mut(Axis(2)))
        .and(f.values.lanes(Axis(2)))
        .for_each(|mut dst, src| {
            let mut acc = 0.0;
            dst[0] = 0.0;
            for j in 1..src.len() {
                acc += 0.5 * dy * (src[j - 1] + src[j]);
                dst[j] = acc;
            }
        });
    let out = Field {
        spec: f.spec.clone(),
        kind: FieldKind::Interior,
        values: out,
    };
    out.ensure_finite("integral_from_wall")?;
    Ok(out)
}

/// Banded matrix with kl sub- and ku super-diagonals, LU-factored in place
/// without pivoting (rows here are diagonally dominant by construction, and
/// the boundary closures keep fill inside the band).
#[derive(Debug, Clone)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    // data[(i, j - i + kl)] holds A[i][j]
    data: Array2<f64>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Banded {
            n,
            kl,
            ku,
            data: Array2::zeros((n, kl + ku + 1)),
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(j + self.kl >= i && j <= i + self.ku, "outside band");
        self.data[(i, j + self.kl - i)] = v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl >= i && j <= i + self.ku {
            self.data[(i, j + self.kl - i)]
        } else {
            0.0
        }
    }

    /// In-place LU without pivoting. Errors on a (near-)zero pivot.
    pub fn factor(&mut self) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let pivot = self.data[(k, kl)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::numerical(format!(
                    "banded LU: pivot {pivot:e} at row {k}"
                )));
            }
            let last_row = (k + kl).min(n - 1);
            for i in k + 1..=last_row {
                let m = self.data[(i, k + kl - i)] / pivot;
                self.data[(i, k + kl - i)] = m;
                let last_col = (k + ku).min(n - 1);
                for j in k + 1..=last_col {
                    let akj = self.data[(k, j + kl - k)];
                    self.data[(i, j + kl - i)] -= m * akj;
                }
            }
        }
        Ok(())
    }

    /// Solve with a previously factored matrix; rhs is overwritten.
    pub fn solve_factored(&self, rhs: &mut [f64]) -> Result<()> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        if rhs.len() != n {
            return Err(Error::structural("banded solve: rhs length mismatch"));
        }
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            for i in k + 1..=last_row {
                rhs[i] -= self.data[(i, k + kl - i)] * rhs[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + ku).min(n - 1);
            for j in k + 1..=last_col {
                rhs[k] -= self.data[(k, j + kl - k)] * rhs[j];
            }
            rhs[k] /= self.data[(k, kl)];
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("banded solve: non-finite solution"));
        }
        Ok(())
    }

    pub fn factor_and_solve(mut self, rhs: &mut [f64]) -> Result<()> {
        self.factor()?;
        self.solve_factored(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn demo_spec() -> GridSpec {
        GridSpec::new(8, 16, 32, 0.5, 2.0, 4.0).unwrap()
    }

    #[test]
    fn spacing_conventions() {
        let g = demo_spec();
        assert_relative_eq!(g.dt(), 0.5 / 7.0);
        assert_relative_eq!(g.dx(), 2.0 / 16.0);
        assert_relative_eq!(g.dy(), 4.0 / 31.0);
        assert_relative_eq!(g.y(g.n_y - 1), 4.0);
        assert_relative_eq!(g.t(g.n_t - 1), 0.5);
        // last x node stops one step short of the period
        assert_relative_eq!(g.x(g.n_x - 1), 2.0 - g.dx());
    }

    #[test]
    fn rejects_tiny_axes() {
        assert!(GridSpec::new(3, 16, 32, 0.5, 2.0, 4.0).is_err());
        assert!(GridSpec::new(8, 16, 32, 0.0, 2.0, 4.0).is_err());
    }

    #[test]
    fn quadrature_weights_sum_to_length() {
        let g = demo_spec();
        assert_relative_eq!(g.y_weights().sum(), 4.0, max_relative = 1e-14);
        assert_relative_eq!(g.t_weights().sum(), 0.5, max_relative = 1e-14);
    }

    #[test]
    fn dx_matches_cosine() {
        // central difference of sin(kx) is cos(kx) sin(k dx)/dx exactly, so
        // the worst node error is k - sin(k dx)/dx on the nose
        let g = GridSpec::new(4, 128, 4, 0.5, 2.0, 4.0).unwrap();
        let k = 2.0 * std::f64::consts::PI / g.x_len;
        let f = Field::from_fn(&g, |_, x, _| (k * x).sin());
        let dfx = d_x(&f).unwrap();
        let mut max_err = 0.0f64;
        for ix in 0..g.n_x {
            let exact = k * (k * g.x(ix)).cos();
            max_err = max_err.max((dfx.values[(0, ix, 0)] - exact).abs());
        }
        let predicted = k - (k * g.dx()).sin() / g.dx();
        assert_relative_eq!(max_err, predicted, max_relative = 1e-10);
    }

    #[test]
    fn dx_of_constant_vanishes() {
        let g = demo_spec();
        let f = Field::from_fn(&g, |_, _, _| 3.25);
        assert_eq!(d_x(&f).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn dy_exact_on_quadratics() {
        // one-sided and central rows are all exact for y^2
        let g = demo_spec();
        let f = Field::from_fn(&g, |_, _, y| y * y);
        let d1 = d_y(&f, 1).unwrap();
        let d2 = d_y(&f, 2).unwrap();
        for iy in 0..g.n_y {
            assert_relative_eq!(d1.values[(0, 0, iy)], 2.0 * g.y(iy), max_relative = 1e-12);
            assert_relative_eq!(d2.values[(0, 0, iy)], 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn dt_exact_on_quadratics() {
        let g = demo_spec();
        let f = Field::from_fn(&g, |t, _, _| 1.0 + t + 0.5 * t * t);
        let d = d_t(&f).unwrap();
        for it in 0..g.n_t {
            assert_relative_eq!(d.values[(it, 0, 0)], 1.0 + g.t(it), max_relative = 1e-12);
        }
    }

    #[test]
    fn dy_second_order_in_h() {
        // e^{-y} derivative error shrinks ~4x when dy halves
        let errs: Vec<f64> = [41usize, 81]
            .iter()
            .map(|&n_y| {
                let g = GridSpec::new(4, 4, n_y, 0.5, 2.0, 4.0).unwrap();
                let f = Field::from_fn(&g, |_, _, y| (-y).exp());
                let d = d_y(&f, 1).unwrap();
                (0..g.n_y)
                    .map(|iy| (d.values[(0, 0, iy)] + (-g.y(iy)).exp()).abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(
            (3.0..5.5).contains(&ratio),
            "errs = {errs:?}, ratio = {ratio}"
        );
    }

    #[test]
    fn tail_integral_matches_exponential() {
        let g = GridSpec::new(4, 4, 401, 0.5, 2.0, 20.0).unwrap();
        let f = Field::from_fn(&g, |_, _, y| (-y).exp());
        let tail = tail_integral(&f, 0).unwrap();
        // integral over [0, 20] of e^{-y} = 1 - e^{-20}, trapezoid error O(dy^2)
        let exact = 1.0 - (-20.0f64).exp();
        assert!((tail.values[(0, 0, 0)] - exact).abs() < 3e-4);
        assert_relative_eq!(tail_magnitude(&f), (-20.0f64).exp());
    }

    #[test]
    fn tail_integral_all_telescopes() {
        // value at j equals value at j+1 plus the local trapezoid cell
        let g = GridSpec::new(4, 4, 33, 0.5, 2.0, 4.0).unwrap();
        let f = Field::from_fn(&g, |_, x, y| (1.0 + x) * (-y).exp() * (1.0 + y));
        let all = tail_integral_all(&f).unwrap();
        let dy = g.dy();
        for j in 0..g.n_y - 1 {
            let cell = 0.5 * dy * (f.values[(1, 2, j)] + f.values[(1, 2, j + 1)]);
            assert_relative_eq!(
                all.values[(1, 2, j)],
                all.values[(1, 2, j + 1)] + cell,
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn integral_from_wall_complements_tail() {
        let g = GridSpec::new(4, 4, 57, 0.5, 2.0, 6.0).unwrap();
        let f = Field::from_fn(&g, |_, _, y| y * (-y).exp());
        let tail = tail_integral_all(&f).unwrap();
        let wall = integral_from_wall(&f).unwrap();
        let total = tail.values[(0, 0, 0)];
        for j in 0..g.n_y {
            assert_relative_eq!(
                wall.values[(0, 0, j)] + tail.values[(0, 0, j)],
                total,
                max_relative = 1e-12,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn banded_matches_dense_tridiagonal() {
        // -u'' = f style system with Dirichlet rows
        let n = 12;
        let mut m = Banded::zeros(n, 1, 2);
        m.set(0, 0, 1.0);
        for i in 1..n - 1 {
            m.set(i, i - 1, -1.0);
            m.set(i, i, 2.0);
            m.set(i, i + 1, -1.0);
        }
        m.set(n - 1, n - 1, 1.0);
        let exact: Vec<f64> = (0..n).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let mut rhs = vec![0.0; n];
        rhs[0] = exact[0];
        rhs[n - 1] = exact[n - 1];
        for i in 1..n - 1 {
            rhs[i] = -exact[i - 1] + 2.0 * exact[i] - exact[i + 1];
        }
        m.factor_and_solve(&mut rhs).unwrap();
        for i in 0..n {
            assert_relative_eq!(rhs[i], exact[i], max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn banded_wider_band_roundtrip() {
        // random-ish diagonally dominant band with kl=2, ku=2
        let n = 20;
        let (kl, ku) = (2, 2);
        let mut m = Banded::zeros(n, kl, ku);
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            for j in lo..=hi {
                let v = if i == j {
                    5.0 + (i as f64) * 0.1
                } else {
                    0.3 * ((i * 7 + j * 3) % 5) as f64 - 0.6
                };
                m.set(i, j, v);
            }
        }
        let exact: Vec<f64> = (0..n).map(|i| ((i * i) % 7) as f64 - 3.0).collect();
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n - 1);
            rhs[i] = (lo..=hi).map(|j| m.get(i, j) * exact[j]).sum();
        }
        m.factor_and_solve(&mut rhs).unwrap();
        for i in 0..n {
            assert_relative_eq!(rhs[i], exact[i], max_relative = 1e-10, epsilon = 1e-10);
        }
    }

    #[test]
    fn banded_rejects_zero_pivot() {
        let mut m = Banded::zeros(3, 1, 1);
        m.set(0, 0, 0.0);
        m.set(1, 1, 1.0);
        m.set(2, 2, 1.0);
        assert!(m.factor().is_err());
    }

    #[test]
    fn field_shape_guard() {
        let g = demo_spec();
        let bad = Array3::<f64>::zeros((2, 2, 2));
        assert!(Field::new(g, FieldKind::Interior, bad).is_err());
    }

    #[test]
    fn trace_picks_wall_values() {
        let g = demo_spec();
        let f = Field::from_fn(&g, |t, x, y| t + 10.0 * x + 100.0 * y);
        let tr = f.trace().unwrap();
        assert_eq!(tr.kind, FieldKind::Trace);
        assert_relative_eq!(tr.values[(3, 5, 0)], g.t(3) + 10.0 * g.x(5));
    }
}
