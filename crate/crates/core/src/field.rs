//! Self-consistent electrostatics on a cut-cell Cartesian grid.
//!
//! Unknowns live at the centers of the Cartesian control volumes ("nodes")
//! covering the bounding box. Each control volume carries the fraction of
//! its volume inside the domain and each face the fraction of its area
//! inside the domain. The finite-volume balance
//! `sum_faces aperture * h^{d-1} (phi_i - phi_j) / h = int_{cell} (rho - rho0)`
//! imposes the homogeneous Neumann condition by giving the wall zero flux.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::characteristics::ForceField;
use crate::geometry::DomainGeometry;
use crate::quadrature::gauss_legendre;
use crate::Vec3;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("conjugate gradient did not converge: relative residual {residual:e} after {iterations} iterations (tol {tol:e})")]
    NotConverged { residual: f64, iterations: usize, tol: f64 },
    #[error("particle at {0:?} lies outside the grid bounding box")]
    OutsideGrid(Vec3),
    #[error("grid needs at least 4 cells per axis, got {0}")]
    GridTooSmall(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cut-cell geometry and the Neumann Laplacian stencil.
#[derive(Debug, Clone)]
pub struct PoissonGrid {
    domain: DomainGeometry,
    dim: usize,
    n: [usize; 3],
    lo: Vec3,
    h: f64,
    /// Volume inside the domain, per node.
    volume: Vec<f64>,
    /// Face coefficients `aperture * h^{d-2}` towards the +axis neighbor.
    face: [Vec<f64>; 3],
    active: Vec<bool>,
}

impl PoissonGrid {
    /// Grid with `cells` control volumes along the longest axis of the
    /// bounding box and equal spacing on the others.
    pub fn new(domain: &DomainGeometry, cells: usize) -> Result<Self, FieldError> {
        if cells < 4 {
            return Err(FieldError::GridTooSmall(cells));
        }
        let dim = domain.dimension();
        let (blo, bhi) = domain.bounding_box();
        let ext = bhi - blo;
        let h = (0..dim).map(|k| ext[k]).fold(0.0, f64::max) / cells as f64;
        let mut n = [1usize; 3];
        let mut lo = Vec3::zeros();
        let c = domain.center();
        for k in 0..dim {
            n[k] = ((ext[k] / h) - 1e-9).ceil() as usize;
            lo[k] = c[k] - 0.5 * n[k] as f64 * h;
        }
        let total = n[0] * n[1] * n[2];
        let scale = domain.semi_axes();
        let mut grid = Self {
            domain: domain.clone(),
            dim,
            n,
            lo,
            h,
            volume: vec![0.0; total],
            face: [vec![0.0; total], vec![0.0; total], vec![0.0; total]],
            active: vec![false; total],
        };
        let cell_vol = h.powi(dim as i32);
        let to_unit = |x: f64, k: usize| (x - c[k]) / scale[k];

        let vols: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|id| {
                let idx = grid.unflatten(id);
                let b = grid.cell_bounds(idx);
                let s: Vec<(f64, f64)> = (0..dim).map(|k| (to_unit(b[k].0, k), to_unit(b[k].1, k))).collect();
                unit_ball_box_fraction(&s)
            })
            .collect();
        for (id, f) in vols.into_iter().enumerate() {
            grid.volume[id] = f * cell_vol;
        }

        let face_scale = h.powi(dim as i32 - 2);
        for axis in 0..dim {
            let faces: Vec<f64> = (0..total)
                .into_par_iter()
                .map(|id| {
                    let idx = grid.unflatten(id);
                    if idx[axis] + 1 >= n[axis] {
                        return 0.0;
                    }
                    let b = grid.cell_bounds(idx);
                    let plane = to_unit(b[axis].1, axis);
                    let rest: Vec<(f64, f64)> =
                        (0..dim).filter(|&k| k != axis).map(|k| (to_unit(b[k].0, k), to_unit(b[k].1, k))).collect();
                    unit_ball_face_fraction(plane, &rest) * face_scale
                })
                .collect();
            grid.face[axis] = faces;
        }

        for id in 0..total {
            let connected = (0..dim).any(|k| grid.face[k][id] > 0.0 || grid.neighbor(id, k, -1).is_some_and(|j| grid.face[k][j] > 0.0));
            grid.active[id] = grid.volume[id] > 1e-14 * cell_vol && connected;
        }
        Ok(grid)
    }

    pub fn domain(&self) -> &DomainGeometry {
        &self.domain
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn shape(&self) -> [usize; 3] {
        self.n
    }

    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    pub fn is_active(&self, id: usize) -> bool {
        self.active[id]
    }

    /// Volume of the control volume inside the domain.
    pub fn cut_volume(&self, id: usize) -> f64 {
        self.volume[id]
    }

    pub fn total_volume(&self) -> f64 {
        self.volume.iter().zip(&self.active).filter(|(_, a)| **a).map(|(v, _)| v).sum()
    }

    pub fn node_position(&self, id: usize) -> Vec3 {
        let idx = self.unflatten(id);
        let mut x = self.domain.center();
        for k in 0..self.dim {
            x[k] = self.lo[k] + (idx[k] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Control volume containing `x`, if it lies in the grid box.
    pub fn cell_index(&self, x: &Vec3) -> Option<usize> {
        let mut idx = [0usize; 3];
        for k in 0..self.dim {
            let s = ((x[k] - self.lo[k]) / self.h).floor();
            if s < 0.0 || s >= self.n[k] as f64 {
                return None;
            }
            idx[k] = s as usize;
        }
        Some(self.flatten(idx))
    }

    fn flatten(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.n[1] + idx[1]) * self.n[0] + idx[0]
    }

    fn unflatten(&self, id: usize) -> [usize; 3] {
        [id % self.n[0], (id / self.n[0]) % self.n[1], id / (self.n[0] * self.n[1])]
    }

    fn cell_bounds(&self, idx: [usize; 3]) -> [(f64, f64); 3] {
        let mut b = [(0.0, 0.0); 3];
        for k in 0..3 {
            let a = self.lo[k] + idx[k] as f64 * self.h;
            b[k] = (a, a + self.h);
        }
        b
    }

    fn neighbor(&self, id: usize, axis: usize, dir: i64) -> Option<usize> {
        let mut idx = self.unflatten(id);
        let j = idx[axis] as i64 + dir;
        if j < 0 || j >= self.n[axis] as i64 {
            return None;
        }
        idx[axis] = j as usize;
        Some(self.flatten(idx))
    }

    /// Coefficient of the face between `id` and its neighbor along `axis`
    /// in direction `dir`, with the neighbor index, if they are connected.
    fn link(&self, id: usize, axis: usize, dir: i64) -> Option<(usize, f64)> {
        let j = self.neighbor(id, axis, dir)?;
        let c = if dir > 0 { self.face[axis][id] } else { self.face[axis][j] };
        (c > 0.0 && self.active[j]).then_some((j, c))
    }

    /// Cloud-in-cell deposition onto nodes. Shares that would land on
    /// inactive nodes are redistributed over the active corners, so the
    /// deposited total equals the particle total.
    pub fn deposit(&self, positions: &[Vec3], weights: &[f64]) -> Result<Vec<f64>, FieldError> {
        let mut mass = vec![0.0; self.len()];
        for (x, w) in positions.iter().zip(weights) {
            for (id, s) in self.stencil(x)? {
                mass[id] += w * s;
            }
        }
        Ok(mass)
    }

    /// Multilinear weights of the `2^d` nodes surrounding `x`, restricted to
    /// active nodes and renormalized.
    pub(crate) fn stencil(&self, x: &Vec3) -> Result<Stencil, FieldError> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..self.dim {
            let s = (x[k] - self.lo[k]) / self.h - 0.5;
            if s < -0.5 - 1e-9 || s > self.n[k] as f64 - 0.5 + 1e-9 {
                return Err(FieldError::OutsideGrid(*x));
            }
            let i = s.floor().clamp(0.0, (self.n[k] - 2) as f64);
            base[k] = i as usize;
            frac[k] = (s - i).clamp(0.0, 1.0);
        }
        let mut out = Stencil::default();
        let mut total = 0.0;
        for corner in 0..(1usize << self.dim) {
            let mut idx = base;
            let mut w = 1.0;
            for k in 0..self.dim {
                let up = (corner >> k) & 1;
                idx[k] += up;
                w *= if up == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            let id = self.flatten(idx);
            if self.active[id] && w > 0.0 {
                out.push((id, w));
                total += w;
            }
        }
        if total == 0.0 {
            // Corner case: all weight on inactive nodes. Use the nearest active node.
            let id = self.nearest_active(x).ok_or(FieldError::OutsideGrid(*x))?;
            out.push((id, 1.0));
            return Ok(out);
        }
        for (_, w) in out.items[..out.len].iter_mut() {
            *w /= total;
        }
        Ok(out)
    }

    fn nearest_active(&self, x: &Vec3) -> Option<usize> {
        (0..self.len())
            .filter(|&i| self.active[i])
            .min_by(|&a, &b| (self.node_position(a) - x).norm().total_cmp(&(self.node_position(b) - x).norm()))
    }

    /// Applies the Neumann Laplacian `(A phi)_i = sum_j c_ij (phi_i - phi_j)`.
    fn apply(&self, phi: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            if !self.active[i] {
                *o = 0.0;
                return;
            }
            let mut s = 0.0;
            for k in 0..self.dim {
                for dir in [-1, 1] {
                    if let Some((j, c)) = self.link(i, k, dir) {
                        s += c * (phi[i] - phi[j]);
                    }
                }
            }
            *o = s;
        });
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                if !self.active[i] {
                    return 0.0;
                }
                (0..self.dim).flat_map(|k| [-1, 1].map(|d| self.link(i, k, d).map_or(0.0, |(_, c)| c))).sum()
            })
            .collect()
    }

    /// Solves `-Lap phi = rho - rho0` given node masses `int_cell rho`.
    /// The source is projected to zero total before solving and `phi` is
    /// returned in the zero-mean gauge. The residual tolerance is relative to
    /// the larger of the projected source and the gross source `|mass| +
    /// rho0 |cell|`, so a source that cancels to roundoff gives `phi = 0`.
    pub fn solve(&self, mass: &[f64], rho0: f64, tol: f64) -> Result<FieldState, FieldError> {
        let mut rhs: Vec<f64> =
            (0..self.len()).map(|i| if self.active[i] { mass[i] - rho0 * self.volume[i] } else { 0.0 }).collect();
        let vol = self.total_volume();
        let excess: f64 = rhs.iter().sum::<f64>() / vol;
        for i in 0..self.len() {
            if self.active[i] {
                rhs[i] -= excess * self.volume[i];
            }
        }
        let gross: Vec<f64> =
            (0..self.len()).map(|i| if self.active[i] { mass[i].abs() + rho0.abs() * self.volume[i] } else { 0.0 }).collect();
        let scale = dot(&gross, &gross).sqrt();
        let (phi, iterations, residual) = self.pcg(&rhs, scale, tol, 20 * self.len().max(100))?;
        let rho = (0..self.len()).map(|i| if self.active[i] { mass[i] / self.volume[i] } else { 0.0 }).collect();
        Ok(self.field_from_potential(phi, rho, rho0, iterations, residual))
    }

    /// Solve with a pointwise source `s(x) = rho(x) - rho0`, integrated by the
    /// midpoint rule on each cut cell.
    pub fn solve_source<S: Fn(&Vec3) -> f64>(&self, source: S, tol: f64) -> Result<FieldState, FieldError> {
        let mass: Vec<f64> = (0..self.len())
            .map(|i| if self.active[i] { source(&self.node_position(i)) * self.volume[i] } else { 0.0 })
            .collect();
        self.solve(&mass, 0.0, tol)
    }

    fn pcg(&self, b: &[f64], scale: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize, f64), FieldError> {
        let n = self.len();
        let mut x = vec![0.0; n];
        let b_norm = dot(b, b).sqrt().max(scale);
        if b_norm == 0.0 {
            return Ok((x, 0, 0.0));
        }
        if dot(b, b).sqrt() <= tol * b_norm {
            return Ok((x, 0, 0.0));
        }
        let diag = self.diagonal();
        let inv: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 0.0 }).collect();
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&inv).map(|(a, b)| a * b).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        for it in 1..=max_iter {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            x.par_iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
            r.par_iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
            let res = dot(&r, &r).sqrt() / b_norm;
            if res <= tol {
                self.gauge(&mut x);
                return Ok((x, it, res));
            }
            z.par_iter_mut().zip(r.par_iter().zip(&inv)).for_each(|(zi, (ri, di))| *zi = ri * di);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        }
        let res = dot(&r, &r).sqrt() / b_norm;
        Err(FieldError::NotConverged { residual: res, iterations: max_iter, tol })
    }

    /// Shifts `phi` to zero volume-weighted mean over active nodes.
    fn gauge(&self, phi: &mut [f64]) {
        let mean = phi.iter().zip(&self.volume).zip(&self.active).filter(|(_, a)| **a).map(|((p, v), _)| p * v).sum::<f64>()
            / self.total_volume();
        for (p, a) in phi.iter_mut().zip(&self.active) {
            *p = if *a { *p - mean } else { 0.0 };
        }
    }

    /// Field state from a prescribed nodal potential (solver bypassed).
    pub fn field_from_potential(&self, phi: Vec<f64>, rho: Vec<f64>, rho0: f64, iterations: usize, residual: f64) -> FieldState {
        let e: Vec<Vec3> = (0..self.len()).into_par_iter().map(|i| self.nodal_field(&phi, i)).collect();
        FieldState { grid: self.clone(), rho, phi, e, rho0, iterations, residual }
    }

    /// `-grad phi` at a node: central differences across connected faces,
    /// one-sided where only one neighbor is connected.
    fn nodal_field(&self, phi: &[f64], i: usize) -> Vec3 {
        let mut e = Vec3::zeros();
        if !self.active[i] {
            return e;
        }
        for k in 0..self.dim {
            let m = self.link(i, k, -1).map(|(j, _)| j);
            let p = self.link(i, k, 1).map(|(j, _)| j);
            e[k] = match (m, p) {
                (Some(a), Some(b)) => -(phi[b] - phi[a]) / (2.0 * self.h),
                (None, Some(b)) => -(phi[b] - phi[i]) / self.h,
                (Some(a), None) => -(phi[i] - phi[a]) / self.h,
                (None, None) => 0.0,
            };
        }
        e
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Fixed-order chunked reduction keeps results independent of thread count.
    a.par_chunks(4096).zip(b.par_chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).collect::<Vec<_>>().iter().sum()
}

/// Area of `[x0, x1] x [y0, y1]` inside the disk of radius `r` at the origin.
pub fn rect_disk_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    quadrant_area(x1, y1, r) - quadrant_area(x0, y1, r) - quadrant_area(x1, y0, r) + quadrant_area(x0, y0, r)
}

/// Signed area of the disk inside the rectangle spanned by the origin and `(x, y)`.
fn quadrant_area(x: f64, y: f64, r: f64) -> f64 {
    let sign = x.signum() * y.signum();
    let x = x.abs().min(r);
    let y = y.abs().min(r);
    if x * x + y * y <= r * r {
        return sign * x * y;
    }
    let g = |t: f64| 0.5 * (t * (r * r - t * t).max(0.0).sqrt() + r * r * (t / r).clamp(-1.0, 1.0).asin());
    let xc = (r * r - y * y).max(0.0).sqrt();
    sign * (y * xc + g(x) - g(xc))
}

fn interval_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Fraction of the axis-aligned box (in unit-ball coordinates) inside the unit ball.
fn unit_ball_box_fraction(b: &[(f64, f64)]) -> f64 {
    let near: f64 = b.iter().map(|&(a, c)| if a > 0.0 { a * a } else if c < 0.0 { c * c } else { 0.0 }).sum();
    let far: f64 = b.iter().map(|&(a, c)| a.abs().max(c.abs()).powi(2)).sum();
    if near >= 1.0 {
        return 0.0;
    }
    if far <= 1.0 {
        return 1.0;
    }
    let size: f64 = b.iter().map(|(a, c)| c - a).product();
    if b.len() == 2 {
        return rect_disk_area(b[0].0, b[0].1, b[1].0, b[1].1, 1.0) / size;
    }
    let (z0, z1) = (b[2].0.max(-1.0), b[2].1.min(1.0));
    if z1 <= z0 {
        return 0.0;
    }
    // Integrate cross-section areas over z, splitting where the section
    // radius crosses an edge or corner distance of the xy-rectangle.
    let mut cuts = vec![z0, z1];
    let xs = [b[0].0, b[0].1];
    let ys = [b[1].0, b[1].1];
    let mut levels: Vec<f64> = xs.iter().chain(&ys).map(|a| a * a).collect();
    for x in xs {
        for y in ys {
            levels.push(x * x + y * y);
        }
    }
    for c in levels {
        if c < 1.0 {
            for z in [-(1.0 - c).sqrt(), (1.0 - c).sqrt()] {
                if z > z0 && z < z1 {
                    cuts.push(z);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let (gx, gw) = gauss_legendre(12);
    let mut area = 0.0;
    for w in cuts.windows(2) {
        let (a, c) = (w[0], w[1]);
        let half = 0.5 * (c - a);
        for (t, wt) in gx.iter().zip(&gw) {
            let z = a + half * (t + 1.0);
            area += wt * half * rect_disk_area(xs[0], xs[1], ys[0], ys[1], (1.0 - z * z).max(0.0).sqrt());
        }
    }
    area / size
}

/// Fraction of a face at coordinate `plane` with remaining extents `rest`
/// (unit-ball coordinates) inside the unit ball.
fn unit_ball_face_fraction(plane: f64, rest: &[(f64, f64)]) -> f64 {
    let r2 = 1.0 - plane * plane;
    if r2 <= 0.0 {
        return 0.0;
    }
    let r = r2.sqrt();
    let size: f64 = rest.iter().map(|(a, c)| c - a).product();
    if rest.len() == 1 {
        interval_overlap(rest[0].0, rest[0].1, -r, r) / size
    } else {
        rect_disk_area(rest[0].0, rest[0].1, rest[1].0, rest[1].1, r) / size
    }
}

/// `|Omega|`-normalized background density.
pub fn compute_rho0(mass: f64, domain: &DomainGeometry) -> f64 {
    mass / domain.volume()
}

/// Interpolation corners with nonzero weight.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Stencil {
    items: [(usize, f64); 8],
    len: usize,
}

impl Stencil {
    fn push(&mut self, item: (usize, f64)) {
        self.items[self.len] = item;
        self.len += 1;
    }

    pub(crate) fn iter(&self) -> std::slice::Iter<'_, (usize, f64)> {
        self.items[..self.len].iter()
    }
}

impl IntoIterator for Stencil {
    type Item = (usize, f64);
    type IntoIter = std::iter::Take<std::array::IntoIter<(usize, f64), 8>>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.into_iter().take(self.len)
    }
}

/// Solved potential and field on a grid snapshot.
#[derive(Debug, Clone)]
pub struct FieldState {
    grid: PoissonGrid,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub e: Vec<Vec3>,
    pub rho0: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl FieldState {
    pub fn grid(&self) -> &PoissonGrid {
        &self.grid
    }

    /// `E = -grad phi` at `x` by multilinear interpolation of nodal values.
    pub fn eval_field(&self, x: &Vec3) -> Vec3 {
        let x = self.grid.domain.restrict(x);
        match self.grid.stencil(&x) {
            Ok(s) => s.iter().map(|(id, w)| self.e[*id] * *w).sum(),
            Err(_) => Vec3::zeros(),
        }
    }

    pub fn eval_potential(&self, x: &Vec3) -> f64 {
        match self.grid.stencil(&self.grid.domain.restrict(x)) {
            Ok(s) => s.iter().map(|(id, w)| self.phi[*id] * w).sum(),
            Err(_) => 0.0,
        }
    }

    pub fn max_field(&self) -> f64 {
        self.e.iter().map(|e| e.norm()).fold(0.0, f64::max)
    }

    /// `|sum_i (A phi - b)_i| / sum_i |b_i|`: net flux through the wall
    /// implied by the discrete solution.
    pub fn gauss_defect(&self) -> f64 {
        let g = &self.grid;
        let mut a = vec![0.0; g.len()];
        g.apply(&self.phi, &mut a);
        let b: Vec<f64> = (0..g.len()).map(|i| if g.active[i] { (self.rho[i] - self.rho0) * g.volume[i] } else { 0.0 }).collect();
        let net: f64 = a.iter().zip(&b).map(|(x, y)| x - y).sum();
        let scale: f64 = b.iter().map(|x| x.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        net.abs() / scale
    }

    /// Writes `phi.csv` and `E.csv` with node coordinates.
    pub fn dump(&self, dir: &Path) -> Result<(), FieldError> {
        let g = &self.grid;
        let mut phi = BufWriter::new(File::create(dir.join("phi.csv"))?);
        let mut e = BufWriter::new(File::create(dir.join("E.csv"))?);
        writeln!(phi, "x1,x2,x3,phi")?;
        writeln!(e, "x1,x2,x3,E1,E2,E3")?;
        for i in (0..g.len()).filter(|&i| g.active[i]) {
            let x = g.node_position(i);
            writeln!(phi, "{},{},{},{}", x.x, x.y, x.z, self.phi[i])?;
            writeln!(e, "{},{},{},{},{},{}", x.x, x.y, x.z, self.e[i].x, self.e[i].y, self.e[i].z)?;
        }
        Ok(())
    }
}

impl ForceField for FieldState {
    fn acceleration(&self, _t: f64, x: &Vec3) -> Vec3 {
        self.eval_field(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rectangle_disk_areas() {
        assert!((rect_disk_area(-2.0, 2.0, -2.0, 2.0, 1.0) - PI).abs() < 1e-14);
        assert!((rect_disk_area(0.0, 2.0, 0.0, 2.0, 1.0) - PI / 4.0).abs() < 1e-14);
        assert!((rect_disk_area(-0.5, 0.5, -0.5, 0.5, 1.0) - 1.0).abs() < 1e-14);
        // Half-plane cut: segment area r^2 acos(d) - d sqrt(1 - d^2).
        let d: f64 = 0.3;
        let seg = d.acos() - d * (1.0 - d * d).sqrt();
        assert!((rect_disk_area(0.3, 5.0, -5.0, 5.0, 1.0) - seg).abs() < 1e-14);
    }

    #[test]
    fn volume_fractions_sum_to_domain_volume() {
        for (d, tol) in [(DomainGeometry::unit_disk(), 1e-12), (DomainGeometry::unit_ball(), 1e-9)] {
            let g = PoissonGrid::new(&d, 16).unwrap();
            let total: f64 = g.volume.iter().sum();
            assert!(((total - d.volume()) / d.volume()).abs() < tol, "{total}");
        }
        let e = DomainGeometry::ellipsoid(Vec3::new(2.0, 1.0, 1.0), Vec3::zeros()).unwrap();
        let g = PoissonGrid::new(&e, 24).unwrap();
        let total: f64 = g.volume.iter().sum();
        assert!(((total - e.volume()) / e.volume()).abs() < 1e-9);
    }

    #[test]
    fn rho0_examples() {
        assert!((compute_rho0(4.0 * PI / 3.0, &DomainGeometry::unit_ball()) - 1.0).abs() < 1e-15);
        assert_eq!(compute_rho0(0.0, &DomainGeometry::unit_ball()), 0.0);
        let e = DomainGeometry::ellipsoid(Vec3::new(2.0, 1.0, 1.0), Vec3::zeros()).unwrap();
        assert!((compute_rho0(1.0, &e) - 3.0 / (8.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn deposit_at_node_and_cell_center() {
        let g = PoissonGrid::new(&DomainGeometry::unit_ball(), 8).unwrap();
        let id = g.flatten([4, 4, 4]);
        let m = g.deposit(&[g.node_position(id)], &[1.0]).unwrap();
        assert!((m[id] - 1.0).abs() < 1e-14);
        let x = g.node_position(id) - Vec3::repeat(0.5 * g.h);
        let m = g.deposit(&[x], &[1.0]).unwrap();
        let shares: Vec<f64> = m.iter().copied().filter(|v| *v > 0.0).collect();
        assert_eq!(shares.len(), 8);
        assert!(shares.iter().all(|s| (s - 0.125).abs() < 1e-14));
    }

    #[test]
    fn uniform_source_gives_zero_field() {
        let g = PoissonGrid::new(&DomainGeometry::unit_ball(), 16).unwrap();
        let mass: Vec<f64> = g.volume.clone();
        let f = g.solve(&mass, 1.0, 1e-10).unwrap();
        assert_eq!(f.iterations, 0);
        assert!(f.max_field() == 0.0 && f.phi.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn linear_potential_gives_constant_field() {
        let g = PoissonGrid::new(&DomainGeometry::unit_ball(), 12).unwrap();
        let phi: Vec<f64> = (0..g.len()).map(|i| g.node_position(i).x).collect();
        let f = g.field_from_potential(phi, vec![0.0; g.len()], 0.0, 0, 0.0);
        for x in [Vec3::zeros(), Vec3::new(0.9, 0.0, 0.1), Vec3::new(-0.3, 0.6, -0.7)] {
            assert!((f.eval_field(&x) - Vec3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
        }
    }
}
