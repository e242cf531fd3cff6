//! Lowest-order weak Galerkin assembly.
//!
//! Unknowns are piecewise constants on element interiors and on facets. The
//! weak gradient of a scalar lives in RT0 on each element, with basis
//! `φ_i = (x - P_i) / (d |K|)` where `P_i` is the vertex opposite local facet
//! `i`; `φ_i` has unit outward flux through facet `i` and none through the
//! others, and `div φ_i = 1/|K|`.
//!
//! Degrees of freedom are numbered interior-first, then facets, with vector
//! components interleaved per entity. Dirichlet facets are removed from the
//! unknowns; their couplings are kept as separate `*_boundary` blocks so the
//! caller can lift prescribed values into the right-hand side.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{DenseCholesky, DenseMatrix, SparseMatrix};
use crate::mesh::{Mesh, Point};
use crate::params::PhysicalParams;
use crate::quadrature;

/// Numbering of free and Dirichlet unknowns for a field with `components`
/// values per entity.
#[derive(Debug, Clone)]
pub struct DofMap {
    components: usize,
    n_elements: usize,
    n_facets: usize,
    free_facets: Vec<usize>,
    boundary_facets: Vec<usize>,
    /// Full index (`entity * components + c`, facets offset by `n_elements`)
    /// of every free unknown, in free order.
    free_full: Vec<usize>,
    boundary_full: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh, components: usize, dirichlet: &[bool]) -> Result<Self> {
        if dirichlet.len() != mesh.n_facets() {
            return Err(Error::DimensionMismatch {
                expected: mesh.n_facets(),
                got: dirichlet.len(),
            });
        }
        let n = mesh.n_elements();
        let free_facets: Vec<usize> = (0..mesh.n_facets()).filter(|&e| !dirichlet[e]).collect();
        let boundary_facets: Vec<usize> = (0..mesh.n_facets()).filter(|&e| dirichlet[e]).collect();
        let expand = |entities: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
            entities
                .flat_map(|ent| (0..components).map(move |c| ent * components + c))
                .collect()
        };
        let free_full = expand(&mut (0..n).chain(free_facets.iter().map(|e| n + e)));
        let boundary_full = expand(&mut boundary_facets.iter().map(|e| n + e));
        Ok(DofMap {
            components,
            n_elements: n,
            n_facets: mesh.n_facets(),
            free_facets,
            boundary_facets,
            free_full,
            boundary_full,
        })
    }

    /// Dirichlet conditions on every boundary facet.
    pub fn with_boundary(mesh: &Mesh, components: usize) -> Result<Self> {
        Self::new(mesh, components, mesh.boundary_flags())
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn n_elements(&self) -> usize {
        self.n_elements
    }

    pub fn n_free(&self) -> usize {
        self.free_full.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.boundary_full.len()
    }

    pub fn n_full(&self) -> usize {
        self.components * (self.n_elements + self.n_facets)
    }

    /// Free unknowns that live on element interiors; they come first.
    pub fn n_interior(&self) -> usize {
        self.components * self.n_elements
    }

    pub fn free_facets(&self) -> &[usize] {
        &self.free_facets
    }

    pub fn boundary_facets(&self) -> &[usize] {
        &self.boundary_facets
    }

    pub fn free_full(&self) -> &[usize] {
        &self.free_full
    }

    pub fn boundary_full(&self) -> &[usize] {
        &self.boundary_full
    }

    pub fn dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_facets];
        for &e in &self.boundary_facets {
            mask[e] = true;
        }
        mask
    }
}

/// Piecewise-constant WG field: one value block per element interior and per facet.
#[derive(Debug, Clone, PartialEq)]
pub struct WgField {
    pub components: usize,
    pub interior: Vec<f64>,
    pub facet: Vec<f64>,
    pub dirichlet_mask: Vec<bool>,
}

impl WgField {
    pub fn zeros(mesh: &Mesh, components: usize, dirichlet_mask: Vec<bool>) -> Self {
        WgField {
            components,
            interior: vec![0.0; components * mesh.n_elements()],
            facet: vec![0.0; components * mesh.n_facets()],
            dirichlet_mask,
        }
    }

    /// Element and facet averages of `f` (degree-2 quadrature).
    pub fn project<F>(mesh: &Mesh, components: usize, dirichlet_mask: Vec<bool>, f: F) -> Self
    where
        F: Fn(&Point) -> [f64; 3],
    {
        let mut field = Self::zeros(mesh, components, dirichlet_mask);
        for k in 0..mesh.n_elements() {
            let avg = average(&mesh.element_points(k), mesh.volume(k), &f);
            field.interior[k * components..(k + 1) * components]
                .copy_from_slice(&avg[..components]);
        }
        for e in 0..mesh.n_facets() {
            let avg = average(&mesh.facet_points(e), mesh.facet_measure(e), &f);
            field.facet[e * components..(e + 1) * components].copy_from_slice(&avg[..components]);
        }
        field
    }

    /// Rebuilds a field from free unknowns and Dirichlet values.
    pub fn from_parts(dofs: &DofMap, free: &[f64], boundary: &[f64]) -> Result<Self> {
        if free.len() != dofs.n_free() {
            return Err(Error::DimensionMismatch {
                expected: dofs.n_free(),
                got: free.len(),
            });
        }
        if boundary.len() != dofs.n_boundary() {
            return Err(Error::DimensionMismatch {
                expected: dofs.n_boundary(),
                got: boundary.len(),
            });
        }
        let mut full = vec![0.0; dofs.n_full()];
        for (&i, &v) in dofs.free_full.iter().zip(free) {
            full[i] = v;
        }
        for (&i, &v) in dofs.boundary_full.iter().zip(boundary) {
            full[i] = v;
        }
        let split = dofs.n_interior();
        Ok(WgField {
            components: dofs.components,
            facet: full.split_off(split),
            interior: full,
            dirichlet_mask: dofs.dirichlet_mask(),
        })
    }

    /// Concatenation `[interior, facet]`, indexed like [`DofMap::free_full`].
    pub fn full(&self) -> Vec<f64> {
        let mut v = self.interior.clone();
        v.extend_from_slice(&self.facet);
        v
    }

    pub fn free_values(&self, dofs: &DofMap) -> Vec<f64> {
        let full = self.full();
        dofs.free_full.iter().map(|&i| full[i]).collect()
    }

    pub fn boundary_values(&self, dofs: &DofMap) -> Vec<f64> {
        let full = self.full();
        dofs.boundary_full.iter().map(|&i| full[i]).collect()
    }

    pub fn facet_value(&self, e: usize, c: usize) -> f64 {
        self.facet[e * self.components + c]
    }

    pub fn interior_value(&self, k: usize, c: usize) -> f64 {
        self.interior[k * self.components + c]
    }
}

fn average<F: Fn(&Point) -> [f64; 3]>(verts: &[Point], measure: f64, f: &F) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for (x, w) in quadrature::map_rule(&quadrature::degree2(verts.len()), verts, measure) {
        let v = f(&x);
        for c in 0..3 {
            acc[c] += w * v[c];
        }
    }
    acc.map(|v| v / measure)
}

/// RT0 mass matrix `(φ_i, φ_j)_K`, computed exactly from barycentric moments.
fn rt0_mass(points: &[Point], dim: usize, volume: f64) -> DenseMatrix {
    let nv = dim + 1;
    let moment = |k: usize, l: usize| {
        volume * if k == l { 2.0 } else { 1.0 } / ((dim + 1) * (dim + 2)) as f64
    };
    let scale = 1.0 / (dim as f64 * volume).powi(2);
    DenseMatrix::from_fn(nv, nv, |i, j| {
        let mut s = 0.0;
        for k in 0..nv {
            for l in 0..nv {
                let mut pd = 0.0;
                for c in 0..dim {
                    pd += (points[k][c] - points[i][c]) * (points[l][c] - points[j][c]);
                }
                s += pd * moment(k, l);
            }
        }
        s * scale
    })
}

fn rt0_factor(mesh: &Mesh, k: usize) -> Result<DenseCholesky> {
    let degenerate = || Error::DegenerateElement {
        element: k,
        volume: mesh.volume(k),
    };
    if k >= mesh.n_elements() {
        return Err(Error::InvalidInput(format!("element {k} does not exist")));
    }
    let vol = mesh.volume(k);
    if !(vol > 0.0) {
        return Err(degenerate());
    }
    DenseCholesky::new(&rt0_mass(&mesh.element_points(k), mesh.dim(), vol))
        .map_err(|_| degenerate())
}

/// RT0 coefficients of the weak gradient of a scalar on element `k`.
///
/// `facet_values[i]` belongs to local facet `i` (the one opposite local vertex `i`).
pub fn weak_gradient_local(
    mesh: &Mesh,
    k: usize,
    interior_value: f64,
    facet_values: &[f64],
) -> Result<Vec<f64>> {
    let chol = rt0_factor(mesh, k)?;
    if facet_values.len() != mesh.dim() + 1 {
        return Err(Error::DimensionMismatch {
            expected: mesh.dim() + 1,
            got: facet_values.len(),
        });
    }
    let rhs: Vec<f64> = facet_values.iter().map(|v| v - interior_value).collect();
    Ok(chol.solve(&rhs))
}

/// Evaluates the RT0 field with coefficients `coef` on element `k` at `x`.
pub fn rt0_eval(mesh: &Mesh, k: usize, coef: &[f64], x: &Point) -> [f64; 3] {
    let d = mesh.dim();
    let scale = 1.0 / (d as f64 * mesh.volume(k));
    let mut out = [0.0; 3];
    for (i, &v) in mesh.element(k).iter().enumerate() {
        let p = mesh.vertex(v);
        for c in 0..d {
            out[c] += coef[i] * (x[c] - p[c]) * scale;
        }
    }
    out
}

/// `(∇_w · u)|_K = (1/|K|) Σ_e |e| u∂_e · n_e`; `facet_vectors` holds `d`
/// values per local facet. The interior value does not contribute.
pub fn weak_divergence_local(
    mesh: &Mesh,
    k: usize,
    _interior: &[f64],
    facet_vectors: &[f64],
) -> Result<f64> {
    if k >= mesh.n_elements() {
        return Err(Error::InvalidInput(format!("element {k} does not exist")));
    }
    let d = mesh.dim();
    if facet_vectors.len() != d * (d + 1) {
        return Err(Error::DimensionMismatch {
            expected: d * (d + 1),
            got: facet_vectors.len(),
        });
    }
    let mut flux = 0.0;
    for (i, &e) in mesh.element_facets(k).iter().enumerate() {
        let n = mesh.outward_normal(k, i);
        let u = &facet_vectors[i * d..(i + 1) * d];
        flux += mesh.facet_measure(e) * (0..d).map(|c| u[c] * n[c]).sum::<f64>();
    }
    Ok(flux / mesh.volume(k))
}

/// Scalar weak-Laplacian stiffness on element `k`, local order `[interior, facet_0..facet_d]`.
fn local_stiffness(mesh: &Mesh, k: usize) -> Result<DenseMatrix> {
    let chol = rt0_factor(mesh, k)?;
    let nf = mesh.dim() + 1;
    // G = [-1 | I]; stiffness = Gᵀ M⁻¹ G.
    let g = DenseMatrix::from_fn(nf, nf + 1, |i, j| match j {
        0 => -1.0,
        j if j == i + 1 => 1.0,
        _ => 0.0,
    });
    let minv_g = chol.solve_matrix(&g);
    Ok(g.transpose().matmul(&minv_g).symmetrized())
}

/// Scalar weak Laplacian over all entities (interiors, then all facets).
fn full_laplacian(mesh: &Mesh, components: usize) -> Result<SparseMatrix> {
    let n = mesh.n_elements();
    let nf = mesh.dim() + 1;
    let mut trip = Vec::with_capacity(n * (nf + 1) * (nf + 1) * components);
    for k in 0..n {
        let s = local_stiffness(mesh, k)?;
        let mut ent = vec![k];
        ent.extend(mesh.element_facets(k).iter().map(|e| n + e));
        for a in 0..=nf {
            for b in 0..=nf {
                for c in 0..components {
                    trip.push((ent[a] * components + c, ent[b] * components + c, s[(a, b)]));
                }
            }
        }
    }
    let size = components * (n + mesh.n_facets());
    SparseMatrix::from_triplets(size, size, &trip)
}

/// Weak divergence over all displacement entities: row `K` holds `|e| n_e^out`.
fn full_divergence(mesh: &Mesh) -> Result<SparseMatrix> {
    let n = mesh.n_elements();
    let d = mesh.dim();
    let mut trip = Vec::with_capacity(n * (d + 1) * d);
    for k in 0..n {
        for (i, &e) in mesh.element_facets(k).iter().enumerate() {
            let normal = mesh.outward_normal(k, i);
            for c in 0..d {
                trip.push((k, (n + e) * d + c, mesh.facet_measure(e) * normal[c]));
            }
        }
    }
    SparseMatrix::from_triplets(n, d * (n + mesh.n_facets()), &trip)
}

/// Grad-div block assembled element by element: `(∇_w·u, ∇_w·v)_K`.
fn full_grad_div(mesh: &Mesh) -> Result<SparseMatrix> {
    let n = mesh.n_elements();
    let d = mesh.dim();
    let mut trip = Vec::new();
    for k in 0..n {
        let mut local: Vec<(usize, f64)> = Vec::with_capacity(d * (d + 1));
        for (i, &e) in mesh.element_facets(k).iter().enumerate() {
            let normal = mesh.outward_normal(k, i);
            for c in 0..d {
                local.push(((n + e) * d + c, mesh.facet_measure(e) * normal[c]));
            }
        }
        let inv_vol = 1.0 / mesh.volume(k);
        for &(i, bi) in &local {
            for &(j, bj) in &local {
                trip.push((i, j, bi * bj * inv_vol));
            }
        }
    }
    let size = d * (n + mesh.n_facets());
    SparseMatrix::from_triplets(size, size, &trip)
}

/// Displacement blocks after Dirichlet elimination.
#[derive(Debug, Clone)]
pub struct ElasticityBlocks {
    pub dofs: DofMap,
    /// Vector weak Laplacian on free unknowns.
    pub a1: Arc<SparseMatrix>,
    pub a1_boundary: SparseMatrix,
    /// Grad-div block on free unknowns.
    pub a0: Arc<SparseMatrix>,
    pub a0_boundary: SparseMatrix,
    /// Weak divergence tested with interior pressures (`N` rows).
    pub b_int: Arc<SparseMatrix>,
    pub b_int_boundary: SparseMatrix,
    /// Element volumes, the diagonal of the interior pressure mass matrix.
    pub mass: Arc<Vec<f64>>,
}

impl ElasticityBlocks {
    pub fn mass_matrix(&self) -> SparseMatrix {
        SparseMatrix::from_diagonal(&self.mass)
    }

    /// `B = [B°; 0]` with `n_pressure_facets` zero rows appended.
    pub fn b_full(&self, n_pressure_facets: usize) -> SparseMatrix {
        let t: Vec<_> = self.b_int.triplets().collect();
        SparseMatrix::from_triplets(self.b_int.rows() + n_pressure_facets, self.b_int.cols(), &t)
            .expect("entries of B° stay in range")
    }

    /// `B° u` using free values and Dirichlet values together.
    pub fn divergence(&self, free: &[f64], boundary: &[f64]) -> Vec<f64> {
        let mut out = self.b_int.mul_vec(free);
        self.b_int_boundary.mul_vec_add(1.0, boundary, &mut out);
        out
    }
}

/// Assembles `A1`, `A0`, `B°` and `M°` with Dirichlet conditions on the boundary.
pub fn assemble_elasticity(mesh: &Mesh) -> Result<ElasticityBlocks> {
    let d = mesh.dim();
    let dofs = DofMap::with_boundary(mesh, d)?;
    let a1 = full_laplacian(mesh, d)?;
    let a0 = full_grad_div(mesh)?;
    let b = full_divergence(mesh)?;
    let (free, bnd) = (dofs.free_full.clone(), dofs.boundary_full.clone());
    let rows: Vec<usize> = (0..mesh.n_elements()).collect();
    Ok(ElasticityBlocks {
        a1: Arc::new(a1.submatrix(&free, &free)),
        a1_boundary: a1.submatrix(&free, &bnd),
        a0: Arc::new(a0.submatrix(&free, &free)),
        a0_boundary: a0.submatrix(&free, &bnd),
        b_int: Arc::new(b.submatrix(&rows, &free)),
        b_int_boundary: b.submatrix(&rows, &bnd),
        mass: Arc::new(mesh.volumes().to_vec()),
        dofs,
    })
}

/// Pressure blocks after Dirichlet elimination; free unknowns are
/// `[p° (N values), p∂ (free facets)]`.
#[derive(Debug, Clone)]
pub struct PressureBlocks {
    pub dofs: DofMap,
    pub a_p: Arc<SparseMatrix>,
    pub a_p_boundary: SparseMatrix,
    /// `c0 blockdiag(M°, 0) + κ Δt A_p`.
    pub d: Arc<SparseMatrix>,
    pub d_boundary: SparseMatrix,
    pub mass: Arc<Vec<f64>>,
}

impl PressureBlocks {
    pub fn n_interior(&self) -> usize {
        self.dofs.n_interior()
    }

    pub fn n_free_facets(&self) -> usize {
        self.dofs.n_free() - self.dofs.n_interior()
    }

    /// `(A_p°°, A_p°∂, A_p∂°, A_p∂∂)`.
    pub fn a_p_partition(&self) -> [SparseMatrix; 4] {
        let n = self.n_interior();
        let int: Vec<usize> = (0..n).collect();
        let fac: Vec<usize> = (n..self.dofs.n_free()).collect();
        [
            self.a_p.submatrix(&int, &int),
            self.a_p.submatrix(&int, &fac),
            self.a_p.submatrix(&fac, &int),
            self.a_p.submatrix(&fac, &fac),
        ]
    }
}

/// Assembles `A_p` and `D` with Dirichlet conditions on the boundary.
pub fn assemble_pressure(mesh: &Mesh, params: &PhysicalParams) -> Result<PressureBlocks> {
    params.validate()?;
    let dofs = DofMap::with_boundary(mesh, 1)?;
    let a_p = full_laplacian(mesh, 1)?;
    let mut mass_full = vec![0.0; dofs.n_full()];
    mass_full[..mesh.n_elements()].copy_from_slice(mesh.volumes());
    let d = SparseMatrix::linear_combination(
        params.c0,
        &SparseMatrix::from_diagonal(&mass_full),
        params.kappa * params.dt,
        &a_p,
    )?;
    let (free, bnd) = (dofs.free_full.clone(), dofs.boundary_full.clone());
    Ok(PressureBlocks {
        a_p: Arc::new(a_p.submatrix(&free, &free)),
        a_p_boundary: a_p.submatrix(&free, &bnd),
        d: Arc::new(d.submatrix(&free, &free)),
        d_boundary: d.submatrix(&free, &bnd),
        mass: Arc::new(mesh.volumes().to_vec()),
        dofs,
    })
}

/// All blocks of the poroelastic system.
#[derive(Debug, Clone)]
pub struct WgBlocks {
    pub elasticity: ElasticityBlocks,
    pub pressure: PressureBlocks,
}

impl WgBlocks {
    pub fn assemble(mesh: &Mesh, params: &PhysicalParams) -> Result<Self> {
        Ok(WgBlocks {
            elasticity: assemble_elasticity(mesh)?,
            pressure: assemble_pressure(mesh, params)?,
        })
    }

    /// `B = [B°; 0]` sized for the free pressure unknowns.
    pub fn b_full(&self) -> SparseMatrix {
        self.elasticity.b_full(self.pressure.n_free_facets())
    }
}

/// Previous time level entering the storage and coupling terms of `b2`.
#[derive(Debug, Clone, Copy)]
pub struct PreviousState<'a> {
    pub displacement: &'a WgField,
    pub pressure: &'a WgField,
}

/// Right-hand sides `(b1, b2)` on the free unknowns; facet blocks are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Loads {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

/// `b1`: interior entries `∫_K f`, facet entries zero.
pub fn assemble_body_force<F>(mesh: &Mesh, dofs: &DofMap, f: F) -> Vec<f64>
where
    F: Fn(&Point) -> [f64; 3],
{
    let d = dofs.components();
    let mut b1 = vec![0.0; dofs.n_free()];
    for k in 0..mesh.n_elements() {
        let avg = average(&mesh.element_points(k), mesh.volume(k), &f);
        for c in 0..d {
            b1[k * d + c] = avg[c] * mesh.volume(k);
        }
    }
    b1
}

/// Loads of one implicit Euler step:
/// `b2°_K = -Δt ∫_K s - α (∇_w·u_prev, 1)_K - c0 |K| p°_prev`.
pub fn assemble_loads<F, S>(
    mesh: &Mesh,
    blocks: &WgBlocks,
    f: F,
    s: S,
    params: &PhysicalParams,
    prev: PreviousState<'_>,
) -> Result<Loads>
where
    F: Fn(&Point) -> [f64; 3],
    S: Fn(&Point) -> f64,
{
    params.validate()?;
    let el = &blocks.elasticity;
    let b1 = assemble_body_force(mesh, &el.dofs, f);
    let div_prev = el.divergence(
        &prev.displacement.free_values(&el.dofs),
        &prev.displacement.boundary_values(&el.dofs),
    );
    let mut b2 = vec![0.0; blocks.pressure.dofs.n_free()];
    for k in 0..mesh.n_elements() {
        let vol = mesh.volume(k);
        let s_int = average(&mesh.element_points(k), vol, &|x: &Point| [s(x), 0.0, 0.0])[0] * vol;
        b2[k] = -params.dt * s_int
            - params.alpha * div_prev[k]
            - params.c0 * vol * prev.pressure.interior[k];
    }
    Ok(Loads { b1, b2 })
}

/// `‖∇u - ∇_w u_h‖` over the mesh for a vector field with exact Jacobian `grad(x)[c][j] = ∂u_c/∂x_j`.
pub fn weak_gradient_error<G>(mesh: &Mesh, u: &WgField, grad: G) -> Result<f64>
where
    G: Fn(&Point) -> [[f64; 3]; 3],
{
    let d = mesh.dim();
    let comps = u.components;
    let mut total = 0.0;
    for k in 0..mesh.n_elements() {
        let facets = mesh.element_facets(k);
        let coefs: Vec<Vec<f64>> = (0..comps)
            .map(|c| {
                let fv: Vec<f64> = facets.iter().map(|&e| u.facet_value(e, c)).collect();
                weak_gradient_local(mesh, k, u.interior_value(k, c), &fv)
            })
            .collect::<Result<_>>()?;
        total += quadrature::integrate(&mesh.element_points(k), mesh.volume(k), |x| {
            let g = grad(x);
            let mut s = 0.0;
            for (c, coef) in coefs.iter().enumerate() {
                let wg = rt0_eval(mesh, k, coef, x);
                for j in 0..d {
                    s += (g[c][j] - wg[j]).powi(2);
                }
            }
            s
        });
    }
    Ok(total.sqrt())
}

/// `‖p - p°‖` using interior values only.
pub fn interior_l2_error<P>(mesh: &Mesh, p: &WgField, exact: P) -> f64
where
    P: Fn(&Point) -> f64,
{
    let mut total = 0.0;
    for k in 0..mesh.n_elements() {
        let ph = p.interior_value(k, 0);
        total += quadrature::integrate(&mesh.element_points(k), mesh.volume(k), |x| {
            (exact(x) - ph).powi(2)
        });
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_structured_mesh;

    fn reference_triangle() -> Mesh {
        Mesh::from_parts(
            2,
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn constant_field_has_zero_weak_gradient() {
        let m = build_structured_mesh(3, 1).unwrap();
        for k in 0..m.n_elements() {
            let c = weak_gradient_local(&m, k, 2.5, &[2.5; 4]).unwrap();
            assert!(c.iter().all(|v| v.abs() < 1e-12), "{c:?}");
        }
    }

    #[test]
    fn reference_triangle_coefficients() {
        // Hand-integrated RT0 mass on the reference triangle:
        // [[1/6, 0, 0], [0, 1/3, -1/6], [0, -1/6, 1/3]].
        let m = reference_triangle();
        let c = weak_gradient_local(&m, 0, 0.0, &[1.0, 0.0, 0.0]).unwrap();
        for (a, b) in c.iter().zip([6.0, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
        let c = weak_gradient_local(&m, 0, 0.0, &[0.0, 1.0, 0.0]).unwrap();
        for (a, b) in c.iter().zip([0.0, 4.0, 2.0]) {
            assert!((a - b).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn linear_field_gives_exact_gradient() {
        for dim in [2, 3] {
            let m = build_structured_mesh(dim, 2).unwrap();
            let a = [0.3, -1.2, 0.7];
            let lin = |x: &Point| a[0] * x[0] + a[1] * x[1] + a[2] * x[2] * (dim == 3) as u8 as f64;
            for k in 0..m.n_elements() {
                let fv: Vec<f64> = m
                    .element_facets(k)
                    .iter()
                    .map(|&e| lin(&m.facet_centroid(e)))
                    .collect();
                let c = weak_gradient_local(&m, k, lin(&m.centroid(k)), &fv).unwrap();
                for x in m.element_points(k) {
                    let g = rt0_eval(&m, k, &c, &x);
                    for j in 0..dim {
                        assert!((g[j] - a[j]).abs() < 1e-11, "dim {dim} element {k}: {g:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn weak_divergence_examples() {
        let m = build_structured_mesh(2, 2).unwrap();
        for k in 0..m.n_elements() {
            assert_eq!(
                weak_divergence_local(&m, k, &[0.0, 0.0], &[0.0; 6]).unwrap(),
                0.0
            );
            let constant = [1.5, -0.5].repeat(3);
            assert!(
                weak_divergence_local(&m, k, &[0.0, 0.0], &constant)
                    .unwrap()
                    .abs()
                    < 1e-12
            );
            let ident: Vec<f64> = m
                .element_facets(k)
                .iter()
                .flat_map(|&e| m.facet_centroid(e)[..2].to_vec())
                .collect();
            assert!(
                (weak_divergence_local(&m, k, &[0.0, 0.0], &ident).unwrap() - 2.0).abs() < 1e-12
            );
        }
        let m3 = build_structured_mesh(3, 1).unwrap();
        let ident: Vec<f64> = m3
            .element_facets(0)
            .iter()
            .flat_map(|&e| m3.facet_centroid(e))
            .collect();
        assert!((weak_divergence_local(&m3, 0, &[0.0; 3], &ident).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_element_is_rejected() {
        assert!(matches!(
            weak_gradient_local(&reference_triangle(), 3, 0.0, &[0.0; 3]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn single_cell_dimensions() {
        let m = build_structured_mesh(2, 1).unwrap();
        let el = assemble_elasticity(&m).unwrap();
        assert_eq!((el.a1.rows(), el.a1.cols()), (6, 6));
        assert_eq!((el.b_int.rows(), el.b_int.cols()), (2, 6));
        assert_eq!(el.a1_boundary.cols(), 8);
    }

    #[test]
    fn grad_div_identity_and_null_space() {
        for (dim, n) in [(2, 2), (2, 4), (3, 1), (3, 2)] {
            let m = build_structured_mesh(dim, n).unwrap();
            let el = assemble_elasticity(&m).unwrap();
            let minv =
                SparseMatrix::from_diagonal(&el.mass.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
            let bt = el.b_int.transpose();
            let prod = bt.matmul(&minv).unwrap().matmul(&el.b_int).unwrap();
            let diff = SparseMatrix::linear_combination(1.0, &el.a0, -1.0, &prod).unwrap();
            assert!(diff.max_abs() <= 1e-12 * el.a0.max_abs());
            let ones = vec![1.0; m.n_elements()];
            let r = el.b_int.mul_transpose_vec(&ones);
            assert!(r.iter().all(|v| v.abs() <= 1e-12 * el.b_int.max_abs()));
        }
    }

    #[test]
    fn blocks_are_symmetric() {
        let m = build_structured_mesh(2, 3).unwrap();
        let blocks = WgBlocks::assemble(&m, &PhysicalParams::poro(1.0, 1e-3)).unwrap();
        for a in [
            &blocks.elasticity.a1,
            &blocks.elasticity.a0,
            &blocks.pressure.a_p,
            &blocks.pressure.d,
        ] {
            assert!(a.asymmetry() <= 1e-13 * a.max_abs());
        }
    }

    #[test]
    fn pressure_laplacian_kills_constants_before_elimination() {
        let m = build_structured_mesh(2, 2).unwrap();
        let full = full_laplacian(&m, 1).unwrap();
        let y = full.mul_vec(&vec![1.0; full.cols()]);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn storage_only_d_is_interior_mass() {
        let m = build_structured_mesh(2, 2).unwrap();
        let mut p = PhysicalParams::poro(1.0, 1e-3);
        p.kappa = 1e-300;
        p.dt = 1e-300;
        let pb = assemble_pressure(&m, &p).unwrap();
        let n = m.n_elements();
        for i in 0..pb.dofs.n_free() {
            let expect = if i < n { m.volume(i) } else { 0.0 };
            assert!((pb.d.get(i, i) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_force_load() {
        let m = build_structured_mesh(2, 3).unwrap();
        let dofs = DofMap::with_boundary(&m, 2).unwrap();
        let b1 = assemble_body_force(&m, &dofs, |_| [2.0, -3.0, 0.0]);
        for k in 0..m.n_elements() {
            assert!((b1[2 * k] - 2.0 * m.volume(k)).abs() < 1e-15);
            assert!((b1[2 * k + 1] + 3.0 * m.volume(k)).abs() < 1e-15);
        }
        assert!(b1[dofs.n_interior()..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_loads_for_zero_data() {
        let m = build_structured_mesh(2, 2).unwrap();
        let params = PhysicalParams::poro(1.0, 1e-3);
        let blocks = WgBlocks::assemble(&m, &params).unwrap();
        let u = WgField::zeros(&m, 2, m.boundary_flags().to_vec());
        let p = WgField::zeros(&m, 1, m.boundary_flags().to_vec());
        let loads = assemble_loads(
            &m,
            &blocks,
            |_| [0.0; 3],
            |_| 0.0,
            &params,
            PreviousState {
                displacement: &u,
                pressure: &p,
            },
        )
        .unwrap();
        assert!(loads.b1.iter().chain(&loads.b2).all(|&v| v == 0.0));
    }

    #[test]
    fn field_round_trip() {
        let m = build_structured_mesh(2, 2).unwrap();
        let dofs = DofMap::with_boundary(&m, 2).unwrap();
        let f = WgField::project(&m, 2, dofs.dirichlet_mask(), |x| [x[0], x[1] * x[1], 0.0]);
        let g =
            WgField::from_parts(&dofs, &f.free_values(&dofs), &f.boundary_values(&dofs)).unwrap();
        assert_eq!(f, g);
    }
}
