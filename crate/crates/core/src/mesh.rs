//! Structured simplicial meshes of the unit square and unit cube.
//!
//! Elements are stored as flat vertex-index arrays with stride `dim + 1`.
//! Local facet `i` of an element is the facet opposite its local vertex `i`,
//! so `element_facets(k)[i]` never contains `element(k)[i]`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

/// Sentinel for "no element" in [`Mesh::facet_elements`].
pub const NO_ELEMENT: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    vertices: Vec<Point>,
    elements: Vec<usize>,
    facets: Vec<usize>,
    element_facets: Vec<usize>,
    element_facet_signs: Vec<f64>,
    facet_elements: Vec<[usize; 2]>,
    volumes: Vec<f64>,
    facet_measures: Vec<f64>,
    facet_normals: Vec<Point>,
    boundary: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStats {
    pub n_elements: usize,
    pub n_facets: usize,
    pub n_boundary_facets: usize,
    pub h_max: f64,
    pub min_volume: f64,
    pub max_volume: f64,
}

/// Unit square split into `2n²` triangles, or unit cube into `6n³` Kuhn tetrahedra.
pub fn build_structured_mesh(dim: usize, n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "mesh subdivision count must be at least 1".into(),
        ));
    }
    match dim {
        2 => Mesh::from_parts(2, square_vertices(n), square_elements(n)),
        3 => Mesh::from_parts(3, cube_vertices(n), cube_elements(n)),
        _ => Err(Error::InvalidInput(format!(
            "unsupported mesh dimension {dim}"
        ))),
    }
}

/// Meshes with `start_n, 2 start_n, 4 start_n, ...` subdivisions.
pub fn refine_family(dim: usize, start_n: usize, levels: usize) -> Result<Vec<Mesh>> {
    if levels == 0 {
        return Err(Error::InvalidInput(
            "refine_family needs at least one level".into(),
        ));
    }
    (0..levels)
        .map(|l| build_structured_mesh(dim, start_n << l))
        .collect()
}

fn square_vertices(n: usize) -> Vec<Point> {
    let h = 1.0 / n as f64;
    let mut v = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            v.push([i as f64 * h, j as f64 * h, 0.0]);
        }
    }
    v
}

fn square_elements(n: usize) -> Vec<usize> {
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut e = Vec::with_capacity(6 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            e.extend_from_slice(&[v00, v10, v11]);
            e.extend_from_slice(&[v00, v11, v01]);
        }
    }
    e
}

fn cube_vertices(n: usize) -> Vec<Point> {
    let h = 1.0 / n as f64;
    let mut v = Vec::with_capacity((n + 1).pow(3));
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                v.push([i as f64 * h, j as f64 * h, k as f64 * h]);
            }
        }
    }
    v
}

const AXIS_PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

fn cube_elements(n: usize) -> Vec<usize> {
    let id = |c: [usize; 3]| (c[2] * (n + 1) + c[1]) * (n + 1) + c[0];
    let mut e = Vec::with_capacity(24 * n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                for perm in AXIS_PERMUTATIONS {
                    // Kuhn path from the lower corner to the upper corner.
                    let mut c = [i, j, k];
                    e.push(id(c));
                    for axis in perm {
                        c[axis] += 1;
                        e.push(id(c));
                    }
                }
            }
        }
    }
    e
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

impl Mesh {
    /// Builds facet connectivity, measures and normals from raw vertices and elements.
    /// Elements with negative orientation are reoriented by swapping their
    /// last two vertices.
    pub fn from_parts(dim: usize, vertices: Vec<Point>, mut elements: Vec<usize>) -> Result<Mesh> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidInput(format!(
                "unsupported mesh dimension {dim}"
            )));
        }
        let nv = dim + 1;
        if !elements.len().is_multiple_of(nv) {
            return Err(Error::InvalidInput(
                "element array length is not a multiple of dim+1".into(),
            ));
        }
        if let Some(&bad) = elements.iter().find(|&&v| v >= vertices.len()) {
            return Err(Error::InvalidInput(format!(
                "element references missing vertex {bad}"
            )));
        }
        let n_el = elements.len() / nv;

        let mut volumes = Vec::with_capacity(n_el);
        for k in 0..n_el {
            let el = &mut elements[k * nv..(k + 1) * nv];
            let vol = simplex_volume(dim, el.iter().map(|&v| vertices[v]));
            if vol.abs() <= f64::EPSILON * 1e-3 || !vol.is_finite() {
                return Err(Error::DegenerateElement {
                    element: k,
                    volume: vol,
                });
            }
            if vol < 0.0 {
                el.swap(nv - 2, nv - 1);
            }
            volumes.push(vol.abs());
        }

        let mut facet_ids: HashMap<[usize; 3], usize> = HashMap::new();
        let mut facets = Vec::new();
        let mut facet_elements: Vec<[usize; 2]> = Vec::new();
        let mut element_facets = vec![0; n_el * nv];
        for k in 0..n_el {
            let el = &elements[k * nv..(k + 1) * nv];
            for i in 0..nv {
                let mut key = [usize::MAX; 3];
                let mut m = 0;
                for (j, &v) in el.iter().enumerate() {
                    if j != i {
                        key[m] = v;
                        m += 1;
                    }
                }
                key[..dim].sort_unstable();
                let id = *facet_ids.entry(key).or_insert_with(|| {
                    facets.extend_from_slice(&key[..dim]);
                    facet_elements.push([NO_ELEMENT; 2]);
                    facet_elements.len() - 1
                });
                let slot = &mut facet_elements[id];
                if slot[0] == NO_ELEMENT {
                    slot[0] = k;
                } else if slot[1] == NO_ELEMENT {
                    slot[1] = k;
                } else {
                    return Err(Error::InvalidInput(format!(
                        "facet {id} shared by more than two elements"
                    )));
                }
                element_facets[k * nv + i] = id;
            }
        }
        let n_f = facet_elements.len();
        let boundary: Vec<bool> = facet_elements
            .iter()
            .map(|fe| fe[1] == NO_ELEMENT)
            .collect();

        // Normal orientation: pointing out of the lower-indexed neighbour, which is
        // always `facet_elements[e][0]` because elements are visited in order.
        let mut facet_measures = vec![0.0; n_f];
        let mut facet_normals = vec![[0.0; 3]; n_f];
        for e in 0..n_f {
            let fv = &facets[e * dim..(e + 1) * dim];
            let (meas, mut nrm) = facet_geometry(dim, fv.iter().map(|&v| vertices[v]));
            let k = facet_elements[e][0];
            let el = &elements[k * nv..(k + 1) * nv];
            let opposite = el
                .iter()
                .copied()
                .find(|v| !fv.contains(v))
                .expect("element has a vertex off the facet");
            let to_opposite = sub(&vertices[opposite], &vertices[fv[0]]);
            if dot(&nrm, &to_opposite) > 0.0 {
                nrm = [-nrm[0], -nrm[1], -nrm[2]];
            }
            facet_measures[e] = meas;
            facet_normals[e] = nrm;
        }
        let element_facet_signs = element_facets
            .iter()
            .enumerate()
            .map(|(slot, &e)| {
                if facet_elements[e][0] == slot / nv {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();

        Ok(Mesh {
            dim,
            vertices,
            elements,
            facets,
            element_facets,
            element_facet_signs,
            facet_elements,
            volumes,
            facet_measures,
            facet_normals,
            boundary,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.volumes.len()
    }

    pub fn n_facets(&self) -> usize {
        self.facet_measures.len()
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Vertex indices of element `k` (length `dim + 1`).
    pub fn element(&self, k: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[k * nv..(k + 1) * nv]
    }

    /// Sorted vertex indices of facet `e` (length `dim`).
    pub fn facet(&self, e: usize) -> &[usize] {
        &self.facets[e * self.dim..(e + 1) * self.dim]
    }

    /// Facet ids of element `k`; entry `i` is opposite local vertex `i`.
    pub fn element_facets(&self, k: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.element_facets[k * nv..(k + 1) * nv]
    }

    /// `+1` where the stored facet normal points out of element `k`, `-1` otherwise.
    pub fn element_facet_signs(&self, k: usize) -> &[f64] {
        let nv = self.dim + 1;
        &self.element_facet_signs[k * nv..(k + 1) * nv]
    }

    /// The (one or two) elements adjacent to facet `e`; the second is
    /// [`NO_ELEMENT`] on the boundary.
    pub fn facet_elements(&self, e: usize) -> [usize; 2] {
        self.facet_elements[e]
    }

    pub fn volume(&self, k: usize) -> f64 {
        self.volumes[k]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn facet_measure(&self, e: usize) -> f64 {
        self.facet_measures[e]
    }

    pub fn facet_normal(&self, e: usize) -> &Point {
        &self.facet_normals[e]
    }

    /// Unit normal of local facet `i` pointing out of element `k`.
    pub fn outward_normal(&self, k: usize, i: usize) -> Point {
        let e = self.element_facets(k)[i];
        let s = self.element_facet_signs(k)[i];
        let n = self.facet_normals[e];
        [s * n[0], s * n[1], s * n[2]]
    }

    pub fn is_boundary_facet(&self, e: usize) -> bool {
        self.boundary[e]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn centroid(&self, k: usize) -> Point {
        centroid_of(self.element(k).iter().map(|&v| self.vertices[v]))
    }

    pub fn facet_centroid(&self, e: usize) -> Point {
        centroid_of(self.facet(e).iter().map(|&v| self.vertices[v]))
    }

    pub fn element_points(&self, k: usize) -> Vec<Point> {
        self.element(k).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn facet_points(&self, e: usize) -> Vec<Point> {
        self.facet(e).iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn diameter(&self, k: usize) -> f64 {
        let pts = self.element_points(k);
        let mut h: f64 = 0.0;
        for a in 0..pts.len() {
            for b in a + 1..pts.len() {
                h = h.max(norm(&sub(&pts[a], &pts[b])));
            }
        }
        h
    }

    pub fn domain_measure(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn stats(&self) -> MeshStats {
        let (min_volume, max_volume) = self
            .volumes
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        MeshStats {
            n_elements: self.n_elements(),
            n_facets: self.n_facets(),
            n_boundary_facets: self.boundary.iter().filter(|&&b| b).count(),
            h_max: (0..self.n_elements())
                .map(|k| self.diameter(k))
                .fold(0.0, f64::max),
            min_volume,
            max_volume,
        }
    }

    /// `max|K| / min|K|`.
    pub fn quasi_uniformity_ratio(&self) -> f64 {
        let s = self.stats();
        s.max_volume / s.min_volume
    }

    /// Plain-text dump: header `dim N N_f`, then vertex, element and facet lines
    /// (whitespace separated, 0-based indices).
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "{} {} {}",
            self.dim,
            self.n_elements(),
            self.n_facets()
        )?;
        writeln!(out, "{}", self.n_vertices())?;
        let mut line = String::new();
        for p in &self.vertices {
            line.clear();
            for (c, x) in p[..self.dim].iter().enumerate() {
                if c > 0 {
                    line.push(' ');
                }
                write!(line, "{x:.17e}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        for k in 0..self.n_elements() {
            writeln!(out, "{}", join(self.element(k)))?;
        }
        for e in 0..self.n_facets() {
            writeln!(out, "{}", join(self.facet(e)))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Mesh::write_text`]. Connectivity is
    /// rebuilt from the elements; the facet lines are checked against it.
    pub fn read_text<R: Read>(input: R) -> Result<Mesh> {
        let mut lines = BufReader::new(input).lines();
        let mut next = || -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("unexpected end of mesh file".into()))?
                .map_err(|e| Error::Parse(e.to_string()))?;
            Ok(line.split_whitespace().map(str::to_owned).collect())
        };
        let header = next()?;
        let nums: Vec<usize> = parse_all(&header)?;
        let [dim, n_el, n_f] = nums[..] else {
            return Err(Error::Parse("mesh header must be `dim N N_f`".into()));
        };
        let n_vert: usize = parse_all(&next()?)?
            .first()
            .copied()
            .ok_or_else(|| Error::Parse("missing vertex count".into()))?;
        let mut vertices = Vec::with_capacity(n_vert);
        for _ in 0..n_vert {
            let xs: Vec<f64> = parse_all(&next()?)?;
            if xs.len() != dim {
                return Err(Error::Parse("vertex line has wrong arity".into()));
            }
            let mut p = [0.0; 3];
            p[..dim].copy_from_slice(&xs);
            vertices.push(p);
        }
        let mut elements = Vec::with_capacity(n_el * (dim + 1));
        for _ in 0..n_el {
            let ids: Vec<usize> = parse_all(&next()?)?;
            if ids.len() != dim + 1 {
                return Err(Error::Parse("element line has wrong arity".into()));
            }
            elements.extend(ids);
        }
        let mesh = Mesh::from_parts(dim, vertices, elements)?;
        if mesh.n_facets() != n_f {
            return Err(Error::Parse(format!(
                "header says {n_f} facets, connectivity gives {}",
                mesh.n_facets()
            )));
        }
        for e in 0..n_f {
            let ids: Vec<usize> = parse_all(&next()?)?;
            if ids != mesh.facet(e) {
                return Err(Error::Parse(format!(
                    "facet line {e} does not match connectivity"
                )));
            }
        }
        Ok(mesh)
    }
}

fn join(ids: &[usize]) -> String {
    ids.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_all<T: std::str::FromStr>(tokens: &[String]) -> Result<Vec<T>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::Parse(format!("bad token `{t}`")))
        })
        .collect()
}

fn centroid_of(points: impl Iterator<Item = Point>) -> Point {
    let mut c = [0.0; 3];
    let mut m = 0.0;
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
        m += 1.0;
    }
    c.map(|x| x / m)
}

/// Signed simplex volume; positive for counter-clockwise (2D) or
/// right-handed (3D) vertex order.
fn simplex_volume(dim: usize, mut pts: impl Iterator<Item = Point>) -> f64 {
    let p0 = pts.next().unwrap();
    let e: Vec<Point> = pts.map(|p| sub(&p, &p0)).collect();
    if dim == 2 {
        0.5 * (e[0][0] * e[1][1] - e[0][1] * e[1][0])
    } else {
        dot(&e[0], &cross(&e[1], &e[2])) / 6.0
    }
}

fn facet_geometry(dim: usize, mut pts: impl Iterator<Item = Point>) -> (f64, Point) {
    let p0 = pts.next().unwrap();
    if dim == 2 {
        let t = sub(&pts.next().unwrap(), &p0);
        let len = norm(&t);
        (len, [t[1] / len, -t[0] / len, 0.0])
    } else {
        let a = sub(&pts.next().unwrap(), &p0);
        let b = sub(&pts.next().unwrap(), &p0);
        let c = cross(&a, &b);
        let twice_area = norm(&c);
        (0.5 * twice_area, c.map(|x| x / twice_area))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_surface_residual(mesh: &Mesh, k: usize) -> f64 {
        let mut s = [0.0; 3];
        for i in 0..=mesh.dim() {
            let e = mesh.element_facets(k)[i];
            let n = mesh.outward_normal(k, i);
            for a in 0..3 {
                s[a] += mesh.facet_measure(e) * n[a];
            }
        }
        norm(&s)
    }

    #[test]
    fn unit_square_single_cell() {
        let m = build_structured_mesh(2, 1).unwrap();
        let s = m.stats();
        assert_eq!((s.n_elements, s.n_facets, m.n_vertices()), (2, 5, 4));
        assert_eq!(s.n_boundary_facets, 4);
    }

    #[test]
    fn two_by_two_square_counts() {
        // 6 horizontal + 6 vertical + 4 diagonal edges
        let m = build_structured_mesh(2, 2).unwrap();
        let s = m.stats();
        assert_eq!((s.n_elements, s.n_facets, s.n_boundary_facets), (8, 16, 8));
    }

    #[test]
    fn kuhn_cube() {
        let m = build_structured_mesh(3, 1).unwrap();
        let s = m.stats();
        assert_eq!(s.n_elements, 6);
        assert_eq!(s.n_boundary_facets, 12);
        assert!((m.domain_measure() - 1.0).abs() < 1e-12);
        assert!((s.max_volume - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_structured_mesh(2, 0).is_err());
        assert!(build_structured_mesh(4, 2).is_err());
        assert!(refine_family(2, 4, 0).is_err());
    }

    #[test]
    fn family_sizes() {
        let f = refine_family(2, 16, 3).unwrap();
        let n: Vec<usize> = f.iter().map(Mesh::n_elements).collect();
        assert_eq!(n, vec![512, 2048, 8192]);
        let f3 = refine_family(3, 2, 2).unwrap();
        assert_eq!(
            f3.iter().map(Mesh::n_elements).collect::<Vec<_>>(),
            vec![48, 384]
        );
        let single = refine_family(2, 3, 1).unwrap();
        let direct = build_structured_mesh(2, 3).unwrap();
        assert_eq!(single[0].elements, direct.elements);
        for m in f.iter().chain(&f3) {
            assert!((m.quasi_uniformity_ratio() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invariants_hold() {
        for (dim, n) in [(2, 1), (2, 3), (2, 5), (3, 1), (3, 2), (3, 3)] {
            let m = build_structured_mesh(dim, n).unwrap();
            assert!(
                (m.domain_measure() - 1.0).abs() < 1e-12,
                "measure {dim} {n}"
            );
            for k in 0..m.n_elements() {
                assert!(m.volume(k) > 0.0);
                assert!(closed_surface_residual(&m, k) < 1e-12);
            }
            for e in 0..m.n_facets() {
                let [a, b] = m.facet_elements(e);
                assert_eq!(m.is_boundary_facet(e), b == NO_ELEMENT);
                if b != NO_ELEMENT {
                    assert!(a < b);
                    let sa = m.element_facets(a).iter().position(|&f| f == e).unwrap();
                    let sb = m.element_facets(b).iter().position(|&f| f == e).unwrap();
                    assert_eq!(m.element_facet_signs(a)[sa], -m.element_facet_signs(b)[sb]);
                } else {
                    // boundary normals point out of the unit box
                    let c = m.facet_centroid(e);
                    let nrm = m.facet_normal(e);
                    let probe: Point = [
                        c[0] + 1e-3 * nrm[0],
                        c[1] + 1e-3 * nrm[1],
                        c[2] + 1e-3 * nrm[2],
                    ];
                    assert!(probe[..dim].iter().any(|&x| !(0.0..=1.0).contains(&x)));
                }
                assert!((norm(m.facet_normal(e)) - 1.0).abs() < 1e-14);
            }
            // local facet i does not contain local vertex i
            for k in 0..m.n_elements() {
                for i in 0..=dim {
                    assert!(!m.facet(m.element_facets(k)[i]).contains(&m.element(k)[i]));
                }
            }
        }
    }

    #[test]
    fn euler_characteristic_2d() {
        for n in 1..6 {
            let m = build_structured_mesh(2, n).unwrap();
            let chi = m.n_vertices() as i64 - m.n_facets() as i64 + m.n_elements() as i64;
            assert_eq!(chi, 1);
        }
    }

    #[test]
    fn facet_count_matches_distinct_subsets() {
        let m = build_structured_mesh(3, 2).unwrap();
        let mut set = std::collections::BTreeSet::new();
        for k in 0..m.n_elements() {
            let el = m.element(k);
            for skip in 0..4 {
                let mut f: Vec<usize> = el
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != skip)
                    .map(|(_, &v)| v)
                    .collect();
                f.sort_unstable();
                set.insert(f);
            }
        }
        assert_eq!(set.len(), m.n_facets());
    }

    #[test]
    fn text_round_trip() {
        for dim in [2, 3] {
            let m = build_structured_mesh(dim, 2).unwrap();
            let mut buf = Vec::new();
            m.write_text(&mut buf).unwrap();
            let back = Mesh::read_text(buf.as_slice()).unwrap();
            assert_eq!(back.elements, m.elements);
            assert_eq!(back.facets, m.facets);
            assert_eq!(back.vertices, m.vertices);
        }
        assert!(Mesh::read_text("2 1".as_bytes()).is_err());
    }
}
