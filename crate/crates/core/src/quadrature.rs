//! Simplex quadrature rules in barycentric form.

use crate::mesh::Point;

/// Barycentric points and weights summing to 1; scale by the simplex measure.
#[derive(Debug, Clone, Copy)]
pub struct Rule {
    pub points: &'static [&'static [f64]],
    pub weights: &'static [f64],
}

const TRI_A: f64 = 2.0 / 3.0;
const TRI_B: f64 = 1.0 / 6.0;
const TET_A: f64 = 0.585_410_196_624_968_5;
const TET_B: f64 = 0.138_196_601_125_010_5;
const SEG_A: f64 = 0.788_675_134_594_812_9;
const SEG_B: f64 = 0.211_324_865_405_187_1;

/// Degree-2 rule on a simplex with `n_vertices` vertices (2, 3 or 4).
pub fn degree2(n_vertices: usize) -> Rule {
    match n_vertices {
        2 => Rule {
            points: &[&[SEG_A, SEG_B], &[SEG_B, SEG_A]],
            weights: &[0.5, 0.5],
        },
        3 => Rule {
            points: &[
                &[TRI_A, TRI_B, TRI_B],
                &[TRI_B, TRI_A, TRI_B],
                &[TRI_B, TRI_B, TRI_A],
            ],
            weights: &[1.0 / 3.0; 3],
        },
        4 => Rule {
            points: &[
                &[TET_A, TET_B, TET_B, TET_B],
                &[TET_B, TET_A, TET_B, TET_B],
                &[TET_B, TET_B, TET_A, TET_B],
                &[TET_B, TET_B, TET_B, TET_A],
            ],
            weights: &[0.25; 4],
        },
        _ => panic!("no simplex rule for {n_vertices} vertices"),
    }
}

/// Physical quadrature points and weights on the simplex `verts`.
pub fn map_rule(rule: &Rule, verts: &[Point], measure: f64) -> Vec<(Point, f64)> {
    rule.points
        .iter()
        .zip(rule.weights)
        .map(|(bary, w)| {
            let mut x = [0.0; 3];
            for (lam, v) in bary.iter().zip(verts) {
                for c in 0..3 {
                    x[c] += lam * v[c];
                }
            }
            (x, w * measure)
        })
        .collect()
}

/// `∫ f` over the simplex with the degree-2 rule.
pub fn integrate<T, F>(verts: &[Point], measure: f64, f: F) -> T
where
    T: Default + std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
    F: Fn(&Point) -> T,
{
    let mut acc = T::default();
    for (x, w) in map_rule(&degree2(verts.len()), verts, measure) {
        acc += f(&x) * w;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for nv in 2..=4 {
            let r = degree2(nv);
            assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(r
                .points
                .iter()
                .all(|p| p.len() == nv && (p.iter().sum::<f64>() - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn exact_for_quadratics_on_triangle() {
        // ∫ x² over the reference triangle is 1/12.
        let v = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let val: f64 = integrate(&v, 0.5, |x| x[0] * x[0]);
        assert!((val - 1.0 / 12.0).abs() < 1e-15);
        let xy: f64 = integrate(&v, 0.5, |x| x[0] * x[1]);
        assert!((xy - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn exact_for_quadratics_on_tet_and_segment() {
        let v = [
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        let val: f64 = integrate(&v, 1.0 / 6.0, |x| x[0] * x[0]);
        assert!((val - 1.0 / 60.0).abs() < 1e-15);
        let s = [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let val: f64 = integrate(&s, 2.0, |x| x[0] * x[0]);
        assert!((val - 8.0 / 3.0).abs() < 1e-14);
    }
}
