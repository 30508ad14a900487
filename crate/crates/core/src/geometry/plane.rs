//! Least-squares plane fitting and small 3-vector helpers.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn centroid(points: &[Vec3]) -> Vec3 {
    let mut c = [0.0; 3];
    for p in points {
        c = add3(c, *p);
    }
    scale3(c, 1.0 / points.len() as f64)
}

/// Jacobi eigendecomposition of a symmetric 3x3 matrix.
/// Returns eigenvalues (ascending) and the matching unit eigenvectors.
fn eigen_sym3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 * (a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2] + 1e-300) {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // Rotate rows/columns p and q.
            let app = a[p][p];
            let aqq = a[q][q];
            let apq = a[p][q];
            a[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
            a[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            for r in 0..3 {
                if r != p && r != q {
                    let arp = a[r][p];
                    let arq = a[r][q];
                    a[r][p] = c * arp - s * arq;
                    a[p][r] = a[r][p];
                    a[r][q] = s * arp + c * arq;
                    a[q][r] = a[r][q];
                }
            }
            for r in 0..3 {
                let vrp = v[r][p];
                let vrq = v[r][q];
                v[r][p] = c * vrp - s * vrq;
                v[r][q] = s * vrp + c * vrq;
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].partial_cmp(&a[j][j]).unwrap());
    let vals = [a[order[0]][order[0]], a[order[1]][order[1]], a[order[2]][order[2]]];
    let vecs = [
        [v[0][order[0]], v[1][order[0]], v[2][order[0]]],
        [v[0][order[1]], v[1][order[1]], v[2][order[1]]],
        [v[0][order[2]], v[1][order[2]], v[2][order[2]]],
    ];
    (vals, vecs)
}

/// Result of [`fit_plane_least_squares`].
#[derive(Debug, Clone, Copy)]
pub struct PlaneFit {
    pub centroid: Vec3,
    /// Unit normal; sign fixed toward the +z axial direction.
    pub normal: Vec3,
    /// Sum of squared orthogonal distances to the plane.
    pub residual: f64,
}

/// Total-least-squares plane through the centroid: the normal is the
/// eigenvector of the smallest eigenvalue of the centered scatter matrix.
pub fn fit_plane_least_squares(points: &[Vec3]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    let c = centroid(points);
    let mut m = [[0.0f64; 3]; 3];
    for p in points {
        let d = sub3(*p, c);
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += d[i] * d[j];
            }
        }
    }
    let (vals, vecs) = eigen_sym3(m);
    // Collinear (or coincident) points leave the normal direction
    // underdetermined: the two smallest eigenvalues both vanish.
    if vals[1] <= 1e-12 * vals[2].max(1e-300) {
        return Err(Error::Fit("points are collinear or degenerate".into()));
    }
    let mut n = vecs[0];
    let len = norm3(n);
    n = scale3(n, 1.0 / len);
    // Deterministic sign: orient along the axial (+z) direction, with a
    // lateral tie break for pathological vertical planes.
    if n[2] < 0.0 || (n[2] == 0.0 && (n[0] < 0.0 || (n[0] == 0.0 && n[1] < 0.0))) {
        n = scale3(n, -1.0);
    }
    Ok(PlaneFit {
        centroid: c,
        normal: n,
        residual: vals[0].max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn flat_plane_recovered_exactly() {
        let pts: Vec<Vec3> = (0..12)
            .map(|i| {
                let a = i as f64;
                [a.cos() * 50.0, a.sin() * 80.0, 5.0]
            })
            .collect();
        let fit = fit_plane_least_squares(&pts).unwrap();
        assert!((fit.normal[0]).abs() < 1e-12);
        assert!((fit.normal[1]).abs() < 1e-12);
        assert!((fit.normal[2] - 1.0).abs() < 1e-12);
        assert!((fit.centroid[2] - 5.0).abs() < 1e-12);
        assert!(fit.residual < 1e-18);
    }

    #[test]
    fn tilted_plane_recovered_exactly() {
        // z = 0.1 x exactly; normal proportional to (-0.1, 0, 1).
        let pts: Vec<Vec3> = (0..20)
            .map(|i| {
                let x = (i as f64) * 13.0 - 100.0;
                let y = ((i * 7) % 11) as f64 * 9.0;
                [x, y, 0.1 * x]
            })
            .collect();
        let fit = fit_plane_least_squares(&pts).unwrap();
        let want = {
            let len = (0.1f64 * 0.1 + 1.0).sqrt();
            [-0.1 / len, 0.0, 1.0 / len]
        };
        for i in 0..3 {
            assert!(
                (fit.normal[i] - want[i]).abs() < 1e-9,
                "{:?} vs {want:?}",
                fit.normal
            );
        }
        assert!(fit.residual < 1e-12);
    }

    /// Direction-grid oracle: minimize the residual over densely sampled
    /// unit normals, refining around the best direction.
    fn grid_min_residual(points: &[Vec3]) -> f64 {
        let c = centroid(points);
        let residual = |n: Vec3| -> f64 {
            let len = norm3(n);
            let n = scale3(n, 1.0 / len);
            points
                .iter()
                .map(|p| {
                    let d = dot3(sub3(*p, c), n);
                    d * d
                })
                .sum()
        };
        // Coarse pass over a Fibonacci sphere, then local grid refinement.
        let mut best = f64::INFINITY;
        let mut best_n = [0.0, 0.0, 1.0];
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..4000 {
            let zc = 1.0 - 2.0 * (i as f64 + 0.5) / 4000.0;
            let r = (1.0 - zc * zc).sqrt();
            let th = golden * i as f64;
            let n = [r * th.cos(), r * th.sin(), zc];
            let res = residual(n);
            if res < best {
                best = res;
                best_n = n;
            }
        }
        let mut span = 0.05;
        for _ in 0..10 {
            let base = best_n;
            // Two tangent directions.
            let t1 = if base[2].abs() < 0.9 {
                cross3(base, [0.0, 0.0, 1.0])
            } else {
                cross3(base, [1.0, 0.0, 0.0])
            };
            let t1 = scale3(t1, 1.0 / norm3(t1));
            let t2 = cross3(base, t1);
            for i in -6i32..=6 {
                for j in -6i32..=6 {
                    let n = add3(
                        base,
                        add3(
                            scale3(t1, span * i as f64 / 6.0),
                            scale3(t2, span * j as f64 / 6.0),
                        ),
                    );
                    let res = residual(n);
                    if res < best {
                        best = res;
                        best_n = scale3(n, 1.0 / norm3(n));
                    }
                }
            }
            span *= 0.35;
        }
        best
    }

    #[test]
    fn noisy_plane_residual_matches_direction_grid_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..60)
            .map(|_| {
                let x: f64 = rng.random_range(-500.0..500.0);
                let y: f64 = rng.random_range(-500.0..500.0);
                let noise: f64 = rng.random_range(-10.0..10.0);
                [x, y, 0.08 * x - 0.03 * y + noise]
            })
            .collect();
        let fit = fit_plane_least_squares(&pts).unwrap();
        let oracle = grid_min_residual(&pts);
        let rel = (fit.residual - oracle).abs() / oracle;
        assert!(rel < 1e-6, "fit {} vs oracle {oracle}", fit.residual);
        // The eigen solution can never be beaten by a sampled direction.
        assert!(fit.residual <= oracle + oracle.abs() * 1e-9);
    }

    #[test]
    fn collinear_points_rejected() {
        let pts: Vec<Vec3> = (0..10).map(|i| [i as f64, 2.0 * i as f64, 0.0]).collect();
        assert!(matches!(
            fit_plane_least_squares(&pts),
            Err(Error::Fit(_))
        ));
        assert!(fit_plane_least_squares(&pts[..2]).is_err());
    }
}
