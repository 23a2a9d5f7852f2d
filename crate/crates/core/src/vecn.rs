//! Small dense vector helpers for points of the ball model (`Vec<f64>`, n >= 2).

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// a + c*b, in place on `a`.
pub fn axpy(a: &mut [f64], c: f64, b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += c * y;
    }
}

pub fn normalize(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    assert!(n > 0.0, "cannot normalize a zero vector");
    scale(a, 1.0 / n)
}

/// Any unit vector orthogonal to `a` (n >= 2).
pub fn orthogonal_unit(a: &[f64]) -> Vec<f64> {
    let n = a.len();
    assert!(n >= 2);
    // Pick the axis least aligned with `a` and Gram-Schmidt it.
    let (idx, _) = a
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.abs().partial_cmp(&y.1.abs()).unwrap())
        .unwrap();
    let mut e = vec![0.0; n];
    e[idx] = 1.0;
    let na2 = dot(a, a);
    if na2 > 0.0 {
        let c = dot(&e, a) / na2;
        axpy(&mut e, -c, a);
    }
    normalize(&e)
}

/// Barycenter of three points.
pub fn barycenter(p0: &[f64], p1: &[f64], p2: &[f64]) -> Vec<f64> {
    p0.iter()
        .zip(p1)
        .zip(p2)
        .map(|((a, b), c)| (a + b + c) / 3.0)
        .collect()
}

/// Distance from the origin to the (filled) triangle p0 p1 p2 in R^n.
///
/// Minimizes |p0 + s e1 + t e2| over the barycentric simplex: unconstrained
/// 2x2 normal equations, then fall back to the three edges when the solution
/// leaves the simplex.
pub fn origin_triangle_dist(p0: &[f64], p1: &[f64], p2: &[f64]) -> f64 {
    let e1 = sub(p1, p0);
    let e2 = sub(p2, p0);
    let a11 = dot(&e1, &e1);
    let a12 = dot(&e1, &e2);
    let a22 = dot(&e2, &e2);
    let b1 = -dot(&e1, p0);
    let b2 = -dot(&e2, p0);
    let det = a11 * a22 - a12 * a12;
    if det > 1e-300 {
        let s = (b1 * a22 - b2 * a12) / det;
        let t = (a11 * b2 - a12 * b1) / det;
        if s >= 0.0 && t >= 0.0 && s + t <= 1.0 {
            let mut p = p0.to_vec();
            axpy(&mut p, s, &e1);
            axpy(&mut p, t, &e2);
            return norm(&p);
        }
    }
    origin_segment_dist(p0, p1)
        .min(origin_segment_dist(p1, p2))
        .min(origin_segment_dist(p0, p2))
}

fn origin_segment_dist(a: &[f64], b: &[f64]) -> f64 {
    let e = sub(b, a);
    let ee = dot(&e, &e);
    let t = if ee > 0.0 {
        (-dot(a, &e) / ee).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut p = a.to_vec();
    axpy(&mut p, t, &e);
    norm(&p)
}

/// Deterministic chunked pairwise sum: fixed chunk boundaries, sequential sum
/// within a chunk, pairwise tree over chunk partials. The result is independent
/// of how many worker threads evaluated the chunks.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const CHUNK: usize = 256;
    if values.len() <= CHUNK {
        return values.iter().sum();
    }
    let mut partials: Vec<f64> = values.chunks(CHUNK).map(|c| c.iter().sum()).collect();
    while partials.len() > 1 {
        let mut next = Vec::with_capacity(partials.len().div_ceil(2));
        for pair in partials.chunks(2) {
            next.push(pair.iter().sum());
        }
        partials = next;
    }
    partials[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_unit_is_orthogonal() {
        let a = vec![0.3, -2.0, 1.5];
        let e = orthogonal_unit(&a);
        assert!(dot(&a, &e).abs() < 1e-12);
        assert!((norm(&e) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn origin_triangle_dist_cases() {
        // Triangle containing the projection of the origin.
        let d = origin_triangle_dist(&[-1.0, -1.0, 2.0], &[1.0, -1.0, 2.0], &[0.0, 2.0, 2.0]);
        assert!((d - 2.0).abs() < 1e-12);
        // Closest point on an edge.
        let d = origin_triangle_dist(&[1.0, -1.0, 0.0], &[1.0, 1.0, 0.0], &[2.0, 0.0, 0.0]);
        assert!((d - 1.0).abs() < 1e-12);
        // Closest point at a vertex.
        let d = origin_triangle_dist(&[3.0, 0.0, 0.0], &[4.0, 1.0, 0.0], &[4.0, -1.0, 0.0]);
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
    }
}
