//! Small fixed-size vector, matrix and quaternion helpers on plain arrays.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
/// Row-major 3×3 matrix.
pub type Mat3<T> = [[T; 3]; 3];
/// Quaternion stored as `[w, x, y, z]`.
pub type Quat<T> = [T; 4];

#[inline]
pub fn add<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Real>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Real>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

/// Returns `None` for vectors shorter than `eps`.
#[inline]
pub fn normalize<T: Real>(a: Vec3<T>, eps: T) -> Option<Vec3<T>> {
    let n = norm(a);
    if n < eps {
        None
    } else {
        Some(scale(a, T::one() / n))
    }
}

/// Adds `s * b` to `a` in place.
#[inline]
pub fn axpy<T: Real>(a: &mut Vec3<T>, s: T, b: Vec3<T>) {
    a[0] += s * b[0];
    a[1] += s * b[1];
    a[2] += s * b[2];
}

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

#[inline]
pub fn mat_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

#[inline]
pub fn mat_t_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    [
        [m[0][0], m[1][0], m[2][0]],
        [m[0][1], m[1][1], m[2][1]],
        [m[0][2], m[1][2], m[2][2]],
    ]
}

#[inline]
pub fn column<T: Real>(m: &Mat3<T>, j: usize) -> Vec3<T> {
    [m[0][j], m[1][j], m[2][j]]
}

/// Builds a matrix whose columns are `a`, `b`, `c`.
pub fn from_columns<T: Real>(a: Vec3<T>, b: Vec3<T>, c: Vec3<T>) -> Mat3<T> {
    [[a[0], b[0], c[0]], [a[1], b[1], c[1]], [a[2], b[2], c[2]]]
}

/// Largest absolute entry of `MᵀM − I`.
pub fn orthonormality_residual<T: Real>(m: &Mat3<T>) -> T {
    let mtm = mat_mul(&transpose(m), m);
    let mut worst = T::zero();
    for (i, row) in mtm.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let target = if i == j { T::one() } else { T::zero() };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

pub fn determinant<T: Real>(m: &Mat3<T>) -> T {
    dot(m[0], cross(m[1], m[2]))
}

/// Rodrigues' formula for an axis-angle vector (radians).
pub fn axis_angle_to_matrix<T: Real>(r: Vec3<T>) -> Mat3<T> {
    let theta = norm(r);
    let o = T::one();
    if theta < T::lit(1e-12) {
        // first-order expansion: I + [r]×
        return [[o, -r[2], r[1]], [r[2], o, -r[0]], [-r[1], r[0], o]];
    }
    let k = scale(r, o / theta);
    let (s, c) = theta.sin_cos();
    let v = o - c;
    [
        [
            c + k[0] * k[0] * v,
            k[0] * k[1] * v - k[2] * s,
            k[0] * k[2] * v + k[1] * s,
        ],
        [
            k[1] * k[0] * v + k[2] * s,
            c + k[1] * k[1] * v,
            k[1] * k[2] * v - k[0] * s,
        ],
        [
            k[2] * k[0] * v - k[1] * s,
            k[2] * k[1] * v + k[0] * s,
            c + k[2] * k[2] * v,
        ],
    ]
}

pub fn quat_identity<T: Real>() -> Quat<T> {
    [T::one(), T::zero(), T::zero(), T::zero()]
}

#[inline]
pub fn quat_norm<T: Real>(q: Quat<T>) -> T {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

/// Hamilton product `a ⊗ b`.
#[inline]
pub fn quat_mul<T: Real>(a: Quat<T>, b: Quat<T>) -> Quat<T> {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Gradient of `a ⊗ b` with respect to `b`, given the output gradient.
#[inline]
pub fn quat_mul_backward_rhs<T: Real>(a: Quat<T>, g: Quat<T>) -> Quat<T> {
    // a ⊗ b = L(a) b; returns L(a)ᵀ g.
    [
        a[0] * g[0] + a[1] * g[1] + a[2] * g[2] + a[3] * g[3],
        -a[1] * g[0] + a[0] * g[1] + a[3] * g[2] - a[2] * g[3],
        -a[2] * g[0] - a[3] * g[1] + a[0] * g[2] + a[1] * g[3],
        -a[3] * g[0] + a[2] * g[1] - a[1] * g[2] + a[0] * g[3],
    ]
}

/// Rotation matrix of a unit quaternion. The input is used as given.
pub fn quat_to_matrix<T: Real>(q: Quat<T>) -> Mat3<T> {
    let [w, x, y, z] = q;
    let two = T::lit(2.0);
    let o = T::one();
    [
        [
            o - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            o - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            o - two * (x * x + y * y),
        ],
    ]
}

/// Gradient of [`quat_to_matrix`] with respect to the quaternion components.
pub fn quat_to_matrix_backward<T: Real>(q: Quat<T>, g: &Mat3<T>) -> Quat<T> {
    let [w, x, y, z] = q;
    let two = T::lit(2.0);
    let zero = T::zero();
    let dw = [[zero, -z, y], [z, zero, -x], [-y, x, zero]];
    let dx = [[zero, y, z], [y, -two * x, -w], [z, w, -two * x]];
    let dy = [[-two * y, x, w], [x, zero, z], [-w, z, -two * y]];
    let dz = [[-two * z, -w, x], [w, -two * z, y], [x, y, zero]];
    let contract = |d: [[T; 3]; 3]| {
        let mut s = zero;
        for i in 0..3 {
            for j in 0..3 {
                s += d[i][j] * g[i][j];
            }
        }
        two * s
    };
    [contract(dw), contract(dx), contract(dy), contract(dz)]
}

/// Quaternion of a proper rotation matrix (Shepperd's method), `w ≥ 0`.
pub fn matrix_to_quat<T: Real>(m: &Mat3<T>) -> Quat<T> {
    let one = T::one();
    let quarter = T::lit(0.25);
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > T::zero() {
        let s = (trace + one).sqrt() * T::lit(2.0);
        [
            quarter * s,
            (m[2][1] - m[1][2]) / s,
            (m[0][2] - m[2][0]) / s,
            (m[1][0] - m[0][1]) / s,
        ]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
        [
            (m[2][1] - m[1][2]) / s,
            quarter * s,
            (m[0][1] + m[1][0]) / s,
            (m[0][2] + m[2][0]) / s,
        ]
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
        [
            (m[0][2] - m[2][0]) / s,
            (m[0][1] + m[1][0]) / s,
            quarter * s,
            (m[1][2] + m[2][1]) / s,
        ]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
        [
            (m[1][0] - m[0][1]) / s,
            (m[0][2] + m[2][0]) / s,
            (m[1][2] + m[2][1]) / s,
            quarter * s,
        ]
    };
    let n = quat_norm(q);
    let q = q.map(|c| c / n);
    if q[0] < T::zero() {
        q.map(|c| -c)
    } else {
        q
    }
}

/// Normalizes `q`; returns the unit quaternion and the input norm.
#[inline]
pub fn quat_normalize<T: Real>(q: Quat<T>) -> (Quat<T>, T) {
    let n = quat_norm(q);
    (q.map(|c| c / n), n)
}

/// Backward of `q / |q|` given the normalized value and the input norm.
#[inline]
pub fn quat_normalize_backward<T: Real>(unit: Quat<T>, norm: T, g: Quat<T>) -> Quat<T> {
    let d = unit[0] * g[0] + unit[1] * g[1] + unit[2] * g[2] + unit[3] * g[3];
    [
        (g[0] - unit[0] * d) / norm,
        (g[1] - unit[1] * d) / norm,
        (g[2] - unit[2] * d) / norm,
        (g[3] - unit[3] * d) / norm,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_quat(seed: u64) -> Quat<f64> {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        [next(), next(), next(), next()]
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        for seed in 0..50 {
            let (q, _) = quat_normalize(random_quat(seed));
            let q = if q[0] < 0.0 { q.map(|c| -c) } else { q };
            let m = quat_to_matrix(q);
            assert!(orthonormality_residual(&m) < 1e-12);
            assert!((determinant(&m) - 1.0).abs() < 1e-12);
            let back = matrix_to_quat(&m);
            for k in 0..4 {
                assert!((back[k] - q[k]).abs() < 1e-10, "{back:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn quaternion_product_matches_matrix_product() {
        let (a, _) = quat_normalize(random_quat(3));
        let (b, _) = quat_normalize(random_quat(9));
        let lhs = quat_to_matrix(quat_mul(a, b));
        let rhs = mat_mul(&quat_to_matrix(a), &quat_to_matrix(b));
        for i in 0..3 {
            for j in 0..3 {
                assert!((lhs[i][j] - rhs[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quat_matrix_backward_matches_finite_differences() {
        let q = random_quat(17);
        let g = [[0.3, -1.2, 0.5], [0.7, 0.1, -0.4], [-0.9, 0.2, 1.1]];
        let f = |q: Quat<f64>| {
            let m = quat_to_matrix(q);
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += m[i][j] * g[i][j];
                }
            }
            s
        };
        let analytic = quat_to_matrix_backward(q, &g);
        for k in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (f(qp) - f(qm)) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-7, "k={k} fd={fd} an={}", analytic[k]);
        }
    }

    #[test]
    fn rodrigues_quarter_turn_about_z() {
        let m = axis_angle_to_matrix([0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let v = mat_vec(&m, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15 && v[2].abs() < 1e-15);
    }
}
