//! Closed-form equations of motion.
//!
//! Latent states are laid out as generalized coordinates followed by their
//! velocities. Angles are measured from the upright position for the
//! pendulum and the cart-pole, and from the hanging position for the
//! acrobot's first link (second link angle is relative to the first).

pub const GRAVITY: f64 = 9.81;

/// Pendulum: ξ = (mass, length, damping).
#[inline]
pub fn pendulum_accel(q: &[f64], qd: &[f64], u: &[f64], xi: &[f64], out: &mut [f64]) {
    let (m, l, b) = (xi[0], xi[1], xi[2]);
    out[0] = 3.0 * GRAVITY / (2.0 * l) * q[0].sin() + 3.0 / (m * l * l) * (u[0] - b * qd[0]);
}

/// Cart-pole with a uniform rod: ξ = (cart mass, pole mass, pole length,
/// cart friction, joint friction). Coordinates are (x, θ).
#[inline]
pub fn cartpole_accel(q: &[f64], qd: &[f64], u: &[f64], xi: &[f64], out: &mut [f64]) {
    let (mc, mp, len, bc, bp) = (xi[0], xi[1], xi[2], xi[3], xi[4]);
    let lc = 0.5 * len;
    let (s, c) = q[1].sin_cos();
    let (xd, thd) = (qd[0], qd[1]);
    let a11 = mc + mp;
    let a12 = mp * lc * c;
    let a22 = 4.0 / 3.0 * mp * lc * lc;
    let r1 = u[0] - bc * xd + mp * lc * s * thd * thd;
    let r2 = mp * GRAVITY * lc * s - bp * thd;
    let det = a11 * a22 - a12 * a12;
    out[0] = (a22 * r1 - a12 * r2) / det;
    out[1] = (a11 * r2 - a12 * r1) / det;
}

/// Two-link acrobot with torque on both joints: ξ = (m1, m2, l1, l2, b1, b2).
#[inline]
pub fn acrobot_accel(q: &[f64], qd: &[f64], u: &[f64], xi: &[f64], out: &mut [f64]) {
    let (m1, m2, l1, l2, b1, b2) = (xi[0], xi[1], xi[2], xi[3], xi[4], xi[5]);
    let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
    let (s2, c2) = q[1].sin_cos();
    let s12 = (q[0] + q[1]).sin();
    let (w1, w2) = (qd[0], qd[1]);
    let a11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i1 + i2;
    let a12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let a22 = m2 * lc2 * lc2 + i2;
    let h = m2 * l1 * lc2 * s2;
    let g2 = m2 * lc2 * GRAVITY * s12;
    let g1 = (m1 * lc1 + m2 * l1) * GRAVITY * q[0].sin() + g2;
    let r1 = u[0] - b1 * w1 + h * (2.0 * w1 * w2 + w2 * w2) - g1;
    let r2 = u[1] - b2 * w2 - h * w1 * w1 - g2;
    let det = a11 * a22 - a12 * a12;
    out[0] = (a22 * r1 - a12 * r2) / det;
    out[1] = (a11 * r2 - a12 * r1) / det;
}

pub fn pendulum_energy(q: &[f64], qd: &[f64], xi: &[f64]) -> f64 {
    let (m, l) = (xi[0], xi[1]);
    0.5 * (m * l * l / 3.0) * qd[0] * qd[0] + m * GRAVITY * 0.5 * l * q[0].cos()
}

pub fn cartpole_energy(q: &[f64], qd: &[f64], xi: &[f64]) -> f64 {
    let (mc, mp, len) = (xi[0], xi[1], xi[2]);
    let lc = 0.5 * len;
    let c = q[1].cos();
    let (xd, thd) = (qd[0], qd[1]);
    0.5 * (mc + mp) * xd * xd
        + mp * lc * c * xd * thd
        + 0.5 * (4.0 / 3.0) * mp * lc * lc * thd * thd
        + mp * GRAVITY * lc * c
}

pub fn acrobot_energy(q: &[f64], qd: &[f64], xi: &[f64]) -> f64 {
    let (m1, m2, l1, l2) = (xi[0], xi[1], xi[2], xi[3]);
    let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
    let c2 = q[1].cos();
    let a11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i1 + i2;
    let a12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let a22 = m2 * lc2 * lc2 + i2;
    let (w1, w2) = (qd[0], qd[1]);
    let kinetic = 0.5 * (a11 * w1 * w1 + 2.0 * a12 * w1 * w2 + a22 * w2 * w2);
    let potential =
        -(m1 * lc1 + m2 * l1) * GRAVITY * q[0].cos() - m2 * lc2 * GRAVITY * (q[0] + q[1]).cos();
    kinetic + potential
}

/// Ingredients of the Hamiltonian form H(q, p) = ½ pᵀM(q)⁻¹p + V(q) with
/// viscous joint damping, for systems with at most two coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mechanics {
    pub mass: [[f64; 2]; 2],
    /// ∂M/∂q_i for each coordinate i.
    pub mass_grad: [[[f64; 2]; 2]; 2],
    pub potential_grad: [f64; 2],
    pub damping: [f64; 2],
}

pub fn pendulum_mechanics(q: &[f64], xi: &[f64]) -> Mechanics {
    let (m, l, b) = (xi[0], xi[1], xi[2]);
    Mechanics {
        mass: [[m * l * l / 3.0, 0.0], [0.0, 1.0]],
        potential_grad: [-m * GRAVITY * 0.5 * l * q[0].sin(), 0.0],
        damping: [b, 0.0],
        ..Default::default()
    }
}

pub fn cartpole_mechanics(q: &[f64], xi: &[f64]) -> Mechanics {
    let (mc, mp, len, bc, bp) = (xi[0], xi[1], xi[2], xi[3], xi[4]);
    let lc = 0.5 * len;
    let (s, c) = q[1].sin_cos();
    let off = mp * lc * c;
    let d_off = -mp * lc * s;
    Mechanics {
        mass: [[mc + mp, off], [off, 4.0 / 3.0 * mp * lc * lc]],
        mass_grad: [[[0.0; 2]; 2], [[0.0, d_off], [d_off, 0.0]]],
        potential_grad: [0.0, -mp * GRAVITY * lc * s],
        damping: [bc, bp],
    }
}

pub fn acrobot_mechanics(q: &[f64], xi: &[f64]) -> Mechanics {
    let (m1, m2, l1, l2, b1, b2) = (xi[0], xi[1], xi[2], xi[3], xi[4], xi[5]);
    let (lc1, lc2) = (0.5 * l1, 0.5 * l2);
    let (i1, i2) = (m1 * l1 * l1 / 12.0, m2 * l2 * l2 / 12.0);
    let (s2, c2) = q[1].sin_cos();
    let s12 = (q[0] + q[1]).sin();
    let a11 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + i1 + i2;
    let a12 = m2 * (lc2 * lc2 + l1 * lc2 * c2) + i2;
    let a22 = m2 * lc2 * lc2 + i2;
    let h = m2 * l1 * lc2 * s2;
    let g2 = m2 * lc2 * GRAVITY * s12;
    Mechanics {
        mass: [[a11, a12], [a12, a22]],
        mass_grad: [[[0.0; 2]; 2], [[-2.0 * h, -h], [-h, 0.0]]],
        potential_grad: [(m1 * lc1 + m2 * l1) * GRAVITY * q[0].sin() + g2, g2],
        damping: [b1, b2],
    }
}

fn solve2(k: usize, a: &[[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    if k == 1 {
        return [b[0] / a[0][0], 0.0];
    }
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ]
}

/// One semi-implicit (symplectic) Euler step of size `h` in Hamiltonian form:
///
/// p⁺ = p − h ∂H/∂q(q, p⁺) + h (u − B v⁺),  q⁺ = q + h M(q)⁻¹ p⁺
///
/// `pos` and `vel` hold generalized coordinates and velocities; velocities
/// are converted to and from momenta with the mass matrix at the current
/// configuration. The implicit momentum update is solved by Newton's method.
/// When the mass matrix is constant this is exactly the usual
/// velocity-then-position semi-implicit Euler update.
pub fn symplectic_euler_step(
    pos: &mut [f64],
    vel: &mut [f64],
    u: &[f64; 2],
    h: f64,
    mech: &dyn Fn(&[f64]) -> Mechanics,
) {
    let k = pos.len();
    let me = mech(pos);
    let mut v = [0.0; 2];
    v[..k].copy_from_slice(vel);
    let mut p0 = [0.0; 2];
    for i in 0..k {
        p0[i] = (0..k).map(|j| me.mass[i][j] * v[j]).sum();
    }
    // Residual G(v) = M v − p0 − h F(v),
    // F_i(v) = u_i − b_i v_i − ∂V/∂q_i + ½ vᵀ (∂M/∂q_i) v.
    for _ in 0..20 {
        let mut g = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for i in 0..k {
            let dm = &me.mass_grad[i];
            let mut dmv = [0.0; 2];
            for a in 0..k {
                dmv[a] = (0..k).map(|b| dm[a][b] * v[b]).sum();
            }
            let quad: f64 = (0..k).map(|a| v[a] * dmv[a]).sum();
            let force = u[i] - me.damping[i] * v[i] - me.potential_grad[i] + 0.5 * quad;
            g[i] = (0..k).map(|j| me.mass[i][j] * v[j]).sum::<f64>() - p0[i] - h * force;
            for j in 0..k {
                jac[i][j] = me.mass[i][j] - h * dmv[j];
            }
            jac[i][i] += h * me.damping[i];
        }
        let dv = solve2(k, &jac, g);
        let mut change: f64 = 0.0;
        for i in 0..k {
            v[i] -= dv[i];
            change = change.max(dv[i].abs() / (1.0 + v[i].abs()));
        }
        if !(change > 1e-14) {
            break;
        }
    }
    // p⁺ = M(q) v⁺, then advance positions and re-express p⁺ as a velocity
    // at the new configuration.
    let mut p = [0.0; 2];
    for i in 0..k {
        p[i] = (0..k).map(|j| me.mass[i][j] * v[j]).sum();
    }
    for i in 0..k {
        pos[i] += h * v[i];
    }
    let next = mech(pos);
    let vn = solve2(k, &next.mass, p);
    vel.copy_from_slice(&vn[..k]);
}
