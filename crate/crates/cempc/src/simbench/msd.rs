//! Series chain of mass-spring-dampers, exactly discretized, with every
//! entry of the resulting (A, B) treated as an uncertain parameter.

use nalgebra::{DMatrix, DVector};

use crate::cost::CostWeights;
use crate::error::{Error, Result};
use crate::model::{pack_ab, ConstraintSpec, LipschitzConstants, ParameterSet, ParametricModel};

/// Physical and design parameters of the chain benchmark. Defaults are
/// tuned so that the whole entrywise parameter box stays open-loop stable
/// at the nominal sampling time and the stock (M, N, omega) certify.
#[derive(Debug, Clone)]
pub struct ChainParams {
    pub n_masses: usize,
    pub dt: f64,
    pub mass: f64,
    /// Stiff inter-mass couplings (spring, damper).
    pub chain_stiffness: f64,
    pub chain_damping: f64,
    /// Weak per-mass ground anchors; these carry the slow collective mode.
    pub anchor_stiffness: f64,
    pub anchor_damping: f64,
    /// Half-width of the parameter box relative to each nominal entry.
    pub uncertainty: f64,
    pub u_max: f64,
    pub y_max: f64,
    pub q_xi: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            n_masses: 10,
            dt: 0.5,
            mass: 0.15,
            chain_stiffness: 2500.0,
            chain_damping: 400.0,
            anchor_stiffness: 2.5,
            anchor_damping: 9.0,
            uncertainty: 0.5,
            u_max: 25.0,
            y_max: 0.7,
            q_xi: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainBundle {
    pub model: ParametricModel,
    pub theta_set: ParameterSet,
    /// Nominal discrete entries (the initial estimate of the benchmark).
    pub theta_nominal: DVector<f64>,
    pub constraints: ConstraintSpec,
    pub a_nominal: DMatrix<f64>,
    pub b_nominal: DMatrix<f64>,
}

/// Continuous-time chain matrices: wall - m_1 - ... - m_n with the force
/// actuating the last mass and the output reading the first position.
pub fn chain_continuous(p: &ChainParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = p.n_masses;
    let m = p.mass;
    let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        a[(i, n + i)] = 1.0;
    }
    for i in 0..n {
        // Ground anchor on every mass.
        a[(n + i, i)] -= p.anchor_stiffness / m;
        a[(n + i, n + i)] -= p.anchor_damping / m;
        // Stiff couplings to the neighbours.
        if i > 0 {
            a[(n + i, i)] -= p.chain_stiffness / m;
            a[(n + i, i - 1)] += p.chain_stiffness / m;
            a[(n + i, n + i)] -= p.chain_damping / m;
            a[(n + i, n + i - 1)] += p.chain_damping / m;
        }
        if i + 1 < n {
            a[(n + i, i)] -= p.chain_stiffness / m;
            a[(n + i, i + 1)] += p.chain_stiffness / m;
            a[(n + i, n + i)] -= p.chain_damping / m;
            a[(n + i, n + i + 1)] += p.chain_damping / m;
        }
    }
    let mut b = DMatrix::<f64>::zeros(2 * n, 1);
    b[(2 * n - 1, 0)] = 1.0 / m;
    (a, b)
}

/// Exact zero-order-hold discretization via the augmented exponential
/// exp([A B; 0 0] dt).
pub fn discretize_exact(
    a_c: &DMatrix<f64>,
    b_c: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if dt <= 0.0 {
        return Err(Error::Config("sampling time must be positive".into()));
    }
    let n = a_c.nrows();
    let m = b_c.ncols();
    let mut aug = DMatrix::<f64>::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a_c);
    aug.view_mut((0, n), (n, m)).copy_from(b_c);
    let e = (aug * dt).exp();
    Ok((e.view((0, 0), (n, n)).into(), e.view((0, n), (n, m)).into()))
}

/// Build the chain benchmark model with its entrywise parameter box.
pub fn build_msd_chain(p: &ChainParams) -> Result<ChainBundle> {
    if p.n_masses == 0 {
        return Err(Error::Config("chain needs at least one mass".into()));
    }
    let (a_c, b_c) = chain_continuous(p);
    let (a_d, b_d) = discretize_exact(&a_c, &b_c, p.dt)?;
    let n_x = 2 * p.n_masses;

    let mut c = DMatrix::<f64>::zeros(1, n_x);
    c[(0, 0)] = 1.0; // position of the first mass
    let d = DMatrix::<f64>::zeros(1, 1);
    let e = DMatrix::<f64>::identity(n_x, n_x);

    let theta_nominal = pack_ab(&a_d, &b_d);
    let lo = theta_nominal.map(|v| v - p.uncertainty * v.abs());
    let hi = theta_nominal.map(|v| v + p.uncertainty * v.abs());
    let theta_set = ParameterSet::Box { lo, hi };

    // Uniform Lipschitz bound over the box: sup ||[A B E]|| inflated 1.05x.
    let scale = 1.0 + p.uncertainty;
    let mut abe = DMatrix::<f64>::zeros(n_x, n_x + 1 + n_x);
    abe.view_mut((0, 0), (n_x, n_x)).copy_from(&a_d.map(|v| scale * v.abs()));
    abe.view_mut((0, n_x), (n_x, 1)).copy_from(&b_d.map(|v| scale * v.abs()));
    abe.view_mut((0, n_x + 1), (n_x, n_x)).copy_from(&e);
    let l_f = 1.05 * crate::linalg::spectral_norm(&abe);

    let model = ParametricModel::linear_entrywise(n_x, 1, 1, e, c, d)
        .with_lipschitz(LipschitzConstants { l_f, l_h: 1.0 });

    let mut d_mat = DMatrix::<f64>::zeros(1, n_x);
    d_mat[(0, 0)] = 1.0;
    let constraints = ConstraintSpec {
        u_lo: DVector::from_element(1, -p.u_max),
        u_hi: DVector::from_element(1, p.u_max),
        d_mat,
        d_vec: DVector::from_element(1, p.y_max),
        slack_weights: DVector::from_element(1, p.q_xi),
        u_margin: 0.0,
    };

    Ok(ChainBundle { model, theta_set, theta_nominal, constraints, a_nominal: a_d, b_nominal: b_d })
}

/// Stock cost weights for the chain benchmark.
pub fn chain_weights(n: usize, m: usize, omega: f64, n_x: usize) -> CostWeights {
    CostWeights {
        q: DMatrix::identity(n_x, n_x),
        r: DMatrix::identity(1, 1) * 1e-2,
        omega,
        n,
        m,
    }
}

/// The "true parameters deviate exactly by +-fraction" vertex of the box,
/// with seeded signs; re-draws until the vertex is open-loop stable.
pub fn true_theta_vertex(
    bundle: &ChainBundle,
    fraction: f64,
    seed: u64,
) -> Result<DVector<f64>> {
    let n = bundle.theta_nominal.len();
    for attempt in 0..64 {
        let mut stream = crate::simbench::noise::Stream::for_channel(
            seed.wrapping_add(attempt),
            0,
            crate::simbench::noise::Channel::Init,
        );
        let signs = stream.signs(n);
        let theta = DVector::from_fn(n, |i, _| {
            bundle.theta_nominal[i] * (1.0 + fraction * signs[i])
        });
        let lm = bundle.model.linear_at(&theta).expect("chain model is linear");
        if crate::linalg::spectral_radius(&lm.a) < 0.999 {
            return Ok(theta);
        }
    }
    Err(Error::NotOpenLoopStable { rho: 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dimensions_match_benchmark() {
        let bundle = build_msd_chain(&ChainParams::default()).unwrap();
        let dims = bundle.model.dims();
        assert_eq!(dims.n_x, 20);
        assert_eq!(dims.n_theta, 20 * 21);
    }

    #[test]
    fn single_mass_matches_series_expansion() {
        // One mass with gentle parameters: compare against the scaled
        // Taylor series of the augmented exponential.
        let p = ChainParams {
            n_masses: 1,
            dt: 0.3,
            mass: 1.3,
            chain_stiffness: 0.0,
            chain_damping: 0.0,
            anchor_stiffness: 0.8,
            anchor_damping: 0.9,
            ..ChainParams::default()
        };
        let (a_c, b_c) = chain_continuous(&p);
        let (a_d, b_d) = discretize_exact(&a_c, &b_c, p.dt).unwrap();
        let mut aug = DMatrix::<f64>::zeros(3, 3);
        aug.view_mut((0, 0), (2, 2)).copy_from(&a_c);
        aug.view_mut((0, 2), (2, 1)).copy_from(&b_c);
        aug *= p.dt;
        let mut series = DMatrix::<f64>::identity(3, 3);
        let mut term = DMatrix::<f64>::identity(3, 3);
        for k in 1..60 {
            term = &term * &aug / k as f64;
            series += &term;
        }
        assert!((a_d - series.view((0, 0), (2, 2))).amax() < 1e-10);
        assert!((b_d - series.view((0, 2), (2, 1))).amax() < 1e-10);
    }

    #[test]
    fn zero_stiffness_damping_is_double_integrator() {
        let p = ChainParams {
            n_masses: 1,
            dt: 0.5,
            mass: 2.0,
            chain_stiffness: 0.0,
            chain_damping: 0.0,
            anchor_stiffness: 0.0,
            anchor_damping: 0.0,
            ..ChainParams::default()
        };
        let (a_c, b_c) = chain_continuous(&p);
        let (a_d, b_d) = discretize_exact(&a_c, &b_c, p.dt).unwrap();
        // Nilpotent continuous block: exact polynomial exponential.
        assert_relative_eq!(a_d[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(a_d[(0, 1)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(a_d[(1, 1)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(b_d[(1, 0)], 0.25, epsilon = 1e-12);
        assert_relative_eq!(b_d[(0, 0)], 0.0625, epsilon = 1e-12);
    }

    #[test]
    fn steady_state_of_constant_input() {
        // (I - A) x = B u: linear solve, residual tiny.
        let bundle = build_msd_chain(&ChainParams::default()).unwrap();
        let n_x = bundle.a_nominal.nrows();
        let u = DVector::from_element(1, 3.0);
        let rhs = &bundle.b_nominal * &u;
        let x = (DMatrix::identity(n_x, n_x) - &bundle.a_nominal)
            .lu()
            .solve(&rhs)
            .unwrap();
        let res = crate::model::steady_state_residual(
            &bundle.model,
            &bundle.theta_nominal,
            &x,
            &u,
        );
        assert!(res <= 1e-10, "residual {res}");
        // Series springs all carry the input force: y = u / k.
        
    }

    #[test]
    fn rollout_from_steady_state_is_constant() {
        let bundle = build_msd_chain(&ChainParams::default()).unwrap();
        let n_x = bundle.a_nominal.nrows();
        let u = DVector::from_element(1, 1.0);
        let x = (DMatrix::identity(n_x, n_x) - &bundle.a_nominal)
            .lu()
            .solve(&(&bundle.b_nominal * &u))
            .unwrap();
        let xs = crate::model::rollout(&bundle.model, &x, &bundle.theta_nominal, &vec![u; 5])
            .unwrap();
        for s in &xs {
            assert!((s - &x).amax() < 1e-9);
        }
    }
}
