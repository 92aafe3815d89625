//! Anisotropic TGV2-L2 model and its first-order primal-dual solver.
//!
//! The energy couples a second-order total generalized variation
//! regularizer, weighted per pixel by an edge-driven diffusion tensor, with
//! an L2 data term anchored at the network's depth estimate. The saddle-point
//! form is minimized by alternating dual ascent (with unit-ball projection),
//! primal proximal descent, and over-relaxation.
//!
//! The transposed-gradient terms of the primal updates enter with the sign
//! of the exact adjoint, so the iteration is a descent on the energy; this
//! is checked by the convergence tests rather than by matching any printed
//! sign convention.

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::grid;

/// Regularizer for the edge-normal direction at vanishing edge magnitude.
pub const EDGE_EPS: f64 = 1e-8;

/// All TGV / tensor / step-size hyper-parameters of the solver.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Data-term trade-off, stored in log space; the effective weight is
    /// `exp(w_lambda)` so convexity is preserved for any real value.
    pub w_lambda: f64,
    pub sigma_p: f64,
    pub sigma_q: f64,
    pub tau_u: f64,
    pub tau_v: f64,
    pub theta: f64,
    pub iters: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        // The alpha weights scale the coupling operator of the saddle-point
        // problem, so they must enter the step-size bound: with the TGV
        // operator norm bound |K|^2 <= 12, stability requires
        // sigma * tau * 12 * max(alpha0, alpha1)^2 <= 1. Steps of 1/sqrt(12)
        // alone diverge at alpha1 = 17.
        let (alpha0, alpha1) = (1.2, 17.0);
        let step = 1.0 / (12f64.sqrt() * f64::max(alpha0, alpha1));
        SolverParams {
            alpha0,
            alpha1,
            beta: 9.0,
            gamma: 0.85,
            w_lambda: 0.01,
            sigma_p: step,
            sigma_q: step,
            tau_u: step,
            tau_v: step,
            theta: 1.0,
            iters: 10,
        }
    }
}

/// Per-pixel symmetric 2x2 diffusion tensor, stored as three planes
/// (t_xx, t_xy, t_yy).
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTensor(pub Field2D);

impl DiffusionTensor {
    pub fn identity(height: usize, width: usize) -> Self {
        let mut f = Field2D::zeros(3, height, width);
        f.plane_mut(0).fill(1.0);
        f.plane_mut(2).fill(1.0);
        DiffusionTensor(f)
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }
}

/// Primal fields (u, v), dual fields (p, q) and the over-relaxed primals of
/// one primal-dual iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: Field2D,
    pub v: Field2D,
    pub p: Field2D,
    pub q: Field2D,
    pub u_bar: Field2D,
    pub v_bar: Field2D,
}

impl SolverState {
    /// Prescribed initialization: u = u_bar = g, everything else zero.
    pub fn init(g: &Field2D) -> Self {
        let (h, w) = (g.height(), g.width());
        SolverState {
            u: g.clone(),
            v: Field2D::zeros(2, h, w),
            p: Field2D::zeros(2, h, w),
            q: Field2D::zeros(4, h, w),
            u_bar: g.clone(),
            v_bar: Field2D::zeros(2, h, w),
        }
    }
}

/// Edge-weighted diffusion tensor.
///
/// Per pixel, with n = h / max(|h|, eps) and e = exp(-beta * |h|^gamma):
/// T = I + (e - 1) n n^T. For unit n this has eigenvalue e along n and 1
/// along the perpendicular; at h = 0 it is exactly the identity.
pub fn diffusion_tensor(h: &Field2D, beta: f64, gamma: f64, eps: f64) -> DiffusionTensor {
    assert_eq!(h.channels(), 2, "diffusion_tensor expects a 2-channel field");
    assert!(eps > 0.0);
    let (hh, ww) = (h.height(), h.width());
    let n = hh * ww;
    let mut t = Field2D::zeros(3, hh, ww);
    for i in 0..n {
        let h1 = h.plane(0)[i];
        let h2 = h.plane(1)[i];
        let r = (h1 * h1 + h2 * h2).sqrt();
        let m = r.max(eps);
        let n1 = h1 / m;
        let n2 = h2 / m;
        let e = (-beta * r.powf(gamma)).exp();
        t.plane_mut(0)[i] = 1.0 + (e - 1.0) * n1 * n1;
        t.plane_mut(1)[i] = (e - 1.0) * n1 * n2;
        t.plane_mut(2)[i] = 1.0 + (e - 1.0) * n2 * n2;
    }
    DiffusionTensor(t)
}

/// Per-pixel 2x2 matrix-vector product `T w`.
pub fn tensor_apply(t: &DiffusionTensor, w: &Field2D) -> Field2D {
    assert_eq!(w.channels(), 2, "tensor_apply expects a 2-channel field");
    assert_eq!(t.height(), w.height());
    assert_eq!(t.width(), w.width());
    let n = w.height() * w.width();
    let mut out = Field2D::zeros(2, w.height(), w.width());
    for i in 0..n {
        let txx = t.0.plane(0)[i];
        let txy = t.0.plane(1)[i];
        let tyy = t.0.plane(2)[i];
        let w1 = w.plane(0)[i];
        let w2 = w.plane(1)[i];
        out.plane_mut(0)[i] = txx * w1 + txy * w2;
        out.plane_mut(1)[i] = txy * w1 + tyy * w2;
    }
    out
}

/// Point-wise projection onto the unit ball: d / max(1, |d|), where the norm
/// is the per-pixel Euclidean norm across channels.
pub fn project_unit_ball(d: &Field2D) -> Field2D {
    let n = d.height() * d.width();
    let ch = d.channels();
    let mut out = d.clone();
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..ch {
            let v = d.plane(c)[i];
            sq += v * v;
        }
        let norm = sq.sqrt();
        let denom = norm.max(1.0);
        for c in 0..ch {
            out.plane_mut(c)[i] = d.plane(c)[i] / denom;
        }
    }
    out
}

/// Elementwise division by a scalar. Kept as a named kernel so the unrolled
/// tape and the plain solver share one arithmetic path bitwise.
pub fn div_scalar(f: &Field2D, s: f64) -> Field2D {
    f.map(|v| v / s)
}

/// One primal-dual iteration: dual ascent on (p, q) with projection, primal
/// proximal descent on u, gradient descent on v, then over-relaxation of
/// both primals with weight theta.
pub fn pd_iteration(
    state: &SolverState,
    t: &DiffusionTensor,
    g: &Field2D,
    params: &SolverParams,
) -> Result<SolverState> {
    // dual ascent
    let gu = grid::grad(&state.u_bar);
    let w1 = gu.sub(&state.v_bar);
    let tw = tensor_apply(t, &w1);
    let p_new = project_unit_ball(&state.p.add(&tw.scale(params.sigma_p * params.alpha1)));
    let gv = grid::grad_v(&state.v_bar);
    let q_new = project_unit_ball(&state.q.add(&gv.scale(params.sigma_q * params.alpha0)));

    // primal descent; the transposed gradients carry the adjoint sign
    let tp = tensor_apply(t, &p_new);
    let gt = grid::grad_t(&tp);
    let ew = params.w_lambda.exp();
    let b = params.tau_u * ew;
    let num = state
        .u
        .add(&gt.scale((params.tau_u * params.alpha1) * -1.0))
        .add(&g.scale(b));
    let u_new = div_scalar(&num, 1.0 + b);
    let gtv = grid::grad_tv(&q_new);
    let v_new = state
        .v
        .add(&tp.scale(params.tau_v * params.alpha1))
        .add(&gtv.scale((params.tau_v * params.alpha0) * -1.0));

    if !u_new.is_finite() || !v_new.is_finite() {
        return Err(Error::NonFinite("primal update in pd_iteration".into()));
    }

    // over-relaxation
    let u_bar = u_new.scale(1.0 + params.theta).sub(&state.u.scale(params.theta));
    let v_bar = v_new.scale(1.0 + params.theta).sub(&state.v.scale(params.theta));

    Ok(SolverState {
        u: u_new,
        v: v_new,
        p: p_new,
        q: q_new,
        u_bar,
        v_bar,
    })
}

/// Run `params.iters` primal-dual iterations from the prescribed
/// initialization and return the refined depth map.
pub fn solve(g: &Field2D, h: &Field2D, params: &SolverParams) -> Result<Field2D> {
    assert_eq!(g.height(), h.height());
    assert_eq!(g.width(), h.width());
    let t = diffusion_tensor(h, params.beta, params.gamma, EDGE_EPS);
    let mut state = SolverState::init(g);
    for it in 0..params.iters {
        state = pd_iteration(&state, &t, g, params).map_err(|e| match e {
            Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (iteration {it})")),
            other => other,
        })?;
    }
    Ok(state.u)
}

/// Evaluate the TGV2-L2 energy
/// `alpha1 * sum |T(grad u - v)| + alpha0 * sum |grad_v v| + exp(w_lambda)/2 * |u - g|^2`,
/// where the L1 norms sum per-pixel Euclidean channel norms.
pub fn energy(
    u: &Field2D,
    v: &Field2D,
    t: &DiffusionTensor,
    g: &Field2D,
    params: &SolverParams,
) -> f64 {
    let tw = tensor_apply(t, &grid::grad(u).sub(v));
    let n = u.height() * u.width();
    let mut reg1 = 0.0;
    for i in 0..n {
        let a = tw.plane(0)[i];
        let b = tw.plane(1)[i];
        reg1 += (a * a + b * b).sqrt();
    }
    let jv = grid::grad_v(v);
    let mut reg0 = 0.0;
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..4 {
            let x = jv.plane(c)[i];
            sq += x * x;
        }
        reg0 += sq.sqrt();
    }
    let diff = u.sub(g);
    params.alpha1 * reg1 + params.alpha0 * reg0 + 0.5 * params.w_lambda.exp() * diff.inner(&diff)
}
