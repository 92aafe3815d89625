//! Reverse-mode differentiation through the unrolled primal-dual iteration.
//!
//! The solver runs for a fixed number of iterations, so every update can be
//! recorded as a node of a computation graph, like a recurrent network. The
//! tape stores each primitive (stencils, pointwise arithmetic, projection,
//! tensor construction/application, scalar broadcasts) together with its
//! output value; replaying it forward reproduces the recorded values
//! bitwise, and a reverse sweep accumulates exact gradients of the loss with
//! respect to the network outputs g, h and all scalar hyper-parameters.
//!
//! All forward node evaluation delegates to the same kernels the plain
//! solver uses, so `forward_record` matches `solver::solve` bitwise. All
//! iterates are kept (checkpointing is unnecessary at these field sizes).
//!
//! Subgradient conventions: a per-pixel norm of exactly 1 in the projection
//! takes the interior (identity) branch, and pixels with zero edge magnitude
//! contribute zero gradient to `gamma`.

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::grid;
use crate::solver::{self, DiffusionTensor, SolverParams, EDGE_EPS};

type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Leaf value fed into the graph.
    Input,
    Grad { u: NodeId },
    GradT { p: NodeId },
    GradV { v: NodeId },
    GradTv { q: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Field times broadcast scalar node.
    ScaleField { f: NodeId, s: NodeId },
    /// Field divided by broadcast scalar node.
    DivScalar { f: NodeId, s: NodeId },
    /// Per-pixel projection onto the unit ball.
    Project { d: NodeId },
    /// Edge-weighted diffusion tensor from a 2-channel edge field.
    TensorFromEdges { h: NodeId, beta: NodeId, gamma: NodeId },
    /// Per-pixel 2x2 tensor times 2-channel field.
    TensorApply { t: NodeId, w: NodeId },
    ScalarExp { s: NodeId },
    ScalarMul { a: NodeId, b: NodeId },
    ScalarMulConst { s: NodeId, c: f64 },
    ScalarAddConst { s: NodeId, c: f64 },
}

#[derive(Debug, Clone)]
enum Value {
    Field(Field2D),
    Scalar(f64),
}

impl Value {
    fn field(&self) -> &Field2D {
        match self {
            Value::Field(f) => f,
            Value::Scalar(_) => panic!("expected field value"),
        }
    }

    fn scalar(&self) -> f64 {
        match self {
            Value::Scalar(s) => *s,
            Value::Field(_) => panic!("expected scalar value"),
        }
    }
}

struct Node {
    op: Op,
    value: Value,
}

/// Names of the trainable scalar hyper-parameters, in tape input order.
pub const SCALAR_PARAM_NAMES: [&str; 10] = [
    "w_lambda", "alpha0", "alpha1", "beta", "gamma", "sigma_p", "sigma_q", "tau_u", "tau_v",
    "theta",
];

/// Gradients of the loss with respect to the scalar hyper-parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScalarGrads {
    pub w_lambda: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sigma_p: f64,
    pub sigma_q: f64,
    pub tau_u: f64,
    pub tau_v: f64,
    pub theta: f64,
}

impl ScalarGrads {
    pub fn get(&self, name: &str) -> f64 {
        match name {
            "w_lambda" => self.w_lambda,
            "alpha0" => self.alpha0,
            "alpha1" => self.alpha1,
            "beta" => self.beta,
            "gamma" => self.gamma,
            "sigma_p" => self.sigma_p,
            "sigma_q" => self.sigma_q,
            "tau_u" => self.tau_u,
            "tau_v" => self.tau_v,
            "theta" => self.theta,
            _ => panic!("unknown scalar parameter {name}"),
        }
    }
}

/// Gradients of the loss with respect to every solver input.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub d_g: Field2D,
    pub d_h: Field2D,
    pub d_scalars: ScalarGrads,
}

/// Recorded forward pass of the unrolled solver.
pub struct Tape {
    nodes: Vec<Node>,
    g: NodeId,
    h: NodeId,
    /// Scalar input ids, ordered as [`SCALAR_PARAM_NAMES`].
    scalars: [NodeId; 10],
    output: NodeId,
}

impl Tape {
    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.eval(&op)?;
        self.nodes.push(Node { op, value });
        Ok(self.nodes.len() - 1)
    }

    fn val(&self, id: NodeId) -> &Value {
        &self.nodes[id].value
    }

    fn eval(&self, op: &Op) -> Result<Value> {
        let v = match *op {
            Op::Input => unreachable!("inputs are pushed with their value"),
            Op::Grad { u } => Value::Field(grid::grad(self.val(u).field())),
            Op::GradT { p } => Value::Field(grid::grad_t(self.val(p).field())),
            Op::GradV { v } => Value::Field(grid::grad_v(self.val(v).field())),
            Op::GradTv { q } => Value::Field(grid::grad_tv(self.val(q).field())),
            Op::Add { a, b } => Value::Field(self.val(a).field().add(self.val(b).field())),
            Op::Sub { a, b } => Value::Field(self.val(a).field().sub(self.val(b).field())),
            Op::ScaleField { f, s } => {
                Value::Field(self.val(f).field().scale(self.val(s).scalar()))
            }
            Op::DivScalar { f, s } => Value::Field(solver::div_scalar(
                self.val(f).field(),
                self.val(s).scalar(),
            )),
            Op::Project { d } => Value::Field(solver::project_unit_ball(self.val(d).field())),
            Op::TensorFromEdges { h, beta, gamma } => Value::Field(
                solver::diffusion_tensor(
                    self.val(h).field(),
                    self.val(beta).scalar(),
                    self.val(gamma).scalar(),
                    EDGE_EPS,
                )
                .0,
            ),
            Op::TensorApply { t, w } => Value::Field(solver::tensor_apply(
                &DiffusionTensor(self.val(t).field().clone()),
                self.val(w).field(),
            )),
            Op::ScalarExp { s } => Value::Scalar(self.val(s).scalar().exp()),
            Op::ScalarMul { a, b } => {
                Value::Scalar(self.val(a).scalar() * self.val(b).scalar())
            }
            Op::ScalarMulConst { s, c } => Value::Scalar(self.val(s).scalar() * c),
            Op::ScalarAddConst { s, c } => Value::Scalar(self.val(s).scalar() + c),
        };
        Ok(v)
    }

    fn push_input(&mut self, value: Value) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value,
        });
        self.nodes.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Re-execute every recorded primitive from the stored inputs and check
    /// that each intermediate is reproduced bitwise.
    pub fn replay_check(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Input) {
                continue;
            }
            let recomputed = self.eval(&node.op)?;
            let same = match (&recomputed, &node.value) {
                (Value::Field(a), Value::Field(b)) => a == b,
                (Value::Scalar(a), Value::Scalar(b)) => a.to_bits() == b.to_bits(),
                _ => false,
            };
            if !same {
                return Err(Error::InvalidArgument(format!(
                    "tape replay mismatch at node {i}"
                )));
            }
        }
        Ok(())
    }

    /// Smallest distance of any recorded value to a non-smooth point: the
    /// per-pixel distance |r - 1| of projection inputs to the ball boundary,
    /// and the edge magnitude at tensor construction. Finite-difference
    /// checks resample instances whose margin is too small.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match node.op {
                Op::Project { d } => {
                    let f = self.val(d).field();
                    let n = f.height() * f.width();
                    for i in 0..n {
                        let mut sq = 0.0;
                        for c in 0..f.channels() {
                            let v = f.plane(c)[i];
                            sq += v * v;
                        }
                        margin = margin.min((sq.sqrt() - 1.0).abs());
                    }
                }
                Op::TensorFromEdges { h, .. } => {
                    let f = self.val(h).field();
                    let n = f.height() * f.width();
                    for i in 0..n {
                        let (a, b) = (f.plane(0)[i], f.plane(1)[i]);
                        margin = margin.min((a * a + b * b).sqrt());
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

/// Run the unrolled solver, recording every primitive.
///
/// The returned depth estimate is bitwise identical to
/// [`solver::solve`] on the same inputs.
pub fn forward_record(g: &Field2D, h: &Field2D, params: &SolverParams) -> Result<(Field2D, Tape)> {
    assert_eq!(g.height(), h.height());
    assert_eq!(g.width(), h.width());
    let (hh, ww) = (g.height(), g.width());

    let mut tape = Tape {
        nodes: Vec::new(),
        g: 0,
        h: 0,
        scalars: [0; 10],
        output: 0,
    };
    let g_id = tape.push_input(Value::Field(g.clone()));
    let h_id = tape.push_input(Value::Field(h.clone()));
    tape.g = g_id;
    tape.h = h_id;
    let svals = [
        params.w_lambda,
        params.alpha0,
        params.alpha1,
        params.beta,
        params.gamma,
        params.sigma_p,
        params.sigma_q,
        params.tau_u,
        params.tau_v,
        params.theta,
    ];
    for (i, v) in svals.iter().enumerate() {
        tape.scalars[i] = tape.push_input(Value::Scalar(*v));
    }
    let [w_lambda, alpha0, alpha1, beta, gamma, sigma_p, sigma_q, tau_u, tau_v, theta] =
        tape.scalars;

    let tensor = tape.push(Op::TensorFromEdges {
        h: h_id,
        beta,
        gamma,
    })?;

    // shared scalar subexpressions, mirroring solver::pd_iteration
    let sp_a1 = tape.push(Op::ScalarMul {
        a: sigma_p,
        b: alpha1,
    })?;
    let sq_a0 = tape.push(Op::ScalarMul {
        a: sigma_q,
        b: alpha0,
    })?;
    let tu_a1 = tape.push(Op::ScalarMul { a: tau_u, b: alpha1 })?;
    let neg_tu_a1 = tape.push(Op::ScalarMulConst { s: tu_a1, c: -1.0 })?;
    let ew = tape.push(Op::ScalarExp { s: w_lambda })?;
    let b_data = tape.push(Op::ScalarMul { a: tau_u, b: ew })?;
    let den = tape.push(Op::ScalarAddConst { s: b_data, c: 1.0 })?;
    let tv_a1 = tape.push(Op::ScalarMul { a: tau_v, b: alpha1 })?;
    let tv_a0 = tape.push(Op::ScalarMul { a: tau_v, b: alpha0 })?;
    let neg_tv_a0 = tape.push(Op::ScalarMulConst { s: tv_a0, c: -1.0 })?;
    let theta1 = tape.push(Op::ScalarAddConst { s: theta, c: 1.0 })?;

    // state: u = u_bar = g, everything else zero
    let zero2 = tape.push_input(Value::Field(Field2D::zeros(2, hh, ww)));
    let zero4 = tape.push_input(Value::Field(Field2D::zeros(4, hh, ww)));
    let mut u = g_id;
    let mut v = zero2;
    let mut p = zero2;
    let mut q = zero4;
    let mut u_bar = g_id;
    let mut v_bar = zero2;

    for it in 0..params.iters {
        // dual ascent
        let gu = tape.push(Op::Grad { u: u_bar })?;
        let w1 = tape.push(Op::Sub { a: gu, b: v_bar })?;
        let tw = tape.push(Op::TensorApply { t: tensor, w: w1 })?;
        let tw_s = tape.push(Op::ScaleField { f: tw, s: sp_a1 })?;
        let p_tmp = tape.push(Op::Add { a: p, b: tw_s })?;
        let p_new = tape.push(Op::Project { d: p_tmp })?;
        let gv = tape.push(Op::GradV { v: v_bar })?;
        let gv_s = tape.push(Op::ScaleField { f: gv, s: sq_a0 })?;
        let q_tmp = tape.push(Op::Add { a: q, b: gv_s })?;
        let q_new = tape.push(Op::Project { d: q_tmp })?;

        // primal descent
        let tp = tape.push(Op::TensorApply { t: tensor, w: p_new })?;
        let gt = tape.push(Op::GradT { p: tp })?;
        let gt_s = tape.push(Op::ScaleField { f: gt, s: neg_tu_a1 })?;
        let num1 = tape.push(Op::Add { a: u, b: gt_s })?;
        let g_s = tape.push(Op::ScaleField { f: g_id, s: b_data })?;
        let num = tape.push(Op::Add { a: num1, b: g_s })?;
        let u_new = tape.push(Op::DivScalar { f: num, s: den })?;
        let gtv = tape.push(Op::GradTv { q: q_new })?;
        let tp_s = tape.push(Op::ScaleField { f: tp, s: tv_a1 })?;
        let v1 = tape.push(Op::Add { a: v, b: tp_s })?;
        let gtv_s = tape.push(Op::ScaleField { f: gtv, s: neg_tv_a0 })?;
        let v_new = tape.push(Op::Add { a: v1, b: gtv_s })?;

        if !tape.val(u_new).field().is_finite() || !tape.val(v_new).field().is_finite() {
            return Err(Error::NonFinite(format!(
                "primal update in unrolled iteration {it}"
            )));
        }

        // over-relaxation feeds only the next iteration; skip it on the last
        if it + 1 < params.iters {
            let u_new_s = tape.push(Op::ScaleField { f: u_new, s: theta1 })?;
            let u_old_s = tape.push(Op::ScaleField { f: u, s: theta })?;
            u_bar = tape.push(Op::Sub { a: u_new_s, b: u_old_s })?;
            let v_new_s = tape.push(Op::ScaleField { f: v_new, s: theta1 })?;
            let v_old_s = tape.push(Op::ScaleField { f: v, s: theta })?;
            v_bar = tape.push(Op::Sub { a: v_new_s, b: v_old_s })?;
        }

        u = u_new;
        v = v_new;
        p = p_new;
        q = q_new;
    }

    tape.output = u;
    Ok((tape.val(u).field().clone(), tape))
}

/// Reverse sweep over a recorded tape.
///
/// `d_u_star` is the upstream gradient at the solver output (for the
/// Euclidean loss, `2 (u* - t)`).
pub fn backward(tape: &Tape, d_u_star: &Field2D) -> Result<GradientBundle> {
    if !d_u_star.is_finite() {
        return Err(Error::NonFinite("upstream gradient".into()));
    }
    if !d_u_star.same_shape(tape.val(tape.output).field()) {
        return Err(Error::Shape(
            "upstream gradient does not match the recorded output".into(),
        ));
    }

    let mut adj: Vec<Option<Value>> = (0..tape.nodes.len()).map(|_| None).collect();
    adj[tape.output] = Some(Value::Field(d_u_star.clone()));

    let add_field = |slot: &mut Option<Value>, g: &Field2D| match slot {
        Some(Value::Field(acc)) => acc.axpy(1.0, g),
        Some(Value::Scalar(_)) => panic!("adjoint kind mismatch"),
        None => *slot = Some(Value::Field(g.clone())),
    };
    let add_scalar = |slot: &mut Option<Value>, g: f64| match slot {
        Some(Value::Scalar(acc)) => *acc += g,
        Some(Value::Field(_)) => panic!("adjoint kind mismatch"),
        None => *slot = Some(Value::Scalar(g)),
    };

    for id in (0..tape.nodes.len()).rev() {
        let Some(up) = adj[id].take() else { continue };
        let node = &tape.nodes[id];
        match node.op {
            Op::Input => {
                adj[id] = Some(up);
                continue;
            }
            Op::Grad { u } => {
                add_field(&mut adj[u], &grid::grad_t(up.field()));
            }
            Op::GradT { p } => {
                add_field(&mut adj[p], &grid::grad(up.field()));
            }
            Op::GradV { v } => {
                add_field(&mut adj[v], &grid::grad_tv(up.field()));
            }
            Op::GradTv { q } => {
                add_field(&mut adj[q], &grid::grad_v(up.field()));
            }
            Op::Add { a, b } => {
                add_field(&mut adj[a], up.field());
                add_field(&mut adj[b], up.field());
            }
            Op::Sub { a, b } => {
                add_field(&mut adj[a], up.field());
                add_field(&mut adj[b], &up.field().scale(-1.0));
            }
            Op::ScaleField { f, s } => {
                let g = up.field();
                add_field(&mut adj[f], &g.scale(tape.val(s).scalar()));
                add_scalar(&mut adj[s], g.inner(tape.val(f).field()));
            }
            Op::DivScalar { f, s } => {
                let g = up.field();
                let sv = tape.val(s).scalar();
                add_field(&mut adj[f], &g.scale(1.0 / sv));
                // out = f / s, d/ds = -out / s
                add_scalar(&mut adj[s], -g.inner(node.value.field()) / sv);
            }
            Op::Project { d } => {
                add_field(&mut adj[d], &project_backward(tape.val(d).field(), up.field()));
            }
            Op::TensorFromEdges { h, beta, gamma } => {
                let (dh, dbeta, dgamma) = tensor_backward(
                    tape.val(h).field(),
                    tape.val(beta).scalar(),
                    tape.val(gamma).scalar(),
                    up.field(),
                );
                add_field(&mut adj[h], &dh);
                add_scalar(&mut adj[beta], dbeta);
                add_scalar(&mut adj[gamma], dgamma);
            }
            Op::TensorApply { t, w } => {
                let (dt, dw) = tensor_apply_backward(
                    tape.val(t).field(),
                    tape.val(w).field(),
                    up.field(),
                );
                add_field(&mut adj[t], &dt);
                add_field(&mut adj[w], &dw);
            }
            Op::ScalarExp { s } => {
                add_scalar(&mut adj[s], up.scalar() * node.value.scalar());
            }
            Op::ScalarMul { a, b } => {
                add_scalar(&mut adj[a], up.scalar() * tape.val(b).scalar());
                add_scalar(&mut adj[b], up.scalar() * tape.val(a).scalar());
            }
            Op::ScalarMulConst { s, c } => {
                add_scalar(&mut adj[s], up.scalar() * c);
            }
            Op::ScalarAddConst { s, .. } => {
                add_scalar(&mut adj[s], up.scalar());
            }
        }
    }

    let field_grad = |slot: &Option<Value>, like: &Field2D| match slot {
        Some(Value::Field(f)) => f.clone(),
        None => Field2D::zeros(like.channels(), like.height(), like.width()),
        Some(Value::Scalar(_)) => panic!("adjoint kind mismatch"),
    };
    let scalar_grad = |slot: &Option<Value>| match slot {
        Some(Value::Scalar(s)) => *s,
        None => 0.0,
        Some(Value::Field(_)) => panic!("adjoint kind mismatch"),
    };

    let d_g = field_grad(&adj[tape.g], tape.val(tape.g).field());
    let d_h = field_grad(&adj[tape.h], tape.val(tape.h).field());
    let s = &tape.scalars;
    let d_scalars = ScalarGrads {
        w_lambda: scalar_grad(&adj[s[0]]),
        alpha0: scalar_grad(&adj[s[1]]),
        alpha1: scalar_grad(&adj[s[2]]),
        beta: scalar_grad(&adj[s[3]]),
        gamma: scalar_grad(&adj[s[4]]),
        sigma_p: scalar_grad(&adj[s[5]]),
        sigma_q: scalar_grad(&adj[s[6]]),
        tau_u: scalar_grad(&adj[s[7]]),
        tau_v: scalar_grad(&adj[s[8]]),
        theta: scalar_grad(&adj[s[9]]),
    };
    if !d_g.is_finite() || !d_h.is_finite() {
        return Err(Error::NonFinite("gradient bundle".into()));
    }
    Ok(GradientBundle { d_g, d_h, d_scalars })
}

/// Adjoint of the per-pixel unit-ball projection.
///
/// Per-pixel norms <= 1 (including exactly 1) take the identity branch; for
/// norm r > 1 the Jacobian of d/r is (I - out out^T / r) / r... expanded:
/// dd_j = g_j / r - (g . d) d_j / r^3.
fn project_backward(d: &Field2D, up: &Field2D) -> Field2D {
    let n = d.height() * d.width();
    let ch = d.channels();
    let mut out = up.clone();
    for i in 0..n {
        let mut sq = 0.0;
        for c in 0..ch {
            let v = d.plane(c)[i];
            sq += v * v;
        }
        let r = sq.sqrt();
        if r > 1.0 {
            let mut gd = 0.0;
            for c in 0..ch {
                gd += up.plane(c)[i] * d.plane(c)[i];
            }
            let r3 = r * sq;
            for c in 0..ch {
                let g = up.plane(c)[i];
                out.plane_mut(c)[i] = g / r - gd * d.plane(c)[i] / r3;
            }
        }
    }
    out
}

/// Adjoint of the per-pixel tensor application.
fn tensor_apply_backward(t: &Field2D, w: &Field2D, up: &Field2D) -> (Field2D, Field2D) {
    let n = w.height() * w.width();
    let mut dt = Field2D::zeros(3, w.height(), w.width());
    let mut dw = Field2D::zeros(2, w.height(), w.width());
    for i in 0..n {
        let (g1, g2) = (up.plane(0)[i], up.plane(1)[i]);
        let (w1, w2) = (w.plane(0)[i], w.plane(1)[i]);
        let (txx, txy, tyy) = (t.plane(0)[i], t.plane(1)[i], t.plane(2)[i]);
        dt.plane_mut(0)[i] = g1 * w1;
        dt.plane_mut(1)[i] = g1 * w2 + g2 * w1;
        dt.plane_mut(2)[i] = g2 * w2;
        dw.plane_mut(0)[i] = txx * g1 + txy * g2;
        dw.plane_mut(1)[i] = txy * g1 + tyy * g2;
    }
    (dt, dw)
}

/// Adjoint of the diffusion-tensor construction T = I + (e - 1) n n^T with
/// n = h / max(|h|, eps) and e = exp(-beta |h|^gamma).
///
/// Pixels with |h| = 0 contribute zero gradient to beta and gamma (limit
/// convention); the finite-difference tests exclude exact zeros.
fn tensor_backward(h: &Field2D, beta: f64, gamma: f64, up: &Field2D) -> (Field2D, f64, f64) {
    let n = h.height() * h.width();
    let mut dh = Field2D::zeros(2, h.height(), h.width());
    let mut dbeta = 0.0;
    let mut dgamma = 0.0;
    for i in 0..n {
        let (h1, h2) = (h.plane(0)[i], h.plane(1)[i]);
        let (gxx, gxy, gyy) = (up.plane(0)[i], up.plane(1)[i], up.plane(2)[i]);
        let r = (h1 * h1 + h2 * h2).sqrt();
        let m = r.max(EDGE_EPS);
        let n1 = h1 / m;
        let n2 = h2 / m;
        let rg = r.powf(gamma);
        let e = (-beta * rg).exp();

        let de = gxx * n1 * n1 + gxy * n1 * n2 + gyy * n2 * n2;
        let dn1 = (e - 1.0) * (2.0 * n1 * gxx + n2 * gxy);
        let dn2 = (e - 1.0) * (2.0 * n2 * gyy + n1 * gxy);

        if r >= EDGE_EPS {
            // n = h / r: dn/dh = (I - n n^T) / r
            let dn_dot_n = dn1 * n1 + dn2 * n2;
            dh.plane_mut(0)[i] += (dn1 - dn_dot_n * n1) / r;
            dh.plane_mut(1)[i] += (dn2 - dn_dot_n * n2) / r;
        } else {
            // clamped normal: n = h / eps
            dh.plane_mut(0)[i] += dn1 / EDGE_EPS;
            dh.plane_mut(1)[i] += dn2 / EDGE_EPS;
        }

        if r > 0.0 {
            // e = exp(-beta r^gamma)
            let de_dr = -beta * gamma * r.powf(gamma - 1.0) * e;
            dh.plane_mut(0)[i] += de * de_dr * (h1 / r);
            dh.plane_mut(1)[i] += de * de_dr * (h2 / r);
            dbeta += de * (-rg * e);
            dgamma += de * (-beta * rg * r.ln() * e);
        }
    }
    (dh, dbeta, dgamma)
}

/// Euclidean loss `|u* - t|_2^2` and its gradient `2 (u* - t)`.
pub fn loss_euclidean(u_star: &Field2D, target: &Field2D) -> (f64, Field2D) {
    assert!(u_star.same_shape(target), "loss shape mismatch");
    let diff = u_star.sub(target);
    (diff.inner(&diff), diff.scale(2.0))
}

fn set_scalar(params: &mut SolverParams, name: &str, value: f64) {
    match name {
        "w_lambda" => params.w_lambda = value,
        "alpha0" => params.alpha0 = value,
        "alpha1" => params.alpha1 = value,
        "beta" => params.beta = value,
        "gamma" => params.gamma = value,
        "sigma_p" => params.sigma_p = value,
        "sigma_q" => params.sigma_q = value,
        "tau_u" => params.tau_u = value,
        "tau_v" => params.tau_v = value,
        "theta" => params.theta = value,
        _ => panic!("unknown scalar parameter {name}"),
    }
}

fn get_scalar(params: &SolverParams, name: &str) -> f64 {
    match name {
        "w_lambda" => params.w_lambda,
        "alpha0" => params.alpha0,
        "alpha1" => params.alpha1,
        "beta" => params.beta,
        "gamma" => params.gamma,
        "sigma_p" => params.sigma_p,
        "sigma_q" => params.sigma_q,
        "tau_u" => params.tau_u,
        "tau_v" => params.tau_v,
        "theta" => params.theta,
        _ => panic!("unknown scalar parameter {name}"),
    }
}

/// Compare tape gradients of the Euclidean loss against central finite
/// differences over every pixel of g and h and every scalar parameter,
/// returning the largest relative error.
///
/// Entries whose analytic and numeric values are both below the
/// finite-difference noise floor are counted as exact. Callers should
/// resample instances whose [`Tape::kink_margin`] is small, since a
/// perturbation across a projection boundary or an edge-magnitude zero
/// invalidates the comparison.
pub fn gradcheck_max_rel_error(
    g: &Field2D,
    h: &Field2D,
    params: &SolverParams,
    target: &Field2D,
) -> Result<f64> {
    let (u_star, tape) = forward_record(g, h, params)?;
    let (l0, d_u) = loss_euclidean(&u_star, target);
    let bundle = backward(&tape, &d_u)?;
    let floor = 1e-6 * (1.0 + l0.abs());
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);

    let loss_at = |g: &Field2D, h: &Field2D, params: &SolverParams| -> Result<f64> {
        let u = solver::solve(g, h, params)?;
        Ok(loss_euclidean(&u, target).0)
    };

    let mut worst = 0.0f64;
    for (field, grad) in [(g, &bundle.d_g), (h, &bundle.d_h)] {
        for idx in 0..field.len() {
            let v = field.data()[idx];
            let eps = 1e-5 * (1.0 + v.abs());
            let mut plus = field.clone();
            plus.data_mut()[idx] = v + eps;
            let mut minus = field.clone();
            minus.data_mut()[idx] = v - eps;
            let (lp, lm) = if std::ptr::eq(field, g) {
                (loss_at(&plus, h, params)?, loss_at(&minus, h, params)?)
            } else {
                (loss_at(g, &plus, params)?, loss_at(g, &minus, params)?)
            };
            worst = worst.max(rel(grad.data()[idx], (lp - lm) / (2.0 * eps)));
        }
    }
    for name in SCALAR_PARAM_NAMES {
        let v = get_scalar(params, name);
        let eps = 1e-5 * (1.0 + v.abs());
        let mut plus = params.clone();
        set_scalar(&mut plus, name, v + eps);
        let mut minus = params.clone();
        set_scalar(&mut minus, name, v - eps);
        let numeric = (loss_at(g, h, &plus)? - loss_at(g, h, &minus)?) / (2.0 * eps);
        worst = worst.max(rel(bundle.d_scalars.get(name), numeric));
    }
    Ok(worst)
}
