//! Two-stage training: network pretraining on the patch loss, then joint
//! end-to-end training through the unrolled solver.
//!
//! Mini-batches are evaluated in parallel across samples but accumulated in
//! index order, and every weight update is serialized, so training is
//! bitwise deterministic for a fixed seed regardless of thread count.
//! Inputs are expected pre-normalized (see the pipeline's value scale).

use crate::error::{Error, Result};
use crate::field::Field2D;
use crate::net::{
    merge_head_grads, pretrain_loss_grad, sgd_momentum_step, split_heads, ConvNet, NetGrads,
};
use crate::parallel;
use crate::render::derive_rng;
use crate::solver::SolverParams;
use crate::tape::{self, ScalarGrads, SCALAR_PARAM_NAMES};
use rand::seq::SliceRandom;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            epochs: 30,
            patch_size: 32,
            batch_size: 16,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.patch_size == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "epochs, patch size and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One training pair (network input, ground truth), same spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Field2D,
    pub truth: Field2D,
}

/// Crop a `size` x `size` window at (y0, x0) from every channel.
fn crop(f: &Field2D, y0: usize, x0: usize, size: usize) -> Field2D {
    let mut out = Field2D::zeros(f.channels(), size, size);
    for c in 0..f.channels() {
        for y in 0..size {
            let src = &f.plane(c)[(y0 + y) * f.width() + x0..];
            out.plane_mut(c)[y * size..(y + 1) * size].copy_from_slice(&src[..size]);
        }
    }
    out
}

/// Non-overlapping patch grid over every sample (partial tiles dropped).
fn tile_patches(samples: &[TrainSample], size: usize) -> Vec<(usize, usize, usize)> {
    let mut patches = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let mut y = 0;
        while y + size <= s.input.height() {
            let mut x = 0;
            while x + size <= s.input.width() {
                patches.push((i, y, x));
                x += size;
            }
            y += size;
        }
    }
    patches
}

fn check_dataset(samples: &[TrainSample], patch_size: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    for s in samples {
        if !s.input.same_shape(&s.truth) {
            return Err(Error::Shape("input/truth shape mismatch".into()));
        }
        if s.input.channels() != 1 {
            return Err(Error::Shape("training inputs must be single-channel".into()));
        }
    }
    if tile_patches(samples, patch_size).is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no sample fits a {patch_size}x{patch_size} patch"
        )));
    }
    Ok(())
}

struct Velocity {
    net: NetGrads,
    scalars: [f64; 10],
}

fn apply_net_update(net: &mut ConvNet, grads: &NetGrads, vel: &mut NetGrads, cfg: &TrainConfig) {
    for ((layer, g), v) in net
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut vel.layers)
    {
        sgd_momentum_step(
            &mut layer.kernel,
            &mut v.d_kernel,
            &g.d_kernel,
            cfg.learning_rate,
            cfg.momentum,
        );
        sgd_momentum_step(
            &mut layer.bias,
            &mut v.d_bias,
            &g.d_bias,
            cfg.learning_rate,
            cfg.momentum,
        );
    }
}

/// Stage one: minimize the patch loss `|g - t|^2 + |h - grad t|^2` with
/// mini-batch SGD with momentum. Returns the per-epoch mean patch loss.
pub fn train_pretrain(
    net: &mut ConvNet,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dataset(samples, cfg.patch_size)?;
    let patches = tile_patches(samples, cfg.patch_size);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut vel = NetGrads::zeros(net);
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.rng_seed, epoch as u64));
        // per-patch losses in canonical order, so the reported curve does
        // not depend on the shuffle
        let mut losses = vec![0.0; patches.len()];
        for batch in order.chunks(cfg.batch_size) {
            let net_ref = &*net;
            let results = parallel::map_indexed(batch.len(), |k| {
                let (i, y0, x0) = patches[batch[k]];
                let x = crop(&samples[i].input, y0, x0, cfg.patch_size);
                let t = crop(&samples[i].truth, y0, x0, cfg.patch_size);
                let trace = net_ref.forward_trace(&x);
                let (g, h) = split_heads(&x, trace.last().unwrap());
                let (loss, d_g, d_h) = pretrain_loss_grad(&g, &h, &t);
                let grads = net_ref.backward(&trace, &merge_head_grads(&d_g, &d_h));
                (loss, grads)
            });
            let mut grads = NetGrads::zeros(net);
            for (k, (loss, g)) in results.iter().enumerate() {
                losses[batch[k]] = *loss;
                grads.accumulate(g);
            }
            grads.scale(1.0 / batch.len() as f64);
            apply_net_update(net, &grads, &mut vel, cfg);
        }
        curve.push(losses.iter().sum::<f64>() / patches.len() as f64);
        if !curve.last().unwrap().is_finite() {
            return Err(Error::NonFinite(format!("pretrain loss at epoch {epoch}")));
        }
    }
    Ok(curve)
}

fn clamp_params(p: &mut SolverParams) {
    // keep the model convex and the iteration meaningful
    let min = 1e-6;
    p.alpha0 = p.alpha0.max(min);
    p.alpha1 = p.alpha1.max(min);
    p.beta = p.beta.max(min);
    p.gamma = p.gamma.clamp(0.05, 2.0);
    p.sigma_p = p.sigma_p.max(min);
    p.sigma_q = p.sigma_q.max(min);
    p.tau_u = p.tau_u.max(min);
    p.tau_v = p.tau_v.max(min);
    p.theta = p.theta.clamp(0.0, 1.0);
}

fn scalar_values(p: &SolverParams) -> [f64; 10] {
    [
        p.w_lambda, p.alpha0, p.alpha1, p.beta, p.gamma, p.sigma_p, p.sigma_q, p.tau_u, p.tau_v,
        p.theta,
    ]
}

fn set_scalar_values(p: &mut SolverParams, v: &[f64; 10]) {
    p.w_lambda = v[0];
    p.alpha0 = v[1];
    p.alpha1 = v[2];
    p.beta = v[3];
    p.gamma = v[4];
    p.sigma_p = v[5];
    p.sigma_q = v[6];
    p.tau_u = v[7];
    p.tau_v = v[8];
    p.theta = v[9];
}

fn scalar_grad_array(g: &ScalarGrads) -> [f64; 10] {
    let mut out = [0.0; 10];
    for (o, name) in out.iter_mut().zip(SCALAR_PARAM_NAMES) {
        *o = g.get(name);
    }
    out
}

/// Stage two: train network weights and solver scalars end-to-end on the
/// Euclidean loss of the refined depth map. Returns the per-epoch mean loss.
pub fn train_joint(
    net: &mut ConvNet,
    params: &mut SolverParams,
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_dataset(samples, cfg.patch_size)?;
    let patches = tile_patches(samples, cfg.patch_size);
    let mut order: Vec<usize> = (0..patches.len()).collect();
    let mut vel = Velocity {
        net: NetGrads::zeros(net),
        scalars: [0.0; 10],
    };
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.rng_seed.wrapping_add(1), epoch as u64));
        let mut losses = vec![0.0; patches.len()];
        for batch in order.chunks(cfg.batch_size) {
            let net_ref = &*net;
            let params_ref = &*params;
            let results = parallel::map_indexed(batch.len(), |k| -> Result<_> {
                let (i, y0, x0) = patches[batch[k]];
                let x = crop(&samples[i].input, y0, x0, cfg.patch_size);
                let t = crop(&samples[i].truth, y0, x0, cfg.patch_size);
                let trace = net_ref.forward_trace(&x);
                let (g, h) = split_heads(&x, trace.last().unwrap());
                let (u, solver_tape) = tape::forward_record(&g, &h, params_ref)?;
                // per-pixel mean loss, matching the stage-one convention
                let n = (u.height() * u.width()) as f64;
                let (loss, d_u) = tape::loss_euclidean(&u, &t);
                let bundle = tape::backward(&solver_tape, &d_u.scale(1.0 / n))?;
                let loss = loss / n;
                let net_grads =
                    net_ref.backward(&trace, &merge_head_grads(&bundle.d_g, &bundle.d_h));
                Ok((loss, net_grads, bundle.d_scalars))
            });
            let mut net_grads = NetGrads::zeros(net);
            let mut scalar_grads = [0.0f64; 10];
            for (k, r) in results.into_iter().enumerate() {
                let (loss, g, s) = r?;
                losses[batch[k]] = loss;
                net_grads.accumulate(&g);
                for (acc, v) in scalar_grads.iter_mut().zip(scalar_grad_array(&s)) {
                    *acc += v;
                }
            }
            let inv = 1.0 / batch.len() as f64;
            net_grads.scale(inv);
            for v in &mut scalar_grads {
                *v *= inv;
            }
            apply_net_update(net, &net_grads, &mut vel.net, cfg);
            let mut values = scalar_values(params);
            sgd_momentum_step(
                &mut values,
                &mut vel.scalars,
                &scalar_grads,
                cfg.learning_rate,
                cfg.momentum,
            );
            set_scalar_values(params, &values);
            clamp_params(params);
        }
        curve.push(losses.iter().sum::<f64>() / patches.len() as f64);
        if !curve.last().unwrap().is_finite() {
            return Err(Error::NonFinite(format!("joint loss at epoch {epoch}")));
        }
    }
    Ok(curve)
}
