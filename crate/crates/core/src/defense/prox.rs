//! Proximal machinery: the generic forward-backward iteration, the exact
//! l1 prox, and the inexact proximal privacy step solved by inner gradient
//! descent.

use serde::{Deserialize, Serialize};

use crate::attack::AttackTarget;
use crate::defense::{privacy_loss, PrivacyLossKind};
use crate::error::{Error, Result};
use crate::nn::{Matrix, MlpModel};

/// Quadratic proximity term used by the privacy prox step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxKind {
    /// `1/2 ||theta - theta_start||^2` in parameter space.
    ParamL2,
    /// `1/2 (1/batch) ||h(theta; D) - h(theta_start; D)||^2` in feature space.
    FeatureL2,
}

/// Soft threshold: the exact prox of `t * |x|`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Generic forward-backward iteration: `x <- prox(x - step * grad_f(x), step)`.
pub fn fbs_solve(
    mut grad_f: impl FnMut(&[f64]) -> Vec<f64>,
    mut prox_g: impl FnMut(&mut [f64], f64),
    x0: &[f64],
    step: f64,
    iters: usize,
) -> Vec<f64> {
    let mut x = x0.to_vec();
    for _ in 0..iters {
        let g = grad_f(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi;
        }
        prox_g(&mut x, step);
    }
    x
}

/// One differentiable term of the proximal objective: value and gradient.
pub type ProxTerm<'a> = dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a;

/// Inner gradient descent on `tau1 * g(theta) + tau2 * p(theta)` from
/// `start`. Returns the iterate with the lowest objective seen when
/// `return_best` is set, otherwise the final iterate.
#[allow(clippy::too_many_arguments)]
pub fn prox_descent(
    start: &[f64],
    tau1: f64,
    tau2: f64,
    g_term: &mut ProxTerm<'_>,
    p_term: &mut ProxTerm<'_>,
    steps: usize,
    lr: f64,
    return_best: bool,
) -> Result<Vec<f64>> {
    if steps == 0 {
        return Ok(start.to_vec());
    }
    let mut theta = start.to_vec();
    let mut best = theta.clone();
    let mut best_obj = f64::INFINITY;
    for _ in 0..steps {
        let (gv, ggrad) = g_term(&theta)?;
        let (pv, pgrad) = p_term(&theta)?;
        let obj = tau1 * gv + tau2 * pv;
        if !obj.is_finite() {
            return Err(Error::Defense(format!(
                "proximal objective became non-finite ({obj})"
            )));
        }
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&theta);
        }
        for i in 0..theta.len() {
            theta[i] -= lr * (tau1 * ggrad[i] + tau2 * pgrad[i]);
        }
    }
    // Score the final iterate as well.
    let (gv, _) = g_term(&theta)?;
    let (pv, _) = p_term(&theta)?;
    let obj = tau1 * gv + tau2 * pv;
    if !obj.is_finite() {
        return Err(Error::Defense(format!(
            "proximal objective became non-finite ({obj})"
        )));
    }
    if obj < best_obj {
        best = theta.clone();
    }
    Ok(if return_best { best } else { theta })
}

/// Builds the privacy term `g(theta) = link(l(decoder; h(theta; batch), batch))`
/// for a frozen decoder, differentiable in the client parameters.
pub(crate) fn privacy_term<'a>(
    arch_model: &'a MlpModel,
    batch: &'a Matrix,
    decoder: &'a MlpModel,
    target: &'a AttackTarget,
    g_kind: PrivacyLossKind,
    clamp_count: &'a mut usize,
) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
    move |params: &[f64]| {
        let mut model = arch_model.clone();
        model.unflatten(params)?;
        let trace = model.forward_train(batch)?;
        let dec_trace = decoder.forward_eval(trace.output())?;
        let (l, dl_dout) = target.loss(dec_trace.output(), batch)?;
        let link = privacy_loss(l, g_kind)?;
        if link.clamped {
            *clamp_count += 1;
        }
        let dec_bundle = decoder.backward(&dec_trace, &dl_dout)?;
        let upstream = dec_bundle.input_grad.scale(link.dg_dl);
        let bundle = model.backward(&trace, &upstream)?;
        Ok((link.g, bundle.flat()))
    }
}

/// The proximity term of the configured kind, anchored at `start`.
pub(crate) fn proximity_term<'a>(
    kind: ProxKind,
    arch_model: &'a MlpModel,
    batch: &'a Matrix,
    start: &'a [f64],
) -> Result<Box<dyn FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a>> {
    match kind {
        ProxKind::ParamL2 => Ok(Box::new(move |params: &[f64]| {
            let mut v = 0.0;
            let grad: Vec<f64> = params
                .iter()
                .zip(start)
                .map(|(a, b)| {
                    let d = a - b;
                    v += d * d;
                    d
                })
                .collect();
            Ok((0.5 * v, grad))
        })),
        ProxKind::FeatureL2 => {
            let mut base_model = arch_model.clone();
            base_model.unflatten(start)?;
            let baseline = base_model.forward_train(batch)?.output().clone();
            let batch_n = batch.rows() as f64;
            Ok(Box::new(move |params: &[f64]| {
                let mut model = arch_model.clone();
                model.unflatten(params)?;
                let trace = model.forward_train(batch)?;
                let diff = trace.output().sub(&baseline)?;
                let v = 0.5 * diff.frob_norm_sq() / batch_n;
                let upstream = diff.scale(1.0 / batch_n);
                let bundle = model.backward(&trace, &upstream)?;
                Ok((v, bundle.flat()))
            }))
        }
    }
}

/// Inexact proximal operator of the privacy loss: inner gradient descent on
/// `tau1 * g(theta, decoder) + tau2 * proximity(theta, theta_start)` from the
/// model's current parameters, returning the best iterate seen.
#[allow(clippy::too_many_arguments)]
pub fn prox_privacy(
    model: &MlpModel,
    batch: &Matrix,
    decoder: &MlpModel,
    target: &AttackTarget,
    g_kind: PrivacyLossKind,
    prox_kind: ProxKind,
    tau1: f64,
    tau2: f64,
    steps: usize,
    lr: f64,
) -> Result<MlpModel> {
    if steps == 0 {
        return Err(Error::domain("prox_privacy needs at least one inner step"));
    }
    let start = model.flatten();
    let mut clamps = 0usize;
    let mut g_term = privacy_term(model, batch, decoder, target, g_kind, &mut clamps);
    let mut p_term = proximity_term(prox_kind, model, batch, &start)?;
    let best = prox_descent(
        &start,
        tau1,
        tau2,
        &mut g_term,
        p_term.as_mut(),
        steps,
        lr,
        true,
    )?;
    let mut out = model.clone();
    out.unflatten(&best)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-0.5, 1.0), 0.0);
    }

    #[test]
    fn quadratic_prox_reaches_weighted_average() {
        // min tau1 * 1/2 (x - 2)^2 + tau2 * 1/2 (x - 0)^2 -> x = 1.
        let mut g = |p: &[f64]| Ok((0.5 * (p[0] - 2.0).powi(2), vec![p[0] - 2.0]));
        let mut prox = |p: &[f64]| Ok((0.5 * p[0] * p[0], vec![p[0]]));
        let out = prox_descent(&[0.0], 1.0, 1.0, &mut g, &mut prox, 2000, 0.01, true).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-6, "got {}", out[0]);
    }

    #[test]
    fn absolute_value_prox_matches_soft_threshold() {
        // min |x| + 1/2 (x - 3)^2 -> x = 2.
        let mut g = |p: &[f64]| {
            let s = if p[0] > 0.0 {
                1.0
            } else if p[0] < 0.0 {
                -1.0
            } else {
                0.0
            };
            Ok((p[0].abs(), vec![s]))
        };
        let mut prox = |p: &[f64]| Ok((0.5 * (p[0] - 3.0).powi(2), vec![p[0] - 3.0]));
        let out = prox_descent(&[3.0], 1.0, 1.0, &mut g, &mut prox, 2000, 0.01, true).unwrap();
        assert!((out[0] - soft_threshold(3.0, 1.0)).abs() < 1e-6, "got {}", out[0]);
    }

    #[test]
    fn tau1_zero_keeps_the_start_point() {
        let mut g = |p: &[f64]| Ok((0.5 * (p[0] - 2.0).powi(2), vec![p[0] - 2.0]));
        let mut prox = |p: &[f64]| Ok((0.5 * (p[0] - 0.25).powi(2), vec![p[0] - 0.25]));
        let out = prox_descent(&[0.25], 0.0, 1.0, &mut g, &mut prox, 500, 0.05, true).unwrap();
        assert_eq!(out[0], 0.25);
    }

    #[test]
    fn raising_tau2_never_increases_distance_on_the_quadratic() {
        // Closed form: x* = (tau1 * 2 + tau2 * x0) / (tau1 + tau2), x0 = 0.
        let mut last_dist = f64::INFINITY;
        for tau2 in [0.5, 1.0, 2.0, 4.0] {
            let mut g = |p: &[f64]| Ok((0.5 * (p[0] - 2.0).powi(2), vec![p[0] - 2.0]));
            let mut prox = |p: &[f64]| Ok((0.5 * p[0] * p[0], vec![p[0]]));
            let out =
                prox_descent(&[0.0], 1.0, tau2, &mut g, &mut prox, 4000, 0.005, true).unwrap();
            let closed = 2.0 / (1.0 + tau2);
            assert!((out[0] - closed).abs() < 1e-6, "tau2={tau2}: {}", out[0]);
            let dist = out[0].abs();
            assert!(dist <= last_dist + 1e-9);
            last_dist = dist;
        }
    }

    #[test]
    fn non_finite_objective_is_a_defense_error() {
        let mut g = |_: &[f64]| Ok((f64::INFINITY, vec![0.0]));
        let mut prox = |p: &[f64]| Ok((0.0, vec![0.0 * p[0]]));
        assert!(matches!(
            prox_descent(&[0.0], 1.0, 1.0, &mut g, &mut prox, 10, 0.1, true),
            Err(Error::Defense(_))
        ));
    }

    #[test]
    fn fbs_solves_a_tiny_lasso() {
        // min 1/2 ||a x - b||^2 + lam |x|, scalar: closed form soft threshold.
        let a = 2.0_f64;
        let b = 3.0_f64;
        let lam = 0.5_f64;
        let step = 1.0 / (a * a);
        let x = fbs_solve(
            |x| vec![a * (a * x[0] - b)],
            |x, s| x[0] = soft_threshold(x[0], s * lam),
            &[0.0],
            step,
            500,
        );
        let closed = soft_threshold(a * b, lam) / (a * a);
        assert!((x[0] - closed).abs() < 1e-10, "{} vs {closed}", x[0]);
    }
}
