//! Wasserstein critic/generator objectives and the gradient penalty.
//!
//! Both players minimize: the critic minimizes `E[D(fake)] - E[D(real)]`
//! plus the penalty, the generator minimizes `-E[D(fake)]`.

use serde::{Deserialize, Serialize};
use tch::{Kind, Tensor};

use crate::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_gp: f64,
    pub use_drift: bool,
    pub drift_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            use_drift: false,
            drift_epsilon: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_loss: f64,
    /// `E[D(real)] - E[D(fake)]`.
    pub wasserstein_estimate: f64,
    pub gradient_penalty_term: f64,
    pub grad_norm_mean: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [
            self.d_loss,
            self.g_loss,
            self.wasserstein_estimate,
            self.gradient_penalty_term,
            self.grad_norm_mean,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn nonempty(t: &Tensor, what: &str) -> Result<()> {
    if t.numel() == 0 {
        return Err(CoreError::Shape(format!("{what} batch is empty")));
    }
    Ok(())
}

pub fn wgan_d_loss(real_scores: &Tensor, fake_scores: &Tensor) -> Result<Tensor> {
    nonempty(real_scores, "real score")?;
    nonempty(fake_scores, "fake score")?;
    Ok(fake_scores.mean(None::<Kind>) - real_scores.mean(None::<Kind>))
}

pub fn wgan_g_loss(fake_scores: &Tensor) -> Result<Tensor> {
    nonempty(fake_scores, "fake score")?;
    Ok(-fake_scores.mean(None::<Kind>))
}

/// `eps * real + (1 - eps) * fake` with one `eps` per sample.
pub fn interpolate_pairs(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Tensor> {
    let s = real.size();
    if s != fake.size() || s.is_empty() || s[0] as usize != eps.len() {
        return Err(CoreError::Shape(format!(
            "interpolation needs matching batches: real {s:?}, fake {:?}, {} eps",
            fake.size(),
            eps.len()
        )));
    }
    let mut shape = vec![s[0]];
    shape.extend(std::iter::repeat(1).take(s.len() - 1));
    let e = Tensor::from_slice(eps).to_kind(real.kind()).view(shape.as_slice());
    Ok(real * &e + fake * (1.0 - &e))
}

pub struct Penalty {
    /// `lambda * mean((|grad| - 1)^2)`, differentiable in the critic parameters.
    pub term: Tensor,
    /// Per-sample gradient norms.
    pub norms: Tensor,
}

/// Gradient penalty of `critic` at `x_hat`. The gradient is taken with
/// respect to `x_hat` only; anything else the critic depends on is held
/// fixed. The graph is kept so the term can be backpropagated into the
/// critic parameters.
pub fn gradient_penalty(critic: &dyn Fn(&Tensor) -> Result<Tensor>, x_hat: &Tensor, lambda: f64) -> Result<Penalty> {
    nonempty(x_hat, "interpolated")?;
    let x = x_hat.detach().set_requires_grad(true);
    let scores = critic(&x)?;
    let b = x.size()[0];
    let grad = if scores.requires_grad() {
        let mut g = Tensor::f_run_backward(&[scores.sum(None::<Kind>)], &[&x], true, true)?;
        g.pop().unwrap()
    } else {
        x.zeros_like()
    };
    let sq = grad.reshape([b, -1]).square().sum_dim_intlist(1, false, None::<Kind>);
    // exact zeros get norm 0 without an infinite sqrt slope
    let norms = sq.clamp_min(1e-30).sqrt().where_self(&sq.gt(0.0), &sq.zeros_like());
    let term = (&norms - 1.0).square().mean(None::<Kind>) * lambda;
    Ok(Penalty { term, norms })
}

pub struct CriticObjective {
    pub loss: Tensor,
    pub report: LossReport,
}

/// Full critic loss: Wasserstein term, penalty at interpolates, and the
/// optional drift term `drift_epsilon * E[D(real)^2]`.
pub fn total_d_loss(
    critic: &dyn Fn(&Tensor) -> Result<Tensor>,
    real: &Tensor,
    fake: &Tensor,
    eps: &[f64],
    cfg: &LossConfig,
) -> Result<CriticObjective> {
    let real_scores = critic(real)?;
    let fake_scores = critic(fake)?;
    let wgan = wgan_d_loss(&real_scores, &fake_scores)?;
    let mut loss = wgan.shallow_clone();
    let mut report = LossReport {
        wasserstein_estimate: -wgan.double_value(&[]),
        ..LossReport::default()
    };
    if cfg.lambda_gp != 0.0 {
        let x_hat = interpolate_pairs(real, fake, eps)?;
        let gp = gradient_penalty(critic, &x_hat, cfg.lambda_gp)?;
        report.gradient_penalty_term = gp.term.double_value(&[]);
        report.grad_norm_mean = gp.norms.mean(None::<Kind>).double_value(&[]);
        loss = loss + gp.term;
    }
    if cfg.use_drift {
        loss = loss + real_scores.square().mean(None::<Kind>) * cfg.drift_epsilon;
    }
    report.d_loss = loss.double_value(&[]);
    Ok(CriticObjective { loss, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_slice(v)
    }

    #[test]
    fn wgan_values() {
        assert_eq!(wgan_d_loss(&t(&[1.0]), &t(&[0.0])).unwrap().double_value(&[]), -1.0);
        assert_eq!(wgan_d_loss(&t(&[0.3, 0.7]), &t(&[0.3, 0.7])).unwrap().double_value(&[]), 0.0);
        assert_eq!(wgan_d_loss(&t(&[2.0, 0.0]), &t(&[1.0, 1.0])).unwrap().double_value(&[]), 0.0);
        assert_eq!(wgan_g_loss(&t(&[0.5])).unwrap().double_value(&[]), -0.5);
        assert_eq!(wgan_g_loss(&t(&[0.0])).unwrap().double_value(&[]), 0.0);
        assert_eq!(wgan_g_loss(&t(&[1.0, -1.0])).unwrap().double_value(&[]), 0.0);
        assert!(wgan_g_loss(&t(&[])).is_err());
        assert!(wgan_d_loss(&t(&[]), &t(&[1.0])).is_err());
    }

    #[test]
    fn interpolation_endpoints() {
        let real = Tensor::zeros([3, 2, 2], (Kind::Double, tch::Device::Cpu));
        let fake = Tensor::ones([3, 2, 2], (Kind::Double, tch::Device::Cpu));
        let x = interpolate_pairs(&real, &fake, &[1.0, 0.0, 0.5]).unwrap();
        assert!(x.get(0).equal(&real.get(0)));
        assert!(x.get(1).equal(&fake.get(1)));
        assert_eq!(x.get(2).mean(None::<Kind>).double_value(&[]), 0.5);
        assert!(interpolate_pairs(&real, &fake, &[0.5]).is_err());
        assert!(interpolate_pairs(&real, &fake.narrow(1, 0, 1), &[0.5; 3]).is_err());
    }

    #[test]
    fn penalty_of_simple_critics() {
        let x = Tensor::randn([4, 8], (Kind::Double, tch::Device::Cpu));
        let constant = |x: &Tensor| Ok(x.sum_dim_intlist(1, false, None::<Kind>) * 0.0 + 3.0);
        assert_eq!(gradient_penalty(&constant, &x, 10.0).unwrap().term.double_value(&[]), 10.0);
        let detached = |x: &Tensor| Ok(Tensor::full([x.size()[0]], 2.0, (Kind::Double, tch::Device::Cpu)));
        assert_eq!(gradient_penalty(&detached, &x, 7.0).unwrap().term.double_value(&[]), 7.0);
        let unit = |x: &Tensor| Ok(x.sum_dim_intlist(1, false, None::<Kind>) / 8f64.sqrt());
        assert!(gradient_penalty(&unit, &x, 10.0).unwrap().term.double_value(&[]) < 1e-10);
    }

    #[test]
    fn lambda_zero_is_plain_wgan() {
        let w = Tensor::randn([5], (Kind::Double, tch::Device::Cpu));
        let critic = |x: &Tensor| Ok(x.matmul(&w).tanh());
        let real = Tensor::randn([6, 5], (Kind::Double, tch::Device::Cpu));
        let fake = Tensor::randn([6, 5], (Kind::Double, tch::Device::Cpu));
        let cfg = LossConfig {
            lambda_gp: 0.0,
            ..LossConfig::default()
        };
        let out = total_d_loss(&critic, &real, &fake, &[0.5; 6], &cfg).unwrap();
        let plain = wgan_d_loss(&critic(&real).unwrap(), &critic(&fake).unwrap()).unwrap();
        assert_eq!(out.report.d_loss, plain.double_value(&[]));
        assert_eq!(out.report.gradient_penalty_term, 0.0);
    }
}
