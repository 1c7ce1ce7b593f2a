//! Capsule nonlinearity, dynamic routing and convolutional capsule layers.

use tch::{Kind, Tensor};

use crate::layers::{equalized_scale, EqConv};
use crate::params::ParamStore;
use crate::{CoreError, Result};

pub const DEFAULT_ROUTING_ITERATIONS: usize = 3;
const SQUASH_GUARD: f64 = 1e-12;

/// `v = |s|^2 / (1 + |s|^2) * s / |s|` along `dim`; vectors with norm below
/// 1e-12 map to zero.
pub fn squash(s: &Tensor, dim: i64) -> Tensor {
    let n2 = s.square().sum_dim_intlist(dim, true, None::<Kind>);
    let guard = SQUASH_GUARD * SQUASH_GUARD;
    let safe = n2.clamp_min(guard);
    let factor = &safe / (&safe + 1.0) / safe.sqrt();
    let factor = factor.where_self(&n2.ge(guard), &n2.zeros_like());
    s * factor
}

pub struct Routed {
    /// Parent capsules, `(batch, parents, dim)`.
    pub parents: Tensor,
    /// Coupling coefficients used at each iteration, `(batch, children, parents)`.
    pub coefficients: Vec<Tensor>,
}

/// Routing-by-agreement over predictions `u_hat` of shape
/// `(batch, children, parents, dim)`.
pub fn dynamic_routing(u_hat: &Tensor, iterations: usize) -> Result<Routed> {
    let size = u_hat.size();
    if size.len() != 4 {
        return Err(CoreError::Shape(format!("predictions must be 4-D, got {size:?}")));
    }
    if size[2] == 0 {
        return Err(CoreError::Config("routing needs at least one parent".into()));
    }
    if iterations == 0 {
        return Err(CoreError::Config("routing needs at least one iteration".into()));
    }
    let mut logits = u_hat.zeros_like().narrow(3, 0, 1).squeeze_dim(3);
    let mut coefficients = Vec::with_capacity(iterations);
    let mut parents = Tensor::new();
    for it in 0..iterations {
        let c = logits.softmax(2, None::<Kind>);
        let s = (c.unsqueeze(-1) * u_hat).sum_dim_intlist(1, false, None::<Kind>);
        parents = squash(&s, -1);
        coefficients.push(c);
        if it + 1 < iterations {
            let agreement = (u_hat * parents.unsqueeze(1)).sum_dim_intlist(-1, false, None::<Kind>);
            logits = logits + agreement;
        }
    }
    Ok(Routed { parents, coefficients })
}

/// Capsules produced by a plain convolution, grouped and squashed.
pub struct PrimaryCapsules {
    conv: EqConv,
    types: i64,
    dim: i64,
}

impl PrimaryCapsules {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: i64, types: i64, dim: i64) -> Result<Self> {
        let conv = EqConv::new(store, name, in_ch, types * dim, &[3, 3], &[1, 1], &[1, 1], 1.0)?;
        Ok(Self { conv, types, dim })
    }

    /// Output `(batch, types * dim, h, w)` with every capsule squashed.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Tensor {
        let y = self.conv.forward(store, x);
        let s = y.size();
        squash(&y.view([s[0], self.types, self.dim, s[2], s[3]]), 2).view([s[0], self.types * self.dim, s[2], s[3]])
    }
}

/// Convolutional capsule layer. Each parent capsule at a position routes
/// over the child capsules inside its `k x k` window. Routing logits are
/// indexed by (parent type, child type, kernel offset) and shared across
/// positions, so agreement is averaged over the output grid.
pub struct ConvCapsule {
    weight: String,
    scale: f64,
    in_types: i64,
    in_dim: i64,
    out_types: i64,
    out_dim: i64,
    kernel: i64,
    stride: i64,
    padding: i64,
    iterations: usize,
}

impl ConvCapsule {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        (in_types, in_dim): (i64, i64),
        (out_types, out_dim): (i64, i64),
        kernel: i64,
        stride: i64,
        padding: i64,
        iterations: usize,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(CoreError::Config("routing needs at least one iteration".into()));
        }
        let weight = format!("{name}.w");
        store.normal(&weight, &[out_types, out_dim, in_types, in_dim, kernel, kernel])?;
        // uniform coupling divides by the parent count; undo that at init
        let scale = equalized_scale(in_types * in_dim * kernel * kernel, 1.0)? * out_types as f64;
        Ok(Self {
            weight,
            scale,
            in_types,
            in_dim,
            out_types,
            out_dim,
            kernel,
            stride,
            padding,
            iterations,
        })
    }

    /// `(batch, in_types * in_dim, h, w)` to `(batch, out_types * out_dim, h', w')`.
    pub fn forward(&self, store: &ParamStore, u: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(store, u)?.0)
    }

    /// Also returns the coupling coefficients of every iteration,
    /// `(batch, out_types, in_types, k, k)`.
    pub fn forward_traced(&self, store: &ParamStore, u: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let s = u.size();
        if s.len() != 4 || s[1] != self.in_types * self.in_dim {
            return Err(CoreError::Shape(format!(
                "capsule layer expects {} channels, got {s:?}",
                self.in_types * self.in_dim
            )));
        }
        let (b, k) = (s[0], self.kernel);
        let h_out = (s[2] + 2 * self.padding - k) / self.stride + 1;
        let w_out = (s[3] + 2 * self.padding - k) / self.stride + 1;
        let w = store.get(&self.weight) * self.scale;
        let (co, do_, ci, di) = (self.out_types, self.out_dim, self.in_types, self.in_dim);
        let patches = u.im2col([k, k], [1, 1], [self.padding, self.padding], [self.stride, self.stride]);
        let positions = patches.size()[2];
        let w7 = w.unsqueeze(0);
        let mut logits = Tensor::zeros([b, co, ci, k, k], (u.kind(), u.device()));
        let mut trace = Vec::with_capacity(self.iterations);
        let mut v = Tensor::new();
        for it in 0..self.iterations {
            let c = logits.softmax(1, None::<Kind>);
            let w_eff = (&w7 * c.view([b, co, 1, ci, 1, k, k].as_slice())).view([b, co * do_, ci * di * k * k]);
            let pre = w_eff.bmm(&patches).view([b, co, do_, positions]);
            v = squash(&pre, 2);
            trace.push(c);
            if it + 1 < self.iterations {
                let m = v.view([b, co * do_, positions]).bmm(&patches.transpose(1, 2)) / positions as f64;
                let agreement =
                    (&w7 * m.view([b, co, do_, ci, di, k, k].as_slice())).sum_dim_intlist([2i64, 4].as_slice(), false, None::<Kind>);
                logits = logits + agreement;
            }
        }
        Ok((v.view([b, co * do_, h_out, w_out]), trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(data: &[f64], shape: &[i64]) -> Tensor {
        Tensor::from_slice(data).view(shape)
    }

    #[test]
    fn squash_cases() {
        let z = squash(&t64(&[0.0, 0.0, 0.0], &[1, 3]), 1);
        assert_eq!(z.abs().sum(None::<Kind>).double_value(&[]), 0.0);

        let unit = squash(&t64(&[0.6, 0.8], &[1, 2]), 1);
        assert!((unit.double_value(&[0, 0]) - 0.3).abs() < 1e-12);
        assert!((unit.double_value(&[0, 1]) - 0.4).abs() < 1e-12);

        let big = squash(&t64(&[100.0, 0.0], &[1, 2]), 1);
        assert!((big.double_value(&[0, 0]) - 10000.0 / 10001.0).abs() < 1e-12);

        // zero input keeps finite gradients
        let x = t64(&[0.0, 0.0], &[1, 2]).set_requires_grad(true);
        squash(&x, 1).sum(None::<Kind>).backward();
        assert!(bool::try_from(x.grad().isfinite().all()).unwrap());
    }

    #[test]
    fn single_parent_routes_everything() {
        let u = Tensor::randn([2, 5, 1, 4], (Kind::Double, tch::Device::Cpu));
        let r = dynamic_routing(&u, 3).unwrap();
        for c in &r.coefficients {
            assert!(c.eq(1.0).all().int64_value(&[]) == 1);
        }
        let expect = squash(&u.sum_dim_intlist(1, false, None::<Kind>), -1);
        assert!(r.parents.allclose(&expect, 1e-12, 1e-12, false));
        assert!(dynamic_routing(&u, 0).is_err());
        assert!(dynamic_routing(&u.narrow(2, 0, 0), 1).is_err());
    }

    #[test]
    fn conv_capsule_on_one_position_is_plain_routing() {
        // with a 1x1 window on a 1x1 grid the shared-logit scheme coincides
        // with routing on explicit predictions
        let mut store = ParamStore::new(5);
        let layer = ConvCapsule::new(&mut store, "c", (3, 4), (2, 5), 1, 1, 0, 3).unwrap();
        let u = squash(&Tensor::randn([2, 3, 4, 1, 1], (Kind::Float, tch::Device::Cpu)), 2).view([2, 12, 1, 1]);
        let (out, trace) = layer.forward_traced(&store, &u).unwrap();
        let w = store.get("c.w").view([2, 5, 3, 4]) * layer.scale;
        // u_hat[b, i, j, :] = W[j, :, i, :] u[b, i, :]
        let u_hat = Tensor::einsum("jdie,bie->bijd", &[w, u.view([2, 3, 4])], None::<i64>);
        let r = dynamic_routing(&u_hat, 3).unwrap();
        assert!(out.view([2, 2, 5]).allclose(&r.parents, 1e-5, 1e-6, false));
        for (a, b) in trace.iter().zip(&r.coefficients) {
            assert!(a.view([2, 2, 3]).transpose(1, 2).allclose(b, 1e-5, 1e-6, false));
        }
    }

    #[test]
    fn conv_capsule_shapes_and_norms() {
        let mut store = ParamStore::new(1);
        let layer = ConvCapsule::new(&mut store, "c", (4, 8), (3, 8), 3, 2, 1, 3).unwrap();
        let u = squash(&Tensor::randn([2, 4, 8, 8, 8], (Kind::Float, tch::Device::Cpu)), 2).view([2, 32, 8, 8]);
        let (out, trace) = layer.forward_traced(&store, &u).unwrap();
        assert_eq!(out.size(), vec![2, 24, 4, 4]);
        let norms = out.view([2, 3, 8, 4, 4]).square().sum_dim_intlist(2, false, None::<Kind>).sqrt();
        assert!(norms.max().double_value(&[]) < 1.0);
        for c in trace {
            let sums = c.sum_dim_intlist(1, false, None::<Kind>);
            assert!((sums - 1.0).abs().max().double_value(&[]) < 1e-6);
        }
        assert!(layer.forward(&store, &u.narrow(1, 0, 16)).is_err());
    }
}
