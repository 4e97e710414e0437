//! Small dense networks with hand-written reverse-mode gradients.
//!
//! The actor and critic are separate `obs -> 64 -> 64 -> out` tanh MLPs. The
//! policy head is a diagonal Gaussian whose log standard deviation is a free,
//! state-independent parameter vector.

mod adam;
mod init;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use init::{orthogonal, InitConfig};

use serde::{Deserialize, Serialize};

use crate::env::{Observation, ACT_DIM, OBS_DIM};
use crate::error::{Error, Result};

pub const HIDDEN: usize = 64;
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Fully connected layer, `weight` stored row-major as `n_out x n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    #[inline]
    fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weight.chunks_exact(self.n_in).zip(&self.bias)) {
            *o = b + dot(row, x);
        }
    }

    /// Accumulates `dy x^T` and `dy` into `grad`, and writes `W^T dy` into `dx` when given.
    #[inline]
    fn backward_into(&self, x: &[f64], dy: &[f64], grad: &mut Dense, dx: Option<&mut [f64]>) {
        for ((g_row, gb), d) in grad.weight.chunks_exact_mut(self.n_in).zip(grad.bias.iter_mut()).zip(dy) {
            *gb += d;
            for (g, xi) in g_row.iter_mut().zip(x) {
                *g += d * xi;
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            for (row, d) in self.weight.chunks_exact(self.n_in).zip(dy) {
                for (o, w) in dx.iter_mut().zip(row) {
                    *o += d * w;
                }
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes without reassociation
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * i + k] * b[4 * i + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `in -> hidden -> hidden -> out` with tanh on the hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: [Dense; 3],
}

/// Hidden activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub hidden: [Vec<f64>; 2],
}

impl Mlp {
    pub fn zeros(n_in: usize, hidden: usize, n_out: usize) -> Self {
        Self {
            layers: [Dense::zeros(n_in, hidden), Dense::zeros(hidden, hidden), Dense::zeros(hidden, n_out)],
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers[2].n_out
    }

    pub fn forward(&self, x: &[f64], out: &mut [f64]) -> MlpTrace {
        let mut h1 = vec![0.0; self.layers[0].n_out];
        let mut h2 = vec![0.0; self.layers[1].n_out];
        self.layers[0].forward_into(x, &mut h1);
        h1.iter_mut().for_each(|h| *h = h.tanh());
        self.layers[1].forward_into(&h1, &mut h2);
        h2.iter_mut().for_each(|h| *h = h.tanh());
        self.layers[2].forward_into(&h2, out);
        MlpTrace { hidden: [h1, h2] }
    }

    /// Hidden-layer activations only.
    pub fn hidden_activations(&self, x: &[f64]) -> [Vec<f64>; 2] {
        let mut out = vec![0.0; self.n_out()];
        self.forward(x, &mut out).hidden
    }

    pub fn backward(&self, x: &[f64], trace: &MlpTrace, dout: &[f64], grad: &mut Mlp, scratch: &mut BackwardScratch) {
        let [h1, h2] = &trace.hidden;
        let [g0, g1, g2] = &mut grad.layers;
        self.layers[2].backward_into(h2, dout, g2, Some(&mut scratch.d2));
        for (d, h) in scratch.d2.iter_mut().zip(h2) {
            *d *= 1.0 - h * h;
        }
        self.layers[1].backward_into(h1, &scratch.d2, g1, Some(&mut scratch.d1));
        for (d, h) in scratch.d1.iter_mut().zip(h1) {
            *d *= 1.0 - h * h;
        }
        self.layers[0].backward_into(x, &scratch.d1, g0, None);
    }
}

pub struct BackwardScratch {
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl BackwardScratch {
    fn for_mlp(mlp: &Mlp) -> Self {
        Self {
            d1: vec![0.0; mlp.layers[0].n_out],
            d2: vec![0.0; mlp.layers[1].n_out],
        }
    }
}

/// Which role a parameter tensor plays; L2 applies to weights only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    LogStd,
}

/// Actor and critic parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub policy: Mlp,
    pub value: Mlp,
    pub log_std: Vec<f64>,
}

/// Outputs of both heads for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutput {
    pub mean: [f64; ACT_DIM],
    pub log_std: [f64; ACT_DIM],
    pub value: f64,
}

/// Gradient of a per-sample loss with respect to the head outputs.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HeadGrad {
    pub mean: [f64; ACT_DIM],
    pub log_std: [f64; ACT_DIM],
    pub value: f64,
}

impl NetworkParams {
    pub fn zeros() -> Self {
        Self {
            policy: Mlp::zeros(OBS_DIM, HIDDEN, ACT_DIM),
            value: Mlp::zeros(OBS_DIM, HIDDEN, 1),
            log_std: vec![0.0; ACT_DIM],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        self.visit_mut(|_, t| t.fill(value));
    }

    /// Rejects parameter sets that are not the `12 -> 64 -> 64 -> {4, 1}` layout.
    pub fn check_architecture(&self) -> Result<()> {
        let expect = |mlp: &Mlp, out: usize, name: &str| -> Result<()> {
            let dims = [(OBS_DIM, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, out)];
            for (layer, (n_in, n_out)) in mlp.layers.iter().zip(dims) {
                if layer.n_in != n_in
                    || layer.n_out != n_out
                    || layer.weight.len() != n_in * n_out
                    || layer.bias.len() != n_out
                {
                    return Err(Error::ArchitectureMismatch(format!(
                        "{name} layer is {}x{} ({} weights), expected {n_in}x{n_out}",
                        layer.n_in,
                        layer.n_out,
                        layer.weight.len()
                    )));
                }
            }
            Ok(())
        };
        expect(&self.policy, ACT_DIM, "policy")?;
        expect(&self.value, 1, "value")?;
        if self.log_std.len() != ACT_DIM {
            return Err(Error::ArchitectureMismatch(format!(
                "log_std has {} entries, expected {ACT_DIM}",
                self.log_std.len()
            )));
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(TensorKind, &[f64])> {
        let mut out = Vec::with_capacity(13);
        for mlp in [&self.policy, &self.value] {
            for layer in &mlp.layers {
                out.push((TensorKind::Weight, layer.weight.as_slice()));
                out.push((TensorKind::Bias, layer.bias.as_slice()));
            }
        }
        out.push((TensorKind::LogStd, self.log_std.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorKind, &mut [f64])> {
        let mut out = Vec::with_capacity(13);
        for mlp in [&mut self.policy, &mut self.value] {
            for layer in &mut mlp.layers {
                out.push((TensorKind::Weight, layer.weight.as_mut_slice()));
                out.push((TensorKind::Bias, layer.bias.as_mut_slice()));
            }
        }
        out.push((TensorKind::LogStd, self.log_std.as_mut_slice()));
        out
    }

    pub fn visit(&self, mut f: impl FnMut(TensorKind, &[f64])) {
        for (kind, t) in self.tensors() {
            f(kind, t);
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(TensorKind, &mut [f64])) {
        for (kind, t) in self.tensors_mut() {
            f(kind, t);
        }
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.visit(|_, t| v.extend_from_slice(t));
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        self.visit_mut(|_, t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
        assert_eq!(offset, flat.len(), "flat parameter vector has the wrong length");
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, t| ok &= t.iter().all(|x| x.is_finite()));
        ok
    }

    pub fn l2_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(|_, t| s += t.iter().map(|x| x * x).sum::<f64>());
        s.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.visit_mut(|_, t| t.iter_mut().for_each(|x| *x *= factor));
    }

    pub fn clamp_log_std(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    pub fn forward_policy(&self, obs: &Observation) -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
        let mut mean = [0.0; ACT_DIM];
        self.policy.forward(&obs.0, &mut mean);
        let mut log_std = [0.0; ACT_DIM];
        log_std.copy_from_slice(&self.log_std);
        (mean, log_std)
    }

    pub fn forward_value(&self, obs: &Observation) -> f64 {
        let mut v = [0.0];
        self.value.forward(&obs.0, &mut v);
        v[0]
    }

    pub fn forward(&self, obs: &Observation) -> HeadOutput {
        let (mean, log_std) = self.forward_policy(obs);
        HeadOutput {
            mean,
            log_std,
            value: self.forward_value(obs),
        }
    }

    /// `lambda / 2 * sum(w^2)` over weight matrices.
    pub fn l2_penalty(&self, lambda: f64) -> f64 {
        let mut s = 0.0;
        self.visit(|kind, t| {
            if kind == TensorKind::Weight {
                s += t.iter().map(|x| x * x).sum::<f64>();
            }
        });
        0.5 * lambda * s
    }

    /// Gradient of [`Self::l2_penalty`].
    pub fn l2_gradient(&self, lambda: f64) -> NetworkParams {
        let mut g = self.clone();
        g.visit_mut(|kind, t| {
            if kind == TensorKind::Weight {
                t.iter_mut().for_each(|x| *x *= lambda);
            } else {
                t.fill(0.0);
            }
        });
        g
    }

    /// Mean over `obs` of a per-sample loss of the head outputs, and its
    /// gradient with respect to every parameter.
    pub fn backward<F>(&self, obs: &[Observation], mut loss: F) -> Result<(f64, NetworkParams)>
    where
        F: FnMut(usize, &HeadOutput) -> (f64, HeadGrad),
    {
        let mut grad = self.zeros_like();
        if obs.is_empty() {
            return Ok((0.0, grad));
        }
        let inv_n = 1.0 / obs.len() as f64;
        let mut total = 0.0;
        let mut policy_scratch = BackwardScratch::for_mlp(&self.policy);
        let mut value_scratch = BackwardScratch::for_mlp(&self.value);
        let mut mean = [0.0; ACT_DIM];
        let mut value = [0.0; 1];
        let mut log_std = [0.0; ACT_DIM];
        log_std.copy_from_slice(&self.log_std);
        for (i, o) in obs.iter().enumerate() {
            let p_trace = self.policy.forward(&o.0, &mut mean);
            let v_trace = self.value.forward(&o.0, &mut value);
            let out = HeadOutput {
                mean,
                log_std,
                value: value[0],
            };
            let (l, g) = loss(i, &out);
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss(l));
            }
            total += l;
            let dmean = g.mean.map(|x| x * inv_n);
            self.policy.backward(&o.0, &p_trace, &dmean, &mut grad.policy, &mut policy_scratch);
            self.value
                .backward(&o.0, &v_trace, &[g.value * inv_n], &mut grad.value, &mut value_scratch);
            for (gs, d) in grad.log_std.iter_mut().zip(g.log_std) {
                *gs += d * inv_n;
            }
        }
        Ok((total * inv_n, grad))
    }
}

/// Diagonal Gaussian helpers.
pub mod gaussian {
    use super::{ACT_DIM, LN_2PI};

    pub fn log_prob(mean: &[f64; ACT_DIM], log_std: &[f64; ACT_DIM], action: &[f64; ACT_DIM]) -> f64 {
        let mut lp = 0.0;
        for i in 0..ACT_DIM {
            let z = (action[i] - mean[i]) * (-log_std[i]).exp();
            lp += -0.5 * z * z - log_std[i] - 0.5 * LN_2PI;
        }
        lp
    }

    /// `(d log_prob / d mean, d log_prob / d log_std)`.
    pub fn log_prob_grad(
        mean: &[f64; ACT_DIM],
        log_std: &[f64; ACT_DIM],
        action: &[f64; ACT_DIM],
    ) -> ([f64; ACT_DIM], [f64; ACT_DIM]) {
        let mut dm = [0.0; ACT_DIM];
        let mut ds = [0.0; ACT_DIM];
        for i in 0..ACT_DIM {
            let inv_std = (-log_std[i]).exp();
            let z = (action[i] - mean[i]) * inv_std;
            dm[i] = z * inv_std;
            ds[i] = z * z - 1.0;
        }
        (dm, ds)
    }

    pub fn entropy(log_std: &[f64; ACT_DIM]) -> f64 {
        log_std.iter().map(|s| s + 0.5 + 0.5 * LN_2PI).sum()
    }

    pub fn sample(mean: &[f64; ACT_DIM], log_std: &[f64; ACT_DIM], noise: &[f64; ACT_DIM]) -> [f64; ACT_DIM] {
        std::array::from_fn(|i| mean[i] + log_std[i].exp() * noise[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng, scale: f64) -> NetworkParams {
        let mut p = NetworkParams::zeros();
        p.visit_mut(|_, t| t.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale)));
        p.clamp_log_std();
        p
    }

    fn random_obs(rng: &mut impl Rng) -> Observation {
        Observation(std::array::from_fn(|_| rng.random_range(-3.0..3.0)))
    }

    /// Straightforward loop evaluation, independent of `Dense::forward_into`.
    fn oracle_mlp(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, layer) in mlp.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.n_out];
            for o in 0..layer.n_out {
                let mut s = layer.bias[o];
                for i in 0..layer.n_in {
                    s += layer.weight[o * layer.n_in + i] * a[i];
                }
                next[o] = if l < 2 { s.tanh() } else { s };
            }
            a = next;
        }
        a
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros();
        let obs = Observation([1.5; OBS_DIM]);
        assert_eq!(p.forward_policy(&obs).0, [0.0; ACT_DIM]);
        assert_eq!(p.forward_value(&obs), 0.0);
    }

    #[test]
    fn hidden_activations_saturate_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 0.5);
        let obs = random_obs(&mut rng);
        let big: Vec<f64> = obs.0.iter().map(|x| x * 1e6).collect();
        for layer in p.policy.hidden_activations(&big) {
            assert!(layer.iter().all(|h| h.abs() <= 1.0));
        }
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = random_params(&mut rng, 0.4);
            let obs = random_obs(&mut rng);
            let (mean, log_std) = p.forward_policy(&obs);
            let expect = oracle_mlp(&p.policy, &obs.0);
            for i in 0..ACT_DIM {
                assert!((mean[i] - expect[i]).abs() < 1e-12);
            }
            assert_eq!(log_std.to_vec(), p.log_std);
            let v = p.forward_value(&obs);
            assert!((v - oracle_mlp(&p.value, &obs.0)[0]).abs() < 1e-12);
            assert_eq!(v, p.forward_value(&obs));
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 0.3);
        let obs: Vec<_> = (0..8).map(|_| random_obs(&mut rng)).collect();
        let (l, g) = p.backward(&obs, |_, _| (2.5, HeadGrad::default())).unwrap();
        assert_eq!(l, 2.5);
        assert_eq!(g.l2_norm(), 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let p = NetworkParams::zeros();
        let obs = [Observation([0.0; OBS_DIM])];
        assert!(matches!(
            p.backward(&obs, |_, _| (f64::NAN, HeadGrad::default())),
            Err(Error::NonFiniteLoss(_))
        ));
    }

    #[test]
    fn l2_gradient_is_lambda_times_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 1.0);
        let g = p.l2_gradient(1e-3);
        assert_eq!(g.policy.layers[1].weight[7], 1e-3 * p.policy.layers[1].weight[7]);
        assert_eq!(g.policy.layers[1].bias[7], 0.0);
        assert!(g.log_std.iter().all(|x| *x == 0.0));
        // finite-difference on the penalty itself
        let mut flat = p.to_flat();
        let gf = g.to_flat();
        let h = 1e-5;
        for idx in [0usize, 100, 5000, flat.len() - 1] {
            let orig = flat[idx];
            let mut q = p.clone();
            flat[idx] = orig + h;
            q.set_flat(&flat);
            let up = q.l2_penalty(1e-3);
            flat[idx] = orig - h;
            q.set_flat(&flat);
            let down = q.l2_penalty(1e-3);
            flat[idx] = orig;
            assert!(((up - down) / (2.0 * h) - gf[idx]).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_matches_finite_differences_for_a_generic_loss() {
        // loss = sum_j c_j mean_j^2 + (value - 1)^2 + sum_j log_std_j^3
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_params(&mut rng, 0.3);
        let obs: Vec<_> = (0..8).map(|_| random_obs(&mut rng)).collect();
        let c = [0.5, -1.0, 2.0, 0.25];
        let f = |_: usize, out: &HeadOutput| {
            let mut l = (out.value - 1.0).powi(2);
            let mut g = HeadGrad {
                value: 2.0 * (out.value - 1.0),
                ..HeadGrad::default()
            };
            for j in 0..ACT_DIM {
                l += c[j] * out.mean[j] * out.mean[j] + out.log_std[j].powi(3);
                g.mean[j] = 2.0 * c[j] * out.mean[j];
                g.log_std[j] = 3.0 * out.log_std[j].powi(2);
            }
            (l, g)
        };
        let (_, grad) = p.backward(&obs, f).unwrap();
        let eval = |q: &NetworkParams| q.backward(&obs, f).unwrap().0;
        let gf = grad.to_flat();
        let mut flat = p.to_flat();
        let h = 1e-5;
        for idx in 0..flat.len() {
            let orig = flat[idx];
            let mut q = p.clone();
            flat[idx] = orig + h;
            q.set_flat(&flat);
            let up = eval(&q);
            flat[idx] = orig - h;
            q.set_flat(&flat);
            let down = eval(&q);
            flat[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - gf[idx]).abs();
            assert!(err <= 1e-4 * fd.abs().max(gf[idx].abs()) || err < 1e-7, "param {idx}: fd {fd} analytic {}", gf[idx]);
        }
    }

    #[test]
    fn gaussian_log_prob_gradient() {
        let mean = [0.1, -0.3, 0.7, 0.0];
        let log_std = [-0.5, 0.2, 0.0, -1.0];
        let a = [0.3, 0.1, -0.2, 0.05];
        let (dm, ds) = gaussian::log_prob_grad(&mean, &log_std, &a);
        let h = 1e-6;
        for i in 0..ACT_DIM {
            let mut m2 = mean;
            m2[i] += h;
            let mut m1 = mean;
            m1[i] -= h;
            let fd = (gaussian::log_prob(&m2, &log_std, &a) - gaussian::log_prob(&m1, &log_std, &a)) / (2.0 * h);
            assert!((fd - dm[i]).abs() < 1e-6);
            let mut s2 = log_std;
            s2[i] += h;
            let mut s1 = log_std;
            s1[i] -= h;
            let fd = (gaussian::log_prob(&mean, &s2, &a) - gaussian::log_prob(&mean, &s1, &a)) / (2.0 * h);
            assert!((fd - ds[i]).abs() < 1e-6);
        }
        // standard normal at its mean: -0.5 ln(2 pi) per dimension
        let lp = gaussian::log_prob(&[0.0; 4], &[0.0; 4], &[0.0; 4]);
        assert!((lp + 2.0 * LN_2PI).abs() < 1e-12);
        assert!((gaussian::entropy(&[0.0; 4]) - 4.0 * (0.5 + 0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn architecture_check() {
        let mut p = NetworkParams::zeros();
        p.check_architecture().unwrap();
        p.value.layers[2] = Dense::zeros(HIDDEN, 2);
        assert!(matches!(p.check_architecture(), Err(Error::ArchitectureMismatch(_))));
    }
}
