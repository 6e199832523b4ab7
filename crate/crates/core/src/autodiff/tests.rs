use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::signal::{StftConfig, StftKernel, WindowKind};

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Compares reverse-mode gradients with central differences for every input.
fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let eval = |vals: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.scalar(out)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out);
    let h = 1e-6;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= h;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
            num += (fd - analytic.data()[i]).powi(2);
            den += fd.powi(2);
        }
        let rel = num.sqrt() / den.sqrt().max(1e-12);
        assert!(rel < 1e-6, "input {k}: relative gradient error {rel:e}");
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_tensor(&[3, 4], &mut rng);
    let b = rand_tensor(&[3, 4], &mut rng);
    check(vec![a, b], |g, v| {
        let s = g.add(v[0], v[1]);
        let d = g.sub(s, v[1]);
        let m = g.mul(d, v[1]);
        let e = g.exp(m);
        let sn = g.sin(e);
        let cs = g.cos(v[0]);
        let at = g.atan2(sn, cs);
        let ge = g.gelu(at);
        let lr = g.leaky_relu(ge, 0.1);
        let sg = g.sigmoid(lr);
        let sc = g.scale(sg, 3.0);
        let ab = g.abs(v[0]);
        let lc = g.log_clamp(ab, 1e-3);
        let t = g.add(sc, lc);
        g.mean(t)
    });
}

#[test]
fn matmul_bias_concat_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&[4, 3], &mut rng);
    let w = rand_tensor(&[5, 2], &mut rng);
    let b = rand_tensor(&[2], &mut rng);
    let y = rand_tensor(&[4, 2], &mut rng);
    check(vec![x, w, b, y], |g, v| {
        let c = g.concat_cols(&[v[0], v[3]]);
        let l = g.linear(c, v[1], v[2]);
        let s = g.slice_cols(l, 1, 1);
        let t = g.transpose(s);
        let r = g.reshape(t, vec![2, 2]);
        let sq = g.mul(r, r);
        g.sum(sq)
    });
}

#[test]
fn layer_norm_and_grn() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&[5, 4], &mut rng);
    let gamma = rand_tensor(&[4], &mut rng);
    let beta = rand_tensor(&[4], &mut rng);
    let probe = rand_tensor(&[5, 4], &mut rng);
    check(vec![x, gamma, beta, probe], |g, v| {
        let ln = g.layer_norm(v[0], v[1], v[2]);
        let gr = g.grn(ln, v[1], v[2], 1e-6);
        let p = g.mul(gr, v[3]);
        g.sum(p)
    });
}

#[test]
fn depthwise_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = rand_tensor(&[6, 3], &mut rng);
    let w = rand_tensor(&[3, 5], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    let probe = rand_tensor(&[6, 3], &mut rng);
    check(vec![x, w, b, probe], |g, v| {
        let y = g.depthwise_conv1d(v[0], v[1], v[2]);
        let p = g.mul(y, v[3]);
        g.sum(p)
    });
}

#[test]
fn strided_conv2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_tensor(&[2, 7, 5], &mut rng);
    let w = rand_tensor(&[3, 2, 3, 2], &mut rng);
    let b = rand_tensor(&[3], &mut rng);
    check(vec![x, w, b], |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], (2, 1), (1, 1));
        let sq = g.mul(y, y);
        g.mean(sq)
    });
}

#[test]
fn gather_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_tensor(&[6], &mut rng);
    let y = rand_tensor(&[8], &mut rng);
    let index = Arc::new(vec![0, 1, 2, 3, 4, 5, 4, 3]);
    let targets = Arc::new(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    check(vec![x, y], move |g, v| {
        let gx = g.gather(v[0], index.clone(), vec![8]);
        let h1 = g.hinge_mean(gx, 1.0);
        let h2 = g.hinge_mean(v[1], -1.0);
        let l1 = g.l1_mean(gx, v[1]);
        let bce = g.bce_with_logits(gx, targets.clone());
        g.add_all(&[h1, h2, l1, bce])
    });
}

#[test]
fn istft_and_stft_magnitude() {
    let cfg = StftConfig {
        frame_length: 16,
        frame_shift: 4,
        fft_size: 16,
        sample_rate: 16000,
        window: WindowKind::Hann,
    };
    let kernel = Arc::new(StftKernel::new(&cfg));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let amp = rand_tensor(&[6, 9], &mut rng).map(|v| v.abs() + 0.1);
    let phase = rand_tensor(&[6, 9], &mut rng).map(|v| v * 3.0);
    check(vec![amp, phase], move |g, v| {
        let x = g.istft(v[0], v[1], kernel.clone());
        let m = g.stft_magnitude(x, kernel.clone());
        let l = g.log_clamp(m, 1e-9);
        g.mean(l)
    });
}

#[test]
fn frozen_inputs_get_no_gradient() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[2], 1.0));
    let b = g.variable(Tensor::full(&[2], 2.0));
    let c = g.mul(a, b);
    let s = g.sum(c);
    let grads = g.backward(s);
    assert!(grads.get(a).is_none());
    assert_eq!(grads.get(b).unwrap().data(), &[1.0, 1.0]);
}
