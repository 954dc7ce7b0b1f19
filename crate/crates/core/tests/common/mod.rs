//! Oracles shared by the integration tests.
#![allow(dead_code)]

use pointdrop::geometry::{generate_shape, PointCloud, ShapeKind};
use pointdrop::masks::{DropSpec, Mode};
use pointdrop::net::{backward, cross_entropy, forward, LayerWidth, ModelSpec, Params, Sample};

/// One shared linear, one EdgeConv, max pool and a one-hidden-layer head.
pub fn grad_toy_model() -> ModelSpec {
    ModelSpec::from_widths(
        3,
        &[
            LayerWidth::Linear(8),
            LayerWidth::Slot,
            LayerWidth::Edge { m_out: 12, k: 4 },
            LayerWidth::Slot,
        ],
        &[10],
        3,
    )
    .unwrap()
}

pub fn toy_sample(seed: u64, n: usize) -> Sample<f64> {
    let kind = ShapeKind::ALL[(seed % 4) as usize];
    let cloud: PointCloud<f64> = generate_shape(kind, n, 0.05, seed).unwrap();
    Sample::new(PointCloud { label: (seed % 3) as usize, ..cloud }, 12).unwrap()
}

fn loss(model: &ModelSpec, params: &Params<f64>, s: &Sample<f64>, drop: &DropSpec, seed: u64) -> f64 {
    let (logits, _) = forward(model, params, s, drop, seed, Mode::Train).unwrap();
    cross_entropy(&logits, s.cloud.label).unwrap().0
}

/// Parameters with small random biases, so no ReLU input sits exactly on its
/// kink (zero-initialized biases put every zeroed input row there).
pub fn jittered_params(model: &ModelSpec, seed: u64) -> Params<f64> {
    use rand::Rng;
    let mut p = Params::<f64>::init(model, seed).unwrap();
    let mut r = pointdrop::rng::stream(seed ^ 0x5eed);
    for d in p.layers.iter_mut().flatten().chain(p.head.iter_mut()) {
        d.bias.iter_mut().for_each(|b| *b = r.random_range(-0.1..0.1));
    }
    p
}

pub struct GradCheck {
    pub worst: f64,
    pub at: String,
    pub checked: usize,
    /// Coordinates whose `±h` probe straddles a ReLU or max kink; central
    /// differences are meaningless there, so they are counted, not compared.
    pub kinks: usize,
}

/// Worst relative error between backprop and central differences with step
/// `h`, over every parameter. The denominator is floored at `floor` so that
/// near-zero gradients are compared absolutely.
pub fn max_grad_error(
    model: &ModelSpec,
    params: &Params<f64>,
    s: &Sample<f64>,
    drop: &DropSpec,
    seed: u64,
    h: f64,
    floor: f64,
) -> GradCheck {
    let (logits, mut tape) = forward(model, params, s, drop, seed, Mode::Train).unwrap();
    let (center, dlogits) = cross_entropy(&logits, s.cloud.label).unwrap();
    tape.set_loss_grad(dlogits).unwrap();
    let grads = backward(params, &tape).unwrap();
    let names = params.tensor_names();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut out = GradCheck {
        worst: 0.0,
        at: String::new(),
        checked: 0,
        kinks: 0,
    };
    let mut p = params.clone();
    for (t, name) in names.iter().enumerate() {
        for i in 0..analytic[t].len() {
            let orig = p.tensors()[t][i];
            p.tensors_mut()[t][i] = orig + h;
            let up = loss(model, &p, s, drop, seed);
            p.tensors_mut()[t][i] = orig - h;
            let down = loss(model, &p, s, drop, seed);
            p.tensors_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let (right, left) = ((up - center) / h, (center - down) / h);
            if (right - left).abs() > 1e-3 * (1.0 + numeric.abs()) {
                out.kinks += 1;
                continue;
            }
            out.checked += 1;
            let a = analytic[t][i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if err > out.worst {
                out.worst = err;
                out.at = format!("{name}[{i}]: backprop {a:e}, numeric {numeric:e}");
            }
        }
    }
    out
}

/// Largest absolute logit difference between a cloud and `count` random
/// row permutations of it, in eval mode.
pub fn max_permutation_drift(model: &ModelSpec, params: &Params<f64>, cloud: &PointCloud<f64>, count: u64, k: usize) -> f64 {
    use rand::seq::SliceRandom;
    let base = Sample::new(cloud.clone(), k).unwrap();
    let (reference, _) = forward(model, params, &base, &DropSpec::none(), 0, Mode::Eval).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..count {
        let mut order: Vec<usize> = (0..cloud.n()).collect();
        order.shuffle(&mut pointdrop::rng::stream(1000 + seed));
        let s = Sample::new(cloud.permuted(&order), k).unwrap();
        let (logits, _) = forward(model, params, &s, &DropSpec::none(), 0, Mode::Eval).unwrap();
        for (a, b) in logits.iter().zip(&reference) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
