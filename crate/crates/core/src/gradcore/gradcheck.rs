//! Central finite-difference gradient checking in `f64`.
//!
//! The numeric side only ever evaluates forward passes on an inference tape,
//! so it is independent of every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::Pad2d;
use super::pointwise::Activation;
use super::reduce::LossKind;
use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::Result;

/// `∂f/∂xᵢ ≈ (f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h`.
pub fn numerical_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Checks every input gradient of `op`, reduced to a scalar through a fixed
/// random projection `Σ rᵢ·yᵢ`. Returns one relative error per input.
pub fn check_op<R, F>(op: F, inputs: &[Tensor<f64>], h: f64, rng: &mut R) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let probe_shape = op(&Tape::inference(), inputs)?.shape().to_vec();
    let proj = Tensor::<f64>::randn(probe_shape, 0.0, 1.0, rng);

    let tape = Tape::new();
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let y = op(&tape, &leaves)?;
    let loss = tape.sum(&tape.mul(&y, &proj)?)?;
    let grads = tape.backward(&loss)?;

    let mut errors = Vec::with_capacity(inputs.len());
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(leaf);
        let eval = |x: &[f64]| -> f64 {
            let mut args = inputs.to_vec();
            args[k] = Tensor::new(inputs[k].shape().to_vec(), x.to_vec()).expect("shape preserved");
            let y = op(&Tape::inference(), &args).expect("forward succeeded once already");
            y.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
        };
        let numeric = numerical_gradient(eval, inputs[k].data(), h);
        errors.push(relative_error(analytic.data(), &numeric));
    }
    Ok(errors)
}

/// Result of checking one op over many random cases.
#[derive(Debug, Clone, PartialEq)]
pub struct OpReport {
    pub name: &'static str,
    /// Linear ops are held to the tighter tolerance.
    pub linear: bool,
    pub cases: usize,
    pub max_error: f64,
}

impl OpReport {
    pub fn tolerance(&self) -> f64 {
        if self.linear {
            1e-6
        } else {
            1e-4
        }
    }

    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance()
    }
}

type OpFn = Box<dyn Fn(&Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>>;
type CaseGen = fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn);

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, rng)
}

/// Values bounded away from zero so kinks never sit inside a probe.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).expect("shape matches")
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> [usize; 4] {
    [
        rng.random_range(1..=2),
        rng.random_range(1..=3),
        rng.random_range(lo..=hi),
        rng.random_range(lo..=hi),
    ]
}

fn conv_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let [n, c, h, w] = dims(rng, 3, 7);
    let (k, s) = (rng.random_range(1..=3usize), rng.random_range(1..=2usize));
    let c_out = rng.random_range(1..=3);
    let pad = if rng.random::<bool>() {
        Pad2d::same(h, w, k, k, (s, s))
    } else {
        Pad2d::uniform(rng.random_range(0..=1))
    };
    let inputs = vec![
        randn(rng, &[n, c, h, w]),
        randn(rng, &[c_out, c, k, k]),
        randn(rng, &[c_out]),
    ];
    (
        inputs,
        Box::new(move |t, x| t.conv2d(&x[0], &x[1], Some(&x[2]), (s, s), pad)),
    )
}

fn conv_t_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let [n, c, h, w] = dims(rng, 2, 5);
    let k = rng.random_range(2..=3usize);
    let s = rng.random_range(1..=2usize);
    let p = rng.random_range(0..=(k - 1) / 2);
    let op = if s > 1 { rng.random_range(0..s) } else { 0 };
    let c_out = rng.random_range(1..=3);
    let inputs = vec![
        randn(rng, &[n, c, h, w]),
        randn(rng, &[c, c_out, k, k]),
        randn(rng, &[c_out]),
    ];
    (
        inputs,
        Box::new(move |t, x| {
            t.conv2d_transpose(&x[0], &x[1], Some(&x[2]), (s, s), (p, p), (op, op))
        }),
    )
}

fn instance_norm_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let [n, c, h, w] = dims(rng, 2, 5);
    let inputs = vec![
        randn(rng, &[n, c, h, w]),
        randn(rng, &[c]),
        randn(rng, &[c]),
    ];
    (
        inputs,
        Box::new(|t, x| t.instance_norm(&x[0], &x[1], &x[2], 1e-5)),
    )
}

fn activation_case(kind: Activation) -> impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    move |rng| {
        let d = dims(rng, 1, 4);
        (
            vec![off_kink(rng, &d)],
            Box::new(move |t, x| t.activation(&x[0], kind)),
        )
    }
}

fn pair_case(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let d = dims(rng, 1, 4);
    vec![randn(rng, &d), randn(rng, &d)]
}

fn l1_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let d = dims(rng, 1, 4);
    let a = randn(rng, &d);
    let gap = off_kink(rng, &d);
    let b = Tensor::new(
        d.to_vec(),
        a.data()
            .iter()
            .zip(gap.data())
            .map(|(x, g)| x + g)
            .collect(),
    )
    .expect("shape");
    (
        vec![a, b],
        Box::new(|t, x| t.reduce_loss(&x[0], &x[1], LossKind::L1Mean)),
    )
}

fn max_pool_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let k = rng.random_range(2..=3usize);
    let [n, c, h, w] = dims(rng, k, 7);
    let len = n * c * h * w;
    // Distinct values 0.01 apart: no ties within any window.
    let mut v: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    for i in (1..len).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new(vec![n, c, h, w], v).expect("shape");
    (vec![x], Box::new(move |t, x| t.max_pool2d(&x[0], k)))
}

fn reflection_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let d = dims(rng, 4, 7);
    let pad = Pad2d {
        top: rng.random_range(0..=3),
        bottom: rng.random_range(0..=3),
        left: rng.random_range(0..=3),
        right: rng.random_range(0..=3),
    };
    (
        vec![randn(rng, &d)],
        Box::new(move |t, x| t.reflection_pad(&x[0], pad)),
    )
}

fn concat_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let [n, _, h, w] = dims(rng, 1, 4);
    let parts: Vec<Tensor<f64>> = (0..rng.random_range(2..=3))
        .map(|_| {
            let c = rng.random_range(1..=3);
            randn(rng, &[n, c, h, w])
        })
        .collect();
    (
        parts,
        Box::new(|t, x| t.concat_channels(&x.iter().collect::<Vec<_>>())),
    )
}

fn linear_combination_case(rng: &mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn) {
    let count = rng.random_range(1..=4);
    let inputs: Vec<Tensor<f64>> = (0..count).map(|_| randn(rng, &[])).collect();
    let coeffs: Vec<f64> = (0..count).map(|_| rng.random_range(-3.0..3.0)).collect();
    (
        inputs,
        Box::new(move |t, x| {
            t.linear_combination(
                &x.iter()
                    .zip(&coeffs)
                    .map(|(a, &c)| (a, c))
                    .collect::<Vec<_>>(),
            )
        }),
    )
}

fn unary(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<Tensor<f64>> {
    let d = dims(rng, lo, hi);
    vec![randn(rng, &d)]
}

/// `(name, linear, generator)` for every differentiable op on the tape.
fn suite() -> Vec<(
    &'static str,
    bool,
    Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn)>,
)> {
    fn boxed(f: CaseGen) -> Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, OpFn)> {
        Box::new(f)
    }
    vec![
        ("conv2d", true, boxed(conv_case)),
        ("conv2d_transpose", true, boxed(conv_t_case)),
        ("instance_norm", false, boxed(instance_norm_case)),
        ("relu", false, Box::new(activation_case(Activation::Relu))),
        (
            "leaky_relu",
            false,
            Box::new(activation_case(Activation::LEAKY)),
        ),
        (
            "sigmoid",
            false,
            Box::new(activation_case(Activation::Sigmoid)),
        ),
        (
            "softplus",
            false,
            boxed(|r| (unary(r, 1, 4), Box::new(|t, x| t.softplus(&x[0])))),
        ),
        (
            "add",
            true,
            boxed(|r| (pair_case(r), Box::new(|t, x| t.add(&x[0], &x[1])))),
        ),
        (
            "sub",
            true,
            boxed(|r| (pair_case(r), Box::new(|t, x| t.sub(&x[0], &x[1])))),
        ),
        (
            "mul",
            false,
            boxed(|r| (pair_case(r), Box::new(|t, x| t.mul(&x[0], &x[1])))),
        ),
        (
            "scale",
            true,
            boxed(|r| (unary(r, 1, 4), Box::new(|t, x| t.scale(&x[0], -1.75)))),
        ),
        ("linear_combination", true, boxed(linear_combination_case)),
        (
            "sum",
            true,
            boxed(|r| (unary(r, 1, 4), Box::new(|t, x| t.sum(&x[0])))),
        ),
        (
            "mean",
            true,
            boxed(|r| (unary(r, 1, 4), Box::new(|t, x| t.mean(&x[0])))),
        ),
        ("l1_mean", false, boxed(l1_case)),
        (
            "mse",
            false,
            boxed(|r| {
                (
                    pair_case(r),
                    Box::new(|t, x| t.reduce_loss(&x[0], &x[1], LossKind::Mse)),
                )
            }),
        ),
        (
            "gram_matrix",
            false,
            boxed(|r| (unary(r, 1, 5), Box::new(|t, x| t.gram_matrix(&x[0])))),
        ),
        (
            "global_avg_pool",
            true,
            boxed(|r| (unary(r, 1, 5), Box::new(|t, x| t.global_avg_pool(&x[0])))),
        ),
        ("max_pool2d", false, boxed(max_pool_case)),
        ("reflection_pad", true, boxed(reflection_case)),
        ("concat_channels", true, boxed(concat_case)),
    ]
}

/// Runs `cases` random finite-difference checks per op in `f64`.
pub fn run_suite(cases: usize, seed: u64) -> Result<Vec<OpReport>> {
    let mut reports = Vec::new();
    for (k, (name, linear, gen)) in suite().into_iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut max_error: f64 = 0.0;
        for _ in 0..cases {
            let (inputs, op) = gen(&mut rng);
            for e in check_op(&op, &inputs, 1e-6, &mut rng)? {
                max_error = max_error.max(e);
            }
        }
        reports.push(OpReport {
            name,
            linear,
            cases,
            max_error,
        });
    }
    Ok(reports)
}
