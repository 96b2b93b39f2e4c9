mod common;

use common::{entrywise_check, random_params, uniform_tensor, EntryCheck};
use sdkn::model::{Activation, ModelGraph};
use sdkn::{finite_difference_check, Block, Error, GruCell, KernelSpec, ParamStore, SplitMix64, Tape, Tensor};

const STEP: f64 = 1e-6;
const TOL: f64 = 1e-5;

/// `sum(w .* out)` for a fixed random weighting, so every output entry matters.
fn weighted_output_check(graph: &ModelGraph, params: &ParamStore, input: &Tensor, weights: &Tensor) -> f64 {
    finite_difference_check(
        |tape, p| {
            let x = tape.constant(input.clone());
            let w = tape.constant(weights.clone());
            let y = graph.forward(tape, p, x)?;
            let prod = tape.mul(y, w)?;
            Ok(tape.sum(prod))
        },
        params,
        STEP,
    )
    .unwrap()
}

fn dim(rng: &mut SplitMix64) -> usize {
    1 + rng.below(8)
}

fn assert_entries(checks: &[EntryCheck], what: &str) {
    for c in checks {
        assert!(c.passes(TOL, STEP), "{what}: {c:?} rel {:e}", c.relative());
    }
}

/// GRU variant of [`run_block_check`], checked entry by entry with a roundoff floor.
fn run_gru_check(seed: u64, make: impl Fn(&mut SplitMix64) -> (ModelGraph, Vec<usize>)) -> Vec<EntryCheck> {
    let mut rng = SplitMix64::new(seed);
    let (graph, in_shape) = make(&mut rng);
    let params = random_params(&graph, &mut rng, -1.0, 1.0);
    let input = uniform_tensor(&mut rng, &in_shape, -1.5, 1.5);
    let weights = uniform_tensor(&mut rng, &[in_shape[0], graph.d_out], 0.5, 1.5);
    entrywise_check(
        |tape, p| {
            let x = tape.constant(input.clone());
            let w = tape.constant(weights.clone());
            let y = graph.forward(tape, p, x)?;
            let prod = tape.mul(y, w)?;
            Ok(tape.sum(prod))
        },
        &params,
        STEP,
    )
}

fn run_block_check(seed: u64, make: impl Fn(&mut SplitMix64) -> (ModelGraph, Vec<usize>)) -> f64 {
    let mut rng = SplitMix64::new(seed);
    let (graph, in_shape) = make(&mut rng);
    let params = random_params(&graph, &mut rng, -1.0, 1.0);
    let input = uniform_tensor(&mut rng, &in_shape, -1.5, 1.5);
    let weights = uniform_tensor(&mut rng, &[in_shape[0], graph.d_out], 0.5, 1.5);
    weighted_output_check(&graph, &params, &input, &weights)
}

#[test]
fn linear_kernel_layer_gradients() {
    for seed in 0..25 {
        let err = run_block_check(seed, |rng| {
            let (a, b) = (dim(rng), dim(rng));
            (ModelGraph::new(a, b, vec![Block::LinearKernel { d_in: a, d_out: b }]).unwrap(), vec![1 + rng.below(5), a])
        });
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn gaussian_activation_layer_gradients() {
    for seed in 0..25 {
        let err = run_block_check(seed, |rng| {
            let d = dim(rng);
            let m = 1 + rng.below(6);
            let eps = rng.uniform(0.5, 2.0);
            let blocks = vec![
                Block::ActivationKernel { dim: d, m, kernel: KernelSpec::gaussian(eps) },
                Block::LinearKernel { d_in: d, d_out: 1 },
            ];
            (ModelGraph::new(d, 1, blocks).unwrap(), vec![1 + rng.below(5), d])
        });
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

/// Inputs and centers on a grid offset from the Wendland kinks at 0 and 1.
#[test]
fn wendland_activation_layer_gradients() {
    for seed in 0..25 {
        let mut rng = SplitMix64::new(seed);
        let d = dim(&mut rng);
        let m = 1 + rng.below(6);
        let rows = 1 + rng.below(5);
        let graph = ModelGraph::new(
            d,
            1,
            vec![Block::ActivationKernel { dim: d, m, kernel: KernelSpec::wendland0() }, Block::LinearKernel { d_in: d, d_out: 1 }],
        )
        .unwrap();
        // centers on multiples of 0.25, inputs at odd multiples of 0.05 + 0.01: |x - c| stays >= 1e-2 from 0 and 1
        let mut params = random_params(&graph, &mut rng, -1.0, 1.0);
        let centers = Tensor::new(vec![d, m], (0..d * m).map(|_| 0.25 * (rng.below(9) as f64 - 4.0)).collect()).unwrap();
        params.set_value("block0.C", centers).unwrap();
        let input = Tensor::new(vec![rows, d], (0..rows * d).map(|_| 0.1 * (rng.below(21) as f64 - 10.0) + 0.01).collect()).unwrap();
        let weights = uniform_tensor(&mut rng, &[rows, 1], 0.5, 1.5);
        let err = weighted_output_check(&graph, &params, &input, &weights);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn gru_cell_gradients() {
    for seed in 0..25 {
        let checks = run_gru_check(seed, |rng| {
            let (i, h) = (dim(rng), dim(rng));
            let steps = 1 + rng.below(4);
            let blocks = vec![Block::Gru { input: i, hidden: h }, Block::LinearKernel { d_in: h, d_out: 1 }];
            (ModelGraph::new(i, 1, blocks).unwrap(), vec![1 + rng.below(4), steps, i])
        });
        assert_entries(&checks, &format!("seed {seed}"));
    }
}

#[test]
fn gru_cell_initial_state_gradient() {
    // Differentiates through h0 as a parameter of the cell call itself.
    for seed in 0..25 {
        let mut rng = SplitMix64::new(seed);
        let (i, h, b) = (dim(&mut rng), dim(&mut rng), 1 + rng.below(3));
        let cell = GruCell::new(i, h);
        let mut params = ParamStore::new();
        for g in ["z", "r", "h"] {
            params.insert(format!("g.W_{g}"), uniform_tensor(&mut rng, &[h, i], -1.0, 1.0)).unwrap();
            params.insert(format!("g.U_{g}"), uniform_tensor(&mut rng, &[h, h], -1.0, 1.0)).unwrap();
            params.insert(format!("g.b_{g}"), uniform_tensor(&mut rng, &[h], -0.5, 0.5)).unwrap();
        }
        params.insert("h0", uniform_tensor(&mut rng, &[b, h], -0.9, 0.9)).unwrap();
        let seq = uniform_tensor(&mut rng, &[b, 3, i], -1.0, 1.0);
        let checks = entrywise_check(
            |tape, p| {
                let s = tape.constant(seq.clone());
                let h0 = tape.param(p, "h0")?;
                let out = cell.forward(tape, p, "g", s, h0)?;
                let sq = tape.square(out);
                Ok(tape.sum(sq))
            },
            &params,
            STEP,
        );
        assert_entries(&checks, &format!("seed {seed}"));
    }
}

#[test]
fn dense_layer_gradients() {
    for seed in 0..25 {
        let err = run_block_check(seed, |rng| {
            let (a, b) = (dim(rng), dim(rng));
            let blocks = vec![
                Block::Dense { d_in: a, d_out: b, activation: Activation::Relu },
                Block::Dense { d_in: b, d_out: 1, activation: Activation::Identity },
            ];
            (ModelGraph::new(a, 1, blocks).unwrap(), vec![1 + rng.below(5), a])
        });
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn full_sdkn_with_gru_gradients() {
    for seed in 0..25 {
        let checks = run_gru_check(seed, |rng| {
            let dims = [1 + rng.below(3), dim(rng), dim(rng), 1];
            let gru = sdkn::model::GruPlacement { hidden: dim(rng), position: 1 };
            let g = ModelGraph::sdkn(&dims, KernelSpec::gaussian(1.0), 1 + rng.below(5), Some(gru)).unwrap();
            (g, vec![1 + rng.below(3), 1 + rng.below(3), dims[0]])
        });
        assert_entries(&checks, &format!("seed {seed}"));
    }
}

#[test]
fn sum_of_squares_gradient() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(&p, "w").unwrap();
    let sq = tape.mul(w, w).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss, &mut p).unwrap();
    assert_eq!(p.grad("w").unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn constant_loss_gives_zero_gradients() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    p.insert("v", Tensor::vector(vec![3.0])).unwrap();
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::scalar(4.0));
    tape.backward(c, &mut p).unwrap();
    assert!(p.iter().all(|(_, q)| q.grad.data().iter().all(|&g| g == 0.0)));
    assert_eq!(finite_difference_check(|t, _| Ok(t.constant(Tensor::scalar(1.0))), &p, STEP).unwrap(), 0.0);
}

#[test]
fn non_scalar_loss_is_usage_error() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
    let mut tape = Tape::new();
    let w = tape.param(&p, "w").unwrap();
    assert!(matches!(tape.backward(w, &mut p), Err(Error::Usage(_))));
}

#[test]
fn matmul_spot_check_and_square_function() {
    let mut rng = SplitMix64::new(3);
    let mut p = ParamStore::new();
    p.insert("a", uniform_tensor(&mut rng, &[3, 4], -1.0, 1.0)).unwrap();
    p.insert("b", uniform_tensor(&mut rng, &[4, 2], -1.0, 1.0)).unwrap();
    let err = finite_difference_check(
        |t, p| {
            let a = t.param(p, "a")?;
            let b = t.param(p, "b")?;
            let c = t.matmul(a, b)?;
            let e = t.exp(c);
            Ok(t.sum(e))
        },
        &p,
        STEP,
    )
    .unwrap();
    assert!(err < TOL);

    let mut q = ParamStore::new();
    q.insert("w", Tensor::vector(vec![1.0])).unwrap();
    let err = finite_difference_check(
        |t, p| {
            let w = t.param(p, "w")?;
            let s = t.square(w);
            Ok(t.sum(s))
        },
        &q,
        STEP,
    )
    .unwrap();
    assert!(err < 1e-7, "{err:e}");
    assert!(matches!(finite_difference_check(|t, _| Ok(t.constant(Tensor::scalar(0.0))), &q, 0.0), Err(Error::Usage(_))));
    assert!(matches!(
        finite_difference_check(|t, _| Ok(t.constant(Tensor::scalar(f64::NAN))), &q, STEP),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn gradient_accumulation_is_linear() {
    let mut rng = SplitMix64::new(11);
    let mut base = ParamStore::new();
    base.insert("w", uniform_tensor(&mut rng, &[2, 3], -1.0, 1.0)).unwrap();
    let x = uniform_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let f1 = |t: &mut Tape, w| {
        let s = t.tanh(w);
        t.sum(s)
    };
    let f2 = |t: &mut Tape, w, x: &Tensor| {
        let xv = t.constant(x.clone());
        let m = t.matmul(w, xv).unwrap();
        let sq = t.square(m);
        t.mean(sq)
    };
    let grad = |which: u8| {
        let mut p = base.clone();
        let mut t = Tape::new();
        let w = t.param(&p, "w").unwrap();
        let loss = match which {
            1 => f1(&mut t, w),
            2 => f2(&mut t, w, &x),
            _ => {
                let a = f1(&mut t, w);
                let b = f2(&mut t, w, &x);
                t.add(a, b).unwrap()
            }
        };
        t.backward(loss, &mut p).unwrap();
        p.grad("w").unwrap().clone()
    };
    let (g1, g2, g12) = (grad(1), grad(2), grad(3));
    for i in 0..g12.len() {
        assert!((g12.data()[i] - g1.data()[i] - g2.data()[i]).abs() < 1e-14);
    }
}

#[test]
fn replaying_a_tape_is_bitwise_identical() {
    let mut rng = SplitMix64::new(5);
    let graph = ModelGraph::sdkn(&[2, 5, 3, 1], KernelSpec::gaussian(1.0), 4, Some(sdkn::model::GruPlacement { hidden: 4, position: 1 })).unwrap();
    let params = random_params(&graph, &mut rng, -1.0, 1.0);
    let input = uniform_tensor(&mut rng, &[6, 3, 2], -1.0, 1.0);
    let run = || {
        let mut p = params.clone();
        let mut t = Tape::new();
        let x = t.constant(input.clone());
        let y = graph.forward(&mut t, &p, x).unwrap();
        let sq = t.square(y);
        let loss = t.sum(sq);
        t.backward(loss, &mut p).unwrap();
        p
    };
    let (a, b) = (run(), run());
    for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&pa.grad), bits(&pb.grad));
    }
}
