mod common;

use std::f64::consts::PI;

use sdkn::data::{
    build_dataset, burgers_dns, extract_samples, generate, ClosureOperator, Dataset, DatasetConfig, DnsConfig, Filter, FilterSpec, FinalTimes,
    Flux, InitialCondition, Normalizer, SamplingStrategy, Schedule, Splits, TargetKind,
};
use sdkn::{Error, SampleSet, SplitMix64, Tensor};

fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

fn random_field(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

fn field_config(n: usize, viscosity: f64, dt: f64, u: Vec<f64>) -> DnsConfig {
    DnsConfig { n, viscosity, dt, initial: InitialCondition::Field { values: u }, flux: Flux::Burgers }
}

const N: usize = 128;

fn filters() -> Vec<FilterSpec> {
    vec![
        FilterSpec::FourierCutoff { n_c: 32, k_c: 8 },
        FilterSpec::TopHat { n_c: 32 },
        FilterSpec::L2Projection { n_c: 32, p: 3 },
    ]
}

#[test]
fn zero_field_is_a_fixed_point() {
    let f = burgers_dns(&field_config(64, 0.1, 1e-3, vec![0.0; 64]), 0, 0.05).unwrap();
    assert!(f.snapshots.iter().all(|s| s.u.iter().all(|&v| v == 0.0)));
}

#[test]
fn diffusion_dominated_energy_decays() {
    let u0: Vec<f64> = grid(64).iter().map(|x| x.sin()).collect();
    let f = burgers_dns(&field_config(64, 1.0, 1e-3, u0), 0, 0.2).unwrap();
    let energies: Vec<f64> = f.snapshots.iter().map(|s| s.u.iter().map(|v| v * v).sum::<f64>()).collect();
    for w in energies.windows(2) {
        assert!(w[1] < w[0]);
    }
    // close to the heat-equation rate exp(-2 nu t) for a single mode
    let ratio = energies.last().unwrap() / energies[0];
    assert!((ratio - (-0.4f64).exp()).abs() < 1e-2, "{ratio}");
}

#[test]
fn momentum_is_conserved_every_step() {
    let config = DnsConfig { n: 256, viscosity: 0.05, dt: 5e-4, initial: InitialCondition::Spectrum { k0: 5.0, u_rms: 1.0 }, flux: Flux::Burgers };
    let f = burgers_dns(&config, 3, 0.1).unwrap();
    let dx = 2.0 * PI / 256.0;
    let momentum: Vec<f64> = f.snapshots.iter().map(|s| s.u.iter().sum::<f64>() * dx).collect();
    for w in momentum.windows(2) {
        assert!((w[1] - w[0]).abs() < 1e-10);
    }
}

#[test]
fn cfl_violation_is_a_config_error() {
    let u0: Vec<f64> = grid(64).iter().map(|x| 10.0 * x.sin()).collect();
    assert!(matches!(burgers_dns(&field_config(64, 0.1, 0.1, u0), 0, 1.0), Err(Error::Config(_))));
}

#[test]
fn filters_are_linear() {
    let mut rng = SplitMix64::new(1);
    for spec in filters() {
        let f = Filter::new(spec, N).unwrap();
        for _ in 0..20 {
            let (u, v) = (random_field(&mut rng, N), random_field(&mut rng, N));
            let (a, b) = (rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
            let mix: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let (fu, fv, fm) = (f.apply(&u).unwrap(), f.apply(&v).unwrap(), f.apply(&mix).unwrap());
            for i in 0..fm.len() {
                assert!((fm[i] - a * fu[i] - b * fv[i]).abs() < 1e-12, "{}", spec.name());
            }
        }
    }
}

#[test]
fn filters_preserve_constants() {
    for spec in filters() {
        let f = Filter::new(spec, N).unwrap();
        for c in [0.0, 1.0, -2.5, 0.1] {
            let out = f.apply(&vec![c; N]).unwrap();
            assert_eq!(out.len(), 32);
            // a top-hat mean of 4 equal values is exact; spectral and projection paths are exact to rounding
            for v in out {
                assert!((v - c).abs() <= 4.0 * f64::EPSILON * c.abs(), "{}: {v} vs {c}", spec.name());
            }
        }
    }
}

#[test]
fn filters_are_idempotent_on_their_range() {
    let mut rng = SplitMix64::new(2);
    for spec in filters() {
        let f = Filter::new(spec, N).unwrap();
        for _ in 0..20 {
            let u = random_field(&mut rng, N);
            let once = f.apply(&u).unwrap();
            let twice = f.apply(&f.lift(&once).unwrap()).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                assert!((a - b).abs() < 1e-10, "{}: {a} vs {b}", spec.name());
            }
        }
    }
}

#[test]
fn fourier_cutoff_examples() {
    let f = Filter::new(FilterSpec::FourierCutoff { n_c: 32, k_c: 8 }, N).unwrap();
    let x = grid(N);
    let sin1: Vec<f64> = x.iter().map(|v| v.sin()).collect();
    let out = f.apply(&sin1).unwrap();
    for (i, v) in out.iter().enumerate() {
        assert!((v - (2.0 * PI * i as f64 / 32.0).sin()).abs() < 1e-13);
    }
    let high: Vec<f64> = x.iter().map(|v| (12.0 * v).sin()).collect();
    assert!(f.apply(&high).unwrap().iter().all(|v| v.abs() < 1e-13));
}

#[test]
fn invalid_filter_sizes_are_config_errors() {
    assert!(matches!(Filter::new(FilterSpec::TopHat { n_c: 48 }, N), Err(Error::Config(_))));
    assert!(matches!(Filter::new(FilterSpec::FourierCutoff { n_c: 32, k_c: 17 }, N), Err(Error::Config(_))));
    assert!(matches!(Filter::new(FilterSpec::L2Projection { n_c: 30, p: 2 }, N), Err(Error::Config(_))));
}

#[test]
fn identity_filter_has_zero_closure() {
    let mut rng = SplitMix64::new(3);
    let op = ClosureOperator::new(FilterSpec::FourierCutoff { n_c: N, k_c: N / 2 }, N, 0.05, Flux::Burgers).unwrap();
    for _ in 0..5 {
        let u = sdkn::data::dns::spectrum_field(N, 6.0, rng.uniform(0.5, 2.0), rng.next_u64());
        let c = op.closure_term(&u).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-10), "{:e}", c.iter().fold(0.0f64, |m, v| m.max(v.abs())));
    }
}

#[test]
fn linear_flux_commutes_with_fourier_filter() {
    let mut rng = SplitMix64::new(4);
    let op = ClosureOperator::new(FilterSpec::FourierCutoff { n_c: 32, k_c: 10 }, N, 0.1, Flux::LinearAdvection { speed: 1.7 }).unwrap();
    for _ in 0..5 {
        let u = random_field(&mut rng, N);
        let c = op.closure_term(&u).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-10));
    }
}

#[test]
fn closure_is_small_for_viscous_resolved_fields() {
    let x = grid(N);
    let u: Vec<f64> = x.iter().map(|v| 0.3 * v.sin() + 0.1 * (2.0 * v).cos()).collect();
    let op = ClosureOperator::new(FilterSpec::FourierCutoff { n_c: 32, k_c: 8 }, N, 2.0, Flux::Burgers).unwrap();
    let closure = op.closure_term(&u).unwrap();
    let flux = op.filtered_flux(&u).unwrap();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(norm(&closure) < 1e-3 * norm(&flux), "{} vs {}", norm(&closure), norm(&flux));
}

fn small_config(strategy: SamplingStrategy, filter: FilterSpec) -> DatasetConfig {
    DatasetConfig {
        dns: DnsConfig { n: N, viscosity: 0.05, dt: 1e-4, initial: InitialCondition::Spectrum { k0: 4.0, u_rms: 1.0 }, flux: Flux::Burgers },
        seed: 7,
        filter,
        strategy,
        final_times: FinalTimes { start: 0.002, end: 0.0119, stride: 1e-4 },
        splits: Splits::default(),
        target: TargetKind::FilteredFlux,
        blind_test_seed: None,
    }
}

#[test]
fn sample_count_is_points_times_final_times() {
    let config = small_config(SamplingStrategy::Gru1, FilterSpec::FourierCutoff { n_c: 64, k_c: 32 });
    let (ds, side) = generate(&config).unwrap();
    let h = ds.header;
    assert_eq!(h.n_train + h.n_val + h.n_test, 6400);
    assert_eq!([h.n_train, h.n_val, h.n_test], [70 * 64, 10 * 64, 20 * 64]);
    assert_eq!(side.samples, [4480, 640, 1280]);
}

#[test]
fn strategies_match_the_series_table() {
    let expected = [(SamplingStrategy::Gru1, 3, 1e-3), (SamplingStrategy::Gru2, 10, 1e-4), (SamplingStrategy::Gru3, 21, 1e-4)];
    for (strategy, n_seq, dt_seq) in expected {
        assert_eq!((strategy.n_seq(), strategy.dt_seq()), (n_seq, dt_seq));
        let config = small_config(strategy, FilterSpec::TopHat { n_c: 16 });
        let (ds, side) = generate(&config).unwrap();
        assert_eq!(ds.header.n_seq as usize, n_seq);
        assert_eq!(ds.train.inputs.shape(), &[ds.header.n_train as usize, n_seq, 1]);
        assert_eq!((side.n_seq, side.dt_seq), (n_seq, dt_seq));

        // inputs are the filtered field at f - j * dt_seq, oldest first
        let field = burgers_dns(&config.dns, config.seed, 0.0119).unwrap();
        let filter = Filter::new(config.filter, N).unwrap();
        let first_final = 20;
        for j in 0..n_seq {
            let t = (first_final as f64 * 1e-4) - (n_seq - 1 - j) as f64 * dt_seq;
            let step = (t / 1e-4).round() as usize;
            let coarse = filter.apply(&field.at_step(step).unwrap().u).unwrap();
            for point in [0, 7, 15] {
                let got = ds.train.inputs.data()[point * n_seq + j];
                assert_eq!(got, coarse[point], "{strategy:?} instance {j} point {point}");
            }
        }
    }
}

#[test]
fn streamed_and_stored_extraction_agree() {
    let config = small_config(SamplingStrategy::Gru2, FilterSpec::L2Projection { n_c: 32, p: 3 });
    let built = build_dataset(&config).unwrap();
    let field = burgers_dns(&config.dns, config.seed, 0.0119).unwrap();
    let op = ClosureOperator::new(config.filter, N, config.dns.viscosity, config.dns.flux).unwrap();
    let schedule = Schedule::new(&config.dns, config.strategy, &config.final_times).unwrap();
    let stored = extract_samples(&field, &op, config.target, &schedule, &built.finals[0]).unwrap();
    assert_eq!(stored, built.train);
}

#[test]
fn too_early_final_time_is_rejected() {
    let mut config = small_config(SamplingStrategy::Gru3, FilterSpec::TopHat { n_c: 16 });
    config.final_times.start = 0.001;
    assert!(matches!(generate(&config), Err(Error::Config(_))));
    let mut config = small_config(SamplingStrategy::Gru1, FilterSpec::TopHat { n_c: 16 });
    config.final_times.stride = 1.5e-4;
    assert!(matches!(generate(&config), Err(Error::Config(_))));
}

#[test]
fn dataset_bytes_are_deterministic_and_round_trip() {
    let config = small_config(SamplingStrategy::Gru1, FilterSpec::FourierCutoff { n_c: 32, k_c: 8 });
    let (a, sa) = generate(&config).unwrap();
    let (b, sb) = generate(&config).unwrap();
    let bytes = a.to_bytes();
    assert_eq!(bytes, b.to_bytes());
    assert_eq!(serde_json::to_string(&sa).unwrap(), serde_json::to_string(&sb).unwrap());
    assert_eq!(&bytes[..8], b"SDKNDS01");
    let back = Dataset::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    let mut other = config.clone();
    other.seed = 8;
    assert_ne!(generate(&other).unwrap().0.to_bytes(), bytes);

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Dataset::from_bytes(&bad), Err(Error::Format(_))));
    assert!(matches!(Dataset::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
}

#[test]
fn split_final_times_are_disjoint_and_ordered() {
    for blind in [None, Some(99)] {
        let mut config = small_config(SamplingStrategy::Gru2, FilterSpec::TopHat { n_c: 16 });
        config.blind_test_seed = blind;
        let (_, side) = generate(&config).unwrap();
        let [train, val, test] = side.final_times.clone();
        let (train, val, test) = (train.unwrap(), val.unwrap(), test.unwrap());
        assert!(train.last < val.first && val.last < test.first);
        assert_eq!(train.count + val.count + test.count, 100);
    }
}

#[test]
fn blind_test_split_comes_from_another_run() {
    let plain = small_config(SamplingStrategy::Gru1, FilterSpec::TopHat { n_c: 16 });
    let mut blind = plain.clone();
    blind.blind_test_seed = Some(99);
    let (a, b) = (build_dataset(&plain).unwrap(), build_dataset(&blind).unwrap());
    assert_eq!(a.train, b.train);
    assert_eq!(a.val, b.val);
    assert_ne!(a.test, b.test);
}

fn set_from(inputs: Vec<f64>, n_seq: usize, targets: Vec<f64>) -> SampleSet {
    let n = targets.len();
    SampleSet::new(Tensor::new(vec![n, n_seq, 1], inputs).unwrap(), Tensor::new(vec![n, 1], targets).unwrap()).unwrap()
}

#[test]
fn normalizer_standardizes_the_training_split() {
    let mut rng = SplitMix64::new(5);
    let n = 500;
    let set = set_from((0..n * 3).map(|_| 4.0 + 3.0 * rng.normal()).collect(), 3, (0..n).map(|_| -2.0 + 0.5 * rng.normal()).collect());
    let norm = Normalizer::fit(&set).unwrap();
    let out = norm.apply(&set).unwrap();
    for data in [out.inputs.data(), out.targets.data()] {
        let m = data.iter().sum::<f64>() / data.len() as f64;
        let v = data.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / data.len() as f64;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-10, "{m} {v}");
    }
    let back = norm.denormalize_targets(&out.targets);
    for (a, b) in back.data().iter().zip(set.targets.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn normalizer_examples() {
    let two = set_from(vec![0.0, 2.0], 1, vec![0.0, 2.0]);
    let out = Normalizer::fit(&two).unwrap().apply(&two).unwrap();
    assert_eq!(out.inputs.data(), &[-1.0, 1.0]);

    let std = set_from(vec![1.0, -1.0, 1.0, -1.0], 1, vec![-1.0, 1.0, -1.0, 1.0]);
    let out = Normalizer::fit(&std).unwrap().apply(&std).unwrap();
    assert_eq!(out, std);

    let mut rng = SplitMix64::new(6);
    let xs: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
    let ys: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
    let base = set_from(xs.clone(), 2, ys.clone());
    let shifted = set_from(xs.iter().map(|v| v + 3.25).collect(), 2, ys.iter().map(|v| v - 1.5).collect());
    let a = Normalizer::fit(&base).unwrap().apply(&base).unwrap();
    let b = Normalizer::fit(&shifted).unwrap().apply(&shifted).unwrap();
    for (p, q) in a.inputs.data().iter().zip(b.inputs.data()) {
        assert!((p - q).abs() < 1e-12);
    }

    let constant = set_from(vec![1.0; 6], 3, vec![0.0, 1.0]);
    assert!(matches!(Normalizer::fit(&constant), Err(Error::Config(_))));
}
