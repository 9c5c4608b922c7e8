//! Simulation and quadrature checks of individual building blocks.

mod common;

use hhsmm::decode::rul_from_probs;
use hhsmm::emission::mixmvn::miss_mixmvnorm_mstep;
use hhsmm::emission::regress::mixlm_mstep;
use hhsmm::emission::{CovariateSource, MixLmParams, MixMvnParams};
use hhsmm::init::{initial_cluster, ltr_clus, ltr_cluster_k, ClusterOptions, Nmix, SplitTest};
use hhsmm::sojourn::{discretize, fit_sojourn_moments, select_sojourn_auto, sojourn_summary};
use hhsmm::{simulate, Confidence, Emission, ModelSpec, SequenceSet, SimulateOptions, SojournFamily, SojournSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn gamma_pmf_matches_quadrature_to_600() {
    let pdf = |x: f64| x * x * (-x / 10.0).exp() / 2000.0;
    let cells: Vec<f64> = (1..=600).map(|u| simpson(&pdf, u as f64 - 1.0, u as f64, 64)).collect();
    let total: f64 = cells.iter().sum();
    let d = discretize(SojournFamily::Gamma, 3.0, 10.0, 600).unwrap();
    for (a, c) in d.iter().zip(&cells) {
        assert!((a - c / total).abs() < 1e-10);
    }
    let mean = sojourn_summary(&d, 0.05).unwrap().mean;
    assert!((mean - 30.0).abs() < 0.5 + 0.5, "{mean}");
}

#[test]
fn moment_fits_recover_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Gamma::new(3.0, 10.0).unwrap();
    let x: Vec<f64> = (0..5000).map(|_| g.sample(&mut rng)).collect();
    let (a, b) = fit_sojourn_moments(&x, &vec![1.0; x.len()], SojournFamily::Gamma).unwrap();
    assert!((a - 3.0).abs() < 0.3 && (b - 10.0).abs() < 1.0, "{a} {b}");
    let l = LogNormal::new(1.0, 0.5).unwrap();
    let x: Vec<f64> = (0..5000).map(|_| l.sample(&mut rng)).collect();
    let (mu, sigma) = fit_sojourn_moments(&x, &vec![1.0; x.len()], SojournFamily::Lognormal).unwrap();
    assert!((mu - 1.0).abs() < 0.05 && (sigma - 0.5).abs() < 0.025, "{mu} {sigma}");
}

#[test]
fn automatic_family_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Gamma::new(3.0, 10.0).unwrap();
    let l = LogNormal::new(3.0, 0.6).unwrap();
    let (mut gamma_hits, mut lognormal_hits) = (0, 0);
    for _ in 0..20 {
        let x: Vec<f64> = (0..2000).map(|_| f64::ceil(g.sample(&mut rng))).collect();
        gamma_hits += (select_sojourn_auto(&[x]).unwrap() == SojournFamily::Gamma) as usize;
        let x: Vec<f64> = (0..2000).map(|_| f64::ceil(l.sample(&mut rng))).collect();
        lognormal_hits += (select_sojourn_auto(&[x]).unwrap() == SojournFamily::Lognormal) as usize;
    }
    assert!(gamma_hits >= 18, "{gamma_hits}");
    assert!(lognormal_hits >= 18, "{lognormal_hits}");
    assert!(select_sojourn_auto(&[vec![4.0; 30]]).is_err());
}

#[test]
fn missing_cells_do_not_bias_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut x: Vec<Vec<f64>> = Vec::new();
    for _ in 0..5000 {
        let (a, b) = (z.sample(&mut rng), z.sample(&mut rng));
        let mut row = vec![1.0 + a, -2.0 + 0.6 * a + 0.8 * b];
        for v in row.iter_mut() {
            if rng.random_bool(0.2) {
                *v = f64::NAN;
            }
        }
        if row.iter().any(|v| !v.is_nan()) {
            x.push(row);
        }
    }
    let w = vec![vec![1.0]; x.len()];
    let mut params = MixMvnParams::single(vec![vec![0.0, 0.0]], vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
    for _ in 0..30 {
        params = miss_mixmvnorm_mstep(&x, &w, &params).unwrap();
    }
    assert!((params.mu[0][0][0] - 1.0).abs() < 0.1, "{:?}", params.mu);
    assert!((params.mu[0][0][1] + 2.0).abs() < 0.1, "{:?}", params.mu);
}

fn regime_params() -> MixLmParams {
    let one = |v: f64| vec![vec![v]];
    MixLmParams {
        resp_ind: vec![0],
        k: vec![1, 2, 1],
        mix_p: vec![vec![1.0], vec![0.4, 0.6], vec![1.0]],
        intercept: vec![vec![vec![3.0]], vec![vec![-10.0], vec![-1.0]], vec![vec![14.0]]],
        coefficient: vec![vec![one(-1.0)], vec![one(1.0), one(5.0)], vec![one(-7.0)]],
        csigma: vec![vec![one(1.2)], vec![one(2.3), one(3.4)], vec![one(1.1)]],
    }
}

#[test]
fn regression_weights_by_true_state() {
    let truth = regime_params();
    let spec = ModelSpec {
        j: 3,
        init: vec![1.0, 0.0, 0.0],
        transition: vec![vec![0.5, 0.2, 0.3], vec![0.2, 0.5, 0.3], vec![0.1, 0.4, 0.5]],
        semi: vec![false; 3],
        m: vec![1; 3],
        sojourn: None,
        emission: Emission::MixLm(truth.clone()),
    };
    let opts = SimulateOptions {
        autoregress: false,
        covariate: Some(CovariateSource::Normal { mean: vec![0.0], cov: vec![vec![1.0]] }),
    };
    let data = simulate(&spec, &[20, 30, 42, 50], 1234, &opts).unwrap();
    let s = data.s.as_ref().unwrap();
    let w: Vec<Vec<f64>> = s.iter().map(|&j| (0..3).map(|k| if k == j { 1.0 } else { 0.0 }).collect()).collect();
    let mut est = truth.clone();
    for _ in 0..50 {
        est = mixlm_mstep(&data.x, &w, &est).unwrap();
    }
    for j in 0..3 {
        for k in 0..truth.k[j] {
            assert!((est.intercept[j][k][0] - truth.intercept[j][k][0]).abs() < 0.5 + 0.5 * (j == 1) as u8 as f64);
            assert!((est.coefficient[j][k][0][0] - truth.coefficient[j][k][0][0]).abs() < 0.5 + 0.5 * (j == 1) as u8 as f64);
        }
    }
}

fn blobs(rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let z = Normal::new(0.0, 0.5).unwrap();
    (0..20).map(|i| vec![if i < 10 { -5.0 } else { 5.0 } + z.sample(rng)]).collect()
}

#[test]
fn two_segments_reduce_to_single_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = blobs(&mut rng);
    let split = ltr_clus(&x).unwrap().unwrap();
    assert_eq!(ltr_cluster_k(&x, 2, SplitTest::Hotelling).unwrap(), vec![0, split]);
}

#[test]
fn automatic_mixture_count_finds_two_blobs() {
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let z = Normal::new(0.0, 1.0).unwrap();
        let x: Vec<Vec<f64>> =
            (0..60).map(|i| vec![if i % 2 == 0 { -5.0 } else { 5.0 } + z.sample(&mut rng)]).collect();
        let set = SequenceSet::new(x, vec![60]).unwrap();
        let clus =
            initial_cluster(&set, &ClusterOptions { nstate: 1, nmix: Nmix::Auto, seed, ..Default::default() }).unwrap();
        hits += (clus.nmix[0] == 2) as usize;
    }
    assert!(hits >= 16, "{hits}/20");
}

fn paper_model() -> ModelSpec {
    ModelSpec {
        j: 3,
        init: vec![1.0, 0.0, 0.0],
        transition: vec![vec![0.8, 0.1, 0.1], vec![0.5, 0.0, 0.5], vec![0.1, 0.2, 0.7]],
        semi: vec![false, true, false],
        m: vec![10, 100, 10],
        sojourn: Some(SojournSpec::Gamma { shape: vec![0.0, 3.0, 0.0], scale: vec![0.0, 10.0, 0.0] }),
        emission: common::gaussian_1d(&[7.0, 10.0, 13.0], &[4.0, 4.0, 4.0]),
    }
}

#[test]
fn every_component_gets_rows() {
    let data = simulate(&paper_model(), &[50, 40, 30, 70], 1234, &Default::default()).unwrap();
    let clus = initial_cluster(
        &data,
        &ClusterOptions { nstate: 3, nmix: Nmix::Fixed(vec![2, 2, 2]), ..Default::default() },
    )
    .unwrap();
    for j in 0..3 {
        for k in 0..2 {
            assert!((0..data.x.len()).any(|t| clus.states[t] == j && clus.components[t] == k), "{j} {k}");
        }
    }
}

/// Independent state-path sampler used as the frequency oracle.
fn sample_path(spec: &ModelSpec, d: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pick = |p: &[f64], rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if u < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut path = Vec::with_capacity(n);
    let mut s = pick(&spec.init, rng);
    while path.len() < n {
        let len = if spec.semi[s] { pick(d, rng) + 1 } else { 1 };
        for _ in 0..len.min(n - path.len()) {
            path.push(s);
        }
        s = pick(&spec.transition[s], rng);
    }
    path
}

#[test]
fn simulated_state_frequencies_match_path_oracle() {
    let spec = paper_model();
    let nsim = [50, 40, 30, 70];
    let total: usize = nsim.iter().sum();
    let data = simulate(&spec, &nsim, 1234, &Default::default()).unwrap();
    let observed: Vec<f64> =
        (0..3).map(|j| data.s.as_ref().unwrap().iter().filter(|&&s| s == j).count() as f64 / total as f64).collect();
    let d = discretize(SojournFamily::Gamma, 3.0, 10.0, 100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let reps = 10_000;
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for _ in 0..reps {
        let mut counts = [0usize; 3];
        for &n in &nsim {
            for s in sample_path(&spec, &d, n, &mut rng) {
                counts[s] += 1;
            }
        }
        for j in 0..3 {
            let f = counts[j] as f64 / total as f64;
            sum[j] += f;
            sq[j] += f * f;
        }
    }
    for j in 0..3 {
        let mean = sum[j] / reps as f64;
        let sd = (sq[j] / reps as f64 - mean * mean).sqrt();
        assert!((observed[j] - mean).abs() <= 3.0 * sd, "state {j}: {} vs {mean} ± {sd}", observed[j]);
    }
}

#[test]
fn fresh_sequence_rul_is_mean_sojourn_minus_elapsed() {
    let spec = ModelSpec {
        j: 2,
        init: vec![1.0, 0.0],
        transition: vec![vec![0.0, 1.0], vec![0.0, 1.0]],
        semi: vec![true, false],
        m: vec![200, 1],
        sojourn: Some(SojournSpec::Gamma { shape: vec![4.0, 1.0], scale: vec![5.0, 1.0] }),
        emission: common::gaussian_1d(&[0.0, 5.0], &[1.0, 1.0]),
    };
    let d = discretize(SojournFamily::Gamma, 4.0, 5.0, 200).unwrap();
    let mean: f64 = d.iter().enumerate().map(|(u, p)| (u + 1) as f64 * p).sum();
    let var: f64 = d.iter().enumerate().map(|(u, p)| ((u + 1) as f64 - mean).powi(2) * p).sum();
    // One time point: the elapsed product is empty and equals one.
    let est = rul_from_probs(&[vec![1.0, 0.0]], &spec, Confidence::Mean, 0.95).unwrap();
    assert!((est.rul - (mean - 1.0)).abs() < 1e-10, "{est:?} {mean}");
    let z = 1.959963984540054;
    // The lower band term is floored at zero.
    assert!((est.low - (mean - z * var.sqrt() - 1.0).max(0.0)).abs() < 1e-8, "{est:?}");
    assert!((est.up - (mean + z * var.sqrt() - 1.0)).abs() < 1e-8);
}
