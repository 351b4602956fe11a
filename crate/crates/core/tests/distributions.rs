use frmdn_core::diffcore::{Graph, Tensor};
use frmdn_core::distributions::graph::{mixture_log_density_nodes, MixtureSpec};
use frmdn_core::distributions::{
    coeffs_from_logits, diag_gmm_log_density, logistic_mixture_log_density, mixture_log_density, mixture_sample,
    param_count, tied_gmm_log_density, CovarianceKind, HeadLayout, HeadStructure, MixtureParams, SharedMatrix,
};
use frmdn_core::recurrent::HeadParams;
use frmdn_core::rng::stream_rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

fn random_params<R: Rng>(rng: &mut R, structure: HeadStructure, k: usize, d: usize) -> MixtureParams {
    let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mu = (0..k * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let diag = (0..k * d).map(|_| rng.random_range(0.5..1.5)).collect();
    MixtureParams::new(structure, coeffs_from_logits(&logits), mu, diag).unwrap()
}

fn random_u<R: Rng>(rng: &mut R, d: usize) -> Tensor {
    // diagonally dominant, so well away from singular
    let mut data: Vec<f64> = (0..d * d).map(|_| rng.random_range(-0.4..0.4)).collect();
    for i in 0..d {
        data[i * d + i] += 1.5;
    }
    Tensor::matrix(d, d, data)
}

#[test]
fn diagonal_matches_naive_linear_sum() {
    let mut rng = stream_rng(11, 0);
    for _ in 0..20 {
        let p = random_params(&mut rng, HeadStructure::Diagonal, 3, 4);
        let y: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut total = 0.0;
        for k in 0..3 {
            let mut dens = p.alpha[k];
            for i in 0..4 {
                let s = p.diag[k * 4 + i];
                let u = (y[i] - p.mu[k * 4 + i]) / s;
                dens *= (-0.5 * u * u).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            }
            total += dens;
        }
        let got = diag_gmm_log_density(&y, &p).unwrap();
        assert!((got - total.ln()).abs() < 1e-10, "{got} vs {}", total.ln());
    }
}

#[test]
fn tied_matches_explicit_full_covariance() {
    let mut rng = stream_rng(12, 0);
    for _ in 0..20 {
        let d = 3;
        let u = random_u(&mut rng, d);
        let p = random_params(&mut rng, HeadStructure::Tied, 1, d);
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let um = DMatrix::from_row_slice(d, d, u.data());
        let dm = DMatrix::from_diagonal(&DVector::from_column_slice(&p.diag));
        let prec = &um * dm * um.transpose();
        let chol = prec.clone().cholesky().expect("precision must be positive definite");
        let log_det_prec: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let diff = DVector::from_iterator(d, y.iter().zip(&p.mu).map(|(a, b)| a - b));
        let quad = (diff.transpose() * &prec * &diff)[(0, 0)];
        let oracle = -0.5 * d as f64 * LOG_2PI + 0.5 * log_det_prec - 0.5 * quad;
        let shared = SharedMatrix::full(u).unwrap();
        let got = tied_gmm_log_density(&y, &p, &shared).unwrap();
        assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn tied_with_identity_reduces_to_diagonal() {
    let mut rng = stream_rng(13, 0);
    for _ in 0..50 {
        let (k, d) = (4, 3);
        let diag = random_params(&mut rng, HeadStructure::Diagonal, k, d);
        let prec: Vec<f64> = diag.diag.iter().map(|s| 1.0 / (s * s)).collect();
        let tied = MixtureParams::new(HeadStructure::Tied, diag.alpha.clone(), diag.mu.clone(), prec).unwrap();
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = diag_gmm_log_density(&y, &diag).unwrap();
        for shared in [SharedMatrix::identity(d), SharedMatrix::full(Tensor::identity(d)).unwrap()] {
            let b = tied_gmm_log_density(&y, &tied, &shared).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn tied_invariant_to_joint_rescaling() {
    let mut rng = stream_rng(14, 0);
    for &c in &[0.3, 2.0, 7.5] {
        let d = 4;
        let u = random_u(&mut rng, d);
        let p = random_params(&mut rng, HeadStructure::Tied, 3, d);
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let base = tied_gmm_log_density(&y, &p, &SharedMatrix::full(u.clone()).unwrap()).unwrap();
        let us = u.map(|v| v * c);
        let mut ps = p.clone();
        ps.diag.iter_mut().for_each(|v| *v /= c * c);
        let scaled = tied_gmm_log_density(&y, &ps, &SharedMatrix::full(us).unwrap()).unwrap();
        assert!((base - scaled).abs() < 1e-10);
    }
}

fn trapezoid_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..n {
        s += f(lo + i as f64 * h);
    }
    s * h
}

#[test]
fn one_dimensional_densities_integrate_to_one() {
    let mut rng = stream_rng(15, 0);
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let p = random_params(&mut rng, structure, 2, 1);
        let shared = SharedMatrix::identity(1);
        let mass = trapezoid_1d(
            |y| mixture_log_density(&[y], &p, &shared, 1.0).unwrap().exp(),
            -30.0,
            30.0,
            60_000,
        );
        assert!((mass - 1.0).abs() < 1e-6, "{structure}: {mass}");
    }
}

#[test]
fn two_dimensional_densities_integrate_to_one() {
    let mut rng = stream_rng(16, 0);
    let n = 400;
    let (lo, hi) = (-12.0, 12.0);
    let h = (hi - lo) / (n - 1) as f64;
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let p = random_params(&mut rng, structure, 2, 2);
        let shared = if structure == HeadStructure::Tied {
            SharedMatrix::full(random_u(&mut rng, 2)).unwrap()
        } else {
            SharedMatrix::identity(2)
        };
        let mut mass = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y = [lo + i as f64 * h, lo + j as f64 * h];
                let wi = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
                mass += wi * wj * mixture_log_density(&y, &p, &shared, 1.0).unwrap().exp();
            }
        }
        mass *= h * h;
        assert!((mass - 1.0).abs() < 1e-3, "{structure}: {mass}");
    }
}

#[test]
fn logistic_is_symmetric_about_zero_mean() {
    let p = MixtureParams::new(HeadStructure::Logistic, vec![1.0], vec![0.0], vec![0.7]).unwrap();
    for a in [0.1, 0.9, 3.3, 12.0] {
        let l = logistic_mixture_log_density(&[a], &p, 1.0).unwrap();
        let r = logistic_mixture_log_density(&[-a], &p, 1.0).unwrap();
        assert!((l - r).abs() < 1e-12);
    }
}

#[test]
fn permuting_components_leaves_density_unchanged() {
    let mut rng = stream_rng(17, 0);
    let perm = [3, 0, 4, 2, 1];
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let shared = SharedMatrix::full(random_u(&mut rng, 3)).unwrap();
        for _ in 0..20 {
            let p = random_params(&mut rng, structure, 5, 3);
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a = mixture_log_density(&y, &p, &shared, 1.0).unwrap();
            let b = mixture_log_density(&y, &p.permuted(&perm), &shared, 1.0).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn degenerate_coefficients_always_pick_first_component() {
    let p = MixtureParams::new(HeadStructure::Diagonal, vec![1.0, 0.0], vec![0.0, 100.0], vec![1.0, 1.0]).unwrap();
    let mut rng = stream_rng(18, 0);
    let shared = SharedMatrix::identity(1);
    for _ in 0..10_000 {
        assert!(mixture_sample(&p, &shared, &mut rng)[0] < 50.0);
    }
}

#[test]
fn diagonal_sample_moments() {
    let p = MixtureParams::new(HeadStructure::Diagonal, vec![1.0], vec![3.0], vec![2.0]).unwrap();
    let mut rng = stream_rng(19, 0);
    let shared = SharedMatrix::identity(1);
    let n = 200_000;
    let xs: Vec<f64> = (0..n).map(|_| mixture_sample(&p, &shared, &mut rng)[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!((mean - 3.0).abs() < 0.02, "mean {mean}");
    assert!((var.sqrt() - 2.0).abs() < 0.02, "std {}", var.sqrt());
}

#[test]
fn tied_sample_covariance_matches_inverse_precision() {
    let mut rng = stream_rng(20, 0);
    let d = 3;
    let u = random_u(&mut rng, d);
    let p = random_params(&mut rng, HeadStructure::Tied, 1, d);
    let um = DMatrix::from_row_slice(d, d, u.data());
    let prec = &um * DMatrix::from_diagonal(&DVector::from_column_slice(&p.diag)) * um.transpose();
    let cov = prec.try_inverse().unwrap();
    let shared = SharedMatrix::full(u).unwrap();
    let n = 200_000;
    let mut sum = vec![0.0; d];
    let mut outer = vec![0.0; d * d];
    for _ in 0..n {
        let x = mixture_sample(&p, &shared, &mut rng);
        for i in 0..d {
            sum[i] += x[i];
            for j in 0..d {
                outer[i * d + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let c = outer[i * d + j] / n as f64 - sum[i] * sum[j] / (n as f64 * n as f64);
            assert!((c - cov[(i, j)]).abs() < 0.05, "cov[{i},{j}] {c} vs {}", cov[(i, j)]);
        }
    }
}

#[test]
fn logistic_sample_median_and_spread() {
    let p = MixtureParams::new(HeadStructure::Logistic, vec![1.0], vec![-1.0], vec![0.5]).unwrap();
    let mut rng = stream_rng(21, 0);
    let shared = SharedMatrix::identity(1);
    let n = 200_000;
    let mut xs: Vec<f64> = (0..n).map(|_| mixture_sample(&p, &shared, &mut rng)[0]).collect();
    xs.sort_by(f64::total_cmp);
    assert!((xs[n / 2] + 1.0).abs() < 0.02);
    // logistic variance is s^2 pi^2 / 3
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let want = 0.25 * std::f64::consts::PI.powi(2) / 3.0;
    assert!((var - want).abs() < 0.02 * want.max(1.0));
}

#[test]
fn parameter_count_examples() {
    assert_eq!(param_count(5, 32, CovarianceKind::Diagonal).total, 325);
    assert_eq!(param_count(5, 32, CovarianceKind::Tied).total, 1349);
    assert_eq!(param_count(1, 1, CovarianceKind::Full).total, 3);
}

#[test]
fn stored_head_parameters_match_count() {
    let mut rng = stream_rng(22, 0);
    for _ in 0..20 {
        let k = rng.random_range(1..9);
        let d = rng.random_range(1..40);
        let head = HeadParams::zeroed(4, k, d, HeadStructure::Diagonal);
        assert_eq!(head.output_width(), param_count(k, d, CovarianceKind::Diagonal).total);
        let shared = SharedMatrix::identity(d);
        let tied_stored = head.output_width() + shared.u().data().len();
        assert_eq!(tied_stored, param_count(k, d, CovarianceKind::Tied).total);
        for kind in [CovarianceKind::Full, CovarianceKind::Diagonal, CovarianceKind::Tied] {
            let r = param_count(k, d, kind);
            assert_eq!(r.total, r.alpha_count + r.mu_count + r.sigma_count);
            assert_eq!(HeadLayout::new(kind, k, d).count(), r.total);
        }
    }
}

#[test]
fn graph_density_matches_plain_density() {
    let mut rng = stream_rng(23, 0);
    let (k, d, rows) = (3, 4, 6);
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let spec = MixtureSpec {
            structure,
            components: k,
            dim: d,
            c_width: 1.0,
        };
        let logits: Vec<f64> = (0..rows * spec.logit_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..rows * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let u = random_u(&mut rng, d);
        let mut g = Graph::new();
        let ln = g.constant(Tensor::matrix(rows, spec.logit_width(), logits.clone()));
        let zn = g.constant(Tensor::matrix(rows, d, z.clone()));
        let un = g.constant(u.clone());
        let out = mixture_log_density_nodes(&mut g, &spec, ln, zn, Some(un)).unwrap();
        let shared = SharedMatrix::full(u).unwrap();
        let head = HeadParams::zeroed(1, k, d, structure);
        for r in 0..rows {
            let row = &logits[r * spec.logit_width()..(r + 1) * spec.logit_width()];
            let p = head.params_from_logits(row).unwrap();
            let want = mixture_log_density(&z[r * d..(r + 1) * d], &p, &shared, 1.0).unwrap();
            let got = g.value(out).get(r, 0);
            assert!((got - want).abs() < 1e-10, "{structure} row {r}: {got} vs {want}");
        }
    }
}

#[test]
fn graph_density_gradient_matches_finite_differences() {
    let mut rng = stream_rng(24, 0);
    let (k, d, rows) = (2, 3, 2);
    for structure in [HeadStructure::Diagonal, HeadStructure::Tied, HeadStructure::Logistic] {
        let spec = MixtureSpec {
            structure,
            components: k,
            dim: d,
            c_width: 1.0,
        };
        let w = spec.logit_width();
        let z = Tensor::matrix(rows, d, (0..rows * d).map(|_| rng.random_range(-1.0..1.0)).collect());
        let mut point: Vec<f64> = (0..rows * w).map(|_| rng.random_range(-0.8..0.8)).collect();
        point.extend(random_u(&mut rng, d).data());
        let f = |x: &[f64]| {
            let mut g = Graph::new();
            let ln = g.leaf(Tensor::matrix(rows, w, x[..rows * w].to_vec()));
            let un = g.leaf(Tensor::matrix(d, d, x[rows * w..].to_vec()));
            let zn = g.constant(z.clone());
            let out = mixture_log_density_nodes(&mut g, &spec, ln, zn, Some(un))?;
            let loss = g.sum(out)?;
            let grads = g.backward(loss)?;
            let mut grad = grads.get(ln).data().to_vec();
            grad.extend(grads.get(un).data());
            Ok((g.value(loss).item(), grad))
        };
        let err = frmdn_core::diffcore::grad_check(
            |x| f(x).map_err(|e: frmdn_core::Error| match e {
                frmdn_core::Error::Diff(d) => d,
                other => panic!("{other}"),
            }),
            &point,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-6, "{structure}: {err}");
    }
}

#[test]
fn tied_head_without_shared_matrix_is_rejected() {
    let spec = MixtureSpec {
        structure: HeadStructure::Tied,
        components: 1,
        dim: 2,
        c_width: 1.0,
    };
    let mut g = Graph::new();
    let ln = g.constant(Tensor::zeros(&[1, spec.logit_width()]));
    let zn = g.constant(Tensor::zeros(&[1, 2]));
    assert!(mixture_log_density_nodes(&mut g, &spec, ln, zn, None).is_err());
}

proptest! {
    #[test]
    fn coefficients_form_a_distribution(z in proptest::collection::vec(-15.0f64..15.0, 1..12)) {
        let a = coeffs_from_logits(&z);
        let s: f64 = a.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|&v| v > 0.0 && v < 1.0 || (z.len() == 1 && v == 1.0)));
    }

    #[test]
    fn identity_tied_argmax_matches_diagonal(seed in 0u64..500) {
        let mut rng = stream_rng(seed, 1);
        let diag = random_params(&mut rng, HeadStructure::Diagonal, 4, 2);
        let prec: Vec<f64> = diag.diag.iter().map(|s| 1.0 / (s * s)).collect();
        let tied = MixtureParams::new(HeadStructure::Tied, diag.alpha.clone(), diag.mu.clone(), prec).unwrap();
        let y: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let single = |p: &MixtureParams, k: usize| {
            let mut a = vec![0.0; 4];
            a[k] = 1.0;
            let mut q = p.clone();
            q.alpha = a;
            mixture_log_density(&y, &q, &SharedMatrix::identity(2), 1.0).unwrap() + p.alpha[k].ln()
        };
        let arg = |p: &MixtureParams| (0..4).max_by(|&i, &j| single(p, i).total_cmp(&single(p, j))).unwrap();
        prop_assert_eq!(arg(&diag), arg(&tied));
    }
}
