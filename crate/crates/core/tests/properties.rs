use nalgebra::DMatrix;
use proptest::prelude::*;

use probdr::eval::{procrustes, spearman, ProcrustesMode};
use probdr::graph_gp::{
    bayesnet_transform, build_laplacian, matern_covariance, neumann_power_sum, GraphGPHyper, LaplacianKind, MaternNu,
};
use probdr::linalg::sym_eigen;
use probdr::meanfield::{cavi_update, CaviState};
use probdr::moments::{pca_moment, MomentMatrix};
use probdr::neighbor::{affinities, kl_objective, latent_kernel, Family};
use probdr::spectral::{mca_map, pca_map};
use probdr::{DataMatrix, Embedding, SeededRng};

fn matrix(n: usize, d: usize, seed: u64, scale: f64) -> DMatrix<f64> {
    let mut rng = SeededRng::new(seed);
    DMatrix::from_fn(n, d, |_, _| scale * rng.normal())
}

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Sne), Just(Family::Tsne), Just(Family::Umap)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pca_moment_is_symmetric_psd(n in 3usize..12, d in 1usize..8, seed in any::<u64>()) {
        let y = DataMatrix::new(matrix(n, d, seed, 1.0)).unwrap();
        let m = pca_moment(&y, true).values;
        prop_assert!((&m - m.transpose()).norm() < 1e-12);
        let eig = sym_eigen(&m).unwrap();
        prop_assert!(eig.eigenvalues.min() > -1e-10);
    }

    #[test]
    fn mca_noise_never_exceeds_pca_noise(n in 4usize..12, seed in any::<u64>(), q_frac in 0.0f64..1.0) {
        let a = matrix(n, n + 3, seed, 1.0);
        let sigma = &a * a.transpose() / (n + 3) as f64 + DMatrix::identity(n, n) * 1e-3;
        let q = 1 + ((n - 2) as f64 * q_frac) as usize;
        let p = pca_map(&MomentMatrix::covariance(sigma.clone(), "p"), q).unwrap();
        let m = mca_map(&MomentMatrix::precision(sigma.try_inverse().unwrap(), "m"), q, false, 0.0).unwrap();
        prop_assert!(m.noise <= p.noise * (1.0 + 1e-12));
        prop_assert!(!p.clamped);
    }

    #[test]
    fn kl_is_invariant_to_rigid_motion(f in family(), seed in any::<u64>(), theta in 0.0f64..6.3, shift in -5.0f64..5.0) {
        let n = 12;
        let y = DataMatrix::new(matrix(n, 3, seed, 1.0)).unwrap();
        let (v, _) = affinities(&y, f, 4.0).unwrap();
        let x = matrix(n, 2, seed.wrapping_add(1), 0.7);
        let moved = (&x * rotation(theta)).add_scalar(shift);
        let kl = |m: DMatrix<f64>| kl_objective(&v, &latent_kernel(&Embedding::new(m).unwrap(), f, 1.0, 1.0).unwrap()).unwrap();
        let (a, b) = (kl(x), kl(moved));
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{} vs {}", a, b);
        if f != Family::Umap {
            prop_assert!(a >= -1e-12);
        }
    }

    #[test]
    fn umap_affinities_are_symmetric_probabilities(n in 5usize..15, seed in any::<u64>()) {
        let y = DataMatrix::new(matrix(n, 3, seed, 1.0)).unwrap();
        let (v, _) = affinities(&y, Family::Umap, 3.0).unwrap();
        prop_assert_eq!(&v.probs, &v.probs.transpose());
        prop_assert!(v.probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn procrustes_recovers_similarity_transforms(seed in any::<u64>(), theta in 0.0f64..6.3, scale in 0.1f64..10.0, shift in -3.0f64..3.0) {
        let a = matrix(15, 2, seed, 1.0);
        let b = (&a * rotation(theta) * scale).add_scalar(shift);
        prop_assert!(procrustes(&a, &b, ProcrustesMode::Similarity).unwrap().residual < 1e-9);
        let c = matrix(15, 2, seed.wrapping_add(7), 1.0);
        let ab = procrustes(&a, &c, ProcrustesMode::Similarity).unwrap().residual;
        let ba = procrustes(&c, &a, ProcrustesMode::Similarity).unwrap().residual;
        prop_assert!((ab - ba).abs() < 1e-10);
    }

    #[test]
    fn laplacians_are_psd_with_bounded_spectrum(n in 3usize..12, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let w = if rng.bernoulli(0.5) { rng.uniform() } else { 0.0 };
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
        let l = build_laplacian(&a, LaplacianKind::Ordinary).unwrap();
        for r in 0..n {
            prop_assert!(l.row(r).sum().abs() < 1e-12);
        }
        prop_assert!(sym_eigen(&l).unwrap().eigenvalues.min() > -1e-10);
        let ln = build_laplacian(&a, LaplacianKind::Normalized).unwrap();
        let eig = sym_eigen(&ln).unwrap().eigenvalues;
        prop_assert!(eig.min() > -1e-10 && eig.max() < 2.0 + 1e-10);
        let h = GraphGPHyper { beta: 0.3, t: 0.0, ..GraphGPHyper::default() };
        let c = matern_covariance(&ln, &h, MaternNu::One).unwrap().values;
        prop_assert!(sym_eigen(&c).unwrap().eigenvalues.min() > 0.0);
        let heat = matern_covariance(&ln, &h, MaternNu::Inf).unwrap().values;
        prop_assert!((heat - DMatrix::identity(n, n)).norm() < 1e-10);
    }

    #[test]
    fn cavi_updates_are_probabilities(n in 3usize..8, seed in any::<u64>(), pi in 0.01f64..0.99) {
        let mut rng = SeededRng::new(seed);
        let y = DMatrix::from_fn(n, 2, |_, _| rng.normal());
        let d2 = probdr::linalg::sq_dists_rows(&y);
        let mut prior = DMatrix::from_element(n, n, pi);
        prior.fill_diagonal(0.0);
        let state = CaviState::new(d2, prior, 2.0, 1.0).unwrap();
        for i in 0..n {
            for j in (i + 1)..n {
                let a = cavi_update(&state, i, j).unwrap();
                let b = cavi_update(&state, j, i).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(seed in any::<u64>(), n in 3usize..30) {
        let mut rng = SeededRng::new(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let r = spearman(&a, &b).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        let monotone: Vec<f64> = b.iter().map(|v| v.exp()).collect();
        prop_assert!((spearman(&a, &monotone).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn power_sum_is_exact_for_dags(n in 2usize..9, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let a = DMatrix::from_fn(n, n, |r, c| if c < r { rng.uniform_range(-1.0, 1.0) } else { 0.0 });
        let exact = bayesnet_transform(&a);
        prop_assert!((neumann_power_sum(&a, n - 1) - &exact).norm() < 1e-9 * exact.norm());
    }
}
