use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn identical_points_hit_the_floors() {
    let g = fit_bivariate_gaussian(&[[2.0, -1.0]; 5]).unwrap();
    assert_eq!(g.mu_xy, [2.0, -1.0]);
    assert_eq!(g.sigma_xy, [SIGMA_FLOOR, SIGMA_FLOOR]);
    assert_eq!(g.rho, 0.0);
    assert!(g.log_pdf([2.0, -1.0]).is_finite());
}

#[test]
fn symmetric_cross_has_no_correlation() {
    let g = fit_bivariate_gaussian(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]).unwrap();
    assert_eq!(g.rho, 0.0);
    assert_eq!(g.mu_xy, [0.0, 0.0]);
}

#[test]
fn too_few_points_is_an_error() {
    assert!(fit_bivariate_gaussian(&[[0.0, 0.0]]).is_err());
}

#[test]
fn collinear_points_clamp_rho() {
    let g = fit_bivariate_gaussian(&[[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]]).unwrap();
    assert_eq!(g.rho, RHO_CLAMP);
    assert!(g.log_pdf([1.0, 2.0]).is_finite());
}

#[test]
fn moments_of_a_known_gaussian_are_recovered() {
    let (mx, my, sx, sy, rho) = (1.5, -2.0, 0.8, 2.5, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<Point> = (0..10_000)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [mx + sx * a, my + sy * (rho * a + (1.0 - rho * rho).sqrt() * b)]
        })
        .collect();
    let g = fit_bivariate_gaussian(&pts).unwrap();
    assert!(close(g.mu_xy[0], mx, 0.05 * mx.abs()));
    assert!(close(g.mu_xy[1], my, 0.05 * my.abs()));
    assert!(close(g.sigma_xy[0], sx, 0.05 * sx));
    assert!(close(g.sigma_xy[1], sy, 0.05 * sy));
    assert!(close(g.rho, rho, 0.05 * rho));
}

#[test]
fn pdf_integrates_to_one_on_a_grid() {
    let g = BivariateGaussian {
        mu_xy: [0.3, -0.2],
        sigma_xy: [0.7, 1.1],
        rho: -0.4,
    };
    let h = 0.02;
    let mut total = 0.0;
    for i in -400..400 {
        for j in -400..400 {
            total += g.pdf([0.3 + i as f64 * h, -0.2 + j as f64 * h]) * h * h;
        }
    }
    assert!(close(total, 1.0, 1e-4), "{total}");
}

#[test]
fn mean_trajectory_ranks_first() {
    let mut trajs = vec![vec![[0.0, 0.0]; 4]; 3];
    trajs[1] = (0..4).map(|t| [t as f64, 1.0]).collect();
    trajs[2] = (0..4).map(|t| [-(t as f64), -1.0]).collect();
    trajs[0] = (0..4).map(|t| [(trajs[1][t][0] + trajs[2][t][0]) / 2.0, 0.0]).collect();
    let r = rank_trajectories(&trajs).unwrap();
    assert_eq!(r.best_index(), 0);
}

#[test]
fn identical_trajectories_keep_index_order() {
    let trajs = vec![vec![[1.0, 2.0], [2.0, 3.0]]; 5];
    let r = rank_trajectories(&trajs).unwrap();
    assert_eq!(r.order, vec![0, 1, 2, 3, 4]);
}

#[test]
fn far_outlier_ranks_last() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut trajs: Vec<Vec<Point>> = (0..9)
        .map(|_| (0..6).map(|t| [t as f64 + rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]).collect())
        .collect();
    trajs.insert(3, (0..6).map(|t| [t as f64 + 10.0, 10.0]).collect());
    let r = rank_trajectories(&trajs).unwrap();
    assert_eq!(*r.order.last().unwrap(), 3);
}

#[test]
fn non_finite_positions_are_rejected() {
    let trajs = vec![vec![[0.0, 0.0]], vec![[f64::NAN, 0.0]]];
    assert!(rank_trajectories(&trajs).is_err());
}

fn traj_set() -> impl Strategy<Value = Vec<Vec<Point>>> {
    (2usize..8, 1usize..6).prop_flat_map(|(n, t)| {
        prop::collection::vec(prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0).prop_map(|(x, y)| [x, y]), t), n)
    })
}

proptest! {
    #[test]
    fn scores_are_translation_invariant(trajs in traj_set(), dx in -50.0f64..50.0, dy in -50.0f64..50.0) {
        let moved: Vec<Vec<Point>> = trajs.iter().map(|t| t.iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).collect();
        let a = rank_trajectories(&trajs).unwrap();
        let b = rank_trajectories(&moved).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn ranking_is_scale_invariant_without_floors(trajs in traj_set(), s in 0.5f64..4.0) {
        let scaled: Vec<Vec<Point>> = trajs.iter().map(|t| t.iter().map(|p| [p[0] * s, p[1] * s]).collect()).collect();
        let a = rank_trajectories(&trajs).unwrap();
        let b = rank_trajectories(&scaled).unwrap();
        // Scaling shifts every score by the same constant; compare gaps.
        let shift = b.scores[0] - a.scores[0];
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((y - x - shift).abs() < 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn best_index_maximizes_score(trajs in traj_set()) {
        let r = rank_trajectories(&trajs).unwrap();
        let best = r.scores[r.best_index()];
        prop_assert!(r.scores.iter().all(|s| *s <= best));
        let mut sorted = r.order.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..trajs.len()).collect::<Vec<_>>());
    }
}
