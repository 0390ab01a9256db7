use orlicz_fb::estimates::{
    fit_loglog, free_boundary_points, growth_dichotomy, lipschitz_certificate, maximal_function, morrey_decay,
    read_reports_csv, write_reports_csv, GrowthOptions,
};
use orlicz_fb::grid::{Field, Grid};
use proptest::prelude::*;

fn cone(grid: &Grid, slope: f64) -> Field {
    Field::from_fn(grid, |x| slope * (x[0] - 0.5).max(0.0))
}

proptest! {
    #[test]
    fn loglog_fit_recovers_power_laws(a in 0.1..10.0f64, e in -3.0..3.0f64) {
        let r: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
        let y: Vec<f64> = r.iter().map(|r| a * r.powf(e)).collect();
        let fit = fit_loglog(&r, &y).unwrap();
        prop_assert!((fit.slope - e).abs() < 1e-10);
        prop_assert!((fit.intercept - a.ln()).abs() < 1e-10);
        prop_assert!(fit.residual < 1e-10);
    }

    #[test]
    fn maximal_function_is_homogeneous(k in 0.1..10.0f64, seed in 0u64..100) {
        let grid = Grid::unit_square(4);
        let f: Vec<f64> = (0..grid.num_cells()).map(|c| ((c as u64 * 31 + seed) % 17) as f64).collect();
        let scaled: Vec<f64> = f.iter().map(|v| k * v).collect();
        let m = maximal_function(&grid, &f, 0.25).unwrap();
        let ms = maximal_function(&grid, &scaled, 0.25).unwrap();
        for (a, b) in m.iter().zip(&ms) {
            prop_assert!((k * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn growth_constant_scales_with_the_slope(s in 0.1..5.0f64) {
        let grid = Grid::unit_square(6);
        let rep = growth_dichotomy(&cone(&grid, s), [0.5, 0.5], &GrowthOptions::default()).unwrap();
        prop_assert!((rep.scalars["C"] - s).abs() < 1e-12 * s);
        prop_assert!(rep.rows.iter().all(|r| r.lhs <= r.rhs * (1.0 + 1e-12)));
    }
}

#[test]
fn maximal_function_of_a_constant() {
    let grid = Grid::unit_square(4);
    let m = maximal_function(&grid, &vec![3.0; grid.num_cells()], 0.25).unwrap();
    assert!(m.iter().all(|v| (v - 3.0).abs() < 1e-12));
}

#[test]
fn free_boundary_of_a_cone_is_the_plane() {
    let grid = Grid::unit_square(5);
    let pts = free_boundary_points(&cone(&grid, 1.0));
    assert!(!pts.is_empty());
    assert!(pts.iter().all(|p| (p[0] - 0.5).abs() <= grid.h_max()));
}

#[test]
fn lipschitz_certificate_sees_growing_gradients() {
    let (coarse, fine) = (Grid::unit_square(4), Grid::unit_square(5));
    assert!(
        lipschitz_certificate(&cone(&coarse, 1.0), &cone(&fine, 1.0), None, None)
            .unwrap()
            .pass
    );
    assert!(
        !lipschitz_certificate(&cone(&coarse, 1.0), &cone(&fine, 1.5), None, None)
            .unwrap()
            .pass
    );
}

#[test]
fn morrey_slope_of_a_smooth_field_is_flat() {
    let grid = Grid::unit_square(7);
    let u = Field::from_fn(&grid, |x| 1.0 + x[0] + 0.5 * x[1]);
    let rep = morrey_decay(&u, [0.5, 0.5], &[0.05, 0.1, 0.2, 0.4], 0.0).unwrap();
    assert!(rep.fit.unwrap().slope.abs() < 1e-6);
    assert!(rep.pass);
}

#[test]
fn csv_round_trip_keeps_rows() {
    let grid = Grid::unit_square(6);
    let rep = growth_dichotomy(&cone(&grid, 2.0), [0.5, 0.5], &GrowthOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    write_reports_csv(std::slice::from_ref(&rep), &path).unwrap();
    assert_eq!(read_reports_csv(&path).unwrap(), rep.csv_rows());
}
