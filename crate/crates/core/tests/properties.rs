use proptest::prelude::*;

use motionct_core::dataset::estimate_eta;
use motionct_core::dremel::shift_cross_corr;
use motionct_core::metrics::{psnr, ssim};
use motionct_core::perturbation::{warp_image, Motion};
use motionct_core::projector::{adjoint_full, project_full};
use motionct_core::{inner_x, make_geometry, Geometry, GeometryKind, Image, Sinogram};

fn image(n: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| Image::from_vec(n, v).unwrap())
}

fn geometry() -> impl Strategy<Value = Geometry> {
    (any::<bool>(), 1usize..12, 1usize..20, 4usize..14, 3.0f64..20.0).prop_map(|(fan, k, l, n, d)| {
        if fan {
            make_geometry(GeometryKind::Fan, k, l, Some(d * n as f64), n).unwrap()
        } else {
            make_geometry(GeometryKind::Parallel, k, l, None, n).unwrap()
        }
    })
}

fn with_data(g: Geometry) -> impl Strategy<Value = (Geometry, Image, Sinogram)> {
    let (n, k, l) = (g.image_size(), g.num_angles(), g.num_detectors());
    (image(n), prop::collection::vec(-1.0f64..1.0, k * l))
        .prop_map(move |(x, w)| (g.clone(), x, Sinogram::from_vec(k, l, w).unwrap()))
}

fn combine(a: &Image, b: &Image, s: f64, t: f64) -> Image {
    let v = a.data().iter().zip(b.data()).map(|(p, q)| s * p + t * q).collect();
    Image::from_vec(a.size(), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity((g, x, w) in geometry().prop_flat_map(with_data)) {
        let lhs = project_full(&x, &g).unwrap().dot(&w).unwrap();
        let rhs = inner_x(&x, &adjoint_full(&w, &g).unwrap()).unwrap();
        let w_norm = w.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + x.norm_x() * w_norm));
    }

    #[test]
    fn projection_is_linear((g, x, _) in geometry().prop_flat_map(with_data), s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let y = Image::from_fn(g.image_size(), |a, b| a * b - 0.3 * a);
        let lhs = project_full(&combine(&x, &y, s, t), &g).unwrap();
        let (px, py) = (project_full(&x, &g).unwrap(), project_full(&y, &g).unwrap());
        for i in 0..lhs.data().len() {
            let want = s * px.data()[i] + t * py.data()[i];
            prop_assert!((lhs.data()[i] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn inner_product_is_symmetric(a in image(9), b in image(9)) {
        prop_assert_eq!(inner_x(&a, &b).unwrap(), inner_x(&b, &a).unwrap());
        prop_assert!(inner_x(&a, &a).unwrap() >= 0.0);
    }

    #[test]
    fn metrics_are_symmetric(a in image(16), b in image(16)) {
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warp_is_linear(a in image(12), b in image(12), rot in -3.0f64..3.0, sx in -2.0f64..2.0, sy in -2.0f64..2.0) {
        let m = Motion { rot_deg: rot, shift_px: [sx, sy] };
        let lhs = warp_image(&combine(&a, &b, 0.7, -1.3), m);
        let rhs = combine(&warp_image(&a, m), &warp_image(&b, m), 0.7, -1.3);
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_warp_moves_pixels(a in image(10), dx in -3i32..=3, dy in -3i32..=3) {
        let out = warp_image(&a, Motion { rot_deg: 0.0, shift_px: [dx as f64, dy as f64] });
        for r in 0..10i32 {
            for c in 0..10i32 {
                let (sr, sc) = (r + dy, c + dx);
                let want = if (0..10).contains(&sr) && (0..10).contains(&sc) { a.get(sr as usize, sc as usize) } else { 0.0 };
                prop_assert!((out.get(r as usize, c as usize) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn impulse_shifts_are_antisymmetric(n in 9usize..40, i in 0usize..40, j in 0usize..40) {
        let (i, j) = (i % n, j % n);
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        a[i] = 1.0;
        b[j] = 1.0;
        // A separation of n/2 sits on the edge of the lag window.
        prop_assume!(2 * i.abs_diff(j) < n);
        let forward = shift_cross_corr(&a, &b, 2).unwrap();
        prop_assert_eq!(forward, -shift_cross_corr(&b, &a, 2).unwrap());
        prop_assert!((forward - (i as f64 - j as f64)).abs() <= 0.5);
    }

    #[test]
    fn eta_is_a_nonnegative_maximum(v in prop::collection::vec(-1.0f64..1.0, 24), u in prop::collection::vec(-1.0f64..1.0, 24)) {
        let a = Sinogram::from_vec(4, 6, v).unwrap();
        let b = Sinogram::from_vec(4, 6, u).unwrap();
        let eta = estimate_eta(&a, &b).unwrap();
        prop_assert!(estimate_eta(&a, &a).unwrap().iter().all(|&e| e == 0.0));
        prop_assert_eq!(&eta, &estimate_eta(&b, &a).unwrap());
        for k in 0..4 {
            prop_assert!((0..6).all(|l| (a.get(k, l) - b.get(k, l)).abs() <= eta[k]));
        }
    }
}
