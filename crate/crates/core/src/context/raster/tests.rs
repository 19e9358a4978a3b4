use super::*;
use crate::dataio::{AgentId, TrackPoint};
use proptest::prelude::*;

fn track(id: u64, ty: AgentType, pts: &[Point]) -> AgentTrack {
    AgentTrack {
        agent_id: AgentId(id),
        agent_type: ty,
        samples: pts
            .iter()
            .enumerate()
            .map(|(k, &pos)| TrackPoint { frame: k as i64, pos })
            .collect(),
    }
}

#[test]
fn tiny_kernel_is_a_delta() {
    let t = track(1, AgentType::Pedestrian, &[[2.0, 3.0]]);
    let hm = build_heat_map(&[t], AgentType::Pedestrian, (8, 8), 1e-3, 1.0).unwrap();
    for ((r, c), v) in hm.indexed_iter() {
        let expected = if (r, c) == (3, 2) { 1.0 } else { 0.0 };
        assert!((v - expected).abs() < 1e-12, "({r},{c}) = {v}");
    }
}

/// Direct 2-D convolution with the outer product of the 1-D taps.
fn brute_force_blur(img: &Array2<f64>, std: f64) -> Array2<f64> {
    let k = gaussian_kernel(std);
    let rad = (k.len() / 2) as i64;
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(r, c)| {
        let mut acc = 0.0;
        for (i, ki) in k.iter().enumerate() {
            for (j, kj) in k.iter().enumerate() {
                let rr = r as i64 + i as i64 - rad;
                let cc = c as i64 + j as i64 - rad;
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    acc += ki * kj * img[[rr as usize, cc as usize]];
                }
            }
        }
        acc
    })
}

#[test]
fn blur_preserves_interior_mass() {
    let mut img = Array2::<f64>::zeros((41, 41));
    img[[20, 20]] = 5.0;
    img[[18, 22]] = 2.0;
    let blurred = gaussian_blur(&img, 3.0);
    let oracle = brute_force_blur(&img, 3.0);
    for (a, b) in blurred.iter().zip(oracle.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let mass: f64 = oracle.sum();
    assert!((mass - 7.0).abs() / 7.0 < 1e-3);
}

#[test]
fn heat_channels_are_per_type() {
    let ped = track(1, AgentType::Pedestrian, &[[3.0, 3.0], [4.0, 3.0]]);
    let veh = track(2, AgentType::Vehicle, &[[10.0, 10.0], [11.0, 10.0]]);
    let only_ped = build_heat_map(&[ped.clone()], AgentType::Pedestrian, (16, 16), 2.0, 1.0).unwrap();
    let both = build_heat_map(&[ped, veh], AgentType::Pedestrian, (16, 16), 2.0, 1.0).unwrap();
    assert_eq!(only_ped, both);
    let peak = both.iter().cloned().fold(0.0, f64::max);
    assert_eq!(peak, 1.0);
    assert!(both.iter().all(|&v| v >= 0.0));
}

#[test]
fn empty_type_gives_zero_channel() {
    let ped = track(1, AgentType::Pedestrian, &[[3.0, 3.0]]);
    let r = build_heat_raster(&[ped], (8, 8), 1.0, 1.0).unwrap();
    assert_eq!(r.channels(), 3);
    assert!(r.pixels.index_axis(Axis(2), 1).iter().all(|&v| v == 0.0));
    assert!(build_heat_map(&[], AgentType::Cyclist, (0, 8), 1.0, 1.0).is_err());
}

#[test]
fn segmented_threshold_and_aerial_scaling() {
    let dir = tempfile::tempdir().unwrap();
    let gray = dir.path().join("seg.png");
    let mut img = image::GrayImage::new(4, 2);
    img.put_pixel(0, 0, image::Luma([128]));
    img.put_pixel(1, 0, image::Luma([127]));
    img.put_pixel(2, 0, image::Luma([255]));
    img.save(&gray).unwrap();
    let seg = load_raster(&gray, RasterKind::Segmented, 0.1, Some((4, 2))).unwrap();
    assert_eq!(seg.pixels[[0, 0, 0]], 1.0);
    assert_eq!(seg.pixels[[0, 1, 0]], 0.0);
    assert_eq!(seg.pixels[[0, 2, 0]], 1.0);
    assert!(load_raster(&gray, RasterKind::Segmented, 0.1, Some((5, 2))).is_err());

    let white = dir.path().join("white.png");
    image::GrayImage::from_pixel(3, 3, image::Luma([255])).save(&white).unwrap();
    let w = load_raster(&white, RasterKind::Segmented, 0.1, None).unwrap();
    assert!(w.pixels.iter().all(|&v| v == 1.0));

    let rgb = dir.path().join("aerial.png");
    let mut img = image::RgbImage::new(2, 2);
    img.put_pixel(1, 1, image::Rgb([51, 102, 255]));
    img.save(&rgb).unwrap();
    let a = load_raster(&rgb, RasterKind::Aerial, 0.1, None).unwrap();
    assert_eq!(a.channels(), 3);
    assert_eq!(a.pixels[[1, 1, 0]], 0.2);
    assert_eq!(a.pixels[[1, 1, 2]], 1.0);
    assert!(a.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hm.bin");
    let ped = track(1, AgentType::Pedestrian, &[[3.0, 3.0], [4.0, 3.5]]);
    let r = build_heat_raster(&[ped], (12, 10), 1.5, 0.5).unwrap();
    save_raster_cache(&r, &path).unwrap();
    assert_eq!(load_raster_cache(&path).unwrap(), r);
    std::fs::write(&path, b"garbage").unwrap();
    assert!(load_raster_cache(&path).is_err());
}

fn ones(h: usize, w: usize, c: usize) -> SceneRaster {
    SceneRaster {
        kind: RasterKind::Segmented,
        meters_per_pixel: 0.5,
        pixels: Array3::ones((h, w, c)),
    }
}

#[test]
fn static_all_ones() {
    let spec = SceneTensorSpec {
        input_size: 7,
        ..Default::default()
    };
    let t = scene_tensor(&ones(50, 37, 2), &[[1.0, 1.0]; 8], &spec);
    assert_eq!(t.steps, 1);
    assert_eq!(t.data.len(), 7 * 7 * 2);
    assert!(t.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn crop_is_centred_on_agent_pixel() {
    let mut r = ones(40, 40, 1);
    r.pixels.fill(0.0);
    // Agent at (5.2, 7.4) m with 0.5 m/px sits on row 15, col 10.
    let (row, col) = world_to_pixel([5.2, 7.4], 0.5);
    assert_eq!((row, col), (15, 10));
    r.pixels[[15, 10, 0]] = 1.0;
    let side = crop_side_px(4.5, 0.5);
    assert_eq!(side, 9);
    let crop = crop_at(&r, [5.2, 7.4], side);
    assert_eq!(crop[[side / 2, side / 2, 0]], 1.0);
    assert_eq!(crop.sum(), 1.0);
}

#[test]
fn corner_crop_is_zero_padded() {
    let r = ones(20, 20, 1);
    let crop = crop_at(&r, [0.0, 0.0], 5);
    for ((i, j, _), &v) in crop.indexed_iter() {
        let inside = i >= 2 && j >= 2;
        assert_eq!(v, if inside { 1.0 } else { 0.0 });
    }
}

#[test]
fn per_step_crop_has_one_image_per_step() {
    let spec = SceneTensorSpec {
        mode: SceneMode::PerStepCrop,
        input_size: 4,
        crop_size_m: 4.0,
    };
    let t = scene_tensor(&ones(30, 30, 3), &[[5.0, 5.0], [6.0, 5.0], [7.0, 5.0]], &spec);
    assert_eq!(t.steps, 3);
    assert_eq!(t.image(2).len(), 4 * 4 * 3);
    assert!(t.data.iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn area_resize_preserves_mean() {
    let src = Array3::from_shape_fn((9, 6, 1), |(r, c, _)| (r * 6 + c) as f64);
    let dst = resize_area(&src, 4);
    let (a, b) = (src.mean().unwrap(), dst.mean().unwrap());
    assert!((a - b).abs() < 1e-9, "{a} vs {b}");
}

proptest! {
    #[test]
    fn crop_translation_consistent(
        seed in 0u64..10_000,
        dr in -5i64..5,
        dc in -5i64..5,
        pr in 12i64..18,
        pc in 12i64..18,
    ) {
        let mpp = 0.5;
        let base = Array3::from_shape_fn((40, 40, 1), |(r, c, _)| {
            ((r as u64 * 131 + c as u64 * 17 + seed) % 97) as f64 / 97.0
        });
        let shifted = Array3::from_shape_fn((40, 40, 1), |(r, c, _)| {
            let (sr, sc) = (r as i64 - dr, c as i64 - dc);
            if (0..40).contains(&sr) && (0..40).contains(&sc) {
                base[[sr as usize, sc as usize, 0]]
            } else {
                0.0
            }
        });
        let a = SceneRaster { kind: RasterKind::Aerial, meters_per_pixel: mpp, pixels: base };
        let b = SceneRaster { kind: RasterKind::Aerial, meters_per_pixel: mpp, pixels: shifted };
        let p = [pc as f64 * mpp, pr as f64 * mpp];
        let q = [(pc + dc) as f64 * mpp, (pr + dr) as f64 * mpp];
        prop_assert_eq!(crop_at(&a, p, 7), crop_at(&b, q, 7));
    }
}
