use masc::detections::{box_iou, format_labels, Detection, PlantClass};
use masc::geometry::Point2;
use masc::mosaic::{
    merge_patch_detections, patch_label_name, patchify, run_mosaic_mode, ClassicalProvider, LabelDirProvider,
    MergeConfig, MosaicConfig,
};
use masc::raster::{Raster, RgbImage};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SOIL: [u8; 3] = [120, 90, 60];
const LEAF: [u8; 3] = [60, 160, 50];

fn field(w: usize, h: usize, plants: &[(f64, f64)], r: f64) -> RgbImage {
    let mut img = Raster::<u8>::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let inside = plants
                .iter()
                .any(|&(cx, cy)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r);
            img.pixel_mut(x, y).copy_from_slice(if inside { &LEAF } else { &SOIL });
        }
    }
    img
}

fn keep_all() -> MergeConfig {
    MergeConfig {
        drop_edge_truncated: false,
        ..MergeConfig::default()
    }
}

/// Pairwise suppression in priority order, written without the library's
/// NMS: a candidate survives unless a kept box overlaps it by more than tau.
fn nms_oracle(mut all: Vec<Detection>, tau: f64, conf: f64) -> Vec<Detection> {
    all.retain(|d| d.conf >= conf);
    all.sort_by(|a, b| {
        b.conf
            .total_cmp(&a.conf)
            .then((a.source, a.seq).cmp(&(b.source, b.seq)))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for d in all {
        if kept.iter().all(|k| box_iou(&k.bbox(), &d.bbox()) <= tau) {
            kept.push(d);
        }
    }
    kept
}

#[test]
fn patch_grid_examples() {
    let g = patchify((1280, 1280), 1280, 0.1).unwrap();
    assert_eq!(g.origins(), vec![(0, 0)]);

    let g = patchify((2000, 1280), 1280, 0.1).unwrap();
    assert_eq!(g.stride(), 1152);
    assert_eq!(g.origins(), vec![(0, 0), (720, 0)]);
    for y in (0..1280).step_by(7) {
        for x in 0..2000 {
            assert!(g.covers(x, y), "({x},{y})");
        }
    }
    assert!(patchify((100, 100), 32, 0.1).is_err());
    assert!(patchify((100, 100), 64, 1.0).is_err());
}

#[test]
fn merge_examples() {
    let g = patchify((2000, 1280), 1280, 0.1).unwrap();
    let lone = Detection::new(PlantClass::Single, 100.0, 200.0, 20.0, 20.0, 0.8);
    let out = merge_patch_detections(&g, &[vec![], vec![lone]], &MergeConfig::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!((out[0].cx, out[0].cy), (820.0, 200.0));

    // The same plant at global (1000, 300) seen by both patches.
    let a = Detection::new(PlantClass::Single, 1000.0, 300.0, 24.0, 24.0, 0.7);
    let b = Detection::new(PlantClass::Double, 280.0, 300.0, 24.0, 24.0, 0.9);
    let per_patch = vec![vec![a], vec![b]];
    let out = merge_patch_detections(&g, &per_patch, &MergeConfig::default()).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(out[0].cls, PlantClass::Double);
    assert_eq!(out[0].cx, 1000.0);
    let oracle = nms_oracle(
        vec![a.with_source(0, 0), b.translated(720.0, 0.0).with_source(1, 0)],
        0.25,
        0.25,
    );
    assert_eq!(out, oracle);

    // Two partial views of one plant overlapping by IoU 0.1 both survive.
    let overlap = 80.0 / 11.0;
    let left = Detection::new(PlantClass::Single, 1020.0, 500.0, 40.0, 40.0, 0.9);
    let right = Detection::new(PlantClass::Single, 1060.0 - overlap - 720.0, 500.0, 40.0, 40.0, 0.8);
    assert!((box_iou(&left.bbox(), &right.translated(720.0, 0.0).bbox()) - 0.1).abs() < 1e-9);
    let out = merge_patch_detections(&g, &[vec![left], vec![right]], &keep_all()).unwrap();
    assert_eq!(out.len(), 2);
}

#[test]
fn merge_matches_oracle_on_random_patches() {
    let g = patchify((900, 700), 256, 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let per_patch: Vec<Vec<Detection>> = g
            .patches
            .iter()
            .map(|p| {
                (0..rng.random_range(0..30))
                    .map(|_| {
                        Detection::new(
                            PlantClass::ALL[rng.random_range(0..3)],
                            rng.random_range(10.0..p.width as f64 - 10.0),
                            rng.random_range(10.0..p.height as f64 - 10.0),
                            rng.random_range(8.0..20.0),
                            rng.random_range(8.0..20.0),
                            rng.random_range(0.0..1.0),
                        )
                    })
                    .collect()
            })
            .collect();
        let translated: Vec<Detection> = g
            .patches
            .iter()
            .zip(&per_patch)
            .enumerate()
            .flat_map(|(k, (p, ds))| {
                ds.iter()
                    .enumerate()
                    .map(move |(i, d)| d.translated(p.x0 as f64, p.y0 as f64).with_source(k as u32, i as u32))
            })
            .collect();
        let got = merge_patch_detections(&g, &per_patch, &keep_all()).unwrap();
        assert_eq!(got, nms_oracle(translated, 0.25, 0.25));
    }
}

#[test]
fn classical_mosaic_counts_plants_across_boundaries() {
    let mut plants = Vec::new();
    for r in 0..5 {
        for c in 0..5 {
            plants.push((60.0 + 70.0 * c as f64, 60.0 + 70.0 * r as f64));
        }
    }
    let img = field(400, 400, &plants, 7.5);
    let cfg = MosaicConfig {
        patch_size: 128,
        overlap_frac: 0.25,
        ..MosaicConfig::default()
    };
    let run = run_mosaic_mode(&img, &ClassicalProvider::default(), &cfg).unwrap();
    assert_eq!(run.detections.len(), 25);
    for &(x, y) in &plants {
        let hits = run
            .detections
            .iter()
            .filter(|d| d.bbox().contains(&Point2::new(x, y)))
            .count();
        assert_eq!(hits, 1, "plant at ({x},{y})");
    }

    let serial = run_mosaic_mode(
        &img,
        &ClassicalProvider::default(),
        &MosaicConfig {
            parallelism: 1,
            ..cfg.clone()
        },
    )
    .unwrap();
    let wide = run_mosaic_mode(
        &img,
        &ClassicalProvider::default(),
        &MosaicConfig {
            parallelism: 4,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(serial.detections, wide.detections);

    let blank = field(300, 300, &[], 1.0);
    assert!(run_mosaic_mode(&blank, &ClassicalProvider::default(), &cfg)
        .unwrap()
        .detections
        .is_empty());
}

#[test]
fn label_dir_provider_merges_known_files() {
    let tmp = tempfile::tempdir().unwrap();
    let img = field(500, 300, &[], 1.0);
    let cfg = MosaicConfig {
        patch_size: 256,
        overlap_frac: 0.25,
        merge: keep_all(),
        ..MosaicConfig::default()
    };
    let grid = patchify((500, 300), 256, 0.25).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut expected = Vec::new();
    for (k, p) in grid.patches.iter().enumerate() {
        let dets: Vec<Detection> = (0..6)
            .map(|_| {
                Detection::new(
                    PlantClass::Single,
                    rng.random_range(20.0..230.0),
                    rng.random_range(20.0..230.0),
                    16.0,
                    16.0,
                    (rng.random_range(30..100) as f64) / 100.0,
                )
            })
            .collect();
        let text = format_labels(&dets, p.width as f64, p.height as f64);
        std::fs::write(tmp.path().join(patch_label_name(p.row, p.col)), &text).unwrap();
        // What the file holds after the six-decimal rounding.
        let stored = masc::detections::parse_labels(&text, p.width as f64, p.height as f64).unwrap();
        expected.extend(
            stored
                .iter()
                .enumerate()
                .map(|(i, d)| d.translated(p.x0 as f64, p.y0 as f64).with_source(k as u32, i as u32)),
        );
    }
    let run = run_mosaic_mode(&img, &LabelDirProvider::new(tmp.path()), &cfg).unwrap();
    assert_eq!(run.detections, nms_oracle(expected, 0.25, 0.25));
}

proptest! {
    #[test]
    fn patches_cover_the_mosaic(w in 1usize..900, h in 1usize..900, size in 64usize..400, overlap in 0.0f64..0.9) {
        let g = patchify((w, h), size, overlap).unwrap();
        prop_assert!(g.stride() >= 1);
        let origins = g.origins();
        let mut sorted = origins.clone();
        sorted.sort_by_key(|&(x, y)| (y, x));
        prop_assert_eq!(&origins, &sorted);
        for p in &g.patches {
            prop_assert!(p.x0 + p.width <= w && p.y0 + p.height <= h);
        }
        for y in (0..h).step_by(3).chain([h - 1]) {
            for x in (0..w).step_by(3).chain([w - 1]) {
                prop_assert!(g.covers(x, y));
            }
        }
    }
}
