use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentinel_core::analysis::{
    align, attention_entropy_report, entropy, estimate_threshold, grounding_separation, grounding_table, localization_accuracy,
    localize, parse_traces, threshold_grid, uniform_baseline, upsample_bilinear, write_pgm, write_traces, Alignment,
    AlignmentSet, TraceHeader, TraceRecord, TraceSet, DEFAULT_THRESHOLD,
};
use sentinel_core::captioner::Variant;
use sentinel_core::dataset::{Inventory, SceneInstance, SceneObject};
use sentinel_core::geometry::{cell_box, iou, BBox};

fn record(scene: u64, step: usize, token: &str, beta: f64, alpha_hat: Vec<f64>) -> TraceRecord {
    TraceRecord { scene, step, token: token.into(), beta, alpha_hat }
}

fn flat(k: usize, beta: f64) -> Vec<f64> {
    let mut a = vec![(1.0 - beta) / k as f64; k];
    a.push(beta);
    a
}

#[test]
fn grounding_of_single_and_paired_samples() {
    let t = grounding_table(&[record(0, 0, "red", 0.3, flat(4, 0.3))]).unwrap();
    assert_eq!(t.len(), 1);
    assert!((t[0].probability - 0.7).abs() < 1e-15);
    let t = grounding_table(&[record(0, 0, "red", 0.2, flat(4, 0.2)), record(1, 0, "red", 0.4, flat(4, 0.4))]).unwrap();
    assert_eq!(t[0].count, 2);
    assert!((t[0].probability - 0.7).abs() < 1e-15);
}

#[test]
fn grounding_table_matches_flat_scan() {
    let words = ["a", "the", "red", "circle", "on", "grid", "of", "star", "<end>"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut records = Vec::new();
    for scene in 0..50 {
        let len = rng.gen_range(3..10);
        for step in 0..len {
            let beta: f64 = rng.gen_range(0.01..0.99);
            records.push(record(scene, step, words[rng.gen_range(0..words.len())], beta, flat(4, beta)));
        }
    }
    let table = grounding_table(&records).unwrap();
    let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
    for r in &records {
        let e = sums.entry(&r.token).or_insert((0.0, 0));
        e.0 += 1.0 - r.beta;
        e.1 += 1;
    }
    assert_eq!(table.len(), sums.len());
    for row in &table {
        let (s, n) = sums[row.token.as_str()];
        assert_eq!(row.count, n);
        assert!((row.probability - s / n as f64).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&row.probability));
    }
    for w in table.windows(2) {
        assert!(w[0].probability >= w[1].probability);
    }
}

#[test]
fn grounding_separation_is_difference_of_means() {
    let inv = Inventory::default();
    let records = vec![
        record(0, 0, "red", 0.1, flat(4, 0.1)),
        record(0, 1, "disk", 0.3, flat(4, 0.3)),
        record(0, 2, "the", 0.8, flat(4, 0.8)),
        record(0, 3, "a", 0.6, flat(4, 0.6)),
        record(0, 4, "grid", 0.5, flat(4, 0.5)),
    ];
    let t = grounding_table(&records).unwrap();
    let sep = grounding_separation(&t, &inv).unwrap();
    assert!((sep - ((0.9 + 0.7) / 2.0 - (0.2 + 0.4) / 2.0)).abs() < 1e-12);
}

#[test]
fn upsampling_closed_forms() {
    let c = upsample_bilinear(&[0.37; 9], 3, 10).unwrap();
    assert!(c.iter().all(|&v| (v - 0.37).abs() < 1e-15));
    let one = upsample_bilinear(&[0.8], 1, 5).unwrap();
    assert_eq!(one, vec![0.8; 25]);
    let up = upsample_bilinear(&[0.0, 1.0, 0.0, 1.0], 2, 3).unwrap();
    for y in 0..3 {
        assert_eq!(up[y * 3 + 1], 0.5);
    }
}

#[test]
fn localize_single_pixel_and_largest_component() {
    let mut map = vec![0.0; 25];
    map[2 * 5 + 3] = 1.0;
    assert_eq!(localize(&map, 5, 0.5), Some(BBox { x0: 3, y0: 2, x1: 4, y1: 3 }));

    // 3-pixel component top-left, 5-pixel component bottom-right
    let mask = ["##....", "#.....", "......", "...###", "....##", "......"];
    let map: Vec<f64> = mask.iter().flat_map(|r| r.chars().map(|c| if c == '#' { 1.0 } else { 0.0 })).collect();
    assert_eq!(localize(&map, 6, 0.5), Some(BBox { x0: 3, y0: 3, x1: 6, y1: 5 }));
    // diagonal neighbours are separate components
    let mask = ["#.", ".#"];
    let map: Vec<f64> = mask.iter().flat_map(|r| r.chars().map(|c| if c == '#' { 1.0 } else { 0.0 })).collect();
    assert_eq!(localize(&map, 2, 0.5), Some(BBox { x0: 0, y0: 0, x1: 1, y1: 1 }));

    for th in [0.1, 0.5, 0.9] {
        assert_eq!(localize(&[0.2; 16], 4, th), Some(BBox { x0: 0, y0: 0, x1: 4, y1: 4 }));
    }
}

#[test]
fn iou_cases() {
    let a = BBox { x0: 0, y0: 0, x1: 2, y1: 2 };
    let b = BBox { x0: 1, y0: 1, x1: 3, y1: 3 };
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(iou(&a, &BBox { x0: 5, y0: 5, x1: 6, y1: 6 }), 0.0);
    assert_eq!(iou(&a, &b), 1.0 / 7.0);
    assert_eq!(iou(&b, &a), iou(&a, &b));
}

#[test]
fn localization_is_scale_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let raw: Vec<f64> = (0..49).map(|_| rng.gen_range(0.0..1.0)).collect();
        let base = localize(&upsample_bilinear(&raw, 7, 224).unwrap(), 224, 0.5);
        for c in [0.25, 3.0, 1000.0] {
            // scaling by a power of two keeps every ratio exact
            let c = if c == 3.0 { 4.0 } else { c };
            let scaled: Vec<f64> = raw.iter().map(|x| x * c).collect();
            assert_eq!(localize(&upsample_bilinear(&scaled, 7, 224).unwrap(), 224, 0.5), base);
        }
    }
}

fn one_object_scene(id: u64, row: usize, col: usize, category: usize, bbox: BBox) -> SceneInstance {
    SceneInstance {
        id,
        grid: 7,
        canvas: 224,
        objects: vec![SceneObject { row, col, category, color: 0, bbox }],
        references: vec![vec!["x".into()]],
    }
}

fn one_hot(k: usize, at: usize, beta: f64) -> Vec<f64> {
    let mut a = vec![0.0; k + 1];
    a[at] = 1.0 - beta;
    a[k] = beta;
    a
}

#[test]
fn attention_on_the_object_cell_boxes_that_cell() {
    let inv = Inventory::default();
    let mut scenes = Vec::new();
    let mut records = Vec::new();
    for (c, name) in inv.categories.iter().enumerate() {
        let (row, col) = (c, (3 * c + 1) % 7);
        let cell = cell_box(row, col, 7, 224);
        let gt = BBox { x0: cell.x0 + 4, y0: cell.y0 + 2, x1: cell.x1 - 6, y1: cell.y1 - 1 };
        scenes.push(one_object_scene(c as u64, row, col, c, gt));
        records.push(record(c as u64, 0, "a", 0.9, one_hot(49, 0, 0.9)));
        records.push(record(c as u64, 1, name, 0.2, one_hot(49, row * 7 + col, 0.2)));
    }
    let traces = TraceSet { header: TraceHeader::new(Variant::Adaptive, 7, 224), records };
    let set = align(&traces, &scenes, &inv).unwrap();
    assert_eq!(set.items.len(), inv.categories.len());
    let map = &set.items[0].maps[0];
    let cell0 = cell_box(0, 1, 7, 224);
    assert_eq!(localize(map, 224, 0.5), Some(cell0));

    let report = localization_accuracy(&set, &inv, &vec![0.5; inv.categories.len()]);
    let baseline = uniform_baseline(&set, &inv);
    for (item, (score, base)) in set.items.iter().zip(report.per_category.iter().zip(&baseline.per_category)) {
        let gt = item.truth[0];
        let cell = cell_box(gt.y0 / 32, gt.x0 / 32, 7, 224);
        // the box inside the cell: intersection is the truth, union is the cell
        let expect = gt.area() as f64 / cell.area() as f64;
        assert!((score.mean_iou - expect).abs() < 1e-12, "{}", score.category);
        assert!((base.mean_iou - gt.area() as f64 / (224.0 * 224.0)).abs() < 1e-12);
        assert!(score.mean_iou > base.mean_iou);
    }
}

#[test]
fn uniform_attention_scores_the_canvas_box() {
    let inv = Inventory::default();
    let gt = BBox { x0: 10, y0: 20, x1: 30, y1: 50 };
    let scenes = vec![one_object_scene(0, 0, 0, 2, gt)];
    let records = vec![record(0, 0, "triangle", 0.0, vec![1.0 / 49.0; 49])];
    let traces = TraceSet { header: TraceHeader::new(Variant::Spatial, 7, 224), records };
    let set = align(&traces, &scenes, &inv).unwrap();
    for th in threshold_grid() {
        let r = localization_accuracy(&set, &inv, &[th; 6]);
        assert!((r.mean_iou - 600.0 / 50176.0).abs() < 1e-15);
    }
}

fn block_map(size: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<f64> {
    let mut m = vec![0.0; size * size];
    for y in y0..y1 {
        for x in x0..x1 {
            m[y * size + x] = 1.0;
        }
    }
    m
}

#[test]
fn threshold_estimation_fallback_plateau_and_search() {
    let truth = vec![BBox { x0: 2, y0: 2, x1: 6, y1: 6 }];
    let hard = |n: usize| AlignmentSet {
        items: (0..n)
            .map(|i| Alignment { scene: i as u64, category: 1, maps: vec![block_map(8, 2, 2, 6, 6)], truth: truth.clone() })
            .collect(),
        unaligned: 0,
        size: 8,
    };
    assert_eq!(estimate_threshold(&hard(4), 1), DEFAULT_THRESHOLD);
    assert_eq!(estimate_threshold(&hard(4), 0), DEFAULT_THRESHOLD);
    // a hard-edged map gives the same box at every threshold: smallest wins
    assert_eq!(estimate_threshold(&hard(5), 1), 0.1);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let items: Vec<Alignment> = (0..12)
        .map(|i| {
            let raw: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..1.0)).collect();
            let x0 = rng.gen_range(0..20);
            let y0 = rng.gen_range(0..20);
            Alignment {
                scene: i,
                category: 2,
                maps: vec![upsample_bilinear(&raw, 4, 32).unwrap()],
                truth: vec![BBox { x0, y0, x1: x0 + 10, y1: y0 + 8 }],
            }
        })
        .collect();
    let set = AlignmentSet { items, unaligned: 0, size: 32 };
    let mut best = (f64::NEG_INFINITY, 0.0);
    for th in threshold_grid() {
        let mean = set
            .items
            .iter()
            .map(|a| {
                let b = localize(&a.maps[0], 32, th).unwrap();
                iou(&b, &a.truth[0])
            })
            .sum::<f64>()
            / 12.0;
        if mean > best.0 {
            best = (mean, th);
        }
    }
    assert_eq!(estimate_threshold(&set, 2), best.1);
}

#[test]
fn entropy_extremes_and_flat_recomputation() {
    let mut onehot = vec![0.0; 49];
    onehot[7] = 1.0;
    assert_eq!(entropy(&onehot), 0.0);
    assert!((entropy(&[1.0 / 49.0; 49]) - 49f64.ln()).abs() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words = ["a", "red", "the", "star"];
    let records: Vec<TraceRecord> = (0..40)
        .map(|i| {
            let raw: Vec<f64> = (0..49).map(|_| rng.gen_range(0.0..1.0f64).powi(4)).collect();
            let s: f64 = raw.iter().sum();
            record(i / 5, (i % 5) as usize, words[(i % 4) as usize], 0.0, raw.iter().map(|x| x / s).collect())
        })
        .collect();
    let traces = TraceSet { header: TraceHeader::new(Variant::Spatial, 7, 224), records };
    let report = attention_entropy_report(&traces, None);
    for row in &report {
        let es: Vec<f64> = traces
            .records
            .iter()
            .filter(|r| r.token == row.token)
            .map(|r| -r.alpha_hat.iter().map(|p| if *p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>())
            .collect();
        assert_eq!(row.count, es.len());
        assert!((row.mean_entropy - es.iter().sum::<f64>() / es.len() as f64).abs() < 1e-12);
    }
    let only = attention_entropy_report(&traces, Some(&["red"]));
    assert_eq!(only.len(), 1);
}

#[test]
fn pgm_has_requested_dimensions() {
    let map = upsample_bilinear(&[0.1, 0.9, 0.3, 0.0], 2, 16).unwrap();
    let mut out = Vec::new();
    write_pgm(&mut out, &map, 16).unwrap();
    assert!(out.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(out.len(), b"P5\n16 16\n255\n".len() + 256);
}

#[test]
fn trace_files_round_trip_and_reject_bad_records() {
    let traces = TraceSet {
        header: TraceHeader::new(Variant::Adaptive, 2, 8),
        records: vec![record(3, 0, "red", 0.25, vec![0.25; 5]), record(3, 1, "<end>", 0.5, vec![0.125, 0.125, 0.125, 0.125, 0.5])],
    };
    let mut out = Vec::new();
    write_traces(&mut out, &traces).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(parse_traces(&text).unwrap(), traces);

    let header = text.lines().next().unwrap();
    for bad in [
        r#"{"scene":0,"step":0,"token":"a","alpha_hat":[0.25,0.25,0.25,0.25,0.0]}"#,
        r#"{"scene":0,"step":0,"token":"a","beta":0.1,"alpha_hat":[0.5,0.5]}"#,
        r#"{"scene":0,"step":0,"token":"a","beta":1.5,"alpha_hat":[0.25,0.25,0.25,0.25,0.0]}"#,
    ] {
        let err = parse_traces(&format!("{header}\n{bad}\n")).unwrap_err();
        assert!(matches!(err, sentinel_core::Error::Format(_)), "{bad}");
    }
}
