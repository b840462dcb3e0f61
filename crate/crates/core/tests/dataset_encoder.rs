use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sentinel_core::dataset::{
    build_vocab, generate_corpus, generate_scene, parse_corpus, parse_vocab, split, truncate, write_corpus, CorpusConfig,
    Inventory, SceneInstance, SceneObject, END, START, UNK,
};
use sentinel_core::encoder::{encode_scene, mean_pool, nearest_content, pool_and_project, EncoderConfig, EncoderParams, RawLayout};
use sentinel_core::geometry::{cell_box, BBox};
use sentinel_core::tensor::gradcheck::{central_difference, compare};
use sentinel_core::tensor::{Graph, Tensor};

fn small(n: usize, seed: u64) -> CorpusConfig {
    CorpusConfig { seed, n_scenes: n, ..CorpusConfig::default() }
}

#[test]
fn fixed_seed_gives_byte_identical_corpus() {
    let inv = Inventory::default();
    let text = |seed| {
        let c = generate_corpus(&small(200, seed), &inv).unwrap();
        let mut out = Vec::new();
        write_corpus(&mut out, c.grid, c.canvas, &inv, &c.scenes).unwrap();
        out
    };
    assert_eq!(text(4), text(4));
    assert_ne!(text(4), text(5));
}

#[test]
fn scenes_depend_only_on_seed_and_id() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(50, 9), &inv).unwrap();
    assert_eq!(generate_scene(&small(1, 9), &inv, 37), corpus.scenes[37]);
}

#[test]
fn every_category_appears_often_in_two_thousand_scenes() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(2000, 0), &inv).unwrap();
    let mut counts = vec![0usize; inv.categories.len()];
    for s in &corpus.scenes {
        for o in &s.objects {
            counts[o.category] += 1;
        }
    }
    for (c, n) in inv.categories.iter().zip(&counts) {
        assert!(*n >= 40, "{c} appears {n} times");
    }
    // caption-side counts of the canonical name also clear the vocabulary threshold
    let mut words: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &corpus.scenes {
        for r in &s.references {
            for t in truncate(r, 12) {
                *words.entry(t.as_str()).or_default() += 1;
            }
        }
    }
    for c in &inv.categories {
        assert!(words.get(c.as_str()).copied().unwrap_or(0) >= 5, "{c}");
    }
}

#[test]
fn generated_boxes_center_inside_their_cells() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(300, 2), &inv).unwrap();
    for s in &corpus.scenes {
        s.validate(&inv).unwrap();
        for o in &s.objects {
            let cell = cell_box(o.row, o.col, s.grid, s.canvas);
            let (cx, cy) = o.bbox.center();
            assert!(cx >= cell.x0 as f64 && cx < cell.x1 as f64);
            assert!(cy >= cell.y0 as f64 && cy < cell.y1 as f64);
            assert!(o.bbox.x0 >= cell.x0 && o.bbox.x1 <= cell.x1);
        }
    }
}

#[test]
fn single_red_circle_list_caption() {
    let inv = Inventory { synonyms: vec![], ..Inventory::default() };
    let objects = [SceneObject { row: 1, col: 2, category: 0, color: 0, bbox: BBox::new(70, 35, 90, 60).unwrap() }];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let words = sentinel_core::dataset::render(sentinel_core::dataset::Template::List, &objects, 7, &inv, &mut rng);
    assert_eq!(words.join(" "), "a red circle on the grid");
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn vocabulary_thresholds() {
    let caps = [toks("a b b c"), toks("b c c d"), toks("c c a")];
    let all = build_vocab(caps.iter().map(Vec::as_slice), 1).unwrap();
    assert_eq!(all.len(), 4 + 4);
    // c:5 b:3 a:2 d:1
    assert_eq!(&all.tokens()[4..], &["c", "b", "a", "d"]);

    let caps: Vec<Vec<String>> = (0..4).map(|_| toks("rare common")).chain((0..3).map(|_| toks("common"))).collect();
    let v = build_vocab(caps.iter().map(Vec::as_slice), 5).unwrap();
    assert!(v.contains("common"));
    assert!(!v.contains("rare"));
    assert_eq!(v.id("rare"), UNK);
    assert_eq!(v.encode(&toks("rare common"), 12), vec![START, UNK, v.id("common"), END]);
}

#[test]
fn vocabulary_matches_independent_count() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(400, 3), &inv).unwrap();
    let caps: Vec<Vec<String>> = corpus
        .scenes
        .iter()
        .flat_map(|s| s.references.iter().map(|r| truncate(r, 12).to_vec()))
        .collect();
    let v = build_vocab(caps.iter().map(Vec::as_slice), 5).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in &caps {
        for t in c {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    let expected: HashSet<&String> = counts.iter().filter(|(_, &n)| n >= 5).map(|(t, _)| t).collect();
    let got: HashSet<&String> = v.tokens()[4..].iter().collect();
    assert_eq!(got, expected);
    for c in &caps {
        for id in v.encode(c, 12) {
            assert!(id < v.len());
        }
    }
    let round = parse_vocab(&v.to_csv()).unwrap();
    assert_eq!(round, v);
    assert_eq!(round.digest(), v.digest());
}

#[test]
fn split_sizes_and_degenerate_fractions() {
    let inv = Inventory::default();
    let scenes = generate_corpus(&small(100, 0), &inv).unwrap().scenes;
    let s = split(scenes.clone(), [0.8, 0.1, 0.1], 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
    let s = split(scenes.clone(), [1.0, 0.0, 0.0], 1).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (100, 0, 0));
    assert!(split(scenes.clone(), [0.5, 0.1, 0.1], 1).is_err());
    assert!(split(scenes, [1.2, -0.1, -0.1], 1).is_err());
}

#[test]
fn splits_are_disjoint_and_cover_for_ten_seeds() {
    let inv = Inventory::default();
    let scenes = generate_corpus(&small(240, 0), &inv).unwrap().scenes;
    for seed in 0..10 {
        let s = split(scenes.clone(), [0.8, 0.1, 0.1], seed).unwrap();
        let ids = |v: &[SceneInstance]| v.iter().map(|s| s.id).collect::<HashSet<_>>();
        let (a, b, c) = (ids(&s.train), ids(&s.val), ids(&s.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        assert_eq!(a.len() + b.len() + c.len(), 240);
    }
}

#[test]
fn corpus_round_trips_through_text() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(60, 8), &inv).unwrap();
    let mut out = Vec::new();
    write_corpus(&mut out, corpus.grid, corpus.canvas, &inv, &corpus.scenes).unwrap();
    let back = parse_corpus(std::str::from_utf8(&out).unwrap()).unwrap();
    assert_eq!(back, corpus);
}

#[test]
fn malformed_corpus_lines_are_format_errors() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(2, 8), &inv).unwrap();
    let mut out = Vec::new();
    write_corpus(&mut out, corpus.grid, corpus.canvas, &inv, &corpus.scenes).unwrap();
    let text = String::from_utf8(out).unwrap();
    let header = text.lines().next().unwrap();
    for bad in [
        "{\"id\":0}".to_string(),
        "not json".to_string(),
        "{\"id\":0,\"objects\":[{\"row\":9,\"col\":0,\"category\":\"circle\",\"color\":\"red\",\"box\":[0,0,5,5]}],\"captions\":[\"a\"]}".to_string(),
        "{\"id\":0,\"objects\":[{\"row\":0,\"col\":0,\"category\":\"blob\",\"color\":\"red\",\"box\":[0,0,5,5]}],\"captions\":[\"a\"]}".to_string(),
    ] {
        let doc = format!("{header}\n{bad}\n");
        assert!(matches!(parse_corpus(&doc), Err(sentinel_core::Error::Format(_))), "{bad}");
    }
    let dup = format!("{header}\n{}\n{}\n", text.lines().nth(1).unwrap(), text.lines().nth(1).unwrap());
    assert!(parse_corpus(&dup).is_err());
}

fn scene_with(id: u64, objects: Vec<SceneObject>) -> SceneInstance {
    SceneInstance { id, grid: 7, canvas: 224, objects, references: vec![toks("x")] }
}

fn obj(row: usize, col: usize, category: usize, color: usize) -> SceneObject {
    let cell = cell_box(row, col, 7, 224);
    SceneObject { row, col, category, color, bbox: cell }
}

fn column(a: &Tensor, i: usize) -> Vec<f64> {
    let k = a.dims()[1];
    (0..a.dims()[0]).map(|r| a.data()[r * k + i]).collect()
}

#[test]
fn empty_scene_is_empty_prototype_plus_jitter() {
    let inv = Inventory::default();
    let layout = RawLayout::new(&inv);
    let a = encode_scene(&scene_with(3, vec![]), &inv, &EncoderConfig { jitter_sigma: 0.0, jitter_seed: 0 });
    for i in 0..49 {
        let col = column(&a, i);
        assert_eq!(col[layout.empty_slot()], 1.0);
        assert_eq!(col[..layout.position_offset()].iter().sum::<f64>(), 1.0);
    }
    let noisy = encode_scene(&scene_with(3, vec![]), &inv, &EncoderConfig::default());
    for i in 0..49 {
        assert_eq!(nearest_content(&layout, &column(&noisy, i), i / 7, i % 7, 7), None);
    }
}

#[test]
fn changing_one_cell_changes_only_that_region() {
    let inv = Inventory::default();
    let cfg = EncoderConfig::default();
    let a = encode_scene(&scene_with(5, vec![obj(1, 1, 0, 0), obj(4, 2, 3, 1)]), &inv, &cfg);
    let b = encode_scene(&scene_with(5, vec![obj(1, 1, 0, 0), obj(4, 2, 5, 4)]), &inv, &cfg);
    for i in 0..49 {
        let same = column(&a, i) == column(&b, i);
        assert_eq!(same, i != 4 * 7 + 2, "region {i}");
    }
}

#[test]
fn nearest_prototype_recovers_every_cell() {
    let inv = Inventory::default();
    let layout = RawLayout::new(&inv);
    let corpus = generate_corpus(&small(300, 6), &inv).unwrap();
    let cfg = EncoderConfig::default();
    let (mut right, mut total) = (0, 0);
    for s in &corpus.scenes {
        let a = encode_scene(s, &inv, &cfg);
        for (i, content) in s.cells().into_iter().enumerate() {
            total += 1;
            if nearest_content(&layout, &column(&a, i), i / 7, i % 7, 7) == content {
                right += 1;
            }
        }
    }
    assert_eq!(right, total);
}

#[test]
fn swapping_cells_permutes_columns_and_keeps_pool() {
    let inv = Inventory::default();
    let cfg = EncoderConfig::default();
    let a = encode_scene(&scene_with(2, vec![obj(0, 3, 1, 2), obj(5, 5, 4, 0)]), &inv, &cfg);
    let b = encode_scene(&scene_with(2, vec![obj(0, 3, 4, 0), obj(5, 5, 1, 2)]), &inv, &cfg);
    let layout = RawLayout::new(&inv);
    let (i, j) = (3, 5 * 7 + 5);
    let content_part = |v: Vec<f64>| v[..layout.position_offset()].to_vec();
    assert_eq!(content_part(column(&a, i)), content_part(column(&b, j)));
    assert_eq!(content_part(column(&a, j)), content_part(column(&b, i)));
    let (ga, gb) = (mean_pool(&a).unwrap(), mean_pool(&b).unwrap());
    for (x, y) in ga.data()[..layout.position_offset()].iter().zip(&gb.data()[..layout.position_offset()]) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn mean_pool_is_sum_over_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::new(vec![5, 9], (0..45).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let g = mean_pool(&a).unwrap();
    for r in 0..5 {
        let s: f64 = (0..9).map(|c| a.at(r, c)).sum();
        assert!((g.data()[r] - s / 9.0).abs() < 1e-12);
    }
    let one = Tensor::new(vec![3, 1], vec![1.5, -2.0, 0.25]).unwrap();
    assert_eq!(mean_pool(&one).unwrap().data(), one.data());
}

#[test]
fn negative_projection_rows_are_rectified() {
    let mut params = EncoderParams::init(&mut ChaCha8Rng::seed_from_u64(1), 4, 3);
    params.w_a.data_mut()[..4].copy_from_slice(&[-1.0; 4]);
    let a = Tensor::new(vec![4, 2], vec![1.0, 2.0, 0.5, 0.1, 0.3, 0.0, 1.0, 1.0]).unwrap();
    let mut g = Graph::new();
    let p = params.bind(&mut g, false);
    let fg = pool_and_project(&mut g, &p, &a).unwrap();
    assert_eq!(&g.data(fg.v)[..2], &[0.0, 0.0]);
}

#[test]
fn projection_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = EncoderParams::init(&mut rng, 6, 4);
    let a = Tensor::new(vec![6, 3], (0..18).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let w = Tensor::new(vec![4], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let loss = |p: &EncoderParams| {
        let mut g = Graph::new();
        let bp = p.bind(&mut g, true);
        let fg = pool_and_project(&mut g, &bp, &a).unwrap();
        let t = g.tanh(fg.v);
        let s = g.sum(t);
        let wv = g.constant(w.clone());
        let gl = g.matmul(wv, fg.v_g).unwrap();
        let out = g.add(s, gl).unwrap();
        (g, bp, out)
    };
    let (mut g, bp, out) = loss(&params);
    g.backward(out).unwrap();
    for (idx, (name, value)) in bp.fields().into_iter().enumerate() {
        let analytic = g.grad_slice(*value).unwrap().to_vec();
        let point = params.fields()[idx].1.data().to_vec();
        let numeric = central_difference(
            |x| {
                let mut p = params.clone();
                p.fields_mut()[idx].1.data_mut().copy_from_slice(x);
                let (g, _, out) = loss(&p);
                g.item(out)
            },
            &point,
            1e-5,
        );
        let r = compare(&analytic, &numeric);
        assert!(r.passes(1e-6), "{name}: {r:?}");
    }
}

#[test]
fn features_are_bit_reproducible() {
    let inv = Inventory::default();
    let corpus = generate_corpus(&small(5, 1), &inv).unwrap();
    let params = EncoderParams::init(&mut ChaCha8Rng::seed_from_u64(7), 24, 8);
    let run = || {
        let a = encode_scene(&corpus.scenes[3], &inv, &EncoderConfig::default());
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let fg = pool_and_project(&mut g, &p, &a).unwrap();
        (g.data(fg.v).to_vec(), g.data(fg.v_g).to_vec())
    };
    assert_eq!(run(), run());
}
