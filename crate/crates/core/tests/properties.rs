use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sentinel_core::analysis::{localize, upsample_bilinear};
use sentinel_core::attention::{adaptive_attention, AttentionContext, AttentionParams};
use sentinel_core::dataset::{
    build_vocab, generate_corpus, parse_corpus, split, write_corpus, CorpusConfig, Inventory, UNK,
};
use sentinel_core::geometry::{iou, BBox};
use sentinel_core::metrics::bleu;
use sentinel_core::recurrent::{decoder_step, LstmParams};
use sentinel_core::tensor::{Graph, Tensor};

fn vector(len: std::ops::Range<usize>, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

fn bbox(canvas: usize) -> impl Strategy<Value = BBox> {
    (0..canvas, 0..canvas, 1..=canvas, 1..=canvas)
        .prop_map(move |(x, y, w, h)| BBox { x0: x.min(canvas - 1), y0: y.min(canvas - 1), x1: (x + w).min(canvas), y1: (y + h).min(canvas) })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(z in vector(1..30, 50.0), shift in -100.0..100.0f64) {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(z.clone()));
        let p = g.softmax(a).unwrap();
        let b = g.constant(Tensor::vector(z.iter().map(|x| x + shift).collect()));
        let q = g.softmax(b).unwrap();
        let sum: f64 = g.data(p).iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(g.data(p).iter().all(|&x| (0.0..=1.0).contains(&x)));
        for (x, y) in g.data(p).iter().zip(g.data(q)) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn sentinel_gate_and_vector_bounds(seed in 0u64..10_000, scale in 0.1..5.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = LstmParams::init(&mut rng, 6, 5);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let draw = |n: usize| Tensor::vector((0..n).map(|i| scale * ((seed as f64 + 1.3 * i as f64).sin())).collect());
        let x = g.constant(draw(6));
        let h = g.constant(draw(5));
        let m = g.constant(draw(5));
        let step = decoder_step(&mut g, &p, x, h, m, true).unwrap();
        let gate = g.data(step.gate.unwrap()).to_vec();
        let s = g.data(step.s.unwrap()).to_vec();
        let mem = g.data(step.m).to_vec();
        for i in 0..5 {
            prop_assert!(gate[i] > 0.0 && gate[i] < 1.0);
            prop_assert!(s[i].abs() <= mem[i].tanh().abs());
            prop_assert_eq!(s[i], gate[i] * mem[i].tanh());
        }
    }

    #[test]
    fn adaptive_attention_is_a_distribution_and_a_convex_mix(seed in 0u64..10_000, k in 1usize..8, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AttentionParams::init(&mut rng, k, d, d, 5);
        let mut g = Graph::new();
        let p = params.bind(&mut g, false);
        let fill = |n: usize, off: f64| (0..n).map(|i| ((i as f64 + off) * 0.77 + seed as f64).sin()).collect::<Vec<f64>>();
        let v = g.constant(Tensor::new(vec![d, k], fill(d * k, 0.0)).unwrap());
        let h = g.constant(Tensor::vector(fill(d, 3.0)));
        let s = g.constant(Tensor::vector(fill(d, 7.0)));
        let ctx = AttentionContext::new(&mut g, &p, v).unwrap();
        let t = adaptive_attention(&mut g, &p, &ctx, h, s).unwrap();
        let ah = g.data(t.alpha_hat).to_vec();
        let beta = g.item(t.beta);
        prop_assert_eq!(ah.len(), k + 1);
        prop_assert!((ah.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(beta > 0.0 && beta < 1.0);
        prop_assert_eq!(beta, ah[k]);
        let (sv, cv, ch) = (g.data(s).to_vec(), g.data(t.c).to_vec(), g.data(t.c_hat).to_vec());
        for i in 0..d {
            let (lo, hi) = (sv[i].min(cv[i]), sv[i].max(cv[i]));
            prop_assert!(ch[i] >= lo - 1e-15 && ch[i] <= hi + 1e-15);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(64), b in bbox(64)) {
        let x = iou(&a, &b);
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn localization_ignores_positive_scaling(raw in prop::collection::vec(0.0..1.0f64, 16), exp in -20i32..20, th in 0.1..0.9f64) {
        let c = 2f64.powi(exp);
        let map = upsample_bilinear(&raw, 4, 32).unwrap();
        let scaled = upsample_bilinear(&raw.iter().map(|x| x * c).collect::<Vec<_>>(), 4, 32).unwrap();
        prop_assert_eq!(localize(&map, 32, th), localize(&scaled, 32, th));
    }

    #[test]
    fn bleu_precisions_stay_in_unit_interval(
        cands in prop::collection::vec(prop::collection::vec(0u8..6, 1..8), 1..6),
        refs in prop::collection::vec(prop::collection::vec(0u8..6, 1..8), 1..6),
    ) {
        let n = cands.len().min(refs.len());
        let refs: Vec<Vec<Vec<u8>>> = refs[..n].iter().map(|r| vec![r.clone()]).collect();
        let rep = bleu(&cands[..n], &refs, 4).unwrap();
        prop_assert!(rep.precisions.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(rep.scores.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(rep.brevity_penalty > 0.0 && rep.brevity_penalty <= 1.0);
    }

    #[test]
    fn appending_an_exact_pair_never_lowers_bleu_1(
        cands in prop::collection::vec(prop::collection::vec(0u8..6, 1..8), 1..6),
        refs in prop::collection::vec(prop::collection::vec(0u8..6, 1..8), 1..6),
        extra in prop::collection::vec(0u8..6, 1..8),
    ) {
        let n = cands.len().min(refs.len());
        let mut c = cands[..n].to_vec();
        let mut r: Vec<Vec<Vec<u8>>> = refs[..n].iter().map(|x| vec![x.clone()]).collect();
        let before = bleu(&c, &r, 1).unwrap().bleu(1);
        c.push(extra.clone());
        r.push(vec![extra]);
        let after = bleu(&c, &r, 1).unwrap().bleu(1);
        prop_assert!(after >= before - 1e-15);
    }

    #[test]
    fn splits_partition_the_corpus(seed in 0u64..1000, n in 0usize..60, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let inv = Inventory::default();
        let corpus = generate_corpus(&CorpusConfig { n_scenes: n, seed, ..CorpusConfig::default() }, &inv).unwrap();
        let (f0, f1) = (a, (1.0 - a) * b);
        let s = split(corpus.scenes.clone(), [f0, f1, 1.0 - f0 - f1], seed).unwrap();
        let mut ids: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).map(|x| x.id).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n as u64).collect::<Vec<_>>());
    }

    #[test]
    fn corpus_files_round_trip_and_encode_within_vocabulary(seed in 0u64..1000, min_count in 1usize..6) {
        let inv = Inventory::default();
        let corpus = generate_corpus(&CorpusConfig { n_scenes: 12, seed, ..CorpusConfig::default() }, &inv).unwrap();
        let mut bytes = Vec::new();
        write_corpus(&mut bytes, corpus.grid, corpus.canvas, &inv, &corpus.scenes).unwrap();
        let back = parse_corpus(std::str::from_utf8(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&back, &corpus);

        let vocab = build_vocab(corpus.scenes[..6].iter().flat_map(|s| s.references.iter().map(Vec::as_slice)), min_count).unwrap();
        for r in corpus.scenes.iter().flat_map(|s| &s.references) {
            for (tok, id) in r.iter().zip(&vocab.encode(r, 50)[1..]) {
                let ok = if vocab.contains(tok) { vocab.token(*id) == tok } else { *id == UNK };
                prop_assert!(ok, "{tok} encoded as {id}");
            }
        }
    }
}
