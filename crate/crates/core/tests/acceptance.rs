//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Pass criterion numbers as arguments to run a subset.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::Rng;

use audiosheet::grid::Grid;
use audiosheet::harness::{
    replay, run_pieceid, run_pretraining, run_table1, ExperimentConfig, Report, TAG_BASELINE, TAG_PRETRAINED,
};
use audiosheet::losses::{nt_xent_loss, nt_xent_loss_grad, pairwise_ranking_loss, pairwise_ranking_loss_grad, Reduction};
use audiosheet::model::{
    audio_batch, init_params, load_checkpoint, save_checkpoint, sheet_batch, ArchConfig, Embedding, Encoder, HeadKind,
    MaskMode, ModelParams, Network, Variant,
};
use audiosheet::nn::gradcheck::{check_gradients, jitter, TensorCheck};
use audiosheet::nn::ParamStore;
use audiosheet::pieceid::{dtw_cost, dtw_full, EmbeddingSequence, Method};
use audiosheet::retrieval::{
    build_index, cosine_distance, evaluate, load_store, paired_ranks, save_store, Direction, EntryMeta,
};
use audiosheet::rng;
use audiosheet::synthdata::{
    extract_snippet_pairs, generate_dataset, Context, DatasetConfig, Provenance, LONG_FRAMES, SHEET_HEIGHT, SHEET_WIDTH,
};
use audiosheet::training::{encode_pairs, train_on_split, TrainConfig};
use audiosheet::model::Modality;

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fmt3(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn rand_unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn nt_xent_oracle(views: &[Vec<f64>], pairing: &[usize], tau: f64) -> f64 {
    let unit: Vec<Vec<f64>> = views
        .iter()
        .map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        })
        .collect();
    let sim = |i: usize, j: usize| unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum::<f64>();
    let m = views.len();
    let mut total = 0.0;
    for i in 0..m {
        let num = (sim(i, pairing[i]) / tau).exp();
        let den: f64 = (0..m).filter(|&k| k != i).map(|k| (sim(i, k) / tau).exp()).sum();
        total += -(num / den).ln();
    }
    total / m as f64
}

fn random_pairing(r: &mut impl Rng, m: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(r);
    let mut p = vec![0; m];
    for pair in idx.chunks(2) {
        p[pair[0]] = pair[1];
        p[pair[1]] = pair[0];
    }
    p
}

fn to_array(rows: &[Vec<f64>]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

fn c1_nt_xent() -> Check {
    let mut r = rng::rng(101);
    let mut worst = 0.0f64;
    for b in 0..100 {
        let n = r.gen_range(1..=32);
        let d = r.gen_range(2..=16);
        let tau = [0.1, 0.5, 1.0][b % 3];
        let views: Vec<Vec<f64>> = (0..2 * n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let pairing = random_pairing(&mut r, 2 * n);
        let got = nt_xent_loss(&to_array(&views), &pairing, tau, Reduction::Mean).map_err(|e| e.to_string())?.value;
        let want = nt_xent_oracle(&views, &pairing, tau);
        worst = worst.max((got - want).abs());
    }
    ensure(worst <= 1e-6, || format!("max abs deviation {worst:e}"))?;
    let two = to_array(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]);
    let zero = nt_xent_loss(&two, &[1, 0], 0.5, Reduction::Mean).map_err(|e| e.to_string())?.value;
    ensure(zero.abs() < 1e-12, || format!("no negatives gave {zero}"))?;
    let mut hot = 0.0f64;
    for n in [2usize, 8, 32] {
        let views: Vec<Vec<f64>> = (0..2 * n).map(|_| rand_unit(&mut r, 8)).collect();
        let v = nt_xent_loss(&to_array(&views), &random_pairing(&mut r, 2 * n), 1e6, Reduction::Mean)
            .map_err(|e| e.to_string())?
            .value;
        hot = hot.max((v - ((2 * n - 1) as f64).ln()).abs());
    }
    ensure(hot <= 1e-3, || format!("tau = 1e6 deviates from log(2N-1) by {hot:e}"))?;
    Ok(format!("max deviation {worst:.1e}, high-temperature deviation {hot:.1e}"))
}

/// Minimum (cost, length) over every monotone path, enumerated recursively.
fn dtw_paths(a: &[Embedding], b: &[Embedding], i: usize, j: usize, acc: f64, len: usize, out: &mut Vec<(f64, usize)>) {
    let acc = acc + cosine_distance(a[i].as_slice(), b[j].as_slice());
    let len = len + 1;
    if i + 1 == a.len() && j + 1 == b.len() {
        out.push((acc, len));
        return;
    }
    if i + 1 < a.len() {
        dtw_paths(a, b, i + 1, j, acc, len, out);
    }
    if j + 1 < b.len() {
        dtw_paths(a, b, i, j + 1, acc, len, out);
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        dtw_paths(a, b, i + 1, j + 1, acc, len, out);
    }
}

fn c2_dtw() -> Check {
    let mut r = rng::rng(202);
    let seq = |r: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<Embedding> {
        (0..n).map(|_| Embedding::from_f64(&rand_unit(r, 32)).unwrap()).collect()
    };
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (la, lb) = (r.gen_range(1..=6), r.gen_range(1..=6));
        let (a, b) = (seq(&mut r, la), seq(&mut r, lb));
        let mut paths = Vec::new();
        dtw_paths(&a, &b, 0, 0, 0.0, 0, &mut paths);
        let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let shortest = paths.iter().filter(|p| p.0 <= best + 1e-12).map(|p| p.1).min().unwrap();
        let got = dtw_full(&a, &b).map_err(|e| e.to_string())?;
        let sa = EmbeddingSequence::from_embeddings("a", a.clone()).map_err(|e| e.to_string())?;
        let sb = EmbeddingSequence::from_embeddings("b", b.clone()).map_err(|e| e.to_string())?;
        let raw = dtw_cost(&sa, &sb, false).map_err(|e| e.to_string())?;
        let norm = dtw_cost(&sa, &sb, true).map_err(|e| e.to_string())?;
        ensure(got.path_len == shortest, || format!("path length {} vs {shortest}", got.path_len))?;
        worst = worst.max((raw - best).abs()).max((norm - best / shortest as f64).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation {worst:e}"))?;
    for _ in 0..50 {
        let n = r.gen_range(1..=12);
        let s = EmbeddingSequence::from_embeddings("s", seq(&mut r, n)).map_err(|e| e.to_string())?;
        for normalize in [false, true] {
            let v = dtw_cost(&s, &s, normalize).map_err(|e| e.to_string())?;
            ensure(v == 0.0, || format!("dtw(a, a) = {v}"))?;
        }
    }
    Ok(format!("max deviation {worst:.1e}; self-cost exactly 0"))
}

fn c3_query() -> Check {
    let mut r = rng::rng(303);
    let mut checked = 0;
    for direction in Direction::BOTH {
        let cand_mod = match direction {
            Direction::AudioToSheet => Modality::Sheet,
            Direction::SheetToAudio => Modality::Audio,
        };
        let mut rows: Vec<Embedding> = (0..1800).map(|_| Embedding::from_f64(&rand_unit(&mut r, 32)).unwrap()).collect();
        // Exact duplicates force ties that must resolve by insertion order.
        for _ in 0..200 {
            let k = r.gen_range(0..rows.len());
            rows.push(rows[k].clone());
        }
        let index = build_index(rows.iter().enumerate().map(|(i, e)| {
            (e.clone(), EntryMeta { piece_id: format!("p{}", i % 50), offset: i, modality: cand_mod })
        }))
        .map_err(|e| e.to_string())?;
        for qi in 0..1000 {
            let q = if qi % 4 == 0 {
                rows[r.gen_range(0..rows.len())].clone()
            } else {
                Embedding::from_f64(&rand_unit(&mut r, 32)).unwrap()
            };
            let mut scan: Vec<(f64, usize)> =
                (0..index.len()).map(|i| (cosine_distance(index.row(i), q.as_slice()), i)).collect();
            scan.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let k = if qi % 10 == 0 { index.len() } else { 25 };
            let got = index.query(&q, k).map_err(|e| e.to_string())?;
            let want: Vec<usize> = scan.iter().take(k).map(|p| p.1).collect();
            ensure(got.ids() == want, || format!("{direction} query {qi}: ranking differs from linear scan"))?;
            let target = r.gen_range(0..index.len());
            let rank = 1 + scan.iter().position(|p| p.1 == target).unwrap();
            let got_rank = index.rank_of_target(&q, target).map_err(|e| e.to_string())?;
            ensure(got_rank == rank, || format!("{direction} query {qi}: rank {got_rank} vs {rank}"))?;
            let plain = 1.0 - q.as_slice().iter().zip(index.row(0)).map(|(a, b)| *a as f64 * *b as f64).sum::<f64>();
            ensure((plain.max(0.0) - cosine_distance(index.row(0), q.as_slice())).abs() < 1e-6, || {
                "distance disagrees with 1 - dot".into()
            })?;
            checked += 1;
        }
    }
    Ok(format!("{checked} queries over 2000 candidates agree, ties included"))
}

fn c4_metrics() -> Check {
    let mut r = rng::rng(404);
    for t in 0..1000 {
        let n: usize = r.gen_range(1..=200);
        let max_rank = r.gen_range(1..=60);
        let ranks: Vec<usize> = (0..n).map(|_| r.gen_range(1..=max_rank)).collect();
        let m = evaluate(&ranks).map_err(|e| e.to_string())?;
        let within = |k: usize| ranks.iter().filter(|&&x| x <= k).count() as f64 / n as f64;
        let mrr = ranks.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / n as f64;
        let half = n.div_ceil(2);
        let mr = (1..=max_rank).find(|&v| ranks.iter().filter(|&&x| x <= v).count() >= half).unwrap();
        let ok = (m.r1 - within(1)).abs() < 1e-12
            && (m.r5 - within(5)).abs() < 1e-12
            && (m.r25 - within(25)).abs() < 1e-12
            && (m.mrr - mrr).abs() < 1e-12
            && m.mr == mr;
        ensure(ok, || format!("multiset {t} disagrees: {m:?}"))?;
    }
    let hand = evaluate(&[1, 2, 4]).map_err(|e| e.to_string())?;
    ensure((hand.mrr - 0.58333).abs() < 1e-5 && hand.mr == 2 && hand.r5 == 1.0, || format!("[1,2,4] gave {hand:?}"))?;
    Ok(format!("1000 multisets agree; [1,2,4] -> MRR {:.5}, MR {}, R@5 {}", hand.mrr, hand.mr, hand.r5))
}

fn rand_grid(seed: u64, rows: usize, cols: usize) -> Grid {
    let mut r = rng::rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.gen_range(0.0..1.0))
}

fn probe(n: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::rng(seed);
    Array2::from_shape_simple_fn((n, 32), || r.gen_range(-1.0..1.0))
}

fn worst(checks: &[TensorCheck]) -> std::result::Result<f64, String> {
    let mut w = 0.0f64;
    for c in checks {
        ensure(c.max_rel_err < 1e-4, || format!("{}: relative error {:e} at {:?}", c.name, c.max_rel_err, c.worst))?;
        w = w.max(c.max_rel_err);
    }
    Ok(w)
}

fn small(arch: ArchConfig) -> ArchConfig {
    ArchConfig { base_channels: 2, hidden: 8, attention_channels: 2, attention_hidden: 3, ..arch }
}

fn c5_gradients() -> Check {
    const PER_TENSOR: usize = 10;
    const EPS: f64 = 1e-5;
    let mut tensors = 0;
    let mut max_err = 0.0f64;
    for head in [HeadKind::Pooled, HeadKind::Dense] {
        let arch = small(ArchConfig { head, ..ArchConfig::default() });
        let net = Network::new(&arch).map_err(|e| e.to_string())?;
        let mut ps = net.init(4).cast::<f64>();
        jitter(&mut ps, 0.2, 5);
        let grids: Vec<Grid> = (0..2).map(|i| rand_grid(i, SHEET_HEIGHT, SHEET_WIDTH)).collect();
        let refs: Vec<&Grid> = grids.iter().collect();
        let x: Array4<f64> = sheet_batch(&refs, net.sheet.input_hw, arch.sheet_downsample).map_err(|e| e.to_string())?;
        let v = probe(2, 1);
        let loss = |ps: &ParamStore<f64>| (&net.sheet_forward(ps, &x).unwrap().0 * &v).sum();
        let grad = |ps: &ParamStore<f64>| {
            let (_, tape) = net.sheet_forward(ps, &x).unwrap();
            let mut g = ps.zeros_like();
            net.sheet_backward(ps, &tape, &v, &mut g);
            g
        };
        let checks: Vec<_> = check_gradients(&ps, loss, grad, PER_TENSOR, EPS, 7)
            .into_iter()
            .filter(|c| c.name.starts_with("sheet"))
            .collect();
        tensors += checks.len();
        max_err = max_err.max(worst(&checks)?);
    }
    let arch = small(ArchConfig::for_variant(Variant::new(HeadKind::Dense, Context::Long, true)));
    let net = Network::new(&arch).map_err(|e| e.to_string())?;
    let mut ps = net.init(4).cast::<f64>();
    jitter(&mut ps, 0.2, 3);
    let grids: Vec<Grid> = (0..2).map(|i| rand_grid(10 + i, 64, LONG_FRAMES)).collect();
    let refs: Vec<&Grid> = grids.iter().collect();
    let x: Array4<f64> = audio_batch(&refs, net.audio.input_hw).map_err(|e| e.to_string())?;
    let v = probe(2, 2);
    let loss = |ps: &ParamStore<f64>| (&net.audio_forward(ps, &x, MaskMode::Learned).unwrap().0 * &v).sum();
    let grad = |ps: &ParamStore<f64>| {
        let (_, tape) = net.audio_forward(ps, &x, MaskMode::Learned).unwrap();
        let mut g = ps.zeros_like();
        net.audio_backward(ps, &tape, &v, &mut g);
        g
    };
    let checks: Vec<_> = check_gradients(&ps, loss, grad, PER_TENSOR, EPS, 8)
        .into_iter()
        .filter(|c| !c.name.starts_with("sheet"))
        .collect();
    ensure(checks.iter().any(|c| c.name.starts_with("attention")), || "no attention tensors checked".into())?;
    tensors += checks.len();
    max_err = max_err.max(worst(&checks)?);

    // Loss inputs are wrapped as one-tensor stores so the same checker applies.
    let mut r = rng::rng(505);
    let mut wrap = |rows: usize| {
        let mut s = ParamStore::<f64>::new();
        s.push("x", Array2::from_shape_simple_fn((rows, 32), || r.gen_range(-1.0..1.0)));
        s
    };
    let (a, p) = (wrap(6), wrap(6));
    let fixed = p.get(p.ids().next().unwrap()).clone();
    let first = |s: &ParamStore<f64>| s.get(s.ids().next().unwrap()).clone();
    let rank_loss = |s: &ParamStore<f64>| pairwise_ranking_loss(&first(s), &fixed, 0.7).unwrap().value;
    let rank_grad = |s: &ParamStore<f64>| {
        let (_, ga, _) = pairwise_ranking_loss_grad(&first(s), &fixed, 0.7).unwrap();
        let mut g = s.zeros_like();
        g.get_mut(g.ids().next().unwrap()).assign(&ga);
        g
    };
    let rc = check_gradients(&a, rank_loss, rank_grad, PER_TENSOR, EPS, 9);
    max_err = max_err.max(worst(&rc)?);
    let views = wrap(8);
    let pairing = audiosheet::losses::paired_views(4);
    let nt_loss = |s: &ParamStore<f64>| nt_xent_loss(&first(s), &pairing, 0.5, Reduction::Mean).unwrap().value;
    let nt_grad = |s: &ParamStore<f64>| {
        let (_, gv) = nt_xent_loss_grad(&first(s), &pairing, 0.5, Reduction::Mean).unwrap();
        let mut g = s.zeros_like();
        g.get_mut(g.ids().next().unwrap()).assign(&gv);
        g
    };
    let nc = check_gradients(&views, nt_loss, nt_grad, PER_TENSOR, EPS, 10);
    max_err = max_err.max(worst(&nc)?);
    Ok(format!("{} tensors, max relative error {max_err:.1e}", tensors + 2))
}

fn c6_attention_mask() -> Check {
    let arch = ArchConfig::for_variant(Variant::new(HeadKind::Dense, Context::Long, true));
    let mut params = init_params(&arch, 6).map_err(|e| e.to_string())?;
    let mut st = params.store.cast::<f64>();
    jitter(&mut st, 0.3, 6);
    params.store = st.cast::<f32>();
    let enc = Encoder::new(&params).map_err(|e| e.to_string())?;
    let mut r = rng::rng(606);
    let excerpts: Vec<Grid> = (0..1000)
        .map(|_| {
            let level = r.gen_range(0.01..10.0);
            Array2::from_shape_simple_fn((64, LONG_FRAMES), || if r.gen_bool(0.2) { r.gen_range(0.0..level) } else { 0.0 })
        })
        .collect();
    let refs: Vec<&Grid> = excerpts.iter().collect();
    let masks = enc.masks(&refs).map_err(|e| e.to_string())?;
    let mut dev = 0.0f64;
    let mut peak = 0.0f32;
    for m in &masks {
        ensure(m.len() == LONG_FRAMES, || format!("mask length {}", m.len()))?;
        ensure(m.0.iter().all(|&v| v >= 0.0), || "negative mask entry".into())?;
        dev = dev.max((m.sum() - 1.0).abs());
        peak = peak.max(m.0.iter().cloned().fold(0.0, f32::max));
    }
    ensure(dev <= 1e-5, || format!("mask sum deviates by {dev:e}"))?;
    Ok(format!("1000 masks of length {LONG_FRAMES}, max |sum - 1| {dev:.1e}, peak weight {peak:.3}"))
}

fn c7_overfit() -> Check {
    let data = DatasetConfig { n_pieces: 4, notes_per_piece: 8, ..DatasetConfig::default() };
    let pieces = generate_dataset(&data, 7).map_err(|e| e.to_string())?;
    let pairs: Vec<_> = pieces.iter().flat_map(|ap| extract_snippet_pairs(ap, Context::Short)).collect();
    ensure(pairs.len() == 32, || format!("{} pairs", pairs.len()))?;
    let refs: Vec<_> = pairs.iter().collect();
    let arch = ArchConfig::for_variant("bl2-short".parse::<Variant>().map_err(|e| e.to_string())?);
    let params = init_params(&arch, 7).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 200, batch_size: 32, val_fraction: 0.0, early_stop_patience: 0, seed: 7, ..TrainConfig::default() };
    let (params, hist) = train_on_split(params, &refs, &[], &cfg).map_err(|e| e.to_string())?;
    let (sheet, audio) = encode_pairs(&params, &refs).map_err(|e| e.to_string())?;
    let ranks = paired_ranks(&sheet, &audio, Direction::AudioToSheet).map_err(|e| e.to_string())?;
    let m = evaluate(&ranks).map_err(|e| e.to_string())?;
    let last = hist.losses().last().copied().unwrap_or(f64::NAN);
    ensure(m.r1 == 1.0, || format!("train R@1 {:.3}, final loss {last:.4}", m.r1))?;
    Ok(format!("train R@1 1.0 after 200 epochs, final loss {last:.4}"))
}

const SEEDS: [u64; 3] = [1, 2, 3];

fn study_config(seed: u64, out: &Path) -> ExperimentConfig {
    ExperimentConfig { seed, out: out.to_path_buf(), ..ExperimentConfig::default() }
}

fn c8_table1() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tags = ["bl1-short", "bl2-short", "bl2-long-at"];
    let mut mrr = vec![Vec::new(); tags.len()];
    for seed in SEEDS {
        let mut cfg = study_config(seed, dir.path());
        ensure(cfg.pool_size >= 1000, || "pool smaller than 1000".into())?;
        cfg.table1.variants = tags.iter().map(|t| t.parse().unwrap()).collect();
        let report = run_table1(&cfg, 1).map_err(|e| e.to_string())?;
        for (k, tag) in tags.iter().enumerate() {
            let row = report.row(tag, Provenance::Clean, Direction::AudioToSheet).ok_or("missing row")?;
            mrr[k].push(row.mrr);
        }
    }
    let [bl1, short, long_at] = [0, 1, 2].map(|k| median(mrr[k].clone()));
    let detail = format!(
        "median MRR bl1-short {bl1:.3}, bl2-short {short:.3}, bl2-long-at {long_at:.3} (per seed [{}] / [{}] / [{}])",
        fmt3(&mrr[0]),
        fmt3(&mrr[1]),
        fmt3(&mrr[2])
    );
    ensure(long_at >= short + 0.03 && short >= bl1, || detail.clone())?;
    Ok(detail)
}

fn c9_pretraining() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let tiers = [Provenance::Partial, Provenance::Noisy];
    let mut base = vec![Vec::new(); 2];
    let mut pre = vec![Vec::new(); 2];
    for seed in SEEDS {
        let report = run_pretraining(&study_config(seed, dir.path()), 1).map_err(|e| e.to_string())?;
        for (k, &tier) in tiers.iter().enumerate() {
            let get = |tag| report.row(tag, tier, Direction::AudioToSheet).map(|r| r.mrr).ok_or("missing row");
            base[k].push(get(TAG_BASELINE)?);
            pre[k].push(get(TAG_PRETRAINED)?);
        }
    }
    let med: Vec<(f64, f64)> = (0..2).map(|k| (median(base[k].clone()), median(pre[k].clone()))).collect();
    let detail = format!(
        "median MRR tier II bl {:.3} vs bl+a+s {:.3}; tier III bl {:.3} vs bl+a+s {:.3} (per seed II [{}] / [{}], III [{}] / [{}])",
        med[0].0,
        med[0].1,
        med[1].0,
        med[1].1,
        fmt3(&base[0]),
        fmt3(&pre[0]),
        fmt3(&base[1]),
        fmt3(&pre[1])
    );
    ensure(med.iter().all(|(b, p)| p >= b), || detail.clone())?;
    Ok(detail)
}

fn c10_pieceid() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (mut vote, mut dtw) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let cfg = study_config(seed, dir.path());
        ensure(cfg.data.test_pieces >= 20, || "fewer than 20 pieces".into())?;
        let out = run_pieceid(&cfg, 1).map_err(|e| e.to_string())?;
        for (method, m) in &out.self_query_mrr {
            ensure(*m == 1.0, || format!("seed {seed}: uncorrupted {method:?} queries give MRR {m}"))?;
        }
        ensure(out.self_query_mrr.iter().any(|(m, _)| *m == Method::Dtw), || "no self-query check".into())?;
        let get = |tag| out.report.rows.iter().find(|r| r.tag == tag).map(|r| r.mrr).ok_or("missing row");
        vote.push(get("vote")?);
        dtw.push(get("dtw")?);
    }
    let (v, d) = (median(vote.clone()), median(dtw.clone()));
    let detail = format!("median MRR vote {v:.3}, dtw {d:.3} (per seed [{}] / [{}]); self-queries 1.0", fmt3(&vote), fmt3(&dtw));
    ensure(d >= v, || detail.clone())?;
    Ok(detail)
}

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 11, out: out.to_path_buf(), pool_size: 30, ..ExperimentConfig::default() };
    cfg.data.train_pieces = 6;
    cfg.data.test_pieces = 3;
    cfg.data.notes_per_piece = 10;
    cfg.model.base_channels = 4;
    cfg.model.hidden = 16;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.pretraining.unlabeled_pieces = 2;
    cfg.pretraining.train.epochs = 1;
    cfg.pretraining.train.batch_size = 8;
    cfg
}

fn bits_equal(a: &ModelParams, b: &ModelParams) -> bool {
    a.arch == b.arch
        && a.seed == b.seed
        && a.store.iter().zip(b.store.iter()).all(|((na, ta), (nb, tb))| {
            na == nb && ta.iter().map(|v| v.to_bits()).eq(tb.iter().map(|v| v.to_bits()))
        })
}

fn c11_persistence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut r = rng::rng(1111);
    let index = build_index((0..500).map(|i| {
        let e = Embedding::from_f64(&rand_unit(&mut r, 32)).unwrap();
        (e, EntryMeta { piece_id: format!("piece_{:04}", i / 25), offset: i % 25, modality: Modality::Sheet })
    }))
    .map_err(|e| e.to_string())?;
    let store = dir.path().join("index.bin");
    save_store(&store, &index).map_err(|e| e.to_string())?;
    let back = load_store(&store).map_err(|e| e.to_string())?;
    let same = back.metas() == index.metas()
        && back.raw_data().iter().map(|v| v.to_bits()).eq(index.raw_data().iter().map(|v| v.to_bits()));
    ensure(same, || "store round trip changed data".into())?;

    let arch = ArchConfig::for_variant("bl2-long-at".parse::<Variant>().map_err(|e| e.to_string())?);
    let mut params = init_params(&arch, 12).map_err(|e| e.to_string())?;
    let mut st = params.store.cast::<f64>();
    jitter(&mut st, 0.1, 1);
    params.store = st.cast::<f32>();
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&ckpt, &params).map_err(|e| e.to_string())?;
    ensure(bits_equal(&params, &load_checkpoint(&ckpt).map_err(|e| e.to_string())?), || {
        "checkpoint round trip changed weights".into()
    })?;

    let cfg = tiny(&dir.path().join("runs"));
    let reports: Vec<Report> = vec![
        run_table1(&cfg, 1).map_err(|e| e.to_string())?,
        run_pretraining(&cfg, 1).map_err(|e| e.to_string())?,
        run_pieceid(&cfg, 1).map_err(|e| e.to_string())?.report,
    ];
    for report in &reports {
        let saved = dir.path().join(report.study.to_string());
        report.save(&saved).map_err(|e| e.to_string())?;
        for ext in ["csv", "json"] {
            let loaded = Report::load(saved.join(format!("{}.{ext}", report.study))).map_err(|e| e.to_string())?;
            ensure(&loaded == report, || format!("{} {ext} round trip differs", report.study))?;
            // Replay from a fresh output directory so nothing is reused.
            let mut fresh = loaded.clone();
            fresh.config.out = dir.path().join(format!("replay-{}-{ext}", report.study));
            replay(&fresh, 1).map_err(|e| e.to_string())?;
        }
    }
    Ok("store and checkpoint bit-exact; table1, pretraining and pieceid replay exactly".into())
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let criteria = [
        Criterion { id: 1, name: "NT-Xent oracle", budget: Duration::from_secs(10), run: c1_nt_xent },
        Criterion { id: 2, name: "DTW oracle", budget: Duration::from_secs(30), run: c2_dtw },
        Criterion { id: 3, name: "exact nearest neighbours", budget: Duration::from_secs(30), run: c3_query },
        Criterion { id: 4, name: "metric oracle", budget: Duration::from_secs(10), run: c4_metrics },
        Criterion { id: 5, name: "gradient checks", budget: min(5), run: c5_gradients },
        Criterion { id: 6, name: "attention mask contract", budget: min(1), run: c6_attention_mask },
        Criterion { id: 7, name: "overfit 32 pairs", budget: min(5), run: c7_overfit },
        Criterion { id: 8, name: "table-1 trend", budget: min(30), run: c8_table1 },
        Criterion { id: 9, name: "pretraining trend", budget: min(45), run: c9_pretraining },
        Criterion { id: 10, name: "piece identification", budget: min(30), run: c10_pieceid },
        Criterion { id: 11, name: "persistence and replay", budget: min(10), run: c11_persistence },
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t0 = Instant::now();
        let outcome = (c.run)();
        let elapsed = t0.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget ({:.0?} > {:.0?})", elapsed, c.budget)),
            Err(e) => (false, e),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<26} {}  [{:.1} s] {detail}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
