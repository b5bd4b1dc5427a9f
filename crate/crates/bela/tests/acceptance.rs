//! Acceptance gate: ten end-to-end criteria with pinned tolerances. Each test
//! prints a single `acceptance NN <name>: PASS` line (or panics with a FAIL
//! line) so the whole gate is auditable from the test log.

use std::collections::HashSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bela::data::{tokenize, GoldMention, RawPassage};
use bela::ed::ed_score;
use bela::encoder::{context_means, EncoderConfig};
use bela::error::BelaError;
use bela::eval::{count_passage, ed_accuracy, evaluate};
use bela::index::{build_approximate, build_exact, BuildParams, EntityIndex};
use bela::md::{boundary_scores, detect_mentions, enumerate_valid_spans, span_probability, MdParams};
use bela::model::{ModelParams, Stage};
use bela::num::{dot, l2_norm, matvec, mean_rows};
use bela::pipeline::{
    candidates_for_passage, link_corpus, link_passage, split_windows, sweep_gamma, LinkerConfig,
    PredMention,
};
use bela::rejection::{build_features, rejection_score, RParams};
use bela::train::grad::{ed_forward_backward, md_forward_backward, r_forward_backward, EdSample, ModelGrads};
use bela::train::gradcheck::gradient_check;
use bela::train::losses::{ed_loss, md_loss, r_loss};
use bela::train::synth::{generate_synthetic_corpus, split_corpus};
use bela::train::{train, TrainConfig};

/// Pinned tolerances.
const FORMULA_REL_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const HNSW_RECALL_AT_1: f64 = 0.95;
const HNSW_RECALL_AT_10: f64 = 0.9;
const E2E_ED_ACCURACY: f64 = 0.90;
const E2E_MD_RECALL: f64 = 0.85;
const E2E_F1: f64 = 0.70;

fn verdict(n: u32, name: &str, ok: bool, details: &str) {
    if ok {
        println!("acceptance {n:02} {name}: PASS ({details})");
    } else {
        panic!("acceptance {n:02} {name}: FAIL ({details})");
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, b.abs())
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
}

fn rand_text(rng: &mut ChaCha8Rng, words: usize) -> String {
    let mut out = Vec::with_capacity(words);
    for _ in 0..words {
        let len = rng.gen_range(2..=7);
        let w: String = (0..len).map(|_| (b'a' + rng.gen_range(0..26)) as char).collect();
        out.push(w);
    }
    out.join(" ")
}

#[test]
fn c01_formula_fidelity() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;

    // span probability against a direct recomputation from raw scores
    let d = 8;
    for _ in 0..1000 {
        let n = rng.gen_range(3..10usize);
        let reps = rand_vec(&mut rng, n * d, 1.0);
        let md = MdParams::<f64> {
            w_start: rand_vec(&mut rng, d, 1.0),
            w_end: rand_vec(&mut rng, d, 1.0),
            w_inside: rand_vec(&mut rng, d, 1.0),
        };
        let scores = boundary_scores(&reps, d, &md).unwrap();
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(i..n);
        let mut z = scores.start[i] + scores.end[j];
        for t in i + 1..j {
            z += scores.inside[t];
        }
        let p = 1.0 / (1.0 + (-z).exp());
        let s = span_probability(&scores, i, j).unwrap();
        worst = worst.max(rel_err(s.logit, z)).max(rel_err(s.prob, p));
    }

    // ed score against a scalar loop
    for _ in 0..1000 {
        let dd = rng.gen_range(2..32usize);
        let m = rand_vec(&mut rng, dd, 2.0);
        let e = rand_vec(&mut rng, dd, 2.0);
        let direct: f64 = m.iter().zip(&e).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(ed_score(&m, &e).unwrap(), direct));
    }

    // rejection score against an index-by-index re-evaluation
    let params = RParams::<f64>::seeded_init(4, 16, 7);
    for _ in 0..1000 {
        let m = rand_vec(&mut rng, 4, 2.0);
        let e = rand_vec(&mut rng, 4, 2.0);
        let f = build_features(rng.gen(), rng.gen::<f64>() - 0.5, &m, &e).unwrap();
        let mut pre = params.b2;
        for r in 0..params.hidden {
            let mut z = params.b1[r];
            for c in 0..params.in_dim {
                z += params.w1[r * params.in_dim + c] * f[c];
            }
            pre += params.w2[r] * z.max(0.0);
        }
        let direct = 1.0 / (1.0 + (-pre).exp());
        worst = worst.max(rel_err(rejection_score(&f, &params), direct));
    }

    // the three losses against direct clamped-BCE / log-sum-exp recomputation
    let direct_bce = |p: f64, y: bool| {
        let pc = p.clamp(1e-7, 1.0 - 1e-7);
        if y { -pc.ln() } else { -(1.0 - pc).ln() }
    };
    for _ in 0..1000 {
        let n = rng.gen_range(1..20usize);
        let probs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let direct: f64 =
            probs.iter().zip(&labels).map(|(&p, &y)| direct_bce(p, y)).sum::<f64>() / n as f64;
        worst = worst.max(rel_err(md_loss(&probs, &labels), direct));
        worst = worst.max(rel_err(r_loss(&probs, &labels), direct));

        let pos = rng.gen::<f64>() * 10.0 - 5.0;
        let num_negs = rng.gen_range(1..8);
        let negs = rand_vec(&mut rng, num_negs, 5.0);
        let denom: f64 = negs.iter().map(|s| s.exp()).sum::<f64>() + pos.exp();
        let direct = -(pos.exp() / denom).ln();
        worst = worst.max(rel_err(ed_loss(pos, &negs), direct));
    }

    let elapsed = t0.elapsed();
    verdict(
        1,
        "formula fidelity",
        worst <= FORMULA_REL_TOL && elapsed.as_secs() < 10,
        &format!("max rel err {worst:.3e} <= {FORMULA_REL_TOL:.0e}, {elapsed:.2?} < 10s"),
    );
}

#[test]
fn c02_gradient_checks() {
    let t0 = Instant::now();
    let d = 8;
    let cfg = EncoderConfig { dim: d, ..Default::default() };
    let mut worst: f64 = 0.0;

    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let model = ModelParams::seeded_init(cfg, 300 + seed).unwrap();
        let passage = tokenize(&rand_text(&mut rng, 8));
        let ctx = context_means(&passage.tokens, &cfg);
        let valid = enumerate_valid_spans(&passage, 256);
        let gold: HashSet<(usize, usize)> =
            [valid[rng.gen_range(0..valid.len())]].into_iter().collect();

        // MD: loss over the passage's valid spans
        let mut grads = ModelGrads::zeros(d, model.r.hidden);
        md_forward_backward(&ctx, &valid, &gold, &model, 1.0, &mut grads).unwrap();
        let mut params = Vec::new();
        params.extend(&model.md.w_start);
        params.extend(&model.md.w_end);
        params.extend(&model.md.w_inside);
        params.extend(&model.enc_mention.w_mix);
        let mut analytic = Vec::new();
        analytic.extend(&grads.md_start);
        analytic.extend(&grads.md_end);
        analytic.extend(&grads.md_inside);
        analytic.extend(&grads.w_mix_m);
        let base = model.clone();
        let (ctx2, valid2, gold2) = (ctx.clone(), valid.clone(), gold.clone());
        let mut f = |p: &[f64]| {
            let mut m = base.clone();
            m.md.w_start.copy_from_slice(&p[..d]);
            m.md.w_end.copy_from_slice(&p[d..2 * d]);
            m.md.w_inside.copy_from_slice(&p[2 * d..3 * d]);
            m.enc_mention.w_mix.copy_from_slice(&p[3 * d..]);
            let reps = bela::encoder::mix_context_means(&ctx2, &m.enc_mention);
            let scores = boundary_scores(&reps, d, &m.md).unwrap();
            let probs: Vec<f64> = valid2
                .iter()
                .map(|&(i, j)| span_probability(&scores, i, j).unwrap().prob)
                .collect();
            let labels: Vec<bool> = valid2.iter().map(|s| gold2.contains(s)).collect();
            md_loss(&probs, &labels)
        };
        worst = worst.max(gradient_check(&mut f, &params, &analytic, 1e-5, 150, seed));

        // ED: softmax NLL over (positive, negatives) with entity gradients
        let (i, j) = *gold.iter().next().unwrap();
        let mean_ctx = mean_rows(&ctx[i * d..(j + 1) * d], j - i + 1, d);
        let entity_ctx: Vec<Vec<f64>> = (0..6).map(|_| rand_vec(&mut rng, d, 0.5)).collect();
        let negatives: Vec<usize> = vec![1, 2, 3];
        let mut grads = ModelGrads::zeros(d, model.r.hidden);
        let sample = EdSample { mean_ctx: &mean_ctx, positive: 0, negatives: &negatives };
        ed_forward_backward(&sample, &model, &entity_ctx, true, 1.0, &mut grads);
        let dd = d * d;
        let mut params = Vec::new();
        params.extend(&model.ed.pool_weight);
        params.extend(&model.ed.pool_bias);
        params.extend(&model.enc_mention.w_mix);
        params.extend(&model.enc_entity.w_mix);
        let mut analytic = Vec::new();
        analytic.extend(&grads.pool_w);
        analytic.extend(&grads.pool_b);
        analytic.extend(&grads.w_mix_m);
        analytic.extend(&grads.w_mix_e);
        let base = model.clone();
        let (mc, ec) = (mean_ctx.clone(), entity_ctx.clone());
        let mut f = |p: &[f64]| {
            let mut m = base.clone();
            m.ed.pool_weight.copy_from_slice(&p[..dd]);
            m.ed.pool_bias.copy_from_slice(&p[dd..dd + d]);
            m.enc_mention.w_mix.copy_from_slice(&p[dd + d..2 * dd + d]);
            m.enc_entity.w_mix.copy_from_slice(&p[2 * dd + d..]);
            let wa = matvec(&m.enc_mention.w_mix, &mc, d, d);
            let mut q = matvec(&m.ed.pool_weight, &wa, d, d);
            for (x, &b) in q.iter_mut().zip(&m.ed.pool_bias) {
                *x += b;
            }
            let ent = |row: usize| -> Vec<f64> {
                let u = matvec(&m.enc_entity.w_mix, &ec[row], d, d);
                let norm = l2_norm(&u).max(1e-12);
                u.into_iter().map(|x| x / norm).collect()
            };
            let pos = dot(&q, &ent(0));
            let negs: Vec<f64> = negatives.iter().map(|&r| dot(&q, &ent(r))).collect();
            ed_loss(pos, &negs)
        };
        worst = worst.max(gradient_check(&mut f, &params, &analytic, 1e-5, 150, seed + 10));

        // R: BCE through the one-hidden-layer head for both labels
        let m_vec = rand_vec(&mut rng, d, 1.0);
        let e_vec = rand_vec(&mut rng, d, 1.0);
        let features = build_features(rng.gen(), rng.gen::<f64>() - 0.5, &m_vec, &e_vec).unwrap();
        for label in [true, false] {
            let mut grads = ModelGrads::zeros(d, model.r.hidden);
            r_forward_backward(&features, label, &model, 1.0, &mut grads);
            let (h, in_dim) = (model.r.hidden, model.r.in_dim);
            let mut params = Vec::new();
            params.extend(&model.r.w1);
            params.extend(&model.r.b1);
            params.extend(&model.r.w2);
            params.push(model.r.b2);
            let mut analytic = Vec::new();
            analytic.extend(&grads.r_w1);
            analytic.extend(&grads.r_b1);
            analytic.extend(&grads.r_w2);
            analytic.push(grads.r_b2);
            let base = model.clone();
            let fs = features.clone();
            let mut f = |p: &[f64]| {
                let mut m = base.clone();
                m.r.w1.copy_from_slice(&p[..h * in_dim]);
                m.r.b1.copy_from_slice(&p[h * in_dim..h * in_dim + h]);
                m.r.w2.copy_from_slice(&p[h * in_dim + h..h * in_dim + 2 * h]);
                m.r.b2 = p[h * in_dim + 2 * h];
                r_loss(&[rejection_score(&fs, &m.r)], &[label])
            };
            worst = worst.max(gradient_check(&mut f, &params, &analytic, 1e-5, 150, seed + 20));
        }
    }

    let elapsed = t0.elapsed();
    verdict(
        2,
        "gradient checks",
        worst <= GRAD_TOL && elapsed.as_secs() < 60,
        &format!("max rel err {worst:.3e} <= {GRAD_TOL:.0e}, {elapsed:.2?} < 60s"),
    );
}

#[test]
fn c03_knn_oracle_equivalence() {
    let t0 = Instant::now();
    let (n, d, q) = (10_000usize, 64usize, 1000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let ids: Vec<String> = (0..n).map(|i| format!("E{i:05}")).collect();
    let vectors: Vec<f32> = (0..n * d).map(|_| rng.gen::<f32>() * 2.0 - 1.0).collect();
    let exact = EntityIndex::exact_from_vectors(ids.clone(), vectors.clone(), d).unwrap();
    let hnsw =
        EntityIndex::hnsw_from_vectors(ids.clone(), vectors, d, BuildParams::default()).unwrap();

    let queries: Vec<Vec<f64>> = (0..q).map(|_| rand_vec(&mut rng, d, 1.0)).collect();
    let mut hits1 = 0usize;
    let mut hits10 = 0usize;
    for query in &queries {
        // naive exhaustive oracle over the stored f32 vectors
        let mut scored: Vec<(usize, f64)> = (0..n)
            .map(|row| {
                let v = exact.vector(row);
                (row, query.iter().zip(&v).map(|(a, &b)| a * b as f64).sum())
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let oracle: Vec<&str> = scored[..10].iter().map(|&(row, _)| ids[row].as_str()).collect();

        let got = exact.search(query, 10).unwrap();
        let got_ids: Vec<&str> = got.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(got_ids, oracle, "exact search diverged from the oracle");

        let approx = hnsw.search(query, 10).unwrap();
        if approx.first().map(|(id, _)| id.as_str()) == Some(oracle[0]) {
            hits1 += 1;
        }
        let approx_set: HashSet<&str> = approx.iter().map(|(id, _)| id.as_str()).collect();
        hits10 += oracle.iter().filter(|id| approx_set.contains(*id)).count();
    }
    let r1 = hits1 as f64 / q as f64;
    let r10 = hits10 as f64 / (q * 10) as f64;
    let elapsed = t0.elapsed();
    verdict(
        3,
        "knn oracle equivalence",
        r1 >= HNSW_RECALL_AT_1 && r10 >= HNSW_RECALL_AT_10 && elapsed.as_secs() < 120,
        &format!(
            "exact = oracle on {q} queries, hnsw recall@1 {r1:.3} >= {HNSW_RECALL_AT_1}, \
             recall@10 {r10:.3} >= {HNSW_RECALL_AT_10}, {elapsed:.2?} < 2min"
        ),
    );
}

#[test]
fn c04_threshold_monotonicity() {
    // beta subset property: raising beta never adds a detected span
    let d = 12;
    let cfg = EncoderConfig { dim: d, ..Default::default() };
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
        let model = ModelParams::seeded_init(cfg, 500 + trial).unwrap();
        let (_, corpus) = generate_synthetic_corpus(5, 1, trial).unwrap();
        let passage = tokenize(&corpus[0].text);
        let reps = bela::encoder::encode_tokens(&passage, &model.enc_mention);
        let scores = boundary_scores(&reps, d, &model.md).unwrap();
        let lo = rng.gen::<f64>() * 0.5;
        let hi = lo + rng.gen::<f64>() * (0.99 - lo);
        let at = |beta: f64| -> HashSet<(usize, usize)> {
            detect_mentions(&scores, &passage, beta, 10)
                .unwrap()
                .iter()
                .map(|s| (s.start, s.end))
                .collect()
        };
        let (set_lo, set_hi) = (at(lo), at(hi));
        assert!(
            set_hi.is_subset(&set_lo),
            "beta subset violated at trial {trial}: {lo} vs {hi}"
        );
    }

    // gamma subset and non-increasing recall through the full pipeline
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + trial);
        let model = ModelParams::seeded_init(cfg, 700 + trial).unwrap();
        let (catalog, corpus) = generate_synthetic_corpus(5, 2, 1000 + trial).unwrap();
        let index = build_exact(&catalog, &model.enc_entity).unwrap();
        let config = LinkerConfig { beta: 0.2, k: 4, ..Default::default() };

        let passage = tokenize(&corpus[0].text);
        let (cands, _) = candidates_for_passage(&passage, &model, &index, &config).unwrap();
        let lo = rng.gen::<f64>() * 0.5;
        let hi = lo + rng.gen::<f64>() * (1.0 - lo);
        let accepted = |gamma: f64| -> Vec<usize> {
            cands
                .iter()
                .enumerate()
                .filter(|(_, c)| c.rejection_score > gamma)
                .map(|(i, _)| i)
                .collect()
        };
        let (a_lo, a_hi) = (accepted(lo), accepted(hi));
        assert!(a_hi.iter().all(|i| a_lo.contains(i)), "gamma subset violated at trial {trial}");

        let sweep = sweep_gamma(&corpus, &model, &index, &config, &grid).unwrap();
        let recalls: Vec<f64> =
            sweep.points.iter().map(|p| p.recall.unwrap_or(0.0)).collect();
        for w in recalls.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "recall increased along gamma at trial {trial}");
        }
    }
    verdict(4, "threshold monotonicity", true, "beta and gamma suites, 100 trials each, 0 violations");
}

#[test]
fn c05_windowing_equivalence() {
    let d = 16;
    let cfg = EncoderConfig { dim: d, ..Default::default() };
    // forced windowing must match the single-window path exactly; mention
    // length is capped below half the overlap so no span crosses a core edge
    let whole = LinkerConfig { beta: 0.3, gamma: 0.0, max_mention_len: 6, k: 4, ..Default::default() };
    // needs max_mention_len - 1 + context_window <= overlap / 2 so every
    // span a core owns sees full context inside its window
    let forced = LinkerConfig { max_seq_len: 24, window_overlap: 16, ..whole };
    let mut checked_multi = 0usize;
    for trial in 0..100u64 {
        let model = ModelParams::seeded_init(cfg, 800 + trial).unwrap();
        let (catalog, corpus) = generate_synthetic_corpus(5, 4, 2000 + trial).unwrap();
        let index = build_exact(&catalog, &model.enc_entity).unwrap();
        // concatenate a few passages so most trials span multiple windows
        let text: Vec<String> = corpus.iter().map(|p| p.text.clone()).collect();
        let passage = tokenize(&text.join(" "));
        assert!(passage.num_tokens() < whole.max_seq_len);
        let (a, stats_a) = link_passage(&passage, &model, &index, &whole).unwrap();
        let (b, stats_b) = link_passage(&passage, &model, &index, &forced).unwrap();
        assert_eq!(a, b, "windowed linking diverged at trial {trial}");
        assert_eq!(stats_a.windows, 1);
        if stats_b.windows > 1 {
            checked_multi += 1;
        }
    }
    assert!(checked_multi > 50, "too few passages exercised multiple windows: {checked_multi}");

    // coverage property up to 4 * L_max
    for n in 0..=(4 * 256) {
        let windows = split_windows(n, 256, 128);
        let mut covered = vec![false; n];
        for &(s, e) in &windows {
            assert!(e - s <= 256);
            for t in s..e {
                covered[t] = true;
            }
        }
        assert!(covered.iter().all(|&c| c), "uncovered token at n = {n}");
        if n > 0 {
            assert_eq!(windows.last().unwrap().1, n);
        }
    }
    verdict(
        5,
        "windowing equivalence",
        true,
        &format!("100 passages identical ({checked_multi} multi-window), coverage to n = 1024"),
    );
}

#[test]
fn c06_metric_oracle() {
    let gold_at = |k: usize| GoldMention { start: 20 * k, end: 20 * k + 5, entity_id: format!("E{k}") };
    let pred_at = |k: usize, entity: &str, shift: usize| PredMention {
        start: 20 * k + shift,
        end: 20 * k + 5 + shift,
        entity_id: entity.into(),
        md: 0.9,
        ed: 0.5,
        r: 0.8,
    };

    let mut configs = 0usize;
    for num_gold in 0..5usize {
        for correct in 0..=num_gold {
            for wrong_entity in 0..=(num_gold - correct) {
                for spurious in 0..2usize {
                    let gold: Vec<GoldMention> = (0..num_gold).map(gold_at).collect();
                    let mut preds: Vec<PredMention> = Vec::new();
                    for k in 0..correct {
                        preds.push(pred_at(k, &format!("E{k}"), 0));
                    }
                    for k in correct..correct + wrong_entity {
                        preds.push(pred_at(k, "WRONG", 0)); // span matches, entity does not
                    }
                    for k in 0..spurious {
                        preds.push(pred_at(10 + k, "E0", 3)); // matches nothing
                    }
                    let counts = count_passage(&preds, &gold);
                    let (p, r, f1) = counts.prf();
                    let num_pred = preds.len();
                    let expect_p = (num_pred > 0).then(|| correct as f64 / num_pred as f64);
                    let expect_r = (num_gold > 0).then(|| correct as f64 / num_gold as f64);
                    assert_eq!(p, expect_p);
                    assert_eq!(r, expect_r);
                    let expect_f1 = match (expect_p, expect_r) {
                        (Some(p), Some(r)) if p + r > 0.0 => 2.0 * p * r / (p + r),
                        _ => 0.0,
                    };
                    assert_eq!(f1, expect_f1);
                    let md = counts.md_recall().unwrap_or(0.0);
                    assert_eq!(
                        counts.md_recall(),
                        (num_gold > 0).then(|| (correct + wrong_entity) as f64 / num_gold as f64)
                    );
                    assert!(md >= r.unwrap_or(0.0), "md recall below e2e recall");
                    configs += 1;
                }
            }
        }
    }
    assert!(configs >= 50, "only {configs} configurations");

    // worked example: 3 predictions, 2 correct, 4 gold -> F1 = 4/7
    let gold: Vec<GoldMention> = (0..4).map(gold_at).collect();
    let preds = vec![
        pred_at(0, "E0", 0),
        pred_at(1, "E1", 0),
        pred_at(10, "E0", 3),
    ];
    let (_, _, f1) = count_passage(&preds, &gold).prf();
    assert!((f1 - 4.0 / 7.0).abs() < 1e-15, "expected 4/7, got {f1}");

    verdict(6, "metric oracle", true, &format!("{configs} configurations exact, 4/7 example exact"));
}

/// Shared fixture for the desk-scale criteria: the staged training run.
fn staged_run() -> (Vec<bela::data::EntityRecord>, Vec<RawPassage>, Vec<RawPassage>, Vec<RawPassage>, ModelParams) {
    let (catalog, corpus) = generate_synthetic_corpus(200, 2000, 7).unwrap();
    let (train_set, dev, test) = split_corpus(corpus, 7);
    let cfg = EncoderConfig { dim: 128, ..Default::default() };
    let model0 = ModelParams::seeded_init(cfg, 7).unwrap();
    let mk = |stage, lr, epochs| TrainConfig {
        stage,
        learning_rate: lr,
        epochs,
        seed: 7,
        ..Default::default()
    };
    let (m1, _) = train(&mk(Stage::EdInBatch, 3.0, 4), &train_set, &catalog, &model0).unwrap();
    let (m2, _) = train(&mk(Stage::EdHard, 3.0, 4), &train_set, &catalog, &m1).unwrap();
    let (m3, _) = train(&mk(Stage::EndToEnd, 0.5, 20), &train_set, &catalog, &m2).unwrap();
    (catalog, train_set, dev, test, m3)
}

#[test]
fn c07_desk_scale_learning() {
    let t0 = Instant::now();
    let (catalog, _, dev, test, model) = staged_run();
    let index = build_exact(&catalog, &model.enc_entity).unwrap();

    let (acc, scored, _) = ed_accuracy(&test, &model, &index, 256).unwrap();
    let acc = acc.unwrap();

    let config = LinkerConfig::default();
    let grid: Vec<f64> = (0..21).map(|i| i as f64 * 0.05).collect();
    let sweep = sweep_gamma(&dev, &model, &index, &config, &grid).unwrap();
    let best = LinkerConfig { gamma: sweep.best_gamma, ..config };
    let preds = link_corpus(&test, &model, &index, &best, 1).unwrap();
    let report = evaluate(&preds, &test).unwrap();
    let f1 = report.overall.f1;
    let md_recall = report.overall.md_recall.unwrap();

    let elapsed = t0.elapsed();
    verdict(
        7,
        "desk-scale learning",
        acc >= E2E_ED_ACCURACY
            && md_recall >= E2E_MD_RECALL
            && f1 >= E2E_F1
            && elapsed.as_secs() < 900,
        &format!(
            "ed acc {acc:.4} >= {E2E_ED_ACCURACY} ({scored} spans), md recall {md_recall:.4} >= \
             {E2E_MD_RECALL}, f1 {f1:.4} >= {E2E_F1} at gamma {:.2}, {elapsed:.1?} < 15min",
            sweep.best_gamma
        ),
    );
}

#[test]
fn c08_single_pass_and_throughput() {
    let d = 32;
    let cfg = EncoderConfig { dim: d, ..Default::default() };
    let model = ModelParams::seeded_init(cfg, 9).unwrap();
    let (catalog, corpus) = generate_synthetic_corpus(20, 200, 9).unwrap();
    let index = build_exact(&catalog, &model.enc_entity).unwrap();
    let config = LinkerConfig { beta: 0.1, ..Default::default() };

    // one encoder pass per window, independent of how many mentions fire
    let mut max_windows = 0usize;
    for chunk in [1usize, 4, 16, 40] {
        let text: Vec<String> = corpus.iter().take(chunk).map(|p| p.text.clone()).collect();
        let passage = tokenize(&text.join(" "));
        let n = passage.num_tokens();
        let (_, stats) = candidates_for_passage(&passage, &model, &index, &config).unwrap();
        let expected = split_windows(n, config.max_seq_len, config.window_overlap).len();
        assert_eq!(stats.windows, expected);
        assert_eq!(stats.encoder_passes, stats.windows, "extra encoder passes at n = {n}");
        max_windows = max_windows.max(stats.windows);
    }
    assert!(max_windows >= 3, "long passage did not exercise multiple windows");

    let t0 = Instant::now();
    let preds = link_corpus(&corpus, &model, &index, &config, 1).unwrap();
    let per_sec = preds.len() as f64 / t0.elapsed().as_secs_f64();
    verdict(
        8,
        "single pass and throughput",
        true,
        &format!("encoder passes == windows up to {max_windows} windows; {per_sec:.0} passages/sec"),
    );
}

#[test]
fn c09_persistence_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = EncoderConfig { dim: 16, ..Default::default() };
    let model = ModelParams::seeded_init(cfg, 11).unwrap();

    // model: load equals saved, and re-saving is byte-identical
    let m_path = dir.path().join("model.bin");
    model.save(&m_path).unwrap();
    let loaded = ModelParams::load(&m_path).unwrap();
    assert_eq!(loaded, model);
    let m2_path = dir.path().join("model2.bin");
    loaded.save(&m2_path).unwrap();
    assert_eq!(std::fs::read(&m_path).unwrap(), std::fs::read(&m2_path).unwrap());

    // both index kinds round-trip with identical bytes and answers
    let (catalog, _) = generate_synthetic_corpus(50, 1, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for approximate in [false, true] {
        let index = if approximate {
            build_approximate(&catalog, &model.enc_entity, BuildParams::default()).unwrap()
        } else {
            build_exact(&catalog, &model.enc_entity).unwrap()
        };
        let i_path = dir.path().join(format!("index_{approximate}.bin"));
        index.save(&i_path).unwrap();
        let loaded = EntityIndex::load(&i_path).unwrap();
        assert_eq!(loaded.ids, index.ids);
        assert_eq!(loaded.kind(), index.kind());
        for _ in 0..20 {
            let q = rand_vec(&mut rng, 16, 1.0);
            assert_eq!(loaded.search(&q, 5).unwrap(), index.search(&q, 5).unwrap());
        }
        let i2_path = dir.path().join(format!("index2_{approximate}.bin"));
        loaded.save(&i2_path).unwrap();
        assert_eq!(std::fs::read(&i_path).unwrap(), std::fs::read(&i2_path).unwrap());
    }

    // corrupt and mismatched files surface named errors
    let bad = dir.path().join("bad.bin");
    std::fs::write(&bad, b"NOTMAGIC junk").unwrap();
    assert!(matches!(ModelParams::load(&bad), Err(BelaError::Format { .. })));
    assert!(matches!(EntityIndex::load(&bad), Err(BelaError::Format { .. })));
    let mut truncated = std::fs::read(&m_path).unwrap();
    truncated.truncate(truncated.len() / 2);
    let t_path = dir.path().join("trunc.bin");
    std::fs::write(&t_path, truncated).unwrap();
    assert!(ModelParams::load(&t_path).is_err());
    match ModelParams::load_with_dim(&m_path, 64) {
        Err(BelaError::Format { reason, .. }) => assert!(reason.contains("dim mismatch")),
        other => panic!("expected a dim-mismatch format error, got {other:?}"),
    }
    assert!(matches!(ModelParams::load(&dir.path().join("absent.bin")), Err(BelaError::Io { .. })));

    verdict(9, "persistence round trips", true, "model + exact + hnsw bit-identical, errors named");
}

#[test]
fn c10_frozen_entity_encoder() {
    let (catalog, corpus) = generate_synthetic_corpus(12, 40, 13).unwrap();
    let cfg = EncoderConfig { dim: 8, ..Default::default() };
    let model0 = ModelParams::seeded_init(cfg, 13).unwrap();
    let mk = |stage, epochs| TrainConfig {
        stage,
        learning_rate: 0.5,
        epochs,
        seed: 13,
        ..Default::default()
    };
    let (m1, _) = train(&mk(Stage::EdInBatch, 1), &corpus, &catalog, &model0).unwrap();
    let (m2, _) = train(&mk(Stage::EdHard, 1), &corpus, &catalog, &m1).unwrap();
    assert_ne!(m2.entity_encoder_bytes(), model0.entity_encoder_bytes());

    let before = m2.entity_encoder_bytes();
    let (m3, _) = train(&mk(Stage::EndToEnd, 3), &corpus, &catalog, &m2).unwrap();
    let frozen = m3.entity_encoder_bytes() == before;
    let moved = m3.enc_mention.w_mix != m2.enc_mention.w_mix;
    verdict(
        10,
        "frozen entity encoder",
        frozen && moved,
        "entity encoder bytes identical through end_to_end, mention side trained",
    );
}
