//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::time::Instant;

use factored_nmt::datagen::{augment_grid, augment_uppercase, make_upr_corpus, AugmentSpec, UprSpec, UPR_GRID};
use factored_nmt::experiment::{
    fit_and_train, gender_choice_fractions, gender_data, run_copy_point, spearman,
    upr_copy_data, ExperimentConfig, GenderDataConfig, GENDER_GROUPS,
};
use factored_nmt::factorize::{
    deduce_case, recombine_case, CaseFactor, FactorKind, FactorLabel, FactoredSentence, FactoredToken, GenderFactor,
    SHIFT_LABEL,
};
use factored_nmt::infer::{ProfessionPair, ScoreMode};
use factored_nmt::metrics::{bin_analysis, bleu, is_all_uppercased, training_masculine_ratio};
use factored_nmt::pipeline::FactorConfig;
use factored_nmt::seq2seq::{
    build_batch, corpus_loss, embedding_centroid_similarity, FactoredPair, FactoredSeq2Seq, ModelConfig, StreamSpec,
};
use factored_nmt::subword::{bpe_apply, bpe_apply_word, bpe_restore, bpe_train, strip_continuation, SubwordModel, Vocab};
use factored_nmt::text::{ParallelCorpus, Sentence, Token};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt(xs: &[f64]) -> String {
    let v: Vec<String> = xs.iter().map(|x| format!("{x:.3}")).collect();
    format!("[{}]", v.join(", "))
}

const LETTERS: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's', 't', 'u', 'v',
    'w', 'x', 'y', 'z', 'é', 'ü', 'ö', 'ñ', 'ç', 'ß', 'α', 'β', 'γ', 'σ', 'ж', 'я',
];
const UNCASED: &[char] = &['0', '1', '7', '-', '\'', '.', '%', '&'];

/// A random token drawn from one of the four case classes or, one time in
/// eight, with every letter cased independently at random.
fn random_cased_token(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(1..=8);
    let base: String = (0..len)
        .map(|_| {
            if rng.gen_bool(0.15) {
                *UNCASED.choose(rng).unwrap()
            } else {
                *LETTERS.choose(rng).unwrap()
            }
        })
        .collect();
    match rng.gen_range(0..8) {
        0 | 1 => base.to_uppercase(),
        2 | 3 => {
            let mut out = String::new();
            let mut done = false;
            for c in base.chars() {
                if !done && c.is_lowercase() {
                    out.extend(c.to_uppercase());
                    done = true;
                } else {
                    out.push(c);
                }
            }
            out
        }
        4 => base.chars().filter(|c| UNCASED.contains(c)).collect::<String>() + "0",
        5 | 6 => base,
        _ => base
            .chars()
            .map(|c| if rng.gen_bool(0.5) { c.to_uppercase().collect::<String>() } else { c.to_string() })
            .collect(),
    }
}

/// Independent recoverability oracle: some case class rebuilds the token
/// from its lowercased form.
fn recoverable(token: &str) -> bool {
    let lower = token.to_lowercase();
    if lower.to_uppercase() == token || lower == token {
        return true;
    }
    let mut cap = String::new();
    let mut done = false;
    for c in lower.chars() {
        if !done && (c.is_lowercase() || c.is_uppercase()) {
            cap.extend(c.to_uppercase());
            done = true;
        } else {
            cap.push(c);
        }
    }
    cap == token
}

fn mixed_case_corpus(rng: &mut impl Rng, sentences: usize) -> ParallelCorpus {
    let mut c = ParallelCorpus::new("mixed");
    for _ in 0..sentences {
        let len = rng.gen_range(1..=12);
        let s: Sentence = (0..len).map(|_| Token::new(random_cased_token(rng)).unwrap()).collect();
        c.pairs.push((s.clone(), s));
    }
    c
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut failures, mut rejected, mut wrong_reject) = (0, 0, 0);
    for _ in 0..10_000 {
        let t = Token::new(random_cased_token(&mut rng)).unwrap();
        match deduce_case(&t) {
            Ok((form, f)) => {
                if recombine_case(&form, f) != t {
                    failures += 1;
                }
            }
            Err(_) => {
                rejected += 1;
                if recoverable(t.as_str()) {
                    wrong_reject += 1;
                }
            }
        }
    }
    let corpus = mixed_case_corpus(&mut rng, 1000);
    let bpe = bpe_train(&corpus, 300).unwrap();
    let mut bpe_failures = 0;
    for (s, _) in &corpus.pairs {
        for case_safe in [true, false] {
            if bpe_restore(&bpe_apply(s, &bpe, case_safe)).ok().as_ref() != Some(s) {
                bpe_failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && wrong_reject == 0 && bpe_failures == 0 && secs < 10.0,
        format!(
            "case round-trip failures {failures}/10000 ({rejected} unrecoverable rejected, {wrong_reject} wrongly), \
             bpe round-trip failures {bpe_failures}/2000, {secs:.2}s"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let train = mixed_case_corpus(&mut rng, 800);
    let bpe = bpe_train(&train, 500).unwrap();
    let mut tokens = 0;
    let mut errors = 0;
    let mut unsafe_errors = 0;
    while tokens < 10_000 {
        let t = Token::new(random_cased_token(&mut rng)).unwrap();
        tokens += 1;
        for sub in bpe_apply_word(&t, &bpe, true) {
            let bare = Token::new(strip_continuation(sub.as_str())).unwrap();
            if deduce_case(&bare).is_err() {
                errors += 1;
            }
        }
        for sub in bpe_apply_word(&t, &bpe, false) {
            let bare = Token::new(strip_continuation(sub.as_str())).unwrap();
            if deduce_case(&bare).is_err() {
                unsafe_errors += 1;
            }
        }
    }
    let merges = ["w i", "f i", "wi fi"]
        .iter()
        .map(|m| {
            let (a, b) = m.split_once(' ').unwrap();
            (a.to_string(), b.to_string())
        })
        .collect();
    let wifi = SubwordModel::new(merges, Vocab::from_symbols(["wifi"]));
    let seg: Vec<String> = bpe_apply_word(&Token::new("WiFi").unwrap(), &wifi, true)
        .into_iter()
        .map(Token::into_string)
        .collect();
    let wifi_ok = seg == ["Wi@@", "Fi"];
    outcome(
        errors == 0 && wifi_ok,
        format!(
            "mixed-case subwords {errors} over {tokens} tokens (case-unsafe merging gives {unsafe_errors}), \
             WiFi -> {}",
            seg.join(" ")
        ),
    )
}

fn random_factored(rng: &mut impl Rng, words: &[&str], streams: &[FactorKind], max: usize) -> FactoredSentence {
    let len = rng.gen_range(1..=max);
    (0..len)
        .map(|_| FactoredToken {
            form: Token::new(*words.choose(rng).unwrap()).unwrap(),
            factors: streams
                .iter()
                .map(|&k| match k {
                    FactorKind::Case => FactorLabel::Case(*CaseFactor::ALL.choose(rng).unwrap()),
                    FactorKind::Gender => FactorLabel::Gender(*GenderFactor::ALL.choose(rng).unwrap()),
                })
                .collect(),
        })
        .collect()
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let words = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let vocab = Vocab::from_symbols(words);
    let config = ModelConfig {
        vocab_size: vocab.len(),
        embed_dim: 8,
        ff_dim: 16,
        heads: 2,
        enc_layers: 1,
        dec_layers: 1,
        max_len: 8,
        source_factors: true,
        target_factors: true,
        factor_streams: vec![StreamSpec { name: "case".into(), labels: 4 }],
        seed: 7,
        ..Default::default()
    };
    assert_eq!(config.vocab_size, 12);
    let mut model = FactoredSeq2Seq::new(config.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    // break the symmetry of freshly initialised norms and biases
    for p in model.params.values_mut() {
        p.mapv_inplace(|x| x + rng.gen_range(-0.3..0.3));
    }
    let pairs: Vec<FactoredPair> = (0..3)
        .map(|_| FactoredPair {
            source: random_factored(&mut rng, &words, &[FactorKind::Case], 5),
            target: random_factored(&mut rng, &words, &[FactorKind::Case], 5),
        })
        .collect();
    let batch = build_batch(&pairs, &vocab, &config).unwrap();
    let (_, grads) = model.loss_and_grads(&batch).unwrap();
    let eps = 1e-4;
    let (mut checked, mut bad, mut worst) = (0usize, 0usize, 0.0f64);
    let (mut worst_raw, mut tiny) = (0.0f64, 0usize);
    for p in 0..model.params.len() {
        let shape = model.params.get(p).raw_dim();
        for idx in ndarray::indices(shape) {
            let orig = model.params.get(p)[idx];
            model.params.get_mut(p)[idx] = orig + eps;
            let up = model.loss(&batch).unwrap().total;
            model.params.get_mut(p)[idx] = orig - eps;
            let down = model.loss(&batch).unwrap().total;
            model.params.get_mut(p)[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.get(p).map_or(0.0, |g| g[idx]);
            let diff = (analytic - numeric).abs();
            let scale = analytic.abs().max(numeric.abs());
            // below 1e-8 the difference is finite-difference noise
            let rel = if diff <= 1e-8 { 0.0 } else { diff / scale };
            worst = worst.max(rel);
            if scale >= 1e-4 {
                worst_raw = worst_raw.max(diff / scale);
            } else {
                tiny += 1;
            }
            if rel > 1e-3 {
                bad += 1;
            }
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad == 0 && secs < 60.0,
        format!(
            "{checked} parameters, {bad} above 1e-3, worst relative error {worst:.2e} \
             (unfloored {worst_raw:.2e} over gradients >= 1e-4; {tiny} smaller), {secs:.1}s"
        ),
    )
}

fn criterion_4() -> Outcome {
    let words = ["x", "y", "z", "w", "v", "u"];
    let vocab = Vocab::from_symbols(words);
    let streams = [FactorKind::Case, FactorKind::Gender];
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_len: 32,
        source_factors: true,
        target_factors: true,
        factor_streams: streams.iter().map(|&k| StreamSpec::of(k)).collect(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let pairs: Vec<FactoredPair> = (0..1000)
        .map(|_| FactoredPair {
            source: random_factored(&mut rng, &words, &streams, 20),
            target: random_factored(&mut rng, &words, &streams, 20),
        })
        .collect();
    let (mut checks, mut failures) = (0usize, 0usize);
    for chunk in pairs.chunks(50) {
        let batch = build_batch(chunk, &vocab, &config).unwrap();
        for (b, pair) in chunk.iter().enumerate() {
            let n = pair.target.len();
            if batch.tgt_lens[b] != n + 1 {
                failures += 1;
            }
            for s in 0..streams.len() {
                for t in 0..=n {
                    let expected = if t == 0 { SHIFT_LABEL } else { pair.target[t - 1].factors[s].id() };
                    checks += 1;
                    if batch.tgt_factors[s][[b, t]] != expected {
                        failures += 1;
                    }
                }
            }
            for t in 1..=n {
                checks += 1;
                if batch.tgt_words[[b, t]] != vocab.id(pair.target[t - 1].form.as_str()) {
                    failures += 1;
                }
            }
        }
    }
    outcome(failures == 0, format!("{failures} failures over {checks} checked positions"))
}

/// Trains the copy model for one setting; returns (uppercased sentence ratio,
/// training-corpus loss of the final model, case-insensitive BLEU).
fn copy_run(config: FactorConfig, upr: f64, augment: f64, seed: u64) -> (f64, f64, f64, Option<f64>) {
    let mut cfg = ExperimentConfig::default().with_seed(seed);
    cfg.factors.config = config;
    cfg.data.upr = upr;
    cfg.data.augment = augment;
    let (point, trained) = run_copy_point(&cfg, upr).unwrap();
    let data = upr_copy_data(&cfg.data).unwrap();
    let pairs = trained.pipeline.prepare_corpus(&data.train).unwrap();
    let loss = corpus_loss(&trained.model, &pairs, &trained.vocab, 64).unwrap();
    (point.upper_sentence_ratio, loss, point.bleu_ci, point.centroid_cos)
}

fn criteria_5_and_6() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass5 = true;
    let mut both_mid = Vec::new();
    for upr in [0.0, 0.5, 1.0] {
        let mut ratios = Vec::new();
        let mut losses = Vec::new();
        for seed in SEEDS {
            let (r, loss, _, _) = copy_run(FactorConfig::Both, upr, 0.0, seed);
            ratios.push(r);
            losses.push(loss);
        }
        let m = mean(&ratios);
        let ok = losses.iter().all(|&l| l < 0.1)
            && if upr == 0.0 {
                ratios.iter().all(|&r| r <= 0.05)
            } else if upr == 1.0 {
                ratios.iter().all(|&r| r >= 0.95)
            } else {
                (m - upr).abs() <= 0.10
            };
        pass5 &= ok;
        lines.push(format!("upr {upr}: ratio {} mean {m:.3} loss {}", fmt(&ratios), fmt(&losses)));
        if upr == 0.5 {
            both_mid = ratios;
        }
    }
    let c5 = outcome(pass5, format!("{}; {:.0}s", lines.join("; "), start.elapsed().as_secs_f64()));

    let start = Instant::now();
    let dev = |rs: &[f64]| mean(&rs.iter().map(|r| (r - 0.5).abs()).collect::<Vec<_>>());
    let mut target = Vec::new();
    let mut none = Vec::new();
    for seed in SEEDS {
        target.push(copy_run(FactorConfig::Target, 0.5, 0.0, seed).0);
        none.push(copy_run(FactorConfig::None, 0.5, 0.0, seed).0);
    }
    let (db, dt, dn) = (dev(&both_mid), dev(&target), dev(&none));
    let c6 = outcome(
        db <= dn && dt <= dn,
        format!(
            "mean |ratio-0.5|: both {db:.3} {}, target {dt:.3} {}, none {dn:.3} {}; {:.0}s",
            fmt(&both_mid),
            fmt(&target),
            fmt(&none),
            start.elapsed().as_secs_f64()
        ),
    );
    (c5, c6)
}

/// Hand-written BLEU test corpora as (hypothesis, reference) lines.
fn bleu_corpora() -> Vec<Vec<(&'static str, &'static str)>> {
    vec![
        vec![("the cat sat on the mat", "the cat sat on the mat")],
        vec![("the cat sat on the mat", "a dog lay under a rug")],
        vec![("the the the the", "the cat sat on the mat")],
        vec![("cat", "the cat sat on the mat")],
        vec![("the cat", "the cat sat on the mat")],
        vec![("the cat sat", "the cat sat on the mat")],
        vec![("on the mat sat the cat", "the cat sat on the mat")],
        vec![("the cat sat on the mat today again", "the cat sat on the mat")],
        vec![("THE CAT SAT", "the cat sat")],
        vec![("The Cat sat on the Mat", "the cat sat on the mat")],
        vec![("a b c d e", "a b c d e"), ("f g", "f g h i")],
        vec![("a b", "a b"), ("c d", "c d"), ("e", "e")],
        vec![("x y z", "a b c"), ("a b c", "a b c")],
        vec![("one two three four five six", "one two three four six five")],
        vec![("it is a guide to action", "it is a guide to action that ensures")],
        vec![
            ("it is a guide to action which ensures that the military always obeys", "it is a guide to action that ensures that the military will forever heed party commands"),
            ("it is the practical guide for the army always to heed", "it is the guiding principle which guarantees the military forces always being under command"),
        ],
        vec![("hello , world !", "hello world !"), ("good morning .", "good morning , all .")],
        vec![("a a a b b b", "a b a b a b")],
        vec![("the quick brown fox", "the quick brown fox jumps"), ("jumps over", "over the lazy dog")],
        vec![("I am here", "i am here"), ("YOU ARE THERE", "you are there")],
        vec![("new york is big", "new york is very big"), ("los angeles too", "los angeles is big too")],
        vec![("a", "a"), ("b", "c")],
        vec![("p q r s t u v", "p q r s"), ("w", "w x y z")],
        vec![("de la de la de la", "de la casa de la playa"), ("la casa", "la casa blanca")],
        vec![("1 2 3 4", "1 2 3 4"), ("5 6 7 8", "5 6 8 7"), ("9 10", "10 9")],
    ]
}

/// Independent corpus BLEU-4: n-grams as vectors, clipped counts by linear scan.
fn brute_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> (f64, [usize; 4], [usize; 4]) {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hl, mut rl) = (0usize, 0usize);
    for (h, r) in pairs {
        hl += h.len();
        rl += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let hg: Vec<&[String]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
            let rg: Vec<&[String]> = if r.len() >= n { (0..=r.len() - n).map(|i| &r[i..i + n]).collect() } else { vec![] };
            totals[n - 1] += hg.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let ch = hg.iter().filter(|x| *x == g).count();
                let cr = rg.iter().filter(|x| *x == g).count();
                matches[n - 1] += ch.min(cr);
            }
        }
    }
    let mut logs = Vec::new();
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        let p = if matches[n] == 0 { 0.5 / totals[n] as f64 } else { matches[n] as f64 / totals[n] as f64 };
        logs.push(p.ln());
    }
    let score = if logs.is_empty() || hl == 0 {
        0.0
    } else {
        let bp = if hl >= rl { 1.0 } else { (1.0 - rl as f64 / hl as f64).exp() };
        (100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()).min(100.0)
    };
    (score, matches, totals)
}

fn brute_bins(pairs: &[(f64, GenderFactor)], n_bins: usize) -> f64 {
    // stable rank: smaller ratio first, ties by input position
    let n = pairs.len();
    let mut order = vec![0usize; n];
    for i in 0..n {
        let rank = (0..n).filter(|&j| pairs[j].0 < pairs[i].0 || (pairs[j].0 == pairs[i].0 && j < i)).count();
        order[rank] = i;
    }
    let mut total = 0.0;
    let mut pos = 0;
    for b in 0..n_bins {
        let size = n / n_bins + usize::from(b < n % n_bins);
        let members = &order[pos..pos + size];
        pos += size;
        let tr: f64 = members.iter().map(|&i| pairs[i].0).sum::<f64>() / size as f64;
        let pr: f64 = members.iter().filter(|&&i| pairs[i].1 == GenderFactor::Masculine).count() as f64 / size as f64;
        total += (pr - tr) * (pr - tr);
    }
    total / n_bins as f64
}

fn criterion_7() -> Outcome {
    let corpora = bleu_corpora();
    let mut bleu_bad = 0;
    let mut worst = 0.0f64;
    for corpus in &corpora {
        for ci in [false, true] {
            let hyps: Vec<Sentence> = corpus.iter().map(|(h, _)| Sentence::from_tokenized(h)).collect();
            let refs: Vec<Sentence> = corpus.iter().map(|(_, r)| Sentence::from_tokenized(r)).collect();
            let got = bleu(&hyps, &refs, ci).unwrap();
            let norm = |s: &str| -> Vec<String> {
                s.split_whitespace().map(|w| if ci { w.to_lowercase() } else { w.to_string() }).collect()
            };
            let pairs: Vec<_> = corpus.iter().map(|(h, r)| (norm(h), norm(r))).collect();
            let (score, matches, totals) = brute_bleu(&pairs);
            worst = worst.max((got.score - score).abs());
            if got.matches != matches || got.totals != totals || (got.score - score).abs() > 1e-12 {
                bleu_bad += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let pairs: Vec<(f64, GenderFactor)> = (0..45)
        .map(|_| {
            let ratio = rng.gen_range(0..=8) as f64 / 8.0;
            let g = if rng.gen_bool(ratio.clamp(0.1, 0.9)) { GenderFactor::Masculine } else { GenderFactor::Feminine };
            (ratio, g)
        })
        .collect();
    let mut bin_bad = 0;
    for n_bins in [15, 7, 1, 45] {
        let got = bin_analysis(&pairs, n_bins).unwrap().mse;
        if (got - brute_bins(&pairs, n_bins)).abs() > 1e-12 {
            bin_bad += 1;
        }
    }
    let mut p = ProfessionPair::new("doctor", "médico", "médica").unwrap();
    p.count_masc = 3;
    p.count_fem = 1;
    let ratio = training_masculine_ratio(&p).unwrap();
    outcome(
        bleu_bad == 0 && bin_bad == 0 && ratio == 0.75,
        format!(
            "bleu mismatches {bleu_bad}/{} (max |diff| {worst:.1e}), bin mse mismatches {bin_bad}/4, ratio(3,1) = {ratio}",
            corpora.len() * 2
        ),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut checks = 0;
    let mut bad = Vec::new();
    for n in [1usize, 7, 10, 49, 50, 333, 1000, 3200] {
        let mut base = ParallelCorpus::new("g");
        for _ in 0..n {
            let len = rng.gen_range(1..=5);
            let s: Sentence = (0..len).map(|_| Token::new(["ab", "Cd", "EF", "gh"][rng.gen_range(0..4)]).unwrap()).collect();
            base.pairs.push((s.clone(), s));
        }
        for fraction in [0.0, 0.02, 0.1, 0.25, 0.5, 1.0] {
            let k = (fraction * n as f64).round() as usize;
            for upr in UPR_GRID {
                let m = (upr * k as f64).round() as usize;
                let spec = UprSpec { upper_source_fraction: fraction, upr, seed: n as u64 };
                let (out, report) = make_upr_corpus(&base, &spec).unwrap();
                let us = out.pairs.iter().filter(|(s, _)| is_all_uppercased(s)).count();
                let ut = out.pairs.iter().filter(|(_, t)| is_all_uppercased(t)).count();
                let nested = out.pairs.iter().all(|(s, t)| is_all_uppercased(s) || !is_all_uppercased(t));
                checks += 1;
                if us != k || ut != m || report.upper_source != k || report.upper_target != m || !nested {
                    bad.push(format!("N={n} f={fraction} upr={upr}: {us}/{ut} vs {k}/{m}"));
                }
            }
        }
        for fraction in augment_grid() {
            let extra = (fraction * n as f64).round() as usize;
            let (out, report) = augment_uppercase(&base, &AugmentSpec { fraction, seed: 9 }).unwrap();
            let tail_upper = out.pairs[n..].iter().all(|(s, t)| is_all_uppercased(s) && is_all_uppercased(t));
            checks += 1;
            if out.len() != n + extra || report.appended != extra || out.pairs[..n] != base.pairs[..] || !tail_upper {
                bad.push(format!("augment N={n} f={fraction}: {} vs {}", out.len(), n + extra));
            }
        }
    }
    outcome(bad.is_empty(), format!("{} mismatches over {checks} settings {}", bad.len(), bad.join("; ")))
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut model = FactoredSeq2Seq::new(ModelConfig { vocab_size: 8, embed_dim: 4, heads: 1, ..Default::default() }).unwrap();
    {
        let e = model.word_embedding_mut();
        e.fill(0.0);
        e[[4, 0]] = 1.0;
        e[[5, 0]] = 2.0;
        e[[5, 1]] = 1.0;
        e[[6, 2]] = 3.0;
        e[[7, 3]] = 0.5;
    }
    let same = embedding_centroid_similarity(&model, &[4, 5], &[4, 5]).unwrap();
    let orth = embedding_centroid_similarity(&model, &[4, 5], &[6, 7]).unwrap();
    let unit_ok = (same - 1.0).abs() < 1e-6 && orth.abs() < 1e-6;

    let fractions = [0.0, 0.0025, 0.04];
    let mut per_fraction = Vec::new();
    for &f in &fractions {
        let sims: Vec<f64> = SEEDS.iter().map(|&s| copy_run(FactorConfig::None, 0.0, f, s).3.unwrap()).collect();
        per_fraction.push(sims);
    }
    let means: Vec<f64> = per_fraction.iter().map(|v| mean(v)).collect();
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        unit_ok && monotone,
        format!(
            "identical {same:.9}, orthogonal {orth:.1e}; none-model lower/upper centroid cosine by augmentation \
             {:?}: means {} per seed {}; {:.0}s",
            fractions,
            fmt(&means),
            per_fraction.iter().map(|v| fmt(v)).collect::<Vec<_>>().join(" "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let data = gender_data(&GenderDataConfig { seed, ..Default::default() }).unwrap();
        let mut cfg = ExperimentConfig::default().with_seed(seed);
        cfg.factors.config = FactorConfig::Both;
        let trained = fit_and_train(&data.train, None, &cfg, Some(data.lexicon.clone())).unwrap();
        per_seed.push(gender_choice_fractions(&trained, &data, ScoreMode::Joint).unwrap().0);
    }
    let avg: Vec<f64> = (0..GENDER_GROUPS.len()).map(|g| mean(&per_seed.iter().map(|v| v[g]).collect::<Vec<_>>())).collect();
    let ratios: Vec<f64> = GENDER_GROUPS.iter().map(|&(m, f)| m as f64 / (m + f) as f64).collect();
    let rho = spearman(&ratios, &avg);
    outcome(
        (rho - 1.0).abs() < 1e-12,
        format!(
            "training ratios {} masculine-choice fractions {} (per seed {}), spearman {rho:.3}; {:.0}s",
            fmt(&ratios),
            fmt(&avg),
            per_seed.iter().map(|v| fmt(v)).collect::<Vec<_>>().join(" "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() {
    let quick = std::env::args().any(|a| a == "--quick");
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
    ];
    for (i, o) in &results {
        report(*i, o);
    }
    let mut late = vec![(7, criterion_7()), (8, criterion_8())];
    if !quick {
        let (c5, c6) = criteria_5_and_6();
        late.push((5, c5));
        late.push((6, c6));
        late.push((9, criterion_9()));
        late.push((10, criterion_10()));
    }
    late.sort_by_key(|(i, _)| *i);
    for (i, o) in &late {
        report(*i, o);
    }
    results.extend(late);
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(i, _)| *i).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" {failed:?}") }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

fn report(i: usize, o: &Outcome) {
    println!("criterion {i:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}
