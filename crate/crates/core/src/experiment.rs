//! Synthetic corpora and end-to-end experiment drivers: the uppercasing
//! preservation sweep, uppercase augmentation, and profession pair scoring.

use std::collections::BTreeSet;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{augment_uppercase, make_upr_corpus, AugmentSpec, GenerationReport, UprSpec};
use crate::error::{Error, Result};
use crate::factorize::{CaseFactor, FactorKind, FactorLabel, GenderFactor, GenderLexicon};
use crate::infer::{beam_translate, greedy_translate, score_pairs, Hypothesis, PairScore, ProfessionPair, ScoreMode};
use crate::metrics::{bleu, uppercased_sentence_ratio, uppercased_token_ratio};
use crate::pipeline::{build_vocab, FactorConfig, Pipeline};
use crate::seq2seq::{centroid_cosine, train, CurvePoint, FactoredSeq2Seq, ModelConfig, TrainConfig};
use crate::subword::Vocab;
use crate::text::{lowercase, uppercase, ParallelCorpus, Sentence, Side, Token};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Size of the synthetic copy corpus.
    pub pairs: usize,
    /// Distinct lowercase words.
    pub vocab: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub upper_source_fraction: f64,
    pub upr: f64,
    /// Uppercased copies appended, as a fraction of the corpus.
    pub augment: f64,
    /// Held-out all-uppercased test sources.
    pub test_pairs: usize,
    /// Validation pairs drawn like the training data, for checkpoint selection.
    pub valid_pairs: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            pairs: 3200,
            vocab: 50,
            min_words: 3,
            max_words: 7,
            upper_source_fraction: 0.25,
            upr: 0.0,
            augment: 0.0,
            test_pairs: 200,
            valid_pairs: 200,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorsConfig {
    pub config: FactorConfig,
    /// Adds a gender stream annotated from this `form<TAB>gender` file.
    pub lexicon: Option<std::path::PathBuf>,
}

impl Default for FactorsConfig {
    fn default() -> Self {
        FactorsConfig {
            config: FactorConfig::Both,
            lexicon: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubwordConfig {
    pub merges: usize,
    pub case_safe: bool,
    pub truecase: bool,
}

impl Default for SubwordConfig {
    fn default() -> Self {
        SubwordConfig {
            merges: 400,
            case_safe: true,
            truecase: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// 1 decodes greedily.
    pub beam: usize,
    pub max_len: usize,
    pub score_mode: ScoreMode,
    pub bins: usize,
    pub pair_threshold: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            beam: 1,
            max_len: 24,
            score_mode: ScoreMode::Joint,
            bins: crate::metrics::DEFAULT_BINS,
            pair_threshold: crate::infer::MIN_PAIR_COUNT,
        }
    }
}

/// Everything an experiment run depends on. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub factors: FactorsConfig,
    pub subword: SubwordConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            factors: FactorsConfig::default(),
            subword: SubwordConfig::default(),
            model: toy_model(),
            train: toy_train(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Sets every seed from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.data.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }
}

/// Model size used by the synthetic experiments.
pub fn toy_model() -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        ff_dim: 64,
        heads: 4,
        enc_layers: 1,
        dec_layers: 1,
        max_len: 32,
        ..Default::default()
    }
}

pub fn toy_train() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        warmup: 100,
        steps: 3000,
        batch_size: 32,
        checkpoint_interval: 50,
        target_loss: Some(0.05),
        average_checkpoints: 8,
        ..Default::default()
    }
}

/// `n` distinct lowercase words of 3 to 6 letters.
pub fn toy_words(n: usize, rng: &mut impl Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(3..=6);
        let w: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn random_sentence(words: &[String], min: usize, max: usize, rng: &mut impl Rng) -> Sentence {
    let len = rng.gen_range(min..=max);
    (0..len)
        .map(|_| Token::new(words.choose(rng).unwrap().as_str()).unwrap())
        .collect()
}

/// Lowercase copy-translation corpus: every target equals its source.
pub fn copy_corpus(words: &[String], n: usize, min: usize, max: usize, rng: &mut impl Rng) -> ParallelCorpus {
    let mut c = ParallelCorpus::new("copy");
    for _ in 0..n {
        let s = random_sentence(words, min, max, rng);
        c.pairs.push((s.clone(), s));
    }
    c
}

/// Training corpus plus an all-uppercased held-out test set (sources and
/// lowercase references).
pub struct CopyData {
    pub words: Vec<String>,
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub report: GenerationReport,
    pub test_sources: Vec<Sentence>,
    pub test_references: Vec<Sentence>,
}

pub fn upr_copy_data(d: &DataConfig) -> Result<CopyData> {
    if d.min_words == 0 || d.min_words > d.max_words {
        return Err(Error::Config("need 1 <= min_words <= max_words".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
    let words = toy_words(d.vocab, &mut rng);
    let base = copy_corpus(&words, d.pairs, d.min_words, d.max_words, &mut rng);
    let spec = UprSpec {
        upper_source_fraction: d.upper_source_fraction,
        upr: d.upr,
        seed: d.seed,
    };
    let (mut train, mut report) = make_upr_corpus(&base, &spec)?;
    if d.augment > 0.0 {
        let (aug, r) = augment_uppercase(
            &train,
            &AugmentSpec {
                fraction: d.augment,
                seed: d.seed.wrapping_add(1),
            },
        )?;
        train = aug;
        report.appended = r.appended;
        report.output_pairs = r.output_pairs;
    }
    let test = copy_corpus(&words, d.test_pairs, d.min_words, d.max_words, &mut rng);
    let valid_base = copy_corpus(&words, d.valid_pairs, d.min_words, d.max_words, &mut rng);
    let valid = if valid_base.is_empty() {
        valid_base
    } else {
        make_upr_corpus(
            &valid_base,
            &UprSpec {
                seed: d.seed.wrapping_add(2),
                ..spec
            },
        )?
        .0
    };
    Ok(CopyData {
        words,
        train,
        valid,
        report,
        test_sources: test.pairs.iter().map(|(s, _)| uppercase(s)).collect(),
        test_references: test.pairs.iter().map(|(_, t)| lowercase(t)).collect(),
    })
}

pub struct Trained {
    pub pipeline: Pipeline,
    pub vocab: Vocab,
    pub model: FactoredSeq2Seq,
    pub curve: Vec<CurvePoint>,
    pub steps_run: usize,
}

impl Trained {
    /// Final interval training loss.
    pub fn final_loss(&self) -> f64 {
        self.curve.last().map_or(f64::NAN, |c| c.loss)
    }

    pub fn translate(&self, source: &Sentence, eval: &EvalConfig) -> Result<Hypothesis> {
        let src = self.pipeline.prepare(source, Side::Source)?;
        if eval.beam <= 1 {
            greedy_translate(&self.model, &self.vocab, &src, eval.max_len)
        } else {
            beam_translate(&self.model, &self.vocab, &src, eval.beam, eval.max_len)
        }
    }

    pub fn translate_all(&self, sources: &[Sentence], eval: &EvalConfig) -> Result<Vec<Sentence>> {
        sources
            .iter()
            .map(|s| self.translate(s, eval).map(|h| h.surface))
            .collect()
    }
}

pub fn fit_and_train(
    corpus: &ParallelCorpus,
    valid: Option<&ParallelCorpus>,
    cfg: &ExperimentConfig,
    lexicon: Option<GenderLexicon>,
) -> Result<Trained> {
    let mut pipeline = Pipeline::fit(
        corpus,
        cfg.factors.config,
        cfg.subword.merges,
        cfg.subword.truecase,
        lexicon,
    )?;
    pipeline.case_safe = cfg.subword.case_safe;
    let pairs = pipeline.prepare_corpus(corpus)?;
    let vocab = build_vocab(&pairs);
    let model = FactoredSeq2Seq::new(pipeline.model_config(&cfg.model, &vocab))?;
    let valid = valid.map(|v| pipeline.prepare_corpus(v)).transpose()?;
    let out = train(model, &pairs, valid.as_deref(), &vocab, &cfg.train)?;
    Ok(Trained {
        pipeline,
        vocab,
        model: out.model,
        curve: out.curve,
        steps_run: out.steps_run,
    })
}

/// Cosine between the centroids of lowercase and uppercase word
/// representations. Unfactored target vocabularies hold both spellings as
/// separate symbols; factored ones hold one lowercase symbol whose
/// uppercase reading adds the uppercased case-factor embedding.
pub fn case_centroid_similarity(t: &Trained) -> Result<f64> {
    let emb = t.model.word_embedding();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let case_stream = t
        .model
        .config
        .target_streams()
        .iter()
        .position(|s| s.kind() == Some(FactorKind::Case));
    match case_stream.and_then(|s| t.model.target_factor_embedding(s)) {
        Some(f) => {
            let lo = f.row(FactorLabel::Case(CaseFactor::Lowercased).id() as usize);
            let up = f.row(FactorLabel::Case(CaseFactor::Uppercased).id() as usize);
            for (id, sym) in t.vocab.symbols().iter().enumerate() {
                if sym.chars().any(char::is_lowercase) && !sym.starts_with('<') {
                    let e = emb.row(id);
                    lower.push(&e + &lo);
                    upper.push(&e + &up);
                }
            }
        }
        None => {
            for (id, sym) in t.vocab.symbols().iter().enumerate() {
                if sym.starts_with('<') || !sym.chars().any(char::is_lowercase) {
                    continue;
                }
                if let Some(u) = t.vocab.get(&sym.to_uppercase()) {
                    lower.push(emb.row(id).to_owned());
                    upper.push(emb.row(u as usize).to_owned());
                }
            }
        }
    }
    centroid_cosine(&lower, &upper)
}

/// One evaluated point of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub config: FactorConfig,
    pub grid_value: f64,
    pub bleu_ci: f64,
    pub upper_ratio: f64,
    pub upper_sentence_ratio: f64,
    pub centroid_cos: Option<f64>,
    pub final_loss: f64,
    pub steps: usize,
}

/// Builds the copy data for `cfg`, trains, and evaluates on the
/// all-uppercased test set.
pub fn run_copy_point(cfg: &ExperimentConfig, grid_value: f64) -> Result<(SweepPoint, Trained)> {
    let data = upr_copy_data(&cfg.data)?;
    let trained = fit_and_train(&data.train, Some(&data.valid), cfg, None)?;
    let outputs = trained.translate_all(&data.test_sources, &cfg.eval)?;
    let point = SweepPoint {
        config: cfg.factors.config,
        grid_value,
        bleu_ci: bleu(&outputs, &data.test_references, true)?.score,
        upper_ratio: uppercased_token_ratio(&outputs).unwrap_or(0.0),
        upper_sentence_ratio: uppercased_sentence_ratio(&outputs)?,
        centroid_cos: case_centroid_similarity(&trained).ok(),
        final_loss: trained.final_loss(),
        steps: trained.steps_run,
    };
    Ok((point, trained))
}

/// Which grid a sweep walks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// Uppercasing preservation ratio of the training data.
    Upr,
    /// Size of the uppercase augmentation.
    Augment,
}

pub fn grid_values(grid: Grid) -> Vec<f64> {
    match grid {
        Grid::Upr => crate::datagen::UPR_GRID.to_vec(),
        Grid::Augment => crate::datagen::augment_grid(),
    }
}

/// Every factor configuration at every grid value.
pub fn sweep(
    base: &ExperimentConfig,
    grid: Grid,
    configs: &[FactorConfig],
    values: &[f64],
    mut on_point: impl FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &c in configs {
        for &v in values {
            let mut cfg = base.clone();
            cfg.factors.config = c;
            match grid {
                Grid::Upr => cfg.data.upr = v,
                Grid::Augment => cfg.data.augment = v,
            }
            let (p, _) = run_copy_point(&cfg, v)?;
            on_point(&p);
            out.push(p);
        }
    }
    Ok(out)
}

/// Masculine:feminine occurrence counts of the profession groups.
pub const GENDER_GROUPS: [(usize, usize); 5] = [(8, 0), (6, 2), (4, 4), (2, 6), (0, 8)];

pub struct GenderData {
    pub train: ParallelCorpus,
    pub lexicon: GenderLexicon,
    /// Per group, the test pairs of its professions.
    pub test: Vec<Vec<ProfessionPair>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenderDataConfig {
    pub professions_per_group: usize,
    pub filler_pairs: usize,
    pub contexts_per_profession: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for GenderDataConfig {
    fn default() -> Self {
        GenderDataConfig {
            professions_per_group: 4,
            filler_pairs: 1200,
            contexts_per_profession: 10,
            vocab: 40,
            seed: 1,
        }
    }
}

fn with_word(ctx: &[String], pos: usize, w: &str) -> String {
    let mut v: Vec<&str> = ctx.iter().map(String::as_str).collect();
    v.insert(pos, w);
    v.join(" ")
}

/// Copy-style corpus in which each profession word translates to a
/// masculine (`…o`) or feminine (`…a`) form with controlled counts.
pub fn gender_data(g: &GenderDataConfig) -> Result<GenderData> {
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let n_prof = g.professions_per_group * GENDER_GROUPS.len();
    let all = toy_words(g.vocab + n_prof, &mut rng);
    let (context, stems) = all.split_at(g.vocab);
    let mut lexicon = GenderLexicon::default();
    let mut train = ParallelCorpus::new("gender");
    let mut test = vec![Vec::new(); GENDER_GROUPS.len()];
    let sample_ctx = |rng: &mut ChaCha8Rng| -> (Vec<String>, usize) {
        let len = rng.gen_range(2..=4);
        let ctx: Vec<String> = (0..len).map(|_| context.choose(rng).unwrap().clone()).collect();
        let pos = rng.gen_range(0..=len);
        (ctx, pos)
    };
    for (gi, &(m, f)) in GENDER_GROUPS.iter().enumerate() {
        for stem in &stems[gi * g.professions_per_group..(gi + 1) * g.professions_per_group] {
            let masc = format!("{stem}o");
            let fem = format!("{stem}a");
            lexicon.insert(&masc, GenderFactor::Masculine)?;
            lexicon.insert(&fem, GenderFactor::Feminine)?;
            let mut genders: Vec<bool> = std::iter::repeat(true).take(m).chain(std::iter::repeat(false).take(f)).collect();
            genders.shuffle(&mut rng);
            for is_masc in genders {
                let (ctx, pos) = sample_ctx(&mut rng);
                let src = with_word(&ctx, pos, stem);
                let tgt = with_word(&ctx, pos, if is_masc { &masc } else { &fem });
                train.push(crate::text::tokenize(&src), crate::text::tokenize(&tgt))?;
            }
            for _ in 0..g.contexts_per_profession {
                let (ctx, pos) = sample_ctx(&mut rng);
                let mut p = ProfessionPair::new(&with_word(&ctx, pos, stem), &with_word(&ctx, pos, &masc), &with_word(&ctx, pos, &fem))?;
                p.count_masc = m;
                p.count_fem = f;
                test[gi].push(p);
            }
        }
    }
    for _ in 0..g.filler_pairs {
        let (ctx, _) = sample_ctx(&mut rng);
        let s = Sentence::from_iter(ctx.iter().map(|w| Token::new(w.as_str()).unwrap()));
        train.pairs.push((s.clone(), s));
    }
    train.pairs.shuffle(&mut rng);
    Ok(GenderData { train, lexicon, test })
}

/// Per group: masculine-choice fraction and the raw pair scores.
pub fn gender_choice_fractions(
    t: &Trained,
    data: &GenderData,
    mode: ScoreMode,
) -> Result<(Vec<f64>, Vec<Vec<PairScore>>)> {
    let mut fractions = Vec::new();
    let mut all = Vec::new();
    for group in &data.test {
        let scores = score_pairs(&t.model, &t.vocab, &t.pipeline, group, mode)?;
        let masc = scores.iter().filter(|s| s.choice == GenderFactor::Masculine).count();
        fractions.push(masc as f64 / scores.len().max(1) as f64);
        all.push(scores);
    }
    Ok((fractions, all))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (Array1::from(ranks(a)), Array1::from(ranks(b)));
    let (ca, cb) = (&ra - ra.mean().unwrap_or(0.0), &rb - rb.mean().unwrap_or(0.0));
    let denom = (ca.dot(&ca) * cb.dot(&cb)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        ca.dot(&cb) / denom
    }
}
