//! Subcommand implementations.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plannmt::checkpoint::{
    load_checkpoint_of_kind, save_checkpoint, Checkpoint, ModelKind,
};
use plannmt::codemodel::{
    self, encode_tag_symbols, sample_gumbel, CodeConfig, CodeExample, CodeModelError,
};
use plannmt::codes::{load_codes, parse_code_spec, save_codes};
use plannmt::decode::{beam_search, strip_codes};
use plannmt::eval::{code_distribution, corpus_bleu, histogram_csv};
use plannmt::nmt::{self, NmtConfig, NmtError, NmtExample};
use plannmt::numcore::{check_gradients, NumError};
use plannmt::structann::simplify_tags;
use plannmt::textpipe::{
    augment_targets_with_codes, join_bpe, load_parallel_corpus, BpeModel, Vocabulary, EOC_ID,
    EOS_ID,
};

use crate::config::PipelineConfig;
use crate::{
    AugmentArgs, BleuArgs, CodeStatsArgs, ExtractCodesArgs, Global, PreprocessArgs,
    TrainCodesArgs, TrainNmtArgs, TranslateArgs,
};

/// Defaults, then PLNMT_SEED, then the config file, then `--seed`.
fn resolve_config(global: &Global) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Ok(text) = std::env::var("PLNMT_SEED") {
        cfg.seed = text
            .parse()
            .with_context(|| format!("PLNMT_SEED ('{text}') must be an unsigned integer"))?;
    }
    if let Some(path) = &global.config {
        cfg.merge_file(path)?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn log_config(cfg: &PipelineConfig) {
    eprintln!("resolved config:");
    for line in cfg.render().lines() {
        eprintln!("  {line}");
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(String::from).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_token_lines(path: &Path, lines: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn preprocess(global: &Global, args: &PreprocessArgs) -> Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(v) = args.bpe_merges {
        cfg.bpe_merges = v;
    }
    if let Some(v) = args.vocab_cap {
        cfg.vocab_cap = v;
    }
    if let Some(v) = args.code_k {
        cfg.code_k = v;
    }
    log_config(&cfg);

    let records = load_parallel_corpus(
        &args.train_src,
        &args.train_tgt,
        args.train_tags.as_deref(),
    )?;
    if records.is_empty() {
        bail!("empty corpus: {}", args.train_src.display());
    }
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let src_lines: Vec<Vec<String>> = records.iter().map(|r| r.source.clone()).collect();
    let tgt_lines: Vec<Vec<String>> = records.iter().map(|r| r.target.clone()).collect();
    let bpe_src = BpeModel::learn_from_lines(&src_lines, cfg.bpe_merges)?;
    let bpe_tgt = BpeModel::learn_from_lines(&tgt_lines, cfg.bpe_merges)?;
    bpe_src.save(&args.out_dir.join("bpe.src"))?;
    bpe_tgt.save(&args.out_dir.join("bpe.tgt"))?;

    let enc_src: Vec<Vec<String>> = src_lines.iter().map(|l| bpe_src.apply_line(l)).collect();
    let enc_tgt: Vec<Vec<String>> = tgt_lines.iter().map(|l| bpe_tgt.apply_line(l)).collect();
    write_token_lines(&args.out_dir.join("train.src"), &enc_src)?;
    write_token_lines(&args.out_dir.join("train.tgt"), &enc_tgt)?;
    // The tag file stays aligned to pre-BPE words, so the raw targets
    // travel along for the tag-consuming stages.
    write_token_lines(&args.out_dir.join("train.tgt.words"), &tgt_lines)?;
    if let Some(tags) = &args.train_tags {
        fs::copy(tags, args.out_dir.join("train.tgt.pos"))
            .with_context(|| format!("copying {}", tags.display()))?;
    }

    let vocab_src = Vocabulary::build(&enc_src, cfg.vocab_cap, 0)?;
    let vocab_tgt = Vocabulary::build(&enc_tgt, cfg.vocab_cap, cfg.code_k)?;
    vocab_src.save(&args.out_dir.join("vocab.src"))?;
    vocab_tgt.save(&args.out_dir.join("vocab.tgt"))?;

    eprintln!(
        "preprocess: {} sentences, {} src / {} tgt vocabulary entries",
        records.len(),
        vocab_src.len(),
        vocab_tgt.len()
    );
    Ok(())
}

pub fn simplify_tags_filter() -> Result<()> {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        let tags: Vec<&str> = line.split_whitespace().collect();
        writeln!(out, "{}", simplify_tags(&tags).join(" ")).context("writing stdout")?;
    }
    Ok(())
}

/// The BPE-encoded pair the translation stages train on.
fn load_encoded_corpus(dir: &Path) -> Result<Vec<plannmt::textpipe::SentenceRecord>> {
    Ok(load_parallel_corpus(
        &dir.join("train.src"),
        &dir.join("train.tgt"),
        None,
    )?)
}

/// Encoded sources with the raw target words, which is what the tag file
/// aligns to. Tags are optional so extraction can fall back per sentence.
fn load_tagged_corpus(
    dir: &Path,
    require_tags: bool,
) -> Result<Vec<plannmt::textpipe::SentenceRecord>> {
    let tag_path = dir.join("train.tgt.pos");
    let tags = if tag_path.exists() {
        Some(tag_path)
    } else if require_tags {
        bail!(
            "{} not found; preprocess with --train-tags first",
            tag_path.display()
        );
    } else {
        None
    };
    Ok(load_parallel_corpus(
        &dir.join("train.src"),
        &dir.join("train.tgt.words"),
        tags.as_deref(),
    )?)
}

pub fn train_codes(global: &Global, args: &TrainCodesArgs) -> Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(v) = args.n {
        cfg.code_n = v;
    }
    if let Some(v) = args.k {
        cfg.code_k = v;
    }
    if let Some(v) = args.hidden {
        cfg.code_hidden = v;
    }
    if let Some(v) = args.embed {
        cfg.code_embed = v;
    }
    if let Some(v) = args.tau {
        cfg.code_tau = v;
    }
    if let Some(v) = args.hard {
        cfg.code_hard = v;
    }
    if let Some(v) = args.anneal_tau {
        cfg.code_anneal_tau = v;
    }
    if let Some(v) = args.epochs {
        cfg.code_epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.code_lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.code_batch_size = v;
    }
    if let Some(v) = args.holdout {
        cfg.code_holdout = v;
    }
    log_config(&cfg);

    let records = load_tagged_corpus(&args.corpus_dir, true)?;
    let vocab = Vocabulary::load(&args.corpus_dir.join("vocab.src"))?;
    let config = cfg.code_config();
    let (store, log) = codemodel::train_code_model(&records, &vocab, &config)?;
    for e in &log.epochs {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  tau {:.3}",
            e.epoch, e.train_loss, e.val_loss, e.tau
        );
    }
    eprintln!(
        "best epoch {} ({} train / {} validation sentences)",
        log.best_epoch, log.num_train, log.num_val
    );

    let ckpt = Checkpoint::new(ModelKind::CodeModel, store)
        .with_config_text(cfg.render())
        .with_vocab_hash("src", vocab.content_hash());
    save_checkpoint(&ckpt, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

/// Rebuild the pipeline config a checkpoint was trained under.
fn checkpoint_config(ckpt: &Checkpoint) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    cfg.merge_text(&ckpt.config_text)
        .context("parsing the checkpoint's config snapshot")?;
    Ok(cfg)
}

pub fn extract_codes(global: &Global, args: &ExtractCodesArgs) -> Result<()> {
    let ckpt = load_checkpoint_of_kind(&args.model, ModelKind::CodeModel)?;
    let cfg = checkpoint_config(&ckpt)?;
    let _ = global;
    log_config(&cfg);

    let vocab = Vocabulary::load(&args.corpus_dir.join("vocab.src"))?;
    ckpt.check_vocab(&args.model, "src", vocab.content_hash())?;
    let records = load_tagged_corpus(&args.corpus_dir, false)?;
    let codes = codemodel::extract_codes(&records, &ckpt.params, &cfg.code_config())?;
    save_codes(&args.out, &codes)?;
    eprintln!("wrote {} assignments to {}", codes.len(), args.out.display());
    Ok(())
}

pub fn augment(global: &Global, args: &AugmentArgs) -> Result<()> {
    let cfg = resolve_config(global)?;
    log_config(&cfg);
    let records = load_encoded_corpus(&args.corpus_dir)?;
    let codes = load_codes(&args.codes, None)?;
    let augmented = augment_targets_with_codes(&records, &codes)?;
    let out_path = args
        .out_tgt
        .clone()
        .unwrap_or_else(|| args.corpus_dir.join("train.aug.tgt"));
    let lines: Vec<Vec<String>> = augmented.into_iter().map(|r| r.target).collect();
    write_token_lines(&out_path, &lines)?;
    eprintln!("wrote {}", out_path.display());
    Ok(())
}

pub fn train_nmt(global: &Global, args: &TrainNmtArgs) -> Result<()> {
    let mut cfg = resolve_config(global)?;
    if let Some(v) = args.hidden {
        cfg.nmt_hidden = v;
    }
    if let Some(v) = args.dropout {
        cfg.nmt_dropout = v;
    }
    if let Some(v) = args.lr {
        cfg.nmt_lr = v;
    }
    if let Some(v) = args.anneal_factor {
        cfg.nmt_anneal_factor = v;
    }
    if let Some(v) = args.anneal_patience {
        cfg.nmt_anneal_patience = v;
    }
    if let Some(v) = args.epochs {
        cfg.nmt_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.nmt_batch_size = v;
    }
    if let Some(v) = args.holdout {
        cfg.nmt_holdout = v;
    }
    log_config(&cfg);

    let tgt_path = args
        .tgt
        .clone()
        .unwrap_or_else(|| args.corpus_dir.join("train.aug.tgt"));
    let src_lines = read_lines(&args.corpus_dir.join("train.src"))?;
    let tgt_lines = read_lines(&tgt_path)?;
    if src_lines.len() != tgt_lines.len() {
        bail!(
            "{}: {} lines, but {} has {}",
            args.corpus_dir.join("train.src").display(),
            src_lines.len(),
            tgt_path.display(),
            tgt_lines.len()
        );
    }
    let vocab_src = Vocabulary::load(&args.corpus_dir.join("vocab.src"))?;
    let vocab_tgt = Vocabulary::load(&args.corpus_dir.join("vocab.tgt"))?;
    let examples: Vec<NmtExample> = src_lines
        .iter()
        .zip(&tgt_lines)
        .map(|(s, t)| NmtExample {
            src: vocab_src.encode_seq(&s.split_whitespace().collect::<Vec<_>>()),
            tgt: vocab_tgt.encode_seq(&t.split_whitespace().collect::<Vec<_>>()),
        })
        .collect();

    let config = cfg.nmt_config();
    let init = match &args.init {
        Some(path) => {
            let prev = load_checkpoint_of_kind(path, ModelKind::Translation)?;
            prev.check_vocab(path, "src", vocab_src.content_hash())?;
            prev.check_vocab(path, "tgt", vocab_tgt.content_hash())?;
            prev.params
        }
        None => nmt::build_params(&config, vocab_src.len(), vocab_tgt.len()),
    };
    let (store, log) = nmt::train_nmt(&examples, init, EOS_ID, &config)?;
    for e in &log.epochs {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  lr {:.5}",
            e.epoch, e.train_loss, e.val_loss, e.lr
        );
    }
    eprintln!(
        "best epoch {} after {} steps ({} train / {} validation sentences)",
        log.best_epoch,
        log.step_losses.len(),
        log.num_train,
        log.num_val
    );

    let ckpt = Checkpoint::new(ModelKind::Translation, store)
        .with_config_text(cfg.render())
        .with_vocab_hash("src", vocab_src.content_hash())
        .with_vocab_hash("tgt", vocab_tgt.content_hash());
    save_checkpoint(&ckpt, &args.out)?;
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

/// Split a decoded id sequence into its code-prefix surfaces and the ids
/// of everything the prefix covers (codes plus the separator).
fn emitted_prefix(ids: &[usize], vocab_tgt: &Vocabulary) -> Vec<String> {
    let mut out = Vec::new();
    for &id in ids {
        if vocab_tgt.code_of_id(id).is_some() {
            out.push(vocab_tgt.token(id).to_string());
        } else {
            break;
        }
    }
    out
}

pub fn translate(global: &Global, args: &TranslateArgs) -> Result<()> {
    let ckpt = load_checkpoint_of_kind(&args.model, ModelKind::Translation)?;
    let mut cfg = checkpoint_config(&ckpt)?;
    if let Some(path) = &global.config {
        cfg.merge_file(path)?;
    }
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.beam {
        cfg.beam = v;
    }
    if let Some(v) = args.max_len {
        cfg.nmt_max_len = v;
    }
    log_config(&cfg);

    let vocab_src = Vocabulary::load(&args.corpus_dir.join("vocab.src"))?;
    let vocab_tgt = Vocabulary::load(&args.corpus_dir.join("vocab.tgt"))?;
    ckpt.check_vocab(&args.model, "src", vocab_src.content_hash())?;
    ckpt.check_vocab(&args.model, "tgt", vocab_tgt.content_hash())?;
    let bpe_src = BpeModel::load(&args.corpus_dir.join("bpe.src"))?;

    let forced: Option<Vec<usize>> = match &args.code {
        Some(spec) => {
            let assignment = parse_code_spec(spec)?;
            assignment.validate(assignment.len(), cfg.code_k)?;
            let mut ids = Vec::with_capacity(assignment.len() + 1);
            for &c in &assignment.0 {
                ids.push(
                    vocab_tgt
                        .id_of_code(c)
                        .with_context(|| format!("code ⟨c{}⟩ is not in the target vocabulary", c + 1))?,
                );
            }
            ids.push(EOC_ID);
            Some(ids)
        }
        None => None,
    };

    let config = cfg.nmt_config();
    let mut out_lines = String::new();
    let mut code_lines = String::new();
    for line in read_lines(&args.input)? {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            out_lines.push('\n');
            code_lines.push('\n');
            continue;
        }
        let src_ids = vocab_src.encode_seq(&bpe_src.apply_line(&words));
        let hyps = beam_search(&ckpt.params, &src_ids, &config, cfg.beam, forced.as_deref())?;
        let best = hyps
            .first()
            .with_context(|| format!("no finished hypothesis for '{line}'"))?;
        let ids = best.translation_ids();
        code_lines.push_str(&emitted_prefix(ids, &vocab_tgt).join(" "));
        code_lines.push('\n');
        let stripped = strip_codes(ids, vocab_tgt.num_codes());
        let words = join_bpe(&vocab_tgt.decode_seq(&stripped));
        out_lines.push_str(&words.join(" "));
        out_lines.push('\n');
    }
    write_text(&args.out, &out_lines)?;
    if let Some(path) = &args.codes_out {
        write_text(path, &code_lines)?;
    }
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

pub fn bleu(args: &BleuArgs) -> Result<()> {
    let split = |lines: Vec<String>| -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    };
    let hyps = split(read_lines(&args.hyp)?);
    let refs = split(read_lines(&args.reference)?);
    let report = corpus_bleu(&hyps, &refs)?;
    println!("{report}");
    Ok(())
}

pub fn code_stats(global: &Global, args: &CodeStatsArgs) -> Result<()> {
    let cfg = resolve_config(global)?;
    log_config(&cfg);
    let assignments = load_codes(&args.codes, None)?;
    if assignments.is_empty() {
        bail!("{}: no assignments", args.codes.display());
    }
    let n = assignments[0].len();
    if let Some(bad) = assignments.iter().position(|a| a.len() != n) {
        bail!(
            "{} line {}: expected {} codes, found {}",
            args.codes.display(),
            bad + 1,
            n,
            assignments[bad].len()
        );
    }
    let observed = assignments
        .iter()
        .flat_map(|a| a.0.iter().copied())
        .max()
        .unwrap_or(0);
    let k = args.k.unwrap_or(cfg.code_k).max(observed + 1);
    let csv = histogram_csv(&code_distribution(&assignments, n, k));
    match &args.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn code_model_check(seed: u64) -> Result<(f64, bool)> {
    let config = CodeConfig {
        n: 2,
        k: 3,
        hidden: 4,
        embed: 3,
        hard: false,
        seed,
        ..CodeConfig::default()
    };
    let mut store = codemodel::build_params(&config, 7);
    let examples = vec![
        CodeExample {
            src_ids: vec![3, 4],
            tag_ids: encode_tag_symbols(&["N", "V", "."]),
        },
        CodeExample {
            src_ids: vec![5, 6, 3],
            tag_ids: encode_tag_symbols(&["PRP", "V", "N", "."]),
        },
        CodeExample {
            src_ids: vec![4],
            tag_ids: encode_tag_symbols(&["N", "."]),
        },
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let noise: Vec<Vec<Vec<f64>>> = examples
        .iter()
        .map(|_| (0..config.n).map(|_| sample_gumbel(&mut rng, config.k)).collect())
        .collect();
    let refs: Vec<&CodeExample> = examples.iter().collect();
    let report = check_gradients(&mut store, 1e-4, |store, tape| {
        codemodel::batch_loss(tape, store, &refs, Some(&noise), config.tau, &config).map_err(
            |e| match e {
                CodeModelError::Num(n) => n,
                other => NumError::Contract {
                    context: other.to_string(),
                },
            },
        )
    })?;
    let worst = report.worst().map(|(_, e)| e).unwrap_or(0.0);
    Ok((worst, report.passed()))
}

fn translation_check(seed: u64) -> Result<(f64, bool)> {
    let config = NmtConfig {
        hidden: 3,
        dropout: 0.0,
        seed,
        ..NmtConfig::default()
    };
    let mut store = nmt::build_params(&config, 5, 6);
    // move off the symmetric init so no gradient component cancels into
    // the finite-difference noise floor
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ff5e7);
    let names: Vec<String> = store.names().cloned().collect();
    for name in &names {
        for v in store.get_mut(name).expect("listed name").data_mut() {
            *v = rng.gen_range(-0.5..0.5);
        }
    }
    let examples = [
        NmtExample {
            src: vec![2, 3],
            tgt: vec![4, 5, 3],
        },
        NmtExample {
            src: vec![4],
            tgt: vec![3],
        },
    ];
    let refs: Vec<&NmtExample> = examples.iter().collect();
    let report = check_gradients(&mut store, 1e-4, |store, tape| {
        nmt::batch_loss(tape, store, &refs, EOS_ID, &config).map_err(|e| match e {
            NmtError::Num(n) => n,
            other => NumError::Contract {
                context: other.to_string(),
            },
        })
    })?;
    let worst = report.worst().map(|(_, e)| e).unwrap_or(0.0);
    Ok((worst, report.passed()))
}

pub fn gradcheck(global: &Global) -> Result<()> {
    let cfg = resolve_config(global)?;
    log_config(&cfg);
    let (code_err, code_ok) = code_model_check(cfg.seed)?;
    println!(
        "code model:        max rel err {code_err:.2e} (tolerance 1e-4) {}",
        if code_ok { "ok" } else { "FAIL" }
    );
    let (nmt_err, nmt_ok) = translation_check(cfg.seed)?;
    println!(
        "translation model: max rel err {nmt_err:.2e} (tolerance 1e-4) {}",
        if nmt_ok { "ok" } else { "FAIL" }
    );
    if !code_ok || !nmt_ok {
        bail!("gradient check failed");
    }
    Ok(())
}
