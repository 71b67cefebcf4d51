//! End-to-end checks of the `plannmt` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use plannmt::textpipe::is_reserved_surface;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_plannmt"));
    cmd.env_remove("PLNMT_SEED");
    cmd
}

fn ok(output: &Output) -> &Output {
    assert!(
        output.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

/// Toy parallel files with tags, written under `dir`.
fn write_toy_corpus(dir: &Path, pairs: usize, orderings: usize, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let sents = plannmt::toygen::generate(pairs, orderings, seed);
    plannmt::toygen::write_files(&sents, dir, "toy").unwrap();
    (
        dir.join("toy.src"),
        dir.join("toy.tgt"),
        dir.join("toy.tgt.pos"),
    )
}

#[test]
fn usage_errors_exit_two() {
    let out = bin().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["bleu", "--hyp"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["translate", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simplify_tags_reproduces_the_worked_example() {
    let mut child = bin()
        .arg("simplify-tags")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"PRP VBD DT NN IN DT NN .\n\nNN NNS VBZ\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_of(&out), "PRP V N .\n\nN V\n");
}

#[test]
fn unknown_config_key_exits_one_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "seed = 3\ncode_size = 4\n").unwrap();
    let codes = dir.path().join("codes.txt");
    fs::write(&codes, "⟨c1⟩\n").unwrap();
    let out = bin()
        .args(["code-stats", "--codes"])
        .arg(&codes)
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("code_size"), "{}", stderr_of(&out));
}

#[test]
fn seed_precedence_is_flag_file_env_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("seed.conf");
    fs::write(&cfg, "seed = 5\n").unwrap();
    let codes = dir.path().join("codes.txt");
    fs::write(&codes, "⟨c1⟩\n").unwrap();

    let logged_seed = |cmd: &mut Command| -> String {
        let out = cmd.output().unwrap();
        ok(&out);
        stderr_of(&out)
            .lines()
            .find(|l| l.trim().starts_with("seed ="))
            .expect("resolved config logs the seed")
            .trim()
            .to_string()
    };

    let mut all = bin();
    all.args(["code-stats", "--codes"])
        .arg(&codes)
        .arg("--config")
        .arg(&cfg)
        .args(["--seed", "3"])
        .env("PLNMT_SEED", "9");
    assert_eq!(logged_seed(&mut all), "seed = 3");

    let mut file_beats_env = bin();
    file_beats_env
        .args(["code-stats", "--codes"])
        .arg(&codes)
        .arg("--config")
        .arg(&cfg)
        .env("PLNMT_SEED", "9");
    assert_eq!(logged_seed(&mut file_beats_env), "seed = 5");

    let mut env_only = bin();
    env_only
        .args(["code-stats", "--codes"])
        .arg(&codes)
        .env("PLNMT_SEED", "9");
    assert_eq!(logged_seed(&mut env_only), "seed = 9");

    let mut defaulted = bin();
    defaulted.args(["code-stats", "--codes"]).arg(&codes);
    assert_eq!(logged_seed(&mut defaulted), "seed = 1");
}

#[test]
fn gradcheck_passes() {
    let out = bin().args(["gradcheck", "--seed", "11"]).output().unwrap();
    ok(&out);
    let text = stdout_of(&out);
    assert_eq!(text.matches(" ok").count(), 2, "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn bleu_scores_identical_files_at_100() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("same.txt");
    fs::write(&f, "the cat sat .\na dog barked .\n").unwrap();
    let out = bin()
        .args(["bleu", "--hyp"])
        .arg(&f)
        .arg("--ref")
        .arg(&f)
        .output()
        .unwrap();
    ok(&out);
    assert!(stdout_of(&out).starts_with("BLEU = 100.00,"), "{}", stdout_of(&out));
}

#[test]
fn full_toy_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt, pos) = write_toy_corpus(dir.path(), 60, 2, 41);
    let corpus = dir.path().join("corpus");
    let code_ckpt = dir.path().join("codes.ckpt");
    let codes_txt = dir.path().join("codes.txt");
    let nmt_ckpt = dir.path().join("nmt.ckpt");

    ok(&bin()
        .args(["preprocess", "--train-src"])
        .arg(&src)
        .arg("--train-tgt")
        .arg(&tgt)
        .arg("--train-tags")
        .arg(&pos)
        .arg("--out-dir")
        .arg(&corpus)
        .args(["--bpe-merges", "40", "--vocab-cap", "200", "--code-k", "2"])
        .output()
        .unwrap());
    for name in [
        "bpe.src",
        "bpe.tgt",
        "train.src",
        "train.tgt",
        "train.tgt.words",
        "train.tgt.pos",
        "vocab.src",
        "vocab.tgt",
    ] {
        assert!(corpus.join(name).exists(), "missing {name}");
    }

    let train_codes = |out: &Path| {
        let output = bin()
            .args(["train-codes", "--corpus-dir"])
            .arg(&corpus)
            .arg("--out")
            .arg(out)
            .args([
                "--n", "1", "--k", "2", "--hidden", "8", "--embed", "4", "--epochs", "2",
                "--seed", "7",
            ])
            .output()
            .unwrap();
        ok(&output);
    };
    train_codes(&code_ckpt);
    // same inputs, same seed: byte-identical checkpoint
    let again = dir.path().join("codes2.ckpt");
    train_codes(&again);
    assert_eq!(fs::read(&code_ckpt).unwrap(), fs::read(&again).unwrap());

    ok(&bin()
        .args(["extract-codes", "--model"])
        .arg(&code_ckpt)
        .arg("--corpus-dir")
        .arg(&corpus)
        .arg("--out")
        .arg(&codes_txt)
        .output()
        .unwrap());
    let code_lines = fs::read_to_string(&codes_txt).unwrap();
    assert_eq!(code_lines.lines().count(), 60);

    ok(&bin()
        .args(["augment", "--corpus-dir"])
        .arg(&corpus)
        .arg("--codes")
        .arg(&codes_txt)
        .output()
        .unwrap());
    let aug = fs::read_to_string(corpus.join("train.aug.tgt")).unwrap();
    for (aug_line, code_line) in aug.lines().zip(code_lines.lines()) {
        assert!(aug_line.starts_with(&format!("{code_line} ⟨eoc⟩ ")));
    }

    ok(&bin()
        .args(["train-nmt", "--corpus-dir"])
        .arg(&corpus)
        .arg("--out")
        .arg(&nmt_ckpt)
        .args(["--hidden", "8", "--epochs", "1", "--dropout", "0.0", "--seed", "7"])
        .output()
        .unwrap());

    // a code-model checkpoint is not a translation init
    let crossed = bin()
        .args(["train-nmt", "--corpus-dir"])
        .arg(&corpus)
        .arg("--out")
        .arg(dir.path().join("ignored.ckpt"))
        .arg("--init")
        .arg(&code_ckpt)
        .args(["--hidden", "8", "--epochs", "1"])
        .output()
        .unwrap();
    assert_eq!(crossed.status.code(), Some(1));
    assert!(
        stderr_of(&crossed).contains("structure code model"),
        "{}",
        stderr_of(&crossed)
    );

    let input = dir.path().join("test.src");
    let hyp = dir.path().join("test.hyp");
    let side = dir.path().join("test.codes");
    fs::write(&input, "cat_s he_s sees_s .\n\ndog_s she_s finds_s .\n").unwrap();
    let translate = |code: Option<&str>, hyp: &Path, side: &Path| {
        let mut cmd = bin();
        cmd.args(["translate", "--model"])
            .arg(&nmt_ckpt)
            .arg("--corpus-dir")
            .arg(&corpus)
            .arg("--input")
            .arg(&input)
            .arg("--out")
            .arg(hyp)
            .arg("--codes-out")
            .arg(side)
            .args(["--beam", "2"]);
        if let Some(c) = code {
            cmd.args(["--code", c]);
        }
        ok(&cmd.output().unwrap());
    };

    translate(Some("⟨c2⟩"), &hyp, &side);
    assert_eq!(fs::read_to_string(&side).unwrap(), "⟨c2⟩\n\n⟨c2⟩\n");
    let hyp_text = fs::read_to_string(&hyp).unwrap();
    assert_eq!(hyp_text.lines().count(), 3);
    assert_eq!(hyp_text.lines().nth(1), Some(""));
    for token in hyp_text.split_whitespace() {
        assert!(!is_reserved_surface(token), "reserved {token} in output");
    }

    // numeric form addresses the same code; identical run, identical bytes
    let hyp2 = dir.path().join("test2.hyp");
    let side2 = dir.path().join("test2.codes");
    translate(Some("1"), &hyp2, &side2);
    assert_eq!(fs::read(&hyp).unwrap(), fs::read(&hyp2).unwrap());
    assert_eq!(fs::read(&side).unwrap(), fs::read(&side2).unwrap());

    // out-of-range forced code is a module error
    let bad = bin()
        .args(["translate", "--model"])
        .arg(&nmt_ckpt)
        .arg("--corpus-dir")
        .arg(&corpus)
        .arg("--input")
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("bad.hyp"))
        .args(["--code", "⟨c9⟩"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let refs = dir.path().join("test.ref");
    fs::write(&refs, "the cat he sees .\n\nshe finds the dog .\n").unwrap();
    let scored = bin()
        .args(["bleu", "--hyp"])
        .arg(&hyp)
        .arg("--ref")
        .arg(&refs)
        .output()
        .unwrap();
    ok(&scored);
    assert!(stdout_of(&scored).starts_with("BLEU = "), "{}", stdout_of(&scored));

    let stats = bin()
        .args(["code-stats", "--codes"])
        .arg(&codes_txt)
        .args(["--k", "2"])
        .output()
        .unwrap();
    ok(&stats);
    let csv = stdout_of(&stats);
    assert!(csv.starts_with("code,count,fraction\n"), "{csv}");
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn translate_rejects_a_code_model_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt, pos) = write_toy_corpus(dir.path(), 30, 2, 43);
    let corpus = dir.path().join("corpus");
    ok(&bin()
        .args(["preprocess", "--train-src"])
        .arg(&src)
        .arg("--train-tgt")
        .arg(&tgt)
        .arg("--train-tags")
        .arg(&pos)
        .arg("--out-dir")
        .arg(&corpus)
        .args(["--bpe-merges", "20", "--vocab-cap", "150", "--code-k", "2"])
        .output()
        .unwrap());
    let ckpt = dir.path().join("codes.ckpt");
    ok(&bin()
        .args(["train-codes", "--corpus-dir"])
        .arg(&corpus)
        .arg("--out")
        .arg(&ckpt)
        .args(["--n", "1", "--k", "2", "--hidden", "6", "--embed", "4", "--epochs", "1"])
        .output()
        .unwrap());
    let out = bin()
        .args(["translate", "--model"])
        .arg(&ckpt)
        .arg("--corpus-dir")
        .arg(&corpus)
        .arg("--input")
        .arg(&src)
        .arg("--out")
        .arg(dir.path().join("x.hyp"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(
        stderr_of(&out).contains("expected a translation model"),
        "{}",
        stderr_of(&out)
    );
}
