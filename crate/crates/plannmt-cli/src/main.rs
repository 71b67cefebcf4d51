//! `plannmt`: the structure-planned translation pipeline as subcommands.
//!
//! The usual order is preprocess → train-codes → extract-codes → augment →
//! train-nmt → translate → bleu, with simplify-tags, code-stats, and
//! gradcheck as standalone utilities. Usage errors exit 2 (clap's
//! default); everything else that fails exits 1 with a message.

use std::path::PathBuf;
use std::process;

use clap::{Args, Parser, Subcommand};

mod config;
mod pipeline;

#[derive(Parser)]
#[command(name = "plannmt", version, about = "Structure-planned translation pipeline")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Global {
    /// Config file of `key = value` lines
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config file and PLNMT_SEED)
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE, encode the corpus, and build the vocabularies
    Preprocess(PreprocessArgs),
    /// Simplify POS tag lines from stdin to stdout
    SimplifyTags,
    /// Train the structure code model on a preprocessed corpus
    TrainCodes(TrainCodesArgs),
    /// Assign a planner code to every sentence of a corpus
    ExtractCodes(ExtractCodesArgs),
    /// Prefix target sentences with their assigned codes
    Augment(AugmentArgs),
    /// Train the translation model on code-augmented targets
    TrainNmt(TrainNmtArgs),
    /// Beam-search translate a file of source sentences
    Translate(TranslateArgs),
    /// Score a hypothesis file against a reference file
    Bleu(BleuArgs),
    /// Histogram of assigned codes as CSV
    CodeStats(CodeStatsArgs),
    /// Finite-difference checks of both models' gradients
    Gradcheck,
}

#[derive(Args)]
pub struct PreprocessArgs {
    /// Tokenized source sentences, one per line
    #[arg(long)]
    train_src: PathBuf,
    /// Tokenized target sentences, one per line
    #[arg(long)]
    train_tgt: PathBuf,
    /// POS tags aligned to the target words, one line per sentence
    #[arg(long)]
    train_tags: Option<PathBuf>,
    /// Directory for the encoded corpus, BPE models, and vocabularies
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    bpe_merges: Option<usize>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    /// Code alphabet size reserved in the target vocabulary
    #[arg(long)]
    code_k: Option<usize>,
}

#[derive(Args)]
pub struct TrainCodesArgs {
    /// Directory written by preprocess
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Codes per sentence
    #[arg(long)]
    n: Option<usize>,
    /// Code alphabet size
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    /// Gumbel-Softmax temperature
    #[arg(long)]
    tau: Option<f64>,
    /// Straight-through hard sampling (true/false)
    #[arg(long)]
    hard: Option<bool>,
    #[arg(long)]
    anneal_tau: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Validation fraction held out of training
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args)]
pub struct ExtractCodesArgs {
    /// Code-model checkpoint
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Assignment file to write, one surface code line per sentence
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Assignment file from extract-codes
    #[arg(long)]
    codes: PathBuf,
    /// Augmented target file to write (default: <corpus-dir>/train.aug.tgt)
    #[arg(long)]
    out_tgt: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainNmtArgs {
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Target file to train on (default: <corpus-dir>/train.aug.tgt)
    #[arg(long)]
    tgt: Option<PathBuf>,
    /// Checkpoint to write
    #[arg(long)]
    out: PathBuf,
    /// Warm-start from an existing translation checkpoint
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    anneal_factor: Option<f64>,
    /// Steps without a new best loss before the rate drops
    #[arg(long)]
    anneal_patience: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    holdout: Option<f64>,
}

#[derive(Args)]
pub struct TranslateArgs {
    /// Translation-model checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Directory holding the BPE models and vocabularies
    #[arg(long)]
    corpus_dir: PathBuf,
    /// Tokenized source sentences to translate
    #[arg(long)]
    input: PathBuf,
    /// Translation file to write, code prefix stripped
    #[arg(long)]
    out: PathBuf,
    /// Side file recording each sentence's emitted code prefix
    #[arg(long)]
    codes_out: Option<PathBuf>,
    /// Force this code prefix, e.g. "⟨c2⟩,⟨c1⟩" or "1,0"
    #[arg(long)]
    code: Option<String>,
    #[arg(long)]
    beam: Option<usize>,
    /// Decode length cap (default: 2·source length + 10)
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
pub struct BleuArgs {
    /// Hypothesis file, one tokenized sentence per line
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file, aligned by line
    #[arg(long = "ref")]
    reference: PathBuf,
}

#[derive(Args)]
pub struct CodeStatsArgs {
    /// Assignment file from extract-codes
    #[arg(long)]
    codes: PathBuf,
    /// Code alphabet size (default: config, widened to fit the data)
    #[arg(long)]
    k: Option<usize>,
    /// CSV file to write (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(args) => pipeline::preprocess(&cli.global, &args),
        Command::SimplifyTags => pipeline::simplify_tags_filter(),
        Command::TrainCodes(args) => pipeline::train_codes(&cli.global, &args),
        Command::ExtractCodes(args) => pipeline::extract_codes(&cli.global, &args),
        Command::Augment(args) => pipeline::augment(&cli.global, &args),
        Command::TrainNmt(args) => pipeline::train_nmt(&cli.global, &args),
        Command::Translate(args) => pipeline::translate(&cli.global, &args),
        Command::Bleu(args) => pipeline::bleu(&args),
        Command::CodeStats(args) => pipeline::code_stats(&cli.global, &args),
        Command::Gradcheck => pipeline::gradcheck(&cli.global),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        process::exit(1);
    }
}
