//! Shared fixtures for the benchmarks: small trained-shape models and toy
//! batches sized so one measured iteration stays in the low milliseconds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plannmt::codemodel::{self, CodeConfig, CodeExample};
use plannmt::nmt::{self, NmtConfig, NmtExample};
use plannmt::numcore::ParamStore;
use plannmt::textpipe::Vocabulary;
use plannmt::toygen;

pub struct CodeFixture {
    pub store: ParamStore,
    pub config: CodeConfig,
    pub examples: Vec<CodeExample>,
    pub noise: Vec<Vec<Vec<f64>>>,
}

pub struct NmtFixture {
    pub store: ParamStore,
    pub config: NmtConfig,
    pub examples: Vec<NmtExample>,
    pub src: Vec<usize>,
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().cloned().collect();
    for name in &names {
        for v in store.get_mut(name).expect("listed name").data_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    }
}

/// A code-model batch in training shape: 16 tagged toy sentences with
/// pre-drawn Gumbel noise.
pub fn code_fixture() -> CodeFixture {
    let config = CodeConfig {
        n: 2,
        k: 4,
        hidden: 32,
        embed: 16,
        seed: 7,
        ..CodeConfig::default()
    };
    let sents = toygen::generate(64, 4, 7);
    let records = toygen::to_records(&sents);
    let src_lines: Vec<Vec<String>> = sents.iter().map(|s| s.source.clone()).collect();
    let vocab = Vocabulary::build(&src_lines, 1000, 0).expect("toy vocabulary");
    let examples: Vec<CodeExample> = records
        .iter()
        .filter_map(|r| codemodel::prepare_example(r, &vocab))
        .take(16)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let noise = examples
        .iter()
        .map(|_| {
            (0..config.n)
                .map(|_| codemodel::sample_gumbel(&mut rng, config.k))
                .collect()
        })
        .collect();
    let store = codemodel::build_params(&config, vocab.len());
    CodeFixture {
        store,
        config,
        examples,
        noise,
    }
}

/// A translation batch and a single decode input over the toy corpus.
pub fn nmt_fixture() -> NmtFixture {
    let config = NmtConfig {
        hidden: 32,
        dropout: 0.0,
        seed: 9,
        ..NmtConfig::default()
    };
    let sents = toygen::generate(64, 4, 9);
    let src_lines: Vec<Vec<String>> = sents.iter().map(|s| s.source.clone()).collect();
    let tgt_lines: Vec<Vec<String>> = sents.iter().map(|s| s.target.clone()).collect();
    let vocab_src = Vocabulary::build(&src_lines, 1000, 0).expect("toy vocabulary");
    let vocab_tgt = Vocabulary::build(&tgt_lines, 1000, 4).expect("toy vocabulary");
    let examples: Vec<NmtExample> = sents
        .iter()
        .take(16)
        .map(|s| NmtExample {
            src: vocab_src.encode_seq(&s.source),
            tgt: vocab_tgt.encode_seq(&s.target),
        })
        .collect();
    let src = examples[0].src.clone();
    let mut store = nmt::build_params(&config, vocab_src.len(), vocab_tgt.len());
    randomize(&mut store, 90);
    NmtFixture {
        store,
        config,
        examples,
        src,
    }
}
