//! Oracle-checkable synthetic data: voice attributes, descriptions and
//! speech-token sequences.

mod attrs;
mod corpus;
mod grammar;
mod templates;

pub use attrs::{Attribute, Gender, Pitch, Speed, Style, VoiceAttributes};
pub use corpus::{
    build_corpus, generate_corpus, random_transcript, Corpus, CorpusPaths, CorpusSpec, BASE_FILE,
    FINETUNE_FILE, MAX_WORDS, MIN_WORDS, TEST_IN_FILE, TEST_OOD_FILE, TEXT_EVAL_FILE, TTS_FILE,
    WORDS,
};
pub use grammar::{
    body_token, header, oracle_decode, speech_encode, DecodeMode, Decoded, BODY_ALPHABET,
    BODY_BASE, BODY_SIZE, HEADER_LEN, SPEECH_VOCAB_SIZE,
};
pub use templates::{
    attribute_code, bridge_sentence, render_description, value_name, FamilyKind, TemplateFamily,
    STOPWORDS,
};
