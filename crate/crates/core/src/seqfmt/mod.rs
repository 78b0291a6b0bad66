//! Vocabulary layout, chat-template assembly and corpus records.

mod chars;
mod record;
mod template;
mod vocab;

pub use chars::{CharTokenizer, ALPHABET};
pub use record::{read_corpus, write_corpus, CorpusRecord, Domain};
pub use template::{
    assemble_example, assemble_text_chat, decode_assistant, ChatExample, EncodedSequence,
};
pub use vocab::{build_vocabulary, modality_of, Modality, Special, TokenId, Vocabulary};

/// System prompt used for every conversation.
pub const SYSTEM_PROMPT: &str = "read aloud.";
