//! Autoregressive speech-token decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::moe::MoeModel;
use crate::error::{Error, Result};
use crate::seqfmt::{EncodedSequence, Special, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Sampling {
    Greedy,
    TopK { k: usize, temperature: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerateOptions {
    pub sampling: Sampling,
    pub max_len: usize,
    pub seed: u64,
    /// Reuse keys/values across steps instead of re-running the whole prefix.
    pub use_cache: bool,
}

impl GenerateOptions {
    pub fn greedy(max_len: usize) -> Self {
        GenerateOptions {
            sampling: Sampling::Greedy,
            max_len,
            seed: 0,
            use_cache: true,
        }
    }
}

fn pick(candidates: &[(TokenId, f64)], sampling: Sampling, rng: &mut ChaCha8Rng) -> Result<TokenId> {
    match sampling {
        Sampling::Greedy => {
            // Ties resolve to the lowest id.
            let mut best = candidates[0];
            for &c in &candidates[1..] {
                if c.1 > best.1 {
                    best = c;
                }
            }
            Ok(best.0)
        }
        Sampling::TopK { k, temperature } => {
            if k == 0 || !(temperature > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "top-k sampling needs k >= 1 and temperature > 0 (got {k}, {temperature})"
                )));
            }
            let mut sorted = candidates.to_vec();
            sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sorted.truncate(k);
            let max = sorted[0].1;
            let weights: Vec<f64> = sorted
                .iter()
                .map(|&(_, l)| ((l - max) / temperature).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            for (&(id, _), w) in sorted.iter().zip(&weights) {
                if u < *w {
                    return Ok(id);
                }
                u -= w;
            }
            Ok(sorted.last().unwrap().0)
        }
    }
}

/// Samples speech tokens after `prefix` (which must end at THINK_CLOSE) until
/// SPEECH_EOS or `max_len` tokens. Candidates are the speech ids and SPEECH_EOS.
/// Returns local speech ids in `[0, Vs)`.
pub fn generate(m: &MoeModel, prefix: &EncodedSequence, opts: GenerateOptions) -> Result<Vec<u32>> {
    let vocab = *m.vocab();
    if !prefix.ends_at_think_close(&vocab) {
        return Err(Error::Contract(
            "generation prefix must end with an open assistant turn (THINK_CLOSE)".into(),
        ));
    }
    let mut out = Vec::new();
    if opts.max_len == 0 {
        return Ok(out);
    }
    let eos = vocab.special(Special::SpeechEos);
    let mut candidate_ids = vocab.extension_ids();
    candidate_ids.sort();
    let net = m.network();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut ids = prefix.ids.clone();
    let mut cache = net.new_cache();
    let mut logits = if opts.use_cache {
        net.extend(&mut cache, &ids)?
    } else {
        net.forward_ids(&ids)?
    };
    loop {
        let last = logits.row(logits.rows - 1);
        let candidates: Vec<(TokenId, f64)> = candidate_ids
            .iter()
            .map(|&id| (id, last[net.column_of(id).expect("extended vocabulary")]))
            .collect();
        let next = pick(&candidates, opts.sampling, &mut rng)?;
        if next == eos {
            break;
        }
        out.push(vocab.speech_local(next).expect("candidate is a speech id"));
        if out.len() >= opts.max_len {
            break;
        }
        ids.push(next);
        logits = if opts.use_cache {
            net.extend(&mut cache, &[next])?
        } else {
            net.forward_ids(&ids)?
        };
    }
    Ok(out)
}
