//! Sentence encoder shared by the two joint extraction decoders: word
//! embedding concatenated with a character convolution feature, then a BiLSTM.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::corpus::{CharVocab, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::{BiLstm, CharFeature, Embedding, Fwd};
use crate::params::ParameterStore;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Sizes of the shared encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderDims {
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_features: usize,
    /// Output width; each direction gets half.
    pub hidden: usize,
    pub dropout: f64,
}

impl EncoderDims {
    pub fn validate(&self) -> Result<()> {
        if self.word_dim == 0 || self.char_dim == 0 || self.char_features == 0 {
            return Err(Error::config("embedding sizes must be positive"));
        }
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return Err(Error::config("hidden must be a positive even number"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JointEncoder {
    pub word: Embedding,
    pub chars: CharFeature,
    pub bilstm: BiLstm,
    pub dims: EncoderDims,
}

impl JointEncoder {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut ChaCha8Rng,
        dims: EncoderDims,
        vocab: &Vocabulary,
        chars: &CharVocab,
        words: Option<Tensor>,
    ) -> Result<Self> {
        dims.validate()?;
        let word = match words {
            Some(t) => {
                if t.shape() != (vocab.len(), dims.word_dim) {
                    return Err(Error::config(format!(
                        "word table {:?} does not match vocabulary {} x word_dim {}",
                        t.shape(),
                        vocab.len(),
                        dims.word_dim
                    )));
                }
                Embedding::from_tensor(store, "word", t, true)?
            }
            None => Embedding::new(store, rng, "word", vocab.len(), dims.word_dim)?,
        };
        let chars = CharFeature::new(store, rng, "char", chars.len(), dims.char_dim, dims.char_features)?;
        let bilstm = BiLstm::new(
            store,
            rng,
            "encoder",
            dims.word_dim + dims.char_features,
            dims.hidden / 2,
        )?;
        Ok(JointEncoder {
            word,
            chars,
            bilstm,
            dims,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.bilstm.output_dim()
    }

    /// One hidden vector per token.
    pub fn encode(
        &self,
        f: &mut Fwd,
        tokens: &[String],
        vocab: &Vocabulary,
        chars: &CharVocab,
    ) -> Result<Vec<Var>> {
        let mut xs = Vec::with_capacity(tokens.len());
        for tok in tokens {
            let w = self.word.lookup(f, vocab.get(tok))?;
            let c = self.chars.forward(f, &chars.encode(tok))?;
            let x = f.tape.concat(&[w, c])?;
            xs.push(f.dropout(x, self.dims.dropout));
        }
        self.bilstm.encode(f, &xs)
    }
}
