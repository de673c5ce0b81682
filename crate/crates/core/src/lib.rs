//! Dual-encoder bitext retrieval: subword vocabulary, a small residual
//! encoder, the bidirectional additive-margin ranking loss with sharded
//! negatives, an inverted-file vector index, evaluation metrics, mining and
//! training loops.

pub mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod index;
pub mod linalg;
pub mod loss;
pub mod mining;
pub mod negatives;
pub mod synthetic;
pub mod trainer;
pub mod vocab;

pub use corpus::{Sentence, SentencePair};
pub use encoder::{EncoderConfig, EncoderParams, Pooling};
pub use error::{Error, Result};
pub use evaluation::{Candidate, GoldAlignment, Prf};
pub use index::{EmbeddingSet, Hit, IndexConfig, IndexMode, VectorIndex};
pub use linalg::Matrix;
pub use loss::{LossConfig, ScaleMode};
pub use mining::{MiningConfig, MiningDirection, MiningReport};
pub use negatives::NegativeScope;
pub use trainer::{OptimizerState, PretrainConfig, TrainConfig};
pub use vocab::{TokenSequence, Vocab, VocabConfig};
