//! Document vector index, brute-force retrieval, NCG evaluation and the
//! synthetic click benchmark.

mod index;
mod metric;
mod synth;

pub use index::{build_index, search, IndexRecord, RetrievalResult, VectorIndex};
pub use metric::{ncg_at_k, ncg_query};
pub use synth::{gen_synthetic, SynthConfig, SynthData};
