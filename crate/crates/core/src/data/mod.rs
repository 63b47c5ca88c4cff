//! On-disk embeddings, layer traces and candidate probabilities.

mod container;
mod jsonl;
mod types;

pub use container::{
    decode, encode_candidates, encode_embeddings, encode_layers, read_any, read_candidates,
    read_container, read_layer_traces, write_candidates, write_container, write_layer_traces,
    Container, ContainerKind, MAGIC, VERSION,
};
pub use jsonl::{parse_jsonl, read_jsonl, write_jsonl};
pub use types::{
    CandidateBatch, CandidateSet, EmbeddingSet, Label, LayerTrace, LayerTraceSet,
    TOKEN_PRODUCT_RTOL,
};

/// Reads a container, or JSON Lines when the path ends in `.jsonl`.
pub fn read_embeddings(path: impl AsRef<std::path::Path>) -> crate::Result<EmbeddingSet> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_jsonl(path)
    } else {
        read_container(path)
    }
}
