//! Single-file store layout (all integers little-endian):
//!
//! ```text
//! 0   magic      b"FRVS"
//! 4   version    u16 (1)
//! 6   reserved   u16
//! 8   dimension  u32 (0 for an empty store)
//! 12  reserved   u32
//! 16  count      u64 chunk count
//! 24  meta_len   u64 byte length of the metadata block
//! 32  vectors    count * dimension f64, chunk order
//! ..  metadata   UTF-8 JSON, meta_len bytes
//! ```
//!
//! Writes go to a sibling temp file that is fsynced and renamed over the
//! target.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{CorpusChunk, StoreError, VectorStore};
use crate::embeddings::EmbeddingVector;

const MAGIC: &[u8; 4] = b"FRVS";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Metadata {
    model_id: Option<String>,
    next_doc_id: u32,
    content_hashes: BTreeSet<String>,
    chunks: Vec<ChunkMeta>,
}

#[derive(Serialize, Deserialize)]
struct ChunkMeta {
    doc_id: u32,
    chunk_id: u32,
    text: String,
    source_url: String,
    authority_score: f64,
    published_date: Option<NaiveDate>,
    title: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(super) fn save(store: &VectorStore, path: &Path) -> Result<(), StoreError> {
    let dimension = store.dimension.unwrap_or(0);
    let meta = Metadata {
        model_id: store.model_id.clone(),
        next_doc_id: store.next_doc_id,
        content_hashes: store.content_hashes.clone(),
        chunks: store
            .chunks
            .iter()
            .map(|c| ChunkMeta {
                doc_id: c.doc_id,
                chunk_id: c.chunk_id,
                text: c.text.clone(),
                source_url: c.source_url.clone(),
                authority_score: c.authority_score,
                published_date: c.published_date,
                title: c.title.clone(),
            })
            .collect(),
    };
    let meta_bytes = serde_json::to_vec(&meta).expect("metadata is serializable");

    let mut buf = Vec::with_capacity(HEADER_LEN + store.chunks.len() * dimension * 8 + meta_bytes.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(dimension as u32).to_le_bytes());
    buf.extend_from_slice(&0u32.to_le_bytes());
    buf.extend_from_slice(&(store.chunks.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(meta_bytes.len() as u64).to_le_bytes());
    for chunk in &store.chunks {
        for v in chunk.vector.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf.extend_from_slice(&meta_bytes);

    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(&buf).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    drop(file);
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

pub(super) fn load(path: &Path) -> Result<VectorStore, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() < HEADER_LEN || &bytes[0..4] != MAGIC {
        return Err(StoreError::Corrupt("bad magic or truncated header".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(StoreError::Corrupt(format!("unsupported version {version}")));
    }
    let dimension = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = read_u64(&bytes, 16) as usize;
    let meta_len = read_u64(&bytes, 24) as usize;
    let vectors_len = count
        .checked_mul(dimension)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| StoreError::Corrupt("vector block size overflows".into()))?;
    let expected = HEADER_LEN + vectors_len + meta_len;
    if bytes.len() != expected {
        return Err(StoreError::Corrupt(format!(
            "expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    let meta: Metadata = serde_json::from_slice(&bytes[HEADER_LEN + vectors_len..])
        .map_err(|e| StoreError::Corrupt(format!("metadata: {e}")))?;
    if meta.chunks.len() != count {
        return Err(StoreError::Corrupt("chunk count disagrees with metadata".into()));
    }
    let model_id = meta.model_id.clone().unwrap_or_default();
    let mut chunks = Vec::with_capacity(count);
    for (i, m) in meta.chunks.into_iter().enumerate() {
        let start = HEADER_LEN + i * dimension * 8;
        let values: Vec<f64> = bytes[start..start + dimension * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let vector = EmbeddingVector::new(values, model_id.clone())
            .map_err(|e| StoreError::Corrupt(format!("chunk {i}: {e}")))?;
        chunks.push(Arc::new(CorpusChunk {
            doc_id: m.doc_id,
            chunk_id: m.chunk_id,
            text: m.text,
            vector,
            source_url: m.source_url,
            authority_score: m.authority_score,
            published_date: m.published_date,
            title: m.title,
        }));
    }
    Ok(VectorStore {
        model_id: meta.model_id,
        dimension: (dimension > 0).then_some(dimension),
        chunks,
        content_hashes: meta.content_hashes,
        next_doc_id: meta.next_doc_id,
    })
}
