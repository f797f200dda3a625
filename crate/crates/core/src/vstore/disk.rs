//! On-disk layout of a store directory:
//!
//! - `manifest.json`: `{"format":"DRAFTVDB1","dim":..,"embedder_profile":{..},"count":..}`
//! - `vectors.bin`: the bytes `DRAFTVDB1` followed by `count * dim` little-endian f32
//! - `corpus.jsonl`: canonical records, one per line, in entry order
//!
//! `corpus.jsonl` may hold more lines than `count`; those were appended after
//! the last compaction and are re-embedded on load.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_records, write_record_line, AdrRecord};
use crate::embed::{Embedder, EmbedderProfile, EmbeddingVector};

use super::{embed_records, StoreEntry, StoreError, VectorStore};

pub const MAGIC: &[u8; 9] = b"DRAFTVDB1";

const MANIFEST: &str = "manifest.json";
const VECTORS: &str = "vectors.bin";
const CORPUS: &str = "corpus.jsonl";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dim: usize,
    embedder_profile: EmbedderProfile,
    count: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes through a temp file, fsyncs, then renames into place.
fn write_atomic(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), StoreError> {
    let tmp = tmp_path(path);
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    write(&mut w).map_err(io_err(&tmp))?;
    let file = w.into_inner().map_err(|e| StoreError::Io {
        path: tmp.clone(),
        source: e.into_error(),
    })?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Appends one record line to `dir/corpus.jsonl` and fsyncs before returning.
pub fn append_record(dir: &Path, record: &AdrRecord) -> Result<(), StoreError> {
    let path = dir.join(CORPUS);
    let mut file = OpenOptions::new()
        .append(true)
        .create(true)
        .open(&path)
        .map_err(io_err(&path))?;
    let mut line = Vec::new();
    write_record_line(&mut line, record).map_err(io_err(&path))?;
    file.write_all(&line).map_err(io_err(&path))?;
    file.sync_all().map_err(io_err(&path))
}

impl VectorStore {
    /// Writes all three files. Doubles as compaction for a directory grown
    /// by [`append_record`].
    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_atomic(&dir.join(CORPUS), |w| {
            self.entries().try_for_each(|e| write_record_line(w, &e.record))
        })?;
        write_atomic(&dir.join(VECTORS), |w| {
            w.write_all(MAGIC)?;
            for e in self.entries() {
                for x in e.vector.values() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Ok(())
        })?;
        let manifest = Manifest {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            dim: self.dim,
            embedder_profile: self.profile.clone(),
            count: self.len(),
        };
        write_atomic(&dir.join(MANIFEST), |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            w.write_all(b"\n")
        })
    }

    /// Reads the embedder profile recorded in a store directory.
    pub fn read_profile(dir: &Path) -> Result<EmbedderProfile, StoreError> {
        Ok(read_manifest(dir)?.embedder_profile)
    }

    /// Number of records covered by `vectors.bin`; appended records beyond
    /// it are pending compaction.
    pub fn indexed_count(dir: &Path) -> Result<usize, StoreError> {
        Ok(read_manifest(dir)?.count)
    }

    /// Loads a store. A tail of records past the manifest count is embedded
    /// with `embedder`, or with an embedder built from the stored profile.
    pub fn load(dir: &Path, embedder: Option<&dyn Embedder>) -> Result<VectorStore, StoreError> {
        let manifest = read_manifest(dir)?;
        if manifest.format.as_bytes() != MAGIC {
            return Err(StoreError::Format(format!("unknown format {:?}", manifest.format)));
        }
        if manifest.dim != manifest.embedder_profile.dim || manifest.dim == 0 {
            return Err(StoreError::Format(
                "manifest dim disagrees with embedder profile".into(),
            ));
        }
        let vpath = dir.join(VECTORS);
        let mut bytes = Vec::new();
        File::open(&vpath)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(io_err(&vpath))?;
        let body = bytes
            .strip_prefix(MAGIC.as_slice())
            .ok_or_else(|| StoreError::Format("vectors.bin lacks DRAFTVDB1 header".into()))?;
        // A compaction interrupted before the manifest rename leaves extra
        // trailing vectors; those records are re-embedded from the tail.
        let expected = manifest.count * manifest.dim * 4;
        if body.len() < expected || body.len() % (manifest.dim * 4) != 0 {
            return Err(StoreError::Format(format!(
                "vectors.bin holds {} bytes, manifest implies {expected}",
                body.len()
            )));
        }
        let records = read_records(&dir.join(CORPUS))?;
        if records.len() < manifest.count {
            return Err(StoreError::Format(format!(
                "corpus.jsonl has {} records, manifest count is {}",
                records.len(),
                manifest.count
            )));
        }
        let (indexed, tail) = records.split_at(manifest.count);
        let mut entries = Vec::with_capacity(records.len());
        for (record, chunk) in indexed.iter().zip(body[..expected].chunks_exact(manifest.dim * 4)) {
            let values = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vector = EmbeddingVector::from_unit(values)
                .map_err(|_| StoreError::Format(format!("vector for {:?} is not unit norm", record.id)))?;
            entries.push(StoreEntry {
                record: record.clone(),
                vector,
            });
        }
        if !tail.is_empty() {
            let built;
            let embedder = match embedder {
                Some(e) => e,
                None => {
                    built = manifest.embedder_profile.build().map_err(|source| StoreError::Embed {
                        record_id: tail[0].id.clone(),
                        source,
                    })?;
                    built.as_ref()
                }
            };
            entries.extend(embed_records(tail, embedder)?);
        }
        VectorStore::from_entries(manifest.embedder_profile, entries)
    }
}

fn read_manifest(dir: &Path) -> Result<Manifest, StoreError> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Format(format!("manifest.json: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AdrTemplate, Corpus};
    use crate::embed::HashedEmbedder;
    use crate::vstore::index_corpus;

    fn rec(id: &str, ctx: &str) -> AdrRecord {
        AdrRecord {
            id: id.into(),
            context: ctx.into(),
            decision: format!("decide {id}"),
            source_uri: "mem".into(),
            template: AdrTemplate::Nygard,
        }
    }

    fn sample() -> (VectorStore, HashedEmbedder) {
        let e = HashedEmbedder::new(32).unwrap();
        let corpus =
            Corpus::from_records(vec![rec("a", "one two"), rec("b", "three four five"), rec("c", "six")]).unwrap();
        (index_corpus(&corpus, &e).unwrap(), e)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (store, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let back = VectorStore::load(dir.path(), None).unwrap();
        assert_eq!(back, store);
        for (x, y) in back.entries().zip(store.entries()) {
            let xb: Vec<u32> = x.vector.values().iter().map(|f| f.to_bits()).collect();
            let yb: Vec<u32> = y.vector.values().iter().map(|f| f.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        let raw = fs::read(dir.path().join(VECTORS)).unwrap();
        assert_eq!(&raw[..9], b"DRAFTVDB1");
        assert_eq!(raw.len(), 9 + 3 * 32 * 4);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest["count"], 3);
        assert_eq!(manifest["dim"], 32);
        assert_eq!(manifest["embedder_profile"]["kind"], "hashed_local");
    }

    #[test]
    fn appended_tail_is_reembedded() {
        let (store, e) = sample();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let extra = rec("d", "seven eight");
        append_record(dir.path(), &extra).unwrap();
        let back = VectorStore::load(dir.path(), None).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back.get("d").unwrap().vector, e.embed_text("seven eight").unwrap());
        // compaction folds the tail into the vector file
        back.save(dir.path()).unwrap();
        let manifest = read_manifest(dir.path()).unwrap();
        assert_eq!(manifest.count, 4);
    }

    #[test]
    fn corrupt_files_are_reported() {
        let (store, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let vpath = dir.path().join(VECTORS);
        let mut raw = fs::read(&vpath).unwrap();
        raw[0] = b'X';
        fs::write(&vpath, &raw).unwrap();
        assert!(matches!(
            VectorStore::load(dir.path(), None),
            Err(StoreError::Format(_))
        ));
        raw[0] = b'D';
        raw.pop();
        fs::write(&vpath, &raw).unwrap();
        assert!(matches!(
            VectorStore::load(dir.path(), None),
            Err(StoreError::Format(_))
        ));
    }
}
