//! On-disk index: corpus snapshot, graph export and dense vectors, plus a
//! small meta file tying them to the inputs that produced them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrag::clients::Clients;
use statrag::corpus::{load_corpus, Corpus};
use statrag::okg::{build_okg, Okg, PatternPack};
use statrag::retrieval::DenseIndex;
use statrag::{Error, Result};

use crate::config::{sha256_hex, RunConfig};

pub const GRAPH: &str = "graph.json";
pub const INDEX: &str = "index.json";
pub const SNAPSHOT: &str = "corpus.jsonl";
pub const META: &str = "index.meta.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct IndexMeta {
    pub corpus_sha256: String,
    pub pattern_pack_id: String,
    pub embedder: String,
    pub articles: usize,
}

pub struct Loaded {
    pub corpus: Corpus,
    pub okg: Okg,
    pub index: DenseIndex,
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn pack(cfg: &RunConfig) -> Result<PatternPack> {
    let p = cfg.resolve(Path::new(&cfg.pattern_pack));
    if cfg.pattern_pack.ends_with(".json") || p.is_file() {
        PatternPack::from_file(&p)
    } else {
        PatternPack::builtin(&cfg.pattern_pack)
    }
}

pub fn corpus_digest(cfg: &RunConfig) -> Result<String> {
    Ok(sha256_hex(read(&cfg.corpus_path())?.as_bytes()))
}

pub fn build(cfg: &RunConfig, clients: &Clients) -> Result<(Loaded, IndexMeta)> {
    let corpus = load_corpus(&cfg.corpus_path())?;
    let compiled = pack(cfg)?.compile()?;
    let okg = build_okg(&corpus, &compiled)?;
    let index = DenseIndex::build(&corpus, clients.embedder.as_ref())?;
    let meta = IndexMeta {
        corpus_sha256: corpus_digest(cfg)?,
        pattern_pack_id: okg.pattern_pack_id().to_string(),
        embedder: index.fingerprint.clone(),
        articles: corpus.len(),
    };
    Ok((Loaded { corpus, okg, index }, meta))
}

pub fn save(out: &Path, loaded: &Loaded, meta: &IndexMeta) -> Result<()> {
    write(&out.join(SNAPSHOT), &loaded.corpus.to_jsonl()?)?;
    write(&out.join(GRAPH), &loaded.okg.to_json()?)?;
    write(&out.join(INDEX), &serde_json::to_string(&loaded.index)?)?;
    write(&out.join(META), &serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

fn missing(path: PathBuf) -> Error {
    Error::Data(format!("{} not found; run `statrag index` first", path.display()))
}

pub fn load(cfg: &RunConfig, clients: &Clients) -> Result<Loaded> {
    let out = cfg.out();
    let meta_path = out.join(META);
    if !meta_path.is_file() {
        return Err(missing(meta_path));
    }
    let meta: IndexMeta = serde_json::from_str(&read(&meta_path)?)?;
    if meta.corpus_sha256 != corpus_digest(cfg)? {
        return Err(Error::Data(format!(
            "index in {} was built from a different corpus; rerun `statrag index`",
            out.display()
        )));
    }
    let corpus = load_corpus(&cfg.corpus_path())?;
    let okg = Okg::load(&out.join(GRAPH))?;
    let index = DenseIndex::load(&out.join(INDEX), &clients.embedder.fingerprint())?;
    Ok(Loaded { corpus, okg, index })
}
