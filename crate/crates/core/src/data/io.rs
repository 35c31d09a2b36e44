//! Tab-separated on-disk formats.
//!
//! Embeddings: header `#modality=<name>\tdim=<d>`, then `artist\tv0\t...\tv{d-1}`.
//! Graph: `artist_a\tartist_b` per line, `#` comments allowed.
//! Popularity: `artist\tcount`.
//!
//! Writers are canonical: rows sorted by artist id, floats in shortest
//! round-trip form.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ArtistId, EmbeddingTable, ModalityId, MultimodalDataset, PopularityTable, SimilarityGraph,
};
use crate::error::{Error, Result};

const EMBEDDING_SUFFIX: &str = ".emb.tsv";
const GRAPH_FILE: &str = "graph.tsv";
const POPULARITY_FILE: &str = "popularity.tsv";

/// How to treat graph edges naming artists outside the catalog.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    #[default]
    Strict,
    Lenient,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_value(token: &str) -> Option<f64> {
    // Rust's float parser accepts "NaN"/"inf"; both are rejected here.
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn load_embeddings(path: impl AsRef<Path>, modality: &ModalityId) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "missing header"))?;
    let (name, dim) = parse_header(header).ok_or_else(|| {
        Error::parse(path, 1, format!("expected `#modality=<name>\\tdim=<d>`, got {header:?}"))
    })?;
    if name != modality.as_str() {
        return Err(Error::parse(
            path,
            1,
            format!("file declares modality {name:?}, expected {modality}"),
        ));
    }
    let mut table =
        EmbeddingTable::new(modality.clone(), dim).map_err(|e| Error::parse(path, 1, e.to_string()))?;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let artist = fields.next().unwrap_or_default();
        let artist = ArtistId::new(artist).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let row = fields
            .map(|tok| {
                parse_value(tok)
                    .ok_or_else(|| Error::parse(path, lineno, format!("invalid value {tok:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        table
            .insert(artist, row)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(table)
}

fn parse_header(line: &str) -> Option<(&str, usize)> {
    let rest = line.strip_prefix("#modality=")?;
    let (name, dim) = rest.split_once('\t')?;
    let dim = dim.strip_prefix("dim=")?.parse().ok()?;
    Some((name, dim))
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = format!("#modality={}\tdim={}\n", table.modality(), table.dim());
    for (artist, row) in table.iter() {
        out.push_str(artist.as_str());
        for v in row {
            write!(out, "\t{v:?}").expect("writing to a String cannot fail");
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_embeddings(table))
}

/// Reads an edge list. With a catalog and [`GraphMode::Strict`], unknown
/// artists are an error; in lenient mode such edges are dropped.
pub fn load_graph(
    path: impl AsRef<Path>,
    catalog: Option<&BTreeSet<ArtistId>>,
    mode: GraphMode,
) -> Result<SimilarityGraph> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut graph = SimilarityGraph::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [a, b] = fields[..] else {
            return Err(Error::parse(path, lineno, "expected `artist_a\\tartist_b`"));
        };
        let a = ArtistId::new(a).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let b = ArtistId::new(b).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        if let Some(catalog) = catalog {
            if let Some(unknown) = [&a, &b].into_iter().find(|x| !catalog.contains(*x)) {
                match mode {
                    GraphMode::Strict => return Err(Error::UnknownArtist(unknown.to_string())),
                    GraphMode::Lenient => continue,
                }
            }
        }
        graph
            .add_edge(a, b)
            .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
    }
    Ok(graph)
}

pub fn save_graph(graph: &SimilarityGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (a, b) in graph.edges() {
        writeln!(out, "{a}\t{b}").expect("writing to a String cannot fail");
    }
    write(path.as_ref(), &out)
}

pub fn load_popularity(path: impl AsRef<Path>) -> Result<PopularityTable> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut table = PopularityTable::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((a, c)) = line.split_once('\t') else {
            return Err(Error::parse(path, lineno, "expected `artist\\tcount`"));
        };
        let a = ArtistId::new(a).map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        let c: u64 = c
            .parse()
            .map_err(|_| Error::parse(path, lineno, format!("invalid count {c:?}")))?;
        if table.count(&a).is_some() {
            return Err(Error::parse(path, lineno, format!("duplicate artist {a}")));
        }
        table.insert(a, c);
    }
    Ok(table)
}

pub fn save_popularity(table: &PopularityTable, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (a, c) in table.iter() {
        writeln!(out, "{a}\t{c}").expect("writing to a String cannot fail");
    }
    write(path.as_ref(), &out)
}

/// Loads every `<modality>.emb.tsv` in `dir` plus `graph.tsv` and, when
/// present, `popularity.tsv`.
pub fn load_dataset(dir: impl AsRef<Path>, mode: GraphMode) -> Result<MultimodalDataset> {
    let dir = dir.as_ref();
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let file_name = entry.file_name();
        if let Some(m) = file_name.to_str().and_then(|n| n.strip_suffix(EMBEDDING_SUFFIX)) {
            names.push(ModalityId::new(m)?);
        }
    }
    names.sort();
    let tables = names
        .iter()
        .map(|m| load_embeddings(dir.join(format!("{m}{EMBEDDING_SUFFIX}")), m))
        .collect::<Result<Vec<_>>>()?;
    let mut catalog = BTreeSet::new();
    for t in &tables {
        catalog.extend(t.iter().map(|(a, _)| a.clone()));
    }
    let graph_path = dir.join(GRAPH_FILE);
    let graph = if graph_path.exists() {
        load_graph(&graph_path, Some(&catalog), mode)?
    } else {
        SimilarityGraph::new()
    };
    let pop_path = dir.join(POPULARITY_FILE);
    let popularity = if pop_path.exists() {
        let mut p = load_popularity(&pop_path)?;
        let unknown = p
            .iter()
            .find(|(a, _)| !catalog.contains(*a))
            .map(|(a, _)| a.to_string());
        if let Some(a) = unknown {
            match mode {
                GraphMode::Strict => return Err(Error::UnknownArtist(a)),
                GraphMode::Lenient => {
                    let mut kept = PopularityTable::new();
                    for (a, c) in p.iter().filter(|(a, _)| catalog.contains(*a)) {
                        kept.insert(a.clone(), c);
                    }
                    p = kept;
                }
            }
        }
        Some(p)
    } else {
        None
    };
    MultimodalDataset::new(tables, graph, popularity)
}

pub fn save_dataset(dataset: &MultimodalDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in dataset.tables() {
        save_embeddings(t, dir.join(format!("{}{EMBEDDING_SUFFIX}", t.modality())))?;
    }
    save_graph(dataset.graph(), dir.join(GRAPH_FILE))?;
    if let Some(p) = dataset.popularity_table() {
        save_popularity(p, dir.join(POPULARITY_FILE))?;
    }
    Ok(())
}
