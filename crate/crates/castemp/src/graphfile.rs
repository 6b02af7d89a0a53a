//! Competition-graph edge lists.
//!
//! ```text
//! # castemp-compgraph v1 tau1=0.1 similarity=jaccard cutoff=86400 nodes=3
//! i,j,weight
//! 0,2,0.25
//! ```

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use castemp_core::compgraph::{CompetitionGraph, Edge, SimilarityKind};
use castemp_core::CascadeId;

use crate::error::{Error, Result};
use crate::io::create_file;

const MAGIC: &str = "# castemp-compgraph v1";

#[derive(Debug, Clone)]
pub struct GraphFile {
    pub cutoff: f64,
    pub graph: CompetitionGraph,
}

pub fn write_compgraph(path: &Path, graph: &CompetitionGraph, cutoff: f64) -> Result<()> {
    let mut w = create_file(path)?;
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "{MAGIC} tau1={} similarity={} cutoff={} nodes={}",
        graph.tau1(),
        graph.similarity_kind().as_str(),
        cutoff,
        graph.num_cascades()
    )
    .map_err(io)?;
    writeln!(w, "i,j,weight").map_err(io)?;
    for e in graph.edges() {
        writeln!(w, "{},{},{}", e.i.0, e.j.0, e.weight).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_compgraph(path: &Path) -> Result<GraphFile> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next = |n: u64| -> Result<String> {
        match lines.next() {
            Some(l) => l.map_err(|e| Error::io(path, e)),
            None => Err(Error::malformed(path, n, "unexpected end of file")),
        }
    };
    let header = next(1)?;
    let rest = header.strip_prefix(MAGIC).ok_or_else(|| Error::malformed(path, 1, "not a castemp-compgraph v1 file"))?;
    let (mut tau1, mut kind, mut cutoff, mut nodes) = (None, None, None, None);
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::malformed(path, 1, format!("bad header field `{kv}`")))?;
        let bad = || Error::malformed(path, 1, format!("bad value for `{k}`"));
        match k {
            "tau1" => tau1 = Some(v.parse::<f64>().map_err(|_| bad())?),
            "similarity" => kind = Some(SimilarityKind::parse(v).ok_or_else(bad)?),
            "cutoff" => cutoff = Some(v.parse::<f64>().map_err(|_| bad())?),
            "nodes" => nodes = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::malformed(path, 1, format!("header lacks `{k}`"));
    let (tau1, kind, cutoff, nodes) = (
        tau1.ok_or_else(|| missing("tau1"))?,
        kind.ok_or_else(|| missing("similarity"))?,
        cutoff.ok_or_else(|| missing("cutoff"))?,
        nodes.ok_or_else(|| missing("nodes"))?,
    );
    if next(2)?.trim() != "i,j,weight" {
        return Err(Error::malformed(path, 2, "expected column line `i,j,weight`"));
    }
    let mut edges = Vec::new();
    for (line_no, line) in (3u64..).zip(lines) {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match f.as_slice() {
            [i, j, w] => i.parse::<u32>().ok().zip(j.parse::<u32>().ok()).zip(w.parse::<f64>().ok()),
            _ => None,
        };
        let ((i, j), weight) = parsed.ok_or_else(|| Error::malformed(path, line_no, "expected `i,j,weight`"))?;
        edges.push(Edge { i: CascadeId(i), j: CascadeId(j), weight });
    }
    let graph = CompetitionGraph::from_edges(nodes, tau1, kind, &edges).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(GraphFile { cutoff, graph })
}
