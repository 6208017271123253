//! Reader and writer for the TU Dortmund plain-text graph dataset layout:
//! `<name>_A.txt` (1-indexed "i, j" edge lines), `<name>_graph_indicator.txt`
//! (graph id per node line), plus optional node labels, node attributes, and
//! graph labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{DataError, Graph, GraphSet};
use crate::matrix::Matrix;

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Format { file: file_name(path), line, msg: msg.into() }
}

/// Load a dataset in TU Dortmund format. Graphs come back undirected: the
/// loader symmetrizes whatever directions the edge list mentions and drops
/// duplicates. Self-loops present in the file are preserved. Features are
/// taken from `_node_attributes.txt` when present, otherwise one-hot encoded
/// node labels, otherwise a constant-1 column.
pub fn load_tu_dataset(directory: &Path, name: &str) -> Result<GraphSet, DataError> {
    let file = |suffix: &str| directory.join(format!("{name}_{suffix}.txt"));

    let indicator_path = file("graph_indicator");
    let mut node_graph = Vec::new();
    for (line, text) in read_lines(&indicator_path)? {
        let gid: usize = text
            .parse()
            .map_err(|_| format_err(&indicator_path, line, format!("bad graph id {text:?}")))?;
        if gid == 0 {
            return Err(format_err(&indicator_path, line, "graph ids are 1-indexed"));
        }
        node_graph.push(gid);
    }
    let total_nodes = node_graph.len();
    if total_nodes == 0 {
        return Err(format_err(&indicator_path, 1, "indicator file declares no nodes"));
    }

    // Map file graph ids to dense 0-based ids in numeric order, and global
    // node ids to (graph, local index) in order of appearance.
    let mut nodes_per_graph: BTreeMap<usize, usize> = BTreeMap::new();
    for &gid in &node_graph {
        *nodes_per_graph.entry(gid).or_insert(0) += 1;
    }
    let graph_index: BTreeMap<usize, usize> =
        nodes_per_graph.keys().enumerate().map(|(i, &gid)| (gid, i)).collect();
    let sizes: Vec<usize> = nodes_per_graph.values().copied().collect();
    let num_graphs = sizes.len();

    let mut local_of = vec![(0usize, 0usize); total_nodes];
    let mut counters = vec![0usize; num_graphs];
    for (global, &gid) in node_graph.iter().enumerate() {
        let g = graph_index[&gid];
        local_of[global] = (g, counters[g]);
        counters[g] += 1;
    }

    let mut adjacencies: Vec<Matrix> = sizes.iter().map(|&n| Matrix::zeros(n, n)).collect();
    let edges_path = file("A");
    for (line, text) in read_lines(&edges_path)? {
        let mut parts = text.split(',').map(str::trim);
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => return Err(format_err(&edges_path, line, format!("expected \"i, j\", got {text:?}"))),
        };
        let parse = |s: &str| -> Result<usize, DataError> {
            let v: usize = s
                .parse()
                .map_err(|_| format_err(&edges_path, line, format!("bad node id {s:?}")))?;
            if v == 0 || v > total_nodes {
                return Err(format_err(
                    &edges_path,
                    line,
                    format!("node id {v} out of range 1..={total_nodes}"),
                ));
            }
            Ok(v)
        };
        let (i, j) = (parse(a)? - 1, parse(b)? - 1);
        let (gi, li) = local_of[i];
        let (gj, lj) = local_of[j];
        if gi != gj {
            return Err(format_err(
                &edges_path,
                line,
                format!("edge connects nodes of different graphs ({} and {})", i + 1, j + 1),
            ));
        }
        adjacencies[gi].set(li, lj, 1.0);
        adjacencies[gi].set(lj, li, 1.0);
    }

    let features = load_features(&file("node_attributes"), &file("node_labels"), total_nodes)?;
    let mut per_graph_features: Vec<Vec<Vec<f64>>> = vec![Vec::new(); num_graphs];
    for (global, &(g, _)) in local_of.iter().enumerate() {
        per_graph_features[g].push(features.row(global).to_vec());
    }

    let labels = load_graph_labels(&file("graph_labels"), num_graphs)?;

    let mut graphs = Vec::with_capacity(num_graphs);
    for g in 0..num_graphs {
        let x = Matrix::from_rows(&per_graph_features[g]);
        graphs.push(Graph::new(
            g,
            x,
            adjacencies[g].clone(),
            false,
            labels.as_ref().map(|l| l[g]),
        )?);
    }
    GraphSet::new(name, graphs)
}

fn load_features(
    attributes_path: &Path,
    labels_path: &Path,
    total_nodes: usize,
) -> Result<Matrix, DataError> {
    if attributes_path.exists() {
        let lines = read_lines(attributes_path)?;
        if lines.len() != total_nodes {
            let line = lines.len().min(1).max(lines.len());
            return Err(format_err(
                attributes_path,
                line,
                format!("{} attribute lines for {} nodes", lines.len(), total_nodes),
            ));
        }
        let mut rows = Vec::with_capacity(total_nodes);
        let mut width = None;
        for (line, text) in &lines {
            let mut row = Vec::new();
            for field in text.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    format_err(attributes_path, *line, format!("bad attribute value {field:?}"))
                })?;
                row.push(v);
            }
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(format_err(
                        attributes_path,
                        *line,
                        format!("expected {w} attributes, found {}", row.len()),
                    ));
                }
                _ => {}
            }
            rows.push(row);
        }
        return Ok(Matrix::from_rows(&rows));
    }

    if labels_path.exists() {
        let lines = read_lines(labels_path)?;
        if lines.len() != total_nodes {
            return Err(format_err(
                labels_path,
                lines.len().max(1),
                format!("{} label lines for {} nodes", lines.len(), total_nodes),
            ));
        }
        let mut labels = Vec::with_capacity(total_nodes);
        for (line, text) in &lines {
            let v: i64 = text
                .parse()
                .map_err(|_| format_err(labels_path, *line, format!("bad node label {text:?}")))?;
            labels.push(v);
        }
        let min = *labels.iter().min().unwrap();
        let max = *labels.iter().max().unwrap();
        let width = (max - min) as usize + 1;
        let mut out = Matrix::zeros(total_nodes, width);
        for (i, &l) in labels.iter().enumerate() {
            out.set(i, (l - min) as usize, 1.0);
        }
        return Ok(out);
    }

    Ok(Matrix::filled(total_nodes, 1, 1.0))
}

fn load_graph_labels(path: &Path, num_graphs: usize) -> Result<Option<Vec<usize>>, DataError> {
    if !path.exists() {
        return Ok(None);
    }
    let lines = read_lines(path)?;
    if lines.len() != num_graphs {
        return Err(format_err(
            path,
            lines.len().max(1),
            format!("{} graph labels for {} graphs", lines.len(), num_graphs),
        ));
    }
    let mut raw = Vec::with_capacity(num_graphs);
    for (line, text) in &lines {
        let v: i64 = text
            .parse()
            .map_err(|_| format_err(path, *line, format!("bad graph label {text:?}")))?;
        raw.push(v);
    }
    // Map whatever label alphabet the file uses onto dense 0-based classes.
    let mut alphabet: Vec<i64> = raw.clone();
    alphabet.sort_unstable();
    alphabet.dedup();
    Ok(Some(
        raw.iter()
            .map(|v| alphabet.binary_search(v).expect("label in alphabet"))
            .collect(),
    ))
}

/// Write a set in TU Dortmund format. Features always go out as node
/// attributes with round-trip-exact decimal formatting, so loading the
/// directory back reproduces adjacency and features bit for bit (for
/// undirected sets; the format itself cannot express direction). Undirected
/// edges are listed in both directions, as the public datasets do.
pub fn write_tu_dataset(set: &GraphSet, directory: &Path, name: &str) -> Result<(), DataError> {
    fs::create_dir_all(directory)?;
    let mut edges = String::new();
    let mut indicator = String::new();
    let mut attributes = String::new();
    let mut labels = String::new();

    let mut offset = 0usize;
    for (gi, g) in set.graphs.iter().enumerate() {
        let n = g.n();
        for i in 0..n {
            let _ = writeln!(indicator, "{}", gi + 1);
            let row: Vec<String> = g.features.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(attributes, "{}", row.join(", "));
            for j in 0..n {
                if g.adjacency.get(i, j) == 1.0 {
                    let _ = writeln!(edges, "{}, {}", offset + i + 1, offset + j + 1);
                }
            }
        }
        if let Some(l) = g.label {
            let _ = writeln!(labels, "{l}");
        }
        offset += n;
    }

    let file = |suffix: &str| directory.join(format!("{name}_{suffix}.txt"));
    fs::write(file("A"), edges)?;
    fs::write(file("graph_indicator"), indicator)?;
    fs::write(file("node_attributes"), attributes)?;
    if set.graphs.iter().all(|g| g.label.is_some()) && !set.graphs.is_empty() {
        fs::write(file("graph_labels"), labels)?;
    }
    Ok(())
}
