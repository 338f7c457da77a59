//! CSV triplet storage for [`LabeledGraph`]:
//!
//! * `<prefix>.edges.csv`: header `src,dst`, one undirected edge per row (0-based ids)
//! * `<prefix>.features.csv`: header `f0,f1,...`, one row per node
//! * `<prefix>.labels.csv`: header `node,sensitive[,utility]`
//!
//! Headers are optional on input.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;

pub fn edges_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".edges.csv")
}

pub fn features_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".features.csv")
}

pub fn labels_path(prefix: &Path) -> PathBuf {
    with_suffix(prefix, ".labels.csv")
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads every data record as `(line, fields)`, skipping a leading header.
fn records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rdr = reader(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, 0, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let rows = records(path)?;
    let cols = rows.first().map_or(0, |(_, r)| r.len());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for (line, row) in &rows {
        if row.len() != cols {
            return Err(parse_err(
                path,
                *line,
                format!("expected {cols} columns, found {}", row.len()),
            ));
        }
        for field in row {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, *line, format!("not a number: {field:?}")))?;
            data.push(v);
        }
    }
    Array2::from_shape_vec((rows.len(), cols), data).map_err(|e| Error::dim(e.to_string()))
}

pub fn write_matrix(path: &Path, m: ArrayView2<'_, f64>, prefix: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_label(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    field.parse::<usize>().map_err(|_| {
        parse_err(
            path,
            line,
            format!("{what} label is not a non-negative integer: {field:?}"),
        )
    })
}

pub fn load_graph(prefix: &Path) -> Result<LabeledGraph> {
    let fpath = features_path(prefix);
    let features = read_matrix(&fpath)?;
    let n = features.nrows();

    let lpath = labels_path(prefix);
    let label_rows = records(&lpath)?;
    if label_rows.len() != n {
        return Err(parse_err(
            &lpath,
            label_rows.last().map_or(0, |(l, _)| *l),
            format!("{} label rows but {} feature rows", label_rows.len(), n),
        ));
    }
    let has_utility = label_rows.first().is_some_and(|(_, r)| r.len() >= 3);
    let mut sensitive = vec![usize::MAX; n];
    let mut utility = vec![usize::MAX; n];
    for (line, row) in &label_rows {
        let expected = if has_utility { 3 } else { 2 };
        if row.len() != expected {
            return Err(parse_err(&lpath, *line, format!("expected {expected} columns")));
        }
        let node: usize = row[0]
            .parse()
            .map_err(|_| parse_err(&lpath, *line, format!("bad node id {:?}", row[0])))?;
        if node >= n {
            return Err(parse_err(&lpath, *line, format!("node id {node} out of range 0..{n}")));
        }
        if sensitive[node] != usize::MAX {
            return Err(parse_err(&lpath, *line, format!("duplicate labels for node {node}")));
        }
        sensitive[node] = parse_label(&lpath, *line, &row[1], "sensitive")?;
        if has_utility {
            utility[node] = parse_label(&lpath, *line, &row[2], "utility")?;
        }
    }

    let epath = edges_path(prefix);
    let mut edges = Vec::new();
    for (line, row) in records(&epath)? {
        if row.len() != 2 {
            return Err(parse_err(&epath, line, "expected 2 columns"));
        }
        let mut ids = [0usize; 2];
        for (slot, field) in ids.iter_mut().zip(&row) {
            *slot = field
                .parse()
                .map_err(|_| parse_err(&epath, line, format!("bad node id {field:?}")))?;
            if *slot >= n {
                return Err(parse_err(
                    &epath,
                    line,
                    format!("edge references node {slot} but graph has {n} nodes"),
                ));
            }
        }
        if ids[0] == ids[1] {
            return Err(parse_err(&epath, line, format!("self-loop on node {}", ids[0])));
        }
        edges.push((ids[0], ids[1]));
    }

    LabeledGraph::new(n, &edges, features, sensitive, has_utility.then_some(utility))
}

pub fn write_graph(graph: &LabeledGraph, prefix: &Path) -> Result<()> {
    if let Some(dir) = prefix.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = std::io::BufWriter::new(File::create(edges_path(prefix))?);
    writeln!(w, "src,dst")?;
    for (u, v) in graph.edges() {
        writeln!(w, "{u},{v}")?;
    }
    w.flush()?;

    write_matrix(&features_path(prefix), graph.features().view(), "f")?;

    let mut w = std::io::BufWriter::new(File::create(labels_path(prefix))?);
    match graph.utility_labels() {
        Some(u) => {
            writeln!(w, "node,sensitive,utility")?;
            for (i, (s, u)) in graph.sensitive_labels().iter().zip(u).enumerate() {
                writeln!(w, "{i},{s},{u}")?;
            }
        }
        None => {
            writeln!(w, "node,sensitive")?;
            for (i, s) in graph.sensitive_labels().iter().enumerate() {
                writeln!(w, "{i},{s}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn write(path: &Path, body: &str) {
        std::fs::write(path, body).unwrap();
    }

    fn fixture(dir: &Path, edges: &str, labels: &str) -> PathBuf {
        let prefix = dir.join("g");
        write(&features_path(&prefix), "f0,f1\n0.5,1\n-1,2e-3\n3,4\n");
        write(&edges_path(&prefix), edges);
        write(&labels_path(&prefix), labels);
        prefix
    }

    #[test]
    fn loads_headerless_and_headed() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = fixture(
            dir.path(),
            "0,1\n1,2\n",
            "node,sensitive,utility\n0,0,1\n1,1,0\n2,0,0\n",
        );
        let g = load_graph(&prefix).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(g.features()[[1, 1]], 2e-3);
        assert_eq!(g.utility_labels(), Some(&[1, 0, 0][..]));
    }

    #[test]
    fn dangling_edge_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = fixture(dir.path(), "src,dst\n0,1\n1,3\n", "0,0\n1,1\n2,0\n");
        let msg = load_graph(&prefix).unwrap_err().to_string();
        assert!(msg.contains("g.edges.csv:3"), "{msg}");
        assert!(msg.contains("node 3"), "{msg}");
    }

    #[test]
    fn row_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = fixture(dir.path(), "0,1\n", "0,0\n1,1\n");
        let msg = load_graph(&prefix).unwrap_err().to_string();
        assert!(msg.contains("g.labels.csv"), "{msg}");
        assert!(msg.contains("2 label rows but 3 feature rows"), "{msg}");
    }

    #[test]
    fn non_integer_label() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = fixture(dir.path(), "0,1\n", "node,sensitive\n0,0\n1,0.5\n2,1\n");
        let msg = load_graph(&prefix).unwrap_err().to_string();
        assert!(msg.contains("g.labels.csv:3"), "{msg}");
        assert!(msg.contains("sensitive label"), "{msg}");
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = array![[0.1, -1.0 / 3.0], [1e-300, 12345.678]];
        write_matrix(&path, m.view(), "z").unwrap();
        assert_eq!(read_matrix(&path).unwrap(), m);
    }
}
