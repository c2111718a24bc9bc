//! Text renderings of panels and networks.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lvdn::{DegreeReport, Network};
use crate::panel::{TimePanel, DATE_FORMAT};

/// `source,target,weight`; the source of entry `(i, j)` is `j`.
pub fn edge_list(net: &Network) -> String {
    let mut out = String::from("source,target,weight\n");
    for (i, j, w) in net.edges() {
        let _ = writeln!(out, "{},{},{w}", net.labels[j], net.labels[i]);
    }
    out
}

/// Upper-triangle `i,j,weight` rows of a symmetric network.
pub fn symmetric_edge_list(net: &Network) -> String {
    let mut out = String::from("i,j,weight\n");
    for (i, j, w) in net.edges() {
        if i < j {
            let _ = writeln!(out, "{},{},{w}", net.labels[i], net.labels[j]);
        }
    }
    out
}

/// Dense matrix with a label header row and label first column.
pub fn adjacency_csv(labels: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::from("label");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, l) in labels.iter().enumerate() {
        out.push_str(l);
        for j in 0..m.ncols() {
            let _ = write!(out, ",{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`adjacency_csv`].
pub fn parse_adjacency(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let src = Path::new("<adjacency>");
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::format(src, e.to_string()))?.clone();
    let labels: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let n = labels.len();
    let mut m = DMatrix::zeros(n, n);
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(src, e.to_string()))?;
        if i >= n || rec.len() != n + 1 || rec.get(0) != Some(labels[i].as_str()) {
            return Err(Error::format(src, format!("row {} does not match the header", i + 1)));
        }
        for j in 0..n {
            m[(i, j)] = rec[j + 1]
                .trim()
                .parse()
                .map_err(|_| Error::format(src, format!("bad number `{}`", &rec[j + 1])))?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::format(src, format!("{rows} rows for {n} columns")));
    }
    Ok((labels, m))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// GEXF document with `sector`, `from_degree` and `to_degree` node attributes.
pub fn gexf(net: &Network, degrees: Option<&DegreeReport>) -> String {
    let n = net.n();
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<gexf xmlns=\"http://gexf.net/1.3\" version=\"1.3\">\n");
    let _ = writeln!(out, "  <graph mode=\"static\" defaultedgetype=\"directed\">");
    out.push_str("    <attributes class=\"node\">\n");
    out.push_str("      <attribute id=\"0\" title=\"sector\" type=\"string\"/>\n");
    out.push_str("      <attribute id=\"1\" title=\"from_degree\" type=\"double\"/>\n");
    out.push_str("      <attribute id=\"2\" title=\"to_degree\" type=\"double\"/>\n");
    out.push_str("    </attributes>\n    <nodes>\n");
    for i in 0..n {
        let sector = net.sectors.as_ref().map_or("", |s| s[i].as_str());
        let (from, to) = degrees.map_or((0.0, 0.0), |d| (d.from[i], d.to[i]));
        let _ = writeln!(
            out,
            "      <node id=\"{i}\" label=\"{}\">\n        <attvalues>\n          <attvalue for=\"0\" value=\"{}\"/>\n          <attvalue for=\"1\" value=\"{from}\"/>\n          <attvalue for=\"2\" value=\"{to}\"/>\n        </attvalues>\n      </node>",
            xml_escape(&net.labels[i]),
            xml_escape(sector)
        );
    }
    out.push_str("    </nodes>\n    <edges>\n");
    for (k, (i, j, w)) in net.edges().into_iter().enumerate() {
        let _ = writeln!(out, "      <edge id=\"{k}\" source=\"{j}\" target=\"{i}\" weight=\"{w}\"/>");
    }
    out.push_str("    </edges>\n  </graph>\n</gexf>\n");
    out
}

/// `date,<labels...>` with one row per observation.
pub fn panel_csv(panel: &TimePanel) -> String {
    let mut out = String::from("date");
    for l in &panel.labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for t in 0..panel.t() {
        let _ = write!(out, "{}", panel.dates[t].format(DATE_FORMAT));
        for i in 0..panel.n() {
            let _ = write!(out, ",{}", panel.values[(i, t)]);
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_gzip(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
    enc.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    enc.finish()
        .and_then(|mut w| w.flush())
        .map_err(|e| Error::io(path, e))
}
