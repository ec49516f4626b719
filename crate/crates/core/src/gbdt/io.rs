//! Line-oriented text model format.
//!
//! ```text
//! FLPXR-MODEL
//! VERSION 1
//! PARAMS 9
//! n_estimators=750
//! ...
//! FEATURES 12
//! v_type
//! ...
//! CATEGORIES 2
//! vessel_type=30,70
//! origin=4,1
//! TARGET lon base=0.001 trees=750
//! TREE 0 nodes=3
//! 0 split 3 5.5 1 1 2 -
//! 1 leaf - - - - - 0.25
//! ...
//! TARGET lat ...
//! END
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces predictions bit for bit.

use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use super::{Ensemble, GbdtError, GbdtModel, GbdtParams, PrepFingerprint, Tree, TreeNode};
use crate::features::{CategoryEncoder, FeatureEncoding, HorizonSet};

pub const FORMAT_MAGIC: &str = "FLPXR-MODEL";
pub const FORMAT_VERSION: u32 = 1;

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn write_ensemble<W: Write>(w: &mut W, name: &str, e: &Ensemble) -> std::io::Result<()> {
    writeln!(w, "TARGET {name} base={:?} trees={}", e.base_score, e.trees.len())?;
    for (k, tree) in e.trees.iter().enumerate() {
        writeln!(w, "TREE {k} nodes={}", tree.nodes.len())?;
        for (id, node) in tree.nodes.iter().enumerate() {
            match node {
                TreeNode::Split { feature, threshold, default_left, left, right } => writeln!(
                    w,
                    "{id} split {feature} {threshold:?} {} {left} {right} -",
                    u8::from(*default_left)
                )?,
                TreeNode::Leaf { value } => writeln!(w, "{id} leaf - - - - - {value:?}")?,
            }
        }
    }
    Ok(())
}

/// Writes `model` in the text format.
pub fn save_model<W: Write>(model: &GbdtModel, sink: W) -> Result<(), GbdtError> {
    let mut w = std::io::BufWriter::new(sink);
    let p = &model.params;
    writeln!(w, "{FORMAT_MAGIC}")?;
    writeln!(w, "VERSION {FORMAT_VERSION}")?;
    writeln!(w, "PARAMS 9")?;
    writeln!(w, "n_estimators={}", p.n_estimators)?;
    writeln!(w, "learning_rate={:?}", p.learning_rate)?;
    writeln!(w, "max_depth={}", p.max_depth)?;
    writeln!(w, "n_bins={}", p.n_bins)?;
    writeln!(w, "lambda={:?}", p.lambda)?;
    writeln!(w, "gamma={:?}", p.gamma)?;
    writeln!(w, "min_child_weight={:?}", p.min_child_weight)?;
    writeln!(w, "rate={}", model.prep.rate)?;
    writeln!(w, "horizons={}", join(model.prep.horizons.minutes()))?;
    writeln!(w, "FEATURES {}", model.feature_names.len())?;
    for name in &model.feature_names {
        writeln!(w, "{name}")?;
    }
    writeln!(w, "CATEGORIES 2")?;
    writeln!(w, "vessel_type={}", join(model.encoding.vessel_type.values()))?;
    writeln!(w, "origin={}", join(model.encoding.origin.values()))?;
    write_ensemble(&mut w, "lon", &model.lon)?;
    write_ensemble(&mut w, "lat", &model.lat)?;
    writeln!(w, "END")?;
    w.flush()?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    section: &'static str,
}

impl<R: Read> Lines<R> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, GbdtError> {
        Err(GbdtError::Format { section: self.section.to_string(), message: message.into() })
    }

    fn next(&mut self) -> Result<String, GbdtError> {
        match self.inner.next() {
            Some(line) => Ok(line?.trim_end_matches('\r').to_string()),
            None => self.err("unexpected end of file"),
        }
    }

    /// Next line, which must be `<keyword> <rest>`; returns `rest`.
    fn keyword(&mut self, keyword: &str) -> Result<String, GbdtError> {
        let line = self.next()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == keyword => Ok(rest.to_string()),
            _ => self.err(format!("expected {keyword}, found {line:?}")),
        }
    }

    fn parse<T: FromStr>(&self, what: &str, s: &str) -> Result<T, GbdtError> {
        match s.parse() {
            Ok(v) => Ok(v),
            Err(_) => self.err(format!("invalid {what}: {s:?}")),
        }
    }

    fn count(&mut self, keyword: &str, expected: usize) -> Result<(), GbdtError> {
        let rest = self.keyword(keyword)?;
        let n: usize = self.parse("count", &rest)?;
        if n != expected {
            return self.err(format!("expected {expected} entries, found {n}"));
        }
        Ok(())
    }

    fn key_value(&mut self, key: &str, sep: char) -> Result<String, GbdtError> {
        let line = self.next()?;
        match line.split_once(sep) {
            Some((k, v)) if k == key => Ok(v.to_string()),
            _ => self.err(format!("expected {key}, found {line:?}")),
        }
    }

    fn list<T: FromStr>(&self, what: &str, s: &str) -> Result<Vec<T>, GbdtError> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|x| self.parse(what, x)).collect()
    }
}

fn attr<'a>(lines: &Lines<impl Read>, token: Option<&'a str>, key: &str) -> Result<&'a str, GbdtError> {
    match token.and_then(|t| t.strip_prefix(key)).and_then(|t| t.strip_prefix('=')) {
        Some(v) => Ok(v),
        None => lines.err(format!("missing {key}=")),
    }
}

fn read_tree<R: Read>(lines: &mut Lines<R>, index: usize, n_features: usize) -> Result<Tree, GbdtError> {
    let header = lines.keyword("TREE")?;
    let mut parts = header.split(' ');
    let k: usize = lines.parse("tree index", parts.next().unwrap_or(""))?;
    if k != index {
        return lines.err(format!("expected tree {index}, found {k}"));
    }
    let n_nodes: usize = lines.parse("node count", attr(lines, parts.next(), "nodes")?)?;
    if n_nodes == 0 {
        return lines.err(format!("tree {index} has no nodes"));
    }
    let mut nodes = Vec::with_capacity(n_nodes);
    let mut referenced = vec![false; n_nodes];
    for id in 0..n_nodes {
        let line = lines.next()?;
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 8 {
            return lines.err(format!("tree {index} node line has {} fields: {line:?}", f.len()));
        }
        let got: usize = lines.parse("node id", f[0])?;
        if got != id {
            return lines.err(format!("tree {index}: expected node {id}, found {got}"));
        }
        let node = match f[1] {
            "leaf" => {
                let value: f64 = lines.parse("leaf value", f[7])?;
                if !value.is_finite() {
                    return lines.err(format!("tree {index} node {id}: non-finite leaf value"));
                }
                TreeNode::Leaf { value }
            }
            "split" => {
                let feature: u32 = lines.parse("feature index", f[2])?;
                let threshold: f64 = lines.parse("threshold", f[3])?;
                let default_left = match f[4] {
                    "0" => false,
                    "1" => true,
                    other => return lines.err(format!("invalid default direction {other:?}")),
                };
                let left: u32 = lines.parse("child id", f[5])?;
                let right: u32 = lines.parse("child id", f[6])?;
                if feature as usize >= n_features {
                    return lines.err(format!("tree {index} node {id}: feature {feature} out of range"));
                }
                if threshold.is_nan() {
                    return lines.err(format!("tree {index} node {id}: NaN threshold"));
                }
                for c in [left, right] {
                    let c = c as usize;
                    if c <= id || c >= n_nodes || referenced[c] {
                        return lines.err(format!("tree {index} node {id}: invalid child {c}"));
                    }
                    referenced[c] = true;
                }
                TreeNode::Split { feature, threshold, default_left, left, right }
            }
            other => return lines.err(format!("unknown node kind {other:?}")),
        };
        nodes.push(node);
    }
    if referenced.iter().skip(1).any(|r| !r) {
        return lines.err(format!("tree {index} has unreachable nodes"));
    }
    Ok(Tree { nodes })
}

fn read_ensemble<R: Read>(
    lines: &mut Lines<R>,
    name: &str,
    params: &GbdtParams,
    n_features: usize,
) -> Result<Ensemble, GbdtError> {
    lines.section = if name == "lon" { "TARGET lon" } else { "TARGET lat" };
    let header = lines.keyword("TARGET")?;
    let mut parts = header.split(' ');
    if parts.next() != Some(name) {
        return lines.err(format!("expected target {name}"));
    }
    let base_score: f64 = lines.parse("base score", attr(lines, parts.next(), "base")?)?;
    if !base_score.is_finite() {
        return lines.err("non-finite base score");
    }
    let n_trees: usize = lines.parse("tree count", attr(lines, parts.next(), "trees")?)?;
    if n_trees != params.n_estimators {
        return lines.err(format!("{n_trees} trees but n_estimators is {}", params.n_estimators));
    }
    let trees = (0..n_trees)
        .map(|k| read_tree(lines, k, n_features))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ensemble { base_score, learning_rate: params.learning_rate, trees })
}

/// Reads a model written by [`save_model`].
pub fn load_model<R: Read>(source: R) -> Result<GbdtModel, GbdtError> {
    let mut lines = Lines { inner: BufReader::new(source).lines(), section: "header" };
    if lines.next()? != FORMAT_MAGIC {
        return lines.err("not a model file");
    }
    let version: u32 = {
        let v = lines.keyword("VERSION")?;
        lines.parse("version", &v)?
    };
    if version != FORMAT_VERSION {
        return Err(GbdtError::UnsupportedVersion(version));
    }

    lines.section = "PARAMS";
    lines.count("PARAMS", 9)?;
    let kv = |lines: &mut Lines<R>, key: &str| lines.key_value(key, '=');
    let n_estimators = kv(&mut lines, "n_estimators")?;
    let learning_rate = kv(&mut lines, "learning_rate")?;
    let max_depth = kv(&mut lines, "max_depth")?;
    let n_bins = kv(&mut lines, "n_bins")?;
    let lambda = kv(&mut lines, "lambda")?;
    let gamma = kv(&mut lines, "gamma")?;
    let min_child_weight = kv(&mut lines, "min_child_weight")?;
    let rate = kv(&mut lines, "rate")?;
    let horizons = kv(&mut lines, "horizons")?;
    let params = GbdtParams {
        n_estimators: lines.parse("n_estimators", &n_estimators)?,
        learning_rate: lines.parse("learning_rate", &learning_rate)?,
        max_depth: lines.parse("max_depth", &max_depth)?,
        n_bins: lines.parse("n_bins", &n_bins)?,
        lambda: lines.parse("lambda", &lambda)?,
        gamma: lines.parse("gamma", &gamma)?,
        min_child_weight: lines.parse("min_child_weight", &min_child_weight)?,
    };
    if let Err(e) = params.validate() {
        return lines.err(e.to_string());
    }
    let rate: i64 = lines.parse("rate", &rate)?;
    if rate <= 0 {
        return lines.err("rate must be positive");
    }
    let horizons = match HorizonSet::new(lines.list("horizons", &horizons)?) {
        Ok(h) => h,
        Err(e) => return lines.err(e.to_string()),
    };

    lines.section = "FEATURES";
    let n_features: usize = {
        let n = lines.keyword("FEATURES")?;
        lines.parse("feature count", &n)?
    };
    let feature_names = (0..n_features).map(|_| lines.next()).collect::<Result<Vec<_>, _>>()?;

    lines.section = "CATEGORIES";
    lines.count("CATEGORIES", 2)?;
    let vt = lines.key_value("vessel_type", '=')?;
    let vt = CategoryEncoder::from_values(lines.list("vessel type", &vt)?);
    let origin = lines.key_value("origin", '=')?;
    let origin = CategoryEncoder::from_values(lines.list("origin", &origin)?);

    let lon = read_ensemble(&mut lines, "lon", &params, n_features)?;
    let lat = read_ensemble(&mut lines, "lat", &params, n_features)?;

    lines.section = "END";
    if lines.next()? != "END" {
        return lines.err("missing END marker");
    }
    Ok(GbdtModel {
        params,
        lon,
        lat,
        feature_names,
        encoding: FeatureEncoding { vessel_type: vt, origin },
        prep: PrepFingerprint { rate, horizons },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> GbdtModel {
        let tree = Tree {
            nodes: vec![
                TreeNode::Split { feature: 3, threshold: 0.1 + 0.2, default_left: true, left: 1, right: 2 },
                TreeNode::Leaf { value: -1.0 / 3.0 },
                TreeNode::Leaf { value: 2.5e-17 },
            ],
        };
        let params = GbdtParams { n_estimators: 1, learning_rate: 0.1, ..Default::default() };
        GbdtModel {
            params,
            lon: Ensemble { base_score: 0.015, learning_rate: 0.1, trees: vec![tree.clone()] },
            lat: Ensemble { base_score: -0.002, learning_rate: 0.1, trees: vec![Tree::leaf(0.7)] },
            feature_names: crate::features::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            encoding: FeatureEncoding {
                vessel_type: CategoryEncoder::from_values(vec![70, 30]),
                origin: CategoryEncoder::from_values(vec![]),
            },
            prep: PrepFingerprint { rate: 60, horizons: HorizonSet::new(vec![5, 15]).unwrap() },
        }
    }

    fn to_text(m: &GbdtModel) -> String {
        let mut buf = Vec::new();
        save_model(m, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny_model();
        let back = load_model(to_text(&m).as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn unknown_version_rejected() {
        let text = to_text(&tiny_model()).replace("VERSION 1", "VERSION 7");
        assert!(matches!(load_model(text.as_bytes()), Err(GbdtError::UnsupportedVersion(7))));
    }

    #[test]
    fn truncated_file_names_section() {
        let text = to_text(&tiny_model());
        let cut = &text[..text.find("TARGET lat").unwrap() + 5];
        match load_model(cut.as_bytes()) {
            Err(GbdtError::Format { section, .. }) => assert_eq!(section, "TARGET lat"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_child_rejected() {
        let text = to_text(&tiny_model()).replace("0 split 3 0.30000000000000004 1 1 2 -", "0 split 3 0.3 1 0 2 -");
        assert!(matches!(load_model(text.as_bytes()), Err(GbdtError::Format { .. })));
    }

    #[test]
    fn tree_count_must_match_params() {
        let text = to_text(&tiny_model()).replace("n_estimators=1", "n_estimators=2");
        assert!(matches!(load_model(text.as_bytes()), Err(GbdtError::Format { .. })));
    }

    #[test]
    fn bad_magic_rejected() {
        assert!(load_model("hello\n".as_bytes()).is_err());
        assert!(load_model("".as_bytes()).is_err());
    }
}
