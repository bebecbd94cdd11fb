//! Plain-text tables for the JSON artifacts.

use std::fmt::Write;

use serde_json::Value;

const SUPPORTED_VERSION: u64 = 1;

fn num(v: &Value) -> String {
    if let Some(i) = v.as_i64() {
        return i.to_string();
    }
    if let Some(u) = v.as_u64() {
        return u.to_string();
    }
    match v.as_f64() {
        Some(x) if format!("{x}").len() <= 7 => format!("{x}"),
        Some(x) => format!("{x:.4}"),
        None if v.is_null() => "-".into(),
        None => v.to_string(),
    }
}

fn flag(v: &Value) -> &'static str {
    match v.as_bool() {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "-",
    }
}

/// Left-aligned columns separated by two spaces.
fn table(out: &mut String, header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&width).enumerate() {
            if i + 1 == cells.len() {
                s.push_str(c);
            } else {
                let _ = write!(s, "{c:<w$}  ");
            }
        }
        s.trim_end().to_string()
    };
    let _ = writeln!(out, "{}", line(header.to_vec()));
    for r in rows {
        let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
    }
}

pub fn render(doc: &Value) -> Result<String, String> {
    let version = doc
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or("not an artifact of this tool (no format_version)")?;
    if version > SUPPORTED_VERSION {
        return Err(format!("format version {version} is newer than supported ({SUPPORTED_VERSION})"));
    }
    let kind = doc.get("kind").and_then(Value::as_str);
    match kind {
        Some("tree") => Ok(render_tree(doc)),
        Some("verification") => Ok(render_verification(doc)),
        Some("paths") => Ok(render_paths(doc)),
        _ if doc.get("pathwise").is_some() => Ok(render_run(doc)),
        _ => Err("unrecognised artifact".into()),
    }
}

fn render_tree(doc: &Value) -> String {
    let mut out = String::new();
    let cfg = &doc["config"];
    let counts: Vec<u64> = doc["tree"]["child_counts"]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_u64).collect())
        .unwrap_or_default();
    let _ = writeln!(out, "tree: {} edges, seed {}", num(&doc["tree"]["n_edges"]), num(&cfg["seed"]));
    let mut freq = std::collections::BTreeMap::new();
    for c in &counts {
        *freq.entry(*c).or_insert(0u64) += 1;
    }
    let rows: Vec<Vec<String>> = freq.iter().map(|(k, n)| vec![k.to_string(), n.to_string()]).collect();
    table(&mut out, &["children", "nodes"], &rows);
    if let Some(l) = doc["labels"].as_array() {
        let xs: Vec<f64> = l.iter().filter_map(Value::as_f64).collect();
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(out, "labels: min {lo}, max {hi}");
    }
    out
}

fn render_paths(doc: &Value) -> String {
    let cols: Vec<String> = doc["columns"]
        .as_array()
        .map(|a| a.iter().filter_map(|c| c.as_str().map(String::from)).collect())
        .unwrap_or_default();
    format!("paths: {} rows, columns {}\n", num(&doc["rows"]), cols.join(", "))
}

fn render_verification(doc: &Value) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "verification: trees with at most {} edges, at most {} marked nodes",
        num(&doc["max_edges"]),
        num(&doc["max_marks"])
    );
    let rows: Vec<Vec<String>> = doc["checks"]
        .as_array()
        .into_iter()
        .flatten()
        .map(|c| {
            vec![
                c["name"].as_str().unwrap_or("?").to_string(),
                num(&c["instances"]),
                num(&c["skipped"]),
                flag(&c["passed"]).to_string(),
            ]
        })
        .collect();
    table(&mut out, &["identity", "instances", "skipped", "result"], &rows);
    for c in doc["checks"].as_array().into_iter().flatten() {
        if let Some(ce) = c["counterexample"].as_str() {
            let _ = writeln!(out, "counterexample ({}): {ce}", c["name"].as_str().unwrap_or("?"));
        }
    }
    for n in doc["notes"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "note: {}", n.as_str().unwrap_or_default());
    }
    out
}

fn render_run(doc: &Value) -> String {
    let mut out = String::new();
    let cfg = &doc["config"];
    let _ = writeln!(
        out,
        "run: {} replicas of {} edges, seed {}, grid {}",
        num(&cfg["replicas"]),
        num(&cfg["n_edges"]),
        num(&cfg["master_seed"]),
        cfg["grid"]
    );
    let _ = writeln!(out, "generator: {}", doc["generator"].as_str().unwrap_or("?"));
    if let Some(cov) = doc.get("covariance").filter(|c| !c.is_null()) {
        let _ = writeln!(out, "\ncovariance ratios ({} bootstrap resamples)", num(&cov["resamples"]));
        let rows: Vec<Vec<String>> = cov["entries"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|e| {
                vec![
                    e["a"].as_str().unwrap_or("?").into(),
                    e["b"].as_str().unwrap_or("?").into(),
                    num(&e["s"]),
                    num(&e["t"]),
                    num(&e["ratio"]),
                    num(&e["se"]),
                    num(&e["target"]),
                    num(&e["tolerance"]),
                    if e["degenerate"].as_bool() == Some(true) { "degenerate".into() } else { flag(&e["pass"]).into() },
                ]
            })
            .collect();
        table(&mut out, &["A", "B", "s", "t", "ratio", "se", "target", "band", "result"], &rows);
    }
    if let Some(ks) = doc["ks"].as_array().filter(|k| !k.is_empty()) {
        let _ = writeln!(out, "\nconditional normality");
        let rows: Vec<Vec<String>> = ks
            .iter()
            .map(|r| {
                vec![
                    r["process"].as_str().unwrap_or("?").into(),
                    num(&r["s"]),
                    num(&r["statistic"]),
                    num(&r["z_mean"]),
                    num(&r["z_variance"]),
                    format!("{}/{}", num(&r["excluded"]), r["included"].as_u64().unwrap_or(0) + r["excluded"].as_u64().unwrap_or(0)),
                    if r["flagged"].as_bool() == Some(true) { "flagged".into() } else { String::new() },
                ]
            })
            .collect();
        table(&mut out, &["process", "s", "ks", "mean z", "var z", "excluded", ""], &rows);
    }
    if let Some(ind) = doc["independence"].as_array().filter(|k| !k.is_empty()) {
        let _ = writeln!(out, "\nindependence of r1(s) and r2(t)");
        let rows: Vec<Vec<String>> = ind
            .iter()
            .map(|r| {
                vec![
                    num(&r["s"]),
                    num(&r["t"]),
                    num(&r["correlation"]),
                    num(&r["se"]),
                    num(&r["threshold"]),
                    match r["degenerate"].as_str() {
                        Some(why) => format!("degenerate: {why}"),
                        None => flag(&r["pass"]).into(),
                    },
                ]
            })
            .collect();
        table(&mut out, &["s", "t", "corr", "se", "limit", "result"], &rows);
    }
    if let Some(d) = doc.get("diagnostics").filter(|d| !d.is_null()) {
        let _ = writeln!(out, "\ndiagnostics (medians over {} replicas)", num(&d["replicas"]));
        let rows = vec![
            vec!["sup gap contour/height".into(), num(&d["median_sup_gap"])],
            vec!["max increment / ln n".into(), num(&d["median_max_increment_ratio"])],
            vec!["last depth / ln n".into(), num(&d["median_last_depth_ratio"])],
            vec!["lineage concentration".into(), num(&d["median_concentration"])],
            vec!["lineage concentration (max)".into(), num(&d["max_concentration"])],
        ];
        table(&mut out, &["quantity", "value"], &rows);
    }
    let p = &doc["pathwise"];
    if p["replicas_checked"].as_u64().unwrap_or(0) > 0 {
        let _ = writeln!(
            out,
            "\nlabel decomposition: {} replicas, {} failures, max residual {}",
            num(&p["replicas_checked"]),
            num(&p["decomposition_failures"]),
            p["max_decomposition_residual"].as_f64().map_or("-".into(), |x| format!("{x:.1e}"))
        );
    }
    if p["lineage_label_checked"].as_u64().unwrap_or(0) > 0 {
        let _ = writeln!(
            out,
            "labels from lineage: {} replicas, {} failures",
            num(&p["lineage_label_checked"]),
            num(&p["lineage_label_failures"])
        );
    }
    for n in doc["notes"].as_array().into_iter().flatten() {
        let _ = writeln!(out, "note: {}", n.as_str().unwrap_or_default());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rejects_unknown_and_future_artifacts() {
        assert!(render(&json!({})).is_err());
        assert!(render(&json!({"format_version": 2, "kind": "tree"})).is_err());
        assert!(render(&json!({"format_version": 1, "kind": "other"})).is_err());
    }

    #[test]
    fn tree_table() {
        let doc = json!({
            "format_version": 1, "kind": "tree",
            "config": {"seed": 3},
            "tree": {"n_edges": 2, "child_counts": [2, 0, 0]},
            "labels": [0.0, 1.0, -1.0]
        });
        let text = render(&doc).unwrap();
        assert!(text.starts_with("tree: 2 edges, seed 3\n"));
        assert!(text.contains("0         2"));
        assert!(text.contains("labels: min -1, max 1"));
    }

    #[test]
    fn number_formatting() {
        assert_eq!(num(&json!(3)), "3");
        assert_eq!(num(&json!(0.123456)), "0.1235");
        assert_eq!(num(&Value::Null), "-");
        assert_eq!(num(&json!(u64::MAX)), "18446744073709551615");
        assert_eq!(num(&json!(0.2)), "0.2");
    }
}
