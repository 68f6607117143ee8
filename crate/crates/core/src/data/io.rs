//! Items JSONL and pairs CSV.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Dataset, ItemRecord, Pair, Provenance};
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_err(path: &Path, line: usize, field: &str, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, field: field.to_string(), reason: reason.into() }
}

fn parse_item(path: &Path, line_no: usize, line: &str) -> Result<ItemRecord> {
    let value: Value = serde_json::from_str(line).map_err(|e| parse_err(path, line_no, "<json>", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| parse_err(path, line_no, "<json>", "expected an object"))?;
    if let Some(extra) = obj.keys().find(|k| !matches!(k.as_str(), "id" | "category" | "features")) {
        return Err(parse_err(path, line_no, extra, "unknown field"));
    }
    let text = |key: &str| -> Result<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(parse_err(path, line_no, key, "expected a string")),
            None => Err(parse_err(path, line_no, key, "missing")),
        }
    };
    let id = text("id")?;
    let category = text("category")?;
    let features = match obj.get("features") {
        Some(Value::Array(vals)) => vals
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| parse_err(path, line_no, "features", format!("entry {i} is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?,
        Some(_) => return Err(parse_err(path, line_no, "features", "expected an array of numbers")),
        None => return Err(parse_err(path, line_no, "features", "missing")),
    };
    Ok(ItemRecord { id, category, features })
}

/// Reads items JSONL and pairs CSV into a validated [`Dataset`].
///
/// Features are taken verbatim; standardization is a separate step
/// ([`Dataset::standardize`]). All pairs start in the test set.
pub fn load_dataset(items_path: &Path, pairs_path: &Path) -> Result<Dataset> {
    let items_bytes = std::fs::read(items_path).map_err(|e| Error::io(format!("reading {}", items_path.display()), e))?;
    let pairs_bytes = std::fs::read(pairs_path).map_err(|e| Error::io(format!("reading {}", pairs_path.display()), e))?;

    let mut items = Vec::new();
    let mut dim: Option<usize> = None;
    let mut seen = std::collections::HashMap::new();
    for (i, line) in BufReader::new(items_bytes.as_slice()).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(format!("reading {}", items_path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = parse_item(items_path, line_no, &line)?;
        match dim {
            None => dim = Some(item.features.len()),
            Some(d) if d != item.features.len() => {
                return Err(parse_err(
                    items_path,
                    line_no,
                    "features",
                    format!("has {} entries, earlier items have {d}", item.features.len()),
                ))
            }
            _ => {}
        }
        if let Some(first) = seen.insert(item.id.clone(), line_no) {
            return Err(parse_err(items_path, line_no, "id", format!("duplicate id `{}` (first on line {first})", item.id)));
        }
        items.push(item);
    }
    let index: std::collections::HashMap<&str, usize> =
        items.iter().enumerate().map(|(i, it)| (it.id.as_str(), i)).collect();

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(pairs_bytes.as_slice());
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "id_a" || &headers[1] != "id_b" {
        return Err(parse_err(pairs_path, 1, "header", "expected `id_a,id_b`"));
    }
    let mut pairs = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line_no = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(parse_err(pairs_path, line_no, "record", format!("expected 2 fields, got {}", rec.len())));
        }
        let lookup = |field: &str, id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| parse_err(pairs_path, line_no, field, format!("unknown item id `{id}`")))
        };
        let a = lookup("id_a", &rec[0])?;
        let b = lookup("id_b", &rec[1])?;
        if items[a].category == items[b].category {
            return Err(parse_err(pairs_path, line_no, "id_b", "pair members share a category"));
        }
        pairs.push(Pair { a, b });
    }

    Dataset::new(
        items,
        pairs,
        Provenance::Files { items_sha256: sha256_hex(&items_bytes), pairs_sha256: sha256_hex(&pairs_bytes) },
    )
}

/// Writes items JSONL and pairs CSV (LF line endings).
pub fn save_dataset(ds: &Dataset, items_path: &Path, pairs_path: &Path) -> Result<()> {
    let file = File::create(items_path).map_err(|e| Error::io(format!("creating {}", items_path.display()), e))?;
    let mut w = BufWriter::new(file);
    for it in ds.items() {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io("writing items", e))?;
    }
    w.flush().map_err(|e| Error::io("writing items", e))?;

    let mut csv_out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(pairs_path)?;
    csv_out.write_record(["id_a", "id_b"])?;
    for p in ds.pairs() {
        csv_out.write_record([ds.item(p.a).id.as_str(), ds.item(p.b).id.as_str()])?;
    }
    csv_out.flush().map_err(|e| Error::io("writing pairs", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    const ITEMS: &str = concat!(
        r#"{"id":"a","category":"top","features":[1.0,2.0]}"#,
        "\n",
        r#"{"id":"b","category":"shoe","features":[0.5,-1.0]}"#,
        "\n"
    );

    #[test]
    fn empty_pairs_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.jsonl", ITEMS);
        let pairs = write(dir.path(), "pairs.csv", "id_a,id_b\n");
        let ds = load_dataset(&items, &pairs).unwrap();
        assert_eq!(ds.items().len(), 2);
        assert!(ds.pairs().is_empty());
    }

    #[test]
    fn unknown_id_cites_csv_line() {
        let dir = tempfile::tempdir().unwrap();
        let items = write(dir.path(), "items.jsonl", ITEMS);
        let pairs = write(dir.path(), "pairs.csv", "id_a,id_b\na,b\na,zzz\n");
        match load_dataset(&items, &pairs).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "id_b");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_items_name_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = write(dir.path(), "pairs.csv", "id_a,id_b\n");
        let cases = [
            (concat!(r#"{"id":"a","category":"x","features":[1]}"#, "\n", r#"{"id":"b","features":[1]}"#), 2, "category"),
            (r#"{"id":"a","category":"x","features":[1,"q"]}"#, 1, "features"),
            (r#"{"id":"a","category":"x","features":[1],"extra":1}"#, 1, "extra"),
            (concat!(r#"{"id":"a","category":"x","features":[1]}"#, "\n", r#"{"id":"a","category":"y","features":[1]}"#), 2, "id"),
            (concat!(r#"{"id":"a","category":"x","features":[1]}"#, "\n", r#"{"id":"b","category":"y","features":[1,2]}"#), 2, "features"),
            ("not json", 1, "<json>"),
        ];
        for (text, want_line, want_field) in cases {
            let items = write(dir.path(), "items.jsonl", text);
            match load_dataset(&items, &pairs).unwrap_err() {
                Error::Parse { line, field, .. } => {
                    assert_eq!((line, field.as_str()), (want_line, want_field), "{text}");
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_value_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { items_per_category: 40, feature_dim: 10, style_dim_true: 3, ..SynthConfig::default() };
        let ds = synth_generate(&cfg).unwrap();
        let (ip, pp) = (dir.path().join("i.jsonl"), dir.path().join("p.csv"));
        save_dataset(&ds, &ip, &pp).unwrap();
        let loaded = load_dataset(&ip, &pp).unwrap();
        assert_eq!(loaded.items(), ds.items());
        assert_eq!(loaded.pairs(), ds.pairs());
        // second trip is a fixed point, including digests
        let (ip2, pp2) = (dir.path().join("i2.jsonl"), dir.path().join("p2.csv"));
        save_dataset(&loaded, &ip2, &pp2).unwrap();
        let again = load_dataset(&ip2, &pp2).unwrap();
        assert_eq!(again, loaded);
    }
}
