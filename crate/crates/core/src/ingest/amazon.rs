//! Amazon review dumps: line-delimited review records (`reviewerID`, `asin`,
//! `unixReviewTime`) plus optional product metadata. Metadata lines may be
//! strict JSON or Python literals.

use std::collections::HashMap;
use std::path::Path;

use serde_json::Value;

use super::{assemble, pylit, read_text, Dataset, IngestReport, RawEvent};
use crate::domain::{Item, ItemId};
use crate::error::{Error, Result};

pub fn parse_amazon(reviews: &Path, meta: Option<&Path>) -> Result<(Dataset, IngestReport)> {
    let r = read_text(reviews)?;
    let m = match meta {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    parse_amazon_str(&r, &m, &reviews.display().to_string())
}

fn parse_record(line: &str) -> Option<Value> {
    serde_json::from_str(line).ok().or_else(|| pylit::parse(line).ok())
}

fn string_field(v: &Value, key: &str) -> Option<String> {
    match v.get(key)? {
        Value::String(s) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Category paths without their root (the store name), then the brand.
fn attributes(meta: &Value) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(Value::Array(paths)) = meta.get("categories") {
        for path in paths {
            if let Value::Array(levels) = path {
                out.extend(levels.iter().skip(1).filter_map(Value::as_str).map(str::to_string));
            }
        }
    }
    if let Some(Value::Array(levels)) = meta.get("category") {
        out.extend(levels.iter().skip(1).filter_map(Value::as_str).map(str::to_string));
    }
    if let Some(brand) = string_field(meta, "brand") {
        out.push(brand);
    }
    out
}

pub fn parse_amazon_str(reviews: &str, meta: &str, reviews_name: &str) -> Result<(Dataset, IngestReport)> {
    let mut metadata: HashMap<ItemId, (Option<String>, Vec<String>)> = HashMap::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let Some(v) = parse_record(line) else {
            log::debug!("skipping unparseable metadata line");
            continue;
        };
        if let Some(asin) = string_field(&v, "asin") {
            metadata.insert(ItemId::new(asin), (string_field(&v, "title"), attributes(&v)));
        }
    }

    let mut report = IngestReport::default();
    let mut events = Vec::new();
    for (n, line) in reviews.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.records += 1;
        let v = parse_record(line).ok_or_else(|| Error::Malformed {
            file: reviews_name.to_string(),
            line: n + 1,
            message: "not a JSON record".into(),
        })?;
        let user = string_field(&v, "reviewerID");
        let asin = string_field(&v, "asin");
        let time = v.get("unixReviewTime").and_then(|t| match t {
            Value::Number(n) => n.as_i64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        });
        match (user, asin, time) {
            (Some(user), Some(asin), Some(time)) => events.push(RawEvent {
                user,
                item: ItemId::new(asin),
                time,
            }),
            _ => report.missing_fields += 1,
        }
    }
    if report.missing_fields > 0 {
        log::warn!("{} review records lacked a required field and were skipped", report.missing_fields);
    }
    let mut items = HashMap::new();
    for e in &events {
        if items.contains_key(&e.item) {
            continue;
        }
        let (title, attrs) = metadata.get(&e.item).cloned().unwrap_or((None, Vec::new()));
        let title = title.unwrap_or_else(|| e.item.to_string());
        items.insert(e.item.clone(), Item::new(e.item.clone(), &title, attrs)?);
    }
    let ds = assemble(events, &items, &mut report)?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const META: &str = r#"{'asin': 'A1', 'title': 'Rose Oil', 'categories': [['Beauty', 'Skin Care', 'Face'], ['Beauty', 'Fragrance']], 'brand': 'Acme'}
{"asin": "A2", "title": "Lip Balm", "category": ["Beauty", "Lips"]}
"#;

    #[test]
    fn five_records_two_users() {
        let reviews = r#"{"reviewerID": "U2", "asin": "A2", "unixReviewTime": 50}
{"reviewerID": "U1", "asin": "A2", "unixReviewTime": 20}
{"reviewerID": "U1", "asin": "A1", "unixReviewTime": 10}
{"reviewerID": "U2", "asin": "A3", "unixReviewTime": 40}
{"reviewerID": "U1", "asin": "A1", "unixReviewTime": 30}
"#;
        let (ds, report) = parse_amazon_str(reviews, META, "r").unwrap();
        assert_eq!(ds.sequences.len(), 2);
        assert_eq!(ds.sequences[0].user_id, "U1");
        assert_eq!(ds.sequences[0].events, vec![ItemId::from("A1"), ItemId::from("A2")]);
        assert_eq!(ds.sequences[1].events, vec![ItemId::from("A3"), ItemId::from("A2")]);
        assert_eq!(report.duplicates, 1);
        let a1 = ds.catalog.get(&ItemId::from("A1")).unwrap();
        assert_eq!(a1.attributes, vec!["Skin Care", "Face", "Fragrance", "Acme"]);
        assert_eq!(ds.catalog.get(&ItemId::from("A2")).unwrap().attributes, vec!["Lips"]);
        assert_eq!(ds.catalog.get(&ItemId::from("A3")).unwrap().title, "A3");
    }

    #[test]
    fn missing_timestamp_is_counted() {
        let reviews = r#"{"reviewerID": "U1", "asin": "A1"}
{"reviewerID": "U1", "asin": "A2", "unixReviewTime": 5}
"#;
        let (ds, report) = parse_amazon_str(reviews, META, "r").unwrap();
        assert_eq!(report.missing_fields, 1);
        assert_eq!(ds.sequences[0].events, vec![ItemId::from("A2")]);
    }
}
