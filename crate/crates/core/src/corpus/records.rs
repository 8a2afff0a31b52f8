use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

/// One observed (user, item, rating, review) interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
    pub review: String,
}

/// Names of the four required fields in the input objects.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub user: String,
    pub item: String,
    pub rating: String,
    pub review: String,
}

impl FieldSchema {
    pub fn amazon() -> Self {
        Self::new("reviewerID", "asin", "overall", "reviewText")
    }

    pub fn yelp() -> Self {
        Self::new("user_id", "business_id", "stars", "text")
    }

    pub fn new(user: &str, item: &str, rating: &str, review: &str) -> Self {
        Self {
            user: user.to_owned(),
            item: item.to_owned(),
            rating: rating.to_owned(),
            review: review.to_owned(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "amazon" => Some(Self::amazon()),
            "yelp" => Some(Self::yelp()),
            _ => None,
        }
    }
}

impl Default for FieldSchema {
    fn default() -> Self {
        Self::amazon()
    }
}

/// Counters reported by [`ingest_records`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub kept: usize,
    pub dropped_empty: usize,
    pub dropped_range: usize,
}

fn id_field(obj: &serde_json::Map<String, Value>, name: &str, line: usize) -> Result<String> {
    match obj.get(name) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(Value::Null) | None => Err(Error::Schema { line, field: name.to_owned() }),
        Some(other) => Err(Error::Parse {
            line,
            message: format!("field `{name}` must be a string or number, got {other}"),
        }),
    }
}

fn rating_field(obj: &serde_json::Map<String, Value>, name: &str, line: usize) -> Result<f64> {
    match obj.get(name) {
        Some(Value::Number(n)) => n.as_f64().ok_or_else(|| Error::Parse {
            line,
            message: format!("rating `{n}` is not representable"),
        }),
        Some(Value::String(s)) => s.trim().parse::<f64>().map_err(|_| Error::Parse {
            line,
            message: format!("rating `{s}` is not a number"),
        }),
        Some(Value::Null) | None => Err(Error::Schema { line, field: name.to_owned() }),
        Some(other) => Err(Error::Parse {
            line,
            message: format!("rating must be numeric, got {other}"),
        }),
    }
}

/// Reads newline-delimited JSON objects, one interaction per line.
///
/// Records whose review is blank after trimming, or whose rating falls
/// outside `[1, 5]`, are dropped and counted. Blank lines are ignored.
/// Line numbers in errors are 1-based.
pub fn ingest_records<R: BufRead>(
    source: R,
    schema: &FieldSchema,
) -> Result<(Vec<InteractionRecord>, IngestSummary)> {
    let mut records = Vec::new();
    let mut summary = IngestSummary::default();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        let user_id = id_field(&obj, &schema.user, line_no)?;
        let item_id = id_field(&obj, &schema.item, line_no)?;
        let rating = rating_field(&obj, &schema.rating, line_no)?;
        let review = match obj.get(&schema.review) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) | None => {
                return Err(Error::Schema { line: line_no, field: schema.review.clone() })
            }
            Some(other) => other.to_string(),
        };

        if review.trim().is_empty() {
            summary.dropped_empty += 1;
            continue;
        }
        if !rating.is_finite() || !(MIN_RATING..=MAX_RATING).contains(&rating) {
            summary.dropped_range += 1;
            continue;
        }
        summary.kept += 1;
        records.push(InteractionRecord { user_id, item_id, rating, review });
    }
    Ok((records, summary))
}

/// Serializes records back to newline-delimited JSON under `schema`.
pub fn to_json_lines(records: &[InteractionRecord], schema: &FieldSchema) -> String {
    let mut out = String::new();
    for r in records {
        let mut obj = serde_json::Map::new();
        obj.insert(schema.user.clone(), Value::String(r.user_id.clone()));
        obj.insert(schema.item.clone(), Value::String(r.item_id.clone()));
        obj.insert(schema.rating.clone(), serde_json::json!(r.rating));
        obj.insert(schema.review.clone(), Value::String(r.review.clone()));
        out.push_str(&Value::Object(obj).to_string());
        out.push('\n');
    }
    out
}

/// Iteratively drops records until every remaining user and item has at
/// least `k` records. Order of the survivors is preserved.
pub fn k_core(records: &[InteractionRecord], k: usize) -> Vec<InteractionRecord> {
    let mut keep = vec![true; records.len()];
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for (r, _) in records.iter().zip(&keep).filter(|(_, k)| **k) {
            *users.entry(&r.user_id).or_default() += 1;
            *items.entry(&r.item_id).or_default() += 1;
        }
        let mut changed = false;
        for (r, kept) in records.iter().zip(keep.iter_mut()) {
            if *kept && (users[r.user_id.as_str()] < k || items[r.item_id.as_str()] < k) {
                *kept = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    records
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(r, _)| r.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(text: &str) -> Result<(Vec<InteractionRecord>, IngestSummary)> {
        ingest_records(text.as_bytes(), &FieldSchema::amazon())
    }

    #[test]
    fn empty_input() {
        let (recs, summary) = ingest("").unwrap();
        assert!(recs.is_empty());
        assert_eq!(summary, IngestSummary::default());
    }

    #[test]
    fn drops_empty_review() {
        let text = r#"{"reviewerID":"u1","asin":"i1","overall":5.0,"reviewText":""}
{"reviewerID":"u1","asin":"i2","overall":4.0,"reviewText":"   "}
{"reviewerID":"u2","asin":"i1","overall":2.0,"reviewText":"meh"}"#;
        let (recs, summary) = ingest(text).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(summary, IngestSummary { kept: 1, dropped_empty: 2, dropped_range: 0 });
    }

    #[test]
    fn drops_out_of_range_rating() {
        let text = r#"{"reviewerID":"u1","asin":"i1","overall":0,"reviewText":"x"}
{"reviewerID":"u1","asin":"i1","overall":"6","reviewText":"x"}
{"reviewerID":"u1","asin":"i1","overall":"5","reviewText":"x"}"#;
        let (recs, summary) = ingest(text).unwrap();
        assert_eq!(summary.dropped_range, 2);
        assert_eq!(recs[0].rating, 5.0);
    }

    #[test]
    fn parse_error_carries_line_number() {
        let text = "{\"reviewerID\":\"u\",\"asin\":\"i\",\"overall\":3,\"reviewText\":\"ok\"}\n{not json";
        assert!(matches!(ingest(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_field_is_schema_error() {
        let text = r#"{"reviewerID":"u","overall":3,"reviewText":"ok"}"#;
        match ingest(text) {
            Err(Error::Schema { line: 1, field }) => assert_eq!(field, "asin"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn yelp_schema_and_numeric_ids() {
        let text = r#"{"user_id":17,"business_id":"b","stars":4,"text":"great tacos"}"#;
        let (recs, _) = ingest_records(text.as_bytes(), &FieldSchema::yelp()).unwrap();
        assert_eq!(recs[0].user_id, "17");
    }

    #[test]
    fn json_lines_round_trip() {
        let recs = vec![InteractionRecord {
            user_id: "a".into(),
            item_id: "b".into(),
            rating: 3.5,
            review: "fine \"quoted\"".into(),
        }];
        let text = to_json_lines(&recs, &FieldSchema::amazon());
        assert_eq!(ingest(&text).unwrap().0, recs);
    }

    #[test]
    fn k_core_removes_sparse_entities() {
        let mk = |u: &str, i: &str| InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            rating: 4.0,
            review: "r".into(),
        };
        let recs = vec![mk("a", "x"), mk("a", "y"), mk("b", "x"), mk("b", "y"), mk("c", "x")];
        let core = k_core(&recs, 2);
        assert_eq!(core.len(), 4);
        assert!(core.iter().all(|r| r.user_id != "c"));
    }
}
