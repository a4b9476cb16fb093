//! Event file adapters and external id mapping.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::InteractionEvent;

/// Supported input layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    /// `user_id,item_id,timestamp`, optional header, sorted by time.
    Canonical,
    /// `user item rating timestamp` separated by tabs, `::` or commas; any order.
    Movielens,
    /// `user_id,item_id,timestamp,state_label,features...` with a header.
    Jodie,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Canonical => "canonical",
            Format::Movielens => "movielens",
            Format::Jodie => "jodie",
        })
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" | "csv" => Ok(Format::Canonical),
            "movielens" => Ok(Format::Movielens),
            "jodie" => Ok(Format::Jodie),
            other => Err(Error::Config(format!("unknown format '{other}'"))),
        }
    }
}

/// External ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut map = IdMap::new();
        for id in ids {
            if map.get(&id).is_some() {
                return Err(Error::Invalid(format!("duplicate id '{id}'")));
            }
            map.intern(&id);
        }
        Ok(map)
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        i
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn label(&self, index: usize) -> String {
        self.ids.get(index).cloned().unwrap_or_else(|| format!("#{index}"))
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LoadOptions {
    /// Drop items with fewer than this many interactions (0 or 1 keeps all).
    pub min_item_count: usize,
    /// Keep only the first this-many events after sorting (0 keeps all).
    pub max_events: usize,
    /// Keep only this leading fraction of the events, applied after
    /// `max_events`.
    pub prefix_frac: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub events: Vec<InteractionEvent>,
    pub users: IdMap,
    pub items: IdMap,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn t_max(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.timestamp)
    }

    pub fn load(path: &Path, format: Format, options: LoadOptions) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, format, options)
    }

    pub fn parse(text: &str, format: Format, options: LoadOptions) -> Result<Self> {
        let mut records = match format {
            Format::Canonical => parse_delimited(text, 3, true)?,
            Format::Jodie => parse_delimited(text, 3, false)?,
            Format::Movielens => parse_movielens(text)?,
        };
        if format == Format::Movielens {
            records.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        }
        if options.min_item_count > 1 {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for r in &records {
                *counts.entry(r.item.as_str()).or_default() += 1;
            }
            let keep: std::collections::HashSet<String> = counts
                .into_iter()
                .filter(|(_, c)| *c >= options.min_item_count)
                .map(|(id, _)| id.to_string())
                .collect();
            records.retain(|r| keep.contains(&r.item));
        }
        if options.max_events > 0 {
            records.truncate(options.max_events);
        }
        if let Some(f) = options.prefix_frac {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("prefix fraction {f} outside (0, 1]")));
            }
            let n = (f * records.len() as f64).floor() as usize;
            records.truncate(n);
        }
        Ok(Self::from_records(records))
    }

    fn from_records(records: Vec<Record>) -> Self {
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        let events = records
            .iter()
            .map(|r| InteractionEvent::new(users.intern(&r.user), items.intern(&r.item), r.timestamp))
            .collect();
        Dataset { events, users, items }
    }

    /// Canonical CSV text of the events.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_id,item_id,timestamp\n");
        for e in &self.events {
            out.push_str(&format!("{},{},{}\n", self.users.label(e.user), self.items.label(e.item), e.timestamp));
        }
        out
    }
}

struct Record {
    user: String,
    item: String,
    timestamp: f64,
}

fn parse_timestamp(field: &str, line: usize) -> Result<f64> {
    let t: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad timestamp '{field}'"),
    })?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Parse {
            line,
            message: format!("timestamp {t} must be finite and >= 0"),
        });
    }
    Ok(t)
}

/// Comma-separated rows whose first three fields are user, item, timestamp.
/// A first line whose timestamp field is not numeric is taken as a header.
fn parse_delimited(text: &str, min_fields: usize, strict_width: bool) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    let mut last = f64::NEG_INFINITY;
    let mut first = true;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        let is_first = std::mem::replace(&mut first, false);
        if fields.len() < min_fields || (strict_width && fields.len() != min_fields) {
            return Err(Error::Parse {
                line,
                message: format!("expected {min_fields} fields, got {}", fields.len()),
            });
        }
        if is_first && fields[2].parse::<f64>().is_err() {
            continue;
        }
        let timestamp = parse_timestamp(fields[2], line)?;
        if timestamp < last {
            return Err(Error::Parse {
                line,
                message: format!("timestamp {timestamp} precedes {last}; input must be sorted by time"),
            });
        }
        last = timestamp;
        records.push(Record {
            user: fields[0].to_string(),
            item: fields[1].to_string(),
            timestamp,
        });
    }
    Ok(records)
}

fn parse_movielens(text: &str) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = if row.contains("::") {
            row.split("::").collect()
        } else if row.contains('\t') {
            row.split('\t').collect()
        } else {
            row.split(',').collect()
        };
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected user, item, rating, timestamp; got {} fields", fields.len()),
            });
        }
        if line == 1 && fields[3].trim().parse::<f64>().is_err() {
            continue;
        }
        records.push(Record {
            user: fields[0].trim().to_string(),
            item: fields[1].trim().to_string(),
            timestamp: parse_timestamp(fields[3], line)?,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_with_and_without_header() {
        let with = Dataset::parse("user_id,item_id,timestamp\nalice,x,1\nbob,y,2\nalice,y,2\n", Format::Canonical, LoadOptions::default()).unwrap();
        let without = Dataset::parse("alice,x,1\nbob,y,2\nalice,y,2\n", Format::Canonical, LoadOptions::default()).unwrap();
        assert_eq!(with, without);
        assert_eq!(with.events[2], InteractionEvent::new(0, 1, 2.0));
        assert_eq!(with.users.ids(), &["alice", "bob"]);
        assert_eq!(with.t_max(), 2.0);
    }

    #[test]
    fn numeric_ids_are_strings() {
        let d = Dataset::parse("10,7,0\n3,7,5\n", Format::Canonical, LoadOptions::default()).unwrap();
        assert_eq!(d.users.get("3"), Some(1));
        assert_eq!(d.items.len(), 1);
    }

    #[test]
    fn unsorted_canonical_reports_line() {
        match Dataset::parse("u,i,t\na,x,5\nb,y,3\n", Format::Canonical, LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match Dataset::parse("a,x\n", Format::Canonical, LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn movielens_variants_sort_by_time() {
        let tab = "1\t5\t3\t200\n2\t6\t4\t100\n1\t6\t5\t200\n";
        let colons = "1::5::3::200\n2::6::4::100\n1::6::5::200\n";
        let a = Dataset::parse(tab, Format::Movielens, LoadOptions::default()).unwrap();
        let b = Dataset::parse(colons, Format::Movielens, LoadOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.users.ids(), &["2", "1"]);
        assert_eq!(a.events[0], InteractionEvent::new(0, 0, 100.0));
        // Stable: equal timestamps keep file order.
        assert_eq!(a.events[1].item, a.items.get("5").unwrap());
    }

    #[test]
    fn min_item_count_filters_before_mapping() {
        let text = "1\ta\t1\t1\n2\tb\t1\t2\n3\ta\t1\t3\n";
        let d = Dataset::parse(text, Format::Movielens, LoadOptions { min_item_count: 2, ..LoadOptions::default() }).unwrap();
        assert_eq!(d.events.len(), 2);
        assert_eq!(d.items.ids(), &["a"]);
        assert_eq!(d.users.ids(), &["1", "3"]);
    }

    #[test]
    fn jodie_drops_labels_and_features() {
        let text = "user_id,item_id,timestamp,state_label,comma_separated_list_of_features\n0,0,0.0,0,0.1,0.2\n1,1,36.0,0,0.3,0.4\n";
        let d = Dataset::parse(text, Format::Jodie, LoadOptions::default()).unwrap();
        assert_eq!(d.events, vec![InteractionEvent::new(0, 0, 0.0), InteractionEvent::new(1, 1, 36.0)]);
    }

    #[test]
    fn csv_round_trip_and_prefix() {
        let d = Dataset::parse("a,x,1\nb,y,2\nc,x,3\n", Format::Canonical, LoadOptions::default()).unwrap();
        assert_eq!(Dataset::parse(&d.to_csv(), Format::Canonical, LoadOptions::default()).unwrap(), d);
        let p = Dataset::parse("a,x,1\nb,y,2\nc,x,3\n", Format::Canonical, LoadOptions { max_events: 2, ..LoadOptions::default() }).unwrap();
        assert_eq!(p.events.len(), 2);
        let q = Dataset::parse("a,x,1\nb,y,2\nc,x,3\n", Format::Canonical, LoadOptions { prefix_frac: Some(0.7), ..LoadOptions::default() }).unwrap();
        assert_eq!(q.events.len(), 2);
        assert_eq!(q.users.len(), 2);
    }

    #[test]
    fn id_map_rebuilds_index() {
        let map = IdMap::from_ids(vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(map.get("y"), Some(1));
        assert!(IdMap::from_ids(vec!["x".into(), "x".into()]).is_err());
    }
}
