//! `::`-delimited MovieLens files: `UserID::MovieID::Rating::Timestamp` and
//! `MovieID::Title::Genres` (genres separated by `|`).

use std::collections::HashMap;
use std::path::Path;

use super::{assemble, read_text, Dataset, IngestReport, RawEvent};
use crate::domain::{Item, ItemId};
use crate::error::{Error, Result};

pub fn parse_movielens(ratings: &Path, movies: &Path) -> Result<(Dataset, IngestReport)> {
    let r = read_text(ratings)?;
    let m = read_text(movies)?;
    parse_movielens_str(&r, &m, &ratings.display().to_string(), &movies.display().to_string())
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Malformed {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

pub fn parse_movielens_str(
    ratings: &str,
    movies: &str,
    ratings_name: &str,
    movies_name: &str,
) -> Result<(Dataset, IngestReport)> {
    let mut items = HashMap::new();
    for (n, line) in movies.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, "::").collect();
        if parts.len() != 3 {
            return Err(malformed(movies_name, n + 1, "expected MovieID::Title::Genres"));
        }
        let id = ItemId::new(parts[0].trim());
        let genres = parts[2]
            .trim()
            .split('|')
            .filter(|g| !g.trim().is_empty() && g.trim() != "(no genres listed)")
            .map(|g| g.trim().to_string());
        let item = Item::new(id.clone(), parts[1], genres).map_err(|e| malformed(movies_name, n + 1, e.to_string()))?;
        items.insert(id, item);
    }

    let mut report = IngestReport::default();
    let mut events = Vec::new();
    for (n, line) in ratings.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split("::").collect();
        if parts.len() != 4 {
            return Err(malformed(ratings_name, n + 1, "expected UserID::MovieID::Rating::Timestamp"));
        }
        let time: i64 = parts[3]
            .trim()
            .parse()
            .map_err(|_| malformed(ratings_name, n + 1, format!("bad timestamp {:?}", parts[3])))?;
        report.records += 1;
        let item = ItemId::new(parts[1].trim());
        if !items.contains_key(&item) {
            report.unknown_items += 1;
            continue;
        }
        events.push(RawEvent {
            user: parts[0].trim().to_string(),
            item,
            time,
        });
    }
    if report.unknown_items > 0 {
        log::warn!("{} ratings reference unknown movies and were skipped", report.unknown_items);
    }
    let ds = assemble(events, &items, &mut report)?;
    Ok((ds, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MOVIES: &str = "1::Toy Story (1995)::Animation|Children's|Comedy\n2::Heat (1995)::Action|Crime\n";

    #[test]
    fn empty_ratings_give_empty_dataset() {
        let (ds, _) = parse_movielens_str("", MOVIES, "r", "m").unwrap();
        assert!(ds.sequences.is_empty());
        assert!(ds.catalog.is_empty());
    }

    #[test]
    fn duplicate_keeps_earliest() {
        let ratings = "1::2::5::300\n1::1::4::100\n1::2::3::200\n";
        let (ds, report) = parse_movielens_str(ratings, MOVIES, "r", "m").unwrap();
        let s = &ds.sequences[0];
        assert_eq!(s.events, vec![ItemId::from("1"), ItemId::from("2")]);
        assert_eq!(report.duplicates, 1);
        assert_eq!(ds.catalog.get(&ItemId::from("2")).unwrap().attributes, vec!["Action", "Crime"]);
    }

    #[test]
    fn equal_timestamps_keep_file_order() {
        let ratings = "7::2::5::100\n7::1::4::100\n";
        let (ds, _) = parse_movielens_str(ratings, MOVIES, "r", "m").unwrap();
        assert_eq!(ds.sequences[0].events, vec![ItemId::from("2"), ItemId::from("1")]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_movielens_str("1::1::5::100\n1::2::5\n", MOVIES, "r", "m").unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_movie_skipped() {
        let (ds, report) = parse_movielens_str("1::1::5::100\n1::99::5::101\n", MOVIES, "r", "m").unwrap();
        assert_eq!(report.unknown_items, 1);
        assert_eq!(ds.sequences[0].events.len(), 1);
    }
}
