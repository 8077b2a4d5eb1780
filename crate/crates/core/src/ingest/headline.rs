use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Article, ConflictEvent};

/// Lowercase, trim, collapse whitespace runs, strip trailing punctuation.
pub fn normalize_headline(s: &str) -> String {
    let collapsed = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string()
}

/// Gold labels obtained by matching article headlines to event headlines.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HeadlineMatch {
    pub labels: BTreeMap<String, BTreeSet<String>>,
    /// Articles whose headline matched events of more than one dyad.
    pub ambiguous: BTreeSet<String>,
}

impl HeadlineMatch {
    pub fn dyads_of(&self, article_id: &str) -> Option<&BTreeSet<String>> {
        self.labels.get(article_id)
    }

    pub fn is_gold(&self, article_id: &str) -> bool {
        self.labels.contains_key(article_id)
    }
}

pub fn match_headlines(articles: &[Article], events: &[ConflictEvent]) -> HeadlineMatch {
    let mut by_headline: BTreeMap<String, BTreeSet<&str>> = BTreeMap::new();
    for e in events {
        let key = normalize_headline(&e.headline);
        if key.is_empty() {
            continue;
        }
        by_headline.entry(key).or_default().insert(e.dyad_id.as_str());
    }

    let mut out = HeadlineMatch::default();
    for a in articles {
        let key = normalize_headline(&a.headline);
        let Some(dyads) = by_headline.get(&key) else {
            continue;
        };
        let entry = out.labels.entry(a.article_id.clone()).or_default();
        entry.extend(dyads.iter().map(|d| d.to_string()));
        if entry.len() > 1 {
            out.ambiguous.insert(a.article_id.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn art(id: &str, headline: &str) -> Article {
        Article {
            article_id: id.into(),
            date: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
            headline: headline.into(),
            body: String::new(),
            embedding: None,
        }
    }

    fn ev(id: &str, dyad: &str, headline: &str) -> ConflictEvent {
        ConflictEvent {
            event_id: id.into(),
            dyad_id: dyad.into(),
            country_id: "C".into(),
            date: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
            fatalities: 1,
            headline: headline.into(),
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_headline("Rebels  Kill 5 "), "rebels kill 5");
        assert_eq!(normalize_headline("\tAttack in\n north!!"), "attack in north");
        assert_eq!(normalize_headline("...") , "");
    }

    #[test]
    fn whitespace_and_case_match() {
        let m = match_headlines(&[art("a1", "Rebels  Kill 5 ")], &[ev("e1", "A", "rebels kill 5")]);
        assert_eq!(m.labels["a1"], BTreeSet::from(["A".to_string()]));
        assert!(m.ambiguous.is_empty());
    }

    #[test]
    fn unmatched_article_is_unlabeled() {
        let m = match_headlines(&[art("a1", "weather report")], &[ev("e1", "A", "rebels kill 5")]);
        assert!(m.labels.is_empty());
    }

    #[test]
    fn shared_headline_is_ambiguous() {
        // 5-row fixture: brute-force join computed by enumerating all pairs.
        let events = vec![
            ev("e1", "A", "Clashes in the north"),
            ev("e2", "B", "clashes in the north."),
            ev("e3", "A", "Army shells town"),
            ev("e4", "C", "Ambush on convoy"),
            ev("e5", "C", "ambush  on convoy"),
        ];
        let articles = vec![
            art("a1", "CLASHES IN THE NORTH"),
            art("a2", "Army shells town"),
            art("a3", "Ambush on convoy"),
            art("a4", "Unrelated"),
        ];
        let mut expected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for a in &articles {
            for e in &events {
                if normalize_headline(&a.headline) == normalize_headline(&e.headline) {
                    expected
                        .entry(a.article_id.clone())
                        .or_default()
                        .insert(e.dyad_id.clone());
                }
            }
        }
        let m = match_headlines(&articles, &events);
        assert_eq!(m.labels, expected);
        assert_eq!(
            m.labels["a1"],
            BTreeSet::from(["A".to_string(), "B".to_string()])
        );
        assert_eq!(m.ambiguous, BTreeSet::from(["a1".to_string()]));
    }

    #[test]
    fn idempotent_and_order_independent() {
        let events = vec![ev("e1", "A", "x y"), ev("e2", "B", "z")];
        let mut articles = vec![art("a1", "X  Y"), art("a2", "z!"), art("a3", "w")];
        let first = match_headlines(&articles, &events);
        articles.reverse();
        assert_eq!(match_headlines(&articles, &events), first);
        assert_eq!(match_headlines(&articles, &events), first);
    }
}
