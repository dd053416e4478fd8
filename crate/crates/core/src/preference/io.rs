use serde::Deserialize;

use super::RankedItem;
use crate::domain::Side;

/// `item_id,theta,stddev,rank`, one row per item in rank order.
pub fn ranking_csv(ranked: &[RankedItem]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["item_id", "theta", "stddev", "rank"])
        .expect("in-memory csv");
    for r in ranked {
        w.write_record([
            r.item_id.clone(),
            r.theta.to_string(),
            r.stddev.to_string(),
            r.rank.to_string(),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct JudgmentRow {
    pub item_a: String,
    pub item_b: String,
    pub winner: Side,
    pub rater_id: String,
}

#[derive(Deserialize)]
struct RawRow {
    item_a: String,
    item_b: String,
    winner: String,
    rater_id: String,
}

/// Reads `item_a,item_b,winner,rater_id`. `winner` is `a`, `b`, or one of
/// the two item ids.
pub fn parse_judgments_csv(text: &str) -> Result<Vec<JudgmentRow>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<RawRow>().enumerate() {
        let row = row.map_err(|e| format!("row {}: {e}", line + 1))?;
        let winner = match row.winner.trim() {
            w if w.eq_ignore_ascii_case("a") => Side::A,
            w if w.eq_ignore_ascii_case("b") => Side::B,
            w if w == row.item_a => Side::A,
            w if w == row.item_b => Side::B,
            w => return Err(format!("row {}: winner {w:?} is neither item", line + 1)),
        };
        out.push(JudgmentRow {
            item_a: row.item_a,
            item_b: row.item_b,
            winner,
            rater_id: row.rater_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_table() {
        let rows = vec![
            RankedItem {
                item_id: "a".into(),
                theta: 0.5,
                stddev: 0.25,
                rank: 1,
            },
            RankedItem {
                item_id: "b,c".into(),
                theta: -0.5,
                stddev: 0.25,
                rank: 2,
            },
        ];
        assert_eq!(
            ranking_csv(&rows),
            "item_id,theta,stddev,rank\na,0.5,0.25,1\n\"b,c\",-0.5,0.25,2\n"
        );
    }

    #[test]
    fn judgments_table() {
        let rows =
            parse_judgments_csv("item_a,item_b,winner,rater_id\nx,y,A,u1\nx,y,y,u2\n").unwrap();
        assert_eq!(rows[0].winner, Side::A);
        assert_eq!(rows[1].winner, Side::B);
        assert!(parse_judgments_csv("item_a,item_b,winner,rater_id\nx,y,q,u1\n").is_err());
    }
}
