use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scoring::format_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub submission_id: String,
    pub team: String,
    pub value: f64,
    pub value_text: String,
    /// Normalized return per env in the best trial.
    pub per_env: BTreeMap<String, f64>,
}

/// Columns: rank, submission_id, team, value, then one column per env.
pub fn leaderboard_csv(rows: &[LeaderboardRow]) -> String {
    let envs: Vec<&String> = rows.first().map(|r| r.per_env.keys().collect()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rank", "submission_id", "team", "value"];
    header.extend(envs.iter().map(|e| e.as_str()));
    w.write_record(&header).expect("in-memory write");
    for row in rows {
        let mut record =
            vec![row.rank.to_string(), row.submission_id.clone(), row.team.clone(), row.value_text.clone()];
        record.extend(envs.iter().map(|e| row.per_env.get(*e).map(|v| format_score(*v)).unwrap_or_default()));
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub fn leaderboard_json(rows: &[LeaderboardRow]) -> String {
    serde_json::to_string_pretty(rows).expect("rows serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_team_names() {
        let row = LeaderboardRow {
            rank: 1,
            submission_id: "sub-0001".into(),
            team: "Tang, X.".into(),
            value: 0.5,
            value_text: format_score(0.5),
            per_env: [("gridmaze".to_string(), 0.25)].into_iter().collect(),
        };
        let text = leaderboard_csv(std::slice::from_ref(&row));
        assert_eq!(text, "rank,submission_id,team,value,gridmaze\n1,sub-0001,\"Tang, X.\",0.500000,0.250000\n");
        let back: Vec<LeaderboardRow> = serde_json::from_str(&leaderboard_json(std::slice::from_ref(&row))).unwrap();
        assert_eq!(back, vec![row]);
    }
}
