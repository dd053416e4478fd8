//! Bradley-Terry ranking from pairwise judgments.

use auralabel::domain::{JudgmentId, PreferenceJudgment, ProjectId, Side, UserId};
use auralabel::preference::{
    fit_skills, predict_preference, rank_judgments, ranking_csv, ComparisonRecord,
};

fn judgment(n: usize, a: &str, b: &str, winner: Side) -> PreferenceJudgment {
    PreferenceJudgment {
        id: JudgmentId::from(format!("judgment-{n}").as_str()),
        project_id: ProjectId::from("project-1"),
        item_a: a.into(),
        item_b: b.into(),
        rater_id: UserId::from("rater"),
        winner,
        timestamp: 0,
    }
}

fn main() {
    let items: Vec<String> = ["take-1", "take-2", "take-3", "take-4"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let pairs = [
        ("take-1", "take-2", Side::A),
        ("take-1", "take-3", Side::A),
        ("take-2", "take-3", Side::A),
        ("take-3", "take-2", Side::A),
        ("take-4", "take-1", Side::B),
        ("take-2", "take-4", Side::A),
        ("take-1", "take-2", Side::B),
    ];
    let judgments: Vec<PreferenceJudgment> = pairs
        .iter()
        .enumerate()
        .map(|(n, (a, b, w))| judgment(n, a, b, *w))
        .collect();
    let ranked = rank_judgments(&items, &judgments, 1.0).expect("ranking");
    print!("{}", ranking_csv(&ranked));

    // three wins to one for a over b
    let record = ComparisonRecord::from_wins(vec![vec![0, 3], vec![1, 0]]).unwrap();
    let posterior = fit_skills(&record, 1.0).unwrap();
    println!(
        "3-1 record: theta = {:?}, P(a beats b) = {:.3}",
        posterior.theta,
        predict_preference(&posterior, 0, 1)
    );
}
