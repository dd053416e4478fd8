//! Clustering three annotators' regions and taking the majority.

use auralabel::consensus::{
    build_agreement_input, cluster_regions, consensus_regions, fleiss_kappa,
};
use auralabel::domain::{AnnotationRegion, Provenance, RegionId, RegionStatus, TaskId, UserId};

fn region(who: &str, start: f64, end: f64, label: &str) -> AnnotationRegion {
    AnnotationRegion {
        id: RegionId(format!("{who}-{start}")),
        task_id: TaskId::from("task-1"),
        annotator_id: who.into(),
        start_s: start,
        end_s: end,
        labels: vec![label.into()],
        caption: None,
        provenance: Provenance::Human,
        status: RegionStatus::Submitted,
        review: None,
        confidence: None,
    }
}

fn main() {
    let ontology: Vec<String> = vec!["speech".into(), "music".into(), "noise".into()];
    let regions = vec![
        region("ana", 0.0, 2.0, "speech"),
        region("ben", 0.2, 2.2, "speech"),
        region("cy", 0.1, 1.9, "music"),
        region("ana", 5.0, 6.0, "noise"),
        region("ben", 5.1, 6.1, "noise"),
        region("cy", 8.0, 9.0, "speech"),
    ];
    let clusters = cluster_regions(&regions, 0.5);
    for c in &clusters {
        let who: Vec<&str> = c.members.iter().map(|m| m.annotator_id.as_str()).collect();
        println!(
            "cluster {} at {:?}: {}",
            c.cluster_id,
            c.representative,
            who.join(", ")
        );
    }

    let out = consensus_regions(&clusters, 3, &ontology);
    for r in &out.regions {
        println!("consensus {:.2}..{:.2} {:?}", r.start_s, r.end_s, r.labels);
    }
    for n in &out.notes {
        println!(
            "note on cluster {}: {} {:?}",
            n.cluster_id, n.message, n.entries
        );
    }

    let raters: Vec<UserId> = ["ana", "ben", "cy"]
        .iter()
        .map(|s| UserId::from(*s))
        .collect();
    let input = build_agreement_input(&clusters, &raters, &ontology);
    let report = fleiss_kappa(&input.counts, input.raters).unwrap();
    println!(
        "kappa over {} clusters = {:.4}",
        input.counts.len(),
        report.kappa
    );
}
