//! Disjoint and shared assignment plans.

use std::collections::BTreeMap;

use auralabel::api::{plan_assignment, tasks_by_annotator};
use auralabel::domain::{AssetId, AssignmentStrategy, ProjectId, Task, TaskId, TaskStatus, UserId};

fn main() {
    let tasks: Vec<Task> = (1..=7)
        .map(|i| Task {
            id: TaskId::from(format!("task-{i:08}").as_str()),
            project_id: ProjectId::from("project-1"),
            audio_asset_id: AssetId::from(format!("asset-{i:08}").as_str()),
            assignees: BTreeMap::new(),
        })
        .collect();
    let annotators: Vec<UserId> = ["user-a", "user-b", "user-c"]
        .iter()
        .map(|s| UserId::from(*s))
        .collect();

    let disjoint = plan_assignment(&tasks, &annotators, AssignmentStrategy::Disjoint);
    for (user, queue) in tasks_by_annotator(&disjoint) {
        let ids: Vec<&str> = queue.iter().map(|t| t.as_str()).collect();
        println!("disjoint {user}: {}", ids.join(" "));
    }

    // work already started survives a re-plan
    let mut started = tasks.clone();
    started[0]
        .assignees
        .insert(UserId::from("user-c"), TaskStatus::InProgress);
    let replanned = plan_assignment(&started, &annotators, AssignmentStrategy::Disjoint);
    println!("task-1 after re-plan: {:?}", replanned[&started[0].id]);

    let shared = plan_assignment(&tasks, &annotators, AssignmentStrategy::Shared);
    println!(
        "shared: every task has {} assignees",
        shared.values().next().map_or(0, |a| a.len())
    );
}
