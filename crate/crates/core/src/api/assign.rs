use std::collections::BTreeMap;

use crate::domain::{AssignmentStrategy, Task, TaskId, TaskStatus, UserId};

/// Plans assignees for `tasks` (in ingestion order).
///
/// Shared: every annotator on every task. Disjoint: round-robin over the
/// annotators sorted by id, skipping tasks that someone has already started.
/// Existing progress is kept; only Unstarted assignments are replaced.
/// Returns the new assignee map for every task.
pub fn plan_assignment(
    tasks: &[Task],
    annotators: &[UserId],
    strategy: AssignmentStrategy,
) -> BTreeMap<TaskId, BTreeMap<UserId, TaskStatus>> {
    let mut roster: Vec<UserId> = annotators.to_vec();
    roster.sort();
    roster.dedup();
    let mut out = BTreeMap::new();
    let mut next = 0usize;
    for task in tasks {
        let mut assignees: BTreeMap<UserId, TaskStatus> = task
            .assignees
            .iter()
            .filter(|(_, s)| **s != TaskStatus::Unstarted)
            .map(|(u, s)| (u.clone(), *s))
            .collect();
        if !roster.is_empty() {
            match strategy {
                AssignmentStrategy::Shared => {
                    for u in &roster {
                        assignees.entry(u.clone()).or_insert(TaskStatus::Unstarted);
                    }
                }
                AssignmentStrategy::Disjoint => {
                    if assignees.is_empty() {
                        assignees
                            .insert(roster[next % roster.len()].clone(), TaskStatus::Unstarted);
                        next += 1;
                    }
                }
            }
        }
        out.insert(task.id.clone(), assignees);
    }
    out
}

/// Inverts a plan into annotator -> tasks, tasks in id order.
pub fn tasks_by_annotator(
    plan: &BTreeMap<TaskId, BTreeMap<UserId, TaskStatus>>,
) -> BTreeMap<UserId, Vec<TaskId>> {
    let mut out: BTreeMap<UserId, Vec<TaskId>> = BTreeMap::new();
    for (task, assignees) in plan {
        for user in assignees.keys() {
            out.entry(user.clone()).or_default().push(task.clone());
        }
    }
    out
}
