//! Prints the role by endpoint-class permission table.

use auralabel::api::{EndpointClass, PermissionMatrix};
use auralabel::domain::Role;

fn main() {
    let matrix = PermissionMatrix::default();
    let roles = [Role::Manager, Role::Annotator, Role::Reviewer];
    println!(
        "{:<20} {:>9} {:>9} {:>9}",
        "class", "manager", "annotator", "reviewer"
    );
    for class in EndpointClass::ALL {
        let name = serde_json::to_value(class).unwrap();
        let cells: Vec<&str> = roles
            .iter()
            .map(|r| {
                if matrix.allows(*r, class) {
                    "allow"
                } else {
                    "-"
                }
            })
            .collect();
        println!(
            "{:<20} {:>9} {:>9} {:>9}",
            name.as_str().unwrap(),
            cells[0],
            cells[1],
            cells[2]
        );
    }
}
