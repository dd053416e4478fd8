//! Fleiss' kappa over a small ratings matrix.

use auralabel::consensus::fleiss_kappa;

fn main() {
    // five clips, four raters, categories speech / music / noise
    let counts = vec![
        vec![4, 0, 0],
        vec![3, 1, 0],
        vec![0, 4, 0],
        vec![1, 1, 2],
        vec![0, 0, 4],
    ];
    let report = fleiss_kappa(&counts, 4)
        .expect("well-formed matrix")
        .with_categories(vec!["speech".into(), "music".into(), "noise".into()]);
    println!("kappa = {:.4}", report.kappa);
    println!("P_bar = {:.4}, Pe_bar = {:.4}", report.p_bar, report.pe_bar);
    print!("{}", report.counts_csv());

    // every rater picks the same category everywhere
    let degenerate = fleiss_kappa(&[vec![3, 0], vec![3, 0]], 3).unwrap();
    println!(
        "degenerate matrix: kappa = {}, flagged = {}",
        degenerate.kappa, degenerate.degenerate
    );

    match fleiss_kappa(&[vec![1, 0]], 1) {
        Ok(_) => println!("accepted?"),
        Err(e) => println!("one rater: {e}"),
    }
}
