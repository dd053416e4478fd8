use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BadMatrix {
    #[error("need at least one item")]
    NoItems,
    #[error("need at least two raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("row {row} has {got} columns, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("row {row} sums to {sum}, expected {raters}")]
    RowSum { row: usize, sum: u64, raters: usize },
}

/// Fleiss' Kappa together with its intermediate quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    #[serde(rename = "N")]
    pub items: usize,
    #[serde(rename = "n")]
    pub raters: usize,
    #[serde(rename = "k")]
    pub category_count: usize,
    pub categories: Vec<String>,
    pub counts: Vec<Vec<u32>>,
    pub p_j: Vec<f64>,
    #[serde(rename = "P_i")]
    pub per_item: Vec<f64>,
    #[serde(rename = "P_bar")]
    pub p_bar: f64,
    #[serde(rename = "Pe_bar")]
    pub pe_bar: f64,
    pub kappa: f64,
    pub degenerate: bool,
}

impl AgreementReport {
    pub fn with_categories(mut self, categories: Vec<String>) -> Self {
        debug_assert_eq!(categories.len(), self.category_count);
        self.categories = categories;
        self
    }

    /// Counts matrix as CSV: `item,<category>...`.
    pub fn counts_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["item".to_string()];
        header.extend(self.categories.iter().cloned());
        w.write_record(&header).expect("in-memory csv");
        for (i, row) in self.counts.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(u32::to_string));
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
    }
}

/// Fleiss' Kappa over an N x k matrix where `counts[i][j]` raters put item
/// `i` in category `j` and every row sums to `raters`.
///
/// Sums are taken in integers before the final divisions, so the result is
/// bit-identical under any permutation of the columns. When only a single
/// category is ever used (expected agreement 1) the report is marked
/// degenerate and kappa is 1.
pub fn fleiss_kappa(counts: &[Vec<u32>], raters: usize) -> Result<AgreementReport, BadMatrix> {
    if counts.is_empty() {
        return Err(BadMatrix::NoItems);
    }
    if raters < 2 {
        return Err(BadMatrix::TooFewRaters(raters));
    }
    let k = counts[0].len();
    let mut column_totals = vec![0u64; k];
    let mut square_sum_all = 0u128;
    let mut per_item = Vec::with_capacity(counts.len());
    let n = raters as u64;
    for (row_idx, row) in counts.iter().enumerate() {
        if row.len() != k {
            return Err(BadMatrix::Ragged {
                row: row_idx,
                got: row.len(),
                expected: k,
            });
        }
        let sum: u64 = row.iter().map(|&c| c as u64).sum();
        if sum != n {
            return Err(BadMatrix::RowSum {
                row: row_idx,
                sum,
                raters,
            });
        }
        let squares: u64 = row.iter().map(|&c| (c as u64) * (c as u64)).sum();
        square_sum_all += squares as u128;
        per_item.push((squares - n) as f64 / (n * (n - 1)) as f64);
        for (total, &c) in column_totals.iter_mut().zip(row) {
            *total += c as u64;
        }
    }
    let items = counts.len() as u128;
    let n = n as u128;
    let ratings = items * n;
    let p_bar = (square_sum_all - items * n) as f64 / (items * n * (n - 1)) as f64;
    let column_squares: u128 = column_totals
        .iter()
        .map(|&t| (t as u128) * (t as u128))
        .sum();
    let degenerate = column_squares == ratings * ratings;
    let pe_bar = column_squares as f64 / (ratings * ratings) as f64;
    let kappa = if degenerate {
        1.0
    } else {
        (p_bar - pe_bar) / (1.0 - pe_bar)
    };
    Ok(AgreementReport {
        items: counts.len(),
        raters,
        category_count: k,
        categories: (0..k).map(|j| format!("c{j}")).collect(),
        counts: counts.to_vec(),
        p_j: column_totals
            .iter()
            .map(|&t| t as f64 / ratings as f64)
            .collect(),
        per_item,
        p_bar,
        pe_bar,
        kappa,
        degenerate,
    })
}
