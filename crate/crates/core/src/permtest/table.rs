//! Tabulated adjusted levels.
//!
//! Rows cover one-sided levels .10, .05, .025, .01 and .005 and designs with
//! 4 <= min(q1, q0) and max(q1, q0) <= 12. Values are stored in units of
//! 1e-4 exactly as printed; blank cells (no nontrivial test controls size)
//! are simply absent and starred cells, where only the second-largest order
//! statistic works, are marked [`STAR`].

use serde::{Deserialize, Serialize};

use super::{size_bound, AlphaEntry};
use crate::error::{Error, Result};
use crate::permkit::Design;

/// Marker for cells whose critical value is the second-largest order statistic.
pub const STAR: u16 = u16::MAX;

/// Tabulated one-sided levels.
pub const TABULATED_ALPHAS: [f64; 5] = [0.10, 0.05, 0.025, 0.01, 0.005];

struct Row {
    alpha_index: usize,
    q1: usize,
    first_q0: usize,
    cells: &'static [u16],
}

const fn row(alpha_index: usize, q1: usize, first_q0: usize, cells: &'static [u16]) -> Row {
    Row { alpha_index, q1, first_q0, cells }
}

const S: u16 = STAR;

#[rustfmt::skip]
static ROWS: &[Row] = &[
    // alpha = .10
    row(0, 4, 4, &[428]),
    row(0, 5, 4, &[317, 595]),
    row(0, 6, 4, &[238, 432, 660]),
    row(0, 7, 4, &[181, 340, 500, 760]),
    row(0, 8, 4, &[161, 303, 493, 600, 813]),
    row(0, 9, 4, &[153, 246, 400, 580, 740, 900]),
    row(0, 10, 4, &[129, 220, 366, 500, 700, 826, 926]),
    row(0, 11, 4, &[153, 193, 313, 420, 606, 746, 853, 953]),
    row(0, 12, 4, &[106, 193, 260, 420, 580, 673, 800, 926, 953]),
    // alpha = .05
    row(1, 5, 5, &[158]),
    row(1, 6, 5, &[108, 227]),
    row(1, 7, 5, &[88, 200, 253]),
    row(1, 8, 5, &[62, 120, 233, 306]),
    row(1, 9, 5, &[113, 120, 213, 300, 393]),
    row(1, 10, 5, &[100, 113, 166, 286, 340, 420]),
    row(1, 11, 5, &[100, 80, 153, 240, 313, 393, 440]),
    row(1, 12, 5, &[73, 80, 153, 213, 266, 366, 440, 491]),
    // alpha = .025
    row(2, 6, 6, &[43]),
    row(2, 7, 6, &[40, 86]),
    row(2, 8, 6, &[26, 86, 153]),
    row(2, 9, 6, &[26, 66, 100, 146]),
    row(2, 10, 6, &[26, 46, 93, 146, 166]),
    row(2, 11, 6, &[20, 33, 80, 106, 166, 180]),
    row(2, 12, 6, &[20, 33, 73, 93, 120, 173, 206]),
    // alpha = .01
    row(3, 7, 7, &[26]),
    row(3, 8, 7, &[13, 26]),
    row(3, 9, 7, &[13, 20, 33]),
    row(3, 10, 7, &[13, 20, 33, 40]),
    row(3, 11, 7, &[13, 20, 33, 40, 66]),
    row(3, 12, 7, &[13, 13, 26, 33, 53, 66]),
    // alpha = .005
    row(4, 8, 8, &[S]),
    row(4, 9, 8, &[S, 13]),
    row(4, 10, 8, &[S, 13, 13]),
    row(4, 11, 8, &[S, 6, 13, 20]),
    row(4, 12, 8, &[S, S, 13, 20, 33]),
];

/// A raw table cell, before conversion to an [`AlphaEntry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCell {
    /// Index into [`TABULATED_ALPHAS`].
    pub alpha_index: usize,
    /// Treated clusters (the larger group).
    pub q1: usize,
    /// Control clusters (the smaller group).
    pub q0: usize,
    /// Printed value in units of 1e-4, or [`STAR`].
    pub value: u16,
}

/// Every nonblank cell of the table.
pub fn cells() -> impl Iterator<Item = TableCell> {
    ROWS.iter().flat_map(|r| {
        r.cells.iter().enumerate().map(move |(i, &value)| TableCell {
            alpha_index: r.alpha_index,
            q1: r.q1,
            q0: r.first_q0 + i,
            value,
        })
    })
}

/// Order index `ceil((1 - v / 10^4) * n)` in exact integer arithmetic.
pub fn order_index_from_printed(value: u16, n: u64) -> u64 {
    let num = (10_000 - value as u128) * n as u128;
    num.div_ceil(10_000) as u64
}

impl TableCell {
    /// Converts the cell to an entry for the given design orientation.
    pub fn to_entry(&self, design: &Design) -> AlphaEntry {
        let n = design.n_assignments();
        let alpha = TABULATED_ALPHAS[self.alpha_index];
        if self.value == STAR {
            AlphaEntry {
                q1: design.q1(),
                q0: design.q0(),
                alpha,
                bar_alpha: 1.0 / n as f64,
                order_index: n - 1,
                n_assignments: n,
                source: super::EntrySource::Tabulated,
                starred: true,
            }
        } else {
            AlphaEntry {
                q1: design.q1(),
                q0: design.q0(),
                alpha,
                bar_alpha: self.value as f64 / 10_000.0,
                order_index: order_index_from_printed(self.value, n),
                n_assignments: n,
                source: super::EntrySource::Tabulated,
                starred: false,
            }
        }
    }
}

fn alpha_index(alpha: f64) -> Option<usize> {
    TABULATED_ALPHAS.iter().position(|a| (a - alpha).abs() < 1e-12)
}

/// Looks up the tabulated adjusted level for `(q1, q0, alpha)`.
///
/// The table lists `q1 >= q0`; transposed designs use the mirrored cell, since
/// exchanging the groups and negating the data maps the worst-case problem
/// onto itself with the same number of assignments.
pub fn lookup_bar_alpha(q1: usize, q0: usize, alpha: f64) -> Result<AlphaEntry> {
    let design = Design::new(q1, q0)?;
    let (hi, lo) = (q1.max(q0), q1.min(q0));
    let bound = size_bound(q1, q0);
    let Some(ai) = alpha_index(alpha) else {
        return Err(Error::NotTabulated { q1, q0, alpha, size_bound: bound });
    };
    if !(4..=12).contains(&lo) || hi > 12 {
        return Err(Error::NotTabulated { q1, q0, alpha, size_bound: bound });
    }
    match cells().find(|c| c.alpha_index == ai && c.q1 == hi && c.q0 == lo) {
        Some(cell) => Ok(cell.to_entry(&design)),
        None => Err(Error::Infeasible { q1, q0, alpha, smallest_feasible: bound }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_count() {
        // 45 + 36 + 28 + 21 + 15 cells per block, minus nothing: lower triangles
        // starting at the first feasible column.
        assert_eq!(cells().count(), 45 + 36 + 28 + 21 + 15);
    }

    #[test]
    fn printed_examples() {
        let e = lookup_bar_alpha(4, 4, 0.10).unwrap();
        assert_eq!((e.bar_alpha, e.order_index, e.n_assignments), (0.0428, 68, 70));
        let e = lookup_bar_alpha(5, 5, 0.05).unwrap();
        assert_eq!((e.order_index, e.n_assignments), (249, 252));
        let e = lookup_bar_alpha(8, 8, 0.005).unwrap();
        assert!(e.starred);
        assert_eq!(e.order_index, 12_869);
    }

    #[test]
    fn transposed_lookup() {
        let a = lookup_bar_alpha(12, 5, 0.05).unwrap();
        let b = lookup_bar_alpha(5, 12, 0.05).unwrap();
        assert_eq!(a.order_index, b.order_index);
        assert_eq!((b.q1, b.q0), (5, 12));
    }

    #[test]
    fn blank_and_absent_cells() {
        match lookup_bar_alpha(4, 4, 0.05) {
            Err(Error::Infeasible { smallest_feasible, .. }) => {
                assert!((smallest_feasible - 0.08984375).abs() < 1e-15)
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(lookup_bar_alpha(3, 3, 0.10), Err(Error::NotTabulated { .. })));
        assert!(matches!(lookup_bar_alpha(6, 6, 0.07), Err(Error::NotTabulated { .. })));
        assert!(matches!(lookup_bar_alpha(13, 6, 0.05), Err(Error::NotTabulated { .. })));
    }
}
