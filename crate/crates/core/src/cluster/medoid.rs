use crate::descriptors::DistanceMatrix;
use crate::error::{Error, Result};

use super::dendrogram::argmin_with_ties;

/// Member with the minimum summed distance to all other members. Ties
/// resolve to the smallest index.
pub fn medoid(members: &[usize], d: &DistanceMatrix) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("medoid of an empty set".into()));
    }
    let sums: Vec<f64> = members
        .iter()
        .map(|&i| {
            let row = d.row(i);
            members.iter().map(|&j| row[j]).sum()
        })
        .collect();
    Ok(argmin_with_ties(members, &sums))
}
