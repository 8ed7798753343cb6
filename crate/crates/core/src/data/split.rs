use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::record::SurgeryRecord;
use crate::error::{Error, Result};
use crate::numcore::rng::{rng_for, stream};

/// Surgery-disjoint train/validation/test partition (70/10/20).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl CohortSplit {
    /// Records of each part, in split order.
    pub fn partition(&self, records: &[SurgeryRecord]) -> Result<[Vec<SurgeryRecord>; 3]> {
        let by_id: HashMap<&str, &SurgeryRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let pick = |ids: &[String]| -> Result<Vec<SurgeryRecord>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|r| (*r).clone())
                        .ok_or_else(|| Error::Data(format!("surgery {id} not in cohort")))
                })
                .collect()
        };
        Ok([pick(&self.train)?, pick(&self.validation)?, pick(&self.test)?])
    }
}

pub const MIN_SURGERIES: usize = 10;

/// Seeded shuffle, then a cut by surgery count.
pub fn split_cohort(ids: &[String], seed: u64) -> Result<CohortSplit> {
    let n = ids.len();
    if n < MIN_SURGERIES {
        return Err(Error::Data(format!(
            "need at least {MIN_SURGERIES} surgeries to split, got {n}"
        )));
    }
    let mut order: Vec<String> = ids.to_vec();
    order.shuffle(&mut rng_for(seed, stream::SPLIT));
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).max(1);
    let test = order.split_off(n_train + n_val);
    let validation = order.split_off(n_train);
    Ok(CohortSplit {
        train: order,
        validation,
        test,
    })
}
