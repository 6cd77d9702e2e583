// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::AnalogyInstance;
use crate::error::{Error, Result};

/// Relations with enough correctly solved analogies to donate first pairs.
pub const SWAP_RELATIONS: [&str; 3] = ["official language of", "author of", "composer of"];

/// Keep instances whose relation surface is in `surfaces`.
pub fn restrict_to_relations(instances: &[AnalogyInstance], surfaces: &[&str]) -> Vec<AnalogyInstance> {
    instances
        .iter()
        .filter(|i| surfaces.contains(&i.relation_surface.as_str()))
        .cloned()
        .collect()
}

/// Replace each incorrect instance's (e1, e2) with the first pair of a
/// correct instance drawn uniformly from the same relation. One seeded
/// stream serves all draws in input order.
pub fn swap_first_pairs(
    incorrect: &[AnalogyInstance],
    correct: &[AnalogyInstance],
    seed: u64,
) -> Result<Vec<AnalogyInstance>> {
    let mut donors: HashMap<&str, Vec<&AnalogyInstance>> = HashMap::new();
    for c in correct {
        donors.entry(c.relation_id.as_str()).or_default().push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    incorrect
        .iter()
        .map(|inst| {
            let pool = donors.get(inst.relation_id.as_str()).ok_or_else(|| {
                Error::Dataset(format!(
                    "instance {}: no correct donor for relation {}",
                    inst.id, inst.relation_id
                ))
            })?;
            let donor = pool[rng.gen_range(0..pool.len())];
            let mut swapped = inst.with_first_pair(&donor.e1, &donor.e2);
            swapped.id = format!("{}+{}", inst.id, donor.id);
            Ok(swapped)
        })
        .collect()
}
