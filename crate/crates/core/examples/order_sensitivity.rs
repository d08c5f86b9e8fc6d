//! Measures how much a subset-selection answer depends on the order the
//! candidate pool is presented in. The simulated model simply echoes the
//! first k names, the worst case.
//!
//!     cargo run --example order_sensitivity [K]

use requal::evalkit::order_sensitivity;
use requal::providers::simulated::{PrefixEchoGenerator, SimulatedEmbedder};
use requal::{Result, TaskSpec};

fn main() -> Result<()> {
    let k: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let pool = ["Ava", "Ben", "Cal", "Dee", "Eli", "Fay", "Gus", "Hal"]
        .map(String::from)
        .to_vec();
    let task = TaskSpec::subset_selection("Pick the strongest candidates from: {items}", pool);
    let embedder = SimulatedEmbedder::new(32).with_fallback_hashing(true);

    let r = order_sensitivity(&task, &PrefixEchoGenerator::new(k), &embedder, 200, 11)?;
    println!("unshuffled mean jaccard {:.4}", r.mean_jaccard_unshuffled);
    println!("shuffled mean jaccard   {:.4}", r.mean_jaccard_shuffled);
    Ok(())
}
