//! Bias scores and equity weights for a few candidate outputs, given two
//! group vectors.
//!
//!     cargo run --example equity_scoring

use requal::equity::{bias, equity_weights, group_similarities, signed_bias};
use requal::{DemographicGroup, EmbeddingVector, GroupSet, Result};

fn main() -> Result<()> {
    let gs = GroupSet::binary(
        DemographicGroup::from_vector("male", EmbeddingVector::new(vec![1.0, 0.0, 0.0])?)?,
        DemographicGroup::from_vector("female", EmbeddingVector::new(vec![0.0, 1.0, 0.0])?)?,
    )?;
    let outputs = [
        ("he fixed the sink", [0.9, 0.1, 1.0]),
        ("she fixed the sink", [0.1, 0.8, 1.0]),
        ("they fixed the sink", [0.4, 0.4, 1.0]),
        ("the sink got fixed", [0.2, 0.15, 1.0]),
    ];

    let mut betas = Vec::new();
    for (text, v) in &outputs {
        let v = EmbeddingVector::new(v.to_vec())?;
        let sims = group_similarities(&v, &gs)?;
        let b = bias(&v, &gs)?;
        println!(
            "{text:<22} sims [{:.3}, {:.3}]  bias {b:.3}  signed {:+.3}",
            sims[0],
            sims[1],
            signed_bias(&v, &gs)?
        );
        betas.push(b);
    }

    let w = equity_weights(&betas)?;
    for ((text, _), wi) in outputs.iter().zip(w.as_slice()) {
        println!("weight {wi:.3}  {text}");
    }
    Ok(())
}
