//! Cosine similarity, plain and weighted centroids, and nearest-neighbour
//! selection on a handful of 3-d vectors.
//!
//!     cargo run --example vector_ops

use requal::vector::{centroid, cosine_similarity, nearest_to, weighted_centroid};
use requal::{EmbeddingVector, Result, WeightVector};

fn main() -> Result<()> {
    let vs = [[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [0.9, 0.2, 1.0], [0.8, 0.1, 0.9]]
        .iter()
        .map(|v| EmbeddingVector::new(v.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    println!("cos(v0, v1) = {:.4}", cosine_similarity(&vs[0], &vs[1])?);

    let plain = centroid(&vs)?;
    println!("centroid          {:?}", plain.values());
    println!("nearest to it     v{}", nearest_to(&vs, &plain)?);

    // Down-weight the three vectors that lean toward the first axis.
    let w = WeightVector::new(vec![0.1, 1.0, 0.2, 0.3])?;
    let weighted = weighted_centroid(&vs, &w)?;
    println!("weighted centroid {:?}", weighted.values());
    println!("nearest to it     v{}", nearest_to(&vs, &weighted)?);
    Ok(())
}
