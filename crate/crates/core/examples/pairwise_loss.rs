//! Pairwise similarity loss on hand-made features: supervised pairs from
//! labels, then pseudo pairs from confidence thresholds.

use dtc::losses::{pairs_from_labels, pairs_from_similarity, pairwise_loss, similarity_matrix};
use dtc::FeatureMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Rows are unit vectors: two near-one-hot rows for cluster 0, one for
    // cluster 1, and an undecided row.
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let features = FeatureMatrix::from_vec(
        4,
        2,
        vec![1.0, 0.0, 0.99, 0.141_067, 0.0, 1.0, h, h],
    );
    let s = similarity_matrix(&features)?;
    for i in 0..s.size() {
        let row: Vec<String> = (0..s.size()).map(|j| format!("{:.3}", s.get(i, j))).collect();
        println!("S[{i}] = [{}]", row.join(", "));
    }

    let labeled = pairs_from_labels(&[0, 0, 1, 1], 2)?;
    for lambda in [0.1, 100.0] {
        let out = pairwise_loss(&s, &labeled, lambda)?;
        println!("labels     lambda {lambda:>5}: loss {:.6} over {} pairs", out.loss, out.selected);
    }

    let pseudo = pairs_from_similarity(&s, 0.95, 0.7)?;
    let out = pairwise_loss(&s, &pseudo, 100.0)?;
    println!(
        "thresholds u=0.95 l=0.7: {} of {} pairs selected, loss {:.6}",
        pseudo.selected_pairs(),
        pseudo.off_diagonal_pairs(),
        out.loss
    );
    Ok(())
}
