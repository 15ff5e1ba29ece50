//! Compares the analytic gradient of the pairwise loss through the whole
//! network with central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use std::time::Instant;

use dtc::losses::{pairs_from_labels, pairwise_loss, similarity_backward, similarity_matrix};
use dtc::nn::{ModelState, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const STEP: f64 = 1e-5;

fn loss(model: &mut ModelState, batch: &Tensor, labels: &[usize]) -> f64 {
    let (features, _) = model.forward_train(batch).unwrap();
    let s = similarity_matrix(&features).unwrap();
    pairwise_loss(&s, &pairs_from_labels(labels, model.num_classes()).unwrap(), 0.5).unwrap().loss
}

fn main() {
    let (m, length, k) = (4, 16, 3);
    let mut model = ModelState::init(length, k, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let batch = Tensor::from_vec(vec![m, 2, length], (0..m * 2 * length).map(|_| normal.sample(&mut rng)).collect());
    let labels = [0, 0, 1, 2];

    let (features, trace) = model.forward_train(&batch).unwrap();
    let s = similarity_matrix(&features).unwrap();
    let out = pairwise_loss(&s, &pairs_from_labels(&labels, k).unwrap(), 0.5).unwrap();
    let grads = model.backward(&trace, &similarity_backward(&features, &out.grad)).unwrap();

    let start = Instant::now();
    let names = ModelState::parameter_names();
    let mut worst = (0.0f64, String::new(), 0usize, 0.0, 0.0);
    let mut checked = 0usize;
    for (p, name) in names.iter().enumerate() {
        let len = model.parameters()[p].len();
        for i in 0..len {
            let original = model.parameters()[p].data()[i];
            model.parameters_mut()[p].data_mut()[i] = original + STEP;
            let up = loss(&mut model, &batch, &labels);
            model.parameters_mut()[p].data_mut()[i] = original - STEP;
            let down = loss(&mut model, &batch, &labels);
            model.parameters_mut()[p].data_mut()[i] = original;
            let numeric = (up - down) / (2.0 * STEP);
            let analytic = grads.tensors[p].data()[i];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-5);
            if rel > worst.0 {
                worst = (rel, name.clone(), i, analytic, numeric);
            }
            checked += 1;
        }
    }
    println!("checked {checked} parameters in {:.1?}", start.elapsed());
    println!("worst relative error {:.3e} at {}[{}]: analytic {:.6e} numeric {:.6e}", worst.0, worst.1, worst.2, worst.3, worst.4);
}
