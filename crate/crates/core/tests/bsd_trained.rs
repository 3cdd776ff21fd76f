//! A denoiser trained on pooled features moves held-out seen-category
//! videos toward their foreground target.

use dfalign::bsd::{infer_foreground, train_step, DenoiserNet, DiffusionConfig, NetDenoiser};
use dfalign::data::{foreground_target, generate_dataset, video_repr, SyntheticConfig};
use dfalign::numerics::{Adam, DenseArray, ParamStore};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn trained_denoiser_improves_on_ninety_percent_of_held_out_videos() {
    let data = generate_dataset(&SyntheticConfig::default()).unwrap();
    let pairs: Vec<(DenseArray, DenseArray)> = data
        .train
        .iter()
        .map(|v| (video_repr(&v.features).unwrap(), foreground_target(v, &v.features).unwrap()))
        .collect();
    let cut = pairs.len() * 4 / 5;
    let (train, held_out) = pairs.split_at(cut);

    let schedule = DiffusionConfig::default().schedule().unwrap();
    let dim = pairs[0].0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let net = DenoiserNet::new(&mut store, "d", dim, 2, 2, 64, &mut rng).unwrap();
    let mut opt = Adam::new(&store, 2e-3, 100);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..60 {
        order.shuffle(&mut rng);
        for chunk in order.chunks(8) {
            let hv: Vec<&DenseArray> = chunk.iter().map(|&i| &train[i].0).collect();
            let hf: Vec<&DenseArray> = chunk.iter().map(|&i| &train[i].1).collect();
            let (hv, hf) = (DenseArray::vstack(&hv).unwrap(), DenseArray::vstack(&hf).unwrap());
            store.zero_grads();
            train_step(&net, &mut store, &hv, &hf, &schedule, None, false, &mut rng).unwrap();
            opt.step(&mut store);
        }
    }

    let den = NetDenoiser { net: &net, store: &store };
    let improved = held_out
        .iter()
        .filter(|(hv, hf)| {
            let pred = infer_foreground(&den, hv, None, &schedule, &mut rng).unwrap();
            pred.sub(hf).unwrap().norm() < hv.sub(hf).unwrap().norm()
        })
        .count();
    let frac = improved as f64 / held_out.len() as f64;
    assert!(frac >= 0.9, "improved on {improved}/{} held-out videos", held_out.len());
}
