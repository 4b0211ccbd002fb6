// scratch: inspect embedding spread per layer
use batchforge_core::nets::*;
use batchforge_core::obgraph::{build_graph, sample_graph, SamplingConfig};
use batchforge_core::warehouse::{generate_instance, GenParams};
use batchforge_autodiff::{Graph, ParamStore};
use rand::SeedableRng;

fn spread(t: &batchforge_autodiff::Tensor) -> f64 {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let mut mean = vec![0.0; c];
    for i in 0..r { for j in 0..c { mean[j] += t.get2(i, j) / r as f64; } }
    let mut v = 0.0;
    for i in 0..r { for j in 0..c { let d = t.get2(i, j) - mean[j]; v += d * d; } }
    v / r as f64
}

fn main() {
    let inst = generate_instance(&GenParams::desk(50, 5), 1).unwrap();
    let full = build_graph(&inst).unwrap();
    let het = sample_graph(&full, &SamplingConfig::new(4, 4, 0).unwrap()).unwrap();
    let cfg = NetConfig { hidden: 32, layers: 2, rnn_layers: 2 };
    let net = HetGnn::new("e1", cfg, &inst.warehouse);
    let mut store = ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    net.register_params(&mut store, &mut rng).unwrap();

    // layer-by-layer: rebuild with 0, 1, 2 layers
    for layers in 0..=2 {
        let mut c2 = cfg; c2.layers = layers;
        let n2 = HetGnn::new("e1", c2, &inst.warehouse);
        let mut g = Graph::new();
        let out = n2.forward(&mut g, &store, true, &inst, &het).unwrap();
        println!("layers={layers}: order spread = {:.6e}", spread(g.value(out.order_states)));
    }
}
