//! Writes `fixtures/resnet18_like.profile`: the 61 parameter tensors of a
//! ResNet-18-shaped network (the classifier weight and bias share one layer),
//! with times derived from FLOP counts at batch 32.
//!
//! ```text
//! cargo run -p dreamsched --example gen_resnet18_fixture [out-path]
//! ```

use dreamsched::profile::{save_profile, LayerProfile, LinkModel, ModelProfile};

const BATCH: f64 = 32.0;
/// Sustained conv throughput, FLOP/s.
const CONV_RATE: f64 = 1.0e13;
/// Element rate for batch-norm style layers.
const ELEM_RATE: f64 = 1.0e12;

struct Tensor {
    name: String,
    params: u64,
    fp: f64,
}

fn conv(name: String, c_out: u64, c_in: u64, k: u64, out_hw: u64) -> Tensor {
    let params = c_out * c_in * k * k;
    let flops = 2.0 * params as f64 * (out_hw * out_hw) as f64 * BATCH;
    Tensor {
        name,
        params,
        fp: flops / CONV_RATE,
    }
}

fn norm(prefix: &str, c: u64, hw: u64) -> [Tensor; 2] {
    let elems = (c * hw * hw) as f64 * BATCH;
    let fp = 4.0 * elems / ELEM_RATE;
    [
        Tensor {
            name: format!("{prefix}.weight"),
            params: c,
            fp,
        },
        Tensor {
            name: format!("{prefix}.bias"),
            params: c,
            fp,
        },
    ]
}

fn tensors() -> Vec<Tensor> {
    let mut t = vec![conv("conv1.weight".into(), 64, 3, 7, 112)];
    t.extend(norm("bn1", 64, 112));
    let stages = [(1u64, 64u64, 56u64), (2, 128, 28), (3, 256, 14), (4, 512, 7)];
    let mut c_in = 64;
    for (stage, c, hw) in stages {
        for block in 0..2 {
            let p = format!("layer{stage}.{block}");
            let first_in = if block == 0 { c_in } else { c };
            t.push(conv(format!("{p}.conv1.weight"), c, first_in, 3, hw));
            t.extend(norm(&format!("{p}.bn1"), c, hw));
            t.push(conv(format!("{p}.conv2.weight"), c, c, 3, hw));
            t.extend(norm(&format!("{p}.bn2"), c, hw));
            if block == 0 && stage > 1 {
                t.push(conv(format!("{p}.downsample.0.weight"), c, c_in, 1, hw));
                t.extend(norm(&format!("{p}.downsample.1"), c, hw));
            }
        }
        c_in = c;
    }
    let fc_params = 512 * 1000 + 1000;
    t.push(Tensor {
        name: "fc".into(),
        params: fc_params,
        fp: 2.0 * fc_params as f64 * BATCH / CONV_RATE,
    });
    t
}

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/resnet18_like.profile").into());
    let layers = tensors()
        .into_iter()
        .enumerate()
        .map(|(i, t)| LayerProfile {
            index: i + 1,
            name: t.name,
            param_bytes: 4 * t.params,
            t_fp: (t.fp * 1e6).round().max(1.0) / 1e6,
            t_bp: (2.0 * t.fp * 1e6).round().max(1.0) / 1e6,
            t_comm_override: None,
        })
        .collect();
    // 10 Gbit/s link
    let link = LinkModel::new(1.25e9, 20e-6).expect("valid link");
    let profile = ModelProfile::new(layers, link, "resnet18_like").expect("valid profile");
    save_profile(&profile, &out).expect("write fixture");
    println!("wrote {} layers to {out}", profile.num_layers());
}
