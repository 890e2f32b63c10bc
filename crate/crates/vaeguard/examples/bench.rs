use std::time::Instant;
use vaeguard::data::synth_batch;
use vaeguard::perceptual::{perceptual_loss_with_grad, PerceptualExtractor};
use vaeguard::tensor::Tensor;
use vaeguard::vae::{VaeConfig, VaeModel};

fn time<F: FnMut()>(label: &str, iters: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..iters {
        f();
    }
    println!("{label}: {:.2} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / iters as f64);
}

fn main() {
    let cfg = VaeConfig { in_channels: 3, stage_channels: vec![8, 16, 32], latent_channels: 4 };
    let model = VaeModel::init(cfg, 1).unwrap();
    let ex = PerceptualExtractor::seeded(3, 1);
    let x = synth_batch(20, 32, 3, 1).pixels;
    let (dist, enc_cache) = model.encoder.forward(&x);
    let z = dist.mu.clone();
    let dec_cache = model.decoder.forward(&z);
    let y = dec_cache.y.clone();
    let d_y = Tensor::full_like(&y, 0.01);
    let d_mu = Tensor::full_like(&dist.mu, 0.01);
    let d_lv = Tensor::full_like(&dist.log_var, 0.01);

    time("encoder fwd (batch 20)", 20, || { let _ = model.encoder.forward(&x); });
    time("decoder fwd", 20, || { let _ = model.decoder.forward(&z); });
    time("extractor fwd", 20, || { let _ = ex.features(&x); });
    time("encoder bwd (input)", 20, || { let _ = model.encoder.backward(&enc_cache, &d_mu, &d_lv, true, false); });
    time("encoder bwd (params)", 20, || { let _ = model.encoder.backward(&enc_cache, &d_mu, &d_lv, false, true); });
    time("decoder bwd (input)", 20, || { let _ = model.decoder.backward(&dec_cache, &d_y, true, false); });
    time("decoder bwd (params+input)", 20, || { let _ = model.decoder.backward(&dec_cache, &d_y, true, true); });
    time("perceptual loss+grad", 20, || { let _ = perceptual_loss_with_grad(&ex, &y, &x); });
}
