//! Attention weight as a function of embedding distance for both variants.
//!
//! cargo run --example attention

use gravnorm::gravconv::{attention_norm, attention_orig};

fn main() {
    let (g, r) = (3.0, 1.0);
    println!("G = {g}, r = {r}");
    println!("{:>6} {:>12} {:>14} {:>14}", "d", "norm", "orig |h|=1", "orig |h|=5");
    for i in 0..=12 {
        let d = i as f64 * 0.125;
        println!(
            "{d:>6.3} {:>12.6} {:>14.6} {:>14.6}",
            attention_norm(d, g, r),
            attention_orig(d, g, &[0.5, -0.5]),
            attention_orig(d, g, &[2.5, 2.5]),
        );
    }
    println!("weight at the radius: {:.6} (e^-G = {:.6})", attention_norm(r, g, r), (-g).exp());
}
