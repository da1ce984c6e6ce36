//! CTC on a toy frame matrix: forward likelihood against exhaustive path
//! enumeration, the logit gradient, and greedy decoding.
//!
//! `cargo run --example ctc_basics`

use cerhv::ctc::{brute_force_ctc, brute_force_label_distribution, ctc_gradient, ctc_log_likelihood, greedy_decode, Alphabet, FrameMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let alphabet = Alphabet::new(['a', 'b'])?;
    // 4 frames over {blank, a, b}
    let logits = FrameMatrix::new(4, 3, vec![0.1, 2.0, -1.0, 0.3, 1.5, 0.0, 1.2, -0.5, 0.4, 0.0, -1.0, 2.2])?;
    let probs = logits.log_softmax();
    for target in ["ab", "a", "aa", "ba", ""] {
        let fast = ctc_log_likelihood(&probs, &target.into(), &alphabet)?;
        let brute = brute_force_ctc(&probs, &target.into(), &alphabet)?;
        println!("P({target:?}) forward {:.12} brute force {brute:.12}", fast.log_prob().exp());
    }
    let total: f64 = brute_force_label_distribution(&probs)?.values().sum();
    println!("sum over all label sequences: {total:.15}");
    let g = ctc_gradient(&logits, &"ab".into(), &alphabet)?;
    println!("loss {:.6}", g.loss);
    for t in 0..4 {
        println!("  dL/dz[{t}] = {:?}", g.grad.row(t).iter().map(|v| format!("{v:+.4}")).collect::<Vec<_>>());
    }
    println!("greedy decode: {:?}", greedy_decode(&probs, &alphabet)?.as_str());
    Ok(())
}
