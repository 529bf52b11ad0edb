//! Evaluates the ranking loss and NT-Xent on aligned and shuffled batches.

use audiosheet::losses::{nt_xent_loss, paired_views, pairwise_ranking_loss, Reduction};
use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;

fn main() -> audiosheet::Result<()> {
    let mut r = audiosheet::rng::rng(0);
    let n = 16;
    let a = Array2::from_shape_simple_fn((n, 32), || r.gen_range(-1.0..1.0f64));
    let noise = Array2::from_shape_simple_fn((n, 32), || r.gen_range(-0.1..0.1f64));
    let close = &a + &noise;
    let mut shuffled = close.clone();
    for i in 0..n {
        shuffled.row_mut(i).assign(&close.row((i + 1) % n));
    }
    for (name, p) in [("aligned", &close), ("shuffled", &shuffled)] {
        let rank = pairwise_ranking_loss(&a, p, 0.7)?.value;
        let views = concatenate(Axis(0), &[a.view(), p.view()]).expect("same width");
        let nt = nt_xent_loss(&views, &paired_views(n), 0.5, Reduction::Mean)?.value;
        println!("{name:<9} ranking loss {rank:.4}  NT-Xent {nt:.4}");
    }
    let pair = a.slice(s![..2, ..]).to_owned();
    let alone = nt_xent_loss(&pair, &[1, 0], 0.5, Reduction::Mean)?.value;
    println!("two views, no negatives: NT-Xent {alone}");
    Ok(())
}
