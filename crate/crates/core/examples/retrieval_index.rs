//! Builds an embedding index, queries it, and round-trips it through disk.

use audiosheet::model::{Embedding, Modality};
use audiosheet::retrieval::{build_index, evaluate, load_store, save_store, EntryMeta};
use rand::Rng;

fn main() -> audiosheet::Result<()> {
    let mut r = audiosheet::rng::rng(4);
    let rand_emb = |r: &mut audiosheet::rng::Rng| {
        let v: Vec<f64> = (0..32).map(|_| r.gen_range(-1.0..1.0)).collect();
        Embedding::from_f64(&v)
    };
    let rows: Vec<Embedding> = (0..500).map(|_| rand_emb(&mut r)).collect::<Result<_, _>>()?;
    let index = build_index(rows.iter().enumerate().map(|(i, e)| {
        (e.clone(), EntryMeta { piece_id: format!("piece_{:04}", i / 50), offset: i % 50, modality: Modality::Sheet })
    }))?;
    // Queries are noisy copies of stored rows; the copy's own id is the target.
    let mut ranks = Vec::new();
    for target in (0..500).step_by(5) {
        let q: Vec<f64> = index.row(target).iter().map(|&v| v as f64 + r.gen_range(-0.08..0.08)).collect();
        let q = Embedding::from_f64(&q)?;
        ranks.push(index.rank_of_target(&q, target)?);
        if target == 0 {
            let top = index.query(&q, 3)?;
            for c in &top.candidates {
                let m = index.meta(c.id);
                println!("  id {:>3} {}@{} distance {:.4}", c.id, m.piece_id, m.offset, c.distance);
            }
        }
    }
    println!("noisy self-retrieval: {}", evaluate(&ranks)?);
    let path = std::env::temp_dir().join("audiosheet_example_index.bin");
    save_store(&path, &index)?;
    assert_eq!(load_store(&path)?, index);
    println!("store round trip ok ({})", path.display());
    Ok(())
}
