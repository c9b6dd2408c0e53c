//! Corpus BLEU, ROUGE-L and exact match.
//!
//!     cargo run --example metrics

use l2s::metrics::{corpus_bleu, exact_match, rouge_l, score_all, Tokenization};

fn main() -> anyhow::Result<()> {
    let bleu = corpus_bleu(&["the cat sat"], &["the cat sat down"], 4, Tokenization::Words)?;
    println!("BLEU(the cat sat | the cat sat down) = {bleu:.4}");
    println!("ROUGE-L([a b d] | [a c b e]) = {:.4}", rouge_l(&["a", "b", "d"], &["a", "c", "b", "e"]));
    println!("exact match = {:.2}", exact_match(&["x", "y", "z", "w"], &["x", "q", "q", "q"])?);

    let hyps = ["kcab", "olleh", "dlrow"];
    let refs = ["kcab", "olleh", "dlorw"];
    for row in score_all(&hyps, &refs, Tokenization::Chars, "test", "demo")? {
        println!("{:<12} {:.4}", row.metric, row.value);
    }
    Ok(())
}
