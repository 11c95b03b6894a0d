//! Regenerates the committed neutral-format fixtures:
//!
//! ```text
//! cargo run -p customgnn --example make_fixtures -- fixtures
//! ```

use std::path::PathBuf;

use customgnn::graph::synthetic::{generate, SyntheticParams};
use customgnn::save_graph;

fn main() -> customgnn::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));

    let tiny = SyntheticParams {
        features: 6,
        mean_degree: 2.5,
        words_per_node: 2,
        train_per_class: 2,
        val: 3,
        test: 3,
        ..SyntheticParams::small("tiny12", 12, 3, 12)
    };

    let citation = |name: &str, nodes, classes, seed| SyntheticParams {
        features: 40 * classes,
        mean_degree: 3.6,
        homophily: 0.78,
        words_per_node: 12,
        topic_purity: 0.35,
        train_per_class: 20,
        val: 150,
        test: 300,
        ..SyntheticParams::small(name, nodes, classes, seed)
    };

    save_graph(&generate(&tiny)?, &root.join("tiny12"))?;
    save_graph(
        &generate(&citation("synth-cora", 700, 7, 7))?,
        &root.join("synth-cora"),
    )?;
    let names = ["Agents", "AI", "DB", "IR", "ML", "HCI"]
        .map(String::from)
        .to_vec();
    let citeseer = generate(&citation("synth-citeseer", 600, 6, 6))?.with_class_names(names)?;
    save_graph(&citeseer, &root.join("synth-citeseer"))?;
    println!("fixtures written to {}", root.display());
    Ok(())
}
