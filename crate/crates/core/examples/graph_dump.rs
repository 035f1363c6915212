//! Build the graph of a two-layer CNN and print its edge list and features.
//! Pass a directory to also write `edges.txt` and `features.txt` there.

use autosculpt::graph::{build_graph, EdgeRole};
use autosculpt::model::{cnn_from_channels, CnnLayer};
use autosculpt::patterns::{PatternAssignment, PatternLibrary};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = cnn_from_channels([1, 6, 6], &[CnnLayer::plain(4, 1), CnnLayer::plain(8, 1)], 3, 0)?;
    let library = PatternLibrary::default_library(3, 4)?;
    let graph = build_graph(&model, &library, &PatternAssignment::uniform(&model, 2), 0)?;
    println!(
        "{} nodes, {} edges ({} in, {} out, {} residual)",
        graph.nodes.len(),
        graph.edges.len(),
        graph.count_role(EdgeRole::In),
        graph.count_role(EdgeRole::Out),
        graph.count_role(EdgeRole::Residual)
    );
    print!("{}", graph.edge_list());
    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::Path::new(&dir);
        std::fs::create_dir_all(dir)?;
        graph.write_dump(&dir.join("edges.txt"), &dir.join("features.txt"))?;
        println!("wrote {}", dir.display());
    } else {
        print!("{}", graph.features_text().lines().take(3).collect::<Vec<_>>().join("\n"));
        println!();
    }
    Ok(())
}
