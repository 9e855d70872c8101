//! Walks the architecture search space: starts from the dense-only
//! descriptor, applies every mutation operator in turn and prints the
//! resulting hashes, depths and embedding widths.

use expert_nas::arch::{embedding_width, mutate, parse_descriptor, ArchDescriptor, MutationOp};

fn main() {
    let shape = [64, 2];
    let mut d = ArchDescriptor::dense_only();
    println!(
        "start     {}  width {}",
        d.canonical_hash().short(),
        embedding_width(&d, shape).unwrap()
    );
    for (i, op) in MutationOp::ALL.iter().enumerate() {
        let m = mutate(&d, i as u64, Some(*op));
        let width = embedding_width(&m.descriptor, shape).map_or("n/a".to_string(), |w| w.to_string());
        println!(
            "{:<13} {}  depth {}  width {width}{}",
            op.as_str(),
            m.descriptor.canonical_hash().short(),
            m.descriptor.depth(),
            if m.applied { "" } else { "  (no-op)" }
        );
        d = m.descriptor;
    }
    println!("\nfinal descriptor:\n{}", d.canonical_text());

    let mut broken = d.to_value();
    broken["blocks"][0]["kernel"] = 4.into();
    broken["head"]["dropout"] = 2.0.into();
    match parse_descriptor(broken.to_string().as_bytes()) {
        Ok(_) => println!("unexpectedly valid"),
        Err(r) => println!("\nrejected: {r}"),
    }
}
