//! Parses a `.ts` file, reports what it holds and prints its canonical form.
//!
//! `cargo run --example ts_files -- [path]`

use expert_nas::data::{parse_ts, serialize_ts, DatasetBundle};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/tests/fixtures/ts/valid/multivariate_commented.ts"
        )
        .to_string()
    });
    let bytes = std::fs::read(&path).expect("readable file");
    let data = match parse_ts(&bytes) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("{path}: {e}");
            std::process::exit(1);
        }
    };
    println!(
        "{}: {} samples, {} dimensions, length {}",
        data.problem_name,
        data.series.len(),
        data.dimensions,
        data.series_len
    );
    if let Some(labels) = &data.declared_labels {
        println!("declared labels {labels:?}, seen in order {:?}", data.label_names);
        let bundle = DatasetBundle::from_ts(&data, &bytes).unwrap();
        println!(
            "bundle with {} classes, hash {}",
            bundle.n_classes(),
            &bundle.content_hash()[..12]
        );
    }
    print!("{}", serialize_ts(&data));
}
