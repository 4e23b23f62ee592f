use std::path::PathBuf;

fn main() {
    let crate_dir = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config =
        cbindgen::Config::from_file(crate_dir.join("cbindgen.toml")).expect("cbindgen.toml");
    match cbindgen::generate_with_config(&crate_dir, config) {
        // only rewrites the file when the contents change
        Ok(bindings) => {
            bindings.write_to_file(crate_dir.join("include/mfglab.h"));
        }
        Err(e) => panic!("header generation failed: {e}"),
    }
}
