fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    match cbindgen::generate(&crate_dir) {
        Ok(bindings) => {
            bindings.write_to_file(format!("{}/include/boxdistill.h", crate_dir));
        }
        Err(e) => {
            // Keep the committed header if generation fails (e.g. parse
            // errors mid-edit); the build itself should not break.
            println!("cargo:warning=cbindgen failed: {}", e);
        }
    }
}
