fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").expect("cargo sets the manifest dir");
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=cbindgen.toml");
    let config =
        cbindgen::Config::from_file(format!("{crate_dir}/cbindgen.toml")).expect("cbindgen.toml");
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("header generation")
        .write_to_file(format!("{crate_dir}/include/transport_mc.h"));
}
