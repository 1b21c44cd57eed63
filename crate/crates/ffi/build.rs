use std::env;
use std::path::PathBuf;

fn main() {
    let crate_dir =
        PathBuf::from(env::var("CARGO_MANIFEST_DIR").expect("cargo sets CARGO_MANIFEST_DIR"));
    println!("cargo:rerun-if-changed=src/lib.rs");
    println!("cargo:rerun-if-changed=build.rs");

    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("LEDGERLOF_H".into()),
        cpp_compat: true,
        usize_is_size_t: true,
        documentation: true,
        autogen_warning: Some(
            "/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */".into(),
        ),
        enumeration: cbindgen::EnumConfig {
            prefix_with_name: true,
            rename_variants: cbindgen::RenameRule::ScreamingSnakeCase,
            ..Default::default()
        },
        ..Default::default()
    };
    match cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
    {
        Ok(bindings) => {
            bindings.write_to_file(crate_dir.join("include").join("ledgerlof.h"));
        }
        Err(e) => panic!("cbindgen failed: {e}"),
    }
}
