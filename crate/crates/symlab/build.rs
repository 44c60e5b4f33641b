fn main() {
    // Dense singular-value / eigenvalue routines call LAPACK directly; link
    // against the system OpenBLAS (which bundles LAPACK).
    println!("cargo:rustc-link-lib=dylib=openblas");
}
